//! Dense row-major `f64` tensors with a dynamic reverse-mode tape.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each primitive records its
//! inputs and output on the tape, and [`Tape::backward`] walks the record in
//! reverse to accumulate gradients for every ancestor of a scalar loss.
//!
//! ```
//! use pocketdiff_tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![3.0, 4.0]));
//! let y = tape.squared_norm(x).unwrap();
//! assert_eq!(tape.value(y).item(), Some(25.0));
//!
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[6.0, 8.0]);
//! ```

mod adam;
mod check;
mod error;
mod tape;
mod tensor;

pub use adam::{Adam, AdamState};
pub use check::{finite_difference_check, finite_difference_check_many};
pub use error::TensorError;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
