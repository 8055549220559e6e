use std::rc::Rc;

use crate::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulCol(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Sum(usize),
    Mean(usize),
    RowSum(usize),
    Concat { inputs: Vec<usize>, axis: usize },
    Slice { input: usize, axis: usize, start: usize },
    Relu(usize),
    Silu(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Recip(usize),
    Softmax(usize),
    SquaredNorm(usize),
    Gather { input: usize, index: Rc<[usize]> },
    ScatterAdd { input: usize, index: Rc<[usize]> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// A dynamic record of primitive operations.
///
/// Nodes are appended in evaluation order, so every node's inputs precede
/// it. All forward primitives check shapes and reject non-finite results.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss for every node recorded on a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, or `None` when `var` is not
    /// an ancestor of the loss.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `var`; zeros of the matching shape when the
    /// loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[var.0].clone()))
    }
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(TensorError::InvalidArgument {
            op,
            reason: format!("expected a matrix, got shape {:?}", t.shape()),
        }),
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `c = a · b` for row-major `a: [m, k]`, `b: [k, n]`, with optional
/// transposition expressed through strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    // SAFETY: the slices cover `m*k`, `k*n` and `m*n` elements for the given
    // strides, which every caller establishes from the operand shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Records an input tensor (parameter or constant).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.val(a), self.val(b))?;
        let out = self.val(a).zip_map(self.val(b), |x, y| x + y);
        self.push("add", out, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.val(a), self.val(b))?;
        let out = self.val(a).zip_map(self.val(b), |x, y| x - y);
        self.push("sub", out, Op::Sub(a.0, b.0))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.val(a), self.val(b))?;
        let out = self.val(a).zip_map(self.val(b), |x, y| x * y);
        self.push("mul", out, Op::Mul(a.0, b.0))
    }

    /// Adds a `[cols]` or `[1, cols]` row to every row of a `[rows, cols]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = dims2("add_row", self.val(a))?;
        let bias = self.val(row);
        if bias.numel() != c || bias.rows() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: self.val(a).shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let mut data = self.val(a).data().to_vec();
        for chunk in data.chunks_mut(c.max(1)).take(r) {
            for (x, b) in chunk.iter_mut().zip(bias.data()) {
                *x += b;
            }
        }
        let out = Tensor::from_parts(vec![r, c], data);
        self.push("add_row", out, Op::AddRow(a.0, row.0))
    }

    /// Scales every row of `a: [rows, cols]` by the matching entry of `col: [rows, 1]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (r, c) = dims2("mul_col", self.val(a))?;
        let s = self.val(col);
        if s.shape() != [r, 1] {
            return Err(TensorError::ShapeMismatch {
                op: "mul_col",
                lhs: self.val(a).shape().to_vec(),
                rhs: s.shape().to_vec(),
            });
        }
        let mut data = self.val(a).data().to_vec();
        if c > 0 {
            for (chunk, &k) in data.chunks_mut(c).zip(s.data()) {
                chunk.iter_mut().for_each(|x| *x *= k);
            }
        }
        let out = Tensor::from_parts(vec![r, c], data);
        self.push("mul_col", out, Op::MulCol(a.0, col.0))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.val(a).map(|x| x * s);
        self.push("scale", out, Op::Scale(a.0, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.val(a).map(|x| x + s);
        self.push("add_scalar", out, Op::AddScalar(a.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2("matmul", self.val(a))?;
        let (k2, n) = dims2("matmul", self.val(b))?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.val(a).shape().to_vec(),
                rhs: self.val(b).shape().to_vec(),
            });
        }
        let mut data = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.val(a).data(),
            (k as isize, 1),
            self.val(b).data(),
            (n as isize, 1),
            &mut data,
        );
        let out = Tensor::from_parts(vec![m, n], data);
        self.push("matmul", out, Op::MatMul(a.0, b.0))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.val(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.val(a);
        if t.numel() == 0 {
            return Err(TensorError::InvalidArgument {
                op: "mean",
                reason: "mean of an empty tensor".into(),
            });
        }
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(a.0))
    }

    /// Sums each row of a matrix into a `[rows, 1]` column.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let (r, _) = dims2("row_sum", self.val(a))?;
        let data = self.val(a).iter_rows().take(r).map(|row| row.iter().sum()).collect();
        self.push("row_sum", Tensor::from_parts(vec![r, 1], data), Op::RowSum(a.0))
    }

    /// Concatenates matrices along `axis` (0 = stack rows, 1 = join columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(TensorError::InvalidArgument {
                op: "concat",
                reason: format!("need at least one input and axis 0 or 1, got {} inputs, axis {axis}", parts.len()),
            });
        }
        let (r0, c0) = dims2("concat", self.val(parts[0]))?;
        for &p in &parts[1..] {
            let (r, c) = dims2("concat", self.val(p))?;
            if (axis == 0 && c != c0) || (axis == 1 && r != r0) {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: self.val(parts[0]).shape().to_vec(),
                    rhs: self.val(p).shape().to_vec(),
                });
            }
        }
        let out = if axis == 0 {
            let mut data = Vec::new();
            let mut rows = 0;
            for &p in parts {
                data.extend_from_slice(self.val(p).data());
                rows += self.val(p).shape()[0];
            }
            Tensor::from_parts(vec![rows, c0], data)
        } else {
            let cols: usize = parts.iter().map(|&p| self.val(p).shape()[1]).sum();
            let mut data = Vec::with_capacity(r0 * cols);
            for i in 0..r0 {
                for &p in parts {
                    data.extend_from_slice(self.val(p).row(i));
                }
            }
            Tensor::from_parts(vec![r0, cols], data)
        };
        let inputs = parts.iter().map(|p| p.0).collect();
        self.push("concat", out, Op::Concat { inputs, axis })
    }

    /// Takes `start..end` along `axis` of a matrix.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let (r, c) = dims2("slice", self.val(a))?;
        let limit = if axis == 0 { r } else { c };
        if axis > 1 || start > end || end > limit {
            return Err(TensorError::InvalidArgument {
                op: "slice",
                reason: format!("range {start}..{end} on axis {axis} of shape [{r}, {c}]"),
            });
        }
        let t = self.val(a);
        let out = if axis == 0 {
            Tensor::from_parts(vec![end - start, c], t.data()[start * c..end * c].to_vec())
        } else {
            let w = end - start;
            let mut data = Vec::with_capacity(r * w);
            for i in 0..r {
                data.extend_from_slice(&t.row(i)[start..end]);
            }
            Tensor::from_parts(vec![r, w], data)
        };
        self.push("slice", out, Op::Slice { input: a.0, axis, start })
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a).map(|x| x.max(0.0));
        self.push("relu", out, Op::Relu(a.0))
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a).map(|x| x * sigmoid(x));
        self.push("silu", out, Op::Silu(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a).map(f64::exp);
        self.push("exp", out, Op::Exp(a.0))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a).map(f64::ln);
        self.push("log", out, Op::Log(a.0))
    }

    /// Elementwise square root; its derivative at exactly zero is taken as zero.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a).map(f64::sqrt);
        self.push("sqrt", out, Op::Sqrt(a.0))
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a).map(|x| 1.0 / x);
        self.push("recip", out, Op::Recip(a.0))
    }

    /// Softmax over a vector, or over each row of a matrix.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.val(a);
        if t.ndim() > 2 {
            return Err(TensorError::InvalidArgument {
                op: "softmax",
                reason: format!("expected a vector or matrix, got shape {:?}", t.shape()),
            });
        }
        let mut data = t.data().to_vec();
        if t.cols() > 0 {
            for row in data.chunks_mut(t.cols()) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    z += *v;
                }
                row.iter_mut().for_each(|v| *v /= z);
            }
        }
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        self.push("softmax", out, Op::Softmax(a.0))
    }

    /// Sum of squares of all entries.
    pub fn squared_norm(&mut self, a: Var) -> Result<Var> {
        let s = self.val(a).data().iter().map(|v| v * v).sum();
        self.push("squared_norm", Tensor::scalar(s), Op::SquaredNorm(a.0))
    }

    /// Selects rows `index[e]` of `a` into an `[index.len(), cols]` matrix.
    pub fn gather_rows(&mut self, a: Var, index: Rc<[usize]>) -> Result<Var> {
        let (r, c) = dims2("gather_rows", self.val(a))?;
        if let Some(&bad) = index.iter().find(|&&i| i >= r) {
            return Err(TensorError::InvalidArgument {
                op: "gather_rows",
                reason: format!("row index {bad} out of range for {r} rows"),
            });
        }
        let t = self.val(a);
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index.iter() {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::from_parts(vec![index.len(), c], data);
        self.push("gather_rows", out, Op::Gather { input: a.0, index })
    }

    /// Sums row `e` of `a` into output row `index[e]` of an `[rows, cols]` matrix.
    pub fn scatter_add_rows(&mut self, a: Var, index: Rc<[usize]>, rows: usize) -> Result<Var> {
        let (r, c) = dims2("scatter_add_rows", self.val(a))?;
        if r != index.len() {
            return Err(TensorError::ShapeMismatch {
                op: "scatter_add_rows",
                lhs: self.val(a).shape().to_vec(),
                rhs: vec![index.len()],
            });
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(TensorError::InvalidArgument {
                op: "scatter_add_rows",
                reason: format!("target row {bad} out of range for {rows} rows"),
            });
        }
        let t = self.val(a);
        let mut data = vec![0.0; rows * c];
        for (e, &i) in index.iter().enumerate() {
            for (d, s) in data[i * c..(i + 1) * c].iter_mut().zip(t.row(e)) {
                *d += s;
            }
        }
        let out = Tensor::from_parts(vec![rows, c], data);
        self.push("scatter_add_rows", out, Op::ScatterAdd { input: a.0, index })
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shapes: Vec<Vec<usize>> = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let v = |j: usize| &self.nodes[j].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.zip_map(v(*b), |x, y| x * y));
                accumulate(grads, *b, g.zip_map(v(*a), |x, y| x * y));
            }
            Op::AddRow(a, b) => {
                accumulate(grads, *a, g.clone());
                let c = g.cols();
                let mut col_sums = vec![0.0; c];
                for row in g.iter_rows().take(g.rows()) {
                    for (s, x) in col_sums.iter_mut().zip(row) {
                        *s += x;
                    }
                }
                accumulate(grads, *b, Tensor::from_parts(v(*b).shape().to_vec(), col_sums));
            }
            Op::MulCol(a, s) => {
                let (r, c) = (g.rows(), g.cols());
                let sv = v(*s);
                let av = v(*a);
                let mut ga = g.data().to_vec();
                let mut gs = vec![0.0; r];
                for k in 0..r {
                    let scale = sv.data()[k];
                    let grow = &g.data()[k * c..(k + 1) * c];
                    gs[k] = grow.iter().zip(av.row(k)).map(|(x, y)| x * y).sum();
                    ga[k * c..(k + 1) * c].iter_mut().for_each(|x| *x *= scale);
                }
                accumulate(grads, *a, Tensor::from_parts(vec![r, c], ga));
                accumulate(grads, *s, Tensor::from_parts(vec![r, 1], gs));
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.map(|x| x * s)),
            Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
            Op::MatMul(a, b) => {
                let av = v(*a);
                let bv = v(*b);
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                // dA = dC · Bᵀ
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, g.data(), (n as isize, 1), bv.data(), (1, n as isize), &mut ga);
                // dB = Aᵀ · dC
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, av.data(), (1, k as isize), g.data(), (n as isize, 1), &mut gb);
                accumulate(grads, *a, Tensor::from_parts(vec![m, k], ga));
                accumulate(grads, *b, Tensor::from_parts(vec![k, n], gb));
            }
            Op::Sum(a) => {
                let s = g.data()[0];
                accumulate(grads, *a, Tensor::full(v(*a).shape().to_vec(), s));
            }
            Op::Mean(a) => {
                let s = g.data()[0] / v(*a).numel() as f64;
                accumulate(grads, *a, Tensor::full(v(*a).shape().to_vec(), s));
            }
            Op::RowSum(a) => {
                let av = v(*a);
                let c = av.cols();
                let mut data = Vec::with_capacity(av.numel());
                for &gi in g.data() {
                    data.extend(std::iter::repeat_n(gi, c));
                }
                accumulate(grads, *a, Tensor::from_parts(av.shape().to_vec(), data));
            }
            Op::Concat { inputs, axis } => {
                if *axis == 0 {
                    let mut offset = 0;
                    for &p in inputs {
                        let n = v(p).numel();
                        let part = g.data()[offset..offset + n].to_vec();
                        offset += n;
                        accumulate(grads, p, Tensor::from_parts(v(p).shape().to_vec(), part));
                    }
                } else {
                    let r = g.rows();
                    let mut col = 0;
                    for &p in inputs {
                        let w = v(p).shape()[1];
                        let mut part = Vec::with_capacity(r * w);
                        for k in 0..r {
                            part.extend_from_slice(&g.row(k)[col..col + w]);
                        }
                        col += w;
                        accumulate(grads, p, Tensor::from_parts(vec![r, w], part));
                    }
                }
            }
            Op::Slice { input, axis, start } => {
                let iv = v(*input);
                let (r, c) = (iv.shape()[0], iv.shape()[1]);
                let mut full = vec![0.0; r * c];
                if *axis == 0 {
                    full[start * c..start * c + g.numel()].copy_from_slice(g.data());
                } else {
                    let w = g.cols();
                    for k in 0..r {
                        full[k * c + start..k * c + start + w].copy_from_slice(g.row(k));
                    }
                }
                accumulate(grads, *input, Tensor::from_parts(vec![r, c], full));
            }
            Op::Relu(a) => {
                accumulate(grads, *a, g.zip_map(v(*a), |gi, x| if x > 0.0 { gi } else { 0.0 }));
            }
            Op::Silu(a) => {
                accumulate(
                    grads,
                    *a,
                    g.zip_map(v(*a), |gi, x| {
                        let s = sigmoid(x);
                        gi * s * (1.0 + x * (1.0 - s))
                    }),
                );
            }
            Op::Exp(a) => accumulate(grads, *a, g.zip_map(y, |gi, yi| gi * yi)),
            Op::Log(a) => accumulate(grads, *a, g.zip_map(v(*a), |gi, x| gi / x)),
            Op::Sqrt(a) => {
                accumulate(grads, *a, g.zip_map(y, |gi, yi| if yi > 0.0 { gi / (2.0 * yi) } else { 0.0 }));
            }
            Op::Recip(a) => accumulate(grads, *a, g.zip_map(y, |gi, yi| -gi * yi * yi)),
            Op::Softmax(a) => {
                let c = y.cols();
                let mut data = Vec::with_capacity(y.numel());
                if c > 0 {
                    for (grow, yrow) in g.data().chunks(c).zip(y.data().chunks(c)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        data.extend(grow.iter().zip(yrow).map(|(gi, yi)| yi * (gi - dot)));
                    }
                }
                accumulate(grads, *a, Tensor::from_parts(y.shape().to_vec(), data));
            }
            Op::SquaredNorm(a) => {
                let s = g.data()[0];
                accumulate(grads, *a, v(*a).map(|x| 2.0 * s * x));
            }
            Op::Gather { input, index } => {
                let iv = v(*input);
                let (r, c) = (iv.shape()[0], iv.shape()[1]);
                let mut data = vec![0.0; r * c];
                for (e, &k) in index.iter().enumerate() {
                    for (d, s) in data[k * c..(k + 1) * c].iter_mut().zip(g.row(e)) {
                        *d += s;
                    }
                }
                accumulate(grads, *input, Tensor::from_parts(vec![r, c], data));
            }
            Op::ScatterAdd { input, index } => {
                let c = g.cols();
                let mut data = Vec::with_capacity(index.len() * c);
                for &k in index.iter() {
                    data.extend_from_slice(g.row(k));
                }
                accumulate(grads, *input, Tensor::from_parts(vec![index.len(), c], data));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], idx: usize, g: Tensor) {
    match &mut grads[idx] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let a = tape.leaf(mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let i = tape.leaf(Tensor::identity(2));
        let c = tape.matmul(a, i).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(vec![2, 3]));
        let b = tape.leaf(Tensor::zeros(vec![2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            TensorError::ShapeMismatch {
                op: "matmul",
                lhs: vec![2, 3],
                rhs: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("matmul"));
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.0, 0.0]));
        let y = tape.softmax(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn squared_norm_value_and_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![3.0, 4.0]));
        let y = tape.squared_norm(x).unwrap();
        assert_eq!(tape.value(y).item(), Some(25.0));
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).data(), &[6.0, 8.0]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, -2.0, 5.0]));
        let y = tape.sum(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn mean_relu_gradient_is_piecewise() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![-1.0, 2.0]));
        let r = tape.relu(x).unwrap();
        let y = tape.mean(r).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).data(), &[0.0, 0.5]);
    }

    #[test]
    fn unreached_leaf_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let unused = tape.leaf(Tensor::zeros(vec![2, 2]));
        let y = tape.sum(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(unused), Tensor::zeros(vec![2, 2]));
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(TensorError::NonScalarLoss { .. })));
    }

    #[test]
    fn log_of_zero_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.0]));
        assert_eq!(tape.log(x).unwrap_err(), TensorError::NonFinite { op: "log" });
    }

    #[test]
    fn sqrt_gradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.0, 4.0]));
        let r = tape.sqrt(x).unwrap();
        let y = tape.sum(r).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).data(), &[0.0, 0.25]);
    }

    #[test]
    fn gather_then_scatter_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let idx: Rc<[usize]> = vec![1, 1, 0].into();
        let g = tape.gather_rows(x, idx.clone()).unwrap();
        assert_eq!(tape.value(g).data(), &[3.0, 4.0, 3.0, 4.0, 1.0, 2.0]);
        let s = tape.scatter_add_rows(g, vec![0, 0, 1].into(), 2).unwrap();
        assert_eq!(tape.value(s).data(), &[6.0, 8.0, 1.0, 2.0]);
        let l = tape.sum(s).unwrap();
        let grads = tape.backward(l).unwrap();
        assert_eq!(grads.wrt(x).data(), &[1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let mut tape = Tape::new();
        let a = tape.leaf(mat(&[&[1.0], &[2.0]]));
        let b = tape.leaf(mat(&[&[3.0, 4.0], &[5.0, 6.0]]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let s = tape.slice(c, 1, 1, 3).unwrap();
        assert_eq!(tape.value(s), tape.value(b));
        let r = tape.concat(&[b, b], 0).unwrap();
        assert_eq!(tape.value(r).shape(), &[4, 2]);
        let bottom = tape.slice(r, 0, 2, 4).unwrap();
        assert_eq!(tape.value(bottom), tape.value(b));
    }

    #[test]
    fn tape_is_topologically_ordered() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0]));
        let y = tape.exp(x).unwrap();
        let z = tape.add(x, y).unwrap();
        assert!(x < y && y < z);
        assert_eq!(tape.len(), 3);
    }
}
