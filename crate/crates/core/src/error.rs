use std::path::PathBuf;

use pocketdiff_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid annealing spec: {0}")]
    InvalidAnneal(String),
    #[error("timestep {t} outside 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },
    #[error("invalid molecule: {0}")]
    InvalidMolecule(String),
    #[error("categorical posterior row {row} has zero mass")]
    DegeneratePosterior { row: usize },
    #[error("KL divergence is infinite: p > 0 where q = 0 in row {row}, category {category}")]
    InfiniteDivergence { row: usize, category: usize },
    #[error("denoiser shape mismatch: {0}")]
    ParamMismatch(String),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("protein context has no atoms")]
    EmptyProtein,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at step {step} (t={t}, mse={mse}, kl={kl})")]
    NonFiniteLoss { step: u64, t: usize, mse: f64, kl: f64 },
    #[error("sampler produced non-finite positions at t={t}")]
    SamplerNonFinite { t: usize },
    #[error("atom-count statistics are empty")]
    EmptyStats,
    #[error("histogram binning mismatch: {0}")]
    Binning(String),
    #[error("empty set: {0}")]
    EmptySet(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown config key `{key}`; valid keys: {}", valid.join(", "))]
    UnknownKey { key: String, valid: Vec<&'static str> },
    #[error("config key `{key}`: cannot use `{value}`: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("output directory {0} is not empty (pass --force to overwrite)")]
    OutputNotEmpty(PathBuf),
}

impl Error {
    /// Module that raised the error, used in machine-readable error lines.
    pub fn module(&self) -> &'static str {
        use Error::*;
        match self {
            Tensor(_) => "tensor",
            InvalidSchedule(_) | InvalidAnneal(_) => "schedules",
            TimestepOutOfRange { .. }
            | InvalidMolecule(_)
            | DegeneratePosterior { .. }
            | InfiniteDivergence { .. } => "diffusion",
            ParamMismatch(_) | Checkpoint { .. } => "denoiser",
            EmptyProtein | EmptyDataset | NonFiniteLoss { .. } => "trainer",
            SamplerNonFinite { .. } | EmptyStats => "sampler",
            Binning(_) | EmptySet(_) => "evalkit",
            Parse { .. } | Io { .. } | OutputNotEmpty(_) => "dataio",
            UnknownKey { .. } | BadValue { .. } => "config",
        }
    }

    pub fn kind(&self) -> &'static str {
        use Error::*;
        match self {
            Tensor(e) => match e {
                TensorError::ShapeMismatch { .. } => "shape_mismatch",
                TensorError::DataLength { .. } => "data_length",
                TensorError::NonFinite { .. } => "non_finite",
                TensorError::NonScalarLoss { .. } => "non_scalar_loss",
                TensorError::InvalidArgument { .. } => "invalid_argument",
            },
            InvalidSchedule(_) => "invalid_schedule",
            InvalidAnneal(_) => "invalid_anneal",
            TimestepOutOfRange { .. } => "timestep_out_of_range",
            InvalidMolecule(_) => "invalid_molecule",
            DegeneratePosterior { .. } => "degenerate_posterior",
            InfiniteDivergence { .. } => "infinite_divergence",
            ParamMismatch(_) => "shape_mismatch",
            Checkpoint { .. } => "checkpoint",
            EmptyProtein => "empty_protein",
            EmptyDataset => "empty_dataset",
            NonFiniteLoss { .. } => "non_finite_loss",
            SamplerNonFinite { .. } => "non_finite",
            EmptyStats => "empty_stats",
            Binning(_) => "binning",
            EmptySet(_) => "empty_set",
            Parse { .. } => "parse",
            Io { .. } => "io",
            OutputNotEmpty(_) => "output_not_empty",
            UnknownKey { .. } => "unknown_key",
            BadValue { .. } => "bad_value",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
