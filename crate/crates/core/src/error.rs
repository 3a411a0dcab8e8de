use alloc::string::String;

/// Errors raised by the lattice kernels, solvers and models.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("singular per-site block at site {site} (pivot ratio {pivot_ratio:e})")]
    SingularBlock { site: usize, pivot_ratio: f64 },

    #[error("singular matrix: zero pivot in column {0}")]
    SingularMatrix(usize),

    #[error("communication failure: {0}")]
    Comm(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("halo for mu={mu} {dir} was not exchanged before use")]
    HaloMissing { mu: usize, dir: &'static str },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::Error::InvalidArgument(alloc::format!($($arg)*))
    };
}

macro_rules! shape {
    ($($arg:tt)*) => {
        $crate::Error::ShapeMismatch(alloc::format!($($arg)*))
    };
}

pub(crate) use invalid;
pub(crate) use shape;
