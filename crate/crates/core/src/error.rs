use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(
        "field {field} is not skew-adjoint: worst pair ({row}, {col}) has |<Xe_row,e_col> + <e_row,Xe_col>| = {residual:.3e}"
    )]
    NotSkewAdjoint {
        field: usize,
        row: usize,
        col: usize,
        residual: f64,
    },

    #[error("scene has {n} points, above the eigensolver cap of {cap}; shrink the scene")]
    SizeCap { n: usize, cap: usize },

    #[error("function has {found} values but the scene has {expected} points")]
    Mismatch { expected: usize, found: usize },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("scene file line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn check_len(expected: usize, f: &[f64]) -> Result<()> {
    if f.len() == expected {
        Ok(())
    } else {
        Err(Error::Mismatch {
            expected,
            found: f.len(),
        })
    }
}
