use alloc::string::String;

/// Errors raised anywhere in the decode chain.
///
/// The variants map onto the CLI exit-code classes: argument and spec
/// problems are usage errors, sequencing/data/corruption are data errors and
/// ill-posed or numerical failures are numerical errors.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid filter spec: {0}")]
    InvalidSpec(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("sequencing error: {0}")]
    Sequencing(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("ill-posed problem: {0}")]
    IllPosed(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("corrupt input: {0}")]
    Corruption(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
