use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point outside the kernel domain: {0}")]
    Domain(String),

    #[error("unsupported derivative order ({i}, {j})")]
    UnsupportedOrder { i: usize, j: usize },

    #[error("ill-conditioned system: smallest eigenvalue {min_eig:.3e}")]
    Conditioning { min_eig: f64 },

    #[error("rank-deficient Gamma_X: smallest eigenvalue {min_eig:.3e}")]
    RankDeficient { min_eig: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no tabulated constants: {0}")]
    UnsupportedConstants(String),

    #[error("separation search failed: {0}")]
    Separation(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
