use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("singular map: {0}")]
    Singular(String),
    #[error("elliptic point or vanishing denominator at ({0}, {1})")]
    NotSaddle(f64, f64),
    #[error("phase is not in perturbed hyperbolic normal form: {0}")]
    NotNormalForm(String),
    #[error("empty cover (flatness constant too small?)")]
    EmptyCover,
    #[error("recursion did not terminate within depth {0}")]
    Recursion(u32),
    #[error("aliasing: {0}")]
    Aliasing(String),
    #[error("frequency ({0}, {1}) is not covered")]
    Uncovered(f64, f64),
    #[error("set is not flat at the claimed scale: defect {defect} > {bound}")]
    NotFlat { defect: f64, bound: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
