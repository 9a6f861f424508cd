use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value in layer `{layer}`: {detail}")]
    Numerical { layer: String, detail: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Training {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("gradient sample {index} is not finite: {detail}")]
    GradientSample { index: usize, detail: String },

    #[error("requested {requested} eigenpairs but effective rank is {effective}")]
    RankDeficient { requested: usize, effective: usize },
}
