use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("composition error: {0}")]
    Composition(String),
    #[error("skin fill error: {0}")]
    SkinFill(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("schedule error: {0}")]
    Schedule(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("data leakage: {0}")]
    Leakage(String),
    #[error("missing checkpoints for variants: {0:?}")]
    MissingVariants(Vec<String>),
    #[error(transparent)]
    Grad(#[from] acdg_grad::GradError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
