use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid scene: {0}")]
    Scene(String),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("time {t} s outside [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("zero reference power")]
    ZeroPower,
}
