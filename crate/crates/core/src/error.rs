use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("out of domain: {0}")]
    Domain(String),
    #[error("{kind} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        kind: &'static str,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },
    #[error("continuation stalled after reaching lambda = {lambda}: {source}")]
    Stall { lambda: f64, source: Box<Error> },
    #[error("riccati blow-up at t = {time}")]
    BlowUp { time: f64 },
    #[error("monotonicity gate refused: C_disp = {c_disp}")]
    Gate { c_disp: f64 },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
