use irsma_conic::ConicError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("exhaustive search over {configs} configurations exceeds the cap of {cap}")]
    SearchTooLarge { configs: u128, cap: u128 },
    #[error("minimum rate {required} is infeasible; the best attainable minimum average rate is {attainable}")]
    RateInfeasible { required: f64, attainable: f64 },
    #[error("empty state list")]
    NoStates,
    #[error("objective decreased from {previous} to {current} in round {round}")]
    Monotonicity {
        round: usize,
        previous: f64,
        current: f64,
    },
    #[error(transparent)]
    Conic(#[from] ConicError),
}

pub type Result<T> = std::result::Result<T, CoreError>;
