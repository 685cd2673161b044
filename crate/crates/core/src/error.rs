use thiserror::Error;

/// Errors raised by the simulator, the audits and the experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("numerical failure in {what}: relative residual {residual:e}")]
    NumericalFailure { what: String, residual: f64 },

    #[error("time step collapsed at step {step} (t = {t}): dt = {dt:e}")]
    StepCollapse { step: usize, t: f64, dt: f64 },

    #[error("blow-up at step {step} (t = {t}): species {species} reached {value:e}")]
    BlowUp { step: usize, t: f64, species: usize, value: f64 },

    #[error("step limit of {steps} reached at t = {t}")]
    StepLimit { steps: usize, t: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
