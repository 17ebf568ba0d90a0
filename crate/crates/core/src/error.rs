use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rectangle dimensions must be positive, got length {length} and width {width}")]
    InvalidRectangle { length: f64, width: f64 },

    #[error("steering angle {delta} rad is outside the open interval (-pi/2, pi/2)")]
    SteeringDomain { delta: f64 },

    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("relative pose ({x}, {y}, {psi}) is outside the trained range of the margin network")]
    OutOfTrainedRange { x: f64, y: f64, psi: f64 },

    #[error("center-to-center margin is singular at coincident centers")]
    CoincidentCenters,

    #[error("learned margin mode requires a margin network but none was supplied")]
    MissingModel,

    #[error("model file line {line}: {message}")]
    ModelParse { line: usize, message: String },

    #[error(
        "training did not reach the target after {epochs} epochs \
         (train mse {train_mse:.3e}, validation mse {val_mse:.3e}, target {target:.3e})"
    )]
    NotConverged {
        epochs: usize,
        train_mse: f64,
        val_mse: f64,
        target: f64,
    },

    #[error("QP solver failure: {0}")]
    Qp(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
