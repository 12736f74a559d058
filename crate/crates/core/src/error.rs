use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("maximum is degenerate: {0}")]
    DegenerateMaximum(String),
    #[error("potential has a second maximum near ({x:.6}, {y:.6}) with value {value:.3e}")]
    MultipleMaxima { x: f64, y: f64, value: f64 },
    #[error("cell solver did not converge within {max_steps} steps (drift oscillation {drift_osc:.3e})")]
    NoConvergence { max_steps: usize, drift_osc: f64 },
    #[error("no grid node near the origin lies in the flat set")]
    NotInterior,
    #[error("energy level must be non-negative, got {0}")]
    BadLevel(f64),
    #[error("point ({x:.6}, {y:.6}) lies outside the cover window")]
    OutOfWindow { x: f64, y: f64 },
    #[error("no homoclinic connection found for class ({m}, {n})")]
    NoConnection { m: i64, n: i64 },
    #[error("orbit tail is not converging: {0}")]
    NotConverging(String),
    #[error("Lyapunov-Perron iteration failed to contract (gap ratio {ratio:.3})")]
    ContractionFailure { ratio: f64 },
    #[error("beta = {beta} outside (0, {lambda}]")]
    BadBeta { beta: f64, lambda: f64 },
    #[error("trajectory left the window at t = {t:.4}")]
    BlowUp { t: f64 },
    #[error("half-plane intersection has empty interior")]
    EmptyInterior,
    #[error("point ({x:.6}, {y:.6}) is not on the polygon boundary")]
    NotOnBoundary { x: f64, y: f64 },
    #[error("point ({x:.6}, {y:.6}) is not a polygon vertex")]
    NotAVertex { x: f64, y: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
