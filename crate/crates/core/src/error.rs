use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid Fock truncation (n_max_h = {n_max_h}, n_max_v = {n_max_v}); both must be >= 0")]
    InvalidTruncation { n_max_h: i64, n_max_v: i64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("basis state lies outside the truncated space")]
    StateOutOfSpace,

    #[error("invalid density matrix: {0}")]
    InvalidDensityMatrix(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("integrator step size underflow at t = {t} ps (h = {h:.3e} ps)")]
    StepUnderflow { t: f64, h: f64 },

    #[error("cannot integrate backwards from t = {from} ps to t = {to} ps")]
    BackwardTime { from: f64, to: f64 },

    #[error("trajectory drift too large at t = {t} ps: {what} = {value:.3e}")]
    Drift { t: f64, what: &'static str, value: f64 },

    #[error("no photon pairs: raw two-photon diagonal sum {sum:.3e} is below 1e-12 (nothing is emitted into the cavity)")]
    NoPhotonPairs { sum: f64 },

    #[error("two-photon matrix spectrum has imaginary part {imag:.3e} (invalid input matrix)")]
    ComplexSpectrum { imag: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("scenario '{scenario}': {source}")]
    Scenario {
        scenario: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_scenario(self, scenario: impl Into<String>) -> Error {
        Error::Scenario {
            scenario: scenario.into(),
            source: Box::new(self),
        }
    }
}
