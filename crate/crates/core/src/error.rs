use thiserror::Error;

/// Every failure mode surfaced by the toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not invertible (det = {det:e})")]
    NotInvertible { det: f64 },
    #[error("splitting pair is degenerate: both lines coincide")]
    DegenerateSplitting,
    #[error("vector pair is ill-conditioned (gap sine {gap_sine:e} < 1e-12)")]
    IllConditionedPair { gap_sine: f64 },
    #[error("vector angle must lie strictly inside (0, pi), got {angle}")]
    DegeneratePair { angle: f64 },
    #[error("cost gauge violates N(g) >= log max(|g|, |g^-1|): N = {value}, bound = {bound}")]
    InvalidGauge { value: f64, bound: f64 },
    #[error("index range [{start}, {end}) leaves the window [{window_start}, {window_end})")]
    WindowExhausted {
        start: i64,
        end: i64,
        window_start: i64,
        window_end: i64,
    },
    #[error("series is not decaying: running product {product:e} exceeded the cap")]
    SeriesDiverging { product: f64 },
    #[error("no data: {0}")]
    NoData(String),
    #[error("term {index} = {value} is outside [0, 1]")]
    BadTerm { index: usize, value: f64 },
    #[error("sample list exhausted before certification; need at least {required} values")]
    NeedMoreSamples { required: usize },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("drift misconfigured: 2c = {two_c} must be below E[phi] = {mean_phi}")]
    NonNegativeDrift { two_c: f64, mean_phi: f64 },
    #[error("bad tower vector: {0}")]
    BadTowerVector(String),
    #[error("tower height {height} is not in {{1, 4, 6, 8, ...}}")]
    BadHeightForLabels { height: u32 },
    #[error("weights must be strictly decreasing (index {index}: {prev} -> {next})")]
    NeedStrictDecrease { index: usize, prev: f64, next: f64 },
    #[error("measure has a gap at budget {budget}: {witness}")]
    UnboundedGap {
        budget: f64,
        witness: crate::flexible::GapWitness,
    },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid measure: {0}")]
    InvalidEta(String),
    #[error("step {step} costs {cost}, budget is {budget}")]
    BudgetViolated { step: usize, cost: f64, budget: f64 },
    #[error("i/o failure: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
