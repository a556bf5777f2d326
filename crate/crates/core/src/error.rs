use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // physiological signals
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("duration {duration_s} s fits fewer than {needed} cycles")]
    InsufficientDuration { duration_s: f64, needed: usize },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("non-uniform sampling at line {line}: dt={dt} deviates from median {median} by more than 1%")]
    NonUniformSampling { line: usize, dt: f64, median: f64 },
    #[error("invalid sampling rate {0}")]
    InvalidRate(f64),
    #[error("signal is constant; standardization undefined")]
    ConstantSignal,

    // avatar model
    #[error("invalid range [{lo}, {hi}]")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("value {0} out of range [0, 1]")]
    OutOfRange(f64),
    #[error("need at least {needed} items, got {got}")]
    TooFew { needed: usize, got: usize },

    // shapes and lengths
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    // dataset io
    #[error("io error at {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt container: {0}")]
    CorruptContainer(String),
    #[error("duplicate avatar id {0:?}")]
    DuplicateId(String),
    #[error("schema error: {0}")]
    Schema(String),

    // classical recovery
    #[error("frame {0} has an empty skin mask")]
    EmptyMask(usize),
    #[error("invalid band [{lo}, {hi}] Hz for fs={fs} Hz")]
    InvalidBand { lo: f64, hi: f64, fs: f64 },
    #[error("signal of {len} samples is shorter than window of {window}")]
    TooShort { len: usize, window: usize },

    // neural model
    #[error("dataset has no training windows")]
    EmptyDataset,
    #[error("clip of {frames} frames is shorter than window of {window}")]
    ClipTooShort { frames: usize, window: usize },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    // metrics
    #[error("no periodogram bin falls inside [{lo}, {hi}] Hz")]
    EmptyBand { lo: f64, hi: f64 },
    #[error("frequency {f} Hz outside band [{lo}, {hi}] Hz")]
    InvalidFrequency { f: f64, lo: f64, hi: f64 },
    #[error("series is constant; correlation undefined")]
    ConstantSeries,
    #[error("window of {window_s} s longer than signal of {duration_s} s")]
    WindowTooLong { window_s: f64, duration_s: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
