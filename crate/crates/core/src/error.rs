use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("vectors must have at least one component")]
    EmptyVector,

    #[error("non-finite value at record {record}, component {component}")]
    NonFinite { record: usize, component: usize },

    #[error("duplicate id {0}")]
    DuplicateId(u64),

    #[error("item set is empty")]
    EmptyItems,

    #[error("k must be at least 1 (got {0})")]
    InvalidK(usize),

    #[error("k_max must be at least 1 (got {0})")]
    InvalidKMax(usize),

    #[error("candidate pool factor must be at least 1 (got {0})")]
    InvalidPoolFactor(usize),

    #[error("worker count must be at least 1 (got {0})")]
    InvalidWorkers(usize),

    #[error("invalid dataset spec: {0}")]
    InvalidDataset(String),

    #[error("invalid sweep: {0}")]
    InvalidSweep(String),

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { expected: u32, found: u32 },

    #[error("stream truncated: needed {needed} bytes, have {available}")]
    Truncated { needed: u64, available: u64 },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("invalid value width flag {0} (expected 32 or 64)")]
    InvalidWidth(u32),

    #[error("corrupt index: {0}")]
    Corrupt(String),

    #[error("empty input file")]
    EmptyFile,

    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow { line: u64, expected: usize, found: usize },

    #[error("line {line}, column {column}: cannot parse {field:?} as a number")]
    NonNumeric { line: u64, column: usize, field: String },

    #[error("line {line}, column {column}: non-finite value")]
    NonFiniteField { line: u64, column: usize },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
