use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EntropyError {
    #[error("entropy exhausted: requested {requested} bytes, {remaining} remaining")]
    Exhausted { requested: usize, remaining: usize },
    #[error("entropy source unavailable: {0}")]
    Unavailable(String),
}

#[derive(Debug, Error)]
pub enum SboxError {
    #[error("invalid S-box table: {0}")]
    InvalidTable(String),
    #[error("S-box search budget exceeded after {attempts} attempts")]
    SearchBudgetExceeded { attempts: u32 },
    #[error("invalid pool: {0}")]
    InvalidPool(String),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error("pool i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("round count r must be odd and >= 1, got {0}")]
    InvalidFeistelRounds(u32),
    #[error("free list must hold {expected} S-boxes for r={r}, got {got}")]
    FreeListLength { r: u32, expected: usize, got: usize },
    #[error("set size must be >= 1")]
    EmptySet,
    #[error("cipher rounds must be >= 1")]
    ZeroRounds,
    #[error("frequency must be positive, got {0}")]
    NonPositiveFrequency(f64),
    #[error("index {index} out of range for pool of {len}")]
    PoolIndex { index: usize, len: usize },
}

#[derive(Debug, Error)]
pub enum GenieError {
    #[error("fingerprint unavailable: {0}")]
    FingerprintUnavailable(String),
    #[error("device already personalized")]
    AlreadyPersonalized,
    #[error("device not personalized")]
    NotPersonalized,
    #[error("integrity failure: sealed tables rejected")]
    Integrity,
    #[error("malformed sealed blob: {0}")]
    MalformedBlob(String),
    #[error("malformed eNVM record: {0}")]
    MalformedEnvm(String),
    #[error("pool/params mismatch: {0}")]
    PoolMismatch(String),
    #[error("S-box table {0} is not an involutive permutation")]
    TableValidation(usize),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error("device i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum AuthorityError {
    #[error("serial {0} is already enrolled")]
    DuplicateSerial(String),
    #[error("no record for serial {0}")]
    UnknownSerial(String),
    #[error("device not initialized: {0}")]
    DeviceNotInitialized(String),
    #[error("device unreachable: {0}")]
    Unreachable(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("pair count must be >= 1")]
    NoPairs,
    #[error("malformed UIR record: {0}")]
    MalformedRecord(String),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error("uir i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("truncated frame: need {needed} more bytes")]
    Truncated { needed: usize },
    #[error("payload of {0} bytes exceeds the frame limit")]
    Oversize(usize),
    #[error("unknown frame kind 0x{0:02x}")]
    UnknownKind(u8),
    #[error("malformed payload: {0}")]
    Payload(String),
}
