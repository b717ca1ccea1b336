//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("regulator instability: v_reg left [0, {v_dd} V] at t = {time:.3e} s")]
    Instability { time: f64, v_dd: f64 },

    #[error("negative bleed: i_cs_nominal = {i_cs:.4e} A is below i_aes_avg = {i_aes_avg:.4e} A (SMC would re-engage)")]
    NegativeBleed { i_cs: f64, i_aes_avg: f64 },

    #[error("trace set carries no key; this operation needs the key-present variant")]
    MissingKey,

    #[error("trace file `{path}`: {kind}")]
    TraceFile { path: PathBuf, kind: TraceFileError },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name,
            reason: reason.into(),
        }
    }
}

/// Structural problems in a binary trace file, with the byte offset or field
/// name that failed so a corrupt capture can be located.
#[derive(Debug, thiserror::Error)]
pub enum TraceFileError {
    #[error("bad magic at offset 0: expected \"SCAT\", found {found:02x?}")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported format version {found} at offset 4 (supported: {supported})")]
    UnsupportedVersion { found: u16, supported: u16 },

    #[error("unknown scenario tag {found} at offset 6")]
    UnknownScenario { found: u8 },

    #[error("invalid key-present flag {found} at offset 7")]
    BadKeyFlag { found: u8 },

    #[error("truncated while reading {field} at offset {offset}: needed {needed} more bytes")]
    Truncated {
        field: &'static str,
        offset: u64,
        needed: u64,
    },

    #[error("{extra} trailing bytes after sample block (expected file length {expected})")]
    TrailingData { extra: u64, expected: u64 },

    #[error("non-finite sample value in trace {trace} at sample {sample}")]
    NonFiniteSample { trace: usize, sample: usize },
}
