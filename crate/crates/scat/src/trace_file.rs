//! Binary trace-file format.
//!
//! Little-endian throughout, trace-major 32-bit float samples:
//!
//! ```text
//! offset  size          field
//! 0       4             magic "SCAT"
//! 4       2             format version (u16)
//! 6       1             scenario tag
//! 7       1             key-present flag (0 or 1)
//! 8       4             n_traces (u32)
//! 12      4             samples_per_trace (u32)
//! 16      8             sample_period seconds (f64)
//! 24      n*16          plaintext block
//! ...     n*16          ciphertext block
//! ...     16            key block (only when the flag is set)
//! ...     n*s*4         samples, trace-major f32 amps
//! ```
//!
//! Declared counts must match the byte count exactly; a write/read round trip
//! is bit-identical.

use std::io::{BufWriter, Write};
use std::path::Path;

use crate::config::Scenario;
use crate::error::{Error, Result, TraceFileError};
use crate::leakage::TraceSet;

pub const MAGIC: [u8; 4] = *b"SCAT";
pub const FORMAT_VERSION: u16 = 1;

/// Serialize a trace set to the wire format.
pub fn encode(set: &TraceSet, scenario: Scenario) -> Vec<u8> {
    let n = set.n_traces();
    let s = set.samples_per_trace;
    let key_present = set.key.is_some();
    let mut out = Vec::with_capacity(24 + n * 32 + if key_present { 16 } else { 0 } + n * s * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(scenario.tag());
    out.push(u8::from(key_present));
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(s as u32).to_le_bytes());
    out.extend_from_slice(&set.sample_period.to_le_bytes());
    for pt in &set.plaintexts {
        out.extend_from_slice(pt);
    }
    for ct in &set.ciphertexts {
        out.extend_from_slice(ct);
    }
    if let Some(key) = &set.key {
        out.extend_from_slice(key);
    }
    for &x in set.raw_samples() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, field: &'static str) -> std::result::Result<&'a [u8], TraceFileError> {
        if self.bytes.len() - self.offset < len {
            return Err(TraceFileError::Truncated {
                field,
                offset: self.offset as u64,
                needed: (len - (self.bytes.len() - self.offset)) as u64,
            });
        }
        let out = &self.bytes[self.offset..self.offset + len];
        self.offset += len;
        Ok(out)
    }

    fn u16(&mut self, field: &'static str) -> std::result::Result<u16, TraceFileError> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().unwrap()))
    }

    fn u32(&mut self, field: &'static str) -> std::result::Result<u32, TraceFileError> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn f64(&mut self, field: &'static str) -> std::result::Result<f64, TraceFileError> {
        Ok(f64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    fn block16(&mut self, count: usize, field: &'static str) -> std::result::Result<Vec<[u8; 16]>, TraceFileError> {
        let raw = self.take(count * 16, field)?;
        Ok(raw.chunks_exact(16).map(|c| c.try_into().unwrap()).collect())
    }
}

/// Parse the wire format back into a trace set.
pub fn decode(bytes: &[u8]) -> std::result::Result<(TraceSet, Scenario), TraceFileError> {
    let mut cur = Cursor { bytes, offset: 0 };

    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(TraceFileError::BadMagic {
            found: magic.try_into().unwrap(),
        });
    }
    let version = cur.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(TraceFileError::UnsupportedVersion {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let tag = cur.take(1, "scenario")?[0];
    let scenario = Scenario::from_tag(tag).ok_or(TraceFileError::UnknownScenario { found: tag })?;
    let key_flag = cur.take(1, "key_present")?[0];
    if key_flag > 1 {
        return Err(TraceFileError::BadKeyFlag { found: key_flag });
    }
    let n = cur.u32("n_traces")? as usize;
    let s = cur.u32("samples_per_trace")? as usize;
    let sample_period = cur.f64("sample_period")?;

    // Declared counts are attacker-controlled; size everything in u128 before
    // touching memory so absurd headers fail as truncation, not wraparound.
    let sample_len = (n as u128) * (s as u128) * 4;
    let remaining = (bytes.len() - cur.offset) as u128;
    if sample_len > remaining {
        return Err(TraceFileError::Truncated {
            field: "samples",
            offset: cur.offset as u64,
            needed: (sample_len - remaining).min(u64::MAX as u128) as u64,
        });
    }

    let plaintexts = cur.block16(n, "plaintexts")?;
    let ciphertexts = cur.block16(n, "ciphertexts")?;
    let key = if key_flag == 1 {
        Some(cur.block16(1, "key")?[0])
    } else {
        None
    };

    let sample_bytes = cur.take(sample_len as usize, "samples")?;
    let expected = cur.offset as u64;
    if cur.offset != bytes.len() {
        return Err(TraceFileError::TrailingData {
            extra: (bytes.len() - cur.offset) as u64,
            expected,
        });
    }
    let mut samples = Vec::with_capacity(n * s);
    for (i, chunk) in sample_bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(TraceFileError::NonFiniteSample {
                trace: i / s,
                sample: i % s,
            });
        }
        samples.push(v);
    }

    let set = TraceSet::from_raw(s, sample_period, plaintexts, ciphertexts, key, samples)
        .expect("block sizes enforced above");
    Ok((set, scenario))
}

/// Write a trace file.
pub fn write(path: &Path, set: &TraceSet, scenario: Scenario) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&encode(set, scenario))?;
    w.flush()?;
    Ok(())
}

/// Read a trace file.
pub fn read(path: &Path) -> Result<(TraceSet, Scenario)> {
    let bytes = std::fs::read(path)?;
    decode(&bytes).map_err(|kind| Error::TraceFile {
        path: path.to_path_buf(),
        kind,
    })
}
