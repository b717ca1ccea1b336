//! Injected-noise generation: a Fibonacci LFSR clocking a current-steering
//! DAC, plus the analytic law for how independent noise scales correlation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Noise generator parameters.
///
/// `taps` are 1-based stage numbers of the feedback polynomial; the default
/// `{16, 15, 13, 4}` is maximal-length (period 2^16 - 1). The top `dac_bits`
/// of each LFSR state drive the DAC, which holds its output for
/// `update_period` seconds (zero-order hold).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseParams {
    pub lfsr_width: u32,
    pub taps: Vec<u32>,
    pub seed: u64,
    pub dac_bits: u32,
    /// DAC full-scale output in amps.
    pub full_scale: f64,
    /// Seconds between DAC updates.
    pub update_period: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            lfsr_width: 16,
            taps: vec![16, 15, 13, 4],
            seed: 0xACE1,
            dac_bits: 8,
            full_scale: 1.0e-3,
            update_period: 1.0e-9,
        }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        if self.lfsr_width == 0 || self.lfsr_width > 63 {
            return Err(Error::invalid("lfsr_width", "must be in 1..=63"));
        }
        if self.seed == 0 {
            return Err(Error::invalid("seed", "LFSR seed must be nonzero"));
        }
        if self.seed >= 1u64 << self.lfsr_width {
            return Err(Error::invalid(
                "seed",
                format!("must fit in {} bits", self.lfsr_width),
            ));
        }
        if self.taps.is_empty() {
            return Err(Error::invalid("taps", "feedback polynomial is empty"));
        }
        if self.taps.iter().any(|&t| t == 0 || t > self.lfsr_width) {
            return Err(Error::invalid(
                "taps",
                format!("tap positions must be in 1..={}", self.lfsr_width),
            ));
        }
        if self.dac_bits == 0 || self.dac_bits > self.lfsr_width {
            return Err(Error::invalid("dac_bits", "must be in 1..=lfsr_width"));
        }
        if !self.full_scale.is_finite() || self.full_scale < 0.0 {
            return Err(Error::invalid("full_scale", "must be finite and >= 0"));
        }
        if !self.update_period.is_finite() || self.update_period <= 0.0 {
            return Err(Error::invalid("update_period", "must be finite and > 0"));
        }
        Ok(())
    }

    /// Same generator with a different (derived) seed, reduced into range and
    /// kept away from the all-zero lockup state.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mask = (1u64 << self.lfsr_width) - 1;
        let s = seed & mask;
        Self {
            seed: if s == 0 { 1 } else { s },
            taps: self.taps.clone(),
            ..*self
        }
    }
}

/// Fibonacci-configuration LFSR: the feedback bit is the XOR of the tapped
/// stages (stage `t` is bit `t - 1`) and shifts in at the bottom.
#[derive(Debug, Clone)]
pub struct Lfsr {
    state: u64,
    mask: u64,
    tap_shifts: Vec<u32>,
}

impl Lfsr {
    pub fn new(params: &NoiseParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            state: params.seed,
            mask: (1u64 << params.lfsr_width) - 1,
            tap_shifts: params.taps.iter().map(|&t| t - 1).collect(),
        })
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    /// Advance one step and return the new state.
    pub fn step(&mut self) -> u64 {
        let mut fb = 0u64;
        for &s in &self.tap_shifts {
            fb ^= self.state >> s;
        }
        self.state = ((self.state << 1) | (fb & 1)) & self.mask;
        self.state
    }
}

/// First `n` states of the LFSR sequence (after the seed).
pub fn lfsr_stream(params: &NoiseParams, n: usize) -> Result<Vec<u64>> {
    if n == 0 {
        return Err(Error::invalid("n", "requested stream length is zero"));
    }
    let mut lfsr = Lfsr::new(params)?;
    Ok((0..n).map(|_| lfsr.step()).collect())
}

/// Injected-noise current waveform over `duration`, sampled every `dt`.
///
/// The top `dac_bits` of each state map linearly onto `[0, full_scale]` and
/// are held between DAC updates.
pub fn noise_waveform(params: &NoiseParams, duration: f64, dt: f64) -> Result<Vec<f64>> {
    params.validate()?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid("dt", "must be finite and > 0"));
    }
    if dt > params.update_period {
        return Err(Error::invalid(
            "dt",
            format!(
                "sample step {dt:e} s exceeds DAC update period {:e} s",
                params.update_period
            ),
        ));
    }
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::invalid("duration", "must be finite and > 0"));
    }
    let n = (duration / dt).round() as usize;
    Ok(noise_samples(params, n, dt))
}

/// Sample-count variant used by the pipelines; `params` must already be valid.
pub(crate) fn noise_samples(params: &NoiseParams, n: usize, dt: f64) -> Vec<f64> {
    let mut lfsr = Lfsr::new(params).expect("validated params");
    let steps_per_sample = dt / params.update_period; // <= 1
    let code_max = ((1u64 << params.dac_bits) - 1) as f64;
    let shift = params.lfsr_width - params.dac_bits;
    let dac = |state: u64| params.full_scale * (state >> shift) as f64 / code_max;

    let mut out = Vec::with_capacity(n);
    let mut hold_index = 0u64;
    let mut held = dac(lfsr.step());
    for k in 0..n {
        // Midpoint avoids boundary jitter when dt divides the update period.
        let index = ((k as f64 + 0.5) * steps_per_sample).floor() as u64;
        while hold_index < index {
            held = dac(lfsr.step());
            hold_index += 1;
        }
        out.push(held);
    }
    out
}

/// Correlation surviving after independent noise of deviation `sigma_n` is
/// added to traces of deviation `sigma_t`: `rho * sigma_t / sqrt(sigma_t^2 + sigma_n^2)`.
pub fn predicted_correlation(rho: f64, sigma_t: f64, sigma_n: f64) -> Result<f64> {
    if !(rho.is_finite() && rho.abs() <= 1.0) {
        return Err(Error::invalid("rho", "must be finite with |rho| <= 1"));
    }
    if !(sigma_t.is_finite() && sigma_t > 0.0) {
        return Err(Error::invalid("sigma_t", "must be finite and > 0"));
    }
    if !(sigma_n.is_finite() && sigma_n >= 0.0) {
        return Err(Error::invalid("sigma_n", "must be finite and >= 0"));
    }
    Ok(rho * sigma_t / (sigma_t * sigma_t + sigma_n * sigma_n).sqrt())
}
