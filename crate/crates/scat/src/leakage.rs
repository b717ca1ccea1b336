//! Converts AES round activity into sampled load-current waveforms.
//!
//! The modeled core serializes its S-box evaluations: each round occupies
//! `samples_per_round` samples, the round's first sample carries the parallel
//! state-register write (total S-box output Hamming weight), and the next
//! sixteen samples carry the per-byte S-box pulses one byte at a time. The
//! per-byte slots are what give a first-round CPA hypothesis its near-unity
//! correlation when measurement noise vanishes; the aggregate register pulse
//! dominates the round-level current swing.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::aes::{Aes128, RoundActivity, BLOCK_LEN, ROUNDS};
use crate::error::{Error, Result};
use crate::seeds::{self, stream};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Current-pulse shaping for each activity contribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PulseShape {
    /// Contribution confined to its designated sample.
    Rectangular,
    /// Full amplitude at the designated sample, decaying into the following
    /// samples with time constant `tau` seconds.
    ExponentialDecay { tau: f64 },
}

/// Leakage model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeakageParams {
    /// Quiescent core draw in amps.
    pub baseline_current: f64,
    /// Amps per Hamming-weight unit of switching activity.
    pub hw_scale: f64,
    /// Seconds per AES round.
    pub round_period: f64,
    /// Samples per round; at least 17 (one register slot + sixteen byte slots).
    pub samples_per_round: usize,
    /// Gaussian measurement noise per sample, amps.
    pub measurement_noise_sigma: f64,
    pub pulse_shape: PulseShape,
}

impl Default for LeakageParams {
    fn default() -> Self {
        Self {
            // 18.89 mA average core draw; 10 uA/HW puts the first-round
            // signature swing at 1.28 mA full scale. 7 uA of scope noise
            // leaves the per-byte hypothesis correlation near 0.9, which an
            // unprotected CPA resolves well inside 1K traces.
            baseline_current: 18.89e-3,
            hw_scale: 10e-6,
            round_period: 10e-9,
            samples_per_round: 20,
            measurement_noise_sigma: 7e-6,
            pulse_shape: PulseShape::Rectangular,
        }
    }
}

impl LeakageParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("baseline_current", self.baseline_current),
            ("hw_scale", self.hw_scale),
            ("round_period", self.round_period),
            ("measurement_noise_sigma", self.measurement_noise_sigma),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::invalid(name, "must be finite"));
            }
        }
        if self.baseline_current <= 0.0 {
            return Err(Error::invalid("baseline_current", "must be > 0"));
        }
        if self.hw_scale < 0.0 {
            return Err(Error::invalid("hw_scale", "must be >= 0"));
        }
        if self.round_period <= 0.0 {
            return Err(Error::invalid("round_period", "must be > 0"));
        }
        if self.measurement_noise_sigma < 0.0 {
            return Err(Error::invalid("measurement_noise_sigma", "must be >= 0"));
        }
        if self.samples_per_round < BLOCK_LEN + 1 {
            return Err(Error::invalid(
                "samples_per_round",
                "need one register slot plus sixteen byte slots per round (>= 17)",
            ));
        }
        if let PulseShape::ExponentialDecay { tau } = self.pulse_shape {
            if !(tau.is_finite() && tau > 0.0) {
                return Err(Error::invalid("pulse_shape.tau", "must be finite and > 0"));
            }
        }
        Ok(())
    }

    pub fn sample_period(&self) -> f64 {
        self.round_period / self.samples_per_round as f64
    }

    pub fn samples_per_trace(&self) -> usize {
        ROUNDS * self.samples_per_round
    }

    /// Sample carrying round `round`'s register-write pulse.
    pub fn round_position(&self, round: usize) -> usize {
        round * self.samples_per_round
    }

    /// Sample carrying byte `byte`'s S-box pulse in round `round`.
    pub fn byte_position(&self, round: usize, byte: usize) -> usize {
        round * self.samples_per_round + 1 + byte
    }

    /// Full-scale first-round signature swing (all 128 S-box output bits).
    pub fn signature_swing(&self) -> f64 {
        self.hw_scale * 128.0
    }
}

/// A set of synthesized (or transformed) traces with their texts.
///
/// Samples are stored as 32-bit floats, trace-major — the same representation
/// the on-disk format uses, so round-trips are bit-exact. The key under test
/// travels with the set only for evaluation; attack operations never read it
/// for recovery.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub samples_per_trace: usize,
    /// Seconds between samples.
    pub sample_period: f64,
    pub plaintexts: Vec<[u8; BLOCK_LEN]>,
    pub ciphertexts: Vec<[u8; BLOCK_LEN]>,
    pub key: Option<[u8; BLOCK_LEN]>,
    samples: Vec<f32>,
}

impl TraceSet {
    pub fn new(samples_per_trace: usize, sample_period: f64, key: Option<[u8; BLOCK_LEN]>) -> Self {
        Self {
            samples_per_trace,
            sample_period,
            plaintexts: Vec::new(),
            ciphertexts: Vec::new(),
            key,
            samples: Vec::new(),
        }
    }

    /// Rebuild a set from raw blocks (file reader path). Checks block sizes.
    pub fn from_raw(
        samples_per_trace: usize,
        sample_period: f64,
        plaintexts: Vec<[u8; BLOCK_LEN]>,
        ciphertexts: Vec<[u8; BLOCK_LEN]>,
        key: Option<[u8; BLOCK_LEN]>,
        samples: Vec<f32>,
    ) -> Result<Self> {
        if ciphertexts.len() != plaintexts.len() {
            return Err(Error::invalid("ciphertexts", "count differs from plaintexts"));
        }
        if samples.len() != plaintexts.len() * samples_per_trace {
            return Err(Error::invalid(
                "samples",
                format!(
                    "expected {} values, got {}",
                    plaintexts.len() * samples_per_trace,
                    samples.len()
                ),
            ));
        }
        Ok(Self {
            samples_per_trace,
            sample_period,
            plaintexts,
            ciphertexts,
            key,
            samples,
        })
    }

    pub fn n_traces(&self) -> usize {
        self.plaintexts.len()
    }

    pub fn trace(&self, i: usize) -> &[f32] {
        &self.samples[i * self.samples_per_trace..(i + 1) * self.samples_per_trace]
    }

    pub fn trace_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.samples[i * self.samples_per_trace..(i + 1) * self.samples_per_trace]
    }

    /// Raw trace-major sample block.
    pub fn raw_samples(&self) -> &[f32] {
        &self.samples
    }

    pub(crate) fn raw_samples_mut(&mut self) -> &mut [f32] {
        &mut self.samples
    }

    pub fn push_trace(&mut self, pt: [u8; BLOCK_LEN], ct: [u8; BLOCK_LEN], trace: &[f32]) {
        assert_eq!(trace.len(), self.samples_per_trace, "trace length mismatch");
        self.plaintexts.push(pt);
        self.ciphertexts.push(ct);
        self.samples.extend_from_slice(trace);
    }

    /// Strip the key, producing the attacker-view variant.
    pub fn without_key(mut self) -> Self {
        self.key = None;
        self
    }

    /// Keep only the first `n` traces.
    pub fn truncate(&mut self, n: usize) {
        if n >= self.n_traces() {
            return;
        }
        self.plaintexts.truncate(n);
        self.ciphertexts.truncate(n);
        self.samples.truncate(n * self.samples_per_trace);
    }

    /// Check `ciphertexts[i] = encrypt(key, plaintexts[i])` for every trace.
    pub fn verify_ciphertexts(&self) -> Result<()> {
        let key = self.key.ok_or(Error::MissingKey)?;
        let aes = Aes128::new(&key);
        for (i, (pt, ct)) in self.plaintexts.iter().zip(&self.ciphertexts).enumerate() {
            let (expect, _) = aes.encrypt(pt);
            if expect != *ct {
                return Err(Error::invalid(
                    "ciphertexts",
                    format!("trace {i} does not encrypt to its ciphertext"),
                ));
            }
        }
        Ok(())
    }

    /// All sample values finite.
    pub fn verify_finite(&self) -> Result<()> {
        for (i, &s) in self.samples.iter().enumerate() {
            if !s.is_finite() {
                return Err(Error::invalid(
                    "samples",
                    format!("non-finite value at flat index {i}"),
                ));
            }
        }
        Ok(())
    }
}

/// Deposit one shaped pulse into the waveform.
fn deposit(samples: &mut [f64], position: usize, amplitude: f64, shape: PulseShape, dt: f64) {
    if amplitude == 0.0 {
        return;
    }
    match shape {
        PulseShape::Rectangular => samples[position] += amplitude,
        PulseShape::ExponentialDecay { tau } => {
            let decay = (-dt / tau).exp();
            let cutoff = amplitude * 1e-6;
            let mut a = amplitude;
            for s in &mut samples[position..] {
                if a < cutoff {
                    break;
                }
                *s += a;
                a *= decay;
            }
        }
    }
}

/// Noise-free load-current waveform for one encryption's activity.
fn activity_waveform(activity: &RoundActivity, params: &LeakageParams) -> Vec<f64> {
    let mut samples = vec![params.baseline_current; params.samples_per_trace()];
    let dt = params.sample_period();
    for r in 0..ROUNDS {
        let register_pulse = params.hw_scale * f64::from(activity.round_hamming_weight(r));
        deposit(
            &mut samples,
            params.round_position(r),
            register_pulse,
            params.pulse_shape,
            dt,
        );
        for b in 0..BLOCK_LEN {
            let byte_pulse =
                params.hw_scale * f64::from(crate::aes::hamming_weight(activity.round_sbox[r][b]));
            deposit(
                &mut samples,
                params.byte_position(r, b),
                byte_pulse,
                params.pulse_shape,
                dt,
            );
        }
    }
    samples
}

fn add_measurement_noise(samples: &mut [f64], sigma: f64, seed: u64) {
    if sigma == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    let mut rng = seeds::rng(seed);
    for s in samples {
        *s += normal.sample(&mut rng);
    }
}

/// Synthesize one sampled current waveform. Deterministic in `rng_seed`.
pub fn synthesize_trace(
    key: &[u8; BLOCK_LEN],
    plaintext: &[u8; BLOCK_LEN],
    params: &LeakageParams,
    rng_seed: u64,
) -> Result<Vec<f64>> {
    params.validate()?;
    let (_, activity) = Aes128::new(key).encrypt(plaintext);
    let mut samples = activity_waveform(&activity, params);
    add_measurement_noise(&mut samples, params.measurement_noise_sigma, rng_seed);
    Ok(samples)
}

fn quantize(samples: &[f64]) -> Vec<f32> {
    samples.iter().map(|&x| x as f32).collect()
}

/// Synthesize a trace set under one fixed key, plaintexts drawn uniformly.
///
/// Per-trace seeds derive from `master_seed` and the trace index, so the
/// result is bit-identical however the work is scheduled.
pub fn synthesize_set(
    key: &[u8; BLOCK_LEN],
    n_traces: usize,
    params: &LeakageParams,
    master_seed: u64,
) -> Result<TraceSet> {
    params.validate()?;
    if n_traces == 0 {
        return Err(Error::invalid("n_traces", "must be >= 1"));
    }
    let aes = Aes128::new(key);

    let synth_one = |i: usize| -> ([u8; BLOCK_LEN], [u8; BLOCK_LEN], Vec<f32>) {
        let pt: [u8; BLOCK_LEN] = seeds::derived_rng(master_seed, stream::PLAINTEXT, i as u64).random();
        let (ct, activity) = aes.encrypt(&pt);
        let mut samples = activity_waveform(&activity, params);
        add_measurement_noise(
            &mut samples,
            params.measurement_noise_sigma,
            seeds::derive(master_seed, stream::MEASUREMENT, i as u64),
        );
        (pt, ct, quantize(&samples))
    };

    #[cfg(feature = "parallel")]
    let rows: Vec<_> = (0..n_traces).into_par_iter().map(synth_one).collect();
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<_> = (0..n_traces).map(synth_one).collect();

    let mut set = TraceSet::new(params.samples_per_trace(), params.sample_period(), Some(*key));
    for (pt, ct, trace) in rows {
        set.push_trace(pt, ct, &trace);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aes::{encrypt, hamming_weight, sbox};

    const KEY: [u8; 16] = [
        0x00, 0x01, 0x02, 0x03, 0x04, 0x05, 0x06, 0x07, 0x08, 0x09, 0x0a, 0x0b, 0x0c, 0x0d, 0x0e,
        0x0f,
    ];

    fn noiseless() -> LeakageParams {
        LeakageParams {
            measurement_noise_sigma: 0.0,
            ..LeakageParams::default()
        }
    }

    /// Recompute the expected waveform by hand from the recorded activity,
    /// with its own shaping loops.
    fn expected_waveform(activity: &RoundActivity, p: &LeakageParams) -> Vec<f64> {
        let mut out = vec![p.baseline_current; p.samples_per_trace()];
        let mut pulses: Vec<(usize, f64)> = Vec::new();
        for r in 0..ROUNDS {
            let total: u32 = activity.round_sbox[r]
                .iter()
                .map(|&b| u32::from(hamming_weight(b)))
                .sum();
            pulses.push((r * p.samples_per_round, p.hw_scale * f64::from(total)));
            for b in 0..16 {
                pulses.push((
                    r * p.samples_per_round + 1 + b,
                    p.hw_scale * f64::from(hamming_weight(activity.round_sbox[r][b])),
                ));
            }
        }
        for (pos, amp) in pulses {
            if amp == 0.0 {
                continue;
            }
            match p.pulse_shape {
                PulseShape::Rectangular => out[pos] += amp,
                PulseShape::ExponentialDecay { tau } => {
                    for (k, slot) in out[pos..].iter_mut().enumerate() {
                        let a = amp * (-(k as f64) * p.sample_period() / tau).exp();
                        if a < amp * 1e-6 {
                            break;
                        }
                        *slot += a;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn zero_leakage_zero_noise_is_flat() {
        let p = LeakageParams {
            hw_scale: 0.0,
            measurement_noise_sigma: 0.0,
            ..LeakageParams::default()
        };
        let w = synthesize_trace(&KEY, &[0u8; 16], &p, 1).unwrap();
        assert!(w.iter().all(|&x| x == p.baseline_current));
    }

    #[test]
    fn round_one_position_carries_total_first_round_weight() {
        let p = noiseless();
        let pt = [0x31u8; 16];
        let w = synthesize_trace(&KEY, &pt, &p, 1).unwrap();
        // First-principles recompute: first-round SubBytes is sbox(pt ^ key).
        let total: u32 = (0..16)
            .map(|b| u32::from(hamming_weight(sbox(pt[b] ^ KEY[b]))))
            .sum();
        let expect = p.baseline_current + p.hw_scale * f64::from(total);
        assert_eq!(w[p.round_position(0)], expect);
    }

    #[test]
    fn byte_positions_carry_per_byte_weights() {
        let p = noiseless();
        let pt = [0xa7u8; 16];
        let w = synthesize_trace(&KEY, &pt, &p, 1).unwrap();
        for b in 0..16 {
            let expect =
                p.baseline_current + p.hw_scale * f64::from(hamming_weight(sbox(pt[b] ^ KEY[b])));
            assert_eq!(w[p.byte_position(0, b)], expect, "byte {b}");
        }
        // Idle tail of each round stays at the baseline.
        for r in 0..ROUNDS {
            for s in (p.byte_position(r, 15) + 1)..(r + 1) * p.samples_per_round {
                assert_eq!(w[s], p.baseline_current);
            }
        }
    }

    #[test]
    fn full_waveform_matches_activity_recompute_both_shapes() {
        let pt = [0x5au8; 16];
        let (_, activity) = encrypt(&KEY, &pt);
        for shape in [
            PulseShape::Rectangular,
            PulseShape::ExponentialDecay { tau: 1.5e-9 },
        ] {
            let p = LeakageParams {
                measurement_noise_sigma: 0.0,
                pulse_shape: shape,
                ..LeakageParams::default()
            };
            let got = synthesize_trace(&KEY, &pt, &p, 1).unwrap();
            let expect = expected_waveform(&activity, &p);
            for (i, (g, e)) in got.iter().zip(&expect).enumerate() {
                assert!((g - e).abs() < 1e-12, "shape {shape:?} sample {i}: {g} vs {e}");
            }
        }
    }

    #[test]
    fn same_seed_same_waveform() {
        let p = LeakageParams::default();
        let a = synthesize_trace(&KEY, &[1u8; 16], &p, 99).unwrap();
        let b = synthesize_trace(&KEY, &[1u8; 16], &p, 99).unwrap();
        assert_eq!(a, b);
        let c = synthesize_trace(&KEY, &[1u8; 16], &p, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn set_is_bit_reproducible() {
        let p = LeakageParams::default();
        let a = synthesize_set(&KEY, 64, &p, 42).unwrap();
        let b = synthesize_set(&KEY, 64, &p, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let p = LeakageParams::default();
        assert!(synthesize_set(&KEY, 0, &p, 1).is_err());
        let bad = LeakageParams {
            hw_scale: f64::NAN,
            ..LeakageParams::default()
        };
        assert!(synthesize_trace(&KEY, &[0u8; 16], &bad, 1).is_err());
        let bad = LeakageParams {
            samples_per_round: 16,
            ..LeakageParams::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn long_run_mean_stays_near_baseline() {
        let p = LeakageParams::default();
        let set = synthesize_set(&KEY, 1000, &p, 7).unwrap();
        let total: f64 = set.raw_samples().iter().map(|&x| f64::from(x)).sum();
        let mean = total / set.raw_samples().len() as f64;
        let rel = (mean - p.baseline_current).abs() / p.baseline_current;
        assert!(rel < 0.05, "mean {mean:e} deviates {rel:.3} from baseline");
    }

    #[test]
    fn set_invariants_hold() {
        let p = LeakageParams::default();
        let set = synthesize_set(&KEY, 50, &p, 3).unwrap();
        assert_eq!(set.n_traces(), 50);
        set.verify_ciphertexts().unwrap();
        set.verify_finite().unwrap();
    }

    #[test]
    fn noiseless_variance_at_round_position_matches_activity_variance() {
        let p = noiseless();
        let set = synthesize_set(&KEY, 400, &p, 9).unwrap();
        let pos = p.round_position(0);
        let vals: Vec<f64> = (0..set.n_traces())
            .map(|i| f64::from(set.trace(i)[pos]))
            .collect();
        // Brute-force the activity sums for the same plaintexts.
        let sums: Vec<f64> = set
            .plaintexts
            .iter()
            .map(|pt| {
                f64::from(
                    (0..16)
                        .map(|b| u32::from(hamming_weight(sbox(pt[b] ^ KEY[b]))))
                        .sum::<u32>(),
                )
            })
            .collect();
        let var = |xs: &[f64]| {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
        };
        let got = var(&vals);
        let expect = p.hw_scale * p.hw_scale * var(&sums);
        // f32 quantization of the stored samples costs a few digits.
        assert!(
            ((got - expect) / expect).abs() < 1e-4,
            "var {got:e} vs {expect:e}"
        );
    }

    #[test]
    fn correct_key_correlation_approaches_one_without_noise() {
        let p = noiseless();
        let set = synthesize_set(&KEY, 300, &p, 5).unwrap();
        let pos = p.byte_position(0, 0);
        let t: Vec<f64> = (0..set.n_traces())
            .map(|i| f64::from(set.trace(i)[pos]))
            .collect();
        let h: Vec<f64> = set
            .plaintexts
            .iter()
            .map(|pt| f64::from(crate::aes::sbox_hypothesis(pt[0], KEY[0])))
            .collect();
        let rho = crate::cpa::pearson(&t, &h).unwrap();
        assert!(rho > 0.999_99, "rho = {rho}");
    }

    #[test]
    fn correct_key_correlation_near_point_nine_at_default_noise() {
        let p = LeakageParams::default();
        let set = synthesize_set(&KEY, 4000, &p, 6).unwrap();
        let pos = p.byte_position(0, 0);
        let t: Vec<f64> = (0..set.n_traces())
            .map(|i| f64::from(set.trace(i)[pos]))
            .collect();
        let h: Vec<f64> = set
            .plaintexts
            .iter()
            .map(|pt| f64::from(crate::aes::sbox_hypothesis(pt[0], KEY[0])))
            .collect();
        let rho = crate::cpa::pearson(&t, &h).unwrap();
        assert!((0.85..0.95).contains(&rho), "rho = {rho}");
    }
}
