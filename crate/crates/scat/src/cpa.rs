//! Correlation power analysis: per-sample Pearson correlation for all 256
//! guesses of a key byte, key ranking, and traces-to-disclosure curves.
//!
//! The accumulator keeps Welford-style centered moments and co-moments, so a
//! single pass over the traces is numerically stable and partial accumulators
//! merge associatively. The per-trace co-moment update is an outer product
//! over (guess, sample) cells; cells are independent, so partitioning the
//! guess rows across workers changes nothing but wall-clock time — parallel
//! and sequential builds produce bit-identical results.

use crate::aes::sbox_hypothesis;
use crate::error::{Error, Result};
use crate::leakage::TraceSet;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub const GUESSES: usize = 256;

/// Traces buffered between co-moment passes; keeps the hot loop cache-friendly
/// without changing the arithmetic order of any cell.
const BLOCK: usize = 64;

/// Pearson correlation plus a degeneracy flag.
///
/// A zero-variance input (constant hypothesis columns occur for tiny trace
/// counts, constant samples for noiseless baselines) yields `rho = 0.0` with
/// `degenerate = true` instead of an error, so sweeps never abort.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub rho: f64,
    pub degenerate: bool,
}

/// Two-pass Pearson correlation coefficient.
pub fn pearson_full(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::invalid(
            "pearson",
            format!("length mismatch: {} vs {}", x.len(), y.len()),
        ));
    }
    if x.len() < 2 {
        return Err(Error::invalid("pearson", "need at least 2 points"));
    }
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mean_x;
        let dy = yi - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Ok(Correlation {
            rho: 0.0,
            degenerate: true,
        });
    }
    Ok(Correlation {
        rho: cov / (var_x.sqrt() * var_y.sqrt()),
        degenerate: false,
    })
}

/// Pearson coefficient; degenerate inputs report 0.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson_full(x, y).map(|c| c.rho)
}

/// 256 x n matrix of hypothesis Hamming weights for one key byte.
#[derive(Debug, Clone)]
pub struct HypothesisMatrix {
    n: usize,
    data: Vec<u8>, // row-major by guess
}

impl HypothesisMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, guess: u8) -> &[u8] {
        let g = guess as usize;
        &self.data[g * self.n..(g + 1) * self.n]
    }
}

/// Entry (g, i) = `hw(sbox(plaintexts[i][byte_index] ^ g))`.
pub fn hypothesis_matrix(plaintexts: &[[u8; 16]], byte_index: usize) -> Result<HypothesisMatrix> {
    check_byte_index(byte_index)?;
    let n = plaintexts.len();
    let mut data = vec![0u8; GUESSES * n];
    for g in 0..GUESSES {
        let row = &mut data[g * n..(g + 1) * n];
        for (cell, pt) in row.iter_mut().zip(plaintexts) {
            *cell = sbox_hypothesis(pt[byte_index], g as u8);
        }
    }
    Ok(HypothesisMatrix { n, data })
}

fn check_byte_index(byte_index: usize) -> Result<()> {
    if byte_index >= 16 {
        return Err(Error::invalid("byte_index", "must be in 0..16"));
    }
    Ok(())
}

/// Streaming correlation state for one key byte: centered first and second
/// moments of every sample and every guess, plus the 256 x samples co-moment
/// matrix. One pass over the data, constant memory.
#[derive(Debug, Clone)]
pub struct CpaAccumulator {
    n: u64,
    samples: usize,
    mean_t: Vec<f64>,
    m2_t: Vec<f64>,
    mean_h: Vec<f64>,
    m2_h: Vec<f64>,
    comoment: Vec<f64>, // GUESSES x samples, row-major by guess
}

impl CpaAccumulator {
    pub fn new(samples: usize) -> Self {
        Self {
            n: 0,
            samples,
            mean_t: vec![0.0; samples],
            m2_t: vec![0.0; samples],
            mean_h: vec![0.0; GUESSES],
            m2_h: vec![0.0; GUESSES],
            comoment: vec![0.0; GUESSES * samples],
        }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Fold in one trace and its 256 hypothesis values.
    pub fn update(&mut self, trace: &[f64], hypotheses: &[u8; GUESSES]) {
        assert_eq!(trace.len(), self.samples, "trace length mismatch");
        let mut dh = vec![0.0; GUESSES];
        let mut dt = vec![0.0; self.samples];
        self.push_scalars(trace, hypotheses, &mut dh, &mut dt);
        // Single-trace co-moment pass; same per-cell order as the blocked path.
        for (g, row) in self.comoment.chunks_mut(self.samples).enumerate() {
            let dhg = dh[g];
            for (c, &d) in row.iter_mut().zip(&dt) {
                *c += dhg * d;
            }
        }
    }

    /// Welford step for the marginal moments; writes the deltas the co-moment
    /// update needs (`dh` pre-update, `dt` post-update).
    fn push_scalars(
        &mut self,
        trace: &[f64],
        hypotheses: &[u8; GUESSES],
        dh: &mut [f64],
        dt: &mut [f64],
    ) {
        self.n += 1;
        let n = self.n as f64;
        for g in 0..GUESSES {
            let h = f64::from(hypotheses[g]);
            let d = h - self.mean_h[g];
            dh[g] = d;
            self.mean_h[g] += d / n;
            self.m2_h[g] += d * (h - self.mean_h[g]);
        }
        for (s, &t) in trace.iter().enumerate() {
            let d = t - self.mean_t[s];
            self.mean_t[s] += d / n;
            let dn = t - self.mean_t[s];
            dt[s] = dn;
            self.m2_t[s] += d * dn;
        }
    }

    /// Co-moment outer-product pass for a block of buffered traces.
    ///
    /// `dh_block` is `count` rows of 256 deltas, `dt_block` is `count` rows of
    /// `samples` deltas. Every (guess, sample) cell receives its additions in
    /// trace order, so the result is bit-identical to repeated `update` calls
    /// no matter how rows are partitioned across workers.
    fn apply_block(&mut self, dh_block: &[f64], dt_block: &[f64], count: usize) {
        let samples = self.samples;
        let body = |(g, row): (usize, &mut [f64])| {
            for j in 0..count {
                let dhg = dh_block[j * GUESSES + g];
                let dt = &dt_block[j * samples..j * samples + samples];
                for (c, &d) in row.iter_mut().zip(dt) {
                    *c += dhg * d;
                }
            }
        };
        #[cfg(feature = "parallel")]
        self.comoment
            .par_chunks_mut(samples)
            .enumerate()
            .with_min_len(8)
            .for_each(body);
        #[cfg(not(feature = "parallel"))]
        self.comoment.chunks_mut(samples).enumerate().for_each(body);
    }

    /// Merge a partial accumulator built over a disjoint set of traces.
    ///
    /// The combination is exact algebra on centered moments; merge order
    /// perturbs results only at floating-point rounding level.
    pub fn merge(&mut self, other: &Self) {
        assert_eq!(self.samples, other.samples, "sample count mismatch");
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let na = self.n as f64;
        let nb = other.n as f64;
        let n = na + nb;
        let ratio = na * nb / n;

        let mut delta_t = vec![0.0; self.samples];
        for (s, slot) in delta_t.iter_mut().enumerate() {
            let d = other.mean_t[s] - self.mean_t[s];
            *slot = d;
            self.m2_t[s] += other.m2_t[s] + d * d * ratio;
            self.mean_t[s] += d * nb / n;
        }
        let mut delta_h = vec![0.0; GUESSES];
        for (g, slot) in delta_h.iter_mut().enumerate() {
            let d = other.mean_h[g] - self.mean_h[g];
            *slot = d;
            self.m2_h[g] += other.m2_h[g] + d * d * ratio;
            self.mean_h[g] += d * nb / n;
        }
        for (g, row) in self.comoment.chunks_mut(self.samples).enumerate() {
            let other_row = &other.comoment[g * self.samples..(g + 1) * self.samples];
            let dh = delta_h[g] * ratio;
            for ((c, &oc), &dt) in row.iter_mut().zip(other_row).zip(&delta_t) {
                *c += oc + dh * dt;
            }
        }
        self.n += other.n;
    }

    /// Full 256 x samples correlation matrix plus the degenerate-cell count.
    pub fn correlations(&self) -> (Vec<f64>, usize) {
        let mut rho = vec![0.0; GUESSES * self.samples];
        let mut degenerate = 0usize;
        for g in 0..GUESSES {
            let mh = self.m2_h[g];
            for s in 0..self.samples {
                let mt = self.m2_t[s];
                if mh == 0.0 || mt == 0.0 {
                    degenerate += 1;
                } else {
                    rho[g * self.samples + s] =
                        self.comoment[g * self.samples + s] / (mh.sqrt() * mt.sqrt());
                }
            }
        }
        (rho, degenerate)
    }

    /// Peak |rho| and its sample position for every guess.
    pub fn peaks(&self) -> (Vec<f64>, Vec<usize>, usize) {
        let (rho, degenerate) = self.correlations();
        let mut peak = vec![0.0; GUESSES];
        let mut at = vec![0usize; GUESSES];
        for g in 0..GUESSES {
            let row = &rho[g * self.samples..(g + 1) * self.samples];
            let (mut best, mut best_s) = (0.0f64, 0usize);
            for (s, &r) in row.iter().enumerate() {
                if r.abs() > best {
                    best = r.abs();
                    best_s = s;
                }
            }
            peak[g] = best;
            at[g] = best_s;
        }
        (peak, at, degenerate)
    }
}

/// Accumulate traces `range` of `set` into `acc`, block-buffered.
fn accumulate_range(
    acc: &mut CpaAccumulator,
    set: &TraceSet,
    byte_index: usize,
    range: std::ops::Range<usize>,
) {
    let samples = acc.samples;
    let mut dh_block = vec![0.0; BLOCK * GUESSES];
    let mut dt_block = vec![0.0; BLOCK * samples];
    let mut trace_buf = vec![0.0f64; samples];
    let mut hyps = [0u8; GUESSES];

    let mut i = range.start;
    while i < range.end {
        let count = BLOCK.min(range.end - i);
        for j in 0..count {
            for (d, &x) in trace_buf.iter_mut().zip(set.trace(i + j)) {
                *d = f64::from(x);
            }
            let pt = set.plaintexts[i + j][byte_index];
            for (g, h) in hyps.iter_mut().enumerate() {
                *h = sbox_hypothesis(pt, g as u8);
            }
            acc.push_scalars(
                &trace_buf,
                &hyps,
                &mut dh_block[j * GUESSES..(j + 1) * GUESSES],
                &mut dt_block[j * samples..(j + 1) * samples],
            );
        }
        acc.apply_block(&dh_block, &dt_block, count);
        i += count;
    }
}

/// Outcome of a CPA attack on one key byte.
#[derive(Debug, Clone)]
pub struct CpaReport {
    pub byte_index: usize,
    pub n_traces: usize,
    pub samples_per_trace: usize,
    /// 256 x samples_per_trace, row-major by guess.
    pub correlations: Vec<f64>,
    /// Sample index of each guess's peak |rho|.
    pub best_sample: Vec<usize>,
    /// Peak |rho| per guess.
    pub peak_abs: Vec<f64>,
    /// Guesses ordered by descending peak |rho|; ties break toward the lower
    /// guess value and set `tie`.
    pub ranking: Vec<u8>,
    pub recovered_byte: u8,
    pub tie: bool,
    pub degenerate_cells: usize,
    /// peak(correct) - max peak(wrong); present only when the trace set
    /// carries the key under test.
    pub margin: Option<f64>,
}

impl CpaReport {
    pub fn rho(&self, guess: u8, sample: usize) -> f64 {
        self.correlations[guess as usize * self.samples_per_trace + sample]
    }

    fn from_accumulator(acc: &CpaAccumulator, byte_index: usize, true_byte: Option<u8>) -> Self {
        let (correlations, degenerate_cells) = acc.correlations();
        let samples = acc.samples;
        let mut peak_abs = vec![0.0; GUESSES];
        let mut best_sample = vec![0usize; GUESSES];
        for g in 0..GUESSES {
            let row = &correlations[g * samples..(g + 1) * samples];
            let (mut best, mut best_s) = (0.0f64, 0usize);
            for (s, &r) in row.iter().enumerate() {
                if r.abs() > best {
                    best = r.abs();
                    best_s = s;
                }
            }
            peak_abs[g] = best;
            best_sample[g] = best_s;
        }
        let mut ranking: Vec<u8> = (0..GUESSES as u16).map(|g| g as u8).collect();
        ranking.sort_by(|&a, &b| {
            peak_abs[b as usize]
                .partial_cmp(&peak_abs[a as usize])
                .expect("peaks are finite")
                .then(a.cmp(&b))
        });
        let recovered_byte = ranking[0];
        let tie = peak_abs[ranking[0] as usize] == peak_abs[ranking[1] as usize];
        let margin = true_byte.map(|t| {
            let wrong_max = peak_abs
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != t as usize)
                .map(|(_, &p)| p)
                .fold(0.0f64, f64::max);
            peak_abs[t as usize] - wrong_max
        });
        Self {
            byte_index,
            n_traces: acc.n as usize,
            samples_per_trace: samples,
            correlations,
            best_sample,
            peak_abs,
            ranking,
            recovered_byte,
            tie,
            degenerate_cells,
            margin,
        }
    }
}

/// Mount a CPA attack on one key byte of `set`.
///
/// Recovery uses only plaintexts and samples; the margin field is filled in
/// when the set carries the key under test, purely for evaluation.
pub fn attack(set: &TraceSet, byte_index: usize) -> Result<CpaReport> {
    check_byte_index(byte_index)?;
    if set.n_traces() < 2 {
        return Err(Error::invalid("traces", "need at least 2 traces"));
    }
    let mut acc = CpaAccumulator::new(set.samples_per_trace);
    accumulate_range(&mut acc, set, byte_index, 0..set.n_traces());
    Ok(CpaReport::from_accumulator(
        &acc,
        byte_index,
        set.key.map(|k| k[byte_index]),
    ))
}

/// Correlation evolution against trace count, and the disclosure point.
#[derive(Debug, Clone)]
pub struct MtdCurve {
    pub byte_index: usize,
    pub true_byte: u8,
    pub checkpoint_step: usize,
    pub budget: usize,
    /// Trace counts at which peaks were recorded (multiples of the step, plus
    /// the final count).
    pub checkpoints: Vec<usize>,
    /// Per checkpoint: peak |rho| for each of the 256 guesses.
    pub peaks: Vec<Vec<f64>>,
    /// Smallest checkpoint from which the correct key's peak strictly exceeds
    /// every wrong guess's peak at that and every later checkpoint; `None`
    /// means not disclosed within the budget.
    pub mtd: Option<usize>,
}

impl MtdCurve {
    pub fn disclosed(&self) -> bool {
        self.mtd.is_some()
    }

    /// Correct-key peak |rho| at the final checkpoint.
    pub fn final_correct_peak(&self) -> f64 {
        self.peaks
            .last()
            .map(|p| p[self.true_byte as usize])
            .unwrap_or(0.0)
    }
}

/// Stability rule: first checkpoint index from which the true key leads at
/// every remaining checkpoint.
fn disclosure_index(peaks: &[Vec<f64>], true_byte: u8) -> Option<usize> {
    let mut first_stable = None;
    for (j, peak) in peaks.iter().enumerate().rev() {
        let correct = peak[true_byte as usize];
        let wrong_max = peak
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != true_byte as usize)
            .map(|(_, &p)| p)
            .fold(0.0f64, f64::max);
        if correct > wrong_max {
            first_stable = Some(j);
        } else {
            break;
        }
    }
    first_stable
}

/// Trace-by-trace correlation evolution with per-guess peaks recorded every
/// `checkpoint_step` traces. Requires the key-present trace set.
pub fn mtd_analysis(set: &TraceSet, byte_index: usize, checkpoint_step: usize) -> Result<MtdCurve> {
    check_byte_index(byte_index)?;
    if checkpoint_step == 0 {
        return Err(Error::invalid("checkpoint_step", "must be >= 1"));
    }
    if set.n_traces() < 2 {
        return Err(Error::invalid("traces", "need at least 2 traces"));
    }
    let key = set.key.ok_or(Error::MissingKey)?;
    let true_byte = key[byte_index];
    let n = set.n_traces();

    let mut acc = CpaAccumulator::new(set.samples_per_trace);
    let mut checkpoints = Vec::new();
    let mut peaks = Vec::new();
    let mut done = 0usize;
    while done < n {
        let next = (done + checkpoint_step).min(n);
        accumulate_range(&mut acc, set, byte_index, done..next);
        done = next;
        checkpoints.push(done);
        peaks.push(acc.peaks().0);
    }

    let mtd = disclosure_index(&peaks, true_byte).map(|j| checkpoints[j]);
    Ok(MtdCurve {
        byte_index,
        true_byte,
        checkpoint_step,
        budget: n,
        checkpoints,
        peaks,
        mtd,
    })
}
