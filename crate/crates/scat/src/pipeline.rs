//! Scenario pipelines: synthesis, protection transforms, and design-space
//! sweeps. Everything here is deterministic in the config seeds; per-trace
//! work is parallel when the `parallel` feature is on.

use rand_distr::{Distribution, Normal};

use crate::config::{ExperimentConfig, Scenario};
use crate::cpa::{self, CpaReport, MtdCurve};
use crate::error::{Error, Result};
use crate::leakage::{self, LeakageParams, TraceSet};
use crate::noise::{self, NoiseParams};
use crate::regulator::{self, OverheadReport, RegulatorParams};
use crate::seeds::{self, stream};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Synthesize a trace set for the configured scenario, end to end.
///
/// Protected scenarios synthesize the load current noise-free, push it through
/// the regulator, then apply injected noise (when configured) and measurement
/// noise on the supply side — the attacker's scope does not move inside the
/// protection boundary.
pub fn run_synth(cfg: &ExperimentConfig) -> Result<TraceSet> {
    cfg.validate()?;
    match cfg.scenario {
        Scenario::Unprotected => {
            leakage::synthesize_set(&cfg.key, cfg.n_traces, &cfg.leakage, cfg.seeds.master)
        }
        Scenario::NoiseOnly => {
            let mut set =
                leakage::synthesize_set(&cfg.key, cfg.n_traces, &cfg.leakage, cfg.seeds.master)?;
            add_injected_noise(&mut set, cfg.noise.as_ref().expect("validated"), cfg.seeds.noise)?;
            Ok(set)
        }
        Scenario::AsAes | Scenario::AsAesPlusNoise => {
            let clean = LeakageParams {
                measurement_noise_sigma: 0.0,
                ..cfg.leakage.clone()
            };
            let set = leakage::synthesize_set(&cfg.key, cfg.n_traces, &clean, cfg.seeds.master)?;
            Ok(protect(&set, cfg.scenario, cfg)?.set)
        }
    }
}

/// Per-trace regulation diagnostics from a protection transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegulationSummary {
    pub trace: usize,
    pub droop_max: f64,
    pub charge_residual_fraction: f64,
    pub smc_events: usize,
    pub v_reg_min: f64,
    pub v_reg_max: f64,
    pub i_supply_min: f64,
    pub i_supply_max: f64,
}

/// A protected trace set plus the regulation diagnostics that produced it
/// (empty for the noise-only transform, which never touches the regulator).
#[derive(Debug, Clone)]
pub struct Protected {
    pub set: TraceSet,
    pub regulation: Vec<RegulationSummary>,
}

/// Transform an unprotected trace set into a protected one.
///
/// Sample data is reinterpreted as the load current; plaintexts, ciphertexts,
/// and the key block are preserved. For the regulated scenarios the input
/// should be synthesized with `measurement_noise_sigma = 0`; scope noise is
/// added after the supply transformation at the sigma configured in
/// `cfg.leakage`.
pub fn protect(set: &TraceSet, scenario: Scenario, cfg: &ExperimentConfig) -> Result<Protected> {
    match scenario {
        Scenario::Unprotected => Err(Error::invalid(
            "scenario",
            "protect needs a protected scenario (noise-only, as-aes, as-aes-plus-noise)",
        )),
        Scenario::NoiseOnly => {
            let noise = cfg
                .noise
                .as_ref()
                .ok_or_else(|| Error::Config("noise-only protection needs a [noise] block".into()))?;
            noise.validate()?;
            let mut out = set.clone();
            add_injected_noise(&mut out, noise, cfg.seeds.noise)?;
            Ok(Protected {
                set: out,
                regulation: Vec::new(),
            })
        }
        Scenario::AsAes | Scenario::AsAesPlusNoise => {
            let reg = cfg.regulator.as_ref().ok_or_else(|| {
                Error::Config("as-aes protection needs a [regulator] block".into())
            })?;
            let (mut out, regulation) = regulate_set(set, reg)?;
            if scenario == Scenario::AsAesPlusNoise {
                let noise = cfg.noise.as_ref().ok_or_else(|| {
                    Error::Config("as-aes-plus-noise protection needs a [noise] block".into())
                })?;
                noise.validate()?;
                add_injected_noise(&mut out, noise, cfg.seeds.noise)?;
            }
            add_measurement_noise(
                &mut out,
                cfg.leakage.measurement_noise_sigma,
                cfg.seeds.measurement,
            );
            Ok(Protected {
                set: out,
                regulation,
            })
        }
    }
}

/// Push every trace through the attenuation stage, replacing samples with the
/// observable supply current.
///
/// The bleed bias is re-derived from the set-wide average load current
/// (`i_cs_nominal - mean(i_aes)`), which is the equilibrium the slow loop
/// would have converged to.
pub fn regulate_set(
    set: &TraceSet,
    params: &RegulatorParams,
) -> Result<(TraceSet, Vec<RegulationSummary>)> {
    params.validate()?;
    let dt = set.sample_period;
    if dt > params.max_dt() {
        return Err(Error::invalid(
            "sample_period",
            format!(
                "trace sample period {dt:.3e} s exceeds the regulator stability bound {:.3e} s",
                params.max_dt()
            ),
        ));
    }
    let total: f64 = set.raw_samples().iter().map(|&x| f64::from(x)).sum();
    let i_aes_avg = total / set.raw_samples().len() as f64;
    let bias = params.i_cs_nominal - i_aes_avg;
    if bias < 0.0 {
        return Err(Error::NegativeBleed {
            i_cs: params.i_cs_nominal,
            i_aes_avg,
        });
    }
    let eff = RegulatorParams {
        i_bleed_bias: bias,
        ..params.clone()
    };

    let mut out = set.clone();
    let s = set.samples_per_trace;
    let min_max = |xs: &[f64]| {
        xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
    };
    let transform = |(i, chunk): (usize, &mut [f32])| -> Result<RegulationSummary> {
        let i_aes: Vec<f64> = set.trace(i).iter().map(|&x| f64::from(x)).collect();
        let sim = regulator::simulate(&eff, &i_aes, dt)?;
        for (dst, &src) in chunk.iter_mut().zip(&sim.i_supply) {
            *dst = src as f32;
        }
        let (v_min, v_max) = min_max(&sim.v_reg);
        let (s_min, s_max) = min_max(&sim.i_supply);
        Ok(RegulationSummary {
            trace: i,
            droop_max: sim.droop_max,
            charge_residual_fraction: sim.charge_residual_fraction(),
            smc_events: sim.smc_events.len(),
            v_reg_min: v_min,
            v_reg_max: v_max,
            i_supply_min: s_min,
            i_supply_max: s_max,
        })
    };

    #[cfg(feature = "parallel")]
    let summaries: Result<Vec<RegulationSummary>> = out
        .raw_samples_mut()
        .par_chunks_mut(s)
        .enumerate()
        .map(transform)
        .collect();
    #[cfg(not(feature = "parallel"))]
    let summaries: Result<Vec<RegulationSummary>> = out
        .raw_samples_mut()
        .chunks_mut(s)
        .enumerate()
        .map(transform)
        .collect();
    Ok((out, summaries?))
}

/// Add an independent injected-noise waveform to every trace; per-trace LFSR
/// seeds derive from `noise_seed` and the trace index.
pub fn add_injected_noise(set: &mut TraceSet, params: &NoiseParams, noise_seed: u64) -> Result<()> {
    params.validate()?;
    let dt = set.sample_period;
    if dt > params.update_period {
        return Err(Error::invalid(
            "update_period",
            "trace sample period exceeds the noise DAC update period",
        ));
    }
    let s = set.samples_per_trace;
    let apply = |(i, chunk): (usize, &mut [f32])| {
        let per_trace = params.with_seed(seeds::derive(noise_seed, stream::INJECTED, i as u64));
        let wave = noise::noise_samples(&per_trace, s, dt);
        for (dst, add) in chunk.iter_mut().zip(wave) {
            *dst = (f64::from(*dst) + add) as f32;
        }
    };
    #[cfg(feature = "parallel")]
    set.raw_samples_mut().par_chunks_mut(s).enumerate().for_each(apply);
    #[cfg(not(feature = "parallel"))]
    set.raw_samples_mut().chunks_mut(s).enumerate().for_each(apply);
    Ok(())
}

/// Add Gaussian measurement noise to every trace (scope side).
pub fn add_measurement_noise(set: &mut TraceSet, sigma: f64, seed: u64) {
    if sigma == 0.0 {
        return;
    }
    let s = set.samples_per_trace;
    let apply = |(i, chunk): (usize, &mut [f32])| {
        let normal = Normal::new(0.0, sigma).expect("sigma validated upstream");
        let mut rng = seeds::derived_rng(seed, stream::MEASUREMENT, i as u64);
        for dst in chunk.iter_mut() {
            *dst = (f64::from(*dst) + normal.sample(&mut rng)) as f32;
        }
    };
    #[cfg(feature = "parallel")]
    set.raw_samples_mut().par_chunks_mut(s).enumerate().for_each(apply);
    #[cfg(not(feature = "parallel"))]
    set.raw_samples_mut().chunks_mut(s).enumerate().for_each(apply);
}

/// CPA attack on every key byte.
pub fn attack_all_bytes(set: &TraceSet) -> Result<Vec<CpaReport>> {
    (0..16).map(|b| cpa::attack(set, b)).collect()
}

/// Sweepable design parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    /// Current-source setting, amps. Also re-biases the bleed implicitly via
    /// the set-average recomputation in `regulate_set`.
    ICsNominal,
    /// Bleed sink capacity, amps. The sweep explores sizing, not a fixed
    /// operating point: the bias re-centers to half the capacity and the
    /// source setting moves to fund it (i_cs = average load + capacity/2),
    /// so the overhead column tracks the sizing choice.
    BleedMax,
    /// Load capacitance, farads.
    CLoad,
    /// Current-source output resistance, ohms (sets g_ds = 1/r_ds).
    RDs,
    /// Supply rail, volts.
    VDd,
    /// Injected-noise DAC full scale, amps.
    NoiseFullScale,
    /// Scope noise sigma, amps.
    MeasurementNoiseSigma,
    /// Leakage scale, amps per Hamming-weight unit.
    HwScale,
}

impl SweepParam {
    pub const NAMES: [(&'static str, SweepParam); 8] = [
        ("i_cs", SweepParam::ICsNominal),
        ("bleed_max", SweepParam::BleedMax),
        ("c_load", SweepParam::CLoad),
        ("r_ds", SweepParam::RDs),
        ("v_dd", SweepParam::VDd),
        ("noise_full_scale", SweepParam::NoiseFullScale),
        ("measurement_noise_sigma", SweepParam::MeasurementNoiseSigma),
        ("hw_scale", SweepParam::HwScale),
    ];

    pub fn name(self) -> &'static str {
        Self::NAMES
            .iter()
            .find(|(_, p)| *p == self)
            .map(|(n, _)| *n)
            .expect("every param is named")
    }

    fn needs_regulator(self) -> bool {
        matches!(
            self,
            SweepParam::ICsNominal
                | SweepParam::BleedMax
                | SweepParam::CLoad
                | SweepParam::RDs
                | SweepParam::VDd
        )
    }

    /// Apply the value onto a copy of the config.
    ///
    /// A parameter that the configured scenario never exercises is rejected:
    /// sweeping it would synthesize identical experiments per point.
    pub fn apply(self, cfg: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut out = cfg.clone();
        if self.needs_regulator() {
            if out.regulator.is_none() {
                return Err(Error::Config(format!(
                    "sweep over `{}` needs a [regulator] block",
                    self.name()
                )));
            }
            if !out.scenario.needs_regulator() {
                return Err(Error::Config(format!(
                    "sweep over `{}` has no effect under scenario `{}`; use as-aes or as-aes-plus-noise",
                    self.name(),
                    out.scenario
                )));
            }
        }
        if self == SweepParam::NoiseFullScale && !out.scenario.needs_noise() {
            return Err(Error::Config(format!(
                "sweep over `noise_full_scale` has no effect under scenario `{}`; use noise-only or as-aes-plus-noise",
                out.scenario
            )));
        }
        match self {
            SweepParam::ICsNominal => out.regulator.as_mut().unwrap().i_cs_nominal = value,
            SweepParam::BleedMax => {
                let baseline = out.leakage.baseline_current;
                let reg = out.regulator.as_mut().unwrap();
                reg.bleed_max = value;
                reg.i_bleed_bias = value / 2.0;
                reg.i_cs_nominal = baseline + value / 2.0;
            }
            SweepParam::CLoad => out.regulator.as_mut().unwrap().c_load = value,
            SweepParam::RDs => {
                if value <= 0.0 {
                    return Err(Error::invalid("r_ds", "must be > 0"));
                }
                out.regulator.as_mut().unwrap().g_ds = 1.0 / value;
            }
            SweepParam::VDd => out.regulator.as_mut().unwrap().v_dd = value,
            SweepParam::NoiseFullScale => {
                match out.noise.as_mut() {
                    Some(n) => n.full_scale = value,
                    None => {
                        return Err(Error::Config(
                            "sweep over `noise_full_scale` needs a [noise] block".into(),
                        ))
                    }
                }
            }
            SweepParam::MeasurementNoiseSigma => out.leakage.measurement_noise_sigma = value,
            SweepParam::HwScale => out.leakage.hw_scale = value,
        }
        Ok(out)
    }
}

impl std::str::FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::NAMES
            .iter()
            .find(|(n, _)| *n == s)
            .map(|(_, p)| *p)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::NAMES.iter().map(|(n, _)| *n).collect();
                format!("unknown sweep parameter `{s}` (expected one of: {})", names.join(", "))
            })
    }
}

/// One sweep point's summary.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: f64,
    /// Correct-key peak |rho| at the full trace budget.
    pub correct_peak: f64,
    pub recovered_byte: u8,
    pub true_byte: u8,
    /// None when MTD analysis was not requested.
    pub mtd_run: bool,
    /// Disclosure point; None with `mtd_run` set means not disclosed.
    pub mtd: Option<usize>,
    /// Overhead figures when the point has a regulator and injected noise.
    pub overhead: Option<OverheadReport>,
    pub report: CpaReport,
}

/// Run the configured scenario across a grid of one named parameter.
///
/// Points are independent experiments (fresh synthesis under the same seeds)
/// and run concurrently; results come back in grid order.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    param: SweepParam,
    grid: &[f64],
    byte_index: usize,
    with_mtd: bool,
) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(Error::invalid("grid", "sweep grid is empty"));
    }
    let run_point = |&value: &f64| -> Result<SweepPoint> {
        let point_cfg = param.apply(cfg, value)?;
        point_cfg.validate()?;
        let set = run_synth(&point_cfg)?;
        let report = cpa::attack(&set, byte_index)?;
        let true_byte = point_cfg.key[byte_index];
        let mtd = if with_mtd {
            cpa::mtd_analysis(&set, byte_index, 100)?.mtd
        } else {
            None
        };
        let overhead = match (&point_cfg.regulator, &point_cfg.noise) {
            (Some(reg), Some(noise))
                if point_cfg.scenario.needs_regulator() && noise.full_scale > 0.0 =>
            {
                regulator::overhead_report(reg, noise.full_scale, point_cfg.leakage.baseline_current)
                    .ok()
            }
            _ => None,
        };
        Ok(SweepPoint {
            value,
            correct_peak: report.peak_abs[true_byte as usize],
            recovered_byte: report.recovered_byte,
            true_byte,
            mtd_run: with_mtd,
            mtd,
            overhead,
            report,
        })
    };

    #[cfg(feature = "parallel")]
    let points: Result<Vec<SweepPoint>> = grid.par_iter().map(run_point).collect();
    #[cfg(not(feature = "parallel"))]
    let points: Result<Vec<SweepPoint>> = grid.iter().map(run_point).collect();
    points
}

/// MTD across several key bytes at one operating point.
pub fn mtd_bytes(set: &TraceSet, bytes: &[usize], checkpoint_step: usize) -> Result<Vec<MtdCurve>> {
    bytes
        .iter()
        .map(|&b| cpa::mtd_analysis(set, b, checkpoint_step))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(scenario: Scenario) -> ExperimentConfig {
        ExperimentConfig {
            scenario,
            n_traces: 40,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn synth_is_reproducible_per_scenario() {
        for scenario in Scenario::ALL {
            let cfg = small_cfg(scenario);
            let a = run_synth(&cfg).unwrap();
            let b = run_synth(&cfg).unwrap();
            assert_eq!(a, b, "scenario {scenario}");
            assert_eq!(a.n_traces(), 40);
            a.verify_ciphertexts().unwrap();
            a.verify_finite().unwrap();
        }
    }

    #[test]
    fn protect_preserves_texts_and_key() {
        let cfg = small_cfg(Scenario::AsAes);
        let clean = LeakageParams {
            measurement_noise_sigma: 0.0,
            ..cfg.leakage.clone()
        };
        let set = leakage::synthesize_set(&cfg.key, 40, &clean, cfg.seeds.master).unwrap();
        let protected = protect(&set, Scenario::AsAes, &cfg).unwrap();
        assert_eq!(protected.set.n_traces(), set.n_traces());
        assert_eq!(protected.set.plaintexts, set.plaintexts);
        assert_eq!(protected.set.ciphertexts, set.ciphertexts);
        assert_eq!(protected.set.key, set.key);
        assert_ne!(protected.set.raw_samples(), set.raw_samples());
        // One diagnostics row per trace; the guard band keeps the digital
        // loop quiet and the rail near its target for normal activity.
        assert_eq!(protected.regulation.len(), 40);
        let reg = cfg.regulator.as_ref().unwrap();
        for r in &protected.regulation {
            assert_eq!(r.smc_events, 0);
            assert!(r.charge_residual_fraction <= 1e-3);
            assert!((r.v_reg_min - reg.v_target).abs() < reg.delta);
            assert!((r.v_reg_max - reg.v_target).abs() < reg.delta);
        }
    }

    #[test]
    fn protect_rejects_unprotected_scenario() {
        let cfg = small_cfg(Scenario::Unprotected);
        let set = run_synth(&cfg).unwrap();
        assert!(protect(&set, Scenario::Unprotected, &cfg).is_err());
    }

    #[test]
    fn regulated_supply_sits_near_source_setting() {
        let cfg = small_cfg(Scenario::AsAes);
        let set = run_synth(&cfg).unwrap();
        let reg = cfg.regulator.as_ref().unwrap();
        let expect = reg.i_cs_nominal + reg.i_opamp;
        for i in 0..set.n_traces() {
            for &s in set.trace(i) {
                assert!(
                    (f64::from(s) - expect).abs() < 1e-3,
                    "supply sample {s} far from {expect}"
                );
            }
        }
    }

    #[test]
    fn injected_noise_is_per_trace_independent() {
        let cfg = small_cfg(Scenario::NoiseOnly);
        let base = leakage::synthesize_set(&cfg.key, 2, &cfg.leakage, cfg.seeds.master).unwrap();
        let mut noisy = base.clone();
        add_injected_noise(&mut noisy, cfg.noise.as_ref().unwrap(), cfg.seeds.noise).unwrap();
        let d0: Vec<f64> = noisy
            .trace(0)
            .iter()
            .zip(base.trace(0))
            .map(|(&a, &b)| f64::from(a) - f64::from(b))
            .collect();
        let d1: Vec<f64> = noisy
            .trace(1)
            .iter()
            .zip(base.trace(1))
            .map(|(&a, &b)| f64::from(a) - f64::from(b))
            .collect();
        assert_ne!(d0, d1, "per-trace noise must differ");
        let fs = cfg.noise.as_ref().unwrap().full_scale;
        assert!(d0.iter().chain(&d1).all(|&d| (0.0..=fs * 1.0001).contains(&d)));
    }

    #[test]
    fn sweep_param_parsing_and_apply() {
        let cfg = ExperimentConfig {
            scenario: Scenario::AsAesPlusNoise,
            ..ExperimentConfig::default()
        };
        let p: SweepParam = "r_ds".parse().unwrap();
        let out = p.apply(&cfg, 1e5).unwrap();
        assert!((out.regulator.unwrap().g_ds - 1e-5).abs() < 1e-20);
        assert!("nope".parse::<SweepParam>().is_err());
        let p: SweepParam = "bleed_max".parse().unwrap();
        let out = p.apply(&cfg, 4e-3).unwrap();
        let reg = out.regulator.unwrap();
        assert_eq!(reg.bleed_max, 4e-3);
        assert_eq!(reg.i_bleed_bias, 2e-3);
        assert_eq!(reg.i_cs_nominal, cfg.leakage.baseline_current + 2e-3);
    }

    #[test]
    fn scenario_irrelevant_sweeps_rejected() {
        // Default scenario is unprotected: neither the noise DAC nor the
        // regulator ever runs, so sweeping their parameters is an error
        // rather than a silently flat table.
        let cfg = ExperimentConfig::default();
        assert!(SweepParam::NoiseFullScale.apply(&cfg, 1e-3).is_err());
        assert!(SweepParam::VDd.apply(&cfg, 1.3).is_err());
        // Leakage-side parameters apply everywhere.
        assert!(SweepParam::HwScale.apply(&cfg, 5e-6).is_ok());
        let noisy = ExperimentConfig {
            scenario: Scenario::NoiseOnly,
            ..ExperimentConfig::default()
        };
        assert!(SweepParam::NoiseFullScale.apply(&noisy, 1e-3).is_ok());
    }

    #[test]
    fn bleed_capacity_sweep_overhead_rises_with_sizing() {
        let cfg = ExperimentConfig {
            scenario: Scenario::AsAesPlusNoise,
            n_traces: 30,
            ..ExperimentConfig::default()
        };
        let grid = [1e-3, 2e-3, 3e-3, 5e-3];
        let points = run_sweep(&cfg, SweepParam::BleedMax, &grid, 0, false).unwrap();
        let i_ov: Vec<f64> = points
            .iter()
            .map(|p| p.overhead.as_ref().unwrap().i_ov)
            .collect();
        for pair in i_ov.windows(2) {
            assert!(pair[1] > pair[0], "i_ov not rising: {i_ov:?}");
        }
    }

    #[test]
    fn vdd_sweep_power_overhead_is_linear() {
        let cfg = ExperimentConfig {
            scenario: Scenario::AsAesPlusNoise,
            n_traces: 30,
            ..ExperimentConfig::default()
        };
        let grid = [1.1, 1.2, 1.4, 1.8];
        let points = run_sweep(&cfg, SweepParam::VDd, &grid, 0, false).unwrap();
        let p_ov: Vec<f64> = points
            .iter()
            .map(|p| p.overhead.as_ref().unwrap().p_ov)
            .collect();
        // P_ov = (i_cs + i_noise + i_opamp) * v_dd - const: exactly linear.
        let slope = 20e-3 + 1e-3 + 0.4e-3;
        for (i, w) in grid.windows(2).enumerate() {
            let got = (p_ov[i + 1] - p_ov[i]) / (w[1] - w[0]);
            assert!((got - slope).abs() < 1e-12, "slope {got} vs {slope}");
        }
    }
}
