//! Shunt-regulated power-delivery simulation.
//!
//! The protected core sits behind a PMOS current source with finite output
//! conductance `g_ds`, decoupled by `c_load`. A fast analog loop (single-pole
//! amplifier with aggregate transconductance `G_m = A_v * g_m` driving an NMOS
//! bleed) sinks whatever the core does not draw; a slow switched-mode digital
//! loop re-quantizes the source array only when the regulated voltage escapes
//! a +/- delta guard band. The supply current an attacker can observe is the
//! source current plus the amplifier's static draw, so load variation reaches
//! the supply only through `g_ds` times the (small) regulated-voltage ripple.
//!
//! Transient integration is semi-implicit: backward Euler on the capacitor
//! node, explicit on the amplifier state, fixed step.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Electrical parameters of the attenuation loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegulatorParams {
    /// Current-source output conductance (1 / r_ds), siemens.
    pub g_ds: f64,
    /// Integrating load capacitance, farads.
    pub c_load: f64,
    /// Amplifier DC gain (dimensionless).
    pub opamp_gain: f64,
    /// Output-stage transconductance, siemens.
    pub opamp_gm: f64,
    /// Amplifier dominant pole, rad/s.
    pub opamp_pole: f64,
    /// Optional non-dominant pole at the bleed gate, rad/s. Off by default.
    #[serde(default)]
    pub second_pole: Option<f64>,
    /// Current-source setting when the digital loop is in equilibrium, amps.
    pub i_cs_nominal: f64,
    /// Quantization step of the PMOS source array, amps.
    pub i_cs_step: f64,
    /// Bleed bias: source current minus average load current, amps.
    pub i_bleed_bias: f64,
    /// Regulation target, volts.
    pub v_target: f64,
    /// Guard band keeping the digital loop gated, volts.
    pub delta: f64,
    /// Supply rail, volts.
    pub v_dd: f64,
    /// Nominal regulated voltage used as the source's reference, volts.
    pub v_reg_nominal: f64,
    /// Bleed sink capacity, amps.
    pub bleed_max: f64,
    /// Minimum bleed current, amps.
    pub bleed_min: f64,
    /// Static amplifier draw, amps.
    pub i_opamp: f64,
    /// Digital-loop sampling cadence in integration steps.
    pub smc_period: usize,
}

impl Default for RegulatorParams {
    fn default() -> Self {
        Self {
            // r_ds = 1 MOhm source behind 450 pF; G_m = 5 mS with a 50 Mrad/s
            // dominant pole keeps the loop overdamped, attenuation is ~5000x
            // at DC and better everywhere above.
            g_ds: 1.0e-6,
            c_load: 450.0e-12,
            opamp_gain: 5000.0,
            opamp_gm: 1.0e-6,
            opamp_pole: 5.0e7,
            second_pole: None,
            i_cs_nominal: 20.0e-3,
            i_cs_step: 0.5e-3,
            i_bleed_bias: 1.11e-3,
            v_target: 1.0,
            delta: 70.0e-3,
            v_dd: 1.2,
            v_reg_nominal: 1.0,
            bleed_max: 3.0e-3,
            bleed_min: 0.0,
            i_opamp: 0.4e-3,
            smc_period: 100,
        }
    }
}

impl RegulatorParams {
    /// Aggregate loop transconductance `G_m = A_v * g_m`.
    pub fn gm(&self) -> f64 {
        self.opamp_gain * self.opamp_gm
    }

    /// Validate; returns non-fatal design warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let positive = [
            ("g_ds", self.g_ds),
            ("c_load", self.c_load),
            ("opamp_gain", self.opamp_gain),
            ("opamp_gm", self.opamp_gm),
            ("opamp_pole", self.opamp_pole),
            ("delta", self.delta),
            ("i_cs_step", self.i_cs_step),
            ("v_target", self.v_target),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, "must be finite and > 0"));
            }
        }
        let finite = [
            ("i_cs_nominal", self.i_cs_nominal),
            ("i_bleed_bias", self.i_bleed_bias),
            ("v_dd", self.v_dd),
            ("v_reg_nominal", self.v_reg_nominal),
            ("bleed_max", self.bleed_max),
            ("bleed_min", self.bleed_min),
            ("i_opamp", self.i_opamp),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::invalid(name, "must be finite"));
            }
        }
        if let Some(p2) = self.second_pole {
            if !(p2.is_finite() && p2 > 0.0) {
                return Err(Error::invalid("second_pole", "must be finite and > 0"));
            }
        }
        if !(self.bleed_max > self.bleed_min && self.bleed_min >= 0.0) {
            return Err(Error::invalid(
                "bleed_max",
                "need bleed_max > bleed_min >= 0",
            ));
        }
        if self.v_dd <= self.v_reg_nominal {
            return Err(Error::invalid("v_dd", "must exceed v_reg_nominal"));
        }
        if self.smc_period == 0 {
            return Err(Error::invalid("smc_period", "must be >= 1"));
        }
        let mut warnings = Vec::new();
        if self.gm() < 100.0 * self.g_ds {
            warnings.push(format!(
                "loop transconductance G_m = {:.3e} S is not much larger than g_ds = {:.3e} S; attenuation will be weak",
                self.gm(),
                self.g_ds
            ));
        }
        Ok(warnings)
    }

    /// Largest admissible integration step for the transient solver.
    pub fn max_dt(&self) -> f64 {
        let mut fastest = self.opamp_pole.max(self.gm() / self.c_load);
        if let Some(p2) = self.second_pole {
            fastest = fastest.max(p2);
        }
        0.1 / fastest
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmcEvent {
    pub step: usize,
    pub time: f64,
    pub v_reg: f64,
    pub old_setting: f64,
    pub new_setting: f64,
}

/// Transient simulation output, one row per input sample.
#[derive(Debug, Clone)]
pub struct SimResult {
    pub dt: f64,
    pub v_reg: Vec<f64>,
    pub i_bleed: Vec<f64>,
    /// What the attacker observes: source current plus amplifier draw.
    pub i_supply: Vec<f64>,
    pub i_cs_setting: Vec<f64>,
    pub smc_events: Vec<SmcEvent>,
    /// Largest dip of v_reg below the target, volts.
    pub droop_max: f64,
    /// | C dv - integral(i_cs - i_aes - i_bleed) dt |, coulombs.
    pub charge_residual: f64,
    /// Total source charge, coulombs.
    pub delivered_charge: f64,
}

impl SimResult {
    pub fn charge_residual_fraction(&self) -> f64 {
        if self.delivered_charge == 0.0 {
            0.0
        } else {
            self.charge_residual / self.delivered_charge
        }
    }
}

/// Integrate the loop against a load-current waveform sampled every `dt`.
pub fn simulate(params: &RegulatorParams, i_aes: &[f64], dt: f64) -> Result<SimResult> {
    params.validate()?;
    if i_aes.is_empty() {
        return Err(Error::invalid("i_aes", "waveform is empty"));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid("dt", "must be finite and > 0"));
    }
    let max_dt = params.max_dt();
    if dt > max_dt {
        return Err(Error::invalid(
            "dt",
            format!("step {dt:.3e} s exceeds stability bound {max_dt:.3e} s for these loop parameters"),
        ));
    }

    let n = i_aes.len();
    let gm = params.gm();
    let a = params.opamp_pole;
    let c_over_dt = params.c_load / dt;

    let mut v = params.v_target;
    let mut x = 0.0f64; // amplifier state, amps of commanded bleed offset
    let mut y = 0.0f64; // optional second-pole state
    let mut setting = params.i_cs_nominal;

    let mut out = SimResult {
        dt,
        v_reg: Vec::with_capacity(n),
        i_bleed: Vec::with_capacity(n),
        i_supply: Vec::with_capacity(n),
        i_cs_setting: Vec::with_capacity(n),
        smc_events: Vec::new(),
        droop_max: 0.0,
        charge_residual: 0.0,
        delivered_charge: 0.0,
    };

    let mut q_source = 0.0f64;
    let mut q_load = 0.0f64;

    for (k, &u) in i_aes.iter().enumerate() {
        // Digital loop: sampled, quantized, gated inside the guard band.
        if k > 0 && k % params.smc_period == 0 {
            if v > params.v_target + params.delta {
                let old = setting;
                setting -= params.i_cs_step;
                out.smc_events.push(SmcEvent {
                    step: k,
                    time: k as f64 * dt,
                    v_reg: v,
                    old_setting: old,
                    new_setting: setting,
                });
            } else if v < params.v_target - params.delta {
                let old = setting;
                setting += params.i_cs_step;
                out.smc_events.push(SmcEvent {
                    step: k,
                    time: k as f64 * dt,
                    v_reg: v,
                    old_setting: old,
                    new_setting: setting,
                });
            }
        }

        // Amplifier state, explicit step: dx/dt = a (G_m (v - V_t) - x).
        x += dt * a * (gm * (v - params.v_target) - x);
        let command = match params.second_pole {
            Some(p2) => {
                y += dt * p2 * (x - y);
                y
            }
            None => x,
        };
        let bleed = (params.i_bleed_bias + command).clamp(params.bleed_min, params.bleed_max);

        // Capacitor node, backward Euler:
        // C (v' - v)/dt = setting + g_ds (V_nom - v') - u - bleed.
        let v_new = (c_over_dt * v + setting + params.g_ds * params.v_reg_nominal - u - bleed)
            / (c_over_dt + params.g_ds);
        let i_cs = setting + params.g_ds * (params.v_reg_nominal - v_new);

        q_source += i_cs * dt;
        q_load += (u + bleed) * dt;

        if !(0.0..=params.v_dd).contains(&v_new) || !v_new.is_finite() {
            return Err(Error::Instability {
                time: (k + 1) as f64 * dt,
                v_dd: params.v_dd,
            });
        }

        v = v_new;
        out.v_reg.push(v);
        out.i_bleed.push(bleed);
        out.i_supply.push(i_cs + params.i_opamp);
        out.i_cs_setting.push(setting);
        out.droop_max = out.droop_max.max(params.v_target - v);
    }

    out.charge_residual =
        (params.c_load * (v - params.v_target) - (q_source - q_load)).abs();
    out.delivered_charge = q_source.abs();
    Ok(out)
}

/// Small-signal transfer i_cs / i_aes at frequency `f`:
/// `g_ds / (g_ds + s C + a G_m / (s + a))` evaluated at `s = j 2 pi f`,
/// with the optional second pole multiplying the loop branch.
pub fn af_transfer(params: &RegulatorParams, f: f64) -> Complex64 {
    let s = Complex64::new(0.0, 2.0 * std::f64::consts::PI * f);
    let a = params.opamp_pole;
    let mut loop_branch = a * params.gm() / (s + a);
    if let Some(p2) = params.second_pole {
        loop_branch *= p2 / (s + p2);
    }
    params.g_ds / (params.g_ds + s * params.c_load + loop_branch)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodePoint {
    pub freq: f64,
    pub magnitude: f64,
    pub magnitude_db: f64,
}

/// |AF| over a frequency grid.
pub fn bode_sweep(params: &RegulatorParams, f_grid: &[f64]) -> Vec<BodePoint> {
    f_grid
        .iter()
        .map(|&f| {
            let magnitude = af_transfer(params, f).norm();
            BodePoint {
                freq: f,
                magnitude,
                magnitude_db: 20.0 * magnitude.log10(),
            }
        })
        .collect()
}

/// Log-spaced frequency grid, inclusive of both ends.
pub fn log_grid(f_min: f64, f_max: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2 && f_min > 0.0 && f_max > f_min);
    let (lo, hi) = (f_min.log10(), f_max.log10());
    (0..points)
        .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (points - 1) as f64))
        .collect()
}

/// Current/power overhead and efficiency of the protected operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverheadReport {
    /// Bleed bias consumed: i_cs_nominal - i_aes_avg, amps.
    pub i_bleed: f64,
    /// i_bleed + i_noise + i_opamp, amps.
    pub i_ov: f64,
    /// Total input power minus power delivered to the core, watts.
    pub p_ov: f64,
    /// Core power over total input power.
    pub efficiency: f64,
}

pub fn overhead_report(
    params: &RegulatorParams,
    i_noise: f64,
    i_aes_avg: f64,
) -> Result<OverheadReport> {
    params.validate()?;
    if !(i_noise.is_finite() && i_noise > 0.0) {
        return Err(Error::invalid("i_noise", "must be finite and > 0"));
    }
    if !(i_aes_avg.is_finite() && i_aes_avg > 0.0) {
        return Err(Error::invalid("i_aes_avg", "must be finite and > 0"));
    }
    let i_bleed = params.i_cs_nominal - i_aes_avg;
    if i_bleed < 0.0 {
        return Err(Error::NegativeBleed {
            i_cs: params.i_cs_nominal,
            i_aes_avg,
        });
    }
    let total_in = params.i_cs_nominal + i_noise + params.i_opamp;
    let p_ov = total_in * params.v_dd - i_aes_avg * params.v_reg_nominal;
    let efficiency = i_aes_avg * params.v_reg_nominal / (total_in * params.v_dd);
    Ok(OverheadReport {
        i_bleed,
        i_ov: i_bleed + i_noise + params.i_opamp,
        p_ov,
        efficiency,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasuredGain {
    /// Probe frequency after snapping to a whole number of samples per period.
    pub freq: f64,
    /// Peak supply-current ripple over peak load ripple.
    pub gain: f64,
}

/// Drive the transient solver with a small sinusoidal load perturbation and
/// measure the supply-side ripple gain by projection onto the probe tone.
///
/// The tone ramps up under a raised-cosine envelope so the slow loop is never
/// shocked, and the projection runs over whole periods, which nulls the DC
/// operating point exactly.
pub fn measure_small_signal_gain(
    params: &RegulatorParams,
    freq: f64,
    amplitude: f64,
    dt: f64,
) -> Result<MeasuredGain> {
    if !(freq > 0.0 && freq.is_finite()) {
        return Err(Error::invalid("freq", "must be finite and > 0"));
    }
    let period_samples = (1.0 / (freq * dt)).round() as usize;
    if period_samples < 8 {
        return Err(Error::invalid("freq", "fewer than 8 samples per period"));
    }
    let f = 1.0 / (period_samples as f64 * dt);
    let omega = 2.0 * std::f64::consts::PI * f;

    // Ramp long enough for the slowest loop mode to track adiabatically.
    let slow_tau = params.c_load / (params.gm() + params.g_ds);
    let ramp_seconds = (40.0 * slow_tau).max(20.0 / f);
    let ramp_periods = (ramp_seconds * f).ceil() as usize;
    let settle_periods = 5usize;
    let measure_periods = 20usize;
    let total = (ramp_periods + settle_periods + measure_periods) * period_samples;

    let i_eq = params.i_cs_nominal - params.i_bleed_bias;
    let ramp_len = ramp_periods * period_samples;
    let drive: Vec<f64> = (0..total)
        .map(|k| {
            let t = (k + 1) as f64 * dt;
            let env = if k < ramp_len {
                0.5 * (1.0 - (std::f64::consts::PI * (k + 1) as f64 / ramp_len as f64).cos())
            } else {
                1.0
            };
            i_eq + amplitude * env * (omega * t).sin()
        })
        .collect();

    let sim = simulate(params, &drive, dt)?;
    let n_meas = measure_periods * period_samples;
    let start = total - n_meas;
    let mut acc = Complex64::new(0.0, 0.0);
    for k in start..total {
        let t = (k + 1) as f64 * dt;
        acc += sim.i_supply[k] * Complex64::new(0.0, -omega * t).exp();
    }
    let ripple = 2.0 * acc.norm() / n_meas as f64;
    Ok(MeasuredGain {
        freq: f,
        gain: ripple / amplitude,
    })
}

/// Load waveform with a rising current spike calibrated to draw
/// `target_droop * c_load` coulombs out of the capacitor in `spike_seconds`.
pub fn calibrated_spike_waveform(
    params: &RegulatorParams,
    baseline: f64,
    target_droop: f64,
    spike_seconds: f64,
    dt: f64,
    total_seconds: f64,
) -> Vec<f64> {
    let n = (total_seconds / dt).round() as usize;
    let spike_samples = (spike_seconds / dt).round().max(1.0) as usize;
    let amplitude = target_droop * params.c_load / (spike_samples as f64 * dt);
    let start = n / 5;
    (0..n)
        .map(|k| {
            if (start..start + spike_samples).contains(&k) {
                baseline + amplitude
            } else {
                baseline
            }
        })
        .collect()
}
