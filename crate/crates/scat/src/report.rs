//! CSV and text emission for analysis outputs. CSV keeps plotting
//! tooling-agnostic; floats use Rust's shortest round-trip formatting, so
//! rerunning an experiment rewrites byte-identical files.

use std::io::{self, Write};

use crate::cpa::{CpaReport, MtdCurve};
use crate::pipeline::SweepPoint;
use crate::regulator::{BodePoint, OverheadReport};

/// Per-guess peaks with a trailing summary row:
/// `recovered,<byte>,<margin or NA>`.
pub fn write_attack_csv<W: Write>(mut w: W, report: &CpaReport) -> io::Result<()> {
    writeln!(w, "guess,peak_abs_rho,best_sample")?;
    for g in 0..256usize {
        writeln!(w, "{g},{},{}", report.peak_abs[g], report.best_sample[g])?;
    }
    let margin = report
        .margin
        .map(|m| m.to_string())
        .unwrap_or_else(|| "NA".into());
    writeln!(w, "recovered,{},{margin}", report.recovered_byte)?;
    Ok(())
}

/// One row per checkpoint per guess, plus a summary row:
/// `mtd,<true_byte>,<trace count or not-disclosed>`.
pub fn write_mtd_csv<W: Write>(mut w: W, curve: &MtdCurve) -> io::Result<()> {
    writeln!(w, "checkpoint,guess,peak_abs_rho")?;
    for (c, peaks) in curve.checkpoints.iter().zip(&curve.peaks) {
        for (g, p) in peaks.iter().enumerate() {
            writeln!(w, "{c},{g},{p}")?;
        }
    }
    let mtd = curve
        .mtd
        .map(|m| m.to_string())
        .unwrap_or_else(|| "not-disclosed".into());
    writeln!(w, "mtd,{},{mtd}", curve.true_byte)?;
    Ok(())
}

/// Per-trace regulation diagnostics from a protection transform.
pub fn write_regulation_csv<W: Write>(
    mut w: W,
    summaries: &[crate::pipeline::RegulationSummary],
) -> io::Result<()> {
    writeln!(
        w,
        "trace,droop_max_v,charge_residual_fraction,smc_events,v_reg_min,v_reg_max,i_supply_min,i_supply_max"
    )?;
    for s in summaries {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            s.trace,
            s.droop_max,
            s.charge_residual_fraction,
            s.smc_events,
            s.v_reg_min,
            s.v_reg_max,
            s.i_supply_min,
            s.i_supply_max
        )?;
    }
    Ok(())
}

pub fn write_bode_csv<W: Write>(mut w: W, points: &[BodePoint]) -> io::Result<()> {
    writeln!(w, "frequency_hz,magnitude,magnitude_db")?;
    for p in points {
        writeln!(w, "{},{},{}", p.freq, p.magnitude, p.magnitude_db)?;
    }
    Ok(())
}

pub fn write_sweep_csv<W: Write>(
    mut w: W,
    param_name: &str,
    points: &[SweepPoint],
) -> io::Result<()> {
    writeln!(
        w,
        "param,value,correct_key_peak_rho,recovered_byte,mtd,i_ov_amps,p_ov_watts"
    )?;
    for p in points {
        let mtd = if p.mtd_run {
            p.mtd
                .map(|m| m.to_string())
                .unwrap_or_else(|| "not-disclosed".into())
        } else {
            String::new()
        };
        let (i_ov, p_ov) = match &p.overhead {
            Some(o) => (o.i_ov.to_string(), o.p_ov.to_string()),
            None => (String::new(), String::new()),
        };
        writeln!(
            w,
            "{param_name},{},{},{},{mtd},{i_ov},{p_ov}",
            p.value, p.correct_peak, p.recovered_byte
        )?;
    }
    Ok(())
}

/// Human-readable overhead block for the `report` subcommand.
pub fn format_overhead(
    report: &OverheadReport,
    i_noise: f64,
    i_aes_avg: f64,
    noise_rms: Option<f64>,
) -> String {
    let mut out = String::new();
    out.push_str(&format!("i_aes_avg     : {:.4} mA\n", i_aes_avg * 1e3));
    out.push_str(&format!("i_bleed       : {:.4} mA\n", report.i_bleed * 1e3));
    out.push_str(&format!("i_noise       : {:.4} mA", i_noise * 1e3));
    match noise_rms {
        Some(rms) => out.push_str(&format!(" (full-scale; rms {:.4} mA)\n", rms * 1e3)),
        None => out.push('\n'),
    }
    out.push_str(&format!(
        "i_ov          : {:.4} mA\n",
        report.i_ov * 1e3
    ));
    out.push_str(&format!("p_ov          : {:.4} mW\n", report.p_ov * 1e3));
    out.push_str(&format!(
        "efficiency    : {:.2} %\n",
        report.efficiency * 100.0
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regulator::{overhead_report, RegulatorParams};

    #[test]
    fn overhead_block_prints_reference_figures() {
        let r = overhead_report(&RegulatorParams::default(), 1e-3, 18.89e-3).unwrap();
        let text = format_overhead(&r, 1e-3, 18.89e-3, Some(1e-3 / 12f64.sqrt()));
        assert!(text.contains("2.5100 mA"), "{text}");
        assert!(text.contains("6.7900 mW"), "{text}");
        assert!(text.contains("73.56 %"), "{text}");
    }

    #[test]
    fn bode_csv_shape() {
        let mut buf = Vec::new();
        write_bode_csv(
            &mut buf,
            &[BodePoint {
                freq: 1e6,
                magnitude: 1e-4,
                magnitude_db: -80.0,
            }],
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("frequency_hz,"));
    }
}
