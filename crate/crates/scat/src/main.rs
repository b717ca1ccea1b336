//! scat command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/processing error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scat::config::{ExperimentConfig, Scenario};
use scat::error::Error;
use scat::pipeline::{self, SweepParam};
use scat::regulator;
use scat::{cpa, report, trace_file};

#[derive(Parser)]
#[command(
    name = "scat",
    about = "Supply-current side-channel analysis toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the configured trace count.
    #[arg(long, value_name = "N")]
    traces: Option<usize>,
    /// Override the configured master seed.
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
    /// Override the configured scenario.
    #[arg(long, value_name = "SCENARIO")]
    scenario: Option<Scenario>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(n) = self.traces {
            cfg.n_traces = n;
        }
        if let Some(s) = self.seed {
            cfg.seeds.master = s;
        }
        if let Some(sc) = self.scenario {
            cfg.scenario = sc;
        }
        for warning in cfg.validate()? {
            eprintln!("warning: {warning}");
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a trace set for the configured scenario and write it.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output trace file.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Write the attacker-view variant without the key block.
        #[arg(long)]
        no_key: bool,
    },
    /// Transform an unprotected trace file through the protection circuitry.
    Protect {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Input (unprotected) trace file.
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        /// Output trace file.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Also write per-trace regulation diagnostics as CSV.
        #[arg(long, value_name = "PATH")]
        summary: Option<PathBuf>,
    },
    /// Run a CPA attack on one key byte and write the report CSV.
    Attack {
        /// Input trace file.
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        /// Key byte index to attack.
        #[arg(long, value_name = "IDX", default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..16))]
        byte: u8,
        /// Output CSV.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Trace-by-trace correlation evolution and the disclosure point.
    Mtd {
        /// Input trace file (key-present variant).
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        /// Key byte index.
        #[arg(long, value_name = "IDX", default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..16))]
        byte: u8,
        /// Trace budget; the analysis stops here even if more traces exist.
        #[arg(long, value_name = "N")]
        budget: Option<usize>,
        /// Checkpoint spacing in traces.
        #[arg(long, value_name = "K", default_value_t = 100)]
        step: usize,
        /// Output CSV.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Tabulate the attenuation-factor magnitude over a log frequency grid.
    Bode {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_name = "HZ", default_value_t = 1e3)]
        fmin: f64,
        #[arg(long, value_name = "HZ", default_value_t = 5e8)]
        fmax: f64,
        #[arg(long, value_name = "N", default_value_t = 200)]
        points: usize,
        /// Output CSV.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Rerun the scenario across a grid of one named parameter.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Parameter name (see `sweep --help` error text for the list).
        #[arg(long, value_name = "NAME")]
        param: String,
        /// Comma-separated values, SI units.
        #[arg(long, value_name = "V1,V2,...")]
        grid: String,
        /// Key byte index to attack at each point.
        #[arg(long, value_name = "IDX", default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..16))]
        byte: u8,
        /// Also run MTD analysis at every point.
        #[arg(long)]
        mtd: bool,
        /// Summary CSV.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Directory for per-point attack reports (optional).
        #[arg(long, value_name = "DIR")]
        points_dir: Option<PathBuf>,
    },
    /// Print the overhead-current/power/efficiency block.
    Report {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Injected-noise current, amps; defaults to the configured DAC full scale.
        #[arg(long, value_name = "AMPS")]
        i_noise: Option<f64>,
        /// Average core current, amps; defaults to the configured baseline.
        #[arg(long, value_name = "AMPS")]
        i_aes_avg: Option<f64>,
    },
}

fn parse_grid(grid: &str) -> Result<Vec<f64>, String> {
    grid.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|e| format!("bad grid value `{tok}`: {e}"))
        })
        .collect()
}

fn write_csv<F>(path: &Path, write: F) -> Result<(), Error>
where
    F: FnOnce(&mut dyn std::io::Write) -> std::io::Result<()>,
{
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write(&mut file)?;
    use std::io::Write as _;
    file.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth { cfg, out, no_key } => {
            let cfg = cfg.resolve()?;
            let mut set = pipeline::run_synth(&cfg)?;
            if no_key {
                set = set.without_key();
            }
            trace_file::write(&out, &set, cfg.scenario)?;
            println!(
                "wrote {} traces x {} samples ({}) to {}",
                set.n_traces(),
                set.samples_per_trace,
                cfg.scenario,
                out.display()
            );
        }
        Command::Protect {
            cfg,
            input,
            out,
            summary,
        } => {
            let cfg = cfg.resolve()?;
            let (set, in_scenario) = trace_file::read(&input)?;
            if in_scenario != Scenario::Unprotected {
                return Err(Error::invalid(
                    "input",
                    format!("expected an unprotected trace file, found scenario `{in_scenario}`"),
                ));
            }
            let scenario = cfg.scenario;
            let protected = pipeline::protect(&set, scenario, &cfg)?;
            trace_file::write(&out, &protected.set, scenario)?;
            if let Some(path) = summary {
                write_csv(&path, |w| {
                    report::write_regulation_csv(w, &protected.regulation)
                })?;
            }
            println!(
                "protected {} traces as {} into {}",
                protected.set.n_traces(),
                scenario,
                out.display()
            );
        }
        Command::Attack { input, byte, out } => {
            let (set, _) = trace_file::read(&input)?;
            let report = cpa::attack(&set, usize::from(byte))?;
            write_csv(&out, |w| report::write_attack_csv(w, &report))?;
            println!(
                "byte {byte}: recovered 0x{:02x} (peak |rho| {:.4}) from {} traces -> {}",
                report.recovered_byte,
                report.peak_abs[report.recovered_byte as usize],
                report.n_traces,
                out.display()
            );
        }
        Command::Mtd {
            input,
            byte,
            budget,
            step,
            out,
        } => {
            let (mut set, _) = trace_file::read(&input)?;
            if let Some(b) = budget {
                set.truncate(b);
            }
            let curve = cpa::mtd_analysis(&set, usize::from(byte), step)?;
            write_csv(&out, |w| report::write_mtd_csv(w, &curve))?;
            match curve.mtd {
                Some(m) => println!("byte {byte}: disclosed at {m} traces -> {}", out.display()),
                None => println!(
                    "byte {byte}: not disclosed within {} traces (final correct-key peak |rho| = {:.4}) -> {}",
                    curve.budget,
                    curve.final_correct_peak(),
                    out.display()
                ),
            }
        }
        Command::Bode {
            cfg,
            fmin,
            fmax,
            points,
            out,
        } => {
            let cfg = cfg.resolve()?;
            let reg = cfg
                .regulator
                .as_ref()
                .ok_or_else(|| Error::Config("bode needs a [regulator] block".into()))?;
            if !(fmin > 0.0 && fmax > fmin && points >= 2) {
                return Err(Error::invalid(
                    "fmin/fmax/points",
                    "need 0 < fmin < fmax and points >= 2",
                ));
            }
            let table = regulator::bode_sweep(reg, &regulator::log_grid(fmin, fmax, points));
            write_csv(&out, |w| report::write_bode_csv(w, &table))?;
            println!("wrote {} bode points to {}", table.len(), out.display());
        }
        Command::Sweep {
            cfg,
            param,
            grid,
            byte,
            mtd,
            out,
            points_dir,
        } => {
            let cfg = cfg.resolve()?;
            let param: SweepParam = param.parse().map_err(Error::Config)?;
            let grid = parse_grid(&grid).map_err(Error::Config)?;
            let points = pipeline::run_sweep(&cfg, param, &grid, usize::from(byte), mtd)?;
            write_csv(&out, |w| report::write_sweep_csv(w, param.name(), &points))?;
            if let Some(dir) = points_dir.or(cfg.output_dir.clone()) {
                std::fs::create_dir_all(&dir)?;
                for p in &points {
                    let path = dir.join(format!("{}_{:e}.csv", param.name(), p.value));
                    write_csv(&path, |w| report::write_attack_csv(w, &p.report))?;
                }
            }
            println!(
                "swept {} over {} points -> {}",
                param.name(),
                points.len(),
                out.display()
            );
        }
        Command::Report {
            cfg,
            i_noise,
            i_aes_avg,
        } => {
            let cfg = cfg.resolve()?;
            let reg = cfg
                .regulator
                .as_ref()
                .ok_or_else(|| Error::Config("report needs a [regulator] block".into()))?;
            let i_noise = i_noise
                .or(cfg.noise.as_ref().map(|n| n.full_scale))
                .ok_or_else(|| Error::Config("no injected-noise current given".into()))?;
            let i_aes_avg = i_aes_avg.unwrap_or(cfg.leakage.baseline_current);
            let overhead = regulator::overhead_report(reg, i_noise, i_aes_avg)?;
            // i_noise is read as the DAC full scale; the rms of uniform codes
            // is also printed so either interpretation can be compared.
            let rms = Some(i_noise / 12f64.sqrt());
            print!("{}", report::format_overhead(&overhead, i_noise, i_aes_avg, rms));
        }
    }
    Ok(())
}

/// Usage problems exit 1; data/processing problems exit 2.
fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are not errors.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let usage = matches!(e, Error::Config(ref msg) if msg.starts_with("unknown sweep parameter") || msg.starts_with("bad grid value"));
            ExitCode::from(if usage { 1 } else { 2 })
        }
    }
}
