//! scat — supply-current side-channel analysis toolkit.
//!
//! The crate models the full attack-and-defend loop around an AES-128 core:
//!
//! * [`aes`] — bit-exact AES-128 with round-intermediate recording;
//! * [`leakage`] — Hamming-weight current-trace synthesis with measurement noise;
//! * [`regulator`] — transient and small-signal simulation of the shunt-LDO
//!   signature-attenuation stage that hides the core behind a current source;
//! * [`noise`] — LFSR-driven current-steering DAC noise injection and the
//!   analytic noise-vs-correlation law;
//! * [`cpa`] — correlation power analysis, key ranking, and traces-to-disclosure;
//! * [`trace_file`] / [`config`] / [`pipeline`] / [`report`] — the operational
//!   shell: binary trace files, TOML experiment configs, scenario pipelines,
//!   and CSV emission.
//!
//! Heavy inner loops are data-parallel via rayon when the default `parallel`
//! feature is on; builds with `--no-default-features` run the same arithmetic
//! sequentially and produce bit-identical outputs.
//!
//! ```
//! use scat::{cpa, pipeline, ExperimentConfig};
//!
//! // Synthesize a small unprotected campaign and recover key byte 0.
//! let cfg = ExperimentConfig {
//!     n_traces: 300,
//!     ..ExperimentConfig::default()
//! };
//! let traces = pipeline::run_synth(&cfg).unwrap();
//! let report = cpa::attack(&traces, 0).unwrap();
//! assert_eq!(report.recovered_byte, cfg.key[0]);
//! ```

pub mod aes;
pub mod config;
pub mod cpa;
pub mod error;
pub mod leakage;
pub mod noise;
pub mod pipeline;
pub mod regulator;
pub mod report;
pub mod seeds;
pub mod trace_file;

pub use config::{ExperimentConfig, Scenario, Seeds};
pub use cpa::{attack, mtd_analysis, pearson, CpaReport, MtdCurve};
pub use error::{Error, Result};
pub use leakage::{synthesize_set, synthesize_trace, LeakageParams, PulseShape, TraceSet};
pub use noise::{lfsr_stream, noise_waveform, predicted_correlation, NoiseParams};
pub use regulator::{af_transfer, bode_sweep, overhead_report, simulate, RegulatorParams, SimResult};
