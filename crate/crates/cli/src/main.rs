//! `resokit` command-line driver.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use resokit::trace_io::{PartialMeta, TraceRole};

#[derive(Parser, Debug)]
#[command(
    name = "resokit",
    version,
    about = "Superconducting resonator characterization"
)]
struct Cli {
    /// JSON file with detection, ripple and S-curve settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for synthetic noise and S-curve multistart.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads for batch fits (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load a trace, attach metadata and write it as CSV with a sidecar.
    Ingest {
        input: PathBuf,
        #[command(flatten)]
        meta: MetaArgs,
    },
    /// Compare a device trace against a through trace.
    Ripple {
        #[arg(long)]
        device: PathBuf,
        #[arg(long)]
        through: PathBuf,
        #[arg(long)]
        band_lo_hz: Option<f64>,
        #[arg(long)]
        band_hi_hz: Option<f64>,
        #[arg(long)]
        threshold_db: Option<f64>,
    },
    /// Find resonance dips in a broadband trace.
    Detect {
        input: PathBuf,
        #[arg(long)]
        prominence_db: Option<f64>,
    },
    /// Circle-fit every resonance in the given traces.
    Fit {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Fit each file as a single window instead of detecting dips.
        #[arg(long)]
        whole: bool,
        #[arg(long)]
        prominence_db: Option<f64>,
    },
    /// Fit one resonance measured at several powers and extract TLS loss.
    Sweep {
        #[arg(required = true, num_args = 2..)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "sweep")]
        name: String,
        #[arg(long)]
        multistart: Option<usize>,
        #[command(flatten)]
        meta: MetaArgs,
    },
    /// Design calculations.
    Design {
        #[command(subcommand)]
        op: DesignOp,
    },
    /// Generate synthetic traces.
    Synth {
        #[command(subcommand)]
        kind: SynthKind,
    },
    /// Build report.json, summary.csv and plots.
    Report {
        /// Traces fitted as single resonances.
        #[arg(long = "trace")]
        traces: Vec<PathBuf>,
        /// Outputs of the `sweep` command.
        #[arg(long = "sweep")]
        sweeps: Vec<PathBuf>,
        /// Reference cohort as NAME=CSV, one column per metric.
        #[arg(long = "cohort")]
        cohorts: Vec<String>,
    },
}

#[derive(Subcommand, Debug)]
enum DesignOp {
    /// Impedance of a coaxial geometry.
    Coax {
        #[arg(long)]
        outer_m: f64,
        #[arg(long)]
        inner_m: f64,
        #[arg(long, default_value_t = 1.0)]
        eps_r: f64,
    },
    /// Diameter ratio giving a target impedance.
    CoaxRatio {
        #[arg(long, default_value_t = 50.0)]
        z0: f64,
        #[arg(long, default_value_t = 1.0)]
        eps_r: f64,
    },
    /// Ring resonance from effective permittivity, or the reverse with --f-hz.
    Ring {
        #[arg(long)]
        perimeter_m: f64,
        #[arg(long, required_unless_present = "f_hz")]
        eps_eff: Option<f64>,
        #[arg(long, conflicts_with = "eps_eff")]
        f_hz: Option<f64>,
        #[arg(long, default_value_t = 1)]
        mode: u32,
    },
    /// Detuning and splitting of a measured doublet.
    Doublet {
        #[arg(long)]
        f_a: f64,
        #[arg(long)]
        f_b: f64,
        #[arg(long)]
        f_sim: f64,
    },
    /// Coupling Q at a gap from a `gap_m,q_c` CSV curve.
    Coupling {
        #[arg(long)]
        curve: PathBuf,
        #[arg(long)]
        gap_m: f64,
    },
    /// Recompute detuning and splitting for a design table.
    Table { input: PathBuf },
}

#[derive(Subcommand, Debug)]
enum SynthKind {
    /// One notch resonance.
    Resonance {
        #[arg(long, default_value_t = 6.072e9)]
        f_c: f64,
        #[arg(long, default_value_t = 9.1e5)]
        q_i: f64,
        #[arg(long, default_value_t = 5e7)]
        q_c_mag: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        phi: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        tau_s: f64,
        #[arg(long, default_value_t = 40.0)]
        span_linewidths: f64,
        #[arg(long, default_value_t = 2001)]
        points: usize,
        /// Noise level relative to the resonance circle diameter.
        #[arg(long, conflicts_with = "noise_sigma", allow_negative_numbers = true)]
        snr_db: Option<f64>,
        #[arg(long)]
        noise_sigma: Option<f64>,
        #[arg(long, default_value = "synth.s2p")]
        output: String,
    },
    /// A power sweep of one resonance following a TLS loss curve.
    Sweep {
        #[arg(long, default_value_t = 6.072e9)]
        f_c: f64,
        #[arg(long, default_value_t = 1.1e-6)]
        f_dtls: f64,
        #[arg(long, default_value_t = 2000.0)]
        n_c: f64,
        #[arg(long, default_value_t = 0.2)]
        beta: f64,
        #[arg(long, default_value_t = 5e6)]
        q_hp: f64,
        #[arg(long, default_value_t = 5e7)]
        q_c: f64,
        #[arg(long, default_value_t = 0.015)]
        temperature_k: f64,
        #[arg(long, default_value_t = 80.0)]
        attenuation_db: f64,
        /// Instrument powers in dBm, comma separated.
        #[arg(
            long,
            value_delimiter = ',',
            allow_negative_numbers = true,
            required = true
        )]
        powers_dbm: Vec<f64>,
        #[arg(long, default_value_t = 0.0)]
        noise_sigma: f64,
        #[arg(long, default_value = "p")]
        prefix: String,
    },
}

/// Inline measurement metadata; merged with `<stem>.meta.json` sidecars.
#[derive(Args, Debug, Clone, Default)]
struct MetaArgs {
    #[arg(long, allow_negative_numbers = true)]
    power_dbm: Option<f64>,
    #[arg(long)]
    attenuation_db: Option<f64>,
    #[arg(long)]
    temperature_k: Option<f64>,
    #[arg(long)]
    extra_loss_db: Option<f64>,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    role: Option<TraceRole>,
    /// Let sidecar values win over these flags.
    #[arg(long)]
    sidecar_wins: bool,
}

impl MetaArgs {
    fn partial(&self) -> PartialMeta {
        PartialMeta {
            vna_power_dbm: self.power_dbm,
            attenuation_db: self.attenuation_db,
            temperature_k: self.temperature_k,
            label: self.label.clone(),
            role: self.role,
            extra_loss_db: self.extra_loss_db,
        }
    }
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_FIT: u8 = 2;
const EXIT_IO: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<resokit::Error>() {
            if e.is_fit_failure() {
                return EXIT_FIT;
            }
            if e.is_io() {
                return EXIT_IO;
            }
            return EXIT_VALIDATION;
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_VALIDATION
}

/// Joins the cause chain, skipping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
