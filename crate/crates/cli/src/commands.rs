use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use resokit::baseline::{detect_resonances, ripple_metric, DetectOptions, ResonanceWindow};
use resokit::circlefit::{dcm_fit, fit_windows, DcmResult};
use resokit::designcalc::{
    analyze_doublet, coax_impedance, coax_ratio_for_impedance, coupling_interpolate, eps_eff_for,
    read_coupling_curve, read_design_table, ring_resonance, write_design_table, DesignEntry,
};
use resokit::photon::{build_power_sweep, write_power_points};
use resokit::report::{
    emit_report, read_cohort, summary_csv, AnalysisBundle, InputRecord, ResonanceEntry, SweepEntry,
};
use resokit::scurve::{fit_scurve_with, ScurveOptions, ScurveParams, ThermalContext};
use resokit::synth::{
    noise_sigma_for_snr, synth_power_sweep, synth_resonance, Grid, SweepSynthOptions, SynthSpec,
    SynthTruth,
};
use resokit::trace_io::{
    attach_metadata, read_sidecar, read_trace, resolve_metadata, sidecar_path, write_sidecar,
    write_trace, ComplexTrace, TraceMeta, TraceRole,
};
use resokit::Execution;

use crate::{Cli, Command, DesignOp, MetaArgs, SynthKind};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RippleConfig {
    band_hz: (f64, f64),
    threshold_db: f64,
}

impl Default for RippleConfig {
    fn default() -> Self {
        Self {
            band_hz: (4e9, 8e9),
            threshold_db: 3.0,
        }
    }
}

/// Contents of the `--config` file. Every section is optional.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Config {
    detect: DetectOptions,
    ripple: RippleConfig,
    scurve: ScurveOptions,
}

struct Ctx {
    config: Config,
    seed: Option<u64>,
    out_dir: PathBuf,
}

impl Ctx {
    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.out(name);
        let text = serde_json::to_string_pretty(value)? + "\n";
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    fn detect_options(&self, prominence_db: Option<f64>) -> DetectOptions {
        let mut o = self.config.detect;
        if let Some(p) = prominence_db {
            o.prominence_db = p;
        }
        o
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow!("--threads: {e}"))?;
    }
    let config = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => Config::default(),
    };
    fs::create_dir_all(&cli.out_dir)
        .with_context(|| format!("creating {}", cli.out_dir.display()))?;
    let ctx = Ctx {
        config,
        seed: cli.seed,
        out_dir: cli.out_dir,
    };

    match cli.command {
        Command::Ingest { input, meta } => ingest(&ctx, &input, &meta),
        Command::Ripple {
            device,
            through,
            band_lo_hz,
            band_hi_hz,
            threshold_db,
        } => {
            let rc = ctx.config.ripple;
            let band = (
                band_lo_hz.unwrap_or(rc.band_hz.0),
                band_hi_hz.unwrap_or(rc.band_hz.1),
            );
            let r = ripple_metric(
                &read_trace(&device)?,
                &read_trace(&through)?,
                band,
                threshold_db.unwrap_or(rc.threshold_db),
            )?;
            ctx.write_json("ripple.json", &r)?;
            println!(
                "max |diff| {:.3} dB, mean {:+.3} dB over {} points: {}",
                r.max_abs_diff_db,
                r.mean_diff_db,
                r.n_points,
                if r.pass { "PASS" } else { "FAIL" }
            );
            Ok(())
        }
        Command::Detect {
            input,
            prominence_db,
        } => {
            let trace = read_trace(&input)?;
            let windows = detect_resonances(&trace, &ctx.detect_options(prominence_db))?;
            for w in &windows {
                println!(
                    "{:.6} GHz  linewidth {:.3} kHz  depth {:.2} dB{}",
                    w.f_guess * 1e-9,
                    w.linewidth_hz * 1e-3,
                    w.prominence_db,
                    w.doublet_partner
                        .map(|f| format!("  partner {:.6} GHz", f * 1e-9))
                        .unwrap_or_default()
                );
            }
            ctx.write_json("windows.json", &windows)?;
            Ok(())
        }
        Command::Fit {
            inputs,
            whole,
            prominence_db,
        } => fit(&ctx, &inputs, whole, prominence_db),
        Command::Sweep {
            inputs,
            name,
            multistart,
            meta,
        } => sweep(&ctx, &inputs, &name, multistart, &meta),
        Command::Design { op } => design(&ctx, op),
        Command::Synth { kind } => synth(&ctx, kind),
        Command::Report {
            traces,
            sweeps,
            cohorts,
        } => report(&ctx, &traces, &sweeps, &cohorts),
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("trace")
        .to_string()
}

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn input_record(path: &Path) -> Result<InputRecord> {
    Ok(InputRecord {
        path: path.display().to_string(),
        digest: Some(sha256_hex(path)?),
    })
}

/// Reads a trace and resolves its metadata from the sidecar and flags.
fn load_measured(path: &Path, meta: &MetaArgs) -> Result<(ComplexTrace, TraceMeta)> {
    let trace = read_trace(path)?;
    let side_path = sidecar_path(path);
    let side = if side_path.exists() {
        Some(read_sidecar(&side_path)?)
    } else {
        None
    };
    let mut m = resolve_metadata(side.as_ref(), &meta.partial(), meta.sidecar_wins)
        .with_context(|| format!("metadata for {}", path.display()))?;
    if m.label.is_empty() {
        m.label = stem(path);
    }
    Ok((trace, m))
}

fn ingest(ctx: &Ctx, input: &Path, meta: &MetaArgs) -> Result<()> {
    let (trace, m) = load_measured(input, meta)?;
    let measured = attach_metadata(trace, m)?;
    let name = stem(input);
    let out = ctx.out(&format!("{name}.csv"));
    write_trace(&out, &measured.trace)?;
    write_sidecar(sidecar_path(&out), &measured.meta)?;
    let t = &measured.trace;
    println!(
        "{}: {} points, {:.6}..{:.6} GHz, {} dBm, {} dB attenuation, {} K",
        measured.meta.label,
        t.len(),
        t.f_min() * 1e-9,
        t.f_max() * 1e-9,
        measured.meta.vna_power_dbm,
        measured.meta.total_loss_db(),
        measured.meta.temperature_k
    );
    Ok(())
}

#[derive(Serialize)]
struct FitRecord {
    source: String,
    index: usize,
    window: ResonanceWindow,
    fit: Option<DcmResult>,
    error: Option<String>,
}

fn fit(ctx: &Ctx, inputs: &[PathBuf], whole: bool, prominence_db: Option<f64>) -> Result<()> {
    let opts = ctx.detect_options(prominence_db);
    let mut windows = Vec::new();
    let mut owners = Vec::new();
    for path in inputs {
        let trace = read_trace(path)?;
        let ws = if whole {
            vec![ResonanceWindow::whole(trace)]
        } else {
            detect_resonances(&trace, &opts)?
        };
        for (i, w) in ws.into_iter().enumerate() {
            owners.push((path.clone(), i));
            windows.push(w);
        }
    }
    let results = fit_windows(&windows, Execution::default());

    let mut records = Vec::new();
    let mut entries = Vec::new();
    let mut first_err = None;
    for (((path, i), window), res) in owners.into_iter().zip(windows).zip(results) {
        let label = format!("{}_{i}", stem(&path));
        let (fit, error) = match res {
            Ok(f) => {
                println!(
                    "{label}: f_c {:.6} GHz  Q_i {:.4e} ± {:.2e}  Q_c {:.4e} ± {:.2e}  Q_l {:.4e}",
                    f.f_c * 1e-9,
                    f.q_i,
                    f.ci95.q_i,
                    f.q_c,
                    f.ci95.q_c,
                    f.q_l
                );
                entries.push(ResonanceEntry {
                    label,
                    fit: f,
                    trace: None,
                });
                (Some(f), None)
            }
            Err(e) => {
                eprintln!("{label}: {e}");
                let msg = e.to_string();
                first_err.get_or_insert(e);
                (None, Some(msg))
            }
        };
        records.push(FitRecord {
            source: path.display().to_string(),
            index: i,
            window,
            fit,
            error,
        });
    }
    ctx.write_json("fits.json", &records)?;
    let csv_path = ctx.out("summary.csv");
    fs::write(&csv_path, summary_csv(&entries)?)
        .with_context(|| format!("writing {}", csv_path.display()))?;
    match first_err {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn sweep(
    ctx: &Ctx,
    inputs: &[PathBuf],
    name: &str,
    multistart: Option<usize>,
    meta: &MetaArgs,
) -> Result<()> {
    let mut fits = Vec::new();
    for path in inputs {
        let (trace, m) = load_measured(path, meta)?;
        let f = dcm_fit(&ResonanceWindow::whole(trace))
            .with_context(|| format!("circle fit of {}", path.display()))?;
        fits.push((f, m));
    }
    let temperature = fits[0].1.temperature_k;
    if fits.iter().any(|(_, m)| m.temperature_k != temperature) {
        log::warn!("traces disagree on temperature; using {temperature} K");
    }
    let points = build_power_sweep(&fits)?;
    let thermal = ThermalContext::new(fits[0].0.f_c, temperature)?;
    let mut opts = ctx.config.scurve;
    if let Some(m) = multistart {
        opts.multistart = m;
    }
    if let Some(s) = ctx.seed {
        opts.seed = s;
    }
    write_power_points(ctx.out(&format!("{name}_points.csv")), &points)?;
    let fit = fit_scurve_with(&points, &thermal, &opts)?;
    let (p, lo, hi) = (fit.params, fit.interval95.lo, fit.interval95.hi);
    println!(
        "F*tan(delta0) {:.4e}  [{:.4e}, {:.4e}]",
        p.f_dtls, lo.f_dtls, hi.f_dtls
    );
    println!(
        "n_c           {:.4e}  [{:.4e}, {:.4e}]",
        p.n_c, lo.n_c, hi.n_c
    );
    println!(
        "beta          {:.4}  [{:.4}, {:.4}]",
        p.beta, lo.beta, hi.beta
    );
    println!(
        "Q_hp          {:.4e}  [{:.4e}, {:.4e}]",
        p.q_hp, lo.q_hp, hi.q_hp
    );
    println!("reduced chi2  {:.3} ({} dof)", fit.reduced_chi2, fit.dof);
    for w in &fit.warnings {
        log::warn!("{w}");
    }
    let entry = SweepEntry {
        label: name.to_string(),
        points,
        fit: Some(fit),
    };
    ctx.write_json(&format!("{name}.sweep.json"), &entry)?;
    Ok(())
}

fn design(ctx: &Ctx, op: DesignOp) -> Result<()> {
    let out = match op {
        DesignOp::Coax {
            outer_m,
            inner_m,
            eps_r,
        } => json!({ "z0_ohm": coax_impedance(outer_m, inner_m, eps_r)? }),
        DesignOp::CoaxRatio { z0, eps_r } => {
            json!({ "outer_over_inner": coax_ratio_for_impedance(z0, eps_r) })
        }
        DesignOp::Ring {
            perimeter_m,
            eps_eff,
            f_hz,
            mode,
        } => match (eps_eff, f_hz) {
            (Some(e), _) => json!({ "f_hz": ring_resonance(perimeter_m, e, mode) }),
            (None, Some(f)) => json!({ "eps_eff": eps_eff_for(perimeter_m, f, mode) }),
            (None, None) => unreachable!("clap requires one of --eps-eff, --f-hz"),
        },
        DesignOp::Doublet { f_a, f_b, f_sim } => {
            let (alpha, delta) = analyze_doublet((f_a, f_b), f_sim);
            json!({ "alpha_hz": alpha, "delta_fc_hz": delta })
        }
        DesignOp::Coupling { curve, gap_m } => {
            let est = coupling_interpolate(&read_coupling_curve(&curve)?, gap_m)?;
            if est.extrapolated {
                log::warn!("gap {gap_m} m lies outside the curve; extrapolated");
            }
            serde_json::to_value(est)?
        }
        DesignOp::Table { input } => {
            let table = read_design_table(&input)?;
            let fresh: Vec<DesignEntry> = table
                .iter()
                .map(|e| {
                    DesignEntry::from_measurement(
                        e.perimeter_m,
                        e.f_sim_hz,
                        e.f_meas_hz,
                        e.slotline_f0_hz,
                    )
                })
                .collect();
            let path = ctx.out("design_table.csv");
            let file =
                fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
            write_design_table(file, &fresh)?;
            let rows: Vec<_> = table
                .iter()
                .zip(&fresh)
                .map(|(old, new)| {
                    json!({
                        "perimeter_m": new.perimeter_m,
                        "alpha_hz": new.alpha_hz,
                        "alpha_listed_hz": old.alpha_hz,
                        "delta_fc_hz": new.delta_fc_hz,
                    })
                })
                .collect();
            json!(rows)
        }
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn synth(ctx: &Ctx, kind: SynthKind) -> Result<()> {
    let seed = ctx.seed.unwrap_or(0);
    match kind {
        SynthKind::Resonance {
            f_c,
            q_i,
            q_c_mag,
            phi,
            tau_s,
            span_linewidths,
            points,
            snr_db,
            noise_sigma,
            output,
        } => {
            let truth = SynthTruth {
                f_c,
                q_i,
                q_c_mag,
                phi,
                tau_s,
                env_amp: 1.0,
                env_phase: 0.0,
            };
            let noise_sigma = match (snr_db, noise_sigma) {
                (Some(snr), _) => noise_sigma_for_snr(&truth, snr),
                (None, s) => s.unwrap_or(0.0),
            };
            let spec = SynthSpec {
                truth,
                grid: Grid::around(&truth, span_linewidths, points),
                noise_sigma,
                seed,
            };
            let trace = synth_resonance(&spec)?;
            let path = ctx.out(&output);
            write_trace(&path, &trace)?;
            ctx.write_json(
                &format!("{}.truth.json", stem(&path)),
                &json!({ "truth": truth, "noise_sigma": noise_sigma, "seed": seed }),
            )?;
            println!("wrote {} ({} points)", path.display(), trace.len());
            Ok(())
        }
        SynthKind::Sweep {
            f_c,
            f_dtls,
            n_c,
            beta,
            q_hp,
            q_c,
            temperature_k,
            attenuation_db,
            powers_dbm,
            noise_sigma,
            prefix,
        } => {
            let truth = ScurveParams {
                f_dtls,
                n_c,
                beta,
                q_hp,
            };
            let thermal = ThermalContext::new(f_c, temperature_k)?;
            let chain = TraceMeta {
                vna_power_dbm: 0.0,
                attenuation_db,
                temperature_k,
                label: prefix.clone(),
                role: TraceRole::Resonator,
                extra_loss_db: 0.0,
            };
            let opts = SweepSynthOptions {
                noise_sigma,
                seed,
                ..Default::default()
            };
            let samples = synth_power_sweep(&truth, &thermal, q_c, &powers_dbm, &chain, &opts)?;
            let mut listing = Vec::new();
            for (i, s) in samples.iter().enumerate() {
                let path = ctx.out(&format!("{prefix}{i:02}.s2p"));
                write_trace(&path, &s.measured.trace)?;
                write_sidecar(sidecar_path(&path), &s.measured.meta)?;
                println!(
                    "wrote {}  {} dBm  <n> {:.3e}  Q_i {:.4e}",
                    path.display(),
                    s.measured.meta.vna_power_dbm,
                    s.n_mean,
                    s.truth.q_i
                );
                listing.push(json!({
                    "file": path.file_name().and_then(|n| n.to_str()),
                    "power_dbm": s.measured.meta.vna_power_dbm,
                    "n_mean": s.n_mean,
                    "truth": s.truth,
                }));
            }
            ctx.write_json(
                &format!("{prefix}_truth.json"),
                &json!({ "scurve": truth, "q_c": q_c, "traces": listing, "seed": seed }),
            )?;
            Ok(())
        }
    }
}

fn report(ctx: &Ctx, traces: &[PathBuf], sweeps: &[PathBuf], cohorts: &[String]) -> Result<()> {
    let mut bundle = AnalysisBundle::default();
    for path in traces {
        let trace = read_trace(path)?;
        let fit = dcm_fit(&ResonanceWindow::whole(trace.clone()))
            .with_context(|| format!("circle fit of {}", path.display()))?;
        bundle.resonances.push(ResonanceEntry {
            label: stem(path),
            fit,
            trace: Some(trace),
        });
        bundle.inputs.push(input_record(path)?);
    }
    for path in sweeps {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let entry: SweepEntry =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        bundle.sweeps.push(entry);
        bundle.inputs.push(input_record(path)?);
    }
    for spec in cohorts {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| anyhow!("--cohort expects NAME=PATH, got {spec:?}"))?;
        let path = Path::new(path);
        bundle.cohorts.push(read_cohort(name, path)?);
        bundle.inputs.push(input_record(path)?);
    }
    for p in emit_report(&bundle, &ctx.out_dir)? {
        println!("{}", p.display());
    }
    Ok(())
}
