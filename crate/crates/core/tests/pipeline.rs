use std::fs;

use resokit::baseline::{detect_resonances, DetectOptions, ResonanceWindow};
use resokit::circlefit::{dcm_fit, fit_windows};
use resokit::photon::build_power_sweep;
use resokit::report::{emit_report, load_report, AnalysisBundle, ResonanceEntry, SweepEntry};
use resokit::scurve::{fit_scurve, ScurveParams, ThermalContext};
use resokit::synth::{
    synth_doublet, synth_power_sweep, Grid, SweepSynthOptions, SynthSpec, SynthTruth,
};
use resokit::trace_io::{
    read_sidecar, read_trace, resolve_metadata, sidecar_path, write_sidecar, write_trace,
    PartialMeta, TraceMeta, TraceRole,
};
use resokit::Execution;

fn chain() -> TraceMeta {
    TraceMeta {
        vna_power_dbm: 0.0,
        attenuation_db: 80.0,
        temperature_k: 0.015,
        label: "sweep".into(),
        role: TraceRole::Resonator,
        extra_loss_db: 0.0,
    }
}

#[test]
fn doublet_detect_and_fit_in_both_modes() {
    let a = SynthTruth {
        f_c: 6.072e9,
        q_i: 9e5,
        q_c_mag: 1.2e6,
        phi: 0.1,
        tau_s: 0.0,
        env_amp: 1.0,
        env_phase: 0.0,
    };
    let b = SynthTruth {
        f_c: 6.078e9,
        q_i: 6e5,
        ..a
    };
    let grid = Grid {
        f_lo: 6.06e9,
        f_hi: 6.09e9,
        n_points: 12001,
    };
    let spec = |t| SynthSpec {
        truth: t,
        grid,
        noise_sigma: 0.0,
        seed: 1,
    };
    let trace = synth_doublet(&spec(a), &spec(b)).unwrap();
    let windows = detect_resonances(&trace, &DetectOptions::default()).unwrap();
    assert_eq!(windows.len(), 2);

    let seq = fit_windows(&windows, Execution::Sequential);
    let par = fit_windows(&windows, Execution::Parallel);
    for ((s, p), t) in seq.iter().zip(&par).zip([a, b]) {
        let (s, p) = (s.as_ref().unwrap(), p.as_ref().unwrap());
        assert_eq!(s, p);
        // Overlapping tails bias each fit slightly.
        assert!(
            (s.q_i - t.q_i).abs() / t.q_i < 0.05,
            "{} vs {}",
            s.q_i,
            t.q_i
        );
        assert!((s.f_c - t.f_c).abs() < 0.05 * t.linewidth_hz());
    }
}

fn sweep_bundle(dir: &std::path::Path) -> AnalysisBundle {
    let truth = ScurveParams {
        f_dtls: 1.1e-6,
        n_c: 2000.0,
        beta: 0.2,
        q_hp: 5e6,
    };
    let ctx = ThermalContext::new(6.072e9, 0.015).unwrap();
    let powers = [-60.0, -45.0, -30.0, -15.0, 0.0];
    let samples = synth_power_sweep(
        &truth,
        &ctx,
        5e7,
        &powers,
        &chain(),
        &SweepSynthOptions::default(),
    )
    .unwrap();

    // Through the file formats and sidecars, as the CLI would.
    let mut fits = Vec::new();
    let mut resonances = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let path = dir.join(format!("p{i}.s2p"));
        write_trace(&path, &s.measured.trace).unwrap();
        write_sidecar(sidecar_path(&path), &s.measured.meta).unwrap();
        let trace = read_trace(&path).unwrap();
        let side = read_sidecar(sidecar_path(&path)).unwrap();
        let meta = resolve_metadata(Some(&side), &PartialMeta::default(), false).unwrap();
        assert_eq!(meta, s.measured.meta);
        let fit = dcm_fit(&ResonanceWindow::whole(trace.clone())).unwrap();
        fits.push((fit, meta.clone()));
        resonances.push(ResonanceEntry {
            label: meta.label.clone(),
            fit,
            trace: Some(trace),
        });
    }
    let points = build_power_sweep(&fits).unwrap();
    let fit = fit_scurve(&points, &ctx).unwrap();
    for (got, want) in fit.params.as_array().iter().zip(truth.as_array()) {
        assert!((got - want).abs() / want < 1e-4, "{got} vs {want}");
    }
    AnalysisBundle {
        resonances: resonances.into_iter().take(1).collect(),
        sweeps: vec![SweepEntry {
            label: "sweep".into(),
            points,
            fit: Some(fit),
        }],
        ..Default::default()
    }
}

#[test]
fn sweep_report_is_deterministic_and_loads() {
    let work = tempfile::tempdir().unwrap();
    let bundle = sweep_bundle(work.path());
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let a = emit_report(&bundle, d1.path()).unwrap();
    let b = emit_report(&bundle, d2.path()).unwrap();
    assert!(a.len() >= 4, "{a:?}");
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{x:?}");
    }
    let doc = load_report(d1.path().join("report.json")).unwrap();
    assert_eq!(doc.resonances.len(), 1);
    assert_eq!(doc.sweeps[0].points.len(), 5);
    assert!(doc.sweeps[0].fit.is_some());
    assert!(doc.statistics.iter().any(|s| s.metric == "q_hp"));
}

#[test]
fn empty_bundle_report_is_valid() {
    let d = tempfile::tempdir().unwrap();
    let files = emit_report(&AnalysisBundle::default(), d.path()).unwrap();
    assert_eq!(files.len(), 2);
    let doc = load_report(d.path().join("report.json")).unwrap();
    assert!(doc.resonances.is_empty() && doc.sweeps.is_empty());
    let csv = fs::read_to_string(d.path().join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn inline_metadata_overrides_sidecar_unless_asked() {
    let d = tempfile::tempdir().unwrap();
    let path = d.path().join("t.s2p");
    write_sidecar(sidecar_path(&path), &chain()).unwrap();
    let side = read_sidecar(sidecar_path(&path)).unwrap();
    let inline = PartialMeta {
        vna_power_dbm: Some(-20.0),
        ..Default::default()
    };
    assert_eq!(
        resolve_metadata(Some(&side), &inline, false)
            .unwrap()
            .vna_power_dbm,
        -20.0
    );
    assert_eq!(
        resolve_metadata(Some(&side), &inline, true)
            .unwrap()
            .vna_power_dbm,
        0.0
    );
    let err = resolve_metadata(None, &inline, false).unwrap_err();
    assert!(!err.is_io() && !err.is_fit_failure());
}

#[test]
fn missing_file_is_io_error() {
    let err = read_trace("/nonexistent/trace.s2p").unwrap_err();
    assert!(err.is_io());
}
