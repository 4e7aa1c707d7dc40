use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn resokit(out_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resokit"))
        .arg("--out-dir")
        .arg(out_dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn synth_sweep_then_report() {
    let d = tempfile::tempdir().unwrap();
    let o = resokit(
        d.path(),
        &[
            "--seed",
            "4",
            "synth",
            "sweep",
            "--powers-dbm=-60,-45,-30,-15,0",
        ],
    );
    assert!(o.status.success(), "{o:?}");
    assert!(d.path().join("p04.meta.json").exists());

    let traces: Vec<String> = (0..5)
        .map(|i| d.path().join(format!("p{i:02}.s2p")).display().to_string())
        .collect();
    let mut args = vec!["sweep", "--name", "dev"];
    args.extend(traces.iter().map(String::as_str));
    let o = resokit(d.path(), &args);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("Q_hp"));
    let sweep = d.path().join("dev.sweep.json");
    let entry: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&sweep).unwrap()).unwrap();
    let q_hp = entry["fit"]["params"]["q_hp"].as_f64().unwrap();
    assert!((q_hp / 5e6 - 1.0).abs() < 1e-3, "{q_hp}");

    let rep = d.path().join("rep");
    let o = Command::new(env!("CARGO_BIN_EXE_resokit"))
        .arg("--out-dir")
        .arg(&rep)
        .args(["report", "--trace", &traces[0], "--sweep"])
        .arg(&sweep)
        .output()
        .unwrap();
    assert!(o.status.success(), "{o:?}");
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(rep.join("report.json")).unwrap()).unwrap();
    assert_eq!(doc["schema_version"], 1);
    let inputs = doc["inputs"].as_array().unwrap();
    assert_eq!(inputs.len(), 2);
    assert_eq!(inputs[0]["digest"].as_str().unwrap().len(), 64);
    assert!(rep.join("000_p00_circle.svg").exists());
    assert!(rep.join("000_dev_scurve.svg").exists());
}

#[test]
fn fit_writes_summary() {
    let d = tempfile::tempdir().unwrap();
    let o = resokit(
        d.path(),
        &["synth", "resonance", "--phi", "0.2", "--tau-s", "1e-8"],
    );
    assert!(o.status.success(), "{o:?}");
    let trace = d.path().join("synth.s2p");
    let o = resokit(
        d.path(),
        &["--threads", "2", "fit", "--whole", trace.to_str().unwrap()],
    );
    assert!(o.status.success(), "{o:?}");
    let csv = fs::read_to_string(d.path().join("summary.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("label,f_c_hz,f_c_ci95_hz,q_i"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let q_i: f64 = row[3].parse().unwrap();
    assert!((q_i / 9.1e5 - 1.0).abs() < 1e-6);
}

#[test]
fn design_ops_print_json() {
    let d = tempfile::tempdir().unwrap();
    let o = resokit(d.path(), &["design", "coax-ratio", "--z0", "50"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let ratio = v["outer_over_inner"].as_f64().unwrap();
    assert!((ratio - 2.30313).abs() < 1e-5);

    let o = resokit(
        d.path(),
        &[
            "design", "doublet", "--f-a", "6.0689e9", "--f-b", "6.0751e9", "--f-sim", "6.5463e9",
        ],
    );
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["delta_fc_hz"].as_f64().unwrap() - 6.2e6).abs() < 1.0);

    let curve = d.path().join("curve.csv");
    fs::write(&curve, "gap_m,q_c\n1e-5,1e5\n2e-5,1e6\n").unwrap();
    let o = resokit(
        d.path(),
        &[
            "design",
            "coupling",
            "--curve",
            curve.to_str().unwrap(),
            "--gap-m",
            "1.5e-5",
        ],
    );
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["q_c"].as_f64().unwrap() / 10f64.powf(5.5) - 1.0).abs() < 1e-12);
    assert_eq!(v["extrapolated"], false);
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let o = resokit(d.path(), &["detect", "/definitely/missing.s2p"]);
    assert_eq!(o.status.code(), Some(3));

    let o = resokit(
        d.path(),
        &["design", "coax", "--outer-m", "1", "--inner-m", "2"],
    );
    assert_eq!(o.status.code(), Some(1));

    let o = resokit(d.path(), &["no-such-command"]);
    assert_eq!(o.status.code(), Some(1));

    // Power missing from both flags and sidecar.
    resokit(d.path(), &["synth", "resonance"]);
    let trace = d.path().join("synth.s2p");
    let o = resokit(d.path(), &["ingest", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    let cfg = d.path().join("bad.json");
    fs::write(&cfg, r#"{"detect": {"prominence": 2}}"#).unwrap();
    let o = resokit(
        d.path(),
        &["--config", cfg.to_str().unwrap(), "design", "coax-ratio"],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sidecar_override_flag() {
    let d = tempfile::tempdir().unwrap();
    resokit(
        d.path(),
        &["synth", "sweep", "--powers-dbm=-50,-40", "--prefix", "s"],
    );
    let trace = d.path().join("s00.s2p");
    let out = d.path().join("ing");
    let run = |extra: &[&str]| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_resokit"));
        c.arg("--out-dir")
            .arg(&out)
            .arg("ingest")
            .arg(&trace)
            .args(["--power-dbm=-20"])
            .args(extra);
        let o = c.output().unwrap();
        assert!(o.status.success(), "{o:?}");
        let side: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("s00.meta.json")).unwrap()).unwrap();
        side["vna_power_dbm"].as_f64().unwrap()
    };
    assert_eq!(run(&[]), -20.0);
    assert_eq!(run(&["--sidecar-wins"]), -50.0);
}
