//! Ensemble statistics and report emission (JSON, CSV, SVG).

mod stats;
pub mod svg;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use stats::{aggregate, compare_cohorts, percentile, CohortComparison, LossStats};

use crate::circlefit::{dcm_model, DcmResult};
use crate::error::{Error, Result};
use crate::photon::PowerPoint;
use crate::scurve::{scurve_model, ScurveFit};
use crate::trace_io::ComplexTrace;
use svg::{Axis, Plot, PALETTE};

pub const SCHEMA_VERSION: u32 = 1;

/// Metrics taken from S-curve fits for the ensemble panels, with whether
/// each is plotted on a log axis.
pub const SCURVE_METRICS: [(&str, bool); 4] = [
    ("f_dtls", false),
    ("n_c", true),
    ("beta", false),
    ("q_hp", true),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceEntry {
    pub label: String,
    pub fit: DcmResult,
    /// Window data for plotting; not written to the report.
    #[serde(skip)]
    pub trace: Option<ComplexTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub label: String,
    pub points: Vec<PowerPoint>,
    pub fit: Option<ScurveFit>,
}

/// Named collection of per-resonator metric values (e.g. a reference
/// package measured elsewhere).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub name: String,
    pub metrics: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    /// Content digest, if the caller computed one.
    pub digest: Option<String>,
}

/// Everything a report is built from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnalysisBundle {
    pub resonances: Vec<ResonanceEntry>,
    pub sweeps: Vec<SweepEntry>,
    /// Extra cohorts. The converged sweeps in the bundle form an implicit
    /// first cohort named `this`.
    pub cohorts: Vec<Cohort>,
    pub inputs: Vec<InputRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub cohort: String,
    pub metric: String,
    pub stats: LossStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub metric: String,
    pub a: String,
    pub b: String,
    pub comparison: CohortComparison,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub schema_version: u32,
    pub resonances: Vec<ResonanceEntry>,
    pub sweeps: Vec<SweepEntry>,
    pub statistics: Vec<MetricStats>,
    pub comparisons: Vec<MetricComparison>,
    pub inputs: Vec<InputRecord>,
}

fn all_cohorts(bundle: &AnalysisBundle) -> Vec<Cohort> {
    let mut own = Cohort {
        name: "this".into(),
        metrics: BTreeMap::new(),
    };
    for fit in bundle.sweeps.iter().filter_map(|s| s.fit.as_ref()) {
        let p = fit.params;
        for (name, v) in [
            ("f_dtls", p.f_dtls),
            ("n_c", p.n_c),
            ("beta", p.beta),
            ("q_hp", p.q_hp),
        ] {
            own.metrics.entry(name.to_string()).or_default().push(v);
        }
    }
    let mut out = Vec::new();
    if !own.metrics.is_empty() {
        out.push(own);
    }
    out.extend(bundle.cohorts.iter().cloned());
    out
}

/// Builds the report document: per-metric statistics for every cohort and
/// comparisons of the first cohort against each other one.
pub fn build_report(bundle: &AnalysisBundle) -> Result<ReportDoc> {
    let cohorts = all_cohorts(bundle);
    let mut statistics = Vec::new();
    for c in &cohorts {
        for (metric, values) in &c.metrics {
            if values.is_empty() {
                continue;
            }
            statistics.push(MetricStats {
                cohort: c.name.clone(),
                metric: metric.clone(),
                stats: aggregate(values)?,
            });
        }
    }
    let mut comparisons = Vec::new();
    if let Some(first) = cohorts.first() {
        for other in &cohorts[1..] {
            for metric in first.metrics.keys() {
                let find = |name: &str| {
                    statistics
                        .iter()
                        .find(|s| s.cohort == name && &s.metric == metric)
                        .map(|s| &s.stats)
                };
                if let (Some(a), Some(b)) = (find(&first.name), find(&other.name)) {
                    comparisons.push(MetricComparison {
                        metric: metric.clone(),
                        a: first.name.clone(),
                        b: other.name.clone(),
                        comparison: compare_cohorts(a, b),
                    });
                }
            }
        }
    }
    Ok(ReportDoc {
        schema_version: SCHEMA_VERSION,
        resonances: bundle.resonances.clone(),
        sweeps: bundle.sweeps.clone(),
        statistics,
        comparisons,
        inputs: bundle.inputs.clone(),
    })
}

/// Column order of `summary.csv`.
pub const SUMMARY_COLUMNS: [&str; 13] = [
    "label",
    "f_c_hz",
    "f_c_ci95_hz",
    "q_i",
    "q_i_ci95",
    "q_c",
    "q_c_ci95",
    "q_l",
    "q_c_mag",
    "phi_rad",
    "tau_s",
    "rms_residual",
    "noise_sigma",
];

/// Reads a cohort from CSV: one column per metric, blank cells skipped.
pub fn read_cohort(name: &str, path: impl AsRef<Path>) -> Result<Cohort> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(f);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut metrics: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (h, cell) in headers.iter().zip(rec.iter()) {
            if cell.is_empty() {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: row + 2,
                msg: format!("{h}: {cell:?} is not a number"),
            })?;
            metrics.entry(h.clone()).or_default().push(v);
        }
    }
    Ok(Cohort {
        name: name.to_string(),
        metrics,
    })
}

pub fn summary_csv(resonances: &[ResonanceEntry]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_COLUMNS)?;
    for r in resonances {
        let f = &r.fit;
        let nums = [
            f.f_c,
            f.ci95.f_c,
            f.q_i,
            f.ci95.q_i,
            f.q_c,
            f.ci95.q_c,
            f.q_l,
            f.q_c_mag,
            f.phi,
            f.tau_s,
            f.rms_residual,
            f.noise_sigma,
        ];
        let mut rec = vec![r.label.clone()];
        rec.extend(nums.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io("summary.csv", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn file_stem(i: usize, label: &str) -> String {
    let clean: String = label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{i:03}_{clean}")
}

fn magnitude_plot(entry: &ResonanceEntry, trace: &ComplexTrace) -> String {
    let p = entry.fit.params();
    let f_ghz: Vec<f64> = trace.freq().iter().map(|f| f * 1e-9).collect();
    let data: Vec<(f64, f64)> = f_ghz.iter().copied().zip(trace.magnitude_db()).collect();
    let model: Vec<(f64, f64)> = trace
        .freq()
        .iter()
        .map(|&f| (f * 1e-9, 20.0 * dcm_model(f, &p).norm().log10()))
        .collect();
    let ys: Vec<f64> = data.iter().chain(&model).map(|q| q.1).collect();
    let mut plot = Plot::new(
        &format!("{} |S21|", entry.label),
        Axis::fit(&f_ghz, false, "frequency (GHz)"),
        Axis::fit(&ys, false, "|S21| (dB)"),
    );
    plot.points(&data, PALETTE[0], "data");
    plot.line(&model, PALETTE[1], "DCM fit");
    plot.finish()
}

fn circle_plot(entry: &ResonanceEntry, trace: &ComplexTrace) -> String {
    let p = entry.fit.params();
    let data: Vec<(f64, f64)> = trace.s21().iter().map(|z| (z.re, z.im)).collect();
    let model: Vec<(f64, f64)> = trace
        .freq()
        .iter()
        .map(|&f| {
            let z = dcm_model(f, &p);
            (z.re, z.im)
        })
        .collect();
    let xs: Vec<f64> = data.iter().chain(&model).map(|q| q.0).collect();
    let ys: Vec<f64> = data.iter().chain(&model).map(|q| q.1).collect();
    let mut plot = Plot::new(
        &format!("{} complex plane", entry.label),
        Axis::fit(&xs, false, "Re S21"),
        Axis::fit(&ys, false, "Im S21"),
    );
    plot.points(&data, PALETTE[0], "data");
    plot.line(&model, PALETTE[1], "DCM fit");
    plot.finish()
}

fn scurve_plot(sweep: &SweepEntry) -> String {
    let n: Vec<f64> = sweep.points.iter().map(|p| p.n_mean).collect();
    let mut ys: Vec<f64> = sweep.points.iter().map(|p| p.inv_qi).collect();
    let curve: Vec<(f64, f64)> = match &sweep.fit {
        Some(fit) => {
            let (lo, hi) = n
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                    (a.min(v), b.max(v))
                });
            (0..200)
                .map(|k| {
                    let x = lo * (hi / lo).powf(k as f64 / 199.0);
                    (x, scurve_model(x, &fit.params, &fit.thermal))
                })
                .collect()
        }
        None => Vec::new(),
    };
    ys.extend(curve.iter().map(|c| c.1));
    let mut plot = Plot::new(
        &format!("{} power sweep", sweep.label),
        Axis::fit(&n, true, "<n>"),
        Axis::fit(&ys, true, "1/Qi"),
    );
    let pts: Vec<(f64, f64)> = sweep.points.iter().map(|p| (p.n_mean, p.inv_qi)).collect();
    let bars: Vec<(f64, f64, f64)> = sweep
        .points
        .iter()
        .map(|p| (p.n_mean, p.inv_qi, 1.96 * p.sigma_inv_qi))
        .collect();
    plot.error_bars(&bars, PALETTE[0]);
    plot.points(&pts, PALETTE[0], "measured");
    if !curve.is_empty() {
        plot.line(&curve, PALETTE[1], "S-curve fit");
    }
    plot.finish()
}

fn boxplot(doc: &ReportDoc) -> Option<String> {
    let mut metrics: Vec<(String, bool)> = SCURVE_METRICS
        .iter()
        .map(|(m, log)| (m.to_string(), *log))
        .collect();
    for s in &doc.statistics {
        if !metrics.iter().any(|(m, _)| m == &s.metric) {
            metrics.push((s.metric.clone(), false));
        }
    }
    let panels: Vec<svg::Panel> = metrics
        .into_iter()
        .filter_map(|(m, log)| {
            let boxes: Vec<(String, LossStats)> = doc
                .statistics
                .iter()
                .filter(|s| s.metric == m)
                .map(|s| (s.cohort.clone(), s.stats.clone()))
                .collect();
            (!boxes.is_empty()).then_some((m, log, boxes))
        })
        .collect();
    (!panels.is_empty()).then(|| svg::box_panels("ensemble statistics", &panels))
}

/// Renders every output file in memory: `(file name, contents)`.
pub fn render_report(bundle: &AnalysisBundle) -> Result<Vec<(String, String)>> {
    let doc = build_report(bundle)?;
    let mut files = vec![
        (
            "report.json".to_string(),
            serde_json::to_string_pretty(&doc)? + "\n",
        ),
        ("summary.csv".to_string(), summary_csv(&bundle.resonances)?),
    ];
    for (i, r) in bundle.resonances.iter().enumerate() {
        if let Some(t) = &r.trace {
            let stem = file_stem(i, &r.label);
            files.push((format!("{stem}_s21.svg"), magnitude_plot(r, t)));
            files.push((format!("{stem}_circle.svg"), circle_plot(r, t)));
        }
    }
    for (i, s) in bundle.sweeps.iter().enumerate() {
        if !s.points.is_empty() {
            files.push((
                format!("{}_scurve.svg", file_stem(i, &s.label)),
                scurve_plot(s),
            ));
        }
    }
    if let Some(b) = boxplot(&doc) {
        files.push(("ensemble_boxplots.svg".to_string(), b));
    }
    Ok(files)
}

/// Writes the report into `out_dir` (created if missing) and returns the
/// paths written. If any write fails, files already written are removed.
pub fn emit_report(bundle: &AnalysisBundle, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    let files = render_report(bundle)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::with_capacity(files.len());
    for (name, contents) in files {
        let path = out_dir.join(name);
        if let Err(e) = fs::write(&path, contents) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            let _ = fs::remove_file(&path);
            return Err(Error::io(path, e));
        }
        written.push(path);
    }
    Ok(written)
}

pub fn load_report(path: impl AsRef<Path>) -> Result<ReportDoc> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: ReportDoc = serde_json::from_str(&text)?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(Error::validation(
            "schema_version",
            format!("expected {SCHEMA_VERSION}, found {}", doc.schema_version),
        ));
    }
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circlefit::DcmCi;

    fn fit(f_c: f64) -> DcmResult {
        DcmResult {
            f_c,
            q_l: 8.9e5,
            q_c_mag: 5e7,
            q_c: 5.1e7,
            phi: 0.2,
            q_i: 9.1e5,
            tau_s: 1e-8,
            env_amp: 1.0,
            env_phase: 0.1,
            ci95: DcmCi::default(),
            rms_residual: 1e-4,
            noise_sigma: 1e-4,
            iterations: 7,
            window_hz: (f_c - 1e5, f_c + 1e5),
        }
    }

    #[test]
    fn empty_bundle_gives_two_files() {
        let files = render_report(&AnalysisBundle::default()).unwrap();
        let names: Vec<_> = files.iter().map(|f| f.0.as_str()).collect();
        assert_eq!(names, ["report.json", "summary.csv"]);
        assert_eq!(files[1].1.lines().count(), 1);
    }

    #[test]
    fn summary_has_fixed_columns() {
        let b = vec![ResonanceEntry {
            label: "r0".into(),
            fit: fit(6.072e9),
            trace: None,
        }];
        let csv = summary_csv(&b).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), SUMMARY_COLUMNS.join(","));
        assert!(lines.next().unwrap().starts_with("r0,6072000000.0,"));
    }

    #[test]
    fn comparisons_against_extra_cohort() {
        let mut m = BTreeMap::new();
        m.insert("f_dtls".to_string(), vec![1.0, 2.0, 3.0]);
        let bundle = AnalysisBundle {
            cohorts: vec![
                Cohort {
                    name: "a".into(),
                    metrics: m.clone(),
                },
                Cohort {
                    name: "b".into(),
                    metrics: m,
                },
            ],
            ..Default::default()
        };
        let doc = build_report(&bundle).unwrap();
        assert_eq!(doc.statistics.len(), 2);
        assert_eq!(doc.comparisons.len(), 1);
        assert_eq!(doc.comparisons[0].comparison.std_ratio, 1.0);
        let files = render_report(&bundle).unwrap();
        assert!(files.iter().any(|f| f.0 == "ensemble_boxplots.svg"));
    }

    #[test]
    fn file_stems_are_safe() {
        assert_eq!(file_stem(3, "ring 0/a"), "003_ring_0_a");
    }
}
