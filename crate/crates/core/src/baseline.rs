//! Background handling ahead of circle fitting: ripple against a through
//! reference, cable-delay removal, resonance detection and per-window
//! normalization.
//!
//! "Wings" are the outer 10% of a window's points on each side.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace_io::ComplexTrace;
use crate::units::{median, unwrap_phase};

pub const WING_FRACTION: f64 = 0.1;
const MIN_WING_POINTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RippleReport {
    pub band_hz: (f64, f64),
    pub max_abs_diff_db: f64,
    pub mean_diff_db: f64,
    pub threshold_db: f64,
    pub n_points: usize,
    pub pass: bool,
}

/// Linear interpolation of `y(x)` at `x0`; `x` ascending and covering `x0`.
fn interp(x: &[f64], y: &[f64], x0: f64) -> f64 {
    let i = x.partition_point(|&v| v <= x0);
    if i == 0 {
        return y[0];
    }
    if i >= x.len() {
        return y[x.len() - 1];
    }
    let (x1, x2) = (x[i - 1], x[i]);
    y[i - 1] + (y[i] - y[i - 1]) * (x0 - x1) / (x2 - x1)
}

/// Compares `device` against `through` over `band`, in dB. The through
/// trace is interpolated (linear in dB) onto the device grid.
pub fn ripple_metric(
    device: &ComplexTrace,
    through: &ComplexTrace,
    band: (f64, f64),
    threshold_db: f64,
) -> Result<RippleReport> {
    let (lo, hi) = band;
    if !(hi > lo) {
        return Err(Error::validation("band", format!("empty band {lo}..{hi}")));
    }
    for (which, t) in [("device", device), ("through", through)] {
        if lo < t.f_min() || hi > t.f_max() {
            return Err(Error::Coverage {
                which,
                lo_hz: lo,
                hi_hz: hi,
                have_lo: t.f_min(),
                have_hi: t.f_max(),
            });
        }
    }
    let thru_db = through.magnitude_db();
    let diffs: Vec<f64> = device
        .iter()
        .filter(|(f, _)| *f >= lo && *f <= hi)
        .map(|(f, z)| 20.0 * z.norm().log10() - interp(through.freq(), &thru_db, f))
        .collect();
    if diffs.is_empty() {
        return Err(Error::Degenerate(
            "no device samples inside the band".into(),
        ));
    }
    let max_abs = diffs.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    Ok(RippleReport {
        band_hz: band,
        max_abs_diff_db: max_abs,
        mean_diff_db: mean,
        threshold_db,
        n_points: diffs.len(),
        pass: max_abs < threshold_db,
    })
}

/// Index ranges of the two wings.
pub fn wing_ranges(n: usize) -> Result<(std::ops::Range<usize>, std::ops::Range<usize>)> {
    let w = (n as f64 * WING_FRACTION).floor() as usize;
    if w < MIN_WING_POINTS {
        return Err(Error::Degenerate(format!(
            "window of {n} points has no off-resonant wings (need >= {} points)",
            (MIN_WING_POINTS as f64 / WING_FRACTION).ceil()
        )));
    }
    Ok((0..w, n - w..n))
}

/// Cable delay from the wing phase slope: one common slope with a
/// separate intercept per wing.
pub fn estimate_delay(trace: &ComplexTrace) -> Result<f64> {
    let (left, right) = wing_ranges(trace.len())?;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for r in [left, right] {
        let f = &trace.freq()[r.clone()];
        let ph = unwrap_phase(&trace.s21()[r].iter().map(|z| z.arg()).collect::<Vec<_>>());
        let n = f.len() as f64;
        let fm = f.iter().sum::<f64>() / n;
        let pm = ph.iter().sum::<f64>() / n;
        for (x, y) in f.iter().zip(&ph) {
            sxy += (x - fm) * (y - pm);
            sxx += (x - fm) * (x - fm);
        }
    }
    if sxx == 0.0 {
        return Err(Error::Degenerate("wings have no frequency extent".into()));
    }
    Ok(-(sxy / sxx) / (2.0 * PI))
}

/// Multiplies the trace by `exp(+2 pi i f tau)` with `tau` from [`estimate_delay`].
pub fn remove_cable_delay(window: &ComplexTrace) -> Result<(ComplexTrace, f64)> {
    let tau = estimate_delay(window)?;
    let out = window.map(|f, z| z * Complex64::from_polar(1.0, 2.0 * PI * f * tau))?;
    Ok((out, tau))
}

/// Complex baseline from the wings: median magnitude times `e^{i median phase}`.
pub fn wing_baseline(trace: &ComplexTrace) -> Result<Complex64> {
    let (left, right) = wing_ranges(trace.len())?;
    let wings: Vec<Complex64> = trace.s21()[left]
        .iter()
        .chain(&trace.s21()[right])
        .copied()
        .collect();
    let mut mags: Vec<f64> = wings.iter().map(|z| z.norm()).collect();
    let amp = median(&mut mags);
    if !(amp > 0.0) {
        return Err(Error::Degenerate(
            "wing amplitude is zero; cannot normalize".into(),
        ));
    }
    let reference = wings[0];
    if reference.norm() == 0.0 {
        return Err(Error::Degenerate("wing sample with zero amplitude".into()));
    }
    let mut rel: Vec<f64> = wings.iter().map(|z| (z / reference).arg()).collect();
    let phase = median(&mut rel) + reference.arg();
    Ok(Complex64::from_polar(amp, phase))
}

/// Divides out the complex wing baseline, returning the normalized trace and the baseline.
pub fn normalize_trace(trace: &ComplexTrace) -> Result<(ComplexTrace, Complex64)> {
    let b = wing_baseline(trace)?;
    Ok((trace.map(|_, z| z / b)?, b))
}

/// Sub-span of a trace holding one resonance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResonanceWindow {
    #[serde(skip)]
    pub trace: ComplexTrace,
    pub f_guess: f64,
    pub span_hz: f64,
    /// Dip width at half prominence, Hz.
    pub linewidth_hz: f64,
    pub prominence_db: f64,
    pub doublet_partner: Option<f64>,
}

impl ResonanceWindow {
    /// Treats an entire trace as one window centred on its deepest point.
    pub fn whole(trace: ComplexTrace) -> Self {
        let db = trace.magnitude_db();
        let imin = argmin(&db);
        let f_guess = trace.freq()[imin];
        let span_hz = trace.f_max() - trace.f_min();
        let prom = db.iter().cloned().fold(f64::MIN, f64::max) - db[imin];
        let power: Vec<f64> = trace.s21().iter().map(|z| z.norm_sqr()).collect();
        let lw = half_depth_width(trace.freq(), &power, imin, prom).unwrap_or(span_hz / 10.0);
        Self {
            trace,
            f_guess,
            span_hz,
            linewidth_hz: lw,
            prominence_db: prom,
            doublet_partner: None,
        }
    }
}

pub fn normalize_window(window: &ResonanceWindow) -> Result<ResonanceWindow> {
    let (trace, _) = normalize_trace(&window.trace)?;
    Ok(ResonanceWindow {
        trace,
        ..window.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectOptions {
    pub prominence_db: f64,
    /// Minima closer than this are merged, keeping the deeper one.
    pub min_separation_hz: f64,
    /// Minima are doublet partners when closer than
    /// `max(pair_linewidths * linewidth, pairing_span_hz)`.
    pub pair_linewidths: f64,
    pub pairing_span_hz: f64,
    /// Window span in estimated linewidths (at least 10).
    pub window_linewidths: f64,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self {
            prominence_db: 1.0,
            min_separation_hz: 0.0,
            pair_linewidths: 20.0,
            pairing_span_hz: 20e6,
            window_linewidths: 40.0,
        }
    }
}

fn argmin(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

fn prominence(db: &[f64], i: usize) -> f64 {
    let v = db[i];
    let mut left = v;
    for &x in db[..i].iter().rev() {
        if x < v {
            break;
        }
        left = left.max(x);
    }
    let mut right = v;
    for &x in &db[i + 1..] {
        if x < v {
            break;
        }
        right = right.max(x);
    }
    left.min(right) - v
}

// Full width at half depth of the dip in linear power, measured against the
// prominence reference level. For a notch this equals f_c / Q_l exactly.
fn half_depth_width(freq: &[f64], power: &[f64], i: usize, prom_db: f64) -> Option<f64> {
    let base = power[i] * 10f64.powf(prom_db / 10.0);
    let level = 0.5 * (power[i] + base);
    let cross = |j: usize, k: usize| {
        let t = (level - power[j]) / (power[k] - power[j]);
        freq[j] + t * (freq[k] - freq[j])
    };
    let mut lo = None;
    for j in (0..i).rev() {
        if power[j] >= level {
            lo = Some(cross(j + 1, j));
            break;
        }
    }
    let mut hi = None;
    for (j, &p) in power.iter().enumerate().skip(i + 1) {
        if p >= level {
            hi = Some(cross(j - 1, j));
            break;
        }
    }
    let step = freq[1] - freq[0];
    match (lo, hi) {
        (Some(a), Some(b)) => Some((b - a).max(step)),
        (Some(a), None) => Some((2.0 * (freq[i] - a)).max(step)),
        (None, Some(b)) => Some((2.0 * (b - freq[i])).max(step)),
        (None, None) => None,
    }
}

/// Finds dips of `|S21|` with at least `opts.prominence_db` prominence.
pub fn detect_resonances(
    trace: &ComplexTrace,
    opts: &DetectOptions,
) -> Result<Vec<ResonanceWindow>> {
    if !(opts.prominence_db > 0.0) {
        return Err(Error::validation("prominence_db", "must be positive"));
    }
    let db = trace.magnitude_db();
    let freq = trace.freq();
    let n = db.len();

    let mut minima: Vec<(usize, f64)> = (1..n - 1)
        .filter(|&i| db[i] < db[i - 1] && db[i] <= db[i + 1])
        .map(|i| (i, prominence(&db, i)))
        .filter(|&(_, p)| p >= opts.prominence_db)
        .collect();

    // deepest first, then drop anything too close to a kept minimum
    minima.sort_by(|a, b| db[a.0].total_cmp(&db[b.0]));
    let mut kept: Vec<(usize, f64)> = Vec::new();
    for m in minima {
        if kept
            .iter()
            .all(|k| (freq[k.0] - freq[m.0]).abs() >= opts.min_separation_hz)
        {
            kept.push(m);
        }
    }
    kept.sort_by_key(|k| k.0);

    let power: Vec<f64> = trace.s21().iter().map(|z| z.norm_sqr()).collect();
    let widths: Vec<f64> = kept
        .iter()
        .map(|&(i, p)| half_depth_width(freq, &power, i, p).unwrap_or(freq[n - 1] - freq[0]))
        .collect();

    let mut out = Vec::with_capacity(kept.len());
    for (k, &(i, prom)) in kept.iter().enumerate() {
        let f0 = freq[i];
        let lw = widths[k];

        let nearest = kept
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != k)
            .map(|(j, m)| (j, (freq[m.0] - f0).abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let partner = nearest.and_then(|(j, sep)| {
            let span = (opts.pair_linewidths * lw.max(widths[j])).max(opts.pairing_span_hz);
            (sep <= span).then_some(freq[kept[j].0])
        });

        let half = 0.5 * opts.window_linewidths.max(10.0) * lw;
        let mut lo_f = f0 - half;
        let mut hi_f = f0 + half;
        // never let a window reach past the midpoint to a neighbouring dip
        if k > 0 {
            lo_f = lo_f.max(0.5 * (f0 + freq[kept[k - 1].0]));
        }
        if k + 1 < kept.len() {
            hi_f = hi_f.min(0.5 * (f0 + freq[kept[k + 1].0]));
        }
        let a = freq.partition_point(|&f| f < lo_f);
        let b = freq.partition_point(|&f| f <= hi_f);
        let sub = trace.slice(a, b.max(a + crate::trace_io::MIN_TRACE_POINTS).min(n))?;
        out.push(ResonanceWindow {
            span_hz: sub.f_max() - sub.f_min(),
            trace: sub,
            f_guess: f0,
            linewidth_hz: lw,
            prominence_db: prom,
            doublet_partner: partner,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_doublet, synth_resonance, Grid, SynthSpec, SynthTruth};

    fn flat(n: usize, f0: f64, df: f64, z: Complex64) -> ComplexTrace {
        let f: Vec<f64> = (0..n).map(|i| f0 + df * i as f64).collect();
        ComplexTrace::new(f, vec![z; n]).unwrap()
    }

    fn ripple_pair(offset_db: impl Fn(f64) -> f64) -> (ComplexTrace, ComplexTrace) {
        let f: Vec<f64> = (0..401).map(|i| 4e9 + 1e7 * i as f64).collect();
        let thru: Vec<Complex64> = f
            .iter()
            .map(|&x| Complex64::from_polar(0.5 + 0.1 * (x / 3e8).sin(), x * 1e-9))
            .collect();
        let dev = f
            .iter()
            .zip(&thru)
            .map(|(&x, z)| z * 10f64.powf(offset_db(x) / 20.0))
            .collect();
        (
            ComplexTrace::new(f.clone(), dev).unwrap(),
            ComplexTrace::new(f, thru).unwrap(),
        )
    }

    #[test]
    fn ripple_identity_and_offset() {
        let (_, t) = ripple_pair(|_| 0.0);
        let r = ripple_metric(&t, &t, (4e9, 8e9), 3.0).unwrap();
        assert_eq!(r.max_abs_diff_db, 0.0);
        assert!(r.pass);

        let (d, t) = ripple_pair(|_| -2.5);
        let r = ripple_metric(&d, &t, (4e9, 8e9), 3.0).unwrap();
        assert!((r.max_abs_diff_db - 2.5).abs() < 1e-9);
        assert!((r.mean_diff_db + 2.5).abs() < 1e-9);
        assert!(r.pass);
    }

    #[test]
    fn ripple_notch_fails() {
        let (d, t) = ripple_pair(|f| if (f - 6e9).abs() < 2e7 { -3.5 } else { -0.5 });
        let r = ripple_metric(&d, &t, (4e9, 8e9), 3.0).unwrap();
        assert!((r.max_abs_diff_db - 3.5).abs() < 1e-9);
        assert!(!r.pass);
    }

    #[test]
    fn ripple_swap_symmetry() {
        let (d, t) = ripple_pair(|f| (f / 1e9).sin());
        let a = ripple_metric(&d, &t, (4.5e9, 7.5e9), 3.0).unwrap();
        let b = ripple_metric(&t, &d, (4.5e9, 7.5e9), 3.0).unwrap();
        assert!((a.max_abs_diff_db - b.max_abs_diff_db).abs() < 1e-12);
        assert!((a.mean_diff_db + b.mean_diff_db).abs() < 1e-12);
    }

    #[test]
    fn ripple_coverage_error() {
        let (d, t) = ripple_pair(|_| 0.0);
        let err = ripple_metric(&d, &t, (3e9, 8e9), 3.0).unwrap_err();
        assert!(matches!(
            err,
            Error::Coverage {
                which: "device",
                ..
            }
        ));
    }

    #[test]
    fn ripple_interpolates_through() {
        // through sampled twice as coarsely; linear-in-dB background interpolates exactly
        let f: Vec<f64> = (0..201).map(|i| 4e9 + 2e7 * i as f64).collect();
        let lin_db = |x: f64| -1.0 - 2.0 * (x - 4e9) / 4e9;
        let thru = f
            .iter()
            .map(|&x| Complex64::new(10f64.powf(lin_db(x) / 20.0), 0.0))
            .collect();
        let t = ComplexTrace::new(f, thru).unwrap();
        let g: Vec<f64> = (0..401).map(|i| 4e9 + 1e7 * i as f64).collect();
        let dev = g
            .iter()
            .map(|&x| Complex64::new(10f64.powf(lin_db(x) / 20.0), 0.0))
            .collect();
        let d = ComplexTrace::new(g, dev).unwrap();
        let r = ripple_metric(&d, &t, (4e9, 8e9), 3.0).unwrap();
        assert!(r.max_abs_diff_db < 1e-12);
    }

    #[test]
    fn pure_delay_recovered() {
        let f: Vec<f64> = (0..201).map(|i| 6e9 + 5e3 * i as f64).collect();
        let z = f
            .iter()
            .map(|&x| Complex64::from_polar(1.0, -2.0 * PI * x * 1e-9))
            .collect();
        let t = ComplexTrace::new(f, z).unwrap();
        let (c, tau) = remove_cable_delay(&t).unwrap();
        assert!((tau - 1e-9).abs() < 1e-12);
        // residual phase ~ 2 pi * 6e9 * (tau error), far below 1e-3
        assert!(c.s21().iter().all(|z| (z - 1.0).norm() < 1e-3));
        let (_, tau0) = remove_cable_delay(&flat(100, 6e9, 1e3, Complex64::new(0.3, 0.4))).unwrap();
        assert!(tau0.abs() < 1e-20);
    }

    #[test]
    fn delay_needs_wings() {
        let t = flat(12, 6e9, 1e3, Complex64::new(1.0, 0.0));
        assert!(matches!(remove_cable_delay(&t), Err(Error::Degenerate(_))));
    }

    fn truth() -> SynthTruth {
        SynthTruth {
            f_c: 6.072e9,
            q_i: 9.1e5,
            q_c_mag: 5e7,
            phi: 0.2,
            tau_s: 50e-9,
            env_amp: 0.7,
            env_phase: 1.0,
        }
    }

    #[test]
    fn delay_from_synthetic_resonance() {
        let t = truth();
        let spec = SynthSpec {
            truth: t,
            grid: Grid::around(&t, 100.0, 4001),
            noise_sigma: 0.0,
            seed: 0,
        };
        let tr = synth_resonance(&spec).unwrap();
        let (c, tau) = remove_cable_delay(&tr).unwrap();
        assert!((tau - 50e-9).abs() < 0.5e-9, "{tau}");
        let tau2 = estimate_delay(&c).unwrap();
        assert!(tau2.abs() < 0.01 * tau.abs());
    }

    #[test]
    fn normalization() {
        let t = SynthTruth {
            tau_s: 0.0,
            env_amp: 0.5,
            env_phase: 0.3,
            phi: 0.0,
            ..truth()
        };
        let spec = SynthSpec {
            truth: t,
            grid: Grid::around(&t, 40.0, 2001),
            noise_sigma: 0.0,
            seed: 0,
        };
        let w = ResonanceWindow::whole(synth_resonance(&spec).unwrap());
        let nw = normalize_window(&w).unwrap();
        let (l, r) = wing_ranges(nw.trace.len()).unwrap();
        for i in l.chain(r) {
            // residual of the resonance itself at >= 16 linewidths is ~ (Q_l/Q_c)/32
            assert!((nw.trace.s21()[i] - 1.0).norm() < 1e-3);
        }
        let b = wing_baseline(&w.trace).unwrap();
        assert!((b - Complex64::from_polar(0.5, 0.3)).norm() < 1e-3 * 0.5);

        let again = normalize_window(&nw).unwrap();
        for (a, b) in again.trace.s21().iter().zip(nw.trace.s21()) {
            assert!((a - b).norm() < 1e-9);
        }

        let zero = ResonanceWindow::whole(flat(40, 6e9, 1e3, Complex64::new(0.0, 0.0)));
        assert!(matches!(normalize_window(&zero), Err(Error::Degenerate(_))));
    }

    #[test]
    fn flat_trace_has_no_resonances() {
        let t = flat(500, 6e9, 1e3, Complex64::new(0.8, 0.1));
        assert!(detect_resonances(&t, &DetectOptions::default())
            .unwrap()
            .is_empty());
    }

    fn deep(f_c: f64) -> SynthTruth {
        SynthTruth {
            f_c,
            q_i: 1e6,
            q_c_mag: 1e6,
            phi: 0.0,
            tau_s: 0.0,
            env_amp: 1.0,
            env_phase: 0.0,
        }
    }

    #[test]
    fn doublet_partners() {
        let (a, b) = (deep(6.072e9 - 3.15e6), deep(6.072e9 + 3.15e6));
        let grid = Grid {
            f_lo: 6.062e9,
            f_hi: 6.082e9,
            n_points: 20001,
        };
        let sa = SynthSpec {
            truth: a,
            grid,
            noise_sigma: 0.0,
            seed: 0,
        };
        let sb = SynthSpec { truth: b, ..sa };
        let tr = synth_doublet(&sa, &sb).unwrap();
        let ws = detect_resonances(&tr, &DetectOptions::default()).unwrap();
        assert_eq!(ws.len(), 2);
        assert_eq!(ws[0].doublet_partner, Some(ws[1].f_guess));
        assert_eq!(ws[1].doublet_partner, Some(ws[0].f_guess));
        assert!(((ws[1].f_guess - ws[0].f_guess) - 6.3e6).abs() < 2e3);
        for w in &ws {
            assert!(w.f_guess >= w.trace.f_min() && w.f_guess <= w.trace.f_max());
            assert!(w.span_hz >= 10.0 * w.linewidth_hz);
            // linewidth f_c / Q_l = 12.1 kHz
            assert!(
                (w.linewidth_hz / 12.144e3 - 1.0).abs() < 0.02,
                "{}",
                w.linewidth_hz
            );
        }
    }

    #[test]
    fn isolated_dips_unpaired() {
        let grid = Grid {
            f_lo: 5.9e9,
            f_hi: 6.5e9,
            n_points: 600_001,
        };
        let sa = SynthSpec {
            truth: deep(6.0e9),
            grid,
            noise_sigma: 0.0,
            seed: 0,
        };
        let sb = SynthSpec {
            truth: deep(6.4e9),
            ..sa
        };
        let tr = synth_doublet(&sa, &sb).unwrap();
        let ws = detect_resonances(&tr, &DetectOptions::default()).unwrap();
        assert_eq!(ws.len(), 2);
        assert!(ws.iter().all(|w| w.doublet_partner.is_none()));

        // a global complex scale does not move the detections
        let scaled = tr.map(|_, z| z * Complex64::new(0.2, -0.7)).unwrap();
        let ws2 = detect_resonances(&scaled, &DetectOptions::default()).unwrap();
        let f1: Vec<f64> = ws.iter().map(|w| w.f_guess).collect();
        let f2: Vec<f64> = ws2.iter().map(|w| w.f_guess).collect();
        assert_eq!(f1, f2);
    }
}
