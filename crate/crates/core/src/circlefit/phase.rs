use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::algebraic::Circle;
use crate::error::{Error, Result};
use crate::lm::{self, LmConfig, Problem};
use crate::trace_io::ComplexTrace;
use crate::units::{unwrap_phase, wrap_angle};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseFit {
    pub f_c: f64,
    pub q_l: f64,
    /// Angle (about the circle centre) of the on-resonance point, radians.
    pub theta0: f64,
    pub rms_residual: f64,
    pub iterations: usize,
}

/// `theta(f) = theta0 + 2 atan(2 Q_l (1 - f / f_c))`
pub fn phase_model(f: f64, f_c: f64, q_l: f64, theta0: f64) -> f64 {
    theta0 + 2.0 * (2.0 * q_l * (1.0 - f / f_c)).atan()
}

struct PhaseProblem<'a> {
    freq: &'a [f64],
    theta: &'a [f64],
    f_ref: f64,
}

// params: [theta0, ln q_l, f_c / f_ref - 1]
impl PhaseProblem<'_> {
    fn unpack(&self, p: &[f64]) -> (f64, f64, f64) {
        (p[0], p[1].exp(), self.f_ref * (1.0 + p[2]))
    }
}

impl Problem for PhaseProblem<'_> {
    fn n_params(&self) -> usize {
        3
    }

    fn n_residuals(&self) -> usize {
        self.freq.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let (t0, q_l, f_c) = self.unpack(p);
        for ((o, &f), &th) in out.iter_mut().zip(self.freq).zip(self.theta) {
            *o = wrap_angle(phase_model(f, f_c, q_l, t0) - th);
        }
    }

    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) {
        let (_, q_l, f_c) = self.unpack(p);
        for (i, &f) in self.freq.iter().enumerate() {
            let g = 2.0 * q_l * (1.0 - f / f_c);
            let dtheta_dg = 2.0 / (1.0 + g * g);
            jac[(i, 0)] = 1.0;
            jac[(i, 1)] = dtheta_dg * g;
            jac[(i, 2)] = dtheta_dg * 2.0 * q_l * f * self.f_ref / (f_c * f_c);
        }
    }
}

fn circular_mean(angles: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = angles.fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
    s.atan2(c)
}

fn best_offset(freq: &[f64], theta: &[f64], f_c: f64, q_l: f64) -> (f64, f64) {
    let t0 = circular_mean(
        freq.iter()
            .zip(theta)
            .map(|(&f, &th)| th - phase_model(f, f_c, q_l, 0.0)),
    );
    let ss = freq
        .iter()
        .zip(theta)
        .map(|(&f, &th)| wrap_angle(phase_model(f, f_c, q_l, t0) - th).powi(2))
        .sum();
    (t0, ss)
}

/// Starting point from the magnitude dip: `f_c` at the minimum of `|S21|`
/// and `Q_l` from the full width at half depth of `|S21|^2`.
pub fn magnitude_guess(window: &ComplexTrace) -> (f64, f64) {
    let freq = window.freq();
    let p: Vec<f64> = window.s21().iter().map(|z| z.norm_sqr()).collect();
    let imin = p
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let f_c = freq[imin];
    let n = p.len();
    let w = (n / 10).max(1);
    let mut wings: Vec<f64> = p[..w].iter().chain(&p[n - w..]).copied().collect();
    let base = crate::units::median(&mut wings);
    let level = 0.5 * (base + p[imin]);
    let lo = (0..imin).rev().find(|&j| p[j] >= level).map(|j| freq[j]);
    let hi = (imin + 1..n).find(|&j| p[j] >= level).map(|j| freq[j]);
    let span = freq[n - 1] - freq[0];
    let fwhm = match (lo, hi) {
        (Some(a), Some(b)) => b - a,
        (Some(a), None) => 2.0 * (f_c - a),
        (None, Some(b)) => 2.0 * (b - f_c),
        (None, None) => span / 10.0,
    }
    .max(freq[1] - freq[0]);
    (f_c, f_c / fwhm)
}

pub fn phase_fit(window: &ComplexTrace, circle: &Circle) -> Result<PhaseFit> {
    let (f_c, q_l) = magnitude_guess(window);
    phase_fit_from(window, circle, f_c, q_l)
}

/// Phase fit starting from explicit `(f_c, q_l)` guesses. A coarse scan over
/// `q_l` (two decades either side) precedes the least-squares refinement.
pub fn phase_fit_from(
    window: &ComplexTrace,
    circle: &Circle,
    f_c0: f64,
    q_l0: f64,
) -> Result<PhaseFit> {
    let freq = window.freq();
    let raw: Vec<f64> = window
        .s21()
        .iter()
        .map(|z| (z - circle.center).arg())
        .collect();
    let theta = unwrap_phase(&raw);
    let (lo, hi) = theta
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| {
            (a.min(t), b.max(t))
        });
    if hi - lo < 0.1 {
        return Err(Error::Degenerate(format!(
            "phase about the circle centre spans only {:.3e} rad",
            hi - lo
        )));
    }

    let mut q_best = q_l0;
    let mut ss_best = f64::INFINITY;
    for k in -20..=20 {
        let q = q_l0 * 10f64.powf(k as f64 / 10.0);
        let (_, ss) = best_offset(freq, &theta, f_c0, q);
        if ss < ss_best {
            ss_best = ss;
            q_best = q;
        }
    }
    let (t0, _) = best_offset(freq, &theta, f_c0, q_best);

    let f_ref = 0.5 * (freq[0] + freq[freq.len() - 1]);
    let problem = PhaseProblem {
        freq,
        theta: &theta,
        f_ref,
    };
    let rep = lm::minimize(
        &problem,
        &[t0, q_best.ln(), f_c0 / f_ref - 1.0],
        &LmConfig::default(),
    );
    if !rep.converged || !rep.rss.is_finite() {
        return Err(Error::NonConvergence {
            iterations: rep.iterations,
            rms: rep.rms(),
            msg: "phase fit".into(),
        });
    }
    let (t0, q_l, f_c) = problem.unpack(&rep.params);
    Ok(PhaseFit {
        f_c,
        q_l,
        theta0: wrap_angle(t0),
        rms_residual: rep.rms(),
        iterations: rep.iterations,
    })
}
