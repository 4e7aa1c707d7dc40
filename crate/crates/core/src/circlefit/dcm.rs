use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::algebraic::algebraic_circle_fit;
use super::model::{dcm_model, DcmParams};
use super::phase::phase_fit;
use crate::baseline::{normalize_trace, remove_cable_delay, wing_ranges, ResonanceWindow};
use crate::error::{Error, Result};
use crate::lm::{self, LmConfig, Problem};
use crate::par::{self, Execution};
use crate::trace_io::ComplexTrace;
use crate::units::{median, wrap_angle, Z95};

/// 95% confidence half-widths of a [`DcmResult`], in the same units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DcmCi {
    pub f_c: f64,
    pub q_l: f64,
    pub q_c_mag: f64,
    pub q_c: f64,
    pub phi: f64,
    pub q_i: f64,
    pub tau_s: f64,
    pub env_amp: f64,
    pub env_phase: f64,
}

/// Result of a diameter-corrected circle fit.
///
/// Frequencies in Hz, angles in radians, `tau_s` in seconds, quality
/// factors dimensionless. `q_c` is `q_c_mag / cos(phi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcmResult {
    pub f_c: f64,
    pub q_l: f64,
    pub q_c_mag: f64,
    pub q_c: f64,
    pub phi: f64,
    pub q_i: f64,
    pub tau_s: f64,
    pub env_amp: f64,
    pub env_phase: f64,
    pub ci95: DcmCi,
    /// RMS of `|model - data|` over the window.
    pub rms_residual: f64,
    /// Per-point complex noise estimated from the wings.
    pub noise_sigma: f64,
    pub iterations: usize,
    pub window_hz: (f64, f64),
}

impl DcmResult {
    pub fn params(&self) -> DcmParams {
        DcmParams {
            f_c: self.f_c,
            q_l: self.q_l,
            q_c_mag: self.q_c_mag,
            phi: self.phi,
            tau_s: self.tau_s,
            env_amp: self.env_amp,
            env_phase: self.env_phase,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DcmOptions {
    pub lm: LmConfig,
}

/// Starting values handed to the joint refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcmGuess {
    pub params: DcmParams,
    pub circle_radius: f64,
}

/// Per-point complex noise from successive differences of the wing samples
/// (median absolute deviation, Gaussian-consistent).
pub fn wing_noise(trace: &ComplexTrace) -> Result<f64> {
    let (l, r) = wing_ranges(trace.len())?;
    let s = trace.s21();
    let mut dre = Vec::new();
    let mut dim = Vec::new();
    for range in [l, r] {
        for i in range.start..range.end - 1 {
            let d = s[i + 1] - s[i];
            dre.push(d.re);
            dim.push(d.im);
        }
    }
    let mad = |v: &mut Vec<f64>| {
        let m = median(v);
        let mut dev: Vec<f64> = v.iter().map(|x| (x - m).abs()).collect();
        1.482_602_218_505_602 * median(&mut dev) / std::f64::consts::SQRT_2
    };
    let (sr, si) = (mad(&mut dre), mad(&mut dim));
    Ok((sr * sr + si * si).sqrt())
}

/// Delay removal, normalization, algebraic circle fit, phase fit and the
/// diameter correction, without the final joint refinement.
pub fn dcm_initial(window: &ComplexTrace) -> Result<DcmGuess> {
    let (delayed, tau) = remove_cable_delay(window)?;
    let (norm, base) = normalize_trace(&delayed)?;
    let circle = algebraic_circle_fit(norm.s21())?;
    let ph = phase_fit(&norm, &circle)?;

    let off = circle.center - Complex64::from_polar(circle.radius, ph.theta0);
    if off.norm() == 0.0 {
        return Err(Error::Degenerate("off-resonant point at the origin".into()));
    }
    let ratio = 2.0 * circle.radius / off.norm();
    let phi = ((off - circle.center) / off)
        .arg()
        .clamp(-0.5 * PI + 1e-3, 0.5 * PI - 1e-3);
    let env = base * off;
    Ok(DcmGuess {
        params: DcmParams {
            f_c: ph.f_c,
            q_l: ph.q_l,
            q_c_mag: ph.q_l / ratio,
            phi,
            tau_s: tau,
            env_amp: env.norm(),
            env_phase: env.arg(),
        },
        circle_radius: circle.radius,
    })
}

struct Joint<'a> {
    freq: &'a [f64],
    data: &'a [Complex64],
    f_ref: f64,
    weight: f64,
}

// Internal parameters:
// [f_c/f_ref - 1, ln q_l, ln q_c_mag, tan phi, tau, ln env_amp, local phase]
// with the delay referenced to f_ref: env_phase = local + 2 pi f_ref tau.
impl Joint<'_> {
    fn decode(&self, x: &[f64]) -> DcmParams {
        DcmParams {
            f_c: self.f_ref * (1.0 + x[0]),
            q_l: x[1].exp(),
            q_c_mag: x[2].exp(),
            phi: x[3].atan(),
            tau_s: x[4],
            env_amp: x[5].exp(),
            env_phase: x[6] + 2.0 * PI * self.f_ref * x[4],
        }
    }

    fn encode(&self, p: &DcmParams) -> [f64; 7] {
        [
            p.f_c / self.f_ref - 1.0,
            p.q_l.ln(),
            p.q_c_mag.ln(),
            p.phi.tan(),
            p.tau_s,
            p.env_amp.ln(),
            wrap_angle(p.env_phase - 2.0 * PI * self.f_ref * p.tau_s),
        ]
    }

    fn local(&self, x: &[f64], f: f64) -> (Complex64, Complex64, Complex64) {
        // environment, R term, denominator
        let q_l = x[1].exp();
        let q_c = x[2].exp();
        let phi = x[3].atan();
        let f_c = self.f_ref * (1.0 + x[0]);
        let env = Complex64::from_polar(x[5].exp(), x[6] - 2.0 * PI * (f - self.f_ref) * x[4]);
        let denom = Complex64::new(1.0, 2.0 * q_l * (f - f_c) / f_c);
        let r = Complex64::from_polar(q_l / q_c, phi) / denom;
        (env, r, denom)
    }
}

impl Problem for Joint<'_> {
    fn n_params(&self) -> usize {
        7
    }

    fn n_residuals(&self) -> usize {
        2 * self.freq.len()
    }

    fn residuals(&self, x: &[f64], out: &mut [f64]) {
        for (i, (&f, d)) in self.freq.iter().zip(self.data).enumerate() {
            let (env, r, _) = self.local(x, f);
            let e = (env * (1.0 - r) - d) * self.weight;
            out[2 * i] = e.re;
            out[2 * i + 1] = e.im;
        }
    }

    fn jacobian(&self, x: &[f64], jac: &mut DMatrix<f64>) {
        let q_l = x[1].exp();
        let f_c = self.f_ref * (1.0 + x[0]);
        let cos2 = 1.0 / (1.0 + x[3] * x[3]);
        let i1 = Complex64::new(0.0, 1.0);
        for (i, &f) in self.freq.iter().enumerate() {
            let (env, r, denom) = self.local(x, f);
            let s = env * (1.0 - r);
            let u = (f - f_c) / f_c;
            let cols = [
                // d/dx0 = f_ref d/df_c;  dR/df_c = R 2i Q_l f / (f_c^2 D)
                -env * r * 2.0 * i1 * q_l * f / (f_c * f_c * denom) * self.f_ref,
                // d/d ln q_l: dR = R - R 2i Q_l u / D
                -env * (r - r * 2.0 * i1 * q_l * u / denom),
                // d/d ln q_c: dR = -R
                env * r,
                // d/d tan phi: dR/dphi = iR, dphi/ds = cos^2 phi
                -env * i1 * r * cos2,
                // d/d tau
                -2.0 * PI * i1 * (f - self.f_ref) * s,
                // d/d ln A
                s,
                // d/d local phase
                i1 * s,
            ];
            for (j, c) in cols.iter().enumerate() {
                jac[(2 * i, j)] = c.re * self.weight;
                jac[(2 * i + 1, j)] = c.im * self.weight;
            }
        }
    }
}

pub fn dcm_fit(window: &ResonanceWindow) -> Result<DcmResult> {
    dcm_fit_trace(&window.trace, &DcmOptions::default())
}

pub fn dcm_fit_with(window: &ResonanceWindow, opts: &DcmOptions) -> Result<DcmResult> {
    dcm_fit_trace(&window.trace, opts)
}

/// Full diameter-corrected fit of a single-resonance trace.
pub fn dcm_fit_trace(trace: &ComplexTrace, opts: &DcmOptions) -> Result<DcmResult> {
    if trace.len() < 20 {
        return Err(Error::Degenerate(format!(
            "{} points is too few for a circle fit",
            trace.len()
        )));
    }
    let guess = dcm_initial(trace)?;
    let freq = trace.freq();
    let f_ref = 0.5 * (freq[0] + freq[freq.len() - 1]);
    let sigma = wing_noise(trace)?;
    let weight = if sigma > 0.0 { 1.0 / sigma } else { 1.0 };
    let problem = Joint {
        freq,
        data: trace.s21(),
        f_ref,
        weight,
    };
    let start = problem.encode(&guess.params);
    let rep = lm::minimize(&problem, &start, &opts.lm);
    let rms = (rep.rss / (weight * weight) / freq.len() as f64).sqrt();
    if !rep.converged {
        return Err(Error::NonConvergence {
            iterations: rep.iterations,
            rms,
            msg: "joint circle-model refinement".into(),
        });
    }
    let p = problem.decode(&rep.params);

    let inv_qi = 1.0 / p.q_l - p.phi.cos() / p.q_c_mag;
    if !(inv_qi > 0.0) {
        return Err(Error::InvalidOptimum(format!(
            "1/Q_i = 1/Q_l - cos(phi)/|Q_c| = {inv_qi:e} is not positive \
             (Q_l = {:e}, |Q_c| = {:e}, phi = {:.4})",
            p.q_l, p.q_c_mag, p.phi
        )));
    }
    if p.f_c < freq[0] || p.f_c > freq[freq.len() - 1] {
        return Err(Error::InvalidOptimum(format!(
            "f_c = {:.9e} Hz lies outside the window {:.9e}..{:.9e} Hz",
            p.f_c,
            freq[0],
            freq[freq.len() - 1]
        )));
    }
    let q_i = 1.0 / inv_qi;

    let dof = (2 * freq.len()).saturating_sub(7).max(1);
    let s2 = rep.rss / dof as f64;
    let ci95 = match lm::normal_inverse(&rep.jacobian) {
        Some(cov) => confidence(&p, q_i, &cov, s2, f_ref),
        None => {
            log::warn!(
                "singular Jacobian at the circle-fit optimum; confidence intervals unavailable"
            );
            DcmCi {
                f_c: f64::NAN,
                q_l: f64::NAN,
                q_c_mag: f64::NAN,
                q_c: f64::NAN,
                phi: f64::NAN,
                q_i: f64::NAN,
                tau_s: f64::NAN,
                env_amp: f64::NAN,
                env_phase: f64::NAN,
            }
        }
    };

    Ok(DcmResult {
        f_c: p.f_c,
        q_l: p.q_l,
        q_c_mag: p.q_c_mag,
        q_c: p.q_c_mag / p.phi.cos(),
        phi: p.phi,
        q_i,
        tau_s: p.tau_s,
        env_amp: p.env_amp,
        env_phase: wrap_angle(p.env_phase),
        ci95,
        rms_residual: rms,
        noise_sigma: sigma,
        iterations: rep.iterations,
        window_hz: (freq[0], freq[freq.len() - 1]),
    })
}

/// Delta-method propagation of the internal covariance to reported quantities.
fn confidence(p: &DcmParams, q_i: f64, cov: &DMatrix<f64>, s2: f64, f_ref: f64) -> DcmCi {
    let (sin, cos) = p.phi.sin_cos();
    let cos2 = cos * cos;
    let qi2 = q_i * q_i;
    let grad = |g: [f64; 7]| -> f64 {
        let mut v = 0.0;
        for a in 0..7 {
            for b in 0..7 {
                v += g[a] * cov[(a, b)] * g[b];
            }
        }
        Z95 * (v.max(0.0) * s2).sqrt()
    };
    DcmCi {
        f_c: grad([f_ref, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        q_l: grad([0.0, p.q_l, 0.0, 0.0, 0.0, 0.0, 0.0]),
        q_c_mag: grad([0.0, 0.0, p.q_c_mag, 0.0, 0.0, 0.0, 0.0]),
        q_c: grad([0.0, 0.0, p.q_c_mag / cos, p.q_c_mag * sin, 0.0, 0.0, 0.0]),
        phi: grad([0.0, 0.0, 0.0, cos2, 0.0, 0.0, 0.0]),
        q_i: grad([
            0.0,
            qi2 / p.q_l,
            -qi2 * cos / p.q_c_mag,
            -qi2 * sin / p.q_c_mag * cos2,
            0.0,
            0.0,
            0.0,
        ]),
        tau_s: grad([0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
        env_amp: grad([0.0, 0.0, 0.0, 0.0, 0.0, p.env_amp, 0.0]),
        env_phase: grad([0.0, 0.0, 0.0, 0.0, 2.0 * PI * f_ref, 0.0, 1.0]),
    }
}

/// Fits every window, in parallel when the policy allows.
pub fn fit_windows(windows: &[ResonanceWindow], exec: Execution) -> Vec<Result<DcmResult>> {
    par::map(exec, windows, dcm_fit)
}

/// Model residual RMS of `result` against `trace`.
pub fn model_rms(trace: &ComplexTrace, result: &DcmResult) -> f64 {
    let p = result.params();
    (trace
        .iter()
        .map(|(f, z)| (dcm_model(f, &p) - z).norm_sqr())
        .sum::<f64>()
        / trace.len() as f64)
        .sqrt()
}
