//! Power-dependent TLS loss ("S-curve") model and its weighted fit.
//!
//! ```text
//! 1/Q_i = F d0 tanh(hbar w / 2 k_B T) / (1 + <n>/n_c)^beta + 1/Q_HP
//! ```
//!
//! The filling factor and intrinsic loss tangent only appear as the
//! product `F d0`, which is what gets fitted (`f_dtls`).

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::lm::{self, LmConfig, Problem};
use crate::photon::PowerPoint;
use crate::units::{HBAR, K_B, Z95};

pub const BETA_MAX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalContext {
    pub f_c: f64,
    pub temperature_k: f64,
}

impl ThermalContext {
    pub fn new(f_c: f64, temperature_k: f64) -> Result<Self> {
        if !(f_c > 0.0 && f_c.is_finite()) {
            return Err(Error::validation(
                "f_c",
                format!("must be positive, got {f_c}"),
            ));
        }
        if !(temperature_k > 0.0 && temperature_k.is_finite()) {
            return Err(Error::validation(
                "temperature_k",
                format!("must be positive, got {temperature_k}"),
            ));
        }
        Ok(Self { f_c, temperature_k })
    }

    pub fn tanh_argument(&self) -> f64 {
        HBAR * 2.0 * PI * self.f_c / (2.0 * K_B * self.temperature_k)
    }

    /// `tanh(hbar w / 2 k_B T)`.
    pub fn thermal_factor(&self) -> f64 {
        self.tanh_argument().tanh()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScurveParams {
    /// Filling factor times intrinsic TLS loss tangent.
    pub f_dtls: f64,
    pub n_c: f64,
    pub beta: f64,
    pub q_hp: f64,
}

impl ScurveParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.f_dtls) || !ok(self.n_c) || !ok(self.q_hp) {
            return Err(Error::validation(
                "scurve params",
                format!("f_dtls, n_c and q_hp must be positive: {self:?}"),
            ));
        }
        if !(self.beta >= 0.0 && self.beta <= BETA_MAX) {
            return Err(Error::validation(
                "beta",
                format!("must lie in [0, {BETA_MAX}], got {}", self.beta),
            ));
        }
        Ok(())
    }

    /// `[f_dtls, n_c, beta, q_hp]`
    pub fn as_array(&self) -> [f64; 4] {
        [self.f_dtls, self.n_c, self.beta, self.q_hp]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        ScurveParams {
            f_dtls: a[0],
            n_c: a[1],
            beta: a[2],
            q_hp: a[3],
        }
    }
}

/// Inverse internal quality factor predicted at mean photon number `n_mean`.
pub fn scurve_model(n_mean: f64, p: &ScurveParams, ctx: &ThermalContext) -> f64 {
    p.f_dtls * ctx.thermal_factor() / (1.0 + n_mean / p.n_c).powf(p.beta) + 1.0 / p.q_hp
}

/// Partial derivatives of [`scurve_model`] with respect to `(f_dtls, n_c, beta, q_hp)`.
pub fn scurve_gradient(n_mean: f64, p: &ScurveParams, ctx: &ThermalContext) -> [f64; 4] {
    let t = ctx.thermal_factor();
    let s = 1.0 + n_mean / p.n_c;
    let sat = s.powf(-p.beta);
    [
        t * sat,
        p.f_dtls * t * p.beta * n_mean / (p.n_c * p.n_c) * sat / s,
        -p.f_dtls * t * s.ln() * sat,
        -1.0 / (p.q_hp * p.q_hp),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScurveOptions {
    /// Number of starting points; the first is the data-driven guess,
    /// the rest are random perturbations of it.
    pub multistart: usize,
    pub seed: u64,
    pub max_iterations: usize,
}

impl Default for ScurveOptions {
    fn default() -> Self {
        Self {
            multistart: 1,
            seed: 0,
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScurveFit {
    pub params: ScurveParams,
    /// Symmetric 95% half-widths from the linearized covariance.
    pub ci95: ScurveParams,
    /// 95% profile-likelihood interval of each parameter.
    pub interval95: ScurveBounds,
    pub chi2: f64,
    pub reduced_chi2: f64,
    pub dof: usize,
    pub iterations: usize,
    pub n_points: usize,
    pub thermal: ThermalContext,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Lower and upper interval ends, one `ScurveParams` each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScurveBounds {
    pub lo: ScurveParams,
    pub hi: ScurveParams,
}

struct ScurveProblem<'a> {
    points: &'a [PowerPoint],
    ctx: ThermalContext,
}

// Internal parameters: [ln f_dtls, ln n_c, logit(beta / BETA_MAX), ln q_hp].
fn decode(x: &[f64]) -> ScurveParams {
    ScurveParams {
        f_dtls: x[0].exp(),
        n_c: x[1].exp(),
        beta: BETA_MAX / (1.0 + (-x[2]).exp()),
        q_hp: x[3].exp(),
    }
}

fn encode(p: &ScurveParams) -> [f64; 4] {
    let b = (p.beta / BETA_MAX).clamp(1e-9, 1.0 - 1e-9);
    [p.f_dtls.ln(), p.n_c.ln(), (b / (1.0 - b)).ln(), p.q_hp.ln()]
}

/// d(physical)/d(internal) for each parameter.
fn decode_derivative(p: &ScurveParams) -> [f64; 4] {
    [p.f_dtls, p.n_c, p.beta * (1.0 - p.beta / BETA_MAX), p.q_hp]
}

impl Problem for ScurveProblem<'_> {
    fn n_params(&self) -> usize {
        4
    }

    fn n_residuals(&self) -> usize {
        self.points.len()
    }

    fn residuals(&self, x: &[f64], out: &mut [f64]) {
        let p = decode(x);
        for (o, pt) in out.iter_mut().zip(self.points) {
            *o = (scurve_model(pt.n_mean, &p, &self.ctx) - pt.inv_qi) / pt.sigma_inv_qi;
        }
    }

    fn jacobian(&self, x: &[f64], jac: &mut DMatrix<f64>) {
        let p = decode(x);
        let d = decode_derivative(&p);
        for (i, pt) in self.points.iter().enumerate() {
            let g = scurve_gradient(pt.n_mean, &p, &self.ctx);
            for j in 0..4 {
                jac[(i, j)] = g[j] * d[j] / pt.sigma_inv_qi;
            }
        }
    }
}

/// The S-curve problem with internal parameter `fixed` held at `value`.
struct Pinned<'a, 'b> {
    inner: &'b ScurveProblem<'a>,
    fixed: usize,
    value: f64,
}

impl Pinned<'_, '_> {
    fn full(&self, x: &[f64]) -> [f64; 4] {
        let mut out = [0.0; 4];
        let mut k = 0;
        for (j, o) in out.iter_mut().enumerate() {
            if j == self.fixed {
                *o = self.value;
            } else {
                *o = x[k];
                k += 1;
            }
        }
        out
    }

    fn free(&self, full: &[f64]) -> Vec<f64> {
        (0..4)
            .filter(|&j| j != self.fixed)
            .map(|j| full[j])
            .collect()
    }
}

impl Problem for Pinned<'_, '_> {
    fn n_params(&self) -> usize {
        3
    }

    fn n_residuals(&self) -> usize {
        self.inner.n_residuals()
    }

    fn residuals(&self, x: &[f64], out: &mut [f64]) {
        self.inner.residuals(&self.full(x), out)
    }

    fn jacobian(&self, x: &[f64], jac: &mut DMatrix<f64>) {
        let mut all = DMatrix::zeros(self.n_residuals(), 4);
        self.inner.jacobian(&self.full(x), &mut all);
        for (k, j) in (0..4).filter(|&j| j != self.fixed).enumerate() {
            jac.set_column(k, &all.column(j));
        }
    }
}

// Internal-coordinate distance searched on either side of the optimum
// before an interval end is declared open.
const PROFILE_REACH: f64 = 40.0;

/// Profile-likelihood interval of internal parameter `j`: the range over
/// which the re-minimized objective stays within `delta` of its minimum.
/// Returns the interval ends in internal coordinates and whether each end
/// was found (`false` means the objective never rose by `delta` within
/// reach, so the end is the search limit).
fn profile_interval(
    problem: &ScurveProblem,
    best: &[f64],
    rss_min: f64,
    delta: f64,
    step: f64,
    j: usize,
    cfg: &LmConfig,
) -> [(f64, bool); 2] {
    let excess = |value: f64, warm: &mut Vec<f64>| {
        let pinned = Pinned {
            inner: problem,
            fixed: j,
            value,
        };
        let rep = lm::minimize(&pinned, warm, cfg);
        if rep.rss.is_finite() {
            *warm = rep.params.clone();
        }
        rep.rss - rss_min - delta
    };
    let step = if step.is_finite() && step > 0.0 {
        step
    } else {
        0.1
    };
    let mut ends = [(0.0, false); 2];
    for (side, end) in [-1.0, 1.0].iter().zip(ends.iter_mut()) {
        let pin = Pinned {
            inner: problem,
            fixed: j,
            value: best[j],
        };
        let mut warm = pin.free(best);
        let mut inside = best[j];
        let mut d = step;
        let mut outside = None;
        while d <= PROFILE_REACH {
            let u = best[j] + side * d;
            if excess(u, &mut warm) > 0.0 {
                outside = Some(u);
                break;
            }
            inside = u;
            d *= 2.0;
        }
        *end = match outside {
            None => (best[j] + side * PROFILE_REACH, false),
            Some(mut out) => {
                for _ in 0..60 {
                    let mid = 0.5 * (inside + out);
                    if excess(mid, &mut warm) > 0.0 {
                        out = mid;
                    } else {
                        inside = mid;
                    }
                    if (out - inside).abs() <= 1e-9 * (1.0 + mid.abs()) {
                        break;
                    }
                }
                (0.5 * (inside + out), true)
            }
        };
    }
    ends
}

/// Two-sided 95% quantile of Student's t with `dof` degrees of freedom, the
/// normal quantile when there are none (unscaled covariance).
pub fn t_quantile_975(dof: usize) -> f64 {
    if dof == 0 {
        return Z95;
    }
    StudentsT::new(0.0, 1.0, dof as f64)
        .map(|t| t.inverse_cdf(0.975))
        .unwrap_or(Z95)
}

/// Data-driven starting point: Q_HP from the highest-power point, F d0 from
/// the lowest-power excess loss, n_c at the midpoint crossing, beta = 0.5.
pub fn initial_guess(sorted: &[PowerPoint], ctx: &ThermalContext) -> ScurveParams {
    let first = sorted[0];
    let last = sorted[sorted.len() - 1];
    let inv_qhp = last.inv_qi.min(first.inv_qi);
    let t = ctx.thermal_factor();
    let mut f_dtls = (first.inv_qi - inv_qhp) / t;
    if !(f_dtls > 0.0) {
        f_dtls = 0.5 * first.inv_qi / t;
    }
    let mid = 0.5 * (first.inv_qi + last.inv_qi);
    let mut n_c = (first.n_mean * last.n_mean).sqrt();
    for w in sorted.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (a.inv_qi - mid) * (b.inv_qi - mid) <= 0.0 && a.inv_qi != b.inv_qi {
            let frac = (a.inv_qi - mid) / (a.inv_qi - b.inv_qi);
            n_c = (a.n_mean.ln() + frac * (b.n_mean.ln() - a.n_mean.ln())).exp();
            break;
        }
    }
    ScurveParams {
        f_dtls,
        n_c,
        beta: 0.5,
        q_hp: 1.0 / inv_qhp,
    }
}

pub fn fit_scurve(points: &[PowerPoint], ctx: &ThermalContext) -> Result<ScurveFit> {
    fit_scurve_with(points, ctx, &ScurveOptions::default())
}

pub fn fit_scurve_with(
    points: &[PowerPoint],
    ctx: &ThermalContext,
    opts: &ScurveOptions,
) -> Result<ScurveFit> {
    for p in points {
        p.validate()?;
    }
    if points.len() < 4 {
        return Err(Error::Degenerate(format!(
            "{} power points cannot constrain 4 parameters",
            points.len()
        )));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| {
        a.n_mean
            .total_cmp(&b.n_mean)
            .then(a.inv_qi.total_cmp(&b.inv_qi))
            .then(a.sigma_inv_qi.total_cmp(&b.sigma_inv_qi))
    });
    let distinct = 1 + sorted
        .windows(2)
        .filter(|w| w[1].n_mean > w[0].n_mean * (1.0 + 1e-12))
        .count();
    if distinct < 4 {
        return Err(Error::Degenerate(format!(
            "only {distinct} distinct photon numbers; the S-curve is underdetermined"
        )));
    }

    let mut warnings = Vec::new();
    let decades = (sorted[sorted.len() - 1].n_mean / sorted[0].n_mean).log10();
    if sorted.len() < 5 || decades < 3.0 {
        let w = format!(
            "{} points spanning {decades:.1} decades of <n>; at least 5 points over 3 decades recommended",
            sorted.len()
        );
        log::warn!("{w}");
        warnings.push(w);
    }

    let problem = ScurveProblem {
        points: &sorted,
        ctx: *ctx,
    };
    let cfg = LmConfig {
        max_iterations: opts.max_iterations,
        ..LmConfig::default()
    };
    let guess = initial_guess(&sorted, ctx);
    let mut starts = vec![encode(&guess)];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 1..opts.multistart.max(1) {
        let mut s = encode(&guess);
        s[0] += rng.random_range(-1.0..1.0);
        s[1] += rng.random_range(-2.0..2.0);
        s[2] = rng.random_range(-3.0..1.0);
        s[3] += rng.random_range(-1.0..1.0);
        starts.push(s);
    }

    let best = starts
        .iter()
        .map(|s| lm::minimize(&problem, s, &cfg))
        .filter(|r| r.rss.is_finite())
        .min_by(|a, b| a.rss.total_cmp(&b.rss))
        .ok_or_else(|| Error::NonConvergence {
            iterations: cfg.max_iterations,
            rms: f64::NAN,
            msg: "no start produced a finite objective".into(),
        })?;
    if !best.converged {
        return Err(Error::NonConvergence {
            iterations: best.iterations,
            rms: best.rms(),
            msg: "S-curve fit".into(),
        });
    }

    let params = decode(&best.params);
    let dof = sorted.len() - 4;
    let reduced_chi2 = if dof > 0 { best.rss / dof as f64 } else { 1.0 };
    if dof == 0 {
        warnings.push("zero degrees of freedom; confidence intervals are unscaled".into());
    }
    let cov = lm::normal_inverse(&best.jacobian).ok_or_else(|| {
        Error::Degenerate("S-curve Jacobian is rank deficient at the optimum".into())
    })?;
    let d = decode_derivative(&params);
    let q = t_quantile_975(dof);
    let half = |j: usize| q * d[j].abs() * (cov[(j, j)] * reduced_chi2).sqrt();
    let ci95 = ScurveParams {
        f_dtls: half(0),
        n_c: half(1),
        beta: half(2),
        q_hp: half(3),
    };

    let delta = q * q * reduced_chi2;
    let mut lo = [0.0; 4];
    let mut hi = [0.0; 4];
    const NAMES: [&str; 4] = ["f_dtls", "n_c", "beta", "q_hp"];
    for j in 0..4 {
        let step = (cov[(j, j)] * reduced_chi2).sqrt();
        let [a, b] = profile_interval(&problem, &best.params, best.rss, delta, step, j, &cfg);
        let mut x = best.params.clone();
        x[j] = a.0;
        lo[j] = decode(&x).as_array()[j];
        x[j] = b.0;
        hi[j] = decode(&x).as_array()[j];
        if !a.1 || !b.1 {
            let w = format!(
                "95% interval of {} is open {}; the reported end is the search limit",
                NAMES[j],
                if !a.1 && !b.1 {
                    "on both sides"
                } else if !a.1 {
                    "below"
                } else {
                    "above"
                }
            );
            log::warn!("{w}");
            warnings.push(w);
        }
    }
    let interval95 = ScurveBounds {
        lo: ScurveParams::from_array(lo),
        hi: ScurveParams::from_array(hi),
    };

    Ok(ScurveFit {
        params,
        ci95,
        interval95,
        chi2: best.rss,
        reduced_chi2,
        dof,
        iterations: best.iterations,
        n_points: sorted.len(),
        thermal: *ctx,
        warnings,
    })
}

impl ScurveFit {
    /// Per-parameter membership of `truth` in the profile intervals.
    pub fn covered(&self, truth: &ScurveParams) -> [bool; 4] {
        let lo = self.interval95.lo.as_array();
        let hi = self.interval95.hi.as_array();
        let t = truth.as_array();
        std::array::from_fn(|j| lo[j] <= t[j] && t[j] <= hi[j])
    }

    /// True if every parameter of `truth` lies inside its 95% interval.
    pub fn covers(&self, truth: &ScurveParams) -> bool {
        self.covered(truth).iter().all(|&c| c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth() -> ScurveParams {
        ScurveParams {
            f_dtls: 1.10e-6,
            n_c: 2000.0,
            beta: 0.2,
            q_hp: 5e6,
        }
    }

    fn ctx() -> ThermalContext {
        ThermalContext::new(6.072e9, 0.015).unwrap()
    }

    fn points(p: &ScurveParams) -> Vec<PowerPoint> {
        (0..12)
            .map(|i| {
                let n = 10f64.powf(7.0 * i as f64 / 11.0);
                let y = scurve_model(n, p, &ctx());
                PowerPoint {
                    n_mean: n,
                    inv_qi: y,
                    sigma_inv_qi: 0.03 * y,
                    applied_power_w: 1e-17 * n,
                }
            })
            .collect()
    }

    #[test]
    fn thermal_factor_at_base_temperature() {
        let c = ThermalContext::new(6e9, 0.015).unwrap();
        // hbar * 2 pi 6e9 / (2 * 1.380649e-23 * 0.015), by hand
        assert!((c.tanh_argument() - 9.5985).abs() < 1e-3);
        assert!((1.0 - c.thermal_factor()).abs() < 1e-8);
        assert!(ThermalContext::new(6e9, 0.0).is_err());
    }

    #[test]
    fn model_limits() {
        let p = truth();
        let c = ctx();
        assert_eq!(
            scurve_model(0.0, &p, &c),
            p.f_dtls * c.thermal_factor() + 1.0 / p.q_hp
        );
        let hi = scurve_model(1e20 * p.n_c, &p, &c);
        assert!((hi - 1.0 / p.q_hp).abs() < 1e-3 * p.f_dtls);
        let half = ScurveParams { beta: 1.0, ..p };
        let v = scurve_model(p.n_c, &half, &c);
        assert!((v - (p.f_dtls * c.thermal_factor() / 2.0 + 1.0 / p.q_hp)).abs() < 1e-20);
    }

    #[test]
    fn noiseless_recovery() {
        let p = truth();
        let fit = fit_scurve(&points(&p), &ctx()).unwrap();
        for (a, b) in fit.params.as_array().iter().zip(p.as_array()) {
            assert!((a / b - 1.0).abs() < 1e-3, "{:?}", fit.params);
        }
    }

    #[test]
    fn single_power_is_underdetermined() {
        let pts: Vec<_> = points(&truth())
            .into_iter()
            .map(|mut q| {
                q.n_mean = 10.0;
                q
            })
            .collect();
        assert!(matches!(
            fit_scurve(&pts, &ctx()),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            fit_scurve(&points(&truth())[..3], &ctx()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn reorder_invariant() {
        let pts = points(&truth());
        let a = fit_scurve(&pts, &ctx()).unwrap();
        let mut rev = pts.clone();
        rev.reverse();
        rev.swap(2, 7);
        let b = fit_scurve(&rev, &ctx()).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn multistart_keeps_best() {
        let pts = points(&truth());
        let fit = fit_scurve_with(
            &pts,
            &ctx(),
            &ScurveOptions {
                multistart: 5,
                seed: 7,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((fit.params.n_c / 2000.0 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn t_quantile_values() {
        assert!((t_quantile_975(8) - 2.306).abs() < 1e-3);
        assert!((t_quantile_975(1) - 12.706).abs() < 1e-3);
        assert_eq!(t_quantile_975(0), Z95);
        assert!((t_quantile_975(100_000) - Z95).abs() < 1e-4);
    }
}
