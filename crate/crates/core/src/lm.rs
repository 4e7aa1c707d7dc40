//! Dense Levenberg-Marquardt for the small problems in this crate
//! (at most a handful of parameters, thousands of residuals).

use nalgebra::{DMatrix, DVector};

/// A least-squares problem: minimize the sum of squared residuals.
pub trait Problem {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;
    fn residuals(&self, params: &[f64], out: &mut [f64]);
    /// Row-major `n_residuals x n_params` Jacobian of the residuals.
    fn jacobian(&self, params: &[f64], jac: &mut DMatrix<f64>);
}

#[derive(Debug, Clone, Copy)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Convergence when the scaled step is below `xtol` relative to the scaled parameters.
    pub xtol: f64,
    /// Convergence when the scaled gradient falls below `gtol`.
    pub gtol: f64,
    pub initial_lambda: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            xtol: 1e-10,
            gtol: 1e-14,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: Vec<f64>,
    pub residuals: Vec<f64>,
    pub jacobian: DMatrix<f64>,
    pub rss: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LmReport {
    pub fn rms(&self) -> f64 {
        (self.rss / self.residuals.len().max(1) as f64).sqrt()
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

pub fn minimize<P: Problem + ?Sized>(problem: &P, start: &[f64], cfg: &LmConfig) -> LmReport {
    let np = problem.n_params();
    let nr = problem.n_residuals();
    assert_eq!(start.len(), np);

    let mut p = start.to_vec();
    let mut r = vec![0.0; nr];
    problem.residuals(&p, &mut r);
    let mut rss = sum_sq(&r);
    let mut jac = DMatrix::zeros(nr, np);
    problem.jacobian(&p, &mut jac);

    let mut lambda = cfg.initial_lambda;
    let mut trial = vec![0.0; nr];
    let mut iterations = 0;
    let mut converged = !rss.is_finite() || rss == 0.0;
    let mut diag_scale = vec![0.0f64; np];

    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        let jtj = jac.transpose() * &jac;
        let rv = DVector::from_column_slice(&r);
        let grad = jac.transpose() * &rv;

        for i in 0..np {
            // Marquardt scaling, never shrinking so a vanishing column keeps some damping.
            diag_scale[i] = diag_scale[i].max(jtj[(i, i)].sqrt());
        }

        let gnorm = (0..np)
            .filter(|&i| diag_scale[i] > 0.0)
            .map(|i| grad[i].abs() / (diag_scale[i] * rss.sqrt()))
            .fold(0.0f64, f64::max);
        if gnorm <= cfg.gtol {
            converged = true;
            break;
        }

        let mut accepted = false;
        while lambda < 1e30 {
            let mut a = jtj.clone();
            for i in 0..np {
                let d = diag_scale[i].max(f64::MIN_POSITIVE);
                a[(i, i)] += lambda * d * d;
            }
            let step = match a.clone().cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => match a.lu().solve(&(-&grad)) {
                    Some(s) => s,
                    None => {
                        lambda *= 10.0;
                        continue;
                    }
                },
            };
            let candidate: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            problem.residuals(&candidate, &mut trial);
            let trial_rss = sum_sq(&trial);
            if trial_rss.is_finite() && trial_rss <= rss {
                let step_norm = (0..np)
                    .map(|i| (diag_scale[i] * step[i]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let p_norm = (0..np)
                    .map(|i| (diag_scale[i] * p[i]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                p = candidate;
                std::mem::swap(&mut r, &mut trial);
                let improvement = rss - trial_rss;
                rss = trial_rss;
                problem.jacobian(&p, &mut jac);
                lambda = (lambda / 3.0).max(1e-15);
                accepted = true;
                if step_norm <= cfg.xtol * (p_norm + cfg.xtol)
                    || rss == 0.0
                    || improvement <= f64::EPSILON * rss * 1e-2
                {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // No downhill step exists at any damping: a minimum to machine precision.
            converged = true;
        }
    }

    LmReport {
        params: p,
        residuals: r,
        jacobian: jac,
        rss,
        iterations,
        converged,
    }
}

/// Unscaled `(J^T J)^-1`, computed with column equilibration and an SVD
/// pseudo-inverse. Returns `None` if the Jacobian is rank deficient.
pub fn normal_inverse(jac: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let np = jac.ncols();
    let mut scaled = jac.clone();
    let mut scale = vec![1.0; np];
    for (j, s) in scale.iter_mut().enumerate() {
        let n = scaled.column(j).norm();
        if n == 0.0 || !n.is_finite() {
            return None;
        }
        *s = 1.0 / n;
        scaled.column_mut(j).scale_mut(1.0 / n);
    }
    let jtj = scaled.transpose() * &scaled;
    let svd = jtj.svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= smax * 1e-15 {
        return None;
    }
    let inv = svd.pseudo_inverse(0.0).ok()?;
    let mut out = inv;
    for i in 0..np {
        for j in 0..np {
            out[(i, j)] *= scale[i] * scale[j];
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// y = a * exp(-b x)
    struct Decay {
        x: Vec<f64>,
        y: Vec<f64>,
    }

    impl Problem for Decay {
        fn n_params(&self) -> usize {
            2
        }
        fn n_residuals(&self) -> usize {
            self.x.len()
        }
        fn residuals(&self, p: &[f64], out: &mut [f64]) {
            for (i, (&x, &y)) in self.x.iter().zip(&self.y).enumerate() {
                out[i] = p[0] * (-p[1] * x).exp() - y;
            }
        }
        fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) {
            for (i, &x) in self.x.iter().enumerate() {
                let e = (-p[1] * x).exp();
                jac[(i, 0)] = e;
                jac[(i, 1)] = -p[0] * x * e;
            }
        }
    }

    #[test]
    fn recovers_exponential() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let y = x.iter().map(|x| 2.5 * (-1.3 * x).exp()).collect();
        let prob = Decay { x, y };
        let rep = minimize(&prob, &[1.0, 0.2], &LmConfig::default());
        assert!(rep.converged);
        assert!((rep.params[0] - 2.5).abs() < 1e-10);
        assert!((rep.params[1] - 1.3).abs() < 1e-10);
        assert!(rep.rms() < 1e-12);
    }

    #[test]
    fn rank_deficient_has_no_inverse() {
        let j = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(normal_inverse(&j).is_none());
        let j = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 1.0, 1.0]);
        let inv = normal_inverse(&j).unwrap();
        let jtj = j.transpose() * &j;
        let id = jtj * inv;
        assert!((id - DMatrix::identity(2, 2)).norm() < 1e-12);
    }
}
