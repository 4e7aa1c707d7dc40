use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: Complex64,
    pub radius: f64,
    /// RMS of the geometric distance `| |p - center| - radius |`.
    pub rms_residual: f64,
}

/// Taubin algebraic circle fit, solved by Newton iteration on the
/// characteristic polynomial of the centred moment matrix.
pub fn algebraic_circle_fit(points: &[Complex64]) -> Result<Circle> {
    if points.len() < 5 {
        return Err(Error::Degenerate(format!(
            "circle fit needs at least 5 points, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mean = points.iter().sum::<Complex64>() / n;

    let (mut mxx, mut myy, mut mxy, mut mxz, mut myz, mut mzz) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for p in points {
        let x = p.re - mean.re;
        let y = p.im - mean.im;
        let z = x * x + y * y;
        mxx += x * x;
        myy += y * y;
        mxy += x * y;
        mxz += x * z;
        myz += y * z;
        mzz += z * z;
    }
    mxx /= n;
    myy /= n;
    mxy /= n;
    mxz /= n;
    myz /= n;
    mzz /= n;

    let mz = mxx + myy;
    let cov_xy = mxx * myy - mxy * mxy;
    if !(mz > 0.0) || cov_xy <= 1e-12 * mz * mz {
        return Err(Error::Degenerate(
            "points are collinear or coincident".into(),
        ));
    }
    let var_z = mzz - mz * mz;
    let a3 = 4.0 * mz;
    let a2 = -3.0 * mz * mz - mzz;
    let a1 = var_z * mz + 4.0 * cov_xy * mz - mxz * mxz - myz * myz;
    let a0 = mxz * (mxz * myy - myz * mxy) + myz * (myz * mxx - mxz * mxy) - var_z * cov_xy;
    let a22 = a2 + a2;
    let a33 = a3 + a3 + a3;

    let mut x = 0.0f64;
    let mut y = a0;
    for _ in 0..100 {
        let dy = a1 + x * (a22 + x * a33);
        let xnew = x - y / dy;
        if !xnew.is_finite() {
            return Err(Error::Degenerate("circle fit Newton step diverged".into()));
        }
        if (xnew - x).abs() <= 1e-15 * xnew.abs().max(f64::MIN_POSITIVE) {
            x = xnew;
            break;
        }
        let ynew = a0 + xnew * (a1 + xnew * (a2 + xnew * a3));
        if ynew.abs() >= y.abs() {
            break;
        }
        x = xnew;
        y = ynew;
    }

    let det = x * x - x * mz + cov_xy;
    if det == 0.0 || !det.is_finite() {
        return Err(Error::Degenerate("circle fit determinant vanished".into()));
    }
    let cx = (mxz * (myy - x) - myz * mxy) / det / 2.0;
    let cy = (myz * (mxx - x) - mxz * mxy) / det / 2.0;
    let radius = (cx * cx + cy * cy + mz).sqrt();
    let center = Complex64::new(cx, cy) + mean;
    if !radius.is_finite() || !(radius > 0.0) {
        return Err(Error::Degenerate(
            "circle fit produced no finite radius".into(),
        ));
    }
    let rms = (points
        .iter()
        .map(|p| ((p - center).norm() - radius).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(Circle {
        center,
        radius,
        rms_residual: rms,
    })
}
