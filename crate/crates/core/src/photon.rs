//! On-chip power and mean intra-resonator photon number.
//!
//! The photon number uses the side-coupled steady-state relation
//! `<n> = 2 P Q_l^2 / (hbar w^2 Q_c)` with `Q_c` in the real-part
//! convention (`|Q_c| / cos phi`). Any loss in the input chain beyond the
//! listed attenuators goes in [`TraceMeta::extra_loss_db`].

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::circlefit::DcmResult;
use crate::error::{Error, Result};
use crate::trace_io::TraceMeta;
use crate::units::{dbm_to_watts, HBAR, Z95};

/// One point of a power sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub n_mean: f64,
    pub inv_qi: f64,
    pub sigma_inv_qi: f64,
    pub applied_power_w: f64,
}

impl PowerPoint {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_mean", self.n_mean),
            ("inv_qi", self.inv_qi),
            ("sigma_inv_qi", self.sigma_inv_qi),
            ("applied_power_w", self.applied_power_w),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(
                    "power point",
                    format!("{name} must be positive and finite, got {v}"),
                ));
            }
        }
        Ok(())
    }
}

/// Power at the chip, W.
pub fn applied_power(vna_power_dbm: f64, attenuation_db: f64) -> f64 {
    dbm_to_watts(vna_power_dbm - attenuation_db)
}

pub fn mean_photon_number(power_w: f64, f_c: f64, q_l: f64, q_c: f64) -> f64 {
    let omega = 2.0 * PI * f_c;
    2.0 * power_w * q_l * q_l / (HBAR * omega * omega * q_c)
}

/// Inverse of [`mean_photon_number`] in the power argument.
pub fn power_for_photon_number(n_mean: f64, f_c: f64, q_l: f64, q_c: f64) -> f64 {
    let omega = 2.0 * PI * f_c;
    n_mean * HBAR * omega * omega * q_c / (2.0 * q_l * q_l)
}

/// Relative floor on `sigma_inv_qi`; noiseless fits report confidence
/// intervals at the level of floating-point round-off.
pub const SIGMA_FLOOR_REL: f64 = 1e-9;

/// Converts per-power circle fits of one resonance into sweep points.
pub fn build_power_sweep(fits: &[(DcmResult, TraceMeta)]) -> Result<Vec<PowerPoint>> {
    let Some((first, _)) = fits.first() else {
        return Ok(Vec::new());
    };
    let lw = first.f_c / first.q_l;
    for (fit, meta) in fits {
        if (fit.f_c - first.f_c).abs() > 100.0 * lw {
            return Err(Error::validation(
                "power sweep",
                format!(
                    "fit at {:.6e} Hz is more than 100 linewidths from {:.6e} Hz; mixed resonances",
                    fit.f_c, first.f_c
                ),
            ));
        }
        meta.validate()?;
    }
    fits.iter()
        .map(|(fit, meta)| {
            let p = applied_power(meta.vna_power_dbm, meta.total_loss_db());
            let inv_qi = 1.0 / fit.q_i;
            let sigma = (fit.ci95.q_i / Z95) / (fit.q_i * fit.q_i);
            let pt = PowerPoint {
                n_mean: mean_photon_number(p, fit.f_c, fit.q_l, fit.q_c),
                inv_qi,
                sigma_inv_qi: sigma.max(SIGMA_FLOOR_REL * inv_qi),
                applied_power_w: p,
            };
            pt.validate()?;
            Ok(pt)
        })
        .collect()
}

pub fn power_points_csv(points: &[PowerPoint]) -> String {
    let mut out = String::from("n_mean,inv_qi,sigma_inv_qi,applied_power_w\n");
    for p in points {
        let _ = writeln!(
            out,
            "{:?},{:?},{:?},{:?}",
            p.n_mean, p.inv_qi, p.sigma_inv_qi, p.applied_power_w
        );
    }
    out
}

pub fn write_power_points(path: impl AsRef<Path>, points: &[PowerPoint]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, power_points_csv(points)).map_err(|e| Error::io(path, e))
}

pub fn read_power_points(path: impl AsRef<Path>) -> Result<Vec<PowerPoint>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: format!("{other:?}"),
        },
    })?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let p: PowerPoint = rec?;
        p.validate()?;
        out.push(p);
    }
    Ok(out)
}
