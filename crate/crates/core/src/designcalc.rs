//! Design formulas for cavity-coupled ring resonators.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::C0;

/// Coaxial line impedance `Z0 = (138 / sqrt(eps_r)) log10(D / d)`, which is
/// the same as `(60 / sqrt(eps_r)) ln(D / d)` to within the rounding of 138.
pub fn coax_impedance(d_outer_m: f64, d_inner_m: f64, eps_r: f64) -> Result<f64> {
    if !(d_inner_m > 0.0) || !d_outer_m.is_finite() {
        return Err(Error::Geometry(format!(
            "diameters must be positive and finite (D = {d_outer_m}, d = {d_inner_m})"
        )));
    }
    if d_outer_m <= d_inner_m {
        return Err(Error::Geometry(format!(
            "outer diameter {d_outer_m} m must exceed inner diameter {d_inner_m} m"
        )));
    }
    if !(eps_r >= 1.0) || !eps_r.is_finite() {
        return Err(Error::validation("eps_r", format!("{eps_r} must be >= 1")));
    }
    Ok(138.0 / eps_r.sqrt() * (d_outer_m / d_inner_m).log10())
}

/// Diameter ratio `D/d` giving impedance `z0_ohm`.
pub fn coax_ratio_for_impedance(z0_ohm: f64, eps_r: f64) -> f64 {
    10f64.powf(z0_ohm * eps_r.sqrt() / 138.0)
}

/// Full-wavelength ring resonance `f = m c0 / (P sqrt(eps_eff))`.
pub fn ring_resonance(perimeter_m: f64, eps_eff: f64, mode_index: u32) -> f64 {
    mode_index as f64 * C0 / (perimeter_m * eps_eff.sqrt())
}

/// Effective permittivity that puts mode `m` of a ring of the given
/// perimeter at `f_hz`.
pub fn eps_eff_for(perimeter_m: f64, f_hz: f64, mode_index: u32) -> f64 {
    (mode_index as f64 * C0 / (perimeter_m * f_hz)).powi(2)
}

/// Returns `(alpha, delta_fc)`: the shift of the doublet mean from the
/// simulated frequency, and the splitting.
pub fn analyze_doublet(f_meas_pair: (f64, f64), f_sim: f64) -> (f64, f64) {
    let (a, b) = f_meas_pair;
    (0.5 * (a + b) - f_sim, (b - a).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingCurvePoint {
    pub gap_m: f64,
    pub q_c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingEstimate {
    pub q_c: f64,
    /// Query lies outside the tabulated gap range.
    pub extrapolated: bool,
}

/// Piecewise-linear interpolation of `ln q_c` against gap. Outside the
/// tabulated range the end segments are extended and the result flagged.
pub fn coupling_interpolate(curve: &[CouplingCurvePoint], gap_m: f64) -> Result<CouplingEstimate> {
    if curve.len() < 2 {
        return Err(Error::validation(
            "coupling curve",
            format!("need at least 2 points, got {}", curve.len()),
        ));
    }
    for p in curve {
        if !(p.gap_m > 0.0 && p.q_c > 0.0) || !p.gap_m.is_finite() || !p.q_c.is_finite() {
            return Err(Error::validation(
                "coupling curve",
                format!("gap and q_c must be positive, got ({}, {})", p.gap_m, p.q_c),
            ));
        }
    }
    if curve.windows(2).any(|w| w[1].gap_m <= w[0].gap_m) {
        return Err(Error::validation(
            "coupling curve",
            "gaps must be strictly increasing",
        ));
    }
    if !gap_m.is_finite() {
        return Err(Error::validation("gap", format!("{gap_m} is not finite")));
    }
    let n = curve.len();
    let extrapolated = gap_m < curve[0].gap_m || gap_m > curve[n - 1].gap_m;
    if let Some(knot) = curve.iter().find(|p| p.gap_m == gap_m) {
        return Ok(CouplingEstimate {
            q_c: knot.q_c,
            extrapolated,
        });
    }
    let seg = curve
        .windows(2)
        .position(|w| gap_m <= w[1].gap_m)
        .unwrap_or(n - 2);
    let (a, b) = (curve[seg], curve[seg + 1]);
    let t = (gap_m - a.gap_m) / (b.gap_m - a.gap_m);
    let ln_q = a.q_c.ln() + t * (b.q_c.ln() - a.q_c.ln());
    Ok(CouplingEstimate {
        q_c: ln_q.exp(),
        extrapolated,
    })
}

/// One row of a ring-resonator design table.
/// Reads a `gap_m,q_c` CSV into a coupling curve (not validated here).
pub fn read_coupling_curve(path: impl AsRef<Path>) -> Result<Vec<CouplingCurvePoint>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(f);
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignEntry {
    pub perimeter_m: f64,
    pub f_sim_hz: f64,
    /// Measured frequencies: both modes of a doublet, or one mode.
    pub f_meas_hz: (f64, Option<f64>),
    pub slotline_f0_hz: Option<f64>,
    pub alpha_hz: f64,
    pub delta_fc_hz: f64,
}

impl DesignEntry {
    /// Builds an entry, deriving `alpha` and `delta_fc` from the measurement.
    pub fn from_measurement(
        perimeter_m: f64,
        f_sim_hz: f64,
        f_meas_hz: (f64, Option<f64>),
        slotline_f0_hz: Option<f64>,
    ) -> Self {
        let pair = (f_meas_hz.0, f_meas_hz.1.unwrap_or(f_meas_hz.0));
        let (alpha_hz, delta_fc_hz) = analyze_doublet(pair, f_sim_hz);
        DesignEntry {
            perimeter_m,
            f_sim_hz,
            f_meas_hz,
            slotline_f0_hz,
            alpha_hz,
            delta_fc_hz,
        }
    }

    /// Mean measured frequency.
    pub fn f_meas_mean_hz(&self) -> f64 {
        match self.f_meas_hz {
            (a, Some(b)) => 0.5 * (a + b),
            (a, None) => a,
        }
    }
}

// Table columns are in mm and GHz. A single measured column holds the doublet
// mean; the split lives in delta_fc_ghz.
#[derive(Debug, Serialize, Deserialize)]
struct DesignRow {
    perimeter_mm: f64,
    f_sim_ghz: f64,
    f_meas_ghz: f64,
    slotline_f0_ghz: Option<f64>,
    alpha_ghz: f64,
    delta_fc_ghz: f64,
}

pub fn parse_design_table<R: Read>(reader: R) -> Result<Vec<DesignEntry>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize::<DesignRow>() {
        let r = row?;
        let mean = r.f_meas_ghz * 1e9;
        let half = 0.5 * r.delta_fc_ghz * 1e9;
        let f_meas_hz = if half > 0.0 {
            (mean - half, Some(mean + half))
        } else {
            (mean, None)
        };
        out.push(DesignEntry {
            perimeter_m: r.perimeter_mm * 1e-3,
            f_sim_hz: r.f_sim_ghz * 1e9,
            f_meas_hz,
            slotline_f0_hz: r.slotline_f0_ghz.map(|g| g * 1e9),
            alpha_hz: r.alpha_ghz * 1e9,
            delta_fc_hz: r.delta_fc_ghz * 1e9,
        });
    }
    Ok(out)
}

pub fn read_design_table(path: impl AsRef<Path>) -> Result<Vec<DesignEntry>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_design_table(f)
}

pub fn write_design_table<W: Write>(writer: W, entries: &[DesignEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for e in entries {
        w.serialize(DesignRow {
            perimeter_mm: e.perimeter_m * 1e3,
            f_sim_ghz: e.f_sim_hz * 1e-9,
            f_meas_ghz: e.f_meas_mean_hz() * 1e-9,
            slotline_f0_ghz: e.slotline_f0_hz.map(|h| h * 1e-9),
            alpha_ghz: e.alpha_hz * 1e-9,
            delta_fc_ghz: e.delta_fc_hz * 1e-9,
        })?;
    }
    w.flush().map_err(|e| Error::io("<design table>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coax_anchors() {
        assert!((coax_impedance(10.0, 1.0, 1.0).unwrap() - 138.0).abs() < 1e-12);
        let r = coax_ratio_for_impedance(50.0, 1.0);
        assert!((r - 2.3031).abs() < 1e-4);
        assert!((coax_impedance(r * 1e-3, 1e-3, 1.0).unwrap() - 50.0).abs() < 1e-9);
        assert!(matches!(
            coax_impedance(1e-3, 1e-3, 1.0),
            Err(Error::Geometry(_))
        ));
        assert!(coax_impedance(2e-3, 1e-3, 0.5).is_err());
    }

    #[test]
    fn coax_scaling() {
        let z1 = coax_impedance(3.0, 1.0, 1.0).unwrap();
        let z4 = coax_impedance(3.0, 1.0, 4.0).unwrap();
        assert!((z4 - z1 / 2.0).abs() < 1e-12);
        let z2 = coax_impedance(6.0, 2.0, 1.0).unwrap();
        assert!((z2 - z1).abs() < 1e-12);
    }

    #[test]
    fn ring_identity() {
        let f = ring_resonance(20.4126e-3, 5.0333, 1);
        assert!((f - 6.5463e9).abs() / 6.5463e9 < 1e-4);
        assert!((ring_resonance(40.8252e-3, 5.0333, 1) - f / 2.0).abs() < 1e-3);
        let eps = eps_eff_for(20.4126e-3, 6.5463e9, 1);
        assert!((ring_resonance(20.4126e-3, eps, 1) - 6.5463e9).abs() < 1e-3);
        let f1 = ring_resonance(17.3246e-3, eps, 1);
        assert!((f1 - 7.7028e9).abs() / 7.7028e9 < 2e-3);
    }

    #[test]
    fn doublet() {
        let (a, d) = analyze_doublet((6.072e9 - 3.15e6, 6.072e9 + 3.15e6), 6.5463e9);
        assert!((a + 0.4743e9).abs() < 0.2e6);
        assert!((d - 6.3e6).abs() < 1e-3);
        let (a2, d2) = analyze_doublet((6.072e9 + 3.15e6, 6.072e9 - 3.15e6), 6.5463e9);
        assert_eq!((a, d), (a2, d2));
        assert_eq!(analyze_doublet((5e9, 5e9), 6e9), (-1e9, 0.0));
    }

    #[test]
    fn coupling_curve() {
        let c = [
            CouplingCurvePoint {
                gap_m: 100e-6,
                q_c: 1e6,
            },
            CouplingCurvePoint {
                gap_m: 200e-6,
                q_c: 1e7,
            },
        ];
        let mid = coupling_interpolate(&c, 150e-6).unwrap();
        assert!((mid.q_c - 1e6 * 10f64.sqrt()).abs() / mid.q_c < 1e-12);
        assert!(!mid.extrapolated);
        assert_eq!(coupling_interpolate(&c, 200e-6).unwrap().q_c, 1e7);
        let far = coupling_interpolate(&c, 300e-6).unwrap();
        assert!(far.extrapolated && (far.q_c - 1e8).abs() / 1e8 < 1e-12);
        assert!(coupling_interpolate(&c[..1], 1e-4).is_err());
        assert!(coupling_interpolate(&[c[1], c[0]], 1e-4).is_err());
        assert!(coupling_interpolate(&[c[0], c[0]], 1e-4).is_err());
    }

    #[test]
    fn table_round_trip() {
        let e = vec![
            DesignEntry::from_measurement(
                20.4126e-3,
                6.5463e9,
                (6.06885e9, Some(6.07515e9)),
                Some(5.0e9),
            ),
            DesignEntry::from_measurement(17.3246e-3, 7.7028e9, (7.2e9, None), None),
        ];
        let mut buf = Vec::new();
        write_design_table(&mut buf, &e).unwrap();
        let back = parse_design_table(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in e.iter().zip(&back) {
            assert!((a.alpha_hz - b.alpha_hz).abs() < 1e-3);
            assert!((a.delta_fc_hz - b.delta_fc_hz).abs() < 1e-3);
            assert!((a.f_meas_mean_hz() - b.f_meas_mean_hz()).abs() < 1e-3);
            assert_eq!(a.slotline_f0_hz.is_some(), b.slotline_f0_hz.is_some());
        }
    }
}
