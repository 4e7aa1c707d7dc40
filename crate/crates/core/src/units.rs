//! Physical constants and decibel helpers.

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant, J/K.
pub const K_B: f64 = 1.380_649e-23;
/// Speed of light in vacuum, m/s.
pub const C0: f64 = 299_792_458.0;

/// Two-sided 95% normal quantile used for all reported confidence half-widths.
pub const Z95: f64 = 1.959_963_984_540_054;

pub fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

pub fn amplitude_to_db(amp: f64) -> f64 {
    20.0 * amp.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * (w / 1e-3).log10()
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

/// Removes 2π jumps from a phase sequence.
pub fn unwrap_phase(phase: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(phase.len());
    let mut offset = 0.0;
    let mut prev: Option<f64> = None;
    for &p in phase {
        if let Some(q) = prev {
            let d = p - q;
            offset -= (d / (2.0 * std::f64::consts::PI)).round() * 2.0 * std::f64::consts::PI;
        }
        out.push(p + offset);
        prev = Some(p);
    }
    out
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn db_roundtrip() {
        assert!((db_to_amplitude(-3.0102) - 0.707_114_9).abs() < 1e-6);
        assert!((amplitude_to_db(0.5) + 6.020_6).abs() < 1e-4);
        assert_eq!(dbm_to_watts(0.0), 1e-3);
    }

    #[test]
    fn unwrap_removes_jumps() {
        let raw: Vec<f64> = (0..50).map(|i| wrap_angle(0.4 * i as f64)).collect();
        let un = unwrap_phase(&raw);
        for (i, u) in un.iter().enumerate() {
            assert!((u - 0.4 * i as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn wrap_range() {
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-15);
    }
}
