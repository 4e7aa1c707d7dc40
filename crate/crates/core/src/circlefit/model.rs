use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Parameter vector of the diameter-corrected notch model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcmParams {
    /// Resonance frequency, Hz.
    pub f_c: f64,
    /// Loaded quality factor.
    pub q_l: f64,
    /// Magnitude of the complex coupling quality factor |Q_c*|.
    pub q_c_mag: f64,
    /// Impedance-mismatch rotation, radians.
    pub phi: f64,
    /// Cable delay, s.
    pub tau_s: f64,
    pub env_amp: f64,
    /// Environment phase, radians, referenced to f = 0 (the delay term uses absolute f).
    pub env_phase: f64,
}

impl DcmParams {
    /// Internal quality factor from `1/Q_i = 1/Q_l - cos(phi)/|Q_c|`.
    pub fn q_i(&self) -> f64 {
        1.0 / (1.0 / self.q_l - self.phi.cos() / self.q_c_mag)
    }

    /// Coupling quality factor in the real-part convention, `|Q_c| / cos(phi)`.
    pub fn q_c(&self) -> f64 {
        self.q_c_mag / self.phi.cos()
    }

    pub fn linewidth_hz(&self) -> f64 {
        self.f_c / self.q_l
    }

    /// Loaded Q for given internal and coupling parameters.
    pub fn loaded_q(q_i: f64, q_c_mag: f64, phi: f64) -> f64 {
        1.0 / (1.0 / q_i + phi.cos() / q_c_mag)
    }

    /// The bare resonance factor `1 - (Q_l/|Q_c|) e^{i phi} / (1 + 2i Q_l (f/f_c - 1))`.
    pub fn resonance_factor(&self, f: f64) -> Complex64 {
        let x = f / self.f_c - 1.0;
        let denom = Complex64::new(1.0, 2.0 * self.q_l * x);
        Complex64::new(1.0, 0.0) - Complex64::from_polar(self.q_l / self.q_c_mag, self.phi) / denom
    }

    pub fn environment(&self, f: f64) -> Complex64 {
        Complex64::from_polar(self.env_amp, self.env_phase - 2.0 * PI * f * self.tau_s)
    }
}

/// Evaluates the full model `A e^{i alpha} e^{-2 pi i f tau} [1 - (Q_l/|Q_c|) e^{i phi} / (1 + 2i Q_l (f/f_c - 1))]`.
pub fn dcm_model(f: f64, p: &DcmParams) -> Complex64 {
    p.environment(f) * p.resonance_factor(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> DcmParams {
        DcmParams {
            f_c: 6.072e9,
            q_l: 8e5,
            q_c_mag: 5e7,
            phi: 0.0,
            tau_s: 0.0,
            env_amp: 1.0,
            env_phase: 0.0,
        }
    }

    #[test]
    fn on_resonance_depth() {
        let p = base();
        let z = dcm_model(p.f_c, &p);
        assert!((z.re - (1.0 - 8e5 / 5e7)).abs() < 1e-15);
        assert_eq!(z.im, 0.0);
    }

    #[test]
    fn asymmetric_on_resonance() {
        let p = DcmParams { phi: 0.2, ..base() };
        let z = dcm_model(p.f_c, &p);
        let expect = Complex64::new(1.0, 0.0) - Complex64::from_polar(0.016, 0.2);
        assert!((z - expect).norm() < 1e-15);
    }

    #[test]
    fn far_wing_is_environment() {
        let p = DcmParams {
            phi: 0.3,
            tau_s: 7e-9,
            env_amp: 0.4,
            env_phase: 1.1,
            ..base()
        };
        let f = p.f_c * 1.5;
        let z = dcm_model(f, &p);
        let env = Complex64::from_polar(0.4, 1.1 - 2.0 * PI * f * 7e-9);
        assert!((z - env).norm() < 1e-6 * 0.4);
    }

    #[test]
    fn identity_for_q_i() {
        let p = DcmParams { phi: 0.2, ..base() };
        let lhs = 1.0 / p.q_i();
        let rhs = 1.0 / p.q_l - 0.2f64.cos() / p.q_c_mag;
        assert!(((lhs - rhs) / lhs).abs() < 1e-14);
        let ql = DcmParams::loaded_q(p.q_i(), p.q_c_mag, p.phi);
        assert!((ql / p.q_l - 1.0).abs() < 1e-12);
    }
}
