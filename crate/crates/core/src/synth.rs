//! Forward-model generator for synthetic S21 traces and power sweeps with
//! known ground truth.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::circlefit::{dcm_model, DcmParams};
use crate::error::{Error, Result};
use crate::photon::{applied_power, mean_photon_number};
use crate::scurve::{scurve_model, ScurveParams, ThermalContext};
use crate::trace_io::{attach_metadata, ComplexTrace, MeasuredTrace, TraceMeta};

/// Ground-truth resonance parameters, parameterized by `Q_i` rather than `Q_l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub f_c: f64,
    pub q_i: f64,
    pub q_c_mag: f64,
    pub phi: f64,
    pub tau_s: f64,
    pub env_amp: f64,
    pub env_phase: f64,
}

impl SynthTruth {
    pub fn q_l(&self) -> f64 {
        if self.q_c_mag.is_infinite() {
            return self.q_i;
        }
        DcmParams::loaded_q(self.q_i, self.q_c_mag, self.phi)
    }

    pub fn params(&self) -> DcmParams {
        DcmParams {
            f_c: self.f_c,
            q_l: self.q_l(),
            q_c_mag: self.q_c_mag,
            phi: self.phi,
            tau_s: self.tau_s,
            env_amp: self.env_amp,
            env_phase: self.env_phase,
        }
    }

    pub fn linewidth_hz(&self) -> f64 {
        self.f_c / self.q_l()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub f_lo: f64,
    pub f_hi: f64,
    pub n_points: usize,
}

impl Grid {
    /// `n_points` samples spanning `linewidths` linewidths centred on the truth.
    pub fn around(truth: &SynthTruth, linewidths: f64, n_points: usize) -> Self {
        let half = 0.5 * linewidths * truth.linewidth_hz();
        Self {
            f_lo: truth.f_c - half,
            f_hi: truth.f_c + half,
            n_points,
        }
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.n_points;
        let step = (self.f_hi - self.f_lo) / (n - 1) as f64;
        (0..n)
            .map(|i| {
                if i == n - 1 {
                    self.f_hi
                } else {
                    self.f_lo + step * i as f64
                }
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if !(self.f_hi > self.f_lo) || !self.f_lo.is_finite() || !self.f_hi.is_finite() {
            return Err(Error::validation("grid", format!("{self:?} not ascending")));
        }
        if self.n_points < crate::trace_io::MIN_TRACE_POINTS {
            return Err(Error::validation("grid", "too few points"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub truth: SynthTruth,
    pub grid: Grid,
    /// Complex-Gaussian standard deviation per point (`E|n|^2 = sigma^2`).
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::validation("noise_sigma", "must be >= 0"));
        }
        let t = &self.truth;
        if !(t.q_i > 0.0 && t.q_c_mag > 0.0 && t.f_c > 0.0) {
            return Err(Error::validation(
                "truth",
                "q_i, q_c_mag and f_c must be positive",
            ));
        }
        Ok(())
    }
}

/// Per-point noise that puts the resonance circle diameter `snr_db` above
/// the noise: `sigma = (Q_l/|Q_c|) * env_amp / 10^(snr_db/20)`.
pub fn noise_sigma_for_snr(truth: &SynthTruth, snr_db: f64) -> f64 {
    truth.q_l() / truth.q_c_mag * truth.env_amp / 10f64.powf(snr_db / 20.0)
}

fn add_noise(samples: &mut [Complex64], sigma: f64, seed: u64) {
    if sigma == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma / std::f64::consts::SQRT_2).expect("finite sigma");
    for z in samples {
        *z += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
    }
}

pub fn synth_resonance(spec: &SynthSpec) -> Result<ComplexTrace> {
    spec.validate()?;
    let p = spec.truth.params();
    let freq = spec.grid.frequencies();
    let mut s21: Vec<Complex64> = if spec.truth.q_c_mag.is_infinite() {
        freq.iter().map(|&f| p.environment(f)).collect()
    } else {
        freq.iter().map(|&f| dcm_model(f, &p)).collect()
    };
    add_noise(&mut s21, spec.noise_sigma, spec.seed);
    ComplexTrace::new(freq, s21)
}

/// Two notches cascaded under the environment of `first`. Noise settings
/// are taken from `first`.
pub fn synth_doublet(first: &SynthSpec, second: &SynthSpec) -> Result<ComplexTrace> {
    first.validate()?;
    second.validate()?;
    if first.grid != second.grid {
        return Err(Error::validation(
            "grid",
            "doublet components must share one grid",
        ));
    }
    let (a, b) = (first.truth.params(), second.truth.params());
    let freq = first.grid.frequencies();
    let mut s21: Vec<Complex64> = freq
        .iter()
        .map(|&f| a.environment(f) * a.resonance_factor(f) * b.resonance_factor(f))
        .collect();
    add_noise(&mut s21, first.noise_sigma, first.seed);
    ComplexTrace::new(freq, s21)
}

/// Trace shape and noise for each emitted sweep trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSynthOptions {
    pub phi: f64,
    pub tau_s: f64,
    pub env_amp: f64,
    pub env_phase: f64,
    pub span_linewidths: f64,
    pub n_points: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub damping: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SweepSynthOptions {
    fn default() -> Self {
        Self {
            phi: 0.0,
            tau_s: 0.0,
            env_amp: 1.0,
            env_phase: 0.0,
            span_linewidths: 40.0,
            n_points: 2001,
            noise_sigma: 0.0,
            seed: 0,
            damping: 0.5,
            tolerance: 1e-10,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSample {
    pub measured: MeasuredTrace,
    pub truth: SynthTruth,
    pub n_mean: f64,
    pub iterations: usize,
}

/// Solves the coupled `(<n>, Q_i)` steady state at one applied power by damped
/// fixed-point iteration. `q_c` is in the real-part convention.
///
/// The photon number is an increasing function of `<n>` through `Q_i`, so a
/// root always lies between its values at zero and infinite `<n>`. When the
/// damped iteration is too slow (the map is nearly tangent at the root) the
/// solve finishes by bisection in `ln <n>` on that bracket.
pub fn self_consistent_photons(
    truth: &ScurveParams,
    ctx: &ThermalContext,
    q_c: f64,
    power_w: f64,
    opts: &SweepSynthOptions,
) -> Result<(f64, f64, usize)> {
    let q_of = |n: f64| {
        let q_i = 1.0 / scurve_model(n, truth, ctx);
        (q_i, 1.0 / (1.0 / q_i + 1.0 / q_c))
    };
    let map = |n: f64| mean_photon_number(power_w, ctx.f_c, q_of(n).1, q_c);
    let residual = |n: f64| (map(n) - n).abs() / n;

    let mut n = map(0.0);
    for it in 1..=opts.max_iterations {
        let next = (1.0 - opts.damping) * map(n) + opts.damping * n;
        let done = (next - n).abs() <= opts.tolerance * next.abs();
        n = next;
        if done && residual(n) < opts.tolerance {
            return Ok((n, q_of(n).0, it));
        }
    }

    let q_hp_only = 1.0 / (1.0 / truth.q_hp + 1.0 / q_c);
    let mut lo = map(0.0).ln();
    let mut hi = mean_photon_number(power_w, ctx.f_c, q_hp_only, q_c)
        .ln()
        .max(lo);
    let mut extra = 0;
    while hi - lo > 1e-15 * hi.abs().max(1.0) && extra < 200 {
        let mid = 0.5 * (lo + hi);
        if map(mid.exp()) > mid.exp() {
            lo = mid;
        } else {
            hi = mid;
        }
        extra += 1;
    }
    let cand = [lo.exp(), hi.exp(), (0.5 * (lo + hi)).exp()];
    let best = cand
        .into_iter()
        .min_by(|a, b| residual(*a).total_cmp(&residual(*b)))
        .unwrap_or(n);
    if residual(best) < opts.tolerance {
        log::debug!(
            "photon fixed point needed bisection after {} damped steps",
            opts.max_iterations
        );
        return Ok((best, q_of(best).0, opts.max_iterations + extra));
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iterations + extra,
        rms: residual(best),
        msg: format!("photon-number fixed point, last iterate <n> = {best:e}"),
    })
}

/// One synthetic trace per power in `powers_dbm`, each at the internal Q
/// the S-curve predicts for its self-consistent photon number.
pub fn synth_power_sweep(
    truth: &ScurveParams,
    ctx: &ThermalContext,
    q_c: f64,
    powers_dbm: &[f64],
    chain: &TraceMeta,
    opts: &SweepSynthOptions,
) -> Result<Vec<SweepSample>> {
    truth.validate()?;
    chain.validate()?;
    if powers_dbm.len() < 2 {
        return Err(Error::validation("powers_dbm", "need at least two powers"));
    }
    powers_dbm
        .iter()
        .enumerate()
        .map(|(i, &dbm)| {
            let power = applied_power(dbm, chain.total_loss_db());
            let (n_mean, q_i, iterations) = self_consistent_photons(truth, ctx, q_c, power, opts)?;
            let st = SynthTruth {
                f_c: ctx.f_c,
                q_i,
                q_c_mag: q_c * opts.phi.cos(),
                phi: opts.phi,
                tau_s: opts.tau_s,
                env_amp: opts.env_amp,
                env_phase: opts.env_phase,
            };
            let spec = SynthSpec {
                truth: st,
                grid: Grid::around(&st, opts.span_linewidths, opts.n_points),
                noise_sigma: opts.noise_sigma,
                seed: opts.seed.wrapping_add(i as u64),
            };
            let trace = synth_resonance(&spec)?;
            let meta = TraceMeta {
                vna_power_dbm: dbm,
                temperature_k: ctx.temperature_k,
                label: format!("{}{}dBm", chain.label, dbm),
                ..chain.clone()
            };
            Ok(SweepSample {
                measured: attach_metadata(trace, meta)?,
                truth: st,
                n_mean,
                iterations,
            })
        })
        .collect()
}
