use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use resokit::baseline::ResonanceWindow;
use resokit::circlefit::fit_windows;
use resokit::par;
use resokit::photon::PowerPoint;
use resokit::scurve::{fit_scurve, scurve_model, ScurveParams, ThermalContext};
use resokit::synth::{noise_sigma_for_snr, synth_resonance, Grid, SynthSpec, SynthTruth};
use resokit::Execution;

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn windows(n: usize) -> Vec<ResonanceWindow> {
    let truth = SynthTruth {
        f_c: 6.072e9,
        q_i: 9.1e5,
        q_c_mag: 1.5e6,
        phi: 0.15,
        tau_s: 2e-8,
        env_amp: 0.3,
        env_phase: 1.0,
    };
    let sigma = noise_sigma_for_snr(&truth, 20.0);
    (0..n as u64)
        .map(|seed| {
            let spec = SynthSpec {
                truth,
                grid: Grid::around(&truth, 40.0, 2001),
                noise_sigma: sigma,
                seed,
            };
            ResonanceWindow::whole(synth_resonance(&spec).unwrap())
        })
        .collect()
}

fn dcm_batch(c: &mut Criterion) {
    let ws = windows(64);
    let mut g = c.benchmark_group("dcm_fit_64_windows");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| fit_windows(&ws, exec))
        });
    }
    g.finish();
}

fn scurve_trials(c: &mut Criterion) {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    let truth = ScurveParams {
        f_dtls: 1.1e-6,
        n_c: 2000.0,
        beta: 0.2,
        q_hp: 5e6,
    };
    let ctx = ThermalContext::new(6.072e9, 0.015).unwrap();
    let trial = |seed: usize| {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed as u64);
        let noise = Normal::new(0.0, 0.03).unwrap();
        let pts: Vec<PowerPoint> = (0..12)
            .map(|k| {
                let n = 10f64.powf(7.0 * k as f64 / 11.0);
                let y = scurve_model(n, &truth, &ctx);
                PowerPoint {
                    n_mean: n,
                    inv_qi: y * (1.0 + noise.sample(&mut rng)),
                    sigma_inv_qi: 0.03 * y,
                    applied_power_w: n * 1e-20,
                }
            })
            .collect();
        fit_scurve(&pts, &ctx).map(|f| f.params.q_hp).ok()
    };
    let mut g = c.benchmark_group("scurve_fit_64_trials");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| par::map_range(exec, 64, trial))
        });
    }
    g.finish();
}

criterion_group!(benches, dcm_batch, scurve_trials);
criterion_main!(benches);
