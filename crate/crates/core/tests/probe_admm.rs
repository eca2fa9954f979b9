use botda_core::deconv::{tv_deconvolve, ConvOperator, DeconvConfig};
use botda_core::dpp::{dpp_kernel, DeconvKernel};
use botda_core::brillouin::{PulseScheme, SamplingGrid};
use botda_core::simulator::GainTrace;

fn grid(n: usize) -> SamplingGrid {
    SamplingGrid { dt_s: 1e-9, group_velocity_m_per_s: 2.0e8, n_samples: n }
}

fn pair_kernel() -> DeconvKernel {
    dpp_kernel(
        PulseScheme::Pair { width_long_s: 60e-9, width_short_s: 40e-9 },
        27.0e6,
        &grid(256),
        false,
    )
    .unwrap()
}

fn trace_of(samples: Vec<f64>) -> GainTrace {
    let n = samples.len();
    GainTrace {
        samples,
        grid: grid(n),
        pulse: PulseScheme::Pair { width_long_s: 60e-9, width_short_s: 40e-9 },
        probe_offset_hz: 0.0,
        normalized: true,
        seed: None,
    }
}

fn lcg_signal(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed.max(1);
    (0..n)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect()
}

#[test]
#[ignore]
fn probe() {
    let kernel = pair_kernel();
    let n = 260;
    let f_true: Vec<f64> = (0..n).map(|i| if (80..150).contains(&i) { 1.0 } else { 0.0 }).collect();
    let op = ConvOperator::new(&kernel, n).unwrap();
    let g = op.apply(&f_true);
    let mut g_noisy = g.clone();
    for (i, x) in lcg_signal(n, 31).iter().enumerate() {
        g_noisy[i] += 0.03 * x;
    }
    let tapsum: f64 = kernel.samples.iter().sum();
    let tapsq: f64 = kernel.samples.iter().map(|t| t * t).sum();
    println!("kernel: {} taps, sum {tapsum:.4e}, energy {tapsq:.4e}", kernel.len());

    for (label, data) in [("clean", &g), ("noisy", &g_noisy)] {
        for mu in [1e-3_f64, 1e-2] {
            for rho0 in [2.0_f64, 0.5, 0.1, 0.02, 0.004] {
                for tol in [1e-4_f64, 1e-6] {
                    let cfg = DeconvConfig {
                        max_iters: 20000,
                        rel_tolerance: tol,
                        penalty_rho: rho0,
                        track_best: false,
                        ..DeconvConfig::default()
                    };
                    let rec = tv_deconvolve(&trace_of(data.to_vec()), &kernel, mu, &cfg).unwrap();
                    let d = &rec.diagnostics;
                    println!(
                        "{label} mu {mu:7.0e} rho0 {rho0:6.3} tol {tol:7.0e}: iters {:6} conv {} rho_end {:9.4} obj {:.6e}",
                        d.iterations, d.converged, d.final_rho, d.final_objective
                    );
                }
            }
        }
    }
}
