//! Received-trace and gain-map simulation.
//!
//! A trace is the detected probe gain versus time: every fiber cell `z_j`
//! contributes its gated envelope, delayed by the two-way travel `2z/v_g`,
//! weighted by the local impulse-response density and the cell width `dz`.
//! The real part is taken when the sample is formed, so detuned channels
//! keep their in-phase transient structure.
//!
//! Layout convention: the fiber starts one (long) pulse width into the
//! grid, i.e. at position `v_g·T/2`, so every trace has an exactly-zero
//! lead-in of `T` and an exactly-zero tail after the response; grids built
//! by [`grid_for`] cover `2L/v_g + 3T`. The zero guard bands are what later
//! justifies the deconvolution's zero-padded boundary.
//!
//! Pair schemes simulate both widths on the same layout and subtract, so a
//! pair trace is already the differential measurement. Noise is injected on
//! that differential (normalized) trace, never on the constituents.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::brillouin::{
    detuning_parameter, envelope, FiberProfile, PulseScheme, SamplingGrid,
};
use crate::dpp;
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Data types
// ---------------------------------------------------------------------------

/// One detected gain trace on a [`SamplingGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GainTrace {
    pub samples: Vec<f64>,
    pub grid: SamplingGrid,
    pub pulse: PulseScheme,
    /// Probe offset from the fiber base BFS, in Hz.
    pub probe_offset_hz: f64,
    /// True once samples are scaled so the zero-detuning steady plateau is 1.
    pub normalized: bool,
    /// Noise sub-seed if noise has been injected.
    pub seed: Option<u64>,
}

/// Uniform probe-frequency sweep (absolute frequencies).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencySweep {
    pub start_hz: f64,
    pub step_hz: f64,
    pub count: usize,
}

impl FrequencySweep {
    /// Default sweep: base BFS ± 100 MHz in 1 MHz steps.
    pub fn default_for(fiber: &FiberProfile) -> Self {
        Self {
            start_hz: fiber.base_bfs_hz - 100.0e6,
            step_hz: 1.0e6,
            count: 201,
        }
    }

    pub fn frequency_hz(&self, index: usize) -> f64 {
        self.start_hz + index as f64 * self.step_hz
    }

    pub fn end_hz(&self) -> f64 {
        self.frequency_hz(self.count.saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start_hz > 0.0) || !(self.step_hz > 0.0) || self.count < 2 {
            return Err(Error::Validation(format!(
                "sweep must have positive start/step and at least 2 points (start = {}, step = {}, count = {})",
                self.start_hz, self.step_hz, self.count
            )));
        }
        Ok(())
    }

    /// The sweep must reach at least two linewidths past every section BFS,
    /// otherwise spectra are one-sided and fits are meaningless.
    pub fn validate_covers(&self, fiber: &FiberProfile) -> Result<()> {
        self.validate()?;
        let margin = 2.0 * fiber.linewidth_hz;
        let mut lo = fiber.base_bfs_hz;
        let mut hi = fiber.base_bfs_hz;
        for h in &fiber.hotspots {
            lo = lo.min(h.bfs_hz);
            hi = hi.max(h.bfs_hz);
        }
        if self.start_hz > lo - margin || self.end_hz() < hi + margin {
            return Err(Error::Validation(format!(
                "sweep [{:.4}, {:.4}] GHz must cover all BFS values with a 2-linewidth margin [{:.4}, {:.4}] GHz",
                self.start_hz / 1e9,
                self.end_hz() / 1e9,
                (lo - margin) / 1e9,
                (hi + margin) / 1e9
            )));
        }
        Ok(())
    }
}

/// Gain-spectrum map: one trace per sweep frequency, on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BgsMap {
    pub traces: Vec<GainTrace>,
    pub freq_axis_hz: Vec<f64>,
    pub base_bfs_hz: f64,
    pub linewidth_hz: f64,
    pub fiber_length_m: f64,
    /// Grid position where fiber coordinate zero sits (the lead-in).
    pub fiber_start_m: f64,
    pub pulse: PulseScheme,
    pub seed: Option<u64>,
}

impl BgsMap {
    pub fn n_channels(&self) -> usize {
        self.traces.len()
    }

    pub fn n_samples(&self) -> usize {
        self.traces.first().map_or(0, |t| t.samples.len())
    }

    pub fn grid(&self) -> SamplingGrid {
        self.traces[0].grid
    }

    /// Index of the sweep channel closest to `freq_hz`.
    pub fn channel_nearest(&self, freq_hz: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, f) in self.freq_axis_hz.iter().enumerate() {
            let d = (f - freq_hz).abs();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    pub fn validate(&self) -> Result<()> {
        if self.traces.is_empty() || self.traces.len() != self.freq_axis_hz.len() {
            return Err(Error::Contract(format!(
                "map must pair every trace with a sweep frequency ({} traces, {} frequencies)",
                self.traces.len(),
                self.freq_axis_hz.len()
            )));
        }
        let grid = self.traces[0].grid;
        for t in &self.traces {
            if t.grid != grid || t.pulse != self.pulse || t.samples.len() != grid.n_samples {
                return Err(Error::Contract(
                    "all traces in a map must share one grid and pulse scheme".into(),
                ));
            }
        }
        for w in self.freq_axis_hz.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Contract("sweep axis must be strictly increasing".into()));
            }
        }
        Ok(())
    }
}

/// Additive white Gaussian measurement noise at a target SNR.
///
/// `snr_db = 20·log10(plateau / sigma)`; an infinite target is a no-op.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub target_snr_db: f64,
    pub seed: u64,
}

// ---------------------------------------------------------------------------
// Seeding
// ---------------------------------------------------------------------------

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Deterministic sub-seed for stream `stream` of a base seed. Channel and
/// realization loops draw their per-item seeds through this, which is what
/// makes parallel and serial sweeps bit-identical.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(base) ^ splitmix64(stream ^ 0xD6E8_FEB8_6659_FD93))
}

// ---------------------------------------------------------------------------
// Layout
// ---------------------------------------------------------------------------

/// Grid position of fiber coordinate zero: one (long) pulse width of
/// lead-in, `v_g·T/2`.
pub fn default_fiber_start_m(pulse: PulseScheme, grid: &SamplingGrid) -> f64 {
    grid.group_velocity_m_per_s * pulse.width_long_s() / 2.0
}

/// Builds the acquisition grid for a fiber/pulse pair at `sample_rate_hz`:
/// lead-in, full round trip, pulse egress tail and lead-out.
pub fn grid_for(
    fiber: &FiberProfile,
    pulse: PulseScheme,
    sample_rate_hz: f64,
    group_velocity_m_per_s: f64,
) -> Result<SamplingGrid> {
    if !(sample_rate_hz > 0.0) || !(group_velocity_m_per_s > 0.0) {
        return Err(Error::Validation(
            "sample rate and group velocity must be positive".into(),
        ));
    }
    let dt = 1.0 / sample_rate_hz;
    let duration = 2.0 * fiber.length_m / group_velocity_m_per_s + 3.0 * pulse.width_long_s();
    let n = (duration / dt).ceil() as usize + 1;
    let grid = SamplingGrid {
        dt_s: dt,
        group_velocity_m_per_s,
        n_samples: n,
    };
    grid.validate()?;
    Ok(grid)
}

// ---------------------------------------------------------------------------
// Trace synthesis
// ---------------------------------------------------------------------------

/// Simulates the received trace with the standard lead-in layout.
///
/// For `Pair` schemes this is the differential trace: both widths simulated
/// on the identical layout, then subtracted.
pub fn simulate_trace(
    fiber: &FiberProfile,
    pulse: PulseScheme,
    probe_offset_hz: f64,
    grid: &SamplingGrid,
) -> Result<GainTrace> {
    simulate_trace_at(fiber, pulse, probe_offset_hz, grid, default_fiber_start_m(pulse, grid))
}

/// Same as [`simulate_trace`] but with an explicit fiber placement; used by
/// the shift-covariance checks and anywhere a non-default lead-in matters.
pub fn simulate_trace_at(
    fiber: &FiberProfile,
    pulse: PulseScheme,
    probe_offset_hz: f64,
    grid: &SamplingGrid,
    fiber_start_m: f64,
) -> Result<GainTrace> {
    fiber.validate()?;
    pulse.validate()?;
    grid.validate()?;
    if fiber_start_m < 0.0 {
        return Err(Error::Domain("fiber placement must not be negative".into()));
    }
    let v_g = grid.group_velocity_m_per_s;
    let needed = 2.0 * (fiber_start_m + fiber.length_m) / v_g + 2.0 * pulse.width_long_s();
    if grid.duration_s() + 1e-15 < needed {
        return Err(Error::Validation(format!(
            "grid covers {:.1} ns but the layout needs {:.1} ns (round trip plus lead-in/out)",
            grid.duration_s() * 1e9,
            needed * 1e9
        )));
    }

    match pulse {
        PulseScheme::Single { width_s } => {
            let samples = synth_single(fiber, width_s, probe_offset_hz, grid, fiber_start_m);
            Ok(GainTrace {
                samples,
                grid: *grid,
                pulse,
                probe_offset_hz,
                normalized: false,
                seed: None,
            })
        }
        PulseScheme::Pair {
            width_long_s,
            width_short_s,
        } => {
            let mk = |width_s: f64| GainTrace {
                samples: synth_single(fiber, width_s, probe_offset_hz, grid, fiber_start_m),
                grid: *grid,
                pulse: PulseScheme::Single { width_s },
                probe_offset_hz,
                normalized: false,
                seed: None,
            };
            dpp::differential_trace(&mk(width_long_s), &mk(width_short_s))
        }
    }
}

/// Direct synthesis for one rectangular width. Cells sit at `z_j = j·dz`
/// with weight `dz`; the envelope's time argument `(k − j)·dt` is exact, so
/// the discrete model is literally a convolution with the integer-sampled
/// envelope for piecewise-constant fibers.
fn synth_single(
    fiber: &FiberProfile,
    width_s: f64,
    probe_offset_hz: f64,
    grid: &SamplingGrid,
    fiber_start_m: f64,
) -> Vec<f64> {
    let n = grid.n_samples;
    let dt = grid.dt_s;
    let dz = grid.dz_m();
    let probe_hz = fiber.base_bfs_hz + probe_offset_hz;
    let m_count = (width_s / dt).ceil() as usize;

    // Per-section envelope tables and densities; sections are few, cells many.
    let n_sections = fiber.section_count();
    let mut tables: Vec<Vec<Complex64>> = Vec::with_capacity(n_sections);
    let mut densities: Vec<Complex64> = Vec::with_capacity(n_sections);
    for s in 0..n_sections {
        let rate = detuning_parameter(fiber.section_bfs_hz(s), probe_hz, fiber.linewidth_hz);
        let gamma_conj = Complex64::new(rate.re_per_s, -rate.im_per_s);
        densities.push(Complex64::new(fiber.gain_scale, 0.0) / (2.0 * gamma_conj));
        tables.push(
            (0..m_count)
                .map(|m| envelope(rate, width_s, m as f64 * dt))
                .collect(),
        );
    }

    let j_lo = ((fiber_start_m / dz) - 1e-9).ceil() as usize;
    let j_hi = (((fiber_start_m + fiber.length_m) / dz) - 1e-9).ceil() as usize;

    let mut acc = vec![Complex64::new(0.0, 0.0); n];
    for j in j_lo..j_hi {
        // 1 nm nudge keeps grid-aligned section boundaries on the intended
        // side of the half-open spans despite float noise.
        let z_fiber = j as f64 * dz - fiber_start_m + 1e-9;
        let s = fiber.section_index_at(z_fiber);
        let dens = densities[s];
        let table = &tables[s];
        let k_hi = (j + m_count).min(n);
        for k in j..k_hi {
            acc[k] += table[k - j] * dens;
        }
    }
    acc.into_iter().map(|c| c.re * dz).collect()
}

// ---------------------------------------------------------------------------
// Normalization and noise
// ---------------------------------------------------------------------------

/// Zero-detuning steady-state plateau of the noiseless trace, in raw units.
/// This is an exact closed form for the discrete model: the interior of a
/// uniform on-peak trace is `dz·κ/(2πΔν)·Σ_m p(m·dt)`.
pub fn plateau_amplitude(
    pulse: PulseScheme,
    linewidth_hz: f64,
    gain_scale: f64,
    grid: &SamplingGrid,
) -> f64 {
    let rate = crate::brillouin::ComplexRate {
        re_per_s: std::f64::consts::PI * linewidth_hz,
        im_per_s: 0.0,
    };
    let dt = grid.dt_s;
    let width_long = pulse.width_long_s();
    let m_count = (width_long / dt).ceil() as usize;
    let mut sum = 0.0;
    for m in 0..m_count {
        let t = m as f64 * dt;
        let p = match pulse {
            PulseScheme::Single { width_s } => envelope(rate, width_s, t),
            PulseScheme::Pair {
                width_long_s,
                width_short_s,
            } => envelope(rate, width_long_s, t) - envelope(rate, width_short_s, t),
        };
        sum += p.re;
    }
    let density = gain_scale / (2.0 * rate.re_per_s);
    grid.dz_m() * density * sum
}

/// Scales a raw trace so the zero-detuning steady plateau equals one.
pub fn normalize_trace(trace: &mut GainTrace, linewidth_hz: f64, gain_scale: f64) -> Result<()> {
    if trace.normalized {
        return Err(Error::Contract("trace is already normalized".into()));
    }
    let amp = plateau_amplitude(trace.pulse, linewidth_hz, gain_scale, &trace.grid);
    if !(amp > 0.0) || !amp.is_finite() {
        return Err(Error::Domain(format!("plateau amplitude {amp} is not usable")));
    }
    for s in &mut trace.samples {
        *s /= amp;
    }
    trace.normalized = true;
    Ok(())
}

/// Adds white Gaussian noise at `spec.target_snr_db` relative to the unit
/// plateau. The trace must be normalized first; that is what pins sigma.
pub fn add_noise(trace: &mut GainTrace, spec: &NoiseSpec) -> Result<()> {
    if !trace.normalized {
        return Err(Error::Contract(
            "noise level is defined against the unit plateau; normalize the trace first".into(),
        ));
    }
    if spec.target_snr_db.is_infinite() && spec.target_snr_db > 0.0 {
        return Ok(());
    }
    if !spec.target_snr_db.is_finite() {
        return Err(Error::Domain(format!(
            "target SNR must be finite or +inf, got {}",
            spec.target_snr_db
        )));
    }
    let sigma = 10.0_f64.powf(-spec.target_snr_db / 20.0);
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    for s in &mut trace.samples {
        *s += normal.sample(&mut rng);
    }
    trace.seed = Some(spec.seed);
    Ok(())
}

// ---------------------------------------------------------------------------
// Sweep maps
// ---------------------------------------------------------------------------

/// Simulates the full gain-spectrum map: one normalized trace per sweep
/// frequency (pair schemes yield differential traces), with optional noise.
///
/// Channel `i` draws its noise from `derive_seed(spec.seed, i)`, so the
/// parallel fan-out is bit-identical to a serial loop.
pub fn simulate_bgs(
    fiber: &FiberProfile,
    pulse: PulseScheme,
    sweep: &FrequencySweep,
    grid: &SamplingGrid,
    noise: Option<&NoiseSpec>,
) -> Result<BgsMap> {
    fiber.validate()?;
    sweep.validate_covers(fiber)?;
    let traces: Vec<GainTrace> = (0..sweep.count)
        .into_par_iter()
        .map(|ci| -> Result<GainTrace> {
            let offset = sweep.frequency_hz(ci) - fiber.base_bfs_hz;
            let mut t = simulate_trace(fiber, pulse, offset, grid)?;
            normalize_trace(&mut t, fiber.linewidth_hz, fiber.gain_scale)?;
            if let Some(spec) = noise {
                add_noise(
                    &mut t,
                    &NoiseSpec {
                        target_snr_db: spec.target_snr_db,
                        seed: derive_seed(spec.seed, ci as u64),
                    },
                )?;
            }
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    let map = BgsMap {
        freq_axis_hz: (0..sweep.count).map(|i| sweep.frequency_hz(i)).collect(),
        traces,
        base_bfs_hz: fiber.base_bfs_hz,
        linewidth_hz: fiber.linewidth_hz,
        fiber_length_m: fiber.length_m,
        fiber_start_m: default_fiber_start_m(pulse, grid),
        pulse,
        seed: noise.map(|s| s.seed),
    };
    map.validate()?;
    Ok(map)
}

/// Fresh noise realization on a noiseless normalized map. Channel `i` uses
/// `derive_seed(spec.seed, i)`; Monte Carlo loops derive one `spec.seed` per
/// realization and share the noiseless map.
pub fn with_noise(noiseless: &BgsMap, spec: &NoiseSpec) -> Result<BgsMap> {
    let mut map = noiseless.clone();
    map.traces
        .par_iter_mut()
        .enumerate()
        .try_for_each(|(ci, t)| {
            add_noise(
                t,
                &NoiseSpec {
                    target_snr_db: spec.target_snr_db,
                    seed: derive_seed(spec.seed, ci as u64),
                },
            )
        })?;
    map.seed = Some(spec.seed);
    Ok(map)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brillouin::Hotspot;

    const LINEWIDTH: f64 = 27.0e6;
    const BASE_BFS: f64 = 10.8e9;
    const V_G: f64 = 2.0e8;

    fn uniform_fiber(length_m: f64) -> FiberProfile {
        FiberProfile::uniform(length_m, BASE_BFS, LINEWIDTH, 1.0)
    }

    fn grid_1g(fiber: &FiberProfile, pulse: PulseScheme) -> SamplingGrid {
        grid_for(fiber, pulse, 1.0e9, V_G).unwrap()
    }

    // -- layout and causality ----------------------------------------------

    #[test]
    fn lead_in_and_tail_are_exactly_zero() {
        let fiber = uniform_fiber(12.0);
        let pulse = PulseScheme::Single { width_s: 60e-9 };
        let grid = grid_1g(&fiber, pulse);
        let trace = simulate_trace(&fiber, pulse, 0.0, &grid).unwrap();
        // First response at t = T (two-way travel to the fiber start).
        for k in 0..60 {
            assert_eq!(trace.samples[k], 0.0, "lead-in sample {k}");
        }
        assert!(trace.samples[61] > 0.0);
        // Response ends at T + 2L/v_g + T = 240 ns.
        let end = (240e-9 / grid.dt_s).round() as usize;
        for k in (end + 1)..grid.n_samples {
            assert_eq!(trace.samples[k], 0.0, "tail sample {k}");
        }
    }

    #[test]
    fn interior_plateau_is_unity_after_normalization() {
        let fiber = uniform_fiber(40.0);
        for pulse in [
            PulseScheme::Single { width_s: 60e-9 },
            PulseScheme::Pair { width_long_s: 60e-9, width_short_s: 40e-9 },
        ] {
            let grid = grid_1g(&fiber, pulse);
            let mut trace = simulate_trace(&fiber, pulse, 0.0, &grid).unwrap();
            normalize_trace(&mut trace, LINEWIDTH, 1.0).unwrap();
            let mid = grid.n_samples / 2;
            assert!(
                (trace.samples[mid] - 1.0).abs() < 1e-6,
                "{pulse:?} plateau {}",
                trace.samples[mid]
            );
            assert!(trace.normalized);
        }
    }

    #[test]
    fn grid_too_short_for_layout_is_rejected() {
        let fiber = uniform_fiber(40.0);
        let pulse = PulseScheme::Single { width_s: 60e-9 };
        let grid = SamplingGrid { dt_s: 1e-9, group_velocity_m_per_s: V_G, n_samples: 300 };
        assert!(matches!(
            simulate_trace(&fiber, pulse, 0.0, &grid),
            Err(Error::Validation(_))
        ));
    }

    // -- equivalence with the direct integral --------------------------------

    /// Direct transliteration of the received-trace integral: for every
    /// sample, walk every fiber cell and evaluate envelope and density on
    /// the spot. Slow but structurally independent of the table/run path.
    ///
    /// The delay is counted in whole sub-grid lags (the fiber start must be
    /// sub-grid aligned), so the envelope gate sees the same time values as
    /// the implementation instead of float noise straddling the gate edge.
    fn oracle_trace(
        fiber: &FiberProfile,
        width_s: f64,
        probe_offset_hz: f64,
        grid: &SamplingGrid,
        fiber_start_m: f64,
        refine: usize,
    ) -> Vec<f64> {
        let dz = grid.dz_m() / refine as f64;
        let dt_sub = grid.dt_s / refine as f64;
        let probe = fiber.base_bfs_hz + probe_offset_hz;
        let n_cells = (fiber.length_m / dz).round() as usize;
        let j0 = (fiber_start_m / dz).round() as isize;
        let mut out = vec![0.0; grid.n_samples];
        for (k, sample) in out.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..n_cells {
                let z_fiber = (j as f64 * dz + 1e-9).min(fiber.length_m);
                let rate = detuning_parameter(fiber.bfs_at(z_fiber), probe, fiber.linewidth_hz);
                let lag = k as isize * refine as isize - j0 - j as isize;
                let p = envelope(rate, width_s, lag as f64 * dt_sub);
                let dens = crate::brillouin::impulse_response_density(fiber, z_fiber, probe);
                acc += p * dens;
            }
            *sample = acc.re * dz;
        }
        out
    }

    #[test]
    fn matches_direct_integral_on_the_same_grid() {
        let fiber = uniform_fiber(6.0);
        let pulse = PulseScheme::Single { width_s: 60e-9 };
        let grid = grid_1g(&fiber, pulse);
        let start = default_fiber_start_m(pulse, &grid);
        let trace = simulate_trace(&fiber, pulse, 0.0, &grid).unwrap();
        let oracle = oracle_trace(&fiber, 60e-9, 0.0, &grid, start, 1);
        let peak = oracle.iter().cloned().fold(0.0, f64::max);
        for (k, (a, b)) in trace.samples.iter().zip(&oracle).enumerate() {
            assert!(
                (a - b).abs() <= 1e-9 * peak,
                "sample {k}: impl {a}, oracle {b}"
            );
        }
    }

    #[test]
    fn detuned_channel_matches_direct_integral_too() {
        let fiber = uniform_fiber(6.0).with_hotspots(vec![Hotspot {
            start_m: 2.0,
            length_m: 1.0,
            bfs_hz: 10.83e9,
        }]);
        let pulse = PulseScheme::Single { width_s: 40e-9 };
        let grid = grid_1g(&fiber, pulse);
        let start = default_fiber_start_m(pulse, &grid);
        let trace = simulate_trace(&fiber, pulse, 25.0e6, &grid).unwrap();
        let oracle = oracle_trace(&fiber, 40e-9, 25.0e6, &grid, start, 1);
        let peak = oracle.iter().cloned().fold(0.0, f64::max).max(1e-12);
        for (a, b) in trace.samples.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-9 * peak);
        }
    }

    #[test]
    fn four_times_finer_quadrature_stays_within_discretization_error() {
        // Left-endpoint quadrature error over the pulse window is about 1%
        // at this cell size, so refining moves the plateau by that much;
        // anything beyond 2% would mean a real misalignment, not quadrature.
        let fiber = uniform_fiber(6.0);
        let pulse = PulseScheme::Single { width_s: 60e-9 };
        let grid = grid_1g(&fiber, pulse);
        let start = default_fiber_start_m(pulse, &grid);
        let trace = simulate_trace(&fiber, pulse, 0.0, &grid).unwrap();
        let fine = oracle_trace(&fiber, 60e-9, 0.0, &grid, start, 4);
        let peak = fine.iter().cloned().fold(0.0, f64::max);
        for (a, b) in trace.samples.iter().zip(&fine) {
            assert!((a - b).abs() <= 2e-2 * peak, "impl {a}, refined {b}");
        }
    }

    // -- structural properties ----------------------------------------------

    #[test]
    fn shifting_the_fiber_shifts_the_trace_exactly() {
        let fiber = uniform_fiber(8.0);
        let pulse = PulseScheme::Single { width_s: 40e-9 };
        let mut grid = grid_1g(&fiber, pulse);
        grid.n_samples += 20;
        let start = default_fiber_start_m(pulse, &grid);
        let a = simulate_trace_at(&fiber, pulse, 10.0e6, &grid, start).unwrap();
        let b = simulate_trace_at(&fiber, pulse, 10.0e6, &grid, start + 7.0 * grid.dz_m()).unwrap();
        for k in 7..grid.n_samples {
            assert_eq!(b.samples[k], a.samples[k - 7], "sample {k}");
        }
    }

    #[test]
    fn gain_scale_is_linear() {
        let mut strong = uniform_fiber(8.0);
        strong.gain_scale = 2.0;
        let weak = uniform_fiber(8.0);
        let pulse = PulseScheme::Single { width_s: 40e-9 };
        let grid = grid_1g(&weak, pulse);
        let a = simulate_trace(&weak, pulse, 5.0e6, &grid).unwrap();
        let b = simulate_trace(&strong, pulse, 5.0e6, &grid).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(*y, 2.0 * *x);
        }
    }

    #[test]
    fn pair_trace_is_long_minus_short() {
        let fiber = uniform_fiber(10.0);
        let pair = PulseScheme::Pair { width_long_s: 60e-9, width_short_s: 40e-9 };
        let grid = grid_1g(&fiber, pair);
        let start = default_fiber_start_m(pair, &grid);
        let diff = simulate_trace(&fiber, pair, 8.0e6, &grid).unwrap();
        let long = simulate_trace_at(&fiber, PulseScheme::Single { width_s: 60e-9 }, 8.0e6, &grid, start).unwrap();
        let short = simulate_trace_at(&fiber, PulseScheme::Single { width_s: 40e-9 }, 8.0e6, &grid, start).unwrap();
        assert_eq!(diff.pulse, pair);
        for k in 0..grid.n_samples {
            assert_eq!(diff.samples[k], long.samples[k] - short.samples[k]);
        }
    }

    #[test]
    fn section_transition_spreads_over_one_pulse_length() {
        // Two 20 m halves at different BFS; probed on the first half's peak,
        // the gain steps down across the boundary over exactly the pulse's
        // spatial length (6 m at 60 ns).
        let fiber = uniform_fiber(40.0).with_hotspots(vec![Hotspot {
            start_m: 20.0,
            length_m: 20.0,
            bfs_hz: 10.83e9,
        }]);
        let pulse = PulseScheme::Single { width_s: 60e-9 };
        let grid = grid_1g(&fiber, pulse);
        let mut trace = simulate_trace(&fiber, pulse, 0.0, &grid).unwrap();
        normalize_trace(&mut trace, LINEWIDTH, 1.0).unwrap();
        // Plateau values away from boundary effects.
        let p1 = trace.samples[200];
        let p2 = trace.samples[420];
        assert!((p1 - 1.0).abs() < 1e-6);
        // Steady-state Lorentzian alone would give 0.168 at 30 MHz off
        // peak; the transient inside the 60 ns gate lifts it to ~0.24.
        assert!(p2 > 0.15 && p2 < 0.3, "detuned-section plateau {p2}");
        // Boundary at fiber coordinate 20 m = grid sample 260; the strictly
        // mixed samples are the crossover interior, endpoints excluded.
        let tol = 1e-9;
        let mut first = None;
        let mut last = None;
        for k in 220..420 {
            if (trace.samples[k] - p1).abs() > tol && (trace.samples[k] - p2).abs() > tol {
                if first.is_none() {
                    first = Some(k);
                }
                last = Some(k);
            }
        }
        let (first, last) = (first.unwrap(), last.unwrap());
        let width = last - first + 1;
        assert!(
            (57..=60).contains(&width),
            "transition spans {width} samples ({first}..={last})"
        );
    }

    // -- noise ---------------------------------------------------------------

    fn flat_trace(n: usize) -> GainTrace {
        GainTrace {
            samples: vec![1.0; n],
            grid: SamplingGrid { dt_s: 1e-9, group_velocity_m_per_s: V_G, n_samples: n },
            pulse: PulseScheme::Single { width_s: 20e-9 },
            probe_offset_hz: 0.0,
            normalized: true,
            seed: None,
        }
    }

    #[test]
    fn injected_noise_round_trips_the_target_snr() {
        let n = 40_000;
        let mut noisy = flat_trace(n);
        add_noise(&mut noisy, &NoiseSpec { target_snr_db: 23.0, seed: 99 }).unwrap();
        let sigma_target = 10.0_f64.powf(-23.0 / 20.0);
        let mean = noisy.samples.iter().sum::<f64>() / n as f64;
        let var = noisy.samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n as f64;
        let measured_db = -20.0 * var.sqrt().log10();
        assert!((measured_db - 23.0).abs() < 0.3, "measured {measured_db} dB");
        assert!((var.sqrt() - sigma_target).abs() / sigma_target < 0.05);
        assert_eq!(noisy.seed, Some(99));
    }

    #[test]
    fn noise_is_white_at_small_lags() {
        let n = 40_000;
        let mut noisy = flat_trace(n);
        add_noise(&mut noisy, &NoiseSpec { target_snr_db: 23.0, seed: 7 }).unwrap();
        let x: Vec<f64> = noisy.samples.iter().map(|s| s - 1.0).collect();
        let var = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
        for lag in 1..=5 {
            let c = x[..n - lag].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum::<f64>()
                / ((n - lag) as f64 * var);
            assert!(c.abs() < 3.0 / (n as f64).sqrt(), "lag {lag} autocorr {c}");
        }
    }

    #[test]
    fn same_seed_is_bit_identical_and_other_seeds_differ() {
        let mut a = flat_trace(512);
        let mut b = flat_trace(512);
        let mut c = flat_trace(512);
        add_noise(&mut a, &NoiseSpec { target_snr_db: 23.0, seed: 5 }).unwrap();
        add_noise(&mut b, &NoiseSpec { target_snr_db: 23.0, seed: 5 }).unwrap();
        add_noise(&mut c, &NoiseSpec { target_snr_db: 23.0, seed: 6 }).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn infinite_snr_is_a_no_op() {
        let mut t = flat_trace(64);
        add_noise(&mut t, &NoiseSpec { target_snr_db: f64::INFINITY, seed: 1 }).unwrap();
        assert!(t.samples.iter().all(|s| *s == 1.0));
        assert_eq!(t.seed, None);
    }

    #[test]
    fn noise_requires_a_normalized_trace() {
        let mut t = flat_trace(64);
        t.normalized = false;
        assert!(matches!(
            add_noise(&mut t, &NoiseSpec { target_snr_db: 23.0, seed: 1 }),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn double_normalization_is_rejected() {
        let fiber = uniform_fiber(8.0);
        let pulse = PulseScheme::Single { width_s: 40e-9 };
        let grid = grid_1g(&fiber, pulse);
        let mut t = simulate_trace(&fiber, pulse, 0.0, &grid).unwrap();
        normalize_trace(&mut t, LINEWIDTH, 1.0).unwrap();
        assert!(matches!(
            normalize_trace(&mut t, LINEWIDTH, 1.0),
            Err(Error::Contract(_))
        ));
    }

    // -- sweep maps -----------------------------------------------------------

    #[test]
    fn sweep_must_cover_all_sections_with_margin() {
        let fiber = uniform_fiber(10.0).with_hotspots(vec![Hotspot {
            start_m: 4.0,
            length_m: 1.0,
            bfs_hz: 10.83e9,
        }]);
        let pulse = PulseScheme::Pair { width_long_s: 60e-9, width_short_s: 40e-9 };
        let grid = grid_1g(&fiber, pulse);
        let narrow = FrequencySweep { start_hz: 10.79e9, step_hz: 1e6, count: 41 };
        assert!(matches!(
            simulate_bgs(&fiber, pulse, &narrow, &grid, None),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn map_noise_matches_a_serial_per_channel_loop() {
        let fiber = uniform_fiber(10.0);
        let pulse = PulseScheme::Pair { width_long_s: 60e-9, width_short_s: 40e-9 };
        let grid = grid_1g(&fiber, pulse);
        let sweep = FrequencySweep { start_hz: BASE_BFS - 60e6, step_hz: 5e6, count: 25 };
        let spec = NoiseSpec { target_snr_db: 23.0, seed: 4242 };
        let map = simulate_bgs(&fiber, pulse, &sweep, &grid, Some(&spec)).unwrap();

        for (ci, trace) in map.traces.iter().enumerate() {
            let offset = sweep.frequency_hz(ci) - BASE_BFS;
            let mut expect = simulate_trace(&fiber, pulse, offset, &grid).unwrap();
            normalize_trace(&mut expect, LINEWIDTH, 1.0).unwrap();
            add_noise(
                &mut expect,
                &NoiseSpec { target_snr_db: 23.0, seed: derive_seed(4242, ci as u64) },
            )
            .unwrap();
            assert_eq!(trace.samples, expect.samples, "channel {ci}");
        }
    }

    #[test]
    fn repeated_noise_realizations_are_deterministic() {
        let fiber = uniform_fiber(10.0);
        let pulse = PulseScheme::Pair { width_long_s: 60e-9, width_short_s: 40e-9 };
        let grid = grid_1g(&fiber, pulse);
        let sweep = FrequencySweep { start_hz: BASE_BFS - 60e6, step_hz: 5e6, count: 25 };
        let clean = simulate_bgs(&fiber, pulse, &sweep, &grid, None).unwrap();
        let spec = NoiseSpec { target_snr_db: 23.0, seed: derive_seed(1, 3) };
        let a = with_noise(&clean, &spec).unwrap();
        let b = with_noise(&clean, &spec).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.traces[0].samples, clean.traces[0].samples);
    }

    #[test]
    fn derived_seeds_depend_on_both_base_and_stream() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(77, 5), derive_seed(77, 5));
    }
}
