//! Pump-probe interaction model for a Brillouin time-domain sensor.
//!
//! The module owns the physical vocabulary the rest of the crate builds on:
//!
//! - [`FiberProfile`]: a fiber as a base Brillouin frequency shift (BFS) plus
//!   hot sections that override it.
//! - [`SamplingGrid`]: the shared time/position axis; one time sample maps to
//!   `v_g * dt / 2` meters of fiber (round trip).
//! - [`detuning_parameter`]: the complex rate `Γ` that drives the transient
//!   gain response at a given probe-pump offset.
//! - [`envelope`]: the gated acoustic build-up `1 − exp(−Γ*·t)` seen by a
//!   rectangular pump pulse.
//! - [`impulse_response_density`]: local steady-state gain per meter,
//!   `κ / (2Γ*)`.
//!
//! # Example
//!
//! ```
//! use botda_core::brillouin::{detuning_parameter, envelope};
//!
//! // Probe 30 MHz above a 10.8 GHz resonance with a 27 MHz linewidth.
//! let rate = detuning_parameter(10.8e9, 10.83e9, 27.0e6);
//! assert!((rate.re_per_s - std::f64::consts::PI * 27.0e6).abs() < 1.0);
//!
//! // The pulse gate opens at t = 0; the envelope builds from zero.
//! let p = envelope(rate, 60.0e-9, 0.0);
//! assert_eq!(p.norm(), 0.0);
//! ```

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Fiber description
// ---------------------------------------------------------------------------

/// A contiguous section whose BFS differs from the fiber base value.
///
/// The span is half-open: `[start_m, start_m + length_m)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hotspot {
    pub start_m: f64,
    pub length_m: f64,
    pub bfs_hz: f64,
}

impl Hotspot {
    pub fn end_m(&self) -> f64 {
        self.start_m + self.length_m
    }

    pub fn center_m(&self) -> f64 {
        self.start_m + 0.5 * self.length_m
    }
}

/// Piecewise-constant BFS profile of the sensing fiber.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberProfile {
    pub length_m: f64,
    pub base_bfs_hz: f64,
    /// Brillouin gain linewidth (FWHM), identical for every section.
    pub linewidth_hz: f64,
    /// Dimensionless gain scale `κ` lumping pump intensity, probe amplitude
    /// and the gain coefficient.
    pub gain_scale: f64,
    pub hotspots: Vec<Hotspot>,
}

impl FiberProfile {
    pub fn uniform(length_m: f64, base_bfs_hz: f64, linewidth_hz: f64, gain_scale: f64) -> Self {
        Self {
            length_m,
            base_bfs_hz,
            linewidth_hz,
            gain_scale,
            hotspots: Vec::new(),
        }
    }

    pub fn with_hotspots(mut self, hotspots: Vec<Hotspot>) -> Self {
        self.hotspots = hotspots;
        self
    }

    /// Checks the profile invariants: positive dimensions, hotspots inside
    /// the fiber and pairwise non-overlapping.
    pub fn validate(&self) -> Result<()> {
        if !(self.length_m > 0.0) {
            return Err(Error::Validation(format!(
                "fiber length must be positive, got {} m",
                self.length_m
            )));
        }
        if !(self.base_bfs_hz > 0.0) || !(self.linewidth_hz > 0.0) {
            return Err(Error::Validation(
                "base BFS and linewidth must be positive".into(),
            ));
        }
        if !(self.gain_scale > 0.0) {
            return Err(Error::Validation(format!(
                "gain scale must be positive, got {}",
                self.gain_scale
            )));
        }
        for (i, h) in self.hotspots.iter().enumerate() {
            if !(h.length_m > 0.0) || !(h.bfs_hz > 0.0) {
                return Err(Error::Validation(format!(
                    "hotspot {i} must have positive length and BFS"
                )));
            }
            if h.start_m < 0.0 || h.end_m() > self.length_m {
                return Err(Error::Validation(format!(
                    "hotspot {i} [{:.3}, {:.3}) m lies outside the fiber [0, {}) m",
                    h.start_m,
                    h.end_m(),
                    self.length_m
                )));
            }
        }
        let mut spans: Vec<(f64, f64)> = self.hotspots.iter().map(|h| (h.start_m, h.end_m())).collect();
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in spans.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(Error::Validation(format!(
                    "hotspots overlap near {:.3} m",
                    w[1].0
                )));
            }
        }
        Ok(())
    }

    /// BFS at position `z_m` along the fiber, `0 <= z_m <= length_m`.
    pub fn bfs_at(&self, z_m: f64) -> f64 {
        debug_assert!(z_m >= 0.0 && z_m <= self.length_m);
        for h in &self.hotspots {
            if z_m >= h.start_m && z_m < h.end_m() {
                return h.bfs_hz;
            }
        }
        self.base_bfs_hz
    }

    /// Index of the section containing `z_m`: 0 for base fiber, `i + 1` for
    /// hotspot `i`. Used to share per-section envelope tables.
    pub fn section_index_at(&self, z_m: f64) -> usize {
        for (i, h) in self.hotspots.iter().enumerate() {
            if z_m >= h.start_m && z_m < h.end_m() {
                return i + 1;
            }
        }
        0
    }

    /// BFS of section `index` in `section_index_at` numbering.
    pub fn section_bfs_hz(&self, index: usize) -> f64 {
        if index == 0 {
            self.base_bfs_hz
        } else {
            self.hotspots[index - 1].bfs_hz
        }
    }

    pub fn section_count(&self) -> usize {
        self.hotspots.len() + 1
    }
}

// ---------------------------------------------------------------------------
// Sampling grid
// ---------------------------------------------------------------------------

/// Uniform acquisition grid; sample `k` sits at time `k·dt` and fiber
/// position `k·dz` with `dz = v_g·dt/2` (two-way travel).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingGrid {
    pub dt_s: f64,
    pub group_velocity_m_per_s: f64,
    pub n_samples: usize,
}

impl SamplingGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_s > 0.0) || !(self.group_velocity_m_per_s > 0.0) || self.n_samples == 0 {
            return Err(Error::Validation(format!(
                "grid must have positive dt, group velocity and sample count (dt = {}, v_g = {}, n = {})",
                self.dt_s, self.group_velocity_m_per_s, self.n_samples
            )));
        }
        Ok(())
    }

    pub fn dz_m(&self) -> f64 {
        self.group_velocity_m_per_s * self.dt_s / 2.0
    }

    pub fn time_at_s(&self, k: usize) -> f64 {
        k as f64 * self.dt_s
    }

    pub fn position_at_m(&self, k: usize) -> f64 {
        k as f64 * self.dz_m()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples as f64 * self.dt_s
    }
}

// ---------------------------------------------------------------------------
// Pump pulse schemes
// ---------------------------------------------------------------------------

/// Pump pulse scheme: a single rectangular pulse, or the long/short pair
/// whose trace difference forms the differential measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PulseScheme {
    Single { width_s: f64 },
    Pair { width_long_s: f64, width_short_s: f64 },
}

impl PulseScheme {
    /// The longest gate in the scheme; it sets the lead-in and the grid span.
    pub fn width_long_s(&self) -> f64 {
        match *self {
            PulseScheme::Single { width_s } => width_s,
            PulseScheme::Pair { width_long_s, .. } => width_long_s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PulseScheme::Single { width_s } => {
                if !(width_s > 0.0) {
                    return Err(Error::Validation(format!(
                        "pulse width must be positive, got {width_s} s"
                    )));
                }
            }
            PulseScheme::Pair {
                width_long_s,
                width_short_s,
            } => {
                if !(width_short_s > 0.0) || !(width_long_s > width_short_s) {
                    return Err(Error::Validation(format!(
                        "pair widths must satisfy 0 < short < long, got {width_long_s}/{width_short_s} s"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Shortest pair width for which the leading acoustic transient has decayed
/// to the few-percent level: `3.4 / (π·Δν_B)`, about 40 ns at 27 MHz.
///
/// Validation applies a 1% slack (`0.99·`this) so the canonical 60/40 ns
/// pair at 27 MHz, which sits 0.2% under the exact constant, is accepted
/// while genuinely short pairs are still rejected.
pub fn min_short_width_s(linewidth_hz: f64) -> f64 {
    3.4 / (PI * linewidth_hz)
}

// ---------------------------------------------------------------------------
// Interaction model
// ---------------------------------------------------------------------------

/// Complex transient rate in 1/s; `re_per_s` is the decay, `im_per_s` the
/// detuning beat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexRate {
    pub re_per_s: f64,
    pub im_per_s: f64,
}

impl ComplexRate {
    pub fn to_complex(self) -> Complex64 {
        Complex64::new(self.re_per_s, self.im_per_s)
    }
}

/// Complex rate `Γ` governing the acoustic response at probe-pump offset
/// `probe_hz` against a section resonating at `bfs_hz`.
///
/// Algebraically `Γ = iπ(ν_B² − ν² − iνΔν_B)/ν`, which splits exactly into
/// `Re Γ = π·Δν_B` and `Im Γ = π(ν_B² − ν²)/ν`; for small detuning
/// `δ = ν − ν_B` the imaginary part approaches `−2πδ`.
pub fn detuning_parameter(bfs_hz: f64, probe_hz: f64, linewidth_hz: f64) -> ComplexRate {
    debug_assert!(bfs_hz > 0.0 && probe_hz > 0.0 && linewidth_hz > 0.0);
    debug_assert!((probe_hz - bfs_hz).abs() <= 1.0e9);
    ComplexRate {
        re_per_s: PI * linewidth_hz,
        im_per_s: PI * (bfs_hz * bfs_hz - probe_hz * probe_hz) / probe_hz,
    }
}

/// Gated acoustic build-up seen by a rectangular pump pulse of width
/// `width_s`: `{1 − exp(−Γ*·t)}` for `0 <= t < width_s`, exactly zero
/// outside the gate.
pub fn envelope(rate: ComplexRate, width_s: f64, t_s: f64) -> Complex64 {
    if t_s < 0.0 || t_s >= width_s {
        return Complex64::new(0.0, 0.0);
    }
    let gamma_conj = Complex64::new(rate.re_per_s, -rate.im_per_s);
    Complex64::new(1.0, 0.0) - (-gamma_conj * t_s).exp()
}

/// Steady-state impulse-response density at `z_m`, per meter of fiber:
/// `κ / (2Γ*(z))`. The caller applies its quadrature weight `dz`.
pub fn impulse_response_density(fiber: &FiberProfile, z_m: f64, probe_hz: f64) -> Complex64 {
    debug_assert!(z_m >= 0.0 && z_m <= fiber.length_m);
    let rate = detuning_parameter(fiber.bfs_at(z_m), probe_hz, fiber.linewidth_hz);
    let gamma_conj = Complex64::new(rate.re_per_s, -rate.im_per_s);
    Complex64::new(fiber.gain_scale, 0.0) / (2.0 * gamma_conj)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    const LINEWIDTH: f64 = 27.0e6;
    const BASE_BFS: f64 = 10.8e9;

    // -- detuning parameter -------------------------------------------------

    #[test]
    fn real_part_is_pi_times_linewidth_everywhere() {
        // The real part of the rate is detuning-independent; check the exact
        // identity across a probe grid.
        for k in -100..=100 {
            let probe = BASE_BFS + k as f64 * 1.0e6;
            let rate = detuning_parameter(BASE_BFS, probe, LINEWIDTH);
            let expected = PI * LINEWIDTH;
            assert!(
                (rate.re_per_s - expected).abs() <= 1e-12 * expected,
                "Re at {probe} Hz drifted: {}",
                rate.re_per_s
            );
        }
    }

    #[test]
    fn rate_at_30_mhz_detuning_matches_frozen_value() {
        // pi*27e6 = 8.4823e7; pi*(10.8e9^2 - 10.83e9^2)/10.83e9 = -1.88234e8.
        let rate = detuning_parameter(BASE_BFS, 10.83e9, LINEWIDTH);
        assert!((rate.re_per_s - 8.4823e7).abs() < 1e3);
        assert!((rate.im_per_s - (-1.88234e8)).abs() < 1e4);
    }

    #[test]
    fn small_detuning_imag_part_approaches_minus_two_pi_delta() {
        for delta in [-5.0e6, -1.0e6, 1.0e6, 5.0e6] {
            let rate = detuning_parameter(BASE_BFS, BASE_BFS + delta, LINEWIDTH);
            let approx = -2.0 * PI * delta;
            let rel = (rate.im_per_s - approx).abs() / approx.abs();
            assert!(rel < 5.0e-4, "delta {delta}: rel err {rel}");
        }
    }

    // -- envelope -----------------------------------------------------------

    #[test]
    fn envelope_is_zero_outside_the_gate() {
        let rate = detuning_parameter(BASE_BFS, BASE_BFS, LINEWIDTH);
        assert_eq!(envelope(rate, 60e-9, -1e-12).norm(), 0.0);
        assert_eq!(envelope(rate, 60e-9, 60e-9).norm(), 0.0);
        assert_eq!(envelope(rate, 60e-9, 75e-9).norm(), 0.0);
        assert!(envelope(rate, 60e-9, 59.9e-9).norm() > 0.9);
    }

    #[test]
    fn envelope_starts_from_exactly_zero() {
        let rate = detuning_parameter(BASE_BFS, 10.83e9, LINEWIDTH);
        assert_eq!(envelope(rate, 60e-9, 0.0).norm(), 0.0);
    }

    #[test]
    fn zero_detuning_envelope_at_40_ns_matches_frozen_value() {
        // 1 - exp(-pi * 27 MHz * 40 ns) = 0.96639.
        let rate = detuning_parameter(BASE_BFS, BASE_BFS, LINEWIDTH);
        let p = envelope(rate, 60e-9, 40e-9);
        let exact = 1.0 - (-PI * LINEWIDTH * 40e-9).exp();
        assert!((p.re - exact).abs() < 1e-14);
        assert!((p.re - 0.96639).abs() < 2e-5, "got {}", p.re);
        assert!(p.im.abs() < 1e-15);
    }

    #[test]
    fn zero_detuning_envelope_grows_monotonically() {
        let rate = detuning_parameter(BASE_BFS, BASE_BFS, LINEWIDTH);
        let mut last = -1.0;
        for m in 0..200 {
            let t = m as f64 * 1e-9;
            let p = envelope(rate, 250e-9, t).re;
            assert!(p > last);
            last = p;
        }
    }

    #[test]
    fn envelope_magnitude_is_bounded_by_two() {
        for k in -12..=12 {
            let probe = BASE_BFS + k as f64 * 5.0e6;
            let rate = detuning_parameter(BASE_BFS, probe, LINEWIDTH);
            for m in 0..120 {
                let t = m as f64 * 1e-9;
                assert!(envelope(rate, 120e-9, t).norm() <= 2.0);
            }
        }
    }

    #[test]
    fn detuned_envelope_collapses_onto_settled_one_after_40_ns() {
        // Past one settling time the detuned and on-peak envelopes differ by
        // at most 2*exp(-pi*linewidth*t), about 0.0672 at t = 40 ns.
        let on_peak = detuning_parameter(BASE_BFS, BASE_BFS, LINEWIDTH);
        let mut max_dev: f64 = 0.0;
        for k in -30..=30 {
            let rate = detuning_parameter(BASE_BFS, BASE_BFS + k as f64 * 2.0e6, LINEWIDTH);
            for m in 80..400 {
                let t = m as f64 * 0.5e-9;
                let dev = (envelope(rate, 250e-9, t) - envelope(on_peak, 250e-9, t)).norm();
                let bound = 2.0 * (-PI * LINEWIDTH * t).exp();
                assert!(dev <= bound + 1e-12, "t = {t}, dev = {dev}, bound = {bound}");
                max_dev = max_dev.max(dev);
            }
        }
        let bound_40ns = 2.0 * (-PI * LINEWIDTH * 40e-9).exp();
        assert!((bound_40ns - 0.0672).abs() < 1e-4);
        assert!(max_dev <= bound_40ns + 1e-12);
    }

    // -- impulse response density -------------------------------------------

    #[test]
    fn zero_detuning_density_matches_frozen_value() {
        // kappa / (2*pi*27e6) = 5.8946e-9 per meter, purely real.
        let fiber = FiberProfile::uniform(40.0, BASE_BFS, LINEWIDTH, 1.0);
        let h = impulse_response_density(&fiber, 10.0, BASE_BFS);
        assert!((h.re - 5.8946e-9).abs() < 1e-12);
        assert!(h.im.abs() < 1e-24);
    }

    #[test]
    fn density_halves_at_half_linewidth_detuning() {
        // Real part of the density versus detuning traces a Lorentzian with
        // FWHM equal to the linewidth: at delta = linewidth/2 it is half the
        // peak, up to the tiny asymmetry from the exact quadratic imag part.
        let fiber = FiberProfile::uniform(40.0, BASE_BFS, LINEWIDTH, 1.0);
        let peak = impulse_response_density(&fiber, 1.0, BASE_BFS).re;
        for sign in [-1.0, 1.0] {
            let h = impulse_response_density(&fiber, 1.0, BASE_BFS + sign * LINEWIDTH / 2.0).re;
            assert!((h / peak - 0.5).abs() < 1e-3, "ratio {}", h / peak);
        }
    }

    #[test]
    fn density_scales_linearly_with_gain_scale() {
        let f1 = FiberProfile::uniform(40.0, BASE_BFS, LINEWIDTH, 1.0);
        let f2 = FiberProfile::uniform(40.0, BASE_BFS, LINEWIDTH, 2.0);
        let a = impulse_response_density(&f1, 3.0, 10.81e9);
        let b = impulse_response_density(&f2, 3.0, 10.81e9);
        assert_eq!(b, a * 2.0);
    }

    // -- fiber profile ------------------------------------------------------

    fn three_hotspot_fiber() -> FiberProfile {
        FiberProfile::uniform(40.0, BASE_BFS, LINEWIDTH, 1.0).with_hotspots(vec![
            Hotspot { start_m: 10.0, length_m: 3.0, bfs_hz: 10.83e9 },
            Hotspot { start_m: 20.0, length_m: 1.0, bfs_hz: 10.83e9 },
            Hotspot { start_m: 28.0, length_m: 0.5, bfs_hz: 10.83e9 },
        ])
    }

    #[test]
    fn hotspot_spans_are_half_open() {
        let fiber = three_hotspot_fiber();
        assert_eq!(fiber.bfs_at(10.0), 10.83e9);
        assert_eq!(fiber.bfs_at(12.999), 10.83e9);
        assert_eq!(fiber.bfs_at(13.0), BASE_BFS);
        assert_eq!(fiber.bfs_at(9.999), BASE_BFS);
        assert_eq!(fiber.section_index_at(20.5), 2);
        assert_eq!(fiber.section_index_at(5.0), 0);
        assert_eq!(fiber.section_count(), 4);
    }

    #[test]
    fn overlapping_hotspots_fail_validation() {
        let fiber = FiberProfile::uniform(40.0, BASE_BFS, LINEWIDTH, 1.0).with_hotspots(vec![
            Hotspot { start_m: 10.0, length_m: 3.0, bfs_hz: 10.83e9 },
            Hotspot { start_m: 12.0, length_m: 1.0, bfs_hz: 10.83e9 },
        ]);
        assert!(matches!(fiber.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn hotspot_outside_fiber_fails_validation() {
        let fiber = FiberProfile::uniform(40.0, BASE_BFS, LINEWIDTH, 1.0).with_hotspots(vec![
            Hotspot { start_m: 39.0, length_m: 2.0, bfs_hz: 10.83e9 },
        ]);
        assert!(fiber.validate().is_err());
    }

    #[test]
    fn hotspot_touching_fiber_end_is_valid() {
        let fiber = FiberProfile::uniform(40.0, BASE_BFS, LINEWIDTH, 1.0).with_hotspots(vec![
            Hotspot { start_m: 20.0, length_m: 20.0, bfs_hz: 10.83e9 },
        ]);
        assert!(fiber.validate().is_ok());
    }

    // -- grid and pulse schemes ---------------------------------------------

    #[test]
    fn one_nanosecond_sample_covers_ten_centimeters() {
        let grid = SamplingGrid {
            dt_s: 1e-9,
            group_velocity_m_per_s: 2.0e8,
            n_samples: 100,
        };
        assert!((grid.dz_m() - 0.1).abs() < 1e-16);
        assert!((grid.position_at_m(10) - 1.0).abs() < 1e-12);
        assert!((grid.duration_s() - 100e-9).abs() < 1e-21);
    }

    #[test]
    fn pair_width_ordering_is_enforced() {
        assert!(PulseScheme::Pair { width_long_s: 40e-9, width_short_s: 60e-9 }
            .validate()
            .is_err());
        assert!(PulseScheme::Pair { width_long_s: 60e-9, width_short_s: 40e-9 }
            .validate()
            .is_ok());
    }

    #[test]
    fn min_short_width_at_27_mhz_is_just_over_40_ns() {
        let w = min_short_width_s(LINEWIDTH);
        assert!((w - 40.084e-9).abs() < 0.01e-9, "got {w}");
        // The canonical 40 ns pair sits within the 1% validation slack.
        assert!(40e-9 >= 0.99 * w);
    }
}
