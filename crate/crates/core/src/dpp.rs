//! Differential pulse-pair processing.
//!
//! Subtracting the traces of two co-located pulses of widths `T_l > T_s`
//! cancels everything the pulses share: for `t < T_s` both gated envelopes
//! are bitwise identical, so the difference is exactly zero, and the
//! effective interrogation kernel is confined to `[T_s, T_l)`. On that
//! support the kernel is nearly a boxcar; the residual transient of either
//! envelope decays like `exp(-pi*dnu*t)`, so the deviation from the ideal
//! rectangle is bounded by `2*exp(-pi*dnu*T_s)`. The short width therefore
//! has a floor: below `3.4/(pi*dnu)` the leaked transient exceeds a few
//! percent of the plateau and the differential loses its meaning as a
//! spatial gate. The floor is enforced here, with an escape hatch for
//! deliberately exploring the regime beyond it.

use crate::brillouin::{envelope, min_short_width_s, ComplexRate, PulseScheme, SamplingGrid};
use crate::error::{Error, Result};
use crate::simulator::GainTrace;

/// Discrete deconvolution kernel on the trace time axis.
///
/// `samples[origin_index]` is the tap at lag zero; kernels built here keep
/// `origin_index = 0` and encode the differential onset as exact leading
/// zeros, which is what lets the deconvolution undo the pair's inherent
/// `T_s` delay instead of shifting the recovered profile.
#[derive(Debug, Clone, PartialEq)]
pub struct DeconvKernel {
    /// Unit-sum taps.
    pub samples: Vec<f64>,
    pub dt_s: f64,
    pub origin_index: usize,
    /// Tap sum before normalization, in plateau-relative units.
    pub raw_sum: f64,
}

impl DeconvKernel {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Indices of the first and last nonzero tap.
    pub fn support_range(&self) -> (usize, usize) {
        let first = self.samples.iter().position(|s| *s != 0.0).unwrap_or(0);
        let last = self.samples.iter().rposition(|s| *s != 0.0).unwrap_or(0);
        (first, last)
    }

    /// Number of taps from first to last nonzero, inclusive.
    pub fn support_len(&self) -> usize {
        let (first, last) = self.support_range();
        last - first + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Contract("kernel has no taps".into()));
        }
        if self.origin_index >= self.samples.len() {
            return Err(Error::Contract(format!(
                "kernel origin {} outside {} taps",
                self.origin_index,
                self.samples.len()
            )));
        }
        if !(self.dt_s > 0.0) || self.samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Contract("kernel taps and dt must be finite".into()));
        }
        let sum: f64 = self.samples.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!("kernel taps sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// Single-tap identity kernel; deconvolving with it is a pass-through.
pub fn impulse_kernel(dt_s: f64) -> DeconvKernel {
    DeconvKernel {
        samples: vec![1.0],
        dt_s,
        origin_index: 0,
        raw_sum: 1.0,
    }
}

/// Differential trace of two raw single-pulse traces on the same layout.
///
/// The constituents must be noiseless and unnormalized: measurement noise
/// belongs on the differential (a real differential acquisition detects the
/// difference), and normalization is defined against the pair plateau, not
/// the constituents'.
pub fn differential_trace(long: &GainTrace, short: &GainTrace) -> Result<GainTrace> {
    let (w_long, w_short) = match (long.pulse, short.pulse) {
        (PulseScheme::Single { width_s: a }, PulseScheme::Single { width_s: b }) => (a, b),
        _ => {
            return Err(Error::Contract(
                "differential constituents must be single-pulse traces".into(),
            ))
        }
    };
    if !(w_long > w_short) {
        return Err(Error::Contract(format!(
            "long constituent ({:.1} ns) must be wider than short ({:.1} ns)",
            w_long * 1e9,
            w_short * 1e9
        )));
    }
    if long.grid != short.grid {
        return Err(Error::Contract("constituent traces must share one grid".into()));
    }
    if long.probe_offset_hz != short.probe_offset_hz {
        return Err(Error::Contract(
            "constituent traces must share one probe frequency".into(),
        ));
    }
    if long.normalized || short.normalized {
        return Err(Error::Contract(
            "differential is taken on raw traces; normalize the differential instead".into(),
        ));
    }
    if long.seed.is_some() || short.seed.is_some() {
        return Err(Error::Contract(
            "noise is injected on the differential trace, not its constituents".into(),
        ));
    }
    Ok(GainTrace {
        samples: long
            .samples
            .iter()
            .zip(&short.samples)
            .map(|(a, b)| a - b)
            .collect(),
        grid: long.grid,
        pulse: PulseScheme::Pair {
            width_long_s: w_long,
            width_short_s: w_short,
        },
        probe_offset_hz: long.probe_offset_hz,
        normalized: false,
        seed: None,
    })
}

/// Enforces the short-width floor of a differential pair unless the caller
/// explicitly waives it.
pub fn check_short_width(w_short: f64, linewidth_hz: f64, allow_short: bool) -> Result<()> {
    let floor = min_short_width_s(linewidth_hz);
    // 1% slack admits the canonical 40 ns short width at 27 MHz.
    if w_short < 0.99 * floor && !allow_short {
        let leak = 2.0 * (-std::f64::consts::PI * linewidth_hz * w_short).exp();
        return Err(Error::Domain(format!(
            "short width {:.2} ns is below the differential floor {:.2} ns; \
             transient leakage would reach {:.1}% of the plateau",
            w_short * 1e9,
            floor * 1e9,
            leak * 100.0
        )));
    }
    Ok(())
}

/// Effective kernel of a pulse pair at line center, sampled on the grid's
/// time step and normalized to unit sum.
///
/// `allow_short` bypasses the short-width floor; the returned kernel is
/// then dominated by leaked transients and the caller owns the consequences.
pub fn dpp_kernel(
    pair: PulseScheme,
    linewidth_hz: f64,
    grid: &SamplingGrid,
    allow_short: bool,
) -> Result<DeconvKernel> {
    let (w_long, w_short) = match pair {
        PulseScheme::Pair {
            width_long_s,
            width_short_s,
        } => (width_long_s, width_short_s),
        PulseScheme::Single { .. } => {
            return Err(Error::Contract(
                "differential kernel needs a pulse pair; use the single-pulse kernel instead".into(),
            ))
        }
    };
    pair.validate()?;
    grid.validate()?;
    if !(linewidth_hz > 0.0) {
        return Err(Error::Domain(format!("linewidth must be positive, got {linewidth_hz}")));
    }
    check_short_width(w_short, linewidth_hz, allow_short)?;
    let rate = ComplexRate {
        re_per_s: std::f64::consts::PI * linewidth_hz,
        im_per_s: 0.0,
    };
    let taps: Vec<f64> = raw_taps(grid, w_long, |t| {
        (envelope(rate, w_long, t) - envelope(rate, w_short, t)).re
    });
    finish_kernel(taps, grid.dt_s)
}

/// Effective kernel of a lone rectangular pulse at line center.
pub fn single_pulse_kernel(
    width_s: f64,
    linewidth_hz: f64,
    grid: &SamplingGrid,
) -> Result<DeconvKernel> {
    PulseScheme::Single { width_s }.validate()?;
    grid.validate()?;
    if !(linewidth_hz > 0.0) {
        return Err(Error::Domain(format!("linewidth must be positive, got {linewidth_hz}")));
    }
    let rate = ComplexRate {
        re_per_s: std::f64::consts::PI * linewidth_hz,
        im_per_s: 0.0,
    };
    let taps: Vec<f64> = raw_taps(grid, width_s, |t| envelope(rate, width_s, t).re);
    finish_kernel(taps, grid.dt_s)
}

fn raw_taps(grid: &SamplingGrid, width_s: f64, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let m_count = (width_s / grid.dt_s).ceil() as usize;
    (0..m_count).map(|m| f(m as f64 * grid.dt_s)).collect()
}

fn finish_kernel(mut taps: Vec<f64>, dt_s: f64) -> Result<DeconvKernel> {
    let raw_sum: f64 = taps.iter().sum();
    if !(raw_sum > 0.0) || !raw_sum.is_finite() {
        return Err(Error::Domain(format!("kernel area {raw_sum} is not usable")));
    }
    for t in &mut taps {
        *t /= raw_sum;
    }
    let kernel = DeconvKernel {
        samples: taps,
        dt_s,
        origin_index: 0,
        raw_sum,
    };
    kernel.validate()?;
    Ok(kernel)
}
