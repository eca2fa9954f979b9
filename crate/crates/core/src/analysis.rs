//! Spectrum fitting, profile extraction and quality metrics.
//!
//! Every position sample of a gain map carries a sampled spectrum across
//! the sweep; fitting a Lorentzian per position turns the map into a BFS
//! profile. On top of that sit the study metrics: time-trace SNR (oracle
//! against a noiseless reference, or blind via moving-average detrending),
//! hotspot BFS degradation of an averaged profile, worst-case systematic
//! BFS error over a region, and the full regularization-weight search that
//! trades recovered SNR against resolvable hotspot length.
//!
//! SNR convention everywhere: amplitude ratio in decibels,
//! `20*log10(plateau/sigma)`. Fit failures are explicit markers on the
//! profile, never silent zeros, and solver or search saturation is flagged
//! on the result.

use std::collections::HashMap;
use std::ops::Range;
use std::sync::Mutex;

use crate::brillouin::{FiberProfile, Hotspot, PulseScheme, SamplingGrid};
use crate::deconv::{tv_deconvolve_map_with, ConvOperator, DeconvConfig, MapWarm};
use crate::dpp::{dpp_kernel, DeconvKernel};
use crate::error::{Error, Result};
use crate::simulator::{
    derive_seed, grid_for, plateau_amplitude, simulate_bgs, with_noise, BgsMap, FrequencySweep,
    NoiseSpec,
};

pub const SNR_CONVENTION: &str = "amplitude ratio, 20*log10(plateau/sigma)";

// ---------------------------------------------------------------------------
// Lorentzian fitting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorentzianFit {
    pub bfs_hz: f64,
    pub fwhm_hz: f64,
    pub peak_gain: f64,
    pub residual_rms: f64,
    pub iterations: usize,
}

/// Per-position fit result; failures carry the reason with them.
#[derive(Debug, Clone, PartialEq)]
pub enum FitOutcome {
    Converged(LorentzianFit),
    Failed { reason: String },
}

impl FitOutcome {
    pub fn fit(&self) -> Option<&LorentzianFit> {
        match self {
            FitOutcome::Converged(f) => Some(f),
            FitOutcome::Failed { .. } => None,
        }
    }

    pub fn is_converged(&self) -> bool {
        matches!(self, FitOutcome::Converged(_))
    }
}

fn fail(reason: impl Into<String>) -> FitOutcome {
    FitOutcome::Failed { reason: reason.into() }
}

/// Solves a 3x3 system by Gaussian elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|x, y| a[*x][col].abs().total_cmp(&a[*y][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in (col + 1)..3 {
            let m = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= m * a[col][k];
            }
            b[row] -= m * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut s = b[row];
        for k in (row + 1)..3 {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    Some(x)
}

fn lorentzian(g: f64, v0: f64, w: f64, v: f64) -> f64 {
    let u = 2.0 * (v - v0) / w;
    g / (1.0 + u * u)
}

fn sum_sq_residual(freq: &[f64], gain: &[f64], g: f64, v0: f64, w: f64) -> f64 {
    freq.iter()
        .zip(gain)
        .map(|(v, y)| {
            let r = lorentzian(g, v0, w, *v) - y;
            r * r
        })
        .sum()
}

/// Fits `g_p / (1 + ((v - v_B)/(w/2))^2)` to a sampled spectrum.
///
/// Initialized from the maximum sample and the two half-height crossings;
/// refined by damped least squares with the analytic Jacobian. A spectrum
/// whose half-height crossings are not both inside the sweep does not pin
/// the width down and is reported as a failure, as is divergence.
pub fn fit_lorentzian(freq_hz: &[f64], gain: &[f64]) -> FitOutcome {
    if freq_hz.len() != gain.len() {
        return fail(format!(
            "{} frequencies vs {} gains",
            freq_hz.len(),
            gain.len()
        ));
    }
    let n = freq_hz.len();
    if n < 7 {
        return fail(format!("{n} samples are too few to fit three parameters"));
    }
    if freq_hz.windows(2).any(|w| !(w[1] > w[0])) {
        return fail("frequency axis must be strictly increasing");
    }

    let i_max = gain
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("nonempty");
    let g0 = gain[i_max];
    if !(g0 > 0.0) || !g0.is_finite() {
        return fail(format!("peak gain {g0} is not a usable maximum"));
    }

    let half = g0 / 2.0;
    let left = (0..i_max).rev().find(|&i| gain[i] < half).map(|i| {
        let t = (half - gain[i]) / (gain[i + 1] - gain[i]);
        freq_hz[i] + t * (freq_hz[i + 1] - freq_hz[i])
    });
    let right = ((i_max + 1)..n).find(|&i| gain[i] < half).map(|i| {
        let t = (half - gain[i - 1]) / (gain[i] - gain[i - 1]);
        freq_hz[i - 1] + t * (freq_hz[i] - freq_hz[i - 1])
    });
    let (x_left, x_right) = match (left, right) {
        (Some(l), Some(r)) => (l, r),
        _ => {
            return fail(
                "sweep does not span the spectrum's half height on both sides of the peak",
            )
        }
    };

    let mut g = g0;
    let mut v0 = 0.5 * (x_left + x_right);
    let mut w = x_right - x_left;
    let mut cost = sum_sq_residual(freq_hz, gain, g, v0, w);
    let mut lambda = 1e-3;
    let mut iterations = 0;

    for _ in 0..200 {
        iterations += 1;

        // Normal equations of the damped step.
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (v, y) in freq_hz.iter().zip(gain) {
            let u = 2.0 * (v - v0) / w;
            let den = 1.0 + u * u;
            let m = g / den;
            let r = m - y;
            let j = [
                1.0 / den,
                4.0 * g * u / (w * den * den),
                2.0 * g * u * u / (w * den * den),
            ];
            for a in 0..3 {
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
                jtr[a] -= j[a] * r;
            }
        }

        let mut stepped = false;
        for _ in 0..30 {
            let mut a = jtj;
            for k in 0..3 {
                a[k][k] += lambda * jtj[k][k].max(1e-300);
            }
            let Some(step) = solve3(a, jtr) else {
                return fail("normal equations are singular");
            };
            let (g_n, v0_n, w_n) = (g + step[0], v0 + step[1], w + step[2]);
            if g_n > 0.0 && w_n > 0.0 {
                let cost_n = sum_sq_residual(freq_hz, gain, g_n, v0_n, w_n);
                if cost_n <= cost {
                    let dv = step[1].abs();
                    let dw = step[2].abs();
                    let dg = step[0].abs();
                    g = g_n;
                    v0 = v0_n;
                    w = w_n;
                    let done = cost - cost_n <= 1e-14 * cost.max(1e-300)
                        && dv < 1.0
                        && dw < 1.0
                        && dg < 1e-9 * g.abs();
                    cost = cost_n;
                    stepped = true;
                    if done {
                        let rms = (cost / n as f64).sqrt();
                        return FitOutcome::Converged(LorentzianFit {
                            bfs_hz: v0,
                            fwhm_hz: w,
                            peak_gain: g,
                            residual_rms: rms,
                            iterations,
                        });
                    }
                    lambda = (lambda / 8.0).max(1e-12);
                    break;
                }
            }
            lambda *= 8.0;
            if lambda > 1e12 {
                return fail("damping exhausted without a descent step");
            }
        }
        if !stepped {
            return fail("damping exhausted without a descent step");
        }
    }
    fail("no convergence in 200 iterations")
}

// ---------------------------------------------------------------------------
// BFS profiles
// ---------------------------------------------------------------------------

/// One fitted position of a BFS profile; positions are fiber coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct BfsPoint {
    pub position_m: f64,
    pub outcome: FitOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfsProfile {
    pub points: Vec<BfsPoint>,
}

impl BfsProfile {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn n_failed(&self) -> usize {
        self.points.iter().filter(|p| !p.outcome.is_converged()).count()
    }

    /// Converged `(position_m, fit)` pairs.
    pub fn fits(&self) -> impl Iterator<Item = (f64, &LorentzianFit)> {
        self.points
            .iter()
            .filter_map(|p| p.outcome.fit().map(|f| (p.position_m, f)))
    }

    fn validate_positions(&self) -> Result<()> {
        for w in self.points.windows(2) {
            if !(w[1].position_m > w[0].position_m) {
                return Err(Error::Contract("profile positions must be strictly increasing".into()));
            }
        }
        Ok(())
    }
}

/// Fits every fiber position of a map. Works on raw and deconvolved maps
/// alike; positions are fiber-relative via the map's recorded lead-in.
pub fn bfs_profile(map: &BgsMap) -> Result<BfsProfile> {
    bfs_profile_range(map, 0.0, map.fiber_length_m)
}

/// Same restricted to fiber coordinates `[lo_m, hi_m)`; the studies fit
/// only the window they score, which is most of their fitting budget.
pub fn bfs_profile_range(map: &BgsMap, lo_m: f64, hi_m: f64) -> Result<BfsProfile> {
    map.validate()?;
    if !(lo_m < hi_m) {
        return Err(Error::Domain(format!("empty fit window [{lo_m}, {hi_m})")));
    }
    let grid = map.grid();
    let dz = grid.dz_m();
    let lo = lo_m.max(0.0);
    let hi = hi_m.min(map.fiber_length_m);
    let k_lo = (((map.fiber_start_m + lo) / dz) - 1e-9).ceil() as usize;
    let k_hi = ((((map.fiber_start_m + hi) / dz) - 1e-9).ceil() as usize).min(grid.n_samples);
    if k_lo >= k_hi {
        return Err(Error::Domain(format!(
            "fit window [{lo_m}, {hi_m}) m contains no grid samples"
        )));
    }

    let mut spectrum = vec![0.0; map.n_channels()];
    let mut points = Vec::with_capacity(k_hi - k_lo);
    for k in k_lo..k_hi {
        for (ci, t) in map.traces.iter().enumerate() {
            spectrum[ci] = t.samples[k];
        }
        points.push(BfsPoint {
            position_m: k as f64 * dz - map.fiber_start_m,
            outcome: fit_lorentzian(&map.freq_axis_hz, &spectrum),
        });
    }
    let profile = BfsProfile { points };
    profile.validate_positions()?;
    Ok(profile)
}

/// Pointwise mean of profiles from repeated noise realizations. Positions
/// must agree; each position averages its converged fits and fails only
/// where every realization failed.
pub fn average_profiles(profiles: &[BfsProfile]) -> Result<BfsProfile> {
    let first = profiles
        .first()
        .ok_or_else(|| Error::Contract("no profiles to average".into()))?;
    for p in profiles {
        if p.len() != first.len()
            || p.points
                .iter()
                .zip(&first.points)
                .any(|(a, b)| (a.position_m - b.position_m).abs() > 1e-9)
        {
            return Err(Error::Contract(
                "profiles to average must share one position axis".into(),
            ));
        }
    }
    let points = (0..first.len())
        .map(|i| {
            let mut acc = (0.0, 0.0, 0.0, 0.0);
            let mut count = 0usize;
            for p in profiles {
                if let Some(f) = p.points[i].outcome.fit() {
                    acc.0 += f.bfs_hz;
                    acc.1 += f.fwhm_hz;
                    acc.2 += f.peak_gain;
                    acc.3 += f.residual_rms;
                    count += 1;
                }
            }
            let outcome = if count == 0 {
                fail("all realizations failed at this position")
            } else {
                let c = count as f64;
                FitOutcome::Converged(LorentzianFit {
                    bfs_hz: acc.0 / c,
                    fwhm_hz: acc.1 / c,
                    peak_gain: acc.2 / c,
                    residual_rms: acc.3 / c,
                    iterations: 0,
                })
            };
            BfsPoint {
                position_m: first.points[i].position_m,
                outcome,
            }
        })
        .collect();
    Ok(BfsProfile { points })
}

// ---------------------------------------------------------------------------
// SNR
// ---------------------------------------------------------------------------

/// How the noise floor of a time trace is estimated.
pub enum SnrMethod<'a> {
    /// Subtract the known noiseless trace; the gold standard.
    Oracle { noiseless: &'a [f64] },
    /// Detrend by a moving average one kernel length wide and rescale for
    /// the detrender's noise gain.
    Blind,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// SNR of a trace over a uniform reference window, in dB.
///
/// `kernel_len` is the interrogation kernel's tap count; the window must
/// cover at least three kernel lengths so the blind detrender has room and
/// the estimate is not dominated by a single structure.
pub fn snr_time_trace(
    samples: &[f64],
    method: SnrMethod,
    kernel_len: usize,
    reference: Range<usize>,
) -> Result<f64> {
    if kernel_len == 0 {
        return Err(Error::Contract("kernel length must be positive".into()));
    }
    if reference.end > samples.len() || reference.start >= reference.end {
        return Err(Error::Domain(format!(
            "reference window {reference:?} outside the {}-sample trace",
            samples.len()
        )));
    }
    let len = reference.end - reference.start;
    if len < 3 * kernel_len {
        return Err(Error::Domain(format!(
            "reference window of {len} samples is shorter than three kernel lengths ({})",
            3 * kernel_len
        )));
    }

    match method {
        SnrMethod::Oracle { noiseless } => {
            if noiseless.len() != samples.len() {
                return Err(Error::Contract(
                    "noiseless reference must match the trace length".into(),
                ));
            }
            let diff: Vec<f64> = samples[reference.clone()]
                .iter()
                .zip(&noiseless[reference.clone()])
                .map(|(a, b)| a - b)
                .collect();
            let (_, sigma) = mean_std(&diff);
            let (plateau, _) = mean_std(&noiseless[reference]);
            if sigma == 0.0 {
                return Ok(f64::INFINITY);
            }
            Ok(20.0 * (plateau / sigma).log10())
        }
        SnrMethod::Blind => {
            let w = kernel_len;
            let half = w / 2;
            let window = &samples[reference.clone()];
            // Centered moving average of width w; residuals only where the
            // average window is fully inside the reference.
            let mut resid = Vec::with_capacity(len - w);
            for i in half..(len - (w - half)) {
                let lo = i - half;
                let avg = window[lo..lo + w].iter().sum::<f64>() / w as f64;
                resid.push(window[i] - avg);
            }
            let (_, raw_sigma) = mean_std(&resid);
            // White noise through (x - MA) keeps variance (1 - 1/w).
            let sigma = raw_sigma / (1.0 - 1.0 / w as f64).sqrt();
            let (plateau, _) = mean_std(window);
            if sigma == 0.0 {
                return Ok(f64::INFINITY);
            }
            Ok(20.0 * (plateau / sigma).log10())
        }
    }
}

/// SNR a conventional pulse-width pair would reach at the same spatial
/// resolution, with the pair difference alone setting the resolution.
///
/// The comparison pair keeps the interrogating pair's short width and sets
/// the long one to `short + 2·resolution/v_g`, measured with the same
/// per-trace detector noise. In normalized units that noise is
/// `10^(-snr/20)` of the interrogating pair's plateau, so the answer is the
/// input SNR shifted by the ratio of the two differential plateaus.
pub fn matched_dpp_snr_db(
    pulse: PulseScheme,
    resolution_m: f64,
    linewidth_hz: f64,
    input_snr_db: f64,
    grid: &SamplingGrid,
) -> Result<f64> {
    let PulseScheme::Pair { width_short_s, .. } = pulse else {
        return Err(Error::Contract(
            "the conventional-pair comparison needs a pulse pair".into(),
        ));
    };
    if !(resolution_m > 0.0) || !resolution_m.is_finite() {
        return Err(Error::Domain(format!(
            "resolution must be positive, got {resolution_m} m"
        )));
    }
    let matched = PulseScheme::Pair {
        width_long_s: width_short_s + 2.0 * resolution_m / grid.group_velocity_m_per_s,
        width_short_s,
    };
    let used = plateau_amplitude(pulse, linewidth_hz, 1.0, grid);
    let narrow = plateau_amplitude(matched, linewidth_hz, 1.0, grid);
    if !(used > 0.0) || !(narrow > 0.0) {
        return Err(Error::Domain(format!(
            "degenerate differential plateaus {used} and {narrow}"
        )));
    }
    Ok(input_snr_db + 20.0 * (narrow / used).log10())
}

// ---------------------------------------------------------------------------
// Degradation and systematic error
// ---------------------------------------------------------------------------

/// BFS shortfall of an averaged profile inside one hotspot, in Hz;
/// positive means under-recovery. Scored over the central third of the
/// hotspot, falling back to the sample nearest the center when the third
/// contains no sample.
pub fn bfs_degradation(
    averaged: &BfsProfile,
    truth: &FiberProfile,
    hotspot: usize,
) -> Result<f64> {
    let hs: &Hotspot = truth
        .hotspots
        .get(hotspot)
        .ok_or_else(|| Error::Domain(format!("no hotspot {hotspot} on the fiber")))?;
    let inside: Vec<&BfsPoint> = averaged
        .points
        .iter()
        .filter(|p| p.position_m >= hs.start_m && p.position_m < hs.end_m())
        .collect();
    if inside.len() < 3 {
        return Err(Error::Domain(format!(
            "hotspot {hotspot} covers only {} profile samples; need 3",
            inside.len()
        )));
    }
    let third_lo = hs.start_m + hs.length_m / 3.0;
    let third_hi = hs.start_m + 2.0 * hs.length_m / 3.0;
    let mut central: Vec<f64> = inside
        .iter()
        .filter(|p| p.position_m >= third_lo && p.position_m <= third_hi)
        .filter_map(|p| p.outcome.fit().map(|f| f.bfs_hz))
        .collect();
    if central.is_empty() {
        let center = hs.center_m();
        let nearest = inside
            .iter()
            .filter(|p| p.outcome.is_converged())
            .min_by(|a, b| {
                (a.position_m - center)
                    .abs()
                    .total_cmp(&(b.position_m - center).abs())
            })
            .ok_or_else(|| {
                Error::Domain(format!("hotspot {hotspot} has no usable fits"))
            })?;
        central.push(nearest.outcome.fit().expect("filtered").bfs_hz);
    }
    let mean = central.iter().sum::<f64>() / central.len() as f64;
    Ok(hs.bfs_hz - mean)
}

/// Worst absolute BFS error against truth over a fiber-coordinate region.
pub fn max_systematic_error(
    profile: &BfsProfile,
    truth: &FiberProfile,
    region: Range<f64>,
) -> Result<f64> {
    let mut worst: Option<f64> = None;
    for (z, f) in profile.fits() {
        if z >= region.start && z < region.end {
            let err = (f.bfs_hz - truth.bfs_at(z)).abs();
            worst = Some(worst.map_or(err, |w: f64| w.max(err)));
        }
    }
    worst.ok_or_else(|| {
        Error::Domain(format!(
            "region [{}, {}) m holds no converged fits",
            region.start, region.end
        ))
    })
}

/// Aggregate quality metrics of one recovery.
#[derive(Debug, Clone, PartialEq)]
pub struct HotspotDegradation {
    pub hotspot: usize,
    pub degradation_hz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub snr_oracle_db: Option<f64>,
    pub snr_blind_db: Option<f64>,
    pub max_systematic_error_hz: f64,
    pub hotspot_degradations: Vec<HotspotDegradation>,
    /// Which SNR definition the numbers use.
    pub snr_convention: &'static str,
}

// ---------------------------------------------------------------------------
// Resolution study
// ---------------------------------------------------------------------------

/// Physics and budget of the resolution/SNR trade-off study: one hotspot of
/// varying length on an otherwise uniform fiber, probed by a pulse pair at
/// a given input SNR, recovered at a regularization weight chosen so the
/// averaged-profile degradation hits a tolerance.
#[derive(Debug, Clone)]
pub struct ResolutionScenario {
    pub fiber_length_m: f64,
    pub base_bfs_hz: f64,
    pub linewidth_hz: f64,
    pub gain_scale: f64,
    /// Hotspot BFS offset from the base, Hz.
    pub hotspot_offset_hz: f64,
    /// Hotspot center position, fiber coordinates.
    pub hotspot_center_m: f64,
    pub pulse: PulseScheme,
    pub sample_rate_hz: f64,
    pub group_velocity_m_per_s: f64,
    pub sweep: FrequencySweep,
    pub input_snr_db: f64,
    pub realizations: usize,
    pub seed: u64,
    pub solver: DeconvConfig,
    /// Uniform reference window (fiber coordinates) for post-recovery SNR.
    pub reference_m: Range<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchStatus {
    Converged,
    /// The matched quantity already overshoots the target at the smallest
    /// weight in the search range.
    SaturatedLow,
    /// The largest weight in the range still falls short of the target.
    SaturatedHigh,
    /// The bracket collapsed without entering the acceptance band.
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolutionPoint {
    pub hotspot_length_m: f64,
    pub mu: f64,
    pub degradation_hz: f64,
    pub post_deconv_snr_db: f64,
    pub status: SearchStatus,
    /// Realizations in the reported evaluation whose recovery left any
    /// channel short of the solver's convergence test.
    pub unconverged_realizations: usize,
    pub clean_converged: bool,
}

const MU_LOG_LO: f64 = -4.0;
const MU_LOG_HI: f64 = 4.0;

/// Which side of an evaluation a weight search matches against.
#[derive(Clone, Copy)]
enum Matched {
    Degradation,
    Snr,
}

struct LengthSetup {
    fiber: FiberProfile,
    grid: SamplingGrid,
    kernel: DeconvKernel,
    op: ConvOperator,
    noiseless: BgsMap,
    reference: Range<usize>,
    peak_channel: usize,
}

/// Monte Carlo result of one `(hotspot length, mu)` evaluation.
#[derive(Clone, Copy)]
struct EvalPoint {
    degradation_hz: f64,
    snr_db: f64,
    clean_converged: bool,
    unconverged: usize,
}

/// Monte Carlo state of one `(hotspot length, mu)` point. Realizations are
/// stored in seed order so any prefix is a coherent subsample; a search can
/// evaluate a point cheaply first and pay for the rest only if the point
/// matters.
struct EvalCell {
    /// Clean-recovery trace on the peak-gain channel, the oracle reference.
    clean_peak: Vec<f64>,
    profiles: Vec<BfsProfile>,
    snrs: Vec<f64>,
}

/// Shares per-length scenario state and per-(length, mu) evaluations
/// between searches at different tolerances, which overlap heavily.
pub struct ResolutionStudy {
    scenario: ResolutionScenario,
    setups: Mutex<HashMap<u64, std::sync::Arc<LengthSetup>>>,
    evals: Mutex<HashMap<(u64, u64), std::sync::Arc<Mutex<Option<EvalCell>>>>>,
}

impl ResolutionStudy {
    pub fn new(scenario: ResolutionScenario) -> Self {
        Self {
            scenario,
            setups: Mutex::new(HashMap::new()),
            evals: Mutex::new(HashMap::new()),
        }
    }

    pub fn scenario(&self) -> &ResolutionScenario {
        &self.scenario
    }

    fn setup_for(&self, length_m: f64) -> Result<std::sync::Arc<LengthSetup>> {
        if let Some(s) = self.setups.lock().expect("setup cache").get(&length_m.to_bits()) {
            return Ok(std::sync::Arc::clone(s));
        }
        let sc = &self.scenario;
        let fiber = FiberProfile::uniform(
            sc.fiber_length_m,
            sc.base_bfs_hz,
            sc.linewidth_hz,
            sc.gain_scale,
        )
        .with_hotspots(vec![Hotspot {
            start_m: sc.hotspot_center_m - length_m / 2.0,
            length_m,
            bfs_hz: sc.base_bfs_hz + sc.hotspot_offset_hz,
        }]);
        fiber.validate()?;
        let grid = grid_for(&fiber, sc.pulse, sc.sample_rate_hz, sc.group_velocity_m_per_s)?;
        let kernel = dpp_kernel(sc.pulse, sc.linewidth_hz, &grid, false)?;
        let noiseless = simulate_bgs(&fiber, sc.pulse, &sc.sweep, &grid, None)?;
        let dz = grid.dz_m();
        let k_lo = ((noiseless.fiber_start_m + sc.reference_m.start) / dz - 1e-9).ceil() as usize;
        let k_hi = ((noiseless.fiber_start_m + sc.reference_m.end) / dz - 1e-9).ceil() as usize;
        let peak_channel = noiseless.channel_nearest(sc.base_bfs_hz);
        let op = ConvOperator::new(&kernel, noiseless.n_samples())?;
        let setup = std::sync::Arc::new(LengthSetup {
            fiber,
            kernel,
            op,
            noiseless,
            reference: k_lo..k_hi,
            peak_channel,
        });
        self.setups
            .lock()
            .expect("setup cache")
            .insert(length_m.to_bits(), std::sync::Arc::clone(&setup));
        Ok(setup)
    }

    /// Monte Carlo evaluation of one `(hotspot length, mu)` point over the
    /// first `realizations` noise seeds: the degradation of the averaged
    /// profile and the mean post-recovery oracle SNR on the peak-gain
    /// channel. Noise realizations solve from cold starts; warm starts save
    /// nothing here and make the result depend on the visit order.
    fn evaluate(&self, length_m: f64, mu: f64, realizations: usize) -> Result<(f64, f64)> {
        let realizations = realizations.max(1);
        let sc = &self.scenario;
        let setup = self.setup_for(length_m)?;
        let key = (length_m.to_bits(), mu.to_bits());
        let slot = {
            let mut map = self.evals.lock().expect("eval cache");
            std::sync::Arc::clone(map.entry(key).or_default())
        };
        let mut slot = slot.lock().expect("eval cell");
        if slot.is_none() {
            let clean = tv_deconvolve_map_with(
                &setup.op,
                &setup.noiseless,
                mu,
                &sc.solver,
                MapWarm::Cold,
            )?;
            *slot = Some(EvalCell {
                clean_peak: clean.map.traces[setup.peak_channel].samples.clone(),
                profiles: Vec::new(),
                snrs: Vec::new(),
            });
        }
        let cell = slot.as_mut().expect("just initialized");
        let hs = &setup.fiber.hotspots[0];
        while cell.snrs.len() < realizations {
            let r = cell.snrs.len();
            let noisy = with_noise(
                &setup.noiseless,
                &NoiseSpec {
                    target_snr_db: sc.input_snr_db,
                    seed: derive_seed(sc.seed, r as u64),
                },
            )?;
            let rec = tv_deconvolve_map_with(&setup.op, &noisy, mu, &sc.solver, MapWarm::Cold)?;
            cell.profiles.push(bfs_profile_range(&rec.map, hs.start_m, hs.end_m())?);
            let snr = snr_time_trace(
                &rec.map.traces[setup.peak_channel].samples,
                SnrMethod::Oracle {
                    noiseless: &cell.clean_peak,
                },
                setup.kernel.len(),
                setup.reference.clone(),
            )?;
            cell.snrs.push(snr);
        }
        let averaged = average_profiles(&cell.profiles[..realizations])?;
        let deg = bfs_degradation(&averaged, &setup.fiber, 0)?;
        let snr = cell.snrs[..realizations].iter().sum::<f64>() / realizations as f64;
        Ok((deg, snr))
    }

    /// Finds, per hotspot length, the weight whose averaged-profile
    /// degradation matches `tolerance_hz` within 5%, and reports the SNR
    /// bought at that weight. Saturation at either search bound and
    /// bracket collapse are flagged, not silently clamped.
    pub fn solve_for(
        &self,
        tolerance_hz: f64,
        lengths_m: &[f64],
    ) -> Result<Vec<ResolutionPoint>> {
        if !(tolerance_hz > 0.0) {
            return Err(Error::Domain(format!(
                "degradation tolerance must be positive, got {tolerance_hz}"
            )));
        }
        lengths_m
            .iter()
            .map(|&len| {
                self.search_mu(len, tolerance_hz, 0.05 * tolerance_hz, Matched::Degradation)
            })
            .collect()
    }

    /// Dual search: finds the weight whose mean post-recovery SNR matches
    /// `target_db` within 0.1 dB, reporting the degradation that buys.
    /// Smoothing raises both numbers, so the same bracketing applies.
    pub fn solve_for_snr(
        &self,
        target_db: f64,
        lengths_m: &[f64],
    ) -> Result<Vec<ResolutionPoint>> {
        if !target_db.is_finite() {
            return Err(Error::Domain(format!(
                "SNR target must be finite, got {target_db}"
            )));
        }
        lengths_m
            .iter()
            .map(|&len| self.search_mu(len, target_db, 0.1, Matched::Snr))
            .collect()
    }

    /// Locates the crossing at a reduced realization count first, then
    /// verifies and refines at the scenario's full count. Both matched
    /// quantities grow with the weight, and tiny weights on noisy data are
    /// the solver's worst case, so the search expands decade by decade from
    /// `mu = 1` instead of probing the far bounds; any verdict it returns
    /// is computed at full fidelity.
    fn search_mu(
        &self,
        length_m: f64,
        target: f64,
        band: f64,
        which: Matched,
    ) -> Result<ResolutionPoint> {
        let full = self.scenario.realizations.max(1);
        let probe = (full / 8).max(4).min(full);
        let val = |pair: (f64, f64)| match which {
            Matched::Degradation => pair.0,
            Matched::Snr => pair.1,
        };
        // Margin to the target, clamped so an infinite evaluation (a fully
        // collapsed recovery has no residual fluctuation) keeps its sign
        // without poisoning the false-position arithmetic.
        let fval = |pair: (f64, f64)| -> Result<f64> {
            let v = val(pair) - target;
            if v.is_nan() {
                return Err(Error::Domain(
                    "weight search evaluation produced NaN".into(),
                ));
            }
            Ok(v.clamp(-1e300, 1e300))
        };
        let point = |mu: f64, pair: (f64, f64), status: SearchStatus| ResolutionPoint {
            hotspot_length_m: length_m,
            mu,
            degradation_hz: pair.0,
            post_deconv_snr_db: pair.1,
            status,
        };

        // Cheap pass: decade expansion to a sign change, then false
        // position down to a narrow bracket. Only steers where the
        // full-fidelity pass starts; proves nothing by itself.
        let mut x_c = {
            let mut x = 0.0f64;
            let mut f = fval(self.evaluate(length_m, 10f64.powf(x), probe)?)?;
            let step = if f < 0.0 { 1.0 } else { -1.0 };
            let mut bracket = None;
            while (MU_LOG_LO..=MU_LOG_HI).contains(&(x + step)) {
                let x_next = x + step;
                let f_next = fval(self.evaluate(length_m, 10f64.powf(x_next), probe)?)?;
                if f_next.signum() != f.signum() {
                    bracket = Some(if f < 0.0 {
                        (x, f, x_next, f_next)
                    } else {
                        (x_next, f_next, x, f)
                    });
                    break;
                }
                x = x_next;
                f = f_next;
            }
            match bracket {
                None => x,
                Some((mut x_lo, mut f_lo, mut x_hi, mut f_hi)) => {
                    let mut side = 0i8;
                    for _ in 0..12 {
                        if (x_hi - x_lo).abs() < 0.05 {
                            break;
                        }
                        let x = (x_lo * f_hi - x_hi * f_lo) / (f_hi - f_lo);
                        let f = fval(self.evaluate(length_m, 10f64.powf(x), probe)?)?;
                        if f.abs() <= band {
                            x_lo = x;
                            x_hi = x;
                            break;
                        }
                        if f < 0.0 {
                            x_lo = x;
                            f_lo = f;
                            if side == -1 {
                                f_hi /= 2.0;
                            }
                            side = -1;
                        } else {
                            x_hi = x;
                            f_hi = f;
                            if side == 1 {
                                f_lo /= 2.0;
                            }
                            side = 1;
                        }
                    }
                    0.5 * (x_lo + x_hi)
                }
            }
        };

        // Full-fidelity pass, self-contained: bracket outward from the
        // cheap pass's candidate, then run Illinois to the band.
        x_c = x_c.clamp(MU_LOG_LO, MU_LOG_HI);
        let pair_c = self.evaluate(length_m, 10f64.powf(x_c), full)?;
        let mut f_c = fval(pair_c)?;
        if f_c.abs() <= band {
            return Ok(point(10f64.powf(x_c), pair_c, SearchStatus::Converged));
        }
        let dir = if f_c < 0.0 { 1.0 } else { -1.0 };
        let mut h = 0.25;
        let (mut x_lo, mut f_lo, mut x_hi, mut f_hi);
        loop {
            let x_t = (x_c + dir * h).clamp(MU_LOG_LO, MU_LOG_HI);
            if x_t == x_c {
                let status = if dir < 0.0 {
                    SearchStatus::SaturatedLow
                } else {
                    SearchStatus::SaturatedHigh
                };
                let pair = self.evaluate(length_m, 10f64.powf(x_c), full)?;
                return Ok(point(10f64.powf(x_c), pair, status));
            }
            let pair_t = self.evaluate(length_m, 10f64.powf(x_t), full)?;
            let f_t = fval(pair_t)?;
            if f_t.abs() <= band {
                return Ok(point(10f64.powf(x_t), pair_t, SearchStatus::Converged));
            }
            if f_t.signum() != f_c.signum() {
                (x_lo, f_lo, x_hi, f_hi) = if f_c < 0.0 {
                    (x_c, f_c, x_t, f_t)
                } else {
                    (x_t, f_t, x_c, f_c)
                };
                break;
            }
            x_c = x_t;
            f_c = f_t;
            h *= 2.0;
        }

        // False position on log10(mu) with the Illinois anti-stall scaling.
        let mut side = 0i8;
        for _ in 0..40 {
            let x = (x_lo * f_hi - x_hi * f_lo) / (f_hi - f_lo);
            let mu = 10f64.powf(x);
            let pair = self.evaluate(length_m, mu, full)?;
            if (val(pair) - target).abs() <= band {
                return Ok(point(mu, pair, SearchStatus::Converged));
            }
            let f = fval(pair)?;
            if f < 0.0 {
                x_lo = x;
                f_lo = f;
                if side == -1 {
                    f_hi /= 2.0;
                }
                side = -1;
            } else {
                x_hi = x;
                f_hi = f;
                if side == 1 {
                    f_lo /= 2.0;
                }
                side = 1;
            }
            if (x_hi - x_lo).abs() < 1e-6 {
                break;
            }
        }
        let x = 0.5 * (x_lo + x_hi);
        let mu = 10f64.powf(x);
        let pair = self.evaluate(length_m, mu, full)?;
        let status = if (val(pair) - target).abs() <= band {
            SearchStatus::Converged
        } else {
            SearchStatus::Stalled
        };
        Ok(point(mu, pair, status))
    }
}

/// One-shot wrapper over [`ResolutionStudy`] for a single tolerance.
pub fn find_spatial_resolution(
    scenario: ResolutionScenario,
    tolerance_hz: f64,
    lengths_m: &[f64],
) -> Result<Vec<ResolutionPoint>> {
    ResolutionStudy::new(scenario).solve_for(tolerance_hz, lengths_m)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
