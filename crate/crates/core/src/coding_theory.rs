//! Closed-form bitplane statistics and rate planning.
//!
//! With a prediction error `ε = ‖x − x̂‖`, a measurement of the prediction
//! differs from the true one by `D ~ N(0, (σε/Δ)²)`. Knowing the `k − 1` lower
//! bits, the decoder picks the consistent level nearest to its prediction; bit
//! `k` is wrong when `D + t` (with `t` the uniform rounding offset) falls into
//! the half of each `2^k` period that maps to the other parity.
//!
//! Both the flip probability `p_k` and the per-measurement masses `A1`/`A2`
//! are periodic Gaussian masses. They are evaluated with their Fourier series;
//! when the Gaussian envelope decays too slowly (small `σε/Δ`) the equivalent
//! direct sum over periods is used instead, which converges in a handful of
//! terms there.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default series tolerance.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Fourier terms above which the direct (period-sum) evaluation is used.
const MAX_FOURIER_TERMS: f64 = 20_000.0;

/// Prediction error model `(ε, σ, Δ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorModel {
    pub epsilon: f64,
    pub sigma: f64,
    pub delta: f64,
}

impl ErrorModel {
    pub fn new(epsilon: f64, sigma: f64, delta: f64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon must be >= 0, got {epsilon}")));
        }
        if !(sigma > 0.0) || !(delta > 0.0) {
            return Err(Error::InvalidParameter("sigma and delta must be positive".into()));
        }
        Ok(Self { epsilon, sigma, delta })
    }

    /// Model with a given normalized error `εσ/Δ` (σ = Δ = 1).
    pub fn normalized(scale: f64) -> Self {
        Self { epsilon: scale.max(0.0), sigma: 1.0, delta: 1.0 }
    }

    /// Standard deviation of `D`, i.e. `εσ/Δ`.
    pub fn scale(&self) -> f64 {
        self.epsilon * self.sigma / self.delta
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Standard normal CDF.
fn phi_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// `P(a <= D <= b)` for `D ~ N(0, s²)`, accurate in both tails.
fn gauss_interval(s: f64, a: f64, b: f64) -> f64 {
    if s == 0.0 {
        return if a <= 0.0 && 0.0 <= b { 1.0 } else { 0.0 };
    }
    let (za, zb) = (a / s, b / s);
    if za > 0.0 {
        0.5 * (libm::erfc(za / std::f64::consts::SQRT_2) - libm::erfc(zb / std::f64::consts::SQRT_2))
    } else if zb < 0.0 {
        0.5 * (libm::erfc(-zb / std::f64::consts::SQRT_2) - libm::erfc(-za / std::f64::consts::SQRT_2))
    } else {
        phi_cdf(zb) - phi_cdf(za)
    }
}

/// `∫_{-∞}^{x} Φ(v/s) dv`.
fn integrated_cdf(s: f64, x: f64) -> f64 {
    if s == 0.0 {
        return x.max(0.0);
    }
    let z = x / s;
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    s * (z * phi_cdf(z) + pdf)
}

/// `P(a <= D + t <= b)` with `t ~ U[-1/2, 1/2]` independent of `D`.
fn smoothed_interval(s: f64, a: f64, b: f64) -> f64 {
    // the law is symmetric; mirrored to the negative side the integrated CDF
    // values are small and their differences keep relative accuracy
    let (a, b) = if a > 0.0 { (-b, -a) } else { (a, b) };
    let v = integrated_cdf(s, b + 0.5) - integrated_cdf(s, b - 0.5) - integrated_cdf(s, a + 0.5)
        + integrated_cdf(s, a - 0.5);
    v.clamp(0.0, 1.0)
}

/// Mass of a periodic union of intervals `[c + jP − h, c + jP + h]` under the
/// law of `D` (or of `D + t` when `smoothed`).
#[derive(Debug, Clone, Copy)]
struct PeriodicMass {
    scale: f64,
    center: f64,
    half_width: f64,
    period: f64,
    smoothed: bool,
}

impl PeriodicMass {
    fn fourier_terms_needed(&self, tol: f64) -> f64 {
        if self.scale == 0.0 {
            return f64::INFINITY;
        }
        // envelope exp(-(2π s l / P)² / 2) drops below tol
        self.period * (2.0 * (1.0 / tol).ln()).sqrt() / (2.0 * std::f64::consts::PI * self.scale)
    }

    fn eval(&self, tol: f64) -> f64 {
        // the direct sum keeps relative accuracy on tiny tail masses and is
        // short whenever the spread is comparable to the period
        if self.scale <= 4.0 * self.period || self.fourier_terms_needed(tol) > MAX_FOURIER_TERMS {
            self.direct(tol)
        } else {
            self.fourier(tol)
        }
    }

    fn fourier(&self, tol: f64) -> f64 {
        let base = 2.0 * self.half_width / self.period;
        let mut partial: f64 = 0.0;
        let mut l = 1u64;
        loop {
            let lf = l as f64;
            let w = 2.0 * std::f64::consts::PI * self.scale * lf / self.period;
            let envelope = (-0.5 * w * w).exp();
            if l >= 64 && envelope < tol * partial.abs().max(1.0) {
                break;
            }
            if envelope == 0.0 {
                break;
            }
            let mut term = envelope
                * (2.0 * std::f64::consts::PI * lf * self.center / self.period).cos()
                * sinc(2.0 * self.half_width * lf / self.period);
            if self.smoothed {
                term *= sinc(lf / self.period);
            }
            partial += term;
            l += 1;
        }
        base * (1.0 + 2.0 * partial)
    }

    fn direct(&self, tol: f64) -> f64 {
        let spread = self.scale * (2.0 * (1.0 / tol.min(1e-3)).ln()).sqrt() * 1.5
            + self.half_width
            + if self.smoothed { 0.5 } else { 0.0 }
            + 1.0;
        let j_lo = ((-spread - self.center) / self.period).floor() as i64;
        let j_hi = ((spread - self.center) / self.period).ceil() as i64;
        let mut total = 0.0;
        for j in j_lo..=j_hi {
            let mid = self.center + j as f64 * self.period;
            let (a, b) = (mid - self.half_width, mid + self.half_width);
            total += if self.smoothed {
                smoothed_interval(self.scale, a, b)
            } else {
                gauss_interval(self.scale, a, b)
            };
        }
        total
    }
}

/// `H_B(p) = −p log2 p − (1−p) log2(1−p)`.
pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("probability {p} outside [0, 1]")));
    }
    if p == 0.0 || p == 1.0 {
        return Ok(0.0);
    }
    Ok(-p * p.log2() - (1.0 - p) * (1.0 - p).log2())
}

/// Binary symmetric channel capacity `1 − H_B(p)`.
pub fn bsc_capacity(p: f64) -> Result<f64> {
    Ok(1.0 - binary_entropy(p)?)
}

/// `ρ = 1/(1 − R)`.
pub fn compression_ratio(rate: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidParameter(format!("rate {rate} outside [0, 1)")));
    }
    Ok(1.0 / (1.0 - rate))
}

/// Probability that the predicted bit `k` (1-based) is wrong when the lower
/// `k − 1` planes are known, clamped to `[0, 1/2]`.
pub fn bitflip_probability(k: u32, model: &ErrorModel, tol: f64) -> f64 {
    assert!(k >= 1, "bitplane index is 1-based");
    let period = (2.0f64).powi(k as i32);
    let mass = PeriodicMass {
        scale: model.scale(),
        center: period / 2.0,
        half_width: period / 4.0,
        period,
        smoothed: true,
    };
    mass.eval(tol).clamp(0.0, 0.5)
}

/// Mass of `D` over unit cells centred at `c + j 2^k`.
///
/// `c` is a distance in measurement (quantization step) units; with
/// `A2(k, c) = a1(k, 2^(k−1) − c)` the two masses cover the cells of both
/// parities.
pub fn a1(k: u32, c: f64, model: &ErrorModel) -> Result<f64> {
    a1_with_tol(k, c, model, DEFAULT_TOL)
}

pub fn a1_with_tol(k: u32, c: f64, model: &ErrorModel, tol: f64) -> Result<f64> {
    let half = (2.0f64).powi(k as i32 - 1);
    if k == 0 || !(0.0..=half).contains(&c) {
        return Err(Error::InvalidParameter(format!("distance {c} outside [0, {half}] for k = {k}")));
    }
    Ok(unit_cell_mass(k, c, model.scale(), tol))
}

fn unit_cell_mass(k: u32, c: f64, scale: f64, tol: f64) -> f64 {
    let period = (2.0f64).powi(k as i32);
    PeriodicMass { scale, center: c, half_width: 0.5, period, smoothed: false }
        .eval(tol)
        .clamp(0.0, 1.0)
}

/// Likelihood that predicted bit `k` is wrong, given the normalized distance
/// `c ∈ [0, 2^(k−1)]` reported by bitplane prediction.
///
/// `c` is twice the distance from the prediction to the nearest consistent
/// level, so `c = 2^(k−1)` means the prediction sits exactly halfway between
/// the two parity candidates and the likelihood is `1/2`.
pub fn bit_error_likelihood(k: u32, c: f64, model: &ErrorModel) -> Result<f64> {
    let half = (2.0f64).powi(k as i32 - 1);
    if k == 0 || !(0.0..=half).contains(&c) {
        return Err(Error::InvalidParameter(format!("distance {c} outside [0, {half}] for k = {k}")));
    }
    Ok(likelihood_from_offset(k, c / 2.0, model.scale(), DEFAULT_TOL))
}

/// Likelihood for a raw offset `d ∈ [0, 2^(k−2)]` to the nearest consistent level.
pub(crate) fn likelihood_from_offset(k: u32, d: f64, scale: f64, tol: f64) -> f64 {
    let half = (2.0f64).powi(k as i32 - 1);
    let d = d.clamp(0.0, half / 2.0);
    if half / 2.0 - d <= 1e-12 * half {
        return 0.5;
    }
    let same = unit_cell_mass(k, d, scale, tol);
    let other = unit_cell_mass(k, half - d, scale, tol);
    let total = same + other;
    if total <= f64::MIN_POSITIVE {
        // both masses underflow: the nearer parity wins outright
        return 0.0;
    }
    (other / total).clamp(0.0, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlaneMode {
    Skip,
    Raw,
    Syndrome,
}

impl PlaneMode {
    pub fn code(self) -> u8 {
        match self {
            PlaneMode::Skip => 0,
            PlaneMode::Raw => 1,
            PlaneMode::Syndrome => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(PlaneMode::Skip),
            1 => Ok(PlaneMode::Raw),
            2 => Ok(PlaneMode::Syndrome),
            other => Err(Error::Format(format!("unknown plane mode {other}"))),
        }
    }
}

/// Transmission decision for one bitplane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub mode: PlaneMode,
    /// Index into [`RatePolicy::rates`]; meaningful for `Syndrome` only.
    pub rate_index: u8,
    /// Predicted flip probability.
    pub p: f64,
}

/// Per-plane plan, index 0 is the LSB plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitplanePlan {
    pub entries: Vec<PlanEntry>,
}

impl BitplanePlan {
    pub fn bits(&self) -> usize {
        self.entries.len()
    }

    /// Entry for 1-based plane `k`.
    pub fn entry(&self, k: usize) -> &PlanEntry {
        &self.entries[k - 1]
    }

    pub fn all_skip(bits: usize) -> Self {
        Self { entries: vec![PlanEntry { mode: PlaneMode::Skip, rate_index: 0, p: 0.0 }; bits] }
    }

    pub fn count(&self, mode: PlaneMode) -> usize {
        self.entries.iter().filter(|e| e.mode == mode).count()
    }
}

/// Code-rate database and planning thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePolicy {
    pub rates: Vec<f64>,
    pub backoff: f64,
    pub cutoff_skip: f64,
    /// A plane goes raw when its backed-off rate is at or below this value.
    pub cutoff_raw: f64,
}

impl Default for RatePolicy {
    fn default() -> Self {
        Self {
            rates: default_rates(),
            backoff: 0.05,
            cutoff_skip: 0.001,
            cutoff_raw: 0.05,
        }
    }
}

/// `0.05, 0.10, …, 0.95`.
pub fn default_rates() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

const RATE_EPS: f64 = 1e-9;

impl RatePolicy {
    pub fn validate(&self) -> Result<()> {
        if self.rates.is_empty() || self.rates.len() > 64 {
            return Err(Error::InvalidParameter("rate list must hold 1..=64 rates".into()));
        }
        if self.rates.windows(2).any(|w| w[0] >= w[1]) || self.rates.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
            return Err(Error::InvalidParameter("rates must be strictly increasing in (0, 1)".into()));
        }
        if !(self.backoff >= 0.0) || !(self.cutoff_skip >= 0.0) {
            return Err(Error::InvalidParameter("backoff and cutoff must be non-negative".into()));
        }
        Ok(())
    }

    /// Index of the largest database rate not exceeding `value`.
    pub fn step_under(&self, value: f64) -> Option<usize> {
        self.rates.iter().rposition(|&r| r <= value + RATE_EPS)
    }

    /// Rate index for a plane with flip probability `p`, or `None` when the
    /// plane has to be sent raw.
    pub fn select_rate(&self, p: f64) -> Option<usize> {
        let capacity = bsc_capacity(p.clamp(0.0, 0.5)).ok()?;
        let under = self.step_under(capacity)?;
        let target = self.rates[under] - self.backoff;
        if target <= self.cutoff_raw + RATE_EPS {
            return None;
        }
        self.step_under(target)
    }
}

/// Plans every plane of a `bits`-bit quantizer for the given error model.
pub fn plan_bitplanes(model: &ErrorModel, bits: usize, policy: &RatePolicy) -> BitplanePlan {
    let mut entries = Vec::with_capacity(bits);
    let mut skipping = false;
    for k in 1..=bits {
        let p = bitflip_probability(k as u32, model, DEFAULT_TOL);
        skipping |= p < policy.cutoff_skip;
        let entry = if skipping {
            PlanEntry { mode: PlaneMode::Skip, rate_index: 0, p }
        } else {
            match policy.select_rate(p) {
                Some(idx) => PlanEntry { mode: PlaneMode::Syndrome, rate_index: idx as u8, p },
                None => PlanEntry { mode: PlaneMode::Raw, rate_index: 0, p },
            }
        };
        entries.push(entry);
    }
    BitplanePlan { entries }
}

/// Number of planes whose flip probability reaches `cutoff`.
pub fn planes_to_code(model: &ErrorModel, bits: usize, cutoff: f64) -> usize {
    (1..=bits)
        .take_while(|&k| bitflip_probability(k as u32, model, DEFAULT_TOL) >= cutoff)
        .count()
}

/// Source-domain error from a measurement-domain error, `Δ √(n/m) ε_y`.
pub fn epsilon_x_from_epsilon_y(eps_y: f64, n: usize, m: usize, delta: f64) -> f64 {
    delta * (n as f64 / m as f64).sqrt() * eps_y
}
