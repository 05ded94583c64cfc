//! Side-information prediction of a band from the reference band.
//!
//! Linear mode predicts pixels of band `i` from band 0 with a scalar LMMSE
//! estimator. Successive mode works in measurement space: band `k` is
//! predicted from the reference measurements and the dither-removed quantized
//! measurements of bands `1..k−1`.

use half::f16;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Variance of the dithered quantization error.
pub const DITHER_VARIANCE: f64 = 1.0 / 12.0;

/// Trace-relative ridge added to singular regressor covariances.
pub const RIDGE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionMode {
    Linear,
    Successive,
}

impl PredictionMode {
    pub fn code(self) -> u8 {
        match self {
            PredictionMode::Linear => 0,
            PredictionMode::Successive => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(PredictionMode::Linear),
            1 => Ok(PredictionMode::Successive),
            other => Err(Error::Format(format!("unknown prediction mode {other}"))),
        }
    }
}

impl std::str::FromStr for PredictionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(PredictionMode::Linear),
            "successive" => Ok(PredictionMode::Successive),
            other => Err(Error::InvalidParameter(format!("unknown prediction mode '{other}'"))),
        }
    }
}

/// Predicted vector with its estimated ℓ2 error.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    pub values: Vec<f64>,
    pub epsilon: f64,
    pub mode: PredictionMode,
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample covariance normalized by `n`.
pub fn covariance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    if a.is_empty() {
        return Ok(0.0);
    }
    let (ma, mb) = (mean(a), mean(b));
    Ok(a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64)
}

/// Pixel-domain statistics of a band against the reference band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub mean_ref: f64,
    pub var_ref: f64,
    pub mean: f64,
    pub var: f64,
    pub cov_ref: f64,
}

pub fn band_stats(x0: &[f64], xi: &[f64]) -> Result<BandStats> {
    check_len(x0.len(), xi.len())?;
    Ok(BandStats {
        mean_ref: mean(x0),
        var_ref: covariance(x0, x0)?,
        mean: mean(xi),
        var: covariance(xi, xi)?,
        cov_ref: covariance(x0, xi)?,
    })
}

/// `x̂_i = (σ_{0i}/σ_0²)(x_0 − μ_0) + μ_i`; a constant reference gives `μ_i`.
pub fn lmmse_predict(x0: &[f64], stats: &BandStats) -> Vec<f64> {
    if stats.var_ref <= 0.0 {
        return vec![stats.mean; x0.len()];
    }
    let gain = stats.cov_ref / stats.var_ref;
    x0.iter().map(|&v| gain * (v - stats.mean_ref) + stats.mean).collect()
}

/// Closed-form `ε_i = sqrt(n(σ_i² − σ_{0i}²/σ_0²))`.
pub fn linear_epsilon(stats: &BandStats, n: usize) -> f64 {
    let explained = if stats.var_ref > 0.0 { stats.cov_ref * stats.cov_ref / stats.var_ref } else { 0.0 };
    (n as f64 * (stats.var - explained)).max(0.0).sqrt()
}

/// Measurement-space first and second moments of `ỹ_0, …, ỹ_{K−1}`
/// (pre-dither, unquantized).
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementStats {
    pub means: Vec<f64>,
    /// Symmetric `K × K` covariance, row-major.
    pub cov: Vec<Vec<f64>>,
    /// Shape of the mean in measurement space. `None` is a constant mean;
    /// `Some(a)` models band `k` as `means[k]·a` plus a zero-mean residual.
    pub direction: Option<Vec<f64>>,
}

impl MeasurementStats {
    pub fn from_measurements(bands: &[&[f64]]) -> Result<Self> {
        let k = bands.len();
        let means = bands.iter().map(|b| mean(b)).collect();
        let mut cov = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..=i {
                let c = covariance(bands[i], bands[j])?;
                cov[i][j] = c;
                cov[j][i] = c;
            }
        }
        Ok(Self { means, cov, direction: None })
    }

    /// Moments with the mean taken along `direction`: `μ_k = ⟨ỹ_k, a⟩/‖a‖²`
    /// and covariances of the residuals `ỹ_k − μ_k a`.
    ///
    /// With `a = A·1` the mean is the image of a constant block, which keeps
    /// the large DC coefficient of an SRHT out of the covariances.
    pub fn from_measurements_along(bands: &[&[f64]], direction: &[f64]) -> Result<Self> {
        let m = direction.len();
        for b in bands {
            check_len(m, b.len())?;
        }
        let means: Vec<f64> = bands.iter().map(|b| project(b, direction)).collect();
        let residuals: Vec<Vec<f64>> = bands
            .iter()
            .zip(&means)
            .map(|(b, &mu)| b.iter().zip(direction).map(|(v, a)| v - mu * a).collect())
            .collect();
        let k = bands.len();
        let mut cov = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..=i {
                let c = residuals[i].iter().zip(&residuals[j]).map(|(a, b)| a * b).sum::<f64>() / m.max(1) as f64;
                cov[i][j] = c;
                cov[j][i] = c;
            }
        }
        Ok(Self { means, cov, direction: Some(direction.to_vec()) })
    }

    fn mean_at(&self, band: usize, i: usize) -> f64 {
        match &self.direction {
            Some(a) => self.means[band] * a[i],
            None => self.means[band],
        }
    }

    pub fn bands(&self) -> usize {
        self.means.len()
    }

    /// Regressor covariance `C_{k−1}` of `[ỹ_0, ỹ^q_1, …, ỹ^q_{k−1}]` and the
    /// cross-covariance `C_{k,k−1}`, with the dither correction applied.
    fn system(&self, k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut c = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..k {
                c[i][j] = self.cov[i][j];
            }
            if i > 0 {
                c[i][i] += DITHER_VARIANCE;
            }
        }
        let cross = (0..k).map(|j| self.cov[k][j]).collect();
        (c, cross)
    }

    /// LMMSE weights `C_{k−1}^{−1} C_{k,k−1}` for band `k ≥ 1`.
    pub fn weights(&self, k: usize) -> Result<Vec<f64>> {
        if k == 0 || k >= self.bands() {
            return Err(Error::InvalidParameter(format!("band {k} outside 1..{}", self.bands())));
        }
        let (c, cross) = self.system(k);
        Ok(solve_spd(c, cross))
    }

    /// Model prediction error `σ_k² − C_{k,k−1}ᵀ C_{k−1}^{−1} C_{k,k−1}`.
    pub fn mse(&self, k: usize) -> Result<f64> {
        let w = self.weights(k)?;
        let (_, cross) = self.system(k);
        let explained: f64 = w.iter().zip(&cross).map(|(a, b)| a * b).sum();
        Ok((self.cov[k][k] - explained).max(0.0))
    }
}

/// Solves `C w = b` for a small symmetric positive semidefinite `C` via
/// Cholesky, adding a trace-scaled ridge when the factorization breaks down.
fn solve_spd(c: Vec<Vec<f64>>, b: Vec<f64>) -> Vec<f64> {
    let k = b.len();
    let trace: f64 = (0..k).map(|i| c[i][i]).sum();
    let mut ridge = 0.0;
    for _ in 0..8 {
        if let Some(w) = cholesky_solve(&c, &b, ridge) {
            return w;
        }
        ridge = if ridge == 0.0 { RIDGE * trace.max(f64::MIN_POSITIVE) } else { ridge * 1e3 };
    }
    vec![0.0; k]
}

fn cholesky_solve(c: &[Vec<f64>], b: &[f64], ridge: f64) -> Option<Vec<f64>> {
    let k = b.len();
    let mut l = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..=i {
            let mut s = c[i][j] + if i == j { ridge } else { 0.0 };
            for p in 0..j {
                s -= l[i][p] * l[j][p];
            }
            if i == j {
                if !(s > 1e-300) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut z = vec![0.0; k];
    for i in 0..k {
        let s: f64 = (0..i).map(|p| l[i][p] * z[p]).sum();
        z[i] = (b[i] - s) / l[i][i];
    }
    let mut w = vec![0.0; k];
    for i in (0..k).rev() {
        let s: f64 = (i + 1..k).map(|p| l[p][i] * w[p]).sum();
        w[i] = (z[i] - s) / l[i][i];
    }
    w.iter().all(|v| v.is_finite()).then_some(w)
}

/// Least-squares coefficient of `v` along `a`; zero for a vanishing `a`.
fn project(v: &[f64], a: &[f64]) -> f64 {
    let aa: f64 = a.iter().map(|x| x * x).sum();
    if aa <= f64::MIN_POSITIVE {
        return 0.0;
    }
    v.iter().zip(a).map(|(x, y)| x * y).sum::<f64>() / aa
}

/// Dither-removed quantized measurements `ỹ^q = q − w`.
pub fn dequantized_measurements(levels: &[i64], dither: &[f64]) -> Result<Vec<f64>> {
    check_len(levels.len(), dither.len())?;
    Ok(levels.iter().zip(dither).map(|(&q, &w)| q as f64 - w).collect())
}

/// Successive LMMSE prediction of the pre-dither measurements of band `k`.
///
/// `regressors[0]` is `ỹ_0` and `regressors[j]` for `j ≥ 1` is `ỹ^q_j`;
/// exactly `k` regressors are expected.
pub fn successive_predict(regressors: &[&[f64]], stats: &MeasurementStats, k: usize) -> Result<Vec<f64>> {
    if regressors.len() != k {
        return Err(Error::InvalidParameter(format!("band {k} needs {k} regressors, got {}", regressors.len())));
    }
    let m = regressors[0].len();
    for r in regressors {
        check_len(m, r.len())?;
    }
    if let Some(a) = &stats.direction {
        check_len(m, a.len())?;
    }
    let w = stats.weights(k)?;
    let mut out: Vec<f64> = (0..m).map(|i| stats.mean_at(k, i)).collect();
    for (j, r) in regressors.iter().enumerate() {
        for (i, (o, &v)) in out.iter_mut().zip(r.iter()).enumerate() {
            *o += w[j] * (v - stats.mean_at(j, i));
        }
    }
    Ok(out)
}

/// Inputs for the rate-planning error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonSource {
    /// Pixel-domain statistics of a band of `n` pixels.
    Linear { stats: BandStats, n: usize },
    /// Per-coefficient measurement MSE of a band measured with `m` of `n`
    /// coefficients at step `delta`.
    Successive { mse: f64, n: usize, m: usize, delta: f64 },
}

/// Pixel-domain `ε` for rate planning.
pub fn prediction_epsilon(source: &EpsilonSource) -> f64 {
    match *source {
        EpsilonSource::Linear { stats, n } => linear_epsilon(&stats, n),
        EpsilonSource::Successive { mse, n, m, delta } => {
            let eps_y = (m as f64 * mse.max(0.0)).sqrt();
            crate::coding_theory::epsilon_x_from_epsilon_y(eps_y, n, m, delta)
        }
    }
}

/// Largest finite magnitude of the 16-bit parameter format, in scale units.
const F16_MAX: f64 = 65504.0;

/// Per-blob power-of-two scale of the 16-bit parameter format.
///
/// The exponent is derived from reference-band statistics that the decoder
/// recomputes, so it costs no bits. First-order parameters (means) are divided
/// by `2^e` and second-order ones (variances, covariances) by `2^{2e}` before
/// rounding to IEEE half precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatScale {
    pub exponent: i32,
}

impl StatScale {
    pub fn from_reference(mean: f64, var: f64) -> Self {
        let magnitude = mean.abs().max(var.max(0.0).sqrt());
        let exponent = if magnitude > 0.0 && magnitude.is_finite() {
            magnitude.log2().floor().clamp(-60.0, 60.0) as i32
        } else {
            0
        };
        Self { exponent }
    }

    fn factor(&self, order: i32) -> f64 {
        (2.0f64).powi(self.exponent * order)
    }

    pub fn encode(&self, value: f64, order: i32) -> u16 {
        let scaled = (value / self.factor(order)).clamp(-F16_MAX, F16_MAX);
        let scaled = if scaled.is_nan() { 0.0 } else { scaled };
        f16::from_f64(scaled).to_bits()
    }

    pub fn decode(&self, word: u16, order: i32) -> f64 {
        let v = f16::from_bits(word).to_f64();
        if v.is_finite() {
            v * self.factor(order)
        } else {
            0.0
        }
    }

    /// Value after a 16-bit encode/decode round trip.
    pub fn round_trip(&self, value: f64, order: i32) -> f64 {
        self.decode(self.encode(value, order), order)
    }
}

/// Linear-mode side information for one band: `μ_i` and `σ_{0i}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearParams {
    pub mean: f64,
    pub cov_ref: f64,
}

impl LinearParams {
    pub const WORDS: usize = 2;

    pub fn from_stats(stats: &BandStats) -> Self {
        Self { mean: stats.mean, cov_ref: stats.cov_ref }
    }

    pub fn to_words(&self, scale: StatScale) -> Vec<u16> {
        vec![scale.encode(self.mean, 1), scale.encode(self.cov_ref, 2)]
    }

    pub fn from_words(words: &[u16], scale: StatScale) -> Result<Self> {
        check_len(Self::WORDS, words.len())?;
        Ok(Self { mean: scale.decode(words[0], 1), cov_ref: scale.decode(words[1], 2) })
    }

    /// Decoder-side statistics: reference moments recomputed from `x0`.
    pub fn with_reference(&self, x0: &[f64]) -> BandStats {
        let mean_ref = mean(x0);
        let var_ref = covariance(x0, x0).unwrap_or(0.0);
        BandStats { mean_ref, var_ref, mean: self.mean, var: f64::NAN, cov_ref: self.cov_ref }
    }
}

/// Successive-mode side information carried by band `band ≥ 1`:
/// `μ_band`, `σ²_band` (omitted for the last band) and `σ_{j,band}` for
/// `j < band`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuccessiveParams {
    pub band: usize,
    pub mean: f64,
    pub var: Option<f64>,
    pub cov_prev: Vec<f64>,
}

impl SuccessiveParams {
    pub fn words(band: usize, last: bool) -> usize {
        1 + usize::from(!last) + band
    }

    pub fn from_stats(stats: &MeasurementStats, band: usize, last: bool) -> Self {
        Self {
            band,
            mean: stats.means[band],
            var: (!last).then(|| stats.cov[band][band]),
            cov_prev: (0..band).map(|j| stats.cov[band][j]).collect(),
        }
    }

    pub fn to_words(&self, scale: StatScale) -> Vec<u16> {
        let mut w = vec![scale.encode(self.mean, 1)];
        if let Some(v) = self.var {
            w.push(scale.encode(v, 2));
        }
        w.extend(self.cov_prev.iter().map(|&c| scale.encode(c, 2)));
        w
    }

    pub fn from_words(words: &[u16], band: usize, last: bool, scale: StatScale) -> Result<Self> {
        check_len(Self::words(band, last), words.len())?;
        let mean = scale.decode(words[0], 1);
        let (var, rest) = if last { (None, &words[1..]) } else { (Some(scale.decode(words[1], 2)), &words[2..]) };
        Ok(Self { band, mean, var, cov_prev: rest.iter().map(|&w| scale.decode(w, 2)).collect() })
    }
}

/// Assembles decoder-side measurement statistics for bands `0..=k` from the
/// recomputed reference moments and the transmitted parameters of bands
/// `1..=k`. The variance of band `k` is only needed at the encoder; when it is
/// absent it is set to zero. `direction` must match the one the encoder used.
pub fn assemble_measurement_stats(
    ref_mean: f64,
    ref_var: f64,
    params: &[SuccessiveParams],
    direction: Option<&[f64]>,
) -> Result<MeasurementStats> {
    let k = params.len() + 1;
    let mut means = vec![ref_mean];
    let mut cov = vec![vec![0.0; k]; k];
    cov[0][0] = ref_var;
    for (idx, p) in params.iter().enumerate() {
        let band = idx + 1;
        if p.band != band || p.cov_prev.len() != band {
            return Err(Error::Format(format!("statistics for band {} out of order", p.band)));
        }
        means.push(p.mean);
        cov[band][band] = p.var.unwrap_or(0.0);
        for (j, &c) in p.cov_prev.iter().enumerate() {
            cov[band][j] = c;
            cov[j][band] = c;
        }
    }
    Ok(MeasurementStats { means, cov, direction: direction.map(<[f64]>::to_vec) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn naive_cov(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma: f64 = a.iter().sum::<f64>() / n;
        let mb: f64 = b.iter().sum::<f64>() / n;
        let mut s = 0.0;
        for i in 0..a.len() {
            s += (a[i] - ma) * (b[i] - mb);
        }
        s / n
    }

    fn correlated(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let x0: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..100.0)).collect();
        let xi = x0.iter().map(|&v| 0.7 * v + 12.0 + rng.random_range(-5.0..5.0)).collect();
        (x0, xi)
    }

    #[test]
    fn stats_match_two_pass_oracle() {
        let (x0, xi) = correlated(500, 1);
        let s = band_stats(&x0, &xi).unwrap();
        assert!((s.cov_ref - naive_cov(&x0, &xi)).abs() <= 1e-12 * naive_cov(&x0, &xi).abs());
        assert!((s.var - naive_cov(&xi, &xi)).abs() <= 1e-12 * s.var);
        let same = band_stats(&x0, &x0).unwrap();
        assert_eq!(same.cov_ref, same.var_ref);
        assert_eq!(band_stats(&x0, &vec![3.0; 500]).unwrap().var, 0.0);
        assert!(band_stats(&x0, &xi[..10]).is_err());
    }

    #[test]
    fn affine_band_is_predicted_exactly() {
        let (x0, _) = correlated(256, 2);
        let xi: Vec<f64> = x0.iter().map(|v| 2.5 * v - 7.0).collect();
        let s = band_stats(&x0, &xi).unwrap();
        let pred = lmmse_predict(&x0, &s);
        for (a, b) in pred.iter().zip(&xi) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(linear_epsilon(&s, 256) < 1e-5);
    }

    #[test]
    fn degenerate_predictors() {
        let x0 = vec![5.0; 10];
        let s = BandStats { mean_ref: 5.0, var_ref: 0.0, mean: 3.0, var: 1.0, cov_ref: 0.0 };
        assert_eq!(lmmse_predict(&x0, &s), vec![3.0; 10]);
        let s = BandStats { mean_ref: 0.0, var_ref: 2.0, mean: 3.0, var: 1.0, cov_ref: 0.0 };
        assert_eq!(lmmse_predict(&[1.0, -4.0], &s), vec![3.0, 3.0]);
    }

    #[test]
    fn closed_form_epsilon_matches_direct_norm() {
        let (x0, xi) = correlated(4096, 3);
        let s = band_stats(&x0, &xi).unwrap();
        let pred = lmmse_predict(&x0, &s);
        let direct: f64 = pred.iter().zip(&xi).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let closed = linear_epsilon(&s, 4096);
        assert!((closed * closed - direct * direct).abs() <= 1e-9 * direct * direct);
        assert_eq!(prediction_epsilon(&EpsilonSource::Linear { stats: s, n: 4096 }), closed);
        // residual orthogonal to the reference
        let r: f64 = xi.iter().zip(&pred).zip(&x0).map(|((a, b), c)| (a - b) * (c - s.mean_ref)).sum();
        assert!(r.abs() < 1e-6 * direct * 4096.0);
    }

    #[test]
    fn gain_perturbation_never_helps() {
        let (x0, xi) = correlated(1000, 4);
        let s = band_stats(&x0, &xi).unwrap();
        let err = |st: &BandStats| -> f64 {
            lmmse_predict(&x0, st).iter().zip(&xi).map(|(a, b)| (a - b) * (a - b)).sum()
        };
        let base = err(&s);
        for f in [0.99, 1.01] {
            let p = BandStats { cov_ref: s.cov_ref * f, ..s };
            assert!(err(&p) >= base);
        }
    }

    #[test]
    fn successive_single_regressor_is_scalar_lmmse() {
        let (y0, y1) = correlated(2000, 5);
        let stats = MeasurementStats::from_measurements(&[&y0, &y1]).unwrap();
        let pred = successive_predict(&[&y0], &stats, 1).unwrap();
        let bs = band_stats(&y0, &y1).unwrap();
        let scalar = lmmse_predict(&y0, &bs);
        for (a, b) in pred.iter().zip(&scalar) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(successive_predict(&[&y0, &y1], &stats, 1).is_err());
    }

    #[test]
    fn singular_system_is_regularized() {
        let (y0, _) = correlated(100, 6);
        let stats = MeasurementStats::from_measurements(&[&y0, &y0, &y0]).unwrap();
        let w = stats.weights(2).unwrap();
        assert!(w.iter().all(|v| v.is_finite()));
        let zero = MeasurementStats { means: vec![0.0; 3], cov: vec![vec![0.0; 3]; 3], direction: None };
        assert_eq!(zero.weights(2).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn stat_scale_round_trip() {
        let scale = StatScale::from_reference(812.0, 300.0);
        for &(v, order) in &[(812.0, 1), (-3.25, 1), (4.0e4, 2), (1e-3, 2), (0.0, 1)] {
            let back = scale.round_trip(v, order);
            assert!((back - v).abs() <= v.abs() * 1e-3 + 1e-4 * scale.factor(order), "{v} -> {back}");
        }
        // overflow clamps to the largest representable value
        let huge = scale.round_trip(1e30, 1);
        assert!(huge.is_finite() && huge > 0.0);
    }

    #[test]
    fn params_word_counts() {
        assert_eq!(3 * LinearParams::WORDS, 6);
        let total: usize = (1..=3).map(|b| SuccessiveParams::words(b, b == 3)).sum();
        assert_eq!(total, 11);
    }

    #[test]
    fn successive_params_round_trip() {
        let (y0, y1) = correlated(300, 7);
        let y2: Vec<f64> = y1.iter().map(|v| v * 0.5 + 1.0).collect();
        let stats = MeasurementStats::from_measurements(&[&y0, &y1, &y2]).unwrap();
        let scale = StatScale::from_reference(stats.means[0], stats.cov[0][0]);
        let p1 = SuccessiveParams::from_stats(&stats, 1, false);
        let p2 = SuccessiveParams::from_stats(&stats, 2, true);
        let b1 = SuccessiveParams::from_words(&p1.to_words(scale), 1, false, scale).unwrap();
        let b2 = SuccessiveParams::from_words(&p2.to_words(scale), 2, true, scale).unwrap();
        assert_eq!(b2.var, None);
        let rebuilt = assemble_measurement_stats(stats.means[0], stats.cov[0][0], &[b1, b2], None).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i == 2 && j == 2 {
                    continue;
                }
                let (a, b) = (rebuilt.cov[i][j], stats.cov[i][j]);
                assert!((a - b).abs() <= 1e-3 * b.abs() + 1e-3, "{i},{j}: {a} vs {b}");
            }
        }
    }
}
