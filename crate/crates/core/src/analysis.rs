//! Theory tables and Monte Carlo checks of the bit-flip model.
//!
//! The experiments run the real measurement, quantization and bitplane
//! prediction path on random sources whose side information sits at a
//! controlled distance, then compare plane flip rates with the closed forms.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::Serialize;

use crate::bitplane_codec::{predict_plane, DecoderState};
use crate::coding_theory::{bit_error_likelihood, bitflip_probability, plan_bitplanes, ErrorModel, PlaneMode, RatePolicy, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::measurement::{derive_seed, measure, quantize, DitherVector, MeasurementOperator, OperatorKind, QuantizerConfig};
use crate::par::Exec;

/// `count` points spaced evenly in log scale over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo) || count == 0 {
        return Err(Error::InvalidParameter(format!("bad log grid [{lo}, {hi}] x {count}")));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect())
}

/// `p_k` for `k = 1..=k_max` at each normalized scale; one row per scale.
pub fn pk_table(k_max: u32, scales: &[f64]) -> Vec<Vec<f64>> {
    scales
        .iter()
        .map(|&s| {
            let model = ErrorModel::normalized(s);
            (1..=k_max).map(|k| bitflip_probability(k, &model, DEFAULT_TOL)).collect()
        })
        .collect()
}

/// `L_k(c)` on `points` evenly spaced distances in `[0, 2^(k−1)]`; one row per
/// distance with one column per scale.
pub fn lk_table(k: u32, scales: &[f64], points: usize) -> Result<Vec<(f64, Vec<f64>)>> {
    if k == 0 || points < 2 {
        return Err(Error::InvalidParameter("need k >= 1 and at least two points".into()));
    }
    let half = (2.0f64).powi(k as i32 - 1);
    (0..points)
        .map(|i| {
            let c = half * i as f64 / (points - 1) as f64;
            let row = scales
                .iter()
                .map(|&s| bit_error_likelihood(k, c, &ErrorModel::normalized(s)))
                .collect::<Result<Vec<_>>>()?;
            Ok((c, row))
        })
        .collect()
}

/// Planes that are not skipped, for each step in `deltas` and each skip
/// cutoff; one row per step.
pub fn planes_to_code(epsilon: f64, sigma: f64, bits: usize, deltas: &[f64], cutoffs: &[f64]) -> Result<Vec<Vec<usize>>> {
    deltas
        .iter()
        .map(|&delta| {
            let model = ErrorModel::new(epsilon, sigma, delta)?;
            cutoffs
                .iter()
                .map(|&cutoff| {
                    let policy = RatePolicy { cutoff_skip: cutoff, ..RatePolicy::default() };
                    policy.validate()?;
                    Ok(bits - plan_bitplanes(&model, bits, &policy).count(PlaneMode::Skip))
                })
                .collect()
        })
        .collect()
}

/// Setup shared by the Monte Carlo experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct FlipExperiment {
    pub operator: OperatorKind,
    pub n: usize,
    pub m: usize,
    /// Source blocks per scale.
    pub trials: usize,
    pub seed: u64,
}

impl FlipExperiment {
    pub fn sigma(&self) -> f64 {
        1.0 / (self.n as f64).sqrt()
    }
}

/// Predicted planes of one block against the truth.
struct BlockSample {
    /// `flips[k−1][i]` is whether plane `k` of measurement `i` was mispredicted.
    flips: Vec<Vec<bool>>,
    /// Normalized distances reported by plane prediction, same layout.
    distances: Vec<Vec<f64>>,
}

/// One random block: source `x`, side information at distance `ε`, and the
/// decoder's plane predictions given the true lower planes.
fn sample_block(exp: &FlipExperiment, scale: f64, k_max: u32, stream: u64) -> Result<BlockSample> {
    let seed = derive_seed(exp.seed, stream);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let sigma = exp.sigma();
    let op = MeasurementOperator::build(exp.operator, exp.n, exp.m, sigma, derive_seed(seed, 1))?;
    let dither = DitherVector::generate(exp.m, derive_seed(seed, 2));
    let delta = 1.0;
    let eps = scale * delta / sigma;
    let source = Uniform::new(-50.0, 50.0).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let x: Vec<f64> = (0..exp.n).map(|_| source.sample(&mut rng)).collect();
    let dir: Vec<f64> = (0..exp.n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let x_hat: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + eps * d / norm).collect();
    let bits = 24;
    let cfg = QuantizerConfig::new(bits, delta)?;
    let q = quantize(&measure(&op, &x, &dither, delta)?, &cfg)?;
    let codes: Vec<u64> = q.iter().map(|&l| cfg.code_of(l)).collect::<Result<_>>()?;
    let mut state = DecoderState::new(measure(&op, &x_hat, &dither, delta)?, cfg);
    let mut flips = Vec::with_capacity(k_max as usize);
    let mut distances = Vec::with_capacity(k_max as usize);
    for k in 1..=k_max {
        let pred = predict_plane(&state);
        let truth: Vec<u8> = codes.iter().map(|&c| ((c >> (k - 1)) & 1) as u8).collect();
        flips.push(pred.bits.iter().zip(&truth).map(|(a, b)| a != b).collect());
        distances.push(pred.distances);
        state.push_plane(&truth)?;
    }
    Ok(BlockSample { flips, distances })
}

/// Theoretical and empirical flip rate of one plane at one scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlipCell {
    pub k: u32,
    pub scale: f64,
    pub theory: f64,
    pub empirical: f64,
    pub bits: u64,
}

/// Empirical plane flip rates for planes `1..=k_max` at every scale.
pub fn flip_rates(exp: &FlipExperiment, k_max: u32, scales: &[f64], exec: Exec) -> Result<Vec<FlipCell>> {
    let mut out = Vec::new();
    for (si, &s) in scales.iter().enumerate() {
        let samples = exec.map(0..exp.trials, |t| -> Result<Vec<u64>> {
            let b = sample_block(exp, s, k_max, (si as u64) << 32 | t as u64)?;
            Ok(b.flips.iter().map(|f| f.iter().filter(|&&v| v).count() as u64).collect::<Vec<u64>>())
        });
        let mut counts = vec![0u64; k_max as usize];
        for sample in samples {
            for (c, v) in counts.iter_mut().zip(sample?) {
                *c += v;
            }
        }
        let model = ErrorModel::normalized(s);
        let bits = (exp.trials * exp.m) as u64;
        for k in 1..=k_max {
            out.push(FlipCell {
                k,
                scale: s,
                theory: bitflip_probability(k, &model, DEFAULT_TOL),
                empirical: counts[k as usize - 1] as f64 / bits.max(1) as f64,
                bits,
            });
        }
    }
    Ok(out)
}

/// Conditional flip frequency of plane `k` for distances in `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LikelihoodBucket {
    pub lo: f64,
    pub hi: f64,
    pub samples: u64,
    pub empirical: f64,
    /// Mean of `L_k(c)` over the samples that fell in the bucket.
    pub theory: f64,
}

/// Buckets plane-`k` predictions by their normalized distance `c` and compares
/// the flip frequency in each bucket with the likelihood.
pub fn likelihood_buckets(exp: &FlipExperiment, k: u32, scale: f64, buckets: usize, exec: Exec) -> Result<Vec<LikelihoodBucket>> {
    if k == 0 || buckets == 0 {
        return Err(Error::InvalidParameter("need k >= 1 and at least one bucket".into()));
    }
    let half = (2.0f64).powi(k as i32 - 1);
    let model = ErrorModel::normalized(scale);
    let width = half / buckets as f64;
    let partials = exec.map(0..exp.trials, |t| -> Result<Vec<(u64, u64, f64)>> {
        let b = sample_block(exp, scale, k, 1 << 40 | t as u64)?;
        let mut acc = vec![(0u64, 0u64, 0.0f64); buckets];
        for (&flip, &c) in b.flips[k as usize - 1].iter().zip(&b.distances[k as usize - 1]) {
            let idx = ((c / width) as usize).min(buckets - 1);
            acc[idx].0 += 1;
            acc[idx].1 += u64::from(flip);
            acc[idx].2 += bit_error_likelihood(k, c, &model)?;
        }
        Ok(acc)
    });
    let mut total = vec![(0u64, 0u64, 0.0f64); buckets];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p?) {
            t.0 += v.0;
            t.1 += v.1;
            t.2 += v.2;
        }
    }
    Ok(total
        .iter()
        .enumerate()
        .map(|(i, &(n, f, l))| LikelihoodBucket {
            lo: i as f64 * width,
            hi: (i + 1) as f64 * width,
            samples: n,
            empirical: if n > 0 { f as f64 / n as f64 } else { f64::NAN },
            theory: if n > 0 { l / n as f64 } else { f64::NAN },
        })
        .collect())
}
