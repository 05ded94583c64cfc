use dqrp::measurement::{quantize, DitherVector, QuantizerConfig};
use dqrp::prediction::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

fn gauss(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn correlated_bands(rng: &mut impl Rng, len: usize) -> (Vec<f64>, Vec<f64>) {
    let x0: Vec<f64> = (0..len).map(|_| 100.0 + 20.0 * gauss(rng)).collect();
    let x1: Vec<f64> = x0.iter().map(|v| 0.7 * v + 15.0 + 3.0 * gauss(rng)).collect();
    (x0, x1)
}

#[test]
fn lmmse_equals_least_squares_fit() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let (x0, x1) = correlated_bands(&mut rng, 500);
    let n = x0.len() as f64;
    // normal equations for x1 ≈ a + b x0
    let (s0, s00) = (x0.iter().sum::<f64>(), x0.iter().map(|v| v * v).sum::<f64>());
    let (s1, s01) = (x1.iter().sum::<f64>(), x0.iter().zip(&x1).map(|(a, b)| a * b).sum::<f64>());
    let coef = solve(vec![vec![n, s0], vec![s0, s00]], vec![s1, s01]);
    let stats = band_stats(&x0, &x1).unwrap();
    let pred = lmmse_predict(&x0, &stats);
    for (p, v) in pred.iter().zip(&x0) {
        assert!((p - (coef[0] + coef[1] * v)).abs() < 1e-8);
    }
    let residual: f64 = pred.iter().zip(&x1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    assert!((linear_epsilon(&stats, x0.len()) - residual).abs() < 1e-6 * residual);
}

#[test]
fn constant_reference_predicts_the_mean() {
    let stats = band_stats(&[5.0; 4], &[1.0, 2.0, 3.0, 6.0]).unwrap();
    assert_eq!(lmmse_predict(&[5.0; 4], &stats), vec![3.0; 4]);
}

#[test]
fn measurement_weights_match_normal_equations() {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let m = 2000;
    let y0: Vec<f64> = (0..m).map(|_| 10.0 * gauss(&mut rng)).collect();
    let y1: Vec<f64> = y0.iter().map(|v| 0.5 * v + gauss(&mut rng)).collect();
    let y2: Vec<f64> = y0.iter().zip(&y1).map(|(a, b)| 0.2 * a + 0.6 * b + gauss(&mut rng)).collect();
    let stats = MeasurementStats::from_measurements(&[&y0, &y1, &y2]).unwrap();
    let c = &stats.cov;
    let w = solve(
        vec![vec![c[0][0], c[0][1]], vec![c[1][0], c[1][1] + DITHER_VARIANCE]],
        vec![c[2][0], c[2][1]],
    );
    let got = stats.weights(2).unwrap();
    assert!((got[0] - w[0]).abs() < 1e-10 && (got[1] - w[1]).abs() < 1e-10);
    assert!(stats.weights(0).is_err() && stats.weights(3).is_err());
}

#[test]
fn successive_mse_matches_quantized_regression() {
    // the model MSE describes prediction from dequantized regressors
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let m = 40_000;
    let y0: Vec<f64> = (0..m).map(|_| 30.0 + 8.0 * gauss(&mut rng)).collect();
    let y1: Vec<f64> = y0.iter().map(|v| 0.9 * v + 2.0 + 1.5 * gauss(&mut rng)).collect();
    let y2: Vec<f64> = y1.iter().map(|v| 1.1 * v - 4.0 + 0.8 * gauss(&mut rng)).collect();
    let stats = MeasurementStats::from_measurements(&[&y0, &y1, &y2]).unwrap();
    let cfg = QuantizerConfig::new(12, 1.0).unwrap();
    let w = DitherVector::generate(m, 4);
    let dithered: Vec<f64> = y1.iter().zip(w.values()).map(|(a, b)| a + b).collect();
    let q1 = dequantized_measurements(&quantize(&dithered, &cfg).unwrap(), w.values()).unwrap();
    let pred = successive_predict(&[&y0, &q1], &stats, 2).unwrap();
    let empirical = pred.iter().zip(&y2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / m as f64;
    let model = stats.mse(2).unwrap();
    assert!((empirical / model - 1.0).abs() < 0.05, "{empirical} vs {model}");
}

#[test]
fn mean_direction_is_removed_before_covariances() {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let m = 256;
    let a: Vec<f64> = (0..m).map(|i| if i == 0 { 16.0 } else { 0.0 }).collect();
    let r0: Vec<f64> = (0..m).map(|i| if i == 0 { 0.0 } else { gauss(&mut rng) }).collect();
    let y0: Vec<f64> = a.iter().zip(&r0).map(|(x, r)| 7.0 * x + r).collect();
    let y1: Vec<f64> = a.iter().zip(&r0).map(|(x, r)| 3.0 * x + 2.0 * r).collect();
    let stats = MeasurementStats::from_measurements_along(&[&y0, &y1], &a).unwrap();
    assert!((stats.means[0] - 7.0).abs() < 1e-12 && (stats.means[1] - 3.0).abs() < 1e-12);
    let v0 = r0.iter().map(|v| v * v).sum::<f64>() / m as f64;
    assert!((stats.cov[0][0] - v0).abs() < 1e-12);
    assert!((stats.cov[1][0] - 2.0 * v0).abs() < 1e-12);
    let pred = successive_predict(&[&y0], &stats, 1).unwrap();
    let w = stats.weights(1).unwrap()[0];
    assert!((pred[0] - (3.0 * 16.0 + w * (y0[0] - 7.0 * 16.0))).abs() < 1e-9);
}

#[test]
fn side_information_word_counts() {
    assert_eq!(LinearParams::WORDS * 3, 6);
    let total: usize = (1..=3).map(|b| SuccessiveParams::words(b, b == 3)).sum();
    assert_eq!(total, 11);
}

#[test]
fn assembled_statistics_check_band_order() {
    let p1 = SuccessiveParams { band: 1, mean: 1.0, var: Some(2.0), cov_prev: vec![0.5] };
    let p2 = SuccessiveParams { band: 2, mean: 3.0, var: None, cov_prev: vec![0.1, 0.2] };
    let s = assemble_measurement_stats(4.0, 9.0, &[p1.clone(), p2.clone()], None).unwrap();
    assert_eq!(s.means, vec![4.0, 1.0, 3.0]);
    assert_eq!(s.cov[2], vec![0.1, 0.2, 0.0]);
    assert_eq!(s.cov[0][1], 0.5);
    assert!(assemble_measurement_stats(4.0, 9.0, &[p2, p1], None).is_err());
}

proptest! {
    #[test]
    fn parameter_words_keep_half_precision(mean in -1e4f64..1e4, spread in 0.1f64..1e3, v in -1.0f64..1.0) {
        let scale = StatScale::from_reference(mean, spread * spread);
        let first = mean * v;
        let second = spread * spread * v;
        let tol = 2f64.powi(-10);
        let mag1 = mean.abs().max(spread);
        prop_assert!((scale.round_trip(first, 1) - first).abs() <= tol * mag1.max(first.abs()));
        prop_assert!((scale.round_trip(second, 2) - second).abs() <= tol * mag1 * mag1);
        let p = LinearParams { mean: first, cov_ref: second };
        let back = LinearParams::from_words(&p.to_words(scale), scale).unwrap();
        prop_assert_eq!(back.mean, scale.round_trip(first, 1));
        prop_assert_eq!(back.cov_ref, scale.round_trip(second, 2));
    }

    #[test]
    fn more_regressors_never_raise_the_model_error(seed in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let m = 300;
        let mix: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y0: Vec<f64> = (0..m).map(|_| 5.0 * gauss(&mut rng)).collect();
        let y1: Vec<f64> = y0.iter().map(|v| mix[0] * v + gauss(&mut rng)).collect();
        let y2: Vec<f64> = y0.iter().zip(&y1).map(|(a, b)| mix[1] * a + mix[2] * b + gauss(&mut rng)).collect();
        let full = MeasurementStats::from_measurements(&[&y0, &y1, &y2]).unwrap();
        let reduced = MeasurementStats::from_measurements(&[&y0, &y2]).unwrap();
        prop_assert!(full.mse(2).unwrap() <= reduced.mse(1).unwrap() * (1.0 + 1e-12) + 1e-12);
    }
}
