//! Block reconstruction from recovered quantized measurements.
//!
//! Solves `min_x ‖q̃ − Ax/Δ − w‖² + λ R_WTV(x)` with monotone FISTA. The
//! weighted-TV proximal step is computed by a fixed number of fast gradient
//! projection iterations on the dual. Blocks are row-major `height × width`
//! arrays; the difference along rows (`X_{s,t} − X_{s−1,t}`) carries the `Wx`
//! weight and the difference along columns carries `Wy`. Differences across
//! the first row or column are zero (replicate padding).

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::measurement::{DitherVector, MeasurementOperator};

pub const DEFAULT_TAU: f64 = 0.3;
pub const DEFAULT_LOW_WEIGHT: f64 = 0.2;
pub const DEFAULT_LAMBDA: f64 = 0.1;

/// Per-pixel weights of the weighted TV regularizer.
#[derive(Debug, Clone, PartialEq)]
pub struct WtvWeights {
    pub width: usize,
    pub height: usize,
    pub wx: Vec<f64>,
    pub wy: Vec<f64>,
}

impl WtvWeights {
    /// All-ones weights: plain isotropic TV.
    pub fn uniform(width: usize, height: usize) -> Self {
        Self { width, height, wx: vec![1.0; width * height], wy: vec![1.0; width * height] }
    }

    /// Weights from the reference block: `low` where the gradient magnitude of
    /// the block rescaled to `[0, 1]` exceeds `tau`, 1 elsewhere.
    pub fn from_reference(x0: &[f64], width: usize, height: usize, tau: f64, low: f64) -> Result<Self> {
        check_len(width * height, x0.len())?;
        let (lo, hi) = x0.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let range = hi - lo;
        let normalized: Vec<f64> =
            if range > 0.0 { x0.iter().map(|v| (v - lo) / range).collect() } else { vec![0.0; x0.len()] };
        let phi = reference_gradient(&normalized, width, height)?;
        let w: Vec<f64> = phi.iter().map(|&g| if g > tau { low } else { 1.0 }).collect();
        Ok(Self { width, height, wx: w.clone(), wy: w })
    }

    fn max_weight(&self) -> f64 {
        self.wx.iter().chain(&self.wy).fold(0.0f64, |a, &b| a.max(b))
    }
}

/// `Φ_{s,t} = sqrt((X_{s,t} − X_{s−1,t})² + (X_{s,t} − X_{s,t−1})²)`.
pub fn reference_gradient(x: &[f64], width: usize, height: usize) -> Result<Vec<f64>> {
    check_len(width * height, x.len())?;
    let mut out = vec![0.0; x.len()];
    for s in 0..height {
        for t in 0..width {
            let i = s * width + t;
            let dv = if s > 0 { x[i] - x[i - width] } else { 0.0 };
            let dh = if t > 0 { x[i] - x[i - 1] } else { 0.0 };
            out[i] = (dv * dv + dh * dh).sqrt();
        }
    }
    Ok(out)
}

/// Weighted total variation of a block.
pub fn wtv_value(x: &[f64], weights: &WtvWeights) -> Result<f64> {
    let (w, h) = (weights.width, weights.height);
    check_len(w * h, x.len())?;
    let mut total = 0.0;
    for s in 0..h {
        for t in 0..w {
            let i = s * w + t;
            let dv = if s > 0 { x[i] - x[i - w] } else { 0.0 };
            let dh = if t > 0 { x[i] - x[i - 1] } else { 0.0 };
            total += (weights.wx[i] * dv * dv + weights.wy[i] * dh * dh).sqrt();
        }
    }
    Ok(total)
}

/// Solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconConfig {
    pub lambda: f64,
    pub max_iters: usize,
    /// Stop when the relative objective change drops below this.
    pub tol: f64,
    /// Dual iterations per proximal step.
    pub inner_iters: usize,
    /// Step size; `None` uses `Δ² / (2‖A‖²)`.
    pub step: Option<f64>,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self { lambda: DEFAULT_LAMBDA, max_iters: 500, tol: 1e-6, inner_iters: 20, step: None }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.max_iters == 0 || !(self.tol >= 0.0) {
            return Err(Error::InvalidParameter("max_iters must be positive and tol non-negative".into()));
        }
        if let Some(step) = self.step {
            if !(step > 0.0 && step.is_finite()) {
                return Err(Error::InvalidParameter(format!("step must be positive, got {step}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconResult {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub restarts: usize,
    /// Objective of every accepted iterate, starting with the initial point.
    pub history: Vec<f64>,
}

/// Smooth part `‖q̃ − Ax/Δ − w‖²` of the objective and its gradient.
pub struct DataTerm<'a> {
    op: &'a MeasurementOperator,
    target: Vec<f64>,
    delta: f64,
}

impl<'a> DataTerm<'a> {
    pub fn new(q_tilde: &[i64], op: &'a MeasurementOperator, dither: &DitherVector, delta: f64) -> Result<Self> {
        check_len(op.m(), q_tilde.len())?;
        check_len(op.m(), dither.len())?;
        let target = q_tilde.iter().zip(dither.values()).map(|(&q, &w)| q as f64 - w).collect();
        Ok(Self { op, target, delta })
    }

    fn residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        let ax = self.op.apply(x)?;
        Ok(self.target.iter().zip(&ax).map(|(t, a)| t - a / self.delta).collect())
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.residual(x)?.iter().map(|r| r * r).sum())
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let r = self.residual(x)?;
        let g = self.op.apply_adjoint(&r)?;
        Ok(g.into_iter().map(|v| -2.0 * v / self.delta).collect())
    }

    /// Lipschitz constant of the gradient, `2‖A‖²/Δ²`.
    pub fn lipschitz(&self) -> f64 {
        let norm = self.op.spectral_norm();
        2.0 * norm * norm / (self.delta * self.delta)
    }
}

/// Weighted-TV proximal operator `argmin_x ½‖x − v‖² + γ R_WTV(x)`, solved
/// approximately by fast gradient projection on the dual.
struct WtvProx<'a> {
    weights: &'a WtvWeights,
    sqrt_wx: Vec<f64>,
    sqrt_wy: Vec<f64>,
    iters: usize,
}

impl<'a> WtvProx<'a> {
    fn new(weights: &'a WtvWeights, iters: usize) -> Self {
        Self {
            weights,
            sqrt_wx: weights.wx.iter().map(|w| w.max(0.0).sqrt()).collect(),
            sqrt_wy: weights.wy.iter().map(|w| w.max(0.0).sqrt()).collect(),
            iters,
        }
    }

    /// Weighted forward differences `D_W x`.
    fn grad(&self, x: &[f64], px: &mut [f64], py: &mut [f64]) {
        let (w, h) = (self.weights.width, self.weights.height);
        for s in 0..h {
            for t in 0..w {
                let i = s * w + t;
                px[i] = if s > 0 { self.sqrt_wx[i] * (x[i] - x[i - w]) } else { 0.0 };
                py[i] = if t > 0 { self.sqrt_wy[i] * (x[i] - x[i - 1]) } else { 0.0 };
            }
        }
    }

    /// Adjoint `D_Wᵀ p`.
    fn grad_adjoint(&self, px: &[f64], py: &[f64], out: &mut [f64]) {
        let (w, h) = (self.weights.width, self.weights.height);
        out.iter_mut().for_each(|v| *v = 0.0);
        for s in 0..h {
            for t in 0..w {
                let i = s * w + t;
                if s > 0 {
                    let a = self.sqrt_wx[i] * px[i];
                    out[i] += a;
                    out[i - w] -= a;
                }
                if t > 0 {
                    let b = self.sqrt_wy[i] * py[i];
                    out[i] += b;
                    out[i - 1] -= b;
                }
            }
        }
    }

    fn apply(&self, v: &[f64], gamma: f64) -> Vec<f64> {
        let n = v.len();
        if gamma <= 0.0 {
            return v.to_vec();
        }
        let lip = 8.0 * self.weights.max_weight().max(f64::MIN_POSITIVE);
        let (mut px, mut py) = (vec![0.0; n], vec![0.0; n]);
        let (mut rx, mut ry) = (vec![0.0; n], vec![0.0; n]);
        let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
        let mut x = vec![0.0; n];
        let mut t = 1.0f64;
        for _ in 0..self.iters {
            // x = v − γ D_Wᵀ r
            self.grad_adjoint(&rx, &ry, &mut x);
            for (xi, vi) in x.iter_mut().zip(v) {
                *xi = vi - gamma * *xi;
            }
            self.grad(&x, &mut gx, &mut gy);
            let scale = 1.0 / (lip * gamma);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let momentum = (t - 1.0) / t_next;
            for i in 0..n {
                let (a, b) = (rx[i] + scale * gx[i], ry[i] + scale * gy[i]);
                let norm = (a * a + b * b).sqrt().max(1.0);
                let (na, nb) = (a / norm, b / norm);
                rx[i] = na + momentum * (na - px[i]);
                ry[i] = nb + momentum * (nb - py[i]);
                px[i] = na;
                py[i] = nb;
            }
            t = t_next;
        }
        self.grad_adjoint(&px, &py, &mut x);
        v.iter().zip(&x).map(|(vi, di)| vi - gamma * di).collect()
    }
}

/// Reconstructs a block from recovered measurements, starting from `init`
/// (e.g. the side-information prediction) or from zero.
pub fn reconstruct(
    q_tilde: &[i64],
    op: &MeasurementOperator,
    dither: &DitherVector,
    delta: f64,
    weights: &WtvWeights,
    cfg: &ReconConfig,
    init: Option<&[f64]>,
) -> Result<ReconResult> {
    cfg.validate()?;
    check_len(op.n(), weights.width * weights.height)?;
    let data = DataTerm::new(q_tilde, op, dither, delta)?;
    let start = match init {
        Some(x) => {
            check_len(op.n(), x.len())?;
            x.to_vec()
        }
        None => vec![0.0; op.n()],
    };
    let prox = WtvProx::new(weights, cfg.inner_iters);
    let mut step = cfg.step.unwrap_or(1.0 / data.lipschitz());
    for restart in 0..=3 {
        match mfista(&data, &prox, weights, cfg, &start, step)? {
            Some(mut result) => {
                result.restarts = restart;
                return Ok(result);
            }
            None => step *= 0.5,
        }
    }
    Err(Error::Diverged { restarts: 3 })
}

fn mfista(
    data: &DataTerm<'_>,
    prox: &WtvProx<'_>,
    weights: &WtvWeights,
    cfg: &ReconConfig,
    start: &[f64],
    step: f64,
) -> Result<Option<ReconResult>> {
    let objective = |x: &[f64]| -> Result<f64> { Ok(data.value(x)? + cfg.lambda * wtv_value(x, weights)?) };
    let mut x = start.to_vec();
    let mut fx = objective(&x)?;
    if !fx.is_finite() {
        return Ok(None);
    }
    let mut history = vec![fx];
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        iterations += 1;
        let g = data.gradient(&y)?;
        let v: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - step * b).collect();
        let z = prox.apply(&v, step * cfg.lambda);
        let fz = objective(&z)?;
        if !fz.is_finite() {
            return Ok(None);
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let change = (fx - fz).abs() / fx.abs().max(f64::MIN_POSITIVE);
        let x_prev = x;
        if fz <= fx {
            x = z.clone();
            fx = fz;
            history.push(fz);
        } else {
            x = x_prev.clone();
        }
        y = (0..x.len())
            .map(|i| x[i] + (t / t_next) * (z[i] - x[i]) + ((t - 1.0) / t_next) * (x[i] - x_prev[i]))
            .collect();
        t = t_next;
        if change < cfg.tol {
            break;
        }
    }
    Ok(Some(ReconResult { x, objective: fx, iterations, restarts: 0, history }))
}

/// `10 log10(max(x)² / MSE)`; identical inputs give `+∞`.
pub fn psnr(x: &[f64], x_tilde: &[f64]) -> Result<f64> {
    check_len(x.len(), x_tilde.len())?;
    if x.is_empty() {
        return Err(Error::InvalidParameter("empty signal".into()));
    }
    let peak = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if peak == 0.0 {
        return Err(Error::InvalidParameter("peak value is zero".into()));
    }
    let mse = x.iter().zip(x_tilde).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}
