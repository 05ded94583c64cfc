//! Random projections, dithered scalar quantization and bitplane splitting.
//!
//! The encoder computes `y = (1/Δ) A x + w`, rounds every entry with
//! `q = floor(y + 1/2)` and stores `q + offset` in offset binary so that each
//! bitplane is uniformly distributed. Operators and dither are regenerated
//! from 64-bit seeds; both sides must use the same [`PRNG_VERSION`].

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{check_len, Error, Result};

/// Identifies the seed-expansion scheme (ChaCha20 stream, Fisher–Yates
/// permutation, Floyd row sampling). Written into every block header.
pub const PRNG_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorKind {
    /// Permute, Walsh–Hadamard transform, subsample rows.
    Srht,
    /// Dense i.i.d. Gaussian matrix.
    Gaussian,
}

impl OperatorKind {
    pub fn code(self) -> u8 {
        match self {
            OperatorKind::Srht => 0,
            OperatorKind::Gaussian => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(OperatorKind::Srht),
            1 => Ok(OperatorKind::Gaussian),
            other => Err(Error::Format(format!("unknown operator kind {other}"))),
        }
    }
}

/// Measurement operator `A` of shape `m × n`.
///
/// The SRHT variant is scaled by `1/√n`, so its entries are `±1/√n` and its
/// effective per-entry deviation is `σ = 1/√n`. Retaining all rows gives an
/// orthonormal matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementOperator {
    kind: OperatorKind,
    n: usize,
    m: usize,
    seed: u64,
    sigma: f64,
    permutation: Vec<usize>,
    row_subset: Vec<usize>,
    dense: Vec<f64>,
}

impl MeasurementOperator {
    /// Builds an operator. `sigma` is only used by the Gaussian kind; the SRHT
    /// always reports `1/√n`.
    pub fn build(kind: OperatorKind, n: usize, m: usize, sigma: f64, seed: u64) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidParameter("operator dimensions must be positive".into()));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        match kind {
            OperatorKind::Srht => {
                if !n.is_power_of_two() {
                    return Err(Error::InvalidParameter(format!(
                        "SRHT needs a power-of-two source length, got {n}"
                    )));
                }
                if m > n {
                    return Err(Error::InvalidParameter(format!(
                        "SRHT cannot take {m} measurements of a length-{n} source"
                    )));
                }
                let mut permutation: Vec<usize> = (0..n).collect();
                permutation.shuffle(&mut rng);
                let mut row_subset = index::sample(&mut rng, n, m).into_vec();
                row_subset.sort_unstable();
                Ok(Self {
                    kind,
                    n,
                    m,
                    seed,
                    sigma: 1.0 / (n as f64).sqrt(),
                    permutation,
                    row_subset,
                    dense: Vec::new(),
                })
            }
            OperatorKind::Gaussian => {
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
                }
                let normal = Normal::new(0.0, sigma).expect("finite positive sigma");
                let dense = (0..m * n).map(|_| normal.sample(&mut rng)).collect();
                Ok(Self {
                    kind,
                    n,
                    m,
                    seed,
                    sigma,
                    permutation: Vec::new(),
                    row_subset: Vec::new(),
                    dense,
                })
            }
        }
    }

    pub fn srht(n: usize, m: usize, seed: u64) -> Result<Self> {
        Self::build(OperatorKind::Srht, n, m, 1.0, seed)
    }

    pub fn gaussian(n: usize, m: usize, sigma: f64, seed: u64) -> Result<Self> {
        Self::build(OperatorKind::Gaussian, n, m, sigma, seed)
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Per-entry standard deviation used by the flip-probability formulas.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn row_subset(&self) -> &[usize] {
        &self.row_subset
    }

    /// Row-major `m × n` entries (Gaussian kind only; empty for SRHT).
    pub fn dense_matrix(&self) -> &[f64] {
        &self.dense
    }

    /// Computes `A x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n, x.len())?;
        Ok(match self.kind {
            OperatorKind::Srht => {
                let mut z: Vec<f64> = self.permutation.iter().map(|&p| x[p]).collect();
                fwht(&mut z);
                let scale = 1.0 / (self.n as f64).sqrt();
                self.row_subset.iter().map(|&r| z[r] * scale).collect()
            }
            OperatorKind::Gaussian => self
                .dense
                .chunks_exact(self.n)
                .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
                .collect(),
        })
    }

    /// Computes `Aᵀ y`.
    pub fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(self.m, y.len())?;
        Ok(match self.kind {
            OperatorKind::Srht => {
                let mut z = vec![0.0; self.n];
                for (&r, &v) in self.row_subset.iter().zip(y) {
                    z[r] = v;
                }
                fwht(&mut z);
                let scale = 1.0 / (self.n as f64).sqrt();
                let mut x = vec![0.0; self.n];
                for (i, &p) in self.permutation.iter().enumerate() {
                    x[p] = z[i] * scale;
                }
                x
            }
            OperatorKind::Gaussian => {
                let mut x = vec![0.0; self.n];
                for (row, &v) in self.dense.chunks_exact(self.n).zip(y) {
                    for (xi, a) in x.iter_mut().zip(row) {
                        *xi += a * v;
                    }
                }
                x
            }
        })
    }

    /// Largest singular value. Exactly 1 for the SRHT; estimated by power
    /// iteration for the Gaussian kind.
    pub fn spectral_norm(&self) -> f64 {
        match self.kind {
            OperatorKind::Srht => 1.0,
            OperatorKind::Gaussian => {
                let mut v: Vec<f64> = (0..self.n).map(|i| 1.0 + (i % 7) as f64 * 0.1).collect();
                let mut norm = 0.0;
                for _ in 0..200 {
                    let len = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                    v.iter_mut().for_each(|a| *a /= len);
                    let av = self.apply(&v).expect("length n");
                    v = self.apply_adjoint(&av).expect("length m");
                    let next = v.iter().map(|a| a * a).sum::<f64>().sqrt().sqrt();
                    if (next - norm).abs() <= 1e-12 * next {
                        norm = next;
                        break;
                    }
                    norm = next;
                }
                norm
            }
        }
    }
}

/// In-place unnormalized fast Walsh–Hadamard transform (natural order).
pub fn fwht(data: &mut [f64]) {
    let n = data.len();
    debug_assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for block in data.chunks_exact_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (u, v) = (*a, *b);
                *a = u + v;
                *b = u - v;
            }
        }
        h *= 2;
    }
}

/// Dither `w` with i.i.d. entries uniform on `[-1, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DitherVector {
    values: Vec<f64>,
    seed: u64,
}

impl DitherVector {
    pub fn generate(m: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let values = (0..m).map(|_| rng.random::<f64>() - 1.0).collect();
        Self { values, seed }
    }

    /// A dither with explicit values (tests and degenerate cases).
    pub fn from_values(values: Vec<f64>) -> Self {
        Self { values, seed: 0 }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Independent seed for sub-stream `stream` of `base` (SplitMix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Computes `y = (1/Δ) A x + w`.
pub fn measure(op: &MeasurementOperator, x: &[f64], dither: &DitherVector, delta: f64) -> Result<Vec<f64>> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    check_len(op.m(), dither.len())?;
    let ax = op.apply(x)?;
    Ok(ax.iter().zip(dither.values()).map(|(a, w)| a / delta + w).collect())
}

/// B-bit uniform integer quantizer with an offset-binary shift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizerConfig {
    pub bits: u32,
    pub delta: f64,
    pub offset: u64,
}

impl QuantizerConfig {
    /// Mid-range offset `2^(B-1)`.
    pub fn new(bits: u32, delta: f64) -> Result<Self> {
        if bits == 0 {
            return Err(Error::InvalidParameter("bit depth must be at least 1".into()));
        }
        Self::with_offset(bits, delta, 1u64 << (bits - 1))
    }

    pub fn with_offset(bits: u32, delta: f64, offset: u64) -> Result<Self> {
        if !(1..=31).contains(&bits) {
            return Err(Error::InvalidParameter(format!("bit depth {bits} outside 1..=31")));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
        }
        if offset >= 1u64 << bits {
            return Err(Error::InvalidParameter(format!("offset {offset} does not fit {bits} bits")));
        }
        Ok(Self { bits, delta, offset })
    }

    /// Number of representable codes, `2^B`.
    pub fn levels(&self) -> u64 {
        1u64 << self.bits
    }

    /// Offset-binary code of a signed level.
    pub fn code_of(&self, level: i64) -> Result<u64> {
        let shifted = level + self.offset as i64;
        if shifted < 0 || shifted as u64 >= self.levels() {
            return Err(Error::Saturation { level, offset: self.offset, bits: self.bits });
        }
        Ok(shifted as u64)
    }

    pub fn level_of(&self, code: u64) -> i64 {
        code as i64 - self.offset as i64
    }
}

/// `q_i = floor(y_i + 1/2)`; saturation is an error.
pub fn quantize(y: &[f64], cfg: &QuantizerConfig) -> Result<Vec<i64>> {
    y.iter()
        .map(|&v| {
            let level = (v + 0.5).floor();
            if !level.is_finite() {
                return Err(Error::InvalidParameter(format!("non-finite measurement {v}")));
            }
            let level = level as i64;
            cfg.code_of(level)?;
            Ok(level)
        })
        .collect()
}

/// Quantized measurements split into `B` binary planes; `planes[0]` is the LSB.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitplaneMatrix {
    m: usize,
    planes: Vec<Vec<u8>>,
}

impl BitplaneMatrix {
    pub fn from_planes(planes: Vec<Vec<u8>>) -> Result<Self> {
        let m = planes.first().map_or(0, Vec::len);
        for p in &planes {
            check_len(m, p.len())?;
        }
        Ok(Self { m, planes })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn bits(&self) -> usize {
        self.planes.len()
    }

    /// Plane `k` with the 1-based convention (`k = 1` is the LSB).
    pub fn plane(&self, k: usize) -> &[u8] {
        &self.planes[k - 1]
    }

    pub fn planes(&self) -> &[Vec<u8>] {
        &self.planes
    }

    pub fn into_planes(self) -> Vec<Vec<u8>> {
        self.planes
    }
}

/// Splits `q + offset` into bitplanes.
pub fn to_bitplanes(q: &[i64], cfg: &QuantizerConfig) -> Result<BitplaneMatrix> {
    let codes = q.iter().map(|&l| cfg.code_of(l)).collect::<Result<Vec<_>>>()?;
    let planes = (0..cfg.bits)
        .map(|b| codes.iter().map(|&c| ((c >> b) & 1) as u8).collect())
        .collect();
    Ok(BitplaneMatrix { m: q.len(), planes })
}

/// Reassembles signed levels from bitplanes.
pub fn from_bitplanes(planes: &BitplaneMatrix, cfg: &QuantizerConfig) -> Result<Vec<i64>> {
    if planes.bits() != cfg.bits as usize {
        return Err(Error::InvalidParameter(format!(
            "expected {} planes, got {}",
            cfg.bits,
            planes.bits()
        )));
    }
    let mut codes = vec![0u64; planes.m()];
    for (b, plane) in planes.planes().iter().enumerate() {
        for (c, &bit) in codes.iter_mut().zip(plane) {
            *c |= ((bit & 1) as u64) << b;
        }
    }
    Ok(codes.into_iter().map(|c| cfg.level_of(c)).collect())
}
