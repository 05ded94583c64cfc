//! Multispectral image coding: block tiling, per-band prediction, container
//! format and rate/quality reporting.
//!
//! Band 0 is the reference and is available at the decoder. Every other band
//! is cut into square blocks that are measured with one shared operator,
//! quantized with a per-block dither and coded plane by plane.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bitplane_codec::{
    decode_block_with, encode_levels, BitCount, BlockContext, CompressedBlock, EncodeSetup, PlaneReport, PriorKind,
};
use crate::coding_theory::{ErrorModel, PlaneMode, RatePolicy};
use crate::error::{check_len, Error, Result};
use crate::ldpc::{CodeDatabase, DEFAULT_MAX_ITERS};
use crate::measurement::{derive_seed, measure, quantize, DitherVector, MeasurementOperator, OperatorKind, QuantizerConfig};
use crate::par::Exec;
use crate::prediction::{
    assemble_measurement_stats, band_stats, dequantized_measurements, lmmse_predict, mean, successive_predict,
    LinearParams, MeasurementStats, PredictionMode, StatScale, SuccessiveParams,
};
use crate::reconstruction::{psnr, reconstruct, ReconConfig, WtvWeights, DEFAULT_LOW_WEIGHT, DEFAULT_TAU};

const CONTAINER_MAGIC: &[u8; 8] = b"DQRPIMG1";

/// Bands of one scene, row-major, all of the same shape. Band 0 is the
/// reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub width: usize,
    pub height: usize,
    pub bit_depth: u32,
    pub bands: Vec<Vec<f64>>,
}

impl ImageSet {
    pub fn new(width: usize, height: usize, bit_depth: u32, bands: Vec<Vec<f64>>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("image dimensions must be positive".into()));
        }
        if bands.len() < 2 {
            return Err(Error::InvalidParameter("need a reference band and at least one band to code".into()));
        }
        for b in &bands {
            check_len(width * height, b.len())?;
        }
        Ok(Self { width, height, bit_depth, bands })
    }

    pub fn band_count(&self) -> usize {
        self.bands.len()
    }
}

/// Geometry of the block grid over an edge-replicated, padded image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tiling {
    pub width: usize,
    pub height: usize,
    pub block: usize,
}

impl Tiling {
    pub fn blocks_x(&self) -> usize {
        self.width.div_ceil(self.block)
    }

    pub fn blocks_y(&self) -> usize {
        self.height.div_ceil(self.block)
    }

    pub fn count(&self) -> usize {
        self.blocks_x() * self.blocks_y()
    }

    /// Pixels of block `b`, clamping coordinates at the image edge.
    pub fn extract(&self, band: &[f64], b: usize) -> Vec<f64> {
        let (by, bx) = (b / self.blocks_x(), b % self.blocks_x());
        let mut out = Vec::with_capacity(self.block * self.block);
        for s in 0..self.block {
            let row = (by * self.block + s).min(self.height - 1);
            for t in 0..self.block {
                let col = (bx * self.block + t).min(self.width - 1);
                out.push(band[row * self.width + col]);
            }
        }
        out
    }

    /// Writes the unpadded part of block `b` into `band`.
    pub fn insert(&self, band: &mut [f64], b: usize, block: &[f64]) {
        let (by, bx) = (b / self.blocks_x(), b % self.blocks_x());
        for s in 0..self.block {
            let row = by * self.block + s;
            if row >= self.height {
                break;
            }
            for t in 0..self.block {
                let col = bx * self.block + t;
                if col >= self.width {
                    break;
                }
                band[row * self.width + col] = block[s * self.block + t];
            }
        }
    }
}

/// Encoder parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecParams {
    /// Block side; blocks hold `block²` pixels.
    pub block: usize,
    pub measurements: usize,
    pub bits: u32,
    /// Quantizer step for each coded band (bands 1, 2, …).
    pub deltas: Vec<f64>,
    pub mode: PredictionMode,
    pub operator: OperatorKind,
    pub policy: RatePolicy,
    pub seed_op: u64,
    pub seed_dither: u64,
    /// Plan every block for this `ε` instead of the estimated one.
    pub epsilon_override: Option<f64>,
}

impl Default for CodecParams {
    fn default() -> Self {
        Self {
            block: 64,
            measurements: 4000,
            bits: 11,
            deltas: vec![10.0; 3],
            mode: PredictionMode::Linear,
            operator: OperatorKind::Srht,
            policy: RatePolicy::default(),
            seed_op: 1,
            seed_dither: 2,
            epsilon_override: None,
        }
    }
}

impl CodecParams {
    pub fn n(&self) -> usize {
        self.block * self.block
    }

    pub fn validate(&self, coded_bands: usize) -> Result<()> {
        if self.block == 0 || self.measurements == 0 || self.measurements > self.n() {
            return Err(Error::InvalidParameter(format!(
                "need 0 < m <= n, got m = {} and n = {}",
                self.measurements,
                self.n()
            )));
        }
        if self.deltas.len() != coded_bands {
            return Err(Error::InvalidParameter(format!(
                "{} quantizer steps given for {coded_bands} coded bands",
                self.deltas.len()
            )));
        }
        if self.deltas.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidParameter("quantizer steps must be positive".into()));
        }
        if let Some(eps) = self.epsilon_override {
            if !(eps >= 0.0 && eps.is_finite()) {
                return Err(Error::InvalidParameter(format!("epsilon override must be >= 0, got {eps}")));
            }
        }
        if !(1..=31).contains(&self.bits) {
            return Err(Error::InvalidParameter(format!("bit depth {} outside 1..=31", self.bits)));
        }
        self.policy.validate()
    }

    pub fn operator(&self) -> Result<MeasurementOperator> {
        let sigma = 1.0 / (self.n() as f64).sqrt();
        MeasurementOperator::build(self.operator, self.n(), self.measurements, sigma, self.seed_op)
    }
}

/// Dither seed of band `band` in block `block`.
pub fn dither_seed(base: u64, block: usize, band: usize) -> u64 {
    derive_seed(base, (block as u64) << 8 | band as u64)
}

/// Container description stored ahead of the block records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub width: usize,
    pub height: usize,
    pub bit_depth: u32,
    pub bands: usize,
    pub tiling: Tiling,
    pub params: CodecParams,
    pub code_seed: u64,
    /// `(block, band)` of each record, in file order.
    pub records: Vec<(usize, usize)>,
}

/// Encoded image: manifest plus one block record per block and coded band.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub manifest: Manifest,
    pub blocks: Vec<CompressedBlock>,
}

impl Container {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.manifest)?;
        let mut out = Vec::new();
        out.extend_from_slice(CONTAINER_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for b in &self.blocks {
            let bytes = b.to_bytes();
            out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
            out.extend_from_slice(&bytes);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = || Error::Format("truncated container".into());
        if bytes.len() < 12 || &bytes[..8] != CONTAINER_MAGIC {
            return Err(Error::Format("not an image container".into()));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let json = bytes.get(12..12 + len).ok_or_else(corrupt)?;
        let manifest: Manifest = serde_json::from_slice(json)?;
        let mut pos = 12 + len;
        let mut blocks = Vec::with_capacity(manifest.records.len());
        for _ in 0..manifest.records.len() {
            let head = bytes.get(pos..pos + 4).ok_or_else(corrupt)?;
            let rec_len = u32::from_le_bytes(head.try_into().unwrap()) as usize;
            let rec = bytes.get(pos + 4..pos + 4 + rec_len).ok_or_else(corrupt)?;
            let (block, used) = CompressedBlock::from_bytes(rec, &manifest.params.policy.rates)?;
            if used != rec_len {
                return Err(Error::Format("block record has trailing bytes".into()));
            }
            blocks.push(block);
            pos += 4 + rec_len;
        }
        if pos != bytes.len() {
            return Err(Error::Format("trailing bytes after the last block".into()));
        }
        for (b, &(block, band)) in blocks.iter().zip(&manifest.records) {
            if b.header.block_index as usize != block || b.header.band as usize != band {
                return Err(Error::Format("block record does not match the manifest".into()));
            }
        }
        Ok(Self { manifest, blocks })
    }

    /// Bit budget of the coded bands, indexed by band − 1.
    pub fn band_bits(&self) -> Vec<BitCount> {
        let mut out = vec![BitCount::default(); self.manifest.bands - 1];
        for b in &self.blocks {
            out[b.header.band as usize - 1].add(&b.bit_count());
        }
        out
    }
}

struct BlockInputs<'a> {
    tiling: Tiling,
    params: &'a CodecParams,
    op: &'a MeasurementOperator,
    codes: &'a CodeDatabase,
}

/// Encodes every coded band of every block.
pub fn encode_image(images: &ImageSet, params: &CodecParams, codes: &CodeDatabase, exec: Exec) -> Result<Container> {
    let coded = images.band_count() - 1;
    params.validate(coded)?;
    if codes.m() != params.measurements || codes.rates() != params.policy.rates.as_slice() {
        return Err(Error::InvalidParameter("code database does not match the codec parameters".into()));
    }
    let tiling = Tiling { width: images.width, height: images.height, block: params.block };
    let op = params.operator()?;
    let inputs = BlockInputs { tiling, params, op: &op, codes };
    let per_block = exec.map(0..tiling.count(), |b| encode_one_block(images, &inputs, b));
    let mut blocks = Vec::with_capacity(tiling.count() * coded);
    for r in per_block {
        blocks.extend(r?);
    }
    let records = blocks.iter().map(|b| (b.header.block_index as usize, b.header.band as usize)).collect();
    let manifest = Manifest {
        version: 1,
        width: images.width,
        height: images.height,
        bit_depth: images.bit_depth,
        bands: images.band_count(),
        tiling,
        params: params.clone(),
        code_seed: codes.seed(),
        records,
    };
    Ok(Container { manifest, blocks })
}

fn encode_one_block(images: &ImageSet, inp: &BlockInputs<'_>, b: usize) -> Result<Vec<CompressedBlock>> {
    let params = inp.params;
    let n = params.n();
    let x: Vec<Vec<f64>> = images.bands.iter().map(|band| inp.tiling.extract(band, b)).collect();
    let coded = x.len() - 1;
    let mut out = Vec::with_capacity(coded);
    let dithers: Vec<DitherVector> =
        (1..=coded).map(|i| DitherVector::generate(params.measurements, dither_seed(params.seed_dither, b, i))).collect();
    let mut levels = Vec::with_capacity(coded);
    for i in 1..=coded {
        let y = measure(inp.op, &x[i], &dithers[i - 1], params.deltas[i - 1])?;
        let cfg = QuantizerConfig::new(params.bits, params.deltas[i - 1])?;
        levels.push(quantize(&y, &cfg)?);
    }
    match params.mode {
        PredictionMode::Linear => {
            let ref_stats = band_stats(&x[0], &x[0])?;
            let scale = StatScale::from_reference(ref_stats.mean, ref_stats.var);
            for i in 1..=coded {
                let words = LinearParams::from_stats(&band_stats(&x[0], &x[i])?).to_words(scale);
                let decoded = LinearParams::from_words(&words, scale)?.with_reference(&x[0]);
                let x_hat = lmmse_predict(&x[0], &decoded);
                let eps = params.epsilon_override.unwrap_or_else(|| l2_distance(&x[i], &x_hat));
                out.push(encode_band(inp, b, i, &levels[i - 1], &dithers[i - 1], eps, words)?);
            }
        }
        PredictionMode::Successive => {
            let y0 = inp.op.apply(&x[0])?;
            let mut ytilde: Vec<Vec<f64>> = vec![y0.clone()];
            for i in 1..=coded {
                let ax = inp.op.apply(&x[i])?;
                ytilde.push(ax.into_iter().map(|v| v / params.deltas[i - 1]).collect());
            }
            let refs: Vec<&[f64]> = ytilde.iter().map(Vec::as_slice).collect();
            let dir = inp.op.apply(&vec![1.0; n])?;
            let stats = MeasurementStats::from_measurements_along(&refs, &dir)?;
            let scale = StatScale::from_reference(stats.means[0], stats.cov[0][0]);
            let mut sent = Vec::with_capacity(coded);
            let mut regressors = vec![y0];
            for i in 1..=coded {
                let last = i == coded;
                let words = SuccessiveParams::from_stats(&stats, i, last).to_words(scale);
                sent.push(SuccessiveParams::from_words(&words, i, last, scale)?);
                let assembled = assemble_measurement_stats(stats.means[0], stats.cov[0][0], &sent, Some(&dir))?;
                let regs: Vec<&[f64]> = regressors.iter().map(Vec::as_slice).collect();
                let pred = successive_predict(&regs, &assembled, i)?;
                let eps_y = l2_distance(&pred, &ytilde[i]);
                let eps = params.epsilon_override.unwrap_or_else(|| {
                    crate::coding_theory::epsilon_x_from_epsilon_y(eps_y, n, params.measurements, params.deltas[i - 1])
                });
                out.push(encode_band(inp, b, i, &levels[i - 1], &dithers[i - 1], eps, words)?);
                regressors.push(dequantized_measurements(&levels[i - 1], dithers[i - 1].values())?);
            }
        }
    }
    Ok(out)
}

fn encode_band(
    inp: &BlockInputs<'_>,
    b: usize,
    band: usize,
    levels: &[i64],
    dither: &DitherVector,
    eps: f64,
    stats: Vec<u16>,
) -> Result<CompressedBlock> {
    let params = inp.params;
    let delta = params.deltas[band - 1];
    let quantizer = QuantizerConfig::new(params.bits, delta)?;
    let setup = EncodeSetup { op: inp.op, dither, quantizer, policy: &params.policy, codes: inp.codes };
    let model = ErrorModel::new(eps, inp.op.sigma(), delta)?;
    let ctx = BlockContext { block_index: b as u32, band: band as u8, mode: params.mode };
    encode_levels(levels, &setup, &model, ctx, stats)
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Decoder settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOptions {
    pub recon: ReconConfig,
    pub tau: f64,
    pub low_weight: f64,
    pub priors: PriorKind,
    pub max_bp_iters: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            recon: ReconConfig::default(),
            tau: DEFAULT_TAU,
            low_weight: DEFAULT_LOW_WEIGHT,
            priors: PriorKind::Likelihood,
            max_bp_iters: DEFAULT_MAX_ITERS,
        }
    }
}

/// Decoding result for one block and band.
#[derive(Debug, Clone, PartialEq)]
pub struct BandBlockDecode {
    pub block: usize,
    pub band: usize,
    /// Recovered quantized measurements.
    pub levels: Vec<i64>,
    /// Side-information prediction of the block pixels, when one exists.
    pub prediction: Option<Vec<f64>>,
    pub reconstruction: Vec<f64>,
    pub planes: Vec<PlaneReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedImage {
    pub width: usize,
    pub height: usize,
    /// All bands; band 0 is the reference as supplied.
    pub bands: Vec<Vec<f64>>,
    pub blocks: Vec<BandBlockDecode>,
}

impl DecodedImage {
    /// Syndrome-coded planes that failed to converge.
    pub fn failed_planes(&self) -> usize {
        self.blocks.iter().flat_map(|b| &b.planes).filter(|p| p.converged == Some(false)).count()
    }
}

/// Decodes every coded band of every block and reconstructs the pixels.
pub fn decode_image(
    container: &Container,
    reference: &[f64],
    codes: &CodeDatabase,
    opts: &DecodeOptions,
    exec: Exec,
) -> Result<DecodedImage> {
    let man = &container.manifest;
    check_len(man.width * man.height, reference.len())?;
    if codes.seed() != man.code_seed || codes.m() != man.params.measurements {
        return Err(Error::Format("container was encoded with a different code database".into()));
    }
    let coded = man.bands - 1;
    man.params.validate(coded)?;
    let tiling = man.tiling;
    if container.blocks.len() != tiling.count() * coded {
        return Err(Error::Format("container does not hold every block".into()));
    }
    let mut grouped: Vec<Vec<&CompressedBlock>> = vec![Vec::new(); tiling.count()];
    for blk in &container.blocks {
        let idx = blk.header.block_index as usize;
        if idx >= tiling.count() {
            return Err(Error::Format(format!("block index {idx} outside the image")));
        }
        grouped[idx].push(blk);
    }
    for g in &mut grouped {
        g.sort_by_key(|b| b.header.band);
        if g.iter().enumerate().any(|(i, b)| b.header.band as usize != i + 1) {
            return Err(Error::Format("block is missing a band".into()));
        }
    }
    let op = man.params.operator()?;
    let per_block = exec.map(0..tiling.count(), |b| decode_one_block(man, &grouped[b], reference, &op, codes, opts, b));
    let mut bands = vec![vec![0.0; man.width * man.height]; man.bands];
    bands[0] = reference.to_vec();
    let mut blocks = Vec::with_capacity(container.blocks.len());
    for r in per_block {
        for d in r? {
            tiling.insert(&mut bands[d.band], d.block, &d.reconstruction);
            blocks.push(d);
        }
    }
    Ok(DecodedImage { width: man.width, height: man.height, bands, blocks })
}

fn decode_one_block(
    man: &Manifest,
    records: &[&CompressedBlock],
    reference: &[f64],
    op: &MeasurementOperator,
    codes: &CodeDatabase,
    opts: &DecodeOptions,
    b: usize,
) -> Result<Vec<BandBlockDecode>> {
    let params = &man.params;
    let tiling = man.tiling;
    let x0 = tiling.extract(reference, b);
    let weights = WtvWeights::from_reference(&x0, tiling.block, tiling.block, opts.tau, opts.low_weight)?;
    let mut out = Vec::with_capacity(records.len());
    let y0 = op.apply(&x0)?;
    let dir = op.apply(&vec![1.0; params.n()])?;
    let ref_moments = MeasurementStats::from_measurements_along(&[&y0], &dir)?;
    let (ref_mean, ref_var) = (ref_moments.means[0], ref_moments.cov[0][0]);
    let mut sent = Vec::new();
    let mut regressors = vec![y0.clone()];
    for blk in records {
        let band = blk.header.band as usize;
        let delta = params.deltas[band - 1];
        let dither = DitherVector::generate(params.measurements, dither_seed(params.seed_dither, b, band));
        if blk.header.dither_seed != dither.seed() || blk.header.operator_seed != op.seed() {
            return Err(Error::Format(format!("block {b} band {band} has unexpected seeds")));
        }
        let (prediction, y_hat) = match blk.header.mode {
            PredictionMode::Linear => {
                let scale = StatScale::from_reference(mean(&x0), crate::prediction::covariance(&x0, &x0)?);
                let stats = LinearParams::from_words(&blk.stats, scale)?.with_reference(&x0);
                let x_hat = lmmse_predict(&x0, &stats);
                let y_hat = measure(op, &x_hat, &dither, delta)?;
                (Some(x_hat), y_hat)
            }
            PredictionMode::Successive => {
                let scale = StatScale::from_reference(ref_mean, ref_var);
                let last = band == man.bands - 1;
                sent.push(SuccessiveParams::from_words(&blk.stats, band, last, scale)?);
                let assembled = assemble_measurement_stats(ref_mean, ref_var, &sent, Some(&dir))?;
                let regs: Vec<&[f64]> = regressors.iter().map(Vec::as_slice).collect();
                let pred = successive_predict(&regs, &assembled, band)?;
                let y_hat = pred.iter().zip(dither.values()).map(|(p, w)| p + w).collect();
                (None, y_hat)
            }
        };
        let decoded = decode_block_with(blk, &y_hat, codes, opts.priors, opts.max_bp_iters)?;
        if blk.header.mode == PredictionMode::Successive {
            regressors.push(dequantized_measurements(&decoded.levels, dither.values())?);
        }
        let init = match &prediction {
            Some(p) => p.clone(),
            None => back_projection(op, &decoded.levels, &dither, delta)?,
        };
        let recon = reconstruct(&decoded.levels, op, &dither, delta, &weights, &opts.recon, Some(&init))?;
        out.push(BandBlockDecode {
            block: b,
            band,
            levels: decoded.levels,
            prediction,
            reconstruction: recon.x,
            planes: decoded.planes,
        });
    }
    Ok(out)
}

/// `Δ Aᵀ(q − w) / ‖A‖²`, a starting point when no pixel prediction exists.
fn back_projection(op: &MeasurementOperator, levels: &[i64], dither: &DitherVector, delta: f64) -> Result<Vec<f64>> {
    let y = dequantized_measurements(levels, dither.values())?;
    let norm = op.spectral_norm();
    Ok(op.apply_adjoint(&y)?.into_iter().map(|v| v * delta / (norm * norm)).collect())
}

/// Quantized measurements of every coded band of every block, as the encoder
/// computes them; indexed `[block][band − 1]`.
pub fn reference_levels(images: &ImageSet, params: &CodecParams) -> Result<Vec<Vec<Vec<i64>>>> {
    let tiling = Tiling { width: images.width, height: images.height, block: params.block };
    let op = params.operator()?;
    (0..tiling.count())
        .map(|b| {
            (1..images.band_count())
                .map(|i| {
                    let x = tiling.extract(&images.bands[i], b);
                    let dither = DitherVector::generate(params.measurements, dither_seed(params.seed_dither, b, i));
                    let cfg = QuantizerConfig::new(params.bits, params.deltas[i - 1])?;
                    quantize(&measure(&op, &x, &dither, params.deltas[i - 1])?, &cfg)
                })
                .collect()
        })
        .collect()
}

/// One row of the rate/quality table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandMetrics {
    pub band: usize,
    pub psnr: f64,
    pub prediction_psnr: Option<f64>,
    /// Payload bits per pixel of this band.
    pub bpp: f64,
    /// Header, plan and padding bits per pixel of this band.
    pub framing_bpp: f64,
    pub bits: BitCount,
    /// Measurement bit error rate, when ground-truth levels are known.
    pub ber: Option<f64>,
    pub failed_planes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub bands: Vec<BandMetrics>,
    /// Statistics overhead over all coded bands, in bits per pixel.
    pub overhead_bpp: f64,
    /// Σ band payload bpp + overhead.
    pub overall_bpp: f64,
    /// Every serialized block bit over the coded pixels.
    pub serialized_bpp: f64,
    pub serialized_bits: u64,
}

/// Per-band PSNR and rate table. `truth_levels` adds measurement BER.
pub fn metrics_report(
    original: &ImageSet,
    decoded: &DecodedImage,
    container: &Container,
    truth_levels: Option<&[Vec<Vec<i64>>]>,
) -> Result<MetricsReport> {
    let man = &container.manifest;
    check_len(man.bands, original.band_count())?;
    let coded = man.bands - 1;
    let pixels = (man.width * man.height) as f64;
    let band_bits = container.band_bits();
    let mut prediction_bands: Vec<Option<Vec<f64>>> = vec![None; coded];
    for d in &decoded.blocks {
        if let Some(p) = &d.prediction {
            let slot = prediction_bands[d.band - 1].get_or_insert_with(|| vec![0.0; man.width * man.height]);
            man.tiling.insert(slot, d.block, p);
        }
    }
    let mut bands = Vec::with_capacity(coded);
    for i in 1..=coded {
        let bits = band_bits[i - 1];
        let ber = match truth_levels {
            Some(t) => {
                let (mut errors, mut total) = (0u64, 0u64);
                for d in decoded.blocks.iter().filter(|d| d.band == i) {
                    let truth = &t[d.block][i - 1];
                    for (&a, &b) in truth.iter().zip(&d.levels) {
                        errors += ((a ^ b) as u64 & ((1u64 << man.params.bits) - 1)).count_ones() as u64;
                        total += man.params.bits as u64;
                    }
                }
                Some(errors as f64 / total.max(1) as f64)
            }
            None => None,
        };
        let failed_planes = decoded
            .blocks
            .iter()
            .filter(|d| d.band == i)
            .flat_map(|d| &d.planes)
            .filter(|p| p.converged == Some(false))
            .count();
        bands.push(BandMetrics {
            band: i,
            psnr: psnr(&original.bands[i], &decoded.bands[i])?,
            prediction_psnr: prediction_bands[i - 1].as_ref().map(|p| psnr(&original.bands[i], p)).transpose()?,
            bpp: bits.payload as f64 / pixels,
            framing_bpp: bits.framing as f64 / pixels,
            bits,
            ber,
            failed_planes,
        });
    }
    let coded_pixels = coded as f64 * pixels;
    let stats_bits: u64 = band_bits.iter().map(|b| b.stats).sum();
    let payload_bits: u64 = band_bits.iter().map(|b| b.payload).sum();
    let serialized_bits: u64 = band_bits.iter().map(BitCount::total).sum();
    Ok(MetricsReport {
        bands,
        overhead_bpp: stats_bits as f64 / coded_pixels,
        overall_bpp: (payload_bits + stats_bits) as f64 / coded_pixels,
        serialized_bpp: serialized_bits as f64 / coded_pixels,
        serialized_bits,
    })
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>5} {:>10} {:>10} {:>9} {:>9} {:>10} {:>7}", "band", "psnr_db", "pred_db", "bpp", "framing", "ber", "failed")?;
        for b in &self.bands {
            let pred = b.prediction_psnr.map_or("-".to_string(), |p| format!("{p:.2}"));
            let ber = b.ber.map_or("-".to_string(), |v| format!("{v:.3e}"));
            writeln!(
                f,
                "{:>5} {:>10.2} {:>10} {:>9.4} {:>9.4} {:>10} {:>7}",
                b.band, b.psnr, pred, b.bpp, b.framing_bpp, ber, b.failed_planes
            )?;
        }
        writeln!(f, "overhead bpp   {:.5}", self.overhead_bpp)?;
        writeln!(f, "overall bpp    {:.5}", self.overall_bpp)?;
        write!(f, "serialized bpp {:.5} ({} bits)", self.serialized_bpp, self.serialized_bits)
    }
}

/// Payload bpp of one band over the whole image for a given step.
pub fn band_rate(images: &ImageSet, params: &CodecParams, band: usize, codes: &CodeDatabase, exec: Exec) -> Result<f64> {
    let container = encode_image(images, params, codes, exec)?;
    Ok(container.band_bits()[band - 1].payload as f64 / (images.width * images.height) as f64)
}

/// Bisects the step of `band` until its payload rate is within `tol` of
/// `target` bits per pixel.
pub fn tune_delta(
    images: &ImageSet,
    params: &CodecParams,
    band: usize,
    target: f64,
    tol: f64,
    codes: &CodeDatabase,
    exec: Exec,
) -> Result<f64> {
    let mut p = params.clone();
    let (mut lo, mut hi) = (1e-3f64, params.deltas[band - 1].max(1.0));
    // widen until the coarse end is below target
    loop {
        p.deltas[band - 1] = hi;
        if band_rate(images, &p, band, codes, exec)? <= target || hi > 1e9 {
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = (lo * hi).sqrt();
        p.deltas[band - 1] = mid;
        let rate = match band_rate(images, &p, band, codes, exec) {
            Ok(r) => r,
            Err(Error::Saturation { .. }) => {
                lo = mid;
                continue;
            }
            Err(e) => return Err(e),
        };
        if (rate - target).abs() <= tol {
            return Ok(mid);
        }
        if rate > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::InvalidParameter(format!("no step reaches {target} bpp for band {band}")))
}

/// Counts planes per mode over a container, indexed `[band − 1][mode]` with
/// modes ordered skip, raw, syndrome.
pub fn plane_mode_counts(container: &Container) -> Vec<[usize; 3]> {
    let mut out = vec![[0usize; 3]; container.manifest.bands - 1];
    for b in &container.blocks {
        for e in &b.plan.entries {
            let slot = match e.mode {
                PlaneMode::Skip => 0,
                PlaneMode::Raw => 1,
                PlaneMode::Syndrome => 2,
            };
            out[b.header.band as usize - 1][slot] += 1;
        }
    }
    out
}

/// Piecewise-constant multispectral scene with correlated bands.
///
/// Band 0 is a patchwork of random rectangles over a smooth ramp; every other
/// band is an affine function of band 0 plus a per-region deviation, shared
/// in part with the previous band, and pixel noise. Values stay within 8-bit
/// range.
pub fn synthetic_scene(width: usize, height: usize, bands: usize, seed: u64) -> Result<ImageSet> {
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let classes = 8usize;
    let base: Vec<f64> = (0..classes).map(|_| rng.random_range(40.0..200.0)).collect();
    let mut label = vec![0usize; width * height];
    let rects = (width * height / 256).clamp(6, 400);
    for _ in 0..rects {
        let (w, h) = (rng.random_range(4..=width.clamp(5, 40)), rng.random_range(4..=height.clamp(5, 40)));
        let (x, y) = (rng.random_range(0..width), rng.random_range(0..height));
        let c = rng.random_range(0..classes);
        for row in y..(y + h).min(height) {
            for col in x..(x + w).min(width) {
                label[row * width + col] = c;
            }
        }
    }
    let noise = Normal::new(0.0, 1.0).unwrap();
    let deviation = Normal::new(0.0, 6.0).unwrap();
    let mut out = Vec::with_capacity(bands);
    let mut dev = vec![0.0; classes];
    for band in 0..bands {
        let (gain, bias) = if band == 0 { (1.0, 0.0) } else { (rng.random_range(0.6..1.2), rng.random_range(-10.0..20.0)) };
        // neighbouring bands share most of their deviation from band 0
        dev = (0..classes).map(|c| if band == 0 { 0.0 } else { 0.8 * dev[c] + 0.6 * deviation.sample(&mut rng) }).collect();
        let data = (0..width * height)
            .map(|p| {
                let ramp = 10.0 * (p % width) as f64 / width as f64;
                let v = gain * (base[label[p]] + ramp) + bias + dev[label[p]] + noise.sample(&mut rng);
                v.clamp(0.0, 255.0)
            })
            .collect();
        out.push(data);
    }
    ImageSet::new(width, height, 8, out)
}
