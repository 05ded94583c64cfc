//! Bitplane encoder and decoder for one block of quantized measurements.
//!
//! The encoder splits the quantized measurements into bitplanes and sends each
//! plane raw, as an LDPC syndrome, or not at all. The decoder walks the planes
//! from the LSB up: each plane is predicted from the side-information
//! measurements and the planes already recovered, then corrected with the
//! syndrome.

use serde::Serialize;

use crate::coding_theory::{bit_error_likelihood, plan_bitplanes, BitplanePlan, ErrorModel, PlanEntry, PlaneMode, RatePolicy};
use crate::error::{check_len, Error, Result};
use crate::ldpc::{CodeDatabase, DEFAULT_MAX_ITERS};
use crate::measurement::{
    measure, quantize, to_bitplanes, DitherVector, MeasurementOperator, OperatorKind, QuantizerConfig, PRNG_VERSION,
};
use crate::prediction::PredictionMode;

pub const MAGIC: &[u8; 4] = b"DQRP";
pub const FORMAT_VERSION: u8 = 1;

/// Serialized header size in bytes (magic through stats word count).
pub const HEADER_BYTES: usize = 4 + 6 + 4 * 4 + 8 * 3 + 8 * 3 + 2;

/// Likelihood priors handed to belief propagation are clamped to this range.
pub const PRIOR_MIN: f64 = 1e-6;
pub const PRIOR_MAX: f64 = 0.5;

/// Fixed-width block header.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockHeader {
    pub prng_version: u8,
    pub operator: OperatorKind,
    pub mode: PredictionMode,
    pub band: u8,
    pub bits: u8,
    pub block_index: u32,
    pub n: u32,
    pub m: u32,
    pub offset: u32,
    pub delta: f64,
    /// Entry standard deviation of the operator (`1/√n` for the SRHT).
    pub sigma: f64,
    /// Prediction error the plan was made for.
    pub epsilon: f64,
    pub operator_seed: u64,
    pub dither_seed: u64,
    pub code_seed: u64,
}

impl BlockHeader {
    pub fn quantizer(&self) -> Result<QuantizerConfig> {
        QuantizerConfig::with_offset(self.bits as u32, self.delta, self.offset as u64)
    }

    pub fn error_model(&self) -> Result<ErrorModel> {
        ErrorModel::new(self.epsilon, self.sigma, self.delta)
    }
}

/// Where a block sits in an image and how it was predicted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockContext {
    pub block_index: u32,
    pub band: u8,
    pub mode: PredictionMode,
}

/// One band of one block: header, plan, plane payloads and statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedBlock {
    pub header: BlockHeader,
    pub plan: BitplanePlan,
    /// One entry per plane, LSB first; empty for skipped planes.
    pub payloads: Vec<Vec<u8>>,
    pub stats: Vec<u16>,
}

/// Exact bit budget of a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct BitCount {
    /// Raw and syndrome bits.
    pub payload: u64,
    /// 16 bits per transmitted statistic.
    pub stats: u64,
    /// Header, plan and per-plane byte padding.
    pub framing: u64,
}

impl BitCount {
    pub fn total(&self) -> u64 {
        self.payload + self.stats + self.framing
    }

    pub fn add(&mut self, other: &BitCount) {
        self.payload += other.payload;
        self.stats += other.stats;
        self.framing += other.framing;
    }
}

/// Bit budget of a block and its rate in bits per source sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateAccount {
    pub bits: BitCount,
    pub bits_total: u64,
    pub bpp: f64,
}

fn payload_len(entry: &PlanEntry, m: usize, rows: impl Fn(usize) -> usize) -> usize {
    match entry.mode {
        PlaneMode::Skip => 0,
        PlaneMode::Raw => m,
        PlaneMode::Syndrome => rows(entry.rate_index as usize),
    }
}

impl CompressedBlock {
    /// Payload bits actually carried, per plane.
    pub fn payload_bits(&self) -> u64 {
        self.payloads.iter().map(|p| p.len() as u64).sum()
    }

    pub fn bit_count(&self) -> BitCount {
        let payload = self.payload_bits();
        let stats = 16 * self.stats.len() as u64;
        let total = 8 * self.serialized_len() as u64;
        BitCount { payload, stats, framing: total - payload - stats }
    }

    pub fn serialized_len(&self) -> usize {
        HEADER_BYTES + self.plan.bits() + self.payloads.iter().map(|p| p.len().div_ceil(8)).sum::<usize>() + 2 * self.stats.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(self.serialized_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&[
            FORMAT_VERSION,
            h.prng_version,
            h.operator.code(),
            h.mode.code(),
            h.band,
            h.bits,
        ]);
        for v in [h.block_index, h.n, h.m, h.offset] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in [h.delta, h.sigma, h.epsilon] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in [h.operator_seed, h.dither_seed, h.code_seed] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.stats.len() as u16).to_le_bytes());
        for e in &self.plan.entries {
            out.push((e.mode.code() << 6) | (e.rate_index & 0x3f));
        }
        for p in &self.payloads {
            out.extend(pack_bits(p));
        }
        for w in &self.stats {
            out.extend_from_slice(&w.to_le_bytes());
        }
        debug_assert_eq!(out.len(), self.serialized_len());
        out
    }

    /// Parses a block. Syndrome lengths come from the code database rates.
    pub fn from_bytes(bytes: &[u8], rates: &[f64]) -> Result<(Self, usize)> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad block magic".into()));
        }
        let version = r.u8()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported block version {version}")));
        }
        let prng_version = r.u8()?;
        if prng_version != PRNG_VERSION {
            return Err(Error::Format(format!("unsupported generator version {prng_version}")));
        }
        let operator = OperatorKind::from_code(r.u8()?)?;
        let mode = PredictionMode::from_code(r.u8()?)?;
        let band = r.u8()?;
        let bits = r.u8()?;
        let (block_index, n, m, offset) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
        let (delta, sigma, epsilon) = (r.f64()?, r.f64()?, r.f64()?);
        let (operator_seed, dither_seed, code_seed) = (r.u64()?, r.u64()?, r.u64()?);
        let stats_len = r.u16()? as usize;
        let header = BlockHeader {
            prng_version,
            operator,
            mode,
            band,
            bits,
            block_index,
            n,
            m,
            offset,
            delta,
            sigma,
            epsilon,
            operator_seed,
            dither_seed,
            code_seed,
        };
        header.quantizer().map_err(|e| Error::Format(e.to_string()))?;
        let model = header.error_model().map_err(|e| Error::Format(e.to_string()))?;
        let m = m as usize;
        let mut entries = Vec::with_capacity(bits as usize);
        for k in 1..=bits as u32 {
            let byte = r.u8()?;
            let mode = PlaneMode::from_code(byte >> 6)?;
            let rate_index = byte & 0x3f;
            if mode == PlaneMode::Syndrome && rate_index as usize >= rates.len() {
                return Err(Error::Format(format!("rate index {rate_index} outside the code database")));
            }
            let p = crate::coding_theory::bitflip_probability(k, &model, crate::coding_theory::DEFAULT_TOL);
            entries.push(PlanEntry { mode, rate_index, p });
        }
        let plan = BitplanePlan { entries };
        let mut payloads = Vec::with_capacity(plan.bits());
        for e in &plan.entries {
            let len = payload_len(e, m, |i| crate::ldpc::check_count(m, rates[i]));
            payloads.push(unpack_bits(r.take(len.div_ceil(8))?, len));
        }
        let stats = (0..stats_len).map(|_| r.u16()).collect::<Result<Vec<_>>>()?;
        Ok((Self { header, plan, payloads, stats }, r.pos))
    }

    pub fn rate_account(&self) -> RateAccount {
        rate_accounting(self)
    }
}

/// Exact bit count of a block and its rate over the block's `n` samples.
pub fn rate_accounting(block: &CompressedBlock) -> RateAccount {
    let bits = block.bit_count();
    let total = bits.total();
    RateAccount { bits, bits_total: total, bpp: total as f64 / block.header.n.max(1) as f64 }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated block".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
}

/// Packs bits MSB-first, zero-padding the last byte.
pub fn pack_bits(bits: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        out[i / 8] |= (b & 1) << (7 - i % 8);
    }
    out
}

pub fn unpack_bits(bytes: &[u8], len: usize) -> Vec<u8> {
    (0..len).map(|i| (bytes[i / 8] >> (7 - i % 8)) & 1).collect()
}

/// Everything the encoder needs besides the source block.
pub struct EncodeSetup<'a> {
    pub op: &'a MeasurementOperator,
    pub dither: &'a DitherVector,
    pub quantizer: QuantizerConfig,
    pub policy: &'a RatePolicy,
    pub codes: &'a CodeDatabase,
}

/// Measures, quantizes and plans one source block, producing syndromes for
/// the planes that need them.
pub fn encode_block(
    x: &[f64],
    setup: &EncodeSetup<'_>,
    model: &ErrorModel,
    ctx: BlockContext,
    stats: Vec<u16>,
) -> Result<CompressedBlock> {
    let y = measure(setup.op, x, setup.dither, setup.quantizer.delta)?;
    let q = quantize(&y, &setup.quantizer)?;
    encode_levels(&q, setup, model, ctx, stats)
}

/// Encoder back half for already quantized measurements.
pub fn encode_levels(
    q: &[i64],
    setup: &EncodeSetup<'_>,
    model: &ErrorModel,
    ctx: BlockContext,
    stats: Vec<u16>,
) -> Result<CompressedBlock> {
    let op = setup.op;
    let cfg = &setup.quantizer;
    check_len(op.m(), q.len())?;
    if setup.codes.m() != op.m() {
        return Err(Error::InvalidParameter(format!(
            "code block length {} differs from {} measurements",
            setup.codes.m(),
            op.m()
        )));
    }
    if setup.codes.len() != setup.policy.rates.len() {
        return Err(Error::InvalidParameter("code database and rate policy disagree".into()));
    }
    let planes = to_bitplanes(q, cfg)?;
    let plan = plan_bitplanes(model, cfg.bits as usize, setup.policy);
    let mut payloads = Vec::with_capacity(plan.bits());
    for (k, entry) in plan.entries.iter().enumerate() {
        let plane = planes.plane(k + 1);
        payloads.push(match entry.mode {
            PlaneMode::Skip => Vec::new(),
            PlaneMode::Raw => plane.to_vec(),
            PlaneMode::Syndrome => setup.codes.code(entry.rate_index as usize)?.syndrome(plane)?,
        });
    }
    let header = BlockHeader {
        prng_version: PRNG_VERSION,
        operator: op.kind(),
        mode: ctx.mode,
        band: ctx.band,
        bits: cfg.bits as u8,
        block_index: ctx.block_index,
        n: op.n() as u32,
        m: op.m() as u32,
        offset: cfg.offset as u32,
        delta: cfg.delta,
        sigma: op.sigma(),
        epsilon: model.epsilon,
        operator_seed: op.seed(),
        dither_seed: setup.dither.seed(),
        code_seed: setup.codes.seed(),
    };
    Ok(CompressedBlock { header, plan, payloads, stats })
}

/// Decoder state after `k − 1` planes: the recovered low bits of every code.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    /// Dithered measurement prediction `ŷ`.
    pub y_hat: Vec<f64>,
    /// Recovered codes modulo `2^{decoded}`.
    pub low_bits: Vec<u64>,
    pub decoded: u32,
    pub quantizer: QuantizerConfig,
}

/// Plane prediction with per-bit normalized distances.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanePrediction {
    pub bits: Vec<u8>,
    pub distances: Vec<f64>,
}

impl DecoderState {
    pub fn new(y_hat: Vec<f64>, quantizer: QuantizerConfig) -> Self {
        let m = y_hat.len();
        Self { y_hat, low_bits: vec![0; m], decoded: 0, quantizer }
    }

    /// Appends recovered plane `decoded + 1`.
    pub fn push_plane(&mut self, plane: &[u8]) -> Result<()> {
        check_len(self.low_bits.len(), plane.len())?;
        if self.decoded >= self.quantizer.bits {
            return Err(Error::InvalidParameter("all planes already decoded".into()));
        }
        for (c, &b) in self.low_bits.iter_mut().zip(plane) {
            *c |= ((b & 1) as u64) << self.decoded;
        }
        self.decoded += 1;
        Ok(())
    }

    /// Signed levels once every plane has been decoded.
    pub fn levels(&self) -> Vec<i64> {
        self.low_bits.iter().map(|&c| self.quantizer.level_of(c)).collect()
    }

    /// Nearest code consistent with the recovered low bits, and the distance
    /// from the prediction to it.
    fn nearest_consistent(&self, i: usize) -> (u64, f64) {
        let k = self.decoded;
        let step = (1u64 << k) as f64;
        let r = self.low_bits[i];
        let target = self.y_hat[i] + self.quantizer.offset as f64;
        let max_j = (self.quantizer.levels() >> k) as f64 - 1.0;
        let t = (target - r as f64) / step;
        let j = if t.is_finite() { (t - 0.5).ceil().clamp(0.0, max_j) } else { 0.0 };
        let code = r + (j as u64) * (1u64 << k);
        (code, (target - code as f64).abs())
    }

    /// Nearest consistent codes for every measurement.
    pub fn consistent_codes(&self) -> Vec<u64> {
        (0..self.low_bits.len()).map(|i| self.nearest_consistent(i).0).collect()
    }
}

/// Predicts plane `decoded + 1` from `ŷ` and the recovered lower planes.
///
/// For each measurement the candidate codes are those whose low bits match;
/// the one nearest `ŷ` (ties toward the smaller code) gives the predicted bit.
/// The reported distance is twice the gap between `ŷ` and that code, capped at
/// `2^{k−1}`, which is the convention of [`bit_error_likelihood`].
pub fn predict_plane(state: &DecoderState) -> PlanePrediction {
    let k = state.decoded;
    let cap = (1u64 << k) as f64;
    let (bits, distances) = (0..state.low_bits.len())
        .map(|i| {
            let (code, gap) = state.nearest_consistent(i);
            (((code >> k) & 1) as u8, (2.0 * gap).min(cap))
        })
        .unzip();
    PlanePrediction { bits, distances }
}

/// Per-plane decoding outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PlaneReport {
    pub mode: PlaneMode,
    /// `None` unless the plane was syndrome decoded.
    pub converged: Option<bool>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockDecode {
    pub levels: Vec<i64>,
    pub planes: Vec<PlaneReport>,
}

impl BlockDecode {
    pub fn all_converged(&self) -> bool {
        self.planes.iter().all(|p| p.converged != Some(false))
    }
}

/// How per-bit priors are formed for syndrome decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriorKind {
    /// Per-bit likelihoods from the prediction distance.
    #[default]
    Likelihood,
    /// The plane's flip probability for every bit.
    Uniform,
}

/// Recovers the quantized measurements of a block from the dithered
/// prediction `ŷ`.
pub fn decode_block(block: &CompressedBlock, y_hat: &[f64], codes: &CodeDatabase) -> Result<BlockDecode> {
    decode_block_with(block, y_hat, codes, PriorKind::Likelihood, DEFAULT_MAX_ITERS)
}

pub fn decode_block_with(
    block: &CompressedBlock,
    y_hat: &[f64],
    codes: &CodeDatabase,
    priors: PriorKind,
    max_iters: usize,
) -> Result<BlockDecode> {
    let h = &block.header;
    let m = h.m as usize;
    check_len(m, y_hat.len())?;
    if block.plan.bits() != h.bits as usize || block.payloads.len() != h.bits as usize {
        return Err(Error::Format("plan does not cover every plane".into()));
    }
    if h.code_seed != codes.seed() || codes.m() != m {
        return Err(Error::Format("block was encoded with a different code database".into()));
    }
    let model = h.error_model()?;
    let mut state = DecoderState::new(y_hat.to_vec(), h.quantizer()?);
    let mut planes = Vec::with_capacity(h.bits as usize);
    for (idx, entry) in block.plan.entries.iter().enumerate() {
        let k = idx as u32 + 1;
        let payload = &block.payloads[idx];
        let (plane, report) = match entry.mode {
            PlaneMode::Skip => {
                let pred = predict_plane(&state);
                (pred.bits, PlaneReport { mode: entry.mode, converged: None, iterations: 0 })
            }
            PlaneMode::Raw => {
                check_len(m, payload.len())?;
                (payload.clone(), PlaneReport { mode: entry.mode, converged: None, iterations: 0 })
            }
            PlaneMode::Syndrome => {
                let code = codes.code(entry.rate_index as usize)?;
                let pred = predict_plane(&state);
                let p: Vec<f64> = match priors {
                    PriorKind::Likelihood => pred
                        .distances
                        .iter()
                        .map(|&c| bit_error_likelihood(k, c, &model).map(|l| l.clamp(PRIOR_MIN, PRIOR_MAX)))
                        .collect::<Result<_>>()?,
                    PriorKind::Uniform => vec![entry.p.clamp(PRIOR_MIN, PRIOR_MAX); m],
                };
                let out = code.decode(&pred.bits, payload, &p, max_iters)?;
                let report = PlaneReport { mode: entry.mode, converged: Some(out.converged), iterations: out.iterations };
                (out.bits, report)
            }
        };
        state.push_plane(&plane)?;
        planes.push(report);
    }
    Ok(BlockDecode { levels: state.levels(), planes })
}
