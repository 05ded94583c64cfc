//! Sparse parity-check codes: construction, syndromes, and syndrome-constrained
//! belief propagation.
//!
//! Codes are built with progressive edge growth (PEG): variable nodes are
//! connected one edge at a time to the check node that is farthest away in the
//! current Tanner graph, which keeps short cycles out.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{check_len, Error, Result};
use crate::par::Exec;

/// LLR magnitude limit for belief-propagation messages.
pub const LLR_CLAMP: f64 = 20.0;

pub const DEFAULT_MAX_ITERS: usize = 100;

const DB_MAGIC: &[u8; 8] = b"DQRPLDPC";
const DB_VERSION: u8 = 1;

/// Variable-node degree distribution (node perspective).
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeProfile {
    /// `(degree, fraction of variable nodes)` pairs.
    pub degrees: Vec<(usize, f64)>,
}

impl DegreeProfile {
    pub fn regular(weight: usize) -> Self {
        Self { degrees: vec![(weight, 1.0)] }
    }

    /// Irregular profile with maximum degree 20 (the edge-perspective
    /// distribution of Richardson, Shokrollahi and Urbanke for rate 1/2,
    /// converted to node fractions).
    pub fn irregular() -> Self {
        Self { degrees: vec![(2, 0.4832), (3, 0.2924), (6, 0.1011), (7, 0.0607), (20, 0.0627)] }
    }

    /// Low-rate profile, heavy in degree-2 nodes; its threshold sits close to
    /// capacity for rates up to about 0.25 where the degree-20 profile loses.
    pub fn low_rate() -> Self {
        Self { degrees: vec![(2, 0.6), (3, 0.3), (8, 0.1)] }
    }

    /// Profile used by [`build_code`].
    pub fn for_rate(rate: f64) -> Self {
        if rate < 0.25 {
            Self::low_rate()
        } else {
            Self::irregular()
        }
    }

    /// Per-variable degrees for `m` variables and `rows` checks, ascending.
    fn assign(&self, m: usize, rows: usize) -> Result<Vec<usize>> {
        let total: f64 = self.degrees.iter().map(|d| d.1).sum();
        if self.degrees.is_empty() || !(total > 0.0) {
            return Err(Error::CodeConstruction("empty degree profile".into()));
        }
        let mut sorted = self.degrees.clone();
        sorted.sort_by_key(|d| d.0);
        let mut counts: Vec<usize> = sorted.iter().map(|d| (d.1 / total * m as f64).round() as usize).collect();
        let assigned: usize = counts.iter().sum();
        let last = counts.len() - 1;
        if assigned > m {
            counts[last] = counts[last].saturating_sub(assigned - m);
        } else {
            counts[last] += m - assigned;
        }
        // degree-2 variables beyond rows - 1 necessarily close cycles among themselves
        if sorted[0].0 == 2 && counts[0] + 1 > rows && sorted.len() > 1 {
            let excess = counts[0] + 1 - rows;
            counts[0] -= excess;
            counts[1] += excess;
        }
        let mut out = Vec::with_capacity(m);
        for (&(deg, _), &count) in sorted.iter().zip(&counts) {
            if deg == 0 {
                return Err(Error::CodeConstruction("zero variable degree".into()));
            }
            out.extend(std::iter::repeat_n(deg.min(rows), count));
        }
        out.sort_unstable();
        debug_assert_eq!(out.len(), m);
        Ok(out)
    }
}

/// Binary parity-check matrix `H` of shape `rows × m`, kept as adjacency lists.
#[derive(Debug, Clone, PartialEq)]
pub struct LdpcCode {
    m: usize,
    rate: f64,
    seed: u64,
    checks: Vec<Vec<u32>>,
    vars: Vec<Vec<u32>>,
}

/// Number of parity checks for a block length and rate, `round(m(1 − R))`.
pub fn check_count(m: usize, rate: f64) -> usize {
    (m as f64 * (1.0 - rate)).round() as usize
}

/// Builds a code with the default degree profile.
pub fn build_code(m: usize, rate: f64, seed: u64) -> Result<LdpcCode> {
    build_code_with_profile(m, rate, seed, &DegreeProfile::for_rate(rate))
}

pub fn build_code_with_profile(m: usize, rate: f64, seed: u64, profile: &DegreeProfile) -> Result<LdpcCode> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::InvalidParameter(format!("code rate {rate} outside (0, 1)")));
    }
    if m < 100 {
        return Err(Error::InvalidParameter(format!("block length {m} below 100")));
    }
    let rows = check_count(m, rate);
    if rows == 0 {
        return Err(Error::CodeConstruction("rate leaves no parity checks".into()));
    }
    let degrees = profile.assign(m, rows)?;
    let checks = Peg::new(rows, m, seed).run(&degrees);
    LdpcCode::from_checks(m, rate, seed, checks)
}

struct Peg {
    rows: usize,
    checks: Vec<Vec<u32>>,
    vars: Vec<Vec<u32>>,
    rng: ChaCha20Rng,
    check_mark: Vec<u32>,
    var_mark: Vec<u32>,
    stamp: u32,
}

impl Peg {
    fn new(rows: usize, m: usize, seed: u64) -> Self {
        Self {
            rows,
            checks: vec![Vec::new(); rows],
            vars: vec![Vec::new(); m],
            rng: ChaCha20Rng::seed_from_u64(seed),
            check_mark: vec![0; rows],
            var_mark: vec![0; m],
            stamp: 0,
        }
    }

    fn run(mut self, degrees: &[usize]) -> Vec<Vec<u32>> {
        for (v, &deg) in degrees.iter().enumerate() {
            for e in 0..deg {
                let c = if e == 0 { self.pick_lightest(|_| true) } else { self.farthest_check(v) };
                self.checks[c].push(v as u32);
                self.vars[v].push(c as u32);
            }
        }
        for row in &mut self.checks {
            row.sort_unstable();
        }
        self.checks
    }

    /// Lowest-degree check among candidates, ties broken uniformly at random.
    fn pick_lightest(&mut self, candidate: impl Fn(usize) -> bool) -> usize {
        let mut best = usize::MAX;
        let mut ties = 0u32;
        let mut chosen = 0;
        for c in 0..self.rows {
            if !candidate(c) {
                continue;
            }
            let d = self.checks[c].len();
            if d < best {
                best = d;
                ties = 1;
                chosen = c;
            } else if d == best {
                ties += 1;
                if self.rng.random_range(0..ties) == 0 {
                    chosen = c;
                }
            }
        }
        chosen
    }

    /// Check node at maximum Tanner-graph distance from `v` (or unreachable).
    fn farthest_check(&mut self, v: usize) -> usize {
        self.stamp += 1;
        let stamp = self.stamp;
        // check_mark == stamp: reached at the current or an earlier depth
        self.var_mark[v] = stamp;
        let mut reached = 0usize;
        for &c in &self.vars[v] {
            if self.check_mark[c as usize] != stamp {
                self.check_mark[c as usize] = stamp;
                reached += 1;
            }
        }
        let mut frontier_checks: Vec<u32> = self.vars[v].clone();
        loop {
            let mut next_vars = Vec::new();
            for &c in &frontier_checks {
                for &u in &self.checks[c as usize] {
                    if self.var_mark[u as usize] != stamp {
                        self.var_mark[u as usize] = stamp;
                        next_vars.push(u);
                    }
                }
            }
            let mut next_checks = Vec::new();
            for &u in &next_vars {
                for &c in &self.vars[u as usize] {
                    if self.check_mark[c as usize] != stamp {
                        next_checks.push(c);
                    }
                }
            }
            next_checks.sort_unstable();
            next_checks.dedup();
            if next_checks.is_empty() || reached + next_checks.len() == self.rows {
                // choose among checks not reached before this expansion
                let marks = &self.check_mark;
                let unreached: Vec<bool> = (0..self.rows).map(|c| marks[c] != stamp).collect();
                return self.pick_lightest(|c| unreached[c]);
            }
            for &c in &next_checks {
                self.check_mark[c as usize] = stamp;
            }
            reached += next_checks.len();
            frontier_checks = next_checks;
        }
    }
}

impl LdpcCode {
    /// Builds a code from explicit check rows (each a list of variable indices).
    pub fn from_checks(m: usize, rate: f64, seed: u64, checks: Vec<Vec<u32>>) -> Result<Self> {
        let mut vars = vec![Vec::new(); m];
        for (c, row) in checks.iter().enumerate() {
            if row.is_empty() {
                return Err(Error::CodeConstruction(format!("check {c} is empty")));
            }
            for &v in row {
                let v = v as usize;
                if v >= m {
                    return Err(Error::CodeConstruction(format!("variable index {v} out of range")));
                }
                vars[v].push(c as u32);
            }
        }
        if let Some(v) = vars.iter().position(Vec::is_empty) {
            return Err(Error::CodeConstruction(format!("variable {v} has no checks")));
        }
        Ok(Self { m, rate, seed, checks, vars })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of parity checks, i.e. the syndrome length.
    pub fn rows(&self) -> usize {
        self.checks.len()
    }

    pub fn edges(&self) -> usize {
        self.checks.iter().map(Vec::len).sum()
    }

    pub fn check_rows(&self) -> &[Vec<u32>] {
        &self.checks
    }

    pub fn column(&self, v: usize) -> &[u32] {
        &self.vars[v]
    }

    /// `H · bits` over GF(2).
    pub fn syndrome(&self, bits: &[u8]) -> Result<Vec<u8>> {
        check_len(self.m, bits.len())?;
        Ok(self.syndrome_unchecked(bits))
    }

    fn syndrome_unchecked(&self, bits: &[u8]) -> Vec<u8> {
        self.checks
            .iter()
            .map(|row| row.iter().fold(0u8, |acc, &v| acc ^ (bits[v as usize] & 1)))
            .collect()
    }

    /// Corrects `predicted` so that its syndrome matches `target`, treating
    /// `priors[i]` as the probability that bit `i` of the prediction is wrong.
    pub fn decode(&self, predicted: &[u8], target: &[u8], priors: &[f64], max_iters: usize) -> Result<DecodeOutcome> {
        check_len(self.m, predicted.len())?;
        check_len(self.rows(), target.len())?;
        check_len(self.m, priors.len())?;
        let error_syndrome: Vec<u8> = self
            .syndrome_unchecked(predicted)
            .iter()
            .zip(target)
            .map(|(a, b)| a ^ (b & 1))
            .collect();
        let channel: Vec<f64> = priors
            .iter()
            .map(|&p| {
                let p = p.clamp(1e-12, 0.5);
                ((1.0 - p) / p).ln().min(LLR_CLAMP)
            })
            .collect();
        let (error, converged, iterations) = self.propagate(&error_syndrome, &channel, max_iters);
        let bits = predicted.iter().zip(&error).map(|(b, e)| (b & 1) ^ e).collect();
        Ok(DecodeOutcome { bits, converged, iterations })
    }

    /// Sum-product decoding of an error pattern with syndrome `syndrome`.
    fn propagate(&self, syndrome: &[u8], channel: &[f64], max_iters: usize) -> (Vec<u8>, bool, usize) {
        let mut hard = vec![0u8; self.m];
        for (h, &l) in hard.iter_mut().zip(channel) {
            *h = u8::from(l < 0.0);
        }
        let unsatisfied = |hard: &[u8]| {
            self.checks
                .iter()
                .zip(syndrome)
                .filter(|(row, &s)| row.iter().fold(0u8, |acc, &v| acc ^ hard[v as usize]) != s)
                .count()
        };
        let mut best = (unsatisfied(&hard), hard.clone());
        if best.0 == 0 {
            return (hard, true, 0);
        }

        // edge layout follows check rows; var_edges maps each variable to its edge ids
        let offsets: Vec<usize> = std::iter::once(0)
            .chain(self.checks.iter().scan(0, |acc, row| {
                *acc += row.len();
                Some(*acc)
            }))
            .collect();
        let edges = *offsets.last().unwrap();
        let mut var_edges: Vec<Vec<usize>> = vec![Vec::new(); self.m];
        for (c, row) in self.checks.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                var_edges[v as usize].push(offsets[c] + i);
            }
        }
        let edge_var: Vec<usize> = self.checks.iter().flat_map(|row| row.iter().map(|&v| v as usize)).collect();

        let mut to_check: Vec<f64> = edge_var.iter().map(|&v| channel[v]).collect();
        let mut to_var = vec![0.0; edges];
        let mut tanh_buf = Vec::new();
        let mut suffix = Vec::new();

        for iter in 1..=max_iters {
            for (c, &s) in syndrome.iter().enumerate() {
                let (lo, hi) = (offsets[c], offsets[c + 1]);
                tanh_buf.clear();
                tanh_buf.extend(to_check[lo..hi].iter().map(|&l| (0.5 * l).tanh()));
                suffix.clear();
                suffix.resize(hi - lo + 1, 1.0);
                for i in (0..hi - lo).rev() {
                    suffix[i] = suffix[i + 1] * tanh_buf[i];
                }
                let sign = if s == 1 { -1.0 } else { 1.0 };
                let mut prefix = 1.0;
                for i in 0..hi - lo {
                    let prod = (prefix * suffix[i + 1]).clamp(-0.999_999_999_999, 0.999_999_999_999);
                    to_var[lo + i] = (sign * 2.0 * prod.atanh()).clamp(-LLR_CLAMP, LLR_CLAMP);
                    prefix *= tanh_buf[i];
                }
            }
            for v in 0..self.m {
                let total: f64 = channel[v] + var_edges[v].iter().map(|&e| to_var[e]).sum::<f64>();
                hard[v] = u8::from(total < 0.0);
                for &e in &var_edges[v] {
                    to_check[e] = (total - to_var[e]).clamp(-LLR_CLAMP, LLR_CLAMP);
                }
            }
            let unsat = unsatisfied(&hard);
            if unsat == 0 {
                return (hard, true, iter);
            }
            if unsat < best.0 {
                best = (unsat, hard.clone());
            }
        }
        (best.1, false, max_iters)
    }
}

/// Result of [`LdpcCode::decode`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeOutcome {
    pub bits: Vec<u8>,
    pub converged: bool,
    pub iterations: usize,
}

/// Codes for every rate of a policy, all with the same block length.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeDatabase {
    m: usize,
    seed: u64,
    rates: Vec<f64>,
    codes: Vec<LdpcCode>,
}

/// Construction seed of the code at `index` in a database seeded with `seed`.
pub fn code_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl CodeDatabase {
    pub fn build(m: usize, rates: &[f64], seed: u64, exec: Exec) -> Result<Self> {
        let codes = exec
            .map(0..rates.len(), |i| build_code(m, rates[i], code_seed(seed, i)))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { m, seed, rates: rates.to_vec(), codes })
    }

    pub fn from_codes(m: usize, seed: u64, codes: Vec<LdpcCode>) -> Result<Self> {
        for c in &codes {
            check_len(m, c.m())?;
        }
        let rates = codes.iter().map(LdpcCode::rate).collect();
        Ok(Self { m, seed, rates, codes })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn code(&self, rate_index: usize) -> Result<&LdpcCode> {
        self.codes.get(rate_index).ok_or(Error::MissingCode(rate_index))
    }

    /// Writes the versioned little-endian database format.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DB_MAGIC)?;
        w.write_all(&[DB_VERSION])?;
        w.write_all(&(self.m as u32).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.codes.len() as u32).to_le_bytes())?;
        for &r in &self.rates {
            w.write_all(&r.to_le_bytes())?;
        }
        for code in &self.codes {
            w.write_all(&code.seed.to_le_bytes())?;
            w.write_all(&(code.rows() as u32).to_le_bytes())?;
            for row in &code.checks {
                w.write_all(&(row.len() as u32).to_le_bytes())?;
                for &v in row {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DB_MAGIC {
            return Err(Error::Format("not a code database".into()));
        }
        let version = read_u8(&mut r)?;
        if version != DB_VERSION {
            return Err(Error::Format(format!("unsupported code database version {version}")));
        }
        let m = read_u32(&mut r)? as usize;
        let seed = read_u64(&mut r)?;
        let count = read_u32(&mut r)? as usize;
        if count > 64 {
            return Err(Error::Format(format!("implausible code count {count}")));
        }
        let rates = (0..count).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let mut codes = Vec::with_capacity(count);
        for &rate in &rates {
            let code_seed = read_u64(&mut r)?;
            let rows = read_u32(&mut r)? as usize;
            if rows > m {
                return Err(Error::Format(format!("{rows} checks exceed block length {m}")));
            }
            let mut checks = Vec::with_capacity(rows);
            for _ in 0..rows {
                let deg = read_u32(&mut r)? as usize;
                if deg > m {
                    return Err(Error::Format(format!("check degree {deg} exceeds block length")));
                }
                checks.push((0..deg).map(|_| read_u32(&mut r)).collect::<Result<Vec<_>>>()?);
            }
            codes.push(LdpcCode::from_checks(m, rate, code_seed, checks).map_err(|e| Error::Format(e.to_string()))?);
        }
        Ok(Self { m, seed, rates, codes })
    }
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}
