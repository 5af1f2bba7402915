//! GF(p) linear algebra, ensemble sampling and Monte Carlo ML decoding on
//! the erasure channel.
//!
//! Only prime fields with `p ≤ 251` are supported; entries are stored as
//! bytes. Binary matrices take a bit-packed path.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::finite_bound::redundancy_for;
use crate::spectral::{EnsembleParams, RaptorParams};

/// Largest block length accepted by [`exact_block_error`].
pub const EXACT_MAX_N: usize = 24;

/// Trials per independently seeded Monte Carlo chunk.
pub const CHUNK_TRIALS: u64 = 1024;

/// Two-sided 95% normal quantile used for Wilson intervals.
pub const WILSON_Z: f64 = 1.959963984540054;

/// Finite-length LT construction used by the Raptor sampler.
pub const LT_MODEL: &str = "lt_neighbors=distinct,lt_degree_cap=h";

const MAX_PRIME: u32 = 251;

fn is_prime(q: u32) -> bool {
    if q < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= q {
        if q % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

fn check_field(q: u32) -> Result<()> {
    if q > MAX_PRIME || !is_prime(q) {
        return Err(Error::UnsupportedField(q));
    }
    Ok(())
}

fn inverses(p: u8) -> Vec<u8> {
    let p32 = p as u32;
    let mut inv = vec![0u8; p as usize];
    for a in 1..p32 {
        let mut r = 1u32;
        let mut b = a;
        let mut e = p32 - 2;
        while e > 0 {
            if e & 1 == 1 {
                r = r * b % p32;
            }
            b = b * b % p32;
            e >>= 1;
        }
        inv[a as usize] = r as u8;
    }
    inv
}

/// Dense matrix over a prime field, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GfMatrix {
    q: u32,
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl GfMatrix {
    pub fn new(q: u32, rows: usize, cols: usize, data: Vec<u8>) -> Result<Self> {
        check_field(q)?;
        if data.len() != rows * cols {
            return Err(Error::argument(format!(
                "{} entries given for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(&x) = data.iter().find(|&&x| x as u32 >= q) {
            return Err(Error::argument(format!("entry {x} not in GF({q})")));
        }
        Ok(GfMatrix { q, rows, cols, data })
    }

    pub fn from_rows(q: u32, rows: &[Vec<u8>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::argument("ragged rows"));
        }
        GfMatrix::new(q, rows.len(), cols, rows.concat())
    }

    pub fn zeros(q: u32, rows: usize, cols: usize) -> Result<Self> {
        GfMatrix::new(q, rows, cols, vec![0; rows * cols])
    }

    pub fn identity(q: u32, k: usize) -> Result<Self> {
        let mut m = GfMatrix::zeros(q, k, k)?;
        for i in 0..k {
            m.data[i * k + i] = 1;
        }
        Ok(m)
    }

    pub fn q(&self) -> u32 {
        self.q
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[u8] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn transpose(&self) -> GfMatrix {
        let mut data = vec![0u8; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                data[c * self.rows + r] = self.get(r, c);
            }
        }
        GfMatrix {
            q: self.q,
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    pub fn mul(&self, other: &GfMatrix) -> Result<GfMatrix> {
        if self.q != other.q || self.cols != other.rows {
            return Err(Error::argument("incompatible matrix product"));
        }
        let q = self.q;
        let mut data = vec![0u8; self.rows * other.cols];
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = 0u32;
                for t in 0..self.cols {
                    acc = (acc + self.get(i, t) as u32 * other.get(t, j) as u32) % q;
                }
                data[i * other.cols + j] = acc as u8;
            }
        }
        Ok(GfMatrix {
            q,
            rows: self.rows,
            cols: other.cols,
            data,
        })
    }

    /// Basis of `{x : A x = 0}` as the rows of the returned matrix.
    pub fn null_space(&self) -> GfMatrix {
        let p = self.q as u8;
        let inv = inverses(p);
        let pm = self.q;
        let mut a = self.data.clone();
        let (rows, cols) = (self.rows, self.cols);
        let mut pivots = Vec::new();
        let mut r = 0;
        for c in 0..cols {
            if r == rows {
                break;
            }
            let Some(pr) = (r..rows).find(|&i| a[i * cols + c] != 0) else {
                continue;
            };
            for j in 0..cols {
                a.swap(r * cols + j, pr * cols + j);
            }
            let s = inv[a[r * cols + c] as usize] as u32;
            for j in 0..cols {
                a[r * cols + j] = (a[r * cols + j] as u32 * s % pm) as u8;
            }
            for i in 0..rows {
                let f = a[i * cols + c] as u32;
                if i == r || f == 0 {
                    continue;
                }
                for j in 0..cols {
                    let v = a[i * cols + j] as u32 + pm * pm - f * a[r * cols + j] as u32;
                    a[i * cols + j] = (v % pm) as u8;
                }
            }
            pivots.push(c);
            r += 1;
        }
        let free: Vec<usize> = (0..cols).filter(|c| !pivots.contains(c)).collect();
        let mut data = vec![0u8; free.len() * cols];
        for (t, &f) in free.iter().enumerate() {
            data[t * cols + f] = 1;
            for (ri, &pc) in pivots.iter().enumerate() {
                let v = a[ri * cols + f] as u32;
                data[t * cols + pc] = ((pm - v) % pm) as u8;
            }
        }
        GfMatrix {
            q: self.q,
            rows: free.len(),
            cols,
            data,
        }
    }
}

/// Column vectors of a matrix in a rank-friendly layout.
enum Columns {
    Binary { bits: usize, words: usize, data: Vec<u64> },
    Prime { p: u8, len: usize, inv: Vec<u8>, data: Vec<u8> },
}

impl Columns {
    fn of(m: &GfMatrix) -> Columns {
        if m.q == 2 {
            let words = m.rows.div_ceil(64).max(1);
            let mut data = vec![0u64; words * m.cols];
            for r in 0..m.rows {
                for c in 0..m.cols {
                    if m.get(r, c) == 1 {
                        data[c * words + r / 64] |= 1 << (r % 64);
                    }
                }
            }
            Columns::Binary {
                bits: m.rows,
                words,
                data,
            }
        } else {
            let t = m.transpose();
            Columns::Prime {
                p: m.q as u8,
                len: m.rows,
                inv: inverses(m.q as u8),
                data: t.data,
            }
        }
    }

    fn rank_of(&self, idx: impl Iterator<Item = usize>) -> usize {
        match self {
            Columns::Binary { bits, words, data } => {
                gf2_rank(*bits, *words, idx.map(|c| &data[c * words..(c + 1) * words]))
            }
            Columns::Prime { p, len, inv, data } => {
                gfp_rank(*p, inv, *len, idx.map(|c| &data[c * len..(c + 1) * len]))
            }
        }
    }
}

fn lowest_bit(v: &[u64]) -> Option<usize> {
    v.iter()
        .enumerate()
        .find(|(_, &w)| w != 0)
        .map(|(i, w)| i * 64 + w.trailing_zeros() as usize)
}

/// Rank of a family of packed GF(2) vectors of length `bits`.
fn gf2_rank<'a>(bits: usize, words: usize, vecs: impl Iterator<Item = &'a [u64]>) -> usize {
    let mut basis: Vec<u64> = Vec::new();
    let mut slot = vec![usize::MAX; bits];
    let mut v = vec![0u64; words];
    let mut rank = 0;
    for src in vecs {
        if rank == bits {
            break;
        }
        v.copy_from_slice(src);
        while let Some(b) = lowest_bit(&v) {
            let s = slot[b];
            if s == usize::MAX {
                slot[b] = rank;
                basis.extend_from_slice(&v);
                rank += 1;
                break;
            }
            for (x, y) in v.iter_mut().zip(&basis[s * words..(s + 1) * words]) {
                *x ^= y;
            }
        }
    }
    rank
}

/// Rank of a family of GF(p) vectors of length `len`.
fn gfp_rank<'a>(p: u8, inv: &[u8], len: usize, vecs: impl Iterator<Item = &'a [u8]>) -> usize {
    let pm = p as u32;
    let mut basis: Vec<u8> = Vec::new();
    let mut slot = vec![usize::MAX; len];
    let mut v = vec![0u8; len];
    let mut rank = 0;
    for src in vecs {
        if rank == len {
            break;
        }
        v.copy_from_slice(src);
        while let Some(b) = v.iter().position(|&x| x != 0) {
            let s = slot[b];
            if s == usize::MAX {
                let k = inv[v[b] as usize] as u32;
                for x in v.iter_mut() {
                    *x = (*x as u32 * k % pm) as u8;
                }
                slot[b] = rank;
                basis.extend_from_slice(&v);
                rank += 1;
                break;
            }
            let f = v[b] as u32;
            for (x, &y) in v.iter_mut().zip(&basis[s * len..(s + 1) * len]) {
                *x = ((*x as u32 + pm * pm - f * y as u32) % pm) as u8;
            }
        }
    }
    rank
}

/// Rank over GF(q).
pub fn gf_rank(m: &GfMatrix) -> Result<usize> {
    check_field(m.q)?;
    Ok(Columns::of(m).rank_of(0..m.cols))
}

/// Set of erased positions in `{0, …, n−1}`, kept sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErasurePattern {
    n: usize,
    erased: Vec<usize>,
}

impl ErasurePattern {
    pub fn new(n: usize, mut erased: Vec<usize>) -> Result<Self> {
        erased.sort_unstable();
        if erased.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::argument("erased positions must be distinct"));
        }
        if erased.last().is_some_and(|&e| e >= n) {
            return Err(Error::argument(format!("erased position out of range for n = {n}")));
        }
        Ok(ErasurePattern { n, erased })
    }

    pub fn none(n: usize) -> Self {
        ErasurePattern { n, erased: Vec::new() }
    }

    /// Bit `i` of `mask` marks position `i` as erased.
    pub fn from_mask(n: usize, mask: u64) -> Self {
        let erased = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        ErasurePattern { n, erased }
    }

    /// Erase each position independently with probability `epsilon`.
    pub fn sample<R: Rng + ?Sized>(n: usize, epsilon: f64, rng: &mut R) -> Self {
        let erased = (0..n).filter(|_| rng.random_bool(epsilon)).collect();
        ErasurePattern { n, erased }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn erased(&self) -> &[usize] {
        &self.erased
    }

    pub fn len(&self) -> usize {
        self.erased.len()
    }

    pub fn is_empty(&self) -> bool {
        self.erased.is_empty()
    }

    pub fn received(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n - self.erased.len());
        let mut it = self.erased.iter().peekable();
        for i in 0..self.n {
            if it.peek() == Some(&&i) {
                it.next();
            } else {
                out.push(i);
            }
        }
        out
    }
}

/// How a code matrix describes its code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CodeKind {
    /// `k × n`, codewords `uG`.
    Generator,
    /// `m × n`, codewords `{x : Hx = 0}`.
    ParityCheck,
}

fn fails_with(cols: &Columns, rows: usize, kind: CodeKind, pattern: &ErasurePattern) -> bool {
    match kind {
        CodeKind::ParityCheck => {
            let e = pattern.len();
            e > rows || cols.rank_of(pattern.erased().iter().copied()) < e
        }
        CodeKind::Generator => cols.rank_of(pattern.received().into_iter()) < rows,
    }
}

/// ML decoding failure on the erasure channel, by the rank criterion.
pub fn ml_decode_fails(code: &GfMatrix, kind: CodeKind, pattern: &ErasurePattern) -> Result<bool> {
    check_field(code.q)?;
    if pattern.n() != code.cols {
        return Err(Error::argument(format!(
            "pattern length {} does not match code length {}",
            pattern.n(),
            code.cols
        )));
    }
    Ok(fails_with(&Columns::of(code), code.rows, kind, pattern))
}

/// Number of failing erasure patterns of each weight `e = 0..=n`.
pub fn failing_pattern_counts(code: &GfMatrix, kind: CodeKind) -> Result<Vec<u64>> {
    check_field(code.q)?;
    let n = code.cols;
    if n > EXACT_MAX_N {
        return Err(Error::Size { n, max: EXACT_MAX_N });
    }
    let cols = Columns::of(code);
    let counts = (0u64..1 << n)
        .into_par_iter()
        .fold(
            || vec![0u64; n + 1],
            |mut acc, mask| {
                let pattern = ErasurePattern::from_mask(n, mask);
                if fails_with(&cols, code.rows, kind, &pattern) {
                    acc[pattern.len()] += 1;
                }
                acc
            },
        )
        .reduce(
            || vec![0u64; n + 1],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(counts)
}

/// Exact `P_B(C, ε)` by enumerating all `2ⁿ` erasure patterns.
pub fn exact_block_error(code: &GfMatrix, kind: CodeKind, epsilon: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Domain(format!("epsilon = {epsilon} outside [0, 1]")));
    }
    let counts = failing_pattern_counts(code, kind)?;
    let n = code.cols as i32;
    Ok(counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(e, &c)| c as f64 * epsilon.powi(e as i32) * (1.0 - epsilon).powi(n - e as i32))
        .sum())
}

/// `m × n` matrix with i.i.d. uniform entries, `m = round((1−r) n)`.
pub fn sample_random_linear<R: Rng + ?Sized>(n: usize, params: EnsembleParams, rng: &mut R) -> Result<GfMatrix> {
    check_field(params.field_order)?;
    let m = redundancy_for(n, params.rate);
    let q = params.field_order as u8;
    let data = if q == 2 {
        let mut data = Vec::with_capacity(m * n);
        while data.len() < m * n {
            let w: u64 = rng.random();
            let take = (m * n - data.len()).min(64);
            data.extend((0..take).map(|i| (w >> i & 1) as u8));
        }
        data
    } else {
        (0..m * n).map(|_| rng.random_range(0..q)).collect()
    };
    Ok(GfMatrix {
        q: q as u32,
        rows: m,
        cols: n,
        data,
    })
}

/// A sampled fixed-rate Raptor code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RaptorCode {
    /// `k × n` binary generator.
    pub generator: GfMatrix,
    /// Number of intermediate symbols `h`.
    pub intermediate: usize,
    /// Outer parity-check matrices rejected for rank defect.
    pub outer_resamples: u64,
}

impl RaptorCode {
    pub fn realized_rate(&self) -> f64 {
        self.generator.rows as f64 / self.generator.cols as f64
    }
}

/// `(k, h)` for a Raptor code of length `n`.
pub fn raptor_dimensions(n: usize, params: &RaptorParams) -> Result<(usize, usize)> {
    let k = (params.rate() * n as f64).round() as usize;
    let h = (k as f64 / params.outer_rate).round() as usize;
    if k == 0 {
        return Err(Error::argument(format!("n = {n} gives no information symbols")));
    }
    if h < k {
        return Err(Error::argument(format!("rounding gives h = {h} < k = {k}")));
    }
    Ok((k, h))
}

/// Packed binary generator: `n` columns of `k` bits.
struct PackedGenerator {
    k: usize,
    words: usize,
    cols: Vec<u64>,
    resamples: u64,
}

impl PackedGenerator {
    fn column(&self, j: usize) -> &[u64] {
        &self.cols[j * self.words..(j + 1) * self.words]
    }

    fn to_matrix(&self, n: usize) -> GfMatrix {
        let mut data = vec![0u8; self.k * n];
        for j in 0..n {
            let c = self.column(j);
            for r in 0..self.k {
                data[r * n + j] = (c[r / 64] >> (r % 64) & 1) as u8;
            }
        }
        GfMatrix {
            q: 2,
            rows: self.k,
            cols: n,
            data,
        }
    }
}

/// Columns of a `k × h` generator of the null space of a random
/// `(h−k) × h` parity-check, resampled until it has full rank.
fn sample_outer_columns<R: Rng + ?Sized>(k: usize, h: usize, rng: &mut R) -> (Vec<u64>, u64) {
    let kw = k.div_ceil(64);
    let mut cols = vec![0u64; kw * h];
    let m = h - k;
    if m == 0 {
        for i in 0..h {
            cols[i * kw + i / 64] |= 1 << (i % 64);
        }
        return (cols, 0);
    }
    let hw = h.div_ceil(64);
    let tail = if h % 64 == 0 { u64::MAX } else { (1u64 << (h % 64)) - 1 };
    let mut resamples = 0u64;
    loop {
        let mut a: Vec<u64> = (0..m * hw).map(|_| rng.random()).collect();
        for r in 0..m {
            a[r * hw + hw - 1] &= tail;
        }
        let mut pivots = Vec::with_capacity(m);
        let mut r = 0;
        for c in 0..h {
            if r == m {
                break;
            }
            let (w, b) = (c / 64, 1u64 << (c % 64));
            let Some(pr) = (r..m).find(|&i| a[i * hw + w] & b != 0) else {
                continue;
            };
            for j in 0..hw {
                a.swap(r * hw + j, pr * hw + j);
            }
            for i in 0..m {
                if i != r && a[i * hw + w] & b != 0 {
                    for j in 0..hw {
                        let v = a[r * hw + j];
                        a[i * hw + j] ^= v;
                    }
                }
            }
            pivots.push(c);
            r += 1;
        }
        if r < m {
            resamples += 1;
            continue;
        }
        let mut is_pivot = vec![false; h];
        for &c in &pivots {
            is_pivot[c] = true;
        }
        let free: Vec<usize> = (0..h).filter(|&c| !is_pivot[c]).collect();
        for (t, &f) in free.iter().enumerate() {
            cols[f * kw + t / 64] |= 1 << (t % 64);
            for (ri, &pc) in pivots.iter().enumerate() {
                if a[ri * hw + f / 64] >> (f % 64) & 1 == 1 {
                    cols[pc * kw + t / 64] |= 1 << (t % 64);
                }
            }
        }
        return (cols, resamples);
    }
}

fn sample_raptor_packed<R: Rng + ?Sized>(n: usize, params: &RaptorParams, rng: &mut R) -> Result<PackedGenerator> {
    let (k, h) = raptor_dimensions(n, params)?;
    let (outer, resamples) = sample_outer_columns(k, h, rng);
    let words = k.div_ceil(64);
    let mut cols = vec![0u64; words * n];
    for j in 0..n {
        let d = (params.omega.degree_for(rng.random::<f64>()) as usize).min(h);
        let dst = &mut cols[j * words..(j + 1) * words];
        for i in rand::seq::index::sample(rng, h, d) {
            for (x, y) in dst.iter_mut().zip(&outer[i * words..(i + 1) * words]) {
                *x ^= y;
            }
        }
    }
    Ok(PackedGenerator {
        k,
        words,
        cols,
        resamples,
    })
}

/// Sample a binary Raptor generator `G = G_outer · G_LT`.
pub fn sample_raptor_generator<R: Rng + ?Sized>(n: usize, params: &RaptorParams, rng: &mut R) -> Result<RaptorCode> {
    let (_, h) = raptor_dimensions(n, params)?;
    let packed = sample_raptor_packed(n, params, rng)?;
    Ok(RaptorCode {
        generator: packed.to_matrix(n),
        intermediate: h,
        outer_resamples: packed.resamples,
    })
}

/// LT generator alone (`h × n`), used to check the degree model.
pub fn sample_lt_generator<R: Rng + ?Sized>(h: usize, n: usize, params: &RaptorParams, rng: &mut R) -> GfMatrix {
    let mut data = vec![0u8; h * n];
    for j in 0..n {
        let d = (params.omega.degree_for(rng.random::<f64>()) as usize).min(h);
        for i in rand::seq::index::sample(rng, h, d) {
            data[i * n + j] = 1;
        }
    }
    GfMatrix { q: 2, rows: h, cols: n, data }
}

/// Code ensemble to simulate.
#[derive(Debug, Clone)]
pub enum Ensemble {
    RandomLinear(EnsembleParams),
    Raptor(RaptorParams),
    /// A single code; only the erasure pattern is random.
    Fixed { code: Arc<GfMatrix>, kind: CodeKind },
}

impl Ensemble {
    pub fn label(&self) -> &'static str {
        match self {
            Ensemble::RandomLinear(_) => "random_linear",
            Ensemble::Raptor(_) => "raptor",
            Ensemble::Fixed { .. } => "fixed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationEstimate {
    pub trials: u64,
    pub failures: u64,
    pub p_hat: f64,
    /// Half-width of the Wilson 95% interval.
    pub ci_halfwidth: f64,
    pub seed: u64,
    /// Raptor outer-code resamples summed over all trials.
    pub outer_resamples: u64,
}

impl SimulationEstimate {
    pub fn from_counts(trials: u64, failures: u64, seed: u64, outer_resamples: u64) -> Self {
        SimulationEstimate {
            trials,
            failures,
            p_hat: failures as f64 / trials as f64,
            ci_halfwidth: wilson_halfwidth(failures, trials),
            seed,
            outer_resamples,
        }
    }

    /// Wilson 95% interval `(low, high)`.
    pub fn wilson_interval(&self) -> (f64, f64) {
        let (c, hw) = wilson(self.failures, self.trials);
        ((c - hw).max(0.0), (c + hw).min(1.0))
    }
}

fn wilson(failures: u64, trials: u64) -> (f64, f64) {
    let n = trials as f64;
    let p = failures as f64 / n;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let hw = WILSON_Z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    (center, hw)
}

/// Half-width of the Wilson 95% score interval.
pub fn wilson_halfwidth(failures: u64, trials: u64) -> f64 {
    wilson(failures, trials).1
}

fn random_bits<R: Rng + ?Sized>(dst: &mut [u64], bits: usize, rng: &mut R) {
    for w in dst.iter_mut() {
        *w = rng.random();
    }
    if bits % 64 != 0 {
        if let Some(last) = dst.last_mut() {
            *last &= (1u64 << (bits % 64)) - 1;
        }
    }
}

struct Sampler<'a> {
    ensemble: &'a Ensemble,
    n: usize,
    epsilon: f64,
    m: usize,
    fixed: Option<Columns>,
}

impl Sampler<'_> {
    /// One trial: `(failed, outer resamples)`.
    fn trial(&self, rng: &mut ChaCha8Rng, scratch: &mut Vec<u64>, scratch_p: &mut Vec<u8>) -> Result<(bool, u64)> {
        let pattern = ErasurePattern::sample(self.n, self.epsilon, rng);
        match self.ensemble {
            // Columns outside the erased set do not affect the decision, so
            // only the erased columns of the fresh code are drawn.
            Ensemble::RandomLinear(p) if p.field_order == 2 => {
                let e = pattern.len();
                let words = self.m.div_ceil(64).max(1);
                scratch.resize(words * e, 0);
                for c in 0..e {
                    random_bits(&mut scratch[c * words..(c + 1) * words], self.m, rng);
                }
                let fails = e > self.m || gf2_rank(self.m, words, scratch.chunks(words)) < e;
                Ok((fails, 0))
            }
            Ensemble::RandomLinear(p) => {
                let e = pattern.len();
                let q = p.field_order as u8;
                scratch_p.clear();
                scratch_p.extend((0..self.m * e).map(|_| rng.random_range(0..q)));
                if e > self.m {
                    return Ok((true, 0));
                }
                if self.m == 0 {
                    return Ok((e > 0, 0));
                }
                let inv = inverses(q);
                Ok((gfp_rank(q, &inv, self.m, scratch_p.chunks(self.m)) < e, 0))
            }
            Ensemble::Raptor(params) => {
                let g = sample_raptor_packed(self.n, params, rng)?;
                let received = pattern.received();
                let rank = gf2_rank(g.k, g.words, received.iter().map(|&j| g.column(j)));
                Ok((rank < g.k, g.resamples))
            }
            Ensemble::Fixed { code, kind } => {
                let cols = self.fixed.as_ref().expect("fixed columns");
                Ok((fails_with(cols, code.rows, *kind, &pattern), 0))
            }
        }
    }
}

/// Monte Carlo estimate of the ensemble-average block error probability.
///
/// Trials are split into chunks of [`CHUNK_TRIALS`]; chunk `c` draws from
/// ChaCha8 seeded with `seed` on stream `c`, so the result is independent
/// of the thread count.
pub fn monte_carlo(ensemble: &Ensemble, n: usize, epsilon: f64, trials: u64, seed: u64) -> Result<SimulationEstimate> {
    if trials == 0 {
        return Err(Error::argument("trials must be at least 1"));
    }
    if n == 0 {
        return Err(Error::argument("block length must be positive"));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Domain(format!("epsilon = {epsilon} outside [0, 1]")));
    }
    let mut m = 0;
    let mut fixed = None;
    match ensemble {
        Ensemble::RandomLinear(p) => {
            check_field(p.field_order)?;
            m = redundancy_for(n, p.rate);
        }
        Ensemble::Raptor(p) => {
            raptor_dimensions(n, p)?;
        }
        Ensemble::Fixed { code, .. } => {
            check_field(code.q)?;
            if code.cols != n {
                return Err(Error::argument(format!("code length {} but n = {n}", code.cols)));
            }
            fixed = Some(Columns::of(code));
        }
    }
    let sampler = Sampler {
        ensemble,
        n,
        epsilon,
        m,
        fixed,
    };
    let chunks = trials.div_ceil(CHUNK_TRIALS);
    let (failures, resamples) = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<(u64, u64)> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let count = CHUNK_TRIALS.min(trials - c * CHUNK_TRIALS);
            let mut scratch = Vec::new();
            let mut scratch_p = Vec::new();
            let mut tally = (0u64, 0u64);
            for _ in 0..count {
                let (f, r) = sampler.trial(&mut rng, &mut scratch, &mut scratch_p)?;
                tally.0 += f as u64;
                tally.1 += r;
            }
            Ok(tally)
        })
        .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1 + b.1)))?;
    Ok(SimulationEstimate::from_counts(trials, failures, seed, resamples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::DegreeDistribution;

    fn bin(rows: &[&[u8]]) -> GfMatrix {
        GfMatrix::from_rows(2, &rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn rank_examples() {
        assert_eq!(gf_rank(&GfMatrix::zeros(2, 3, 4).unwrap()).unwrap(), 0);
        for q in [2, 3, 5] {
            assert_eq!(gf_rank(&GfMatrix::identity(q, 7).unwrap()).unwrap(), 7);
        }
        assert_eq!(gf_rank(&bin(&[&[1, 1], &[1, 1]])).unwrap(), 1);
        let m = GfMatrix::from_rows(3, &[vec![1, 2], vec![2, 1]]).unwrap();
        assert_eq!(gf_rank(&m).unwrap(), 1);
        assert!(matches!(GfMatrix::zeros(4, 2, 2), Err(Error::UnsupportedField(4))));
    }

    #[test]
    fn rank_wide_binary() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = sample_random_linear(300, EnsembleParams::new(0.5, 2).unwrap(), &mut rng).unwrap();
        assert_eq!(h.rows(), 150);
        let r = gf_rank(&h).unwrap();
        assert!(r >= 140 && r <= 150);
        assert_eq!(gf_rank(&h.transpose()).unwrap(), r);
    }

    #[test]
    fn null_space_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for q in [2u32, 3, 5] {
            let h = sample_random_linear(10, EnsembleParams::new(0.6, q).unwrap(), &mut rng).unwrap();
            let g = h.null_space();
            assert_eq!(g.rows(), 10 - gf_rank(&h).unwrap());
            assert!(h.mul(&g.transpose()).unwrap().data().iter().all(|&x| x == 0));
            assert_eq!(gf_rank(&g).unwrap(), g.rows());
        }
    }

    #[test]
    fn decode_examples() {
        let spc = bin(&[&[1, 1]]);
        let both = ErasurePattern::new(2, vec![0, 1]).unwrap();
        let one = ErasurePattern::new(2, vec![1]).unwrap();
        assert!(ml_decode_fails(&spc, CodeKind::ParityCheck, &both).unwrap());
        assert!(!ml_decode_fails(&spc, CodeKind::ParityCheck, &one).unwrap());
        let g = GfMatrix::identity(2, 3).unwrap();
        assert!(!ml_decode_fails(&g, CodeKind::Generator, &ErasurePattern::none(3)).unwrap());
        assert!(ml_decode_fails(&g, CodeKind::Generator, &one).is_err());
    }

    #[test]
    fn pattern_validation() {
        assert!(ErasurePattern::new(3, vec![0, 0]).is_err());
        assert!(ErasurePattern::new(3, vec![3]).is_err());
        let p = ErasurePattern::new(5, vec![3, 1]).unwrap();
        assert_eq!(p.erased(), &[1, 3]);
        assert_eq!(p.received(), vec![0, 2, 4]);
        assert_eq!(ErasurePattern::from_mask(4, 0b1010).erased(), &[1, 3]);
    }

    #[test]
    fn exact_examples() {
        let spc = bin(&[&[1, 1]]);
        let g = GfMatrix::identity(2, 3).unwrap();
        for eps in [0.0, 0.1, 0.37, 1.0] {
            let p = exact_block_error(&spc, CodeKind::ParityCheck, eps).unwrap();
            assert!((p - eps * eps).abs() < 1e-15);
            let p = exact_block_error(&g, CodeKind::Generator, eps).unwrap();
            assert!((p - (1.0 - (1.0 - eps).powi(3))).abs() < 1e-15);
        }
        let big = GfMatrix::zeros(2, 1, 25).unwrap();
        assert!(matches!(
            exact_block_error(&big, CodeKind::ParityCheck, 0.1),
            Err(Error::Size { n: 25, max: 24 })
        ));
    }

    #[test]
    fn raptor_degree_one_without_precoder() {
        let params = RaptorParams::new(0.5, 1.0, DegreeDistribution::new(vec![(1, 1.0)]).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let code = sample_raptor_generator(40, &params, &mut rng).unwrap();
        assert_eq!(code.generator.rows(), 20);
        for j in 0..40 {
            let w: u32 = (0..20).map(|r| code.generator.get(r, j) as u32).sum();
            assert_eq!(w, 1);
        }
        assert_eq!(code.outer_resamples, 0);
    }

    #[test]
    fn raptor_outer_code_is_valid() {
        let params = RaptorParams::new(0.8, 0.7, DegreeDistribution::new(vec![(1, 1.0)]).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (k, h) = raptor_dimensions(100, &params).unwrap();
        let (cols, _) = sample_outer_columns(k, h, &mut rng);
        let kw = k.div_ceil(64);
        assert_eq!(gf2_rank(k, kw, cols.chunks(kw)), k);
    }

    #[test]
    fn monte_carlo_basics() {
        let e = Ensemble::RandomLinear(EnsembleParams::new(0.5, 2).unwrap());
        let est = monte_carlo(&e, 50, 0.0, 3000, 9).unwrap();
        assert_eq!(est.failures, 0);
        assert_eq!(est.p_hat, 0.0);
        let a = monte_carlo(&e, 50, 0.4, 3000, 9).unwrap();
        let b = monte_carlo(&e, 50, 0.4, 3000, 9).unwrap();
        assert_eq!(a, b);
        assert!(monte_carlo(&e, 50, 0.4, 0, 9).is_err());
    }

    #[test]
    fn wilson_values() {
        // p = 0.5, n = 100: z·sqrt(0.25/100 + z²/40000) / (1 + z²/100)
        let z: f64 = WILSON_Z;
        let expect = z * (0.0025 + z * z / 40000.0).sqrt() / (1.0 + z * z / 100.0);
        assert!((wilson_halfwidth(50, 100) - expect).abs() < 1e-15);
        assert!(wilson_halfwidth(0, 100) > 0.0);
    }
}
