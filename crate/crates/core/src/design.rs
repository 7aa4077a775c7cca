//! Test matrices, the test oracle, and the decoders.
//!
//! Matrices are bit-packed row-per-item with 64-bit words so the one-shot
//! decoder reduces to popcounts: the four (x, y) cell counts of an item
//! follow from popcount(row), popcount(row & y), and the outcome weight.
//! The sequential decoder samples columns only for still-active items, so
//! accused and eliminated items never appear in a later test by
//! construction.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::scores::ScoreTable;
use crate::stats::{DesignParams, InclusionProbs};

const WORD_BITS: usize = 64;

/// N x T inclusion matrix, one bit-packed row per item.
#[derive(Debug, Clone, PartialEq)]
pub struct TestMatrix {
    n_items: usize,
    t_tests: usize,
    words_per_row: usize,
    bits: Vec<u64>,
    p_per_test: InclusionProbs,
}

impl TestMatrix {
    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn t_tests(&self) -> usize {
        self.t_tests
    }

    pub fn p_per_test(&self) -> &InclusionProbs {
        &self.p_per_test
    }

    #[inline]
    pub fn bit(&self, item: usize, test: usize) -> bool {
        debug_assert!(item < self.n_items && test < self.t_tests);
        let w = self.bits[item * self.words_per_row + test / WORD_BITS];
        w >> (test % WORD_BITS) & 1 == 1
    }

    #[inline]
    fn set_bit(&mut self, item: usize, test: usize) {
        self.bits[item * self.words_per_row + test / WORD_BITS] |= 1 << (test % WORD_BITS);
    }

    #[inline]
    pub fn row_words(&self, item: usize) -> &[u64] {
        &self.bits[item * self.words_per_row..(item + 1) * self.words_per_row]
    }

    pub fn ones(&self) -> u64 {
        self.bits.iter().map(|w| w.count_ones() as u64).sum()
    }

    /// Iterates the set test indices of one row.
    pub fn row_tests(&self, item: usize) -> impl Iterator<Item = usize> + '_ {
        self.row_words(item).iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * WORD_BITS + b)
            })
        })
    }
}

/// The T test outcomes, bit-packed like a matrix row.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeVector {
    t_tests: usize,
    bits: Vec<u64>,
}

impl OutcomeVector {
    pub fn zeros(t_tests: usize) -> Self {
        OutcomeVector { t_tests, bits: vec![0; t_tests.div_ceil(WORD_BITS)] }
    }

    pub fn t_tests(&self) -> usize {
        self.t_tests
    }

    #[inline]
    pub fn bit(&self, test: usize) -> bool {
        debug_assert!(test < self.t_tests);
        self.bits[test / WORD_BITS] >> (test % WORD_BITS) & 1 == 1
    }

    #[inline]
    pub fn set_bit(&mut self, test: usize, value: bool) {
        let mask = 1u64 << (test % WORD_BITS);
        if value {
            self.bits[test / WORD_BITS] |= mask;
        } else {
            self.bits[test / WORD_BITS] &= !mask;
        }
    }

    pub fn ones(&self) -> u64 {
        self.bits.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn words(&self) -> &[u64] {
        &self.bits
    }
}

/// Draws an N x T Bernoulli matrix, column `i` using `p_per_test[i]`.
///
/// Uniform densities use geometric gap sampling over the flattened bit
/// positions, so the cost scales with the number of ones rather than N*T.
pub fn generate_matrix<R: Rng>(
    n: usize,
    t: usize,
    p_per_test: &InclusionProbs,
    rng: &mut R,
) -> Result<TestMatrix> {
    if n == 0 || t == 0 {
        return Err(Error::InvalidParameter(format!("empty matrix {n} x {t}")));
    }
    p_per_test.validate(t)?;
    let words_per_row = t.div_ceil(WORD_BITS);
    let mut m = TestMatrix {
        n_items: n,
        t_tests: t,
        words_per_row,
        bits: vec![0; n * words_per_row],
        p_per_test: p_per_test.clone(),
    };
    match p_per_test {
        InclusionProbs::Uniform(p) => {
            let total = (n as u64) * (t as u64);
            let lq = (-p).ln_1p();
            let mut pos = 0u64;
            loop {
                // Geometric number of zeros before the next one; u in (0, 1].
                let u = 1.0 - rng.random::<f64>();
                let gap = u.ln() / lq;
                if gap >= (total - pos) as f64 {
                    break;
                }
                pos += gap as u64;
                m.set_bit((pos / t as u64) as usize, (pos % t as u64) as usize);
                pos += 1;
                if pos >= total {
                    break;
                }
            }
        }
        InclusionProbs::PerTest(ps) => {
            for item in 0..n {
                for (test, &p) in ps.iter().enumerate() {
                    if rng.random_bool(p) {
                        m.set_bit(item, test);
                    }
                }
            }
        }
    }
    Ok(m)
}

/// Runs every test against a hidden defective set and samples outcomes.
pub fn run_tests<R: Rng>(
    matrix: &TestMatrix,
    defectives: &[usize],
    model: &ModelSpec,
    rng: &mut R,
) -> Result<OutcomeVector> {
    let k = defectives.len() as u64;
    let mut beta = vec![0u32; matrix.t_tests];
    for &j in defectives {
        if j >= matrix.n_items {
            return Err(Error::InvalidParameter(format!("defective index {j} out of range")));
        }
        for test in matrix.row_tests(j) {
            beta[test] += 1;
        }
    }
    let mut y = OutcomeVector::zeros(matrix.t_tests);
    for (test, &b) in beta.iter().enumerate() {
        y.set_bit(test, model.sample_outcome(b as u64, k, rng)?);
    }
    Ok(y)
}

/// Decoder output: accusations, certain exclusions, final scores, and
/// (optionally) the per-test running scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub accused: Vec<usize>,
    pub eliminated: Vec<usize>,
    pub scores: Vec<f64>,
    pub trajectories: Option<Vec<Vec<f64>>>,
    pub tests_used: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DecodeOptions {
    pub record_trajectories: bool,
}

enum Tables<'a> {
    Uniform(&'a ScoreTable),
    PerTest(&'a [ScoreTable]),
}

impl Tables<'_> {
    #[inline]
    fn at(&self, test: usize) -> &ScoreTable {
        match self {
            Tables::Uniform(t) => t,
            Tables::PerTest(ts) => &ts[test],
        }
    }

    fn any_eliminates(&self) -> bool {
        match self {
            Tables::Uniform(t) => t.eliminates_on_10,
            Tables::PerTest(ts) => ts.iter().any(|t| t.eliminates_on_10),
        }
    }
}

/// One-shot decoding: sum h(X_ji, y_i) per item and accuse strictly above Z.
/// Ties are not accused. With an eliminating table, any item seen in a
/// negative test is excluded regardless of its score.
pub fn decode_nonadaptive(
    matrix: &TestMatrix,
    outcomes: &OutcomeVector,
    table: &ScoreTable,
    z: f64,
    opts: &DecodeOptions,
) -> Result<DecodeResult> {
    decode_impl(matrix, outcomes, &Tables::Uniform(table), z, opts)
}

/// One-shot decoding with one score table per test (varying-p designs).
pub fn decode_nonadaptive_per_test(
    matrix: &TestMatrix,
    outcomes: &OutcomeVector,
    tables: &[ScoreTable],
    z: f64,
    opts: &DecodeOptions,
) -> Result<DecodeResult> {
    if tables.len() != matrix.t_tests {
        return Err(Error::InvalidParameter(format!(
            "{} score tables for {} tests",
            tables.len(),
            matrix.t_tests
        )));
    }
    decode_impl(matrix, outcomes, &Tables::PerTest(tables), z, opts)
}

fn decode_impl(
    matrix: &TestMatrix,
    outcomes: &OutcomeVector,
    tables: &Tables,
    z: f64,
    opts: &DecodeOptions,
) -> Result<DecodeResult> {
    if outcomes.t_tests != matrix.t_tests {
        return Err(Error::InvalidParameter(format!(
            "{} outcomes for {} tests",
            outcomes.t_tests, matrix.t_tests
        )));
    }
    let t = matrix.t_tests;
    let n = matrix.n_items;
    let eliminating = tables.any_eliminates();

    let mut scores = vec![0.0f64; n];
    let mut accused = Vec::new();
    let mut eliminated = Vec::new();

    match tables {
        Tables::Uniform(table) => {
            let ny: u64 = outcomes.ones();
            for item in 0..n {
                let row = matrix.row_words(item);
                let mut n1 = 0u64;
                let mut n11 = 0u64;
                for (rw, yw) in row.iter().zip(outcomes.words()) {
                    n1 += rw.count_ones() as u64;
                    n11 += (rw & yw).count_ones() as u64;
                }
                let n10 = n1 - n11;
                let n01 = ny - n11;
                let n00 = t as u64 - n1 - n01;
                let s = n00 as f64 * table.h00
                    + n01 as f64 * table.h01
                    + n10 as f64 * table.h10
                    + n11 as f64 * table.h11;
                scores[item] = s;
                if eliminating && n10 > 0 {
                    eliminated.push(item);
                } else if s > z {
                    accused.push(item);
                }
            }
        }
        Tables::PerTest(ts) => {
            // S_j = sum_i h_i(0, y_i) plus, over the tests including j,
            // h_i(1, y_i) - h_i(0, y_i); the first term is item-free.
            let mut base = 0.0f64;
            let mut delta = vec![0.0f64; t];
            for (i, tab) in ts.iter().enumerate() {
                let y = outcomes.bit(i);
                base += tab.value(false, y);
                delta[i] = tab.value(true, y) - tab.value(false, y);
            }
            for item in 0..n {
                let mut s = base;
                let mut hit10 = false;
                for test in matrix.row_tests(item) {
                    s += delta[test];
                    if eliminating && ts[test].eliminates_on_10 && !outcomes.bit(test) {
                        hit10 = true;
                    }
                }
                scores[item] = s;
                if hit10 {
                    eliminated.push(item);
                } else if s > z {
                    accused.push(item);
                }
            }
        }
    }

    let trajectories = opts.record_trajectories.then(|| {
        (0..n)
            .map(|item| {
                let mut s = 0.0;
                (0..t)
                    .map(|i| {
                        s += tables.at(i).value(matrix.bit(item, i), outcomes.bit(i));
                        s
                    })
                    .collect()
            })
            .collect()
    });

    Ok(DecodeResult { accused, eliminated, scores, trajectories, tests_used: t })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AdaptiveOptions {
    pub record_trajectories: bool,
    /// Stop as soon as K items are accused. Only sound when the caller
    /// declares the defective count known; default is to run all T tests.
    pub stop_when_k_accused: bool,
}

/// The sequential scheme: per test, sample a column over the active set,
/// observe the outcome, update running scores, and immediately remove items
/// crossing Z (accused) or seen in a negative test under an eliminating
/// table (eliminated). Remaining tests are skipped once the active set is
/// empty; `tests_used` records the last test actually run.
pub fn run_adaptive<R: Rng>(
    params: &DesignParams,
    defectives: &[usize],
    rng: &mut R,
    opts: &AdaptiveOptions,
) -> Result<DecodeResult> {
    let per_test = build_per_test_tables(params)?;
    let tables = match &per_test {
        Some(ts) => Tables::PerTest(ts),
        None => Tables::Uniform(&params.table),
    };
    run_adaptive_impl(params, &tables, defectives, rng, opts)
}

pub(crate) fn run_adaptive_with_tables<R: Rng>(
    params: &DesignParams,
    tables: Option<&[ScoreTable]>,
    defectives: &[usize],
    rng: &mut R,
    opts: &AdaptiveOptions,
) -> Result<DecodeResult> {
    let tables = match tables {
        Some(ts) => Tables::PerTest(ts),
        None => Tables::Uniform(&params.table),
    };
    run_adaptive_impl(params, &tables, defectives, rng, opts)
}

/// Per-test score tables for a varying-p design; `None` when the single
/// stored table applies everywhere.
pub(crate) fn build_per_test_tables(params: &DesignParams) -> Result<Option<Vec<ScoreTable>>> {
    match &params.p {
        InclusionProbs::Uniform(_) => Ok(None),
        InclusionProbs::PerTest(ps) => {
            let eliminate = params.table.eliminates_on_10;
            let tables = ps
                .iter()
                .map(|&p| {
                    crate::scores::best_score_table(&params.model, params.k, p).map(|mut t| {
                        t.eliminates_on_10 = eliminate;
                        t
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Some(tables))
        }
    }
}

fn run_adaptive_impl<R: Rng>(
    params: &DesignParams,
    tables: &Tables,
    defectives: &[usize],
    rng: &mut R,
    opts: &AdaptiveOptions,
) -> Result<DecodeResult> {
    let n = params.n as usize;
    let t = params.t as usize;
    let k_pop = defectives.len() as u64;
    let mut is_defective = vec![false; n];
    for &j in defectives {
        if j >= n {
            return Err(Error::InvalidParameter(format!("defective index {j} out of range")));
        }
        is_defective[j] = true;
    }

    let mut active: Vec<usize> = (0..n).collect();
    let mut scores = vec![0.0f64; n];
    let mut accused = Vec::new();
    let mut eliminated = Vec::new();
    let mut trajectories =
        opts.record_trajectories.then(|| vec![Vec::with_capacity(t); n]);
    let mut included = vec![false; n];
    let mut tests_used = 0usize;

    for i in 0..t {
        if active.is_empty() {
            break;
        }
        if opts.stop_when_k_accused && accused.len() as u64 >= params.k {
            break;
        }
        tests_used = i + 1;
        let p = params.p.at(i);
        let table = tables.at(i);

        let mut beta = 0u64;
        for &j in &active {
            let x = rng.random_bool(p);
            included[j] = x;
            if x && is_defective[j] {
                beta += 1;
            }
        }
        let y = params.model.sample_outcome(beta, k_pop, rng)?;
        let h1 = table.value(true, y);
        let h0 = table.value(false, y);
        let eliminate_on_neg = table.eliminates_on_10 && !y;

        active.retain(|&j| {
            let x = included[j];
            included[j] = false;
            // Certain exclusion replaces scoring: the item leaves with its
            // prior total, h10 never enters a score sum.
            if x && eliminate_on_neg {
                eliminated.push(j);
                return false;
            }
            scores[j] += if x { h1 } else { h0 };
            if scores[j] > params.z {
                accused.push(j);
                false
            } else {
                true
            }
        });

        if let Some(traj) = trajectories.as_mut() {
            for (j, path) in traj.iter_mut().enumerate() {
                path.push(scores[j]);
            }
        }
    }

    accused.sort_unstable();
    eliminated.sort_unstable();
    Ok(DecodeResult { accused, eliminated, scores, trajectories, tests_used })
}

const MATRIX_MAGIC: &[u8; 4] = b"GTXM";
const MATRIX_VERSION: u16 = 1;

/// Writes the matrix in the interchange dump format: a 16-byte header
/// (magic "GTXM", version u16, reserved u16, N u32, T u32, little-endian),
/// then row-major bits packed LSB-first into ceil(T/8) bytes per row, then
/// the T per-test probabilities as little-endian f64.
pub fn write_matrix<W: Write>(matrix: &TestMatrix, mut w: W) -> Result<()> {
    let n = u32::try_from(matrix.n_items)
        .map_err(|_| Error::InvalidParameter("matrix too large for dump format".into()))?;
    let t = u32::try_from(matrix.t_tests)
        .map_err(|_| Error::InvalidParameter("matrix too large for dump format".into()))?;
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&MATRIX_VERSION.to_le_bytes())?;
    w.write_all(&0u16.to_le_bytes())?;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(&t.to_le_bytes())?;
    let row_bytes = matrix.t_tests.div_ceil(8);
    for item in 0..matrix.n_items {
        let mut buf = Vec::with_capacity(matrix.words_per_row * 8);
        for word in matrix.row_words(item) {
            buf.extend_from_slice(&word.to_le_bytes());
        }
        buf.truncate(row_bytes);
        w.write_all(&buf)?;
    }
    for i in 0..matrix.t_tests {
        w.write_all(&matrix.p_per_test.at(i).to_le_bytes())?;
    }
    Ok(())
}

/// Reads a matrix dump produced by [`write_matrix`].
pub fn read_matrix<R: Read>(mut r: R) -> Result<TestMatrix> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[0..4] != MATRIX_MAGIC {
        return Err(Error::MatrixFormat("bad magic".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != MATRIX_VERSION {
        return Err(Error::MatrixFormat(format!("unsupported version {version}")));
    }
    let n = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let t = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    if n == 0 || t == 0 {
        return Err(Error::MatrixFormat(format!("empty matrix {n} x {t}")));
    }
    let words_per_row = t.div_ceil(WORD_BITS);
    let row_bytes = t.div_ceil(8);
    let mut bits = vec![0u64; n * words_per_row];
    let mut buf = vec![0u8; row_bytes];
    for item in 0..n {
        r.read_exact(&mut buf)?;
        for (bi, &b) in buf.iter().enumerate() {
            bits[item * words_per_row + bi / 8] |= (b as u64) << (8 * (bi % 8));
        }
    }
    let mut ps = Vec::with_capacity(t);
    let mut fbuf = [0u8; 8];
    for _ in 0..t {
        r.read_exact(&mut fbuf)?;
        ps.push(f64::from_le_bytes(fbuf));
    }
    let m = TestMatrix {
        n_items: n,
        t_tests: t,
        words_per_row,
        bits,
        p_per_test: InclusionProbs::PerTest(ps),
    };
    m.p_per_test.validate(t)?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::{finetune, score_table};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn near_saturated_density() {
        let m = generate_matrix(4, 8, &InclusionProbs::Uniform(0.999_999), &mut rng(1)).unwrap();
        assert_eq!(m.ones(), 32);
    }

    #[test]
    fn density_tracks_p() {
        let m = generate_matrix(1000, 1000, &InclusionProbs::Uniform(0.1), &mut rng(2)).unwrap();
        let frac = m.ones() as f64 / 1e6;
        assert!((frac - 0.1).abs() < 0.004, "frac = {frac}");
    }

    #[test]
    fn generation_is_deterministic() {
        for probs in [
            InclusionProbs::Uniform(0.3),
            InclusionProbs::PerTest((0..20).map(|i| 0.05 + 0.04 * i as f64).collect()),
        ] {
            let a = generate_matrix(50, 20, &probs, &mut rng(7)).unwrap();
            let b = generate_matrix(50, 20, &probs, &mut rng(7)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn per_test_densities_track_their_p() {
        let ps: Vec<f64> = vec![0.05, 0.5, 0.95];
        let m =
            generate_matrix(20_000, 3, &InclusionProbs::PerTest(ps.clone()), &mut rng(3)).unwrap();
        for (i, &p) in ps.iter().enumerate() {
            let ones = (0..20_000).filter(|&j| m.bit(j, i)).count() as f64 / 20_000.0;
            let bound = 4.0 * (p * (1.0 - p) / 20_000.0).sqrt();
            assert!((ones - p).abs() < bound, "test {i}: {ones} vs {p}");
        }
    }

    #[test]
    fn empty_defective_set_reads_negative() {
        let m = generate_matrix(50, 100, &InclusionProbs::Uniform(0.2), &mut rng(4)).unwrap();
        let y = run_tests(&m, &[], &ModelSpec::traditional(), &mut rng(5)).unwrap();
        assert_eq!(y.ones(), 0);
    }

    #[test]
    fn all_defective_marks_nonempty_tests() {
        let m = generate_matrix(30, 200, &InclusionProbs::Uniform(0.15), &mut rng(6)).unwrap();
        let all: Vec<usize> = (0..30).collect();
        let y = run_tests(&m, &all, &ModelSpec::traditional(), &mut rng(7)).unwrap();
        for i in 0..200 {
            let nonempty = (0..30).any(|j| m.bit(j, i));
            assert_eq!(y.bit(i), nonempty, "test {i}");
        }
    }

    #[test]
    fn additive_noise_rate_on_empty_tests() {
        let m = generate_matrix(10, 10_000, &InclusionProbs::Uniform(0.2), &mut rng(8)).unwrap();
        let y = run_tests(&m, &[], &ModelSpec::additive(0.2), &mut rng(9)).unwrap();
        let freq = y.ones() as f64 / 10_000.0;
        assert!((freq - 0.2).abs() < 0.016, "freq = {freq}");
    }

    #[test]
    fn zero_scores_accuse_nobody() {
        let m = generate_matrix(10, 64, &InclusionProbs::Uniform(0.5), &mut rng(10)).unwrap();
        let y = OutcomeVector::zeros(64);
        let table = ScoreTable {
            h00: 0.0,
            h01: 0.0,
            h10: 0.0,
            h11: 0.0,
            eliminates_on_10: false,
            p: 0.5,
            k: 2,
        };
        let res = decode_nonadaptive(&m, &y, &table, 1.0, &DecodeOptions::default()).unwrap();
        assert!(res.accused.is_empty());
        assert!(res.scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn popcount_scores_match_naive_sum() {
        let model = ModelSpec::traditional();
        let table = score_table(&model, 5, 0.2).unwrap();
        let m = generate_matrix(40, 300, &InclusionProbs::Uniform(0.2), &mut rng(11)).unwrap();
        let defectives = [3usize, 11, 19, 27, 35];
        let y = run_tests(&m, &defectives, &model, &mut rng(12)).unwrap();
        let res = decode_nonadaptive(&m, &y, &table, 5.0, &DecodeOptions::default()).unwrap();
        for item in 0..40 {
            let naive: f64 = (0..300).map(|i| table.value(m.bit(item, i), y.bit(i))).sum();
            assert!(
                (res.scores[item] - naive).abs() < 1e-9 * naive.abs().max(1.0),
                "item {item}: {} vs {naive}",
                res.scores[item]
            );
        }
    }

    #[test]
    fn per_test_decode_matches_uniform_decode() {
        let model = ModelSpec::linear_gap();
        let table = score_table(&model, 4, 0.5).unwrap();
        let m = generate_matrix(30, 100, &InclusionProbs::Uniform(0.5), &mut rng(13)).unwrap();
        let y = run_tests(&m, &[0, 1, 2, 3], &model, &mut rng(14)).unwrap();
        let uni = decode_nonadaptive(&m, &y, &table, 3.0, &DecodeOptions::default()).unwrap();
        let tables = vec![table; 100];
        let per =
            decode_nonadaptive_per_test(&m, &y, &tables, 3.0, &DecodeOptions::default()).unwrap();
        assert_eq!(uni.accused, per.accused);
        for (a, b) in uni.scores.iter().zip(&per.scores) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn accused_set_invariant_under_trajectory_recording() {
        let model = ModelSpec::traditional();
        let table = score_table(&model, 3, 0.15).unwrap();
        let m = generate_matrix(60, 400, &InclusionProbs::Uniform(0.15), &mut rng(15)).unwrap();
        let y = run_tests(&m, &[5, 25, 45], &model, &mut rng(16)).unwrap();
        let plain = decode_nonadaptive(&m, &y, &table, 10.0, &DecodeOptions::default()).unwrap();
        let traced =
            decode_nonadaptive(&m, &y, &table, 10.0, &DecodeOptions { record_trajectories: true })
                .unwrap();
        assert_eq!(plain.accused, traced.accused);
        assert_eq!(plain.eliminated, traced.eliminated);
        let traj = traced.trajectories.unwrap();
        assert_eq!(traj.len(), 60);
        assert_eq!(traj[0].len(), 400);
        for item in 0..60 {
            assert!((traj[item][399] - plain.scores[item]).abs() < 1e-9);
        }
    }

    #[test]
    fn elimination_never_hits_defectives_in_noiseless_runs() {
        let model = ModelSpec::traditional();
        let table = finetune(&score_table(&model, 4, 0.2).unwrap(), &model).unwrap();
        for seed in 0..20 {
            let mut g = rng(seed);
            let m = generate_matrix(50, 200, &InclusionProbs::Uniform(0.2), &mut g).unwrap();
            let defectives = [1usize, 13, 28, 44];
            let y = run_tests(&m, &defectives, &model, &mut g).unwrap();
            let res = decode_nonadaptive(&m, &y, &table, 8.0, &DecodeOptions::default()).unwrap();
            for d in defectives {
                assert!(!res.eliminated.contains(&d), "seed {seed} eliminated defective {d}");
            }
        }
    }

    fn toy_design(adaptive: bool) -> DesignParams {
        let model = ModelSpec::traditional();
        let k = 3u64;
        let p = 0.2;
        let table = score_table(&model, k, p).unwrap();
        let m = crate::stats::moments(&model, k, p, &table).unwrap();
        let (t, z) = if adaptive {
            crate::stats::code_length_adaptive(&m, 40, k, 0.05, 0.05).unwrap()
        } else {
            crate::stats::code_length_nonadaptive(&m, 40, k, 0.05, 0.05).unwrap()
        };
        DesignParams {
            k,
            n: 40,
            eps1: 0.05,
            eps2: 0.05,
            p: InclusionProbs::Uniform(p),
            t,
            z,
            adaptive,
            model,
            table,
        }
    }

    #[test]
    fn adaptive_is_deterministic() {
        let params = toy_design(true);
        let a =
            run_adaptive(&params, &[2, 17, 33], &mut rng(21), &AdaptiveOptions::default()).unwrap();
        let b =
            run_adaptive(&params, &[2, 17, 33], &mut rng(21), &AdaptiveOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adaptive_finds_defectives_and_freezes_removed_items() {
        let params = toy_design(true);
        let opts = AdaptiveOptions { record_trajectories: true, ..Default::default() };
        let res = run_adaptive(&params, &[2, 17, 33], &mut rng(22), &opts).unwrap();
        for d in [2usize, 17, 33] {
            assert!(res.accused.contains(&d), "defective {d} missed");
        }
        // After an item is removed its running score never moves again.
        let traj = res.trajectories.as_ref().unwrap();
        for &j in &res.accused {
            let path = &traj[j];
            let cross = path.iter().position(|&s| s > params.z).unwrap();
            for i in cross + 1..path.len() {
                assert_eq!(path[i], path[cross], "item {j} moved after accusation");
            }
        }
    }

    #[test]
    fn adaptive_empty_defective_set_accuses_almost_nobody() {
        let params = toy_design(true);
        let res = run_adaptive(&params, &[], &mut rng(23), &AdaptiveOptions::default()).unwrap();
        assert!(res.accused.len() <= 1, "accused {:?}", res.accused);
    }

    #[test]
    fn adaptive_early_exit_when_k_known() {
        let params = toy_design(true);
        let opts = AdaptiveOptions { stop_when_k_accused: true, ..Default::default() };
        let res = run_adaptive(&params, &[2, 17, 33], &mut rng(24), &opts).unwrap();
        let full =
            run_adaptive(&params, &[2, 17, 33], &mut rng(24), &AdaptiveOptions::default()).unwrap();
        assert!(res.tests_used <= full.tests_used);
        if res.accused.len() == 3 {
            assert!(res.tests_used < params.t as usize);
        }
    }

    #[test]
    fn matrix_dump_round_trip() {
        for probs in [
            InclusionProbs::Uniform(0.25),
            InclusionProbs::PerTest((0..70).map(|i| 0.01 + 0.012 * i as f64).collect()),
        ] {
            let m = generate_matrix(33, 70, &probs, &mut rng(30)).unwrap();
            let mut buf = Vec::new();
            write_matrix(&m, &mut buf).unwrap();
            assert_eq!(buf.len(), 16 + 33 * 9 + 70 * 8);
            let back = read_matrix(&buf[..]).unwrap();
            assert_eq!(back.n_items(), 33);
            assert_eq!(back.t_tests(), 70);
            for j in 0..33 {
                for i in 0..70 {
                    assert_eq!(m.bit(j, i), back.bit(j, i), "bit ({j}, {i})");
                }
            }
            for i in 0..70 {
                assert_eq!(m.p_per_test.at(i), back.p_per_test().at(i));
            }
        }
    }

    #[test]
    fn matrix_dump_rejects_garbage() {
        assert!(read_matrix(&b"nope"[..]).is_err());
        let m = generate_matrix(4, 9, &InclusionProbs::Uniform(0.5), &mut rng(31)).unwrap();
        let mut buf = Vec::new();
        write_matrix(&m, &mut buf).unwrap();
        buf[0] = b'X';
        assert!(matches!(read_matrix(&buf[..]), Err(Error::MatrixFormat(_))));
    }
}
