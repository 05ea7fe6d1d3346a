use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::metrics::{average_ranks, pearson_unchecked};
use crate::{Error, Result};

/// Default number of permutation draws.
pub const DEFAULT_PERMUTATIONS: usize = 999;

/// Scores of `m` raters on `n` items, rater-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RatingTable {
    raters: usize,
    items: usize,
    scores: Vec<u8>,
}

impl RatingTable {
    pub fn new(rows: Vec<Vec<u8>>) -> Result<Self> {
        let raters = rows.len();
        let items = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != items) {
            return Err(Error::Shape("rater rows have different lengths".into()));
        }
        if let Some(s) = rows.iter().flatten().find(|s| !(1..=5).contains(*s)) {
            return Err(Error::invalid(format!("score {s} outside 1..=5")));
        }
        Ok(Self {
            raters,
            items,
            scores: rows.concat(),
        })
    }

    /// One row per rater, scores separated by tabs (or other whitespace).
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record = |message: String| Error::Record {
                path: origin.to_string(),
                line: n + 1,
                field: "score".into(),
                message,
            };
            let row = line
                .split_whitespace()
                .map(|t| t.parse::<u8>())
                .collect::<std::result::Result<Vec<u8>, _>>()
                .map_err(|e| record(e.to_string()))?;
            if let Some(s) = row.iter().find(|s| !(1..=5).contains(*s)) {
                return Err(record(format!("{s} outside 1..=5")));
            }
            rows.push(row);
        }
        Self::new(rows)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn raters(&self) -> usize {
        self.raters
    }

    pub fn items(&self) -> usize {
        self.items
    }

    pub fn row(&self, rater: usize) -> &[u8] {
        &self.scores[rater * self.items..(rater + 1) * self.items]
    }

    /// Sub-table restricted to the given item columns.
    pub fn select(&self, items: &[usize]) -> Self {
        let rows = (0..self.raters)
            .map(|r| items.iter().map(|&i| self.row(r)[i]).collect())
            .collect();
        Self::new(rows).expect("columns of a valid table")
    }

    fn check_concordance(&self) -> Result<()> {
        if self.raters < 2 || self.items < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 raters and 2 items, got {}x{}",
                self.raters, self.items
            )));
        }
        Ok(())
    }

    fn rank_rows(&self) -> Vec<Vec<f64>> {
        (0..self.raters)
            .map(|r| {
                let row: Vec<f64> = self.row(r).iter().map(|&s| f64::from(s)).collect();
                average_ranks(&row)
            })
            .collect()
    }
}

/// Σ over tie groups of (t³ − t) for one rater.
fn tie_term(row: &[u8]) -> f64 {
    let mut counts = [0u64; 6];
    for &s in row {
        counts[s as usize] += 1;
    }
    counts.iter().map(|&t| (t * t * t - t) as f64).sum()
}

/// Precomputed pieces of the tie-corrected W for a fixed table shape.
struct WKernel {
    m: f64,
    n: f64,
    denom: f64,
}

impl WKernel {
    fn new(table: &RatingTable) -> Result<Self> {
        table.check_concordance()?;
        let (m, n) = (table.raters as f64, table.items as f64);
        let ties: f64 = (0..table.raters).map(|r| tie_term(table.row(r))).sum();
        let denom = m * m * n * (n * n - 1.0) - m * ties;
        if denom <= 0.0 {
            return Err(Error::Undefined("every rater gives a constant score".into()));
        }
        Ok(Self { m, n, denom })
    }

    fn w(&self, rank_rows: &[Vec<f64>]) -> f64 {
        let items = rank_rows[0].len();
        let sum_sq: f64 = (0..items)
            .map(|i| {
                let r: f64 = rank_rows.iter().map(|row| row[i]).sum();
                r * r
            })
            .sum();
        let (m, n) = (self.m, self.n);
        let w = (12.0 * sum_sq - 3.0 * m * m * n * (n + 1.0) * (n + 1.0)) / self.denom;
        if w < 0.0 && w > -1e-12 {
            0.0
        } else {
            w
        }
    }
}

/// Tie-corrected Kendall's coefficient of concordance.
pub fn kendalls_w(table: &RatingTable) -> Result<f64> {
    let kernel = WKernel::new(table)?;
    Ok(kernel.w(&table.rank_rows()))
}

/// RNG for permutation `k`: a seeded ChaCha stream, so draws do not depend on
/// how permutations are scheduled across threads.
fn permutation_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct PermutationTest {
    pub statistic: f64,
    pub p_value: f64,
    /// Statistic under each permutation, in permutation order.
    pub null: Vec<f64>,
}

fn add_one_p(observed: f64, null: &[f64]) -> f64 {
    let hits = null.iter().filter(|&&v| v >= observed - 1e-12).count();
    (1 + hits) as f64 / (null.len() + 1) as f64
}

/// Permutation test for W: every permutation shuffles each rater's row
/// independently; `p = (1 + #{W_perm ≥ W_obs}) / (n_perm + 1)`.
pub fn permutation_test_w(table: &RatingTable, n_perm: usize, seed: u64) -> Result<PermutationTest> {
    if n_perm < 99 {
        return Err(Error::invalid(format!("n_perm={n_perm} below 99")));
    }
    let kernel = WKernel::new(table)?;
    let ranks = table.rank_rows();
    let observed = kernel.w(&ranks);
    let null: Vec<f64> = (0..n_perm)
        .into_par_iter()
        .map(|k| {
            let mut rng = permutation_rng(seed, k);
            let mut shuffled = ranks.clone();
            for row in &mut shuffled {
                row.shuffle(&mut rng);
            }
            kernel.w(&shuffled)
        })
        .collect();
    Ok(PermutationTest {
        statistic: observed,
        p_value: add_one_p(observed, &null),
        null,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseSpearman {
    pub mean_rho: f64,
    pub mean_p: f64,
    /// `(rater_a, rater_b, rho, p)` for every pair.
    pub pairs: Vec<(usize, usize, f64, f64)>,
}

/// Spearman ρ with a one-sided permutation p-value for every rater pair,
/// averaged over pairs.
pub fn pairwise_spearman_p(table: &RatingTable, n_perm: usize, seed: u64) -> Result<PairwiseSpearman> {
    if table.raters < 2 || table.items < 2 {
        return Err(Error::invalid("need at least 2 raters and 2 items"));
    }
    let ranks = table.rank_rows();
    let mut pairs = Vec::new();
    let mut pair_index = 0usize;
    for a in 0..table.raters {
        for b in a + 1..table.raters {
            let rho = pearson_unchecked(&ranks[a], &ranks[b])?;
            let base = seed.wrapping_add((pair_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let null: Vec<f64> = (0..n_perm)
                .into_par_iter()
                .map(|k| {
                    let mut rng = permutation_rng(base, k);
                    let mut shuffled = ranks[b].clone();
                    shuffled.shuffle(&mut rng);
                    pearson_unchecked(&ranks[a], &shuffled).expect("same multiset as observed")
                })
                .collect();
            pairs.push((a, b, rho, add_one_p(rho, &null)));
            pair_index += 1;
        }
    }
    let count = pairs.len() as f64;
    Ok(PairwiseSpearman {
        mean_rho: pairs.iter().map(|p| p.2).sum::<f64>() / count,
        mean_p: pairs.iter().map(|p| p.3).sum::<f64>() / count,
        pairs,
    })
}

/// Benjamini–Hochberg step-up procedure; flags in input order.
pub fn benjamini_hochberg(p_values: &[f64], q: f64) -> Result<Vec<bool>> {
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("p-value {p} outside [0, 1]")));
    }
    let n = p_values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]));
    let k = (1..=n)
        .rev()
        .find(|&k| p_values[order[k - 1]] <= k as f64 * q / n as f64)
        .unwrap_or(0);
    let mut flags = vec![false; n];
    for &i in &order[..k] {
        flags[i] = true;
    }
    Ok(flags)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchConsistency {
    /// Share of batches whose W is significant after BH correction.
    pub fraction: f64,
    pub w: Vec<f64>,
    pub p_values: Vec<f64>,
    pub rejected: Vec<bool>,
}

/// Splits items into seeded random batches of `batch_size` (a trailing partial
/// batch is dropped), tests W per batch and applies BH at level `q`.
pub fn batch_consistency(
    table: &RatingTable,
    batch_size: usize,
    q: f64,
    n_perm: usize,
    seed: u64,
) -> Result<BatchConsistency> {
    if batch_size < 2 || table.items < batch_size {
        return Err(Error::invalid(format!(
            "{} items cannot fill a batch of {batch_size}",
            table.items
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..table.items).collect();
    order.shuffle(&mut rng);
    let mut w = Vec::new();
    let mut p_values = Vec::new();
    for chunk in order.chunks_exact(batch_size) {
        let test = permutation_test_w(&table.select(chunk), n_perm, rng.next_u64())?;
        w.push(test.statistic);
        p_values.push(test.p_value);
    }
    let rejected = benjamini_hochberg(&p_values, q)?;
    let fraction = rejected.iter().filter(|r| **r).count() as f64 / rejected.len() as f64;
    Ok(BatchConsistency {
        fraction,
        w,
        p_values,
        rejected,
    })
}
