use std::fmt;

use crate::{Error, Result};

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("lengths {} and {} differ", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::invalid("correlation needs at least two points"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value"));
    }
    Ok(())
}

/// 1-based ranks, ties receiving the average of the positions they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    ranks
}

pub(crate) fn pearson_unchecked(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Undefined("correlation of a constant sequence".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson linear correlation.
pub fn lcc(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    pearson_unchecked(a, b)
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn srcc(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    pearson_unchecked(&average_ranks(a), &average_ranks(b))
}

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("lengths {} and {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// Evaluation summary over a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    /// Mean squared error of the expected score against the mean rating.
    pub mse: f64,
    /// Mean EMD between predicted and ground-truth distributions.
    pub emd: f64,
    pub emd_r: f64,
    pub srcc: f64,
    pub lcc: f64,
    pub count: usize,
    pub digest: String,
}

impl MetricsReport {
    /// `key<TAB>value` lines with round-trippable floats.
    pub fn to_lines(&self) -> String {
        format!(
            "mse\t{:e}\nemd\t{:e}\nemd_r\t{:e}\nsrcc\t{:e}\nlcc\t{:e}\ncount\t{}\ndigest\t{}\n",
            self.mse, self.emd, self.emd_r, self.srcc, self.lcc, self.count, self.digest
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "images {}  MSE {:.4}  EMD(r={}) {:.4}  SRCC {:.4}  LCC {:.4}  [config {}]",
            self.count, self.mse, self.emd_r, self.emd, self.srcc, self.lcc, self.digest
        )
    }
}
