//! Normalized EMD, weighted EMD, attribute MSE and the combined objective.

use serde::{Deserialize, Serialize};

use crate::data::ScoreDistribution;
use crate::{Error, Result, NUM_ATTRIBUTES, NUM_SCORES};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// EMD exponent.
    pub r: f64,
    /// Weight of the attribute MSE term.
    pub lambda: f64,
    pub use_weighted_emd: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            r: 2.0,
            lambda: 0.1,
            use_weighted_emd: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r >= 1.0 && self.r.is_finite()) {
            return Err(Error::invalid(format!("EMD exponent r={} must be >= 1", self.r)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda={} must be >= 0", self.lambda)));
        }
        Ok(())
    }
}

fn cdf_gaps(y: &ScoreDistribution, yhat: &ScoreDistribution) -> [f64; NUM_SCORES] {
    let (a, b) = (y.cdf(), yhat.cdf());
    let mut d = [0.0; NUM_SCORES];
    for s in 0..NUM_SCORES {
        d[s] = a[s] - b[s];
    }
    d
}

/// `((1/S) Σ_s |CDF_y(s) − CDF_ŷ(s)|^r)^(1/r)`.
pub fn emd_loss(y: &ScoreDistribution, yhat: &ScoreDistribution, r: f64) -> Result<f64> {
    if !(r >= 1.0 && r.is_finite()) {
        return Err(Error::invalid(format!("EMD exponent r={r} must be >= 1")));
    }
    let d = cdf_gaps(y, yhat);
    let mean = d.iter().map(|x| x.abs().powf(r)).sum::<f64>() / NUM_SCORES as f64;
    Ok(mean.powf(1.0 / r))
}

/// Gradient of [`emd_loss`] with respect to `yhat`.
///
/// For r = 2 this is `−(1/(S·L)) Σ_{s≥i} d_s`. At L = 0 the zero vector is returned.
pub fn emd_grad(y: &ScoreDistribution, yhat: &ScoreDistribution, r: f64) -> Result<[f64; NUM_SCORES]> {
    let loss = emd_loss(y, yhat, r)?;
    let mut g = [0.0; NUM_SCORES];
    if loss == 0.0 {
        return Ok(g);
    }
    let d = cdf_gaps(y, yhat);
    // dL/dd_s = (1/S) L^(1-r) |d_s|^(r-1) sign(d_s), and dd_s/dŷ_i = -[i <= s]
    let coef = loss.powf(1.0 - r) / NUM_SCORES as f64;
    let per_gap: Vec<f64> = d
        .iter()
        .map(|x| coef * x.abs().powf(r - 1.0) * x.signum())
        .collect();
    let mut acc = 0.0;
    for i in (0..NUM_SCORES).rev() {
        acc += per_gap[i];
        g[i] = -acc;
    }
    Ok(g)
}

pub fn weighted_emd_loss(
    y: &ScoreDistribution,
    yhat: &ScoreDistribution,
    beta: f64,
    r: f64,
) -> Result<f64> {
    check_beta(beta)?;
    Ok(beta * emd_loss(y, yhat, r)?)
}

pub fn weighted_emd_grad(
    y: &ScoreDistribution,
    yhat: &ScoreDistribution,
    beta: f64,
    r: f64,
) -> Result<[f64; NUM_SCORES]> {
    check_beta(beta)?;
    let mut g = emd_grad(y, yhat, r)?;
    g.iter_mut().for_each(|v| *v *= beta);
    Ok(g)
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("sample weight beta={beta} must be positive")));
    }
    Ok(())
}

/// Mean squared error over the attribute vector.
pub fn attribute_loss(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "attribute vectors of length {} and {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.iter().chain(gt).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite attribute value"));
    }
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (p - g) * (p - g))
        .sum::<f64>()
        / pred.len() as f64)
}

pub fn attribute_grad(pred: &[f64], gt: &[f64]) -> Result<Vec<f64>> {
    attribute_loss(pred, gt)?;
    let n = pred.len() as f64;
    Ok(pred.iter().zip(gt).map(|(p, g)| 2.0 * (p - g) / n).collect())
}

/// Loss terms of one sample.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    /// β-weighted EMD (β = 1 when weighting is off).
    pub wemd: f64,
    /// Attribute MSE, zero when the attribute branch is off.
    pub atts: f64,
    pub total: f64,
}

/// Per-sample loss and gradients with respect to the predicted distribution and attributes.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleLoss {
    pub parts: LossParts,
    pub grad_dist: [f64; NUM_SCORES],
    pub grad_attrs: Option<[f64; NUM_ATTRIBUTES]>,
}

/// `β·EMD + λ·MSE` for one sample. Pass `None` attributes when the attribute branch is off.
pub fn sample_loss(
    y: &ScoreDistribution,
    yhat: &ScoreDistribution,
    beta: f64,
    attrs: Option<(&[f64; NUM_ATTRIBUTES], &[f64; NUM_ATTRIBUTES])>,
    cfg: &LossConfig,
) -> Result<SampleLoss> {
    cfg.validate()?;
    let beta = if cfg.use_weighted_emd { beta } else { 1.0 };
    let wemd = weighted_emd_loss(y, yhat, beta, cfg.r)?;
    let grad_dist = weighted_emd_grad(y, yhat, beta, cfg.r)?;
    let (atts, grad_attrs) = match attrs {
        Some((pred, gt)) => {
            let l = attribute_loss(pred, gt)?;
            let g = attribute_grad(pred, gt)?;
            let mut arr = [0.0; NUM_ATTRIBUTES];
            for (a, v) in arr.iter_mut().zip(g) {
                *a = cfg.lambda * v;
            }
            (l, Some(arr))
        }
        None => (0.0, None),
    };
    Ok(SampleLoss {
        parts: LossParts {
            wemd,
            atts,
            total: wemd + cfg.lambda * atts,
        },
        grad_dist,
        grad_attrs,
    })
}

/// Batch objective: the index-ascending mean of per-sample `wEMD + λ·MSE`.
pub fn total_loss(parts: &[LossParts]) -> LossParts {
    let n = parts.len().max(1) as f64;
    let mut acc = LossParts::default();
    for p in parts {
        acc.wemd += p.wemd;
        acc.atts += p.atts;
        acc.total += p.total;
    }
    LossParts {
        wemd: acc.wemd / n,
        atts: acc.atts / n,
        total: acc.total / n,
    }
}
