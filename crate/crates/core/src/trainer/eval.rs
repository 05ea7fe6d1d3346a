use rayon::prelude::*;

use crate::data::{Sample, ScoreDistribution};
use crate::losses::{emd_loss, sample_loss, total_loss, LossConfig, LossParts};
use crate::model::{Model, ModelParams};
use crate::stats::{lcc, mse, srcc, MetricsReport};
use crate::{Error, Result};

/// Evaluation-mode output for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePrediction {
    pub image_id: String,
    pub distribution: ScoreDistribution,
    pub expected_score: f64,
    pub target_mean: f64,
    pub emd: f64,
}

impl ImagePrediction {
    /// `id TAB expected TAB target TAB emd TAB p1,..,p5`.
    pub fn to_line(&self) -> String {
        let probs: Vec<String> = self.distribution.probs().iter().map(|p| format!("{p:e}")).collect();
        format!(
            "{}\t{:e}\t{:e}\t{:e}\t{}",
            self.image_id,
            self.expected_score,
            self.target_mean,
            self.emd,
            probs.join(",")
        )
    }
}

/// Dropout-free predictions and metrics; EMD uses exponent `r`.
pub fn evaluate(
    model: &Model,
    params: &ModelParams,
    samples: &[Sample],
    r: f64,
) -> Result<(MetricsReport, Vec<ImagePrediction>)> {
    if samples.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    model.check_params(params)?;
    let preds: Vec<ImagePrediction> = samples
        .par_iter()
        .map(|s| {
            let p = model.predict(params, &s.input, &s.saliency)?;
            Ok(ImagePrediction {
                image_id: s.id().to_string(),
                emd: emd_loss(&s.distribution, &p.distribution, r)?,
                expected_score: p.expected_score(),
                target_mean: s.mean_score,
                distribution: p.distribution,
            })
        })
        .collect::<Result<_>>()?;
    let predicted: Vec<f64> = preds.iter().map(|p| p.expected_score).collect();
    let target: Vec<f64> = preds.iter().map(|p| p.target_mean).collect();
    let report = MetricsReport {
        mse: mse(&predicted, &target)?,
        emd: preds.iter().map(|p| p.emd).sum::<f64>() / preds.len() as f64,
        emd_r: r,
        srcc: srcc(&predicted, &target)?,
        lcc: lcc(&predicted, &target)?,
        count: preds.len(),
        digest: model.config().digest(),
    };
    Ok((report, preds))
}

/// Dropout-free training objective over `samples`.
pub fn evaluate_loss(model: &Model, params: &ModelParams, samples: &[Sample], loss: &LossConfig) -> Result<LossParts> {
    let parts: Vec<LossParts> = samples
        .par_iter()
        .map(|s| {
            let p = model.predict(params, &s.input, &s.saliency)?;
            let attrs = p.attributes.as_ref().map(|a| (a, &s.annotation.attributes));
            Ok(sample_loss(&s.distribution, &p.distribution, s.beta, attrs, loss)?.parts)
        })
        .collect::<Result<_>>()?;
    Ok(total_loss(&parts))
}
