//! Domain types, file formats and the synthetic dataset generator.

mod annotations;
mod checkpoint;
mod dataset;
mod featfile;
pub mod synth;

use std::fmt;

pub use annotations::{format_annotation, load_annotations, parse_annotations, write_annotations};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, DType, TensorEntry};
pub use dataset::{
    atomic_write, cell_features, image_input, load_dataset, read_id_list, ModelInput, Sample, CELL_FEATURE_CHANNELS,
};
pub use featfile::{decode_feature_file, encode_feature_file, read_feature_file, write_feature_file};

use crate::{Error, Result, NUM_ATTRIBUTES, NUM_SCORES};

/// Attribute names, in annotation-file order.
pub const ATTRIBUTE_NAMES: [&str; NUM_ATTRIBUTES] = [
    "rule_of_thirds",
    "balancing_elements",
    "object_emphasis",
    "symmetry",
    "repetition",
];

/// One image with its five rater scores, attribute ratings and content categories.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedImage {
    pub image_id: String,
    pub scores: [u8; NUM_SCORES],
    pub attributes: [f64; NUM_ATTRIBUTES],
    pub categories: Vec<String>,
    pub image_path: Option<String>,
}

impl AnnotatedImage {
    pub fn validate(&self) -> Result<()> {
        if self.image_id.is_empty() || self.image_id.contains(char::is_whitespace) {
            return Err(Error::invalid(format!("bad image_id {:?}", self.image_id)));
        }
        validate_scores(&self.scores)?;
        validate_attributes(&self.attributes)?;
        if self.categories.iter().any(|c| c.trim().is_empty()) {
            return Err(Error::invalid("empty category name"));
        }
        Ok(())
    }

    pub fn mean_score(&self) -> f64 {
        // scores are validated on construction paths; fall back to the raw mean otherwise
        mean_score(&self.scores).unwrap_or_else(|_| raw_mean(&self.scores))
    }

    pub fn distribution(&self) -> ScoreDistribution {
        score_histogram(&self.scores).expect("validated scores")
    }
}

fn raw_mean(scores: &[u8]) -> f64 {
    scores.iter().map(|&s| f64::from(s)).sum::<f64>() / scores.len() as f64
}

pub(crate) fn validate_scores(scores: &[u8]) -> Result<()> {
    if scores.len() != NUM_SCORES {
        return Err(Error::invalid(format!(
            "expected {NUM_SCORES} scores, got {}",
            scores.len()
        )));
    }
    if let Some(s) = scores.iter().find(|&&s| !(1..=5).contains(&s)) {
        return Err(Error::invalid(format!("score {s} outside [1,5]")));
    }
    Ok(())
}

pub(crate) fn validate_attributes(attrs: &[f64]) -> Result<()> {
    if attrs.len() != NUM_ATTRIBUTES {
        return Err(Error::invalid(format!(
            "expected {NUM_ATTRIBUTES} attributes, got {}",
            attrs.len()
        )));
    }
    for (name, &a) in ATTRIBUTE_NAMES.iter().zip(attrs) {
        if !a.is_finite() || !(-1.0..=1.0).contains(&a) {
            return Err(Error::invalid(format!("attribute {name}={a} outside [-1,1]")));
        }
    }
    Ok(())
}

/// Composition mean score: the arithmetic mean of the rater scores.
pub fn mean_score(scores: &[u8]) -> Result<f64> {
    validate_scores(scores)?;
    Ok(raw_mean(scores))
}

/// Ground-truth distribution: fraction of raters giving each score.
pub fn score_histogram(scores: &[u8]) -> Result<ScoreDistribution> {
    validate_scores(scores)?;
    let mut probs = [0.0; NUM_SCORES];
    for &s in scores {
        probs[usize::from(s) - 1] += 1.0;
    }
    for p in &mut probs {
        *p /= scores.len() as f64;
    }
    Ok(ScoreDistribution { probs })
}

/// Probability vector over the five score bins.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreDistribution {
    probs: [f64; NUM_SCORES],
}

impl ScoreDistribution {
    pub fn new(probs: [f64; NUM_SCORES]) -> Result<Self> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid(format!("negative or non-finite probability in {probs:?}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    pub fn uniform() -> Self {
        Self {
            probs: [1.0 / NUM_SCORES as f64; NUM_SCORES],
        }
    }

    /// One-hot distribution on `score` (1-based).
    pub fn one_hot(score: usize) -> Result<Self> {
        if !(1..=NUM_SCORES).contains(&score) {
            return Err(Error::invalid(format!("score {score} outside [1,{NUM_SCORES}]")));
        }
        let mut probs = [0.0; NUM_SCORES];
        probs[score - 1] = 1.0;
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64; NUM_SCORES] {
        &self.probs
    }

    pub fn cdf(&self) -> [f64; NUM_SCORES] {
        let mut acc = 0.0;
        let mut out = [0.0; NUM_SCORES];
        for (o, p) in out.iter_mut().zip(&self.probs) {
            acc += p;
            *o = acc;
        }
        out
    }

    /// Expected score `Σ i·p_i` on the 1-based scale. Probabilities are scaled by the
    /// rater count first, so a rater histogram reproduces `mean_score` bit for bit.
    pub fn expected_score(&self) -> f64 {
        let n = NUM_SCORES as f64;
        self.probs
            .iter()
            .enumerate()
            .map(|(i, p)| (i + 1) as f64 * (p * n))
            .sum::<f64>()
            / n
    }
}

impl fmt::Display for ScoreDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.probs.iter().map(|p| format!("{p:.4}")).collect();
        write!(f, "({})", parts.join(", "))
    }
}

/// C×H×W activation grid, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::invalid("feature map needs at least one channel"));
        }
        if height < 3 || width < 3 {
            return Err(Error::invalid(format!(
                "feature map {height}x{width} smaller than 3x3"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "feature map {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(channels, height, width, vec![0.0; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.height + i) * self.width + j]
    }
}

/// Saliency values on the fine grid paired with a feature map (8× its resolution).
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyGrid {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SaliencyGrid {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("empty saliency grid"));
        }
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "saliency grid {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("saliency value outside [0,1]"));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Checks the 8× resolution contract against a feature grid.
    pub fn check_pairs_with(&self, height: usize, width: usize) -> Result<()> {
        if self.height != 8 * height || self.width != 8 * width {
            return Err(Error::Shape(format!(
                "saliency grid {}x{} does not pair with {height}x{width} features (needs {}x{})",
                self.height,
                self.width,
                8 * height,
                8 * width
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_score_examples() {
        assert_eq!(mean_score(&[3, 3, 3, 3, 3]).unwrap(), 3.0);
        assert_eq!(mean_score(&[1, 2, 3, 4, 5]).unwrap(), 3.0);
        assert!((mean_score(&[5, 5, 5, 5, 4]).unwrap() - 4.8).abs() < 1e-12);
        assert!(mean_score(&[1, 2, 3, 4]).is_err());
        assert!(mean_score(&[1, 2, 3, 4, 6]).is_err());
        assert!(mean_score(&[0, 2, 3, 4, 5]).is_err());
    }

    #[test]
    fn histogram_examples() {
        let h = score_histogram(&[1, 1, 2, 2, 3]).unwrap();
        assert_eq!(h.probs(), &[0.4, 0.4, 0.2, 0.0, 0.0]);
        let h = score_histogram(&[5, 5, 5, 5, 5]).unwrap();
        assert_eq!(h.probs(), &[0.0, 0.0, 0.0, 0.0, 1.0]);
        let h = score_histogram(&[1, 3, 3, 4, 5]).unwrap();
        assert_eq!(h.probs(), &[0.2, 0.0, 0.4, 0.2, 0.2]);
    }

    #[test]
    fn distribution_validation() {
        assert!(ScoreDistribution::new([0.5, 0.5, 0.0, 0.0, 0.0]).is_ok());
        assert!(ScoreDistribution::new([0.5, 0.6, 0.0, 0.0, 0.0]).is_err());
        assert!(ScoreDistribution::new([1.5, -0.5, 0.0, 0.0, 0.0]).is_err());
        assert!(ScoreDistribution::one_hot(0).is_err());
        assert_eq!(ScoreDistribution::one_hot(3).unwrap().expected_score(), 3.0);
    }

    #[test]
    fn feature_map_invariants() {
        assert!(FeatureMap::zeros(2, 2, 5).is_err());
        assert!(FeatureMap::new(1, 3, 3, vec![0.0; 8]).is_err());
        assert!(FeatureMap::new(1, 3, 3, vec![f64::NAN; 9]).is_err());
        let f = FeatureMap::new(2, 3, 3, (0..18).map(f64::from).collect()).unwrap();
        assert_eq!(f.get(1, 2, 0), 15.0);
    }

    #[test]
    fn saliency_grid_pairing() {
        let g = SaliencyGrid::zeros(56, 56);
        assert!(g.check_pairs_with(7, 7).is_ok());
        assert!(g.check_pairs_with(7, 6).is_err());
        assert!(SaliencyGrid::new(2, 2, vec![0.0, 1.0, 0.5, 1.5]).is_err());
    }
}
