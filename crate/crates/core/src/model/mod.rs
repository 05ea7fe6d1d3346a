//! The pooling/fusion network: multi-pattern pooling with saliency vectors,
//! learned pattern weights, attentional attribute fusion, prediction heads and
//! an optional small convolutional stem, with hand-written reverse-mode gradients.

mod network;
mod params;
mod pool;
mod stem;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use network::{DropoutCtx, ForwardCache, InputGrads, Model, Prediction};
pub use params::{Conv, Linear, ModelParams};
pub use pool::{partition_avg_pool, partition_saliency_vector};
pub use stem::{stem_backward, stem_forward, StemCache, STEM_WIDTHS};

use crate::patterns::PARTITION_COUNTS;
use crate::{Error, Result, NUM_ATTRIBUTES, NUM_PATTERNS, NUM_SCORES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// Feature maps are read from feature files (or computed by the built-in
    /// cell-statistics provider for lone images).
    Precomputed,
    /// Feature maps come from the trainable convolutional stem.
    ToyStem,
}

impl FeatureSource {
    fn name(self) -> &'static str {
        match self {
            FeatureSource::Precomputed => "precomputed",
            FeatureSource::ToyStem => "toy_stem",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Pattern-vector dimension; split in half by the fusion module.
    pub c_prime: usize,
    pub use_multi_pattern: bool,
    pub use_saliency: bool,
    pub use_pattern_weights: bool,
    pub use_attribute_branch: bool,
    pub use_attention_fusion: bool,
    pub feature_source: FeatureSource,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 512,
            height: 7,
            width: 7,
            c_prime: 256,
            use_multi_pattern: true,
            use_saliency: true,
            use_pattern_weights: true,
            use_attribute_branch: true,
            use_attention_fusion: true,
            feature_source: FeatureSource::Precomputed,
        }
    }
}

impl ModelConfig {
    /// Small configuration used by tests and desk-scale runs.
    pub fn small(channels: usize, c_prime: usize) -> Self {
        Self {
            channels,
            c_prime,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::invalid("channels must be positive"));
        }
        if self.height < 3 || self.width < 3 {
            return Err(Error::invalid(format!(
                "feature grid {}x{} smaller than 3x3",
                self.height, self.width
            )));
        }
        if self.c_prime == 0 || !self.c_prime.is_multiple_of(2) {
            return Err(Error::invalid(format!("c_prime={} must be even and positive", self.c_prime)));
        }
        if !self.use_multi_pattern && (self.use_saliency || self.use_pattern_weights) {
            return Err(Error::invalid(
                "use_saliency and use_pattern_weights require use_multi_pattern",
            ));
        }
        Ok(())
    }

    pub fn num_patterns(&self) -> usize {
        NUM_PATTERNS
    }

    pub fn saliency_height(&self) -> usize {
        8 * self.height
    }

    pub fn saliency_width(&self) -> usize {
        8 * self.width
    }

    /// Input dimension of pattern `p`'s projection (1-based `p`).
    pub fn projection_input_dim(&self, p: usize) -> usize {
        let k = PARTITION_COUNTS[p - 1];
        let sal = if self.use_saliency {
            self.saliency_height() * self.saliency_width()
        } else {
            0
        };
        sal + k * self.channels
    }

    /// Image side length the stem needs to produce an H×W grid.
    pub fn stem_input_size(&self) -> (usize, usize) {
        let grow = |n: usize| (0..STEM_WIDTHS.len()).fold(n, |s, _| 2 * s);
        (grow(self.height), grow(self.width))
    }

    /// Canonical one-line description; the digest is derived from it.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "C={} H={} W={} c_prime={} P={} S={} A={} multi_pattern={} saliency={} pattern_weights={} attribute_branch={} attention_fusion={} feature_source={}",
            self.channels,
            self.height,
            self.width,
            self.c_prime,
            NUM_PATTERNS,
            NUM_SCORES,
            NUM_ATTRIBUTES,
            u8::from(self.use_multi_pattern),
            u8::from(self.use_saliency),
            u8::from(self.use_pattern_weights),
            u8::from(self.use_attribute_branch),
            u8::from(self.use_attention_fusion),
            self.feature_source.name(),
        );
        s
    }

    pub fn parse_canonical(line: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let bad = |m: String| Error::invalid(format!("model config `{line}`: {m}"));
        for kv in line.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("token {kv}")))?;
            let num = || v.parse::<usize>().map_err(|_| bad(format!("{k}={v}")));
            let flag = || match v {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(bad(format!("{k}={v}"))),
            };
            match k {
                "C" => cfg.channels = num()?,
                "H" => cfg.height = num()?,
                "W" => cfg.width = num()?,
                "c_prime" => cfg.c_prime = num()?,
                "P" | "S" | "A" => {
                    let expected = match k {
                        "P" => NUM_PATTERNS,
                        "S" => NUM_SCORES,
                        _ => NUM_ATTRIBUTES,
                    };
                    if num()? != expected {
                        return Err(bad(format!("{k}={v}, expected {expected}")));
                    }
                }
                "multi_pattern" => cfg.use_multi_pattern = flag()?,
                "saliency" => cfg.use_saliency = flag()?,
                "pattern_weights" => cfg.use_pattern_weights = flag()?,
                "attribute_branch" => cfg.use_attribute_branch = flag()?,
                "attention_fusion" => cfg.use_attention_fusion = flag()?,
                "feature_source" => {
                    cfg.feature_source = match v {
                        "precomputed" => FeatureSource::Precomputed,
                        "toy_stem" => FeatureSource::ToyStem,
                        _ => return Err(bad(format!("feature_source={v}"))),
                    }
                }
                _ => return Err(bad(format!("unknown key {k}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Short stable hash of [`ModelConfig::canonical`].
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.canonical().as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
