use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::pool::avg_pool_raw;
use super::stem::{stem_backward, stem_forward, StemCache};
use super::{FeatureSource, ModelConfig, ModelParams};
use crate::data::{FeatureMap, ModelInput, SaliencyGrid, ScoreDistribution};
use crate::patterns::all_patterns;
use crate::{Error, Result, NUM_ATTRIBUTES, NUM_PATTERNS, NUM_SCORES};

/// Training-mode dropout: the rate and the RNG the masks are drawn from.
pub struct DropoutCtx<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

/// Output of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub distribution: ScoreDistribution,
    pub attributes: Option<[f64; NUM_ATTRIBUTES]>,
    /// Pattern weights `w_p` (uniform when the gate is disabled).
    pub pattern_weights: Vec<f64>,
    /// Attention coefficients `(e1, e2)`.
    pub attention: [f64; 2],
}

impl Prediction {
    pub fn expected_score(&self) -> f64 {
        self.distribution.expected_score()
    }

    /// 1-based id of the largest pattern weight; ties resolve to the lowest id.
    pub fn dominant_pattern(&self) -> usize {
        let mut best = 0;
        for (p, w) in self.pattern_weights.iter().enumerate() {
            if *w > self.pattern_weights[best] {
                best = p;
            }
        }
        best + 1
    }
}

/// Input to a linear layer after dropout, with the mask needed to route gradients back.
#[derive(Clone, Debug, PartialEq)]
struct Dropped {
    values: Vec<f64>,
    /// Per-element scale (0 or 1/(1-rate)); `None` in evaluation mode.
    mask: Option<Vec<f64>>,
}

impl Dropped {
    fn apply(x: &[f64], dropout: &mut Option<DropoutCtx<'_>>) -> Self {
        match dropout {
            Some(ctx) if ctx.rate > 0.0 => {
                let keep = 1.0 / (1.0 - ctx.rate);
                let mask: Vec<f64> = x
                    .iter()
                    .map(|_| if ctx.rng.gen::<f64>() < ctx.rate { 0.0 } else { keep })
                    .collect();
                let values = x.iter().zip(&mask).map(|(v, m)| v * m).collect();
                Self {
                    values,
                    mask: Some(mask),
                }
            }
            _ => Self {
                values: x.to_vec(),
                mask: None,
            },
        }
    }

    fn route(&self, mut g: Vec<f64>) -> Vec<f64> {
        if let Some(mask) = &self.mask {
            g.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
        }
        g
    }
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardCache {
    config_digest: String,
    stem: Option<StemCache>,
    features: Vec<f64>,
    proj_in: Vec<Dropped>,
    proj_pre: Vec<Vec<f64>>,
    proj_out: Vec<Vec<f64>>,
    gate_in: Option<Dropped>,
    weights: Vec<f64>,
    comp_in: Dropped,
    atts_in: Dropped,
    comp: Vec<f64>,
    atts: Vec<f64>,
    attn_in: Option<Dropped>,
    attention: [f64; 2],
    dist_in: Dropped,
    probs: Vec<f64>,
    attr_in: Option<Dropped>,
}

impl ForwardCache {
    /// On/off state of every ReLU in the graph.
    pub fn activation_signature(&self) -> Vec<bool> {
        let mut sig: Vec<bool> = self
            .stem
            .as_ref()
            .map(StemCache::activation_signature)
            .unwrap_or_default();
        sig.extend(self.proj_pre.iter().flatten().map(|&v| v > 0.0));
        sig
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }
}

/// Gradients with respect to the network inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct InputGrads {
    /// `dL/dF`, channel-major like the feature map.
    pub features: Vec<f64>,
    /// `dL/d(saliency grid)`, row-major; all zeros when saliency is disabled.
    pub saliency: Vec<f64>,
}

/// A configured network with its partition tables precomputed.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    /// `[pattern][partition]` → feature-grid cells.
    feat_cells: Vec<Vec<Vec<usize>>>,
    /// `[pattern][partition]` → saliency-grid cells, row-major.
    sal_cells: Vec<Vec<Vec<usize>>>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn softmax_backward(probs: &[f64], g: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(g).map(|(p, gv)| p * gv).sum();
    probs.iter().zip(g).map(|(p, gv)| p * (gv - dot)).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let feat = all_patterns(config.height, config.width)?;
        let sal = all_patterns(config.saliency_height(), config.saliency_width())?;
        Ok(Self {
            feat_cells: feat.iter().map(|m| m.all_cells()).collect(),
            sal_cells: sal.iter().map(|m| m.all_cells()).collect(),
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Checks every tensor shape against the configuration.
    pub fn check_params(&self, params: &ModelParams) -> Result<()> {
        let expected = ModelParams::zeros(&self.config)?;
        let want = expected.tensors();
        let have = params.tensors();
        if want.len() != have.len() {
            return Err(Error::Shape(format!(
                "parameter set has {} tensors, config needs {}",
                have.len(),
                want.len()
            )));
        }
        for ((wn, ws, _), (hn, hs, hd)) in want.iter().zip(&have) {
            let count: usize = ws.iter().product();
            if wn != hn || ws != hs || hd.len() != count {
                return Err(Error::Shape(format!(
                    "tensor {hn} {hs:?} does not match expected {wn} {ws:?}"
                )));
            }
        }
        Ok(())
    }

    fn features_for(
        &self,
        params: &ModelParams,
        input: &ModelInput,
    ) -> Result<(Vec<f64>, Option<StemCache>)> {
        let cfg = &self.config;
        match (cfg.feature_source, input) {
            (FeatureSource::Precomputed, ModelInput::Features(f)) => {
                if (f.channels(), f.height(), f.width()) != (cfg.channels, cfg.height, cfg.width) {
                    return Err(Error::Shape(format!(
                        "feature map {}x{}x{} does not match config {}x{}x{}",
                        f.channels(),
                        f.height(),
                        f.width(),
                        cfg.channels,
                        cfg.height,
                        cfg.width
                    )));
                }
                Ok((f.data().to_vec(), None))
            }
            (FeatureSource::ToyStem, ModelInput::Image(img)) => {
                let want = cfg.stem_input_size();
                if (img.height(), img.width()) != want {
                    return Err(Error::Shape(format!(
                        "stem needs a {}x{} image, got {}x{}",
                        want.0,
                        want.1,
                        img.height(),
                        img.width()
                    )));
                }
                let (out, dims, cache) = stem_forward(&params.stem, img)?;
                debug_assert_eq!(dims, (cfg.channels, cfg.height, cfg.width));
                Ok((out, Some(cache)))
            }
            (FeatureSource::Precomputed, ModelInput::Image(_)) => Err(Error::invalid(
                "model reads precomputed features but was given an image",
            )),
            (FeatureSource::ToyStem, ModelInput::Features(_)) => Err(Error::invalid(
                "model uses the toy stem but was given a feature map",
            )),
        }
    }

    /// Forward pass. With `dropout = None` the network runs in evaluation mode.
    pub fn forward(
        &self,
        params: &ModelParams,
        input: &ModelInput,
        saliency: &SaliencyGrid,
        mut dropout: Option<DropoutCtx<'_>>,
    ) -> Result<(Prediction, ForwardCache)> {
        let cfg = &self.config;
        let (features, stem) = self.features_for(params, input)?;
        if cfg.use_saliency {
            saliency.check_pairs_with(cfg.height, cfg.width)?;
        }
        let hw = cfg.height * cfg.width;
        let gap = avg_pool_raw(&features, cfg.channels, hw, &(0..hw).collect::<Vec<_>>());

        let mut proj_in = Vec::with_capacity(params.proj.len());
        let mut proj_pre = Vec::with_capacity(params.proj.len());
        let mut proj_out = Vec::with_capacity(params.proj.len());
        if cfg.use_multi_pattern {
            for p in 0..NUM_PATTERNS {
                let mut x = Vec::with_capacity(params.proj[p].inputs);
                for (k, cells) in self.feat_cells[p].iter().enumerate() {
                    if cfg.use_saliency {
                        x.extend(self.sal_cells[p][k].iter().map(|&c| saliency.values()[c]));
                    }
                    x.extend(avg_pool_raw(&features, cfg.channels, hw, cells));
                }
                proj_in.push(Dropped::apply(&x, &mut dropout));
            }
        } else {
            proj_in.push(Dropped::apply(&gap, &mut dropout));
        }
        for (layer, x) in params.proj.iter().zip(&proj_in) {
            let z = layer.forward(&x.values);
            proj_out.push(z.iter().map(|&v| v.max(0.0)).collect::<Vec<f64>>());
            proj_pre.push(z);
        }

        let (gate_in, weights) = match &params.gate {
            Some(gate) => {
                let d = Dropped::apply(&gap, &mut dropout);
                let w = softmax(&gate.forward(&d.values));
                (Some(d), w)
            }
            None => (None, vec![1.0 / proj_out.len() as f64; proj_out.len()]),
        };

        let mut f_samp = vec![0.0; cfg.c_prime];
        for (w, f) in weights.iter().zip(&proj_out) {
            for (acc, v) in f_samp.iter_mut().zip(f) {
                *acc += w * v;
            }
        }

        let comp_in = Dropped::apply(&f_samp, &mut dropout);
        let atts_in = Dropped::apply(&f_samp, &mut dropout);
        let comp = params.comp.forward(&comp_in.values);
        let atts = params.atts.forward(&atts_in.values);

        let (attn_in, attention) = match &params.attn {
            Some(attn) => {
                let joined: Vec<f64> = comp.iter().chain(&atts).copied().collect();
                let d = Dropped::apply(&joined, &mut dropout);
                let e = attn.forward(&d.values);
                (Some(d), [sigmoid(e[0]), sigmoid(e[1])])
            }
            None => (None, [1.0, 1.0]),
        };
        let fused: Vec<f64> = comp
            .iter()
            .map(|v| attention[0] * v)
            .chain(atts.iter().map(|v| attention[1] * v))
            .collect();

        let dist_in = Dropped::apply(&fused, &mut dropout);
        let probs = softmax(&params.dist.forward(&dist_in.values));

        let (attr_in, attributes) = match &params.attr {
            Some(head) => {
                let d = Dropped::apply(&atts, &mut dropout);
                let out = head.forward(&d.values);
                let mut arr = [0.0; NUM_ATTRIBUTES];
                arr.copy_from_slice(&out);
                (Some(d), Some(arr))
            }
            None => (None, None),
        };

        let mut p = [0.0; NUM_SCORES];
        p.copy_from_slice(&probs);
        let distribution = ScoreDistribution::new(p).map_err(|e| {
            Error::Numeric(format!("forward pass produced an invalid distribution: {e}"))
        })?;
        let prediction = Prediction {
            distribution,
            attributes,
            pattern_weights: if cfg.use_multi_pattern {
                weights.clone()
            } else {
                vec![1.0 / NUM_PATTERNS as f64; NUM_PATTERNS]
            },
            attention,
        };
        let cache = ForwardCache {
            config_digest: cfg.digest(),
            stem,
            features,
            proj_in,
            proj_pre,
            proj_out,
            gate_in,
            weights,
            comp_in,
            atts_in,
            comp,
            atts,
            attn_in,
            attention,
            dist_in,
            probs,
            attr_in,
        };
        Ok((prediction, cache))
    }

    /// Reverse pass. `grad_dist` is `dL/dŷ` (probabilities), `grad_attrs` is `dL/d(attributes)`.
    /// Parameter gradients are added into `grads`.
    pub fn backward(
        &self,
        params: &ModelParams,
        cache: &ForwardCache,
        grad_dist: &[f64; NUM_SCORES],
        grad_attrs: Option<&[f64; NUM_ATTRIBUTES]>,
        grads: &mut ModelParams,
    ) -> Result<InputGrads> {
        let cfg = &self.config;
        if cache.config_digest != cfg.digest() {
            return Err(Error::Shape("forward cache was produced by a different graph".into()));
        }
        if grad_attrs.is_some() && params.attr.is_none() {
            return Err(Error::invalid("attribute gradient given but the attribute branch is off"));
        }
        let half = cfg.c_prime / 2;

        // distribution head
        let g_logits = softmax_backward(&cache.probs, grad_dist);
        let g_fused = cache
            .dist_in
            .route(params.dist.backward(&cache.dist_in.values, &g_logits, &mut grads.dist, true));

        // fusion
        let [e1, e2] = cache.attention;
        let mut g_comp: Vec<f64> = g_fused[..half].iter().map(|g| e1 * g).collect();
        let mut g_atts: Vec<f64> = g_fused[half..].iter().map(|g| e2 * g).collect();

        if let (Some(head), Some(gattr), Some(d)) = (&params.attr, grad_attrs, &cache.attr_in) {
            let g = d.route(head.backward(
                &d.values,
                gattr,
                grads.attr.as_mut().expect("grads mirror params"),
                true,
            ));
            g_atts.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }

        if let (Some(attn), Some(d)) = (&params.attn, &cache.attn_in) {
            let g_e1: f64 = g_fused[..half].iter().zip(&cache.comp).map(|(g, c)| g * c).sum();
            let g_e2: f64 = g_fused[half..].iter().zip(&cache.atts).map(|(g, a)| g * a).sum();
            let g_el = [g_e1 * e1 * (1.0 - e1), g_e2 * e2 * (1.0 - e2)];
            let g_joined = d.route(attn.backward(
                &d.values,
                &g_el,
                grads.attn.as_mut().expect("grads mirror params"),
                true,
            ));
            g_comp.iter_mut().zip(&g_joined[..half]).for_each(|(a, b)| *a += b);
            g_atts.iter_mut().zip(&g_joined[half..]).for_each(|(a, b)| *a += b);
        }

        let g_from_comp = cache
            .comp_in
            .route(params.comp.backward(&cache.comp_in.values, &g_comp, &mut grads.comp, true));
        let g_from_atts = cache
            .atts_in
            .route(params.atts.backward(&cache.atts_in.values, &g_atts, &mut grads.atts, true));
        let g_samp: Vec<f64> = g_from_comp.iter().zip(&g_from_atts).map(|(a, b)| a + b).collect();

        let hw = cfg.height * cfg.width;
        let mut g_features = vec![0.0; cfg.channels * hw];
        let mut g_saliency = vec![0.0; cfg.saliency_height() * cfg.saliency_width()];
        let spread_gap = |g_features: &mut Vec<f64>, g_gap: &[f64]| {
            for (c, g) in g_gap.iter().enumerate() {
                for v in &mut g_features[c * hw..(c + 1) * hw] {
                    *v += g / hw as f64;
                }
            }
        };

        // pattern weights
        if let (Some(gate), Some(d)) = (&params.gate, &cache.gate_in) {
            let g_w: Vec<f64> = cache
                .proj_out
                .iter()
                .map(|f| f.iter().zip(&g_samp).map(|(a, b)| a * b).sum())
                .collect();
            let g_logits = softmax_backward(&cache.weights, &g_w);
            let g_gap = d.route(gate.backward(
                &d.values,
                &g_logits,
                grads.gate.as_mut().expect("grads mirror params"),
                true,
            ));
            spread_gap(&mut g_features, &g_gap);
        }

        // pattern projections
        for (idx, layer) in params.proj.iter().enumerate() {
            let w = cache.weights[idx];
            let g_z: Vec<f64> = g_samp
                .iter()
                .zip(&cache.proj_pre[idx])
                .map(|(g, &z)| if z > 0.0 { w * g } else { 0.0 })
                .collect();
            let d = &cache.proj_in[idx];
            let g_x = d.route(layer.backward(&d.values, &g_z, &mut grads.proj[idx], true));
            if !cfg.use_multi_pattern {
                spread_gap(&mut g_features, &g_x);
                continue;
            }
            let mut offset = 0;
            for (k, cells) in self.feat_cells[idx].iter().enumerate() {
                if cfg.use_saliency {
                    for &c in &self.sal_cells[idx][k] {
                        g_saliency[c] += g_x[offset];
                        offset += 1;
                    }
                }
                let n = cells.len() as f64;
                for ch in 0..cfg.channels {
                    let g = g_x[offset + ch] / n;
                    for &cell in cells {
                        g_features[ch * hw + cell] += g;
                    }
                }
                offset += cfg.channels;
            }
        }

        if let Some(stem_cache) = &cache.stem {
            stem_backward(&params.stem, stem_cache, &g_features, &mut grads.stem);
        }
        Ok(InputGrads {
            features: g_features,
            saliency: g_saliency,
        })
    }

    /// Convenience: evaluation-mode prediction.
    pub fn predict(
        &self,
        params: &ModelParams,
        input: &ModelInput,
        saliency: &SaliencyGrid,
    ) -> Result<Prediction> {
        Ok(self.forward(params, input, saliency, None)?.0)
    }

    /// Feature map seen by SAMP for this input (stem output or the given features).
    pub fn feature_map(&self, params: &ModelParams, input: &ModelInput) -> Result<FeatureMap> {
        let (data, _) = self.features_for(params, input)?;
        FeatureMap::new(self.config.channels, self.config.height, self.config.width, data)
    }
}
