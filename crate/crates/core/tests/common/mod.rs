#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use samp_core::data::{FeatureMap, ModelInput, SaliencyGrid, ScoreDistribution};
use samp_core::losses::{sample_loss, LossConfig};
use samp_core::model::{FeatureSource, Model, ModelConfig, ModelParams};
use samp_core::raster::Raster;

pub const EPS: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

#[derive(Debug, Default)]
pub struct CheckStats {
    pub checked: usize,
    pub skipped: usize,
    pub worst: f64,
    pub worst_at: String,
}

impl CheckStats {
    pub fn record(&mut self, name: String, analytic: f64, numeric: f64) {
        self.checked += 1;
        let e = rel_err(analytic, numeric);
        if e > self.worst {
            self.worst = e;
            self.worst_at = format!("{name}: analytic {analytic:e} numeric {numeric:e}");
        }
    }

    pub fn merge(&mut self, other: CheckStats) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        if other.worst > self.worst {
            self.worst = other.worst;
            self.worst_at = other.worst_at;
        }
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.worst < TOLERANCE && self.skipped * 2 < self.checked + self.skipped
    }
}

pub fn softmax(z: &[f64]) -> [f64; 5] {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    let mut out = [0.0; 5];
    for (o, v) in out.iter_mut().zip(e) {
        *o = v / s;
    }
    out
}

/// Pulls `dL/dp` back through a softmax to the logits.
pub fn softmax_pullback(p: &[f64; 5], g: &[f64; 5]) -> [f64; 5] {
    let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    let mut out = [0.0; 5];
    for i in 0..5 {
        out[i] = p[i] * (g[i] - dot);
    }
    out
}

pub fn random_distribution(rng: &mut ChaCha8Rng) -> ScoreDistribution {
    let z: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
    ScoreDistribution::new(softmax(&z)).unwrap()
}

/// A network fixture with random inputs, targets and perturbed parameters.
pub struct Fixture {
    pub model: Model,
    pub params: ModelParams,
    pub input: ModelInput,
    pub saliency: SaliencyGrid,
    pub target: ScoreDistribution,
    pub attrs: [f64; 5],
    pub beta: f64,
    pub loss: LossConfig,
}

pub fn gradient_config(source: FeatureSource) -> ModelConfig {
    let mut c = ModelConfig::small(8, 16);
    c.feature_source = source;
    c
}

pub fn fixture(config: ModelConfig, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::init(&config, seed).unwrap();
    for (_, t) in params.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
    let input = match config.feature_source {
        FeatureSource::Precomputed => {
            let n = config.channels * config.height * config.width;
            let data = (0..n).map(|_| rng.gen_range(0.0..1.5)).collect();
            ModelInput::Features(FeatureMap::new(config.channels, config.height, config.width, data).unwrap())
        }
        FeatureSource::ToyStem => {
            let (h, w) = config.stem_input_size();
            let data = (0..h * w * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
            ModelInput::Image(Raster::new(h, w, 3, data).unwrap())
        }
    };
    let (sh, sw) = (config.saliency_height(), config.saliency_width());
    let saliency = SaliencyGrid::new(sh, sw, (0..sh * sw).map(|_| rng.gen_range(0.1..0.9)).collect()).unwrap();
    let target = random_distribution(&mut rng);
    let mut attrs = [0.0; 5];
    attrs.iter_mut().for_each(|a| *a = rng.gen_range(-1.0..1.0));
    Fixture {
        model: Model::new(config).unwrap(),
        params,
        input,
        saliency,
        target,
        attrs,
        beta: 1.7,
        loss: LossConfig {
            r: 2.0,
            lambda: 0.1,
            use_weighted_emd: true,
        },
    }
}

impl Fixture {
    /// Loss and activation signature at the given parameters and inputs.
    pub fn eval(&self, params: &ModelParams, input: &ModelInput, saliency: &SaliencyGrid) -> (f64, Vec<bool>) {
        let (pred, cache) = self.model.forward(params, input, saliency, None).unwrap();
        let attrs = pred.attributes.as_ref().map(|a| (a, &self.attrs));
        let loss = sample_loss(&self.target, &pred.distribution, self.beta, attrs, &self.loss).unwrap();
        (loss.parts.total, cache.activation_signature())
    }

    /// Finite-difference check of every parameter tensor at `per_tensor` sampled coordinates,
    /// plus `input_coords` feature/pixel and saliency coordinates.
    pub fn check(&self, per_tensor: usize, input_coords: usize, seed: u64) -> CheckStats {
        let (pred, cache) = self
            .model
            .forward(&self.params, &self.input, &self.saliency, None)
            .unwrap();
        let attrs = pred.attributes.as_ref().map(|a| (a, &self.attrs));
        let loss = sample_loss(&self.target, &pred.distribution, self.beta, attrs, &self.loss).unwrap();
        let mut grads = self.params.zeros_like();
        let input_grads = self
            .model
            .backward(&self.params, &cache, &loss.grad_dist, loss.grad_attrs.as_ref(), &mut grads)
            .unwrap();
        let base_sig = cache.activation_signature();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stats = CheckStats::default();

        let analytic: Vec<(String, Vec<f64>)> = grads
            .tensors()
            .into_iter()
            .map(|(n, _, d)| (n, d.to_vec()))
            .collect();
        for (t, (name, g)) in analytic.iter().enumerate() {
            for _ in 0..per_tensor.min(g.len()) {
                let k = rng.gen_range(0..g.len());
                let probe = |delta: f64| {
                    let mut p = self.params.clone();
                    p.tensors_mut()[t].1[k] += delta;
                    self.eval(&p, &self.input, &self.saliency)
                };
                let ((lp, sp), (lm, sm)) = (probe(EPS), probe(-EPS));
                if sp != base_sig || sm != base_sig {
                    stats.skipped += 1;
                    continue;
                }
                stats.record(format!("{name}[{k}]"), g[k], (lp - lm) / (2.0 * EPS));
            }
        }

        match &self.input {
            ModelInput::Features(f) => {
                for _ in 0..input_coords {
                    let k = rng.gen_range(0..f.data().len());
                    let probe = |delta: f64| {
                        let mut d = f.data().to_vec();
                        d[k] += delta;
                        let fm = FeatureMap::new(f.channels(), f.height(), f.width(), d).unwrap();
                        self.eval(&self.params, &ModelInput::Features(fm), &self.saliency)
                    };
                    let ((lp, sp), (lm, sm)) = (probe(EPS), probe(-EPS));
                    if sp != base_sig || sm != base_sig {
                        stats.skipped += 1;
                        continue;
                    }
                    stats.record(format!("features[{k}]"), input_grads.features[k], (lp - lm) / (2.0 * EPS));
                }
            }
            ModelInput::Image(_) => {}
        }
        if self.model.config().use_saliency {
            let s = &self.saliency;
            for _ in 0..input_coords {
                let k = rng.gen_range(0..s.values().len());
                let probe = |delta: f64| {
                    let mut v = s.values().to_vec();
                    v[k] += delta;
                    let g = SaliencyGrid::new(s.height(), s.width(), v).unwrap();
                    self.eval(&self.params, &self.input, &g)
                };
                let ((lp, sp), (lm, sm)) = (probe(EPS), probe(-EPS));
                if sp != base_sig || sm != base_sig {
                    stats.skipped += 1;
                    continue;
                }
                stats.record(format!("saliency[{k}]"), input_grads.saliency[k], (lp - lm) / (2.0 * EPS));
            }
        }
        stats
    }
}

/// Checks `dEMD/dz` through a softmax, for random targets and predictions.
pub fn check_emd(r: f64, trials: usize, seed: u64) -> CheckStats {
    use samp_core::losses::{emd_grad, emd_loss};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = CheckStats::default();
    for t in 0..trials {
        let y = random_distribution(&mut rng);
        let z: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let p = softmax(&z);
        let yhat = ScoreDistribution::new(p).unwrap();
        let g = softmax_pullback(&p, &emd_grad(&y, &yhat, r).unwrap());
        for i in 0..5 {
            let f = |delta: f64| {
                let mut zz = z.clone();
                zz[i] += delta;
                emd_loss(&y, &ScoreDistribution::new(softmax(&zz)).unwrap(), r).unwrap()
            };
            stats.record(format!("emd r={r} trial {t} z[{i}]"), g[i], (f(EPS) - f(-EPS)) / (2.0 * EPS));
        }
    }
    stats
}

/// Same for the combined per-sample objective, including the attribute term.
pub fn check_total_loss(trials: usize, seed: u64) -> CheckStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = LossConfig {
        r: 2.0,
        lambda: 0.1,
        use_weighted_emd: true,
    };
    let mut stats = CheckStats::default();
    for t in 0..trials {
        let y = random_distribution(&mut rng);
        let beta = rng.gen_range(0.2..3.0);
        let z: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut pa = [0.0; 5];
        let mut ga = [0.0; 5];
        for i in 0..5 {
            pa[i] = rng.gen_range(-1.5..1.5);
            ga[i] = rng.gen_range(-1.0..1.0);
        }
        let total = |z: &[f64], pa: &[f64; 5]| {
            let yhat = ScoreDistribution::new(softmax(z)).unwrap();
            sample_loss(&y, &yhat, beta, Some((pa, &ga)), &cfg).unwrap()
        };
        let base = total(&z, &pa);
        let gz = softmax_pullback(&softmax(&z), &base.grad_dist);
        let gattr = base.grad_attrs.unwrap();
        for i in 0..5 {
            let f = |delta: f64| {
                let mut zz = z.clone();
                zz[i] += delta;
                total(&zz, &pa).parts.total
            };
            stats.record(format!("total trial {t} z[{i}]"), gz[i], (f(EPS) - f(-EPS)) / (2.0 * EPS));
            let fa = |delta: f64| {
                let mut aa = pa;
                aa[i] += delta;
                total(&z, &aa).parts.total
            };
            stats.record(format!("total trial {t} attr[{i}]"), gattr[i], (fa(EPS) - fa(-EPS)) / (2.0 * EPS));
        }
    }
    stats
}
