use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FeatureSource, ModelConfig, STEM_WIDTHS};
use crate::data::{Checkpoint, DType, TensorEntry};
use crate::{Error, Result, NUM_ATTRIBUTES, NUM_PATTERNS, NUM_SCORES};

/// Fully-connected layer, `y = b + xᵀW` with `W` stored `[inputs, outputs]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            w: vec![0.0; inputs * outputs],
            b: vec![0.0; outputs],
        }
    }

    /// Uniform in ±sqrt(6 / (fan_in + fan_out)), zero bias.
    fn init(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        let w = (0..inputs * outputs)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Self {
            inputs,
            outputs,
            w,
            b: vec![0.0; outputs],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        let mut y = self.b.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.w[i * self.outputs..(i + 1) * self.outputs];
            for (yo, wo) in y.iter_mut().zip(row) {
                *yo += xi * wo;
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], gy: &[f64], grad: &mut Linear, need_input: bool) -> Vec<f64> {
        for (gb, g) in grad.b.iter_mut().zip(gy) {
            *gb += g;
        }
        let mut gx = if need_input { vec![0.0; self.inputs] } else { Vec::new() };
        for (i, &xi) in x.iter().enumerate() {
            let row = i * self.outputs..(i + 1) * self.outputs;
            if xi != 0.0 {
                for (gw, g) in grad.w[row.clone()].iter_mut().zip(gy) {
                    *gw += xi * g;
                }
            }
            if need_input {
                gx[i] = self.w[row].iter().zip(gy).map(|(w, g)| w * g).sum();
            }
        }
        gx
    }
}

/// 3×3 convolution, weights `[out, in, 3, 3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub in_ch: usize,
    pub out_ch: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Conv {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            w: vec![0.0; out_ch * in_ch * 9],
            b: vec![0.0; out_ch],
        }
    }

    /// He-style uniform in ±sqrt(6 / fan_in), zero bias.
    fn init(in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (in_ch * 9) as f64).sqrt();
        let w = (0..out_ch * in_ch * 9)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Self {
            in_ch,
            out_ch,
            w,
            b: vec![0.0; out_ch],
        }
    }
}

/// Every learnable tensor of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// One projection per pattern, or a single global projection when
    /// multi-pattern pooling is disabled.
    pub proj: Vec<Linear>,
    pub gate: Option<Linear>,
    pub comp: Linear,
    pub atts: Linear,
    pub attn: Option<Linear>,
    pub dist: Linear,
    pub attr: Option<Linear>,
    pub stem: Vec<Conv>,
}

/// Stem input channels (RGB).
pub(crate) const STEM_IN: usize = 3;

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self::build(config, &mut |i, o| Linear::zeros(i, o), &mut |i, o| Conv::zeros(i, o)))
    }

    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let rng = std::cell::RefCell::new(ChaCha8Rng::seed_from_u64(seed));
        Ok(Self::build(
            config,
            &mut |i, o| Linear::init(i, o, &mut rng.borrow_mut()),
            &mut |i, o| Conv::init(i, o, &mut rng.borrow_mut()),
        ))
    }

    fn build(
        config: &ModelConfig,
        linear: &mut dyn FnMut(usize, usize) -> Linear,
        conv: &mut dyn FnMut(usize, usize) -> Conv,
    ) -> Self {
        let (c, cp) = (config.channels, config.c_prime);
        let half = cp / 2;
        let stem = if config.feature_source == FeatureSource::ToyStem {
            let mut widths = STEM_WIDTHS.to_vec();
            *widths.last_mut().unwrap() = c;
            let mut prev = STEM_IN;
            widths
                .into_iter()
                .map(|w| {
                    let layer = conv(prev, w);
                    prev = w;
                    layer
                })
                .collect()
        } else {
            Vec::new()
        };
        let proj = if config.use_multi_pattern {
            (1..=NUM_PATTERNS)
                .map(|p| linear(config.projection_input_dim(p), cp))
                .collect()
        } else {
            vec![linear(c, cp)]
        };
        let gate = config.use_pattern_weights.then(|| linear(c, NUM_PATTERNS));
        let comp = linear(cp, half);
        let atts = linear(cp, half);
        let attn = config.use_attention_fusion.then(|| linear(cp, 2));
        let dist = linear(cp, NUM_SCORES);
        let attr = config
            .use_attribute_branch
            .then(|| linear(half, NUM_ATTRIBUTES));
        Self {
            proj,
            gate,
            comp,
            atts,
            attn,
            dist,
            attr,
            stem,
        }
    }

    fn proj_name(&self, idx: usize) -> String {
        if self.proj.len() == NUM_PATTERNS {
            format!("samp.proj.{}", idx + 1)
        } else {
            "samp.global".to_string()
        }
    }

    /// `(name, shape, values)` for every tensor in checkpoint order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        fn lin<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f64])>, name: String, l: &'a Linear) {
            out.push((format!("{name}.w"), vec![l.inputs, l.outputs], &l.w));
            out.push((format!("{name}.b"), vec![l.outputs], &l.b));
        }
        let mut out = Vec::new();
        for (i, l) in self.stem.iter().enumerate() {
            out.push((format!("stem.{i}.w"), vec![l.out_ch, l.in_ch, 3, 3], &l.w[..]));
            out.push((format!("stem.{i}.b"), vec![l.out_ch], &l.b[..]));
        }
        for (i, l) in self.proj.iter().enumerate() {
            lin(&mut out, self.proj_name(i), l);
        }
        if let Some(g) = &self.gate {
            lin(&mut out, "samp.gate".into(), g);
        }
        lin(&mut out, "aaff.comp".into(), &self.comp);
        lin(&mut out, "aaff.atts".into(), &self.atts);
        if let Some(a) = &self.attn {
            lin(&mut out, "aaff.attn".into(), a);
        }
        lin(&mut out, "head.dist".into(), &self.dist);
        if let Some(a) = &self.attr {
            lin(&mut out, "head.attr".into(), a);
        }
        out
    }

    /// Mutable views in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let names: Vec<String> = self.tensors().into_iter().map(|(n, _, _)| n).collect();
        let mut slots: Vec<&mut Vec<f64>> = Vec::new();
        for l in &mut self.stem {
            slots.push(&mut l.w);
            slots.push(&mut l.b);
        }
        fn push<'a>(slots: &mut Vec<&'a mut Vec<f64>>, l: &'a mut Linear) {
            slots.push(&mut l.w);
            slots.push(&mut l.b);
        }
        for l in &mut self.proj {
            push(&mut slots, l);
        }
        if let Some(g) = &mut self.gate {
            push(&mut slots, g);
        }
        push(&mut slots, &mut self.comp);
        push(&mut slots, &mut self.atts);
        if let Some(a) = &mut self.attn {
            push(&mut slots, a);
        }
        push(&mut slots, &mut self.dist);
        if let Some(a) = &mut self.attr {
            push(&mut slots, a);
        }
        names.into_iter().zip(slots).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, _, d)| d.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    /// Name of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|(_, _, d)| d.iter().any(|v| !v.is_finite()))
            .map(|(n, _, _)| n)
    }

    pub fn to_checkpoint(&self, config: &ModelConfig, dtype: DType) -> Checkpoint {
        let mut ckpt = Checkpoint::default();
        ckpt.meta.insert("config".into(), config.canonical());
        ckpt.meta.insert("digest".into(), config.digest());
        ckpt.tensors = self
            .tensors()
            .into_iter()
            .map(|(name, shape, data)| TensorEntry {
                name,
                dtype,
                shape,
                data: data.to_vec(),
            })
            .collect();
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(ModelConfig, Self)> {
        let config = ModelConfig::parse_canonical(ckpt.meta("config")?)?;
        if let Ok(d) = ckpt.meta("digest") {
            if d != config.digest() {
                return Err(Error::Shape(format!(
                    "checkpoint digest {d} does not match its config ({})",
                    config.digest()
                )));
            }
        }
        let mut params = Self::zeros(&config)?;
        let shapes: Vec<(String, Vec<usize>)> = params
            .tensors()
            .into_iter()
            .map(|(n, s, _)| (n, s))
            .collect();
        for ((name, slot), (_, shape)) in params.tensors_mut().into_iter().zip(shapes) {
            let t = ckpt.tensor(&name)?;
            if t.shape != shape {
                return Err(Error::Shape(format!(
                    "tensor `{name}` has shape {:?}, config expects {shape:?}",
                    t.shape
                )));
            }
            slot.copy_from_slice(&t.data);
        }
        Ok((config, params))
    }
}
