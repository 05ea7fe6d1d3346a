//! Five 3×3 stride-2 convolutions (padding 1) with ReLU; halves the resolution each layer.

use super::Conv;
use crate::raster::Raster;
use crate::{Error, Result};

/// Channel widths; the last entry is replaced by the configured feature channel count.
pub const STEM_WIDTHS: [usize; 5] = [8, 16, 16, 16, 0];

#[derive(Clone, Debug, PartialEq)]
pub struct StemCache {
    /// Input of each layer, channel-major, with its (C, H, W).
    inputs: Vec<(Vec<f64>, (usize, usize, usize))>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<f64>>,
}

impl StemCache {
    /// ReLU on/off pattern of every unit, for kink detection in gradient checks.
    pub fn activation_signature(&self) -> Vec<bool> {
        self.pre.iter().flatten().map(|&v| v > 0.0).collect()
    }
}

fn out_size(n: usize) -> usize {
    (n - 1) / 2 + 1
}

/// Planar CHW copy of the image, replicating grayscale to the expected channel count.
fn planar(image: &Raster, channels: usize) -> Result<Vec<f64>> {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    if c != channels && c != 1 {
        return Err(Error::Shape(format!("stem expects {channels} channels, image has {c}")));
    }
    let mut out = vec![0.0; channels * h * w];
    for ch in 0..channels {
        let src = if c == 1 { 0 } else { ch };
        for i in 0..h {
            for j in 0..w {
                out[(ch * h + i) * w + j] = image.get(i, j, src);
            }
        }
    }
    Ok(out)
}

fn conv_forward(layer: &Conv, x: &[f64], (c, h, w): (usize, usize, usize)) -> (Vec<f64>, (usize, usize, usize)) {
    debug_assert_eq!(c, layer.in_ch);
    let (oh, ow) = (out_size(h), out_size(w));
    let mut y = vec![0.0; layer.out_ch * oh * ow];
    for o in 0..layer.out_ch {
        let out = &mut y[o * oh * ow..(o + 1) * oh * ow];
        out.iter_mut().for_each(|v| *v = layer.b[o]);
        for i in 0..c {
            let plane = &x[i * h * w..(i + 1) * h * w];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = layer.w[((o * c + i) * 3 + ky) * 3 + kx];
                    for oy in 0..oh {
                        let iy = 2 * oy + ky;
                        if iy == 0 || iy > h {
                            continue;
                        }
                        let row = &plane[(iy - 1) * w..iy * w];
                        let orow = &mut out[oy * ow..(oy + 1) * ow];
                        for (ox, ov) in orow.iter_mut().enumerate() {
                            let ix = 2 * ox + kx;
                            if ix == 0 || ix > w {
                                continue;
                            }
                            *ov += wv * row[ix - 1];
                        }
                    }
                }
            }
        }
    }
    (y, (layer.out_ch, oh, ow))
}

/// Runs the stem; returns the final activations (C, H, W) and the cache for backprop.
/// Flattened output, its `(channels, height, width)`, and the cache for the backward pass.
pub type StemOutput = (Vec<f64>, (usize, usize, usize), StemCache);

pub fn stem_forward(layers: &[Conv], image: &Raster) -> Result<StemOutput> {
    let first = layers
        .first()
        .ok_or_else(|| Error::invalid("stem has no layers"))?;
    let mut x = planar(image, first.in_ch)?;
    let mut dims = (first.in_ch, image.height(), image.width());
    let mut cache = StemCache {
        inputs: Vec::with_capacity(layers.len()),
        pre: Vec::with_capacity(layers.len()),
    };
    for layer in layers {
        if dims.0 != layer.in_ch {
            return Err(Error::Shape(format!(
                "stem layer expects {} channels, got {}",
                layer.in_ch, dims.0
            )));
        }
        let (pre, next) = conv_forward(layer, &x, dims);
        let act: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
        cache.inputs.push((std::mem::replace(&mut x, act), dims));
        cache.pre.push(pre);
        dims = next;
    }
    Ok((x, dims, cache))
}

/// Accumulates stem parameter gradients given `dL/d(output activations)`.
pub fn stem_backward(layers: &[Conv], cache: &StemCache, grad_out: &[f64], grads: &mut [Conv]) {
    let mut g = grad_out.to_vec();
    for l in (0..layers.len()).rev() {
        let layer = &layers[l];
        let (x, (c, h, w)) = &cache.inputs[l];
        let (c, h, w) = (*c, *h, *w);
        let (oh, ow) = (out_size(h), out_size(w));
        let pre = &cache.pre[l];
        let gpre: Vec<f64> = g
            .iter()
            .zip(pre)
            .map(|(gv, &p)| if p > 0.0 { *gv } else { 0.0 })
            .collect();
        let need_input = l > 0;
        let mut gx = if need_input { vec![0.0; c * h * w] } else { Vec::new() };
        let grad = &mut grads[l];
        for o in 0..layer.out_ch {
            let go = &gpre[o * oh * ow..(o + 1) * oh * ow];
            grad.b[o] += go.iter().sum::<f64>();
            for i in 0..c {
                let plane = &x[i * h * w..(i + 1) * h * w];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let widx = ((o * c + i) * 3 + ky) * 3 + kx;
                        let wv = layer.w[widx];
                        let mut acc = 0.0;
                        for oy in 0..oh {
                            let iy = 2 * oy + ky;
                            if iy == 0 || iy > h {
                                continue;
                            }
                            let row = (iy - 1) * w;
                            let grow = &go[oy * ow..(oy + 1) * ow];
                            for (ox, &gv) in grow.iter().enumerate() {
                                let ix = 2 * ox + kx;
                                if ix == 0 || ix > w {
                                    continue;
                                }
                                acc += gv * plane[row + ix - 1];
                                if need_input {
                                    gx[i * h * w + row + ix - 1] += wv * gv;
                                }
                            }
                        }
                        grad.w[widx] += acc;
                    }
                }
            }
        }
        g = gx;
    }
}
