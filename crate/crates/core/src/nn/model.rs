//! Two-headed convolutional classifier with hand-written reverse-mode gradients.
//!
//! Layout: inputs mapped from [0, 1] to [-1, 1] → `conv_blocks` (3×3 conv, zero padding 1,
//! ReLU, optional 2×2 max-pool) → global average pool → dense embedding with ReLU → two MLP
//! heads. The real/fake head ends in a single logit, the demographic head in eight.
//! Sigmoid/softmax live in the loss module.
//!
//! Activations and every reduction are computed in `f64` with a fixed loop order, so
//! forward and backward are bit-reproducible for given parameters and inputs.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::params::{ParamTensor, ParamVector, Real};
use crate::data::DemographicGroup;
use crate::error::{Error, Result};
use crate::image::{ImageTensor, CHANNELS};
use crate::rng::{fnv1a, rng_from_seed};

pub const DEM_CLASSES: usize = DemographicGroup::COUNT;

fn default_stride() -> usize {
    1
}

fn default_pool() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlock {
    pub out_channels: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_pool")]
    pub pool: bool,
}

impl ConvBlock {
    pub fn new(out_channels: usize, stride: usize, pool: bool) -> Self {
        Self {
            out_channels,
            stride,
            pool,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    /// `(H, W)` of input images.
    pub input_size: (usize, usize),
    pub conv_blocks: Vec<ConvBlock>,
    pub embedding_dim: usize,
    /// Layer widths of the real/fake MLP; must end in 1.
    pub head_real: Vec<usize>,
    /// Layer widths of the demographic MLP; must end in 8.
    pub head_dem: Vec<usize>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            input_size: (64, 64),
            conv_blocks: vec![
                ConvBlock::new(16, 1, true),
                ConvBlock::new(32, 1, true),
                ConvBlock::new(64, 1, true),
            ],
            embedding_dim: 128,
            head_real: vec![64, 1],
            head_dem: vec![64, DEM_CLASSES],
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    in_c: usize,
    out_c: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    stride: usize,
    pool: bool,
}

impl ConvGeom {
    fn padded(&self) -> (usize, usize) {
        (self.in_h + 2, self.in_w + 2)
    }

    fn final_hw(&self) -> (usize, usize) {
        if self.pool {
            (self.out_h / 2, self.out_w / 2)
        } else {
            (self.out_h, self.out_w)
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct DenseGeom {
    inputs: usize,
    outputs: usize,
    relu: bool,
}

/// One training/inference batch. The demographic target of each sample is its group id.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Vec<ImageTensor>,
    pub labels_real: Vec<u8>,
    pub group_ids: Vec<usize>,
}

impl Batch {
    pub fn new(images: Vec<ImageTensor>, labels_real: Vec<u8>, group_ids: Vec<usize>) -> Result<Self> {
        let b = images.len();
        if b == 0 {
            return Err(Error::invalid("batch must contain at least one sample"));
        }
        if labels_real.len() != b || group_ids.len() != b {
            return Err(Error::Shape(format!(
                "{b} images, {} labels, {} group ids",
                labels_real.len(),
                group_ids.len()
            )));
        }
        if labels_real.iter().any(|&y| y > 1) {
            return Err(Error::invalid("real/fake labels must be 0 or 1"));
        }
        if group_ids.iter().any(|&g| g >= DEM_CLASSES) {
            return Err(Error::invalid("group ids must lie in [0, 8)"));
        }
        if images.iter().any(|im| !im.same_shape(&images[0])) {
            return Err(Error::Shape("images in a batch must share a size".into()));
        }
        Ok(Self {
            images,
            labels_real,
            group_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn labels_dem(&self) -> &[usize] {
        &self.group_ids
    }

    fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.len() * 16);
        for (img, (&y, &g)) in self.images.iter().zip(self.labels_real.iter().zip(&self.group_ids)) {
            bytes.extend_from_slice(&fnv1a_f32(img.data()).to_le_bytes());
            bytes.push(y);
            bytes.push(g as u8);
        }
        fnv1a(&bytes)
    }
}

fn fnv1a_f32(values: &[f32]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        h ^= u64::from(v.to_bits());
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn params_fingerprint<T: Real>(params: &ParamVector<T>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in params.iter_values() {
        h ^= v.to_f64().to_bits();
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone)]
struct SampleCache {
    /// Zero-padded input of each conv block.
    conv_in: Vec<Vec<f64>>,
    /// Pre-activation output of each conv block.
    conv_pre: Vec<Vec<f64>>,
    /// Flat argmax index into the block's activation map, per pooled cell.
    pool_idx: Vec<Vec<usize>>,
    /// Input and pre-activation of every dense layer: embedding, real head, demographic head.
    dense_in: Vec<Vec<f64>>,
    dense_pre: Vec<Vec<f64>>,
}

/// Activation record of one forward pass; only valid for the same parameters and batch.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    samples: Vec<SampleCache>,
}

#[derive(Debug, Clone)]
pub struct ForwardResult {
    pub fake_logits: Vec<f64>,
    pub dem_logits: Vec<[f64; DEM_CLASSES]>,
    pub cache: ForwardCache,
}

/// Upstream gradients of a scalar loss with respect to both logit sets.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGrads {
    pub fake: Vec<f64>,
    pub dem: Vec<[f64; DEM_CLASSES]>,
}

impl LogitGrads {
    pub fn zeros(batch: usize) -> Self {
        Self {
            fake: vec![0.0; batch],
            dem: vec![[0.0; DEM_CLASSES]; batch],
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            fake: self.fake.iter().map(|v| v * k).collect(),
            dem: self.dem.iter().map(|row| row.map(|v| v * k)).collect(),
        }
    }
}

/// A validated [`ModelSpec`] with precomputed layer geometry.
#[derive(Debug, Clone)]
pub struct Network {
    spec: ModelSpec,
    convs: Vec<ConvGeom>,
    /// Embedding, then real-head layers, then demographic-head layers.
    dense: Vec<DenseGeom>,
    real_layers: usize,
}

impl Network {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let (mut h, mut w) = spec.input_size;
        if h < crate::image::MIN_SIDE || w < crate::image::MIN_SIDE {
            return Err(Error::invalid(format!("input size {h}x{w} is below 8x8")));
        }
        let mut convs = Vec::with_capacity(spec.conv_blocks.len());
        let mut channels = CHANNELS;
        for (i, block) in spec.conv_blocks.iter().enumerate() {
            if block.out_channels == 0 || block.stride == 0 {
                return Err(Error::invalid(format!("conv block {i} needs positive channels and stride")));
            }
            let g = ConvGeom {
                in_c: channels,
                out_c: block.out_channels,
                in_h: h,
                in_w: w,
                out_h: (h - 1) / block.stride + 1,
                out_w: (w - 1) / block.stride + 1,
                stride: block.stride,
                pool: block.pool,
            };
            (h, w) = g.final_hw();
            if h == 0 || w == 0 {
                return Err(Error::invalid(format!("conv block {i} reduces the feature map to nothing")));
            }
            channels = block.out_channels;
            convs.push(g);
        }
        if spec.embedding_dim == 0 {
            return Err(Error::invalid("embedding_dim must be positive"));
        }
        if spec.head_real.last() != Some(&1) || spec.head_real.contains(&0) {
            return Err(Error::invalid("head_real must end in exactly 1 output"));
        }
        if spec.head_dem.last() != Some(&DEM_CLASSES) || spec.head_dem.contains(&0) {
            return Err(Error::invalid("head_dem must end in exactly 8 outputs"));
        }
        let mut dense = vec![DenseGeom {
            inputs: channels,
            outputs: spec.embedding_dim,
            relu: true,
        }];
        for head in [&spec.head_real, &spec.head_dem] {
            let mut inputs = spec.embedding_dim;
            for (j, &outputs) in head.iter().enumerate() {
                dense.push(DenseGeom {
                    inputs,
                    outputs,
                    relu: j + 1 < head.len(),
                });
                inputs = outputs;
            }
        }
        let real_layers = spec.head_real.len();
        Ok(Self {
            spec,
            convs,
            dense,
            real_layers,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn dense_name(&self, k: usize) -> String {
        if k == 0 {
            "embed".to_string()
        } else if k <= self.real_layers {
            format!("head_real.{}", k - 1)
        } else {
            format!("head_dem.{}", k - 1 - self.real_layers)
        }
    }

    /// Names and shapes of all parameter tensors, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, g) in self.convs.iter().enumerate() {
            out.push((format!("conv{i}.weight"), vec![g.out_c, g.in_c, 3, 3]));
            out.push((format!("conv{i}.bias"), vec![g.out_c]));
        }
        for (k, d) in self.dense.iter().enumerate() {
            let name = self.dense_name(k);
            out.push((format!("{name}.weight"), vec![d.outputs, d.inputs]));
            out.push((format!("{name}.bias"), vec![d.outputs]));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    /// Uniform(−a, a) weights with `a = sqrt(6 / (fan_in + fan_out))` per layer, zero biases.
    pub fn init_params<T: Real>(&self, seed: u64) -> ParamVector<T> {
        let mut rng = rng_from_seed(seed);
        let fans = self
            .convs
            .iter()
            .map(|g| (g.in_c * 9, g.out_c * 9))
            .chain(self.dense.iter().map(|d| (d.inputs, d.outputs)));
        let mut tensors = Vec::new();
        for ((name, shape), (fan_in, fan_out)) in self
            .layout()
            .chunks(2)
            .map(|pair| pair[0].clone())
            .zip(fans)
        {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
                .collect();
            let bias_len = shape[0];
            let bias_name = name.replace(".weight", ".bias");
            tensors.push(ParamTensor { name, shape, data });
            tensors.push(ParamTensor {
                name: bias_name,
                shape: vec![bias_len],
                data: vec![T::from_f64(0.0); bias_len],
            });
        }
        ParamVector::new(tensors).expect("layout names are unique")
    }

    fn check_params<T: Real>(&self, params: &ParamVector<T>) -> Result<()> {
        let layout = self.layout();
        let ok = params.tensors().len() == layout.len()
            && params
                .tensors()
                .iter()
                .zip(&layout)
                .all(|(t, (name, shape))| &t.name == name && &t.shape == shape);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("parameters do not match the model layout".into()))
        }
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let (h, w) = self.spec.input_size;
        let img = &batch.images[0];
        if img.height() != h || img.width() != w {
            return Err(Error::Shape(format!(
                "model expects {h}x{w} images, batch has {}x{}",
                img.height(),
                img.width()
            )));
        }
        Ok(())
    }

    pub fn forward<T: Real>(&self, params: &ParamVector<T>, batch: &Batch) -> Result<ForwardResult> {
        self.check_params(params)?;
        self.check_batch(batch)?;
        let p: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|t| t.data.iter().map(|v| v.to_f64()).collect())
            .collect();
        let mut fake_logits = Vec::with_capacity(batch.len());
        let mut dem_logits = Vec::with_capacity(batch.len());
        let mut samples = Vec::with_capacity(batch.len());
        for img in &batch.images {
            let (real, dem, cache) = self.forward_sample(&p, img);
            if !real.is_finite() || dem.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("forward produced a non-finite logit".into()));
            }
            fake_logits.push(real);
            dem_logits.push(dem);
            samples.push(cache);
        }
        Ok(ForwardResult {
            fake_logits,
            dem_logits,
            cache: ForwardCache {
                fingerprint: params_fingerprint(params) ^ batch.fingerprint(),
                samples,
            },
        })
    }

    fn forward_sample(&self, p: &[Vec<f64>], img: &ImageTensor) -> (f64, [f64; DEM_CLASSES], SampleCache) {
        let (h, w) = (img.height(), img.width());
        // HWC image in [0, 1] into a padded CHW buffer in [-1, 1].
        let (hp, wp) = (h + 2, w + 2);
        let mut x = vec![0.0; CHANNELS * hp * wp];
        for r in 0..h {
            for c in 0..w {
                for ch in 0..CHANNELS {
                    x[(ch * hp + r + 1) * wp + c + 1] = 2.0 * f64::from(img.get(r, c, ch)) - 1.0;
                }
            }
        }
        let mut cache = SampleCache {
            conv_in: Vec::with_capacity(self.convs.len()),
            conv_pre: Vec::with_capacity(self.convs.len()),
            pool_idx: Vec::with_capacity(self.convs.len()),
            dense_in: Vec::with_capacity(self.dense.len()),
            dense_pre: Vec::with_capacity(self.dense.len()),
        };
        let mut act = Vec::new();
        let (mut fh, mut fw) = (h, w);
        for (i, g) in self.convs.iter().enumerate() {
            let z = conv_forward(&x, g, &p[2 * i], &p[2 * i + 1]);
            let relu: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
            let (out, idx) = if g.pool {
                max_pool(&relu, g.out_c, g.out_h, g.out_w)
            } else {
                (relu, Vec::new())
            };
            (fh, fw) = g.final_hw();
            cache.conv_in.push(std::mem::take(&mut x));
            cache.conv_pre.push(z);
            cache.pool_idx.push(idx);
            if i + 1 < self.convs.len() {
                x = pad(&out, g.out_c, fh, fw);
            } else {
                act = out;
            }
        }
        let channels = self.dense[0].inputs;
        if self.convs.is_empty() {
            act = unpad(&x, channels, h, w);
        }
        let area = (fh * fw) as f64;
        let gap: Vec<f64> = act
            .chunks(fh * fw)
            .map(|plane| plane.iter().sum::<f64>() / area)
            .collect();

        let base = 2 * self.convs.len();
        let run = |k: usize, input: Vec<f64>, cache: &mut SampleCache| -> Vec<f64> {
            let d = &self.dense[k];
            let pre = dense_forward(&input, &p[base + 2 * k], &p[base + 2 * k + 1], d);
            let out = if d.relu {
                pre.iter().map(|&v| v.max(0.0)).collect()
            } else {
                pre.clone()
            };
            cache.dense_in.push(input);
            cache.dense_pre.push(pre);
            out
        };
        let emb = run(0, gap, &mut cache);
        let mut hidden = emb.clone();
        for k in 1..=self.real_layers {
            hidden = run(k, hidden, &mut cache);
        }
        let real = hidden[0];
        let mut hidden = emb;
        for k in self.real_layers + 1..self.dense.len() {
            hidden = run(k, hidden, &mut cache);
        }
        let mut dem = [0.0; DEM_CLASSES];
        dem.copy_from_slice(&hidden);
        (real, dem, cache)
    }

    /// Gradient of the loss with respect to every parameter, given the loss gradient with
    /// respect to the logits of the matching forward pass.
    pub fn backward<T: Real>(
        &self,
        params: &ParamVector<T>,
        batch: &Batch,
        upstream: &LogitGrads,
        cache: &ForwardCache,
    ) -> Result<ParamVector<T>> {
        self.check_params(params)?;
        if cache.samples.len() != batch.len()
            || cache.fingerprint != params_fingerprint(params) ^ batch.fingerprint()
        {
            return Err(Error::StaleCache);
        }
        if upstream.fake.len() != batch.len() || upstream.dem.len() != batch.len() {
            return Err(Error::Shape("upstream gradient does not match batch size".into()));
        }
        let p: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|t| t.data.iter().map(|v| v.to_f64()).collect())
            .collect();
        let mut grads: Vec<Vec<f64>> = p.iter().map(|t| vec![0.0; t.len()]).collect();
        for (s, sc) in cache.samples.iter().enumerate() {
            self.backward_sample(&p, sc, upstream.fake[s], &upstream.dem[s], &mut grads);
        }
        let tensors = params
            .tensors()
            .iter()
            .zip(grads)
            .map(|(t, g)| ParamTensor {
                name: t.name.clone(),
                shape: t.shape.clone(),
                data: g.into_iter().map(T::from_f64).collect(),
            })
            .collect();
        ParamVector::new(tensors)
    }

    fn backward_sample(
        &self,
        p: &[Vec<f64>],
        sc: &SampleCache,
        d_real: f64,
        d_dem: &[f64; DEM_CLASSES],
        grads: &mut [Vec<f64>],
    ) {
        let base = 2 * self.convs.len();
        let back = |k: usize, mut d_out: Vec<f64>, grads: &mut [Vec<f64>]| -> Vec<f64> {
            let d = &self.dense[k];
            if d.relu {
                for (g, &z) in d_out.iter_mut().zip(&sc.dense_pre[k]) {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let (wg, rest) = grads[base + 2 * k..].split_at_mut(1);
            dense_backward(&sc.dense_in[k], &p[base + 2 * k], &d_out, d, &mut wg[0], &mut rest[0])
        };
        let mut d_emb = vec![0.0; self.spec.embedding_dim];
        let mut g = vec![d_real];
        for k in (1..=self.real_layers).rev() {
            g = back(k, g, grads);
        }
        for (a, b) in d_emb.iter_mut().zip(&g) {
            *a += b;
        }
        let mut g = d_dem.to_vec();
        for k in (self.real_layers + 1..self.dense.len()).rev() {
            g = back(k, g, grads);
        }
        for (a, b) in d_emb.iter_mut().zip(&g) {
            *a += b;
        }
        let d_gap = back(0, d_emb, grads);

        let Some(last) = self.convs.last() else {
            return;
        };
        let (fh, fw) = last.final_hw();
        let area = (fh * fw) as f64;
        let mut d_act: Vec<f64> = d_gap
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v / area, fh * fw))
            .collect();
        for (i, g) in self.convs.iter().enumerate().rev() {
            let mut dz = if g.pool {
                let mut full = vec![0.0; g.out_c * g.out_h * g.out_w];
                for (cell, &src) in sc.pool_idx[i].iter().enumerate() {
                    full[src] += d_act[cell];
                }
                full
            } else {
                d_act
            };
            for (v, &z) in dz.iter_mut().zip(&sc.conv_pre[i]) {
                if z <= 0.0 {
                    *v = 0.0;
                }
            }
            let (wg, rest) = grads[2 * i..].split_at_mut(1);
            let dx_pad = conv_backward(&sc.conv_in[i], &p[2 * i], &dz, g, &mut wg[0], &mut rest[0], i > 0);
            if i == 0 {
                break;
            }
            d_act = unpad(&dx_pad, g.in_c, g.in_h, g.in_w);
        }
    }
}

fn pad(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (hp, wp) = (h + 2, w + 2);
    let mut out = vec![0.0; c * hp * wp];
    for ch in 0..c {
        for r in 0..h {
            let src = &x[(ch * h + r) * w..(ch * h + r + 1) * w];
            let dst = (ch * hp + r + 1) * wp + 1;
            out[dst..dst + w].copy_from_slice(src);
        }
    }
    out
}

fn unpad(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (hp, wp) = (h + 2, w + 2);
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for r in 0..h {
            let src = (ch * hp + r + 1) * wp + 1;
            out.extend_from_slice(&x[src..src + w]);
        }
    }
    out
}

/// Per output value the sum runs bias first, then input channel, kernel row, kernel column.
fn conv_forward(xpad: &[f64], g: &ConvGeom, weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let (hp, wp) = g.padded();
    let plane_len = g.out_h * g.out_w;
    let mut out = vec![0.0; g.out_c * plane_len];
    for oc in 0..g.out_c {
        let plane = &mut out[oc * plane_len..(oc + 1) * plane_len];
        plane.fill(bias[oc]);
        for ic in 0..g.in_c {
            let xin = &xpad[ic * hp * wp..(ic + 1) * hp * wp];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = weight[((oc * g.in_c + ic) * 3 + ky) * 3 + kx];
                    for oy in 0..g.out_h {
                        let row = &xin[(oy * g.stride + ky) * wp + kx..];
                        let orow = &mut plane[oy * g.out_w..(oy + 1) * g.out_w];
                        if g.stride == 1 {
                            for (o, &v) in orow.iter_mut().zip(row) {
                                *o += wv * v;
                            }
                        } else {
                            for (ox, o) in orow.iter_mut().enumerate() {
                                *o += wv * row[ox * g.stride];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the padded input gradient when requested.
fn conv_backward(
    xpad: &[f64],
    weight: &[f64],
    dz: &[f64],
    g: &ConvGeom,
    dweight: &mut [f64],
    dbias: &mut [f64],
    input_grad: bool,
) -> Vec<f64> {
    let (hp, wp) = g.padded();
    let plane_len = g.out_h * g.out_w;
    let mut dx = if input_grad {
        vec![0.0; g.in_c * hp * wp]
    } else {
        Vec::new()
    };
    for oc in 0..g.out_c {
        let dplane = &dz[oc * plane_len..(oc + 1) * plane_len];
        dbias[oc] += dplane.iter().sum::<f64>();
        for ic in 0..g.in_c {
            let xin = &xpad[ic * hp * wp..(ic + 1) * hp * wp];
            for ky in 0..3 {
                for kx in 0..3 {
                    let widx = ((oc * g.in_c + ic) * 3 + ky) * 3 + kx;
                    let mut acc = 0.0;
                    for oy in 0..g.out_h {
                        let drow = &dplane[oy * g.out_w..(oy + 1) * g.out_w];
                        let start = (oy * g.stride + ky) * wp + kx;
                        if g.stride == 1 {
                            for (&d, &v) in drow.iter().zip(&xin[start..]) {
                                acc += d * v;
                            }
                        } else {
                            for (ox, &d) in drow.iter().enumerate() {
                                acc += d * xin[start + ox * g.stride];
                            }
                        }
                    }
                    dweight[widx] += acc;
                    if input_grad {
                        let wv = weight[widx];
                        let dxin = &mut dx[ic * hp * wp..(ic + 1) * hp * wp];
                        for oy in 0..g.out_h {
                            let drow = &dplane[oy * g.out_w..(oy + 1) * g.out_w];
                            let start = (oy * g.stride + ky) * wp + kx;
                            for (ox, &d) in drow.iter().enumerate() {
                                dxin[start + ox * g.stride] += wv * d;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// 2×2 max-pool with stride 2 (floor); ties keep the first maximum in row-major order.
fn max_pool(x: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * ph * pw);
    let mut idx = Vec::with_capacity(c * ph * pw);
    for ch in 0..c {
        for r in 0..ph {
            for col in 0..pw {
                let mut best = (ch * h + 2 * r) * w + 2 * col;
                for (dr, dc) in [(0, 1), (1, 0), (1, 1)] {
                    let j = (ch * h + 2 * r + dr) * w + 2 * col + dc;
                    if x[j] > x[best] {
                        best = j;
                    }
                }
                out.push(x[best]);
                idx.push(best);
            }
        }
    }
    (out, idx)
}

fn dense_forward(input: &[f64], weight: &[f64], bias: &[f64], d: &DenseGeom) -> Vec<f64> {
    (0..d.outputs)
        .map(|o| {
            let row = &weight[o * d.inputs..(o + 1) * d.inputs];
            row.iter().zip(input).fold(bias[o], |acc, (w, x)| acc + w * x)
        })
        .collect()
}

fn dense_backward(
    input: &[f64],
    weight: &[f64],
    d_out: &[f64],
    d: &DenseGeom,
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let mut d_in = vec![0.0; d.inputs];
    for o in 0..d.outputs {
        let g = d_out[o];
        dbias[o] += g;
        let row = &weight[o * d.inputs..(o + 1) * d.inputs];
        let drow = &mut dweight[o * d.inputs..(o + 1) * d.inputs];
        for i in 0..d.inputs {
            drow[i] += g * input[i];
            d_in[i] += row[i] * g;
        }
    }
    d_in
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::total_loss;
    use crate::nn::{finite_diff_grad_check, sample_coords};

    fn small_spec() -> ModelSpec {
        ModelSpec {
            input_size: (16, 16),
            conv_blocks: vec![ConvBlock::new(4, 1, true), ConvBlock::new(5, 2, false)],
            embedding_dim: 6,
            head_real: vec![5, 1],
            head_dem: vec![5, DEM_CLASSES],
        }
    }

    fn noise_image(seed: u64) -> ImageTensor {
        let mut rng = rng_from_seed(seed);
        ImageTensor::from_fn(16, 16, |_, _, _| rng.gen_range(0.0..1.0)).unwrap()
    }

    fn batch(n: usize) -> Batch {
        Batch::new(
            (0..n as u64).map(noise_image).collect(),
            (0..n).map(|i| (i % 2) as u8).collect(),
            (0..n).map(|i| (i * 3) % DEM_CLASSES).collect(),
        )
        .unwrap()
    }

    #[test]
    fn layout_and_count() {
        let net = Network::new(small_spec()).unwrap();
        let layout = net.layout();
        assert_eq!(layout[0], ("conv0.weight".to_string(), vec![4, 3, 3, 3]));
        assert_eq!(layout[2], ("conv1.weight".to_string(), vec![5, 4, 3, 3]));
        assert_eq!(layout[4], ("embed.weight".to_string(), vec![6, 5]));
        assert_eq!(layout.last().unwrap(), &("head_dem.1.bias".to_string(), vec![8]));
        let expected = (4 * 27 + 4) + (5 * 36 + 5) + (6 * 5 + 6) + (5 * 6 + 5) + (5 + 1) + (5 * 6 + 5) + (8 * 5 + 8);
        assert_eq!(net.param_count(), expected);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = small_spec();
        s.head_real = vec![4, 2];
        assert!(Network::new(s).is_err());
        let mut s = small_spec();
        s.head_dem = vec![7];
        assert!(Network::new(s).is_err());
        let mut s = small_spec();
        s.input_size = (4, 4);
        assert!(Network::new(s).is_err());
        let mut s = small_spec();
        s.conv_blocks = vec![ConvBlock::new(2, 1, true); 5];
        assert!(Network::new(s).is_err());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let net = Network::new(small_spec()).unwrap();
        let a = net.init_params::<f32>(7);
        assert_eq!(a, net.init_params::<f32>(7));
        assert_ne!(a, net.init_params::<f32>(8));
        for t in a.tensors() {
            if t.name.ends_with(".bias") {
                assert!(t.data.iter().all(|&v| v == 0.0), "{}", t.name);
            }
        }
        let bound = (6.0f64 / 54.0).sqrt();
        let conv0 = a.tensor("conv0.weight").unwrap();
        assert!(conv0.data.iter().all(|&v| f64::from(v).abs() <= bound));
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let net = Network::new(small_spec()).unwrap();
        let zeros = net.init_params::<f64>(0).zeros_like();
        let out = net.forward(&zeros, &batch(3)).unwrap();
        assert!(out.fake_logits.iter().all(|&v| v == 0.0));
        assert!(out.dem_logits.iter().all(|row| row.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn duplicated_sample_gives_identical_rows() {
        let net = Network::new(small_spec()).unwrap();
        let p = net.init_params::<f32>(3);
        let img = noise_image(42);
        let b = Batch::new(vec![img.clone(), img], vec![1, 1], vec![2, 2]).unwrap();
        let out = net.forward(&p, &b).unwrap();
        assert_eq!(out.fake_logits[0].to_bits(), out.fake_logits[1].to_bits());
        assert_eq!(out.dem_logits[0], out.dem_logits[1]);
    }

    #[test]
    fn forward_is_permutation_equivariant() {
        let net = Network::new(small_spec()).unwrap();
        let p = net.init_params::<f32>(5);
        let b = batch(4);
        let perm = [2, 0, 3, 1];
        let pb = Batch::new(
            perm.iter().map(|&i| b.images[i].clone()).collect(),
            perm.iter().map(|&i| b.labels_real[i]).collect(),
            perm.iter().map(|&i| b.group_ids[i]).collect(),
        )
        .unwrap();
        let a = net.forward(&p, &b).unwrap();
        let c = net.forward(&p, &pb).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(c.fake_logits[k], a.fake_logits[i]);
            assert_eq!(c.dem_logits[k], a.dem_logits[i]);
        }
    }

    #[test]
    fn golden_logits() {
        let net = Network::new(small_spec()).unwrap();
        let p = net.init_params::<f32>(2024);
        let out = net.forward(&p, &batch(2)).unwrap();
        let got = [out.fake_logits[0], out.fake_logits[1], out.dem_logits[0][0], out.dem_logits[1][7]];
        for (g, e) in got.iter().zip(GOLDEN) {
            assert!((g - e).abs() < 1e-12, "{got:?}");
        }
    }

    const GOLDEN: [f64; 4] = [
        -0.10271932713759568,
        -0.08979058282154802,
        -0.009172657942533103,
        -0.013009242631647551,
    ];

    #[test]
    fn upstream_scaling_is_linear() {
        let net = Network::new(small_spec()).unwrap();
        let p = net.init_params::<f64>(9);
        let b = batch(3);
        let out = net.forward(&p, &b).unwrap();
        let zero = net.backward(&p, &b, &LogitGrads::zeros(3), &out.cache).unwrap();
        assert!(zero.iter_values().all(|v| v == 0.0));
        let up = LogitGrads {
            fake: vec![0.3, -0.2, 0.5],
            dem: vec![[0.1; DEM_CLASSES], [-0.05; DEM_CLASSES], [0.02; DEM_CLASSES]],
        };
        let g1 = net.backward(&p, &b, &up, &out.cache).unwrap();
        let g2 = net.backward(&p, &b, &up.scaled(2.0), &out.cache).unwrap();
        for (a, c) in g1.iter_values().zip(g2.iter_values()) {
            assert!((2.0 * a - c).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let net = Network::new(small_spec()).unwrap();
        let p = net.init_params::<f64>(1);
        let b = batch(2);
        let out = net.forward(&p, &b).unwrap();
        let other = net.init_params::<f64>(2);
        assert!(matches!(
            net.backward(&other, &b, &LogitGrads::zeros(2), &out.cache),
            Err(Error::StaleCache)
        ));
        let b2 = batch(3);
        let out2 = net.forward(&p, &b2).unwrap();
        assert!(matches!(
            net.backward(&p, &b, &LogitGrads::zeros(2), &out2.cache),
            Err(Error::StaleCache)
        ));
    }

    #[test]
    fn total_loss_gradient_matches_finite_differences() {
        let net = Network::new(small_spec()).unwrap();
        // Enlarged biases keep most units away from the ReLU kink.
        let p = net.init_params::<f64>(31).map(|v| v * 1.5);
        let b = batch(6);
        let lambda = 20.0;
        let out = net.forward(&p, &b).unwrap();
        let (_, up) = total_loss(&out.fake_logits, &out.dem_logits, &b, lambda).unwrap();
        let analytic = net.backward(&p, &b, &up, &out.cache).unwrap();
        let coords = sample_coords(p.total_dim(), 80, 4);
        let err = finite_diff_grad_check(
            &p,
            &analytic,
            |q| {
                let o = net.forward(q, &b)?;
                Ok(total_loss(&o.fake_logits, &o.dem_logits, &b, lambda)?.0.total)
            },
            &coords,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }
}
