//! The uncertainty estimation network.
//!
//! Three encoder branches with kernel sizes 3, 5 and 7 read the erased image
//! `x_r`. Each runs
//!
//! ```text
//! conv(k, s2, 32) relu  conv(k, s2, 64) relu  up2
//! conv(k, s1, 32) relu  up2  conv(k, s1, 16) relu
//! ```
//!
//! The branch outputs are concatenated (48 channels) and a 1x1 head maps
//! them to `Z`, whose 100 channels are the mixture parameters consumed by
//! [`crate::dml`]. A decoder `conv3x3(32) relu conv3x3(3) tanh` maps `Z` to
//! the reconstruction `o`. Widths are configurable so tiny networks can be
//! checked numerically.

#[cfg(not(feature = "std"))]
use num_traits::Float;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::conv::{conv2d_backward_accumulate, conv2d_forward, ConvGrads, ConvParams};
use crate::dml::{feature_channels, generation_loss, generation_loss_grad, log_prob_pixel, MixtureField};
use crate::erasing::{build_mask, EraseMask, EraseStrategy, StrategySpec};
use crate::error::ensure_shape;
use crate::image::{normalize_u8, ImageRef, ImageTensor};
use crate::ops::{
    concat_channels, relu, relu_backward, split_channels, tanh, tanh_backward, upsample_nearest,
    upsample_nearest_backward,
};
use crate::rng::{derive_seed, SeededRng};
use crate::{Error, Real, Result, Tensor};

const BRANCH_DEPTH: usize = 4;
const SURROGATE_SIGMA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct UenConfig {
    pub k_mixture: usize,
    pub lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub branch_kernels: Vec<usize>,
    /// Output channels of the four convolutions in every branch.
    pub branch_widths: [usize; BRANCH_DEPTH],
    pub decoder_width: usize,
    pub strategy: StrategySpec,
    /// Epoch window for the plateau test; 0 disables early stopping.
    pub patience: usize,
    pub min_rel_improvement: f64,
}

impl Default for UenConfig {
    fn default() -> Self {
        Self {
            k_mixture: crate::dml::DEFAULT_COMPONENTS,
            lambda: 0.8,
            lr: 1e-5,
            batch_size: 64,
            epochs: 30,
            seed: 0,
            branch_kernels: vec![3, 5, 7],
            branch_widths: [32, 64, 32, 16],
            decoder_width: 32,
            strategy: StrategySpec::CENTER,
            patience: 5,
            min_rel_improvement: 1e-3,
        }
    }
}

/// One convolution of the architecture descriptor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub c_out: usize,
    pub c_in: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

impl UenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must be in [0, 1], got {}", self.lambda));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be non-negative, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.k_mixture == 0 {
            return bad("mixture needs at least one component".into());
        }
        if self.branch_kernels.is_empty() || self.branch_kernels.iter().any(|k| k % 2 == 0) {
            return bad(format!("branch kernels must be odd, got {:?}", self.branch_kernels));
        }
        if self.branch_widths.contains(&0) || self.decoder_width == 0 {
            return bad("layer widths must be positive".into());
        }
        if !(self.min_rel_improvement >= 0.0) {
            return bad("min_rel_improvement must be non-negative".into());
        }
        Ok(())
    }

    pub fn z_channels(&self) -> usize {
        feature_channels(self.k_mixture)
    }

    /// Layers in parameter order: branches, head, decoder.
    pub fn architecture(&self) -> Vec<LayerSpec> {
        let mut out = Vec::new();
        let strides = [2, 2, 1, 1];
        for &k in &self.branch_kernels {
            let mut c_in = 3;
            for (i, (&c_out, &stride)) in self.branch_widths.iter().zip(&strides).enumerate() {
                out.push(LayerSpec {
                    name: format!("branch{k}.conv{}", i + 1),
                    c_out,
                    c_in,
                    k,
                    stride,
                    padding: k / 2,
                });
                c_in = c_out;
            }
        }
        let concat = self.branch_widths[3] * self.branch_kernels.len();
        out.push(LayerSpec {
            name: "head".into(),
            c_out: self.z_channels(),
            c_in: concat,
            k: 1,
            stride: 1,
            padding: 0,
        });
        out.push(LayerSpec {
            name: "decoder.conv1".into(),
            c_out: self.decoder_width,
            c_in: self.z_channels(),
            k: 3,
            stride: 1,
            padding: 1,
        });
        out.push(LayerSpec {
            name: "decoder.conv2".into(),
            c_out: 3,
            c_in: self.decoder_width,
            k: 3,
            stride: 1,
            padding: 1,
        });
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch<T: Real = f32> {
    pub kernel_size: usize,
    pub layers: Vec<ConvParams<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UenWeights<T: Real = f32> {
    pub branches: Vec<Branch<T>>,
    pub head: ConvParams<T>,
    pub dec1: ConvParams<T>,
    pub dec2: ConvParams<T>,
}

/// Parameter gradients in [`UenWeights::layers`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct UenGrads<T: Real = f32> {
    pub layers: Vec<ConvGrads<T>>,
}

impl<T: Real> UenWeights<T> {
    fn from_specs(specs: &[LayerSpec], branch_count: usize, mut make: impl FnMut(&LayerSpec) -> Result<ConvParams<T>>) -> Result<Self> {
        ensure_shape!("layer count", branch_count * BRANCH_DEPTH + 3, specs.len());
        let mut it = specs.iter();
        let mut branches = Vec::with_capacity(branch_count);
        for _ in 0..branch_count {
            let mut layers = Vec::with_capacity(BRANCH_DEPTH);
            let mut kernel_size = 0;
            for _ in 0..BRANCH_DEPTH {
                let s = it.next().expect("counted above");
                kernel_size = s.k;
                layers.push(make(s)?);
            }
            branches.push(Branch { kernel_size, layers });
        }
        let head = make(it.next().expect("counted"))?;
        let dec1 = make(it.next().expect("counted"))?;
        let dec2 = make(it.next().expect("counted"))?;
        Ok(Self { branches, head, dec1, dec2 })
    }

    pub fn zeros(cfg: &UenConfig) -> Result<Self> {
        cfg.validate()?;
        Self::from_specs(&cfg.architecture(), cfg.branch_kernels.len(), |s| {
            ConvParams::zeros(s.c_out, s.c_in, s.k, s.stride, s.padding)
        })
    }

    /// He-uniform kernels (`U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`), zero biases.
    pub fn init(cfg: &UenConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SeededRng::new(seed);
        Self::from_specs(&cfg.architecture(), cfg.branch_kernels.len(), |s| {
            let bound = (6.0 / (s.c_in * s.k * s.k) as f64).sqrt();
            let kernel = (0..s.c_out * s.c_in * s.k * s.k)
                .map(|_| T::of(rng.uniform(-bound, bound)))
                .collect();
            ConvParams::new(s.c_out, s.c_in, s.k, s.stride, s.padding, kernel, vec![T::zero(); s.c_out])
        })
    }

    /// Rebuilds weights from a descriptor and a flat parameter vector
    /// (kernel then bias, layer by layer).
    pub fn from_flat(cfg: &UenConfig, flat: &[T]) -> Result<Self> {
        cfg.validate()?;
        let specs = cfg.architecture();
        let total: usize = specs.iter().map(|s| s.c_out * (s.c_in * s.k * s.k + 1)).sum();
        ensure_shape!("parameter count", total, flat.len());
        let mut offset = 0;
        Self::from_specs(&specs, cfg.branch_kernels.len(), |s| {
            let nk = s.c_out * s.c_in * s.k * s.k;
            let kernel = flat[offset..offset + nk].to_vec();
            let bias = flat[offset + nk..offset + nk + s.c_out].to_vec();
            offset += nk + s.c_out;
            ConvParams::new(s.c_out, s.c_in, s.k, s.stride, s.padding, kernel, bias)
        })
    }

    pub fn layers(&self) -> Vec<&ConvParams<T>> {
        let mut out: Vec<&ConvParams<T>> = self.branches.iter().flat_map(|b| b.layers.iter()).collect();
        out.extend([&self.head, &self.dec1, &self.dec2]);
        out
    }

    pub fn layers_mut(&mut self) -> Vec<&mut ConvParams<T>> {
        let mut out: Vec<&mut ConvParams<T>> = self.branches.iter_mut().flat_map(|b| b.layers.iter_mut()).collect();
        out.push(&mut self.head);
        out.push(&mut self.dec1);
        out.push(&mut self.dec2);
        out
    }

    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in self.layers() {
            out.extend_from_slice(&l.kernel);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|l| l.num_params()).sum()
    }

    /// Mixture components implied by the head width.
    pub fn components(&self) -> usize {
        self.head.c_out / feature_channels(1)
    }

    pub fn all_finite(&self) -> bool {
        self.layers()
            .iter()
            .all(|l| l.kernel.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Descriptor of the stored layers, in parameter order.
    pub fn architecture(&self) -> Vec<LayerSpec> {
        let mut out = Vec::new();
        for b in &self.branches {
            for (i, l) in b.layers.iter().enumerate() {
                out.push(spec_of(format!("branch{}.conv{}", b.kernel_size, i + 1), l));
            }
        }
        out.push(spec_of("head".into(), &self.head));
        out.push(spec_of("decoder.conv1".into(), &self.dec1));
        out.push(spec_of("decoder.conv2".into(), &self.dec2));
        out
    }

    /// Checks that the weights were built for `cfg`.
    pub fn check_matches(&self, cfg: &UenConfig) -> Result<()> {
        if self.architecture() != cfg.architecture() {
            return Err(Error::InvalidArgument("weights do not match the configured architecture".into()));
        }
        Ok(())
    }

    pub fn convert<U: Real>(&self) -> UenWeights<U> {
        UenWeights {
            branches: self
                .branches
                .iter()
                .map(|b| Branch {
                    kernel_size: b.kernel_size,
                    layers: b.layers.iter().map(ConvParams::convert).collect(),
                })
                .collect(),
            head: self.head.convert(),
            dec1: self.dec1.convert(),
            dec2: self.dec2.convert(),
        }
    }
}

fn spec_of<T: Real>(name: String, l: &ConvParams<T>) -> LayerSpec {
    LayerSpec {
        name,
        c_out: l.c_out,
        c_in: l.c_in,
        k: l.k,
        stride: l.stride,
        padding: l.padding,
    }
}

struct BranchCache<T: Real> {
    a1: Tensor<T>,
    a2: Tensor<T>,
    u1: Tensor<T>,
    a3: Tensor<T>,
    u2: Tensor<T>,
    a4: Tensor<T>,
}

struct Cache<T: Real> {
    branches: Vec<BranchCache<T>>,
    concat: Tensor<T>,
    d1: Tensor<T>,
}

fn check_input<T: Real>(x: &Tensor<T>) -> Result<()> {
    ensure_shape!("network input channels", 3, x.channels());
    if x.height() % 4 != 0 || x.width() % 4 != 0 || x.height() == 0 || x.width() == 0 {
        return Err(Error::InvalidArgument(format!(
            "input {}x{} must have sides divisible by 4",
            x.height(),
            x.width()
        )));
    }
    Ok(())
}

fn forward_cached<T: Real>(w: &UenWeights<T>, x_r: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Cache<T>)> {
    check_input(x_r)?;
    let mut branches = Vec::with_capacity(w.branches.len());
    for b in &w.branches {
        let a1 = relu(&conv2d_forward(x_r, &b.layers[0])?);
        let a2 = relu(&conv2d_forward(&a1, &b.layers[1])?);
        let u1 = upsample_nearest(&a2, 2)?;
        let a3 = relu(&conv2d_forward(&u1, &b.layers[2])?);
        let u2 = upsample_nearest(&a3, 2)?;
        let a4 = relu(&conv2d_forward(&u2, &b.layers[3])?);
        branches.push(BranchCache { a1, a2, u1, a3, u2, a4 });
    }
    let outs: Vec<&Tensor<T>> = branches.iter().map(|c| &c.a4).collect();
    let concat = concat_channels(&outs)?;
    let z = conv2d_forward(&concat, &w.head)?;
    let d1 = relu(&conv2d_forward(&z, &w.dec1)?);
    let o = tanh(&conv2d_forward(&d1, &w.dec2)?);
    Ok((z, o, Cache { branches, concat, d1 }))
}

/// Maps the erased, normalized input to the feature map `Z` and the reconstruction `o`.
pub fn forward<T: Real>(w: &UenWeights<T>, x_r: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    forward_cached(w, x_r).map(|(z, o, _)| (z, o))
}

/// Reverse pass given upstream gradients for `Z` (from the likelihood) and
/// for the tanh output `o`.
fn backward<T: Real>(
    w: &UenWeights<T>,
    x_r: &Tensor<T>,
    z: &Tensor<T>,
    o: &Tensor<T>,
    cache: &Cache<T>,
    grad_z: Tensor<T>,
    grad_o: &Tensor<T>,
) -> Result<UenGrads<T>> {
    let mut grads: Vec<ConvGrads<T>> = w.layers().iter().map(|l| l.zero_grads()).collect();
    let nb = w.branches.len();
    let (head_i, dec1_i, dec2_i) = (nb * BRANCH_DEPTH, nb * BRANCH_DEPTH + 1, nb * BRANCH_DEPTH + 2);

    let g = tanh_backward(o, grad_o)?;
    let g = conv2d_backward_accumulate(&cache.d1, &w.dec2, &g, &mut grads[dec2_i], true)?.expect("requested");
    let g = relu_backward(&cache.d1, &g)?;
    let mut gz = conv2d_backward_accumulate(z, &w.dec1, &g, &mut grads[dec1_i], true)?.expect("requested");
    gz.add_assign(&grad_z)?;

    let gc = conv2d_backward_accumulate(&cache.concat, &w.head, &gz, &mut grads[head_i], true)?.expect("requested");
    let widths: Vec<usize> = w.branches.iter().map(|b| b.layers[3].c_out).collect();
    let parts = split_channels(&gc, &widths)?;
    for (bi, (b, (c, g4))) in w.branches.iter().zip(cache.branches.iter().zip(parts)).enumerate() {
        let base = bi * BRANCH_DEPTH;
        let g = relu_backward(&c.a4, &g4)?;
        let g = conv2d_backward_accumulate(&c.u2, &b.layers[3], &g, &mut grads[base + 3], true)?.expect("requested");
        let g = upsample_nearest_backward(&g, 2)?;
        let g = relu_backward(&c.a3, &g)?;
        let g = conv2d_backward_accumulate(&c.u1, &b.layers[2], &g, &mut grads[base + 2], true)?.expect("requested");
        let g = upsample_nearest_backward(&g, 2)?;
        let g = relu_backward(&c.a2, &g)?;
        let g = conv2d_backward_accumulate(&c.a1, &b.layers[1], &g, &mut grads[base + 1], true)?.expect("requested");
        let g = relu_backward(&c.a1, &g)?;
        conv2d_backward_accumulate(x_r, &b.layers[0], &g, &mut grads[base], false)?;
    }
    Ok(UenGrads { layers: grads })
}

/// Normalized image with the erased region zeroed in the raw domain (so it reads `-1`).
pub fn erased_input<T: Real>(images: &[ImageRef<'_>], masks: &[&EraseMask]) -> Result<Tensor<T>> {
    let first = images.first().ok_or(Error::Empty("image batch"))?;
    ensure_shape!("mask count", images.len(), masks.len());
    let (c, h, w) = (first.channels, first.height, first.width);
    let plane = h * w;
    let mut data = Vec::with_capacity(images.len() * c * plane);
    for (im, m) in images.iter().zip(masks) {
        ensure_shape!("image channels", c, im.channels);
        ensure_shape!("mask height", h, m.height());
        ensure_shape!("mask width", w, m.width());
        for ch in 0..c {
            let src = &im.data[ch * plane..(ch + 1) * plane];
            data.extend(src.iter().zip(m.values()).map(|(&v, &keep)| T::of(normalize_u8(if keep == 1 { v } else { 0 }))));
        }
    }
    Tensor::from_vec([images.len(), c, h, w], data)
}

fn normalized_item(im: &ImageRef<'_>) -> Vec<f64> {
    im.data.iter().map(|&v| normalize_u8(v)).collect()
}

/// Mean squared reconstruction error over surround pixels and channels.
pub fn loss_r<T: Real>(o: &[T], x: &[f64], mask: &EraseMask) -> Result<f64> {
    ensure_shape!("reconstruction length", x.len(), o.len());
    let plane = mask.height() * mask.width();
    if plane == 0 || x.len() % plane != 0 {
        return Err(Error::ShapeMismatch { what: "image length vs mask", expected: plane, found: x.len() });
    }
    if mask.kept_count() == 0 {
        return Err(Error::Empty("surround"));
    }
    let channels = x.len() / plane;
    let mut total = 0.0;
    for c in 0..channels {
        for i in mask.kept_indices() {
            let d = x[c * plane + i] - o[c * plane + i].as_f64();
            total += d * d;
        }
    }
    Ok(total / (mask.kept_count() * channels) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Losses {
    pub total: f64,
    pub r: f64,
    pub e: f64,
}

impl Losses {
    pub fn combine(lambda: f64, r: f64, e: f64) -> Self {
        Self { total: lambda * r + (1.0 - lambda) * e, r, e }
    }
}

/// Losses of a single image under one mask.
pub fn loss_total<T: Real>(w: &UenWeights<T>, lambda: f64, x: ImageRef<'_>, mask: &EraseMask) -> Result<Losses> {
    let x_r = erased_input::<T>(&[x], &[mask])?;
    let (z, o) = forward(w, &x_r)?;
    let xn = normalized_item(&x);
    let r = loss_r(o.item(0), &xn, mask)?;
    let field = MixtureField::from_features(&z, 0, w.components())?;
    let e = generation_loss(&field, &xn, mask)?;
    Ok(Losses::combine(lambda, r, e))
}

/// Batch-mean losses and their parameter gradients; image `i` uses `masks[i]`.
pub fn loss_and_grad<T: Real>(
    w: &UenWeights<T>,
    lambda: f64,
    images: &[ImageRef<'_>],
    masks: &[&EraseMask],
) -> Result<(Losses, UenGrads<T>)> {
    let x_r = erased_input::<T>(images, masks)?;
    let (z, o, cache) = forward_cached(w, &x_r)?;
    let n = images.len() as f64;
    let k = w.components();
    let mut grad_z = Tensor::<T>::zeros(z.shape());
    let mut grad_o = Tensor::<T>::zeros(o.shape());
    let mut acc = Losses::default();
    for (i, (im, mask)) in images.iter().zip(masks).enumerate() {
        let xn = normalized_item(im);
        let r = loss_r(o.item(i), &xn, mask)?;
        let field = MixtureField::from_features(&z, i, k)?;
        let (e, ge) = generation_loss_grad(&field, &xn, mask)?;
        acc.r += r / n;
        acc.e += e / n;

        let scale_e = (1.0 - lambda) / n;
        for (dst, g) in grad_z.item_mut(i).iter_mut().zip(&ge) {
            *dst = T::of(g * scale_e);
        }
        let plane = mask.height() * mask.width();
        let channels = xn.len() / plane;
        let scale_r = lambda * 2.0 / (n * (mask.kept_count() * channels) as f64);
        let oi = o.item(i).to_vec();
        let go = grad_o.item_mut(i);
        for c in 0..channels {
            for p in mask.kept_indices() {
                let j = c * plane + p;
                go[j] = T::of(scale_r * (oi[j].as_f64() - xn[j]));
            }
        }
    }
    let losses = Losses::combine(lambda, acc.r, acc.e);
    let grads = backward(w, &x_r, &z, &o, &cache, grad_z, &grad_o)?;
    Ok((losses, grads))
}

/// Adam with bias-corrected moments, kept in f64.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Real>(lr: f64, w: &UenWeights<T>) -> Self {
        let mut m = Vec::new();
        for l in w.layers() {
            m.push(vec![0.0; l.kernel.len()]);
            m.push(vec![0.0; l.bias.len()]);
        }
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, v: m.clone(), m }
    }

    pub fn step<T: Real>(&mut self, w: &mut UenWeights<T>, g: &UenGrads<T>) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let mut slot = 0;
        for (layer, grads) in w.layers_mut().into_iter().zip(&g.layers) {
            for (params, gs) in [(&mut layer.kernel, &grads.kernel), (&mut layer.bias, &grads.bias)] {
                let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
                for (((p, &gv), mi), vi) in params.iter_mut().zip(gs.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                    let gv = gv.as_f64();
                    *mi = self.beta1 * *mi + (1.0 - self.beta1) * gv;
                    *vi = self.beta2 * *vi + (1.0 - self.beta2) * gv * gv;
                    if self.lr != 0.0 {
                        let update = self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
                        *p = T::of(p.as_f64() - update);
                    }
                }
                slot += 1;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub losses: Losses,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T: Real = f32> {
    pub weights: UenWeights<T>,
    pub history: Vec<EpochLoss>,
    pub stopped_early: bool,
}

/// True when the best loss of the last `patience` epochs improved on the
/// best before them by less than `min_rel` (relative).
pub fn plateaued(history: &[EpochLoss], patience: usize, min_rel: f64) -> bool {
    if patience == 0 || history.len() <= patience {
        return false;
    }
    let split = history.len() - patience;
    let best = |h: &[EpochLoss]| h.iter().map(|e| e.losses.total).fold(f64::INFINITY, f64::min);
    let before = best(&history[..split]);
    let recent = best(&history[split..]);
    before - recent < min_rel * before.abs()
}

fn masks_for(spec: StrategySpec, h: usize, w: usize) -> Result<Vec<EraseMask>> {
    spec.resolve(h, w).into_iter().map(|s| build_mask(s, h, w)).collect()
}

pub fn train(cfg: &UenConfig, images: &ImageTensor) -> Result<TrainOutcome> {
    train_with(cfg, images, |_| {})
}

/// Trains from a fresh seeded initialization, calling `on_epoch` after every epoch.
pub fn train_with<T: Real>(
    cfg: &UenConfig,
    images: &ImageTensor,
    on_epoch: impl FnMut(&EpochLoss),
) -> Result<TrainOutcome<T>> {
    let weights = UenWeights::init(cfg, derive_seed(cfg.seed, 0))?;
    train_from(cfg, weights, images, on_epoch)
}

/// Continues training `weights` (shuffle and variant streams still derive from `cfg.seed`).
pub fn train_from<T: Real>(
    cfg: &UenConfig,
    mut weights: UenWeights<T>,
    images: &ImageTensor,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    weights.check_matches(cfg)?;
    let n = images.len();
    if n < cfg.batch_size {
        return Err(Error::InvalidArgument(format!(
            "dataset of {n} images is smaller than the batch size {}",
            cfg.batch_size
        )));
    }
    let [_, _, h, w] = images.shape();
    let masks = masks_for(cfg.strategy, h, w)?;
    let mut order_rng = SeededRng::new(derive_seed(cfg.seed, 1));
    let mut variant_rng = SeededRng::new(derive_seed(cfg.seed, 2));
    let mut adam = Adam::new(cfg.lr, &weights);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    let steps = n / cfg.batch_size;
    let mut stopped_early = false;
    for epoch in 0..cfg.epochs {
        order_rng.shuffle(&mut order);
        let mut sum = Losses::default();
        for step in 0..steps {
            let idx = &order[step * cfg.batch_size..(step + 1) * cfg.batch_size];
            let batch: Vec<ImageRef<'_>> = idx.iter().map(|&i| images.image(i)).collect();
            let chosen: Vec<&EraseMask> = idx
                .iter()
                .map(|_| &masks[if masks.len() > 1 { variant_rng.below(masks.len()) } else { 0 }])
                .collect();
            let (l, g) = match loss_and_grad(&weights, cfg.lambda, &batch, &chosen) {
                Ok(v) => v,
                Err(Error::NonFinite(_)) => return Err(Error::Diverged { epoch, step }),
                Err(e) => return Err(e),
            };
            if !l.total.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            adam.step(&mut weights, &g);
            if !weights.all_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            sum.total += l.total;
            sum.r += l.r;
            sum.e += l.e;
        }
        let s = steps as f64;
        let record = EpochLoss {
            epoch,
            losses: Losses { total: sum.total / s, r: sum.r / s, e: sum.e / s },
        };
        on_epoch(&record);
        history.push(record);
        if plateaued(&history, cfg.patience, cfg.min_rel_improvement) {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome { weights, history, stopped_early })
}

const EVAL_CHUNK: usize = 64;

/// Runs the network over `images` in chunks under every mask, handing each
/// image's features and outputs to `visit(index, mask, z, o, item)`.
fn for_each_output<T: Real>(
    w: &UenWeights<T>,
    images: &ImageTensor,
    masks: &[EraseMask],
    mut visit: impl FnMut(usize, &EraseMask, &Tensor<T>, &Tensor<T>, usize) -> Result<()>,
) -> Result<()> {
    for start in (0..images.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(images.len());
        let batch: Vec<ImageRef<'_>> = (start..end).map(|i| images.image(i)).collect();
        for m in masks {
            let ms: Vec<&EraseMask> = batch.iter().map(|_| m).collect();
            let x_r = erased_input::<T>(&batch, &ms)?;
            let (z, o) = forward(w, &x_r)?;
            for i in 0..batch.len() {
                visit(start + i, m, &z, &o, i)?;
            }
        }
    }
    Ok(())
}

/// Per-image generation loss; multi-variant strategies average their variants.
pub fn score_dataset<T: Real>(w: &UenWeights<T>, images: &ImageTensor, strategy: StrategySpec) -> Result<Vec<f64>> {
    let [_, _, h, wd] = images.shape();
    let masks = masks_for(strategy, h, wd)?;
    let k = w.components();
    let mut scores = vec![0.0; images.len()];
    for_each_output(w, images, &masks, |idx, m, z, _, item| {
        let field = MixtureField::from_features(z, item, k)?;
        let xn = normalized_item(&images.image(idx));
        scores[idx] += generation_loss(&field, &xn, m)? / masks.len() as f64;
        Ok(())
    })?;
    Ok(scores)
}

/// Scores under one explicit strategy variant.
pub fn score_with<T: Real>(w: &UenWeights<T>, images: &ImageTensor, strategy: EraseStrategy) -> Result<Vec<f64>> {
    let spec = StrategySpec { kind: strategy.kind, variant: Some(strategy.variant) };
    let [_, _, h, wd] = images.shape();
    if strategy.patch != crate::erasing::default_patch(h, wd) {
        return Err(Error::InvalidArgument("only the default patch size is supported".to_string()));
    }
    score_dataset(w, images, spec)
}

/// Dataset-mean per-pixel log2 likelihood (`H x W`, channel-averaged).
/// Erased pixels use the mixture; kept pixels use a Gaussian with standard
/// deviation 0.1 around the reconstruction, integrated over one bin.
pub fn likelihood_heatmap<T: Real>(w: &UenWeights<T>, images: &ImageTensor, strategy: StrategySpec) -> Result<Vec<f64>> {
    if images.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let [_, c, h, wd] = images.shape();
    let plane = h * wd;
    let masks = masks_for(strategy, h, wd)?;
    let k = w.components();
    let weight = 1.0 / (images.len() * masks.len()) as f64;
    let log_norm = (2.0 / 255.0f64).ln() - (SURROGATE_SIGMA * (2.0 * core::f64::consts::PI).sqrt()).ln();
    let mut map = vec![0.0; plane];
    for_each_output(w, images, &masks, |idx, m, z, o, item| {
        let xn = normalized_item(&images.image(idx));
        let field = MixtureField::from_features(z, item, k)?;
        let erased = log_prob_pixel(&field, &xn)?.channel_mean();
        let oi = o.item(item);
        for (p, cell) in map.iter_mut().enumerate() {
            let v = if m.is_erased_index(p) {
                erased[p]
            } else {
                let s: f64 = (0..c)
                    .map(|ch| {
                        let d = (xn[ch * plane + p] - oi[ch * plane + p].as_f64()) / SURROGATE_SIGMA;
                        (log_norm - 0.5 * d * d) / core::f64::consts::LN_2
                    })
                    .sum();
                s / c as f64
            };
            *cell += v * weight;
        }
        Ok(())
    })?;
    Ok(map)
}

/// Flattened `Z` per image (`100 * H * W` values), averaged over variants
/// of a multi-variant strategy.
pub fn export_features<T: Real>(w: &UenWeights<T>, images: &ImageTensor, strategy: StrategySpec) -> Result<Vec<Vec<f32>>> {
    let [_, _, h, wd] = images.shape();
    let masks = masks_for(strategy, h, wd)?;
    let mut out = vec![Vec::new(); images.len()];
    let scale = 1.0 / masks.len() as f64;
    for_each_output(w, images, &masks, |idx, _, z, _, item| {
        let src = z.item(item);
        if masks.len() == 1 {
            out[idx] = src.iter().map(|v| v.as_f64() as f32).collect();
        } else {
            if out[idx].is_empty() {
                out[idx] = vec![0.0; src.len()];
            }
            for (d, v) in out[idx].iter_mut().zip(src) {
                *d += (v.as_f64() * scale) as f32;
            }
        }
        Ok(())
    })?;
    Ok(out)
}
