//! Elementwise nonlinearities, nearest-neighbour upsampling and channel
//! concatenation, each with its reverse-mode counterpart.

use alloc::vec::Vec;

use crate::error::ensure_shape;
use crate::{Error, Real, Result, Tensor};

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient through a ReLU given its forward output (or input; same sign pattern).
pub fn relu_backward<T: Real>(out: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    out.check_same_shape(grad)?;
    let mut g = grad.clone();
    for (gv, &o) in g.data_mut().iter_mut().zip(out.data()) {
        if o <= T::zero() {
            *gv = T::zero();
        }
    }
    Ok(g)
}

pub fn tanh<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

/// Gradient through tanh given its forward output.
pub fn tanh_backward<T: Real>(out: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    out.check_same_shape(grad)?;
    let mut g = grad.clone();
    for (gv, &o) in g.data_mut().iter_mut().zip(out.data()) {
        *gv = *gv * (T::one() - o * o);
    }
    Ok(g)
}

/// Replicates every pixel into a `factor x factor` block.
pub fn upsample_nearest<T: Real>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::InvalidArgument("upsample factor must be at least 1".into()));
    }
    let [n, c, h, w] = x.shape();
    if factor == 1 {
        return Ok(x.clone());
    }
    let (ho, wo) = (h * factor, w * factor);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        let d = &mut dst[plane * ho * wo..(plane + 1) * ho * wo];
        for oy in 0..ho {
            let srow = &s[(oy / factor) * w..(oy / factor + 1) * w];
            for (ox, v) in d[oy * wo..(oy + 1) * wo].iter_mut().enumerate() {
                *v = srow[ox / factor];
            }
        }
    }
    Ok(out)
}

/// Sums each `factor x factor` block of `grad` back into its source pixel.
pub fn upsample_nearest_backward<T: Real>(grad: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::InvalidArgument("upsample factor must be at least 1".into()));
    }
    let [n, c, ho, wo] = grad.shape();
    if ho % factor != 0 || wo % factor != 0 {
        return Err(Error::ShapeMismatch {
            what: "upsampled gradient not divisible by factor",
            expected: factor,
            found: ho % factor + wo % factor,
        });
    }
    let (h, w) = (ho / factor, wo / factor);
    let mut out = Tensor::zeros([n, c, h, w]);
    let src = grad.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        let s = &src[plane * ho * wo..(plane + 1) * ho * wo];
        let d = &mut dst[plane * h * w..(plane + 1) * h * w];
        for oy in 0..ho {
            let drow = &mut d[(oy / factor) * w..(oy / factor + 1) * w];
            for (ox, &v) in s[oy * wo..(oy + 1) * wo].iter().enumerate() {
                drow[ox / factor] = drow[ox / factor] + v;
            }
        }
    }
    Ok(out)
}

/// Concatenates tensors along the channel axis.
pub fn concat_channels<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or(Error::Empty("channel concatenation"))?;
    let [n, _, h, w] = first.shape();
    let mut total = 0;
    for p in parts {
        ensure_shape!("concat batch", n, p.batch());
        ensure_shape!("concat height", h, p.height());
        ensure_shape!("concat width", w, p.width());
        total += p.channels();
    }
    let mut data = Vec::with_capacity(n * total * h * w);
    for i in 0..n {
        for p in parts {
            data.extend_from_slice(p.item(i));
        }
    }
    Tensor::from_vec([n, total, h, w], data)
}

/// Reverse of [`concat_channels`]: splits `grad` into pieces of the given channel counts.
pub fn split_channels<T: Real>(grad: &Tensor<T>, channels: &[usize]) -> Result<Vec<Tensor<T>>> {
    let [n, c, h, w] = grad.shape();
    ensure_shape!("split channel total", c, channels.iter().sum::<usize>());
    let plane = h * w;
    let mut out: Vec<Tensor<T>> = channels.iter().map(|&ci| Tensor::zeros([n, ci, h, w])).collect();
    for i in 0..n {
        let src = grad.item(i);
        let mut offset = 0;
        for (t, &ci) in out.iter_mut().zip(channels) {
            t.item_mut(i).copy_from_slice(&src[offset * plane..(offset + ci) * plane]);
            offset += ci;
        }
    }
    Ok(out)
}
