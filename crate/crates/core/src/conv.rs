//! 2-D cross-correlation with zero padding, forward and reverse mode.
//!
//! Stride-1 layers run one GEMM per kernel tap over a zero-padded copy of the
//! input, computing a `H x (W + 2p)` output grid whose extra columns are
//! dropped. Strided layers lower each batch item to a column matrix
//! (`im2col`). The GEMM accumulates in the storage precision; bias gradients
//! accumulate in f64.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::ensure_shape;
use crate::{Error, Real, Result, Tensor};

/// Kernel, bias and geometry of one convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T = f32> {
    pub c_out: usize,
    pub c_in: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    /// `c_out x c_in x k x k`
    pub kernel: Vec<T>,
    /// `c_out`
    pub bias: Vec<T>,
}

/// Gradients with respect to a layer's kernel and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T = f32> {
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvParams<T> {
    pub fn zeros(c_out: usize, c_in: usize, k: usize, stride: usize, padding: usize) -> Result<Self> {
        Self::new(
            c_out,
            c_in,
            k,
            stride,
            padding,
            vec![T::zero(); c_out * c_in * k * k],
            vec![T::zero(); c_out],
        )
    }

    pub fn new(
        c_out: usize,
        c_in: usize,
        k: usize,
        stride: usize,
        padding: usize,
        kernel: Vec<T>,
        bias: Vec<T>,
    ) -> Result<Self> {
        if k % 2 == 0 {
            return Err(Error::InvalidArgument(alloc::format!("kernel size {k} must be odd")));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be positive".into()));
        }
        ensure_shape!("kernel length", c_out * c_in * k * k, kernel.len());
        ensure_shape!("bias length", c_out, bias.len());
        Ok(Self {
            c_out,
            c_in,
            k,
            stride,
            padding,
            kernel,
            bias,
        })
    }

    /// Output spatial size for an input of size `len` along one axis.
    pub fn out_len(&self, len: usize) -> Result<usize> {
        let padded = len + 2 * self.padding;
        if padded < self.k {
            return Err(Error::ShapeMismatch {
                what: "padded input smaller than kernel",
                expected: self.k,
                found: padded,
            });
        }
        Ok((padded - self.k) / self.stride + 1)
    }

    pub fn num_params(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    pub fn zero_grads(&self) -> ConvGrads<T> {
        ConvGrads {
            kernel: vec![T::zero(); self.kernel.len()],
            bias: vec![T::zero(); self.bias.len()],
        }
    }

    pub fn convert<U: Real>(&self) -> ConvParams<U> {
        ConvParams {
            c_out: self.c_out,
            c_in: self.c_in,
            k: self.k,
            stride: self.stride,
            padding: self.padding,
            kernel: self.kernel.iter().map(|v| U::of(v.as_f64())).collect(),
            bias: self.bias.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.padding == 0
    }

    fn is_shifted(&self) -> bool {
        self.stride == 1 && !self.is_pointwise()
    }
}

/// Zero-padded layout for the per-tap GEMMs: each channel holds
/// `(H + 2p + 1) x (W + 2p)` values, the spare row absorbing the reads of the
/// last taps past the grid's end.
struct Padded {
    wp: usize,
    chan: usize,
    grid: usize,
}

impl Padded {
    fn new(g: &Geometry, pad: usize) -> Self {
        let wp = g.w + 2 * pad;
        Self {
            wp,
            chan: (g.h + 2 * pad + 1) * wp,
            grid: g.ho * wp,
        }
    }

    fn fill<T: Real>(&self, src: &[T], c_in: usize, g: &Geometry, pad: usize, dst: &mut [T]) {
        for c in 0..c_in {
            for y in 0..g.h {
                let at = c * self.chan + (y + pad) * self.wp + pad;
                dst[at..at + g.w].copy_from_slice(&src[(c * g.h + y) * g.w..][..g.w]);
            }
        }
    }

    fn tap(&self, p: &ConvParams<impl Real>, ky: usize, kx: usize) -> (usize, usize) {
        (ky * p.k + kx, ky * self.wp + kx)
    }
}

struct Geometry {
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

fn geometry<T: Real>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Geometry> {
    ensure_shape!("conv input channels", p.c_in, x.channels());
    let (h, w) = (x.height(), x.width());
    Ok(Geometry {
        h,
        w,
        ho: p.out_len(h)?,
        wo: p.out_len(w)?,
    })
}

fn im2col<T: Real>(input: &[T], p: &ConvParams<T>, g: &Geometry, cols: &mut [T]) {
    let (k, s, pad) = (p.k, p.stride as isize, p.padding as isize);
    let plane = g.ho * g.wo;
    for c in 0..p.c_in {
        let src = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = oy as isize * s - pad + ki as isize;
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = ox as isize * s - pad + kj as isize;
                        *o = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], p: &ConvParams<T>, g: &Geometry, out: &mut [T]) {
    let (k, s, pad) = (p.k, p.stride as isize, p.padding as isize);
    let plane = g.ho * g.wo;
    for c in 0..p.c_in {
        let dst = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = oy as isize * s - pad + ki as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = ox as isize * s - pad + kj as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] = dst_row[ix as usize] + src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `x` (`N x C_in x H x W`) with `p`.
pub fn conv2d_forward<T: Real>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let g = geometry(x, p)?;
    if p.is_shifted() {
        return Ok(forward_shifted(x, p, &g));
    }
    let n = x.batch();
    let plane = g.ho * g.wo;
    let mut out = Tensor::zeros([n, p.c_out, g.ho, g.wo]);
    let mut cols = if p.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); p.patch_len() * plane]
    };
    for i in 0..n {
        let dst = out.item_mut(i);
        for (o, row) in dst.chunks_exact_mut(plane).enumerate() {
            row.fill(p.bias[o]);
        }
        let rhs: &[T] = if p.is_pointwise() {
            x.item(i)
        } else {
            im2col(x.item(i), p, &g, &mut cols);
            &cols
        };
        T::gemm(p.c_out, p.patch_len(), plane, T::one(), &p.kernel, false, rhs, false, T::one(), dst);
    }
    Ok(out)
}

fn forward_shifted<T: Real>(x: &Tensor<T>, p: &ConvParams<T>, g: &Geometry) -> Tensor<T> {
    let n = x.batch();
    let pd = Padded::new(g, p.padding);
    let kk = p.k * p.k;
    let mut out = Tensor::zeros([n, p.c_out, g.ho, g.wo]);
    let mut xpad = vec![T::zero(); p.c_in * pd.chan];
    let mut grid = vec![T::zero(); p.c_out * pd.grid];
    for i in 0..n {
        pd.fill(x.item(i), p.c_in, g, p.padding, &mut xpad);
        for (o, row) in grid.chunks_exact_mut(pd.grid).enumerate() {
            row.fill(p.bias[o]);
        }
        for ky in 0..p.k {
            for kx in 0..p.k {
                let (ka, xa) = pd.tap(p, ky, kx);
                T::gemm_strided(
                    p.c_out,
                    p.c_in,
                    pd.grid,
                    T::one(),
                    &p.kernel[ka..],
                    (p.c_in * kk, kk),
                    &xpad[xa..],
                    (pd.chan, 1),
                    T::one(),
                    &mut grid,
                    (pd.grid, 1),
                );
            }
        }
        let dst = out.item_mut(i);
        for (d, row) in dst.chunks_exact_mut(g.wo).zip(grid.chunks_exact(pd.wp)) {
            d.copy_from_slice(&row[..g.wo]);
        }
    }
    out
}

/// Reverse mode of [`conv2d_forward`]: gradients of `sum(grad_out * forward(x, p))`.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, ConvGrads<T>)> {
    let mut grads = p.zero_grads();
    let gx = conv2d_backward_accumulate(x, p, grad_out, &mut grads, true)?;
    Ok((gx.expect("input gradient requested"), grads))
}

/// Accumulates parameter gradients into `grads`; returns the input gradient
/// only when `need_input_grad` is set.
pub(crate) fn conv2d_backward_accumulate<T: Real>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor<T>,
    grads: &mut ConvGrads<T>,
    need_input_grad: bool,
) -> Result<Option<Tensor<T>>> {
    let g = geometry(x, p)?;
    ensure_shape!("grad_out batch", x.batch(), grad_out.batch());
    ensure_shape!("grad_out channels", p.c_out, grad_out.channels());
    ensure_shape!("grad_out height", g.ho, grad_out.height());
    ensure_shape!("grad_out width", g.wo, grad_out.width());
    if p.is_shifted() {
        return Ok(backward_shifted(x, p, &g, grad_out, grads, need_input_grad));
    }
    let n = x.batch();
    let plane = g.ho * g.wo;
    let patch = p.patch_len();
    let mut gx = need_input_grad.then(|| Tensor::zeros(x.shape()));
    let mut cols = vec![T::zero(); if p.is_pointwise() { 0 } else { patch * plane }];
    let mut dcols = vec![T::zero(); if need_input_grad && !p.is_pointwise() { patch * plane } else { 0 }];

    let mut bias_acc = vec![0.0f64; p.c_out];
    for i in 0..n {
        let go = grad_out.item(i);
        for (o, row) in go.chunks_exact(plane).enumerate() {
            bias_acc[o] += row.iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let lowered: &[T] = if p.is_pointwise() {
            x.item(i)
        } else {
            im2col(x.item(i), p, &g, &mut cols);
            &cols
        };
        // dK += dOut * cols^T
        T::gemm(p.c_out, plane, patch, T::one(), go, false, lowered, true, T::one(), &mut grads.kernel);
        if let Some(gx) = gx.as_mut() {
            let dst = gx.item_mut(i);
            if p.is_pointwise() {
                T::gemm(patch, p.c_out, plane, T::one(), &p.kernel, true, go, false, T::zero(), dst);
            } else {
                T::gemm(patch, p.c_out, plane, T::one(), &p.kernel, true, go, false, T::zero(), &mut dcols);
                col2im(&dcols, p, &g, dst);
            }
        }
    }
    for (b, acc) in grads.bias.iter_mut().zip(bias_acc) {
        *b = T::of(b.as_f64() + acc);
    }
    Ok(gx)
}

fn backward_shifted<T: Real>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    g: &Geometry,
    grad_out: &Tensor<T>,
    grads: &mut ConvGrads<T>,
    need_input_grad: bool,
) -> Option<Tensor<T>> {
    let n = x.batch();
    let pd = Padded::new(g, p.padding);
    let kk = p.k * p.k;
    let mut gx = need_input_grad.then(|| Tensor::zeros(x.shape()));
    let mut xpad = vec![T::zero(); p.c_in * pd.chan];
    let mut dxpad = vec![T::zero(); if need_input_grad { p.c_in * pd.chan } else { 0 }];
    let mut dgrid = vec![T::zero(); p.c_out * pd.grid];
    let mut bias_acc = vec![0.0f64; p.c_out];
    for i in 0..n {
        let go = grad_out.item(i);
        for (o, row) in go.chunks_exact(g.ho * g.wo).enumerate() {
            bias_acc[o] += row.iter().map(|v| v.as_f64()).sum::<f64>();
        }
        for (d, row) in dgrid.chunks_exact_mut(pd.wp).zip(go.chunks_exact(g.wo)) {
            d[..g.wo].copy_from_slice(row);
        }
        pd.fill(x.item(i), p.c_in, g, p.padding, &mut xpad);
        if need_input_grad {
            dxpad.fill(T::zero());
        }
        for ky in 0..p.k {
            for kx in 0..p.k {
                let (ka, xa) = pd.tap(p, ky, kx);
                // dK[:, :, ky, kx] += dGrid * shifted(xpad)^T
                T::gemm_strided(
                    p.c_out,
                    pd.grid,
                    p.c_in,
                    T::one(),
                    &dgrid,
                    (pd.grid, 1),
                    &xpad[xa..],
                    (1, pd.chan),
                    T::one(),
                    &mut grads.kernel[ka..],
                    (p.c_in * kk, kk),
                );
                if need_input_grad {
                    T::gemm_strided(
                        p.c_in,
                        p.c_out,
                        pd.grid,
                        T::one(),
                        &p.kernel[ka..],
                        (kk, p.c_in * kk),
                        &dgrid,
                        (pd.grid, 1),
                        T::one(),
                        &mut dxpad[xa..],
                        (pd.chan, 1),
                    );
                }
            }
        }
        if let Some(gx) = gx.as_mut() {
            let dst = gx.item_mut(i);
            for c in 0..p.c_in {
                for y in 0..g.h {
                    let at = c * pd.chan + (y + p.padding) * pd.wp + p.padding;
                    dst[(c * g.h + y) * g.w..][..g.w].copy_from_slice(&dxpad[at..at + g.w]);
                }
            }
        }
    }
    for (b, acc) in grads.bias.iter_mut().zip(bias_acc) {
        *b = T::of(b.as_f64() + acc);
    }
    gx
}
