//! Unsigned 8-bit image batches and the dataset wrapper every pipeline stage consumes.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::ensure_shape;
use crate::{Error, Real, Result, Tensor};

/// Side length every dataset is resized to.
pub const IMAGE_SIDE: usize = 32;
pub const IMAGE_CHANNELS: usize = 3;

/// `N x C x H x W` batch of 8-bit images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageTensor {
    shape: [usize; 4],
    data: Vec<u8>,
}

/// Borrowed single image, `C x H x W`.
#[derive(Debug, Clone, Copy)]
pub struct ImageRef<'a> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: &'a [u8],
}

impl ImageTensor {
    pub fn new(shape: [usize; 4], data: Vec<u8>) -> Result<Self> {
        ensure_shape!("image data length", shape.iter().product::<usize>(), data.len());
        Ok(Self { shape, data })
    }

    pub fn empty(channels: usize, height: usize, width: usize) -> Self {
        Self {
            shape: [0, channels, height, width],
            data: Vec::new(),
        }
    }

    pub fn from_images(channels: usize, height: usize, width: usize, images: &[ImageRef<'_>]) -> Result<Self> {
        let mut data = Vec::with_capacity(images.len() * channels * height * width);
        for im in images {
            ensure_shape!("image channels", channels, im.channels);
            ensure_shape!("image height", height, im.height);
            ensure_shape!("image width", width, im.width);
            data.extend_from_slice(im.data);
        }
        Ok(Self {
            shape: [images.len(), channels, height, width],
            data,
        })
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.shape[0] == 0
    }

    #[inline]
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn image(&self, i: usize) -> ImageRef<'_> {
        let len = self.item_len();
        ImageRef {
            channels: self.shape[1],
            height: self.shape[2],
            width: self.shape[3],
            data: &self.data[i * len..(i + 1) * len],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = ImageRef<'_>> {
        (0..self.len()).map(move |i| self.image(i))
    }

    /// Sub-batch made of the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let len = self.item_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(&self.data[i * len..(i + 1) * len]);
        }
        Self {
            shape: [indices.len(), self.shape[1], self.shape[2], self.shape[3]],
            data,
        }
    }

    /// Real-valued view mapping `0..=255` onto `[-1, 1]` as `v / 127.5 - 1`.
    pub fn normalized<T: Real>(&self) -> Tensor<T> {
        Tensor::from_vec(self.shape, self.data.iter().map(|&v| T::of(normalize_u8(v))).collect())
            .expect("shape already validated")
    }
}

impl<'a> ImageRef<'a> {
    #[inline]
    pub fn pixel(&self, c: usize, y: usize, x: usize) -> u8 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn to_tensor(&self) -> ImageTensor {
        ImageTensor {
            shape: [1, self.channels, self.height, self.width],
            data: self.data.to_vec(),
        }
    }
}

#[inline]
pub fn normalize_u8(v: u8) -> f64 {
    v as f64 / 127.5 - 1.0
}

/// Replicates a single channel into three identical ones.
pub fn gray_to_rgb(x: &ImageTensor) -> Result<ImageTensor> {
    let [n, c, h, w] = x.shape();
    if c != 1 {
        return Err(Error::ShapeMismatch {
            what: "grayscale input channels",
            expected: 1,
            found: c,
        });
    }
    let mut data = Vec::with_capacity(n * 3 * h * w);
    for im in x.iter() {
        for _ in 0..3 {
            data.extend_from_slice(im.data);
        }
    }
    ImageTensor::new([n, 3, h, w], data)
}

/// Bilinear resize with half-pixel centres.
///
/// For output coordinate `d` along an axis of input length `n_in` and output
/// length `n_out`, the source coordinate is
/// `s = clamp((d + 0.5) * n_in / n_out - 0.5, 0, n_in - 1)`; the two
/// neighbours are `floor(s)` and `min(floor(s) + 1, n_in - 1)` with weights
/// `1 - frac(s)` and `frac(s)`. Results are rounded half away from zero.
pub fn resize_bilinear(x: &ImageTensor, height: usize, width: usize) -> ImageTensor {
    let [n, c, h, w] = x.shape();
    if (h, w) == (height, width) {
        return x.clone();
    }
    let ys: Vec<(usize, usize, f64)> = (0..height).map(|d| axis_sample(d, h, height)).collect();
    let xs: Vec<(usize, usize, f64)> = (0..width).map(|d| axis_sample(d, w, width)).collect();
    let mut data = Vec::with_capacity(n * c * height * width);
    for im in x.iter() {
        for ch in 0..c {
            for &(y0, y1, fy) in &ys {
                for &(x0, x1, fx) in &xs {
                    let p = |yy: usize, xx: usize| im.pixel(ch, yy, xx) as f64;
                    let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                    let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                    let v = top * (1.0 - fy) + bottom * fy;
                    data.push(round_u8(v));
                }
            }
        }
    }
    ImageTensor {
        shape: [n, c, height, width],
        data,
    }
}

fn axis_sample(d: usize, n_in: usize, n_out: usize) -> (usize, usize, f64) {
    let s = ((d as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
    let i0 = num_traits::Float::floor(s) as usize;
    let i1 = (i0 + 1).min(n_in - 1);
    (i0, i1, s - i0 as f64)
}

#[inline]
pub(crate) fn round_u8(v: f64) -> u8 {
    num_traits::Float::round(v).clamp(0.0, 255.0) as u8
}

/// A named batch of `N x 3 x 32 x 32` images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageDataset {
    pub images: ImageTensor,
    pub name: String,
    pub provenance: String,
}

impl ImageDataset {
    /// Wraps images that already satisfy the `3 x 32 x 32` layout.
    pub fn new(images: ImageTensor, name: impl Into<String>, provenance: impl Into<String>) -> Result<Self> {
        let [_, c, h, w] = images.shape();
        ensure_shape!("dataset channels", IMAGE_CHANNELS, c);
        ensure_shape!("dataset height", IMAGE_SIDE, h);
        ensure_shape!("dataset width", IMAGE_SIDE, w);
        Ok(Self {
            images,
            name: name.into(),
            provenance: provenance.into(),
        })
    }

    /// Brings arbitrary 1- or 3-channel images to the dataset layout.
    pub fn conform(images: ImageTensor, name: impl Into<String>, provenance: impl Into<String>) -> Result<Self> {
        let rgb = match images.shape()[1] {
            1 => gray_to_rgb(&images)?,
            3 => images,
            c => {
                return Err(Error::ShapeMismatch {
                    what: "dataset channels (1 or 3)",
                    expected: IMAGE_CHANNELS,
                    found: c,
                })
            }
        };
        Self::new(resize_bilinear(&rgb, IMAGE_SIDE, IMAGE_SIDE), name, provenance)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}
