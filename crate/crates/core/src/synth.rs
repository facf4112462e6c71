//! Seeded synthetic image families with controlled patch predictability.
//!
//! * `complex`: a training mix of full-range gradients, random shapes,
//!   bilinear value noise and gradient/noise composites.
//! * `lowH`: one linear gradient per channel whose whole range sits inside a
//!   single 8-level band, so the centre is fully predictable.
//! * `midH`: a `lowH` image plus one randomly coloured rectangle crossing
//!   the centre.
//! * `highH`: a smooth surround whose central `16 x 16` block is iid uniform
//!   noise.
//!
//! Image `i` of a family is drawn from its own stream
//! `derive_seed(derive_seed(seed, family), i)`, so a dataset is a prefix of
//! any larger one with the same seed.

#[cfg(not(feature = "std"))]
use num_traits::Float;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::image::{round_u8, ImageDataset, ImageTensor, IMAGE_CHANNELS, IMAGE_SIDE};
use crate::rng::{derive_seed, SeededRng};
use crate::{Error, Result};

const SIDE: usize = IMAGE_SIDE;
const PLANE: usize = SIDE * SIDE;
const CENTER_LO: usize = SIDE / 4;
const CENTER_HI: usize = SIDE - SIDE / 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SynthFamily {
    Complex,
    LowH,
    MidH,
    HighH,
}

impl SynthFamily {
    pub const ALL: [SynthFamily; 4] = [Self::Complex, Self::LowH, Self::MidH, Self::HighH];

    pub fn name(self) -> &'static str {
        match self {
            Self::Complex => "complex",
            Self::LowH => "lowH",
            Self::MidH => "midH",
            Self::HighH => "highH",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Self::Complex => 11,
            Self::LowH => 12,
            Self::MidH => 13,
            Self::HighH => 14,
        }
    }
}

impl fmt::Display for SynthFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown synthetic family `{s}`")))
    }
}

/// Float canvas, `3 x 32 x 32`, values on the 0..255 scale.
struct Canvas {
    data: Vec<f64>,
}

impl Canvas {
    fn new() -> Self {
        Self { data: vec![0.0; IMAGE_CHANNELS * PLANE] }
    }

    #[inline]
    fn at(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[c * PLANE + y * SIDE + x]
    }

    fn into_bytes(self) -> Vec<u8> {
        self.data.into_iter().map(round_u8).collect()
    }
}

/// Position along a random direction, scaled to `[0, 1]` over the image.
fn ramp(rng: &mut SeededRng) -> impl Fn(usize, usize) -> f64 {
    let theta = rng.uniform(0.0, 2.0 * core::f64::consts::PI);
    let (dx, dy) = (theta.cos(), theta.sin());
    let extent = (dx.abs() + dy.abs()) * (SIDE - 1) as f64;
    let offset = dx.min(0.0) * (SIDE - 1) as f64 + dy.min(0.0) * (SIDE - 1) as f64;
    move |y, x| ((x as f64 * dx + y as f64 * dy) - offset) / extent
}

fn paint_gradient(canvas: &mut Canvas, rng: &mut SeededRng, ends: &[(f64, f64); 3]) {
    let t = ramp(rng);
    for y in 0..SIDE {
        for x in 0..SIDE {
            let s = t(y, x);
            for (c, &(a, b)) in ends.iter().enumerate() {
                *canvas.at(c, y, x) = a + (b - a) * s;
            }
        }
    }
}

/// Gradient confined to one 8-level band per channel.
fn low_gradient(canvas: &mut Canvas, rng: &mut SeededRng) {
    let mut ends = [(0.0, 0.0); 3];
    for e in ends.iter_mut() {
        let band = (rng.below(32) * 8) as f64;
        let amp = rng.uniform(2.0, 7.0);
        let start = rng.uniform(0.0, 7.0 - amp);
        *e = if rng.below(2) == 0 {
            (band + start, band + start + amp)
        } else {
            (band + start + amp, band + start)
        };
    }
    paint_gradient(canvas, rng, &ends);
}

fn random_colour(rng: &mut SeededRng) -> [f64; 3] {
    [rng.uniform(0.0, 255.0), rng.uniform(0.0, 255.0), rng.uniform(0.0, 255.0)]
}

fn fill_rect(canvas: &mut Canvas, y0: usize, x0: usize, y1: usize, x1: usize, colour: [f64; 3]) {
    for y in y0..y1.min(SIDE) {
        for x in x0..x1.min(SIDE) {
            for (c, &v) in colour.iter().enumerate() {
                *canvas.at(c, y, x) = v;
            }
        }
    }
}

fn fill_ellipse(canvas: &mut Canvas, cy: f64, cx: f64, ry: f64, rx: f64, colour: [f64; 3]) {
    for y in 0..SIDE {
        for x in 0..SIDE {
            let (u, v) = ((y as f64 - cy) / ry, (x as f64 - cx) / rx);
            if u * u + v * v <= 1.0 {
                for (c, &val) in colour.iter().enumerate() {
                    *canvas.at(c, y, x) = val;
                }
            }
        }
    }
}

fn shapes(canvas: &mut Canvas, rng: &mut SeededRng) {
    let bg = random_colour(rng);
    fill_rect(canvas, 0, 0, SIDE, SIDE, bg);
    for _ in 0..2 + rng.below(5) {
        let colour = random_colour(rng);
        if rng.below(2) == 0 {
            let (y0, x0) = (rng.below(SIDE - 2), rng.below(SIDE - 2));
            let (h, w) = (3 + rng.below(14), 3 + rng.below(14));
            fill_rect(canvas, y0, x0, y0 + h, x0 + w, colour);
        } else {
            let (cy, cx) = (rng.uniform(0.0, SIDE as f64), rng.uniform(0.0, SIDE as f64));
            let (ry, rx) = (rng.uniform(2.0, 10.0), rng.uniform(2.0, 10.0));
            fill_ellipse(canvas, cy, cx, ry, rx, colour);
        }
    }
}

/// Bilinear interpolation of a coarse random grid.
fn value_noise(rng: &mut SeededRng) -> Vec<f64> {
    let cells = 2 + rng.below(7);
    let grid: Vec<f64> = (0..IMAGE_CHANNELS * (cells + 1) * (cells + 1))
        .map(|_| rng.uniform(0.0, 255.0))
        .collect();
    let mut out = vec![0.0; IMAGE_CHANNELS * PLANE];
    let scale = cells as f64 / (SIDE - 1) as f64;
    for c in 0..IMAGE_CHANNELS {
        let g = &grid[c * (cells + 1) * (cells + 1)..(c + 1) * (cells + 1) * (cells + 1)];
        for y in 0..SIDE {
            let gy = y as f64 * scale;
            let y0 = (gy.floor() as usize).min(cells - 1);
            let fy = gy - y0 as f64;
            for x in 0..SIDE {
                let gx = x as f64 * scale;
                let x0 = (gx.floor() as usize).min(cells - 1);
                let fx = gx - x0 as f64;
                let at = |yy: usize, xx: usize| g[yy * (cells + 1) + xx];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
                let bottom = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
                out[c * PLANE + y * SIDE + x] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

fn complex_image(rng: &mut SeededRng) -> Canvas {
    let mut canvas = Canvas::new();
    match rng.below(4) {
        0 => {
            let ends = [0; 3].map(|_| (rng.uniform(0.0, 255.0), rng.uniform(0.0, 255.0)));
            paint_gradient(&mut canvas, rng, &ends);
        }
        1 => shapes(&mut canvas, rng),
        2 => canvas.data = value_noise(rng),
        _ => {
            let ends = [0; 3].map(|_| (rng.uniform(0.0, 255.0), rng.uniform(0.0, 255.0)));
            paint_gradient(&mut canvas, rng, &ends);
            let noise = value_noise(rng);
            let mix = rng.uniform(0.3, 0.7);
            let grain = rng.uniform(0.0, 12.0);
            for (v, n) in canvas.data.iter_mut().zip(noise) {
                *v = (1.0 - mix) * *v + mix * n + rng.uniform(-grain, grain);
            }
        }
    }
    canvas
}

fn low_image(rng: &mut SeededRng) -> Canvas {
    let mut canvas = Canvas::new();
    low_gradient(&mut canvas, rng);
    canvas
}

fn mid_image(rng: &mut SeededRng) -> Canvas {
    let mut canvas = low_image(rng);
    let (h, w) = (4 + rng.below(11), 4 + rng.below(11));
    // top-left corner chosen so the rectangle overlaps the centre block
    let y0 = (CENTER_LO + 1).saturating_sub(h) + rng.below(CENTER_HI - 1 - (CENTER_LO + 1).saturating_sub(h));
    let x0 = (CENTER_LO + 1).saturating_sub(w) + rng.below(CENTER_HI - 1 - (CENTER_LO + 1).saturating_sub(w));
    let colour = random_colour(rng);
    fill_rect(&mut canvas, y0, x0, y0 + h, x0 + w, colour);
    canvas
}

fn high_image(rng: &mut SeededRng) -> Canvas {
    let mut canvas = low_image(rng);
    for c in 0..IMAGE_CHANNELS {
        for y in CENTER_LO..CENTER_HI {
            for x in CENTER_LO..CENTER_HI {
                *canvas.at(c, y, x) = rng.below(256) as f64;
            }
        }
    }
    canvas
}

/// `n` images of `family`; a pure function of `(family, n, seed)`.
pub fn generate(family: SynthFamily, n: usize, seed: u64) -> ImageTensor {
    let base = derive_seed(seed, family.stream());
    let mut data = Vec::with_capacity(n * IMAGE_CHANNELS * PLANE);
    for i in 0..n {
        let mut rng = SeededRng::new(derive_seed(base, i as u64));
        let canvas = match family {
            SynthFamily::Complex => complex_image(&mut rng),
            SynthFamily::LowH => low_image(&mut rng),
            SynthFamily::MidH => mid_image(&mut rng),
            SynthFamily::HighH => high_image(&mut rng),
        };
        data.extend(canvas.into_bytes());
    }
    ImageTensor::new([n, IMAGE_CHANNELS, SIDE, SIDE], data).expect("generator shape")
}

pub fn dataset(family: SynthFamily, n: usize, seed: u64) -> ImageDataset {
    ImageDataset::new(
        generate(family, n, seed),
        format!("synth_{}", family.name()),
        format!("synth:{}:{n}:{seed}", family.name()),
    )
    .expect("generator shape")
}

pub fn synth_complex(n: usize, seed: u64) -> ImageDataset {
    dataset(SynthFamily::Complex, n, seed)
}

pub fn synth_low_h(n: usize, seed: u64) -> ImageDataset {
    dataset(SynthFamily::LowH, n, seed)
}

pub fn synth_mid_h(n: usize, seed: u64) -> ImageDataset {
    dataset(SynthFamily::MidH, n, seed)
}

pub fn synth_high_h(n: usize, seed: u64) -> ImageDataset {
    dataset(SynthFamily::HighH, n, seed)
}
