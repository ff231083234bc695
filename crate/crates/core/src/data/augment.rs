//! Training-time augmentation: small rotations, horizontal flips, and minor
//! translations. Labels are never touched and shapes are preserved.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentSpec {
    /// Rotation range in degrees, sampled uniformly from [-rotation_deg, +rotation_deg].
    pub rotation_deg: f32,
    pub hflip_prob: f32,
    /// Max shift as a fraction of each dimension, sampled from [-f, +f].
    pub translate_frac: f32,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            rotation_deg: 8.0,
            hflip_prob: 0.5,
            translate_frac: 0.05,
        }
    }
}

fn dims_hw3(image: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match image.shape() {
        [h, w, c] => Ok((*h, *w, *c)),
        s => Err(Error::ShapeMismatch {
            op,
            expected: vec![0, 0, 3],
            got: s.to_vec(),
        }),
    }
}

/// Bilinear sample with zero fill outside the image.
fn sample_zero_fill(src: &[f32], h: usize, w: usize, c: usize, fy: f32, fx: f32, ch: usize) -> f32 {
    if fy <= -1.0 || fx <= -1.0 || fy >= h as f32 || fx >= w as f32 {
        return 0.0;
    }
    let y0 = fy.floor() as isize;
    let x0 = fx.floor() as isize;
    let ty = fy - y0 as f32;
    let tx = fx - x0 as f32;
    let at = |y: isize, x: isize| -> f32 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            src[(y as usize * w + x as usize) * c + ch]
        }
    };
    let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
    let bot = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
    top * (1.0 - ty) + bot * ty
}

/// Rotate about the image center with bilinear resampling and zero fill.
pub fn rotate(image: &Tensor, degrees: f32) -> Result<Tensor> {
    let (h, w, c) = dims_hw3(image, "rotate")?;
    if degrees == 0.0 {
        return Ok(image.clone());
    }
    let src = image.as_f32()?;
    let rad = degrees.to_radians();
    let (sin, cos) = rad.sin_cos();
    let cy = (h as f32 - 1.0) / 2.0;
    let cx = (w as f32 - 1.0) / 2.0;
    let mut out = vec![0.0f32; src.len()];
    for dy in 0..h {
        for dx in 0..w {
            // Inverse mapping: rotate the destination point back by -angle.
            let ry = dy as f32 - cy;
            let rx = dx as f32 - cx;
            let fy = cy + ry * cos - rx * sin;
            let fx = cx + ry * sin + rx * cos;
            for ch in 0..c {
                out[(dy * w + dx) * c + ch] = sample_zero_fill(src, h, w, c, fy, fx, ch);
            }
        }
    }
    Tensor::from_vec(image.shape(), out)
}

/// Mirror about the vertical axis.
pub fn hflip(image: &Tensor) -> Result<Tensor> {
    let (h, w, c) = dims_hw3(image, "hflip")?;
    let src = image.as_f32()?;
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let flipped = w - 1 - x;
            out[(y * w + x) * c..(y * w + x) * c + c]
                .copy_from_slice(&src[(y * w + flipped) * c..(y * w + flipped) * c + c]);
        }
    }
    Tensor::from_vec(image.shape(), out)
}

/// Shift by (dy, dx) pixels with bilinear resampling and zero fill.
pub fn translate(image: &Tensor, dy: f32, dx: f32) -> Result<Tensor> {
    let (h, w, c) = dims_hw3(image, "translate")?;
    if dy == 0.0 && dx == 0.0 {
        return Ok(image.clone());
    }
    let src = image.as_f32()?;
    let mut out = vec![0.0f32; src.len()];
    for py in 0..h {
        for px in 0..w {
            let fy = py as f32 - dy;
            let fx = px as f32 - dx;
            for ch in 0..c {
                out[(py * w + px) * c + ch] = sample_zero_fill(src, h, w, c, fy, fx, ch);
            }
        }
    }
    Tensor::from_vec(image.shape(), out)
}

/// Apply the augmentation pipeline: rotation, then horizontal flip, then
/// translation. The RNG is consumed in a fixed draw order regardless of the
/// spec's ranges, so streams stay aligned across configurations.
pub fn augment(image: &Tensor, spec: &AugmentSpec, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let (h, w, _) = dims_hw3(image, "augment")?;
    let degrees = if spec.rotation_deg > 0.0 {
        rng.gen_range(-spec.rotation_deg..=spec.rotation_deg)
    } else {
        let _: f32 = rng.gen();
        0.0
    };
    let flip = rng.gen::<f32>() < spec.hflip_prob;
    let (dy, dx) = if spec.translate_frac > 0.0 {
        (
            rng.gen_range(-spec.translate_frac..=spec.translate_frac) * h as f32,
            rng.gen_range(-spec.translate_frac..=spec.translate_frac) * w as f32,
        )
    } else {
        let _: (f32, f32) = (rng.gen(), rng.gen());
        (0.0, 0.0)
    };

    let mut out = rotate(image, degrees)?;
    if flip {
        out = hflip(&out)?;
    }
    translate(&out, dy, dx)
}
