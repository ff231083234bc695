//! Bilinear resampling with half-pixel centers and edge clamping.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Resample a multi-channel plane. Used by image preprocessing and by
/// attribution-map upsampling, hence the free (dst_h, dst_w).
pub(crate) fn bilinear_plane(
    src: &[f32],
    src_h: usize,
    src_w: usize,
    channels: usize,
    dst_h: usize,
    dst_w: usize,
) -> Vec<f32> {
    let mut out = vec![0.0f32; dst_h * dst_w * channels];
    let sy_scale = src_h as f32 / dst_h as f32;
    let sx_scale = src_w as f32 / dst_w as f32;
    for dy in 0..dst_h {
        // Half-pixel centers, clamped to the source extent.
        let fy = ((dy as f32 + 0.5) * sy_scale - 0.5).clamp(0.0, (src_h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(src_h - 1);
        let ty = fy - y0 as f32;
        for dx in 0..dst_w {
            let fx = ((dx as f32 + 0.5) * sx_scale - 0.5).clamp(0.0, (src_w - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(src_w - 1);
            let tx = fx - x0 as f32;
            for c in 0..channels {
                let p00 = src[(y0 * src_w + x0) * channels + c];
                let p01 = src[(y0 * src_w + x1) * channels + c];
                let p10 = src[(y1 * src_w + x0) * channels + c];
                let p11 = src[(y1 * src_w + x1) * channels + c];
                let top = p00 + (p01 - p00) * tx;
                let bot = p10 + (p11 - p10) * tx;
                out[(dy * dst_w + dx) * channels + c] = top + (bot - top) * ty;
            }
        }
    }
    out
}

/// Resize an [H,W,C] image to [target,target,C].
pub fn resize_bilinear(image: &Tensor, target: usize) -> Result<Tensor> {
    let (h, w, c) = match image.shape() {
        [h, w, c] => (*h, *w, *c),
        s => {
            return Err(Error::ShapeMismatch {
                op: "resize_bilinear",
                expected: vec![0, 0, 3],
                got: s.to_vec(),
            })
        }
    };
    if h == 0 || w == 0 || target == 0 {
        return Err(Error::ZeroSizedImage);
    }
    if h == target && w == target {
        return Ok(image.clone());
    }
    let out = bilinear_plane(image.as_f32()?, h, w, c, target, target);
    Tensor::from_vec(&[target, target, c], out)
}
