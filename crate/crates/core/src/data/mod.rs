//! Dataset manifest loading, PPM decoding, preprocessing, augmentation, and
//! the stratified 75/10/15 split.

mod augment;
mod manifest;
mod ppm;
mod resize;
mod split;

pub use augment::{augment, hflip, rotate, translate, AugmentSpec};
pub use manifest::{label_counts, load_manifest, ManifestEntry, ManifestLabel};
pub use ppm::{decode_ppm, encode_ppm};
pub use resize::resize_bilinear;
pub use split::{stratified_split, SplitEntries, SplitSpec};

pub(crate) use resize::bilinear_plane;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// In-memory labeled image set; labels are class indices.
#[derive(Debug, Clone, Default)]
pub struct LabeledImages {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl LabeledImages {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn push(&mut self, image: Tensor, label: usize) {
        self.images.push(image);
        self.labels.push(label);
    }

    /// Stack a contiguous index range into one [N,H,W,C] batch tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        if indices.is_empty() {
            return Err(Error::EmptySplit { split: "batch" });
        }
        let shape = self.images[indices[0]].shape().to_vec();
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(indices.len() * numel);
        for &i in indices {
            let img = &self.images[i];
            if img.shape() != shape {
                return Err(Error::ShapeMismatch {
                    op: "batch assembly",
                    expected: shape.clone(),
                    got: img.shape().to_vec(),
                });
            }
            data.extend_from_slice(img.as_f32()?);
        }
        let mut batch_shape = vec![indices.len()];
        batch_shape.extend_from_slice(&shape);
        Tensor::from_vec(&batch_shape, data)
    }
}

/// Train/validation/test partitions.
#[derive(Debug, Clone, Default)]
pub struct DataSplits {
    pub train: LabeledImages,
    pub val: LabeledImages,
    pub test: LabeledImages,
}
