//! N-dimensional array type used for images, feature maps, and parameters.
//!
//! Layout is always row-major; images and feature maps use NHWC order.
//! Three element types exist: f32 (the compute type), binary16 at rest, and
//! symmetric per-channel int8 at rest. Quantized tensors dequantize to f32
//! before any arithmetic. Tensors are immutable from the caller's
//! perspective; every op returns a fresh tensor.

use crate::error::{Error, Result};
use crate::f16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F16,
    QI8,
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    F32(Vec<f32>),
    F16(Vec<u16>),
    QI8 {
        values: Vec<i8>,
        scales: Vec<f32>,
        channel_axis: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    storage: Storage,
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    let numel: usize = shape.iter().product();
    if shape.iter().any(|&d| d == 0) || numel != len {
        return Err(Error::ShapeDataMismatch {
            shape: shape.to_vec(),
            len,
        });
    }
    Ok(())
}

impl Tensor {
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        check_shape(shape, data.len())?;
        Ok(Tensor {
            shape: shape.to_vec(),
            storage: Storage::F32(data),
        })
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            storage: Storage::F32(vec![0.0; numel]),
        }
    }

    pub fn full(shape: &[usize], value: f32) -> Tensor {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            storage: Storage::F32(vec![value; numel]),
        }
    }

    /// Build an f16 tensor from raw binary16 bit patterns.
    pub fn from_f16_bits(shape: &[usize], bits: Vec<u16>) -> Result<Tensor> {
        check_shape(shape, bits.len())?;
        Ok(Tensor {
            shape: shape.to_vec(),
            storage: Storage::F16(bits),
        })
    }

    /// Build a symmetric per-channel int8 tensor.
    pub fn from_qi8(
        shape: &[usize],
        values: Vec<i8>,
        scales: Vec<f32>,
        channel_axis: usize,
    ) -> Result<Tensor> {
        check_shape(shape, values.len())?;
        if channel_axis >= shape.len() {
            return Err(Error::InvalidQuantized {
                reason: format!(
                    "channel_axis {channel_axis} out of range for rank {}",
                    shape.len()
                ),
            });
        }
        if scales.len() != shape[channel_axis] {
            return Err(Error::InvalidQuantized {
                reason: format!(
                    "{} scales for {} channels on axis {channel_axis}",
                    scales.len(),
                    shape[channel_axis]
                ),
            });
        }
        if scales.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidQuantized {
                reason: "scales must be strictly positive and finite".into(),
            });
        }
        if values.iter().any(|&v| v == -128) {
            return Err(Error::InvalidQuantized {
                reason: "quantized values must lie in [-127, 127]".into(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            storage: Storage::QI8 {
                values,
                scales,
                channel_axis,
            },
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn dtype(&self) -> DType {
        match &self.storage {
            Storage::F32(_) => DType::F32,
            Storage::F16(_) => DType::F16,
            Storage::QI8 { .. } => DType::QI8,
        }
    }

    /// Borrow the f32 buffer; errors for non-f32 tensors.
    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.storage {
            Storage::F32(data) => Ok(data),
            _ => Err(Error::DTypeMismatch {
                op: "as_f32",
                expected: DType::F32,
                got: self.dtype(),
            }),
        }
    }

    pub(crate) fn as_f32_mut(&mut self) -> Result<&mut [f32]> {
        let got = self.dtype();
        match &mut self.storage {
            Storage::F32(data) => Ok(data),
            _ => Err(Error::DTypeMismatch {
                op: "as_f32_mut",
                expected: DType::F32,
                got,
            }),
        }
    }

    pub fn as_f16_bits(&self) -> Result<&[u16]> {
        match &self.storage {
            Storage::F16(bits) => Ok(bits),
            _ => Err(Error::DTypeMismatch {
                op: "as_f16_bits",
                expected: DType::F16,
                got: self.dtype(),
            }),
        }
    }

    pub fn as_qi8(&self) -> Result<(&[i8], &[f32], usize)> {
        match &self.storage {
            Storage::QI8 {
                values,
                scales,
                channel_axis,
            } => Ok((values, scales, *channel_axis)),
            _ => Err(Error::DTypeMismatch {
                op: "as_qi8",
                expected: DType::QI8,
                got: self.dtype(),
            }),
        }
    }

    /// Dequantize to a fresh f32 tensor. F32 tensors are copied as-is.
    pub fn to_f32(&self) -> Tensor {
        let data = match &self.storage {
            Storage::F32(data) => data.clone(),
            Storage::F16(bits) => bits.iter().map(|&b| f16::f16_bits_to_f32(b)).collect(),
            Storage::QI8 {
                values,
                scales,
                channel_axis,
            } => {
                // Stride pattern: index along channel_axis selects the scale.
                let inner: usize = self.shape[channel_axis + 1..].iter().product();
                let channels = self.shape[*channel_axis];
                values
                    .iter()
                    .enumerate()
                    .map(|(i, &q)| {
                        let c = (i / inner) % channels;
                        q as f32 * scales[c]
                    })
                    .collect()
            }
        };
        Tensor {
            shape: self.shape.clone(),
            storage: Storage::F32(data),
        }
    }

    /// Serialized width of one element in bytes.
    pub fn element_size(&self) -> usize {
        match self.dtype() {
            DType::F32 => 4,
            DType::F16 => 2,
            DType::QI8 => 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_length_invariant() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::from_vec(&[2, 3], vec![0.0; 5]),
            Err(Error::ShapeDataMismatch { .. })
        ));
        assert!(Tensor::from_vec(&[2, 0], vec![]).is_err());
    }

    #[test]
    fn f16_round_trips_through_storage() {
        let bits: Vec<u16> = [1.0f32, 0.1, -3.5]
            .iter()
            .map(|&v| f16::f32_to_f16_bits(v))
            .collect();
        let t = Tensor::from_f16_bits(&[3], bits.clone()).unwrap();
        assert_eq!(t.as_f16_bits().unwrap(), &bits[..]);
        let back = t.to_f32();
        assert_eq!(back.as_f32().unwrap()[0], 1.0);
        assert_eq!(back.as_f32().unwrap()[1], 0.0999755859375);
    }

    #[test]
    fn qi8_invariants_enforced() {
        // scale count must match channel dim
        assert!(Tensor::from_qi8(&[2, 2], vec![1, 2, 3, 4], vec![1.0], 1).is_err());
        // scales strictly positive
        assert!(Tensor::from_qi8(&[2, 2], vec![1, 2, 3, 4], vec![1.0, 0.0], 1).is_err());
        // -128 is outside the symmetric range
        assert!(Tensor::from_qi8(&[2], vec![-128, 0], vec![1.0, 1.0], 0).is_err());
        let t = Tensor::from_qi8(&[2, 2], vec![-127, 64, 10, -10], vec![0.5, 2.0], 1).unwrap();
        assert_eq!(t.dtype(), DType::QI8);
    }

    #[test]
    fn qi8_dequantize_uses_per_channel_scale() {
        // shape [2, 2], channel axis 1: columns have scales 0.5 and 2.0
        let t = Tensor::from_qi8(&[2, 2], vec![2, 2, -4, 1], vec![0.5, 2.0], 1).unwrap();
        let f = t.to_f32();
        assert_eq!(f.as_f32().unwrap(), &[1.0, 4.0, -2.0, 2.0]);
        // channel axis 0: rows have the scales
        let t = Tensor::from_qi8(&[2, 2], vec![2, 2, -4, 1], vec![0.5, 2.0], 0).unwrap();
        assert_eq!(t.to_f32().as_f32().unwrap(), &[1.0, 1.0, -8.0, 2.0]);
    }
}
