//! Pure layer primitives on [`Tensor`]s: convolution, pooling, normalization,
//! activations, dense, softmax.
//!
//! All ops validate shapes and dtypes before touching data and return fresh
//! tensors; inputs are never mutated, so concurrent calls on shared tensors
//! are safe. Compute is f32 with Same (zero) padding and stride 1 for the
//! 3x3 convolution.

use crate::error::{Error, Result};
use crate::kernels::{self, Buf, KERNEL};
use crate::tensor::{DType, Tensor};

fn f32_buf(t: &Tensor, op: &'static str, rank: usize) -> Result<Buf<f32>> {
    if t.dtype() != DType::F32 {
        return Err(Error::DTypeMismatch {
            op,
            expected: DType::F32,
            got: t.dtype(),
        });
    }
    if t.shape().len() != rank {
        return Err(Error::ShapeMismatch {
            op,
            expected: vec![rank],
            got: t.shape().to_vec(),
        });
    }
    Ok(Buf::new(t.shape(), t.as_f32()?.to_vec()))
}

fn tensor_from(buf: Buf<f32>) -> Tensor {
    Tensor::from_vec(&buf.shape, buf.data).expect("kernel produced consistent shape")
}

/// 3x3 stride-1 convolution with Same zero padding.
/// `input` is [N,H,W,Cin], `kernel` is [3,3,Cin,Cout], `bias` is [Cout].
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let inp = f32_buf(input, "conv2d", 4)?;
    let ker = f32_buf(kernel, "conv2d", 4)?;
    if ker.shape[0] != KERNEL || ker.shape[1] != KERNEL {
        return Err(Error::ShapeMismatch {
            op: "conv2d kernel spatial dims",
            expected: vec![KERNEL, KERNEL],
            got: ker.shape.clone(),
        });
    }
    let cin = inp.shape[3];
    if ker.shape[2] != cin {
        return Err(Error::ShapeMismatch {
            op: "conv2d input channels vs kernel",
            expected: inp.shape.clone(),
            got: ker.shape.clone(),
        });
    }
    let cout = ker.shape[3];
    let b = f32_buf(bias, "conv2d", 1)?;
    if b.shape[0] != cout {
        return Err(Error::ShapeMismatch {
            op: "conv2d bias",
            expected: vec![cout],
            got: b.shape.clone(),
        });
    }
    Ok(tensor_from(kernels::conv2d_gemm(&inp, &ker.data, &b.data, cout)))
}

/// Reference convolution by direct window iteration; same contract as
/// [`conv2d`], kept as an independent route for equivalence checks.
pub fn conv2d_naive(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let inp = f32_buf(input, "conv2d_naive", 4)?;
    let ker = f32_buf(kernel, "conv2d_naive", 4)?;
    if ker.shape[0] != KERNEL || ker.shape[1] != KERNEL || ker.shape[2] != inp.shape[3] {
        return Err(Error::ShapeMismatch {
            op: "conv2d_naive input channels vs kernel",
            expected: inp.shape.clone(),
            got: ker.shape.clone(),
        });
    }
    let cout = ker.shape[3];
    let b = f32_buf(bias, "conv2d_naive", 1)?;
    if b.shape[0] != cout {
        return Err(Error::ShapeMismatch {
            op: "conv2d_naive bias",
            expected: vec![cout],
            got: b.shape.clone(),
        });
    }
    Ok(tensor_from(kernels::conv2d_naive(&inp, &ker.data, &b.data, cout)))
}

/// 2x2 non-overlapping max pool; requires even spatial dims.
pub fn maxpool2d(input: &Tensor) -> Result<Tensor> {
    let inp = f32_buf(input, "maxpool2d", 4)?;
    let (_, h, w, _) = inp.dims4();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::OddSpatialDims { op: "maxpool2d", h, w });
    }
    let (out, _) = kernels::maxpool2(&inp);
    Ok(tensor_from(out))
}

/// Inference-form batch normalization with running statistics.
pub fn batchnorm(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &Tensor,
    var: &Tensor,
    eps: f32,
) -> Result<Tensor> {
    if input.dtype() != DType::F32 {
        return Err(Error::DTypeMismatch {
            op: "batchnorm",
            expected: DType::F32,
            got: input.dtype(),
        });
    }
    let c = *input.shape().last().ok_or(Error::ShapeMismatch {
        op: "batchnorm",
        expected: vec![1],
        got: vec![],
    })?;
    for (name, t) in [("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)] {
        if t.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "batchnorm parameter",
                expected: vec![c],
                got: t.shape().to_vec(),
            });
        }
        let _ = name;
    }
    let var_data = var.as_f32()?;
    if let Some((channel, &value)) = var_data.iter().enumerate().find(|(_, &v)| v < 0.0) {
        return Err(Error::NegativeVariance { channel, value });
    }
    let inp = Buf::new(input.shape(), input.as_f32()?.to_vec());
    Ok(tensor_from(kernels::batchnorm_infer(
        &inp,
        gamma.as_f32()?,
        beta.as_f32()?,
        mean.as_f32()?,
        var_data,
        eps,
    )))
}

/// Elementwise max(0, x).
pub fn relu(input: &Tensor) -> Result<Tensor> {
    let data: Vec<f32> = input.as_f32()?.iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_vec(input.shape(), data)
}

/// out = input[N,D] . weight[D,U] + bias[U]
pub fn dense(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let inp = f32_buf(input, "dense", 2)?;
    let w = f32_buf(weight, "dense", 2)?;
    if w.shape[0] != inp.shape[1] {
        return Err(Error::ShapeMismatch {
            op: "dense inner dims",
            expected: inp.shape.clone(),
            got: w.shape.clone(),
        });
    }
    let units = w.shape[1];
    let b = f32_buf(bias, "dense", 1)?;
    if b.shape[0] != units {
        return Err(Error::ShapeMismatch {
            op: "dense bias",
            expected: vec![units],
            got: b.shape.clone(),
        });
    }
    Ok(tensor_from(kernels::dense(&inp, &w.data, &b.data, units)))
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let inp = f32_buf(logits, "softmax", 2)?;
    Ok(tensor_from(kernels::softmax(&inp)))
}

/// Per-channel spatial mean: [N,H,W,C] -> [N,C].
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let inp = f32_buf(input, "global_avg_pool", 4)?;
    Ok(tensor_from(kernels::global_avg_pool(&inp)))
}
