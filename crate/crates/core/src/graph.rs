//! Declarative model description and execution: the convnet builder, forward
//! passes, batch-norm folding, and parameter/FLOP accounting.
//!
//! Graphs are linear layer chains validated at construction time; execution
//! never re-checks layer compatibility. A graph in `Infer` mode is immutable
//! and can be shared across threads; `Train` mode owns a dropout RNG and is
//! single-owner.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::{self, Buf, Scalar};
use crate::label::NUM_CLASSES;
use crate::tensor::Tensor;

/// Batch-norm epsilon used by the stock builder.
pub const BN_EPS: f32 = 1e-3;
/// Running-statistics momentum used during training.
pub const BN_MOMENTUM: f32 = 0.99;
/// Dropout rate after every conv block in the stock architecture.
pub const BLOCK_DROPOUT: f32 = 0.20;
/// Input resolutions the stock builder accepts.
pub const SUPPORTED_RESOLUTIONS: [usize; 3] = [32, 64, 256];
/// Filter counts of the four conv blocks, input to head.
pub const BLOCK_FILTERS: [usize; 4] = [32, 64, 128, 256];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv3x3 { filters: usize },
    BatchNorm { eps: f32 },
    ReLU,
    MaxPool2,
    Dropout { rate: f32 },
    Flatten,
    Dense { units: usize },
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Parameter tensors of one layer, generic so the f64 gradient-check path
/// reuses the exact same structures.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LayerParamsT<T> {
    Conv { kernel: Buf<T>, bias: Buf<T> },
    BatchNorm { gamma: Vec<T>, beta: Vec<T>, mean: Vec<T>, var: Vec<T> },
    Dense { weight: Buf<T>, bias: Buf<T> },
    None,
}

impl<T: Scalar> LayerParamsT<T> {
    pub(crate) fn convert<U: Scalar>(&self) -> LayerParamsT<U> {
        let conv_vec = |v: &[T]| v.iter().map(|&x| U::from_f64(x.to_f64())).collect::<Vec<U>>();
        match self {
            LayerParamsT::Conv { kernel, bias } => LayerParamsT::Conv {
                kernel: Buf::new(&kernel.shape, conv_vec(&kernel.data)),
                bias: Buf::new(&bias.shape, conv_vec(&bias.data)),
            },
            LayerParamsT::BatchNorm { gamma, beta, mean, var } => LayerParamsT::BatchNorm {
                gamma: conv_vec(gamma),
                beta: conv_vec(beta),
                mean: conv_vec(mean),
                var: conv_vec(var),
            },
            LayerParamsT::Dense { weight, bias } => LayerParamsT::Dense {
                weight: Buf::new(&weight.shape, conv_vec(&weight.data)),
                bias: Buf::new(&bias.shape, conv_vec(&bias.data)),
            },
            LayerParamsT::None => LayerParamsT::None,
        }
    }
}

/// Shape flowing through the chain during validation.
#[derive(Debug, Clone, Copy, PartialEq)]
enum ChainShape {
    Spatial { h: usize, w: usize, c: usize },
    Flat { d: usize },
}

impl ChainShape {
    fn channels(self) -> usize {
        match self {
            ChainShape::Spatial { c, .. } => c,
            ChainShape::Flat { d } => d,
        }
    }
}

/// Validate a layer chain against an input shape; returns the shape after
/// every layer.
fn validate_chain(input_shape: [usize; 3], layers: &[LayerSpec]) -> Result<Vec<ChainShape>> {
    let [h, w, c] = input_shape;
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::InvalidGraph {
            index: 0,
            reason: format!("input shape {input_shape:?} has a zero dim"),
        });
    }
    let mut shape = ChainShape::Spatial { h, w, c };
    let mut shapes = Vec::with_capacity(layers.len());
    for (index, layer) in layers.iter().enumerate() {
        shape = match (*layer, shape) {
            (LayerSpec::Conv3x3 { filters }, ChainShape::Spatial { h, w, .. }) => {
                if filters == 0 {
                    return Err(Error::InvalidGraph {
                        index,
                        reason: "conv filters must be >= 1".into(),
                    });
                }
                ChainShape::Spatial { h, w, c: filters }
            }
            (LayerSpec::Conv3x3 { .. }, ChainShape::Flat { .. }) => {
                return Err(Error::InvalidGraph {
                    index,
                    reason: "conv requires a spatial input, got flattened".into(),
                })
            }
            (LayerSpec::BatchNorm { eps }, s) => {
                if eps < 0.0 {
                    return Err(Error::InvalidGraph {
                        index,
                        reason: format!("batchnorm eps {eps} must be >= 0"),
                    });
                }
                s
            }
            (LayerSpec::ReLU, s) => s,
            (LayerSpec::MaxPool2, ChainShape::Spatial { h, w, c }) => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::InvalidGraph {
                        index,
                        reason: format!("maxpool needs even spatial dims, got {h}x{w}"),
                    });
                }
                ChainShape::Spatial { h: h / 2, w: w / 2, c }
            }
            (LayerSpec::MaxPool2, ChainShape::Flat { .. }) => {
                return Err(Error::InvalidGraph {
                    index,
                    reason: "maxpool requires a spatial input".into(),
                })
            }
            (LayerSpec::Dropout { rate }, s) => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::InvalidGraph {
                        index,
                        reason: format!("dropout rate {rate} outside [0, 1)"),
                    });
                }
                s
            }
            (LayerSpec::Flatten, ChainShape::Spatial { h, w, c }) => {
                ChainShape::Flat { d: h * w * c }
            }
            (LayerSpec::Flatten, ChainShape::Flat { .. }) => {
                return Err(Error::InvalidGraph {
                    index,
                    reason: "flatten of already-flat input".into(),
                })
            }
            (LayerSpec::Dense { units }, ChainShape::Flat { .. }) => {
                if units == 0 {
                    return Err(Error::InvalidGraph {
                        index,
                        reason: "dense units must be >= 1".into(),
                    });
                }
                ChainShape::Flat { d: units }
            }
            (LayerSpec::Dense { .. }, ChainShape::Spatial { .. }) => {
                return Err(Error::InvalidGraph {
                    index,
                    reason: "dense requires a flattened input".into(),
                })
            }
            (LayerSpec::Softmax, ChainShape::Flat { d }) => ChainShape::Flat { d },
            (LayerSpec::Softmax, ChainShape::Spatial { .. }) => {
                return Err(Error::InvalidGraph {
                    index,
                    reason: "softmax requires a flattened input".into(),
                })
            }
        };
        shapes.push(shape);
    }
    Ok(shapes)
}

#[derive(Debug, Clone)]
pub struct ModelGraph {
    input_shape: [usize; 3],
    layers: Vec<LayerSpec>,
    params: Vec<LayerParamsT<f32>>,
    mode: Mode,
    rng: ChaCha8Rng,
    seed: u64,
}

impl ModelGraph {
    /// Build a graph with freshly initialized parameters: He-uniform for
    /// conv/dense weights, zeros for biases, identity batch-norm.
    pub fn new(input_shape: [usize; 3], layers: Vec<LayerSpec>, seed: u64) -> Result<ModelGraph> {
        let shapes = validate_chain(input_shape, &layers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(layers.len());
        let mut in_c = input_shape[2];
        for (layer, shape) in layers.iter().zip(&shapes) {
            let p = match layer {
                LayerSpec::Conv3x3 { filters } => {
                    let fan_in = kernels::KERNEL * kernels::KERNEL * in_c;
                    let limit = (6.0 / fan_in as f32).sqrt();
                    let kernel: Vec<f32> = (0..fan_in * filters)
                        .map(|_| rng.gen_range(-limit..limit))
                        .collect();
                    LayerParamsT::Conv {
                        kernel: Buf::new(&[kernels::KERNEL, kernels::KERNEL, in_c, *filters], kernel),
                        bias: Buf::zeros(&[*filters]),
                    }
                }
                LayerSpec::BatchNorm { .. } => LayerParamsT::BatchNorm {
                    gamma: vec![1.0; in_c],
                    beta: vec![0.0; in_c],
                    mean: vec![0.0; in_c],
                    var: vec![1.0; in_c],
                },
                LayerSpec::Dense { units } => {
                    let limit = (6.0 / in_c as f32).sqrt();
                    let weight: Vec<f32> = (0..in_c * units)
                        .map(|_| rng.gen_range(-limit..limit))
                        .collect();
                    LayerParamsT::Dense {
                        weight: Buf::new(&[in_c, *units], weight),
                        bias: Buf::zeros(&[*units]),
                    }
                }
                _ => LayerParamsT::None,
            };
            params.push(p);
            in_c = shape.channels();
        }
        Ok(ModelGraph {
            input_shape,
            layers,
            params,
            mode: Mode::Infer,
            rng,
            seed,
        })
    }

    pub(crate) fn from_parts(
        input_shape: [usize; 3],
        layers: Vec<LayerSpec>,
        params: Vec<LayerParamsT<f32>>,
        seed: u64,
    ) -> Result<ModelGraph> {
        validate_chain(input_shape, &layers)?;
        if params.len() != layers.len() {
            return Err(Error::InvalidGraph {
                index: 0,
                reason: format!("{} params for {} layers", params.len(), layers.len()),
            });
        }
        Ok(ModelGraph {
            input_shape,
            layers,
            params,
            mode: Mode::Infer,
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub(crate) fn params(&self) -> &[LayerParamsT<f32>] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [LayerParamsT<f32>] {
        &mut self.params
    }

    pub(crate) fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Parameter tensors with stable names like `layer3.kernel`.
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        let tensor = |b: &Buf<f32>| Tensor::from_vec(&b.shape, b.data.clone()).unwrap();
        for (i, p) in self.params.iter().enumerate() {
            match p {
                LayerParamsT::Conv { kernel, bias } => {
                    out.push((format!("layer{i}.kernel"), tensor(kernel)));
                    out.push((format!("layer{i}.bias"), tensor(bias)));
                }
                LayerParamsT::BatchNorm { gamma, beta, mean, var } => {
                    let c = gamma.len();
                    let t = |v: &Vec<f32>| Tensor::from_vec(&[c], v.clone()).unwrap();
                    out.push((format!("layer{i}.gamma"), t(gamma)));
                    out.push((format!("layer{i}.beta"), t(beta)));
                    out.push((format!("layer{i}.running_mean"), t(mean)));
                    out.push((format!("layer{i}.running_var"), t(var)));
                }
                LayerParamsT::Dense { weight, bias } => {
                    out.push((format!("layer{i}.weight"), tensor(weight)));
                    out.push((format!("layer{i}.bias"), tensor(bias)));
                }
                LayerParamsT::None => {}
            }
        }
        out
    }

    fn check_batch(&self, batch: &Tensor, op: &'static str) -> Result<()> {
        let [h, w, c] = self.input_shape;
        let s = batch.shape();
        if s.len() != 4 || s[1] != h || s[2] != w || s[3] != c {
            return Err(Error::ShapeMismatch {
                op,
                expected: vec![0, h, w, c],
                got: s.to_vec(),
            });
        }
        Ok(())
    }

    /// Forward a batch to class probabilities. In `Train` mode dropout is
    /// active and draws from the model RNG; `Infer` mode is deterministic.
    pub fn forward(&mut self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch, "forward")?;
        let input = Buf::new(batch.shape(), batch.as_f32()?.to_vec());
        let mode = self.mode;
        let rng = if mode == Mode::Train { Some(&mut self.rng) } else { None };
        let (out, _) = forward_pass(&self.layers, &self.params, input, mode, rng, false)?;
        Tensor::from_vec(&out.shape, out.data)
    }

    /// Forward in inference mode through a shared reference; errors if the
    /// model is in training mode.
    pub fn forward_infer(&self, batch: &Tensor) -> Result<Tensor> {
        if self.mode != Mode::Infer {
            return Err(Error::InferModeRequired { op: "forward_infer" });
        }
        self.check_batch(batch, "forward_infer")?;
        let input = Buf::new(batch.shape(), batch.as_f32()?.to_vec());
        let (out, _) = forward_pass(&self.layers, &self.params, input, Mode::Infer, None, false)?;
        Tensor::from_vec(&out.shape, out.data)
    }

    /// Fold every inference-mode batch norm into the conv layer directly
    /// before it: w' = w*g/sqrt(v+eps), b' = (b-m)*g/sqrt(v+eps) + beta.
    /// The output function is unchanged; a model without batch norm is
    /// returned as-is, so folding is idempotent.
    pub fn fold_batchnorm(&self) -> Result<ModelGraph> {
        if self.mode != Mode::Infer {
            return Err(Error::InferModeRequired { op: "fold_batchnorm" });
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut params = Vec::with_capacity(self.params.len());
        for (index, (layer, param)) in self.layers.iter().zip(&self.params).enumerate() {
            match layer {
                LayerSpec::BatchNorm { eps } => {
                    let (gamma, beta, mean, var) = match param {
                        LayerParamsT::BatchNorm { gamma, beta, mean, var } => (gamma, beta, mean, var),
                        _ => unreachable!("validated graph"),
                    };
                    let (kernel, bias) = match (layers.last(), params.last_mut()) {
                        (Some(LayerSpec::Conv3x3 { .. }), Some(LayerParamsT::Conv { kernel, bias })) => {
                            (kernel, bias)
                        }
                        _ => return Err(Error::FoldUnsupported { index }),
                    };
                    let cout = bias.data.len();
                    let scale: Vec<f32> = (0..cout)
                        .map(|c| gamma[c] / (var[c] + eps).sqrt())
                        .collect();
                    for (i, wv) in kernel.data.iter_mut().enumerate() {
                        *wv *= scale[i % cout];
                    }
                    for c in 0..cout {
                        bias.data[c] = (bias.data[c] - mean[c]) * scale[c] + beta[c];
                    }
                }
                other => {
                    layers.push(*other);
                    params.push(param.clone());
                }
            }
        }
        let mut folded = ModelGraph::from_parts(self.input_shape, layers, params, self.seed)?;
        folded.mode = Mode::Infer;
        Ok(folded)
    }

    /// Exact trainable parameter count (conv/dense weights and biases,
    /// batch-norm gamma and beta; running statistics are not trainable).
    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .map(|p| match p {
                LayerParamsT::Conv { kernel, bias } => kernel.numel() + bias.numel(),
                LayerParamsT::BatchNorm { gamma, beta, .. } => gamma.len() + beta.len(),
                LayerParamsT::Dense { weight, bias } => weight.numel() + bias.numel(),
                LayerParamsT::None => 0,
            })
            .sum()
    }

    /// Arithmetic cost of one batch-1 forward: 2 FLOPs per multiply-
    /// accumulate in conv/dense, 2 per element for batch norm's scale and
    /// shift. Comparisons (relu, pooling) are not counted.
    pub fn flop_count(&self) -> u64 {
        let shapes = validate_chain(self.input_shape, &self.layers).expect("validated at build");
        let mut flops = 0u64;
        let mut in_shape = ChainShape::Spatial {
            h: self.input_shape[0],
            w: self.input_shape[1],
            c: self.input_shape[2],
        };
        for (layer, out_shape) in self.layers.iter().zip(&shapes) {
            match (layer, in_shape, out_shape) {
                (LayerSpec::Conv3x3 { filters }, ChainShape::Spatial { h, w, c }, _) => {
                    flops += (h * w * filters * kernels::KERNEL * kernels::KERNEL * c * 2) as u64;
                }
                (LayerSpec::Dense { units }, ChainShape::Flat { d }, _) => {
                    flops += (d * units * 2) as u64;
                }
                (LayerSpec::BatchNorm { .. }, ChainShape::Spatial { h, w, c }, _) => {
                    flops += (h * w * c * 2) as u64;
                }
                (LayerSpec::BatchNorm { .. }, ChainShape::Flat { d }, _) => {
                    flops += (d * 2) as u64;
                }
                _ => {}
            }
            in_shape = *out_shape;
        }
        flops
    }

    /// Blend the cached batch statistics of every batch-norm layer into the
    /// running statistics: running = momentum*running + (1-momentum)*batch.
    pub(crate) fn update_running_stats(&mut self, cache: &Cache<f32>, momentum: f32) {
        for (param, aux) in self.params.iter_mut().zip(&cache.aux) {
            if let (LayerParamsT::BatchNorm { mean, var, .. }, LayerAux::BnTrain(bn)) = (param, aux)
            {
                for (m, &b) in mean.iter_mut().zip(&bn.batch_mean) {
                    *m = momentum * *m + (1.0 - momentum) * b;
                }
                for (v, &b) in var.iter_mut().zip(&bn.batch_var) {
                    *v = momentum * *v + (1.0 - momentum) * b;
                }
            }
        }
    }

    /// Forward keeping every intermediate needed by the backward pass.
    pub(crate) fn forward_cached(&mut self, batch: &Tensor) -> Result<(Buf<f32>, Cache<f32>)> {
        self.check_batch(batch, "forward")?;
        let input = Buf::new(batch.shape(), batch.as_f32()?.to_vec());
        let mode = self.mode;
        let rng = if mode == Mode::Train { Some(&mut self.rng) } else { None };
        let (out, cache) = forward_pass(&self.layers, &self.params, input, mode, rng, true)?;
        Ok((out, cache.expect("cache requested")))
    }
}

/// Per-layer extras kept for the backward pass.
pub(crate) enum LayerAux<T> {
    None,
    Pool { argmax: Vec<u32> },
    /// Per-element multipliers, 0 or 1/(1-rate); empty when dropout was the
    /// identity (rate 0 or inference mode).
    Dropout { mask: Vec<T> },
    BnTrain(kernels::BnTrainCache<T>),
}

pub(crate) struct Cache<T> {
    pub input: Buf<T>,
    pub outputs: Vec<Buf<T>>,
    pub aux: Vec<LayerAux<T>>,
    pub mode: Mode,
}

/// Run one layer. `rng` is only consulted by train-mode dropout.
pub(crate) fn layer_forward<T: Scalar>(
    spec: &LayerSpec,
    params: &LayerParamsT<T>,
    input: &Buf<T>,
    mode: Mode,
    rng: Option<&mut ChaCha8Rng>,
) -> (Buf<T>, LayerAux<T>) {
    match (spec, params) {
        (LayerSpec::Conv3x3 { filters }, LayerParamsT::Conv { kernel, bias }) => (
            kernels::conv2d_gemm(input, &kernel.data, &bias.data, *filters),
            LayerAux::None,
        ),
        (LayerSpec::BatchNorm { eps }, LayerParamsT::BatchNorm { gamma, beta, mean, var }) => {
            let eps_t = T::from_f32(*eps);
            match mode {
                Mode::Infer => (
                    kernels::batchnorm_infer(input, gamma, beta, mean, var, eps_t),
                    LayerAux::None,
                ),
                Mode::Train => {
                    let (out, bn) = kernels::batchnorm_train(input, gamma, beta, eps_t);
                    (out, LayerAux::BnTrain(bn))
                }
            }
        }
        (LayerSpec::ReLU, _) => (kernels::relu(input), LayerAux::None),
        (LayerSpec::MaxPool2, _) => {
            let (out, argmax) = kernels::maxpool2(input);
            (out, LayerAux::Pool { argmax })
        }
        (LayerSpec::Dropout { rate }, _) => {
            if mode == Mode::Infer || *rate == 0.0 {
                (input.clone(), LayerAux::Dropout { mask: Vec::new() })
            } else {
                let rng = rng.expect("train-mode dropout needs the model rng");
                let keep_scale = T::from_f32(1.0 / (1.0 - rate));
                let mask: Vec<T> = (0..input.numel())
                    .map(|_| {
                        if rng.gen::<f32>() >= *rate {
                            keep_scale
                        } else {
                            T::ZERO
                        }
                    })
                    .collect();
                let data: Vec<T> = input.data.iter().zip(&mask).map(|(&x, &m)| x * m).collect();
                (Buf::new(&input.shape, data), LayerAux::Dropout { mask })
            }
        }
        (LayerSpec::Flatten, _) => {
            let n = input.shape[0];
            let d = input.numel() / n;
            (input.clone().reshaped(&[n, d]), LayerAux::None)
        }
        (LayerSpec::Dense { units }, LayerParamsT::Dense { weight, bias }) => (
            kernels::dense(input, &weight.data, &bias.data, *units),
            LayerAux::None,
        ),
        (LayerSpec::Softmax, _) => (kernels::softmax(input), LayerAux::None),
        (spec, _) => unreachable!("layer {spec:?} with mismatched params; graph was validated"),
    }
}

pub(crate) fn forward_pass<T: Scalar>(
    layers: &[LayerSpec],
    params: &[LayerParamsT<T>],
    input: Buf<T>,
    mode: Mode,
    mut rng: Option<&mut ChaCha8Rng>,
    collect: bool,
) -> Result<(Buf<T>, Option<Cache<T>>)> {
    let mut outputs = Vec::new();
    let mut aux = Vec::new();
    let mut current = input.clone();
    for (spec, param) in layers.iter().zip(params) {
        let (out, a) = layer_forward(spec, param, &current, mode, rng.as_deref_mut());
        if collect {
            outputs.push(out.clone());
            aux.push(a);
        }
        current = out;
    }
    let cache = if collect {
        Some(Cache {
            input,
            outputs,
            aux,
            mode,
        })
    } else {
        None
    };
    Ok((current, cache))
}

/// The stock architecture: four conv blocks (32, 64, 128, 256 filters), each
/// conv -> batchnorm -> relu -> maxpool -> dropout(0.2), then a 128-unit
/// dense layer with relu and a 3-way softmax head.
pub fn build_convnet(resolution: usize, seed: u64) -> Result<ModelGraph> {
    if !SUPPORTED_RESOLUTIONS.contains(&resolution) {
        return Err(Error::UnsupportedResolution {
            got: resolution,
            supported: &SUPPORTED_RESOLUTIONS,
        });
    }
    build_custom_convnet(resolution, &BLOCK_FILTERS, 128, BLOCK_DROPOUT, seed)
}

/// Architecture generator with adjustable block count and widths. The stock
/// model comes from [`build_convnet`]; reduced variants exist for tests that
/// need tractable finite differences.
pub fn build_custom_convnet(
    input_hw: usize,
    block_filters: &[usize],
    dense_units: usize,
    dropout_rate: f32,
    seed: u64,
) -> Result<ModelGraph> {
    let mut layers = Vec::new();
    for &filters in block_filters {
        layers.push(LayerSpec::Conv3x3 { filters });
        layers.push(LayerSpec::BatchNorm { eps: BN_EPS });
        layers.push(LayerSpec::ReLU);
        layers.push(LayerSpec::MaxPool2);
        layers.push(LayerSpec::Dropout { rate: dropout_rate });
    }
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Dense { units: dense_units });
    layers.push(LayerSpec::ReLU);
    layers.push(LayerSpec::Dense { units: NUM_CLASSES });
    layers.push(LayerSpec::Softmax);
    ModelGraph::new([input_hw, input_hw, 3], layers, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stock_convnet_parameter_counts() {
        let model = build_convnet(256, 0).unwrap();
        // First conv: 3*3*3*32 + 32
        match &model.params()[0] {
            LayerParamsT::Conv { kernel, bias } => {
                assert_eq!(kernel.numel() + bias.numel(), 896);
            }
            _ => panic!("layer 0 should be conv"),
        }
        // Full model at 256x256.
        assert_eq!(model.param_count(), 8_778_499);
    }

    #[test]
    fn dense_head_param_arithmetic() {
        // Dense(128 -> 3) contributes 128*3 + 3 = 387.
        let model = build_convnet(64, 1).unwrap();
        let dense3 = model
            .params()
            .iter()
            .filter_map(|p| match p {
                LayerParamsT::Dense { weight, bias } if bias.numel() == 3 => {
                    Some(weight.numel() + bias.numel())
                }
                _ => None,
            })
            .next()
            .unwrap();
        assert_eq!(dense3, 387);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = build_convnet(32, 42).unwrap();
        let b = build_convnet(32, 42).unwrap();
        assert_eq!(a.params(), b.params());
        let c = build_convnet(32, 43).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn unsupported_resolution_lists_supported() {
        match build_convnet(100, 0) {
            Err(Error::UnsupportedResolution { got, supported }) => {
                assert_eq!(got, 100);
                assert_eq!(supported, &[32, 64, 256]);
            }
            other => panic!("expected resolution error, got {other:?}"),
        }
    }

    #[test]
    fn conv1_flops_at_256() {
        let model = build_convnet(256, 0).unwrap();
        let conv1 = 256u64 * 256 * 32 * 3 * 3 * 3 * 2;
        assert!(model.flop_count() > conv1);
        // Single-conv model pins the formula exactly (plus nothing else).
        let single = ModelGraph::new(
            [256, 256, 3],
            vec![LayerSpec::Conv3x3 { filters: 32 }],
            0,
        )
        .unwrap();
        assert_eq!(single.flop_count(), conv1);
    }

    #[test]
    fn empty_model_counts_zero() {
        let empty = ModelGraph::new([8, 8, 3], Vec::new(), 0).unwrap();
        assert_eq!(empty.param_count(), 0);
        assert_eq!(empty.flop_count(), 0);
    }

    #[test]
    fn malformed_chains_rejected_at_build() {
        // dense before flatten
        let err = ModelGraph::new([8, 8, 3], vec![LayerSpec::Dense { units: 4 }], 0).unwrap_err();
        assert!(matches!(err, Error::InvalidGraph { index: 0, .. }));
        // pooling odd dims
        let err = ModelGraph::new(
            [6, 6, 3],
            vec![LayerSpec::MaxPool2, LayerSpec::MaxPool2],
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidGraph { index: 1, .. }));
        // dropout rate 1.0
        let err = ModelGraph::new([8, 8, 3], vec![LayerSpec::Dropout { rate: 1.0 }], 0).unwrap_err();
        assert!(matches!(err, Error::InvalidGraph { .. }));
        // conv after flatten
        let err = ModelGraph::new(
            [8, 8, 3],
            vec![LayerSpec::Flatten, LayerSpec::Conv3x3 { filters: 2 }],
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidGraph { index: 1, .. }));
    }

    #[test]
    fn forward_rows_are_probabilities() {
        let mut model = build_convnet(32, 7).unwrap();
        let batch = Tensor::zeros(&[2, 32, 32, 3]);
        let out = model.forward(&batch).unwrap();
        assert_eq!(out.shape(), &[2, 3]);
        for row in out.as_f32().unwrap().chunks(3) {
            let sum: f32 = row.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-6);
            assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }

    #[test]
    fn infer_forward_is_deterministic_and_shared() {
        let model = build_convnet(32, 3).unwrap();
        let batch = Tensor::full(&[1, 32, 32, 3], 0.5);
        let a = model.forward_infer(&batch).unwrap();
        let b = model.forward_infer(&batch).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_image_valid_probs_across_seeds_and_resolutions() {
        for &res in &[32usize, 64] {
            for seed in 0..4 {
                let model = build_convnet(res, seed).unwrap();
                let out = model
                    .forward_infer(&Tensor::zeros(&[1, res, res, 3]))
                    .unwrap();
                let row = out.as_f32().unwrap();
                assert!(row.iter().all(|v| v.is_finite()));
                assert!((row.iter().sum::<f32>() - 1.0).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn train_mode_dropout_rate_zero_matches_infer() {
        let mut a = build_custom_convnet(8, &[4], 8, 0.0, 5).unwrap();
        let batch = Tensor::full(&[2, 8, 8, 3], 0.3);
        let infer_out = a.forward_infer(&batch).unwrap();
        a.set_mode(Mode::Train);
        // Train mode uses batch statistics, so compare against a batch-stat
        // forward only where BN is absent; here verify rate-0 dropout draws
        // nothing from the RNG and is the identity.
        let before = a.rng.clone();
        let _ = a.forward(&batch).unwrap();
        assert_eq!(before, a.rng, "rate-0 dropout must not consume rng");
        a.set_mode(Mode::Infer);
        assert_eq!(a.forward(&batch).unwrap(), infer_out);
    }

    #[test]
    fn fold_identity_bn_preserves_weights() {
        let mut model = ModelGraph::new(
            [4, 4, 3],
            vec![
                LayerSpec::Conv3x3 { filters: 4 },
                LayerSpec::BatchNorm { eps: 0.0 },
            ],
            9,
        )
        .unwrap();
        model.set_mode(Mode::Infer);
        let folded = model.fold_batchnorm().unwrap();
        assert_eq!(folded.layers().len(), 1);
        match (&model.params()[0], &folded.params()[0]) {
            (
                LayerParamsT::Conv { kernel: k0, bias: b0 },
                LayerParamsT::Conv { kernel: k1, bias: b1 },
            ) => {
                assert_eq!(k0, k1);
                assert_eq!(b0, b1);
            }
            _ => panic!("conv params expected"),
        }
    }

    #[test]
    fn fold_equivalence_on_random_models() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for seed in 0..3 {
            let mut model = build_custom_convnet(8, &[4, 8], 8, 0.1, seed).unwrap();
            // Perturb BN stats away from identity so folding does real work.
            for p in model.params_mut() {
                if let LayerParamsT::BatchNorm { gamma, beta, mean, var } = p {
                    for v in gamma.iter_mut() {
                        *v = rng.gen_range(0.5..1.5);
                    }
                    for v in beta.iter_mut() {
                        *v = rng.gen_range(-0.5..0.5);
                    }
                    for v in mean.iter_mut() {
                        *v = rng.gen_range(-0.5..0.5);
                    }
                    for v in var.iter_mut() {
                        *v = rng.gen_range(0.2..2.0);
                    }
                }
            }
            let folded = model.fold_batchnorm().unwrap();
            assert!(folded.flop_count() < model.flop_count());
            for _ in 0..10 {
                let data: Vec<f32> = (0..8 * 8 * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
                let batch = Tensor::from_vec(&[1, 8, 8, 3], data).unwrap();
                let a = model.forward_infer(&batch).unwrap();
                let b = folded.forward_infer(&batch).unwrap();
                for (x, y) in a.as_f32().unwrap().iter().zip(b.as_f32().unwrap()) {
                    assert!((x - y).abs() <= 1e-5, "{x} vs {y}");
                }
            }
            // Idempotence: folding a folded model changes nothing.
            let again = folded.fold_batchnorm().unwrap();
            assert_eq!(folded.params(), again.params());
            assert_eq!(folded.layers(), again.layers());
        }
    }

    #[test]
    fn fold_rejects_bn_without_conv() {
        let mut model = ModelGraph::new(
            [4, 4, 3],
            vec![LayerSpec::ReLU, LayerSpec::BatchNorm { eps: 1e-3 }],
            0,
        )
        .unwrap();
        model.set_mode(Mode::Infer);
        assert!(matches!(
            model.fold_batchnorm(),
            Err(Error::FoldUnsupported { index: 1 })
        ));
        // Train mode refuses outright.
        let mut train_model = build_convnet(32, 0).unwrap();
        train_model.set_mode(Mode::Train);
        assert!(matches!(
            train_model.fold_batchnorm(),
            Err(Error::InferModeRequired { .. })
        ));
    }

    #[test]
    fn batch_shape_mismatch_is_structured() {
        let mut model = build_convnet(32, 0).unwrap();
        let bad = Tensor::zeros(&[1, 64, 64, 3]);
        assert!(matches!(
            model.forward(&bad),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
