//! Reverse-mode gradients through the fixed layer set.
//!
//! Training uses the fused softmax/cross-entropy gradient (p - y)/N seeded at
//! the logits; attribution seeds an arbitrary vector there instead. The same
//! generic engine instantiated at f64 backs [`ModelF64`], which exists so
//! finite-difference tests can check every parameter gradient without f32
//! perturbation noise.

use crate::error::{Error, Result};
use crate::graph::{forward_pass, Cache, LayerAux, LayerParamsT, LayerSpec, Mode, ModelGraph};
use crate::kernels::{self, Buf, Scalar};
use crate::label::NUM_CLASSES;
use crate::tensor::Tensor;

/// Mean negative log-likelihood with probabilities clamped to >= 1e-12
/// before the log.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<f32> {
    let (n, k) = match probs.shape() {
        [n, k] => (*n, *k),
        s => {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                expected: vec![labels.len(), NUM_CLASSES],
                got: s.to_vec(),
            })
        }
    };
    if n != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy labels",
            expected: vec![n],
            got: vec![labels.len()],
        });
    }
    let data = probs.as_f32()?;
    let mut total = 0.0f64;
    for (row, &label) in data.chunks_exact(k).zip(labels) {
        if label >= k {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        total += -(row[label].max(1e-12) as f64).ln();
    }
    Ok((total / n as f64) as f32)
}

fn cross_entropy_t<T: Scalar>(probs: &Buf<T>, labels: &[usize]) -> T {
    let (n, k) = probs.dims2();
    let clamp = T::from_f64(1e-12);
    let mut total = T::ZERO;
    for (row, &label) in probs.data.chunks_exact(k).zip(labels) {
        total += -(row[label].maxs(clamp)).ln();
    }
    total / T::from_usize(n)
}

/// Everything the backward pass needs from one forward call.
///
/// Consumed by [`backward`]; a cache can back exactly one backward pass.
pub struct ActivationCache {
    pub(crate) cache: Cache<f32>,
    pub(crate) batch_shape: Vec<usize>,
    pub(crate) layer_count: usize,
}

/// Per-parameter gradients in the model's own layer structure, plus the
/// gradient of the loss with respect to the input batch.
pub struct Gradients {
    pub(crate) layers: Vec<LayerParamsT<f32>>,
    input_grad: Buf<f32>,
    batch_size: usize,
}

impl Gradients {
    pub fn input_grad(&self) -> Tensor {
        Tensor::from_vec(&self.input_grad.shape, self.input_grad.data.clone())
            .expect("consistent buffer")
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Flattened (name, values) pairs for the trainable parameters, in the
    /// same order as [`ModelGraph::named_params`] minus running statistics.
    pub fn named_flat(&self) -> Vec<(String, Vec<f32>)> {
        named_trainable(&self.layers)
    }
}

pub(crate) fn named_trainable<T: Scalar>(layers: &[LayerParamsT<T>]) -> Vec<(String, Vec<T>)> {
    let mut out = Vec::new();
    for (i, p) in layers.iter().enumerate() {
        match p {
            LayerParamsT::Conv { kernel, bias } => {
                out.push((format!("layer{i}.kernel"), kernel.data.clone()));
                out.push((format!("layer{i}.bias"), bias.data.clone()));
            }
            LayerParamsT::BatchNorm { gamma, beta, .. } => {
                out.push((format!("layer{i}.gamma"), gamma.clone()));
                out.push((format!("layer{i}.beta"), beta.clone()));
            }
            LayerParamsT::Dense { weight, bias } => {
                out.push((format!("layer{i}.weight"), weight.data.clone()));
                out.push((format!("layer{i}.bias"), bias.data.clone()));
            }
            LayerParamsT::None => {}
        }
    }
    out
}

/// Forward pass that retains per-layer intermediates for [`backward`].
/// In `Train` mode dropout draws from the model RNG and batch norm uses
/// batch statistics (recorded in the cache for running-stat updates).
pub fn forward_train(model: &mut ModelGraph, batch: &Tensor) -> Result<(Tensor, ActivationCache)> {
    let (probs, cache) = model.forward_cached(batch)?;
    let out = Tensor::from_vec(&probs.shape, probs.data)?;
    Ok((
        out,
        ActivationCache {
            batch_shape: batch.shape().to_vec(),
            layer_count: model.layers().len(),
            cache,
        },
    ))
}

/// Gradients of the mean cross-entropy loss for every trainable parameter
/// and the input batch. The softmax + cross-entropy pair is differentiated
/// as one fused step: the logit gradient is (p - y)/N.
pub fn backward(
    model: &ModelGraph,
    batch: &Tensor,
    labels: &[usize],
    cache: ActivationCache,
) -> Result<Gradients> {
    if cache.layer_count != model.layers().len() {
        return Err(Error::StaleCache {
            reason: format!(
                "cache built for {} layers, model has {}",
                cache.layer_count,
                model.layers().len()
            ),
        });
    }
    if cache.batch_shape != batch.shape() {
        return Err(Error::StaleCache {
            reason: format!(
                "cache built for batch {:?}, got {:?}",
                cache.batch_shape,
                batch.shape()
            ),
        });
    }
    if cache.cache.mode != model.mode() {
        return Err(Error::StaleCache {
            reason: "model mode changed since the forward pass".into(),
        });
    }
    let n = batch.shape()[0];
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            op: "backward labels",
            expected: vec![n],
            got: vec![labels.len()],
        });
    }
    let softmax_index = model.layers().len().checked_sub(1).filter(|&i| {
        matches!(model.layers()[i], LayerSpec::Softmax)
    });
    let softmax_index = softmax_index.ok_or_else(|| Error::InvalidGraph {
        index: model.layers().len().saturating_sub(1),
        reason: "backward requires a softmax-terminated graph".into(),
    })?;
    let probs = &cache.cache.outputs[softmax_index];
    let seed = fused_ce_seed(probs, labels, n)?;

    let result = backward_pass(
        model.layers(),
        model.params(),
        &cache.cache,
        softmax_index - 1,
        seed,
        true,
        None,
    );
    Ok(Gradients {
        layers: result.param_grads.expect("requested"),
        input_grad: result.input_grad,
        batch_size: n,
    })
}

/// (p - y)/N at the logits.
pub(crate) fn fused_ce_seed<T: Scalar>(probs: &Buf<T>, labels: &[usize], n: usize) -> Result<Buf<T>> {
    let k = probs.shape[1];
    let inv_n = T::ONE / T::from_usize(n);
    let mut seed = probs.clone();
    for (row, &label) in seed.data.chunks_exact_mut(k).zip(labels) {
        if label >= k {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        for v in row.iter_mut() {
            *v = *v * inv_n;
        }
        row[label] -= inv_n;
    }
    Ok(seed)
}

pub(crate) struct BackwardOutput<T> {
    pub param_grads: Option<Vec<LayerParamsT<T>>>,
    pub input_grad: Buf<T>,
    /// Gradient with respect to the requested layer's output.
    pub captured: Option<Buf<T>>,
}

/// Walk layers `seed_layer..=0` propagating `seed`, the gradient of some
/// scalar with respect to the output of `seed_layer`.
pub(crate) fn backward_pass<T: Scalar>(
    layers: &[LayerSpec],
    params: &[LayerParamsT<T>],
    cache: &Cache<T>,
    seed_layer: usize,
    seed: Buf<T>,
    want_param_grads: bool,
    capture_layer: Option<usize>,
) -> BackwardOutput<T> {
    let mut param_grads: Vec<LayerParamsT<T>> = if want_param_grads {
        layers.iter().map(|_| LayerParamsT::None).collect()
    } else {
        Vec::new()
    };
    let mut captured = None;
    let mut grad = seed;
    for j in (0..=seed_layer).rev() {
        if capture_layer == Some(j) {
            captured = Some(grad.clone());
        }
        let input = if j == 0 { &cache.input } else { &cache.outputs[j - 1] };
        let output = &cache.outputs[j];
        grad = match (&layers[j], &params[j], &cache.aux[j]) {
            (LayerSpec::Conv3x3 { filters }, LayerParamsT::Conv { kernel, .. }, _) => {
                let (dinput, dkernel, dbias) =
                    kernels::conv2d_backward(input, &kernel.data, *filters, &grad, want_param_grads);
                if want_param_grads {
                    param_grads[j] = LayerParamsT::Conv {
                        kernel: Buf::new(&kernel.shape, dkernel),
                        bias: Buf::new(&[*filters], dbias),
                    };
                }
                dinput
            }
            (
                LayerSpec::BatchNorm { eps },
                LayerParamsT::BatchNorm { gamma, var, mean, .. },
                aux,
            ) => {
                let c = gamma.len();
                match aux {
                    LayerAux::BnTrain(bn) => {
                        let (dinput, dgamma, dbeta) =
                            kernels::batchnorm_train_backward(&grad, bn, gamma);
                        if want_param_grads {
                            param_grads[j] = LayerParamsT::BatchNorm {
                                gamma: dgamma,
                                beta: dbeta,
                                mean: vec![T::ZERO; c],
                                var: vec![T::ZERO; c],
                            };
                        }
                        dinput
                    }
                    _ => {
                        // Inference-form: statistics are constants.
                        let eps_t = T::from_f32(*eps);
                        if want_param_grads {
                            let mut dgamma = vec![T::ZERO; c];
                            let mut dbeta = vec![T::ZERO; c];
                            let inv: Vec<T> = var
                                .iter()
                                .map(|&v| T::ONE / (v + eps_t).sqrt())
                                .collect();
                            for (grow, xrow) in
                                grad.data.chunks_exact(c).zip(input.data.chunks_exact(c))
                            {
                                for i in 0..c {
                                    dgamma[i] += grow[i] * (xrow[i] - mean[i]) * inv[i];
                                    dbeta[i] += grow[i];
                                }
                            }
                            param_grads[j] = LayerParamsT::BatchNorm {
                                gamma: dgamma,
                                beta: dbeta,
                                mean: vec![T::ZERO; c],
                                var: vec![T::ZERO; c],
                            };
                        }
                        kernels::batchnorm_infer_backward(&grad, gamma, var, eps_t)
                    }
                }
            }
            (LayerSpec::ReLU, _, _) => kernels::relu_backward(&grad, output),
            (LayerSpec::MaxPool2, _, LayerAux::Pool { argmax }) => {
                kernels::maxpool2_backward(&grad, argmax, &input.shape)
            }
            (LayerSpec::Dropout { .. }, _, LayerAux::Dropout { mask }) => {
                if mask.is_empty() {
                    grad
                } else {
                    let data: Vec<T> =
                        grad.data.iter().zip(mask).map(|(&g, &m)| g * m).collect();
                    Buf::new(&grad.shape, data)
                }
            }
            (LayerSpec::Flatten, _, _) => grad.reshaped(&input.shape),
            (LayerSpec::Dense { units }, LayerParamsT::Dense { weight, .. }, _) => {
                let (dinput, dweight, dbias) =
                    kernels::dense_backward(input, &weight.data, *units, &grad, want_param_grads);
                if want_param_grads {
                    param_grads[j] = LayerParamsT::Dense {
                        weight: Buf::new(&weight.shape, dweight),
                        bias: Buf::new(&[*units], dbias),
                    };
                }
                dinput
            }
            (LayerSpec::Softmax, _, _) => kernels::softmax_backward(&grad, output),
            (spec, _, _) => unreachable!("layer {spec:?} inconsistent with cache"),
        };
    }
    BackwardOutput {
        param_grads: want_param_grads.then_some(param_grads),
        input_grad: grad,
        captured,
    }
}

/// Index of the logits layer (the layer feeding the terminal softmax).
pub(crate) fn logits_layer_index(layers: &[LayerSpec]) -> Result<usize> {
    match layers.last() {
        Some(LayerSpec::Softmax) if layers.len() >= 2 => Ok(layers.len() - 2),
        _ => Err(Error::InvalidGraph {
            index: layers.len().saturating_sub(1),
            reason: "graph must end with softmax over logits".into(),
        }),
    }
}

/// Gradient of one pre-softmax logit with respect to the input image, in
/// inference mode. Used by the attribution methods.
pub fn logit_input_gradient(
    model: &ModelGraph,
    image: &Tensor,
    target_class: usize,
) -> Result<Tensor> {
    if model.mode() != Mode::Infer {
        return Err(Error::InferModeRequired {
            op: "logit_input_gradient",
        });
    }
    let logits_idx = logits_layer_index(model.layers())?;
    let input = Buf::new(image.shape(), image.as_f32()?.to_vec());
    let (out, cache) = forward_pass(model.layers(), model.params(), input, Mode::Infer, None, true)?;
    let k = out.shape[1];
    if target_class >= k {
        return Err(Error::LabelOutOfRange {
            label: target_class,
            classes: k,
        });
    }
    let n = image.shape()[0];
    let mut seed = Buf::zeros(&[n, k]);
    for row in 0..n {
        seed.data[row * k + target_class] = 1.0;
    }
    let result = backward_pass(
        model.layers(),
        model.params(),
        &cache.expect("collected"),
        logits_idx,
        seed,
        false,
        None,
    );
    Tensor::from_vec(&result.input_grad.shape, result.input_grad.data)
}

// ---------------------------------------------------------------------------
// f64 compute mode for gradient-check tests
// ---------------------------------------------------------------------------

/// An f64 copy of a model's structure and parameters.
///
/// Exists solely so gradient-check tests can evaluate the training loss and
/// its analytic gradients in f64, where central finite differences with
/// h = 1e-5 are meaningful. Forward evaluation is pure: batch-norm uses
/// batch statistics but never updates running ones, and dropout layers must
/// have rate 0.
pub struct ModelF64 {
    layers: Vec<LayerSpec>,
    params: Vec<LayerParamsT<f64>>,
    input_shape: [usize; 3],
}

impl ModelF64 {
    pub fn from_model(model: &ModelGraph) -> Result<ModelF64> {
        for (index, layer) in model.layers().iter().enumerate() {
            if let LayerSpec::Dropout { rate } = layer {
                if *rate != 0.0 {
                    return Err(Error::InvalidArgument {
                        op: "ModelF64::from_model",
                        reason: format!(
                            "layer {index} has dropout rate {rate}; the f64 check path \
                             requires rate 0 so the loss is deterministic"
                        ),
                    });
                }
            }
        }
        Ok(ModelF64 {
            layers: model.layers().to_vec(),
            params: model.params().iter().map(|p| p.convert::<f64>()).collect(),
            input_shape: model.input_shape(),
        })
    }

    fn batch_buf(&self, batch: &Tensor) -> Result<Buf<f64>> {
        let [h, w, c] = self.input_shape;
        let s = batch.shape();
        if s.len() != 4 || s[1] != h || s[2] != w || s[3] != c {
            return Err(Error::ShapeMismatch {
                op: "ModelF64 batch",
                expected: vec![0, h, w, c],
                got: s.to_vec(),
            });
        }
        let data: Vec<f64> = batch.as_f32()?.iter().map(|&v| v as f64).collect();
        Ok(Buf::new(s, data))
    }

    /// Mean cross-entropy of the batch in train mode (batch statistics).
    pub fn loss(&self, batch: &Tensor, labels: &[usize]) -> Result<f64> {
        let input = self.batch_buf(batch)?;
        let (probs, _) = forward_pass(&self.layers, &self.params, input, Mode::Train, None, false)?;
        Ok(cross_entropy_t(&probs, labels))
    }

    /// Analytic gradients of [`Self::loss`] for every trainable parameter,
    /// flattened as (name, values).
    pub fn param_gradients(&self, batch: &Tensor, labels: &[usize]) -> Result<Vec<(String, Vec<f64>)>> {
        let input = self.batch_buf(batch)?;
        let n = input.shape[0];
        let (probs, cache) =
            forward_pass(&self.layers, &self.params, input, Mode::Train, None, true)?;
        let cache = cache.expect("collected");
        let logits_idx = logits_layer_index(&self.layers)?;
        let seed = fused_ce_seed(&probs, labels, n)?;
        let result = backward_pass(&self.layers, &self.params, &cache, logits_idx, seed, true, None);
        Ok(named_trainable(&result.param_grads.expect("requested")))
    }

    /// Trainable parameters, flattened as (name, values).
    pub fn flat_params(&self) -> Vec<(String, Vec<f64>)> {
        named_trainable(&self.params)
    }

    /// Overwrite one element of a named trainable parameter tensor.
    pub fn set_param(&mut self, name: &str, index: usize, value: f64) {
        let (layer_idx, field) = parse_param_name(name);
        match (&mut self.params[layer_idx], field) {
            (LayerParamsT::Conv { kernel, .. }, "kernel") => kernel.data[index] = value,
            (LayerParamsT::Conv { bias, .. }, "bias") => bias.data[index] = value,
            (LayerParamsT::BatchNorm { gamma, .. }, "gamma") => gamma[index] = value,
            (LayerParamsT::BatchNorm { beta, .. }, "beta") => beta[index] = value,
            (LayerParamsT::Dense { weight, .. }, "weight") => weight.data[index] = value,
            (LayerParamsT::Dense { bias, .. }, "bias") => bias.data[index] = value,
            (p, f) => panic!("no parameter field {f} on {p:?}"),
        }
    }
}

fn parse_param_name(name: &str) -> (usize, &str) {
    let rest = name.strip_prefix("layer").expect("name format layerN.field");
    let (idx, field) = rest.split_once('.').expect("name format layerN.field");
    (idx.parse().expect("layer index"), field)
}
