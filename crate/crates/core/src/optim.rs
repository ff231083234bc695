//! Adam optimizer with bias correction.

use crate::autodiff::Gradients;
use crate::error::{Error, Result};
use crate::graph::{LayerParamsT, ModelGraph};
use crate::kernels::Buf;

pub const DEFAULT_LR: f32 = 1e-4;
pub const DEFAULT_BETA1: f32 = 0.9;
pub const DEFAULT_BETA2: f32 = 0.999;
pub const DEFAULT_EPS: f32 = 1e-8;

/// First/second moment estimates per trainable parameter plus the step
/// counter. Running batch-norm statistics are not optimized.
pub struct AdamState {
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    t: u64,
    m: Vec<LayerParamsT<f32>>,
    v: Vec<LayerParamsT<f32>>,
}

fn zeros_like(params: &[LayerParamsT<f32>]) -> Vec<LayerParamsT<f32>> {
    params
        .iter()
        .map(|p| match p {
            LayerParamsT::Conv { kernel, bias } => LayerParamsT::Conv {
                kernel: Buf::zeros(&kernel.shape),
                bias: Buf::zeros(&bias.shape),
            },
            LayerParamsT::BatchNorm { gamma, .. } => LayerParamsT::BatchNorm {
                gamma: vec![0.0; gamma.len()],
                beta: vec![0.0; gamma.len()],
                mean: vec![0.0; gamma.len()],
                var: vec![0.0; gamma.len()],
            },
            LayerParamsT::Dense { weight, bias } => LayerParamsT::Dense {
                weight: Buf::zeros(&weight.shape),
                bias: Buf::zeros(&bias.shape),
            },
            LayerParamsT::None => LayerParamsT::None,
        })
        .collect()
}

impl AdamState {
    pub fn new(model: &ModelGraph, lr: f32) -> AdamState {
        AdamState {
            lr,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eps: DEFAULT_EPS,
            t: 0,
            m: zeros_like(model.params()),
            v: zeros_like(model.params()),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One optimization step: t += 1, update biased moments, apply the
    /// bias-corrected update theta -= lr * m_hat / (sqrt(v_hat) + eps).
    pub fn step(&mut self, model: &mut ModelGraph, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                expected: vec![self.m.len()],
                got: vec![grads.layers.len()],
            });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);

        let update = |theta: &mut [f32], g: &[f32], m: &mut [f32], v: &mut [f32]| -> Result<()> {
            if theta.len() != g.len() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step parameter",
                    expected: vec![theta.len()],
                    got: vec![g.len()],
                });
            }
            for i in 0..theta.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            Ok(())
        };

        for (((param, grad), m), v) in model
            .params_mut()
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            match (param, grad, m, v) {
                (
                    LayerParamsT::Conv { kernel, bias },
                    LayerParamsT::Conv { kernel: gk, bias: gb },
                    LayerParamsT::Conv { kernel: mk, bias: mb },
                    LayerParamsT::Conv { kernel: vk, bias: vb },
                ) => {
                    update(&mut kernel.data, &gk.data, &mut mk.data, &mut vk.data)?;
                    update(&mut bias.data, &gb.data, &mut mb.data, &mut vb.data)?;
                }
                (
                    LayerParamsT::BatchNorm { gamma, beta, .. },
                    LayerParamsT::BatchNorm { gamma: gg, beta: gb, .. },
                    LayerParamsT::BatchNorm { gamma: mg, beta: mb, .. },
                    LayerParamsT::BatchNorm { gamma: vg, beta: vb, .. },
                ) => {
                    update(gamma, gg, mg, vg)?;
                    update(beta, gb, mb, vb)?;
                }
                (
                    LayerParamsT::Dense { weight, bias },
                    LayerParamsT::Dense { weight: gw, bias: gb },
                    LayerParamsT::Dense { weight: mw, bias: mb },
                    LayerParamsT::Dense { weight: vw, bias: vb },
                ) => {
                    update(&mut weight.data, &gw.data, &mut mw.data, &mut vw.data)?;
                    update(&mut bias.data, &gb.data, &mut mb.data, &mut vb.data)?;
                }
                (LayerParamsT::None, LayerParamsT::None, _, _) => {}
                _ => {
                    return Err(Error::ShapeMismatch {
                        op: "adam_step layer kind",
                        expected: vec![],
                        got: vec![],
                    })
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{backward, forward_train};
    use crate::graph::{build_custom_convnet, Mode};
    use crate::tensor::Tensor;

    fn scale_grads(grads: &mut Gradients, s: f32) {
        for layer in &mut grads.layers {
            match layer {
                LayerParamsT::Conv { kernel, bias } => {
                    kernel.data.iter_mut().for_each(|v| *v *= s);
                    bias.data.iter_mut().for_each(|v| *v *= s);
                }
                LayerParamsT::BatchNorm { gamma, beta, .. } => {
                    gamma.iter_mut().for_each(|v| *v *= s);
                    beta.iter_mut().for_each(|v| *v *= s);
                }
                LayerParamsT::Dense { weight, bias } => {
                    weight.data.iter_mut().for_each(|v| *v *= s);
                    bias.data.iter_mut().for_each(|v| *v *= s);
                }
                LayerParamsT::None => {}
            }
        }
    }

    fn tiny_step(
        lr: f32,
        grad_scale: f32,
    ) -> (
        Vec<(String, Tensor)>,
        Vec<(String, Tensor)>,
        Vec<(String, Vec<f32>)>,
    ) {
        let mut model = build_custom_convnet(4, &[2], 4, 0.0, 1).unwrap();
        model.set_mode(Mode::Train);
        let before = model.named_params();
        let batch = Tensor::full(&[1, 4, 4, 3], 0.5);
        let (_, cache) = forward_train(&mut model, &batch).unwrap();
        let mut grads = backward(&model, &batch, &[1], cache).unwrap();
        scale_grads(&mut grads, grad_scale);
        let flat = grads.named_flat();
        let mut adam = AdamState::new(&model, lr);
        adam.step(&mut model, &grads).unwrap();
        (before, model.named_params(), flat)
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let (before, after, _) = tiny_step(DEFAULT_LR, 0.0);
        for ((_, a), (_, b)) in before.iter().zip(&after) {
            assert_eq!(a.as_f32().unwrap(), b.as_f32().unwrap());
        }
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        // At t=1 the bias-corrected update is lr * sign(g) up to eps, so
        // every element with a nonzero gradient moves by about lr.
        let lr = 1e-3;
        let (before, after, _) = tiny_step(lr, 1.0);
        let mut moved = 0usize;
        for ((_, a), (_, b)) in before.iter().zip(&after) {
            for (x, y) in a.as_f32().unwrap().iter().zip(b.as_f32().unwrap()) {
                let delta = (x - y).abs();
                if delta > 0.0 {
                    assert!(delta <= lr * 1.001, "step {delta} exceeds lr {lr}");
                    if delta > lr * 0.5 {
                        moved += 1;
                    }
                }
            }
        }
        assert!(moved > 0, "some parameters should move by ~lr");
    }

    #[test]
    fn first_step_is_scale_free() {
        // Doubling all gradients leaves the first Adam update unchanged up
        // to epsilon terms. The epsilon term is lr*eps/(2|g|), so the 1e-6
        // bound applies where the gradient is not itself at epsilon scale.
        let (_, after_1x, grads) = tiny_step(DEFAULT_LR, 1.0);
        let (_, after_2x, _) = tiny_step(DEFAULT_LR, 2.0);
        let mut checked = 0usize;
        for ((name, a), (_, b)) in after_1x.iter().zip(&after_2x) {
            let Some((_, g)) = grads.iter().find(|(gn, _)| gn == name) else {
                continue; // running statistics carry no gradient
            };
            for ((x, y), gv) in a.as_f32().unwrap().iter().zip(b.as_f32().unwrap()).zip(g) {
                if gv.abs() >= 1e-5 {
                    assert!((x - y).abs() <= 1e-6, "{name}: {x} vs {y} (g={gv})");
                    checked += 1;
                }
            }
        }
        assert!(checked > 50, "only {checked} elements had usable gradients");
    }

    #[test]
    fn default_lr_matches_training_recipe() {
        assert_eq!(DEFAULT_LR, 1e-4);
    }
}
