//! The trainable pair of fields and its optimizer.

use crate::fields::mlp::MlpGrads;
use crate::fields::{
    CanonicalConfig, CanonicalField, CanonicalGrads, DeformationConfig, DeformationField, SceneBox,
};
use crate::num::{rl, Real};

/// Deformation + canonical field, updated together by one optimizer.
#[derive(Clone, Debug)]
pub struct Model<S> {
    pub deformation: DeformationField<S>,
    pub canonical: CanonicalField<S>,
}

#[derive(Clone, Debug)]
pub struct ModelGrads<S> {
    pub deformation: MlpGrads<S>,
    pub canonical: CanonicalGrads<S>,
}

impl<S: Real> Model<S> {
    pub fn init(
        deformation: DeformationConfig,
        canonical: CanonicalConfig,
        scene_box: SceneBox,
        seed: u64,
    ) -> Self {
        Model {
            deformation: DeformationField::init(deformation, scene_box, seed),
            canonical: CanonicalField::init(canonical, scene_box, seed.wrapping_add(0x1000)),
        }
    }

    /// Visits every parameter tensor in a fixed order (the checkpoint and
    /// optimizer layout).
    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut [S])) {
        self.deformation.mlp.visit_params(f);
        self.canonical.trunk.visit_params(f);
        self.canonical.density_head.visit_params(f);
        self.canonical.color_branch.visit_params(f);
    }

    pub fn param_count(&self) -> usize {
        self.deformation.mlp.param_count()
            + self.canonical.trunk.param_count()
            + self.canonical.density_head.param_count()
            + self.canonical.color_branch.param_count()
    }
}

impl<S: Real> ModelGrads<S> {
    pub fn zeros_of(model: &Model<S>) -> Self {
        ModelGrads {
            deformation: MlpGrads::zeros_of(&model.deformation.mlp),
            canonical: CanonicalGrads::zeros_of(&model.canonical),
        }
    }

    pub fn add_assign(&mut self, other: &ModelGrads<S>) {
        self.deformation.add_assign(&other.deformation);
        self.canonical.add_assign(&other.canonical);
    }

    /// Visits gradient tensors in the same order as [`Model::visit_params`].
    pub fn visit(&self, f: &mut dyn FnMut(&[S])) {
        self.deformation.visit(f);
        self.canonical.trunk.visit(f);
        self.canonical.density.visit(f);
        self.canonical.color.visit(f);
    }

    /// Gradient tensors as flat slices, in [`Model::visit_params`] order.
    pub fn grad_slices(&self) -> Vec<&[S]> {
        let mut out = Vec::new();
        for part in [
            &self.deformation,
            &self.canonical.trunk,
            &self.canonical.density,
            &self.canonical.color,
        ] {
            for w in &part.weights {
                out.push(w.as_slice().unwrap());
            }
            for b in &part.biases {
                out.push(b.as_slice().unwrap());
            }
        }
        out
    }
}

/// Adaptive-moment gradient descent with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
}

impl<S: Real> Adam<S> {
    pub fn new(model: &mut Model<S>) -> Self {
        let mut m = Vec::new();
        model.visit_params(&mut |p: &mut [S]| m.push(vec![S::zero(); p.len()]));
        let v = m.clone();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m,
            v,
        }
    }

    pub fn update(&mut self, model: &mut Model<S>, grads: &ModelGrads<S>, lr: f64) {
        self.step += 1;
        let b1: S = rl(self.beta1);
        let b2: S = rl(self.beta2);
        let one = S::one();
        let corr1 = 1.0 - self.beta1.powi(self.step as i32);
        let corr2 = 1.0 - self.beta2.powi(self.step as i32);
        let alpha: S = rl(lr * corr2.sqrt() / corr1);
        let eps: S = rl(self.eps);

        let grad_slices = grads.grad_slices();
        assert_eq!(grad_slices.len(), self.m.len(), "gradient layout mismatch");

        let mut idx = 0usize;
        let m = &mut self.m;
        let v = &mut self.v;
        model.visit_params(&mut |p: &mut [S]| {
            let g = grad_slices[idx];
            let ms = &mut m[idx];
            let vs = &mut v[idx];
            debug_assert_eq!(p.len(), g.len());
            for k in 0..p.len() {
                ms[k] = b1 * ms[k] + (one - b1) * g[k];
                vs[k] = b2 * vs[k] + (one - b2) * g[k] * g[k];
                p[k] = p[k] - alpha * ms[k] / (vs[k].sqrt() + eps);
            }
            idx += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::mlp::Activation;

    fn tiny_model() -> Model<f64> {
        Model::init(
            DeformationConfig {
                depth: 2,
                width: 8,
                skip_at: Some(1),
                l_pos: 2,
                l_time: 1,
                activation: Activation::Relu,
                head_init_scale: 1e-6,
            },
            CanonicalConfig {
                depth: 2,
                width: 8,
                skip_at: Some(1),
                color_width: 6,
                l_pos: 2,
                l_dir: 1,
                activation: Activation::Relu,
            },
            SceneBox {
                min: [-1.0, -1.0, 1.0],
                max: [1.0, 1.0, 3.0],
            },
            3,
        )
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // Minimize |params|^2 over every model parameter.
        let mut model = tiny_model();
        let mut adam = Adam::new(&mut model);
        let norm2 = |m: &mut Model<f64>| {
            let mut acc = 0.0;
            m.visit_params(&mut |p: &mut [f64]| acc += p.iter().map(|v| v * v).sum::<f64>());
            acc
        };
        let before = norm2(&mut model);
        for _ in 0..200 {
            let mut grads = ModelGrads::zeros_of(&model);
            // grad = 2 p, assembled through the visitor pairing
            let mut params: Vec<Vec<f64>> = Vec::new();
            model.visit_params(&mut |p: &mut [f64]| params.push(p.to_vec()));
            let mut idx = 0;
            let mut fill = |g: &mut [f64]| {
                for (k, v) in g.iter_mut().enumerate() {
                    *v = 2.0 * params[idx][k];
                }
                idx += 1;
            };
            grads.deformation.weights.iter_mut().for_each(|w| fill(w.as_slice_mut().unwrap()));
            grads.deformation.biases.iter_mut().for_each(|b| fill(b.as_slice_mut().unwrap()));
            grads.canonical.trunk.weights.iter_mut().for_each(|w| fill(w.as_slice_mut().unwrap()));
            grads.canonical.trunk.biases.iter_mut().for_each(|b| fill(b.as_slice_mut().unwrap()));
            grads.canonical.density.weights.iter_mut().for_each(|w| fill(w.as_slice_mut().unwrap()));
            grads.canonical.density.biases.iter_mut().for_each(|b| fill(b.as_slice_mut().unwrap()));
            grads.canonical.color.weights.iter_mut().for_each(|w| fill(w.as_slice_mut().unwrap()));
            grads.canonical.color.biases.iter_mut().for_each(|b| fill(b.as_slice_mut().unwrap()));
            adam.update(&mut model, &grads, 1e-2);
        }
        let after = norm2(&mut model);
        assert!(after < before * 0.2, "{after} !< {before}");
    }

    #[test]
    fn grads_visit_order_matches_params() {
        let mut model = tiny_model();
        let grads = ModelGrads::zeros_of(&model);
        let mut param_lens = Vec::new();
        model.visit_params(&mut |p: &mut [f64]| param_lens.push(p.len()));
        let mut grad_lens = Vec::new();
        grads.visit(&mut |g: &[f64]| grad_lens.push(g.len()));
        assert_eq!(param_lens, grad_lens);
    }
}
