//! Dense multilayer perceptron with hand-rolled reverse-mode gradients.
//!
//! Beyond the usual forward/backward pair, the network supports a
//! forward-mode tangent pass (JVP) and reverse-mode differentiation
//! *through* that tangent pass. The latter is what lets a loss defined on
//! the network's input Jacobian (the elastic warp regularizer) reach the
//! weights exactly.
//!
//! Shapes: batches are `(N, dim)` row-major; layer `l` stores its weight as
//! `(out_l, in_l)`.

use crate::num::{rl, Real};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Softplus,
}

impl Activation {
    #[inline]
    fn f<S: Real>(self, z: S) -> S {
        match self {
            Activation::Relu => {
                if z > S::zero() {
                    z
                } else {
                    S::zero()
                }
            }
            Activation::Softplus => softplus(z),
        }
    }

    #[inline]
    fn df<S: Real>(self, z: S) -> S {
        match self {
            Activation::Relu => {
                if z > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::Softplus => sigmoid(z),
        }
    }

    #[inline]
    fn ddf<S: Real>(self, z: S) -> S {
        match self {
            Activation::Relu => S::zero(),
            Activation::Softplus => {
                let s = sigmoid(z);
                s * (S::one() - s)
            }
        }
    }
}

#[inline]
pub fn sigmoid<S: Real>(z: S) -> S {
    let one = S::one();
    if z >= S::zero() {
        one / (one + (-z).exp())
    } else {
        let e = z.exp();
        e / (one + e)
    }
}

#[inline]
pub fn softplus<S: Real>(z: S) -> S {
    // max(z, 0) + ln(1 + exp(-|z|))
    let zero = S::zero();
    let m = if z > zero { z } else { zero };
    m + (S::one() + (-z.abs()).exp()).ln()
}

/// Architecture descriptor: hidden layers (all sharing one activation) and
/// an optional final linear head. Without a head, the activated output of
/// the last hidden layer is the network output.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MlpSpec {
    pub in_dim: usize,
    pub hidden: Vec<usize>,
    pub head_dim: Option<usize>,
    /// Hidden layer whose input re-concatenates the network input.
    pub skip_at: Option<usize>,
    pub activation: Activation,
    /// Uniform init half-width multiplier for the head (1.0 = standard).
    pub head_init_scale: f64,
}

impl MlpSpec {
    pub fn out_dim(&self) -> usize {
        self.head_dim
            .unwrap_or_else(|| *self.hidden.last().expect("mlp with no layers"))
    }
}

#[derive(Clone, Debug)]
pub struct Mlp<S> {
    pub spec: MlpSpec,
    /// Hidden weights then (optionally) the head weight last.
    pub weights: Vec<Array2<S>>,
    pub biases: Vec<Array1<S>>,
}

/// Forward-pass intermediates needed by the backward pass.
pub struct MlpCache<S> {
    pub input: Array2<S>,
    zs: Vec<Array2<S>>,
    hs: Vec<Array2<S>>,
    pub out: Array2<S>,
}

/// Tangent-pass intermediates (one directional derivative per cache).
pub struct MlpJvpCache<S> {
    xdot: Array2<S>,
    vs: Vec<Array2<S>>,
    us: Vec<Array2<S>>,
    pub out_dot: Array2<S>,
}

/// Per-layer gradient accumulators, laid out exactly like the parameters.
#[derive(Clone, Debug)]
pub struct MlpGrads<S> {
    pub weights: Vec<Array2<S>>,
    pub biases: Vec<Array1<S>>,
}

impl<S: Real> MlpGrads<S> {
    pub fn zeros_of(mlp: &Mlp<S>) -> Self {
        MlpGrads {
            weights: mlp.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: mlp.biases.iter().map(|b| Array1::zeros(b.dim())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads<S>) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }
}

impl<S: Real> Mlp<S> {
    /// Builds the network with Kaiming-uniform hidden weights and zero
    /// biases. The head init half-width is scaled by `head_init_scale`.
    pub fn init(spec: MlpSpec, seed: u64) -> Self {
        assert!(
            !spec.hidden.is_empty() || spec.head_dim.is_some(),
            "mlp needs at least one layer"
        );
        if let Some(k) = spec.skip_at {
            assert!(k >= 1 && k < spec.hidden.len(), "skip layer out of range");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut prev = spec.in_dim;
        for (l, &w) in spec.hidden.iter().enumerate() {
            let fan_in = if spec.skip_at == Some(l) {
                prev + spec.in_dim
            } else {
                prev
            };
            let bound = (6.0 / fan_in as f64).sqrt();
            weights.push(Array2::from_shape_fn((w, fan_in), |_| {
                rl::<S>(rng.gen_range(-bound..bound))
            }));
            biases.push(Array1::zeros(w));
            prev = w;
        }
        if let Some(out) = spec.head_dim {
            let bound = (6.0 / prev as f64).sqrt() * spec.head_init_scale;
            weights.push(Array2::from_shape_fn((out, prev), |_| {
                rl::<S>(rng.gen_range(-bound..bound))
            }));
            biases.push(Array1::zeros(out));
        }
        Mlp {
            spec,
            weights,
            biases,
        }
    }

    fn has_head(&self) -> bool {
        self.spec.head_dim.is_some()
    }

    fn layer_input<'a>(
        &self,
        l: usize,
        input: &'a Array2<S>,
        hs: &'a [Array2<S>],
    ) -> std::borrow::Cow<'a, Array2<S>> {
        use std::borrow::Cow;
        if l == 0 {
            Cow::Borrowed(input)
        } else if self.spec.skip_at == Some(l) {
            Cow::Owned(concat_cols(&hs[l - 1], input))
        } else {
            Cow::Borrowed(&hs[l - 1])
        }
    }

    pub fn forward(&self, input: &Array2<S>) -> MlpCache<S> {
        let nh = self.spec.hidden.len();
        let mut zs = Vec::with_capacity(nh);
        let mut hs: Vec<Array2<S>> = Vec::with_capacity(nh);
        for l in 0..nh {
            let a = self.layer_input(l, input, &hs);
            let z = affine(&a, &self.weights[l], &self.biases[l]);
            let h = z.mapv(|v| self.spec.activation.f(v));
            zs.push(z);
            hs.push(h);
        }
        let out = if self.has_head() {
            let a: &Array2<S> = if nh == 0 { input } else { &hs[nh - 1] };
            affine(a, &self.weights[nh], &self.biases[nh])
        } else {
            hs[nh - 1].clone()
        };
        MlpCache {
            input: input.clone(),
            zs,
            hs,
            out,
        }
    }

    /// Propagates an input tangent `xdot` through the linearized network.
    pub fn jvp(&self, cache: &MlpCache<S>, xdot: &Array2<S>) -> MlpJvpCache<S> {
        let nh = self.spec.hidden.len();
        let act = self.spec.activation;
        let mut vs = Vec::with_capacity(nh);
        let mut us: Vec<Array2<S>> = Vec::with_capacity(nh);
        for l in 0..nh {
            let adot = if l == 0 {
                xdot.clone()
            } else if self.spec.skip_at == Some(l) {
                concat_cols(&us[l - 1], xdot)
            } else {
                us[l - 1].clone()
            };
            let v = adot.dot(&self.weights[l].t());
            let mut u = v.clone();
            ndarray::Zip::from(&mut u).and(&cache.zs[l]).for_each(|uv, &z| {
                *uv = *uv * act.df(z);
            });
            vs.push(v);
            us.push(u);
        }
        let out_dot = if self.has_head() {
            let adot: &Array2<S> = if nh == 0 { xdot } else { &us[nh - 1] };
            adot.dot(&self.weights[nh].t())
        } else {
            us[nh - 1].clone()
        };
        MlpJvpCache {
            xdot: xdot.clone(),
            vs,
            us,
            out_dot,
        }
    }

    /// Combined reverse sweep.
    ///
    /// `dout` is the adjoint of the forward output; each entry of
    /// `tangent_adjoints` pairs a JVP cache with the adjoint of its tangent
    /// output. Gradients accumulate into `grads`; the adjoint of the primal
    /// input is returned when `want_dinput` is set. Adjoints of the tangent
    /// seeds are not tracked (seeds are constants for every caller here).
    pub fn backward(
        &self,
        cache: &MlpCache<S>,
        tangent_adjoints: &[(&MlpJvpCache<S>, &Array2<S>)],
        dout: Option<&Array2<S>>,
        grads: &mut MlpGrads<S>,
        want_dinput: bool,
    ) -> Option<Array2<S>> {
        let nh = self.spec.hidden.len();
        let act = self.spec.activation;
        let n = cache.input.dim().0;
        let kt = tangent_adjoints.len();

        // Adjoints flowing into each hidden layer's activation output / tangent.
        let mut hbar: Option<Array2<S>>;
        let mut ubars: Vec<Option<Array2<S>>> = vec![None; kt];
        let mut xbar: Option<Array2<S>> = if want_dinput {
            Some(Array2::zeros((n, self.spec.in_dim)))
        } else {
            None
        };

        if self.has_head() {
            let wh = &self.weights[nh];
            let mut head_in_bar: Option<Array2<S>> = None;
            if let Some(dout) = dout {
                let a = if nh == 0 {
                    std::borrow::Cow::Borrowed(&cache.input)
                } else {
                    std::borrow::Cow::Borrowed(&cache.hs[nh - 1])
                };
                grads.weights[nh] = &grads.weights[nh] + &dout.t().dot(&*a);
                grads.biases[nh] = &grads.biases[nh] + &dout.sum_axis(Axis(0));
                head_in_bar = Some(dout.dot(wh));
            }
            for (k, (jvp, dm)) in tangent_adjoints.iter().enumerate() {
                let adot = if nh == 0 { &jvp.xdot } else { &jvp.us[nh - 1] };
                grads.weights[nh] = &grads.weights[nh] + &dm.t().dot(adot);
                ubars[k] = Some(dm.dot(wh));
            }
            if nh == 0 {
                // Pure linear layer: propagate straight to the input.
                return match (want_dinput, head_in_bar) {
                    (true, Some(b)) => Some(b),
                    (true, None) => xbar,
                    _ => None,
                };
            }
            hbar = head_in_bar;
        } else {
            hbar = dout.cloned();
            for (k, (_, dm)) in tangent_adjoints.iter().enumerate() {
                ubars[k] = Some((*dm).clone());
            }
        }

        for l in (0..nh).rev() {
            let z = &cache.zs[l];
            // zbar = hbar * f'(z) + sum_k ubar_k * v_k * f''(z)
            let mut zbar = match &hbar {
                Some(hb) => {
                    let mut zb = hb.clone();
                    ndarray::Zip::from(&mut zb).and(z).for_each(|v, &zv| {
                        *v = *v * act.df(zv);
                    });
                    zb
                }
                None => Array2::zeros(z.dim()),
            };
            let mut vbars: Vec<Option<Array2<S>>> = vec![None; kt];
            for (k, (jvp, _)) in tangent_adjoints.iter().enumerate() {
                if let Some(ub) = &ubars[k] {
                    if act != Activation::Relu {
                        ndarray::Zip::from(&mut zbar)
                            .and(ub)
                            .and(&jvp.vs[l])
                            .and(z)
                            .for_each(|acc, &u, &v, &zv| {
                                *acc = *acc + u * v * act.ddf(zv);
                            });
                    }
                    let mut vb = ub.clone();
                    ndarray::Zip::from(&mut vb).and(z).for_each(|v, &zv| {
                        *v = *v * act.df(zv);
                    });
                    vbars[k] = Some(vb);
                }
            }

            let a = self.layer_input(l, &cache.input, &cache.hs);
            grads.weights[l] = &grads.weights[l] + &zbar.t().dot(&*a);
            grads.biases[l] = &grads.biases[l] + &zbar.sum_axis(Axis(0));
            for (k, (jvp, _)) in tangent_adjoints.iter().enumerate() {
                if let Some(vb) = &vbars[k] {
                    let adot = if l == 0 {
                        std::borrow::Cow::Borrowed(&jvp.xdot)
                    } else if self.spec.skip_at == Some(l) {
                        std::borrow::Cow::Owned(concat_cols(&jvp.us[l - 1], &jvp.xdot))
                    } else {
                        std::borrow::Cow::Borrowed(&jvp.us[l - 1])
                    };
                    grads.weights[l] = &grads.weights[l] + &vb.t().dot(&*adot);
                }
            }

            // Propagate to the previous layer (and the input on skip/first layers).
            let abar = zbar.dot(&self.weights[l]);
            let prev_width = if l == 0 { 0 } else { self.spec.hidden[l - 1] };
            if l == 0 {
                if let Some(xb) = &mut xbar {
                    *xb += &abar;
                }
                hbar = None;
            } else if self.spec.skip_at == Some(l) {
                let (hpart, xpart) = split_cols(&abar, prev_width);
                if let Some(xb) = &mut xbar {
                    *xb += &xpart;
                }
                hbar = Some(hpart);
            } else {
                hbar = Some(abar);
            }
            for k in 0..kt {
                let next = match &vbars[k] {
                    Some(vb) => {
                        let abar_k = vb.dot(&self.weights[l]);
                        if l == 0 {
                            None
                        } else if self.spec.skip_at == Some(l) {
                            Some(split_cols(&abar_k, prev_width).0)
                        } else {
                            Some(abar_k)
                        }
                    }
                    None => None,
                };
                ubars[k] = next;
            }
        }
        xbar
    }

    /// Applies `f` to every parameter slice, pairing positionally with grads.
    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut [S])) {
        for w in &mut self.weights {
            f(w.as_slice_mut().unwrap());
        }
        for b in &mut self.biases {
            f(b.as_slice_mut().unwrap());
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }
}

impl<S: Real> MlpGrads<S> {
    pub fn visit(&self, f: &mut dyn FnMut(&[S])) {
        for w in &self.weights {
            f(w.as_slice().unwrap());
        }
        for b in &self.biases {
            f(b.as_slice().unwrap());
        }
    }

    pub fn scale(&mut self, factor: S) {
        for w in &mut self.weights {
            w.mapv_inplace(|v| v * factor);
        }
        for b in &mut self.biases {
            b.mapv_inplace(|v| v * factor);
        }
    }
}

fn affine<S: Real>(a: &Array2<S>, w: &Array2<S>, b: &Array1<S>) -> Array2<S> {
    let mut z = a.dot(&w.t());
    z += b;
    z
}

fn concat_cols<S: Real>(a: &Array2<S>, b: &Array2<S>) -> Array2<S> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("row counts match")
}

fn split_cols<S: Real>(a: &Array2<S>, left: usize) -> (Array2<S>, Array2<S>) {
    let (l, r) = a.view().split_at(Axis(1), left);
    (l.to_owned(), r.to_owned())
}
