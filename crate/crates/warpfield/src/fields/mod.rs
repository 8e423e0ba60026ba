//! The two trainable neural fields.
//!
//! [`DeformationField`] maps an encoded space-time query to a screw axis;
//! [`CanonicalField`] maps an encoded canonical-space point plus viewing
//! direction to color and density. Both normalize query positions into the
//! scene box before encoding.

pub mod encoding;
pub mod mlp;

use crate::error::{Error, Result};
use crate::num::{rl, Real};
use crate::se3::{ScrewAxis, ScrewField};
use encoding::PositionalEncoding;
use mlp::{sigmoid, softplus, Activation, Mlp, MlpCache, MlpGrads, MlpJvpCache, MlpSpec};
use ndarray::{Array1, Array2, Axis};

/// Axis-aligned box used to normalize world positions into `[-1, 1]^3`
/// before positional encoding.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SceneBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl SceneBox {
    /// Box spanning the pinhole frustum between the near and far planes.
    pub fn from_frustum(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> Self {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for z in [near, far] {
            for u in [0.0, width as f64] {
                for v in [0.0, height as f64] {
                    let x = (u - cx) / fx * z;
                    let y = (v - cy) / fy * z;
                    min[0] = min[0].min(x);
                    max[0] = max[0].max(x);
                    min[1] = min[1].min(y);
                    max[1] = max[1].max(y);
                }
            }
        }
        min[2] = near;
        max[2] = far;
        SceneBox { min, max }
    }

    /// Per-axis scale of the normalization map.
    pub fn scale(&self) -> [f64; 3] {
        let mut s = [0.0; 3];
        for i in 0..3 {
            s[i] = 2.0 / (self.max[i] - self.min[i]);
        }
        s
    }

    /// Normalizes a batch of world positions into the box frame.
    pub fn normalize<S: Real>(&self, x: &Array2<S>) -> Array2<S> {
        let s = self.scale();
        let mut out = x.clone();
        for i in 0..3 {
            let sc: S = rl(s[i]);
            let mn: S = rl(self.min[i]);
            for v in out.column_mut(i) {
                *v = (*v - mn) * sc - S::one();
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Deformation field
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DeformationConfig {
    pub depth: usize,
    pub width: usize,
    pub skip_at: Option<usize>,
    pub l_pos: usize,
    pub l_time: usize,
    pub activation: Activation,
    pub head_init_scale: f64,
}

impl Default for DeformationConfig {
    fn default() -> Self {
        DeformationConfig {
            depth: 8,
            width: 128,
            skip_at: Some(4),
            l_pos: 10,
            l_time: 6,
            activation: Activation::Relu,
            // Near-zero head so training starts from the identity warp.
            head_init_scale: 1e-6,
        }
    }
}

/// Time-conditioned field emitting per-point screw axes.
#[derive(Clone, Debug)]
pub struct DeformationField<S> {
    pub config: DeformationConfig,
    pub scene_box: SceneBox,
    pub enc_x: PositionalEncoding,
    pub enc_t: PositionalEncoding,
    pub mlp: Mlp<S>,
}

/// Forward intermediates of a batched deformation evaluation.
pub struct DeformEval<S> {
    pub enc_x: Array2<S>,
    pub cache: MlpCache<S>,
}

impl<S> DeformEval<S> {
    pub fn screws(&self) -> &Array2<S> {
        &self.cache.out
    }
}

impl<S: Real> DeformationField<S> {
    pub fn init(config: DeformationConfig, scene_box: SceneBox, seed: u64) -> Self {
        let enc_x = PositionalEncoding::new(config.l_pos, true);
        let enc_t = PositionalEncoding::new(config.l_time, true);
        let spec = MlpSpec {
            in_dim: enc_x.out_dim(3) + enc_t.out_dim(1),
            hidden: vec![config.width; config.depth],
            head_dim: Some(6),
            skip_at: config.skip_at,
            activation: config.activation,
            head_init_scale: config.head_init_scale,
        };
        DeformationField {
            mlp: Mlp::init(spec, seed),
            enc_x,
            enc_t,
            config,
            scene_box,
        }
    }

    /// Batched evaluation at a shared time `t`. Positions are world-frame.
    pub fn eval(&self, x_world: &Array2<S>, t: S) -> DeformEval<S> {
        let n = x_world.dim().0;
        let enc_x = self.enc_x.encode(&self.scene_box.normalize(x_world));
        let enc_t = self.enc_t.encode_broadcast(&[t], n);
        let input = ndarray::concatenate(Axis(1), &[enc_x.view(), enc_t.view()]).unwrap();
        let cache = self.mlp.forward(&input);
        DeformEval { enc_x, cache }
    }

    /// Evaluation plus the three tangent passes needed for the spatial
    /// Jacobian `M[m][j] = d screw_m / d x_j` (world frame).
    pub fn eval_with_jacobian(
        &self,
        x_world: &Array2<S>,
        t: S,
    ) -> (DeformEval<S>, [MlpJvpCache<S>; 3]) {
        let eval = self.eval(x_world, t);
        let n = x_world.dim().0;
        let scale = self.scene_box.scale();
        let enc_dim = self.enc_x.out_dim(3);
        let t_dim = self.enc_t.out_dim(1);
        let jvps: [MlpJvpCache<S>; 3] = std::array::from_fn(|j| {
            let mut xdot = Array2::<S>::zeros((n, 3));
            let sj: S = rl(scale[j]);
            for v in xdot.column_mut(j) {
                *v = sj;
            }
            let enc_dot = self.enc_x.tangent(&eval.enc_x, &xdot);
            let mut full = Array2::<S>::zeros((n, enc_dim + t_dim));
            full.slice_mut(ndarray::s![.., ..enc_dim]).assign(&enc_dot);
            self.mlp.jvp(&eval.cache, &full)
        });
        (eval, jvps)
    }

    /// Reverse pass: adjoints of the screws and (optionally) of the spatial
    /// Jacobian columns accumulate into `grads`.
    pub fn backward(
        &self,
        eval: &DeformEval<S>,
        jvps: Option<&[MlpJvpCache<S>; 3]>,
        screw_bar: Option<&Array2<S>>,
        m_bars: Option<&[Array2<S>; 3]>,
        grads: &mut MlpGrads<S>,
    ) {
        let pairs: Vec<(&MlpJvpCache<S>, &Array2<S>)> = match (jvps, m_bars) {
            (Some(j), Some(m)) => j.iter().zip(m.iter()).collect(),
            _ => Vec::new(),
        };
        self.mlp.backward(&eval.cache, &pairs, screw_bar, grads, false);
    }

    /// Single-point evaluation (the public spec operation).
    pub fn deform(&self, x: [S; 3], t: S) -> Result<ScrewAxis<S>> {
        if !(t >= S::zero() && t <= S::one()) {
            return Err(Error::invalid(format!("time {t} outside [0, 1]")));
        }
        let xr = Array2::from_shape_vec((1, 3), x.to_vec()).unwrap();
        let eval = self.eval(&xr, t);
        let s = eval.screws();
        Ok(ScrewAxis::new(
            [s[(0, 0)], s[(0, 1)], s[(0, 2)]],
            [s[(0, 3)], s[(0, 4)], s[(0, 5)]],
        ))
    }
}

impl<S: Real> ScrewField<S> for DeformationField<S> {
    fn screw(&self, x: [S; 3], t: S) -> ScrewAxis<S> {
        let xr = Array2::from_shape_vec((1, 3), x.to_vec()).unwrap();
        let eval = self.eval(&xr, t);
        let s = eval.screws();
        ScrewAxis::new(
            [s[(0, 0)], s[(0, 1)], s[(0, 2)]],
            [s[(0, 3)], s[(0, 4)], s[(0, 5)]],
        )
    }

    fn screw_with_spatial_jacobian(&self, x: [S; 3], t: S) -> (ScrewAxis<S>, [[S; 3]; 6]) {
        let xr = Array2::from_shape_vec((1, 3), x.to_vec()).unwrap();
        let (eval, jvps) = self.eval_with_jacobian(&xr, t);
        let s = eval.screws();
        let mut m = [[S::zero(); 3]; 6];
        for (j, jvp) in jvps.iter().enumerate() {
            for row in 0..6 {
                m[row][j] = jvp.out_dot[(0, row)];
            }
        }
        (
            ScrewAxis::new(
                [s[(0, 0)], s[(0, 1)], s[(0, 2)]],
                [s[(0, 3)], s[(0, 4)], s[(0, 5)]],
            ),
            m,
        )
    }
}

// ---------------------------------------------------------------------------
// Canonical radiance field
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CanonicalConfig {
    pub depth: usize,
    pub width: usize,
    pub skip_at: Option<usize>,
    pub color_width: usize,
    pub l_pos: usize,
    pub l_dir: usize,
    pub activation: Activation,
}

impl Default for CanonicalConfig {
    fn default() -> Self {
        CanonicalConfig {
            depth: 8,
            width: 256,
            skip_at: Some(4),
            color_width: 128,
            l_pos: 10,
            l_dir: 4,
            activation: Activation::Relu,
        }
    }
}

/// Canonical-space radiance field: color squashed by a sigmoid, density by
/// a softplus. The viewing direction enters only the color branch, so
/// density is view-independent by construction.
#[derive(Clone, Debug)]
pub struct CanonicalField<S> {
    pub config: CanonicalConfig,
    pub scene_box: SceneBox,
    pub enc_x: PositionalEncoding,
    pub enc_d: PositionalEncoding,
    pub trunk: Mlp<S>,
    pub density_head: Mlp<S>,
    pub color_branch: Mlp<S>,
}

pub struct CanonEval<S> {
    pub enc_x: Array2<S>,
    trunk: MlpCache<S>,
    density: MlpCache<S>,
    color: MlpCache<S>,
    /// RGB in [0, 1], shape (N, 3).
    pub color_rgb: Array2<S>,
    /// Nonnegative densities, shape (N,).
    pub density_tau: Array1<S>,
}

#[derive(Clone, Debug)]
pub struct CanonicalGrads<S> {
    pub trunk: MlpGrads<S>,
    pub density: MlpGrads<S>,
    pub color: MlpGrads<S>,
}

impl<S: Real> CanonicalGrads<S> {
    pub fn zeros_of(field: &CanonicalField<S>) -> Self {
        CanonicalGrads {
            trunk: MlpGrads::zeros_of(&field.trunk),
            density: MlpGrads::zeros_of(&field.density_head),
            color: MlpGrads::zeros_of(&field.color_branch),
        }
    }

    pub fn add_assign(&mut self, other: &CanonicalGrads<S>) {
        self.trunk.add_assign(&other.trunk);
        self.density.add_assign(&other.density);
        self.color.add_assign(&other.color);
    }
}

impl<S: Real> CanonicalField<S> {
    pub fn init(config: CanonicalConfig, scene_box: SceneBox, seed: u64) -> Self {
        let enc_x = PositionalEncoding::new(config.l_pos, true);
        let enc_d = PositionalEncoding::new(config.l_dir, true);
        let trunk = Mlp::init(
            MlpSpec {
                in_dim: enc_x.out_dim(3),
                hidden: vec![config.width; config.depth],
                head_dim: None,
                skip_at: config.skip_at,
                activation: config.activation,
                head_init_scale: 1.0,
            },
            seed,
        );
        let density_head = Mlp::init(
            MlpSpec {
                in_dim: config.width,
                hidden: vec![],
                head_dim: Some(1),
                skip_at: None,
                activation: config.activation,
                head_init_scale: 1.0,
            },
            seed.wrapping_add(1),
        );
        let color_branch = Mlp::init(
            MlpSpec {
                in_dim: config.width + enc_d.out_dim(3),
                hidden: vec![config.color_width],
                head_dim: Some(3),
                skip_at: None,
                activation: config.activation,
                head_init_scale: 1.0,
            },
            seed.wrapping_add(2),
        );
        CanonicalField {
            config,
            scene_box,
            enc_x,
            enc_d,
            trunk,
            density_head,
            color_branch,
        }
    }

    /// Batched evaluation at canonical-space positions and unit directions.
    pub fn eval(&self, x_canonical: &Array2<S>, dirs: &Array2<S>) -> CanonEval<S> {
        let enc_x = self.enc_x.encode(&self.scene_box.normalize(x_canonical));
        let enc_d = self.enc_d.encode(dirs);
        let trunk = self.trunk.forward(&enc_x);
        let density = self.density_head.forward(&trunk.out);
        let color_in = ndarray::concatenate(Axis(1), &[trunk.out.view(), enc_d.view()]).unwrap();
        let color = self.color_branch.forward(&color_in);
        let color_rgb = color.out.mapv(sigmoid);
        let density_tau = density.out.column(0).mapv(softplus);
        CanonEval {
            enc_x,
            trunk,
            density,
            color,
            color_rgb,
            density_tau,
        }
    }

    /// Reverse pass. Returns the adjoint of the canonical positions
    /// (world-frame chain rule included).
    pub fn backward(
        &self,
        eval: &CanonEval<S>,
        color_bar: &Array2<S>,
        tau_bar: &Array1<S>,
        grads: &mut CanonicalGrads<S>,
    ) -> Array2<S> {
        // Color head: c = sigmoid(raw), dc/draw = c (1 - c).
        let mut color_raw_bar = color_bar.clone();
        ndarray::Zip::from(&mut color_raw_bar)
            .and(&eval.color_rgb)
            .for_each(|v, &c| {
                *v = *v * c * (S::one() - c);
            });
        let color_in_bar = self
            .color_branch
            .backward(&eval.color, &[], Some(&color_raw_bar), &mut grads.color, true)
            .expect("color branch input adjoint");
        let width = self.config.width;
        let trunk_bar_color = color_in_bar.slice(ndarray::s![.., ..width]).to_owned();

        // Density head: tau = softplus(raw), dtau/draw = sigmoid(raw).
        let mut density_raw_bar = Array2::<S>::zeros(eval.density.out.dim());
        ndarray::Zip::from(density_raw_bar.column_mut(0))
            .and(&eval.density.out.column(0))
            .and(tau_bar)
            .for_each(|v, &raw, &tb| {
                *v = tb * sigmoid(raw);
            });
        let trunk_bar_density = self
            .density_head
            .backward(&eval.density, &[], Some(&density_raw_bar), &mut grads.density, true)
            .expect("density head input adjoint");

        let trunk_bar = &trunk_bar_color + &trunk_bar_density;
        let enc_bar = self
            .trunk
            .backward(&eval.trunk, &[], Some(&trunk_bar), &mut grads.trunk, true)
            .expect("trunk input adjoint");
        let mut xbar = self.enc_x.backward(&eval.enc_x, &enc_bar);
        let scale = self.scene_box.scale();
        for j in 0..3 {
            let sj: S = rl(scale[j]);
            for v in xbar.column_mut(j) {
                *v *= sj;
            }
        }
        xbar
    }

    /// Single-point radiance query (the public spec operation).
    pub fn radiance(&self, x_canonical: [S; 3], d: [S; 3]) -> ([S; 3], S) {
        let xr = Array2::from_shape_vec((1, 3), x_canonical.to_vec()).unwrap();
        let dr = Array2::from_shape_vec((1, 3), d.to_vec()).unwrap();
        let eval = self.eval(&xr, &dr);
        (
            [
                eval.color_rgb[(0, 0)],
                eval.color_rgb[(0, 1)],
                eval.color_rgb[(0, 2)],
            ],
            eval.density_tau[0],
        )
    }
}
