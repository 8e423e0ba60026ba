//! Differentiable volume rendering.
//!
//! Per-sample radiance is composited front-to-back with the standard
//! transmittance quadrature: `alpha_k = 1 - exp(-tau_k delta_k)`,
//! `T_k = prod_{j<k} (1 - alpha_j)`, `w_k = T_k alpha_k`. Expected depth is
//! the weight-averaged sample distance, normalized by the accumulation with
//! a small floor so empty rays stay finite.

use crate::error::{Error, Result};
use crate::fields::CanonicalField;
use crate::num::{rl, Real};
use crate::se3::{warp_point_generic, ScrewField, WarpOptions};
use ndarray::{Array1, Array2};

/// Accumulation floor in the expected-depth normalization.
pub const ACC_EPS: f64 = 1e-10;

/// Composited per-ray quantities.
#[derive(Clone, Debug)]
pub struct RadianceOutput<S> {
    pub color: [S; 3],
    pub depth: S,
    pub weights: Vec<S>,
    pub acc: S,
}

/// Composites per-sample colors and densities along one ray.
///
/// `s_values` must be strictly increasing; the last interval extends to
/// `far`. Differentiable in colors and densities (see
/// [`composite_backward`]).
pub fn composite<S: Real>(
    colors: &[[S; 3]],
    densities: &[S],
    s_values: &[S],
    far: S,
) -> Result<RadianceOutput<S>> {
    let n = s_values.len();
    if n == 0 {
        return Err(Error::invalid("empty sample list"));
    }
    if colors.len() != n || densities.len() != n {
        return Err(Error::invalid("colors/densities/s_values length mismatch"));
    }
    for k in 1..n {
        if !(s_values[k] > s_values[k - 1]) {
            return Err(Error::invalid(format!(
                "s_values not strictly increasing at index {k}"
            )));
        }
    }
    debug_assert!(densities.iter().all(|t| *t >= S::zero()));

    let mut weights = Vec::with_capacity(n);
    let mut transmittance = S::one();
    let mut color = [S::zero(); 3];
    let mut depth_num = S::zero();
    let mut acc = S::zero();
    for k in 0..n {
        let delta = if k + 1 < n {
            s_values[k + 1] - s_values[k]
        } else {
            (far - s_values[k]).max(S::zero())
        };
        let alpha = S::one() - (-densities[k] * delta).exp();
        let w = transmittance * alpha;
        for c in 0..3 {
            color[c] += w * colors[k][c];
        }
        depth_num += w * s_values[k];
        acc += w;
        weights.push(w);
        transmittance *= S::one() - alpha;
    }
    let depth = depth_num / acc.max(rl(ACC_EPS));
    Ok(RadianceOutput {
        color,
        depth,
        weights,
        acc,
    })
}

/// Reverse pass of [`composite`]: adjoints of the per-sample colors and
/// densities given adjoints of the composited color and depth.
///
/// The density gradient uses the singularity-free form
/// `dL/dtau_k = delta_k (wbar_k T_k (1 - alpha_k) - G_k)` with
/// `G_k = sum_{j>k} wbar_j w_j`.
pub fn composite_backward<S: Real>(
    colors: &[[S; 3]],
    s_values: &[S],
    far: S,
    out: &RadianceOutput<S>,
    color_bar: &[S; 3],
    depth_bar: S,
) -> (Vec<[S; 3]>, Vec<S>) {
    let n = s_values.len();
    let acc_eps: S = rl(ACC_EPS);
    let a_eff = out.acc.max(acc_eps);
    let acc_active = out.acc > acc_eps;

    // Depth = (sum w_k s_k) / a_eff.
    let depth_num = out.depth * a_eff;

    // wbar_k = <color_bar, c_k> + depth_bar * d(depth)/d(w_k)
    let mut wbar = vec![S::zero(); n];
    for k in 0..n {
        let mut v = S::zero();
        for c in 0..3 {
            v += color_bar[c] * colors[k][c];
        }
        let mut ddepth = s_values[k] / a_eff;
        if acc_active {
            ddepth -= depth_num / (a_eff * a_eff);
        }
        wbar[k] = v + depth_bar * ddepth;
    }

    let mut color_bars = vec![[S::zero(); 3]; n];
    for k in 0..n {
        for c in 0..3 {
            color_bars[k][c] = out.weights[k] * color_bar[c];
        }
    }

    // Reconstruct T_k and alpha_k from the weights, then run the suffix sum.
    let mut tau_bars = vec![S::zero(); n];
    let mut suffix = S::zero(); // G_k
    let mut transmittances = vec![S::zero(); n];
    let mut trans = S::one();
    for k in 0..n {
        transmittances[k] = trans;
        let alpha = if trans > S::zero() {
            out.weights[k] / trans
        } else {
            S::zero()
        };
        trans *= S::one() - alpha;
    }
    for k in (0..n).rev() {
        let delta = if k + 1 < n {
            s_values[k + 1] - s_values[k]
        } else {
            (far - s_values[k]).max(S::zero())
        };
        let t_k = transmittances[k];
        let alpha = if t_k > S::zero() {
            out.weights[k] / t_k
        } else {
            S::zero()
        };
        tau_bars[k] = delta * (wbar[k] * t_k * (S::one() - alpha) - suffix);
        suffix += wbar[k] * out.weights[k];
    }
    (color_bars, tau_bars)
}

/// Source of per-point radiance for rendering: the canonical field during
/// training and evaluation, or an analytic scene in tests and oracles.
pub trait RadianceSource<S: Real> {
    /// Batched query: positions `(N, 3)`, unit directions `(N, 3)` ->
    /// colors `(N, 3)` in `[0, 1]` and nonnegative densities `(N,)`.
    fn radiance_batch(&self, x: &Array2<S>, dirs: &Array2<S>) -> (Array2<S>, Array1<S>);
}

impl<S: Real> RadianceSource<S> for CanonicalField<S> {
    fn radiance_batch(&self, x: &Array2<S>, dirs: &Array2<S>) -> (Array2<S>, Array1<S>) {
        let eval = self.eval(x, dirs);
        (eval.color_rgb, eval.density_tau)
    }
}

/// Per-ray rendering result carrying the warped sample positions, which the
/// temporal regularizer reuses.
pub struct RayRender<S> {
    pub output: RadianceOutput<S>,
    pub warped: Array2<S>,
}

/// Renders one ray through the deformation and radiance fields.
///
/// Every sample `x_k = o + s_k d` is warped into canonical space by the
/// screw emitted at `(x_k, t)`, the radiance source is queried at the
/// warped point with the ray direction, and the samples are composited.
pub fn render_ray<S: Real, F: ScrewField<S>, R: RadianceSource<S>>(
    origin: [S; 3],
    dir: [S; 3],
    t: S,
    s_values: &[S],
    far: S,
    deformation: &F,
    radiance: &R,
    warp_opts: WarpOptions,
) -> Result<RayRender<S>> {
    let n = s_values.len();
    let mut warped = Array2::<S>::zeros((n, 3));
    for (k, &s) in s_values.iter().enumerate() {
        let x = [
            origin[0] + s * dir[0],
            origin[1] + s * dir[1],
            origin[2] + s * dir[2],
        ];
        let screw = deformation.screw(x, t);
        let xp = warp_point_generic(&screw.a, &screw.b, &x, warp_opts.unnormalized_translation);
        for c in 0..3 {
            warped[(k, c)] = xp[c];
        }
    }
    let mut dirs = Array2::<S>::zeros((n, 3));
    for k in 0..n {
        for c in 0..3 {
            dirs[(k, c)] = dir[c];
        }
    }
    let (colors, densities) = radiance.radiance_batch(&warped, &dirs);
    let color_rows: Vec<[S; 3]> = (0..n)
        .map(|k| [colors[(k, 0)], colors[(k, 1)], colors[(k, 2)]])
        .collect();
    let density_vec: Vec<S> = densities.to_vec();
    let output = composite(&color_rows, &density_vec, s_values, far)?;
    Ok(RayRender { output, warped })
}
