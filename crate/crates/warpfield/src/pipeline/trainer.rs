//! The training loop: batch assembly, the differentiable forward/backward
//! step over both fields, scheduling, logging and checkpointing.
//!
//! A step processes one frame's patch batch. Work is partitioned into
//! fixed-size chunks of whole patches; chunks are independent and their
//! gradient contributions are reduced in chunk order, so parallel and
//! serial execution produce bitwise-identical results. `DETERMINISTIC=1`
//! forces serial chunk processing.

use crate::error::{Error, Result};
use crate::fields::{CanonicalConfig, DeformationConfig, SceneBox};
use crate::num::{rl, Real};
use crate::objective::{
    loss_color, loss_color_backward, loss_depth, loss_depth_backward, loss_grad,
    loss_grad_backward, loss_smooth, loss_smooth_backward, total_loss, tv_pair_with_grad,
    jacobian_penalty_with_grad, LossReport, LossTerms, LossWeights,
};
use crate::render::{composite, composite_backward};
use crate::sampling::{
    gen_ray, sample_depth_guided_rng, sample_patches, PinholeCamera, SampleBatch,
};
use crate::se3::{
    rotation_from_axis_generic, spatial_jacobian_from_parts, warp_screw_grad,
    warp_second_order_contraction, WarpOptions,
};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

use super::checkpoint::{checkpoint_load, checkpoint_save, CheckpointMeta, ScalarKind};
use super::dataset::{ingest, normalize_depth, FrameRecord};
use super::model::{Adam, Model, ModelGrads};

/// Patches per work chunk; fixed so the reduction order never depends on
/// the thread count.
const CHUNK_PATCHES: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub rays_per_batch: usize,
    pub patch_size: usize,
    pub samples_per_ray: usize,
    /// Fraction of per-ray samples drawn around the depth prior.
    pub surface_sample_ratio: f64,
    pub learning_rate: f64,
    pub lr_final: f64,
    /// Gaussian sampling width as a fraction of (far - near), annealed
    /// exponentially from start to final over the run.
    pub sigma_start_frac: f64,
    pub sigma_final_frac: f64,
    pub weights: LossWeights,
    /// Huber threshold as a fraction of (far - near).
    pub huber_delta_frac: f64,
    /// Geman-McClure scale of the elastic term.
    pub robust_scale: f64,
    pub warp: WarpOptions,
    pub deformation: DeformationConfig,
    pub canonical: CanonicalConfig,
    pub seed: u64,
    /// 0 disables periodic checkpoints (the final one is always written).
    pub checkpoint_every: usize,
    /// Hold out every k-th frame from training (evaluation protocol).
    pub holdout_every: Option<usize>,
    pub precision: ScalarKind,
    /// Uniform samples per ray in full-frame evaluation renders.
    pub eval_samples: usize,
    pub resume_from: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 50_000,
            rays_per_batch: 1024,
            patch_size: 4,
            samples_per_ray: 64,
            surface_sample_ratio: 0.75,
            learning_rate: 5e-4,
            lr_final: 5e-5,
            sigma_start_frac: 0.05,
            sigma_final_frac: 0.01,
            weights: LossWeights::default(),
            huber_delta_frac: 0.2,
            robust_scale: 0.03,
            warp: WarpOptions::default(),
            deformation: DeformationConfig::default(),
            canonical: CanonicalConfig::default(),
            seed: 0,
            checkpoint_every: 10_000,
            holdout_every: None,
            precision: ScalarKind::F32,
            eval_samples: 192,
            resume_from: None,
        }
    }
}

impl TrainConfig {
    pub fn n_patches(&self) -> usize {
        self.rays_per_batch / (self.patch_size * self.patch_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 3 {
            return Err(Error::invalid("patch_size must be at least 3"));
        }
        if self.n_patches() == 0 {
            return Err(Error::invalid("rays_per_batch smaller than one patch"));
        }
        if self.samples_per_ray < 2 {
            return Err(Error::invalid("need at least two samples per ray"));
        }
        if !(self.surface_sample_ratio >= 0.0 && self.surface_sample_ratio <= 1.0) {
            return Err(Error::invalid("surface_sample_ratio must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Ingested dataset with normalized depth and the train/holdout split.
pub struct PreparedDataset {
    pub records: Vec<FrameRecord>,
    pub camera: PinholeCamera,
    pub train_frames: Vec<usize>,
    pub holdout_frames: Vec<usize>,
}

pub fn prepare_dataset(dataset_dir: &Path, holdout_every: Option<usize>) -> Result<PreparedDataset> {
    let (mut records, camera) = ingest(dataset_dir)?;
    normalize_depth(&mut records, camera.near, camera.far)?;
    let mut train_frames = Vec::new();
    let mut holdout_frames = Vec::new();
    for i in 0..records.len() {
        match holdout_every {
            Some(k) if k > 0 && i % k == 0 => holdout_frames.push(i),
            _ => train_frames.push(i),
        }
    }
    if train_frames.is_empty() {
        return Err(Error::invalid("holdout leaves no training frames"));
    }
    Ok(PreparedDataset {
        records,
        camera,
        train_frames,
        holdout_frames,
    })
}

/// Assembles one patch-structured batch from a frame.
pub fn assemble_batch<S>(
    camera: &PinholeCamera,
    frame: &FrameRecord,
    patch: usize,
    n_patches: usize,
    n_samples: usize,
    surface_ratio: f64,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SampleBatch<S>>
where
    S: Real,
    StandardNormal: Distribution<S>,
{
    let corners = sample_patches(&frame.mask, patch, n_patches, rng.gen())?;
    let n_rays = n_patches * patch * patch;
    let n_surface = ((n_samples as f64 * surface_ratio).round() as usize).min(n_samples);
    let n_uniform = n_samples - n_surface;
    let t: S = rl(frame.t);

    let mut rays = Vec::with_capacity(n_rays);
    let mut s_values = Array2::<S>::zeros((n_rays, n_samples));
    let mut gt_color = Array2::<S>::zeros((n_rays, 3));
    let mut gt_depth = Vec::with_capacity(n_rays);
    let mut mask_weight = Vec::with_capacity(n_rays);
    let mut laplacian = Vec::with_capacity(n_rays);

    let near: S = rl(camera.near);
    let far: S = rl(camera.far);
    let sigma_s: S = rl(sigma);
    let mut ray_idx = 0usize;
    for &(r0, c0) in &corners {
        for dr in 0..patch {
            for dc in 0..patch {
                let (r, c) = (r0 + dr, c0 + dc);
                let ray = gen_ray(camera, r, c, t)?;
                let prior: S = rl(frame.depth[(r, c)] as f64);
                let svals = sample_depth_guided_rng(
                    prior, sigma_s, n_surface, n_uniform, near, far, rng,
                )?;
                for (k, v) in svals.iter().enumerate() {
                    s_values[(ray_idx, k)] = *v;
                }
                for ch in 0..3 {
                    gt_color[(ray_idx, ch)] = rl(frame.image[(r, c, ch)] as f64);
                }
                gt_depth.push(prior);
                mask_weight.push(S::one());
                laplacian.push(rl(frame.laplacian[(r, c)] as f64));
                rays.push(ray);
                ray_idx += 1;
            }
        }
    }
    Ok(SampleBatch {
        patch_size: patch,
        patches: corners,
        rays,
        s_values,
        gt_color,
        gt_depth,
        mask_weight,
        laplacian,
        t,
    })
}

/// Per-step constants shared by every chunk.
#[derive(Clone, Copy)]
pub struct StepParams {
    pub weights: LossWeights,
    pub huber_delta: f64,
    pub robust_scale: f64,
    pub warp: WarpOptions,
    /// Frame spacing 1 / frame_count; the temporal term compares t +- dt.
    pub dt: f64,
    pub far: f64,
}

struct ChunkResult<S> {
    grads: ModelGrads<S>,
    terms: LossTerms,
}

/// Forward and backward over one batch. Returns the (unweighted) loss terms
/// and the parameter gradients of the weighted total.
pub fn train_step<S: Real>(
    model: &Model<S>,
    batch: &SampleBatch<S>,
    params: &StepParams,
    parallel: bool,
) -> Result<(LossTerms, ModelGrads<S>)> {
    let p = batch.patch_size;
    let rays_per_patch = p * p;
    let n_patches = batch.patches.len();
    let n_rays_total = batch.n_rays();
    let n_samples_total = n_rays_total * batch.n_samples();

    let chunk_ranges: Vec<(usize, usize)> = (0..n_patches)
        .step_by(CHUNK_PATCHES)
        .map(|start| (start, (start + CHUNK_PATCHES).min(n_patches)))
        .collect();

    let norm = Normalizers {
        n_rays_total,
        n_patches_total: n_patches,
        n_samples_total,
        rays_per_patch,
    };

    let results: Vec<Result<ChunkResult<S>>> = if parallel {
        chunk_ranges
            .par_iter()
            .map(|&(a, b)| step_chunk(model, batch, a, b, params, &norm))
            .collect()
    } else {
        chunk_ranges
            .iter()
            .map(|&(a, b)| step_chunk(model, batch, a, b, params, &norm))
            .collect()
    };

    let mut grads = ModelGrads::zeros_of(model);
    let mut terms = LossTerms::default();
    for res in results {
        let chunk = res?;
        grads.add_assign(&chunk.grads);
        terms.color += chunk.terms.color;
        terms.depth += chunk.terms.depth;
        terms.jacobian += chunk.terms.jacobian;
        terms.grad += chunk.terms.grad;
        terms.smooth += chunk.terms.smooth;
        terms.tv += chunk.terms.tv;
    }
    Ok((terms, grads))
}

struct Normalizers {
    n_rays_total: usize,
    n_patches_total: usize,
    n_samples_total: usize,
    rays_per_patch: usize,
}

#[allow(clippy::too_many_lines)]
fn step_chunk<S: Real>(
    model: &Model<S>,
    batch: &SampleBatch<S>,
    patch_start: usize,
    patch_end: usize,
    params: &StepParams,
    norm: &Normalizers,
) -> Result<ChunkResult<S>> {
    let w = &params.weights;
    let p = batch.patch_size;
    let ray0 = patch_start * norm.rays_per_patch;
    let ray1 = patch_end * norm.rays_per_patch;
    let n_rays = ray1 - ray0;
    let ns = batch.n_samples();
    let n = n_rays * ns;
    let far: S = rl(params.far);
    let t = batch.t;
    let dt: S = rl(params.dt);

    // ---- sample positions and directions ----
    let mut positions = Array2::<S>::zeros((n, 3));
    let mut dirs = Array2::<S>::zeros((n, 3));
    for r in 0..n_rays {
        let ray = &batch.rays[ray0 + r];
        for k in 0..ns {
            let s = batch.s_values[(ray0 + r, k)];
            for c in 0..3 {
                positions[(r * ns + k, c)] = ray.origin[c] + s * ray.dir[c];
                dirs[(r * ns + k, c)] = ray.dir[c];
            }
        }
    }

    // ---- deformation forward (+ spatial Jacobian tangents if needed) ----
    let need_jac = w.lambda_jacobian != 0.0;
    let (deform_eval, jvps) = if need_jac {
        let (eval, jvps) = model.deformation.eval_with_jacobian(&positions, t);
        (eval, Some(jvps))
    } else {
        (model.deformation.eval(&positions, t), None)
    };

    // ---- warp each sample (value + screw gradient) ----
    let screws = deform_eval.screws().clone();
    let unnorm = params.warp.unnormalized_translation;
    let mut warped = Array2::<S>::zeros((n, 3));
    let mut screw_grads: Vec<[[S; 6]; 3]> = Vec::with_capacity(n);
    for i in 0..n {
        let a = [screws[(i, 0)], screws[(i, 1)], screws[(i, 2)]];
        let b = [screws[(i, 3)], screws[(i, 4)], screws[(i, 5)]];
        let x = [positions[(i, 0)], positions[(i, 1)], positions[(i, 2)]];
        let (xp, d) = warp_screw_grad(&a, &b, &x, unnorm);
        for c in 0..3 {
            warped[(i, c)] = xp[c];
        }
        screw_grads.push(d);
    }

    // ---- canonical field forward ----
    let canon_eval = model.canonical.eval(&warped, &dirs);

    // ---- composite per ray ----
    let mut pred_color = Array2::<S>::zeros((n_rays, 3));
    let mut pred_depth = vec![S::zero(); n_rays];
    let mut ray_outputs = Vec::with_capacity(n_rays);
    for r in 0..n_rays {
        let mut colors = Vec::with_capacity(ns);
        let mut dens = Vec::with_capacity(ns);
        let mut svals = Vec::with_capacity(ns);
        for k in 0..ns {
            let i = r * ns + k;
            colors.push([
                canon_eval.color_rgb[(i, 0)],
                canon_eval.color_rgb[(i, 1)],
                canon_eval.color_rgb[(i, 2)],
            ]);
            dens.push(canon_eval.density_tau[i]);
            svals.push(batch.s_values[(ray0 + r, k)]);
        }
        let out = composite(&colors, &dens, &svals, far)?;
        for c in 0..3 {
            pred_color[(r, c)] = out.color[c];
        }
        pred_depth[r] = out.depth;
        ray_outputs.push(out);
    }

    let gt_color = batch
        .gt_color
        .slice(ndarray::s![ray0..ray1, ..])
        .to_owned();
    let gt_depth = &batch.gt_depth[ray0..ray1];
    let mask = &batch.mask_weight[ray0..ray1];

    let mut terms = LossTerms::default();
    let chunk_ray_frac = n_rays as f64 / norm.n_rays_total as f64;

    // ---- data terms ----
    let l_color_chunk = loss_color(&pred_color, &gt_color, mask)?;
    terms.color = l_color_chunk.to64() * chunk_ray_frac;
    let cbar = loss_color_backward(&pred_color, &gt_color, mask, rl(chunk_ray_frac));

    let huber_delta: S = rl(params.huber_delta);
    let mut dbar = vec![S::zero(); n_rays];
    if w.lambda_depth != 0.0 {
        let l_depth_chunk = loss_depth(&pred_depth, gt_depth, mask, huber_delta)?;
        terms.depth = l_depth_chunk.to64() * chunk_ray_frac;
        let d = loss_depth_backward(
            &pred_depth,
            gt_depth,
            mask,
            huber_delta,
            rl(w.lambda_depth * chunk_ray_frac),
        );
        for (a, b) in dbar.iter_mut().zip(d) {
            *a += b;
        }
    }

    // ---- patch regularizers on the predicted depth ----
    let patch_upstream_grad: S = rl(w.lambda_grad / norm.n_patches_total as f64);
    let patch_upstream_smooth: S = rl(w.lambda_smooth / norm.n_patches_total as f64);
    for pi in 0..(patch_end - patch_start) {
        let base = pi * norm.rays_per_patch;
        let grid = Array2::from_shape_fn((p, p), |(r, c)| pred_depth[base + r * p + c]);
        let gt_grid = Array2::from_shape_fn((p, p), |(r, c)| gt_depth[base + r * p + c]);
        let mask_grid = Array2::from_shape_fn((p, p), |(r, c)| mask[base + r * p + c]);
        if w.lambda_grad != 0.0 {
            let v = loss_grad(&grid, &gt_grid, &mask_grid)?;
            terms.grad += v.to64() / norm.n_patches_total as f64;
            let g = loss_grad_backward(&grid, &gt_grid, &mask_grid, patch_upstream_grad);
            for r in 0..p {
                for c in 0..p {
                    dbar[base + r * p + c] += g[(r, c)];
                }
            }
        }
        if w.lambda_smooth != 0.0 {
            let lap_grid =
                Array2::from_shape_fn((p, p), |(r, c)| batch.laplacian[ray0 + base + r * p + c]);
            let v = loss_smooth(&grid, &lap_grid, &mask_grid)?;
            terms.smooth += v.to64() / norm.n_patches_total as f64;
            let g = loss_smooth_backward(&grid, &lap_grid, &mask_grid, patch_upstream_smooth);
            for r in 0..p {
                for c in 0..p {
                    dbar[base + r * p + c] += g[(r, c)];
                }
            }
        }
    }

    // ---- composite backward -> per-sample color/density adjoints ----
    let mut color_bar = Array2::<S>::zeros((n, 3));
    let mut tau_bar = Array1::<S>::zeros(n);
    for r in 0..n_rays {
        let mut colors = Vec::with_capacity(ns);
        let mut dens = Vec::with_capacity(ns);
        let mut svals = Vec::with_capacity(ns);
        for k in 0..ns {
            let i = r * ns + k;
            colors.push([
                canon_eval.color_rgb[(i, 0)],
                canon_eval.color_rgb[(i, 1)],
                canon_eval.color_rgb[(i, 2)],
            ]);
            dens.push(canon_eval.density_tau[i]);
            svals.push(batch.s_values[(ray0 + r, k)]);
        }
        let cb = [cbar[(r, 0)], cbar[(r, 1)], cbar[(r, 2)]];
        let (cbars, tbars) =
            composite_backward(&colors, &svals, far, &ray_outputs[r], &cb, dbar[r]);
        for k in 0..ns {
            let i = r * ns + k;
            for c in 0..3 {
                color_bar[(i, c)] = cbars[k][c];
            }
            tau_bar[i] = tbars[k];
        }
    }

    // ---- canonical backward -> warped-point adjoints ----
    let mut grads = ModelGrads::zeros_of(model);
    let mut warped_bar = model
        .canonical
        .backward(&canon_eval, &color_bar, &tau_bar, &mut grads.canonical);

    // ---- temporal term ----
    if w.lambda_tv != 0.0 {
        let has_prev = t.to64() - params.dt >= -1e-12;
        let has_next = t.to64() + params.dt <= 1.0 + 1e-12;
        let edge_scale = if has_prev && has_next { 1.0 } else { 0.5 };
        let pair_scale: S = rl(edge_scale * n as f64 / norm.n_samples_total as f64);
        for (present, time) in [(has_prev, t - dt), (has_next, t + dt)] {
            if !present {
                continue;
            }
            let eval_shift = model.deformation.eval(&positions, time);
            let screws_s = eval_shift.screws();
            let mut warped_s = Array2::<S>::zeros((n, 3));
            let mut sgrads_s: Vec<[[S; 6]; 3]> = Vec::with_capacity(n);
            for i in 0..n {
                let a = [screws_s[(i, 0)], screws_s[(i, 1)], screws_s[(i, 2)]];
                let b = [screws_s[(i, 3)], screws_s[(i, 4)], screws_s[(i, 5)]];
                let x = [positions[(i, 0)], positions[(i, 1)], positions[(i, 2)]];
                let (xp, d) = warp_screw_grad(&a, &b, &x, unnorm);
                for c in 0..3 {
                    warped_s[(i, c)] = xp[c];
                }
                sgrads_s.push(d);
            }
            let (value, d_center, d_shift) =
                tv_pair_with_grad(&warped, &warped_s, pair_scale, rl(w.lambda_tv));
            terms.tv += value.to64();
            warped_bar += &d_center;
            // shifted-point adjoints -> screw adjoints -> field gradients
            let mut sbar_s = Array2::<S>::zeros((n, 6));
            for i in 0..n {
                for m in 0..6 {
                    let mut acc = S::zero();
                    for c in 0..3 {
                        acc += sgrads_s[i][c][m] * d_shift[(i, c)];
                    }
                    sbar_s[(i, m)] = acc;
                }
            }
            model
                .deformation
                .backward(&eval_shift, None, Some(&sbar_s), None, &mut grads.deformation);
        }
    }

    // ---- screw adjoints from the warped-point adjoints ----
    let mut screw_bar = Array2::<S>::zeros((n, 6));
    for i in 0..n {
        for m in 0..6 {
            let mut acc = S::zero();
            for c in 0..3 {
                acc += screw_grads[i][c][m] * warped_bar[(i, c)];
            }
            screw_bar[(i, m)] = acc;
        }
    }

    // ---- elastic term: penalty on the spatial warp Jacobian ----
    let mut m_bars: Option<[Array2<S>; 3]> = None;
    if let Some(jvps) = &jvps {
        let c_scale: S = rl(params.robust_scale);
        let upstream: S = rl(w.lambda_jacobian / norm.n_samples_total as f64);
        let mut mb: [Array2<S>; 3] = std::array::from_fn(|_| Array2::zeros((n, 6)));
        for i in 0..n {
            let a = [screws[(i, 0)], screws[(i, 1)], screws[(i, 2)]];
            let b = [screws[(i, 3)], screws[(i, 4)], screws[(i, 5)]];
            let x = [positions[(i, 0)], positions[(i, 1)], positions[(i, 2)]];
            // field Jacobian M[m][j] = d screw_m / d x_j
            let mut m_mat = [[S::zero(); 3]; 6];
            for (j, jvp) in jvps.iter().enumerate() {
                for row in 0..6 {
                    m_mat[row][j] = jvp.out_dot[(i, row)];
                }
            }
            let rot = rotation_from_axis_generic(&a);
            let jac = spatial_jacobian_from_parts(&rot, &screw_grads[i], &m_mat);
            let (rho, drho_dj) = jacobian_penalty_with_grad(&jac, c_scale)?;
            terms.jacobian += rho.to64() / norm.n_samples_total as f64;

            // adjoint of J, with weight and normalization folded in
            let mut adj = [[S::zero(); 3]; 3];
            for r in 0..3 {
                for cc in 0..3 {
                    adj[r][cc] = drho_dj[r][cc] * upstream;
                }
            }
            // dL/dM = D^T A
            for (j, mbj) in mb.iter_mut().enumerate() {
                for m in 0..6 {
                    let mut acc = S::zero();
                    for r in 0..3 {
                        acc += screw_grads[i][r][m] * adj[r][j];
                    }
                    mbj[(i, m)] += acc;
                }
            }
            // dL/da through the rotation part of J
            for nax in 0..3 {
                let mut a_dual = [
                    crate::num::Dual::constant(a[0]),
                    crate::num::Dual::constant(a[1]),
                    crate::num::Dual::constant(a[2]),
                ];
                a_dual[nax].d = S::one();
                let rot_dual = rotation_from_axis_generic(&a_dual);
                let mut acc = S::zero();
                for r in 0..3 {
                    for cc in 0..3 {
                        acc += adj[r][cc] * rot_dual[r][cc].d;
                    }
                }
                screw_bar[(i, nax)] += acc;
            }
            // dL/ds through the screw-gradient factor D(s, x)
            let mut contraction = [[S::zero(); 6]; 3];
            for r in 0..3 {
                for m in 0..6 {
                    let mut acc = S::zero();
                    for j in 0..3 {
                        acc += adj[r][j] * m_mat[m][j];
                    }
                    contraction[r][m] = acc;
                }
            }
            let g = warp_second_order_contraction(&a, &b, &x, unnorm, &contraction);
            for m in 0..6 {
                screw_bar[(i, m)] += g[m];
            }
        }
        m_bars = Some(mb);
    }

    // ---- deformation backward ----
    model.deformation.backward(
        &deform_eval,
        jvps.as_ref(),
        Some(&screw_bar),
        m_bars.as_ref(),
        &mut grads.deformation,
    );

    Ok(ChunkResult { grads, terms })
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct LogLine {
    iter: usize,
    #[serde(flatten)]
    report: LossReport,
}

fn exp_interp(start: f64, end: f64, progress: f64) -> f64 {
    start * (end / start).powf(progress.clamp(0.0, 1.0))
}

pub fn deterministic_mode() -> bool {
    std::env::var("DETERMINISTIC").map(|v| v == "1").unwrap_or(false)
}

/// Derives the per-iteration RNG; depends only on (seed, iteration) so
/// resumed runs reproduce the original stream.
fn iter_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (iteration as u64).wrapping_mul(0x9E3779B97F4A7C15))
}

/// Trains on a dataset directory, writing `log.ndjson` and checkpoints into
/// `out_dir`. Returns the final checkpoint path. `DETERMINISTIC=1` in the
/// environment forces serial chunk processing.
pub fn train(config: &TrainConfig, dataset_dir: &Path, out_dir: &Path) -> Result<PathBuf> {
    train_with_mode(config, dataset_dir, out_dir, !deterministic_mode())
}

/// [`train`] with the chunk-parallelism choice made explicit.
pub fn train_with_mode(
    config: &TrainConfig,
    dataset_dir: &Path,
    out_dir: &Path,
    parallel: bool,
) -> Result<PathBuf> {
    match config.precision {
        ScalarKind::F32 => train_typed::<f32>(config, dataset_dir, out_dir, parallel),
        ScalarKind::F64 => train_typed::<f64>(config, dataset_dir, out_dir, parallel),
    }
}

fn train_typed<S>(
    config: &TrainConfig,
    dataset_dir: &Path,
    out_dir: &Path,
    parallel: bool,
) -> Result<PathBuf>
where
    S: Real,
    StandardNormal: Distribution<S>,
{
    config.validate()?;
    let data = prepare_dataset(dataset_dir, config.holdout_every)?;
    let camera = data.camera;
    let scene_box = SceneBox::from_frustum(
        camera.fx,
        camera.fy,
        camera.cx,
        camera.cy,
        camera.width,
        camera.height,
        camera.near,
        camera.far,
    );
    std::fs::create_dir_all(out_dir)?;

    let frame_count = data.records.len();
    let mut start_iter = 0usize;
    let (mut model, mut adam) = match &config.resume_from {
        Some(path) => {
            let (meta, model, adam) = checkpoint_load::<S>(path)?;
            start_iter = meta.iteration;
            (model, adam)
        }
        None => {
            let mut model = Model::<S>::init(
                config.deformation.clone(),
                config.canonical.clone(),
                scene_box,
                config.seed,
            );
            let adam = Adam::new(&mut model);
            (model, adam)
        }
    };

    let mut log = std::io::BufWriter::new(std::fs::File::create(out_dir.join("log.ndjson"))?);
    let range = camera.far - camera.near;
    let step_params = StepParams {
        weights: config.weights,
        huber_delta: config.huber_delta_frac * range,
        robust_scale: config.robust_scale,
        warp: config.warp,
        dt: 1.0 / frame_count as f64,
        far: camera.far,
    };

    for iteration in start_iter..config.iterations {
        let progress = iteration as f64 / config.iterations.max(1) as f64;
        let lr = exp_interp(config.learning_rate, config.lr_final, progress);
        let sigma =
            exp_interp(config.sigma_start_frac, config.sigma_final_frac, progress) * range;

        let mut rng = iter_rng(config.seed, iteration);
        let frame_idx = data.train_frames[rng.gen_range(0..data.train_frames.len())];
        let frame = &data.records[frame_idx];
        let batch = assemble_batch::<S>(
            &camera,
            frame,
            config.patch_size,
            config.n_patches(),
            config.samples_per_ray,
            config.surface_sample_ratio,
            sigma,
            &mut rng,
        )?;

        let (terms, grads) =
            train_step(&model, &batch, &step_params, parallel).map_err(|e| Error::TrainingAborted {
                iteration,
                source: Box::new(e),
            })?;
        let report = total_loss(&terms, &config.weights).map_err(|e| Error::TrainingAborted {
            iteration,
            source: Box::new(e),
        })?;

        adam.update(&mut model, &grads, lr);

        serde_json::to_writer(&mut log, &LogLine {
            iter: iteration,
            report,
        })?;
        log.write_all(b"\n")?;

        let done = iteration + 1;
        if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done < config.iterations
        {
            let meta = checkpoint_meta::<S>(config, &camera, frame_count, scene_box, done);
            checkpoint_save(
                &out_dir.join(format!("ckpt_{done:06}.bin")),
                &meta,
                &mut model,
                &adam,
            )?;
        }
    }
    log.flush()?;

    let meta = checkpoint_meta::<S>(config, &camera, frame_count, scene_box, config.iterations);
    let final_path = out_dir.join("checkpoint_final.bin");
    checkpoint_save(&final_path, &meta, &mut model, &adam)?;
    Ok(final_path)
}

fn checkpoint_meta<S: Real>(
    config: &TrainConfig,
    camera: &PinholeCamera,
    frame_count: usize,
    scene_box: SceneBox,
    iteration: usize,
) -> CheckpointMeta {
    CheckpointMeta {
        version: 1,
        scalar: config.precision,
        camera: *camera,
        frame_count,
        scene_box,
        warp: config.warp,
        deformation: config.deformation.clone(),
        canonical: config.canonical.clone(),
        iteration,
    }
}
