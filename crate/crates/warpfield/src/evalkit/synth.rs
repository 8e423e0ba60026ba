//! Synthetic deforming scenes with analytic ground truth.
//!
//! A scene is a union of Gaussian density blobs, each carrying a constant
//! color and a time-dependent oracle screw (identity at `t = 0`). Frames
//! are rendered by fine ray marching through the analytic density, expected
//! depth comes from the same quadrature, and the written dataset optionally
//! corrupts depth with an affine map plus noise to mimic a monocular
//! estimator's relative depth.

use crate::error::Result;
use crate::num::{rl, Real};
use crate::pipeline::dataset::{
    depth_path, frame_path, mask_path, write_mask, write_meta, write_pfm, write_rgb, DatasetMeta,
};
use crate::render::RadianceSource;
use crate::sampling::gen_ray;
use crate::se3::{screw_to_transform, ScrewAxis, WarpOptions};
use ndarray::{Array1, Array2, Array3};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use std::path::Path;

/// Sinusoidal screw motion: the blob's rigid pose at time `t` is the screw
/// `(a, b) = (a_amp, b_amp) * sin(2 pi freq t)`, so `t = 0` is the identity.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BlobMotion {
    pub a_amp: [f64; 3],
    pub b_amp: [f64; 3],
    pub frequency: f64,
}

impl BlobMotion {
    pub fn screw_at(&self, t: f64) -> ScrewAxis<f64> {
        let s = (2.0 * std::f64::consts::PI * self.frequency * t).sin();
        ScrewAxis::new(
            [self.a_amp[0] * s, self.a_amp[1] * s, self.a_amp[2] * s],
            [self.b_amp[0] * s, self.b_amp[1] * s, self.b_amp[2] * s],
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Blob {
    pub center: [f64; 3],
    pub radius: f64,
    pub color: [f64; 3],
    pub peak_density: f64,
    #[serde(default)]
    pub motion: BlobMotion,
}

/// Depth-map corruption mimicking a relative (affine-ambiguous) estimator.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DepthCorruption {
    /// Multiplicative scale on true depth.
    pub scale: f64,
    /// Additive offset as a fraction of (far - near).
    pub offset_frac: f64,
    /// Gaussian noise sigma as a fraction of (far - near).
    pub noise_frac: f64,
}

impl Default for DepthCorruption {
    fn default() -> Self {
        DepthCorruption {
            scale: 0.8,
            offset_frac: 0.1,
            noise_frac: 0.01,
        }
    }
}

/// Tool-mask scripting for the generated dataset.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MaskSpec {
    AllOnes,
    /// A rectangle of zeros translating by `velocity` pixels per frame.
    MovingRect {
        top: i64,
        left: i64,
        height: usize,
        width: usize,
        velocity: (i64, i64),
    },
}

impl Default for MaskSpec {
    fn default() -> Self {
        MaskSpec::AllOnes
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticScene {
    pub meta: DatasetMeta,
    pub blobs: Vec<Blob>,
    #[serde(default)]
    pub depth_corruption: Option<DepthCorruption>,
    #[serde(default)]
    pub mask: MaskSpec,
    /// Quadrature steps of the oracle renderer.
    #[serde(default = "default_oracle_steps")]
    pub oracle_steps: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_oracle_steps() -> usize {
    1024
}

/// A scene frozen at one time instant: per-blob poses are precomputed so
/// density queries stay cheap.
pub struct FrozenScene<'a> {
    blobs: &'a [Blob],
    /// Per blob: the world position of its (moved) center and the rotation
    /// needed to pull query points back into the canonical frame.
    poses: Vec<([f64; 3], [[f64; 3]; 3], [f64; 3])>,
}

impl FrozenScene<'_> {
    /// Analytic density and color at a world point: each blob is queried in
    /// its canonical frame (inverse rigid motion), densities add, colors
    /// blend density-weighted.
    pub fn density_color_at(&self, x: [f64; 3]) -> (f64, [f64; 3]) {
        let mut tau = 0.0;
        let mut color = [0.0; 3];
        for (blob, (center_w, rot, trans)) in self.blobs.iter().zip(&self.poses) {
            // cheap reject on the moved center before the exact transform
            let coarse = (x[0] - center_w[0]).powi(2)
                + (x[1] - center_w[1]).powi(2)
                + (x[2] - center_w[2]).powi(2);
            let r2 = blob.radius * blob.radius;
            if coarse > 60.0 * r2 {
                continue;
            }
            let dx = [x[0] - trans[0], x[1] - trans[1], x[2] - trans[2]];
            let y = [
                rot[0][0] * dx[0] + rot[1][0] * dx[1] + rot[2][0] * dx[2],
                rot[0][1] * dx[0] + rot[1][1] * dx[1] + rot[2][1] * dx[2],
                rot[0][2] * dx[0] + rot[1][2] * dx[1] + rot[2][2] * dx[2],
            ];
            let d2 = (y[0] - blob.center[0]).powi(2)
                + (y[1] - blob.center[1]).powi(2)
                + (y[2] - blob.center[2]).powi(2);
            let g = blob.peak_density * (-d2 / (2.0 * r2)).exp();
            tau += g;
            for c in 0..3 {
                color[c] += g * blob.color[c];
            }
        }
        if tau > 1e-300 {
            for c in color.iter_mut() {
                *c /= tau;
            }
        }
        (tau, color)
    }
}

impl SyntheticScene {
    /// Freezes the scene at time `t`, caching every blob's rigid pose.
    pub fn at_time(&self, t: f64) -> FrozenScene<'_> {
        let poses = self
            .blobs
            .iter()
            .map(|blob| {
                let screw = blob.motion.screw_at(t);
                let pose =
                    screw_to_transform(&screw, WarpOptions::default()).expect("finite screw");
                (pose.apply(&blob.center), pose.rotation, pose.translation)
            })
            .collect();
        FrozenScene {
            blobs: &self.blobs,
            poses,
        }
    }

    /// Analytic density and color at a world point and time.
    pub fn density_color_at(&self, x: [f64; 3], t: f64) -> (f64, [f64; 3]) {
        self.at_time(t).density_color_at(x)
    }

    /// World position of a blob's center at time `t` (its canonical center
    /// moved by the oracle motion).
    pub fn blob_center_at(&self, blob_idx: usize, t: f64) -> [f64; 3] {
        let blob = &self.blobs[blob_idx];
        let pose = screw_to_transform(&blob.motion.screw_at(t), WarpOptions::default()).unwrap();
        pose.apply(&blob.center)
    }
}

/// Fixed-time view of a synthetic scene as a radiance source.
pub struct AnalyticRadiance<'a> {
    pub scene: &'a SyntheticScene,
    pub t: f64,
}

impl<S: Real> RadianceSource<S> for AnalyticRadiance<'_> {
    fn radiance_batch(&self, x: &Array2<S>, _dirs: &Array2<S>) -> (Array2<S>, Array1<S>) {
        let n = x.dim().0;
        let frozen = self.scene.at_time(self.t);
        let mut colors = Array2::<S>::zeros((n, 3));
        let mut densities = Array1::<S>::zeros(n);
        for i in 0..n {
            let (tau, col) = frozen.density_color_at(
                [x[(i, 0)].to64(), x[(i, 1)].to64(), x[(i, 2)].to64()],
            );
            densities[i] = rl(tau);
            for c in 0..3 {
                colors[(i, c)] = rl(col[c]);
            }
        }
        (colors, densities)
    }
}

/// One oracle-rendered frame: RGB, expected depth, accumulation.
pub struct OracleFrame {
    pub rgb: Array3<f32>,
    pub depth: Array2<f32>,
    pub acc: Array2<f32>,
}

/// Renders a frame by fine midpoint ray marching through the analytic
/// density. This integrator is written independently of the training-path
/// compositor so the two can check each other.
pub fn oracle_render_frame(scene: &SyntheticScene, t: f64, n_steps: usize) -> OracleFrame {
    let meta = &scene.meta;
    let (h, w) = (meta.height, meta.width);
    let camera = meta.camera();
    let delta = (meta.far - meta.near) / n_steps as f64;

    let frozen = scene.at_time(t);
    let rows: Vec<(Vec<[f32; 3]>, Vec<f32>, Vec<f32>)> = (0..h)
        .into_par_iter()
        .map(|r| {
            let mut rgb_row = Vec::with_capacity(w);
            let mut depth_row = Vec::with_capacity(w);
            let mut acc_row = Vec::with_capacity(w);
            for c in 0..w {
                let ray = gen_ray::<f64>(&camera, r, c, t).unwrap();
                let mut transmittance = 1.0f64;
                let mut color = [0.0f64; 3];
                let mut depth_num = 0.0f64;
                let mut acc = 0.0f64;
                for k in 0..n_steps {
                    let s = meta.near + (k as f64 + 0.5) * delta;
                    let x = [ray.dir[0] * s, ray.dir[1] * s, ray.dir[2] * s];
                    let (tau, col) = frozen.density_color_at(x);
                    let alpha = 1.0 - (-tau * delta).exp();
                    let weight = transmittance * alpha;
                    for ch in 0..3 {
                        color[ch] += weight * col[ch];
                    }
                    depth_num += weight * s;
                    acc += weight;
                    transmittance *= 1.0 - alpha;
                    if transmittance < 1e-8 {
                        break;
                    }
                }
                let depth = if acc > 0.5 {
                    depth_num / acc
                } else {
                    // uncovered pixel: report the far plane, the convention a
                    // monocular estimator would approximate for background
                    meta.far
                };
                rgb_row.push([color[0] as f32, color[1] as f32, color[2] as f32]);
                depth_row.push(depth as f32);
                acc_row.push(acc as f32);
            }
            (rgb_row, depth_row, acc_row)
        })
        .collect();

    let mut rgb = Array3::zeros((h, w, 3));
    let mut depth = Array2::zeros((h, w));
    let mut acc = Array2::zeros((h, w));
    for (r, (rgb_row, depth_row, acc_row)) in rows.into_iter().enumerate() {
        for c in 0..w {
            for ch in 0..3 {
                rgb[(r, c, ch)] = rgb_row[c][ch];
            }
            depth[(r, c)] = depth_row[c];
            acc[(r, c)] = acc_row[c];
        }
    }
    OracleFrame { rgb, depth, acc }
}

fn mask_for_frame(scene: &SyntheticScene, i: usize) -> Array2<u8> {
    let (h, w) = (scene.meta.height, scene.meta.width);
    match scene.mask {
        MaskSpec::AllOnes => Array2::from_elem((h, w), 1),
        MaskSpec::MovingRect {
            top,
            left,
            height,
            width,
            velocity,
        } => {
            let mut mask = Array2::from_elem((h, w), 1);
            let top = top + velocity.0 * i as i64;
            let left = left + velocity.1 * i as i64;
            for r in 0..height {
                for c in 0..width {
                    let rr = top + r as i64;
                    let cc = left + c as i64;
                    if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                        mask[(rr as usize, cc as usize)] = 0;
                    }
                }
            }
            mask
        }
    }
}

/// Writes a complete pipeline-format dataset for the scene. Deterministic
/// under the scene's seed.
pub fn generate_synthetic(scene: &SyntheticScene, out_dir: &Path) -> Result<()> {
    write_meta(out_dir, &scene.meta)?;
    let frames = scene.meta.frame_count;
    let range = scene.meta.far - scene.meta.near;
    for i in 0..frames {
        let t = i as f64 / frames as f64;
        let oracle = oracle_render_frame(scene, t, scene.oracle_steps);
        write_rgb(&frame_path(out_dir, i), &oracle.rgb)?;
        write_mask(&mask_path(out_dir, i), &mask_for_frame(scene, i))?;

        let mut depth = oracle.depth;
        if let Some(corr) = scene.depth_corruption {
            let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ (i as u64).wrapping_mul(0x9E3779B97F4A7C15));
            let noise = Normal::new(0.0f64, (corr.noise_frac * range).max(1e-12)).unwrap();
            depth.mapv_inplace(|d| {
                (corr.scale * d as f64 + corr.offset_frac * range + noise.sample(&mut rng)) as f32
            });
        }
        write_pfm(&depth_path(out_dir, i), &depth)?;
    }
    Ok(())
}
