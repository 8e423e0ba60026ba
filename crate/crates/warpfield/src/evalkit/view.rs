//! Full-frame rendering from a trained model, dataset evaluation, and
//! point-cloud export.

use crate::error::{Error, Result};
use crate::num::{rl, Real};
use crate::pipeline::dataset::FrameRecord;
use crate::pipeline::Model;
use crate::render::{composite, RadianceSource};
use crate::sampling::{gen_ray, PinholeCamera};
use crate::se3::{warp_point_generic, RigidTransform, ScrewField, WarpOptions};
use ndarray::{Array2, Array3};
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

use super::metrics::{psnr, ssim, MetricReport};

/// A rendered frame: color, expected depth, accumulation.
pub struct RenderedView {
    pub rgb: Array3<f32>,
    pub depth: Array2<f32>,
    pub acc: Array2<f32>,
}

/// Renders the full frame at time `t` through the deformation and canonical
/// fields. Evaluation sampling is deterministic midpoint-uniform over
/// `[near, far]` with `n_samples` positions per ray.
///
/// `pose_override` rigidly moves the camera (side views); `stride`
/// subsamples pixels for previews.
pub fn render_view<S: Real>(
    model: &Model<S>,
    camera: &PinholeCamera,
    t: f64,
    pose_override: Option<&RigidTransform<f64>>,
    stride: usize,
    n_samples: usize,
    warp: WarpOptions,
) -> Result<RenderedView> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("time {t} outside [0, 1]")));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    if n_samples < 2 {
        return Err(Error::invalid("need at least two samples per ray"));
    }
    let rows: Vec<usize> = (0..camera.height).step_by(stride).collect();
    let cols: Vec<usize> = (0..camera.width).step_by(stride).collect();
    let (oh, ow) = (rows.len(), cols.len());

    let delta = (camera.far - camera.near) / n_samples as f64;
    let svals: Vec<S> = (0..n_samples)
        .map(|k| rl(camera.near + (k as f64 + 0.5) * delta))
        .collect();
    let far: S = rl(camera.far);
    let ts: S = rl(t);

    let row_results: Vec<(Vec<[f32; 3]>, Vec<f32>, Vec<f32>)> = rows
        .par_iter()
        .map(|&r| {
            let mut rgb_row = Vec::with_capacity(ow);
            let mut depth_row = Vec::with_capacity(ow);
            let mut acc_row = Vec::with_capacity(ow);
            let n = ow * n_samples;
            let mut positions = Array2::<S>::zeros((n, 3));
            let mut dirs = Array2::<S>::zeros((n, 3));
            for (ci, &c) in cols.iter().enumerate() {
                let ray = gen_ray::<f64>(camera, r, c, t).expect("in-bounds pixel");
                let (o, d) = match pose_override {
                    Some(pose) => {
                        let o = pose.apply(&ray.origin);
                        let d = [
                            pose.rotation[0][0] * ray.dir[0]
                                + pose.rotation[0][1] * ray.dir[1]
                                + pose.rotation[0][2] * ray.dir[2],
                            pose.rotation[1][0] * ray.dir[0]
                                + pose.rotation[1][1] * ray.dir[1]
                                + pose.rotation[1][2] * ray.dir[2],
                            pose.rotation[2][0] * ray.dir[0]
                                + pose.rotation[2][1] * ray.dir[1]
                                + pose.rotation[2][2] * ray.dir[2],
                        ];
                        (o, d)
                    }
                    None => (ray.origin, ray.dir),
                };
                for (k, sv) in svals.iter().enumerate() {
                    let i = ci * n_samples + k;
                    for ax in 0..3 {
                        positions[(i, ax)] =
                            rl::<S>(o[ax]) + *sv * rl::<S>(d[ax]);
                        dirs[(i, ax)] = rl(d[ax]);
                    }
                }
            }
            // deformation -> warp -> radiance, forward only
            let screws = model.deformation.eval(&positions, ts);
            let screws = screws.screws();
            let mut warped = Array2::<S>::zeros((n, 3));
            for i in 0..n {
                let a = [screws[(i, 0)], screws[(i, 1)], screws[(i, 2)]];
                let b = [screws[(i, 3)], screws[(i, 4)], screws[(i, 5)]];
                let x = [positions[(i, 0)], positions[(i, 1)], positions[(i, 2)]];
                let xp = warp_point_generic(&a, &b, &x, warp.unnormalized_translation);
                for ax in 0..3 {
                    warped[(i, ax)] = xp[ax];
                }
            }
            let (colors, densities) = model.canonical.radiance_batch(&warped, &dirs);
            for ci in 0..ow {
                let mut c_rows = Vec::with_capacity(n_samples);
                let mut d_rows = Vec::with_capacity(n_samples);
                for k in 0..n_samples {
                    let i = ci * n_samples + k;
                    c_rows.push([colors[(i, 0)], colors[(i, 1)], colors[(i, 2)]]);
                    d_rows.push(densities[i]);
                }
                let out = composite(&c_rows, &d_rows, &svals, far).expect("sorted samples");
                rgb_row.push([
                    out.color[0].to64() as f32,
                    out.color[1].to64() as f32,
                    out.color[2].to64() as f32,
                ]);
                depth_row.push(out.depth.to64() as f32);
                acc_row.push(out.acc.to64() as f32);
            }
            (rgb_row, depth_row, acc_row)
        })
        .collect();

    let mut rgb = Array3::zeros((oh, ow, 3));
    let mut depth = Array2::zeros((oh, ow));
    let mut acc = Array2::zeros((oh, ow));
    for (ri, (rgb_row, depth_row, acc_row)) in row_results.into_iter().enumerate() {
        for ci in 0..ow {
            for ch in 0..3 {
                rgb[(ri, ci, ch)] = rgb_row[ci][ch];
            }
            depth[(ri, ci)] = depth_row[ci];
            acc[(ri, ci)] = acc_row[ci];
        }
    }
    Ok(RenderedView { rgb, depth, acc })
}

/// Which frames an evaluation covers, under the every-k-th-frame holdout
/// protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    All,
    Train,
    Holdout,
}

/// Renders each selected frame at its own time and scores it against the
/// dataset frame.
pub fn eval_dataset<S: Real>(
    model: &Model<S>,
    camera: &PinholeCamera,
    records: &[FrameRecord],
    split: EvalSplit,
    holdout_every: usize,
    n_samples: usize,
    warp: WarpOptions,
) -> Result<(MetricReport, Vec<usize>)> {
    let selected: Vec<usize> = (0..records.len())
        .filter(|i| {
            let held = holdout_every > 0 && i % holdout_every == 0;
            match split {
                EvalSplit::All => true,
                EvalSplit::Train => !held,
                EvalSplit::Holdout => held,
            }
        })
        .collect();
    if selected.is_empty() {
        return Err(Error::invalid("evaluation split selects no frames"));
    }
    let mut psnrs = Vec::with_capacity(selected.len());
    let mut ssims = Vec::with_capacity(selected.len());
    for &i in &selected {
        let view = render_view(model, camera, records[i].t, None, 1, n_samples, warp)?;
        psnrs.push(psnr(&view.rgb, &records[i].image)?);
        ssims.push(ssim(&view.rgb, &records[i].image)?);
    }
    Ok((MetricReport::from_frames(psnrs, ssims), selected))
}

/// Back-projects every unmasked pixel at its rendered depth and writes an
/// ASCII PLY with per-point color. Returns the point count.
pub fn export_pointcloud<S: Real>(
    model: &Model<S>,
    camera: &PinholeCamera,
    t: f64,
    mask: Option<&Array2<u8>>,
    n_samples: usize,
    warp: WarpOptions,
    out_path: &Path,
) -> Result<usize> {
    if let Some(m) = mask {
        if m.dim() != (camera.height, camera.width) {
            return Err(Error::Validation("mask does not match camera size".into()));
        }
    }
    let view = render_view(model, camera, t, None, 1, n_samples, warp)?;
    let mut points = Vec::new();
    for r in 0..camera.height {
        for c in 0..camera.width {
            if let Some(m) = mask {
                if m[(r, c)] == 0 {
                    continue;
                }
            }
            let ray = gen_ray::<f64>(camera, r, c, t)?;
            let s = view.depth[(r, c)] as f64;
            let p = [ray.dir[0] * s, ray.dir[1] * s, ray.dir[2] * s];
            let color = [
                (view.rgb[(r, c, 0)].clamp(0.0, 1.0) * 255.0).round() as u8,
                (view.rgb[(r, c, 1)].clamp(0.0, 1.0) * 255.0).round() as u8,
                (view.rgb[(r, c, 2)].clamp(0.0, 1.0) * 255.0).round() as u8,
            ];
            points.push((p, color));
        }
    }
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(out_path)?);
    writeln!(f, "ply")?;
    writeln!(f, "format ascii 1.0")?;
    writeln!(f, "element vertex {}", points.len())?;
    for ax in ["x", "y", "z"] {
        writeln!(f, "property float {ax}")?;
    }
    for ch in ["red", "green", "blue"] {
        writeln!(f, "property uchar {ch}")?;
    }
    writeln!(f, "end_header")?;
    for (p, c) in &points {
        writeln!(f, "{} {} {} {} {} {}", p[0], p[1], p[2], c[0], c[1], c[2])?;
    }
    Ok(points.len())
}

/// Renders the scene under a zero deformation directly from any radiance
/// source; shared by oracle comparisons.
pub fn render_source_view<S: Real, R: RadianceSource<S>>(
    source: &R,
    camera: &PinholeCamera,
    n_samples: usize,
) -> Result<RenderedView> {
    struct NoWarp;
    impl<S: Real> ScrewField<S> for NoWarp {
        fn screw(&self, _x: [S; 3], _t: S) -> crate::se3::ScrewAxis<S> {
            crate::se3::ScrewAxis::zero()
        }
        fn screw_with_spatial_jacobian(
            &self,
            _x: [S; 3],
            _t: S,
        ) -> (crate::se3::ScrewAxis<S>, [[S; 3]; 6]) {
            (crate::se3::ScrewAxis::zero(), [[S::zero(); 3]; 6])
        }
    }
    let delta = (camera.far - camera.near) / n_samples as f64;
    let svals: Vec<S> = (0..n_samples)
        .map(|k| rl(camera.near + (k as f64 + 0.5) * delta))
        .collect();
    let far: S = rl(camera.far);
    let mut rgb = Array3::zeros((camera.height, camera.width, 3));
    let mut depth = Array2::zeros((camera.height, camera.width));
    let mut acc = Array2::zeros((camera.height, camera.width));
    for r in 0..camera.height {
        for c in 0..camera.width {
            let ray = gen_ray::<S>(camera, r, c, S::zero())?;
            let render = crate::render::render_ray(
                ray.origin,
                ray.dir,
                S::zero(),
                &svals,
                far,
                &NoWarp,
                source,
                WarpOptions::default(),
            )?;
            for ch in 0..3 {
                rgb[(r, c, ch)] = render.output.color[ch].to64() as f32;
            }
            depth[(r, c)] = render.output.depth.to64() as f32;
            acc[(r, c)] = render.output.acc.to64() as f32;
        }
    }
    Ok(RenderedView { rgb, depth, acc })
}
