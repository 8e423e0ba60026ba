//! Command-line front end: train a model, render views, evaluate against a
//! dataset, generate synthetic datasets, and export point clouds.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use warpfield::error::{Error, Result};
use warpfield::evalkit::{
    eval_dataset, export_pointcloud, generate_synthetic, render_view, EvalSplit, SyntheticScene,
};
use warpfield::pipeline::checkpoint::{checkpoint_load, CheckpointMeta, ScalarKind};
use warpfield::pipeline::dataset::write_rgb;
use warpfield::pipeline::{prepare_dataset, train, Model, TrainConfig};
use warpfield::se3::{exp_so3, mat_mul3, RigidTransform};

#[derive(Parser)]
#[command(name = "warpfield", about = "Deformable-scene implicit reconstruction from fixed-camera video", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a dataset directory.
    Train {
        /// JSON file mirroring the training configuration (partial files
        /// fall back to defaults per field).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a full frame from a checkpoint at an arbitrary time.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        time: f64,
        /// Camera pose override `yaw,pitch,roll,tx,ty,tz` (degrees, scene units).
        #[arg(long)]
        pose: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the rendered depth as a normalized grayscale PNG.
        #[arg(long)]
        depth_out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, default_value_t = 192)]
        samples: usize,
    },
    /// Evaluate a checkpoint against a dataset (PSNR / SSIM per frame).
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        holdout_every: usize,
        #[arg(long, value_enum, default_value_t = SplitArg::All)]
        split: SplitArg,
        #[arg(long, default_value_t = 192)]
        samples: usize,
    },
    /// Generate a synthetic dataset from a scene description.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export the reconstruction at time T as an ASCII PLY point cloud.
    ExportPly {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        time: f64,
        #[arg(long)]
        out: PathBuf,
        /// Dataset directory supplying the tool mask of the nearest frame.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 192)]
        samples: usize,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SplitArg {
    All,
    Train,
    Holdout,
}

impl From<SplitArg> for EvalSplit {
    fn from(v: SplitArg) -> Self {
        match v {
            SplitArg::All => EvalSplit::All,
            SplitArg::Train => EvalSplit::Train,
            SplitArg::Holdout => EvalSplit::Holdout,
        }
    }
}

fn parse_pose(spec: &str) -> Result<RigidTransform<f64>> {
    let parts: Vec<f64> = spec
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::invalid(format!("bad pose `{spec}`: {e}")))?;
    if parts.len() != 6 {
        return Err(Error::invalid("pose needs yaw,pitch,roll,tx,ty,tz"));
    }
    let rad = std::f64::consts::PI / 180.0;
    // yaw about +y, pitch about +x, roll about +z, applied in that order
    let ry = exp_so3([0.0, parts[0] * rad, 0.0])?;
    let rx = exp_so3([parts[1] * rad, 0.0, 0.0])?;
    let rz = exp_so3([0.0, 0.0, parts[2] * rad])?;
    let rotation = mat_mul3(&mat_mul3(&ry, &rx), &rz);
    Ok(RigidTransform {
        rotation,
        translation: [parts[3], parts[4], parts[5]],
    })
}

enum AnyModel {
    F32(Box<Model<f32>>),
    F64(Box<Model<f64>>),
}

fn load_any(path: &PathBuf) -> Result<(CheckpointMeta, AnyModel)> {
    let sidecar = std::fs::read_to_string(warpfield::pipeline::checkpoint::sidecar_path(path))
        .map_err(|e| Error::Incompatibility(format!("missing checkpoint sidecar: {e}")))?;
    let meta: CheckpointMeta = serde_json::from_str(&sidecar)?;
    match meta.scalar {
        ScalarKind::F32 => {
            let (meta, model, _) = checkpoint_load::<f32>(path)?;
            Ok((meta, AnyModel::F32(Box::new(model))))
        }
        ScalarKind::F64 => {
            let (meta, model, _) = checkpoint_load::<f64>(path)?;
            Ok((meta, AnyModel::F64(Box::new(model))))
        }
    }
}

fn depth_to_gray(depth: &ndarray::Array2<f32>, near: f64, far: f64) -> ndarray::Array3<f32> {
    let (h, w) = depth.dim();
    ndarray::Array3::from_shape_fn((h, w, 3), |(r, c, _)| {
        ((depth[(r, c)] as f64 - near) / (far - near)).clamp(0.0, 1.0) as f32
    })
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Train { config, data, out } => {
            let cfg: TrainConfig = match config {
                Some(path) => serde_json::from_reader(std::io::BufReader::new(
                    std::fs::File::open(path)?,
                ))?,
                None => TrainConfig::default(),
            };
            let ckpt = train(&cfg, &data, &out)?;
            println!("final checkpoint: {}", ckpt.display());
        }
        Command::Render {
            ckpt,
            time,
            pose,
            out,
            depth_out,
            stride,
            samples,
        } => {
            let (meta, model) = load_any(&ckpt)?;
            let pose = pose.as_deref().map(parse_pose).transpose()?;
            let view = match &model {
                AnyModel::F32(m) => render_view(
                    m, &meta.camera, time, pose.as_ref(), stride, samples, meta.warp,
                )?,
                AnyModel::F64(m) => render_view(
                    m, &meta.camera, time, pose.as_ref(), stride, samples, meta.warp,
                )?,
            };
            write_rgb(&out, &view.rgb)?;
            if let Some(dpath) = depth_out {
                write_rgb(
                    &dpath,
                    &depth_to_gray(&view.depth, meta.camera.near, meta.camera.far),
                )?;
            }
            println!("rendered {} at t = {time}", out.display());
        }
        Command::Eval {
            ckpt,
            data,
            out,
            holdout_every,
            split,
            samples,
        } => {
            let (meta, model) = load_any(&ckpt)?;
            let prepared = prepare_dataset(&data, None)?;
            let (report, frames) = match &model {
                AnyModel::F32(m) => eval_dataset(
                    m,
                    &meta.camera,
                    &prepared.records,
                    split.into(),
                    holdout_every,
                    samples,
                    meta.warp,
                )?,
                AnyModel::F64(m) => eval_dataset(
                    m,
                    &meta.camera,
                    &prepared.records,
                    split.into(),
                    holdout_every,
                    samples,
                    meta.warp,
                )?,
            };
            let f = std::fs::File::create(&out)?;
            serde_json::to_writer_pretty(std::io::BufWriter::new(f), &report)?;
            println!(
                "evaluated {} frames: PSNR {:.3} dB, SSIM {:.4} -> {}",
                frames.len(),
                report.psnr_mean,
                report.ssim_mean,
                out.display()
            );
        }
        Command::Synth { spec, out } => {
            let scene: SyntheticScene =
                serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(spec)?))?;
            generate_synthetic(&scene, &out)?;
            println!(
                "wrote {} synthetic frames to {}",
                scene.meta.frame_count,
                out.display()
            );
        }
        Command::ExportPly {
            ckpt,
            time,
            out,
            data,
            samples,
        } => {
            let (meta, model) = load_any(&ckpt)?;
            let mask = match data {
                Some(dir) => {
                    let prepared = prepare_dataset(&dir, None)?;
                    let idx = ((time * prepared.records.len() as f64).round() as usize)
                        .min(prepared.records.len() - 1);
                    Some(prepared.records[idx].mask.clone())
                }
                None => None,
            };
            let count = match &model {
                AnyModel::F32(m) => export_pointcloud(
                    m, &meta.camera, time, mask.as_ref(), samples, meta.warp, &out,
                )?,
                AnyModel::F64(m) => export_pointcloud(
                    m, &meta.camera, time, mask.as_ref(), samples, meta.warp, &out,
                )?,
            };
            println!("exported {count} points to {}", out.display());
        }
    }
    Ok(())
}
