//! Overfits the model to a single synthetic frame and reports the
//! training-view PSNR: the smallest end-to-end sanity run.
//!
//! Usage: `cargo run --release --example overfit_single_frame [iterations]`

use warpfield::evalkit::{
    generate_synthetic, render_view, Blob, BlobMotion, SyntheticScene,
};
use warpfield::evalkit::{psnr, MaskSpec};
use warpfield::fields::mlp::Activation;
use warpfield::fields::{CanonicalConfig, DeformationConfig};
use warpfield::pipeline::checkpoint::checkpoint_load;
use warpfield::pipeline::dataset::DatasetMeta;
use warpfield::pipeline::{prepare_dataset, train_with_mode, TrainConfig};

fn main() {
    let iterations: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(800);

    let mut blobs = vec![
        Blob {
            center: [-0.5, 0.1, 3.6],
            radius: 0.5,
            color: [0.85, 0.25, 0.2],
            peak_density: 12.0,
            motion: BlobMotion::default(),
        },
        Blob {
            center: [0.55, -0.25, 4.2],
            radius: 0.55,
            color: [0.2, 0.65, 0.3],
            peak_density: 10.0,
            motion: BlobMotion::default(),
        },
        Blob {
            center: [0.05, 0.45, 3.9],
            radius: 0.45,
            color: [0.25, 0.35, 0.8],
            peak_density: 10.0,
            motion: BlobMotion::default(),
        },
    ];
    // a tiled wall of sharper blobs closes the scene behind the subjects
    for iy in 0..7 {
        let yc = -1.8 + 0.6 * iy as f64;
        for ix in 0..9 {
            let xc = -2.4 + 0.6 * ix as f64;
            blobs.push(Blob {
                center: [xc, yc, 5.5],
                radius: 0.55,
                color: [0.33 + 0.02 * xc, 0.37, 0.31 - 0.03 * yc],
                peak_density: 25.0,
                motion: BlobMotion::default(),
            });
        }
    }
    let scene = SyntheticScene {
        meta: DatasetMeta {
            fx: 90.0,
            fy: 90.0,
            cx: 40.0,
            cy: 30.0,
            width: 80,
            height: 60,
            near: 2.88,
            far: 4.23,
            frame_count: 1,
        },
        blobs,
        depth_corruption: Some(Default::default()),
        mask: MaskSpec::AllOnes,
        oracle_steps: 768,
        seed: 11,
    };

    let data_dir = tempfile::tempdir().expect("tempdir");
    eprintln!("generating single-frame dataset...");
    generate_synthetic(&scene, data_dir.path()).expect("synthetic dataset");

    let config = TrainConfig {
        iterations,
        rays_per_batch: 256,
        patch_size: 4,
        samples_per_ray: 24,
        learning_rate: 2e-3,
        lr_final: 3e-4,
        // a single frame has no temporal neighbors and no deformation to
        // regularize; spend the budget on the reconstruction terms
        weights: warpfield::objective::LossWeights {
            lambda_jacobian: 0.0,
            lambda_tv: 0.0,
            ..Default::default()
        },
        deformation: DeformationConfig {
            depth: 4,
            width: 24,
            skip_at: Some(2),
            l_pos: 6,
            l_time: 4,
            activation: Activation::Relu,
            head_init_scale: 1e-6,
        },
        canonical: CanonicalConfig {
            depth: 4,
            width: 80,
            skip_at: Some(2),
            color_width: 32,
            l_pos: 8,
            l_dir: 2,
            activation: Activation::Relu,
        },
        checkpoint_every: 0,
        seed: 1,
        ..TrainConfig::default()
    };

    let out_dir = tempfile::tempdir().expect("tempdir");
    let start = std::time::Instant::now();
    let ckpt = train_with_mode(&config, data_dir.path(), out_dir.path(), true).expect("training");
    let elapsed = start.elapsed().as_secs_f64();
    eprintln!(
        "{iterations} iterations in {elapsed:.1}s ({:.1} it/s)",
        iterations as f64 / elapsed
    );

    let (meta, model, _) = checkpoint_load::<f32>(&ckpt).expect("checkpoint");
    let prepared = prepare_dataset(data_dir.path(), None).expect("dataset");
    let view = render_view(
        &model,
        &meta.camera,
        prepared.records[0].t,
        None,
        1,
        config.eval_samples,
        meta.warp,
    )
    .expect("render");
    let score = psnr(&view.rgb, &prepared.records[0].image).expect("psnr");
    println!("training-view PSNR after {iterations} iterations: {score:.2} dB");
}
