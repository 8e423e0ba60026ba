//! Shared fixtures for the integration suites.

use ndarray::{Array2, Array3};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use warpfield::fields::mlp::Activation;
use warpfield::fields::{CanonicalConfig, DeformationConfig, SceneBox};
use warpfield::objective::{total_loss, LossWeights};
use warpfield::pipeline::dataset::{abs_laplacian, FrameRecord};
use warpfield::pipeline::{assemble_batch, train_step, Model, StepParams, TrainConfig};
use warpfield::sampling::{PinholeCamera, SampleBatch};
use warpfield::se3::WarpOptions;

pub fn criterion_line(n: usize, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {n:02} ({name}): {verdict}{}{detail}", if detail.is_empty() { "" } else { " -- " });
}

pub fn gradcheck_camera() -> PinholeCamera {
    PinholeCamera {
        fx: 20.0,
        fy: 20.0,
        cx: 8.0,
        cy: 6.0,
        width: 16,
        height: 12,
        near: 2.0,
        far: 6.0,
    }
}

/// A smooth little frame with full coverage for gradient checking.
pub fn gradcheck_frame(t: f64) -> FrameRecord {
    let (h, w) = (12usize, 16usize);
    let image = Array3::from_shape_fn((h, w, 3), |(r, c, ch)| {
        let u = c as f32 / w as f32;
        let v = r as f32 / h as f32;
        match ch {
            0 => 0.3 + 0.4 * u,
            1 => 0.5 - 0.2 * v,
            _ => 0.4 + 0.2 * (u * 6.0).sin() * (v * 5.0).cos(),
        }
    });
    let laplacian = abs_laplacian(&image);
    FrameRecord {
        mask: Array2::from_elem((h, w), 1),
        depth: Array2::from_shape_fn((h, w), |(r, c)| {
            3.0 + 1.2 * (c as f32 / w as f32) + 0.8 * (r as f32 / h as f32)
        }),
        t,
        image,
        laplacian,
    }
}

/// Builds a tiny f64 model plus a patch batch suited to finite differences:
/// softplus activations (smooth everywhere) and a deformation head with
/// real weight so every warp path carries signal.
pub fn gradcheck_case(weights: LossWeights) -> (Model<f64>, SampleBatch<f64>, StepParams) {
    let camera = gradcheck_camera();
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
    let deformation = DeformationConfig {
        depth: 2,
        width: 10,
        skip_at: Some(1),
        l_pos: 2,
        l_time: 1,
        activation: Activation::Softplus,
        head_init_scale: 0.3,
    };
    let canonical = CanonicalConfig {
        depth: 2,
        width: 10,
        skip_at: Some(1),
        color_width: 8,
        l_pos: 2,
        l_dir: 1,
        activation: Activation::Softplus,
    };
    let model = Model::<f64>::init(deformation, canonical, scene_box, 99);

    let frame = gradcheck_frame(0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let batch = assemble_batch::<f64>(&camera, &frame, 3, 2, 4, 0.5, 0.4, &mut rng).unwrap();

    let params = StepParams {
        weights,
        huber_delta: 0.3,
        robust_scale: 0.2,
        warp: WarpOptions::default(),
        dt: 0.25,
        far: camera.far,
    };
    (model, batch, params)
}

/// Weighted total with one parameter coordinate temporarily perturbed.
pub fn total_of(
    model: &mut Model<f64>,
    batch: &SampleBatch<f64>,
    params: &StepParams,
    weights: &LossWeights,
    coord: usize,
    h: f64,
) -> f64 {
    perturb(model, coord, h);
    let (terms, _) = train_step(model, batch, params, false).unwrap();
    perturb(model, coord, -h);
    total_loss(&terms, weights).unwrap().total
}

fn perturb(model: &mut Model<f64>, coord: usize, h: f64) {
    let mut offset = 0usize;
    model.visit_params(&mut |p: &mut [f64]| {
        if coord >= offset && coord < offset + p.len() {
            p[coord - offset] += h;
        }
        offset += p.len();
    });
}

/// Small training configuration used by the pipeline behavior tests.
pub fn tiny_train_config() -> TrainConfig {
    TrainConfig {
        iterations: 4,
        rays_per_batch: 2 * 9,
        patch_size: 3,
        samples_per_ray: 6,
        surface_sample_ratio: 0.5,
        learning_rate: 1e-3,
        lr_final: 1e-3,
        deformation: DeformationConfig {
            depth: 2,
            width: 8,
            skip_at: Some(1),
            l_pos: 2,
            l_time: 1,
            activation: Activation::Relu,
            head_init_scale: 1e-6,
        },
        canonical: CanonicalConfig {
            depth: 2,
            width: 8,
            skip_at: Some(1),
            color_width: 6,
            l_pos: 2,
            l_dir: 1,
            activation: Activation::Relu,
        },
        checkpoint_every: 0,
        ..TrainConfig::default()
    }
}
