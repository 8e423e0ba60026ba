// temporary profiling probe
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use warpfield::fields::mlp::Activation;
use warpfield::fields::{CanonicalConfig, DeformationConfig, SceneBox};
use warpfield::objective::LossWeights;
use warpfield::pipeline::dataset::{abs_laplacian, FrameRecord};
use warpfield::pipeline::{assemble_batch, train_step, Model, StepParams};
use warpfield::sampling::PinholeCamera;
use warpfield::se3::WarpOptions;
use ndarray::{Array2, Array3};

fn main() {
    let camera = PinholeCamera { fx: 70.0, fy: 70.0, cx: 40.0, cy: 30.0, width: 80, height: 60, near: 2.0, far: 6.0 };
    let sb = SceneBox::from_frustum(camera.fx, camera.fy, camera.cx, camera.cy, camera.width, camera.height, camera.near, camera.far);
    let model = Model::<f32>::init(
        DeformationConfig { depth: 4, width: 24, skip_at: Some(2), l_pos: 6, l_time: 4, activation: Activation::Relu, head_init_scale: 1e-6 },
        CanonicalConfig { depth: 4, width: 48, skip_at: Some(2), color_width: 24, l_pos: 6, l_dir: 2, activation: Activation::Relu },
        sb, 1);
    let image = Array3::from_shape_fn((60, 80, 3), |(r, c, ch)| ((r + c + ch) % 7) as f32 / 7.0);
    let frame = FrameRecord {
        laplacian: abs_laplacian(&image),
        image,
        mask: Array2::from_elem((60, 80), 1u8),
        depth: Array2::from_shape_fn((60, 80), |(r, c)| 3.0 + (r as f32 / 60.0) + 0.5 * (c as f32 / 80.0)),
        t: 0.5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch = assemble_batch::<f32>(&camera, &frame, 4, 16, 16, 0.75, 0.2, &mut rng).unwrap();
    let zero = LossWeights { lambda_depth: 0.0, lambda_jacobian: 0.0, lambda_grad: 0.0, lambda_smooth: 0.0, lambda_tv: 0.0 };
    for (name, w) in [
        ("color only", zero),
        ("+depth+grad+smooth", LossWeights { lambda_depth: 1.0, lambda_grad: 1.0, lambda_smooth: 0.01, ..zero }),
        ("+tv", LossWeights { lambda_depth: 1.0, lambda_grad: 1.0, lambda_smooth: 0.01, lambda_tv: 1e-4, ..zero }),
        ("+jacobian (full)", LossWeights::default()),
    ] {
        let params = StepParams { weights: w, huber_delta: 0.8, robust_scale: 0.03, warp: WarpOptions::default(), dt: 1.0 / 16.0, far: camera.far };
        // warmup
        let _ = train_step(&model, &batch, &params, true).unwrap();
        let start = std::time::Instant::now();
        let n = 20;
        for _ in 0..n {
            let _ = train_step(&model, &batch, &params, true).unwrap();
        }
        println!("{name:24} {:6.1} ms/step", start.elapsed().as_secs_f64() * 1000.0 / n as f64);
    }
}
