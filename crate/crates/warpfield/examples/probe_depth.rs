// temporary: probe true-depth percentiles of the acceptance scene
use warpfield::evalkit::{oracle_render_frame, Blob, BlobMotion, MaskSpec, SyntheticScene};
use warpfield::pipeline::dataset::DatasetMeta;

fn wall(z: f64, r: f64, peak: f64) -> Vec<Blob> {
    let mut blobs = Vec::new();
    for iy in 0..7 {
        let yc = -1.8 + 0.6 * iy as f64;
        for ix in 0..9 {
            let xc = -2.4 + 0.6 * ix as f64;
            blobs.push(Blob {
                center: [xc, yc, z],
                radius: r,
                color: [0.33 + 0.02 * xc, 0.37, 0.31 - 0.03 * yc],
                peak_density: peak,
                motion: BlobMotion::default(),
            });
        }
    }
    blobs
}

fn main() {
    let mut blobs = vec![
        Blob { center: [-0.5, 0.1, 3.6], radius: 0.5, color: [0.85, 0.25, 0.2], peak_density: 12.0,
               motion: BlobMotion { a_amp: [0.0, 0.0, 0.10], b_amp: [0.6, 0.3, 0.2], frequency: 1.0 } },
        Blob { center: [0.55, -0.25, 4.2], radius: 0.55, color: [0.2, 0.65, 0.3], peak_density: 10.0,
               motion: BlobMotion { a_amp: [0.08, 0.0, 0.0], b_amp: [0.0, 0.5, 0.3], frequency: 1.0 } },
        Blob { center: [0.05, 0.45, 3.9], radius: 0.45, color: [0.25, 0.35, 0.8], peak_density: 10.0,
               motion: BlobMotion { a_amp: [0.0, 0.06, 0.06], b_amp: [0.4, -0.3, 0.0], frequency: 1.0 } },
    ];
    blobs.extend(wall(5.5, 0.55, 25.0));
    let scene = SyntheticScene {
        meta: DatasetMeta {
            fx: 90.0, fy: 90.0, cx: 40.0, cy: 30.0, width: 80, height: 60,
            near: 2.6, far: 5.0, frame_count: 16,
        },
        blobs,
        depth_corruption: None,
        mask: MaskSpec::AllOnes,
        oracle_steps: 512,
        seed: 11,
    };
    let mut all: Vec<f32> = Vec::new();
    let mut min_acc = 1.0f32;
    for i in [0usize, 4, 8, 12] {
        let t = i as f64 / 16.0;
        let f = oracle_render_frame(&scene, t, 512);
        for v in f.depth.iter() { all.push(*v); }
        for a in f.acc.iter() { min_acc = min_acc.min(*a); }
    }
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pct = |q: f64| all[((q / 100.0 * (all.len() - 1) as f64) as usize)];
    println!("min acc {min_acc:.4}");
    for q in [0.0, 0.5, 2.0, 25.0, 50.0, 75.0, 98.0, 99.5, 100.0] {
        println!("p{q:5.1} = {:.3}", pct(q));
    }
}
