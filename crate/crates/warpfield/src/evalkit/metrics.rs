//! Image quality metrics: PSNR and windowed SSIM.

use crate::error::{Error, Result};
use ndarray::{Array2, Array3};

/// PSNR cap reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Per-frame metrics plus their means.
#[derive(Clone, Debug, Default, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub psnr_mean: f64,
    pub ssim_mean: f64,
}

impl MetricReport {
    pub fn from_frames(psnr: Vec<f64>, ssim: Vec<f64>) -> Self {
        let mean = |v: &[f64]| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        MetricReport {
            psnr_mean: mean(&psnr),
            ssim_mean: mean(&ssim),
            psnr,
            ssim,
        }
    }
}

fn check_shapes(a: &Array3<f32>, b: &Array3<f32>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Validation(format!(
            "image shapes differ: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio for images in [0, 1]: `10 log10(1 / MSE)`,
/// capped at [`PSNR_CAP_DB`] for identical inputs.
pub fn psnr(a: &Array3<f32>, b: &Array3<f32>) -> Result<f64> {
    check_shapes(a, b)?;
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        let e = (*x - *y) as f64;
        acc += e * e;
    }
    let mse = acc / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Separable valid-mode Gaussian filter.
fn gaussian_filter_valid(img: &Array2<f64>) -> Array2<f64> {
    let k = gaussian_kernel();
    let (h, w) = img.dim();
    let wh = h - SSIM_WINDOW + 1;
    let ww = w - SSIM_WINDOW + 1;
    // horizontal
    let mut tmp = Array2::<f64>::zeros((h, ww));
    for r in 0..h {
        for c in 0..ww {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * img[(r, c + i)];
            }
            tmp[(r, c)] = acc;
        }
    }
    // vertical
    let mut out = Array2::<f64>::zeros((wh, ww));
    for r in 0..wh {
        for c in 0..ww {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * tmp[(r + i, c)];
            }
            out[(r, c)] = acc;
        }
    }
    out
}

/// Mean local SSIM over an 11x11 Gaussian window (sigma 1.5, k1 = 0.01,
/// k2 = 0.03, dynamic range 1), computed per channel then averaged.
pub fn ssim(a: &Array3<f32>, b: &Array3<f32>) -> Result<f64> {
    check_shapes(a, b)?;
    let (h, w, ch) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut total = 0.0;
    for channel in 0..ch {
        let pa = Array2::from_shape_fn((h, w), |(r, c)| a[(r, c, channel)] as f64);
        let pb = Array2::from_shape_fn((h, w), |(r, c)| b[(r, c, channel)] as f64);
        let mu_a = gaussian_filter_valid(&pa);
        let mu_b = gaussian_filter_valid(&pb);
        let mu_aa = gaussian_filter_valid(&(&pa * &pa));
        let mu_bb = gaussian_filter_valid(&(&pb * &pb));
        let mu_ab = gaussian_filter_valid(&(&pa * &pb));
        let mut acc = 0.0;
        let n = mu_a.len() as f64;
        for idx in 0..mu_a.len() {
            let ma = mu_a.as_slice().unwrap()[idx];
            let mb = mu_b.as_slice().unwrap()[idx];
            let va = mu_aa.as_slice().unwrap()[idx] - ma * ma;
            let vb = mu_bb.as_slice().unwrap()[idx] - mb * mb;
            let cov = mu_ab.as_slice().unwrap()[idx] - ma * mb;
            let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            acc += num / den;
        }
        total += acc / n;
    }
    Ok(total / ch as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_image(seed: u64, h: usize, w: usize) -> Array3<f32> {
        let mut rng = StdRng::seed_from_u64(seed);
        Array3::from_shape_fn((h, w, 3), |_| rng.gen::<f32>())
    }

    #[test]
    fn psnr_identical_hits_cap() {
        let a = random_image(1, 16, 16);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn psnr_uniform_offset_closed_form() {
        let mut rng = StdRng::seed_from_u64(2);
        let a = Array3::from_shape_fn((12, 14, 3), |_| rng.gen_range(0.0..0.9f32));
        let b = a.mapv(|v| v + 0.1);
        let p = psnr(&a, &b).unwrap();
        // MSE is exactly the squared offset up to f32 rounding
        assert!((p - 20.0).abs() < 1e-4, "{p}");
    }

    #[test]
    fn psnr_matches_naive_loop_and_is_symmetric() {
        let a = random_image(3, 10, 11);
        let b = random_image(4, 10, 11);
        let p = psnr(&a, &b).unwrap();
        let mut acc = 0.0;
        for (x, y) in a.iter().zip(b.iter()) {
            acc += ((*x - *y) as f64).powi(2);
        }
        let expected = 10.0 * (acc / a.len() as f64).recip().log10();
        assert!((p - expected).abs() < 1e-9);
        assert_eq!(p, psnr(&b, &a).unwrap());
    }

    #[test]
    fn psnr_strictly_decreases_with_noise() {
        let a = random_image(5, 16, 16);
        let mut rng = StdRng::seed_from_u64(6);
        let noise = Array3::from_shape_fn(a.dim(), |_| rng.gen_range(-1.0..1.0f32));
        let mut last = f64::INFINITY;
        for amp in [0.01f32, 0.02, 0.05, 0.1, 0.2] {
            let b = (&a + &(&noise * amp)).mapv(|v| v);
            let p = psnr(&a, &b).unwrap();
            assert!(p < last, "{p} !< {last}");
            last = p;
        }
    }

    #[test]
    fn psnr_shape_mismatch_errors() {
        let a = random_image(7, 8, 8);
        let b = random_image(7, 8, 9);
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn ssim_self_similarity_is_exactly_one() {
        let a = random_image(8, 14, 14);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ssim_anticorrelated_is_negative() {
        let mut rng = StdRng::seed_from_u64(9);
        let a = Array3::from_shape_fn((16, 16, 3), |_| if rng.gen::<bool>() { 1.0f32 } else { 0.0 });
        let b = a.mapv(|v| 1.0 - v);
        assert!(ssim(&a, &b).unwrap() < 0.0);
    }

    #[test]
    fn ssim_too_small_image_errors() {
        let a = random_image(10, 10, 16);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn ssim_matches_direct_window_oracle() {
        let a = random_image(11, 13, 15);
        let b = {
            let mut rng = StdRng::seed_from_u64(12);
            a.mapv(|v| (v + 0.1 * rng.gen::<f32>()).min(1.0))
        };
        let fast = ssim(&a, &b).unwrap();

        // direct per-window implementation
        let k = {
            let mut k = [0.0f64; 11];
            let mut sum = 0.0;
            for (i, v) in k.iter_mut().enumerate() {
                *v = (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp();
                sum += *v;
            }
            for v in k.iter_mut() {
                *v /= sum;
            }
            k
        };
        let c1 = 0.01f64.powi(2);
        let c2 = 0.03f64.powi(2);
        let (h, w, _) = a.dim();
        let mut total = 0.0;
        for ch in 0..3 {
            let mut acc = 0.0;
            let mut count = 0.0;
            for r0 in 0..=(h - 11) {
                for c0 in 0..=(w - 11) {
                    let mut ma = 0.0;
                    let mut mb = 0.0;
                    let mut maa = 0.0;
                    let mut mbb = 0.0;
                    let mut mab = 0.0;
                    for i in 0..11 {
                        for j in 0..11 {
                            let wgt = k[i] * k[j];
                            let va = a[(r0 + i, c0 + j, ch)] as f64;
                            let vb = b[(r0 + i, c0 + j, ch)] as f64;
                            ma += wgt * va;
                            mb += wgt * vb;
                            maa += wgt * va * va;
                            mbb += wgt * vb * vb;
                            mab += wgt * va * vb;
                        }
                    }
                    let va = maa - ma * ma;
                    let vb = mbb - mb * mb;
                    let cov = mab - ma * mb;
                    acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1.0;
                }
            }
            total += acc / count;
        }
        let oracle = total / 3.0;
        assert!((fast - oracle).abs() < 1e-6, "{fast} vs {oracle}");
    }

    #[test]
    fn ssim_is_symmetric() {
        let a = random_image(13, 12, 12);
        let b = random_image(14, 12, 12);
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }
}
