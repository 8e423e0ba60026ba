//! Ray generation, mask-aware patch batching, and depth-guided sampling.
//!
//! The camera is fixed at the origin (all scene change is attributed to the
//! deformation field), so rays differ only in direction. Pixel batches are
//! contiguous square patches drawn entirely from unmasked pixels, which
//! gives the image-space finite differences in the objective a well-defined
//! stencil. Positions along each ray mix Gaussian draws around the depth
//! prior with stratified uniform coverage of `[near, far]`.

use crate::error::{Error, Result};
use crate::num::{rl, Real};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

/// Calibrated pinhole intrinsics plus scene depth bounds.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl PinholeCamera {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::invalid("require 0 < near < far"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("empty image"));
        }
        Ok(())
    }

    /// Projects a camera-frame point to continuous pixel coordinates
    /// `(u, v) = (fx x/z + cx, fy y/z + cy)`; the center of pixel
    /// `(row, col)` sits at `(col + 0.5, row + 0.5)`.
    pub fn project(&self, p: [f64; 3]) -> (f64, f64) {
        (
            self.fx * p[0] / p[2] + self.cx,
            self.fy * p[1] / p[2] + self.cy,
        )
    }
}

/// One camera ray with its pixel provenance and frame time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray<S> {
    pub origin: [S; 3],
    pub dir: [S; 3],
    pub pixel: (usize, usize),
    pub t: S,
}

/// Back-projects a pixel center into a unit-direction ray from the origin.
pub fn gen_ray<S: Real>(camera: &PinholeCamera, row: usize, col: usize, t: S) -> Result<Ray<S>> {
    if row >= camera.height || col >= camera.width {
        return Err(Error::invalid(format!(
            "pixel ({row}, {col}) outside {}x{} image",
            camera.height, camera.width
        )));
    }
    let dx = (col as f64 + 0.5 - camera.cx) / camera.fx;
    let dy = (row as f64 + 0.5 - camera.cy) / camera.fy;
    let norm = (dx * dx + dy * dy + 1.0).sqrt();
    Ok(Ray {
        origin: [S::zero(); 3],
        dir: [rl(dx / norm), rl(dy / norm), rl(1.0 / norm)],
        pixel: (row, col),
        t,
    })
}

/// Uniformly samples `n_patches` axis-aligned `patch x patch` corners whose
/// pixels are all unmasked (mask value 1). Deterministic under a fixed seed.
pub fn sample_patches(
    mask: &Array2<u8>,
    patch: usize,
    n_patches: usize,
    rng_seed: u64,
) -> Result<Vec<(usize, usize)>> {
    let feasible = feasible_patch_corners(mask, patch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok((0..n_patches)
        .map(|_| feasible[rng.gen_range(0..feasible.len())])
        .collect())
}

/// Enumerates every fully-unmasked patch corner via an integral image.
pub fn feasible_patch_corners(mask: &Array2<u8>, patch: usize) -> Result<Vec<(usize, usize)>> {
    if patch < 3 {
        return Err(Error::invalid(
            "patch must be at least 3 (second-order stencils need a 3-wide support)",
        ));
    }
    let (h, w) = mask.dim();
    if h < patch || w < patch {
        return Err(Error::UnsatisfiableMask { patch });
    }
    // integral[r][c] = number of unmasked pixels in mask[..r, ..c]
    let mut integral = Array2::<u32>::zeros((h + 1, w + 1));
    for r in 0..h {
        for c in 0..w {
            let v = u32::from(mask[(r, c)] != 0);
            integral[(r + 1, c + 1)] =
                v + integral[(r, c + 1)] + integral[(r + 1, c)] - integral[(r, c)];
        }
    }
    let full = (patch * patch) as u32;
    let mut feasible = Vec::new();
    for r in 0..=(h - patch) {
        for c in 0..=(w - patch) {
            let count = integral[(r + patch, c + patch)] + integral[(r, c)]
                - integral[(r, c + patch)]
                - integral[(r + patch, c)];
            if count == full {
                feasible.push((r, c));
            }
        }
    }
    if feasible.is_empty() {
        return Err(Error::UnsatisfiableMask { patch });
    }
    Ok(feasible)
}

/// Draws per-ray sample positions: `n_surface` Gaussian draws around the
/// depth prior (clamped to the bounds) plus `n_uniform` stratified uniform
/// positions, sorted ascending with ties resolved by a minimal jitter.
pub fn sample_depth_guided_rng<S, R>(
    d_prior: S,
    sigma: S,
    n_surface: usize,
    n_uniform: usize,
    near: S,
    far: S,
    rng: &mut R,
) -> Result<Vec<S>>
where
    S: Real,
    StandardNormal: Distribution<S>,
    R: Rng + ?Sized,
{
    if !(near < far) {
        return Err(Error::invalid("require near < far"));
    }
    if !(sigma > S::zero()) {
        return Err(Error::invalid("sigma must be positive"));
    }
    if n_surface + n_uniform < 2 {
        return Err(Error::invalid("need at least two samples per ray"));
    }
    let mut s = Vec::with_capacity(n_surface + n_uniform);
    if n_surface > 0 {
        let normal = Normal::new(d_prior, sigma)
            .map_err(|e| Error::invalid(format!("bad normal parameters: {e}")))?;
        for _ in 0..n_surface {
            let v: S = normal.sample(rng);
            s.push(v.max(near).min(far));
        }
    }
    if n_uniform > 0 {
        let delta = (far - near) / rl(n_uniform as f64);
        for k in 0..n_uniform {
            let u: S = rng.gen_range(S::zero()..S::one());
            s.push(near + (rl::<S>(k as f64) + u) * delta);
        }
    }
    s.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    enforce_strictly_increasing(&mut s, near, far);
    Ok(s)
}

/// Seeded wrapper around [`sample_depth_guided_rng`].
#[allow(clippy::too_many_arguments)]
pub fn sample_depth_guided<S>(
    d_prior: S,
    sigma: S,
    n_surface: usize,
    n_uniform: usize,
    near: S,
    far: S,
    rng_seed: u64,
) -> Result<Vec<S>>
where
    S: Real,
    StandardNormal: Distribution<S>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_depth_guided_rng(d_prior, sigma, n_surface, n_uniform, near, far, &mut rng)
}

/// Nudges tied values apart while keeping everything inside `[near, far]`.
fn enforce_strictly_increasing<S: Real>(s: &mut [S], near: S, far: S) {
    let eps = (far - near) * S::epsilon() * rl(4.0);
    for k in 1..s.len() {
        if s[k] <= s[k - 1] {
            s[k] = s[k - 1] + eps;
        }
    }
    // Pull overshoot at the top back under `far`.
    let n = s.len();
    if s[n - 1] > far {
        s[n - 1] = far;
        for k in (0..n - 1).rev() {
            if s[k] >= s[k + 1] {
                s[k] = s[k + 1] - eps;
            } else {
                break;
            }
        }
    }
}

/// A patch-structured training batch: rays with pixel provenance, per-ray
/// sample positions, and the per-pixel supervision targets.
#[derive(Clone, Debug)]
pub struct SampleBatch<S> {
    pub patch_size: usize,
    /// Patch corners (row, col); rays are patch-major, row-major inside.
    pub patches: Vec<(usize, usize)>,
    pub rays: Vec<Ray<S>>,
    /// `(n_rays, n_samples)`, strictly increasing along each row.
    pub s_values: Array2<S>,
    pub gt_color: Array2<S>,
    pub gt_depth: Vec<S>,
    pub mask_weight: Vec<S>,
    pub laplacian: Vec<S>,
    pub t: S,
}

impl<S: Real> SampleBatch<S> {
    pub fn n_rays(&self) -> usize {
        self.rays.len()
    }

    pub fn n_samples(&self) -> usize {
        self.s_values.dim().1
    }

    /// View of one patch's per-pixel values as a `(p, p)` grid.
    pub fn patch_grid(&self, patch_idx: usize, values: &[S]) -> Array2<S> {
        let p = self.patch_size;
        Array2::from_shape_fn((p, p), |(r, c)| values[patch_idx * p * p + r * p + c])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn camera() -> PinholeCamera {
        PinholeCamera {
            fx: 64.0,
            fy: 64.0,
            cx: 32.5,
            cy: 24.5,
            width: 200,
            height: 100,
            near: 1.0,
            far: 5.0,
        }
    }

    #[test]
    fn on_axis_ray_at_principal_point() {
        let r = gen_ray::<f64>(&camera(), 24, 32, 0.0).unwrap();
        assert_eq!(r.dir, [0.0, 0.0, 1.0]);
        assert_eq!(r.origin, [0.0; 3]);
    }

    #[test]
    fn forty_five_degree_ray() {
        // col + 0.5 - cx = fx  ->  dx/dz = 1
        let cam = camera();
        let col = (cam.cx + cam.fx - 0.5) as usize;
        let r = gen_ray::<f64>(&cam, 24, col, 0.0).unwrap();
        let inv = 1.0 / 2.0f64.sqrt();
        assert!((r.dir[0] - inv).abs() < 1e-12);
        assert!(r.dir[1].abs() < 1e-12);
        assert!((r.dir[2] - inv).abs() < 1e-12);
    }

    #[test]
    fn out_of_bounds_pixel_errors() {
        assert!(gen_ray::<f64>(&camera(), 100, 0, 0.0).is_err());
        assert!(gen_ray::<f64>(&camera(), 0, 200, 0.0).is_err());
    }

    #[test]
    fn reprojection_round_trip() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let cam = camera();
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..200 {
            let row = rng.gen_range(0..cam.height);
            let col = rng.gen_range(0..cam.width);
            let ray = gen_ray::<f64>(&cam, row, col, 0.0).unwrap();
            let z = rng.gen_range(cam.near..cam.far);
            let scale = z / ray.dir[2];
            let p = [ray.dir[0] * scale, ray.dir[1] * scale, z];
            let (u, v) = cam.project(p);
            assert!((u - (col as f64 + 0.5)).abs() < 1e-6);
            assert!((v - (row as f64 + 0.5)).abs() < 1e-6);
        }
    }

    #[test]
    fn patches_unconstrained_mask() {
        let mask = Array2::from_elem((10, 12), 1u8);
        let picks = sample_patches(&mask, 3, 5, 7).unwrap();
        for (r, c) in picks {
            assert!(r <= 7 && c <= 9);
        }
    }

    #[test]
    fn patches_unique_hole() {
        let mut mask = Array2::from_elem((8, 8), 0u8);
        for r in 2..5 {
            for c in 3..6 {
                mask[(r, c)] = 1;
            }
        }
        let picks = sample_patches(&mask, 3, 10, 99).unwrap();
        assert!(picks.iter().all(|&p| p == (2, 3)));
    }

    #[test]
    fn patches_match_bruteforce_enumeration() {
        // checkerboard with one solid block
        let mut mask = Array2::from_shape_fn((9, 9), |(r, c)| ((r + c) % 2) as u8);
        for r in 4..8 {
            for c in 1..6 {
                mask[(r, c)] = 1;
            }
        }
        let feasible = feasible_patch_corners(&mask, 3).unwrap();
        // brute force
        let mut expected = Vec::new();
        for r in 0..=6 {
            for c in 0..=6 {
                let ok = (r..r + 3).all(|rr| (c..c + 3).all(|cc| mask[(rr, cc)] == 1));
                if ok {
                    expected.push((r, c));
                }
            }
        }
        assert_eq!(feasible, expected);
        assert!(!expected.is_empty());
    }

    #[test]
    fn patches_unsatisfiable_mask_errors() {
        let mask = Array2::from_elem((8, 8), 0u8);
        assert!(matches!(
            sample_patches(&mask, 3, 1, 0),
            Err(Error::UnsatisfiableMask { patch: 3 })
        ));
    }

    #[test]
    fn patches_deterministic_under_seed() {
        let mask = Array2::from_elem((16, 16), 1u8);
        let a = sample_patches(&mask, 4, 8, 1234).unwrap();
        let b = sample_patches(&mask, 4, 8, 1234).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_sigma_collapses_to_prior() {
        let s = sample_depth_guided::<f64>(2.0, 1e-9, 16, 0, 1.0, 5.0, 42).unwrap();
        for v in &s {
            assert!((v - 2.0).abs() < 1e-6, "{v}");
        }
        // strictly increasing even with ties
        for k in 1..s.len() {
            assert!(s[k] > s[k - 1]);
        }
    }

    #[test]
    fn stratification_contract() {
        let n = 16;
        let s = sample_depth_guided::<f64>(2.0, 0.1, 0, n, 1.0, 5.0, 7).unwrap();
        let delta = 4.0 / n as f64;
        for (k, v) in s.iter().enumerate() {
            let lo = 1.0 + k as f64 * delta;
            assert!(*v >= lo - 1e-12 && *v <= lo + delta + 1e-9, "bin {k}: {v}");
        }
    }

    #[test]
    fn all_samples_in_bounds_and_sorted() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(17);
        for trial in 0..100 {
            let prior = rng.gen_range(0.5..6.0); // sometimes outside bounds
            let s = sample_depth_guided::<f64>(prior, 0.3, 12, 4, 1.0, 5.0, trial).unwrap();
            for k in 0..s.len() {
                assert!(s[k] >= 1.0 && s[k] <= 5.0);
                if k > 0 {
                    assert!(s[k] > s[k - 1]);
                }
            }
        }
    }

    #[test]
    fn depth_guided_reproducible_and_statistically_sound() {
        let a = sample_depth_guided::<f64>(2.5, 0.2, 24, 8, 1.0, 5.0, 31).unwrap();
        let b = sample_depth_guided::<f64>(2.5, 0.2, 24, 8, 1.0, 5.0, 31).unwrap();
        assert_eq!(a, b);

        // Monte-Carlo check against the normal law: interior prior, wide draws.
        let calls = 50_000usize;
        let n = 2 * calls;
        let sigma = 0.05 * 4.0;
        let prior = 3.0;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut sum = 0.0;
        let mut clamped_lo = 0usize;
        let mut clamped_hi = 0usize;
        for _ in 0..calls {
            for s in
                sample_depth_guided_rng::<f64, _>(prior, sigma, 2, 0, 1.0, 5.0, &mut rng).unwrap()
            {
                sum += s;
                // tie jitter nudges duplicate clamped values off the bound
                if s <= 1.0 + 1e-9 {
                    clamped_lo += 1;
                }
                if s >= 5.0 - 1e-9 {
                    clamped_hi += 1;
                }
            }
        }
        let mean = sum / n as f64;
        // the clamp is symmetric here, so the mean stays at the prior
        let tol = 3.0 * sigma / (n as f64).sqrt();
        assert!((mean - prior).abs() < tol, "mean {mean} vs {prior} (tol {tol})");

        // tail mass beyond the bounds matches the Gaussian CDF within 1%
        let z = (5.0 - prior) / sigma; // = 10 sigma -> essentially zero
        let tail = 0.5 * erfc_approx(z / 2.0f64.sqrt());
        assert!((clamped_hi as f64 / n as f64 - tail).abs() < 0.01);
        let z = (prior - 1.0) / sigma;
        let tail = 0.5 * erfc_approx(z / 2.0f64.sqrt());
        assert!((clamped_lo as f64 / n as f64 - tail).abs() < 0.01);

        // a prior near the boundary produces real clamp mass
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let prior = 1.1;
        let mut clamped_lo = 0usize;
        for _ in 0..calls {
            for s in
                sample_depth_guided_rng::<f64, _>(prior, sigma, 2, 0, 1.0, 5.0, &mut rng).unwrap()
            {
                if s <= 1.0 + 1e-9 {
                    clamped_lo += 1;
                }
            }
        }
        let z = (prior - 1.0) / sigma;
        let tail = 0.5 * erfc_approx(z / 2.0f64.sqrt());
        assert!(
            (clamped_lo as f64 / n as f64 - tail).abs() < 0.01,
            "clamp mass {} vs tail {}",
            clamped_lo as f64 / n as f64,
            tail
        );
    }

    /// Abramowitz-Stegun 7.1.26 complementary error function (|err| < 1.5e-7).
    fn erfc_approx(x: f64) -> f64 {
        let t = 1.0 / (1.0 + 0.3275911 * x.abs());
        let poly = t
            * (0.254829592
                + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
        let e = poly * (-x * x).exp();
        if x >= 0.0 {
            e
        } else {
            2.0 - e
        }
    }
}
