//! Dataset layout and ingestion.
//!
//! ```text
//! dataset/
//!   meta.json          intrinsics, image size, depth bounds, frame count
//!   frames/%06d.png    8-bit RGB
//!   masks/%06d.png     8-bit, 0 = tool, 255 = tissue
//!   depth/%06d.pfm     32-bit float, PFM (negative scale = little-endian)
//! ```
//!
//! Relative depth maps are mapped into `[near, far]` by a single affine
//! transform shared across the whole video, anchored at the 2nd and 98th
//! percentile of unmasked values.

use crate::error::{Error, Result};
use crate::sampling::PinholeCamera;
use image::{GrayImage, RgbImage};
use ndarray::{Array2, Array3};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

/// `meta.json` schema.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetMeta {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
    pub frame_count: usize,
}

impl DatasetMeta {
    pub fn camera(&self) -> PinholeCamera {
        PinholeCamera {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            near: self.near,
            far: self.far,
        }
    }
}

/// One ingested video frame.
#[derive(Clone, Debug)]
pub struct FrameRecord {
    /// RGB in [0, 1], shape (H, W, 3).
    pub image: Array3<f32>,
    /// 1 = tissue (usable), 0 = tool (excluded).
    pub mask: Array2<u8>,
    /// Relative depth as ingested; replaced by normalized depth after
    /// [`normalize_depth`].
    pub depth: Array2<f32>,
    /// Normalized frame time `t = i / frame_count`.
    pub t: f64,
    /// `|lap C|`: absolute 5-point Laplacian of the input image, channel-averaged.
    pub laplacian: Array2<f32>,
}

fn ingest_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Loads and validates a dataset directory.
pub fn ingest(dataset_dir: &Path) -> Result<(Vec<FrameRecord>, PinholeCamera)> {
    let meta_path = dataset_dir.join("meta.json");
    let meta_file = std::fs::File::open(&meta_path)
        .map_err(|e| ingest_err(&meta_path, format!("cannot open: {e}")))?;
    let meta: DatasetMeta = serde_json::from_reader(BufReader::new(meta_file))?;
    let camera = meta.camera();
    camera.validate()?;
    if meta.frame_count < 1 {
        return Err(ingest_err(&meta_path, "frame_count must be at least 1"));
    }

    let mut records = Vec::with_capacity(meta.frame_count);
    for i in 0..meta.frame_count {
        let frame_path = dataset_dir.join(format!("frames/{i:06}.png"));
        let mask_path = dataset_dir.join(format!("masks/{i:06}.png"));
        let depth_path = dataset_dir.join(format!("depth/{i:06}.pfm"));

        let image = read_rgb(&frame_path, meta.width, meta.height)?;
        let mask = read_mask(&mask_path, meta.width, meta.height)?;
        let depth = read_pfm(&depth_path)?;
        if depth.dim() != (meta.height, meta.width) {
            return Err(ingest_err(
                &depth_path,
                format!(
                    "depth is {}x{}, expected {}x{}",
                    depth.dim().0,
                    depth.dim().1,
                    meta.height,
                    meta.width
                ),
            ));
        }
        for (idx, v) in depth.iter().enumerate() {
            let r = idx / meta.width;
            let c = idx % meta.width;
            if mask[(r, c)] != 0 && !v.is_finite() {
                return Err(ingest_err(&depth_path, format!("non-finite depth at ({r}, {c})")));
            }
        }
        let laplacian = abs_laplacian(&image);
        records.push(FrameRecord {
            image,
            mask,
            depth,
            t: i as f64 / meta.frame_count as f64,
            laplacian,
        });
    }
    Ok((records, camera))
}

fn read_rgb(path: &Path, width: usize, height: usize) -> Result<Array3<f32>> {
    let img = image::open(path).map_err(|e| ingest_err(path, format!("cannot read: {e}")))?;
    let rgb: RgbImage = img.to_rgb8();
    if rgb.width() as usize != width || rgb.height() as usize != height {
        return Err(ingest_err(
            path,
            format!(
                "image is {}x{}, expected {}x{}",
                rgb.width(),
                rgb.height(),
                width,
                height
            ),
        ));
    }
    let mut out = Array3::zeros((height, width, 3));
    for (x, y, p) in rgb.enumerate_pixels() {
        for c in 0..3 {
            out[(y as usize, x as usize, c)] = p[c] as f32 / 255.0;
        }
    }
    Ok(out)
}

fn read_mask(path: &Path, width: usize, height: usize) -> Result<Array2<u8>> {
    let img = image::open(path).map_err(|e| ingest_err(path, format!("cannot read: {e}")))?;
    let gray: GrayImage = img.to_luma8();
    if gray.width() as usize != width || gray.height() as usize != height {
        return Err(ingest_err(
            path,
            format!(
                "mask is {}x{}, expected {}x{}",
                gray.width(),
                gray.height(),
                width,
                height
            ),
        ));
    }
    let mut out = Array2::zeros((height, width));
    for (x, y, p) in gray.enumerate_pixels() {
        out[(y as usize, x as usize)] = u8::from(p[0] >= 128);
    }
    Ok(out)
}

/// Absolute 5-point Laplacian, per channel then averaged, replicate-padded.
pub fn abs_laplacian(image: &Array3<f32>) -> Array2<f32> {
    let (h, w, _) = image.dim();
    let mut out = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let rm = r.saturating_sub(1);
            let rp = (r + 1).min(h - 1);
            let cm = c.saturating_sub(1);
            let cp = (c + 1).min(w - 1);
            let mut acc = 0.0f32;
            for ch in 0..3 {
                let lap = image[(rm, c, ch)] + image[(rp, c, ch)] + image[(r, cm, ch)]
                    + image[(r, cp, ch)]
                    - 4.0 * image[(r, c, ch)];
                acc += lap.abs();
            }
            out[(r, c)] = acc / 3.0;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Depth normalization
// ---------------------------------------------------------------------------

/// Affine map fitted on pooled unmasked depth values: sends the 2nd and
/// 98th percentiles to `near` and `far`, then clamps. One map per video.
pub struct DepthNormalization {
    pub scale: f64,
    pub offset: f64,
    pub near: f64,
    pub far: f64,
}

impl DepthNormalization {
    pub fn apply(&self, d: f32) -> f32 {
        let v = self.scale * d as f64 + self.offset;
        v.clamp(self.near, self.far) as f32
    }
}

/// Fits the per-video normalization from all unmasked depth values.
pub fn fit_depth_normalization(
    depths: &[Array2<f32>],
    masks: &[Array2<u8>],
    near: f64,
    far: f64,
) -> Result<DepthNormalization> {
    if !(near < far) {
        return Err(Error::invalid("require near < far"));
    }
    let mut values: Vec<f32> = Vec::new();
    for (depth, mask) in depths.iter().zip(masks) {
        for (d, m) in depth.iter().zip(mask.iter()) {
            if *m != 0 && d.is_finite() {
                values.push(*d);
            }
        }
    }
    if values.is_empty() {
        return Err(Error::Normalization("no unmasked depth values".into()));
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p2 = percentile_sorted(&values, 2.0);
    let p98 = percentile_sorted(&values, 98.0);
    if p98 - p2 < 1e-12 {
        return Err(Error::Normalization(format!(
            "degenerate depth distribution: p2 = {p2}, p98 = {p98}"
        )));
    }
    let scale = (far - near) / (p98 - p2);
    Ok(DepthNormalization {
        scale,
        offset: near - scale * p2,
        near,
        far,
    })
}

/// Linear-interpolated percentile of an ascending slice.
pub fn percentile_sorted(sorted: &[f32], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0] as f64;
    }
    let pos = q / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] as f64 * (1.0 - frac) + sorted[hi] as f64 * frac
}

/// Normalizes every frame's depth map in place with the shared affine map.
pub fn normalize_depth(records: &mut [FrameRecord], near: f64, far: f64) -> Result<()> {
    let depths: Vec<Array2<f32>> = records.iter().map(|r| r.depth.clone()).collect();
    let masks: Vec<Array2<u8>> = records.iter().map(|r| r.mask.clone()).collect();
    let norm = fit_depth_normalization(&depths, &masks, near, far)?;
    for rec in records.iter_mut() {
        rec.depth.mapv_inplace(|d| norm.apply(d));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Writers (used by the synthetic generator and tests)
// ---------------------------------------------------------------------------

pub fn write_meta(dir: &Path, meta: &DatasetMeta) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let f = std::fs::File::create(dir.join("meta.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(f), meta)?;
    Ok(())
}

pub fn frame_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("frames/{i:06}.png"))
}

pub fn mask_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("masks/{i:06}.png"))
}

pub fn depth_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("depth/{i:06}.pfm"))
}

/// Writes an RGB image in [0, 1] as 8-bit PNG.
pub fn write_rgb(path: &Path, image: &Array3<f32>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let (h, w, _) = image.dim();
    let mut img = RgbImage::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            let px = image::Rgb(std::array::from_fn(|ch| {
                (image[(r, c, ch)].clamp(0.0, 1.0) * 255.0).round() as u8
            }));
            img.put_pixel(c as u32, r as u32, px);
        }
    }
    img.save(path)?;
    Ok(())
}

pub fn write_mask(path: &Path, mask: &Array2<u8>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let (h, w) = mask.dim();
    let mut img = GrayImage::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            img.put_pixel(c as u32, r as u32, image::Luma([mask[(r, c)] * 255]));
        }
    }
    img.save(path)?;
    Ok(())
}

/// Writes a grayscale PFM (negative scale: little-endian, rows bottom-up).
pub fn write_pfm(path: &Path, depth: &Array2<f32>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let (h, w) = depth.dim();
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    write!(f, "Pf\n{} {}\n-1.0\n", w, h)?;
    for r in (0..h).rev() {
        for c in 0..w {
            f.write_all(&depth[(r, c)].to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a grayscale PFM into row-major top-down order.
pub fn read_pfm(path: &Path) -> Result<Array2<f32>> {
    let f = std::fs::File::open(path).map_err(|e| ingest_err(path, format!("cannot open: {e}")))?;
    let mut reader = BufReader::new(f);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    if header.trim() != "Pf" {
        return Err(ingest_err(path, format!("unsupported PFM header `{}`", header.trim())));
    }
    let mut dims = String::new();
    reader.read_line(&mut dims)?;
    let mut it = dims.split_whitespace();
    let w: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ingest_err(path, "bad PFM dimensions"))?;
    let h: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ingest_err(path, "bad PFM dimensions"))?;
    let mut scale_line = String::new();
    reader.read_line(&mut scale_line)?;
    let scale: f64 = scale_line
        .trim()
        .parse()
        .map_err(|_| ingest_err(path, "bad PFM scale"))?;
    let little_endian = scale < 0.0;
    let mut buf = vec![0u8; w * h * 4];
    reader
        .read_exact(&mut buf)
        .map_err(|e| ingest_err(path, format!("truncated PFM payload: {e}")))?;
    let mut out = Array2::zeros((h, w));
    for (k, chunk) in buf.chunks_exact(4).enumerate() {
        let bytes = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little_endian {
            f32::from_le_bytes(bytes)
        } else {
            f32::from_be_bytes(bytes)
        };
        let r_bottom = k / w;
        let c = k % w;
        out[(h - 1 - r_bottom, c)] = v;
    }
    Ok(out)
}
