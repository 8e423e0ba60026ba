//! Checkpoint serialization: a raw little-endian parameter blob plus a JSON
//! sidecar that makes the blob self-describing (architecture, scene box,
//! camera, optimizer state layout).
//!
//! The sidecar lives next to the blob with an added `.json` extension.
//! A fingerprint of the architecture description is embedded in the blob
//! header, so a blob paired with the wrong sidecar is rejected before any
//! parameter is copied.

use crate::error::{Error, Result};
use crate::fields::{CanonicalConfig, DeformationConfig, SceneBox};
use crate::num::Real;
use crate::sampling::PinholeCamera;
use crate::se3::WarpOptions;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::model::{Adam, Model};

const MAGIC: &[u8; 8] = b"WARPFLD1";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarKind {
    F32,
    F64,
}

impl ScalarKind {
    fn bytes(self) -> usize {
        match self {
            ScalarKind::F32 => 4,
            ScalarKind::F64 => 8,
        }
    }
}

/// Sidecar schema: everything needed to rebuild the fields and resume.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub scalar: ScalarKind,
    pub camera: PinholeCamera,
    pub frame_count: usize,
    pub scene_box: SceneBox,
    pub warp: WarpOptions,
    pub deformation: DeformationConfig,
    pub canonical: CanonicalConfig,
    pub iteration: usize,
}

impl CheckpointMeta {
    /// FNV-1a hash over the architecture-relevant JSON; ties blob to sidecar.
    fn fingerprint(&self) -> u64 {
        let arch = serde_json::to_string(&(
            &self.scalar,
            &self.scene_box,
            &self.deformation,
            &self.canonical,
        ))
        .expect("serializable meta");
        let mut h: u64 = 0xcbf29ce484222325;
        for b in arch.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}

pub fn sidecar_path(blob_path: &Path) -> PathBuf {
    let mut os = blob_path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

fn scalar_kind_of<S: Real>() -> ScalarKind {
    if std::mem::size_of::<S>() == 4 {
        ScalarKind::F32
    } else {
        ScalarKind::F64
    }
}

fn write_slice<S: Real>(w: &mut impl Write, vals: &[S], kind: ScalarKind) -> Result<()> {
    match kind {
        ScalarKind::F32 => {
            for v in vals {
                w.write_all(&(v.to64() as f32).to_le_bytes())?;
            }
        }
        ScalarKind::F64 => {
            for v in vals {
                w.write_all(&v.to64().to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_slice<S: Real>(r: &mut impl Read, out: &mut [S], kind: ScalarKind) -> Result<()> {
    match kind {
        ScalarKind::F32 => {
            let mut buf = [0u8; 4];
            for v in out.iter_mut() {
                r.read_exact(&mut buf)?;
                *v = S::from(f32::from_le_bytes(buf)).unwrap();
            }
        }
        ScalarKind::F64 => {
            let mut buf = [0u8; 8];
            for v in out.iter_mut() {
                r.read_exact(&mut buf)?;
                *v = S::from(f64::from_le_bytes(buf)).unwrap();
            }
        }
    }
    Ok(())
}

/// Saves model parameters and optimizer state. `meta.iteration` records the
/// training progress for resumption.
pub fn checkpoint_save<S: Real>(
    path: &Path,
    meta: &CheckpointMeta,
    model: &mut Model<S>,
    optimizer: &Adam<S>,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let kind = scalar_kind_of::<S>();
    if kind != meta.scalar {
        return Err(Error::Incompatibility(
            "scalar kind in meta does not match model precision".into(),
        ));
    }
    let sidecar = serde_json::to_string_pretty(meta)?;
    std::fs::write(sidecar_path(path), &sidecar)?;

    let mut f = BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&FORMAT_VERSION.to_le_bytes())?;
    f.write_all(&meta.fingerprint().to_le_bytes())?;
    f.write_all(&(meta.iteration as u64).to_le_bytes())?;
    f.write_all(&optimizer.step.to_le_bytes())?;

    let mut res: Result<()> = Ok(());
    model.visit_params(&mut |p: &mut [S]| {
        if res.is_ok() {
            res = write_slice(&mut f, p, kind);
        }
    });
    res?;
    for group in optimizer.m.iter().chain(optimizer.v.iter()) {
        write_slice(&mut f, group, kind)?;
    }
    Ok(())
}

/// Loads a checkpoint: rebuilds the model from the sidecar, validates the
/// blob header against it, then fills parameters and optimizer state.
pub fn checkpoint_load<S: Real>(path: &Path) -> Result<(CheckpointMeta, Model<S>, Adam<S>)> {
    let sidecar = std::fs::read_to_string(sidecar_path(path)).map_err(|e| {
        Error::Incompatibility(format!(
            "missing sidecar {}: {e}",
            sidecar_path(path).display()
        ))
    })?;
    let meta: CheckpointMeta = serde_json::from_str(&sidecar)?;
    if meta.version != FORMAT_VERSION {
        return Err(Error::Incompatibility(format!(
            "checkpoint version {} unsupported",
            meta.version
        )));
    }
    let kind = scalar_kind_of::<S>();
    if kind != meta.scalar {
        return Err(Error::Incompatibility(format!(
            "checkpoint stores {:?} parameters, requested {:?}",
            meta.scalar, kind
        )));
    }

    let mut f = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Incompatibility("bad checkpoint magic".into()));
    }
    let mut u32buf = [0u8; 4];
    f.read_exact(&mut u32buf)?;
    if u32::from_le_bytes(u32buf) != FORMAT_VERSION {
        return Err(Error::Incompatibility("blob/sidecar version mismatch".into()));
    }
    let mut u64buf = [0u8; 8];
    f.read_exact(&mut u64buf)?;
    if u64::from_le_bytes(u64buf) != meta.fingerprint() {
        return Err(Error::Incompatibility(
            "blob fingerprint does not match sidecar architecture".into(),
        ));
    }
    f.read_exact(&mut u64buf)?;
    let iteration = u64::from_le_bytes(u64buf) as usize;
    if iteration != meta.iteration {
        return Err(Error::Incompatibility("iteration mismatch".into()));
    }
    f.read_exact(&mut u64buf)?;
    let adam_step = u64::from_le_bytes(u64buf);

    // Validate payload size before copying anything.
    let mut model = Model::<S>::init(
        meta.deformation.clone(),
        meta.canonical.clone(),
        meta.scene_box,
        0,
    );
    let n_params = model.param_count();
    let expected = 8 + 4 + 8 + 8 + 8 + 3 * n_params * kind.bytes();
    let actual = std::fs::metadata(path)?.len() as usize;
    if actual != expected {
        return Err(Error::Incompatibility(format!(
            "blob is {actual} bytes, architecture requires {expected}"
        )));
    }

    let mut res: Result<()> = Ok(());
    model.visit_params(&mut |p: &mut [S]| {
        if res.is_ok() {
            res = read_slice(&mut f, p, kind);
        }
    });
    res?;
    let mut optimizer = Adam::new(&mut model);
    optimizer.step = adam_step;
    for group in optimizer.m.iter_mut().chain(optimizer.v.iter_mut()) {
        read_slice(&mut f, group, kind)?;
    }
    Ok((meta, model, optimizer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::mlp::Activation;

    fn meta(scalar: ScalarKind) -> CheckpointMeta {
        CheckpointMeta {
            version: FORMAT_VERSION,
            scalar,
            camera: PinholeCamera {
                fx: 40.0,
                fy: 40.0,
                cx: 16.0,
                cy: 12.0,
                width: 32,
                height: 24,
                near: 2.0,
                far: 6.0,
            },
            frame_count: 4,
            scene_box: SceneBox {
                min: [-2.0, -2.0, 2.0],
                max: [2.0, 2.0, 6.0],
            },
            warp: WarpOptions::default(),
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
            iteration: 17,
        }
    }

    #[test]
    fn save_load_resave_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let meta = meta(ScalarKind::F32);
        let mut model =
            Model::<f32>::init(meta.deformation.clone(), meta.canonical.clone(), meta.scene_box, 5);
        let mut adam = Adam::new(&mut model);
        adam.step = 17;
        for g in adam.m.iter_mut() {
            for (k, v) in g.iter_mut().enumerate() {
                *v = k as f32 * 0.01;
            }
        }
        let p1 = dir.path().join("a.ckpt");
        checkpoint_save(&p1, &meta, &mut model, &adam).unwrap();

        let (meta2, mut model2, adam2) = checkpoint_load::<f32>(&p1).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(adam2.step, 17);
        // parameters identical bitwise
        let mut a = Vec::new();
        model.visit_params(&mut |p: &mut [f32]| a.extend_from_slice(p));
        let mut b = Vec::new();
        model2.visit_params(&mut |p: &mut [f32]| b.extend_from_slice(p));
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }

        let p2 = dir.path().join("b.ckpt");
        checkpoint_save(&p2, &meta2, &mut model2, &adam2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(
            std::fs::read(sidecar_path(&p1)).unwrap(),
            std::fs::read(sidecar_path(&p2)).unwrap()
        );
    }

    #[test]
    fn mismatched_architecture_rejected_before_copy() {
        let dir = tempfile::tempdir().unwrap();
        let meta1 = meta(ScalarKind::F32);
        let mut model =
            Model::<f32>::init(meta1.deformation.clone(), meta1.canonical.clone(), meta1.scene_box, 5);
        let adam = Adam::new(&mut model);
        let p = dir.path().join("a.ckpt");
        checkpoint_save(&p, &meta1, &mut model, &adam).unwrap();

        // corrupt the sidecar's architecture
        let mut meta2 = meta1.clone();
        meta2.deformation.width = 16;
        std::fs::write(
            sidecar_path(&p),
            serde_json::to_string_pretty(&meta2).unwrap(),
        )
        .unwrap();
        match checkpoint_load::<f32>(&p) {
            Err(Error::Incompatibility(msg)) => {
                assert!(msg.contains("fingerprint"), "{msg}");
            }
            other => panic!("expected incompatibility, got {other:?}"),
        }
    }

    #[test]
    fn wrong_scalar_kind_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let meta = meta(ScalarKind::F32);
        let mut model =
            Model::<f32>::init(meta.deformation.clone(), meta.canonical.clone(), meta.scene_box, 5);
        let adam = Adam::new(&mut model);
        let p = dir.path().join("a.ckpt");
        checkpoint_save(&p, &meta, &mut model, &adam).unwrap();
        assert!(matches!(
            checkpoint_load::<f64>(&p),
            Err(Error::Incompatibility(_))
        ));
    }
}
