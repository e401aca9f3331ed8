//! Scene bundle directories: `manifest.toml`, HMTK tensors and PNG frames.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{hmtk, sha256_hex, write_png};
use crate::error::{Error, Result};
use crate::gaussian_field::{Branch, GeometrySpec, PrimitiveSpec};
use crate::image::Image;
use crate::render::Camera;
use crate::synth::{SceneBundle, SynthConfig, LANDMARKS};
use crate::tensor::Tensor;

pub const FORMAT: &str = "gausstalk-bundle";
pub const FORMAT_VERSION: u32 = 1;
/// Columns of a geometry table: position 3, scale 3, rotation 4, opacity,
/// color 3.
pub const GEOMETRY_COLS: usize = 14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format: String,
    pub version: u32,
    pub frames: usize,
    pub config: SynthConfig,
    pub camera: Camera,
    /// File name to SHA-256.
    pub files: BTreeMap<String, String>,
}

pub fn geometry_to_tensor(g: &GeometrySpec) -> Tensor {
    let data = g
        .primitives
        .iter()
        .flat_map(|p| {
            p.position
                .iter()
                .chain(&p.scale)
                .chain(&p.rotation)
                .chain(std::iter::once(&p.opacity))
                .chain(&p.color)
                .copied()
                .collect::<Vec<_>>()
        })
        .collect();
    Tensor::new(&[g.primitives.len(), GEOMETRY_COLS], data).expect("14 values per primitive")
}

pub fn geometry_from_tensor(t: &Tensor, branch: Branch) -> Result<GeometrySpec> {
    if t.shape().len() != 2 || t.cols() != GEOMETRY_COLS {
        return Err(Error::Format(format!("geometry table {:?}, expected N x {GEOMETRY_COLS}", t.shape())));
    }
    let primitives = (0..t.rows())
        .map(|i| {
            let r = t.row_slice(i);
            PrimitiveSpec {
                position: [r[0], r[1], r[2]],
                scale: [r[3], r[4], r[5]],
                rotation: [r[6], r[7], r[8], r[9]],
                opacity: r[10],
                color: [r[11], r[12], r[13]],
            }
        })
        .collect();
    Ok(GeometrySpec { branch, primitives })
}

fn stack(images: &[Image]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::Data("no images to stack".into()))?;
    let mut data = Vec::with_capacity(images.len() * first.data.len());
    for img in images {
        img.check_same(first)?;
        data.extend_from_slice(&img.data);
    }
    Tensor::new(&[images.len(), first.height, first.width, first.channels], data)
}

fn unstack(t: &Tensor) -> Result<Vec<Image>> {
    let &[n, h, w, c] = t.shape() else {
        return Err(Error::Format(format!("image stack {:?}, expected T x H x W x C", t.shape())));
    };
    (0..n)
        .map(|i| Image::new(w, h, c, t.data()[i * h * w * c..(i + 1) * h * w * c].to_vec()))
        .collect()
}

pub(crate) fn image_tensor(img: &Image) -> Tensor {
    Tensor::new(&[img.height, img.width, img.channels], img.data.clone()).expect("consistent image")
}

pub(crate) fn tensor_image(t: &Tensor) -> Result<Image> {
    let &[h, w, c] = t.shape() else {
        return Err(Error::Format(format!("image {:?}, expected H x W x C", t.shape())));
    };
    Image::new(w, h, c, t.data().to_vec())
}

/// Writes the bundle into `dir` (created if missing). PNG previews of the
/// blended frames go to `dir/frames/`.
pub fn save_bundle(dir: &Path, b: &SceneBundle) -> Result<BundleManifest> {
    std::fs::create_dir_all(dir.join("frames"))?;
    let tensors: Vec<(&str, Tensor)> = vec![
        ("au_traj.hmtk", b.au_traj.clone()),
        ("audio.hmtk", b.audio.clone()),
        ("landmarks.hmtk", b.landmarks.clone()),
        ("face_geom.hmtk", geometry_to_tensor(&b.face_geom)),
        ("mouth_geom.hmtk", geometry_to_tensor(&b.mouth_geom)),
        ("frames.hmtk", stack(&b.frames)?),
        ("face_layers.hmtk", stack(&b.face_layers)?),
        ("mouth_layers.hmtk", stack(&b.mouth_layers)?),
        ("neutral_face.hmtk", image_tensor(&b.neutral_face)),
        ("neutral_mouth.hmtk", image_tensor(&b.neutral_mouth)),
    ];
    let mut files = BTreeMap::new();
    for (name, t) in tensors {
        let mut buf = Vec::new();
        hmtk::write_tensor(&mut buf, &t)?;
        files.insert(name.to_string(), sha256_hex(&buf));
        std::fs::write(dir.join(name), buf)?;
    }
    for (t, f) in b.frames.iter().enumerate() {
        write_png(&dir.join("frames").join(format!("{t:05}.png")), f)?;
    }
    let manifest = BundleManifest {
        format: FORMAT.into(),
        version: FORMAT_VERSION,
        frames: b.len(),
        config: b.config.clone(),
        camera: b.camera.clone(),
        files,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(format!("manifest: {e}")))?;
    std::fs::write(dir.join("manifest.toml"), text)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<BundleManifest> {
    let path = dir.join("manifest.toml");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Data(format!("bundle manifest {}: {e}", path.display())))?;
    let m: BundleManifest =
        toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if m.format != FORMAT || m.version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: format {} v{}, expected {FORMAT} v{FORMAT_VERSION}",
            path.display(),
            m.format,
            m.version
        )));
    }
    Ok(m)
}

/// Loads a bundle, checking every file against its manifest hash.
pub fn load_bundle(dir: &Path) -> Result<SceneBundle> {
    let m = read_manifest(dir)?;
    let load = |name: &str| -> Result<Tensor> {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let want = m.files.get(name).ok_or_else(|| Error::Format(format!("manifest lists no {name}")))?;
        if &sha256_hex(&bytes) != want {
            return Err(Error::Data(format!("{} does not match its manifest hash", path.display())));
        }
        hmtk::read_tensor(bytes.as_slice())
    };
    let au_traj = load("au_traj.hmtk")?;
    let audio = load("audio.hmtk")?;
    let landmarks = load("landmarks.hmtk")?;
    let face_geom = geometry_from_tensor(&load("face_geom.hmtk")?, Branch::Face)?;
    let mouth_geom = geometry_from_tensor(&load("mouth_geom.hmtk")?, Branch::Mouth)?;
    let frames = unstack(&load("frames.hmtk")?)?;
    let face_layers = unstack(&load("face_layers.hmtk")?)?;
    let mouth_layers = unstack(&load("mouth_layers.hmtk")?)?;
    let neutral_face = tensor_image(&load("neutral_face.hmtk")?)?;
    let neutral_mouth = tensor_image(&load("neutral_mouth.hmtk")?)?;
    let t = m.frames;
    let consistent = au_traj.shape() == [t, 17]
        && audio.rows() == t
        && landmarks.shape() == [t, LANDMARKS, 2]
        && frames.len() == t
        && face_layers.len() == t
        && mouth_layers.len() == t;
    if !consistent {
        return Err(Error::Data(format!("bundle {} has inconsistent frame counts", dir.display())));
    }
    Ok(SceneBundle {
        config: m.config,
        au_traj,
        audio,
        face_geom,
        mouth_geom,
        camera: m.camera,
        frames,
        face_layers,
        mouth_layers,
        neutral_face,
        neutral_mouth,
        landmarks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::gen_scene;

    fn cfg() -> SynthConfig {
        SynthConfig { frames: 8, width: 16, height: 16, face_prims: 200, mouth_prims: 20, ..SynthConfig::default() }
    }

    #[test]
    fn bundle_roundtrip_and_hash_check() {
        let dir = tempfile::tempdir().unwrap();
        let b = gen_scene(&cfg()).unwrap();
        save_bundle(dir.path(), &b).unwrap();
        assert!(dir.path().join("frames/00007.png").exists());
        assert_eq!(load_bundle(dir.path()).unwrap(), b);
        let p = dir.path().join("audio.hmtk");
        let mut bytes = std::fs::read(&p).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(Error::Data(_))));
    }

    #[test]
    fn missing_bundle_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_bundle(&dir.path().join("nope")), Err(Error::Data(_))));
    }
}
