//! JSON scene descriptions.
//!
//! ```json
//! {"background": [1, 1, 1],
//!  "objects": [{"model": "chair.ccnf", "translation": [0, 0, 0],
//!               "rotation": [1, 0, 0, 0], "scale": [1, 1, 1],
//!               "lod": {"vec": 16, "mat": 2}}]}
//! ```
//!
//! Model paths are relative to the scene file. Only `model` is required
//! per object.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::compose::{AffineTransform, Scene};
use crate::error::{Error, Result};
use crate::field::RankCount;
use crate::io::model_file::{load_model, write_atomic};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    #[serde(default = "white")]
    pub background: [f64; 3],
    pub objects: Vec<SceneObject>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObject {
    pub model: PathBuf,
    #[serde(default)]
    pub translation: [f64; 3],
    #[serde(default = "identity_rotation")]
    pub rotation: [f64; 4],
    #[serde(default = "unit_scale")]
    pub scale: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lod: Option<Lod>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lod {
    pub vec: usize,
    pub mat: usize,
}

fn white() -> [f64; 3] {
    [1.0; 3]
}

fn identity_rotation() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

fn unit_scale() -> [f64; 3] {
    [1.0; 3]
}

impl SceneObject {
    pub fn new(model: impl Into<PathBuf>, transform: &AffineTransform, lod: Option<RankCount>) -> Self {
        Self {
            model: model.into(),
            translation: transform.translation,
            rotation: transform.rotation(),
            scale: transform.scale(),
            lod: lod.map(|k| Lod { vec: k.vec, mat: k.mat }),
        }
    }

    pub fn transform(&self) -> Result<AffineTransform> {
        AffineTransform::new(self.translation, self.rotation, self.scale)
    }
}

impl SceneFile {
    pub fn parse(text: &str) -> Result<Self> {
        let f: SceneFile = serde_json::from_str(text)?;
        if f.objects.is_empty() {
            return Err(Error::InvalidArgument("scene has no objects".into()));
        }
        for (i, o) in f.objects.iter().enumerate() {
            o.transform()
                .map_err(|e| Error::InvalidArgument(format!("object {i}: {e}")))?;
        }
        if f.background.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!("background {:?} outside [0, 1]", f.background)));
        }
        Ok(f)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(path.as_ref(), text.as_bytes())
    }

    /// Loads every referenced model (once per distinct path) and builds the
    /// scene. Relative paths are resolved against `base`.
    pub fn instantiate(&self, base: &Path) -> Result<Scene> {
        let mut cache = HashMap::new();
        let mut scene = Scene::new(self.background);
        for o in &self.objects {
            let path = base.join(&o.model);
            let model = match cache.get(&path) {
                Some(m) => Arc::clone(m),
                None => {
                    let m = Arc::new(load_model(&path)?);
                    cache.insert(path.clone(), Arc::clone(&m));
                    m
                }
            };
            let lod = o.lod.map(|l| RankCount::new(l.vec, l.mat));
            scene.add_instance(model, o.transform()?, lod).map_err(|e| match e {
                Error::InvalidArgument(m) => Error::InvalidArgument(format!("{}: {m}", path.display())),
                other => other,
            })?;
        }
        Ok(scene)
    }
}

/// Reads a scene file and everything it references.
pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    SceneFile::read(path)?.instantiate(base)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let f = SceneFile::parse(r#"{"objects": [{"model": "a.ccnf"}]}"#).unwrap();
        assert_eq!(f.background, [1.0; 3]);
        assert_eq!(f.objects[0].rotation, [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(f.objects[0].scale, [1.0; 3]);
        assert_eq!(f.objects[0].lod, None);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(SceneFile::parse(r#"{"objects": [{"model": "a", "colour": 1}]}"#).is_err());
        assert!(SceneFile::parse(r#"{"objects": [], "extra": 0}"#).is_err());
        assert!(SceneFile::parse(r#"{"objects": []}"#).is_err());
        assert!(SceneFile::parse(r#"{"objects": [{"model": "a", "rotation": [1, 1, 0, 0]}]}"#).is_err());
        assert!(SceneFile::parse(r#"{"objects": [{"model": "a", "scale": [1, -1, 1]}]}"#).is_err());
        assert!(SceneFile::parse(r#"{"objects": [{"model": "a", "lod": {"vec": 1}}]}"#).is_err());
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let tf = AffineTransform::rigid([0.0, 0.0, 1.0], 0.3, [1.0, 2.0, 3.0]).unwrap();
        let f = SceneFile {
            background: [0.0, 0.5, 1.0],
            objects: vec![SceneObject::new("m.ccnf", &tf, Some(RankCount::new(4, 1)))],
        };
        let p = dir.path().join("s.json");
        f.write(&p).unwrap();
        assert_eq!(SceneFile::read(&p).unwrap(), f);
    }
}
