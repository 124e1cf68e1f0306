use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use sha2::{Digest, Sha256};
use stagenav_core::sim::{Episode, SceneFile, SceneMap};

use crate::HarnessError;

pub type SceneSet = BTreeMap<String, Arc<SceneMap>>;

/// Deserializes JSON, reporting the failing field path on error.
pub fn parse_json<T: DeserializeOwned>(file: &Path, text: &str) -> Result<T, HarnessError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| HarnessError::Schema {
        file: file.to_path_buf(),
        message: format!("{}: {}", display_path(&e.path().to_string()), e.inner()),
    })
}

fn display_path(p: &str) -> String {
    if p == "." { "$".into() } else { format!("${}", if p.starts_with('[') { p.to_string() } else { format!(".{p}") }) }
}

pub fn scene_files(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn load_scene(path: &Path) -> Result<SceneMap, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let file: SceneFile = parse_json(path, &text)?;
    SceneMap::try_from(file).map_err(|e| HarnessError::Schema {
        file: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn load_scenes(dir: &Path) -> Result<SceneSet, HarnessError> {
    let mut out = SceneSet::new();
    for path in scene_files(dir)? {
        let scene = load_scene(&path)?;
        let id = scene.id().to_string();
        if out.insert(id.clone(), Arc::new(scene)).is_some() {
            return Err(HarnessError::Schema {
                file: path,
                message: format!("$.id: duplicate scene id {id:?}"),
            });
        }
    }
    if out.is_empty() {
        return Err(HarnessError::Config(format!(
            "no scene files found in {}",
            dir.display()
        )));
    }
    Ok(out)
}

pub fn load_episodes(path: &Path) -> Result<Vec<Episode>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_json(path, &text)
}

/// Digest of the canonical episode list and scene set; equal across
/// variants of one ablation.
pub fn inputs_digest(scenes: &SceneSet, episodes: &[Episode]) -> String {
    let mut h = Sha256::new();
    for scene in scenes.values() {
        h.update(serde_json::to_vec(&scene.to_file()).expect("scene serializes"));
    }
    h.update(serde_json::to_vec(episodes).expect("episodes serialize"));
    hex::encode(h.finalize())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_errors_name_the_field() {
        let text = r#"[{"schema":"stagenav.episode/1","id":"e","scene_id":"s","instruction":"x",
            "start":{"x":"oops","y":0,"heading":0},"goal":{"x":0,"y":0},"reference_path":[]}]"#;
        let err = parse_json::<Vec<Episode>>(Path::new("eps.json"), text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("eps.json"), "{msg}");
        assert!(msg.contains("[0].start.x"), "{msg}");
    }
}
