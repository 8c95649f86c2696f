//! On-disk episode layout:
//!
//! ```text
//! episode_<id>/
//!   meta.json
//!   records.jsonl
//!   visual/000000.png ...
//!   tactile/000000.png ...
//! ```
//!
//! Episodes are written into a hidden temporary directory next to the
//! destination and renamed into place once complete.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use tactile_core::contrastive::JointVector;
use tactile_core::episode::{validate_episode_id, Episode, EpisodeMeta, EpisodeRecord};
use tactile_core::Error as CoreError;

use crate::error::{Result, ToolError};
use crate::formats::{read_json, read_jsonl, write_json, write_jsonl};
use crate::png::{read_png, write_png};

pub const META_FILE: &str = "meta.json";
pub const RECORDS_FILE: &str = "records.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaFile {
    pub episode_id: String,
    pub task: String,
    pub hz: u32,
    pub resolution: (usize, usize),
    pub sensor: String,
    #[serde(default)]
    pub robot: String,
    pub created_at: String,
    pub config_hash: String,
    #[serde(default = "default_tolerance")]
    pub tolerance_us: u64,
}

fn default_tolerance() -> u64 {
    tactile_core::episode::DEFAULT_TOLERANCE_US
}

impl From<&EpisodeMeta> for MetaFile {
    fn from(m: &EpisodeMeta) -> Self {
        Self {
            episode_id: m.episode_id.clone(),
            task: m.task.clone(),
            hz: m.hz,
            resolution: m.resolution,
            sensor: m.sensor.clone(),
            robot: m.robot.clone(),
            created_at: m.created_at.clone(),
            config_hash: m.config_hash.clone(),
            tolerance_us: m.tolerance_us,
        }
    }
}

impl From<MetaFile> for EpisodeMeta {
    fn from(m: MetaFile) -> Self {
        Self {
            episode_id: m.episode_id,
            task: m.task,
            hz: m.hz,
            resolution: m.resolution,
            sensor: m.sensor,
            robot: m.robot,
            created_at: m.created_at,
            config_hash: m.config_hash,
            tolerance_us: m.tolerance_us,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordLine {
    pub index: usize,
    pub t_us: u64,
    /// Frame paths relative to the episode directory.
    pub visual: String,
    pub tactile: String,
    pub joints: [f64; 7],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_tactile_us: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_joints_us: Option<u64>,
}

pub fn frame_name(index: usize) -> String {
    format!("{index:06}.png")
}

/// Directory that holds episode `id` under `root`.
pub fn episode_dir(root: &Path, id: &str) -> PathBuf {
    root.join(format!("episode_{id}"))
}

fn temp_dir(root: &Path, id: &str) -> PathBuf {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    root.join(format!(".episode_{id}.tmp-{}-{n}", std::process::id()))
}

fn fill(dir: &Path, ep: &Episode) -> Result<()> {
    for sub in ["visual", "tactile"] {
        fs::create_dir(dir.join(sub)).map_err(|e| ToolError::io(dir.join(sub), e))?;
    }
    let mut lines = Vec::with_capacity(ep.records.len());
    for r in &ep.records {
        let name = frame_name(r.index);
        write_png(&dir.join("visual").join(&name), &r.visual)?;
        write_png(&dir.join("tactile").join(&name), &r.tactile)?;
        lines.push(RecordLine {
            index: r.index,
            t_us: r.t_us,
            visual: format!("visual/{name}"),
            tactile: format!("tactile/{name}"),
            joints: *r.joints.values(),
            t_tactile_us: r.t_tactile_us,
            t_joints_us: r.t_joints_us,
        });
    }
    write_jsonl(&dir.join(RECORDS_FILE), &lines)?;
    write_json(&dir.join(META_FILE), &MetaFile::from(&ep.meta))
}

/// Writes `ep` under `root` and returns the path of its `meta.json`.
///
/// Fails with [`ToolError::Conflict`] if the episode already exists, leaving
/// it untouched. On any other failure the partial output is removed and a
/// [`ToolError::Storage`] error is returned.
pub fn write_episode(ep: &Episode, root: &Path) -> Result<PathBuf> {
    ep.validate()?;
    let dest = episode_dir(root, &ep.meta.episode_id);
    if dest.exists() {
        return Err(ToolError::Conflict(dest));
    }
    fs::create_dir_all(root).map_err(|e| ToolError::Storage(format!("{}: {e}", root.display())))?;
    let tmp = temp_dir(root, &ep.meta.episode_id);
    fs::create_dir(&tmp).map_err(|e| ToolError::Storage(format!("{}: {e}", tmp.display())))?;
    let outcome = fill(&tmp, ep).and_then(|()| {
        if dest.exists() {
            return Err(ToolError::Conflict(dest.clone()));
        }
        fs::rename(&tmp, &dest).map_err(|e| match e.kind() {
            std::io::ErrorKind::AlreadyExists | std::io::ErrorKind::DirectoryNotEmpty => {
                ToolError::Conflict(dest.clone())
            }
            _ => ToolError::io(&dest, e),
        })
    });
    match outcome {
        Ok(()) => Ok(dest.join(META_FILE)),
        Err(err) => {
            let _ = fs::remove_dir_all(&tmp);
            Err(match err {
                ToolError::Conflict(_) => err,
                other => ToolError::Storage(other.to_string()),
            })
        }
    }
}

fn load_frame(dir: &Path, rel: &str, index: usize) -> Result<tactile_core::frame::RasterFrame> {
    let path = dir.join(rel);
    if Path::new(rel).is_absolute() || rel.split('/').any(|c| c == "..") {
        return Err(CoreError::Validation { index: Some(index), message: format!("frame path {rel:?} leaves the episode") }.into());
    }
    if !path.is_file() {
        return Err(ToolError::Storage(format!("record {index}: missing frame {}", path.display())));
    }
    read_png(&path)
}

/// Loads and validates an episode from its `meta.json` (or its directory).
pub fn read_episode(manifest: &Path) -> Result<Episode> {
    let (dir, meta_path) = if manifest.is_dir() {
        (manifest.to_path_buf(), manifest.join(META_FILE))
    } else {
        (manifest.parent().unwrap_or(Path::new(".")).to_path_buf(), manifest.to_path_buf())
    };
    if !meta_path.is_file() {
        return Err(ToolError::Storage(format!("missing manifest {}", meta_path.display())));
    }
    let meta: EpisodeMeta = read_json::<MetaFile>(&meta_path)?.into();
    validate_episode_id(&meta.episode_id)?;
    let lines: Vec<RecordLine> = read_jsonl(&dir.join(RECORDS_FILE))?;
    let mut records = Vec::with_capacity(lines.len());
    for (i, line) in lines.into_iter().enumerate() {
        let joints = JointVector::new(line.joints)
            .map_err(|e| CoreError::Validation { index: Some(i), message: e.to_string() })?;
        records.push(EpisodeRecord {
            index: line.index,
            t_us: line.t_us,
            visual: load_frame(&dir, &line.visual, i)?,
            tactile: load_frame(&dir, &line.tactile, i)?,
            joints,
            t_tactile_us: line.t_tactile_us,
            t_joints_us: line.t_joints_us,
        });
    }
    let episode = Episode { meta, records };
    episode.validate()?;
    Ok(episode)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_names() {
        assert_eq!(frame_name(7), "000007.png");
        assert_eq!(episode_dir(Path::new("/data"), "pick_01"), Path::new("/data/episode_pick_01"));
        let a = temp_dir(Path::new("r"), "x");
        let b = temp_dir(Path::new("r"), "x");
        assert_ne!(a, b);
        assert!(a.file_name().unwrap().to_str().unwrap().starts_with(".episode_x.tmp-"));
    }

    #[test]
    fn meta_defaults_for_optional_fields() {
        let json = r#"{"episode_id":"e","task":"t","hz":30,"resolution":[640,480],"sensor":"s",
            "created_at":"2026-01-01T00:00:00Z","config_hash":"abc"}"#;
        let meta: EpisodeMeta = serde_json::from_str::<MetaFile>(json).unwrap().into();
        assert_eq!(meta.tolerance_us, 16_667);
        assert_eq!(meta.robot, "");
        assert_eq!(MetaFile::from(&meta), serde_json::from_str::<MetaFile>(json).unwrap());
    }

    #[test]
    fn escaping_frame_paths_are_rejected() {
        let dir = Path::new(".");
        for rel in ["../x.png", "/etc/passwd", "visual/../../x.png"] {
            assert!(matches!(
                load_frame(dir, rel, 3),
                Err(ToolError::Core(CoreError::Validation { index: Some(3), .. }))
            ));
        }
    }
}
