//! Point and scene loading by file extension, and training data specs.

use std::path::{Path, PathBuf};

use oacnn_core::geometry::{voxelize, VoxelScene};
use oacnn_core::training::synth::{synth_scene, SynthSceneConfig};
use oacnn_core::PointCloud;

use crate::error::{IoError, Result};
use crate::{ply, scene, text};

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

/// `.ply` or whitespace text (`.txt`, `.xyz`, `.pts`).
pub fn load_points(path: &Path) -> Result<PointCloud> {
    match extension(path).as_str() {
        "ply" => ply::read_ply_file(path)?.into_point_cloud(),
        "txt" | "xyz" | "pts" => text::read_points_file(path),
        e => Err(IoError::Format(format!("{}: unknown point file extension {e:?}", path.display()))),
    }
}

/// A stored `.oavx` scene as is, or any point file voxelized at `voxel_size`.
pub fn load_scene(path: &Path, voxel_size: f64) -> Result<VoxelScene> {
    if extension(path) == "oavx" {
        return scene::read_scene_file(path);
    }
    Ok(voxelize(&load_points(path)?, voxel_size)?)
}

/// Where training scenes come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DataSpec {
    /// Synthetic rooms for seeds `start..end`.
    Synth { start: u64, end: u64 },
    /// Every labeled point file in a directory, in file-name order.
    Dir(PathBuf),
}

impl std::str::FromStr for DataSpec {
    type Err = IoError;

    fn from_str(s: &str) -> Result<Self> {
        let Some(range) = s.strip_prefix("synth:") else {
            return Ok(DataSpec::Dir(PathBuf::from(s)));
        };
        let bad = || IoError::Format(format!("expected synth:<start>..<end>, got {s:?}"));
        let (a, b) = range.split_once("..").ok_or_else(bad)?;
        let (start, end) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
        if start >= end {
            return Err(bad());
        }
        Ok(DataSpec::Synth { start, end })
    }
}

impl DataSpec {
    pub fn load(&self) -> Result<Vec<PointCloud>> {
        match self {
            DataSpec::Synth { start, end } => (*start..*end)
                .map(|s| Ok(synth_scene(&SynthSceneConfig::with_seed(s))?.cloud))
                .collect(),
            DataSpec::Dir(dir) => {
                let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
                    .map_err(IoError::file(dir))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| matches!(extension(p).as_str(), "ply" | "txt" | "xyz" | "pts"))
                    .collect();
                files.sort();
                if files.is_empty() {
                    return Err(IoError::Format(format!("{}: no point files", dir.display())));
                }
                files
                    .iter()
                    .map(|p| {
                        let pc = load_points(p)?;
                        if pc.labels().is_none() {
                            return Err(IoError::Format(format!("{}: training files need labels", p.display())));
                        }
                        Ok(pc)
                    })
                    .collect()
            }
        }
    }
}
