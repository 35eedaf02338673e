//! On-disk formats.

pub mod checkpoint;
pub mod sequence;
pub mod topology;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ugcn_core::SkeletonTopology;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use sequence::{load_sequence, save_sequence, SequenceFile};
pub use topology::{load_topology, resolve_topology, save_topology};

use crate::error::{Error, Result};
use crate::experiment::RawPair;

pub const INPUT_SUFFIX: &str = ".2d.pose";
pub const TARGET_SUFFIX: &str = ".3d.pose";

/// Loads every `NAME.2d.pose` / `NAME.3d.pose` pair in `dir`, sorted by name.
pub fn load_dataset_dir(dir: &Path, topo: &SkeletonTopology) -> Result<Vec<RawPair>> {
    let mut found: BTreeMap<String, (Option<PathBuf>, Option<PathBuf>)> = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(stem) = name.strip_suffix(INPUT_SUFFIX) {
            found.entry(stem.to_string()).or_default().0 = Some(path.clone());
        } else if let Some(stem) = name.strip_suffix(TARGET_SUFFIX) {
            found.entry(stem.to_string()).or_default().1 = Some(path.clone());
        }
    }
    let mut out = Vec::with_capacity(found.len());
    for (name, pair) in found {
        let (Some(p2), Some(p3)) = pair else {
            return Err(Error::Config(format!("{}: {name} lacks its 2D or 3D file", dir.display())));
        };
        let (a, b) = (load_sequence(&p2)?, load_sequence(&p3)?);
        for (f, path, dims) in [(&a, &p2, 2), (&b, &p3, 3)] {
            if f.header.dims != dims {
                return Err(Error::SchemaMismatch {
                    path: path.clone(),
                    msg: format!("expected {dims}D coordinates, found {}D", f.header.dims),
                });
            }
            if f.header.joints != topo.num_joints() {
                return Err(Error::TopologyMismatch(format!(
                    "{} has {} joints, topology has {}",
                    path.display(),
                    f.header.joints,
                    topo.num_joints()
                )));
            }
        }
        if a.header.frames != b.header.frames {
            return Err(Error::SchemaMismatch {
                path: p3,
                msg: format!("{} frames vs {} in the 2D file", b.header.frames, a.header.frames),
            });
        }
        out.push(RawPair {
            name,
            action: b.header.action.or(a.header.action),
            pose2d: a.pose,
            pose3d: b.pose,
        });
    }
    Ok(out)
}

/// Writes pairs in the layout `load_dataset_dir` reads.
pub fn save_dataset_dir(dir: &Path, pairs: &[RawPair], fps: f64, topology: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for p in pairs {
        let a = SequenceFile::new(p.pose2d.clone(), fps, p.action.clone(), topology);
        let b = SequenceFile::new(p.pose3d.clone(), fps, p.action.clone(), topology);
        save_sequence(&dir.join(format!("{}{INPUT_SUFFIX}", p.name)), &a)?;
        save_sequence(&dir.join(format!("{}{TARGET_SUFFIX}", p.name)), &b)?;
    }
    Ok(())
}
