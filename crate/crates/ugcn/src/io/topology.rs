//! Skeleton topology files.
//!
//! ```toml
//! num_joints = 3
//! root = 0
//! edges = [[0, 1], [1, 2]]
//! mirror = [0, 1, 2]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use ugcn_core::SkeletonTopology;

use crate::error::{Error, Result};

pub const BUILTIN_H36M17: &str = "h36m17";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyFile {
    pub num_joints: usize,
    pub root: usize,
    pub edges: Vec<[usize; 2]>,
    pub mirror: Vec<usize>,
}

impl From<&SkeletonTopology> for TopologyFile {
    fn from(t: &SkeletonTopology) -> Self {
        Self {
            num_joints: t.num_joints(),
            root: t.root(),
            edges: t.edges().iter().map(|&(a, b)| [a, b]).collect(),
            mirror: t.mirror().to_vec(),
        }
    }
}

impl TopologyFile {
    pub fn build(&self) -> Result<SkeletonTopology> {
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|&[a, b]| (a, b)).collect();
        Ok(SkeletonTopology::new(self.num_joints, &edges, self.root, &self.mirror)?)
    }
}

pub fn load_topology(path: &Path) -> Result<SkeletonTopology> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: TopologyFile = toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    file.build()
}

pub fn save_topology(path: &Path, topo: &SkeletonTopology) -> Result<()> {
    let text = toml::to_string(&TopologyFile::from(topo)).expect("topology is serializable");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `h36m17` names the built-in 17-joint skeleton; anything else is a path.
pub fn resolve_topology(reference: &str) -> Result<SkeletonTopology> {
    if reference == BUILTIN_H36M17 {
        Ok(SkeletonTopology::h36m17())
    } else {
        load_topology(Path::new(reference))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_round_trips_through_file_form() {
        let t = SkeletonTopology::h36m17();
        let f = TopologyFile::from(&t);
        let text = toml::to_string(&f).unwrap();
        let back: TopologyFile = toml::from_str(&text).unwrap();
        assert_eq!(back.build().unwrap(), t);
    }
}
