//! Skeleton topology, hop distances to the root, and the three-way
//! neighbourhood partition used by the spatial graph convolution.
//!
//! Each joint's neighbourhood is itself plus its bone-adjacent joints. A
//! neighbour `i` of joint `j` is labelled by comparing hop distances to the
//! root: `0` when `h[j] == h[i]`, `1` when `h[j] < h[i]` (farther from the
//! root) and `2` when `h[j] > h[i]` (closer). Entry `A_l[j][i]` is `1/Z`
//! where `Z` is the size of joint `j`'s label-`l` subset.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::JointMatrix;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SkeletonTopology {
    num_joints: usize,
    edges: Vec<(usize, usize)>,
    root: usize,
    mirror: Vec<usize>,
}

/// Joint names of the canonical 17-joint layout, in index order.
pub const H36M17_JOINTS: [&str; 17] = [
    "hip", "r_hip", "r_knee", "r_foot", "l_hip", "l_knee", "l_foot", "spine", "thorax", "neck",
    "head", "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
];

const H36M17_EDGES: [(usize, usize); 16] = [
    (0, 1), (1, 2), (2, 3),
    (0, 4), (4, 5), (5, 6),
    (0, 7), (7, 8), (8, 9), (9, 10),
    (8, 11), (11, 12), (12, 13),
    (8, 14), (14, 15), (15, 16),
];

const H36M17_MIRROR: [usize; 17] = [0, 4, 5, 6, 1, 2, 3, 7, 8, 9, 10, 14, 15, 16, 11, 12, 13];

impl SkeletonTopology {
    /// Validates and builds a topology. Duplicate edges and explicit
    /// self-loops are dropped (self-loops are always implied).
    pub fn new(num_joints: usize, edges: &[(usize, usize)], root: usize, mirror: &[usize]) -> Result<Self> {
        let check = |index: usize| {
            if index < num_joints {
                Ok(())
            } else {
                Err(Error::IndexOutOfRange { index, num_joints })
            }
        };
        if num_joints == 0 {
            return Err(Error::InvalidConfig("skeleton needs at least one joint".into()));
        }
        check(root)?;
        let mut clean: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            check(a)?;
            check(b)?;
            let e = (a.min(b), a.max(b));
            if a != b && !clean.contains(&e) {
                clean.push(e);
            }
        }
        if mirror.len() != num_joints {
            return Err(Error::InvalidMirror(format!(
                "length {} does not match {num_joints} joints",
                mirror.len()
            )));
        }
        for (j, &m) in mirror.iter().enumerate() {
            check(m)?;
            if mirror[m] != j {
                return Err(Error::InvalidMirror(format!("not an involution at joint {j}")));
            }
        }
        if mirror[root] != root {
            return Err(Error::InvalidMirror("root must map to itself".into()));
        }
        let topo = Self {
            num_joints,
            edges: clean,
            root,
            mirror: mirror.to_vec(),
        };
        let h = bfs(&topo.neighbors(), root);
        if let Some(j) = h.iter().position(Option::is_none) {
            return Err(Error::DisconnectedGraph(j));
        }
        Ok(topo)
    }

    /// The 17-joint human skeleton rooted at the central hip.
    pub fn h36m17() -> Self {
        Self::new(17, &H36M17_EDGES, 0, &H36M17_MIRROR).expect("canonical skeleton is valid")
    }

    pub fn num_joints(&self) -> usize {
        self.num_joints
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn mirror(&self) -> &[usize] {
        &self.mirror
    }

    /// Bone-adjacent joints of every joint.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_joints];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// Parent of every joint in the breadth-first tree from the root
    /// (`None` for the root).
    pub fn parents(&self) -> Vec<Option<usize>> {
        let adj = self.neighbors();
        let h = self.hop_distances();
        (0..self.num_joints)
            .map(|j| {
                adj[j]
                    .iter()
                    .copied()
                    .filter(|&i| h.get(i) + 1 == h.get(j))
                    .min()
            })
            .collect()
    }

    pub fn hop_distances(&self) -> HopDistances {
        let h = bfs(&self.neighbors(), self.root);
        HopDistances(h.into_iter().map(|d| d.expect("connected by construction")).collect())
    }

    pub fn partition(&self) -> PartitionedAdjacency {
        partition_adjacency(self, &self.hop_distances())
    }

    /// Relabels joints: new index of old joint `j` is `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        let mut mirror = vec![0; self.num_joints];
        for (j, &m) in self.mirror.iter().enumerate() {
            mirror[perm[j]] = perm[m];
        }
        Self::new(self.num_joints, &edges, perm[self.root], &mirror)
    }
}

/// Hop count from every joint to the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HopDistances(pub Vec<usize>);

impl HopDistances {
    pub fn get(&self, j: usize) -> usize {
        self.0[j]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

/// The three label-specific normalized adjacency matrices (dense, row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedAdjacency {
    size: usize,
    dense: [Vec<f64>; 3],
    sparse: [JointMatrix; 3],
}

impl PartitionedAdjacency {
    pub fn from_dense(size: usize, dense: [Vec<f64>; 3]) -> Self {
        let sparse = [
            JointMatrix::from_dense(size, &dense[0]),
            JointMatrix::from_dense(size, &dense[1]),
            JointMatrix::from_dense(size, &dense[2]),
        ];
        Self { size, dense, sparse }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// `A_label[j][i]`.
    pub fn entry(&self, label: usize, j: usize, i: usize) -> f64 {
        self.dense[label][j * self.size + i]
    }

    pub fn dense(&self, label: usize) -> &[f64] {
        &self.dense[label]
    }

    pub fn matrix(&self, label: usize) -> &JointMatrix {
        &self.sparse[label]
    }
}

/// Builds the partitioned adjacency from hop distances.
pub fn partition_adjacency(topo: &SkeletonTopology, h: &HopDistances) -> PartitionedAdjacency {
    let m = topo.num_joints();
    let adj = topo.neighbors();
    let mut dense = [vec![0.0; m * m], vec![0.0; m * m], vec![0.0; m * m]];
    for j in 0..m {
        let mut subsets: [Vec<usize>; 3] = Default::default();
        for i in core::iter::once(j).chain(adj[j].iter().copied()) {
            let label = match h.get(j).cmp(&h.get(i)) {
                core::cmp::Ordering::Equal => 0,
                core::cmp::Ordering::Less => 1,
                core::cmp::Ordering::Greater => 2,
            };
            subsets[label].push(i);
        }
        for (label, members) in subsets.iter().enumerate() {
            let z = members.len() as f64;
            for &i in members {
                dense[label][j * m + i] = 1.0 / z;
            }
        }
    }
    PartitionedAdjacency::from_dense(m, dense)
}

fn bfs(adj: &[Vec<usize>], root: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    let mut queue = VecDeque::new();
    dist[root] = Some(0);
    queue.push_back(root);
    while let Some(u) = queue.pop_front() {
        let d = dist[u].unwrap_or(0);
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(d + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}
