//! Spatial-temporal graph convolutional lifting of 2D keypoint sequences to 3D.
//!
//! The crate is `no_std` (with `alloc`) and contains everything that is pure
//! computation: a small reverse-mode differentiation engine, the st-gcn
//! building blocks, the U-shaped network, the pairwise motion loss, pose
//! metrics, the optimizer and training loop, sliding-window inference, and
//! deterministic synthetic data generators. File formats and the command-line
//! front end live in the `ugcn` crate.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod array;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod gradsuite;
pub mod graph;
pub mod infer;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod pose;
pub mod skeleton;
pub mod synth;
pub mod train;

mod linalg;

pub use array::Array;
pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use pose::PoseSequence;
pub use skeleton::{PartitionedAdjacency, SkeletonTopology};
