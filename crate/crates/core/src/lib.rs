//! Allocation-only building blocks for aligning 3D maps recorded by independent
//! mapping sessions of the same site.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the command line
//! front end and thread pools live in the `mapalign` crate.
//!
//! Pipeline overview:
//!
//! 1. [`vpr`] proposes cross-session image matches with a bag of binary words,
//!    each checked by [`geoverify`] (two-view epipolar geometry).
//! 2. [`lpr`] rejects proposals whose surrounding lidar structure disagrees.
//! 3. [`registration`] refines each surviving match into a map-to-map transform.
//! 4. [`alignment`] interpolates those transforms along the target trajectory
//!    and merges the maps; [`metrics`] scores the result.
#![no_std]

extern crate alloc;

pub mod alignment;
pub mod error;
pub mod exec;
pub mod features;
pub mod geometry;
pub mod geoverify;
pub mod lpr;
pub mod metrics;
pub mod pipeline;
pub mod registration;
pub mod session;
pub mod spatial;
pub mod synthgen;
pub mod vocabulary;
pub mod vpr;

pub use error::{Error, Result};
pub use exec::{Executor, Sequential};
pub use geometry::{Point3, Pose, Timestamp, Trajectory, Vector3};
pub use session::{GrayImage, Intrinsics, PointCloud, SessionMap};
