//! Non-neural core of an occlusion-aware LiDAR detection pipeline.
//!
//! The crate locates the regions of a frame where object shape can be missing
//! (behind returns, and inside holes of the range image), approximates each
//! labeled object's complete shape from mirrored and borrowed points, turns
//! those shapes into occupancy training targets, and evaluates occupancy
//! predictions. A ray-casting simulator supplies ground truth for all of it.

pub mod assembly;
pub mod boxes;
pub mod dataio;
pub mod geom;
pub mod metrics;
pub mod occlusion;
pub mod occupancy;
pub mod synth;

pub use boxes::{LabeledBox3D, ObjectClass};
pub use geom::{CartesianGrid, Point, PointCloud, SphericalGrid, VoxelGrid, VoxelIndex};
