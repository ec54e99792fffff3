//! Ray-cast LiDAR simulator with full beam provenance.
//!
//! Scenes are unions of block-built objects, optional unlabeled occluders and
//! a ground plane. One ray is cast through the center of every angular bin of
//! a spherical grid; the nearest surface returns a point unless the beam was
//! chosen to drop. The log keeps what every beam hit, which is enough to
//! derive per-voxel shape-miss causes without the region analysis.

mod oracle;
mod prototype;
mod scene;

pub use oracle::oracle_cause;
pub use prototype::{default_prototypes, Part, ScaledShape, ScenePrototype};
pub use scene::{
    generate_default, generate_scene, render_layout, Beam, BeamLog, BeamOutcome, DropConfig, OccluderConfig, Placement,
    Scene, SceneConfig, SceneLayout, SceneObject, SurfaceId, SynthError, BOX_MARGIN, GROUND_CLEARANCE,
    GROUND_INTENSITY, OBJECT_INTENSITY, OCCLUDER_INTENSITY,
};
