//! rowtracker — a crop-row surveying toolkit for rail-mounted RGB-D camera rigs.
//!
//! The platform this library targets rolls along glasshouse heating pipe-rails,
//! so its motion is a pure 1D translation measured by a wheel encoder. Every
//! frame pairs instance segmentation masks with a registered depth image and a
//! cumulative odometry reading. On top of that data the crate provides:
//!
//! 1. **geom** — pinhole projection, rigid transforms, and odometry-driven
//!    mask re-projection between frames.
//! 2. **track** — tracking-via-segmentation fruit counting in three variants:
//!    plain IoU association (`bl`), odometry re-projection (`rp`), and
//!    re-projection plus depth filtering (`df`).
//! 3. **rowmap** — offline 3D row maps built by depth-filtered back-projection
//!    and odometry-referenced concatenation of frame point clouds.
//! 4. **sim** — a synthetic row generator with exact ground truth, used to
//!    validate the tracker and mapper end to end.
//! 5. **eval** — counting metrics (normalized error, R²) and the per-variant,
//!    per-IoU sweep harness.
//! 6. **dataset** — the on-disk row dataset format (RLE masks, binary depth,
//!    odometry CSV) with lazy frame loading.

pub mod dataset;
pub mod eval;
pub mod geom;
pub mod mask;
pub mod rng;
pub mod rowmap;
pub mod sim;
pub mod track;

pub use dataset::{save_dataset, DatasetError, RowDataset};
pub use eval::{
    aggregate, normalized_error, r_squared, sweep, sweep_datasets, CountReport, EvalError,
    SweepRow,
};
pub use geom::{
    back_project, camera_motion, project, reproject_mask, Calibration, GeomError, Intrinsics,
    Pixel, Point3, Transform,
};
pub use mask::{DepthImage, FrameDetections, Mask};
pub use rowmap::{
    build_map, build_map_frames, frame_cloud, read_ply, write_ply, write_ply_binary, MapConfig,
    MapError, PointCloud,
};
pub use sim::{
    generate_scene, perturb, render_frame, simulate_row, FrameRecord, NoiseSpec, Scene, SceneSpec,
    SimError,
};
pub use track::{
    associate, count_row, depth_retain, mask_iou, FilterConfig, TrackError, Tracker,
    TrackerConfig, TrackerState, Tracklet, Variant,
};
