//! Multi-view depth and identity consistency metrics.

mod consistency;
mod pointcloud;
mod report;

pub use consistency::{
    depth_consistency, eval_latent, id_consistency, side_yaws, EvalOptions, IdMode, MetricRun,
    SIDE_YAW_RANGE,
};
pub use pointcloud::{
    backproject, median_spacing, modified_chamfer, nearest_distances, visibility_radius,
    ChamferResult, DepthPointCloud, KdTree, DEFAULT_VISIBILITY_FACTOR,
};
pub use report::{build_report, ConsistencyReport, ReportConfig, DEPTH_REPORT_SCALE, REPORT_VERSION};
