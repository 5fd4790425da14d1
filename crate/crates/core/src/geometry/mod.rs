//! Cameras, depth back-projection, point-cloud guides and closed-loop camera
//! trajectories.

mod camera;
mod projection;
mod trajectory;

pub use camera::{read_cameras, relative_pose, write_cameras, CameraPose, CameraRecord, RigidTransform};
pub use projection::{back_project, render_point_cloud, DepthMap, PointCloud, RenderedGuide};
pub use trajectory::{
    interpolate_trajectory, scene_center, slerp, sort_by_azimuth, spline_positions, CubicSpline,
    LoopInterpolator, Trajectory,
};
