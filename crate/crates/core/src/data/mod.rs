//! Sample records, dataset files, standardization statistics and the
//! synthetic generator.

mod h36m;
mod io;
mod stats;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::skeleton::{Pose2D, Pose3D};

pub use h36m::{import_h36m, H36mFrame, H36M_32_TO_16};
pub use io::{load_dataset, load_stats, save_dataset, save_stats, stats_sidecar_path};
pub use stats::{compute_stats, DatasetStats, Standardizer};
pub use synthetic::{
    generate_synthetic, ActionPreset, AxisLimits, BoneSpec, GeneratorConfig, SubjectProfile,
};

/// One paired observation. Field names are the JSON Lines keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub joints_3d: Pose3D,
    pub joints_2d: Pose2D,
    pub camera: CameraIntrinsics,
    pub subject_id: String,
    pub action_id: String,
}

impl SampleRecord {
    /// Checks finiteness, matching joint counts, positive depths and valid
    /// intrinsics. The message names the offending joint.
    pub fn check(&self) -> Result<(), String> {
        if self.joints_3d.is_empty() {
            return Err("record has no joints".into());
        }
        if self.joints_3d.len() != self.joints_2d.len() {
            return Err(format!("{} 3D joints but {} 2D joints", self.joints_3d.len(), self.joints_2d.len()));
        }
        for (j, p) in self.joints_3d.0.iter().enumerate() {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(format!("joint {j} has a non-finite 3D coordinate"));
            }
            if p[2] <= 0.0 {
                return Err(format!("joint {j} has non-positive depth z = {}", p[2]));
            }
        }
        for (j, p) in self.joints_2d.0.iter().enumerate() {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(format!("joint {j} has a non-finite 2D coordinate"));
            }
        }
        self.camera.validate().map_err(|e| e.to_string())
    }
}
