//! Converter from Human3.6M-style frames to sample records.
//!
//! Input is JSON Lines, one [`H36mFrame`] per line, holding the 32 world
//! joints of the original mocap export plus the camera calibration. The
//! dataset itself is not distributed here.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SampleRecord;
use crate::camera::{project, CameraIntrinsics};
use crate::error::{Error, Result};
use crate::skeleton::Pose3D;

/// Indices into the 32-joint export for the 16-joint layout
/// (hip, right leg, left leg, spine, thorax, head, left arm, right arm).
pub const H36M_32_TO_16: [usize; 16] = [0, 1, 2, 3, 6, 7, 8, 12, 13, 15, 17, 18, 19, 25, 26, 27];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H36mCamera {
    pub intrinsics: CameraIntrinsics,
    /// World-to-camera rotation, row major.
    pub rotation: [[f64; 3]; 3],
    /// Camera center in world coordinates, mm.
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H36mFrame {
    pub subject: String,
    pub action: String,
    pub camera: H36mCamera,
    /// 32 joints in world coordinates, mm.
    pub joints_world: Vec<[f64; 3]>,
}

impl H36mFrame {
    /// `X_c = R (X_w - T)`, then the 16-joint subset and an ideal projection.
    pub fn to_record(&self) -> Result<SampleRecord> {
        if self.joints_world.len() != 32 {
            return Err(Error::InvalidInput(format!("expected 32 world joints, got {}", self.joints_world.len())));
        }
        let r = &self.camera.rotation;
        let t = self.camera.translation;
        let joints = Pose3D(
            H36M_32_TO_16
                .iter()
                .map(|&k| {
                    let w = self.joints_world[k];
                    let d = [w[0] - t[0], w[1] - t[1], w[2] - t[2]];
                    [0, 1, 2].map(|i| r[i][0] * d[0] + r[i][1] * d[1] + r[i][2] * d[2])
                })
                .collect(),
        );
        let joints_2d = project(&joints, &self.camera.intrinsics)?;
        Ok(SampleRecord {
            joints_3d: joints,
            joints_2d,
            camera: self.camera.intrinsics,
            subject_id: self.subject.clone(),
            action_id: self.action.clone(),
        })
    }
}

/// Reads frames and converts each; errors carry the 1-based line number.
pub fn import_h36m(path: &Path) -> Result<Vec<SampleRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: H36mFrame =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        let rec = frame.to_record().map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        let index = out.len();
        rec.check().map_err(|message| Error::Validation { index, message })?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame() -> H36mFrame {
        let joints_world = (0..32).map(|k| [k as f64 * 10.0, -(k as f64) * 5.0, 900.0 + k as f64]).collect();
        H36mFrame {
            subject: "S9".into(),
            action: "Walking".into(),
            camera: H36mCamera {
                intrinsics: CameraIntrinsics { fx: 1145.0, fy: 1144.0, cx: 512.0, cy: 515.0, res_w: 1000, res_h: 1002 },
                // Camera looking along world +y, placed 5 m back.
                rotation: [[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]],
                translation: [0.0, -5000.0, 1000.0],
            },
            joints_world,
        }
    }

    #[test]
    fn converts_and_selects_joints() {
        let f = frame();
        let r = f.to_record().unwrap();
        assert_eq!(r.joints_3d.len(), 16);
        let w = f.joints_world[27];
        let c = r.joints_3d.0[15];
        assert_eq!(c, [w[0], -(w[2] - 1000.0), w[1] + 5000.0]);
        r.check().unwrap();
    }

    #[test]
    fn wrong_joint_count_rejected() {
        let mut f = frame();
        f.joints_world.pop();
        assert!(f.to_record().is_err());
    }

    #[test]
    fn file_import_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h36m.jsonl");
        let good = serde_json::to_string(&frame()).unwrap();
        std::fs::write(&p, format!("{good}\n{{\"subject\": 1}}\n")).unwrap();
        match import_h36m(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        std::fs::write(&p, format!("{good}\n{good}\n")).unwrap();
        assert_eq!(import_h36m(&p).unwrap().len(), 2);
    }
}
