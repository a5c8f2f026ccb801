//! Pinhole camera model and intrinsics normalization for network input.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::Ray;
use crate::skeleton::{Pose2D, Pose3D};

/// Pinhole intrinsics in pixels plus the image resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub res_w: u32,
    pub res_h: u32,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite {
            return invalid("camera intrinsics must be finite");
        }
        if self.res_w == 0 || self.res_h == 0 {
            return invalid(format!("resolution {}x{} must be positive", self.res_w, self.res_h));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return invalid(format!("focal lengths ({}, {}) must be positive", self.fx, self.fy));
        }
        let (w, h) = (self.res_w as f64, self.res_h as f64);
        if !(0.0..=w).contains(&self.cx) || !(0.0..=h).contains(&self.cy) {
            return invalid(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.res_w, self.res_h
            ));
        }
        Ok(())
    }
}

/// Which focal terms go into the feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FocalMode {
    /// `[cx_n, cy_n, fx_n, fy_n]`
    #[default]
    Both,
    /// `[cx_n, cy_n, fx_n]`, a single focal length.
    Single,
}

impl FocalMode {
    pub fn width(self) -> usize {
        match self {
            FocalMode::Both => 4,
            FocalMode::Single => 3,
        }
    }
}

/// Dimensionless camera features, already in network-input range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraFeatures {
    pub cx_n: f64,
    pub cy_n: f64,
    pub fx_n: f64,
    pub fy_n: f64,
}

impl CameraFeatures {
    pub fn from_intrinsics(k: &CameraIntrinsics) -> Result<Self> {
        let (cx_n, cy_n) = normalize_focus(k)?;
        let (fx_n, fy_n) = normalize_focal(k)?;
        Ok(CameraFeatures { cx_n, cy_n, fx_n, fy_n })
    }

    pub fn to_vec(&self, mode: FocalMode) -> Vec<f64> {
        match mode {
            FocalMode::Both => vec![self.cx_n, self.cy_n, self.fx_n, self.fy_n],
            FocalMode::Single => vec![self.cx_n, self.cy_n, self.fx_n],
        }
    }
}

fn width(k: &CameraIntrinsics) -> Result<f64> {
    if k.res_w == 0 {
        return invalid("resolution width is zero");
    }
    Ok(k.res_w as f64)
}

/// Principal point mapped so x spans [-1, 1]; y is divided by the width too,
/// preserving aspect ratio, and spans [-h/w, h/w].
pub fn normalize_focus(k: &CameraIntrinsics) -> Result<(f64, f64)> {
    let w = width(k)?;
    let h = k.res_h as f64;
    Ok((2.0 * k.cx / w - 1.0, 2.0 * k.cy / w - h / w))
}

/// Focal lengths scaled by `2 / w`.
pub fn normalize_focal(k: &CameraIntrinsics) -> Result<(f64, f64)> {
    let w = width(k)?;
    Ok((2.0 * k.fx / w, 2.0 * k.fy / w))
}

/// Perspective projection `u = fx x / z + cx`, `v = fy y / z + cy`.
pub fn project(pose: &Pose3D, k: &CameraIntrinsics) -> Result<Pose2D> {
    pose.0
        .iter()
        .enumerate()
        .map(|(j, p)| project_point(*p, k).ok_or(Error::BehindCamera { joint: j, z: p[2] }))
        .collect::<Result<Vec<_>>>()
        .map(Pose2D)
}

pub(crate) fn project_point(p: [f64; 3], k: &CameraIntrinsics) -> Option<[f64; 2]> {
    if !(p[2] > 0.0) {
        return None;
    }
    Some([k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy])
}

/// Ray from the camera center through pixel `(u, v)`.
pub fn pixel_ray(pixel: [f64; 2], k: &CameraIntrinsics) -> Ray {
    let d = [(pixel[0] - k.cx) / k.fx, (pixel[1] - k.cy) / k.fy, 1.0];
    Ray::new([0.0; 3], d)
}
