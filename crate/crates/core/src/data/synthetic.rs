//! Synthetic skeleton poses seen through a pool of pinhole cameras.
//!
//! Each subject draws its bone lengths once (global body scale times a small
//! per-bone jitter around nominal lengths). Each sample draws per-bone Euler
//! rotations within the joint limits of its action, chains them down the
//! tree, applies a random global orientation, places the root at a random
//! depth and image position, then projects with a pool camera.
//!
//! Body frame: +y up, +x toward the subject's left, +z toward the subject's
//! front. Camera frame: +x right, +y down, +z forward; the body is turned to
//! face the camera at zero yaw.

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SampleRecord;
use crate::camera::{project, CameraIntrinsics};
use crate::error::{invalid, Error, Result};
use crate::rng::{self, Domain, Rng};
use crate::skeleton::{Pose2D, Pose3D, SkeletonTopology};

const DEFAULT_CONFIG: &str = include_str!("../../configs/synthetic.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoneSpec {
    pub length_mm: f64,
    pub rest_direction: [f64; 3],
}

/// Euler ranges in degrees, applied as `Rz * Ry * Rx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisLimits {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionPreset {
    pub name: String,
    /// Overrides of the base limits, keyed by child joint name.
    #[serde(default)]
    pub limits: BTreeMap<String, AxisLimits>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub subject_scale: [f64; 2],
    pub bone_jitter: f64,
    /// Keyed by child joint name.
    pub bones: BTreeMap<String, BoneSpec>,
    /// Keyed by child joint name: rotation of that bone about its parent joint.
    pub joint_limits_deg: BTreeMap<String, AxisLimits>,
    pub actions: Vec<ActionPreset>,
    pub global_yaw_deg: [f64; 2],
    pub global_pitch_deg: [f64; 2],
    pub global_roll_deg: [f64; 2],
    pub root_depth_mm: [f64; 2],
    /// Fraction of the image width/height kept clear on each side when
    /// choosing the root's pixel.
    pub root_image_margin: f64,
    pub min_joint_depth_mm: f64,
    pub max_retries: u32,
    pub camera_pool: Vec<CameraIntrinsics>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_CONFIG).expect("bundled generator config parses")
    }
}

/// Per-subject bone lengths in bone order; constant across the subject's samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub subject_id: String,
    pub bone_lengths: Vec<f64>,
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return invalid(format!("{name} range [{}, {}] is invalid", r[0], r[1]));
    }
    Ok(())
}

impl GeneratorConfig {
    pub fn validate(&self, topo: &SkeletonTopology) -> Result<()> {
        check_range("subject_scale", self.subject_scale)?;
        if !(self.subject_scale[0] > 0.0) {
            return invalid("subject_scale must be positive");
        }
        if !(0.0..1.0).contains(&self.bone_jitter) {
            return invalid(format!("bone_jitter {} must lie in [0, 1)", self.bone_jitter));
        }
        for &(c, _) in topo.bones() {
            let name = &topo.joint_names()[c];
            let b = self.bones.get(name).ok_or_else(|| Error::InvalidInput(format!("no bone spec for joint {name}")))?;
            if !(b.length_mm > 0.0) {
                return invalid(format!("bone {name} length must be positive"));
            }
            if !(b.rest_direction.iter().map(|v| v * v).sum::<f64>() > 0.0) {
                return invalid(format!("bone {name} rest direction is zero"));
            }
            if !self.joint_limits_deg.contains_key(name) {
                return invalid(format!("no joint limits for {name}"));
            }
        }
        for (name, l) in self.joint_limits_deg.iter().chain(self.actions.iter().flat_map(|a| a.limits.iter())) {
            if topo.joint_index(name).is_none() {
                return invalid(format!("joint limits name unknown joint {name}"));
            }
            check_range(name, l.x)?;
            check_range(name, l.y)?;
            check_range(name, l.z)?;
        }
        if self.actions.is_empty() {
            return invalid("at least one action preset is required");
        }
        check_range("global_yaw_deg", self.global_yaw_deg)?;
        check_range("global_pitch_deg", self.global_pitch_deg)?;
        check_range("global_roll_deg", self.global_roll_deg)?;
        check_range("root_depth_mm", self.root_depth_mm)?;
        if !(self.root_depth_mm[0] > 0.0) {
            return invalid("root depth range must be positive");
        }
        if !(0.0..0.5).contains(&self.root_image_margin) {
            return invalid("root_image_margin must lie in [0, 0.5)");
        }
        if self.camera_pool.is_empty() {
            return invalid("camera pool is empty");
        }
        for k in &self.camera_pool {
            k.validate()?;
        }
        if self.max_retries == 0 {
            return invalid("max_retries must be at least 1");
        }
        Ok(())
    }

    pub fn subject_profile(&self, topo: &SkeletonTopology, subject: u32, seed: u64) -> SubjectProfile {
        let mut rng = rng::stream(seed, Domain::Subject, subject as u64);
        let scale = uniform(&mut rng, self.subject_scale);
        let j = self.bone_jitter;
        let bone_lengths = topo
            .bones()
            .iter()
            .map(|&(c, _)| {
                let nominal = self.bones[&topo.joint_names()[c]].length_mm;
                nominal * scale * (1.0 + uniform(&mut rng, [-j, j]))
            })
            .collect();
        SubjectProfile { subject_id: subject_name(subject), bone_lengths }
    }
}

pub fn subject_name(subject: u32) -> String {
    format!("S{subject}")
}

fn uniform(rng: &mut Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        // Still consume a draw so streams stay aligned across configs.
        let _: f64 = rng.random();
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

type Mat3 = [[f64; 3]; 3];

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn mat_vec(a: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2])
}

fn rot_x(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn rot_y(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

fn rot_z(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

fn euler_zyx(x_deg: f64, y_deg: f64, z_deg: f64) -> Mat3 {
    mat_mul(&mat_mul(&rot_z(z_deg.to_radians()), &rot_y(y_deg.to_radians())), &rot_x(x_deg.to_radians()))
}

/// Root-at-origin pose in the body frame.
fn pose_body_frame(
    cfg: &GeneratorConfig,
    topo: &SkeletonTopology,
    lengths: &[f64],
    action: &ActionPreset,
    global: &Mat3,
    rng: &mut Rng,
) -> Vec<[f64; 3]> {
    let n = topo.joint_count();
    let mut bone_rot: Vec<Mat3> = vec![*global; n];
    let mut pos = vec![[0.0; 3]; n];
    // Draw every bone's angles in bone order so the stream layout does not
    // depend on traversal order.
    let local: Vec<Mat3> = topo
        .bones()
        .iter()
        .map(|&(c, _)| {
            let name = &topo.joint_names()[c];
            let lim = action.limits.get(name).unwrap_or(&cfg.joint_limits_deg[name]);
            let (x, y, z) = (uniform(rng, lim.x), uniform(rng, lim.y), uniform(rng, lim.z));
            euler_zyx(x, y, z)
        })
        .collect();
    for &j in &topo.traversal_order()[1..] {
        let p = topo.parent(j).expect("non-root");
        let b = topo.bone_of_child(j).expect("non-root");
        let parent_rot = if p == topo.root_index() { *global } else { bone_rot[p] };
        bone_rot[j] = mat_mul(&parent_rot, &local[b]);
        let spec = &cfg.bones[&topo.joint_names()[j]];
        let d = spec.rest_direction;
        let dn = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let offset = mat_vec(&bone_rot[j], [d[0] / dn * lengths[b], d[1] / dn * lengths[b], d[2] / dn * lengths[b]]);
        pos[j] = [pos[p][0] + offset[0], pos[p][1] + offset[1], pos[p][2] + offset[2]];
    }
    pos
}

fn sample_record(
    cfg: &GeneratorConfig,
    topo: &SkeletonTopology,
    profile: &SubjectProfile,
    subject: u32,
    index: usize,
    noise_px: f64,
    seed: u64,
) -> Result<SampleRecord> {
    let mut rng = rng::stream(seed, Domain::Sample, ((subject as u64) << 32) | index as u64);
    let action = &cfg.actions[index % cfg.actions.len()];
    let camera = cfg.camera_pool[rng.random_range(0..cfg.camera_pool.len())];

    for _ in 0..cfg.max_retries {
        let yaw = uniform(&mut rng, cfg.global_yaw_deg);
        let pitch = uniform(&mut rng, cfg.global_pitch_deg);
        let roll = uniform(&mut rng, cfg.global_roll_deg);
        let global = mat_mul(&rot_y(yaw.to_radians()), &mat_mul(&rot_x(pitch.to_radians()), &rot_z(roll.to_radians())));
        let body = pose_body_frame(cfg, topo, &profile.bone_lengths, action, &global, &mut rng);

        let depth = uniform(&mut rng, cfg.root_depth_mm);
        let m = cfg.root_image_margin;
        let (w, h) = (camera.res_w as f64, camera.res_h as f64);
        let u = uniform(&mut rng, [m * w, (1.0 - m) * w]);
        let v = uniform(&mut rng, [m * h, (1.0 - m) * h]);
        let root = [(u - camera.cx) * depth / camera.fx, (v - camera.cy) * depth / camera.fy, depth];

        // Half turn about x: body up becomes image up, body front faces the camera.
        let joints = Pose3D(body.iter().map(|p| [root[0] + p[0], root[1] - p[1], root[2] - p[2]]).collect());
        if joints.0.iter().any(|p| p[2] < cfg.min_joint_depth_mm) {
            continue;
        }
        let mut joints_2d: Pose2D = project(&joints, &camera)?;
        if noise_px > 0.0 {
            let normal = Normal::new(0.0, noise_px).map_err(|e| Error::InvalidInput(e.to_string()))?;
            for p in joints_2d.0.iter_mut() {
                p[0] += normal.sample(&mut rng);
                p[1] += normal.sample(&mut rng);
            }
        }
        return Ok(SampleRecord {
            joints_3d: joints,
            joints_2d,
            camera,
            subject_id: profile.subject_id.clone(),
            action_id: action.name.clone(),
        });
    }
    Err(Error::Generation {
        sample: format!("{}/{}", profile.subject_id, index),
        message: format!("a joint stayed closer than {} mm after {} attempts", cfg.min_joint_depth_mm, cfg.max_retries),
    })
}

/// Generates `samples_per_subject` records for each listed subject index.
/// Output is ordered by subject, then sample index, and depends only on
/// `(cfg, topo, subjects, samples_per_subject, noise_px, seed)`.
pub fn generate_synthetic(
    cfg: &GeneratorConfig,
    topo: &SkeletonTopology,
    subjects: &[u32],
    samples_per_subject: usize,
    noise_px: f64,
    seed: u64,
) -> Result<Vec<SampleRecord>> {
    cfg.validate(topo)?;
    if !(noise_px >= 0.0 && noise_px.is_finite()) {
        return invalid(format!("noise_px {noise_px} must be non-negative"));
    }
    let profiles: Vec<SubjectProfile> = subjects.iter().map(|&s| cfg.subject_profile(topo, s, seed)).collect();
    let total = subjects.len() * samples_per_subject;
    let results = crate::parallel::map_range(total, |k| {
        let si = k / samples_per_subject;
        sample_record(cfg, topo, &profiles[si], subjects[si], k % samples_per_subject, noise_px, seed)
    });
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::bone_lengths;

    #[test]
    fn default_config_is_valid() {
        let cfg = GeneratorConfig::default();
        cfg.validate(&SkeletonTopology::default()).unwrap();
        assert_eq!(cfg.camera_pool.len(), 6);
    }

    #[test]
    fn rotations_are_proper() {
        let r = euler_zyx(30.0, -45.0, 110.0);
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        assert!((det - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noiseless_samples_reproject() {
        let topo = SkeletonTopology::default();
        let recs = generate_synthetic(&GeneratorConfig::default(), &topo, &[1, 2], 30, 0.0, 5).unwrap();
        assert_eq!(recs.len(), 60);
        for r in &recs {
            let p = project(&r.joints_3d, &r.camera).unwrap();
            for (a, b) in p.0.iter().zip(&r.joints_2d.0) {
                assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
            }
            assert!(r.joints_3d.0.iter().all(|p| p[2] > 0.0));
            r.check().unwrap();
        }
    }

    #[test]
    fn subject_bones_are_rigid() {
        let topo = SkeletonTopology::default();
        let recs = generate_synthetic(&GeneratorConfig::default(), &topo, &[3], 100, 1.0, 9).unwrap();
        let first = bone_lengths(&recs[0].joints_3d, &topo).unwrap();
        for r in &recs {
            let l = bone_lengths(&r.joints_3d, &topo).unwrap();
            assert!(l.iter().zip(&first).all(|(a, b)| (a - b).abs() < 1e-9));
        }
    }

    #[test]
    fn femur_range_matches_documentation() {
        let topo = SkeletonTopology::default();
        let cfg = GeneratorConfig::default();
        let femur = topo.bone_of_child(topo.joint_index("l_knee").unwrap()).unwrap();
        // 420 mm nominal, body scale 0.8..1.2, 1.5% per-bone jitter.
        let mut sum = 0.0;
        for s in 0..200 {
            let l = cfg.subject_profile(&topo, s, 1).bone_lengths[femur];
            assert!((331.0..=512.0).contains(&l), "{l}");
            sum += l;
        }
        assert!((sum / 200.0 - 420.0).abs() < 15.0);
    }

    #[test]
    fn same_seed_same_data() {
        let topo = SkeletonTopology::default();
        let cfg = GeneratorConfig::default();
        let a = generate_synthetic(&cfg, &topo, &[1, 5], 20, 2.0, 7).unwrap();
        let b = generate_synthetic(&cfg, &topo, &[1, 5], 20, 2.0, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&cfg, &topo, &[1, 5], 20, 2.0, 8).unwrap();
        assert_ne!(a, c);
        // Subject streams do not depend on which other subjects are generated.
        let only5 = generate_synthetic(&cfg, &topo, &[5], 20, 2.0, 7).unwrap();
        assert_eq!(&a[20..], &only5[..]);
    }

    #[test]
    fn impossible_depth_fails_with_sample_name() {
        let topo = SkeletonTopology::default();
        let cfg = GeneratorConfig { min_joint_depth_mm: 1e9, max_retries: 2, ..GeneratorConfig::default() };
        match generate_synthetic(&cfg, &topo, &[4], 1, 0.0, 0) {
            Err(Error::Generation { sample, .. }) => assert_eq!(sample, "S4/0"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_catches_bad_config() {
        let topo = SkeletonTopology::default();
        let mut cfg = GeneratorConfig::default();
        cfg.bones.remove("head");
        assert!(cfg.validate(&topo).is_err());
        let cfg = GeneratorConfig { camera_pool: vec![], ..GeneratorConfig::default() };
        assert!(cfg.validate(&topo).is_err());
        let cfg = GeneratorConfig { root_depth_mm: [5.0, 1.0], ..GeneratorConfig::default() };
        assert!(cfg.validate(&topo).is_err());
        assert!(generate_synthetic(&GeneratorConfig::default(), &topo, &[1], 1, -1.0, 0).is_err());
    }
}
