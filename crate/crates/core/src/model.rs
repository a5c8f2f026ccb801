//! Prior-augmented input features and the 2D-to-3D lifting regressor.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::camera::{CameraFeatures, FocalMode};
use crate::data::{DatasetStats, SampleRecord};
use crate::error::{invalid, Error, Result};
use crate::losses::{combined_loss, DirectionNorm, LossWeights};
use crate::nn::{Matrix, NetConfig, Network};
use crate::parallel;
use crate::rng::Rng;
use crate::skeleton::{bone_lengths, root_center, Pose2D, Pose3D, SkeletonTopology};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Which priors are appended to the 2D joints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InputVariant {
    JointsOnly,
    JointsCamera,
    JointsBones,
    JointsCameraBones,
}

impl InputVariant {
    pub const ALL: [InputVariant; 4] =
        [InputVariant::JointsOnly, InputVariant::JointsCamera, InputVariant::JointsBones, InputVariant::JointsCameraBones];

    pub fn uses_camera(self) -> bool {
        matches!(self, InputVariant::JointsCamera | InputVariant::JointsCameraBones)
    }

    pub fn uses_bones(self) -> bool {
        matches!(self, InputVariant::JointsBones | InputVariant::JointsCameraBones)
    }

    pub fn input_width(self, topo: &SkeletonTopology, focal: FocalMode) -> usize {
        let mut w = 2 * topo.joint_count();
        if self.uses_bones() {
            w += topo.bone_count();
        }
        if self.uses_camera() {
            w += focal.width();
        }
        w
    }

    pub fn name(self) -> &'static str {
        match self {
            InputVariant::JointsOnly => "JOINTS_ONLY",
            InputVariant::JointsCamera => "JOINTS_CAMERA",
            InputVariant::JointsBones => "JOINTS_BONES",
            InputVariant::JointsCameraBones => "JOINTS_CAMERA_BONES",
        }
    }

    /// Row label in the ablation table.
    pub fn label(self) -> &'static str {
        match self {
            InputVariant::JointsOnly => "baseline",
            InputVariant::JointsCamera => "+ camera",
            InputVariant::JointsBones => "+ bone length",
            InputVariant::JointsCameraBones => "+ camera and bone length",
        }
    }
}

impl fmt::Display for InputVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InputVariant {
    type Err = Error;

    /// Accepts `JOINTS_CAMERA_BONES`, `joints-camera-bones` and similar.
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        InputVariant::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| Error::InvalidInput(format!("unknown input variant {s:?}")))
    }
}

/// Network input for one sample: standardized 2D joints, then standardized
/// bone lengths, then camera features, each only if the variant uses it.
/// Components the variant does not use are ignored even when supplied.
pub fn assemble_input(
    pose2d: &Pose2D,
    bones: Option<&[f64]>,
    camera: Option<&CameraFeatures>,
    stats: &DatasetStats,
    variant: InputVariant,
    focal: FocalMode,
) -> Result<Vec<f64>> {
    let joints = pose2d.flatten();
    if joints.len() != stats.joints_2d.len() {
        return invalid(format!("{} 2D values but statistics cover {}", joints.len(), stats.joints_2d.len()));
    }
    let mut out = stats.joints_2d.standardize(&joints);
    if variant.uses_bones() {
        let b = bones.ok_or_else(|| Error::InvalidInput(format!("{variant} needs bone lengths")))?;
        if b.len() != stats.bones.len() {
            return invalid(format!("{} bone lengths but statistics cover {}", b.len(), stats.bones.len()));
        }
        out.extend(stats.bones.standardize(b));
    }
    if variant.uses_camera() {
        let c = camera.ok_or_else(|| Error::InvalidInput(format!("{variant} needs camera features")))?;
        out.extend(c.to_vec(focal));
    }
    if let Some(v) = out.iter().find(|v| !v.is_finite()) {
        return invalid(format!("feature vector holds non-finite value {v}"));
    }
    Ok(out)
}

/// Features for a record, with bone lengths from its 3D ground truth.
pub fn record_features(
    rec: &SampleRecord,
    topo: &SkeletonTopology,
    stats: &DatasetStats,
    variant: InputVariant,
    focal: FocalMode,
) -> Result<Vec<f64>> {
    let bones = if variant.uses_bones() { Some(bone_lengths(&rec.joints_3d, topo)?) } else { None };
    let camera = if variant.uses_camera() { Some(CameraFeatures::from_intrinsics(&rec.camera)?) } else { None };
    assemble_input(&rec.joints_2d, bones.as_deref(), camera.as_ref(), stats, variant, focal)
}

/// Stacks [`record_features`] for every record.
pub fn build_inputs(
    records: &[SampleRecord],
    topo: &SkeletonTopology,
    stats: &DatasetStats,
    variant: InputVariant,
    focal: FocalMode,
) -> Result<Matrix> {
    let width = variant.input_width(topo, focal);
    let rows = parallel::map_slice(records, |r| record_features(r, topo, stats, variant, focal));
    let mut data = Vec::with_capacity(records.len() * width);
    for (i, r) in rows.into_iter().enumerate() {
        let r = r.map_err(|e| Error::Validation { index: i, message: e.to_string() })?;
        data.extend(r);
    }
    Matrix::new(records.len(), width, data)
}

/// Standardized root-relative 3D targets, one row per record.
pub fn build_targets(records: &[SampleRecord], topo: &SkeletonTopology, stats: &DatasetStats) -> Result<Matrix> {
    let width = 3 * topo.joint_count();
    let mut data = Vec::with_capacity(records.len() * width);
    for (i, r) in records.iter().enumerate() {
        if r.joints_3d.len() != topo.joint_count() {
            return Err(Error::Validation {
                index: i,
                message: format!("{} joints, topology has {}", r.joints_3d.len(), topo.joint_count()),
            });
        }
        data.extend(stats.joints_3d.standardize(&root_center(&r.joints_3d, topo).flatten()));
    }
    Matrix::new(records.len(), width, data)
}

/// Mean combined loss over a batch of standardized predictions. The root
/// joint is pinned to its target before the loss, so it contributes neither
/// error nor gradient.
pub fn batch_loss(
    pred: &Matrix,
    target: &Matrix,
    stats: &DatasetStats,
    topo: &SkeletonTopology,
    weights: LossWeights,
    norm: DirectionNorm,
) -> Result<(f64, Matrix)> {
    if pred.shape() != target.shape() {
        return invalid(format!("prediction {:?} vs target {:?}", pred.shape(), target.shape()));
    }
    let (n, width) = pred.shape();
    let root = topo.root_index();
    let mut grad = Matrix::zeros(n, width);
    let mut total = 0.0;
    for r in 0..n {
        let mut p = pred.row(r).to_vec();
        let t = target.row(r);
        p[3 * root..3 * root + 3].copy_from_slice(&t[3 * root..3 * root + 3]);
        let l = combined_loss(&p, t, &stats.joints_3d, topo, weights, norm)?;
        total += l.value;
        let g = grad.row_mut(r);
        for (k, v) in l.grad.iter().enumerate() {
            g[k] = v / n as f64;
        }
        g[3 * root..3 * root + 3].fill(0.0);
    }
    Ok((total / n as f64, grad))
}

/// Everything needed to rebuild a model, stored in the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: InputVariant,
    pub focal_mode: FocalMode,
    pub net: NetConfig,
    pub topology: SkeletonTopology,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftingNetwork {
    pub net: Network,
    pub variant: InputVariant,
    pub focal_mode: FocalMode,
    pub stats: DatasetStats,
    pub topology: SkeletonTopology,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model_config: ModelConfig,
    pub dataset_stats: DatasetStats,
    pub layers: Vec<LayerRecord>,
}

impl LiftingNetwork {
    /// `net` supplies hidden width, depth and regularization; its input and
    /// output widths are derived from the variant and topology.
    pub fn new(
        variant: InputVariant,
        focal_mode: FocalMode,
        stats: DatasetStats,
        topology: SkeletonTopology,
        net: NetConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let input_dim = variant.input_width(&topology, focal_mode);
        let output_dim = 3 * topology.joint_count();
        if stats.joints_2d.len() != 2 * topology.joint_count()
            || stats.joints_3d.len() != output_dim
            || stats.bones.len() != topology.bone_count()
        {
            return invalid("dataset statistics do not match the topology");
        }
        let net = Network::new(NetConfig { input_dim, output_dim, ..net }, rng)?;
        Ok(LiftingNetwork { net, variant, focal_mode, stats, topology })
    }

    pub fn input_width(&self) -> usize {
        self.net.config.input_dim
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            focal_mode: self.focal_mode,
            net: self.net.config.clone(),
            topology: self.topology.clone(),
        }
    }

    pub fn features(&self, rec: &SampleRecord) -> Result<Vec<f64>> {
        record_features(rec, &self.topology, &self.stats, self.variant, self.focal_mode)
    }

    fn to_pose(&self, standardized: &[f64]) -> Result<Pose3D> {
        let mut pose = Pose3D::from_flat(&self.stats.joints_3d.destandardize(standardized))?;
        pose.0[self.topology.root_index()] = [0.0; 3];
        Ok(pose)
    }

    /// Root-relative millimeter poses for a batch of feature rows (eval mode).
    pub fn predict_batch(&self, inputs: &Matrix) -> Result<Vec<Pose3D>> {
        if inputs.cols() != self.input_width() {
            return invalid(format!("feature width {} does not match model input {}", inputs.cols(), self.input_width()));
        }
        let out = self.net.predict(inputs)?;
        (0..out.rows()).map(|r| self.to_pose(out.row(r))).collect()
    }

    pub fn predict_pose(&self, feature: &[f64]) -> Result<Pose3D> {
        let m = Matrix::new(1, feature.len(), feature.to_vec())?;
        Ok(self.predict_batch(&m)?.remove(0))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            model_config: self.model_config(),
            dataset_stats: self.stats.clone(),
            layers: self
                .net
                .named_tensors()
                .into_iter()
                .map(|(name, shape, values)| LayerRecord { name, shape, values: values.to_vec() })
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return invalid(format!("unsupported checkpoint format version {}", ckpt.format_version));
        }
        let cfg = ckpt.model_config;
        // Initialization is overwritten below; any generator will do.
        let mut rng = crate::rng::seeded(0);
        let mut model = LiftingNetwork::new(cfg.variant, cfg.focal_mode, ckpt.dataset_stats, cfg.topology, cfg.net.clone(), &mut rng)?;
        if model.net.config != cfg.net {
            return invalid("checkpoint network widths do not match its variant and topology");
        }
        let expected: Vec<(String, Vec<usize>)> = model.net.named_tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
        for (layer, (name, shape)) in ckpt.layers.iter().zip(&expected) {
            if &layer.name == name && &layer.shape != shape {
                return invalid(format!("layer {name} has shape {:?}, expected {shape:?}", layer.shape));
            }
        }
        let tensors: Vec<(String, Vec<f64>)> = ckpt.layers.into_iter().map(|l| (l.name, l.values)).collect();
        model.net.load_named(&tensors)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &self.to_checkpoint())?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        Self::from_checkpoint(ckpt)
    }
}
