//! Training loop, ablation runner and the lifting-network gradient check.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::camera::{project, FocalMode};
use crate::data::{compute_stats, DatasetStats, SampleRecord, Standardizer};
use crate::error::{invalid, Error, Result};
use crate::eval::{evaluate_features, EvalReport};
use crate::losses::{DirectionNorm, LossWeights};
use crate::model::{batch_loss, build_inputs, build_targets, record_features, InputVariant, LiftingNetwork};
use crate::nn::{fd_gradcheck, AdamState, GradCheckConfig, GradCheckReport, Matrix, Mode, NetConfig, Network};
use crate::parallel;
use crate::rng::{self, Domain};
use crate::skeleton::{root_center, Pose3D, SkeletonTopology};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub loss_weights: LossWeights,
    pub direction_norm: DirectionNorm,
    pub variant: InputVariant,
    pub focal_mode: FocalMode,
    pub seed: u64,
    pub hidden_dim: usize,
    pub residual_blocks: usize,
    pub keep_prob: f64,
    /// Skeleton resampling of training samples: every bone is stretched
    /// along its own direction by `s * (1 + u)`, `s ~ U[1 - scale, 1 + scale]`
    /// shared by the sample and `u ~ U[-bone, bone]` per bone. The pose is
    /// rebuilt from the root and reprojected through the sample's camera,
    /// keeping its original 2D noise, so each draw is a consistent
    /// observation of a new body. 0 and 0 disable it.
    pub scale_augmentation: f64,
    pub bone_augmentation: f64,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
            lr_decay: 0.96,
            lr_decay_every: 4,
            loss_weights: LossWeights::default(),
            direction_norm: DirectionNorm::default(),
            variant: InputVariant::JointsCameraBones,
            focal_mode: FocalMode::default(),
            seed: 0,
            hidden_dim: 1024,
            residual_blocks: 2,
            keep_prob: 0.5,
            scale_augmentation: 0.0,
            bone_augmentation: 0.0,
            train_path: None,
            test_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return invalid("epochs must be at least 1");
        }
        if self.batch_size < 2 {
            return invalid("batch size must be at least 2 for batch normalization");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return invalid(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.lr_decay_every == 0 {
            return invalid("lr_decay must lie in (0, 1] and lr_decay_every be positive");
        }
        for (name, v) in [("scale_augmentation", self.scale_augmentation), ("bone_augmentation", self.bone_augmentation)] {
            if !(0.0..1.0).contains(&v) {
                return invalid(format!("{name} {v} must lie in [0, 1)"));
            }
        }
        self.loss_weights.validate()?;
        self.net_config().validate()
    }

    /// Hidden layout; input and output widths are filled in by the model.
    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            hidden_dim: self.hidden_dim,
            residual_blocks: self.residual_blocks,
            keep_prob: self.keep_prob,
            ..NetConfig::default()
        }
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub mpjpe: f64,
    pub p_mpjpe: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_model: LiftingNetwork,
    pub best_model: LiftingNetwork,
    /// 1-based epoch of the best model.
    pub best_epoch: usize,
    pub best_report: EvalReport,
    pub final_report: EvalReport,
    pub log: Vec<EpochMetrics>,
}

fn check_split(records: &[SampleRecord], topo: &SkeletonTopology, split: &str) -> Result<()> {
    if records.is_empty() {
        return invalid(format!("{split} split is empty"));
    }
    for (i, r) in records.iter().enumerate() {
        if r.joints_3d.len() != topo.joint_count() {
            return invalid(format!(
                "{split} record {i} has {} joints, topology has {}",
                r.joints_3d.len(),
                topo.joint_count()
            ));
        }
        r.check().map_err(|message| Error::Validation { index: i, message })?;
    }
    Ok(())
}

fn diverged(epoch: usize, batch: usize, what: impl std::fmt::Display) -> Error {
    Error::Diverged(format!("epoch {} batch {batch}: {what}", epoch + 1))
}

/// Trains on `train`, evaluating on `test` after every epoch. Statistics
/// come from the training split only. Everything random is derived from
/// `cfg.seed`, so equal inputs give bit-identical models and logs.
pub fn train(cfg: &TrainConfig, train: &[SampleRecord], test: &[SampleRecord], topo: &SkeletonTopology) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_split(train, topo, "train")?;
    check_split(test, topo, "test")?;
    let stats = compute_stats(train, topo)?;
    let mut model = LiftingNetwork::new(
        cfg.variant,
        cfg.focal_mode,
        stats.clone(),
        topo.clone(),
        cfg.net_config(),
        &mut rng::stream(cfg.seed, Domain::Init, 0),
    )?;
    let x_train = build_inputs(train, topo, &stats, cfg.variant, cfg.focal_mode)?;
    let y_train = build_targets(train, topo, &stats)?;
    let x_test = build_inputs(test, topo, &stats, cfg.variant, cfg.focal_mode)?;
    let augment = cfg.scale_augmentation > 0.0 || cfg.bone_augmentation > 0.0;

    let tensor_lens: Vec<usize> = model.net.trainable().iter().map(|t| t.len()).collect();
    let mut adam = AdamState::new(&tensor_lens, cfg.learning_rate);
    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(LiftingNetwork, usize, EvalReport)> = None;
    let mut last_report = None;

    for epoch in 0..cfg.epochs {
        adam.learning_rate = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng::stream(cfg.seed, Domain::Shuffle, epoch as u64));
        let mut dropout_rng = rng::stream(cfg.seed, Domain::Dropout, epoch as u64);
        let mut augment_rng = rng::stream(cfg.seed, Domain::Augment, epoch as u64);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let mut x = x_train.gather_rows(idx);
            let mut y = y_train.gather_rows(idx);
            if augment {
                augment_batch(cfg, train, idx, topo, &stats, &mut x, &mut y, &mut augment_rng)?;
            }
            let (out, cache) = model.net.forward(&x, Mode::TRAIN, &mut dropout_rng).map_err(|e| match e {
                Error::NumericOverflow(m) => diverged(epoch, b, m),
                e => e,
            })?;
            let (loss, dout) = batch_loss(&out, &y, &stats, topo, cfg.loss_weights, cfg.direction_norm)?;
            if !loss.is_finite() {
                return Err(diverged(epoch, b, format!("loss is {loss}")));
            }
            let grads = model.net.backward(&cache, &dout)?;
            adam.step(&mut model.net.trainable_mut(), &grads.params).map_err(|e| match e {
                Error::NumericOverflow(m) => diverged(epoch, b, m),
                e => e,
            })?;
            model.net.update_running_stats(&cache)?;
            loss_sum += loss;
            batches += 1;
        }
        let report = evaluate_features(&model, &x_test, test)?;
        log.push(EpochMetrics {
            epoch: epoch + 1,
            train_loss: loss_sum / batches.max(1) as f64,
            mpjpe: report.mpjpe_mm,
            p_mpjpe: report.p_mpjpe_mm,
        });
        if best.as_ref().is_none_or(|(_, _, r)| report.mpjpe_mm < r.mpjpe_mm) {
            best = Some((model.clone(), epoch + 1, report.clone()));
        }
        last_report = Some(report);
    }

    let (best_model, best_epoch, best_report) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        final_model: model,
        best_model,
        best_epoch,
        best_report,
        final_report: last_report.expect("at least one epoch"),
        log,
    })
}

/// Millimeter targets and bone lengths kept for on-the-fly rescaling.
/// `rec` with every bone `b` scaled by `factors[b]` about its parent joint.
/// `None` when a rebuilt joint would land behind the camera.
fn resample_skeleton(rec: &SampleRecord, topo: &SkeletonTopology, factors: &[f64]) -> Result<Option<SampleRecord>> {
    let old = &rec.joints_3d.0;
    let projected = project(&rec.joints_3d, &rec.camera)?;
    let mut new = old.clone();
    for &j in topo.traversal_order() {
        let (Some(p), Some(b)) = (topo.parent(j), topo.bone_of_child(j)) else { continue };
        for k in 0..3 {
            new[j][k] = new[p][k] + factors[b] * (old[j][k] - old[p][k]);
        }
        if new[j][2] <= 0.0 {
            return Ok(None);
        }
    }
    let joints_3d = Pose3D(new);
    let mut joints_2d = project(&joints_3d, &rec.camera)?;
    for ((q, o), n) in joints_2d.0.iter_mut().zip(&projected.0).zip(&rec.joints_2d.0) {
        q[0] += n[0] - o[0];
        q[1] += n[1] - o[1];
    }
    Ok(Some(SampleRecord { joints_3d, joints_2d, ..rec.clone() }))
}

#[allow(clippy::too_many_arguments)]
fn augment_batch(
    cfg: &TrainConfig,
    records: &[SampleRecord],
    idx: &[usize],
    topo: &SkeletonTopology,
    stats: &DatasetStats,
    x: &mut Matrix,
    y: &mut Matrix,
    rng: &mut rng::Rng,
) -> Result<()> {
    let (rs, rb) = (cfg.scale_augmentation, cfg.bone_augmentation);
    for (row, &i) in idx.iter().enumerate() {
        let s = rng.random_range(1.0 - rs..=1.0 + rs);
        let factors: Vec<f64> = (0..topo.bone_count()).map(|_| s * rng.random_range(1.0 - rb..=1.0 + rb)).collect();
        let Some(rec) = resample_skeleton(&records[i], topo, &factors)? else { continue };
        x.row_mut(row).copy_from_slice(&record_features(&rec, topo, stats, cfg.variant, cfg.focal_mode)?);
        let target = stats.joints_3d.standardize(&root_center(&rec.joints_3d, topo).flatten());
        y.row_mut(row).copy_from_slice(&target);
    }
    Ok(())
}

/// `epoch,train_loss,mpjpe,p_mpjpe`
pub fn write_metrics_csv(log: &[EpochMetrics], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for m in log {
        w.serialize(m)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub variant: InputVariant,
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best: EvalReport,
    #[serde(rename = "final")]
    pub last: EvalReport,
}

impl TrainOutcome {
    pub fn summary(&self, cfg: &TrainConfig) -> TrainSummary {
        TrainSummary {
            variant: cfg.variant,
            seed: cfg.seed,
            epochs: cfg.epochs,
            best_epoch: self.best_epoch,
            best: self.best_report.clone(),
            last: self.final_report.clone(),
        }
    }
}

/// One train+eval of the ablation matrix, reported at its best epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: String,
    pub variant: InputVariant,
    pub direction_loss: bool,
    pub w_mse: f64,
    pub w_dir: f64,
    pub seed: u64,
    /// Protocol 1 and 2 errors of the final-epoch model.
    pub p1_mpjpe_mm: f64,
    pub p2_p_mpjpe_mm: f64,
    /// For reference only; picking it looks at the test split.
    pub best_epoch: usize,
    pub best_p1_mpjpe_mm: f64,
}

/// Seed-averaged row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummaryRow {
    pub method: String,
    pub variant: InputVariant,
    pub direction_loss: bool,
    pub seeds: usize,
    pub p1_mpjpe_mm: f64,
    pub p2_p_mpjpe_mm: f64,
}

pub fn method_label(variant: InputVariant, direction_loss: bool) -> String {
    if direction_loss {
        format!("{} + direction loss", variant.label())
    } else {
        variant.label().to_string()
    }
}

/// Weights used for a cell: MSE only, or the default MSE/direction mix.
pub fn cell_weights(direction_loss: bool) -> LossWeights {
    if direction_loss {
        LossWeights::default()
    } else {
        LossWeights::MSE_ONLY
    }
}

/// Trains every (variant, direction-loss setting, seed) cell on the same
/// data. Rows come back in that nesting order. Cells are independent and
/// run concurrently when parallel execution is enabled.
pub fn run_ablation(
    base: &TrainConfig,
    variants: &[InputVariant],
    direction_settings: &[bool],
    seeds: &[u64],
    train_set: &[SampleRecord],
    test_set: &[SampleRecord],
    topo: &SkeletonTopology,
) -> Result<Vec<AblationRow>> {
    if variants.is_empty() || direction_settings.is_empty() || seeds.is_empty() {
        return invalid("ablation needs at least one variant, loss setting and seed");
    }
    let mut cells = Vec::new();
    for &v in variants {
        for &d in direction_settings {
            for &s in seeds {
                cells.push((v, d, s));
            }
        }
    }
    parallel::map_slice(&cells, |&(variant, direction_loss, seed)| {
        let weights = cell_weights(direction_loss);
        let cfg = TrainConfig { variant, loss_weights: weights, seed, ..base.clone() };
        let out = train(&cfg, train_set, test_set, topo)?;
        Ok(AblationRow {
            method: method_label(variant, direction_loss),
            variant,
            direction_loss,
            w_mse: weights.w_mse,
            w_dir: weights.w_dir,
            seed,
            p1_mpjpe_mm: out.final_report.mpjpe_mm,
            p2_p_mpjpe_mm: out.final_report.p_mpjpe_mm,
            best_epoch: out.best_epoch,
            best_p1_mpjpe_mm: out.best_report.mpjpe_mm,
        })
    })
    .into_iter()
    .collect()
}

/// Averages rows over seeds, keeping first-appearance order of the cells.
pub fn summarize_ablation(rows: &[AblationRow]) -> Vec<AblationSummaryRow> {
    let mut out: Vec<AblationSummaryRow> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|s| s.variant == r.variant && s.direction_loss == r.direction_loss) {
            Some(s) => {
                s.seeds += 1;
                s.p1_mpjpe_mm += r.p1_mpjpe_mm;
                s.p2_p_mpjpe_mm += r.p2_p_mpjpe_mm;
            }
            None => out.push(AblationSummaryRow {
                method: r.method.clone(),
                variant: r.variant,
                direction_loss: r.direction_loss,
                seeds: 1,
                p1_mpjpe_mm: r.p1_mpjpe_mm,
                p2_p_mpjpe_mm: r.p2_p_mpjpe_mm,
            }),
        }
    }
    for s in &mut out {
        s.p1_mpjpe_mm /= s.seeds as f64;
        s.p2_p_mpjpe_mm /= s.seeds as f64;
    }
    out
}

pub fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Inputs of a finite-difference check of the full lifting network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckSetup {
    pub seed: u64,
    pub batch_size: usize,
    pub hidden_dim: usize,
    pub residual_blocks: usize,
    pub variant: InputVariant,
    pub loss_weights: LossWeights,
    pub epsilon: f64,
    pub tolerance: f64,
    pub entries_per_tensor: usize,
}

impl Default for GradCheckSetup {
    fn default() -> Self {
        GradCheckSetup {
            seed: 0,
            batch_size: 8,
            hidden_dim: 1024,
            residual_blocks: 2,
            variant: InputVariant::JointsCameraBones,
            loss_weights: LossWeights::default(),
            epsilon: 1e-4,
            tolerance: 1e-4,
            entries_per_tensor: 16,
        }
    }
}

/// Checks the network plus the training loss (root pinning, MSE and
/// direction terms) against central differences. Inputs and targets are
/// standard normal and the target statistics are unit, which keeps the loss
/// near 1 so round-off in the differences stays far below the tolerance.
pub fn gradcheck_lifting(setup: &GradCheckSetup, topo: &SkeletonTopology) -> Result<GradCheckReport> {
    let cfg = NetConfig {
        input_dim: setup.variant.input_width(topo, FocalMode::Both),
        output_dim: 3 * topo.joint_count(),
        hidden_dim: setup.hidden_dim,
        residual_blocks: setup.residual_blocks,
        ..NetConfig::default()
    };
    let net = Network::new(cfg.clone(), &mut rng::stream(setup.seed, Domain::Init, 0))?;
    let mut data_rng = rng::stream(setup.seed, Domain::GradCheck, 1);
    let mut normal = |rows: usize, cols: usize| -> Result<Matrix> {
        Matrix::new(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(&mut data_rng)).collect())
    };
    let input = normal(setup.batch_size, cfg.input_dim)?;
    let target = normal(setup.batch_size, cfg.output_dim)?;
    let unit = |n: usize| Standardizer { mean: vec![0.0; n], std: vec![1.0; n] };
    let stats = DatasetStats {
        sample_count: setup.batch_size,
        joints_2d: unit(2 * topo.joint_count()),
        joints_3d: unit(3 * topo.joint_count()),
        bones: unit(topo.bone_count()),
    };
    let check = GradCheckConfig {
        epsilon: setup.epsilon,
        tolerance: setup.tolerance,
        entries_per_tensor: setup.entries_per_tensor,
        seed: setup.seed,
    };
    let weights = setup.loss_weights;
    fd_gradcheck(&net, &input, |out| batch_loss(out, &target, &stats, topo, weights, DirectionNorm::PerComponent), &check)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, GeneratorConfig};

    fn tiny() -> TrainConfig {
        TrainConfig { epochs: 2, batch_size: 16, hidden_dim: 24, ..TrainConfig::default() }
    }

    fn data() -> (SkeletonTopology, Vec<SampleRecord>, Vec<SampleRecord>) {
        let topo = SkeletonTopology::default();
        let g = GeneratorConfig::default();
        let tr = generate_synthetic(&g, &topo, &[1, 5], 60, 1.0, 11).unwrap();
        let te = generate_synthetic(&g, &topo, &[9], 30, 1.0, 11).unwrap();
        (topo, tr, te)
    }

    #[test]
    fn validation() {
        assert!(TrainConfig { epochs: 0, ..tiny() }.validate().is_err());
        assert!(TrainConfig { batch_size: 1, ..tiny() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..tiny() }.validate().is_err());
        assert!(tiny().validate().is_ok());
        assert!(serde_json::from_str::<TrainConfig>("{\"epoch\": 3}").is_err());
    }

    #[test]
    fn learning_rate_schedule() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate_at(0), 1e-3);
        assert_eq!(c.learning_rate_at(3), 1e-3);
        assert!((c.learning_rate_at(4) - 0.96e-3).abs() < 1e-18);
        assert!((c.learning_rate_at(9) - 0.96f64.powi(2) * 1e-3).abs() < 1e-18);
    }

    #[test]
    fn deterministic_and_improving() {
        let (topo, tr, te) = data();
        let cfg = TrainConfig { epochs: 4, ..tiny() };
        let a = train(&cfg, &tr, &te, &topo).unwrap();
        let b = train(&cfg, &tr, &te, &topo).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.final_model, b.final_model);
        assert_eq!(a.log.len(), 4);
        assert!(a.log.iter().all(|m| m.p_mpjpe <= m.mpjpe));
        assert!(a.log[3].train_loss < a.log[0].train_loss);
        let best = a.log.iter().map(|m| m.mpjpe).fold(f64::INFINITY, f64::min);
        assert_eq!(a.best_report.mpjpe_mm, best);
        assert_eq!(a.log[a.best_epoch - 1].mpjpe, best);
        let c = train(&TrainConfig { seed: 1, ..cfg }, &tr, &te, &topo).unwrap();
        assert_ne!(a.log, c.log);
    }

    #[test]
    fn rejects_mismatched_data() {
        let (topo, tr, mut te) = data();
        te[0].joints_3d.0.pop();
        te[0].joints_2d.0.pop();
        assert!(train(&tiny(), &tr, &te, &topo).is_err());
        assert!(train(&tiny(), &tr, &[], &topo).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let (topo, tr, te) = data();
        let cfg = TrainConfig { learning_rate: 1e300, lr_decay: 1.0, ..tiny() };
        match train(&cfg, &tr, &te, &topo) {
            Err(Error::Diverged(_)) => {}
            other => panic!("{:?}", other.map(|o| o.log)),
        }
    }

    #[test]
    fn ablation_structure() {
        let (topo, tr, te) = data();
        let cfg = TrainConfig { epochs: 1, ..tiny() };
        let rows = run_ablation(&cfg, &InputVariant::ALL, &[false, true], &[3], &tr, &te, &topo).unwrap();
        assert_eq!(rows.len(), 8);
        assert_eq!(rows[0].method, "baseline");
        assert_eq!(rows[7].method, "+ camera and bone length + direction loss");
        assert_eq!((rows[1].w_mse, rows[1].w_dir), (0.5, 0.5));
        let twice = run_ablation(&cfg, &[InputVariant::JointsBones; 2], &[false], &[3], &tr, &te, &topo).unwrap();
        assert_eq!(twice[0].p1_mpjpe_mm, twice[1].p1_mpjpe_mm);
        assert_eq!(twice[0].p1_mpjpe_mm, rows[4].p1_mpjpe_mm);
        let s = summarize_ablation(&twice);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].seeds, 2);
    }

    #[test]
    fn small_gradcheck_passes() {
        let setup = GradCheckSetup { hidden_dim: 32, entries_per_tensor: 0, ..GradCheckSetup::default() };
        let r = gradcheck_lifting(&setup, &SkeletonTopology::default()).unwrap();
        assert!(r.passed, "{} in {}", r.worst_relative_error, r.worst_tensor);
    }
}
