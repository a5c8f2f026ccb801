//! Protocol 1 (MPJPE) and Protocol 2 (Procrustes-aligned MPJPE) metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::SampleRecord;
use crate::error::{invalid, Result};
use crate::geometry::procrustes_align;
use crate::model::{build_inputs, LiftingNetwork};
use crate::parallel;
use crate::skeleton::{root_center, Pose3D};

/// Mean Euclidean distance over joints.
pub fn mpjpe(pred: &Pose3D, gt: &Pose3D) -> Result<f64> {
    if pred.len() != gt.len() {
        return invalid(format!("{} predicted joints vs {} ground-truth joints", pred.len(), gt.len()));
    }
    if pred.is_empty() {
        return invalid("poses have no joints");
    }
    let sum: f64 = pred
        .0
        .iter()
        .zip(&gt.0)
        .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt())
        .sum();
    Ok(sum / pred.len() as f64)
}

/// MPJPE after the least-squares rigid (optionally similarity) alignment of
/// `pred` onto `gt`, the usual Protocol 2.
///
/// The alignment minimizes the sum of squared joint distances, not their
/// mean, so it is not guaranteed to lower MPJPE: an error concentrated on
/// one joint gets spread over all of them. In practice it almost always
/// does.
pub fn p_mpjpe(pred: &Pose3D, gt: &Pose3D, with_scale: bool) -> Result<f64> {
    mpjpe(&procrustes_align(pred, gt, with_scale)?, gt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleErrors {
    pub mpjpe: f64,
    /// Similarity alignment (rotation, translation, scale).
    pub p_mpjpe: f64,
    /// Rigid alignment (rotation, translation).
    pub p_mpjpe_rigid: f64,
}

pub fn sample_errors(pred: &Pose3D, gt: &Pose3D) -> Result<SampleErrors> {
    let m = mpjpe(pred, gt)?;
    let p = p_mpjpe(pred, gt, true)?;
    let r = p_mpjpe(pred, gt, false)?;
    Ok(SampleErrors { mpjpe: m, p_mpjpe: p, p_mpjpe_rigid: r })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionErrors {
    pub sample_count: usize,
    pub mpjpe_mm: f64,
    pub p_mpjpe_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sample_count: usize,
    pub mpjpe_mm: f64,
    /// Protocol 2: similarity-aligned.
    pub p_mpjpe_mm: f64,
    pub p_mpjpe_rigid_mm: f64,
    pub per_action: BTreeMap<String, ActionErrors>,
}

impl EvalReport {
    /// Aggregates per-sample errors in input order, so the result does not
    /// depend on how the errors were computed.
    pub fn from_samples(actions: &[&str], errors: &[SampleErrors]) -> Result<Self> {
        if errors.is_empty() || actions.len() != errors.len() {
            return invalid("evaluation needs one action label per sample and at least one sample");
        }
        let n = errors.len() as f64;
        let mut acc: BTreeMap<String, (usize, f64, f64)> = BTreeMap::new();
        let (mut m, mut p, mut r) = (0.0, 0.0, 0.0);
        for (a, e) in actions.iter().zip(errors) {
            m += e.mpjpe;
            p += e.p_mpjpe;
            r += e.p_mpjpe_rigid;
            let slot = acc.entry(a.to_string()).or_insert((0, 0.0, 0.0));
            slot.0 += 1;
            slot.1 += e.mpjpe;
            slot.2 += e.p_mpjpe;
        }
        let per_action = acc
            .into_iter()
            .map(|(k, (c, m, p))| (k, ActionErrors { sample_count: c, mpjpe_mm: m / c as f64, p_mpjpe_mm: p / c as f64 }))
            .collect();
        Ok(EvalReport { sample_count: errors.len(), mpjpe_mm: m / n, p_mpjpe_mm: p / n, p_mpjpe_rigid_mm: r / n, per_action })
    }
}

/// Evaluates `model` on `records` against their root-relative ground truth.
pub fn evaluate(model: &LiftingNetwork, records: &[SampleRecord]) -> Result<EvalReport> {
    let x = build_inputs(records, &model.topology, &model.stats, model.variant, model.focal_mode)?;
    evaluate_features(model, &x, records)
}

/// As [`evaluate`] with features already assembled (one row per record).
pub fn evaluate_features(model: &LiftingNetwork, features: &crate::nn::Matrix, records: &[SampleRecord]) -> Result<EvalReport> {
    if features.rows() != records.len() {
        return invalid(format!("{} feature rows for {} records", features.rows(), records.len()));
    }
    let preds = model.predict_batch(features)?;
    let topo = &model.topology;
    let errors: Vec<SampleErrors> = parallel::map_range(records.len(), |i| {
        sample_errors(&preds[i], &root_center(&records[i].joints_3d, topo))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let actions: Vec<&str> = records.iter().map(|r| r.action_id.as_str()).collect();
    EvalReport::from_samples(&actions, &errors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose() -> Pose3D {
        Pose3D(vec![[0.0, 0.0, 0.0], [100.0, 20.0, -5.0], [80.0, 300.0, 40.0], [-120.0, 10.0, 60.0], [-90.0, -280.0, 30.0]])
    }

    #[test]
    fn mpjpe_examples() {
        let g = pose();
        assert_eq!(mpjpe(&g, &g).unwrap(), 0.0);
        assert_eq!(mpjpe(&Pose3D(vec![[1.0, 2.0, 2.0]]), &Pose3D(vec![[0.0; 3]])).unwrap(), 3.0);
        let a = Pose3D(vec![[3.0, 0.0, 0.0], [1.0, 1.0, 1.0]]);
        let b = Pose3D(vec![[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]);
        assert_eq!(mpjpe(&a, &b).unwrap(), 1.5);
        assert_eq!(mpjpe(&a, &b).unwrap(), mpjpe(&b, &a).unwrap());
        assert!(mpjpe(&a, &g).is_err());
    }

    #[test]
    fn scaled_prediction_aligns_with_scale() {
        let g = pose();
        let p = g.scaled(2.0);
        assert!(p_mpjpe(&p, &g, true).unwrap() < 1e-8);
        assert!(p_mpjpe(&p, &g, false).unwrap() > 1.0);
    }

    #[test]
    fn single_joint_outlier_can_exceed_mpjpe() {
        let g = pose();
        let mut p = g.clone();
        p.0[2][0] += 500.0;
        let m = mpjpe(&p, &g).unwrap();
        assert!((m - 100.0).abs() < 1e-9);
        assert!(p_mpjpe(&p, &g, false).unwrap() > m);
    }

    #[test]
    fn report_aggregates_per_action() {
        let e = |m: f64| SampleErrors { mpjpe: m, p_mpjpe: m / 2.0, p_mpjpe_rigid: m / 1.5 };
        let r = EvalReport::from_samples(&["a", "b", "a"], &[e(10.0), e(40.0), e(20.0)]).unwrap();
        assert_eq!(r.sample_count, 3);
        assert!((r.mpjpe_mm - 70.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.per_action["a"].mpjpe_mm, 15.0);
        assert_eq!(r.per_action["a"].p_mpjpe_mm, 7.5);
        assert_eq!(r.per_action["b"].sample_count, 1);
        assert!(EvalReport::from_samples(&[], &[]).is_err());
    }
}
