//! Coordinate MSE, bone-direction loss and their weighted sum.

use serde::{Deserialize, Serialize};

use crate::data::Standardizer;
use crate::error::{invalid, Result};
use crate::skeleton::{bone_directions, Pose3D, SkeletonTopology};

/// A scalar loss and its gradient with respect to the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_mse: f64,
    pub w_dir: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { w_mse: 0.5, w_dir: 0.5 }
    }
}

impl LossWeights {
    pub const MSE_ONLY: LossWeights = LossWeights { w_mse: 1.0, w_dir: 0.0 };

    pub fn validate(&self) -> Result<()> {
        if !(self.w_mse >= 0.0 && self.w_dir >= 0.0) || !(self.w_mse + self.w_dir > 0.0) {
            return invalid(format!("loss weights ({}, {}) must be non-negative with positive sum", self.w_mse, self.w_dir));
        }
        Ok(())
    }

    pub fn uses_direction(&self) -> bool {
        self.w_dir > 0.0
    }
}

/// Divisor of the summed squared bone-vector differences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionNorm {
    /// Every summed scalar component: `3 * bones`.
    #[default]
    PerComponent,
    /// Number of bones.
    PerBone,
}

/// Mean of squared componentwise differences.
pub fn mse_loss(pred: &[f64], gt: &[f64]) -> Result<LossValue> {
    if pred.len() != gt.len() {
        return invalid(format!("prediction width {} vs target width {}", pred.len(), gt.len()));
    }
    if pred.is_empty() {
        return invalid("empty prediction");
    }
    let n = pred.len() as f64;
    let mut value = 0.0;
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let d = p - g;
            value += d * d;
            2.0 * d / n
        })
        .collect();
    Ok(LossValue { value: value / n, grad })
}

/// Mean squared difference of child-minus-parent bone vectors. The gradient
/// is laid out like [`Pose3D::flatten`].
pub fn direction_loss(pred: &Pose3D, gt: &Pose3D, topo: &SkeletonTopology, norm: DirectionNorm) -> Result<LossValue> {
    topo.check_joints(gt.len(), "target")?;
    let dp = bone_directions(pred, topo)?;
    let dg = bone_directions(gt, topo)?;
    let m = match norm {
        DirectionNorm::PerComponent => 3 * topo.bone_count(),
        DirectionNorm::PerBone => topo.bone_count(),
    } as f64;
    if m == 0.0 {
        return invalid("topology has no bones");
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; 3 * topo.joint_count()];
    for ((&(c, p), a), b) in topo.bones().iter().zip(&dp).zip(&dg) {
        for k in 0..3 {
            let d = a[k] - b[k];
            value += d * d;
            let g = 2.0 * d / m;
            grad[3 * c + k] += g;
            grad[3 * p + k] -= g;
        }
    }
    Ok(LossValue { value: value / m, grad })
}

/// `w_mse * mse + w_dir * direction`. The MSE term is taken on standardized
/// vectors; the direction term on the millimeter poses recovered through
/// `targets`. The gradient is with respect to the standardized prediction.
pub fn combined_loss(
    pred: &[f64],
    gt: &[f64],
    targets: &Standardizer,
    topo: &SkeletonTopology,
    weights: LossWeights,
    norm: DirectionNorm,
) -> Result<LossValue> {
    let mse = mse_loss(pred, gt)?;
    if targets.len() != pred.len() {
        return invalid(format!("target statistics width {} vs prediction width {}", targets.len(), pred.len()));
    }
    let pred_mm = Pose3D::from_flat(&targets.destandardize(pred))?;
    let gt_mm = Pose3D::from_flat(&targets.destandardize(gt))?;
    let dir = direction_loss(&pred_mm, &gt_mm, topo, norm)?;
    let value = weights.w_mse * mse.value + weights.w_dir * dir.value;
    let grad = mse
        .grad
        .iter()
        .zip(&dir.grad)
        .zip(&targets.std)
        .map(|((gm, gd), s)| weights.w_mse * gm + weights.w_dir * (gd * s))
        .collect();
    Ok(LossValue { value, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_joint() -> SkeletonTopology {
        SkeletonTopology::new(vec![None, Some(0)], vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap().value, 0.0);
        let l = mse_loss(&[1.0, -1.0, 0.0], &[0.0; 3]).unwrap();
        assert!((l.value - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(l.grad, vec![2.0 / 3.0, -2.0 / 3.0, 0.0]);
        let s = mse_loss(&[3.0, -3.0, 0.0], &[0.0; 3]).unwrap();
        assert!((s.value - 9.0 * l.value).abs() < 1e-14);
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn direction_examples() {
        let t = two_joint();
        let gt = Pose3D(vec![[0.0; 3], [0.0, 1.0, 0.0]]);
        assert_eq!(direction_loss(&gt, &gt, &t, DirectionNorm::PerComponent).unwrap().value, 0.0);
        let moved = gt.translated([10.0, 10.0, 10.0]);
        assert_eq!(direction_loss(&moved, &gt, &t, DirectionNorm::PerComponent).unwrap().value, 0.0);
        let pred = Pose3D(vec![[0.0; 3], [1.0, 0.0, 0.0]]);
        let l = direction_loss(&pred, &gt, &t, DirectionNorm::PerComponent).unwrap();
        assert!((l.value - 2.0 / 3.0).abs() < 1e-15);
        let per_bone = direction_loss(&pred, &gt, &t, DirectionNorm::PerBone).unwrap();
        assert!((per_bone.value - 2.0).abs() < 1e-15);
        // Child gets +, parent gets -.
        assert_eq!(&l.grad[3..], &[2.0 / 3.0, -2.0 / 3.0, 0.0]);
        assert_eq!(&l.grad[..3], &[-2.0 / 3.0, 2.0 / 3.0, 0.0]);
        assert!(direction_loss(&Pose3D::zeros(3), &gt, &t, DirectionNorm::PerComponent).is_err());
    }

    fn unit_stats(n: usize) -> Standardizer {
        Standardizer { mean: vec![0.0; n], std: vec![1.0; n] }
    }

    #[test]
    fn combined_degenerate_weights() {
        let topo = SkeletonTopology::default();
        let targets = Standardizer { mean: (0..48).map(|i| i as f64 * 3.0).collect(), std: (0..48).map(|i| 50.0 + i as f64).collect() };
        let pred: Vec<f64> = (0..48).map(|i| (i as f64 * 0.37).sin()).collect();
        let gt: Vec<f64> = (0..48).map(|i| (i as f64 * 0.11).cos()).collect();
        let mse = mse_loss(&pred, &gt).unwrap();
        let pm = Pose3D::from_flat(&targets.destandardize(&pred)).unwrap();
        let gm = Pose3D::from_flat(&targets.destandardize(&gt)).unwrap();
        let dir = direction_loss(&pm, &gm, &topo, DirectionNorm::PerComponent).unwrap();
        let a = combined_loss(&pred, &gt, &targets, &topo, LossWeights { w_mse: 1.0, w_dir: 0.0 }, DirectionNorm::PerComponent).unwrap();
        let b = combined_loss(&pred, &gt, &targets, &topo, LossWeights { w_mse: 0.0, w_dir: 1.0 }, DirectionNorm::PerComponent).unwrap();
        assert_eq!(a.value.to_bits(), mse.value.to_bits());
        assert_eq!(a.grad, mse.grad);
        assert_eq!(b.value.to_bits(), dir.value.to_bits());
        let zero = combined_loss(&gt, &gt, &targets, &topo, LossWeights::default(), DirectionNorm::PerComponent).unwrap();
        assert_eq!(zero.value, 0.0);
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { w_mse: 0.0, w_dir: 0.0 }.validate().is_err());
        assert!(LossWeights { w_mse: -1.0, w_dir: 2.0 }.validate().is_err());
    }

    fn fd_check(f: impl Fn(&[f64]) -> LossValue, x: &[f64]) {
        let g = f(x).grad;
        let eps = 1e-4;
        for i in 0..x.len() {
            let mut up = x.to_vec();
            up[i] += eps;
            let mut down = x.to_vec();
            down[i] -= eps;
            let n = (f(&up).value - f(&down).value) / (2.0 * eps);
            // Round-off in f(x +- eps) is ~1e-16 |f| / eps, so tiny components
            // are compared on an absolute floor instead.
            let err = (n - g[i]).abs();
            assert!(err < 1e-6 * n.abs().max(g[i].abs()) + 1e-10, "component {i}: analytic {} numeric {n}", g[i]);
        }
    }

    proptest! {
        #[test]
        fn direction_translation_invariant(
            p in proptest::collection::vec(-500.0f64..500.0, 48),
            g in proptest::collection::vec(-500.0f64..500.0, 48),
            t in prop::array::uniform3(-1e3f64..1e3),
            s in prop::array::uniform3(-1e3f64..1e3),
        ) {
            let topo = SkeletonTopology::default();
            let p = Pose3D::from_flat(&p).unwrap();
            let g = Pose3D::from_flat(&g).unwrap();
            let a = direction_loss(&p, &g, &topo, DirectionNorm::PerComponent).unwrap().value;
            let b = direction_loss(&p.translated(t), &g.translated(s), &topo, DirectionNorm::PerComponent).unwrap().value;
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }

        #[test]
        fn loss_gradients_match_finite_differences(
            p in proptest::collection::vec(-2.0f64..2.0, 48),
            g in proptest::collection::vec(-2.0f64..2.0, 48),
        ) {
            let topo = SkeletonTopology::default();
            fd_check(|x| mse_loss(x, &g).unwrap(), &p);
            let gp = Pose3D::from_flat(&g).unwrap();
            fd_check(|x| direction_loss(&Pose3D::from_flat(x).unwrap(), &gp, &topo, DirectionNorm::PerComponent).unwrap(), &p);
            let stats = Standardizer { mean: vec![1.5; 48], std: (0..48).map(|i| 0.5 + i as f64 / 48.0).collect() };
            fd_check(|x| combined_loss(x, &g, &stats, &topo, LossWeights::default(), DirectionNorm::PerComponent).unwrap(), &p);
        }

        #[test]
        fn combined_is_linear_in_weights(
            p in proptest::collection::vec(-2.0f64..2.0, 48),
            g in proptest::collection::vec(-2.0f64..2.0, 48),
            alpha in 0.01f64..10.0,
        ) {
            let topo = SkeletonTopology::default();
            let stats = unit_stats(48);
            let w = LossWeights { w_mse: 0.3, w_dir: 0.7 };
            let aw = LossWeights { w_mse: 0.3 * alpha, w_dir: 0.7 * alpha };
            let base = combined_loss(&p, &g, &stats, &topo, w, DirectionNorm::PerComponent).unwrap().value;
            let scaled = combined_loss(&p, &g, &stats, &topo, aw, DirectionNorm::PerComponent).unwrap().value;
            prop_assert!((scaled - alpha * base).abs() <= 1e-12 * scaled.abs().max(1.0));
        }
    }
}
