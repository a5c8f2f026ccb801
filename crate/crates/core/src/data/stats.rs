use serde::{Deserialize, Serialize};

use super::SampleRecord;
use crate::error::{invalid, Result};
use crate::skeleton::{bone_lengths, root_center, SkeletonTopology};

/// Per-dimension mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population statistics over `rows`. A dimension whose spread is zero
    /// (to rounding) gets `std = 1`, so standardizing it only recenters.
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone) -> Result<Self> {
        let mut n = 0usize;
        let mut mean: Vec<f64> = Vec::new();
        for r in rows.clone() {
            if n == 0 {
                mean = vec![0.0; r.len()];
            } else if r.len() != mean.len() {
                return invalid(format!("row width {} differs from {}", r.len(), mean.len()));
            }
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
            n += 1;
        }
        if n == 0 {
            return invalid("cannot fit statistics on zero rows");
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; mean.len()];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / n as f64).sqrt();
                if sd <= 1e-12 * m.abs().max(1.0) {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn destandardize(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| v * s + m).collect()
    }
}

/// Training-split statistics for every standardized input/target block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub sample_count: usize,
    /// 2D joints, `2J` dims, pixels.
    pub joints_2d: Standardizer,
    /// Root-relative 3D joints, `3J` dims, millimeters.
    pub joints_3d: Standardizer,
    /// Bone lengths, `B` dims, millimeters.
    pub bones: Standardizer,
}

pub fn compute_stats(records: &[SampleRecord], topo: &SkeletonTopology) -> Result<DatasetStats> {
    if records.len() < 2 {
        return invalid(format!("statistics need at least 2 records, got {}", records.len()));
    }
    let mut j2 = Vec::with_capacity(records.len());
    let mut j3 = Vec::with_capacity(records.len());
    let mut bl = Vec::with_capacity(records.len());
    for r in records {
        topo.check_joints(r.joints_3d.len(), "record")?;
        topo.check_joints(r.joints_2d.len(), "record")?;
        j2.push(r.joints_2d.flatten());
        j3.push(root_center(&r.joints_3d, topo).flatten());
        bl.push(bone_lengths(&r.joints_3d, topo)?);
    }
    Ok(DatasetStats {
        sample_count: records.len(),
        joints_2d: Standardizer::fit(j2.iter().map(Vec::as_slice))?,
        joints_3d: Standardizer::fit(j3.iter().map(Vec::as_slice))?,
        bones: Standardizer::fit(bl.iter().map(Vec::as_slice))?,
    })
}
