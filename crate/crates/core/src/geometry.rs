//! Depth reconstruction from 2D joints plus bone lengths, and Procrustes
//! alignment.
//!
//! Given a pixel, the joint lies somewhere on the ray through the camera
//! center. Once its parent is placed, the joint must also lie on the sphere
//! of radius `bone length` around the parent, so its position is one of at
//! most two ray-sphere intersections. Fixing the root depth and walking the
//! tree therefore yields a finite candidate set.

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use crate::camera::{pixel_ray, CameraIntrinsics};
use crate::error::{invalid, Error, Result};
use crate::skeleton::{Pose2D, Pose3D, SkeletonTopology};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    /// Unit length.
    pub direction: [f64; 3],
}

impl Ray {
    /// Normalizes `direction`.
    pub fn new(origin: [f64; 3], direction: [f64; 3]) -> Self {
        let n = dot(direction, direction).sqrt();
        Ray { origin, direction: [direction[0] / n, direction[1] / n, direction[2] / n] }
    }

    pub fn at(&self, t: f64) -> [f64; 3] {
        [
            self.origin[0] + t * self.direction[0],
            self.origin[1] + t * self.direction[1],
            self.origin[2] + t * self.direction[2],
        ]
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Positive ray parameters where the ray meets the sphere, ascending.
///
/// The discriminant is formed from the perpendicular offset of the center to
/// the ray, which stays accurate when the center is far from the origin.
pub fn ray_sphere_intersections(ray: &Ray, center: [f64; 3], radius: f64) -> Vec<f64> {
    let w = [center[0] - ray.origin[0], center[1] - ray.origin[1], center[2] - ray.origin[2]];
    let along = dot(w, ray.direction);
    let perp = [
        w[0] - along * ray.direction[0],
        w[1] - along * ray.direction[1],
        w[2] - along * ray.direction[2],
    ];
    let dist = dot(perp, perp).sqrt();
    let disc = (radius - dist) * (radius + dist);
    // Rounding can push an exact tangency slightly negative.
    let slack = 4.0 * f64::EPSILON * (radius * radius + along.abs() * radius + dot(w, w).sqrt() * radius);
    let ts: Vec<f64> = if disc < -slack {
        Vec::new()
    } else if disc <= slack {
        vec![along]
    } else {
        let h = disc.sqrt();
        vec![along - h, along + h]
    };
    ts.into_iter().filter(|&t| t > 0.0).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct CandidateSet {
    pub poses: Vec<Pose3D>,
    /// For every joint, the largest number of intersections seen across the
    /// explored branches (0, 1 or 2). The root always reports 1.
    pub branch_count_per_joint: Vec<u8>,
    /// True when enumeration stopped at the cap.
    pub truncated: bool,
}

/// Enumerates every pose consistent with the 2D observation, bone lengths
/// and the given root depth (z of the root joint).
pub fn chain_candidates(
    obs: &Pose2D,
    lengths: &[f64],
    intrinsics: &CameraIntrinsics,
    topo: &SkeletonTopology,
    root_depth: f64,
    cap: i64,
) -> Result<CandidateSet> {
    if cap <= 0 {
        return invalid(format!("candidate cap must be positive, got {cap}"));
    }
    if !(root_depth > 0.0) {
        return invalid(format!("root depth must be positive, got {root_depth}"));
    }
    topo.check_joints(obs.len(), "observation")?;
    if lengths.len() != topo.bone_count() {
        return invalid(format!("{} bone lengths for {} bones", lengths.len(), topo.bone_count()));
    }
    if let Some(l) = lengths.iter().find(|l| !(**l >= 0.0)) {
        return invalid(format!("bone length {l} must be non-negative"));
    }

    let n = topo.joint_count();
    let rays: Vec<Ray> = obs.0.iter().map(|&uv| pixel_ray(uv, intrinsics)).collect();
    let root = topo.root_index();
    let root_ray = rays[root];
    let root_pos = root_ray.at(root_depth / root_ray.direction[2]);

    let order: Vec<usize> = topo.traversal_order()[1..].to_vec();
    let radius: Vec<f64> = order
        .iter()
        .map(|&j| lengths[topo.bone_of_child(j).expect("non-root joint has a bone")])
        .collect();

    let mut start = vec![[0.0; 3]; n];
    start[root] = root_pos;
    let ctx = Search { topo, rays: &rays, order: &order, radius: &radius, cap: cap as usize };

    // Split on the first branching level so independent subtrees can be
    // searched concurrently; results are merged in branch order.
    let mut branches = vec![0u8; n];
    branches[root] = 1;
    let mut out = Vec::new();
    let mut truncated = false;
    let mut frontier = vec![(start, 0usize)];
    while frontier.len() == 1 {
        let (pos, depth) = frontier.pop().unwrap();
        if depth == order.len() {
            out.push(Pose3D(pos));
            break;
        }
        let children = ctx.expand(&pos, depth, &mut branches);
        frontier = children.into_iter().map(|p| (p, depth + 1)).collect();
    }
    if out.is_empty() && !frontier.is_empty() {
        let results = crate::parallel::map_slice(&frontier, |(pos, depth)| {
            let mut b = vec![0u8; n];
            let mut poses = Vec::new();
            let mut pos = pos.clone();
            let t = ctx.dfs(&mut pos, *depth, &mut b, &mut poses);
            (poses, b, t)
        });
        for (poses, b, t) in results {
            truncated |= t;
            for (acc, v) in branches.iter_mut().zip(b) {
                *acc = (*acc).max(v);
            }
            for p in poses {
                if out.len() == ctx.cap {
                    truncated = true;
                    break;
                }
                out.push(p);
            }
        }
    }
    Ok(CandidateSet { poses: out, branch_count_per_joint: branches, truncated })
}

struct Search<'a> {
    topo: &'a SkeletonTopology,
    rays: &'a [Ray],
    order: &'a [usize],
    radius: &'a [f64],
    cap: usize,
}

impl Search<'_> {
    fn expand(&self, pos: &[[f64; 3]], depth: usize, branches: &mut [u8]) -> Vec<Vec<[f64; 3]>> {
        let j = self.order[depth];
        let parent = self.topo.parent(j).expect("non-root");
        let ts = ray_sphere_intersections(&self.rays[j], pos[parent], self.radius[depth]);
        branches[j] = branches[j].max(ts.len() as u8);
        ts.into_iter()
            .map(|t| {
                let mut p = pos.to_vec();
                p[j] = self.rays[j].at(t);
                p
            })
            .collect()
    }

    /// Returns true if the cap cut the search short.
    fn dfs(&self, pos: &mut Vec<[f64; 3]>, depth: usize, branches: &mut [u8], out: &mut Vec<Pose3D>) -> bool {
        if out.len() >= self.cap {
            return true;
        }
        if depth == self.order.len() {
            out.push(Pose3D(pos.clone()));
            return false;
        }
        let j = self.order[depth];
        let parent = self.topo.parent(j).expect("non-root");
        let ts = ray_sphere_intersections(&self.rays[j], pos[parent], self.radius[depth]);
        branches[j] = branches[j].max(ts.len() as u8);
        let mut truncated = false;
        for t in ts {
            pos[j] = self.rays[j].at(t);
            truncated |= self.dfs(pos, depth + 1, branches, out);
        }
        truncated
    }
}

/// Closed-form least-squares similarity (or rigid) alignment of `pred` onto
/// `gt`. Returns `s R pred + T` with `det R = +1`.
pub fn procrustes_align(pred: &Pose3D, gt: &Pose3D, with_scale: bool) -> Result<Pose3D> {
    if pred.len() != gt.len() {
        return invalid(format!("joint counts differ: {} vs {}", pred.len(), gt.len()));
    }
    if pred.len() < 3 {
        return invalid(format!("alignment needs at least 3 joints, got {}", pred.len()));
    }
    let n = pred.len() as f64;
    let centroid = |p: &Pose3D| {
        p.0.iter().fold(Vector3::zeros(), |acc, q| acc + Vector3::from(*q)) / n
    };
    let mu_p = centroid(pred);
    let mu_g = centroid(gt);
    let xp: Vec<Vector3<f64>> = pred.0.iter().map(|q| Vector3::from(*q) - mu_p).collect();
    let xg: Vec<Vector3<f64>> = gt.0.iter().map(|q| Vector3::from(*q) - mu_g).collect();

    // Cross-covariance gt * pred^T.
    let mut cov = Matrix3::zeros();
    for (a, b) in xg.iter().zip(&xp) {
        cov += a * b.transpose();
    }
    let var_p: f64 = xp.iter().map(|v| v.norm_squared()).sum();
    let svd = cov.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Degenerate("SVD did not converge".into())),
    };
    let sv = svd.singular_values;
    let scale_ref = sv.max().max(f64::MIN_POSITIVE);
    // The two largest singular values must be non-zero for a unique rotation.
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if !(sorted[0] > 0.0) || sorted[1] <= 1e-12 * scale_ref || var_p <= 0.0 {
        return Err(Error::Degenerate("cross-covariance is rank deficient (collinear or coincident joints)".into()));
    }

    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        // Flip the direction of the smallest singular value.
        let smallest = (0..3).min_by(|&a, &b| sv[a].total_cmp(&sv[b])).unwrap();
        d[(smallest, smallest)] = -1.0;
    }
    let r = u * d * v_t;
    let s = if with_scale {
        let trace: f64 = (0..3).map(|i| sv[i] * d[(i, i)]).sum();
        trace / var_p
    } else {
        1.0
    };
    let t = mu_g - s * r * mu_p;
    Ok(Pose3D(
        pred.0
            .iter()
            .map(|q| {
                let a = s * r * Vector3::from(*q) + t;
                [a.x, a.y, a.z]
            })
            .collect(),
    ))
}
