//! Articulated skeleton topology, pose containers and bone quantities.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A 3D pose: one `[x, y, z]` triple per joint, millimeters, camera frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pose3D(pub Vec<[f64; 3]>);

/// A 2D pose: one `[u, v]` pixel pair per joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pose2D(pub Vec<[f64; 2]>);

/// Child-minus-parent vector of one bone, millimeters.
pub type BoneVector = [f64; 3];

impl Pose3D {
    pub fn zeros(joints: usize) -> Self {
        Pose3D(vec![[0.0; 3]; joints])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    /// Row-major `[x0, y0, z0, x1, ...]`.
    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if !values.len().is_multiple_of(3) {
            return invalid(format!("flat 3D pose length {} is not a multiple of 3", values.len()));
        }
        Ok(Pose3D(values.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()))
    }

    pub fn translated(&self, t: [f64; 3]) -> Self {
        Pose3D(self.0.iter().map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]]).collect())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Pose3D(self.0.iter().map(|p| [p[0] * s, p[1] * s, p[2] * s]).collect())
    }
}

impl Pose2D {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }
}

/// Joint tree. Bones are indexed by ascending child-joint index, skipping
/// the root, so bone `i` always refers to the same pair for a given topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologyRepr", into = "TopologyRepr")]
pub struct SkeletonTopology {
    joint_count: usize,
    parent: Vec<Option<usize>>,
    root_index: usize,
    joint_names: Vec<String>,
    bones: Vec<(usize, usize)>,
    order: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct TopologyRepr {
    joint_count: usize,
    parent: Vec<Option<usize>>,
    root_index: usize,
    joint_names: Vec<String>,
}

impl TryFrom<TopologyRepr> for SkeletonTopology {
    type Error = Error;

    fn try_from(r: TopologyRepr) -> Result<Self> {
        let topo = SkeletonTopology::new(r.parent, r.joint_names)?;
        if topo.joint_count != r.joint_count || topo.root_index != r.root_index {
            return invalid("topology joint_count/root_index disagree with parent array");
        }
        Ok(topo)
    }
}

impl From<SkeletonTopology> for TopologyRepr {
    fn from(t: SkeletonTopology) -> Self {
        TopologyRepr {
            joint_count: t.joint_count,
            parent: t.parent,
            root_index: t.root_index,
            joint_names: t.joint_names,
        }
    }
}

impl Default for SkeletonTopology {
    fn default() -> Self {
        Self::h36m16()
    }
}

impl SkeletonTopology {
    /// Builds and validates a topology from a parent array (`None` = root).
    pub fn new(parent: Vec<Option<usize>>, joint_names: Vec<String>) -> Result<Self> {
        let n = parent.len();
        if n == 0 {
            return invalid("topology has no joints");
        }
        if joint_names.len() != n {
            return invalid(format!("{} joint names for {} joints", joint_names.len(), n));
        }
        let roots: Vec<usize> = (0..n).filter(|&j| parent[j].is_none()).collect();
        if roots.len() != 1 {
            return invalid(format!("topology must have exactly one root, found {}", roots.len()));
        }
        let root_index = roots[0];
        for (j, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                if p >= n {
                    return invalid(format!("joint {j} has out-of-range parent {p}"));
                }
                if p == j {
                    return invalid(format!("joint {j} is its own parent"));
                }
            }
        }

        let mut children = vec![Vec::new(); n];
        for (j, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                children[p].push(j);
            }
        }
        // Breadth-first from the root; a joint missing from the traversal sits on a cycle.
        let mut order = Vec::with_capacity(n);
        let mut queue = std::collections::VecDeque::from([root_index]);
        while let Some(j) = queue.pop_front() {
            order.push(j);
            queue.extend(children[j].iter().copied());
        }
        if order.len() != n {
            return invalid("parent relation contains a cycle");
        }

        let bones = (0..n)
            .filter_map(|c| parent[c].map(|p| (c, p)))
            .collect();

        Ok(SkeletonTopology { joint_count: n, parent, root_index, joint_names, bones, order })
    }

    /// Default 16-joint layout in Human3.6M ordering (neck/nose dropped).
    pub fn h36m16() -> Self {
        const NAMES: [&str; 16] = [
            "hip", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle", "spine",
            "thorax", "head", "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
        ];
        const PARENT: [Option<usize>; 16] = [
            None,
            Some(0),
            Some(1),
            Some(2),
            Some(0),
            Some(4),
            Some(5),
            Some(0),
            Some(7),
            Some(8),
            Some(8),
            Some(10),
            Some(11),
            Some(8),
            Some(13),
            Some(14),
        ];
        Self::new(PARENT.to_vec(), NAMES.iter().map(|s| s.to_string()).collect())
            .expect("built-in topology is valid")
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn bone_count(&self) -> usize {
        self.bones.len()
    }

    pub fn root_index(&self) -> usize {
        self.root_index
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parent[joint]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    /// `(child, parent)` pairs in bone order.
    pub fn bones(&self) -> &[(usize, usize)] {
        &self.bones
    }

    /// Joints ordered so every parent precedes its children.
    pub fn traversal_order(&self) -> &[usize] {
        &self.order
    }

    /// Bone index whose child is `joint`, if any.
    pub fn bone_of_child(&self, joint: usize) -> Option<usize> {
        self.bones.iter().position(|&(c, _)| c == joint)
    }

    pub(crate) fn check_joints(&self, got: usize, what: &str) -> Result<()> {
        if got != self.joint_count {
            return invalid(format!("{what} has {got} joints, topology expects {}", self.joint_count));
        }
        Ok(())
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Euclidean length of every bone, in bone order.
pub fn bone_lengths(pose: &Pose3D, topo: &SkeletonTopology) -> Result<Vec<f64>> {
    Ok(bone_directions(pose, topo)?.into_iter().map(norm3).collect())
}

/// Unnormalized child-minus-parent vector of every bone, in bone order.
pub fn bone_directions(pose: &Pose3D, topo: &SkeletonTopology) -> Result<Vec<BoneVector>> {
    topo.check_joints(pose.len(), "pose")?;
    Ok(topo.bones().iter().map(|&(c, p)| sub(pose.0[c], pose.0[p])).collect())
}

/// Translates the pose so the root joint sits at the origin.
pub fn root_center(pose: &Pose3D, topo: &SkeletonTopology) -> Pose3D {
    let r = pose.0[topo.root_index()];
    let mut out = Pose3D(pose.0.iter().map(|&p| sub(p, r)).collect());
    out.0[topo.root_index()] = [0.0; 3];
    out
}
