//! Serial-chain robot description and its JSON file format.
//!
//! A chain is a list of revolute joints. Each joint carries the fixed
//! transform from the previous joint frame (`origin`) and a unit rotation
//! axis expressed in its own frame. An optional `tool` transform places the
//! end-effector after the last joint.
//!
//! ```json
//! {
//!   "joints": [
//!     {"axis": [0, 0, 1], "origin": {"xyz": [0, 0, 0], "rpy": [0, 0, 0]},
//!      "limits": {"lower": -3.14, "upper": 3.14}}
//!   ],
//!   "tool": {"xyz": [1, 0, 0], "rpy": [0, 0, 0]},
//!   "task_dim": 2,
//!   "collision_spheres": [{"link": 0, "center": [0.5, 0, 0], "radius": 0.1}]
//! }
//! ```

use std::path::Path;

use nalgebra::{DVector, Isometry3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Joint angles in radians, one per joint.
pub type Configuration = DVector<f64>;

/// Tolerance on joint-axis normalization.
pub const AXIS_UNIT_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct RevoluteJoint {
    /// Rotation axis in the joint frame, unit norm.
    pub axis: Vector3<f64>,
    /// Fixed transform from the previous frame to this joint frame.
    pub origin: Isometry3<f64>,
    pub lower: f64,
    pub upper: f64,
}

/// A sphere rigidly attached to the child link of joint `link`.
#[derive(Clone, Debug, PartialEq)]
pub struct CollisionSphere {
    pub link: usize,
    pub center: Vector3<f64>,
    pub radius: f64,
}

/// Kinematic description of an n-DOF revolute serial manipulator.
///
/// Immutable once built; share it freely between solves.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainModel {
    joints: Vec<RevoluteJoint>,
    tool: Isometry3<f64>,
    task_dim: usize,
    spheres: Vec<CollisionSphere>,
    m_max: Option<f64>,
}

impl ChainModel {
    pub fn new(
        joints: Vec<RevoluteJoint>,
        tool: Isometry3<f64>,
        task_dim: usize,
        spheres: Vec<CollisionSphere>,
    ) -> Result<Self, ModelError> {
        if joints.is_empty() {
            return Err(ModelError::Empty);
        }
        if !matches!(task_dim, 2 | 3 | 6) {
            return Err(ModelError::TaskDim(task_dim));
        }
        if joints.len() < task_dim {
            return Err(ModelError::TooFewJoints {
                joints: joints.len(),
                task_dim,
            });
        }
        for (i, j) in joints.iter().enumerate() {
            if !j.axis.iter().all(|v| v.is_finite())
                || !j.origin.translation.vector.iter().all(|v| v.is_finite())
            {
                return Err(ModelError::NonFinite("joint"));
            }
            let norm = j.axis.norm();
            if (norm - 1.0).abs() > AXIS_UNIT_TOL {
                return Err(ModelError::AxisNotUnit { joint: i, norm });
            }
            if !(j.lower < j.upper) {
                return Err(ModelError::Limits {
                    joint: i,
                    lower: j.lower,
                    upper: j.upper,
                });
            }
        }
        for (i, s) in spheres.iter().enumerate() {
            if s.link >= joints.len() {
                return Err(ModelError::Sphere {
                    sphere: i,
                    reason: format!("link {} out of range", s.link),
                });
            }
            if !(s.radius > 0.0) || !s.center.iter().all(|v| v.is_finite()) {
                return Err(ModelError::Sphere {
                    sphere: i,
                    reason: "radius must be positive and center finite".into(),
                });
            }
        }
        Ok(Self {
            joints,
            tool,
            task_dim,
            spheres,
            m_max: None,
        })
    }

    /// Planar two-link arm in the xy-plane with task rows (x, y).
    pub fn planar(link_lengths: &[f64]) -> Result<Self, ModelError> {
        let pi = std::f64::consts::PI;
        let mut joints = Vec::with_capacity(link_lengths.len());
        let mut offset = 0.0;
        for &l in link_lengths {
            joints.push(RevoluteJoint {
                axis: Vector3::z(),
                origin: Isometry3::translation(offset, 0.0, 0.0),
                lower: -pi,
                upper: pi,
            });
            offset = l;
        }
        Self::new(
            joints,
            Isometry3::translation(offset, 0.0, 0.0),
            2,
            Vec::new(),
        )
    }

    pub fn from_json_str(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.into_model()
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            joints: self
                .joints
                .iter()
                .map(|j| JointFile {
                    axis: j.axis.into(),
                    origin: OriginFile::from_isometry(&j.origin),
                    limits: LimitsFile {
                        lower: j.lower,
                        upper: j.upper,
                    },
                })
                .collect(),
            tool: Some(OriginFile::from_isometry(&self.tool)),
            task_dim: self.task_dim,
            collision_spheres: self
                .spheres
                .iter()
                .map(|s| SphereFile {
                    link: s.link,
                    center: s.center.into(),
                    radius: s.radius,
                })
                .collect(),
            m_max: self.m_max,
        }
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn task_dim(&self) -> usize {
        self.task_dim
    }

    pub fn joints(&self) -> &[RevoluteJoint] {
        &self.joints
    }

    pub fn tool(&self) -> &Isometry3<f64> {
        &self.tool
    }

    pub fn spheres(&self) -> &[CollisionSphere] {
        &self.spheres
    }

    /// Cached manipulability ceiling, if one has been estimated or loaded.
    pub fn m_max(&self) -> Option<f64> {
        self.m_max
    }

    pub fn with_m_max(mut self, m_max: f64) -> Self {
        self.m_max = Some(m_max);
        self
    }

    pub fn with_spheres(mut self, spheres: Vec<CollisionSphere>) -> Result<Self, ModelError> {
        let rebuilt = Self::new(self.joints.clone(), self.tool, self.task_dim, spheres)?;
        self.spheres = rebuilt.spheres;
        Ok(self)
    }

    /// Same chain with a different number of task rows.
    pub fn with_task_dim(&self, task_dim: usize) -> Result<Self, ModelError> {
        Self::new(
            self.joints.clone(),
            self.tool,
            task_dim,
            self.spheres.clone(),
        )
    }

    pub fn lower_limits(&self) -> Configuration {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.lower))
    }

    pub fn upper_limits(&self) -> Configuration {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.upper))
    }

    pub fn clamp_to_limits(&self, q: &mut Configuration) {
        for (v, j) in q.iter_mut().zip(&self.joints) {
            *v = v.clamp(j.lower, j.upper);
        }
    }

    pub fn within_limits(&self, q: &Configuration) -> bool {
        q.iter()
            .zip(&self.joints)
            .all(|(v, j)| *v >= j.lower && *v <= j.upper)
    }
}

/// On-disk form of [`ChainModel`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub joints: Vec<JointFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<OriginFile>,
    pub task_dim: usize,
    #[serde(default)]
    pub collision_spheres: Vec<SphereFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_max: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointFile {
    pub axis: [f64; 3],
    #[serde(default)]
    pub origin: OriginFile,
    pub limits: LimitsFile,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OriginFile {
    #[serde(default)]
    pub xyz: [f64; 3],
    /// Fixed-axis roll, pitch, yaw (x, then y, then z).
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl OriginFile {
    pub fn to_isometry(&self) -> Isometry3<f64> {
        let [r, p, y] = self.rpy;
        Isometry3::from_parts(
            Translation3::new(self.xyz[0], self.xyz[1], self.xyz[2]),
            UnitQuaternion::from_euler_angles(r, p, y),
        )
    }

    fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let (r, p, y) = iso.rotation.euler_angles();
        Self {
            xyz: iso.translation.vector.into(),
            rpy: [r, p, y],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsFile {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereFile {
    pub link: usize,
    pub center: [f64; 3],
    pub radius: f64,
}

impl ModelFile {
    pub fn into_model(self) -> Result<ChainModel, ModelError> {
        let joints = self
            .joints
            .iter()
            .map(|j| RevoluteJoint {
                axis: Vector3::from(j.axis),
                origin: j.origin.to_isometry(),
                lower: j.limits.lower,
                upper: j.limits.upper,
            })
            .collect();
        let spheres = self
            .collision_spheres
            .iter()
            .map(|s| CollisionSphere {
                link: s.link,
                center: Vector3::from(s.center),
                radius: s.radius,
            })
            .collect();
        let tool = self
            .tool
            .as_ref()
            .map(OriginFile::to_isometry)
            .unwrap_or_else(Isometry3::identity);
        let model = ChainModel::new(joints, tool, self.task_dim, spheres)?;
        match self.m_max {
            Some(m) if m > 0.0 && m.is_finite() => Ok(model.with_m_max(m)),
            Some(_) => Err(ModelError::NonFinite("m_max")),
            None => Ok(model),
        }
    }
}
