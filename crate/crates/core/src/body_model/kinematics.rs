use nalgebra::{Matrix3, Matrix4, Vector3};

use super::{rodrigues, KinematicTree, Vec3};
use crate::error::{Error, Result};

/// Rotation followed by translation: `x ↦ R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        let q = self.rotation * Vector3::new(p[0], p[1], p[2]) + self.translation;
        [q.x, q.y, q.z]
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

/// World transform of every joint. The root sits at its rest position with
/// rotation `θ₀`; each child applies `θⱼ` about its rest offset from the parent.
pub fn forward_kinematics(
    tree: &KinematicTree,
    rest_joints: &[Vec3],
    theta: &[Vec3],
) -> Result<Vec<RigidTransform>> {
    tree.validate()
        .map_err(|e| Error::invalid(format!("kinematic tree: {e}")))?;
    let j = tree.num_joints();
    if rest_joints.len() != j || theta.len() != j {
        return Err(Error::invalid(format!(
            "tree has {j} joints but got {} rest joints and {} pose rows",
            rest_joints.len(),
            theta.len()
        )));
    }
    let mut world: Vec<RigidTransform> = Vec::with_capacity(j);
    for (idx, parent) in tree.parents.iter().enumerate() {
        let rotation = rodrigues(theta[idx])?;
        let r = rest_joints[idx];
        let local = match parent {
            None => RigidTransform {
                rotation,
                translation: Vector3::new(r[0], r[1], r[2]),
            },
            Some(p) => {
                let rp = rest_joints[*p];
                RigidTransform {
                    rotation,
                    translation: Vector3::new(r[0] - rp[0], r[1] - rp[1], r[2] - rp[2]),
                }
            }
        };
        let w = match parent {
            None => local,
            Some(p) => world[*p].compose(&local),
        };
        world.push(w);
    }
    Ok(world)
}
