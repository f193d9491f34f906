use nalgebra::{Matrix3, Vector3};

use super::{rodrigues, BodyModelData, Vec3, NUM_BETAS};
use crate::error::{Error, Result};

/// The forward pass with the pose held fixed, for evaluating many shapes
/// under one pose. Rotations depend on the pose alone, so they and the sparse
/// regressor / skinning weights are prepared once; each call then only
/// reshapes, re-regresses joints and re-blends. Matches [`super::forward`]
/// with zero expression and translation.
pub struct FixedPoseForward<'a> {
    model: &'a BodyModelData,
    world_rotations: Vec<Matrix3<f64>>,
    regressor: Vec<Vec<(usize, f64)>>,
    weights: Vec<Vec<(usize, f64)>>,
}

fn sparse(row: &[f64]) -> Vec<(usize, f64)> {
    row.iter()
        .enumerate()
        .filter(|(_, w)| **w != 0.0)
        .map(|(i, w)| (i, *w))
        .collect()
}

impl<'a> FixedPoseForward<'a> {
    pub fn new(model: &'a BodyModelData, theta: &[Vec3]) -> Result<Self> {
        let j = model.num_joints();
        if theta.len() != j {
            return Err(Error::invalid(format!("pose has {} joints, expected {j}", theta.len())));
        }
        model.tree.validate()?;
        let mut world_rotations: Vec<Matrix3<f64>> = Vec::with_capacity(j);
        for (idx, parent) in model.tree.parents.iter().enumerate() {
            let local = rodrigues(theta[idx])?;
            world_rotations.push(match parent {
                None => local,
                Some(p) => world_rotations[*p] * local,
            });
        }
        Ok(Self {
            model,
            world_rotations,
            regressor: model.joint_regressor.iter().map(|r| sparse(r)).collect(),
            weights: model.skin_weights.iter().map(|r| sparse(r)).collect(),
        })
    }

    pub fn vertices(&self, beta: &[f64]) -> Result<Vec<Vec3>> {
        if beta.len() != NUM_BETAS {
            return Err(Error::invalid(format!("beta has {} coefficients, expected {NUM_BETAS}", beta.len())));
        }
        let m = self.model;
        let rest: Vec<Vector3<f64>> = m
            .template_vertices
            .iter()
            .zip(&m.shape_dirs)
            .map(|(t, s)| {
                Vector3::from_fn(|c, _| t[c] + s[c].iter().zip(beta).map(|(a, b)| a * b).sum::<f64>())
            })
            .collect();
        let joints: Vec<Vector3<f64>> = self
            .regressor
            .iter()
            .map(|row| row.iter().map(|(i, w)| *w * rest[*i]).sum())
            .collect();
        let mut translations: Vec<Vector3<f64>> = Vec::with_capacity(joints.len());
        for (idx, parent) in m.tree.parents.iter().enumerate() {
            translations.push(match parent {
                None => joints[idx],
                Some(p) => translations[*p] + self.world_rotations[*p] * (joints[idx] - joints[*p]),
            });
        }
        let offsets: Vec<Vector3<f64>> = (0..joints.len())
            .map(|k| translations[k] - self.world_rotations[k] * joints[k])
            .collect();
        Ok(self
            .weights
            .iter()
            .zip(&rest)
            .map(|(row, p)| {
                let mut q = Vector3::zeros();
                for (k, w) in row {
                    q += *w * (self.world_rotations[*k] * p + offsets[*k]);
                }
                [q.x, q.y, q.z]
            })
            .collect())
    }
}
