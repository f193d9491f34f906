use nalgebra::{Matrix3, Vector3};

use super::{BodyModelData, RigidTransform, Vec3, ROW_SUM_TOL};
use crate::error::{Error, Result};

/// Linear blend skinning: each vertex is moved by the weight-blended relative
/// joint transforms `W_j ∘ translate(−rest_j)`.
pub fn skin(
    model: &BodyModelData,
    rest_vertices: &[Vec3],
    rest_joints: &[Vec3],
    world: &[RigidTransform],
) -> Result<Vec<Vec3>> {
    let v = model.num_vertices();
    let j = model.num_joints();
    if rest_vertices.len() != v || rest_joints.len() != j || world.len() != j {
        return Err(Error::invalid(format!(
            "skinning expects {v} vertices and {j} joints, got {} vertices, {} rest joints, {} transforms",
            rest_vertices.len(),
            rest_joints.len(),
            world.len()
        )));
    }
    let relative: Vec<(Matrix3<f64>, Vector3<f64>)> = world
        .iter()
        .zip(rest_joints)
        .map(|(w, r)| {
            let rest = Vector3::new(r[0], r[1], r[2]);
            (w.rotation, w.translation - w.rotation * rest)
        })
        .collect();

    let mut out = Vec::with_capacity(v);
    for (i, (weights, p)) in model.skin_weights.iter().zip(rest_vertices).enumerate() {
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL || weights.len() != j {
            return Err(Error::invalid(format!(
                "skin_weights[{i}] sums to {sum}, expected 1"
            )));
        }
        let mut rot = Matrix3::zeros();
        let mut trans = Vector3::zeros();
        for (w, (r, t)) in weights.iter().zip(&relative) {
            if *w != 0.0 {
                rot += *w * r;
                trans += *w * t;
            }
        }
        let q = rot * Vector3::new(p[0], p[1], p[2]) + trans;
        out.push([q.x, q.y, q.z]);
    }
    Ok(out)
}
