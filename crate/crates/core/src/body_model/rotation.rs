use nalgebra::Matrix3;

use super::Vec3;
use crate::error::{Error, Result};

/// Below this angle (radians) the second-order series is used.
pub const SMALL_ANGLE: f64 = 1e-8;

fn skew(w: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -w[2], w[1], w[2], 0.0, -w[0], -w[1], w[0], 0.0)
}

/// Axis-angle vector to rotation matrix.
pub fn rodrigues(axis_angle: Vec3) -> Result<Matrix3<f64>> {
    if axis_angle.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid(format!(
            "non-finite axis-angle {axis_angle:?}"
        )));
    }
    let angle = (axis_angle[0] * axis_angle[0]
        + axis_angle[1] * axis_angle[1]
        + axis_angle[2] * axis_angle[2])
        .sqrt();
    if angle < SMALL_ANGLE {
        let k = skew(&axis_angle);
        return Ok(Matrix3::identity() + k + 0.5 * k * k);
    }
    let axis = [
        axis_angle[0] / angle,
        axis_angle[1] / angle,
        axis_angle[2] / angle,
    ];
    let k = skew(&axis);
    Ok(Matrix3::identity() + angle.sin() * k + (1.0 - angle.cos()) * (k * k))
}
