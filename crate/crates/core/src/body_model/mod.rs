//! Parametric whole-body model: shape/expression blendshapes, joint
//! regression, axis-angle forward kinematics and linear blend skinning.
//!
//! Units are meters throughout. The canonical layout has 55 joints ordered
//! global, 21 body, jaw, 2 eyes, 15 left-hand, 15 right-hand; toy layouts may
//! use fewer joints but keep the same [`PartLabel`] schema. Pose-corrective
//! blendshapes are not modelled.

mod fixed_pose;
mod io;
mod kinematics;
mod rotation;
mod skinning;
mod toy;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fixed_pose::FixedPoseForward;
pub use io::{load_model, model_from_json, model_to_json, save_model};
pub use kinematics::{forward_kinematics, RigidTransform};
pub use rotation::{rodrigues, SMALL_ANGLE};
pub use skinning::skin;
pub use toy::{canonical_tree, gen_toy_model, perturbed_variant, transform_shape_basis, Layout, CANONICAL_PARENTS};

pub const NUM_BETAS: usize = 10;
pub const NUM_EXPRESSIONS: usize = 10;
pub const CANONICAL_JOINTS: usize = 55;
pub const HAND_JOINTS_PER_SIDE: usize = 15;

/// Tolerance on row sums of the regressor and skinning weights.
pub const ROW_SUM_TOL: f64 = 1e-9;

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartLabel {
    Root,
    Body,
    Jaw,
    Eye,
    LeftHand,
    RightHand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn hand_label(self) -> PartLabel {
        match self {
            Side::Left => PartLabel::LeftHand,
            Side::Right => PartLabel::RightHand,
        }
    }

    pub fn mask_name(self) -> &'static str {
        match self {
            Side::Left => MASK_LEFT_HAND,
            Side::Right => MASK_RIGHT_HAND,
        }
    }
}

pub const MASK_LEFT_HAND: &str = "left_hand";
pub const MASK_RIGHT_HAND: &str = "right_hand";
pub const MASK_FACE: &str = "face";
pub const MASK_ALL: &str = "all";

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicTree {
    /// `None` only for the root; every other joint has a lower-indexed parent.
    pub parents: Vec<Option<usize>>,
    pub part_of_joint: Vec<PartLabel>,
}

impl KinematicTree {
    pub fn new(parents: Vec<Option<usize>>, part_of_joint: Vec<PartLabel>) -> Result<Self> {
        let tree = Self {
            parents,
            part_of_joint,
        };
        tree.validate()?;
        Ok(tree)
    }

    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.parents.is_empty() {
            return Err(Error::parse("parents", "kinematic tree has no joints"));
        }
        if self.part_of_joint.len() != self.parents.len() {
            return Err(Error::parse(
                "part_of_joint",
                format!(
                    "length {} does not match {} joints",
                    self.part_of_joint.len(),
                    self.parents.len()
                ),
            ));
        }
        let mut roots = 0;
        for (j, p) in self.parents.iter().enumerate() {
            match p {
                None => roots += 1,
                Some(p) if *p >= j => {
                    return Err(Error::parse(
                        format!("parents[{j}]"),
                        format!("parent {p} is not topologically before joint {j}"),
                    ))
                }
                Some(_) => {}
            }
        }
        if roots != 1 || self.parents[0].is_some() {
            return Err(Error::parse(
                "parents",
                format!("expected exactly one root at index 0, found {roots} roots"),
            ));
        }
        Ok(())
    }

    pub fn joints_with_label(&self, label: PartLabel) -> Vec<usize> {
        self.part_of_joint
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == label)
            .map(|(j, _)| j)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WristJoints {
    pub left: usize,
    pub right: usize,
}

impl WristJoints {
    pub fn get(&self, side: Side) -> usize {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyModelData {
    pub template_vertices: Vec<Vec3>,
    /// V × 3 × 10, meters per unit shape coefficient.
    pub shape_dirs: Vec<[[f64; NUM_BETAS]; 3]>,
    /// V × 3 × 10, meters per unit expression coefficient.
    pub expr_dirs: Vec<[[f64; NUM_EXPRESSIONS]; 3]>,
    /// J × V, rows non-negative and summing to one.
    pub joint_regressor: Vec<Vec<f64>>,
    /// V × J, rows non-negative and summing to one.
    pub skin_weights: Vec<Vec<f64>>,
    pub tree: KinematicTree,
    pub part_vertex_masks: BTreeMap<String, Vec<usize>>,
    pub wrist_joints: WristJoints,
    pub pelvis_joint: usize,
}

impl BodyModelData {
    pub fn num_vertices(&self) -> usize {
        self.template_vertices.len()
    }

    pub fn num_joints(&self) -> usize {
        self.tree.num_joints()
    }

    pub fn mask(&self, name: &str) -> Result<&[usize]> {
        self.part_vertex_masks
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("model has no vertex mask `{name}`")))
    }

    pub fn hand_joints(&self, side: Side) -> Vec<usize> {
        self.tree.joints_with_label(side.hand_label())
    }

    /// Jaw and eye joints.
    pub fn face_joints(&self) -> Vec<usize> {
        (0..self.num_joints())
            .filter(|&j| matches!(self.tree.part_of_joint[j], PartLabel::Jaw | PartLabel::Eye))
            .collect()
    }

    /// Neck convention: grandparent of the first jaw joint (joint 12 in the
    /// canonical tree), falling back to its parent, then to the pelvis.
    pub fn default_face_anchor(&self) -> usize {
        let jaw = self.tree.joints_with_label(PartLabel::Jaw).first().copied();
        let parent = jaw.and_then(|j| self.tree.parents[j]);
        parent
            .and_then(|p| self.tree.parents[p])
            .or(parent)
            .unwrap_or(self.pelvis_joint)
    }

    /// Checks every structural invariant; the error path names the first
    /// offending field.
    pub fn validate(&self) -> Result<()> {
        self.tree.validate()?;
        let v = self.num_vertices();
        let j = self.num_joints();
        if v == 0 {
            return Err(Error::parse("template_vertices", "model has no vertices"));
        }
        check_finite_rows("template_vertices", self.template_vertices.iter().map(|r| &r[..]))?;
        if self.shape_dirs.len() != v {
            return Err(Error::parse(
                "shape_dirs",
                format!("{} rows, expected {v}", self.shape_dirs.len()),
            ));
        }
        if self.expr_dirs.len() != v {
            return Err(Error::parse(
                "expr_dirs",
                format!("{} rows, expected {v}", self.expr_dirs.len()),
            ));
        }
        for (i, d) in self.shape_dirs.iter().enumerate() {
            if d.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::parse(format!("shape_dirs[{i}]"), "non-finite value"));
            }
        }
        for (i, d) in self.expr_dirs.iter().enumerate() {
            if d.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::parse(format!("expr_dirs[{i}]"), "non-finite value"));
            }
        }
        check_stochastic_rows("joint_regressor", &self.joint_regressor, j, v)?;
        check_stochastic_rows("skin_weights", &self.skin_weights, v, j)?;

        for (key, joint) in [
            ("wrist_joints.left", self.wrist_joints.left),
            ("wrist_joints.right", self.wrist_joints.right),
            ("pelvis_joint", self.pelvis_joint),
        ] {
            if joint >= j {
                return Err(Error::parse(key, format!("joint {joint} out of range (J = {j})")));
            }
        }

        for name in [MASK_ALL, MASK_LEFT_HAND, MASK_RIGHT_HAND, MASK_FACE] {
            if !self.part_vertex_masks.contains_key(name) {
                return Err(Error::parse(
                    format!("part_vertex_masks.{name}"),
                    "required mask missing",
                ));
            }
        }
        let mut in_all = vec![false; v];
        for (name, mask) in &self.part_vertex_masks {
            for (i, &idx) in mask.iter().enumerate() {
                if idx >= v {
                    return Err(Error::parse(
                        format!("part_vertex_masks.{name}[{i}]"),
                        format!("vertex {idx} out of range (V = {v})"),
                    ));
                }
            }
            if name == MASK_ALL {
                for &idx in mask {
                    in_all[idx] = true;
                }
            }
        }
        let mut owner: Vec<Option<&str>> = vec![None; v];
        for name in [MASK_LEFT_HAND, MASK_RIGHT_HAND, MASK_FACE] {
            for (i, &idx) in self.part_vertex_masks[name].iter().enumerate() {
                if !in_all[idx] {
                    return Err(Error::parse(
                        format!("part_vertex_masks.{name}[{i}]"),
                        format!("vertex {idx} is not in the `all` mask"),
                    ));
                }
                if let Some(other) = owner[idx] {
                    if other != name {
                        return Err(Error::parse(
                            format!("part_vertex_masks.{name}[{i}]"),
                            format!("vertex {idx} also belongs to `{other}`"),
                        ));
                    }
                }
                owner[idx] = Some(name);
            }
        }
        Ok(())
    }
}

fn check_finite_rows<'a>(field: &str, rows: impl Iterator<Item = &'a [f64]>) -> Result<()> {
    for (i, row) in rows.enumerate() {
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::parse(format!("{field}[{i}]"), "non-finite value"));
        }
    }
    Ok(())
}

fn check_stochastic_rows(field: &str, rows: &[Vec<f64>], n_rows: usize, n_cols: usize) -> Result<()> {
    if rows.len() != n_rows {
        return Err(Error::parse(
            field,
            format!("{} rows, expected {n_rows}", rows.len()),
        ));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n_cols {
            return Err(Error::parse(
                format!("{field}[{i}]"),
                format!("{} columns, expected {n_cols}", row.len()),
            ));
        }
        if let Some(c) = row.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::parse(
                format!("{field}[{i}][{c}]"),
                format!("weight {} is negative or non-finite", row[c]),
            ));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::parse(
                format!("{field}[{i}]"),
                format!("row sums to {sum}, expected 1"),
            ));
        }
    }
    Ok(())
}

/// One body: axis-angle pose, shape and expression coefficients, translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullPoseState {
    pub theta: Vec<Vec3>,
    pub beta: Vec<f64>,
    pub psi: Vec<f64>,
    pub translation: Vec3,
}

impl FullPoseState {
    pub fn zero(num_joints: usize) -> Self {
        Self {
            theta: vec![[0.0; 3]; num_joints],
            beta: vec![0.0; NUM_BETAS],
            psi: vec![0.0; NUM_EXPRESSIONS],
            translation: [0.0; 3],
        }
    }

    pub fn validate(&self, num_joints: usize) -> Result<()> {
        if self.theta.len() != num_joints {
            return Err(Error::parse(
                "state.theta",
                format!("{} joints, expected {num_joints}", self.theta.len()),
            ));
        }
        if self.beta.len() != NUM_BETAS {
            return Err(Error::parse(
                "state.beta",
                format!("{} coefficients, expected {NUM_BETAS}", self.beta.len()),
            ));
        }
        if self.psi.len() != NUM_EXPRESSIONS {
            return Err(Error::parse(
                "state.psi",
                format!("{} coefficients, expected {NUM_EXPRESSIONS}", self.psi.len()),
            ));
        }
        if let Some(j) = self.theta.iter().position(|r| r.iter().any(|x| !x.is_finite())) {
            return Err(Error::parse(format!("state.theta[{j}]"), "non-finite value"));
        }
        if self
            .beta
            .iter()
            .chain(&self.psi)
            .chain(&self.translation)
            .any(|x| !x.is_finite())
        {
            return Err(Error::parse("state", "non-finite shape, expression or translation"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshResult {
    pub vertices: Vec<Vec3>,
    pub joints: Vec<Vec3>,
}

/// Rest-pose vertices `T + S·β + E·ψ`.
pub fn shape_mesh(model: &BodyModelData, beta: &[f64], psi: &[f64]) -> Result<Vec<Vec3>> {
    if beta.len() != NUM_BETAS {
        return Err(Error::invalid(format!(
            "beta has {} coefficients, expected {NUM_BETAS}",
            beta.len()
        )));
    }
    if psi.len() != NUM_EXPRESSIONS {
        return Err(Error::invalid(format!(
            "psi has {} coefficients, expected {NUM_EXPRESSIONS}",
            psi.len()
        )));
    }
    let out = model
        .template_vertices
        .iter()
        .zip(&model.shape_dirs)
        .zip(&model.expr_dirs)
        .map(|((t, s), e)| {
            let mut v = *t;
            for c in 0..3 {
                v[c] += dot(&s[c], beta) + dot(&e[c], psi);
            }
            v
        })
        .collect();
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rest joints `J · vertices`; zero regressor entries are skipped.
pub fn regress_joints(model: &BodyModelData, rest_vertices: &[Vec3]) -> Result<Vec<Vec3>> {
    if rest_vertices.len() != model.num_vertices() {
        return Err(Error::invalid(format!(
            "{} vertices, regressor expects {}",
            rest_vertices.len(),
            model.num_vertices()
        )));
    }
    let joints = model
        .joint_regressor
        .iter()
        .map(|row| {
            let mut acc = [0.0; 3];
            for (w, v) in row.iter().zip(rest_vertices) {
                if *w != 0.0 {
                    acc[0] += w * v[0];
                    acc[1] += w * v[1];
                    acc[2] += w * v[2];
                }
            }
            acc
        })
        .collect();
    Ok(joints)
}

/// Full pipeline: shape, regress, pose, skin, translate.
pub fn forward(model: &BodyModelData, state: &FullPoseState) -> Result<MeshResult> {
    state
        .validate(model.num_joints())
        .map_err(|e| Error::invalid(e.to_string()))?;
    let rest = shape_mesh(model, &state.beta, &state.psi)?;
    let rest_joints = regress_joints(model, &rest)?;
    let world = forward_kinematics(&model.tree, &rest_joints, &state.theta)?;
    let mut vertices = skin(model, &rest, &rest_joints, &world)?;
    let t = state.translation;
    for v in &mut vertices {
        add_assign(v, &t);
    }
    let joints = world
        .iter()
        .map(|w| {
            let p = w.translation;
            [p.x + t[0], p.y + t[1], p.z + t[2]]
        })
        .collect();
    Ok(MeshResult { vertices, joints })
}

fn add_assign(v: &mut Vec3, t: &Vec3) {
    v[0] += t[0];
    v[1] += t[1];
    v[2] += t[2];
}
