//! JSON model files. Keys are written in a fixed order and floats use the
//! shortest representation that round-trips, so save → load is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BodyModelData, KinematicTree, PartLabel, Vec3, WristJoints, NUM_BETAS, NUM_EXPRESSIONS};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    template_vertices: Vec<Vec3>,
    shape_dirs: Vec<[[f64; NUM_BETAS]; 3]>,
    expr_dirs: Vec<[[f64; NUM_EXPRESSIONS]; 3]>,
    joint_regressor: Vec<Vec<f64>>,
    skin_weights: Vec<Vec<f64>>,
    parents: Vec<Option<usize>>,
    part_of_joint: Vec<PartLabel>,
    part_vertex_masks: BTreeMap<String, Vec<usize>>,
    wrist_joints: WristJoints,
    pelvis_joint: usize,
    units: String,
}

pub fn model_to_json(model: &BodyModelData) -> String {
    let file = ModelFile {
        template_vertices: model.template_vertices.clone(),
        shape_dirs: model.shape_dirs.clone(),
        expr_dirs: model.expr_dirs.clone(),
        joint_regressor: model.joint_regressor.clone(),
        skin_weights: model.skin_weights.clone(),
        parents: model.tree.parents.clone(),
        part_of_joint: model.tree.part_of_joint.clone(),
        part_vertex_masks: model.part_vertex_masks.clone(),
        wrist_joints: model.wrist_joints,
        pelvis_joint: model.pelvis_joint,
        units: "m".to_string(),
    };
    serde_json::to_string(&file).expect("model serialization is infallible")
}

pub fn model_from_json(text: &str) -> Result<BodyModelData> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| {
        Error::parse(
            format!("line {} column {}", e.line(), e.column()),
            e.to_string(),
        )
    })?;
    if file.units != "m" {
        return Err(Error::parse(
            "units",
            format!("expected \"m\", got {:?}", file.units),
        ));
    }
    let model = BodyModelData {
        template_vertices: file.template_vertices,
        shape_dirs: file.shape_dirs,
        expr_dirs: file.expr_dirs,
        joint_regressor: file.joint_regressor,
        skin_weights: file.skin_weights,
        tree: KinematicTree {
            parents: file.parents,
            part_of_joint: file.part_of_joint,
        },
        part_vertex_masks: file.part_vertex_masks,
        wrist_joints: file.wrist_joints,
        pelvis_joint: file.pelvis_joint,
    };
    model.validate()?;
    Ok(model)
}

pub fn save_model(model: &BodyModelData, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_to_json(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<BodyModelData> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text)
}
