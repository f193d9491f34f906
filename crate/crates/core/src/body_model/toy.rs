//! Deterministic synthetic body models so nothing depends on licensed assets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    BodyModelData, KinematicTree, PartLabel, Vec3, WristJoints, CANONICAL_JOINTS, MASK_ALL,
    MASK_FACE, MASK_LEFT_HAND, MASK_RIGHT_HAND, NUM_BETAS, NUM_EXPRESSIONS,
};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Parents of the canonical 55-joint tree (body, jaw, eyes, 2 × 15 finger joints).
pub const CANONICAL_PARENTS: [i32; CANONICAL_JOINTS] = [
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, // body
    15, 15, 15, // jaw, eyes
    20, 25, 26, 20, 28, 29, 20, 31, 32, 20, 34, 35, 20, 37, 38, // left hand
    21, 40, 41, 21, 43, 44, 21, 46, 47, 21, 49, 50, 21, 52, 53, // right hand
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Canonical,
    Minimal,
}

impl std::str::FromStr for Layout {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical" => Ok(Layout::Canonical),
            "minimal" => Ok(Layout::Minimal),
            other => Err(Error::invalid(format!("unknown layout `{other}`"))),
        }
    }
}

/// The canonical 55-joint tree and its wrist joints.
pub fn canonical_tree() -> (KinematicTree, WristJoints) {
    let parents = CANONICAL_PARENTS
        .iter()
        .map(|&p| usize::try_from(p).ok())
        .collect();
    let parts = (0..CANONICAL_JOINTS)
        .map(|j| match j {
            0 => PartLabel::Root,
            1..=21 => PartLabel::Body,
            22 => PartLabel::Jaw,
            23 | 24 => PartLabel::Eye,
            25..=39 => PartLabel::LeftHand,
            _ => PartLabel::RightHand,
        })
        .collect();
    let tree = KinematicTree {
        parents,
        part_of_joint: parts,
    };
    (tree, WristJoints { left: 20, right: 21 })
}

/// root, left wrist, right wrist, jaw, then finger joints chained off each
/// wrist with extra body joints interleaved.
fn minimal_tree(num_joints: usize) -> (KinematicTree, WristJoints) {
    let mut parents = vec![None];
    let mut parts = vec![PartLabel::Root];
    let mut last_left = 1;
    let mut last_right = 2.min(num_joints - 1);
    for j in 1..num_joints {
        let (parent, label) = match j {
            1 | 2 => (0, PartLabel::Body),
            3 => (0, PartLabel::Jaw),
            _ => match (j - 4) % 3 {
                0 => {
                    let p = last_left;
                    last_left = j;
                    (p, PartLabel::LeftHand)
                }
                1 => {
                    let p = last_right;
                    last_right = j;
                    (p, PartLabel::RightHand)
                }
                _ => (0, PartLabel::Body),
            },
        };
        parents.push(Some(parent));
        parts.push(label);
    }
    let wrists = WristJoints {
        left: 1,
        right: 2.min(num_joints - 1),
    };
    (
        KinematicTree {
            parents,
            part_of_joint: parts,
        },
        wrists,
    )
}

fn random_unit(rng: &mut SplitMix64) -> Vec3 {
    loop {
        let v = [rng.normal(), rng.normal(), rng.normal()];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-6 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn normalise(row: &mut [f64]) {
    let s: f64 = row.iter().sum();
    row.iter_mut().for_each(|w| *w /= s);
}

/// Generates a valid toy model. Vertices are split into body, face, left-hand
/// and right-hand blocks; each block is owned by the matching joints, which
/// also carry its skinning weight and regress from it. Regressor and skinning
/// rows have at most four non-zeros.
pub fn gen_toy_model(
    seed: u64,
    num_vertices: usize,
    num_joints: usize,
    layout: Layout,
) -> Result<BodyModelData> {
    if num_joints < 2 {
        return Err(Error::invalid("toy models need at least 2 joints"));
    }
    let (tree, wrists) = match layout {
        Layout::Canonical => {
            if num_joints != CANONICAL_JOINTS {
                return Err(Error::invalid(format!(
                    "canonical layout has {CANONICAL_JOINTS} joints, got {num_joints}"
                )));
            }
            canonical_tree()
        }
        Layout::Minimal => minimal_tree(num_joints),
    };
    let mut rng = SplitMix64::keyed(seed, "toy-model");
    let j_count = tree.num_joints();

    let mut anchors: Vec<Vec3> = Vec::with_capacity(j_count);
    for j in 0..j_count {
        let pos = match tree.parents[j] {
            None => [0.0, 0.0, 0.0],
            Some(p) => {
                let len = match tree.part_of_joint[j] {
                    PartLabel::LeftHand | PartLabel::RightHand => 0.025,
                    PartLabel::Jaw | PartLabel::Eye => 0.06,
                    _ => 0.15,
                };
                let d = random_unit(&mut rng);
                let a = anchors[p];
                [a[0] + len * d[0], a[1] + len * d[1], a[2] + len * d[2]]
            }
        };
        anchors.push(pos);
    }

    let with = |labels: &[PartLabel]| -> Vec<usize> {
        (0..j_count)
            .filter(|&j| labels.contains(&tree.part_of_joint[j]))
            .collect()
    };
    let or_fallback = |g: Vec<usize>, fb: usize| if g.is_empty() { vec![fb] } else { g };
    let body_group = with(&[PartLabel::Root, PartLabel::Body]);
    let face_group = or_fallback(with(&[PartLabel::Jaw, PartLabel::Eye]), 0);
    let left_group = or_fallback(with(&[PartLabel::LeftHand]), wrists.left);
    let right_group = or_fallback(with(&[PartLabel::RightHand]), wrists.right);

    let face_n = (num_vertices / 10).max(face_group.len());
    let left_n = (num_vertices / 8).max(left_group.len());
    let right_n = (num_vertices / 8).max(right_group.len());
    let needed = face_n + left_n + right_n + body_group.len();
    if num_vertices < needed {
        return Err(Error::invalid(format!(
            "{num_vertices} vertices is too few for this layout (need at least {needed})"
        )));
    }
    let body_n = num_vertices - face_n - left_n - right_n;

    let mut owner = Vec::with_capacity(num_vertices);
    let mut spread = Vec::with_capacity(num_vertices);
    let mut masks: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (name, group, count, sigma) in [
        (None, &body_group, body_n, 0.03),
        (Some(MASK_FACE), &face_group, face_n, 0.015),
        (Some(MASK_LEFT_HAND), &left_group, left_n, 0.008),
        (Some(MASK_RIGHT_HAND), &right_group, right_n, 0.008),
    ] {
        let start = owner.len();
        for k in 0..count {
            let j = if k < group.len() {
                group[k]
            } else {
                group[rng.next_below(group.len() as u64) as usize]
            };
            owner.push(j);
            spread.push(sigma);
        }
        if let Some(name) = name {
            masks.insert(name.to_string(), (start..start + count).collect());
        }
    }
    masks.insert(MASK_ALL.to_string(), (0..num_vertices).collect());

    let template: Vec<Vec3> = owner
        .iter()
        .zip(&spread)
        .map(|(&j, &s)| {
            let a = anchors[j];
            [
                a[0] + s * rng.normal(),
                a[1] + s * rng.normal(),
                a[2] + s * rng.normal(),
            ]
        })
        .collect();

    let mut owned: Vec<Vec<usize>> = vec![Vec::new(); j_count];
    for (v, &j) in owner.iter().enumerate() {
        owned[j].push(v);
    }
    let mut regressor = vec![vec![0.0; num_vertices]; j_count];
    for (j, row) in regressor.iter_mut().enumerate() {
        let pool = &owned[j];
        let count = 1 + rng.next_below(pool.len().min(4) as u64) as usize;
        for k in rng.sample_without_replacement(pool.len(), count) {
            row[pool[k]] = rng.uniform(0.2, 1.0);
        }
        normalise(row);
    }

    let mut weights = vec![vec![0.0; j_count]; num_vertices];
    for (v, row) in weights.iter_mut().enumerate() {
        let mut chain = vec![owner[v]];
        while chain.len() < 3 {
            match tree.parents[*chain.last().unwrap()] {
                Some(p) => chain.push(p),
                None => break,
            }
        }
        let count = 1 + rng.next_below(chain.len() as u64) as usize;
        let caps = [1.0, 0.6, 0.3];
        for (k, &j) in chain.iter().take(count).enumerate() {
            row[j] = if k == 0 { 1.0 } else { rng.uniform(0.05, caps[k]) };
        }
        normalise(row);
    }

    let face: std::collections::BTreeSet<usize> = masks[MASK_FACE].iter().copied().collect();
    let shape_dirs = (0..num_vertices)
        .map(|_| {
            let mut d = [[0.0; NUM_BETAS]; 3];
            d.iter_mut().flatten().for_each(|x| *x = 0.01 * rng.normal());
            d
        })
        .collect();
    let expr_dirs = (0..num_vertices)
        .map(|v| {
            let mut d = [[0.0; NUM_EXPRESSIONS]; 3];
            if face.contains(&v) {
                d.iter_mut().flatten().for_each(|x| *x = 0.004 * rng.normal());
            }
            d
        })
        .collect();

    let model = BodyModelData {
        template_vertices: template,
        shape_dirs,
        expr_dirs,
        joint_regressor: regressor,
        skin_weights: weights,
        tree,
        part_vertex_masks: masks,
        wrist_joints: wrists,
        pelvis_joint: 0,
    };
    model.validate()?;
    Ok(model)
}

/// Same topology, regressor and weights with a perturbed template and shape
/// basis. Stands in for a gendered variant of a neutral model.
pub fn perturbed_variant(base: &BodyModelData, seed: u64, scale: f64) -> BodyModelData {
    let mut rng = SplitMix64::keyed(seed, "toy-variant");
    let mut m = base.clone();
    for v in &mut m.template_vertices {
        v.iter_mut().for_each(|x| *x += 0.5 * scale * rng.normal());
    }
    for d in &mut m.shape_dirs {
        d.iter_mut().flatten().for_each(|x| *x += 0.4 * scale * rng.normal());
    }
    m
}

/// Replaces the shape basis `S` (3V × 10) with `S · M`, so that the new model
/// at `β` matches the old one at `M·β`.
pub fn transform_shape_basis(base: &BodyModelData, m: &[[f64; NUM_BETAS]; NUM_BETAS]) -> BodyModelData {
    let mut out = base.clone();
    for (dst, src) in out.shape_dirs.iter_mut().zip(&base.shape_dirs) {
        for c in 0..3 {
            for k in 0..NUM_BETAS {
                dst[c][k] = (0..NUM_BETAS).map(|b| src[c][b] * m[b][k]).sum();
            }
        }
    }
    out
}
