//! Alignment procedures and per-vertex / per-joint position errors.
//!
//! All reported values are millimeters; inputs are meters.

use std::fmt;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::body_model::{rodrigues, BodyModelData, MeshResult, Side, Vec3, MASK_ALL, MASK_FACE};
use crate::error::{Error, Result};

const M_TO_MM: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum AlignmentMode {
    None,
    /// Translate the prediction so its anchor joint lands on the ground-truth
    /// anchor. `joint: None` picks the part's natural anchor: pelvis for the
    /// whole body, the wrist of each side for hands, the neck for the face.
    RootTranslation {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        joint: Option<usize>,
    },
    /// Full similarity (scale, rotation, translation) fitted prediction → gt.
    ProcrustesSimilarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetricKind {
    #[serde(rename = "PVE")]
    Pve,
    #[serde(rename = "MPJPE")]
    Mpjpe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricPart {
    All,
    LeftHand,
    RightHand,
    /// Mean of the left and right errors, each on its own subset.
    Hands,
    Face,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetricSpec {
    pub kind: MetricKind,
    pub part: MetricPart,
    pub alignment: AlignmentMode,
}

impl MetricSpec {
    pub const fn new(kind: MetricKind, part: MetricPart, alignment: AlignmentMode) -> Self {
        Self {
            kind,
            part,
            alignment,
        }
    }

    /// Root-aligned metric on a part (the usual non-PA column).
    pub const fn aligned(kind: MetricKind, part: MetricPart) -> Self {
        Self::new(kind, part, AlignmentMode::RootTranslation { joint: None })
    }

    pub const fn pa(kind: MetricKind, part: MetricPart) -> Self {
        Self::new(kind, part, AlignmentMode::ProcrustesSimilarity)
    }

    /// The battery `evaluate` computes when no specs are given.
    pub fn default_battery() -> Vec<MetricSpec> {
        use MetricKind::*;
        use MetricPart::*;
        vec![
            Self::aligned(Pve, All),
            Self::pa(Pve, All),
            Self::aligned(Mpjpe, All),
            Self::pa(Mpjpe, All),
            Self::aligned(Pve, Hands),
            Self::pa(Pve, Hands),
            Self::aligned(Pve, Face),
            Self::pa(Pve, Face),
        ]
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            MetricKind::Pve => "PVE",
            MetricKind::Mpjpe => "MPJPE",
        };
        let part = match self.part {
            MetricPart::All => "all",
            MetricPart::LeftHand => "left_hand",
            MetricPart::RightHand => "right_hand",
            MetricPart::Hands => "hands",
            MetricPart::Face => "face",
        };
        match self.alignment {
            AlignmentMode::None => write!(f, "raw-{kind}({part})"),
            AlignmentMode::RootTranslation { joint: None } => write!(f, "{kind}({part})"),
            AlignmentMode::RootTranslation { joint: Some(j) } => write!(f, "{kind}({part}@{j})"),
            AlignmentMode::ProcrustesSimilarity => write!(f, "PA-{kind}({part})"),
        }
    }
}

/// Parses the [`Display`](fmt::Display) form, e.g. `PA-PVE(hands)`,
/// `MPJPE(all)`, `raw-PVE(face)`, `PVE(left_hand@20)`.
impl std::str::FromStr for MetricSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("cannot parse metric `{s}`"));
        let (head, rest) = s.trim().split_once('(').ok_or_else(bad)?;
        let inner = rest.strip_suffix(')').ok_or_else(bad)?;
        let (prefix, kind) = match head.rsplit_once('-') {
            Some((p, k)) => (Some(p), k),
            None => (None, head),
        };
        let kind = match kind {
            "PVE" => MetricKind::Pve,
            "MPJPE" => MetricKind::Mpjpe,
            _ => return Err(bad()),
        };
        let (part, joint) = match inner.split_once('@') {
            Some((p, j)) => (p, Some(j.parse::<usize>().map_err(|_| bad())?)),
            None => (inner, None),
        };
        let part = match part {
            "all" => MetricPart::All,
            "left_hand" => MetricPart::LeftHand,
            "right_hand" => MetricPart::RightHand,
            "hands" => MetricPart::Hands,
            "face" => MetricPart::Face,
            _ => return Err(bad()),
        };
        let alignment = match (prefix, joint) {
            (None, joint) => AlignmentMode::RootTranslation { joint },
            (Some("PA"), None) => AlignmentMode::ProcrustesSimilarity,
            (Some("raw"), None) => AlignmentMode::None,
            _ => return Err(bad()),
        };
        Ok(Self::new(kind, part, alignment))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub spec: MetricSpec,
    pub per_instance_mm: Vec<f64>,
    pub mean_mm: f64,
    pub count: usize,
}

/// `x ↦ scale · R · x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        let q = self.scale * (self.rotation * Vector3::from(*p)) + self.translation;
        [q.x, q.y, q.z]
    }
}

fn centroid(points: &[Vec3]) -> Vector3<f64> {
    let sum = points
        .iter()
        .fold(Vector3::zeros(), |acc, p| acc + Vector3::from(*p));
    sum / points.len() as f64
}

/// Least-squares similarity mapping `source` onto `target` (Umeyama): SVD of
/// the cross-covariance with the reflection corrected so `det R = +1`.
pub fn umeyama_align(source: &[Vec3], target: &[Vec3], with_scale: bool) -> Result<Similarity> {
    if source.len() != target.len() {
        return Err(Error::invalid(format!(
            "point counts differ: {} vs {}",
            source.len(),
            target.len()
        )));
    }
    let n = source.len();
    if n < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "need at least 3 correspondences, got {n}"
        )));
    }
    let mu_s = centroid(source);
    let mu_t = centroid(target);
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, t) in source.iter().zip(target) {
        let ds = Vector3::from(*s) - mu_s;
        let dt = Vector3::from(*t) - mu_t;
        cov += dt * ds.transpose();
        var_s += ds.norm_squared();
    }
    cov /= n as f64;
    var_s /= n as f64;
    if var_s <= f64::EPSILON * mu_s.norm_squared().max(1e-300) || var_s == 0.0 {
        return Err(Error::DegenerateGeometry("source points coincide".into()));
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut sv = [
        svd.singular_values[0],
        svd.singular_values[1],
        svd.singular_values[2],
    ];
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0] {
        return Err(Error::DegenerateGeometry(format!(
            "cross-covariance has rank < 2 (singular values {sv:?})"
        )));
    }
    let mut s = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = polish_rotation(u * s * v_t, &cov);
    let scale = if with_scale {
        (rotation.transpose() * cov).trace() / var_s
    } else {
        1.0
    };
    let translation = mu_t - scale * (rotation * mu_s);
    Ok(Similarity {
        scale,
        rotation,
        translation,
    })
}

/// Newton steps on `tr(Rᵀ·cov)` over rotations `R·exp([ω]×)`. The iterative
/// 3×3 SVD leaves the rotation ~1e-10 off its optimum; two steps bring it to
/// rounding level, which keeps PA errors invariant to the prediction's frame.
fn polish_rotation(mut rotation: Matrix3<f64>, cov: &Matrix3<f64>) -> Matrix3<f64> {
    for _ in 0..2 {
        let m = rotation.transpose() * cov;
        let grad = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
        let hess = Matrix3::identity() * m.trace() - (m + m.transpose()) * 0.5;
        let Some(step) = hess.lu().solve(&grad) else {
            break;
        };
        if !(step.norm() < 1e-6) {
            break;
        }
        rotation *= rodrigues([step.x, step.y, step.z]).expect("finite step");
    }
    rotation
}

fn mean_distance_mm(pred: &[Vec3], gt: &[Vec3]) -> f64 {
    let total: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let d = [p[0] - g[0], p[1] - g[1], p[2] - g[2]];
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
        })
        .sum();
    total / pred.len() as f64 * M_TO_MM
}

/// One instance's mean L2 error in mm after the requested alignment.
/// `anchor` is `(pred_anchor, gt_anchor)`, required for root translation.
pub fn position_error(
    pred: &[Vec3],
    gt: &[Vec3],
    alignment: &AlignmentMode,
    anchor: Option<(Vec3, Vec3)>,
) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!(
            "prediction has {} points, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid("no points to compare"));
    }
    match alignment {
        AlignmentMode::None => Ok(mean_distance_mm(pred, gt)),
        AlignmentMode::RootTranslation { .. } => {
            let (pa, ga) = anchor
                .ok_or_else(|| Error::invalid("root-translation alignment needs anchor positions"))?;
            let off = [pa[0] - ga[0], pa[1] - ga[1], pa[2] - ga[2]];
            let shifted: Vec<Vec3> = pred
                .iter()
                .map(|p| [p[0] - off[0], p[1] - off[1], p[2] - off[2]])
                .collect();
            Ok(mean_distance_mm(&shifted, gt))
        }
        AlignmentMode::ProcrustesSimilarity => {
            let sim = umeyama_align(pred, gt, true)?;
            let aligned: Vec<Vec3> = pred.iter().map(|p| sim.apply(p)).collect();
            Ok(mean_distance_mm(&aligned, gt))
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Anchor joint for root-aligned face errors; defaults to the model's neck.
    pub face_anchor: Option<usize>,
}

#[derive(Clone, Copy)]
enum Region {
    All,
    Hand(Side),
    Face,
}

fn select(points: &[Vec3], idx: &[usize]) -> Vec<Vec3> {
    idx.iter().map(|&i| points[i]).collect()
}

fn region_error(
    pred: &MeshResult,
    gt: &MeshResult,
    model: &BodyModelData,
    spec: &MetricSpec,
    region: Region,
    opts: &EvalOptions,
) -> Result<f64> {
    let (pred_pts, gt_pts) = match spec.kind {
        MetricKind::Pve => {
            let mask = match region {
                Region::All => model.mask(MASK_ALL)?,
                Region::Hand(side) => model.mask(side.mask_name())?,
                Region::Face => model.mask(MASK_FACE)?,
            };
            if mask.iter().any(|&i| i >= pred.vertices.len() || i >= gt.vertices.len()) {
                return Err(Error::invalid("vertex mask exceeds mesh size"));
            }
            (select(&pred.vertices, mask), select(&gt.vertices, mask))
        }
        MetricKind::Mpjpe => {
            let joints: Vec<usize> = match region {
                Region::All => (0..model.num_joints()).collect(),
                Region::Hand(side) => model.hand_joints(side),
                Region::Face => model.face_joints(),
            };
            if joints.is_empty() {
                return Err(Error::invalid(format!("model has no joints for {spec}")));
            }
            (select(&pred.joints, &joints), select(&gt.joints, &joints))
        }
    };
    if pred_pts.is_empty() {
        return Err(Error::invalid(format!("empty point set for {spec}")));
    }
    let anchor = match spec.alignment {
        AlignmentMode::RootTranslation { joint } => {
            let j = joint.unwrap_or(match region {
                Region::All => model.pelvis_joint,
                Region::Hand(side) => model.wrist_joints.get(side),
                Region::Face => opts.face_anchor.unwrap_or_else(|| model.default_face_anchor()),
            });
            if j >= pred.joints.len() || j >= gt.joints.len() {
                return Err(Error::invalid(format!("anchor joint {j} out of range")));
            }
            Some((pred.joints[j], gt.joints[j]))
        }
        _ => None,
    };
    position_error(&pred_pts, &gt_pts, &spec.alignment, anchor)
}

/// Evaluates every spec on one prediction/ground-truth pair.
pub fn instance_metrics(
    pred: &MeshResult,
    gt: &MeshResult,
    model: &BodyModelData,
    specs: &[MetricSpec],
    opts: &EvalOptions,
) -> Result<Vec<f64>> {
    if pred.vertices.len() != gt.vertices.len() || pred.joints.len() != gt.joints.len() {
        return Err(Error::invalid("prediction and ground truth differ in topology"));
    }
    specs
        .iter()
        .map(|spec| match spec.part {
            MetricPart::All => region_error(pred, gt, model, spec, Region::All, opts),
            MetricPart::Face => region_error(pred, gt, model, spec, Region::Face, opts),
            MetricPart::LeftHand => region_error(pred, gt, model, spec, Region::Hand(Side::Left), opts),
            MetricPart::RightHand => {
                region_error(pred, gt, model, spec, Region::Hand(Side::Right), opts)
            }
            MetricPart::Hands => {
                let l = region_error(pred, gt, model, spec, Region::Hand(Side::Left), opts)?;
                let r = region_error(pred, gt, model, spec, Region::Hand(Side::Right), opts)?;
                Ok(0.5 * (l + r))
            }
        })
        .collect()
}

/// Detection-normalised error (NMVE / NMJE): error divided by the F1 score.
pub fn detection_normalized(error_mm: f64, f1: f64) -> Result<f64> {
    if !(f1 > 0.0 && f1 <= 1.0) {
        return Err(Error::invalid(format!("F1 must be in (0, 1], got {f1}")));
    }
    Ok(error_mm / f1)
}

/// Dataset-level mean, summed in index order.
pub fn aggregate(spec: MetricSpec, per_instance_mm: Vec<f64>) -> Result<MetricReport> {
    if per_instance_mm.is_empty() {
        return Err(Error::EmptyInput(format!("no instances for {spec}")));
    }
    let count = per_instance_mm.len();
    let mean_mm = per_instance_mm.iter().sum::<f64>() / count as f64;
    Ok(MetricReport {
        spec,
        per_instance_mm,
        mean_mm,
        count,
    })
}
