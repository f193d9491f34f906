//! JSON-lines instance storage, dataset manifests, gender conversion and a
//! synthetic record generator.
//!
//! A records file holds one [`InstanceRecord`] per line with keys in
//! declaration order. The manifest checksum is 64-bit FNV-1a over that
//! canonical serialisation (every record re-serialised, `\n`-terminated),
//! written as 16 lowercase hex digits.

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::body_model::{canonical_tree, FullPoseState, KinematicTree, PartLabel, CANONICAL_JOINTS, NUM_BETAS, NUM_EXPRESSIONS};
use crate::error::{Error, Result};
use crate::rng::{fnv1a64, SplitMix64};
use crate::shape_adapter::ShapeAdapter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Neutral,
    Female,
    Male,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFormat {
    Smplx,
    Smpl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    pub id: String,
    pub image_ref: Option<String>,
    /// `(x, y, w, h)` in pixels.
    pub bbox: Option<[f64; 4]>,
    pub state: FullPoseState,
    pub gender: Gender,
    pub model_format: ModelFormat,
    pub split: Split,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl InstanceRecord {
    /// SMPL-format annotations carry no usable hand or face parameters.
    pub fn supervises_hands_face(&self) -> bool {
        self.model_format == ModelFormat::Smplx
    }

    pub fn validate(&self, num_joints: usize) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::parse("id", "empty id"));
        }
        if let Some(b) = self.bbox {
            if b.iter().any(|x| !x.is_finite()) || b[2] < 0.0 || b[3] < 0.0 {
                return Err(Error::parse("bbox", "needs finite values and non-negative size"));
            }
        }
        self.state.validate(num_joints)
    }
}

fn at_line(source: &str, line: usize, e: Error) -> Error {
    match e {
        Error::Parse { path, message } => Error::parse(format!("{source}:{line}: {path}"), message),
        other => Error::parse(format!("{source}:{line}"), other.to_string()),
    }
}

/// Parses JSON-lines text. Blank lines are skipped; every record is
/// validated against `num_joints` and ids must be unique.
pub fn parse_records(text: &str, num_joints: usize, source: &str) -> Result<Vec<InstanceRecord>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstanceRecord = serde_json::from_str(line)
            .map_err(|e| Error::parse(format!("{source}:{lineno}"), e.to_string()))?;
        rec.validate(num_joints).map_err(|e| at_line(source, lineno, e))?;
        if !seen.insert(rec.id.clone()) {
            return Err(Error::parse(
                format!("{source}:{lineno}: id"),
                format!("duplicate id `{}`", rec.id),
            ));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Canonical serialisation: one compact JSON object per line.
pub fn records_to_jsonl(records: &[InstanceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records always serialise"));
        out.push('\n');
    }
    out
}

pub fn load_records(path: &Path) -> Result<Vec<InstanceRecord>> {
    load_records_with(path, CANONICAL_JOINTS)
}

pub fn load_records_with(path: &Path, num_joints: usize) -> Result<Vec<InstanceRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text, num_joints, &path.display().to_string())
}

pub fn save_records(records: &[InstanceRecord], path: &Path) -> Result<()> {
    std::fs::write(path, records_to_jsonl(records)).map_err(|e| Error::io(path, e))
}

pub fn checksum(records: &[InstanceRecord]) -> String {
    format!("{:016x}", fnv1a64(records_to_jsonl(records).as_bytes()))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn of(records: &[InstanceRecord]) -> Self {
        let mut c = Self::default();
        for r in records {
            match r.split {
                Split::Train => c.train += 1,
                Split::Val => c.val += 1,
                Split::Test => c.test += 1,
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub split_counts: SplitCounts,
    /// Records file, relative to the manifest's directory.
    pub records: String,
    pub checksum: String,
    #[serde(default)]
    pub license_note: String,
    #[serde(default = "default_joints")]
    pub num_joints: usize,
}

fn default_joints() -> usize {
    CANONICAL_JOINTS
}

impl DatasetManifest {
    pub fn describe(dataset_id: &str, records_file: &str, records: &[InstanceRecord], license_note: &str) -> Self {
        Self {
            dataset_id: dataset_id.to_string(),
            split_counts: SplitCounts::of(records),
            records: records_file.to_string(),
            checksum: checksum(records),
            license_note: license_note.to_string(),
            num_joints: records.first().map_or(CANONICAL_JOINTS, |r| r.state.theta.len()),
        }
    }
}

/// Writes `<stem>.jsonl` beside the manifest and the manifest itself.
pub fn save_dataset(
    manifest_path: &Path,
    dataset_id: &str,
    records: &[InstanceRecord],
    license_note: &str,
) -> Result<DatasetManifest> {
    let stem = manifest_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::invalid(format!("bad manifest path {}", manifest_path.display())))?;
    let records_file = format!("{stem}.jsonl");
    let manifest = DatasetManifest::describe(dataset_id, &records_file, records, license_note);
    save_records(records, &sibling(manifest_path, &records_file))?;
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises") + "\n";
    std::fs::write(manifest_path, text).map_err(|e| Error::io(manifest_path, e))?;
    Ok(manifest)
}

fn sibling(manifest_path: &Path, name: &str) -> PathBuf {
    manifest_path
        .parent()
        .map_or_else(|| PathBuf::from(name), |d| d.join(name))
}

/// Loads a manifest and its records, checking split counts and checksum.
pub fn load_dataset(manifest_path: &Path) -> Result<(DatasetManifest, Vec<InstanceRecord>)> {
    let label = manifest_path.display().to_string();
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::parse(label.clone(), e.to_string()))?;
    let records = load_records_with(&sibling(manifest_path, &manifest.records), manifest.num_joints)?;
    let counts = SplitCounts::of(&records);
    if counts != manifest.split_counts {
        return Err(Error::parse(
            format!("{label}: split_counts"),
            format!("manifest says {:?}, file has {counts:?}", manifest.split_counts),
        ));
    }
    let sum = checksum(&records);
    if sum != manifest.checksum {
        return Err(Error::parse(
            format!("{label}: checksum"),
            format!("manifest says {}, records hash to {sum}", manifest.checksum),
        ));
    }
    Ok((manifest, records))
}

/// Replaces gendered β with the adapter output and marks the record
/// neutral. Neutral records pass through untouched; gendered SMPL-format
/// records are refused (different topology).
pub fn convert_gendered(
    records: &[InstanceRecord],
    adapter_female: &dyn ShapeAdapter,
    adapter_male: &dyn ShapeAdapter,
) -> Result<Vec<InstanceRecord>> {
    records
        .iter()
        .map(|r| {
            let (adapter, from) = match r.gender {
                Gender::Neutral => return Ok(r.clone()),
                Gender::Female => (adapter_female, "female"),
                Gender::Male => (adapter_male, "male"),
            };
            if r.model_format == ModelFormat::Smpl {
                return Err(Error::invalid(format!(
                    "record `{}`: gendered SMPL-format shape cannot be adapted across topologies",
                    r.id
                )));
            }
            let mut out = r.clone();
            out.state.beta = adapter.adapt(&r.state.beta);
            out.gender = Gender::Neutral;
            out.meta.insert("beta_converted_from".into(), from.into());
            Ok(out)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandComplexity {
    Low,
    Mixed,
    High,
}

impl FromStr for HandComplexity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(Self::Low),
            "mixed" => Ok(Self::Mixed),
            "high" => Ok(Self::High),
            other => Err(Error::invalid(format!("unknown hand complexity `{other}`"))),
        }
    }
}

const LOW_HAND_SIGMA: f64 = 0.08;
const HIGH_HAND_SIGMA: f64 = 0.45;

/// Canonical-layout synthetic records; see [`gen_synthetic_records_for`].
pub fn gen_synthetic_records(seed: u64, n: usize, dataset_id: &str, complexity: HandComplexity) -> Vec<InstanceRecord> {
    gen_synthetic_records_for(&canonical_tree().0, seed, n, dataset_id, complexity)
}

/// Deterministic synthetic annotations. Finger joints draw axis-angles with
/// a small (`low`) or large (`high`) spread; `mixed` picks one of the two
/// per record with equal odds. Body pose, shape, expression and placement
/// are moderate random values; splits are 80/10/10 train/val/test.
pub fn gen_synthetic_records_for(
    tree: &KinematicTree,
    seed: u64,
    n: usize,
    dataset_id: &str,
    complexity: HandComplexity,
) -> Vec<InstanceRecord> {
    let mut rng = SplitMix64::keyed(seed, dataset_id);
    (0..n)
        .map(|i| {
            let hand_sigma = match complexity {
                HandComplexity::Low => LOW_HAND_SIGMA,
                HandComplexity::High => HIGH_HAND_SIGMA,
                HandComplexity::Mixed if rng.next_f64() < 0.5 => LOW_HAND_SIGMA,
                HandComplexity::Mixed => HIGH_HAND_SIGMA,
            };
            let theta = tree
                .part_of_joint
                .iter()
                .map(|label| {
                    let sigma = match label {
                        PartLabel::Root => 0.5,
                        PartLabel::Body => 0.2,
                        PartLabel::Jaw | PartLabel::Eye => 0.05,
                        PartLabel::LeftHand | PartLabel::RightHand => hand_sigma,
                    };
                    [sigma * rng.normal(), sigma * rng.normal(), sigma * rng.normal()]
                })
                .collect();
            let state = FullPoseState {
                theta,
                beta: (0..NUM_BETAS).map(|_| rng.normal()).collect(),
                psi: (0..NUM_EXPRESSIONS).map(|_| 0.5 * rng.normal()).collect(),
                translation: [0.3 * rng.normal(), 0.2 * rng.normal(), rng.uniform(2.0, 6.0)],
            };
            let split = match rng.next_below(10) {
                0 => Split::Val,
                1 => Split::Test,
                _ => Split::Train,
            };
            let (w, h) = (rng.uniform(80.0, 400.0), rng.uniform(160.0, 800.0));
            let bbox = [rng.uniform(0.0, 1920.0 - w), rng.uniform(0.0, 1080.0 - h.min(1000.0)), w, h];
            let mut meta = BTreeMap::new();
            meta.insert("dataset".into(), dataset_id.into());
            InstanceRecord {
                id: format!("{dataset_id}-{i:06}"),
                image_ref: Some(format!("{dataset_id}/images/{i:06}.jpg")),
                bbox: Some(bbox),
                state,
                gender: Gender::Neutral,
                model_format: ModelFormat::Smplx,
                split,
                meta,
            }
        })
        .collect()
}

/// Noise levels for turning annotations into mock predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionNoise {
    /// Axis-angle noise in radians.
    pub theta: f64,
    pub beta: f64,
    pub psi: f64,
    /// Meters.
    pub translation: f64,
}

impl Default for PredictionNoise {
    fn default() -> Self {
        Self {
            theta: 0.05,
            beta: 0.3,
            psi: 0.2,
            translation: 0.02,
        }
    }
}

/// Copies records and perturbs their states; ids are kept so predictions
/// pair with their ground truth.
pub fn perturb_records(records: &[InstanceRecord], seed: u64, noise: PredictionNoise) -> Vec<InstanceRecord> {
    records
        .iter()
        .map(|r| {
            let mut rng = SplitMix64::keyed(seed, &r.id);
            let mut out = r.clone();
            let s = &mut out.state;
            s.theta.iter_mut().flatten().for_each(|x| *x += noise.theta * rng.normal());
            s.beta.iter_mut().for_each(|x| *x += noise.beta * rng.normal());
            s.psi.iter_mut().for_each(|x| *x += noise.psi * rng.normal());
            s.translation.iter_mut().for_each(|x| *x += noise.translation * rng.normal());
            out
        })
        .collect()
}
