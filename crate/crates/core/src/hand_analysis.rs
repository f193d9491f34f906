//! How far each hand is from its relaxed (all-zero) articulation, and the
//! per-dataset distribution of that distance.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body_model::{forward, BodyModelData, FullPoseState, Side, Vec3};
use crate::data_store::InstanceRecord;
use crate::error::{Error, Result};

/// Histogram bin width and upper edge (mm); one extra bin counts overflow.
pub const BIN_WIDTH_MM: f64 = 2.5;
pub const HISTOGRAM_MAX_MM: f64 = 40.0;
pub const NUM_BINS: usize = 17;

/// `Canonical` poses only the hand (body zeroed, mean shape); `Raw` keeps the
/// instance's full state and compares against the same state with that
/// hand relaxed. Both are wrist-aligned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandFrame {
    #[default]
    Canonical,
    Raw,
}

impl FromStr for HandFrame {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical" => Ok(Self::Canonical),
            "raw" => Ok(Self::Raw),
            other => Err(Error::invalid(format!("unknown frame `{other}`"))),
        }
    }
}

/// Hand-mask vertices relative to the wrist.
fn wrist_relative_hand(model: &BodyModelData, state: &FullPoseState, side: Side) -> Result<Vec<Vec3>> {
    let mask = model.mask(side.mask_name())?;
    if mask.is_empty() {
        return Err(Error::EmptyInput(format!("{} mask has no vertices", side.mask_name())));
    }
    let mesh = forward(model, state)?;
    let w = mesh.joints[model.wrist_joints.get(side)];
    Ok(mask
        .iter()
        .map(|&v| {
            let p = mesh.vertices[v];
            [p[0] - w[0], p[1] - w[1], p[2] - w[2]]
        })
        .collect())
}

fn mean_distance_mm(a: &[Vec3], b: &[Vec3]) -> f64 {
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
        .sum();
    1000.0 * sum / a.len() as f64
}

fn set_hand(model: &BodyModelData, state: &mut FullPoseState, side: Side, hand_theta: Option<&[Vec3]>) -> Result<()> {
    let joints = model.hand_joints(side);
    if let Some(t) = hand_theta {
        if t.len() != joints.len() {
            return Err(Error::invalid(format!(
                "{} hand pose has {} joints, model has {}",
                side.mask_name(),
                t.len(),
                joints.len()
            )));
        }
    }
    for (k, &j) in joints.iter().enumerate() {
        state.theta[j] = hand_theta.map_or([0.0; 3], |t| t[k]);
    }
    Ok(())
}

/// Mean per-vertex distance (mm) of one hand from its relaxed pose, with the
/// rest of the body at zero pose and mean shape.
pub fn relaxed_distance(model: &BodyModelData, hand_theta: &[Vec3], side: Side) -> Result<f64> {
    let mut posed = FullPoseState::zero(model.num_joints());
    set_hand(model, &mut posed, side, Some(hand_theta))?;
    let relaxed = FullPoseState::zero(model.num_joints());
    Ok(mean_distance_mm(
        &wrist_relative_hand(model, &posed, side)?,
        &wrist_relative_hand(model, &relaxed, side)?,
    ))
}

/// [`relaxed_distance`] for one side of a full state, in either frame.
pub fn state_relaxed_distance(model: &BodyModelData, state: &FullPoseState, side: Side, frame: HandFrame) -> Result<f64> {
    state
        .validate(model.num_joints())
        .map_err(|e| Error::invalid(e.to_string()))?;
    match frame {
        HandFrame::Canonical => {
            let hand: Vec<Vec3> = model.hand_joints(side).iter().map(|&j| state.theta[j]).collect();
            relaxed_distance(model, &hand, side)
        }
        HandFrame::Raw => {
            let mut relaxed = state.clone();
            set_hand(model, &mut relaxed, side, None)?;
            Ok(mean_distance_mm(
                &wrist_relative_hand(model, state, side)?,
                &wrist_relative_hand(model, &relaxed, side)?,
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandStats {
    pub dataset_id: String,
    pub n: usize,
    pub median_mm: f64,
    pub q1_mm: f64,
    pub q3_mm: f64,
    /// Counts for `[0, 2.5)`, `[2.5, 5)`, …, `[37.5, 40)`, then `≥ 40`.
    pub histogram: Vec<usize>,
}

/// Quantile by linear interpolation between order statistics
/// (`h = (n − 1)·p`). Reorders `values`.
fn quantile(values: &mut [f64], p: f64) -> f64 {
    let h = (values.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let (_, &mut a, rest) = values.select_nth_unstable_by(lo, f64::total_cmp);
    if frac == 0.0 {
        return a;
    }
    let b = rest.iter().copied().fold(f64::INFINITY, f64::min);
    a * (1.0 - frac) + b * frac
}

pub fn histogram(samples: &[f64]) -> Vec<usize> {
    let mut counts = vec![0; NUM_BINS];
    for &s in samples {
        let bin = if s >= HISTOGRAM_MAX_MM {
            NUM_BINS - 1
        } else {
            ((s / BIN_WIDTH_MM).floor() as usize).min(NUM_BINS - 2)
        };
        counts[bin] += 1;
    }
    counts
}

pub fn stats_from_samples(dataset_id: &str, samples: &[f64]) -> Result<HandStats> {
    if samples.is_empty() {
        return Err(Error::EmptyInput(format!("dataset `{dataset_id}` has no hand samples")));
    }
    if let Some(bad) = samples.iter().find(|s| !s.is_finite() || **s < 0.0) {
        return Err(Error::invalid(format!("hand distance {bad} is not a finite non-negative value")));
    }
    let mut work = samples.to_vec();
    Ok(HandStats {
        dataset_id: dataset_id.to_string(),
        n: samples.len(),
        median_mm: quantile(&mut work, 0.5),
        q1_mm: quantile(&mut work, 0.25),
        q3_mm: quantile(&mut work, 0.75),
        histogram: histogram(samples),
    })
}

/// Per-hand distances of every record that supervises hands, both sides,
/// in record order.
pub fn hand_samples(records: &[InstanceRecord], model: &BodyModelData, frame: HandFrame) -> Result<Vec<f64>> {
    let per: Vec<[f64; 2]> = records
        .par_iter()
        .filter(|r| r.supervises_hands_face())
        .map(|r| {
            Ok([
                state_relaxed_distance(model, &r.state, Side::Left, frame)?,
                state_relaxed_distance(model, &r.state, Side::Right, frame)?,
            ])
        })
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

pub fn dataset_hand_stats(
    dataset_id: &str,
    records: &[InstanceRecord],
    model: &BodyModelData,
    frame: HandFrame,
) -> Result<HandStats> {
    stats_from_samples(dataset_id, &hand_samples(records, model, frame)?)
}

/// Most articulated first; equal medians fall back to dataset id.
pub fn rank_by_median(mut stats: Vec<HandStats>) -> Vec<HandStats> {
    stats.sort_by(|a, b| {
        b.median_mm
            .total_cmp(&a.median_mm)
            .then_with(|| a.dataset_id.cmp(&b.dataset_id))
    });
    stats
}

pub fn stats_to_csv(stats: &[HandStats]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["dataset_id", "n", "median_mm", "q1_mm", "q3_mm"]).expect("in-memory write");
    for s in stats {
        w.write_record([
            s.dataset_id.clone(),
            s.n.to_string(),
            format!("{:.3}", s.median_mm),
            format!("{:.3}", s.q1_mm),
            format!("{:.3}", s.q3_mm),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramExport {
    /// Lower edges of the regular bins; the last bin is `≥ overflow_from_mm`.
    pub bin_edges_mm: Vec<f64>,
    pub overflow_from_mm: f64,
    pub datasets: Vec<HandStats>,
}

pub fn histogram_json(stats: &[HandStats]) -> String {
    let export = HistogramExport {
        bin_edges_mm: (0..NUM_BINS).map(|i| i as f64 * BIN_WIDTH_MM).collect(),
        overflow_from_mm: HISTOGRAM_MAX_MM,
        datasets: stats.to_vec(),
    };
    serde_json::to_string_pretty(&export).expect("stats serialise") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body_model::{gen_toy_model, Layout};
    use crate::data_store::{gen_synthetic_records, gen_synthetic_records_for, HandComplexity};
    use crate::rng::SplitMix64;

    fn model() -> BodyModelData {
        gen_toy_model(2, 200, 55, Layout::Canonical).unwrap()
    }

    #[test]
    fn zero_hand_pose_is_zero() {
        let m = model();
        for side in [Side::Left, Side::Right] {
            assert_eq!(relaxed_distance(&m, &[[0.0; 3]; 15], side).unwrap(), 0.0);
        }
    }

    #[test]
    fn matches_two_pass_oracle() {
        let m = model();
        let mut rng = SplitMix64::new(8);
        for side in [Side::Left, Side::Right] {
            let hand: Vec<Vec3> = (0..15).map(|_| [0.3 * rng.normal(), 0.3 * rng.normal(), 0.3 * rng.normal()]).collect();
            let mut posed = FullPoseState::zero(55);
            for (k, &j) in m.hand_joints(side).iter().enumerate() {
                posed.theta[j] = hand[k];
            }
            let a = forward(&m, &posed).unwrap();
            let b = forward(&m, &FullPoseState::zero(55)).unwrap();
            let wj = m.wrist_joints.get(side);
            let mask = m.mask(side.mask_name()).unwrap();
            let mut total = 0.0;
            for &v in mask {
                let mut d2 = 0.0;
                for c in 0..3 {
                    let pa = a.vertices[v][c] - a.joints[wj][c];
                    let pb = b.vertices[v][c] - b.joints[wj][c];
                    d2 += (pa - pb) * (pa - pb);
                }
                total += d2.sqrt();
            }
            let oracle = 1000.0 * total / mask.len() as f64;
            let got = relaxed_distance(&m, &hand, side).unwrap();
            assert!((got - oracle).abs() <= 1e-9 * oracle.max(1.0), "{got} vs {oracle}");
            assert!(got > 0.0);
        }
    }

    #[test]
    fn canonical_frame_ignores_global_pose() {
        let m = model();
        let recs = gen_synthetic_records(1, 3, "d", HandComplexity::High);
        for r in &recs {
            let mut moved = r.state.clone();
            moved.theta[0] = [1.0, -0.5, 0.3];
            moved.translation = [5.0, 1.0, -2.0];
            moved.beta = vec![2.0; 10];
            for side in [Side::Left, Side::Right] {
                let a = state_relaxed_distance(&m, &r.state, side, HandFrame::Canonical).unwrap();
                let b = state_relaxed_distance(&m, &moved, side, HandFrame::Canonical).unwrap();
                assert_eq!(a, b);
                // Raw frame: wrist alignment removes translation but not shape.
                let raw = state_relaxed_distance(&m, &r.state, side, HandFrame::Raw).unwrap();
                assert!(raw > 0.0);
            }
        }
    }

    #[test]
    fn wrong_hand_length_rejected() {
        assert!(relaxed_distance(&model(), &[[0.0; 3]; 14], Side::Left).is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let s = stats_from_samples("x", &[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.q1_mm, s.median_mm, s.q3_mm), (1.75, 2.5, 3.25));
        let s = stats_from_samples("x", &[7.0]).unwrap();
        assert_eq!((s.q1_mm, s.median_mm, s.q3_mm), (7.0, 7.0, 7.0));
        assert!(stats_from_samples("x", &[]).is_err());
    }

    #[test]
    fn histogram_bins_and_overflow() {
        let h = histogram(&[0.0, 2.49, 2.5, 39.99, 40.0, 100.0]);
        assert_eq!(h.len(), NUM_BINS);
        assert_eq!((h[0], h[1], h[15], h[16]), (2, 1, 1, 2));
        assert_eq!(h.iter().sum::<usize>(), 6);
    }

    #[test]
    fn ranking_descends_with_lexicographic_ties() {
        let mk = |id: &str, v: f64| stats_from_samples(id, &[v]).unwrap();
        let ranked = rank_by_median(vec![mk("b", 5.0), mk("a", 20.0), mk("c", 20.0), mk("d", 5.0)]);
        let ids: Vec<&str> = ranked.iter().map(|s| s.dataset_id.as_str()).collect();
        assert_eq!(ids, ["a", "c", "b", "d"]);
    }

    #[test]
    fn stats_are_order_invariant_and_exports_render() {
        let m = gen_toy_model(1, 120, 12, Layout::Minimal).unwrap();
        let mut recs = gen_synthetic_records_for(&m.tree, 5, 20, "d", HandComplexity::Mixed);
        let a = dataset_hand_stats("d", &recs, &m, HandFrame::Canonical).unwrap();
        recs.reverse();
        let b = dataset_hand_stats("d", &recs, &m, HandFrame::Canonical).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n, 40);
        assert_eq!(a.histogram.iter().sum::<usize>(), a.n);
        assert!(a.q1_mm <= a.median_mm && a.median_mm <= a.q3_mm);
        let csv = stats_to_csv(&[a.clone()]);
        assert!(csv.starts_with("dataset_id,n,median_mm,q1_mm,q3_mm\nd,40,"));
        let json: HistogramExport = serde_json::from_str(&histogram_json(&[a])).unwrap();
        assert_eq!(json.bin_edges_mm.len(), NUM_BINS);
    }
}
