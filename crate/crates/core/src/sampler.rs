//! Per-dataset length planning and index schedules for mixing datasets.
//!
//! Index draws use [`SplitMix64::keyed`] with the schedule seed and the
//! dataset id, so every dataset's indices are independent of how many
//! datasets are planned or how many workers materialise them.

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub const DEFAULT_WEIGHT_RATIO: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum SampleStrategy {
    /// Every dataset gets the same share of the total.
    Balanced,
    /// Arithmetic sequence by rank; the best dataset gets `ratio` times the
    /// worst one's length.
    Weighted { ratio: u32 },
    /// Original dataset sizes.
    Concatenated,
}

impl std::str::FromStr for SampleStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(Self::Balanced),
            "weighted" => Ok(Self::Weighted {
                ratio: DEFAULT_WEIGHT_RATIO,
            }),
            "concatenated" => Ok(Self::Concatenated),
            other => Err(Error::invalid(format!("unknown sampling strategy `{other}`"))),
        }
    }
}

pub type LengthPlan = IndexMap<String, usize>;

/// Target length per dataset. `ranked_sizes` lists `(dataset_id, source_size)`
/// best rank first.
///
/// Weighted lengths solve `last = 2·total / ((ratio + 1)·N)` with first =
/// `ratio · last`, floor the exact rational values and hand the remaining
/// units out by largest fractional part (ties to the smaller, lower-ranked
/// datasets). Each length then stays within one count of its exact value and
/// the sequence stays non-increasing.
pub fn plan_lengths(
    ranked_sizes: &[(String, usize)],
    strategy: SampleStrategy,
    total: usize,
) -> Result<LengthPlan> {
    let n = ranked_sizes.len();
    if n == 0 {
        return Err(Error::invalid("no datasets to plan"));
    }
    let mut seen = std::collections::HashSet::new();
    for (id, _) in ranked_sizes {
        if !seen.insert(id.as_str()) {
            return Err(Error::invalid(format!("dataset `{id}` listed twice")));
        }
    }
    let lengths: Vec<usize> = match strategy {
        SampleStrategy::Concatenated => ranked_sizes.iter().map(|(_, s)| *s).collect(),
        SampleStrategy::Balanced => {
            check_total(total, n)?;
            let base = total / n;
            let extra = total % n;
            (0..n).map(|i| base + usize::from(i < extra)).collect()
        }
        SampleStrategy::Weighted { ratio } => {
            if ratio < 2 {
                return Err(Error::invalid(format!("weighting ratio must be > 1, got {ratio}")));
            }
            check_total(total, n)?;
            weighted_lengths(n, u128::from(ratio), total as u128)
        }
    };
    Ok(ranked_sizes
        .iter()
        .map(|(id, _)| id.clone())
        .zip(lengths)
        .collect())
}

fn check_total(total: usize, n: usize) -> Result<()> {
    if total < n {
        return Err(Error::invalid(format!(
            "total {total} is smaller than the number of datasets {n}"
        )));
    }
    Ok(())
}

fn weighted_lengths(n: usize, ratio: u128, total: u128) -> Vec<usize> {
    if n == 1 {
        return vec![total as usize];
    }
    let nn = n as u128;
    // x_i = 2T((N-1) + (r-1)(N-1-i)) / ((r+1) N (N-1)), exactly.
    let denom = (ratio + 1) * nn * (nn - 1);
    let numer: Vec<u128> = (0..nn)
        .map(|i| 2 * total * ((nn - 1) + (ratio - 1) * (nn - 1 - i)))
        .collect();
    let mut lengths: Vec<u128> = numer.iter().map(|x| x / denom).collect();
    let assigned: u128 = lengths.iter().sum();
    let mut remainder = total - assigned;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| (numer[b] % denom).cmp(&(numer[a] % denom)).then(b.cmp(&a)));
    for &i in order.iter().cycle() {
        if remainder == 0 {
            break;
        }
        lengths[i] += 1;
        remainder -= 1;
    }
    lengths.into_iter().map(|l| l as usize).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSchedule {
    pub strategy: SampleStrategy,
    pub seed: u64,
    pub lengths: LengthPlan,
    pub index_map: IndexMap<String, Vec<usize>>,
}

/// Source indices for one dataset: full passes in source order, then a
/// without-replacement draw for the remainder (which is the whole schedule
/// when downsampling).
pub fn materialize_dataset(dataset_id: &str, source_size: usize, target: usize, seed: u64) -> Result<Vec<usize>> {
    if target == 0 {
        return Ok(Vec::new());
    }
    if source_size == 0 {
        return Err(Error::invalid(format!(
            "dataset `{dataset_id}` is empty but needs {target} samples"
        )));
    }
    let passes = target / source_size;
    let rest = target % source_size;
    let mut out = Vec::with_capacity(target);
    for _ in 0..passes {
        out.extend(0..source_size);
    }
    if rest > 0 {
        let mut rng = SplitMix64::keyed(seed, dataset_id);
        out.extend(rng.sample_without_replacement(source_size, rest));
    }
    Ok(out)
}

/// Draws every dataset's indices on a pool of `jobs` workers. The result does
/// not depend on `jobs`.
pub fn materialize(
    strategy: SampleStrategy,
    plan: &LengthPlan,
    source_sizes: &IndexMap<String, usize>,
    seed: u64,
    jobs: usize,
) -> Result<SampleSchedule> {
    for id in plan.keys() {
        if !source_sizes.contains_key(id) {
            return Err(Error::invalid(format!("no source size for dataset `{id}`")));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))?;
    let entries: Vec<(&String, &usize)> = plan.iter().collect();
    let drawn: Vec<Vec<usize>> = pool.install(|| {
        entries
            .par_iter()
            .map(|(id, &target)| materialize_dataset(id, source_sizes[*id], target, seed))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(SampleSchedule {
        strategy,
        seed,
        lengths: plan.clone(),
        index_map: plan.keys().cloned().zip(drawn).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes(v: &[usize]) -> Vec<(String, usize)> {
        v.iter().enumerate().map(|(i, s)| (format!("d{i}"), *s)).collect()
    }

    fn lens(plan: &LengthPlan) -> Vec<usize> {
        plan.values().copied().collect()
    }

    #[test]
    fn plan_examples() {
        let b = plan_lengths(&sizes(&[5, 5, 5]), SampleStrategy::Balanced, 9).unwrap();
        assert_eq!(lens(&b), [3, 3, 3]);
        let w = plan_lengths(&sizes(&[1, 2, 3, 4]), SampleStrategy::Weighted { ratio: 4 }, 100).unwrap();
        assert_eq!(lens(&w), [40, 30, 20, 10]);
        let one = plan_lengths(&sizes(&[7]), SampleStrategy::Weighted { ratio: 4 }, 123).unwrap();
        assert_eq!(lens(&one), [123]);
        let c = plan_lengths(&sizes(&[7, 1, 9]), SampleStrategy::Concatenated, 0).unwrap();
        assert_eq!(lens(&c), [7, 1, 9]);
        let r = plan_lengths(&sizes(&[1, 1, 1]), SampleStrategy::Balanced, 11).unwrap();
        assert_eq!(lens(&r), [4, 4, 3]);
    }

    #[test]
    fn plan_errors() {
        assert!(plan_lengths(&[], SampleStrategy::Balanced, 10).is_err());
        assert!(plan_lengths(&sizes(&[1, 1, 1]), SampleStrategy::Balanced, 2).is_err());
        assert!(plan_lengths(&sizes(&[1, 1]), SampleStrategy::Weighted { ratio: 1 }, 10).is_err());
        let dup = vec![("a".to_string(), 1), ("a".to_string(), 2)];
        assert!(plan_lengths(&dup, SampleStrategy::Balanced, 10).is_err());
    }

    #[test]
    fn materialize_examples() {
        assert_eq!(materialize_dataset("a", 10, 10, 1).unwrap(), (0..10).collect::<Vec<_>>());
        let twice = materialize_dataset("a", 10, 20, 1).unwrap();
        for i in 0..10 {
            assert_eq!(twice.iter().filter(|&&x| x == i).count(), 2);
        }
        let half = materialize_dataset("a", 100, 50, 7).unwrap();
        let mut distinct = half.clone();
        distinct.sort_unstable();
        distinct.dedup();
        assert_eq!(distinct.len(), 50);
        assert_eq!(half, materialize_dataset("a", 100, 50, 7).unwrap());
        assert_ne!(half, materialize_dataset("a", 100, 50, 8).unwrap());
        assert!(materialize_dataset("a", 0, 3, 1).is_err());
        assert!(materialize_dataset("a", 0, 0, 1).unwrap().is_empty());
    }

    #[test]
    fn schedule_independent_of_jobs_and_serialises() {
        let ranked = sizes(&[30, 7, 100, 1]);
        let src: IndexMap<String, usize> = ranked.iter().cloned().collect();
        let s = SampleStrategy::Weighted { ratio: 4 };
        let plan = plan_lengths(&ranked, s, 250).unwrap();
        let a = materialize(s, &plan, &src, 99, 1).unwrap();
        let b = materialize(s, &plan, &src, 99, 8).unwrap();
        assert_eq!(a, b);
        let json = serde_json::to_string(&a).unwrap();
        assert!(json.starts_with(r#"{"strategy":{"variant":"weighted","ratio":4},"seed":99,"lengths":{"d0":"#));
        assert_eq!(serde_json::from_str::<SampleSchedule>(&json).unwrap(), a);
        let missing: IndexMap<String, usize> = IndexMap::new();
        assert!(materialize(s, &plan, &missing, 1, 1).is_err());
    }
}
