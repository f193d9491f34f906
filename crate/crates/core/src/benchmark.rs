//! Mean-primary-error leaderboards.
//!
//! A [`BenchmarkBasket`] fixes which benchmarks (and which metric on each)
//! contribute to the mean primary error. A subject trained on a benchmark's
//! own dataset has that benchmark dropped from its mean (in-domain exclusion).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{MetricKind, MetricPart, MetricReport, MetricSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasketEntry {
    pub benchmark_id: String,
    /// Training dataset whose presence excludes this benchmark; defaults to
    /// the benchmark id itself.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_id: Option<String>,
    pub spec: MetricSpec,
}

impl BasketEntry {
    pub fn new(benchmark_id: &str, dataset_id: Option<&str>, spec: MetricSpec) -> Self {
        Self {
            benchmark_id: benchmark_id.to_string(),
            dataset_id: dataset_id.map(str::to_string),
            spec,
        }
    }

    pub fn dataset(&self) -> &str {
        self.dataset_id.as_deref().unwrap_or(&self.benchmark_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkBasket {
    pub name: String,
    pub entries: Vec<BasketEntry>,
}

impl BenchmarkBasket {
    pub fn new(name: impl Into<String>, entries: Vec<BasketEntry>) -> Result<Self> {
        let basket = Self {
            name: name.into(),
            entries,
        };
        basket.validate()?;
        Ok(basket)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::invalid(format!("basket `{}` is empty", self.name)));
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.benchmark_id.as_str()) {
                return Err(Error::invalid(format!(
                    "basket `{}` lists `{}` twice",
                    self.name, e.benchmark_id
                )));
            }
        }
        Ok(())
    }

    /// AGORA-val, UBody, EgoBody (EgoSet) PVE, 3DPW MPJPE, EHF PVE.
    pub fn whole_body() -> Self {
        let pve = MetricSpec::aligned(MetricKind::Pve, MetricPart::All);
        let mpjpe = MetricSpec::aligned(MetricKind::Mpjpe, MetricPart::All);
        Self {
            name: "whole-body".into(),
            entries: vec![
                BasketEntry::new("AGORA-val", Some("AGORA"), pve),
                BasketEntry::new("UBody", None, pve),
                BasketEntry::new("EgoBody", Some("EgoBody-EgoSet"), pve),
                BasketEntry::new("3DPW", None, mpjpe),
                BasketEntry::new("EHF", None, pve),
            ],
        }
    }

    fn hand_with(name: &str, spec: MetricSpec) -> Self {
        Self {
            name: name.into(),
            entries: vec![
                BasketEntry::new("SynHand", None, spec),
                BasketEntry::new("AGORA-val", Some("AGORA"), spec),
                BasketEntry::new("EgoBody", Some("EgoBody-EgoSet"), spec),
                BasketEntry::new("UBody", None, spec),
                BasketEntry::new("ARCTIC", None, spec),
                BasketEntry::new("EHF", None, spec),
            ],
        }
    }

    /// Wrist-aligned hand PVE over the six hand benchmarks.
    pub fn hand() -> Self {
        Self::hand_with("hand", MetricSpec::aligned(MetricKind::Pve, MetricPart::Hands))
    }

    /// Hand PA-PVE over the same six benchmarks.
    pub fn hand_pa() -> Self {
        Self::hand_with("hand-pa", MetricSpec::pa(MetricKind::Pve, MetricPart::Hands))
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "whole-body" => Some(Self::whole_body()),
            "hand" => Some(Self::hand()),
            "hand-pa" => Some(Self::hand_pa()),
            _ => None,
        }
    }

    /// A built-in name, or a path to a basket JSON file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if let Some(b) = Self::builtin(name_or_path) {
            return Ok(b);
        }
        let path = Path::new(name_or_path);
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let basket: Self = serde_json::from_str(&text)
            .map_err(|e| Error::parse(name_or_path, e.to_string()))?;
        basket.validate()?;
        Ok(basket)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub subject_id: String,
    pub per_benchmark_mm: BTreeMap<String, f64>,
    #[serde(default)]
    pub trained_on: BTreeSet<String>,
    /// Filled by [`rank_entries`].
    #[serde(default)]
    pub mpe_mm: f64,
    #[serde(default)]
    pub rank: usize,
}

impl LeaderboardEntry {
    pub fn new<'a>(
        subject_id: &str,
        values: impl IntoIterator<Item = (&'a str, f64)>,
        trained_on: impl IntoIterator<Item = &'a str>,
    ) -> Self {
        Self {
            subject_id: subject_id.to_string(),
            per_benchmark_mm: values.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            trained_on: trained_on.into_iter().map(str::to_string).collect(),
            mpe_mm: 0.0,
            rank: 0,
        }
    }

    pub fn is_excluded(&self, entry: &BasketEntry) -> bool {
        self.trained_on.contains(entry.dataset())
    }
}

/// Mean of the basket's primary metrics, skipping benchmarks whose dataset
/// the subject was trained on.
pub fn mpe(entry: &LeaderboardEntry, basket: &BenchmarkBasket) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for b in &basket.entries {
        if entry.is_excluded(b) {
            continue;
        }
        let v = entry.per_benchmark_mm.get(&b.benchmark_id).ok_or_else(|| {
            Error::MissingValue(format!(
                "`{}` has no value for benchmark `{}`",
                entry.subject_id, b.benchmark_id
            ))
        })?;
        sum += v;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyInput(format!(
            "every benchmark in `{}` is excluded for `{}`",
            basket.name, entry.subject_id
        )));
    }
    Ok(sum / n as f64)
}

/// Sorts by ascending MPE, ties broken by subject id, and assigns ranks 1..N.
pub fn rank_entries(
    entries: Vec<LeaderboardEntry>,
    basket: &BenchmarkBasket,
) -> Result<Vec<LeaderboardEntry>> {
    let mut scored = entries
        .into_iter()
        .map(|mut e| {
            e.mpe_mm = mpe(&e, basket)?;
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| {
        a.mpe_mm
            .total_cmp(&b.mpe_mm)
            .then_with(|| a.subject_id.cmp(&b.subject_id))
    });
    for (i, e) in scored.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    Ok(scored)
}

/// First `k` subject ids in rank order.
pub fn select_topk(leaderboard: &[LeaderboardEntry], k: usize) -> Result<Vec<String>> {
    if k > leaderboard.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds leaderboard length {}",
            leaderboard.len()
        )));
    }
    let mut ordered: Vec<&LeaderboardEntry> = leaderboard.iter().collect();
    ordered.sort_by_key(|e| e.rank);
    Ok(ordered[..k].iter().map(|e| e.subject_id.clone()).collect())
}

/// One row of a detection-normalised leaderboard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmRow {
    pub mve: f64,
    pub nmve: f64,
    pub mje: f64,
    pub nmje: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmCheck {
    /// F1 implied by MVE / NMVE.
    pub f1_vertex: f64,
    /// F1 implied by MJE / NMJE.
    pub f1_joint: f64,
    pub gap: f64,
    pub pass: bool,
}

pub const DEFAULT_NM_TOLERANCE: f64 = 0.005;

/// NMVE and NMJE divide by the same F1, so `MVE/NMVE` and `MJE/NMJE` must agree.
pub fn nm_consistency_check(row: &NmRow, tolerance: f64) -> Result<NmCheck> {
    for (name, v) in [("MVE", row.mve), ("NMVE", row.nmve), ("MJE", row.mje), ("NMJE", row.nmje)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::invalid(format!("{name} must be positive, got {v}")));
        }
    }
    let f1_vertex = row.mve / row.nmve;
    let f1_joint = row.mje / row.nmje;
    let gap = (f1_vertex - f1_joint).abs();
    Ok(NmCheck {
        f1_vertex,
        f1_joint,
        gap,
        pass: gap <= tolerance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(Error::invalid(format!("unknown report format `{other}`"))),
        }
    }
}

/// Renders `subject, <benchmarks...>, MPE, rank` with values to 1 decimal.
pub fn render_report(
    leaderboard: &[LeaderboardEntry],
    basket: &BenchmarkBasket,
    format: ReportFormat,
) -> String {
    let mut header = vec!["subject".to_string()];
    header.extend(basket.entries.iter().map(|e| e.benchmark_id.clone()));
    header.push("MPE".into());
    header.push("rank".into());

    let rows: Vec<Vec<String>> = leaderboard
        .iter()
        .map(|e| {
            let mut row = vec![e.subject_id.clone()];
            row.extend(basket.entries.iter().map(|b| {
                e.per_benchmark_mm
                    .get(&b.benchmark_id)
                    .map(|v| format!("{v:.1}"))
                    .unwrap_or_default()
            }));
            row.push(format!("{:.1}", e.mpe_mm));
            row.push(e.rank.to_string());
            row
        })
        .collect();

    match format {
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::CRLF)
                .from_writer(Vec::new());
            w.write_record(&header).expect("in-memory write");
            for row in &rows {
                w.write_record(row).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
        }
        ReportFormat::Markdown => {
            let mut out = String::new();
            let cell = |s: &str| if s.is_empty() { "-".to_string() } else { s.replace('|', "\\|") };
            let line = |out: &mut String, cells: &[String]| {
                out.push('|');
                for c in cells {
                    let _ = write!(out, " {} |", cell(c));
                }
                out.push('\n');
            };
            line(&mut out, &header);
            out.push('|');
            out.push_str(" --- |");
            for _ in 1..header.len() {
                out.push_str(" ---: |");
            }
            out.push('\n');
            for row in &rows {
                line(&mut out, row);
            }
            out
        }
    }
}

/// Output of one `evaluate` run: one subject on one benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRun {
    pub subject_id: String,
    pub benchmark_id: String,
    #[serde(default)]
    pub trained_on: BTreeSet<String>,
    pub reports: Vec<MetricReport>,
}

/// Collects each subject's primary-metric means into unranked entries.
/// Subjects appear in first-seen order; a benchmark without a matching report
/// is left absent.
pub fn entries_from_runs(runs: &[BenchmarkRun], basket: &BenchmarkBasket) -> Vec<LeaderboardEntry> {
    let mut order: Vec<String> = Vec::new();
    let mut by_subject: BTreeMap<String, LeaderboardEntry> = BTreeMap::new();
    for run in runs {
        let entry = by_subject.entry(run.subject_id.clone()).or_insert_with(|| {
            order.push(run.subject_id.clone());
            LeaderboardEntry::new(&run.subject_id, [], [])
        });
        entry.trained_on.extend(run.trained_on.iter().cloned());
        for b in basket.entries.iter().filter(|b| b.benchmark_id == run.benchmark_id) {
            if let Some(r) = run.reports.iter().find(|r| r.spec == b.spec) {
                entry.per_benchmark_mm.insert(b.benchmark_id.clone(), r.mean_mm);
            }
        }
    }
    order
        .into_iter()
        .map(|s| by_subject.remove(&s).expect("subject recorded"))
        .collect()
}
