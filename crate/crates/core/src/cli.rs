//! The `ehps` command line.
//!
//! Exit codes: 0 success, 2 usage error (nothing written), 3 invalid input,
//! 4 runtime failure. Diagnostics go to stderr as a single line.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use indexmap::IndexMap;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::benchmark::{
    entries_from_runs, nm_consistency_check, rank_entries, render_report, select_topk, BenchmarkBasket, BenchmarkRun,
    LeaderboardEntry, NmRow, ReportFormat, DEFAULT_NM_TOLERANCE,
};
use crate::body_model::{forward, gen_toy_model, load_model, save_model, BodyModelData, FullPoseState, Layout};
use crate::data_store::{
    gen_synthetic_records_for, load_dataset, perturb_records, save_dataset, HandComplexity, InstanceRecord,
    PredictionNoise,
};
use crate::error::{Error, Result};
use crate::hand_analysis::{dataset_hand_stats, histogram_json, rank_by_median, stats_to_csv, HandFrame};
use crate::metrics::{aggregate, instance_metrics, EvalOptions, MetricSpec};
use crate::sampler::{materialize, plan_lengths, SampleStrategy};
use crate::shape_adapter::{
    eval_adapter, sample_betas, sample_poses, train_adapter, AdapterCheckpoint, AdapterTrainConfig, TrainingObjective,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "ehps", version, about = "Whole-body pose/shape evaluation and data-scaling toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct SeedArg {
    /// Random seed; falls back to $EHPS_SEED, then 0.
    #[arg(long, env = "EHPS_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LayoutArg {
    Canonical,
    Minimal,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ComplexityArg {
    Low,
    Mixed,
    High,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Balanced,
    Weighted,
    Concatenated,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    Markdown,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FrameArg {
    Canonical,
    Raw,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ObjectiveArg {
    MeanDistance,
    MeanSquaredDistance,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a deterministic toy body model.
    GenModel {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        vertices: usize,
        #[arg(long, default_value_t = 55)]
        joints: usize,
        #[arg(long, value_enum, default_value = "canonical")]
        layout: LayoutArg,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Generate synthetic annotations, or perturb a dataset into predictions.
    GenData {
        /// Manifest to write; records go to `<stem>.jsonl` beside it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dataset_id: String,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, value_enum, default_value = "mixed")]
        complexity: ComplexityArg,
        /// Model whose kinematic tree the poses follow (canonical if omitted).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Perturb this ground-truth manifest instead of generating.
        #[arg(long)]
        from: Option<PathBuf>,
        /// Scale on the default prediction noise.
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Pose a model: state JSON in, mesh JSON out.
    Forward {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against ground truth on one benchmark.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        subject: String,
        #[arg(long)]
        benchmark: String,
        /// Datasets the subject was trained on (comma separated).
        #[arg(long, value_delimiter = ',')]
        trained_on: Vec<String>,
        /// Metrics such as `PVE(all),PA-PVE(hands)`; default battery if omitted.
        #[arg(long, value_delimiter = ',')]
        metrics: Vec<String>,
        #[arg(long)]
        face_anchor: Option<usize>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a ranked leaderboard from evaluate runs and/or entry files.
    Benchmark {
        #[arg(long, num_args = 1..)]
        runs: Vec<PathBuf>,
        /// JSON list of leaderboard entries with per-benchmark values.
        #[arg(long)]
        entries: Option<PathBuf>,
        #[arg(long, default_value = "whole-body")]
        basket: String,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-rank a leaderboard (e.g. under another basket).
    Rank {
        #[arg(long)]
        leaderboard: PathBuf,
        #[arg(long, default_value = "whole-body")]
        basket: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the k best subjects, one per line.
    SelectTopk {
        #[arg(long)]
        leaderboard: PathBuf,
        #[arg(long)]
        k: usize,
    },
    /// Plan per-dataset lengths and draw index schedules.
    Schedule {
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        #[arg(long)]
        total: Option<usize>,
        /// Source sizes, best-ranked dataset first.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        ids: Vec<String>,
        #[arg(long, default_value_t = 4)]
        ratio: u32,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a gendered → neutral shape adapter.
    TrainAdapter {
        #[arg(long)]
        gendered: PathBuf,
        #[arg(long)]
        neutral: PathBuf,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 50.0)]
        step_size: f64,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 64)]
        hidden: usize,
        #[arg(long, default_value_t = 1e-4)]
        fd_epsilon: f64,
        #[arg(long)]
        pose_free: bool,
        #[arg(long, value_enum, default_value = "mean-squared-distance")]
        objective: ObjectiveArg,
        /// Held-out samples for the final evaluation.
        #[arg(long, default_value_t = 64)]
        eval_size: usize,
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Held-out error (mm) of a trained adapter.
    EvalAdapter {
        #[arg(long)]
        gendered: PathBuf,
        #[arg(long)]
        neutral: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long)]
        pose_free: bool,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Distance-to-relaxed hand statistics per dataset, most articulated first.
    HandStats {
        #[arg(long)]
        model: PathBuf,
        /// Dataset manifests.
        #[arg(long, num_args = 1.., required = true)]
        data: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "canonical")]
        frame: FrameArg,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        histogram: Option<PathBuf>,
    },
    /// Check that MVE/NMVE and MJE/NMJE imply the same F1.
    NmCheck {
        #[arg(long)]
        mve: f64,
        #[arg(long)]
        nmve: f64,
        #[arg(long)]
        mje: f64,
        #[arg(long)]
        nmje: f64,
        #[arg(long, default_value_t = DEFAULT_NM_TOLERANCE)]
        tolerance: f64,
    },
    /// Render a leaderboard as CSV or Markdown.
    Report {
        #[arg(long)]
        leaderboard: PathBuf,
        #[arg(long, default_value = "whole-body")]
        basket: String,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(stderr, "{text}");
            } else {
                let _ = write!(stdout, "{text}");
            }
            return code;
        }
    };
    match execute(cli.command, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("values serialise") + "\n"
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn emit(stdout: &mut dyn Write, text: &str) -> Result<()> {
    stdout
        .write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(Error::invalid("--jobs must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))
}

fn execute(command: Command, stdout: &mut dyn Write) -> Result<i32> {
    match command {
        Command::GenModel {
            out,
            vertices,
            joints,
            layout,
            seed,
        } => {
            let layout = match layout {
                LayoutArg::Canonical => Layout::Canonical,
                LayoutArg::Minimal => Layout::Minimal,
            };
            let model = gen_toy_model(seed.seed, vertices, joints, layout)?;
            save_model(&model, &out)?;
        }
        Command::GenData {
            out,
            dataset_id,
            n,
            complexity,
            model,
            from,
            noise,
            seed,
        } => {
            let records = match from {
                Some(gt) => {
                    let (_, records) = load_dataset(&gt)?;
                    let d = PredictionNoise::default();
                    let scaled = PredictionNoise {
                        theta: d.theta * noise,
                        beta: d.beta * noise,
                        psi: d.psi * noise,
                        translation: d.translation * noise,
                    };
                    perturb_records(&records, seed.seed, scaled)
                }
                None => {
                    let tree = match model {
                        Some(p) => load_model(&p)?.tree,
                        None => crate::body_model::canonical_tree().0,
                    };
                    let complexity = match complexity {
                        ComplexityArg::Low => HandComplexity::Low,
                        ComplexityArg::Mixed => HandComplexity::Mixed,
                        ComplexityArg::High => HandComplexity::High,
                    };
                    gen_synthetic_records_for(&tree, seed.seed, n, &dataset_id, complexity)
                }
            };
            save_dataset(&out, &dataset_id, &records, "synthetic; no third-party data")?;
        }
        Command::Forward { model, state, out } => {
            let model = load_model(&model)?;
            let state: FullPoseState = read_json(&state)?;
            write_file(&out, &to_json(&forward(&model, &state)?))?;
        }
        Command::Evaluate {
            model,
            pred,
            gt,
            subject,
            benchmark,
            trained_on,
            metrics,
            face_anchor,
            jobs,
            out,
        } => {
            let specs = if metrics.is_empty() {
                MetricSpec::default_battery()
            } else {
                metrics.iter().map(|m| m.parse()).collect::<Result<Vec<MetricSpec>>>()?
            };
            let workers = pool(jobs)?;
            let model = load_model(&model)?;
            let (_, gt_records) = load_dataset(&gt)?;
            let (_, pred_records) = load_dataset(&pred)?;
            let opts = EvalOptions { face_anchor };
            let reports = workers.install(|| evaluate(&model, &pred_records, &gt_records, &specs, &opts))?;
            let run = BenchmarkRun {
                subject_id: subject,
                benchmark_id: benchmark,
                trained_on: trained_on.into_iter().collect(),
                reports,
            };
            write_file(&out, &to_json(&run))?;
        }
        Command::Benchmark {
            runs,
            entries,
            basket,
            format,
            out,
        } => {
            let basket = BenchmarkBasket::resolve(&basket)?;
            let mut all: Vec<LeaderboardEntry> = match entries {
                Some(p) => read_json(&p)?,
                None => Vec::new(),
            };
            let runs = runs.iter().map(|p| read_json(p)).collect::<Result<Vec<BenchmarkRun>>>()?;
            all.extend(entries_from_runs(&runs, &basket));
            if all.is_empty() {
                return Err(Error::EmptyInput("no runs or entries given".into()));
            }
            let ranked = rank_entries(all, &basket)?;
            if let Some(out) = out {
                write_file(&out, &to_json(&ranked))?;
            }
            emit(stdout, &render_report(&ranked, &basket, report_format(format)))?;
        }
        Command::Rank {
            leaderboard,
            basket,
            out,
        } => {
            let basket = BenchmarkBasket::resolve(&basket)?;
            let entries: Vec<LeaderboardEntry> = read_json(&leaderboard)?;
            let text = to_json(&rank_entries(entries, &basket)?);
            match out {
                Some(p) => write_file(&p, &text)?,
                None => emit(stdout, &text)?,
            }
        }
        Command::SelectTopk { leaderboard, k } => {
            let entries: Vec<LeaderboardEntry> = read_json(&leaderboard)?;
            for id in select_topk(&entries, k)? {
                emit(stdout, &format!("{id}\n"))?;
            }
        }
        Command::Schedule {
            strategy,
            total,
            sizes,
            ids,
            ratio,
            jobs,
            seed,
            out,
        } => {
            let strategy = match strategy {
                StrategyArg::Balanced => SampleStrategy::Balanced,
                StrategyArg::Weighted => SampleStrategy::Weighted { ratio },
                StrategyArg::Concatenated => SampleStrategy::Concatenated,
            };
            let ids = if ids.is_empty() {
                (0..sizes.len()).map(|i| format!("d{i}")).collect()
            } else if ids.len() == sizes.len() {
                ids
            } else {
                return Err(Error::invalid(format!("{} ids for {} sizes", ids.len(), sizes.len())));
            };
            let ranked: Vec<(String, usize)> = ids.iter().cloned().zip(sizes.iter().copied()).collect();
            let total = match (strategy, total) {
                (SampleStrategy::Concatenated, t) => t.unwrap_or_else(|| sizes.iter().sum()),
                (_, Some(t)) => t,
                (_, None) => return Err(Error::invalid("--total is required for this strategy")),
            };
            let plan = plan_lengths(&ranked, strategy, total)?;
            let source: IndexMap<String, usize> = ranked.into_iter().collect();
            let schedule = materialize(strategy, &plan, &source, seed.seed, jobs.max(1))?;
            let text = to_json(&schedule);
            match out {
                Some(p) => {
                    write_file(&p, &text)?;
                    let lengths: Vec<String> = schedule.lengths.values().map(|l| l.to_string()).collect();
                    emit(stdout, &format!("{}\n", lengths.join(",")))?;
                }
                None => emit(stdout, &text)?,
            }
        }
        Command::TrainAdapter {
            gendered,
            neutral,
            steps,
            step_size,
            batch_size,
            hidden,
            fd_epsilon,
            pose_free,
            objective,
            eval_size,
            seed,
            out,
        } => {
            let g = load_model(&gendered)?;
            let n = load_model(&neutral)?;
            let s = seed.seed;
            let config = AdapterTrainConfig {
                steps,
                step_size,
                batch_size,
                pose_sampler_seed: s,
                beta_sampler_seed: s.wrapping_add(1),
                init_seed: s.wrapping_add(2),
                hidden,
                fd_epsilon,
                pose_free,
                objective: match objective {
                    ObjectiveArg::MeanDistance => TrainingObjective::MeanDistance,
                    ObjectiveArg::MeanSquaredDistance => TrainingObjective::MeanSquaredDistance,
                },
                ..AdapterTrainConfig::default()
            };
            let trained = train_adapter(&g, &n, &config)?;
            let (poses, betas) = held_out(&n, eval_size, s, pose_free);
            let final_eval = eval_adapter(&g, &n, &trained.adapter, &poses, &betas)?;
            let checkpoint = AdapterCheckpoint::new(&trained.adapter, &config, Some(final_eval));
            write_file(&out, &to_json(&checkpoint))?;
            emit(stdout, &format!("{final_eval:.3}\n"))?;
        }
        Command::EvalAdapter {
            gendered,
            neutral,
            checkpoint,
            n: count,
            pose_free,
            seed,
        } => {
            let g = load_model(&gendered)?;
            let n = load_model(&neutral)?;
            let ck: AdapterCheckpoint = read_json(&checkpoint)?;
            let adapter = ck.adapter()?;
            let (poses, betas) = held_out(&n, count, seed.seed, pose_free);
            emit(stdout, &format!("{:.3}\n", eval_adapter(&g, &n, &adapter, &poses, &betas)?))?;
        }
        Command::HandStats {
            model,
            data,
            frame,
            csv,
            histogram,
        } => {
            let model = load_model(&model)?;
            let frame = match frame {
                FrameArg::Canonical => HandFrame::Canonical,
                FrameArg::Raw => HandFrame::Raw,
            };
            let mut stats = Vec::new();
            for path in &data {
                let (manifest, records) = load_dataset(path)?;
                stats.push(dataset_hand_stats(&manifest.dataset_id, &records, &model, frame)?);
            }
            let ranked = rank_by_median(stats);
            let table = stats_to_csv(&ranked);
            if let Some(p) = csv {
                write_file(&p, &table)?;
            }
            if let Some(p) = histogram {
                write_file(&p, &histogram_json(&ranked))?;
            }
            emit(stdout, &table)?;
        }
        Command::NmCheck {
            mve,
            nmve,
            mje,
            nmje,
            tolerance,
        } => {
            let check = nm_consistency_check(&NmRow { mve, nmve, mje, nmje }, tolerance)?;
            emit(stdout, &to_json(&check))?;
            if !check.pass {
                return Ok(EXIT_VALIDATION);
            }
        }
        Command::Report {
            leaderboard,
            basket,
            format,
            out,
        } => {
            let basket = BenchmarkBasket::resolve(&basket)?;
            let entries: Vec<LeaderboardEntry> = read_json(&leaderboard)?;
            let text = render_report(&entries, &basket, report_format(format));
            match out {
                Some(p) => write_file(&p, &text)?,
                None => emit(stdout, &text)?,
            }
        }
    }
    Ok(EXIT_OK)
}

fn report_format(f: FormatArg) -> ReportFormat {
    match f {
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::Markdown => ReportFormat::Markdown,
    }
}

fn held_out(
    model: &BodyModelData,
    n: usize,
    seed: u64,
    pose_free: bool,
) -> (Vec<Vec<crate::body_model::Vec3>>, Vec<Vec<f64>>) {
    let poses = if pose_free {
        crate::shape_adapter::zero_poses(model, n)
    } else {
        sample_poses(model, n, seed.wrapping_add(100))
    };
    (poses, sample_betas(n, seed.wrapping_add(101)))
}

/// Pairs predictions with ground truth by id (ground-truth order) and
/// computes every metric; per-instance values are reduced in that order.
pub fn evaluate(
    model: &BodyModelData,
    pred: &[InstanceRecord],
    gt: &[InstanceRecord],
    specs: &[MetricSpec],
    opts: &EvalOptions,
) -> Result<Vec<crate::metrics::MetricReport>> {
    let by_id: std::collections::HashMap<&str, &InstanceRecord> = pred.iter().map(|r| (r.id.as_str(), r)).collect();
    let pairs = gt
        .iter()
        .map(|g| {
            by_id
                .get(g.id.as_str())
                .map(|p| (*p, g))
                .ok_or_else(|| Error::MissingValue(format!("no prediction for `{}`", g.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    if pairs.is_empty() {
        return Err(Error::EmptyInput("ground truth has no records".into()));
    }
    let rows: Vec<Vec<f64>> = pairs
        .par_iter()
        .map(|(p, g)| {
            let pm = forward(model, &p.state)?;
            let gm = forward(model, &g.state)?;
            instance_metrics(&pm, &gm, model, specs, opts)
        })
        .collect::<Result<_>>()?;
    specs
        .iter()
        .enumerate()
        .map(|(k, spec)| aggregate(*spec, rows.iter().map(|r| r[k]).collect()))
        .collect()
}
