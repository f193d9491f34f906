//! Gendered → neutral shape-coefficient adapter.
//!
//! A small ReLU network `A` maps a gendered body's β to the neutral model's β
//! so that the posed meshes agree: it minimises the batch mean of the
//! per-vertex distance between `M_g(θ, β)` and `M_n(θ, A(β))`. The gradient
//! with respect to `A`'s output is taken by central differences through the
//! neutral model; the rest is exact backpropagation.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body_model::{forward, BodyModelData, FixedPoseForward, FullPoseState, PartLabel, Vec3, NUM_BETAS};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub trait ShapeAdapter: Sync {
    fn adapt(&self, beta: &[f64]) -> Vec<f64>;
}

/// Fully connected `10 → H → H → 10`, ReLU on hidden layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterMlp {
    pub layer_sizes: Vec<usize>,
    /// Per layer, `out × in`.
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
}

pub const DEFAULT_HIDDEN: usize = 64;

const GRAD_CHUNK: usize = 16;

struct ForwardCache {
    /// Inputs to each layer; the last entry is the output.
    activations: Vec<Vec<f64>>,
}

impl AdapterMlp {
    pub fn zeros(hidden: usize) -> Self {
        let layer_sizes = vec![NUM_BETAS, hidden, hidden, NUM_BETAS];
        let weights = layer_sizes
            .windows(2)
            .map(|w| vec![vec![0.0; w[0]]; w[1]])
            .collect();
        let biases = layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Self {
            layer_sizes,
            weights,
            biases,
        }
    }

    /// Mirrored ("looks-linear") initialisation: hidden units come in
    /// `(+u, −u)` pairs and the next layer reads them as `h⁺ − h⁻`, so the
    /// untrained network is an exact random linear map. Gradient descent is
    /// then free to bend it. With odd `hidden` the spare unit starts at zero.
    pub fn random(hidden: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::keyed(seed, "adapter-init");
        let mut m = Self::zeros(hidden);
        let pairs = hidden / 2;
        let mut gaussian = |rows: usize, cols: usize, std: f64| -> Vec<Vec<f64>> {
            (0..rows)
                .map(|_| (0..cols).map(|_| std * rng.normal()).collect())
                .collect()
        };
        let first = gaussian(pairs, NUM_BETAS, (1.0 / NUM_BETAS as f64).sqrt());
        let middle = gaussian(pairs, pairs, (1.0 / pairs.max(1) as f64).sqrt());
        let last = gaussian(NUM_BETAS, pairs, (1.0 / pairs.max(1) as f64).sqrt());
        for p in 0..pairs {
            for i in 0..NUM_BETAS {
                m.weights[0][p][i] = first[p][i];
                m.weights[0][pairs + p][i] = -first[p][i];
            }
            for q in 0..pairs {
                let w = middle[p][q];
                m.weights[1][p][q] = w;
                m.weights[1][p][pairs + q] = -w;
                m.weights[1][pairs + p][q] = -w;
                m.weights[1][pairs + p][pairs + q] = w;
            }
        }
        for o in 0..NUM_BETAS {
            for p in 0..pairs {
                m.weights[2][o][p] = last[o][p];
                m.weights[2][o][pairs + p] = -last[o][p];
            }
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.layer_sizes.len();
        if n < 2 || self.weights.len() != n - 1 || self.biases.len() != n - 1 {
            return Err(Error::parse("layer_sizes", "inconsistent layer count"));
        }
        if self.layer_sizes[0] != NUM_BETAS || self.layer_sizes[n - 1] != NUM_BETAS {
            return Err(Error::parse("layer_sizes", "adapter must map 10 → 10 coefficients"));
        }
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let (din, dout) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            if w.len() != dout || w.iter().any(|r| r.len() != din) || b.len() != dout {
                return Err(Error::parse(format!("weights[{l}]"), "shape does not match layer_sizes"));
            }
            if w.iter().flatten().chain(b).any(|x| !x.is_finite()) {
                return Err(Error::parse(format!("weights[{l}]"), "non-finite parameter"));
            }
        }
        Ok(())
    }

    fn forward_cached(&self, x: &[f64]) -> ForwardCache {
        let last = self.weights.len() - 1;
        let mut activations = vec![x.to_vec()];
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let input = activations.last().unwrap();
            let out: Vec<f64> = w
                .iter()
                .zip(b)
                .map(|(row, bias)| {
                    let z = bias + dot(row, input);
                    if l < last {
                        z.max(0.0)
                    } else {
                        z
                    }
                })
                .collect();
            activations.push(out);
        }
        ForwardCache { activations }
    }

    /// Adds the parameter gradient for `∂loss/∂output` into `grad`
    /// (laid out as [`Self::params`]).
    fn accumulate_backward(&self, cache: &ForwardCache, grad_out: &[f64], grad: &mut [f64]) {
        let mut offsets = Vec::with_capacity(self.weights.len());
        let mut at = 0;
        for w in self.layer_sizes.windows(2) {
            offsets.push(at);
            at += w[0] * w[1] + w[1];
        }
        let mut delta = grad_out.to_vec();
        for l in (0..self.weights.len()).rev() {
            let input = &cache.activations[l];
            let (din, dout) = (input.len(), delta.len());
            let layer = &mut grad[offsets[l]..offsets[l] + din * dout + dout];
            for (o, d) in delta.iter().enumerate() {
                for (g, x) in layer[o * din..(o + 1) * din].iter_mut().zip(input) {
                    *g += d * x;
                }
                layer[din * dout + o] += d;
            }
            if l > 0 {
                let mut next = vec![0.0; din];
                for (row, d) in self.weights[l].iter().zip(&delta) {
                    for (n, w) in next.iter_mut().zip(row) {
                        *n += w * d;
                    }
                }
                // ReLU derivative: the layer input is the previous ReLU output.
                for (n, x) in next.iter_mut().zip(input) {
                    if *x <= 0.0 {
                        *n = 0.0;
                    }
                }
                delta = next;
            }
        }
    }

    /// Flattened parameters: per layer, weights row-major then biases.
    pub fn params(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().flatten().chain(b).copied())
            .collect()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let mut it = p.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            w.iter_mut().flatten().chain(b.iter_mut()).for_each(|x| *x = it.next().unwrap());
        }
        debug_assert!(it.next().is_none());
    }

    pub fn num_params(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Dot product with four independent accumulators.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl ShapeAdapter for AdapterMlp {
    fn adapt(&self, beta: &[f64]) -> Vec<f64> {
        self.forward_cached(beta).activations.pop().unwrap()
    }
}

pub fn adapter_forward(adapter: &AdapterMlp, beta_gendered: &[f64]) -> Vec<f64> {
    adapter.adapt(beta_gendered)
}

/// Affine map `β ↦ M·β + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearAdapter {
    pub matrix: [[f64; NUM_BETAS]; NUM_BETAS],
    pub bias: [f64; NUM_BETAS],
}

impl LinearAdapter {
    pub fn identity() -> Self {
        let mut matrix = [[0.0; NUM_BETAS]; NUM_BETAS];
        (0..NUM_BETAS).for_each(|i| matrix[i][i] = 1.0);
        Self {
            matrix,
            bias: [0.0; NUM_BETAS],
        }
    }
}

impl ShapeAdapter for LinearAdapter {
    fn adapt(&self, beta: &[f64]) -> Vec<f64> {
        self.matrix
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(beta).map(|(m, x)| m * x).sum::<f64>())
            .collect()
    }
}

pub struct Identity;

impl ShapeAdapter for Identity {
    fn adapt(&self, beta: &[f64]) -> Vec<f64> {
        beta.to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterTrainConfig {
    pub steps: usize,
    pub step_size: f64,
    pub batch_size: usize,
    pub pose_sampler_seed: u64,
    pub beta_sampler_seed: u64,
    pub init_seed: u64,
    pub hidden: usize,
    /// Central-difference step in β units.
    pub fd_epsilon: f64,
    /// Train on the rest pose only.
    pub pose_free: bool,
    /// Training stops once backtracking shrinks the step below this.
    pub min_step_size: f64,
    pub objective: TrainingObjective,
}

impl Default for AdapterTrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            step_size: 50.0,
            batch_size: 64,
            pose_sampler_seed: 1,
            beta_sampler_seed: 2,
            init_seed: 3,
            hidden: DEFAULT_HIDDEN,
            fd_epsilon: 1e-4,
            pose_free: false,
            min_step_size: 1e-6,
            objective: TrainingObjective::default(),
        }
    }
}

impl AdapterTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::invalid("steps, batch_size and hidden must be positive"));
        }
        if !(self.step_size > 0.0 && self.fd_epsilon > 0.0 && self.min_step_size > 0.0) {
            return Err(Error::invalid("step sizes and fd_epsilon must be positive"));
        }
        Ok(())
    }
}

/// Clamped Gaussian axis-angles: σ 0.3 rad on body joints, 0.1 rad on hands
/// and face, each component limited to ±π/2.
pub fn sample_poses(model: &BodyModelData, n: usize, seed: u64) -> Vec<Vec<Vec3>> {
    let limit = std::f64::consts::FRAC_PI_2;
    let mut rng = SplitMix64::keyed(seed, "adapter-poses");
    (0..n)
        .map(|_| {
            model
                .tree
                .part_of_joint
                .iter()
                .map(|label| {
                    let sigma = match label {
                        PartLabel::Root | PartLabel::Body => 0.3,
                        _ => 0.1,
                    };
                    let mut r = [0.0; 3];
                    r.iter_mut()
                        .for_each(|x| *x = (sigma * rng.normal()).clamp(-limit, limit));
                    r
                })
                .collect()
        })
        .collect()
}

pub fn sample_betas(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SplitMix64::keyed(seed, "adapter-betas");
    (0..n)
        .map(|_| (0..NUM_BETAS).map(|_| rng.normal()).collect())
        .collect()
}

pub fn zero_poses(model: &BodyModelData, n: usize) -> Vec<Vec<Vec3>> {
    vec![vec![[0.0; 3]; model.num_joints()]; n]
}

fn check_topology(g: &BodyModelData, n: &BodyModelData) -> Result<()> {
    if g.num_vertices() != n.num_vertices() || g.tree != n.tree {
        return Err(Error::invalid(format!(
            "adapter models differ in topology ({} vs {} vertices); cross-topology adaptation is not supported",
            g.num_vertices(),
            n.num_vertices()
        )));
    }
    Ok(())
}

fn posed_vertices(model: &BodyModelData, theta: &[Vec3], beta: &[f64]) -> Result<Vec<Vec3>> {
    let mut s = FullPoseState::zero(model.num_joints());
    s.theta = theta.to_vec();
    s.beta = beta.to_vec();
    Ok(forward(model, &s)?.vertices)
}

fn mean_vertex_distance(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| squared_distance(p, q).sqrt())
        .sum::<f64>()
        / a.len() as f64
}

fn squared_distance(p: &Vec3, q: &Vec3) -> f64 {
    (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)
}

fn check_batch(poses: &[Vec<Vec3>], betas: &[Vec<f64>]) -> Result<()> {
    if poses.len() != betas.len() || poses.is_empty() {
        return Err(Error::invalid(format!(
            "batch needs matching non-empty pose and beta lists, got {} and {}",
            poses.len(),
            betas.len()
        )));
    }
    Ok(())
}

/// Batch mean of the mean per-vertex distance (meters) between the gendered
/// posed mesh and the neutral one under the adapted β.
pub fn adapter_loss(
    model_g: &BodyModelData,
    model_n: &BodyModelData,
    adapter: &dyn ShapeAdapter,
    poses: &[Vec<Vec3>],
    betas: &[Vec<f64>],
) -> Result<f64> {
    objective_loss(model_g, model_n, adapter, poses, betas, TrainingObjective::MeanDistance)
}

/// [`adapter_loss`] generalised to either training objective, through the
/// full forward pass.
pub fn objective_loss(
    model_g: &BodyModelData,
    model_n: &BodyModelData,
    adapter: &dyn ShapeAdapter,
    poses: &[Vec<Vec3>],
    betas: &[Vec<f64>],
    objective: TrainingObjective,
) -> Result<f64> {
    check_topology(model_g, model_n)?;
    check_batch(poses, betas)?;
    let per: Vec<f64> = poses
        .par_iter()
        .zip(betas)
        .map(|(theta, beta)| {
            let g = posed_vertices(model_g, theta, beta)?;
            let n = posed_vertices(model_n, theta, &adapter.adapt(beta))?;
            Ok(objective.score(&g, &n))
        })
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Mean held-out vertex-to-vertex error in millimeters.
pub fn eval_adapter(
    model_g: &BodyModelData,
    model_n: &BodyModelData,
    adapter: &dyn ShapeAdapter,
    poses: &[Vec<Vec3>],
    betas: &[Vec<f64>],
) -> Result<f64> {
    Ok(1000.0 * adapter_loss(model_g, model_n, adapter, poses, betas)?)
}

/// What gradient descent minimises. `MeanDistance` is [`adapter_loss`]
/// itself; `MeanSquaredDistance` has the same zero set but is smooth where
/// vertices coincide, which plain gradient descent needs to make progress
/// near a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingObjective {
    MeanDistance,
    #[default]
    MeanSquaredDistance,
}

impl TrainingObjective {
    fn score(self, target: &[Vec3], mesh: &[Vec3]) -> f64 {
        match self {
            Self::MeanDistance => mean_vertex_distance(target, mesh),
            Self::MeanSquaredDistance => {
                target.iter().zip(mesh).map(|(p, q)| squared_distance(p, q)).sum::<f64>()
                    / target.len() as f64
            }
        }
    }
}

/// A fixed training batch: gendered target meshes plus the neutral model
/// prepared for each pose.
pub struct TrainingBatch<'a> {
    neutral: Vec<FixedPoseForward<'a>>,
    betas: Vec<Vec<f64>>,
    targets: Vec<Vec<Vec3>>,
    objective: TrainingObjective,
}

impl<'a> TrainingBatch<'a> {
    pub fn new(
        model_g: &BodyModelData,
        model_n: &'a BodyModelData,
        poses: &[Vec<Vec3>],
        betas: Vec<Vec<f64>>,
        objective: TrainingObjective,
    ) -> Result<Self> {
        check_topology(model_g, model_n)?;
        check_batch(poses, &betas)?;
        let targets = poses
            .par_iter()
            .zip(&betas)
            .map(|(t, b)| FixedPoseForward::new(model_g, t)?.vertices(b))
            .collect::<Result<_>>()?;
        let neutral = poses
            .iter()
            .map(|t| FixedPoseForward::new(model_n, t))
            .collect::<Result<_>>()?;
        Ok(Self {
            neutral,
            betas,
            targets,
            objective,
        })
    }

    fn sample_score(&self, k: usize, y: &[f64]) -> Result<f64> {
        Ok(self.objective.score(&self.targets[k], &self.neutral[k].vertices(y)?))
    }

    pub fn loss(&self, adapter: &AdapterMlp) -> Result<f64> {
        let per: Vec<f64> = (0..self.betas.len())
            .into_par_iter()
            .map(|k| self.sample_score(k, &adapter.adapt(&self.betas[k])))
            .collect::<Result<_>>()?;
        Ok(per.iter().sum::<f64>() / per.len() as f64)
    }

    /// Loss and its gradient with respect to the flattened adapter
    /// parameters. Per sample, the output gradient comes from central
    /// differences (two neutral forwards per output coefficient); the
    /// network part is backpropagated exactly. Samples are summed in fixed
    /// chunks, then chunks in order, so thread count never changes the result.
    pub fn loss_and_grad(&self, adapter: &AdapterMlp, fd_epsilon: f64) -> Result<(f64, Vec<f64>)> {
        let n = self.betas.len();
        let chunks: Vec<(f64, Vec<f64>)> = (0..n.div_ceil(GRAD_CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut loss = 0.0;
                let mut grad = vec![0.0; adapter.num_params()];
                for k in c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(n) {
                    loss += self.sample_loss_and_grad(k, adapter, fd_epsilon, &mut grad)?;
                }
                Ok((loss, grad))
            })
            .collect::<Result<_>>()?;
        let mut grad = vec![0.0; adapter.num_params()];
        let mut loss = 0.0;
        for (l, g) in &chunks {
            loss += l;
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        let k = n as f64;
        grad.iter_mut().for_each(|g| *g /= k);
        Ok((loss / k, grad))
    }

    fn sample_loss_and_grad(
        &self,
        k: usize,
        adapter: &AdapterMlp,
        fd_epsilon: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        let cache = adapter.forward_cached(&self.betas[k]);
        let y = cache.activations.last().unwrap();
        let loss = self.sample_score(k, y)?;
        let mut grad_out = vec![0.0; y.len()];
        let mut probe = y.clone();
        for i in 0..y.len() {
            probe[i] = y[i] + fd_epsilon;
            let plus = self.sample_score(k, &probe)?;
            probe[i] = y[i] - fd_epsilon;
            let minus = self.sample_score(k, &probe)?;
            probe[i] = y[i];
            grad_out[i] = (plus - minus) / (2.0 * fd_epsilon);
        }
        adapter.accumulate_backward(&cache, &grad_out, grad);
        Ok(loss)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedAdapter {
    pub adapter: AdapterMlp,
    /// Training objective after each step; non-increasing.
    pub loss_trace: Vec<f64>,
    pub final_step_size: f64,
}

/// Plain gradient descent on a fixed seeded batch. A step that does not
/// lower the objective is rejected and the step size halved, so the loss
/// trace is non-increasing; training ends early once the step size falls
/// below `min_step_size`.
pub fn train_adapter(
    model_g: &BodyModelData,
    model_n: &BodyModelData,
    config: &AdapterTrainConfig,
) -> Result<TrainedAdapter> {
    config.validate()?;
    check_topology(model_g, model_n)?;
    let poses = if config.pose_free {
        zero_poses(model_n, config.batch_size)
    } else {
        sample_poses(model_n, config.batch_size, config.pose_sampler_seed)
    };
    let betas = sample_betas(config.batch_size, config.beta_sampler_seed);
    let batch = TrainingBatch::new(model_g, model_n, &poses, betas, config.objective)?;

    let mut adapter = AdapterMlp::random(config.hidden, config.init_seed);
    let mut params = adapter.params();
    let mut eta = config.step_size;
    let (mut loss, mut grad) = batch.loss_and_grad(&adapter, config.fd_epsilon)?;
    if !loss.is_finite() {
        return Err(Error::TrainingFailure {
            step: 0,
            message: format!("initial loss is {loss}"),
        });
    }
    let mut trace = vec![loss];
    let mut candidate = adapter.clone();
    'steps: for step in 1..=config.steps {
        loop {
            let next: Vec<f64> = params.iter().zip(&grad).map(|(p, g)| p - eta * g).collect();
            candidate.set_params(&next);
            let cand_loss = batch.loss(&candidate)?;
            if cand_loss <= loss {
                params = next;
                adapter.set_params(&params);
                break;
            }
            eta *= 0.5;
            if eta < config.min_step_size {
                if cand_loss.is_nan() {
                    return Err(Error::TrainingFailure {
                        step,
                        message: "loss is NaN at every trial step size".into(),
                    });
                }
                break 'steps;
            }
        }
        let (l, g) = batch.loss_and_grad(&adapter, config.fd_epsilon)?;
        if !l.is_finite() {
            return Err(Error::TrainingFailure {
                step,
                message: format!("loss is {l}"),
            });
        }
        loss = l;
        grad = g;
        trace.push(loss);
    }
    Ok(TrainedAdapter {
        adapter,
        loss_trace: trace,
        final_step_size: eta,
    })
}

/// Exact least-squares affine map over the rest pose, where the mesh is
/// linear in β: per sample the best neutral β is the least-squares solution
/// against the neutral shape basis, then an affine regression of those on
/// the gendered β gives the map.
pub fn fit_linear_baseline(
    model_g: &BodyModelData,
    model_n: &BodyModelData,
    betas: &[Vec<f64>],
) -> Result<LinearAdapter> {
    check_topology(model_g, model_n)?;
    let v = model_n.num_vertices();
    let rows = 3 * v;
    let basis = DMatrix::from_fn(rows, NUM_BETAS, |r, b| model_n.shape_dirs[r / 3][r % 3][b]);
    let basis_svd = basis.clone().svd(true, true);
    let basis_rank = basis_svd.rank(1e-12 * basis_svd.singular_values.max());
    if basis_rank < NUM_BETAS {
        return Err(Error::RankDeficient {
            rank: basis_rank,
            required: NUM_BETAS,
        });
    }

    let k = betas.len();
    let mut design = DMatrix::zeros(k, NUM_BETAS + 1);
    let mut best = DMatrix::zeros(k, NUM_BETAS);
    for (i, beta) in betas.iter().enumerate() {
        if beta.len() != NUM_BETAS {
            return Err(Error::invalid(format!("beta {i} has {} coefficients", beta.len())));
        }
        let target = DVector::from_fn(rows, |r, _| {
            let (vi, c) = (r / 3, r % 3);
            let g: f64 = model_g.template_vertices[vi][c]
                + (0..NUM_BETAS).map(|b| model_g.shape_dirs[vi][c][b] * beta[b]).sum::<f64>();
            g - model_n.template_vertices[vi][c]
        });
        let y = basis_svd
            .solve(&target, 1e-12)
            .map_err(|e| Error::invalid(e.to_string()))?;
        for b in 0..NUM_BETAS {
            design[(i, b)] = beta[b];
            best[(i, b)] = y[b];
        }
        design[(i, NUM_BETAS)] = 1.0;
    }
    let design_svd = design.svd(true, true);
    let max_sv = design_svd.singular_values.max();
    let rank = if max_sv > 0.0 {
        design_svd.rank(1e-10 * max_sv)
    } else {
        0
    };
    if rank < NUM_BETAS + 1 {
        return Err(Error::RankDeficient {
            rank,
            required: NUM_BETAS + 1,
        });
    }
    // coef: (11 × 10), rows = inputs (+ bias), columns = outputs.
    let coef = design_svd
        .solve(&best, 1e-12)
        .map_err(|e| Error::invalid(e.to_string()))?;
    let mut out = LinearAdapter {
        matrix: [[0.0; NUM_BETAS]; NUM_BETAS],
        bias: [0.0; NUM_BETAS],
    };
    for o in 0..NUM_BETAS {
        for i in 0..NUM_BETAS {
            out.matrix[o][i] = coef[(i, o)];
        }
        out.bias[o] = coef[(NUM_BETAS, o)];
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterCheckpoint {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
    pub config: AdapterTrainConfig,
    pub final_eval_mm: Option<f64>,
}

impl AdapterCheckpoint {
    pub fn new(adapter: &AdapterMlp, config: &AdapterTrainConfig, final_eval_mm: Option<f64>) -> Self {
        Self {
            layer_sizes: adapter.layer_sizes.clone(),
            weights: adapter.weights.clone(),
            biases: adapter.biases.clone(),
            config: config.clone(),
            final_eval_mm,
        }
    }

    pub fn adapter(&self) -> Result<AdapterMlp> {
        let a = AdapterMlp {
            layer_sizes: self.layer_sizes.clone(),
            weights: self.weights.clone(),
            biases: self.biases.clone(),
        };
        a.validate()?;
        Ok(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body_model::{gen_toy_model, perturbed_variant, Layout};

    fn naive_forward(a: &AdapterMlp, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let layers = a.weights.len();
        for l in 0..layers {
            let mut out = vec![0.0; a.layer_sizes[l + 1]];
            for o in 0..out.len() {
                let mut z = a.biases[l][o];
                for i in 0..h.len() {
                    z += a.weights[l][o][i] * h[i];
                }
                out[o] = if l + 1 < layers && z < 0.0 { 0.0 } else { z };
            }
            h = out;
        }
        h
    }

    #[test]
    fn zero_adapter_outputs_final_bias() {
        let mut a = AdapterMlp::zeros(8);
        a.biases[2] = (0..10).map(|i| i as f64).collect();
        assert_eq!(adapter_forward(&a, &[1.0; 10]), a.biases[2]);
    }

    #[test]
    fn identity_chain() {
        let mut a = AdapterMlp::zeros(10);
        for l in 0..3 {
            for i in 0..10 {
                a.weights[l][i][i] = 1.0;
            }
        }
        let x: Vec<f64> = (0..10).map(|i| 0.5 * i as f64).collect();
        assert_eq!(adapter_forward(&a, &x), x);
    }

    #[test]
    fn forward_matches_naive_loops() {
        let mut rng = SplitMix64::new(4);
        for seed in 0..20 {
            let a = AdapterMlp::random(16, seed);
            let x: Vec<f64> = (0..10).map(|_| rng.normal()).collect();
            let fast = adapter_forward(&a, &x);
            let slow = naive_forward(&a, &x);
            for (p, q) in fast.iter().zip(&slow) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn params_round_trip() {
        let a = AdapterMlp::random(7, 1);
        let mut b = AdapterMlp::zeros(7);
        b.set_params(&a.params());
        assert_eq!(a, b);
        assert_eq!(a.params().len(), a.num_params());
    }

    #[test]
    fn loss_zero_for_identical_models_and_positive_otherwise() {
        let n = gen_toy_model(1, 80, 55, Layout::Canonical).unwrap();
        let poses = sample_poses(&n, 3, 1);
        let betas = sample_betas(3, 2);
        assert_eq!(adapter_loss(&n, &n, &Identity, &poses, &betas).unwrap(), 0.0);
        let g = perturbed_variant(&n, 9, 0.01);
        let a = AdapterMlp::random(16, 5);
        assert!(adapter_loss(&g, &n, &a, &poses, &betas).unwrap() > 0.0);
        let other = gen_toy_model(2, 90, 55, Layout::Canonical).unwrap();
        assert!(adapter_loss(&other, &n, &a, &poses, &betas).is_err());
    }

    #[test]
    fn linear_baseline_identity_and_underdetermined() {
        let n = gen_toy_model(1, 80, 55, Layout::Canonical).unwrap();
        let betas = sample_betas(30, 3);
        let lin = fit_linear_baseline(&n, &n, &betas).unwrap();
        let id = LinearAdapter::identity();
        for o in 0..10 {
            assert!((lin.bias[o]).abs() < 1e-9);
            for i in 0..10 {
                assert!((lin.matrix[o][i] - id.matrix[o][i]).abs() < 1e-9);
            }
        }
        assert!(matches!(
            fit_linear_baseline(&n, &n, &betas[..1]),
            Err(Error::RankDeficient { rank: 1, required: 11 })
        ));
    }

    #[test]
    fn pose_sampler_respects_limits() {
        let n = gen_toy_model(1, 80, 55, Layout::Canonical).unwrap();
        for pose in sample_poses(&n, 50, 3) {
            assert!(pose.iter().flatten().all(|x| x.abs() <= std::f64::consts::FRAC_PI_2));
        }
    }

    #[test]
    fn config_validation_and_checkpoint() {
        let mut c = AdapterTrainConfig::default();
        c.steps = 0;
        assert!(c.validate().is_err());
        let a = AdapterMlp::random(4, 1);
        let ck = AdapterCheckpoint::new(&a, &AdapterTrainConfig::default(), Some(1.5));
        let json = serde_json::to_string(&ck).unwrap();
        assert!(json.starts_with(r#"{"layer_sizes":[10,4,4,10],"weights":"#));
        let back: AdapterCheckpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(back.adapter().unwrap(), a);
    }

    #[test]
    fn untrained_adapter_is_linear() {
        let a = AdapterMlp::random(64, 9);
        let betas = sample_betas(3, 1);
        assert!(a.adapt(&[0.0; 10]).iter().all(|y| y.abs() < 1e-15));
        let sum: Vec<f64> = betas[0].iter().zip(&betas[1]).map(|(x, y)| 2.0 * x - 3.0 * y).collect();
        let lhs = a.adapt(&sum);
        let (y0, y1) = (a.adapt(&betas[0]), a.adapt(&betas[1]));
        for o in 0..10 {
            assert!((lhs[o] - (2.0 * y0[o] - 3.0 * y1[o])).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_distance_objective_equals_adapter_loss() {
        let g = gen_toy_model(1, 60, 12, Layout::Minimal).unwrap();
        let n = perturbed_variant(&g, 2, 0.01);
        let poses = sample_poses(&n, 4, 1);
        let betas = sample_betas(4, 2);
        let a = AdapterMlp::random(8, 1);
        let batch = TrainingBatch::new(&g, &n, &poses, betas.clone(), TrainingObjective::MeanDistance).unwrap();
        let direct = adapter_loss(&g, &n, &a, &poses, &betas).unwrap();
        assert!((batch.loss(&a).unwrap() - direct).abs() < 1e-14);
        let (l, grad) = batch.loss_and_grad(&a, 1e-4).unwrap();
        assert!((l - direct).abs() < 1e-14);
        assert_eq!(grad.len(), a.num_params());
    }

    #[test]
    fn nan_model_is_a_training_failure() {
        let g = gen_toy_model(1, 60, 12, Layout::Minimal).unwrap();
        let mut n = g.clone();
        n.shape_dirs[0][0][0] = f64::NAN;
        let cfg = AdapterTrainConfig {
            steps: 3,
            batch_size: 2,
            hidden: 4,
            ..Default::default()
        };
        assert!(matches!(
            train_adapter(&g, &n, &cfg),
            Err(Error::TrainingFailure { step: 0, .. })
        ));
    }

    #[test]
    fn trace_is_non_increasing_and_training_deterministic() {
        let g = gen_toy_model(4, 60, 12, Layout::Minimal).unwrap();
        let n = perturbed_variant(&g, 5, 0.005);
        let cfg = AdapterTrainConfig {
            steps: 30,
            batch_size: 8,
            hidden: 16,
            ..Default::default()
        };
        let a = train_adapter(&g, &n, &cfg).unwrap();
        let b = train_adapter(&g, &n, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.loss_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(a.loss_trace.last().unwrap() < &a.loss_trace[0]);
    }
}
