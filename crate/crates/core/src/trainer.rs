//! Policy-gradient training of the cell selector.
//!
//! An episode starts from the empty selection. At each step the actor's mean
//! plus Gaussian noise gives a point in embedding space, the closest
//! unselected cell is added, and the reward is the change in relevance. The
//! state vector is the sum of the selected cells' embeddings. Updates use the
//! clipped surrogate objective with a T-step bootstrapped advantage.

use std::collections::BTreeSet;
use std::time::Instant;

use ndarray::{Array1, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cube::{CellId, DataCube, ObjectSet, QuerySet};
use crate::embedding::{nearest_cell, CellEmbeddingTable};
use crate::error::{Error, Result};
use crate::policy::{
    adam_step, forward, gaussian_log_density, init_params, param_gradients, sample_action, AdamConfig,
    OptimizerState, PolicyParameters,
};
use crate::relevance::{relevance, step_reward, EvalCounter};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Trajectory length T, equal to the number of cells to select.
    pub horizon: usize,
    /// Trajectories sampled per iteration.
    pub alpha: usize,
    /// Outer iterations.
    pub beta: usize,
    /// Discount of the advantage estimator.
    pub gamma: f64,
    pub clip_epsilon: f64,
    pub sgd_epochs: usize,
    pub minibatch_size: usize,
    pub hidden: usize,
    pub value_coef: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            alpha: 40,
            beta: 40,
            gamma: 0.99,
            clip_epsilon: 0.2,
            sgd_epochs: 4,
            minibatch_size: 64,
            hidden: crate::policy::DEFAULT_HIDDEN,
            value_coef: 0.5,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("horizon", self.horizon),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("sgd_epochs", self.sgd_epochs),
            ("minibatch_size", self.minibatch_size),
            ("hidden", self.hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Input(format!("{name} must be positive")));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Input(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(Error::Input(format!("clip_epsilon must lie in (0, 1), got {}", self.clip_epsilon)));
        }
        if !(self.adam.lr > 0.0 && self.value_coef >= 0.0) {
            return Err(Error::Input("learning rate must be positive and value_coef non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    /// Sum of the embeddings of the cells selected before this step.
    pub state: Array1<f64>,
    /// The sampled continuous action.
    pub action: Array1<f64>,
    pub cell: CellId,
    pub reward: f64,
    /// Log-density of `action` under the sampling parameters.
    pub log_prob: f64,
    /// Relevance after this step.
    pub quality: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub final_state: Array1<f64>,
    pub final_quality: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn cells(&self) -> Vec<CellId> {
        self.transitions.iter().map(|t| t.cell).collect()
    }

    pub fn total_reward(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }

    pub fn log_prob(&self) -> f64 {
        self.transitions.iter().map(|t| t.log_prob).sum()
    }

    /// Highest-quality prefix as (cells, quality); the first such prefix on
    /// ties. The empty prefix has quality 0.
    pub fn best_prefix(&self) -> (Vec<CellId>, f64) {
        let mut best = (0, 0.0);
        for (i, t) in self.transitions.iter().enumerate() {
            if t.quality > best.1 {
                best = (i + 1, t.quality);
            }
        }
        (self.cells()[..best.0].to_vec(), best.1)
    }
}

/// Selection state of one episode.
struct Episode<'a> {
    cube: &'a DataCube,
    embeddings: &'a CellEmbeddingTable,
    query: &'a QuerySet,
    selected: BTreeSet<CellId>,
    members: ObjectSet,
    state: Array1<f64>,
    quality: f64,
}

impl<'a> Episode<'a> {
    fn new(cube: &'a DataCube, embeddings: &'a CellEmbeddingTable, query: &'a QuerySet) -> Self {
        Self {
            cube,
            embeddings,
            query,
            selected: BTreeSet::new(),
            members: ObjectSet::new(),
            state: Array1::zeros(embeddings.kappa()),
            quality: 0.0,
        }
    }

    fn exhausted(&self) -> bool {
        self.selected.len() >= self.embeddings.len()
    }

    fn retrieve(&self, action: ArrayView1<f64>) -> Result<CellId> {
        nearest_cell(action, self.embeddings, &self.selected)
    }

    /// Adds a cell and returns the reward.
    fn add(&mut self, cell: CellId, counter: &mut EvalCounter) -> Result<f64> {
        self.members.extend(self.cube.cell(cell)?.members.iter().copied());
        self.selected.insert(cell);
        self.state += &self.embeddings.get(cell);
        let next = counter.relevance(&self.members, self.query);
        let reward = step_reward(self.quality, next);
        self.quality = next;
        Ok(reward)
    }
}

fn check_inputs(cube: &DataCube, embeddings: &CellEmbeddingTable, params: &PolicyParameters) -> Result<()> {
    if cube.num_cells() == 0 {
        return Err(Error::Input("cube has no cells".into()));
    }
    if embeddings.len() != cube.num_cells() {
        return Err(Error::Internal("embedding table does not match the cube".into()));
    }
    if embeddings.kappa() != params.kappa() {
        return Err(Error::Internal("embedding width does not match the network".into()));
    }
    Ok(())
}

/// Samples one trajectory of at most `horizon` distinct cells.
pub fn rollout(
    params: &PolicyParameters,
    cube: &DataCube,
    embeddings: &CellEmbeddingTable,
    query: &QuerySet,
    horizon: usize,
    rng: &mut ChaCha8Rng,
    counter: &mut EvalCounter,
) -> Result<Trajectory> {
    check_inputs(cube, embeddings, params)?;
    let sigma = params.sigma();
    let mut ep = Episode::new(cube, embeddings, query);
    let mut transitions = Vec::with_capacity(horizon);
    while transitions.len() < horizon && !ep.exhausted() {
        let out = forward(params, ep.state.view())?;
        let action = sample_action(out.mu.view(), sigma, rng);
        let log_prob = gaussian_log_density(action.view(), out.mu.view(), sigma)?.log_density;
        let cell = ep.retrieve(action.view())?;
        let state = ep.state.clone();
        let reward = ep.add(cell, counter)?;
        transitions.push(Transition {
            state,
            action,
            cell,
            reward,
            log_prob,
            quality: ep.quality,
        });
    }
    Ok(Trajectory {
        transitions,
        final_state: ep.state,
        final_quality: ep.quality,
    })
}

/// T-step advantages from precomputed critic values.
///
/// `A_t = -v_t + Σ_{k=t}^{T-1} γ^{k-t} r_k + γ^{T-t} v_T`; the value target is
/// `A_t + v_t`.
pub fn advantages_from_values(rewards: &[f64], values: &[f64], terminal_value: f64, gamma: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut targets = vec![0.0; n];
    let mut ret = terminal_value;
    for t in (0..n).rev() {
        ret = rewards[t] + gamma * ret;
        adv[t] = ret - values[t];
        targets[t] = ret;
    }
    (adv, targets)
}

pub fn compute_advantages(traj: &Trajectory, params: &PolicyParameters, gamma: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if traj.is_empty() {
        return Err(Error::Input("cannot estimate advantages of an empty trajectory".into()));
    }
    let values = traj
        .transitions
        .iter()
        .map(|t| forward(params, t.state.view()).map(|o| o.value))
        .collect::<Result<Vec<_>>>()?;
    let terminal = forward(params, traj.final_state.view())?.value;
    let rewards: Vec<f64> = traj.transitions.iter().map(|t| t.reward).collect();
    Ok(advantages_from_values(&rewards, &values, terminal, gamma))
}

/// One training example for the surrogate update.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub state: Array1<f64>,
    pub action: Array1<f64>,
    pub log_prob_old: f64,
    pub advantage: f64,
    pub value_target: f64,
}

/// `min(ρ A, clip(ρ, 1-ε, 1+ε) A)`.
pub fn clipped_objective(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    /// Mean surrogate loss over the last epoch.
    pub policy_loss: f64,
    /// Mean squared value error over the last epoch.
    pub value_loss: f64,
    /// Fraction of samples in the last epoch whose ratio was clipped.
    pub clip_fraction: f64,
}

fn normalize(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    values.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// Several epochs of minibatch Adam on the clipped surrogate plus value loss.
pub fn ppo_iteration(
    params: &mut PolicyParameters,
    opt: &mut OptimizerState,
    batch: &[Sample],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    if batch.is_empty() {
        return Err(Error::Input("empty update batch".into()));
    }
    let advantages = normalize(&batch.iter().map(|s| s.advantage).collect::<Vec<_>>());
    let eps = config.clip_epsilon;
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut stats = UpdateStats::default();
    for _ in 0..config.sgd_epochs {
        order.shuffle(rng);
        let (mut pl, mut vl, mut clipped) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(config.minibatch_size) {
            let scale = 1.0 / chunk.len() as f64;
            let sigma = params.sigma();
            let mut grads = params.zeros_like();
            let mut loss = 0.0;
            for &i in chunk {
                let s = &batch[i];
                let adv = advantages[i];
                let out = forward(params, s.state.view())?;
                let g = gaussian_log_density(s.action.view(), out.mu.view(), sigma)?;
                let ratio = (g.log_density - s.log_prob_old).exp();
                let surrogate = clipped_objective(ratio, adv, eps);
                // The gradient flows only when the unclipped term is the minimum.
                let coeff = if ratio * adv <= surrogate { -ratio * adv * scale } else { 0.0 };
                if (ratio - 1.0).abs() > eps {
                    clipped += 1;
                }
                let err = out.value - s.value_target;
                loss += -surrogate * scale + config.value_coef * err * err * scale;
                pl += -surrogate;
                vl += err * err;

                let d_mu = &g.grad_mu * coeff;
                let d_value = 2.0 * config.value_coef * err * scale;
                grads.add_scaled(&param_gradients(params, &out.cache, d_mu.view(), d_value)?, 1.0);
                grads.log_sigma += coeff * g.grad_sigma * sigma;
            }
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss {loss} in surrogate update")));
            }
            adam_step(params, &grads, opt, &config.adam);
        }
        let n = batch.len() as f64;
        stats = UpdateStats {
            policy_loss: pl / n,
            value_loss: vl / n,
            clip_fraction: clipped as f64 / n,
        };
    }
    if !params.is_finite() {
        return Err(Error::Numeric("parameters became non-finite".into()));
    }
    Ok(stats)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub mean_quality: f64,
    pub max_quality: f64,
    pub best_quality: f64,
    pub sigma: f64,
    pub value_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: Vec<IterationStats>,
    /// Best selection seen in any sampled trajectory, prefixes included.
    pub best_selection: Vec<CellId>,
    pub best_quality: f64,
    pub quality_evaluations: u64,
    pub trajectories: usize,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: PolicyParameters,
    pub optimizer: OptimizerState,
    pub report: TrainReport,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trains a fresh policy for one query.
///
/// Runs `beta` iterations; each samples `alpha` trajectories with the current
/// parameters and then performs a clipped-surrogate update on them.
pub fn train(
    cube: &DataCube,
    embeddings: &CellEmbeddingTable,
    query: &QuerySet,
    config: &TrainConfig,
) -> Result<TrainOutput> {
    config.validate()?;
    let start = Instant::now();
    let (mut params, mut opt) = init_params(embeddings.kappa(), config.hidden, config.seed, embeddings)?;
    check_inputs(cube, embeddings, &params)?;
    let mut shuffle_rng = stream_rng(config.seed, 1);
    let mut counter = EvalCounter::new();
    let mut best: (Vec<CellId>, f64) = (Vec::new(), 0.0);
    let mut iterations = Vec::with_capacity(config.beta);

    for it in 0..config.beta {
        let mut batch = Vec::with_capacity(config.alpha * config.horizon);
        let mut qualities = Vec::with_capacity(config.alpha);
        for j in 0..config.alpha {
            let mut rng = stream_rng(config.seed, 2 + (it * config.alpha + j) as u64);
            let traj = rollout(&params, cube, embeddings, query, config.horizon, &mut rng, &mut counter)?;
            let (cells, q) = traj.best_prefix();
            if q > best.1 {
                best = (cells, q);
            }
            qualities.push(traj.final_quality);
            let (adv, targets) = compute_advantages(&traj, &params, config.gamma)?;
            batch.extend(traj.transitions.into_iter().zip(adv).zip(targets).map(|((t, a), v)| Sample {
                state: t.state,
                action: t.action,
                log_prob_old: t.log_prob,
                advantage: a,
                value_target: v,
            }));
        }
        let update = ppo_iteration(&mut params, &mut opt, &batch, config, &mut shuffle_rng)?;
        let stats = IterationStats {
            iteration: it,
            mean_quality: qualities.iter().sum::<f64>() / qualities.len() as f64,
            max_quality: qualities.iter().copied().fold(0.0, f64::max),
            best_quality: best.1,
            sigma: params.sigma(),
            value_loss: update.value_loss,
        };
        log::info!(
            "iteration {:>4}  mean q {:.4}  max q {:.4}  best q {:.4}  sigma {:.4}",
            it,
            stats.mean_quality,
            stats.max_quality,
            stats.best_quality,
            stats.sigma
        );
        iterations.push(stats);
    }

    let (mut best_selection, best_quality) = best;
    best_selection.sort();
    Ok(TrainOutput {
        params,
        optimizer: opt,
        report: TrainReport {
            iterations,
            best_selection,
            best_quality,
            quality_evaluations: counter.count(),
            trajectories: config.alpha * config.beta,
            wall_time_secs: start.elapsed().as_secs_f64(),
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    /// Selected cells in ascending id order.
    pub cells: Vec<CellId>,
    pub quality: f64,
}

/// Noise-free rollout using the actor mean as the action. When a training
/// report is supplied, its best selection is returned instead if it scores
/// higher.
pub fn plan(
    params: &PolicyParameters,
    cube: &DataCube,
    embeddings: &CellEmbeddingTable,
    query: &QuerySet,
    horizon: usize,
    report: Option<&TrainReport>,
) -> Result<Plan> {
    check_inputs(cube, embeddings, params)?;
    // Inference evaluations are not charged to the training budget.
    let mut scratch = EvalCounter::new();
    let mut ep = Episode::new(cube, embeddings, query);
    let mut best = (0, 0.0);
    let mut order = Vec::with_capacity(horizon);
    while order.len() < horizon && !ep.exhausted() {
        let mu = forward(params, ep.state.view())?.mu;
        let cell = ep.retrieve(mu.view())?;
        ep.add(cell, &mut scratch)?;
        order.push(cell);
        if ep.quality > best.1 {
            best = (order.len(), ep.quality);
        }
    }
    let mut cells = order[..best.0].to_vec();
    cells.sort();
    let mut plan = Plan { cells, quality: best.1 };
    if let Some(r) = report {
        if r.best_quality > plan.quality {
            plan = Plan {
                cells: r.best_selection.clone(),
                quality: r.best_quality,
            };
        }
    }
    debug_assert_eq!(
        plan.quality,
        relevance(&crate::cube::union_members(cube, plan.cells.iter().copied())?, query)
    );
    Ok(plan)
}

#[cfg(test)]
mod tests;
