//! Policy-gradient learning: diagonal-Gaussian actor, critic, GAE and a
//! clipped-surrogate PPO trainer.

pub mod checkpoint;
pub mod nn;

use std::f64::consts::{E, PI};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AbstractState, Atom};
pub use checkpoint::{load_checkpoint, load_checkpoint_checked, save_checkpoint, CheckpointSignature, ObjectRef};
pub use nn::Mlp;

/// An episodic control problem with continuous actions.
pub trait Episodic {
    type State: Clone;

    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn max_steps(&self) -> usize;
    /// Initial state of the `episode`-th episode.
    fn reset(&self, episode: usize, rng: &mut ChaCha8Rng) -> Self::State;
    fn observe(&self, s: &Self::State) -> Vec<f64>;
    /// Next state, reward, and whether the next state is terminal.
    fn step(&self, s: &Self::State, action: &[f64]) -> (Self::State, f64, bool);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoHyper {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub gamma: f64,
    pub entropy_coeff: f64,
    pub clip_ratio: f64,
    pub gae_lambda: f64,
    pub episodes: usize,
    pub max_steps: usize,
    pub steps_per_update: usize,
    pub value_coeff: f64,
    pub max_grad_norm: f64,
    pub hidden: usize,
    /// Initial `log_std`, one value for every action dimension or one per dimension.
    pub init_log_std: Vec<f64>,
}

impl Default for PpoHyper {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            batch_size: 16,
            epochs: 10,
            gamma: 0.99,
            entropy_coeff: 0.01,
            clip_ratio: 0.2,
            gae_lambda: 0.95,
            episodes: 1000,
            max_steps: 50,
            steps_per_update: 2048,
            value_coeff: 0.5,
            max_grad_norm: 0.5,
            hidden: 64,
            // Narrow initial spread on the grip so early episodes rarely
            // drop a held block.
            init_log_std: vec![0.0, 0.0, -1.5],
        }
    }
}

impl PpoHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("ppo: {m}")));
        if self.episodes == 0 {
            return bad("episodes must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if self.clip_ratio <= 0.0 || self.learning_rate <= 0.0 {
            return bad("clip_ratio and learning_rate must be positive");
        }
        if self.init_log_std.is_empty() {
            return bad("init_log_std must not be empty");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.max_steps == 0 || self.steps_per_update == 0 || self.hidden == 0 {
            return bad("counts must be positive");
        }
        Ok(())
    }
}

/// Actor and critic parameters in one flat vector: policy network, then
/// `log_std`, then value network.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden: usize,
    pub theta: Vec<f64>,
}

impl PolicyParams {
    pub fn policy_net(&self) -> Mlp {
        Mlp::new(vec![self.obs_dim, self.hidden, self.hidden, self.act_dim])
    }

    pub fn value_net(&self) -> Mlp {
        Mlp::new(vec![self.obs_dim, self.hidden, self.hidden, 1])
    }

    pub fn param_count(obs_dim: usize, act_dim: usize, hidden: usize) -> usize {
        let p = Mlp::new(vec![obs_dim, hidden, hidden, act_dim]).param_count();
        let v = Mlp::new(vec![obs_dim, hidden, hidden, 1]).param_count();
        p + act_dim + v
    }

    pub fn zeros(obs_dim: usize, act_dim: usize, hidden: usize) -> Self {
        Self { obs_dim, act_dim, hidden, theta: vec![0.0; Self::param_count(obs_dim, act_dim, hidden)] }
    }

    /// Gaussian weights with variance `1 / fan_in`, zero biases; small
    /// policy output layer so initial actions are centred.
    pub fn init(obs_dim: usize, act_dim: usize, hidden: usize, init_log_std: &[f64], rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros(obs_dim, act_dim, hidden);
        let (pr, lr, vr) = p.ranges();
        for (net, range, out_scale) in [(p.policy_net(), pr, 0.01), (p.value_net(), vr, 1.0)] {
            let slice = &mut p.theta[range];
            for (w, fan_in) in net.layer_weights() {
                let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("positive std");
                slice[w].iter_mut().for_each(|v| *v = normal.sample(rng));
            }
            net.scale_output_layer(slice, out_scale);
        }
        p.theta[lr].iter_mut().enumerate().for_each(|(j, v)| *v = init_log_std[j.min(init_log_std.len() - 1)]);
        p
    }

    fn ranges(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>, std::ops::Range<usize>) {
        let np = self.policy_net().param_count();
        let a = self.act_dim;
        (0..np, np..np + a, np + a..self.theta.len())
    }

    pub fn log_std(&self) -> &[f64] {
        &self.theta[self.ranges().1]
    }

    /// Action mean, `log_std` and state value.
    pub fn forward(&self, obs: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        if obs.len() != self.obs_dim {
            return Err(Error::DimensionMismatch { expected: self.obs_dim, got: obs.len() });
        }
        let (pr, lr, vr) = self.ranges();
        let mean = self.policy_net().output(&self.theta[pr], obs);
        let value = self.value_net().output(&self.theta[vr], obs)[0];
        Ok((mean, self.theta[lr].to_vec(), value))
    }

    pub fn mean_action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        if obs.len() != self.obs_dim {
            return Err(Error::DimensionMismatch { expected: self.obs_dim, got: obs.len() });
        }
        Ok(self.policy_net().output(&self.theta[self.ranges().0], obs))
    }

    /// Differential entropy of the action distribution.
    pub fn entropy(&self) -> f64 {
        gaussian_entropy(self.log_std())
    }

    /// Rounds every parameter through 32-bit precision, so the values are
    /// exactly representable in a checkpoint.
    pub fn quantize_f32(&mut self) {
        self.theta.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}

pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().sum::<f64>() + 0.5 * log_std.len() as f64 * (2.0 * PI * E).ln()
}

pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, ls), a)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

/// Multi-hot encoding of `s_term` over an atom vocabulary.
pub fn goal_encoding(vocabulary: &[Atom], s_term: &AbstractState) -> Vec<f64> {
    vocabulary.iter().map(|a| if s_term.contains(a) { 1.0 } else { 0.0 }).collect()
}

/// Transitions from whole episodes, in collection order.
#[derive(Clone, Debug, Default)]
pub struct RolloutBatch {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// Last transition of an episode.
    pub episode_end: Vec<bool>,
    /// The episode ended because a terminal state was reached.
    pub terminal: Vec<bool>,
    /// `V(s_T)` at truncated episode ends, zero elsewhere.
    pub bootstrap: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn clear(&mut self) {
        *self = RolloutBatch::default();
    }
}

/// Generalized advantage estimates and returns (`advantage + value`).
pub fn gae(batch: &RolloutBatch, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = batch.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let (next_v, carry) = if batch.episode_end[t] {
            (if batch.terminal[t] { 0.0 } else { batch.bootstrap[t] }, 0.0)
        } else {
            (batch.values[t + 1], next_adv)
        };
        let delta = batch.rewards[t] + gamma * next_v - batch.values[t];
        adv[t] = delta + gamma * lambda * carry;
        next_adv = adv[t];
    }
    let ret = adv.iter().zip(&batch.values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// One training sample for the PPO loss.
#[derive(Clone, Debug)]
pub struct Sample {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LossParts {
    /// Negated clipped surrogate, averaged over samples.
    pub policy: f64,
    /// Mean squared value error.
    pub value: f64,
    pub entropy: f64,
    /// `w.policy * policy + w.value * value - w.entropy * entropy`.
    pub total: f64,
}

/// PPO loss over `samples`.
pub fn ppo_loss(params: &PolicyParams, samples: &[Sample], clip: f64, w: LossWeights) -> LossParts {
    loss_impl(params, samples, clip, w, None)
}

/// PPO loss and its gradient with respect to `params.theta`.
pub fn ppo_loss_and_grad(params: &PolicyParams, samples: &[Sample], clip: f64, w: LossWeights) -> (LossParts, Vec<f64>) {
    let mut g = vec![0.0; params.theta.len()];
    let parts = loss_impl(params, samples, clip, w, Some(&mut g));
    (parts, g)
}

fn loss_impl(params: &PolicyParams, samples: &[Sample], clip: f64, w: LossWeights, mut grad: Option<&mut [f64]>) -> LossParts {
    let (pr, lr, vr) = params.ranges();
    let (pnet, vnet) = (params.policy_net(), params.value_net());
    let log_std = &params.theta[lr.clone()];
    let inv_b = 1.0 / samples.len().max(1) as f64;
    let (mut pol, mut val) = (0.0, 0.0);
    let mut g_mean = vec![0.0; params.act_dim];
    for s in samples {
        let (mean, pcache) = pnet.forward(&params.theta[pr.clone()], &s.obs);
        let (v, vcache) = vnet.forward(&params.theta[vr.clone()], &s.obs);
        let lp = gaussian_log_prob(&mean, log_std, &s.action);
        let ratio = (lp - s.old_log_prob).exp();
        let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
        let (unclipped_obj, clipped_obj) = (ratio * s.advantage, clipped * s.advantage);
        pol -= unclipped_obj.min(clipped_obj) * inv_b;
        let err = v[0] - s.ret;
        val += err * err * inv_b;

        let Some(g) = grad.as_deref_mut() else { continue };
        let saturated = (s.advantage > 0.0 && ratio > 1.0 + clip) || (s.advantage < 0.0 && ratio < 1.0 - clip);
        if !saturated && w.policy != 0.0 {
            // d loss / d log_prob
            let dlp = -w.policy * ratio * s.advantage * inv_b;
            for j in 0..params.act_dim {
                let sigma2 = (2.0 * log_std[j]).exp();
                let diff = s.action[j] - mean[j];
                g_mean[j] = dlp * diff / sigma2;
                g[lr.start + j] += dlp * (diff * diff / sigma2 - 1.0);
            }
            pnet.backward(&params.theta[pr.clone()], &pcache, &g_mean, &mut g[pr.clone()]);
        }
        if w.value != 0.0 {
            vnet.backward(&params.theta[vr.clone()], &vcache, &[w.value * 2.0 * err * inv_b], &mut g[vr.clone()]);
        }
    }
    let entropy = gaussian_entropy(log_std);
    if let Some(g) = grad {
        for j in lr {
            g[j] -= w.entropy;
        }
    }
    LossParts { policy: pol, value: val, entropy, total: w.policy * pol + w.value * val - w.entropy * entropy }
}

/// Adaptive moment estimation with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            theta[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Running PPO learner: parameters plus optimizer state.
#[derive(Clone, Debug)]
pub struct Ppo {
    pub params: PolicyParams,
    pub hyper: PpoHyper,
    adam: Adam,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct UpdateStats {
    pub loss: LossParts,
    pub minibatches: usize,
}

impl Ppo {
    pub fn new(params: PolicyParams, hyper: PpoHyper) -> Self {
        let adam = Adam::new(params.theta.len(), hyper.learning_rate);
        Self { params, hyper, adam }
    }

    /// `epochs` passes of shuffled minibatch steps over `batch`.
    pub fn update(&mut self, batch: &RolloutBatch, rng: &mut ChaCha8Rng) -> Result<UpdateStats> {
        if batch.is_empty() {
            return Ok(UpdateStats::default());
        }
        let h = &self.hyper;
        let (mut adv, ret) = gae(batch, h.gamma, h.gae_lambda);
        normalize(&mut adv);
        let samples: Vec<Sample> = (0..batch.len())
            .map(|i| Sample {
                obs: batch.observations[i].clone(),
                action: batch.actions[i].clone(),
                old_log_prob: batch.log_probs[i],
                advantage: adv[i],
                ret: ret[i],
            })
            .collect();
        let w = LossWeights { policy: 1.0, value: h.value_coeff, entropy: h.entropy_coeff };
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut stats = UpdateStats::default();
        let mut mb = Vec::with_capacity(h.batch_size);
        for _ in 0..h.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(h.batch_size) {
                mb.clear();
                mb.extend(chunk.iter().map(|&i| samples[i].clone()));
                let (loss, mut g) = ppo_loss_and_grad(&self.params, &mb, h.clip_ratio, w);
                if !loss.total.is_finite() || g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Divergence(format!("non-finite PPO loss or gradient (loss {})", loss.total)));
                }
                clip_grad_norm(&mut g, h.max_grad_norm);
                self.adam.step(&mut self.params.theta, &g);
                stats.loss = loss;
                stats.minibatches += 1;
            }
        }
        Ok(stats)
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt() + 1e-8;
    v.iter_mut().for_each(|x| *x = (*x - mean) / sd);
}

fn clip_grad_norm(g: &mut [f64], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        g.iter_mut().for_each(|x| *x *= k);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub success: bool,
    pub steps: usize,
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    /// Training episodes completed when the snapshot was taken.
    pub episodes: usize,
    pub params: PolicyParams,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub log: Vec<EpisodeRecord>,
    /// Taken at 0%, 10%, ..., 100% of the episode budget.
    pub snapshots: Vec<Snapshot>,
    pub steps_per_update: usize,
}

impl TrainOutcome {
    pub fn success_rate_last(&self, n: usize) -> f64 {
        let tail = &self.log[self.log.len().saturating_sub(n)..];
        tail.iter().filter(|r| r.success).count() as f64 / tail.len().max(1) as f64
    }
}

/// Runs one stochastic episode, appending its transitions to `batch`.
fn collect_episode<M: Episodic>(mdp: &M, params: &PolicyParams, episode: usize, rng: &mut ChaCha8Rng, batch: &mut RolloutBatch) -> Result<EpisodeRecord> {
    let mut s = mdp.reset(episode, rng);
    let mut ret = 0.0;
    let mut steps = 0;
    let mut success = false;
    for t in 0..mdp.max_steps() {
        let obs = mdp.observe(&s);
        let (mean, log_std, value) = params.forward(&obs)?;
        let action: Vec<f64> = mean
            .iter()
            .zip(&log_std)
            .map(|(m, ls)| {
                let z: f64 = StandardNormal.sample(rng);
                m + ls.exp() * z
            })
            .collect();
        let lp = gaussian_log_prob(&mean, &log_std, &action);
        let clamped: Vec<f64> = action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
        let (next, r, done) = mdp.step(&s, &clamped);
        ret += r;
        steps += 1;
        let end = done || t + 1 == mdp.max_steps();
        let bootstrap = if end && !done { params.forward(&mdp.observe(&next))?.2 } else { 0.0 };
        batch.observations.push(obs);
        batch.actions.push(action);
        batch.log_probs.push(lp);
        batch.rewards.push(r);
        batch.values.push(value);
        batch.episode_end.push(end);
        batch.terminal.push(done);
        batch.bootstrap.push(bootstrap);
        s = next;
        if done {
            success = true;
            break;
        }
    }
    Ok(EpisodeRecord { episode, ret, success, steps })
}

/// Trains a fresh policy on `mdp` with PPO. Deterministic in `seed`.
pub fn learn_policy<M: Episodic>(mdp: &M, hyper: &PpoHyper, seed: u64) -> Result<TrainOutcome> {
    hyper.validate()?;
    if hyper.init_log_std.len() != 1 && hyper.init_log_std.len() != mdp.act_dim() {
        return Err(Error::DimensionMismatch { expected: mdp.act_dim(), got: hyper.init_log_std.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = PolicyParams::init(mdp.obs_dim(), mdp.act_dim(), hyper.hidden, &hyper.init_log_std, &mut rng);
    let mut ppo = Ppo::new(params, hyper.clone());
    let mut snapshots = vec![Snapshot { episodes: 0, params: quantized(&ppo.params) }];
    let mut log = Vec::with_capacity(hyper.episodes);
    let mut batch = RolloutBatch::default();
    let mut next_snapshot = 1;
    for ep in 0..hyper.episodes {
        log.push(collect_episode(mdp, &ppo.params, ep, &mut rng, &mut batch)?);
        if batch.len() >= hyper.steps_per_update || ep + 1 == hyper.episodes {
            ppo.update(&batch, &mut rng)?;
            batch.clear();
        }
        while next_snapshot <= 10 && ep + 1 >= (next_snapshot * hyper.episodes).div_ceil(10) {
            snapshots.push(Snapshot { episodes: ep + 1, params: quantized(&ppo.params) });
            next_snapshot += 1;
        }
    }
    let params = quantized(&ppo.params);
    Ok(TrainOutcome { params, log, snapshots, steps_per_update: hyper.steps_per_update })
}

fn quantized(p: &PolicyParams) -> PolicyParams {
    let mut q = p.clone();
    q.quantize_f32();
    q
}

/// Several tasks presented round-robin, each observation suffixed with the
/// task's goal encoding.
pub struct GoalConditioned<'a, M> {
    pub mdps: &'a [M],
    pub encodings: &'a [Vec<f64>],
}

impl<M: Episodic> Episodic for GoalConditioned<'_, M> {
    type State = (usize, M::State);

    fn obs_dim(&self) -> usize {
        self.mdps[0].obs_dim() + self.encodings[0].len()
    }

    fn act_dim(&self) -> usize {
        self.mdps[0].act_dim()
    }

    fn max_steps(&self) -> usize {
        self.mdps.iter().map(Episodic::max_steps).max().unwrap_or(0)
    }

    fn reset(&self, episode: usize, rng: &mut ChaCha8Rng) -> Self::State {
        let k = episode % self.mdps.len();
        (k, self.mdps[k].reset(episode / self.mdps.len(), rng))
    }

    fn observe(&self, s: &Self::State) -> Vec<f64> {
        let mut o = self.mdps[s.0].observe(&s.1);
        o.extend_from_slice(&self.encodings[s.0]);
        o
    }

    fn step(&self, s: &Self::State, action: &[f64]) -> (Self::State, f64, bool) {
        let (next, r, done) = self.mdps[s.0].step(&s.1, action);
        ((s.0, next), r, done)
    }
}

/// One policy for all `mdps`, conditioned on each task's goal encoding.
pub fn learn_shared_policy<M: Episodic>(mdps: &[M], encodings: &[Vec<f64>], hyper: &PpoHyper, seed: u64) -> Result<TrainOutcome> {
    if mdps.is_empty() || mdps.len() != encodings.len() {
        return Err(Error::InvalidConfig("shared policy needs one encoding per task".into()));
    }
    let (d, e) = (mdps[0].obs_dim(), encodings[0].len());
    if let Some(m) = mdps.iter().find(|m| m.obs_dim() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: m.obs_dim() });
    }
    if let Some(x) = encodings.iter().find(|x| x.len() != e) {
        return Err(Error::DimensionMismatch { expected: e, got: x.len() });
    }
    learn_policy(&GoalConditioned { mdps, encodings }, hyper, seed)
}

/// Success rate of the deterministic (mean-action) policy over `episodes`.
pub fn evaluate_policy<M: Episodic>(mdp: &M, params: &PolicyParams, episodes: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wins = 0;
    for ep in 0..episodes {
        let mut s = mdp.reset(ep, &mut rng);
        for _ in 0..mdp.max_steps() {
            let a: Vec<f64> = params.mean_action(&mdp.observe(&s))?.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
            let (next, _, done) = mdp.step(&s, &a);
            s = next;
            if done {
                wins += 1;
                break;
            }
        }
    }
    Ok(wins as f64 / episodes.max(1) as f64)
}

pub fn write_training_log<W: Write>(mut out: W, steps_per_update: usize, log: &[EpisodeRecord]) -> Result<()> {
    writeln!(out, "# steps_per_update={steps_per_update}")?;
    writeln!(out, "episode,return,success,steps")?;
    for r in log {
        writeln!(out, "{},{},{},{}", r.episode, r.ret, r.success as u8, r.steps)?;
    }
    Ok(())
}

/// Random state for tests and benchmarks.
pub fn random_samples(params: &PolicyParams, n: usize, rng: &mut ChaCha8Rng) -> Vec<Sample> {
    (0..n)
        .map(|_| {
            let obs: Vec<f64> = (0..params.obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let action: Vec<f64> = (0..params.act_dim).map(|_| rng.random_range(-1.5..1.5)).collect();
            let (mean, log_std, _) = params.forward(&obs).expect("dims match");
            let lp = gaussian_log_prob(&mean, &log_std, &action);
            Sample {
                obs,
                action,
                old_log_prob: lp + rng.random_range(-0.4..0.4),
                advantage: rng.random_range(-2.0..2.0),
                ret: rng.random_range(-2.0..2.0),
            }
        })
        .collect()
}
