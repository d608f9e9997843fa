//! DQN dialogue policy: masked epsilon-greedy acting, experience replay,
//! a periodically synced target network, corpus pre-training and the
//! per-user training loop.

mod replay;
mod train;

use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::catalog::ActionMask;
use crate::env::{state_dim, state_input_scale};
use crate::error::{check_len, usage, Error, Result};
use crate::nnet::{batch_loss_and_gradients, Activation, DenseNet, Optimizer, OptimizerKind, Sample};
use crate::rng::{rng_from_seed, Rng};

pub use replay::ReplayBuffer;
pub use train::{budgeted_greedy_episode, greedy_episode, pretrain_from_corpus, train, CurvePoint, PretrainEpisode, TrainingUser};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Episodes over which epsilon anneals linearly; `None` means half of
    /// all training episodes.
    pub epsilon_decay_episodes: Option<usize>,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub target_sync_episodes: usize,
    pub pretrain_passes: usize,
    /// Episodes per training user (M).
    pub episodes_per_user: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    /// Weight decay on the online network; biases are not regularised.
    pub l2_lambda: f64,
    pub optimizer: OptimizerKind,
    /// Q-values are `value_scale` times the network output, so the network
    /// regresses onto O(1) targets.
    pub value_scale: f64,
    /// Initial output-layer bias in network units; a positive start keeps
    /// the ReLU output units from beginning inactive.
    pub output_bias_init: f64,
    /// Constant added to every learned value. Training regresses onto
    /// `Q + value_offset`, which leaves the greedy policy unchanged but lets
    /// the nonnegative network represent returns down to `-value_offset`.
    pub value_offset: f64,
    /// Cap the bootstrapped next-state value at the largest return the
    /// reward table allows (see [`EnvConfig::return_ceiling`](crate::env::EnvConfig::return_ceiling)).
    pub clip_targets: bool,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_episodes: None,
            batch_size: 32,
            buffer_capacity: 50_000,
            target_sync_episodes: 50,
            pretrain_passes: 1,
            episodes_per_user: 20,
            hidden: alloc::vec![128, 128],
            learning_rate: 1e-3,
            l2_lambda: 0.0,
            optimizer: OptimizerKind::Adam,
            value_scale: 100.0,
            output_bias_init: 10.0,
            value_offset: 1000.0,
            clip_targets: true,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(usage("gamma must lie in [0, 1]"));
        }
        if !(0.0 <= self.epsilon_end && self.epsilon_end <= self.epsilon_start && self.epsilon_start <= 1.0) {
            return Err(usage("epsilon must satisfy 0 <= end <= start <= 1"));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.target_sync_episodes == 0 {
            return Err(usage("batch_size, buffer_capacity and target_sync_episodes must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.value_scale > 0.0) {
            return Err(usage("learning_rate and value_scale must be positive"));
        }
        if !(self.l2_lambda >= 0.0) {
            return Err(usage("l2_lambda must be nonnegative"));
        }
        if !(self.value_offset >= 0.0) {
            return Err(usage("value_offset must be nonnegative"));
        }
        Ok(())
    }

    /// Exploration rate for a zero-based episode index.
    pub fn epsilon_at(&self, episode: usize, total_episodes: usize) -> f64 {
        let decay = self.epsilon_decay_episodes.unwrap_or(total_episodes / 2);
        if decay == 0 || episode >= decay {
            return self.epsilon_end;
        }
        let frac = episode as f64 / decay as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// State-action value network with a ReLU output layer, so every Q-value
/// is nonnegative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    net: DenseNet,
    value_scale: f64,
    /// Fixed per-coordinate factors applied to the state before the first
    /// layer; empty means none.
    #[serde(default)]
    input_scale: Vec<f64>,
}

impl QNetwork {
    pub fn new(
        state_dim: usize,
        hidden: &[usize],
        actions: usize,
        value_scale: f64,
        output_bias_init: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(state_dim);
        dims.extend_from_slice(hidden);
        dims.push(actions);
        let acts: Vec<Activation> = (0..dims.len() - 1).map(|_| Activation::Relu).collect();
        let mut net = DenseNet::new(&dims, &acts, rng)?;
        let last = net.layers().len() - 1;
        net.layer_mut(last).1.iter_mut().for_each(|b| *b = output_bias_init);
        Self::from_net(net, value_scale)
    }

    pub fn from_net(net: DenseNet, value_scale: f64) -> Result<Self> {
        if net.activations().last() != Some(&Activation::Relu) {
            return Err(usage("a Q-network needs a ReLU output layer"));
        }
        if !(value_scale > 0.0) {
            return Err(usage("value_scale must be positive"));
        }
        Ok(Self {
            net,
            value_scale,
            input_scale: Vec::new(),
        })
    }

    /// Sets the fixed input rescaling; `scale` must have one entry per state coordinate.
    pub fn with_input_scale(mut self, scale: Vec<f64>) -> Result<Self> {
        check_len("input scale", self.state_dim(), scale.len())?;
        self.input_scale = scale;
        Ok(self)
    }

    pub fn input_scale(&self) -> &[f64] {
        &self.input_scale
    }

    /// The state as fed to the network.
    pub fn network_input(&self, state: &[f64]) -> Result<Vec<f64>> {
        check_len("state", self.state_dim(), state.len())?;
        if self.input_scale.is_empty() {
            return Ok(state.to_vec());
        }
        Ok(state.iter().zip(&self.input_scale).map(|(x, s)| x * s).collect())
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn value_scale(&self) -> f64 {
        self.value_scale
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn actions(&self) -> usize {
        self.net.output_dim()
    }

    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        let mut q = self.net.predict(&self.network_input(state)?)?;
        q.iter_mut().for_each(|v| *v *= self.value_scale);
        Ok(q)
    }
}

/// `mask ⊙ Q(state)`: masked entries are exactly zero.
pub fn masked_q(qnet: &QNetwork, state: &[f64], mask: &ActionMask) -> Result<Vec<f64>> {
    check_len("action mask", qnet.actions(), mask.len())?;
    let mut q = qnet.q_values(state)?;
    for (v, &ok) in q.iter_mut().zip(mask.as_bools()) {
        if !ok {
            *v = 0.0;
        }
    }
    Ok(q)
}

/// Highest value among allowed entries, lowest index on ties.
fn argmax_allowed(values: &[f64], mask: &ActionMask) -> Option<usize> {
    let mut best: Option<usize> = None;
    for j in mask.allowed() {
        if best.map_or(true, |b| values[j] > values[b]) {
            best = Some(j);
        }
    }
    best
}

/// Epsilon-greedy choice restricted to unmasked actions.
pub fn select_action(qnet: &QNetwork, state: &[f64], mask: &ActionMask, epsilon: f64, rng: &mut Rng) -> Result<usize> {
    check_len("action mask", qnet.actions(), mask.len())?;
    let allowed = mask.count_allowed();
    if allowed == 0 {
        return Err(Error::AllMasked);
    }
    if rng.random::<f64>() < epsilon {
        let k = rng.random_range(0..allowed);
        return Ok(mask.allowed().nth(k).unwrap());
    }
    let q = masked_q(qnet, state, mask)?;
    Ok(argmax_allowed(&q, mask).unwrap())
}

/// One step of experience. `next_mask` is the action mask in `next_state`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    pub next_mask: ActionMask,
}

/// `r` for terminal transitions, otherwise `r + gamma * max_a' Q_target(s', a')`
/// over the actions allowed in `s'`.
pub fn td_target(t: &Transition, target: &QNetwork, gamma: f64) -> Result<f64> {
    if t.done || gamma == 0.0 {
        return Ok(t.reward);
    }
    let q = target.q_values(&t.next_state)?;
    check_len("next-state mask", q.len(), t.next_mask.len())?;
    let best = argmax_allowed(&q, &t.next_mask).map_or(0.0, |j| q[j]);
    Ok(t.reward + gamma * best)
}

/// Online and target networks, optimizer state and replay memory.
#[derive(Clone, Debug)]
pub struct DqnLearner {
    online: QNetwork,
    target: QNetwork,
    optimizer: Optimizer,
    buffer: ReplayBuffer,
    config: AgentConfig,
    rng: Rng,
    ceiling: Option<f64>,
}

impl DqnLearner {
    pub fn new(config: AgentConfig, state_dim: usize, actions: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(config.seed);
        let online = QNetwork::new(
            state_dim,
            &config.hidden,
            actions,
            config.value_scale,
            config.output_bias_init,
            &mut rng,
        )?;
        Ok(Self {
            target: online.clone(),
            optimizer: Optimizer::new(config.optimizer, config.learning_rate),
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            online,
            config,
            rng,
            ceiling: None,
        })
    }

    /// Applies a fixed input rescaling to both networks.
    pub fn with_input_scale(mut self, scale: Vec<f64>) -> Result<Self> {
        self.online = self.online.with_input_scale(scale)?;
        self.target = self.online.clone();
        Ok(self)
    }

    /// A learner for the dialogue task: `c`-dimensional responses,
    /// `h`-dimensional fingerprints, one action per catalog question and
    /// the turn counter rescaled by `max_turns`.
    pub fn for_dialogue(config: AgentConfig, actions: usize, c: usize, h: usize, max_turns: usize) -> Result<Self> {
        Self::new(config, state_dim(c, h), actions)?.with_input_scale(state_input_scale(c, h, max_turns))
    }

    pub fn online(&self) -> &QNetwork {
        &self.online
    }

    pub fn target(&self) -> &QNetwork {
        &self.target
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    /// Upper bound on the next-state value used in bootstrapped targets.
    pub fn set_return_ceiling(&mut self, ceiling: Option<f64>) {
        self.ceiling = ceiling;
    }

    pub fn return_ceiling(&self) -> Option<f64> {
        self.ceiling
    }

    pub fn remember(&mut self, t: Transition) {
        self.buffer.push(t);
    }

    pub fn act(&mut self, state: &[f64], mask: &ActionMask, epsilon: f64) -> Result<usize> {
        select_action(&self.online, state, mask, epsilon, &mut self.rng)
    }

    /// Copies the online weights into the target network.
    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }

    /// One gradient step on a replay minibatch. Returns the pre-update loss
    /// in squared Q units, or `None` while the buffer is empty.
    pub fn update(&mut self) -> Result<Option<f64>> {
        let batch = self.buffer.sample(self.config.batch_size, &mut self.rng);
        if batch.is_empty() {
            return Ok(None);
        }
        let scale = self.online.value_scale;
        let mut targets = Vec::with_capacity(batch.len());
        let (gamma, offset) = (self.config.gamma, self.config.value_offset);
        for t in &batch {
            // The target network stores Q + offset; return to Q units, then
            // cap the bootstrapped next-state value (not the whole target), so
            // asking again can never look as good as a correct goodbye.
            let mut y = td_target(t, &self.target, gamma)?;
            if !t.done {
                y -= gamma * offset;
                if let Some(c) = self.ceiling {
                    y = y.min(t.reward + gamma * c);
                }
            }
            targets.push((y + offset) / scale);
        }
        let inputs: Vec<Vec<f64>> = batch
            .iter()
            .map(|t| self.online.network_input(&t.state))
            .collect::<Result<_>>()?;
        let samples: Vec<Sample<'_>> = batch
            .iter()
            .zip(&inputs)
            .zip(&targets)
            .map(|((t, x), &y)| Sample::action(x, t.action, y))
            .collect();
        let (loss, grads) = batch_loss_and_gradients(&self.online.net, &samples, self.config.l2_lambda)?;
        if !loss.is_finite() {
            return Err(usage("Q-learning diverged to a non-finite loss"));
        }
        self.optimizer.apply(&mut self.online.net, &grads);
        Ok(Some(loss * scale * scale))
    }

    pub fn checkpoint(&self) -> AgentCheckpoint {
        AgentCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            online: self.online.clone(),
            target: self.target.clone(),
        }
    }

    /// Restores networks and config; replay memory and optimizer state start empty.
    pub fn from_checkpoint(ck: AgentCheckpoint) -> Result<Self> {
        ck.validate()?;
        let mut learner = Self::new(ck.config, ck.online.state_dim(), ck.online.actions())?;
        learner.online = ck.online;
        learner.target = ck.target;
        Ok(learner)
    }
}

const CHECKPOINT_FORMAT: &str = "dqn-agent";
const CHECKPOINT_VERSION: u32 = 1;

/// Saved agent: both networks plus the configuration that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub format: alloc::string::String,
    pub version: u32,
    pub config: AgentConfig,
    pub online: QNetwork,
    pub target: QNetwork,
}

impl AgentCheckpoint {
    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(usage(alloc::format!(
                "unsupported agent checkpoint {} v{}",
                self.format,
                self.version
            )));
        }
        if self.online.net.layer_dims() != self.target.net.layer_dims() {
            return Err(usage("online and target networks differ in shape"));
        }
        Ok(())
    }
}
