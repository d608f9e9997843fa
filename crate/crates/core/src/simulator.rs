//! Per-user response simulators: an MLP from a one-hot question to the
//! response embedding that user would give.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cohort::Transcript;
use crate::error::{check_len, usage, Result};
use crate::math::mse;
use crate::nnet::{Activation, DenseNet, Plateau, Sample, TrainConfig, Trainer};
use crate::rng::rng_from_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatorConfig {
    /// Width of both hidden layers.
    pub hidden: usize,
    pub train: TrainConfig,
    pub plateau: Plateau,
    /// Which input's first-layer weight column serves as the user fingerprint.
    pub fingerprint_column: usize,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            train: TrainConfig {
                learning_rate: 5e-3,
                l2_lambda: 0.0,
                batch_size: 32,
                max_epochs: 3000,
                seed: 0,
                ..TrainConfig::default()
            },
            plateau: Plateau::default(),
            fingerprint_column: 0,
        }
    }
}

/// A trained simulator `f(q; W_i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatorModel {
    pub user_id: usize,
    net: DenseNet,
    fingerprint_column: usize,
    #[serde(default)]
    pub train_loss_history: Vec<f64>,
}

impl SimulatorModel {
    /// An untrained simulator with seeded initial weights.
    pub fn initialise(user_id: usize, questions: usize, embedding_dim: usize, config: &SimulatorConfig) -> Result<Self> {
        if config.fingerprint_column >= questions {
            return Err(usage("fingerprint column must index a question"));
        }
        let h = config.hidden;
        let net = DenseNet::new(
            &[questions, h, h, embedding_dim],
            &[Activation::Relu, Activation::Relu, Activation::Identity],
            &mut rng_from_seed(config.train.seed),
        )?;
        Ok(Self {
            user_id,
            net,
            fingerprint_column: config.fingerprint_column,
            train_loss_history: Vec::new(),
        })
    }

    /// Wraps an existing network, checking it has the simulator shape.
    pub fn from_net(user_id: usize, net: DenseNet, fingerprint_column: usize) -> Result<Self> {
        let dims = net.layer_dims();
        if dims.len() != 4 || dims[1] != dims[2] {
            return Err(usage("a simulator network has two equal hidden layers"));
        }
        if fingerprint_column >= dims[0] {
            return Err(usage("fingerprint column must index a question"));
        }
        Ok(Self {
            user_id,
            net,
            fingerprint_column,
            train_loss_history: Vec::new(),
        })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn questions(&self) -> usize {
        self.net.input_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn hidden(&self) -> usize {
        self.net.layers()[0].outputs()
    }

    /// Response embedding for `question`; a pure function of the weights.
    pub fn simulate_response(&self, question: usize) -> Result<Vec<f64>> {
        let d = self.questions();
        if question >= d {
            return Err(usage(alloc::format!("question id {question} out of range 0..{d}")));
        }
        let mut x = vec![0.0; d];
        x[question] = 1.0;
        self.net.predict(&x)
    }

    /// The first-layer weights fanning out of the fingerprint input, length `h`.
    pub fn fingerprint(&self) -> Vec<f64> {
        self.net.layers()[0].column(self.fingerprint_column)
    }

    /// Mean over turns of the mean squared coordinate error.
    pub fn turn_mse<'a, I>(&self, transcripts: I) -> Result<Option<f64>>
    where
        I: IntoIterator<Item = &'a Transcript>,
    {
        let mut total = 0.0;
        let mut n = 0usize;
        for t in transcripts {
            for turn in &t.turns {
                let pred = self.simulate_response(turn.question)?;
                check_len("response embedding", pred.len(), turn.response.len())?;
                total += mse(&pred, &turn.response);
                n += 1;
            }
        }
        Ok((n > 0).then(|| total / n as f64))
    }
}

/// Per-question mean response and turn count over a set of transcripts.
fn pooled_targets<'a>(
    transcripts: impl IntoIterator<Item = &'a Transcript>,
    questions: usize,
) -> Result<BTreeMap<usize, (Vec<f64>, usize)>> {
    let mut acc: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for t in transcripts {
        for turn in &t.turns {
            if turn.question >= questions {
                return Err(usage(alloc::format!("question id {} out of range", turn.question)));
            }
            let entry = acc
                .entry(turn.question)
                .or_insert_with(|| (vec![0.0; turn.response.len()], 0));
            check_len("response embedding", entry.0.len(), turn.response.len())?;
            for (s, v) in entry.0.iter_mut().zip(&turn.response) {
                *s += v;
            }
            entry.1 += 1;
        }
    }
    for (sum, n) in acc.values_mut() {
        let inv = *n as f64;
        sum.iter_mut().for_each(|s| *s /= inv);
    }
    Ok(acc)
}

/// Fits a simulator on every turn of the given transcripts.
///
/// The pooled squared error over turns equals, up to a constant, the
/// count-weighted squared error against each question's mean response, so
/// training runs on one weighted sample per distinct question.
pub fn fit_user_simulator(
    user_id: usize,
    transcripts: &[&Transcript],
    questions: usize,
    config: &SimulatorConfig,
) -> Result<SimulatorModel> {
    let targets = pooled_targets(transcripts.iter().copied(), questions)?;
    let Some(embedding_dim) = targets.values().next().map(|(v, _)| v.len()) else {
        return Err(usage(alloc::format!("user {user_id} has no turns to train on")));
    };
    let mut model = SimulatorModel::initialise(user_id, questions, embedding_dim, config)?;
    let inputs: Vec<(Vec<f64>, usize)> = targets
        .keys()
        .map(|&q| {
            let mut x = vec![0.0; questions];
            x[q] = 1.0;
            (x, q)
        })
        .collect();
    let samples: Vec<Sample<'_>> = inputs
        .iter()
        .map(|(x, q)| {
            let (mean, n) = &targets[q];
            Sample {
                weight: *n as f64,
                ..Sample::dense(x, mean)
            }
        })
        .collect();
    let mut trainer = Trainer::new(model.net.clone(), config.train.clone())?;
    model.train_loss_history = trainer.fit(&samples, Some(config.plateau))?;
    model.net = trainer.into_net();
    Ok(model)
}

/// Held-out fit quality for one user.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LooResult {
    pub user_id: usize,
    /// Mean squared coordinate error averaged over held-out turns.
    pub mse: f64,
    pub held_out_turns: usize,
}

/// Trains on all conversations but the last (by conversation index) and
/// scores the last one. Returns `None`, with a log notice, for users with
/// fewer than two conversations.
pub fn leave_one_out_mse(
    user_id: usize,
    transcripts: &[&Transcript],
    questions: usize,
    config: &SimulatorConfig,
) -> Result<Option<LooResult>> {
    if transcripts.len() < 2 {
        log::info!("user {user_id}: fewer than two conversations, skipping leave-one-out");
        return Ok(None);
    }
    let mut sorted: Vec<&Transcript> = transcripts.to_vec();
    sorted.sort_by_key(|t| t.conversation);
    let (held, train) = sorted.split_last().unwrap();
    let model = fit_user_simulator(user_id, train, questions, config)?;
    let mse = model
        .turn_mse([*held])?
        .ok_or_else(|| usage("held-out conversation has no turns"))?;
    Ok(Some(LooResult {
        user_id,
        mse,
        held_out_turns: held.turns.len(),
    }))
}
