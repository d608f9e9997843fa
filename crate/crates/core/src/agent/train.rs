use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{select_action, DqnLearner, QNetwork, Transition};
use crate::catalog::{ActionMask, QuestionCatalog};
use crate::classifier::ClassifierModel;
use crate::cohort::{Label, Transcript};
use crate::env::{EnvConfig, Environment, Responder, ScriptedResponder, TraceEvent};
use crate::error::{usage, Result};
use crate::rng::rng_from_seed;
use crate::simulator::SimulatorModel;

/// A recorded conversation to replay during pre-training.
#[derive(Clone, Copy, Debug)]
pub struct PretrainEpisode<'a> {
    pub transcript: &'a Transcript,
    pub label: Label,
    /// Fingerprint of the speaker's simulator.
    pub fingerprint: &'a [f64],
}

/// Replays each transcript's own question order, with its recorded
/// responses, through the environment, storing one transition per agent
/// turn (at most `max_turns`). Then runs `pretrain_passes` passes of
/// `ceil(transitions / batch_size)` updates each, syncing the target
/// network after every pass. Returns the number of transitions stored.
pub fn pretrain_from_corpus(
    learner: &mut DqnLearner,
    episodes: &[PretrainEpisode<'_>],
    catalog: &QuestionCatalog,
    classifier: &ClassifierModel,
    env_config: &EnvConfig,
) -> Result<usize> {
    if learner.config.clip_targets {
        learner.set_return_ceiling(env_config.return_ceiling());
    }
    let mut stored = 0usize;
    for ep in episodes {
        let turns = &ep.transcript.turns;
        if turns.first().map(|t| t.question) != Some(catalog.greeting()) {
            return Err(usage(alloc::format!(
                "transcript {}/{} does not open with the greeting",
                ep.transcript.user_id,
                ep.transcript.conversation
            )));
        }
        let responder = ScriptedResponder::new(turns);
        let mut env = Environment::reset(
            catalog,
            classifier,
            env_config,
            responder,
            ep.fingerprint.to_vec(),
            Some(ep.label),
        )?;
        for turn in &turns[1..] {
            if env.is_done() {
                break;
            }
            let state = env.observation();
            let out = env.step_unmasked(turn.question)?;
            learner.remember(Transition {
                state,
                action: turn.question,
                reward: out.reward,
                next_state: env.observation(),
                done: out.done,
                next_mask: env.action_mask()?,
            });
            stored += 1;
        }
    }
    if stored == 0 {
        return Ok(0);
    }
    let per_pass = stored.div_ceil(learner.config.batch_size);
    for _ in 0..learner.config.pretrain_passes {
        for _ in 0..per_pass {
            learner.update()?;
        }
        learner.sync_target();
    }
    Ok(stored)
}

/// A training user: simulator plus ground-truth label.
#[derive(Clone, Copy, Debug)]
pub struct TrainingUser<'a> {
    pub simulator: &'a SimulatorModel,
    pub label: Label,
}

/// One row of the learning curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub user_id: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub epsilon: f64,
    /// Mean minibatch loss over the episode's updates.
    pub loss: f64,
}

/// The training loop: for each user in order, `episodes_per_user` episodes
/// against that user's simulator; every turn picks an epsilon-greedy masked
/// action, stores the transition and takes one minibatch step. The target
/// network is synced every `target_sync_episodes` episodes.
pub fn train(
    learner: &mut DqnLearner,
    users: &[TrainingUser<'_>],
    catalog: &QuestionCatalog,
    classifier: &ClassifierModel,
    env_config: &EnvConfig,
) -> Result<Vec<CurvePoint>> {
    if learner.config.clip_targets {
        learner.set_return_ceiling(env_config.return_ceiling());
    }
    let m = learner.config.episodes_per_user;
    let total = users.len() * m;
    let sync_every = learner.config.target_sync_episodes;
    let mut curve = Vec::with_capacity(total);
    let mut episode = 0usize;
    for user in users {
        let fingerprint = user.simulator.fingerprint();
        for _ in 0..m {
            let epsilon = learner.config.epsilon_at(episode, total);
            let mut env = Environment::reset(
                catalog,
                classifier,
                env_config,
                user.simulator,
                fingerprint.clone(),
                Some(user.label),
            )?;
            let mut ret = 0.0;
            let mut loss_sum = 0.0;
            let mut updates = 0usize;
            while !env.is_done() {
                let state = env.observation();
                let mask = env.action_mask()?;
                let action = learner.act(&state, &mask, epsilon)?;
                let out = env.step(action)?;
                ret += out.reward;
                learner.remember(Transition {
                    state,
                    action,
                    reward: out.reward,
                    next_state: env.observation(),
                    done: out.done,
                    next_mask: env.action_mask()?,
                });
                if let Some(l) = learner.update()? {
                    loss_sum += l;
                    updates += 1;
                }
            }
            curve.push(CurvePoint {
                episode,
                user_id: user.simulator.user_id,
                episode_return: ret,
                epsilon,
                loss: if updates > 0 { loss_sum / updates as f64 } else { 0.0 },
            });
            episode += 1;
            if episode % sync_every == 0 {
                learner.sync_target();
            }
        }
    }
    Ok(curve)
}

/// Runs one greedy episode and returns its trace.
pub fn greedy_episode<R: Responder>(qnet: &QNetwork, env: &mut Environment<'_, R>) -> Result<Vec<TraceEvent>> {
    // Epsilon is zero, so the generator is never consulted for a choice.
    let mut rng = rng_from_seed(0);
    let mut trace = Vec::new();
    while !env.is_done() {
        let state = env.observation();
        let mask = env.action_mask()?;
        let action = select_action(qnet, &state, &mask, 0.0, &mut rng)?;
        let out = env.step(action)?;
        trace.push(env.trace_event(out));
    }
    Ok(trace)
}

/// Greedy test-time episode whose budget is the environment's `max_turns`.
/// If the agent has not said goodbye before the last allowed turn, that turn
/// asks the highest-valued goodbye question. `on_step` sees each event as it
/// happens.
pub fn budgeted_greedy_episode<R: Responder>(
    qnet: &QNetwork,
    env: &mut Environment<'_, R>,
    catalog: &QuestionCatalog,
    mut on_step: impl FnMut(&TraceEvent),
) -> Result<Vec<TraceEvent>> {
    let goodbye: Vec<bool> = (0..catalog.len()).map(|j| catalog.is_goodbye(j)).collect();
    if !goodbye.contains(&true) {
        return Err(usage("the catalog has no goodbye question"));
    }
    let mut rng = rng_from_seed(0);
    let mut trace = Vec::new();
    while !env.is_done() {
        let state = env.observation();
        let mask = if env.turn() + 1 >= env.config().max_turns {
            ActionMask::from_bools(goodbye.clone())
        } else {
            env.action_mask()?
        };
        let action = select_action(qnet, &state, &mask, 0.0, &mut rng)?;
        let out = env.step(action)?;
        let ev = env.trace_event(out);
        on_step(&ev);
        trace.push(ev);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AgentConfig;
    use crate::cohort::Turn;
    use crate::env::state_dim;
    use alloc::vec;

    fn setup() -> (QuestionCatalog, ClassifierModel) {
        (QuestionCatalog::synthetic(20).unwrap(), ClassifierModel::logistic(vec![1.0, -1.0], 0.0))
    }

    fn transcript(n_questions: usize) -> Transcript {
        let mut turns = vec![Turn { question: 0, response: vec![0.1, 0.2] }];
        for k in 0..n_questions {
            turns.push(Turn {
                question: 1 + k % 16,
                response: vec![k as f64 * 0.01, 0.0],
            });
        }
        Transcript { user_id: 0, conversation: 0, turns }
    }

    fn learner() -> DqnLearner {
        let cfg = AgentConfig {
            hidden: vec![8],
            ..AgentConfig::default()
        };
        DqnLearner::new(cfg, state_dim(2, 3), 20).unwrap()
    }

    #[test]
    fn one_transition_per_turn() {
        let (cat, clf) = setup();
        let fp = [0.0; 3];
        let t = transcript(35);
        let mut l = learner();
        let n = pretrain_from_corpus(
            &mut l,
            &[PretrainEpisode { transcript: &t, label: Label::Mci, fingerprint: &fp }],
            &cat,
            &clf,
            &EnvConfig::default(),
        )
        .unwrap();
        assert_eq!(n, 35);
        assert_eq!(l.buffer().len(), 35);
        assert!(l.buffer().iter().last().unwrap().done);
        // Longer transcripts are cut at the turn cap.
        let long = transcript(50);
        let mut l2 = learner();
        let ep = PretrainEpisode { transcript: &long, label: Label::Mci, fingerprint: &fp };
        assert_eq!(pretrain_from_corpus(&mut l2, &[ep], &cat, &clf, &EnvConfig::default()).unwrap(), 35);
    }

    #[test]
    fn empty_corpus_leaves_network() {
        let (cat, clf) = setup();
        let mut l = learner();
        let before = l.online().clone();
        assert_eq!(pretrain_from_corpus(&mut l, &[], &cat, &clf, &EnvConfig::default()).unwrap(), 0);
        assert_eq!(l.online(), &before);
    }

    struct Constant;

    impl Responder for Constant {
        fn respond(&mut self, _: usize) -> Result<Vec<f64>> {
            Ok(vec![0.3, 0.1])
        }
    }

    /// Q-values fall with the id, so goodbye (the last id) is never preferred.
    fn reluctant_to_leave(inputs: usize, actions: usize) -> QNetwork {
        use crate::nnet::{Activation, DenseNet, Layer};
        let b = (0..actions).map(|j| (actions - j) as f64).collect();
        let layer = Layer::new(inputs, actions, vec![0.0; inputs * actions], b, Activation::Relu).unwrap();
        QNetwork::from_net(DenseNet::from_layers(vec![layer]).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn budget_ends_with_forced_goodbye() {
        let (cat, clf) = setup();
        let qn = reluctant_to_leave(state_dim(2, 3), cat.len());
        for budget in [1, 3, 7] {
            let cfg = EnvConfig { max_turns: budget, ..EnvConfig::default() };
            let mut env = Environment::reset(&cat, &clf, &cfg, Constant, vec![0.0; 3], None).unwrap();
            let mut seen = 0;
            let trace = budgeted_greedy_episode(&qn, &mut env, &cat, |_| seen += 1).unwrap();
            assert_eq!(trace.len(), budget);
            assert_eq!(seen, budget);
            let actions: Vec<usize> = env.history()[1..].to_vec();
            assert!(cat.is_goodbye(*actions.last().unwrap()));
            assert!(actions[..budget - 1].iter().all(|&a| !cat.is_goodbye(a)));
        }
    }
}
