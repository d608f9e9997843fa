//! The split-by-split experiment: simulators, classifier, agent, rollouts
//! and baselines, kept in memory. [`crate::pipeline`] handles the files.

use std::cell::RefCell;
use std::collections::BTreeMap;

use anyhow::{bail, ensure, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use screenbot_core::agent::{
    self, AgentCheckpoint, AgentConfig, CurvePoint, DqnLearner, PretrainEpisode, QNetwork, TrainingUser,
};
use screenbot_core::catalog::QuestionCatalog;
use screenbot_core::classifier::{self, auc, binary_metrics, ClassifierModel, Split, SplitPlan, DECISION_THRESHOLD};
use screenbot_core::cohort::{generate_cohort, generate_transcripts, Cohort, Label, Transcript};
use screenbot_core::env::{EnvConfig, Environment, TraceEvent};
use screenbot_core::rng::{derive_seed, stream};
use screenbot_core::simulator::{fit_user_simulator, leave_one_out_mse, LooResult, SimulatorConfig, SimulatorModel};

use crate::config::ExperimentConfig;

/// Catalog, transcripts and per-user labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub catalog: QuestionCatalog,
    pub transcripts: Vec<Transcript>,
    pub labels: Vec<Label>,
}

impl Dataset {
    pub fn n_users(&self) -> usize {
        self.labels.len()
    }

    /// Transcripts grouped by user, each group sorted by conversation index.
    pub fn by_user(&self) -> Vec<Vec<&Transcript>> {
        let mut groups: Vec<Vec<&Transcript>> = vec![Vec::new(); self.n_users()];
        for t in &self.transcripts {
            groups[t.user_id].push(t);
        }
        for g in &mut groups {
            g.sort_by_key(|t| t.conversation);
        }
        groups
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.transcripts {
            ensure!(
                t.user_id < self.n_users(),
                "transcript {}/{} names an unknown user",
                t.user_id,
                t.conversation
            );
            for turn in &t.turns {
                self.catalog
                    .get(turn.question)
                    .with_context(|| format!("transcript {}/{}", t.user_id, t.conversation))?;
            }
        }
        for (u, g) in self.by_user().iter().enumerate() {
            ensure!(!g.is_empty(), "user {u} has no transcripts");
        }
        Ok(())
    }
}

pub fn generate_dataset(cfg: &ExperimentConfig) -> Result<(Dataset, Cohort)> {
    let catalog = cfg.catalog.load()?;
    cfg.validate(&catalog)?;
    let cohort = generate_cohort(&cfg.cohort, &catalog, cfg.seed)?;
    let transcripts = generate_transcripts(&cohort, &cfg.cohort, &catalog, cfg.seed)?;
    let labels = cohort.labels();
    Ok((
        Dataset {
            catalog,
            transcripts,
            labels,
        },
        cohort,
    ))
}

fn simulator_config(cfg: &ExperimentConfig, user: usize) -> SimulatorConfig {
    let mut sc = cfg.simulator.clone();
    sc.train.seed = derive_seed(cfg.seed, stream::SIMULATOR, user as u64);
    sc
}

/// One simulator per user, trained on every transcript of that user. The
/// simulators do not depend on the split, so all splits share them.
pub fn fit_simulators(ds: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<SimulatorModel>> {
    let groups = ds.by_user();
    let d = ds.catalog.len();
    groups
        .par_iter()
        .enumerate()
        .map(|(u, g)| fit_user_simulator(u, g, d, &simulator_config(cfg, u)).with_context(|| format!("simulator for user {u}")))
        .collect()
}

/// Leave-last-conversation-out simulator errors for users with at least two
/// conversations.
pub fn simulator_loo(ds: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<LooResult>> {
    let groups = ds.by_user();
    let d = ds.catalog.len();
    let results: Vec<Option<LooResult>> = groups
        .par_iter()
        .enumerate()
        .map(|(u, g)| leave_one_out_mse(u, g, d, &simulator_config(cfg, u)).with_context(|| format!("LOO for user {u}")))
        .collect::<Result<_>>()?;
    Ok(results.into_iter().flatten().collect())
}

fn mean_of<'a>(vectors: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Option<Vec<f64>> {
    let mut sum = vec![0.0; dim];
    let mut n = 0usize;
    for v in vectors {
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
        n += 1;
    }
    (n > 0).then(|| sum.into_iter().map(|s| s / n as f64).collect())
}

/// Each user's full-corpus feature: the mean response over every turn of
/// every transcript.
pub fn user_features(ds: &Dataset) -> Result<Vec<Vec<f64>>> {
    let dim = embedding_dim(ds)?;
    ds.by_user()
        .iter()
        .enumerate()
        .map(|(u, g)| {
            mean_of(g.iter().flat_map(|t| t.turns.iter().map(|x| x.response.as_slice())), dim)
                .with_context(|| format!("user {u} has no turns"))
        })
        .collect()
}

pub fn embedding_dim(ds: &Dataset) -> Result<usize> {
    ds.transcripts
        .iter()
        .flat_map(|t| t.turns.first())
        .map(|t| t.response.len())
        .next()
        .context("dataset has no responses")
}

/// Corpus@k feature for one user: the mean of the first `k` responses of
/// the first transcript (or of every transcript, pooled), skipping greeting
/// and goodbye turns. The flag is set when fewer than `k` turns exist.
pub fn corpus_feature(
    transcripts: &[&Transcript],
    catalog: &QuestionCatalog,
    k: usize,
    pool: bool,
    dim: usize,
) -> Result<(Vec<f64>, bool)> {
    let greeting = catalog.greeting();
    let mut short = false;
    let mut picked: Vec<&[f64]> = Vec::new();
    let used = if pool { transcripts.len() } else { transcripts.len().min(1) };
    for t in &transcripts[..used] {
        let content: Vec<&[f64]> = t
            .turns
            .iter()
            .filter(|x| x.question != greeting && !catalog.is_goodbye(x.question))
            .take(k)
            .map(|x| x.response.as_slice())
            .collect();
        short |= content.len() < k;
        picked.extend(content);
    }
    let feature = mean_of(picked, dim).context("transcript has no content turns")?;
    Ok((feature, short))
}

pub fn make_splits(labels: &[Label], cfg: &ExperimentConfig) -> Result<Vec<Split>> {
    let plan = SplitPlan {
        n_splits: cfg.split.n_splits,
        train_fraction: cfg.split.train_fraction,
        seed: derive_seed(cfg.seed, stream::SPLIT, 0),
    };
    Ok(classifier::stratified_shuffle_split(labels, &plan)?)
}

/// Which pipeline stage asked for a label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    ClassifierFit,
    AgentTraining,
    Evaluation,
}

/// Gatekeeper for labels within one split. Training phases may only read
/// training users; every read is logged.
#[derive(Debug)]
pub struct LabelBook<'a> {
    labels: &'a [Label],
    is_train: Vec<bool>,
    log: RefCell<Vec<(Phase, usize)>>,
}

impl<'a> LabelBook<'a> {
    pub fn new(labels: &'a [Label], split: &Split) -> Self {
        let mut is_train = vec![false; labels.len()];
        for &u in &split.train {
            is_train[u] = true;
        }
        Self {
            labels,
            is_train,
            log: RefCell::new(Vec::new()),
        }
    }

    pub fn train_label(&self, phase: Phase, user: usize) -> Result<Label> {
        ensure!(phase != Phase::Evaluation, "evaluation reads labels through test_label");
        match self.is_train.get(user) {
            Some(true) => {}
            Some(false) => bail!("label of test user {user} requested during {phase:?}"),
            None => bail!("unknown user {user}"),
        }
        self.log.borrow_mut().push((phase, user));
        Ok(self.labels[user])
    }

    pub fn test_label(&self, user: usize) -> Result<Label> {
        let label = *self.labels.get(user).with_context(|| format!("unknown user {user}"))?;
        self.log.borrow_mut().push((Phase::Evaluation, user));
        Ok(label)
    }

    pub fn is_train(&self, user: usize) -> bool {
        self.is_train.get(user).copied().unwrap_or(false)
    }

    pub fn reads(&self) -> Vec<(Phase, usize)> {
        self.log.borrow().clone()
    }
}

pub fn fit_split_classifier(
    features: &[Vec<f64>],
    book: &LabelBook<'_>,
    split: &Split,
    cfg: &ExperimentConfig,
) -> Result<ClassifierModel> {
    let x: Vec<Vec<f64>> = split.train.iter().map(|&u| features[u].clone()).collect();
    let y: Vec<Label> = split
        .train
        .iter()
        .map(|&u| book.train_label(Phase::ClassifierFit, u))
        .collect::<Result<_>>()?;
    Ok(classifier::fit(&x, &y, cfg.classifier.l2, cfg.classifier.kind)?)
}

pub fn agent_config(cfg: &ExperimentConfig, split_index: usize) -> AgentConfig {
    AgentConfig {
        seed: derive_seed(cfg.seed, stream::AGENT, split_index as u64),
        ..cfg.agent.clone()
    }
}

/// Pretrains on the training users' transcripts, then runs the episodic
/// loop against their simulators.
pub fn train_split_agent(
    split_index: usize,
    split: &Split,
    ds: &Dataset,
    simulators: &[SimulatorModel],
    classifier: &ClassifierModel,
    book: &LabelBook<'_>,
    cfg: &ExperimentConfig,
) -> Result<(AgentCheckpoint, Vec<CurvePoint>)> {
    let c = classifier.dim();
    let h = simulators.first().context("no simulators")?.hidden();
    let mut learner = DqnLearner::for_dialogue(
        agent_config(cfg, split_index),
        ds.catalog.len(),
        c,
        h,
        cfg.env.max_turns,
    )?;
    let groups = ds.by_user();
    let fingerprints: Vec<Vec<f64>> = simulators.iter().map(SimulatorModel::fingerprint).collect();
    let mut episodes = Vec::new();
    for &u in &split.train {
        let label = book.train_label(Phase::AgentTraining, u)?;
        for t in &groups[u] {
            episodes.push(PretrainEpisode {
                transcript: t,
                label,
                fingerprint: &fingerprints[u],
            });
        }
    }
    if cfg.agent.pretrain_passes > 0 {
        agent::pretrain_from_corpus(&mut learner, &episodes, &ds.catalog, classifier, &cfg.env)?;
    }
    let users: Vec<TrainingUser<'_>> = split
        .train
        .iter()
        .map(|&u| {
            Ok(TrainingUser {
                simulator: &simulators[u],
                label: book.train_label(Phase::AgentTraining, u)?,
            })
        })
        .collect::<Result<_>>()?;
    let curve = agent::train(&mut learner, &users, &ds.catalog, classifier, &cfg.env)?;
    Ok((learner.checkpoint(), curve))
}

/// Greedy test-time conversation with one simulator under a turn budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub split: usize,
    pub constraint: usize,
    pub user_id: usize,
    pub p_mci: f64,
    pub trace: Vec<TraceEvent>,
}

/// Runs the greedy masked policy for at most `budget` questions. If the
/// agent has not said goodbye by the last allowed question, that question is
/// its best goodbye.
pub fn rollout(
    qnet: &QNetwork,
    simulator: &SimulatorModel,
    catalog: &QuestionCatalog,
    classifier: &ClassifierModel,
    env: &EnvConfig,
    budget: usize,
) -> Result<(f64, Vec<TraceEvent>)> {
    let env_cfg = EnvConfig {
        max_turns: budget,
        ..env.clone()
    };
    let mut e = Environment::reset(catalog, classifier, &env_cfg, simulator, simulator.fingerprint(), None)?;
    let trace = agent::budgeted_greedy_episode(qnet, &mut e, catalog, |_| {})?;
    Ok((e.state().class_probs[1], trace))
}

/// One row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub split: usize,
    pub method: String,
    pub constraint: Option<usize>,
    pub auc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    /// Corpus rows: test users whose transcript had fewer turns than asked.
    pub short_transcripts: usize,
}

pub const METHOD_RL: &str = "rl";
pub const METHOD_CORPUS: &str = "corpus";
pub const METHOD_FULL: &str = "full";

fn metric_row(
    split: usize,
    method: &str,
    constraint: Option<usize>,
    scores: &[f64],
    labels: &[Label],
    short: usize,
) -> Result<MetricRow> {
    let m = binary_metrics(scores, labels, DECISION_THRESHOLD)?;
    Ok(MetricRow {
        split,
        method: method.to_string(),
        constraint,
        auc: auc(scores, labels)?,
        sensitivity: m.sensitivity,
        specificity: m.specificity,
        f1: m.f1,
        short_transcripts: short,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitEvaluation {
    pub rows: Vec<MetricRow>,
    pub rollouts: Vec<Rollout>,
}

/// Scores the split's models on its test users: RL(T=t) and Corpus@t for
/// every constraint, plus the full-information baseline.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_split(
    split_index: usize,
    split: &Split,
    ds: &Dataset,
    simulators: &[SimulatorModel],
    features: &[Vec<f64>],
    classifier: &ClassifierModel,
    qnet: &QNetwork,
    book: &LabelBook<'_>,
    cfg: &ExperimentConfig,
) -> Result<SplitEvaluation> {
    ensure!(
        classifier.dim() == simulators[0].embedding_dim(),
        "classifier expects c = {} but simulators emit c = {}",
        classifier.dim(),
        simulators[0].embedding_dim()
    );
    let labels: Vec<Label> = split.test.iter().map(|&u| book.test_label(u)).collect::<Result<_>>()?;
    let groups = ds.by_user();
    let dim = classifier.dim();
    let mut rows = Vec::new();
    let mut rollouts = Vec::new();
    for &t in &cfg.turn_constraints {
        let mut scores = Vec::with_capacity(split.test.len());
        for &u in &split.test {
            let (p, trace) = rollout(qnet, &simulators[u], &ds.catalog, classifier, &cfg.env, t)
                .with_context(|| format!("split {split_index}, user {u}, T={t}"))?;
            scores.push(p);
            rollouts.push(Rollout {
                split: split_index,
                constraint: t,
                user_id: u,
                p_mci: p,
                trace,
            });
        }
        rows.push(metric_row(split_index, METHOD_RL, Some(t), &scores, &labels, 0)?);
    }
    for &k in &cfg.turn_constraints {
        let mut scores = Vec::with_capacity(split.test.len());
        let mut short = 0;
        for &u in &split.test {
            let (f, s) = corpus_feature(&groups[u], &ds.catalog, k, cfg.corpus.pool_transcripts, dim)?;
            short += usize::from(s);
            scores.push(classifier.predict_proba(&f)?[1]);
        }
        rows.push(metric_row(split_index, METHOD_CORPUS, Some(k), &scores, &labels, short)?);
    }
    let scores: Vec<f64> = split
        .test
        .iter()
        .map(|&u| Ok(classifier.predict_proba(&features[u])?[1]))
        .collect::<Result<_>>()?;
    rows.push(metric_row(split_index, METHOD_FULL, None, &scores, &labels, 0)?);
    Ok(SplitEvaluation { rows, rollouts })
}

/// Classifier of every split, fitted on its training users' features.
pub fn fit_classifiers(ds: &Dataset, splits: &[Split], cfg: &ExperimentConfig) -> Result<Vec<ClassifierModel>> {
    let features = user_features(ds)?;
    splits
        .iter()
        .enumerate()
        .map(|(s, split)| {
            let book = LabelBook::new(&ds.labels, split);
            fit_split_classifier(&features, &book, split, cfg).with_context(|| format!("split {s}: classifier"))
        })
        .collect()
}

/// Agent of every split; splits train in parallel and are collected in order.
pub fn train_agents(
    ds: &Dataset,
    simulators: &[SimulatorModel],
    splits: &[Split],
    classifiers: &[ClassifierModel],
    cfg: &ExperimentConfig,
) -> Result<Vec<(AgentCheckpoint, Vec<CurvePoint>)>> {
    ensure!(splits.len() == classifiers.len(), "{} splits but {} classifiers", splits.len(), classifiers.len());
    splits
        .par_iter()
        .zip(classifiers)
        .enumerate()
        .map(|(s, (split, clf))| {
            let book = LabelBook::new(&ds.labels, split);
            let out = train_split_agent(s, split, ds, simulators, clf, &book, cfg).with_context(|| format!("split {s}: agent"))?;
            log::info!("split {s}: agent trained on {} users", split.train.len());
            Ok(out)
        })
        .collect()
}

pub fn evaluate_splits(
    ds: &Dataset,
    simulators: &[SimulatorModel],
    splits: &[Split],
    classifiers: &[ClassifierModel],
    agents: &[AgentCheckpoint],
    cfg: &ExperimentConfig,
) -> Result<Vec<SplitEvaluation>> {
    ensure!(
        splits.len() == classifiers.len() && splits.len() == agents.len(),
        "{} splits, {} classifiers, {} agents",
        splits.len(),
        classifiers.len(),
        agents.len()
    );
    ensure!(simulators.len() == ds.n_users(), "{} simulators for {} users", simulators.len(), ds.n_users());
    let features = user_features(ds)?;
    splits
        .par_iter()
        .zip(classifiers.par_iter().zip(agents))
        .enumerate()
        .map(|(s, (split, (clf, agent)))| {
            agent.validate()?;
            let book = LabelBook::new(&ds.labels, split);
            evaluate_split(s, split, ds, simulators, &features, clf, &agent.online, &book, cfg)
                .with_context(|| format!("split {s}: evaluation"))
        })
        .collect()
}

/// Question counts per turn window, most frequent first (ties by id).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowRanking {
    pub first_turn: usize,
    pub last_turn: usize,
    pub counts: Vec<(usize, usize)>,
}

pub const DEFAULT_WINDOWS: [(usize, usize); 5] = [(1, 5), (6, 10), (11, 15), (16, 20), (21, 35)];

pub fn policy_rankings<'a>(rollouts: impl IntoIterator<Item = &'a Rollout>, windows: &[(usize, usize)]) -> Vec<WindowRanking> {
    let mut tallies: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); windows.len()];
    for r in rollouts {
        for ev in &r.trace {
            for (w, &(lo, hi)) in windows.iter().enumerate() {
                if (lo..=hi).contains(&ev.turn) {
                    *tallies[w].entry(ev.action_id).or_default() += 1;
                }
            }
        }
    }
    windows
        .iter()
        .zip(tallies)
        .map(|(&(lo, hi), t)| {
            let mut counts: Vec<(usize, usize)> = t.into_iter().collect();
            counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            WindowRanking {
                first_turn: lo,
                last_turn: hi,
                counts,
            }
        })
        .collect()
}

/// Share of the top-`n` entries of a ranking that are in `ids`. The
/// denominator is the number of listed entries, at most `n`.
pub fn top_fraction(ranking: &WindowRanking, n: usize, ids: &[usize]) -> Option<f64> {
    let top: Vec<usize> = ranking.counts.iter().take(n).map(|c| c.0).collect();
    (!top.is_empty()).then(|| top.iter().filter(|q| ids.contains(q)).count() as f64 / top.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use screenbot_core::cohort::Turn;

    fn transcript(user: usize, conv: usize, qs: &[usize]) -> Transcript {
        Transcript {
            user_id: user,
            conversation: conv,
            turns: qs
                .iter()
                .map(|&q| Turn {
                    question: q,
                    response: vec![q as f64, 1.0],
                })
                .collect(),
        }
    }

    #[test]
    fn corpus_feature_skips_greeting_and_goodbye() {
        let cat = QuestionCatalog::synthetic(20).unwrap();
        let t = transcript(0, 0, &[0, 1, 2, 3, 19]);
        let (f, short) = corpus_feature(&[&t], &cat, 2, false, 2).unwrap();
        assert_eq!(f, vec![1.5, 1.0]);
        assert!(!short);
        let (f, short) = corpus_feature(&[&t], &cat, 10, false, 2).unwrap();
        assert_eq!(f, vec![2.0, 1.0]);
        assert!(short);
    }

    #[test]
    fn corpus_feature_pools_when_asked() {
        let cat = QuestionCatalog::synthetic(20).unwrap();
        let a = transcript(0, 0, &[0, 1, 19]);
        let b = transcript(0, 1, &[0, 3, 19]);
        assert_eq!(corpus_feature(&[&a, &b], &cat, 1, false, 2).unwrap().0, vec![1.0, 1.0]);
        assert_eq!(corpus_feature(&[&a, &b], &cat, 1, true, 2).unwrap().0, vec![2.0, 1.0]);
    }

    #[test]
    fn label_book_refuses_test_users_in_training_phases() {
        let labels = vec![Label::Normal, Label::Mci, Label::Normal];
        let split = Split {
            train: vec![0, 1],
            test: vec![2],
        };
        let book = LabelBook::new(&labels, &split);
        assert_eq!(book.train_label(Phase::ClassifierFit, 1).unwrap(), Label::Mci);
        assert!(book.train_label(Phase::AgentTraining, 2).is_err());
        assert!(book.train_label(Phase::Evaluation, 0).is_err());
        assert_eq!(book.test_label(2).unwrap(), Label::Normal);
        assert_eq!(
            book.reads(),
            vec![(Phase::ClassifierFit, 1), (Phase::Evaluation, 2)]
        );
    }

    fn ev(turn: usize, action_id: usize) -> TraceEvent {
        TraceEvent {
            turn,
            action_id,
            reward: 0.0,
            p_mci: 0.5,
            tau: 0,
            done: false,
        }
    }

    #[test]
    fn rankings_sort_by_count_then_id() {
        let r = Rollout {
            split: 0,
            constraint: 35,
            user_id: 0,
            p_mci: 0.5,
            trace: vec![ev(1, 4), ev(2, 3), ev(3, 4), ev(4, 2), ev(5, 3), ev(6, 1)],
        };
        let w = policy_rankings([&r], &[(1, 5), (6, 10)]);
        assert_eq!(w[0].counts, vec![(3, 2), (4, 2), (2, 1)]);
        assert_eq!(w[1].counts, vec![(1, 1)]);
        assert_eq!(top_fraction(&w[0], 5, &[3, 4]), Some(2.0 / 3.0));
        assert_eq!(top_fraction(&policy_rankings([], &[(1, 5)])[0], 5, &[1]), None);
    }
}
