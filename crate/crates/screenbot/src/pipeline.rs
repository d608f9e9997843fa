//! Output-directory layout and the stages that read and write it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::Serialize;

use screenbot_core::agent::{AgentCheckpoint, CurvePoint};
use screenbot_core::classifier::{ClassifierModel, Split};
use screenbot_core::cohort::{Cohort, Label};
use screenbot_core::simulator::{LooResult, SimulatorModel};

use crate::config::ExperimentConfig;
use crate::experiment::{self, Dataset, MetricRow, Rollout, DEFAULT_WINDOWS};
use crate::io::{self, TranscriptRecord};
use crate::report::{self, PolicySection, Report, ReportInputs};

pub const SIMULATOR_FORMAT: &str = "simulator";
pub const CLASSIFIER_FORMAT: &str = "classifier";
pub const COHORT_FORMAT: &str = "cohort";
pub const SPLITS_FORMAT: &str = "splits";

/// Paths inside an output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
    pub fn catalog(&self) -> PathBuf {
        self.root.join("catalog.tsv")
    }
    pub fn cohort(&self) -> PathBuf {
        self.root.join("cohort.json")
    }
    pub fn transcripts(&self) -> PathBuf {
        self.root.join("transcripts.jsonl")
    }
    pub fn simulator(&self, user: usize) -> PathBuf {
        self.root.join("simulators").join(format!("user_{user:04}.json"))
    }
    pub fn simulator_loo(&self) -> PathBuf {
        self.root.join("simulator_loo.csv")
    }
    pub fn splits(&self) -> PathBuf {
        self.root.join("splits.json")
    }
    fn split_dir(&self, split: usize) -> PathBuf {
        self.root.join("models").join(format!("split_{split:02}"))
    }
    pub fn classifier(&self, split: usize) -> PathBuf {
        self.split_dir(split).join("classifier.json")
    }
    pub fn agent(&self, split: usize) -> PathBuf {
        self.split_dir(split).join("agent.json")
    }
    pub fn learning_curve(&self, split: usize) -> PathBuf {
        self.split_dir(split).join("learning_curve.csv")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }
    pub fn traces(&self) -> PathBuf {
        self.root.join("traces.jsonl")
    }
    pub fn rankings(&self) -> PathBuf {
        self.root.join("policy_rankings.csv")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
    pub fn interviews(&self) -> PathBuf {
        self.root.join("interviews")
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    io::ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.with_context(|| format!("{} row {}", path.display(), i + 1)))
        .collect()
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    read_csv(path)
}

/// Writes the resolved config, catalog, ground-truth cohort and labelled
/// transcripts.
pub fn gen_cohort(cfg: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let (ds, cohort) = experiment::generate_dataset(cfg)?;
    io::ensure_parent(&layout.config())?;
    fs::write(layout.config(), cfg.to_toml()?)?;
    io::write_catalog(&layout.catalog(), &ds.catalog)?;
    io::write_model(&layout.cohort(), COHORT_FORMAT, &cohort)?;
    let records: Vec<TranscriptRecord> = ds
        .transcripts
        .iter()
        .map(|t| TranscriptRecord::new(t, Some(ds.labels[t.user_id])))
        .collect();
    io::write_jsonl(&layout.transcripts(), &records)?;
    log::info!("wrote {} transcripts for {} users", records.len(), ds.n_users());
    Ok(())
}

pub fn load_cohort(layout: &Layout) -> Result<Cohort> {
    io::read_model(&layout.cohort(), COHORT_FORMAT)
}

/// Catalog plus transcripts; each user's label must be present and agree
/// across their transcripts.
pub fn load_dataset(layout: &Layout) -> Result<Dataset> {
    let catalog = io::read_catalog(&layout.catalog())?;
    let records: Vec<TranscriptRecord> = io::read_jsonl(&layout.transcripts())?;
    let mut labels: BTreeMap<usize, Label> = BTreeMap::new();
    for r in &records {
        let l = r
            .label
            .with_context(|| format!("transcript {}/{} has no label", r.user_id, r.conversation))?;
        if let Some(prev) = labels.insert(r.user_id, l) {
            ensure!(prev == l, "user {} has conflicting labels", r.user_id);
        }
    }
    let n = labels.keys().next_back().map_or(0, |u| u + 1);
    ensure!(labels.len() == n, "user ids in transcripts are not contiguous from 0");
    let ds = Dataset {
        catalog,
        transcripts: records.into_iter().map(TranscriptRecord::into_transcript).collect(),
        labels: labels.into_values().collect(),
    };
    ds.validate()?;
    Ok(ds)
}

pub fn train_sim(cfg: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let ds = load_dataset(layout)?;
    let sims = experiment::fit_simulators(&ds, cfg)?;
    for s in &sims {
        io::write_model(&layout.simulator(s.user_id), SIMULATOR_FORMAT, s)?;
    }
    let loo = if cfg.simulator_loo {
        experiment::simulator_loo(&ds, cfg)?
    } else {
        Vec::new()
    };
    write_csv(&layout.simulator_loo(), &loo)?;
    log::info!("fitted {} simulators", sims.len());
    Ok(())
}

pub fn load_simulators(layout: &Layout, n_users: usize) -> Result<Vec<SimulatorModel>> {
    let sims: Vec<SimulatorModel> = (0..n_users)
        .map(|u| io::read_model::<SimulatorModel>(&layout.simulator(u), SIMULATOR_FORMAT))
        .collect::<Result<_>>()?;
    for (u, s) in sims.iter().enumerate() {
        ensure!(s.user_id == u, "simulator file for user {u} holds user {}", s.user_id);
    }
    if let Some(first) = sims.first() {
        for s in &sims {
            ensure!(
                s.embedding_dim() == first.embedding_dim() && s.hidden() == first.hidden(),
                "simulators disagree on shape"
            );
        }
    }
    Ok(sims)
}

pub fn train_clf(cfg: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let ds = load_dataset(layout)?;
    let splits = experiment::make_splits(&ds.labels, cfg)?;
    io::write_model(&layout.splits(), SPLITS_FORMAT, &splits)?;
    let classifiers = experiment::fit_classifiers(&ds, &splits, cfg)?;
    for (s, c) in classifiers.iter().enumerate() {
        io::write_model(&layout.classifier(s), CLASSIFIER_FORMAT, c)?;
    }
    Ok(())
}

pub fn load_splits(layout: &Layout) -> Result<Vec<Split>> {
    io::read_model(&layout.splits(), SPLITS_FORMAT)
}

pub fn load_classifiers(layout: &Layout, n: usize) -> Result<Vec<ClassifierModel>> {
    (0..n)
        .map(|s| io::read_model(&layout.classifier(s), CLASSIFIER_FORMAT))
        .collect()
}

pub fn load_agent(layout: &Layout, split: usize) -> Result<AgentCheckpoint> {
    let ck: AgentCheckpoint = io::read_json(&layout.agent(split))?;
    ck.validate().with_context(|| format!("{}", layout.agent(split).display()))?;
    Ok(ck)
}

pub fn train_agent(cfg: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let ds = load_dataset(layout)?;
    let sims = load_simulators(layout, ds.n_users())?;
    let splits = load_splits(layout)?;
    let classifiers = load_classifiers(layout, splits.len())?;
    check_dims(&classifiers, &sims)?;
    let agents = experiment::train_agents(&ds, &sims, &splits, &classifiers, cfg)?;
    for (s, (ck, curve)) in agents.iter().enumerate() {
        io::write_json(&layout.agent(s), ck)?;
        write_csv(&layout.learning_curve(s), curve)?;
    }
    Ok(())
}

/// Every classifier must read the embeddings the simulators produce.
pub fn check_dims(classifiers: &[ClassifierModel], sims: &[SimulatorModel]) -> Result<()> {
    let Some(sim) = sims.first() else {
        bail!("no simulators loaded");
    };
    for (s, c) in classifiers.iter().enumerate() {
        ensure!(
            c.dim() == sim.embedding_dim(),
            "split {s}: classifier expects c = {} but simulators emit c = {}",
            c.dim(),
            sim.embedding_dim()
        );
    }
    Ok(())
}

/// Evaluation on already-trained artifacts, written to `metrics_path`.
pub fn evaluate_into(cfg: &ExperimentConfig, layout: &Layout, metrics_path: &Path) -> Result<Vec<Rollout>> {
    let ds = load_dataset(layout)?;
    let sims = load_simulators(layout, ds.n_users())?;
    let splits = load_splits(layout)?;
    let classifiers = load_classifiers(layout, splits.len())?;
    check_dims(&classifiers, &sims)?;
    let agents: Vec<AgentCheckpoint> = (0..splits.len()).map(|s| load_agent(layout, s)).collect::<Result<_>>()?;
    let evals = experiment::evaluate_splits(&ds, &sims, &splits, &classifiers, &agents, cfg)?;
    let rows: Vec<MetricRow> = evals.iter().flat_map(|e| e.rows.iter().cloned()).collect();
    write_metrics(metrics_path, &rows)?;
    Ok(evals.into_iter().flat_map(|e| e.rollouts).collect())
}

/// One line of `policy_rankings.csv`. `scope` is a split index or `all`.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct RankingRow {
    pub scope: String,
    pub window: String,
    pub rank: usize,
    pub question_id: usize,
    pub category: String,
    pub count: usize,
    pub text: String,
}

pub fn eval(cfg: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let rollouts = evaluate_into(cfg, layout, &layout.metrics())?;
    io::write_jsonl(&layout.traces(), &rollouts)?;
    let ds_catalog = io::read_catalog(&layout.catalog())?;
    let n_splits = load_splits(layout)?.len();
    let t = cfg.max_constraint();
    let mut rows = Vec::new();
    let mut scopes: Vec<(String, Vec<&Rollout>)> = (0..n_splits)
        .map(|s| {
            let rs = rollouts.iter().filter(|r| r.split == s && r.constraint == t).collect();
            (s.to_string(), rs)
        })
        .collect();
    scopes.push(("all".into(), rollouts.iter().filter(|r| r.constraint == t).collect()));
    for (scope, rs) in &scopes {
        for w in experiment::policy_rankings(rs.iter().copied(), &DEFAULT_WINDOWS) {
            for (rank, &(q, count)) in w.counts.iter().enumerate() {
                let question = ds_catalog.get(q)?;
                rows.push(RankingRow {
                    scope: scope.clone(),
                    window: format!("{}-{}", w.first_turn, w.last_turn),
                    rank: rank + 1,
                    question_id: q,
                    category: question.category.tag().to_string(),
                    count,
                    text: question.text.clone(),
                });
            }
        }
    }
    write_csv(&layout.rankings(), &rows)?;
    Ok(())
}

/// Builds `report.json` from the CSV and trace outputs alone.
pub fn build_report(cfg: &ExperimentConfig, layout: &Layout) -> Result<Report> {
    let rows = read_metrics(&layout.metrics())?;
    let rollouts: Vec<Rollout> = io::read_jsonl(&layout.traces())?;
    let n_splits = load_splits(layout)?.len();
    let loo: Vec<LooResult> = if layout.simulator_loo().exists() {
        read_csv(&layout.simulator_loo())?
    } else {
        Vec::new()
    };
    let curves: Vec<Vec<CurvePoint>> = (0..n_splits)
        .map(|s| read_csv(&layout.learning_curve(s)))
        .collect::<Result<_>>()?;
    let t = cfg.max_constraint();
    let ids = &cfg.cohort.discriminative_ids;
    let by_split: Vec<Option<f64>> = (0..n_splits)
        .map(|s| {
            let w = experiment::policy_rankings(rollouts.iter().filter(|r| r.split == s && r.constraint == t), &DEFAULT_WINDOWS[..1]);
            experiment::top_fraction(&w[0], 5, ids)
        })
        .collect();
    let present: Vec<f64> = by_split.iter().flatten().copied().collect();
    let policy = PolicySection {
        constraint: t,
        windows: experiment::policy_rankings(rollouts.iter().filter(|r| r.constraint == t), &DEFAULT_WINDOWS),
        discriminative_ids: ids.clone(),
        top5_discriminative_mean: (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64),
        top5_discriminative_by_split: by_split,
    };
    let report = report::build_report(ReportInputs {
        master_seed: cfg.seed,
        n_splits,
        turn_constraints: &cfg.turn_constraints,
        rows: &rows,
        policy,
        loo: &loo,
        curves: &curves,
    });
    io::write_json(&layout.report(), &report)?;
    Ok(report)
}

/// Every stage in order, then the manifest.
pub fn run_all(cfg: &ExperimentConfig, layout: &Layout) -> Result<Report> {
    gen_cohort(cfg, layout)?;
    train_sim(cfg, layout)?;
    train_clf(cfg, layout)?;
    train_agent(cfg, layout)?;
    eval(cfg, layout)?;
    let report = build_report(cfg, layout)?;
    crate::manifest::Manifest::create(cfg, layout)?.save(layout)?;
    Ok(report)
}
