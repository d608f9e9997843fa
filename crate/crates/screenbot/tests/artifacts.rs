mod common;

use std::fs;

use screenbot::experiment::{self, Phase};
use screenbot::interview::{LineEmbedder, Session};
use screenbot::io::{self, TranscriptRecord};
use screenbot::manifest::{self, Manifest};
use screenbot::pipeline::{self, Layout};
use screenbot::report::MeanStd;
use screenbot_core::classifier::ClassifierModel;
use screenbot_core::cohort::Label;

fn run_tiny(seed: u64) -> (tempfile::TempDir, Layout, screenbot::ExperimentConfig) {
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    let cfg = common::tiny_config(seed);
    pipeline::run_all(&cfg, &layout).unwrap();
    (dir, layout, cfg)
}

#[test]
fn transcripts_and_catalog_roundtrip() {
    let (_d, layout, cfg) = run_tiny(1);
    let (ds, _) = experiment::generate_dataset(&cfg).unwrap();
    let loaded = pipeline::load_dataset(&layout).unwrap();
    assert_eq!(loaded, ds);
    let recs: Vec<TranscriptRecord> = io::read_jsonl(&layout.transcripts()).unwrap();
    assert_eq!(recs.len(), 16 * 2);
    assert!(recs.iter().all(|r| r.label.is_some()));
}

#[test]
fn manifest_reload_reproduces_metrics() {
    let (_d, layout, cfg) = run_tiny(2);
    let m = Manifest::load(&layout).unwrap();
    assert_eq!(m.master_seed, cfg.seed);
    assert_eq!(m.config, cfg);
    assert!(m.files.iter().all(|f| f.sha256.len() == 64));
    let cfg_hash = manifest::sha256_file(&layout.config()).unwrap();
    assert_eq!(m.entry("config.toml").unwrap().sha256, cfg_hash);
    let again = layout.root().join("reeval.csv");
    manifest::reevaluate(&layout, &again).unwrap();
    assert_eq!(fs::read(&again).unwrap(), fs::read(layout.metrics()).unwrap());
}

#[test]
fn manifest_detects_corruption_and_missing_files() {
    let (_d, layout, _) = run_tiny(3);
    let agent = layout.agent(0);
    let original = fs::read(&agent).unwrap();
    fs::write(&agent, b"{}").unwrap();
    let err = format!("{:#}", Manifest::load(&layout).unwrap_err());
    assert!(err.contains("corrupt"), "{err}");
    fs::remove_file(&agent).unwrap();
    let err = format!("{:#}", Manifest::load(&layout).unwrap_err());
    assert!(err.contains("missing"), "{err}");
    fs::write(&agent, original).unwrap();
    Manifest::load(&layout).unwrap();
}

#[test]
fn mismatched_embedding_dim_is_rejected() {
    let (_d, layout, cfg) = run_tiny(4);
    let wrong = ClassifierModel::logistic(vec![0.0; 5], 0.0);
    io::write_model(&layout.classifier(1), pipeline::CLASSIFIER_FORMAT, &wrong).unwrap();
    let err = format!("{:#}", pipeline::evaluate_into(&cfg, &layout, &layout.root().join("x.csv")).unwrap_err());
    assert!(err.contains("c = 5"), "{err}");
}

#[test]
fn report_matches_recomputation_from_csv() {
    let (_d, layout, cfg) = run_tiny(5);
    let report: screenbot::report::Report = io::read_json(&layout.report()).unwrap();
    let rows = pipeline::read_metrics(&layout.metrics()).unwrap();
    // Every (split, constraint) cell for both baselines and RL, plus full.
    assert_eq!(rows.len(), cfg.split.n_splits * (2 * cfg.turn_constraints.len() + 1));
    for cell in &report.cells {
        let aucs: Vec<f64> = rows
            .iter()
            .filter(|r| r.method == cell.method && r.constraint == cell.constraint)
            .map(|r| r.auc)
            .collect();
        assert_eq!(aucs.len(), cfg.split.n_splits);
        let want = MeanStd::of(&aucs);
        assert_eq!(cell.auc.mean.to_bits(), want.mean.to_bits());
        assert_eq!(cell.auc.std.to_bits(), want.std.to_bits());
    }
}

#[test]
fn test_labels_are_only_read_during_evaluation() {
    let cfg = common::tiny_config(6);
    let (ds, _) = experiment::generate_dataset(&cfg).unwrap();
    let sims = experiment::fit_simulators(&ds, &cfg).unwrap();
    let features = experiment::user_features(&ds).unwrap();
    let splits = experiment::make_splits(&ds.labels, &cfg).unwrap();
    for (s, split) in splits.iter().enumerate() {
        let book = experiment::LabelBook::new(&ds.labels, split);
        let clf = experiment::fit_split_classifier(&features, &book, split, &cfg).unwrap();
        let (ck, _) = experiment::train_split_agent(s, split, &ds, &sims, &clf, &book, &cfg).unwrap();
        let before_eval = book.reads();
        assert!(!before_eval.is_empty());
        for (phase, user) in &before_eval {
            assert_ne!(*phase, Phase::Evaluation);
            assert!(split.train.contains(user), "{phase:?} read test user {user}");
        }
        experiment::evaluate_split(s, split, &ds, &sims, &features, &clf, &ck.online, &book, &cfg).unwrap();
        for (phase, user) in &book.reads()[before_eval.len()..] {
            assert_eq!(*phase, Phase::Evaluation);
            assert!(split.test.contains(user));
        }
    }
}

#[test]
fn interview_with_a_simulator_matches_the_batch_rollout() {
    let (_d, layout, cfg) = run_tiny(7);
    let ds = pipeline::load_dataset(&layout).unwrap();
    let sims = pipeline::load_simulators(&layout, ds.n_users()).unwrap();
    let splits = pipeline::load_splits(&layout).unwrap();
    let clfs = pipeline::load_classifiers(&layout, splits.len()).unwrap();
    let rollouts: Vec<experiment::Rollout> = io::read_jsonl(&layout.traces()).unwrap();
    for s in 0..splits.len() {
        let agent = pipeline::load_agent(&layout, s).unwrap();
        for &u in &splits[s].test {
            for &t in &cfg.turn_constraints {
                let session = Session {
                    qnet: &agent.online,
                    catalog: &ds.catalog,
                    classifier: &clfs[s],
                    env: &cfg.env,
                    budget: t,
                    fingerprint: sims[u].fingerprint(),
                };
                let mut out = Vec::new();
                let o = session.run(&sims[u], &mut out).unwrap();
                let batch = rollouts
                    .iter()
                    .find(|r| r.split == s && r.user_id == u && r.constraint == t)
                    .unwrap();
                assert_eq!(o.p_mci.to_bits(), batch.p_mci.to_bits());
                assert_eq!(o.trace, batch.trace);
                assert_eq!(o.transcript[0].question, ds.catalog.greeting());
                assert!(o.transcript.len() <= t + 1);
                let text = String::from_utf8(out).unwrap();
                assert!(text.starts_with("[0] "), "{text}");
                assert!(text.contains("prediction:"));
            }
        }
    }
}

#[test]
fn protocol_violation_aborts_with_partial_transcript() {
    let (_d, layout, cfg) = run_tiny(8);
    let ds = pipeline::load_dataset(&layout).unwrap();
    let clf = pipeline::load_classifiers(&layout, 1).unwrap().remove(0);
    let agent = pipeline::load_agent(&layout, 0).unwrap();
    let good = vec!["0.1"; 8].join(" ");
    // The greeting reply is valid; the first agent question gets a short one.
    let replies = format!("{good}\n1 2 3\n");
    let mut sent = Vec::new();
    let embedder = LineEmbedder::new(&mut sent, std::io::Cursor::new(replies), &ds.catalog, 8);
    let session = Session {
        qnet: &agent.online,
        catalog: &ds.catalog,
        classifier: &clf,
        env: &cfg.env,
        budget: 5,
        fingerprint: vec![0.0; 8],
    };
    let o = session.run(embedder, &mut std::io::sink()).unwrap();
    let msg = o.aborted.expect("session should abort");
    assert!(msg.contains("protocol"), "{msg}");
    assert_eq!(o.prediction, None::<Label>);
    assert_eq!(o.transcript.len(), 1);
    assert_eq!(o.transcript[0].question, ds.catalog.greeting());
}

#[test]
fn same_seed_gives_identical_files() {
    let (_a, la, _) = run_tiny(9);
    let (_b, lb, _) = run_tiny(9);
    for p in ["metrics.csv", "policy_rankings.csv", "traces.jsonl", "report.json"] {
        assert_eq!(fs::read(la.root().join(p)).unwrap(), fs::read(lb.root().join(p)).unwrap(), "{p}");
    }
    let (_c, lc, _) = run_tiny(10);
    assert_ne!(fs::read(la.transcripts()).unwrap(), fs::read(lc.transcripts()).unwrap());
}
