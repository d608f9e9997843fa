use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};

use screenbot::interview::{EmbedderProcess, Session};
use screenbot::io::{self, TranscriptRecord};
use screenbot::manifest::{self, Manifest};
use screenbot::pipeline::{self, Layout};
use screenbot::ExperimentConfig;
use screenbot_core::cohort::Transcript;
use screenbot_core::env::Responder;

#[derive(Parser)]
#[command(name = "screenbot", version, about = "Question-selection agent for conversational cognitive screening")]
struct Cli {
    /// Experiment config (TOML). Defaults to <out>/config.toml when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the catalog, synthetic cohort and transcripts.
    GenCohort,
    /// Fit one response simulator per user.
    TrainSim,
    /// Draw the splits and fit one classifier per split.
    TrainClf,
    /// Train one agent per split.
    TrainAgent,
    /// Turn-constrained rollouts, baselines and question rankings.
    Eval,
    /// Summarise the outputs into report.json and write the manifest.
    Report,
    /// All stages in order.
    Run,
    /// Check artifact hashes and re-evaluate into a separate CSV.
    Verify {
        #[arg(long, default_value = "metrics.reeval.csv")]
        metrics: PathBuf,
    },
    /// Print the default config.
    DefaultConfig,
    /// Interview a simulator or an external embedder with a trained agent.
    Interview(InterviewArgs),
}

#[derive(Args)]
struct InterviewArgs {
    /// Which split's classifier and agent to use.
    #[arg(long, default_value_t = 0)]
    split: usize,
    /// Interview this user's simulator.
    #[arg(long, conflicts_with = "embedder")]
    user: Option<usize>,
    /// Command of an embedder process speaking the line protocol.
    #[arg(long)]
    embedder: Option<String>,
    /// Arguments passed to the embedder.
    #[arg(long = "embedder-arg", allow_hyphen_values = true)]
    embedder_args: Vec<String>,
    /// Question budget after the greeting; defaults to the episode cap.
    #[arg(long)]
    turns: Option<usize>,
    /// Session name for the saved transcript.
    #[arg(long, default_value = "session")]
    name: String,
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let layout = Layout::new(&cli.out);
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None if layout.config().exists() => ExperimentConfig::load(&layout.config())?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Later stages must run with the config the cohort was generated from.
fn check_matches_saved(cfg: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let saved = ExperimentConfig::load(&layout.config()).context("run gen-cohort first")?;
    if saved.seed != cfg.seed || saved.cohort != cfg.cohort || saved.catalog != cfg.catalog {
        bail!("config differs from {} in seed, cohort or catalog", layout.config().display());
    }
    Ok(())
}

fn interview(cfg: &ExperimentConfig, layout: &Layout, args: &InterviewArgs) -> Result<()> {
    let ds = pipeline::load_dataset(layout)?;
    let sims = pipeline::load_simulators(layout, ds.n_users())?;
    let splits = pipeline::load_splits(layout)?;
    let split = splits.get(args.split).with_context(|| format!("no split {}", args.split))?;
    let classifier = pipeline::load_classifiers(layout, splits.len())?.swap_remove(args.split);
    pipeline::check_dims(std::slice::from_ref(&classifier), &sims)?;
    let agent = pipeline::load_agent(layout, args.split)?;
    let budget = args.turns.unwrap_or(cfg.env.max_turns);
    ensure!(budget >= 1 && budget <= cfg.env.max_turns, "turns must lie in 1..={}", cfg.env.max_turns);

    let (mut responder, fingerprint, user_id): (Box<dyn Responder>, Vec<f64>, usize) = match (&args.user, &args.embedder) {
        (Some(u), None) => {
            let sim = sims.get(*u).with_context(|| format!("no user {u}"))?;
            if !split.test.contains(u) {
                log::warn!("user {u} is a training user of split {}", args.split);
            }
            (Box::new(sim), sim.fingerprint(), *u)
        }
        (None, Some(cmd)) => {
            // No simulator exists for a live respondent; use the mean
            // fingerprint of the split's training users.
            let h = sims[0].hidden();
            let mut fp = vec![0.0; h];
            for &u in &split.train {
                for (a, b) in fp.iter_mut().zip(sims[u].fingerprint()) {
                    *a += b / split.train.len() as f64;
                }
            }
            let proc = EmbedderProcess::spawn(cmd, &args.embedder_args, &ds.catalog, classifier.dim())?;
            (Box::new(proc), fp, usize::MAX)
        }
        _ => bail!("give exactly one of --user or --embedder"),
    };
    let session = Session {
        qnet: &agent.online,
        catalog: &ds.catalog,
        classifier: &classifier,
        env: &cfg.env,
        budget,
        fingerprint,
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    let outcome = session.run(responder.as_mut(), &mut lock)?;
    lock.flush()?;
    let record = TranscriptRecord::new(
        &Transcript {
            user_id,
            conversation: 0,
            turns: outcome.transcript.clone(),
        },
        None,
    );
    let path = layout.interviews().join(format!("{}.jsonl", args.name));
    io::write_jsonl(&path, [&record])?;
    io::write_json(&layout.interviews().join(format!("{}.outcome.json", args.name)), &outcome)?;
    eprintln!("transcript saved to {}", path.display());
    if let Some(msg) = outcome.aborted {
        bail!("session aborted: {msg}");
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let layout = Layout::new(&cli.out);
    let cfg = resolve_config(&cli)?;
    match &cli.command {
        Cmd::DefaultConfig => print!("{}", ExperimentConfig::default().to_toml()?),
        Cmd::GenCohort => pipeline::gen_cohort(&cfg, &layout)?,
        Cmd::TrainSim => {
            check_matches_saved(&cfg, &layout)?;
            pipeline::train_sim(&cfg, &layout)?
        }
        Cmd::TrainClf => {
            check_matches_saved(&cfg, &layout)?;
            pipeline::train_clf(&cfg, &layout)?
        }
        Cmd::TrainAgent => {
            check_matches_saved(&cfg, &layout)?;
            pipeline::train_agent(&cfg, &layout)?
        }
        Cmd::Eval => {
            check_matches_saved(&cfg, &layout)?;
            pipeline::eval(&cfg, &layout)?
        }
        Cmd::Report => {
            check_matches_saved(&cfg, &layout)?;
            let r = pipeline::build_report(&cfg, &layout)?;
            Manifest::create(&cfg, &layout)?.save(&layout)?;
            print_summary(&r);
        }
        Cmd::Run => {
            let r = pipeline::run_all(&cfg, &layout)?;
            print_summary(&r);
        }
        Cmd::Verify { metrics } => {
            let path = layout.root().join(metrics);
            manifest::reevaluate(&layout, &path)?;
            let same = std::fs::read(&path)? == std::fs::read(layout.metrics())?;
            println!("artifacts verified; re-evaluated metrics {}", if same { "identical" } else { "DIFFER" });
            ensure!(same, "re-evaluation differs from {}", layout.metrics().display());
        }
        Cmd::Interview(args) => interview(&cfg, &layout, args)?,
    }
    Ok(())
}

fn print_summary(r: &screenbot::report::Report) {
    for c in &r.cells {
        let t = c.constraint.map_or("all".to_string(), |t| t.to_string());
        println!("{:<7} {:>4}  AUC {:.3} ± {:.3}", c.method, t, c.auc.mean, c.auc.std);
    }
    if let Some(rho) = r.trend.spearman {
        println!("RL AUC vs budget: Spearman {rho:.3}");
    }
    if let Some(f) = r.policy.top5_discriminative_mean {
        println!("discriminative share of top-5 in turns 1-5: {f:.2}");
    }
}
