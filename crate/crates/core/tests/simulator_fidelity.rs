use screenbot_core::catalog::QuestionCatalog;
use screenbot_core::cohort::{generate_cohort, generate_transcripts, CohortSpec, Transcript};
use screenbot_core::simulator::{fit_user_simulator, leave_one_out_mse, SimulatorConfig};

fn user_transcripts(sigma_noise: f64, seed: u64) -> (QuestionCatalog, CohortSpec, Vec<Transcript>) {
    let catalog = QuestionCatalog::synthetic(20).unwrap();
    let spec = CohortSpec {
        n_users: 2,
        embedding_dim: 16,
        discriminative_ids: vec![1, 2],
        delta: 1.0,
        sigma_noise,
        conversations_per_user: 4,
        turns_min: 40,
        turns_max: 60,
        ..CohortSpec::default()
    };
    let cohort = generate_cohort(&spec, &catalog, seed).unwrap();
    let transcripts = generate_transcripts(&cohort, &spec, &catalog, seed).unwrap();
    (catalog, spec, transcripts.into_iter().filter(|t| t.user_id == 0).collect())
}

#[test]
fn noiseless_user_is_reproduced() {
    let (catalog, _, ts) = user_transcripts(0.0, 5);
    let refs: Vec<&Transcript> = ts.iter().collect();
    let cfg = SimulatorConfig::default();
    let model = fit_user_simulator(0, &refs, catalog.len(), &cfg).unwrap();
    let mse = model.turn_mse(ts.iter()).unwrap().unwrap();
    assert!(mse < 1e-4, "training MSE {mse}");
    let loo = leave_one_out_mse(0, &refs, catalog.len(), &cfg).unwrap().unwrap();
    assert!(loo.mse < 1e-3, "LOO MSE {}", loo.mse);
}

#[test]
fn noisy_user_sits_near_the_noise_floor() {
    let sigma = 0.5;
    let (catalog, _, ts) = user_transcripts(sigma, 11);
    let refs: Vec<&Transcript> = ts.iter().collect();
    let loo = leave_one_out_mse(0, &refs, catalog.len(), &SimulatorConfig::default()).unwrap().unwrap();
    let floor = sigma * sigma;
    assert!(loo.mse <= 2.0 * floor, "LOO {} vs floor {floor}", loo.mse);
    // Below the floor would mean the held-out noise leaked into training.
    assert!(loo.mse >= 0.85 * floor, "LOO {} vs floor {floor}", loo.mse);
}
