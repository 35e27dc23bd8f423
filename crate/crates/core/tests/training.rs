use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use grpfed::data::{synthesize, ClientDataset, FederationSpec, Samples};
use grpfed::fl::{client_update, training_loss, Simulation, StrategyConfig, StrategyKind};
use grpfed::metrics::{macro_f1, ConfusionMatrix};
use grpfed::nn::{argmax_rows, Matrix};

/// Two Gaussian blobs at +-3 along every axis, unit noise.
fn separable(n: usize, dim: usize, seed: u64, id0: u64) -> Samples {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % 2;
        let center = if y == 0 { -3.0 } else { 3.0 };
        for _ in 0..dim {
            data.push(center + noise.sample(&mut rng));
        }
        labels.push(y);
    }
    Samples {
        features: Matrix::from_vec(n, dim, data).unwrap(),
        labels,
        ids: (id0..id0 + n as u64).collect(),
    }
}

fn single_client(kind: StrategyKind) -> (Simulation, ClientDataset) {
    let data = ClientDataset::new(0, separable(200, 4, 1, 0), separable(100, 4, 2, 1000), 2).unwrap();
    let mut cfg = StrategyConfig::new(kind);
    cfg.seed = 3;
    let sim = Simulation::new(cfg, 4, 2, 1).unwrap();
    (sim, data)
}

#[test]
fn single_client_converges_on_separable_data() {
    let (sim, data) = single_client(StrategyKind::FedAvg);
    let mut cfg = sim.config.clone();
    cfg.local_epochs = 1;
    cfg.batch_size = data.train.len();
    let (mut f, mut c) = (sim.server.extractor.clone(), sim.server.classifier.clone());
    let mut history = Vec::new();
    for epoch in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(epoch);
        let update = client_update(&sim.clients[0], &f, &c, &data, 2, &cfg, &mut rng).unwrap();
        f = update.extractor;
        c = update.classifier;
        history.push(training_loss(&f, &c, &data, 2).unwrap());
    }
    for w in history[5..].windows(2) {
        assert!(w[1] < w[0], "loss rose: {} -> {}", w[0], w[1]);
    }
    let logits = c.forward(&f.forward(&data.test.features).unwrap()).unwrap();
    let cm = ConfusionMatrix::from_predictions(2, &data.test.labels, &argmax_rows(&logits)).unwrap();
    assert!(macro_f1(&cm) >= 0.95, "held-out macro-F1 {}", macro_f1(&cm));
}

#[test]
fn zero_learning_rate_returns_inputs() {
    let (_, data) = single_client(StrategyKind::GrpFed);
    // Persistent optimizers take their rate from the simulation config.
    let mut cfg = StrategyConfig::new(StrategyKind::GrpFed);
    cfg.seed = 3;
    cfg.lr = 0.0;
    cfg.local_epochs = 1;
    cfg.batch_size = data.train.len();
    let sim = Simulation::new(cfg.clone(), 4, 2, 1).unwrap();
    let client = &sim.clients[0];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let update = client_update(client, &sim.server.extractor, &sim.server.classifier, &data, 2, &cfg, &mut rng).unwrap();
    assert!(update.extractor.bitwise_eq(&sim.server.extractor));
    assert!(update.classifier.bitwise_eq(&sim.server.classifier));
    assert!(update.state.local_extractor.bitwise_eq(&client.local_extractor));
    assert!(update.state.discriminator.bitwise_eq(&client.discriminator));
    let initial = training_loss(&sim.server.extractor, &sim.server.classifier, &data, 2).unwrap();
    assert!((update.global_loss - initial).abs() < 1e-12);
}

#[test]
fn beta_one_matches_discriminator_free_local_training() {
    let (sim, data) = single_client(StrategyKind::GrpFed);
    let mut with_disc = sim.config.clone();
    with_disc.beta = 1.0;
    let mut without = with_disc.clone();
    without.discriminator = false;
    let run = |cfg: &StrategyConfig| {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        client_update(&sim.clients[0], &sim.server.extractor, &sim.server.classifier, &data, 2, cfg, &mut rng).unwrap()
    };
    let (a, b) = (run(&with_disc), run(&without));
    assert!(a.state.local_extractor.bitwise_eq(&b.state.local_extractor));
    assert!(a.extractor.bitwise_eq(&b.extractor));
    assert_eq!(a.local_loss.unwrap().to_bits(), b.local_loss.unwrap().to_bits());
}

#[test]
fn received_models_are_not_mutated() {
    let (sim, data) = single_client(StrategyKind::GrpFed);
    let before = sim.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let update = client_update(&sim.clients[0], &sim.server.extractor, &sim.server.classifier, &data, 2, &sim.config, &mut rng).unwrap();
    assert!(sim.server.classifier.bitwise_eq(&before.server.classifier));
    assert!(sim.clients[0].discriminator.bitwise_eq(&before.clients[0].discriminator));
    // The client's own copies did move.
    assert!(!update.classifier.bitwise_eq(&sim.server.classifier));
    assert!(!update.state.local_extractor.bitwise_eq(&sim.clients[0].local_extractor));
}

fn small_spec() -> FederationSpec {
    FederationSpec {
        clients: 4,
        classes: 3,
        features: 5,
        base_n: 120,
        seed: 2,
        ..Default::default()
    }
}

fn small_config(kind: StrategyKind) -> StrategyConfig {
    let mut cfg = StrategyConfig::new(kind);
    cfg.seed = 8;
    cfg.rounds = 6;
    cfg.local_epochs = 2;
    cfg
}

#[test]
fn inference_routes_by_owner() {
    let fed = synthesize(&small_spec()).unwrap();
    let mut sim = Simulation::for_federation(small_config(StrategyKind::GrpFed), &fed).unwrap();
    for _ in 0..3 {
        sim.run_round(&fed).unwrap();
    }
    let x = &fed.global_test.features;
    let global = sim.server.classifier.forward(&sim.server.extractor.forward(x).unwrap()).unwrap();
    assert_eq!(sim.scores(x, None).unwrap(), global);
    let local = &sim.clients[1].local_extractor;
    let routed = sim.server.classifier.forward(&local.forward(x).unwrap()).unwrap();
    assert_eq!(sim.scores(x, Some(1)).unwrap(), routed);
    assert_eq!(sim.infer(x, Some(1)).unwrap(), argmax_rows(&routed));
    assert!(sim.infer(x, Some(99)).is_err());
}

#[test]
fn checkpoint_resume_is_bit_exact() {
    let fed = synthesize(&small_spec()).unwrap();
    let cfg = small_config(StrategyKind::GrpFed);
    let mut straight = Simulation::for_federation(cfg.clone(), &fed).unwrap();
    let mut reports = Vec::new();
    for _ in 0..6 {
        reports.push(serde_json::to_string(&straight.run_round(&fed).unwrap()).unwrap());
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    let mut first = Simulation::for_federation(cfg, &fed).unwrap();
    let mut resumed_reports = Vec::new();
    for _ in 0..3 {
        resumed_reports.push(serde_json::to_string(&first.run_round(&fed).unwrap()).unwrap());
    }
    first.save_checkpoint(&path).unwrap();
    let mut second = Simulation::load_checkpoint(&path).unwrap();
    for _ in 0..3 {
        resumed_reports.push(serde_json::to_string(&second.run_round(&fed).unwrap()).unwrap());
    }
    assert_eq!(reports, resumed_reports);
    assert!(second.server.extractor.bitwise_eq(&straight.server.extractor));
    assert_eq!(second.server.q.to_bits(), straight.server.q.to_bits());
    for (a, b) in second.clients.iter().zip(&straight.clients) {
        assert!(a.local_extractor.bitwise_eq(&b.local_extractor));
        assert!(a.discriminator.bitwise_eq(&b.discriminator));
    }
}

#[test]
fn local_only_never_aggregates() {
    let fed = synthesize(&small_spec()).unwrap();
    let mut sim = Simulation::for_federation(small_config(StrategyKind::LocalOnly), &fed).unwrap();
    let initial = sim.server.clone();
    let report = sim.run_round(&fed).unwrap();
    assert!(report.lambdas.is_none() && report.q.is_none());
    assert!(sim.server.extractor.bitwise_eq(&initial.extractor));
    assert!(sim.server.classifier.bitwise_eq(&initial.classifier));
}

#[test]
fn round_report_summaries_are_consistent() {
    let fed = synthesize(&FederationSpec {
        clients: 2,
        classes: 2,
        features: 3,
        base_n: 40,
        rho: 1.0,
        tau: 1.0,
        seed: 1,
        ..Default::default()
    })
    .unwrap();
    let mut cfg = small_config(StrategyKind::QFfl);
    cfg.lr = 0.0;
    cfg.client_fraction = 1.0;
    let mut sim = Simulation::for_federation(cfg, &fed).unwrap();
    let r = sim.run_round(&fed).unwrap();
    let mean = r.losses.iter().sum::<f64>() / r.losses.len() as f64;
    assert_eq!(r.mean_loss.to_bits(), mean.to_bits());
    assert_eq!(r.max_loss, r.losses.iter().copied().fold(f64::MIN, f64::max));
    assert_eq!(r.q, Some(sim.config.q0));
}
