//! End-to-end behaviour that crosses module boundaries: training dynamics,
//! the server alignment step, and the active-learning loop.

use fedalign::al::{
    run_fal, select_coreset, select_energy_source, select_entropy, select_fedal, select_fedalv,
    select_random, FalConfig, SelectorKind,
};
use fedalign::datagen::{generate_domain, make_federation, DatasetConfig, DomainSpec};
use fedalign::energy::{global_optimize, EmaTracker};
use fedalign::fed::{
    evaluate, local_train, run_fdg, Baseline, ClientState, FedConfig, Ledger, ServerState,
};
use fedalign::model::{
    flatten, forward_eval, init_params, LossLambdas, ModelConfig, ModelParams,
};
use fedalign::numcore::{matmul_nt, sgd_step, softmax_nll, Matrix, OptimizerState, Rng, SgdHyper};

fn dataset_config(seed: u64) -> DatasetConfig {
    DatasetConfig {
        num_domains: 4,
        num_classes: 2,
        samples_per_domain: 80,
        input_dim: 4,
        class_radius: 1.0,
        seed,
    }
}

fn specs(noise: f64) -> Vec<DomainSpec> {
    (0..4)
        .map(|i| DomainSpec {
            rotation: std::f64::consts::FRAC_PI_4 * i as f64,
            scale: 1.0,
            shift: vec![0.0; 4],
            noise_std: noise,
        })
        .collect()
}

fn model_config() -> ModelConfig {
    ModelConfig {
        input_dim: 4,
        hidden_dims: vec![],
        latent_dim: 3,
        num_classes: 2,
    }
}

fn fed_config(seed: u64) -> FedConfig {
    FedConfig {
        rounds: 6,
        comm_every: 3,
        local_batch: 32,
        target_batch: 64,
        seed,
        ..FedConfig::default()
    }
}

/// Train the same client twice with identical seeds but different latent-norm
/// penalties; the stronger penalty must shrink the mean latent norm.
#[test]
fn l2_penalty_shrinks_latent_norm() {
    let data_cfg = dataset_config(5);
    let ds = generate_domain(&specs(0.3)[1], &data_cfg, &mut Rng::new(3)).unwrap();
    let model = model_config();
    let global = init_params(&model, &mut Rng::new(7)).unwrap();

    let mean_norm = |lambda_l2: f64| {
        let config = FedConfig {
            lambdas: LossLambdas {
                lambda_l2,
                lambda_cmi: 0.0,
            },
            ..fed_config(11)
        };
        let mut client =
            ClientState::new(0, ds.clone(), global.clone(), config.optimizer, &Rng::new(9), 0.0)
                .unwrap();
        local_train(&mut client, &global, 30, &config).unwrap();
        let trace = forward_eval(&client.params, &ds.features).unwrap();
        let total: f64 = (0..trace.z.rows())
            .map(|i| trace.z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum();
        total / trace.z.rows() as f64
    };

    let loose = mean_norm(0.0);
    let tight = mean_norm(1.0);
    assert!(
        tight < loose,
        "latent norm did not shrink: lambda 1.0 -> {tight}, lambda 0 -> {loose}"
    );
}

/// A linear probe trained on one domain degrades monotonically as the
/// evaluation domain rotates away.
#[test]
fn probe_accuracy_degrades_with_rotation_gap() {
    let data_cfg = DatasetConfig {
        num_domains: 4,
        num_classes: 3,
        samples_per_domain: 300,
        input_dim: 4,
        class_radius: 3.0,
        seed: 40,
    };
    let base = DomainSpec {
        rotation: 0.0,
        scale: 1.0,
        shift: vec![0.0; 4],
        noise_std: 0.3,
    };
    let train = generate_domain(&base, &data_cfg, &mut Rng::new(1)).unwrap();

    // Multinomial logistic probe on raw features, trained with the numcore
    // primitives only.
    let mut weights = Matrix::zeros(3, 4);
    let mut opt = OptimizerState::new(
        SgdHyper {
            learning_rate: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
        },
        12,
    )
    .unwrap();
    for _ in 0..200 {
        let logits = matmul_nt(&train.features, &weights).unwrap();
        let mut grad = Matrix::zeros(3, 4);
        for i in 0..train.len() {
            let (_, dlogits) = softmax_nll(logits.row(i), train.labels[i]).unwrap();
            for (c, d) in dlogits.iter().enumerate() {
                for k in 0..4 {
                    let v = grad.get(c, k) + d * train.features.get(i, k) / train.len() as f64;
                    grad.set(c, k, v);
                }
            }
        }
        let mut flat = fedalign::numcore::ParamVector::from_vec(weights.data().to_vec());
        let gflat = fedalign::numcore::ParamVector::from_vec(grad.data().to_vec());
        sgd_step(&mut flat, &gflat, &mut opt).unwrap();
        weights = Matrix::from_vec(3, 4, flat.into_vec()).unwrap();
    }

    let probe_accuracy = |rotation: f64| {
        let spec = DomainSpec {
            rotation,
            ..base.clone()
        };
        let eval_set = generate_domain(&spec, &data_cfg, &mut Rng::new(2)).unwrap();
        let logits = matmul_nt(&eval_set.features, &weights).unwrap();
        let preds = fedalign::model::predict(&logits);
        preds
            .iter()
            .zip(&eval_set.labels)
            .filter(|(p, y)| p == y)
            .count() as f64
            / eval_set.len() as f64
    };

    let at_zero = probe_accuracy(0.0);
    let at_quarter = probe_accuracy(std::f64::consts::FRAC_PI_4);
    let at_half = probe_accuracy(std::f64::consts::FRAC_PI_2);
    assert!(
        at_zero > at_quarter && at_quarter > at_half,
        "degradation not monotone: {at_zero} / {at_quarter} / {at_half}"
    );
}

/// The server-side alignment step may only move the global parameters.
#[test]
fn global_step_leaves_client_params_untouched() {
    let data_cfg = dataset_config(21);
    let federation = make_federation(&data_cfg, &specs(0.3), 0).unwrap();
    let model = model_config();
    let config = fed_config(23);
    let global = init_params(&model, &mut Rng::new(2)).unwrap();
    let root = Rng::new(config.seed);

    let mut sources: Vec<ClientState> = federation
        .sources
        .iter()
        .enumerate()
        .map(|(k, ds)| {
            ClientState::new(k, ds.clone(), global.clone(), config.optimizer, &root, 0.1).unwrap()
        })
        .collect();
    let mut target =
        ClientState::new(3, federation.target.clone(), global.clone(), config.optimizer, &root, 0.0)
            .unwrap();
    let mut server = ServerState {
        global_params: global.clone(),
        round: 1,
        source_emas: vec![EmaTracker::new(0.9).unwrap(); 3],
    };
    let mut ledger = Ledger::new();

    let before: Vec<_> = sources.iter().map(|c| flatten(&c.params)).collect();
    let target_before = flatten(&target.params);

    // Two passes so the second one has initialized references and can step.
    for _ in 0..2 {
        global_optimize(&mut server, &mut sources, &mut target, &config, &mut ledger).unwrap();
    }
    for (client, b) in sources.iter().zip(&before) {
        assert_eq!(&flatten(&client.params), b);
    }
    assert_eq!(flatten(&target.params), target_before);
    assert!(ledger.server_bound_kinds_allowed());
}

/// With no fea weight or with satisfied hinges the global parameters stay put.
#[test]
fn global_step_noop_cases() {
    let data_cfg = dataset_config(31);
    let federation = make_federation(&data_cfg, &specs(0.3), 1).unwrap();
    let model = model_config();
    let global = init_params(&model, &mut Rng::new(4)).unwrap();

    // lambda_fea = 0: parameters unchanged even with initialized references.
    let config = FedConfig {
        lambda_fea: 0.0,
        ..fed_config(33)
    };
    let root = Rng::new(config.seed);
    let mut sources: Vec<ClientState> = federation
        .sources
        .iter()
        .enumerate()
        .map(|(k, ds)| {
            ClientState::new(k, ds.clone(), global.clone(), config.optimizer, &root, 0.1).unwrap()
        })
        .collect();
    let mut target =
        ClientState::new(3, federation.target.clone(), global.clone(), config.optimizer, &root, 0.0)
            .unwrap();
    let mut server = ServerState {
        global_params: global.clone(),
        round: 1,
        source_emas: vec![EmaTracker::new(0.9).unwrap(); 3],
    };
    let mut ledger = Ledger::new();
    for _ in 0..2 {
        let report =
            global_optimize(&mut server, &mut sources, &mut target, &config, &mut ledger).unwrap();
        assert!(!report.stepped);
    }
    assert_eq!(flatten(&server.global_params), flatten(&global));

    // Hinge satisfied everywhere: seed the references far above any target
    // energy so every pair is inactive.
    let config = fed_config(35);
    let mut server = ServerState {
        global_params: global.clone(),
        round: 1,
        source_emas: vec![EmaTracker::new(0.9).unwrap(); 3],
    };
    for ema in &mut server.source_emas {
        ema.update(1e6).unwrap();
    }
    let report =
        global_optimize(&mut server, &mut sources, &mut target, &config, &mut ledger).unwrap();
    assert_eq!(report.fea_loss, 0.0);
    assert!(report.stepped, "a zero gradient still counts as one step");
    assert_eq!(flatten(&server.global_params), flatten(&global));
}

#[test]
fn selectors_are_deterministic() {
    let data_cfg = dataset_config(41);
    let mut federation = make_federation(&data_cfg, &specs(0.3), 0).unwrap();
    for (k, ds) in federation.sources.iter_mut().enumerate() {
        fedalign::datagen::init_labeled_pool(ds, 0.2, &mut Rng::new(50 + k as u64)).unwrap();
    }
    let model = model_config();
    let params = init_params(&model, &mut Rng::new(6)).unwrap();
    let quotas = [3usize, 3, 3];

    let twice = |f: &dyn Fn() -> fedalign::al::SelectionResult| {
        let a = f();
        let b = f();
        assert_eq!(a, b);
        a
    };
    twice(&|| select_random(&federation.sources, &quotas, &mut Rng::new(77)).unwrap());
    twice(&|| select_entropy(&params, &federation.sources, &quotas).unwrap());
    twice(&|| select_coreset(&params, &federation.sources, &quotas).unwrap());
    twice(&|| select_energy_source(&params, &federation.sources, &quotas).unwrap());
    twice(&|| select_fedal(&params, &federation.sources, &federation.target, 9).unwrap());
    twice(&|| select_fedalv(&params, &federation.sources, &federation.target, 9).unwrap());
}

#[test]
fn zero_budget_campaign_keeps_pools_fixed() {
    let data_cfg = dataset_config(61);
    let federation = make_federation(&data_cfg, &specs(0.3), 2).unwrap();
    let config = FalConfig {
        fed: FedConfig {
            rounds: 2,
            comm_every: 2,
            ..fed_config(63)
        },
        cycles: 3,
        budget: 0,
        initial_fraction: 0.2,
        selector: SelectorKind::Random,
    };
    let run = run_fal(&config, &model_config(), &federation).unwrap();
    let initial = run.initial_labeled;
    for rec in &run.cycles {
        assert_eq!(rec.labeled_total, initial);
        assert!(rec.budgets.iter().all(|&b| b == 0));
        assert!(rec.emd.is_nan());
    }
}

#[test]
fn fal_campaign_is_deterministic() {
    let data_cfg = dataset_config(71);
    let federation = make_federation(&data_cfg, &specs(0.3), 1).unwrap();
    let config = FalConfig {
        fed: FedConfig {
            rounds: 4,
            comm_every: 2,
            ..fed_config(73)
        },
        cycles: 2,
        budget: 6,
        initial_fraction: 0.15,
        selector: SelectorKind::Fedalv,
    };
    let a = run_fal(&config, &model_config(), &federation).unwrap();
    let b = run_fal(&config, &model_config(), &federation).unwrap();
    assert_eq!(a.to_metrics_csv(), b.to_metrics_csv());
    for (ra, rb) in a.cycles.iter().zip(&b.cycles) {
        assert_eq!(ra.selection, rb.selection);
        assert_eq!(flatten(&ra.global_params), flatten(&rb.global_params));
    }
}

/// The degenerate configuration collapses the whole pipeline onto plain
/// weighted averaging, and a trained model beats an untrained one on sources.
#[test]
fn fdg_end_to_end_smoke() {
    let data_cfg = DatasetConfig {
        samples_per_domain: 120,
        ..dataset_config(81)
    };
    let federation = make_federation(&data_cfg, &specs(0.3), 0).unwrap();
    let model = model_config();
    let config = FedConfig {
        rounds: 30,
        comm_every: 5,
        baseline: Baseline::Feda,
        ..fed_config(83)
    };
    let run = run_fdg(&config, &model, &federation).unwrap();
    let trained_acc: f64 = run
        .history
        .comm_rounds
        .last()
        .unwrap()
        .source_val_acc
        .iter()
        .sum::<f64>()
        / 3.0;

    let untrained = init_params(&model, &mut Rng::new(config.seed)).unwrap();
    let untrained_acc = evaluate(&untrained, &federation.sources[0]).unwrap();
    assert!(
        trained_acc > untrained_acc.max(0.6),
        "training did not help: {trained_acc} vs {untrained_acc}"
    );
    assert!(run.server.source_emas.iter().all(|e| e.is_initialized()));
}

/// Aggregated reference parameters round-trip through the wire format used
/// by the clients.
#[test]
fn broadcast_roundtrip_preserves_params() {
    let model = model_config();
    let params = init_params(&model, &mut Rng::new(91)).unwrap();
    let flat = flatten(&params);
    let back: ModelParams = fedalign::model::unflatten(&model, &flat).unwrap();
    assert_eq!(flatten(&back), flat);
}
