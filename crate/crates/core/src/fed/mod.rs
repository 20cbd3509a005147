//! The federated training loop: parallel local client optimisation,
//! size-weighted server aggregation, the communication-round schedule, and
//! the typed message boundary with its privacy ledger.

mod message;

pub use message::{Direction, Ledger, MessageKind, MessageRecord, Payload};

use crate::datagen::{ClientDataset, FederationSplit};
use crate::energy::{global_optimize, EmaTracker};
use crate::error::{Error, Result};
use crate::model::{
    client_loss, flatten, forward_eval, forward_train, init_params, predict, unflatten,
    LossLambdas, ModelConfig, ModelParams,
};
use crate::numcore::{sgd_step, OptimizerState, ParamVector, Rng, SgdHyper};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Which pipeline the run uses: plain weighted averaging, or averaging plus
/// the server-side energy alignment step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    FedAvg,
    Feda,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FedConfig {
    /// Total local epochs ("rounds"); communication happens every
    /// `comm_every` of them, with a trailing partial period still aggregated.
    pub rounds: usize,
    pub comm_every: usize,
    pub local_batch: usize,
    pub target_batch: usize,
    pub lambdas: LossLambdas,
    pub lambda_fea: f64,
    pub ema_alpha: f64,
    pub optimizer: SgdHyper,
    /// Fraction of each source held out for validation metrics.
    pub val_fraction: f64,
    pub baseline: Baseline,
    /// Worker threads for client training; 1 = sequential reference mode.
    pub threads: usize,
    pub seed: u64,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            rounds: 100,
            comm_every: 5,
            local_batch: 64,
            target_batch: 256,
            lambdas: LossLambdas {
                lambda_l2: 0.01,
                lambda_cmi: 0.001,
            },
            lambda_fea: 0.1,
            ema_alpha: 0.9,
            optimizer: SgdHyper::default(),
            val_fraction: 0.1,
            baseline: Baseline::Feda,
            threads: 1,
            seed: 0,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.comm_every == 0 {
            return Err(Error::config("comm_every must be >= 1"));
        }
        if self.local_batch == 0 || self.target_batch == 0 {
            return Err(Error::config("batch sizes must be >= 1"));
        }
        if self.lambda_fea < 0.0 {
            return Err(Error::config("lambda_fea must be nonnegative"));
        }
        if !(0.0..1.0).contains(&self.ema_alpha) {
            return Err(Error::config("ema_alpha must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config("val_fraction must be in [0, 1)"));
        }
        if self.threads == 0 {
            return Err(Error::config("threads must be >= 1"));
        }
        self.lambdas.validate()
    }
}

/// One participant's run-scoped state. Clients own disjoint rng streams, so
/// scheduling cannot change results.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub dataset: ClientDataset,
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub train_rng: Rng,
    pub energy_rng: Rng,
    /// Rows eligible for local training (labeled subset thereof is used).
    pub train_indices: Vec<usize>,
    /// Rows held out for validation metrics; empty for the target.
    pub val_indices: Vec<usize>,
}

impl ClientState {
    pub fn new(
        id: usize,
        dataset: ClientDataset,
        params: ModelParams,
        hyper: SgdHyper,
        rng_root: &Rng,
        val_fraction: f64,
    ) -> Result<Self> {
        let n = dataset.len();
        let client_root = rng_root.split(100 + id as u64);
        let train_rng = client_root.split(0);
        let energy_rng = client_root.split(1);
        let mut split_rng = client_root.split(2);

        let mut order: Vec<usize> = (0..n).collect();
        split_rng.shuffle(&mut order);
        let val_count = (val_fraction * n as f64).round() as usize;
        let mut val_indices = order.split_off(n - val_count);
        let mut train_indices = order;
        train_indices.sort_unstable();
        val_indices.sort_unstable();

        let param_len = flatten(&params).len();
        Ok(ClientState {
            id,
            dataset,
            params,
            optimizer: OptimizerState::new(hyper, param_len)?,
            train_rng,
            energy_rng,
            train_indices,
            val_indices,
        })
    }

    /// Labeled rows the client actually trains on.
    pub fn labeled_train_indices(&self) -> Vec<usize> {
        self.train_indices
            .iter()
            .copied()
            .filter(|&i| self.dataset.labeled_mask[i])
            .collect()
    }

    /// Rows used for free-energy estimation: the held-out validation rows
    /// when a split exists, otherwise the whole dataset.
    pub fn energy_pool(&self) -> Vec<usize> {
        if self.val_indices.is_empty() {
            (0..self.dataset.len()).collect()
        } else {
            self.val_indices.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServerState {
    pub global_params: ModelParams,
    pub round: usize,
    pub source_emas: Vec<EmaTracker>,
}

/// Metrics captured at one communication round, after aggregation and the
/// global step. Energy statistics are measured before the step.
#[derive(Debug, Clone)]
pub struct CommRoundRecord {
    pub round: usize,
    pub source_val_acc: Vec<f64>,
    pub target_acc: f64,
    pub target_mean_f: Option<f64>,
    pub source_mean_f: Vec<f64>,
    pub fea_loss: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct FdgHistory {
    pub comm_rounds: Vec<CommRoundRecord>,
}

impl FdgHistory {
    /// `round,client_or_target,split,accuracy` with one row per source
    /// validation accuracy and one target row per communication round.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,client_or_target,split,accuracy\n");
        for rec in &self.comm_rounds {
            for (k, acc) in rec.source_val_acc.iter().enumerate() {
                out.push_str(&format!("{},client_{k},val,{acc}\n", rec.round));
            }
            out.push_str(&format!("{},target,test,{}\n", rec.round, rec.target_acc));
        }
        out
    }

    pub fn final_target_accuracy(&self) -> Option<f64> {
        self.comm_rounds.last().map(|r| r.target_acc)
    }
}

/// Everything a finished federated run returns.
#[derive(Debug)]
pub struct FdgRun {
    pub server: ServerState,
    pub history: FdgHistory,
    pub ledger: Ledger,
}

/// Dataset-size-weighted parameter average: `sum_k (n_k / sum n) p_k`.
pub fn aggregate(param_vectors: &[ParamVector], sizes: &[usize]) -> Result<ParamVector> {
    if param_vectors.is_empty() {
        return Err(Error::argument("aggregate of an empty client list"));
    }
    if param_vectors.len() != sizes.len() {
        return Err(Error::argument(format!(
            "{} parameter vectors but {} sizes",
            param_vectors.len(),
            sizes.len()
        )));
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::argument("aggregation weights require positive sizes"));
    }
    let len = param_vectors[0].len();
    if param_vectors.iter().any(|p| p.len() != len) {
        return Err(Error::argument("parameter vectors have differing lengths"));
    }
    let total: f64 = sizes.iter().map(|&s| s as f64).sum();
    let mut out = ParamVector::zeros(len);
    for (p, &s) in param_vectors.iter().zip(sizes) {
        out.axpy(s as f64 / total, p)?;
    }
    Ok(out)
}

/// Fraction of rows whose argmax prediction matches the label.
pub fn evaluate(params: &ModelParams, dataset: &ClientDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::argument("evaluate on an empty dataset"));
    }
    let trace = forward_eval(params, &dataset.features)?;
    let preds = predict(&trace.logits);
    let hits = preds
        .iter()
        .zip(&dataset.labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / dataset.len() as f64)
}

/// Accuracy restricted to the given rows.
pub fn evaluate_on(params: &ModelParams, dataset: &ClientDataset, rows: &[usize]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::argument("evaluate_on with no rows"));
    }
    let x = dataset.features.select_rows(rows);
    let trace = forward_eval(params, &x)?;
    let preds = predict(&trace.logits);
    let hits = preds
        .iter()
        .enumerate()
        .filter(|(i, p)| **p == dataset.labels[rows[*i]])
        .count();
    Ok(hits as f64 / rows.len() as f64)
}

/// Local optimisation for one communication period: adopt the broadcast
/// parameters, reset momentum, then run `epochs` passes of shuffled
/// mini-batch SGD over the labeled training rows.
pub fn local_train(
    client: &mut ClientState,
    global_params: &ModelParams,
    epochs: usize,
    config: &FedConfig,
) -> Result<()> {
    let labeled = client.labeled_train_indices();
    if labeled.is_empty() {
        return Err(Error::config(format!(
            "client {} has no labeled training samples",
            client.id
        )));
    }
    client.params = global_params.clone();
    client.optimizer.reset_velocity();
    let mut order = labeled;
    for _ in 0..epochs {
        client.train_rng.shuffle(&mut order);
        for chunk in order.chunks(config.local_batch) {
            let x = client.dataset.features.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| client.dataset.labels[i]).collect();
            let trace = forward_train(&client.params, &x, &mut client.train_rng)?;
            let out = client_loss(&client.params, &trace, &y, &config.lambdas)?;
            let mut flat = flatten(&client.params);
            sgd_step(&mut flat, &out.grads, &mut client.optimizer)?;
            client.params = unflatten(&client.params.config.clone(), &flat)?;
        }
    }
    Ok(())
}

fn train_all(
    clients: &mut [ClientState],
    global_params: &ModelParams,
    epochs: usize,
    config: &FedConfig,
    pool: Option<&rayon::ThreadPool>,
) -> Result<()> {
    match pool {
        Some(pool) => pool.install(|| {
            clients
                .par_iter_mut()
                .try_for_each(|c| local_train(c, global_params, epochs, config))
        }),
        None => clients
            .iter_mut()
            .try_for_each(|c| local_train(c, global_params, epochs, config)),
    }
}

/// Run the full federated domain-generalisation loop on one split.
pub fn run_fdg(
    config: &FedConfig,
    model_config: &ModelConfig,
    federation: &FederationSplit,
) -> Result<FdgRun> {
    config.validate()?;
    model_config.validate()?;
    if federation.sources.is_empty() {
        return Err(Error::config("federation has no source clients"));
    }

    let root = Rng::new(config.seed);
    let mut init_rng = root.split(0);
    let global_params = init_params(model_config, &mut init_rng)?;

    let mut sources: Vec<ClientState> = federation
        .sources
        .iter()
        .enumerate()
        .map(|(k, ds)| {
            ClientState::new(
                k,
                ds.clone(),
                global_params.clone(),
                config.optimizer,
                &root,
                config.val_fraction,
            )
        })
        .collect::<Result<_>>()?;
    let mut target = ClientState::new(
        sources.len(),
        federation.target.clone(),
        global_params.clone(),
        config.optimizer,
        &root,
        0.0,
    )?;

    let mut server = ServerState {
        global_params,
        round: 0,
        source_emas: vec![EmaTracker::new(config.ema_alpha)?; sources.len()],
    };
    let mut ledger = Ledger::new();
    let mut history = FdgHistory::default();

    let pool = if config.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .map_err(|e| Error::config(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    let mut round = 0;
    while round < config.rounds {
        let epochs = config.comm_every.min(config.rounds - round);
        train_all(&mut sources, &server.global_params, epochs, config, pool.as_ref())?;
        round += epochs;
        server.round = round;

        // Communication round: uploads, weighted aggregation.
        let mut vectors = Vec::with_capacity(sources.len());
        let mut sizes = Vec::with_capacity(sources.len());
        for client in &sources {
            let sent =
                ledger.client_to_server(client.id, Payload::ParamVector(flatten(&client.params)));
            let Payload::ParamVector(flat) = sent else { unreachable!() };
            let sent = ledger.client_to_server(
                client.id,
                Payload::DatasetSize(client.train_indices.len()),
            );
            let Payload::DatasetSize(size) = sent else { unreachable!() };
            vectors.push(flat);
            sizes.push(size);
        }
        let aggregated = aggregate(&vectors, &sizes)?;
        server.global_params = unflatten(model_config, &aggregated)?;

        // Server-side alignment step (skipped entirely for plain averaging).
        let step_report = if config.baseline == Baseline::Feda {
            Some(global_optimize(
                &mut server,
                &mut sources,
                &mut target,
                config,
                &mut ledger,
            )?)
        } else {
            None
        };

        // Broadcast the refreshed global model.
        let broadcast = flatten(&server.global_params);
        for client in &sources {
            ledger.server_to_client(client.id, Payload::ParamVector(broadcast.clone()));
        }
        ledger.server_to_client(target.id, Payload::ParamVector(broadcast));

        let source_val_acc = sources
            .iter()
            .map(|c| evaluate_on(&server.global_params, &c.dataset, &c.val_indices))
            .collect::<Result<Vec<f64>>>()?;
        let target_acc = evaluate(&server.global_params, &target.dataset)?;
        history.comm_rounds.push(CommRoundRecord {
            round,
            source_val_acc,
            target_acc,
            target_mean_f: step_report.as_ref().map(|r| r.target_mean_f),
            source_mean_f: step_report
                .as_ref()
                .map(|r| r.source_mean_f.clone())
                .unwrap_or_default(),
            fea_loss: step_report.as_ref().map(|r| r.fea_loss),
        });
    }

    debug_assert!(ledger.server_bound_kinds_allowed());
    Ok(FdgRun {
        server,
        history,
        ledger,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_domain, make_federation, DatasetConfig, DomainSpec};
    use crate::numcore::Matrix;

    fn small_dataset_config(seed: u64) -> DatasetConfig {
        DatasetConfig {
            num_domains: 3,
            num_classes: 3,
            samples_per_domain: 60,
            input_dim: 4,
            class_radius: 3.0,
            seed,
        }
    }

    fn specs(n: usize) -> Vec<DomainSpec> {
        (0..n)
            .map(|i| DomainSpec {
                rotation: 0.4 * i as f64,
                scale: 1.0,
                shift: vec![0.0; 4],
                noise_std: 0.3,
            })
            .collect()
    }

    fn small_model() -> ModelConfig {
        ModelConfig {
            input_dim: 4,
            hidden_dims: vec![8],
            latent_dim: 4,
            num_classes: 3,
        }
    }

    fn fast_config(seed: u64) -> FedConfig {
        FedConfig {
            rounds: 4,
            comm_every: 2,
            local_batch: 16,
            target_batch: 32,
            seed,
            ..FedConfig::default()
        }
    }

    #[test]
    fn aggregate_weighted_example() {
        let p1 = ParamVector::from_vec(vec![1.0, 3.0]);
        let p2 = ParamVector::from_vec(vec![5.0, 7.0]);
        let out = aggregate(&[p1, p2], &[1, 3]).unwrap();
        assert_eq!(out.values(), &[4.0, 6.0]);
    }

    #[test]
    fn aggregate_single_client_is_identity() {
        let p = ParamVector::from_vec(vec![0.25, -1.5, 9.0]);
        let out = aggregate(std::slice::from_ref(&p), &[7]).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn aggregate_equal_sizes_matches_mean_oracle() {
        let mut rng = Rng::new(3);
        let vs: Vec<ParamVector> = (0..4)
            .map(|_| ParamVector::from_vec((0..6).map(|_| rng.uniform_in(-2.0, 2.0)).collect()))
            .collect();
        let out = aggregate(&vs, &[5, 5, 5, 5]).unwrap();
        for i in 0..6 {
            let mean: f64 = vs.iter().map(|v| v[i]).sum::<f64>() / 4.0;
            assert!((out[i] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_rejects_bad_input() {
        assert!(aggregate(&[], &[]).is_err());
        let p = ParamVector::zeros(2);
        assert!(aggregate(std::slice::from_ref(&p), &[0]).is_err());
        assert!(aggregate(&[p.clone(), ParamVector::zeros(3)], &[1, 1]).is_err());
        assert!(aggregate(std::slice::from_ref(&p), &[1, 2]).is_err());
    }

    #[test]
    fn aggregation_weights_sum_to_one() {
        let sizes = [3usize, 11, 29];
        let total: f64 = sizes.iter().map(|&s| s as f64).sum();
        let sum: f64 = sizes.iter().map(|&s| s as f64 / total).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_constant_predictor_on_single_class() {
        let model = small_model();
        let params = init_params(&model, &mut Rng::new(1)).unwrap();
        let ds = ClientDataset {
            features: Matrix::zeros(10, 4),
            labels: vec![predict(&forward_eval(&params, &Matrix::zeros(1, 4)).unwrap().logits)[0]; 10],
            labeled_mask: vec![true; 10],
        };
        assert_eq!(evaluate(&params, &ds).unwrap(), 1.0);
    }

    #[test]
    fn evaluate_random_binary_labels_near_half() {
        let model = ModelConfig {
            input_dim: 4,
            hidden_dims: vec![6],
            latent_dim: 3,
            num_classes: 2,
        };
        let params = init_params(&model, &mut Rng::new(5)).unwrap();
        let n = 4000;
        let mut rng = Rng::new(9);
        let data: Vec<f64> = (0..n * 4).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
        let ds = ClientDataset {
            features: Matrix::from_vec(n, 4, data).unwrap(),
            labels: (0..n).map(|_| rng.gen_range(2)).collect(),
            labeled_mask: vec![true; n],
        };
        let acc = evaluate(&params, &ds).unwrap();
        let bound = 3.0 / (n as f64).sqrt();
        assert!((acc - 0.5).abs() < bound, "acc {acc}, bound {bound}");
    }

    #[test]
    fn evaluate_invariant_to_constant_logit_shift() {
        let model = small_model();
        let mut params = init_params(&model, &mut Rng::new(1)).unwrap();
        let config = small_dataset_config(2);
        let ds = generate_domain(
            &specs(3)[0],
            &config,
            &mut Rng::new(4),
        )
        .unwrap();
        let base = evaluate(&params, &ds).unwrap();
        for b in params.classifier.b.iter_mut() {
            *b += 11.5;
        }
        assert_eq!(evaluate(&params, &ds).unwrap(), base);
    }

    #[test]
    fn local_train_zero_epochs_is_noop() {
        let model = small_model();
        let config = fast_config(7);
        let data_cfg = small_dataset_config(7);
        let ds = generate_domain(&specs(1)[0], &data_cfg, &mut Rng::new(2)).unwrap();
        let global = init_params(&model, &mut Rng::new(3)).unwrap();
        let mut client = ClientState::new(0, ds, global.clone(), config.optimizer, &Rng::new(1), 0.1).unwrap();
        local_train(&mut client, &global, 0, &config).unwrap();
        assert_eq!(flatten(&client.params), flatten(&global));
    }

    #[test]
    fn local_train_first_step_decreases_loss_on_separable_data() {
        // Two well-separated clusters, full-batch step, small lr.
        let model = ModelConfig {
            input_dim: 2,
            hidden_dims: vec![4],
            latent_dim: 2,
            num_classes: 2,
        };
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..16 {
            let c = i % 2;
            let sign = if c == 0 { -1.0 } else { 1.0 };
            features.push(vec![3.0 * sign + 0.01 * i as f64, -3.0 * sign]);
            labels.push(c);
        }
        let ds = ClientDataset {
            features: Matrix::from_rows(&features).unwrap(),
            labels: labels.clone(),
            labeled_mask: vec![true; 16],
        };
        let config = FedConfig {
            local_batch: 16,
            optimizer: SgdHyper {
                learning_rate: 0.05,
                momentum: 0.0,
                weight_decay: 0.0,
            },
            lambdas: LossLambdas {
                lambda_l2: 0.0,
                lambda_cmi: 0.0,
            },
            ..fast_config(1)
        };
        let global = init_params(&model, &mut Rng::new(5)).unwrap();
        let mut client =
            ClientState::new(0, ds.clone(), global.clone(), config.optimizer, &Rng::new(2), 0.0)
                .unwrap();

        let loss_of = |params: &ModelParams, seed: u64| {
            let trace = forward_train(params, &ds.features, &mut Rng::new(seed)).unwrap();
            client_loss(params, &trace, &labels, &config.lambdas)
                .unwrap()
                .total
        };
        let before = loss_of(&global, 42);
        local_train(&mut client, &global, 1, &config).unwrap();
        let after = loss_of(&client.params, 42);
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn identical_clients_produce_identical_params() {
        let model = small_model();
        let config = fast_config(9);
        let data_cfg = small_dataset_config(9);
        let ds = generate_domain(&specs(1)[0], &data_cfg, &mut Rng::new(2)).unwrap();
        let global = init_params(&model, &mut Rng::new(3)).unwrap();
        // Same id so the derived rng streams coincide.
        let mut a = ClientState::new(0, ds.clone(), global.clone(), config.optimizer, &Rng::new(4), 0.1).unwrap();
        let mut b = ClientState::new(0, ds, global.clone(), config.optimizer, &Rng::new(4), 0.1).unwrap();
        local_train(&mut a, &global, 3, &config).unwrap();
        local_train(&mut b, &global, 3, &config).unwrap();
        assert_eq!(flatten(&a.params).values(), flatten(&b.params).values());
    }

    #[test]
    fn local_train_requires_labeled_data() {
        let model = small_model();
        let config = fast_config(9);
        let data_cfg = small_dataset_config(9);
        let mut ds = generate_domain(&specs(1)[0], &data_cfg, &mut Rng::new(2)).unwrap();
        ds.labeled_mask = vec![false; ds.len()];
        let global = init_params(&model, &mut Rng::new(3)).unwrap();
        let mut client = ClientState::new(0, ds, global.clone(), config.optimizer, &Rng::new(4), 0.1).unwrap();
        assert!(matches!(
            local_train(&mut client, &global, 1, &config),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_lambdas_match_fedavg_reference_path() {
        let data_cfg = small_dataset_config(11);
        let federation = make_federation(&data_cfg, &specs(3), 0).unwrap();
        let model = small_model();
        let feda_zero = FedConfig {
            lambdas: LossLambdas {
                lambda_l2: 0.0,
                lambda_cmi: 0.0,
            },
            lambda_fea: 0.0,
            baseline: Baseline::Feda,
            ..fast_config(21)
        };
        let fedavg = FedConfig {
            baseline: Baseline::FedAvg,
            ..feda_zero.clone()
        };
        let a = run_fdg(&feda_zero, &model, &federation).unwrap();
        let b = run_fdg(&fedavg, &model, &federation).unwrap();
        assert_eq!(
            flatten(&a.server.global_params).values(),
            flatten(&b.server.global_params).values()
        );
        // The alignment exchange happens only in the feda path.
        assert!(a.ledger.records().len() > b.ledger.records().len());
    }

    #[test]
    fn ledger_kinds_stay_in_allowed_set() {
        let data_cfg = small_dataset_config(13);
        let federation = make_federation(&data_cfg, &specs(3), 1).unwrap();
        let run = run_fdg(&fast_config(31), &small_model(), &federation).unwrap();
        assert!(run.ledger.server_bound_kinds_allowed());
        assert!(!run.ledger.records().is_empty());
    }

    #[test]
    fn one_period_run_has_one_aggregation() {
        let data_cfg = small_dataset_config(15);
        let federation = make_federation(&data_cfg, &specs(3), 2).unwrap();
        let config = FedConfig {
            rounds: 2,
            comm_every: 2,
            ..fast_config(41)
        };
        let run = run_fdg(&config, &small_model(), &federation).unwrap();
        assert_eq!(run.history.comm_rounds.len(), 1);
        assert_eq!(run.history.comm_rounds[0].round, 2);
    }

    #[test]
    fn trailing_partial_period_still_aggregates() {
        let data_cfg = small_dataset_config(15);
        let federation = make_federation(&data_cfg, &specs(3), 2).unwrap();
        let config = FedConfig {
            rounds: 5,
            comm_every: 2,
            ..fast_config(43)
        };
        let run = run_fdg(&config, &small_model(), &federation).unwrap();
        let rounds: Vec<usize> = run.history.comm_rounds.iter().map(|r| r.round).collect();
        assert_eq!(rounds, vec![2, 4, 5]);
    }

    #[test]
    fn parallel_and_sequential_runs_are_bitwise_identical() {
        let data_cfg = small_dataset_config(17);
        let federation = make_federation(&data_cfg, &specs(3), 0).unwrap();
        let seq = fast_config(51);
        let par = FedConfig {
            threads: 4,
            ..seq.clone()
        };
        let a = run_fdg(&seq, &small_model(), &federation).unwrap();
        let b = run_fdg(&par, &small_model(), &federation).unwrap();
        assert_eq!(
            flatten(&a.server.global_params).values(),
            flatten(&b.server.global_params).values()
        );
        assert_eq!(a.history.to_csv(), b.history.to_csv());
    }

    #[test]
    fn history_csv_schema() {
        let data_cfg = small_dataset_config(19);
        let federation = make_federation(&data_cfg, &specs(3), 0).unwrap();
        let run = run_fdg(&fast_config(61), &small_model(), &federation).unwrap();
        let csv = run.history.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("round,client_or_target,split,accuracy"));
        let first = lines.next().unwrap();
        assert!(first.starts_with("2,client_0,val,"), "{first}");
        assert!(csv.lines().any(|l| l.contains(",target,test,")));
    }
}
