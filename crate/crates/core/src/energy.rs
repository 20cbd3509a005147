//! Energy-based quantities for the global alignment stage: per-sample free
//! energies of the classifier viewed as an EBM (`E(x, y) = -logit_y`), the
//! running per-source energy averages, the free-energy alignment hinge, and
//! the server-side optimisation step that applies it under the privacy
//! policy.

use crate::error::{Error, Result};
use crate::fed::{ClientState, FedConfig, Ledger, Payload, ServerState};
use crate::model::{backward_logits, flatten, forward_eval, predict, unflatten, ForwardTrace};
use crate::numcore::{logsumexp, sgd_step, softmax, Matrix, OptimizerState, SgdHyper};

/// Exponential moving average of a scalar observation stream.
#[derive(Debug, Clone, Copy)]
pub struct EmaTracker {
    value: f64,
    alpha: f64,
    initialized: bool,
}

impl EmaTracker {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::argument(format!("ema alpha {alpha} outside [0, 1)")));
        }
        Ok(EmaTracker {
            value: 0.0,
            alpha,
            initialized: false,
        })
    }

    /// First observation seeds the average; later ones blend in with weight
    /// `1 - alpha`.
    pub fn update(&mut self, observation: f64) -> Result<()> {
        if !observation.is_finite() {
            return Err(Error::NonFinite("ema observation".into()));
        }
        if self.initialized {
            self.value = self.alpha * self.value + (1.0 - self.alpha) * observation;
        } else {
            self.value = observation;
            self.initialized = true;
        }
        Ok(())
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    /// Current average; `None` before the first observation.
    pub fn value(&self) -> Option<f64> {
        self.initialized.then_some(self.value)
    }
}

/// Per-sample free energies of one batch plus their mean.
#[derive(Debug, Clone)]
pub struct EnergyReport {
    pub per_sample: Vec<f64>,
    pub mean: f64,
}

/// Free energy of one sample: `F(x) = -log sum_y exp(logit_y)`.
pub fn free_energy(logits: &[f64]) -> Result<f64> {
    Ok(-logsumexp(logits)?)
}

/// Free energies for every row of a forward trace.
pub fn batch_free_energy(trace: &ForwardTrace) -> Result<EnergyReport> {
    let n = trace.logits.rows();
    if n == 0 {
        return Err(Error::argument("free energy of an empty batch"));
    }
    let per_sample: Vec<f64> = (0..n)
        .map(|i| free_energy(trace.logits.row(i)))
        .collect::<Result<_>>()?;
    let mean = per_sample.iter().sum::<f64>() / n as f64;
    Ok(EnergyReport { per_sample, mean })
}

/// Cross-entropy decomposed into its energy terms:
/// `(E(x, y), F(x), E - F)`. The third component equals `softmax_nll` exactly.
pub fn nll_energy_identity(logits: &[f64], label: usize) -> Result<(f64, f64, f64)> {
    if label >= logits.len() {
        return Err(Error::argument(format!(
            "label {label} out of range for {} logits",
            logits.len()
        )));
    }
    let e_term = -logits[label];
    let f_term = free_energy(logits)?;
    Ok((e_term, f_term, e_term - f_term))
}

/// Free-energy alignment hinge, averaged over target samples and source
/// references:
/// `loss = mean_{t,k} max(0, F_t - ema_k)`.
///
/// The source averages are running statistics, treated as constants, so the
/// only gradient is `d loss / d F_t = #{k : F_t > ema_k} / (n K)`.
pub fn fea_loss(target_f: &[f64], source_emas: &[f64]) -> Result<(f64, Vec<f64>)> {
    if target_f.is_empty() {
        return Err(Error::argument("fea_loss needs a nonempty target batch"));
    }
    if source_emas.is_empty() {
        return Err(Error::state("fea_loss needs at least one initialized source ema"));
    }
    let n = target_f.len();
    let k = source_emas.len();
    let scale = 1.0 / (n * k) as f64;
    let mut loss = 0.0;
    let mut d_target = vec![0.0; n];
    for (t, &ft) in target_f.iter().enumerate() {
        for &ema in source_emas {
            let margin = ft - ema;
            if margin > 0.0 {
                loss += margin * scale;
                d_target[t] += scale;
            }
        }
    }
    Ok((loss, d_target))
}

/// Outcome of one server-side alignment step.
#[derive(Debug, Clone)]
pub struct GlobalStepReport {
    pub target_mean_f: f64,
    pub source_mean_f: Vec<f64>,
    pub fea_loss: f64,
    /// Whether the global parameters were actually updated.
    pub stepped: bool,
}

/// One communication-round alignment pass:
/// the target client evaluates free energies and the hinge gradient against
/// the current source references and uploads them; each source client uploads
/// its batch-mean free energy which refreshes the server's running average;
/// the server then takes one SGD step on the scaled hinge gradient.
///
/// Only the global parameters move; clients' local parameters are untouched.
/// Raw features never cross the boundary: the exchange is parameters out,
/// energies/gradients/predictions in.
pub fn global_optimize(
    server: &mut ServerState,
    sources: &mut [ClientState],
    target: &mut ClientState,
    config: &FedConfig,
    ledger: &mut Ledger,
) -> Result<GlobalStepReport> {
    let unlabeled = target.dataset.unlabeled_indices();
    if unlabeled.is_empty() {
        return Err(Error::config("target client has no unlabeled data"));
    }
    let global_flat = flatten(&server.global_params);

    // (1) Target side: energies, predictions, and the hinge gradient against
    // the current (pre-refresh) source references.
    let sent = ledger.server_to_client(target.id, Payload::ParamVector(global_flat.clone()));
    let Payload::ParamVector(target_params_flat) = sent else { unreachable!() };
    let target_params = unflatten(&server.global_params.config, &target_params_flat)?;

    let emas: Vec<f64> = server
        .source_emas
        .iter()
        .filter_map(|e| e.value())
        .collect();
    ledger.server_to_client(target.id, Payload::EnergyScalars(emas.clone()));

    let batch = {
        let k = config.target_batch.min(unlabeled.len());
        let picks = target.energy_rng.sample_without_replacement(unlabeled.len(), k);
        picks.into_iter().map(|i| unlabeled[i]).collect::<Vec<_>>()
    };
    let x_t = target.dataset.features.select_rows(&batch);
    let trace = forward_eval(&target_params, &x_t)?;
    let energy = batch_free_energy(&trace)?;
    ledger.client_to_server(target.id, Payload::EnergyScalars(energy.per_sample.clone()));
    ledger.client_to_server(target.id, Payload::ClassPredictions(predict(&trace.logits)));

    let mut hinge_loss = 0.0;
    let mut hinge_grad = None;
    if config.lambda_fea > 0.0 && !emas.is_empty() {
        let (loss, d_f) = fea_loss(&energy.per_sample, &emas)?;
        hinge_loss = loss;
        // dF/dlogits = -softmax(logits), scaled by the hinge weight per row.
        let mut dlogits = Matrix::zeros(trace.logits.rows(), trace.logits.cols());
        for (i, &w) in d_f.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let sm = softmax(trace.logits.row(i));
            for (d, p) in dlogits.row_mut(i).iter_mut().zip(sm) {
                *d = -w * p;
            }
        }
        let grad = backward_logits(&target_params, &trace, &dlogits)?;
        let sent = ledger.client_to_server(target.id, Payload::GradVector(grad));
        let Payload::GradVector(grad) = sent else { unreachable!() };
        hinge_grad = Some(grad);
    }

    // (2) Source side: batch-mean free energies refresh the running averages.
    let mut source_mean_f = Vec::with_capacity(sources.len());
    for (k, client) in sources.iter_mut().enumerate() {
        ledger.server_to_client(client.id, Payload::ParamVector(global_flat.clone()));
        let pool = client.energy_pool();
        if pool.is_empty() {
            return Err(Error::config(format!(
                "source client {} has no rows for energy estimation",
                client.id
            )));
        }
        let b = config.local_batch.min(pool.len());
        let picks = client.energy_rng.sample_without_replacement(pool.len(), b);
        let rows: Vec<usize> = picks.into_iter().map(|i| pool[i]).collect();
        let x_k = client.dataset.features.select_rows(&rows);
        let trace_k = forward_eval(&server.global_params, &x_k)?;
        let report = batch_free_energy(&trace_k)?;
        let sent = ledger.client_to_server(client.id, Payload::EnergyScalars(vec![report.mean]));
        let Payload::EnergyScalars(scalars) = sent else { unreachable!() };
        server.source_emas[k].update(scalars[0])?;
        source_mean_f.push(report.mean);
    }

    // (3) One SGD step on the scaled hinge gradient. Fresh velocity and no
    // weight decay: with an inactive hinge the parameters must not move.
    let mut stepped = false;
    if let Some(mut grad) = hinge_grad {
        grad.scale(config.lambda_fea);
        let mut flat = global_flat;
        let mut opt = OptimizerState::new(
            SgdHyper {
                weight_decay: 0.0,
                ..config.optimizer
            },
            flat.len(),
        )?;
        sgd_step(&mut flat, &grad, &mut opt)?;
        server.global_params = unflatten(&server.global_params.config.clone(), &flat)?;
        stepped = true;
    }

    Ok(GlobalStepReport {
        target_mean_f: energy.mean,
        source_mean_f,
        fea_loss: hinge_loss,
        stepped,
    })
}
