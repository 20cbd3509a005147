//! Runtime check battery behind the `verify` subcommand: gradient oracles for
//! every loss path, the energy/cross-entropy identity, aggregation exactness,
//! hinge and EMA laws, and the earth-mover metric checks.

use fedalign::al::emd;
use fedalign::energy::{fea_loss, nll_energy_identity, EmaTracker};
use fedalign::fed::aggregate;
use fedalign::model::{
    backward_logits, client_loss, flatten, forward_eval, forward_train, init_params, unflatten,
    LossLambdas, ModelConfig,
};
use fedalign::numcore::{
    grad_check, logsumexp, softmax, softmax_nll, Matrix, ParamVector, Rng,
};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("{status} {} ({})\n", c.name, c.detail));
        }
        let failed = self.failures().len();
        out.push_str(&format!(
            "{} checks, {} failed\n",
            self.checks.len(),
            failed
        ));
        out
    }

    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(CheckResult {
            name: name.to_string(),
            passed,
            detail,
        });
    }
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        input_dim: 3,
        hidden_dims: vec![4, 3],
        latent_dim: 2,
        num_classes: 3,
    }
}

fn random_batch(n: usize, d: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_vec(n, d, (0..n * d).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).unwrap()
}

/// Run every check. `corrupt_gradient` injects a deliberate +0.1 bug into one
/// analytic gradient so the battery's negative control can be exercised.
pub fn run_battery(corrupt_gradient: bool) -> VerifyReport {
    let mut report = VerifyReport::default();

    // logsumexp shift invariance.
    {
        let mut rng = Rng::new(101);
        let mut worst = 0.0f64;
        for _ in 0..200 {
            let v: Vec<f64> = (0..5).map(|_| rng.uniform_in(-6.0, 6.0)).collect();
            let c = rng.uniform_in(-4.0, 4.0);
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let err =
                (logsumexp(&shifted).unwrap() - logsumexp(&v).unwrap() - c).abs();
            worst = worst.max(err);
        }
        report.push(
            "logsumexp shift invariance",
            worst < 1e-12,
            format!("max abs err {worst:.3e}"),
        );
    }

    // Per-term and combined client-loss gradients.
    let cfg = tiny_model();
    let x = random_batch(8, 3, &mut Rng::new(107));
    let labels = [0usize, 1, 2, 0, 1, 2, 0, 1];
    let term_configs = [
        ("nll", LossLambdas { lambda_l2: 0.0, lambda_cmi: 0.0 }),
        ("l2", LossLambdas { lambda_l2: 1.0, lambda_cmi: 0.0 }),
        ("cmi", LossLambdas { lambda_l2: 0.0, lambda_cmi: 1.0 }),
        ("combined", LossLambdas { lambda_l2: 0.01, lambda_cmi: 0.001 }),
    ];
    for (name, lambdas) in term_configs {
        let params = init_params(&cfg, &mut Rng::new(113)).unwrap();
        let corrupt_here = corrupt_gradient && name == "combined";
        let cfg = cfg.clone();
        let x = x.clone();
        let f = move |p: &ParamVector| {
            let params = unflatten(&cfg, p)?;
            let trace = forward_train(&params, &x, &mut Rng::new(211))?;
            let out = client_loss(&params, &trace, &labels, &lambdas)?;
            let mut grads = out.grads;
            if corrupt_here {
                grads[0] += 0.1;
            }
            Ok((out.total, grads))
        };
        match grad_check(f, &flatten(&params), 1e-5, 1e-4) {
            Ok(rep) => {
                let label = if corrupt_here {
                    format!("client_loss gradient: {name} (corrupted fixture)")
                } else {
                    format!("client_loss gradient: {name}")
                };
                report.push(
                    &label,
                    rep.passed(),
                    format!("max rel err {:.3e} (tol {:.0e})", rep.max_rel_err, rep.tolerance),
                );
            }
            Err(e) => report.push(
                &format!("client_loss gradient: {name}"),
                false,
                e.to_string(),
            ),
        }
    }

    // Energy-form cross-entropy identity on random pairs.
    {
        let mut rng = Rng::new(131);
        let mut worst = 0.0f64;
        for _ in 0..10_000 {
            let c = 2 + rng.gen_range(6);
            let logits: Vec<f64> = (0..c).map(|_| rng.uniform_in(-8.0, 8.0)).collect();
            let label = rng.gen_range(c);
            let (_, _, energy_loss) = nll_energy_identity(&logits, label).unwrap();
            let (ce, _) = softmax_nll(&logits, label).unwrap();
            worst = worst.max((energy_loss - ce).abs());
        }
        report.push(
            "energy/cross-entropy identity",
            worst < 1e-12,
            format!("max abs err {worst:.3e} over 10000 pairs"),
        );
    }

    // Alignment hinge gradient through the parameters (eval-mode trace).
    {
        let params = init_params(&cfg, &mut Rng::new(137)).unwrap();
        let xt = random_batch(6, 3, &mut Rng::new(139));
        // References chosen below the typical energies so hinges activate.
        let emas = [-2.5f64, -1.0];
        let cfg = cfg.clone();
        let f = move |p: &ParamVector| {
            let params = unflatten(&cfg, p)?;
            let trace = forward_eval(&params, &xt)?;
            let report = fedalign::energy::batch_free_energy(&trace)?;
            let (loss, d_f) = fea_loss(&report.per_sample, &emas)?;
            let mut dlogits = Matrix::zeros(trace.logits.rows(), trace.logits.cols());
            for (i, &w) in d_f.iter().enumerate() {
                let sm = softmax(trace.logits.row(i));
                for (d, p) in dlogits.row_mut(i).iter_mut().zip(sm) {
                    *d = -w * p;
                }
            }
            Ok((loss, backward_logits(&params, &trace, &dlogits)?))
        };
        match grad_check(f, &flatten(&params), 1e-5, 1e-4) {
            Ok(rep) => report.push(
                "alignment hinge gradient",
                rep.passed(),
                format!("max rel err {:.3e} (tol 1e-4)", rep.max_rel_err),
            ),
            Err(e) => report.push("alignment hinge gradient", false, e.to_string()),
        }
    }

    // Aggregation exactness.
    {
        let mut rng = Rng::new(149);
        let k = 5;
        let len = 40;
        let vectors: Vec<ParamVector> = (0..k)
            .map(|_| {
                ParamVector::from_vec((0..len).map(|_| rng.uniform_in(-2.0, 2.0)).collect())
            })
            .collect();
        let sizes: Vec<usize> = (0..k).map(|_| 1 + rng.gen_range(400)).collect();
        let agg = aggregate(&vectors, &sizes).unwrap();
        let total: f64 = sizes.iter().map(|&s| s as f64).sum();
        let mut worst = 0.0f64;
        for i in 0..len {
            let oracle: f64 = vectors
                .iter()
                .zip(&sizes)
                .map(|(v, &s)| v[i] * (s as f64 / total))
                .sum();
            worst = worst.max((agg[i] - oracle).abs());
        }
        let weight_err =
            (sizes.iter().map(|&s| s as f64 / total).sum::<f64>() - 1.0).abs();
        let two = aggregate(
            &[
                ParamVector::from_vec(vec![1.0, 3.0]),
                ParamVector::from_vec(vec![5.0, 7.0]),
            ],
            &[1, 3],
        )
        .unwrap();
        let example_ok = two.values() == [4.0, 6.0];
        report.push(
            "aggregation exactness",
            worst < 1e-12 && weight_err < 1e-12 && example_ok,
            format!("max abs err {worst:.3e}, weight sum err {weight_err:.3e}"),
        );
    }

    // EMA laws.
    {
        let mut ok = true;
        let mut detail = String::new();
        let mut ema = EmaTracker::new(0.9).unwrap();
        ema.update(7.0).unwrap();
        ok &= ema.value() == Some(7.0);
        ema.update(2.0).unwrap();
        let arith = (ema.value().unwrap() - 6.5).abs();
        ok &= arith < 1e-15;
        detail.push_str(&format!("arith err {arith:.3e}"));
        let mut fixed = EmaTracker::new(0.8).unwrap();
        for _ in 0..30 {
            fixed.update(3.0).unwrap();
        }
        ok &= (fixed.value().unwrap() - 3.0).abs() < 1e-12;
        let mut rng = Rng::new(151);
        let mut conv = EmaTracker::new(0.9).unwrap();
        conv.update(0.0).unwrap();
        for _ in 0..100 {
            let prev = conv.value().unwrap();
            let obs = rng.uniform_in(-5.0, 5.0);
            conv.update(obs).unwrap();
            let now = conv.value().unwrap();
            ok &= now >= prev.min(obs) - 1e-12 && now <= prev.max(obs) + 1e-12;
        }
        report.push("ema laws", ok, detail);
    }

    // Hinge laws.
    {
        let (loss, grad) = fea_loss(&[0.0, 1.0], &[0.5, -0.5]).unwrap();
        let enumerated = (loss - 0.625).abs() < 1e-15
            && (grad[0] - 0.25).abs() < 1e-15
            && (grad[1] - 0.5).abs() < 1e-15;
        let (inactive, g0) = fea_loss(&[-1.0], &[0.0]).unwrap();
        let ok = enumerated && inactive == 0.0 && g0 == vec![0.0];
        report.push(
            "alignment hinge laws",
            ok,
            format!("enumerated loss {loss}"),
        );
    }

    // Earth mover checks.
    {
        let a = Matrix::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0, 0.0], vec![3.0, 0.0]]).unwrap();
        let pair = emd(&a, &b).unwrap();
        let identity = emd(&a, &a).unwrap();
        let sym = (emd(&a, &b).unwrap() - emd(&b, &a).unwrap()).abs();
        let ok = (pair - 1.0).abs() < 1e-12 && identity < 1e-12 && sym < 1e-12;
        report.push(
            "earth mover metric",
            ok,
            format!("example {pair}, identity {identity:.3e}, sym err {sym:.3e}"),
        );
    }

    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_battery_passes() {
        let report = run_battery(false);
        assert!(report.all_passed(), "{}", report.render());
    }

    #[test]
    fn corrupted_gradient_is_caught_and_named() {
        let report = run_battery(true);
        assert!(!report.all_passed());
        let failures = report.failures();
        assert_eq!(failures.len(), 1);
        assert!(failures[0].name.contains("corrupted fixture"), "{}", failures[0].name);
    }

    #[test]
    fn report_mentions_max_rel_error_per_loss_term() {
        let report = run_battery(false);
        let rendered = report.render();
        for term in ["nll", "l2", "cmi", "combined"] {
            assert!(
                rendered.contains(&format!("client_loss gradient: {term}")),
                "{rendered}"
            );
        }
        assert!(rendered.contains("max rel err"));
    }
}
