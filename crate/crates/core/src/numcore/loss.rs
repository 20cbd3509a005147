use crate::error::{Error, Result};
use crate::numcore::Rng;

/// Shift-stable log(sum(exp(v))).
pub fn logsumexp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::argument("logsumexp of empty vector"));
    }
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::NonFinite("logsumexp input".into()));
    }
    let s: f64 = v.iter().map(|x| (x - m).exp()).sum();
    Ok(m + s.ln())
}

/// Softmax computed against the shifted logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Cross-entropy of a single sample.
///
/// Returns the loss and its gradient w.r.t. the logits,
/// `softmax(logits) - onehot(label)`.
pub fn softmax_nll(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::argument(format!(
            "label {label} out of range for {} logits",
            logits.len()
        )));
    }
    let lse = logsumexp(logits)?;
    let loss = lse - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

pub struct GaussianKl {
    pub kl: f64,
    pub d_mu_p: Vec<f64>,
    pub d_logvar_p: Vec<f64>,
    pub d_mu_r: Vec<f64>,
    pub d_logvar_r: Vec<f64>,
}

/// KL( N(mu_p, diag e^logvar_p) || N(mu_r, diag e^logvar_r) ) with gradients
/// w.r.t. all four inputs.
pub fn gaussian_kl_diag(
    mu_p: &[f64],
    logvar_p: &[f64],
    mu_r: &[f64],
    logvar_r: &[f64],
) -> Result<GaussianKl> {
    let n = mu_p.len();
    if logvar_p.len() != n || mu_r.len() != n || logvar_r.len() != n {
        return Err(Error::argument(format!(
            "gaussian_kl_diag length mismatch: {} / {} / {} / {}",
            mu_p.len(),
            logvar_p.len(),
            mu_r.len(),
            logvar_r.len()
        )));
    }
    let mut kl = 0.0;
    let mut d_mu_p = vec![0.0; n];
    let mut d_logvar_p = vec![0.0; n];
    let mut d_mu_r = vec![0.0; n];
    let mut d_logvar_r = vec![0.0; n];
    for i in 0..n {
        let var_ratio = (logvar_p[i] - logvar_r[i]).exp();
        let inv_var_r = (-logvar_r[i]).exp();
        let dmu = mu_r[i] - mu_p[i];
        kl += 0.5 * (var_ratio + dmu * dmu * inv_var_r - 1.0 + logvar_r[i] - logvar_p[i]);
        d_mu_p[i] = -dmu * inv_var_r;
        d_mu_r[i] = dmu * inv_var_r;
        d_logvar_p[i] = 0.5 * (var_ratio - 1.0);
        d_logvar_r[i] = 0.5 * (1.0 - var_ratio - dmu * dmu * inv_var_r);
    }
    Ok(GaussianKl {
        kl,
        d_mu_p,
        d_logvar_p,
        d_mu_r,
        d_logvar_r,
    })
}

/// Reparameterised Gaussian sample: `z = mu + exp(0.5 logvar) * eps`.
///
/// The pathwise gradients are `dz/dmu = 1` and `dz/dlogvar = 0.5 (z - mu)`.
pub fn reparam_sample(mu: &[f64], logvar: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
    if mu.len() != logvar.len() {
        return Err(Error::argument(format!(
            "reparam_sample length mismatch: {} vs {}",
            mu.len(),
            logvar.len()
        )));
    }
    Ok(mu
        .iter()
        .zip(logvar)
        .map(|(&m, &lv)| m + (0.5 * lv).exp() * rng.normal())
        .collect())
}
