//! The client/global network: ReLU MLP encoder, probabilistic latent head
//! producing (mu, logvar), per-class reference Gaussians, and a linear
//! classifier. The full client loss is computed with exact hand-derived
//! gradients, including the pathwise term through the sampled latent and the
//! reference-Gaussian parameters.

use crate::error::{Error, Result};
use crate::numcore::{
    gaussian_kl_diag, matmul, matmul_nt, matmul_tn, reparam_sample, softmax_nll, Matrix,
    ParamVector, Rng,
};
use serde::{Deserialize, Serialize};

/// Log-variances are clamped to this band before exponentiation.
pub const LOGVAR_CLAMP: f64 = 10.0;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub latent_dim: usize,
    pub num_classes: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 {
            return Err(Error::config("model dims must be >= 1"));
        }
        if self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::config("hidden dims must be >= 1"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be >= 2"));
        }
        Ok(())
    }

    /// Encoder layer widths including input: `[input, h1, ..., hk]`.
    fn encoder_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend_from_slice(&self.hidden_dims);
        dims
    }

    /// Width of the representation feeding the latent heads.
    fn trunk_dim(&self) -> usize {
        *self.encoder_dims().last().unwrap()
    }

    /// Total number of scalar parameters for this configuration.
    pub fn param_count(&self) -> usize {
        let dims = self.encoder_dims();
        let mut n = 0;
        for w in dims.windows(2) {
            n += w[0] * w[1] + w[1];
        }
        let t = self.trunk_dim();
        n += 2 * (t * self.latent_dim + self.latent_dim); // mu and logvar heads
        n += self.latent_dim * self.num_classes + self.num_classes; // classifier
        n += 2 * self.num_classes * self.latent_dim; // class reference gaussians
        n
    }
}

/// One dense layer; weights are `in x out`, bias has length `out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Dense {
    fn zeros(inp: usize, out: usize) -> Self {
        Dense {
            w: Matrix::zeros(inp, out),
            b: vec![0.0; out],
        }
    }

    fn init(inp: usize, out: usize, rng: &mut Rng) -> Self {
        // He-uniform: U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero bias.
        let bound = (6.0 / inp as f64).sqrt();
        let data = (0..inp * out)
            .map(|_| rng.uniform_in(-bound, bound))
            .collect();
        Dense {
            w: Matrix::from_vec(inp, out, data).unwrap(),
            b: vec![0.0; out],
        }
    }

    /// `x @ w + b`
    fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = matmul(x, &self.w)?;
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for (v, b) in row.iter_mut().zip(&self.b) {
                *v += b;
            }
        }
        Ok(out)
    }
}

/// Full parameter set. The same struct doubles as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub encoder: Vec<Dense>,
    pub head_mu: Dense,
    pub head_logvar: Dense,
    pub classifier: Dense,
    /// Per-class reference means, `num_classes x latent_dim`.
    pub proto_mu: Matrix,
    /// Per-class reference log-variances, `num_classes x latent_dim`.
    pub proto_logvar: Matrix,
}

/// Training or evaluation forward mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Cached activations from one forward pass, enough for exact backprop.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub mode: Mode,
    input: Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
    pub mu: Matrix,
    logvar_raw: Matrix,
    pub logvar: Matrix,
    pub z: Matrix,
    pub logits: Matrix,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }
}

/// Scaling factors for the two representation regularisers.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct LossLambdas {
    pub lambda_l2: f64,
    pub lambda_cmi: f64,
}

impl LossLambdas {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_l2 < 0.0 || self.lambda_cmi < 0.0 {
            return Err(Error::config("loss lambdas must be nonnegative"));
        }
        Ok(())
    }
}

/// Loss value, its components, and the gradient of the total.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub total: f64,
    pub nll: f64,
    pub l2: f64,
    pub cmi: f64,
    pub grads: ParamVector,
}

fn clamp_logvar(v: f64) -> f64 {
    v.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP)
}

/// Gradient passes through the clamp only strictly inside the band.
fn clamp_mask(raw: f64) -> f64 {
    if raw.abs() < LOGVAR_CLAMP {
        1.0
    } else {
        0.0
    }
}

pub fn init_params(config: &ModelConfig, rng: &mut Rng) -> Result<ModelParams> {
    config.validate()?;
    let dims = config.encoder_dims();
    let encoder = dims
        .windows(2)
        .map(|w| Dense::init(w[0], w[1], rng))
        .collect();
    let t = config.trunk_dim();
    let head_mu = Dense::init(t, config.latent_dim, rng);
    let head_logvar = Dense::init(t, config.latent_dim, rng);
    let classifier = Dense::init(config.latent_dim, config.num_classes, rng);
    let proto_mu = {
        let data = (0..config.num_classes * config.latent_dim)
            .map(|_| rng.normal())
            .collect();
        Matrix::from_vec(config.num_classes, config.latent_dim, data).unwrap()
    };
    let proto_logvar = Matrix::zeros(config.num_classes, config.latent_dim);
    Ok(ModelParams {
        config: config.clone(),
        encoder,
        head_mu,
        head_logvar,
        classifier,
        proto_mu,
        proto_logvar,
    })
}

/// All-zero parameter container of the same shape, used for gradients.
pub fn zeros_like(params: &ModelParams) -> ModelParams {
    let config = params.config.clone();
    let dims = config.encoder_dims();
    let encoder = dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
    let t = config.trunk_dim();
    ModelParams {
        encoder,
        head_mu: Dense::zeros(t, config.latent_dim),
        head_logvar: Dense::zeros(t, config.latent_dim),
        classifier: Dense::zeros(config.latent_dim, config.num_classes),
        proto_mu: Matrix::zeros(config.num_classes, config.latent_dim),
        proto_logvar: Matrix::zeros(config.num_classes, config.latent_dim),
        config,
    }
}

fn forward_impl(params: &ModelParams, x: &Matrix, mut rng: Option<&mut Rng>) -> Result<ForwardTrace> {
    if x.cols() != params.config.input_dim {
        return Err(Error::Shape {
            context: "forward input",
            left: x.shape(),
            right: (x.rows(), params.config.input_dim),
        });
    }
    let mode = if rng.is_some() { Mode::Train } else { Mode::Eval };
    let mut pre = Vec::with_capacity(params.encoder.len());
    let mut post = Vec::with_capacity(params.encoder.len());
    let mut h = x.clone();
    for layer in &params.encoder {
        let p = layer.forward(&h)?;
        let mut a = p.clone();
        for v in a.data_mut() {
            *v = v.max(0.0);
        }
        pre.push(p);
        h = a.clone();
        post.push(a);
    }
    let mu = params.head_mu.forward(&h)?;
    let logvar_raw = params.head_logvar.forward(&h)?;
    let mut logvar = logvar_raw.clone();
    for v in logvar.data_mut() {
        *v = clamp_logvar(*v);
    }
    let z = match rng.as_deref_mut() {
        Some(rng) => {
            let mut z = Matrix::zeros(mu.rows(), mu.cols());
            for r in 0..mu.rows() {
                let sample = reparam_sample(mu.row(r), logvar.row(r), rng)?;
                z.row_mut(r).copy_from_slice(&sample);
            }
            z
        }
        None => mu.clone(),
    };
    let logits = params.classifier.forward(&z)?;
    if !logits.is_finite() {
        return Err(Error::NonFinite("forward logits".into()));
    }
    Ok(ForwardTrace {
        mode,
        input: x.clone(),
        pre,
        post,
        mu,
        logvar_raw,
        logvar,
        z,
        logits,
    })
}

/// Training forward: the latent is sampled with the reparameterisation trick.
pub fn forward_train(params: &ModelParams, x: &Matrix, rng: &mut Rng) -> Result<ForwardTrace> {
    forward_impl(params, x, Some(rng))
}

/// Evaluation forward: `z = mu`, fully deterministic.
pub fn forward_eval(params: &ModelParams, x: &Matrix) -> Result<ForwardTrace> {
    forward_impl(params, x, None)
}

/// Backpropagate gradients injected at the logits, latent, and head outputs
/// down to every network parameter. Reference-Gaussian gradients are owned by
/// the caller (they do not sit on this path).
fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    dlogits: &Matrix,
    dz_extra: Option<&Matrix>,
    dmu_extra: Option<&Matrix>,
    dlogvar_extra: Option<&Matrix>,
) -> Result<ModelParams> {
    let mut grads = zeros_like(params);

    // Classifier.
    grads.classifier.w = matmul_tn(&trace.z, dlogits)?;
    for r in 0..dlogits.rows() {
        for (gb, &d) in grads.classifier.b.iter_mut().zip(dlogits.row(r)) {
            *gb += d;
        }
    }
    let mut dz = matmul_nt(dlogits, &params.classifier.w)?;
    if let Some(extra) = dz_extra {
        for (a, b) in dz.data_mut().iter_mut().zip(extra.data()) {
            *a += b;
        }
    }

    // Latent heads. In train mode the sampled path contributes
    // dz/dmu = 1 and dz/dlogvar = 0.5 (z - mu); in eval mode z aliases mu.
    let mut dmu = dz.clone();
    let mut dlogvar = Matrix::zeros(dz.rows(), dz.cols());
    if trace.mode == Mode::Train {
        for i in 0..dz.data().len() {
            dlogvar.data_mut()[i] =
                dz.data()[i] * 0.5 * (trace.z.data()[i] - trace.mu.data()[i]);
        }
    }
    if let Some(extra) = dmu_extra {
        for (a, b) in dmu.data_mut().iter_mut().zip(extra.data()) {
            *a += b;
        }
    }
    if let Some(extra) = dlogvar_extra {
        for (a, b) in dlogvar.data_mut().iter_mut().zip(extra.data()) {
            *a += b;
        }
    }
    // Clamp gate on the raw logvar.
    for i in 0..dlogvar.data().len() {
        dlogvar.data_mut()[i] *= clamp_mask(trace.logvar_raw.data()[i]);
    }

    let h = trace.post.last().unwrap_or(&trace.input);
    grads.head_mu.w = matmul_tn(h, &dmu)?;
    grads.head_logvar.w = matmul_tn(h, &dlogvar)?;
    for r in 0..dmu.rows() {
        for (gb, &d) in grads.head_mu.b.iter_mut().zip(dmu.row(r)) {
            *gb += d;
        }
        for (gb, &d) in grads.head_logvar.b.iter_mut().zip(dlogvar.row(r)) {
            *gb += d;
        }
    }
    let mut dh = matmul_nt(&dmu, &params.head_mu.w)?;
    let dh_lv = matmul_nt(&dlogvar, &params.head_logvar.w)?;
    for (a, b) in dh.data_mut().iter_mut().zip(dh_lv.data()) {
        *a += b;
    }

    // Encoder, last layer to first.
    let mut dpost = dh;
    for (li, layer) in params.encoder.iter().enumerate().rev() {
        let mut dpre = dpost;
        for (d, &p) in dpre.data_mut().iter_mut().zip(trace.pre[li].data()) {
            if p <= 0.0 {
                *d = 0.0;
            }
        }
        let layer_input = if li == 0 { &trace.input } else { &trace.post[li - 1] };
        grads.encoder[li].w = matmul_tn(layer_input, &dpre)?;
        for r in 0..dpre.rows() {
            for (gb, &d) in grads.encoder[li].b.iter_mut().zip(dpre.row(r)) {
                *gb += d;
            }
        }
        dpost = matmul_nt(&dpre, &layer.w)?;
    }
    Ok(grads)
}

/// Backprop an arbitrary logits gradient through the network, as a flat
/// vector. Used by the server-side energy step.
pub fn backward_logits(
    params: &ModelParams,
    trace: &ForwardTrace,
    dlogits: &Matrix,
) -> Result<ParamVector> {
    let grads = backward(params, trace, dlogits, None, None, None)?;
    Ok(flatten(&grads))
}

/// The full per-client training loss with exact gradients:
/// mean cross-entropy, plus `lambda_l2` times the mean squared latent norm,
/// plus `lambda_cmi` times the mean KL from the encoder posterior to the
/// label's reference Gaussian.
pub fn client_loss(
    params: &ModelParams,
    trace: &ForwardTrace,
    labels: &[usize],
    lambdas: &LossLambdas,
) -> Result<LossOutput> {
    if trace.mode != Mode::Train {
        return Err(Error::argument("client_loss requires a train-mode trace"));
    }
    let n = trace.batch_size();
    if labels.len() != n {
        return Err(Error::argument(format!(
            "labels length {} does not match batch size {n}",
            labels.len()
        )));
    }
    let num_classes = params.config.num_classes;
    let latent = params.config.latent_dim;
    let inv_n = 1.0 / n as f64;

    let mut nll = 0.0;
    let mut dlogits = Matrix::zeros(n, num_classes);
    for (i, &y) in labels.iter().enumerate() {
        let (loss, grad) = softmax_nll(trace.logits.row(i), y)?;
        nll += loss * inv_n;
        for (d, g) in dlogits.row_mut(i).iter_mut().zip(grad) {
            *d = g * inv_n;
        }
    }

    let mut l2 = 0.0;
    let mut dz_extra = Matrix::zeros(n, latent);
    for i in 0..n {
        let z = trace.z.row(i);
        l2 += z.iter().map(|v| v * v).sum::<f64>() * inv_n;
        for (d, &zv) in dz_extra.row_mut(i).iter_mut().zip(z) {
            *d = 2.0 * lambdas.lambda_l2 * zv * inv_n;
        }
    }

    let mut cmi = 0.0;
    let mut dmu_extra = Matrix::zeros(n, latent);
    let mut dlogvar_extra = Matrix::zeros(n, latent);
    let mut grads = zeros_like(params);
    let scale_cmi = lambdas.lambda_cmi * inv_n;
    for (i, &y) in labels.iter().enumerate() {
        let proto_lv_raw = params.proto_logvar.row(y);
        let proto_lv: Vec<f64> = proto_lv_raw.iter().map(|&v| clamp_logvar(v)).collect();
        let kl = gaussian_kl_diag(
            trace.mu.row(i),
            trace.logvar.row(i),
            params.proto_mu.row(y),
            &proto_lv,
        )?;
        cmi += kl.kl * inv_n;
        for (d, g) in dmu_extra.row_mut(i).iter_mut().zip(&kl.d_mu_p) {
            *d += scale_cmi * g;
        }
        for (d, g) in dlogvar_extra.row_mut(i).iter_mut().zip(&kl.d_logvar_p) {
            *d += scale_cmi * g;
        }
        for (d, g) in grads.proto_mu.row_mut(y).iter_mut().zip(&kl.d_mu_r) {
            *d += scale_cmi * g;
        }
        for ((d, g), &raw) in grads
            .proto_logvar
            .row_mut(y)
            .iter_mut()
            .zip(&kl.d_logvar_r)
            .zip(proto_lv_raw)
        {
            *d += scale_cmi * g * clamp_mask(raw);
        }
    }

    let net = backward(
        params,
        trace,
        &dlogits,
        Some(&dz_extra),
        Some(&dmu_extra),
        Some(&dlogvar_extra),
    )?;
    grads.encoder = net.encoder;
    grads.head_mu = net.head_mu;
    grads.head_logvar = net.head_logvar;
    grads.classifier = net.classifier;

    let total = nll + lambdas.lambda_l2 * l2 + lambdas.lambda_cmi * cmi;
    Ok(LossOutput {
        total,
        nll,
        l2,
        cmi,
        grads: flatten(&grads),
    })
}

pub fn flatten(params: &ModelParams) -> ParamVector {
    let mut out = Vec::with_capacity(params.config.param_count());
    for layer in &params.encoder {
        out.extend_from_slice(layer.w.data());
        out.extend_from_slice(&layer.b);
    }
    for layer in [&params.head_mu, &params.head_logvar, &params.classifier] {
        out.extend_from_slice(layer.w.data());
        out.extend_from_slice(&layer.b);
    }
    out.extend_from_slice(params.proto_mu.data());
    out.extend_from_slice(params.proto_logvar.data());
    ParamVector::from_vec(out)
}

pub fn unflatten(config: &ModelConfig, vec: &ParamVector) -> Result<ModelParams> {
    config.validate()?;
    if vec.len() != config.param_count() {
        return Err(Error::argument(format!(
            "parameter vector length {} does not match expected {}",
            vec.len(),
            config.param_count()
        )));
    }
    let values = vec.values();
    let mut cursor = 0;
    let mut take_dense = |inp: usize, out: usize| -> Dense {
        let w =
            Matrix::from_vec(inp, out, values[cursor..cursor + inp * out].to_vec()).unwrap();
        cursor += inp * out;
        let b = values[cursor..cursor + out].to_vec();
        cursor += out;
        Dense { w, b }
    };
    let dims = config.encoder_dims();
    let encoder: Vec<Dense> = dims.windows(2).map(|w| take_dense(w[0], w[1])).collect();
    let t = config.trunk_dim();
    let head_mu = take_dense(t, config.latent_dim);
    let head_logvar = take_dense(t, config.latent_dim);
    let classifier = take_dense(config.latent_dim, config.num_classes);
    let proto_len = config.num_classes * config.latent_dim;
    let proto_mu = Matrix::from_vec(
        config.num_classes,
        config.latent_dim,
        values[cursor..cursor + proto_len].to_vec(),
    )
    .unwrap();
    cursor += proto_len;
    let proto_logvar = Matrix::from_vec(
        config.num_classes,
        config.latent_dim,
        values[cursor..cursor + proto_len].to_vec(),
    )
    .unwrap();
    cursor += proto_len;
    debug_assert_eq!(cursor, vec.len());
    Ok(ModelParams {
        config: config.clone(),
        encoder,
        head_mu,
        head_logvar,
        classifier,
        proto_mu,
        proto_logvar,
    })
}

/// Argmax class per row; ties resolve to the lower index.
pub fn predict(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
