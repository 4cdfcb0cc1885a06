//! Small regressors (linear / one-hidden-layer rectifier) trained by
//! mini-batch gradient descent under four losses: MSE, MAE, residual
//! entropy (`mee`), and normalized input-residual dependence (`nmi`).
//!
//! The kernel losses follow the same per-batch recipe: form the residuals
//! `e_i = y_i - f(x_i)`, build the residual Gram (and for `nmi` the input
//! Gram), differentiate the entropy functional with respect to the Gram
//! entries ([`crate::gradients`]), chain back to the residuals through the
//! RBF kernel, and into the parameters through the model.
//!
//! Both kernel losses are blind to a constant shift of the prediction
//! (shifting every residual leaves every pairwise difference, hence the
//! Gram, unchanged), so after training the empirical source bias
//! `b = mean(y) - mean(f(x))` is folded into the model and applied by
//! [`Regressor::predict`].
//!
//! Bandwidths are resolved once per run: the input-side bandwidth from the
//! training inputs, the residual-side bandwidth from the initial residuals,
//! with one re-selection at the halfway epoch (the initial residuals carry
//! the signal scale, which is far coarser than the converged residuals).

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::seeded_rng;
use crate::entropy::Alpha;
use crate::error::{Error, Result};
use crate::gradients::{
    backprop_to_samples, grad_entropy, grad_joint_entropy, nats_entropy, nats_joint_entropy,
    GramGradient,
};
use crate::kernel::{gram, select_bandwidth, BandwidthRule, GramMatrix, KernelKind, KernelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    Rectifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Linear,
    /// One hidden rectifier layer of the given width (at most 64).
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Mse,
    Mae,
    /// Residual Renyi entropy `S_alpha(A_e)`.
    Mee,
    /// Normalized input-residual mutual information `I*_alpha(x; e)`.
    Nmi,
}

impl LossKind {
    pub fn is_kernel_loss(self) -> bool {
        matches!(self, LossKind::Mee | LossKind::Nmi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    /// Plain mini-batch gradient descent with momentum.
    Sgd { momentum: f64 },
    /// Adam with the usual (0.9, 0.999) moment decays.
    Adam,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub alpha: Alpha,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub model: ModelKind,
    /// Kernel for the Gram matrices of the kernel losses. Non-fixed
    /// bandwidth rules are resolved once at the start of the run (inputs:
    /// from the training inputs; residuals: from the initial residuals,
    /// re-selected once at the halfway epoch) and frozen in between.
    pub kernel: KernelSpec,
    /// Record per-epoch full-training-set loss trajectories.
    pub track_losses: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(loss: LossKind) -> Self {
        TrainConfig {
            loss,
            alpha: Alpha::TWO,
            batch_size: 64,
            epochs: 300,
            learning_rate: 0.01,
            optimizer: Optimizer::Adam,
            model: ModelKind::Linear,
            kernel: KernelSpec::rbf_median(),
            track_losses: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    /// out x in
    weights: DMatrix<f64>,
    bias: DVector<f64>,
}

/// A trained regressor: affine layers, optional rectifier in between, and
/// the post-training source-bias correction added to every prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    layers: Vec<Layer>,
    activation: Activation,
    bias_correction: f64,
}

/// Per-epoch diagnostics from a training run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainStats {
    /// Mean training-batch loss per epoch (in the trained loss).
    pub epoch_loss: Vec<f64>,
    /// Full-training-set `I*_alpha(x; e)` per epoch (when tracked).
    pub epoch_nmi: Vec<f64>,
    /// Full-training-set residual entropy per epoch (when tracked).
    pub epoch_mee: Vec<f64>,
}

impl Regressor {
    fn init(model: ModelKind, input_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = seeded_rng(seed, 900);
        let mut layers = Vec::new();
        let activation = match model {
            ModelKind::Linear => {
                let g = Normal::new(0.0, 0.01).unwrap();
                layers.push(Layer {
                    weights: DMatrix::from_fn(1, input_dim, |_, _| g.sample(&mut rng)),
                    bias: DVector::zeros(1),
                });
                Activation::Identity
            }
            ModelKind::Mlp { hidden } => {
                if hidden == 0 || hidden > 64 {
                    return Err(Error::Argument(format!("hidden width {hidden} outside 1..=64")));
                }
                let g1 = Normal::new(0.0, (2.0 / input_dim as f64).sqrt()).unwrap();
                let g2 = Normal::new(0.0, (2.0 / hidden as f64).sqrt()).unwrap();
                layers.push(Layer {
                    weights: DMatrix::from_fn(hidden, input_dim, |_, _| g1.sample(&mut rng)),
                    bias: DVector::zeros(hidden),
                });
                layers.push(Layer {
                    weights: DMatrix::from_fn(1, hidden, |_, _| g2.sample(&mut rng)),
                    bias: DVector::zeros(1),
                });
                Activation::Rectifier
            }
        };
        Ok(Regressor { layers, activation, bias_correction: 0.0 })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn bias_correction(&self) -> f64 {
        self.bias_correction
    }

    /// Raw forward pass (no bias correction); `x` rows are samples.
    fn forward_raw(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let n = x.nrows();
        let mut cur = x.transpose(); // in x n
        for (li, layer) in self.layers.iter().enumerate() {
            cur = &layer.weights * cur;
            for c in 0..n {
                for r in 0..layer.bias.len() {
                    cur[(r, c)] += layer.bias[r];
                }
            }
            let last = li + 1 == self.layers.len();
            if !last && self.activation == Activation::Rectifier {
                cur.apply(|v| *v = v.max(0.0));
            }
        }
        DVector::from_iterator(n, (0..n).map(|c| cur[(0, c)]))
    }

    /// Predictions including the source-bias correction.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "model expects {} features, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let mut out = self.forward_raw(x);
        out.apply(|v| *v += self.bias_correction);
        Ok(out)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let json = self.to_json()?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_json(&bytes)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            version: 1,
            activation: self.activation,
            bias_correction: self.bias_correction,
            layers: self
                .layers
                .iter()
                .map(|l| CheckpointLayer {
                    rows: l.weights.nrows(),
                    cols: l.weights.ncols(),
                    weights: l.weights.as_slice().to_vec(),
                    bias: l.bias.as_slice().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    /// Parse and validate a checkpoint (shapes, finiteness, layer chaining).
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let file: CheckpointFile =
            serde_json::from_slice(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format '{}'", file.format)));
        }
        if file.version != 1 {
            return Err(Error::Checkpoint(format!("unsupported version {}", file.version)));
        }
        if file.layers.is_empty() || file.layers.len() > 2 {
            return Err(Error::Checkpoint(format!("expected 1 or 2 layers, got {}", file.layers.len())));
        }
        let mut layers = Vec::with_capacity(file.layers.len());
        let mut expected_in: Option<usize> = None;
        for (i, l) in file.layers.iter().enumerate() {
            if l.rows == 0 || l.cols == 0 {
                return Err(Error::Checkpoint(format!("layer {i} has empty shape")));
            }
            if l.rows.checked_mul(l.cols).is_none_or(|len| len != l.weights.len()) {
                return Err(Error::Checkpoint(format!(
                    "layer {i}: {}x{} shape with {} weights",
                    l.rows,
                    l.cols,
                    l.weights.len()
                )));
            }
            if l.bias.len() != l.rows {
                return Err(Error::Checkpoint(format!(
                    "layer {i}: {} bias entries for {} rows",
                    l.bias.len(),
                    l.rows
                )));
            }
            if let Some(exp) = expected_in {
                if l.cols != exp {
                    return Err(Error::Checkpoint(format!(
                        "layer {i} input {} does not chain with previous output {exp}",
                        l.cols
                    )));
                }
            }
            if l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!("layer {i} has non-finite parameters")));
            }
            expected_in = Some(l.rows);
            layers.push(Layer {
                weights: DMatrix::from_column_slice(l.rows, l.cols, &l.weights),
                bias: DVector::from_column_slice(&l.bias),
            });
        }
        if layers.last().unwrap().weights.nrows() != 1 {
            return Err(Error::Checkpoint("final layer must have one output".into()));
        }
        if !file.bias_correction.is_finite() {
            return Err(Error::Checkpoint("non-finite bias correction".into()));
        }
        Ok(Regressor { layers, activation: file.activation, bias_correction: file.bias_correction })
    }
}

const CHECKPOINT_FORMAT: &str = "gramdep-regressor";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    activation: Activation,
    bias_correction: f64,
    layers: Vec<CheckpointLayer>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointLayer {
    rows: usize,
    cols: usize,
    /// Column-major, `rows * cols` entries.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// `I*_alpha(x; e)` (max normalization) and its gradient with respect to
/// the residual Gram, everything in natural-log units so the quotient rule
/// is internally consistent (the ratio itself is base-free).
fn nmi_loss_and_grad(
    ax: &GramMatrix,
    ae: &GramMatrix,
    alpha: Alpha,
) -> Result<(f64, DMatrix<f64>)> {
    let al = alpha.value();
    let hx = nats_entropy(ax.entries(), al);
    let he = nats_entropy(ae.entries(), al);
    let hj = nats_joint_entropy(ax.entries(), ae.entries(), al);
    let mi = hx + he - hj;
    let denom = hx.max(he);
    if denom < 1e-12 {
        return Ok((0.0, DMatrix::zeros(ae.n(), ae.n())));
    }
    let d_he = grad_entropy(ae, alpha)?.into_entries();
    let d_hj = grad_joint_entropy(ae, ax, alpha)?.into_entries();
    let d_mi = &d_he - &d_hj;
    if hx >= he {
        Ok((mi / hx, d_mi / hx))
    } else {
        let grad = (d_mi * he - d_he * mi) / (he * he);
        Ok((mi / he, grad))
    }
}

struct OptimizerState {
    momentum: Vec<(DMatrix<f64>, DVector<f64>)>,
    second: Vec<(DMatrix<f64>, DVector<f64>)>,
    step: usize,
}

impl OptimizerState {
    fn new(layers: &[Layer]) -> Self {
        let zeros: Vec<(DMatrix<f64>, DVector<f64>)> = layers
            .iter()
            .map(|l| {
                (DMatrix::zeros(l.weights.nrows(), l.weights.ncols()), DVector::zeros(l.bias.len()))
            })
            .collect();
        OptimizerState { momentum: zeros.clone(), second: zeros, step: 0 }
    }

    fn update(
        &mut self,
        layers: &mut [Layer],
        grads: &[(DMatrix<f64>, DVector<f64>)],
        optimizer: Optimizer,
        lr: f64,
    ) {
        self.step += 1;
        match optimizer {
            Optimizer::Sgd { momentum } => {
                for (li, layer) in layers.iter_mut().enumerate() {
                    let (mw, mb) = &mut self.momentum[li];
                    *mw = &*mw * momentum - &grads[li].0 * lr;
                    *mb = &*mb * momentum - &grads[li].1 * lr;
                    layer.weights += &*mw;
                    layer.bias += &*mb;
                }
            }
            Optimizer::Adam => {
                let (b1, b2, eps) = (0.9_f64, 0.999_f64, 1e-8);
                let t = self.step as i32;
                let corr1 = 1.0 - b1.powi(t);
                let corr2 = 1.0 - b2.powi(t);
                for (li, layer) in layers.iter_mut().enumerate() {
                    let (gw, gb) = &grads[li];
                    let (mw, mb) = &mut self.momentum[li];
                    *mw = &*mw * b1 + gw * (1.0 - b1);
                    *mb = &*mb * b1 + gb * (1.0 - b1);
                    let (vw, vb) = &mut self.second[li];
                    vw.zip_apply(gw, |v, g| *v = *v * b2 + (1.0 - b2) * g * g);
                    vb.zip_apply(gb, |v, g| *v = *v * b2 + (1.0 - b2) * g * g);
                    for r in 0..layer.weights.nrows() {
                        for c in 0..layer.weights.ncols() {
                            let mhat = mw[(r, c)] / corr1;
                            let vhat = vw[(r, c)] / corr2;
                            layer.weights[(r, c)] -= lr * mhat / (vhat.sqrt() + eps);
                        }
                    }
                    for r in 0..layer.bias.len() {
                        let mhat = mb[r] / corr1;
                        let vhat = vb[r] / corr2;
                        layer.bias[r] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

fn resolve_sigma(rule: BandwidthRule, data: &DMatrix<f64>) -> Result<f64> {
    select_bandwidth(data, rule).or(Err(Error::DegenerateBandwidth))
}

/// Mini-batch training. Returns the fitted model (bias correction applied)
/// and per-epoch diagnostics; identical configuration gives identical
/// parameters.
pub fn train(x: &DMatrix<f64>, y: &[f64], config: &TrainConfig) -> Result<(Regressor, TrainStats)> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("{} targets for {n} rows", y.len())));
    }
    if n < config.batch_size {
        return Err(Error::Argument(format!(
            "batch size {} exceeds sample count {n}",
            config.batch_size
        )));
    }
    if config.loss.is_kernel_loss() {
        if config.batch_size < 8 {
            return Err(Error::Argument("kernel losses need batch_size >= 8".into()));
        }
        if config.kernel.kind != KernelKind::GaussianRbf {
            return Err(Error::Unsupported("kernel losses require the Gaussian RBF kernel".into()));
        }
        if config.alpha.is_von_neumann() {
            return Err(Error::Argument("kernel losses need alpha != 1".into()));
        }
    }
    if !(config.learning_rate > 0.0) {
        return Err(Error::Argument("learning rate must be positive".into()));
    }
    if config.epochs == 0 {
        return Err(Error::Argument("need at least one epoch".into()));
    }

    let mut model = Regressor::init(config.model, p, config.seed)?;
    let mut opt = OptimizerState::new(&model.layers);
    let mut rng = seeded_rng(config.seed, 901);
    let y_vec = DVector::from_column_slice(y);

    // bandwidths frozen for the run (residual side re-selected once halfway)
    let sigma_x = if config.loss == LossKind::Nmi {
        Some(resolve_sigma(BandwidthRule::Silverman, x)?)
    } else {
        None
    };
    let mut sigma_e = if config.loss.is_kernel_loss() {
        let e0 = &y_vec - model.forward_raw(x);
        let e0m = DMatrix::from_column_slice(n, 1, e0.as_slice());
        Some(resolve_sigma(config.kernel.bandwidth, &e0m)?)
    } else {
        None
    };

    let mut stats = TrainStats::default();
    let mut indices: Vec<usize> = (0..n).collect();
    // halfway through: residual bandwidth re-selected, step size cut 10x
    let refreeze_epoch = config.epochs / 2;

    for epoch in 0..config.epochs {
        let lr = if epoch < refreeze_epoch || config.epochs < 2 {
            config.learning_rate
        } else {
            config.learning_rate * 0.1
        };
        if config.loss.is_kernel_loss()
            && epoch == refreeze_epoch
            && epoch > 0
            && !matches!(config.kernel.bandwidth, BandwidthRule::Fixed(_))
        {
            let e = &y_vec - model.forward_raw(x);
            let em = DMatrix::from_column_slice(n, 1, e.as_slice());
            if let Ok(s) = resolve_sigma(config.kernel.bandwidth, &em) {
                sigma_e = Some(s);
            }
        }
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in indices.chunks(config.batch_size) {
            let m = chunk.len();
            if m < 2 || (config.loss.is_kernel_loss() && m < 8) {
                continue;
            }
            let xb = DMatrix::from_fn(m, p, |i, j| x[(chunk[i], j)]);
            let yb = DVector::from_iterator(m, chunk.iter().map(|&i| y[i]));
            let (loss, grads) = batch_gradients(&model, &xb, &yb, config, sigma_x, sigma_e)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, msg: format!("loss = {loss}") });
            }
            opt.update(&mut model.layers, &grads, config.optimizer, lr);
            epoch_loss += loss;
            batches += 1;
        }
        if model
            .layers
            .iter()
            .any(|l| l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()))
        {
            return Err(Error::Divergence { epoch, msg: "non-finite parameters".into() });
        }
        stats.epoch_loss.push(epoch_loss / batches.max(1) as f64);
        if config.track_losses {
            let e = &y_vec - model.forward_raw(x);
            let em = DMatrix::from_column_slice(n, 1, e.as_slice());
            let se = sigma_e.unwrap_or(1.0);
            let spec_e = KernelSpec::rbf_fixed(se)?;
            let ae = gram(&em, &spec_e)?;
            stats.epoch_mee.push(nats_entropy(ae.entries(), config.alpha.value()));
            let sx = match sigma_x {
                Some(s) => s,
                None => resolve_sigma(config.kernel.bandwidth, x)?,
            };
            let ax = gram(x, &KernelSpec::rbf_fixed(sx)?)?;
            let (nmi, _) = nmi_loss_and_grad(&ax, &ae, config.alpha)?;
            stats.epoch_nmi.push(nmi);
        }
    }

    // source-bias correction: make the mean training residual zero
    let fitted = model.forward_raw(x);
    model.bias_correction = (y.iter().sum::<f64>() - fitted.sum()) / n as f64;
    Ok((model, stats))
}

/// Loss value and parameter gradients for one mini-batch.
fn batch_gradients(
    model: &Regressor,
    xb: &DMatrix<f64>,
    yb: &DVector<f64>,
    config: &TrainConfig,
    sigma_x: Option<f64>,
    sigma_e: Option<f64>,
) -> Result<(f64, Vec<(DMatrix<f64>, DVector<f64>)>)> {
    let m = xb.nrows();
    // forward, keeping the hidden activations for backprop
    let mut pre: Vec<DMatrix<f64>> = Vec::new(); // layer inputs (in x m)
    let mut cur = xb.transpose();
    for (li, layer) in model.layers.iter().enumerate() {
        pre.push(cur.clone());
        cur = &layer.weights * cur;
        for c in 0..m {
            for r in 0..layer.bias.len() {
                cur[(r, c)] += layer.bias[r];
            }
        }
        if li + 1 != model.layers.len() && model.activation == Activation::Rectifier {
            cur.apply(|v| *v = v.max(0.0));
        }
    }
    let out = DVector::from_iterator(m, (0..m).map(|c| cur[(0, c)]));
    let e = yb - &out;

    // dLoss/d(out)
    let (loss, dl_dout): (f64, DVector<f64>) = match config.loss {
        LossKind::Mse => {
            let loss = e.iter().map(|v| v * v).sum::<f64>() / m as f64;
            (loss, e.map(|v| -2.0 * v / m as f64))
        }
        LossKind::Mae => {
            let loss = e.iter().map(|v| v.abs()).sum::<f64>() / m as f64;
            (loss, e.map(|v| -v.signum() / m as f64))
        }
        LossKind::Mee => {
            let se = sigma_e.expect("sigma resolved for kernel loss");
            let spec = KernelSpec::rbf_fixed(se)?;
            let em = DMatrix::from_column_slice(m, 1, e.as_slice());
            let ae = gram(&em, &spec)?;
            let loss = nats_entropy(ae.entries(), config.alpha.value());
            let g = grad_entropy(&ae, config.alpha)?;
            let dl_de = backprop_to_samples(&g, &em, &spec)?;
            (loss, DVector::from_iterator(m, (0..m).map(|i| -dl_de[(i, 0)])))
        }
        LossKind::Nmi => {
            let se = sigma_e.expect("sigma resolved for kernel loss");
            let sx = sigma_x.expect("sigma resolved for nmi loss");
            let spec_e = KernelSpec::rbf_fixed(se)?;
            let em = DMatrix::from_column_slice(m, 1, e.as_slice());
            let ae = gram(&em, &spec_e)?;
            let ax = gram(xb, &KernelSpec::rbf_fixed(sx)?)?;
            let (loss, d_ae) = nmi_loss_and_grad(&ax, &ae, config.alpha)?;
            let dl_de = backprop_to_samples(&GramGradient::wrap(d_ae), &em, &spec_e)?;
            (loss, DVector::from_iterator(m, (0..m).map(|i| -dl_de[(i, 0)])))
        }
    };

    // backprop through the layers
    let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = model
        .layers
        .iter()
        .map(|l| (DMatrix::zeros(l.weights.nrows(), l.weights.ncols()), DVector::zeros(l.bias.len())))
        .collect();
    // delta: (out_dim x m) starting at the network output
    let mut delta = DMatrix::zeros(1, m);
    for c in 0..m {
        delta[(0, c)] = dl_dout[c];
    }
    for li in (0..model.layers.len()).rev() {
        let input = &pre[li]; // in x m
        grads[li].0 = &delta * input.transpose();
        for r in 0..grads[li].1.len() {
            grads[li].1[r] = delta.row(r).sum();
        }
        if li > 0 {
            let mut next = model.layers[li].weights.transpose() * &delta; // in x m
            if model.activation == Activation::Rectifier {
                // derivative through the rectifier of the previous layer's output
                let prev_out = {
                    let layer = &model.layers[li - 1];
                    let mut z = &layer.weights * &pre[li - 1];
                    for c in 0..m {
                        for r in 0..layer.bias.len() {
                            z[(r, c)] += layer.bias[r];
                        }
                    }
                    z
                };
                for c in 0..m {
                    for r in 0..next.nrows() {
                        if prev_out[(r, c)] <= 0.0 {
                            next[(r, c)] = 0.0;
                        }
                    }
                }
            }
            delta = next;
        }
    }
    Ok((loss, grads))
}

/// Noise models for the robustness experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    /// `Laplace(0, rho)`.
    Laplace,
    /// `rho * (1 - Exp(1))`: zero mean, skewed.
    ShiftedExponential,
    /// `Normal(0, rho)`.
    Gaussian,
}

/// One row of the robustness table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseExperimentRow {
    pub loss: LossKind,
    pub mean_rmse: f64,
    /// Mean over seeds of RMSE(loss) / RMSE(mse) on clean test targets.
    pub relative_rmse: f64,
}

/// Full report of [`noise_robustness_experiment`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseExperimentReport {
    pub noise: NoiseKind,
    pub rho: f64,
    pub seeds: usize,
    pub rows: Vec<NoiseExperimentRow>,
}

fn sample_noise<R: rand::Rng>(rng: &mut R, kind: NoiseKind, rho: f64) -> f64 {
    match kind {
        NoiseKind::Laplace => {
            let u: f64 = rng.random::<f64>() - 0.5;
            let arg = (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE);
            -rho * u.signum() * arg.ln()
        }
        NoiseKind::ShiftedExponential => {
            let e: f64 = -(rng.random::<f64>().max(f64::MIN_POSITIVE)).ln();
            rho * (1.0 - e)
        }
        NoiseKind::Gaussian => Normal::new(0.0, rho).unwrap().sample(rng),
    }
}

/// Train every requested loss on a noisy linear regression task and report
/// clean-target test RMSE relative to the MSE baseline, averaged over
/// `num_seeds` independent datasets. The regression target is a fixed
/// 3-feature linear map with inputs uniform on `[-1, 1]`; training labels
/// carry the additive noise, test targets are clean.
pub fn noise_robustness_experiment(
    noise: NoiseKind,
    rho: f64,
    losses: &[LossKind],
    num_seeds: usize,
    seed: u64,
) -> Result<NoiseExperimentReport> {
    if !(rho > 0.0) {
        return Err(Error::Argument("rho must be positive".into()));
    }
    if num_seeds == 0 {
        return Err(Error::Argument("need at least one seed".into()));
    }
    let mut all: Vec<LossKind> = vec![LossKind::Mse];
    for &l in losses {
        if !all.contains(&l) {
            all.push(l);
        }
    }
    let p = 8;
    let n_train = 512;
    let n_test = 4000;
    // fixed target, independent of the data seeds
    let mut wrng = seeded_rng(42, 7);
    let w_true: Vec<f64> = (0..p).map(|_| wrng.random::<f64>() * 4.0 - 2.0).collect();
    let b_true = 0.5;

    let mut sums: Vec<(f64, f64)> = vec![(0.0, 0.0); all.len()]; // (rmse, relative)
    for s in 0..num_seeds {
        let mut rng = seeded_rng(seed, 100 + s as u64);
        let xtr = DMatrix::from_fn(n_train, p, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let clean: Vec<f64> = (0..n_train)
            .map(|i| (0..p).map(|j| xtr[(i, j)] * w_true[j]).sum::<f64>() + b_true)
            .collect();
        let ytr: Vec<f64> =
            clean.iter().map(|&c| c + sample_noise(&mut rng, noise, rho)).collect();
        let xte = DMatrix::from_fn(n_test, p, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let yte: Vec<f64> = (0..n_test)
            .map(|i| (0..p).map(|j| xte[(i, j)] * w_true[j]).sum::<f64>() + b_true)
            .collect();

        let mut rmse = vec![0.0; all.len()];
        for (li, &loss) in all.iter().enumerate() {
            let mut config = TrainConfig::new(loss);
            config.batch_size = 128;
            config.epochs = 400;
            config.learning_rate = 0.01;
            config.seed = seed.wrapping_add(s as u64);
            let (model, _) = train(&xtr, &ytr, &config)?;
            let pred = model.predict(&xte)?;
            let mse: f64 =
                yte.iter().zip(pred.iter()).map(|(t, p)| (t - p) * (t - p)).sum::<f64>() / n_test as f64;
            rmse[li] = mse.sqrt();
        }
        for (li, r) in rmse.iter().enumerate() {
            sums[li].0 += r;
            sums[li].1 += r / rmse[0];
        }
    }
    let rows = all
        .iter()
        .zip(sums)
        .map(|(&loss, (r, rel))| NoiseExperimentRow {
            loss,
            mean_rmse: r / num_seeds as f64,
            relative_rmse: rel / num_seeds as f64,
        })
        .collect();
    Ok(NoiseExperimentReport { noise, rho, seeds: num_seeds, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_data(n: usize, seed: u64, noise_sd: f64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = seeded_rng(seed, 0);
        let g = Normal::new(0.0, 1.0).unwrap();
        let w = [1.5, -2.0, 0.7];
        let x = DMatrix::from_fn(n, 3, |_, _| g.sample(&mut rng));
        let y: Vec<f64> = (0..n)
            .map(|i| {
                (0..3).map(|j| x[(i, j)] * w[j]).sum::<f64>() + 0.3 + noise_sd * g.sample(&mut rng)
            })
            .collect();
        (x, y)
    }

    fn ols(x: &DMatrix<f64>, y: &[f64]) -> (DVector<f64>, f64) {
        let n = x.nrows();
        let p = x.ncols();
        let mut xd = DMatrix::from_element(n, p + 1, 1.0);
        xd.view_mut((0, 0), (n, p)).copy_from(x);
        let xtx = xd.transpose() * &xd;
        let xty = xd.transpose() * DVector::from_column_slice(y);
        let sol = xtx.lu().solve(&xty).unwrap();
        (sol.rows(0, p).into_owned(), sol[p])
    }

    #[test]
    fn mse_fits_noiseless_linear_data() {
        let (x, y) = linear_data(128, 1, 0.0);
        let mut config = TrainConfig::new(LossKind::Mse);
        config.epochs = 400;
        config.learning_rate = 0.02;
        let (model, _) = train(&x, &y, &config).unwrap();
        let pred = model.predict(&x).unwrap();
        let mse: f64 =
            y.iter().zip(pred.iter()).map(|(t, p)| (t - p) * (t - p)).sum::<f64>() / y.len() as f64;
        assert!(mse < 1e-6, "training MSE = {mse}");
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = linear_data(64, 2, 0.2);
        let mut config = TrainConfig::new(LossKind::Nmi);
        config.epochs = 20;
        config.batch_size = 32;
        let (a, _) = train(&x, &y, &config).unwrap();
        let (b, _) = train(&x, &y, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nmi_matches_least_squares_on_linear_gaussian_data() {
        let (x, y) = linear_data(256, 5, 0.5);
        let (xt, yt) = linear_data(2000, 6, 0.5);
        let (w, b) = ols(&x, &y);
        let res_ols: Vec<f64> = (0..xt.nrows())
            .map(|i| yt[i] - ((0..3).map(|j| xt[(i, j)] * w[j]).sum::<f64>() + b))
            .collect();
        let var_ols = variance(&res_ols);
        let mut config = TrainConfig::new(LossKind::Nmi);
        config.epochs = 400;
        config.batch_size = 64;
        let (model, _) = train(&x, &y, &config).unwrap();
        let pred = model.predict(&xt).unwrap();
        let res: Vec<f64> = yt.iter().zip(pred.iter()).map(|(t, p)| t - p).collect();
        let ratio = variance(&res) / var_ols;
        assert!((0.9..=1.1).contains(&ratio), "residual variance ratio = {ratio}");
    }

    fn variance(v: &[f64]) -> f64 {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
    }

    #[test]
    fn nmi_loss_is_shift_indifferent() {
        let (x, y) = linear_data(64, 3, 0.4);
        let spec = KernelSpec::rbf_fixed(1.1).unwrap();
        let ax = gram(&x, &spec).unwrap();
        let e: Vec<f64> = y.iter().map(|v| v * 0.5).collect();
        let em = DMatrix::from_column_slice(64, 1, &e);
        let shifted: Vec<f64> = e.iter().map(|v| v + 7.25).collect();
        let sm = DMatrix::from_column_slice(64, 1, &shifted);
        let ae = gram(&em, &spec).unwrap();
        let as_ = gram(&sm, &spec).unwrap();
        let (l1, _) = nmi_loss_and_grad(&ax, &ae, Alpha::TWO).unwrap();
        let (l2, _) = nmi_loss_and_grad(&ax, &as_, Alpha::TWO).unwrap();
        assert!((l1 - l2).abs() < 1e-9, "{l1} vs {l2}");
    }

    #[test]
    fn nmi_parameter_gradient_matches_finite_differences() {
        let mut rng = seeded_rng(7, 0);
        let g = Normal::new(0.0, 1.0).unwrap();
        let m = 16;
        let x = DMatrix::from_fn(m, 3, |_, _| g.sample(&mut rng));
        let y: Vec<f64> = (0..m).map(|_| g.sample(&mut rng)).collect();
        let yb = DVector::from_column_slice(&y);
        let mut config = TrainConfig::new(LossKind::Nmi);
        config.seed = 3;
        let model = Regressor::init(ModelKind::Linear, 3, 3).unwrap();
        let (sx, se) = (1.2, 0.9);
        let (_, grads) = batch_gradients(&model, &x, &yb, &config, Some(sx), Some(se)).unwrap();

        let loss_at = |model: &Regressor| -> f64 {
            let out = model.forward_raw(&x);
            let e = &yb - out;
            let em = DMatrix::from_column_slice(m, 1, e.as_slice());
            let ae = gram(&em, &KernelSpec::rbf_fixed(se).unwrap()).unwrap();
            let ax = gram(&x, &KernelSpec::rbf_fixed(sx).unwrap()).unwrap();
            nmi_loss_and_grad(&ax, &ae, Alpha::TWO).unwrap().0
        };
        let h = 1e-6;
        for j in 0..3 {
            let mut plus = model.clone();
            plus.layers[0].weights[(0, j)] += h;
            let mut minus = model.clone();
            minus.layers[0].weights[(0, j)] -= h;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            let analytic = grads[0].0[(0, j)];
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-10);
            assert!(rel < 1e-4, "w[{j}]: analytic {analytic} vs fd {fd} (rel {rel})");
        }
        // bias gradient is exactly zero: the loss cannot see a shift
        assert!(grads[0].1[0].abs() < 1e-12);
    }

    #[test]
    fn predict_applies_bias_correction() {
        let model = Regressor {
            layers: vec![Layer { weights: DMatrix::zeros(1, 2), bias: DVector::zeros(1) }],
            activation: Activation::Identity,
            bias_correction: 3.0,
        };
        let x = DMatrix::from_element(4, 2, 1.0);
        let out = model.predict(&x).unwrap();
        for v in out.iter() {
            assert_eq!(*v, 3.0);
        }
        assert!(model.predict(&DMatrix::from_element(4, 3, 1.0)).is_err());
    }

    #[test]
    fn bias_correction_zeroes_mean_training_residual() {
        let (x, y) = linear_data(64, 4, 0.3);
        let mut config = TrainConfig::new(LossKind::Mee);
        config.epochs = 30;
        config.batch_size = 32;
        let (model, _) = train(&x, &y, &config).unwrap();
        let pred = model.predict(&x).unwrap();
        let mean_res: f64 = y.iter().zip(pred.iter()).map(|(t, p)| t - p).sum::<f64>() / y.len() as f64;
        assert!(mean_res.abs() < 1e-10, "mean residual = {mean_res}");
    }

    #[test]
    fn mlp_trains_on_nonlinear_target() {
        let mut rng = seeded_rng(9, 0);
        let n = 256;
        let x = DMatrix::from_fn(n, 1, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let y: Vec<f64> = (0..n).map(|i| (2.5 * x[(i, 0)]).sin()).collect();
        let mut config = TrainConfig::new(LossKind::Mse);
        config.model = ModelKind::Mlp { hidden: 32 };
        config.epochs = 600;
        config.learning_rate = 0.01;
        let (model, _) = train(&x, &y, &config).unwrap();
        let pred = model.predict(&x).unwrap();
        let mse: f64 =
            y.iter().zip(pred.iter()).map(|(t, p)| (t - p) * (t - p)).sum::<f64>() / n as f64;
        // linear fit of sin on [-1,1] leaves mse ~ 0.02; the mlp must beat it
        assert!(mse < 5e-3, "mlp training mse = {mse}");
    }

    #[test]
    fn checkpoint_roundtrip_and_validation() {
        let (x, y) = linear_data(64, 8, 0.1);
        let mut config = TrainConfig::new(LossKind::Mse);
        config.epochs = 10;
        let (model, _) = train(&x, &y, &config).unwrap();
        let json = model.to_json().unwrap();
        let back = Regressor::from_json(json.as_bytes()).unwrap();
        assert_eq!(model, back);
        assert!(Regressor::from_json(b"not json").is_err());
        assert!(Regressor::from_json(br#"{"format":"gramdep-regressor","version":9,"activation":"identity","bias_correction":0,"layers":[]}"#).is_err());
        // shape mismatch
        let bad = br#"{"format":"gramdep-regressor","version":1,"activation":"identity","bias_correction":0.0,"layers":[{"rows":1,"cols":2,"weights":[1.0],"bias":[0.0]}]}"#;
        assert!(Regressor::from_json(bad).is_err());
    }

    #[test]
    fn nmi_and_mee_trajectories_rank_models_alike() {
        let (x, y) = linear_data(192, 11, 0.5);
        let mut config = TrainConfig::new(LossKind::Nmi);
        config.epochs = 60;
        config.batch_size = 64;
        config.track_losses = true;
        let (_, stats) = train(&x, &y, &config).unwrap();
        let rho = spearman(&stats.epoch_nmi, &stats.epoch_mee);
        assert!(rho > 0.8, "Spearman(nmi, mee) = {rho}");
    }

    fn spearman(a: &[f64], b: &[f64]) -> f64 {
        fn ranks(v: &[f64]) -> Vec<f64> {
            let mut order: Vec<usize> = (0..v.len()).collect();
            order.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
            let mut r = vec![0.0; v.len()];
            for (rank, &idx) in order.iter().enumerate() {
                r[idx] = rank as f64;
            }
            r
        }
        let (ra, rb) = (ranks(a), ranks(b));
        let n = ra.len() as f64;
        let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for (x, y) in ra.iter().zip(&rb) {
            cov += (x - ma) * (y - mb);
            va += (x - ma) * (x - ma);
            vb += (y - mb) * (y - mb);
        }
        cov / (va.sqrt() * vb.sqrt())
    }
}
