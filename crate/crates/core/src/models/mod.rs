//! Baseline classifiers: logistic regression, an MLP and a small CNN, all
//! running on a minimal layer engine in double precision.

mod checkpoint;
mod gradcheck;
pub mod layers;
mod logreg;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use gradcheck::{grad_check, rel_error, GradCheckOptions, GradCheckReport};
pub use layers::{sigmoid, softplus, LayerSpec, Mode, Network, Shape};
pub use logreg::{fit_logreg, logreg_objective, LOGREG_GRAD_TOL, LOGREG_L2};

use crate::features::{N_FRAMES, N_MFCC};

/// MFCC input: coefficients as rows, frames as columns, one channel.
pub const INPUT_SHAPE: Shape = Shape::new(N_MFCC, N_FRAMES, 1);
pub const DROPOUT: f64 = 0.4;
pub const MLP_L2: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("non-finite value in training input")]
    NonFinite,
    #[error("training loss diverged at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("optimizer stopped with gradient norm {grad_norm:e}")]
    NotConverged { grad_norm: f64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    LogReg,
    Mlp,
    Cnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::LogReg, ModelKind::Mlp, ModelKind::Cnn];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::LogReg => "logreg",
            ModelKind::Mlp => "mlp",
            ModelKind::Cnn => "cnn",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "logreg" => Ok(ModelKind::LogReg),
            "mlp" => Ok(ModelKind::Mlp),
            "cnn" => Ok(ModelKind::Cnn),
            _ => Err(format!("unknown model kind {s:?}")),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
}

impl ModelSpec {
    pub fn for_kind(kind: ModelKind, seed: u64) -> Self {
        match kind {
            ModelKind::LogReg => Self::logreg(INPUT_SHAPE.len()),
            ModelKind::Mlp => Self::mlp(seed),
            ModelKind::Cnn => Self::cnn(seed),
        }
    }

    /// A single sigmoid unit over the flattened input. The penalty lives in
    /// the solver, not in the layer.
    pub fn logreg(n_features: usize) -> Self {
        ModelSpec {
            kind: ModelKind::LogReg,
            input: Shape::flat(n_features),
            layers: vec![LayerSpec::Dense { units: 1, l2: 0.0 }, LayerSpec::Sigmoid],
            seed: 0,
        }
    }

    pub fn mlp(seed: u64) -> Self {
        use LayerSpec::*;
        ModelSpec {
            kind: ModelKind::Mlp,
            input: INPUT_SHAPE,
            layers: vec![
                Flatten,
                Dense { units: 128, l2: MLP_L2 },
                Relu,
                Dropout { rate: DROPOUT },
                Dense { units: 32, l2: MLP_L2 },
                Relu,
                Dropout { rate: DROPOUT },
                Dense { units: 1, l2: 0.0 },
                Sigmoid,
            ],
            seed,
        }
    }

    pub fn cnn(seed: u64) -> Self {
        use LayerSpec::*;
        let block = |k: usize| {
            [
                Conv2d { filters: 32, kh: k, kw: k, l2: 0.0 },
                Relu,
                MaxPool { ph: k, pw: k, stride: 2 },
                Dropout { rate: DROPOUT },
            ]
        };
        let mut layers: Vec<LayerSpec> = [block(3), block(3), block(2)].concat();
        layers.extend([
            Flatten,
            Dense { units: 32, l2: 0.0 },
            Relu,
            Dropout { rate: DROPOUT },
            Dense { units: 1, l2: 0.0 },
            Sigmoid,
        ]);
        ModelSpec {
            kind: ModelKind::Cnn,
            input: INPUT_SHAPE,
            layers,
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn build(&self) -> Result<Network, ModelError> {
        Network::new(self.input, &self.layers, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Seeds batch shuffling and dropout masks.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 216,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.epsilon > 0.0) {
            return bad("learning rate and epsilon must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("betas must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub net: Network,
    /// Per-epoch training loss for networks; per-iteration objective for
    /// logistic regression.
    pub history: Vec<f64>,
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, ModelError> {
        self.net.predict(x)
    }

    pub fn predict_batch<X: AsRef<[f64]>>(&self, xs: &[X]) -> Result<Vec<f64>, ModelError> {
        xs.iter().map(|x| self.net.predict(x.as_ref())).collect()
    }
}

/// Balanced class weights `(negative, positive)`: `n / (2 · n_c)`.
pub fn class_weights(labels: &[bool]) -> Result<(f64, f64), ModelError> {
    let n = labels.len() as f64;
    let pos = labels.iter().filter(|&&y| y).count() as f64;
    let neg = n - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(ModelError::SingleClass);
    }
    Ok((n / (2.0 * neg), n / (2.0 * pos)))
}

/// Binary cross-entropy from the pre-sigmoid logit.
pub fn bce_from_logit(z: f64, y: bool) -> f64 {
    if y {
        softplus(-z)
    } else {
        softplus(z)
    }
}

/// Mean weighted cross-entropy over a batch plus the L2 penalty, and its
/// gradients. Dropout masks come from `rng` when given.
pub fn batch_loss_and_grads<X: AsRef<[f64]>>(
    net: &Network,
    xs: &[X],
    ys: &[bool],
    weights: &[f64],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, layers::Grads), ModelError> {
    let b = xs.len() as f64;
    let mut grads = net.zero_grads();
    let mut data = 0.0;
    for ((x, &y), &w) in xs.iter().zip(ys).zip(weights) {
        let mode = match rng.as_deref_mut() {
            Some(r) => Mode::Train(r),
            None => Mode::Eval,
        };
        let trace = net.forward(x.as_ref(), mode)?;
        data += w * bce_from_logit(trace.logit, y);
        let d = w * (trace.output - y as u8 as f64) / b;
        net.backward(&trace, d, &mut grads);
    }
    for ((g, p), l2) in grads.iter_mut().zip(net.params()).zip(net.l2_per_tensor()) {
        if l2 > 0.0 {
            for (gi, pi) in g.iter_mut().zip(p.iter()) {
                *gi += 2.0 * l2 * pi;
            }
        }
    }
    Ok((data / b + net.l2_penalty(), grads))
}

struct Adam {
    m: layers::Grads,
    v: layers::Grads,
    t: i32,
}

impl Adam {
    fn new(net: &Network) -> Self {
        Adam {
            m: net.zero_grads(),
            v: net.zero_grads(),
            t: 0,
        }
    }

    fn step(&mut self, net: &mut Network, grads: &layers::Grads, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (k, p) in net.params_mut().into_iter().enumerate() {
            for i in 0..p.len() {
                let g = grads[k][i];
                self.m[k][i] = cfg.beta1 * self.m[k][i] + (1.0 - cfg.beta1) * g;
                self.v[k][i] = cfg.beta2 * self.v[k][i] + (1.0 - cfg.beta2) * g * g;
                let mhat = self.m[k][i] / c1;
                let vhat = self.v[k][i] / c2;
                p[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
            }
        }
    }
}

fn check_inputs<X: AsRef<[f64]>>(xs: &[X], ys: &[bool], want: usize) -> Result<(), ModelError> {
    if xs.len() != ys.len() {
        return Err(ModelError::ShapeMismatch(format!("{} inputs, {} labels", xs.len(), ys.len())));
    }
    for x in xs {
        let x = x.as_ref();
        if x.len() != want {
            return Err(ModelError::ShapeMismatch(format!("input has {} values, expected {want}", x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
    }
    Ok(())
}

/// Mini-batch Adam on class-weighted cross-entropy. Deterministic given the
/// spec seed, the config seed and the data order.
pub fn train<X: AsRef<[f64]>>(spec: &ModelSpec, xs: &[X], ys: &[bool], cfg: &TrainConfig) -> Result<TrainedModel, ModelError> {
    cfg.validate()?;
    check_inputs(xs, ys, spec.input.len())?;
    let (w_neg, w_pos) = class_weights(ys)?;
    let mut net = spec.build()?;
    let mut adam = Adam::new(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_data = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let bx: Vec<&[f64]> = chunk.iter().map(|&i| xs[i].as_ref()).collect();
            let by: Vec<bool> = chunk.iter().map(|&i| ys[i]).collect();
            let bw: Vec<f64> = by.iter().map(|&y| if y { w_pos } else { w_neg }).collect();
            let (loss, grads) = batch_loss_and_grads(&net, &bx, &by, &bw, Some(&mut rng))?;
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch });
            }
            epoch_data += (loss - net.l2_penalty()) * chunk.len() as f64;
            adam.step(&mut net, &grads, cfg);
        }
        let loss = epoch_data / xs.len() as f64 + net.l2_penalty();
        if !loss.is_finite() || net.params().iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(ModelError::NonFiniteLoss { epoch });
        }
        history.push(loss);
    }
    Ok(TrainedModel {
        spec: spec.clone(),
        net,
        history,
    })
}

/// Fits `kind` on the given data: the convex solver for logistic regression,
/// Adam otherwise.
pub fn fit<X: AsRef<[f64]>>(kind: ModelKind, xs: &[X], ys: &[bool], cfg: &TrainConfig) -> Result<TrainedModel, ModelError> {
    match kind {
        ModelKind::LogReg => fit_logreg(xs, ys, LOGREG_L2),
        _ => train(&ModelSpec::for_kind(kind, cfg.seed), xs, ys, cfg),
    }
}
