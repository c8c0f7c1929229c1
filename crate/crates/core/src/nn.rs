//! Fully connected networks trained with a per-pattern loss `o` summed
//! plainly, or coupled through pattern similarity as `o'So`.
//!
//! Hidden layers use ReLU and an L2 weight penalty; the output is a single
//! sigmoid unit (classification, binary cross-entropy) or an identity unit
//! (regression, squared error).

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Task};
use crate::error::{Error, Result};
use crate::eval::{f1, mse};
use crate::kernel::{build_gram, FeatureMatrix, GramMatrix};
use crate::rng::{streams, substream};

/// Default L2 coefficient on hidden-layer weights.
pub const DEFAULT_WEIGHT_PENALTY: f64 = 1e-4;
/// Sigmoid outputs are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before BCE.
pub const PROB_CLAMP: f64 = 1e-7;
/// Similarity exponents tried when none is given.
pub const GAMMA_S_LINE_SEARCH: [f64; 5] = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Sigmoid,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerPatternKind {
    /// Binary cross-entropy on targets in {0, 1}.
    Bce,
    /// Squared error.
    Sq,
}

/// How per-pattern losses `o` are reduced to a batch loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LossKind {
    /// `sum_i o_i`.
    Standard,
    /// `sum_i o_i^2`, the GQL loss at `S = I`.
    SquaredPerPattern,
    /// `o'So` with `S` built over the batch; an infinite exponent means `S = I`.
    Gql { gamma_s: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            out.push(w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.biases[o]);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<Layer>,
    pub output: OutputActivation,
    pub weight_penalty: f64,
}

/// Parameter-shaped gradient.
pub type Gradient = Vec<Layer>;

impl MlpModel {
    /// `layer_sizes` is `[d, hidden..., 1]`. Weights are drawn from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases start at zero.
    pub fn new(
        layer_sizes: &[usize],
        output: OutputActivation,
        weight_penalty: f64,
        seed: u64,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::input(
                "layer sizes need an input and an output, all nonzero",
            ));
        }
        if *layer_sizes.last().unwrap() != 1 {
            return Err(Error::input("the output layer must have one unit"));
        }
        if !(weight_penalty >= 0.0) {
            return Err(Error::input("weight penalty must be nonnegative"));
        }
        let mut rng = substream(seed, streams::NN_INIT);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let mut l = Layer::zeros(w[0], w[1]);
                let limit = 1.0 / (w[0] as f64).sqrt();
                for v in &mut l.weights {
                    *v = rng.random_range(-limit..limit);
                }
                l
            })
            .collect();
        Ok(MlpModel {
            layer_sizes: layer_sizes.to_vec(),
            layers,
            output,
            weight_penalty,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Mutable reference to the `idx`-th parameter in layer order, weights
    /// before biases.
    pub fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for l in &mut self.layers {
            if idx < l.weights.len() {
                return &mut l.weights[idx];
            }
            idx -= l.weights.len();
            if idx < l.biases.len() {
                return &mut l.biases[idx];
            }
            idx -= l.biases.len();
        }
        panic!("parameter index out of range");
    }

    /// Activations of every layer (input first, output pre-activation last).
    fn forward_cache(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.outputs);
            layer.forward(acts.last().unwrap(), &mut z);
            if li < last {
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            acts.push(z);
        }
        acts
    }

    fn activate(&self, z: f64) -> f64 {
        match self.output {
            OutputActivation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            OutputActivation::Identity => z,
        }
    }

    /// Network output for one pattern.
    pub fn forward(&self, x: &[f64]) -> f64 {
        let acts = self.forward_cache(x);
        self.activate(acts.last().unwrap()[0])
    }

    pub fn predict_raw(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        if x.cols() != self.input_dim() {
            return Err(Error::input(format!(
                "network expects {} features, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        Ok(x.iter_rows().map(|r| self.forward(r)).collect())
    }

    /// Labels in {-1, +1} (classification) or real predictions (regression).
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        let raw = self.predict_raw(x)?;
        Ok(match self.output {
            OutputActivation::Sigmoid => raw
                .into_iter()
                .map(|p| if p >= 0.5 { 1.0 } else { -1.0 })
                .collect(),
            OutputActivation::Identity => raw,
        })
    }

    fn penalty(&self) -> f64 {
        let hidden = self.layers.len() - 1;
        self.weight_penalty
            * self.layers[..hidden]
                .iter()
                .flat_map(|l| &l.weights)
                .map(|w| w * w)
                .sum::<f64>()
    }

    fn zero_gradient(&self) -> Gradient {
        self.layers
            .iter()
            .map(|l| Layer::zeros(l.inputs, l.outputs))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Per-pattern losses `o`.
pub fn per_pattern_loss(pred: &[f64], target: &[f64], kind: PerPatternKind) -> Vec<f64> {
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| match kind {
            PerPatternKind::Bce => {
                let p = clamp_prob(p);
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            }
            PerPatternKind::Sq => (t - p) * (t - p),
        })
        .collect()
}

/// `d o / d pred`; zero where the probability clamp is active.
fn per_pattern_grad(p: f64, t: f64, kind: PerPatternKind) -> f64 {
    match kind {
        PerPatternKind::Bce => {
            if p != clamp_prob(p) {
                0.0
            } else {
                -t / p + (1.0 - t) / (1.0 - p)
            }
        }
        PerPatternKind::Sq => 2.0 * (p - t),
    }
}

/// `o'So`.
pub fn gql_loss(o: &[f64], s: &GramMatrix) -> f64 {
    s.quad_form(o)
}

/// `d(o'So)/do = 2So` for symmetric `S`.
pub fn gql_loss_grad(o: &[f64], s: &GramMatrix) -> Vec<f64> {
    s.mul_vec(o).into_iter().map(|v| 2.0 * v).collect()
}

/// Similarity over the rows of `x`; an infinite exponent yields `I`.
pub fn batch_similarity(x: &FeatureMatrix, gamma_s: f64) -> Result<GramMatrix> {
    if gamma_s == f64::INFINITY {
        Ok(GramMatrix::identity(x.rows()))
    } else {
        build_gram(x, gamma_s)
    }
}

fn reduce(o: &[f64], loss: LossKind, s: Option<&GramMatrix>) -> (f64, Vec<f64>) {
    match loss {
        LossKind::Standard => (o.iter().sum(), vec![1.0; o.len()]),
        LossKind::SquaredPerPattern => (
            o.iter().map(|v| v * v).sum(),
            o.iter().map(|v| 2.0 * v).collect(),
        ),
        LossKind::Gql { .. } => {
            let s = s.expect("similarity built for GQL");
            (gql_loss(o, s), gql_loss_grad(o, s))
        }
    }
}

fn kind_for(model: &MlpModel) -> PerPatternKind {
    match model.output {
        OutputActivation::Sigmoid => PerPatternKind::Bce,
        OutputActivation::Identity => PerPatternKind::Sq,
    }
}

/// Training targets: {-1,+1} labels become {0,1} for the sigmoid output.
fn train_targets(model: &MlpModel, y: &[f64]) -> Vec<f64> {
    match model.output {
        OutputActivation::Sigmoid => y.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect(),
        OutputActivation::Identity => y.to_vec(),
    }
}

/// Batch objective (loss plus weight penalty) and its gradient.
/// `targets` are already in training encoding.
pub fn batch_objective_grad(
    model: &MlpModel,
    x: &FeatureMatrix,
    targets: &[f64],
    loss: LossKind,
) -> Result<(f64, Gradient)> {
    let s = match loss {
        LossKind::Gql { gamma_s } => Some(batch_similarity(x, gamma_s)?),
        _ => None,
    };
    let kind = kind_for(model);
    let caches: Vec<Vec<Vec<f64>>> = x.iter_rows().map(|r| model.forward_cache(r)).collect();
    let preds: Vec<f64> = caches
        .iter()
        .map(|c| model.activate(c.last().unwrap()[0]))
        .collect();
    let o = per_pattern_loss(&preds, targets, kind);
    let (value, dl_do) = reduce(&o, loss, s.as_ref());

    let mut grad = model.zero_gradient();
    let last = model.layers.len() - 1;
    for (n, acts) in caches.iter().enumerate() {
        let p = preds[n];
        let dp_dz = match model.output {
            OutputActivation::Sigmoid => p * (1.0 - p),
            OutputActivation::Identity => 1.0,
        };
        let mut delta = vec![dl_do[n] * per_pattern_grad(p, targets[n], kind) * dp_dz];
        for li in (0..=last).rev() {
            let layer = &model.layers[li];
            let input = &acts[li];
            let g = &mut grad[li];
            for o in 0..layer.outputs {
                g.biases[o] += delta[o];
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, a) in row.iter_mut().zip(input) {
                    *gw += delta[o] * a;
                }
            }
            if li > 0 {
                let mut prev = vec![0.0; layer.inputs];
                for o in 0..layer.outputs {
                    let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (pv, wv) in prev.iter_mut().zip(w) {
                        *pv += delta[o] * wv;
                    }
                }
                // ReLU derivative from the post-activation value
                for (pv, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *pv = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }
    for (g, l) in grad[..last].iter_mut().zip(&model.layers[..last]) {
        for (gw, w) in g.weights.iter_mut().zip(&l.weights) {
            *gw += 2.0 * model.weight_penalty * w;
        }
    }
    Ok((value + model.penalty(), grad))
}

/// Batch objective only.
pub fn batch_objective(
    model: &MlpModel,
    x: &FeatureMatrix,
    targets: &[f64],
    loss: LossKind,
) -> Result<f64> {
    let kind = kind_for(model);
    let preds = model.predict_raw(x)?;
    let o = per_pattern_loss(&preds, targets, kind);
    let value = match loss {
        LossKind::Gql { gamma_s } => gql_loss(&o, &batch_similarity(x, gamma_s)?),
        _ => reduce(&o, loss, None).0,
    };
    Ok(value + model.penalty())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::input("epochs and batch size must be at least 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::input("learning rate must be positive"));
        }
        Ok(())
    }
}

struct Adam {
    m: Gradient,
    v: Gradient,
    t: i32,
}

impl Adam {
    fn new(model: &MlpModel) -> Self {
        Adam {
            m: model.zero_gradient(),
            v: model.zero_gradient(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut MlpModel, grad: &Gradient, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let update = |params: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for k in 0..params.len() {
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
                params[k] -= cfg.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + cfg.eps);
            }
        };
        for (li, layer) in model.layers.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[li], &mut self.v[li]);
            update(
                &mut layer.weights,
                &grad[li].weights,
                &mut m.weights,
                &mut v.weights,
            );
            update(
                &mut layer.biases,
                &grad[li].biases,
                &mut m.biases,
                &mut v.biases,
            );
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sum of batch objectives over the epoch.
    pub loss: f64,
    pub val_metric: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub trace: Vec<EpochRecord>,
    /// Epoch at which the loss became non-finite; training stopped there.
    pub non_finite_at: Option<usize>,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.loss).collect()
    }

    pub fn check(&self) -> Result<()> {
        match self.non_finite_at {
            Some(epoch) => Err(Error::NonFiniteLoss { epoch }),
            None => Ok(()),
        }
    }

    /// Writes `epoch,loss,val_metric` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "loss", "val_metric"])?;
        for r in &self.trace {
            w.write_record([
                r.epoch.to_string(),
                r.loss.to_string(),
                r.val_metric.map_or(String::new(), |v| v.to_string()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trains `model` in place with Adam. Classification GQL uses the whole
/// training set as one batch; otherwise minibatches of `cfg.batch_size` are
/// drawn in a seeded order each epoch.
pub fn train(
    model: &mut MlpModel,
    data: &Dataset,
    cfg: &TrainConfig,
    loss: LossKind,
    val: Option<&Dataset>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::input("empty training set"));
    }
    if data.dim() != model.input_dim() {
        return Err(Error::input(format!(
            "network expects {} features, data has {}",
            model.input_dim(),
            data.dim()
        )));
    }
    let expected = match data.task {
        Task::Classification => OutputActivation::Sigmoid,
        Task::Regression => OutputActivation::Identity,
    };
    if model.output != expected {
        return Err(Error::input("output activation does not match the task"));
    }
    if let LossKind::Gql { gamma_s } = loss {
        if !(gamma_s > 0.0) {
            return Err(Error::input("gamma_S must be positive"));
        }
    }
    let n = data.len();
    let batch_size = match (loss, data.task) {
        (LossKind::Gql { .. }, Task::Classification) => n,
        _ => cfg.batch_size.min(n),
    };
    let targets = train_targets(model, &data.targets);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = substream(cfg.seed, streams::BATCH_ORDER);
    let mut adam = Adam::new(model);
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        if batch_size < n {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for chunk in order.chunks(batch_size) {
            let xb = data.features.select(chunk)?;
            let tb: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();
            let (value, grad) = batch_objective_grad(model, &xb, &tb, loss)?;
            total += value;
            if !value.is_finite() {
                break;
            }
            adam.step(model, &grad, cfg);
        }
        if !total.is_finite() {
            return Ok(TrainReport {
                trace,
                non_finite_at: Some(epoch),
            });
        }
        let val_metric = val.map(|v| evaluate(model, v)).transpose()?;
        trace.push(EpochRecord {
            epoch,
            loss: total,
            val_metric,
        });
    }
    Ok(TrainReport {
        trace,
        non_finite_at: None,
    })
}

/// F1 for classification, MSE for regression.
pub fn evaluate(model: &MlpModel, data: &Dataset) -> Result<f64> {
    let pred = model.predict(&data.features)?;
    Ok(match data.task {
        Task::Classification => f1(&pred, &data.targets),
        Task::Regression => mse(&pred, &data.targets),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn blobs(n: usize, seed: u64, task: Task) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let pos = i % 2 == 0;
            let c = if pos { 1.5 } else { -1.5 };
            rows.push(vec![
                c + rng.random_range(-0.5..0.5),
                c + rng.random_range(-0.5..0.5),
            ]);
            y.push(match task {
                Task::Classification => {
                    if pos {
                        1.0
                    } else {
                        -1.0
                    }
                }
                Task::Regression => rows[i][0] + 0.5 * rows[i][1],
            });
        }
        Dataset::new("blobs", FeatureMatrix::from_rows(&rows).unwrap(), y, task).unwrap()
    }

    #[test]
    fn bce_and_sq_closed_forms() {
        let o = per_pattern_loss(&[0.5], &[1.0], PerPatternKind::Bce);
        assert!((o[0] - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(
            per_pattern_loss(&[0.3], &[0.3], PerPatternKind::Sq),
            vec![0.0]
        );
        assert_eq!(
            per_pattern_loss(&[3.0], &[1.0], PerPatternKind::Sq),
            vec![4.0]
        );
        // clamped, finite
        assert!(per_pattern_loss(&[0.0], &[1.0], PerPatternKind::Bce)[0].is_finite());
    }

    #[test]
    fn gql_identity_and_zero() {
        let o = [0.3, -1.2, 2.0];
        let i3 = GramMatrix::identity(3);
        assert_eq!(gql_loss(&o, &i3), o.iter().map(|v| v * v).sum::<f64>());
        assert_eq!(gql_loss_grad(&o, &i3), vec![0.6, -2.4, 4.0]);
        assert_eq!(gql_loss(&[0.0; 3], &i3), 0.0);
        assert_eq!(gql_loss_grad(&[0.0; 3], &i3), vec![0.0; 3]);
    }

    #[test]
    fn gql_matches_dense_quadratic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = FeatureMatrix::new(5, 2, (0..10).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap();
        let s = build_gram(&x, 0.7).unwrap();
        let o: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..2.0)).collect();
        let mut want = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                want += o[i] * s.get(i, j) * o[j];
            }
        }
        assert!((gql_loss(&o, &s) - want).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (task, out) in [
            (Task::Classification, OutputActivation::Sigmoid),
            (Task::Regression, OutputActivation::Identity),
        ] {
            let d = blobs(8, 5, task);
            let model = MlpModel::new(&[2, 5, 4, 1], out, 1e-2, 9).unwrap();
            let t = train_targets(&model, &d.targets);
            let loss = LossKind::Gql { gamma_s: 0.5 };
            let (_, grad) = batch_objective_grad(&model, &d.features, &t, loss).unwrap();
            let flat: Vec<f64> = grad
                .iter()
                .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
                .collect();
            let h = 1e-6;
            for idx in 0..model.param_count() {
                let mut mp = model.clone();
                *mp.param_mut(idx) += h;
                let mut mm = model.clone();
                *mm.param_mut(idx) -= h;
                let fd = (batch_objective(&mp, &d.features, &t, loss).unwrap()
                    - batch_objective(&mm, &d.features, &t, loss).unwrap())
                    / (2.0 * h);
                let err = (fd - flat[idx]).abs() / fd.abs().max(flat[idx].abs()).max(1e-3);
                assert!(err < 1e-5, "{task:?} param {idx}: {} vs {fd}", flat[idx]);
            }
        }
    }

    #[test]
    fn identity_similarity_reproduces_squared_loss_trace() {
        let d = blobs(12, 6, Task::Classification);
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 12,
            seed: 3,
            ..Default::default()
        };
        let mut a = MlpModel::new(
            &[2, 6, 1],
            OutputActivation::Sigmoid,
            DEFAULT_WEIGHT_PENALTY,
            3,
        )
        .unwrap();
        let mut b = a.clone();
        let ra = train(&mut a, &d, &cfg, LossKind::SquaredPerPattern, None).unwrap();
        let rb = train(
            &mut b,
            &d,
            &cfg,
            LossKind::Gql {
                gamma_s: f64::INFINITY,
            },
            None,
        )
        .unwrap();
        for (x, y) in ra.losses().iter().zip(rb.losses()) {
            assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn separable_toy_is_learned() {
        let d = blobs(20, 7, Task::Classification);
        let cfg = TrainConfig {
            epochs: 500,
            batch_size: 20,
            lr: 1e-2,
            seed: 1,
            ..Default::default()
        };
        let mut m = MlpModel::new(
            &[2, 8, 1],
            OutputActivation::Sigmoid,
            DEFAULT_WEIGHT_PENALTY,
            1,
        )
        .unwrap();
        let r = train(&mut m, &d, &cfg, LossKind::Gql { gamma_s: 0.1 }, None).unwrap();
        r.check().unwrap();
        assert_eq!(evaluate(&m, &d).unwrap(), 1.0);
    }

    #[test]
    fn training_is_deterministic_and_checkpoint_round_trips() {
        let d = blobs(16, 8, Task::Regression);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 4,
            seed: 11,
            ..Default::default()
        };
        let run = || {
            let mut m = MlpModel::new(
                &[2, 4, 1],
                OutputActivation::Identity,
                DEFAULT_WEIGHT_PENALTY,
                2,
            )
            .unwrap();
            let r = train(&mut m, &d, &cfg, LossKind::Gql { gamma_s: 0.1 }, Some(&d)).unwrap();
            (m, r)
        };
        let (m1, r1) = run();
        let (m2, r2) = run();
        assert_eq!(m1, m2);
        assert_eq!(r1, r2);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        m1.save(&p).unwrap();
        assert_eq!(MlpModel::load(&p).unwrap(), m1);
        r1.write_csv(dir.path().join("t.csv")).unwrap();
    }

    #[test]
    fn batch_permutation_leaves_loss_unchanged() {
        let d = blobs(6, 9, Task::Regression);
        let m = MlpModel::new(&[2, 3, 1], OutputActivation::Identity, 0.0, 4).unwrap();
        let loss = LossKind::Gql { gamma_s: 0.3 };
        let a = batch_objective(&m, &d.features, &d.targets, loss).unwrap();
        let perm = [3, 0, 5, 1, 4, 2];
        let pd = d.subset(&perm).unwrap();
        let b = batch_objective(&m, &pd.features, &pd.targets, loss).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(MlpModel::new(&[2], OutputActivation::Sigmoid, 0.0, 0).is_err());
        assert!(MlpModel::new(&[2, 3, 2], OutputActivation::Sigmoid, 0.0, 0).is_err());
        let d = blobs(4, 1, Task::Classification);
        let mut m = MlpModel::new(&[3, 1], OutputActivation::Sigmoid, 0.0, 0).unwrap();
        assert!(train(
            &mut m,
            &d,
            &TrainConfig::default(),
            LossKind::Standard,
            None
        )
        .is_err());
    }
}
