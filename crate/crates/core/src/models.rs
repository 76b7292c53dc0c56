//! Target models: n-dimensional logistic regression and a one-hidden-layer
//! sigmoid network, trained by full-batch gradient descent on cross-entropy.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::seeded;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Probability threshold for the positive label; ties go to label 1.
pub fn label_of(prob: f64) -> u8 {
    u8::from(prob >= 0.5)
}

/// Anything that maps an n-vector to a class-1 probability.
pub trait Classifier {
    fn dim(&self) -> usize;

    /// Probability of label 1. Implementations check the input width.
    fn predict_prob(&self, x: &[f64]) -> Result<f64>;

    fn predict_label(&self, x: &[f64]) -> Result<u8> {
        self.predict_prob(x).map(label_of)
    }
}

fn check_dim(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::DimensionMismatch { expected, got: x.len() });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub hidden_units: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.1, epochs: 2000, hidden_units: 8, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.hidden_units == 0 {
            return Err(Error::InvalidConfig("hidden_units must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub a: Vec<f64>,
    pub b: f64,
}

impl LogisticModel {
    pub fn new(a: Vec<f64>, b: f64) -> Self {
        Self { a, b }
    }

    pub fn zeros(n: usize) -> Self {
        Self { a: vec![0.0; n], b: 0.0 }
    }

    /// The linear pre-activation `aᵀx + b`.
    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.a.len(), x)?;
        Ok(self.logit_unchecked(x))
    }

    fn logit_unchecked(&self, x: &[f64]) -> f64 {
        self.a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() + self.b
    }

    /// Mean cross-entropy over `(inputs, targets)`; targets may be soft.
    pub fn loss(&self, inputs: &[Vec<f64>], targets: &[f64]) -> f64 {
        let m = inputs.len() as f64;
        inputs
            .iter()
            .zip(targets)
            .map(|(x, &t)| cross_entropy_from_logit(self.logit_unchecked(x), t))
            .sum::<f64>()
            / m
    }

    /// Gradient of [`loss`](Self::loss) with respect to `(a, b)`.
    pub fn gradient(&self, inputs: &[Vec<f64>], targets: &[f64]) -> (Vec<f64>, f64) {
        let m = inputs.len() as f64;
        let mut ga = vec![0.0; self.a.len()];
        let mut gb = 0.0;
        for (x, &t) in inputs.iter().zip(targets) {
            let err = sigmoid(self.logit_unchecked(x)) - t;
            for (g, xi) in ga.iter_mut().zip(x) {
                *g += err * xi;
            }
            gb += err;
        }
        ga.iter_mut().for_each(|g| *g /= m);
        (ga, gb / m)
    }
}

impl Classifier for LogisticModel {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn predict_prob(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit(x)?))
    }
}

/// Numerically stable `-(t ln σ(z) + (1-t) ln(1-σ(z)))`.
fn cross_entropy_from_logit(z: f64, t: f64) -> f64 {
    // ln(1 + e^z) - t z
    let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    softplus - t * z
}

/// One hidden sigmoid layer feeding a sigmoid output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralModel {
    /// `n × h` input-to-hidden weights.
    #[serde(rename = "W1")]
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    #[serde(rename = "W2")]
    pub w2: Vec<f64>,
    pub b2: f64,
}

struct Forward {
    hidden: Vec<f64>,
    logit: f64,
}

impl NeuralModel {
    pub fn zeros(n: usize, h: usize) -> Self {
        Self { w1: vec![vec![0.0; h]; n], b1: vec![0.0; h], w2: vec![0.0; h], b2: 0.0 }
    }

    /// Constant model answering `prob` everywhere.
    pub fn constant(n: usize, prob: f64) -> Self {
        let p = prob.clamp(1e-12, 1.0 - 1e-12);
        let mut m = Self::zeros(n, 1);
        m.b2 = (p / (1.0 - p)).ln();
        m
    }

    fn init(n: usize, h: usize, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let mut u = || rng.random_range(-0.5..=0.5);
        Self {
            w1: (0..n).map(|_| (0..h).map(|_| u()).collect()).collect(),
            b1: (0..h).map(|_| u()).collect(),
            w2: (0..h).map(|_| u()).collect(),
            b2: u(),
        }
    }

    pub fn hidden_units(&self) -> usize {
        self.b1.len()
    }

    fn forward(&self, x: &[f64]) -> Forward {
        let hidden: Vec<f64> = (0..self.hidden_units())
            .map(|k| {
                let z = self.b1[k] + self.w1.iter().zip(x).map(|(row, xi)| row[k] * xi).sum::<f64>();
                sigmoid(z)
            })
            .collect();
        let logit = self.b2 + hidden.iter().zip(&self.w2).map(|(h, w)| h * w).sum::<f64>();
        Forward { hidden, logit }
    }

    pub fn loss(&self, inputs: &[Vec<f64>], targets: &[f64]) -> f64 {
        let m = inputs.len() as f64;
        inputs
            .iter()
            .zip(targets)
            .map(|(x, &t)| cross_entropy_from_logit(self.forward(x).logit, t))
            .sum::<f64>()
            / m
    }

    /// Backpropagated gradient of [`loss`](Self::loss), shaped like the model.
    pub fn gradient(&self, inputs: &[Vec<f64>], targets: &[f64]) -> NeuralModel {
        let (n, h) = (self.w1.len(), self.hidden_units());
        let mut g = NeuralModel::zeros(n, h);
        let m = inputs.len() as f64;
        for (x, &t) in inputs.iter().zip(targets) {
            let f = self.forward(x);
            let delta_out = sigmoid(f.logit) - t;
            g.b2 += delta_out;
            for k in 0..h {
                g.w2[k] += delta_out * f.hidden[k];
                let delta_h = delta_out * self.w2[k] * f.hidden[k] * (1.0 - f.hidden[k]);
                g.b1[k] += delta_h;
                for (row, xi) in g.w1.iter_mut().zip(x) {
                    row[k] += delta_h * xi;
                }
            }
        }
        g.scale(1.0 / m);
        g
    }

    fn scale(&mut self, s: f64) {
        self.w1.iter_mut().flatten().for_each(|v| *v *= s);
        self.b1.iter_mut().for_each(|v| *v *= s);
        self.w2.iter_mut().for_each(|v| *v *= s);
        self.b2 *= s;
    }

    fn step(&mut self, g: &NeuralModel, lr: f64) {
        for (row, grow) in self.w1.iter_mut().zip(&g.w1) {
            for (w, gw) in row.iter_mut().zip(grow) {
                *w -= lr * gw;
            }
        }
        for (w, gw) in self.b1.iter_mut().zip(&g.b1) {
            *w -= lr * gw;
        }
        for (w, gw) in self.w2.iter_mut().zip(&g.w2) {
            *w -= lr * gw;
        }
        self.b2 -= lr * g.b2;
    }

    /// Flattened parameter view, used by gradient checks.
    pub fn params(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.w1.iter().flatten().copied().collect();
        p.extend(&self.b1);
        p.extend(&self.w2);
        p.push(self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let mut it = p.iter().copied();
        for v in self.w1.iter_mut().flatten() {
            *v = it.next().expect("parameter count");
        }
        for v in self.b1.iter_mut().chain(self.w2.iter_mut()) {
            *v = it.next().expect("parameter count");
        }
        self.b2 = it.next().expect("parameter count");
    }
}

impl Classifier for NeuralModel {
    fn dim(&self) -> usize {
        self.w1.len()
    }

    fn predict_prob(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x)?;
        Ok(sigmoid(self.forward(x).logit))
    }
}

/// Either kind of deployed model. Serialized untagged, so a JSON document
/// with `a`/`b` loads as logistic and one with `W1`.. as neural.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetModel {
    Logistic(LogisticModel),
    Neural(NeuralModel),
}

impl TargetModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Classifier for TargetModel {
    fn dim(&self) -> usize {
        match self {
            TargetModel::Logistic(m) => m.dim(),
            TargetModel::Neural(m) => m.dim(),
        }
    }

    fn predict_prob(&self, x: &[f64]) -> Result<f64> {
        match self {
            TargetModel::Logistic(m) => m.predict_prob(x),
            TargetModel::Neural(m) => m.predict_prob(x),
        }
    }
}

impl From<LogisticModel> for TargetModel {
    fn from(m: LogisticModel) -> Self {
        TargetModel::Logistic(m)
    }
}

impl From<NeuralModel> for TargetModel {
    fn from(m: NeuralModel) -> Self {
        TargetModel::Neural(m)
    }
}

fn check_training_set(train: &Dataset) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let ones = train.labels.iter().filter(|&&l| l == 1).count();
    if ones == 0 || ones == train.len() {
        return Err(Error::DegenerateTask("training set contains a single class".into()));
    }
    Ok(())
}

fn float_labels(train: &Dataset) -> Vec<f64> {
    train.labels.iter().map(|&l| f64::from(l)).collect()
}

/// Full-batch gradient descent on the logistic cross-entropy, starting from
/// zero coefficients.
pub fn train_logistic(train: &Dataset, cfg: &TrainConfig) -> Result<LogisticModel> {
    cfg.validate()?;
    check_training_set(train)?;
    Ok(fit_logistic(&train.features, &float_labels(train), cfg))
}

/// Logistic fit on arbitrary (possibly soft) targets. Inputs must be
/// non-empty and rectangular.
pub fn fit_logistic(inputs: &[Vec<f64>], targets: &[f64], cfg: &TrainConfig) -> LogisticModel {
    let n = inputs.first().map_or(0, Vec::len);
    let mut model = LogisticModel::zeros(n);
    for _ in 0..cfg.epochs {
        let (ga, gb) = model.gradient(inputs, targets);
        for (a, g) in model.a.iter_mut().zip(&ga) {
            *a -= cfg.learning_rate * g;
        }
        model.b -= cfg.learning_rate * gb;
    }
    model
}

/// Backpropagation over the single hidden layer, weights initialised
/// uniformly in `[-0.5, 0.5]` from `cfg.seed`.
pub fn train_nn(train: &Dataset, cfg: &TrainConfig) -> Result<NeuralModel> {
    cfg.validate()?;
    check_training_set(train)?;
    Ok(fit_nn(&train.features, &float_labels(train), cfg))
}

pub fn fit_nn(inputs: &[Vec<f64>], targets: &[f64], cfg: &TrainConfig) -> NeuralModel {
    let n = inputs.first().map_or(0, Vec::len);
    let mut model = NeuralModel::init(n, cfg.hidden_units, cfg.seed);
    for _ in 0..cfg.epochs {
        let g = model.gradient(inputs, targets);
        model.step(&g, cfg.learning_rate);
    }
    model
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize, Dataset};
    use crate::rng::seeded;

    fn separable_1d() -> Dataset {
        let xs: Vec<Vec<f64>> = (-10..=10).filter(|&i| i != 0).map(|i| vec![i as f64 / 10.0]).collect();
        let ys = xs.iter().map(|x| u8::from(x[0] > 0.0)).collect();
        Dataset::from_parts(xs, ys).unwrap()
    }

    fn accuracy(m: &dyn Classifier, d: &Dataset) -> f64 {
        let ok = d
            .features
            .iter()
            .zip(&d.labels)
            .filter(|(x, &y)| m.predict_label(x).unwrap() == y)
            .count();
        ok as f64 / d.len() as f64
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(3.0) - 0.952_574_126_822_433_4).abs() < 1e-15);
    }

    #[test]
    fn predict_prob_cases() {
        let zero = LogisticModel::zeros(3);
        assert_eq!(zero.predict_prob(&[1.0, -4.0, 9.0]).unwrap(), 0.5);
        let m = LogisticModel::new(vec![2.0], 3.0);
        // 1 / (1 + e^-3)
        assert!((m.predict_prob(&[0.0]).unwrap() - 0.952_574_126_822_433_4).abs() < 1e-12);
        assert_eq!(m.predict_prob(&[-1.5]).unwrap(), 0.5);
        assert_eq!(m.predict_label(&[-1.5]).unwrap(), 1);
        assert!(matches!(m.predict_prob(&[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn logit_cases() {
        let m = LogisticModel::new(vec![2.0], 3.0);
        assert_eq!(m.logit(&[1.0]).unwrap(), 5.0);
        assert_eq!(LogisticModel::zeros(2).logit(&[3.0, 4.0]).unwrap(), 0.0);
        assert!(m.logit(&[]).is_err());
    }

    #[test]
    fn logit_inverts_predict_prob() {
        let m = LogisticModel::new(vec![0.7, -1.3, 2.2], -0.4);
        let mut rng = seeded(3);
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = m.predict_prob(&x).unwrap();
            assert!(((p / (1.0 - p)).ln() - m.logit(&x).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let d = synthesize(4, 60, &[1.0, -2.0, 0.5, 0.0], 0.3, 11).unwrap();
        let t = float_labels(&d);
        let mut rng = seeded(5);
        for _ in 0..10 {
            let model = LogisticModel::new((0..4).map(|_| rng.random_range(-2.0..2.0)).collect(), rng.random_range(-1.0..1.0));
            let (ga, gb) = model.gradient(&d.features, &t);
            let h = 1e-6;
            for k in 0..=4 {
                let mut plus = model.clone();
                let mut minus = model.clone();
                if k < 4 {
                    plus.a[k] += h;
                    minus.a[k] -= h;
                } else {
                    plus.b += h;
                    minus.b -= h;
                }
                let fd = (plus.loss(&d.features, &t) - minus.loss(&d.features, &t)) / (2.0 * h);
                let an = if k < 4 { ga[k] } else { gb };
                assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "k={k} fd={fd} an={an}");
            }
        }
    }

    #[test]
    fn nn_gradient_matches_finite_differences() {
        let d = synthesize(3, 40, &[1.0, -2.0, 0.5], 0.3, 12).unwrap();
        let t = float_labels(&d);
        for seed in 0..10 {
            let model = NeuralModel::init(3, 4, seed);
            let g = model.gradient(&d.features, &t).params();
            let p = model.params();
            let h = 1e-6;
            for k in 0..p.len() {
                let mut plus = model.clone();
                let mut minus = model.clone();
                let mut pp = p.clone();
                pp[k] += h;
                plus.set_params(&pp);
                pp[k] -= 2.0 * h;
                minus.set_params(&pp);
                let fd = (plus.loss(&d.features, &t) - minus.loss(&d.features, &t)) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-5 * g[k].abs().max(1e-3), "param {k}: fd={fd} an={}", g[k]);
            }
        }
    }

    #[test]
    fn separable_data_is_fit_perfectly() {
        let d = separable_1d();
        let m = train_logistic(&d, &TrainConfig::default()).unwrap();
        assert!(m.a[0] > 0.0);
        assert_eq!(accuracy(&m, &d), 1.0);
    }

    #[test]
    fn loss_decreases_monotonically_at_small_rate() {
        let d = synthesize(3, 200, &[1.0, -1.0, 2.0], 0.5, 4).unwrap();
        let t = float_labels(&d);
        let mut model = LogisticModel::zeros(3);
        let mut prev = model.loss(&d.features, &t);
        let first = prev;
        for _ in 0..300 {
            let (ga, gb) = model.gradient(&d.features, &t);
            for (a, g) in model.a.iter_mut().zip(&ga) {
                *a -= 0.01 * g;
            }
            model.b -= 0.01 * gb;
            let cur = model.loss(&d.features, &t);
            assert!(cur <= prev + 1e-15);
            prev = cur;
        }
        assert!(prev < first);
    }

    #[test]
    fn rejects_bad_configs_and_single_class() {
        let d = separable_1d();
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        assert!(matches!(train_logistic(&d, &cfg), Err(Error::InvalidConfig(_))));
        let cfg = TrainConfig { learning_rate: 0.0, ..Default::default() };
        assert!(matches!(train_nn(&d, &cfg), Err(Error::InvalidConfig(_))));
        let one = Dataset::from_parts(vec![vec![1.0], vec![2.0]], vec![1, 1]).unwrap();
        assert!(matches!(train_logistic(&one, &TrainConfig::default()), Err(Error::DegenerateTask(_))));
        assert!(matches!(train_nn(&one, &TrainConfig::default()), Err(Error::DegenerateTask(_))));
    }

    #[test]
    fn nn_learns_xor() {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut rng = seeded(21);
        for _ in 0..200 {
            let x = [rng.random_range(-1.0..1.0f64), rng.random_range(-1.0..1.0f64)];
            if x[0].abs() < 0.1 || x[1].abs() < 0.1 {
                continue;
            }
            ys.push(u8::from((x[0] > 0.0) != (x[1] > 0.0)));
            xs.push(x.to_vec());
        }
        let d = Dataset::from_parts(xs, ys).unwrap();
        let cfg = TrainConfig { learning_rate: 2.0, epochs: 6000, hidden_units: 4, seed: 1 };
        let m = train_nn(&d, &cfg).unwrap();
        assert!(accuracy(&m, &d) >= 0.95, "xor accuracy {}", accuracy(&m, &d));
    }

    #[test]
    fn single_hidden_unit_handles_separable_data() {
        let d = separable_1d();
        let cfg = TrainConfig { hidden_units: 1, learning_rate: 0.5, ..Default::default() };
        let m = train_nn(&d, &cfg).unwrap();
        assert!(accuracy(&m, &d) >= 0.95);
    }

    #[test]
    fn nn_training_is_deterministic() {
        let d = synthesize(2, 50, &[1.0, 1.0], 0.0, 2).unwrap();
        let cfg = TrainConfig { epochs: 50, seed: 9, ..Default::default() };
        let a = train_nn(&d, &cfg).unwrap();
        let b = train_nn(&d, &cfg).unwrap();
        assert_eq!(a.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn json_field_names() {
        let lr: TargetModel = LogisticModel::new(vec![2.0], 3.0).into();
        let text = lr.to_json().unwrap();
        assert!(text.contains("\"a\"") && text.contains("\"b\""));
        assert_eq!(TargetModel::from_json(&text).unwrap(), lr);

        let nn: TargetModel = NeuralModel::init(2, 3, 0).into();
        let text = nn.to_json().unwrap();
        for key in ["\"W1\"", "\"b1\"", "\"W2\"", "\"b2\""] {
            assert!(text.contains(key));
        }
        assert_eq!(TargetModel::from_json(&text).unwrap(), nn);
    }

    #[test]
    fn nn_output_in_open_unit_interval() {
        let m = NeuralModel::init(3, 8, 4);
        let p = m.predict_prob(&[0.3, -0.2, 0.9]).unwrap();
        assert!(p > 0.0 && p < 1.0);
        assert!(m.predict_prob(&[0.3]).is_err());
    }
}
