//! Dense classifier head: z-score normalization and a two-hidden-layer ReLU
//! network with softmax output, trained by plain mini-batch SGD on
//! cross-entropy.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::textfmt::{read_to_string, write_file, Num17};

pub const N_CLASSES: usize = 2;
const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer<T> {
    pub mean: Array1<T>,
    pub std: Array1<T>,
}

impl<T: Scalar> Normalizer<T> {
    /// Column means and population standard deviations, floored at 1e-8.
    pub fn fit(x: ArrayView2<T>) -> Result<Self> {
        if x.nrows() < 2 || x.ncols() == 0 {
            return Err(Error::invalid(format!(
                "normalizer needs at least 2 rows and 1 column, got {:?}",
                x.dim()
            )));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let std = x.std_axis(Axis(0), T::zero()).mapv(|s| s.max(T::lit(STD_FLOOR)));
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        if x.ncols() != self.dim() {
            return Err(Error::invalid(format!(
                "normalizer fitted on {} features, got {}",
                self.dim(),
                x.ncols()
            )));
        }
        Ok((&x - &self.mean.view().insert_axis(Axis(0))) / &self.std.view().insert_axis(Axis(0)))
    }
}

impl Normalizer<f64> {
    pub fn to_json(&self) -> String {
        let rec = NormalizerRecord {
            mean: self.mean.iter().copied().map(Num17).collect(),
            std: self.std.iter().copied().map(Num17).collect(),
        };
        let mut s = serde_json::to_string_pretty(&rec).expect("serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let rec: NormalizerRecord =
            serde_json::from_str(&read_to_string(path)?).map_err(|e| Error::parse(path, e))?;
        if rec.mean.len() != rec.std.len() {
            return Err(Error::parse(path, "mean and std lengths differ"));
        }
        Ok(Self {
            mean: rec.mean.into_iter().map(|v| v.0).collect(),
            std: rec.std.into_iter().map(|v| v.0).collect(),
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormalizerRecord {
    mean: Vec<Num17>,
    std: Vec<Num17>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub hidden: [usize; 2],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 25,
            learning_rate: 0.001,
            seed: 0,
            hidden: [64, 32],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be finite and non-negative"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        Ok(())
    }
}

/// `d_in -> h1 -> h2 -> 2`; `weights[l]` is `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel<T> {
    pub weights: [Array2<T>; 3],
    pub biases: [Array1<T>; 3],
}

/// Gradients laid out like [`MlpModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub weights: [Array2<T>; 3],
    pub biases: [Array1<T>; 3],
}

fn relu<T: Scalar>(x: T) -> T {
    x.max(T::zero())
}

fn log_softmax_rows<T: Scalar>(z: &Array2<T>) -> Array2<T> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

impl<T: Scalar> MlpModel<T> {
    /// Zero weights and biases.
    pub fn zeros(d_in: usize, hidden: [usize; 2]) -> Self {
        let sizes = [d_in, hidden[0], hidden[1], N_CLASSES];
        Self {
            weights: std::array::from_fn(|l| Array2::zeros((sizes[l + 1], sizes[l]))),
            biases: std::array::from_fn(|l| Array1::zeros(sizes[l + 1])),
        }
    }

    /// Uniform Glorot initialization, zero biases.
    pub fn glorot<R: Rng>(d_in: usize, hidden: [usize; 2], rng: &mut R) -> Self {
        let mut m = Self::zeros(d_in, hidden);
        for w in &mut m.weights {
            let (fan_out, fan_in) = w.dim();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            w.mapv_inplace(|_| T::lit(rng.random_range(-limit..=limit)));
        }
        m
    }

    pub fn layer_sizes(&self) -> [usize; 4] {
        [
            self.weights[0].ncols(),
            self.weights[0].nrows(),
            self.weights[1].nrows(),
            self.weights[2].nrows(),
        ]
    }

    fn check_shapes(&self) -> Result<()> {
        for l in 0..3 {
            let w = &self.weights[l];
            if w.nrows() != self.biases[l].len() || (l > 0 && w.ncols() != self.weights[l - 1].nrows()) {
                return Err(Error::invalid(format!("layer {l} shapes do not chain")));
            }
        }
        if self.weights[2].nrows() != N_CLASSES {
            return Err(Error::invalid("output layer must have 2 units"));
        }
        Ok(())
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        let d_in = self.weights[0].ncols();
        if cols != d_in {
            return Err(Error::invalid(format!("model expects {d_in} features, got {cols}")));
        }
        Ok(())
    }

    /// Pre-activations and activations for each layer of a batch.
    fn pass(&self, x: ArrayView2<T>) -> ([Array2<T>; 3], [Array2<T>; 2]) {
        let z1 = x.dot(&self.weights[0].t()) + &self.biases[0];
        let a1 = z1.mapv(relu);
        let z2 = a1.dot(&self.weights[1].t()) + &self.biases[1];
        let a2 = z2.mapv(relu);
        let z3 = a2.dot(&self.weights[2].t()) + &self.biases[2];
        ([z1, z2, z3], [a1, a2])
    }

    pub fn logits(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_input(x.ncols())?;
        Ok(self.pass(x).0[2].clone())
    }

    /// Softmax class probabilities, one row per input row.
    pub fn predict(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        Ok(log_softmax_rows(&self.logits(x)?).mapv(T::exp))
    }

    pub fn forward(&self, x: ArrayView1<T>) -> Result<Array1<T>> {
        let batch = x.insert_axis(Axis(0));
        Ok(self.predict(batch)?.row(0).to_owned())
    }

    /// Mean cross-entropy over the batch and its gradient.
    pub fn loss_and_gradients(&self, x: ArrayView2<T>, y: ArrayView2<T>) -> Result<(T, Gradients<T>)> {
        self.check_input(x.ncols())?;
        check_labels(x.nrows(), y)?;
        let n = T::from_usize_lossy(x.nrows());
        let ([z1, z2, z3], [a1, a2]) = self.pass(x);
        let logp = log_softmax_rows(&z3);
        let loss = -(&logp * &y).sum() / n;

        let dz3 = (logp.mapv(T::exp) - &y) / n;
        let dw3 = dz3.t().dot(&a2);
        let db3 = dz3.sum_axis(Axis(0));
        let mut dz2 = dz3.dot(&self.weights[2]);
        dz2.zip_mut_with(&z2, |d, &z| {
            if z <= T::zero() {
                *d = T::zero()
            }
        });
        let dw2 = dz2.t().dot(&a1);
        let db2 = dz2.sum_axis(Axis(0));
        let mut dz1 = dz2.dot(&self.weights[1]);
        dz1.zip_mut_with(&z1, |d, &z| {
            if z <= T::zero() {
                *d = T::zero()
            }
        });
        let dw1 = dz1.t().dot(&x);
        let db1 = dz1.sum_axis(Axis(0));
        Ok((
            loss,
            Gradients {
                weights: [dw1, dw2, dw3],
                biases: [db1, db2, db3],
            },
        ))
    }

    fn sgd_step(&mut self, g: &Gradients<T>, lr: T) {
        for l in 0..3 {
            self.weights[l].scaled_add(-lr, &g.weights[l]);
            self.biases[l].scaled_add(-lr, &g.biases[l]);
        }
    }
}

fn check_labels<T: Scalar>(rows: usize, y: ArrayView2<T>) -> Result<()> {
    if y.nrows() != rows || y.ncols() != N_CLASSES {
        return Err(Error::invalid(format!(
            "labels have shape {:?}, expected ({rows}, {N_CLASSES})",
            y.dim()
        )));
    }
    for (i, row) in y.rows().into_iter().enumerate() {
        let ones = row.iter().filter(|&&v| v == T::one()).count();
        let zeros = row.iter().filter(|&&v| v == T::zero()).count();
        if ones != 1 || zeros != N_CLASSES - 1 {
            return Err(Error::invalid(format!("label row {i} is not one-hot")));
        }
    }
    Ok(())
}

/// One-hot matrix for class indices.
pub fn one_hot<T: Scalar>(labels: &[usize]) -> Array2<T> {
    let mut y = Array2::zeros((labels.len(), N_CLASSES));
    for (i, &c) in labels.iter().enumerate() {
        y[[i, c]] = T::one();
    }
    y
}

/// Index of the largest entry; ties go to the lower index.
fn argmax<T: Scalar>(row: ArrayView1<T>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy and accuracy of `model` on `(x, y)`.
pub fn evaluate<T: Scalar>(model: &MlpModel<T>, x: ArrayView2<T>, y: ArrayView2<T>) -> Result<(T, T)> {
    model.check_input(x.ncols())?;
    check_labels(x.nrows(), y)?;
    if x.nrows() == 0 {
        return Err(Error::invalid("cannot evaluate on an empty set"));
    }
    let logp = log_softmax_rows(&model.logits(x)?);
    let n = T::from_usize_lossy(x.nrows());
    let loss = -(&logp * &y).sum() / n;
    let hits = logp
        .rows()
        .into_iter()
        .zip(y.rows())
        .filter(|(p, t)| argmax(p.view()) == argmax(t.view()))
        .count();
    Ok((loss, T::from_usize_lossy(hits) / n))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics<T> {
    pub epoch: usize,
    pub train_loss: T,
    pub train_acc: T,
    pub test_loss: Option<T>,
    pub test_acc: Option<T>,
}

/// Trains a fresh model. Metrics are full-set evaluations taken after each
/// epoch; `validation`, when given, is evaluated alongside.
pub fn train<T: Scalar>(
    x: ArrayView2<T>,
    y: ArrayView2<T>,
    cfg: &TrainConfig,
    validation: Option<(ArrayView2<T>, ArrayView2<T>)>,
) -> Result<(MlpModel<T>, Vec<EpochMetrics<T>>)> {
    cfg.validate()?;
    check_labels(x.nrows(), y)?;
    if x.nrows() == 0 {
        return Err(Error::invalid("training set is empty"));
    }
    if let Some((vx, vy)) = validation {
        check_labels(vx.nrows(), vy)?;
        if vx.ncols() != x.ncols() {
            return Err(Error::invalid("validation features differ in width from training"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = MlpModel::glorot(x.ncols(), cfg.hidden, &mut rng);
    let lr = T::lit(cfg.learning_rate);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let bx = x.select(Axis(0), batch);
            let by = y.select(Axis(0), batch);
            let (_, grads) = model.loss_and_gradients(bx.view(), by.view())?;
            model.sgd_step(&grads, lr);
        }
        let (train_loss, train_acc) = evaluate(&model, x, y)?;
        let (test_loss, test_acc) = match validation {
            Some((vx, vy)) => {
                let (l, a) = evaluate(&model, vx, vy)?;
                (Some(l), Some(a))
            }
            None => (None, None),
        };
        history.push(EpochMetrics {
            epoch,
            train_loss,
            train_acc,
            test_loss,
            test_acc,
        });
    }
    Ok((model, history))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointRecord {
    layer_sizes: [usize; 4],
    /// Row-major, `out x in` per layer.
    weights: Vec<Vec<Num17>>,
    biases: Vec<Vec<Num17>>,
}

impl MlpModel<f64> {
    pub fn to_json(&self) -> String {
        let rec = CheckpointRecord {
            layer_sizes: self.layer_sizes(),
            weights: self.weights.iter().map(|w| w.iter().copied().map(Num17).collect()).collect(),
            biases: self.biases.iter().map(|b| b.iter().copied().map(Num17).collect()).collect(),
        };
        let mut s = serde_json::to_string(&rec).expect("serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let rec: CheckpointRecord = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if rec.weights.len() != 3 || rec.biases.len() != 3 {
            return Err("checkpoint must hold exactly three layers".into());
        }
        let s = rec.layer_sizes;
        let mut weights = Vec::with_capacity(3);
        let mut biases = Vec::with_capacity(3);
        for l in 0..3 {
            let w: Vec<f64> = rec.weights[l].iter().map(|v| v.0).collect();
            weights.push(Array2::from_shape_vec((s[l + 1], s[l]), w).map_err(|e| format!("layer {l}: {e}"))?);
            if rec.biases[l].len() != s[l + 1] {
                return Err(format!("layer {l}: bias length {} != {}", rec.biases[l].len(), s[l + 1]));
            }
            biases.push(rec.biases[l].iter().map(|v| v.0).collect::<Array1<f64>>());
        }
        let model = Self {
            weights: weights.try_into().expect("three layers"),
            biases: biases.try_into().expect("three layers"),
        };
        model.check_shapes().map_err(|e| e.to_string())?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_to_string(path)?).map_err(|m| Error::parse(path, m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn normalizer_examples() {
        let x: Array2<f64> = array![[5.0, -1.0], [5.0, 1.0]];
        let n = Normalizer::fit(x.view()).unwrap();
        assert_eq!(n.mean[1], 0.0);
        assert_eq!(n.std[1], 1.0);
        let t = n.transform(x.view()).unwrap();
        assert_eq!(t.column(0).to_vec(), vec![0.0, 0.0]);
        assert_eq!(t.column(1).to_vec(), vec![-1.0, 1.0]);
        assert!(Normalizer::fit(array![[1.0f64, 2.0]].view()).is_err());
        assert!(n.transform(array![[1.0f64]].view()).is_err());
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = MlpModel::<f64>::zeros(3, [4, 2]);
        let p = m.forward(array![1.0, -2.0, 0.5].view()).unwrap();
        assert_eq!(p.to_vec(), vec![0.5, 0.5]);
        assert!(m.forward(array![1.0].view()).is_err());
    }

    #[test]
    fn logit_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = MlpModel::<f64>::glorot(5, [4, 3], &mut rng);
        let mut shifted = m.clone();
        shifted.biases[2].mapv_inplace(|b| b + 17.25);
        let x = array![[0.3, -1.0, 2.0, 0.1, 0.0]];
        let (a, b) = (m.predict(x.view()).unwrap(), shifted.predict(x.view()).unwrap());
        for (p, q) in a.iter().zip(b.iter()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_computed_2_2_2_2() {
        let m = MlpModel {
            weights: [
                array![[0.5, -0.25], [0.1, 0.2]],
                array![[1.0, -1.0], [0.5, 0.5]],
                array![[0.3, 0.0], [-0.2, 0.4]],
            ],
            biases: [array![0.1, -0.3], array![0.0, 0.05], array![0.01, -0.02]],
        };
        // x = (1, 2):
        // z1 = (0.5 - 0.5 + 0.1, 0.1 + 0.4 - 0.3) = (0.1, 0.2)
        // z2 = (0.1 - 0.2, 0.05 + 0.1 + 0.05) = (-0.1, 0.2) -> a2 = (0, 0.2)
        // z3 = (0.01, 0.08 - 0.02) = (0.01, 0.06)
        let p = m.forward(array![1.0, 2.0].view()).unwrap();
        let e0 = 0.01f64.exp();
        let e1 = 0.06f64.exp();
        assert!((p[0] - e0 / (e0 + e1)).abs() < 1e-12);
        assert!((p[1] - e1 / (e0 + e1)).abs() < 1e-12);
    }

    #[test]
    fn evaluate_examples() {
        let m = MlpModel::<f64>::zeros(2, [3, 3]);
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let y: Array2<f64> = one_hot(&[0, 1]);
        let (loss, acc) = evaluate(&m, x.view(), y.view()).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        // Uniform output ties resolve to class 0.
        assert_eq!(acc, 0.5);
        assert!(evaluate(&m, x.view(), one_hot::<f64>(&[0]).view()).is_err());
        let bad = array![[1.0, 1.0], [0.0, 1.0]];
        assert!(evaluate(&m, x.view(), bad.view()).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = MlpModel::<f64>::glorot(6, [5, 4], &mut rng);
        assert_eq!(MlpModel::from_json(&m.to_json()).unwrap(), m);
        assert!(MlpModel::from_json("{\"layer_sizes\":[1,1,1,2],\"weights\":[],\"biases\":[]}").is_err());
    }

    #[test]
    fn glorot_within_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = MlpModel::<f64>::glorot(176, [64, 32], &mut rng);
        let lim = (6.0f64 / (176.0 + 64.0)).sqrt();
        assert!(m.weights[0].iter().all(|w| w.abs() <= lim));
        assert!(m.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
        assert_eq!(m.layer_sizes(), [176, 64, 32, 2]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { hidden: [0, 4], ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
