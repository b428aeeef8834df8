use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ContentItem, Ideology};
use crate::embedding::EmbeddingStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpHyper {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub hidden: usize,
    pub batch_size: usize,
    pub input_dim: usize,
}

impl Default for MlpHyper {
    fn default() -> Self {
        MlpHyper {
            lr: 1e-3,
            epochs: 100,
            seed: 0,
            hidden: 512,
            batch_size: 32,
            input_dim: 384,
        }
    }
}

/// One tanh hidden layer and a three-way softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    /// hidden × input
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// 3 × hidden
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Gradients with the same shapes as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl MlpGradients {
    fn zeros_like(m: &MlpModel) -> Self {
        MlpGradients {
            w1: Array2::zeros(m.w1.raw_dim()),
            b1: Array1::zeros(m.b1.raw_dim()),
            w2: Array2::zeros(m.w2.raw_dim()),
            b2: Array1::zeros(m.b2.raw_dim()),
        }
    }
}

fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Index of the largest value; the earliest wins ties.
pub(crate) fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl MlpModel {
    /// Uniform initialization in ±1/sqrt(fan_in) for weights and biases.
    pub fn init(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a1 = 1.0 / (input_dim as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        let mut u = |a: f64| rng.random_range(-a..=a);
        MlpModel {
            w1: Array2::from_shape_simple_fn((hidden, input_dim), || u(a1)),
            b1: Array1::from_shape_simple_fn(hidden, || u(a1)),
            w2: Array2::from_shape_simple_fn((3, hidden), || u(a2)),
            b2: Array1::from_shape_simple_fn(3, || u(a2)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).all(|v| v.is_finite())
    }

    fn hidden_activations(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.dot(&self.w1.t()) + &self.b1;
        h.mapv_inplace(f64::tanh);
        h
    }

    /// Pre-softmax outputs, one row per input row.
    pub fn logits_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.hidden_activations(x).dot(&self.w2.t()) + &self.b2
    }

    pub fn logits(&self, x: ArrayView1<f64>) -> [f64; 3] {
        let z = self.logits_batch(x.insert_axis(Axis(0)));
        [z[[0, 0]], z[[0, 1]], z[[0, 2]]]
    }

    pub fn probabilities(&self, x: ArrayView1<f64>) -> [f64; 3] {
        let mut z = Array2::from_shape_vec((1, 3), self.logits(x).to_vec()).unwrap();
        softmax_rows(&mut z);
        [z[[0, 0]], z[[0, 1]], z[[0, 2]]]
    }

    /// Mean cross-entropy over the rows of `x`.
    pub fn loss(&self, x: ArrayView2<f64>, y: &[usize]) -> f64 {
        let mut p = self.logits_batch(x);
        softmax_rows(&mut p);
        -y.iter().enumerate().map(|(i, &c)| p[[i, c]].ln()).sum::<f64>() / y.len() as f64
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn gradients(&self, x: ArrayView2<f64>, y: &[usize]) -> (f64, MlpGradients) {
        let n = y.len() as f64;
        let h = self.hidden_activations(x);
        let mut p = h.dot(&self.w2.t()) + &self.b2;
        softmax_rows(&mut p);
        let loss = -y.iter().enumerate().map(|(i, &c)| p[[i, c]].ln()).sum::<f64>() / n;

        let mut dz = p;
        for (i, &c) in y.iter().enumerate() {
            dz[[i, c]] -= 1.0;
        }
        dz /= n;
        let w2 = dz.t().dot(&h);
        let b2 = dz.sum_axis(Axis(0));
        let mut da = dz.dot(&self.w2);
        da.zip_mut_with(&h, |d, &hv| *d *= 1.0 - hv * hv);
        let w1 = da.t().dot(&x);
        let b1 = da.sum_axis(Axis(0));
        (loss, MlpGradients { w1, b1, w2, b2 })
    }
}

struct Adam {
    m: MlpGradients,
    v: MlpGradients,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, model: &mut MlpModel, g: &MlpGradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        macro_rules! update {
            ($f:ident) => {
                ndarray::Zip::from(&mut model.$f)
                    .and(&mut self.m.$f)
                    .and(&mut self.v.$f)
                    .and(&g.$f)
                    .for_each(|w, m, v, &g| {
                        *m = Self::B1 * *m + (1.0 - Self::B1) * g;
                        *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
                        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
                    });
            };
        }
        update!(w1);
        update!(b1);
        update!(w2);
        update!(b2);
    }
}

/// Trains on a design matrix (one row per example) with minibatch Adam.
pub fn mlp_train_arrays(x: &Array2<f64>, y: &[usize], hyper: &MlpHyper) -> Result<MlpModel> {
    if x.ncols() != hyper.input_dim {
        return Err(Error::DimensionMismatch {
            expected: hyper.input_dim,
            actual: x.ncols(),
        });
    }
    if x.nrows() != y.len() || y.is_empty() {
        return Err(Error::invalid(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    if let Some(bad) = y.iter().find(|&&c| c >= 3) {
        return Err(Error::invalid(format!("label index {bad} out of range")));
    }
    let mut model = MlpModel::init(hyper.input_dim, hyper.hidden, hyper.seed);
    let mut adam = Adam {
        m: MlpGradients::zeros_like(&model),
        v: MlpGradients::zeros_like(&model),
        t: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..y.len()).collect();
    let batch = hyper.batch_size.max(1);
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(batch).enumerate() {
            let xb = x.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let (loss, grads) = model.gradients(xb.view(), &yb);
            if !loss.is_finite() {
                let max_w = model.w1.iter().chain(model.w2.iter()).fold(0.0f64, |a, v| a.max(v.abs()));
                return Err(Error::Diverged(format!(
                    "loss {loss} at epoch {epoch}, batch {b}; largest |weight| {max_w}"
                )));
            }
            adam.step(&mut model, &grads, hyper.lr);
        }
        log::debug!("epoch {epoch}: loss {:.4}", model.loss(x.view(), y));
    }
    Ok(model)
}

/// Trains on the sentence embeddings of labeled items.
pub fn mlp_train(items: &[ContentItem], store: &EmbeddingStore, hyper: &MlpHyper) -> Result<MlpModel> {
    let mut x = Array2::zeros((items.len(), hyper.input_dim));
    let mut y = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let s = store.get(&item.id)?.sentence();
        if s.len() != hyper.input_dim {
            return Err(Error::DimensionMismatch {
                expected: hyper.input_dim,
                actual: s.len(),
            });
        }
        x.row_mut(i).assign(&ArrayView1::from(s).mapv(f64::from));
        let label = item
            .label
            .ok_or_else(|| Error::invalid(format!("training item {:?} has no label", item.id)))?;
        y.push(label.index());
    }
    mlp_train_arrays(&x, &y, hyper)
}

/// Most probable class; ties go to the earlier label.
pub fn mlp_predict(model: &MlpModel, sentence: &[f32]) -> Result<Ideology> {
    if sentence.len() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            actual: sentence.len(),
        });
    }
    let x = ArrayView1::from(sentence).mapv(f64::from);
    Ok(Ideology::from_index(argmax_first(&model.logits(x.view()))).unwrap())
}
