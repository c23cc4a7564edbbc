//! One-hidden-layer perceptron: `softmax(W2 tanh(W1 x + b1) + b2)`.
//!
//! Parameters live in one flat vector ordered `W1, b1, W2, b2`, weight
//! matrices row-major. The same layout read column-major is the transposed
//! matrix, which is how the batched products below use it.

use nalgebra::{DMatrix, DMatrixView};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scg::{self, Objective, ScgSettings, StopRule, TrainReport, ValScore};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    n_in: usize,
    n_hidden: usize,
    n_out: usize,
    params: Vec<f64>,
}

impl Network {
    pub fn zeros(n_in: usize, n_hidden: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_hidden,
            n_out,
            params: vec![0.0; param_count(n_in, n_hidden, n_out)],
        }
    }

    pub fn from_params(n_in: usize, n_hidden: usize, n_out: usize, params: Vec<f64>) -> Result<Self> {
        let expected = param_count(n_in, n_hidden, n_out);
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: params.len(),
            });
        }
        Ok(Self {
            n_in,
            n_hidden,
            n_out,
            params,
        })
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub(crate) fn offsets(&self) -> Offsets {
        Offsets::new(self.n_in, self.n_hidden, self.n_out)
    }

    /// `W1[h][i]`.
    pub fn w1(&self, h: usize, i: usize) -> f64 {
        self.params[h * self.n_in + i]
    }

    pub fn b1(&self, h: usize) -> f64 {
        self.params[self.offsets().b1 + h]
    }

    /// `W2[c][h]`.
    pub fn w2(&self, c: usize, h: usize) -> f64 {
        self.params[self.offsets().w2 + c * self.n_hidden + h]
    }

    pub fn b2(&self, c: usize) -> f64 {
        self.params[self.offsets().b2 + c]
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.n_in {
            return Err(Error::DimensionMismatch {
                expected: self.n_in,
                got: x.ncols(),
            });
        }
        Ok(())
    }

    /// Pre-softmax outputs, one row per sample (`batch x C`).
    pub fn logits_rows(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        Ok(forward_pass(self.shape(), &self.params, x).1)
    }

    /// Class probabilities, one row per sample (`batch x C`).
    pub fn probabilities_rows(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut z = self.logits_rows(x)?;
        softmax_rows(&mut z);
        Ok(z)
    }

    /// Posterior matrix with one column per sample (`C x batch`).
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.probabilities_rows(x)?.transpose())
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits_rows(x)?))
    }

    fn shape(&self) -> Shape {
        Shape {
            n_in: self.n_in,
            n_hidden: self.n_hidden,
            n_out: self.n_out,
        }
    }
}

pub fn param_count(n_in: usize, n_hidden: usize, n_out: usize) -> usize {
    n_hidden * (n_in + 1) + n_out * (n_hidden + 1)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Offsets {
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub end: usize,
}

impl Offsets {
    fn new(n_in: usize, n_hidden: usize, n_out: usize) -> Self {
        let b1 = n_hidden * n_in;
        let w2 = b1 + n_hidden;
        let b2 = w2 + n_out * n_hidden;
        Self {
            b1,
            w2,
            b2,
            end: b2 + n_out,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Shape {
    n_in: usize,
    n_hidden: usize,
    n_out: usize,
}

/// Hidden activations and logits, both one row per sample.
fn forward_pass(shape: Shape, params: &[f64], x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let off = Offsets::new(shape.n_in, shape.n_hidden, shape.n_out);
    let w1t = DMatrixView::from_slice(&params[..off.b1], shape.n_in, shape.n_hidden);
    let w2t = DMatrixView::from_slice(&params[off.w2..off.b2], shape.n_hidden, shape.n_out);
    let b1 = &params[off.b1..off.w2];
    let b2 = &params[off.b2..off.end];

    let mut hidden = x * w1t;
    for (j, mut col) in hidden.column_iter_mut().enumerate() {
        for v in col.iter_mut() {
            *v = (*v + b1[j]).tanh();
        }
    }
    let mut logits = &hidden * w2t;
    for (c, mut col) in logits.column_iter_mut().enumerate() {
        for v in col.iter_mut() {
            *v += b2[c];
        }
    }
    (hidden, logits)
}

/// Row-wise softmax in place, shifted by the row maximum.
pub fn softmax_rows(z: &mut DMatrix<f64>) {
    for i in 0..z.nrows() {
        let mut row = z.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Index of the largest entry per row; ties go to the lowest index.
pub fn argmax_rows(m: &DMatrix<f64>) -> Vec<usize> {
    (0..m.nrows())
        .map(|i| {
            let row = m.row(i);
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Mean cross-entropy and its gradient in the flat parameter layout.
/// `mask`, when given, zeroes the matching gradient entries.
pub(crate) fn cross_entropy_grad(
    net_shape: (usize, usize, usize),
    params: &[f64],
    x: &DMatrix<f64>,
    labels: &[usize],
    mask: Option<&[bool]>,
) -> (f64, Vec<f64>) {
    let (n_in, n_hidden, n_out) = net_shape;
    let shape = Shape { n_in, n_hidden, n_out };
    let off = Offsets::new(n_in, n_hidden, n_out);
    let m = x.nrows() as f64;
    let (hidden, mut delta) = forward_pass(shape, params, x);

    // delta <- (softmax - onehot) / m, accumulating the loss on the way
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let mut row = delta.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_norm = max + sum.ln();
        loss -= row[y] - log_norm;
        for v in row.iter_mut() {
            *v = (*v - log_norm).exp() / m;
        }
        row[y] -= 1.0 / m;
    }
    loss /= m;

    let mut grad = vec![0.0; off.end];
    let w2t = DMatrixView::from_slice(&params[off.w2..off.b2], n_hidden, n_out);

    let g_w2t = hidden.tr_mul(&delta);
    grad[off.w2..off.b2].copy_from_slice(g_w2t.as_slice());
    for (c, col) in delta.column_iter().enumerate() {
        grad[off.b2 + c] = col.sum();
    }

    let mut d_hidden = &delta * w2t.transpose();
    d_hidden.zip_apply(&hidden, |d, h| *d *= 1.0 - h * h);
    let g_w1t = x.tr_mul(&d_hidden);
    grad[..off.b1].copy_from_slice(g_w1t.as_slice());
    for (j, col) in d_hidden.column_iter().enumerate() {
        grad[off.b1 + j] = col.sum();
    }

    if let Some(mask) = mask {
        for (g, &keep) in grad.iter_mut().zip(mask) {
            if !keep {
                *g = 0.0;
            }
        }
    }
    (loss, grad)
}

fn check_labels(labels: &[usize], n_rows: usize, n_out: usize) -> Result<()> {
    if labels.len() != n_rows {
        return Err(Error::DimensionMismatch {
            expected: n_rows,
            got: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_out) {
        return Err(Error::InvalidArgument(format!("label {bad} outside [0, {n_out})")));
    }
    Ok(())
}

/// Cross-entropy training objective over a fixed batch.
pub(crate) struct CrossEntropy<'a> {
    pub shape: (usize, usize, usize),
    pub x: &'a DMatrix<f64>,
    pub labels: &'a [usize],
    pub mask: Option<&'a [bool]>,
}

impl Objective for CrossEntropy<'_> {
    fn dim(&self) -> usize {
        param_count(self.shape.0, self.shape.1, self.shape.2)
    }

    fn loss_grad(&self, params: &[f64]) -> (f64, Vec<f64>) {
        cross_entropy_grad(self.shape, params, self.x, self.labels, self.mask)
    }

    fn loss(&self, params: &[f64]) -> f64 {
        let (n_in, n_hidden, n_out) = self.shape;
        let (_, logits) = forward_pass(Shape { n_in, n_hidden, n_out }, params, self.x);
        mean_cross_entropy(&logits, self.labels)
    }
}

fn mean_cross_entropy(logits: &DMatrix<f64>, labels: &[usize]) -> f64 {
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        loss -= row[y] - max - sum.ln();
    }
    loss / labels.len() as f64
}

/// Misclassification rate and mean cross-entropy of `params` on a batch.
pub(crate) fn score(shape: (usize, usize, usize), params: &[f64], x: &DMatrix<f64>, labels: &[usize]) -> ValScore {
    let (n_in, n_hidden, n_out) = shape;
    let (_, logits) = forward_pass(Shape { n_in, n_hidden, n_out }, params, x);
    let wrong = argmax_rows(&logits).iter().zip(labels).filter(|(p, y)| p != y).count();
    ValScore {
        error: wrong as f64 / labels.len() as f64,
        loss: mean_cross_entropy(&logits, labels),
    }
}

/// Labelled sample matrix, one row per sample.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub x: &'a DMatrix<f64>,
    pub labels: &'a [usize],
}

impl<'a> Batch<'a> {
    pub fn new(x: &'a DMatrix<f64>, labels: &'a [usize]) -> Self {
        Self { x, labels }
    }
}

/// Trains `net` (optionally with a fixed zero mask on parameters) with
/// early stopping on `val`; returns the best-validation snapshot.
pub(crate) fn train_network(
    net: &Network,
    mask: Option<&[bool]>,
    learn: Batch<'_>,
    val: Batch<'_>,
    rule: StopRule,
) -> Result<(Network, TrainReport)> {
    for batch in [&learn, &val] {
        net.check_input(batch.x)?;
        check_labels(batch.labels, batch.x.nrows(), net.n_out)?;
    }
    let shape = (net.n_in, net.n_hidden, net.n_out);
    let objective = CrossEntropy {
        shape,
        x: learn.x,
        labels: learn.labels,
        mask,
    };
    let (params, report) =
        scg::train_early_stopping(&objective, net.params.clone(), rule, ScgSettings::default(), |p| {
            score(shape, p, val.x, val.labels)
        })?;
    let mut trained = Network::from_params(net.n_in, net.n_hidden, net.n_out, params)?;
    if let Some(mask) = mask {
        for (w, &keep) in trained.params.iter_mut().zip(mask) {
            if !keep {
                *w = 0.0;
            }
        }
    }
    Ok((trained, report))
}

/// A per-channel classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub network: Network,
    pub seed: u64,
}

impl MlpModel {
    pub fn n_in(&self) -> usize {
        self.network.n_in
    }

    pub fn n_hidden(&self) -> usize {
        self.network.n_hidden
    }

    pub fn n_out(&self) -> usize {
        self.network.n_out
    }

    pub fn param_count(&self) -> usize {
        self.network.param_count()
    }

    /// Probability matrix `C x batch` for input rows `x`.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.network.forward(x)
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        self.network.predict(x)
    }
}

/// Glorot-uniform weights (`r = sqrt(6 / (fan_in + fan_out))` per layer),
/// zero biases, drawn row-major from a generator seeded by `seed`.
pub fn init_weights(n_in: usize, n_hidden: usize, n_out: usize, seed: u64) -> Result<MlpModel> {
    if n_in == 0 || n_hidden == 0 || n_out == 0 {
        return Err(Error::InvalidArgument(format!(
            "layer sizes must be >= 1, got {n_in}-{n_hidden}-{n_out}"
        )));
    }
    let mut net = Network::zeros(n_in, n_hidden, n_out);
    let off = net.offsets();
    let mut rng = seed::rng(seed);
    let r1 = (6.0 / (n_in + n_hidden) as f64).sqrt();
    for w in &mut net.params[..off.b1] {
        *w = rng.random_range(-r1..=r1);
    }
    let r2 = (6.0 / (n_hidden + n_out) as f64).sqrt();
    for w in &mut net.params[off.w2..off.b2] {
        *w = rng.random_range(-r2..=r2);
    }
    Ok(MlpModel { network: net, seed })
}

/// Mean cross-entropy and gradient (`W1, b1, W2, b2`, row-major).
pub fn loss_and_gradient(model: &MlpModel, x: &DMatrix<f64>, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    let net = &model.network;
    net.check_input(x)?;
    check_labels(labels, x.nrows(), net.n_out)?;
    Ok(cross_entropy_grad(
        (net.n_in, net.n_hidden, net.n_out),
        &net.params,
        x,
        labels,
        None,
    ))
}

/// Full-batch SCG on `learn` with early stopping on `val`.
pub fn scg_train(
    model: &MlpModel,
    learn: Batch<'_>,
    val: Batch<'_>,
    rule: StopRule,
) -> Result<(MlpModel, TrainReport)> {
    let (network, report) = train_network(&model.network, None, learn, val, rule)?;
    Ok((
        MlpModel {
            network,
            seed: model.seed,
        },
        report,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_is_uniform() {
        let model = MlpModel {
            network: Network::zeros(3, 4, 5),
            seed: 0,
        };
        let x = DMatrix::from_fn(2, 3, |i, j| (i + j) as f64);
        let p = model.forward(&x).unwrap();
        assert_eq!(p.shape(), (5, 2));
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
        let (loss, grad) = loss_and_gradient(&model, &x, &[0, 3]).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-15);
        assert_eq!(grad.len(), model.param_count());
    }

    #[test]
    fn balanced_batch_has_zero_output_bias_gradient() {
        let model = MlpModel {
            network: Network::zeros(2, 3, 3),
            seed: 0,
        };
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
        let (_, grad) = loss_and_gradient(&model, &x, &[0, 1, 2]).unwrap();
        let off = model.network.offsets();
        for g in &grad[off.b2..off.end] {
            assert!(g.abs() < 1e-16);
        }
    }

    #[test]
    fn hand_computed_two_two_two() {
        let params = vec![
            0.5, -0.25, // W1 row 0
            1.0, 0.75, // W1 row 1
            0.1, -0.2, // b1
            0.3, -0.6, // W2 row 0
            -0.4, 0.9, // W2 row 1
            0.05, -0.05, // b2
        ];
        let net = Network::from_params(2, 2, 2, params).unwrap();
        let (x0, x1) = (0.8, -1.5);
        let h0 = (0.5 * x0 - 0.25 * x1 + 0.1f64).tanh();
        let h1 = (1.0 * x0 + 0.75 * x1 - 0.2f64).tanh();
        let z0 = 0.3 * h0 - 0.6 * h1 + 0.05;
        let z1 = -0.4 * h0 + 0.9 * h1 - 0.05;
        let e0 = z0.exp();
        let e1 = z1.exp();
        let want = [e0 / (e0 + e1), e1 / (e0 + e1)];
        let p = net.forward(&DMatrix::from_row_slice(1, 2, &[x0, x1])).unwrap();
        assert!((p[(0, 0)] - want[0]).abs() < 1e-12);
        assert!((p[(1, 0)] - want[1]).abs() < 1e-12);
    }

    #[test]
    fn init_is_seeded_with_zero_biases() {
        let a = init_weights(10, 20, 4, 99).unwrap();
        let b = init_weights(10, 20, 4, 99).unwrap();
        let c = init_weights(10, 20, 4, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.network.params, c.network.params);
        let off = a.network.offsets();
        assert!(a.network.params[off.b1..off.w2].iter().all(|&v| v == 0.0));
        assert!(a.network.params[off.b2..].iter().all(|&v| v == 0.0));
        let r1 = (6.0f64 / 30.0).sqrt();
        assert!(a.network.params[..off.b1].iter().all(|v| v.abs() <= r1));
        assert!(init_weights(0, 1, 1, 0).is_err());
    }

    #[test]
    fn bad_labels_and_shapes_are_rejected() {
        let model = init_weights(2, 2, 2, 1).unwrap();
        let x = DMatrix::zeros(1, 2);
        assert!(loss_and_gradient(&model, &x, &[2]).is_err());
        assert!(loss_and_gradient(&model, &DMatrix::zeros(1, 3), &[0]).is_err());
        assert!(model.forward(&DMatrix::zeros(1, 5)).is_err());
    }

    #[test]
    fn argmax_ties_go_to_lowest_index() {
        let m = DMatrix::from_row_slice(2, 3, &[0.2, 0.4, 0.4, 1.0, 1.0, 1.0]);
        assert_eq!(argmax_rows(&m), vec![1, 0]);
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let model = init_weights(3, 4, 2, 5).unwrap();
        let x = DMatrix::from_fn(4, 3, |i, j| (i as f64 - j as f64) * 0.3);
        let y = [0, 1, 0, 1];
        let (trained, report) = scg_train(
            &model,
            Batch::new(&x, &y),
            Batch::new(&x, &y),
            StopRule {
                max_epochs: 0,
                patience: 5,
            },
        )
        .unwrap();
        assert_eq!(trained, model);
        assert_eq!(report.stop_reason, scg::StopReason::MaxEpochs);
    }
}
