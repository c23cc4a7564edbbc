//! Møller's scaled conjugate gradient and a validation-driven training loop.
//!
//! SCG avoids a line search by estimating the curvature along the search
//! direction with one extra gradient evaluation, and regulating the step with
//! a Levenberg-Marquardt style scale `lambda` that is lowered when the
//! quadratic model predicts the loss well and raised when it does not.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A differentiable scalar function of a flat parameter vector.
pub trait Objective {
    fn dim(&self) -> usize;

    fn loss_grad(&self, params: &[f64]) -> (f64, Vec<f64>);

    fn loss(&self, params: &[f64]) -> f64 {
        self.loss_grad(params).0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScgSettings {
    /// Finite-difference step for the curvature estimate.
    pub sigma: f64,
    pub lambda_init: f64,
    /// Stop when the gradient norm drops below this.
    pub grad_tol: f64,
}

impl Default for ScgSettings {
    fn default() -> Self {
        Self {
            sigma: 5e-5,
            lambda_init: 5e-7,
            grad_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub accepted: bool,
    /// Loss at the current point after the step.
    pub loss: f64,
    pub grad_norm: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(x: &[f64], alpha: f64, dir: &[f64]) -> Vec<f64> {
    x.iter().zip(dir).map(|(a, d)| a + alpha * d).collect()
}

pub struct Scg<'o, O: Objective + ?Sized> {
    obj: &'o O,
    settings: ScgSettings,
    w: Vec<f64>,
    loss: f64,
    grad: Vec<f64>,
    /// Negative gradient.
    r: Vec<f64>,
    /// Search direction.
    p: Vec<f64>,
    lambda: f64,
    lambda_bar: f64,
    /// Scaled curvature along `p`, kept across rejected steps.
    delta: f64,
    success: bool,
    accepted_steps: usize,
    reset_used: bool,
}

impl<'o, O: Objective + ?Sized> Scg<'o, O> {
    pub fn new(obj: &'o O, w0: Vec<f64>, settings: ScgSettings) -> Result<Self> {
        if w0.len() != obj.dim() {
            return Err(Error::DimensionMismatch {
                expected: obj.dim(),
                got: w0.len(),
            });
        }
        let (loss, grad) = obj.loss_grad(&w0);
        if !loss.is_finite() {
            return Err(Error::Divergence("initial loss is not finite".into()));
        }
        let r: Vec<f64> = grad.iter().map(|g| -g).collect();
        Ok(Self {
            obj,
            settings,
            p: r.clone(),
            r,
            w: w0,
            loss,
            grad,
            lambda: settings.lambda_init,
            lambda_bar: 0.0,
            delta: 0.0,
            success: true,
            accepted_steps: 0,
            reset_used: false,
        })
    }

    pub fn params(&self) -> &[f64] {
        &self.w
    }

    pub fn into_params(self) -> Vec<f64> {
        self.w
    }

    pub fn loss(&self) -> f64 {
        self.loss
    }

    pub fn grad_norm(&self) -> f64 {
        dot(&self.r, &self.r).sqrt()
    }

    pub fn converged(&self) -> bool {
        self.grad_norm() < self.settings.grad_tol
    }

    fn restart(&mut self) {
        self.p = self.r.clone();
        self.success = true;
    }

    /// One SCG iteration. Rejected steps leave the parameters untouched.
    pub fn step(&mut self) -> Result<StepOutcome> {
        let mut p_sq = dot(&self.p, &self.p);
        if p_sq == 0.0 || !p_sq.is_finite() {
            self.restart();
            p_sq = dot(&self.p, &self.p);
            if p_sq == 0.0 {
                return Ok(self.outcome(false));
            }
        }

        if self.success {
            let sigma_k = self.settings.sigma / p_sq.sqrt();
            let (_, g_plus) = self.obj.loss_grad(&axpy(&self.w, sigma_k, &self.p));
            let s: Vec<f64> = g_plus.iter().zip(&self.grad).map(|(a, b)| (a - b) / sigma_k).collect();
            self.delta = dot(&self.p, &s);
        }

        let mut delta = self.delta + (self.lambda - self.lambda_bar) * p_sq;
        if delta <= 0.0 {
            // force a positive definite local model
            self.lambda_bar = 2.0 * (self.lambda - delta / p_sq);
            delta = -delta + self.lambda * p_sq;
            self.lambda = self.lambda_bar;
        }
        self.delta = delta;

        let mu = dot(&self.p, &self.r);
        if mu == 0.0 {
            self.restart();
            return Ok(self.outcome(false));
        }
        let alpha = mu / delta;
        let w_new = axpy(&self.w, alpha, &self.p);
        let (loss_new, grad_new) = self.obj.loss_grad(&w_new);

        if !loss_new.is_finite() || grad_new.iter().any(|g| !g.is_finite()) {
            if self.reset_used {
                return Err(Error::Divergence(format!(
                    "non-finite loss after {} accepted steps",
                    self.accepted_steps
                )));
            }
            self.reset_used = true;
            self.lambda = self.settings.lambda_init;
            self.lambda_bar = 0.0;
            self.restart();
            return Ok(self.outcome(false));
        }

        let comparison = 2.0 * delta * (self.loss - loss_new) / (mu * mu);
        let accepted = comparison >= 0.0;
        if accepted {
            let r_new: Vec<f64> = grad_new.iter().map(|g| -g).collect();
            self.accepted_steps += 1;
            if self.accepted_steps.is_multiple_of(self.w.len().max(1)) {
                self.p = r_new.clone();
            } else {
                let beta = (dot(&r_new, &r_new) - dot(&r_new, &self.r)) / mu;
                self.p = r_new.iter().zip(&self.p).map(|(r, p)| r + beta * p).collect();
            }
            self.w = w_new;
            self.loss = loss_new;
            self.grad = grad_new;
            self.r = r_new;
            self.lambda_bar = 0.0;
            self.success = true;
            if comparison >= 0.75 {
                self.lambda *= 0.5;
            }
        } else {
            self.lambda_bar = self.lambda;
            self.success = false;
        }
        if comparison < 0.25 {
            self.lambda += delta * (1.0 - comparison) / p_sq;
        }
        Ok(self.outcome(accepted))
    }

    fn outcome(&self, accepted: bool) -> StepOutcome {
        StepOutcome {
            accepted,
            loss: self.loss,
            grad_norm: self.grad_norm(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ValRise,
    MaxEpochs,
    GradTol,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::ValRise => "val_rise",
            StopReason::MaxEpochs => "max_epochs",
            StopReason::GradTol => "grad_tol",
        })
    }
}

/// Per-epoch history of a training run. Index 0 of each history is the
/// initial model, so `best_epoch == 0` means training never helped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub train_loss_history: Vec<f64>,
    pub val_error_history: Vec<f64>,
    pub val_loss_history: Vec<f64>,
    pub accepted: Vec<bool>,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

impl TrainReport {
    /// Tab-separated record: two header lines, then one row per epoch.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# epochs_run={} best_epoch={} stop_reason={}",
            self.epochs_run, self.best_epoch, self.stop_reason
        );
        let _ = writeln!(s, "epoch\ttrain_loss\tval_error\tval_loss\taccepted");
        for e in 0..self.train_loss_history.len() {
            let _ = writeln!(
                s,
                "{e}\t{}\t{}\t{}\t{}",
                self.train_loss_history[e],
                self.val_error_history[e],
                self.val_loss_history[e],
                u8::from(self.accepted[e])
            );
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopRule {
    pub max_epochs: usize,
    /// Epochs of validation getting worse tolerated before stopping;
    /// 0 disables validation stopping.
    pub patience: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            max_epochs: 1000,
            patience: 5,
        }
    }
}

/// Validation score: misclassification rate first, loss as tie-break.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValScore {
    pub error: f64,
    pub loss: f64,
}

impl ValScore {
    fn cmp_key(&self, other: &ValScore) -> std::cmp::Ordering {
        self.error
            .total_cmp(&other.error)
            .then(self.loss.total_cmp(&other.loss))
    }
}

/// Runs SCG one iteration per epoch, scoring the validation set after each.
/// A score better than the best so far resets the failure count, a worse one
/// increments it, an equal one (typically a rejected step) leaves it alone.
/// Returns the parameters of the best-scoring epoch.
pub fn train_early_stopping<O, V>(
    obj: &O,
    init: Vec<f64>,
    rule: StopRule,
    settings: ScgSettings,
    mut validate: V,
) -> Result<(Vec<f64>, TrainReport)>
where
    O: Objective + ?Sized,
    V: FnMut(&[f64]) -> ValScore,
{
    let mut scg = Scg::new(obj, init, settings)?;
    let first = validate(scg.params());
    let mut report = TrainReport {
        epochs_run: 0,
        train_loss_history: vec![scg.loss()],
        val_error_history: vec![first.error],
        val_loss_history: vec![first.loss],
        accepted: vec![false],
        best_epoch: 0,
        stop_reason: StopReason::MaxEpochs,
    };
    let mut best = first;
    let mut best_params = scg.params().to_vec();
    let mut fails = 0;

    for epoch in 1..=rule.max_epochs {
        if scg.converged() {
            report.stop_reason = StopReason::GradTol;
            break;
        }
        let outcome = scg.step()?;
        let score = validate(scg.params());
        report.epochs_run = epoch;
        report.train_loss_history.push(outcome.loss);
        report.val_error_history.push(score.error);
        report.val_loss_history.push(score.loss);
        report.accepted.push(outcome.accepted);
        match score.cmp_key(&best) {
            std::cmp::Ordering::Less => {
                best = score;
                best_params.copy_from_slice(scg.params());
                report.best_epoch = epoch;
                fails = 0;
            }
            std::cmp::Ordering::Greater => fails += 1,
            std::cmp::Ordering::Equal => {}
        }
        if rule.patience > 0 && fails >= rule.patience {
            report.stop_reason = StopReason::ValRise;
            break;
        }
    }
    if report.epochs_run == rule.max_epochs && report.stop_reason == StopReason::MaxEpochs && scg.converged() {
        report.stop_reason = StopReason::GradTol;
    }
    Ok((best_params, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// f(w) = 0.5 * sum_i c_i (w_i - t_i)^2
    struct Quadratic {
        c: Vec<f64>,
        t: Vec<f64>,
    }

    impl Objective for Quadratic {
        fn dim(&self) -> usize {
            self.c.len()
        }
        fn loss_grad(&self, w: &[f64]) -> (f64, Vec<f64>) {
            let mut loss = 0.0;
            let mut g = vec![0.0; w.len()];
            for i in 0..w.len() {
                let d = w[i] - self.t[i];
                loss += 0.5 * self.c[i] * d * d;
                g[i] = self.c[i] * d;
            }
            (loss, g)
        }
    }

    struct Rosenbrock;

    impl Objective for Rosenbrock {
        fn dim(&self) -> usize {
            2
        }
        fn loss_grad(&self, w: &[f64]) -> (f64, Vec<f64>) {
            let (x, y) = (w[0], w[1]);
            let loss = (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2);
            let gx = -2.0 * (1.0 - x) - 400.0 * x * (y - x * x);
            let gy = 200.0 * (y - x * x);
            (loss, vec![gx, gy])
        }
    }

    #[test]
    fn minimizes_a_separable_quadratic() {
        let obj = Quadratic {
            c: vec![1.0, 10.0, 100.0],
            t: vec![1.0, -2.0, 0.5],
        };
        let mut scg = Scg::new(&obj, vec![0.0; 3], ScgSettings::default()).unwrap();
        for _ in 0..200 {
            if scg.converged() {
                break;
            }
            scg.step().unwrap();
        }
        for (w, t) in scg.params().iter().zip(&obj.t) {
            assert!((w - t).abs() < 1e-6, "{w} vs {t}");
        }
    }

    #[test]
    fn accepted_steps_never_increase_the_loss() {
        let mut scg = Scg::new(&Rosenbrock, vec![-1.2, 1.0], ScgSettings::default()).unwrap();
        let mut last = scg.loss();
        for _ in 0..2000 {
            let out = scg.step().unwrap();
            assert!(out.loss <= last);
            last = out.loss;
        }
        assert!(last < 1e-8, "rosenbrock loss {last}");
    }

    struct Exploding;

    impl Objective for Exploding {
        fn dim(&self) -> usize {
            1
        }
        fn loss_grad(&self, w: &[f64]) -> (f64, Vec<f64>) {
            if w[0] > 0.5 {
                (f64::NAN, vec![f64::NAN])
            } else {
                (-w[0], vec![-1.0])
            }
        }
    }

    #[test]
    fn repeated_non_finite_loss_aborts() {
        let mut scg = Scg::new(&Exploding, vec![0.0], ScgSettings::default()).unwrap();
        let mut result = Ok(());
        for _ in 0..100 {
            if let Err(e) = scg.step() {
                result = Err(e);
                break;
            }
        }
        assert!(matches!(result, Err(Error::Divergence(_))));
    }

    #[test]
    fn zero_epochs_returns_initial_parameters() {
        let obj = Quadratic {
            c: vec![1.0],
            t: vec![3.0],
        };
        let (w, report) = train_early_stopping(
            &obj,
            vec![0.25],
            StopRule {
                max_epochs: 0,
                patience: 5,
            },
            ScgSettings::default(),
            |_| ValScore { error: 0.5, loss: 1.0 },
        )
        .unwrap();
        assert_eq!(w, vec![0.25]);
        assert_eq!(report.stop_reason, StopReason::MaxEpochs);
        assert_eq!(report.epochs_run, 0);
    }

    #[test]
    fn stops_once_validation_keeps_rising() {
        let obj = Quadratic {
            c: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            t: vec![1.0; 5],
        };
        let k = 3;
        let mut calls = 0usize;
        let (_, report) = train_early_stopping(
            &obj,
            vec![0.0; 5],
            StopRule {
                max_epochs: 100,
                patience: 4,
            },
            ScgSettings::default(),
            |_| {
                let epoch = calls;
                calls += 1;
                let error = if epoch <= k {
                    1.0 - 0.2 * epoch as f64
                } else {
                    0.4 + 0.05 * (epoch - k) as f64
                };
                ValScore { error, loss: error }
            },
        )
        .unwrap();
        assert_eq!(report.stop_reason, StopReason::ValRise);
        assert!(report.best_epoch <= k);
        assert_eq!(report.epochs_run, k + 4);
        let min = report.val_error_history.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(report.val_error_history[report.best_epoch], min);
    }

    #[test]
    fn exact_minimum_stops_on_gradient() {
        let obj = Quadratic {
            c: vec![2.0],
            t: vec![1.0],
        };
        let (_, report) = train_early_stopping(&obj, vec![1.0], StopRule::default(), ScgSettings::default(), |_| {
            ValScore { error: 0.0, loss: 0.0 }
        })
        .unwrap();
        assert_eq!(report.stop_reason, StopReason::GradTol);
        assert_eq!(report.epochs_run, 0);
    }
}
