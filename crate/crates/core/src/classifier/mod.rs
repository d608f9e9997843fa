//! Linear classifiers over averaged response embeddings.
//!
//! The default is ℓ2-regularised logistic regression, which yields
//! calibrated probabilities directly. An ℓ2 linear SVM (squared hinge)
//! followed by Platt scaling is available behind the same interface.

mod metrics;
mod split;

pub use metrics::{auc, binary_metrics, BinaryMetrics};
pub use split::{stratified_shuffle_split, Split, SplitPlan};

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cohort::Label;
use crate::error::{check_len, usage, Result};
use crate::math::{cholesky_solve, dot, log, norm, sigmoid, softplus};

/// Decision threshold on `p_MCI` for label predictions and threshold metrics.
pub const DECISION_THRESHOLD: f64 = 0.5;

const GRAD_TOL: f64 = 1e-6;
const MAX_NEWTON_STEPS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    #[default]
    Logistic,
    HingePlatt,
}

/// Sigmoid calibration `p = 1 / (1 + exp(-(a * margin + b)))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlattScaling {
    pub a: f64,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub kind: ClassifierKind,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub platt: Option<PlattScaling>,
}

impl ClassifierModel {
    /// A logistic model with the given parameters.
    pub fn logistic(weights: Vec<f64>, bias: f64) -> Self {
        Self {
            kind: ClassifierKind::Logistic,
            weights,
            bias,
            l2: 0.0,
            platt: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Raw linear score `w . x + b`.
    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        check_len("classifier input", self.weights.len(), x.len())?;
        Ok(dot(&self.weights, x) + self.bias)
    }

    /// `[p_NL, p_MCI]`.
    pub fn predict_proba(&self, x: &[f64]) -> Result<[f64; 2]> {
        let z = self.decision(x)?;
        let p_mci = match (self.kind, self.platt) {
            (ClassifierKind::HingePlatt, Some(p)) => sigmoid(p.a * z + p.b),
            _ => sigmoid(z),
        };
        Ok([1.0 - p_mci, p_mci])
    }

    pub fn predict(&self, x: &[f64]) -> Result<Label> {
        let [_, p_mci] = self.predict_proba(x)?;
        Ok(label_for(p_mci))
    }
}

/// Label assigned to a positive-class probability.
pub fn label_for(p_mci: f64) -> Label {
    if p_mci >= DECISION_THRESHOLD {
        Label::Mci
    } else {
        Label::Normal
    }
}

/// Fits a classifier by damped Newton iterations until the gradient norm
/// drops below 1e-6 (or an iteration cap). Both solvers are deterministic.
pub fn fit(features: &[Vec<f64>], labels: &[Label], l2: f64, kind: ClassifierKind) -> Result<ClassifierModel> {
    check_len("classifier labels", features.len(), labels.len())?;
    let Some(first) = features.first() else {
        return Err(usage("cannot fit a classifier on zero examples"));
    };
    let c = first.len();
    for f in features {
        check_len("classifier feature", c, f.len())?;
    }
    if !labels.iter().any(|l| l.is_positive()) || labels.iter().all(|l| l.is_positive()) {
        return Err(usage("training set must contain both classes"));
    }
    if !(l2 >= 0.0) {
        return Err(usage("l2 must be nonnegative"));
    }
    let y: Vec<f64> = labels.iter().map(|l| if l.is_positive() { 1.0 } else { 0.0 }).collect();
    let theta = match kind {
        ClassifierKind::Logistic => newton(&LogisticObjective { x: features, y: &y, l2 }, c + 1),
        ClassifierKind::HingePlatt => newton(&SquaredHingeObjective { x: features, y: &y, l2 }, c + 1),
    };
    let (weights, bias) = (theta[..c].to_vec(), theta[c]);
    let platt = match kind {
        ClassifierKind::Logistic => None,
        ClassifierKind::HingePlatt => {
            let margins: Vec<f64> = features.iter().map(|x| dot(&weights, x) + bias).collect();
            Some(fit_platt(&margins, &y))
        }
    };
    Ok(ClassifierModel {
        kind,
        weights,
        bias,
        l2,
        platt,
    })
}

/// A smooth convex objective over `theta = [w, b]`.
trait Objective {
    fn value(&self, theta: &[f64]) -> f64;
    /// Gradient and (generalised) Hessian, row-major.
    fn derivatives(&self, theta: &[f64]) -> (Vec<f64>, Vec<f64>);
}

fn newton(obj: &impl Objective, n: usize) -> Vec<f64> {
    let mut theta = vec![0.0; n];
    let mut value = obj.value(&theta);
    for _ in 0..MAX_NEWTON_STEPS {
        let (grad, mut hess) = obj.derivatives(&theta);
        if norm(&grad) < GRAD_TOL {
            break;
        }
        let mut damping = 0.0;
        let dir = loop {
            if let Some(d) = cholesky_solve(&hess, &grad) {
                break d;
            }
            let bump = if damping == 0.0 { 1e-10 } else { damping * 9.0 };
            for i in 0..n {
                hess[i * n + i] += bump;
            }
            damping += bump;
        };
        let slope = dot(&grad, &dir);
        let mut step = 1.0;
        let mut accepted = false;
        while step > 1e-12 {
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t - step * d).collect();
            let v = obj.value(&cand);
            if v <= value - 1e-4 * step * slope {
                theta = cand;
                value = v;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    theta
}

fn score(theta: &[f64], x: &[f64]) -> f64 {
    let c = x.len();
    dot(&theta[..c], x) + theta[c]
}

/// Mean log-loss plus `(l2 / 2) |w|^2`; the bias is not penalised.
struct LogisticObjective<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    l2: f64,
}

impl Objective for LogisticObjective<'_> {
    fn value(&self, theta: &[f64]) -> f64 {
        let n = self.x.len() as f64;
        let c = theta.len() - 1;
        let data: f64 = self
            .x
            .iter()
            .zip(self.y)
            .map(|(x, &y)| {
                let z = score(theta, x);
                softplus(z) - y * z
            })
            .sum();
        data / n + 0.5 * self.l2 * dot(&theta[..c], &theta[..c])
    }

    fn derivatives(&self, theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = theta.len();
        let c = m - 1;
        let inv_n = 1.0 / self.x.len() as f64;
        let mut grad = vec![0.0; m];
        let mut hess = vec![0.0; m * m];
        for (x, &y) in self.x.iter().zip(self.y) {
            let p = sigmoid(score(theta, x));
            let r = (p - y) * inv_n;
            let w = p * (1.0 - p) * inv_n;
            accumulate(&mut grad, &mut hess, x, r, w);
        }
        for i in 0..c {
            grad[i] += self.l2 * theta[i];
            hess[i * m + i] += self.l2;
        }
        (grad, hess)
    }
}

/// Mean squared hinge loss plus `(l2 / 2) |w|^2`.
struct SquaredHingeObjective<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    l2: f64,
}

impl Objective for SquaredHingeObjective<'_> {
    fn value(&self, theta: &[f64]) -> f64 {
        let n = self.x.len() as f64;
        let c = theta.len() - 1;
        let data: f64 = self
            .x
            .iter()
            .zip(self.y)
            .map(|(x, &y)| {
                let s = 2.0 * y - 1.0;
                let slack = 1.0 - s * score(theta, x);
                if slack > 0.0 {
                    slack * slack
                } else {
                    0.0
                }
            })
            .sum();
        data / n + 0.5 * self.l2 * dot(&theta[..c], &theta[..c])
    }

    fn derivatives(&self, theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = theta.len();
        let c = m - 1;
        let inv_n = 1.0 / self.x.len() as f64;
        let mut grad = vec![0.0; m];
        let mut hess = vec![0.0; m * m];
        for (x, &y) in self.x.iter().zip(self.y) {
            let s = 2.0 * y - 1.0;
            let slack = 1.0 - s * score(theta, x);
            if slack > 0.0 {
                accumulate(&mut grad, &mut hess, x, -2.0 * s * slack * inv_n, 2.0 * inv_n);
            }
        }
        for i in 0..c {
            grad[i] += self.l2 * theta[i];
            hess[i * m + i] += self.l2;
        }
        (grad, hess)
    }
}

/// Adds `r * [x, 1]` to the gradient and `w * [x, 1][x, 1]^T` to the Hessian.
fn accumulate(grad: &mut [f64], hess: &mut [f64], x: &[f64], r: f64, w: f64) {
    let m = grad.len();
    let c = m - 1;
    let xi = |i: usize| if i < c { x[i] } else { 1.0 };
    for i in 0..m {
        let a = xi(i);
        grad[i] += r * a;
        if w != 0.0 {
            let wa = w * a;
            for j in 0..=i {
                hess[i * m + j] += wa * xi(j);
            }
        }
    }
    if w != 0.0 {
        for i in 0..m {
            for j in 0..i {
                hess[j * m + i] = hess[i * m + j];
            }
        }
    }
}

/// Platt's sigmoid fit on training margins with smoothed targets.
fn fit_platt(margins: &[f64], y: &[f64]) -> PlattScaling {
    let n_pos = y.iter().filter(|&&v| v > 0.5).count() as f64;
    let n_neg = y.len() as f64 - n_pos;
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let t: Vec<f64> = y.iter().map(|&v| if v > 0.5 { hi } else { lo }).collect();
    let obj = PlattObjective { f: margins, t: &t };
    let theta = newton(&obj, 2);
    PlattScaling {
        a: theta[0],
        b: theta[1],
    }
}

struct PlattObjective<'a> {
    f: &'a [f64],
    t: &'a [f64],
}

impl Objective for PlattObjective<'_> {
    fn value(&self, th: &[f64]) -> f64 {
        self.f
            .iter()
            .zip(self.t)
            .map(|(&f, &t)| {
                let z = th[0] * f + th[1];
                softplus(z) - t * z
            })
            .sum()
    }

    fn derivatives(&self, th: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut g = vec![0.0; 2];
        let mut h = vec![0.0; 4];
        for (&f, &t) in self.f.iter().zip(self.t) {
            let p = sigmoid(th[0] * f + th[1]);
            let r = p - t;
            let w = p * (1.0 - p);
            g[0] += r * f;
            g[1] += r;
            h[0] += w * f * f;
            h[1] += w * f;
            h[3] += w;
        }
        h[2] = h[1];
        (g, h)
    }
}

/// Log-likelihood of labels under predicted `p_MCI` values, for diagnostics.
pub fn log_likelihood(p_mci: &[f64], labels: &[Label]) -> f64 {
    p_mci
        .iter()
        .zip(labels)
        .map(|(&p, l)| {
            let p = p.clamp(1e-15, 1.0 - 1e-15);
            if l.is_positive() {
                log(p)
            } else {
                log(1.0 - p)
            }
        })
        .sum()
}
