//! Sparse multinomial logistic readout: mean cross-entropy plus an ℓ1
//! penalty on the weights (intercepts unpenalized), minimized by accelerated
//! proximal gradient with backtracking and a monotone safeguard.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{AuditError, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L1Options {
    pub max_iter: usize,
    /// Relative objective change that triggers an optimality check.
    pub rel_tol: f64,
    /// Largest tolerated KKT violation at a converged solution.
    pub kkt_tol: f64,
}

impl Default for L1Options {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            rel_tol: 1e-9,
            kkt_tol: 1e-7,
        }
    }
}

/// One solution along the regularization path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1Path {
    pub lambda: f64,
    /// `n_classes x n_features`.
    pub weights: Matrix,
    pub intercepts: Vec<f64>,
    /// Feature columns with a nonzero weight for some class.
    pub nonzero_neurons: Vec<usize>,
    pub objective_value: f64,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub kkt: f64,
    /// Final backtracking step constant, reused by warm starts.
    pub lipschitz: f64,
}

impl L1Path {
    pub fn n_classes(&self) -> usize {
        self.intercepts.len()
    }
}

/// Weights at or below this magnitude count as zero.
pub const NONZERO_EPS: f64 = 1e-8;
/// Every KKT check runs at least this often.
const CHECK_EVERY: usize = 10;
/// Consecutive zero-progress iterations after which the solver gives up.
const STALL_LIMIT: usize = 200;

/// Dot product with four independent accumulators so the compiler can
/// vectorize it; the summation order is fixed, so results are reproducible.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

struct Problem<'a> {
    x: &'a Matrix,
    y: &'a [usize],
    k: usize,
    p: usize,
}

impl Problem<'_> {
    fn dim(&self) -> usize {
        self.k * (self.p + 1)
    }

    /// Mean cross-entropy; accumulates its gradient into `grad` when given.
    fn loss(&self, theta: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let (k, p) = (self.k, self.p);
        let (w, b) = theta.split_at(k * p);
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        let mut logits = vec![0.0; k];
        let mut total = 0.0;
        for (i, &yi) in self.y.iter().enumerate() {
            let row = self.x.row(i);
            for c in 0..k {
                let wc = &w[c * p..(c + 1) * p];
                logits[c] = b[c] + dot(wc, row);
            }
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = logits.iter().map(|l| libm::exp(l - m)).sum();
            let lse = m + libm::log(s);
            total += lse - logits[yi];
            if let Some(g) = grad.as_deref_mut() {
                let (gw, gb) = g.split_at_mut(k * p);
                for c in 0..k {
                    let r = libm::exp(logits[c] - lse) - if c == yi { 1.0 } else { 0.0 };
                    if r != 0.0 {
                        for (gj, v) in gw[c * p..(c + 1) * p].iter_mut().zip(row) {
                            *gj += r * v;
                        }
                    }
                    gb[c] += r;
                }
            }
        }
        let n = self.y.len() as f64;
        if let Some(g) = grad {
            g.iter_mut().for_each(|v| *v /= n);
        }
        total / n
    }

    fn penalty(&self, theta: &[f64], lambda: f64) -> f64 {
        lambda * theta[..self.k * self.p].iter().map(|v| v.abs()).sum::<f64>()
    }

    fn kkt(&self, theta: &[f64], grad: &[f64], lambda: f64) -> f64 {
        let wp = self.k * self.p;
        let mut worst = 0.0f64;
        for (i, (&t, &g)) in theta.iter().zip(grad).enumerate() {
            let v = if i >= wp {
                g.abs()
            } else if t == 0.0 {
                (g.abs() - lambda).max(0.0)
            } else {
                (g + lambda * t.signum()).abs()
            };
            worst = worst.max(v);
        }
        worst
    }
}

fn validate(x: &Matrix, y: &[usize], n_classes: usize) -> Result<(), AuditError> {
    if x.rows() != y.len() {
        return Err(AuditError::ShapeMismatch("feature rows and labels differ in length"));
    }
    if y.len() < 2 {
        return Err(AuditError::InsufficientData(y.len()));
    }
    if n_classes < 2 {
        return Err(AuditError::ShapeMismatch("need at least two classes"));
    }
    if let Some(&label) = y.iter().find(|&&l| l >= n_classes) {
        return Err(AuditError::InvalidLabel {
            label,
            classes: n_classes,
        });
    }
    if !x.is_finite() {
        return Err(AuditError::NumericalError("non-finite feature value"));
    }
    Ok(())
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Intercepts at the class log-priors (add-one smoothed), weights zero.
fn prior_start(y: &[usize], k: usize, p: usize) -> Vec<f64> {
    let mut theta = vec![0.0; k * (p + 1)];
    let mut counts = vec![1.0; k];
    for &l in y {
        counts[l] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    for c in 0..k {
        theta[k * p + c] = libm::log(counts[c] / total);
    }
    theta
}

/// Minimizes `mean CE + lambda * sum |W|`. A warm start must have matching
/// shape; otherwise it is ignored.
pub fn fit_l1_multinomial(
    x: &Matrix,
    y: &[usize],
    n_classes: usize,
    lambda: f64,
    opts: &L1Options,
    warm: Option<&L1Path>,
) -> Result<L1Path, AuditError> {
    validate(x, y, n_classes)?;
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(AuditError::InvalidLambda(lambda));
    }
    let prob = Problem {
        x,
        y,
        k: n_classes,
        p: x.cols(),
    };
    let (k, p) = (prob.k, prob.p);
    let wp = k * p;

    let warm = warm.filter(|w| w.weights.rows() == k && w.weights.cols() == p);
    let (mut xk, mut lip) = match warm {
        Some(w) => {
            let mut t = w.weights.as_slice().to_vec();
            t.extend_from_slice(&w.intercepts);
            (t, w.lipschitz.max(1e-3))
        }
        None => (prior_start(y, k, p), 0.25),
    };
    let dim = prob.dim();
    let mut grad = vec![0.0; dim];
    let mut z = vec![0.0; dim];
    let mut yk = xk.clone();
    let mut x_prev = xk.clone();
    let mut z_prev = xk.clone();
    let mut t = 1.0f64;

    let mut f_x = prob.loss(&xk, None) + prob.penalty(&xk, lambda);
    if !f_x.is_finite() {
        return Err(AuditError::NumericalError("objective is not finite at the start point"));
    }
    let mut trace = vec![f_x];
    let mut converged = false;
    let mut kkt = f64::INFINITY;
    let mut stall = 0usize;
    let mut iterations = 0usize;

    while iterations < opts.max_iter {
        iterations += 1;
        let f_y = prob.loss(&yk, Some(&mut grad));
        if !f_y.is_finite() {
            return Err(AuditError::NumericalError("loss diverged"));
        }
        let f_z_smooth = loop {
            for i in 0..dim {
                let v = yk[i] - grad[i] / lip;
                z[i] = if i < wp { soft_threshold(v, lambda / lip) } else { v };
            }
            let f_z = prob.loss(&z, None);
            let mut lin = 0.0;
            let mut sq = 0.0;
            for i in 0..dim {
                let d = z[i] - yk[i];
                lin += grad[i] * d;
                sq += d * d;
            }
            let bound = f_y + lin + 0.5 * lip * sq;
            if f_z <= bound + 1e-13 * (1.0 + f_y.abs()) {
                break f_z;
            }
            lip *= 2.0;
            if !lip.is_finite() || lip > 1e300 {
                return Err(AuditError::NumericalError("step size collapsed"));
            }
        };
        let f_z = f_z_smooth + prob.penalty(&z, lambda);
        let t_next = 0.5 * (1.0 + libm::sqrt(1.0 + 4.0 * t * t));

        x_prev.copy_from_slice(&xk);
        z_prev.copy_from_slice(&z);
        let accepted = f_z <= f_x;
        if accepted {
            xk.copy_from_slice(&z);
        }
        let f_new = if accepted { f_z } else { f_x };
        let rel = (f_x - f_new).abs() / f_x.abs().max(1e-12);
        f_x = f_new;
        trace.push(f_x);

        if accepted {
            for i in 0..dim {
                yk[i] = xk[i]
                    + (t / t_next) * (z_prev[i] - xk[i])
                    + ((t - 1.0) / t_next) * (xk[i] - x_prev[i]);
            }
            t = t_next;
        } else {
            // Restart momentum from the retained iterate.
            yk.copy_from_slice(&xk);
            t = 1.0;
        }

        stall = if rel == 0.0 { stall + 1 } else { 0 };
        if rel < opts.rel_tol || iterations % CHECK_EVERY == 0 {
            prob.loss(&xk, Some(&mut grad));
            kkt = prob.kkt(&xk, &grad, lambda);
            if kkt <= opts.kkt_tol {
                converged = true;
                break;
            }
        }
        if stall >= STALL_LIMIT {
            break;
        }
    }
    if !converged {
        prob.loss(&xk, Some(&mut grad));
        kkt = prob.kkt(&xk, &grad, lambda);
    }

    let intercepts = xk[wp..].to_vec();
    xk.truncate(wp);
    let weights = Matrix::from_vec(k, p, xk).expect("shape fixed above");
    let nonzero_neurons = (0..p)
        .filter(|&j| (0..k).any(|c| weights.get(c, j).abs() > NONZERO_EPS))
        .collect();
    Ok(L1Path {
        lambda,
        weights,
        intercepts,
        nonzero_neurons,
        objective_value: f_x,
        objective_trace: trace,
        iterations,
        converged,
        kkt,
        lipschitz: lip,
    })
}

/// Objective value of an arbitrary parameter setting.
pub fn objective(
    x: &Matrix,
    y: &[usize],
    lambda: f64,
    weights: &Matrix,
    intercepts: &[f64],
) -> Result<f64, AuditError> {
    let k = intercepts.len();
    validate(x, y, k)?;
    if weights.rows() != k || weights.cols() != x.cols() {
        return Err(AuditError::ShapeMismatch("weights do not match features and classes"));
    }
    let prob = Problem {
        x,
        y,
        k,
        p: x.cols(),
    };
    let mut theta = weights.as_slice().to_vec();
    theta.extend_from_slice(intercepts);
    Ok(prob.loss(&theta, None) + prob.penalty(&theta, lambda))
}

/// Largest violation of the optimality conditions at `path`.
pub fn kkt_violation(x: &Matrix, y: &[usize], path: &L1Path) -> Result<f64, AuditError> {
    let k = path.n_classes();
    validate(x, y, k)?;
    let prob = Problem {
        x,
        y,
        k,
        p: x.cols(),
    };
    let mut theta = path.weights.as_slice().to_vec();
    theta.extend_from_slice(&path.intercepts);
    let mut grad = vec![0.0; theta.len()];
    prob.loss(&theta, Some(&mut grad));
    Ok(prob.kkt(&theta, &grad, path.lambda))
}

/// Arg-max class per row; ties go to the lowest class index.
pub fn predict(path: &L1Path, x: &Matrix) -> Vec<usize> {
    let k = path.n_classes();
    (0..x.rows())
        .map(|i| {
            let row = x.row(i);
            let mut best = (0usize, f64::NEG_INFINITY);
            for c in 0..k {
                let w = path.weights.row(c);
                let s = path.intercepts[c] + dot(w, row);
                if s > best.1 {
                    best = (c, s);
                }
            }
            best.0
        })
        .collect()
}

pub fn accuracy(path: &L1Path, x: &Matrix, y: &[usize]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let hits = predict(path, x)
        .iter()
        .zip(y)
        .filter(|(a, b)| a == b)
        .count();
    hits as f64 / y.len() as f64
}

/// Unregularized refit on `columns` of the fitting split, scored on the
/// evaluation split.
pub fn retrain_and_evaluate(
    x_fit: &Matrix,
    y_fit: &[usize],
    x_eval: &Matrix,
    y_eval: &[usize],
    columns: &[usize],
    n_classes: usize,
    opts: &L1Options,
) -> Result<(f64, L1Path), AuditError> {
    if columns.is_empty() {
        return Err(AuditError::EmptySubset);
    }
    if columns.iter().any(|&c| c >= x_fit.cols()) {
        return Err(AuditError::ShapeMismatch("subset column out of range"));
    }
    if x_eval.cols() != x_fit.cols() {
        return Err(AuditError::ShapeMismatch("splits have different feature counts"));
    }
    let fit = x_fit.select_columns(columns);
    let path = fit_l1_multinomial(&fit, y_fit, n_classes, 0.0, opts, None)?;
    let acc = accuracy(&path, &x_eval.select_columns(columns), y_eval);
    Ok((acc, path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Matrix, Vec<usize>) {
        let rows = [
            [1.0, 0.2, -0.3],
            [0.8, -0.1, 0.4],
            [1.2, 0.3, 0.1],
            [-1.0, 0.1, -0.2],
            [-0.7, -0.4, 0.3],
            [-1.1, 0.2, 0.0],
            [0.1, 1.0, 0.2],
            [-0.2, 1.3, -0.1],
            [0.0, 0.9, 0.5],
        ];
        let x = Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
        (x, vec![0, 0, 0, 1, 1, 1, 2, 2, 2])
    }

    #[test]
    fn converges_with_small_kkt() {
        let (x, y) = toy();
        let path = fit_l1_multinomial(&x, &y, 3, 0.05, &L1Options::default(), None).unwrap();
        assert!(path.converged);
        assert!(kkt_violation(&x, &y, &path).unwrap() <= 1e-6);
    }

    #[test]
    fn trace_is_monotone() {
        let (x, y) = toy();
        let path = fit_l1_multinomial(&x, &y, 3, 0.01, &L1Options::default(), None).unwrap();
        for w in path.objective_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn huge_lambda_zeroes_weights() {
        let (x, y) = toy();
        let path = fit_l1_multinomial(&x, &y, 3, 10.0, &L1Options::default(), None).unwrap();
        assert!(path.nonzero_neurons.is_empty());
        assert!(path.weights.as_slice().iter().all(|w| *w == 0.0));
    }

    #[test]
    fn full_shrinkage_predicts_majority() {
        let (x, mut y) = toy();
        y[3] = 0;
        let path = fit_l1_multinomial(&x, &y, 3, 1e6, &L1Options::default(), None).unwrap();
        assert!(path.nonzero_neurons.is_empty());
        assert!(predict(&path, &x).iter().all(|c| *c == 0));
    }

    #[test]
    fn empty_subset_rejected() {
        let (x, y) = toy();
        assert_eq!(
            retrain_and_evaluate(&x, &y, &x, &y, &[], 3, &L1Options::default()).unwrap_err(),
            AuditError::EmptySubset
        );
    }

    #[test]
    fn rejects_bad_input() {
        let (x, y) = toy();
        let opts = L1Options::default();
        assert!(matches!(
            fit_l1_multinomial(&x, &y, 2, 0.1, &opts, None),
            Err(AuditError::InvalidLabel { label: 2, classes: 2 })
        ));
        assert!(matches!(
            fit_l1_multinomial(&x, &y, 3, -1.0, &opts, None),
            Err(AuditError::InvalidLambda(_))
        ));
        let mut bad = x.clone();
        bad.set(0, 0, f64::NAN);
        assert!(matches!(
            fit_l1_multinomial(&bad, &y, 3, 0.1, &opts, None),
            Err(AuditError::NumericalError(_))
        ));
    }

    #[test]
    fn warm_start_reaches_same_optimum() {
        let (x, y) = toy();
        let opts = L1Options::default();
        let a = fit_l1_multinomial(&x, &y, 3, 0.02, &opts, None).unwrap();
        let warm = fit_l1_multinomial(&x, &y, 3, 0.2, &opts, None).unwrap();
        let b = fit_l1_multinomial(&x, &y, 3, 0.02, &opts, Some(&warm)).unwrap();
        assert!((a.objective_value - b.objective_value).abs() < 1e-8);
    }

    #[test]
    fn retrain_on_informative_column() {
        let (x, y) = toy();
        let (acc, _) =
            retrain_and_evaluate(&x, &y, &x, &y, &[0, 1], 3, &L1Options::default()).unwrap();
        assert_eq!(acc, 1.0);
    }
}
