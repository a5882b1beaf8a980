//! Bisection on the regularization strength for a target support size.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::l1::{fit_l1_multinomial, L1Options, L1Path};
use super::{AuditError, Matrix};

pub const DEFAULT_MAX_STEPS: usize = 60;

/// Brackets narrower than this ratio count as a jump over the target.
const JUMP_RATIO: f64 = 1.0 + 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsitySearch {
    pub target: usize,
    pub lambda: f64,
    pub path: L1Path,
    /// False when the path jumps over the target and the nearest count was
    /// returned instead.
    pub exact: bool,
    pub steps: usize,
    /// Every `(lambda, nonzero count)` fitted during the search.
    pub trace: Vec<(f64, usize)>,
}

impl SparsitySearch {
    pub fn count(&self) -> usize {
        self.path.nonzero_neurons.len()
    }
}

/// Smallest strength at which all weights are zero: the largest weight
/// gradient at zero weights with intercepts at the class log-priors.
pub fn lambda_max(x: &Matrix, y: &[usize], n_classes: usize) -> Result<f64, AuditError> {
    if x.rows() != y.len() {
        return Err(AuditError::ShapeMismatch("feature rows and labels differ in length"));
    }
    if y.is_empty() {
        return Err(AuditError::InsufficientData(0));
    }
    let n = y.len() as f64;
    let mut prior = vec![0.0; n_classes];
    for &l in y {
        if l >= n_classes {
            return Err(AuditError::InvalidLabel {
                label: l,
                classes: n_classes,
            });
        }
        prior[l] += 1.0 / n;
    }
    let p = x.cols();
    let mut g = vec![0.0; n_classes * p];
    for (i, &yi) in y.iter().enumerate() {
        let row = x.row(i);
        for c in 0..n_classes {
            let r = prior[c] - if c == yi { 1.0 } else { 0.0 };
            for (gj, v) in g[c * p..(c + 1) * p].iter_mut().zip(row) {
                *gj += r * v;
            }
        }
    }
    Ok(g.iter().fold(0.0f64, |m, v| m.max((v / n).abs())))
}

/// Finds a strength whose solution keeps exactly `target` features, bisecting
/// on log-lambda with warm starts for at most `max_steps` fits.
pub fn lambda_for_sparsity(
    x: &Matrix,
    y: &[usize],
    n_classes: usize,
    target: usize,
    max_steps: usize,
    opts: &L1Options,
) -> Result<SparsitySearch, AuditError> {
    let p = x.cols();
    if target == 0 || target > p {
        return Err(AuditError::InvalidTarget { target, features: p });
    }
    let lmax = lambda_max(x, y, n_classes)?;
    if !(lmax > 0.0) {
        return Err(AuditError::NumericalError("all weight gradients vanish at zero"));
    }
    let mut trace = Vec::new();
    let mut steps = 0usize;
    let fit = |lambda: f64, warm: Option<&L1Path>, trace: &mut Vec<(f64, usize)>| {
        let path = fit_l1_multinomial(x, y, n_classes, lambda, opts, warm)?;
        trace.push((lambda, path.nonzero_neurons.len()));
        Ok::<_, AuditError>(path)
    };
    let done = |path: L1Path, exact: bool, steps: usize, trace: Vec<(f64, usize)>| SparsitySearch {
        target,
        lambda: path.lambda,
        path,
        exact,
        steps,
        trace,
    };

    // Lower end: shrink until the support reaches the target.
    let mut lo = lmax * 0.1;
    let mut lo_path = fit(lo, None, &mut trace)?;
    steps += 1;
    while lo_path.nonzero_neurons.len() < target && lo > lmax * 1e-12 && steps < max_steps {
        lo *= 0.1;
        lo_path = fit(lo, Some(&lo_path), &mut trace)?;
        steps += 1;
    }
    let lo_count = lo_path.nonzero_neurons.len();
    if lo_count == target {
        return Ok(done(lo_path, true, steps, trace));
    }
    if lo_count < target {
        return Err(AuditError::SparsityUnreachable {
            target,
            below: lo_count,
            above: lo_count,
        });
    }

    let mut hi = lmax;
    let mut hi_path: Option<L1Path> = None;
    let mut last = lo_path.clone();
    while steps < max_steps {
        let mid = libm::sqrt(lo * hi);
        let path = fit(mid, Some(&last), &mut trace)?;
        steps += 1;
        let count = path.nonzero_neurons.len();
        if count == target {
            return Ok(done(path, true, steps, trace));
        }
        last = path.clone();
        if count > target {
            lo = mid;
            lo_path = path;
        } else {
            hi = mid;
            hi_path = Some(path);
        }
        if hi / lo < JUMP_RATIO {
            break;
        }
    }

    let hi_path = match hi_path {
        Some(p) => p,
        None => fit(hi, Some(&last), &mut trace)?,
    };
    let (below, above) = (hi_path.nonzero_neurons.len(), lo_path.nonzero_neurons.len());
    if hi / lo >= JUMP_RATIO {
        return Err(AuditError::SparsityUnreachable {
            target,
            below,
            above,
        });
    }
    let nearest = if above - target <= target - below {
        lo_path
    } else {
        hi_path
    };
    Ok(done(nearest, false, steps, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::fit_l1_multinomial;

    fn data() -> (Matrix, Vec<usize>) {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..60 {
            let c = i % 3;
            let s = (i as f64 * 0.37).sin();
            let t = (i as f64 * 1.91).cos();
            rows.push(vec![
                if c == 0 { 1.0 } else { -0.5 } + 0.3 * s,
                if c == 1 { 1.0 } else { -0.5 } + 0.3 * t,
                0.5 * s * t,
                0.2 * (s - t),
                if c == 2 { 0.4 } else { 0.0 } + 0.6 * s,
            ]);
            y.push(c);
        }
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn lambda_max_zeroes_everything() {
        let (x, y) = data();
        let lmax = lambda_max(&x, &y, 3).unwrap();
        let opts = L1Options::default();
        let at = fit_l1_multinomial(&x, &y, 3, lmax * 1.0001, &opts, None).unwrap();
        assert!(at.nonzero_neurons.is_empty());
        let below = fit_l1_multinomial(&x, &y, 3, lmax * 0.99, &opts, None).unwrap();
        assert!(!below.nonzero_neurons.is_empty());
    }

    #[test]
    fn hits_each_reachable_count() {
        let (x, y) = data();
        let opts = L1Options::default();
        for target in 1..=5 {
            match lambda_for_sparsity(&x, &y, 3, target, DEFAULT_MAX_STEPS, &opts) {
                Ok(s) => {
                    assert!(s.steps <= DEFAULT_MAX_STEPS);
                    if s.exact {
                        assert_eq!(s.count(), target);
                    }
                }
                Err(e) => panic!("target {target}: {e}"),
            }
        }
    }

    #[test]
    fn invalid_targets() {
        let (x, y) = data();
        let opts = L1Options::default();
        assert!(matches!(
            lambda_for_sparsity(&x, &y, 3, 0, 60, &opts),
            Err(AuditError::InvalidTarget { .. })
        ));
        assert!(matches!(
            lambda_for_sparsity(&x, &y, 3, 6, 60, &opts),
            Err(AuditError::InvalidTarget { .. })
        ));
    }
}
