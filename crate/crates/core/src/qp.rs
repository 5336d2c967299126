//! Primal active-set solver for small convex box-constrained QPs:
//! minimize `½ xᵀQx + cᵀx` subject to `lo ≤ x ≤ hi`.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

#[derive(Debug, Clone)]
pub(crate) struct BoxQpResult {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// `x0` must be feasible. `q` must be symmetric positive semidefinite with
/// the objective bounded below on the box (always true for a box).
pub(crate) fn solve_box_qp(
    q: &DMatrix<f64>,
    c: &DVector<f64>,
    lo: &[f64],
    hi: &[f64],
    x0: &[f64],
) -> BoxQpResult {
    let n = c.len();
    let scale = q.amax().max(c.amax()).max(1.0);
    let tol = 1e-13 * scale;
    let mut x = DVector::from_iterator(n, x0.iter().zip(lo).zip(hi).map(|((&v, &l), &h)| v.clamp(l, h)));
    let mut state: Vec<Bound> = (0..n)
        .map(|i| {
            if lo[i] == hi[i] || x[i] <= lo[i] {
                Bound::Lower
            } else if x[i] >= hi[i] {
                Bound::Upper
            } else {
                Bound::Free
            }
        })
        .collect();

    let max_iter = 20 * n + 20;
    for iteration in 1..=max_iter {
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == Bound::Free).collect();
        let step = if free.is_empty() {
            None
        } else {
            subspace_step(q, c, &x, &free)
        };

        let moved = match step {
            Some(p) if p.amax() > 1e-15 * (1.0 + x.amax()) => {
                let mut alpha = 1.0;
                let mut blocking = None;
                for (f, &i) in free.iter().enumerate() {
                    let t = if p[f] < 0.0 {
                        (lo[i] - x[i]) / p[f]
                    } else if p[f] > 0.0 {
                        (hi[i] - x[i]) / p[f]
                    } else {
                        continue;
                    };
                    if t < alpha {
                        alpha = t;
                        blocking = Some((i, p[f] < 0.0));
                    }
                }
                for (f, &i) in free.iter().enumerate() {
                    x[i] = (x[i] + alpha * p[f]).clamp(lo[i], hi[i]);
                }
                if let Some((i, lower)) = blocking {
                    state[i] = if lower { Bound::Lower } else { Bound::Upper };
                    x[i] = if lower { lo[i] } else { hi[i] };
                }
                true
            }
            _ => false,
        };
        if moved {
            continue;
        }

        // subspace minimum reached: release the worst multiplier, if any
        let g = q * &x + c;
        let mut release: Option<(usize, f64)> = None;
        for i in 0..n {
            if lo[i] == hi[i] {
                continue;
            }
            let violation = match state[i] {
                Bound::Lower => -g[i],
                Bound::Upper => g[i],
                Bound::Free => continue,
            };
            if violation > tol && release.is_none_or(|(_, v)| violation > v) {
                release = Some((i, violation));
            }
        }
        match release {
            Some((i, _)) => state[i] = Bound::Free,
            None => {
                return BoxQpResult {
                    x,
                    iterations: iteration,
                    converged: true,
                }
            }
        }
    }
    BoxQpResult {
        x,
        iterations: max_iter,
        converged: false,
    }
}

/// Step from `x` to the minimizer over the free coordinates with the bound
/// coordinates held fixed.
fn subspace_step(q: &DMatrix<f64>, c: &DVector<f64>, x: &DVector<f64>, free: &[usize]) -> Option<DVector<f64>> {
    let m = free.len();
    let qff = DMatrix::from_fn(m, m, |a, b| q[(free[a], free[b])]);
    let g = q * x + c;
    let rhs = DVector::from_iterator(m, free.iter().map(|&i| -g[i]));
    let p = match qff.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => {
            let svd = qff.svd(true, true);
            let eps = svd.singular_values.max() * 1e-14;
            svd.solve(&rhs, eps).ok()?
        }
    };
    p.iter().all(|v| v.is_finite()).then_some(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn objective(q: &DMatrix<f64>, c: &DVector<f64>, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(q * x)) + c.dot(x)
    }

    #[test]
    fn unconstrained_minimum_inside_box() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let c = DVector::from_vec(vec![-1.0, -1.0]);
        let r = solve_box_qp(&q, &c, &[-1.0, -1.0], &[1.0, 1.0], &[0.0, 0.0]);
        assert!(r.converged);
        assert!((r.x[0] - 0.5).abs() < 1e-14 && (r.x[1] - 0.25).abs() < 1e-14);
    }

    #[test]
    fn active_bounds() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 1.0]);
        let c = DVector::from_vec(vec![-3.0, 1.0]);
        let r = solve_box_qp(&q, &c, &[0.0, 0.0], &[1.0, 1.0], &[0.5, 0.5]);
        assert!(r.converged);
        assert_eq!(r.x.as_slice(), &[1.0, 0.0]);
        // brute force over a grid
        let mut best = f64::INFINITY;
        for i in 0..=200 {
            for j in 0..=200 {
                let x = DVector::from_vec(vec![i as f64 / 200.0, j as f64 / 200.0]);
                best = best.min(objective(&q, &c, &x));
            }
        }
        assert!(objective(&q, &c, &r.x) <= best + 1e-12);
    }

    #[test]
    fn singular_hessian_uses_pseudo_inverse() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let c = DVector::from_vec(vec![-1.0, -1.0]);
        let r = solve_box_qp(&q, &c, &[-2.0, -2.0], &[2.0, 2.0], &[0.0, 0.0]);
        assert!(r.converged);
        assert!((r.x[0] + r.x[1] - 1.0).abs() < 1e-12);
        assert!((r.x[0] - r.x[1]).abs() < 1e-12);
    }
}
