//! Dense convex QP with hard and L1-penalized linear inequalities.
//!
//! Solves
//!
//! ```text
//! min  ½ xᵀHx + fᵀx + Σ_soft ρ_i · max(0, g_iᵀx − h_i)
//! s.t. g_iᵀx ≤ h_i   for hard rows
//! ```
//!
//! through its dual, a bound-constrained QP in the multipliers
//! `0 ≤ λ_i ≤ cap_i` (`cap_i = ρ_i` for soft rows, `+∞` for hard rows).
//! The dual is solved by a primal-dual active-set iteration over a growing
//! working set of rows, falling back to projected coordinate descent when
//! the active-set iteration fails to settle.

use nalgebra::{DMatrix, DVector};

/// One linear inequality `coeffs · x ≤ bound`.
#[derive(Debug, Clone)]
pub struct LinearRow {
    pub coeffs: Vec<f64>,
    pub bound: f64,
    /// Upper bound on the multiplier; `f64::INFINITY` for a hard row.
    pub multiplier_cap: f64,
}

impl LinearRow {
    pub fn hard(coeffs: Vec<f64>, bound: f64) -> Self {
        Self {
            coeffs,
            bound,
            multiplier_cap: f64::INFINITY,
        }
    }

    pub fn soft(coeffs: Vec<f64>, bound: f64, penalty: f64) -> Self {
        Self {
            coeffs,
            bound,
            multiplier_cap: penalty,
        }
    }

    #[inline]
    pub fn residual(&self, x: &[f64]) -> f64 {
        self.bound - dot(&self.coeffs, x)
    }
}

#[derive(Debug, Clone)]
pub struct QpSettings {
    /// Feasibility / complementarity tolerance on row residuals.
    pub tolerance: f64,
    pub max_active_set_iters: usize,
    pub max_coordinate_sweeps: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_active_set_iters: 40,
            max_coordinate_sweeps: 5000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Multiplier per input row (zero for rows never brought into play).
    pub multipliers: Vec<f64>,
    pub converged: bool,
}

/// QP solver bound to one Hessian.
#[derive(Debug, Clone)]
pub struct QpSolver {
    dim: usize,
    hessian: DMatrix<f64>,
    hessian_inv: DMatrix<f64>,
    settings: QpSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Lower,
    Free,
    Upper,
}

impl QpSolver {
    /// Fails when `hessian` is not symmetric positive definite.
    pub fn new(hessian: DMatrix<f64>, settings: QpSettings) -> Option<Self> {
        let dim = hessian.nrows();
        if hessian.ncols() != dim {
            return None;
        }
        let chol = hessian.clone().cholesky()?;
        let hessian_inv = chol.inverse();
        Some(Self {
            dim,
            hessian,
            hessian_inv,
            settings,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    /// `-H⁻¹ f`.
    pub fn unconstrained(&self, linear: &[f64]) -> Vec<f64> {
        let f = DVector::from_column_slice(linear);
        (-(&self.hessian_inv * f)).iter().copied().collect()
    }

    /// Objective value including the penalty of violated soft rows.
    pub fn penalized_objective(&self, linear: &[f64], rows: &[LinearRow], x: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        let quad = 0.5 * xv.dot(&(&self.hessian * &xv));
        let lin = dot(linear, x);
        let penalty: f64 = rows
            .iter()
            .filter(|r| r.multiplier_cap.is_finite())
            .map(|r| r.multiplier_cap * (-r.residual(x)).max(0.0))
            .sum();
        quad + lin + penalty
    }

    pub fn solve(&self, linear: &[f64], rows: &[LinearRow]) -> QpSolution {
        assert_eq!(linear.len(), self.dim, "linear term dimension");
        let tol = self.settings.tolerance;
        let x_unc = self.unconstrained(linear);
        let mut multipliers = vec![0.0; rows.len()];
        let mut x = x_unc.clone();

        // Working set of rows whose multipliers may be nonzero, with their
        // H⁻¹-images and dual residual offsets.
        let mut working: Vec<usize> = Vec::new();
        let mut images: Vec<Vec<f64>> = Vec::new();
        let mut converged = true;

        for _round in 0..=rows.len() {
            let violated: Vec<usize> = rows
                .iter()
                .enumerate()
                .filter(|(i, r)| !working.contains(i) && r.residual(&x) < -tol)
                .map(|(i, _)| i)
                .collect();
            if violated.is_empty() {
                break;
            }
            for i in violated {
                let g = DVector::from_column_slice(&rows[i].coeffs);
                images.push((&self.hessian_inv * g).iter().copied().collect());
                working.push(i);
            }
            let sub: Vec<&LinearRow> = working.iter().map(|&i| &rows[i]).collect();
            let mut lambda: Vec<f64> = working.iter().map(|&i| multipliers[i]).collect();
            let ok = self.solve_working_set(&x_unc, &sub, &images, &mut lambda);
            converged &= ok;
            for (k, &i) in working.iter().enumerate() {
                multipliers[i] = lambda[k];
            }
            x = x_unc.clone();
            for (k, z) in images.iter().enumerate() {
                if lambda[k] != 0.0 {
                    axpy(-lambda[k], z, &mut x);
                }
            }
        }
        let feasible = rows
            .iter()
            .zip(&multipliers)
            .all(|(r, &l)| r.residual(&x) >= -tol * 10.0 || (r.multiplier_cap.is_finite() && l >= r.multiplier_cap - tol));
        QpSolution {
            x,
            multipliers,
            converged: converged && feasible,
        }
    }

    /// Dual bound-constrained QP over the working rows. `lambda` carries the
    /// warm start in and the solution out.
    fn solve_working_set(
        &self,
        x_unc: &[f64],
        rows: &[&LinearRow],
        images: &[Vec<f64>],
        lambda: &mut [f64],
    ) -> bool {
        let m = rows.len();
        let tol = self.settings.tolerance;
        // Dual Hessian M_ij = g_iᵀ H⁻¹ g_j and offset d_i = h_i − g_iᵀ x_unc.
        let mut dual = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let v = dot(&rows[i].coeffs, &images[j]);
                dual[(i, j)] = v;
                dual[(j, i)] = v;
            }
        }
        let offset: Vec<f64> = rows.iter().map(|r| r.residual(x_unc)).collect();
        let caps: Vec<f64> = rows.iter().map(|r| r.multiplier_cap).collect();
        for (l, cap) in lambda.iter_mut().zip(&caps) {
            *l = l.clamp(0.0, *cap);
        }

        let mean_diag = (0..m).map(|i| dual[(i, i)]).sum::<f64>() / m as f64;
        let step = if mean_diag > 0.0 { 1.0 / mean_diag } else { 1.0 };
        let regularization = 1e-12 * mean_diag.max(1e-300);

        let gradient = |lambda: &[f64]| -> Vec<f64> {
            (0..m)
                .map(|i| offset[i] + (0..m).map(|j| dual[(i, j)] * lambda[j]).sum::<f64>())
                .collect()
        };

        let mut previous: Option<Vec<Bound>> = None;
        for _ in 0..self.settings.max_active_set_iters {
            let grad = gradient(lambda);
            let sets: Vec<Bound> = (0..m)
                .map(|i| {
                    let trial = lambda[i] - step * grad[i];
                    if trial <= 0.0 {
                        Bound::Lower
                    } else if trial >= caps[i] {
                        Bound::Upper
                    } else {
                        Bound::Free
                    }
                })
                .collect();
            if previous.as_ref() == Some(&sets) && kkt_satisfied(lambda, &grad, &caps, tol) {
                return true;
            }
            let free: Vec<usize> = (0..m).filter(|&i| sets[i] == Bound::Free).collect();
            let mut next = vec![0.0; m];
            for i in 0..m {
                if sets[i] == Bound::Upper {
                    next[i] = caps[i];
                }
            }
            if !free.is_empty() {
                let k = free.len();
                let mut a = DMatrix::<f64>::zeros(k, k);
                let mut b = DVector::<f64>::zeros(k);
                for (r, &i) in free.iter().enumerate() {
                    for (c, &j) in free.iter().enumerate() {
                        a[(r, c)] = dual[(i, j)];
                    }
                    a[(r, r)] += regularization;
                    let mut rhs = -offset[i];
                    for j in 0..m {
                        if sets[j] == Bound::Upper {
                            rhs -= dual[(i, j)] * caps[j];
                        }
                    }
                    b[r] = rhs;
                }
                let Some(chol) = a.cholesky() else {
                    break;
                };
                let sol = chol.solve(&b);
                if sol.iter().any(|v| !v.is_finite()) {
                    break;
                }
                for (r, &i) in free.iter().enumerate() {
                    next[i] = sol[r];
                }
            }
            lambda.copy_from_slice(&next);
            previous = Some(sets);
        }

        // Projected coordinate descent from the best available point.
        for l in lambda.iter_mut().zip(&caps) {
            *l.0 = if l.0.is_finite() { l.0.clamp(0.0, *l.1) } else { 0.0 };
        }
        let mut grad = gradient(lambda);
        for _ in 0..self.settings.max_coordinate_sweeps {
            for i in 0..m {
                let mii = dual[(i, i)];
                if mii <= 0.0 {
                    continue;
                }
                let new = (lambda[i] - grad[i] / mii).clamp(0.0, caps[i]);
                let delta = new - lambda[i];
                if delta != 0.0 {
                    lambda[i] = new;
                    for (j, g) in grad.iter_mut().enumerate() {
                        *g += dual[(j, i)] * delta;
                    }
                }
            }
            if kkt_satisfied(lambda, &grad, &caps, tol) {
                return true;
            }
        }
        kkt_satisfied(lambda, &grad, &caps, tol * 1e3)
    }
}

fn kkt_satisfied(lambda: &[f64], grad: &[f64], caps: &[f64], tol: f64) -> bool {
    lambda.iter().zip(grad).zip(caps).all(|((&l, &g), &cap)| {
        if l <= 0.0 {
            g >= -tol
        } else if l >= cap {
            g <= tol
        } else {
            g.abs() <= tol
        }
    })
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
