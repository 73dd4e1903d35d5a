//! Dense two-phase simplex for small linear programs.
//!
//! Solves `min cᵀx  s.t.  A x ≤ b,  x ≥ 0` with Bland's rule, which rules out
//! cycling and makes the returned vertex a pure function of the input.

use crate::error::{Error, Result};

const TOL: f64 = 1e-11;

/// Optimal vertex and objective value.
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

struct Tableau {
    /// `rows × (cols + 1)`, last column is the right-hand side.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.t[i][self.cols]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.t[row][col];
        for v in self.t[row].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[row].clone();
        for (i, r) in self.t.iter_mut().enumerate() {
            if i == row {
                continue;
            }
            let f = r[col];
            if f != 0.0 {
                for (v, pv) in r.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        self.basis[row] = col;
    }

    /// Minimises `cost · x` over the current basis, considering only columns
    /// with `allowed[j]`. Returns false when unbounded.
    fn optimise(&mut self, cost: &[f64], allowed: &[bool]) -> bool {
        let rows = self.t.len();
        for _ in 0..10_000 {
            // Reduced cost d_j = c_j − Σ_i c_{B(i)}·t[i][j].
            let mut entering = None;
            for j in 0..self.cols {
                if !allowed[j] || self.basis.contains(&j) {
                    continue;
                }
                let mut d = cost[j];
                for i in 0..rows {
                    d -= cost[self.basis[i]] * self.t[i][j];
                }
                if d < -TOL {
                    entering = Some(j);
                    break;
                }
            }
            let Some(col) = entering else {
                return true;
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..rows {
                let a = self.t[i][col];
                if a > TOL {
                    let ratio = self.rhs(i) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - TOL || (ratio <= lr + TOL && self.basis[i] < self.basis[li]) {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = leave else {
                return false;
            };
            self.pivot(row, col);
        }
        false
    }
}

/// `min cᵀx` subject to `A x ≤ b`, `x ≥ 0`.
pub fn solve_lp(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<LpSolution> {
    let n = c.len();
    let m = a.len();
    if b.len() != m || a.iter().any(|r| r.len() != n) {
        return Err(Error::Solver("constraint matrix shape mismatch".into()));
    }
    if c.iter().chain(b).chain(a.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::Solver("non-finite LP coefficient".into()));
    }

    // Columns: x (n), slacks (m), artificials (one per negative rhs row).
    let negative: Vec<usize> = (0..m).filter(|&i| b[i] < 0.0).collect();
    let cols = n + m + negative.len();
    let mut t = vec![vec![0.0; cols + 1]; m];
    let mut basis = vec![0; m];
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i][j] = sign * a[i][j];
        }
        t[i][n + i] = sign;
        t[i][cols] = sign * b[i];
        basis[i] = n + i;
    }
    for (k, &i) in negative.iter().enumerate() {
        t[i][n + m + k] = 1.0;
        basis[i] = n + m + k;
    }
    let mut tab = Tableau { t, basis, cols };

    if !negative.is_empty() {
        let mut cost1 = vec![0.0; cols];
        for k in 0..negative.len() {
            cost1[n + m + k] = 1.0;
        }
        let allowed = vec![true; cols];
        tab.optimise(&cost1, &allowed);
        let infeas: f64 = (0..m)
            .filter(|&i| tab.basis[i] >= n + m)
            .map(|i| tab.rhs(i))
            .sum();
        if infeas > 1e-9 {
            return Err(Error::Solver(format!("LP infeasible (phase-one residual {infeas:e})")));
        }
        // Drive zero-level artificials out of the basis.
        for i in 0..m {
            if tab.basis[i] >= n + m {
                if let Some(j) = (0..n + m).find(|&j| tab.t[i][j].abs() > TOL) {
                    tab.pivot(i, j);
                }
            }
        }
    }

    let mut cost2 = vec![0.0; cols];
    cost2[..n].copy_from_slice(c);
    let allowed: Vec<bool> = (0..cols).map(|j| j < n + m).collect();
    if !tab.optimise(&cost2, &allowed) {
        return Err(Error::Solver("LP unbounded".into()));
    }

    let mut x = vec![0.0; n];
    for (i, &bv) in tab.basis.iter().enumerate() {
        if bv < n {
            x[bv] = tab.rhs(i).max(0.0);
        }
    }
    let objective = c.iter().zip(&x).map(|(c, x)| c * x).sum();
    Ok(LpSolution { x, objective })
}
