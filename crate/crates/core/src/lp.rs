//! Dense two-phase simplex for the small linear programs that appear in
//! occupancy-measure formulations (a few hundred variables at most).
//!
//! Problems are posed as `min c^T x  s.t.  A_eq x = b_eq,  A_le x <= b_le,
//! x >= 0`.  Every optimal solution carries a dual certificate recomputed
//! from the original data: the dual vector solves `B^T y = c_B` for the final
//! basis `B`, and the report includes the primal and dual residuals together
//! with the duality gap.

use nalgebra::{DMatrix, DVector};

const OPT_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 100_000;
const DEGENERATE_SWITCH: usize = 50;

#[derive(Debug, Clone)]
pub struct LinearProgram {
    num_vars: usize,
    objective: Vec<f64>,
    eq_rows: Vec<(Vec<f64>, f64)>,
    le_rows: Vec<(Vec<f64>, f64)>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub eq_duals: Vec<f64>,
    pub le_duals: Vec<f64>,
    pub dual_objective: f64,
    pub duality_gap: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub pivots: usize,
}

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible { phase_one_objective: f64 },
    Unbounded,
}

impl LinearProgram {
    pub fn minimize(objective: Vec<f64>) -> Self {
        Self {
            num_vars: objective.len(),
            objective,
            eq_rows: Vec::new(),
            le_rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn add_eq(&mut self, coeffs: Vec<f64>, rhs: f64) {
        assert_eq!(coeffs.len(), self.num_vars, "equality row has the wrong width");
        self.eq_rows.push((coeffs, rhs));
    }

    pub fn add_le(&mut self, coeffs: Vec<f64>, rhs: f64) {
        assert_eq!(coeffs.len(), self.num_vars, "inequality row has the wrong width");
        self.le_rows.push((coeffs, rhs));
    }

    pub fn solve(&self) -> LpOutcome {
        Tableau::build(self).run(self)
    }

    fn rows(&self) -> impl Iterator<Item = (&Vec<f64>, f64)> {
        self.eq_rows
            .iter()
            .chain(self.le_rows.iter())
            .map(|(c, b)| (c, *b))
    }
}

struct Tableau {
    m: usize,
    /// original + slack + artificial
    cols: usize,
    n_orig: usize,
    n_slack: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
    removed: Vec<bool>,
    pivots: usize,
}

impl Tableau {
    fn width(&self) -> usize {
        self.cols + 1
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width() + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols)
    }

    fn obj_row(&self) -> usize {
        self.m
    }

    fn is_artificial(&self, c: usize) -> bool {
        c >= self.n_orig + self.n_slack
    }

    fn build(lp: &LinearProgram) -> Self {
        let n_eq = lp.eq_rows.len();
        let n_le = lp.le_rows.len();
        let m = n_eq + n_le;
        let n_orig = lp.num_vars;
        // artificial column for every row that cannot start on its slack
        let needs_art: Vec<bool> = lp
            .rows()
            .enumerate()
            .map(|(i, (_, b))| i < n_eq || b < 0.0)
            .collect();
        let n_art = needs_art.iter().filter(|x| **x).count();
        let cols = n_orig + n_le + n_art;
        let width = cols + 1;
        let mut data = vec![0.0; (m + 1) * width];
        let mut basis = vec![0; m];
        let mut art = n_orig + n_le;
        for (i, (coeffs, b)) in lp.rows().enumerate() {
            let sign = if b < 0.0 { -1.0 } else { 1.0 };
            let row = &mut data[i * width..(i + 1) * width];
            for (j, c) in coeffs.iter().enumerate() {
                row[j] = sign * c;
            }
            if i >= n_eq {
                row[n_orig + (i - n_eq)] = sign;
            }
            row[cols] = sign * b;
            if needs_art[i] {
                row[art] = 1.0;
                basis[i] = art;
                art += 1;
            } else {
                basis[i] = n_orig + (i - n_eq);
            }
        }
        let mut t = Self {
            m,
            cols,
            n_orig,
            n_slack: n_le,
            data,
            basis,
            removed: vec![false; m],
            pivots: 0,
        };
        // phase-one reduced costs: minimize the sum of artificials
        let obj = t.obj_row();
        for i in 0..m {
            if t.is_artificial(t.basis[i]) {
                for j in 0..width {
                    let v = t.at(i, j);
                    t.data[obj * width + j] -= v;
                }
            }
        }
        for i in 0..m {
            let b = t.basis[i];
            t.data[obj * width + b] = 0.0;
        }
        t
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let width = self.width();
        let p = self.at(r, c);
        for j in 0..width {
            self.data[r * width + j] /= p;
        }
        self.data[r * width + c] = 1.0;
        let pivot_row: Vec<f64> = self.data[r * width..(r + 1) * width].to_vec();
        for i in 0..=self.m {
            if i == r {
                continue;
            }
            let f = self.data[i * width + c];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.data[i * width..(i + 1) * width];
            for (x, pv) in row.iter_mut().zip(&pivot_row) {
                *x -= f * pv;
            }
            row[c] = 0.0;
        }
        self.basis[r] = c;
        self.pivots += 1;
    }

    /// Runs simplex on the current objective row.  Returns `false` when the
    /// problem is unbounded in that objective.
    fn optimize(&mut self, allow_artificial: bool) -> bool {
        let mut bland = false;
        let mut degenerate_run = 0;
        while self.pivots < MAX_PIVOTS {
            let obj = self.obj_row();
            let mut entering = None;
            let mut best = -OPT_TOL;
            for j in 0..self.cols {
                if !allow_artificial && self.is_artificial(j) {
                    continue;
                }
                let rc = self.at(obj, j);
                if rc < -OPT_TOL {
                    if bland {
                        entering = Some(j);
                        break;
                    }
                    if rc < best {
                        best = rc;
                        entering = Some(j);
                    }
                }
            }
            let Some(c) = entering else {
                return true;
            };
            let mut leaving: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            for i in 0..self.m {
                if self.removed[i] {
                    continue;
                }
                let a = self.at(i, c);
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs(i).max(0.0) / a;
                let better = match leaving {
                    None => true,
                    Some(l) => {
                        if ratio < best_ratio - 1e-12 {
                            true
                        } else if ratio <= best_ratio + 1e-12 {
                            if bland {
                                self.basis[i] < self.basis[l]
                            } else {
                                a > self.at(l, c)
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    best_ratio = ratio.min(best_ratio);
                    leaving = Some(i);
                }
            }
            let Some(r) = leaving else {
                return false;
            };
            if best_ratio <= 1e-12 {
                degenerate_run += 1;
                if degenerate_run > DEGENERATE_SWITCH {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
            }
            self.pivot(r, c);
        }
        true
    }

    fn run(mut self, lp: &LinearProgram) -> LpOutcome {
        let width = self.width();
        let has_art = self.basis.iter().any(|&b| self.is_artificial(b));
        if has_art {
            self.optimize(true);
            let phase_one = -self.at(self.obj_row(), self.cols);
            let scale = 1.0 + lp.rows().map(|(_, b)| b.abs()).sum::<f64>();
            if phase_one > FEAS_TOL * scale {
                return LpOutcome::Infeasible {
                    phase_one_objective: phase_one,
                };
            }
            // drive remaining (zero-valued) artificials out of the basis
            for i in 0..self.m {
                if !self.is_artificial(self.basis[i]) {
                    continue;
                }
                let mut col = None;
                let mut best = 1e-9;
                for j in 0..self.n_orig + self.n_slack {
                    let a = self.at(i, j).abs();
                    if a > best {
                        best = a;
                        col = Some(j);
                    }
                }
                match col {
                    Some(j) => self.pivot(i, j),
                    None => self.removed[i] = true,
                }
            }
        }
        // phase-two reduced costs
        let obj = self.obj_row();
        for j in 0..width {
            self.data[obj * width + j] = if j < self.n_orig { lp.objective[j] } else { 0.0 };
        }
        for i in 0..self.m {
            if self.removed[i] {
                continue;
            }
            let cb = self.cost_of(lp, self.basis[i]);
            if cb == 0.0 {
                continue;
            }
            for j in 0..width {
                let v = self.at(i, j);
                self.data[obj * width + j] -= cb * v;
            }
        }
        if !self.optimize(false) {
            return LpOutcome::Unbounded;
        }
        LpOutcome::Optimal(self.certify(lp))
    }

    fn cost_of(&self, lp: &LinearProgram, col: usize) -> f64 {
        if col < self.n_orig {
            lp.objective[col]
        } else {
            0.0
        }
    }

    /// Column `col` of the original (unflipped) constraint matrix.
    fn original_column(&self, lp: &LinearProgram, col: usize) -> Vec<f64> {
        let n_eq = lp.eq_rows.len();
        lp.rows()
            .enumerate()
            .map(|(i, (coeffs, _))| {
                if col < self.n_orig {
                    coeffs[col]
                } else if col < self.n_orig + self.n_slack {
                    if i >= n_eq && col - self.n_orig == i - n_eq {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn certify(&self, lp: &LinearProgram) -> LpSolution {
        let n_eq = lp.eq_rows.len();
        let active: Vec<usize> = (0..self.m).filter(|&i| !self.removed[i]).collect();
        let k = active.len();
        let rhs_all: Vec<f64> = lp.rows().map(|(_, b)| b).collect();
        let mut big_b = DMatrix::zeros(k, k);
        for (jj, &row) in active.iter().enumerate() {
            let col = self.original_column(lp, self.basis[row]);
            for (ii, &i) in active.iter().enumerate() {
                big_b[(ii, jj)] = col[i];
            }
        }
        let b_vec = DVector::from_iterator(k, active.iter().map(|&i| rhs_all[i]));
        let c_b = DVector::from_iterator(k, active.iter().map(|&r| self.cost_of(lp, self.basis[r])));
        let lu = big_b.clone().lu();
        let mut x = vec![0.0; self.n_orig];
        match lu.solve(&b_vec) {
            Some(xb) => {
                for (jj, &row) in active.iter().enumerate() {
                    let col = self.basis[row];
                    if col < self.n_orig {
                        x[col] = xb[jj].max(0.0);
                    }
                }
            }
            None => {
                for &row in &active {
                    let col = self.basis[row];
                    if col < self.n_orig {
                        x[col] = self.rhs(row).max(0.0);
                    }
                }
            }
        }
        let mut y_all = vec![0.0; self.m];
        if let Some(y) = big_b.transpose().lu().solve(&c_b) {
            for (ii, &i) in active.iter().enumerate() {
                y_all[i] = y[ii];
            }
        }
        let objective: f64 = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        let dual_objective: f64 = rhs_all.iter().zip(&y_all).map(|(b, y)| b * y).sum();
        let mut dual_inf = 0.0_f64;
        for j in 0..self.n_orig {
            let aty: f64 = lp
                .rows()
                .enumerate()
                .map(|(i, (coeffs, _))| coeffs[j] * y_all[i])
                .sum();
            dual_inf = dual_inf.max(aty - lp.objective[j]);
        }
        for &y in &y_all[n_eq..] {
            dual_inf = dual_inf.max(y);
        }
        let mut primal_inf = 0.0_f64;
        for (i, (coeffs, b)) in lp.rows().enumerate() {
            let ax: f64 = coeffs.iter().zip(&x).map(|(c, v)| c * v).sum();
            let viol = if i < n_eq { (ax - b).abs() } else { (ax - b).max(0.0) };
            primal_inf = primal_inf.max(viol);
        }
        LpSolution {
            x,
            objective,
            eq_duals: y_all[..n_eq].to_vec(),
            le_duals: y_all[n_eq..].to_vec(),
            dual_objective,
            duality_gap: (objective - dual_objective).abs(),
            primal_infeasibility: primal_inf,
            dual_infeasibility: dual_inf,
            pivots: self.pivots,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn optimal(lp: &LinearProgram) -> LpSolution {
        match lp.solve() {
            LpOutcome::Optimal(s) => s,
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn small_textbook_problem() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18  -> (2, 6), 36
        let mut lp = LinearProgram::minimize(vec![-3.0, -5.0]);
        lp.add_le(vec![1.0, 0.0], 4.0);
        lp.add_le(vec![0.0, 2.0], 12.0);
        lp.add_le(vec![3.0, 2.0], 18.0);
        let s = optimal(&lp);
        assert!((s.x[0] - 2.0).abs() < 1e-9 && (s.x[1] - 6.0).abs() < 1e-9);
        assert!((s.objective + 36.0).abs() < 1e-9);
        assert!(s.duality_gap < 1e-9);
        assert!(s.dual_infeasibility < 1e-9);
    }

    #[test]
    fn equality_and_negative_rhs() {
        // min x + 2y s.t. x + y = 1, -x <= -0.25
        let mut lp = LinearProgram::minimize(vec![1.0, 2.0]);
        lp.add_eq(vec![1.0, 1.0], 1.0);
        lp.add_le(vec![-1.0, 0.0], -0.25);
        let s = optimal(&lp);
        assert!((s.x[0] - 1.0).abs() < 1e-9);
        assert!((s.objective - 1.0).abs() < 1e-9);
        assert!(s.duality_gap < 1e-9);
    }

    #[test]
    fn redundant_equalities_are_tolerated() {
        let mut lp = LinearProgram::minimize(vec![1.0, 1.0, 0.0]);
        lp.add_eq(vec![1.0, 1.0, 1.0], 1.0);
        lp.add_eq(vec![2.0, 2.0, 2.0], 2.0);
        let s = optimal(&lp);
        assert!(s.objective.abs() < 1e-9);
        assert!(s.primal_infeasibility < 1e-9);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let mut lp = LinearProgram::minimize(vec![1.0]);
        lp.add_le(vec![1.0], -1.0);
        assert!(matches!(lp.solve(), LpOutcome::Infeasible { .. }));

        let mut lp = LinearProgram::minimize(vec![-1.0, 0.0]);
        lp.add_le(vec![-1.0, 1.0], 1.0);
        assert!(matches!(lp.solve(), LpOutcome::Unbounded));
    }
}
