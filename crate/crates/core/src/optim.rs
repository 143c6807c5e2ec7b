//! Box-constrained projected Newton for the smooth convex objectives used
//! by the dual solvers.

use nalgebra::{DMatrix, DVector};

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
/// Iterates beyond this size are treated as divergence.
const BLOW_UP: f64 = 1e12;

#[derive(Debug, Clone)]
pub(crate) struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub fixed: Vec<bool>,
}

impl Bounds {
    pub fn free(dim: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
            fixed: vec![false; dim],
        }
    }

    fn project(&self, x: &mut DVector<f64>) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    /// Infinity norm of `x - P(x - g)` over the movable coordinates.
    pub fn projected_grad_norm(&self, x: &DVector<f64>, g: &DVector<f64>) -> f64 {
        (0..x.len())
            .filter(|&i| !self.fixed[i])
            .map(|i| (x[i] - (x[i] - g[i]).clamp(self.lower[i], self.upper[i])).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

/// Objective returning `(value, gradient, Hessian)`; the Hessian is only
/// needed when the flag is set.
pub(crate) trait Objective {
    fn eval(&self, x: &DVector<f64>, hess: bool) -> (f64, DVector<f64>, DMatrix<f64>);
}

impl<F> Objective for F
where
    F: Fn(&DVector<f64>, bool) -> (f64, DVector<f64>, DMatrix<f64>),
{
    fn eval(&self, x: &DVector<f64>, hess: bool) -> (f64, DVector<f64>, DMatrix<f64>) {
        self(x, hess)
    }
}

fn solve_regularized(h: &DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    let scale = (0..h.nrows()).map(|i| h[(i, i)].abs()).fold(0.0, f64::max);
    let mut ridge = 1e-12 * (1.0 + scale);
    for _ in 0..12 {
        let mut m = h.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += ridge;
        }
        if let Some(ch) = m.cholesky() {
            return -ch.solve(g);
        }
        ridge *= 100.0;
    }
    -g.clone()
}

pub(crate) fn projected_newton(
    f: &impl Objective,
    x0: DVector<f64>,
    bounds: &Bounds,
    tol: f64,
    max_iter: usize,
) -> Outcome {
    let n = x0.len();
    let mut x = x0;
    bounds.project(&mut x);
    let (mut value, mut grad, mut hess) = f.eval(&x, true);
    let mut iterations = 0;
    loop {
        let pg = bounds.projected_grad_norm(&x, &grad);
        if pg <= tol || !value.is_finite() {
            return Outcome {
                x,
                value,
                iterations,
                grad_norm: pg,
                converged: pg <= tol && value.is_finite(),
            };
        }
        if iterations >= max_iter || x.amax() > BLOW_UP {
            return Outcome {
                x,
                value,
                iterations,
                grad_norm: pg,
                converged: false,
            };
        }
        iterations += 1;
        // coordinates pinned at a bound that the gradient pushes against
        let eps = pg.min(1e-8);
        let free: Vec<usize> = (0..n)
            .filter(|&i| {
                !bounds.fixed[i]
                    && !(x[i] <= bounds.lower[i] + eps && grad[i] > 0.0)
                    && !(x[i] >= bounds.upper[i] - eps && grad[i] < 0.0)
            })
            .collect();
        let mut dir = DVector::zeros(n);
        if !free.is_empty() {
            let hf = DMatrix::from_fn(free.len(), free.len(), |i, j| hess[(free[i], free[j])]);
            let gf = DVector::from_iterator(free.len(), free.iter().map(|&i| grad[i]));
            let step = solve_regularized(&hf, &gf);
            for (k, &i) in free.iter().enumerate() {
                dir[i] = step[k];
            }
        }
        let mut accepted = None;
        for candidate in [dir, -grad.clone()] {
            let mut t = 1.0;
            for _ in 0..MAX_HALVINGS {
                let mut trial = &x + &candidate * t;
                bounds.project(&mut trial);
                for i in 0..n {
                    if bounds.fixed[i] {
                        trial[i] = x[i];
                    }
                }
                let delta = &trial - &x;
                let (v, _, _) = f.eval(&trial, false);
                if v.is_finite() && v <= value + ARMIJO * grad.dot(&delta) {
                    accepted = Some(trial);
                    break;
                }
                t *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        match accepted {
            Some(next) => {
                let moved = (&next - &x).amax();
                x = next;
                (value, grad, hess) = f.eval(&x, true);
                if moved == 0.0 {
                    let pg = bounds.projected_grad_norm(&x, &grad);
                    return Outcome {
                        x,
                        value,
                        iterations,
                        grad_norm: pg,
                        converged: pg <= tol,
                    };
                }
            }
            None => {
                // no decrease is representable in floating point
                let pg = bounds.projected_grad_norm(&x, &grad);
                return Outcome {
                    x,
                    value,
                    iterations,
                    grad_norm: pg,
                    converged: pg <= tol,
                };
            }
        }
    }
}
