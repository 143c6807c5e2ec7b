//! Off-policy cost evaluation with correction weights, and its conservative
//! upper bound over a KL ball of perturbed data distributions.

use nalgebra::{DMatrix, DVector};

use crate::datagen::EmpiricalDistribution;
use crate::dice::SolverConfig;
use crate::error::{Error, Result};
use crate::optim::{projected_newton, Bounds};

/// Newton iteration budget of one bound minimization.
const NEWTON_ITERATIONS: usize = 500;

/// `E_{d^D}[w C]`.
pub fn ope_dice(w: &DMatrix<f64>, dist: &EmpiricalDistribution, cost: &DMatrix<f64>) -> f64 {
    dist.sa_weight().component_mul(w).component_mul(cost).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpperBoundSolution {
    pub tau: f64,
    pub chi: Vec<f64>,
    pub ub_value: f64,
    /// Perturbed weights aligned with [`EmpiricalDistribution::tuples`].
    pub omega_tilde: Vec<f64>,
    /// `sum_x omega_tilde(x) w(s, a) C(s, a)`.
    pub reweighted: f64,
    /// `KL(omega_tilde || d^D)`.
    pub kl: f64,
    pub tau_at_floor: bool,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
}

struct BoundData {
    num_states: usize,
    /// `(p, w C, sparse b)` per tuple.
    tuples: Vec<(f64, f64, [(usize, f64); 3])>,
    epsilon: f64,
}

impl BoundData {
    fn new(
        w: &DMatrix<f64>,
        cost: &DMatrix<f64>,
        dist: &EmpiricalDistribution,
        epsilon: f64,
    ) -> Result<Self> {
        let shape = (dist.num_states(), dist.num_actions());
        if w.shape() != shape || cost.shape() != shape {
            return Err(Error::InvalidArgument("weight or cost table has the wrong shape".into()));
        }
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("correction weights must be finite and >= 0".into()));
        }
        let gamma = dist.discount();
        let tuples = dist
            .tuples()
            .iter()
            .map(|t| {
                let wsa = w[(t.s, t.a)];
                // flow is only constrained on observed states
                let next = if dist.observed(t.s_next) { gamma * wsa } else { 0.0 };
                (
                    t.weight,
                    wsa * cost[(t.s, t.a)],
                    [(t.s_next, next), (t.s, -wsa), (t.s0, 1.0 - gamma)],
                )
            })
            .collect();
        Ok(Self {
            num_states: dist.num_states(),
            tuples,
            epsilon,
        })
    }

    fn z(&self, chi: &[f64]) -> Vec<f64> {
        self.tuples
            .iter()
            .map(|(_, wc, b)| wc + b.iter().map(|&(s, v)| v * chi[s]).sum::<f64>())
            .collect()
    }

    /// Tilted weights `p exp(z / tau)` normalized, and `log E_p[exp(z / tau)]`.
    fn tilt(&self, z: &[f64], tau: f64) -> (Vec<f64>, f64) {
        let m = z
            .iter()
            .zip(&self.tuples)
            .filter(|(_, t)| t.0 > 0.0)
            .map(|(z, _)| z / tau)
            .fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = z
            .iter()
            .zip(&self.tuples)
            .map(|(z, t)| if t.0 > 0.0 { t.0 * (z / tau - m).exp() } else { 0.0 })
            .collect();
        let total: f64 = raw.iter().sum();
        (raw.iter().map(|r| r / total).collect(), m + total.ln())
    }

    /// Value, gradient and Hessian in the packed variables `[chi, tau]`.
    fn eval(&self, x: &DVector<f64>, want_hess: bool) -> (f64, DVector<f64>, DMatrix<f64>) {
        let n = self.num_states;
        let chi = &x.as_slice()[..n];
        let tau = x[n];
        let z = self.z(chi);
        let (pt, lme) = self.tilt(&z, tau);
        let value = tau * lme + tau * self.epsilon;
        let mut grad = DVector::zeros(n + 1);
        let mut mean_u = 0.0;
        for ((q, zx), (_, _, b)) in pt.iter().zip(&z).zip(&self.tuples) {
            for &(s, v) in b {
                grad[s] += q * v;
            }
            mean_u += q * zx / tau;
        }
        grad[n] = lme - mean_u + self.epsilon;
        let mut hess = DMatrix::zeros(0, 0);
        if want_hess {
            // (1 / tau) Cov_{p~}([b; -u])
            hess = DMatrix::zeros(n + 1, n + 1);
            let mut mean = DVector::<f64>::zeros(n + 1);
            for ((q, zx), (_, _, b)) in pt.iter().zip(&z).zip(&self.tuples) {
                if *q == 0.0 {
                    continue;
                }
                let u = zx / tau;
                let mut v: [(usize, f64); 4] = [(0, 0.0); 4];
                v[..3].copy_from_slice(b);
                v[3] = (n, -u);
                for &(i, vi) in &v {
                    mean[i] += q * vi;
                    for &(j, vj) in &v {
                        hess[(i, j)] += q * vi * vj;
                    }
                }
            }
            hess -= &mean * mean.transpose();
            hess /= tau;
        }
        (value, grad, hess)
    }
}

/// `tau log E_{d^D}[exp(z / tau)] + tau epsilon` with
/// `z = w (C + gamma chi(s') - chi(s)) + (1 - gamma) chi(s0)`, and its
/// gradients `(value, d/dtau, d/dchi)`.
pub fn ub_loss(
    tau: f64,
    chi: &[f64],
    w: &DMatrix<f64>,
    cost: &DMatrix<f64>,
    dist: &EmpiricalDistribution,
    epsilon: f64,
) -> Result<(f64, f64, Vec<f64>)> {
    if !(tau > 0.0) || chi.len() != dist.num_states() {
        return Err(Error::InvalidArgument("need tau > 0 and one chi per state".into()));
    }
    let data = BoundData::new(w, cost, dist, epsilon)?;
    let mut x = DVector::zeros(chi.len() + 1);
    x.rows_mut(0, chi.len()).copy_from_slice(chi);
    x[chi.len()] = tau;
    let (v, g, _) = data.eval(&x, false);
    Ok((v, g[chi.len()], g.as_slice()[..chi.len()].to_vec()))
}

/// Normalized perturbed weights `omega_tilde ~ d^D exp(z / tau)` with the
/// reweighted cost estimate and the divergence from `d^D`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedWeights {
    pub omega_tilde: Vec<f64>,
    pub reweighted: f64,
    pub kl: f64,
}

pub fn perturbed_weights(
    tau: f64,
    chi: &[f64],
    w: &DMatrix<f64>,
    cost: &DMatrix<f64>,
    dist: &EmpiricalDistribution,
) -> Result<PerturbedWeights> {
    if !(tau > 0.0) || chi.len() != dist.num_states() {
        return Err(Error::InvalidArgument("need tau > 0 and one chi per state".into()));
    }
    let data = BoundData::new(w, cost, dist, 0.0)?;
    let (omega_tilde, _) = if tau.is_finite() {
        data.tilt(&data.z(chi), tau)
    } else {
        (data.tuples.iter().map(|t| t.0).collect(), 0.0)
    };
    Ok(summarize(&data, omega_tilde))
}

fn summarize(data: &BoundData, omega_tilde: Vec<f64>) -> PerturbedWeights {
    let reweighted = omega_tilde.iter().zip(&data.tuples).map(|(q, t)| q * t.1).sum();
    let kl = omega_tilde
        .iter()
        .zip(&data.tuples)
        .filter(|(q, _)| **q > 0.0)
        .map(|(q, t)| q * (q / t.0).ln())
        .sum::<f64>()
        .max(0.0);
    PerturbedWeights {
        omega_tilde,
        reweighted,
        kl,
    }
}

/// Minimizes `ub_loss` over `chi` and `tau >= tau_min` for one cost table.
///
/// With `epsilon = 0` the ball contains only `d^D` itself and the bound is
/// the plain estimate; that case is returned directly with `tau = inf`.
pub fn optimize_ub_for(
    w: &DMatrix<f64>,
    cost: &DMatrix<f64>,
    dist: &EmpiricalDistribution,
    cfg: &SolverConfig,
    warm: Option<(&[f64], f64)>,
) -> Result<UpperBoundSolution> {
    cfg.validate()?;
    let n = dist.num_states();
    let data = BoundData::new(w, cost, dist, cfg.epsilon)?;
    if cfg.epsilon == 0.0 {
        let p = summarize(&data, data.tuples.iter().map(|t| t.0).collect());
        return Ok(UpperBoundSolution {
            tau: f64::INFINITY,
            chi: vec![0.0; n],
            ub_value: ope_dice(w, dist, cost),
            omega_tilde: p.omega_tilde,
            reweighted: p.reweighted,
            kl: p.kl,
            tau_at_floor: false,
            converged: true,
            iterations: 0,
            grad_norm: 0.0,
        });
    }
    let mut x0 = DVector::zeros(n + 1);
    match warm {
        Some((chi, tau)) if tau.is_finite() => {
            x0.rows_mut(0, n).copy_from_slice(chi);
            x0[n] = tau;
        }
        _ => {
            // second-order guess for tau at chi = 0
            let z = data.z(&vec![0.0; n]);
            let mean: f64 = z.iter().zip(&data.tuples).map(|(z, t)| t.0 * z).sum();
            let var: f64 = z
                .iter()
                .zip(&data.tuples)
                .map(|(z, t)| t.0 * (z - mean).powi(2))
                .sum();
            x0[n] = (var / (2.0 * cfg.epsilon)).sqrt().max(1e-3);
        }
    }
    x0[n] = x0[n].max(cfg.tau_min);
    let mut bounds = Bounds::free(n + 1);
    bounds.lower[n] = cfg.tau_min;
    for s in 0..n {
        bounds.fixed[s] = !dist.observed(s);
    }
    let out = match cfg.optimizer {
        crate::dice::Optimizer::Newton => projected_newton(
            &|x: &DVector<f64>, h: bool| data.eval(x, h),
            x0,
            &bounds,
            cfg.tolerance,
            NEWTON_ITERATIONS,
        ),
        crate::dice::Optimizer::GradientDescent => {
            gradient_descent(&data, x0, cfg, cfg.max_iterations)
        }
    };
    let tau = out.x[n];
    let chi: Vec<f64> = out.x.as_slice()[..n].to_vec();
    let (omega, _) = data.tilt(&data.z(&chi), tau);
    let p = summarize(&data, omega);
    Ok(UpperBoundSolution {
        tau,
        chi,
        ub_value: out.value,
        omega_tilde: p.omega_tilde,
        reweighted: p.reweighted,
        kl: p.kl,
        tau_at_floor: tau <= cfg.tau_min,
        converged: out.converged,
        iterations: out.iterations,
        grad_norm: out.grad_norm,
    })
}

fn gradient_descent(
    data: &BoundData,
    mut x: DVector<f64>,
    cfg: &SolverConfig,
    iterations: usize,
) -> crate::optim::Outcome {
    let n = data.num_states;
    let mut bounds = Bounds::free(n + 1);
    bounds.lower[n] = cfg.tau_min;
    let mut done = 0;
    loop {
        let (value, grad, _) = data.eval(&x, false);
        let pg = bounds.projected_grad_norm(&x, &grad);
        if pg <= cfg.tolerance || done >= iterations || !value.is_finite() {
            return crate::optim::Outcome {
                x,
                value,
                iterations: done,
                grad_norm: pg,
                converged: pg <= cfg.tolerance,
            };
        }
        for i in 0..n {
            x[i] -= cfg.chi_step * grad[i];
        }
        x[n] = (x[n] - cfg.tau_step * grad[n]).max(cfg.tau_min);
        done += 1;
    }
}

/// One gradient step on `(tau, chi)`, as used by the gradient-descent
/// variant of the conservative solver.  Returns the loss before the step.
pub(crate) fn ub_gradient_step(
    tau: &mut f64,
    chi: &mut [f64],
    w: &DMatrix<f64>,
    cost: &DMatrix<f64>,
    dist: &EmpiricalDistribution,
    cfg: &SolverConfig,
) -> Result<(f64, f64)> {
    if cfg.epsilon == 0.0 {
        return Ok((ope_dice(w, dist, cost), 0.0));
    }
    let (v, g_tau, g_chi) = ub_loss(*tau, chi, w, cost, dist, cfg.epsilon)?;
    let mut norm = if *tau <= cfg.tau_min && g_tau > 0.0 { 0.0 } else { g_tau.abs() };
    for (c, g) in chi.iter_mut().zip(&g_chi) {
        *c -= cfg.chi_step * g;
        norm = norm.max(g.abs());
    }
    *tau = (*tau - cfg.tau_step * g_tau).max(cfg.tau_min);
    Ok((v, norm))
}

/// Bounds for every cost table of `dist`.
pub fn optimize_ub(
    w: &DMatrix<f64>,
    dist: &EmpiricalDistribution,
    cfg: &SolverConfig,
) -> Result<Vec<UpperBoundSolution>> {
    dist.costs()
        .iter()
        .map(|c| optimize_ub_for(w, c, dist, cfg, None))
        .collect()
}
