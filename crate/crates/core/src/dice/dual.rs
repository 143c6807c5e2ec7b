use nalgebra::{DMatrix, DVector};

use super::fdiv::FDivergence;
use crate::datagen::EmpiricalDistribution;
use crate::error::{Error, Result};

/// Which optimizer drives the dual variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Optimizer {
    /// Projected Newton on `(nu, mu)` with an exact search over `lambda`.
    #[default]
    Newton,
    /// Full-batch projected gradient descent with fixed step sizes.
    GradientDescent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub fdiv: FDivergence,
    pub optimizer: Optimizer,
    pub nu_step: f64,
    pub lambda_step: f64,
    pub tau_step: f64,
    pub chi_step: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub lambda_max: f64,
    pub tau_min: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            epsilon: 0.0,
            fdiv: FDivergence::ChiSquare,
            optimizer: Optimizer::Newton,
            nu_step: 1e-2,
            lambda_step: 1e-2,
            tau_step: 1e-2,
            chi_step: 1e-2,
            max_iterations: 50_000,
            tolerance: 1e-8,
            lambda_max: 1e3,
            tau_min: 1e-6,
        }
    }
}

impl SolverConfig {
    /// `alpha = 1 / N`, `epsilon = 0.1 / N` for a dataset of `N` episodes.
    pub fn for_episodes(n: usize) -> Self {
        let n = n.max(1) as f64;
        Self {
            alpha: 1.0 / n,
            epsilon: 0.1 / n,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && self.epsilon >= 0.0
            && self.tau_min > 0.0
            && self.lambda_max > 0.0
            && self.tolerance > 0.0
            && self.max_iterations > 0
            && [self.nu_step, self.lambda_step, self.tau_step, self.chi_step]
                .iter()
                .all(|s| *s > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid solver configuration {self:?}")))
        }
    }
}

/// `max(0, (f')^{-1}((e - mu) / alpha))`.
pub fn closed_form_w(e: f64, alpha: f64, fdiv: FDivergence, mu: Option<f64>) -> f64 {
    let x = e - mu.unwrap_or(0.0);
    fdiv.f_prime_inverse(x / alpha).max(0.0)
}

/// Inner maximum `max_{w >= 0} w x - alpha f(w)` with its maximizer and the
/// derivative of the maximizer in `x`.
pub(crate) fn inner_max(x: f64, alpha: f64, fdiv: FDivergence) -> (f64, f64, f64) {
    let w = closed_form_w(x, alpha, fdiv, None);
    let value = w * x - alpha * fdiv.f(w);
    let slope = if w > 0.0 {
        1.0 / (alpha * fdiv.f_second(w))
    } else {
        0.0
    };
    (value, w, slope)
}

/// Advantage `e(s, a) = R - lambda^T C + gamma E[nu(s')] - nu(s)` under the
/// empirical conditional transitions, plus its per-sample form.
#[derive(Debug, Clone, PartialEq)]
pub struct Advantage {
    /// `(s, a, s', e_hat)` for every observed triple.
    pub samples: Vec<(usize, usize, usize, f64)>,
    /// Conditional mean over observed successors; pairs without data take
    /// the mean over an empty set as zero.
    pub expected: DMatrix<f64>,
}

pub fn advantage(dist: &EmpiricalDistribution, nu: &[f64], lambda: &[f64]) -> Advantage {
    let (n, na) = (dist.num_states(), dist.num_actions());
    let gamma = dist.discount();
    let base = |s: usize, a: usize| {
        dist.reward()[(s, a)]
            - lambda
                .iter()
                .zip(dist.costs())
                .map(|(l, c)| l * c[(s, a)])
                .sum::<f64>()
            - nu[s]
    };
    let mut samples = Vec::new();
    let mut expected = DMatrix::zeros(n, na);
    for s in 0..n {
        for a in 0..na {
            let b = base(s, a);
            for &(t, _) in dist.sas_weight(s, a) {
                samples.push((s, a, t, b + gamma * nu[t]));
            }
            let next: f64 = if dist.sa_weight()[(s, a)] > 0.0 {
                dist.conditional(s, a).map(|(t, p)| p * nu[t]).sum()
            } else {
                0.0
            };
            expected[(s, a)] = b + gamma * next;
        }
    }
    Advantage { samples, expected }
}

/// Flat per-pair data for repeated dual evaluations.
#[derive(Debug, Clone)]
pub(crate) struct Pair {
    pub s: usize,
    pub weight: f64,
    pub succ: Vec<(usize, f64)>,
    pub reward: f64,
    pub costs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct DualData {
    pub num_states: usize,
    /// States with observed outflow; the flow constraint and its multiplier
    /// exist only there.
    pub observed: Vec<bool>,
    pub pairs: Vec<Pair>,
    pub init: Vec<f64>,
    pub gamma: f64,
    pub thresholds: Vec<f64>,
    pub alpha: f64,
    pub fdiv: FDivergence,
}

impl DualData {
    pub fn new(dist: &EmpiricalDistribution, thresholds: &[f64], alpha: f64, fdiv: FDivergence) -> Result<Self> {
        if thresholds.len() != dist.num_costs() {
            return Err(Error::InvalidArgument(format!(
                "{} thresholds for {} costs",
                thresholds.len(),
                dist.num_costs()
            )));
        }
        let pairs = dist
            .support()
            .map(|(s, a)| Pair {
                s,
                weight: dist.sa_weight()[(s, a)],
                succ: dist.conditional(s, a).collect(),
                reward: dist.reward()[(s, a)],
                costs: dist.costs().iter().map(|c| c[(s, a)]).collect(),
            })
            .collect();
        Ok(Self {
            num_states: dist.num_states(),
            observed: (0..dist.num_states()).map(|s| dist.observed(s)).collect(),
            pairs,
            init: dist.init_weight().to_vec(),
            gamma: dist.discount(),
            thresholds: thresholds.to_vec(),
            alpha,
            fdiv,
        })
    }

    pub fn num_costs(&self) -> usize {
        self.thresholds.len()
    }

    pub fn undiscounted(&self) -> bool {
        self.gamma >= 1.0
    }

    /// Length of the packed variable vector `[nu, lambda, mu?]`.
    pub fn dim(&self) -> usize {
        self.num_states + self.num_costs() + usize::from(self.undiscounted())
    }

    pub fn mu_index(&self) -> Option<usize> {
        self.undiscounted().then(|| self.num_states + self.num_costs())
    }

    pub fn pack(&self, nu: &[f64], lambda: &[f64], mu: f64) -> DVector<f64> {
        let mut x = DVector::zeros(self.dim());
        x.rows_mut(0, self.num_states).copy_from_slice(nu);
        x.rows_mut(self.num_states, self.num_costs()).copy_from_slice(lambda);
        if let Some(i) = self.mu_index() {
            x[i] = mu;
        }
        x
    }

    pub fn nu<'a>(&self, x: &'a DVector<f64>) -> &'a [f64] {
        &x.as_slice()[..self.num_states]
    }

    pub fn lambda<'a>(&self, x: &'a DVector<f64>) -> &'a [f64] {
        &x.as_slice()[self.num_states..self.num_states + self.num_costs()]
    }

    pub fn mu(&self, x: &DVector<f64>) -> f64 {
        self.mu_index().map_or(0.0, |i| x[i])
    }

    fn pair_x(&self, p: &Pair, nu: &[f64], lambda: &[f64], mu: f64) -> f64 {
        let next: f64 = p.succ.iter().map(|&(t, q)| q * nu[t]).sum();
        p.reward - lambda.iter().zip(&p.costs).map(|(l, c)| l * c).sum::<f64>()
            + self.gamma * next
            - nu[p.s]
            - mu
    }

    /// Loss, and optionally gradient and Hessian, at packed point `x`.
    /// Infinite thresholds contribute neither to the loss nor to the
    /// gradient; their multipliers are expected to stay at zero.
    pub fn evaluate(
        &self,
        x: &DVector<f64>,
        want_grad: bool,
        want_hess: bool,
    ) -> (f64, DVector<f64>, DMatrix<f64>) {
        let (nu, lambda, mu) = (self.nu(x), self.lambda(x), self.mu(x));
        let dim = self.dim();
        let n = self.num_states;
        let k = self.num_costs();
        let mut loss = 0.0;
        let mut grad = DVector::zeros(if want_grad { dim } else { 0 });
        let mut hess = DMatrix::zeros(if want_hess { dim } else { 0 }, if want_hess { dim } else { 0 });
        let mut g: Vec<(usize, f64)> = Vec::with_capacity(8);
        for p in &self.pairs {
            let xv = self.pair_x(p, nu, lambda, mu);
            let (phi, w, slope) = inner_max(xv, self.alpha, self.fdiv);
            loss += p.weight * phi;
            if !want_grad {
                continue;
            }
            // sparse derivative of x with respect to the packed variables
            g.clear();
            g.push((p.s, -1.0));
            for &(t, q) in &p.succ {
                g.push((t, self.gamma * q));
            }
            for (kk, &c) in p.costs.iter().enumerate() {
                if c != 0.0 {
                    g.push((n + kk, -c));
                }
            }
            if let Some(i) = self.mu_index() {
                g.push((i, -1.0));
            }
            for &(i, v) in &g {
                grad[i] += p.weight * w * v;
            }
            if want_hess && slope > 0.0 {
                let h = p.weight * slope;
                for &(i, vi) in &g {
                    for &(j, vj) in &g {
                        hess[(i, j)] += h * vi * vj;
                    }
                }
            }
        }
        for s in 0..n {
            loss += (1.0 - self.gamma) * self.init[s] * nu[s];
            if want_grad {
                grad[s] += (1.0 - self.gamma) * self.init[s];
            }
        }
        for kk in 0..k {
            let t = self.thresholds[kk];
            if t.is_finite() {
                loss += lambda[kk] * t;
                if want_grad {
                    grad[n + kk] += t;
                }
            } else if want_grad {
                grad[n + kk] = 0.0;
            }
        }
        if let Some(i) = self.mu_index() {
            loss += mu;
            if want_grad {
                grad[i] += 1.0;
            }
        }
        (loss, grad, hess)
    }

    /// `w(s, a)` on the full table under the convention of [`advantage`].
    pub fn weights(&self, dist: &EmpiricalDistribution, x: &DVector<f64>) -> DMatrix<f64> {
        let adv = advantage(dist, self.nu(x), self.lambda(x));
        let mu = self.mu_index().map(|i| x[i]);
        adv.expected.map(|e| closed_form_w(e, self.alpha, self.fdiv, mu))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub iterations: usize,
    /// Infinity norm of the projected gradient at the returned point.
    pub grad_norm: f64,
    pub converged: bool,
    /// Some multiplier ended at `lambda_max`, which signals that the
    /// constraint could not be met.
    pub lambda_at_cap: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub nu: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Option<f64>,
    pub w: DMatrix<f64>,
    pub loss_value: f64,
    pub diagnostics: Diagnostics,
}

/// Loss and analytic gradients `(loss, d/dnu, d/dlambda, d/dmu)`.
///
/// `mu` is ignored unless the distribution is undiscounted, in which case a
/// missing value counts as zero.
pub fn dual_loss(
    dist: &EmpiricalDistribution,
    thresholds: &[f64],
    cfg: &SolverConfig,
    nu: &[f64],
    lambda: &[f64],
    mu: Option<f64>,
) -> Result<(f64, Vec<f64>, Vec<f64>, f64)> {
    let data = DualData::new(dist, thresholds, cfg.alpha, cfg.fdiv)?;
    if nu.len() != data.num_states || lambda.len() != data.num_costs() {
        return Err(Error::InvalidArgument("dual variables have the wrong length".into()));
    }
    let x = data.pack(nu, lambda, mu.unwrap_or(0.0));
    let (loss, grad, _) = data.evaluate(&x, true, false);
    let n = data.num_states;
    let k = data.num_costs();
    let g_mu = data.mu_index().map_or(0.0, |i| grad[i]);
    Ok((
        loss,
        grad.as_slice()[..n].to_vec(),
        grad.as_slice()[n..n + k].to_vec(),
        g_mu,
    ))
}
