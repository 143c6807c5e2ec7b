use nalgebra::{DMatrix, DVector};

use super::dual::{DualData, Diagnostics, DualSolution, Optimizer, SolverConfig};
use crate::bound::{ope_dice, optimize_ub_for, ub_gradient_step, UpperBoundSolution};
use crate::datagen::EmpiricalDistribution;
use crate::error::{Error, Result};
use crate::optim::{projected_newton, Bounds, Outcome};

/// Newton budget for one inner `(nu, mu)` solve.
const NEWTON_ITERATIONS: usize = 1000;
/// Multiplier search budget of the conservative solver.
const ROOT_ITERATIONS: usize = 200;
const ROOT_TOL: f64 = 1e-12;

fn bounds_for(data: &DualData, cfg: &SolverConfig, lambda_free: bool) -> Bounds {
    let n = data.num_states;
    let mut b = Bounds::free(data.dim());
    for s in 0..n {
        b.fixed[s] = !data.observed[s];
    }
    for k in 0..data.num_costs() {
        b.lower[n + k] = 0.0;
        b.upper[n + k] = cfg.lambda_max;
        b.fixed[n + k] = !lambda_free || !data.thresholds[k].is_finite();
    }
    b
}

fn newton(data: &DualData, cfg: &SolverConfig, x0: DVector<f64>, lambda_free: bool) -> Outcome {
    let bounds = bounds_for(data, cfg, lambda_free);
    projected_newton(
        &|x: &DVector<f64>, h: bool| data.evaluate(x, true, h),
        x0,
        &bounds,
        cfg.tolerance,
        NEWTON_ITERATIONS.min(cfg.max_iterations),
    )
}

fn finish(
    data: &DualData,
    dist: &EmpiricalDistribution,
    cfg: &SolverConfig,
    x: &DVector<f64>,
    iterations: usize,
    grad_norm: f64,
    converged: bool,
) -> DualSolution {
    let (loss, _, _) = data.evaluate(x, false, false);
    let lambda = data.lambda(x).to_vec();
    let lambda_at_cap = lambda.iter().any(|&l| l >= cfg.lambda_max);
    DualSolution {
        nu: data.nu(x).to_vec(),
        lambda,
        mu: data.mu_index().map(|i| x[i]),
        w: data.weights(dist, x),
        loss_value: loss,
        diagnostics: Diagnostics {
            iterations,
            grad_norm,
            converged,
            lambda_at_cap,
        },
    }
}

/// Minimizes the convex dual jointly over `(nu, lambda[, mu])` with
/// `0 <= lambda <= lambda_max`, using the plain estimate of the cost.
/// Multipliers of infinite thresholds stay at zero.
pub fn optimize_naive(
    dist: &EmpiricalDistribution,
    thresholds: &[f64],
    cfg: &SolverConfig,
) -> Result<DualSolution> {
    cfg.validate()?;
    let data = DualData::new(dist, thresholds, cfg.alpha, cfg.fdiv)?;
    let x0 = DVector::zeros(data.dim());
    Ok(match cfg.optimizer {
        Optimizer::Newton => {
            let out = newton(&data, cfg, x0, true);
            finish(&data, dist, cfg, &out.x, out.iterations, out.grad_norm, out.converged)
        }
        Optimizer::GradientDescent => naive_descent(&data, dist, cfg, x0),
    })
}

fn step_sizes(data: &DualData, cfg: &SolverConfig) -> DVector<f64> {
    let mut eta = DVector::from_element(data.dim(), cfg.nu_step);
    for k in 0..data.num_costs() {
        eta[data.num_states + k] = cfg.lambda_step;
    }
    eta
}

fn naive_descent(
    data: &DualData,
    dist: &EmpiricalDistribution,
    cfg: &SolverConfig,
    mut x: DVector<f64>,
) -> DualSolution {
    let bounds = bounds_for(data, cfg, true);
    let eta = step_sizes(data, cfg);
    let mut it = 0;
    loop {
        let (_, g, _) = data.evaluate(&x, true, false);
        let pg = bounds.projected_grad_norm(&x, &g);
        if pg <= cfg.tolerance || it >= cfg.max_iterations {
            return finish(data, dist, cfg, &x, it, pg, pg <= cfg.tolerance);
        }
        for i in 0..x.len() {
            if !bounds.fixed[i] {
                x[i] = (x[i] - eta[i] * g[i]).clamp(bounds.lower[i], bounds.upper[i]);
            }
        }
        it += 1;
    }
}

struct Inner {
    x: DVector<f64>,
    w: DMatrix<f64>,
    ubs: Vec<UpperBoundSolution>,
    iterations: usize,
    grad_norm: f64,
    converged: bool,
}

/// `(nu, mu)` at fixed `lambda`, then the upper bound of every finite cost.
fn inner_solve(
    data: &DualData,
    dist: &EmpiricalDistribution,
    cfg: &SolverConfig,
    mut x0: DVector<f64>,
    lambda: &[f64],
    warm: Option<&[UpperBoundSolution]>,
) -> Result<Inner> {
    let n = data.num_states;
    for (k, l) in lambda.iter().enumerate() {
        x0[n + k] = *l;
    }
    let out = newton(data, cfg, x0, false);
    let w = data.weights(dist, &out.x);
    let mut ubs = Vec::with_capacity(data.num_costs());
    let mut converged = out.converged;
    for k in 0..data.num_costs() {
        let start = warm.map(|u| (&u[k].chi[..], u[k].tau));
        let ub = optimize_ub_for(&w, &dist.costs()[k], dist, cfg, start)?;
        converged &= ub.converged;
        ubs.push(ub);
    }
    Ok(Inner {
        x: out.x,
        w,
        ubs,
        iterations: out.iterations,
        grad_norm: out.grad_norm,
        converged,
    })
}

/// Cost-conservative solve: `lambda` is driven by the KL upper bound of the
/// cost estimate instead of the plain estimate.
///
/// With the Newton optimizer each `lambda` is scored by an exact inner solve
/// of `(nu, mu)` followed by an exact bound minimization; for a single
/// finite threshold the multiplier is the bracketed root of
/// `UB(lambda) = c_hat`, otherwise projected gradient steps on `lambda`.
pub fn optimize_conservative(
    dist: &EmpiricalDistribution,
    thresholds: &[f64],
    cfg: &SolverConfig,
) -> Result<(DualSolution, Vec<UpperBoundSolution>)> {
    cfg.validate()?;
    let data = DualData::new(dist, thresholds, cfg.alpha, cfg.fdiv)?;
    match cfg.optimizer {
        Optimizer::Newton => conservative_newton(&data, dist, cfg),
        Optimizer::GradientDescent => conservative_descent(&data, dist, cfg),
    }
}

fn conservative_newton(
    data: &DualData,
    dist: &EmpiricalDistribution,
    cfg: &SolverConfig,
) -> Result<(DualSolution, Vec<UpperBoundSolution>)> {
    let k = data.num_costs();
    let active: Vec<usize> = (0..k).filter(|&i| data.thresholds[i].is_finite()).collect();
    let mut lambda = vec![0.0; k];
    let mut evals = 0;
    let mut inner = inner_solve(data, dist, cfg, DVector::zeros(data.dim()), &lambda, None)?;
    let excess = |inner: &Inner, i: usize| inner.ubs[i].ub_value - data.thresholds[i];
    let mut root_ok = true;
    if active.len() == 1 {
        let i = active[0];
        if excess(&inner, i) > 0.0 {
            // grow a bracket, then regula falsi with the Illinois fix
            let (mut lo, mut h_lo) = (0.0, excess(&inner, i));
            let mut hi = 1.0_f64.min(cfg.lambda_max);
            let mut best;
            loop {
                lambda[i] = hi;
                let trial = inner_solve(data, dist, cfg, inner.x.clone(), &lambda, Some(&inner.ubs))?;
                evals += 1;
                let h = excess(&trial, i);
                best = trial;
                if h <= 0.0 || hi >= cfg.lambda_max {
                    break;
                }
                (lo, h_lo) = (hi, h);
                hi = (hi * 4.0).min(cfg.lambda_max);
            }
            let mut h_hi = excess(&best, i);
            if h_hi > 0.0 {
                inner = best;
            } else {
                let mut side = 0i8;
                let mut lo_inner: Option<Inner> = None;
                for _ in 0..ROOT_ITERATIONS {
                    if hi - lo <= ROOT_TOL * (1.0 + hi) || h_hi.abs() <= ROOT_TOL {
                        break;
                    }
                    let mut mid = hi - h_hi * (hi - lo) / (h_hi - h_lo);
                    if !(mid > lo && mid < hi) || !mid.is_finite() {
                        mid = 0.5 * (lo + hi);
                    }
                    lambda[i] = mid;
                    let warm = lo_inner.as_ref().unwrap_or(&best);
                    let trial = inner_solve(data, dist, cfg, warm.x.clone(), &lambda, Some(&warm.ubs))?;
                    evals += 1;
                    let h = excess(&trial, i);
                    if h > 0.0 {
                        (lo, h_lo) = (mid, h);
                        lo_inner = Some(trial);
                        if side == -1 {
                            h_hi *= 0.5;
                        }
                        side = -1;
                    } else {
                        (hi, h_hi) = (mid, h);
                        best = trial;
                        if side == 1 {
                            h_lo *= 0.5;
                        }
                        side = 1;
                    }
                }
                root_ok = hi - lo <= 1e-8 * (1.0 + hi) || excess(&best, i).abs() <= 1e-8;
                // the feasible end of the bracket
                inner = best;
            }
        }
    } else if active.len() > 1 {
        root_ok = false;
        for _ in 0..cfg.max_iterations.min(ROOT_ITERATIONS * 10) {
            let mut change: f64 = 0.0;
            for &i in &active {
                let next = (lambda[i] + cfg.lambda_step * excess(&inner, i)).clamp(0.0, cfg.lambda_max);
                change = change.max((next - lambda[i]).abs());
                lambda[i] = next;
            }
            inner = inner_solve(data, dist, cfg, inner.x.clone(), &lambda, Some(&inner.ubs))?;
            evals += 1;
            if change <= cfg.tolerance * cfg.lambda_step {
                root_ok = true;
                break;
            }
        }
    }
    let sol = finish(
        data,
        dist,
        cfg,
        &inner.x,
        inner.iterations + evals,
        inner.grad_norm,
        inner.converged && root_ok,
    );
    let sol = DualSolution { w: inner.w, ..sol };
    Ok((sol, inner.ubs))
}

fn conservative_descent(
    data: &DualData,
    dist: &EmpiricalDistribution,
    cfg: &SolverConfig,
) -> Result<(DualSolution, Vec<UpperBoundSolution>)> {
    let n = data.num_states;
    let k = data.num_costs();
    let bounds = bounds_for(data, cfg, false);
    let eta = step_sizes(data, cfg);
    let mut x = DVector::zeros(data.dim());
    let mut taus = vec![1.0; k];
    let mut chis = vec![vec![0.0; n]; k];
    let mut it = 0;
    let mut norm;
    loop {
        let (_, g, _) = data.evaluate(&x, true, false);
        norm = bounds.projected_grad_norm(&x, &g);
        let w = data.weights(dist, &x);
        let mut lambda_moves = vec![0.0; k];
        for kk in 0..k {
            let (ub, g_norm) = ub_gradient_step(&mut taus[kk], &mut chis[kk], &w, &dist.costs()[kk], dist, cfg)?;
            norm = norm.max(g_norm);
            if data.thresholds[kk].is_finite() {
                let l = x[n + kk];
                let next = (l + cfg.lambda_step * (ub - data.thresholds[kk])).clamp(0.0, cfg.lambda_max);
                lambda_moves[kk] = next - l;
                norm = norm.max((next - l).abs() / cfg.lambda_step);
            }
        }
        if norm <= cfg.tolerance || it >= cfg.max_iterations {
            break;
        }
        for i in (0..n).filter(|&i| !bounds.fixed[i]) {
            x[i] -= eta[i] * g[i];
        }
        if let Some(i) = data.mu_index() {
            x[i] -= eta[i] * g[i];
        }
        for kk in 0..k {
            x[n + kk] += lambda_moves[kk];
        }
        it += 1;
    }
    let sol = finish(data, dist, cfg, &x, it, norm, norm <= cfg.tolerance);
    let mut ubs = Vec::with_capacity(k);
    for kk in 0..k {
        let warm = Some((&chis[kk][..], taus[kk]));
        // report the bound at the final weights, warm started from the
        // descent state so the quoted value is a minimum
        let exact = SolverConfig {
            optimizer: Optimizer::Newton,
            ..cfg.clone()
        };
        ubs.push(optimize_ub_for(&sol.w, &dist.costs()[kk], dist, &exact, warm)?);
    }
    Ok((sol, ubs))
}

/// Plain cost estimates `E_{d^D}[w C_k]` of a dual solution.
pub fn estimated_costs(sol: &DualSolution, dist: &EmpiricalDistribution) -> Vec<f64> {
    dist.costs().iter().map(|c| ope_dice(&sol.w, dist, c)).collect()
}

/// Checks that `w` matches the closed form at the stored dual variables.
pub fn check_solution(sol: &DualSolution, dist: &EmpiricalDistribution, thresholds: &[f64], cfg: &SolverConfig) -> Result<f64> {
    let data = DualData::new(dist, thresholds, cfg.alpha, cfg.fdiv)?;
    let x = data.pack(&sol.nu, &sol.lambda, sol.mu.unwrap_or(0.0));
    let w = data.weights(dist, &x);
    if w.shape() != sol.w.shape() {
        return Err(Error::InvalidArgument("weight table has the wrong shape".into()));
    }
    Ok((w - &sol.w).amax())
}
