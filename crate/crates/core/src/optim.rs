//! Projected L-BFGS for box-constrained smooth (or a.e. smooth) problems.

use std::collections::VecDeque;

/// A differentiable objective.
pub trait Objective {
    fn value(&mut self, x: &[f64]) -> f64;
    /// Value and gradient; the gradient is written into `grad`.
    fn value_grad(&mut self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    /// Stop when `|P(x - g) - x|_inf <= tol`.
    pub tol: f64,
    pub memory: usize,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 400,
            tol: 1e-8,
            memory: 8,
            armijo: 1e-4,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIter,
    /// Line search could not decrease the objective any further.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Objective value after every accepted iterate, starting with `x0`.
    pub history: Vec<f64>,
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lower[i], upper[i]);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

fn projected_gradient_norm(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..x.len() {
        let p = (x[i] - g[i]).clamp(lower[i], upper[i]);
        worst = worst.max((p - x[i]).abs());
    }
    worst
}

/// Minimize `obj` over the box `[lower, upper]` starting from `x0`.
///
/// The iterates are feasible and the accepted objective values are
/// non-increasing.
pub fn minimize_box<O: Objective>(
    obj: &mut O,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &LbfgsOptions,
) -> Minimum {
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut g = vec![0.0; n];
    let mut f = obj.value_grad(&x, &mut g);
    let mut history = vec![f];
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut d = vec![0.0; n];
    let mut xn = vec![0.0; n];
    let mut gn = vec![0.0; n];
    let mut free = vec![true; n];
    let mut alpha_buf = vec![0.0; opts.memory];
    let mut termination = Termination::MaxIter;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if !f.is_finite() {
            termination = Termination::Stalled;
            break;
        }
        if projected_gradient_norm(&x, &g, lower, upper) <= opts.tol {
            termination = Termination::Converged;
            break;
        }
        for i in 0..n {
            free[i] = !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0));
        }

        let mut accepted = false;
        let mut use_memory = !mem.is_empty();
        loop {
            // two-loop recursion on the free variables
            for i in 0..n {
                d[i] = if free[i] { -g[i] } else { 0.0 };
            }
            if use_memory {
                for (k, (s, y, rho)) in mem.iter().enumerate().rev() {
                    let a = rho * (0..n).filter(|&i| free[i]).map(|i| s[i] * d[i]).sum::<f64>();
                    alpha_buf[k] = a;
                    for i in 0..n {
                        if free[i] {
                            d[i] -= a * y[i];
                        }
                    }
                }
                let (s, y, _) = mem.back().unwrap();
                let gamma = dot(s, y) / dot(y, y);
                for v in d.iter_mut() {
                    *v *= gamma;
                }
                for (k, (s, y, rho)) in mem.iter().enumerate() {
                    let b = rho * (0..n).filter(|&i| free[i]).map(|i| y[i] * d[i]).sum::<f64>();
                    for i in 0..n {
                        if free[i] {
                            d[i] += s[i] * (alpha_buf[k] - b);
                        }
                    }
                }
                if dot(&d, &g) >= 0.0 {
                    mem.clear();
                    use_memory = false;
                    continue;
                }
            }
            let dmax = d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if dmax == 0.0 {
                break;
            }
            let mut alpha = if use_memory { 1.0 } else { (1.0 / dmax).min(1.0) };
            for _ in 0..opts.max_backtracks {
                for i in 0..n {
                    xn[i] = x[i] + alpha * d[i];
                }
                project(&mut xn, lower, upper);
                let mut decrease = 0.0;
                for i in 0..n {
                    decrease += g[i] * (xn[i] - x[i]);
                }
                if decrease < 0.0 {
                    let fnew = obj.value(&xn);
                    if fnew <= f + opts.armijo * decrease {
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if accepted || !use_memory {
                break;
            }
            mem.clear();
            use_memory = false;
        }
        if !accepted {
            termination = Termination::Stalled;
            break;
        }

        let fnew = obj.value_grad(&xn, &mut gn);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if mem.len() == opts.memory {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        std::mem::swap(&mut x, &mut xn);
        std::mem::swap(&mut g, &mut gn);
        f = fnew;
        history.push(f);
        iterations += 1;
    }

    Minimum {
        x,
        f,
        iterations,
        termination,
        history,
    }
}
