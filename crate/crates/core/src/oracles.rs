//! Brute-force reference computations for tests. Slow on purpose and kept
//! free of the solver, rollout and tightening code they are compared with.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{BoxSet, PlantModel};
use crate::tightening::TighteningSequences;

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut c = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Tightening constants from explicit powers: `c_j = Lx^j Lw w̄`,
/// `d_j = Σ_{k<j} c_k`, all sums compensated.
pub fn oracle_tightening(model: &PlantModel, n_max: usize) -> TighteningSequences {
    let n = model.n();
    let wbar = model.dist_bound().to_vec();
    let lx = &model.lx;
    let mut power = DMatrix::<f64>::identity(n, n);
    let mut c = Vec::with_capacity(n_max + 1);
    for _ in 0..=n_max {
        let m = &power * &model.lw;
        c.push(
            (0..n)
                .map(|i| compensated_sum((0..model.r()).map(|k| m[(i, k)] * wbar[k])))
                .collect::<Vec<f64>>(),
        );
        let next = DMatrix::from_fn(n, n, |i, j| compensated_sum((0..n).map(|a| lx[(i, a)] * power[(a, j)])));
        power = next;
    }
    let d = (0..=n_max)
        .map(|j| (0..n).map(|i| compensated_sum((0..j).map(|k| c[k][i]))).collect())
        .collect();
    TighteningSequences {
        horizon: n_max,
        c,
        d,
    }
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: &mut dyn FnMut(&[f64]) -> f64, u: &[f64], rel_step: f64) -> Vec<f64> {
    let mut x = u.to_vec();
    (0..u.len())
        .map(|i| {
            let h = rel_step * (1.0 + u[i].abs());
            x[i] = u[i] + h;
            let fp = f(&x);
            x[i] = u[i] - h;
            let fm = f(&x);
            x[i] = u[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Discrete Riccati iteration to a fixed point. Returns `(P, K)` with
/// `u = K x`.
pub fn riccati_fixed_point(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, iters: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut p = q.clone();
    let mut k = DMatrix::zeros(b.ncols(), a.nrows());
    for _ in 0..iters {
        let s = r + b.transpose() * &p * b;
        let s_inv = s.try_inverse().expect("R + B^T P B is invertible");
        k = -(&s_inv * b.transpose() * &p * a);
        let ak = a + b * &k;
        let next = ak.transpose() * &p * &ak + q + k.transpose() * r * &k;
        let diff = (&next - &p).amax();
        p = (&next + next.transpose()) * 0.5;
        if diff < 1e-13 * (1.0 + p.amax()) {
            break;
        }
    }
    (p, k)
}

/// Largest `ω` on a dense polar scan of the 2-D ellipse boundary such that
/// every scanned point lies in `bx`. Resolution `1 / steps` in `ω`.
pub fn oracle_sublevel_in_box_2d(shape: &DMatrix<f64>, bx: &BoxSet, angles: usize, steps: usize) -> f64 {
    let inside = |omega: f64| {
        (0..angles).all(|t| {
            let th = std::f64::consts::TAU * t as f64 / angles as f64;
            let (c, s) = (th.cos(), th.sin());
            let q = shape[(0, 0)] * c * c + (shape[(0, 1)] + shape[(1, 0)]) * c * s + shape[(1, 1)] * s * s;
            let rad = (omega / q).sqrt();
            let x = [rad * c, rad * s];
            (0..2).all(|i| x[i] >= bx.lower[i] - 1e-12 && x[i] <= bx.upper[i] + 1e-12)
        })
    };
    let mut lo = 0.0;
    let mut hi = 1.0;
    while inside(hi) {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..steps {
        let mid = 0.5 * (lo + hi);
        if inside(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Everything the enumeration oracle needs, as plain data.
pub struct CostSpec<'a> {
    pub model: &'a PlantModel,
    pub p_gamma: &'a DMatrix<f64>,
    pub q: &'a DMatrix<f64>,
    pub r: &'a DMatrix<f64>,
    pub theta: f64,
    pub xi: f64,
    /// `X ⊖ R(j)` for `j = 0..=N_p`.
    pub boxes: &'a [BoxSet],
}

fn quad(m: &DMatrix<f64>, v: &[f64], c: &[f64]) -> f64 {
    let n = v.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += (v[i] - c[i]) * m[(i, j)] * (v[j] - c[j]);
        }
    }
    s
}

/// Exact cost and state-constraint violation of `(u, q)`.
pub fn oracle_cost(spec: &CostSpec, x0: &[f64], u: &[f64], q: usize) -> (f64, f64) {
    let model = spec.model;
    let (m, xr, ur) = (model.m(), model.x_ref.as_slice(), model.u_ref.as_slice());
    let w0 = vec![0.0; model.r()];
    let mut x = x0.to_vec();
    let mut tracking = 0.0;
    let mut gmin = f64::INFINITY;
    let mut viol = spec.boxes[0].max_violation(&x);
    for j in 0..q {
        let uj = &u[j * m..(j + 1) * m];
        tracking += quad(spec.q, &x, xr) + quad(spec.r, uj, ur);
        x = model.step(&x, uj, &w0).expect("dimensions");
        gmin = gmin.min(quad(spec.p_gamma, &x, xr));
        viol = viol.max(spec.boxes[j + 1].max_violation(&x));
    }
    (spec.theta * tracking + spec.xi * gmin, viol)
}

/// `min over (u, q)` of the exact cost by dense multi-start projected
/// gradient descent with finite-difference gradients and a quadratic penalty.
/// Returns `+inf` if no start ends feasible.
pub fn oracle_min_over_q(spec: &CostSpec, x0: &[f64], starts: usize, seed: u64) -> f64 {
    let model = spec.model;
    let m = model.m();
    let n_p = spec.boxes.len() - 1;
    let ub = &model.input_box;
    let mut best = f64::INFINITY;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for q in 1..=n_p {
        for s in 0..starts {
            let mut u: Vec<f64> = match s {
                0 => model.u_ref.as_slice().repeat(q),
                1 => vec![0.0; q * m],
                _ => (0..q * m).map(|i| rng.gen_range(ub.lower[i % m]..=ub.upper[i % m])).collect(),
            };
            for (i, v) in u.iter_mut().enumerate() {
                *v = v.clamp(ub.lower[i % m], ub.upper[i % m]);
            }
            for weight in [1e2, 1e4, 1e6, 1e8] {
                let mut f = |v: &[f64]| {
                    let (c, viol) = oracle_cost(spec, x0, v, q);
                    c + weight * viol * viol
                };
                u = projected_descent(&mut f, u, ub, m, 300);
            }
            let (c, viol) = oracle_cost(spec, x0, &u, q);
            if viol <= 1e-6 {
                best = best.min(c);
            }
        }
    }
    best
}

fn projected_descent(f: &mut dyn FnMut(&[f64]) -> f64, mut u: Vec<f64>, ub: &BoxSet, m: usize, iters: usize) -> Vec<f64> {
    let project = |v: &mut Vec<f64>| {
        for (i, x) in v.iter_mut().enumerate() {
            *x = x.clamp(ub.lower[i % m], ub.upper[i % m]);
        }
    };
    let mut fu = f(&u);
    let mut step = 1.0;
    for _ in 0..iters {
        let g = fd_gradient(f, &u, 1e-7);
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gn < 1e-12 {
            break;
        }
        let mut improved = false;
        for _ in 0..50 {
            let mut cand: Vec<f64> = u.iter().zip(&g).map(|(a, b)| a - step * b / gn).collect();
            project(&mut cand);
            let fc = f(&cand);
            if fc < fu {
                u = cand;
                fu = fc;
                improved = true;
                step *= 1.5;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    u
}
