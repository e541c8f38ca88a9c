//! Terminal ingredients in verification mode: LMI check of a given `(P, K, κ)`,
//! bisection of the sublevel value `β`, and robust invariance of candidate
//! regions.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{check_spd, serde_matrix, sym_eigenvalues};
use crate::model::{fd_jacobians, BoxSet, PlantModel};
use crate::optim::{minimize_box, LbfgsOptions, Objective};
use crate::sets::{
    boundary_point, cholesky_l, gaussian_vec, inverse_normal, spd_inverse, Ellipsoid,
    QuadraticForm,
};

/// Gate on the LMI minimum eigenvalue.
pub const LMI_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalIngredients {
    #[serde(with = "serde_matrix")]
    pub p: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub k: DMatrix<f64>,
    pub beta: f64,
    pub kappa: f64,
    #[serde(with = "serde_matrix")]
    pub a: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub b: DMatrix<f64>,
}

impl TerminalIngredients {
    pub fn new(
        p: DMatrix<f64>,
        k: DMatrix<f64>,
        beta: f64,
        kappa: f64,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        if !a.is_square() || b.nrows() != n || p.shape() != (n, n) || k.shape() != (m, n) {
            return Err(Error::InvalidConfig("terminal ingredient dimensions disagree".into()));
        }
        check_spd(&p, 1e-8, "terminal P")?;
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(Error::InvalidConfig(format!("κ = {kappa} must lie in (0, 1)")));
        }
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::InvalidConfig(format!("β = {beta} must be non-negative")));
        }
        Ok(Self {
            p,
            k,
            beta,
            kappa,
            a,
            b,
        })
    }

    pub fn closed_loop(&self) -> DMatrix<f64> {
        &self.a + &self.b * &self.k
    }
}

/// Central finite-difference linearization of `f(·, ·, 0)` at `(x_ref, u_ref)`.
pub fn linearize(model: &PlantModel, x_ref: &[f64], u_ref: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_len("x_ref", x_ref.len(), model.n())?;
    check_len("u_ref", u_ref.len(), model.m())?;
    let mut a = DMatrix::zeros(model.n(), model.n());
    let mut b = DMatrix::zeros(model.n(), model.m());
    fd_jacobians(model.dynamics(), x_ref, u_ref, &model.zero_disturbance(), &mut a, &mut b);
    Ok((a, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmiReport {
    /// Minimum eigenvalue of the block matrix (must be ≥ -1e-8).
    pub schur_min_eig: f64,
    /// Maximum eigenvalue of `A_K^T P A_K - (1-κ)P + Q + K^T R K` (must be ≤ 0).
    pub pre_schur_max_eig: f64,
}

impl LmiReport {
    pub fn holds(&self) -> bool {
        self.schur_min_eig >= -LMI_TOL
    }

    pub fn pre_schur_holds(&self) -> bool {
        self.pre_schur_max_eig <= LMI_TOL
    }

    /// Both forms give the same verdict.
    pub fn agree(&self) -> bool {
        self.holds() == self.pre_schur_holds()
    }
}

/// Evaluate the terminal LMI with `S = P^-1`, `O = K P^-1`.
pub fn verify_lmi(ing: &TerminalIngredients, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<LmiReport> {
    let n = ing.a.nrows();
    let m = ing.b.ncols();
    if q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::InvalidConfig("Q or R has the wrong shape".into()));
    }
    let qi = q.clone().try_inverse().ok_or(Error::Singular("Q"))?;
    let ri = r.clone().try_inverse().ok_or(Error::Singular("R"))?;
    let s = spd_inverse(&ing.p);
    let o = &ing.k * &s;
    let top = &ing.a * &s + &ing.b * &o;
    let dim = 3 * n + m;
    let mut blk = DMatrix::zeros(dim, dim);
    blk.view_mut((0, 0), (n, n)).copy_from(&(&s * (1.0 - ing.kappa)));
    blk.view_mut((0, n), (n, n)).copy_from(&top.transpose());
    blk.view_mut((0, 2 * n), (n, n)).copy_from(&s);
    blk.view_mut((0, 3 * n), (n, m)).copy_from(&o.transpose());
    blk.view_mut((n, 0), (n, n)).copy_from(&top);
    blk.view_mut((n, n), (n, n)).copy_from(&s);
    blk.view_mut((2 * n, 0), (n, n)).copy_from(&s);
    blk.view_mut((2 * n, 2 * n), (n, n)).copy_from(&qi);
    blk.view_mut((3 * n, 0), (m, n)).copy_from(&o);
    blk.view_mut((3 * n, 3 * n), (m, m)).copy_from(&ri);
    let schur_min_eig = sym_eigenvalues(&blk).min();

    let ak = ing.closed_loop();
    let pre = ak.transpose() * &ing.p * &ak - &ing.p * (1.0 - ing.kappa)
        + q
        + ing.k.transpose() * r * &ing.k;
    let pre_schur_max_eig = sym_eigenvalues(&pre).max();
    Ok(LmiReport {
        schur_min_eig,
        pre_schur_max_eig,
    })
}

/// Deterministic low-discrepancy directions: Halton points mapped through the
/// inverse normal CDF.
pub fn halton_directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    const PRIMES: [u64; 20] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71];
    assert!(dim <= PRIMES.len(), "too many dimensions for the Halton sequence");
    let radical_inverse = |mut i: u64, base: u64| {
        let mut f = 1.0;
        let mut r = 0.0;
        while i > 0 {
            f /= base as f64;
            r += f * (i % base) as f64;
            i /= base;
        }
        r
    };
    (1..=count as u64)
        .map(|i| {
            (0..dim)
                .map(|d| inverse_normal(radical_inverse(i, PRIMES[d]).clamp(1e-12, 1.0 - 1e-12)))
                .collect()
        })
        .collect()
}

/// Which condition limits `β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaReport {
    pub beta: f64,
    /// Largest `β` allowed by `u_ref + K (x - x_ref) ∈ U` (exact).
    pub input_limit: f64,
    /// Largest `β` with `{V_f <= β} ⊆ X` (exact).
    pub state_limit: f64,
    /// Whether the sampled linearization-error bound held at the analytic
    /// limit; when false, `beta` comes from bisection on that bound.
    pub error_bound_at_limit: bool,
    pub samples: usize,
    pub iterations: usize,
}

/// Worst value of `e^T P e + 2 e^T P A_K dx - κ dx^T P dx` over the samples
/// on `{V_f = β}`; the bound holds when this is ≤ 0.
fn linearization_excess(model: &PlantModel, ing: &TerminalIngredients, beta: f64, dirs: &[Vec<f64>], l: &DMatrix<f64>) -> f64 {
    let n = model.n();
    let x_ref = model.x_ref.as_slice();
    let ak = ing.closed_loop();
    let w0 = model.zero_disturbance();
    let mut fx = vec![0.0; n];
    let mut worst = f64::NEG_INFINITY;
    for z in dirs {
        let x = boundary_point(x_ref, beta, l, z);
        let dx = DVector::from_iterator(n, x.iter().zip(x_ref).map(|(a, b)| a - b));
        let u = &ing.k * &dx + &model.u_ref;
        model.step_into(&x, u.as_slice(), &w0, &mut fx);
        let lin = &ak * &dx;
        let e = DVector::from_iterator(n, (0..n).map(|i| fx[i] - x_ref[i] - lin[i]));
        let pe = &ing.p * &e;
        let v = e.dot(&pe) + 2.0 * pe.dot(&lin) - ing.kappa * dx.dot(&(&ing.p * &dx));
        worst = worst.max(v);
    }
    worst
}

/// Largest `β` (bisection, relative tolerance 1e-3, at most 40 steps) such that
/// the linearization-error bound holds at `samples` boundary points of
/// `{V_f = β}`, the linear law is admissible and `{V_f <= β} ⊆ X`.
pub fn bisect_beta(model: &PlantModel, ing: &TerminalIngredients, samples: usize) -> Result<BetaReport> {
    let n = model.n();
    check_len("terminal P", ing.p.nrows(), n)?;
    let pinv = spd_inverse(&ing.p);
    let mut input_limit = f64::INFINITY;
    for b in 0..model.m() {
        let kb = ing.k.row(b);
        let spread = (kb * &pinv * kb.transpose())[(0, 0)];
        let ur = model.u_ref[b];
        let margin = (model.input_box.upper[b] - ur).min(ur - model.input_box.lower[b]);
        if margin <= 0.0 {
            input_limit = 0.0;
        } else if spread > 0.0 {
            input_limit = input_limit.min(margin * margin / spread);
        }
    }
    let mut state_limit = f64::INFINITY;
    for i in 0..n {
        let xr = model.x_ref[i];
        let margin = (model.state_box.upper[i] - xr).min(xr - model.state_box.lower[i]);
        state_limit = state_limit.min(if margin <= 0.0 { 0.0 } else { margin * margin / pinv[(i, i)] });
    }
    let hi = input_limit.min(state_limit);
    if hi.is_nan() || hi <= 0.0 {
        return Err(Error::NoTerminalRegion(
            "the reference lies on the boundary of the input or state box".into(),
        ));
    }
    let dirs = halton_directions(n, samples);
    let l = cholesky_l(&ing.p);
    let ok = |beta: f64| linearization_excess(model, ing, beta, &dirs, &l) <= 0.0;

    let mut report = BetaReport {
        beta: hi,
        input_limit,
        state_limit,
        error_bound_at_limit: true,
        samples,
        iterations: 0,
    };
    if hi.is_finite() && ok(hi) {
        return Ok(report);
    }
    report.error_bound_at_limit = false;
    let mut upper = if hi.is_finite() { hi } else { 1.0 };
    let mut lower = 0.0;
    // grow the bracket for unbounded problems
    if !hi.is_finite() {
        while ok(upper) && upper < 1e12 {
            lower = upper;
            upper *= 2.0;
        }
    }
    for it in 0..40 {
        report.iterations = it + 1;
        let mid = 0.5 * (lower + upper);
        if ok(mid) {
            lower = mid;
        } else {
            upper = mid;
        }
        if lower > 0.0 && (upper - lower) <= 1e-3 * lower {
            break;
        }
    }
    if lower <= 0.0 {
        return Err(Error::NoTerminalRegion(
            "the linearization-error bound fails arbitrarily close to the reference".into(),
        ));
    }
    report.beta = lower;
    Ok(report)
}

/// A candidate robust controlled invariant set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Box(BoxSet),
    Ellipsoid(Ellipsoid),
}

impl Region {
    pub fn dim(&self) -> usize {
        match self {
            Region::Box(b) => b.dim(),
            Region::Ellipsoid(e) => e.form.dim(),
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        match self {
            Region::Box(b) => b.contains(x, tol),
            Region::Ellipsoid(e) => e.contains(x, tol),
        }
    }

    /// Violation measure: box distance or `V(x) - level`, clipped at 0.
    pub fn residual(&self, x: &[f64]) -> f64 {
        match self {
            Region::Box(b) => b.max_violation(x),
            Region::Ellipsoid(e) => (e.form.eval(x) - e.level).max(0.0),
        }
    }

    /// Deterministic sample: the first half on the boundary, the rest inside.
    pub fn samples(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim();
        match self {
            Region::Ellipsoid(e) => {
                let l = cholesky_l(&e.form.shape);
                (0..count)
                    .map(|k| {
                        let z = gaussian_vec(&mut rng, d);
                        let scale = if k < count / 2 {
                            1.0
                        } else {
                            rng.gen::<f64>().powf(1.0 / d as f64)
                        };
                        boundary_point(&e.form.center, e.level * scale * scale, &l, &z)
                    })
                    .collect()
            }
            Region::Box(b) => (0..count)
                .map(|k| {
                    let mut x = b.sample(&mut rng);
                    if k < count / 2 {
                        // push one random axis to a face
                        let i = rng.gen_range(0..d);
                        x[i] = if rng.gen::<bool>() { b.upper[i] } else { b.lower[i] };
                    }
                    x
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub samples: usize,
    pub failures: usize,
    pub worst_residual: f64,
    /// The dynamics passed the sampled affinity-in-`w` audit, so checking the
    /// disturbance vertices suffices.
    pub affine_in_w: bool,
}

impl InvarianceReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

struct RegionPull<'a> {
    model: &'a PlantModel,
    region: &'a Region,
    x: &'a [f64],
    w: &'a [f64],
    next: Vec<f64>,
    grad_x: Vec<f64>,
    jx: DMatrix<f64>,
    ju: DMatrix<f64>,
}

impl RegionPull<'_> {
    fn smooth(&mut self, u: &[f64]) -> f64 {
        self.model.step_into(self.x, u, self.w, &mut self.next);
        match self.region {
            Region::Box(b) => self
                .next
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let e = (b.lower[i] - v).max(0.0) + (v - b.upper[i]).max(0.0);
                    e * e
                })
                .sum(),
            Region::Ellipsoid(e) => e.form.eval(&self.next),
        }
    }
}

impl Objective for RegionPull<'_> {
    fn value(&mut self, u: &[f64]) -> f64 {
        self.smooth(u)
    }

    fn value_grad(&mut self, u: &[f64], g: &mut [f64]) -> f64 {
        let f = self.smooth(u);
        match self.region {
            Region::Box(b) => {
                for (i, v) in self.next.iter().enumerate() {
                    self.grad_x[i] = 2.0 * ((v - b.upper[i]).max(0.0) - (b.lower[i] - v).max(0.0));
                }
            }
            Region::Ellipsoid(e) => e.form.grad_into(&self.next, &mut self.grad_x),
        }
        self.model.jacobians(self.x, u, self.w, &mut self.jx, &mut self.ju);
        for (b, gb) in g.iter_mut().enumerate() {
            *gb = (0..self.next.len()).map(|i| self.ju[(i, b)] * self.grad_x[i]).sum();
        }
        f
    }
}

/// Smallest residual of `f(x, u, w)` in `region` over `u ∈ U`.
fn best_residual(model: &PlantModel, region: &Region, x: &[f64], w: &[f64], starts: &[Vec<f64>]) -> f64 {
    let mut next = vec![0.0; model.n()];
    let mut best = f64::INFINITY;
    for u in starts {
        model.step_into(x, u, w, &mut next);
        best = best.min(region.residual(&next));
        if best == 0.0 {
            return 0.0;
        }
    }
    let mut obj = RegionPull {
        model,
        region,
        x,
        w,
        next: vec![0.0; model.n()],
        grad_x: vec![0.0; model.n()],
        jx: DMatrix::zeros(model.n(), model.n()),
        ju: DMatrix::zeros(model.n(), model.m()),
    };
    let opts = LbfgsOptions {
        max_iter: 200,
        tol: 1e-12,
        ..Default::default()
    };
    for u0 in starts {
        let res = minimize_box(&mut obj, u0, &model.input_box.lower, &model.input_box.upper, &opts);
        model.step_into(x, &res.x, w, &mut next);
        best = best.min(region.residual(&next));
        if best == 0.0 {
            break;
        }
    }
    best
}

/// Sampled audit that `f` is affine in `w`.
pub fn audit_affine_in_w(model: &PlantModel, samples: usize, seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.n();
    let (mut fa, mut fb, mut fm) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for _ in 0..samples {
        let x = model.state_box.sample(&mut rng);
        let u = model.input_box.sample(&mut rng);
        let wa = model.dist_box.sample(&mut rng);
        let wb = model.dist_box.sample(&mut rng);
        let wm: Vec<f64> = wa.iter().zip(&wb).map(|(a, b)| 0.5 * (a + b)).collect();
        model.step_into(&x, &u, &wa, &mut fa);
        model.step_into(&x, &u, &wb, &mut fb);
        model.step_into(&x, &u, &wm, &mut fm);
        for i in 0..n {
            let mid = 0.5 * (fa[i] + fb[i]);
            if (fm[i] - mid).abs() > 1e-10 * (1.0 + mid.abs()) {
                return false;
            }
        }
    }
    true
}

/// Sampled check of `∀x ∈ region, ∀w ∈ W, ∃u ∈ U : f(x, u, w) ∈ region`.
///
/// For dynamics affine in `w` and a convex region, the worst case over `W` is
/// attained at a vertex, so only the vertices are checked; otherwise 16 random
/// disturbances per sample are added.
pub fn verify_robust_invariance(model: &PlantModel, region: &Region, samples: usize, seed: u64) -> Result<InvarianceReport> {
    check_len("region", region.dim(), model.n())?;
    let affine = audit_affine_in_w(model, 200, seed ^ 0x5eed);
    let mut ws: Vec<Vec<f64>> = model.dist_box.vertices().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    if !affine {
        ws.extend((0..16).map(|_| model.dist_box.sample(&mut rng)));
    }
    let mut starts = vec![model.u_ref.as_slice().to_vec(), model.input_box.center()];
    for s in &mut starts {
        model.input_box.project(s);
    }
    let points = region.samples(samples, seed);
    let residuals: Vec<f64> = {
        use rayon::prelude::*;
        points
            .par_iter()
            .map(|x| {
                ws.iter()
                    .map(|w| best_residual(model, region, x, w, &starts))
                    .fold(0.0, f64::max)
            })
            .collect()
    };
    let failures = residuals.iter().filter(|r| **r > 1e-6).count();
    Ok(InvarianceReport {
        samples,
        failures,
        worst_residual: residuals.iter().copied().fold(0.0, f64::max),
        affine_in_w: affine,
    })
}

/// Adapt the terminal ingredients: `Ω = {V_f <= β}` and `Γ = V_f`.
pub fn adapt(model: &PlantModel, ing: &TerminalIngredients) -> Result<(Region, QuadraticForm)> {
    let center = model.x_ref.as_slice().to_vec();
    let e = Ellipsoid::new(ing.p.clone(), center.clone(), ing.beta)?;
    let form = QuadraticForm::new(ing.p.clone(), center)?;
    Ok((Region::Ellipsoid(e), form))
}
