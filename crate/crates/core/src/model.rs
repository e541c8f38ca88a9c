//! Plant abstraction: dynamics, constraint boxes, disturbance box and
//! component-wise Lipschitz data.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Axis-aligned box `{x : lower <= x <= upper}`.
///
/// An inverted interval on any axis makes the box empty; emptiness is a value,
/// not an error, because it arises naturally from Pontryagin differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_len("box upper bound", upper.len(), lower.len())?;
        if lower.iter().chain(&upper).any(|v| v.is_nan()) {
            return Err(Error::InvalidModel("box bound is NaN".into()));
        }
        Ok(Self { lower, upper })
    }

    /// `{x : |x_i| <= half_width_i}`.
    pub fn symmetric(half_widths: &[f64]) -> Self {
        Self {
            lower: half_widths.iter().map(|h| -h).collect(),
            upper: half_widths.to_vec(),
        }
    }

    /// The singleton `{0}` in `dim` dimensions.
    pub fn origin(dim: usize) -> Self {
        Self::symmetric(&vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.iter().zip(&self.upper).any(|(l, u)| l > u)
    }

    pub fn is_origin_symmetric(&self, tol: f64) -> bool {
        self.lower
            .iter()
            .zip(&self.upper)
            .all(|(l, u)| (l + u).abs() <= tol)
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol)
    }

    /// True if `x` is inside with strictly positive margin on every axis.
    pub fn contains_strictly(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *v > *l && *v < *u)
    }

    /// True if `other ⊆ self` within `tol`.
    pub fn contains_box(&self, other: &BoxSet, tol: f64) -> bool {
        other.is_empty()
            || (0..self.dim()).all(|i| {
                other.lower[i] >= self.lower[i] - tol && other.upper[i] <= self.upper[i] + tol
            })
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    pub fn project(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
    }

    /// Project a step-major stack of vectors, each of this box's dimension.
    pub fn project_repeated(&self, x: &mut [f64], dim: usize) {
        for chunk in x.chunks_mut(dim) {
            self.project(chunk);
        }
    }

    /// Largest per-axis distance outside the box (0 inside).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| (l - v).max(v - u).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Box translated by `-c`.
    pub fn shifted(&self, c: &[f64]) -> BoxSet {
        BoxSet {
            lower: self.lower.iter().zip(c).map(|(l, c)| l - c).collect(),
            upper: self.upper.iter().zip(c).map(|(u, c)| u - c).collect(),
        }
    }

    /// Vertex `k` (bit `i` of `k` selects the upper bound on axis `i`).
    pub fn vertex(&self, k: usize) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                if (k >> i) & 1 == 1 {
                    self.upper[i]
                } else {
                    self.lower[i]
                }
            })
            .collect()
    }

    pub fn vertices(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..1usize << self.dim()).map(move |k| self.vertex(k))
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| if l < u { rng.gen_range(*l..=*u) } else { *l })
            .collect()
    }
}

/// Discrete-time dynamics `x+ = f(x, u, w)`.
pub trait Dynamics: Send + Sync {
    fn eval(&self, x: &[f64], u: &[f64], w: &[f64], out: &mut [f64]);

    /// Jacobians of `f` with respect to `x` and `u` at `(x, u, w)`.
    ///
    /// The default is a central finite difference with step
    /// `1e-6 * (1 + |component|)`.
    fn jacobians(
        &self,
        x: &[f64],
        u: &[f64],
        w: &[f64],
        jx: &mut DMatrix<f64>,
        ju: &mut DMatrix<f64>,
    ) {
        fd_jacobians(self, x, u, w, jx, ju);
    }
}

pub fn fd_jacobians<D: Dynamics + ?Sized>(
    dynamics: &D,
    x: &[f64],
    u: &[f64],
    w: &[f64],
    jx: &mut DMatrix<f64>,
    ju: &mut DMatrix<f64>,
) {
    let n = x.len();
    let mut xp = x.to_vec();
    let mut up = u.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for a in 0..n {
        let h = 1e-6 * (1.0 + x[a].abs());
        xp[a] = x[a] + h;
        dynamics.eval(&xp, u, w, &mut fp);
        xp[a] = x[a] - h;
        dynamics.eval(&xp, u, w, &mut fm);
        xp[a] = x[a];
        for i in 0..n {
            jx[(i, a)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    for b in 0..u.len() {
        let h = 1e-6 * (1.0 + u[b].abs());
        up[b] = u[b] + h;
        dynamics.eval(x, &up, w, &mut fp);
        up[b] = u[b] - h;
        dynamics.eval(x, &up, w, &mut fm);
        up[b] = u[b];
        for i in 0..n {
            ju[(i, b)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
}

/// Tolerance on `f(x_ref, u_ref, 0) = x_ref`.
pub const EQUILIBRIUM_TOL: f64 = 1e-10;

/// A perturbed plant together with its constraint sets and Lipschitz data.
///
/// Immutable after construction; clone is cheap (the dynamics are shared).
#[derive(Clone)]
pub struct PlantModel {
    pub name: String,
    dynamics: Arc<dyn Dynamics>,
    pub state_box: BoxSet,
    pub input_box: BoxSet,
    pub dist_box: BoxSet,
    pub lx: DMatrix<f64>,
    pub lu: DMatrix<f64>,
    pub lw: DMatrix<f64>,
    pub x_ref: DVector<f64>,
    pub u_ref: DVector<f64>,
}

impl fmt::Debug for PlantModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlantModel")
            .field("name", &self.name)
            .field("n", &self.n())
            .field("m", &self.m())
            .field("r", &self.r())
            .field("state_box", &self.state_box)
            .field("input_box", &self.input_box)
            .field("dist_box", &self.dist_box)
            .finish_non_exhaustive()
    }
}

/// Everything except the dynamics, used by [`PlantModel::new`].
#[derive(Debug, Clone)]
pub struct PlantData {
    pub name: String,
    pub state_box: BoxSet,
    pub input_box: BoxSet,
    pub dist_box: BoxSet,
    pub lx: DMatrix<f64>,
    pub lu: DMatrix<f64>,
    pub lw: DMatrix<f64>,
    pub x_ref: DVector<f64>,
    pub u_ref: DVector<f64>,
}

impl PlantModel {
    pub fn new(dynamics: Arc<dyn Dynamics>, data: PlantData) -> Result<Self> {
        let n = data.state_box.dim();
        let m = data.input_box.dim();
        let r = data.dist_box.dim();
        check_len("x_ref", data.x_ref.len(), n)?;
        check_len("u_ref", data.u_ref.len(), m)?;
        for (what, mat, cols) in [("L_x", &data.lx, n), ("L_u", &data.lu, m), ("L_w", &data.lw, r)]
        {
            if mat.nrows() != n || mat.ncols() != cols {
                return Err(Error::InvalidModel(format!(
                    "{what} is {}x{}, expected {n}x{cols}",
                    mat.nrows(),
                    mat.ncols()
                )));
            }
            if mat.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidModel(format!(
                    "{what} entries must be finite and non-negative"
                )));
            }
        }
        for (what, b) in [("state", &data.state_box), ("input", &data.input_box)] {
            if b.is_empty() {
                return Err(Error::InvalidModel(format!("{what} box is empty")));
            }
        }
        if !data.dist_box.is_origin_symmetric(0.0) || data.dist_box.is_empty() {
            return Err(Error::InvalidModel(
                "disturbance box must be origin-symmetric".into(),
            ));
        }
        let model = Self {
            name: data.name,
            dynamics,
            state_box: data.state_box,
            input_box: data.input_box,
            dist_box: data.dist_box,
            lx: data.lx,
            lu: data.lu,
            lw: data.lw,
            x_ref: data.x_ref,
            u_ref: data.u_ref,
        };
        let residual = model.equilibrium_residual();
        if residual > EQUILIBRIUM_TOL {
            return Err(Error::InvalidModel(format!(
                "(x_ref, u_ref) is not an equilibrium: residual {residual:e}"
            )));
        }
        Ok(model)
    }

    pub fn n(&self) -> usize {
        self.state_box.dim()
    }

    pub fn m(&self) -> usize {
        self.input_box.dim()
    }

    pub fn r(&self) -> usize {
        self.dist_box.dim()
    }

    /// Half-widths `w̄` of the disturbance box.
    pub fn dist_bound(&self) -> &[f64] {
        &self.dist_box.upper
    }

    pub fn dynamics(&self) -> &dyn Dynamics {
        self.dynamics.as_ref()
    }

    /// `x+ = f(x, u, w)` with dimension checks.
    pub fn step(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        check_len("x", x.len(), self.n())?;
        check_len("u", u.len(), self.m())?;
        check_len("w", w.len(), self.r())?;
        let mut out = vec![0.0; self.n()];
        self.dynamics.eval(x, u, w, &mut out);
        Ok(out)
    }

    /// Unchecked evaluation into a caller buffer, for inner loops.
    #[inline]
    pub fn step_into(&self, x: &[f64], u: &[f64], w: &[f64], out: &mut [f64]) {
        self.dynamics.eval(x, u, w, out);
    }

    pub fn jacobians(
        &self,
        x: &[f64],
        u: &[f64],
        w: &[f64],
        jx: &mut DMatrix<f64>,
        ju: &mut DMatrix<f64>,
    ) {
        self.dynamics.jacobians(x, u, w, jx, ju);
    }

    pub fn zero_disturbance(&self) -> Vec<f64> {
        vec![0.0; self.r()]
    }

    /// `max_i |f_i(x_ref, u_ref, 0) - x_ref_i|`.
    pub fn equilibrium_residual(&self) -> f64 {
        let mut out = vec![0.0; self.n()];
        self.dynamics.eval(
            self.x_ref.as_slice(),
            self.u_ref.as_slice(),
            &self.zero_disturbance(),
            &mut out,
        );
        out.iter()
            .zip(self.x_ref.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Same plant with a different disturbance half-width.
    pub fn with_dist_bound(&self, half_widths: &[f64]) -> Result<Self> {
        check_len("disturbance bound", half_widths.len(), self.r())?;
        if half_widths.iter().any(|h| !(h.is_finite() && *h >= 0.0)) {
            return Err(Error::InvalidModel(
                "disturbance half-widths must be finite and non-negative".into(),
            ));
        }
        let mut out = self.clone();
        out.dist_box = BoxSet::symmetric(half_widths);
        Ok(out)
    }
}

/// Result of the sampled component-wise Lipschitz audit.
#[derive(Debug, Clone, Serialize)]
pub struct LipschitzAudit {
    pub samples: usize,
    pub violations: usize,
    /// Largest `|f_i(a) - f_i(b)| - bound_i` seen (negative when all pass).
    pub worst_excess: f64,
}

/// Check the component-wise Lipschitz inequality on random pairs drawn from
/// `X x U x W`.
pub fn audit_lipschitz(model: &PlantModel, samples: usize, seed: u64) -> LipschitzAudit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m, r) = (model.n(), model.m(), model.r());
    let mut fa = vec![0.0; n];
    let mut fb = vec![0.0; n];
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let xa = model.state_box.sample(&mut rng);
        let xb = model.state_box.sample(&mut rng);
        let ua = model.input_box.sample(&mut rng);
        let ub = model.input_box.sample(&mut rng);
        let wa = model.dist_box.sample(&mut rng);
        let wb = model.dist_box.sample(&mut rng);
        model.step_into(&xa, &ua, &wa, &mut fa);
        model.step_into(&xb, &ub, &wb, &mut fb);
        for i in 0..n {
            let mut bound = 0.0;
            for a in 0..n {
                bound += model.lx[(i, a)] * (xa[a] - xb[a]).abs();
            }
            for b in 0..m {
                bound += model.lu[(i, b)] * (ua[b] - ub[b]).abs();
            }
            for c in 0..r {
                bound += model.lw[(i, c)] * (wa[c] - wb[c]).abs();
            }
            let excess = (fa[i] - fb[i]).abs() - bound;
            worst = worst.max(excess);
            if excess > 1e-12 * (1.0 + bound) {
                violations += 1;
            }
        }
    }
    LipschitzAudit {
        samples,
        violations,
        worst_excess: worst,
    }
}
