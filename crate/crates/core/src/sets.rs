//! Box and ellipsoid set arithmetic.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{check_spd, quad_form, serde_matrix};
use crate::model::BoxSet;

/// Symmetry tolerance used when validating quadratic shapes.
pub const SYM_TOL: f64 = 1e-10;

/// Largest dimension handled by exact vertex enumeration.
pub const MAX_VERTEX_DIM: usize = 20;

/// `x -> (x - center)^T shape (x - center)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticForm {
    #[serde(with = "serde_matrix")]
    pub shape: DMatrix<f64>,
    pub center: Vec<f64>,
}

impl QuadraticForm {
    pub fn new(shape: DMatrix<f64>, center: Vec<f64>) -> Result<Self> {
        check_len("quadratic form center", center.len(), shape.nrows())?;
        check_spd(&shape, SYM_TOL, "quadratic form shape")?;
        Ok(Self { shape, center })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        quad_form(&self.shape, x, &self.center)
    }

    /// Gradient `2 shape (x - center)` written into `out`.
    pub fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        for (i, o) in out.iter_mut().enumerate().take(n) {
            let mut acc = 0.0;
            for j in 0..n {
                acc += (self.shape[(i, j)] + self.shape[(j, i)]) * (x[j] - self.center[j]);
            }
            *o = acc;
        }
    }
}

/// `{x : (x - center)^T shape (x - center) <= level}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    #[serde(flatten)]
    pub form: QuadraticForm,
    pub level: f64,
}

impl Ellipsoid {
    pub fn new(shape: DMatrix<f64>, center: Vec<f64>, level: f64) -> Result<Self> {
        if !(level.is_finite() && level > 0.0) {
            return Err(Error::InvalidModel(format!("ellipsoid level {level} must be > 0")));
        }
        Ok(Self {
            form: QuadraticForm::new(shape, center)?,
            level,
        })
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.form.eval(x) <= self.level + tol
    }

    /// Per-axis half-widths of the bounding box: `sqrt(level * (shape^-1)_ii)`.
    pub fn half_widths(&self) -> Vec<f64> {
        let inv = spd_inverse(&self.form.shape);
        (0..self.form.dim())
            .map(|i| (self.level * inv[(i, i)]).sqrt())
            .collect()
    }

    pub fn bounding_box(&self) -> BoxSet {
        let h = self.half_widths();
        BoxSet {
            lower: self.form.center.iter().zip(&h).map(|(c, h)| c - h).collect(),
            upper: self.form.center.iter().zip(&h).map(|(c, h)| c + h).collect(),
        }
    }

    /// Point on the boundary along direction `z` (any non-zero vector).
    pub fn boundary_point(&self, chol_l: &DMatrix<f64>, z: &[f64]) -> Vec<f64> {
        boundary_point(&self.form.center, self.level, chol_l, z)
    }
}

pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .unwrap_or_else(|| m.clone().try_inverse().expect("SPD matrix is invertible"))
}

/// Lower Cholesky factor `L` of an SPD matrix (`P = L L^T`).
pub(crate) fn cholesky_l(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().cholesky().expect("SPD matrix has a Cholesky factor").l()
}

/// `center + sqrt(level) L^{-T} z / |z|`, which lies on `{x^T P x = level}`.
pub(crate) fn boundary_point(
    center: &[f64],
    level: f64,
    chol_l: &DMatrix<f64>,
    z: &[f64],
) -> Vec<f64> {
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let zn = DVector::from_iterator(z.len(), z.iter().map(|v| v / norm));
    let y = chol_l
        .transpose()
        .solve_upper_triangular(&zn)
        .expect("Cholesky factor is non-singular");
    center
        .iter()
        .zip(y.iter())
        .map(|(c, y)| c + level.sqrt() * y)
        .collect()
}

/// `a ⊖ b`: the points whose sum with every element of `b` stays in `a`.
pub fn pontryagin_diff_box(a: &BoxSet, b: &BoxSet) -> BoxSet {
    assert_eq!(a.dim(), b.dim(), "box dimensions differ");
    BoxSet {
        lower: a.lower.iter().zip(&b.lower).map(|(a, b)| a - b).collect(),
        upper: a.upper.iter().zip(&b.upper).map(|(a, b)| a - b).collect(),
    }
}

pub fn minkowski_sum_box(a: &BoxSet, b: &BoxSet) -> BoxSet {
    assert_eq!(a.dim(), b.dim(), "box dimensions differ");
    BoxSet {
        lower: a.lower.iter().zip(&b.lower).map(|(a, b)| a + b).collect(),
        upper: a.upper.iter().zip(&b.upper).map(|(a, b)| a + b).collect(),
    }
}

/// Largest `ω` with `{x : x^T shape x <= ω} ⊆ bx`.
///
/// Returns 0 when the origin is not strictly inside `bx`.
pub fn max_sublevel_in_box(shape: &DMatrix<f64>, bx: &BoxSet) -> Result<f64> {
    check_len("box", bx.dim(), shape.nrows())?;
    check_spd(shape, SYM_TOL, "sublevel shape")?;
    if bx.is_empty() || !bx.contains_strictly(&vec![0.0; bx.dim()]) {
        return Ok(0.0);
    }
    let inv = spd_inverse(shape);
    Ok((0..bx.dim())
        .map(|i| {
            let b = (-bx.lower[i]).min(bx.upper[i]);
            b * b / inv[(i, i)]
        })
        .fold(f64::INFINITY, f64::min))
}

/// Maximum of a convex quadratic over a box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxMaximum {
    pub value: f64,
    /// True when the dimension exceeded [`MAX_VERTEX_DIM`] and the value is a
    /// sampled lower bound rather than the exact maximum.
    pub sampled: bool,
}

pub fn max_quadratic_on_box(form: &QuadraticForm, bx: &BoxSet) -> Result<BoxMaximum> {
    check_len("box", bx.dim(), form.dim())?;
    if bx.is_empty() {
        return Err(Error::InvalidModel("maximum over an empty box".into()));
    }
    if bx.dim() <= MAX_VERTEX_DIM {
        let value = bx
            .vertices()
            .map(|v| form.eval(&v))
            .fold(f64::NEG_INFINITY, f64::max);
        return Ok(BoxMaximum {
            value,
            sampled: false,
        });
    }
    log::warn!(
        "box dimension {} exceeds {MAX_VERTEX_DIM}; falling back to sampled vertices",
        bx.dim()
    );
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut value = f64::NEG_INFINITY;
    for _ in 0..1 << 16 {
        let v: Vec<f64> = (0..bx.dim())
            .map(|i| if rng.gen::<bool>() { bx.upper[i] } else { bx.lower[i] })
            .collect();
        value = value.max(form.eval(&v));
    }
    Ok(BoxMaximum {
        value,
        sampled: true,
    })
}

/// Largest `ω <= e.level` such that `{Γ <= ω} ⊕ b ⊆ e`.
///
/// Uses the triangle inequality in the `shape` norm:
/// `ω = (sqrt(level) - ρ)^2` with `ρ = max_v sqrt(v^T shape v)` over the
/// vertices of `b`.
pub fn ellipsoid_pontryagin_shrink(e: &Ellipsoid, b: &BoxSet) -> Result<f64> {
    check_len("box", b.dim(), e.form.dim())?;
    let zero = vec![0.0; b.dim()];
    let rho = b
        .vertices()
        .map(|v| quad_form(&e.form.shape, &v, &zero).sqrt())
        .fold(0.0, f64::max);
    let s = e.level.sqrt();
    Ok(if rho >= s { 0.0 } else { (s - rho).powi(2) })
}

/// Deterministic points on the boundary of `{form <= level}`.
pub fn sample_boundary(form: &QuadraticForm, level: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let l = cholesky_l(&form.shape);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let z = gaussian_vec(&mut rng, form.dim());
            boundary_point(&form.center, level, &l, &z)
        })
        .collect()
}

pub(crate) fn gaussian_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| inverse_normal(rng.gen_range(f64::EPSILON..1.0)))
        .collect()
}

pub(crate) fn inverse_normal(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().inverse_cdf(p)
}

/// Outcome of a sampled containment certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainmentReport {
    pub samples: usize,
    pub failures: usize,
    /// Worst violation found (0 when all samples pass).
    pub worst: f64,
}

impl ContainmentReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Sample the boundary of `{form <= level}` and check every point lies in
/// `bx` within `tol`.
pub fn certify_sublevel_in_box(
    form: &QuadraticForm,
    level: f64,
    bx: &BoxSet,
    samples: usize,
    seed: u64,
    tol: f64,
) -> ContainmentReport {
    let mut failures = 0;
    let mut worst = 0.0_f64;
    for x in sample_boundary(form, level, samples, seed) {
        let v = bx.max_violation(&x);
        if v > tol {
            failures += 1;
        }
        worst = worst.max(v);
    }
    ContainmentReport {
        samples,
        failures,
        worst,
    }
}

/// Sample the boundary of `{form <= level}` and check `x ⊕ b ⊆ e` through the
/// vertices of `b`.
pub fn certify_shrink(
    form: &QuadraticForm,
    level: f64,
    e: &Ellipsoid,
    b: &BoxSet,
    samples: usize,
    seed: u64,
    tol: f64,
) -> ContainmentReport {
    let verts: Vec<Vec<f64>> = b.vertices().collect();
    let mut failures = 0;
    let mut worst = 0.0_f64;
    let mut y = vec![0.0; form.dim()];
    for x in sample_boundary(form, level, samples, seed) {
        let mut excess = 0.0_f64;
        for v in &verts {
            for i in 0..y.len() {
                y[i] = x[i] + v[i];
            }
            excess = excess.max(e.form.eval(&y) - e.level);
        }
        if excess > tol {
            failures += 1;
        }
        worst = worst.max(excess);
    }
    ContainmentReport {
        samples,
        failures,
        worst,
    }
}
