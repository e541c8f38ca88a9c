//! Contraction certificates: Γ_max, ω, grid estimation of the contraction
//! factor γ and the smallest horizon achieving `γ ≤ ω / Γ_max`.

use log::{debug, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::serde_matrix;
use crate::model::{BoxSet, PlantModel};
use crate::ocp::{solve, Objective, OcpProblem, SolverBudget};
use crate::sets::{
    certify_shrink, certify_sublevel_in_box, ellipsoid_pontryagin_shrink, max_quadratic_on_box,
    max_sublevel_in_box, pontryagin_diff_box, ContainmentReport, QuadraticForm,
};
use crate::terminal::{verify_robust_invariance, InvarianceReport, Region};
use crate::tightening::{max_feasible_horizon, TighteningSequences};

/// States with `Γ(x)` below this are skipped when estimating γ.
pub const GAMMA_FLOOR: f64 = 1e-9;

/// Uniform lattice over the state box, endpoints included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub per_axis: usize,
    /// Seeds the random starts of the per-point solves.
    pub seed: u64,
}

impl GridSpec {
    pub fn new(per_axis: usize, seed: u64) -> Self {
        Self { per_axis, seed }
    }

    pub fn points(&self, bx: &BoxSet) -> Vec<Vec<f64>> {
        let d = bx.dim();
        let k = self.per_axis.max(1);
        let axis: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                if k == 1 {
                    vec![0.5 * (bx.lower[i] + bx.upper[i])]
                } else {
                    (0..k)
                        .map(|t| bx.lower[i] + (bx.upper[i] - bx.lower[i]) * t as f64 / (k - 1) as f64)
                        .collect()
                }
            })
            .collect();
        let total = k.pow(d as u32);
        (0..total)
            .map(|mut idx| {
                let mut x = vec![0.0; d];
                for i in (0..d).rev() {
                    x[i] = axis[i][idx % k];
                    idx /= k;
                }
                x
            })
            .collect()
    }
}

/// Result of one grid estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaEstimate {
    pub horizon: usize,
    pub gamma: f64,
    /// Grid index attaining the maximum ratio.
    pub worst_point: Option<usize>,
    pub evaluated: usize,
    pub skipped: usize,
    /// Points whose solve failed and were counted as ratio 1.
    pub failures: usize,
}

struct PointResult {
    ratio: f64,
    failed: bool,
    u: Option<Vec<f64>>,
}

fn solve_point(
    model: &PlantModel,
    form: &QuadraticForm,
    x: &[f64],
    horizon: usize,
    warm: Option<&Vec<f64>>,
    budget: &SolverBudget,
) -> PointResult {
    let g0 = form.eval(x);
    if g0 < GAMMA_FLOOR {
        return PointResult {
            ratio: f64::NAN,
            failed: false,
            u: None,
        };
    }
    let mut prob = OcpProblem::new(model, form, x, horizon, Objective::GammaAt(horizon));
    if let Some(w) = warm {
        prob = prob.with_warm_start(w.clone());
    }
    match solve(&prob, budget) {
        Ok(s) if s.cost.is_finite() => {
            let ratio = s.gamma_profile[horizon - 1] / g0;
            if ratio > 1.0 + 1e-9 {
                // u could have been anything; a ratio above one means the solver failed
                debug!("ratio {ratio} above one at {x:?}, counted as failure");
                return PointResult {
                    ratio: 1.0,
                    failed: true,
                    u: Some(s.u_flat()),
                };
            }
            PointResult {
                ratio,
                failed: false,
                u: Some(s.u_flat()),
            }
        }
        other => {
            warn!("contraction solve failed at {x:?}: {:?}", other.err());
            PointResult {
                ratio: 1.0,
                failed: true,
                u: None,
            }
        }
    }
}

fn reduce(horizon: usize, results: &[PointResult]) -> GammaEstimate {
    let mut est = GammaEstimate {
        horizon,
        gamma: 0.0,
        worst_point: None,
        evaluated: 0,
        skipped: 0,
        failures: 0,
    };
    for (i, r) in results.iter().enumerate() {
        if r.ratio.is_nan() {
            est.skipped += 1;
            continue;
        }
        est.evaluated += 1;
        est.failures += r.failed as usize;
        if est.worst_point.is_none() || r.ratio > est.gamma {
            est.gamma = r.ratio;
            est.worst_point = Some(i);
        }
    }
    est
}

fn estimate_on_points(
    model: &PlantModel,
    form: &QuadraticForm,
    horizon: usize,
    points: &[Vec<f64>],
    warm: &[Option<Vec<f64>>],
    budget: &SolverBudget,
) -> Vec<PointResult> {
    points
        .par_iter()
        .zip(warm.par_iter())
        .map(|(x, w)| solve_point(model, form, x, horizon, w.as_ref(), budget))
        .collect()
}

/// `γ(N̂) = max_x Γ(x̂(N̂)) / Γ(x)` over the grid on X, with states
/// unconstrained and inputs in U.
pub fn estimate_gamma(
    model: &PlantModel,
    form: &QuadraticForm,
    n_hat: usize,
    grid: &GridSpec,
    budget: &SolverBudget,
) -> Result<GammaEstimate> {
    check_len("Γ shape", form.dim(), model.n())?;
    if n_hat == 0 {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    let points = grid.points(&model.state_box);
    let warm = vec![None; points.len()];
    let budget = SolverBudget {
        seed: grid.seed,
        ..*budget
    };
    let results = estimate_on_points(model, form, n_hat, &points, &warm, &budget);
    Ok(reduce(n_hat, &results))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonSelection {
    pub n_p: usize,
    pub gamma: f64,
    /// One entry per horizon tried, ascending.
    pub table: Vec<GammaEstimate>,
}

/// Smallest `N̂ ∈ [1, n_max]` with `γ(N̂) < bound`, scanning upward and warm
/// starting every point from its solution at the previous horizon (padded
/// with `u_ref`).
pub fn select_min_horizon(
    model: &PlantModel,
    form: &QuadraticForm,
    n_max: usize,
    bound: f64,
    grid: &GridSpec,
    budget: &SolverBudget,
) -> Result<HorizonSelection> {
    check_len("Γ shape", form.dim(), model.n())?;
    let points = grid.points(&model.state_box);
    let budget = SolverBudget {
        seed: grid.seed,
        ..*budget
    };
    let mut warm: Vec<Option<Vec<f64>>> = vec![None; points.len()];
    let mut table = Vec::new();
    for n_hat in 1..=n_max {
        let results = estimate_on_points(model, form, n_hat, &points, &warm, &budget);
        let est = reduce(n_hat, &results);
        debug!("γ({n_hat}) = {:.6} ({} failures)", est.gamma, est.failures);
        for (w, r) in warm.iter_mut().zip(&results) {
            *w = r.u.clone().map(|mut u| {
                u.extend_from_slice(model.u_ref.as_slice());
                u
            });
        }
        let done = est.gamma < bound;
        let gamma = est.gamma;
        table.push(est);
        if done {
            return Ok(HorizonSelection {
                n_p: n_hat,
                gamma,
                table,
            });
        }
    }
    Err(Error::CertificateUnavailable {
        max_horizon: n_max,
        bound,
        best: table.iter().map(|e| e.gamma).fold(f64::INFINITY, f64::min),
    })
}

/// Options for [`build_certificate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CertifyOptions {
    /// Cap on the horizon scan, on top of the tightening limit.
    pub max_horizon: Option<usize>,
    /// Use this ω instead of the computed one; must not exceed it.
    pub omega_override: Option<f64>,
    pub containment_samples: usize,
    pub invariance_samples: usize,
    pub seed: u64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            max_horizon: None,
            omega_override: None,
            containment_samples: 10_000,
            invariance_samples: 10_000,
            seed: 0,
        }
    }
}

/// Everything the controller needs to run, plus the evidence behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionCertificate {
    pub plant: String,
    #[serde(with = "serde_matrix")]
    pub p_gamma: DMatrix<f64>,
    pub center: Vec<f64>,
    pub gamma: f64,
    pub n_p: usize,
    /// ω actually used.
    pub omega: f64,
    pub omega_computed: f64,
    pub gamma_max: f64,
    /// True if Γ_max came from sampling instead of vertex enumeration.
    pub gamma_max_sampled: bool,
    pub omega_bound: f64,
    pub rcis: Region,
    pub grid: GridSpec,
    pub budget: SolverBudget,
    pub max_feasible_horizon: usize,
    pub gamma_table: Vec<GammaEstimate>,
    pub containment: ContainmentReport,
    pub invariance: InvarianceReport,
    pub tightening: TighteningSequences,
}

impl ContractionCertificate {
    pub fn gamma_form(&self) -> Result<QuadraticForm> {
        QuadraticForm::new(self.p_gamma.clone(), self.center.clone())
    }

    /// Re-check the internal consistency conditions.
    pub fn validate(&self, model: &PlantModel) -> Result<()> {
        check_len("certificate P_Γ", self.p_gamma.nrows(), model.n())?;
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig(format!("γ = {} outside [0, 1)", self.gamma)));
        }
        if self.gamma > self.omega_bound {
            return Err(Error::InvalidConfig(format!(
                "γ = {} exceeds ω / Γ_max = {}",
                self.gamma, self.omega_bound
            )));
        }
        if self.n_p == 0 || self.n_p > self.max_feasible_horizon || self.n_p > self.tightening.horizon {
            return Err(Error::InvalidConfig(format!("N_p = {} not admissible", self.n_p)));
        }
        self.gamma_form().map(|_| ())
    }
}

/// Ω ⊖ R(1) with a check that it is non-empty.
fn rcis_margin(rcis: &Region, r1: &BoxSet) -> Result<Option<BoxSet>> {
    match rcis {
        Region::Box(b) => {
            let shrunk = pontryagin_diff_box(b, r1);
            if shrunk.is_empty() {
                return Err(Error::Rcis("Ω ⊖ R(1) is empty".into()));
            }
            Ok(Some(shrunk))
        }
        Region::Ellipsoid(_) => Ok(None),
    }
}

/// Assemble and validate a certificate for `Γ(x) = (x - c)^T P_Γ (x - c)`.
pub fn build_certificate(
    model: &PlantModel,
    form: &QuadraticForm,
    rcis: &Region,
    seq: &TighteningSequences,
    grid: &GridSpec,
    budget: &SolverBudget,
    opts: &CertifyOptions,
) -> Result<ContractionCertificate> {
    check_len("Γ shape", form.dim(), model.n())?;
    check_len("Ω", rcis.dim(), model.n())?;
    if seq.horizon < 1 {
        return Err(Error::InvalidConfig("tightening horizon must be at least 1".into()));
    }
    let n_feasible = max_feasible_horizon(model, seq)?;
    let r1 = seq.r_box(1);

    // ω from Ω ⊖ R(1)
    let shrunk = rcis_margin(rcis, &r1)?;
    let (omega_computed, containment) = match (rcis, &shrunk) {
        (Region::Box(_), Some(b)) => {
            let local = BoxSet::new(
                b.lower.iter().zip(&form.center).map(|(l, c)| l - c).collect(),
                b.upper.iter().zip(&form.center).map(|(u, c)| u - c).collect(),
            )?;
            let omega = max_sublevel_in_box(&form.shape, &local)?;
            let rep = certify_sublevel_in_box(form, omega, b, opts.containment_samples, opts.seed, 1e-9);
            (omega, rep)
        }
        (Region::Ellipsoid(e), _) => {
            if e.form != *form {
                return Err(Error::InvalidConfig(
                    "an ellipsoidal Ω must share its shape and center with Γ".into(),
                ));
            }
            let omega = ellipsoid_pontryagin_shrink(e, &r1)?;
            if omega <= 0.0 {
                return Err(Error::Rcis("Ω ⊖ R(1) contains no Γ-sublevel set".into()));
            }
            let rep = certify_shrink(form, omega, e, &r1, opts.containment_samples, opts.seed, 1e-9);
            (omega, rep)
        }
        _ => unreachable!("box regions always produce a margin box"),
    };
    if !containment.passed() {
        return Err(Error::Rcis(format!(
            "sampled containment of {{Γ <= ω}} in Ω ⊖ R(1) failed at {} of {} samples",
            containment.failures, containment.samples
        )));
    }
    let omega = match opts.omega_override {
        Some(o) if o > omega_computed * (1.0 + 1e-12) => {
            return Err(Error::InvalidConfig(format!(
                "ω override {o} exceeds the computed ω = {omega_computed}"
            )))
        }
        Some(o) if o <= 0.0 => return Err(Error::InvalidConfig("ω override must be positive".into())),
        Some(o) => o,
        None => omega_computed,
    };

    let invariance = verify_robust_invariance(model, rcis, opts.invariance_samples, opts.seed)?;
    if !invariance.passed() {
        return Err(Error::Rcis(format!(
            "Ω is not robustly invariant at {} of {} samples (worst residual {:.3e})",
            invariance.failures, invariance.samples, invariance.worst_residual
        )));
    }

    let gmax = max_quadratic_on_box(form, &model.state_box)?;
    let omega_bound = omega / gmax.value;
    let cap = opts.max_horizon.unwrap_or(n_feasible).min(n_feasible);
    let sel = select_min_horizon(model, form, cap, omega_bound, grid, budget)?;

    let cert = ContractionCertificate {
        plant: model.name.clone(),
        p_gamma: form.shape.clone(),
        center: form.center.clone(),
        gamma: sel.gamma,
        n_p: sel.n_p,
        omega,
        omega_computed,
        gamma_max: gmax.value,
        gamma_max_sampled: gmax.sampled,
        omega_bound,
        rcis: rcis.clone(),
        grid: grid.clone(),
        budget: *budget,
        max_feasible_horizon: n_feasible,
        gamma_table: sel.table,
        containment,
        invariance,
        tightening: seq.clone(),
    };
    cert.validate(model)?;
    Ok(cert)
}
