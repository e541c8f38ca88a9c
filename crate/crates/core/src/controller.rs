//! The robust contraction-based MPC law: cost `V = θ J + ξ min_j Γ(x̂(j))`,
//! the θ state machine and the two solution schemes (two-stage and
//! enumeration over the horizon).

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contraction::ContractionCertificate;
use crate::error::{check_len, Error, Result};
use crate::linalg::{quad_form, serde_matrix};
use crate::model::{BoxSet, PlantModel};
use crate::ocp::{
    argmin_first, evaluate, solve, Objective, OcpProblem, OcpSolution, SolveStatus, SolverBudget,
    StageCost, TIE_TOL,
};
use crate::sets::QuadraticForm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    #[default]
    TwoStage,
    Enumerated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
enum AutoTag {
    #[default]
    Auto,
}

/// `ξ` as a number or `"auto"` (the smallest admissible value).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum XiSetting {
    Value(f64),
    #[default]
    #[serde(with = "auto_tag")]
    Auto,
}

mod auto_tag {
    use super::AutoTag;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        AutoTag::Auto.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        AutoTag::deserialize(d).map(|_| ())
    }
}

/// User-facing controller settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSettings {
    #[serde(with = "serde_matrix")]
    pub q: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub r: DMatrix<f64>,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub xi: XiSetting,
    #[serde(default)]
    pub formulation: Formulation,
    #[serde(default)]
    pub budget: SolverBudget,
}

fn default_nu() -> f64 {
    0.99
}

fn default_eps() -> f64 {
    1e-8
}

impl ControllerSettings {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Self {
        Self {
            q,
            r,
            nu: default_nu(),
            eps: default_eps(),
            xi: XiSetting::Auto,
            formulation: Formulation::TwoStage,
            budget: SolverBudget::default(),
        }
    }
}

/// `max ℓ` over `X × U` by vertex enumeration; the two terms are separable so
/// each box is enumerated on its own.
pub fn stage_cost_bound(
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    x_box: &BoxSet,
    u_box: &BoxSet,
    x_ref: &[f64],
    u_ref: &[f64],
) -> f64 {
    let xs = x_box.vertices().map(|v| quad_form(q, &v, x_ref)).fold(f64::NEG_INFINITY, f64::max);
    let us = u_box.vertices().map(|v| quad_form(r, &v, u_ref)).fold(f64::NEG_INFINITY, f64::max);
    xs + us
}

/// `2 N_p ℓ̄ / (1 - γ)`.
pub fn min_xi(n_p: usize, l_bar: f64, gamma: f64) -> f64 {
    2.0 * n_p as f64 * l_bar / (1.0 - gamma)
}

/// Validated controller configuration.
#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub stage: StageCost,
    pub l_bar: f64,
    pub xi: f64,
    pub nu: f64,
    pub eps: f64,
    pub formulation: Formulation,
    pub budget: SolverBudget,
    pub cert: ContractionCertificate,
    pub gamma: QuadraticForm,
    /// `X ⊖ R(j)` for `j = 0..=N_p`.
    pub state_boxes: Vec<BoxSet>,
}

impl ControllerConfig {
    pub fn new(model: &PlantModel, settings: &ControllerSettings, cert: ContractionCertificate) -> Result<Self> {
        cert.validate(model)?;
        let stage = StageCost::for_model(model, settings.q.clone(), settings.r.clone())?;
        if !(settings.nu > 0.0 && settings.nu < 1.0) {
            return Err(Error::InvalidConfig(format!("ν = {} must lie in (0, 1)", settings.nu)));
        }
        if !(settings.eps > 0.0 && settings.eps.is_finite()) {
            return Err(Error::InvalidConfig(format!("ε = {} must be positive", settings.eps)));
        }
        let l_bar = stage_cost_bound(
            &stage.q,
            &stage.r,
            &model.state_box,
            &model.input_box,
            &stage.x_ref,
            &stage.u_ref,
        );
        let bound = min_xi(cert.n_p, l_bar, cert.gamma);
        let xi = match settings.xi {
            XiSetting::Auto => bound,
            XiSetting::Value(v) if v >= bound => v,
            XiSetting::Value(v) => {
                return Err(Error::InvalidConfig(format!(
                    "ξ = {v} is below the stability bound 2 N_p ℓ̄ / (1 - γ) = {bound}"
                )))
            }
        };
        let gamma = cert.gamma_form()?;
        let state_boxes = cert.tightening.tightened_boxes(&model.state_box, cert.n_p);
        Ok(Self {
            stage,
            l_bar,
            xi,
            nu: settings.nu,
            eps: settings.eps,
            formulation: settings.formulation,
            budget: settings.budget,
            cert,
            gamma,
            state_boxes,
        })
    }

    pub fn n_p(&self) -> usize {
        self.cert.n_p
    }

    /// `((1 + γ) / 2) ξ Γ(x) + ε N_p ℓ̄`.
    pub fn value_upper_bound(&self, x: &[f64]) -> f64 {
        0.5 * (1.0 + self.cert.gamma) * self.xi * self.gamma.eval(x) + self.eps * self.n_p() as f64 * self.l_bar
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub theta: f64,
    pub k: usize,
    pub last_solution: Option<OcpSolution>,
}

/// `θ(0) = max{ε, ν Γ(x0)}`.
pub fn init_theta(cfg: &ControllerConfig, x0: &[f64]) -> ControllerState {
    ControllerState {
        theta: cfg.eps.max(cfg.nu * cfg.gamma.eval(x0)),
        k: 0,
        last_solution: None,
    }
}

/// `θ(k) = θ(k-1)` if `Γ(x) > θ(k-1)`, else `max{ε, ν Γ(x)}`.
pub fn theta_rule(theta_prev: f64, gamma_x: f64, nu: f64, eps: f64) -> f64 {
    if gamma_x > theta_prev {
        theta_prev
    } else {
        eps.max(nu * gamma_x)
    }
}

pub fn update_theta(state: &ControllerState, cfg: &ControllerConfig, x: &[f64]) -> ControllerState {
    ControllerState {
        theta: theta_rule(state.theta, cfg.gamma.eval(x), cfg.nu, cfg.eps),
        k: state.k + 1,
        last_solution: state.last_solution.clone(),
    }
}

/// What one controller solve produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub formulation: Formulation,
    pub theta: f64,
    /// Exact `V*`, re-evaluated from the returned trajectory.
    pub v_star: f64,
    /// Horizon of the returned sequence.
    pub q_star: usize,
    /// Smallest argmin of the returned Γ profile.
    pub j_star: usize,
    pub gamma_min: f64,
    pub tracking: f64,
    pub u_seq: Vec<Vec<f64>>,
    pub x_seq: Vec<Vec<f64>>,
    pub gamma_profile: Vec<f64>,
    /// Stage-1 contraction instant (two-stage only).
    pub stage1_j: Option<usize>,
    pub stage1_status: Option<SolveStatus>,
    pub status: SolveStatus,
    pub iterations: usize,
}

impl Diagnostics {
    fn from_solution(cfg: &ControllerConfig, theta: f64, s: &OcpSolution) -> Self {
        Self {
            formulation: cfg.formulation,
            theta,
            v_star: s.cost,
            q_star: s.horizon(),
            j_star: s.j_opt,
            gamma_min: s.gamma_min(),
            tracking: s.tracking,
            u_seq: s.u_seq.clone(),
            x_seq: s.x_seq.clone(),
            gamma_profile: s.gamma_profile.clone(),
            stage1_j: None,
            stage1_status: None,
            status: s.status,
            iterations: s.iterations,
        }
    }
}

/// The minimum of the returned Γ profile sits at its last index (ties within
/// [`TIE_TOL`] allowed).
pub fn verify_lemma1_identity(d: &Diagnostics) -> bool {
    match d.gamma_profile.last() {
        None => false,
        Some(last) => {
            let min = d.gamma_profile.iter().copied().fold(f64::INFINITY, f64::min);
            *last <= min + TIE_TOL
        }
    }
}

fn check_state(model: &PlantModel, cfg: &ControllerConfig, x: &[f64]) -> Result<()> {
    check_len("x", x.len(), model.n())?;
    if cfg.state_boxes[0].max_violation(x) > cfg.budget.feas_tol {
        return Err(Error::ControllerFault(format!("state {x:?} lies outside X")));
    }
    Ok(())
}

/// Shifted tail of the previous plan, cut or padded with `u_ref` to `len`
/// steps.
fn shifted_tail(model: &PlantModel, prev: Option<&OcpSolution>, len: usize) -> Vec<f64> {
    let m = model.m();
    let mut u: Vec<f64> = prev.map_or_else(Vec::new, |s| s.u_seq.iter().skip(1).flatten().copied().collect());
    u.truncate(len * m);
    while u.len() < len * m {
        u.extend_from_slice(model.u_ref.as_slice());
    }
    u
}

fn full_cost_problem<'a>(
    model: &'a PlantModel,
    cfg: &'a ControllerConfig,
    theta: f64,
    x: &[f64],
    q: usize,
) -> OcpProblem<'a> {
    OcpProblem::new(model, &cfg.gamma, x, q, Objective::FullCost { theta, xi: cfg.xi })
        .with_stage(&cfg.stage)
        .with_state_boxes(cfg.state_boxes[..=q].to_vec())
}

/// Stage 1 finds the best contraction instant `j_Np` over `N_p` steps, stage 2
/// minimizes the full cost on horizon `j_Np` from the truncated stage-1 plan.
pub fn solve_two_stage(
    model: &PlantModel,
    cfg: &ControllerConfig,
    state: &ControllerState,
    x: &[f64],
) -> Result<(Vec<f64>, Diagnostics)> {
    check_state(model, cfg, x)?;
    let n_p = cfg.n_p();
    let warm = shifted_tail(model, state.last_solution.as_ref(), n_p);
    let stage1 = OcpProblem::new(model, &cfg.gamma, x, n_p, Objective::MinGammaOverHorizon)
        .with_state_boxes(cfg.state_boxes.clone())
        .with_warm_start(warm);
    let s1 = solve(&stage1, &cfg.budget)?;
    if !s1.is_feasible() {
        return Err(Error::ControllerFault(format!(
            "stage 1 infeasible at {x:?} (violation {:.3e})",
            s1.max_violation
        )));
    }
    let j = s1.j_opt;
    let m = model.m();
    let truncated = s1.u_flat()[..j * m].to_vec();
    let stage2 = full_cost_problem(model, cfg, state.theta, x, j).with_warm_start(truncated);
    let s2 = solve(&stage2, &cfg.budget)?;
    if !s2.is_feasible() {
        return Err(Error::ControllerFault("stage 2 lost feasibility".into()));
    }
    let mut d = Diagnostics::from_solution(cfg, state.theta, &s2);
    d.stage1_j = Some(j);
    d.stage1_status = Some(s1.status);
    d.iterations += s1.iterations;
    Ok((s2.u_seq[0].clone(), d))
}

/// Solve one full-cost problem per `q ∈ [1, N_p]` and keep the cheapest
/// (smallest `q` among ties). The two-stage plan joins the candidates, and
/// every candidate is also truncated at its own Γ argmin, which can only lower
/// the cost.
pub fn solve_enumerated(
    model: &PlantModel,
    cfg: &ControllerConfig,
    state: &ControllerState,
    x: &[f64],
) -> Result<(Vec<f64>, Diagnostics)> {
    check_state(model, cfg, x)?;
    let n_p = cfg.n_p();
    let prev = state.last_solution.as_ref();
    let per_q: Vec<Result<OcpSolution>> = (1..=n_p)
        .into_par_iter()
        .map(|q| {
            let prob = full_cost_problem(model, cfg, state.theta, x, q).with_warm_start(shifted_tail(model, prev, q));
            solve(&prob, &cfg.budget)
        })
        .collect();
    let mut best: Option<OcpSolution> = None;
    let mut iterations = 0;
    let mut consider = |cand: OcpSolution| {
        if !cand.is_feasible() {
            return;
        }
        let take = match &best {
            None => true,
            Some(b) => {
                cand.cost < b.cost - TIE_TOL || (cand.cost <= b.cost + TIE_TOL && cand.horizon() < b.horizon())
            }
        };
        if take {
            best = Some(cand);
        }
    };
    let mut candidates = Vec::with_capacity(n_p + 1);
    for s in per_q {
        let s = s?;
        iterations += s.iterations;
        candidates.push(s);
    }
    // the two-stage plan is itself an admissible (u, q) pair; including it
    // keeps the enumeration from ending in a worse local minimum
    if let Ok((_, d)) = solve_two_stage(model, cfg, state, x) {
        let prob = full_cost_problem(model, cfg, state.theta, x, d.q_star);
        candidates.push(evaluate(&prob, &d.u_seq.concat(), cfg.budget.feas_tol)?);
    }
    for s in candidates {
        let j = s.j_opt;
        if j < s.horizon() {
            let prob = full_cost_problem(model, cfg, state.theta, x, j);
            let mut t = evaluate(&prob, &s.u_flat()[..j * model.m()], cfg.budget.feas_tol)?;
            t.start = s.start;
            consider(t);
        }
        consider(s);
    }
    let best = best.ok_or_else(|| Error::ControllerFault(format!("no feasible horizon at {x:?}")))?;
    let mut d = Diagnostics::from_solution(cfg, state.theta, &best);
    d.iterations = iterations;
    Ok((best.u_seq[0].clone(), d))
}

/// A controller owning its configuration and internal state.
#[derive(Debug, Clone)]
pub struct Controller {
    model: PlantModel,
    cfg: ControllerConfig,
    state: Option<ControllerState>,
}

impl Controller {
    pub fn new(model: PlantModel, cfg: ControllerConfig) -> Self {
        Self {
            model,
            cfg,
            state: None,
        }
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn model(&self) -> &PlantModel {
        &self.model
    }

    pub fn state(&self) -> Option<&ControllerState> {
        self.state.as_ref()
    }

    pub fn reset(&mut self) {
        self.state = None;
    }

    /// Update θ, solve and return the input to apply.
    pub fn step(&mut self, x: &[f64]) -> Result<(Vec<f64>, Diagnostics)> {
        check_len("x", x.len(), self.model.n())?;
        let state = match &self.state {
            None => init_theta(&self.cfg, x),
            Some(s) => update_theta(s, &self.cfg, x),
        };
        let (u, d) = match self.cfg.formulation {
            Formulation::TwoStage => solve_two_stage(&self.model, &self.cfg, &state, x)?,
            Formulation::Enumerated => solve_enumerated(&self.model, &self.cfg, &state, x)?,
        };
        let plan = OcpSolution {
            u_seq: d.u_seq.clone(),
            x_seq: d.x_seq.clone(),
            gamma_profile: d.gamma_profile.clone(),
            j_opt: argmin_first(&d.gamma_profile),
            cost: d.v_star,
            tracking: d.tracking,
            max_violation: 0.0,
            status: d.status,
            iterations: d.iterations,
            start: 0,
        };
        self.state = Some(ControllerState {
            last_solution: Some(plan),
            ..state
        });
        Ok((u, d))
    }
}
