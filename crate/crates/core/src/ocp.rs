//! Finite-horizon open-loop optimal control by single shooting.
//!
//! Decision variables are the inputs only; the nominal (`w = 0`) rollout
//! defines the states. Input boxes are handled by projection, state boxes by
//! an exact l1 penalty whose weight is doubled until the rollout is feasible.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{quad_form, serde_matrix};
use crate::model::{BoxSet, PlantModel};
use crate::optim::{minimize_box, LbfgsOptions, Termination};
use crate::sets::QuadraticForm;

/// Tolerance under which two Γ values count as tied.
pub const TIE_TOL: f64 = 1e-12;

/// `ℓ(x, u) = (x - x_ref)^T Q (x - x_ref) + (u - u_ref)^T R (u - u_ref)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCost {
    #[serde(with = "serde_matrix")]
    pub q: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub r: DMatrix<f64>,
    pub x_ref: Vec<f64>,
    pub u_ref: Vec<f64>,
}

impl StageCost {
    /// Weights must be symmetric positive semi-definite.
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, x_ref: Vec<f64>, u_ref: Vec<f64>) -> Result<Self> {
        check_len("Q", q.nrows(), x_ref.len())?;
        check_len("R", r.nrows(), u_ref.len())?;
        for (what, m) in [("Q", &q), ("R", &r)] {
            if !m.is_square() || crate::linalg::asymmetry(m) > 1e-10 {
                return Err(Error::InvalidConfig(format!("{what} must be symmetric")));
            }
            if crate::linalg::sym_eigenvalues(m).iter().any(|e| *e < -1e-12) {
                return Err(Error::InvalidConfig(format!("{what} must be positive semi-definite")));
            }
        }
        Ok(Self { q, r, x_ref, u_ref })
    }

    pub fn for_model(model: &PlantModel, q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        Self::new(q, r, model.x_ref.as_slice().to_vec(), model.u_ref.as_slice().to_vec())
    }

    #[inline]
    pub fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        quad_form(&self.q, x, &self.x_ref) + quad_form(&self.r, u, &self.u_ref)
    }

    fn add_grad(m: &DMatrix<f64>, v: &[f64], c: &[f64], scale: f64, out: &mut [f64]) {
        let n = v.len();
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += (m[(i, j)] + m[(j, i)]) * (v[j] - c[j]);
            }
            out[i] += scale * acc;
        }
    }
}

/// What the open-loop problem minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// `Γ(x̂(j))` for a fixed `j` in `1..=q`.
    GammaAt(usize),
    /// `min_{j=1..q} Γ(x̂(j))`, solved by endpoint enumeration.
    MinGammaOverHorizon,
    /// `θ J + ξ min_{j=1..q} Γ(x̂(j))`. The optimizer works on the upper bound
    /// obtained by replacing the min with `Γ(x̂(q))`; the reported cost is
    /// always the exact value.
    FullCost { theta: f64, xi: f64 },
}

#[derive(Debug, Clone)]
pub struct OcpProblem<'a> {
    pub model: &'a PlantModel,
    pub gamma: &'a QuadraticForm,
    /// Required for [`Objective::FullCost`].
    pub stage: Option<&'a StageCost>,
    pub x0: Vec<f64>,
    pub horizon: usize,
    pub objective: Objective,
    /// `horizon + 1` boxes for `x̂(0..=q)`; `None` leaves states free.
    pub state_boxes: Option<Vec<BoxSet>>,
    /// Inputs `u(0..q)` flattened step-major (`q * m` values).
    pub warm_start: Option<Vec<f64>>,
}

impl<'a> OcpProblem<'a> {
    pub fn new(
        model: &'a PlantModel,
        gamma: &'a QuadraticForm,
        x0: &[f64],
        horizon: usize,
        objective: Objective,
    ) -> Self {
        Self {
            model,
            gamma,
            stage: None,
            x0: x0.to_vec(),
            horizon,
            objective,
            state_boxes: None,
            warm_start: None,
        }
    }

    pub fn with_stage(mut self, stage: &'a StageCost) -> Self {
        self.stage = Some(stage);
        self
    }

    pub fn with_state_boxes(mut self, boxes: Vec<BoxSet>) -> Self {
        self.state_boxes = Some(boxes);
        self
    }

    pub fn with_warm_start(mut self, u: Vec<f64>) -> Self {
        self.warm_start = Some(u);
        self
    }

    fn validate(&self) -> Result<()> {
        let (n, m) = (self.model.n(), self.model.m());
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        check_len("x0", self.x0.len(), n)?;
        check_len("Γ shape", self.gamma.dim(), n)?;
        match self.objective {
            Objective::GammaAt(j) if j == 0 || j > self.horizon => {
                return Err(Error::InvalidConfig(format!(
                    "Γ index {j} outside 1..={}",
                    self.horizon
                )))
            }
            Objective::FullCost { theta, xi } => {
                if self.stage.is_none() {
                    return Err(Error::InvalidConfig("full cost needs a stage cost".into()));
                }
                if !(theta.is_finite() && theta >= 0.0 && xi.is_finite() && xi >= 0.0) {
                    return Err(Error::InvalidConfig("θ and ξ must be non-negative".into()));
                }
            }
            _ => {}
        }
        if let Some(b) = &self.state_boxes {
            check_len("state boxes", b.len(), self.horizon + 1)?;
            for bx in b {
                check_len("state box", bx.dim(), n)?;
            }
        }
        if let Some(w) = &self.warm_start {
            check_len("warm start", w.len(), self.horizon * m)?;
        }
        Ok(())
    }
}

/// Solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverBudget {
    /// L-BFGS iterations per start, summed over penalty rounds.
    pub max_iter: usize,
    /// Projected-gradient tolerance.
    pub tol: f64,
    pub penalty_init: f64,
    pub penalty_doublings: usize,
    /// Largest state-box violation accepted as feasible.
    pub feas_tol: f64,
    pub starts: usize,
    pub seed: u64,
}

impl Default for SolverBudget {
    fn default() -> Self {
        Self {
            max_iter: 400,
            tol: 1e-8,
            penalty_init: 1e3,
            penalty_doublings: 8,
            feas_tol: 1e-6,
            starts: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// Feasible; the best start stopped at a stationary point or could not
    /// descend further.
    Optimal,
    /// Feasible, but the best start ran out of iterations.
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpSolution {
    pub u_seq: Vec<Vec<f64>>,
    pub x_seq: Vec<Vec<f64>>,
    /// `Γ(x̂(j))` for `j = 1..=q`.
    pub gamma_profile: Vec<f64>,
    /// 1-based argmin of `gamma_profile`, smallest index on ties.
    pub j_opt: usize,
    /// Exact objective value of this trajectory.
    pub cost: f64,
    /// `J = Σ_{j<q} ℓ(x̂(j), u(j))` when a stage cost is present, else 0.
    pub tracking: f64,
    pub max_violation: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Index of the start that produced this solution (0 for the warm start
    /// when one was given).
    pub start: usize,
}

impl OcpSolution {
    pub fn horizon(&self) -> usize {
        self.u_seq.len()
    }

    pub fn gamma_min(&self) -> f64 {
        self.gamma_profile[self.j_opt - 1]
    }

    pub fn is_feasible(&self) -> bool {
        self.status != SolveStatus::Infeasible
    }

    pub fn u_flat(&self) -> Vec<f64> {
        self.u_seq.concat()
    }
}

/// 1-based index of the smallest value, smallest index among ties.
pub fn argmin_first(values: &[f64]) -> usize {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    values
        .iter()
        .position(|v| *v <= min + TIE_TOL)
        .map_or(1, |i| i + 1)
}

/// Rollout buffers and the penalized objective for one problem.
struct Evaluator<'p, 'a> {
    prob: &'p OcpProblem<'a>,
    weight: f64,
    n: usize,
    m: usize,
    xs: Vec<f64>,
    jx: Vec<DMatrix<f64>>,
    ju: Vec<DMatrix<f64>>,
    lam: Vec<f64>,
    lam_next: Vec<f64>,
    gx: Vec<f64>,
    zero_w: Vec<f64>,
}

impl<'p, 'a> Evaluator<'p, 'a> {
    fn new(prob: &'p OcpProblem<'a>, weight: f64) -> Self {
        let (n, m, q) = (prob.model.n(), prob.model.m(), prob.horizon);
        let mut xs = vec![0.0; (q + 1) * n];
        xs[..n].copy_from_slice(&prob.x0);
        Self {
            prob,
            weight,
            n,
            m,
            xs,
            jx: vec![DMatrix::zeros(n, n); q],
            ju: vec![DMatrix::zeros(n, m); q],
            lam: vec![0.0; n],
            lam_next: vec![0.0; n],
            gx: vec![0.0; n],
            zero_w: prob.model.zero_disturbance(),
        }
    }

    fn x(&self, j: usize) -> &[f64] {
        &self.xs[j * self.n..(j + 1) * self.n]
    }

    fn rollout(&mut self, u: &[f64]) {
        let (n, m) = (self.n, self.m);
        for j in 0..self.prob.horizon {
            let (head, tail) = self.xs.split_at_mut((j + 1) * n);
            self.prob.model.step_into(
                &head[j * n..],
                &u[j * m..(j + 1) * m],
                &self.zero_w,
                &mut tail[..n],
            );
        }
    }

    fn violation_sum(&self) -> f64 {
        let Some(boxes) = &self.prob.state_boxes else {
            return 0.0;
        };
        let mut acc = 0.0;
        for (j, b) in boxes.iter().enumerate() {
            for (i, v) in self.x(j).iter().enumerate() {
                acc += (b.lower[i] - v).max(0.0) + (v - b.upper[i]).max(0.0);
            }
        }
        acc
    }

    fn max_violation(&self) -> f64 {
        let Some(boxes) = &self.prob.state_boxes else {
            return 0.0;
        };
        boxes
            .iter()
            .enumerate()
            .map(|(j, b)| b.max_violation(self.x(j)))
            .fold(0.0, f64::max)
    }

    fn gamma_profile(&self) -> Vec<f64> {
        (1..=self.prob.horizon)
            .map(|j| self.prob.gamma.eval(self.x(j)))
            .collect()
    }

    fn tracking(&self, u: &[f64]) -> f64 {
        let Some(stage) = self.prob.stage else {
            return 0.0;
        };
        (0..self.prob.horizon)
            .map(|j| stage.eval(self.x(j), &u[j * self.m..(j + 1) * self.m]))
            .sum()
    }

    /// Smooth part of the objective (the surrogate for full cost).
    fn surrogate(&self, u: &[f64]) -> f64 {
        let q = self.prob.horizon;
        match self.prob.objective {
            Objective::GammaAt(j) => self.prob.gamma.eval(self.x(j)),
            Objective::MinGammaOverHorizon => self
                .gamma_profile()
                .into_iter()
                .fold(f64::INFINITY, f64::min),
            Objective::FullCost { theta, xi } => {
                theta * self.tracking(u) + xi * self.prob.gamma.eval(self.x(q))
            }
        }
    }

    fn penalized(&self, u: &[f64]) -> f64 {
        self.surrogate(u) + self.weight * self.violation_sum()
    }

    /// Adjoint gradient of the penalized objective; requires a fresh rollout.
    fn gradient(&mut self, u: &[f64], grad: &mut [f64]) {
        let (n, m, q) = (self.n, self.m, self.prob.horizon);
        for j in 0..q {
            let (xj, uj) = (&self.xs[j * n..(j + 1) * n], &u[j * m..(j + 1) * m]);
            self.prob
                .model
                .jacobians(xj, uj, &self.zero_w, &mut self.jx[j], &mut self.ju[j]);
        }
        let gamma_index = match self.prob.objective {
            Objective::GammaAt(j) => j,
            Objective::MinGammaOverHorizon => argmin_first(&self.gamma_profile()),
            Objective::FullCost { .. } => q,
        };
        let (theta, xi) = match self.prob.objective {
            Objective::FullCost { theta, xi } => (theta, xi),
            _ => (0.0, 1.0),
        };

        self.lam.iter_mut().for_each(|v| *v = 0.0);
        for j in (0..=q).rev() {
            // ∂φ/∂x_j
            self.gx.iter_mut().for_each(|v| *v = 0.0);
            let xj = &self.xs[j * n..(j + 1) * n];
            if j == gamma_index {
                self.prob.gamma.grad_into(xj, &mut self.gx);
                self.gx.iter_mut().for_each(|v| *v *= xi);
            }
            if let (Some(stage), true) = (self.prob.stage, j < q && theta != 0.0) {
                StageCost::add_grad(&stage.q, xj, &stage.x_ref, theta, &mut self.gx);
            }
            if let Some(boxes) = &self.prob.state_boxes {
                let b = &boxes[j];
                for i in 0..n {
                    if xj[i] < b.lower[i] {
                        self.gx[i] -= self.weight;
                    } else if xj[i] > b.upper[i] {
                        self.gx[i] += self.weight;
                    }
                }
            }
            if j < q {
                // input gradient uses λ_{j+1}
                let gu = &mut grad[j * m..(j + 1) * m];
                let ju = &self.ju[j];
                for b in 0..m {
                    let mut acc = 0.0;
                    for i in 0..n {
                        acc += ju[(i, b)] * self.lam[i];
                    }
                    gu[b] = acc;
                }
                if let (Some(stage), true) = (self.prob.stage, theta != 0.0) {
                    StageCost::add_grad(&stage.r, &u[j * m..(j + 1) * m], &stage.u_ref, theta, gu);
                }
                let jx = &self.jx[j];
                for a in 0..n {
                    let mut acc = self.gx[a];
                    for i in 0..n {
                        acc += jx[(i, a)] * self.lam[i];
                    }
                    self.lam_next[a] = acc;
                }
            } else {
                self.lam_next.copy_from_slice(&self.gx);
            }
            std::mem::swap(&mut self.lam, &mut self.lam_next);
        }
    }

    fn solution(&self, u: &[f64], status: SolveStatus, iterations: usize, start: usize) -> OcpSolution {
        let (n, m, q) = (self.n, self.m, self.prob.horizon);
        let gamma_profile = self.gamma_profile();
        let j_opt = argmin_first(&gamma_profile);
        let gmin = gamma_profile[j_opt - 1];
        let tracking = self.tracking(u);
        let cost = match self.prob.objective {
            Objective::GammaAt(j) => gamma_profile[j - 1],
            Objective::MinGammaOverHorizon => gmin,
            Objective::FullCost { theta, xi } => theta * tracking + xi * gmin,
        };
        let max_violation = self.max_violation();
        OcpSolution {
            u_seq: (0..q).map(|j| u[j * m..(j + 1) * m].to_vec()).collect(),
            x_seq: (0..=q).map(|j| self.xs[j * n..(j + 1) * n].to_vec()).collect(),
            gamma_profile,
            j_opt,
            cost,
            tracking,
            max_violation,
            status,
            iterations,
            start,
        }
    }
}

impl crate::optim::Objective for Evaluator<'_, '_> {
    fn value(&mut self, x: &[f64]) -> f64 {
        self.rollout(x);
        self.penalized(x)
    }

    fn value_grad(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.rollout(x);
        let f = self.penalized(x);
        self.gradient(x, grad);
        f
    }
}

/// Penalized objective at `u` with penalty weight `weight`.
pub fn penalized_objective(prob: &OcpProblem, u: &[f64], weight: f64) -> Result<f64> {
    prob.validate()?;
    check_len("u", u.len(), prob.horizon * prob.model.m())?;
    let mut ev = Evaluator::new(prob, weight);
    ev.rollout(u);
    Ok(ev.penalized(u))
}

/// Adjoint gradient of [`penalized_objective`] with respect to the stacked
/// inputs. For the min-over-horizon objective the gradient is that of the
/// active (smallest-index) minimizer, which is exact wherever the argmin is
/// unique.
pub fn gradient(prob: &OcpProblem, u: &[f64], weight: f64) -> Result<Vec<f64>> {
    prob.validate()?;
    check_len("u", u.len(), prob.horizon * prob.model.m())?;
    let mut ev = Evaluator::new(prob, weight);
    ev.rollout(u);
    let mut g = vec![0.0; u.len()];
    ev.gradient(u, &mut g);
    Ok(g)
}

/// Evaluate a fixed input sequence: rollout, Γ profile, exact cost and
/// feasibility.
pub fn evaluate(prob: &OcpProblem, u: &[f64], feas_tol: f64) -> Result<OcpSolution> {
    prob.validate()?;
    check_len("u", u.len(), prob.horizon * prob.model.m())?;
    let mut ev = Evaluator::new(prob, 0.0);
    ev.rollout(u);
    let status = if ev.max_violation() <= feas_tol {
        SolveStatus::Optimal
    } else {
        SolveStatus::Infeasible
    };
    Ok(ev.solution(u, status, 0, 0))
}

/// `a` is strictly better than `b`: feasible first, then lower cost (or lower
/// violation when both are infeasible).
fn better(a: &OcpSolution, b: &OcpSolution) -> bool {
    match (a.is_feasible(), b.is_feasible()) {
        (true, false) => true,
        (false, true) => false,
        (true, true) => a.cost < b.cost,
        (false, false) => a.max_violation < b.max_violation,
    }
}

fn initial_guesses(prob: &OcpProblem, budget: &SolverBudget) -> Vec<Vec<f64>> {
    let (m, q) = (prob.model.m(), prob.horizon);
    let ub = &prob.model.input_box;
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(budget.starts.max(1));
    if let Some(w) = &prob.warm_start {
        out.push(w.clone());
    }
    let mut zero = vec![0.0; m];
    ub.project(&mut zero);
    out.push(zero.repeat(q));
    let mut uref = prob.model.u_ref.as_slice().to_vec();
    ub.project(&mut uref);
    out.push(uref.repeat(q));
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed ^ ((q as u64) << 32));
    while out.len() < budget.starts.max(1) {
        let mut u = Vec::with_capacity(q * m);
        for _ in 0..q {
            for b in 0..m {
                u.push(rng.gen_range(ub.lower[b]..=ub.upper[b]));
            }
        }
        out.push(u);
    }
    out.truncate(budget.starts.max(1));
    out
}

fn solve_fixed(prob: &OcpProblem, budget: &SolverBudget) -> OcpSolution {
    let (m, q) = (prob.model.m(), prob.horizon);
    let lower = prob.model.input_box.lower.repeat(q);
    let upper = prob.model.input_box.upper.repeat(q);
    let x0_violation = prob
        .state_boxes
        .as_ref()
        .map_or(0.0, |b| b[0].max_violation(&prob.x0));

    let guesses = initial_guesses(prob, budget);
    let mut best: Option<OcpSolution> = None;
    let consider = |cand: OcpSolution, best: &mut Option<OcpSolution>| {
        if best.as_ref().is_none_or(|b| better(&cand, b)) {
            *best = Some(cand);
        }
    };

    if let Some(w) = &prob.warm_start {
        let mut w = w.clone();
        prob.model.input_box.project_repeated(&mut w, m);
        let mut ev = Evaluator::new(prob, 0.0);
        ev.rollout(&w);
        let feasible = ev.max_violation() <= budget.feas_tol;
        let status = if feasible { SolveStatus::Optimal } else { SolveStatus::Infeasible };
        consider(ev.solution(&w, status, 0, 0), &mut best);
    }

    let opts = LbfgsOptions {
        max_iter: budget.max_iter,
        tol: budget.tol,
        ..Default::default()
    };
    for (k, guess) in guesses.iter().enumerate() {
        if guesses[..k].contains(guess) {
            continue;
        }
        let mut u = guess.clone();
        let mut weight = budget.penalty_init;
        let mut used = 0;
        let mut termination = Termination::MaxIter;
        let mut ev = Evaluator::new(prob, weight);
        for round in 0..=budget.penalty_doublings {
            ev.weight = weight;
            let o = LbfgsOptions {
                max_iter: opts.max_iter.saturating_sub(used).max(1),
                ..opts
            };
            let res = minimize_box(&mut ev, &u, &lower, &upper, &o);
            used += res.iterations;
            termination = res.termination;
            u = res.x;
            ev.rollout(&u);
            if ev.max_violation() <= budget.feas_tol || x0_violation > budget.feas_tol {
                break;
            }
            if round < budget.penalty_doublings {
                weight *= 2.0;
            }
        }
        ev.rollout(&u);
        let status = if ev.max_violation() > budget.feas_tol {
            SolveStatus::Infeasible
        } else if termination == Termination::MaxIter {
            SolveStatus::MaxIter
        } else {
            SolveStatus::Optimal
        };
        consider(ev.solution(&u, status, used, k), &mut best);
    }
    best.expect("at least one start")
}

/// Solve the open-loop problem.
///
/// Deterministic for a given problem and budget. The warm start, when given,
/// is always a candidate, so the result is never worse than it.
pub fn solve(prob: &OcpProblem, budget: &SolverBudget) -> Result<OcpSolution> {
    prob.validate()?;
    if prob.objective != Objective::MinGammaOverHorizon {
        return Ok(solve_fixed(prob, budget));
    }
    // endpoint enumeration: min_j min_u Γ(x̂(j)) = min_u min_j Γ(x̂(j))
    let mut best: Option<OcpSolution> = None;
    if let Some(w) = &prob.warm_start {
        let mut w = w.clone();
        prob.model.input_box.project_repeated(&mut w, prob.model.m());
        best = Some(evaluate(prob, &w, budget.feas_tol)?);
    }
    let mut previous: Option<Vec<f64>> = None;
    let mut total_iter = 0;
    for j in 1..=prob.horizon {
        let mut sub = prob.clone();
        sub.objective = Objective::GammaAt(j);
        if sub.warm_start.is_none() {
            sub.warm_start = previous.clone();
        }
        let s = solve_fixed(&sub, budget);
        total_iter += s.iterations;
        previous = Some(s.u_flat());
        let mut cand = evaluate(prob, &s.u_flat(), budget.feas_tol)?;
        if cand.is_feasible() {
            cand.status = s.status;
        }
        cand.start = s.start;
        if best.as_ref().is_none_or(|b| better(&cand, b)) {
            best = Some(cand);
        }
    }
    let mut out = best.expect("horizon >= 1");
    out.iterations = total_iter;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::diag;
    use crate::plants::{make_nonholonomic, LinearPlant};
    use crate::model::PlantData;
    use nalgebra::DVector;
    use std::sync::Arc;

    fn integrator() -> PlantModel {
        let dyn_ = LinearPlant {
            a: diag(&[1.0]),
            b: diag(&[1.0]),
            e: diag(&[1.0]),
            c: None,
        };
        PlantModel::new(
            Arc::new(dyn_),
            PlantData {
                name: "integrator".into(),
                state_box: BoxSet::symmetric(&[1.0]),
                input_box: BoxSet::symmetric(&[1.0]),
                dist_box: BoxSet::symmetric(&[0.0]),
                lx: diag(&[1.0]),
                lu: diag(&[1.0]),
                lw: diag(&[1.0]),
                x_ref: DVector::zeros(1),
                u_ref: DVector::zeros(1),
            },
        )
        .unwrap()
    }

    #[test]
    fn one_step_integrator() {
        let p = integrator();
        let g = QuadraticForm::new(diag(&[1.0]), vec![0.0]).unwrap();
        let prob = OcpProblem::new(&p, &g, &[0.5], 1, Objective::GammaAt(1));
        let s = solve(&prob, &SolverBudget::default()).unwrap();
        assert!((s.u_seq[0][0] + 0.5).abs() < 1e-6);
        assert!(s.cost < 1e-12);
        let gr = gradient(&prob, &[0.1], 0.0).unwrap();
        assert!((gr[0] - 2.0 * 0.6).abs() < 1e-12);
    }

    #[test]
    fn origin_is_kept_with_zero_input() {
        let p = make_nonholonomic();
        let g = QuadraticForm::new(diag(&[1.0, 0.167, 0.167]), vec![0.0; 3]).unwrap();
        let prob = OcpProblem::new(&p, &g, &[0.0; 3], 4, Objective::MinGammaOverHorizon);
        let s = solve(&prob, &SolverBudget::default()).unwrap();
        assert_eq!(s.cost, 0.0);
        assert_eq!(s.j_opt, 1);
        assert!(s.u_flat().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn u2_does_not_act_on_x1() {
        let p = make_nonholonomic();
        let g = QuadraticForm::new(diag(&[1.0, 0.0, 0.0]) + diag(&[0.0, 1e-9, 1e-9]), vec![0.0; 3])
            .unwrap();
        let prob = OcpProblem::new(&p, &g, &[1.0, 2.0, 3.0], 1, Objective::GammaAt(1));
        let gr = gradient(&prob, &[0.3, 0.2], 0.0).unwrap();
        assert!(gr[1].abs() < 1e-7);
    }

    #[test]
    fn argmin_ties_take_first() {
        assert_eq!(argmin_first(&[3.0, 1.0, 1.0 + 1e-13, 2.0]), 2);
        assert_eq!(argmin_first(&[1.0]), 1);
    }

    #[test]
    fn constrained_solution_is_feasible() {
        let p = make_nonholonomic();
        let g = QuadraticForm::new(diag(&[1.0, 0.167, 0.167]), vec![0.0; 3]).unwrap();
        let boxes = vec![BoxSet::symmetric(&[4.0, 10.0, 10.0]); 4];
        let prob = OcpProblem::new(&p, &g, &[-3.0, 9.0, 3.0], 3, Objective::GammaAt(3))
            .with_state_boxes(boxes.clone());
        let s = solve(&prob, &SolverBudget::default()).unwrap();
        assert!(s.is_feasible());
        for (x, b) in s.x_seq.iter().zip(&boxes) {
            assert!(b.contains(x, 1e-6));
        }
    }
}
