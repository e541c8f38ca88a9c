//! Closed-loop simulation and Monte-Carlo batches.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{verify_lemma1_identity, Controller, ControllerConfig, Formulation};
use crate::error::{check_len, Error, Result};
use crate::model::PlantModel;

/// Tolerance of the state-constraint audit.
pub const AUDIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStep {
    pub k: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub theta: f64,
    pub v_star: f64,
    pub q_star: usize,
    pub gamma: f64,
    /// `ℓ(x(k), u(k))`.
    pub stage_cost: f64,
    pub lemma1: bool,
    pub stage1_j: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub run_id: usize,
    pub seed: u64,
    pub steps: Vec<SimStep>,
    /// State after the last applied input.
    pub final_x: Vec<f64>,
    pub final_gamma: f64,
    pub fault: Option<String>,
    /// Solve time per step in milliseconds; kept out of batch reports.
    #[serde(skip)]
    pub wall_clock_ms: Vec<f64>,
}

impl SimTrace {
    /// States `x(0..=K)`.
    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.steps.iter().map(|s| s.x.as_slice()).chain(std::iter::once(self.final_x.as_slice()))
    }

    pub fn gammas(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.gamma).chain(std::iter::once(self.final_gamma)).collect()
    }

    /// First `k` with `Γ(x(k)) <= level`.
    pub fn steps_to_sublevel(&self, level: f64) -> Option<usize> {
        self.gammas().iter().position(|g| *g <= level)
    }

    /// Number of states outside X plus inputs outside U.
    pub fn constraint_violations(&self, model: &PlantModel) -> usize {
        let xs = self.states().filter(|x| model.state_box.max_violation(x) > AUDIT_TOL).count();
        let us = self.steps.iter().filter(|s| model.input_box.max_violation(&s.u) > 0.0).count();
        xs + us
    }

    /// Re-simulate and return the largest deviation from the recorded states.
    pub fn replay_error(&self, model: &PlantModel) -> f64 {
        let states: Vec<&[f64]> = self.states().collect();
        self.steps
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let next = model.step(&s.x, &s.u, &s.w).expect("trace dimensions match the model");
                next.iter().zip(states[k + 1]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    /// CSV with columns `k, x1..xn, u1..um, w1..wr, theta, V_star, q_star,
    /// Gamma`; the last row holds the final state with empty input columns.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let (n, m, r) = match self.steps.first() {
            Some(s) => (s.x.len(), s.u.len(), s.w.len()),
            None => (self.final_x.len(), 0, 0),
        };
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["k".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        header.extend((1..=r).map(|i| format!("w{i}")));
        header.extend(["theta", "V_star", "q_star", "Gamma"].map(String::from));
        w.write_record(&header).map_err(csv_err)?;
        for s in &self.steps {
            let mut row = vec![s.k.to_string()];
            row.extend(s.x.iter().chain(&s.u).chain(&s.w).map(|v| v.to_string()));
            row.extend([s.theta.to_string(), s.v_star.to_string(), s.q_star.to_string(), s.gamma.to_string()]);
            w.write_record(&row).map_err(csv_err)?;
        }
        let mut row = vec![self.steps.len().to_string()];
        row.extend(self.final_x.iter().map(|v| v.to_string()));
        row.extend(std::iter::repeat_n(String::new(), m + r + 3));
        row.push(self.final_gamma.to_string());
        w.write_record(&row).map_err(csv_err)?;
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn sample_disturbance(model: &PlantModel, rng: &mut ChaCha8Rng) -> Vec<f64> {
    model
        .dist_box
        .lower
        .iter()
        .zip(&model.dist_box.upper)
        .map(|(l, u)| if l < u { rng.gen_range(*l..=*u) } else { *l })
        .collect()
}

/// Run the controller on `model` for `steps` steps with `w` drawn uniformly
/// from W at every step. A fault stops the run and is recorded.
pub fn run_closed_loop(
    model: &PlantModel,
    cfg: &ControllerConfig,
    x0: &[f64],
    steps: usize,
    seed: u64,
) -> Result<SimTrace> {
    run_indexed(model, cfg, x0, steps, seed, 0)
}

fn run_indexed(
    model: &PlantModel,
    cfg: &ControllerConfig,
    x0: &[f64],
    steps: usize,
    seed: u64,
    run_id: usize,
) -> Result<SimTrace> {
    check_len("x0", x0.len(), model.n())?;
    let mut ctrl = Controller::new(model.clone(), cfg.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = SimTrace {
        run_id,
        seed,
        steps: Vec::with_capacity(steps),
        final_x: x0.to_vec(),
        final_gamma: cfg.gamma.eval(x0),
        fault: None,
        wall_clock_ms: Vec::with_capacity(steps),
    };
    let mut x = x0.to_vec();
    for k in 0..steps {
        let t = Instant::now();
        let (u, d) = match ctrl.step(&x) {
            Ok(v) => v,
            Err(Error::ControllerFault(msg)) => {
                trace.fault = Some(format!("step {k}: {msg}"));
                break;
            }
            Err(e) => return Err(e),
        };
        trace.wall_clock_ms.push(t.elapsed().as_secs_f64() * 1e3);
        let w = sample_disturbance(model, &mut rng);
        let next = model.step(&x, &u, &w)?;
        trace.steps.push(SimStep {
            k,
            gamma: cfg.gamma.eval(&x),
            stage_cost: cfg.stage.eval(&x, &u),
            x,
            u,
            w,
            theta: d.theta,
            v_star: d.v_star,
            q_star: d.q_star,
            lemma1: verify_lemma1_identity(&d),
            stage1_j: d.stage1_j,
        });
        x = next;
    }
    trace.final_gamma = cfg.gamma.eval(&x);
    trace.final_x = x;
    Ok(trace)
}

/// Pointwise min / mean / max over runs, one entry per time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Envelope {
    pub min: Vec<f64>,
    pub mean: Vec<f64>,
    pub max: Vec<f64>,
}

impl Envelope {
    fn from_series(series: &[Vec<f64>]) -> Self {
        let len = series.iter().map(Vec::len).max().unwrap_or(0);
        let mut env = Envelope::default();
        for k in 0..len {
            let vals: Vec<f64> = series.iter().filter_map(|s| s.get(k).copied()).collect();
            env.min.push(vals.iter().copied().fold(f64::INFINITY, f64::min));
            env.max.push(vals.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            env.mean.push(vals.iter().sum::<f64>() / vals.len() as f64);
        }
        env
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelopes {
    pub x: Vec<Envelope>,
    pub u: Vec<Envelope>,
    pub gamma: Envelope,
    pub v_star: Envelope,
}

/// Aggregate of a batch. Contains no timing data, so identical inputs give
/// byte-identical serializations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub plant: String,
    pub formulation: Formulation,
    pub runs: usize,
    pub steps: usize,
    pub base_seed: u64,
    pub seed_policy: String,
    pub n_p: usize,
    pub omega: f64,
    pub violations: usize,
    pub faults: usize,
    pub fault_messages: Vec<String>,
    pub max_replay_error: f64,
    /// Per run; `None` if `Γ <= ω` was never reached.
    pub steps_to_sublevel: Vec<Option<usize>>,
    pub mean_steps_to_sublevel: Option<f64>,
    pub runs_never_reaching_sublevel: usize,
    pub final_gamma: Vec<f64>,
    pub final_within_omega: usize,
    /// `|x(K) - x_ref|_inf` per run.
    pub final_ref_distance: Vec<f64>,
    pub envelopes: Envelopes,
}

impl BatchReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `n_runs` runs with seeds `base_seed + run`.
pub fn run_batch(
    model: &PlantModel,
    cfg: &ControllerConfig,
    x0: &[f64],
    steps: usize,
    n_runs: usize,
    base_seed: u64,
) -> Result<(BatchReport, Vec<SimTrace>)> {
    let traces: Vec<SimTrace> = (0..n_runs)
        .into_par_iter()
        .map(|i| run_indexed(model, cfg, x0, steps, base_seed.wrapping_add(i as u64), i))
        .collect::<Result<_>>()?;
    Ok((summarize(model, cfg, steps, base_seed, &traces), traces))
}

pub fn summarize(model: &PlantModel, cfg: &ControllerConfig, steps: usize, base_seed: u64, traces: &[SimTrace]) -> BatchReport {
    let omega = cfg.cert.omega;
    let steps_to: Vec<Option<usize>> = traces.iter().map(|t| t.steps_to_sublevel(omega)).collect();
    let reached: Vec<usize> = steps_to.iter().flatten().copied().collect();
    let x_ref = model.x_ref.as_slice();
    let comp = |f: &dyn Fn(&SimTrace) -> Vec<f64>| Envelope::from_series(&traces.iter().map(f).collect::<Vec<_>>());
    let envelopes = Envelopes {
        x: (0..model.n()).map(|i| comp(&|t| t.states().map(|x| x[i]).collect())).collect(),
        u: (0..model.m()).map(|b| comp(&|t| t.steps.iter().map(|s| s.u[b]).collect())).collect(),
        gamma: comp(&|t| t.gammas()),
        v_star: comp(&|t| t.steps.iter().map(|s| s.v_star).collect()),
    };
    BatchReport {
        plant: model.name.clone(),
        formulation: cfg.formulation,
        runs: traces.len(),
        steps,
        base_seed,
        seed_policy: "run i uses ChaCha8 seeded with base_seed + i; w uniform per component and step".into(),
        n_p: cfg.n_p(),
        omega,
        violations: traces.iter().map(|t| t.constraint_violations(model)).sum(),
        faults: traces.iter().filter(|t| t.fault.is_some()).count(),
        fault_messages: traces.iter().filter_map(|t| t.fault.as_ref().map(|f| format!("run {}: {f}", t.run_id))).collect(),
        max_replay_error: traces.iter().map(|t| t.replay_error(model)).fold(0.0, f64::max),
        mean_steps_to_sublevel: (!reached.is_empty())
            .then(|| reached.iter().sum::<usize>() as f64 / reached.len() as f64),
        runs_never_reaching_sublevel: steps_to.iter().filter(|s| s.is_none()).count(),
        steps_to_sublevel: steps_to,
        final_gamma: traces.iter().map(|t| t.final_gamma).collect(),
        final_within_omega: traces.iter().filter(|t| t.final_gamma <= omega).count(),
        final_ref_distance: traces
            .iter()
            .map(|t| t.final_x.iter().zip(x_ref).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .collect(),
        envelopes,
    }
}

/// Step-wise checks of the Lyapunov-type conclusions on a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LemmaAudit {
    pub steps: usize,
    pub lemma1_failures: usize,
    pub upper_bound_failures: usize,
    pub descent_checks: usize,
    pub descent_failures: usize,
    /// Largest `V*(k+1) - V*(k) + θ(k) ℓ(k) - ε N_p ℓ̄`.
    pub worst_descent: f64,
    /// Largest `V*(k) - bound(k)`.
    pub worst_upper: f64,
}

impl LemmaAudit {
    pub fn passed(&self) -> bool {
        self.lemma1_failures == 0 && self.upper_bound_failures == 0 && self.descent_failures == 0
    }
}

pub fn audit_lemmas(cfg: &ControllerConfig, trace: &SimTrace) -> LemmaAudit {
    let slack = cfg.eps * cfg.n_p() as f64 * cfg.l_bar;
    let mut a = LemmaAudit {
        steps: trace.steps.len(),
        worst_descent: f64::NEG_INFINITY,
        worst_upper: f64::NEG_INFINITY,
        ..Default::default()
    };
    for (k, s) in trace.steps.iter().enumerate() {
        if !s.lemma1 {
            a.lemma1_failures += 1;
        }
        let over = s.v_star - cfg.value_upper_bound(&s.x);
        a.worst_upper = a.worst_upper.max(over);
        if over > 1e-6 * (1.0 + s.v_star.abs()) {
            a.upper_bound_failures += 1;
        }
        if let Some(next) = trace.steps.get(k + 1) {
            a.descent_checks += 1;
            let excess = next.v_star - s.v_star + s.theta * s.stage_cost - slack;
            a.worst_descent = a.worst_descent.max(excess);
            if excess > 1e-6 {
                a.descent_failures += 1;
            }
        }
    }
    a
}
