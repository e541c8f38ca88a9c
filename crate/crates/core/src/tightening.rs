//! Constraint-tightening sequences `F(j)`, `R(j)` for component-wise
//! Lipschitz plants.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoxSet, PlantModel};
use crate::sets::{minkowski_sum_box, pontryagin_diff_box};

/// The sequences as per-step box half-widths.
///
/// `c[j][i]` is the half-width of `F(j)` on axis `i`, `d[j][i]` that of `R(j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TighteningSequences {
    pub horizon: usize,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
}

impl TighteningSequences {
    pub fn dim(&self) -> usize {
        self.c.first().map_or(0, Vec::len)
    }

    pub fn f_box(&self, j: usize) -> BoxSet {
        BoxSet::symmetric(&self.c[j])
    }

    pub fn r_box(&self, j: usize) -> BoxSet {
        BoxSet::symmetric(&self.d[j])
    }

    /// `X ⊖ R(j)` for `j = 0..=upto`.
    pub fn tightened_boxes(&self, state_box: &BoxSet, upto: usize) -> Vec<BoxSet> {
        (0..=upto)
            .map(|j| pontryagin_diff_box(state_box, &self.r_box(j)))
            .collect()
    }

    /// True if `F(j) ⊕ R(j) ⊆ R(j+1)` for every `j < horizon`.
    pub fn is_nested(&self, tol: f64) -> bool {
        (0..self.horizon).all(|j| {
            self.r_box(j + 1)
                .contains_box(&minkowski_sum_box(&self.f_box(j), &self.r_box(j)), tol)
        })
    }

    /// CSV with one row per `j`: `j, F_1..F_n, R_1..R_n`, values rounded to
    /// `decimals`.
    pub fn write_csv<W: Write>(&self, out: W, decimals: usize) -> Result<()> {
        let n = self.dim();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["j".to_string()];
        header.extend((1..=n).map(|i| format!("F{i}")));
        header.extend((1..=n).map(|i| format!("R{i}")));
        w.write_record(&header).map_err(csv_err)?;
        for j in 0..=self.horizon {
            let mut row = vec![j.to_string()];
            row.extend(self.c[j].iter().map(|v| format!("{v:.decimals$}")));
            row.extend(self.d[j].iter().map(|v| format!("{v:.decimals$}")));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Worst-case sequences for `|w_c| = w̄_c`:
/// `c_{i,0} = Σ_c Lw[i][c] w̄_c`, `c_{i,j} = Σ_a Lx[i][a] c_{a,j-1}`,
/// `d_{i,j} = Σ_{k<j} c_{i,k}`.
pub fn compute_tightening(model: &PlantModel, n_max: usize) -> TighteningSequences {
    let n = model.n();
    let wbar = model.dist_bound();
    let mut c = Vec::with_capacity(n_max + 1);
    let c0: Vec<f64> = (0..n)
        .map(|i| (0..model.r()).map(|k| model.lw[(i, k)] * wbar[k]).sum())
        .collect();
    c.push(c0);
    for j in 1..=n_max {
        let prev: &Vec<f64> = &c[j - 1];
        let next = (0..n)
            .map(|i| (0..n).map(|a| model.lx[(i, a)] * prev[a]).sum())
            .collect();
        c.push(next);
    }
    let mut d = vec![vec![0.0; n]];
    for j in 1..=n_max {
        let next = (0..n).map(|i| d[j - 1][i] + c[j - 1][i]).collect();
        d.push(next);
    }
    TighteningSequences {
        horizon: n_max,
        c,
        d,
    }
}

/// Largest `N <= seq.horizon` with `X ⊖ R(j)` non-empty and containing the
/// regulation target for all `j <= N`.
pub fn max_feasible_horizon(model: &PlantModel, seq: &TighteningSequences) -> Result<usize> {
    let target = model.x_ref.as_slice();
    let ok = |j: usize| {
        let b = pontryagin_diff_box(&model.state_box, &seq.r_box(j));
        !b.is_empty() && b.contains(target, 0.0)
    };
    if seq.horizon >= 1 && !ok(1) {
        return Err(Error::DisturbanceTooLarge);
    }
    Ok((1..=seq.horizon).take_while(|&j| ok(j)).last().unwrap_or(0))
}

/// Outcome of a sampled check of the tightening assumptions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TighteningAudit {
    pub samples: usize,
    pub violations: usize,
    /// Largest ratio `|gap_i| / bound_i` seen (≤ 1 when all pass).
    pub worst_ratio: f64,
}

fn rollout(model: &PlantModel, x0: &[f64], u: &[Vec<f64>], w: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut xs = vec![x0.to_vec()];
    for (uj, wj) in u.iter().zip(w) {
        let next = model.step(xs.last().unwrap(), uj, wj).expect("dimensions checked");
        xs.push(next);
    }
    xs
}

fn record(audit: &mut TighteningAudit, gap: &[f64], bound: &[f64]) {
    for (g, b) in gap.iter().zip(bound) {
        let g = g.abs();
        let tol = 1e-12 * (1.0 + b);
        if g > b + tol {
            audit.violations += 1;
        }
        if *b > 0.0 {
            audit.worst_ratio = audit.worst_ratio.max(g / b);
        } else if g > tol {
            audit.worst_ratio = f64::INFINITY;
        }
    }
}

/// Initial-condition gap propagation: `x̌ - x ∈ F(0)` implies
/// `φ(j; x̌, u, 0) - φ(j; x, u, 0) ∈ F(j)`.
pub fn audit_initial_gap(
    model: &PlantModel,
    seq: &TighteningSequences,
    samples: usize,
    seed: u64,
) -> TighteningAudit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut audit = TighteningAudit {
        samples,
        violations: 0,
        worst_ratio: 0.0,
    };
    let zero = vec![vec![0.0; model.r()]; seq.horizon];
    for _ in 0..samples {
        let x = model.state_box.sample(&mut rng);
        let xc: Vec<f64> = x
            .iter()
            .zip(&seq.c[0])
            .map(|(x, c)| x + c * rng.gen_range(-1.0..=1.0))
            .collect();
        let u: Vec<Vec<f64>> = (0..seq.horizon)
            .map(|_| model.input_box.sample(&mut rng))
            .collect();
        let a = rollout(model, &x, &u, &zero);
        let b = rollout(model, &xc, &u, &zero);
        for j in 0..=seq.horizon {
            let gap: Vec<f64> = a[j].iter().zip(&b[j]).map(|(p, q)| p - q).collect();
            record(&mut audit, &gap, &seq.c[j]);
        }
    }
    audit
}

/// Disturbance effect: `φ(j; x, u, w) - φ(j; x, u, 0) ∈ R(j)`.
pub fn audit_disturbance_effect(
    model: &PlantModel,
    seq: &TighteningSequences,
    samples: usize,
    seed: u64,
) -> TighteningAudit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut audit = TighteningAudit {
        samples,
        violations: 0,
        worst_ratio: 0.0,
    };
    let zero = vec![vec![0.0; model.r()]; seq.horizon];
    for _ in 0..samples {
        let x = model.state_box.sample(&mut rng);
        let u: Vec<Vec<f64>> = (0..seq.horizon)
            .map(|_| model.input_box.sample(&mut rng))
            .collect();
        let w: Vec<Vec<f64>> = (0..seq.horizon)
            .map(|_| model.dist_box.sample(&mut rng))
            .collect();
        let a = rollout(model, &x, &u, &w);
        let b = rollout(model, &x, &u, &zero);
        for j in 0..=seq.horizon {
            let gap: Vec<f64> = a[j].iter().zip(&b[j]).map(|(p, q)| p - q).collect();
            record(&mut audit, &gap, &seq.d[j]);
        }
    }
    audit
}
