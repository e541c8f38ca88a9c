//! Library results against the independent references in `oracles`.

use std::sync::Arc;

use contraction_mpc::config::Scenario;
use contraction_mpc::controller::{init_theta, solve_enumerated, Formulation};
use contraction_mpc::model::PlantData;
use contraction_mpc::oracles::{oracle_min_over_q, oracle_sublevel_in_box_2d, oracle_tightening, riccati_fixed_point, CostSpec};
use contraction_mpc::plants::{make_nonholonomic, make_quadruple_tank, FnDynamics};
use contraction_mpc::sets::max_sublevel_in_box;
use contraction_mpc::terminal::{bisect_beta, linearize, verify_lmi, TerminalIngredients};
use contraction_mpc::tightening::compute_tightening;
use contraction_mpc::{BoxSet, PlantModel};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn tightening_agrees_with_matrix_powers_over_long_horizons() {
    for p in [make_nonholonomic(), make_quadruple_tank()] {
        let seq = compute_tightening(&p, 40);
        let oracle = oracle_tightening(&p, 40);
        for j in 0..=40 {
            for i in 0..p.n() {
                let scale = 1.0 + oracle.d[j][i];
                assert!((seq.c[j][i] - oracle.c[j][i]).abs() <= 1e-12 * scale, "{} c[{j}][{i}]", p.name);
                assert!((seq.d[j][i] - oracle.d[j][i]).abs() <= 1e-12 * scale, "{} d[{j}][{i}]", p.name);
            }
        }
    }
}

#[test]
fn sublevel_in_box_agrees_with_polar_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..40 {
        let a: f64 = rng.gen_range(0.2..4.0);
        let b: f64 = rng.gen_range(0.2..4.0);
        let off = rng.gen_range(-0.8..0.8) * (a * b).sqrt();
        let shape = DMatrix::from_row_slice(2, 2, &[a, off, off, b]);
        let bx = BoxSet::new(
            vec![rng.gen_range(-3.0..-0.2), rng.gen_range(-3.0..-0.2)],
            vec![rng.gen_range(0.2..3.0), rng.gen_range(0.2..3.0)],
        )
        .unwrap();
        let exact = max_sublevel_in_box(&shape, &bx).unwrap();
        let scan = oracle_sublevel_in_box_2d(&shape, &bx, 20_000, 60);
        // the scan misses the tangency point by at most the angular step
        assert!(scan >= exact * (1.0 - 1e-9), "scan {scan} below exact {exact}");
        assert!(scan <= exact * (1.0 + 1e-6), "scan {scan} above exact {exact}");
    }
}

#[test]
fn riccati_synthesized_terminal_ingredients_pass_the_lmi() {
    let p = make_quadruple_tank();
    let (a, b) = linearize(&p, p.x_ref.as_slice(), p.u_ref.as_slice()).unwrap();
    let q = DMatrix::<f64>::identity(4, 4);
    let r = DMatrix::<f64>::identity(2, 2) * 0.01;
    // doubling the weights leaves Q + K^T R K of slack for the κ P term
    let (pm, k) = riccati_fixed_point(&a, &b, &(&q * 2.0), &(&r * 2.0), 20_000);
    let p_max = pm.symmetric_eigenvalues().max();
    let kappa = 0.5 / p_max;
    let ing = TerminalIngredients::new(pm, k, 0.0, kappa, a, b).unwrap();
    let lmi = verify_lmi(&ing, &q, &r).unwrap();
    assert!(lmi.holds(), "{lmi:?}");
    assert!(lmi.pre_schur_holds(), "{lmi:?}");
    assert!(lmi.agree());
}

/// `x+ = x + u + 0.1 x^2 + w` on `[-10, 10]` with `|u| <= 5`.
fn quadratic_toy() -> PlantModel {
    let dynamics = FnDynamics(|x: &[f64], u: &[f64], w: &[f64], out: &mut [f64]| {
        out[0] = x[0] + u[0] + 0.1 * x[0] * x[0] + w[0];
    });
    let data = PlantData {
        name: "quadratic_toy".into(),
        state_box: BoxSet::symmetric(&[10.0]),
        input_box: BoxSet::symmetric(&[5.0]),
        dist_box: BoxSet::symmetric(&[0.01]),
        lx: DMatrix::from_element(1, 1, 3.0),
        lu: DMatrix::from_element(1, 1, 1.0),
        lw: DMatrix::from_element(1, 1, 1.0),
        x_ref: DVector::zeros(1),
        u_ref: DVector::zeros(1),
    };
    PlantModel::new(Arc::new(dynamics), data).unwrap()
}

/// Dense scan of the largest `β` for the 1-D toy with `K = -0.9`, `P = 1`:
/// both boundary points `±√β` must satisfy the linearization bound, the
/// input limit and the state limit. Returns the bracket `[last ok, first
/// failure)`.
fn scan_beta(kappa: f64) -> (f64, f64) {
    let ok = |beta: f64| {
        let r: f64 = beta.sqrt();
        [r, -r].iter().all(|&x| {
            let e = 0.1 * x * x;
            let lin = 0.1 * x;
            let excess = e * e + 2.0 * e * lin - kappa * x * x;
            excess <= 0.0 && (0.9 * x).abs() <= 5.0 && x.abs() <= 10.0
        })
    };
    let step = 40.0 / 200_000.0;
    let mut best = 0.0;
    loop {
        let beta = best + step;
        if beta > 40.0 || !ok(beta) {
            return (best, beta);
        }
        best = beta;
    }
}

fn toy_ingredients(p: &PlantModel, kappa: f64) -> TerminalIngredients {
    let (a, b) = linearize(p, &[0.0], &[0.0]).unwrap();
    TerminalIngredients::new(
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, -0.9),
        0.0,
        kappa,
        a,
        b,
    )
    .unwrap()
}

#[test]
fn bisected_beta_matches_dense_scan() {
    let p = quadratic_toy();
    for kappa in [0.01, 0.05, 0.1] {
        let rep = bisect_beta(&p, &toy_ingredients(&p, kappa), 64).unwrap();
        let (lo, hi) = scan_beta(kappa);
        assert!(rep.beta >= lo * (1.0 - 2e-3), "κ = {kappa}: bisected {} below scanned {lo}", rep.beta);
        assert!(rep.beta < hi, "κ = {kappa}: bisected {} past the first failure {hi}", rep.beta);
    }
}

#[test]
fn beta_is_non_decreasing_in_kappa() {
    let p = quadratic_toy();
    let mut last = 0.0;
    for kappa in [0.005, 0.01, 0.02, 0.05, 0.1, 0.2] {
        let beta = bisect_beta(&p, &toy_ingredients(&p, kappa), 64).unwrap().beta;
        assert!(beta >= last * (1.0 - 2e-3), "β({kappa}) = {beta} < {last}");
        last = beta;
    }
}

#[test]
fn enumerated_controller_is_no_worse_than_brute_force() {
    let s = Scenario::preset("nonholonomic").unwrap().smoke();
    let p = s.plant().unwrap();
    let cert = s.certify(&p).unwrap();
    let mut cfg = s.controller_config(&p, cert).unwrap();
    cfg.formulation = Formulation::Enumerated;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    while checked < 20 {
        let x = p.state_box.sample(&mut rng);
        let state = init_theta(&cfg, &x);
        let Ok((_, d)) = solve_enumerated(&p, &cfg, &state, &x) else {
            continue;
        };
        let spec = CostSpec {
            model: &p,
            p_gamma: &cfg.gamma.shape,
            q: &cfg.stage.q,
            r: &cfg.stage.r,
            theta: state.theta,
            xi: cfg.xi,
            boxes: &cfg.state_boxes,
        };
        let oracle = oracle_min_over_q(&spec, &x, 3, checked as u64);
        assert!(
            d.v_star <= oracle * (1.0 + 1e-3) + 1e-6,
            "x = {x:?}: solver {} vs brute force {oracle}",
            d.v_star
        );
        checked += 1;
    }
}

#[test]
fn enumeration_is_no_worse_than_two_stage() {
    use contraction_mpc::controller::solve_two_stage;

    let s = Scenario::preset("nonholonomic").unwrap().smoke();
    let p = s.plant().unwrap();
    let cfg = s.controller_config(&p, s.certify(&p).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let x = p.state_box.sample(&mut rng);
        let state = init_theta(&cfg, &x);
        let (Ok((_, two)), Ok((_, all))) = (solve_two_stage(&p, &cfg, &state, &x), solve_enumerated(&p, &cfg, &state, &x)) else {
            continue;
        };
        assert!(
            all.v_star <= two.v_star + 1e-6 * (1.0 + two.v_star),
            "x = {x:?}: enumerated {} vs two-stage {}",
            all.v_star,
            two.v_star
        );
        assert!(all.q_star >= 1 && all.q_star <= cfg.n_p());
        assert_eq!(two.stage1_j, Some(two.q_star));
    }
}
