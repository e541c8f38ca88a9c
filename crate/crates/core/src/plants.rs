//! Built-in plants and the JSON plant description.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{from_rows, serde_matrix};
use crate::model::{BoxSet, Dynamics, PlantData, PlantModel};

/// Unicycle-like nonholonomic integrator with a multiplicative disturbance on
/// the first input channel.
#[derive(Debug, Clone, Copy, Default)]
pub struct Nonholonomic;

impl Dynamics for Nonholonomic {
    fn eval(&self, x: &[f64], u: &[f64], w: &[f64], out: &mut [f64]) {
        out[0] = x[0] + (1.0 + w[0]) * u[0];
        out[1] = x[1] + u[1];
        out[2] = x[2] + x[0] * u[1];
    }

    fn jacobians(
        &self,
        x: &[f64],
        u: &[f64],
        w: &[f64],
        jx: &mut DMatrix<f64>,
        ju: &mut DMatrix<f64>,
    ) {
        jx.fill(0.0);
        ju.fill(0.0);
        jx[(0, 0)] = 1.0;
        jx[(1, 1)] = 1.0;
        jx[(2, 2)] = 1.0;
        jx[(2, 0)] = u[1];
        ju[(0, 0)] = 1.0 + w[0];
        ju[(1, 1)] = 1.0;
        ju[(2, 1)] = x[0];
    }
}

/// Physical parameters of the quadruple-tank process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TankParams {
    /// Discharge constants of tanks 1..4 (m^2).
    pub a: [f64; 4],
    /// Tank cross-section (m^2).
    pub section: f64,
    /// Three-way valve parameters.
    pub gamma_a: f64,
    pub gamma_b: f64,
    /// Sampling time (s).
    pub ts: f64,
    pub g: f64,
}

impl Default for TankParams {
    fn default() -> Self {
        Self {
            a: [1.2938e-4, 1.5041e-4, 1.0208e-4, 9.3258e-5],
            section: 0.06,
            gamma_a: 0.3,
            gamma_b: 0.4,
            ts: 15.0,
            g: 9.81,
        }
    }
}

impl TankParams {
    /// Tank levels that are an exact equilibrium for pump flows `q` (m^3/h).
    pub fn equilibrium_levels(&self, q: [f64; 2]) -> [f64; 4] {
        let g2 = 2.0 * self.g;
        let level = |flow: f64, a: f64| (flow / a).powi(2) / g2;
        let h3 = level((1.0 - self.gamma_b) * q[1] / 3600.0, self.a[2]);
        let h4 = level((1.0 - self.gamma_a) * q[0] / 3600.0, self.a[3]);
        let h1 = level(
            self.a[2] * (g2 * h3).sqrt() + self.gamma_a * q[0] / 3600.0,
            self.a[0],
        );
        let h2 = level(
            self.a[3] * (g2 * h4).sqrt() + self.gamma_b * q[1] / 3600.0,
            self.a[1],
        );
        [h1, h2, h3, h4]
    }
}

/// Forward-Euler quadruple tank; the valve parameters are perturbed by `w`.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadrupleTank {
    pub params: TankParams,
}

impl QuadrupleTank {
    #[inline]
    fn outflow(&self, i: usize, h: f64) -> f64 {
        let p = &self.params;
        p.a[i] * p.ts / p.section * (2.0 * p.g * h.max(0.0)).sqrt()
    }

    #[inline]
    fn outflow_slope(&self, i: usize, h: f64) -> f64 {
        let p = &self.params;
        if h > 0.0 {
            p.a[i] * p.ts / p.section * p.g / (2.0 * p.g * h).sqrt()
        } else {
            0.0
        }
    }
}

impl Dynamics for QuadrupleTank {
    fn eval(&self, x: &[f64], u: &[f64], w: &[f64], out: &mut [f64]) {
        let p = &self.params;
        let k = p.ts / (3600.0 * p.section);
        let (o1, o2, o3, o4) = (
            self.outflow(0, x[0]),
            self.outflow(1, x[1]),
            self.outflow(2, x[2]),
            self.outflow(3, x[3]),
        );
        out[0] = x[0] - o1 + o3 + (p.gamma_a + w[0]) * k * u[0];
        out[1] = x[1] - o2 + o4 + (p.gamma_b + w[1]) * k * u[1];
        out[2] = x[2] - o3 + (1.0 - p.gamma_b - w[1]) * k * u[1];
        out[3] = x[3] - o4 + (1.0 - p.gamma_a - w[0]) * k * u[0];
    }

    fn jacobians(
        &self,
        x: &[f64],
        _u: &[f64],
        w: &[f64],
        jx: &mut DMatrix<f64>,
        ju: &mut DMatrix<f64>,
    ) {
        let p = &self.params;
        let k = p.ts / (3600.0 * p.section);
        jx.fill(0.0);
        ju.fill(0.0);
        let s: Vec<f64> = (0..4).map(|i| self.outflow_slope(i, x[i])).collect();
        jx[(0, 0)] = 1.0 - s[0];
        jx[(0, 2)] = s[2];
        jx[(1, 1)] = 1.0 - s[1];
        jx[(1, 3)] = s[3];
        jx[(2, 2)] = 1.0 - s[2];
        jx[(3, 3)] = 1.0 - s[3];
        ju[(0, 0)] = (p.gamma_a + w[0]) * k;
        ju[(1, 1)] = (p.gamma_b + w[1]) * k;
        ju[(2, 1)] = (1.0 - p.gamma_b - w[1]) * k;
        ju[(3, 0)] = (1.0 - p.gamma_a - w[0]) * k;
    }
}

/// `x+ = A x + B u + E w + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPlant {
    #[serde(with = "serde_matrix")]
    pub a: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub b: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub e: DMatrix<f64>,
    #[serde(default)]
    pub c: Option<Vec<f64>>,
}

impl Dynamics for LinearPlant {
    fn eval(&self, x: &[f64], u: &[f64], w: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = self.c.as_ref().map_or(0.0, |c| c[i]);
            for (a, xa) in x.iter().enumerate() {
                acc += self.a[(i, a)] * xa;
            }
            for (b, ub) in u.iter().enumerate() {
                acc += self.b[(i, b)] * ub;
            }
            for (c, wc) in w.iter().enumerate() {
                acc += self.e[(i, c)] * wc;
            }
            *o = acc;
        }
    }

    fn jacobians(
        &self,
        _x: &[f64],
        _u: &[f64],
        _w: &[f64],
        jx: &mut DMatrix<f64>,
        ju: &mut DMatrix<f64>,
    ) {
        jx.copy_from(&self.a);
        ju.copy_from(&self.b);
    }
}

/// Dynamics given by a closure; Jacobians by finite differences.
pub struct FnDynamics<F>(pub F);

impl<F> Dynamics for FnDynamics<F>
where
    F: Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync,
{
    fn eval(&self, x: &[f64], u: &[f64], w: &[f64], out: &mut [f64]) {
        (self.0)(x, u, w, out)
    }
}

/// The perturbed nonholonomic plant regulated to the origin.
pub fn make_nonholonomic() -> PlantModel {
    let data = PlantData {
        name: "nonholonomic".into(),
        state_box: BoxSet::symmetric(&[4.0, 10.0, 10.0]),
        input_box: BoxSet::symmetric(&[8.0, 0.5]),
        dist_box: BoxSet::symmetric(&[0.025]),
        lx: DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.5, 0.0, 1.0]),
        lu: DMatrix::from_row_slice(3, 2, &[1.025, 0.0, 0.0, 1.0, 0.0, 4.0]),
        lw: DMatrix::from_row_slice(3, 1, &[8.0, 0.0, 0.0]),
        x_ref: DVector::zeros(3),
        u_ref: DVector::zeros(2),
    };
    PlantModel::new(Arc::new(Nonholonomic), data).expect("built-in nonholonomic plant is valid")
}

/// Pump flows at the four-tank operating point (m^3/h).
pub const TANK_U_REF: [f64; 2] = [1.63, 2.0];

/// The quadruple-tank plant regulated to the equilibrium for [`TANK_U_REF`].
///
/// The equilibrium levels are recomputed from the pump flows so that
/// `f(x_ref, u_ref, 0) = x_ref` holds to machine precision; they agree with
/// (0.6702, 0.6549, 0.5435, 0.5887) m to within 3e-5.
pub fn make_quadruple_tank() -> PlantModel {
    let params = TankParams::default();
    let x_ref = params.equilibrium_levels(TANK_U_REF);
    let data = PlantData {
        name: "quadruple_tank".into(),
        state_box: BoxSet::new(vec![0.2; 4], vec![1.36, 1.36, 1.30, 1.30]).unwrap(),
        input_box: BoxSet::new(vec![0.0, 0.0], vec![3.6, 4.0]).unwrap(),
        dist_box: BoxSet::symmetric(&[0.0325, 0.0325]),
        lx: DMatrix::from_row_slice(
            4,
            4,
            &[
                0.95, 0.0, 0.18, 0.0, //
                0.0, 0.95, 0.0, 0.15, //
                0.0, 0.0, 0.96, 0.0, //
                0.0, 0.0, 0.0, 0.96,
            ],
        ),
        lu: DMatrix::from_row_slice(4, 2, &[0.025, 0.0, 0.0, 0.035, 0.0, 0.17, 0.17, 0.0]),
        lw: DMatrix::from_row_slice(4, 2, &[0.25, 0.0, 0.0, 0.275, 0.0, 0.275, 0.25, 0.0]),
        x_ref: DVector::from_column_slice(&x_ref),
        u_ref: DVector::from_column_slice(&TANK_U_REF),
    };
    PlantModel::new(Arc::new(QuadrupleTank { params }), data)
        .expect("built-in quadruple-tank plant is valid")
}

/// One-step deadbeat toy: `x+ = x + u + w` with inputs large enough to zero
/// any admissible state in one step.
pub fn make_deadbeat() -> PlantModel {
    let plant = LinearPlant {
        a: DMatrix::identity(2, 2),
        b: DMatrix::identity(2, 2),
        e: DMatrix::identity(2, 2),
        c: None,
    };
    let data = PlantData {
        name: "deadbeat".into(),
        state_box: BoxSet::symmetric(&[1.0, 1.0]),
        input_box: BoxSet::symmetric(&[2.0, 2.0]),
        dist_box: BoxSet::symmetric(&[0.01, 0.01]),
        lx: DMatrix::identity(2, 2),
        lu: DMatrix::identity(2, 2),
        lw: DMatrix::identity(2, 2),
        x_ref: DVector::zeros(2),
        u_ref: DVector::zeros(2),
    };
    PlantModel::new(Arc::new(plant), data).expect("built-in deadbeat plant is valid")
}

pub fn builtin(name: &str) -> Result<PlantModel> {
    match name {
        "nonholonomic" => Ok(make_nonholonomic()),
        "quadruple_tank" | "four_tank" => Ok(make_quadruple_tank()),
        "deadbeat" => Ok(make_deadbeat()),
        other => Err(Error::UnknownPreset(other.to_string())),
    }
}

/// Plant section of a config file: either a built-in referenced by name
/// (optionally with a different disturbance bound) or a linear plant given
/// in full.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlantConfig {
    Builtin {
        builtin: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dist_bound: Option<Vec<f64>>,
    },
    Linear(Box<LinearPlantConfig>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearPlantConfig {
    pub name: String,
    pub dynamics: LinearPlant,
    pub state_box: BoxSet,
    pub input_box: BoxSet,
    pub dist_box: BoxSet,
    pub lx: Vec<Vec<f64>>,
    pub lu: Vec<Vec<f64>>,
    pub lw: Vec<Vec<f64>>,
    pub x_ref: Vec<f64>,
    pub u_ref: Vec<f64>,
}

impl PlantConfig {
    pub fn builtin(name: &str) -> Self {
        PlantConfig::Builtin {
            builtin: name.to_string(),
            dist_bound: None,
        }
    }

    pub fn build(&self) -> Result<PlantModel> {
        match self {
            PlantConfig::Builtin {
                builtin: name,
                dist_bound,
            } => {
                let model = builtin(name)?;
                match dist_bound {
                    Some(w) => model.with_dist_bound(w),
                    None => Ok(model),
                }
            }
            PlantConfig::Linear(cfg) => {
                let n = cfg.state_box.dim();
                let m = cfg.input_box.dim();
                let r = cfg.dist_box.dim();
                let d = &cfg.dynamics;
                if d.a.shape() != (n, n) || d.b.shape() != (n, m) || d.e.shape() != (n, r) {
                    return Err(Error::InvalidModel(
                        "linear dynamics matrices do not match the box dimensions".into(),
                    ));
                }
                if d.c.as_ref().is_some_and(|c| c.len() != n) {
                    return Err(Error::InvalidModel("offset c has wrong length".into()));
                }
                let data = PlantData {
                    name: cfg.name.clone(),
                    state_box: cfg.state_box.clone(),
                    input_box: cfg.input_box.clone(),
                    dist_box: cfg.dist_box.clone(),
                    lx: from_rows(&cfg.lx)?,
                    lu: from_rows(&cfg.lu)?,
                    lw: from_rows(&cfg.lw)?,
                    x_ref: DVector::from_column_slice(&cfg.x_ref),
                    u_ref: DVector::from_column_slice(&cfg.u_ref),
                };
                PlantModel::new(Arc::new(d.clone()), data)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{audit_lipschitz, fd_jacobians};

    #[test]
    fn nonholonomic_zero_input_freezes_state() {
        let p = make_nonholonomic();
        let x = p.step(&[-4.0, 10.0, 4.0], &[0.0, 0.0], &[0.0]).unwrap();
        assert_eq!(x, vec![-4.0, 10.0, 4.0]);
    }

    #[test]
    fn nonholonomic_hand_evaluation() {
        let p = make_nonholonomic();
        let x = p.step(&[1.0, 0.0, 0.0], &[1.0, 0.5], &[0.0]).unwrap();
        assert_eq!(x, vec![2.0, 0.5, 0.5]);
    }

    #[test]
    fn step_rejects_wrong_dimensions() {
        let p = make_nonholonomic();
        assert!(matches!(
            p.step(&[0.0, 0.0], &[0.0, 0.0], &[0.0]),
            Err(Error::Dimension { .. })
        ));
        assert!(p.step(&[0.0; 3], &[0.0], &[0.0]).is_err());
        assert!(p.step(&[0.0; 3], &[0.0; 2], &[]).is_err());
    }

    #[test]
    fn nonholonomic_lipschitz_tables() {
        let p = make_nonholonomic();
        assert_eq!(p.lx[(2, 0)], 0.5);
        assert_eq!(p.lu[(0, 0)], 1.025);
        assert_eq!(p.lw[(0, 0)], 8.0);
    }

    #[test]
    fn tank_lipschitz_tables() {
        let p = make_quadruple_tank();
        assert_eq!(p.lx[(0, 2)], 0.18);
        assert_eq!(p.lu[(2, 1)], 0.17);
        assert_eq!(p.lw[(1, 1)], 0.275);
        assert_eq!(p.dist_bound(), &[0.0325, 0.0325]);
    }

    #[test]
    fn tank_equilibrium_is_exact_and_close_to_rounded_levels() {
        let p = make_quadruple_tank();
        assert!(p.equilibrium_residual() <= 1e-12);
        let rounded = [0.6702, 0.6549, 0.5435, 0.5887];
        for (a, b) in p.x_ref.iter().zip(rounded) {
            assert!((a - b).abs() < 5e-5, "{a} vs {b}");
        }
        // the rounded levels are an equilibrium to within 1e-3 as well
        let x = p.step(&rounded, &TANK_U_REF, &[0.0, 0.0]).unwrap();
        for (a, b) in x.iter().zip(rounded) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        for plant in [make_nonholonomic(), make_quadruple_tank()] {
            let (n, m) = (plant.n(), plant.m());
            let x = plant.state_box.center();
            let u = plant.input_box.center();
            let w = vec![0.01; plant.r()];
            let mut jx = DMatrix::zeros(n, n);
            let mut ju = DMatrix::zeros(n, m);
            let mut fx = DMatrix::zeros(n, n);
            let mut fu = DMatrix::zeros(n, m);
            plant.jacobians(&x, &u, &w, &mut jx, &mut ju);
            fd_jacobians(plant.dynamics(), &x, &u, &w, &mut fx, &mut fu);
            assert!((jx - fx).amax() < 1e-7, "{}", plant.name);
            assert!((ju - fu).amax() < 1e-7, "{}", plant.name);
        }
    }

    #[test]
    fn shipped_plants_pass_lipschitz_audit() {
        for plant in [make_nonholonomic(), make_quadruple_tank()] {
            let audit = audit_lipschitz(&plant, 1000, 7);
            assert_eq!(audit.violations, 0, "{}: {audit:?}", plant.name);
        }
    }

    #[test]
    fn step_is_referentially_transparent() {
        let p = make_quadruple_tank();
        let x = [1.0, 0.9, 0.8, 0.7];
        let a = p.step(&x, &[1.0, 2.0], &[0.01, -0.02]).unwrap();
        let b = p.step(&x, &[1.0, 2.0], &[0.01, -0.02]).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn invalid_models_are_rejected() {
        let base = make_nonholonomic();
        let mut data = PlantData {
            name: "bad".into(),
            state_box: base.state_box.clone(),
            input_box: base.input_box.clone(),
            dist_box: BoxSet::new(vec![-0.1], vec![0.2]).unwrap(),
            lx: base.lx.clone(),
            lu: base.lu.clone(),
            lw: base.lw.clone(),
            x_ref: base.x_ref.clone(),
            u_ref: base.u_ref.clone(),
        };
        assert!(PlantModel::new(Arc::new(Nonholonomic), data.clone()).is_err());
        data.dist_box = BoxSet::symmetric(&[0.1]);
        data.lx[(0, 1)] = -1.0;
        assert!(PlantModel::new(Arc::new(Nonholonomic), data.clone()).is_err());
        data.lx[(0, 1)] = 0.0;
        data.x_ref[0] = 1.0;
        data.u_ref[0] = 1.0;
        assert!(PlantModel::new(Arc::new(Nonholonomic), data).is_err());
    }

    #[test]
    fn plant_config_parses_builtin_and_linear() {
        let cfg: PlantConfig =
            serde_json::from_str(r#"{"builtin": "nonholonomic", "dist_bound": [0.0]}"#).unwrap();
        let p = cfg.build().unwrap();
        assert_eq!(p.dist_bound(), &[0.0]);

        let json = r#"{
            "name": "scalar",
            "dynamics": {"a": [[1.0]], "b": [[1.0]], "e": [[1.0]]},
            "state_box": {"lower": [-1.0], "upper": [1.0]},
            "input_box": {"lower": [-0.1], "upper": [0.1]},
            "dist_box": {"lower": [-0.2], "upper": [0.2]},
            "lx": [[1.0]], "lu": [[1.0]], "lw": [[1.0]],
            "x_ref": [0.0], "u_ref": [0.0]
        }"#;
        let cfg: PlantConfig = serde_json::from_str(json).unwrap();
        let p = cfg.build().unwrap();
        assert_eq!(p.step(&[0.5], &[0.1], &[0.2]).unwrap(), vec![0.8]);
    }
}
