//! Scenario files and the built-in presets.
//!
//! A scenario bundles a plant, the contractive function, the candidate
//! invariant set, optional terminal ingredients, controller settings and the
//! experiment definition. Everything is plain JSON.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::contraction::{build_certificate, CertifyOptions, ContractionCertificate, GridSpec};
use crate::controller::{ControllerConfig, ControllerSettings, Formulation, XiSetting};
use crate::error::{Error, Result};
use crate::linalg::{diag, from_rows};
use crate::model::{BoxSet, PlantModel};
use crate::ocp::SolverBudget;
use crate::plants::PlantConfig;
use crate::sets::{Ellipsoid, QuadraticForm};
use crate::terminal::{bisect_beta, linearize, verify_lmi, BetaReport, LmiReport, Region, TerminalIngredients};
use crate::tightening::{compute_tightening, TighteningSequences};

/// Given terminal ingredients `(P, K, κ)`; `β` is bisected unless fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalConfig {
    pub p: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub kappa: f64,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    10_000
}

/// Where `Γ` comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaConfig {
    /// `(x - x_ref)^T P (x - x_ref)` with the given matrix.
    Shape(Vec<Vec<f64>>),
    /// `Γ = V_f`, the terminal cost.
    Terminal,
}

/// The candidate robust controlled invariant set Ω.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RcisConfig {
    StateBox,
    Box(BoxSet),
    /// `{V_f <= β}`.
    Terminal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSection {
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub xi: XiSetting,
    #[serde(default)]
    pub formulation: Formulation,
}

fn default_nu() -> f64 {
    0.99
}

fn default_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSection {
    pub x0: Vec<f64>,
    pub runs: usize,
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub plant: PlantConfig,
    /// Length of the tightening sequences.
    pub n_max: usize,
    pub gamma: GammaConfig,
    pub rcis: RcisConfig,
    #[serde(default)]
    pub terminal: Option<TerminalConfig>,
    pub grid: GridSpec,
    #[serde(default)]
    pub certify: CertifyOptions,
    #[serde(default)]
    pub budget: SolverBudget,
    pub controller: ControllerSection,
    pub experiment: ExperimentSection,
}

/// Outcome of the terminal-ingredient checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalReport {
    pub ingredients: TerminalIngredients,
    pub lmi: LmiReport,
    /// `None` when `β` was fixed in the config.
    pub beta: Option<BetaReport>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let s: Scenario = serde_json::from_str(&text)?;
        Ok(s)
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "nonholonomic" => Ok(nonholonomic()),
            "quadruple_tank" | "four_tank" => Ok(quadruple_tank()),
            "deadbeat" => Ok(deadbeat()),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }

    pub fn plant(&self) -> Result<PlantModel> {
        self.plant.build()
    }

    pub fn tightening(&self, model: &PlantModel) -> TighteningSequences {
        compute_tightening(model, self.n_max)
    }

    pub fn settings(&self) -> Result<ControllerSettings> {
        Ok(ControllerSettings {
            q: from_rows(&self.controller.q)?,
            r: from_rows(&self.controller.r)?,
            nu: self.controller.nu,
            eps: self.controller.eps,
            xi: self.controller.xi,
            formulation: self.controller.formulation,
            budget: self.budget,
        })
    }

    /// Verify the LMI and fix `β` (bisected unless given).
    pub fn terminal_report(&self, model: &PlantModel) -> Result<Option<TerminalReport>> {
        let Some(t) = &self.terminal else {
            return Ok(None);
        };
        let (a, b) = linearize(model, model.x_ref.as_slice(), model.u_ref.as_slice())?;
        let p = from_rows(&t.p)?;
        let k = from_rows(&t.k)?;
        let mut ing = TerminalIngredients::new(p, k, t.beta.unwrap_or(0.0), t.kappa, a, b)?;
        let settings = self.settings()?;
        let lmi = verify_lmi(&ing, &settings.q, &settings.r)?;
        let beta = match t.beta {
            Some(_) => None,
            None => {
                let rep = bisect_beta(model, &ing, t.samples)?;
                ing.beta = rep.beta;
                Some(rep)
            }
        };
        Ok(Some(TerminalReport {
            ingredients: ing,
            lmi,
            beta,
        }))
    }

    /// `Γ` and Ω; terminal-derived variants need the terminal report.
    pub fn gamma_and_rcis(&self, model: &PlantModel, term: Option<&TerminalReport>) -> Result<(QuadraticForm, Region)> {
        let center = model.x_ref.as_slice().to_vec();
        let need = || {
            term.ok_or_else(|| Error::InvalidConfig("scenario refers to terminal ingredients it does not define".into()))
        };
        let form = match &self.gamma {
            GammaConfig::Shape(rows) => QuadraticForm::new(from_rows(rows)?, center.clone())?,
            GammaConfig::Terminal => QuadraticForm::new(need()?.ingredients.p.clone(), center.clone())?,
        };
        let rcis = match &self.rcis {
            RcisConfig::StateBox => Region::Box(model.state_box.clone()),
            RcisConfig::Box(b) => Region::Box(b.clone()),
            RcisConfig::Terminal => {
                let t = need()?;
                Region::Ellipsoid(Ellipsoid::new(t.ingredients.p.clone(), center, t.ingredients.beta)?)
            }
        };
        Ok((form, rcis))
    }

    /// Run the whole certification pipeline.
    pub fn certify(&self, model: &PlantModel) -> Result<ContractionCertificate> {
        let term = self.terminal_report(model)?;
        if let Some(t) = &term {
            if !t.lmi.holds() {
                log::warn!(
                    "terminal LMI minimum eigenvalue {:.3e} is below the gate; continuing with the given ingredients",
                    t.lmi.schur_min_eig
                );
            }
        }
        let (form, rcis) = self.gamma_and_rcis(model, term.as_ref())?;
        let seq = self.tightening(model);
        build_certificate(model, &form, &rcis, &seq, &self.grid, &self.budget, &self.certify)
    }

    pub fn controller_config(&self, model: &PlantModel, cert: ContractionCertificate) -> Result<ControllerConfig> {
        ControllerConfig::new(model, &self.settings()?, cert)
    }

    /// Reduced grids and sample counts for quick checks.
    pub fn smoke(mut self) -> Self {
        self.grid.per_axis = match self.plant().map(|p| p.n()) {
            Ok(3) => 12,
            Ok(4) => 5,
            _ => self.grid.per_axis.min(5),
        };
        self
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    crate::linalg::to_rows(m)
}

/// Γ shape used for the nonholonomic plant.
pub fn nonholonomic_gamma_shape() -> DMatrix<f64> {
    diag(&[1.0, 0.167, 0.167])
}

pub fn nonholonomic() -> Scenario {
    Scenario {
        plant: PlantConfig::builtin("nonholonomic"),
        n_max: 10,
        gamma: GammaConfig::Shape(rows(&nonholonomic_gamma_shape())),
        rcis: RcisConfig::StateBox,
        terminal: None,
        grid: GridSpec::new(20, 0),
        certify: CertifyOptions {
            max_horizon: Some(10),
            ..Default::default()
        },
        budget: SolverBudget::default(),
        controller: ControllerSection {
            q: rows(&diag(&[1.0; 3])),
            r: rows(&diag(&[0.01; 2])),
            nu: 0.99,
            eps: 1e-8,
            xi: XiSetting::Auto,
            formulation: Formulation::TwoStage,
        },
        experiment: ExperimentSection {
            x0: vec![-4.0, 10.0, 4.0],
            runs: 100,
            steps: 30,
            seed: 0,
        },
    }
}

/// Terminal weight for the quadruple tank.
pub const TANK_P: [[f64; 4]; 4] = [
    [6.0794, -0.9107, 1.5580, -1.9296],
    [-0.9107, 4.9770, -2.1981, 1.0145],
    [1.5580, -2.1981, 4.1999, -1.0133],
    [-1.9296, 1.0145, -1.0133, 3.3115],
];

/// Terminal gain for the quadruple tank.
pub const TANK_K: [[f64; 4]; 2] = [
    [-1.7914, -1.6219, 0.8432, -6.9335],
    [-2.2376, -2.5948, -6.7541, 0.6823],
];

pub const TANK_X0: [f64; 4] = [1.3533, 1.1751, 1.2228, 0.8863];

pub fn quadruple_tank() -> Scenario {
    Scenario {
        plant: PlantConfig::builtin("quadruple_tank"),
        n_max: 20,
        gamma: GammaConfig::Terminal,
        rcis: RcisConfig::Terminal,
        terminal: Some(TerminalConfig {
            p: TANK_P.iter().map(|r| r.to_vec()).collect(),
            k: TANK_K.iter().map(|r| r.to_vec()).collect(),
            kappa: 0.025,
            beta: None,
            samples: 10_000,
        }),
        grid: GridSpec::new(9, 0),
        certify: CertifyOptions::default(),
        budget: SolverBudget::default(),
        controller: ControllerSection {
            q: rows(&diag(&[1.0; 4])),
            r: rows(&diag(&[0.01; 2])),
            nu: 0.99,
            eps: 1e-8,
            xi: XiSetting::Auto,
            formulation: Formulation::TwoStage,
        },
        experiment: ExperimentSection {
            x0: TANK_X0.to_vec(),
            runs: 100,
            steps: 50,
            seed: 0,
        },
    }
}

pub fn deadbeat() -> Scenario {
    Scenario {
        plant: PlantConfig::builtin("deadbeat"),
        n_max: 3,
        gamma: GammaConfig::Shape(rows(&diag(&[1.0, 1.0]))),
        rcis: RcisConfig::StateBox,
        terminal: None,
        grid: GridSpec::new(5, 0),
        certify: CertifyOptions {
            containment_samples: 1000,
            invariance_samples: 500,
            ..Default::default()
        },
        budget: SolverBudget::default(),
        controller: ControllerSection {
            q: rows(&diag(&[1.0, 1.0])),
            r: rows(&diag(&[0.01, 0.01])),
            nu: 0.99,
            eps: 1e-8,
            xi: XiSetting::Auto,
            formulation: Formulation::TwoStage,
        },
        experiment: ExperimentSection {
            x0: vec![0.8, -0.5],
            runs: 10,
            steps: 10,
            seed: 0,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_json() {
        for name in ["nonholonomic", "quadruple_tank", "deadbeat"] {
            let s = Scenario::preset(name).unwrap();
            let json = serde_json::to_string_pretty(&s).unwrap();
            let back: Scenario = serde_json::from_str(&json).unwrap();
            assert_eq!(serde_json::to_string(&back).unwrap(), serde_json::to_string(&s).unwrap());
            back.plant().unwrap();
        }
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(Scenario::preset("nope"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn deadbeat_pipeline() {
        let s = deadbeat();
        let p = s.plant().unwrap();
        let cert = s.certify(&p).unwrap();
        assert_eq!(cert.n_p, 1);
        let cfg = s.controller_config(&p, cert).unwrap();
        assert!((cfg.xi - 2.0 * cfg.l_bar).abs() < 1e-9);
    }
}
