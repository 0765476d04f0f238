//! Cessna Citation longitudinal dynamics at 5000 m and 128.2 m/s.
//!
//! The plant matrices are the discrete-time model sampled at 0.5 s. Outputs
//! are addressed by row of `C`: row 0 selects the pitch angle, row 1 the
//! altitude state and row 2 is `128.2·(θ − α)`, the altitude rate.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::mpc::{Bounds, LtiModel, MpcSpec};
use crate::rpm::RpmConfig;

pub const PITCH: usize = 0;
pub const ALTITUDE: usize = 1;
pub const ALTITUDE_RATE: usize = 2;

/// Elevator deflection limit, degrees.
pub const ELEVATOR_LIMIT: f64 = 15.0;
/// Elevator slew-rate limit, degrees per second.
pub const SLEW_LIMIT: f64 = 30.0;
/// Pitch-angle limit, degrees.
pub const PITCH_LIMIT: f64 = 20.0;

pub const A: [[f64; 4]; 4] = [
    [0.240, 0.0, 0.1787, 0.0],
    [-0.372, 1.000, 0.270, 0.0],
    [-0.990, 0.0, 0.138, 0.0],
    [-48.935, 64.100, 2.399, 1.000],
];
pub const B: [[f64; 1]; 4] = [[-1.234], [-1.438], [-4.482], [-1.799]];
pub const C: [[f64; 4]; 3] = [
    [0.0, 1.000, 0.0, 0.0],
    [0.0, 0.0, 0.0, 1.000],
    [-128.200, 128.200, 0.0, 0.0],
];
pub const D: [[f64; 1]; 3] = [[0.0], [0.0], [0.0]];

pub fn citation_model(ts: f64) -> Result<LtiModel> {
    LtiModel::new(Matrix::from_rows(&A), Matrix::from_rows(&B), Matrix::from_rows(&C), Matrix::from_rows(&D), ts)
}

/// Altitude reference equal to `value` from `step` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefSegment {
    pub step: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(rename = "N")]
    pub horizon: usize,
    #[serde(rename = "Ts")]
    pub ts: f64,
    #[serde(rename = "T_sim")]
    pub t_sim: usize,
    /// Piecewise-constant profile; zero before the first segment.
    pub altitude_ref: Vec<RefSegment>,
    /// Diagonal output weights (pitch, altitude, altitude rate).
    #[serde(rename = "Q")]
    pub q: [f64; 3],
    #[serde(rename = "R")]
    pub r: f64,
    pub slack_tol: Option<f64>,
    pub conv_tol: Option<f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            ts: 0.5,
            t_sim: 200,
            altitude_ref: vec![RefSegment { step: 0, value: 400.0 }],
            q: [0.0, 1.0, 0.0],
            r: 10.0,
            slack_tol: None,
            conv_tol: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.t_sim == 0 {
            return Err(Error::InvalidConfig("N and T_sim must be at least 1".into()));
        }
        if !(self.ts.is_finite() && self.ts > 0.0) {
            return Err(Error::InvalidConfig("Ts must be positive".into()));
        }
        if self.q.iter().any(|&w| !(w.is_finite() && w >= 0.0)) {
            return Err(Error::InvalidConfig("Q weights must be nonnegative".into()));
        }
        if !(self.r.is_finite() && self.r > 0.0) {
            return Err(Error::InvalidConfig("R must be positive".into()));
        }
        if self.altitude_ref.iter().any(|s| !s.value.is_finite()) {
            return Err(Error::InvalidConfig("reference values must be finite".into()));
        }
        self.rpm_config().validate()
    }

    /// Default solver settings with the scenario's tolerance overrides.
    pub fn rpm_config(&self) -> RpmConfig {
        let mut cfg = RpmConfig::default();
        if let Some(tol) = self.slack_tol {
            cfg.slack_tol = tol;
        }
        if let Some(tol) = self.conv_tol {
            cfg.conv_tol = tol;
        }
        cfg
    }

    /// Altitude reference at sample `t`.
    pub fn altitude_at(&self, t: usize) -> f64 {
        self.altitude_ref
            .iter()
            .filter(|s| s.step <= t)
            .max_by_key(|s| s.step)
            .map_or(0.0, |s| s.value)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub spec: MpcSpec,
    pub x_init: Vector,
    pub u_init_prev: Vector,
    /// `T_sim + N` samples, so every horizon preview is covered.
    pub y_ref: Vec<Vector>,
    pub t_sim: usize,
}

pub fn aircraft_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let model = citation_model(cfg.ts)?;
    let mut y_max = [f64::INFINITY; 3];
    y_max[PITCH] = PITCH_LIMIT;
    let spec = MpcSpec::new(
        model,
        cfg.horizon,
        Matrix::diagonal(&cfg.q),
        Matrix::from_rows(&[[cfg.r]]),
        Bounds::symmetric(&[ELEVATOR_LIMIT])?,
        Bounds::symmetric(&[SLEW_LIMIT * cfg.ts])?,
        Bounds::symmetric(&y_max)?,
    )?;
    let y_ref = (0..cfg.t_sim + cfg.horizon)
        .map(|t| {
            let mut r = [0.0; 3];
            r[ALTITUDE] = cfg.altitude_at(t);
            Vector::from_slice(&r)
        })
        .collect();
    Ok(Scenario { spec, x_init: Vector::zeros(4), u_init_prev: Vector::zeros(1), y_ref, t_sim: cfg.t_sim })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::{condense, step_plant};

    #[test]
    fn model_constants() {
        let m = citation_model(0.5).unwrap();
        assert_eq!(m.a().get(0, 0), 0.240);
        assert_eq!(m.a().get(3, 0), -48.935);
        assert_eq!(m.d(), &Matrix::zeros(3, 1));
        assert_eq!(m.c().row(0), &[0.0, 1.0, 0.0, 0.0]);
        let (next, y) = step_plant(&m, &Vector::zeros(4), &Vector::from_slice(&[1.0])).unwrap();
        assert_eq!(next.as_slice(), &[-1.234, -1.438, -4.482, -1.799]);
        assert_eq!(y, Vector::zeros(3));
    }

    #[test]
    fn default_scenario_bounds() {
        let sc = aircraft_scenario(&ScenarioConfig::default()).unwrap();
        assert_eq!(sc.spec.rate.upper, vec![15.0]);
        assert_eq!(sc.spec.rate.lower, vec![-15.0]);
        assert_eq!(sc.spec.input.upper, vec![15.0]);
        assert_eq!(sc.spec.input.lower, vec![-15.0]);
        assert_eq!(sc.spec.output.upper, vec![20.0, f64::INFINITY, f64::INFINITY]);
        assert_eq!(sc.y_ref.len(), 210);
        assert_eq!(sc.y_ref[0].as_slice(), &[0.0, 400.0, 0.0]);

        let preview = &sc.y_ref[1..11];
        let qp = condense(&sc.spec, &sc.x_init, &sc.u_init_prev, preview).unwrap();
        assert_eq!(qp.dim(), 10);
        assert_eq!(qp.num_constraints(), 60);
    }

    #[test]
    fn config_json_uses_short_names() {
        let cfg = ScenarioConfig::from_json_str(
            r#"{"N": 5, "Ts": 0.25, "T_sim": 40, "altitude_ref": [{"step": 10, "value": -50}], "R": 2, "slack_tol": 1e-9}"#,
        )
        .unwrap();
        assert_eq!(cfg.horizon, 5);
        assert_eq!(cfg.altitude_at(9), 0.0);
        assert_eq!(cfg.altitude_at(10), -50.0);
        assert_eq!(cfg.q, [0.0, 1.0, 0.0]);
        assert_eq!(cfg.rpm_config().slack_tol, 1e-9);
        let sc = aircraft_scenario(&cfg).unwrap();
        assert_eq!(sc.spec.rate.upper, vec![7.5]);

        assert!(ScenarioConfig::from_json_str(r#"{"N": 0}"#).is_err());
        assert!(ScenarioConfig::from_json_str(r#"{"horizon": 3}"#).is_err());
        let round = serde_json::to_string(&ScenarioConfig::default()).unwrap();
        assert_eq!(ScenarioConfig::from_json_str(&round).unwrap(), ScenarioConfig::default());
    }
}
