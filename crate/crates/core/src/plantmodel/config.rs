//! JSON network configuration and the bundled synthetic networks.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ConstraintSets, DemandProfile, LinearSystem, ModelError, TariffModel, TerminalSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TariffConfig {
    pub low: f64,
    pub high: f64,
    /// First hour of the high-price period; hours before it are low-price.
    pub switch_hour: usize,
    pub noise_width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SteadyStateKeyword {
    #[serde(rename = "midpoint")]
    Midpoint,
}

/// Terminal steady state: explicit levels or the midpoint of the level bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SteadyState {
    Point(Vec<f64>),
    Keyword(SteadyStateKeyword),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "Bu")]
    pub bu: Vec<Vec<f64>>,
    #[serde(rename = "Bd")]
    pub bd: Vec<Vec<f64>>,
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
    #[serde(rename = "Omega")]
    pub omega: Vec<Vec<f64>>,
    pub kappa: f64,
    pub x_s: SteadyState,
    pub demand_multiplier: Vec<f64>,
    pub d_bar: Vec<f64>,
    pub tariff: TariffConfig,
    /// Initial levels; the terminal steady state when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

fn matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>, ModelError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(ModelError::Config(format!("{name} has rows of unequal length")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn identity_rows(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// Signed incidence columns for pumps moving water `from -> to` (`None` is
/// an external source).
fn incidence(tanks: usize, pumps: &[(Option<usize>, usize)], area: &[f64]) -> Vec<Vec<f64>> {
    let mut rows = vec![vec![0.0; pumps.len()]; tanks];
    for (j, &(from, to)) in pumps.iter().enumerate() {
        rows[to][j] += 1.0 / area[to];
        if let Some(f) = from {
            rows[f][j] -= 1.0 / area[f];
        }
    }
    rows
}

fn demand_rows(area: &[f64]) -> Vec<Vec<f64>> {
    let n = area.len();
    (0..n).map(|i| (0..n).map(|j| if i == j { -1.0 / area[i] } else { 0.0 }).collect()).collect()
}

/// Diurnal demand shape: night trough, morning and evening peaks.
const DIURNAL: [f64; 24] = [
    0.55, 0.45, 0.40, 0.40, 0.45, 0.60, 0.95, 1.40, 1.60, 1.45, 1.25, 1.15, 1.10, 1.05, 1.00, 1.00, 1.05, 1.20,
    1.45, 1.55, 1.40, 1.15, 0.90, 0.70,
];

impl NetworkConfig {
    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ModelError::Config(e.to_string()))?;
        cfg.system()?;
        cfg.constraints()?;
        cfg.demand()?;
        cfg.tariff(0)?;
        cfg.initial_state()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn system(&self) -> Result<LinearSystem, ModelError> {
        LinearSystem::new(matrix(&self.a, "A")?, matrix(&self.bu, "Bu")?, matrix(&self.bd, "Bd")?)
    }

    pub fn steady_state(&self) -> DVector<f64> {
        match &self.x_s {
            SteadyState::Point(v) => DVector::from_vec(v.clone()),
            SteadyState::Keyword(SteadyStateKeyword::Midpoint) => {
                DVector::from_fn(self.x_lo.len(), |i, _| 0.5 * (self.x_lo[i] + self.x_hi[i]))
            }
        }
    }

    pub fn constraints(&self) -> Result<ConstraintSets, ModelError> {
        let terminal = TerminalSet::new(matrix(&self.omega, "Omega")?, self.kappa, self.steady_state())?;
        let cons = ConstraintSets::new(
            DVector::from_vec(self.x_lo.clone()),
            DVector::from_vec(self.x_hi.clone()),
            DVector::from_vec(self.u_lo.clone()),
            DVector::from_vec(self.u_hi.clone()),
            terminal,
        )?;
        cons.check_system(&self.system()?)?;
        Ok(cons)
    }

    pub fn demand(&self) -> Result<DemandProfile, ModelError> {
        if self.d_bar.len() != self.bd.first().map_or(0, Vec::len) {
            return Err(ModelError::Config(format!(
                "d_bar has {} entries but Bd has {} columns",
                self.d_bar.len(),
                self.bd.first().map_or(0, Vec::len)
            )));
        }
        DemandProfile::new(self.demand_multiplier.clone(), DVector::from_vec(self.d_bar.clone()))
    }

    pub fn tariff(&self, seed: u64) -> Result<TariffModel, ModelError> {
        let t = &self.tariff;
        TariffModel::two_level(t.low, t.high, t.switch_hour, t.noise_width, seed)
    }

    pub fn initial_state(&self) -> Result<DVector<f64>, ModelError> {
        let x0 = self.x0.clone().map(DVector::from_vec).unwrap_or_else(|| self.steady_state());
        if x0.len() != self.x_lo.len() {
            return Err(ModelError::Config(format!("x0 has {} entries, expected {}", x0.len(), self.x_lo.len())));
        }
        Ok(x0)
    }

    /// Integrator tank network (`A = I`) with the given pumps, tank areas,
    /// level/flow bounds and average demands; every tank has one demand node.
    #[allow(clippy::too_many_arguments)]
    fn tank_network(
        pumps: &[(Option<usize>, usize)],
        area: &[f64],
        x_bounds: (Vec<f64>, Vec<f64>),
        u_hi: Vec<f64>,
        d_bar: Vec<f64>,
        tariff: TariffConfig,
    ) -> Self {
        let n = area.len();
        Self {
            a: identity_rows(n),
            bu: incidence(n, pumps, area),
            bd: demand_rows(area),
            x_lo: x_bounds.0,
            x_hi: x_bounds.1,
            u_lo: vec![0.0; pumps.len()],
            u_hi,
            omega: identity_rows(n),
            kappa: 0.8,
            x_s: SteadyState::Keyword(SteadyStateKeyword::Midpoint),
            demand_multiplier: DIURNAL.to_vec(),
            d_bar,
            tariff,
            x0: None,
        }
    }

    /// Synthetic stand-in for a municipal network: six tanks, seven pumps,
    /// six demand nodes.
    pub fn richmond_like() -> Self {
        let pumps = [
            (None, 0),
            (None, 1),
            (Some(0), 2),
            (Some(1), 3),
            (Some(2), 4),
            (Some(3), 5),
            (None, 4),
        ];
        let area = [4.0, 3.0, 2.5, 2.0, 2.0, 1.5];
        Self::tank_network(
            &pumps,
            &area,
            (vec![1.0; 6], vec![6.0, 6.0, 5.0, 5.0, 4.5, 4.5]),
            vec![9.0, 7.0, 6.0, 4.5, 3.0, 2.5, 2.0],
            vec![1.0, 0.8, 0.9, 0.7, 0.8, 0.6],
            TariffConfig {
                low: 60.0,
                high: 130.0,
                switch_hour: 7,
                noise_width: 40.0,
            },
        )
    }

    /// Three tanks fed by three pumps, one of which transfers between tanks.
    pub fn three_tank() -> Self {
        Self::tank_network(
            &[(None, 0), (None, 1), (Some(0), 2)],
            &[2.0, 1.5, 1.0],
            (vec![1.0; 3], vec![5.0; 3]),
            vec![4.0, 2.5, 2.0],
            vec![0.9, 0.7, 0.5],
            TariffConfig {
                low: 60.0,
                high: 130.0,
                switch_hour: 7,
                noise_width: 40.0,
            },
        )
    }

    /// One tank, one pump: small enough for exhaustive checks.
    pub fn single_tank() -> Self {
        Self::tank_network(
            &[(None, 0)],
            &[1.0],
            (vec![0.0], vec![4.0]),
            vec![2.0],
            vec![0.6],
            TariffConfig {
                low: 1.0,
                high: 2.0,
                switch_hour: 7,
                noise_width: 1.0,
            },
        )
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "richmond-like" => Some(Self::richmond_like()),
            "three-tank" => Some(Self::three_tank()),
            "single-tank" => Some(Self::single_tank()),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plantmodel::steady_input;

    #[test]
    fn presets_are_consistent() {
        for name in ["richmond-like", "three-tank", "single-tank"] {
            let cfg = NetworkConfig::preset(name).unwrap();
            let back = NetworkConfig::from_json(&cfg.to_json()).unwrap();
            assert_eq!(back, cfg);
            let sys = cfg.system().unwrap();
            let cons = cfg.constraints().unwrap();
            assert!(steady_input(&sys, &cons, cfg.demand().unwrap().d_bar()).is_some(), "{name}");
        }
        let r = NetworkConfig::richmond_like().system().unwrap();
        assert_eq!((r.states(), r.inputs(), r.disturbances()), (6, 7, 6));
    }

    #[test]
    fn explicit_steady_state_and_errors() {
        let mut cfg = NetworkConfig::single_tank();
        cfg.x_s = SteadyState::Point(vec![1.5]);
        let json = cfg.to_json();
        assert!(json.contains("1.5"));
        assert_eq!(NetworkConfig::from_json(&json).unwrap().steady_state()[0], 1.5);
        assert!(NetworkConfig::single_tank().to_json().contains("\"midpoint\""));

        cfg.d_bar = vec![1.0, 2.0];
        assert!(NetworkConfig::from_json(&cfg.to_json()).is_err());
        assert!(NetworkConfig::from_json("{}").is_err());
    }
}
