//! Scenario files: one row per scenario, `N * m` price columns named
//! `a_<step>_<input>` in step-major order.

use std::io::{Read, Write};

use nalgebra::DVector;

use super::{ModelError, Scenario};
use crate::numfmt::sig12;

pub fn scenario_header(horizon: usize, inputs: usize) -> Vec<String> {
    (0..horizon)
        .flat_map(|l| (0..inputs).map(move |j| format!("a_{l}_{j}")))
        .collect()
}

fn csv_err(e: csv::Error) -> ModelError {
    ModelError::ScenarioFile(e.to_string())
}

pub fn write_scenarios_csv<W: Write>(
    out: W,
    scenarios: &[Scenario],
    horizon: usize,
    inputs: usize,
) -> Result<(), ModelError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(scenario_header(horizon, inputs)).map_err(csv_err)?;
    for (i, s) in scenarios.iter().enumerate() {
        if s.len() != horizon * inputs {
            return Err(ModelError::ScenarioFile(format!(
                "scenario {i} has {} prices, expected {}",
                s.len(),
                horizon * inputs
            )));
        }
        w.write_record(s.prices.iter().map(|&v| sig12(v))).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads scenarios and infers `(horizon, inputs)` from the header.
pub fn read_scenarios_csv<R: Read>(input: R) -> Result<(Vec<Scenario>, usize, usize), ModelError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    let mut dims = (0usize, 0usize);
    for name in header.iter() {
        let parts: Vec<&str> = name.split('_').collect();
        let parsed = match parts.as_slice() {
            ["a", l, j] => l.parse::<usize>().ok().zip(j.parse::<usize>().ok()),
            _ => None,
        };
        let (l, j) = parsed.ok_or_else(|| ModelError::ScenarioFile(format!("bad column name {name:?}")))?;
        dims = (dims.0.max(l + 1), dims.1.max(j + 1));
    }
    let (horizon, inputs) = dims;
    let expected = scenario_header(horizon, inputs);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(ModelError::ScenarioFile(format!(
            "columns must be {} .. {} in step-major order",
            expected.first().map_or("", String::as_str),
            expected.last().map_or("", String::as_str)
        )));
    }
    let mut scenarios = Vec::new();
    for (row, record) in r.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let prices = record
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ModelError::ScenarioFile(format!("row {}: {e}", row + 1)))?;
        if prices.iter().any(|p| !p.is_finite()) {
            return Err(ModelError::ScenarioFile(format!("row {}: non-finite price", row + 1)));
        }
        scenarios.push(Scenario::new(DVector::from_vec(prices)));
    }
    if scenarios.is_empty() {
        return Err(ModelError::ScenarioFile("no scenarios".into()));
    }
    Ok((scenarios, horizon, inputs))
}
