//! Scenario CSV loader. Format: header `prob,d,c_1..c_n`, one scenario per
//! row; probabilities must sum to one within 1e-9.

use crate::error::{Result, SsdError};
use crate::linalg::Vector;
use crate::problems::risk::ScenarioSet;
use crate::scalar::Scalar;
use std::path::Path;

pub fn load_scenarios<T: Scalar>(path: &Path) -> Result<ScenarioSet<T>> {
    let text = std::fs::read_to_string(path)?;
    parse_scenarios(&text)
}

pub fn parse_scenarios<T: Scalar>(text: &str) -> Result<ScenarioSet<T>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| SsdError::InvalidConfig("empty scenario csv".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "prob" || cols[1] != "d" {
        return Err(SsdError::InvalidConfig(
            "scenario csv header must be `prob,d,c_1..c_n`".into(),
        ));
    }
    for (j, c) in cols.iter().enumerate().skip(2) {
        let expect = format!("c_{}", j - 1);
        if *c != expect {
            return Err(SsdError::InvalidConfig(format!(
                "scenario csv column {} must be `{expect}`, found `{c}`",
                j + 1
            )));
        }
    }
    let dim = cols.len() - 2;
    let mut probs = Vec::new();
    let mut offsets = Vec::new();
    let mut costs = Vec::new();
    for (ln, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != dim + 2 {
            return Err(SsdError::InvalidConfig(format!(
                "scenario row {} has {} cells, expected {}",
                ln + 2,
                cells.len(),
                dim + 2
            )));
        }
        let num = |s: &str| -> Result<T> {
            s.parse::<f64>()
                .map(T::c)
                .map_err(|e| SsdError::InvalidConfig(format!("scenario number `{s}`: {e}")))
        };
        probs.push(num(cells[0])?);
        offsets.push(num(cells[1])?);
        costs.push(Vector::from_iter(
            cells[2..]
                .iter()
                .map(|s| num(s))
                .collect::<Result<Vec<T>>>()?,
        ));
    }
    ScenarioSet::new(costs, offsets, probs)
}

pub fn scenarios_to_csv<T: Scalar>(scen: &ScenarioSet<T>) -> String {
    let dim = scen.dim();
    let mut out = String::from("prob,d");
    for j in 1..=dim {
        out.push_str(&format!(",c_{j}"));
    }
    out.push('\n');
    for s in 0..scen.len() {
        out.push_str(&format!("{},{}", scen.probabilities[s], scen.offsets[s]));
        for j in 0..dim {
            out.push_str(&format!(",{}", scen.costs[s][j]));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects() {
        let good = "prob,d,c_1,c_2\n0.5,1.0,2.0,3.0\n0.5,-1.0,0.0,1.0\n";
        let s: ScenarioSet<f64> = parse_scenarios(good).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.dim(), 2);
        let back = scenarios_to_csv(&s);
        let s2: ScenarioSet<f64> = parse_scenarios(&back).unwrap();
        assert_eq!(s2.costs[1][1], 1.0);

        // non-normalized probabilities are rejected
        let bad = "prob,d,c_1\n0.5,0.0,1.0\n0.6,0.0,1.0\n";
        assert!(parse_scenarios::<f64>(bad).is_err());
        // wrong header is rejected
        let bad = "p,d,c_1\n1.0,0.0,1.0\n";
        assert!(parse_scenarios::<f64>(bad).is_err());
    }
}
