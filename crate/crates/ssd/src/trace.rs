//! Per-iteration run records and their CSV form.

use crate::error::{Result, SsdError};
use crate::linalg::Vector;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    /// f(xbar_t) - f*.
    pub f_gap: f64,
    /// |x_t - x*|^2.
    pub dist_sq: f64,
    /// Gap function against the reference duals, when available.
    pub q_gap: Option<f64>,
    /// Milliseconds since the run started.
    pub wall_ms: f64,
}

/// How the wall-clock column is emitted. Real timings differ between runs,
/// so reproducible experiment output zeroes them; the in-memory trace always
/// keeps the measured values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimingMode {
    Real,
    Zeroed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace<T> {
    pub rows: Vec<TraceRow>,
    /// Ergodic output point.
    pub xbar: Vector<T>,
    /// Last iterate.
    pub x_last: Vector<T>,
}

impl<T: Scalar> RunTrace<T> {
    pub fn final_f_gap(&self) -> Option<f64> {
        self.rows.last().map(|r| r.f_gap)
    }

    pub fn final_dist_sq(&self) -> Option<f64> {
        self.rows.last().map(|r| r.dist_sq)
    }

    pub fn to_csv(&self, timing: TimingMode) -> String {
        let mut out = String::from("t,f_gap,dist_sq,q_gap,wall_ms\n");
        for r in &self.rows {
            let q = match r.q_gap {
                Some(v) => format!("{v}"),
                None => String::new(),
            };
            let w = match timing {
                TimingMode::Real => r.wall_ms,
                TimingMode::Zeroed => 0.0,
            };
            out.push_str(&format!("{},{},{},{},{}\n", r.t, r.f_gap, r.dist_sq, q, w));
        }
        out
    }

    /// Parses rows emitted by [`RunTrace::to_csv`]; xbar/x_last are not part
    /// of the CSV and come back empty.
    pub fn parse_csv(text: &str) -> Result<Vec<TraceRow>> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| SsdError::InvalidConfig("empty csv".into()))?;
        if header != "t,f_gap,dist_sq,q_gap,wall_ms" {
            return Err(SsdError::InvalidConfig(format!(
                "unexpected csv header `{header}`"
            )));
        }
        let mut rows = Vec::new();
        for (ln, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 5 {
                return Err(SsdError::InvalidConfig(format!(
                    "csv line {} malformed",
                    ln + 2
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|e| SsdError::InvalidConfig(format!("csv number `{s}`: {e}")))
            };
            rows.push(TraceRow {
                t: cells[0]
                    .parse::<usize>()
                    .map_err(|e| SsdError::InvalidConfig(format!("csv t: {e}")))?,
                f_gap: parse(cells[1])?,
                dist_sq: parse(cells[2])?,
                q_gap: if cells[3].is_empty() {
                    None
                } else {
                    Some(parse(cells[3])?)
                },
                wall_ms: parse(cells[4])?,
            });
        }
        Ok(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn csv_round_trip() {
        let trace = RunTrace::<f64> {
            rows: vec![
                TraceRow {
                    t: 1,
                    f_gap: 0.5,
                    dist_sq: 2.25,
                    q_gap: Some(0.125),
                    wall_ms: 3.5,
                },
                TraceRow {
                    t: 2,
                    f_gap: 1.0 / 3.0,
                    dist_sq: 1e-9,
                    q_gap: None,
                    wall_ms: 7.25,
                },
            ],
            xbar: array![0.0],
            x_last: array![0.0],
        };
        let csv = trace.to_csv(TimingMode::Real);
        let rows = RunTrace::<f64>::parse_csv(&csv).unwrap();
        assert_eq!(rows, trace.rows);
    }
}
