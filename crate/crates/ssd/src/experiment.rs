//! Experiment harness: named benchmark instances, seed/horizon sweeps with
//! per-cell CSV traces, summary medians and empirical rate slopes.
//!
//! Config files are flat `key = value` text; `#` starts a comment. Keys:
//!   problem     benchmark name (see [`bench_names`])
//!   regime      det_convex | sto_convex | det_strongly_convex |
//!               sto_strongly_convex (defaults per problem)
//!   horizons    comma-separated iteration counts, strictly increasing
//!   seeds       either a count (`seeds = 20`) or an explicit list
//!   master_seed u64 root seed (default 17)
//!   out         output directory
//!   timing      zeroed | real (zeroed keeps reruns byte-identical)
//!   c           override of the strongly-convex stepsize constant
//!   d0          initial distance bound for restart runs

use crate::engine::run_ssd_with;
use crate::error::{Result, SsdError};
use crate::policies::{Regime, ScheduleOverrides};
use crate::problems::composite::{composite_instance, CompositeNoise};
use crate::problems::reference::{reference_solve, ReferenceSolution};
use crate::problems::risk::{make_risk_problem, ScenarioSet};
use crate::problems::synthetic::{
    det_nonsmooth_instance, det_smooth_instance, det_smoothable_instance, restart_instance,
    sto_strongly_convex_instance, two_layer_sto_bench,
};
use crate::rng::{derive_seed, RngFactory};
use crate::trace::{RunTrace, TimingMode};
use crate::vanilla::{run_vanilla, TwoLayerProblem, VanillaForm, VanillaRegime};
use crate::CompositionProblem;
use ndarray::array;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub problem: String,
    pub regime: Option<String>,
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
    pub master_seed: u64,
    pub out_dir: PathBuf,
    pub timing: TimingMode,
    pub c_override: Option<f64>,
    pub d0: Option<f64>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig {
            problem: String::new(),
            regime: None,
            horizons: vec![],
            seeds: vec![],
            master_seed: 17,
            out_dir: PathBuf::from("out"),
            timing: TimingMode::Zeroed,
            c_override: None,
            d0: None,
        };
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                SsdError::InvalidConfig(format!("line {}: expected `key = value`", ln + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "problem" => cfg.problem = value.to_string(),
                "regime" => cfg.regime = Some(value.to_string()),
                "horizons" => {
                    cfg.horizons = value
                        .split(',')
                        .map(|s| s.trim().parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| SsdError::InvalidConfig(format!("horizons: {e}")))?;
                }
                "seeds" => {
                    if value.contains(',') {
                        cfg.seeds = value
                            .split(',')
                            .map(|s| s.trim().parse::<u64>())
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|e| SsdError::InvalidConfig(format!("seeds: {e}")))?;
                    } else {
                        let count: u64 = value
                            .parse()
                            .map_err(|e| SsdError::InvalidConfig(format!("seeds: {e}")))?;
                        cfg.seeds = (0..count).collect();
                    }
                }
                "master_seed" => {
                    cfg.master_seed = value
                        .parse()
                        .map_err(|e| SsdError::InvalidConfig(format!("master_seed: {e}")))?;
                }
                "out" => cfg.out_dir = PathBuf::from(value),
                "timing" => {
                    cfg.timing = match value {
                        "real" => TimingMode::Real,
                        "zeroed" => TimingMode::Zeroed,
                        other => {
                            return Err(SsdError::InvalidConfig(format!(
                                "timing must be real|zeroed, found `{other}`"
                            )))
                        }
                    };
                }
                "c" => {
                    cfg.c_override = Some(
                        value
                            .parse()
                            .map_err(|e| SsdError::InvalidConfig(format!("c: {e}")))?,
                    );
                }
                "d0" => {
                    cfg.d0 = Some(
                        value
                            .parse()
                            .map_err(|e| SsdError::InvalidConfig(format!("d0: {e}")))?,
                    );
                }
                other => {
                    return Err(SsdError::InvalidConfig(format!("unknown key `{other}`")));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.problem.is_empty() {
            return Err(SsdError::InvalidConfig("missing `problem`".into()));
        }
        if self.horizons.is_empty() {
            return Err(SsdError::InvalidConfig("missing `horizons`".into()));
        }
        if !self.horizons.windows(2).all(|w| w[0] < w[1]) {
            return Err(SsdError::InvalidConfig(
                "horizons must be strictly increasing".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(SsdError::InvalidConfig("missing `seeds`".into()));
        }
        Ok(())
    }
}

/// The acceptance-scale 4-scenario cost model on dimension 2.
pub fn risk4_scenarios() -> ScenarioSet<f64> {
    ScenarioSet::new(
        vec![
            array![1.0, 0.5],
            array![-0.5, 1.5],
            array![2.0, -1.0],
            array![0.3, 0.8],
        ],
        vec![0.2, -0.1, 0.5, 0.0],
        vec![0.3, 0.3, 0.2, 0.2],
    )
    .expect("static scenario table")
}

pub enum Bench {
    Multi {
        problem: Box<CompositionProblem<f64>>,
        reference: Box<ReferenceSolution<f64>>,
        regime: Regime,
    },
    TwoLayer {
        problem: Box<TwoLayerProblem<f64>>,
        reference: Box<ReferenceSolution<f64>>,
        regime: VanillaRegime,
    },
}

pub fn bench_names() -> &'static [&'static str] {
    &[
        "det3_smooth",
        "det3_smoothable",
        "det3_nonsmooth",
        "two_layer_sto",
        "sto_strongly",
        "restart_smooth",
        "composite_det",
        "composite_sto",
        "risk4",
    ]
}

pub fn build_bench(name: &str) -> Result<Bench> {
    match name {
        "det3_smooth" => {
            let (problem, reference) = det_smooth_instance::<f64>()?;
            Ok(Bench::Multi {
                problem: Box::new(problem),
                reference: Box::new(reference),
                regime: Regime::DetConvex,
            })
        }
        "det3_smoothable" => {
            let (problem, reference) = det_smoothable_instance::<f64>()?;
            Ok(Bench::Multi {
                problem: Box::new(problem),
                reference: Box::new(reference),
                regime: Regime::DetConvex,
            })
        }
        "det3_nonsmooth" => {
            let (problem, reference) = det_nonsmooth_instance::<f64>()?;
            Ok(Bench::Multi {
                problem: Box::new(problem),
                reference: Box::new(reference),
                regime: Regime::DetConvex,
            })
        }
        "two_layer_sto" => {
            let (problem, reference) = two_layer_sto_bench::<f64>(0.4)?;
            Ok(Bench::TwoLayer {
                problem: Box::new(problem),
                reference: Box::new(reference),
                regime: VanillaRegime::Convex,
            })
        }
        "sto_strongly" => {
            let (problem, reference) = sto_strongly_convex_instance::<f64>(0.5)?;
            Ok(Bench::Multi {
                problem: Box::new(problem),
                reference: Box::new(reference),
                regime: Regime::StoStronglyConvex,
            })
        }
        "restart_smooth" => {
            let (problem, reference) = restart_instance::<f64>()?;
            Ok(Bench::Multi {
                problem: Box::new(problem),
                reference: Box::new(reference),
                regime: Regime::DetStronglyConvex,
            })
        }
        "composite_det" => {
            let (problem, reference) = composite_instance::<f64>(CompositeNoise::default())?;
            Ok(Bench::Multi {
                problem: Box::new(problem),
                reference: Box::new(reference),
                regime: Regime::DetConvex,
            })
        }
        "composite_sto" => {
            let (problem, reference) = composite_instance::<f64>(CompositeNoise {
                sigma_a: 0.3,
                sigma_g: 0.3,
            })?;
            Ok(Bench::Multi {
                problem: Box::new(problem),
                reference: Box::new(reference),
                regime: Regime::StoConvex,
            })
        }
        "risk4" => {
            let scen = risk4_scenarios();
            let problem = make_risk_problem(&scen, 0.5, 1e-2, 2.0)?;
            // reference of the smoothed objective drives the trace gaps
            let reference = reference_solve(&problem, 1e-3, 400_000)?;
            Ok(Bench::Multi {
                problem: Box::new(problem),
                reference: Box::new(reference),
                regime: Regime::StoConvex,
            })
        }
        other => Err(SsdError::InvalidConfig(format!(
            "unknown problem `{other}`"
        ))),
    }
}

/// Runs one (horizon, seed) cell of a benchmark.
pub fn run_cell(
    bench: &Bench,
    n: usize,
    cell_seed: u64,
    c_override: Option<f64>,
) -> Result<RunTrace<f64>> {
    match bench {
        Bench::Multi {
            problem,
            reference,
            regime,
        } => {
            let overrides = ScheduleOverrides {
                c: c_override,
                m_p: None,
            };
            run_ssd_with(
                problem,
                n,
                *regime,
                RngFactory::new(cell_seed),
                &overrides,
                None,
                Some(reference),
            )
        }
        Bench::TwoLayer {
            problem,
            reference,
            regime,
        } => run_vanilla(
            problem,
            n,
            *regime,
            cell_seed,
            VanillaForm::Primal,
            Some(reference),
        ),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    /// (horizon, median final f-gap, cells) sorted by horizon.
    pub rows: Vec<(usize, f64, usize)>,
}

impl Summary {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,median_f_gap,cells\n");
        for (n, gap, cells) in &self.rows {
            out.push_str(&format!("{n},{gap},{cells}\n"));
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        if header != "n,median_f_gap,cells" {
            return Err(SsdError::InvalidConfig("unexpected summary header".into()));
        }
        let mut rows = Vec::new();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 3 {
                return Err(SsdError::InvalidConfig("summary row malformed".into()));
            }
            rows.push((
                cells[0]
                    .parse()
                    .map_err(|e| SsdError::InvalidConfig(format!("summary n: {e}")))?,
                cells[1]
                    .parse()
                    .map_err(|e| SsdError::InvalidConfig(format!("summary gap: {e}")))?,
                cells[2]
                    .parse()
                    .map_err(|e| SsdError::InvalidConfig(format!("summary cells: {e}")))?,
            ));
        }
        Ok(Self { rows })
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Executes all (horizon, seed) cells of the configured benchmark, writing
/// one CSV per cell plus a summary CSV of median final gaps per horizon.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Summary> {
    config.validate()?;
    let bench = build_bench(&config.problem)?;
    if config.regime.is_some() {
        // regime overrides apply only to multilayer benches
        if let Bench::Multi { .. } = bench {
        } else {
            return Err(SsdError::InvalidConfig(
                "regime override is not supported for two-layer benches".into(),
            ));
        }
    }
    let bench = match (bench, &config.regime) {
        (
            Bench::Multi {
                problem, reference, ..
            },
            Some(r),
        ) => Bench::Multi {
            problem,
            reference,
            regime: Regime::parse(r)?,
        },
        (b, _) => b,
    };
    std::fs::create_dir_all(&config.out_dir)?;

    struct Cell {
        n: usize,
        seed: u64,
        trace: RunTrace<f64>,
    }
    let results: Mutex<Vec<Cell>> = Mutex::new(Vec::new());
    let errors: Mutex<Vec<SsdError>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for &n in &config.horizons {
            for &seed in &config.seeds {
                let bench = &bench;
                let results = &results;
                let errors = &errors;
                let c_override = config.c_override;
                let master = config.master_seed;
                scope.spawn(move || {
                    let cell_seed = derive_seed(master, &[n as u64, seed]);
                    match run_cell(bench, n, cell_seed, c_override) {
                        Ok(trace) => results.lock().unwrap().push(Cell { n, seed, trace }),
                        Err(e) => errors.lock().unwrap().push(e),
                    }
                });
            }
        }
    });
    if let Some(e) = errors.into_inner().unwrap().into_iter().next() {
        return Err(e);
    }
    let mut cells = results.into_inner().unwrap();
    cells.sort_by_key(|c| (c.n, c.seed));

    for cell in &cells {
        let path = cell_path(&config.out_dir, &config.problem, cell.n, cell.seed);
        std::fs::write(&path, cell.trace.to_csv(config.timing))?;
    }
    let mut rows = Vec::new();
    for &n in &config.horizons {
        let mut gaps: Vec<f64> = cells
            .iter()
            .filter(|c| c.n == n)
            .filter_map(|c| c.trace.final_f_gap())
            .collect();
        let count = gaps.len();
        rows.push((n, median(&mut gaps), count));
    }
    let summary = Summary { rows };
    std::fs::write(config.out_dir.join("summary.csv"), summary.to_csv())?;
    Ok(summary)
}

pub fn cell_path(dir: &Path, problem: &str, n: usize, seed: u64) -> PathBuf {
    dir.join(format!("{problem}_n{n}_s{seed}.csv"))
}

/// Least-squares slope of log(gap) against log(N).
pub fn slope_estimate(points: &[(usize, f64)]) -> Result<f64> {
    if points.len() < 3 {
        return Err(SsdError::InvalidConfig(
            "slope needs at least 3 horizons".into(),
        ));
    }
    if points.iter().any(|&(_, g)| g <= 0.0 || g.is_nan()) {
        return Err(SsdError::InvalidConfig("slope needs positive gaps".into()));
    }
    let xs: Vec<f64> = points.iter().map(|&(n, _)| (n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, g)| g.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(cov / var)
}
