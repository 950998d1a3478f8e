//! Mean-upper-semideviation risk minimization over finite scenario sets:
//! rho(Z(x)) = E[g(x,xi)] + c E[(g(x,xi) - E[g(x,xi)])_+] with linear
//! scenario costs g(x, xi_s) = c_s.x + d_s, smoothed by the one-sided Huber
//! approximation of (.)_+.

use crate::error::{Result, SsdError};
use crate::layer::*;
use crate::linalg::{clamp, norm2, Vector};
use crate::problem::{CompositionProblem, FeasibleSet, Regularizer};
use crate::problems::reference::{reference_solve_raw, ObjectiveOracle, ReferenceSolution};
use crate::scalar::Scalar;
use std::sync::Arc;

/// Finite scenario model: scenario s has probability p_s, cost c_s.x + d_s.
#[derive(Clone, Debug)]
pub struct ScenarioSet<T> {
    pub costs: Vec<Vector<T>>,
    pub offsets: Vec<T>,
    pub probabilities: Vec<T>,
}

impl<T: Scalar> ScenarioSet<T> {
    pub fn new(costs: Vec<Vector<T>>, offsets: Vec<T>, probabilities: Vec<T>) -> Result<Self> {
        if costs.len() != offsets.len() || costs.len() != probabilities.len() {
            return Err(SsdError::DimMismatch("scenario table lengths".into()));
        }
        if costs.is_empty() {
            return Err(SsdError::InvalidConfig("empty scenario set".into()));
        }
        let sum: T = probabilities.iter().copied().sum();
        if probabilities.iter().any(|&p| p < T::zero()) || (sum - T::one()).abs() > T::c(1e-9) {
            return Err(SsdError::InvalidConfig(
                "scenario probabilities must be non-negative and sum to 1".into(),
            ));
        }
        Ok(Self {
            costs,
            offsets,
            probabilities,
        })
    }

    pub fn dim(&self) -> usize {
        self.costs[0].len()
    }

    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }

    pub fn mean_cost(&self) -> (Vector<T>, T) {
        let mut c = Vector::zeros(self.dim());
        let mut d = T::zero();
        for s in 0..self.len() {
            c += &self.costs[s].mapv(|v| v * self.probabilities[s]);
            d += self.probabilities[s] * self.offsets[s];
        }
        (c, d)
    }

    pub fn cost(&self, s: usize, x: &Vector<T>) -> T {
        self.costs[s].dot(x) + self.offsets[s]
    }
}

/// Nesterov's smooth approximation of (z)_+ with parameter gamma:
/// max_{pi in [0,1]} pi z - gamma/2 pi^2.
pub fn h_gamma<T: Scalar>(z: T, gamma: T) -> T {
    if z < T::zero() {
        T::zero()
    } else if z <= gamma {
        z * z / (T::c(2.0) * gamma)
    } else {
        z - gamma / T::c(2.0)
    }
}

pub fn h_gamma_grad<T: Scalar>(z: T, gamma: T) -> T {
    clamp(z / gamma, T::zero(), T::one())
}

/// argmin_{pi in [0,1]} -pi y + gamma/2 pi^2 + tau/2 (pi - prev)^2.
pub fn h_gamma_dual_prox<T: Scalar>(y: T, prev: T, tau: T, gamma: T) -> T {
    clamp((tau * prev + y) / (tau + gamma), T::zero(), T::one())
}

/// Exact unsmoothed risk rho(x) over the scenario set.
pub fn risk_rho_exact<T: Scalar>(scen: &ScenarioSet<T>, c_risk: T, x: &Vector<T>) -> T {
    let (cm, dm) = scen.mean_cost();
    let mean = cm.dot(x) + dm;
    let mut dev = T::zero();
    for s in 0..scen.len() {
        dev += scen.probabilities[s] * (scen.cost(s, x) - mean).max(T::zero());
    }
    mean + c_risk * dev
}

/// Exact smoothed risk rho^gamma(x).
pub fn risk_rho_smoothed<T: Scalar>(
    scen: &ScenarioSet<T>,
    c_risk: T,
    gamma: T,
    x: &Vector<T>,
) -> T {
    let (cm, dm) = scen.mean_cost();
    let mean = cm.dot(x) + dm;
    let mut dev = T::zero();
    for s in 0..scen.len() {
        dev += scen.probabilities[s] * h_gamma(scen.cost(s, x) - mean, gamma);
    }
    mean + c_risk * dev
}

/// Two-layer smoothed risk problem:
/// f_2(x) = [E g(x, xi); x] (stochastic scenario row + identity rows),
/// f_1(y, w) = y + c E[h^gamma(g(w, xi) - y)] (semi-smooth-noisy).
pub fn make_risk_problem<T: Scalar>(
    scen: &ScenarioSet<T>,
    c_risk: T,
    gamma: T,
    radius: T,
) -> Result<CompositionProblem<T>> {
    if c_risk < T::zero() || c_risk > T::one() {
        return Err(SsdError::InvalidConfig(
            "risk weight must lie in [0, 1]".into(),
        ));
    }
    if gamma <= T::zero() {
        return Err(SsdError::InvalidConfig(
            "smoothing parameter must be positive".into(),
        ));
    }
    let n = scen.dim();
    let reach_x = radius; // ball centered at the origin
    let (cm, dm) = scen.mean_cost();
    let max_cost_norm = scen
        .costs
        .iter()
        .map(|c| norm2(c))
        .fold(T::zero(), |a, b| a.max(b));
    let max_abs_g = scen
        .costs
        .iter()
        .zip(scen.offsets.iter())
        .map(|(c, &d)| norm2(c) * reach_x + d.abs())
        .fold(T::zero(), |a, b| a.max(b));

    // inner layer: scenario cost row + identity rows
    let mut comps2: Vec<LayerComponent<T>> = Vec::with_capacity(1 + n);
    let mut oracles2 = Vec::with_capacity(1 + n);
    comps2.push(LayerComponent::Affine(AffineComponent {
        a: cm.clone(),
        b: dm,
    }));
    let scen_arc = Arc::new(scen.clone());
    let mix = ScenarioMixture {
        probs: scen.probabilities.clone(),
        values: (0..scen.len())
            .map(|s| {
                let sc = scen_arc.clone();
                let v: ScalarFn<T> = Arc::new(move |x: &Vector<T>| sc.cost(s, x));
                v
            })
            .collect(),
        grads: (0..scen.len())
            .map(|s| {
                let sc = scen_arc.clone();
                let g: GradFn<T> = Arc::new(move |_x: &Vector<T>| sc.costs[s].clone());
                g
            })
            .collect(),
    };
    oracles2.push(ComponentOracle::Scenario(Arc::new(mix)));
    for j in 0..n {
        let mut e = Vector::zeros(n);
        e[j] = T::one();
        comps2.push(LayerComponent::Affine(AffineComponent {
            a: e,
            b: T::zero(),
        }));
        oracles2.push(ComponentOracle::Exact);
    }
    // scenario-noise bounds of the inner layer
    let mut var_pi = T::zero();
    let mut var_f = T::zero();
    for s in 0..scen.len() {
        let dcost = &scen.costs[s] - &cm;
        let dn = norm2(&dcost);
        var_pi += scen.probabilities[s] * dn * dn;
        let dv = dn * reach_x + (scen.offsets[s] - dm).abs();
        var_f += scen.probabilities[s] * dv * dv;
    }
    let bounds2 = LayerBounds {
        m_pi: (max_cost_norm * max_cost_norm + T::from_usize(n).unwrap()).sqrt(),
        l_f: T::zero(),
        d_pi: T::zero(),
        sigma_f: var_f.sqrt(),
        sigma_pi: var_pi.sqrt(),
        m_f: (max_abs_g * max_abs_g + reach_x * reach_x).sqrt(),
        m_l_override: None,
    };
    let f2 = LayerSpec::new(
        comps2,
        n,
        Oracle {
            per_component: oracles2,
        },
        bounds2,
    )?;

    // outer semi-smooth layer on input [y; w]
    let sc = scen_arc.clone();
    let (c, g) = (c_risk, gamma);
    let eval: ScalarFn<T> = Arc::new(move |yw: &Vector<T>| {
        let y = yw[0];
        let w = yw.slice(ndarray::s![1..]).to_owned();
        let mut dev = T::zero();
        for s in 0..sc.len() {
            dev += sc.probabilities[s] * h_gamma(sc.cost(s, &w) - y, g);
        }
        y + c * dev
    });
    let sc = scen_arc.clone();
    let grad: GradFn<T> = Arc::new(move |yw: &Vector<T>| {
        let y = yw[0];
        let w = yw.slice(ndarray::s![1..]).to_owned();
        let mut out = Vector::zeros(yw.len());
        out[0] = T::one();
        for s in 0..sc.len() {
            let hp = h_gamma_grad(sc.cost(s, &w) - y, g);
            out[0] -= sc.probabilities[s] * c * hp;
            for j in 0..w.len() {
                out[j + 1] += sc.probabilities[s] * c * hp * sc.costs[s][j];
            }
        }
        out
    });
    let semi = SemiSmoothComponent {
        eval,
        grad,
        smooth_cols: vec![0],
        nonsmooth_cols: (1..=n).collect(),
        l_smooth: c_risk / gamma,
        m_nonsmooth: c_risk * max_cost_norm,
        nonneg_dual: false,
    };
    // per-scenario oracle of the outer layer
    let sc = scen_arc.clone();
    let mix1 = ScenarioMixture {
        probs: scen.probabilities.clone(),
        values: (0..scen.len())
            .map(|s| {
                let scc = sc.clone();
                let v: ScalarFn<T> = Arc::new(move |yw: &Vector<T>| {
                    let y = yw[0];
                    let w = yw.slice(ndarray::s![1..]).to_owned();
                    y + c * h_gamma(scc.cost(s, &w) - y, g)
                });
                v
            })
            .collect(),
        grads: (0..scen.len())
            .map(|s| {
                let scc = sc.clone();
                let gr: GradFn<T> = Arc::new(move |yw: &Vector<T>| {
                    let y = yw[0];
                    let w = yw.slice(ndarray::s![1..]).to_owned();
                    let hp = h_gamma_grad(scc.cost(s, &w) - y, g);
                    let mut out = Vector::zeros(yw.len());
                    out[0] = T::one() - c * hp;
                    for j in 0..w.len() {
                        out[j + 1] = c * hp * scc.costs[s][j];
                    }
                    out
                });
                gr
            })
            .collect(),
    };
    let m_pi1 = (T::one() + c_risk * c_risk * max_cost_norm * max_cost_norm).sqrt();
    let bounds1 = LayerBounds {
        m_pi: m_pi1,
        l_f: c_risk / gamma,
        // Bregman radius of the outer dual; generous numeric bound
        d_pi: T::c(2.0) * (T::one() + max_abs_g) * (T::one() + c_risk / gamma).sqrt(),
        sigma_f: c_risk * T::c(2.0) * max_abs_g,
        sigma_pi: c_risk * (T::one() + max_cost_norm) * T::c(2.0),
        m_f: T::c(2.0) * max_abs_g + c_risk * T::c(2.0) * max_abs_g,
        m_l_override: None,
    };
    let f1 = LayerSpec::new(
        vec![LayerComponent::SemiSmooth(semi)],
        1 + n,
        Oracle {
            per_component: vec![ComponentOracle::Scenario(Arc::new(mix1))],
        },
        bounds1,
    )?;

    CompositionProblem::new(
        vec![f1, f2],
        FeasibleSet::Ball {
            center: Vector::zeros(n),
            radius,
        },
        Regularizer::zero(n),
    )
}

/// Certified optimum of the true (unsmoothed) risk objective.
pub fn risk_reference<T: Scalar>(
    scen: &ScenarioSet<T>,
    c_risk: T,
    radius: T,
    tol: T,
    iters: usize,
) -> Result<ReferenceSolution<T>> {
    let feasible = FeasibleSet::Ball {
        center: Vector::zeros(scen.dim()),
        radius,
    };
    let (cm, dm) = scen.mean_cost();
    let oracle = ObjectiveOracle {
        eval: Box::new(|x: &Vector<T>| risk_rho_exact(scen, c_risk, x)),
        subgrad: Box::new(move |x: &Vector<T>| {
            // d rho = mean cost + c sum p_s 1[g_s > mean] (c_s - mean cost)
            let mean = cm.dot(x) + dm;
            let mut g = cm.clone();
            for s in 0..scen.len() {
                if scen.cost(s, x) > mean {
                    let d = &scen.costs[s] - &cm;
                    g += &d.mapv(|v| v * (c_risk * scen.probabilities[s]));
                }
            }
            g
        }),
        feasible: &feasible,
        alpha: T::zero(),
    };
    let (x_star, f_star) = reference_solve_raw(&oracle, tol, iters)?;
    Ok(ReferenceSolution {
        x_star,
        f_star,
        tol,
        reference_point: None,
    })
}
