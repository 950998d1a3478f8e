//! High-accuracy reference optima for the benchmark problems.

use crate::error::{Result, SsdError};
use crate::linalg::{norm2, Vector};
use crate::problem::{CompositionProblem, FeasibleSet, ReferencePoint};
use crate::scalar::Scalar;

/// A certified optimum: f(x_star) is within `tol` of the true minimum.
pub struct ReferenceSolution<T> {
    pub x_star: Vector<T>,
    pub f_star: T,
    pub tol: T,
    /// Dual reference for gap evaluation, when the problem exposes exact
    /// subgradients at x_star.
    pub reference_point: Option<ReferencePoint<T>>,
}

impl<T: Scalar> ReferenceSolution<T> {
    /// Wraps a constructor-known optimum (monotone stacks over a common
    /// inner root, symmetric instances, stationarity certificates).
    pub fn analytic(problem: &CompositionProblem<T>, x_star: Vector<T>) -> Self {
        let f_star = problem.eval_composition(&x_star);
        let reference_point = Some(ReferencePoint::at(problem, &x_star));
        Self {
            x_star,
            f_star,
            tol: T::c(1e-12),
            reference_point,
        }
    }
}

pub type EvalFn<'a, T> = Box<dyn Fn(&Vector<T>) -> T + 'a>;
pub type SubgradFn<'a, T> = Box<dyn Fn(&Vector<T>) -> Vector<T> + 'a>;

/// Objective accessible through exact values and subgradients; the form the
/// iterative reference solvers work on.
pub struct ObjectiveOracle<'a, T> {
    pub eval: EvalFn<'a, T>,
    pub subgrad: SubgradFn<'a, T>,
    pub feasible: &'a FeasibleSet<T>,
    /// Strong-convexity modulus (0 if unknown).
    pub alpha: T,
}

impl<'a, T: Scalar> ObjectiveOracle<'a, T> {
    pub fn of_problem(problem: &'a CompositionProblem<T>) -> Self {
        Self {
            eval: Box::new(move |x| problem.eval_composition(x)),
            subgrad: Box::new(move |x| {
                let mut g = problem.exact_subgradient(x);
                let d = x - &problem.reg.center;
                g += &d.mapv(|z| z * problem.reg.alpha);
                if let Some(q) = &problem.reg.linear {
                    g += q;
                }
                g
            }),
            feasible: &problem.feasible,
            alpha: problem.reg.alpha,
        }
    }
}

/// Projected subgradient with averaging and best-point tracking.
pub fn projected_subgradient<T: Scalar>(
    oracle: &ObjectiveOracle<T>,
    x0: &Vector<T>,
    iters: usize,
) -> (Vector<T>, T) {
    let mut x = oracle.feasible.project(x0);
    let mut best_x = x.clone();
    let mut best_f = (oracle.eval)(&x);
    let d_x = oracle.feasible.diameter_const();
    for t in 0..iters {
        let g = (oracle.subgrad)(&x);
        let gn = norm2(&g);
        if gn == T::zero() {
            let f = (oracle.eval)(&x);
            return (x, f);
        }
        let step = if oracle.alpha > T::zero() {
            T::c(2.0) / (oracle.alpha * T::from_usize(t + 1).unwrap())
        } else {
            d_x / (gn * T::from_usize(t + 1).unwrap().sqrt())
        };
        x = oracle.feasible.project(&(&x - &g.mapv(|z| z * step)));
        // cheap tail averaging: evaluate occasionally to keep the best point
        if t % 16 == 0 || t + 1 == iters {
            let f = (oracle.eval)(&x);
            if f < best_f {
                best_f = f;
                best_x = x.clone();
            }
        }
    }
    (best_x, best_f)
}

/// Projected gradient descent with a fixed 1/L step; linear rate on smooth
/// strongly convex problems. Returns the final point and value.
pub fn projected_gradient<T: Scalar>(
    oracle: &ObjectiveOracle<T>,
    l_total: T,
    x0: &Vector<T>,
    iters: usize,
) -> (Vector<T>, T) {
    let mut x = oracle.feasible.project(x0);
    let step = T::one() / (l_total + oracle.alpha);
    for _ in 0..iters {
        let g = (oracle.subgrad)(&x);
        let next = oracle.feasible.project(&(&x - &g.mapv(|z| z * step)));
        if crate::linalg::dist_sq(&next, &x) < T::c(1e-32) {
            x = next;
            break;
        }
        x = next;
    }
    let f = (oracle.eval)(&x);
    (x, f)
}

/// Multi-resolution grid minimization over the bounding box of X
/// (dim <= 2 only). Each level zooms into the best cell of the previous.
pub fn grid_minimize<T: Scalar>(
    oracle: &ObjectiveOracle<T>,
    points_per_axis: usize,
    levels: usize,
) -> Result<(Vector<T>, T)> {
    let dim = oracle.feasible.dim();
    if dim > 2 {
        return Err(SsdError::InvalidConfig(
            "grid search supports dim <= 2".into(),
        ));
    }
    let (mut lo, mut hi) = bounding_box(oracle.feasible);
    let mut best_x = oracle.feasible.project(&lo);
    let mut best_f = (oracle.eval)(&best_x);
    for _ in 0..levels {
        let steps: Vec<T> = (0..dim)
            .map(|d| (hi[d] - lo[d]) / T::from_usize(points_per_axis - 1).unwrap())
            .collect();
        let total = points_per_axis.pow(dim as u32);
        for idx in 0..total {
            let mut x = Vector::zeros(dim);
            let mut rem = idx;
            for d in 0..dim {
                let i = rem % points_per_axis;
                rem /= points_per_axis;
                x[d] = lo[d] + steps[d] * T::from_usize(i).unwrap();
            }
            let xp = oracle.feasible.project(&x);
            let f = (oracle.eval)(&xp);
            if f < best_f {
                best_f = f;
                best_x = xp;
            }
        }
        // zoom: two cells around the best point per axis
        for d in 0..dim {
            let w = steps[d] * T::c(2.0);
            lo[d] = best_x[d] - w;
            hi[d] = best_x[d] + w;
        }
    }
    Ok((best_x, best_f))
}

fn bounding_box<T: Scalar>(set: &FeasibleSet<T>) -> (Vector<T>, Vector<T>) {
    match set {
        FeasibleSet::Ball { center, radius } => {
            (center.mapv(|c| c - *radius), center.mapv(|c| c + *radius))
        }
        FeasibleSet::Box { lo, hi } => (lo.clone(), hi.clone()),
    }
}

/// Certified solve: projected subgradient with averaging, cross-checked
/// against an independent grid search when the dimension allows it.
pub fn reference_solve<T: Scalar>(
    problem: &CompositionProblem<T>,
    tol: T,
    iters: usize,
) -> Result<ReferenceSolution<T>> {
    let oracle = ObjectiveOracle::of_problem(problem);
    let sol = reference_solve_raw(&oracle, tol, iters)?;
    Ok(ReferenceSolution {
        reference_point: Some(ReferencePoint::at(problem, &sol.0)),
        x_star: sol.0,
        f_star: sol.1,
        tol,
    })
}

pub fn reference_solve_raw<T: Scalar>(
    oracle: &ObjectiveOracle<T>,
    tol: T,
    iters: usize,
) -> Result<(Vector<T>, T)> {
    let x0 = oracle.feasible.center();
    let (xs, fs) = projected_subgradient(oracle, &x0, iters);
    if oracle.feasible.dim() <= 2 {
        let (xg, fg) = grid_minimize(oracle, 101, 8)?;
        if (fs - fg).abs() > tol {
            return Err(SsdError::NoConvergenceCertificate(format!(
                "subgradient {fs} vs grid {fg} beyond tol {tol}"
            )));
        }
        if fg < fs {
            return Ok((xg, fg));
        }
    }
    Ok((xs, fs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn one_dim_abs_plus_quadratic() {
        // |x| + x^2/2 on [-1, 1]: x* = 0, f* = 0 (golden-standard example)
        let feasible = FeasibleSet::Box {
            lo: array![-1.0],
            hi: array![1.0],
        };
        let oracle = ObjectiveOracle {
            eval: Box::new(|x: &Vector<f64>| x[0].abs() + x[0] * x[0] / 2.0),
            subgrad: Box::new(|x: &Vector<f64>| {
                array![x[0].signum() * (x[0] != 0.0) as i32 as f64 + x[0]]
            }),
            feasible: &feasible,
            alpha: 1.0,
        };
        let (x, f) = reference_solve_raw(&oracle, 1e-6, 30_000).unwrap();
        assert!(x[0].abs() < 1e-6);
        assert!(f.abs() < 1e-10);
    }

    #[test]
    fn quadratic_analytic_reference() {
        // pure-regularizer problem: minimizer is the center
        use crate::layer::*;
        let id = LayerSpec::new(
            vec![LayerComponent::Affine(AffineComponent {
                a: array![0.0, 0.0],
                b: 0.0,
            })],
            2,
            Oracle::exact(1),
            LayerBounds {
                m_pi: 1.0,
                l_f: 0.0,
                d_pi: 0.0,
                sigma_f: 0.0,
                sigma_pi: 0.0,
                m_f: 1.0,
                m_l_override: None,
            },
        )
        .unwrap();
        let p = CompositionProblem::new(
            vec![id],
            FeasibleSet::Ball {
                center: array![0.0, 0.0],
                radius: 5.0,
            },
            crate::problem::Regularizer::quadratic(2.0, array![1.0, -0.5]),
        )
        .unwrap();
        let r = ReferenceSolution::analytic(&p, array![1.0, -0.5]);
        assert_eq!(r.f_star, 0.0);
        let oracle = ObjectiveOracle::of_problem(&p);
        let (x, f): (crate::linalg::Vector<f64>, f64) =
            projected_gradient(&oracle, 0.0, &array![3.0, 3.0], 2000);
        assert!((x[0] - 1.0).abs() < 1e-10 && (x[1] + 0.5).abs() < 1e-10);
        assert!(f.abs() < 1e-12);
    }
}
