//! Composite optimization f(x) = |A x|_1 + 1/2 |B x - b|^2 as a three-layer
//! stack: a summing affine row over [smoothable |.| rows | one smooth row]
//! over the affine map [A x; x]. The l1 dual rows live in [-1, 1] with a
//! clip prox; the quadratic part is an implicit smooth block reading only
//! the identity columns.

use crate::error::{Result, SsdError};
use crate::layer::*;
use crate::linalg::{norm2, Matrix, Vector};
use crate::problem::{CompositionProblem, FeasibleSet, Regularizer};
use crate::problems::reference::ReferenceSolution;
use crate::problems::synthetic::{aggregate_bounds, RowBound};
use crate::scalar::Scalar;
use std::sync::Arc;

/// Gaussian noise levels of the stochastic variant (zero = deterministic).
#[derive(Clone, Copy, Debug, Default)]
pub struct CompositeNoise<T> {
    /// Row noise of the A-map samples (and of its transpose uses).
    pub sigma_a: T,
    /// Gradient noise of the quadratic part.
    pub sigma_g: T,
}

pub fn make_composite_problem<T: Scalar>(
    a: Matrix<T>,
    b_mat: Matrix<T>,
    b_vec: Vector<T>,
    radius: T,
    noise: CompositeNoise<T>,
) -> Result<CompositionProblem<T>> {
    let m = a.nrows();
    let n = a.ncols();
    if b_mat.ncols() != n || b_mat.nrows() != b_vec.len() {
        return Err(SsdError::DimMismatch("composite quadratic dims".into()));
    }
    let reach_x = radius;

    // layer 3: [A x; x]
    let mut comps3 = Vec::with_capacity(m + n);
    let mut oracles3 = Vec::with_capacity(m + n);
    let mut rows3 = Vec::with_capacity(m + n);
    for j in 0..m {
        let row = a.row(j).to_owned();
        let na = norm2(&row);
        rows3.push(RowBound {
            m_pi: (na * na + noise.sigma_a * noise.sigma_a).sqrt(),
            m_f: na * reach_x,
            l: T::zero(),
            sigma_f: noise.sigma_a * reach_x,
            sigma_pi: noise.sigma_a,
        });
        comps3.push(LayerComponent::Affine(AffineComponent {
            a: row,
            b: T::zero(),
        }));
        oracles3.push(if noise.sigma_a > T::zero() {
            ComponentOracle::AffineSlopeNoise {
                sigma: noise.sigma_a,
            }
        } else {
            ComponentOracle::Exact
        });
    }
    for j in 0..n {
        let mut e = Vector::zeros(n);
        e[j] = T::one();
        rows3.push(RowBound {
            m_pi: T::one(),
            m_f: reach_x,
            l: T::zero(),
            sigma_f: T::zero(),
            sigma_pi: T::zero(),
        });
        comps3.push(LayerComponent::Affine(AffineComponent {
            a: e,
            b: T::zero(),
        }));
        oracles3.push(ComponentOracle::Exact);
    }
    let f3 = LayerSpec::new(
        comps3,
        n,
        Oracle {
            per_component: oracles3,
        },
        aggregate_bounds(&rows3, T::zero()),
    )?;

    // layer 2: m smoothable rows |z_j| with dual in [-1,1], plus the smooth
    // quadratic row on the identity columns
    let mut comps2 = Vec::with_capacity(m + 1);
    let mut oracles2 = Vec::with_capacity(m + 1);
    let mut rows2 = Vec::with_capacity(m + 1);
    let a_frob = a.iter().map(|&v| v * v).sum::<T>().sqrt();
    for j in 0..m {
        comps2.push(LayerComponent::Smoothable(interval_quadratic_conjugate(
            j,
            -T::one(),
            T::one(),
            T::zero(),
            T::zero(),
        )));
        oracles2.push(ComponentOracle::Exact);
        rows2.push(RowBound {
            m_pi: T::one(),
            m_f: a_frob * reach_x,
            l: T::zero(),
            sigma_f: T::zero(),
            sigma_pi: T::zero(),
        });
    }
    let bf = b_mat.clone();
    let bv = b_vec.clone();
    let cols: Vec<usize> = (m..m + n).collect();
    let cols2 = cols.clone();
    let eval: ScalarFn<T> = Arc::new(move |y: &Vector<T>| {
        let w = Vector::from_iter(cols.iter().map(|&c| y[c]));
        let r = bf.dot(&w) - &bv;
        r.iter().map(|&v| v * v).sum::<T>() / T::c(2.0)
    });
    let bf = b_mat.clone();
    let bv = b_vec.clone();
    let grad: GradFn<T> = Arc::new(move |y: &Vector<T>| {
        let w = Vector::from_iter(cols2.iter().map(|&c| y[c]));
        let r = bf.dot(&w) - &bv;
        let gw = bf.t().dot(&r);
        let mut out = Vector::zeros(y.len());
        for (idx, &c) in cols2.iter().enumerate() {
            out[c] = gw[idx];
        }
        out
    });
    let b_frob = b_mat.iter().map(|&v| v * v).sum::<T>().sqrt();
    let resid_reach = b_frob * reach_x + norm2(&b_vec);
    rows2.push(RowBound {
        m_pi: b_frob * resid_reach,
        m_f: resid_reach * resid_reach / T::c(2.0),
        l: b_frob * b_frob,
        sigma_f: T::zero(),
        sigma_pi: noise.sigma_g,
    });
    comps2.push(LayerComponent::Smooth(SmoothComponent {
        eval,
        grad,
        l_smooth: b_frob * b_frob,
        nonneg_dual: false,
        cols: Some((m..m + n).collect()),
    }));
    oracles2.push(if noise.sigma_g > T::zero() {
        ComponentOracle::Gaussian {
            sigma_f: T::zero(),
            sigma_pi: noise.sigma_g,
        }
    } else {
        ComponentOracle::Exact
    });
    // row dual radius of the [-1,1] rows: sqrt(1/2 (hi-lo)^2) = sqrt(2)
    let f2 = LayerSpec::new(
        comps2,
        m + n,
        Oracle {
            per_component: oracles2,
        },
        aggregate_bounds(&rows2, T::c(2.0).sqrt()),
    )?;

    // layer 1: summing row; the smooth row's dual is the fixed weight 1,
    // the |.| rows' duals are non-negative multipliers of non-affine rows...
    // summing weights are all one, satisfying outer non-negativity.
    let ones = Vector::from_elem(m + 1, T::one());
    let reach2: T = rows2.iter().map(|r| r.m_f * r.m_f).sum::<T>().sqrt();
    let f1 = LayerSpec::new(
        vec![LayerComponent::Affine(AffineComponent {
            a: ones,
            b: T::zero(),
        })],
        m + 1,
        Oracle::exact(1),
        aggregate_bounds(
            &[RowBound {
                m_pi: T::from_usize(m + 1).unwrap().sqrt(),
                m_f: reach2,
                l: T::zero(),
                sigma_f: T::zero(),
                sigma_pi: T::zero(),
            }],
            T::zero(),
        ),
    )?;

    CompositionProblem::new(
        vec![f1, f2, f3],
        FeasibleSet::Ball {
            center: Vector::zeros(n),
            radius,
        },
        Regularizer::zero(n),
    )
}

/// Dense LU-free solve for the small systems used by the constructors.
pub fn solve_linear<T: Scalar>(a: &Matrix<T>, b: &Vector<T>) -> Result<Vector<T>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(SsdError::DimMismatch("solve_linear expects square".into()));
    }
    let mut m = a.clone();
    let mut rhs = b.clone();
    for col in 0..n {
        // partial pivot
        let mut piv = col;
        for r in col + 1..n {
            if m[(r, col)].abs() > m[(piv, col)].abs() {
                piv = r;
            }
        }
        if m[(piv, col)].abs() < T::c(1e-12) {
            return Err(SsdError::DivisionGuard("singular linear system".into()));
        }
        if piv != col {
            for c in 0..n {
                let tmp = m[(col, c)];
                m[(col, c)] = m[(piv, c)];
                m[(piv, c)] = tmp;
            }
            let tmp = rhs[col];
            rhs[col] = rhs[piv];
            rhs[piv] = tmp;
        }
        for r in col + 1..n {
            let f = m[(r, col)] / m[(col, col)];
            for c in col..n {
                let v = m[(col, c)];
                m[(r, c)] -= f * v;
            }
            let v = rhs[col];
            rhs[r] -= f * v;
        }
    }
    let mut x = Vector::zeros(n);
    for r in (0..n).rev() {
        let mut acc = rhs[r];
        for c in r + 1..n {
            acc -= m[(r, c)] * x[c];
        }
        x[r] = acc / m[(r, r)];
    }
    Ok(x)
}

/// Deterministic benchmark instance with a stationarity-certified optimum:
/// b is chosen so that B^T (B x_hat - b) = -A^T sign(A x_hat), making x_hat
/// the unique minimizer (B is invertible, so f is strongly convex).
pub fn composite_instance<T: Scalar>(
    noise: CompositeNoise<T>,
) -> Result<(CompositionProblem<T>, ReferenceSolution<T>)> {
    let n = 4;
    let m = 3;
    let x_hat = Vector::from_vec(vec![0.5, -0.25, 0.35, -0.4].into_iter().map(T::c).collect());
    let a = Matrix::from_shape_vec(
        (m, n),
        vec![
            0.6, -0.4, 0.2, 0.3, -0.5, 0.3, 0.4, -0.2, 0.2, 0.4, -0.6, 0.5,
        ]
        .into_iter()
        .map(T::c)
        .collect(),
    )
    .unwrap();
    // well-conditioned B: identity plus a mild off-diagonal
    let mut b_mat = Matrix::zeros((n, n));
    for i in 0..n {
        b_mat[(i, i)] = T::one();
    }
    b_mat[(0, 1)] = T::c(0.3);
    b_mat[(1, 2)] = T::c(-0.2);
    b_mat[(2, 3)] = T::c(0.25);
    b_mat[(3, 0)] = T::c(0.15);

    let z = a.dot(&x_hat);
    if z.iter().any(|&v| v.abs() < T::c(1e-6)) {
        return Err(SsdError::InvalidConfig(
            "instance needs nonzero residuals".into(),
        ));
    }
    let v = z.mapv(|zv| if zv > T::zero() { T::one() } else { -T::one() });
    // b = B x_hat + B^{-T} A^T v
    let rhs = a.t().dot(&v);
    let bt = b_mat.t().to_owned();
    let y = solve_linear(&bt, &rhs)?;
    let b_vec = b_mat.dot(&x_hat) + &y;

    let radius = T::c(4.0);
    let p = make_composite_problem(a, b_mat, b_vec, radius, noise)?;
    let r = ReferenceSolution::analytic(&p, x_hat);
    Ok((p, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn solve_linear_small() {
        let a = Matrix::from_shape_vec((2, 2), vec![2.0, 1.0, 1.0, 3.0]).unwrap();
        let x: crate::linalg::Vector<f64> = solve_linear(&a, &array![5.0, 10.0]).unwrap();
        assert!((2.0 * x[0] + x[1] - 5.0).abs() < 1e-12);
        assert!((x[0] + 3.0 * x[1] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn one_dim_instance_min_at_zero() {
        // A=1, B=1, b=0 on [-1,1]: f = |x| + x^2/2, x* = 0, f* = 0
        let p = make_composite_problem(
            Matrix::from_shape_vec((1, 1), vec![1.0]).unwrap(),
            Matrix::from_shape_vec((1, 1), vec![1.0]).unwrap(),
            array![0.0],
            1.0,
            CompositeNoise::default(),
        )
        .unwrap();
        let at = |v: f64| -> f64 { p.eval_composition(&array![v]) };
        assert!(at(0.0).abs() < 1e-15);
        assert!((at(0.5) - 0.625).abs() < 1e-15);
        assert!((at(-0.5) - 0.625).abs() < 1e-15);
    }

    #[test]
    fn a_zero_reduces_to_quadratic() {
        // A = 0: pure ridge problem, minimizer solves B x = b
        let b_mat = Matrix::from_shape_vec((2, 2), vec![1.0, 0.2, 0.0, 1.5]).unwrap();
        let b_vec = array![0.5, -0.3];
        let p = make_composite_problem(
            Matrix::<f64>::zeros((1, 2)),
            b_mat.clone(),
            b_vec.clone(),
            5.0,
            CompositeNoise::default(),
        )
        .unwrap();
        let x_star = solve_linear(&b_mat, &b_vec).unwrap();
        assert!(p.eval_composition(&x_star).abs() < 1e-20);
    }

    #[test]
    fn stationarity_certificate_holds() {
        let (p, r) = composite_instance::<f64>(CompositeNoise::default()).unwrap();
        // subgradient residual at the certified optimum vanishes
        let g = p.exact_subgradient(&r.x_star);
        assert!(crate::linalg::norm2(&g) < 1e-10, "residual {g:?}");
        // random feasible points do worse
        let mut seed = 11u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..500 {
            let x = Vector::from_iter((0..p.dim()).map(|_| 4.0 * next() - 2.0));
            let x = p.feasible.project(&x);
            assert!(p.eval_composition(&x) >= r.f_star - 1e-12);
        }
    }
}
