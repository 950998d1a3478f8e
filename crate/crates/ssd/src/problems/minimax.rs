//! Minimax over composite objectives max_i { |A_i x|_1 + 1/2 |B_i x - b_i|^2 }
//! as a four-layer stack: a simplex-dual max over an affine aggregation of
//! per-composite pieces built from smoothable |.| rows and smooth quadratic
//! rows over the shared affine inner map [A_1 x; ...; A_m x; x].

use crate::error::{Result, SsdError};
use crate::layer::*;
use crate::linalg::{norm2, Matrix, Vector};
use crate::problem::{CompositionProblem, FeasibleSet, Regularizer};
use crate::problems::composite::CompositeNoise;
use crate::problems::synthetic::{aggregate_bounds, RowBound};
use crate::scalar::Scalar;
use std::sync::Arc;

#[derive(Clone)]
pub struct CompositeSpec<T> {
    pub a: Matrix<T>,
    pub b_mat: Matrix<T>,
    pub b_vec: Vector<T>,
}

pub fn make_minimax_problem<T: Scalar>(
    specs: &[CompositeSpec<T>],
    radius: T,
    noise: CompositeNoise<T>,
) -> Result<CompositionProblem<T>> {
    if specs.is_empty() {
        return Err(SsdError::InvalidConfig(
            "need at least one composite".into(),
        ));
    }
    let m = specs.len();
    let n = specs[0].a.ncols();
    let m_f = specs[0].a.nrows();
    for s in specs {
        if s.a.ncols() != n || s.a.nrows() != m_f || s.b_mat.ncols() != n {
            return Err(SsdError::DimMismatch(
                "composite specs must share dims".into(),
            ));
        }
    }
    let reach_x = radius;

    // layer 4: [A_1 x; ...; A_m x; x]
    let width4 = m * m_f + n;
    let mut comps4 = Vec::with_capacity(width4);
    let mut oracles4 = Vec::with_capacity(width4);
    let mut rows4 = Vec::with_capacity(width4);
    for s in specs {
        for j in 0..m_f {
            let row = s.a.row(j).to_owned();
            let na = norm2(&row);
            rows4.push(RowBound {
                m_pi: (na * na + noise.sigma_a * noise.sigma_a).sqrt(),
                m_f: na * reach_x,
                l: T::zero(),
                sigma_f: noise.sigma_a * reach_x,
                sigma_pi: noise.sigma_a,
            });
            comps4.push(LayerComponent::Affine(AffineComponent {
                a: row,
                b: T::zero(),
            }));
            oracles4.push(if noise.sigma_a > T::zero() {
                ComponentOracle::AffineSlopeNoise {
                    sigma: noise.sigma_a,
                }
            } else {
                ComponentOracle::Exact
            });
        }
    }
    for j in 0..n {
        let mut e = Vector::zeros(n);
        e[j] = T::one();
        rows4.push(RowBound {
            m_pi: T::one(),
            m_f: reach_x,
            l: T::zero(),
            sigma_f: T::zero(),
            sigma_pi: T::zero(),
        });
        comps4.push(LayerComponent::Affine(AffineComponent {
            a: e,
            b: T::zero(),
        }));
        oracles4.push(ComponentOracle::Exact);
    }
    let f4 = LayerSpec::new(
        comps4,
        n,
        Oracle {
            per_component: oracles4,
        },
        aggregate_bounds(&rows4, T::zero()),
    )?;

    // layer 3: per composite, m_f smoothable rows |z_ij| and one smooth row
    // g_i(w); rows are laid out composite-major.
    let width3 = m * (m_f + 1);
    let mut comps3 = Vec::with_capacity(width3);
    let mut oracles3 = Vec::with_capacity(width3);
    let mut rows3 = Vec::with_capacity(width3);
    for (i, s) in specs.iter().enumerate() {
        let a_frob = s.a.iter().map(|&v| v * v).sum::<T>().sqrt();
        for j in 0..m_f {
            comps3.push(LayerComponent::Smoothable(interval_quadratic_conjugate(
                i * m_f + j,
                -T::one(),
                T::one(),
                T::zero(),
                T::zero(),
            )));
            oracles3.push(ComponentOracle::Exact);
            rows3.push(RowBound {
                m_pi: T::one(),
                m_f: a_frob * reach_x,
                l: T::zero(),
                sigma_f: T::zero(),
                sigma_pi: T::zero(),
            });
        }
        let bf = s.b_mat.clone();
        let bv = s.b_vec.clone();
        let cols: Vec<usize> = (m * m_f..m * m_f + n).collect();
        let cols2 = cols.clone();
        let eval: ScalarFn<T> = Arc::new(move |y: &Vector<T>| {
            let w = Vector::from_iter(cols.iter().map(|&c| y[c]));
            let r = bf.dot(&w) - &bv;
            r.iter().map(|&v| v * v).sum::<T>() / T::c(2.0)
        });
        let bf = s.b_mat.clone();
        let bv = s.b_vec.clone();
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
        let b_frob = s.b_mat.iter().map(|&v| v * v).sum::<T>().sqrt();
        let resid_reach = b_frob * reach_x + norm2(&s.b_vec);
        comps3.push(LayerComponent::Smooth(SmoothComponent {
            eval,
            grad,
            l_smooth: b_frob * b_frob,
            nonneg_dual: false,
            cols: Some((m * m_f..m * m_f + n).collect()),
        }));
        oracles3.push(if noise.sigma_g > T::zero() {
            ComponentOracle::Gaussian {
                sigma_f: T::zero(),
                sigma_pi: noise.sigma_g,
            }
        } else {
            ComponentOracle::Exact
        });
        rows3.push(RowBound {
            m_pi: b_frob * resid_reach,
            m_f: resid_reach * resid_reach / T::c(2.0),
            l: b_frob * b_frob,
            sigma_f: T::zero(),
            sigma_pi: noise.sigma_g,
        });
    }
    let f3 = LayerSpec::new(
        comps3,
        width4,
        Oracle {
            per_component: oracles3,
        },
        aggregate_bounds(&rows3, T::c(2.0).sqrt()),
    )?;
    let reach3: T = rows3.iter().map(|r| r.m_f * r.m_f).sum::<T>().sqrt();

    // layer 2: composite-wise summing rows (0/1 pattern)
    let mut comps2 = Vec::with_capacity(m);
    let mut rows2 = Vec::with_capacity(m);
    for i in 0..m {
        let mut a = Vector::zeros(width3);
        for j in 0..(m_f + 1) {
            a[i * (m_f + 1) + j] = T::one();
        }
        rows2.push(RowBound {
            m_pi: norm2(&a),
            m_f: norm2(&a) * reach3,
            l: T::zero(),
            sigma_f: T::zero(),
            sigma_pi: T::zero(),
        });
        comps2.push(LayerComponent::Affine(AffineComponent { a, b: T::zero() }));
    }
    let f2 = LayerSpec::new(
        comps2,
        width3,
        Oracle::exact(m),
        aggregate_bounds(&rows2, T::zero()),
    )?;
    let reach2: T = rows2.iter().map(|r| r.m_f * r.m_f).sum::<T>().sqrt();

    // layer 1: max over the m composite values, dual on the simplex
    let f1 = LayerSpec::new(
        vec![LayerComponent::Smoothable(simplex_max_component(
            (0..m).collect(),
        ))],
        m,
        Oracle::exact(1),
        aggregate_bounds(
            &[RowBound {
                m_pi: T::one(),
                m_f: reach2,
                l: T::zero(),
                sigma_f: T::zero(),
                sigma_pi: T::zero(),
            }],
            T::one(),
        ),
    )?;

    CompositionProblem::new(
        vec![f1, f2, f3, f4],
        FeasibleSet::Ball {
            center: Vector::zeros(n),
            radius,
        },
        Regularizer::zero(n),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_composite_matches_plain_formulation() {
        // max over a single composite is that composite: probe equality
        let mm = make_minimax_problem(
            &[CompositeSpec {
                a: Matrix::from_shape_vec((1, 2), vec![1.0, -0.5]).unwrap(),
                b_mat: Matrix::from_shape_vec((2, 2), vec![1.0, 0.0, 0.2, 1.2]).unwrap(),
                b_vec: ndarray::arr1(&[0.4, -0.1]),
            }],
            3.0,
            CompositeNoise::default(),
        )
        .unwrap();
        let plain = crate::problems::composite::make_composite_problem(
            Matrix::from_shape_vec((1, 2), vec![1.0, -0.5]).unwrap(),
            Matrix::from_shape_vec((2, 2), vec![1.0, 0.0, 0.2, 1.2]).unwrap(),
            ndarray::arr1(&[0.4, -0.1]),
            3.0,
            CompositeNoise::default(),
        )
        .unwrap();
        let mut seed = 5u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..200 {
            let x = ndarray::arr1(&[4.0 * next() - 2.0, 4.0 * next() - 2.0]);
            let x = mm.feasible.project(&x);
            let a = mm.eval_composition(&x);
            let b = plain.eval_composition(&x);
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn mirrored_pair_is_symmetric() {
        // f^(2)(x) = f^(1)(-x): the max is symmetric, so its value at x and
        // -x agree and the unique optimum sits at the origin.
        let a = Matrix::from_shape_vec((2, 3), vec![0.5, -0.3, 0.2, 0.1, 0.4, -0.6]).unwrap();
        let mut b_mat = Matrix::zeros((3, 3));
        for i in 0..3 {
            b_mat[(i, i)] = 1.0 + 0.1 * i as f64;
        }
        let b_vec = ndarray::arr1(&[0.3, -0.2, 0.5]);
        let specs = [
            CompositeSpec {
                a: a.clone(),
                b_mat: b_mat.clone(),
                b_vec: b_vec.clone(),
            },
            CompositeSpec {
                a: a.mapv(|v| -v),
                b_mat: b_mat.mapv(|v| -v),
                b_vec: b_vec.clone(),
            },
        ];
        let p = make_minimax_problem(&specs, 3.0, CompositeNoise::default()).unwrap();
        let mut seed = 9u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        let f0 = p.eval_composition(&ndarray::Array1::zeros(3));
        for _ in 0..300 {
            let x = ndarray::arr1(&[2.0 * next() - 1.0, 2.0 * next() - 1.0, 2.0 * next() - 1.0]);
            let x = p.feasible.project(&x);
            let fx = p.eval_composition(&x);
            let fmx = p.eval_composition(&x.mapv(|v| -v));
            assert!((fx - fmx).abs() < 1e-12);
            assert!(fx >= f0 - 1e-12, "symmetry optimum violated: {fx} < {f0}");
        }
    }
}
