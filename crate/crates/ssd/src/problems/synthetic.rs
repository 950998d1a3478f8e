//! Synthetic benchmark stacks with constructor-known optima.
//!
//! Every instance is built so that the exact optimum is available without an
//! iterative solve: the inner residual layers share a common root x_hat and
//! all outer layers are componentwise non-decreasing, so the composition is
//! minimized exactly at x_hat.

use crate::error::{Result, SsdError};
use crate::layer::*;
use crate::linalg::{norm2, Vector};
use crate::problem::{CompositionProblem, FeasibleSet, Regularizer};
use crate::problems::reference::{projected_gradient, ObjectiveOracle, ReferenceSolution};
use crate::rng::{RngFactory, StreamKey};
use crate::scalar::Scalar;

/// Aggregates per-row constants into layer bounds.
pub struct RowBound<T> {
    pub m_pi: T,
    pub m_f: T,
    pub l: T,
    pub sigma_f: T,
    pub sigma_pi: T,
}

pub fn aggregate_bounds<T: Scalar>(rows: &[RowBound<T>], d_pi: T) -> LayerBounds<T> {
    let sq =
        |f: &dyn Fn(&RowBound<T>) -> T| -> T { rows.iter().map(|r| f(r) * f(r)).sum::<T>().sqrt() };
    LayerBounds {
        m_pi: sq(&|r| r.m_pi),
        l_f: sq(&|r| r.l),
        d_pi,
        sigma_f: sq(&|r| r.sigma_f),
        sigma_pi: sq(&|r| r.sigma_pi),
        m_f: sq(&|r| r.m_f),
        m_l_override: None,
    }
}

fn uniform_pm<T: Scalar>(rng: &mut crate::rng::StreamRng) -> T {
    T::c(2.0) * T::uniform(rng) - T::one()
}

/// Summing affine layer [1 1 ... 1].
fn sum_layer<T: Scalar>(width: usize, reach: T) -> Result<LayerSpec<T>> {
    let a = Vector::from_elem(width, T::one());
    let m_pi = norm2(&a);
    LayerSpec::new(
        vec![LayerComponent::Affine(AffineComponent { a, b: T::zero() })],
        width,
        Oracle::exact(1),
        aggregate_bounds(
            &[RowBound {
                m_pi,
                m_f: m_pi * reach,
                l: T::zero(),
                sigma_f: T::zero(),
                sigma_pi: T::zero(),
            }],
            T::zero(),
        ),
    )
}

/// Affine residual layer rows a_r.(x - x_hat); slopes drawn from the seed.
fn residual_layer<T: Scalar>(
    rows: usize,
    dim: usize,
    x_hat: &Vector<T>,
    reach_in: T,
    seed: u64,
) -> Result<(LayerSpec<T>, T)> {
    let f = RngFactory::new(seed);
    let mut rng = f.stream(StreamKey {
        layer: 0,
        tick: 0,
        tag: 0,
    });
    let mut comps = Vec::new();
    let mut bounds = Vec::new();
    let mut reach_out = T::zero();
    for _ in 0..rows {
        let a = Vector::from_iter((0..dim).map(|_| uniform_pm::<T>(&mut rng)));
        let b = a.dot(x_hat);
        let na = norm2(&a);
        let mf = na * reach_in + b.abs();
        reach_out += mf * mf;
        bounds.push(RowBound {
            m_pi: na,
            m_f: mf,
            l: T::zero(),
            sigma_f: T::zero(),
            sigma_pi: T::zero(),
        });
        comps.push(LayerComponent::Affine(AffineComponent { a, b: -b }));
    }
    let n = comps.len();
    Ok((
        LayerSpec::new(
            comps,
            dim,
            Oracle::exact(n),
            aggregate_bounds(&bounds, T::zero()),
        )?,
        reach_out.sqrt(),
    ))
}

/// Non-smooth residual layer |a_r.(x - x_hat)| rows: non-negative with a
/// common root at x_hat.
fn abs_residual_layer<T: Scalar>(
    rows: usize,
    dim: usize,
    x_hat: &Vector<T>,
    reach_in: T,
    seed: u64,
) -> Result<(LayerSpec<T>, T)> {
    let f = RngFactory::new(seed);
    let mut rng = f.stream(StreamKey {
        layer: 0,
        tick: 0,
        tag: 0,
    });
    let mut comps = Vec::new();
    let mut bounds = Vec::new();
    let mut reach_out = T::zero();
    for _ in 0..rows {
        let a = Vector::from_iter((0..dim).map(|_| uniform_pm::<T>(&mut rng)));
        let b = a.dot(x_hat);
        let na = norm2(&a);
        let mf = na * reach_in + b.abs();
        reach_out += mf * mf;
        bounds.push(RowBound {
            m_pi: na,
            m_f: mf,
            l: T::zero(),
            sigma_f: T::zero(),
            sigma_pi: T::zero(),
        });
        comps.push(LayerComponent::Nonsmooth(abs_residual_nonsmooth(a, b)));
    }
    let nrows = comps.len();
    Ok((
        LayerSpec::new(
            comps,
            dim,
            Oracle::exact(nrows),
            aggregate_bounds(&bounds, T::zero()),
        )?,
        reach_out.sqrt(),
    ))
}

/// All-smooth 3-layer stack minimized at x_hat; u is alpha/2 |x - center|^2.
pub fn all_smooth_stack<T: Scalar>(
    alpha: T,
    reg_center: Option<Vector<T>>,
) -> Result<(CompositionProblem<T>, Vector<T>)> {
    let n = 5;
    let radius = T::c(3.0);
    let x_hat = Vector::from_vec(
        vec![0.5, -0.25, 0.75, -0.5, 0.25]
            .into_iter()
            .map(T::c)
            .collect(),
    );
    let f = RngFactory::new(202);
    let mut rng = f.stream(StreamKey {
        layer: 0,
        tick: 0,
        tag: 0,
    });

    // f_3: quadratic residual rows q_r/2 (a_r.(x - x_hat))^2
    let reach_x = radius;
    let mut comps3 = Vec::new();
    let mut b3 = Vec::new();
    let mut reach3 = T::zero();
    for q in [T::one(), T::c(2.0), T::c(0.5)] {
        let a = Vector::from_iter((0..n).map(|_| uniform_pm::<T>(&mut rng)));
        let s = a.dot(&x_hat);
        let na = norm2(&a);
        let spread = na * reach_x + s.abs();
        let mf = q / T::c(2.0) * spread * spread;
        reach3 += mf * mf;
        b3.push(RowBound {
            m_pi: q * spread * na,
            m_f: mf,
            l: q * na * na,
            sigma_f: T::zero(),
            sigma_pi: T::zero(),
        });
        comps3.push(LayerComponent::Smooth(quadratic_component(a, s, q)));
    }
    let f3 = LayerSpec::new(
        comps3,
        n,
        Oracle::exact(3),
        aggregate_bounds(&b3, T::zero()),
    )?;
    let reach3 = reach3.sqrt();

    // f_2: increasing softplus rows with non-negative weights
    let mut comps2 = Vec::new();
    let mut b2 = Vec::new();
    let mut reach2 = T::zero();
    for _ in 0..2 {
        let w = Vector::from_iter((0..3).map(|_| T::uniform(&mut rng) + T::c(0.2)));
        let nw = norm2(&w);
        let mf = softplus(nw * reach3);
        reach2 += mf * mf;
        b2.push(RowBound {
            m_pi: nw,
            m_f: mf,
            l: nw * nw / T::c(4.0),
            sigma_f: T::zero(),
            sigma_pi: T::zero(),
        });
        comps2.push(LayerComponent::Smooth(softplus_component(w, T::zero())));
    }
    let f2 = LayerSpec::new(
        comps2,
        3,
        Oracle::exact(2),
        aggregate_bounds(&b2, T::zero()),
    )?;
    let reach2 = reach2.sqrt();

    // f_1: increasing softplus row
    let v = Vector::from_iter((0..2).map(|_| T::uniform(&mut rng) + T::c(0.2)));
    let nv = norm2(&v);
    let b1 = vec![RowBound {
        m_pi: nv,
        m_f: softplus(nv * reach2),
        l: nv * nv / T::c(4.0),
        sigma_f: T::zero(),
        sigma_pi: T::zero(),
    }];
    let f1 = LayerSpec::new(
        vec![LayerComponent::Smooth(softplus_component(v, T::zero()))],
        2,
        Oracle::exact(1),
        aggregate_bounds(&b1, T::zero()),
    )?;

    let center = Vector::zeros(n);
    let reg = match reg_center {
        Some(c) => Regularizer::quadratic(alpha, c),
        None => {
            if alpha > T::zero() {
                Regularizer::quadratic(alpha, x_hat.clone())
            } else {
                Regularizer::zero(n)
            }
        }
    };
    let p = CompositionProblem::new(vec![f1, f2, f3], FeasibleSet::Ball { center, radius }, reg)?;
    Ok((p, x_hat))
}

/// Convex all-smooth instance with its analytic optimum.
pub fn det_smooth_instance<T: Scalar>() -> Result<(CompositionProblem<T>, ReferenceSolution<T>)> {
    let (p, x_hat) = all_smooth_stack(T::zero(), None)?;
    let r = ReferenceSolution::analytic(&p, x_hat);
    Ok((p, r))
}

/// Strongly convex all-smooth instance for restart tests: the regularizer
/// center is away from the stack root, so the optimum is found by a
/// linearly-convergent projected-gradient reference.
pub fn restart_instance<T: Scalar>() -> Result<(CompositionProblem<T>, ReferenceSolution<T>)> {
    let (p, _) = all_smooth_stack(T::one(), Some(Vector::zeros(5)))?;
    // chain-rule smoothness bound of the composition:
    // L <= L1 (M2 M3)^2 + M1 L2 M3^2 + M1 M2 L3
    let (m1, l1) = (p.layers[0].bounds.m_pi, p.layers[0].bounds.l_f);
    let (m2, l2) = (p.layers[1].bounds.m_pi, p.layers[1].bounds.l_f);
    let (m3, l3) = (p.layers[2].bounds.m_pi, p.layers[2].bounds.l_f);
    let l_total = l1 * (m2 * m3) * (m2 * m3) + m1 * l2 * m3 * m3 + m1 * m2 * l3;
    let (x_star, f_star, gap_bound) = {
        let oracle = ObjectiveOracle::of_problem(&p);
        let (x_star, f_star) = projected_gradient(&oracle, l_total, &p.feasible.center(), 400_000);
        // certificate: for alpha-strongly convex F, the optimality gap is at
        // most |gradient|^2 / (2 alpha) at an interior point
        let g = (oracle.subgrad)(&x_star);
        let gn = norm2(&g);
        (x_star, f_star, gn * gn / (T::c(2.0) * p.reg.alpha))
    };
    if gap_bound > T::c(1e-18) {
        return Err(SsdError::NoConvergenceCertificate(format!(
            "restart reference residual {gap_bound}"
        )));
    }
    let reference_point = Some(crate::problem::ReferencePoint::at(&p, &x_star));
    Ok((
        p,
        ReferenceSolution {
            x_star,
            f_star,
            tol: T::c(1e-15),
            reference_point,
        },
    ))
}

/// 3-layer stack dominated by smoothable rows: sum of one-sided Huber pairs
/// h^gamma(z_r) + h^gamma(-z_r) over affine residuals z = A(x - x_hat).
pub fn det_smoothable_instance<T: Scalar>() -> Result<(CompositionProblem<T>, ReferenceSolution<T>)>
{
    let n = 6;
    let rows = 4;
    let gamma = T::c(0.5);
    let radius = T::c(3.0);
    let x_hat = Vector::from_vec(
        vec![0.4, -0.3, 0.6, -0.2, 0.1, 0.5]
            .into_iter()
            .map(T::c)
            .collect(),
    );
    let (f3, reach3) = residual_layer(rows, n, &x_hat, radius, 571)?;

    // f_2: for each residual, the pair h^g(z) and h^g(-z); the second member
    // reads the mirrored coordinate through a negated affine row in f_3, so
    // instead we duplicate rows of f_3. Simpler: two smoothable rows per
    // coordinate with domains [0,1] and [-1,0] mirror the pair on one z.
    let mut comps2 = Vec::new();
    let mut b2 = Vec::new();
    for r in 0..rows {
        comps2.push(LayerComponent::Smoothable(interval_quadratic_conjugate(
            r,
            T::zero(),
            T::one(),
            gamma,
            T::zero(),
        )));
        // h^gamma(-z) = max_{pi in [-1,0]} pi z - gamma/2 pi^2
        comps2.push(LayerComponent::Smoothable(interval_quadratic_conjugate(
            r,
            -T::one(),
            T::zero(),
            gamma,
            T::zero(),
        )));
        for _ in 0..2 {
            b2.push(RowBound {
                m_pi: T::one(),
                m_f: reach3,
                l: T::zero(),
                sigma_f: T::zero(),
                sigma_pi: T::zero(),
            });
        }
    }
    let d_pi_row = T::one() / T::c(2.0).sqrt();
    let f2 = LayerSpec::new(
        comps2,
        rows,
        Oracle::exact(2 * rows),
        aggregate_bounds(&b2, d_pi_row),
    )?;
    let f1 = sum_layer(2 * rows, reach3)?;

    let p = CompositionProblem::new(
        vec![f1, f2, f3],
        FeasibleSet::Ball {
            center: Vector::zeros(n),
            radius,
        },
        Regularizer::zero(n),
    )?;
    // monotone pair trick: h^g(z) + h^g(-z) >= 0 with equality iff z = 0
    let r = ReferenceSolution::analytic(&p, x_hat);
    Ok((p, r))
}

/// 3-layer stack dominated by non-smooth |.| rows over affine residuals.
pub fn det_nonsmooth_instance<T: Scalar>() -> Result<(CompositionProblem<T>, ReferenceSolution<T>)>
{
    let n = 4;
    let rows = 5;
    let radius = T::c(2.0);
    let x_hat = Vector::from_vec(
        vec![0.5, -0.35, 0.25, -0.45]
            .into_iter()
            .map(T::c)
            .collect(),
    );
    let (f3, reach3) = residual_layer(rows, n, &x_hat, radius, 907)?;
    let mut comps2 = Vec::new();
    let mut b2 = Vec::new();
    for r in 0..rows {
        let mut e = Vector::zeros(rows);
        e[r] = T::one();
        comps2.push(LayerComponent::Nonsmooth(abs_residual_nonsmooth(
            e,
            T::zero(),
        )));
        b2.push(RowBound {
            m_pi: T::one(),
            m_f: reach3,
            l: T::zero(),
            sigma_f: T::zero(),
            sigma_pi: T::zero(),
        });
    }
    let f2 = LayerSpec::new(
        comps2,
        rows,
        Oracle::exact(rows),
        aggregate_bounds(&b2, T::zero()),
    )?;
    let f1 = sum_layer(rows, reach3)?;
    let p = CompositionProblem::new(
        vec![f1, f2, f3],
        FeasibleSet::Ball {
            center: Vector::zeros(n),
            radius,
        },
        Regularizer::zero(n),
    )?;
    let r = ReferenceSolution::analytic(&p, x_hat);
    Ok((p, r))
}

/// Two-layer smooth/non-smooth stochastic benchmark for the vanilla solver:
/// f_1 = softplus of the summed residuals, f_2 = noisy |a_r.(x - x_hat)| rows.
pub fn two_layer_sto_bench<T: Scalar>(
    sigma: T,
) -> Result<(crate::vanilla::TwoLayerProblem<T>, ReferenceSolution<T>)> {
    let n = 4;
    let rows = 3;
    let radius = T::c(2.0);
    let x_hat = Vector::from_vec(vec![0.5, -0.25, 0.4, -0.3].into_iter().map(T::c).collect());
    let f = RngFactory::new(313);
    let mut rng = f.stream(StreamKey {
        layer: 0,
        tick: 0,
        tag: 0,
    });
    let mut comps = Vec::new();
    let mut b2 = Vec::new();
    let mut oracles = Vec::new();
    let mut reach2 = T::zero();
    for _ in 0..rows {
        let a = Vector::from_iter((0..n).map(|_| uniform_pm::<T>(&mut rng)));
        let bshift = a.dot(&x_hat);
        let na = norm2(&a);
        let mf = na * radius + bshift.abs();
        reach2 += mf * mf;
        b2.push(RowBound {
            m_pi: (na * na + sigma * sigma).sqrt(),
            m_f: mf,
            l: T::zero(),
            sigma_f: sigma,
            sigma_pi: sigma,
        });
        comps.push(LayerComponent::Nonsmooth(abs_residual_nonsmooth(a, bshift)));
        oracles.push(ComponentOracle::Gaussian {
            sigma_f: sigma,
            sigma_pi: sigma,
        });
    }
    let inner = LayerSpec::new(
        comps,
        n,
        Oracle {
            per_component: oracles,
        },
        aggregate_bounds(&b2, T::zero()),
    )?;
    let reach2 = reach2.sqrt();
    let w = Vector::from_elem(rows, T::one());
    let nw = norm2(&w);
    let outer = LayerSpec::new(
        vec![LayerComponent::Smooth(softplus_component(w, T::zero()))],
        rows,
        Oracle::exact(1),
        aggregate_bounds(
            &[RowBound {
                m_pi: nw,
                m_f: softplus(nw * reach2),
                l: nw * nw / T::c(4.0),
                sigma_f: T::zero(),
                sigma_pi: T::zero(),
            }],
            T::zero(),
        ),
    )?;
    let problem = crate::vanilla::TwoLayerProblem::new(
        outer,
        inner,
        FeasibleSet::Ball {
            center: Vector::zeros(n),
            radius,
        },
        Regularizer::zero(n),
        T::c(50.0),
    )?;
    let comp = problem.composition()?;
    let reference = ReferenceSolution::analytic(&comp, x_hat);
    Ok((problem, reference))
}

/// Strongly convex variant of the two-layer benchmark: same stack with a
/// quadratic regularizer centered at the root, which stays the optimum.
pub fn two_layer_sto_strong_bench<T: Scalar>(
    sigma: T,
    alpha: T,
) -> Result<(crate::vanilla::TwoLayerProblem<T>, ReferenceSolution<T>)> {
    let (p, r) = two_layer_sto_bench(sigma)?;
    let problem = crate::vanilla::TwoLayerProblem::new(
        p.outer,
        p.inner,
        p.feasible,
        Regularizer::quadratic(alpha, r.x_star.clone()),
        p.d_pi1,
    )?;
    let comp = problem.composition()?;
    let reference = ReferenceSolution::analytic(&comp, r.x_star);
    Ok((problem, reference))
}

/// Strongly convex stochastic instance: deterministic smooth outer layer,
/// stochastic smooth middle layer, deterministic non-smooth inner layer.
/// The inner |.| rows are non-negative with a common root and the outer
/// layers are increasing, so the regularizer center x_hat is the optimum.
pub fn sto_strongly_convex_instance<T: Scalar>(
    sigma: T,
) -> Result<(CompositionProblem<T>, ReferenceSolution<T>)> {
    let n = 4;
    let rows = 3;
    let radius = T::c(2.5);
    let x_hat = Vector::from_vec(vec![0.3, -0.5, 0.45, -0.2].into_iter().map(T::c).collect());
    let (f3, reach3) = abs_residual_layer(rows, n, &x_hat, radius, 1129)?;

    let f = RngFactory::new(422);
    let mut rng = f.stream(StreamKey {
        layer: 0,
        tick: 0,
        tag: 0,
    });
    let mut comps2 = Vec::new();
    let mut b2 = Vec::new();
    let mut oracles2 = Vec::new();
    let mut reach2 = T::zero();
    for _ in 0..2 {
        let w = Vector::from_iter((0..rows).map(|_| T::uniform(&mut rng) + T::c(0.3)));
        let nw = norm2(&w);
        let mf = softplus(nw * reach3);
        reach2 += mf * mf;
        b2.push(RowBound {
            m_pi: (nw * nw + sigma * sigma).sqrt(),
            m_f: mf,
            l: nw * nw / T::c(4.0),
            sigma_f: sigma,
            sigma_pi: sigma,
        });
        comps2.push(LayerComponent::Smooth(softplus_component(w, T::zero())));
        oracles2.push(ComponentOracle::Gaussian {
            sigma_f: sigma,
            sigma_pi: sigma,
        });
    }
    let f2 = LayerSpec::new(
        comps2,
        rows,
        Oracle {
            per_component: oracles2,
        },
        aggregate_bounds(&b2, T::zero()),
    )?;
    let reach2 = reach2.sqrt();

    let v = Vector::from_elem(2, T::one());
    let nv = norm2(&v);
    let f1 = LayerSpec::new(
        vec![LayerComponent::Smooth(softplus_component(v, T::zero()))],
        2,
        Oracle::exact(1),
        aggregate_bounds(
            &[RowBound {
                m_pi: nv,
                m_f: softplus(nv * reach2),
                l: nv * nv / T::c(4.0),
                sigma_f: T::zero(),
                sigma_pi: T::zero(),
            }],
            T::zero(),
        ),
    )?;

    // residual layers are minimized (=0) at x_hat, outer layers increasing,
    // and u is centered at x_hat: the optimum stays x_hat
    let p = CompositionProblem::new(
        vec![f1, f2, f3],
        FeasibleSet::Ball {
            center: Vector::zeros(n),
            radius,
        },
        Regularizer::quadratic(T::one(), x_hat.clone()),
    )?;
    let r = ReferenceSolution::analytic(&p, x_hat);
    Ok((p, r))
}

/// All-smooth all-stochastic k=3 stack for resampling statistics.
pub fn resampling_stack<T: Scalar>(sigma: T) -> Result<CompositionProblem<T>> {
    let n = 3;
    let radius = T::c(2.0);
    let f = RngFactory::new(88);
    let mut rng = f.stream(StreamKey {
        layer: 0,
        tick: 0,
        tag: 0,
    });
    let mk_layer = |rng: &mut crate::rng::StreamRng,
                    rows: usize,
                    dim: usize,
                    reach_in: T|
     -> Result<(LayerSpec<T>, T)> {
        let mut comps = Vec::new();
        let mut bs = Vec::new();
        let mut oracles = Vec::new();
        let mut reach = T::zero();
        for _ in 0..rows {
            let w = Vector::from_iter((0..dim).map(|_| T::uniform(rng) + T::c(0.2)));
            let nw = norm2(&w);
            let mf = softplus(nw * reach_in);
            reach += mf * mf;
            bs.push(RowBound {
                m_pi: (nw * nw + sigma * sigma).sqrt(),
                m_f: mf,
                l: nw * nw / T::c(4.0),
                sigma_f: sigma,
                sigma_pi: sigma,
            });
            comps.push(LayerComponent::Smooth(softplus_component(w, T::zero())));
            oracles.push(ComponentOracle::Gaussian {
                sigma_f: sigma,
                sigma_pi: sigma,
            });
        }
        let nrows = comps.len();
        let _ = nrows;
        Ok((
            LayerSpec::new(
                comps,
                dim,
                Oracle {
                    per_component: oracles,
                },
                aggregate_bounds(&bs, T::zero()),
            )?,
            reach.sqrt(),
        ))
    };
    let (f3, r3) = mk_layer(&mut rng, 3, n, radius)?;
    let (f2, r2) = mk_layer(&mut rng, 2, 3, r3)?;
    let (f1, _) = mk_layer(&mut rng, 1, 2, r2)?;
    CompositionProblem::new(
        vec![f1, f2, f3],
        FeasibleSet::Ball {
            center: Vector::zeros(n),
            radius,
        },
        Regularizer::zero(n),
    )
}

/// Random deterministic stack for duality tests: outer layers drawn from
/// non-negative-dual families, innermost layer an affine residual map.
pub fn random_det_stack<T: Scalar>(seed: u64) -> Result<CompositionProblem<T>> {
    let f = RngFactory::new(seed);
    let mut rng = f.stream(StreamKey {
        layer: 0,
        tick: 0,
        tag: 0,
    });
    let n = 2 + (seed as usize % 3);
    let k = 2 + (seed as usize % 3); // 2..=4 layers
    let radius = T::c(2.0);
    let x_hat = Vector::from_iter((0..n).map(|_| uniform_pm::<T>(&mut rng) * T::c(0.5)));
    let (inner, mut reach) = residual_layer(3, n, &x_hat, radius, seed ^ 0x5eed)?;
    let mut layers = vec![inner];
    let mut width = 3usize;
    for lvl in 1..k {
        let rows = if lvl + 1 == k {
            1
        } else {
            1 + ((seed >> lvl) as usize % 3)
        };
        let mut comps = Vec::new();
        let mut bs = Vec::new();
        let mut new_reach = T::zero();
        for r in 0..rows {
            let choice = (seed >> (2 * lvl + r)) % 3;
            match choice {
                0 => {
                    let w = Vector::from_iter((0..width).map(|_| T::uniform(&mut rng) + T::c(0.1)));
                    let nw = norm2(&w);
                    let mf = softplus(nw * reach);
                    new_reach += mf * mf;
                    bs.push(RowBound {
                        m_pi: nw,
                        m_f: mf,
                        l: nw * nw / T::c(4.0),
                        sigma_f: T::zero(),
                        sigma_pi: T::zero(),
                    });
                    comps.push(LayerComponent::Smooth(softplus_component(w, T::zero())));
                }
                1 => {
                    let coord = r % width;
                    let gamma = T::c(0.4);
                    new_reach += reach * reach;
                    bs.push(RowBound {
                        m_pi: T::one(),
                        m_f: reach,
                        l: T::zero(),
                        sigma_f: T::zero(),
                        sigma_pi: T::zero(),
                    });
                    comps.push(LayerComponent::Smoothable(interval_quadratic_conjugate(
                        coord,
                        T::zero(),
                        T::one(),
                        gamma,
                        T::zero(),
                    )));
                }
                _ => {
                    let mut w = Vector::zeros(width);
                    for v in w.iter_mut() {
                        *v = T::uniform(&mut rng) * T::c(0.8);
                    }
                    // (w.y)_+ style non-smooth row with non-negative duals
                    let w2 = w.clone();
                    let eval: ScalarFn<T> =
                        std::sync::Arc::new(move |y: &Vector<T>| w.dot(y).max(T::zero()));
                    let nw = norm2(&w2);
                    let w3 = w2.clone();
                    let subgrad: GradFn<T> = std::sync::Arc::new(move |y: &Vector<T>| {
                        if w3.dot(y) > T::zero() {
                            w3.clone()
                        } else {
                            Vector::zeros(y.len())
                        }
                    });
                    new_reach += reach * reach * nw * nw;
                    bs.push(RowBound {
                        m_pi: nw,
                        m_f: nw * reach,
                        l: T::zero(),
                        sigma_f: T::zero(),
                        sigma_pi: T::zero(),
                    });
                    comps.push(LayerComponent::Nonsmooth(NonsmoothComponent {
                        eval,
                        subgrad,
                        nonneg_dual: true,
                    }));
                }
            }
        }
        let nrows = comps.len();
        layers.push(LayerSpec::new(
            comps,
            width,
            Oracle::exact(nrows),
            aggregate_bounds(&bs, T::c(1.0)),
        )?);
        width = rows;
        reach = new_reach.sqrt();
    }
    layers.reverse();
    CompositionProblem::new(
        layers,
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
    fn instances_assemble_and_certify() {
        let (p, r) = det_smooth_instance::<f64>().unwrap();
        // the root is the analytic optimum: random feasible points do worse
        let f = RngFactory::new(4);
        let mut rng = f.stream(StreamKey {
            layer: 0,
            tick: 0,
            tag: 0,
        });
        for _ in 0..200 {
            let x = Vector::from_iter((0..p.dim()).map(|_| 2.0 * f64::uniform(&mut rng) - 1.0));
            let x = p.feasible.project(&x);
            assert!(p.eval_composition(&x) >= r.f_star - 1e-12);
        }
        let (p, r) = det_smoothable_instance::<f64>().unwrap();
        assert!(r.f_star.abs() < 1e-12);
        for _ in 0..200 {
            let x = Vector::from_iter((0..p.dim()).map(|_| 2.0 * f64::uniform(&mut rng) - 1.0));
            let x = p.feasible.project(&x);
            assert!(p.eval_composition(&x) >= r.f_star - 1e-12);
        }
        let (p, r) = det_nonsmooth_instance::<f64>().unwrap();
        assert!(r.f_star.abs() < 1e-12);
        for _ in 0..200 {
            let x = Vector::from_iter((0..p.dim()).map(|_| 2.0 * f64::uniform(&mut rng) - 1.0));
            let x = p.feasible.project(&x);
            assert!(p.eval_composition(&x) >= r.f_star - 1e-12);
        }
    }

    #[test]
    fn stochastic_instances_assemble() {
        let (p, r) = two_layer_sto_bench::<f64>(0.4).unwrap();
        let comp = p.composition().unwrap();
        assert!((comp.eval_composition(&r.x_star) - r.f_star).abs() < 1e-14);
        let (p, r) = sto_strongly_convex_instance::<f64>(0.5).unwrap();
        assert!((p.eval_composition(&r.x_star) - r.f_star).abs() < 1e-14);
        resampling_stack::<f64>(0.5).unwrap();
    }

    #[test]
    fn random_stacks_respect_assumptions() {
        for seed in 0..20 {
            random_det_stack::<f64>(seed).unwrap();
        }
    }

    #[test]
    fn assumption_violation_rejected() {
        // stochastic layer strictly inside a non-smooth layer is refused
        let n = 2;
        let mut comps = Vec::new();
        let a = Vector::from_vec(vec![1.0, 0.5]);
        comps.push(LayerComponent::Affine(AffineComponent { a, b: 0.0 }));
        let inner = LayerSpec::new(
            comps,
            n,
            Oracle {
                per_component: vec![ComponentOracle::Gaussian {
                    sigma_f: 0.1,
                    sigma_pi: 0.1,
                }],
            },
            LayerBounds {
                m_pi: 2.0,
                l_f: 0.0,
                d_pi: 0.0,
                sigma_f: 0.1,
                sigma_pi: 0.1,
                m_f: 5.0,
                m_l_override: None,
            },
        )
        .unwrap();
        let mut e = Vector::zeros(1);
        e[0] = 1.0;
        let outer_ns = LayerSpec::new(
            vec![LayerComponent::Nonsmooth(abs_residual_nonsmooth(e, 0.0))],
            1,
            Oracle::exact(1),
            LayerBounds {
                m_pi: 1.0,
                l_f: 0.0,
                d_pi: 0.0,
                sigma_f: 0.0,
                sigma_pi: 0.0,
                m_f: 5.0,
                m_l_override: None,
            },
        )
        .unwrap();
        let err = CompositionProblem::new(
            vec![outer_ns, inner],
            FeasibleSet::Ball {
                center: Vector::zeros(n),
                radius: 1.0,
            },
            Regularizer::zero(n),
        );
        assert!(matches!(err, Err(SsdError::NonsmoothNoisyUnsupported(_))));
    }
}
