//! Composition Lagrangian, gap function and Bregman machinery.
//!
//! The saddle reformulation replaces each layer by its conjugate pair:
//! L_{k+1} = x and L_i(x, pi_{i:}) = pi_i L_{i+1} - f_i*(pi_i). Conjugate
//! values are reconstructed from associated points, f*(pi) = pi.y - f(y).

use crate::error::{Result, SsdError};
use crate::layer::{jacobian_at, DualSample, LayerClass, LayerComponent, LayerSpec};
use crate::linalg::{norm2, norm2_sq, Matrix, Vector};
use crate::problem::{CompositionProblem, ReferencePoint};
use crate::scalar::Scalar;

/// Explicit (pi, f*(pi)) pairs for every layer, outermost first.
pub struct DualsView<T> {
    pub layers: Vec<(Matrix<T>, Vector<T>)>,
}

impl<T: Scalar> DualsView<T> {
    /// Exact subgradient duals at the nested values of x.
    pub fn exact_at(problem: &CompositionProblem<T>, x: &Vector<T>) -> Self {
        let vals = problem.nested_values(x);
        let layers = (0..problem.n_layers())
            .map(|i| {
                let y = &vals[i + 1];
                let pi = jacobian_at(&problem.layers[i], y);
                let f = problem.layers[i].exact_value(y);
                let fstar = pi.dot(y) - &f;
                (pi, fstar)
            })
            .collect();
        Self { layers }
    }

    /// Converts a reference point's explicit duals, reconstructing f* at the
    /// reference's nested values (each pi_i must be a subgradient there).
    pub fn from_reference(problem: &CompositionProblem<T>, r: &ReferencePoint<T>) -> Self {
        let vals = problem.nested_values(&r.x);
        let layers = r
            .duals
            .iter()
            .enumerate()
            .map(|(i, pi)| {
                let y = &vals[i + 1];
                let f = problem.layers[i].exact_value(y);
                let fstar = pi.dot(y) - &f;
                (pi.clone(), fstar)
            })
            .collect();
        Self { layers }
    }

    /// L_1(x, pi_{1:}) without the regularizer.
    pub fn lagrangian(&self, x: &Vector<T>) -> Result<T> {
        let mut v = x.clone();
        for (pi, fstar) in self.layers.iter().rev() {
            if pi.ncols() != v.len() {
                return Err(SsdError::DimMismatch("lagrangian chain".into()));
            }
            v = pi.dot(&v) - fstar;
        }
        if v.len() != 1 {
            return Err(SsdError::DimMismatch("outermost layer not scalar".into()));
        }
        Ok(v[0])
    }

    /// Product pi_1 pi_2 ... pi_k as a row vector.
    pub fn chain_product(&self) -> Vector<T> {
        let mut row: Matrix<T> = self.layers[0].0.clone();
        for (pi, _) in self.layers.iter().skip(1) {
            row = row.dot(pi);
        }
        row.row(0).to_owned()
    }
}

/// Nested stochastic Lagrangian L_i(x, pi_{i:}(xi)): `samples` are ordered
/// innermost first (layer k down to i) and share a destination tag.
pub fn stochastic_lagrangian<T: Scalar>(
    samples: &[&DualSample<T>],
    x: &Vector<T>,
) -> Result<Vector<T>> {
    let mut v = x.clone();
    for s in samples {
        v = s.apply(&v)?;
    }
    Ok(v)
}

/// Gap function Q(z_cand, z_ref) = L_a(x_cand; pi_ref) - L_a(x_ref; pi_cand).
pub fn gap_q<T: Scalar>(
    problem: &CompositionProblem<T>,
    x_cand: &Vector<T>,
    duals_cand: &DualsView<T>,
    reference: &ReferencePoint<T>,
) -> Result<T> {
    let ref_view = DualsView::from_reference(problem, reference);
    let lhs = ref_view.lagrangian(x_cand)? + problem.reg.value(x_cand);
    let rhs = duals_cand.lagrangian(&reference.x)? + problem.reg.value(&reference.x);
    Ok(lhs - rhs)
}

/// Weighted mean sum w_t x_t / sum w_t.
pub fn ergodic_average<T: Scalar>(xs: &[Vector<T>], weights: &[T]) -> Result<Vector<T>> {
    if xs.len() != weights.len() || xs.is_empty() {
        return Err(SsdError::DimMismatch("ergodic average lengths".into()));
    }
    let mut acc: Vector<T> = Vector::zeros(xs[0].len());
    let mut wsum = T::zero();
    for (x, &w) in xs.iter().zip(weights.iter()) {
        acc += &x.mapv(|v| v * w);
        wsum += w;
    }
    Ok(acc.mapv(|v| v / wsum))
}

/// Running weighted average, kept incrementally by the solvers.
pub struct ErgodicMean<T> {
    acc: Vector<T>,
    wsum: T,
}

impl<T: Scalar> ErgodicMean<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            acc: Vector::zeros(dim),
            wsum: T::zero(),
        }
    }

    pub fn push(&mut self, x: &Vector<T>, w: T) {
        self.acc = &self.acc + &x.mapv(|v| v * w);
        self.wsum += w;
    }

    pub fn mean(&self) -> Vector<T> {
        self.acc.mapv(|v| v / self.wsum)
    }
}

/// Strong-convexity check of the weighted conjugate Bregman distance.
///
/// Returns (|w| w^T V(pi1, pi2), |w^T (pi1 - pi2)|^2 / (2 L)); callers assert
/// lhs >= rhs. V is reconstructed through the conjugate identity for smooth
/// and semi-smooth layers and is the (sqrt(m)/2-scaled) squared row distance
/// for smoothable layers.
pub fn weighted_bregman_check<T: Scalar>(
    layer: &LayerSpec<T>,
    w: &Vector<T>,
    y1: &Vector<T>,
    y2: &Vector<T>,
) -> Result<(T, T)> {
    if w.len() != layer.output_dim() {
        return Err(SsdError::DimMismatch("weight length".into()));
    }
    if w.iter().any(|&v| v < T::zero()) {
        return Err(SsdError::DimMismatch("weights must be non-negative".into()));
    }
    let class = layer.components[0].class();
    if !layer.components.iter().all(|c| c.class() == class) {
        return Err(SsdError::WrongLayerClass {
            expected: "homogeneous",
            found: "mixed",
        });
    }
    let pi1 = jacobian_at(layer, y1);
    let pi2 = jacobian_at(layer, y2);
    let wt_delta = {
        let d = &pi1 - &pi2;
        let mut row = Vector::zeros(layer.input_dim);
        for (j, &wj) in w.iter().enumerate() {
            row += &d.row(j).mapv(|v| v * wj);
        }
        row
    };
    match class {
        LayerClass::Smooth | LayerClass::SemiSmooth => {
            // D_{f*}(pi(y1), pi(y2)) = f(y1) - f(y2) - f'(y2).(y1 - y2)
            let diff = y1 - y2;
            let mut v = Vector::zeros(layer.output_dim());
            for (j, comp) in layer.components.iter().enumerate() {
                let g2 = comp.subgradient(y2);
                v[j] = comp.value(y1) - comp.value(y2) - g2.dot(&diff);
            }
            let lhs = norm2(w) * w.dot(&v);
            let (l, delta_sq) = match class {
                LayerClass::Smooth => (layer.bounds.l_f, norm2_sq(&wt_delta)),
                LayerClass::SemiSmooth => {
                    // partial version: restrict the dual difference to the
                    // smooth block's columns
                    let (ls, cols) = match &layer.components[0] {
                        LayerComponent::SemiSmooth(s) => (s.l_smooth, s.smooth_cols.clone()),
                        _ => unreachable!(),
                    };
                    let d: T = cols.iter().map(|&c| wt_delta[c] * wt_delta[c]).sum();
                    (ls, d)
                }
                _ => unreachable!(),
            };
            if l <= T::zero() {
                return Err(SsdError::MissingBound("smoothness constant".into()));
            }
            Ok((lhs, delta_sq / (T::c(2.0) * l)))
        }
        LayerClass::Smoothable => {
            let m = T::from_usize(layer.output_dim()).unwrap().sqrt();
            let mut v = Vector::zeros(layer.output_dim());
            for j in 0..layer.output_dim() {
                let d = &pi1.row(j) - &pi2.row(j);
                v[j] = m / T::c(2.0) * d.iter().map(|&z| z * z).sum::<T>();
            }
            let lhs = norm2(w) * w.dot(&v);
            Ok((lhs, norm2_sq(&wt_delta) / T::c(2.0)))
        }
        _ => Err(SsdError::WrongLayerClass {
            expected: "smooth, smoothable or semismooth",
            found: class.name(),
        }),
    }
}
