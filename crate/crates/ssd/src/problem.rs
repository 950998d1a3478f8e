//! Composition problems: min_{x in X} f_1(f_2(...f_k(x)...)) + u(x).

use crate::error::{Result, SsdError};
use crate::layer::{jacobian_at, LayerClass, LayerSpec};
use crate::linalg::{norm2, Matrix, Vector};
use crate::scalar::Scalar;

/// Feasible set X; the x-proximal step is an exact projection.
#[derive(Clone, Debug)]
pub enum FeasibleSet<T> {
    Ball { center: Vector<T>, radius: T },
    Box { lo: Vector<T>, hi: Vector<T> },
}

impl<T: Scalar> FeasibleSet<T> {
    pub fn dim(&self) -> usize {
        match self {
            FeasibleSet::Ball { center, .. } => center.len(),
            FeasibleSet::Box { lo, .. } => lo.len(),
        }
    }

    /// D_X = sqrt(max 1/2 |x1 - x2|^2).
    pub fn diameter_const(&self) -> T {
        match self {
            FeasibleSet::Ball { radius, .. } => T::c(2.0).sqrt() * *radius,
            FeasibleSet::Box { lo, hi } => {
                let d = hi - lo;
                norm2(&d) / T::c(2.0).sqrt()
            }
        }
    }

    /// max_{x in X} |x|, bounds the base case of the Lagrangian recursion.
    pub fn max_norm(&self) -> T {
        match self {
            FeasibleSet::Ball { center, radius } => norm2(center) + *radius,
            FeasibleSet::Box { lo, hi } => {
                let mut s = T::zero();
                for (&a, &b) in lo.iter().zip(hi.iter()) {
                    let m = a.abs().max(b.abs());
                    s += m * m;
                }
                s.sqrt()
            }
        }
    }

    pub fn project(&self, x: &Vector<T>) -> Vector<T> {
        match self {
            FeasibleSet::Ball { center, radius } => {
                let d = x - center;
                let n = norm2(&d);
                if n <= *radius {
                    x.clone()
                } else {
                    center + &d.mapv(|v| v * (*radius / n))
                }
            }
            FeasibleSet::Box { lo, hi } => {
                let mut p = x.clone();
                for ((v, &l), &h) in p.iter_mut().zip(lo.iter()).zip(hi.iter()) {
                    *v = (*v).max(l).min(h);
                }
                p
            }
        }
    }

    pub fn contains(&self, x: &Vector<T>, tol: T) -> bool {
        match self {
            FeasibleSet::Ball { center, radius } => norm2(&(x - center)) <= *radius + tol,
            FeasibleSet::Box { lo, hi } => x
                .iter()
                .zip(lo.iter())
                .zip(hi.iter())
                .all(|((&v, &l), &h)| v >= l - tol && v <= h + tol),
        }
    }

    pub fn center(&self) -> Vector<T> {
        match self {
            FeasibleSet::Ball { center, .. } => center.clone(),
            FeasibleSet::Box { lo, hi } => (lo + hi).mapv(|v| v / T::c(2.0)),
        }
    }
}

/// u(x) = alpha/2 |x - center|^2 + q.x; simple enough for a closed-form prox.
#[derive(Clone, Debug)]
pub struct Regularizer<T> {
    pub alpha: T,
    pub center: Vector<T>,
    pub linear: Option<Vector<T>>,
}

impl<T: Scalar> Regularizer<T> {
    pub fn zero(dim: usize) -> Self {
        Self {
            alpha: T::zero(),
            center: Vector::zeros(dim),
            linear: None,
        }
    }

    pub fn quadratic(alpha: T, center: Vector<T>) -> Self {
        Self {
            alpha,
            center,
            linear: None,
        }
    }

    pub fn value(&self, x: &Vector<T>) -> T {
        let d = x - &self.center;
        let mut v = self.alpha / T::c(2.0) * d.iter().map(|&z| z * z).sum::<T>();
        if let Some(q) = &self.linear {
            v += q.dot(x);
        }
        v
    }
}

pub struct CompositionProblem<T> {
    /// Index 0 = outermost layer f_1.
    pub layers: Vec<LayerSpec<T>>,
    pub feasible: FeasibleSet<T>,
    pub reg: Regularizer<T>,
}

impl<T: Scalar> CompositionProblem<T> {
    /// Assembles and checks the structural assumptions:
    /// chained dims, outer non-negativity for non-affine layers, and
    /// exactness of arguments for non-smooth / smoothable layers.
    pub fn new(
        layers: Vec<LayerSpec<T>>,
        feasible: FeasibleSet<T>,
        reg: Regularizer<T>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(SsdError::DimMismatch("no layers".into()));
        }
        if layers[0].output_dim() != 1 {
            return Err(SsdError::DimMismatch(
                "outermost layer must be scalar".into(),
            ));
        }
        let n = feasible.dim();
        for i in 0..layers.len() {
            let expect = if i + 1 < layers.len() {
                layers[i + 1].output_dim()
            } else {
                n
            };
            if layers[i].input_dim != expect {
                return Err(SsdError::DimMismatch(format!(
                    "layer {} input dim {} vs inner output {}",
                    i + 1,
                    layers[i].input_dim,
                    expect
                )));
            }
        }
        if reg.center.len() != n {
            return Err(SsdError::DimMismatch("regularizer center dim".into()));
        }

        let p = Self {
            layers,
            feasible,
            reg,
        };

        // Outer non-negativity: every layer strictly outside a non-affine
        // layer must have componentwise non-negative dual ranges.
        for i in 0..p.layers.len() {
            let affine = p.layers[i]
                .components
                .iter()
                .all(|c| c.class() == LayerClass::Affine);
            if affine {
                continue;
            }
            for outer in 0..i {
                let ok = p.layers[outer].components.iter().all(|c| c.nonneg_dual());
                if !ok {
                    return Err(SsdError::MonotonicityViolation(i + 1));
                }
            }
        }

        // Exact arguments: non-smooth rows and the non-smooth block of
        // semi-smooth rows need deterministic inner information; smoothable
        // rows must themselves be deterministic.
        let noisy = p.noisy_output_flags();
        for (i, layer) in p.layers.iter().enumerate() {
            let inner_noisy = |cols: &[usize]| -> bool {
                if i + 1 >= noisy.len() {
                    return false; // argument is x itself
                }
                cols.iter().any(|&c| noisy[i + 1][c])
            };
            let all_inner: Vec<usize> = (0..layer.input_dim).collect();
            for (j, comp) in layer.components.iter().enumerate() {
                match comp {
                    crate::layer::LayerComponent::Nonsmooth(_) => {
                        if inner_noisy(&all_inner) {
                            return Err(SsdError::NonsmoothNoisyUnsupported(i + 1));
                        }
                    }
                    crate::layer::LayerComponent::Smoothable(s) => {
                        if !layer.oracle.per_component[j].is_deterministic() {
                            return Err(SsdError::NonsmoothNoisyUnsupported(i + 1));
                        }
                        let _ = s;
                    }
                    crate::layer::LayerComponent::SemiSmooth(s)
                        if inner_noisy(&s.nonsmooth_cols) =>
                    {
                        return Err(SsdError::NonsmoothNoisyUnsupported(i + 1));
                    }
                    _ => {}
                }
            }
        }
        Ok(p)
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn dim(&self) -> usize {
        self.feasible.dim()
    }

    /// 1-based access mirroring the f_i notation.
    pub fn layer(&self, i: usize) -> &LayerSpec<T> {
        &self.layers[i - 1]
    }

    /// Per-layer, per-row flags: is the row value of layer i noisy once the
    /// stochasticity of everything inside it is accounted for?
    pub fn noisy_output_flags(&self) -> Vec<Vec<bool>> {
        let k = self.layers.len();
        let mut flags: Vec<Vec<bool>> = vec![Vec::new(); k];
        for i in (0..k).rev() {
            let inner: Option<&Vec<bool>> = if i + 1 < k { Some(&flags[i + 1]) } else { None };
            let inner_any = inner.map(|v| v.iter().any(|&b| b)).unwrap_or(false);
            flags[i] = self.layers[i]
                .components
                .iter()
                .enumerate()
                .map(|(j, comp)| {
                    let own = !self.layers[i].oracle.per_component[j].is_deterministic();
                    let dep = match comp {
                        crate::layer::LayerComponent::Smoothable(s) => inner
                            .map(|v| s.coords.iter().any(|&c| v[c]))
                            .unwrap_or(false),
                        crate::layer::LayerComponent::Affine(a) => inner
                            .map(|v| a.a.iter().enumerate().any(|(c, &w)| w != T::zero() && v[c]))
                            .unwrap_or(false),
                        _ => inner_any,
                    };
                    own || dep
                })
                .collect();
        }
        flags
    }

    /// True when any layer oracle is stochastic.
    pub fn is_stochastic(&self) -> bool {
        self.layers.iter().any(|l| !l.is_deterministic())
    }

    /// Nested values y_i = f_{i+1} o ... o f_k(x) for i = 1..=k+1
    /// (y_{k+1} = x, returned last).
    pub fn nested_values(&self, x: &Vector<T>) -> Vec<Vector<T>> {
        let k = self.layers.len();
        let mut vals = vec![Vector::zeros(0); k + 1];
        vals[k] = x.clone();
        for i in (0..k).rev() {
            vals[i] = self.layers[i].exact_value(&vals[i + 1]);
        }
        vals
    }

    /// Exact f_1(f_2(...f_k(x))) + u(x).
    pub fn eval_composition(&self, x: &Vector<T>) -> T {
        let vals = self.nested_values(x);
        vals[0][0] + self.reg.value(x)
    }

    /// Exact subgradient matrices at the nested values of x.
    pub fn exact_duals_at(&self, x: &Vector<T>) -> Vec<Matrix<T>> {
        let vals = self.nested_values(x);
        (0..self.layers.len())
            .map(|i| jacobian_at(&self.layers[i], &vals[i + 1]))
            .collect()
    }

    /// Chain-rule subgradient of the composition (without u).
    pub fn exact_subgradient(&self, x: &Vector<T>) -> Vector<T> {
        let duals = self.exact_duals_at(x);
        let mut row: Matrix<T> = duals[0].clone();
        for pi in duals.iter().skip(1) {
            row = row.dot(pi);
        }
        row.row(0).to_owned()
    }
}

/// A primal-dual point used as a gap-function reference.
pub struct ReferencePoint<T> {
    pub x: Vector<T>,
    /// Explicit dual matrices, one per layer (outermost first).
    pub duals: Vec<Matrix<T>>,
}

impl<T: Scalar> ReferencePoint<T> {
    /// Reference with exact subgradients at the nested values of x.
    pub fn at(problem: &CompositionProblem<T>, x: &Vector<T>) -> Self {
        Self {
            x: x.clone(),
            duals: problem.exact_duals_at(x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::*;
    use ndarray::array;
    use std::sync::Arc;

    fn identity_layer(dim: usize) -> LayerSpec<f64> {
        let comps: Vec<LayerComponent<f64>> = (0..dim)
            .map(|j| {
                let mut a = Vector::zeros(dim);
                a[j] = 1.0;
                LayerComponent::Affine(AffineComponent { a, b: 0.0 })
            })
            .collect();
        LayerSpec::new(
            comps,
            dim,
            Oracle::exact(dim),
            LayerBounds {
                m_pi: 1.0,
                l_f: 0.0,
                d_pi: 0.0,
                sigma_f: 0.0,
                sigma_pi: 0.0,
                m_f: 10.0,
                m_l_override: None,
            },
        )
        .unwrap()
    }

    #[test]
    fn identity_affine_composition_is_identity() {
        // k=1, f_1 = identity affine (scalar), u = 0, x = 3 -> 3
        let p = CompositionProblem::new(
            vec![identity_layer(1)],
            FeasibleSet::Ball {
                center: array![0.0],
                radius: 10.0,
            },
            Regularizer::zero(1),
        )
        .unwrap();
        assert_eq!(p.eval_composition(&array![3.0]), 3.0);
    }

    #[test]
    fn square_of_abs_composition() {
        // f_1(y) = y^2, f_2(x) = |x|, x = -2 -> 4
        let f1 = LayerSpec::new(
            vec![LayerComponent::Smooth(quadratic_component(
                array![1.0],
                0.0,
                2.0,
            ))],
            1,
            Oracle::exact(1),
            LayerBounds {
                m_pi: 20.0,
                l_f: 2.0,
                d_pi: 0.0,
                sigma_f: 0.0,
                sigma_pi: 0.0,
                m_f: 100.0,
                m_l_override: None,
            },
        )
        .unwrap();
        let f2 = LayerSpec::new(
            vec![LayerComponent::Nonsmooth(abs_residual_nonsmooth(
                array![1.0],
                0.0,
            ))],
            1,
            Oracle::exact(1),
            LayerBounds {
                m_pi: 1.0,
                l_f: 0.0,
                d_pi: 0.0,
                sigma_f: 0.0,
                sigma_pi: 0.0,
                m_f: 10.0,
                m_l_override: None,
            },
        )
        .unwrap();
        // f_1 = y^2 has sign-changing gradient: outer of a non-affine layer
        // must be non-negative, so this assembly is rejected...
        let err = CompositionProblem::new(
            vec![f1, f2],
            FeasibleSet::Ball {
                center: array![0.0],
                radius: 10.0,
            },
            Regularizer::zero(1),
        );
        assert!(err.is_err());

        // ...while (y)+^2-style increasing outer layers are accepted. Here
        // |x| >= 0 so y^2 restricted to y >= 0 equals (y)+^2.
        let relu_sq: ScalarFn<f64> = Arc::new(|y: &Vector<f64>| y[0].max(0.0).powi(2));
        let relu_sq_grad: GradFn<f64> = Arc::new(|y: &Vector<f64>| array![2.0 * y[0].max(0.0)]);
        let f1 = LayerSpec::new(
            vec![LayerComponent::Smooth(SmoothComponent {
                eval: relu_sq,
                grad: relu_sq_grad,
                l_smooth: 2.0,
                nonneg_dual: true,
                cols: None,
            })],
            1,
            Oracle::exact(1),
            LayerBounds {
                m_pi: 20.0,
                l_f: 2.0,
                d_pi: 0.0,
                sigma_f: 0.0,
                sigma_pi: 0.0,
                m_f: 100.0,
                m_l_override: None,
            },
        )
        .unwrap();
        let f2 = LayerSpec::new(
            vec![LayerComponent::Nonsmooth(abs_residual_nonsmooth(
                array![1.0],
                0.0,
            ))],
            1,
            Oracle::exact(1),
            LayerBounds {
                m_pi: 1.0,
                l_f: 0.0,
                d_pi: 0.0,
                sigma_f: 0.0,
                sigma_pi: 0.0,
                m_f: 10.0,
                m_l_override: None,
            },
        )
        .unwrap();
        let p = CompositionProblem::new(
            vec![f1, f2],
            FeasibleSet::Ball {
                center: array![0.0],
                radius: 10.0,
            },
            Regularizer::zero(1),
        )
        .unwrap();
        let v: f64 = p.eval_composition(&array![-2.0]);
        assert!((v - 4.0).abs() < 1e-14);
    }

    #[test]
    fn projection_ball_and_box() {
        let ball = FeasibleSet::Ball {
            center: array![0.0, 0.0],
            radius: 1.0,
        };
        let p: Vector<f64> = ball.project(&array![2.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] == 0.0);
        assert!((ball.diameter_const() - 2.0f64.sqrt()).abs() < 1e-15);

        let bx = FeasibleSet::Box {
            lo: array![-1.0, 0.0],
            hi: array![1.0, 2.0],
        };
        let p = bx.project(&array![5.0, -3.0]);
        assert_eq!(p, array![1.0, 0.0]);
        let expect = (2.0f64 * 2.0 + 2.0 * 2.0).sqrt() / 2.0f64.sqrt();
        assert!((bx.diameter_const() - expect).abs() < 1e-15);
    }
}
