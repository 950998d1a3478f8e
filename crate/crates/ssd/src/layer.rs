//! Layer functions, their first-order oracles and dual bookkeeping.
//!
//! A layer f_i: R^{n_in} -> R^{n_out} is a stack of scalar components sharing
//! one input. Dual variables are stored row-wise: row j of the dual matrix is
//! a subgradient of component j. Conjugate values of smooth / non-smooth
//! components are never stored; they are reconstructed from an associated
//! primal point via f*(pi) = pi . y - f(y).

use crate::error::{Result, SsdError};
use crate::linalg::{clamp, project_simplex, Matrix, Vector};
use crate::rng::StreamRng;
use crate::scalar::Scalar;
use std::sync::Arc;

pub type ScalarFn<T> = Arc<dyn Fn(&Vector<T>) -> T + Send + Sync>;
pub type GradFn<T> = Arc<dyn Fn(&Vector<T>) -> Vector<T> + Send + Sync>;
/// f*(pi) of one smoothable row, with pi restricted to the row's coordinates.
pub type ConjFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;
/// (y_slice, pi_prev_slice, tau) -> argmin_{pi in domain} -pi.y + f*(pi) + tau/2 |pi - pi_prev|^2
pub type ConjProxFn<T> = Arc<dyn Fn(&[T], &[T], T) -> Vec<T> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerClass {
    Affine,
    Smooth,
    Smoothable,
    Nonsmooth,
    SemiSmooth,
}

impl LayerClass {
    pub fn name(self) -> &'static str {
        match self {
            LayerClass::Affine => "affine",
            LayerClass::Smooth => "smooth",
            LayerClass::Smoothable => "smoothable",
            LayerClass::Nonsmooth => "nonsmooth",
            LayerClass::SemiSmooth => "semismooth",
        }
    }

    /// Layers updated through an associated primal point rather than an
    /// explicit dual matrix.
    pub fn is_implicit(self) -> bool {
        !matches!(self, LayerClass::Smoothable)
    }
}

/// Domain of one explicit (smoothable) dual row.
#[derive(Clone, Debug)]
pub enum DualDomain<T> {
    /// Scalar dual in [lo, hi] acting on a single input coordinate.
    Interval { lo: T, hi: T },
    /// Dual vector on the probability simplex over the row's coordinates.
    Simplex,
}

#[derive(Clone)]
pub struct AffineComponent<T> {
    pub a: Vector<T>,
    pub b: T,
}

#[derive(Clone)]
pub struct SmoothComponent<T> {
    pub eval: ScalarFn<T>,
    pub grad: GradFn<T>,
    /// Lipschitz constant of the gradient.
    pub l_smooth: T,
    /// Componentwise non-negative gradient range (for Assumption-2 checks).
    pub nonneg_dual: bool,
    /// Input coordinates the row actually reads; `None` means all of them.
    /// Declaring a subset refines the row's argument classification when the
    /// layer input mixes exact and noisy coordinates.
    pub cols: Option<Vec<usize>>,
}

#[derive(Clone)]
pub struct SmoothableComponent<T> {
    /// Input coordinates the row reads; the dual row is supported there.
    pub coords: Vec<usize>,
    pub domain: DualDomain<T>,
    pub conj_value: ConjFn<T>,
    pub conj_prox: ConjProxFn<T>,
    /// Dual radius sqrt(max |V(pi, pi')|) of the row.
    pub d_pi: T,
    pub nonneg_dual: bool,
}

#[derive(Clone)]
pub struct NonsmoothComponent<T> {
    pub eval: ScalarFn<T>,
    /// Deterministic subgradient selection (same y -> same output).
    pub subgrad: GradFn<T>,
    pub nonneg_dual: bool,
}

/// Smooth in one input block, merely Lipschitz in the other; updated like a
/// smooth layer, the partition only affects declared constants.
#[derive(Clone)]
pub struct SemiSmoothComponent<T> {
    pub eval: ScalarFn<T>,
    pub grad: GradFn<T>,
    pub smooth_cols: Vec<usize>,
    pub nonsmooth_cols: Vec<usize>,
    /// Partial smoothness constant of the smooth block.
    pub l_smooth: T,
    /// Bound on the non-smooth block of the dual row.
    pub m_nonsmooth: T,
    pub nonneg_dual: bool,
}

#[derive(Clone)]
pub enum LayerComponent<T> {
    Affine(AffineComponent<T>),
    Smooth(SmoothComponent<T>),
    Smoothable(SmoothableComponent<T>),
    Nonsmooth(NonsmoothComponent<T>),
    SemiSmooth(SemiSmoothComponent<T>),
}

impl<T: Scalar> LayerComponent<T> {
    pub fn class(&self) -> LayerClass {
        match self {
            LayerComponent::Affine(_) => LayerClass::Affine,
            LayerComponent::Smooth(_) => LayerClass::Smooth,
            LayerComponent::Smoothable(_) => LayerClass::Smoothable,
            LayerComponent::Nonsmooth(_) => LayerClass::Nonsmooth,
            LayerComponent::SemiSmooth(_) => LayerClass::SemiSmooth,
        }
    }

    pub fn nonneg_dual(&self) -> bool {
        match self {
            LayerComponent::Affine(c) => c.a.iter().all(|&x| x >= T::zero()),
            LayerComponent::Smooth(c) => c.nonneg_dual,
            LayerComponent::Smoothable(c) => c.nonneg_dual,
            LayerComponent::Nonsmooth(c) => c.nonneg_dual,
            LayerComponent::SemiSmooth(c) => c.nonneg_dual,
        }
    }

    /// Exact value at y.
    pub fn value(&self, y: &Vector<T>) -> T {
        match self {
            LayerComponent::Affine(c) => c.a.dot(y) + c.b,
            LayerComponent::Smooth(c) => (c.eval)(y),
            LayerComponent::Nonsmooth(c) => (c.eval)(y),
            LayerComponent::SemiSmooth(c) => (c.eval)(y),
            LayerComponent::Smoothable(c) => {
                let pi = smoothable_maximizer(c, y);
                let mut v = -(c.conj_value)(&pi);
                for (idx, &coord) in c.coords.iter().enumerate() {
                    v += pi[idx] * y[coord];
                }
                v
            }
        }
    }

    /// A (consistent) subgradient row at y.
    pub fn subgradient(&self, y: &Vector<T>) -> Vector<T> {
        match self {
            LayerComponent::Affine(c) => c.a.clone(),
            LayerComponent::Smooth(c) => (c.grad)(y),
            LayerComponent::Nonsmooth(c) => (c.subgrad)(y),
            LayerComponent::SemiSmooth(c) => (c.grad)(y),
            LayerComponent::Smoothable(c) => {
                let pi = smoothable_maximizer(c, y);
                let mut row = Vector::zeros(y.len());
                for (idx, &coord) in c.coords.iter().enumerate() {
                    row[coord] = pi[idx];
                }
                row
            }
        }
    }
}

/// tau = 0 proximal step: argmax_{pi in domain} pi . y - f*(pi).
pub fn smoothable_maximizer<T: Scalar>(c: &SmoothableComponent<T>, y: &Vector<T>) -> Vec<T> {
    let ys: Vec<T> = c.coords.iter().map(|&j| y[j]).collect();
    let prev = vec![T::zero(); ys.len()];
    (c.conj_prox)(&ys, &prev, T::zero())
}

pub fn domain_contains<T: Scalar>(domain: &DualDomain<T>, pi: &[T], tol: T) -> bool {
    match domain {
        DualDomain::Interval { lo, hi } => {
            pi.len() == 1 && pi[0] >= *lo - tol && pi[0] <= *hi + tol
        }
        DualDomain::Simplex => {
            let sum: T = pi.iter().copied().sum();
            pi.iter().all(|&x| x >= -tol) && (sum - T::one()).abs() <= tol
        }
    }
}

/// Per-component stochastic behaviour of the layer oracle.
#[derive(Clone)]
pub enum ComponentOracle<T> {
    /// Exact first-order information.
    Exact,
    /// Additive Gaussian noise: `sigma_f` on the value, row noise with total
    /// standard deviation `sigma_pi` spread isotropically over the entries.
    Gaussian { sigma_f: T, sigma_pi: T },
    /// Affine row with a Gaussian-perturbed slope; one draw serves both the
    /// value and the jacobian, so conjugate estimates stay exact.
    AffineSlopeNoise { sigma: T },
    /// Finite scenario mixture; the component's exact closures must equal the
    /// probability-weighted sum of the scenario closures.
    Scenario(Arc<ScenarioMixture<T>>),
}

#[derive(Clone)]
pub struct ScenarioMixture<T> {
    pub probs: Vec<T>,
    pub values: Vec<ScalarFn<T>>,
    pub grads: Vec<GradFn<T>>,
}

impl<T: Scalar> ScenarioMixture<T> {
    pub fn draw_index<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = T::uniform(rng);
        let mut acc = T::zero();
        for (s, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return s;
            }
        }
        self.probs.len() - 1
    }
}

impl<T> ComponentOracle<T> {
    pub fn is_deterministic(&self) -> bool {
        matches!(self, ComponentOracle::Exact)
    }
}

impl<T: Scalar> std::fmt::Debug for ComponentOracle<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ComponentOracle::Exact => write!(f, "Exact"),
            ComponentOracle::Gaussian { sigma_f, sigma_pi } => {
                write!(f, "Gaussian(sigma_f={sigma_f}, sigma_pi={sigma_pi})")
            }
            ComponentOracle::AffineSlopeNoise { sigma } => {
                write!(f, "AffineSlopeNoise(sigma={sigma})")
            }
            ComponentOracle::Scenario(m) => write!(f, "Scenario({} outcomes)", m.probs.len()),
        }
    }
}

/// First-order oracle of one layer: unbiased (value, jacobian) estimates.
#[derive(Clone)]
pub struct Oracle<T> {
    pub per_component: Vec<ComponentOracle<T>>,
}

impl<T> Oracle<T> {
    pub fn exact(n_components: usize) -> Self {
        Self {
            per_component: (0..n_components).map(|_| ComponentOracle::Exact).collect(),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        self.per_component.iter().all(|o| o.is_deterministic())
    }
}

pub struct OracleSample<T> {
    pub value: Vector<T>,
    pub jacobian: Matrix<T>,
}

/// Declared constants of a layer (all are upper bounds).
#[derive(Clone, Debug)]
pub struct LayerBounds<T> {
    /// E |f_i'(y, xi)|^2 <= M_Pi^2.
    pub m_pi: T,
    /// Smoothness constant (0 if n/a).
    pub l_f: T,
    /// Dual radius of the explicit rows (0 if n/a).
    pub d_pi: T,
    /// Value-noise standard deviation of the layer oracle.
    pub sigma_f: T,
    /// Jacobian-noise standard deviation of the layer oracle.
    pub sigma_pi: T,
    /// Value bound |f_i| over the reachable region; feeds the default
    /// M_L recursion for the aggregated noise constants.
    pub m_f: T,
    /// Optional override of the Lagrangian-value bound M_L at this layer.
    pub m_l_override: Option<T>,
}

impl<T: Scalar> LayerBounds<T> {
    pub fn validate(&self, deterministic: bool) -> Result<()> {
        let nonneg = self.m_pi >= T::zero()
            && self.l_f >= T::zero()
            && self.d_pi >= T::zero()
            && self.sigma_f >= T::zero()
            && self.sigma_pi >= T::zero()
            && self.m_f >= T::zero();
        if !nonneg {
            return Err(SsdError::MissingBound("negative layer bound".into()));
        }
        if deterministic && (self.sigma_f > T::zero() || self.sigma_pi > T::zero()) {
            return Err(SsdError::MissingBound(
                "deterministic oracle must declare zero noise".into(),
            ));
        }
        Ok(())
    }
}

/// One layer of the composition.
#[derive(Clone)]
pub struct LayerSpec<T> {
    pub components: Vec<LayerComponent<T>>,
    pub input_dim: usize,
    pub oracle: Oracle<T>,
    pub bounds: LayerBounds<T>,
}

impl<T: Scalar> LayerSpec<T> {
    pub fn new(
        components: Vec<LayerComponent<T>>,
        input_dim: usize,
        oracle: Oracle<T>,
        bounds: LayerBounds<T>,
    ) -> Result<Self> {
        if oracle.per_component.len() != components.len() {
            return Err(SsdError::DimMismatch(format!(
                "oracle covers {} components, layer has {}",
                oracle.per_component.len(),
                components.len()
            )));
        }
        bounds.validate(oracle.is_deterministic())?;
        for c in &components {
            if let LayerComponent::Affine(a) = c {
                if a.a.len() != input_dim {
                    return Err(SsdError::DimMismatch("affine row width".into()));
                }
            }
            if let LayerComponent::Smoothable(s) = c {
                if s.coords.iter().any(|&j| j >= input_dim) {
                    return Err(SsdError::DimMismatch(
                        "smoothable coords out of range".into(),
                    ));
                }
                if matches!(s.domain, DualDomain::Interval { .. }) && s.coords.len() != 1 {
                    return Err(SsdError::DimMismatch(
                        "interval-domain smoothable row must read one coordinate".into(),
                    ));
                }
            }
        }
        Ok(Self {
            components,
            input_dim,
            oracle,
            bounds,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    pub fn is_deterministic(&self) -> bool {
        self.oracle.is_deterministic()
    }

    /// Exact (value, jacobian) at y.
    pub fn exact_sample(&self, y: &Vector<T>) -> OracleSample<T> {
        let m = self.output_dim();
        let mut value = Vector::zeros(m);
        let mut jacobian = Matrix::zeros((m, self.input_dim));
        for (j, c) in self.components.iter().enumerate() {
            value[j] = c.value(y);
            jacobian.row_mut(j).assign(&c.subgradient(y));
        }
        OracleSample { value, jacobian }
    }

    pub fn exact_value(&self, y: &Vector<T>) -> Vector<T> {
        Vector::from_iter(self.components.iter().map(|c| c.value(y)))
    }

    /// One stochastic query of the whole layer at y.
    pub fn query(&self, y: &Vector<T>, rng: &mut StreamRng) -> OracleSample<T> {
        let m = self.output_dim();
        let mut value = Vector::zeros(m);
        let mut jacobian = Matrix::zeros((m, self.input_dim));
        for j in 0..m {
            let (v, g) = self.query_component(j, y, rng);
            value[j] = v;
            jacobian.row_mut(j).assign(&g);
        }
        OracleSample { value, jacobian }
    }

    /// One stochastic query of component `j` at y.
    pub fn query_component(&self, j: usize, y: &Vector<T>, rng: &mut StreamRng) -> (T, Vector<T>) {
        let c = &self.components[j];
        match &self.oracle.per_component[j] {
            ComponentOracle::Exact => (c.value(y), c.subgradient(y)),
            ComponentOracle::Gaussian { sigma_f, sigma_pi } => {
                let mut v = c.value(y);
                let mut g = c.subgradient(y);
                if *sigma_f > T::zero() {
                    v += *sigma_f * T::standard_normal(rng);
                }
                if *sigma_pi > T::zero() {
                    let entry = *sigma_pi / T::from_usize(g.len()).unwrap().sqrt();
                    for x in g.iter_mut() {
                        *x += entry * T::standard_normal(rng);
                    }
                }
                (v, g)
            }
            ComponentOracle::AffineSlopeNoise { sigma } => match c {
                LayerComponent::Affine(af) => {
                    let entry = *sigma / T::from_usize(af.a.len()).unwrap().sqrt();
                    let slope = af.a.mapv(|v| v + entry * T::standard_normal(rng));
                    (slope.dot(y) + af.b, slope)
                }
                _ => unreachable!("slope noise is an affine-row oracle"),
            },
            ComponentOracle::Scenario(mix) => {
                let s = mix.draw_index(rng);
                ((mix.values[s])(y), (mix.grads[s])(y))
            }
        }
    }
}

/// Unbiased dual estimate produced from exactly one oracle query,
/// together with the tag of its destination.
#[derive(Clone, Debug)]
pub struct DualSample<T> {
    pub pi: Matrix<T>,
    pub fstar: Vector<T>,
    pub dest_tag: usize,
}

impl<T: Scalar> DualSample<T> {
    /// pi . v - f* (one recursion step of the stochastic Lagrangian).
    pub fn apply(&self, v: &Vector<T>) -> Result<Vector<T>> {
        if self.pi.ncols() != v.len() {
            return Err(SsdError::DimMismatch(format!(
                "dual sample expects input dim {}, got {}",
                self.pi.ncols(),
                v.len()
            )));
        }
        Ok(self.pi.dot(v) - &self.fstar)
    }
}

/// Per-layer dual iterate: an associated primal point for implicit classes,
/// an explicit matrix for smoothable rows, or both for mixed layers.
pub struct DualLayerState<T> {
    /// Anchors per class group present in the layer (implicit classes).
    pub anchors: Vec<(LayerClass, Vector<T>)>,
    /// Explicit rows, zero off their coordinates (smoothable components).
    pub explicit: Option<Matrix<T>>,
}

impl<T: Scalar> DualLayerState<T> {
    pub fn anchor(&self, class: LayerClass) -> Option<&Vector<T>> {
        self.anchors
            .iter()
            .find(|(c, _)| *c == class)
            .map(|(_, y)| y)
    }

    pub fn anchor_mut(&mut self, class: LayerClass) -> Option<&mut Vector<T>> {
        self.anchors
            .iter_mut()
            .find(|(c, _)| *c == class)
            .map(|(_, y)| y)
    }
}

/// Standard smoothable row: scalar dual on an interval with quadratic
/// conjugate f*(pi) = q/2 pi^2 + r pi; prox is a clip.
pub fn interval_quadratic_conjugate<T: Scalar>(
    coord: usize,
    lo: T,
    hi: T,
    q: T,
    r: T,
) -> SmoothableComponent<T> {
    let conj_value: ConjFn<T> = Arc::new(move |pi: &[T]| q / T::c(2.0) * pi[0] * pi[0] + r * pi[0]);
    let conj_prox: ConjProxFn<T> = Arc::new(move |y: &[T], prev: &[T], tau: T| {
        // argmin -pi y + q/2 pi^2 + r pi + tau/2 (pi - prev)^2 on [lo, hi]
        let denom = q + tau;
        let pi = if denom > T::zero() {
            (y[0] - r + tau * prev[0]) / denom
        } else if y[0] - r > T::zero() {
            hi
        } else if y[0] - r < T::zero() {
            lo
        } else {
            prev[0]
        };
        vec![clamp(pi, lo, hi)]
    });
    SmoothableComponent {
        coords: vec![coord],
        domain: DualDomain::Interval { lo, hi },
        conj_value,
        conj_prox,
        // max over the interval of sqrt(1/2 (pi-pi')^2) = (hi-lo)/sqrt(2)
        d_pi: (hi - lo) / T::c(2.0).sqrt(),
        nonneg_dual: lo >= T::zero(),
    }
}

/// max_j y_j over the row's coordinates: dual on the simplex, f* = 0.
pub fn simplex_max_component<T: Scalar>(coords: Vec<usize>) -> SmoothableComponent<T> {
    let conj_value: ConjFn<T> = Arc::new(|_pi: &[T]| T::zero());
    let conj_prox: ConjProxFn<T> = Arc::new(move |y: &[T], prev: &[T], tau: T| {
        if tau > T::zero() {
            let v: Vec<T> = y
                .iter()
                .zip(prev.iter())
                .map(|(&yj, &pj)| pj + yj / tau)
                .collect();
            project_simplex(&v)
        } else {
            // pure maximization: vertex of the largest coordinate
            let mut best = 0;
            for (j, &yj) in y.iter().enumerate() {
                if yj > y[best] {
                    best = j;
                }
            }
            let mut e = vec![T::zero(); y.len()];
            e[best] = T::one();
            e
        }
    });
    SmoothableComponent {
        coords,
        domain: DualDomain::Simplex,
        conj_value,
        conj_prox,
        d_pi: T::one(),
        nonneg_dual: true,
    }
}

/// Row |a.y - b| with the minimum-norm (zero) selection at the kink.
pub fn abs_residual_nonsmooth<T: Scalar>(a: Vector<T>, b: T) -> NonsmoothComponent<T> {
    let a2 = a.clone();
    let eval: ScalarFn<T> = Arc::new(move |y: &Vector<T>| (a.dot(y) - b).abs());
    let subgrad: GradFn<T> = Arc::new(move |y: &Vector<T>| {
        let r = a2.dot(y) - b;
        let s = if r > T::zero() {
            T::one()
        } else if r < T::zero() {
            -T::one()
        } else {
            T::zero()
        };
        a2.mapv(|x| x * s)
    });
    NonsmoothComponent {
        eval,
        subgrad,
        nonneg_dual: false,
    }
}

/// Softplus row ln(1 + exp(a.y - b)): smooth, increasing in a-direction,
/// gradient row sigmoid(.) * a.
pub fn softplus_component<T: Scalar>(a: Vector<T>, b: T) -> SmoothComponent<T> {
    let na2 = norm2_sq_of(&a);
    let nonneg = a.iter().all(|&x| x >= T::zero());
    let a2 = a.clone();
    let eval: ScalarFn<T> = Arc::new(move |y: &Vector<T>| softplus(a.dot(y) - b));
    let grad: GradFn<T> = Arc::new(move |y: &Vector<T>| {
        let s = sigmoid(a2.dot(y) - b);
        a2.mapv(|x| x * s)
    });
    SmoothComponent {
        eval,
        grad,
        l_smooth: na2 / T::c(4.0),
        nonneg_dual: nonneg,
        cols: None,
    }
}

fn norm2_sq_of<T: Scalar>(a: &Vector<T>) -> T {
    a.iter().map(|&x| x * x).sum()
}

pub fn softplus<T: Scalar>(z: T) -> T {
    // stable: ln(1+e^z) = max(z,0) + ln(1+e^{-|z|})
    z.max(T::zero()) + (T::one() + (-z.abs()).exp()).ln()
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Row q/2 (a.y - s)^2: smooth convex quadratic.
pub fn quadratic_component<T: Scalar>(a: Vector<T>, s: T, q: T) -> SmoothComponent<T> {
    let na2 = norm2_sq_of(&a);
    let a2 = a.clone();
    let eval: ScalarFn<T> = Arc::new(move |y: &Vector<T>| {
        let r = a.dot(y) - s;
        q / T::c(2.0) * r * r
    });
    let grad: GradFn<T> = Arc::new(move |y: &Vector<T>| {
        let r = a2.dot(y) - s;
        a2.mapv(|x| x * q * r)
    });
    SmoothComponent {
        eval,
        grad,
        l_smooth: q * na2,
        nonneg_dual: false,
        cols: None,
    }
}

/// Stacks subgradient rows of a layer at y into a matrix.
pub fn jacobian_at<T: Scalar>(layer: &LayerSpec<T>, y: &Vector<T>) -> Matrix<T> {
    let mut j = Matrix::zeros((layer.output_dim(), layer.input_dim));
    for (r, c) in layer.components.iter().enumerate() {
        j.row_mut(r).assign(&c.subgradient(y));
    }
    j
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm2;
    use crate::rng::{RngFactory, StreamKey};
    use ndarray::array;

    #[test]
    fn affine_component_value_and_subgradient() {
        let c = LayerComponent::Affine(AffineComponent {
            a: array![2.0, -1.0],
            b: 1.0,
        });
        let y = array![3.0, 4.0];
        assert_eq!(c.value(&y), 3.0);
        assert_eq!(c.subgradient(&y), array![2.0, -1.0]);
    }

    #[test]
    fn nonsmooth_kink_tie_break_is_zero() {
        let c = abs_residual_nonsmooth(array![1.0], 2.0);
        let g = (c.subgrad)(&array![2.0]);
        assert_eq!(g, array![0.0]);
        let g = (c.subgrad)(&array![5.0]);
        assert_eq!(g, array![1.0]);
    }

    #[test]
    fn interval_prox_matches_grid_search() {
        // h^gamma row: f*(pi) = gamma/2 pi^2 on [0,1]
        let gamma = 0.3;
        let c = interval_quadratic_conjugate(0, 0.0, 1.0, gamma, 0.0);
        let mut rng = RngFactory::new(7).stream(StreamKey {
            layer: 0,
            tick: 0,
            tag: 0,
        });
        for _ in 0..200 {
            let y = 4.0 * f64::uniform(&mut rng) - 2.0;
            let prev = f64::uniform(&mut rng);
            let tau = 2.0 * f64::uniform(&mut rng);
            let pi = (c.conj_prox)(&[y], &[prev], tau)[0];
            // grid search over [0,1]
            let obj = |p: f64| -p * y + gamma / 2.0 * p * p + tau / 2.0 * (p - prev).powi(2);
            let mut best = 0.0;
            let mut bestv = obj(0.0);
            for i in 1..=100_000 {
                let p = i as f64 / 100_000.0;
                let v = obj(p);
                if v < bestv {
                    bestv = v;
                    best = p;
                }
            }
            assert!((pi - best).abs() < 2e-5, "prox {pi} vs grid {best}");
        }
    }

    #[test]
    fn smooth_gradients_are_l_lipschitz_by_finite_differences() {
        let f = RngFactory::new(21);
        let mut rng = f.stream(StreamKey {
            layer: 0,
            tick: 0,
            tag: 0,
        });
        let comps: Vec<(LayerComponent<f64>, f64)> = vec![
            (
                LayerComponent::Smooth(softplus_component(array![1.0, -0.5, 0.3], 0.2)),
                (1.0f64 + 0.25 + 0.09) / 4.0,
            ),
            (
                LayerComponent::Smooth(quadratic_component(array![0.7, 1.1, -0.4], 0.1, 1.3)),
                1.3 * (0.49f64 + 1.21 + 0.16),
            ),
        ];
        for (comp, l) in &comps {
            for _ in 0..200 {
                let rv = |rng: &mut crate::rng::StreamRng| 4.0 * f64::uniform(rng) - 2.0;
                let y1 = array![rv(&mut rng), rv(&mut rng), rv(&mut rng)];
                let y2 = array![rv(&mut rng), rv(&mut rng), rv(&mut rng)];
                let g1 = comp.subgradient(&y1);
                let g2 = comp.subgradient(&y2);
                let dg: f64 = (&g1 - &g2).iter().map(|v| v * v).sum::<f64>().sqrt();
                let dy: f64 = (&y1 - &y2).iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(dg <= l * dy * (1.0 + 1e-9), "{dg} > {l} * {dy}");
            }
        }
    }

    #[test]
    fn nonsmooth_subgradients_are_bounded_and_deterministic() {
        let a = array![0.8, -0.6];
        let m = norm2(&a);
        let c = abs_residual_nonsmooth(a, 0.3);
        let f = RngFactory::new(22);
        let mut rng = f.stream(StreamKey {
            layer: 0,
            tick: 0,
            tag: 0,
        });
        for _ in 0..500 {
            let y = array![
                4.0 * f64::uniform(&mut rng) - 2.0,
                4.0 * f64::uniform(&mut rng) - 2.0
            ];
            let g1 = (c.subgrad)(&y);
            let g2 = (c.subgrad)(&y);
            assert_eq!(g1, g2, "selection must be deterministic");
            assert!(norm2(&g1) <= m + 1e-12);
        }
    }

    #[test]
    fn gaussian_oracle_is_unbiased() {
        let comp = quadratic_component(array![1.0, 1.0], 0.0, 1.0);
        let layer = LayerSpec::new(
            vec![LayerComponent::Smooth(comp)],
            2,
            Oracle {
                per_component: vec![ComponentOracle::Gaussian {
                    sigma_f: 0.5,
                    sigma_pi: 0.3,
                }],
            },
            LayerBounds {
                m_pi: 10.0,
                l_f: 2.0,
                d_pi: 0.0,
                sigma_f: 0.5,
                sigma_pi: 0.3,
                m_f: 10.0,
                m_l_override: None,
            },
        )
        .unwrap();
        let y = array![1.0, 2.0];
        let exact = layer.exact_sample(&y);
        let n = 200_000;
        let f = RngFactory::new(11);
        let mut mv = 0.0;
        let mut mg = array![0.0, 0.0];
        for i in 0..n {
            let mut rng = f.stream(StreamKey {
                layer: 1,
                tick: i as u64,
                tag: 0,
            });
            let s = layer.query(&y, &mut rng);
            mv += s.value[0];
            mg = mg + s.jacobian.row(0);
        }
        mv /= n as f64;
        mg /= n as f64;
        let se_v = 0.5 / (n as f64).sqrt();
        assert!((mv - exact.value[0]).abs() < 5.0 * se_v);
        let se_g = 0.3 / (2.0f64).sqrt() / (n as f64).sqrt();
        for j in 0..2 {
            assert!((mg[j] - exact.jacobian[(0, j)]).abs() < 5.0 * se_g);
        }
    }
}
