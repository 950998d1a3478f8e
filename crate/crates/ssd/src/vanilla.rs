//! The vanilla two-layer solver (no momentum): a smooth outer layer over a
//! Lipschitz inner layer, in convex and strongly convex variants. The dual
//! form keeps explicit dual-sample bookkeeping; the primal form unpacks the
//! implicit proximal updates. Both consume identical oracle streams and
//! produce bit-identical x-iterates.

use crate::engine::x_prox;
use crate::error::{Result, SsdError};
use crate::lagrangian::{DualsView, ErgodicMean};
use crate::layer::{jacobian_at, DualLayerState, DualSample, LayerClass, LayerSpec};
use crate::linalg::{dist_sq, is_finite_vec, Vector};
use crate::policies::{two_layer_schedule, TwoLayerConstants, TwoLayerSchedule};
use crate::problem::{CompositionProblem, FeasibleSet, Regularizer};
use crate::problems::ReferenceSolution;
use crate::rng::{RngFactory, StreamKey};
use crate::scalar::Scalar;
use crate::trace::{RunTrace, TraceRow};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VanillaRegime {
    Convex,
    StronglyConvex,
}

/// Which bookkeeping drives the run; the underlying updates coincide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VanillaForm {
    Primal,
    Dual,
}

pub struct TwoLayerProblem<T> {
    /// f_1: smooth scalar layer (output dim 1).
    pub outer: LayerSpec<T>,
    /// f_2: Lipschitz layer.
    pub inner: LayerSpec<T>,
    pub feasible: FeasibleSet<T>,
    pub reg: Regularizer<T>,
    /// User-supplied bound on the conjugate Bregman radius of the outer
    /// dual; only consumed when the inner value oracle is noisy.
    pub d_pi1: T,
}

impl<T: Scalar> TwoLayerProblem<T> {
    pub fn new(
        outer: LayerSpec<T>,
        inner: LayerSpec<T>,
        feasible: FeasibleSet<T>,
        reg: Regularizer<T>,
        d_pi1: T,
    ) -> Result<Self> {
        if outer.output_dim() != 1 {
            return Err(SsdError::DimMismatch("outer layer must be scalar".into()));
        }
        let outer_ok = outer
            .components
            .iter()
            .all(|c| matches!(c.class(), LayerClass::Smooth | LayerClass::Affine));
        if !outer_ok {
            return Err(SsdError::WrongLayerClass {
                expected: "smooth outer layer",
                found: "non-smooth outer layer",
            });
        }
        let p = Self {
            outer,
            inner,
            feasible,
            reg,
            d_pi1,
        };
        // delegate the remaining structural checks (dims, non-negativity)
        p.composition()?;
        Ok(p)
    }

    /// View as a generic composition problem (for evaluation and gaps).
    pub fn composition(&self) -> Result<CompositionProblem<T>> {
        CompositionProblem::new(
            vec![self.outer.clone(), self.inner.clone()],
            self.feasible.clone(),
            self.reg.clone(),
        )
    }

    pub fn schedule(&self, n: usize, regime: VanillaRegime) -> Result<TwoLayerSchedule<T>> {
        let m1 = self.outer.bounds.m_pi;
        let m2 = self.inner.bounds.m_pi;
        let s1 = self.outer.bounds.sigma_pi;
        let s2 = self.inner.bounds.sigma_pi;
        two_layer_schedule(
            regime == VanillaRegime::StronglyConvex,
            n,
            &TwoLayerConstants {
                l1: self.outer.bounds.l_f,
                sigma_f2: self.inner.bounds.sigma_f,
                d_pi1: self.d_pi1,
                m_tilde: m1 * m2,
                sigma_tilde: (s1 * s1 * m2 * m2 + m1 * m1 * s2 * s2).sqrt(),
                d_x: self.feasible.diameter_const(),
                alpha: self.reg.alpha,
            },
        )
    }
}

/// tau = 0 maximization of the inner dual: the new dual is associated with
/// the current x itself.
pub fn implicit_max<T: Scalar>(_layer: &LayerSpec<T>, x: &Vector<T>) -> DualLayerState<T> {
    DualLayerState {
        anchors: vec![(LayerClass::Nonsmooth, x.clone())],
        explicit: None,
    }
}

pub fn run_vanilla<T: Scalar>(
    problem: &TwoLayerProblem<T>,
    n: usize,
    regime: VanillaRegime,
    seed: u64,
    form: VanillaForm,
    reference: Option<&ReferenceSolution<T>>,
) -> Result<RunTrace<T>> {
    let comp = problem.composition()?;
    let schedule = problem.schedule(n, regime)?;
    let factory = RngFactory::new(seed);
    let started = Instant::now();

    let mut x = problem.feasible.center();
    // outer anchor: exact inner value at x_0 when f_2 is deterministic,
    // otherwise a single oracle draw
    let mut y1 = if problem.inner.is_deterministic() {
        problem.inner.exact_value(&x)
    } else {
        let mut rng = factory.stream(StreamKey {
            layer: 2,
            tick: 0,
            tag: 1,
        });
        problem.inner.query(&x, &mut rng).value
    };

    let mut mean = ErgodicMean::new(x.len());
    let mut rows = Vec::new();
    for t in 0..n {
        let tick = (t + 1) as u64;
        // two independent inner queries at x_t: tag 1 feeds the outer dual,
        // tag 0 feeds the x-update
        let s21 = {
            let mut rng = factory.stream(StreamKey {
                layer: 2,
                tick,
                tag: 1,
            });
            problem.inner.query(&x, &mut rng)
        };
        let s20 = {
            let mut rng = factory.stream(StreamKey {
                layer: 2,
                tick,
                tag: 0,
            });
            problem.inner.query(&x, &mut rng)
        };
        // implicit proximal update of the outer dual
        let tau1 = schedule.tau1(t);
        y1 = (&s21.value + &y1.mapv(|z| z * tau1)).mapv(|z| z / (T::one() + tau1));
        if !is_finite_vec(&y1) {
            return Err(SsdError::NonFinite {
                t,
                what: "outer anchor",
            });
        }
        let s10 = {
            let mut rng = factory.stream(StreamKey {
                layer: 1,
                tick,
                tag: 0,
            });
            problem.outer.query(&y1, &mut rng)
        };
        let g = match form {
            VanillaForm::Primal => s10.jacobian.dot(&s20.jacobian).row(0).to_owned(),
            VanillaForm::Dual => {
                // assemble the tagged dual estimates and chain them
                let d2 = DualSample {
                    fstar: s20.jacobian.dot(&x) - &s20.value,
                    pi: s20.jacobian,
                    dest_tag: 0,
                };
                let d1 = DualSample {
                    fstar: s10.jacobian.dot(&y1) - &s10.value,
                    pi: s10.jacobian,
                    dest_tag: 0,
                };
                d1.pi.dot(&d2.pi).row(0).to_owned()
            }
        };
        let x_next = x_prox(&comp, &x, &g, schedule.eta(t))?;
        if !is_finite_vec(&x_next) {
            return Err(SsdError::NonFinite {
                t,
                what: "x iterate",
            });
        }
        mean.push(&x_next, schedule.w(t));
        x = x_next;

        if let Some(r) = reference {
            let xbar = mean.mean();
            let f_gap = (comp.eval_composition(&xbar) - r.f_star).to_f64_lossy();
            let q_gap = r.reference_point.as_ref().map(|rp| {
                let duals = vanilla_duals_view(problem, &x, &y1);
                crate::lagrangian::gap_q(&comp, &x, &duals, rp)
                    .map(|q| q.to_f64_lossy())
                    .unwrap_or(f64::NAN)
            });
            rows.push(TraceRow {
                t: t + 1,
                f_gap,
                dist_sq: dist_sq(&x, &r.x_star).to_f64_lossy(),
                q_gap,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
            });
        }
    }
    Ok(RunTrace {
        rows,
        xbar: mean.mean(),
        x_last: x,
    })
}

fn vanilla_duals_view<T: Scalar>(
    problem: &TwoLayerProblem<T>,
    x: &Vector<T>,
    y1: &Vector<T>,
) -> DualsView<T> {
    let mk = |layer: &LayerSpec<T>, y: &Vector<T>| {
        let pi = jacobian_at(layer, y);
        let f = layer.exact_value(y);
        let fstar = pi.dot(y) - &f;
        (pi, fstar)
    };
    DualsView {
        layers: vec![mk(&problem.outer, y1), mk(&problem.inner, x)],
    }
}
