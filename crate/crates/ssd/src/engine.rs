//! The general multilayer solver: sequential dual updates innermost to
//! outermost with momentum guesses, tagged resampling, per-class proximal
//! updates, the x-update, and multi-epoch restarts for strongly convex
//! problems.

use crate::error::{Result, SsdError};
use crate::lagrangian::{DualsView, ErgodicMean};
use crate::layer::{domain_contains, DualLayerState, DualSample, LayerClass, LayerComponent};
use crate::linalg::{dist_sq, is_finite_vec, Matrix, Vector};
use crate::policies::{
    eta, momentum, tau, weight, ArgType, BlockSchedule, Regime, ScheduleContext, ScheduleOverrides,
};
use crate::problem::CompositionProblem;
use crate::problems::ReferenceSolution;
use crate::rng::{RngFactory, StreamKey};
use crate::scalar::Scalar;
use crate::trace::{RunTrace, TraceRow};
use std::time::Instant;

/// Tagged samples of the current and previous iteration.
///
/// Layer i holds exactly i samples per iteration, tags 0..i-1: tag j >= 1
/// feeds layer j's guess, tag 0 feeds the x-update. Previous-iteration
/// samples feed only the momentum terms.
pub struct TaggedSampleBank<T> {
    current: Vec<Vec<DualSample<T>>>,
    previous: Vec<Vec<DualSample<T>>>,
}

impl<T: Scalar> TaggedSampleBank<T> {
    fn empty(k: usize) -> Self {
        Self {
            current: (0..k).map(|_| Vec::new()).collect(),
            previous: (0..k).map(|_| Vec::new()).collect(),
        }
    }

    fn rotate(&mut self) {
        std::mem::swap(&mut self.current, &mut self.previous);
        for v in &mut self.current {
            v.clear();
        }
    }

    fn put(&mut self, layer: usize, samples: Vec<DualSample<T>>) {
        self.current[layer - 1] = samples;
    }

    pub fn current(&self, layer: usize, tag: usize) -> Result<&DualSample<T>> {
        self.current[layer - 1]
            .iter()
            .find(|s| s.dest_tag == tag)
            .ok_or(SsdError::MissingSample { layer, tag })
    }

    pub fn previous(&self, layer: usize, tag: usize) -> Result<&DualSample<T>> {
        self.previous[layer - 1]
            .iter()
            .find(|s| s.dest_tag == tag)
            .ok_or(SsdError::MissingSample { layer, tag })
    }
}

/// Solver iterate: primal points, dual states, and the retained sample bank.
pub struct SsdState<T> {
    pub x: Vector<T>,
    pub x_prev: Vector<T>,
    pub duals: Vec<DualLayerState<T>>,
    pub bank: TaggedSampleBank<T>,
    pub t: usize,
}

pub struct SsdEngine<'a, T> {
    pub problem: &'a CompositionProblem<T>,
    pub ctx: ScheduleContext<T>,
    pub regime: Regime,
    factory: RngFactory,
    pub state: SsdState<T>,
    mean: ErgodicMean<T>,
}

impl<'a, T: Scalar> SsdEngine<'a, T> {
    pub fn new(
        problem: &'a CompositionProblem<T>,
        n_horizon: usize,
        regime: Regime,
        factory: RngFactory,
        overrides: &ScheduleOverrides<T>,
        x0: Option<Vector<T>>,
    ) -> Result<Self> {
        let ctx = ScheduleContext::build(problem, n_horizon, regime, overrides)?;
        let x0 = match x0 {
            Some(x) => problem.feasible.project(&x),
            None => problem.feasible.center(),
        };
        let duals = init_duals(problem, &x0);
        let mut engine = Self {
            problem,
            ctx,
            regime,
            factory,
            state: SsdState {
                x: x0.clone(),
                x_prev: x0.clone(),
                duals,
                bank: TaggedSampleBank::empty(problem.n_layers()),
                t: 0,
            },
            mean: ErgodicMean::new(x0.len()),
        };
        // initialization draws at the initial duals (tick 0)
        for i in (1..=problem.n_layers()).rev() {
            let samples = engine.resample(i, 0)?;
            engine.state.bank.put(i, samples);
        }
        Ok(engine)
    }

    /// Momentum-extrapolated guess of the proximal argument of layer i:
    /// L_{i+1}(x_t, current tag-i samples) + theta_t * (previous tag-i
    /// jacobian chain) (x_t - x_{t-1}).
    pub fn momentum_guess(&self, i: usize) -> Result<Vector<T>> {
        let k = self.problem.n_layers();
        let t = self.state.t;
        let mut v = self.state.x.clone();
        for l in ((i + 1)..=k).rev() {
            v = self.state.bank.current(l, i)?.apply(&v)?;
        }
        let theta = momentum::<T>(t);
        if theta > T::zero() {
            let mut d = &self.state.x - &self.state.x_prev;
            for l in ((i + 1)..=k).rev() {
                d = self.state.bank.previous(l, i)?.pi.dot(&d);
            }
            v += &d.mapv(|z| z * theta);
        }
        Ok(v)
    }

    /// Per-class dual proximal step of layer i with argument `guess`.
    pub fn dual_update(&mut self, i: usize, guess: &Vector<T>) -> Result<()> {
        let t = self.state.t;
        let layer = self.problem.layer(i);
        let blocks: Vec<BlockSchedule<T>> = self
            .ctx
            .blocks
            .iter()
            .filter(|b| b.layer == i)
            .cloned()
            .collect();
        let dual = &mut self.state.duals[i - 1];
        for block in &blocks {
            let tau_t = tau(&self.ctx, block, self.regime, t)?;
            match block.class {
                LayerClass::Affine => {
                    if let Some(anchor) = dual.anchor_mut(LayerClass::Affine) {
                        anchor.assign(guess);
                    }
                }
                LayerClass::Smooth | LayerClass::Nonsmooth | LayerClass::SemiSmooth => {
                    let anchor = dual
                        .anchor_mut(block.class)
                        .ok_or(SsdError::MissingSample { layer: i, tag: 0 })?;
                    let denom = T::one() + tau_t;
                    *anchor = (guess + &anchor.mapv(|z| z * tau_t)).mapv(|z| z / denom);
                }
                LayerClass::Smoothable => {
                    let pi = dual.explicit.as_mut().ok_or(SsdError::WrongLayerClass {
                        expected: "smoothable",
                        found: "implicit",
                    })?;
                    for &r in &block.rows {
                        if let LayerComponent::Smoothable(s) = &layer.components[r] {
                            let y_slice: Vec<T> = s.coords.iter().map(|&c| guess[c]).collect();
                            let prev: Vec<T> = s.coords.iter().map(|&c| pi[(r, c)]).collect();
                            let next = (s.conj_prox)(&y_slice, &prev, tau_t);
                            if !domain_contains(&s.domain, &next, T::c(1e-9)) {
                                return Err(SsdError::DomainViolation { layer: i, row: r });
                            }
                            for (idx, &c) in s.coords.iter().enumerate() {
                                pi[(r, c)] = next[idx];
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Draws layer i's tagged estimates at its current dual state: one
    /// independent oracle query per destination tag (exact values for
    /// smoothable and deterministic rows), f* estimates per the associated
    /// point identity.
    pub fn resample(&self, i: usize, tick: u64) -> Result<Vec<DualSample<T>>> {
        (0..i).map(|tag| self.draw_sample(i, tick, tag)).collect()
    }

    /// One tagged estimate of layer i's dual pair.
    pub fn draw_sample(&self, i: usize, tick: u64, tag: usize) -> Result<DualSample<T>> {
        let layer = self.problem.layer(i);
        let dual = &self.state.duals[i - 1];
        let mut rng = self.factory.stream(StreamKey {
            layer: i as u32,
            tick,
            tag: tag as u32,
        });
        let m = layer.output_dim();
        let mut pi = Matrix::zeros((m, layer.input_dim));
        let mut fstar = Vector::zeros(m);
        for (r, comp) in layer.components.iter().enumerate() {
            match comp {
                LayerComponent::Smoothable(s) => {
                    let ex = dual.explicit.as_ref().ok_or(SsdError::WrongLayerClass {
                        expected: "smoothable",
                        found: "implicit",
                    })?;
                    let row: Vec<T> = s.coords.iter().map(|&c| ex[(r, c)]).collect();
                    for (idx, &c) in s.coords.iter().enumerate() {
                        pi[(r, c)] = row[idx];
                    }
                    fstar[r] = (s.conj_value)(&row);
                }
                _ => {
                    let anchor = dual
                        .anchor(comp.class())
                        .ok_or(SsdError::MissingSample { layer: i, tag })?;
                    let (v, g) = layer.query_component(r, anchor, &mut rng);
                    fstar[r] = g.dot(anchor) - v;
                    pi.row_mut(r).assign(&g);
                }
            }
        }
        Ok(DualSample {
            pi,
            fstar,
            dest_tag: tag,
        })
    }

    /// Proximal x-step: projection of (eta x_t + alpha x_c - g - q)/(eta+alpha).
    pub fn x_update(&self, g: &Vector<T>, eta_t: T) -> Result<Vector<T>> {
        x_prox(self.problem, &self.state.x, g, eta_t)
    }

    /// Runs one full iteration (dual sweep k..1, resampling, x-update).
    pub fn step(&mut self) -> Result<()> {
        let k = self.problem.n_layers();
        let t = self.state.t;
        let tick = (t + 1) as u64;
        self.state.bank.rotate();
        for i in (1..=k).rev() {
            let guess = self.momentum_guess(i)?;
            if !is_finite_vec(&guess) {
                return Err(SsdError::NonFinite {
                    t,
                    what: "dual guess",
                });
            }
            self.dual_update(i, &guess)?;
            let samples = self.resample(i, tick)?;
            self.state.bank.put(i, samples);
        }
        // x-update direction: chain of tag-0 estimates pi_1 ... pi_k
        let mut row: Matrix<T> = self.state.bank.current(1, 0)?.pi.clone();
        for l in 2..=k {
            row = row.dot(&self.state.bank.current(l, 0)?.pi);
        }
        let g = row.row(0).to_owned();
        let eta_t = eta(&self.ctx, self.regime, t);
        let x_next = self.x_update(&g, eta_t)?;
        if !is_finite_vec(&x_next) {
            return Err(SsdError::NonFinite {
                t,
                what: "x iterate",
            });
        }
        self.mean.push(&x_next, self.iterate_weight(t));
        self.state.x_prev = std::mem::replace(&mut self.state.x, x_next);
        self.state.t += 1;
        Ok(())
    }

    fn iterate_weight(&self, t: usize) -> T {
        weight(t)
    }

    pub fn xbar(&self) -> Vector<T> {
        self.mean.mean()
    }

    /// Expected dual pairs of the current state (explicit values for
    /// smoothable rows, exact subgradients at the anchors otherwise).
    pub fn duals_view(&self) -> DualsView<T> {
        duals_view_of(self.problem, &self.state.duals)
    }
}

fn init_duals<T: Scalar>(
    problem: &CompositionProblem<T>,
    x0: &Vector<T>,
) -> Vec<DualLayerState<T>> {
    let nested = problem.nested_values(x0);
    (0..problem.n_layers())
        .map(|idx| {
            let layer = &problem.layers[idx];
            let y0 = nested[idx + 1].clone();
            let mut anchors = Vec::new();
            for class in [
                LayerClass::Affine,
                LayerClass::Smooth,
                LayerClass::Nonsmooth,
                LayerClass::SemiSmooth,
            ] {
                if layer.components.iter().any(|c| c.class() == class) {
                    anchors.push((class, y0.clone()));
                }
            }
            let has_explicit = layer
                .components
                .iter()
                .any(|c| c.class() == LayerClass::Smoothable);
            let explicit = if has_explicit {
                let mut pi = Matrix::zeros((layer.output_dim(), layer.input_dim));
                for (r, comp) in layer.components.iter().enumerate() {
                    if let LayerComponent::Smoothable(s) = comp {
                        // feasible start: projection of zero onto the domain
                        let zero = vec![T::zero(); s.coords.len()];
                        let start = (s.conj_prox)(&zero, &zero, T::one());
                        for (idx, &c) in s.coords.iter().enumerate() {
                            pi[(r, c)] = start[idx];
                        }
                    }
                }
                Some(pi)
            } else {
                None
            };
            DualLayerState { anchors, explicit }
        })
        .collect()
}

fn duals_view_of<T: Scalar>(
    problem: &CompositionProblem<T>,
    duals: &[DualLayerState<T>],
) -> DualsView<T> {
    let layers = problem
        .layers
        .iter()
        .zip(duals.iter())
        .map(|(layer, dual)| {
            let m = layer.output_dim();
            let mut pi = Matrix::zeros((m, layer.input_dim));
            let mut fstar = Vector::zeros(m);
            for (r, comp) in layer.components.iter().enumerate() {
                match comp {
                    LayerComponent::Smoothable(s) => {
                        let ex = dual.explicit.as_ref().expect("smoothable state");
                        let row: Vec<T> = s.coords.iter().map(|&c| ex[(r, c)]).collect();
                        for &c in &s.coords {
                            pi[(r, c)] = ex[(r, c)];
                        }
                        fstar[r] = (s.conj_value)(&row);
                    }
                    _ => {
                        let anchor = dual.anchor(comp.class()).expect("anchor");
                        let g = comp.subgradient(anchor);
                        fstar[r] = g.dot(anchor) - comp.value(anchor);
                        pi.row_mut(r).assign(&g);
                    }
                }
            }
            (pi, fstar)
        })
        .collect();
    DualsView { layers }
}

/// Closed-form proximal x-step shared by both solvers.
pub fn x_prox<T: Scalar>(
    problem: &CompositionProblem<T>,
    x: &Vector<T>,
    g: &Vector<T>,
    eta_t: T,
) -> Result<Vector<T>> {
    let alpha = problem.reg.alpha;
    let denom = eta_t + alpha;
    if denom <= T::zero() {
        return Err(SsdError::DivisionGuard(
            "x-prox needs eta + alpha > 0".into(),
        ));
    }
    let mut v = x.mapv(|z| z * eta_t) + &problem.reg.center.mapv(|z| z * alpha) - g;
    if let Some(q) = &problem.reg.linear {
        v -= q;
    }
    Ok(problem.feasible.project(&v.mapv(|z| z / denom)))
}

/// Runs the SSD engine for `n` iterations and records a trace against the
/// reference (rows are recorded only when a reference is available).
pub fn run_ssd<T: Scalar>(
    problem: &CompositionProblem<T>,
    n: usize,
    regime: Regime,
    seed: u64,
    reference: Option<&ReferenceSolution<T>>,
) -> Result<RunTrace<T>> {
    run_ssd_with(
        problem,
        n,
        regime,
        RngFactory::new(seed),
        &ScheduleOverrides::default(),
        None,
        reference,
    )
}

pub fn run_ssd_with<T: Scalar>(
    problem: &CompositionProblem<T>,
    n: usize,
    regime: Regime,
    factory: RngFactory,
    overrides: &ScheduleOverrides<T>,
    x0: Option<Vector<T>>,
    reference: Option<&ReferenceSolution<T>>,
) -> Result<RunTrace<T>> {
    let mut engine = SsdEngine::new(problem, n, regime, factory, overrides, x0)?;
    let started = Instant::now();
    let mut rows = Vec::with_capacity(if reference.is_some() { n } else { 0 });
    for t in 0..n {
        engine.step()?;
        if let Some(r) = reference {
            let xbar = engine.xbar();
            let f_gap = (problem.eval_composition(&xbar) - r.f_star).to_f64_lossy();
            let d = dist_sq(&engine.state.x, &r.x_star).to_f64_lossy();
            let q_gap = r.reference_point.as_ref().map(|rp| {
                crate::lagrangian::gap_q(problem, &engine.state.x, &engine.duals_view(), rp)
                    .map(|q| q.to_f64_lossy())
                    .unwrap_or(f64::NAN)
            });
            rows.push(TraceRow {
                t: t + 1,
                f_gap,
                dist_sq: d,
                q_gap,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
            });
        }
    }
    Ok(RunTrace {
        rows,
        xbar: engine.xbar(),
        x_last: engine.state.x.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RestartMode {
    /// Epoch horizons chosen so the strongly-convex distance bound halves.
    DistanceHalving,
    /// Explicit epoch horizons.
    Fixed,
}

#[derive(Debug, Clone)]
pub struct RestartConfig<T> {
    pub mode: RestartMode,
    /// Number of epochs (0 or 1 collapses to a single plain run).
    pub epochs: usize,
    /// Horizons per epoch; required for `Fixed`, ignored for halving.
    pub horizons: Vec<usize>,
    /// Upper bound on 1/2 |x_0 - x*|^2.
    pub d0: T,
}

pub struct RestartRun<T> {
    pub epoch_traces: Vec<RunTrace<T>>,
    pub epoch_horizons: Vec<usize>,
    pub xbar: Vector<T>,
    pub x_last: Vector<T>,
}

/// Constant part of the aggregated gap bound in the strongly convex regime,
/// used to size restart epochs.
fn cst_alpha<T: Scalar>(ctx: &ScheduleContext<T>, n: usize) -> T {
    let nf = T::from_usize(n).unwrap();
    let n1 = T::from_usize(n + 1).unwrap();
    let mut cst = T::zero();
    for b in &ctx.blocks {
        match b.class {
            LayerClass::Smooth => {
                if b.arg == ArgType::Noisy {
                    cst += b.m_p * b.d_pi * b.d_pi / T::c(6.0)
                        + T::c(1.5) * nf * b.m_p * b.l_f * b.sigma_lq * b.sigma_lq;
                }
            }
            LayerClass::SemiSmooth => {
                cst += b.m_p * b.d_pi * b.d_pi / T::c(6.0)
                    + T::c(1.5) * nf * b.m_p * b.l_f * b.sigma_lq * b.sigma_lq
                    + T::c(2.0) * nf * b.m_tilde() * b.m_tilde() / ctx.c;
            }
            LayerClass::Smoothable => {
                cst += T::c(2.0) * b.d_tilde() * b.d_tilde() / ctx.c;
                if b.arg == ArgType::Noisy {
                    cst += nf * n1.sqrt() * b.m_p * b.d_pi * b.sigma_lq / T::c(2.0);
                }
            }
            LayerClass::Nonsmooth => {
                cst += T::c(2.0) * nf * b.m_tilde() * b.m_tilde() / ctx.c;
            }
            LayerClass::Affine => {}
        }
    }
    cst
}

/// Smallest horizon for which the distance bound of the strongly convex
/// theorem drops below `target` starting from distance estimate `d`.
fn halving_horizon<T: Scalar>(
    problem: &CompositionProblem<T>,
    regime: Regime,
    overrides: &ScheduleOverrides<T>,
    d: T,
    target: T,
) -> Result<usize> {
    let alpha = problem.reg.alpha;
    let mut n = 1usize;
    loop {
        let ctx = ScheduleContext::build(problem, n, regime, overrides)?;
        let h_minus0: T = ctx
            .blocks
            .iter()
            .map(|b| crate::policies::h_minus(b, 0))
            .sum();
        let nf = T::from_usize(n).unwrap();
        let n3 = T::from_usize(n + 3).unwrap();
        let bound = T::c(6.0) * cst_alpha(&ctx, n) / (nf * n3 * alpha)
            + T::c(3.0) * (h_minus0 / alpha + T::c(1.0 / 3.0)) * d / (nf * n3);
        if bound <= target {
            return Ok(n);
        }
        if n > 50_000_000 {
            return Err(SsdError::DivisionGuard("restart horizon diverged".into()));
        }
        n *= 2;
    }
}

/// Multi-epoch restarting for strongly convex problems: each epoch runs the
/// engine warm-started at the previous epoch's last iterate.
pub fn run_restarted<T: Scalar>(
    problem: &CompositionProblem<T>,
    config: &RestartConfig<T>,
    regime: Regime,
    seed: u64,
    reference: Option<&ReferenceSolution<T>>,
) -> Result<RestartRun<T>> {
    if problem.reg.alpha <= T::zero() {
        return Err(SsdError::InvalidConfig("restarts need alpha > 0".into()));
    }
    if !regime.strongly_convex() {
        return Err(SsdError::InvalidConfig(
            "restarts need a strongly convex regime".into(),
        ));
    }
    let epochs = config.epochs.max(1);
    let overrides = ScheduleOverrides::default();
    let mut x0: Option<Vector<T>> = None;
    let mut d = config.d0;
    let mut traces = Vec::new();
    let mut horizons = Vec::new();
    for epoch in 0..epochs {
        let n = match config.mode {
            RestartMode::Fixed => *config
                .horizons
                .get(epoch)
                .ok_or_else(|| SsdError::InvalidConfig("missing epoch horizon".into()))?,
            RestartMode::DistanceHalving => {
                halving_horizon(problem, regime, &overrides, d, d / T::c(2.0))?
            }
        };
        let factory = if epoch == 0 {
            RngFactory::new(seed)
        } else {
            RngFactory::new(crate::rng::derive_seed(seed, &[epoch as u64]))
        };
        let trace = run_ssd_with(
            problem,
            n,
            regime,
            factory,
            &overrides,
            x0.clone(),
            reference,
        )?;
        x0 = Some(trace.x_last.clone());
        d /= T::c(2.0);
        horizons.push(n);
        traces.push(trace);
    }
    let last = traces.last().unwrap();
    Ok(RestartRun {
        xbar: last.xbar.clone(),
        x_last: last.x_last.clone(),
        epoch_horizons: horizons,
        epoch_traces: traces,
    })
}
