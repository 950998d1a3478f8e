//! Horizon-dependent schedules: iterate weights, momentum, per-block dual
//! stepsizes tau, primal stepsizes eta, and the aggregated noise constants
//! feeding the stochastic schedules.

use crate::error::{Result, SsdError};
use crate::layer::{LayerClass, LayerComponent};
use crate::problem::CompositionProblem;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    DetConvex,
    StoConvex,
    DetStronglyConvex,
    StoStronglyConvex,
}

impl Regime {
    pub fn strongly_convex(self) -> bool {
        matches!(self, Regime::DetStronglyConvex | Regime::StoStronglyConvex)
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "det_convex" => Ok(Regime::DetConvex),
            "sto_convex" => Ok(Regime::StoConvex),
            "det_strongly_convex" => Ok(Regime::DetStronglyConvex),
            "sto_strongly_convex" => Ok(Regime::StoStronglyConvex),
            other => Err(SsdError::InvalidConfig(format!("unknown regime `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArgType {
    Exact,
    Noisy,
}

/// Iterate weight w_t = (t+1)/2 (the two-layer convex schedule overrides
/// this with w_t = 1).
pub fn weight<T: Scalar>(t: usize) -> T {
    T::from_usize(t + 1).unwrap() / T::c(2.0)
}

/// Momentum theta_t = t/(t+1); theta_0 = 0.
pub fn momentum<T: Scalar>(t: usize) -> T {
    T::from_usize(t).unwrap() / T::from_usize(t + 1).unwrap()
}

/// One dual block: all rows of one class within one layer, with the derived
/// constants its schedule needs.
#[derive(Debug, Clone)]
pub struct BlockSchedule<T> {
    /// 1-based layer index.
    pub layer: usize,
    pub class: LayerClass,
    pub rows: Vec<usize>,
    pub arg: ArgType,
    /// Bound on the outer chain |pi_1 ... pi_{i-1}|.
    pub m_p: T,
    /// Bound on the inner chain restricted to the block's columns.
    pub m_q: T,
    /// Smoothness constant (smooth rows; partial L_S for semi-smooth).
    pub l_f: T,
    /// Lipschitz bound of the block rows (non-smooth; M_N for semi-smooth).
    pub m_block: T,
    /// Dual radius of the block (smoothable).
    pub d_pi: T,
    /// Noise std of the block's proximal argument.
    pub sigma_lq: T,
    /// For semi-smooth rows: inner-chain bounds of the smooth / non-smooth
    /// column groups.
    pub m_q_smooth: T,
    pub m_q_nonsmooth: T,
}

impl<T: Scalar> BlockSchedule<T> {
    pub fn l_tilde(&self) -> T {
        match self.class {
            LayerClass::SemiSmooth => self.m_p * self.l_f * self.m_q_smooth * self.m_q_smooth,
            _ => self.m_p * self.l_f * self.m_q * self.m_q,
        }
    }

    pub fn m_tilde(&self) -> T {
        match self.class {
            LayerClass::SemiSmooth => self.m_p * self.m_block * self.m_q_nonsmooth,
            _ => self.m_p * self.m_block * self.m_q,
        }
    }

    pub fn d_tilde(&self) -> T {
        self.m_p * self.d_pi * self.m_q
    }
}

/// Everything the schedules (and their tests) need about one run.
#[derive(Debug, Clone)]
pub struct ScheduleContext<T> {
    pub k: usize,
    pub n_horizon: usize,
    pub alpha: T,
    /// Number of dual blocks that are neither smooth nor affine.
    pub k_n: usize,
    /// Free constant of the strongly convex smoothable/non-smooth stepsizes.
    pub c: T,
    pub d_x: T,
    pub blocks: Vec<BlockSchedule<T>>,
    pub noise: NoiseConstants<T>,
}

/// Overrides for constants the theory leaves to the user.
#[derive(Debug, Clone)]
pub struct ScheduleOverrides<T> {
    pub c: Option<T>,
    /// Per-layer M_p replacing the default product of inner bounds.
    pub m_p: Option<Vec<T>>,
}

impl<T> Default for ScheduleOverrides<T> {
    fn default() -> Self {
        Self { c: None, m_p: None }
    }
}

/// Aggregated noise constants of the resampling scheme.
#[derive(Debug, Clone)]
pub struct NoiseConstants<T> {
    /// sigma_{pi_{i:}} for i = 1..=k: noise of the tail jacobian product.
    pub sigma_pi_tail: Vec<T>,
    /// Noise std of the L_i estimates for i = 1..=k.
    pub sigma_l: Vec<T>,
    /// Aggregate jacobian-product noise entering the x-update.
    pub sigma_tilde_pi: T,
    /// Aggregate argument noise entering the dual guesses.
    pub sigma_tilde_delta: T,
    /// Effective Lagrangian-value bounds M_L for layers 1..=k+1
    /// (the last entry bounds |x| over X).
    pub m_l: Vec<T>,
}

/// Computes the aggregated noise constants of a problem.
pub fn noise_constants<T: Scalar>(
    problem: &CompositionProblem<T>,
    m_p: &[T],
) -> Result<NoiseConstants<T>> {
    let k = problem.n_layers();
    let m_pi: Vec<T> = problem.layers.iter().map(|l| l.bounds.m_pi).collect();
    if m_pi.iter().any(|&m| m <= T::zero()) {
        return Err(SsdError::MissingBound("every layer needs M_Pi > 0".into()));
    }
    let sigma_pi: Vec<T> = problem.layers.iter().map(|l| l.bounds.sigma_pi).collect();
    let sigma_f: Vec<T> = problem.layers.iter().map(|l| l.bounds.sigma_f).collect();

    // M_L recursion, innermost first: M_{L,k+1} = max |x|;
    // M_{L,r} = M_{f,r} + M_Pi,r * M_{L,r+1} unless overridden.
    let mut m_l = vec![T::zero(); k + 1];
    m_l[k] = problem.feasible.max_norm();
    for r in (0..k).rev() {
        let b = &problem.layers[r].bounds;
        m_l[r] = b.m_l_override.unwrap_or(b.m_f + b.m_pi * m_l[r + 1]);
    }

    // products prod_{l=i..j} M_Pi_l (1 on empty ranges), 0-based inclusive
    let prod =
        |i: usize, j_excl: usize| -> T { m_pi[i..j_excl].iter().fold(T::one(), |a, &b| a * b) };

    let mut sigma_pi_tail = vec![T::zero(); k];
    let mut sigma_l = vec![T::zero(); k];
    for i in 0..k {
        let mut tail_sq = T::zero();
        let mut l_sq = T::zero();
        for r in i..k {
            let head = prod(i, r);
            let m_l_inner = m_l[r + 1];
            tail_sq += head * head * sigma_pi[r] * sigma_pi[r] * prod(r + 1, k) * prod(r + 1, k);
            l_sq += head
                * head
                * (T::c(6.0) * sigma_pi[r] * sigma_pi[r] * m_l_inner * m_l_inner
                    + T::c(4.0) * sigma_f[r] * sigma_f[r]);
        }
        sigma_pi_tail[i] = tail_sq.sqrt();
        sigma_l[i] = l_sq.sqrt();
    }

    let mut tilde_pi_sq = T::zero();
    let mut tilde_delta = T::zero();
    for i in 0..k.saturating_sub(1) {
        let mp = m_p[i];
        tilde_pi_sq +=
            T::c(4.0) * mp * mp * m_pi[i] * m_pi[i] * sigma_pi_tail[i + 1] * sigma_pi_tail[i + 1];
        tilde_delta += mp * m_pi[i] * sigma_l[i + 1];
    }

    Ok(NoiseConstants {
        sigma_pi_tail,
        sigma_l,
        sigma_tilde_pi: tilde_pi_sq.sqrt(),
        sigma_tilde_delta: tilde_delta,
        m_l,
    })
}

impl<T: Scalar> ScheduleContext<T> {
    /// Derives per-block constants and noise aggregates for one run.
    pub fn build(
        problem: &CompositionProblem<T>,
        n_horizon: usize,
        regime: Regime,
        overrides: &ScheduleOverrides<T>,
    ) -> Result<Self> {
        let k = problem.n_layers();
        let m_pi: Vec<T> = problem.layers.iter().map(|l| l.bounds.m_pi).collect();
        let default_m_p: Vec<T> = (0..k)
            .map(|i| m_pi[..i].iter().fold(T::one(), |a, &b| a * b))
            .collect();
        let m_p = overrides.m_p.clone().unwrap_or(default_m_p);
        if m_p.len() != k {
            return Err(SsdError::InvalidConfig("M_p override length".into()));
        }
        let noise = noise_constants(problem, &m_p)?;
        let noisy_rows = problem.noisy_output_flags();

        let tail_prod = |from: usize| -> T {
            // product of layer bounds strictly inside layer index `from`
            m_pi[from..].iter().fold(T::one(), |a, &b| a * b)
        };

        let mut blocks = Vec::new();
        for i in 0..k {
            let layer = &problem.layers[i];
            // chain bound over the block's columns: row bounds of layer i+1
            // are not tracked separately, so the layer bound is used there.
            let m_q_full = tail_prod(i + 1);
            let arg_of = |cols: &[usize]| -> ArgType {
                if i + 1 >= k {
                    ArgType::Exact
                } else if cols.iter().any(|&c| noisy_rows[i + 1][c]) {
                    ArgType::Noisy
                } else {
                    ArgType::Exact
                }
            };
            let all_cols: Vec<usize> = (0..layer.input_dim).collect();
            // group rows by class, preserving declaration order
            for class in [
                LayerClass::Affine,
                LayerClass::Smooth,
                LayerClass::Smoothable,
                LayerClass::Nonsmooth,
                LayerClass::SemiSmooth,
            ] {
                let rows: Vec<usize> = layer
                    .components
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| c.class() == class)
                    .map(|(j, _)| j)
                    .collect();
                if rows.is_empty() {
                    continue;
                }
                let mut block = BlockSchedule {
                    layer: i + 1,
                    class,
                    rows: rows.clone(),
                    arg: arg_of(&all_cols),
                    m_p: m_p[i],
                    m_q: m_q_full,
                    l_f: layer.bounds.l_f,
                    m_block: layer.bounds.m_pi,
                    d_pi: layer.bounds.d_pi,
                    sigma_lq: if i + 1 < k {
                        noise.sigma_l[i + 1]
                    } else {
                        T::zero()
                    },
                    m_q_smooth: m_q_full,
                    m_q_nonsmooth: m_q_full,
                };
                match class {
                    LayerClass::Smoothable => {
                        // block dual radius: sqrt(|B|)/2-scaled row distances
                        let mut worst = T::zero();
                        let mut read_cols = Vec::new();
                        for &r in &rows {
                            if let LayerComponent::Smoothable(s) = &layer.components[r] {
                                worst += s.d_pi.powi(4);
                                read_cols.extend_from_slice(&s.coords);
                            }
                        }
                        let nb = T::from_usize(rows.len()).unwrap();
                        block.d_pi = (nb.sqrt() * worst.sqrt()).sqrt();
                        block.arg = arg_of(&read_cols);
                        if i + 1 < k {
                            let inner = &problem.layers[i + 1];
                            let first: T = read_cols
                                .iter()
                                .map(|&cidx| {
                                    let rb = row_bound(inner, cidx);
                                    rb * rb
                                })
                                .sum::<T>()
                                .sqrt();
                            block.m_q = first * tail_prod(i + 2);
                        }
                    }
                    LayerClass::Smooth => {
                        let worst = rows
                            .iter()
                            .map(|&r| match &layer.components[r] {
                                LayerComponent::Smooth(s) => s.l_smooth * s.l_smooth,
                                _ => T::zero(),
                            })
                            .sum::<T>()
                            .sqrt();
                        if layer.bounds.l_f > T::zero() {
                            block.l_f = layer.bounds.l_f;
                        } else {
                            block.l_f = worst;
                        }
                        // rows that declare their read set refine both the
                        // argument type and the inner-chain bound
                        let mut read_cols = Vec::new();
                        let mut partial = true;
                        for &r in &rows {
                            match &layer.components[r] {
                                LayerComponent::Smooth(s) => match &s.cols {
                                    Some(cs) => read_cols.extend_from_slice(cs),
                                    None => partial = false,
                                },
                                _ => partial = false,
                            }
                        }
                        if partial {
                            block.arg = arg_of(&read_cols);
                            if i + 1 < k {
                                let inner = &problem.layers[i + 1];
                                let first: T = read_cols
                                    .iter()
                                    .map(|&cidx| {
                                        let rb = row_bound(inner, cidx);
                                        rb * rb
                                    })
                                    .sum::<T>()
                                    .sqrt();
                                block.m_q = first * tail_prod(i + 2);
                            }
                        }
                    }
                    LayerClass::SemiSmooth => {
                        if let LayerComponent::SemiSmooth(s) = &layer.components[rows[0]] {
                            block.l_f = s.l_smooth;
                            block.m_block = s.m_nonsmooth;
                            // refine the inner-chain bounds per column group
                            // using bounds of the inner layer's rows
                            if i + 1 < k {
                                let inner = &problem.layers[i + 1];
                                let group = |cols: &[usize]| -> T {
                                    let first: T = cols
                                        .iter()
                                        .map(|&cidx| {
                                            let rb = row_bound(inner, cidx);
                                            rb * rb
                                        })
                                        .sum::<T>()
                                        .sqrt();
                                    first * tail_prod(i + 2)
                                };
                                block.m_q_smooth = group(&s.smooth_cols);
                                block.m_q_nonsmooth = group(&s.nonsmooth_cols);
                            } else {
                                block.m_q_smooth = T::one();
                                block.m_q_nonsmooth = T::one();
                            }
                            block.arg = arg_of(&s.smooth_cols);
                        }
                    }
                    _ => {}
                }
                if class == LayerClass::Nonsmooth && block.arg == ArgType::Noisy {
                    return Err(SsdError::NonsmoothNoisyUnsupported(i + 1));
                }
                blocks.push(block);
            }
        }

        let k_n = blocks
            .iter()
            .filter(|b| {
                matches!(
                    b.class,
                    LayerClass::Smoothable | LayerClass::Nonsmooth | LayerClass::SemiSmooth
                )
            })
            .count();
        let alpha = problem.reg.alpha;
        let c = if regime.strongly_convex() && k_n > 0 {
            overrides.c.unwrap_or_else(|| {
                let kn = T::from_usize(k_n).unwrap();
                match regime {
                    Regime::DetStronglyConvex => T::c(2.0) * alpha / (T::c(3.0) * kn),
                    _ => alpha / (T::c(3.0) * kn),
                }
            })
        } else {
            T::zero()
        };
        if regime.strongly_convex() && alpha <= T::zero() {
            return Err(SsdError::InvalidConfig(
                "strongly convex regime needs alpha > 0".into(),
            ));
        }

        Ok(Self {
            k,
            n_horizon,
            alpha,
            k_n,
            c,
            d_x: problem.feasible.diameter_const(),
            blocks,
            noise,
        })
    }
}

fn row_bound<T: Scalar>(layer: &crate::layer::LayerSpec<T>, row: usize) -> T {
    // per-row jacobian second-moment bound; falls back to the layer bound
    // when the component does not expose one
    let base = match &layer.components[row] {
        LayerComponent::Affine(a) => crate::linalg::norm2(&a.a),
        _ => return layer.bounds.m_pi,
    };
    if layer.oracle.per_component[row].is_deterministic() {
        base
    } else {
        (base * base + layer.bounds.sigma_pi * layer.bounds.sigma_pi).sqrt()
    }
}

/// Table-driven dual stepsize of one block at iteration t.
pub fn tau<T: Scalar>(
    ctx: &ScheduleContext<T>,
    block: &BlockSchedule<T>,
    regime: Regime,
    t: usize,
) -> Result<T> {
    let tf = T::from_usize(t).unwrap();
    let n1 = T::from_usize(ctx.n_horizon + 1).unwrap();
    match block.class {
        LayerClass::Affine => Ok(T::zero()),
        LayerClass::Smooth => Ok(match block.arg {
            ArgType::Exact => tf / T::c(2.0),
            ArgType::Noisy => tf / T::c(4.0) + (tf + T::one()) / T::c(6.0),
        }),
        LayerClass::SemiSmooth => Ok(tf / T::c(4.0) + (tf + T::one()) / T::c(6.0)),
        LayerClass::Nonsmooth => match block.arg {
            ArgType::Exact => Ok(T::zero()),
            ArgType::Noisy => Err(SsdError::NonsmoothNoisyUnsupported(block.layer)),
        },
        LayerClass::Smoothable => {
            let base = if regime.strongly_convex() {
                if ctx.c <= T::zero() {
                    return Err(SsdError::DivisionGuard(
                        "smoothable alpha-stepsize needs c > 0".into(),
                    ));
                }
                T::c(2.0) / ((tf + T::one()) * ctx.c) * block.m_p * block.m_q * block.m_q
            } else {
                if block.d_pi <= T::zero() {
                    if ctx.d_x * block.m_q == T::zero() {
                        return Ok(T::zero());
                    }
                    return Err(SsdError::DivisionGuard(format!(
                        "smoothable block at layer {} has zero dual radius",
                        block.layer
                    )));
                }
                ctx.d_x * block.m_q / block.d_pi
            };
            let noise = if block.arg == ArgType::Noisy {
                if block.d_pi <= T::zero() {
                    if block.sigma_lq == T::zero() {
                        T::zero()
                    } else {
                        return Err(SsdError::DivisionGuard(
                            "noisy smoothable block needs a dual radius".into(),
                        ));
                    }
                } else {
                    n1.sqrt() * block.sigma_lq / (T::c(2.0) * block.d_pi)
                }
            } else {
                T::zero()
            };
            Ok(base + noise)
        }
    }
}

/// Non-increasing-in-w_t coefficient H^-_t of one block.
pub fn h_minus<T: Scalar>(block: &BlockSchedule<T>, t: usize) -> T {
    let t1 = T::from_usize(t + 1).unwrap();
    match block.class {
        LayerClass::Smooth => match block.arg {
            ArgType::Exact => T::c(2.0) * block.l_tilde() / t1,
            ArgType::Noisy => T::c(4.0) * block.l_tilde() / t1,
        },
        LayerClass::SemiSmooth => T::c(4.0) * block.l_tilde() / t1,
        _ => T::zero(),
    }
}

/// Non-decreasing coefficient H^+_t of one block (convex regimes).
pub fn h_plus<T: Scalar>(ctx: &ScheduleContext<T>, block: &BlockSchedule<T>) -> T {
    let n1 = T::from_usize(ctx.n_horizon + 1).unwrap();
    match block.class {
        LayerClass::Smoothable => block.d_tilde() / ctx.d_x,
        LayerClass::Nonsmooth => n1.sqrt() * block.m_tilde() / ctx.d_x,
        LayerClass::SemiSmooth => n1.sqrt() * block.m_tilde() / ctx.d_x,
        _ => T::zero(),
    }
}

/// Primal stepsize eta_t.
pub fn eta<T: Scalar>(ctx: &ScheduleContext<T>, regime: Regime, t: usize) -> T {
    let sum_minus: T = ctx.blocks.iter().map(|b| h_minus(b, t)).sum();
    match regime {
        Regime::DetConvex => {
            let sum_plus: T = ctx.blocks.iter().map(|b| h_plus(ctx, b)).sum();
            sum_minus + sum_plus
        }
        Regime::StoConvex => {
            let sum_plus: T = ctx.blocks.iter().map(|b| h_plus(ctx, b)).sum();
            let n1 = T::from_usize(ctx.n_horizon + 1).unwrap();
            let kf = T::from_usize(ctx.k).unwrap();
            sum_minus
                + sum_plus
                + n1.sqrt() * kf.sqrt() * ctx.noise.sigma_tilde_pi / (T::c(2.0) * ctx.d_x)
        }
        Regime::DetStronglyConvex | Regime::StoStronglyConvex => {
            let t1 = T::from_usize(t + 1).unwrap();
            sum_minus + t1 * ctx.alpha / T::c(3.0)
        }
    }
}

/// Constant schedules of the vanilla two-layer algorithm.
#[derive(Debug, Clone)]
pub struct TwoLayerSchedule<T> {
    pub strongly_convex: bool,
    pub alpha: T,
    pub tau1_const: T,
    pub eta_const: T,
}

/// Constants the two-layer schedule needs, in the roles the theorems give
/// them. `sigma_tilde` is sqrt(sigma_pi1^2 M2^2 + M1^2 sigma_pi2^2).
pub struct TwoLayerConstants<T> {
    pub l1: T,
    pub sigma_f2: T,
    pub d_pi1: T,
    pub m_tilde: T,
    pub sigma_tilde: T,
    pub d_x: T,
    pub alpha: T,
}

pub fn two_layer_schedule<T: Scalar>(
    strongly_convex: bool,
    n_horizon: usize,
    c: &TwoLayerConstants<T>,
) -> Result<TwoLayerSchedule<T>> {
    if n_horizon == 0 {
        return Err(SsdError::InvalidConfig("horizon must be >= 1".into()));
    }
    if strongly_convex {
        if c.alpha <= T::zero() {
            return Err(SsdError::InvalidConfig(
                "strongly convex schedule needs alpha > 0".into(),
            ));
        }
        return Ok(TwoLayerSchedule {
            strongly_convex: true,
            alpha: c.alpha,
            tau1_const: T::zero(),
            eta_const: T::zero(),
        });
    }
    let nf = T::from_usize(n_horizon).unwrap();
    let num = nf.sqrt() * c.l1.sqrt() * c.sigma_f2;
    let tau1 = if num == T::zero() {
        T::zero()
    } else {
        if c.d_pi1 <= T::zero() {
            return Err(SsdError::MissingBound(
                "noisy inner layer needs a dual radius bound D_Pi1".into(),
            ));
        }
        num / (T::c(2.0).sqrt() * c.d_pi1)
    };
    let eta = (T::c(2.0) * nf).sqrt() * c.m_tilde / c.d_x
        + nf.sqrt() * c.sigma_tilde / (T::c(2.0).sqrt() * c.d_x);
    Ok(TwoLayerSchedule {
        strongly_convex: false,
        alpha: c.alpha,
        tau1_const: tau1,
        eta_const: eta,
    })
}

impl<T: Scalar> TwoLayerSchedule<T> {
    pub fn tau1(&self, t: usize) -> T {
        if self.strongly_convex {
            T::from_usize(t + 1).unwrap() / T::c(3.0)
        } else {
            self.tau1_const
        }
    }

    pub fn eta(&self, t: usize) -> T {
        if self.strongly_convex {
            T::from_usize(t + 1).unwrap() * self.alpha / T::c(3.0)
        } else {
            self.eta_const
        }
    }

    pub fn w(&self, t: usize) -> T {
        if self.strongly_convex {
            weight(t)
        } else {
            T::one()
        }
    }
}
