use crate::error::{Error, Result};
use crate::model::{block_prox, BlockId, CoupledProblem, Side};
use crate::tensor::{KruskalFactors, Matrix};

use super::{Algorithm, SolverConfig, SolverState, SweepStats};

pub fn sweep(p: &CoupledProblem, s: &SolverState, cfg: &SolverConfig) -> Result<SolverState> {
    match cfg.algorithm {
        Algorithm::Easap => easap_sweep(p, s, cfg),
        Algorithm::Asap => asap_sweep(p, s, cfg),
        Algorithm::AccelAsap => accel_asap_sweep(p, s, cfg),
    }
}

fn block_id(side: Side, index: usize) -> BlockId {
    BlockId { side, index }
}

/// One prox-gradient step `prox_{H_blk / tau}(x − grad / tau)`.
fn prox_step(
    p: &CoupledProblem,
    blk: BlockId,
    anchor: &Matrix,
    grad: &Matrix,
    tau: f64,
    a: &KruskalFactors,
    b: &KruskalFactors,
) -> Result<Matrix> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("stepsize for {blk} is {tau}")));
    }
    let point = anchor.add_scaled(-1.0 / tau, grad)?;
    block_prox(p, blk, a, b)?.prox(&point, tau)
}

fn finish(
    p: &CoupledProblem,
    s: &SolverState,
    a: KruskalFactors,
    b: KruskalFactors,
    stepsizes: Vec<f64>,
    lipschitz: Vec<f64>,
    t: (f64, f64),
) -> Result<SolverState> {
    let k = s.k + 1;
    let objective = p.objective(&a, &b)?;
    if !objective.is_finite() || !a.is_finite() || !b.is_finite() {
        return Err(Error::Divergence { k, objective });
    }
    let block_step_sq = a
        .factors()
        .iter()
        .zip(s.a.factors())
        .chain(b.factors().iter().zip(s.b.factors()))
        .map(|(x, y)| x.sub(y).map(|d| d.frobenius_norm_sq()))
        .collect::<Result<Vec<_>>>()?;
    Ok(SolverState {
        prev_a: s.a.clone(),
        prev_b: s.b.clone(),
        a,
        b,
        objective,
        k,
        t_prev: t.0,
        t_cur: t.1,
        last: Some(SweepStats {
            stepsizes,
            lipschitz,
            block_step_sq,
        }),
    })
}

/// One Gauss-Seidel cycle over the blocks of `A`, then of `B`.
///
/// Within a block group (a single factor under the default layout) every
/// member's gradient is taken at the same point, with `A_{<i}` already
/// updated. The group's stepsize is `gamma_g · Σ L_n (+ k)` where `L_n` is the
/// trace estimate at that point.
pub fn easap_sweep(p: &CoupledProblem, s: &SolverState, cfg: &SolverConfig) -> Result<SolverState> {
    p.check_iterate(&s.a, &s.b)?;
    let layout = cfg.effective_layout();
    let extra = cfg.iteration_term(s.k);
    let mut a = s.a.clone();
    let mut b = s.b.clone();
    let mut stepsizes = Vec::with_capacity(a.order() + b.order());
    let mut lipschitz = Vec::with_capacity(a.order() + b.order());

    for side in [Side::A, Side::B] {
        let order = p.data(side).order();
        let groups = layout.groups(order);
        let mut side_tau = vec![0.0; order];
        let mut side_lip = vec![0.0; order];
        for (g, group) in groups.iter().enumerate() {
            let current = match side {
                Side::A => &a,
                Side::B => &b,
            };
            let lip: f64 = group.iter().map(|&n| p.fit_lipschitz(side, current, n)).sum();
            let tau = cfg.gamma(side, g, groups.len())? * lip + extra;
            let mut updates = Vec::with_capacity(group.len());
            for &n in group {
                let grad = p.fit_gradient(side, current, n)?;
                let next = prox_step(p, block_id(side, n), current.factor(n), &grad, tau, &a, &b)?;
                updates.push((n, next));
                side_tau[n] = tau;
                side_lip[n] = lip;
            }
            let target = match side {
                Side::A => &mut a,
                Side::B => &mut b,
            };
            for (n, m) in updates {
                target.set_factor(n, m)?;
            }
        }
        stepsizes.extend(side_tau);
        lipschitz.extend(side_lip);
    }
    finish(p, s, a, b, stepsizes, lipschitz, (s.t_prev, s.t_cur))
}

/// Two-block step: all of `A` from `A^k`, then all of `B` from `B^k` against
/// the updated `A`. The stepsize per side is `gamma · Σ_n L_n`, the trace of
/// the stacked Khatri-Rao matrix; there is no iteration term.
pub fn asap_sweep(p: &CoupledProblem, s: &SolverState, cfg: &SolverConfig) -> Result<SolverState> {
    p.check_iterate(&s.a, &s.b)?;
    let (a, tau_a, lip_a) = two_block_side(p, Side::A, &s.a, &s.a, &s.b, cfg)?;
    let (b, tau_b, lip_b) = two_block_side(p, Side::B, &s.b, &a, &s.b, cfg)?;
    let stepsizes = [vec![tau_a; a.order()], vec![tau_b; b.order()]].concat();
    let lipschitz = [vec![lip_a; a.order()], vec![lip_b; b.order()]].concat();
    finish(p, s, a, b, stepsizes, lipschitz, (s.t_prev, s.t_cur))
}

/// Updates every factor on `side` from `point`; the coupling is evaluated
/// against `(a, b)` (only the opposite side matters).
fn two_block_side(
    p: &CoupledProblem,
    side: Side,
    point: &KruskalFactors,
    a: &KruskalFactors,
    b: &KruskalFactors,
    cfg: &SolverConfig,
) -> Result<(KruskalFactors, f64, f64)> {
    let order = point.order();
    let lip: f64 = (0..order).map(|n| p.fit_lipschitz(side, point, n)).sum();
    let tau = cfg.gamma(side, 0, 1)? * lip;
    let mut out = point.clone();
    for n in 0..order {
        let grad = p.fit_gradient(side, point, n)?;
        let next = prox_step(p, block_id(side, n), point.factor(n), &grad, tau, a, b)?;
        out.set_factor(n, next)?;
    }
    Ok((out, tau, lip))
}

/// `t_{k+1} = (1 + sqrt(1 + 4 t_k²)) / 2`
pub fn next_extrapolation_t(t: f64) -> f64 {
    (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0
}

fn extrapolate(cur: &KruskalFactors, prev: &KruskalFactors, beta: f64) -> Result<KruskalFactors> {
    if beta == 0.0 {
        return Ok(cur.clone());
    }
    let factors = cur
        .factors()
        .iter()
        .zip(prev.factors())
        .map(|(x, y)| x.add_scaled(beta, &x.sub(y)?))
        .collect::<Result<Vec<_>>>()?;
    KruskalFactors::new(factors)
}

/// Two-block step taken from `z^k + (1 − α^k)(z^k − z^{k−1})` with
/// `α^k = 1 − (t_{k−1} − 1)/t_k`. The extrapolated point is both the gradient
/// point and the prox anchor.
pub fn accel_asap_sweep(p: &CoupledProblem, s: &SolverState, cfg: &SolverConfig) -> Result<SolverState> {
    p.check_iterate(&s.a, &s.b)?;
    let t_next = next_extrapolation_t(s.t_cur);
    let alpha = 1.0 - (s.t_cur - 1.0) / t_next;
    let beta = 1.0 - alpha;
    let a_hat = extrapolate(&s.a, &s.prev_a, beta)?;
    let b_hat = extrapolate(&s.b, &s.prev_b, beta)?;
    let (a, tau_a, lip_a) = two_block_side(p, Side::A, &a_hat, &a_hat, &s.b, cfg)?;
    let (b, tau_b, lip_b) = two_block_side(p, Side::B, &b_hat, &a, &b_hat, cfg)?;
    let stepsizes = [vec![tau_a; a.order()], vec![tau_b; b.order()]].concat();
    let lipschitz = [vec![lip_a; a.order()], vec![lip_b; b.order()]].concat();
    finish(p, s, a, b, stepsizes, lipschitz, (s.t_cur, t_next))
}
