use crate::error::{Error, Result};
use crate::model::{block_prox, BlockId, CoupledProblem, Side};
use crate::tensor::KruskalFactors;

use super::SolverConfig;

/// The configured stepsize rule evaluated at `(a, b)` without Gauss-Seidel
/// mixing, one value per block (`A` blocks first).
pub fn stepsizes_at(
    p: &CoupledProblem,
    a: &KruskalFactors,
    b: &KruskalFactors,
    cfg: &SolverConfig,
    k: usize,
) -> Result<Vec<f64>> {
    let layout = cfg.effective_layout();
    let extra = cfg.iteration_term(k);
    let mut out = Vec::with_capacity(a.order() + b.order());
    for (side, f) in [(Side::A, a), (Side::B, b)] {
        let groups = layout.groups(f.order());
        let mut taus = vec![0.0; f.order()];
        for (g, group) in groups.iter().enumerate() {
            let lip: f64 = group.iter().map(|&n| p.fit_lipschitz(side, f, n)).sum();
            let tau = cfg.gamma(side, g, groups.len())? * lip + extra;
            for &n in group {
                taus[n] = tau;
            }
        }
        out.extend(taus);
    }
    Ok(out)
}

/// `‖E(z)‖`: distance from `z` to the Jacobi prox-gradient map, where every
/// block's gradient and coupling restriction are evaluated at `z` itself.
/// Zero exactly at critical points.
pub fn stationarity_error(
    p: &CoupledProblem,
    a: &KruskalFactors,
    b: &KruskalFactors,
    stepsizes: &[f64],
) -> Result<f64> {
    p.check_iterate(a, b)?;
    let blocks = a.order() + b.order();
    if stepsizes.len() != blocks {
        return Err(Error::InvalidArgument(format!(
            "{} stepsizes for {blocks} blocks",
            stepsizes.len()
        )));
    }
    if let Some(t) = stepsizes.iter().find(|&&t| !(t > 0.0)) {
        return Err(Error::InvalidArgument(format!("nonpositive stepsize {t}")));
    }
    let mut total = 0.0;
    let mut idx = 0;
    for (side, f) in [(Side::A, a), (Side::B, b)] {
        for n in 0..f.order() {
            let tau = stepsizes[idx];
            idx += 1;
            let grad = p.fit_gradient(side, f, n)?;
            let point = f.factor(n).add_scaled(-1.0 / tau, &grad)?;
            let bar = block_prox(p, BlockId { side, index: n }, a, b)?.prox(&point, tau)?;
            total += f.factor(n).sub(&bar)?.frobenius_norm_sq();
        }
    }
    Ok(total.sqrt())
}

/// Sufficient-decrease test `J^{k+1} ≤ J^k − c‖z^{k+1} − z^k‖²` with
/// `c = ½ min_i (tau_i − L_i)`, allowing a slack of `1e-8 (1 + |J^k|)`.
pub fn descent_check(
    j_prev: f64,
    j_next: f64,
    step_norm: f64,
    stepsizes: &[f64],
    lipschitz: &[f64],
) -> bool {
    let c = stepsizes
        .iter()
        .zip(lipschitz)
        .map(|(t, l)| t - l)
        .fold(f64::INFINITY, f64::min);
    let c = if c.is_finite() { 0.5 * c.max(0.0) } else { 0.0 };
    let slack = 1e-8 * (1.0 + j_prev.abs());
    j_next <= j_prev - c * step_norm * step_norm + slack
}

/// `R^k = J(z^k) + ½ Σ_blocks (tau^{k−1} − L^{k−1}) ‖x^k − x^{k−1}‖²`.
pub fn lyapunov_value(
    objective: f64,
    block_step_sq: &[f64],
    prev_stepsizes: &[f64],
    prev_lipschitz: &[f64],
) -> f64 {
    objective
        + 0.5
            * block_step_sq
                .iter()
                .zip(prev_stepsizes.iter().zip(prev_lipschitz))
                .map(|(d, (t, l))| (t - l) * d)
                .sum::<f64>()
}
