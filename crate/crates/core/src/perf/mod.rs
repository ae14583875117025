//! Analytic speedup model: acceptance as a function of the drafted
//! parameter fraction β, expected tokens per iteration, the improvement
//! factor, a grid planner over (γ, β), and a Monte-Carlo cross-check.

mod discount;
mod mc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::exec::{map_indexed, Exec};
use crate::kernels::Real;
use crate::model::{ModelConfig, SkipSpec};

pub use discount::{fit_discount, DiscountProfile, DiscountSample, DiscountTable};
pub use mc::{simulate_mc, McEstimate, MC_CHUNK};

/// Planner tie tolerance on the improvement factor.
pub const PLAN_TIE_TOL: Real = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfParams {
    /// Shape of the acceptance curve, in `(0, 1)`.
    pub u: Real,
    /// Per-iteration overhead as a fraction of one full forward pass.
    pub delta: Real,
}

impl Default for PerfParams {
    fn default() -> Self {
        Self {
            u: 0.01,
            delta: 0.04,
        }
    }
}

impl PerfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.u > 0.0 && self.u < 1.0) {
            return invalid(format!("U = {} is not in (0, 1)", self.u));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return invalid(format!("delta = {} must be finite and non-negative", self.delta));
        }
        Ok(())
    }
}

/// First-token acceptance `(1 − U^β)/(1 − U)`.
pub fn alpha(beta: Real, u: Real) -> Result<Real> {
    if !(u > 0.0 && u < 1.0) {
        return invalid(format!("U = {u} is not in (0, 1)"));
    }
    if !(0.0..=1.0).contains(&beta) {
        return invalid(format!("beta = {beta} is not in [0, 1]"));
    }
    Ok((1.0 - u.powf(beta)) / (1.0 - u))
}

/// Expected tokens per iteration when depth `k` is accepted with
/// probability `alphas[k−1]` given all shallower depths were.
pub fn expected_tokens(alphas: &[Real]) -> Result<Real> {
    if alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return invalid("acceptance rates must lie in [0, 1]");
    }
    let gamma = alphas.len();
    let mut reach = 1.0;
    let mut tau = 0.0;
    for n in 1..=gamma + 1 {
        let z = if n <= gamma { 1.0 - alphas[n - 1] } else { 1.0 };
        tau += n as Real * reach * z;
        if n <= gamma {
            reach *= alphas[n - 1];
        }
    }
    Ok(tau)
}

/// `(1 − α^{γ+1})/(1 − α)`, with the `γ + 1` limit at `α = 1`.
pub fn geometric_expected_tokens(gamma: usize, alpha: Real) -> Result<Real> {
    if !(0.0..=1.0).contains(&alpha) {
        return invalid(format!("alpha = {alpha} is not in [0, 1]"));
    }
    if alpha == 1.0 {
        return Ok((gamma + 1) as Real);
    }
    Ok((1.0 - alpha.powi(gamma as i32 + 1)) / (1.0 - alpha))
}

/// `clamp(discount_k(β) · α(β; U), 0, 1)` for `k = 1..=gamma`.
pub fn depth_alphas(
    gamma: usize,
    beta: Real,
    params: &PerfParams,
    discount: &DiscountProfile,
) -> Result<Vec<Real>> {
    params.validate()?;
    let a = alpha(beta, params.u)?;
    Ok((1..=gamma)
        .map(|k| (discount.multiplier(k, beta) * a).clamp(0.0, 1.0))
        .collect())
}

/// `τ(γ, β)/(δ + β + 1)`.
pub fn improvement_factor(
    gamma: usize,
    beta: Real,
    params: &PerfParams,
    discount: &DiscountProfile,
) -> Result<Real> {
    Ok(evaluate(gamma, beta, params, discount)?.improvement)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanCell {
    pub gamma: usize,
    pub beta: Real,
    pub tau: Real,
    pub improvement: Real,
}

fn evaluate(
    gamma: usize,
    beta: Real,
    params: &PerfParams,
    discount: &DiscountProfile,
) -> Result<PlanCell> {
    if gamma == 0 {
        return invalid("gamma must be at least 1");
    }
    let tau = expected_tokens(&depth_alphas(gamma, beta, params, discount)?)?;
    Ok(PlanCell {
        gamma,
        beta,
        tau,
        improvement: tau / (params.delta + beta + 1.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub params: PerfParams,
    /// Every evaluated cell, γ-major in grid order.
    pub cells: Vec<PlanCell>,
    pub optimal: PlanCell,
    /// True when no cell beats plain decoding.
    pub no_speedup: bool,
}

/// Exhaustive search of the (γ, β) grid for the largest improvement
/// factor. Near-ties (within [`PLAN_TIE_TOL`]) go to the smaller γ, then
/// the larger β.
pub fn plan(
    betas: &[Real],
    gammas: &[usize],
    params: &PerfParams,
    discount: &DiscountProfile,
    exec: Exec,
) -> Result<Plan> {
    if betas.is_empty() || gammas.is_empty() {
        return invalid("plan needs non-empty beta and gamma grids");
    }
    params.validate()?;
    let nb = betas.len();
    let cells = map_indexed(gammas.len() * nb, exec, |i| {
        evaluate(gammas[i / nb], betas[i % nb], params, discount)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut optimal = cells[0];
    for c in &cells[1..] {
        if prefer(c, &optimal) {
            optimal = *c;
        }
    }
    Ok(Plan {
        params: *params,
        no_speedup: optimal.improvement <= 1.0,
        cells,
        optimal,
    })
}

fn prefer(c: &PlanCell, best: &PlanCell) -> bool {
    if (c.improvement - best.improvement).abs() > PLAN_TIE_TOL {
        return c.improvement > best.improvement;
    }
    match c.gamma.cmp(&best.gamma) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => c.beta > best.beta,
    }
}

/// Distinct β values reachable with the model's symmetric skip bands.
pub fn realizable_betas(config: &ModelConfig) -> Vec<Real> {
    let mut betas: Vec<Real> = SkipSpec::symmetric_middle(config.n_layers)
        .iter()
        .map(|s| s.beta(config))
        .collect();
    betas.sort_by(Real::total_cmp);
    betas.dedup();
    betas
}

/// Speed per unit of memory relative to a baseline,
/// `(v1/v0)/(m1/m0)`.
pub fn memory_normalized_speed(v0: Real, m0: Real, v1: Real, m1: Real) -> Result<Real> {
    if [v0, m0, v1, m1].iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return invalid("speeds and memory footprints must be positive");
    }
    Ok((v1 * m0) / (v0 * m1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_endpoints() {
        assert_eq!(alpha(1.0, 0.01).unwrap(), 1.0);
        assert_eq!(alpha(0.0, 0.01).unwrap(), 0.0);
        assert!((alpha(0.5, 0.01).unwrap() - 0.9 / 0.99).abs() < 1e-15);
        assert!(alpha(0.5, 1.0).is_err());
        assert!(alpha(1.5, 0.5).is_err());
    }

    #[test]
    fn expected_tokens_examples() {
        assert!((expected_tokens(&[0.5]).unwrap() - 1.5).abs() < 1e-15);
        assert_eq!(expected_tokens(&[0.0; 5]).unwrap(), 1.0);
        assert!((expected_tokens(&[0.5, 0.5]).unwrap() - 1.75).abs() < 1e-15);
        assert!((geometric_expected_tokens(3, 0.9).unwrap() - 3.439).abs() < 1e-12);
        assert_eq!(geometric_expected_tokens(4, 1.0).unwrap(), 5.0);
        assert!(expected_tokens(&[1.1]).is_err());
    }

    #[test]
    fn improvement_examples() {
        let none = DiscountProfile::Linear;
        let zero = PerfParams { u: 0.01, delta: 0.0 };
        assert_eq!(improvement_factor(1, 1.0, &zero, &none).unwrap(), 1.0);
        let p = PerfParams::default();
        let expect = (1.0 + 0.9 / 0.99) / 1.54;
        assert!((improvement_factor(1, 0.5, &p, &none).unwrap() - expect).abs() < 1e-12);
        assert!((improvement_factor(6, 0.0, &p, &none).unwrap() - 1.0 / 1.04).abs() < 1e-15);
    }

    #[test]
    fn plan_single_cell_and_overhead() {
        let p = PerfParams::default();
        let d = DiscountProfile::Linear;
        let one = plan(&[0.5], &[3], &p, &d, Exec::Sequential).unwrap();
        assert_eq!((one.optimal.gamma, one.optimal.beta), (3, 0.5));
        let heavy = PerfParams { u: 0.01, delta: 10.0 };
        let grid: Vec<Real> = (1..=8).map(|i| i as Real / 8.0).collect();
        let gammas: Vec<usize> = (1..=8).collect();
        let r = plan(&grid, &gammas, &heavy, &d, Exec::Sequential).unwrap();
        assert!(r.no_speedup);
        assert!(r.cells.iter().all(|c| c.improvement < 1.0));
        assert!(plan(&[], &[1], &p, &d, Exec::Sequential).is_err());
    }

    #[test]
    fn tie_prefers_small_gamma_then_large_beta() {
        let p = PerfParams { u: 0.5, delta: 0.0 };
        // beta = 0 gives IF = 1 at every gamma
        let r = plan(&[0.0], &[3, 1, 2], &p, &DiscountProfile::Linear, Exec::Sequential).unwrap();
        assert_eq!(r.optimal.gamma, 1);
        let a = PlanCell { gamma: 2, beta: 0.25, tau: 1.0, improvement: 1.0 };
        let b = PlanCell { beta: 0.5, ..a };
        assert!(prefer(&b, &a) && !prefer(&a, &b));
    }

    #[test]
    fn memory_normalized() {
        assert_eq!(memory_normalized_speed(3.0, 2.0, 3.0, 2.0).unwrap(), 1.0);
        assert!(memory_normalized_speed(0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn realizable_betas_for_eight_layers() {
        let cfg = ModelConfig::tiny(64, 8, 32);
        let b = realizable_betas(&cfg);
        assert_eq!(b.len(), 4);
        assert_eq!(*b.last().unwrap(), 1.0);
    }
}
