use serde::{Deserialize, Serialize};

use super::alpha;
use crate::error::{invalid, Result};
use crate::kernels::Real;

/// Per-depth multiplier applied to the first-token acceptance rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DiscountProfile {
    /// `max(0, 1 − (k − 1)/4)`, independent of β.
    #[default]
    Linear,
    /// Constant 1 at every depth.
    None,
    /// Measured multipliers, interpolated linearly in β.
    Table(DiscountTable),
}

/// `multipliers[k][i]` is the depth-`k+1` multiplier at `betas[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountTable {
    pub betas: Vec<Real>,
    pub multipliers: Vec<Vec<Real>>,
}

impl DiscountTable {
    fn at(&self, depth: usize, beta: Real) -> Real {
        let Some(row) = self.multipliers.get(depth - 1) else {
            return 0.0;
        };
        let b = &self.betas;
        if b.len() == 1 || beta <= b[0] {
            return row[0];
        }
        let last = b.len() - 1;
        if beta >= b[last] {
            return row[last];
        }
        let i = b.partition_point(|&x| x <= beta) - 1;
        let t = (beta - b[i]) / (b[i + 1] - b[i]);
        row[i] + t * (row[i + 1] - row[i])
    }
}

impl DiscountProfile {
    /// Multiplier at 1-based `depth`, in `[0, 1]`.
    pub fn multiplier(&self, depth: usize, beta: Real) -> Real {
        let raw = match self {
            DiscountProfile::Linear => 1.0 - (depth as Real - 1.0) / 4.0,
            DiscountProfile::None => 1.0,
            DiscountProfile::Table(t) => t.at(depth, beta),
        };
        raw.clamp(0.0, 1.0)
    }
}

/// One measured acceptance rate at a draft depth for a given β.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountSample {
    pub beta: Real,
    /// 1-based drafting depth.
    pub depth: usize,
    pub rate: Real,
}

/// Builds a table profile from measured rates: each multiplier is the
/// measured rate over `alpha(β; u)`.
///
/// Every depth must be sampled at the same β values. Depths past the
/// table get multiplier 0. With a single β the profile is constant in β.
pub fn fit_discount(samples: &[DiscountSample], u: Real) -> Result<DiscountProfile> {
    if samples.is_empty() {
        return invalid("no acceptance samples to fit");
    }
    let mut betas: Vec<Real> = samples.iter().map(|s| s.beta).collect();
    betas.sort_by(Real::total_cmp);
    betas.dedup();
    let depth = samples.iter().map(|s| s.depth).max().unwrap_or(0);
    if samples.iter().any(|s| s.depth == 0) {
        return invalid("depths are 1-based");
    }
    let mut multipliers = vec![vec![Real::NAN; betas.len()]; depth];
    for s in samples {
        if !(0.0..=1.0).contains(&s.rate) || !(0.0..=1.0).contains(&s.beta) {
            return invalid(format!("sample {s:?} lies outside [0, 1]"));
        }
        let a = alpha(s.beta, u)?;
        let i = betas.partition_point(|&b| b < s.beta);
        let m = if a > 0.0 { (s.rate / a).min(1.0) } else { 0.0 };
        if !multipliers[s.depth - 1][i].is_nan() {
            return invalid(format!("duplicate sample at depth {} beta {}", s.depth, s.beta));
        }
        multipliers[s.depth - 1][i] = m;
    }
    if let Some(k) = multipliers.iter().position(|r| r.iter().any(|x| x.is_nan())) {
        return invalid(format!("depth {} is missing samples for some beta values", k + 1));
    }
    if betas.len() == 1 {
        log::warn!("only one beta sampled; the fitted discount is constant in beta");
    }
    for i in 0..betas.len() {
        if multipliers.windows(2).any(|w| w[1][i] > w[0][i]) {
            log::warn!("measured discount increases with depth at beta {}", betas[i]);
        }
    }
    Ok(DiscountProfile::Table(DiscountTable { betas, multipliers }))
}
