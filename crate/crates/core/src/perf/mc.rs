use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::exec::{derive_seed, map_indexed, Exec};
use crate::kernels::Real;

/// Trials per independently seeded chunk.
pub const MC_CHUNK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub trials: usize,
    pub tau: Real,
    pub stderr: Real,
    pub improvement: Real,
}

/// Streaming mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: u64,
    mean: Real,
    m2: Real,
}

impl Moments {
    fn push(&mut self, x: Real) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as Real;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, o: Moments) -> Moments {
        if self.n == 0 {
            return o;
        }
        if o.n == 0 {
            return self;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        Moments {
            n,
            mean: self.mean + d * o.n as Real / n as Real,
            m2: self.m2 + o.m2 + d * d * (self.n as Real * o.n as Real) / n as Real,
        }
    }
}

/// Monte-Carlo estimate of tokens per iteration: each trial walks the
/// depths accepting with probability `alphas[k]` until the first
/// rejection and emits the accepted drafts plus one.
///
/// Trials run in fixed-size chunks with derived seeds and are reduced in
/// chunk order, so the estimate depends only on `seed` and `trials`.
pub fn simulate_mc(
    alphas: &[Real],
    delta: Real,
    beta: Real,
    trials: usize,
    seed: u64,
    exec: Exec,
) -> Result<McEstimate> {
    if trials == 0 {
        return invalid("trials must be at least 1");
    }
    if alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return invalid("acceptance rates must lie in [0, 1]");
    }
    let chunks = trials.div_ceil(MC_CHUNK);
    let parts = map_indexed(chunks, exec, |c| {
        let n = MC_CHUNK.min(trials - c * MC_CHUNK);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(derive_seed(seed, c as u64));
        let mut m = Moments::default();
        for _ in 0..n {
            let accepted = alphas
                .iter()
                .take_while(|&&a| rng.random::<Real>() < a)
                .count();
            m.push((accepted + 1) as Real);
        }
        m
    });
    let m = parts.into_iter().fold(Moments::default(), Moments::merge);
    let var = if m.n > 1 { m.m2 / (m.n - 1) as Real } else { 0.0 };
    Ok(McEstimate {
        trials,
        tau: m.mean,
        stderr: (var / m.n as Real).sqrt(),
        improvement: m.mean / (delta + beta + 1.0),
    })
}
