use s3d::exec::{derive_seed, Exec};
use s3d::perf::{
    self, depth_alphas, fit_discount, realizable_betas, simulate_mc, DiscountProfile, DiscountSample,
    PerfParams, Plan,
};
use serde::{Deserialize, Serialize};

use crate::args::{GridArgs, SimulateArgs};
use crate::config::{parse_list, parse_ranges};
use crate::error::{usage, CliError, Result};
use crate::io::{load, print_json, read_csv, write_csv, write_json};

#[derive(Serialize)]
struct PlanRow {
    gamma: usize,
    beta: f64,
    tau: f64,
    #[serde(rename = "IF")]
    improvement: f64,
}

#[derive(Serialize)]
struct SimRow {
    gamma: usize,
    beta: f64,
    tau: f64,
    #[serde(rename = "IF")]
    improvement: f64,
    tau_mc: f64,
    stderr: f64,
}

#[derive(Serialize)]
struct Optimal {
    gamma: usize,
    beta: f64,
    #[serde(rename = "IF")]
    improvement: f64,
    tau: f64,
}

#[derive(Serialize)]
struct Summary {
    optimal: Optimal,
    params: PerfParams,
    discount: DiscountProfile,
    no_speedup: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    trials: Option<usize>,
    /// Largest `|τ̂ − τ|/stderr` over the grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    max_z: Option<f64>,
}

/// A row of a `measure` CSV; other columns are ignored.
#[derive(Deserialize)]
struct MeasuredRow {
    beta: f64,
    depth: usize,
    rate: Option<f64>,
}

fn betas(g: &GridArgs) -> Result<Vec<f64>> {
    if let Some(list) = &g.betas {
        return parse_list(list);
    }
    if let Some(path) = &g.model {
        return Ok(realizable_betas(load(path)?.config()));
    }
    if g.beta_grid == 0 {
        return usage("--beta-grid must be positive");
    }
    Ok((1..=g.beta_grid).map(|i| i as f64 / g.beta_grid as f64).collect())
}

fn discount(g: &GridArgs) -> Result<DiscountProfile> {
    if let Some(path) = &g.fit {
        let rows: Vec<MeasuredRow> = read_csv(path)?;
        let samples: Vec<DiscountSample> = rows
            .iter()
            .map(|r| DiscountSample {
                beta: r.beta,
                depth: r.depth,
                rate: r.rate.unwrap_or_else(|| {
                    log::warn!("depth {} at beta {} was never reached; using rate 0", r.depth, r.beta);
                    0.0
                }),
            })
            .collect();
        return fit_discount(&samples, g.u).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())));
    }
    match g.discount.as_str() {
        "linear" => Ok(DiscountProfile::Linear),
        "none" => Ok(DiscountProfile::None),
        d => usage(format!("unknown discount {d:?}; expected linear or none")),
    }
}

struct Setup {
    params: PerfParams,
    discount: DiscountProfile,
    plan: Plan,
}

fn setup(g: &GridArgs, exec: Exec) -> Result<Setup> {
    let params = PerfParams { u: g.u, delta: g.delta };
    params.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let gammas = parse_ranges(&g.gammas)?;
    if gammas.contains(&0) {
        return usage("gammas must be positive");
    }
    let betas = betas(g)?;
    if betas.iter().any(|b| !(*b > 0.0 && *b <= 1.0)) {
        return usage("betas must lie in (0, 1]");
    }
    let discount = discount(g)?;
    let plan = perf::plan(&betas, &gammas, &params, &discount, exec)?;
    Ok(Setup { params, discount, plan })
}

fn emit<R: Serialize>(g: &GridArgs, rows: &[R], summary: &Summary) -> Result<()> {
    write_csv(g.csv.as_deref(), rows)?;
    match (&g.json, &g.csv) {
        (Some(p), _) => write_json(p, summary),
        (None, Some(_)) => print_json(summary),
        (None, None) => {
            let text = serde_json::to_string(summary).map_err(|e| CliError::Runtime(e.to_string()))?;
            eprintln!("{text}");
            Ok(())
        }
    }
}

fn summary(s: &Setup) -> Summary {
    let o = s.plan.optimal;
    Summary {
        optimal: Optimal {
            gamma: o.gamma,
            beta: o.beta,
            improvement: o.improvement,
            tau: o.tau,
        },
        params: s.params,
        discount: s.discount.clone(),
        no_speedup: s.plan.no_speedup,
        trials: None,
        max_z: None,
    }
}

pub fn plan(g: &GridArgs, exec: Exec) -> Result<()> {
    let s = setup(g, exec)?;
    let rows: Vec<PlanRow> = s
        .plan
        .cells
        .iter()
        .map(|c| PlanRow {
            gamma: c.gamma,
            beta: c.beta,
            tau: c.tau,
            improvement: c.improvement,
        })
        .collect();
    emit(g, &rows, &summary(&s))
}

pub fn simulate(a: &SimulateArgs, exec: Exec) -> Result<()> {
    let s = setup(&a.grid, exec)?;
    let mut rows = Vec::with_capacity(s.plan.cells.len());
    let mut max_z: f64 = 0.0;
    for (i, c) in s.plan.cells.iter().enumerate() {
        let alphas = depth_alphas(c.gamma, c.beta, &s.params, &s.discount)?;
        let mc = simulate_mc(&alphas, s.params.delta, c.beta, a.trials, derive_seed(a.seed, i as u64), exec)?;
        let diff = (mc.tau - c.tau).abs();
        let z = if mc.stderr > 0.0 {
            diff / mc.stderr
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        max_z = max_z.max(z);
        rows.push(SimRow {
            gamma: c.gamma,
            beta: c.beta,
            tau: c.tau,
            improvement: c.improvement,
            tau_mc: mc.tau,
            stderr: mc.stderr,
        });
    }
    let mut sum = summary(&s);
    sum.trials = Some(a.trials);
    sum.max_z = Some(max_z);
    emit(&a.grid, &rows, &sum)
}
