use s3d::exec::Exec;
use s3d::model::SkipSpec;
use s3d::specdec::measure_acceptance;
use serde::Serialize;

use crate::args::MeasureArgs;
use crate::config::parse_skip;
use crate::error::{CliError, Result};
use crate::io::{corpus, load, write_csv};

#[derive(Serialize)]
struct Row {
    skip_m: usize,
    skip_n: usize,
    beta: f64,
    depth: usize,
    attempted: u64,
    accepted: u64,
    /// Empty when the depth was never reached.
    rate: Option<f64>,
}

pub fn run(a: &MeasureArgs, exec: Exec) -> Result<()> {
    let model = load(&a.model)?;
    let layers = model.config().n_layers;
    let skips: Vec<SkipSpec> = match &a.skips {
        Some(s) => s.split(',').map(parse_skip).collect::<Result<_>>()?,
        None => SkipSpec::symmetric_middle(layers),
    };
    for s in &skips {
        s.validate(layers).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let seqs = corpus(&a.corpus, &model)?;
    let mut rows = Vec::new();
    for skip in skips {
        let m = measure_acceptance(&model, skip, &seqs, a.gamma, a.trials, a.context, exec)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        log::info!("skip {}..{}: mean tokens {:.4}", skip.m, skip.n, m.mean_tokens);
        rows.extend(m.counts.iter().enumerate().map(|(k, c)| Row {
            skip_m: skip.m,
            skip_n: skip.n,
            beta: m.beta,
            depth: k + 1,
            attempted: c.attempted,
            accepted: c.accepted,
            rate: c.rate(),
        }));
    }
    write_csv(a.csv.as_deref(), &rows)
}
