use s3d::model::{save_model, Model, ModelConfig, SkipSpec};
use serde::Serialize;

use crate::args::InitArgs;
use crate::error::{CliError, Result};
use crate::io::{print_json, read_json};

#[derive(Serialize)]
struct Band {
    m: usize,
    n: usize,
    beta: f64,
}

#[derive(Serialize)]
struct InitReport {
    path: String,
    parameters: usize,
    skips: Vec<Band>,
}

pub fn run(a: InitArgs) -> Result<()> {
    let config: ModelConfig = read_json(&a.config)?;
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let model = Model::init(config, a.seed)?;
    save_model(&a.out, &model, a.precision)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", a.out.display())))?;
    let cfg = model.config();
    print_json(&InitReport {
        path: a.out.display().to_string(),
        parameters: model.weights().param_count(),
        skips: SkipSpec::symmetric_middle(cfg.n_layers)
            .into_iter()
            .map(|s| Band {
                m: s.m,
                n: s.n,
                beta: s.beta(cfg),
            })
            .collect(),
    })
}
