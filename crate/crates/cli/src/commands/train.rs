use s3d::exec::Exec;
use s3d::model::save_model;
use s3d::train::{gen_corpus, StepLoss, Trainer};
use serde::Serialize;

use crate::args::TrainArgs;
use crate::config::{CorpusSpec, TrainRun};
use crate::error::{CliError, Result};
use crate::io::{load, print_json, read_json, write_csv};

#[derive(Serialize)]
struct LossRow {
    step: usize,
    loss: Option<f64>,
}

#[derive(Serialize)]
struct TrainReport {
    out_dir: String,
    steps: usize,
    first_loss: Option<f64>,
    last_loss: Option<f64>,
}

pub fn run(a: &TrainArgs, exec: Exec) -> Result<()> {
    let mut run: TrainRun = read_json(&a.config)?;
    if let Some(d) = &a.out_dir {
        run.out_dir = d.clone();
    }
    if let Some(s) = a.steps {
        run.train.steps = s;
    }
    let dir = run.out_dir.clone();
    let resuming = a.resume && dir.join("checkpoint.json").exists();
    let mut trainer = if resuming {
        Trainer::load_checkpoint(&dir, Some(run.train.steps))?
    } else {
        if a.resume {
            log::warn!("no checkpoint in {}; starting from scratch", dir.display());
        }
        let model = load(&run.model)?;
        Trainer::new(model, run.train.clone()).map_err(|e| CliError::Usage(e.to_string()))?
    };
    let cfg = trainer.model().config().clone();
    let stream = match &run.corpus {
        CorpusSpec::File { path } => read_json::<Vec<usize>>(path)?,
        CorpusSpec::Synthetic { seed, tokens } => {
            gen_corpus(cfg.vocab_size, cfg.mask_token_id, *seed, *tokens)?
        }
    };
    let every = a.checkpoint_every.unwrap_or(0);
    let result = trainer.run(&stream, exec, |t| {
        let s = t.step();
        if s % 50 == 0 {
            if let Some(StepLoss { loss: Some(l), .. }) = t.losses().last() {
                log::info!("step {s}: loss {l:.5}");
            }
        }
        if every > 0 && s % every == 0 {
            t.save_checkpoint(&dir)?;
        }
        Ok(())
    });
    let rows: Vec<LossRow> = trainer
        .losses()
        .iter()
        .map(|l| LossRow {
            step: l.step,
            loss: l.loss,
        })
        .collect();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    write_csv(Some(&dir.join("losses.csv")), &rows)?;
    result?;
    trainer.save_checkpoint(&dir)?;
    save_model(dir.join("model.s3dw"), trainer.model(), run.precision)?;
    let losses: Vec<f64> = trainer.losses().iter().filter_map(|l| l.loss).collect();
    print_json(&TrainReport {
        out_dir: dir.display().to_string(),
        steps: trainer.step(),
        first_loss: losses.first().copied(),
        last_loss: losses.last().copied(),
    })
}
