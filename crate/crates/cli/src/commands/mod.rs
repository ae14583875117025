mod bench;
mod decode;
mod grid;
mod init;
mod measure;
mod train;

use s3d::exec::Exec;

use crate::args::{Command, Workers};
use crate::error::{usage, CliError, Result};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Init(a) => init::run(a),
        Command::Train(a) => {
            let w = pool(&a.workers)?;
            w.run(|exec| train::run(&a, exec))
        }
        Command::Decode(a) => decode::run(a),
        Command::Bench(a) => {
            let w = pool(&a.workers)?;
            w.run(|exec| bench::run(&a, exec))
        }
        Command::Plan(a) => {
            let w = pool(&a.workers)?;
            w.run(|exec| grid::plan(&a.grid, exec))
        }
        Command::Simulate(a) => {
            let w = pool(&a.workers)?;
            w.run(|exec| grid::simulate(&a, exec))
        }
        Command::Measure(a) => {
            let w = pool(&a.workers)?;
            w.run(|exec| measure::run(&a, exec))
        }
    }
}

/// Thread pool selected by `--workers`; results do not depend on it.
struct Pool(Option<rayon::ThreadPool>, Exec);

impl Pool {
    fn run<T: Send>(&self, f: impl FnOnce(Exec) -> Result<T> + Send) -> Result<T> {
        match &self.0 {
            Some(p) => p.install(|| f(self.1)),
            None => f(self.1),
        }
    }
}

fn pool(w: &Workers) -> Result<Pool> {
    match w.workers {
        None => Ok(Pool(None, Exec::default())),
        Some(0) => usage("--workers must be at least 1"),
        Some(1) => Ok(Pool(None, Exec::Sequential)),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|p| Pool(Some(p), Exec::Parallel))
            .map_err(|e| CliError::Runtime(e.to_string())),
    }
}
