use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use s3d::model::{load_model, Model, TokenId};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::args::CorpusArgs;
use crate::error::{CliError, Result};

fn runtime(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| runtime(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| runtime(path, e))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| runtime(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| runtime(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| runtime(path, e))?;
    out.write_all(b"\n").and_then(|_| out.flush()).map_err(|e| runtime(path, e))
}

pub fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("{text}");
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    if !path.exists() {
        return Err(CliError::Usage(format!("model file {} does not exist", path.display())));
    }
    load_model(path).map_err(|e| runtime(path, e))
}

/// Rows to a CSV file, or to stdout when `path` is `None`.
pub fn write_csv<T: Serialize>(path: Option<&Path>, rows: &[T]) -> Result<()> {
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))
}

/// Reads CSV rows by header name; failures carry the 1-based file line.
pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| runtime(path, e))?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            let msg = match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
                _ => e.to_string(),
            };
            runtime(path, format!("line {line}: {msg}"))
        })?);
    }
    Ok(rows)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CorpusFile {
    Flat(Vec<TokenId>),
    Nested(Vec<Vec<TokenId>>),
}

/// Token sequences from `--corpus`, or one synthetic stream sized to the
/// model vocabulary.
pub fn corpus(args: &CorpusArgs, model: &Model) -> Result<Vec<Vec<TokenId>>> {
    let cfg = model.config();
    let seqs = match &args.corpus {
        Some(p) => match read_json::<CorpusFile>(p)? {
            CorpusFile::Flat(v) => vec![v],
            CorpusFile::Nested(v) => v,
        },
        None => vec![s3d::train::gen_corpus(
            cfg.vocab_size,
            cfg.mask_token_id,
            args.corpus_seed,
            args.corpus_tokens,
        )?],
    };
    if let Some(t) = seqs.iter().flatten().find(|&&t| t >= cfg.vocab_size) {
        return Err(CliError::Usage(format!("corpus token {t} is outside the vocabulary")));
    }
    Ok(seqs)
}
