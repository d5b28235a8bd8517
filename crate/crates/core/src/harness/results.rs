//! CSV emission of result rows with a full-precision sidecar.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{Augmentation, Method};
use super::experiment::ResultRow;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "target,method,augmentation,alpha,p,run_seeds,accuracies,mean,std";

/// Sidecar path: `results.csv` -> `results.full.csv`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.full.csv"))
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    target: String,
    method: String,
    augmentation: String,
    alpha: String,
    p: String,
    run_seeds: String,
    accuracies: String,
    mean: String,
    std: String,
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(";")
}

fn record(row: &ResultRow, full: bool) -> Record {
    let num = |v: f64| if full { format!("{v:?}") } else { format!("{v:.2}") };
    Record {
        target: row.target.clone(),
        method: row.method.to_string(),
        augmentation: row.augmentation.to_string(),
        alpha: format!("{:?}", row.alpha),
        p: format!("{:?}", row.p),
        run_seeds: join(&row.run_seeds, |s| s.to_string()),
        accuracies: join(&row.accuracies, |&a| num(a)),
        mean: num(row.mean),
        std: num(row.std),
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Dataset(format!("{}: {e}", path.display()))
}

fn write_csv(path: &Path, rows: &[ResultRow], full: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err(path))?;
    w.write_record(CSV_HEADER.split(',')).map_err(csv_err(path))?;
    for row in rows {
        w.serialize(record(row, full)).map_err(csv_err(path))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `path` (accuracies with 2 decimals) and its full-precision sidecar.
pub fn emit_results(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_csv(path, rows, false)?;
    write_csv(&sidecar_path(path), rows, true)
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Dataset(format!("cannot parse {what} `{s}`")))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(';').map(|v| parse(v, what)).collect()
}

/// Reads a results CSV (either file) back into rows.
pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header: Vec<String> = r.headers().map_err(csv_err(path))?.iter().map(String::from).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::Dataset(format!("{}: unexpected header {header:?}", path.display())));
    }
    let mut rows = Vec::new();
    for rec in r.deserialize::<Record>() {
        let rec = rec.map_err(csv_err(path))?;
        rows.push(ResultRow {
            target: rec.target,
            method: rec.method.parse::<Method>()?,
            augmentation: rec.augmentation.parse::<Augmentation>()?,
            alpha: parse(&rec.alpha, "alpha")?,
            p: parse(&rec.p, "p")?,
            run_seeds: parse_list(&rec.run_seeds, "run seed")?,
            accuracies: parse_list(&rec.accuracies, "accuracy")?,
            mean: parse(&rec.mean, "mean")?,
            std: parse(&rec.std, "std")?,
        });
    }
    Ok(rows)
}
