//! CSV files that start with a comment row carrying the config hash and seed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use fscgrad::stats::mean_std;

use crate::config::Resolved;
use crate::CliError;

pub type Out = BufWriter<File>;

/// Opens `dir/name` and writes the provenance comment row.
pub fn file(dir: &Path, name: &str, r: &Resolved) -> Result<Out, CliError> {
    let mut f = BufWriter::new(File::create(dir.join(name))?);
    writeln!(f, "# config_sha256={} seed={}", r.hash, r.cfg.seed)?;
    Ok(f)
}

/// CSV writer over [`file`]; rows may differ in length (summary rows are short).
pub fn csv(dir: &Path, name: &str, r: &Resolved) -> Result<csv::Writer<Out>, CliError> {
    Ok(csv::WriterBuilder::new()
        .flexible(true)
        .from_writer(file(dir, name, r)?))
}

/// Shortest representation that parses back to the same value; empty for NaN.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:?}")
    }
}

/// Mean and sample standard deviation, the latter `None` for a single value.
pub fn summary(values: &[f64]) -> (f64, Option<f64>) {
    let (m, s) = mean_std(values);
    (m, (values.len() > 1).then_some(s))
}

/// `0.9678 ± 0.0089`, or just the mean when there is no spread to report.
pub fn pm(values: &[f64]) -> String {
    match summary(values) {
        (m, Some(s)) => format!("{m:.4} ± {s:.4}"),
        (m, None) => format!("{m:.4}"),
    }
}
