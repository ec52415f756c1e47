//! Input readers and output sinks shared by the subcommands.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use tailadrf::harness::{ingest_csv, ColumnMapping, Ingested};

/// `--out` file, or stdout when absent.
pub fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Column mapping from a JSON config, or `t`/`y` with every other column as a covariate.
pub fn mapping_for(path: &Path, config: Option<&Path>) -> Result<ColumnMapping> {
    if let Some(c) = config {
        let text = std::fs::read_to_string(c).with_context(|| format!("reading {}", c.display()))?;
        return serde_json::from_str(&text).with_context(|| format!("parsing column mapping {}", c.display()));
    }
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let covariates = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .filter(|h| h != "t" && h != "y")
        .collect();
    Ok(ColumnMapping { treatment: "t".into(), outcome: "y".into(), covariates })
}

pub fn read_sample(path: &Path, mapping: &ColumnMapping, log1p: bool) -> Result<Ingested> {
    let got = ingest_csv(path, mapping, log1p).with_context(|| format!("reading {}", path.display()))?;
    if got.dropped > 0 {
        log::warn!("{} rows dropped for missing values", got.dropped);
    }
    Ok(got)
}

/// The `r` column of a residual file.
pub fn read_residuals(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let Some(col) = reader.headers()?.iter().position(|h| h.trim() == "r") else {
        bail!("{} has no column `r`", path.display());
    };
    let mut r = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let field = rec.get(col).unwrap_or("").trim();
        let v: f64 = field.parse().with_context(|| format!("row {}: non-numeric residual '{field}'", i + 2))?;
        r.push(v);
    }
    Ok(r)
}

/// Sibling path for the panel summary: `cells.csv` becomes `cells.summary.json`.
pub fn summary_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("summary.json")
}

pub fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}
