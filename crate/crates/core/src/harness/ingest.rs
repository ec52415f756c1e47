//! CSV ingestion with a column mapping onto `(X, T, Y)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dgp::Sample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub treatment: String,
    pub outcome: String,
    #[serde(default)]
    pub covariates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub sample: Sample,
    /// Rows dropped because a mapped value was missing.
    pub dropped: usize,
    /// No covariates were mapped and a constant column stands in for `X`.
    pub constant_covariate: bool,
}

fn is_missing(s: &str) -> bool {
    matches!(s.trim(), "" | "NA" | "na" | "NaN" | "nan" | "null" | "NULL")
}

/// Reads the mapped columns; rows with a missing mapped value are dropped and
/// counted. With `log1p` the outcome becomes `ln(1 + Y)`.
pub fn ingest_csv(path: &Path, mapping: &ColumnMapping, log1p: bool) -> Result<Ingested> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::Data(format!("column '{name}' not found")))
    };
    let t_col = find(&mapping.treatment)?;
    let y_col = find(&mapping.outcome)?;
    let x_cols = mapping.covariates.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let constant_covariate = x_cols.is_empty();
    if constant_covariate {
        log::warn!("no covariate columns mapped; using a single constant covariate");
    }
    let mut cols = vec![t_col, y_col];
    cols.extend(&x_cols);
    let (mut x, mut t, mut y) = (Vec::new(), Vec::new(), Vec::new());
    let mut dropped = 0;
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let fields: Vec<&str> = cols.iter().map(|&c| rec.get(c).unwrap_or("")).collect();
        if fields.iter().any(|f| is_missing(f)) {
            dropped += 1;
            continue;
        }
        let parsed = fields
            .iter()
            .zip(&cols)
            .map(|(f, &c)| {
                f.trim().parse::<f64>().map_err(|_| {
                    Error::Data(format!("row {}: column '{}' has non-numeric value '{f}'", row + 2, &headers[c]))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let mut yv = parsed[1];
        if log1p {
            if yv <= -1.0 {
                return Err(Error::Data(format!("row {}: log1p needs an outcome above -1, got {yv}", row + 2)));
            }
            yv = yv.ln_1p();
        }
        t.push(parsed[0]);
        y.push(yv);
        if constant_covariate {
            x.push(1.0);
        } else {
            x.extend_from_slice(&parsed[2..]);
        }
    }
    if dropped > 0 {
        log::info!("dropped {dropped} rows with missing mapped values");
    }
    let d = x_cols.len().max(1);
    Ok(Ingested { sample: Sample::new(x, d, t, y)?, dropped, constant_covariate })
}

/// Writes a sample as CSV with header `x0,...,x{d-1},t,y`.
pub fn write_sample_csv<W: std::io::Write>(sample: &Sample, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = sample.n_covariates();
    let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    header.extend(["t".to_string(), "y".to_string()]);
    w.write_record(&header)?;
    for i in 0..sample.len() {
        let mut row: Vec<String> = sample.x_row(i).iter().map(f64::to_string).collect();
        row.push(sample.t[i].to_string());
        row.push(sample.y[i].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
