use std::path::Path;

use serde::Serialize;

use super::config::Mode;
use crate::error::{Error, Result};

pub const HEADER: &str = "mode,replica,eps,t,statistic,value,target,pass";

/// One output line. `replica` is empty on aggregate rows; `eps` and `t` are
/// empty where they do not apply.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub mode: Mode,
    pub replica: Option<u64>,
    pub eps: Option<f64>,
    pub t: Option<f64>,
    pub statistic: String,
    pub value: f64,
    pub target: f64,
    pub pass: bool,
}

/// Serialize rows as CSV text (header always present).
pub fn to_csv(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::Config(format!("serializing row: {e}")))?;
    }
    let body = w.into_inner().map_err(|e| Error::Config(format!("serializing rows: {e}")))?;
    let mut out = String::with_capacity(HEADER.len() + 1 + body.len());
    out.push_str(HEADER);
    out.push('\n');
    out.push_str(std::str::from_utf8(&body).expect("csv output is utf-8"));
    Ok(out)
}

pub fn write_results(rows: &[ResultRow], path: &Path) -> Result<()> {
    std::fs::write(path, to_csv(rows)?).map_err(|e| Error::io(path, e))
}
