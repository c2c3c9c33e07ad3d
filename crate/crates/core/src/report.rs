//! Tabular report rows and their CSV / JSON emission.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::mpce;

/// Classifiers in accuracy-table order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    Nn,
    Dtw,
    Dba,
    Ours,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Nn, Method::Dtw, Method::Dba, Method::Ours];

    /// Column name in the accuracy table.
    pub fn column(self) -> &'static str {
        match self {
            Method::Nn => "base",
            Method::Dtw => "dtw",
            Method::Dba => "dba",
            Method::Ours => "ours",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nn" | "base" => Ok(Method::Nn),
            "dtw" => Ok(Method::Dtw),
            "dba" => Ok(Method::Dba),
            "ours" => Ok(Method::Ours),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Config(format!(
                "unknown format {other:?}, expected csv or json"
            ))),
        }
    }
}

/// One accuracy-table row. Methods that were not run stay empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub dataset: String,
    /// Class count, used for the per-class error summary; not a table column.
    #[serde(skip)]
    pub classes: usize,
    pub base: Option<f64>,
    pub dtw: Option<f64>,
    pub dba: Option<f64>,
    pub ours: Option<f64>,
    pub cs_org: Option<f64>,
    pub cs_warp: Option<f64>,
}

impl AccuracyRow {
    pub fn get(&self, m: Method) -> Option<f64> {
        match m {
            Method::Nn => self.base,
            Method::Dtw => self.dtw,
            Method::Dba => self.dba,
            Method::Ours => self.ours,
        }
    }

    pub fn set(&mut self, m: Method, v: f64) {
        let slot = match m {
            Method::Nn => &mut self.base,
            Method::Dtw => &mut self.dtw,
            Method::Dba => &mut self.dba,
            Method::Ours => &mut self.ours,
        };
        *slot = Some(v);
    }
}

/// Summary row in accuracy-table layout whose method columns hold the mean
/// per-class error over `rows`. Methods missing from any row stay empty.
pub fn mpce_row(rows: &[AccuracyRow]) -> Result<AccuracyRow> {
    let mut out = AccuracyRow {
        dataset: "MPCE".into(),
        classes: 0,
        ..Default::default()
    };
    for m in Method::ALL {
        let pairs: Option<Vec<(f64, usize)>> = rows
            .iter()
            .map(|r| r.get(m).map(|a| (a, r.classes)))
            .collect();
        if let Some(pairs) = pairs.filter(|p| !p.is_empty()) {
            out.set(m, mpce(&pairs)?);
        }
    }
    Ok(out)
}

/// One sample of a plotted series in long format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub series_id: String,
    pub t: usize,
    pub role: String,
    pub value: f64,
}

/// Flattens a univariate view of `values` into long-format points.
pub fn series_points(series_id: &str, role: &str, values: &[f64]) -> Vec<SeriesPoint> {
    values
        .iter()
        .enumerate()
        .map(|(t, &value)| SeriesPoint {
            series_id: series_id.to_string(),
            t,
            role: role.to_string(),
            value,
        })
        .collect()
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

/// Writes `rows` as CSV, or as a JSON document `{ "config": ..., "rows": [...] }`.
/// CSV output gets the config in a `<file>.config.json` sidecar.
pub fn write_rows<T: Serialize, C: Serialize>(
    path: &Path,
    format: Format,
    config: &C,
    rows: &[T],
) -> Result<()> {
    match format {
        Format::Csv => {
            write_atomic(path, &to_csv(rows)?)?;
            let sidecar = path.with_extension("config.json");
            write_atomic(&sidecar, &serde_json::to_vec_pretty(config)?)
        }
        Format::Json => {
            let doc = serde_json::json!({ "config": config, "rows": rows });
            write_atomic(path, &serde_json::to_vec_pretty(&doc)?)
        }
    }
}

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?
        .to_os_string();
    name.push(".tmp");
    let tmp = path.with_file_name(name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
