//! Curve files (CSV with a JSON mirror) and serde helpers for complex matrices.
//!
//! CSV layout: optional `# key=value,key=value` metadata lines, one header row,
//! then comma-separated numbers printed in shortest round-trip form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{CorrelationSeries, CountingSeries, Normalization, Wtd};

/// Serde adapter: complex matrix as rows of `[re, im]` pairs.
pub mod cmat_pairs {
    use crate::linalg::{c, CMat};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &CMat) -> Vec<Vec<[f64; 2]>> {
        (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<[f64; 2]>]) -> Result<CMat, String> {
        let n = rows.len();
        let k = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != k) {
            return Err("ragged matrix rows".into());
        }
        Ok(CMat::from_fn(n, k, |i, j| c(rows[i][j][0], rows[i][j][1])))
    }

    pub fn serialize<S: Serializer>(m: &CMat, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CMat, D::Error> {
        let rows = Vec::<Vec<[f64; 2]>>::deserialize(d)?;
        from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Serde adapter for `Option<CMat>`.
pub mod opt_cmat_pairs {
    use super::cmat_pairs::{from_rows, to_rows};
    use crate::linalg::CMat;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<CMat>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(to_rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<CMat>, D::Error> {
        let rows = Option::<Vec<Vec<[f64; 2]>>>::deserialize(d)?;
        rows.map(|r| from_rows(&r).map_err(serde::de::Error::custom)).transpose()
    }
}

/// Column-oriented numeric table as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl CurveTable {
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let k = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Parse(format!("missing column '{name}'")))?;
        Ok(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if !self.meta.is_empty() {
            let parts: Vec<String> = self.meta.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let _ = writeln!(out, "# {}", parts.join(","));
        }
        let _ = writeln!(out, "{}", self.columns.join(","));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|x| format_f64(*x)).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut meta = BTreeMap::new();
        let mut columns: Option<Vec<String>> = None;
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                for part in rest.split(',') {
                    if let Some((k, v)) = part.split_once('=') {
                        meta.insert(k.trim().to_string(), v.trim().to_string());
                    }
                }
                continue;
            }
            match &columns {
                None => columns = Some(line.split(',').map(|s| s.trim().to_string()).collect()),
                Some(cols) => {
                    let cells: Vec<&str> = line.split(',').collect();
                    if cells.len() != cols.len() {
                        return Err(Error::Parse(format!(
                            "line {}: expected {} fields, found {}",
                            lineno + 1,
                            cols.len(),
                            cells.len()
                        )));
                    }
                    let row = cells
                        .iter()
                        .map(|s| {
                            s.trim().parse::<f64>().map_err(|_| {
                                Error::Parse(format!("line {}: '{}' is not a number", lineno + 1, s.trim()))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    rows.push(row);
                }
            }
        }
        let columns = columns.ok_or_else(|| Error::Parse("missing header row".into()))?;
        Ok(CurveTable { columns, rows, meta })
    }

    /// Writes `<stem>.csv` and `<stem>.json` next to each other.
    pub fn write_pair(&self, stem: &Path) -> Result<()> {
        std::fs::write(stem.with_extension("csv"), self.to_csv())?;
        std::fs::write(stem.with_extension("json"), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Reads a `.csv` or `.json` curve file, chosen by extension.
    pub fn read(path: &Path) -> Result<Self> {
        let text = crate::error::read_text(path)?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))
        } else {
            Self::from_csv(&text)
        };
        parsed.map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn format_f64(x: f64) -> String {
    format!("{x:?}")
}

fn normalization_tag(n: Normalization) -> &'static str {
    match n {
        Normalization::Raw => "raw",
        Normalization::PerEvent => "per_event",
    }
}

pub fn correlation_table(series: &CorrelationSeries) -> CurveTable {
    let mut meta = BTreeMap::new();
    meta.insert("order".into(), series.order.to_string());
    meta.insert("normalization".into(), normalization_tag(series.normalization).into());
    let dims = series.grid.first().map_or(1, |g| g.len());
    let columns = if dims == 1 {
        vec!["tau_ms".to_string(), "value".to_string()]
    } else {
        vec!["x_ms".to_string(), "dx_ms".to_string(), "value".to_string()]
    };
    let rows = series
        .grid
        .iter()
        .zip(&series.values)
        .map(|(g, v)| g.iter().cloned().chain(std::iter::once(*v)).collect())
        .collect();
    CurveTable { columns, rows, meta }
}

pub fn correlation_from_table(t: &CurveTable) -> Result<CorrelationSeries> {
    let normalization = match t.meta.get("normalization").map(String::as_str) {
        Some("per_event") => Normalization::PerEvent,
        _ => Normalization::Raw,
    };
    let values = t.column("value")?;
    if t.columns.iter().any(|c| c == "x_ms") {
        let xs = t.column("x_ms")?;
        let dxs = t.column("dx_ms")?;
        let grid = xs.iter().zip(&dxs).map(|(&x, &dx)| vec![x, dx]).collect();
        Ok(CorrelationSeries { order: 3, grid, values, normalization })
    } else {
        let taus = t.column("tau_ms")?;
        Ok(CorrelationSeries { order: 2, grid: taus.into_iter().map(|x| vec![x]).collect(), values, normalization })
    }
}

pub fn counting_table(series: &CountingSeries) -> CurveTable {
    let mut meta = BTreeMap::new();
    meta.insert("n".into(), series.n.to_string());
    CurveTable {
        columns: vec!["tau_ms".into(), "value".into()],
        rows: series.grid.iter().zip(&series.values).map(|(&t, &v)| vec![t, v]).collect(),
        meta,
    }
}

pub fn counting_from_table(t: &CurveTable) -> Result<CountingSeries> {
    let n = t.meta.get("n").and_then(|s| s.parse().ok()).unwrap_or(0);
    Ok(CountingSeries { n, grid: t.column("tau_ms")?, values: t.column("value")? })
}

pub fn wtd_table(w: &Wtd) -> CurveTable {
    let mut meta = BTreeMap::new();
    meta.insert("c".into(), format_f64(w.c));
    meta.insert("mean_tau".into(), format_f64(w.mean_tau));
    CurveTable {
        columns: vec!["tau_ms".into(), "value".into()],
        rows: w.grid.iter().zip(&w.density).map(|(&t, &v)| vec![t, v]).collect(),
        meta,
    }
}

pub fn wtd_from_table(t: &CurveTable) -> Result<Wtd> {
    let get = |k: &str| -> Result<f64> {
        t.meta
            .get(k)
            .ok_or_else(|| Error::Parse(format!("missing metadata '{k}'")))?
            .parse()
            .map_err(|_| Error::Parse(format!("metadata '{k}' is not a number")))
    };
    Ok(Wtd { grid: t.column("tau_ms")?, density: t.column("value")?, mean_tau: get("mean_tau")?, c: get("c")? })
}

/// Two-column table of an arbitrary sampled function.
pub fn xy_table(x_name: &str, xs: &[f64], ys: &[f64]) -> CurveTable {
    CurveTable {
        columns: vec![x_name.to_string(), "value".into()],
        rows: xs.iter().zip(ys).map(|(&x, &y)| vec![x, y]).collect(),
        meta: BTreeMap::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let w = Wtd { grid: vec![0.0, 0.1, 0.30000000000000004], density: vec![0.0, 1.0 / 3.0, 1e-300], mean_tau: 0.27, c: 12.5 };
        let t = wtd_table(&w);
        let back = wtd_from_table(&CurveTable::from_csv(&t.to_csv()).unwrap()).unwrap();
        assert_eq!(back, w);
        let json = serde_json::to_string(&t).unwrap();
        let back: CurveTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn c3_tables_keep_both_coordinates() {
        let s = CorrelationSeries {
            order: 3,
            grid: vec![vec![0.0, 0.0], vec![0.0, 0.5]],
            values: vec![1.0, 2.0],
            normalization: Normalization::Raw,
        };
        let t = correlation_table(&s);
        assert_eq!(t.columns, ["x_ms", "dx_ms", "value"]);
        assert_eq!(correlation_from_table(&t).unwrap(), s);
    }

    #[test]
    fn malformed_csv_reports_line() {
        let err = CurveTable::from_csv("tau_ms,value\n0.0,1.0\n0.1,abc\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let err = CurveTable::from_csv("tau_ms,value\n0.0\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }
}
