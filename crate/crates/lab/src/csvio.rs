//! Point-set CSV files: header `x0,..,x{D-1}` (plus `origin` for reference
//! sets), one row per point, numbers in shortest round-trip form.

use std::path::Path;

use deskdiff_core::{Embedder, Origin, ReferenceStore};

use crate::error::{LabError, Result};

fn header(dim: usize) -> Vec<String> {
    (0..dim).map(|i| format!("x{i}")).collect()
}

fn fmt_err(path: &Path, e: impl std::fmt::Display) -> LabError {
    LabError::Format { path: path.to_path_buf(), message: e.to_string() }
}

fn csv_err(path: &Path, e: csv::Error) -> LabError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => LabError::io(path, io),
            other => fmt_err(path, format!("{other:?}")),
        }
    } else {
        fmt_err(path, e)
    }
}

pub fn points_to_string(points: &[Vec<f64>], origins: Option<&[Origin]>) -> String {
    let dim = points.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = header(dim);
    if origins.is_some() {
        head.push("origin".into());
    }
    w.write_record(&head).expect("in-memory write");
    for (i, p) in points.iter().enumerate() {
        let mut rec: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
        if let Some(o) = origins {
            rec.push(o[i].as_str().into());
        }
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

pub fn write_points(path: &Path, points: &[Vec<f64>]) -> Result<()> {
    std::fs::write(path, points_to_string(points, None)).map_err(|e| LabError::io(path, e))
}

pub fn write_store(path: &Path, store: &ReferenceStore) -> Result<()> {
    let origins: Vec<Origin> = store.snapshot().iter().map(|r| r.origin).collect();
    std::fs::write(path, points_to_string(&store.points(), Some(&origins))).map_err(|e| LabError::io(path, e))
}

/// Points of a CSV file and, when the file has one, its `origin` column.
pub type PointRows = (Vec<Vec<f64>>, Option<Vec<Origin>>);

/// Reads the `x*` columns of a point CSV, with the `origin` column when present.
pub fn read_points(path: &Path) -> Result<PointRows> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let head = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let mut coord_cols: Vec<(usize, usize)> = Vec::new();
    let mut origin_col = None;
    for (i, h) in head.iter().enumerate() {
        if h == "origin" {
            origin_col = Some(i);
        } else if let Some(n) = h.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
            coord_cols.push((n, i));
        }
    }
    coord_cols.sort_unstable();
    if coord_cols.is_empty() || coord_cols.iter().enumerate().any(|(k, (n, _))| k != *n) {
        return Err(fmt_err(path, "header must name columns x0..x{D-1}"));
    }
    let mut points = Vec::new();
    let mut origins = origin_col.map(|_| Vec::new());
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let p = coord_cols
            .iter()
            .map(|(_, c)| {
                rec.get(*c)
                    .ok_or_else(|| fmt_err(path, format!("row {} is short", row + 1)))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| fmt_err(path, format!("row {}: {e}", row + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if !p.iter().all(|v| v.is_finite()) {
            return Err(fmt_err(path, format!("row {}: non-finite coordinate", row + 1)));
        }
        if let (Some(c), Some(o)) = (origin_col, origins.as_mut()) {
            let s = rec.get(c).unwrap_or("").trim();
            o.push(s.parse::<Origin>().map_err(|e| fmt_err(path, format!("row {}: {e}", row + 1)))?);
        }
        points.push(p);
    }
    Ok((points, origins))
}

/// Rebuilds a reference store from CSV, recomputing embeddings with `embedder`.
pub fn load_store(path: &Path, embedder: Embedder) -> Result<ReferenceStore> {
    let (points, origins) = read_points(path)?;
    let mut store = ReferenceStore::new(embedder);
    match origins {
        Some(o) => {
            for (p, origin) in points.iter().zip(o) {
                store.add_batch(std::slice::from_ref(p), origin)?;
            }
        }
        None => {
            store.add_batch(&points, Origin::Original)?;
        }
    }
    Ok(store)
}
