//! Series as CSV: header `series_id,t,ch_0,…,ch_{d-1}[,label]`, rows sorted
//! by `(series_id, t)`.

use std::path::Path;

use ndarray::{Array2, Array3};

use super::SeriesBatch;
use crate::{Error, Result};

fn line_error(line: u64, msg: impl Into<String>) -> Error {
    Error::Format { offset: line, msg: format!("line {line}: {}", msg.into()) }
}

pub fn write_series_csv(path: &Path, batch: &SeriesBatch) -> Result<()> {
    let (n, t_len, d) = batch.x.dim();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::input(e.to_string()))?;
    let mut header = vec!["series_id".to_string(), "t".to_string()];
    header.extend((0..d).map(|c| format!("ch_{c}")));
    if batch.step_labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header).map_err(|e| Error::input(e.to_string()))?;
    for i in 0..n {
        for t in 0..t_len {
            let mut rec = vec![i.to_string(), t.to_string()];
            rec.extend((0..d).map(|c| format!("{:?}", batch.x[[i, t, c]])));
            if let Some(l) = &batch.step_labels {
                rec.push(l[[i, t]].to_string());
            }
            w.write_record(&rec).map_err(|e| Error::input(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV written by [`write_series_csv`] (or any file following the
/// same layout). Series ids need not be contiguous but every series must
/// have the same length with `t = 0, 1, …`.
pub fn read_series_csv(path: &Path) -> Result<SeriesBatch> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    let header = r.headers().map_err(|e| line_error(1, e.to_string()))?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 3 || cols[0] != "series_id" || cols[1] != "t" {
        return Err(line_error(1, "header must start with series_id,t"));
    }
    let has_label = cols.last() == Some(&"label");
    let d = cols.len() - 2 - has_label as usize;
    for (c, name) in cols[2..2 + d].iter().enumerate() {
        if *name != format!("ch_{c}") {
            return Err(line_error(1, format!("expected column ch_{c}, found {name}")));
        }
    }
    let mut values: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut lengths: Vec<usize> = Vec::new();
    let mut current: Option<String> = None;
    for (k, rec) in r.records().enumerate() {
        let line = k as u64 + 2;
        let rec = rec.map_err(|e| line_error(line, e.to_string()))?;
        if rec.len() != cols.len() {
            return Err(line_error(line, format!("{} fields, expected {}", rec.len(), cols.len())));
        }
        let id = rec[0].to_string();
        let t: usize = rec[1].parse().map_err(|_| line_error(line, "t is not a non-negative integer"))?;
        if current.as_deref() != Some(id.as_str()) {
            current = Some(id);
            lengths.push(0);
        }
        let len = lengths.last_mut().unwrap();
        if t != *len {
            return Err(line_error(line, format!("expected t = {len}, found {t} (rows must be sorted)")));
        }
        *len += 1;
        for c in 0..d {
            let v: f64 = rec[2 + c].trim().parse().map_err(|_| line_error(line, format!("ch_{c} is not a number")))?;
            if !v.is_finite() {
                return Err(line_error(line, format!("ch_{c} is not finite")));
            }
            values.push(v);
        }
        if has_label {
            labels.push(rec[2 + d].trim().parse().map_err(|_| line_error(line, "label is not an integer"))?);
        }
    }
    let t_len = *lengths.first().ok_or_else(|| Error::input("series file has no rows"))?;
    if let Some(pos) = lengths.iter().position(|&l| l != t_len) {
        return Err(Error::input(format!("series {pos} has {} steps, expected {t_len}", lengths[pos])));
    }
    let n = lengths.len();
    let x = Array3::from_shape_vec((n, t_len, d), values).map_err(|e| Error::dim(e.to_string()))?;
    let step_labels = has_label
        .then(|| Array2::from_shape_vec((n, t_len), labels).map_err(|e| Error::dim(e.to_string())))
        .transpose()?;
    SeriesBatch::new(x, step_labels)
}
