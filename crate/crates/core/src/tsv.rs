//! Label x label matrices as TSV: a header row of label names, then one
//! row per label. Values use the shortest round-tripping decimal form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::corpus::LabelSet;
use crate::error::{Error, Result};

pub fn render_matrix(labels: &LabelSet, values: &[f64]) -> String {
    let n = labels.len();
    assert_eq!(values.len(), n * n);
    let mut out = String::from("label");
    for name in labels.names() {
        out.push('\t');
        out.push_str(name);
    }
    out.push('\n');
    for (t, name) in labels.names().iter().enumerate() {
        out.push_str(name);
        for v in &values[t * n..(t + 1) * n] {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: &Path, labels: &LabelSet, values: &[f64]) -> Result<()> {
    fs::write(path, render_matrix(labels, values)).map_err(|e| Error::io(path, e))
}

/// Read a matrix written by [`write_matrix`], reordering it to `labels`.
pub fn read_matrix(path: &Path, labels: &LabelSet) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty matrix file"))?;
    let cols: Vec<usize> = header
        .split('\t')
        .skip(1)
        .map(|name| {
            labels
                .index(name)
                .ok_or_else(|| Error::validation(format!("{}: unknown label {name:?}", path.display())))
        })
        .collect::<Result<_>>()?;
    let n = labels.len();
    if cols.len() != n {
        return Err(Error::validation(format!(
            "{}: matrix has {} columns, label set has {n}",
            path.display(),
            cols.len()
        )));
    }
    let mut values = vec![0.0; n * n];
    let mut rows_seen = 0;
    for (i, line) in lines {
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != n + 1 {
            return Err(Error::parse(path, i + 1, "wrong number of cells"));
        }
        let t = labels
            .index(cells[0])
            .ok_or_else(|| Error::parse(path, i + 1, format!("unknown label {:?}", cells[0])))?;
        for (k, cell) in cells[1..].iter().enumerate() {
            values[t * n + cols[k]] = cell
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("bad number {cell:?}")))?;
        }
        rows_seen += 1;
    }
    if rows_seen != n {
        return Err(Error::validation(format!("{}: expected {n} rows", path.display())));
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_is_exact() {
        let labels = LabelSet::new(["A", "B"]).unwrap();
        let values = vec![0.1 + 0.2, 1.0 / 3.0, 0.0, 1e-300];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        write_matrix(&path, &labels, &values).unwrap();
        assert_eq!(read_matrix(&path, &labels).unwrap(), values);
    }
}
