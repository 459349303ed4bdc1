//! Small file formats owned by the command line: spectra tables, ROI lists
//! and JSON reports.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Spectra as stored in CSV: a header row of wavenumbers (or sample
/// indices) followed by one spectrum per row.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectraTable {
    pub axis: Vec<f64>,
    /// `(rows, N_λ)`.
    pub values: Array2<f64>,
}

impl SpectraTable {
    /// Header falls back to sample indices when no wavenumbers are known.
    pub fn new(values: Array2<f64>, wavenumbers: Option<&[f64]>) -> Result<Self> {
        let n = values.ncols();
        let axis = match wavenumbers {
            Some(w) if w.len() == n => w.to_vec(),
            Some(w) => bail!("{} wavenumbers for {n} spectral samples", w.len()),
            None => (0..n).map(|i| i as f64).collect(),
        };
        Ok(Self { axis, values })
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.rows().into_iter().map(|r| r.to_vec()).collect()
    }
}

pub fn read_spectra(path: &Path) -> Result<SpectraTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let parse = |field: &str, what: &str| -> Result<f64> {
        field
            .parse::<f64>()
            .with_context(|| format!("{}: bad {what} value {field:?}", path.display()))
    };
    let axis: Vec<f64> = reader
        .headers()?
        .iter()
        .map(|h| parse(h, "header"))
        .collect::<Result<_>>()?;
    let mut data = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.with_context(|| format!("cannot read {}", path.display()))?;
        if record.len() != axis.len() {
            bail!(
                "{}: row {} has {} columns, header has {}",
                path.display(),
                rows + 1,
                record.len(),
                axis.len()
            );
        }
        for field in record.iter() {
            let v = parse(field, "sample")?;
            if !v.is_finite() {
                bail!("{}: non-finite sample in row {}", path.display(), rows + 1);
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 || axis.is_empty() {
        bail!("{}: no spectra", path.display());
    }
    Ok(SpectraTable {
        values: Array2::from_shape_vec((rows, axis.len()), data)?,
        axis,
    })
}

pub fn write_spectra(path: &Path, table: &SpectraTable) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(table.axis.iter().map(|v| v.to_string()))?;
    for row in table.values.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Two-column `x,y` curve with a named header.
pub fn write_curve(path: &Path, header: [&str; 2], points: &[(f64, f64)]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(header)?;
    for (a, b) in points {
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Signal and background pixel lists, each pixel as `[x, y]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roi {
    pub signal: Vec<(usize, usize)>,
    pub background: Vec<(usize, usize)>,
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn spectra_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let t = SpectraTable::new(array![[1.0, 2.5, -3.0], [0.0, 1e-9, 7.0]], Some(&[1000.0, 1010.0, 1020.5])).unwrap();
        write_spectra(&p, &t).unwrap();
        assert_eq!(read_spectra(&p).unwrap(), t);
    }

    #[test]
    fn ragged_and_empty_tables_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "0,1,2\n1,2\n").unwrap();
        assert!(read_spectra(&p).is_err());
        fs::write(&p, "0,1,2\n").unwrap();
        assert!(read_spectra(&p).is_err());
        fs::write(&p, "0,1\n1,x\n").unwrap();
        assert!(read_spectra(&p).is_err());
    }
}
