//! CSV and JSON artifacts. Numbers are written with 17 significant digits.

use nalgebra::DMatrix;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Result, VpfpError};
use crate::grid::PhaseGrid;

pub const CONVERGENCE_HEADER: &str = "dt,error_l1";
pub const AP_HEADER: &str = "t,e_ap_global";
pub const FIELDS_HEADER: &str = "t,x,rho,efield";
pub const PHASE_HEADER: &str = "t,x,v,f";
pub const POINTWISE_AP_HEADER: &str = "t,x,eps,e_ap";

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DONE_FILE: &str = "done";

pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Row-oriented CSV writer with a fixed header.
pub struct CsvWriter {
    out: BufWriter<File>,
    columns: usize,
    path: PathBuf,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &str) -> Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{header}")?;
        Ok(CsvWriter {
            out,
            columns: header.split(',').count(),
            path: path.to_path_buf(),
        })
    }

    pub fn row(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.columns {
            return Err(VpfpError::dim("output::csv", self.columns, values.len()));
        }
        let line: Vec<String> = values.iter().map(|&v| fmt_num(v)).collect();
        writeln!(self.out, "{}", line.join(","))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.out.flush()?;
        Ok(self.path)
    }
}

/// Appends `t,x,v,f` rows for a dense tensor.
pub fn write_phase_rows(
    w: &mut CsvWriter,
    t: f64,
    f: &DMatrix<f64>,
    grid: &PhaseGrid,
) -> Result<()> {
    for p in 0..grid.nx {
        for q in 0..grid.nv {
            w.row(&[t, grid.x[p], grid.v[q], f[(p, q)]])?;
        }
    }
    Ok(())
}

pub fn write_field_rows(
    w: &mut CsvWriter,
    t: f64,
    rho: &[f64],
    e: &[f64],
    grid: &PhaseGrid,
) -> Result<()> {
    for p in 0..grid.nx {
        w.row(&[t, grid.x[p], rho[p], e[p]])?;
    }
    Ok(())
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|&v| fmt_num(v)).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| {
                t.trim().parse::<f64>().map_err(|e| {
                    VpfpError::Config(format!("{}: bad number {t:?}: {e}", path.display()))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(VpfpError::Config(format!(
            "{}: ragged rows",
            path.display()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Reads a headered CSV into its header and numeric rows.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .unwrap_or_default()
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let rows = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|e| VpfpError::Config(format!("{}: {e}", path.display())))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((header, rows))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn mark_done(dir: &Path) -> Result<()> {
    fs::write(dir.join(DONE_FILE), b"")?;
    Ok(())
}
