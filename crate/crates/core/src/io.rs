//! Plain-text output formats. Every file starts with a schema line
//! `# <kind> v<version>`; readers reject other kinds and versions.

use std::io::{BufRead, Write};

use crate::dynamics::Trajectory;
use crate::error::{QcsbError, Result};
use crate::glass::RsGrid;

pub const SCHEMA_VERSION: u32 = 1;
pub const TRAJECTORY_KIND: &str = "qcsb-trajectory";
pub const RS_GRID_KIND: &str = "qcsb-rsgrid";
pub const BOUNDARY_KIND: &str = "qcsb-boundary";

/// Scientific notation with 15 significant digits.
pub fn fmt15(v: f64) -> String {
    format!("{v:.14e}")
}

/// Scientific notation with 9 significant digits.
pub fn fmt9(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn schema_line(kind: &str) -> String {
    format!("# {kind} v{SCHEMA_VERSION}")
}

fn check_schema(line: &str, kind: &str) -> Result<()> {
    let expected = schema_line(kind);
    if line.trim_end() != expected {
        return Err(QcsbError::Schema {
            expected,
            found: line.trim_end().to_string(),
        });
    }
    Ok(())
}

fn io_err(e: std::io::Error) -> QcsbError {
    QcsbError::Parse(e.to_string())
}

pub fn trajectory_columns(spin_count: usize) -> Vec<String> {
    let mut cols: Vec<String> = ["t", "x", "p", "x2", "impurity", "S_tls", "dS_tls"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend((0..=spin_count).map(|k| format!("P_{k}")));
    cols
}

pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{}", schema_line(TRAJECTORY_KIND))?;
    writeln!(w, "{}", trajectory_columns(traj.spin_count).join(","))?;
    for (t, r) in traj.times.iter().zip(&traj.records) {
        let mut fields = vec![
            fmt15(*t),
            fmt15(r.x),
            fmt15(r.p),
            fmt15(r.x2),
            fmt15(r.impurity),
            fmt15(r.s_tls),
            fmt15(r.ds_tls),
        ];
        fields.extend(r.populations.iter().map(|&v| fmt15(v)));
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Columns and rows of a trajectory CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TrajectoryTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

pub fn read_trajectory_csv<R: BufRead>(r: R) -> Result<TrajectoryTable> {
    let mut lines = r.lines();
    let mut next = || lines.next().transpose().map_err(io_err);
    let schema = next()?.ok_or_else(|| QcsbError::Parse("empty file".into()))?;
    check_schema(&schema, TRAJECTORY_KIND)?;
    let header = next()?.ok_or_else(|| QcsbError::Parse("missing header".into()))?;
    let columns: Vec<String> = header.split(',').map(|s| s.to_string()).collect();
    let spins = columns
        .len()
        .checked_sub(8)
        .ok_or_else(|| QcsbError::Parse("too few columns".into()))?;
    if columns != trajectory_columns(spins) {
        return Err(QcsbError::Parse(format!("unexpected header: {header}")));
    }
    let mut rows = Vec::new();
    let mut lineno = 2;
    while let Some(line) = next()? {
        lineno += 1;
        let row = line
            .split(',')
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| QcsbError::Parse(format!("line {lineno}: {e}")))?;
        if row.len() != columns.len() {
            return Err(QcsbError::Parse(format!(
                "line {lineno}: {} fields, expected {}",
                row.len(),
                columns.len()
            )));
        }
        rows.push(row);
    }
    Ok(TrajectoryTable { columns, rows })
}

pub fn write_rs_grid_csv<W: Write>(grid: &RsGrid, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{}", schema_line(RS_GRID_KIND))?;
    writeln!(w, "T_K,omega_p_rad_s,R_s,flag")?;
    for c in &grid.cells {
        writeln!(
            w,
            "{},{},{},{}",
            fmt9(c.temp),
            fmt9(c.omega_p),
            fmt9(c.r_s),
            c.status.label()
        )?;
    }
    Ok(())
}

pub fn write_boundary_csv<W: Write>(grid: &RsGrid, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{}", schema_line(BOUNDARY_KIND))?;
    writeln!(w, "T_K,omega_p_rad_s")?;
    for &(t, wp) in &grid.boundary {
        writeln!(w, "{},{}", fmt9(t), fmt9(wp))?;
    }
    Ok(())
}
