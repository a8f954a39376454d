//! Tabular output for trajectories and training histories, plus a column
//! diff used to compare runs.
//!
//! Numbers are written with 17 significant digits so that files round-trip
//! exactly.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bracket::{alignment, DoubleBracketTrajectory, OrbitState};
use crate::error::{Error, Result};
use crate::learn::HistoryRow;
use crate::matlie::{Matrix, SkewMatrix};
use crate::ode::Trajectory;
use crate::rb_discrete::{DiscreteRBState, MVState};
use crate::rb_smooth::{RBState, SRBState};

/// A rectangular table with named columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Formats `v` with 17 significant digits.
pub fn format_number(v: f64) -> String {
    format!("{v:.16e}")
}

impl Table {
    pub fn new(columns: Vec<String>) -> Self {
        Table {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width does not match header");
        self.rows.push(row);
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{}", format_number(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))?;
        let columns: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let mut table = Table::new(columns);
        for (lineno, line) in lines {
            let row = line
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("line {}: {t:?}: {e}", lineno + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            if row.len() != table.columns.len() {
                return Err(Error::Parse(format!(
                    "line {}: expected {} fields, found {}",
                    lineno + 1,
                    table.columns.len(),
                    row.len()
                )));
            }
            table.rows.push(row);
        }
        Ok(table)
    }
}

fn matrix_columns(prefix: &str, n: usize) -> Vec<String> {
    (0..n)
        .flat_map(|i| (0..n).map(move |j| format!("{prefix}_{i}_{j}")))
        .collect()
}

fn header(index: &str, blocks: &[&str], n: usize) -> Vec<String> {
    let mut cols = vec![index.to_string()];
    for b in blocks {
        cols.extend(matrix_columns(b, n));
    }
    cols
}

fn row(index: f64, blocks: &[&Matrix]) -> Vec<f64> {
    let mut r = vec![index];
    for b in blocks {
        r.extend(b.to_row_major());
    }
    r
}

/// Columns `t, Q_i_j, M_i_j`.
pub fn rb_table(traj: &Trajectory<RBState>) -> Table {
    let n = traj.states.first().map_or(0, |s| s.q.dim());
    let mut t = Table::new(header("t", &["Q", "M"], n));
    for (time, s) in traj.times.iter().zip(&traj.states) {
        t.push(row(*time, &[s.q.as_matrix(), &s.m.to_matrix()]));
    }
    t
}

/// Columns `t, Q_i_j, P_i_j`.
pub fn srb_table(traj: &Trajectory<SRBState>) -> Table {
    let n = traj.states.first().map_or(0, |s| s.q.dim());
    let mut t = Table::new(header("t", &["Q", "P"], n));
    for (time, s) in traj.times.iter().zip(&traj.states) {
        t.push(row(*time, &[s.q.as_matrix(), s.p.as_matrix()]));
    }
    t
}

/// Columns `k, Q_i_j, P_i_j`.
pub fn sdrb_table(seq: &[DiscreteRBState]) -> Table {
    let n = seq.first().map_or(0, |s| s.q.dim());
    let mut t = Table::new(header("k", &["Q", "P"], n));
    for s in seq {
        t.push(row(s.k as f64, &[s.q.as_matrix(), s.p.as_matrix()]));
    }
    t
}

/// Columns `k, Q_i_j, M_i_j`.
pub fn mv_table(seq: &[MVState]) -> Table {
    let n = seq.first().map_or(0, |s| s.q.dim());
    let mut t = Table::new(header("k", &["Q", "M"], n));
    for s in seq {
        t.push(row(s.k as f64, &[s.q.as_matrix(), &s.m.to_matrix()]));
    }
    t
}

fn invariant_columns(cols: &mut Vec<String>) {
    cols.extend(["killing_xn", "tr_xn", "comm_norm"].map(String::from));
}

fn invariant_values(x: &SkewMatrix, n_mat: &SkewMatrix) -> [f64; 3] {
    [x.killing(n_mat), alignment(x, n_mat), x.bracket(n_mat).frobenius_norm()]
}

/// Columns `t, x_i_j, p_i_j` and the invariants `⟨x,n⟩`, `tr(xn)` and
/// `‖[x,n]‖_F`.
pub fn orbit_table(traj: &Trajectory<OrbitState>, n_mat: &SkewMatrix) -> Table {
    let n = n_mat.dim();
    let mut cols = header("t", &["x", "p"], n);
    invariant_columns(&mut cols);
    let mut t = Table::new(cols);
    for (time, s) in traj.times.iter().zip(&traj.states) {
        let mut r = row(*time, &[&s.x.to_matrix(), &s.p.to_matrix()]);
        r.extend(invariant_values(&s.x, n_mat));
        t.push(r);
    }
    t
}

/// Columns `t, x_i_j` and the invariants, for the double bracket flow.
pub fn double_bracket_table(db: &DoubleBracketTrajectory, n_mat: &SkewMatrix) -> Table {
    let n = n_mat.dim();
    let mut cols = header("t", &["x"], n);
    invariant_columns(&mut cols);
    let mut t = Table::new(cols);
    for (time, x) in db.trajectory.times.iter().zip(&db.trajectory.states) {
        let mut r = row(*time, &[&x.to_matrix()]);
        r.extend(invariant_values(x, n_mat));
        t.push(r);
    }
    t
}

/// Columns `iteration, cost, grad_norm, step_size`.
pub fn history_table(history: &[HistoryRow]) -> Table {
    let mut t = Table::new(
        ["iteration", "cost", "grad_norm", "step_size"]
            .map(String::from)
            .to_vec(),
    );
    for h in history {
        t.push(vec![h.iteration as f64, h.cost, h.grad_norm, h.step_size]);
    }
    t
}

/// JSON form of a rigid-body trajectory. Matrices are row-major.
#[allow(non_snake_case)]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: Vec<f64>,
    pub Q: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub M: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub P: Option<Vec<Vec<f64>>>,
}

impl TrajectoryRecord {
    /// Rebuilds the record from a table written by [`rb_table`],
    /// [`srb_table`], [`sdrb_table`] or [`mv_table`].
    pub fn from_table(table: &Table) -> Self {
        let pick = |prefix: &str| -> Option<Vec<Vec<f64>>> {
            let idx: Vec<usize> = table
                .columns
                .iter()
                .enumerate()
                .filter(|(_, c)| c.starts_with(&format!("{prefix}_")))
                .map(|(i, _)| i)
                .collect();
            (!idx.is_empty()).then(|| table.rows.iter().map(|r| idx.iter().map(|&i| r[i]).collect()).collect())
        };
        TrajectoryRecord {
            t: table.rows.iter().map(|r| r[0]).collect(),
            Q: pick("Q").unwrap_or_default(),
            M: pick("M"),
            P: pick("P"),
        }
    }
}

/// Deviation statistics for one column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnDiff {
    pub column: String,
    pub max_abs: f64,
    /// `max |a − b| / max(|a|, |b|)`, with `0/0` counted as zero.
    pub max_rel: f64,
}

/// Compares two tables with identical headers and row counts.
pub fn compare_tables(a: &Table, b: &Table) -> Result<Vec<ColumnDiff>> {
    if a.columns != b.columns {
        return Err(Error::Precondition(format!(
            "schema mismatch: [{}] vs [{}]",
            a.columns.join(","),
            b.columns.join(",")
        )));
    }
    if a.rows.len() != b.rows.len() {
        return Err(Error::Precondition(format!(
            "row count mismatch: {} vs {}",
            a.rows.len(),
            b.rows.len()
        )));
    }
    Ok(a.columns
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let (mut max_abs, mut max_rel) = (0.0f64, 0.0f64);
            for (ra, rb) in a.rows.iter().zip(&b.rows) {
                let d = (ra[i] - rb[i]).abs();
                let scale = ra[i].abs().max(rb[i].abs());
                max_abs = max_abs.max(d);
                if scale > 0.0 {
                    max_rel = max_rel.max(d / scale);
                }
            }
            ColumnDiff {
                column: name.clone(),
                max_abs,
                max_rel,
            }
        })
        .collect())
}
