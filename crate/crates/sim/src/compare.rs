use std::io::Write;

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Result, SimError};
use crate::run::{fmt_f, run, RunOutput};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareRow {
    pub t: f64,
    pub max_rank_a: usize,
    pub max_rank_b: usize,
    pub param_count_a: usize,
    pub param_count_b: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareTable {
    pub name_a: String,
    pub name_b: String,
    pub rows: Vec<CompareRow>,
    /// `max_rank_a <= max_rank_b` at the final time.
    pub final_rank_a_le_b: bool,
    /// `param_count_a < param_count_b` at the final time.
    pub final_params_a_lt_b: bool,
}

/// Both configurations must describe the same problem on the same time
/// grid; only the tree (and output paths) may differ.
pub fn check_pair(a: &RunConfig, b: &RunConfig) -> Result<()> {
    if a.h != b.h || a.t_end != b.t_end {
        return Err(SimError::Mismatch(format!(
            "time grids differ (h {} vs {}, t_end {} vs {})",
            a.h, b.h, a.t_end, b.t_end
        )));
    }
    let strip = |c: &RunConfig| RunConfig {
        name: String::new(),
        tree: crate::config::TreeSpec::Balanced,
        csv: None,
        summary: None,
        checkpoint: None,
        ..c.clone()
    };
    if strip(a) != strip(b) {
        return Err(SimError::Mismatch("configurations differ in more than the tree".into()));
    }
    Ok(())
}

pub fn table(a: &RunOutput, b: &RunOutput) -> Result<CompareTable> {
    if a.rows.len() != b.rows.len() || a.rows.iter().zip(&b.rows).any(|(x, y)| x.t != y.t) {
        return Err(SimError::Mismatch("time grids are not aligned".into()));
    }
    let rows: Vec<CompareRow> = a
        .rows
        .iter()
        .zip(&b.rows)
        .map(|(x, y)| CompareRow {
            t: x.t,
            max_rank_a: x.max_rank,
            max_rank_b: y.max_rank,
            param_count_a: x.param_count,
            param_count_b: y.param_count,
        })
        .collect();
    let last = rows.last().unwrap();
    Ok(CompareTable {
        name_a: a.summary.name.clone(),
        name_b: b.summary.name.clone(),
        final_rank_a_le_b: last.max_rank_a <= last.max_rank_b,
        final_params_a_lt_b: last.param_count_a < last.param_count_b,
        rows,
    })
}

pub fn compare_trees(a: &RunConfig, b: &RunConfig) -> Result<(CompareTable, RunOutput, RunOutput)> {
    check_pair(a, b)?;
    let ra = run(a)?;
    let rb = run(b)?;
    Ok((table(&ra, &rb)?, ra, rb))
}

impl CompareTable {
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        let e = |e| SimError::Io { path: "<csv>".into(), source: e };
        writeln!(w, "t,max_rank_a,max_rank_b,param_count_a,param_count_b").map_err(e)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                fmt_f(r.t),
                r.max_rank_a,
                r.max_rank_b,
                r.param_count_a,
                r.param_count_b
            )
            .map_err(e)?;
        }
        Ok(())
    }
}
