use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use ttn_core::integrator::{integrate, Observable, StepReport};
use ttn_core::spin::{all_up_state, exact_reference, magnetization_op};
use ttn_core::ttn::DENSE_CAP;
use ttn_core::{OdeConfig, RhsKind, StepConfig, TreeRank, Ttn64, C};

use crate::config::{Flow, Initial, Reference, RunConfig};
use crate::error::{Result, SimError};

/// One CSV row per state, including the initial one.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Row {
    pub t: f64,
    pub norm: f64,
    pub energy: f64,
    pub magnetization: f64,
    pub max_rank: usize,
    pub param_count: usize,
    pub truncation_tail_sum: f64,
    pub certified_bound_flag: bool,
    pub reference_error: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FinalValues {
    pub t: f64,
    pub norm: f64,
    pub energy: f64,
    pub magnetization: f64,
    pub max_rank: usize,
    pub param_count: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub name: String,
    pub config: String,
    pub steps: usize,
    pub wall_time_s: f64,
    #[serde(rename = "final")]
    pub last: FinalValues,
    pub max_rank_history: Vec<usize>,
    pub max_norm_drift: f64,
    pub max_energy_drift: f64,
    pub max_reference_error: Option<f64>,
    pub all_certified: bool,
    pub rank_bound_ok: bool,
    /// Shift added to the Hamiltonian in gradient mode.
    pub gradient_shift: Option<f64>,
}

pub struct RunOutput {
    pub rows: Vec<Row>,
    pub reports: Vec<StepReport>,
    pub summary: Summary,
    pub state: Ttn64,
}

pub fn step_config(cfg: &RunConfig) -> Result<StepConfig> {
    Ok(StepConfig {
        h: cfg.h,
        theta: cfg.theta,
        rank_cap: cfg.rank_cap,
        ode: OdeConfig::new(cfg.ode, cfg.substeps).map_err(|e| SimError::config("substeps", e.to_string()))?,
        mode: cfg.integrator,
        root_relative: cfg.root_relative,
        reorthonormalize: cfg.reorthonormalize,
    })
}

/// The right-hand side and the energy functional it is tied to.
pub fn rhs(cfg: &RunConfig) -> Result<RhsKind<f64>> {
    let h = cfg.hamiltonian()?;
    Ok(match cfg.mode {
        Flow::Schrodinger => RhsKind::Schrodinger(h),
        Flow::Gradient => RhsKind::Gradient(h.shifted(C::new(cfg.gradient_shift(), 0.0))),
    })
}

pub fn initial_state(cfg: &RunConfig) -> Result<Ttn64> {
    let tree = cfg.build_tree()?;
    Ok(match cfg.initial {
        Initial::AllUp => all_up_state(&tree)?,
        Initial::Random { rank } => Ttn64::random(&tree, &TreeRank::uniform(&tree, rank), cfg.seed)?,
    })
}

/// Runs the configured experiment; `on_step` sees every state.
pub fn run_with(cfg: &RunConfig, mut on_step: impl FnMut(&Ttn64, &StepReport) -> Result<()>) -> Result<RunOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let y0 = initial_state(cfg)?;
    let rhs = rhs(cfg)?;
    let scfg = step_config(cfg)?;
    let d = cfg.model.d();
    let obs = [Observable { name: "magnetization".into(), op: magnetization_op(d)? }];

    let reference = match cfg.reference {
        Reference::ExactDiag => {
            let psi0 = y0.to_full(DENSE_CAP)?;
            Some(exact_reference(&cfg.ising_spec().unwrap(), &psi0, cfg.h, cfg.t_end)?)
        }
        Reference::None => None,
    };

    let mut hook_err = None;
    let (state, reports) = integrate(&y0, &rhs, 0.0, cfg.t_end, &scfg, &obs, |y, r| {
        if let Err(e) = on_step(y, r) {
            hook_err = Some(e);
            return Err(ttn_core::TtnError::Io("step hook failed".into()));
        }
        Ok(())
    })
    .map_err(|e| hook_err.take().unwrap_or(SimError::Numerical(e)))?;

    let rows: Vec<Row> = reports
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let m = r.observables[0].1;
            Row {
                t: r.t,
                norm: r.norm,
                energy: r.energy.unwrap_or(f64::NAN),
                magnetization: m,
                max_rank: r.max_rank,
                param_count: r.param_count,
                truncation_tail_sum: r.truncation.tail_sum(),
                certified_bound_flag: r.truncation.certified(),
                reference_error: reference.as_ref().map(|x| (m - x.magnetization[k]).abs()),
            }
        })
        .collect();

    let e0 = rows[0].energy;
    let n0 = rows[0].norm;
    let last = rows.last().unwrap();
    let summary = Summary {
        name: cfg.name.clone(),
        config: cfg.to_string(),
        steps: rows.len() - 1,
        wall_time_s: start.elapsed().as_secs_f64(),
        last: FinalValues {
            t: last.t,
            norm: last.norm,
            energy: last.energy,
            magnetization: last.magnetization,
            max_rank: last.max_rank,
            param_count: last.param_count,
        },
        max_rank_history: rows.iter().map(|r| r.max_rank).collect(),
        max_norm_drift: rows.iter().map(|r| (r.norm - n0).abs()).fold(0.0, f64::max),
        max_energy_drift: rows.iter().map(|r| (r.energy - e0).abs()).fold(0.0, f64::max),
        max_reference_error: reference.as_ref().map(|_| rows.iter().filter_map(|r| r.reference_error).fold(0.0, f64::max)),
        all_certified: rows.iter().all(|r| r.certified_bound_flag),
        rank_bound_ok: reports.iter().all(|r| r.rank_bound_ok),
        gradient_shift: (cfg.mode == Flow::Gradient).then(|| cfg.gradient_shift()),
    };
    Ok(RunOutput { rows, reports, summary, state })
}

/// Runs and writes the configured CSV, summary and checkpoint files.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    let out = run_with(cfg, |_, _| Ok(()))?;
    if let Some(p) = &cfg.csv {
        write_file(p, |w| write_csv(&out.rows, w))?;
    }
    if let Some(p) = &cfg.summary {
        write_file(p, |w| {
            serde_json::to_writer_pretty(&mut *w, &out.summary)?;
            writeln!(w).map_err(|e| io(p, e))
        })?;
    }
    if let Some(p) = &cfg.checkpoint {
        write_file(p, |w| Ok(out.state.write_checkpoint(w)?))?;
    }
    Ok(out)
}

pub(crate) fn io(p: &Path, e: std::io::Error) -> SimError {
    SimError::Io { path: p.into(), source: e }
}

pub(crate) fn write_file(p: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(p).map_err(|e| io(p, e))?);
    f(&mut w)?;
    w.flush().map_err(|e| io(p, e))
}

pub fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_csv(rows: &[Row], w: &mut impl Write) -> Result<()> {
    let with_ref = rows.first().is_some_and(|r| r.reference_error.is_some());
    let mut head = "t,norm,energy,magnetization,max_rank,param_count,truncation_tail_sum,certified_bound_flag".to_string();
    if with_ref {
        head.push_str(",reference_error");
    }
    let e = |e| SimError::Io { path: "<csv>".into(), source: e };
    writeln!(w, "{head}").map_err(e)?;
    for r in rows {
        let mut line = format!(
            "{},{},{},{},{},{},{},{}",
            fmt_f(r.t),
            fmt_f(r.norm),
            fmt_f(r.energy),
            fmt_f(r.magnetization),
            r.max_rank,
            r.param_count,
            fmt_f(r.truncation_tail_sum),
            u8::from(r.certified_bound_flag)
        );
        if let Some(x) = r.reference_error {
            line.push(',');
            line.push_str(&fmt_f(x));
        }
        writeln!(w, "{line}").map_err(e)?;
    }
    Ok(())
}
