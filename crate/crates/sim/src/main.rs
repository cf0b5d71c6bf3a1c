use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ttn_sim::checks;
use ttn_sim::run::write_csv;
use ttn_sim::{compare_trees, run, Result, RunConfig, SimError};

#[derive(Parser)]
#[command(name = "ttn-sim", version, about = "Rank-adaptive tree tensor network time integration")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate one configured problem; writes CSV/JSON when paths are set.
    Run {
        /// Configuration file (key = value lines).
        config: Option<PathBuf>,
        #[command(flatten)]
        set: Box<Overrides>,
        /// Print the effective configuration and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Run two configurations that differ only in the tree and tabulate
    /// ranks and parameter counts side by side.
    CompareTrees {
        config_a: PathBuf,
        config_b: PathBuf,
        /// Write the aligned table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write the table and verdicts as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run the oracle and property checks at small sizes.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Flags mirroring the configuration keys; applied after the file.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    d: Option<String>,
    #[arg(long)]
    omega: Option<String>,
    #[arg(long)]
    tree: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    h: Option<String>,
    #[arg(long = "t-end")]
    t_end: Option<String>,
    #[arg(long)]
    theta: Option<String>,
    #[arg(long = "rank-cap")]
    rank_cap: Option<String>,
    #[arg(long)]
    ode: Option<String>,
    #[arg(long)]
    substeps: Option<String>,
    #[arg(long)]
    integrator: Option<String>,
    #[arg(long = "root-relative")]
    root_relative: Option<String>,
    #[arg(long)]
    reference: Option<String>,
    #[arg(long)]
    initial: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    shift: Option<String>,
    #[arg(long)]
    csv: Option<String>,
    #[arg(long)]
    summary: Option<String>,
    #[arg(long)]
    checkpoint: Option<String>,
    /// Any other key, as key=value (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    extra: Vec<String>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        let fields = [
            ("name", &self.name),
            ("model", &self.model),
            ("d", &self.d),
            ("omega", &self.omega),
            ("tree", &self.tree),
            ("mode", &self.mode),
            ("h", &self.h),
            ("t_end", &self.t_end),
            ("theta", &self.theta),
            ("rank_cap", &self.rank_cap),
            ("ode", &self.ode),
            ("substeps", &self.substeps),
            ("integrator", &self.integrator),
            ("root_relative", &self.root_relative),
            ("reference", &self.reference),
            ("initial", &self.initial),
            ("seed", &self.seed),
            ("shift", &self.shift),
            ("csv", &self.csv),
            ("summary", &self.summary),
            ("checkpoint", &self.checkpoint),
        ];
        for (k, v) in fields {
            if let Some(v) = v {
                cfg.set(k, v)?;
            }
        }
        for kv in &self.extra {
            let (k, v) = kv.split_once('=').ok_or_else(|| SimError::config("set", format!("expected KEY=VALUE, got '{kv}'")))?;
            cfg.set(k.trim(), v)?;
        }
        Ok(())
    }
}

fn write_json<T: serde::Serialize>(path: &PathBuf, v: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(v)?;
    std::fs::write(path, s + "\n").map_err(|e| SimError::Io { path: path.clone(), source: e })
}

fn verify(seed: u64) -> bool {
    let mut ok = true;
    let mut line = |name: &str, pass: bool, detail: String| {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        ok &= pass;
    };
    let t = checks::truncation_bound(40, seed, &[1e-2, 1e-4, 1e-8]);
    line("truncation bound", t.violations == 0, format!("{} checks, worst error/bound {:.3}", t.checks, t.worst_ratio));
    let o = checks::oracle_equivalence(12, seed, 1024);
    line(
        "dense oracle step",
        o.max_rel_augmented <= 1e-10 && o.max_rel_truncated <= 1e-10,
        format!("{} cases, rel diff {:.2e} / {:.2e}", o.cases, o.max_rel_augmented, o.max_rel_truncated),
    );
    line("augmented start", o.max_start_residual <= 1e-11, format!("{} nodes, max {:.2e}", o.nodes, o.max_start_residual));
    let e = checks::exactness("((1,2),(3,4))", 4, 2, 0.05, seed + 21);
    line("exactness", e.error <= 1e-8 && e.ranks_kept, format!("error {:.2e}", e.error));
    let tree = ttn_core::Tree::balanced_binary(2, 4).expect("tree");
    let g = checks::gradient_dissipation(4, 50, 0.02, 0.0, &tree);
    line("gradient dissipation", g.max_increase <= 0.0, format!("max increase {:.2e}", g.max_increase));
    ok
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res: Result<bool> = (|| match cli.cmd {
        Cmd::Run { config, set, print_config } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            set.apply(&mut cfg)?;
            cfg.validate()?;
            if print_config {
                print!("{cfg}");
                return Ok(true);
            }
            let out = run(&cfg)?;
            if cfg.csv.is_none() {
                write_csv(&out.rows, &mut std::io::stdout().lock())?;
            }
            eprintln!("{}", serde_json::to_string_pretty(&out.summary)?);
            Ok(true)
        }
        Cmd::CompareTrees { config_a, config_b, csv, json } => {
            let a = RunConfig::load(&config_a)?;
            let b = RunConfig::load(&config_b)?;
            let (table, _, _) = compare_trees(&a, &b)?;
            match csv {
                Some(p) => {
                    let mut f = std::fs::File::create(&p).map_err(|e| SimError::Io { path: p.clone(), source: e })?;
                    table.write_csv(&mut f)?;
                }
                None => table.write_csv(&mut std::io::stdout().lock())?,
            }
            if let Some(p) = json {
                write_json(&p, &table)?;
            }
            eprintln!(
                "final max rank {} vs {}; parameters {} vs {}",
                table.rows.last().unwrap().max_rank_a,
                table.rows.last().unwrap().max_rank_b,
                table.rows.last().unwrap().param_count_a,
                table.rows.last().unwrap().param_count_b
            );
            Ok(true)
        }
        Cmd::Verify { seed } => Ok(verify(seed)),
    })();
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
