//! Run configuration: flat `key = value` lines, `#` comments, tree
//! literals as nested parentheses.
//!
//! ```text
//! model = ising
//! d = 10
//! omega = 1
//! tree = balanced          # or tt, or ((1,2),(3,4))
//! mode = schrodinger       # or gradient
//! h = 0.01
//! t_end = 5
//! theta = 1e-8
//! ```
//!
//! Custom Hamiltonians use `model = custom` followed by one line per term,
//! `term = <coeff> : <site>=<op> ...` with `op` one of `x`, `y`, `z`, `i`.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ttn_core::integrator::step_count;
use ttn_core::spin::{pauli_x, pauli_z, IsingSpec, MAX_REFERENCE_SITES};
use ttn_core::{IntegratorMode, KroneckerSumOp, Matrix64, OdeMethod, Tree, C};

use crate::error::{Result, SimError};

#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub coeff: f64,
    pub sites: Vec<(usize, char)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Ising { d: usize, omega: f64 },
    Custom { d: usize, terms: Vec<Term> },
}

impl Model {
    pub fn d(&self) -> usize {
        match self {
            Model::Ising { d, .. } | Model::Custom { d, .. } => *d,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TreeSpec {
    Balanced,
    Tt,
    Literal(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flow {
    Schrodinger,
    Gradient,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reference {
    None,
    ExactDiag,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Initial {
    AllUp,
    Random { rank: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub model: Model,
    pub tree: TreeSpec,
    pub mode: Flow,
    pub h: f64,
    pub t_end: f64,
    pub theta: f64,
    pub rank_cap: usize,
    pub ode: OdeMethod,
    pub substeps: usize,
    pub integrator: IntegratorMode,
    pub root_relative: bool,
    pub reorthonormalize: bool,
    pub reference: Reference,
    pub initial: Initial,
    pub seed: u64,
    /// Gradient-mode shift; `None` picks the model's default.
    pub shift: Option<f64>,
    pub csv: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            model: Model::Ising { d: 10, omega: 1.0 },
            tree: TreeSpec::Balanced,
            mode: Flow::Schrodinger,
            h: 0.01,
            t_end: 5.0,
            theta: 1e-8,
            rank_cap: 0,
            ode: OdeMethod::Rk4,
            substeps: 1,
            integrator: IntegratorMode::Adaptive,
            root_relative: false,
            reorthonormalize: true,
            reference: Reference::None,
            initial: Initial::AllUp,
            seed: 0,
            shift: None,
            csv: None,
            summary: None,
            checkpoint: None,
        }
    }
}

fn num<T: FromStr>(field: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| SimError::config(field, format!("cannot parse '{v}'")))
}

fn finite(field: &str, v: &str) -> Result<f64> {
    let x: f64 = num(field, v)?;
    if !x.is_finite() {
        return Err(SimError::config(field, format!("{v} is not finite")));
    }
    Ok(x)
}

fn boolean(field: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(SimError::config(field, format!("expected true or false, got '{v}'"))),
    }
}

fn parse_term(v: &str) -> Result<Term> {
    let (c, rest) = v
        .split_once(':')
        .ok_or_else(|| SimError::config("term", "expected '<coeff> : <site>=<op> ...'"))?;
    let coeff = finite("term", c.trim())?;
    let mut sites = Vec::new();
    for tok in rest.split_whitespace() {
        let (s, o) = tok.split_once('=').ok_or_else(|| SimError::config("term", format!("bad factor '{tok}'")))?;
        let site: usize = num("term", s)?;
        let op = match o {
            "x" | "y" | "z" | "i" => o.chars().next().unwrap(),
            _ => return Err(SimError::config("term", format!("unknown operator '{o}' (x, y, z, i)"))),
        };
        sites.push((site, op));
    }
    Ok(Term { coeff, sites })
}

impl RunConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key {
            "name" => self.name = v.to_string(),
            "model" => {
                let d = self.model.d();
                self.model = match v {
                    "ising" => Model::Ising { d, omega: 1.0 },
                    "custom" => Model::Custom { d, terms: Vec::new() },
                    _ => return Err(SimError::config(key, format!("unknown model '{v}' (ising, custom)"))),
                }
            }
            "d" => {
                let n = num(key, v)?;
                match &mut self.model {
                    Model::Ising { d, .. } | Model::Custom { d, .. } => *d = n,
                }
            }
            "omega" => match &mut self.model {
                Model::Ising { omega, .. } => *omega = finite(key, v)?,
                Model::Custom { .. } => return Err(SimError::config(key, "only valid for model = ising")),
            },
            "term" => match &mut self.model {
                Model::Custom { terms, .. } => terms.push(parse_term(v)?),
                Model::Ising { .. } => return Err(SimError::config(key, "only valid for model = custom")),
            },
            "tree" => {
                self.tree = match v {
                    "balanced" => TreeSpec::Balanced,
                    "tt" | "mps" => TreeSpec::Tt,
                    lit if lit.starts_with('(') => TreeSpec::Literal(lit.split_whitespace().collect()),
                    _ => return Err(SimError::config(key, format!("expected balanced, tt or a literal, got '{v}'"))),
                }
            }
            "mode" => {
                self.mode = match v {
                    "schrodinger" => Flow::Schrodinger,
                    "gradient" => Flow::Gradient,
                    _ => return Err(SimError::config(key, format!("expected schrodinger or gradient, got '{v}'"))),
                }
            }
            "h" => self.h = finite(key, v)?,
            "t_end" | "T" => self.t_end = finite("t_end", v)?,
            "theta" => self.theta = finite(key, v)?,
            "rank_cap" => self.rank_cap = num(key, v)?,
            "ode" => self.ode = v.parse().map_err(|e: ttn_core::TtnError| SimError::config(key, e.to_string()))?,
            "substeps" => self.substeps = num(key, v)?,
            "integrator" => {
                self.integrator = v.parse().map_err(|e: ttn_core::TtnError| SimError::config(key, e.to_string()))?
            }
            "root_relative" => self.root_relative = boolean(key, v)?,
            "reorthonormalize" => self.reorthonormalize = boolean(key, v)?,
            "reference" => {
                self.reference = match v {
                    "none" => Reference::None,
                    "exact_diag" => Reference::ExactDiag,
                    _ => return Err(SimError::config(key, format!("expected none or exact_diag, got '{v}'"))),
                }
            }
            "initial" => {
                self.initial = match v.split_once(':') {
                    None if v == "all_up" => Initial::AllUp,
                    Some(("random", r)) => Initial::Random { rank: num(key, r)? },
                    _ => return Err(SimError::config(key, format!("expected all_up or random:<rank>, got '{v}'"))),
                }
            }
            "seed" => self.seed = num(key, v)?,
            "shift" => self.shift = if v == "auto" { None } else { Some(finite(key, v)?) },
            "csv" => self.csv = Some(PathBuf::from(v)),
            "summary" => self.summary = Some(PathBuf::from(v)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            _ => return Err(SimError::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                SimError::config(&format!("line {}", no + 1), format!("expected 'key = value', got '{line}'"))
            })?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io { path: path.into(), source: e })?;
        Self::parse(&text)
    }

    pub fn ising_spec(&self) -> Option<IsingSpec> {
        match self.model {
            Model::Ising { d, omega } => Some(IsingSpec { d, omega }),
            Model::Custom { .. } => None,
        }
    }

    pub fn build_tree(&self) -> Result<Tree> {
        let d = self.model.d();
        let t = match &self.tree {
            TreeSpec::Balanced => Tree::balanced_binary(2, d),
            TreeSpec::Tt => Tree::tensor_train(2, d),
            TreeSpec::Literal(s) => Tree::parse(s, 2),
        }
        .map_err(|e| SimError::config("tree", e.to_string()))?;
        let mut labels = t.leaves();
        labels.sort_unstable();
        if labels != (1..=d).collect::<Vec<_>>() {
            return Err(SimError::config("tree", format!("leaves must be exactly 1..={d}")));
        }
        if t.leaf_dims().iter().any(|&n| n != 2) {
            return Err(SimError::config("tree", "all sites must have dimension 2"));
        }
        if t.is_leaf() {
            return Err(SimError::config("tree", "the root must be an internal node"));
        }
        Ok(t)
    }

    /// The physical Hamiltonian.
    pub fn hamiltonian(&self) -> Result<KroneckerSumOp<f64>> {
        match &self.model {
            Model::Ising { .. } => Ok(ttn_core::spin::ising_hamiltonian(&self.ising_spec().unwrap())?),
            Model::Custom { terms, .. } => {
                let mut h = KroneckerSumOp::new();
                for t in terms {
                    let sites = t.sites.iter().map(|&(s, o)| (s, site_op(o))).collect();
                    h.push(C::new(t.coeff, 0.0), sites).map_err(|e| SimError::config("term", e.to_string()))?;
                }
                Ok(h)
            }
        }
    }

    /// Shift `lambda` added in gradient mode so that `H + lambda` is
    /// positive semidefinite.
    pub fn gradient_shift(&self) -> f64 {
        match (self.shift, &self.model) {
            (Some(s), _) => s,
            (None, Model::Ising { .. }) => self.ising_spec().unwrap().psd_shift(),
            (None, Model::Custom { terms, .. }) => terms.iter().map(|t| t.coeff.abs()).sum(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.model.d();
        if d < 2 {
            return Err(SimError::config("d", format!("need at least 2 sites, got {d}")));
        }
        if let Model::Ising { omega, .. } = self.model {
            if omega < 0.0 {
                return Err(SimError::config("omega", "must be >= 0"));
            }
        }
        if let Model::Custom { terms, .. } = &self.model {
            if terms.is_empty() {
                return Err(SimError::config("term", "a custom model needs at least one term"));
            }
            for t in terms {
                if let Some(&(s, _)) = t.sites.iter().find(|&&(s, _)| s == 0 || s > d) {
                    return Err(SimError::config("term", format!("site {s} outside 1..={d}")));
                }
            }
        }
        if self.h.is_nan() || self.h <= 0.0 {
            return Err(SimError::config("h", "must be > 0"));
        }
        if self.theta.is_nan() || self.theta < 0.0 {
            return Err(SimError::config("theta", "must be >= 0"));
        }
        if self.t_end.is_nan() || self.t_end < 0.0 {
            return Err(SimError::config("t_end", "must be >= 0"));
        }
        step_count(0.0, self.t_end, self.h).map_err(|e| SimError::config("t_end", e.to_string()))?;
        if self.substeps == 0 {
            return Err(SimError::config("substeps", "must be >= 1"));
        }
        if let Initial::Random { rank: 0 } = self.initial {
            return Err(SimError::config("initial", "random rank must be >= 1"));
        }
        if self.reference == Reference::ExactDiag {
            if self.ising_spec().is_none() {
                return Err(SimError::config("reference", "exact_diag needs model = ising"));
            }
            if d > MAX_REFERENCE_SITES {
                return Err(SimError::config(
                    "reference",
                    format!("exact_diag is limited to d <= {MAX_REFERENCE_SITES}"),
                ));
            }
            if self.mode != Flow::Schrodinger {
                return Err(SimError::config("reference", "exact_diag needs mode = schrodinger"));
            }
        }
        self.build_tree()?;
        self.hamiltonian()?;
        Ok(())
    }
}

fn site_op(o: char) -> Matrix64 {
    match o {
        'x' => pauli_x(),
        'z' => pauli_z(),
        'y' => Matrix64::from_row_slice(2, 2, &[C::new(0.0, 0.0), C::new(0.0, -1.0), C::new(0.0, 1.0), C::new(0.0, 0.0)]),
        _ => Matrix64::identity(2, 2),
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        let _ = writeln!(s, "name = {}", self.name);
        match &self.model {
            Model::Ising { d, omega } => {
                let _ = writeln!(s, "model = ising\nd = {d}\nomega = {omega:?}");
            }
            Model::Custom { d, terms } => {
                let _ = writeln!(s, "model = custom\nd = {d}");
                for t in terms {
                    let _ = write!(s, "term = {:?} :", t.coeff);
                    for (site, op) in &t.sites {
                        let _ = write!(s, " {site}={op}");
                    }
                    s.push('\n');
                }
            }
        }
        let tree = match &self.tree {
            TreeSpec::Balanced => "balanced".to_string(),
            TreeSpec::Tt => "tt".to_string(),
            TreeSpec::Literal(l) => l.clone(),
        };
        let mode = match self.mode {
            Flow::Schrodinger => "schrodinger",
            Flow::Gradient => "gradient",
        };
        let reference = match self.reference {
            Reference::None => "none",
            Reference::ExactDiag => "exact_diag",
        };
        let initial = match self.initial {
            Initial::AllUp => "all_up".to_string(),
            Initial::Random { rank } => format!("random:{rank}"),
        };
        let _ = writeln!(s, "tree = {tree}\nmode = {mode}");
        let _ = writeln!(s, "h = {:?}\nt_end = {:?}\ntheta = {:?}", self.h, self.t_end, self.theta);
        let _ = writeln!(s, "rank_cap = {}\node = {}\nsubsteps = {}", self.rank_cap, self.ode, self.substeps);
        let _ = writeln!(s, "integrator = {}", self.integrator);
        let _ = writeln!(s, "root_relative = {}\nreorthonormalize = {}", self.root_relative, self.reorthonormalize);
        let _ = writeln!(s, "reference = {reference}\ninitial = {initial}\nseed = {}", self.seed);
        if let Some(x) = self.shift {
            let _ = writeln!(s, "shift = {x:?}");
        }
        for (k, p) in [("csv", &self.csv), ("summary", &self.summary), ("checkpoint", &self.checkpoint)] {
            if let Some(p) = p {
                let _ = writeln!(s, "{k} = {}", p.display());
            }
        }
        f.write_str(&s)
    }
}
