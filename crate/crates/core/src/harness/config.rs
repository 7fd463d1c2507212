//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kinetic::{ShiftKernel, XiGrid};
use crate::model::{Flux, FluxModel, RegularizedModel};
use crate::averaging::Convention;
use crate::solvers::{Scheme, SolverConfig, SolverModel};
use crate::torus_field::{TorusField, TorusGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Stability,
    Wongzakai,
    Decay,
    Regularity,
    Theta,
    Splitup,
    Lemmas,
    Simulate,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Stability => "stability",
            Experiment::Wongzakai => "wongzakai",
            Experiment::Decay => "decay",
            Experiment::Regularity => "regularity",
            Experiment::Theta => "theta",
            Experiment::Splitup => "splitup",
            Experiment::Lemmas => "lemmas",
            Experiment::Simulate => "simulate",
        }
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        <Self as clap::ValueEnum>::from_str(s, false).map_err(|_| Error::Config(format!("unknown experiment '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Burgers,
    Porous,
    Power,
    Linear,
    Heat,
    Inert,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    Brownian,
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    Sin,
    Cos,
    Step,
    Bump,
    Constant,
}

/// Every key a config may contain.
const KEYS: &[&str] = &[
    "experiment",
    "master_seed",
    "mc_paths",
    "output_dir",
    "dim",
    "cells",
    "xi_cells",
    "xi_bound",
    "model.kind",
    "model.m",
    "model.q",
    "model.flux",
    "model.speed",
    "model.a",
    "model.p1",
    "model.p2",
    "model.eps",
    "model.width",
    "scheme",
    "shift_kernel",
    "symmetrized",
    "cfl_hyperbolic",
    "cfl_parabolic",
    "t_end",
    "record_every",
    "balance_p",
    "monitor_c",
    "bv_tolerance",
    "path",
    "knots_per_unit",
    "initial",
    "initial.amplitude",
    "initial.offset",
    "initial.k",
    "initial.width",
    "levels",
    "floor",
    "bootstrap",
    "theta",
    "theta.expected",
    "theta.resolution",
    "gamma",
    "gamma_ladder",
    "alpha",
    "lambda",
    "convention",
    "regularity.delta",
    "regularity.refine",
    "splitup.refinements",
];

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub experiment: Option<Experiment>,
    pub master_seed: u64,
    pub mc_paths: usize,
    pub output_dir: PathBuf,
    pub dim: usize,
    pub cells: usize,
    pub xi_cells: Option<usize>,
    pub xi_bound: Option<f64>,
    pub model: ModelKind,
    pub model_m: f64,
    pub model_q: f64,
    pub model_flux: ModelKind,
    pub model_speed: f64,
    pub model_a: f64,
    pub model_p1: Option<f64>,
    pub model_p2: Option<f64>,
    pub eps: f64,
    pub mollifier_width: f64,
    pub scheme: Scheme,
    pub shift_kernel: ShiftKernel,
    pub symmetrized: bool,
    pub cfl_hyperbolic: f64,
    pub cfl_parabolic: f64,
    pub t_end: f64,
    pub record_every: Option<f64>,
    pub balance_p: f64,
    pub monitor_c: f64,
    pub bv_tolerance: f64,
    pub path: PathKind,
    pub knots_per_unit: usize,
    pub initial: InitialKind,
    pub initial_amplitude: f64,
    pub initial_offset: f64,
    pub initial_k: i64,
    pub initial_width: f64,
    pub levels: Vec<u32>,
    pub floor: f64,
    pub bootstrap: usize,
    pub theta: Option<f64>,
    pub theta_expected: Option<f64>,
    pub theta_resolution: usize,
    pub gamma: f64,
    pub gamma_ladder: Vec<f64>,
    pub alpha: f64,
    pub lambda: f64,
    pub convention: Convention,
    pub regularity_delta: f64,
    pub regularity_refine: usize,
    pub splitup_refinements: usize,
    /// Parsed entries in key order, the canonical form behind the hash.
    #[serde(skip)]
    entries: BTreeMap<String, String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            master_seed: 0,
            mc_paths: 20,
            output_dir: PathBuf::from("spdelab_out"),
            dim: 1,
            cells: 256,
            xi_cells: None,
            xi_bound: None,
            model: ModelKind::Burgers,
            model_m: 2.0,
            model_q: 2.0,
            model_flux: ModelKind::Inert,
            model_speed: 1.0,
            model_a: 1.0,
            model_p1: None,
            model_p2: None,
            eps: 0.0,
            mollifier_width: 0.0,
            scheme: Scheme::Pathwise,
            shift_kernel: ShiftKernel::Rounded,
            symmetrized: false,
            cfl_hyperbolic: 0.45,
            cfl_parabolic: 0.45,
            t_end: 1.0,
            record_every: None,
            balance_p: 0.0,
            monitor_c: 1.0,
            bv_tolerance: 0.02,
            path: PathKind::Brownian,
            knots_per_unit: 4096,
            initial: InitialKind::Sin,
            initial_amplitude: 1.0,
            initial_offset: 0.0,
            initial_k: 1,
            initial_width: 0.5,
            levels: (4..=9).collect(),
            floor: 1e-10,
            bootstrap: 200,
            theta: None,
            theta_expected: None,
            theta_resolution: 200_000,
            gamma: 1.0,
            gamma_ladder: vec![0.5, 1.0, 2.0, 4.0],
            alpha: 1.0,
            lambda: 0.5,
            convention: Convention::Physical,
            regularity_delta: 0.1,
            regularity_refine: 2,
            splitup_refinements: 2,
            entries: BTreeMap::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got '{value}'"))),
    }
}

fn parse_model(key: &str, value: &str) -> Result<ModelKind> {
    Ok(match value {
        "burgers" => ModelKind::Burgers,
        "porous" => ModelKind::Porous,
        "power" => ModelKind::Power,
        "linear" => ModelKind::Linear,
        "heat" => ModelKind::Heat,
        "inert" | "none" => ModelKind::Inert,
        _ => return Err(Error::Config(format!("{key}: unknown model '{value}'"))),
    })
}

/// `a-b` inclusive range or comma list.
fn parse_levels(key: &str, value: &str) -> Result<Vec<u32>> {
    let levels: Vec<u32> = if let Some((a, b)) = value.split_once('-') {
        let (a, b): (u32, u32) = (parse(key, a.trim())?, parse(key, b.trim())?);
        (a..=b).collect()
    } else {
        value.split(',').map(|v| parse(key, v.trim())).collect::<Result<_>>()?
    };
    if levels.len() < 2 || levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!("{key}: need at least two increasing levels, got '{value}'")));
    }
    Ok(levels)
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got '{raw}'", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("line {}: unknown key '{key}'", lineno + 1)));
            }
            if cfg.entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{key}'", lineno + 1)));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "experiment" => self.experiment = Some(v.parse()?),
            "master_seed" => self.master_seed = parse(key, v)?,
            "mc_paths" => self.mc_paths = parse(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "dim" => self.dim = parse(key, v)?,
            "cells" => self.cells = parse(key, v)?,
            "xi_cells" => self.xi_cells = Some(parse(key, v)?),
            "xi_bound" => self.xi_bound = Some(parse(key, v)?),
            "model.kind" => self.model = parse_model(key, v)?,
            "model.m" => self.model_m = parse(key, v)?,
            "model.q" => self.model_q = parse(key, v)?,
            "model.flux" => self.model_flux = parse_model(key, v)?,
            "model.speed" => self.model_speed = parse(key, v)?,
            "model.a" => self.model_a = parse(key, v)?,
            "model.p1" => self.model_p1 = Some(parse(key, v)?),
            "model.p2" => self.model_p2 = Some(parse(key, v)?),
            "model.eps" => self.eps = parse(key, v)?,
            "model.width" => self.mollifier_width = parse(key, v)?,
            "scheme" => {
                self.scheme = match v {
                    "reference" => Scheme::Reference,
                    "pathwise" => Scheme::Pathwise,
                    _ => return Err(Error::Config(format!("{key}: unknown scheme '{v}'"))),
                }
            }
            "shift_kernel" => {
                self.shift_kernel = match v {
                    "cell_average" => ShiftKernel::CellAverage,
                    "spectral" => ShiftKernel::Spectral,
                    "rounded" => ShiftKernel::Rounded,
                    _ => return Err(Error::Config(format!("{key}: unknown kernel '{v}'"))),
                }
            }
            "symmetrized" => self.symmetrized = parse_bool(key, v)?,
            "cfl_hyperbolic" => self.cfl_hyperbolic = parse(key, v)?,
            "cfl_parabolic" => self.cfl_parabolic = parse(key, v)?,
            "t_end" => self.t_end = parse(key, v)?,
            "record_every" => self.record_every = Some(parse(key, v)?),
            "balance_p" => self.balance_p = parse(key, v)?,
            "monitor_c" => self.monitor_c = parse(key, v)?,
            "bv_tolerance" => self.bv_tolerance = parse(key, v)?,
            "path" => {
                self.path = match v {
                    "brownian" => PathKind::Brownian,
                    "deterministic" => PathKind::Deterministic,
                    _ => return Err(Error::Config(format!("{key}: unknown path '{v}'"))),
                }
            }
            "knots_per_unit" => self.knots_per_unit = parse(key, v)?,
            "initial" => {
                self.initial = match v {
                    "sin" => InitialKind::Sin,
                    "cos" => InitialKind::Cos,
                    "step" => InitialKind::Step,
                    "bump" => InitialKind::Bump,
                    "constant" => InitialKind::Constant,
                    _ => return Err(Error::Config(format!("{key}: unknown initial datum '{v}'"))),
                }
            }
            "initial.amplitude" => self.initial_amplitude = parse(key, v)?,
            "initial.offset" => self.initial_offset = parse(key, v)?,
            "initial.k" => self.initial_k = parse(key, v)?,
            "initial.width" => self.initial_width = parse(key, v)?,
            "levels" => self.levels = parse_levels(key, v)?,
            "floor" => self.floor = parse(key, v)?,
            "bootstrap" => self.bootstrap = parse(key, v)?,
            "theta" => self.theta = Some(parse(key, v)?),
            "theta.expected" => self.theta_expected = Some(parse(key, v)?),
            "theta.resolution" => self.theta_resolution = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "gamma_ladder" => self.gamma_ladder = parse_list(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "convention" => {
                self.convention = match v {
                    "physical" => Convention::Physical,
                    "paper" => Convention::Paper,
                    _ => return Err(Error::Config(format!("{key}: unknown convention '{v}'"))),
                }
            }
            "regularity.delta" => self.regularity_delta = parse(key, v)?,
            "regularity.refine" => self.regularity_refine = parse(key, v)?,
            "splitup.refinements" => self.splitup_refinements = parse(key, v)?,
            _ => unreachable!("key list and setter disagree on '{key}'"),
        }
        Ok(())
    }

    /// Checks ranges that do not depend on the experiment.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(1..=2).contains(&self.dim) {
            return bad(format!("dim = {} not in {{1, 2}}", self.dim));
        }
        if self.cells < 4 || !self.cells.is_power_of_two() {
            return bad(format!("cells = {} must be a power of two >= 4", self.cells));
        }
        if self.mc_paths == 0 {
            return bad("mc_paths must be positive".into());
        }
        if !(self.t_end > 0.0) {
            return bad(format!("t_end = {} must be positive", self.t_end));
        }
        if let Some(r) = self.record_every {
            if !(r > 0.0) {
                return bad(format!("record_every = {r} must be positive"));
            }
        }
        if !(self.eps >= 0.0) || !(self.mollifier_width >= 0.0) {
            return bad("model.eps and model.width must be nonnegative".into());
        }
        if self.knots_per_unit < 2 {
            return bad(format!("knots_per_unit = {} below 2", self.knots_per_unit));
        }
        if self.bootstrap < 10 {
            return bad(format!("bootstrap = {} below 10 resamples", self.bootstrap));
        }
        if self.gamma_ladder.iter().any(|g| !(*g > 0.0)) || self.gamma_ladder.is_empty() {
            return bad("gamma_ladder entries must be positive".into());
        }
        if !(self.regularity_delta >= 0.0) || self.regularity_refine < 2 {
            return bad("regularity.delta >= 0 and regularity.refine >= 2 required".into());
        }
        if let Some(th) = self.theta {
            if !(th > 0.0 && th <= 1.0) {
                return bad(format!("theta = {th} not in (0, 1]"));
            }
        }
        if !(self.model_flux == ModelKind::Inert || self.model_flux == ModelKind::Burgers) {
            return bad("model.flux must be burgers or none".into());
        }
        Ok(())
    }

    /// SHA-256 over the canonical `key=value` lines, without the output location.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.entries {
            if k != "output_dir" {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn grid(&self) -> Result<TorusGrid> {
        TorusGrid::new(self.dim, self.cells)
    }

    pub fn flux_model(&self) -> Result<FluxModel> {
        let d = self.dim;
        let mut m = match self.model {
            ModelKind::Burgers => FluxModel::burgers(d)?,
            ModelKind::Porous => {
                let flux = (self.model_flux == ModelKind::Burgers).then_some(Flux::Power([2.0, 2.0]));
                FluxModel::porous_medium(d, self.model_m, flux)?
            }
            ModelKind::Power => FluxModel::power_flux(&vec![self.model_q; d])?,
            ModelKind::Linear => FluxModel::linear_flux(&vec![self.model_speed; d])?,
            ModelKind::Heat => FluxModel::heat(d, self.model_a)?,
            ModelKind::Inert => FluxModel::new(d, Flux::Zero, crate::model::Diffusion::Zero, "inert")?,
        };
        if self.model_p1.is_some() || self.model_p2.is_some() {
            let g = m.growth();
            m = m.with_growth(self.model_p1.unwrap_or(g[0]), self.model_p2.unwrap_or(g[1]))?;
        }
        Ok(m)
    }

    /// Plain model when `eps = 0`, otherwise the vanishing-viscosity model.
    pub fn solver_model(&self) -> Result<SolverModel> {
        let base = self.flux_model()?;
        if self.eps > 0.0 {
            Ok(SolverModel::Regularized(RegularizedModel::new(base, self.eps, self.mollifier_width)?))
        } else {
            Ok(SolverModel::Plain(base))
        }
    }

    pub fn initial_field(&self, grid: TorusGrid) -> Result<TorusField> {
        use std::f64::consts::PI;
        let (a, c, k, w) = (self.initial_amplitude, self.initial_offset, self.initial_k as f64, self.initial_width);
        let d = self.dim;
        TorusField::from_fn(grid, |x| {
            let shape = match self.initial {
                InitialKind::Sin => x[..d].iter().map(|v| (2.0 * PI * k * v).sin()).product(),
                InitialKind::Cos => x[..d].iter().map(|v| (2.0 * PI * k * v).cos()).product(),
                InitialKind::Step => x[..d].iter().map(|v| if *v < w { 1.0 } else { 0.0 }).product(),
                InitialKind::Bump => x[..d]
                    .iter()
                    .map(|v| (1.0 - ((v - 0.5) / (0.5 * w)).powi(2)).max(0.0))
                    .product(),
                InitialKind::Constant => 0.0,
            };
            c + a * shape
        })
    }

    /// Velocity grid covering the data: `xi_bound` or `max |u0|`.
    pub fn xi_grid(&self, u0: &TorusField) -> Result<XiGrid> {
        let bound = self.xi_bound.unwrap_or_else(|| {
            let m = u0.max_abs();
            if m > 0.0 {
                m
            } else {
                1.0
            }
        });
        let cells = self.xi_cells.unwrap_or(self.cells);
        XiGrid::symmetric(bound, cells + cells % 2)
    }

    pub fn record_every(&self) -> f64 {
        self.record_every.unwrap_or(self.t_end / 10.0)
    }

    pub fn solver_config(&self, scheme: Scheme, grid: TorusGrid, xigrid: XiGrid, model: SolverModel) -> SolverConfig {
        let mut c = SolverConfig::new(scheme, grid, xigrid, model, self.t_end);
        c.cfl_hyperbolic = self.cfl_hyperbolic;
        c.cfl_parabolic = self.cfl_parabolic;
        c.record_every = self.record_every();
        c.shift_kernel = self.shift_kernel;
        c.symmetrized = self.symmetrized;
        c.balance_p = self.balance_p;
        c.monitor_c = self.monitor_c;
        c.bv_tolerance = self.bv_tolerance;
        c
    }

    /// Canonical entries as given in the file.
    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects() {
        let cfg = ExperimentConfig::parse_str("# comment\nmodel.kind = porous\nmodel.m = 3 # inline\nlevels = 4-6\n").unwrap();
        assert_eq!(cfg.model, ModelKind::Porous);
        assert_eq!(cfg.model_m, 3.0);
        assert_eq!(cfg.levels, vec![4, 5, 6]);
        assert!(matches!(ExperimentConfig::parse_str("model.knd = burgers"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse_str("cells = 100"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse_str("cells = 64\ncells = 64"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse_str("just text"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse_str("model.eps = abc"), Err(Error::Config(_))));
    }

    #[test]
    fn hash_ignores_order_comments_and_output() {
        let a = ExperimentConfig::parse_str("cells = 64\nt_end = 2\n").unwrap();
        let b = ExperimentConfig::parse_str("# x\nt_end = 2\n\ncells = 64\noutput_dir = /tmp/x\n").unwrap();
        let c = ExperimentConfig::parse_str("cells = 64\nt_end = 3\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn floats_keep_full_precision() {
        let cfg = ExperimentConfig::parse_str("model.eps = 0.1000000000000000055511151231257827\n").unwrap();
        assert_eq!(cfg.eps, 0.1);
        let cfg = ExperimentConfig::parse_str("gamma = 1.0000000000000002\n").unwrap();
        assert_eq!(cfg.gamma, 1.0 + f64::EPSILON);
    }
}
