//! Time steppers: the vanishing-viscosity reference scheme for piecewise-linear
//! signals and the pathwise transport/diffusion splitting for rough ones.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kinetic::{dissipation_mass, viscous_mass, KineticDensity, ShiftKernel, XiGrid};
use crate::model::{FluxModel, RegularizedModel};
use crate::paths::DrivingPath;
use crate::torus_field::{TorusField, TorusGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Reference,
    Pathwise,
}

/// The equation a solver integrates.
#[derive(Debug, Clone)]
pub enum SolverModel {
    Plain(FluxModel),
    Regularized(RegularizedModel),
}

impl SolverModel {
    /// Model whose `B_ij` primitives drive the degenerate diffusion, plus the
    /// viscosity `eps` added as `eps Laplacian`.
    pub fn parabolic_parts(&self) -> (&FluxModel, f64) {
        match self {
            SolverModel::Plain(m) => (m, 0.0),
            SolverModel::Regularized(r) => (r.mollified(), r.eps()),
        }
    }

    pub fn flux_model(&self) -> &FluxModel {
        self.parabolic_parts().0
    }

    pub fn dim(&self) -> usize {
        self.flux_model().dim()
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub scheme: Scheme,
    pub grid: TorusGrid,
    pub xigrid: XiGrid,
    pub model: SolverModel,
    pub cfl_hyperbolic: f64,
    pub cfl_parabolic: f64,
    pub t_end: f64,
    pub record_every: f64,
    pub shift_kernel: ShiftKernel,
    /// Diffusion half steps around each transport step instead of one after it.
    pub symmetrized: bool,
    /// Weight exponent `p` of the accumulated measure masses.
    pub balance_p: f64,
    /// `C` in the monitor tolerance `C dx`.
    pub monitor_c: f64,
    /// Relative BV growth tolerated by the monitor.
    pub bv_tolerance: f64,
}

impl SolverConfig {
    pub fn new(scheme: Scheme, grid: TorusGrid, xigrid: XiGrid, model: SolverModel, t_end: f64) -> Self {
        Self {
            scheme,
            grid,
            xigrid,
            model,
            cfl_hyperbolic: 0.45,
            cfl_parabolic: 0.45,
            t_end,
            record_every: t_end,
            shift_kernel: ShiftKernel::Rounded,
            symmetrized: false,
            balance_p: 0.0,
            monitor_c: 1.0,
            bv_tolerance: 0.02,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scheme == Scheme::Reference && !matches!(self.model, SolverModel::Regularized(_)) {
            return Err(Error::InvalidParameter(
                "the reference scheme needs a regularized (uniformly elliptic) model".into(),
            ));
        }
        if self.model.dim() != self.grid.dim() {
            return Err(Error::InvalidParameter(format!(
                "model dimension {} differs from grid dimension {}",
                self.model.dim(),
                self.grid.dim()
            )));
        }
        for (name, c) in [("cfl_hyperbolic", self.cfl_hyperbolic), ("cfl_parabolic", self.cfl_parabolic)] {
            if !(c > 0.0 && c <= 1.0) {
                return Err(Error::InvalidParameter(format!("{name} = {c} not in (0, 1]")));
            }
        }
        if !(self.t_end > 0.0) || !(self.record_every > 0.0) {
            return Err(Error::InvalidParameter("t_end and record_every must be positive".into()));
        }
        if !(self.balance_p > -1.0) {
            return Err(Error::InvalidParameter(format!("balance_p = {} must exceed -1", self.balance_p)));
        }
        Ok(())
    }

    /// `tol(dx) = C dx`.
    pub fn tolerance(&self) -> f64 {
        self.monitor_c * self.grid.spacing()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonitorRow {
    pub t: f64,
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
    pub bv: f64,
    pub mass: f64,
    pub q_eps: f64,
    pub q_diss: f64,
}

impl MonitorRow {
    fn of(t: f64, u: &TorusField, q_eps: f64, q_diss: f64) -> Result<Self> {
        Ok(Self {
            t,
            l1: u.lp_norm(1.0)?,
            l2: u.lp_norm(2.0)?,
            linf: u.max_abs(),
            bv: u.bv_seminorm(),
            mass: u.mean(),
            q_eps,
            q_diss,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<TorusField>,
    pub monitors: Vec<MonitorRow>,
    /// Monitor violations; they are reported, not fatal.
    pub warnings: Vec<String>,
    pub steps: usize,
}

impl Trajectory {
    pub fn final_state(&self) -> &TorusField {
        self.snapshots.last().expect("a trajectory holds the initial state")
    }

    pub fn write_monitors_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,l1,l2,linf,bv,mass,q_eps,q_diss")?;
        for r in &self.monitors {
            writeln!(
                out,
                "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                r.t, r.l1, r.l2, r.linf, r.bv, r.mass, r.q_eps, r.q_diss
            )?;
        }
        Ok(())
    }
}

/// Snapshot CSV: cell indices then the value.
pub fn write_snapshot_csv<W: Write>(field: &TorusField, mut out: W) -> Result<()> {
    let g = field.grid();
    if g.dim() == 1 {
        writeln!(out, "i,u")?;
    } else {
        writeln!(out, "i,j,u")?;
    }
    for (k, v) in field.values().iter().enumerate() {
        let mi = g.multi_index(k);
        if g.dim() == 1 {
            writeln!(out, "{},{v:e}", mi[0])?;
        } else {
            writeln!(out, "{},{},{v:e}", mi[0], mi[1])?;
        }
    }
    Ok(())
}

/// Largest stable explicit steps over the value range `[lo, hi]`.
#[derive(Debug, Clone, Copy)]
struct Limits {
    lo: f64,
    hi: f64,
    speed: [f64; 2],
    eig: f64,
}

impl Limits {
    fn new(model: &SolverModel, lo: f64, hi: f64) -> Self {
        let (m, eps) = model.parabolic_parts();
        let pad = 1e-3 * (hi - lo).max(1e-3);
        let (lo, hi) = (lo - pad, hi + pad);
        Self {
            lo,
            hi,
            speed: m.max_speed(lo, hi),
            eig: m.max_diffusion_eig(lo, hi) + eps,
        }
    }

    fn covers(&self, u: &TorusField) -> bool {
        u.min() >= self.lo && u.max() <= self.hi
    }

    fn hyperbolic(&self, cfl: f64, dx: f64, slope: [f64; 2]) -> f64 {
        let s = self.speed[0] * slope[0].abs() + self.speed[1] * slope[1].abs();
        if s > 0.0 {
            cfl * dx / s
        } else {
            f64::INFINITY
        }
    }

    fn parabolic(&self, cfl: f64, dx: f64, dim: usize) -> f64 {
        if self.eig > 0.0 {
            cfl * dx * dx / (2.0 * dim as f64 * self.eig)
        } else {
            f64::INFINITY
        }
    }
}

fn check_window(u: &TorusField, xi: &XiGrid) -> Result<()> {
    let slack = 1e-12 * (xi.xi_max() - xi.xi_min());
    for v in [u.min(), u.max()] {
        if !v.is_finite() {
            let index = u.values().iter().position(|x| !x.is_finite()).unwrap_or(0);
            return Err(Error::NonFinite { index, value: v });
        }
        if v < xi.xi_min() - slack || v > xi.xi_max() + slack {
            return Err(Error::XiWindow {
                value: v,
                min: xi.xi_min(),
                max: xi.xi_max(),
            });
        }
    }
    Ok(())
}

/// `sum_ij D_i D_j B_ij(u) + eps Laplacian(u)`, centered differences.
fn parabolic_rhs(u: &[f64], grid: &TorusGrid, model: &FluxModel, eps: f64, out: &mut [f64]) {
    let d = grid.dim();
    let h2 = grid.spacing() * grid.spacing();
    out.iter_mut().for_each(|v| *v = 0.0);
    if model.has_diffusion() {
        let diagonal = model.diffusion().is_diagonal();
        for i in 0..d {
            for j in 0..d {
                if i != j && diagonal {
                    continue;
                }
                let b: Vec<f64> = u.iter().map(|&v| model.bprim(i, j, v)).collect();
                for (k, o) in out.iter_mut().enumerate() {
                    if i == j {
                        let (p, m) = (grid.neighbor(k, i, 1), grid.neighbor(k, i, -1));
                        *o += (b[p] - 2.0 * b[k] + b[m]) / h2;
                    } else {
                        let pp = grid.neighbor(grid.neighbor(k, i, 1), j, 1);
                        let pm = grid.neighbor(grid.neighbor(k, i, 1), j, -1);
                        let mp = grid.neighbor(grid.neighbor(k, i, -1), j, 1);
                        let mm = grid.neighbor(grid.neighbor(k, i, -1), j, -1);
                        *o += (b[pp] - b[pm] - b[mp] + b[mm]) / (4.0 * h2);
                    }
                }
            }
        }
    }
    if eps > 0.0 {
        for (k, o) in out.iter_mut().enumerate() {
            for i in 0..d {
                let (p, m) = (grid.neighbor(k, i, 1), grid.neighbor(k, i, -1));
                *o += eps * (u[p] - 2.0 * u[k] + u[m]) / h2;
            }
        }
    }
}

/// Engquist-Osher flux divergence for `sum_i F^i(u) slope_i`.
fn hyperbolic_rhs(u: &[f64], grid: &TorusGrid, model: &FluxModel, slope: [f64; 2], out: &mut [f64]) {
    let h = grid.spacing();
    let flux = model.flux();
    for (axis, &c) in slope.iter().enumerate().take(grid.dim()) {
        if c == 0.0 {
            continue;
        }
        // splitting of c F into its increasing and decreasing parts
        let (plus, minus): (Vec<f64>, Vec<f64>) = u
            .iter()
            .map(|&v| {
                let (inc, dec) = (flux.increasing_part(axis, v), flux.decreasing_part(axis, v));
                if c > 0.0 {
                    (c * inc, c * dec)
                } else {
                    (c * dec, c * inc)
                }
            })
            .unzip();
        for (k, o) in out.iter_mut().enumerate() {
            let (p, m) = (grid.neighbor(k, axis, 1), grid.neighbor(k, axis, -1));
            let right = plus[k] + minus[p];
            let left = plus[m] + minus[k];
            *o -= (right - left) / h;
        }
    }
}

fn advance(u: &TorusField, rate: &[f64], dt: f64) -> TorusField {
    let values = u.values().iter().zip(rate).map(|(v, r)| v + dt * r).collect();
    TorusField::from_parts_unchecked(*u.grid(), values)
}

fn reference_limit(config: &SolverConfig, limits: &Limits, slope: [f64; 2]) -> f64 {
    let dx = config.grid.spacing();
    limits
        .hyperbolic(config.cfl_hyperbolic, dx, slope)
        .min(limits.parabolic(config.cfl_parabolic, dx, config.grid.dim()))
}

/// One explicit Euler step of the reference scheme with the slope of `path`
/// frozen at `t`.
pub fn step_reference(
    u: &TorusField,
    model: &RegularizedModel,
    path: &DrivingPath,
    t: f64,
    dt: f64,
    cfl: (f64, f64),
) -> Result<TorusField> {
    let solver_model = SolverModel::Regularized(model.clone());
    let limits = Limits::new(&solver_model, u.min(), u.max());
    let slope = path.slope_at(t);
    let dx = u.grid().spacing();
    let limit = limits
        .hyperbolic(cfl.0, dx, slope)
        .min(limits.parabolic(cfl.1, dx, u.grid().dim()));
    if dt > limit * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt, limit });
    }
    Ok(reference_update(u, &solver_model, slope, dt))
}

fn reference_update(u: &TorusField, model: &SolverModel, slope: [f64; 2], dt: f64) -> TorusField {
    let (m, eps) = model.parabolic_parts();
    let g = *u.grid();
    let mut rate = vec![0.0; g.len()];
    parabolic_rhs(u.values(), &g, m, eps, &mut rate);
    hyperbolic_rhs(u.values(), &g, m, slope, &mut rate);
    advance(u, &rate, dt)
}

/// Exact kinetic transport by `f(xi) dz`, then one diffusion substep of `dt`.
pub fn step_pathwise(
    u: &TorusField,
    model: &FluxModel,
    xigrid: XiGrid,
    dz: &[f64],
    dt: f64,
    kernel: ShiftKernel,
) -> Result<TorusField> {
    if dz.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite increment {dz:?}")));
    }
    let mut dz2 = [0.0; 2];
    for (a, v) in dz2.iter_mut().enumerate().take(u.grid().dim()) {
        *v = dz.get(a).copied().unwrap_or(0.0);
    }
    let moved = transport(u, model, xigrid, [0.0; 2], dz2, kernel)?;
    if dt == 0.0 || !model.has_diffusion() {
        return Ok(moved);
    }
    let solver_model = SolverModel::Plain(model.clone());
    let limits = Limits::new(&solver_model, moved.min(), moved.max());
    let limit = limits.parabolic(0.45, u.grid().spacing(), u.grid().dim());
    if dt > limit * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt, limit });
    }
    let mut rate = vec![0.0; moved.grid().len()];
    parabolic_rhs(moved.values(), moved.grid(), model, 0.0, &mut rate);
    Ok(advance(&moved, &rate, dt))
}

/// Moves every band from `f(xi) z0` to `f(xi) z1`. The rounded kernel
/// rounds both endpoints to the cell grid, the others use `f(xi) (z1 - z0)`.
fn transport(u: &TorusField, model: &FluxModel, xigrid: XiGrid, z0: [f64; 2], z1: [f64; 2], kernel: ShiftKernel) -> Result<TorusField> {
    if z0 == z1 || matches!(model.flux(), crate::model::Flux::Zero) {
        return Ok(u.clone());
    }
    let m = u.grid().cells() as f64;
    let mut kin = KineticDensity::lift(u, xigrid)?;
    kin.transport(
        |xi| {
            let f = model.f(xi);
            match kernel {
                ShiftKernel::Rounded => [0, 1].map(|a| ((f[a] * z1[a] * m).round() - (f[a] * z0[a] * m).round()) / m),
                _ => [0, 1].map(|a| f[a] * (z1[a] - z0[a])),
            }
        },
        kernel,
    );
    Ok(kin.reconstruct())
}

/// Integration state shared by both schemes.
struct Integrator<'a> {
    config: &'a SolverConfig,
    limits: Limits,
    q_eps: f64,
    q_diss: f64,
    steps: usize,
    t: f64,
}

impl Integrator<'_> {
    fn refresh(&mut self, u: &TorusField) -> Result<()> {
        check_window(u, &self.config.xigrid)?;
        if !self.limits.covers(u) {
            self.limits = Limits::new(&self.config.model, u.min(), u.max());
        }
        Ok(())
    }

    /// Measure masses of the state `u` over a step of length `dt`.
    fn accumulate(&mut self, u: &TorusField, dt: f64) {
        let (m, eps) = self.config.model.parabolic_parts();
        let p = self.config.balance_p;
        if eps > 0.0 {
            self.q_eps += dt * viscous_mass(u, eps, p);
        }
        if m.has_diffusion() {
            self.q_diss += dt * dissipation_mass(u, m, p);
        }
    }

    fn check_dt(&self, dt: f64) -> Result<()> {
        if dt < 1e-14 * self.config.t_end.max(1.0) {
            return Err(Error::StepUnderflow { t: self.t });
        }
        Ok(())
    }

    fn reference_segment(&mut self, mut u: TorusField, length: f64, slope: [f64; 2]) -> Result<TorusField> {
        let end = self.t + length;
        let mut done = 0.0;
        while done < length {
            self.refresh(&u)?;
            let limit = reference_limit(self.config, &self.limits, slope);
            let remaining = length - done;
            // equal substeps up to the segment end
            let count = (remaining / limit).ceil().max(1.0);
            let dt = remaining / count;
            self.check_dt(dt)?;
            self.accumulate(&u, dt);
            u = reference_update(&u, &self.config.model, slope, dt);
            self.steps += 1;
            done += dt;
            self.t += dt;
            if count == 1.0 {
                break;
            }
        }
        self.t = end;
        Ok(u)
    }

    fn diffuse(&mut self, mut u: TorusField, length: f64) -> Result<TorusField> {
        let (m, eps) = self.config.model.parabolic_parts();
        if !m.has_diffusion() && eps == 0.0 {
            return Ok(u);
        }
        let g = self.config.grid;
        let mut rate = vec![0.0; g.len()];
        let mut done = 0.0;
        while done < length {
            self.refresh(&u)?;
            let limit = self.limits.parabolic(self.config.cfl_parabolic, g.spacing(), g.dim());
            let remaining = length - done;
            let count = (remaining / limit).ceil().max(1.0);
            let dt = remaining / count;
            self.check_dt(dt)?;
            self.accumulate(&u, dt);
            parabolic_rhs(u.values(), &g, m, eps, &mut rate);
            u = advance(&u, &rate, dt);
            self.steps += 1;
            done += dt;
            if count == 1.0 {
                break;
            }
        }
        Ok(u)
    }

    fn pathwise_segment(&mut self, u: TorusField, length: f64, z0: [f64; 2], z1: [f64; 2]) -> Result<TorusField> {
        let c = self.config;
        let model = c.model.flux_model();
        let u = if c.symmetrized {
            let half = self.diffuse(u, 0.5 * length)?;
            self.refresh(&half)?;
            let moved = transport(&half, model, c.xigrid, z0, z1, c.shift_kernel)?;
            self.diffuse(moved, 0.5 * length)?
        } else {
            self.refresh(&u)?;
            let moved = transport(&u, model, c.xigrid, z0, z1, c.shift_kernel)?;
            self.diffuse(moved, length)?
        };
        self.steps += 1;
        self.t += length;
        Ok(u)
    }
}

/// Integrates `u0` to `t_end` along `path`, recording every `record_every`.
pub fn run(config: &SolverConfig, path: &DrivingPath, u0: &TorusField) -> Result<Trajectory> {
    config.validate()?;
    if *u0.grid() != config.grid {
        return Err(Error::InvalidGrid("initial datum does not live on the solver grid".into()));
    }
    if path.dim() != config.grid.dim() {
        return Err(Error::InvalidParameter(format!(
            "path dimension {} differs from grid dimension {}",
            path.dim(),
            config.grid.dim()
        )));
    }
    if config.t_end > path.horizon() * (1.0 + 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "t_end = {} beyond the path horizon {}",
            config.t_end,
            path.horizon()
        )));
    }
    check_window(u0, &config.xigrid)?;

    // breakpoints: path knots and record times
    let t_end = config.t_end;
    let tiny = 1e-12 * t_end;
    let records: Vec<f64> = {
        let n = (t_end / config.record_every + 1e-9).floor() as usize;
        let mut r: Vec<f64> = (1..=n).map(|k| k as f64 * config.record_every).filter(|t| *t < t_end - tiny).collect();
        r.push(t_end);
        r
    };
    let mut breaks: Vec<f64> = path.knots().iter().copied().filter(|t| *t > tiny && *t < t_end - tiny).collect();
    breaks.extend(&records);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() <= tiny);

    let mut integ = Integrator {
        config,
        limits: Limits::new(&config.model, u0.min(), u0.max()),
        q_eps: 0.0,
        q_diss: 0.0,
        steps: 0,
        t: 0.0,
    };
    let norms0 = MonitorRow::of(0.0, u0, 0.0, 0.0)?;
    let mut traj = Trajectory {
        times: vec![0.0],
        snapshots: vec![u0.clone()],
        monitors: vec![norms0],
        warnings: Vec::new(),
        steps: 0,
    };
    let tol = config.tolerance();
    let mut u = u0.clone();
    let mut next_record = 0;
    let mut start = 0.0;
    for &stop in &breaks {
        let length = stop - start;
        u = match config.scheme {
            Scheme::Reference => integ.reference_segment(u, length, path.slope_at(0.5 * (start + stop)))?,
            Scheme::Pathwise => integ.pathwise_segment(u, length, path.eval(start), path.eval(stop))?,
        };
        integ.t = stop;
        if !u.is_finite() {
            let index = u.values().iter().position(|x| !x.is_finite()).unwrap_or(0);
            return Err(Error::NonFinite {
                index,
                value: u.values()[index],
            });
        }
        if next_record < records.len() && (stop - records[next_record]).abs() <= tiny {
            let row = MonitorRow::of(stop, &u, integ.q_eps, integ.q_diss)?;
            for (name, now, then) in [("L1", row.l1, norms0.l1), ("L2", row.l2, norms0.l2), ("Linf", row.linf, norms0.linf)] {
                if now > then + tol {
                    traj.warnings.push(format!("t = {stop}: {name} norm {now:e} exceeds initial {then:e} + {tol:e}"));
                }
            }
            if row.bv > norms0.bv * (1.0 + config.bv_tolerance) + 1e-12 {
                traj.warnings.push(format!("t = {stop}: BV {:e} exceeds initial {:e}", row.bv, norms0.bv));
            }
            traj.times.push(stop);
            traj.snapshots.push(u.clone());
            traj.monitors.push(row);
            next_record += 1;
        }
        start = stop;
    }
    traj.steps = integ.steps;
    Ok(traj)
}

/// `(||u_a(T) - u_b(T)||_1, ||u0_a - u0_b||_1)` on a common path.
pub fn l1_contraction_check(config: &SolverConfig, path: &DrivingPath, u0_a: &TorusField, u0_b: &TorusField) -> Result<(f64, f64)> {
    let rhs = u0_a.l1_distance(u0_b)?;
    let a = run(config, path, u0_a)?;
    let b = run(config, path, u0_b)?;
    Ok((a.final_state().l1_distance(b.final_state())?, rhs))
}
