//! Fourier-side averaging machinery: the damped transport-diffusion semigroup,
//! the split-up `u = u0 + u1 + Q`, and the two multiplier/integral lemmas.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kinetic::{KineticDensity, XiGrid};
use crate::model::{geometric_ladder, FluxModel};
use crate::paths::DrivingPath;
use crate::quadrature::CompositeGauss;
use crate::solvers::Trajectory;
use crate::torus_field::{SpectralPlan, TorusField, TorusGrid};

/// Scale of the diffusion symbol `n A n` in the multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// `(2 pi)^2 n^T A n`, the symbol of `-div(A D)` on the unit torus.
    Physical,
    /// Bare `n^T A n` as written in the Fourier formulas.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AveragingConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub theta: f64,
}

impl AveragingConfig {
    /// `mu = (lambda + 2) / (2 alpha)`, required below 2.
    pub fn mu2(&self) -> f64 {
        (self.lambda + 2.0) / (2.0 * self.alpha)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha = {} not in (0, 1]", self.alpha)));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::Config(format!("gamma = {} must be positive", self.gamma)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda = {} must be nonnegative", self.lambda)));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::Config(format!("theta = {} not in (0, 1]", self.theta)));
        }
        if self.mu2() >= 2.0 {
            return Err(Error::Config(format!(
                "(lambda + 2) / (2 alpha) = {} must be below 2",
                self.mu2()
            )));
        }
        Ok(())
    }
}

fn n_modulus(n: [i64; 2]) -> f64 {
    ((n[0] * n[0] + n[1] * n[1]) as f64).sqrt()
}

/// `omega_n = gamma (|n|^{2 alpha} + 1)`.
pub fn damping(n: [i64; 2], gamma: f64, alpha: f64) -> f64 {
    gamma * (n_modulus(n).powf(2.0 * alpha) + 1.0)
}

/// Symbol data of one velocity cell, reused across frequencies.
#[derive(Debug, Clone, Copy)]
struct Band {
    f: [f64; 2],
    a: [[f64; 2]; 2],
}

impl Band {
    fn at(model: &FluxModel, xi: f64) -> Self {
        Self {
            f: model.f(xi),
            a: model.a(xi),
        }
    }

    fn multiplier(&self, n: [i64; 2], dbeta: [f64; 2], dt: f64, gamma: f64, alpha: f64, conv: Convention) -> Complex64 {
        let nf = [n[0] as f64, n[1] as f64];
        let phase = -2.0 * PI * (self.f[0] * dbeta[0] * nf[0] + self.f[1] * dbeta[1] * nf[1]);
        let mut nan = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                nan += nf[i] * self.a[i][j] * nf[j];
            }
        }
        if conv == Convention::Physical {
            nan *= 4.0 * PI * PI;
        }
        let decay = (nan + damping(n, gamma, alpha)) * dt;
        Complex64::from_polar((-decay).exp(), phase)
    }
}

/// `exp(-2 pi i f(xi) . (dbeta * n) - (n A(xi) n + gamma(|n|^{2 alpha} + 1)) dt)`.
pub fn semigroup_multiplier(
    n: [i64; 2],
    xi: f64,
    model: &FluxModel,
    beta_increment: [f64; 2],
    dt: f64,
    gamma: f64,
    alpha: f64,
    conv: Convention,
) -> Complex64 {
    Band::at(model, xi).multiplier(n, beta_increment, dt, gamma, alpha, conv)
}

/// Fourier coefficients of every active band of a lifted field.
struct BandSpectra {
    bands: Vec<(usize, Vec<Complex64>)>,
}

impl BandSpectra {
    fn of(field: &TorusField, xi: XiGrid, plan: &SpectralPlan) -> Result<Self> {
        let kin = KineticDensity::lift(field, xi)?;
        let bands = kin
            .active_bands()
            .filter(|&j| kin.band(j).iter().any(|v| *v != 0.0))
            .map(|j| (j, plan.forward_values(kin.band(j))))
            .collect();
        Ok(Self { bands })
    }
}

/// Parameters shared by the split-up computations.
#[derive(Debug, Clone, Copy)]
pub struct SemigroupParams<'a> {
    pub model: &'a FluxModel,
    pub path: &'a DrivingPath,
    pub gamma: f64,
    pub alpha: f64,
    pub xigrid: XiGrid,
    pub convention: Convention,
}

fn check_mean_free(u: &TorusField) -> Result<()> {
    let mean = u.mean();
    if mean.abs() > 1e-12 * u.max_abs().max(1.0) {
        return Err(Error::NonZeroMean(mean));
    }
    Ok(())
}

/// `u0(t) = int S(0, t) chi_0 dxi`; the mean mode is set to exactly zero.
pub fn compute_u0(u0_field: &TorusField, params: &SemigroupParams, t: f64) -> Result<TorusField> {
    Ok(compute_u0_with_spectrum(u0_field, params, t)?.0)
}

/// [`compute_u0`] together with the Fourier coefficients it was built from.
pub fn compute_u0_with_spectrum(u0_field: &TorusField, params: &SemigroupParams, t: f64) -> Result<(TorusField, Vec<Complex64>)> {
    check_mean_free(u0_field)?;
    let grid = *u0_field.grid();
    let plan = SpectralPlan::new(grid);
    let spectra = BandSpectra::of(u0_field, params.xigrid, &plan)?;
    let dbeta = params.path.increment(0.0, t);
    let mut acc = vec![Complex64::new(0.0, 0.0); grid.len()];
    accumulate(&grid, &spectra, params, dbeta, t, 1.0, false, &mut acc);
    acc[0] = Complex64::new(0.0, 0.0);
    let field = TorusField::new(grid, plan.inverse_values(&acc))?;
    Ok((field, acc))
}

#[allow(clippy::too_many_arguments)]
fn accumulate(
    grid: &TorusGrid,
    spectra: &BandSpectra,
    params: &SemigroupParams,
    dbeta: [f64; 2],
    dt: f64,
    scale: f64,
    damped_weight: bool,
    acc: &mut [Complex64],
) {
    let dxi = params.xigrid.spacing();
    for (j, coeffs) in &spectra.bands {
        let band = Band::at(params.model, params.xigrid.center(*j));
        for (k, c) in coeffs.iter().enumerate() {
            let n = grid.frequency(k);
            let mut m = band.multiplier(n, dbeta, dt, params.gamma, params.alpha, params.convention);
            if damped_weight {
                m *= damping(n, params.gamma, params.alpha);
            }
            acc[k] += scale * dxi * m * c;
        }
    }
}

/// `u1(t_k) = int_0^{t_k} int gamma B S(s, t_k) chi(s) dxi ds` at every
/// snapshot time, trapezoid rule over the snapshots.
pub fn compute_u1(trajectory: &Trajectory, params: &SemigroupParams) -> Result<Vec<TorusField>> {
    if trajectory.snapshots.len() < 2 {
        return Err(Error::InvalidParameter("the u1 quadrature needs at least two snapshots".into()));
    }
    let grid = *trajectory.snapshots[0].grid();
    let plan = SpectralPlan::new(grid);
    let spectra: Vec<BandSpectra> = trajectory
        .snapshots
        .iter()
        .map(|u| BandSpectra::of(u, params.xigrid, &plan))
        .collect::<Result<_>>()?;
    let times = &trajectory.times;
    let mut out = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let mut acc = vec![Complex64::new(0.0, 0.0); grid.len()];
        for i in 0..=k {
            // trapezoid weight of node i on [t_0, t_k]
            let left = if i > 0 { times[i] - times[i - 1] } else { 0.0 };
            let right = if i < k { times[i + 1] - times[i] } else { 0.0 };
            let w = 0.5 * (left + right);
            if w == 0.0 {
                continue;
            }
            let dbeta = params.path.increment(times[i], t);
            accumulate(&grid, &spectra[i], params, dbeta, t - times[i], w, true, &mut acc);
        }
        acc[0] = Complex64::new(0.0, 0.0);
        out.push(TorusField::new(grid, plan.inverse_values(&acc))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitUp {
    pub gamma: f64,
    pub times: Vec<f64>,
    #[serde(skip)]
    pub u0_part: Vec<TorusField>,
    #[serde(skip)]
    pub u1_part: Vec<TorusField>,
    #[serde(skip)]
    pub q_part: Vec<TorusField>,
    pub u0_l2: Vec<f64>,
    pub u1_l2: Vec<f64>,
    pub q_l1: Vec<f64>,
    /// `max_t ||u0 + u1 + Q - u||_inf`.
    pub additivity_residual: f64,
    /// `max_t |hat u0(0, t)|`.
    pub u0_zero_mode: f64,
}

impl SplitUp {
    pub fn write_csv<W: Write>(&self, mut out: W, header: bool) -> Result<()> {
        if header {
            writeln!(out, "gamma,t,u0_l2,u1_l2,q_l1")?;
        }
        for k in 0..self.times.len() {
            writeln!(
                out,
                "{:e},{:e},{:e},{:e},{:e}",
                self.gamma, self.times[k], self.u0_l2[k], self.u1_l2[k], self.q_l1[k]
            )?;
        }
        Ok(())
    }

    /// `int_0^T ||u0(t)||_2^2 dt`, trapezoid over the snapshot times.
    pub fn u0_energy_integral(&self) -> f64 {
        self.times
            .windows(2)
            .zip(self.u0_l2.windows(2))
            .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] * v[0] + v[1] * v[1]))
            .sum()
    }
}

/// `u = u0 + u1 + Q` along a recorded trajectory; `Q` is the residual.
pub fn split_up(trajectory: &Trajectory, params: &SemigroupParams) -> Result<SplitUp> {
    let u_init = &trajectory.snapshots[0];
    check_mean_free(u_init)?;
    let u1_part = compute_u1(trajectory, params)?;
    let mut u0_part = Vec::with_capacity(u1_part.len());
    let mut q_part = Vec::with_capacity(u1_part.len());
    let (mut additivity, mut zero_mode) = (0.0f64, 0.0f64);
    for (k, &t) in trajectory.times.iter().enumerate() {
        let (u0, spectrum) = compute_u0_with_spectrum(u_init, params, t)?;
        zero_mode = zero_mode.max(spectrum[0].norm());
        let u = &trajectory.snapshots[k];
        let q = u.sub(&u0)?.sub(&u1_part[k])?;
        let back = u0.add(&u1_part[k])?.add(&q)?;
        additivity = additivity.max(back.sub(u)?.max_abs());
        u0_part.push(u0);
        q_part.push(q);
    }
    let l2 = |v: &Vec<TorusField>| v.iter().map(|f| f.lp_norm(2.0)).collect::<Result<Vec<_>>>();
    Ok(SplitUp {
        gamma: params.gamma,
        times: trajectory.times.clone(),
        u0_l2: l2(&u0_part)?,
        u1_l2: l2(&u1_part)?,
        q_l1: q_part.iter().map(|f| f.lp_norm(1.0)).collect::<Result<Vec<_>>>()?,
        u0_part,
        u1_part,
        q_part,
        additivity_residual: additivity,
        u0_zero_mode: zero_mode,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FracHeatCheck {
    pub alpha: f64,
    pub beta: f64,
    /// `(gamma, t, sup_n |n|^beta exp(-gamma t (|n|^{2 alpha} + 1)))`.
    pub values: Vec<(f64, f64, f64)>,
    /// `max value (gamma t)^{beta / (2 alpha)}` over the ladder.
    pub fitted_c: f64,
    pub violations: usize,
    /// Calculus constant `(beta / (2 alpha e))^{beta / (2 alpha)}`.
    pub analytic_c: f64,
    pub analytic_violations: usize,
}

/// Multiplier form of the fractional heat bound on `L^2`:
/// `sup_n |n|^beta e^{-gamma t (|n|^{2 alpha} + 1)} <= C (gamma t)^{-beta / (2 alpha)}`.
pub fn frac_heat_bound_check(alpha: f64, beta: f64, gammas: &[f64], times: &[f64], n_max: u64) -> Result<FracHeatCheck> {
    if !(alpha > 0.0 && alpha <= 1.0) || !(beta >= 0.0) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha}, beta = {beta}")));
    }
    if gammas.iter().chain(times).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter("gamma and t ladders must be positive".into()));
    }
    let r = beta / (2.0 * alpha);
    let mut values = Vec::new();
    for &g in gammas {
        for &t in times {
            let s = g * t;
            let sup = (0..=n_max)
                .map(|n| {
                    let nf = n as f64;
                    let pw = if beta == 0.0 { 1.0 } else { nf.powf(beta) };
                    pw * (-s * (nf.powf(2.0 * alpha) + 1.0)).exp()
                })
                .fold(0.0, f64::max);
            values.push((g, t, sup));
        }
    }
    let fitted_c = values.iter().map(|(g, t, v)| v * (g * t).powf(r)).fold(0.0, f64::max);
    let analytic_c = if beta == 0.0 { 1.0 } else { (r / std::f64::consts::E).powf(r) };
    let count = |c: f64| {
        values
            .iter()
            .filter(|(g, t, v)| *v > c * (g * t).powf(-r) * (1.0 + 1e-9))
            .count()
    };
    Ok(FracHeatCheck {
        alpha,
        beta,
        violations: count(fitted_c),
        analytic_violations: count(analytic_c),
        values,
        fitted_c,
        analytic_c,
    })
}

/// Inputs of the `phi` integral lemma with a one-dimensional `b`.
pub struct PhiLemmaCase<'a> {
    pub a: &'a dyn Fn(f64) -> f64,
    pub b: &'a dyn Fn(f64) -> f64,
    pub f: &'a dyn Fn(f64) -> f64,
    /// Interval carrying `f`; the xi integrals run over it.
    pub support: (f64, f64),
    pub delta: f64,
    pub iota: &'a dyn Fn(f64) -> f64,
    /// Largest admissible half-width of the `w` window.
    pub w_window: f64,
    /// Gauss panels per unit length of the xi support.
    pub quad_resolution: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhiLemmaResult {
    pub lhs: f64,
    pub rhs: f64,
    pub w_half_width: f64,
    pub tail_bound: f64,
}

/// Scans `eps` and `z` confirming `|{xi : |b - z|^2 + a <= eps}| <= iota(eps)`
/// up to the counting resolution `2 dxi`.
fn verify_envelope(case: &PhiLemmaCase) -> Result<()> {
    let (lo, hi) = case.support;
    let cells = 20_000;
    let h = (hi - lo) / cells as f64;
    let mids: Vec<(f64, f64)> = (0..cells)
        .map(|k| {
            let xi = lo + (k as f64 + 0.5) * h;
            ((case.b)(xi), (case.a)(xi))
        })
        .collect();
    let (bmin, bmax) = mids.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |m, (b, _)| (m.0.min(*b), m.1.max(*b)));
    let zs: Vec<f64> = (0..=40).map(|k| bmin + (bmax - bmin) * k as f64 / 40.0).collect();
    for eps in geometric_ladder(1e-4, 10.0, 11) {
        let bound = (case.iota)(eps);
        for &z in &zs {
            let measure = mids.iter().filter(|(b, a)| (b - z).powi(2) + a <= eps).count() as f64 * h;
            if measure > bound + 2.0 * h {
                return Err(Error::UnverifiedEnvelope { eps, measure, bound });
            }
        }
    }
    Ok(())
}

/// `||phi||_{L2}^2` against `sqrt(delta pi) / 4 int_0^inf e^{-tau/4} iota(tau / delta) dtau ||f||_2^2`.
pub fn phi_lemma_check(case: &PhiLemmaCase) -> Result<PhiLemmaResult> {
    if !(case.delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta = {} must be positive", case.delta)));
    }
    let (lo, hi) = case.support;
    if !(hi > lo) {
        return Err(Error::InvalidParameter(format!("empty support {:?}", case.support)));
    }
    verify_envelope(case)?;
    let gauss = CompositeGauss::new(16);
    let panels = ((hi - lo) * case.quad_resolution as f64).ceil().max(8.0) as usize;
    // xi nodes with the w-independent factor e^{-delta a} f
    let nodes: Vec<(f64, f64)> = gauss
        .points(lo, hi, panels)
        .into_iter()
        .map(|(xi, w)| ((case.b)(xi), w * (-case.delta * (case.a)(xi)).exp() * (case.f)(xi)))
        .collect();
    let f_l1: f64 = gauss.integrate(lo, hi, panels, |xi| (case.f)(xi).abs());
    let f_l2sq: f64 = gauss.integrate(lo, hi, panels, |xi| (case.f)(xi).powi(2));
    let phi_sq = |w: f64| {
        let s: Complex64 = nodes.iter().map(|(b, c)| Complex64::from_polar(*c, b * w)).sum();
        (-2.0 * w * w / case.delta).exp() * s.norm_sqr()
    };
    // |phi(w)|^2 <= e^{-2 w^2 / delta} ||f||_1^2, so the tail beyond W is
    // below ||f||_1^2 e^{-c W^2} / (c W) with c = 2 / delta
    let c = 2.0 / case.delta;
    let tail = |w: f64| f_l1 * f_l1 * (-c * w * w).exp() / (c * w);
    let mut half = case.delta.sqrt().max(1.0);
    let (lhs, tail_bound) = loop {
        let w_panels = ((2.0 * half) * 4.0).ceil().max(64.0) as usize;
        let lhs = gauss.integrate(-half, half, w_panels, phi_sq);
        let t = tail(half);
        if t <= 1e-8 * lhs || f_l1 == 0.0 {
            break (lhs, if f_l1 == 0.0 { 0.0 } else { t });
        }
        if half >= case.w_window {
            return Err(Error::WindowTooSmall {
                tail: t,
                tolerance: 1e-8 * lhs,
            });
        }
        half = (half * 1.25).min(case.w_window);
    };
    // tau = s^2 removes the square-root endpoint behaviour of typical envelopes
    let tau_integral = gauss.integrate(0.0, 24.0, 96, |s| 2.0 * s * (-s * s / 4.0).exp() * (case.iota)(s * s / case.delta));
    let rhs = (case.delta * PI).sqrt() / 4.0 * tau_integral * f_l2sq;
    Ok(PhiLemmaResult {
        lhs,
        rhs,
        w_half_width: half,
        tail_bound,
    })
}
