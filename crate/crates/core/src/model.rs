//! Flux and diffusion models: `F`, `f = F'`, `A`, its square root `sigma`, and
//! the primitives `beta_ik` (of `sigma_ik`) and `B_ij` (of `a_ij`), plus the
//! vanishing-viscosity regularization and the genuine-nonlinearity estimator.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quadrature::{linear_fit, CompositeGauss};

/// Symmetric matrix; only the leading `dim x dim` block is meaningful.
pub type Mat2 = [[f64; 2]; 2];

const ZERO: Mat2 = [[0.0; 2]; 2];

/// Componentwise flux `F^i`.
#[derive(Debug, Clone, PartialEq)]
pub enum Flux {
    Zero,
    /// `F^i(u) = c_i u`. Violates `F'(0) = 0`; kept for degeneracy checks.
    Linear([f64; 2]),
    /// `F^i(u) = |u|^{q_i} / q_i` with `q_i > 1`; `q = 2` is Burgers.
    Power([f64; 2]),
}

impl Flux {
    pub fn value(&self, axis: usize, u: f64) -> f64 {
        match self {
            Flux::Zero => 0.0,
            Flux::Linear(c) => c[axis] * u,
            Flux::Power(q) if q[axis] == 2.0 => 0.5 * u * u,
            Flux::Power(q) => u.abs().powf(q[axis]) / q[axis],
        }
    }

    pub fn derivative(&self, axis: usize, xi: f64) -> f64 {
        match self {
            Flux::Zero => 0.0,
            Flux::Linear(c) => c[axis],
            Flux::Power(q) => {
                if q[axis] == 2.0 {
                    xi
                } else if xi == 0.0 {
                    0.0
                } else {
                    xi.abs().powf(q[axis] - 1.0) * xi.signum()
                }
            }
        }
    }

    /// `int_0^u max(f, 0)`, the increasing part used by the Engquist-Osher flux.
    pub fn increasing_part(&self, axis: usize, u: f64) -> f64 {
        match self {
            Flux::Zero => 0.0,
            Flux::Linear(c) => c[axis].max(0.0) * u,
            Flux::Power(_) => {
                if u > 0.0 {
                    self.value(axis, u)
                } else {
                    0.0
                }
            }
        }
    }

    /// `int_0^u min(f, 0)`.
    pub fn decreasing_part(&self, axis: usize, u: f64) -> f64 {
        match self {
            Flux::Zero => 0.0,
            Flux::Linear(c) => c[axis].min(0.0) * u,
            Flux::Power(_) => {
                if u < 0.0 {
                    self.value(axis, u)
                } else {
                    0.0
                }
            }
        }
    }
}

/// Diffusion matrix `A(xi)`, symmetric positive semidefinite.
#[derive(Debug, Clone)]
pub enum Diffusion {
    Zero,
    /// `A = a I`.
    Isotropic(f64),
    /// `A(xi) = m |xi|^{m-1} I`, so `div(A(u) Du) = Laplacian(u^[m])`.
    Porous { m: f64 },
    Tabulated(Arc<DiffusionTable>),
}

impl Diffusion {
    pub fn matrix(&self, dim: usize, xi: f64) -> Mat2 {
        match self {
            Diffusion::Zero => ZERO,
            Diffusion::Isotropic(a) => diagonal(dim, *a),
            Diffusion::Porous { m } => diagonal(dim, porous_a(*m, xi)),
            Diffusion::Tabulated(t) => t.matrix(xi),
        }
    }

    pub fn sigma(&self, dim: usize, xi: f64) -> Mat2 {
        match self {
            Diffusion::Zero => ZERO,
            Diffusion::Isotropic(a) => diagonal(dim, a.sqrt()),
            Diffusion::Porous { m } => diagonal(dim, porous_a(*m, xi).sqrt()),
            Diffusion::Tabulated(t) => sqrt_psd(dim, &t.matrix(xi)),
        }
    }

    /// `beta_ik(xi) = int_0^xi sigma_ik`.
    pub fn beta(&self, dim: usize, i: usize, k: usize, xi: f64) -> f64 {
        match self {
            Diffusion::Zero => 0.0,
            Diffusion::Isotropic(a) => {
                if i == k {
                    a.sqrt() * xi
                } else {
                    0.0
                }
            }
            Diffusion::Porous { m } => {
                if i == k {
                    2.0 * m.sqrt() / (m + 1.0) * xi.abs().powf(0.5 * (m + 1.0)) * xi.signum()
                } else {
                    0.0
                }
            }
            Diffusion::Tabulated(t) => {
                debug_assert!(i < dim && k < dim);
                t.beta(i, k, xi)
            }
        }
    }

    /// `B_ij(xi) = int_0^xi a_ij`.
    pub fn primitive(&self, dim: usize, i: usize, j: usize, xi: f64) -> f64 {
        match self {
            Diffusion::Zero => 0.0,
            Diffusion::Isotropic(a) => {
                if i == j {
                    a * xi
                } else {
                    0.0
                }
            }
            Diffusion::Porous { m } => {
                if i == j {
                    xi.abs().powf(*m) * xi.signum()
                } else {
                    0.0
                }
            }
            Diffusion::Tabulated(t) => {
                debug_assert!(i < dim && j < dim);
                t.primitive(i, j, xi)
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Diffusion::Zero => true,
            Diffusion::Isotropic(a) => *a == 0.0,
            _ => false,
        }
    }

    pub fn is_diagonal(&self) -> bool {
        match self {
            Diffusion::Tabulated(t) => t.diagonal,
            _ => true,
        }
    }
}

fn porous_a(m: f64, xi: f64) -> f64 {
    if xi == 0.0 {
        0.0
    } else {
        m * xi.abs().powf(m - 1.0)
    }
}

fn diagonal(dim: usize, d: f64) -> Mat2 {
    let mut a = ZERO;
    for (i, row) in a.iter_mut().enumerate().take(dim) {
        row[i] = d;
    }
    a
}

/// Symmetric square root of a 2x2 positive semidefinite matrix,
/// `sqrt(A) = (A + sqrt(det) I) / sqrt(tr + 2 sqrt(det))`.
pub fn sqrt_psd(dim: usize, a: &Mat2) -> Mat2 {
    if dim == 1 {
        return [[a[0][0].max(0.0).sqrt(), 0.0], [0.0, 0.0]];
    }
    let det = (a[0][0] * a[1][1] - a[0][1] * a[1][0]).max(0.0);
    let s = det.sqrt();
    let t = (a[0][0] + a[1][1] + 2.0 * s).max(0.0).sqrt();
    if t == 0.0 {
        return ZERO;
    }
    [
        [(a[0][0] + s) / t, a[0][1] / t],
        [a[1][0] / t, (a[1][1] + s) / t],
    ]
}

/// Smallest and largest eigenvalue of the leading block.
pub fn eigen_range(dim: usize, a: &Mat2) -> (f64, f64) {
    if dim == 1 {
        return (a[0][0], a[0][0]);
    }
    let tr = a[0][0] + a[1][1];
    let d = ((a[0][0] - a[1][1]).powi(2) + 4.0 * a[0][1] * a[1][0]).max(0.0).sqrt();
    (0.5 * (tr - d), 0.5 * (tr + d))
}

/// `A` tabulated on a uniform node set through zero, linearly interpolated.
/// `B_ij` is the exact integral of the interpolant; `beta_ik` integrates the
/// square root of the interpolant with a Gauss rule per table interval.
#[derive(Debug)]
pub struct DiffusionTable {
    dim: usize,
    bound: f64,
    step: f64,
    zero_node: usize,
    a: Vec<Mat2>,
    beta: Vec<Mat2>,
    prim: Vec<Mat2>,
    diagonal: bool,
}

impl DiffusionTable {
    /// Tabulates `a_fn` on `[-bound, bound]` with `intervals` (even) cells.
    pub fn from_fn<F: Fn(f64) -> Mat2>(dim: usize, a_fn: F, bound: f64, intervals: usize) -> Result<Self> {
        if !(bound > 0.0) || intervals < 2 || intervals % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "table needs bound > 0 and an even interval count, got {bound}, {intervals}"
            )));
        }
        let step = 2.0 * bound / intervals as f64;
        let zero_node = intervals / 2;
        let a: Vec<Mat2> = (0..=intervals)
            .map(|k| {
                let mut m = a_fn(-bound + step * k as f64);
                let off = 0.5 * (m[0][1] + m[1][0]);
                m[0][1] = off;
                m[1][0] = off;
                m
            })
            .collect();
        let diagonal = a.iter().all(|m| m[0][1] == 0.0);
        let mut table = Self {
            dim,
            bound,
            step,
            zero_node,
            a,
            beta: Vec::new(),
            prim: Vec::new(),
            diagonal,
        };
        table.build_primitives();
        Ok(table)
    }

    fn build_primitives(&mut self) {
        let n = self.a.len();
        let gauss = CompositeGauss::new(8);
        let mut beta = vec![ZERO; n];
        let mut prim = vec![ZERO; n];
        // Integrate outward from the zero node in both directions.
        let integrate = |from: usize, to: usize, beta: &mut Vec<Mat2>, prim: &mut Vec<Mat2>| {
            let lo = from.min(to);
            let x0 = -self.bound + self.step * lo as f64;
            let x1 = x0 + self.step;
            let sign = if to > from { 1.0 } else { -1.0 };
            let mut db = ZERO;
            for (x, w) in gauss.panel(x0, x1) {
                let s = sqrt_psd(self.dim, &self.matrix(x));
                for i in 0..2 {
                    for k in 0..2 {
                        db[i][k] += w * s[i][k];
                    }
                }
            }
            for i in 0..2 {
                for j in 0..2 {
                    let trap = 0.5 * self.step * (self.a[from][i][j] + self.a[to][i][j]);
                    beta[to][i][j] = beta[from][i][j] + sign * db[i][j];
                    prim[to][i][j] = prim[from][i][j] + sign * trap;
                }
            }
        };
        for k in self.zero_node..n - 1 {
            integrate(k, k + 1, &mut beta, &mut prim);
        }
        for k in (1..=self.zero_node).rev() {
            integrate(k, k - 1, &mut beta, &mut prim);
        }
        self.beta = beta;
        self.prim = prim;
    }

    fn locate(&self, xi: f64) -> (usize, f64) {
        let pos = (xi + self.bound) / self.step;
        let last = self.a.len() - 2;
        let k = (pos.floor().max(0.0) as usize).min(last);
        (k, pos - k as f64)
    }

    /// Linear interpolant of `A`; constant extension outside the table.
    pub fn matrix(&self, xi: f64) -> Mat2 {
        let xi = xi.clamp(-self.bound, self.bound);
        let (k, t) = self.locate(xi);
        let mut out = ZERO;
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = (1.0 - t) * self.a[k][i][j] + t * self.a[k + 1][i][j];
            }
        }
        out
    }

    fn primitive_of(&self, table: &[Mat2], i: usize, j: usize, xi: f64, edge_rate: impl Fn(f64) -> f64) -> f64 {
        if xi > self.bound {
            return table[table.len() - 1][i][j] + edge_rate(self.bound) * (xi - self.bound);
        }
        if xi < -self.bound {
            return table[0][i][j] + edge_rate(-self.bound) * (xi + self.bound);
        }
        let (k, t) = self.locate(xi);
        if table.as_ptr() == self.prim.as_ptr() {
            // exact integral of the linear interpolant over [x_k, xi]
            let h = t * self.step;
            let a0 = self.a[k][i][j];
            let a1 = self.a[k + 1][i][j];
            table[k][i][j] + h * a0 + 0.5 * h * h * (a1 - a0) / self.step
        } else {
            let x0 = -self.bound + self.step * k as f64;
            let gauss = CompositeGauss::new(8);
            let part: f64 = gauss
                .panel(x0, xi)
                .map(|(x, w)| w * sqrt_psd(self.dim, &self.matrix(x))[i][j])
                .sum();
            table[k][i][j] + part
        }
    }

    pub fn beta(&self, i: usize, k: usize, xi: f64) -> f64 {
        self.primitive_of(&self.beta, i, k, xi, |x| sqrt_psd(self.dim, &self.matrix(x))[i][k])
    }

    pub fn primitive(&self, i: usize, j: usize, xi: f64) -> f64 {
        self.primitive_of(&self.prim, i, j, xi, |x| self.matrix(x)[i][j])
    }
}

/// Complete model of the equation: flux, diffusion and growth exponents.
#[derive(Debug, Clone)]
pub struct FluxModel {
    dim: usize,
    flux: Flux,
    diffusion: Diffusion,
    growth: [f64; 2],
    name: String,
}

impl FluxModel {
    pub fn new(dim: usize, flux: Flux, diffusion: Diffusion, name: impl Into<String>) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidParameter(format!("dimension {dim} not in {{1, 2}}")));
        }
        if let Flux::Power(q) = &flux {
            if q[..dim].iter().any(|&q| !(q > 1.0)) {
                return Err(Error::InvalidParameter(format!("power flux exponents must exceed 1: {q:?}")));
            }
        }
        let growth = default_growth(&flux, &diffusion, dim);
        Ok(Self {
            dim,
            flux,
            diffusion,
            growth,
            name: name.into(),
        })
    }

    /// Burgers: `F^i(u) = u^2 / 2` on every axis, `A = 0`.
    pub fn burgers(dim: usize) -> Result<Self> {
        Self::new(dim, Flux::Power([2.0, 2.0]), Diffusion::Zero, "burgers")
    }

    /// Porous medium `Laplacian(u^[m])`, optionally with a flux.
    pub fn porous_medium(dim: usize, m: f64, flux: Option<Flux>) -> Result<Self> {
        if !(m > 1.0) {
            return Err(Error::InvalidParameter(format!("porous medium exponent m = {m} must exceed 1")));
        }
        Self::new(dim, flux.unwrap_or(Flux::Zero), Diffusion::Porous { m }, format!("porous(m={m})"))
    }

    /// `F^i(u) = |u|^{q_i} / q_i`, `A = 0`.
    pub fn power_flux(exponents: &[f64]) -> Result<Self> {
        let dim = exponents.len();
        if dim == 0 || dim > 2 {
            return Err(Error::InvalidParameter("one or two exponents expected".into()));
        }
        let mut q = [2.0; 2];
        q[..dim].copy_from_slice(exponents);
        Self::new(dim, Flux::Power(q), Diffusion::Zero, format!("power({exponents:?})"))
    }

    /// `F^i(u) = c_i u`, no diffusion.
    pub fn linear_flux(speeds: &[f64]) -> Result<Self> {
        let dim = speeds.len();
        if dim == 0 || dim > 2 {
            return Err(Error::InvalidParameter("one or two speeds expected".into()));
        }
        let mut c = [0.0; 2];
        c[..dim].copy_from_slice(speeds);
        Self::new(dim, Flux::Linear(c), Diffusion::Zero, "linear")
    }

    /// Heat equation `du = a Laplacian(u) dt`.
    pub fn heat(dim: usize, a: f64) -> Result<Self> {
        if !(a >= 0.0) {
            return Err(Error::InvalidParameter(format!("diffusivity {a} < 0")));
        }
        Self::new(dim, Flux::Zero, Diffusion::Isotropic(a), "heat")
    }

    /// Overrides the growth exponents `p1, p2` of `|F''| + |A'|`.
    pub fn with_growth(mut self, p1: f64, p2: f64) -> Result<Self> {
        if !(p1 > -1.0 && p2 > -1.0) {
            return Err(Error::InvalidParameter(format!("growth exponents must exceed -1: {p1}, {p2}")));
        }
        self.growth = [p1, p2];
        Ok(self)
    }

    pub fn with_diffusion(mut self, diffusion: Diffusion) -> Self {
        self.growth = default_growth(&self.flux, &diffusion, self.dim);
        self.diffusion = diffusion;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn flux(&self) -> &Flux {
        &self.flux
    }

    pub fn diffusion(&self) -> &Diffusion {
        &self.diffusion
    }

    /// `(p1, p2)`: growth exponents of `|A'|` and `|F''|`.
    pub fn growth(&self) -> [f64; 2] {
        self.growth
    }

    /// `p0 = max(0, p1, p2)`.
    pub fn p0(&self) -> f64 {
        self.growth[0].max(self.growth[1]).max(0.0)
    }

    pub fn flux_value(&self, axis: usize, u: f64) -> f64 {
        self.flux.value(axis, u)
    }

    /// `f(xi) = F'(xi)`; unused axes are zero.
    pub fn f(&self, xi: f64) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (a, o) in out.iter_mut().enumerate().take(self.dim) {
            *o = self.flux.derivative(a, xi);
        }
        out
    }

    pub fn a(&self, xi: f64) -> Mat2 {
        self.diffusion.matrix(self.dim, xi)
    }

    pub fn sigma(&self, xi: f64) -> Mat2 {
        self.diffusion.sigma(self.dim, xi)
    }

    pub fn beta(&self, i: usize, k: usize, xi: f64) -> f64 {
        self.diffusion.beta(self.dim, i, k, xi)
    }

    pub fn bprim(&self, i: usize, j: usize, xi: f64) -> f64 {
        self.diffusion.primitive(self.dim, i, j, xi)
    }

    pub fn has_diffusion(&self) -> bool {
        !self.diffusion.is_zero()
    }

    fn sample_range(lo: f64, hi: f64) -> impl Iterator<Item = f64> {
        let n = 256;
        (0..=n).map(move |k| lo + (hi - lo) * k as f64 / n as f64).chain([0.0f64].into_iter().filter(move |z| *z >= lo && *z <= hi))
    }

    /// Largest `|f^i(xi)|` per axis over `[lo, hi]`.
    pub fn max_speed(&self, lo: f64, hi: f64) -> [f64; 2] {
        let mut out = [0.0f64; 2];
        for xi in Self::sample_range(lo, hi) {
            let f = self.f(xi);
            for a in 0..self.dim {
                out[a] = out[a].max(f[a].abs());
            }
        }
        out
    }

    /// Largest eigenvalue of `A(xi)` over `[lo, hi]`.
    pub fn max_diffusion_eig(&self, lo: f64, hi: f64) -> f64 {
        if self.diffusion.is_zero() {
            return 0.0;
        }
        Self::sample_range(lo, hi)
            .map(|xi| eigen_range(self.dim, &self.a(xi)).1)
            .fold(0.0, f64::max)
    }

    /// Checks `F'(0) = 0`, `A >= 0` and `sigma sigma^T = A` on sample points.
    pub fn check_assumptions(&self, samples: &[f64]) -> Result<()> {
        if self.f(0.0).iter().any(|v| *v != 0.0) {
            return Err(Error::InvalidParameter(format!("{}: F'(0) != 0", self.name)));
        }
        for &xi in samples {
            let a = self.a(xi);
            let (lo, _) = eigen_range(self.dim, &a);
            if lo < -1e-12 {
                return Err(Error::InvalidParameter(format!("{}: A({xi}) has eigenvalue {lo}", self.name)));
            }
            let s = self.sigma(xi);
            for i in 0..self.dim {
                for j in 0..self.dim {
                    let ss: f64 = (0..self.dim).map(|k| s[i][k] * s[j][k]).sum();
                    if (ss - a[i][j]).abs() > 1e-10 * (1.0 + a[i][j].abs()) {
                        return Err(Error::InvalidParameter(format!("{}: sigma sigma^T != A at {xi}", self.name)));
                    }
                }
            }
        }
        Ok(())
    }
}

fn default_growth(flux: &Flux, diffusion: &Diffusion, dim: usize) -> [f64; 2] {
    let p_a = match diffusion {
        Diffusion::Porous { m } => m - 2.0,
        _ => 0.0,
    };
    let p_f = match flux {
        Flux::Power(q) => q[..dim].iter().map(|q| q - 2.0).fold(f64::NEG_INFINITY, f64::max),
        _ => 0.0,
    };
    [p_a, p_f]
}

/// Normalized bump `exp(-1 / (1 - r^2))` on `(-1, 1)`.
fn bump(r: f64) -> f64 {
    if r.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r * r)).exp()
    }
}

fn bump_mass() -> f64 {
    CompositeGauss::new(16).integrate(-1.0, 1.0, 16, bump)
}

/// Vanishing-viscosity model: `A_eps = A * phi_width + eps I`.
#[derive(Debug, Clone)]
pub struct RegularizedModel {
    base: FluxModel,
    eps: f64,
    width: f64,
    mollified: FluxModel,
}

/// Default half-width of the velocity range covered by mollified tables.
pub const DEFAULT_TABLE_BOUND: f64 = 4.0;

impl RegularizedModel {
    pub fn new(base: FluxModel, eps: f64, width: f64) -> Result<Self> {
        Self::with_table(base, eps, width, DEFAULT_TABLE_BOUND, 8192)
    }

    pub fn with_table(base: FluxModel, eps: f64, width: f64, bound: f64, intervals: usize) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter(format!("regularization eps = {eps} must be positive")));
        }
        if !(width >= 0.0) {
            return Err(Error::InvalidParameter(format!("mollifier width {width} < 0")));
        }
        let needs_table = width > 0.0 && matches!(base.diffusion, Diffusion::Porous { .. } | Diffusion::Tabulated(_));
        let mollified = if needs_table {
            let dim = base.dim;
            let gauss = CompositeGauss::new(8);
            let norm = bump_mass() * width;
            let src = base.diffusion.clone();
            let a_fn = |xi: f64| {
                let mut acc = ZERO;
                let mut add = |lo: f64, hi: f64| {
                    for (s, w) in gauss.points(lo, hi, 8) {
                        let k = w * bump(s / width) / norm;
                        let m = src.matrix(dim, xi - s);
                        for i in 0..2 {
                            for j in 0..2 {
                                acc[i][j] += k * m[i][j];
                            }
                        }
                    }
                };
                // A may have a kink at 0, i.e. at s = xi.
                if xi.abs() < width {
                    add(-width, xi);
                    add(xi, width);
                } else {
                    add(-width, width);
                }
                acc
            };
            let table = DiffusionTable::from_fn(dim, a_fn, bound, intervals)?;
            let mut m = base.clone().with_diffusion(Diffusion::Tabulated(Arc::new(table)));
            m.growth = base.growth;
            m.name = format!("{}*phi({width})", base.name);
            m
        } else {
            base.clone()
        };
        Ok(Self {
            base,
            eps,
            width,
            mollified,
        })
    }

    pub fn base(&self) -> &FluxModel {
        &self.base
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    /// The model with mollified `A` but without the `eps I` floor.
    pub fn mollified(&self) -> &FluxModel {
        &self.mollified
    }

    pub fn a_eps(&self, xi: f64) -> Mat2 {
        let mut a = self.mollified.a(xi);
        for (i, row) in a.iter_mut().enumerate().take(self.base.dim) {
            row[i] += self.eps;
        }
        a
    }

    /// A plain [`FluxModel`] whose diffusion is `A_eps` including the floor.
    pub fn effective_model(&self) -> Result<FluxModel> {
        let dim = self.base.dim;
        let diffusion = match &self.mollified.diffusion {
            Diffusion::Zero => Diffusion::Isotropic(self.eps),
            Diffusion::Isotropic(a) => Diffusion::Isotropic(a + self.eps),
            _ => {
                let this = self.clone();
                let table = DiffusionTable::from_fn(dim, move |xi| this.a_eps(xi), DEFAULT_TABLE_BOUND, 8192)?;
                Diffusion::Tabulated(Arc::new(table))
            }
        };
        let mut m = self.base.clone().with_diffusion(diffusion);
        m.growth = self.base.growth;
        m.name = format!("{}+{}I", self.mollified.name, self.eps);
        Ok(m)
    }
}

/// `|f(xi) sigma - z|^2 + sigma A(xi) sigma` with the componentwise product.
fn sublevel_value(model: &FluxModel, sigma: &[f64; 2], z: &[f64; 2], xi: f64) -> f64 {
    let f = model.f(xi);
    let a = model.a(xi);
    let d = model.dim;
    let mut v = 0.0;
    for i in 0..d {
        v += (f[i] * sigma[i] - z[i]).powi(2);
        for j in 0..d {
            v += a[i][j] * sigma[i] * sigma[j];
        }
    }
    v
}

fn to_pair(v: &[f64], dim: usize) -> Result<[f64; 2]> {
    if v.len() < dim {
        return Err(Error::LengthMismatch { expected: dim, got: v.len() });
    }
    let mut out = [0.0; 2];
    out[..dim].copy_from_slice(&v[..dim]);
    Ok(out)
}

fn check_window(window: (f64, f64), resolution: usize) -> Result<()> {
    if !(window.1 > window.0) {
        return Err(Error::InvalidParameter(format!("empty velocity window {window:?}")));
    }
    if resolution < 1000 {
        return Err(Error::InvalidParameter(format!("resolution {resolution} below 1000")));
    }
    Ok(())
}

/// Lebesgue measure of `{xi in window : |f(xi) sigma - z|^2 + sigma A sigma <= eps}`
/// by midpoint counting on `resolution` cells.
pub fn sublevel_measure(
    model: &FluxModel,
    sigma_dir: &[f64],
    z: &[f64],
    eps: f64,
    window: (f64, f64),
    resolution: usize,
) -> Result<f64> {
    check_window(window, resolution)?;
    let sigma = to_pair(sigma_dir, model.dim)?;
    let norm: f64 = sigma.iter().map(|s| s * s).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidParameter(format!("direction has norm {norm}")));
    }
    let z = to_pair(z, model.dim)?;
    let h = (window.1 - window.0) / resolution as f64;
    let count = (0..resolution)
        .filter(|&j| sublevel_value(model, &sigma, &z, window.0 + (j as f64 + 0.5) * h) <= eps)
        .count();
    Ok(count as f64 * h)
}

/// Settings of [`estimate_theta`].
#[derive(Debug, Clone)]
pub struct ThetaOptions {
    pub sigma_samples: usize,
    pub z_samples: usize,
    pub eps_ladder: Vec<f64>,
    pub xi_window: (f64, f64),
    pub resolution: usize,
}

impl ThetaOptions {
    /// Nine-point geometric ladder over `[1e-3, 1e-1]`.
    pub fn new(xi_window: (f64, f64)) -> Self {
        Self {
            sigma_samples: 16,
            z_samples: 21,
            eps_ladder: geometric_ladder(1e-3, 1e-1, 9),
            xi_window,
            resolution: 200_000,
        }
    }

    /// Window `[-bound - 1, bound + 1]` for data with `||u0||_inf = bound`.
    pub fn for_data_bound(bound: f64) -> Self {
        Self::new((-bound - 1.0, bound + 1.0))
    }
}

pub fn geometric_ladder(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let r = (hi / lo).ln() / (points - 1) as f64;
    (0..points).map(|k| lo * (r * k as f64).exp()).collect()
}

/// Fitted genuine-nonlinearity exponent.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaEstimate {
    pub theta_hat: f64,
    pub constant_hat: f64,
    pub fit_r2: f64,
    pub eps_ladder: Vec<f64>,
    /// Worst-case sublevel measure per ladder point.
    pub measures: Vec<f64>,
    /// Twice the fitted log-log slope, before clamping.
    pub raw_theta: f64,
    /// Set when `raw_theta > 1` and the estimate was clamped to 1.
    pub clamped: bool,
    /// Half-width of the sampled `z` box, `2 max |f|` over the window.
    pub z_box: f64,
}

/// Fits `log(measure) = (theta / 2) log(eps) + log(C)` over the worst case
/// of sampled directions and shifts `z` in `[-2 max|f|, 2 max|f|]^N`.
pub fn estimate_theta(model: &FluxModel, opts: &ThetaOptions) -> Result<ThetaEstimate> {
    check_window(opts.xi_window, opts.resolution)?;
    let ladder = &opts.eps_ladder;
    if ladder.len() < 5 {
        return Err(Error::InvalidParameter("eps ladder needs at least 5 points".into()));
    }
    let (lo, hi) = ladder
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(l, h), &e| (l.min(e), h.max(e)));
    if !(lo > 0.0) || hi / lo < 100.0 - 1e-9 {
        return Err(Error::InvalidParameter("eps ladder must be positive and span two decades".into()));
    }
    let dim = model.dim;
    let (w0, w1) = opts.xi_window;
    let h = (w1 - w0) / opts.resolution as f64;
    let xis: Vec<f64> = (0..opts.resolution).map(|j| w0 + (j as f64 + 0.5) * h).collect();
    let fs: Vec<[f64; 2]> = xis.iter().map(|&x| model.f(x)).collect();
    let z_box = 2.0 * fs.iter().flat_map(|f| f[..dim].iter()).fold(0.0f64, |m, v| m.max(v.abs()));

    let sigmas: Vec<[f64; 2]> = if dim == 1 {
        vec![[1.0, 0.0], [-1.0, 0.0]]
    } else {
        let n = opts.sigma_samples.max(4);
        (0..n)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                [t.cos(), t.sin()]
            })
            .collect()
    };
    let zn = if z_box == 0.0 { 1 } else { opts.z_samples.max(1) | 1 };
    let z_axis: Vec<f64> = (0..zn)
        .map(|k| if zn == 1 { 0.0 } else { -z_box + 2.0 * z_box * k as f64 / (zn - 1) as f64 })
        .collect();
    let zs: Vec<[f64; 2]> = if dim == 1 {
        z_axis.iter().map(|&z| [z, 0.0]).collect()
    } else {
        z_axis.iter().flat_map(|&a| z_axis.iter().map(move |&b| [a, b])).collect()
    };

    let mut worst = vec![0.0f64; ladder.len()];
    let mut values = vec![0.0; xis.len()];
    for sigma in &sigmas {
        let quad: Vec<f64> = xis
            .iter()
            .map(|&x| {
                let a = model.a(x);
                (0..dim)
                    .flat_map(|i| (0..dim).map(move |j| (i, j)))
                    .map(|(i, j)| a[i][j] * sigma[i] * sigma[j])
                    .sum()
            })
            .collect();
        for z in &zs {
            for (j, v) in values.iter_mut().enumerate() {
                let mut s = quad[j];
                for i in 0..dim {
                    s += (fs[j][i] * sigma[i] - z[i]).powi(2);
                }
                *v = s;
            }
            for (e, w) in ladder.iter().zip(worst.iter_mut()) {
                let m = values.iter().filter(|v| **v <= *e).count() as f64 * h;
                *w = w.max(m);
            }
        }
    }

    if worst.iter().all(|m| *m == 0.0) {
        return Err(Error::EmptySublevel);
    }
    let span = w1 - w0;
    let (xs, ys): (Vec<f64>, Vec<f64>) = ladder
        .iter()
        .zip(&worst)
        .filter(|(_, m)| **m > 0.0)
        .map(|(e, m)| (e.ln(), m.ln()))
        .unzip();
    let smallest = ladder
        .iter()
        .zip(&worst)
        .min_by(|a, b| a.0.total_cmp(b.0))
        .map(|(_, m)| *m)
        .unwrap_or(0.0);
    if smallest >= 0.999 * span {
        return Err(Error::DegenerateFlux(format!(
            "measure saturates the window ({smallest:.4} of {span:.4}) at the smallest eps"
        )));
    }
    if xs.len() < 5 {
        return Err(Error::EmptySublevel);
    }
    let (slope, intercept, r2) = linear_fit(&xs, &ys);
    let raw_theta = 2.0 * slope;
    if raw_theta <= 0.05 {
        return Err(Error::DegenerateFlux(format!("fitted theta {raw_theta:.4}")));
    }
    Ok(ThetaEstimate {
        theta_hat: raw_theta.min(1.0),
        constant_hat: intercept.exp(),
        fit_r2: r2,
        eps_ladder: ladder.clone(),
        measures: worst,
        raw_theta,
        clamped: raw_theta > 1.0,
        z_box,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(n: usize, lo: f64, hi: f64) -> Vec<f64> {
        // deterministic quasi-random points
        (0..n)
            .map(|k| lo + (hi - lo) * ((k as f64 * 0.618_033_988_749_895).fract()))
            .collect()
    }

    #[test]
    fn burgers_has_no_diffusion() {
        let m = FluxModel::burgers(1).unwrap();
        for xi in [-2.0, -0.3, 0.0, 1.7] {
            assert_eq!(m.f(xi)[0], xi);
            assert_eq!(m.a(xi)[0][0], 0.0);
            assert_eq!(m.sigma(xi)[0][0], 0.0);
            assert_eq!(m.beta(0, 0, xi), 0.0);
        }
        let m2 = FluxModel::burgers(2).unwrap();
        assert_eq!(m2.f(0.5), [0.5, 0.5]);
        assert_eq!(m.growth(), [0.0, 0.0]);
    }

    #[test]
    fn porous_medium_closed_forms() {
        let m = FluxModel::porous_medium(1, 2.0, None).unwrap();
        let gauss = CompositeGauss::new(16);
        for xi in [-1.3, -0.2, 0.0, 0.5, 2.0] {
            assert!((m.a(xi)[0][0] - 2.0 * xi.abs()).abs() < 1e-15);
            assert!((m.sigma(xi)[0][0] - (2.0 * xi.abs()).sqrt()).abs() < 1e-15);
            let closed = 2.0 * 2f64.sqrt() / 3.0 * xi.abs().powf(1.5) * xi.signum();
            assert!((m.beta(0, 0, xi) - closed).abs() < 1e-14);
            // substitute s = t^2 to remove the square-root endpoint singularity
            let r = xi.abs().sqrt();
            let quad = xi.signum() * gauss.integrate(0.0, r, 64, |t| (2.0f64).sqrt() * t * 2.0 * t);
            assert!((m.beta(0, 0, xi) - quad).abs() < 1e-8);
            assert!((m.bprim(0, 0, xi) - xi * xi.abs()).abs() < 1e-14);
        }
        assert_eq!(m.growth()[0], 0.0);
        assert!(FluxModel::porous_medium(1, 1.0, None).is_err());
        assert!(FluxModel::porous_medium(1, 0.5, None).is_err());
    }

    #[test]
    fn sigma_squares_to_a_on_samples() {
        let xs = samples(1000, -3.0, 3.0);
        for model in [
            FluxModel::porous_medium(2, 3.0, Some(Flux::Power([2.0, 2.0]))).unwrap(),
            FluxModel::heat(2, 0.7).unwrap(),
            FluxModel::burgers(1).unwrap(),
        ] {
            model.check_assumptions(&xs).unwrap();
        }
        let anis = DiffusionTable::from_fn(
            2,
            |xi| {
                let s = 1.0 + xi * xi;
                [[2.0 * s, 0.5 * s], [0.5 * s, 1.0 * s]]
            },
            4.0,
            512,
        )
        .unwrap();
        let model = FluxModel::new(2, Flux::Power([2.0, 3.0]), Diffusion::Tabulated(Arc::new(anis)), "anis").unwrap();
        model.check_assumptions(&xs).unwrap();
        assert!(FluxModel::linear_flux(&[1.0]).unwrap().check_assumptions(&xs).is_err());
    }

    #[test]
    fn tabulated_primitives_match_quadrature() {
        let table = DiffusionTable::from_fn(
            2,
            |xi| {
                let s = 1.0 + xi.sin().powi(2);
                [[s, 0.3 * xi.cos()], [0.3 * xi.cos(), 2.0 * s]]
            },
            3.0,
            2048,
        )
        .unwrap();
        let gauss = CompositeGauss::new(8);
        for xi in [-2.7, -1.0, -0.001, 0.0, 0.4, 2.9] {
            for i in 0..2 {
                for k in 0..2 {
                    let q = gauss.integrate(0.0, xi, 2000, |s| sqrt_psd(2, &table.matrix(s))[i][k]);
                    assert!((table.beta(i, k, xi) - q).abs() < 1e-8, "beta {i}{k} at {xi}");
                    let qa = gauss.integrate(0.0, xi, 2000, |s| table.matrix(s)[i][k]);
                    assert!((table.primitive(i, k, xi) - qa).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn beta_nondecreasing_for_nonnegative_sigma() {
        let m = FluxModel::porous_medium(1, 3.0, None).unwrap();
        let xs: Vec<f64> = (0..=400).map(|k| -2.0 + 0.01 * k as f64).collect();
        for w in xs.windows(2) {
            assert!(m.beta(0, 0, w[1]) >= m.beta(0, 0, w[0]));
        }
    }

    #[test]
    fn regularize_zero_diffusion_is_eps_identity() {
        let r = RegularizedModel::new(FluxModel::burgers(2).unwrap(), 0.1, 0.05).unwrap();
        for xi in [-1.0, 0.0, 2.0] {
            let a = r.a_eps(xi);
            assert_eq!(a, [[0.1, 0.0], [0.0, 0.1]]);
        }
        assert!(RegularizedModel::new(FluxModel::burgers(1).unwrap(), 0.0, 0.1).is_err());
        assert!(RegularizedModel::new(FluxModel::burgers(1).unwrap(), -1.0, 0.1).is_err());
    }

    #[test]
    fn mollified_porous_converges_monotonically() {
        let base = FluxModel::porous_medium(1, 2.0, None).unwrap();
        let eps = 0.01;
        let mut prev = f64::INFINITY;
        for width in [3.0, 2.0, 1.5, 1.2, 0.5, 0.1] {
            let r = RegularizedModel::new(base.clone(), eps, width).unwrap();
            let v = r.a_eps(1.0)[0][0];
            assert!(v <= prev + 1e-12, "width {width}: {v} > {prev}");
            assert!(v >= 2.0 + eps - 1e-9);
            prev = v;
        }
        assert!((prev - (2.0 + eps)).abs() < 1e-6);
    }

    #[test]
    fn regularized_is_uniformly_elliptic_and_ordered() {
        let base = FluxModel::porous_medium(2, 2.0, Some(Flux::Power([2.0, 2.0]))).unwrap();
        let r1 = RegularizedModel::new(base.clone(), 0.01, 0.05).unwrap();
        let r2 = RegularizedModel::new(base, 0.02, 0.05).unwrap();
        for xi in samples(1000, -3.5, 3.5) {
            let a1 = r1.a_eps(xi);
            let (lo, _) = eigen_range(2, &a1);
            assert!(lo >= 0.01 - 1e-12);
            let a2 = r2.a_eps(xi);
            let diff = [[a2[0][0] - a1[0][0], a2[0][1] - a1[0][1]], [a2[1][0] - a1[1][0], a2[1][1] - a1[1][1]]];
            assert!(eigen_range(2, &diff).0 >= -1e-12);
        }
    }

    #[test]
    fn sublevel_measure_closed_forms() {
        let burgers = FluxModel::burgers(1).unwrap();
        let m = sublevel_measure(&burgers, &[1.0], &[0.0], 0.01, (-2.0, 2.0), 400_000).unwrap();
        assert!((m - 0.2).abs() < 2e-5, "{m}");
        let linear = FluxModel::linear_flux(&[0.7]).unwrap();
        let m = sublevel_measure(&linear, &[1.0], &[0.7], 0.01, (-2.0, 2.0), 1000).unwrap();
        assert!((m - 4.0).abs() < 1e-12);
        let porous = FluxModel::porous_medium(1, 2.0, None).unwrap();
        let m = sublevel_measure(&porous, &[1.0], &[0.0], 0.01, (-2.0, 2.0), 400_000).unwrap();
        assert!((m - 0.01).abs() < 2e-5, "{m}");
        assert!(sublevel_measure(&porous, &[1.0], &[0.0], 0.01, (1.0, 1.0), 1000).is_err());
        assert!(sublevel_measure(&porous, &[1.0], &[0.0], 0.01, (-1.0, 1.0), 0).is_err());
        assert!(sublevel_measure(&porous, &[0.5], &[0.0], 0.01, (-1.0, 1.0), 1000).is_err());
    }

    #[test]
    fn theta_for_reference_models() {
        let opts = ThetaOptions::for_data_bound(1.0);
        let burgers = estimate_theta(&FluxModel::burgers(1).unwrap(), &opts).unwrap();
        assert!((burgers.theta_hat - 1.0).abs() < 0.1, "{burgers:?}");
        assert!(!burgers.clamped);

        let err = estimate_theta(&FluxModel::linear_flux(&[1.0]).unwrap(), &opts).unwrap_err();
        assert!(matches!(err, Error::DegenerateFlux(_)), "{err}");

        let porous = estimate_theta(&FluxModel::porous_medium(1, 2.0, None).unwrap(), &opts).unwrap();
        assert_eq!(porous.theta_hat, 1.0);
        assert!(porous.clamped && (porous.raw_theta - 2.0).abs() < 0.1);
        assert_eq!(porous.z_box, 0.0);
    }

    #[test]
    fn theta_errors_are_distinct() {
        let mut opts = ThetaOptions::new((5.0, 6.0));
        opts.resolution = 1000;
        // Porous with F = 0: sigma A sigma = 2|xi| >= 10 on [5, 6].
        let err = estimate_theta(&FluxModel::porous_medium(1, 2.0, None).unwrap(), &opts).unwrap_err();
        assert!(matches!(err, Error::EmptySublevel));
        opts.eps_ladder = vec![0.1, 0.2, 0.3, 0.4, 0.5];
        assert!(matches!(
            estimate_theta(&FluxModel::burgers(1).unwrap(), &opts),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn theta_symmetric_under_direction_flip() {
        let model = FluxModel::porous_medium(2, 2.0, Some(Flux::Power([2.0, 3.0]))).unwrap();
        for (s, z) in [([0.6, 0.8], [0.3, -0.2]), ([1.0, 0.0], [0.1, 0.0])] {
            for eps in [1e-3, 1e-2, 1e-1] {
                let a = sublevel_measure(&model, &s, &z, eps, (-2.0, 2.0), 20_000).unwrap();
                let b = sublevel_measure(&model, &[-s[0], -s[1]], &[-z[0], -z[1]], eps, (-2.0, 2.0), 20_000).unwrap();
                assert_eq!(a, b);
            }
        }
    }
}
