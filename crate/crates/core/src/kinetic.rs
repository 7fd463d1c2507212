//! Kinetic function, exact-occupancy lifting onto a velocity grid, and the
//! measure and mollification estimates built on it.

use std::ops::Range;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::FluxModel;
use crate::torus_field::{TorusField, TorusGrid};

/// `chi(u, xi)`: `+1` on `0 <= xi <= u`, `-1` on `u <= xi <= 0`, else `0`.
///
/// At `u = xi = 0` both sign conventions meet; `0` is returned.
pub fn chi(u: f64, xi: f64) -> i8 {
    if u == 0.0 && xi == 0.0 {
        0
    } else if 0.0 <= xi && xi <= u {
        1
    } else if u <= xi && xi <= 0.0 {
        -1
    } else {
        0
    }
}

/// Uniform velocity grid with `0` on a cell boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct XiGrid {
    xi_min: f64,
    xi_max: f64,
    cells: usize,
    zero: usize,
}

impl XiGrid {
    pub fn new(xi_min: f64, xi_max: f64, cells: usize) -> Result<Self> {
        if !(xi_min < 0.0 && xi_max > 0.0) || !xi_min.is_finite() || !xi_max.is_finite() {
            return Err(Error::InvalidGrid(format!("velocity window [{xi_min}, {xi_max}] must contain 0 inside")));
        }
        if cells < 2 {
            return Err(Error::InvalidGrid(format!("{cells} velocity cells")));
        }
        let h = (xi_max - xi_min) / cells as f64;
        let z = -xi_min / h;
        let zero = z.round();
        if (z - zero).abs() > 1e-9 || zero < 1.0 || zero >= cells as f64 {
            return Err(Error::InvalidGrid(format!(
                "0 is not a cell boundary of [{xi_min}, {xi_max}] with {cells} cells"
            )));
        }
        Ok(Self {
            xi_min,
            xi_max,
            cells,
            zero: zero as usize,
        })
    }

    /// `[-bound, bound]` split into an even number of cells.
    pub fn symmetric(bound: f64, cells: usize) -> Result<Self> {
        if cells % 2 != 0 {
            return Err(Error::InvalidGrid(format!("symmetric velocity grid needs an even cell count, got {cells}")));
        }
        Self::new(-bound, bound, cells)
    }

    pub fn xi_min(&self) -> f64 {
        self.xi_min
    }

    pub fn xi_max(&self) -> f64 {
        self.xi_max
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn spacing(&self) -> f64 {
        (self.xi_max - self.xi_min) / self.cells as f64
    }

    /// Index of the first cell above `0`.
    pub fn zero_index(&self) -> usize {
        self.zero
    }

    pub fn lower(&self, j: usize) -> f64 {
        // anchored at 0 so band edges are exact multiples of the spacing
        (j as f64 - self.zero as f64) * self.spacing()
    }

    pub fn center(&self, j: usize) -> f64 {
        (j as f64 + 0.5 - self.zero as f64) * self.spacing()
    }

    /// Cell index containing `v`, clamped to the grid.
    pub fn locate(&self, v: f64) -> usize {
        let j = (v / self.spacing()).floor() + self.zero as f64;
        j.clamp(0.0, (self.cells - 1) as f64) as usize
    }

    fn check(&self, v: f64) -> Result<()> {
        let slack = 1e-12 * (self.xi_max - self.xi_min);
        if v < self.xi_min - slack || v > self.xi_max + slack || !v.is_finite() {
            return Err(Error::XiWindow {
                value: v,
                min: self.xi_min,
                max: self.xi_max,
            });
        }
        Ok(())
    }

    /// Average of `chi(u, .)` over cell `j`.
    pub fn occupancy(&self, u: f64, j: usize) -> f64 {
        let h = self.spacing();
        let lo = self.lower(j);
        if j >= self.zero {
            ((u - lo) / h).clamp(0.0, 1.0)
        } else {
            -((lo + h - u) / h).clamp(0.0, 1.0)
        }
    }
}

/// Velocity-cell averages of `chi(u(x), xi)`, stored band by band.
#[derive(Debug, Clone, PartialEq)]
pub struct KineticDensity {
    grid: TorusGrid,
    xi: XiGrid,
    occ: Vec<f64>,
    active: Range<usize>,
}

/// Kernel used to translate a velocity band in space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKernel {
    /// Exact cell averaging of the translated piecewise-constant band.
    CellAverage,
    /// Fourier phase shift.
    Spectral,
    /// Offsets rounded to whole cells, applied as an index rotation. Inside a
    /// run each band's rounding is taken against the absolute path value, so
    /// rounding errors stay below half a cell instead of accumulating.
    Rounded,
}

impl KineticDensity {
    pub fn lift(field: &TorusField, xi: XiGrid) -> Result<Self> {
        let (lo, hi) = (field.min(), field.max());
        xi.check(lo)?;
        xi.check(hi)?;
        let grid = *field.grid();
        let first = xi.locate(lo.min(0.0));
        let last = xi.locate(hi.max(0.0));
        let active = first..(last + 1).max(first + 1);
        let len = grid.len();
        let mut occ = vec![0.0; len * xi.cells()];
        for j in active.clone() {
            let band = &mut occ[j * len..(j + 1) * len];
            for (o, &u) in band.iter_mut().zip(field.values()) {
                *o = xi.occupancy(u, j);
            }
        }
        Ok(Self { grid, xi, occ, active })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn xi_grid(&self) -> &XiGrid {
        &self.xi
    }

    /// Bands that may be non-zero.
    pub fn active_bands(&self) -> Range<usize> {
        self.active.clone()
    }

    pub fn band(&self, j: usize) -> &[f64] {
        let len = self.grid.len();
        &self.occ[j * len..(j + 1) * len]
    }

    pub fn band_field(&self, j: usize) -> TorusField {
        TorusField::from_parts_unchecked(self.grid, self.band(j).to_vec())
    }

    /// `u(x) = sum_j dxi * occ_j(x)`.
    pub fn reconstruct(&self) -> TorusField {
        let len = self.grid.len();
        let h = self.xi.spacing();
        let mut out = vec![0.0; len];
        for j in self.active.clone() {
            for (o, b) in out.iter_mut().zip(self.band(j)) {
                *o += b;
            }
        }
        out.iter_mut().for_each(|v| *v *= h);
        TorusField::from_parts_unchecked(self.grid, out)
    }

    /// Translates band `j` by `offset(xi_j)`, the exact solution of the free
    /// transport `d chi + f(xi) . D chi dz = 0` over one increment.
    pub fn transport<F: Fn(f64) -> [f64; 2]>(&mut self, offset: F, kernel: ShiftKernel) {
        let len = self.grid.len();
        for j in self.active.clone() {
            let o = offset(self.xi.center(j));
            if o == [0.0; 2] {
                continue;
            }
            let band = self.band_field(j);
            let moved = match kernel {
                ShiftKernel::CellAverage => band.cell_average_shift(&o),
                ShiftKernel::Spectral => band.spectral_shift(&o),
                ShiftKernel::Rounded => {
                    let m = self.grid.cells() as f64;
                    let whole = [(o[0] * m).round() / m, (o[1] * m).round() / m];
                    if whole == [0.0; 2] {
                        continue;
                    }
                    band.cell_average_shift(&whole)
                }
            };
            self.occ[j * len..(j + 1) * len].copy_from_slice(moved.values());
        }
    }
}

/// Dissipation `sum_x |u|^p sum_k (sum_i D_i beta_ik(u))^2 dx^N` with centered
/// differences of the composed fields `beta_ik(u(.))`.
pub fn dissipation_mass(field: &TorusField, model: &FluxModel, weight_p: f64) -> f64 {
    if !model.has_diffusion() {
        return 0.0;
    }
    let g = field.grid();
    let d = g.dim();
    let h = g.spacing();
    let u = field.values();
    let mut composed = vec![vec![0.0; g.len()]; d * d];
    for i in 0..d {
        for k in 0..d {
            for (c, &v) in composed[i * d + k].iter_mut().zip(u) {
                *c = model.beta(i, k, v);
            }
        }
    }
    let mut total = 0.0;
    for x in 0..g.len() {
        let w = weight(u[x], weight_p);
        if w == 0.0 {
            continue;
        }
        let mut s = 0.0;
        for k in 0..d {
            let mut div = 0.0;
            for i in 0..d {
                let b = &composed[i * d + k];
                div += (b[g.neighbor(x, i, 1)] - b[g.neighbor(x, i, -1)]) / (2.0 * h);
            }
            s += div * div;
        }
        total += w * s;
    }
    total * g.cell_volume()
}

/// `sum_x |u|^p eps |Du|^2 dx^N` with one-sided (forward) differences, the
/// dissipation of the discrete `eps` Laplacian.
pub fn viscous_mass(field: &TorusField, eps: f64, weight_p: f64) -> f64 {
    let g = field.grid();
    let h = g.spacing();
    let u = field.values();
    let mut total = 0.0;
    for x in 0..g.len() {
        let w = weight(u[x], weight_p);
        if w == 0.0 {
            continue;
        }
        let s: f64 = (0..g.dim())
            .map(|a| ((u[g.neighbor(x, a, 1)] - u[x]) / h).powi(2))
            .sum();
        total += w * s;
    }
    eps * total * g.cell_volume()
}

/// `|u|^p` with `0^0 = 1`; singular weights at `u = 0` drop that cell.
fn weight(u: f64, p: f64) -> f64 {
    if p == 0.0 {
        1.0
    } else if u == 0.0 {
        0.0
    } else {
        u.abs().powf(p)
    }
}

/// Integrated `L^{p+2}` balance against the weighted kinetic measure mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KineticBalance {
    pub p: f64,
    pub lhs_initial: f64,
    pub lhs_final: f64,
    pub weighted_q_mass: f64,
    pub n_mass_direct: f64,
    pub residual: f64,
}

/// `accumulated_q` is `int int |xi|^p d(m + n)` as accumulated by a solver,
/// `n_mass` the parabolic part of it.
pub fn entropy_balance(u0: &TorusField, ut: &TorusField, accumulated_q: f64, n_mass: f64, p: f64) -> Result<KineticBalance> {
    if !(p > -1.0) {
        return Err(Error::InvalidParameter(format!("balance exponent p = {p} must exceed -1")));
    }
    let lhs_initial = u0.power_integral(p + 2.0);
    let lhs_final = ut.power_integral(p + 2.0);
    let weighted_q_mass = (p + 2.0) * (p + 1.0) * accumulated_q;
    Ok(KineticBalance {
        p,
        lhs_initial,
        lhs_final,
        weighted_q_mass,
        n_mass_direct: n_mass,
        residual: lhs_initial - lhs_final - weighted_q_mass,
    })
}

/// Both characteristic-convolution errors with their bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MollificationError {
    /// `||chi * rho_eps - chi||_{L1(dy dxi)}` along the characteristics.
    pub lhs: f64,
    /// `eps BV(u)`.
    pub bound: f64,
    /// `||chi(y - f(xi) z, xi) - chi(y, xi)||_{L1}`.
    pub shift_lhs: f64,
    /// `sup |f| |z| BV(u)`, sup over the velocity cells carrying `chi`.
    pub shift_bound: f64,
}

fn bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

/// Discrete even mollifier of half-width `eps`, normalized to unit sum.
fn mollifier_weights(eps: f64, h: f64) -> Vec<f64> {
    let k = (eps / h).floor() as usize;
    let mut w: Vec<f64> = (0..=2 * k).map(|i| bump((i as f64 - k as f64) * h / eps)).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

fn convolve_axis(v: &[f64], grid: &TorusGrid, axis: usize, w: &[f64]) -> Vec<f64> {
    let k = (w.len() / 2) as isize;
    (0..grid.len())
        .map(|x| {
            w.iter()
                .enumerate()
                .map(|(i, wi)| wi * v[grid.neighbor(x, axis, i as isize - k)])
                .sum()
        })
        .collect()
}

/// Mollification along characteristics. The first error is computed in the
/// frame moving with `f(xi) z`, where the translated kernel and the translated
/// `chi` cancel their common shift; the second translates each band with the
/// cell-average kernel.
pub fn mollification_error(
    field: &TorusField,
    model: &FluxModel,
    z: &[f64],
    eps: f64,
    xi: XiGrid,
) -> Result<MollificationError> {
    let g = *field.grid();
    let h = g.spacing();
    if !(eps >= 2.0 * h) {
        return Err(Error::InvalidParameter(format!("mollifier width {eps} below 2 dx = {}", 2.0 * h)));
    }
    let mut zz = [0.0; 2];
    for (a, v) in zz.iter_mut().enumerate().take(g.dim()) {
        *v = z.get(a).copied().unwrap_or(0.0);
    }
    let kin = KineticDensity::lift(field, xi)?;
    let w = mollifier_weights(eps, h);
    let vol = g.cell_volume();
    let dxi = xi.spacing();
    let bv = field.bv_seminorm();
    let (mut lhs, mut shift_lhs, mut fmax) = (0.0, 0.0, 0.0f64);
    for j in kin.active_bands() {
        let band = kin.band(j);
        if band.iter().all(|v| *v == 0.0) {
            continue;
        }
        let mut smooth = band.to_vec();
        for axis in 0..g.dim() {
            smooth = convolve_axis(&smooth, &g, axis, &w);
        }
        lhs += smooth.iter().zip(band).map(|(a, b)| (a - b).abs()).sum::<f64>() * vol * dxi;
        let f = model.f(xi.center(j));
        fmax = fmax.max((f[0] * f[0] + f[1] * f[1]).sqrt());
        let moved = kin.band_field(j).cell_average_shift(&[f[0] * zz[0], f[1] * zz[1]]);
        shift_lhs += moved.values().iter().zip(band).map(|(a, b)| (a - b).abs()).sum::<f64>() * vol * dxi;
    }
    let znorm = (zz[0] * zz[0] + zz[1] * zz[1]).sqrt();
    Ok(MollificationError {
        lhs,
        bound: eps * bv,
        shift_lhs,
        shift_bound: fmax * znorm * bv,
    })
}
