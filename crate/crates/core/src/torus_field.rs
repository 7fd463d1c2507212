//! Periodic grids on the unit torus, cell-average fields and their Fourier
//! representation.
//!
//! Two frequency conventions live in this crate. The spectral norms and
//! multipliers here ([`TorusField::wlam_norm`], [`TorusField::frac_laplacian`])
//! use the bare integer modulus `|n|`, so `cos(2 pi x)` has `|n| = 1`. The
//! finite-volume solvers work with physical derivatives, where the same mode
//! has Laplacian eigenvalue `-4 pi^2`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Uniform grid of `cells^dim` cells on the unit torus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TorusGrid {
    dim: usize,
    cells: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, cells: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in {{1, 2}}")));
        }
        if cells < 4 || !cells.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "cells per axis must be a power of two >= 4, got {cells}"
            )));
        }
        Ok(Self { dim, cells })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.cells as f64
    }

    /// Total number of cells, `M^N`.
    pub fn len(&self) -> usize {
        self.cells.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Multi-index of a flat cell index; axis 0 varies slowest.
    pub fn multi_index(&self, index: usize) -> [usize; 2] {
        match self.dim {
            1 => [index, 0],
            _ => [index / self.cells, index % self.cells],
        }
    }

    pub fn flat_index(&self, idx: [usize; 2]) -> usize {
        match self.dim {
            1 => idx[0],
            _ => idx[0] * self.cells + idx[1],
        }
    }

    /// Cell center `x_k = (k + 1/2) dx`; unused axes are zero.
    pub fn center(&self, index: usize) -> [f64; 2] {
        let h = self.spacing();
        let mi = self.multi_index(index);
        let mut x = [0.0; 2];
        for a in 0..self.dim {
            x[a] = (mi[a] as f64 + 0.5) * h;
        }
        x
    }

    /// Flat index of the periodic neighbour `index + delta * e_axis`.
    pub fn neighbor(&self, index: usize, axis: usize, delta: isize) -> usize {
        let mut mi = self.multi_index(index);
        let m = self.cells as isize;
        mi[axis] = (mi[axis] as isize + delta).rem_euclid(m) as usize;
        self.flat_index(mi)
    }

    /// Folded integer frequency of a flat spectral index; range `[-M/2, M/2)`.
    pub fn frequency(&self, index: usize) -> [i64; 2] {
        let mi = self.multi_index(index);
        let m = self.cells as i64;
        let fold = |k: usize| {
            let k = k as i64;
            if k < m / 2 {
                k
            } else {
                k - m
            }
        };
        let mut n = [0i64; 2];
        for a in 0..self.dim {
            n[a] = fold(mi[a]);
        }
        n
    }

    /// Flat spectral index of a frequency (folded modulo `M`).
    pub fn frequency_index(&self, n: &[i64]) -> usize {
        let m = self.cells as i64;
        let mut mi = [0usize; 2];
        for a in 0..self.dim {
            mi[a] = n.get(a).copied().unwrap_or(0).rem_euclid(m) as usize;
        }
        self.flat_index(mi)
    }

    /// Euclidean modulus of the integer frequency at a flat spectral index.
    pub fn modulus(&self, index: usize) -> f64 {
        let n = self.frequency(index);
        ((n[0] * n[0] + n[1] * n[1]) as f64).sqrt()
    }
}

/// Scalar field of cell averages on a [`TorusGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct TorusField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl TorusField {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self { grid, values })
    }

    /// Samples `f` at the cell centers.
    pub fn from_fn<F: Fn(&[f64]) -> f64>(grid: TorusGrid, f: F) -> Result<Self> {
        let values = (0..grid.len())
            .map(|k| {
                let x = grid.center(k);
                f(&x[..grid.dim()])
            })
            .collect();
        Self::new(grid, values)
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub(crate) fn from_parts_unchecked(grid: TorusGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Spatial average (the torus has unit volume).
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `(sum |u_k|^p dx^N)^(1/p)`, or the max norm for `p = inf`.
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        if p.is_nan() || p < 1.0 {
            return Err(Error::InvalidParameter(format!("L^p exponent {p} < 1")));
        }
        if p.is_infinite() {
            return Ok(self.max_abs());
        }
        let vol = self.grid.cell_volume();
        let s: f64 = if p == 1.0 {
            self.values.iter().map(|v| v.abs()).sum()
        } else if p == 2.0 {
            self.values.iter().map(|v| v * v).sum()
        } else {
            self.values.iter().map(|v| v.abs().powf(p)).sum()
        };
        Ok((s * vol).powf(1.0 / p))
    }

    /// `sum_x |u|^p dx^N`, the integrand of the entropy identities (no root taken).
    pub fn power_integral(&self, p: f64) -> f64 {
        let vol = self.grid.cell_volume();
        self.values.iter().map(|v| v.abs().powf(p)).sum::<f64>() * vol
    }

    /// Discrete total variation: sum over axes of `sum |u_{k+e} - u_k| dx^(N-1)`.
    pub fn bv_seminorm(&self) -> f64 {
        let g = &self.grid;
        let face = g.spacing().powi(g.dim() as i32 - 1);
        let mut total = 0.0;
        for axis in 0..g.dim() {
            for k in 0..g.len() {
                let kp = g.neighbor(k, axis, 1);
                total += (self.values[kp] - self.values[k]).abs();
            }
        }
        total * face
    }

    pub fn l1_distance(&self, other: &TorusField) -> Result<f64> {
        self.check_same_grid(other)?;
        let vol = self.grid.cell_volume();
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * vol)
    }

    pub fn sub(&self, other: &TorusField) -> Result<TorusField> {
        self.check_same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(Self::from_parts_unchecked(self.grid, values))
    }

    pub fn add(&self, other: &TorusField) -> Result<TorusField> {
        self.check_same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(Self::from_parts_unchecked(self.grid, values))
    }

    pub fn add_scalar(&self, c: f64) -> TorusField {
        Self::from_parts_unchecked(self.grid, self.values.iter().map(|v| v + c).collect())
    }

    pub fn scale(&self, c: f64) -> TorusField {
        Self::from_parts_unchecked(self.grid, self.values.iter().map(|v| v * c).collect())
    }

    fn check_same_grid(&self, other: &TorusField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::InvalidGrid("fields live on different grids".into()));
        }
        Ok(())
    }

    pub fn forward_fft(&self) -> SpectralField {
        SpectralPlan::new(self.grid).forward(self)
    }

    /// Cell averages of the piecewise-constant field translated by `offset`:
    /// `x -> u(x - offset)` averaged exactly over each cell. Monotone,
    /// conservative and total-variation diminishing, unlike the spectral shift.
    pub fn cell_average_shift(&self, offset: &[f64]) -> TorusField {
        let g = self.grid;
        let m = g.cells();
        let mut cur = self.values.clone();
        let mut next = vec![0.0; g.len()];
        for a in 0..g.dim() {
            let o = offset.get(a).copied().unwrap_or(0.0);
            if o == 0.0 {
                continue;
            }
            let cells = (o * m as f64).rem_euclid(m as f64);
            // whole-cell offsets computed in floating point land within rounding of an integer
            let q = if (cells - cells.round()).abs() < 1e-9 { cells.round() } else { cells.floor() };
            let r = (cells - q).max(0.0);
            let q = q as usize % m;
            // axis a is strided by `stride` inside `lines` independent lines
            let stride = if g.dim() == 2 && a == 0 { m } else { 1 };
            let lines = g.len() / m;
            for line in 0..lines {
                let base = if stride == 1 { line * m } else { line };
                for i in 0..m {
                    let near = cur[base + ((i + m - q) % m) * stride];
                    let far = cur[base + ((i + 2 * m - q - 1) % m) * stride];
                    next[base + i * stride] = (1.0 - r) * near + r * far;
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Self::from_parts_unchecked(g, cur)
    }

    /// Returns `x -> u(x - offset)` with periodic wrap.
    ///
    /// The whole-cell part of the offset is applied as an index rotation, the
    /// remainder as the phase `exp(-2 pi i n . r)`.
    pub fn spectral_shift(&self, offset: &[f64]) -> TorusField {
        let g = self.grid;
        let m = g.cells() as f64;
        let mut whole = [0isize; 2];
        let mut frac = [0.0f64; 2];
        for a in 0..g.dim() {
            let o = offset.get(a).copied().unwrap_or(0.0).rem_euclid(1.0);
            let cells = o * m;
            let q = cells.round();
            let r = cells - q;
            whole[a] = q as isize;
            frac[a] = if r.abs() < 1e-12 { 0.0 } else { r / m };
        }
        let mut out = vec![0.0; g.len()];
        for (k, v) in self.values.iter().enumerate() {
            let mut mi = g.multi_index(k);
            for a in 0..g.dim() {
                mi[a] = (mi[a] as isize + whole[a]).rem_euclid(g.cells() as isize) as usize;
            }
            out[g.flat_index(mi)] = *v;
        }
        let rotated = Self::from_parts_unchecked(g, out);
        if frac.iter().all(|r| *r == 0.0) {
            return rotated;
        }
        let mut spec = rotated.forward_fft();
        spec.apply(|n, _| {
            let phase = -2.0 * PI * (n[0] as f64 * frac[0] + n[1] as f64 * frac[1]);
            Complex64::from_polar(1.0, phase)
        });
        spec.inverse_fft()
    }

    /// Homogeneous Bessel norm `||(|n|^lambda u_hat)^vee||_p`; the mean mode is
    /// always removed.
    pub fn wlam_norm(&self, lambda: f64, p: f64) -> Result<f64> {
        if lambda.is_nan() || lambda < 0.0 {
            return Err(Error::InvalidParameter(format!("lambda {lambda} < 0")));
        }
        let mut spec = self.forward_fft();
        spec.apply(|_, modulus| {
            if modulus == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(modulus.powf(lambda), 0.0)
            }
        });
        spec.inverse_fft().lp_norm(p)
    }

    /// `(-Delta)^alpha` with symbol `|n|^(2 alpha)`.
    pub fn frac_laplacian(&self, alpha: f64) -> Result<TorusField> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!("alpha {alpha} not in (0, 1]")));
        }
        let mut spec = self.forward_fft();
        spec.apply(|_, modulus| Complex64::new(modulus.powf(2.0 * alpha), 0.0));
        Ok(spec.inverse_fft())
    }
}

/// Fourier coefficients `c(n) = sum_k u_k exp(-2 pi i n . x_k) dx^N` at the
/// cell centers, so `c(0)` is the mean and a sampled `cos(2 pi x)` has
/// `c(+-1) = 1/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: TorusGrid,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn new(grid: TorusGrid, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: coeffs.len(),
            });
        }
        Ok(Self { grid, coeffs })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn coeff(&self, n: &[i64]) -> Complex64 {
        self.coeffs[self.grid.frequency_index(n)]
    }

    /// Multiplies every coefficient by `symbol(n, |n|)`.
    pub fn apply<F: Fn([i64; 2], f64) -> Complex64>(&mut self, symbol: F) {
        for (k, c) in self.coeffs.iter_mut().enumerate() {
            *c *= symbol(self.grid.frequency(k), self.grid.modulus(k));
        }
    }

    /// `sum |c(n)|^2`, equal to `||u||_2^2` by Parseval.
    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn inverse_fft(&self) -> TorusField {
        SpectralPlan::new(self.grid).inverse(self)
    }
}

/// Reusable FFT plans for one grid. Immutable, so one plan can be shared by
/// many workers; scratch space is allocated per call.
#[derive(Clone)]
pub struct SpectralPlan {
    grid: TorusGrid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// `exp(-i pi n / M)` per axis index: the half-cell offset of the centers.
    half_cell: Vec<Complex64>,
}

impl std::fmt::Debug for SpectralPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralPlan").field("grid", &self.grid).finish()
    }
}

impl SpectralPlan {
    pub fn new(grid: TorusGrid) -> Self {
        let mut planner = FftPlanner::new();
        let m = grid.cells();
        let forward = planner.plan_fft_forward(m);
        let inverse = planner.plan_fft_inverse(m);
        let half_cell = (0..m)
            .map(|k| {
                let n = if k < m / 2 { k as f64 } else { k as f64 - m as f64 };
                Complex64::from_polar(1.0, -PI * n / m as f64)
            })
            .collect();
        Self {
            grid,
            forward,
            inverse,
            half_cell,
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    fn half_cell_phase(&self, index: usize) -> Complex64 {
        let mi = self.grid.multi_index(index);
        let mut p = self.half_cell[mi[0]];
        if self.grid.dim() == 2 {
            p *= self.half_cell[mi[1]];
        }
        p
    }

    fn transform(&self, buf: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let m = self.grid.cells();
        fft.process(buf);
        if self.grid.dim() == 2 {
            let mut t = vec![Complex64::new(0.0, 0.0); buf.len()];
            transpose(buf, &mut t, m);
            fft.process(&mut t);
            transpose(&t, buf, m);
        }
    }

    pub fn forward_values(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, &self.forward);
        let scale = 1.0 / self.grid.len() as f64;
        for (k, c) in buf.iter_mut().enumerate() {
            *c *= self.half_cell_phase(k) * scale;
        }
        buf
    }

    pub fn forward(&self, field: &TorusField) -> SpectralField {
        SpectralField {
            grid: self.grid,
            coeffs: self.forward_values(field.values()),
        }
    }

    /// Inverse transform of raw coefficients; the imaginary part is dropped.
    pub fn inverse_values(&self, coeffs: &[Complex64]) -> Vec<f64> {
        let mut buf: Vec<Complex64> = coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c * self.half_cell_phase(k).conj())
            .collect();
        self.transform(&mut buf, &self.inverse);
        buf.into_iter().map(|c| c.re).collect()
    }

    pub fn inverse(&self, spec: &SpectralField) -> TorusField {
        TorusField::from_parts_unchecked(self.grid, self.inverse_values(&spec.coeffs))
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], m: usize) {
    for i in 0..m {
        for j in 0..m {
            dst[j * m + i] = src[i * m + j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid1(m: usize) -> TorusGrid {
        TorusGrid::new(1, m).unwrap()
    }

    fn cos_field(m: usize, k: f64) -> TorusField {
        TorusField::from_fn(grid1(m), |x| (2.0 * PI * k * x[0]).cos()).unwrap()
    }

    /// Direct O(M^2) evaluation of the coefficient definition.
    fn direct_coeff(u: &TorusField, n: i64) -> Complex64 {
        let g = u.grid();
        let mut s = Complex64::new(0.0, 0.0);
        for (k, v) in u.values().iter().enumerate() {
            let x = g.center(k)[0];
            s += v * Complex64::from_polar(1.0, -2.0 * PI * n as f64 * x);
        }
        s / g.len() as f64
    }

    fn pseudo_random(grid: TorusGrid, seed: u64) -> TorusField {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let values = (0..grid.len())
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        TorusField::new(grid, values).unwrap()
    }

    #[test]
    fn cell_average_shift_examples() {
        let g = grid1(8);
        let mut v = vec![0.0; 8];
        v[2] = 1.0;
        let u = TorusField::new(g, v).unwrap();
        // whole cells: pure rotation, including negative offsets and wrap
        let s = u.cell_average_shift(&[3.0 / 8.0]);
        assert_eq!(s.values()[5], 1.0);
        assert_eq!(u.cell_average_shift(&[-3.0 / 8.0]).values()[7], 1.0);
        // a quarter cell to the right: 3/4 stays, 1/4 spills over
        let q = u.cell_average_shift(&[0.25 / 8.0]);
        assert!((q.values()[2] - 0.75).abs() < 1e-15 && (q.values()[3] - 0.25).abs() < 1e-15);
        let back = u.cell_average_shift(&[-0.25 / 8.0]);
        assert!((back.values()[1] - 0.25).abs() < 1e-15);
        assert_eq!(u.cell_average_shift(&[0.0]), u);
    }

    #[test]
    fn grid_rejects_bad_sizes() {
        assert!(TorusGrid::new(1, 2).is_err());
        assert!(TorusGrid::new(1, 12).is_err());
        assert!(TorusGrid::new(3, 8).is_err());
        let g = TorusGrid::new(2, 8).unwrap();
        assert_eq!(g.len(), 64);
        assert!((g.center(9)[0] - 1.5 / 8.0).abs() < 1e-15);
        assert!((g.center(9)[1] - 1.5 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn non_finite_values_rejected() {
        let g = grid1(4);
        assert!(matches!(
            TorusField::new(g, vec![0.0, f64::NAN, 0.0, 0.0]),
            Err(Error::NonFinite { index: 1, .. })
        ));
    }

    #[test]
    fn constant_field_has_only_mean_mode() {
        let u = TorusField::constant(grid1(16), 3.0);
        let s = u.forward_fft();
        assert!((s.coeff(&[0]) - Complex64::new(3.0, 0.0)).norm() < 1e-15);
        for k in 1..16 {
            assert!(s.coeffs()[k].norm() < 1e-15);
        }
    }

    #[test]
    fn cosine_coefficients_match_direct_sum() {
        let u = cos_field(64, 1.0);
        let s = u.forward_fft();
        for n in -32..32i64 {
            let direct = direct_coeff(&u, n);
            assert!((s.coeff(&[n]) - direct).norm() < 1e-13, "n = {n}");
            let expected = if n.abs() == 1 { 0.5 } else { 0.0 };
            assert!((s.coeff(&[n]) - Complex64::new(expected, 0.0)).norm() < 1e-13);
        }
    }

    #[test]
    fn two_dim_transform_matches_separable_product() {
        let g = TorusGrid::new(2, 16).unwrap();
        let u = TorusField::from_fn(g, |x| (2.0 * PI * x[0]).cos() * (4.0 * PI * x[1]).sin()).unwrap();
        let s = u.forward_fft();
        // cos(2 pi x) sin(4 pi y) = 1/4 (e^{ix}+e^{-ix})(e^{2iy}-e^{-2iy})/i
        let c = s.coeff(&[1, 2]);
        assert!((c - Complex64::new(0.0, -0.25)).norm() < 1e-13);
        assert!((s.coeff(&[-1, -2]) - Complex64::new(0.0, 0.25)).norm() < 1e-13);
        assert!(s.coeff(&[2, 1]).norm() < 1e-13);
        let back = s.inverse_fft();
        let err = back.sub(&u).unwrap().max_abs();
        assert!(err < 1e-13);
    }

    #[test]
    fn shift_quarter_period_turns_cos_into_sin() {
        let u = cos_field(64, 1.0);
        let shifted = u.spectral_shift(&[0.25]);
        let expected = TorusField::from_fn(grid1(64), |x| (2.0 * PI * x[0]).sin()).unwrap();
        assert!(shifted.sub(&expected).unwrap().max_abs() < 1e-10);
        assert!(u.spectral_shift(&[0.0]).sub(&u).unwrap().max_abs() == 0.0);
    }

    #[test]
    fn one_cell_shift_is_rotation() {
        let g = TorusGrid::new(2, 8).unwrap();
        let u = pseudo_random(g, 3);
        let h = g.spacing();
        let s = u.spectral_shift(&[h, 0.0]);
        for k in 0..g.len() {
            let src = g.neighbor(k, 0, -1);
            assert_eq!(s.values()[k], u.values()[src]);
        }
    }

    #[test]
    fn lp_and_bv_examples() {
        let g = grid1(256);
        let two = TorusField::constant(g, 2.0);
        assert!((two.lp_norm(1.0).unwrap() - 2.0).abs() < 1e-14);
        let step = TorusField::from_fn(g, |x| if x[0] < 0.5 { 1.0 } else { 0.0 }).unwrap();
        assert!((step.bv_seminorm() - 2.0).abs() < 1e-14);
        let c = cos_field(256, 1.0);
        assert!((c.lp_norm(1.0).unwrap() - 2.0 / PI).abs() < 1e-3);
        assert!((c.lp_norm(f64::INFINITY).unwrap() - 1.0).abs() < 1e-3);
        assert!(c.lp_norm(0.5).is_err());
    }

    #[test]
    fn wlam_norm_examples() {
        let g = grid1(256);
        let k = TorusField::constant(g, 4.0);
        assert!(k.wlam_norm(0.5, 1.0).unwrap().abs() < 1e-14);
        let c1 = cos_field(256, 1.0);
        for lambda in [0.0, 0.3, 1.0, 2.5] {
            let v = c1.wlam_norm(lambda, 1.0).unwrap();
            assert!((v - c1.lp_norm(1.0).unwrap()).abs() < 1e-12);
            assert!((v - 2.0 / PI).abs() < 1e-3);
        }
        let c2 = cos_field(256, 2.0);
        assert!((c2.wlam_norm(1.0, 2.0).unwrap() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn frac_laplacian_examples() {
        let g = grid1(64);
        assert!(TorusField::constant(g, 1.5).frac_laplacian(0.3).unwrap().max_abs() < 1e-14);
        let c1 = cos_field(64, 1.0);
        for alpha in [0.25, 0.5, 1.0] {
            let v = c1.frac_laplacian(alpha).unwrap();
            assert!(v.sub(&c1).unwrap().max_abs() < 1e-12);
        }
        let c2 = cos_field(64, 2.0);
        let v = c2.frac_laplacian(0.5).unwrap();
        assert!(v.sub(&c2.scale(2.0)).unwrap().max_abs() < 1e-12);
        assert!(c1.frac_laplacian(0.0).is_err());
        assert!(c1.frac_laplacian(1.5).is_err());
    }

    #[test]
    fn frac_laplacian_alpha_one_is_integer_laplacian_symbol() {
        let g = TorusGrid::new(2, 16).unwrap();
        let u = pseudo_random(g, 11);
        let lap = u.frac_laplacian(1.0).unwrap().forward_fft();
        let s = u.forward_fft();
        for k in 0..g.len() {
            let n = g.frequency(k);
            let sym = (n[0] * n[0] + n[1] * n[1]) as f64;
            assert!((lap.coeffs()[k] - s.coeffs()[k] * sym).norm() < 1e-10 * (1.0 + sym));
        }
    }

    fn band_limited(seed: u64, m: usize) -> TorusField {
        // Remove the Nyquist row so fractional shifts are exactly representable.
        let g = grid1(m);
        let mut s = pseudo_random(g, seed).forward_fft();
        let nyq = g.frequency_index(&[-(m as i64) / 2]);
        s.coeffs_mut()[nyq] = Complex64::new(0.0, 0.0);
        s.inverse_fft()
    }

    proptest! {
        #[test]
        fn round_trip_and_parseval(seed in any::<u64>(), two_d in any::<bool>()) {
            let g = if two_d { TorusGrid::new(2, 16).unwrap() } else { grid1(64) };
            let u = pseudo_random(g, seed);
            let s = u.forward_fft();
            let back = s.inverse_fft();
            let scale = u.max_abs().max(1e-300);
            prop_assert!(back.sub(&u).unwrap().max_abs() <= 1e-12 * scale);
            let l2 = u.lp_norm(2.0).unwrap().powi(2);
            prop_assert!((l2 - s.energy()).abs() <= 1e-10 * l2);
            // Hermitian symmetry away from the Nyquist frequency.
            for k in 0..g.len() {
                let n = g.frequency(k);
                if n.iter().any(|&v| v == -(g.cells() as i64) / 2) { continue; }
                let c = s.coeffs()[k];
                let cm = s.coeff(&[-n[0], -n[1]]);
                prop_assert!((c - cm.conj()).norm() < 1e-13);
            }
            prop_assert!((s.coeff(&[0, 0]).re - u.mean()).abs() < 1e-14);
        }

        #[test]
        fn shifts_compose_and_conserve(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let u = band_limited(seed, 32);
            let ab = u.spectral_shift(&[a]).spectral_shift(&[b]);
            let direct = u.spectral_shift(&[a + b]);
            prop_assert!(ab.sub(&direct).unwrap().max_abs() < 1e-10);
            let s = u.spectral_shift(&[a]);
            prop_assert!((s.mean() - u.mean()).abs() < 1e-14);
            let l2u = u.lp_norm(2.0).unwrap();
            prop_assert!((s.lp_norm(2.0).unwrap() - l2u).abs() < 1e-12 * l2u.max(1.0));
        }

        #[test]
        fn wlam_zero_is_mean_free_lp(seed in any::<u64>(), p in 1.0f64..4.0) {
            let u = pseudo_random(grid1(64), seed);
            let centered = u.add_scalar(-u.mean());
            let a = u.wlam_norm(0.0, p).unwrap();
            let b = centered.lp_norm(p).unwrap();
            prop_assert!((a - b).abs() < 1e-12 * b.max(1.0));
        }

        #[test]
        fn cell_average_shift_is_monotone_and_conservative(
            seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0, two_d in any::<bool>()
        ) {
            let g = if two_d { TorusGrid::new(2, 16).unwrap() } else { grid1(64) };
            let u = pseudo_random(g, seed);
            let s = u.cell_average_shift(&[a, b]);
            prop_assert!((s.mean() - u.mean()).abs() < 1e-14);
            prop_assert!(s.max() <= u.max() + 1e-15 && s.min() >= u.min() - 1e-15);
            prop_assert!(s.bv_seminorm() <= u.bv_seminorm() * (1.0 + 1e-12));
        }
    }
}
