//! Continuous driving signals `z : [0, T] -> R^N` with `z(0) = 0`, stored as
//! knot values and evaluated by linear interpolation.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Native knot density used when a config does not set one.
pub const DEFAULT_KNOTS_PER_UNIT: usize = 1 << 14;

/// SplitMix64 step: independent per-worker seeds from one master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrivingPath {
    dim: usize,
    knots: Vec<f64>,
    values: Vec<[f64; 2]>,
}

impl DrivingPath {
    pub fn from_knots(dim: usize, knots: Vec<f64>, values: Vec<[f64; 2]>) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidParameter(format!("path dimension {dim} not in {{1, 2}}")));
        }
        if knots.len() < 2 || knots.len() != values.len() {
            return Err(Error::InvalidParameter("a path needs at least two knots and one value per knot".into()));
        }
        if knots[0] != 0.0 || values[0] != [0.0; 2] {
            return Err(Error::InvalidParameter("paths start at t = 0 with z(0) = 0".into()));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("knot times must be strictly increasing".into()));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) || knots.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter("non-finite path data".into()));
        }
        if dim == 1 && values.iter().any(|v| v[1] != 0.0) {
            return Err(Error::InvalidParameter("second component must vanish for a scalar path".into()));
        }
        Ok(Self { dim, knots, values })
    }

    /// `z(t) = slope * t * (1, ..., 1)` with `intervals` uniform knots.
    pub fn linear(dim: usize, horizon: f64, slope: f64, intervals: usize) -> Result<Self> {
        if !(horizon > 0.0) || intervals == 0 {
            return Err(Error::InvalidParameter("linear path needs T > 0 and at least one interval".into()));
        }
        let knots: Vec<f64> = (0..=intervals).map(|k| horizon * k as f64 / intervals as f64).collect();
        let values = knots
            .iter()
            .map(|&t| {
                let mut v = [0.0; 2];
                v[..dim.min(2)].iter_mut().for_each(|x| *x = slope * t);
                v
            })
            .collect();
        Self::from_knots(dim, knots, values)
    }

    /// The deterministic signal `z(t) = (t, ..., t)`.
    pub fn deterministic(dim: usize, horizon: f64, intervals: usize) -> Result<Self> {
        Self::linear(dim, horizon, 1.0, intervals)
    }

    /// Brownian sample with independent `N(0, dt)` increments per component,
    /// reproducible from `seed`.
    pub fn sample_brownian(dim: usize, horizon: f64, knots_per_unit: usize, seed: u64) -> Result<Self> {
        if knots_per_unit < 2 {
            return Err(Error::InvalidParameter(format!("knots_per_unit = {knots_per_unit} < 2")));
        }
        if !(horizon > 0.0) {
            return Err(Error::InvalidParameter(format!("horizon {horizon} must be positive")));
        }
        let intervals = ((horizon * knots_per_unit as f64).round() as usize).max(1);
        let dt = horizon / intervals as f64;
        let sd = dt.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut knots = Vec::with_capacity(intervals + 1);
        let mut values = Vec::with_capacity(intervals + 1);
        let mut z = [0.0f64; 2];
        knots.push(0.0);
        values.push(z);
        for k in 1..=intervals {
            for zi in z.iter_mut().take(dim) {
                let g: f64 = StandardNormal.sample(&mut rng);
                *zi += sd * g;
            }
            knots.push(horizon * k as f64 / intervals as f64);
            values.push(z);
        }
        Self::from_knots(dim, knots, values)
    }

    /// Two-sided Brownian motion: the forward path on `[0, T]` and, as a
    /// second path in reversed time, the independent segment on `[-T, 0]`
    /// (`backward.eval(s)` is the value at time `-s`). Solvers consume only
    /// the forward part.
    pub fn sample_two_sided(dim: usize, horizon: f64, knots_per_unit: usize, seed: u64) -> Result<(Self, Self)> {
        let forward = Self::sample_brownian(dim, horizon, knots_per_unit, seed)?;
        let backward = Self::sample_brownian(dim, horizon, knots_per_unit, derive_seed(seed, u64::MAX))?;
        Ok((forward, backward))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        *self.knots.last().expect("at least two knots")
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[[f64; 2]] {
        &self.values
    }

    pub fn intervals(&self) -> usize {
        self.knots.len() - 1
    }

    /// Index of the knot interval `[t_j, t_{j+1})` containing `t`, clamped.
    pub fn interval_index(&self, t: f64) -> usize {
        let j = self.knots.partition_point(|&k| k <= t);
        j.saturating_sub(1).min(self.intervals() - 1)
    }

    /// Linear interpolation; constant extension outside `[0, T]`.
    pub fn eval(&self, t: f64) -> [f64; 2] {
        if t <= 0.0 {
            return self.values[0];
        }
        if t >= self.horizon() {
            return *self.values.last().expect("non-empty");
        }
        let j = self.interval_index(t);
        let (t0, t1) = (self.knots[j], self.knots[j + 1]);
        let w = (t - t0) / (t1 - t0);
        let (a, b) = (self.values[j], self.values[j + 1]);
        [a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1])]
    }

    pub fn increment(&self, s: f64, t: f64) -> [f64; 2] {
        let (a, b) = (self.eval(s), self.eval(t));
        [b[0] - a[0], b[1] - a[1]]
    }

    /// `z'` on the knot interval containing `t`.
    pub fn slope_at(&self, t: f64) -> [f64; 2] {
        let j = self.interval_index(t);
        let dt = self.knots[j + 1] - self.knots[j];
        let (a, b) = (self.values[j], self.values[j + 1]);
        [(b[0] - a[0]) / dt, (b[1] - a[1]) / dt]
    }

    /// Piecewise-linear interpolant through the dyadic nodes `k 2^-level T`.
    pub fn dyadic_linearization(&self, level: u32) -> Result<Self> {
        let count = 1usize
            .checked_shl(level)
            .filter(|c| *c <= self.intervals())
            .ok_or(Error::PathResolution {
                level,
                needed: 1usize.checked_shl(level).unwrap_or(usize::MAX),
                available: self.intervals(),
            })?;
        let horizon = self.horizon();
        let tol = 1e-12 * horizon;
        let mut knots = Vec::with_capacity(count + 1);
        let mut values = Vec::with_capacity(count + 1);
        for k in 0..=count {
            let t = horizon * k as f64 / count as f64;
            let j = self.knots.partition_point(|&x| x < t - tol);
            if j >= self.knots.len() || (self.knots[j] - t).abs() > tol {
                return Err(Error::PathResolution {
                    level,
                    needed: count,
                    available: self.intervals(),
                });
            }
            knots.push(self.knots[j]);
            values.push(self.values[j]);
        }
        Self::from_knots(self.dim, knots, values)
    }

    /// Writes `t,z1[,z2]` rows with a header line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=self.dim).map(|i| format!("z{i}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (t, v) in self.knots.iter().zip(&self.values) {
            let cols: Vec<String> = std::iter::once(format!("{t:e}"))
                .chain(v[..self.dim].iter().map(|x| format!("{x:e}")))
                .collect();
            writeln!(out, "{}", cols.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::InvalidParameter("empty path CSV".into()))??;
        let dim = header.split(',').count() - 1;
        let mut knots = Vec::new();
        let mut values = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidParameter(format!("bad path CSV row '{line}': {e}")))?;
            if cols.len() != dim + 1 {
                return Err(Error::InvalidParameter(format!("expected {} columns in '{line}'", dim + 1)));
            }
            knots.push(cols[0]);
            let mut v = [0.0; 2];
            v[..dim].copy_from_slice(&cols[1..]);
            values.push(v);
        }
        Self::from_knots(dim, knots, values)
    }
}

/// `sup_{s <= r <= t} |z1(r) - z2(r)|`; exact for piecewise-linear paths since
/// the maximum is attained at a knot of either path or an endpoint.
pub fn sup_distance(p1: &DrivingPath, p2: &DrivingPath, s: f64, t: f64) -> Result<f64> {
    if s > t {
        return Err(Error::InvalidParameter(format!("sup_distance: s = {s} > t = {t}")));
    }
    let horizon = p1.horizon().min(p2.horizon());
    if s < 0.0 || t > horizon * (1.0 + 1e-12) {
        return Err(Error::InvalidParameter(format!("[{s}, {t}] not inside [0, {horizon}]")));
    }
    let inside = |x: &&f64| **x > s && **x < t;
    let dist = |r: f64| {
        let (a, b) = (p1.eval(r), p2.eval(r));
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    };
    let best = p1
        .knots()
        .iter()
        .filter(inside)
        .chain(p2.knots().iter().filter(inside))
        .copied()
        .chain([s, t])
        .map(dist)
        .fold(0.0, f64::max);
    Ok(best)
}
