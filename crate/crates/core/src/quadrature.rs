//! Composite Gauss-Legendre rules shared by the model tables and the lemma checks.

use gauss_quad::legendre::GaussLegendre;

/// A fixed-order Gauss-Legendre rule applied panel by panel.
#[derive(Debug, Clone)]
pub struct CompositeGauss {
    nodes: Vec<(f64, f64)>,
}

impl CompositeGauss {
    pub fn new(order: usize) -> Self {
        let rule = GaussLegendre::new(order.max(2)).expect("order >= 2");
        let nodes = rule.iter().map(|(x, w)| (*x, *w)).collect();
        Self { nodes }
    }

    /// Nodes and weights mapped onto `[a, b]`.
    pub fn panel(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        self.nodes.iter().map(move |&(x, w)| (mid + half * x, half * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, panels: usize, mut f: F) -> f64 {
        let panels = panels.max(1);
        let h = (b - a) / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let lo = a + h * p as f64;
            let hi = if p + 1 == panels { b } else { lo + h };
            for (x, w) in self.panel(lo, hi) {
                total += w * f(x);
            }
        }
        total
    }

    /// All composite nodes and weights on `[a, b]`, in increasing order.
    pub fn points(&self, a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
        let panels = panels.max(1);
        let h = (b - a) / panels as f64;
        let mut out = Vec::with_capacity(panels * self.nodes.len());
        for p in 0..panels {
            let lo = a + h * p as f64;
            let hi = if p + 1 == panels { b } else { lo + h };
            out.extend(self.panel(lo, hi));
        }
        out.sort_by(|x, y| x.0.total_cmp(&y.0));
        out
    }
}

/// Least-squares line `y = slope * x + intercept`; returns `(slope, intercept, r2)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, intercept, r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composite_rule_integrates_smooth_functions() {
        let q = CompositeGauss::new(8);
        let v = q.integrate(0.0, std::f64::consts::PI, 4, f64::sin);
        assert!((v - 2.0).abs() < 1e-13);
        let pts = q.points(-1.0, 1.0, 3);
        assert_eq!(pts.len(), 24);
        let w: f64 = pts.iter().map(|p| p.1).sum();
        assert!((w - 2.0).abs() < 1e-14);
    }

    #[test]
    fn fit_recovers_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 * x - 1.0).collect();
        let (s, c, r2) = linear_fit(&xs, &ys);
        assert!((s - 0.5).abs() < 1e-14 && (c + 1.0).abs() < 1e-14 && (r2 - 1.0).abs() < 1e-12);
    }
}
