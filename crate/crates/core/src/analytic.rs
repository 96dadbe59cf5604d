//! Closed-form spacing laws and the reference distributions they are
//! compared against. All laws are in the unfolded variable Δ.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{golden_min, integrate};
use crate::spacing::{DeltaPeak, SpacingDistribution, SpacingLaw};

/// A named law with its parameters.
#[derive(Clone)]
pub struct AnalyticSpacing {
    pub name: String,
    pub params: Vec<(String, f64)>,
    law: Arc<dyn SpacingLaw>,
}

impl std::fmt::Debug for AnalyticSpacing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnalyticSpacing")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("peak", &self.law.peak())
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    /// ∫P dΔ + peak mass.
    pub norm: f64,
    /// ∫Δ P dΔ + peak mass · position.
    pub mean: f64,
}

impl AnalyticSpacing {
    pub fn new(name: impl Into<String>, params: Vec<(String, f64)>, law: Arc<dyn SpacingLaw>) -> Self {
        AnalyticSpacing {
            name: name.into(),
            params,
            law,
        }
    }

    pub fn law(&self) -> &Arc<dyn SpacingLaw> {
        &self.law
    }

    pub fn pdf(&self, delta: f64) -> f64 {
        self.law.pdf(delta)
    }

    pub fn cdf(&self, delta: f64) -> f64 {
        self.law.cdf(delta)
    }

    pub fn peak(&self) -> Option<DeltaPeak> {
        self.law.peak()
    }

    pub fn support_max(&self) -> Option<f64> {
        self.law.support_max()
    }

    pub fn distribution(&self) -> SpacingDistribution {
        SpacingDistribution::analytic(self.law.clone())
    }

    /// Normalization and mean by adaptive quadrature, piecewise between
    /// breakpoints. Each finite piece is mapped through x = a + (b−a)(1−cos θ)/2,
    /// which removes inverse-square-root endpoint singularities.
    pub fn moments(&self) -> Moments {
        let top = self.law.support_max().unwrap_or(80.0);
        let mut edges = vec![0.0];
        edges.extend(self.law.breakpoints().into_iter().filter(|&x| x > 0.0 && x < top));
        edges.push(top);
        edges.sort_by(f64::total_cmp);
        edges.dedup();
        let tol = 1e-12;
        let mut norm = 0.0;
        let mut mean = 0.0;
        for w in edges.windows(2) {
            let (a, b) = (w[0], w[1]);
            let half = 0.5 * (b - a);
            let map = |th: f64| (a + half * (1.0 - th.cos()), half * th.sin());
            norm += integrate(
                |th| {
                    let (x, j) = map(th);
                    self.law.pdf(x) * j
                },
                0.0,
                PI,
                tol,
            );
            mean += integrate(
                |th| {
                    let (x, j) = map(th);
                    x * self.law.pdf(x) * j
                },
                0.0,
                PI,
                tol,
            );
        }
        if let Some(p) = self.law.peak() {
            norm += p.mass;
            mean += p.mass * p.position;
        }
        Moments { norm, mean }
    }
}

fn check_lengths(lengths: &[f64]) -> Result<()> {
    if let Some(l) = lengths.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
        return Err(Error::InvalidInput(format!("length {l} is not positive")));
    }
    Ok(())
}

/// Spacing law of disconnected bonds: the continuous part is (Π_i (1 − a_i Δ))''
/// with a_i = l_i/L, cut off at Δ* = L/l_max where the remaining mass sits
/// as a delta peak.
#[derive(Debug, Clone)]
pub struct Integrable {
    a: Vec<f64>,
    cut: f64,
    peak_mass: f64,
}

impl Integrable {
    pub fn new(lengths: &[f64]) -> Result<Self> {
        if lengths.len() < 2 {
            return Err(Error::InvalidInput("integrable law needs at least two lengths".into()));
        }
        check_lengths(lengths)?;
        let total: f64 = lengths.iter().sum();
        let mut a: Vec<f64> = lengths.iter().map(|l| l / total).collect();
        a.sort_by(|x, y| y.total_cmp(x));
        let cut = 1.0 / a[0];
        let peak_mass = a[0] * a[1..].iter().map(|ai| 1.0 - ai / a[0]).product::<f64>();
        Ok(Integrable { a, cut, peak_mass })
    }

    /// Π f_i and its first two derivatives at Δ.
    fn product(&self, d: f64) -> (f64, f64, f64) {
        let (mut v, mut d1, mut d2) = (1.0, 0.0, 0.0);
        for &ai in &self.a {
            let f = 1.0 - ai * d;
            d2 = d2 * f - 2.0 * d1 * ai;
            d1 = d1 * f - v * ai;
            v *= f;
        }
        (v, d1, d2)
    }

    /// P(0) of the continuous part, 1 − Σ a_i².
    pub fn p0(&self) -> f64 {
        self.pdf(0.0)
    }
}

impl SpacingLaw for Integrable {
    fn name(&self) -> String {
        format!("integrable({} bonds)", self.a.len())
    }

    fn pdf(&self, d: f64) -> f64 {
        if d < 0.0 || d >= self.cut {
            return 0.0;
        }
        self.product(d).2
    }

    fn cdf(&self, d: f64) -> f64 {
        if d <= 0.0 {
            0.0
        } else if d >= self.cut {
            1.0
        } else {
            1.0 + self.product(d).1
        }
    }

    fn peak(&self) -> Option<DeltaPeak> {
        Some(DeltaPeak {
            position: self.cut,
            mass: self.peak_mass,
        })
    }

    fn support_max(&self) -> Option<f64> {
        Some(self.cut)
    }

    fn breakpoints(&self) -> Vec<f64> {
        vec![self.cut]
    }
}

pub fn integrable_pdf(lengths: &[f64]) -> Result<AnalyticSpacing> {
    let law = Integrable::new(lengths)?;
    let params = lengths.iter().enumerate().map(|(i, l)| (format!("l{}", i + 1), *l)).collect();
    Ok(AnalyticSpacing::new("integrable", params, Arc::new(law)))
}

pub fn integrable_cdf(lengths: &[f64], delta: f64) -> Result<f64> {
    Ok(Integrable::new(lengths)?.cdf(delta))
}

#[derive(Debug, Clone, Copy)]
pub struct Poisson;

impl SpacingLaw for Poisson {
    fn name(&self) -> String {
        "poisson".into()
    }
    fn pdf(&self, d: f64) -> f64 {
        if d < 0.0 { 0.0 } else { (-d).exp() }
    }
    fn cdf(&self, d: f64) -> f64 {
        if d <= 0.0 { 0.0 } else { -(-d).exp_m1() }
    }
}

/// Wigner surmise for the orthogonal ensemble.
#[derive(Debug, Clone, Copy)]
pub struct WignerGoe;

impl SpacingLaw for WignerGoe {
    fn name(&self) -> String {
        "wigner".into()
    }
    fn pdf(&self, d: f64) -> f64 {
        if d < 0.0 { 0.0 } else { PI / 2.0 * d * (-PI * d * d / 4.0).exp() }
    }
    fn cdf(&self, d: f64) -> f64 {
        if d <= 0.0 { 0.0 } else { -(-PI * d * d / 4.0).exp_m1() }
    }
}

/// Uniform density 1/2 on (0, 2).
#[derive(Debug, Clone, Copy)]
pub struct FigureEight;

impl SpacingLaw for FigureEight {
    fn name(&self) -> String {
        "figure8".into()
    }
    fn pdf(&self, d: f64) -> f64 {
        if (0.0..2.0).contains(&d) { 0.5 } else { 0.0 }
    }
    fn cdf(&self, d: f64) -> f64 {
        (d / 2.0).clamp(0.0, 1.0)
    }
    fn support_max(&self) -> Option<f64> {
        Some(2.0)
    }
    fn breakpoints(&self) -> Vec<f64> {
        vec![2.0]
    }
}

pub fn poisson_pdf(d: f64) -> f64 {
    Poisson.pdf(d)
}

pub fn wigner_goe_pdf(d: f64) -> f64 {
    WignerGoe.pdf(d)
}

pub fn poisson() -> AnalyticSpacing {
    AnalyticSpacing::new("poisson", vec![], Arc::new(Poisson))
}

pub fn wigner_goe() -> AnalyticSpacing {
    AnalyticSpacing::new("wigner", vec![], Arc::new(WignerGoe))
}

pub fn figure_eight_pdf() -> AnalyticSpacing {
    AnalyticSpacing::new("figure8", vec![], Arc::new(FigureEight))
}

/// P(0) of the lasso.
pub fn lasso_p0(l1: f64, l2: f64) -> Result<f64> {
    check_lengths(&[l1, l2])?;
    Ok(l2 / (l1 + l2))
}

/// g(0) = 1 − Σ l_i²/L².
pub fn cluster_g0(lengths: &[f64]) -> Result<f64> {
    if lengths.is_empty() {
        return Err(Error::InvalidInput("no lengths".into()));
    }
    check_lengths(lengths)?;
    let total: f64 = lengths.iter().sum();
    Ok(1.0 - lengths.iter().map(|l| (l / total).powi(2)).sum::<f64>())
}

/// P'(0) of the three-bond star.
pub fn star3_slope(l1: f64, l2: f64, l3: f64) -> Result<f64> {
    check_lengths(&[l1, l2, l3])?;
    Ok(PI * (l1 * l2 + l1 * l3 + l2 * l3).powf(1.5) / (l1 + l2 + l3).powi(3))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GammaMode {
    /// Γ from the exact return map.
    Exact,
    /// Γ replaced by its mean over the support (linear return map).
    LinearApprox,
}

/// Star with bond lengths (l1, l2, l1).
///
/// On the torus (u, x2), u = x1 − π/2, the surface splits into the line
/// u ≡ 0 and the curve x2 + ψ(u) ≡ π/2 (mod π) with ψ(u) = atan2(sin u, 2 cos u).
/// With h(t) = l2 t + ψ(l1 t) and T = π/l1, returns from the line and the
/// end-of-period returns from the curve each give density h'(s) for
/// s < h⁻¹(π); curve-to-curve returns σ(y) = h⁻¹(y+π) − h⁻¹(y), y ∈ [0, l2 T],
/// give the Γ term.
#[derive(Debug, Clone)]
pub struct Star2 {
    l1: f64,
    l2: f64,
    total: f64,
    period: f64,
    h_end: f64,
    y_max: f64,
    s_edge: f64,
    mode: GammaMode,
    /// Monotone pieces of σ on [0, y_max]: (y_lo, y_hi).
    branches: Vec<(f64, f64)>,
    /// σ at the ends of each branch.
    branch_values: Vec<(f64, f64)>,
    sigma_min: f64,
    gamma_linear: f64,
}

impl Star2 {
    pub fn new(l1: f64, l2: f64, mode: GammaMode) -> Result<Self> {
        check_lengths(&[l1, l2])?;
        let period = PI / l1;
        let mut s = Star2 {
            l1,
            l2,
            total: 2.0 * l1 + l2,
            period,
            h_end: l2 * period + PI,
            y_max: l2 * period,
            s_edge: 0.0,
            mode,
            branches: Vec::new(),
            branch_values: Vec::new(),
            sigma_min: 0.0,
            gamma_linear: 0.0,
        };
        s.s_edge = s.h_inv(PI);
        s.locate_branches()?;
        s.gamma_linear = 0.5 * s.y_max / (s.s_edge - s.sigma_min);
        Ok(s)
    }

    fn psi(u: f64) -> f64 {
        let turns = (u / PI).floor();
        let r = u - turns * PI;
        r.sin().atan2(2.0 * r.cos()) + turns * PI
    }

    fn h(&self, t: f64) -> f64 {
        self.l2 * t + Self::psi(self.l1 * t)
    }

    fn h_prime(&self, t: f64) -> f64 {
        let c = (self.l1 * t).cos();
        self.l2 + 2.0 * self.l1 / (1.0 + 3.0 * c * c)
    }

    /// Inverse of h on [0, T] by safeguarded Newton.
    fn h_inv(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        if y >= self.h_end {
            return self.period;
        }
        let (mut lo, mut hi) = (0.0, self.period);
        let mut t = y / self.h_end * self.period;
        for _ in 0..100 {
            let f = self.h(t) - y;
            if f.abs() <= 1e-15 * y {
                return t;
            }
            if f > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let next = t - f / self.h_prime(t);
            let next = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
            if (next - t).abs() <= 1e-14 * self.period || hi - lo <= 1e-14 * self.period {
                return next;
            }
            t = next;
        }
        t
    }

    fn sigma(&self, y: f64) -> f64 {
        self.h_inv(y + PI) - self.h_inv(y)
    }

    fn sigma_prime(&self, y: f64) -> f64 {
        1.0 / self.h_prime(self.h_inv(y + PI)) - 1.0 / self.h_prime(self.h_inv(y))
    }

    fn locate_branches(&mut self) -> Result<()> {
        let n = 2000;
        let ys: Vec<f64> = (0..=n).map(|i| self.y_max * i as f64 / n as f64).collect();
        let sig: Vec<f64> = ys.iter().map(|&y| self.sigma(y)).collect();
        let mut cuts = vec![0.0];
        for i in 1..n {
            let (a, b, c) = (sig[i - 1], sig[i], sig[i + 1]);
            if (b < a && b <= c) || (b > a && b >= c) {
                let minimum = b < a;
                let (y, _) = golden_min(
                    |y| if minimum { self.sigma(y) } else { -self.sigma(y) },
                    ys[i - 1],
                    ys[i + 1],
                    1e-13,
                );
                cuts.push(y);
            }
        }
        cuts.push(self.y_max);
        self.branches = cuts.windows(2).map(|w| (w[0], w[1])).collect();
        self.branch_values = self.branches.iter().map(|&(a, b)| (self.sigma(a), self.sigma(b))).collect();
        self.sigma_min = cuts.iter().map(|&y| self.sigma(y)).fold(f64::INFINITY, f64::min);
        if !(self.sigma_min > 0.0) {
            return Err(Error::Numerical(format!(
                "return map of star({}, {}, {}) has no positive minimum",
                self.l1, self.l2, self.l1
            )));
        }
        Ok(())
    }

    /// Solves σ(y) = s on branch `i` (σ monotone there) by safeguarded Newton.
    fn branch_root(&self, i: usize, s: f64) -> Option<f64> {
        let (a, b) = self.branches[i];
        let (sa, sb) = self.branch_values[i];
        if (sa - s) * (sb - s) > 0.0 || sa == sb {
            return None;
        }
        let increasing = sb > sa;
        let (mut lo, mut hi) = (a, b);
        let mut y = a + (b - a) * ((s - sa) / (sb - sa)).clamp(0.0, 1.0);
        for _ in 0..100 {
            let f = self.sigma(y) - s;
            if f.abs() <= 1e-15 * s {
                return Some(y);
            }
            if (f > 0.0) == increasing {
                hi = y;
            } else {
                lo = y;
            }
            let d = self.sigma_prime(y);
            let mut next = y - f / d;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            if (next - y).abs() <= 1e-14 * self.y_max || hi - lo <= 1e-14 * self.y_max {
                return Some(next);
            }
            y = next;
        }
        Some(y)
    }

    /// Solutions of σ(y) = s, one per monotone branch at most.
    fn sigma_roots(&self, s: f64) -> Vec<f64> {
        (0..self.branches.len()).filter_map(|i| self.branch_root(i, s)).collect()
    }

    /// Measure of {y ∈ [0, Y] : σ(y) ≤ s}.
    fn sublevel_measure(&self, s: f64) -> f64 {
        let mut m = 0.0;
        for (i, &(a, b)) in self.branches.iter().enumerate() {
            let (sa, sb) = self.branch_values[i];
            if sa.max(sb) <= s {
                m += b - a;
            } else if sa.min(sb) < s {
                let y = self.branch_root(i, s).unwrap_or(a);
                m += if sa < sb { y - a } else { b - y };
            }
        }
        m
    }

    fn scale(&self) -> f64 {
        PI / self.total
    }

    /// Γ in P(Δ) = (2 l1/L²)(h'(s) + Γ).
    pub fn gamma(&self, delta: f64) -> f64 {
        let s = delta * self.scale();
        if s <= self.sigma_min || s >= self.s_edge {
            return 0.0;
        }
        match self.mode {
            GammaMode::LinearApprox => self.gamma_linear,
            GammaMode::Exact => {
                0.5 * self
                    .sigma_roots(s)
                    .iter()
                    .map(|&y| 1.0 / self.sigma_prime(y).abs())
                    .sum::<f64>()
            }
        }
    }

    /// Start of the Γ support in Δ.
    pub fn gamma_onset(&self) -> f64 {
        self.sigma_min / self.scale()
    }

    /// Upper end of the support in Δ.
    pub fn edge(&self) -> f64 {
        self.s_edge / self.scale()
    }

    /// (2 l1/L²) times the mean of Γ over its support.
    pub fn linear_gamma_term(&self) -> f64 {
        2.0 * self.l1 / (self.total * self.total) * self.gamma_linear
    }
}

impl SpacingLaw for Star2 {
    fn name(&self) -> String {
        match self.mode {
            GammaMode::Exact => "star2".into(),
            GammaMode::LinearApprox => "star2-linear".into(),
        }
    }

    fn pdf(&self, delta: f64) -> f64 {
        let s = delta * self.scale();
        if s < 0.0 || s >= self.s_edge {
            return 0.0;
        }
        2.0 * self.l1 / (self.total * self.total) * (self.h_prime(s).abs() + self.gamma(delta))
    }

    fn cdf(&self, delta: f64) -> f64 {
        let s = delta * self.scale();
        if s <= 0.0 {
            return 0.0;
        }
        if s >= self.s_edge {
            return 1.0;
        }
        let first = 2.0 * self.h(s).min(PI);
        let gamma = match self.mode {
            GammaMode::Exact => self.sublevel_measure(s),
            GammaMode::LinearApprox => {
                self.y_max * ((s - self.sigma_min) / (self.s_edge - self.sigma_min)).clamp(0.0, 1.0)
            }
        };
        (self.l1 / (PI * self.total) * (first + gamma)).min(1.0)
    }

    fn support_max(&self) -> Option<f64> {
        Some(self.edge())
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self
            .branch_values
            .iter()
            .flat_map(|&(x, y)| [x / self.scale(), y / self.scale()])
            .collect();
        b.push(self.edge());
        b.sort_by(f64::total_cmp);
        b.dedup_by(|x, y| (*x - *y).abs() < 1e-14);
        b
    }
}

pub fn star2_pdf(l1: f64, l2: f64) -> Result<AnalyticSpacing> {
    star2_with_mode(l1, l2, GammaMode::Exact)
}

pub fn star2_with_mode(l1: f64, l2: f64, mode: GammaMode) -> Result<AnalyticSpacing> {
    let law = Star2::new(l1, l2, mode)?;
    Ok(AnalyticSpacing::new(
        law.name(),
        vec![("l1".into(), l1), ("l2".into(), l2)],
        Arc::new(law),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn distri8() -> Vec<f64> {
        vec![
            167f64.sqrt(),
            2f64.sqrt(),
            3f64.sqrt(),
            107f64.sqrt(),
            5f64.sqrt(),
            6f64.sqrt(),
            7f64.sqrt(),
            std::f64::consts::E,
        ]
    }

    fn assert_moments(a: &AnalyticSpacing, tol: f64) {
        let m = a.moments();
        assert!((m.norm - 1.0).abs() < tol, "{}: norm {}", a.name, m.norm);
        assert!((m.mean - 1.0).abs() < tol, "{}: mean {}", a.name, m.mean);
    }

    #[test]
    fn references_are_normalized() {
        assert_eq!(poisson_pdf(0.0), 1.0);
        assert_eq!(wigner_goe_pdf(0.0), 0.0);
        let h = 1e-7;
        assert!((wigner_goe_pdf(h) / h - PI / 2.0).abs() < 1e-6);
        assert_moments(&poisson(), 1e-9);
        assert_moments(&wigner_goe(), 1e-9);
        assert_moments(&figure_eight_pdf(), 1e-9);
        assert_eq!(figure_eight_pdf().cdf(1.0), 0.5);
    }

    #[test]
    fn two_bond_integrable_law() {
        let (l1, l2) = (2.0, 1.0);
        let a = integrable_pdf(&[l1, l2]).unwrap();
        let total = l1 + l2;
        for d in [0.0, 0.3, 1.0, 1.4] {
            assert!((a.pdf(d) - 2.0 * l1 * l2 / total.powi(2)).abs() < 1e-14);
        }
        assert_eq!(a.pdf(1.6), 0.0);
        let p = a.peak().unwrap();
        assert!((p.position - total / l1).abs() < 1e-14);
        assert!((p.mass - (l1 - l2) / total).abs() < 1e-14);
        assert_moments(&a, 1e-9);
    }

    #[test]
    fn equal_bonds_have_no_peak() {
        let a = integrable_pdf(&[1.0, 1.0]).unwrap();
        assert_eq!(a.peak().unwrap().mass, 0.0);
        assert!((a.pdf(1.0) - 0.5).abs() < 1e-15);
        assert_eq!(a.cdf(2.0), 1.0);
    }

    #[test]
    fn integrable_law_families() {
        let l = distri8();
        let a = integrable_pdf(&l).unwrap();
        assert_moments(&a, 1e-9);
        let g0 = cluster_g0(&l).unwrap();
        assert!((a.pdf(0.0) - g0).abs() < 1e-12);
        assert_eq!(integrable_cdf(&l, 0.0).unwrap(), 0.0);
        assert_eq!(integrable_cdf(&l, 100.0).unwrap(), 1.0);
        assert!(matches!(integrable_pdf(&[1.0, -1.0]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn cluster_g0_limits() {
        assert!((cluster_g0(&[1.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!((cluster_g0(&vec![1.0; 10_000]).unwrap() - 0.9999).abs() < 1e-12);
    }

    #[test]
    fn star3_slope_values() {
        let max = star3_slope(1.0, 1.0, 1.0).unwrap();
        assert!((max - PI / 27f64.sqrt()).abs() < 1e-15);
        assert!((max - 0.6046).abs() < 1e-4);
        let s = star3_slope(PI, 3.183459012, 3.1442336073).unwrap();
        assert!((s - 0.604).abs() < 1e-3, "{s}");
        let (l1, l2) = (1.3f64, 0.7f64);
        let lim = PI * (l1 * l2).powf(1.5) / (l1 + l2).powi(3);
        assert!((star3_slope(l1, l2, 1e-12).unwrap() - lim).abs() < 1e-9);
    }

    #[test]
    fn lasso_small_spacing_density() {
        assert_eq!(lasso_p0(1.0, 1.0).unwrap(), 0.5);
        assert!((lasso_p0(2f64.sqrt(), 3f64.sqrt()).unwrap() - 0.5505).abs() < 1e-4);
    }

    #[test]
    fn star2_support_and_peak() {
        let law = Star2::new(PI, 1.53183459012, GammaMode::Exact).unwrap();
        assert!((law.edge() - 1.522).abs() < 1e-3, "{}", law.edge());
        assert!((law.gamma_onset() - 1.345).abs() < 1e-3, "{}", law.gamma_onset());
        assert!((law.linear_gamma_term() - 1.107).abs() < 2e-3, "{}", law.linear_gamma_term());
        assert_eq!(law.pdf(1.53), 0.0);
        // first term alone stays below 0.8; Γ lifts the density to the order of 1.8
        let first = law.pdf(1.3);
        assert!(first > 0.6 && first < 0.8);
        let peak = law.pdf(1.4);
        assert!(peak > 1.5 && peak < 2.0, "{peak}");
    }

    #[test]
    fn star2_is_normalized() {
        for mode in [GammaMode::Exact, GammaMode::LinearApprox] {
            let a = star2_with_mode(PI, 1.53183459012, mode).unwrap();
            let m = a.moments();
            assert!((m.norm - 1.0).abs() < 1e-6, "{mode:?} norm {}", m.norm);
            if mode == GammaMode::Exact {
                assert!((m.mean - 1.0).abs() < 1e-6, "mean {}", m.mean);
            }
        }
        let a = star2_pdf(2f64.sqrt(), 3f64.sqrt()).unwrap();
        assert_moments(&a, 1e-6);
    }

    #[test]
    fn star2_cdf_matches_density() {
        let law = Star2::new(PI, 1.53183459012, GammaMode::Exact).unwrap();
        let onset = law.gamma_onset();
        let a = star2_pdf(PI, 1.53183459012).unwrap();
        for d in [0.5f64, 1.0, 1.36, 1.45, 1.5] {
            let edges = [0.0, d.min(onset), d];
            let mut v = 0.0;
            for w in edges.windows(2) {
                if w[1] > w[0] {
                    let half = 0.5 * (w[1] - w[0]);
                    v += integrate(
                        |th| a.pdf(w[0] + half * (1.0 - th.cos())) * half * th.sin(),
                        0.0,
                        PI,
                        1e-12,
                    );
                }
            }
            assert!((a.cdf(d) - v).abs() < 1e-7, "{d}: {} vs {v}", a.cdf(d));
        }
    }
}
