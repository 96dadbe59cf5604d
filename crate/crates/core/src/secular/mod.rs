//! Secular functions of a metric graph.
//!
//! The regularized function f̃(k) = det h(k) · Π_b sin(k l_b) is evaluated
//! from the vertex matrix h when every sin(k l_b) is comfortably away from
//! zero, and otherwise from the bond scattering matrix through
//!
//! f̃ = Re[ i^{B+V} · (Π_i v_i / 2^B) · e^{-i Σ_b θ_b} · det(I − S) ],
//!
//! where θ_b = k l_b. Both routes give the same entire function, so its zero
//! set is exactly the spectrum.
//!
//! Along any line θ_b(t) = θ0_b + l_b t the eigenphases of S increase
//! monotonically, which gives an exact zero count on any interval (see
//! [`SecularSystem::phase_sum`]).

mod scan;

pub use scan::{
    find_levels, find_zeros_on_line, integrable_levels, next_zero, LevelAudit, PhaseLine, SolverSettings, SpectrumSample,
};

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::graph::{Boundary, MetricGraph};
use crate::numeric::golden_min;

/// Below this |sin θ_b| the vertex matrix route loses digits and the
/// scattering route takes over.
const VERTEX_ROUTE_GUARD: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum SecularVariant {
    /// det h · Π sin(k l_b): real, continuous, sign changes at simple levels.
    RegularizedDetH,
    /// |det(I − S(k))|: nonnegative, levels show up as dips to zero.
    AbsDetIMinusS,
}

#[derive(Debug, Clone)]
pub struct BondScattering {
    pub k: f64,
    /// S = D T.
    pub s: DMatrix<Complex64>,
    /// Diagonal of D, e^{i k l_a} per directed bond.
    pub d: DVector<Complex64>,
    pub t: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct VertexSecular {
    pub k: f64,
    pub h: DMatrix<f64>,
    /// Points mπ/l_b within one mean spacing of k.
    pub pole_set: Vec<f64>,
}

/// Precomputed structure of a graph's secular problem.
#[derive(Debug, Clone)]
pub struct SecularSystem {
    graph: MetricGraph,
    /// Per directed bond a: (bond index, start vertex, end vertex).
    directed: Vec<(usize, usize, usize)>,
    t: DMatrix<f64>,
    norm: f64,
    /// i^{B+V} as a complex factor.
    phase_factor: Complex64,
}

impl SecularSystem {
    pub fn new(g: &MetricGraph) -> Result<Self> {
        let b = g.bond_count();
        let v = g.vertex_count();
        let mut directed = Vec::with_capacity(2 * b);
        for (i, bond) in g.bonds().iter().enumerate() {
            directed.push((i, bond.from, bond.to));
            directed.push((i, bond.to, bond.from));
        }
        let t = if g.boundary() == Boundary::Neumann {
            transition_matrix(g, &directed)
        } else {
            DMatrix::zeros(0, 0)
        };
        let valences = g.valences();
        let norm = valences.iter().map(|&x| x as f64).product::<f64>() / 2f64.powi(b as i32);
        let phase_factor = match (b + v) % 4 {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, 1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, -1.0),
        };
        Ok(SecularSystem {
            graph: g.clone(),
            directed,
            t,
            norm,
            phase_factor,
        })
    }

    pub fn graph(&self) -> &MetricGraph {
        &self.graph
    }

    pub fn bond_count(&self) -> usize {
        self.graph.bond_count()
    }

    pub fn is_neumann(&self) -> bool {
        self.graph.boundary() == Boundary::Neumann
    }

    fn require_neumann(&self, what: &str) -> Result<()> {
        if self.is_neumann() {
            Ok(())
        } else {
            Err(Error::UnsupportedVariant(format!(
                "{what} is defined for Neumann graphs only; use the integrable generator for Dirichlet bonds"
            )))
        }
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.t
    }

    /// S = D T for bond phases θ_b.
    pub fn scattering_at_phases(&self, theta: &[f64]) -> DMatrix<Complex64> {
        let n = self.directed.len();
        let mut s = DMatrix::<Complex64>::zeros(n, n);
        for (row, &(bond, _, _)) in self.directed.iter().enumerate() {
            let phase = Complex64::from_polar(1.0, theta[bond]);
            for col in 0..n {
                let t = self.t[(row, col)];
                if t != 0.0 {
                    s[(row, col)] = phase * t;
                }
            }
        }
        s
    }

    /// Vertex matrix h for bond phases θ_b. Entries blow up where some
    /// sin θ_b vanishes.
    pub fn vertex_matrix(&self, theta: &[f64]) -> DMatrix<f64> {
        let v = self.graph.vertex_count();
        let mut h = DMatrix::<f64>::zeros(v, v);
        for (bond, &th) in self.graph.bonds().iter().zip(theta) {
            if bond.is_loop() {
                h[(bond.from, bond.from)] += 2.0 * (th / 2.0).tan();
            } else {
                let (s, c) = th.sin_cos();
                let cot = c / s;
                let csc = 1.0 / s;
                h[(bond.from, bond.from)] -= cot;
                h[(bond.to, bond.to)] -= cot;
                h[(bond.from, bond.to)] += csc;
                h[(bond.to, bond.from)] += csc;
            }
        }
        h
    }

    /// Regularized secular value for bond phases θ_b.
    pub fn value_at_phases(&self, theta: &[f64]) -> f64 {
        if !self.is_neumann() {
            return theta.iter().map(|t| t.sin()).product();
        }
        let min_sin = theta.iter().map(|t| t.sin().abs()).fold(f64::INFINITY, f64::min);
        if min_sin >= VERTEX_ROUTE_GUARD {
            let h = self.vertex_matrix(theta);
            h.determinant() * theta.iter().map(|t| t.sin()).product::<f64>()
        } else {
            self.value_from_scattering(theta)
        }
    }

    fn value_from_scattering(&self, theta: &[f64]) -> f64 {
        let n = self.directed.len();
        let m = DMatrix::<Complex64>::identity(n, n) - self.scattering_at_phases(theta);
        let total: f64 = theta.iter().sum();
        let det = m.determinant();
        (self.phase_factor * self.norm * Complex64::from_polar(1.0, -total) * det).re
    }

    /// |det(I − S)| for bond phases θ_b.
    pub fn abs_det_at_phases(&self, theta: &[f64]) -> Result<f64> {
        self.require_neumann("det(I - S)")?;
        let n = self.directed.len();
        let m = DMatrix::<Complex64>::identity(n, n) - self.scattering_at_phases(theta);
        Ok(m.determinant().norm())
    }

    /// Smallest singular value of I − S.
    pub fn min_singular_value_at_phases(&self, theta: &[f64]) -> Result<f64> {
        self.require_neumann("singular values of I - S")?;
        let n = self.directed.len();
        let m = DMatrix::<Complex64>::identity(n, n) - self.scattering_at_phases(theta);
        Ok(m.singular_values_unordered().iter().copied().fold(f64::INFINITY, f64::min))
    }

    /// Σ_j arg λ_j(S) with each argument taken in [0, 2π), together with
    /// the smallest distance of any argument from the cut at 0.
    pub fn phase_sum(&self, theta: &[f64]) -> Result<(f64, f64)> {
        self.require_neumann("eigenphase counting")?;
        let s = self.scattering_at_phases(theta);
        let eig = s
            .eigenvalues()
            .ok_or_else(|| Error::Numerical("eigenvalues of S did not converge".into()))?;
        let mut sum = 0.0;
        let mut closest = f64::INFINITY;
        for z in eig.iter() {
            let mut a = z.arg();
            if a < 0.0 {
                a += TAU;
            }
            if a >= TAU {
                a -= TAU;
            }
            closest = closest.min(a).min(TAU - a);
            sum += a;
        }
        Ok((sum, closest))
    }

    pub fn bond_phases(&self, k: f64) -> Vec<f64> {
        self.graph.bonds().iter().map(|b| k * b.length).collect()
    }

    pub fn value(&self, k: f64) -> f64 {
        self.value_at_phases(&self.bond_phases(k))
    }
}

/// T_{a'a} = 2/v − δ_{a' â} for a' leaving the vertex that a enters.
fn transition_matrix(g: &MetricGraph, directed: &[(usize, usize, usize)]) -> DMatrix<f64> {
    let valences = g.valences();
    let n = directed.len();
    let mut t = DMatrix::zeros(n, n);
    for (a, &(_, _, end)) in directed.iter().enumerate() {
        let reverse = a ^ 1;
        for (ap, &(_, start, _)) in directed.iter().enumerate() {
            if start == end {
                t[(ap, a)] = 2.0 / valences[end] as f64 - if ap == reverse { 1.0 } else { 0.0 };
            }
        }
    }
    t
}

pub fn bond_scattering(g: &MetricGraph, k: f64) -> Result<BondScattering> {
    let sys = SecularSystem::new(g)?;
    sys.require_neumann("the bond scattering matrix")?;
    let theta = sys.bond_phases(k);
    let d = DVector::from_iterator(
        sys.directed.len(),
        sys.directed.iter().map(|&(b, _, _)| Complex64::from_polar(1.0, theta[b])),
    );
    Ok(BondScattering {
        k,
        s: sys.scattering_at_phases(&theta),
        d,
        t: sys.t.clone(),
    })
}

pub fn vertex_secular(g: &MetricGraph, k: f64) -> Result<VertexSecular> {
    let sys = SecularSystem::new(g)?;
    sys.require_neumann("the vertex secular matrix")?;
    let window = PI / g.total_length();
    let mut pole_set = Vec::new();
    for l in g.lengths() {
        let lo = ((k - window) * l / PI).ceil().max(0.0) as i64;
        let hi = ((k + window) * l / PI).floor() as i64;
        pole_set.extend((lo..=hi).map(|m| m as f64 * PI / l));
    }
    pole_set.sort_by(f64::total_cmp);
    Ok(VertexSecular {
        k,
        h: sys.vertex_matrix(&sys.bond_phases(k)),
        pole_set,
    })
}

/// f̃(k) = det h(k) · Π sin(k l_b); Π sin(k l_b) for Dirichlet bonds.
pub fn secular_value(g: &MetricGraph, k: f64) -> Result<f64> {
    Ok(SecularSystem::new(g)?.value(k))
}

/// A secular function with its variant tag.
#[derive(Debug, Clone)]
pub struct SecularFunction {
    system: SecularSystem,
    variant: SecularVariant,
}

impl SecularFunction {
    pub fn new(g: &MetricGraph, variant: SecularVariant) -> Result<Self> {
        let system = SecularSystem::new(g)?;
        if variant == SecularVariant::AbsDetIMinusS {
            system.require_neumann("det(I - S)")?;
        }
        Ok(SecularFunction { system, variant })
    }

    pub fn variant(&self) -> SecularVariant {
        self.variant
    }

    pub fn system(&self) -> &SecularSystem {
        &self.system
    }

    pub fn eval(&self, k: f64) -> f64 {
        let theta = self.system.bond_phases(k);
        match self.variant {
            SecularVariant::RegularizedDetH => self.system.value_at_phases(&theta),
            SecularVariant::AbsDetIMinusS => self
                .system
                .abs_det_at_phases(&theta)
                .expect("checked at construction"),
        }
    }

    /// How zeros that are not levels are excluded.
    pub fn spurious_zero_filter(&self) -> &'static str {
        match self.variant {
            SecularVariant::RegularizedDetH => {
                "roots with some sin(k l_b) near zero are accepted only if the smallest singular value of I - S(k) is below threshold"
            }
            SecularVariant::AbsDetIMinusS => "none needed: zeros of det(I - S) are exactly the levels",
        }
    }
}

/// Locates the minimum of σ_min(I − S(k)) in [a, b] by golden-section
/// search. Returns (k, σ_min).
pub fn singular_dip(sys: &SecularSystem, a: f64, b: f64, tol: f64) -> Result<(f64, f64)> {
    let f = |k: f64| sys.min_singular_value_at_phases(&sys.bond_phases(k));
    let (k, v) = golden_min(|k| f(k).unwrap_or(f64::INFINITY), a, b, tol);
    f(k)?;
    Ok((k, v))
}
