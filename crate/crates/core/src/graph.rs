//! Metric graphs, their boundary conditions and the length bookkeeping used
//! to lift a secular function onto a torus.
//!
//! A bond is stored once with its two end vertices; a loop (`from == to`)
//! contributes two directed bonds at its vertex, so it adds 2 to the valence.

use std::f64::consts::PI;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Current-conserving vertex coupling (λ = 0).
    Neumann,
    /// Decoupled bonds (λ → ∞); the spectrum is a union of progressions.
    Dirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bond {
    pub from: usize,
    pub to: usize,
    pub length: f64,
}

impl Bond {
    pub fn is_loop(&self) -> bool {
        self.from == self.to
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricGraph {
    vertex_count: usize,
    bonds: Vec<Bond>,
    boundary: Boundary,
}

impl MetricGraph {
    pub fn new(vertex_count: usize, bonds: Vec<Bond>, boundary: Boundary) -> Result<Self> {
        if vertex_count == 0 {
            return Err(Error::InvalidInput("graph needs at least one vertex".into()));
        }
        if bonds.is_empty() {
            return Err(Error::InvalidInput("graph needs at least one bond".into()));
        }
        for (b, bond) in bonds.iter().enumerate() {
            if !(bond.length > 0.0) || !bond.length.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "bond {b} has non-positive length {}",
                    bond.length
                )));
            }
            if bond.from >= vertex_count || bond.to >= vertex_count {
                return Err(Error::InvalidInput(format!(
                    "bond {b} references vertex outside 0..{vertex_count}"
                )));
            }
        }
        let g = MetricGraph {
            vertex_count,
            bonds,
            boundary,
        };
        if boundary == Boundary::Neumann {
            if let Some(i) = g.valences().iter().position(|&v| v == 0) {
                return Err(Error::InvalidInput(format!("vertex {i} has no bonds")));
            }
        }
        Ok(g)
    }

    /// Star graph: vertex 0 is the centre, vertex `b + 1` the end of bond `b`.
    pub fn star(lengths: &[f64]) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::InvalidInput("star needs at least one bond".into()));
        }
        let bonds = lengths
            .iter()
            .enumerate()
            .map(|(b, &length)| Bond {
                from: 0,
                to: b + 1,
                length,
            })
            .collect();
        Self::new(lengths.len() + 1, bonds, Boundary::Neumann)
    }

    /// Fully connected graph; lengths are taken in lexicographic order of
    /// the vertex pairs (0,1), (0,2), …, (1,2), ….
    pub fn complete(vertex_count: usize, lengths: &[f64]) -> Result<Self> {
        if vertex_count < 2 {
            return Err(Error::InvalidInput(
                "complete graph needs at least two vertices".into(),
            ));
        }
        let expected = vertex_count * (vertex_count - 1) / 2;
        if lengths.len() != expected {
            return Err(Error::InvalidInput(format!(
                "complete graph on {vertex_count} vertices needs {expected} lengths, got {}",
                lengths.len()
            )));
        }
        let mut bonds = Vec::with_capacity(expected);
        let mut it = lengths.iter();
        for i in 0..vertex_count {
            for j in (i + 1)..vertex_count {
                bonds.push(Bond {
                    from: i,
                    to: j,
                    length: *it.next().expect("length count checked"),
                });
            }
        }
        Self::new(vertex_count, bonds, Boundary::Neumann)
    }

    /// Two loops on a single vertex.
    pub fn figure_eight(l1: f64, l2: f64) -> Result<Self> {
        Self::new(
            1,
            vec![
                Bond {
                    from: 0,
                    to: 0,
                    length: l1,
                },
                Bond {
                    from: 0,
                    to: 0,
                    length: l2,
                },
            ],
            Boundary::Neumann,
        )
    }

    /// A bond of length `l1` from a free end (vertex 0) to vertex 1, which
    /// also carries a loop of length `l2`.
    pub fn lasso(l1: f64, l2: f64) -> Result<Self> {
        Self::new(
            2,
            vec![
                Bond {
                    from: 0,
                    to: 1,
                    length: l1,
                },
                Bond {
                    from: 1,
                    to: 1,
                    length: l2,
                },
            ],
            Boundary::Neumann,
        )
    }

    /// Disconnected bonds with Dirichlet ends.
    pub fn dirichlet_bonds(lengths: &[f64]) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::InvalidInput("need at least one bond".into()));
        }
        let bonds = lengths
            .iter()
            .enumerate()
            .map(|(b, &length)| Bond {
                from: 2 * b,
                to: 2 * b + 1,
                length,
            })
            .collect();
        Self::new(2 * lengths.len(), bonds, Boundary::Dirichlet)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    pub fn directed_bond_count(&self) -> usize {
        2 * self.bonds.len()
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.bonds.iter().map(|b| b.length).collect()
    }

    /// Number of directed bonds leaving each vertex.
    pub fn valences(&self) -> Vec<usize> {
        let mut v = vec![0; self.vertex_count];
        for b in &self.bonds {
            v[b.from] += 1;
            v[b.to] += 1;
        }
        v
    }

    /// Bond multiplicities between distinct vertices; loops sit on the
    /// diagonal with multiplicity 1 each.
    pub fn connectivity(&self) -> Vec<Vec<u32>> {
        let mut c = vec![vec![0u32; self.vertex_count]; self.vertex_count];
        for b in &self.bonds {
            if b.is_loop() {
                c[b.from][b.from] += 1;
            } else {
                c[b.from][b.to] += 1;
                c[b.to][b.from] += 1;
            }
        }
        c
    }

    pub fn total_length(&self) -> f64 {
        self.bonds.iter().map(|b| b.length).sum()
    }

    /// Mean density of wavenumber levels, `L_tot / π`.
    pub fn mean_density(&self) -> f64 {
        self.total_length() / PI
    }

    pub fn max_length(&self) -> f64 {
        self.bonds.iter().map(|b| b.length).fold(0.0, f64::max)
    }
}

/// Declared incommensurate lengths and the rational coefficients that build
/// every bond length from them.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthBasis {
    basis: Vec<f64>,
    coefficients: Vec<Vec<Ratio<i64>>>,
}

impl LengthBasis {
    pub fn new(basis: Vec<f64>, coefficients: Vec<Vec<Ratio<i64>>>) -> Result<Self> {
        if basis.is_empty() {
            return Err(Error::InvalidInput("basis is empty".into()));
        }
        if let Some(l) = basis.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidInput(format!("basis length {l} is not positive")));
        }
        for (b, row) in coefficients.iter().enumerate() {
            if row.len() != basis.len() {
                return Err(Error::InvalidInput(format!(
                    "bond {b} has {} coefficients for a basis of {}",
                    row.len(),
                    basis.len()
                )));
            }
        }
        Ok(LengthBasis {
            basis,
            coefficients,
        })
    }

    /// Integer coefficients, the common case.
    pub fn from_integers(basis: Vec<f64>, coefficients: Vec<Vec<i64>>) -> Result<Self> {
        let coefficients = coefficients
            .into_iter()
            .map(|row| row.into_iter().map(Ratio::from_integer).collect())
            .collect();
        Self::new(basis, coefficients)
    }

    /// One basis element per bond.
    pub fn per_bond(g: &MetricGraph) -> Self {
        let n = g.bond_count();
        let coefficients = (0..n)
            .map(|b| {
                (0..n)
                    .map(|i| Ratio::from_integer(i64::from(i == b)))
                    .collect()
            })
            .collect();
        LengthBasis {
            basis: g.lengths(),
            coefficients,
        }
    }

    /// Distinct bond lengths (exact float equality) as the basis.
    pub fn distinct_lengths(g: &MetricGraph) -> Self {
        let mut basis: Vec<f64> = Vec::new();
        let mut index = Vec::with_capacity(g.bond_count());
        for l in g.lengths() {
            let i = match basis.iter().position(|&x| x == l) {
                Some(i) => i,
                None => {
                    basis.push(l);
                    basis.len() - 1
                }
            };
            index.push(i);
        }
        let coefficients = index
            .iter()
            .map(|&i| {
                (0..basis.len())
                    .map(|j| Ratio::from_integer(i64::from(j == i)))
                    .collect()
            })
            .collect();
        LengthBasis {
            basis,
            coefficients,
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    pub fn coefficients(&self) -> &[Vec<Ratio<i64>>] {
        &self.coefficients
    }

    pub fn reconstruct(&self) -> Vec<f64> {
        self.coefficients
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&self.basis)
                    .map(|(c, l)| ratio_to_f64(c) * l)
                    .sum()
            })
            .collect()
    }

    /// Rescales each basis element by the lcm of its column denominators so
    /// that every coefficient becomes an integer. The torus coordinates of
    /// the rescaled basis are then all 2π-periodic.
    pub fn integerized(&self) -> LengthBasis {
        let n = self.dim();
        let mut basis = self.basis.clone();
        let mut coefficients = self.coefficients.clone();
        for i in 0..n {
            let lcm = self
                .coefficients
                .iter()
                .fold(1i64, |acc, row| num_integer_lcm(acc, *row[i].denom()));
            if lcm != 1 {
                basis[i] /= lcm as f64;
                for row in coefficients.iter_mut() {
                    row[i] *= Ratio::from_integer(lcm);
                }
            }
        }
        LengthBasis {
            basis,
            coefficients,
        }
    }

    /// Integer coefficient matrix; `None` if any coefficient is fractional.
    pub fn integer_coefficients(&self) -> Option<Vec<Vec<i64>>> {
        self.coefficients
            .iter()
            .map(|row| {
                row.iter()
                    .map(|c| c.is_integer().then(|| c.to_integer()))
                    .collect()
            })
            .collect()
    }
}

fn ratio_to_f64(r: &Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn gcd(mut a: i64, mut b: i64) -> i64 {
    a = a.abs();
    b = b.abs();
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

fn num_integer_lcm(a: i64, b: i64) -> i64 {
    if a == 0 || b == 0 {
        return 0;
    }
    (a / gcd(a, b) * b).abs()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidateOptions {
    /// Largest |coefficient| tried in the rational-relation search.
    pub max_coefficient: i64,
    /// Relation accepted when |Σ c_i l_i| ≤ tol · Σ |c_i| l_i.
    pub relation_tolerance: f64,
    /// Residual bound for basis reconstruction (relative).
    pub residual_tolerance: f64,
    /// Full lattice enumeration is attempted while (2·max+1)^n stays below this.
    pub full_search_budget: u64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            max_coefficient: 50,
            relation_tolerance: 1e-9,
            residual_tolerance: 1e-12,
            full_search_budget: 3_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LatticeSearch {
    Full,
    Pairwise,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RationalRelation {
    /// Integer vector c with Σ c_i l_i ≈ 0, primitive, first nonzero entry positive.
    pub coefficients: Vec<i64>,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub torus_dim: usize,
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub relations: Vec<RationalRelation>,
    pub search: LatticeSearch,
    pub commensurate: bool,
}

/// Checks that `basis` rebuilds every bond length and searches for small
/// integer relations among the declared-incommensurate basis lengths.
pub fn validate(g: &MetricGraph, basis: &LengthBasis, opts: &ValidateOptions) -> Result<ValidationReport> {
    if basis.coefficients.len() != g.bond_count() {
        return Err(Error::InvalidInput(format!(
            "basis has coefficients for {} bonds, graph has {}",
            basis.coefficients.len(),
            g.bond_count()
        )));
    }
    if basis.dim() > g.bond_count() {
        return Err(Error::InvalidInput(format!(
            "basis dimension {} exceeds bond count {}",
            basis.dim(),
            g.bond_count()
        )));
    }
    let rebuilt = basis.reconstruct();
    let mut residuals = Vec::with_capacity(rebuilt.len());
    for (b, (bond, r)) in g.bonds().iter().zip(&rebuilt).enumerate() {
        let res = (r - bond.length).abs() / bond.length;
        if res > opts.residual_tolerance {
            return Err(Error::BasisMismatch {
                bond: b,
                length: bond.length,
                reconstructed: *r,
                residual: res,
            });
        }
        residuals.push(res);
    }
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);
    let (relations, search) = find_relations(&basis.basis, opts);
    Ok(ValidationReport {
        torus_dim: basis.dim(),
        residuals,
        max_residual,
        commensurate: !relations.is_empty(),
        relations,
        search,
    })
}

fn find_relations(lengths: &[f64], opts: &ValidateOptions) -> (Vec<RationalRelation>, LatticeSearch) {
    let n = lengths.len();
    let m = opts.max_coefficient;
    let side = (2 * m + 1) as u64;
    let full = side
        .checked_pow(n as u32)
        .is_some_and(|size| size <= opts.full_search_budget);
    let mut out = Vec::new();
    let mut check = |c: &[i64]| {
        let (sum, scale) = c
            .iter()
            .zip(lengths)
            .fold((0.0, 0.0), |(s, a), (&ci, &l)| (s + ci as f64 * l, a + (ci as f64 * l).abs()));
        if scale > 0.0 && sum.abs() <= opts.relation_tolerance * scale {
            out.push(RationalRelation {
                coefficients: c.to_vec(),
                residual: sum.abs() / scale,
            });
        }
    };
    if full && n > 0 {
        let mut c = vec![-m; n];
        loop {
            if is_canonical(&c) {
                check(&c);
            }
            // odometer increment
            let mut i = 0;
            loop {
                if i == n {
                    return (out, LatticeSearch::Full);
                }
                if c[i] < m {
                    c[i] += 1;
                    break;
                }
                c[i] = -m;
                i += 1;
            }
        }
    }
    let mut c = vec![0i64; n];
    for i in 0..n {
        for j in (i + 1)..n {
            for p in 1..=m {
                for q in -m..=m {
                    if q == 0 || gcd(p, q) != 1 {
                        continue;
                    }
                    c[i] = p;
                    c[j] = q;
                    check(&c);
                }
            }
            c[i] = 0;
            c[j] = 0;
        }
    }
    (out, LatticeSearch::Pairwise)
}

/// Nonzero, primitive, first nonzero entry positive.
fn is_canonical(c: &[i64]) -> bool {
    match c.iter().find(|&&x| x != 0) {
        Some(&first) if first > 0 => c.iter().fold(0, |g, &x| gcd(g, x)) == 1,
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const STAR3: [f64; 3] = [PI, 3.183459012, 3.1442336073];

    #[test]
    fn star_construction() {
        let g = MetricGraph::star(&STAR3).unwrap();
        assert_eq!(g.vertex_count(), 4);
        assert_eq!(g.bond_count(), 3);
        assert_eq!(g.valences(), vec![3, 1, 1, 1]);
        assert!((g.total_length() - (PI + 3.183459012 + 3.1442336073)).abs() < 1e-12);
        assert!((g.total_length() - 9.46929).abs() < 1e-5);
        assert!((g.mean_density() - 3.01415).abs() < 1e-4);

        let single = MetricGraph::star(&[1.0]).unwrap();
        assert_eq!(single.total_length(), 1.0);
        let two = MetricGraph::star(&[2f64.sqrt(), 3f64.sqrt()]).unwrap();
        assert_eq!((two.vertex_count(), two.bond_count()), (3, 2));
    }

    #[test]
    fn constructor_errors() {
        assert!(matches!(MetricGraph::star(&[]), Err(Error::InvalidInput(_))));
        assert!(matches!(MetricGraph::star(&[1.0, 0.0]), Err(Error::InvalidInput(_))));
        assert!(matches!(MetricGraph::star(&[-1.0]), Err(Error::InvalidInput(_))));
        assert!(matches!(MetricGraph::complete(5, &[1.0; 9]), Err(Error::InvalidInput(_))));
        assert!(matches!(MetricGraph::figure_eight(1.0, -2.0), Err(Error::InvalidInput(_))));
        assert!(matches!(MetricGraph::lasso(0.0, 1.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn complete_graphs() {
        let g = MetricGraph::complete(5, &[1.0; 10]).unwrap();
        assert!(g.valences().iter().all(|&v| v == 4));
        let c = g.connectivity();
        for (i, row) in c.iter().enumerate() {
            for (j, &cij) in row.iter().enumerate() {
                assert_eq!(cij, c[j][i]);
                assert_eq!(cij, u32::from(i != j));
            }
        }
        let bond = MetricGraph::complete(2, &[2.5]).unwrap();
        assert_eq!(bond.bond_count(), 1);
        assert_eq!(bond.total_length(), 2.5);
    }

    #[test]
    fn loops_count_twice() {
        let e = MetricGraph::figure_eight(2f64.sqrt(), 3f64.sqrt()).unwrap();
        assert_eq!((e.vertex_count(), e.bond_count()), (1, 2));
        assert_eq!(e.valences(), vec![4]);
        assert!((e.mean_density() - (2f64.sqrt() + 3f64.sqrt()) / PI).abs() < 1e-15);
        let l = MetricGraph::lasso(2f64.sqrt(), 3f64.sqrt()).unwrap();
        assert_eq!((l.vertex_count(), l.bond_count()), (2, 2));
        assert_eq!(l.valences(), vec![1, 3]);
    }

    #[test]
    fn single_bond_density_is_one() {
        let g = MetricGraph::star(&[PI]).unwrap();
        assert!((g.mean_density() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn validate_star3_has_no_relation() {
        let g = MetricGraph::star(&STAR3).unwrap();
        let basis = LengthBasis::per_bond(&g);
        let rep = validate(&g, &basis, &ValidateOptions::default()).unwrap();
        assert_eq!(rep.torus_dim, 3);
        assert_eq!(rep.search, LatticeSearch::Full);
        assert!(rep.relations.is_empty(), "{:?}", rep.relations);
        assert_eq!(rep.max_residual, 0.0);
    }

    #[test]
    fn validate_two_length_star() {
        let (l1, l2) = (PI, 1.53183459012);
        let g = MetricGraph::star(&[l1, l2, l1]).unwrap();
        let basis = LengthBasis::from_integers(vec![l1, l2], vec![vec![1, 0], vec![0, 1], vec![1, 0]]).unwrap();
        let rep = validate(&g, &basis, &ValidateOptions::default()).unwrap();
        assert_eq!(rep.torus_dim, 2);
        assert!(!rep.commensurate);
        let d = LengthBasis::distinct_lengths(&g);
        assert_eq!(d.basis(), &[l1, l2]);
        assert_eq!(d.integer_coefficients().unwrap(), vec![vec![1, 0], vec![0, 1], vec![1, 0]]);
    }

    #[test]
    fn validate_multiple_of_basis() {
        let s = 2f64.sqrt();
        let g = MetricGraph::star(&[s, 2.0 * s]).unwrap();
        let basis = LengthBasis::from_integers(vec![s], vec![vec![1], vec![2]]).unwrap();
        let rep = validate(&g, &basis, &ValidateOptions::default()).unwrap();
        assert_eq!(rep.torus_dim, 1);
        assert_eq!(basis.integer_coefficients().unwrap()[1], vec![2]);
    }

    #[test]
    fn validate_detects_commensurate_figure_eight() {
        let g = MetricGraph::figure_eight(1.0, 1.0).unwrap();
        let rep = validate(&g, &LengthBasis::per_bond(&g), &ValidateOptions::default()).unwrap();
        assert!(rep.commensurate);
        assert_eq!(rep.relations[0].coefficients, vec![1, -1]);
    }

    #[test]
    fn validate_rejects_bad_basis() {
        let g = MetricGraph::star(&[1.0, 2.0]).unwrap();
        let basis = LengthBasis::from_integers(vec![1.0], vec![vec![1], vec![3]]).unwrap();
        assert!(matches!(
            validate(&g, &basis, &ValidateOptions::default()),
            Err(Error::BasisMismatch { bond: 1, .. })
        ));
    }

    #[test]
    fn pairwise_search_for_large_bases() {
        let l: Vec<f64> = [2.0, 3.0, 5.0, 6.0, 7.0, 10.0, 11.0, 13.0]
            .iter()
            .map(|x: &f64| 0.6 * x.sqrt())
            .collect();
        let mut with_pi = l.clone();
        with_pi.push(0.6 * PI);
        with_pi.push(0.6 * std::f64::consts::E);
        let g = MetricGraph::complete(5, &with_pi).unwrap();
        let rep = validate(&g, &LengthBasis::per_bond(&g), &ValidateOptions::default()).unwrap();
        assert_eq!(rep.search, LatticeSearch::Pairwise);
        assert!(!rep.commensurate);
    }

    #[test]
    fn integerized_basis_rebuilds_lengths() {
        let l = 1.3;
        let g = MetricGraph::star(&[l, 1.5 * l]).unwrap();
        let basis = LengthBasis::new(
            vec![l],
            vec![vec![Ratio::from_integer(1)], vec![Ratio::new(3, 2)]],
        )
        .unwrap();
        let int = basis.integerized();
        assert_eq!(int.integer_coefficients().unwrap(), vec![vec![2], vec![3]]);
        assert!((int.basis()[0] - l / 2.0).abs() < 1e-15);
        validate(&g, &int, &ValidateOptions::default()).unwrap();
    }
}
