//! Linear flow on the length torus and its crossings with the zero set of
//! the secular function.
//!
//! With bond lengths l_b = Σ_i c_bi L_i the secular function at wavenumber
//! k only depends on the n torus coordinates x_i = L_i k mod 2π, so the
//! spectrum is the sequence of times at which the straight line x(t) = L t
//! crosses the surface Σ = {F = 0}. Spacing statistics become statistics of
//! first-return times to Σ, which can be sampled along trajectories or
//! integrated over Σ with the flux measure.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{validate, LengthBasis, MetricGraph, ValidateOptions};
use crate::numeric::{bisect_root, golden_min};
use crate::secular::{find_zeros_on_line, next_zero, PhaseLine, SecularSystem, SolverSettings};
use crate::spacing::SpacingDistribution;

/// Straight-line flow x(t) = x0 + ω t on a torus with the given periods.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TorusFlow {
    pub frequencies: Vec<f64>,
    pub periods: Vec<f64>,
}

impl TorusFlow {
    pub fn new(frequencies: Vec<f64>) -> Result<Self> {
        if frequencies.is_empty() || frequencies.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::InvalidInput(format!(
                "flow frequencies must be positive and finite, got {frequencies:?}"
            )));
        }
        let periods = vec![TAU; frequencies.len()];
        Ok(TorusFlow {
            frequencies,
            periods,
        })
    }

    pub fn dim(&self) -> usize {
        self.frequencies.len()
    }

    pub fn speed(&self) -> f64 {
        self.frequencies.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn point(&self, x0: &[f64], t: f64) -> Vec<f64> {
        x0.iter().zip(&self.frequencies).map(|(x, w)| x + w * t).collect()
    }

    fn random_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.periods.iter().map(|p| rng.random::<f64>() * p).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Symmetry {
    /// F(x + p e_i) = F(x)
    Periodic,
    /// F(x + p e_i) = −F(x); Σ is still invariant under the shift.
    AntiPeriodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoordinateSymmetry {
    pub kind: Symmetry,
    pub period: f64,
}

/// Secular data carried by surfaces built from a graph: the phase of bond
/// b at torus point x is Σ_i c_bi x_i.
#[derive(Debug, Clone)]
struct SecularData {
    system: SecularSystem,
    coefficients: Vec<Vec<f64>>,
}

impl SecularData {
    fn phases(&self, x: &[f64]) -> Vec<f64> {
        self.coefficients
            .iter()
            .map(|row| row.iter().zip(x).map(|(c, xi)| c * xi).sum())
            .collect()
    }
}

type SurfaceFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A real function on the torus whose zero set is the section Σ.
#[derive(Clone)]
pub struct SurfaceFunction {
    dim: usize,
    f: Arc<SurfaceFn>,
    pub symmetry: Vec<CoordinateSymmetry>,
    secular: Option<Arc<SecularData>>,
}

impl std::fmt::Debug for SurfaceFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SurfaceFunction")
            .field("dim", &self.dim)
            .field("symmetry", &self.symmetry)
            .field("secular", &self.secular.is_some())
            .finish()
    }
}

const SYMMETRY_PROBES: usize = 64;
const SYMMETRY_TOLERANCE: f64 = 1e-10;

impl SurfaceFunction {
    /// Wraps an arbitrary function; symmetry tags are detected on random
    /// probes (π-shifts are tested, 2π-periodicity is assumed).
    pub fn new(dim: usize, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        let f: Arc<SurfaceFn> = Arc::new(f);
        let symmetry = detect_symmetry(dim, f.as_ref());
        SurfaceFunction {
            dim,
            f,
            symmetry,
            secular: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    pub fn is_secular(&self) -> bool {
        self.secular.is_some()
    }

    /// Largest violation of the declared symmetry tags over `probes`
    /// random points; `Numerical` if it exceeds the tolerance.
    pub fn check_symmetry(&self, probes: usize, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..probes {
            let x: Vec<f64> = (0..self.dim).map(|_| rng.random::<f64>() * TAU).collect();
            let fx = self.eval(&x);
            for (i, s) in self.symmetry.iter().enumerate() {
                let mut y = x.clone();
                y[i] += s.period;
                let fy = self.eval(&y);
                let d = match s.kind {
                    Symmetry::Periodic => fy - fx,
                    Symmetry::AntiPeriodic => fy + fx,
                };
                worst = worst.max(d.abs() / fx.abs().max(1.0));
            }
        }
        if worst > SYMMETRY_TOLERANCE {
            return Err(Error::Numerical(format!(
                "surface function violates its symmetry tags by {worst:e}"
            )));
        }
        Ok(worst)
    }
}

fn detect_symmetry(dim: usize, f: &SurfaceFn) -> Vec<CoordinateSymmetry> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let probes: Vec<Vec<f64>> = (0..SYMMETRY_PROBES)
        .map(|_| (0..dim).map(|_| rng.random::<f64>() * TAU).collect())
        .collect();
    (0..dim)
        .map(|i| {
            let (mut even, mut odd) = (true, true);
            for x in &probes {
                let fx = f(x);
                let mut y = x.clone();
                y[i] += PI;
                let fy = f(&y);
                let scale = fx.abs().max(1.0);
                even &= (fy - fx).abs() <= SYMMETRY_TOLERANCE * scale;
                odd &= (fy + fx).abs() <= SYMMETRY_TOLERANCE * scale;
            }
            match (even, odd) {
                (true, _) => CoordinateSymmetry {
                    kind: Symmetry::Periodic,
                    period: PI,
                },
                (false, true) => CoordinateSymmetry {
                    kind: Symmetry::AntiPeriodic,
                    period: PI,
                },
                _ => CoordinateSymmetry {
                    kind: Symmetry::Periodic,
                    period: TAU,
                },
            }
        })
        .collect()
}

/// The secular surface of a Neumann graph over its length basis.
///
/// The basis is validated and rescaled so that all coefficients are
/// integers; the returned flow frequencies are the rescaled basis lengths
/// and every coordinate has period 2π.
pub fn secular_surface(g: &MetricGraph, basis: &LengthBasis) -> Result<(TorusFlow, SurfaceFunction)> {
    validate(g, basis, &ValidateOptions::default())?;
    let basis = basis.integerized();
    let coefficients: Vec<Vec<f64>> = basis
        .integer_coefficients()
        .ok_or_else(|| Error::Numerical("integerized basis has fractional coefficients".into()))?
        .into_iter()
        .map(|row| row.into_iter().map(|c| c as f64).collect())
        .collect();
    let system = SecularSystem::new(g)?;
    if !system.is_neumann() {
        return Err(Error::UnsupportedVariant(
            "secular surfaces are built for Neumann graphs".into(),
        ));
    }
    let data = Arc::new(SecularData {
        system,
        coefficients,
    });
    let inner = Arc::clone(&data);
    let mut surface = SurfaceFunction::new(basis.dim(), move |x| inner.system.value_at_phases(&inner.phases(x)));
    surface.secular = Some(data);
    let flow = TorusFlow::new(basis.basis().to_vec())?;
    Ok((flow, surface))
}

/// Successive return times along one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReturnSample {
    pub start: Vec<f64>,
    /// τ_j = t_{j+1} − t_j between consecutive crossings.
    pub times: Vec<f64>,
    pub first_crossing: f64,
    pub last_crossing: f64,
    /// Crossings per unit time observed over the scanned window.
    pub rate: f64,
}

fn check_dims(flow: &TorusFlow, surface: &SurfaceFunction) -> Result<()> {
    if flow.dim() != surface.dim() {
        return Err(Error::InvalidInput(format!(
            "flow has dimension {}, surface has {}",
            flow.dim(),
            surface.dim()
        )));
    }
    Ok(())
}

/// `count` consecutive return times to Σ along x(t) = ξ0 + ω t, t > 0.
///
/// Secular surfaces reuse the exact-count zero scan along the phase line,
/// so from ξ0 = 0 the return times are exactly the level spacings. Other
/// surfaces are scanned at a step set by a pilot estimate of the rate.
pub fn first_returns(
    flow: &TorusFlow,
    surface: &SurfaceFunction,
    xi0: &[f64],
    count: usize,
    settings: &SolverSettings,
) -> Result<ReturnSample> {
    check_dims(flow, surface)?;
    if xi0.len() != flow.dim() {
        return Err(Error::InvalidInput(format!(
            "start point has {} coordinates, torus has {}",
            xi0.len(),
            flow.dim()
        )));
    }
    if count == 0 {
        return Err(Error::InvalidInput("at least one return time is required".into()));
    }
    let (crossings, window) = match &surface.secular {
        Some(data) => secular_crossings(data, xi0, count + 1, settings)?,
        None => generic_crossings(flow, surface, xi0, count + 1, settings)?,
    };
    let times: Vec<f64> = crossings.windows(2).take(count).map(|w| w[1] - w[0]).collect();
    Ok(ReturnSample {
        start: xi0.to_vec(),
        first_crossing: crossings[0],
        last_crossing: crossings[count],
        rate: crossings.len() as f64 / window,
        times,
    })
}

fn secular_crossings(data: &SecularData, xi0: &[f64], needed: usize, settings: &SolverSettings) -> Result<(Vec<f64>, f64)> {
    let line = PhaseLine::new(&data.system, data.phases(xi0));
    let rate = line.total_rate() / PI;
    let mut crossings = Vec::with_capacity(needed);
    let mut t = 0.0;
    while crossings.len() < needed {
        let missing = (needed - crossings.len()) as f64;
        let span = (missing * 1.02 + 8.0) / rate;
        let s = find_zeros_on_line(&line, t, t + span, settings).map_err(|e| match e {
            Error::MissingLevels {
                k_lo, k_hi, found, ..
            } => Error::MissingCrossings {
                expected_rate: rate,
                observed_rate: found as f64 / (k_hi - k_lo),
                crossings: found,
            },
            other => other,
        })?;
        crossings.extend(s.levels);
        t += span;
    }
    crossings.truncate(needed);
    Ok((crossings, t))
}

/// Crossing rate of a generic surface from sign changes over a pilot run.
fn pilot_rate(flow: &TorusFlow, surface: &SurfaceFunction, xi0: &[f64]) -> f64 {
    let wmax = flow.frequencies.iter().copied().fold(0.0, f64::max);
    let dt = TAU / (512.0 * wmax);
    let n = 1 << 16;
    let mut prev = surface.eval(xi0);
    let mut changes = 0usize;
    for i in 1..=n {
        let v = surface.eval(&flow.point(xi0, i as f64 * dt));
        if v != 0.0 && prev != 0.0 && (v > 0.0) != (prev > 0.0) {
            changes += 1;
        }
        if v != 0.0 {
            prev = v;
        }
    }
    changes.max(1) as f64 / (n as f64 * dt)
}

fn generic_crossings(
    flow: &TorusFlow,
    surface: &SurfaceFunction,
    xi0: &[f64],
    needed: usize,
    settings: &SolverSettings,
) -> Result<(Vec<f64>, f64)> {
    let rate = pilot_rate(flow, surface, xi0);
    let dt = 1.0 / (rate * settings.oversample as f64);
    let g = |t: f64| surface.eval(&flow.point(xi0, t));
    let mut crossings = Vec::with_capacity(needed);
    let mut t = 0.0;
    let mut prev = g(0.0);
    let limit = 100.0 * needed as f64 / rate;
    while crossings.len() < needed {
        if t > limit {
            return Err(Error::MissingCrossings {
                expected_rate: rate,
                observed_rate: crossings.len() as f64 / t,
                crossings: crossings.len(),
            });
        }
        let next = t + dt;
        let v = g(next);
        if prev == 0.0 && t > 0.0 {
            crossings.push(t);
        } else if v != 0.0 && prev != 0.0 && (v > 0.0) != (prev > 0.0) {
            let r = bisect_root(g, t, next, settings.tolerance * next.max(1.0)).expect("sign change");
            crossings.push(r);
        }
        prev = v;
        t = next;
    }
    crossings.truncate(needed);
    Ok((crossings, t))
}

/// Return times from `seeds.len()` independent random starting points,
/// concatenated in seed order.
pub fn sample_returns(
    flow: &TorusFlow,
    surface: &SurfaceFunction,
    seeds: &[u64],
    count_per_seed: usize,
    settings: &SolverSettings,
) -> Result<Vec<ReturnSample>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xi0 = flow.random_point(&mut rng);
            first_returns(flow, surface, &xi0, count_per_seed, settings)
        })
        .collect()
}

const SWEEP_POINTS: usize = 4096;

/// Number of sheets of Σ met by one full 2π sweep of coordinate `direction`,
/// by majority over `probes` random transverse positions.
pub fn sheet_count(flow: &TorusFlow, surface: &SurfaceFunction, direction: usize, probes: usize, seed: u64) -> Result<usize> {
    check_dims(flow, surface)?;
    if direction >= flow.dim() {
        return Err(Error::InvalidInput(format!(
            "direction {direction} outside a {}-torus",
            flow.dim()
        )));
    }
    if probes < 16 {
        return Err(Error::InvalidInput(format!("at least 16 probes required, got {probes}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (direction as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut votes: HashMap<usize, usize> = HashMap::new();
    for _ in 0..probes {
        let mut x = flow.random_point(&mut rng);
        let start = x[direction];
        let period = flow.periods[direction];
        let values: Vec<f64> = (0..SWEEP_POINTS)
            .map(|j| {
                x[direction] = start + period * j as f64 / SWEEP_POINTS as f64;
                surface.eval(&x)
            })
            .filter(|v| *v != 0.0)
            .collect();
        let mut changes = 0;
        for j in 0..values.len() {
            let next = values[(j + 1) % values.len()];
            if (values[j] > 0.0) != (next > 0.0) {
                changes += 1;
            }
        }
        *votes.entry(changes).or_default() += 1;
    }
    let mut tally: Vec<(usize, usize)> = votes.into_iter().collect();
    tally.sort_unstable();
    let (best, n) = tally.iter().copied().max_by_key(|&(m, n)| (n, std::cmp::Reverse(m))).expect("probes > 0");
    if 2 * n <= probes {
        return Err(Error::AmbiguousSheets {
            direction,
            votes: tally,
        });
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SumRuleReport {
    pub sheets: Vec<usize>,
    pub basis_lengths: Vec<f64>,
    /// Σ m_i L_i
    pub lhs: f64,
    /// 2 L_tot
    pub rhs: f64,
    pub relative_error: f64,
}

/// Checks Σ_i m_i L_i = 2 L_tot, with m_i the sheet counts of the secular
/// surface along each torus direction.
pub fn verify_sum_rule(g: &MetricGraph, basis: &LengthBasis, probes: usize, seed: u64) -> Result<SumRuleReport> {
    let (flow, surface) = secular_surface(g, basis)?;
    let sheets = (0..flow.dim())
        .map(|i| sheet_count(&flow, &surface, i, probes, seed))
        .collect::<Result<Vec<_>>>()?;
    let lhs: f64 = sheets.iter().zip(&flow.frequencies).map(|(&m, l)| m as f64 * l).sum();
    let rhs = 2.0 * g.total_length();
    let relative_error = (lhs - rhs).abs() / rhs;
    if relative_error > 1e-9 {
        return Err(Error::SumRuleViolation { lhs, rhs });
    }
    Ok(SumRuleReport {
        sheets,
        basis_lengths: flow.frequencies,
        lhs,
        rhs,
        relative_error,
    })
}

/// Flux-weighted return-time distribution over Σ on a 2-torus.
#[derive(Debug, Clone)]
pub struct QuadratureResult {
    pub distribution: SpacingDistribution,
    /// (Δ, weight) per traced segment, weights summing to one.
    pub samples: Vec<(f64, f64)>,
    /// Crossing rate used to scale return times to unit mean.
    pub density: f64,
    /// flux(Σ) / area(T²) as traced; converges to `density` for
    /// secular surfaces as the lattice is refined.
    pub flux_density: f64,
    pub segments: usize,
    /// Lattice cells crossed by two sheets of Σ.
    pub saddle_cells: usize,
    /// Segments whose midpoint could not be moved onto Σ along the flow.
    pub tangent_segments: usize,
    /// Smallest return time seen, in time units.
    pub tau_min: f64,
}

struct Segment {
    a: [f64; 2],
    b: [f64; 2],
    weight: f64,
}

/// Traces Σ = {F = 0} on a `grid_size`² lattice over the 2-torus and
/// integrates the first-return time against the flux measure
/// |ω_1 dx_2 − ω_2 dx_1| along Σ.
///
/// Zeros on lattice edges are located by bisection and linked cell by cell;
/// saddle cells are split by the sign at the cell centre. Each linked
/// chord carries its exact flux weight and the return time of the point
/// where the flow line through the chord midpoint meets Σ.
pub fn quadrature_spacing_2d(
    flow: &TorusFlow,
    surface: &SurfaceFunction,
    grid_size: usize,
    settings: &SolverSettings,
) -> Result<QuadratureResult> {
    check_dims(flow, surface)?;
    if flow.dim() != 2 {
        return Err(Error::InvalidInput(format!(
            "quadrature is implemented on the 2-torus, got dimension {}",
            flow.dim()
        )));
    }
    if grid_size < 8 {
        return Err(Error::InvalidInput(format!("grid_size must be at least 8, got {grid_size}")));
    }
    let (segments, saddle_cells) = trace_section(flow, surface, grid_size);
    if segments.is_empty() {
        return Err(Error::Continuation {
            x: 0.0,
            y: 0.0,
            reason: "no zero of the surface function on the lattice".into(),
        });
    }
    let area = flow.periods[0] * flow.periods[1];
    let flux: f64 = segments.iter().map(|s| s.weight).sum();
    let flux_density = flux / area;
    // secular surfaces have the exact rate L_tot/π
    let density = match &surface.secular {
        Some(data) => data.system.graph().mean_density(),
        None => flux_density,
    };
    let h = flow.periods[0].max(flow.periods[1]) / grid_size as f64;

    let taus: Vec<(f64, bool)> = segments
        .par_iter()
        .map(|s| {
            let (q, tangent) = onto_section(flow, surface, s, h);
            return_time(flow, surface, &q, h, settings).map(|t| (t, tangent))
        })
        .collect::<Result<_>>()?;

    let tangent_segments = taus.iter().filter(|t| t.1).count();
    let tau_min = taus.iter().map(|t| t.0).fold(f64::INFINITY, f64::min);
    let samples: Vec<(f64, f64)> = segments
        .iter()
        .zip(&taus)
        .map(|(s, (t, _))| (t * density, s.weight / flux))
        .collect();
    let distribution = SpacingDistribution::weighted(samples.clone())?;
    Ok(QuadratureResult {
        distribution,
        samples,
        density,
        flux_density,
        segments: segments.len(),
        saddle_cells,
        tangent_segments,
        tau_min,
    })
}

// Irrational lattice offsets keep grid nodes off straight sheets of Σ.
const GRID_SHIFT: [f64; 2] = [std::f64::consts::FRAC_1_PI, std::f64::consts::E / 10.0];

/// Horizontal and vertical edge zeros for one grid column.
type EdgeRow = (Vec<Option<f64>>, Vec<Option<f64>>);

/// Linked chords of Σ and the number of cells where two sheets meet.
fn trace_section(flow: &TorusFlow, surface: &SurfaceFunction, n: usize) -> (Vec<Segment>, usize) {
    let hx = flow.periods[0] / n as f64;
    let hy = flow.periods[1] / n as f64;
    let x = |i: usize| (i as f64 + GRID_SHIFT[0]) * hx;
    let y = |j: usize| (j as f64 + GRID_SHIFT[1]) * hy;
    let values: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| surface.eval(&[x(i), y(j)])).collect())
        .collect();
    let positive = |i: usize, j: usize| values[i % n][j % n] >= 0.0;
    let tol = 1e-14 * hx.max(hy);

    // zero offset along the edge (i,j)→(i+1,j) and (i,j)→(i,j+1)
    let edges: Vec<EdgeRow> = (0..n)
        .into_par_iter()
        .map(|i| {
            let horizontal = (0..n)
                .map(|j| {
                    (positive(i, j) != positive(i + 1, j)).then(|| {
                        let y0 = y(j);
                        edge_root(|s| surface.eval(&[x(i) + s, y0]), hx, tol)
                    })
                })
                .collect();
            let vertical = (0..n)
                .map(|j| {
                    (positive(i, j) != positive(i, j + 1)).then(|| {
                        let x0 = x(i);
                        edge_root(|s| surface.eval(&[x0, y(j) + s]), hy, tol)
                    })
                })
                .collect();
            (horizontal, vertical)
        })
        .collect();

    let (w1, w2) = (flow.frequencies[0], flow.frequencies[1]);
    let rows: Vec<(Vec<Segment>, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut out = Vec::new();
            let mut saddles = 0;
            for j in 0..n {
                let (x0, y0) = (x(i), y(j));
                // edges in order: bottom, right, top, left
                let pts: [Option<[f64; 2]>; 4] = [
                    edges[i].0[j].map(|s| [x0 + s, y0]),
                    edges[(i + 1) % n].1[j].map(|s| [x0 + hx, y0 + s]),
                    edges[i].0[(j + 1) % n].map(|s| [x0 + s, y0 + hy]),
                    edges[i].1[j].map(|s| [x0, y0 + s]),
                ];
                let present: Vec<usize> = (0..4).filter(|&e| pts[e].is_some()).collect();
                let pairs: Vec<(usize, usize)> = match present.len() {
                    2 => vec![(present[0], present[1])],
                    4 => {
                        saddles += 1;
                        let centre = surface.eval(&[x0 + 0.5 * hx, y0 + 0.5 * hy]) >= 0.0;
                        if centre == positive(i, j) {
                            vec![(0, 1), (2, 3)]
                        } else {
                            vec![(0, 3), (1, 2)]
                        }
                    }
                    _ => vec![],
                };
                for (p, q) in pairs {
                    let (a, b) = (pts[p].unwrap(), pts[q].unwrap());
                    let weight = (w1 * (b[1] - a[1]) - w2 * (b[0] - a[0])).abs();
                    if weight > 0.0 {
                        out.push(Segment { a, b, weight });
                    }
                }
            }
            (out, saddles)
        })
        .collect();
    let saddles = rows.iter().map(|r| r.1).sum();
    (rows.into_iter().flat_map(|r| r.0).collect(), saddles)
}

fn edge_root(f: impl Fn(f64) -> f64, h: f64, tol: f64) -> f64 {
    let fa = f(0.0);
    if fa == 0.0 {
        return 0.0;
    }
    bisect_root(&f, 0.0, h, tol).unwrap_or(0.5 * h)
}

/// The point where the flow line through the chord midpoint meets Σ,
/// searched within one lattice step; falls back to the chord end.
fn onto_section(flow: &TorusFlow, surface: &SurfaceFunction, s: &Segment, h: f64) -> (Vec<f64>, bool) {
    let m = [0.5 * (s.a[0] + s.b[0]), 0.5 * (s.a[1] + s.b[1])];
    let speed = flow.speed();
    let g = |u: f64| surface.eval(&flow.point(&m, u / speed));
    let steps = 8;
    let mut best: Option<f64> = None;
    for k in 0..steps {
        for sign in [1.0, -1.0] {
            let (u0, u1) = (sign * h * k as f64 / steps as f64, sign * h * (k + 1) as f64 / steps as f64);
            if let Some(r) = bisect_root(g, u0.min(u1), u0.max(u1), 1e-15 * h.max(1.0)) {
                if best.is_none_or(|b| r.abs() < b.abs()) {
                    best = Some(r);
                }
            }
        }
        if best.is_some() {
            break;
        }
    }
    match best {
        Some(u) => (flow.point(&m, u / speed), false),
        None => (s.a.to_vec(), true),
    }
}

const RETURN_GAP: f64 = 1e-9;

fn return_time(flow: &TorusFlow, surface: &SurfaceFunction, q: &[f64], h: f64, settings: &SolverSettings) -> Result<f64> {
    if let Some(data) = &surface.secular {
        let line = PhaseLine::new(&data.system, data.phases(q));
        return next_zero(&line, RETURN_GAP, settings);
    }
    let dt = 0.25 * h / flow.speed();
    let g = |t: f64| surface.eval(&flow.point(q, t));
    let mut t = RETURN_GAP;
    let mut prev = g(t);
    for _ in 0..10_000_000 {
        let next = t + dt;
        let v = g(next);
        if v == 0.0 {
            return Ok(next);
        }
        if (v > 0.0) != (prev > 0.0) {
            return Ok(bisect_root(g, t, next, settings.tolerance).expect("sign change"));
        }
        prev = v;
        t = next;
    }
    Err(Error::Continuation {
        x: q[0],
        y: q[1],
        reason: "no return to the section along the flow".into(),
    })
}

const CROSSING_CANDIDATES: usize = 16;
const CROSSING_TOLERANCE: f64 = 1e-8;

/// Newton iteration for ∇F = 0 with central differences.
fn critical_point(surface: &SurfaceFunction, start: [f64; 2]) -> Option<[f64; 2]> {
    let e = 1e-5;
    let f = |x: f64, y: f64| surface.eval(&[x, y]);
    let mut p = start;
    for _ in 0..60 {
        let [x, y] = p;
        let f0 = f(x, y);
        let (fxp, fxm, fyp, fym) = (f(x + e, y), f(x - e, y), f(x, y + e), f(x, y - e));
        let gx = (fxp - fxm) / (2.0 * e);
        let gy = (fyp - fym) / (2.0 * e);
        let hxx = (fxp - 2.0 * f0 + fxm) / (e * e);
        let hyy = (fyp - 2.0 * f0 + fym) / (e * e);
        let hxy = (f(x + e, y + e) - f(x + e, y - e) - f(x - e, y + e) + f(x - e, y - e)) / (4.0 * e * e);
        let det = hxx * hyy - hxy * hxy;
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let dx = (hyy * gx - hxy * gy) / det;
        let dy = (hxx * gy - hxy * gx) / det;
        p = [x - dx, y - dy];
        if dx.hypot(dy) < 1e-13 {
            return Some(p);
        }
    }
    Some(p)
}

/// Gap of the two-length star with lengths (l1, l2, p·l1).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapCase {
    pub p: u32,
    /// Smallest return time scaled to unit mean spacing.
    pub delta_c: f64,
    /// Whether sheets of Σ cross, closing the gap.
    pub singular: bool,
}

/// Minimal return time of the star with bonds (l1, l2, p l1) over the basis
/// {l1, l2}. For odd p the sheets of Σ intersect and the gap closes.
pub fn star2_gap_case(l1: f64, l2: f64, p: u32, grid_size: usize, settings: &SolverSettings) -> Result<GapCase> {
    if p == 0 {
        return Err(Error::InvalidInput("p must be positive".into()));
    }
    let g = MetricGraph::star(&[l1, l2, p as f64 * l1])?;
    let basis = LengthBasis::from_integers(vec![l1, l2], vec![vec![1, 0], vec![0, 1], vec![p as i64, 0]])?;
    let (flow, surface) = secular_surface(&g, &basis)?;
    let q = quadrature_spacing_2d(&flow, &surface, grid_size, settings)?;
    // refine around the best sample along the flow-normal direction
    let (i_min, _) = q
        .samples
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
        .expect("nonempty");
    let (segs, _) = trace_section(&flow, &surface, grid_size);
    let h = TAU / grid_size as f64;
    // a crossing of two sheets is a zero of F where ∇F vanishes too
    let mut order: Vec<usize> = (0..q.samples.len()).collect();
    order.sort_by(|&a, &b| q.samples[a].0.total_cmp(&q.samples[b].0));
    for &i in order.iter().take(CROSSING_CANDIDATES) {
        let s = &segs[i];
        let m = [0.5 * (s.a[0] + s.b[0]), 0.5 * (s.a[1] + s.b[1])];
        if let Some(c) = critical_point(&surface, m) {
            let dist = ((c[0] - m[0]).powi(2) + (c[1] - m[1]).powi(2)).sqrt();
            if dist < 4.0 * h && surface.eval(&c).abs() < CROSSING_TOLERANCE {
                return Ok(GapCase {
                    p,
                    delta_c: 0.0,
                    singular: true,
                });
            }
        }
    }
    let s = &segs[i_min];
    let n = [-flow.frequencies[1] / flow.speed(), flow.frequencies[0] / flow.speed()];
    let m = [0.5 * (s.a[0] + s.b[0]), 0.5 * (s.a[1] + s.b[1])];
    let tau_at = |u: f64| {
        let p0 = [m[0] + u * n[0], m[1] + u * n[1]];
        let seg = Segment {
            a: p0,
            b: p0,
            weight: 0.0,
        };
        let (q, tangent) = onto_section(&flow, &surface, &seg, h);
        if tangent {
            return f64::INFINITY;
        }
        return_time(&flow, &surface, &q, h, settings).unwrap_or(f64::INFINITY)
    };
    let (_, refined) = golden_min(tau_at, -2.0 * h, 2.0 * h, 1e-10);
    Ok(GapCase {
        p,
        delta_c: refined.min(q.tau_min) * q.density,
        singular: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::secular::find_levels;
    use crate::spacing::{ks_distance, unfold_levels, SpacingSeries};

    #[test]
    fn pure_sine_returns_are_half_periods() {
        let flow = TorusFlow::new(vec![1.0]).unwrap();
        let f = SurfaceFunction::new(1, |x| x[0].sin());
        assert_eq!(f.symmetry[0].kind, Symmetry::AntiPeriodic);
        let r = first_returns(&flow, &f, &[0.3], 50, &SolverSettings::default()).unwrap();
        assert_eq!(r.times.len(), 50);
        for t in r.times {
            assert!((t - PI).abs() < 1e-10, "{t}");
        }
    }

    #[test]
    fn origin_trajectory_reproduces_spectrum() {
        let lengths = [PI, 3.183_459_012, 3.144_233_607_3];
        let g = MetricGraph::star(&lengths).unwrap();
        let basis = LengthBasis::per_bond(&g);
        let (flow, surface) = secular_surface(&g, &basis).unwrap();
        let settings = SolverSettings::default();
        let r = first_returns(&flow, &surface, &[0.0; 3], 200, &settings).unwrap();
        let s = find_zeros_on_line(&PhaseLine::through_origin(&SecularSystem::new(&g).unwrap()), 0.0, 80.0, &settings).unwrap();
        for (t, w) in r.times.iter().zip(s.levels.windows(2)) {
            assert!((t - (w[1] - w[0])).abs() < 1e-10);
        }
        let spec = find_levels(&g, 1e-6, 80.0, &settings).unwrap();
        assert!((spec.levels[0] - r.first_crossing).abs() < 1e-10);
    }

    #[test]
    fn sheets_of_two_length_star() {
        let (l1, l2) = (1.0, 2f64.sqrt());
        let g = MetricGraph::star(&[l1, l2, l1]).unwrap();
        let basis = LengthBasis::from_integers(vec![l1, l2], vec![vec![1, 0], vec![0, 1], vec![1, 0]]).unwrap();
        let (flow, surface) = secular_surface(&g, &basis).unwrap();
        assert_eq!(sheet_count(&flow, &surface, 0, 32, 1).unwrap(), 4);
        assert_eq!(sheet_count(&flow, &surface, 1, 32, 1).unwrap(), 2);
        let report = verify_sum_rule(&g, &basis, 32, 7).unwrap();
        assert!(report.relative_error < 1e-12);
        assert!(sheet_count(&flow, &surface, 0, 8, 1).is_err());
    }

    #[test]
    fn sum_rule_with_rescaled_basis() {
        let l = 2f64.sqrt();
        let g = MetricGraph::star(&[l, 2.0 * l, 3f64.sqrt()]).unwrap();
        let basis = LengthBasis::from_integers(vec![l, 3f64.sqrt()], vec![vec![1, 0], vec![2, 0], vec![0, 1]]).unwrap();
        let report = verify_sum_rule(&g, &basis, 32, 3).unwrap();
        assert_eq!(report.sheets, vec![6, 2]);
    }

    #[test]
    fn symmetry_tags_hold() {
        let g = MetricGraph::figure_eight(1.0, 3f64.sqrt()).unwrap();
        let (_, surface) = secular_surface(&g, &LengthBasis::per_bond(&g)).unwrap();
        surface.check_symmetry(100, 5).unwrap();
        let bad = SurfaceFunction {
            symmetry: vec![CoordinateSymmetry {
                kind: Symmetry::Periodic,
                period: 1.0,
            }],
            ..SurfaceFunction::new(1, |x| x[0].sin())
        };
        assert!(bad.check_symmetry(20, 1).is_err());
    }

    #[test]
    fn quadrature_matches_figure_eight_law() {
        // Σ is three families of straight lines; Δ is uniform on (0, 2)
        let g = MetricGraph::figure_eight(1.0, 5f64.sqrt()).unwrap();
        let (flow, surface) = secular_surface(&g, &LengthBasis::per_bond(&g)).unwrap();
        let q = quadrature_spacing_2d(&flow, &surface, 400, &SolverSettings::default()).unwrap();
        assert!((q.flux_density - g.mean_density()).abs() < 1e-2 * g.mean_density(), "{}", q.flux_density);
        let law = crate::analytic::figure_eight_pdf().distribution();
        let d = ks_distance(&q.distribution, &law);
        assert!(d < 0.01, "{d}");
    }

    #[test]
    fn quadrature_agrees_with_spectrum_for_star() {
        let (l1, l2) = (1.0, 2f64.sqrt());
        let g = MetricGraph::star(&[l1, l2, l1]).unwrap();
        let basis = LengthBasis::from_integers(vec![l1, l2], vec![vec![1, 0], vec![0, 1], vec![1, 0]]).unwrap();
        let (flow, surface) = secular_surface(&g, &basis).unwrap();
        let settings = SolverSettings::default();
        let q = quadrature_spacing_2d(&flow, &surface, 300, &settings).unwrap();
        let spec = find_levels(&g, 1e-6, 4000.0, &settings).unwrap();
        let series: SpacingSeries = unfold_levels(&spec.levels, g.mean_density()).unwrap();
        let emp = crate::spacing::empirical_cdf(&series).unwrap();
        let d = ks_distance(&q.distribution, &emp);
        assert!(d < 0.03, "{d}");
    }

    #[test]
    fn gap_opens_for_even_multiples() {
        let s = SolverSettings::default();
        let odd = star2_gap_case(1.0, 2f64.sqrt(), 1, 200, &s).unwrap();
        assert!(odd.singular, "{odd:?}");
        let even = star2_gap_case(1.0, 2f64.sqrt(), 2, 200, &s).unwrap();
        assert!(!even.singular && even.delta_c > 0.01, "{even:?}");
    }
}
