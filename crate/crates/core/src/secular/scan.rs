//! Level finding: sign-change scan, bisection, and an exact eigenphase count
//! per block that catches anything the scan misses.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SecularSystem;
use crate::error::{Error, Result};
use crate::graph::{Boundary, MetricGraph};

/// Grid steps per block. Blocks are laid out on an absolute grid, so the
/// result does not depend on how rayon splits the work.
const BLOCK_STEPS: i64 = 64;
/// Extra grid steps scanned on either side of a block.
const MARGIN_STEPS: i64 = 2;
/// An eigenphase closer than this to the cut at 0 makes a count point
/// ambiguous; the point is then moved.
const CUT_GUARD: f64 = 1e-11;
/// Roots with some |sin θ_b| below this are checked against I − S.
const POLE_GUARD: f64 = 1e-6;
const SINGULAR_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Scan steps per mean level spacing.
    pub oversample: usize,
    /// Relative bisection tolerance: |Δk| ≤ tolerance · max(1, k).
    pub tolerance: f64,
    /// Allowed |N_found − ⟨d⟩ Δk| as a fraction of the expected count.
    pub audit_fraction: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            oversample: 8,
            tolerance: 1e-12,
            audit_fraction: 0.005,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelAudit {
    /// ⟨d⟩ (k_max − k_min).
    pub expected: f64,
    pub found: usize,
    /// found − expected.
    pub deviation: f64,
    pub bound: f64,
    /// Number of levels from the eigenphase count of S.
    pub exact_count: usize,
    /// Indices of levels that belong to an unresolved degenerate cluster.
    pub degenerate: Vec<usize>,
    /// Indices of levels sitting on a zero of some sin(k l_b).
    pub pole_coincident: Vec<usize>,
    pub spurious_rejected: usize,
    pub rescanned_blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSample {
    /// Nondecreasing; equal entries only for flagged degeneracies.
    pub levels: Vec<f64>,
    pub k_range: (f64, f64),
    pub settings: SolverSettings,
    pub audit: LevelAudit,
}

impl SpectrumSample {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// The line θ_b(t) = θ0_b + l_b t through phase space. With zero offsets
/// and t = k this is the ordinary secular function.
#[derive(Debug, Clone)]
pub struct PhaseLine<'a> {
    system: &'a SecularSystem,
    offsets: Vec<f64>,
    rates: Vec<f64>,
}

impl<'a> PhaseLine<'a> {
    pub fn new(system: &'a SecularSystem, offsets: Vec<f64>) -> Self {
        let rates = system.graph().lengths();
        assert_eq!(offsets.len(), rates.len(), "one offset per bond");
        PhaseLine {
            system,
            offsets,
            rates,
        }
    }

    pub fn through_origin(system: &'a SecularSystem) -> Self {
        let n = system.bond_count();
        Self::new(system, vec![0.0; n])
    }

    pub fn phases(&self, t: f64) -> Vec<f64> {
        self.offsets.iter().zip(&self.rates).map(|(o, l)| o + l * t).collect()
    }

    pub fn value(&self, t: f64) -> f64 {
        self.system.value_at_phases(&self.phases(t))
    }

    pub fn total_rate(&self) -> f64 {
        self.rates.iter().sum()
    }

    /// Count point at or just above t, moved off any eigenphase that sits
    /// on the cut. Returns (t', Σ arg λ_j).
    fn count_point(&self, t: f64, nudge: f64) -> Result<(f64, f64)> {
        let mut x = t;
        for _ in 0..32 {
            let (sum, closest) = self.system.phase_sum(&self.phases(x))?;
            if closest > CUT_GUARD {
                return Ok((x, sum));
            }
            x += nudge;
        }
        Err(Error::Numerical(format!("no clean count point near t = {t}")))
    }

    /// Exact number of zeros in (a, b] from the phase sums at both ends.
    fn count_between(&self, a: (f64, f64), b: (f64, f64)) -> Result<usize> {
        let n = (2.0 * self.total_rate() * (b.0 - a.0) - (b.1 - a.1)) / TAU;
        let r = n.round();
        if (n - r).abs() > 1e-5 || r < 0.0 {
            return Err(Error::Numerical(format!(
                "eigenphase count on ({}, {}] is not an integer: {n}",
                a.0, b.0
            )));
        }
        Ok(r as usize)
    }
}

#[derive(Debug, Default)]
struct BlockResult {
    roots: Vec<f64>,
    degenerate: Vec<f64>,
    expected: usize,
    rescanned: bool,
}

/// All zeros of the secular function along `line` for t ∈ (t_min, t_max].
pub fn find_zeros_on_line(line: &PhaseLine<'_>, t_min: f64, t_max: f64, settings: &SolverSettings) -> Result<SpectrumSample> {
    if !line.system.is_neumann() {
        return Err(Error::UnsupportedVariant(
            "zero scan along a phase line needs a Neumann graph".into(),
        ));
    }
    if !(t_max > t_min) {
        return Err(Error::InvalidInput(format!("empty range ({t_min}, {t_max}]")));
    }
    if settings.oversample < 4 {
        return Err(Error::InvalidInput(format!(
            "oversample must be at least 4, got {}",
            settings.oversample
        )));
    }
    let total = line.total_rate();
    let h = PI / (total * settings.oversample as f64);
    let steps = ((t_max - t_min) / h).ceil().max(1.0) as i64;
    let grid = |i: i64| {
        if i < steps {
            t_min + i as f64 * h
        } else {
            t_max + (i - steps) as f64 * h
        }
    };
    let blocks = (steps + BLOCK_STEPS - 1) / BLOCK_STEPS;
    let nudge = h / 64.0;

    let bounds: Vec<(f64, f64)> = (0..=blocks)
        .into_par_iter()
        .map(|j| {
            let x = if j == blocks { t_max } else { grid(j * BLOCK_STEPS) };
            line.count_point(x, nudge)
        })
        .collect::<Result<_>>()?;

    let results: Vec<BlockResult> = (0..blocks)
        .into_par_iter()
        .map(|j| {
            let lo = bounds[j as usize];
            let hi = bounds[j as usize + 1];
            let expected = line.count_between(lo, hi)?;
            let first = j * BLOCK_STEPS - MARGIN_STEPS;
            let last = ((j + 1) * BLOCK_STEPS).min(steps) + MARGIN_STEPS;
            let xs: Vec<f64> = (first..=last).map(grid).collect();
            let mut roots = scan_roots(line, &xs, settings.tolerance);
            roots.retain(|&r| r > lo.0 && r <= hi.0);
            if roots.len() == expected {
                return Ok(BlockResult {
                    roots,
                    expected,
                    ..Default::default()
                });
            }
            let mut out = BlockResult {
                expected,
                rescanned: true,
                ..Default::default()
            };
            resolve(line, lo, hi, expected, h / 4.0, settings.tolerance, &mut out)?;
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut levels = Vec::new();
    let mut degenerate_values = Vec::new();
    let mut exact_count = 0;
    let mut rescanned_blocks = 0;
    let mut worst: Option<(usize, usize, usize)> = None;
    for (j, r) in results.into_iter().enumerate() {
        exact_count += r.expected;
        rescanned_blocks += usize::from(r.rescanned);
        let found = r.roots.len();
        if found != r.expected && worst.is_none() {
            worst = Some((j, found, r.expected));
        }
        levels.extend(r.roots);
        degenerate_values.extend(r.degenerate);
    }
    levels.sort_by(f64::total_cmp);

    // Roots on a regularization zero are kept only if I − S is singular there.
    let mut pole_coincident = Vec::new();
    let mut spurious_rejected = 0;
    let mut kept = Vec::with_capacity(levels.len());
    for &t in &levels {
        let phases = line.phases(t);
        if phases.iter().any(|p| p.sin().abs() < POLE_GUARD) {
            let sigma = line.system.min_singular_value_at_phases(&phases)?;
            if sigma > SINGULAR_THRESHOLD {
                spurious_rejected += 1;
                continue;
            }
            pole_coincident.push(kept.len());
        }
        kept.push(t);
    }
    let levels = kept;
    let degenerate = levels
        .iter()
        .enumerate()
        .filter(|(_, t)| degenerate_values.contains(t))
        .map(|(i, _)| i)
        .collect();

    let expected = total / PI * (t_max - t_min);
    let found = levels.len();
    let deviation = found as f64 - expected;
    let bound = (settings.audit_fraction * expected).max(2.0 * line.rates.len() as f64);
    let audit = LevelAudit {
        expected,
        found,
        deviation,
        bound,
        exact_count,
        degenerate,
        pole_coincident,
        spurious_rejected,
        rescanned_blocks,
    };
    if let Some((j, found_j, expected_j)) = worst {
        let a = grid(j as i64 * BLOCK_STEPS);
        let b = if j as i64 + 1 == blocks { t_max } else { grid((j as i64 + 1) * BLOCK_STEPS) };
        return Err(Error::MissingLevels {
            k_lo: a,
            k_hi: b,
            expected: expected_j as f64,
            found: found_j,
        });
    }
    if deviation.abs() > bound || found + spurious_rejected != exact_count {
        return Err(Error::MissingLevels {
            k_lo: t_min,
            k_hi: t_max,
            expected,
            found,
        });
    }
    Ok(SpectrumSample {
        levels,
        k_range: (t_min, t_max),
        settings: *settings,
        audit,
    })
}

/// Sign-change roots on consecutive grid points.
fn scan_roots(line: &PhaseLine<'_>, xs: &[f64], tol: f64) -> Vec<f64> {
    let fs: Vec<f64> = xs.iter().map(|&x| line.value(x)).collect();
    let mut roots = Vec::new();
    for i in 0..xs.len().saturating_sub(1) {
        if fs[i] == 0.0 {
            roots.push(xs[i]);
        } else if fs[i] * fs[i + 1] < 0.0 {
            roots.push(bisect(|t| line.value(t), xs[i], xs[i + 1], fs[i], tol));
        }
    }
    roots
}

fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, fa: f64, tol: f64) -> f64 {
    let positive = fa > 0.0;
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if b - a <= tol * m.abs().max(1.0) {
            return m;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if (fm > 0.0) == positive {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Finds exactly `n` zeros in (lo, hi] by a finer scan and, failing that,
/// by count-guided bisection of the interval.
fn resolve(
    line: &PhaseLine<'_>,
    lo: (f64, f64),
    hi: (f64, f64),
    n: usize,
    step: f64,
    tol: f64,
    out: &mut BlockResult,
) -> Result<()> {
    if n == 0 {
        return Ok(());
    }
    let width = hi.0 - lo.0;
    let pieces = ((width / step).ceil() as usize).max(16);
    let xs: Vec<f64> = (0..=pieces)
        .map(|i| if i == pieces { hi.0 } else { lo.0 + width * i as f64 / pieces as f64 })
        .collect();
    let mut roots = scan_roots(line, &xs, tol);
    roots.retain(|&r| r > lo.0 && r <= hi.0);
    if roots.len() == n {
        out.roots.extend(roots);
        return Ok(());
    }
    let mid = 0.5 * (lo.0 + hi.0);
    if width <= 4.0 * tol * mid.abs().max(1.0) {
        out.roots.extend(std::iter::repeat_n(mid, n));
        out.degenerate.push(mid);
        return Ok(());
    }
    // A split point sitting on a root is unusable; try off-centre ones.
    let split = [0.5, 0.382, 0.618].iter().find_map(|f| {
        line.count_point(lo.0 + f * width, width / 4096.0)
            .ok()
            .filter(|m| m.0 < hi.0)
    });
    let Some(m) = split else {
        out.roots.extend(std::iter::repeat_n(mid, n));
        out.degenerate.push(mid);
        return Ok(());
    };
    let left = line.count_between(lo, m)?.min(n);
    resolve(line, lo, m, left, step, tol, out)?;
    resolve(line, m, hi, n - left, step, tol, out)
}

/// First zero along `line` strictly after `t_start`.
pub fn next_zero(line: &PhaseLine<'_>, t_start: f64, settings: &SolverSettings) -> Result<f64> {
    let chunk = 4.0 * PI / line.total_rate();
    let mut a = t_start;
    for _ in 0..10_000 {
        let s = find_zeros_on_line(line, a, a + chunk, settings)?;
        if let Some(&t) = s.levels.first() {
            return Ok(t);
        }
        a += chunk;
    }
    Err(Error::Numerical(format!("no zero found after t = {t_start}")))
}

/// Levels of `g` in (k_min, k_max].
pub fn find_levels(g: &MetricGraph, k_min: f64, k_max: f64, settings: &SolverSettings) -> Result<SpectrumSample> {
    if !(k_min > 0.0) {
        return Err(Error::InvalidInput(format!(
            "k_min must be positive (k = 0 is excluded), got {k_min}"
        )));
    }
    if !(k_max > k_min) {
        return Err(Error::InvalidInput(format!("empty range ({k_min}, {k_max}]")));
    }
    if g.boundary() == Boundary::Dirichlet {
        let mut sample = integrable_levels(&g.lengths(), k_max)?;
        sample.levels.retain(|&k| k > k_min);
        sample.k_range = (k_min, k_max);
        sample.settings = *settings;
        sample.audit.expected = g.mean_density() * (k_max - k_min);
        sample.audit.found = sample.levels.len();
        sample.audit.exact_count = sample.levels.len();
        sample.audit.deviation = sample.levels.len() as f64 - sample.audit.expected;
        return Ok(sample);
    }
    let sys = SecularSystem::new(g)?;
    find_zeros_on_line(&PhaseLine::through_origin(&sys), k_min, k_max, settings)
}

/// Merged progressions {mπ/l_b : m ≥ 1} up to k_max. Exactly equal values
/// are all kept.
pub fn integrable_levels(lengths: &[f64], k_max: f64) -> Result<SpectrumSample> {
    if lengths.is_empty() {
        return Err(Error::InvalidInput("no lengths".into()));
    }
    if let Some(l) = lengths.iter().find(|l| !(**l > 0.0)) {
        return Err(Error::InvalidInput(format!("non-positive length {l}")));
    }
    let mut levels = Vec::new();
    for &l in lengths {
        let mut m = 1u64;
        loop {
            let k = m as f64 * PI / l;
            if k > k_max {
                break;
            }
            levels.push(k);
            m += 1;
        }
    }
    levels.sort_by(f64::total_cmp);
    let total: f64 = lengths.iter().sum();
    let expected = total / PI * k_max;
    let found = levels.len();
    let degenerate = (0..found)
        .filter(|&i| (i > 0 && levels[i - 1] == levels[i]) || (i + 1 < found && levels[i + 1] == levels[i]))
        .collect();
    Ok(SpectrumSample {
        audit: LevelAudit {
            expected,
            found,
            deviation: found as f64 - expected,
            bound: lengths.len() as f64,
            exact_count: found,
            degenerate,
            ..Default::default()
        },
        levels,
        k_range: (0.0, k_max),
        settings: SolverSettings::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn star3() -> MetricGraph {
        MetricGraph::star(&[PI, 3.183459012, 3.1442336073]).unwrap()
    }

    #[test]
    fn single_bond_levels_are_integers() {
        let g = MetricGraph::star(&[PI]).unwrap();
        let s = find_levels(&g, 0.1, 100.5, &SolverSettings::default()).unwrap();
        assert_eq!(s.len(), 100);
        for (i, k) in s.levels.iter().enumerate() {
            assert!((k - (i + 1) as f64).abs() <= 1e-12 * k.max(1.0), "{k}");
        }
    }

    #[test]
    fn rejects_bad_ranges() {
        let g = star3();
        let s = SolverSettings::default();
        assert!(matches!(find_levels(&g, 0.0, 1.0, &s), Err(Error::InvalidInput(_))));
        assert!(matches!(find_levels(&g, 2.0, 1.0, &s), Err(Error::InvalidInput(_))));
        let low = SolverSettings { oversample: 2, ..s };
        assert!(matches!(find_levels(&g, 1.0, 2.0, &low), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn star3_weyl_count() {
        let g = star3();
        let d = g.mean_density();
        let s = find_levels(&g, 0.1, 0.1 + 1000.0 / d, &SolverSettings::default()).unwrap();
        assert!((s.len() as i64 - 1000).abs() <= 2, "{}", s.len());
        assert_eq!(s.audit.exact_count, s.len());
        assert!(s.levels.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn degenerate_star_levels_are_all_found() {
        // Equal arms: every level mπ/l (m odd multiples of π/2l) is doubly degenerate.
        let g = MetricGraph::star(&[1.0, 1.0, 1.0]).unwrap();
        let s = find_levels(&g, 0.1, 20.0, &SolverSettings::default()).unwrap();
        assert_eq!(s.len(), s.audit.exact_count);
        assert!(!s.audit.degenerate.is_empty());
        for &k in &s.levels {
            assert!(secular_abs(&g, k) < 1e-8, "{k}");
        }
    }

    fn secular_abs(g: &MetricGraph, k: f64) -> f64 {
        let sys = SecularSystem::new(g).unwrap();
        sys.min_singular_value_at_phases(&sys.bond_phases(k)).unwrap()
    }

    #[test]
    fn figure_eight_pole_coincident_levels() {
        let (l1, l2) = (2f64.sqrt(), 3f64.sqrt());
        let g = MetricGraph::figure_eight(l1, l2).unwrap();
        let s = find_levels(&g, 0.1, 40.0, &SolverSettings::default()).unwrap();
        let mut expected: Vec<f64> = Vec::new();
        for l in [l1, l2, l1 + l2] {
            let mut m = 1.0;
            while 2.0 * PI * m / l <= 40.0 {
                expected.push(2.0 * PI * m / l);
                m += 1.0;
            }
        }
        expected.sort_by(f64::total_cmp);
        assert_eq!(s.len(), expected.len());
        for (a, b) in s.levels.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        assert!(!s.audit.pole_coincident.is_empty());
    }

    #[test]
    fn partitioning_does_not_change_output() {
        let g = star3();
        let settings = SolverSettings::default();
        let a = find_levels(&g, 0.5, 60.0, &settings).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| find_levels(&g, 0.5, 60.0, &settings).unwrap());
        assert_eq!(a.levels, b.levels);
    }

    #[test]
    fn integrable_progressions() {
        let s = integrable_levels(&[1.0], 10.0).unwrap();
        assert_eq!(s.levels, vec![PI, 2.0 * PI, 3.0 * PI]);
        let s = integrable_levels(&[1.0, 2.0], 7.0).unwrap();
        assert_eq!(s.levels, vec![PI / 2.0, PI, PI, 1.5 * PI, 2.0 * PI, 2.0 * PI]);
        assert_eq!(s.audit.degenerate, vec![1, 2, 4, 5]);
    }
}
