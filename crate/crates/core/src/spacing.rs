//! Unfolded spacings, their distributions, and distances between
//! distributions.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::MetricGraph;
use crate::secular::SpectrumSample;

/// Spacings below this are treated as numerical degeneracies.
pub const DEGENERATE_SPACING: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpacingSeries {
    pub deltas: Vec<f64>,
    pub source_range: (f64, f64),
    /// Indices of spacings below [`DEGENERATE_SPACING`].
    pub flagged: Vec<usize>,
}

impl SpacingSeries {
    pub fn from_deltas(deltas: Vec<f64>) -> Self {
        let flagged = flag_small(&deltas);
        SpacingSeries {
            deltas,
            source_range: (f64::NAN, f64::NAN),
            flagged,
        }
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.deltas.iter().sum::<f64>() / self.deltas.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.deltas.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn flag_small(deltas: &[f64]) -> Vec<usize> {
    deltas
        .iter()
        .enumerate()
        .filter(|(_, &d)| d < DEGENERATE_SPACING)
        .map(|(i, _)| i)
        .collect()
}

/// Δ_n = (L_tot/π)(k_{n+1} − k_n).
pub fn unfold(spectrum: &SpectrumSample, g: &MetricGraph) -> Result<SpacingSeries> {
    let mut s = unfold_levels(&spectrum.levels, g.mean_density())?;
    s.source_range = spectrum.k_range;
    Ok(s)
}

pub fn unfold_levels(levels: &[f64], density: f64) -> Result<SpacingSeries> {
    if levels.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least two levels to form a spacing, got {}",
            levels.len()
        )));
    }
    let mut deltas = Vec::with_capacity(levels.len() - 1);
    for (i, w) in levels.windows(2).enumerate() {
        if !(w[1] >= w[0]) {
            return Err(Error::InvalidInput(format!(
                "levels decrease at index {i}: {} then {}",
                w[0], w[1]
            )));
        }
        deltas.push(density * (w[1] - w[0]));
    }
    let flagged = flag_small(&deltas);
    Ok(SpacingSeries {
        deltas,
        source_range: (levels[0], levels[levels.len() - 1]),
        flagged,
    })
}

/// Atomic part of a spacing law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaPeak {
    pub position: f64,
    pub mass: f64,
}

/// A closed-form or numerically defined spacing law.
pub trait SpacingLaw: Send + Sync {
    fn name(&self) -> String;
    /// Density of the continuous part.
    fn pdf(&self, delta: f64) -> f64;
    /// Full cumulative function including any peak (right-continuous).
    fn cdf(&self, delta: f64) -> f64;
    fn peak(&self) -> Option<DeltaPeak> {
        None
    }
    /// Upper end of the support, if finite.
    fn support_max(&self) -> Option<f64> {
        None
    }
    /// Points where the density is discontinuous or singular.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

#[derive(Clone)]
pub enum Shape {
    /// Sorted sample with cumulative weights (last entry 1).
    Empirical { values: Vec<f64>, cumulative: Vec<f64> },
    /// Bins [origin + j w, origin + (j+1) w) with densities.
    Histogram { origin: f64, width: f64, densities: Vec<f64> },
    Analytic(Arc<dyn SpacingLaw>),
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Empirical { values, .. } => write!(f, "Empirical({} points)", values.len()),
            Shape::Histogram { origin, width, densities } => {
                write!(f, "Histogram(origin {origin}, width {width}, {} bins)", densities.len())
            }
            Shape::Analytic(law) => write!(f, "Analytic({})", law.name()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpacingDistribution {
    pub shape: Shape,
    /// Only used by histograms; empirical and analytic shapes carry their
    /// own atoms.
    pub peak: Option<DeltaPeak>,
}

impl SpacingDistribution {
    pub fn analytic(law: Arc<dyn SpacingLaw>) -> Self {
        SpacingDistribution {
            shape: Shape::Analytic(law),
            peak: None,
        }
    }

    /// Weighted sample; weights need not be normalized.
    pub fn weighted(samples: Vec<(f64, f64)>) -> Result<Self> {
        let mut samples = samples;
        samples.retain(|&(_, w)| w > 0.0);
        if samples.is_empty() {
            return Err(Error::InsufficientData("no samples with positive weight".into()));
        }
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = samples.iter().map(|s| s.1).sum();
        let mut acc = 0.0;
        let mut values = Vec::with_capacity(samples.len());
        let mut cumulative = Vec::with_capacity(samples.len());
        for (v, w) in samples {
            acc += w;
            values.push(v);
            cumulative.push(acc / total);
        }
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Ok(SpacingDistribution {
            shape: Shape::Empirical { values, cumulative },
            peak: None,
        })
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let base = match &self.shape {
            Shape::Empirical { values, cumulative } => {
                let n = values.partition_point(|&v| v <= x);
                if n == 0 {
                    0.0
                } else {
                    cumulative[n - 1]
                }
            }
            Shape::Histogram { origin, width, densities } => {
                let mut acc = 0.0;
                for (j, d) in densities.iter().enumerate() {
                    let lo = origin + j as f64 * width;
                    if x <= lo {
                        break;
                    }
                    acc += d * (x - lo).min(*width);
                }
                acc
            }
            Shape::Analytic(law) => return law.cdf(x),
        };
        match self.peak {
            Some(p) if x >= p.position => base + p.mass,
            _ => base,
        }
    }

    /// lim_{y→x⁻} F(y).
    pub fn cdf_left(&self, x: f64) -> f64 {
        match &self.shape {
            Shape::Empirical { values, cumulative } => {
                let n = values.partition_point(|&v| v < x);
                if n == 0 {
                    0.0
                } else {
                    cumulative[n - 1]
                }
            }
            Shape::Histogram { .. } => {
                let mass = self.peak.filter(|p| p.position == x).map_or(0.0, |p| p.mass);
                self.cdf(x) - mass
            }
            Shape::Analytic(law) => {
                let mass = law.peak().filter(|p| p.position == x).map_or(0.0, |p| p.mass);
                law.cdf(x) - mass
            }
        }
    }

    pub fn peak_atom(&self) -> Option<DeltaPeak> {
        match &self.shape {
            Shape::Analytic(law) => law.peak(),
            _ => self.peak,
        }
    }

    /// Density of the continuous part, where one is defined.
    pub fn density(&self, x: f64) -> Option<f64> {
        match &self.shape {
            Shape::Empirical { .. } => None,
            Shape::Histogram { origin, width, densities } => {
                let j = ((x - origin) / width).floor();
                if j < 0.0 {
                    return Some(0.0);
                }
                Some(densities.get(j as usize).copied().unwrap_or(0.0))
            }
            Shape::Analytic(law) => Some(law.pdf(x)),
        }
    }

    fn is_step(&self) -> bool {
        matches!(self.shape, Shape::Empirical { .. })
    }

    fn candidates(&self, out: &mut Vec<f64>) {
        match &self.shape {
            Shape::Empirical { values, .. } => out.extend(values.iter().copied()),
            Shape::Histogram { origin, width, densities } => {
                out.extend((0..=densities.len()).map(|j| origin + j as f64 * width))
            }
            Shape::Analytic(law) => {
                out.extend(law.breakpoints());
                out.extend(law.support_max());
            }
        }
        out.extend(self.peak_atom().map(|p| p.position));
    }

    fn upper_hint(&self) -> f64 {
        match &self.shape {
            Shape::Empirical { values, .. } => *values.last().unwrap_or(&0.0),
            Shape::Histogram { origin, width, densities } => origin + width * densities.len() as f64,
            Shape::Analytic(law) => law.support_max().unwrap_or(8.0),
        }
    }
}

/// Centered bins: bin j covers [(j − ½) w, (j + ½) w).
pub fn histogram(series: &SpacingSeries, bin_width: f64) -> Result<SpacingDistribution> {
    if !(bin_width > 0.0) {
        return Err(Error::InvalidInput(format!("bin width must be positive, got {bin_width}")));
    }
    if series.is_empty() {
        return Err(Error::InsufficientData("empty spacing series".into()));
    }
    let index = |x: f64| (x / bin_width + 0.5).floor() as i64;
    let lo = series.deltas.iter().map(|&x| index(x)).min().expect("nonempty");
    let hi = series.deltas.iter().map(|&x| index(x)).max().expect("nonempty");
    let mut counts = vec![0usize; (hi - lo + 1) as usize];
    for &x in &series.deltas {
        counts[(index(x) - lo) as usize] += 1;
    }
    let norm = series.len() as f64 * bin_width;
    Ok(SpacingDistribution {
        shape: Shape::Histogram {
            origin: (lo as f64 - 0.5) * bin_width,
            width: bin_width,
            densities: counts.into_iter().map(|c| c as f64 / norm).collect(),
        },
        peak: None,
    })
}

/// Exact empirical CDF with N jumps of 1/N.
pub fn empirical_cdf(series: &SpacingSeries) -> Result<SpacingDistribution> {
    if series.is_empty() {
        return Err(Error::InsufficientData("empty spacing series".into()));
    }
    let mut values = series.deltas.clone();
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let cumulative = (1..=values.len()).map(|i| i as f64 / n).collect();
    Ok(SpacingDistribution {
        shape: Shape::Empirical { values, cumulative },
        peak: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    /// Least-squares slope of F against Δ² through the origin.
    pub slope: f64,
    pub stderr: f64,
    /// Exponent p of F ∝ Δ^p over the same window.
    pub exponent: f64,
    /// Set when F is far from quadratic (p < 1.5), e.g. P(0) > 0.
    pub nonlinear: bool,
    pub points: usize,
}

impl SlopeFit {
    /// Estimate of P'(0).
    pub fn density_slope(&self) -> f64 {
        2.0 * self.slope
    }
}

/// Fits F(Δ) ≈ c Δ² over the smallest `window` fraction of spacings.
pub fn small_slope_fit(series: &SpacingSeries, window: f64) -> Result<SlopeFit> {
    if series.len() < 1000 {
        return Err(Error::InsufficientData(format!(
            "slope fit needs at least 1000 spacings, got {}",
            series.len()
        )));
    }
    if !(window > 0.0 && window <= 1.0) {
        return Err(Error::InvalidInput(format!("fit window must be in (0, 1], got {window}")));
    }
    let n = series.len() as f64;
    let mut sorted: Vec<(f64, bool)> = series
        .deltas
        .iter()
        .enumerate()
        .map(|(i, &d)| (d, series.flagged.binary_search(&i).is_ok()))
        .collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let take = (window * n).ceil() as usize;
    let pts: Vec<(f64, f64)> = sorted[..take]
        .iter()
        .enumerate()
        .filter(|(_, (_, flagged))| !flagged)
        .map(|(i, (d, _))| (*d, (i as f64 + 0.5) / n))
        .collect();
    if pts.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "only {} unflagged spacings in the fit window",
            pts.len()
        )));
    }
    let sxx: f64 = pts.iter().map(|(d, _)| d.powi(4)).sum();
    let sxy: f64 = pts.iter().map(|(d, f)| d * d * f).sum();
    let slope = sxy / sxx;
    let rss: f64 = pts.iter().map(|(d, f)| (f - slope * d * d).powi(2)).sum();
    let stderr = (rss / (pts.len() - 1) as f64 / sxx).sqrt();

    let logs: Vec<(f64, f64)> = pts
        .iter()
        .filter(|(d, _)| *d > 0.0)
        .map(|(d, f)| (d.ln(), f.ln()))
        .collect();
    let m = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / m;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / m;
    let cov: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = logs.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let exponent = cov / var;
    Ok(SlopeFit {
        slope,
        stderr,
        exponent,
        nonlinear: exponent < 1.5,
        points: pts.len(),
    })
}

/// Relative resolution of jump positions in [`ks_distance`].
pub const POSITION_RESOLUTION: f64 = 1e-9;

/// sup_Δ |F_a(Δ) − F_b(Δ)|, with jumps closer than a relative 1e-9 treated
/// as coincident: the result is max over (p, q) ∈ {(a, b), (b, a)} of
/// sup_x F_p(x) − F_q(x + η), η = 1e-9·max(1, x). Without this an atom
/// placed by the analytic law and the same atom measured from a spectrum
/// would count as a full-height discrepancy over a rounding-error gap.
pub fn ks_distance(a: &SpacingDistribution, b: &SpacingDistribution) -> f64 {
    let mut xs = vec![0.0];
    a.candidates(&mut xs);
    b.candidates(&mut xs);
    let smooth = !(a.is_step() && b.is_step());
    let top = a.upper_hint().max(b.upper_hint()).max(1.0) * 1.05;
    if smooth {
        let n = 4000;
        xs.extend((0..=n).map(|i| top * i as f64 / n as f64));
    }
    xs.retain(|x| x.is_finite());
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let eta = |x: f64| POSITION_RESOLUTION * x.abs().max(1.0);
    let one_sided = |p: &SpacingDistribution, q: &SpacingDistribution| {
        let mut best = (0.0f64, 0.0);
        for &c in &xs {
            let at = p.cdf(c) - q.cdf(c + eta(c));
            let before = p.cdf_left(c - eta(c)) - q.cdf_left(c);
            let v = at.max(before);
            if v > best.0 {
                best = (v, c);
            }
        }
        best
    };
    let (ab, bb) = (one_sided(a, b), one_sided(b, a));
    let (mut best, best_x) = if ab.0 >= bb.0 { ab } else { bb };
    if smooth && !(a.is_step() || b.is_step()) {
        // both continuous between candidates: polish the grid maximum
        let diff = |x: f64| (a.cdf(x) - b.cdf(x)).abs();
        let h = top / 4000.0;
        let (x, _) = crate::numeric::golden_max(diff, (best_x - h).max(0.0), best_x + h, 1e-12);
        best = best.max(diff(x));
    }
    best
}

/// Alias of [`ks_distance`].
pub fn cdf_sup_diff(a: &SpacingDistribution, b: &SpacingDistribution) -> f64 {
    ks_distance(a, b)
}
