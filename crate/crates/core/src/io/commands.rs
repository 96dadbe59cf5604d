//! The six subcommands. Each one reads a [`RunConfig`], writes CSV files
//! and a `<command>_summary.json` into the output directory and returns
//! the summary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{AnalyticSpec, Reference, RunConfig};
use super::output::{Cache, CacheStatus, Table};
use crate::analytic::{self, AnalyticSpacing, Moments};
use crate::error::{Error, Result};
use crate::graph::{Boundary, MetricGraph};
use crate::secular::{find_levels, SpectrumSample};
use crate::spacing::{empirical_cdf, histogram, ks_distance, small_slope_fit, unfold, DeltaPeak, SlopeFit, SpacingSeries};
use crate::torus::{quadrature_spacing_2d, sample_returns, secular_surface, verify_sum_rule, SumRuleReport};

/// Where a command reads from and writes to.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub config: RunConfig,
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    pub cache: Option<Cache>,
}

impl RunContext {
    /// Output directory and seeds from the config unless overridden.
    pub fn new(config: RunConfig, out: Option<PathBuf>, seeds: Vec<u64>, cache: Option<Cache>) -> Self {
        let out = out.unwrap_or_else(|| config.output.directory.clone());
        let seeds = if seeds.is_empty() { config.seeds.clone() } else { seeds };
        RunContext {
            config,
            out,
            seeds,
            cache,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GraphSummary {
    pub vertices: usize,
    pub bonds: usize,
    pub total_length: f64,
    pub boundary: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditSummary {
    pub exact_count: usize,
    pub degenerate: usize,
    pub pole_coincident: usize,
    pub spurious_rejected: usize,
    pub rescanned_blocks: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReturnsSummary {
    pub seeds: Vec<u64>,
    pub count_per_seed: usize,
    pub total: usize,
    pub mean_delta: f64,
    pub quadrature_segments: Option<usize>,
    pub quadrature_flux_density: Option<f64>,
    pub ks_quadrature_vs_returns: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyticSummary {
    pub name: String,
    pub params: Vec<(String, f64)>,
    pub moments: Moments,
    pub peak: Option<DeltaPeak>,
}

/// Machine-readable record of a run; every number can be recomputed from
/// the CSV files listed in `files`.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Summary {
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache: Option<CacheStatus>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density_exact: Option<f64>,
    /// (N − 1)/(k_N − k_1)
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density_empirical: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spacing_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_spacing: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope_fit: Option<SlopeFit>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub ks: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sum_rule: Option<SumRuleReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub returns: Option<ReturnsSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analytic: Option<AnalyticSummary>,
    pub files: Vec<String>,
}

struct Writer<'a> {
    out: &'a Path,
    files: Vec<String>,
}

impl<'a> Writer<'a> {
    fn new(out: &'a Path) -> Self {
        Writer { out, files: Vec::new() }
    }

    fn write(&mut self, name: &str, table: &Table) -> Result<()> {
        table.write(&self.out.join(name))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn finish(self, mut summary: Summary) -> Result<Summary> {
        summary.files = self.files;
        let name = format!("{}_summary.json", summary.command);
        let mut json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Numerical(e.to_string()))?;
        json.push('\n');
        std::fs::create_dir_all(self.out)?;
        std::fs::write(self.out.join(name), json)?;
        Ok(summary)
    }
}

fn named<T>(command: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Command { .. } => e,
        e => Error::Command {
            command: command.to_string(),
            source: Box::new(e),
        },
    })
}

fn graph_summary(g: &MetricGraph) -> GraphSummary {
    GraphSummary {
        vertices: g.vertex_count(),
        bonds: g.bond_count(),
        total_length: g.total_length(),
        boundary: match g.boundary() {
            Boundary::Neumann => "neumann",
            Boundary::Dirichlet => "dirichlet",
        },
    }
}

#[derive(Serialize)]
struct SpectrumKey {
    version: &'static str,
    vertices: usize,
    bonds: Vec<(usize, usize, u64)>,
    boundary: &'static str,
    k_min: u64,
    k_max: u64,
    cut: Option<usize>,
    oversample: usize,
    tolerance: u64,
}

/// Levels from the cache or the solver, cut to the configured count.
fn spectrum(ctx: &RunContext) -> Result<(MetricGraph, SpectrumSample, CacheStatus)> {
    let g = ctx.config.graph()?;
    let (k_min, k_max, cut) = ctx.config.k_window(&g)?;
    let settings = ctx.config.solver_settings();
    let key = Cache::key(&SpectrumKey {
        version: env!("CARGO_PKG_VERSION"),
        vertices: g.vertex_count(),
        bonds: g.bonds().iter().map(|b| (b.from, b.to, b.length.to_bits())).collect(),
        boundary: graph_summary(&g).boundary,
        k_min: k_min.to_bits(),
        k_max: k_max.to_bits(),
        cut,
        oversample: settings.oversample,
        tolerance: settings.tolerance.to_bits(),
    })?;
    let mut status = CacheStatus::Disabled;
    if let Some(cache) = &ctx.cache {
        let (hit, s) = cache.load::<SpectrumSample>(&key);
        status = s;
        if let Some(sample) = hit {
            return Ok((g, sample, status));
        }
        if s == CacheStatus::Corrupt {
            eprintln!("warning: cached spectrum {key} failed its hash check; recomputing");
        }
    }
    let mut sample = find_levels(&g, k_min, k_max, &settings)?;
    if let Some(n) = cut {
        if sample.levels.len() < n {
            return Err(Error::InsufficientData(format!(
                "found {} levels below k = {k_max}, {n} requested",
                sample.levels.len()
            )));
        }
        sample.levels.truncate(n);
        sample.audit.degenerate.retain(|&i| i < n);
        sample.audit.pole_coincident.retain(|&i| i < n);
    }
    if let Some(cache) = &ctx.cache {
        cache.store(&key, &sample)?;
    }
    Ok((g, sample, status))
}

fn spectrum_summary(command: &str, g: &MetricGraph, s: &SpectrumSample, status: CacheStatus) -> Summary {
    let n = s.levels.len();
    let density_empirical = (n >= 2).then(|| (n - 1) as f64 / (s.levels[n - 1] - s.levels[0]));
    Summary {
        command: command.into(),
        graph: Some(graph_summary(g)),
        cache: Some(status),
        level_count: Some(n),
        density_exact: Some(g.mean_density()),
        density_empirical,
        audit: Some(AuditSummary {
            exact_count: s.audit.exact_count,
            degenerate: s.audit.degenerate.len(),
            pole_coincident: s.audit.pole_coincident.len(),
            spurious_rejected: s.audit.spurious_rejected,
            rescanned_blocks: s.audit.rescanned_blocks,
        }),
        ..Summary::default()
    }
}

fn spectrum_table(s: &SpectrumSample) -> Table {
    let mut t = Table::new(&["index", "k"]);
    for (i, &k) in s.levels.iter().enumerate() {
        t.indexed(i + 1, &[k]);
    }
    t
}

pub fn cmd_spectrum(ctx: &RunContext) -> Result<Summary> {
    named("spectrum", (|| {
        let (g, s, status) = spectrum(ctx)?;
        let mut w = Writer::new(&ctx.out);
        w.write("spectrum.csv", &spectrum_table(&s))?;
        w.finish(spectrum_summary("spectrum", &g, &s, status))
    })())
}

/// Spacing tables shared by `spacings` and `compare`.
fn spacing_outputs(ctx: &RunContext, command: &str, w: &mut Writer<'_>) -> Result<(MetricGraph, SpacingSeries, Summary)> {
    let (g, s, status) = spectrum(ctx)?;
    let series = unfold(&s, &g)?;
    w.write("spectrum.csv", &spectrum_table(&s))?;

    let mut t = Table::new(&["index", "delta"]);
    for (i, &d) in series.deltas.iter().enumerate() {
        t.indexed(i + 1, &[d]);
    }
    w.write("spacings.csv", &t)?;

    let stats = &ctx.config.stats;
    let hist = histogram(&series, stats.bin_width)?;
    if let crate::spacing::Shape::Histogram { origin, width, densities } = &hist.shape {
        let mut t = Table::new(&["delta", "density"]);
        for (j, d) in densities.iter().enumerate() {
            t.row(&[origin + (j as f64 + 0.5) * width, *d]);
        }
        w.write("histogram.csv", &t)?;
    }

    let mut sorted = series.deltas.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut t = Table::new(&["delta", "cdf"]);
    for (i, &d) in sorted.iter().enumerate() {
        t.row(&[d, (i + 1) as f64 / n]);
    }
    w.write("cdf.csv", &t)?;

    let mut summary = spectrum_summary(command, &g, &s, status);
    summary.spacing_count = Some(series.len());
    summary.mean_spacing = Some(series.mean());
    if stats.slope_fit && series.len() >= 1000 {
        summary.slope_fit = Some(small_slope_fit(&series, stats.fit_window)?);
    }
    Ok((g, series, summary))
}

pub fn cmd_spacings(ctx: &RunContext) -> Result<Summary> {
    named("spacings", (|| {
        let mut w = Writer::new(&ctx.out);
        let (_, _, summary) = spacing_outputs(ctx, "spacings", &mut w)?;
        w.finish(summary)
    })())
}

fn reference_law(r: Reference, g: &MetricGraph) -> Result<AnalyticSpacing> {
    match r {
        Reference::Poisson => Ok(analytic::poisson()),
        Reference::Wigner => Ok(analytic::wigner_goe()),
        Reference::Figure8 => Ok(analytic::figure_eight_pdf()),
        Reference::Integrable => analytic::integrable_pdf(&g.lengths()),
        Reference::Star2 => {
            let l = g.lengths();
            if l.len() != 3 || l[0] != l[2] {
                return Err(Error::Config(
                    "compare.references: star2 needs a star with lengths (l1, l2, l1)".into(),
                ));
            }
            analytic::star2_pdf(l[0], l[1])
        }
    }
}

pub fn cmd_compare(ctx: &RunContext) -> Result<Summary> {
    named("compare", (|| {
        let mut w = Writer::new(&ctx.out);
        let (g, series, mut summary) = spacing_outputs(ctx, "compare", &mut w)?;
        let emp = empirical_cdf(&series)?;
        let points = ctx.config.compare.points.max(2);
        for &r in &ctx.config.compare.references {
            let law = reference_law(r, &g)?;
            let dist = law.distribution();
            let d = ks_distance(&emp, &dist);
            summary.ks.insert(r.name().to_string(), d);
            let top = series.max().max(law.support_max().unwrap_or(0.0)) * 1.05;
            let mut t = Table::new(&["delta", "empirical", "reference", "deviation"]);
            for i in 0..points {
                let x = top * i as f64 / (points - 1) as f64;
                let (fe, fr) = (emp.cdf(x), dist.cdf(x));
                t.row(&[x, fe, fr, fe - fr]);
            }
            t.peak(law.peak());
            w.write(&format!("compare_{}.csv", r.name()), &t)?;
        }
        w.finish(summary)
    })())
}

pub fn cmd_sheets(ctx: &RunContext) -> Result<Summary> {
    named("sheets", (|| {
        let g = ctx.config.graph()?;
        let basis = ctx.config.basis(&g)?;
        let seed = ctx.seeds.first().copied().unwrap_or(1);
        let report = verify_sum_rule(&g, &basis, 32, seed)?;
        let mut t = Table::new(&["direction", "basis_length", "sheets"]);
        for (i, (&m, &l)) in report.sheets.iter().zip(&report.basis_lengths).enumerate() {
            t.indexed(i, &[l, m as f64]);
        }
        let mut w = Writer::new(&ctx.out);
        w.write("sheets.csv", &t)?;
        w.finish(Summary {
            command: "sheets".into(),
            graph: Some(graph_summary(&g)),
            sum_rule: Some(report),
            ..Summary::default()
        })
    })())
}

/// Builds the analytic model named by `spec`.
pub fn analytic_model(spec: &AnalyticSpec) -> Result<AnalyticSpacing> {
    let lengths = spec.lengths()?;
    match spec.model {
        Reference::Poisson => Ok(analytic::poisson()),
        Reference::Wigner => Ok(analytic::wigner_goe()),
        Reference::Figure8 => Ok(analytic::figure_eight_pdf()),
        Reference::Integrable => analytic::integrable_pdf(&lengths),
        Reference::Star2 => {
            if lengths.len() != 2 {
                return Err(Error::Config(format!(
                    "analytic.lengths: star2 takes [l1, l2], got {} values",
                    lengths.len()
                )));
            }
            analytic::star2_with_mode(lengths[0], lengths[1], spec.gamma_mode()?)
        }
    }
}

pub fn cmd_analytic(spec: &AnalyticSpec, out: &Path) -> Result<Summary> {
    named("analytic", (|| {
        let law = analytic_model(spec)?;
        let top = spec
            .max_delta
            .or_else(|| law.peak().map(|p| p.position * 1.05))
            .or_else(|| law.support_max().map(|s| s * 1.05))
            .unwrap_or(4.0);
        let points = spec.points.max(2);
        let mut t = Table::new(&["delta", "density", "cdf"]);
        for i in 0..points {
            let x = top * i as f64 / (points - 1) as f64;
            t.row(&[x, law.pdf(x), law.cdf(x)]);
        }
        t.peak(law.peak());
        let mut w = Writer::new(out);
        w.write(&format!("analytic_{}.csv", spec.model.name()), &t)?;
        w.finish(Summary {
            command: "analytic".into(),
            analytic: Some(AnalyticSummary {
                name: law.name.clone(),
                params: law.params.clone(),
                moments: law.moments(),
                peak: law.peak(),
            }),
            ..Summary::default()
        })
    })())
}

pub fn cmd_returns(ctx: &RunContext) -> Result<Summary> {
    named("returns", (|| {
        let g = ctx.config.graph()?;
        let basis = ctx.config.basis(&g)?;
        let (flow, surface) = secular_surface(&g, &basis)?;
        let settings = ctx.config.solver_settings();
        let count = ctx.config.returns.count;
        let samples = sample_returns(&flow, &surface, &ctx.seeds, count, &settings)?;
        let density = g.mean_density();

        let mut w = Writer::new(&ctx.out);
        let mut t = Table::new(&["index", "seed", "tau", "delta"]);
        let mut deltas = Vec::with_capacity(samples.len() * count);
        for (s, &seed) in samples.iter().zip(&ctx.seeds) {
            for &tau in &s.times {
                deltas.push(tau * density);
                t.indexed(deltas.len(), &[seed as f64, tau, tau * density]);
            }
        }
        w.write("returns.csv", &t)?;
        let series = SpacingSeries::from_deltas(deltas);

        let mut returns = ReturnsSummary {
            seeds: ctx.seeds.clone(),
            count_per_seed: count,
            total: series.len(),
            mean_delta: series.mean(),
            quadrature_segments: None,
            quadrature_flux_density: None,
            ks_quadrature_vs_returns: None,
        };
        let mut summary = Summary {
            command: "returns".into(),
            graph: Some(graph_summary(&g)),
            density_exact: Some(density),
            spacing_count: Some(series.len()),
            mean_spacing: Some(series.mean()),
            ..Summary::default()
        };
        if flow.dim() == 2 && ctx.config.returns.grid_size > 0 {
            let q = quadrature_spacing_2d(&flow, &surface, ctx.config.returns.grid_size, &settings)?;
            let mut t = Table::new(&["delta", "weight"]);
            let mut sorted = q.samples.clone();
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            for (d, wgt) in sorted {
                t.row(&[d, wgt]);
            }
            w.write("quadrature.csv", &t)?;
            let d = ks_distance(&q.distribution, &empirical_cdf(&series)?);
            returns.quadrature_segments = Some(q.segments);
            returns.quadrature_flux_density = Some(q.flux_density);
            returns.ks_quadrature_vs_returns = Some(d);
            summary.ks.insert("quadrature".into(), d);
        }
        summary.returns = Some(returns);
        w.finish(summary)
    })())
}
