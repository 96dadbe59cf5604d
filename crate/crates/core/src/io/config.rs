//! Run configuration: a versioned TOML file.
//!
//! ```toml
//! version = 1
//! seeds = [1, 2]
//!
//! [graph]
//! kind = "star"                       # star | complete | figure_eight | lasso | single_bond | bonds | dirichlet
//! lengths = ["pi", "3.183459012", 3.1442336073]
//! scale = 1.0                         # optional factor applied to every length
//!
//! [basis]                             # optional; default groups equal lengths
//! lengths = ["pi", "1.53183459012"]
//! coefficients = [[1, 0], [0, 1], [1, 0]]
//!
//! [solver]
//! levels = 5000                       # or k_max
//! ```
//!
//! Lengths may be numbers or expressions over `pi`, `e` and `sqrt`, `ln`,
//! `exp`, `sin`, `cos`. Integer literals inside expressions are read as reals.

use std::path::{Path, PathBuf};

use evalexpr::{
    eval_number_with_context, ContextWithMutableFunctions, ContextWithMutableVariables, DefaultNumericTypes,
    EvalexprError, Function, HashMapContext, Value,
};
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::analytic::GammaMode;
use crate::error::{Error, Result};
use crate::graph::{Bond, Boundary, LengthBasis, MetricGraph};
use crate::secular::SolverSettings;

pub const CONFIG_VERSION: u32 = 1;

/// A number given either literally or as an expression string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Number {
    Int(i64),
    Float(f64),
    Expr(String),
}

impl Number {
    pub fn value(&self) -> Result<f64> {
        match self {
            Number::Int(i) => Ok(*i as f64),
            Number::Float(x) => Ok(*x),
            Number::Expr(s) => eval_expression(s),
        }
    }
}

impl From<f64> for Number {
    fn from(x: f64) -> Self {
        Number::Float(x)
    }
}

/// A basis coefficient: an integer or a "p/q" string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Int(i64),
    Ratio(String),
}

impl Coefficient {
    fn value(&self) -> Result<Ratio<i64>> {
        match self {
            Coefficient::Int(i) => Ok(Ratio::from_integer(*i)),
            Coefficient::Ratio(s) => s
                .trim()
                .parse::<Ratio<i64>>()
                .map_err(|e| Error::Config(format!("basis coefficient {s:?}: {e}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub graph: GraphSpec,
    #[serde(default)]
    pub basis: Option<BasisSpec>,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub stats: StatsSpec,
    #[serde(default)]
    pub compare: CompareSpec,
    #[serde(default)]
    pub returns: ReturnsSpec,
    #[serde(default)]
    pub analytic: Option<AnalyticSpec>,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub kind: String,
    #[serde(default)]
    pub lengths: Vec<Number>,
    #[serde(default)]
    pub scale: Option<Number>,
    /// Vertex count for `complete` and `bonds`.
    #[serde(default)]
    pub vertices: Option<usize>,
    /// Explicit (from, to, length) triples for `bonds`.
    #[serde(default)]
    pub bonds: Vec<(usize, usize, Number)>,
    #[serde(default)]
    pub boundary: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    pub lengths: Vec<Number>,
    pub coefficients: Vec<Vec<Coefficient>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default)]
    pub k_min: Option<Number>,
    #[serde(default)]
    pub k_max: Option<Number>,
    /// Target number of levels; the spectrum is cut to exactly this many.
    #[serde(default)]
    pub levels: Option<usize>,
    #[serde(default = "default_oversample")]
    pub oversample: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_oversample() -> usize {
    SolverSettings::default().oversample
}

fn default_tolerance() -> f64 {
    SolverSettings::default().tolerance
}

impl Default for SolverSpec {
    fn default() -> Self {
        SolverSpec {
            k_min: None,
            k_max: None,
            levels: None,
            oversample: default_oversample(),
            tolerance: default_tolerance(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsSpec {
    #[serde(default = "default_bin_width")]
    pub bin_width: f64,
    #[serde(default = "default_fit_window")]
    pub fit_window: f64,
    /// Skip the small-Δ fit (it needs at least 1000 spacings).
    #[serde(default = "default_true")]
    pub slope_fit: bool,
}

fn default_bin_width() -> f64 {
    0.02
}

fn default_fit_window() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

impl Default for StatsSpec {
    fn default() -> Self {
        StatsSpec {
            bin_width: default_bin_width(),
            fit_window: default_fit_window(),
            slope_fit: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    Poisson,
    Wigner,
    Integrable,
    Star2,
    Figure8,
}

impl Reference {
    pub fn name(self) -> &'static str {
        match self {
            Reference::Poisson => "poisson",
            Reference::Wigner => "wigner",
            Reference::Integrable => "integrable",
            Reference::Star2 => "star2",
            Reference::Figure8 => "figure8",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSpec {
    #[serde(default = "default_references")]
    pub references: Vec<Reference>,
    /// Points of the δF deviation curves.
    #[serde(default = "default_curve_points")]
    pub points: usize,
}

fn default_references() -> Vec<Reference> {
    vec![Reference::Poisson, Reference::Wigner]
}

fn default_curve_points() -> usize {
    401
}

impl Default for CompareSpec {
    fn default() -> Self {
        CompareSpec {
            references: default_references(),
            points: default_curve_points(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReturnsSpec {
    /// Return times per seed.
    #[serde(default = "default_return_count")]
    pub count: usize,
    /// Lattice size for the 2-torus quadrature; 0 disables it.
    #[serde(default = "default_grid")]
    pub grid_size: usize,
}

fn default_return_count() -> usize {
    10_000
}

fn default_grid() -> usize {
    2000
}

impl Default for ReturnsSpec {
    fn default() -> Self {
        ReturnsSpec {
            count: default_return_count(),
            grid_size: default_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticSpec {
    /// poisson | wigner | integrable | star2 | figure8
    pub model: Reference,
    #[serde(default)]
    pub lengths: Vec<Number>,
    #[serde(default)]
    pub gamma: Option<String>,
    #[serde(default = "default_curve_points")]
    pub points: usize,
    #[serde(default)]
    pub max_delta: Option<f64>,
}

impl AnalyticSpec {
    pub fn lengths(&self) -> Result<Vec<f64>> {
        self.lengths.iter().map(Number::value).collect()
    }

    pub fn gamma_mode(&self) -> Result<GammaMode> {
        match self.gamma.as_deref() {
            None | Some("exact") => Ok(GammaMode::Exact),
            Some("linear") => Ok(GammaMode::LinearApprox),
            Some(other) => Err(Error::Config(format!(
                "analytic.gamma: expected \"exact\" or \"linear\", got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_out")]
    pub directory: PathBuf,
    /// Points of the analytic curves written next to histograms.
    #[serde(default = "default_curve_points")]
    pub curve_points: usize,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            directory: default_out(),
            curve_points: default_curve_points(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "version: unsupported config version {}, expected {CONFIG_VERSION}",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn graph(&self) -> Result<MetricGraph> {
        let spec = &self.graph;
        let scale = spec.scale.as_ref().map(Number::value).transpose()?.unwrap_or(1.0);
        let lengths: Vec<f64> = spec
            .lengths
            .iter()
            .enumerate()
            .map(|(i, n)| {
                n.value()
                    .map(|x| x * scale)
                    .map_err(|e| Error::Config(format!("graph.lengths[{i}]: {e}")))
            })
            .collect::<Result<_>>()?;
        let boundary = match spec.boundary.as_deref() {
            None | Some("neumann") => Boundary::Neumann,
            Some("dirichlet") => Boundary::Dirichlet,
            Some(other) => {
                return Err(Error::Config(format!(
                    "graph.boundary: expected \"neumann\" or \"dirichlet\", got {other:?}"
                )))
            }
        };
        let need = |n: usize| -> Result<()> {
            if lengths.len() != n {
                return Err(Error::Config(format!(
                    "graph.lengths: kind {:?} needs {n} lengths, got {}",
                    spec.kind,
                    lengths.len()
                )));
            }
            Ok(())
        };
        let g = match spec.kind.as_str() {
            "star" => MetricGraph::star(&lengths),
            "complete" => {
                let v = spec
                    .vertices
                    .ok_or_else(|| Error::Config("graph.vertices: required for kind \"complete\"".into()))?;
                MetricGraph::complete(v, &lengths)
            }
            "figure_eight" => {
                need(2)?;
                MetricGraph::figure_eight(lengths[0], lengths[1])
            }
            "lasso" => {
                need(2)?;
                MetricGraph::lasso(lengths[0], lengths[1])
            }
            "single_bond" => {
                need(1)?;
                MetricGraph::new(2, vec![Bond { from: 0, to: 1, length: lengths[0] }], boundary)
            }
            "dirichlet" => MetricGraph::dirichlet_bonds(&lengths),
            "bonds" => {
                let bonds = spec
                    .bonds
                    .iter()
                    .enumerate()
                    .map(|(i, (from, to, l))| {
                        let length = l
                            .value()
                            .map_err(|e| Error::Config(format!("graph.bonds[{i}]: {e}")))?
                            * scale;
                        Ok(Bond { from: *from, to: *to, length })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let v = spec
                    .vertices
                    .unwrap_or_else(|| bonds.iter().map(|b| b.from.max(b.to) + 1).max().unwrap_or(0));
                MetricGraph::new(v, bonds, boundary)
            }
            other => {
                return Err(Error::Config(format!(
                    "graph.kind: unknown graph kind {other:?} (expected star, complete, figure_eight, lasso, single_bond, bonds or dirichlet)"
                )))
            }
        };
        g.map_err(|e| match e {
            Error::InvalidInput(msg) => Error::Config(format!("graph: {msg}")),
            other => other,
        })
    }

    /// The declared basis, or lengths grouped by exact equality.
    pub fn basis(&self, g: &MetricGraph) -> Result<LengthBasis> {
        let Some(spec) = &self.basis else {
            return Ok(LengthBasis::distinct_lengths(g));
        };
        let scale = self.graph.scale.as_ref().map(Number::value).transpose()?.unwrap_or(1.0);
        let basis = spec
            .lengths
            .iter()
            .enumerate()
            .map(|(i, n)| {
                n.value()
                    .map(|x| x * scale)
                    .map_err(|e| Error::Config(format!("basis.lengths[{i}]: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let coefficients = spec
            .coefficients
            .iter()
            .map(|row| row.iter().map(Coefficient::value).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        LengthBasis::new(basis, coefficients).map_err(|e| match e {
            Error::InvalidInput(msg) => Error::Config(format!("basis: {msg}")),
            other => other,
        })
    }

    pub fn solver_settings(&self) -> SolverSettings {
        SolverSettings {
            oversample: self.solver.oversample,
            tolerance: self.solver.tolerance,
            ..SolverSettings::default()
        }
    }

    /// Wavenumber window and optional cut to a level count.
    pub fn k_window(&self, g: &MetricGraph) -> Result<(f64, f64, Option<usize>)> {
        let k_min = self.solver.k_min.as_ref().map(Number::value).transpose()?.unwrap_or(1e-6);
        match (&self.solver.k_max, self.solver.levels) {
            (Some(k), _) => Ok((k_min, k.value()?, self.solver.levels)),
            (None, Some(n)) => {
                // past the Weyl estimate by the worst-case count deviation
                let d = g.mean_density();
                let margin = 2.0 * g.bond_count() as f64 + 10.0 + 0.01 * n as f64;
                Ok((k_min, k_min + (n as f64 + margin) / d, Some(n)))
            }
            (None, None) => Err(Error::Config(
                "solver: one of k_max or levels is required".into(),
            )),
        }
    }
}

fn real_literals(expr: &str) -> String {
    // evalexpr keeps integer arithmetic exact (1/2 == 0); promote bare integer
    // literals so that every length expression is evaluated in floating point
    let chars: Vec<char> = expr.chars().collect();
    let mut out = String::with_capacity(expr.len() + 8);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let starts_number = c.is_ascii_digit()
            && (i == 0 || !(chars[i - 1].is_alphanumeric() || chars[i - 1] == '_' || chars[i - 1] == '.'));
        if !starts_number {
            out.push(c);
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && chars[i].is_ascii_digit() {
            i += 1;
        }
        out.extend(&chars[start..i]);
        let real = i < chars.len() && matches!(chars[i], '.' | 'e' | 'E');
        if !real {
            out.push_str(".0");
        }
    }
    out
}

fn float_fn(f: fn(f64) -> f64) -> Function<DefaultNumericTypes> {
    Function::new(move |arg: &Value<DefaultNumericTypes>| Ok(Value::Float(f(arg.as_number()?))))
}

/// Evaluates a real-valued length expression.
pub fn eval_expression(expr: &str) -> Result<f64> {
    let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
    let setup: std::result::Result<(), EvalexprError<DefaultNumericTypes>> = (|| {
        ctx.set_value("pi".into(), Value::Float(std::f64::consts::PI))?;
        ctx.set_value("e".into(), Value::Float(std::f64::consts::E))?;
        ctx.set_function("sqrt".into(), float_fn(f64::sqrt))?;
        ctx.set_function("ln".into(), float_fn(f64::ln))?;
        ctx.set_function("exp".into(), float_fn(f64::exp))?;
        ctx.set_function("sin".into(), float_fn(f64::sin))?;
        ctx.set_function("cos".into(), float_fn(f64::cos))?;
        Ok(())
    })();
    setup.map_err(|e| Error::Config(format!("expression context: {e}")))?;
    let x = eval_number_with_context(&real_literals(expr), &ctx)
        .map_err(|e| Error::Config(format!("cannot evaluate {expr:?}: {e}")))?;
    if !x.is_finite() {
        return Err(Error::Config(format!("{expr:?} evaluates to {x}")));
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expressions() {
        assert_eq!(eval_expression("sqrt(2)").unwrap(), 2f64.sqrt());
        assert_eq!(eval_expression("1/2").unwrap(), 0.5);
        assert_eq!(eval_expression("0.6*sqrt(13)").unwrap(), 0.6 * 13f64.sqrt());
        assert_eq!(eval_expression("2*pi").unwrap(), std::f64::consts::TAU);
        assert_eq!(eval_expression("1.5e2").unwrap(), 150.0);
        assert!(eval_expression("sqrt(").is_err());
        assert!(eval_expression("ln(0)").is_err());
    }

    #[test]
    fn parses_star_config() {
        let cfg = RunConfig::from_toml(
            r#"
version = 1
seeds = [3, 4]
[graph]
kind = "star"
lengths = ["pi", 3.183459012, "3.1442336073"]
[solver]
levels = 100
"#,
        )
        .unwrap();
        let g = cfg.graph().unwrap();
        assert_eq!(g.bond_count(), 3);
        assert_eq!(g.lengths()[0], std::f64::consts::PI);
        let (lo, hi, cut) = cfg.k_window(&g).unwrap();
        assert!(lo > 0.0 && hi * g.mean_density() > 100.0);
        assert_eq!(cut, Some(100));
        assert_eq!(cfg.seeds, vec![3, 4]);
    }

    #[test]
    fn diagnostics_name_the_field() {
        let e = RunConfig::from_toml("version = 1\n[graph]\nkind = \"star\"\nlenghts = [1.0]\n").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("lenghts") && msg.contains("line"), "{msg}");
        assert_eq!(e.exit_code(), 2);

        let cfg = RunConfig::from_toml("version = 1\n[graph]\nkind = \"star\"\nlengths = [1, \"sqrt(\"]\n").unwrap();
        let msg = cfg.graph().unwrap_err().to_string();
        assert!(msg.contains("graph.lengths[1]"), "{msg}");

        let e = RunConfig::from_toml("version = 2\n[graph]\nkind = \"star\"\n").unwrap_err();
        assert!(e.to_string().contains("version"));

        let cfg = RunConfig::from_toml("version = 1\n[graph]\nkind = \"star\"\nlengths = [1, 2]\n").unwrap();
        assert!(cfg.k_window(&cfg.graph().unwrap()).is_err());
    }

    #[test]
    fn explicit_basis_with_fractions() {
        let cfg = RunConfig::from_toml(
            r#"
version = 1
[graph]
kind = "star"
lengths = ["sqrt(2)", "sqrt(2)/2", "sqrt(3)"]
[basis]
lengths = ["sqrt(2)", "sqrt(3)"]
coefficients = [[1, 0], ["1/2", 0], [0, 1]]
[solver]
k_max = 10
"#,
        )
        .unwrap();
        let g = cfg.graph().unwrap();
        let b = cfg.basis(&g).unwrap();
        assert_eq!(b.dim(), 2);
        assert!(b.integerized().integer_coefficients().is_some());
    }
}
