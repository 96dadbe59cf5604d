//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs without the libtest harness.

use std::f64::consts::{E, PI};
use std::process::ExitCode;
use std::time::Instant;

use qgraph::analytic::{self, AnalyticSpacing, GammaMode};
use qgraph::secular::{find_levels, integrable_levels, SolverSettings};
use qgraph::spacing::{empirical_cdf, ks_distance, small_slope_fit, unfold, unfold_levels, SpacingSeries};
use qgraph::torus::{quadrature_spacing_2d, sample_returns, secular_surface, verify_sum_rule};
use qgraph::{LengthBasis, MetricGraph, Result};

const STAR3: [f64; 3] = [PI, 3.183_459_012, 3.144_233_607_3];
const STAR2: (f64, f64) = (PI, 1.531_834_590_12);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn settings() -> SolverSettings {
    SolverSettings::default()
}

/// Spacings of the first `n` levels above k = 0.
fn spacings(g: &MetricGraph, n: usize) -> Result<SpacingSeries> {
    let d = g.mean_density();
    let k_max = (n as f64 + 2.0 * g.bond_count() as f64 + 20.0) / d;
    let mut s = find_levels(g, 1e-6, k_max, &settings())?;
    s.levels.truncate(n + 1);
    unfold(&s, g)
}

fn convergencia(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| match i {
            1 => 167f64.sqrt(),
            4 => 107f64.sqrt(),
            8 => E,
            9 => 105f64.sqrt(),
            16 => 119f64.sqrt(),
            25 => 134f64.sqrt(),
            _ => (i as f64).sqrt(),
        })
        .collect()
}

fn pentagon() -> Result<MetricGraph> {
    let l = [
        2f64.sqrt(),
        3f64.sqrt(),
        5f64.sqrt(),
        6f64.sqrt(),
        7f64.sqrt(),
        PI,
        E,
        10f64.sqrt(),
        11f64.sqrt(),
        13f64.sqrt(),
    ];
    let scaled: Vec<f64> = l.iter().map(|x| 0.6 * x).collect();
    MetricGraph::complete(5, &scaled)
}

/// Dirichlet spectrum with at least `n` spacings.
fn integrable_spacings(lengths: &[f64], n: usize) -> Result<SpacingSeries> {
    let total: f64 = lengths.iter().sum();
    let k_max = (n as f64 + 50.0) * PI / total;
    let s = integrable_levels(lengths, k_max)?;
    unfold_levels(&s.levels, total / PI)
}

fn weyl_density() -> Result<Outcome> {
    let g = MetricGraph::star(&STAR3)?;
    let d = g.mean_density();
    let k = 6000.0 / d;
    let s = find_levels(&g, 1e-6, k, &settings())?;
    let n = s.levels.len() as f64;
    let rel = (n / k - d).abs() / d;
    outcome(
        n >= 5000.0 && rel < 0.005,
        format!("N(K) = {n} at K = {k:.3}, |N/K - d|/d = {rel:.2e} (< 5e-3), <d> = {d:.6}"),
    )
}

fn repulsion_slope() -> Result<Outcome> {
    let g = MetricGraph::star(&STAR3)?;
    let series = spacings(&g, 200_000)?;
    let fit = small_slope_fit(&series, 0.02)?;
    let formula = analytic::star3_slope(STAR3[0], STAR3[1], STAR3[2])?;
    let measured = fit.density_slope();
    let rel = (measured - formula).abs() / formula;
    outcome(
        series.len() >= 20_000 && rel < 0.05,
        format!(
            "2*slope = {measured:.4} vs formula {formula:.4}, rel {rel:.3} (< 0.05), {} spacings, {} fit points",
            series.len(),
            fit.points
        ),
    )
}

fn two_length_star() -> Result<Outcome> {
    let (l1, l2) = STAR2;
    let g = MetricGraph::star(&[l1, l2, l1])?;
    let series = spacings(&g, 100_000)?;
    let law = analytic::star2_pdf(l1, l2)?;
    let star = qgraph::analytic::Star2::new(l1, l2, GammaMode::Exact)?;
    let edge = star.edge();
    let onset = star.gamma_onset();
    let max = series.max();
    let above = series.deltas.iter().filter(|&&d| d > edge + 1e-9).count();
    let emp = empirical_cdf(&series)?;
    let ks = ks_distance(&emp, &law.distribution());

    // the Γ term switches on at the onset: compare the change of CDF slope
    let w = 0.03;
    let kink = |f: &dyn Fn(f64) -> f64| (f(onset + w) - f(onset)) / w - (f(onset) - f(onset - w)) / w;
    let kink_emp = kink(&|x| emp.cdf(x));
    let kink_law = kink(&|x| law.cdf(x));
    let kink_ok = kink_law > 0.2 && (kink_emp - kink_law).abs() < 0.25 * kink_law;

    let pass = (max - 1.522).abs() < 0.01 && above == 0 && (onset - 1.345).abs() < 0.01 && kink_ok && ks < 0.02;
    outcome(
        pass,
        format!(
            "edge {edge:.4}, max spacing {max:.4} (1.522 +- 0.01), {above} above edge, onset {onset:.4}, \
             slope jump {kink_emp:.3} vs {kink_law:.3}, KS {ks:.4} (< 0.02), {} spacings",
            series.len()
        ),
    )
}

fn figure_eight() -> Result<Outcome> {
    let law = analytic::figure_eight_pdf().distribution();
    let mut parts = Vec::new();
    let mut pass = true;
    for (l1, l2) in [(1.0, 5f64.sqrt()), (PI, E)] {
        let g = MetricGraph::figure_eight(l1, l2)?;
        let series = spacings(&g, 10_000)?;
        let ks = ks_distance(&empirical_cdf(&series)?, &law);
        pass &= ks < 0.02;
        parts.push(format!("({l1:.4}, {l2:.4}) KS {ks:.4}"));
    }
    outcome(pass, format!("{} (< 0.02)", parts.join(", ")))
}

fn lasso() -> Result<Outcome> {
    let (l1, l2) = (1.0, 2f64.sqrt());
    let g = MetricGraph::lasso(l1, l2)?;
    let series = spacings(&g, 100_000)?;
    let bin = 0.02;
    let count = series.deltas.iter().filter(|&&d| d < bin).count();
    let estimate = count as f64 / (series.len() as f64 * bin);
    let p0 = analytic::lasso_p0(l1, l2)?;
    let rel = (estimate - p0).abs() / p0;
    outcome(
        rel < 0.1,
        format!(
            "P(0) estimate {estimate:.4} vs l2/(l1+l2) = {p0:.4}, rel {rel:.3} (< 0.1), {} spacings",
            series.len()
        ),
    )
}

fn integrable_law() -> Result<Outcome> {
    let lengths = convergencia(8);
    let series = integrable_spacings(&lengths, 100_000)?;
    let law = analytic::integrable_pdf(&lengths)?;
    let ks = ks_distance(&empirical_cdf(&series)?, &law.distribution());
    let total: f64 = lengths.iter().sum();
    let l_max = lengths.iter().copied().fold(0.0, f64::max);
    let peak = law.peak().expect("integrable law has a peak").position;
    let peak_dev = (peak - series.max()).abs();
    let p0_formula = 1.0 - lengths.iter().map(|l| (l / total).powi(2)).sum::<f64>();
    let p0_dev = (law.pdf(0.0) - p0_formula).abs();
    let pass = series.len() >= 100_000 && ks < 0.02 && peak_dev < 1e-9 && (peak - total / l_max).abs() < 1e-12 && p0_dev < 1e-12;
    outcome(
        pass,
        format!(
            "KS {ks:.4} (< 0.02), peak {peak:.12} vs max spacing dev {peak_dev:.1e}, P(0) dev {p0_dev:.1e}, {} spacings",
            series.len()
        ),
    )
}

fn poisson_limit() -> Result<Outcome> {
    // the family is compared through its spacing law; the 30-bond spectrum
    // itself also carries coincident levels (sqrt(12) = 2 sqrt(3), ...) and
    // is reported alongside
    let poisson = analytic::poisson().distribution();
    let mut dists = Vec::new();
    for n in [2, 3, 8, 30] {
        let law = analytic::integrable_pdf(&convergencia(n))?;
        dists.push((n, ks_distance(&law.distribution(), &poisson)));
    }
    let monotone = dists.windows(2).all(|w| w[1].1 < w[0].1);
    let last = dists.last().expect("four sets").1;
    let series = integrable_spacings(&convergencia(30), 200_000)?;
    let coincident = series.deltas.iter().filter(|&&d| d < 1e-9).count();
    let spectrum = ks_distance(&empirical_cdf(&series)?, &poisson);
    let text: Vec<String> = dists.iter().map(|(n, d)| format!("{n}: {d:.4}")).collect();
    outcome(
        last < 0.03 && monotone,
        format!(
            "law KS to Poisson {} (30 bonds < 0.03, decreasing); 30-bond spectrum {spectrum:.4} with {coincident} coincident levels",
            text.join(", ")
        ),
    )
}

fn pentagon_rmt() -> Result<Outcome> {
    let g = pentagon()?;
    let series = spacings(&g, 20_000)?;
    let ks = ks_distance(&empirical_cdf(&series)?, &analytic::wigner_goe().distribution());
    outcome(ks < 0.025, format!("KS vs Wigner {ks:.4} (< 0.025), {} spacings", series.len()))
}

fn sum_rule() -> Result<Outcome> {
    let mut parts = Vec::new();
    let mut pass = true;
    let g = MetricGraph::star(&STAR3)?;
    let r = verify_sum_rule(&g, &LengthBasis::per_bond(&g), 32, 1)?;
    pass &= r.sheets == vec![2, 2, 2];
    parts.push(format!("3-star {:?}", r.sheets));

    let (l1, l2) = STAR2;
    let g = MetricGraph::star(&[l1, l2, l1])?;
    let b = LengthBasis::from_integers(vec![l1, l2], vec![vec![1, 0], vec![0, 1], vec![1, 0]])?;
    let r = verify_sum_rule(&g, &b, 32, 1)?;
    pass &= r.sheets == vec![4, 2];
    parts.push(format!("two-length star {:?}", r.sheets));

    // five random graphs, one rationally independent length per bond
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for i in 0..5 {
        let mut len = || 0.5 + 2.0 * rng.random::<f64>();
        let g = match i {
            0 => MetricGraph::star(&[len(), len(), len(), len()])?,
            1 => MetricGraph::complete(4, &[len(), len(), len(), len(), len(), len()])?,
            2 => MetricGraph::lasso(len(), len())?,
            3 => MetricGraph::figure_eight(len(), len())?,
            _ => MetricGraph::star(&[len(), len(), len(), len(), len()])?,
        };
        let r = verify_sum_rule(&g, &LengthBasis::per_bond(&g), 32, i)?;
        worst = worst.max(r.relative_error);
    }
    parts.push(format!("5 random graphs, worst residual {worst:.1e}"));
    outcome(pass && worst < 1e-9, parts.join(", "))
}

fn ergodic_equivalence() -> Result<Outcome> {
    let n = 10_000;
    let bound = 3.0 / (n as f64).sqrt();
    let (l1, l2) = STAR2;
    type Case = (&'static str, MetricGraph, LengthBasis);
    let mk = |name: &'static str, g: MetricGraph, b: Option<LengthBasis>| -> Case {
        let b = b.unwrap_or_else(|| LengthBasis::per_bond(&g));
        (name, g, b)
    };
    let cases: Vec<Case> = vec![
        mk("3-star", MetricGraph::star(&STAR3)?, None),
        mk(
            "two-length star",
            MetricGraph::star(&[l1, l2, l1])?,
            Some(LengthBasis::from_integers(vec![l1, l2], vec![vec![1, 0], vec![0, 1], vec![1, 0]])?),
        ),
        mk("figure-eight", MetricGraph::figure_eight(1.0, 5f64.sqrt())?, None),
        mk("lasso", MetricGraph::lasso(1.0, 2f64.sqrt())?, None),
        mk("pentagon", pentagon()?, None),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, g, basis) in &cases {
        let direct = empirical_cdf(&spacings(g, n)?)?;
        let (flow, surface) = secular_surface(g, basis)?;
        let seeds: Vec<u64> = (1..=4).collect();
        let samples = sample_returns(&flow, &surface, &seeds, n / seeds.len(), &settings())?;
        let d = g.mean_density();
        let deltas: Vec<f64> = samples.iter().flat_map(|s| s.times.iter().map(|t| t * d)).collect();
        let traj = empirical_cdf(&SpacingSeries::from_deltas(deltas))?;
        let ks = ks_distance(&traj, &direct);
        pass &= ks < bound;
        let mut part = format!("{name} traj/direct {ks:.4}");
        if flow.dim() == 2 {
            let q = quadrature_spacing_2d(&flow, &surface, 2000, &settings())?;
            let (a, b) = (ks_distance(&q.distribution, &traj), ks_distance(&q.distribution, &direct));
            pass &= a < 0.02 && b < 0.02;
            part.push_str(&format!(", quad/traj {a:.4}, quad/direct {b:.4}"));
        }
        parts.push(part);
    }
    outcome(pass, format!("{} (traj < {bound:.3}, quad < 0.02)", parts.join("; ")))
}

fn analytic_sanity() -> Result<Outcome> {
    let (l1, l2) = STAR2;
    let mut laws: Vec<(AnalyticSpacing, f64)> = vec![
        (analytic::poisson(), 1e-9),
        (analytic::wigner_goe(), 1e-9),
        (analytic::figure_eight_pdf(), 1e-9),
        (analytic::star2_pdf(l1, l2)?, 1e-6),
        (analytic::star2_pdf(2f64.sqrt(), 3f64.sqrt())?, 1e-6),
    ];
    for n in [2, 3, 8, 30] {
        laws.push((analytic::integrable_pdf(&convergencia(n))?, 1e-9));
    }
    let mut worst = Vec::new();
    let mut pass = true;
    for (law, tol) in &laws {
        let m = law.moments();
        let dev = (m.norm - 1.0).abs().max((m.mean - 1.0).abs());
        pass &= dev < *tol;
        worst.push(format!("{} {dev:.1e}", law.name));
    }
    outcome(pass, format!("max |norm-1|,|mean-1|: {}", worst.join(", ")))
}

type Criterion = (&'static str, fn() -> Result<Outcome>);

fn main() -> ExitCode {
    let criteria: Vec<Criterion> = vec![
        ("weyl density", weyl_density),
        ("level repulsion slope", repulsion_slope),
        ("two-length star", two_length_star),
        ("figure-eight", figure_eight),
        ("lasso P(0)", lasso),
        ("integrable exact law", integrable_law),
        ("Poisson limit", poisson_limit),
        ("pentagon vs Wigner", pentagon_rmt),
        ("sum rule", sum_rule),
        ("ergodic equivalence", ergodic_equivalence),
        ("analytic sanity", analytic_sanity),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = match run() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!(
            "{} {:>2} {name}: {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
