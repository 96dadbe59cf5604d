//! Small one-dimensional numerical tools.

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Golden-section minimization of a unimodal function on [a, b].
pub fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

pub fn golden_max(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> (f64, f64) {
    let (x, v) = golden_min(|x| -f(x), a, b, tol);
    (x, -v)
}

/// Bisection for a sign change of f on [a, b]; `None` without one.
pub fn bisect_root(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> Option<f64> {
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa * fb > 0.0 {
        return None;
    }
    for _ in 0..300 {
        let m = 0.5 * (a + b);
        if (b - a).abs() <= tol {
            return Some(m);
        }
        let fm = f(m);
        if fm == 0.0 {
            return Some(m);
        }
        if (fm > 0.0) == (fa > 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Globally adaptive Gauss–Kronrod (7/15) quadrature of f on [a, b]:
/// the interval with the largest error estimate is split until the summed
/// estimate drops below `tol` or the subdivision budget runs out.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (v, e) = kronrod(&f, a, b);
    let mut pieces = vec![(a, b, v, e)];
    let mut err = e;
    for _ in 0..MAX_SUBDIVISIONS {
        if err <= tol {
            break;
        }
        let worst = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .expect("nonempty");
        let (lo, hi, _, e) = pieces.swap_remove(worst);
        let m = 0.5 * (lo + hi);
        if m <= lo || m >= hi {
            pieces.push((lo, hi, 0.0, 0.0));
            continue;
        }
        let (vl, el) = kronrod(&f, lo, m);
        let (vr, er) = kronrod(&f, m, hi);
        err += el + er - e;
        pieces.push((lo, m, vl, el));
        pieces.push((m, hi, vr, er));
    }
    // re-sum in order for a reproducible total
    pieces.sort_by(|x, y| x.0.total_cmp(&y.0));
    pieces.iter().map(|p| p.2).sum()
}

const MAX_SUBDIVISIONS: usize = 2000;

/// Integral over consecutive pieces split at `points` (sorted, inside [a, b]).
pub fn integrate_pieces(f: impl Fn(f64) -> f64, a: f64, b: f64, points: &[f64], tol: f64) -> f64 {
    let mut edges = vec![a];
    edges.extend(points.iter().copied().filter(|&p| p > a && p < b));
    edges.push(b);
    let share = tol / (edges.len() - 1) as f64;
    edges.windows(2).map(|w| integrate(&f, w[0], w[1], share)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_of_known_integrals() {
        assert!((integrate(|x| x.sin(), 0.0, std::f64::consts::PI, 1e-12) - 2.0).abs() < 1e-12);
        assert!((integrate(|x| (-x).exp(), 0.0, 40.0, 1e-12) - (1.0 - (-40f64).exp())).abs() < 1e-12);
        // inverse square-root endpoint singularity
        assert!((integrate(|x| 1.0 / x.sqrt(), 0.0, 1.0, 1e-10) - 2.0).abs() < 1e-6);
        let v = integrate_pieces(|x| if x < 1.0 { 1.0 } else { 2.0 }, 0.0, 2.0, &[1.0], 1e-12);
        assert!((v - 3.0).abs() < 1e-12);
    }

    #[test]
    fn roots_and_extrema() {
        let r = bisect_root(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
        assert!(bisect_root(|x| x * x + 1.0, 0.0, 1.0, 1e-12).is_none());
        let (x, v) = golden_max(|x| -(x - 0.25).powi(2), 0.0, 1.0, 1e-10);
        assert!((x - 0.25).abs() < 1e-9 && v.abs() < 1e-15);
    }
}
