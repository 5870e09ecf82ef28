//! Globally adaptive Gauss–Kronrod quadrature on intervals, half-lines,
//! balls and axisymmetric two-center regions.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

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

/// Integration tolerances: stop when the error estimate is below
/// `max(abs, rel * |value|)`.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { abs: 1e-15, rel: 1e-13, max_intervals: 4000 }
    }
}

impl Tolerance {
    pub fn relative(rel: f64) -> Self {
        Tolerance { abs: 1e-300, rel, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

fn kronrod<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Estimate {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    Estimate { value: k * h, error: ((k - g) * h).abs() }
}

struct Piece {
    a: f64,
    b: f64,
    est: Estimate,
}

impl PartialEq for Piece {
    fn eq(&self, o: &Self) -> bool {
        self.est.error == o.est.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Piece {
    fn cmp(&self, o: &Self) -> Ordering {
        self.est.error.total_cmp(&o.est.error)
    }
}

/// Integrate `f` over `[a, b]` split at `breaks` (points outside are ignored).
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, breaks: &[f64], tol: Tolerance) -> Estimate {
    if b <= a {
        return Estimate { value: 0.0, error: 0.0 };
    }
    let mut nodes: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    nodes.push(a);
    nodes.push(b);
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();
    let mut heap = BinaryHeap::new();
    let (mut value, mut error) = (0.0, 0.0);
    for w in nodes.windows(2) {
        let est = kronrod(&mut f, w[0], w[1]);
        value += est.value;
        error += est.error;
        heap.push(Piece { a: w[0], b: w[1], est });
    }
    while error > tol.abs.max(tol.rel * value.abs()) && heap.len() < tol.max_intervals {
        let worst = heap.pop().expect("nonempty heap");
        let m = 0.5 * (worst.a + worst.b);
        if m <= worst.a || m >= worst.b {
            heap.push(worst);
            break;
        }
        let left = kronrod(&mut f, worst.a, m);
        let right = kronrod(&mut f, m, worst.b);
        value += left.value + right.value - worst.est.value;
        error += left.error + right.error - worst.est.error;
        heap.push(Piece { a: worst.a, b: m, est: left });
        heap.push(Piece { a: m, b: worst.b, est: right });
    }
    // Re-sum to shed the drift of incremental updates.
    let (value, error) = heap
        .iter()
        .fold((0.0, 0.0), |(v, e), p| (v + p.est.value, e + p.est.error));
    Estimate { value, error }
}

/// Integrate over `[a, inf)` through `x = a + t/(1-t)`; `breaks` are given in `x`.
pub fn integrate_to_infinity<F: FnMut(f64) -> f64>(mut f: F, a: f64, breaks: &[f64], tol: Tolerance) -> Estimate {
    let tb: Vec<f64> = breaks
        .iter()
        .filter(|&&x| x > a)
        .map(|&x| (x - a) / (1.0 + x - a))
        .collect();
    integrate(
        |t| {
            if t >= 1.0 {
                return 0.0;
            }
            let s = 1.0 - t;
            let x = a + t / s;
            let v = f(x) / (s * s);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        &tb,
        tol,
    )
}

/// Area of the unit sphere `S^{m}` in `R^{m+1}`.
pub fn sphere_area(m: usize) -> f64 {
    match m {
        0 => 2.0,
        1 => 2.0 * PI,
        _ => 2.0 * PI / (m as f64 - 1.0) * sphere_area(m - 2),
    }
}

/// `integral over R^n of g(|x|)` restricted to `|x| <= radius` (`radius = inf` allowed).
pub fn radial<F: FnMut(f64) -> f64>(dim: usize, mut g: F, radius: f64, breaks: &[f64], tol: Tolerance) -> Estimate {
    let area = sphere_area(dim - 1);
    let p = dim as i32 - 1;
    let est = if radius.is_finite() {
        integrate(|r| r.powi(p) * g(r), 0.0, radius, breaks, tol)
    } else {
        integrate_to_infinity(|r| r.powi(p) * g(r), 0.0, breaks, tol)
    };
    Estimate { value: area * est.value, error: area * est.error }
}

/// Geometric breakpoints `scale * 4^j` below `limit`, used to resolve a
/// concentration scale inside a much larger support.
pub fn scale_breaks(scale: f64, limit: f64) -> Vec<f64> {
    let mut out = vec![];
    let mut x = 0.25 * scale;
    while x < limit {
        out.push(x);
        x *= 4.0;
    }
    out
}

/// Integral over `R^n` of `f(z, rho)` for integrands that depend only on the
/// axial coordinate `z` and the distance `rho` to the axis, supported in the
/// union of balls `|x - z_i e| <= r_i`. `scales` are the concentration widths
/// of the integrand around each center.
pub fn axisymmetric<F: FnMut(f64, f64) -> f64>(
    dim: usize,
    mut f: F,
    balls: &[(f64, f64)],
    scales: &[f64],
    tol: Tolerance,
) -> Estimate {
    let ring = sphere_area(dim - 2);
    let p = dim as i32 - 2;
    let lo = balls.iter().map(|(z, r)| z - r).fold(f64::INFINITY, f64::min);
    let hi = balls.iter().map(|(z, r)| z + r).fold(f64::NEG_INFINITY, f64::max);
    let mut zbreaks = vec![];
    for ((zc, r), s) in balls.iter().zip(scales) {
        zbreaks.push(*zc);
        for b in scale_breaks(*s, *r) {
            zbreaks.push(zc - b);
            zbreaks.push(zc + b);
        }
        zbreaks.push(zc - r);
        zbreaks.push(zc + r);
    }
    let inner_tol = Tolerance { abs: tol.abs * 1e-2, rel: tol.rel * 1e-1, ..tol };
    let est = integrate(
        |z| {
            let rmax = balls
                .iter()
                .map(|(zc, r)| (r * r - (z - zc).powi(2)).max(0.0).sqrt())
                .fold(0.0, f64::max);
            if rmax <= 0.0 {
                return 0.0;
            }
            let mut rbreaks = vec![];
            for ((zc, _), s) in balls.iter().zip(scales) {
                let dz = (z - zc).abs();
                rbreaks.extend(scale_breaks(s.max(dz), rmax));
            }
            integrate(|rho| rho.powi(p) * f(z, rho), 0.0, rmax, &rbreaks, inner_tol).value
        },
        lo,
        hi,
        &zbreaks,
        tol,
    );
    Estimate { value: ring * est.value, error: ring * est.error }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let e = integrate(|x| x.powi(5) - 2.0 * x, 0.0, 2.0, &[], Tolerance::default());
        assert!((e.value - (64.0 / 6.0 - 4.0)).abs() < 1e-13);
    }

    #[test]
    fn half_line_gaussian() {
        let e = integrate_to_infinity(|x| (-x * x).exp(), 0.0, &[1.0], Tolerance::default());
        assert!((e.value - PI.sqrt() / 2.0).abs() < 1e-13);
    }

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(2) - 4.0 * PI).abs() < 1e-14);
        assert!((sphere_area(3) - 2.0 * PI * PI).abs() < 1e-13);
        assert!((sphere_area(4) - 8.0 * PI * PI / 3.0).abs() < 1e-13);
    }

    #[test]
    fn ball_volume_both_routes() {
        for dim in 3..=5 {
            let r = 0.7;
            let radial_vol = radial(dim, |_| 1.0, r, &[], Tolerance::default()).value;
            let axi = axisymmetric(dim, |_, _| 1.0, &[(0.0, r)], &[0.1], Tolerance::default()).value;
            let exact = sphere_area(dim - 1) * r.powi(dim as i32) / dim as f64;
            assert!((radial_vol - exact).abs() < 1e-12 * exact);
            assert!((axi - exact).abs() < 1e-8 * exact, "{dim}: {axi} vs {exact}");
        }
    }
}
