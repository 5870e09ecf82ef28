use std::f64::consts::PI;
use std::sync::Arc;

use exitset_core::bubbles::{epsilon_ij, BubbleParams, Cutoff};
use exitset_core::conformal::{compute_j, compute_rk, grad_j, normalize, CurvatureField};
use exitset_core::flows::{flow_step, homotopy_blend, FlowKind};
use exitset_core::{torus_distance, Point, ScalarField, TorusGrid};
use proptest::prelude::*;

const SIDE: f64 = 2.0 * PI;

fn grid(dim: usize) -> Arc<TorusGrid> {
    TorusGrid::new(dim, if dim == 3 { 16 } else { 8 }, SIDE).unwrap()
}

fn smooth(grid: &Arc<TorusGrid>, seed: u64) -> ScalarField {
    ScalarField::random_smooth(grid, 5, 2, seed)
}

/// Strictly negative curvature, so every positive state has `k < 0`.
fn negative_curvature(grid: &Arc<TorusGrid>) -> CurvatureField {
    CurvatureField::new(ScalarField::from_fn(grid, |x| -1.0 + 0.5 * x[0].cos() * x[1].sin())).unwrap()
}

/// A positive state near the constant, inside X for the curvature above.
fn state(grid: &Arc<TorusGrid>, amplitude: f64, seed: u64) -> ScalarField {
    ScalarField::constant(grid, 1.0).axpy(amplitude, &ScalarField::random_smooth(grid, 4, 1, seed))
}

fn point(coords: [f64; 3]) -> Point {
    Point::new(coords.to_vec())
}

fn coords() -> impl Strategy<Value = [f64; 3]> {
    [-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn parseval(dim in 3usize..=5, seed in any::<u64>()) {
        let g = grid(dim);
        let f = smooth(&g, seed);
        let physical = f.dot(&f);
        let spectral = g.weighted_energy(f.values(), |_| 1.0);
        prop_assert!((physical - spectral).abs() <= 1e-12 * physical);
    }

    #[test]
    fn laplacian_integrates_to_zero(dim in 3usize..=5, seed in any::<u64>()) {
        let f = smooth(&grid(dim), seed);
        prop_assert!(f.laplacian().integrate().abs() <= 1e-10 * f.l2());
    }

    #[test]
    fn laplacian_self_adjoint(dim in 3usize..=5, a in any::<u64>(), b in any::<u64>()) {
        let g = grid(dim);
        let (f, h) = (smooth(&g, a), smooth(&g, b));
        let left = f.laplacian().dot(&h);
        let right = f.dot(&h.laplacian());
        let scale = f.laplacian().l2() * h.l2();
        prop_assert!((left - right).abs() <= 1e-10 * scale);
        let (lf, lh) = (f.l_inner(&h), h.l_inner(&f));
        prop_assert!((lf - lh).abs() <= 1e-10 * f.conformal_laplacian().l2() * h.l2());
    }

    #[test]
    fn torus_distance_is_a_metric(a in coords(), b in coords(), c in coords()) {
        let (a, b, c) = (point(a), point(b), point(c));
        let ab = torus_distance(&a, &b, SIDE);
        prop_assert_eq!(ab, torus_distance(&b, &a, SIDE));
        prop_assert!(torus_distance(&a, &a, SIDE) == 0.0);
        prop_assert!(ab <= torus_distance(&a, &c, SIDE) + torus_distance(&c, &b, SIDE) + 1e-12);
        prop_assert!(ab <= 3f64.sqrt() * SIDE / 2.0 + 1e-12);
    }

    #[test]
    fn torus_distance_periodic(a in coords(), b in coords(), shift in [-3i32..=3, -3i32..=3, -3i32..=3]) {
        let (p, q) = (point(a), point(b));
        let moved = Point::new(a.iter().zip(shift).map(|(x, s)| x + s as f64 * SIDE).collect());
        prop_assert!((torus_distance(&p, &q, SIDE) - torus_distance(&moved, &q, SIDE)).abs() <= 1e-12);
    }

    #[test]
    fn energy_is_scale_invariant(amp in 0.0..0.2f64, seed in any::<u64>(), s in 0.1..10.0f64) {
        let g = grid(3);
        let k = negative_curvature(&g);
        let u = state(&g, amp, seed);
        let j = compute_j(&u, &k).unwrap();
        let js = compute_j(&u.scale(s), &k).unwrap();
        prop_assert!((j - js).abs() <= 1e-12 * j);
        let jn = compute_j(&normalize(&u).unwrap(), &k).unwrap();
        prop_assert!((j - jn).abs() <= 1e-12 * j);
    }

    #[test]
    fn normalized_states_have_unit_norm(amp in 0.0..0.5f64, seed in any::<u64>(), s in 0.1..10.0f64) {
        let g = grid(3);
        let u = normalize(&state(&g, amp, seed).scale(s)).unwrap();
        prop_assert!((u.lcrit() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn ratio_identity_for_states_in_x(amp in 0.0..0.2f64, seed in any::<u64>()) {
        let g = grid(3);
        let k = negative_curvature(&g);
        let u = normalize(&state(&g, amp, seed)).unwrap();
        let (r, kk) = compute_rk(&u, &k);
        let j = compute_j(&u, &k).unwrap();
        let lhs = kk / r;
        let rhs = j.powf(1.0 / 3.0) * (-kk).powf(2.0 / 3.0);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs);
    }

    #[test]
    fn gradient_matches_finite_differences(amp in 0.0..0.2f64, seed in any::<u64>(), dir in any::<u64>()) {
        let g = grid(3);
        let k = negative_curvature(&g);
        let u = state(&g, amp, seed);
        let w = smooth(&g, dir);
        let grad = grad_j(&u, &k).unwrap();
        let exact = grad.dot(&w);
        let h = 1e-5;
        let fd = (compute_j(&u.axpy(h, &w), &k).unwrap() - compute_j(&u.axpy(-h, &w), &k).unwrap()) / (2.0 * h);
        prop_assert!((fd - exact).abs() <= 1e-6 * (exact.abs() + grad.l2() * w.l2()), "{} vs {}", fd, exact);
    }

    #[test]
    fn curvature_integral_affine_in_offset(amp in 0.0..0.3f64, seed in any::<u64>(), shift in -1.0..2.0f64) {
        let g = grid(3);
        let k = negative_curvature(&g);
        let shifted = CurvatureField::new(k.field().map(|x| x - shift)).unwrap();
        let u = normalize(&state(&g, amp, seed)).unwrap();
        let (_, k0) = compute_rk(&u, &k);
        let (_, k1) = compute_rk(&u, &shifted);
        prop_assert!((k1 - (k0 - shift)).abs() <= 1e-12 * (1.0 + k0.abs()));
    }

    #[test]
    fn interaction_symmetric(a in coords(), b in coords(), l1 in 5.0..200.0f64, l2 in 5.0..200.0f64) {
        let p1 = BubbleParams::new(point(a), l1).unwrap();
        let p2 = BubbleParams::new(point(b), l2).unwrap();
        let cutoff = Cutoff::standard(SIDE);
        prop_assert_eq!(epsilon_ij(&p1, &p2, cutoff, SIDE), epsilon_ij(&p2, &p1, cutoff, SIDE));
    }

    #[test]
    fn cutoff_decreases_from_one_to_zero(d1 in 0.0..4.0f64, d2 in 0.0..4.0f64) {
        let c = Cutoff::standard(SIDE);
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        prop_assert!((0.0..=1.0).contains(&c.value(lo)));
        prop_assert!(c.value(lo) >= c.value(hi));
        prop_assert!(c.value(c.radius) == 1.0 && c.value(c.support()) == 0.0);
    }

    #[test]
    fn homotopy_bound(amp in 0.0..0.3f64, seed in any::<u64>(), tau in 0.0..=1.0f64) {
        let g = grid(3);
        let u = normalize(&state(&g, amp, seed)).unwrap();
        let k = negative_curvature(&g);
        let (r, _) = compute_rk(&u, &k);
        let (rw, _) = compute_rk(&homotopy_blend(&u, tau).unwrap(), &k);
        prop_assert!(rw <= (1.0 - tau).powf(1.0 / 3.0) * r + 1e-12 * r.abs());
    }

    #[test]
    fn exit_step_keeps_volume(amp in 0.0..0.3f64, seed in any::<u64>()) {
        let g = grid(3);
        let k = negative_curvature(&g);
        let u = normalize(&state(&g, amp, seed)).unwrap();
        let next = flow_step(&u, &k, FlowKind::Exit, 1e-3, false).unwrap();
        prop_assert!((next.power_integral(6.0) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn field_binary_round_trip(dim in 3usize..=5, seed in any::<u64>()) {
        let f = smooth(&grid(dim), seed);
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        let back = ScalarField::read_from(buf.as_slice()).unwrap();
        prop_assert_eq!(back.values(), f.values());
        prop_assert_eq!(back.grid().size(), f.grid().size());
    }
}
