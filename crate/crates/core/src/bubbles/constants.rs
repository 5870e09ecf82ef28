use serde::Serialize;
use statrs::function::gamma::gamma;

use crate::quadrature::{radial, Tolerance};

/// The universal constants of the bubble calculus, computed by radial quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InteractionConstants {
    pub n: usize,
    /// `integral (1+r^2)^{-n}`.
    pub c1: f64,
    /// `(n-2)^2/4 integral (r^2-1)^2 (1+r^2)^{-(n+2)}`.
    pub c2: f64,
    /// `(n-2)^2 integral r^2 (1+r^2)^{-(n+1)}`.
    pub c3: f64,
    /// `integral r^2 (1+r^2)^{-n}`.
    pub c4: f64,
    /// `integral (1+r^2)^{-(n+2)/2}`.
    pub b0: f64,
}

/// `integral over R^n of r^{2a} (1+r^2)^{-b}` through the Beta function.
pub fn closed_form_integral(dim: usize, a: f64, b: f64) -> f64 {
    let h = dim as f64 / 2.0;
    std::f64::consts::PI.powf(h) / gamma(h) * gamma(a + h) * gamma(b - a - h) / gamma(b)
}

fn radial_integral(dim: usize, g: impl Fn(f64) -> f64) -> f64 {
    radial(dim, g, f64::INFINITY, &[0.5, 1.0, 2.0, 8.0], Tolerance { abs: 1e-300, rel: 1e-14, max_intervals: 20000 })
        .value
}

impl InteractionConstants {
    pub fn new(n: usize) -> Self {
        assert!((3..=5).contains(&n), "dimension {n} outside 3..=5");
        let nf = n as f64;
        let c1 = radial_integral(n, |r| (1.0 + r * r).powf(-nf));
        let c2 = (nf - 2.0).powi(2) / 4.0
            * radial_integral(n, |r| (r * r - 1.0).powi(2) * (1.0 + r * r).powf(-(nf + 2.0)));
        let c3 = (nf - 2.0).powi(2) * radial_integral(n, |r| r * r * (1.0 + r * r).powf(-(nf + 1.0)));
        let c4 = radial_integral(n, |r| r * r * (1.0 + r * r).powf(-nf));
        let b0 = radial_integral(n, |r| (1.0 + r * r).powf(-(nf + 2.0) / 2.0));
        InteractionConstants { n, c1, c2, c3, c4, b0 }
    }

    /// The same constants from Beta/Gamma closed forms.
    pub fn closed_form(n: usize) -> Self {
        let nf = n as f64;
        let i = |a: f64, b: f64| closed_form_integral(n, a, b);
        InteractionConstants {
            n,
            c1: i(0.0, nf),
            c2: (nf - 2.0).powi(2) / 4.0 * (i(2.0, nf + 2.0) - 2.0 * i(1.0, nf + 2.0) + i(0.0, nf + 2.0)),
            c3: (nf - 2.0).powi(2) * i(1.0, nf + 1.0),
            c4: i(1.0, nf),
            b0: i(0.0, (nf + 2.0) / 2.0),
        }
    }

    /// Limit of the Gram entry `integral phi^{4/(n-2)} (phi_3)_j^2` of one
    /// translation component, `(n-2)^2/n integral r^2 (1+r^2)^{-(n+2)}`.
    pub fn translation_gram(&self) -> f64 {
        let nf = self.n as f64;
        (nf - 2.0).powi(2) / nf * closed_form_integral(self.n, 1.0, nf + 2.0)
    }

    pub fn as_array(&self) -> [(&'static str, f64); 5] {
        [("c1", self.c1), ("c2", self.c2), ("c3", self.c3), ("c4", self.c4), ("b0", self.b0)]
    }

    /// Largest relative deviation from another set of constants.
    pub fn max_relative_deviation(&self, other: &Self) -> f64 {
        self.as_array()
            .iter()
            .zip(other.as_array())
            .map(|((_, a), (_, b))| ((a - b) / b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn three_dimensional_values() {
        let c = InteractionConstants::new(3);
        assert!((c.c1 - PI * PI / 4.0).abs() < 1e-12);
        assert!((c.b0 - 4.0 * PI / 3.0).abs() < 1e-12);
        assert!((c.c4 - 3.0 * PI * PI / 4.0).abs() < 1e-12);
    }

    #[test]
    fn quadrature_matches_closed_forms() {
        for n in 3..=5 {
            let q = InteractionConstants::new(n);
            let c = InteractionConstants::closed_form(n);
            assert!(q.max_relative_deviation(&c) < 1e-10, "n = {n}: {q:?} vs {c:?}");
        }
    }
}
