//! Concentrated bubble profiles and their interactions.
//!
//! A bubble centered at `a` with concentration `lambda` is
//! `phi(x) = eta(d) (lambda / (1 + lambda^2 d^2))^{(n-2)/2}` with `d` the torus
//! distance to `a` and `eta` a quintic smoothstep cutoff that is one on
//! `[0, eps]` and zero beyond `2 eps`. The uncut profile `theta` solves
//! `-c_n Laplacian theta = 4n(n-1) theta^{(n+2)/(n-2)}` on `R^n`.

mod constants;
mod decompose;
mod estimates;

use std::sync::Arc;

use serde::Serialize;

pub use constants::{closed_form_integral, InteractionConstants};
pub use decompose::{decompose, project, ConditionResiduals, Decomposition, Projection};
pub use estimates::{
    verify_bubble_equation, verify_interaction, BubbleEquationReport, BubbleEquationRow, InteractionCheck, InteractionEstimate,
    SAMPLING_LIMIT,
};

use crate::error::{LabError, Result};
use crate::grid::{torus_distance, Point, ScalarField, TorusGrid};

/// Smallest admissible concentration parameter.
pub const LAMBDA_MIN: f64 = 5.0;

/// `1 - (6t^5 - 15t^4 + 10t^3)` with `t = (d - eps)/eps` clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cutoff {
    pub radius: f64,
}

impl Cutoff {
    pub fn new(radius: f64) -> Self {
        Cutoff { radius }
    }

    /// Default cutoff `L/8` of a box of side `side`.
    pub fn standard(side: f64) -> Self {
        Cutoff { radius: side / 8.0 }
    }

    fn t(&self, d: f64) -> f64 {
        ((d - self.radius) / self.radius).clamp(0.0, 1.0)
    }

    pub fn support(&self) -> f64 {
        2.0 * self.radius
    }

    pub fn value(&self, d: f64) -> f64 {
        let t = self.t(d);
        1.0 - t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
    }

    pub fn derivative(&self, d: f64) -> f64 {
        if d <= self.radius || d >= 2.0 * self.radius {
            return 0.0;
        }
        let t = self.t(d);
        -30.0 * t * t * (t - 1.0) * (t - 1.0) / self.radius
    }

    pub fn second_derivative(&self, d: f64) -> f64 {
        if d <= self.radius || d >= 2.0 * self.radius {
            return 0.0;
        }
        let t = self.t(d);
        -60.0 * t * (2.0 * t - 1.0) * (t - 1.0) / (self.radius * self.radius)
    }

    /// Radial Laplacian `eta'' + (n-1)/d eta'` in dimension `dim`.
    pub fn laplacian(&self, d: f64, dim: usize) -> f64 {
        if d <= self.radius {
            return 0.0;
        }
        self.second_derivative(d) + (dim as f64 - 1.0) / d * self.derivative(d)
    }
}

/// Center and concentration of one bubble.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BubbleParams {
    pub center: Point,
    pub scale: f64,
}

impl BubbleParams {
    pub fn new(center: Point, scale: f64) -> Result<Self> {
        if !(scale >= LAMBDA_MIN && scale.is_finite()) {
            return Err(LabError::Param(format!("lambda = {scale} below lambda_min = {LAMBDA_MIN}")));
        }
        Ok(BubbleParams { center, scale })
    }
}

/// Radial profile of a cut-off bubble as a function of the distance to its center.
#[derive(Debug, Clone, Copy)]
pub struct Profile {
    pub dim: usize,
    pub scale: f64,
    pub cutoff: Cutoff,
}

impl Profile {
    pub fn new(dim: usize, scale: f64, cutoff: Cutoff) -> Self {
        Profile { dim, scale, cutoff }
    }

    fn half(&self) -> f64 {
        (self.dim as f64 - 2.0) / 2.0
    }

    fn s(&self, d: f64) -> f64 {
        1.0 + self.scale * self.scale * d * d
    }

    /// Uncut profile `theta`.
    pub fn theta(&self, d: f64) -> f64 {
        (self.scale / self.s(d)).powf(self.half())
    }

    /// `theta'(d) / d`.
    pub fn theta_prime_over_d(&self, d: f64) -> f64 {
        let n = self.dim as f64;
        -(n - 2.0) * self.scale.powf((n + 2.0) / 2.0) * self.s(d).powf(-n / 2.0)
    }

    /// `-lambda d/dlambda theta`.
    pub fn theta2(&self, d: f64) -> f64 {
        let l2d2 = self.scale * self.scale * d * d;
        -self.half() * self.theta(d) * (1.0 - l2d2) / (1.0 + l2d2)
    }

    /// `d/dd` of [`Profile::theta2`].
    pub fn theta2_prime(&self, d: f64) -> f64 {
        let n = self.dim as f64;
        let l2d2 = self.scale * self.scale * d * d;
        let s = 1.0 + l2d2;
        (n - 2.0) * self.scale.powf((n + 2.0) / 2.0) * d * s.powf(-(n + 2.0) / 2.0)
            * (s + 0.5 * n * (1.0 - l2d2))
    }

    pub fn phi(&self, d: f64) -> f64 {
        let eta = self.cutoff.value(d);
        if eta == 0.0 {
            0.0
        } else {
            eta * self.theta(d)
        }
    }

    pub fn phi2(&self, d: f64) -> f64 {
        let eta = self.cutoff.value(d);
        if eta == 0.0 {
            0.0
        } else {
            eta * self.theta2(d)
        }
    }

    /// Coefficient `g` with `(1/lambda) grad_a phi = g(d) (x - a)`.
    pub fn phi3_coefficient(&self, d: f64) -> f64 {
        if d >= self.cutoff.support() {
            return 0.0;
        }
        let eta = self.cutoff.value(d);
        let eta_over_d = if d > 0.0 { self.cutoff.derivative(d) / d } else { 0.0 };
        -(eta_over_d * self.theta(d) + eta * self.theta_prime_over_d(d)) / self.scale
    }

    /// `L phi - 4n(n-1) phi^{(n+2)/(n-2)}` evaluated in closed form.
    pub fn residual(&self, d: f64) -> f64 {
        if d >= self.cutoff.support() {
            return 0.0;
        }
        let n = self.dim as f64;
        let cn = 4.0 * (n - 1.0) / (n - 2.0);
        let p = (n + 2.0) / (n - 2.0);
        let eta = self.cutoff.value(d);
        let th = self.theta(d);
        let cross = self.cutoff.laplacian(d, self.dim) * th
            + 2.0 * self.cutoff.derivative(d) * self.theta_prime_over_d(d) * d;
        -cn * cross + 4.0 * n * (n - 1.0) * (eta - eta.powf(p)) * th.powf(p) - eta * th
    }

    /// `-lambda d/dlambda` of [`Profile::residual`].
    pub fn residual2(&self, d: f64) -> f64 {
        if d >= self.cutoff.support() {
            return 0.0;
        }
        let n = self.dim as f64;
        let cn = 4.0 * (n - 1.0) / (n - 2.0);
        let p = (n + 2.0) / (n - 2.0);
        let eta = self.cutoff.value(d);
        let th = self.theta(d);
        let th2 = self.theta2(d);
        let cross = self.cutoff.laplacian(d, self.dim) * th2
            + 2.0 * self.cutoff.derivative(d) * self.theta2_prime(d);
        -cn * cross + 4.0 * n * (n - 1.0) * (eta - eta.powf(p)) * p * th.powf(p - 1.0) * th2
            - eta * th2
    }
}

fn check_cutoff(grid: &TorusGrid, cutoff: Cutoff) -> Result<()> {
    if cutoff.radius <= 0.0 || cutoff.radius > grid.side() / 4.0 {
        return Err(LabError::Param(format!(
            "cutoff radius {} must lie in (0, L/4]",
            cutoff.radius
        )));
    }
    Ok(())
}

fn radial_field(grid: &Arc<TorusGrid>, center: &Point, f: impl Fn(f64) -> f64) -> ScalarField {
    let values = grid.squared_distances(center).into_iter().map(|d2| f(d2.sqrt())).collect();
    ScalarField::from_raw(grid.clone(), values)
}

/// The cut-off bubble sampled on the grid.
pub fn bubble(grid: &Arc<TorusGrid>, params: &BubbleParams, cutoff: Cutoff) -> Result<ScalarField> {
    check_cutoff(grid, cutoff)?;
    let prof = Profile::new(grid.dim(), params.scale, cutoff);
    Ok(radial_field(grid, &params.center, |d| prof.phi(d)))
}

/// `phi_2 = -lambda d/dlambda phi` and the components of `phi_3 = (1/lambda) grad_a phi`.
pub fn bubble_derivatives(
    grid: &Arc<TorusGrid>,
    params: &BubbleParams,
    cutoff: Cutoff,
) -> Result<(ScalarField, Vec<ScalarField>)> {
    check_cutoff(grid, cutoff)?;
    let prof = Profile::new(grid.dim(), params.scale, cutoff);
    let phi2 = radial_field(grid, &params.center, |d| prof.phi2(d));
    let coeff = radial_field(grid, &params.center, |d| prof.phi3_coefficient(d));
    let phi3 = (0..grid.dim())
        .map(|axis| {
            let off = grid.axis_offsets(&params.center, axis);
            ScalarField::from_raw(
                grid.clone(),
                coeff.values().iter().zip(&off).map(|(g, x)| g * x).collect(),
            )
        })
        .collect();
    Ok((phi2, phi3))
}

/// Interaction `eta~(d) (l2/l1 + l1/l2 + l1 l2 d^2)^{(2-n)/2}` with the wide cutoff
/// (one below `4 eps`, zero from `6 eps`).
pub fn epsilon_ij(p1: &BubbleParams, p2: &BubbleParams, cutoff: Cutoff, side: f64) -> f64 {
    let n = p1.center.dim() as f64;
    let d = torus_distance(&p1.center, &p2.center, side);
    let t = ((d - 4.0 * cutoff.radius) / (2.0 * cutoff.radius)).clamp(0.0, 1.0);
    let eta = 1.0 - t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
    if eta == 0.0 {
        return 0.0;
    }
    let (l1, l2) = (p1.scale, p2.scale);
    eta * (l2 / l1 + l1 / l2 + l1 * l2 * d * d).powf((2.0 - n) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn prof() -> Profile {
        Profile::new(3, 7.0, Cutoff::standard(2.0 * PI))
    }

    #[test]
    fn peak_values() {
        let p = prof();
        assert!((p.phi(0.0) - 7f64.sqrt()).abs() < 1e-14);
        assert!((p.phi2(0.0) + 0.5 * 7f64.sqrt()).abs() < 1e-14);
        assert_eq!(p.phi(2.0 * PI / 4.0), 0.0);
    }

    #[test]
    fn cutoff_derivatives_match_differences() {
        let c = Cutoff::new(0.8);
        let h = 1e-6;
        for d in [0.85, 1.0, 1.3, 1.55] {
            let fd = (c.value(d + h) - c.value(d - h)) / (2.0 * h);
            assert!((fd - c.derivative(d)).abs() < 1e-7);
            let fd2 = (c.derivative(d + h) - c.derivative(d - h)) / (2.0 * h);
            assert!((fd2 - c.second_derivative(d)).abs() < 1e-6);
        }
    }

    #[test]
    fn theta2_prime_matches_difference() {
        let p = prof();
        let h = 1e-7;
        for d in [0.01, 0.1, 0.4] {
            let fd = (p.theta2(d + h) - p.theta2(d - h)) / (2.0 * h);
            assert!((fd - p.theta2_prime(d)).abs() < 1e-6 * (1.0 + fd.abs()), "{d}");
        }
    }

    #[test]
    fn epsilon_examples() {
        let a = Point::splat(3, 1.0);
        let cut = Cutoff::standard(2.0 * PI);
        let p = BubbleParams::new(a.clone(), 30.0).unwrap();
        assert!((epsilon_ij(&p, &p, cut, 2.0 * PI) - 0.5f64.sqrt()).abs() < 1e-15);
        let p1 = BubbleParams::new(a.clone(), 100.0).unwrap();
        let p2 = BubbleParams::new(a.clone(), 25.0).unwrap();
        assert!((epsilon_ij(&p1, &p2, cut, 2.0 * PI) - 4.25f64.powf(-0.5)).abs() < 1e-15);
        let far = BubbleParams::new(Point::new(vec![1.0 + 6.0 * cut.radius, 1.0, 1.0]), 30.0).unwrap();
        assert_eq!(epsilon_ij(&p, &far, cut, 20.0), 0.0);
        assert_eq!(epsilon_ij(&p1, &p2, cut, 2.0 * PI), epsilon_ij(&p2, &p1, cut, 2.0 * PI));
    }

    #[test]
    fn lambda_min_enforced() {
        assert!(BubbleParams::new(Point::splat(3, 0.0), 4.9).is_err());
    }
}
