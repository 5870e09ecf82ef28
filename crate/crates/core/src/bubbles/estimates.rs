//! Numerical checks of the bubble expansion and interaction estimates.

use std::sync::Arc;

use serde::Serialize;

use super::{bubble, bubble_derivatives, epsilon_ij, radial_field, BubbleParams, Cutoff, InteractionConstants, Profile};
use crate::conformal::{pow, Exponents};
use crate::error::{LabError, Result};
use crate::grid::{torus_distance, Point, TorusGrid};
use crate::quadrature::{axisymmetric, radial, scale_breaks, sphere_area, Tolerance};

/// Largest `lambda * h` at which the closed-form residual is sampled.
pub const SAMPLING_LIMIT: f64 = 2.0;

#[derive(Debug, Clone, Serialize)]
pub struct BubbleEquationRow {
    pub scale: f64,
    /// `||L phi - 4n(n-1) phi^{(n+2)/(n-2)}||_{W^{-1,2}}` from the closed-form residual.
    pub residual: f64,
    /// Same for the `-lambda d/dlambda` derivative.
    pub derivative_residual: f64,
    /// Residual from the spectral operator applied to the sampled bubble, when resolvable.
    pub spectral_residual: Option<f64>,
    pub spectral_derivative_residual: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BubbleEquationReport {
    pub rows: Vec<BubbleEquationRow>,
    pub ratios: Vec<f64>,
    pub derivative_ratios: Vec<f64>,
    /// `(lambda_{i+1}/lambda_i)^{-(n-2)/2} * 1.5` per step.
    pub ratio_bounds: Vec<f64>,
    pub decreasing: bool,
    pub derivative_decreasing: bool,
    pub within_rate: bool,
}

/// Residual of the bubble equation along a ladder of concentrations.
pub fn verify_bubble_equation(grid: &Arc<TorusGrid>, center: &Point, ladder: &[f64], cutoff: Cutoff) -> Result<BubbleEquationReport> {
    let dim = grid.dim();
    let nf = dim as f64;
    let e = Exponents::of(dim);
    let mut rows = Vec::with_capacity(ladder.len());
    for &scale in ladder {
        let params = BubbleParams::new(center.clone(), scale)?;
        if scale * grid.spacing() > SAMPLING_LIMIT {
            return Err(LabError::Resolution(format!(
                "lambda h = {:.3} exceeds {SAMPLING_LIMIT}",
                scale * grid.spacing()
            )));
        }
        let prof = Profile::new(dim, scale, cutoff);
        let residual = radial_field(grid, center, |d| prof.residual(d)).w_neg1();
        let derivative_residual = radial_field(grid, center, |d| prof.residual2(d)).w_neg1();
        let (spectral_residual, spectral_derivative_residual) = if scale <= grid.max_resolvable_scale() {
            let phi = bubble(grid, &params, cutoff)?;
            let (phi2, _) = bubble_derivatives(grid, &params, cutoff)?;
            let c = 4.0 * nf * (nf - 1.0);
            let r1 = phi.conformal_laplacian().zip_map(&phi, |l, p| l - c * pow(p, e.nonlinear));
            let nl2 = phi.zip_map(&phi2, |p, q| c * e.nonlinear * pow(p, e.nonlinear - 1.0) * q);
            let r2 = &phi2.conformal_laplacian() - &nl2;
            (Some(r1.w_neg1()), Some(r2.w_neg1()))
        } else {
            (None, None)
        };
        rows.push(BubbleEquationRow { scale, residual, derivative_residual, spectral_residual, spectral_derivative_residual });
    }
    let ratios: Vec<f64> = rows.windows(2).map(|w| w[1].residual / w[0].residual).collect();
    let derivative_ratios: Vec<f64> =
        rows.windows(2).map(|w| w[1].derivative_residual / w[0].derivative_residual).collect();
    let ratio_bounds: Vec<f64> = rows
        .windows(2)
        .map(|w| (w[1].scale / w[0].scale).powf(-(nf - 2.0) / 2.0) * 1.5)
        .collect();
    Ok(BubbleEquationReport {
        decreasing: ratios.iter().all(|&r| r < 1.0),
        derivative_decreasing: derivative_ratios.iter().all(|&r| r < 1.0),
        within_rate: ratios
            .iter()
            .chain(&derivative_ratios)
            .zip(ratio_bounds.iter().cycle())
            .all(|(r, b)| r <= b),
        rows,
        ratios,
        derivative_ratios,
        ratio_bounds,
    })
}

/// Which interaction estimate to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum InteractionEstimate {
    /// `integral phi^{4/(n-2)} phi_k^2 -> c_k`, `k` in 1..=3.
    Gram { k: usize },
    /// `integral phi_1^{(n+2)/(n-2)} phi_{k,2} ~ b_0 d_{k,1} eps_{12}`, `k` in 1..=2.
    Interaction { k: usize },
    /// `integral phi^{(n+2)/(n-2)} phi_2 = O(lambda^{-(n-2)})`.
    SelfInteraction,
    /// `integral phi_1^alpha phi_2^beta = O(eps^beta)` with `alpha + beta = 2n/(n-2)`.
    Mixed { alpha: f64 },
    /// `integral phi_1^{n/(n-2)} phi_2^{n/(n-2)} = O(eps^{n/(n-2)} |ln eps|)`.
    LogCorrected,
}

#[derive(Debug, Clone, Serialize)]
pub struct InteractionCheck {
    pub estimate: InteractionEstimate,
    pub lhs: f64,
    pub predicted: f64,
    pub error: f64,
    pub bound: f64,
    /// `error` divided by the size of the error class, for ladder fits.
    pub scaled_error: f64,
    pub interaction: f64,
    pub pass: bool,
}

fn tolerance() -> Tolerance {
    Tolerance { abs: 1e-16, rel: 1e-11, max_intervals: 20000 }
}

/// One-center radial integral of `f(d)` over the support of the cutoff.
fn one_center(dim: usize, scale: f64, cutoff: Cutoff, f: impl Fn(f64) -> f64) -> f64 {
    let support = cutoff.support();
    let mut breaks = scale_breaks(1.0 / scale, support);
    breaks.push(cutoff.radius);
    radial(dim, f, support, &breaks, tolerance()).value
}

/// Two-center integral of `f(d1, d2)` for centers at axial distance `sep`.
fn two_center(dim: usize, p1: &Profile, p2: &Profile, sep: f64, f: impl Fn(f64, f64) -> f64) -> f64 {
    axisymmetric(
        dim,
        |z, rho| {
            let d1 = (z * z + rho * rho).sqrt();
            let d2 = ((z - sep).powi(2) + rho * rho).sqrt();
            f(d1, d2)
        },
        &[(0.0, p1.cutoff.support()), (sep, p2.cutoff.support())],
        &[1.0 / p1.scale, 1.0 / p2.scale],
        tolerance(),
    )
    .value
}

/// Evaluate one interaction estimate with continuum quadrature of the cut-off
/// profiles. `p2` is ignored by the one-center estimates.
pub fn verify_interaction(
    p1: &BubbleParams,
    p2: &BubbleParams,
    which: InteractionEstimate,
    cutoff: Cutoff,
    side: f64,
) -> Result<InteractionCheck> {
    let dim = p1.center.dim();
    let nf = dim as f64;
    let e = Exponents::of(dim);
    let consts = InteractionConstants::closed_form(dim);
    let prof1 = Profile::new(dim, p1.scale, cutoff);
    let prof2 = Profile::new(dim, p2.scale, cutoff);
    let sep = torus_distance(&p1.center, &p2.center, side);
    let eps = epsilon_ij(p1, p2, cutoff, side);
    let lam = p1.scale;
    let (lhs, predicted, bound, class) = match which {
        InteractionEstimate::Gram { k } => {
            let w = |d: f64| pow(prof1.phi(d), e.weight);
            let (lhs, c) = match k {
                1 => (one_center(dim, lam, cutoff, |d| pow(prof1.phi(d), e.crit)), consts.c1),
                2 => (one_center(dim, lam, cutoff, |d| w(d) * prof1.phi2(d).powi(2)), consts.c2),
                3 => (
                    one_center(dim, lam, cutoff, |d| w(d) * (prof1.phi3_coefficient(d) * d).powi(2) / nf),
                    consts.translation_gram(),
                ),
                _ => return Err(LabError::Param(format!("Gram index {k} outside 1..=3"))),
            };
            (lhs, c, 0.01 * c, lam.powi(-2) + lam.powf(2.0 - nf))
        }
        InteractionEstimate::Interaction { k } => {
            let (lhs, predicted) = match k {
                1 => (
                    two_center(dim, &prof1, &prof2, sep, |d1, d2| pow(prof1.phi(d1), e.nonlinear) * prof2.phi(d2)),
                    consts.b0 * eps,
                ),
                2 => {
                    let h = 1e-6;
                    let at = |s: f64| {
                        let q = BubbleParams { center: p1.center.clone(), scale: s };
                        epsilon_ij(&q, p2, cutoff, side)
                    };
                    let d_eps = -(at(lam * (1.0 + h)) - at(lam * (1.0 - h))) / (2.0 * h);
                    (
                        two_center(dim, &prof1, &prof2, sep, |d1, d2| {
                            pow(prof1.phi(d1), e.nonlinear) * prof2.phi2(d2)
                        }),
                        consts.b0 * d_eps,
                    )
                }
                _ => return Err(LabError::Param(format!("interaction index {k} outside 1..=2"))),
            };
            (lhs, predicted, 0.2 * eps + lam.powi(-2), eps + lam.powi(-2))
        }
        InteractionEstimate::SelfInteraction => {
            let lhs = one_center(dim, lam, cutoff, |d| pow(prof1.phi(d), e.nonlinear) * prof1.phi2(d));
            let class = lam.powf(2.0 - nf);
            (lhs, 0.0, class, class)
        }
        InteractionEstimate::Mixed { alpha } => {
            let beta = e.crit - alpha;
            if !(alpha > nf / (nf - 2.0) && beta >= 1.0) {
                return Err(LabError::Param(format!("need alpha > n/(n-2) > beta >= 1, got {alpha}, {beta}")));
            }
            let lhs = two_center(dim, &prof1, &prof2, sep, |d1, d2| {
                pow(prof1.phi(d1), alpha) * pow(prof2.phi(d2), beta)
            });
            let lead = radial(dim, |r| (1.0 + r * r).powf(-alpha * (nf - 2.0) / 2.0), f64::INFINITY, &[1.0], tolerance()).value;
            let predicted = lead * eps.powf(beta);
            (lhs, predicted, predicted, eps.powf(beta))
        }
        InteractionEstimate::LogCorrected => {
            let q = nf / (nf - 2.0);
            let lhs = two_center(dim, &prof1, &prof2, sep, |d1, d2| pow(prof1.phi(d1), q) * pow(prof2.phi(d2), q));
            let class = eps.powf(q) * eps.ln().abs();
            let predicted = 2.0 * sphere_area(dim - 1) * class;
            (lhs, predicted, predicted, class)
        }
    };
    let error = (lhs - predicted).abs();
    Ok(InteractionCheck {
        estimate: which,
        lhs,
        predicted,
        error,
        bound,
        scaled_error: error / class,
        interaction: eps,
        pass: error <= bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn gram_one_matches_grid_at_resolvable_scale() {
        let side = 2.0 * PI;
        let grid = TorusGrid::new(3, 128, side).unwrap();
        let cut = Cutoff::standard(side);
        let p = BubbleParams::new(Point::splat(3, 1.0), 5.0).unwrap();
        let check = verify_interaction(&p, &p, InteractionEstimate::Gram { k: 1 }, cut, side).unwrap();
        let grid_value = bubble(&grid, &p, cut).unwrap().power_integral(6.0);
        assert!((grid_value - check.lhs).abs() < 1e-6 * check.lhs, "{grid_value} vs {}", check.lhs);
    }
}
