//! Optimal single-bubble representation `u = alpha + alpha1 phi_{a,lambda} + v`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{bubble, bubble_derivatives, BubbleParams, Cutoff, LAMBDA_MIN};
use crate::conformal::{pow, Exponents};
use crate::error::{LabError, Result};
use crate::grid::{Point, ScalarField};

const DEGENERATE_DET: f64 = 1e-12;
const MAX_ITERATIONS: usize = 80;

/// Coefficients making `v` orthogonal to `1` and `phi` in the `L` pairing.
#[derive(Debug, Clone)]
pub struct Projection {
    pub alpha: f64,
    pub alpha1: f64,
    pub phi: ScalarField,
    pub v: ScalarField,
}

/// Solve the 2x2 system `<v, 1>_L = 0 = <v, phi>_L` at fixed bubble parameters.
pub fn project(u: &ScalarField, params: &BubbleParams, cutoff: Cutoff) -> Result<Projection> {
    let grid = u.grid();
    let phi = bubble(grid, params, cutoff)?;
    let lphi = phi.conformal_laplacian();
    // <1,1>_L = -|M|, <1,phi>_L = -int phi, <phi,phi>_L = int phi L phi.
    let g11 = -grid.volume();
    let g12 = -phi.integrate();
    let g22 = phi.dot(&lphi);
    let det = g11 * g22 - g12 * g12;
    if det.abs() < DEGENERATE_DET {
        return Err(LabError::Degenerate { det });
    }
    let b1 = -u.integrate();
    let b2 = u.dot(&lphi);
    let alpha = (b1 * g22 - g12 * b2) / det;
    let alpha1 = (g11 * b2 - g12 * b1) / det;
    let v = u.zip_map(&phi, |x, p| x - alpha - alpha1 * p);
    Ok(Projection { alpha, alpha1, phi, v })
}

/// The orthogonality and stationarity quantities of the representation.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionResiduals {
    /// `<v, 1>_L`.
    pub constant: f64,
    /// `<v, phi>_L`.
    pub bubble: f64,
    /// `<phi_2, v>_L`.
    pub scale: f64,
    /// `<phi_3, v>_L`, one entry per axis.
    pub translation: Vec<f64>,
    /// `integral u^{4/(n-2)} phi_2 v`.
    pub weighted_scale: f64,
    /// `integral u^{4/(n-2)} phi_3 v`, one entry per axis.
    pub weighted_translation: Vec<f64>,
}

impl ConditionResiduals {
    /// Largest absolute entry among the stationarity quantities.
    pub fn max_stationarity(&self) -> f64 {
        self.translation
            .iter()
            .chain(&self.weighted_translation)
            .chain([&self.scale, &self.weighted_scale])
            .fold(0.0_f64, |m, x| m.max(x.abs()))
    }
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub alpha: f64,
    pub alpha1: f64,
    pub params: BubbleParams,
    pub cutoff: Cutoff,
    pub v: ScalarField,
    pub residual_norms: ConditionResiduals,
    pub iterations: usize,
}

impl Decomposition {
    /// `alpha + alpha1 phi + v`.
    pub fn reconstruct(&self) -> Result<ScalarField> {
        let phi = bubble(self.v.grid(), &self.params, self.cutoff)?;
        Ok(self.v.zip_map(&phi, |v, p| self.alpha + self.alpha1 * p + v))
    }
}

fn residuals(u: &ScalarField, proj: &Projection, params: &BubbleParams, cutoff: Cutoff) -> Result<ConditionResiduals> {
    let grid = u.grid();
    let (phi2, phi3) = bubble_derivatives(grid, params, cutoff)?;
    let lv = proj.v.conformal_laplacian();
    let weight = Exponents::of(grid.dim()).weight;
    let wv = u.zip_map(&proj.v, |x, v| pow(x, weight) * v);
    Ok(ConditionResiduals {
        constant: -proj.v.integrate(),
        bubble: proj.phi.dot(&lv),
        scale: phi2.dot(&lv),
        translation: phi3.iter().map(|f| f.dot(&lv)).collect(),
        weighted_scale: phi2.dot(&wv),
        weighted_translation: phi3.iter().map(|f| f.dot(&wv)).collect(),
    })
}

/// Parameters `(a, ln lambda)` packed as a vector.
fn unpack(base: &Point, x: &[f64], side: f64) -> Result<BubbleParams> {
    let dim = base.dim();
    let shift: Vec<f64> = x[..dim].to_vec();
    BubbleParams::new(base.shifted(&shift, side), x[dim].exp())
}

fn h1_inner(f: &ScalarField, hg: &ScalarField) -> f64 {
    f.dot(hg)
}

fn h1_apply(f: &ScalarField) -> ScalarField {
    ScalarField::from_raw(f.grid().clone(), f.grid().apply_multiplier(f.values(), |k2| 1.0 + k2))
}

/// Minimize `||v||_{h1}` over the bubble center and concentration by a damped
/// Gauss-Newton iteration, re-solving for `(alpha, alpha1)` at every step.
pub fn decompose(u: &ScalarField, guess: &BubbleParams, cutoff: Cutoff) -> Result<Decomposition> {
    let grid = u.grid().clone();
    let dim = grid.dim();
    let side = grid.side();
    if guess.scale < LAMBDA_MIN {
        return Err(LabError::Param(format!("lambda = {} below lambda_min", guess.scale)));
    }
    let u_norm = u.h1();
    let start = project(u, guess, cutoff)?;
    if start.v.h1() > 0.5 * u_norm {
        return Err(LabError::Convergence(format!(
            "guess residual {:.3e} exceeds half of ||u||_h1 = {:.3e}",
            start.v.h1(),
            u_norm
        )));
    }
    let base = guess.center.clone();
    let mut x = vec![0.0; dim + 1];
    x[dim] = guess.scale.ln();
    let mut proj = start;
    let mut objective = proj.v.h1().powi(2);
    let floor = (1e-13 * u_norm).powi(2);
    let mut damping = 1e-3;
    let mut iterations = 0;
    let mut converged = objective <= floor;
    while !converged {
        if iterations == MAX_ITERATIONS {
            return Err(LabError::Convergence(format!(
                "no stationary point after {MAX_ITERATIONS} steps, ||v||_h1 = {:.3e}",
                objective.sqrt()
            )));
        }
        iterations += 1;
        let hv = h1_apply(&proj.v);
        let step = 1e-6;
        let mut columns = Vec::with_capacity(dim + 1);
        for j in 0..=dim {
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus[j] += step;
            minus[j] -= step;
            let vp = project(u, &unpack(&base, &plus, side)?, cutoff)?.v;
            let vm = project(u, &unpack(&base, &minus, side)?, cutoff)?.v;
            columns.push((&vp - &vm).scale(0.5 / step));
        }
        let hcols: Vec<ScalarField> = columns.iter().map(h1_apply).collect();
        let normal = DMatrix::from_fn(dim + 1, dim + 1, |i, j| h1_inner(&columns[i], &hcols[j]));
        let rhs = DVector::from_iterator(dim + 1, columns.iter().map(|c| -h1_inner(c, &hv)));
        let mut accepted = false;
        for _ in 0..16 {
            let mut damped = normal.clone();
            for i in 0..=dim {
                damped[(i, i)] *= 1.0 + damping;
            }
            let Some(delta) = damped.lu().solve(&rhs) else {
                damping *= 10.0;
                continue;
            };
            let trial: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, d)| a + d).collect();
            let candidate = unpack(&base, &trial, side).and_then(|p| project(u, &p, cutoff));
            match candidate {
                Ok(next) => {
                    let value = next.v.h1().powi(2);
                    if value < objective {
                        let gain = objective - value;
                        let small_step = delta.iter().take(dim).all(|d| d.abs() < 1e-11)
                            && delta[dim].abs() < 1e-12;
                        x = trial;
                        proj = next;
                        objective = value;
                        damping = (damping * 0.3).max(1e-12);
                        accepted = true;
                        converged = objective <= floor || small_step || gain <= 1e-14 * objective;
                        break;
                    }
                    damping *= 4.0;
                }
                Err(LabError::Degenerate { det }) => return Err(LabError::Degenerate { det }),
                Err(_) => damping *= 4.0,
            }
        }
        if !accepted {
            // No damped step lowers the objective: stationary to working precision.
            converged = true;
        }
    }
    let params = unpack(&base, &x, side)?;
    let residual_norms = residuals(u, &proj, &params, cutoff)?;
    Ok(Decomposition {
        alpha: proj.alpha,
        alpha1: proj.alpha1,
        params,
        cutoff,
        v: proj.v,
        residual_norms,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;

    #[test]
    fn projection_is_l_orthogonal() {
        let grid = TorusGrid::new(3, 32, 2.0 * std::f64::consts::PI).unwrap();
        let cut = Cutoff::standard(grid.side());
        let params = BubbleParams::new(Point::splat(3, 3.0), 6.0).unwrap();
        let u = ScalarField::from_fn(&grid, |x| 1.0 + 0.1 * x[0].sin() + 0.05 * (2.0 * x[1]).cos());
        let proj = project(&u, &params, cut).unwrap();
        let lv = proj.v.conformal_laplacian();
        assert!(lv.integrate().abs() < 1e-10);
        assert!(proj.phi.dot(&lv).abs() < 1e-10);
    }

    #[test]
    fn exact_representation_recovered() {
        let grid = TorusGrid::new(3, 32, 2.0 * std::f64::consts::PI).unwrap();
        let cut = Cutoff::standard(grid.side());
        let truth = BubbleParams::new(Point::new(vec![3.0, 3.1, 2.9]), 6.0).unwrap();
        let phi = bubble(&grid, &truth, cut).unwrap();
        let u = phi.map(|p| 0.8 + 0.3 * p);
        let guess = BubbleParams::new(Point::new(vec![3.05, 3.05, 2.95]), 6.3).unwrap();
        let dec = decompose(&u, &guess, cut).unwrap();
        assert!(dec.v.h1() < 1e-9, "{}", dec.v.h1());
        assert!((dec.params.scale - 6.0).abs() < 1e-7);
        assert!((dec.alpha - 0.8).abs() < 1e-9 && (dec.alpha1 - 0.3).abs() < 1e-9);
        let back = dec.reconstruct().unwrap();
        assert!((&back - &u).max_abs() < 1e-12);
    }
}
