//! The double-peak curvature `K_dp`, exit points on the slices
//! `{||u|| = 1, r = -tau}` and the local sign structure of `k` around them.
//!
//! `K_dp = -alpha_bar + sum_i eta(d(a_i, .)) / (1 + lambda_i^2 d(a_i, .)^2)`. For states
//! `u = alpha + alpha1 phi_{a_i, lambda1}` concentrated at a peak, `k_u` is negative for
//! flat bubbles and positive for sharp ones, so each peak carries a point of the
//! exit set `{k = 0, r < 0}`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bubbles::{bubble, bubble_derivatives, BubbleParams, Cutoff, InteractionConstants, Profile, LAMBDA_MIN};
use crate::conformal::{curvature_integral, dirichlet_nu1, pow, CurvatureField, Exponents, RegionMask};
use crate::error::{LabError, Result};
use crate::grid::{Point, ScalarField, TorusGrid};
use crate::quadrature::{radial, scale_breaks, sphere_area, Tolerance};

/// `c_1 / ((4n(n-1) c_1 / |M|^{2/n})^{n/(n-2)} + c_1) - margin`.
pub fn alpha_bar(dim: usize, volume: f64, c1: f64, margin: f64) -> f64 {
    c1 / (peak_ratio(dim, volume, c1).powf(critical_power(dim)) + c1) - margin
}

fn critical_power(dim: usize) -> f64 {
    let n = dim as f64;
    n / (n - 2.0)
}

/// `4n(n-1) c_1 / |M|^{2/n}`.
fn peak_ratio(dim: usize, volume: f64, c1: f64) -> f64 {
    let n = dim as f64;
    4.0 * n * (n - 1.0) * c1 / volume.powf(2.0 / n)
}

/// Leading-order slice coefficients `(beta, beta1)` as the concentration grows.
pub fn beta_constants(dim: usize, volume: f64, c1: f64) -> (f64, f64) {
    let n = dim as f64;
    let beta1 = (peak_ratio(dim, volume, c1).powf(critical_power(dim)) + c1).powf((2.0 - n) / (2.0 * n));
    let beta = (4.0 * n * (n - 1.0) * c1 / volume).sqrt() * beta1;
    (beta, beta1)
}

/// Closed-form coefficient of `r` in the expansion of `k` near an exit point.
pub fn gamma1_closed_form(dim: usize, volume: f64, c1: f64) -> f64 {
    let n = dim as f64;
    let (_, beta1) = beta_constants(dim, volume, c1);
    n / (n - 2.0) * (4.0 * n * (n - 1.0) * c1 / volume).powf(2.0 / (n - 2.0)) * c1 * beta1.powf(4.0 / (n - 2.0))
        / (peak_ratio(dim, volume, c1).powf(critical_power(dim)) + c1)
}

/// Geometry of the double-peak curvature and the grid it lives on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DoublePeakSpec {
    pub dim: usize,
    pub size: usize,
    pub side: f64,
    pub peaks: [Point; 2],
    pub sharpness: [f64; 2],
    pub offset: f64,
    pub cutoff: Cutoff,
}

impl DoublePeakSpec {
    /// Antipodal peaks on grid points at `L/4 (1,..,1)` and `3L/4 (1,..,1)`,
    /// sharpness 3, offset from [`alpha_bar`], cutoff `L/8`.
    pub fn standard(dim: usize, size: usize) -> Self {
        let side = 2.0 * std::f64::consts::PI;
        let c1 = InteractionConstants::closed_form(dim).c1;
        DoublePeakSpec {
            dim,
            size,
            side,
            peaks: [Point::splat(dim, side / 4.0), Point::splat(dim, 0.75 * side)],
            sharpness: [3.0, 3.0],
            offset: alpha_bar(dim, side.powi(dim as i32), c1, 0.0),
            cutoff: Cutoff::standard(side),
        }
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let sep = crate::grid::torus_distance(&self.peaks[0], &self.peaks[1], self.side);
        if sep <= 4.0 * self.cutoff.radius {
            return Err(LabError::Spec(format!(
                "peak distance {sep} must exceed 4 eps = {}",
                4.0 * self.cutoff.radius
            )));
        }
        if !(self.offset > 0.0 && self.offset < 1.0) {
            return Err(LabError::Spec(format!("offset {} outside (0, 1)", self.offset)));
        }
        if self.sharpness.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(LabError::Spec(format!("sharpness {:?} must be positive", self.sharpness)));
        }
        if self.peaks.iter().any(|p| p.dim() != self.dim) {
            return Err(LabError::Spec("peak dimension mismatch".into()));
        }
        if !(self.cutoff.radius > 0.0 && self.cutoff.radius <= self.side / 8.0) {
            return Err(LabError::Spec(format!("cutoff radius {} outside (0, L/8]", self.cutoff.radius)));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Arc<TorusGrid>> {
        TorusGrid::new(self.dim, self.size, self.side)
    }

    /// `eta(d) / (1 + sharpness^2 d^2)`.
    pub fn peak_profile(&self, peak: usize, d: f64) -> f64 {
        let eta = self.cutoff.value(d);
        if eta == 0.0 {
            0.0
        } else {
            eta / (1.0 + (self.sharpness[peak] * d).powi(2))
        }
    }

    /// Concentration window `[lambda_min, 1/(2h)]` resolvable on the double-peak grid.
    pub fn default_window(&self) -> (f64, f64) {
        (LAMBDA_MIN, self.size as f64 / (2.0 * self.side))
    }
}

/// `K_dp` with its nonnegative region and the Dirichlet eigenvalue there.
#[derive(Debug, Clone)]
pub struct DoublePeak {
    pub spec: DoublePeakSpec,
    pub curvature: CurvatureField,
    pub positive_region: RegionMask,
    pub nu1: f64,
}

impl DoublePeak {
    pub fn grid(&self) -> &Arc<TorusGrid> {
        self.curvature.grid()
    }

    fn peak_index(&self, peak: usize) -> Result<usize> {
        match peak {
            1 | 2 => Ok(peak - 1),
            _ => Err(LabError::Param(format!("peak index {peak} must be 1 or 2"))),
        }
    }
}

/// Sample `K_dp` and check that the first Dirichlet eigenvalue of `L` on `{K >= 0}` is positive.
pub fn build_kdp(spec: &DoublePeakSpec) -> Result<DoublePeak> {
    spec.validate()?;
    let grid = spec.grid()?;
    let d2: Vec<Vec<f64>> = spec.peaks.iter().map(|p| grid.squared_distances(p)).collect();
    let values = (0..grid.len())
        .map(|i| -spec.offset + spec.peak_profile(0, d2[0][i].sqrt()) + spec.peak_profile(1, d2[1][i].sqrt()))
        .collect();
    let curvature = CurvatureField::new(ScalarField::new(grid, values)?)?;
    let positive_region = curvature.nonnegative_region();
    let nu1 = dirichlet_nu1(&positive_region, 500, 1e-10)?;
    if nu1 <= 0.0 {
        return Err(LabError::Hypothesis { nu1 });
    }
    Ok(DoublePeak { spec: spec.clone(), curvature, positive_region, nu1 })
}

/// `u = alpha + alpha1 phi + v` on `{||u|| = 1, r = -tau}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SliceSolution {
    pub scale: f64,
    pub alpha: f64,
    pub alpha1: f64,
    pub k_value: f64,
    pub r: f64,
    pub norm: f64,
    pub newton_residual: f64,
}

/// L-pairings of the pieces of `alpha + alpha1 phi + v`.
struct SliceSystem<'a> {
    phi: &'a ScalarField,
    v: Option<&'a ScalarField>,
    volume: f64,
    phi_mean: f64,
    phi_l: f64,
    v_mean: f64,
    phi_v_l: f64,
    v_l: f64,
    crit: f64,
    tau: f64,
}

impl<'a> SliceSystem<'a> {
    fn new(phi: &'a ScalarField, v: Option<&'a ScalarField>, tau: f64) -> Self {
        let grid = phi.grid();
        let lphi = phi.conformal_laplacian();
        let (v_mean, phi_v_l, v_l) = match v {
            Some(v) => (v.integrate(), v.dot(&lphi), v.l_inner(v)),
            None => (0.0, 0.0, 0.0),
        };
        SliceSystem {
            phi,
            v,
            volume: grid.volume(),
            phi_mean: phi.integrate(),
            phi_l: phi.dot(&lphi),
            v_mean,
            phi_v_l,
            v_l,
            crit: Exponents::of(grid.dim()).crit,
            tau,
        }
    }

    fn field(&self, alpha: f64, alpha1: f64) -> ScalarField {
        match self.v {
            Some(v) => self.phi.zip_map(v, |p, w| alpha + alpha1 * p + w),
            None => self.phi.map(|p| alpha + alpha1 * p),
        }
    }

    fn r(&self, alpha: f64, alpha1: f64) -> f64 {
        // <1,1>_L = -|M|, <1,f>_L = -integral f.
        -alpha * alpha * self.volume - 2.0 * alpha * alpha1 * self.phi_mean + alpha1 * alpha1 * self.phi_l
            - 2.0 * alpha * self.v_mean
            + 2.0 * alpha1 * self.phi_v_l
            + self.v_l
    }

    /// Residuals `(||u||^{2*} - 1, r + tau)` and their Jacobian.
    fn evaluate(&self, alpha: f64, alpha1: f64) -> ([f64; 2], [[f64; 2]; 2], f64) {
        let grid = self.phi.grid();
        let crit = self.crit;
        let phi = self.phi.values();
        let (mut norm, mut d_alpha, mut d_alpha1) = (0.0, 0.0, 0.0);
        let mut min_u = f64::INFINITY;
        // Blockwise accumulation keeps the sums accurate to the Newton tolerance.
        for start in (0..grid.len()).step_by(1024) {
            let (mut bn, mut ba, mut bb) = (0.0, 0.0, 0.0);
            for i in start..(start + 1024).min(grid.len()) {
                let u = alpha + alpha1 * phi[i] + self.v.map_or(0.0, |v| v.values()[i]);
                min_u = min_u.min(u);
                let up = pow(u, crit - 1.0);
                bn += up * u;
                ba += up;
                bb += up * phi[i];
            }
            norm += bn;
            d_alpha += ba;
            d_alpha1 += bb;
        }
        let cell = grid.cell_volume();
        let f = [norm * cell - 1.0, self.r(alpha, alpha1) + self.tau];
        let jac = [
            [crit * d_alpha * cell, crit * d_alpha1 * cell],
            [
                -2.0 * alpha * self.volume - 2.0 * alpha1 * self.phi_mean - 2.0 * self.v_mean,
                -2.0 * alpha * self.phi_mean + 2.0 * alpha1 * self.phi_l + 2.0 * self.phi_v_l,
            ],
        ];
        (f, jac, min_u)
    }

    fn solve(&self, guess: (f64, f64)) -> Result<(f64, f64, f64)> {
        let (mut alpha, mut alpha1) = guess;
        let mut residual = f64::INFINITY;
        for _ in 0..60 {
            let (f, j, min_u) = self.evaluate(alpha, alpha1);
            if min_u <= 0.0 {
                return Err(LabError::Convergence(format!("slice iterate lost positivity (min u = {min_u:e})")));
            }
            residual = f[0].abs().max(f[1].abs());
            if residual <= 1e-13 {
                return Ok((alpha, alpha1, residual));
            }
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if det.abs() < 1e-300 {
                return Err(LabError::Degenerate { det });
            }
            alpha -= (f[0] * j[1][1] - f[1] * j[0][1]) / det;
            alpha1 -= (j[0][0] * f[1] - j[1][0] * f[0]) / det;
        }
        if residual <= 1e-12 {
            Ok((alpha, alpha1, residual))
        } else {
            Err(LabError::Convergence(format!("slice Newton residual {residual:e}")))
        }
    }
}

fn finish_slice(
    system: &SliceSystem,
    kdp: &DoublePeak,
    scale: f64,
    (alpha, alpha1, newton_residual): (f64, f64, f64),
) -> Result<(SliceSolution, ScalarField)> {
    if alpha <= 0.0 || alpha1 <= 0.0 {
        return Err(LabError::Sign { alpha, alpha1 });
    }
    let u = system.field(alpha, alpha1);
    let crit = system.crit;
    let solution = SliceSolution {
        scale,
        alpha,
        alpha1,
        k_value: curvature_integral(&u, &kdp.curvature),
        r: system.r(alpha, alpha1),
        norm: u.power_integral(crit).powf(1.0 / crit),
        newton_residual,
    };
    Ok((solution, u))
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 0.2) {
        return Err(LabError::Param(format!("tau = {tau} outside (0, 0.2]")));
    }
    Ok(())
}

fn leading_guess(kdp: &DoublePeak) -> (f64, f64) {
    let spec = &kdp.spec;
    beta_constants(spec.dim, spec.volume(), InteractionConstants::closed_form(spec.dim).c1)
}

/// Solve for `(alpha, alpha1)` with the bubble centered at the chosen peak.
pub fn solve_alphas(kdp: &DoublePeak, scale: f64, tau: f64, peak: usize) -> Result<SliceSolution> {
    slice_state(kdp, scale, tau, peak).map(|(s, _)| s)
}

fn slice_state(kdp: &DoublePeak, scale: f64, tau: f64, peak: usize) -> Result<(SliceSolution, ScalarField)> {
    check_tau(tau)?;
    let grid = kdp.grid();
    if scale > grid.max_resolvable_scale() {
        return Err(LabError::Resolution(format!(
            "lambda = {scale} exceeds 1/(2h) = {}",
            grid.max_resolvable_scale()
        )));
    }
    let center = kdp.spec.peaks[kdp.peak_index(peak)?].clone();
    let phi = bubble(grid, &BubbleParams::new(center, scale)?, kdp.spec.cutoff)?;
    let system = SliceSystem::new(&phi, None, tau);
    let roots = system.solve(leading_guess(kdp))?;
    finish_slice(&system, kdp, scale, roots)
}

/// A state of the exit set `{k = 0, r < 0, u > 0, ||u|| = 1}`.
#[derive(Debug, Clone)]
pub struct ExitPoint {
    pub u: ScalarField,
    pub peak_index: usize,
    pub scale_star: f64,
    pub solution: SliceSolution,
    /// Sweep table `(lambda1, k)`.
    pub table: Vec<(f64, f64)>,
}

impl ExitPoint {
    pub fn r(&self) -> f64 {
        self.solution.r
    }

    pub fn k_abs(&self) -> f64 {
        self.solution.k_value.abs()
    }
}

/// Sweep `lambda1` over `window` and refine the first sign change of `k` to `|k| <= 1e-9`.
pub fn find_exit_point(
    kdp: &DoublePeak,
    tau: f64,
    peak: usize,
    window: (f64, f64),
    sweep_points: usize,
) -> Result<ExitPoint> {
    let (lo, hi) = window;
    if !(lo >= LAMBDA_MIN && hi > lo && sweep_points >= 2) {
        return Err(LabError::Param(format!("window {window:?} with {sweep_points} points")));
    }
    let mut table = Vec::with_capacity(sweep_points);
    let mut bracket = None;
    for i in 0..sweep_points {
        let scale = lo + (hi - lo) * i as f64 / (sweep_points - 1) as f64;
        let k = solve_alphas(kdp, scale, tau, peak)?.k_value;
        if let Some(&(prev_scale, prev_k)) = table.last() {
            if bracket.is_none() && prev_k < 0.0 && k >= 0.0 {
                bracket = Some(((prev_scale, prev_k), (scale, k)));
            }
        }
        table.push((scale, k));
    }
    let Some(((mut a, mut ka), (mut b, mut kb))) = bracket else {
        return Err(LabError::NoSignChange { table });
    };
    // Illinois regula falsi on k(lambda1).
    let mut side = 0i8;
    let mut best = if ka.abs() < kb.abs() { a } else { b };
    for _ in 0..200 {
        let c = (a * kb - b * ka) / (kb - ka);
        let kc = solve_alphas(kdp, c, tau, peak)?.k_value;
        best = c;
        if kc.abs() <= 1e-10 || (b - a) <= 1e-14 * b {
            break;
        }
        if kc < 0.0 {
            a = c;
            ka = kc;
            if side == -1 {
                kb *= 0.5;
            }
            side = -1;
        } else {
            b = c;
            kb = kc;
            if side == 1 {
                ka *= 0.5;
            }
            side = 1;
        }
    }
    let (solution, u) = slice_state(kdp, best, tau, peak)?;
    if solution.k_value.abs() > 1e-9 {
        return Err(LabError::Convergence(format!("exit refinement stopped at |k| = {:e}", solution.k_value.abs())));
    }
    Ok(ExitPoint { u, peak_index: peak, scale_star: best, solution, table })
}

/// Low Fourier modes `cos(k.x)`, `sin(k.x)` with wave vectors `e_a` and `e_a + e_b`.
struct ModeBasis {
    grid: Arc<TorusGrid>,
    directions: Vec<Vec<usize>>,
    cos_table: Vec<f64>,
    sin_table: Vec<f64>,
}

impl ModeBasis {
    fn new(grid: &Arc<TorusGrid>) -> Self {
        let dim = grid.dim();
        let mut directions: Vec<Vec<usize>> = (0..dim).map(|a| vec![a]).collect();
        for a in 0..dim {
            for b in a + 1..dim {
                directions.push(vec![a, b]);
            }
        }
        let n = grid.size();
        let angle = |i: usize| 2.0 * std::f64::consts::PI * i as f64 / n as f64;
        ModeBasis {
            grid: grid.clone(),
            directions,
            cos_table: (0..n).map(|i| angle(i).cos()).collect(),
            sin_table: (0..n).map(|i| angle(i).sin()).collect(),
        }
    }

    fn len(&self) -> usize {
        2 * self.directions.len()
    }

    /// `|k|^2` of basis function `j`.
    fn wavenumber_sq(&self, j: usize) -> f64 {
        let base = 2.0 * std::f64::consts::PI / self.grid.side();
        self.directions[j / 2].len() as f64 * base * base
    }

    fn values_at(&self, idx: &[usize], out: &mut [f64]) {
        for (d, axes) in self.directions.iter().enumerate() {
            let (mut c, mut s) = (1.0, 0.0);
            for &a in axes {
                let (ca, sa) = (self.cos_table[idx[a]], self.sin_table[idx[a]]);
                (c, s) = (c * ca - s * sa, s * ca + c * sa);
            }
            out[2 * d] = c;
            out[2 * d + 1] = s;
        }
    }

    /// `integral w_j f` for every basis function, visiting only cells where `support` holds.
    fn moments(&self, fields: &[&ScalarField], support: &ScalarField) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(fields.len(), self.len());
        let mut w = vec![0.0; self.len()];
        let sv = support.values();
        self.grid.for_each_index(|i, idx| {
            if sv[i] == 0.0 {
                return;
            }
            self.values_at(idx, &mut w);
            for (row, f) in fields.iter().enumerate() {
                let fv = f.values()[i];
                for (j, wj) in w.iter().enumerate() {
                    out[(row, j)] += fv * wj;
                }
            }
        });
        out * self.grid.cell_volume()
    }

    fn field(&self, coeffs: &[f64]) -> ScalarField {
        let mut values = vec![0.0; self.grid.len()];
        let mut w = vec![0.0; self.len()];
        self.grid.for_each_index(|i, idx| {
            self.values_at(idx, &mut w);
            values[i] = w.iter().zip(coeffs).map(|(a, b)| a * b).sum();
        });
        ScalarField::from_raw(self.grid.clone(), values)
    }

    /// `||sum c_j w_j||_{h1}^2`, exact since the modes are orthogonal.
    fn h1_sq(&self, coeffs: &[f64]) -> f64 {
        let half = 0.5 * self.grid.volume();
        coeffs.iter().enumerate().map(|(j, c)| c * c * (1.0 + self.wavenumber_sq(j)) * half).sum()
    }
}

/// One sampled state near an exit point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanSample {
    pub r: f64,
    pub offset: f64,
    pub scale: f64,
    pub v_norm: f64,
    pub k: f64,
}

/// Parameter box sampled around a peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanConfig {
    pub tau_range: (f64, f64),
    pub window: (f64, f64),
    /// Largest distance of the bubble center from the peak.
    pub max_offset: f64,
    /// Largest `||v||_{h1}`.
    pub max_v: f64,
    pub fit_samples: usize,
    pub samples: usize,
    pub max_draws: usize,
    pub seed: u64,
}

impl ScanConfig {
    pub fn standard(spec: &DoublePeakSpec) -> Self {
        ScanConfig {
            tau_range: (0.005, 0.05),
            window: spec.default_window(),
            max_offset: 0.1,
            max_v: 0.5,
            fit_samples: 60,
            samples: 200,
            max_draws: 1_000_000,
            seed: 20240601,
        }
    }
}

/// Coefficients of `k ~ g0 + g1 r - g2 lbar^2 d^2 + g3 lambda^{(2-n)/2} - g4 (lbar/lambda)^2 - gv ||v||^2`.
#[derive(Debug, Clone, Serialize)]
pub struct GammaFit {
    pub dim: usize,
    pub gamma0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub gamma4: f64,
    pub gamma_v: f64,
    pub residual: f64,
    pub signal: f64,
    pub gamma1_closed_form: f64,
    /// `lambda1` above which `lambda1^{-(6-n)/2} < gamma4 / (gamma3 lbar^2)`.
    pub small_n_threshold: Option<f64>,
    pub samples: Vec<ScanSample>,
}

impl GammaFit {
    /// Fitted concentration profile `g3 lambda^{(2-n)/2} - g4 (lbar/lambda)^2`.
    pub fn scale_profile(&self, sharpness: f64, scale: f64) -> f64 {
        let n = self.dim as f64;
        self.gamma3 * scale.powf((2.0 - n) / 2.0) - self.gamma4 * (sharpness / scale).powi(2)
    }

    /// `q = -g1 r + g2 lbar^2 d^2 - scale_profile(lambda) + gv ||v||^2`, so that
    /// `k ~ g0 - q`. The concentration part vanishes as `lambda -> infinity`.
    pub fn quadratic_form(&self, sharpness: f64, p: &ScanDraw) -> f64 {
        -self.gamma1 * p.r + self.gamma2 * (sharpness * p.offset).powi(2) - self.scale_profile(sharpness, p.scale)
            + self.gamma_v * p.v_norm.powi(2)
    }

    pub fn predict(&self, sharpness: f64, p: &ScanDraw) -> f64 {
        self.gamma0 - self.quadratic_form(sharpness, p)
    }

    /// Ball `q < g0 - margin` and annulus `g0 + margin < q < g0 + 2 margin`
    /// with `margin` five times the fit residual.
    pub fn shells(&self) -> (ScanRegion, ScanRegion) {
        let margin = 5.0 * self.residual;
        (
            ScanRegion::Ball { delta: (self.gamma0 - margin).max(0.0).sqrt() },
            ScanRegion::Annulus { inner: (self.gamma0 + margin).sqrt(), outer: (self.gamma0 + 2.0 * margin).sqrt() },
        )
    }
}

/// Sampled parameters before the state is built.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanDraw {
    pub r: f64,
    pub offset: f64,
    pub direction: Vec<f64>,
    pub scale: f64,
    pub v_norm: f64,
    pub v_direction: Vec<f64>,
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 && norm <= 1.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, config: &ScanConfig, dim: usize, basis_len: usize) -> ScanDraw {
    let (t0, t1) = config.tau_range;
    let (l0, l1) = config.window;
    ScanDraw {
        r: -rng.random_range(t0..=t1),
        offset: config.max_offset * rng.random_range(0.0f64..=1.0).sqrt(),
        direction: unit_vector(rng, dim),
        scale: rng.random_range(l0..=l1),
        v_norm: config.max_v * rng.random_range(0.0f64..=1.0).sqrt(),
        v_direction: (0..basis_len).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

/// Build `u = alpha + alpha1 phi_{a,lambda} + v` with `v` L-orthogonal to
/// `1, phi, phi_2, phi_3` and solve the slice constraints; returns `k_u`.
fn evaluate_draw(kdp: &DoublePeak, basis: &ModeBasis, peak: usize, d: &ScanDraw) -> Result<ScanSample> {
    let grid = kdp.grid();
    let cn = grid.conformal_constant();
    let shift: Vec<f64> = d.direction.iter().map(|x| x * d.offset).collect();
    let center = kdp.spec.peaks[peak].shifted(&shift, grid.side());
    let params = BubbleParams::new(center, d.scale)?;
    let phi = bubble(grid, &params, kdp.spec.cutoff)?;
    let v = if d.v_norm > 0.0 {
        let (phi2, phi3) = bubble_derivatives(grid, &params, kdp.spec.cutoff)?;
        let mut fields = vec![&phi, &phi2];
        fields.extend(phi3.iter());
        let raw = basis.moments(&fields, &phi);
        // <w_j, e>_L = (c_n |k_j|^2 - 1) integral w_j e for a single mode w_j.
        let constraints = DMatrix::from_fn(raw.nrows(), raw.ncols(), |i, j| {
            raw[(i, j)] * (cn * basis.wavenumber_sq(j) - 1.0)
        });
        let xi = DVector::from_column_slice(&d.v_direction);
        let gram = &constraints * constraints.transpose();
        let correction = gram
            .clone()
            .lu()
            .solve(&(&constraints * &xi))
            .ok_or(LabError::Degenerate { det: gram.determinant() })?;
        let projected = &xi - constraints.transpose() * correction;
        let norm = basis.h1_sq(projected.as_slice()).sqrt();
        let coeffs: Vec<f64> = projected.iter().map(|c| c * d.v_norm / norm).collect();
        Some(basis.field(&coeffs))
    } else {
        None
    };
    let system = SliceSystem::new(&phi, v.as_ref(), -d.r);
    let roots = system.solve(leading_guess(kdp))?;
    let (solution, _) = finish_slice(&system, kdp, d.scale, roots)?;
    Ok(ScanSample { r: solution.r, offset: d.offset, scale: d.scale, v_norm: d.v_norm, k: solution.k_value })
}

/// Fit the expansion coefficients of `k` around a peak by least squares.
pub fn fit_gammas(kdp: &DoublePeak, peak: usize, config: &ScanConfig) -> Result<GammaFit> {
    let p = kdp.peak_index(peak)?;
    let grid = kdp.grid();
    let n = grid.dim() as f64;
    let basis = ModeBasis::new(grid);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let lbar = kdp.spec.sharpness[p];
    let mut samples = Vec::with_capacity(config.fit_samples);
    for _ in 0..config.fit_samples {
        let d = draw(&mut rng, config, grid.dim(), basis.len());
        samples.push(evaluate_draw(kdp, &basis, p, &d)?);
    }
    let rows = samples.len();
    let design = DMatrix::from_fn(rows, 6, |i, j| {
        let s = &samples[i];
        match j {
            0 => 1.0,
            1 => s.r,
            2 => -(lbar * s.offset).powi(2),
            3 => s.scale.powf((2.0 - n) / 2.0),
            4 => -(lbar / s.scale).powi(2),
            _ => -s.v_norm.powi(2),
        }
    });
    let target = DVector::from_iterator(rows, samples.iter().map(|s| s.k));
    let coef = design
        .clone()
        .svd(true, true)
        .solve(&target, 1e-14)
        .map_err(|e| LabError::Convergence(format!("regression: {e}")))?;
    let fitted = &design * &coef;
    let mean = fitted.mean();
    let residual = ((&target - &fitted).norm_squared() / rows as f64).sqrt();
    let signal = (fitted.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / rows as f64).sqrt();
    if residual > 0.2 * signal {
        return Err(LabError::Fit { residual, signal });
    }
    let small_n_threshold = (n < 6.0 && coef[3] > 0.0 && coef[4] > 0.0)
        .then(|| (coef[4] / (coef[3] * lbar * lbar)).powf(-2.0 / (6.0 - n)));
    let c1 = InteractionConstants::closed_form(grid.dim()).c1;
    Ok(GammaFit {
        dim: grid.dim(),
        gamma0: coef[0],
        gamma1: coef[1],
        gamma2: coef[2],
        gamma3: coef[3],
        gamma4: coef[4],
        gamma_v: coef[5],
        residual,
        signal,
        gamma1_closed_form: gamma1_closed_form(grid.dim(), grid.volume(), c1),
        small_n_threshold,
        samples,
    })
}

/// Shell of the quadratic form `q` to sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScanRegion {
    /// `0 < q < delta^2`.
    Ball { delta: f64 },
    /// `d1^2 < q < d2^2`.
    Annulus { inner: f64, outer: f64 },
}

impl ScanRegion {
    fn contains(&self, q: f64) -> bool {
        match *self {
            ScanRegion::Ball { delta } => q > 0.0 && q < delta * delta,
            ScanRegion::Annulus { inner, outer } => q > inner * inner && q < outer * outer,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            ScanRegion::Ball { delta } => delta > 0.0,
            ScanRegion::Annulus { inner, outer } => inner > 0.0 && outer > inner,
        };
        if ok {
            Ok(())
        } else {
            Err(LabError::Param(format!("degenerate shell {self:?}")))
        }
    }

    /// `k` must be positive in the ball and negative in the annulus.
    fn violated(&self, k: f64) -> bool {
        match self {
            ScanRegion::Ball { .. } => k <= 0.0,
            ScanRegion::Annulus { .. } => k >= 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanReport {
    pub peak_index: usize,
    pub region: ScanRegion,
    pub samples: Vec<ScanSample>,
    pub draws: usize,
    pub min_k: f64,
    pub max_k: f64,
    pub violations: usize,
}

/// Sample states whose quadratic form lies in the shell and record the sign of `k`.
pub fn region_scan(
    kdp: &DoublePeak,
    peak: usize,
    fit: &GammaFit,
    region: ScanRegion,
    config: &ScanConfig,
) -> Result<ScanReport> {
    region.validate()?;
    let p = kdp.peak_index(peak)?;
    let grid = kdp.grid();
    let basis = ModeBasis::new(grid);
    let lbar = kdp.spec.sharpness[p];
    let salt = match region {
        ScanRegion::Ball { .. } => 1,
        ScanRegion::Annulus { .. } => 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (salt << 32) ^ (peak as u64) << 40);
    let mut samples = Vec::with_capacity(config.samples);
    let mut draws = 0;
    while samples.len() < config.samples {
        if draws == config.max_draws {
            return Err(LabError::Param(format!(
                "shell {region:?} accepted {} of {draws} draws",
                samples.len()
            )));
        }
        draws += 1;
        let d = draw(&mut rng, config, grid.dim(), basis.len());
        if !region.contains(fit.quadratic_form(lbar, &d)) {
            continue;
        }
        samples.push(evaluate_draw(kdp, &basis, p, &d)?);
    }
    let min_k = samples.iter().map(|s| s.k).fold(f64::INFINITY, f64::min);
    let max_k = samples.iter().map(|s| s.k).fold(f64::NEG_INFINITY, f64::max);
    let violations = samples.iter().filter(|s| region.violated(s.k)).count();
    Ok(ScanReport { peak_index: peak, region, samples, draws, min_k, max_k, violations })
}

/// Which expansion to compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpansionKind {
    Norm,
    R,
    K,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpansionRow {
    pub kind: ExpansionKind,
    pub scale: f64,
    pub alpha: f64,
    pub alpha1: f64,
    pub exact: f64,
    pub expansion: f64,
    pub residual: f64,
    pub budget: f64,
    pub ratio: f64,
}

/// Radial integrals of a bubble centered at a peak, with the bubble's support
/// ball `B` of radius `2 eps` inside which everything but the constant lives.
struct RadialSlice<'a> {
    spec: &'a DoublePeakSpec,
    profile: Profile,
    peak: usize,
    crit: f64,
    ball_volume: f64,
    phi_mean: f64,
    phi_l: f64,
    peak_masses: [f64; 2],
}

fn radial_tol() -> Tolerance {
    Tolerance { abs: 1e-300, rel: 1e-12, max_intervals: 20000 }
}

impl<'a> RadialSlice<'a> {
    fn new(spec: &'a DoublePeakSpec, peak: usize, scale: f64) -> Self {
        let dim = spec.dim;
        let profile = Profile::new(dim, scale, spec.cutoff);
        let crit = Exponents::of(dim).crit;
        let support = spec.cutoff.support();
        let mut slice = RadialSlice {
            spec,
            profile,
            peak,
            crit,
            ball_volume: sphere_area(dim - 1) * support.powi(dim as i32) / dim as f64,
            phi_mean: 0.0,
            phi_l: 0.0,
            peak_masses: [0.0; 2],
        };
        let cn = crate::grid::conformal_constant(dim);
        slice.phi_mean = slice.integrate(|d| profile.phi(d));
        let grad_sq = slice.integrate(|d| {
            let dphi = spec.cutoff.derivative(d) * profile.theta(d)
                + spec.cutoff.value(d) * profile.theta_prime_over_d(d) * d;
            dphi * dphi
        });
        slice.phi_l = cn * grad_sq - slice.integrate(|d| profile.phi(d).powi(2));
        slice.peak_masses = [0, 1].map(|i| slice.integrate(|d| spec.peak_profile(i, d)));
        slice
    }

    fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        let support = self.spec.cutoff.support();
        let mut breaks = scale_breaks(1.0 / self.profile.scale, support);
        breaks.extend([self.spec.cutoff.radius, 1.0 / self.spec.sharpness[self.peak]]);
        radial(self.spec.dim, f, support, &breaks, radial_tol()).value
    }

    fn norm(&self, alpha: f64, alpha1: f64) -> f64 {
        let outside = self.spec.volume() - self.ball_volume;
        pow(alpha, self.crit) * outside + self.integrate(|d| pow(alpha + alpha1 * self.profile.phi(d), self.crit))
    }

    fn r(&self, alpha: f64, alpha1: f64) -> f64 {
        -alpha * alpha * self.spec.volume() - 2.0 * alpha * alpha1 * self.phi_mean + alpha1 * alpha1 * self.phi_l
    }

    fn k(&self, alpha: f64, alpha1: f64) -> f64 {
        let other = 1 - self.peak;
        -self.spec.offset * self.norm(alpha, alpha1)
            + self.integrate(|d| {
                self.spec.peak_profile(self.peak, d) * pow(alpha + alpha1 * self.profile.phi(d), self.crit)
            })
            + pow(alpha, self.crit) * self.peak_masses[other]
    }

    fn solve(&self, tau: f64, guess: (f64, f64)) -> Result<(f64, f64)> {
        let (mut alpha, mut alpha1) = guess;
        let crit = self.crit;
        let vol = self.spec.volume();
        for _ in 0..60 {
            let f = [self.norm(alpha, alpha1) - 1.0, self.r(alpha, alpha1) + tau];
            if f[0].abs().max(f[1].abs()) <= 1e-12 {
                return Ok((alpha, alpha1));
            }
            let outside = vol - self.ball_volume;
            let j00 = crit * pow(alpha, crit - 1.0) * outside
                + self.integrate(|d| crit * pow(alpha + alpha1 * self.profile.phi(d), crit - 1.0));
            let j01 = self.integrate(|d| {
                let p = self.profile.phi(d);
                crit * pow(alpha + alpha1 * p, crit - 1.0) * p
            });
            let j10 = -2.0 * alpha * vol - 2.0 * alpha1 * self.phi_mean;
            let j11 = -2.0 * alpha * self.phi_mean + 2.0 * alpha1 * self.phi_l;
            let det = j00 * j11 - j01 * j10;
            alpha -= (f[0] * j11 - f[1] * j01) / det;
            alpha1 -= (j00 * f[1] - j10 * f[0]) / det;
        }
        Err(LabError::Convergence("radial slice Newton did not converge".into()))
    }
}

/// Compare `||u||^{2*}`, `r` or `k` of `u = alpha + alpha1 phi_{a_peak, lambda1}`
/// with their expansions, using radial quadrature of the continuum profiles.
pub fn expansion_check(
    spec: &DoublePeakSpec,
    peak: usize,
    scale: f64,
    alpha: f64,
    alpha1: f64,
    which: ExpansionKind,
) -> Result<ExpansionRow> {
    spec.validate()?;
    if !(peak == 1 || peak == 2) {
        return Err(LabError::Param(format!("peak index {peak} must be 1 or 2")));
    }
    BubbleParams::new(spec.peaks[peak - 1].clone(), scale)?;
    let slice = RadialSlice::new(spec, peak - 1, scale);
    Ok(expansion_row(spec, &slice, alpha, alpha1, which))
}

fn expansion_row(spec: &DoublePeakSpec, slice: &RadialSlice, alpha: f64, alpha1: f64, which: ExpansionKind) -> ExpansionRow {
    let dim = spec.dim;
    let n = dim as f64;
    let crit = slice.crit;
    let consts = InteractionConstants::closed_form(dim);
    let scale = slice.profile.scale;
    let lbar = spec.sharpness[slice.peak];
    let vol = spec.volume();
    let tail = crit * consts.b0 * alpha * pow(alpha1, crit - 1.0) / scale.powf((n - 2.0) / 2.0);
    let (exact, expansion) = match which {
        ExpansionKind::Norm => (
            slice.norm(alpha, alpha1),
            vol * pow(alpha, crit)
                + consts.c1 * pow(alpha1, crit)
                + crit * pow(alpha, crit - 1.0) * alpha1 * slice.phi_mean
                + tail,
        ),
        ExpansionKind::R => (
            slice.r(alpha, alpha1),
            -vol * alpha * alpha + 4.0 * n * (n - 1.0) * consts.c1 * alpha1 * alpha1
                - 2.0 * alpha * alpha1 * slice.phi_mean,
        ),
        ExpansionKind::K => (
            slice.k(alpha, alpha1),
            -spec.offset + pow(alpha, crit) * (slice.peak_masses[0] + slice.peak_masses[1]) + consts.c1 * pow(alpha1, crit)
                - consts.c4 * pow(alpha1, crit) * (lbar / scale).powi(2)
                + tail,
        ),
    };
    let budget = scale.powf((2.0 - n) / 2.0) + (lbar / scale).powi(2);
    let residual = exact - expansion;
    ExpansionRow {
        kind: which,
        scale,
        alpha,
        alpha1,
        exact,
        expansion,
        residual,
        budget,
        ratio: residual.abs() / budget,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionLadder {
    pub tau: f64,
    pub rows: Vec<ExpansionRow>,
    /// Per kind: ratios strictly decreasing along the ladder.
    pub decreasing: Vec<(ExpansionKind, bool)>,
    /// Per kind: last ratio at most 0.1.
    pub terminal_small: Vec<(ExpansionKind, bool)>,
}

impl ExpansionLadder {
    pub fn all_pass(&self) -> bool {
        self.decreasing.iter().chain(&self.terminal_small).all(|(_, ok)| *ok)
    }
}

/// Expansion residuals along a concentration ladder with `v = 0`, `a1 = a_peak`,
/// on the slice `{||u|| = 1, r = -tau}`.
pub fn expansion_ladder(spec: &DoublePeakSpec, peak: usize, ladder: &[f64], tau: f64) -> Result<ExpansionLadder> {
    spec.validate()?;
    check_tau(tau)?;
    if !(peak == 1 || peak == 2) {
        return Err(LabError::Param(format!("peak index {peak} must be 1 or 2")));
    }
    let c1 = InteractionConstants::closed_form(spec.dim).c1;
    let mut guess = beta_constants(spec.dim, spec.volume(), c1);
    let kinds = [ExpansionKind::Norm, ExpansionKind::R, ExpansionKind::K];
    let mut rows = Vec::new();
    for &scale in ladder {
        BubbleParams::new(spec.peaks[peak - 1].clone(), scale)?;
        let slice = RadialSlice::new(spec, peak - 1, scale);
        let (alpha, alpha1) = slice.solve(tau, guess)?;
        guess = (alpha, alpha1);
        rows.extend(kinds.iter().map(|&kind| expansion_row(spec, &slice, alpha, alpha1, kind)));
    }
    let ratios = |kind| rows.iter().filter(|r| r.kind == kind).map(|r| r.ratio).collect::<Vec<_>>();
    let decreasing = kinds.iter().map(|&k| (k, ratios(k).windows(2).all(|w| w[1] < w[0]))).collect();
    let terminal_small = kinds.iter().map(|&k| (k, ratios(k).last().is_some_and(|&r| r <= 0.1))).collect();
    Ok(ExpansionLadder { tau, rows, decreasing, terminal_small })
}

/// `(alpha, alpha1)` on the slice `{||u|| = 1, r = -tau}` for the continuum bubble
/// at a peak, by radial quadrature. Valid beyond the grid's resolvable scale.
pub fn continuum_alphas(spec: &DoublePeakSpec, peak: usize, scale: f64, tau: f64) -> Result<(f64, f64)> {
    spec.validate()?;
    check_tau(tau)?;
    if !(peak == 1 || peak == 2) {
        return Err(LabError::Param(format!("peak index {peak} must be 1 or 2")));
    }
    BubbleParams::new(spec.peaks[peak - 1].clone(), scale)?;
    let c1 = InteractionConstants::closed_form(spec.dim).c1;
    let (alpha, alpha1) =
        RadialSlice::new(spec, peak - 1, scale).solve(tau, beta_constants(spec.dim, spec.volume(), c1))?;
    if alpha <= 0.0 || alpha1 <= 0.0 {
        return Err(LabError::Sign { alpha, alpha1 });
    }
    Ok((alpha, alpha1))
}

/// `-alpha_bar + alpha^{2*} sum_i integral phibar_i + c_1 / ((4n(n-1) c_1/|M|^{2/n})^{n/(n-2)} + c_1)`.
pub fn gamma0_term(spec: &DoublePeakSpec, alpha: f64) -> f64 {
    let c1 = InteractionConstants::closed_form(spec.dim).c1;
    let crit = Exponents::of(spec.dim).crit;
    let support = spec.cutoff.support();
    let masses: f64 = (0..2)
        .map(|i| {
            let breaks = [spec.cutoff.radius, 1.0 / spec.sharpness[i]];
            radial(spec.dim, |d| spec.peak_profile(i, d), support, &breaks, radial_tol()).value
        })
        .sum();
    -spec.offset + pow(alpha, crit) * masses + alpha_bar(spec.dim, spec.volume(), c1, 0.0)
}

/// Second-order term of `||u + v||^{2*}` against its separated-support prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormVariation {
    /// `||u+v||^{2*} - ||u||^{2*} - 2* integral u^{2*-1} v`.
    pub exact: f64,
    /// `2*(2*-1)/2 integral (alpha^{4/(n-2)} + alpha1^{4/(n-2)} phi^{4/(n-2)}) v^2`.
    pub predicted: f64,
    pub v_h1_sq: f64,
    pub pass: bool,
}

/// Grid check of the quadratic `v`-term of the norm expansion.
pub fn norm_variation(
    grid: &Arc<TorusGrid>,
    params: &BubbleParams,
    cutoff: Cutoff,
    alpha: f64,
    alpha1: f64,
    v: &ScalarField,
    slack: f64,
) -> Result<NormVariation> {
    let e = Exponents::of(grid.dim());
    let phi = bubble(grid, params, cutoff)?;
    let u = phi.map(|p| alpha + alpha1 * p);
    let uv = &u + v;
    if uv.min() <= 0.0 {
        return Err(LabError::Positivity { min_u: uv.min() });
    }
    let linear = u.map(|x| pow(x, e.crit - 1.0)).dot(v) * e.crit;
    let exact = uv.power_integral(e.crit) - u.power_integral(e.crit) - linear;
    let weight = phi.map(|p| pow(alpha, e.weight) + pow(alpha1 * p, e.weight));
    let predicted = 0.5 * e.crit * (e.crit - 1.0) * weight.zip_map(v, |w, x| w * x * x).integrate();
    let v_h1_sq = v.h1().powi(2);
    Ok(NormVariation { exact, predicted, v_h1_sq, pass: (exact - predicted).abs() <= 0.1 * v_h1_sq + slack })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn alpha_bar_three_dimensions() {
        let c1 = PI * PI / 4.0;
        let vol = (2.0 * PI).powi(3);
        let expected = c1 / (1.5f64.powi(3) + c1);
        assert!((alpha_bar(3, vol, c1, 0.0) - expected).abs() < 1e-14);
        assert!((alpha_bar(3, vol, c1, 0.01) - (expected - 0.01)).abs() < 1e-15);
    }

    #[test]
    fn kdp_peak_and_floor() {
        let spec = DoublePeakSpec::standard(3, 32);
        let kdp = build_kdp(&spec).unwrap();
        let grid = kdp.grid();
        let at_peak = grid.flat_index(&[8, 8, 8]);
        assert!((kdp.curvature.field().values()[at_peak] - (1.0 - spec.offset)).abs() < 1e-14);
        assert!((kdp.curvature.min() + spec.offset).abs() < 1e-15);
        assert!(kdp.nu1 > 0.0);
    }

    #[test]
    fn mode_basis_matches_direct_evaluation() {
        let grid = TorusGrid::new(3, 8, 2.0 * PI).unwrap();
        let basis = ModeBasis::new(&grid);
        let mut coeffs = vec![0.0; basis.len()];
        coeffs[9] = 1.0; // sin(x + z)
        let f = basis.field(&coeffs);
        let direct = ScalarField::from_fn(&grid, |x| (x[0] + x[2]).sin());
        assert!((&f - &direct).max_abs() < 1e-14);
        assert!((basis.h1_sq(&coeffs) - f.h1().powi(2)).abs() < 1e-10);
    }

    #[test]
    fn slice_constraints_hold() {
        let kdp = build_kdp(&DoublePeakSpec::standard(3, 64)).unwrap();
        let (solution, u) = slice_state(&kdp, 5.0, 0.01, 1).unwrap();
        assert!((u.lcrit() - 1.0).abs() < 1e-10);
        assert!((u.l_inner(&u) + 0.01).abs() < 1e-10);
        assert!(solution.alpha > 0.0 && solution.alpha1 > 0.0);
    }

    #[test]
    fn constant_mass_grows_with_tau() {
        let kdp = build_kdp(&DoublePeakSpec::standard(3, 64)).unwrap();
        let alphas: Vec<f64> = [0.01, 0.05, 0.1].iter().map(|&t| solve_alphas(&kdp, 5.0, t, 1).unwrap().alpha).collect();
        assert!(alphas.windows(2).all(|w| w[1] > w[0]), "{alphas:?}");
    }

    #[test]
    fn k_is_affine_in_offset() {
        let spec = DoublePeakSpec::standard(3, 64);
        let kdp = build_kdp(&spec).unwrap();
        let (solution, u) = slice_state(&kdp, 5.0, 0.01, 2).unwrap();
        let mut shifted = spec.clone();
        shifted.offset += 0.05;
        let kdp2 = build_kdp(&shifted).unwrap();
        let k2 = curvature_integral(&u, &kdp2.curvature);
        assert!((k2 - (solution.k_value - 0.05 * solution.norm.powf(6.0))).abs() < 1e-12);
    }

    #[test]
    fn leading_order_slice_coefficients() {
        let spec = DoublePeakSpec::standard(3, 64);
        let (beta, beta1) = beta_constants(3, spec.volume(), PI * PI / 4.0);
        let (_, alpha1) = continuum_alphas(&spec, 1, 200.0, 0.01).unwrap();
        assert!((alpha1 - beta1).abs() / beta1 <= 0.05, "{alpha1} vs {beta1}");
        assert!(beta > 0.0 && beta < beta1);
    }

    #[test]
    fn zero_thickness_shell_rejected() {
        assert!(ScanRegion::Annulus { inner: 0.3, outer: 0.3 }.validate().is_err());
        assert!(ScanRegion::Ball { delta: 0.0 }.validate().is_err());
    }

    #[test]
    fn peaks_must_be_separated() {
        let mut spec = DoublePeakSpec::standard(3, 32);
        spec.peaks[1] = Point::splat(3, spec.side / 4.0 + 1.0);
        assert!(matches!(build_kdp(&spec), Err(LabError::Spec(_))));
    }
}
