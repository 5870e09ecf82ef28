//! Energies `r`, `k`, `J`, the gradient of `J`, normalization onto the unit
//! critical sphere, and the Dirichlet eigenvalue probe.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::grid::{Point, ScalarField, TorusGrid};

/// Numerical margin for the strict inequalities defining X.
pub const X_MARGIN: f64 = 1e-10;

/// `x^e` for `x >= 0`, exact for integer exponents.
pub fn pow(x: f64, e: f64) -> f64 {
    if e.fract() == 0.0 {
        x.powi(e as i32)
    } else {
        x.abs().powf(e)
    }
}

/// The exponents `2n/(n-2)`, `(n+2)/(n-2)` and `4/(n-2)` of a dimension.
#[derive(Debug, Clone, Copy)]
pub struct Exponents {
    pub crit: f64,
    pub nonlinear: f64,
    pub weight: f64,
}

impl Exponents {
    pub fn of(dim: usize) -> Self {
        let n = dim as f64;
        Exponents { crit: 2.0 * n / (n - 2.0), nonlinear: (n + 2.0) / (n - 2.0), weight: 4.0 / (n - 2.0) }
    }
}

/// A set of grid cells.
#[derive(Clone, Debug)]
pub struct RegionMask {
    grid: Arc<TorusGrid>,
    cells: Vec<bool>,
}

impl RegionMask {
    pub fn from_fn(grid: &Arc<TorusGrid>, f: impl Fn(usize) -> bool) -> Self {
        RegionMask { grid: grid.clone(), cells: (0..grid.len()).map(f).collect() }
    }

    pub fn ball(grid: &Arc<TorusGrid>, center: &Point, radius: f64) -> Self {
        let d2 = grid.squared_distances(center);
        Self::from_fn(grid, |i| d2[i] <= radius * radius)
    }

    pub fn all_but(grid: &Arc<TorusGrid>, excluded: usize) -> Self {
        Self::from_fn(grid, |i| i != excluded)
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn contains(&self, i: usize) -> bool {
        self.cells[i]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.cells.len()).filter(|&i| self.cells[i]).collect()
    }

    pub fn complement(&self) -> Self {
        RegionMask { grid: self.grid.clone(), cells: self.cells.iter().map(|c| !c).collect() }
    }

    pub fn union(&self, other: &RegionMask) -> Self {
        RegionMask {
            grid: self.grid.clone(),
            cells: self.cells.iter().zip(&other.cells).map(|(a, b)| *a || *b).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &RegionMask) -> bool {
        self.cells.iter().zip(&other.cells).all(|(a, b)| !a || *b)
    }

    fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let idx = self.grid.multi_index(i);
        let n = self.grid.size();
        (0..self.grid.dim()).flat_map(move |a| {
            let idx = idx.clone();
            [1, n - 1].into_iter().map(move |step| {
                let mut j = idx.clone();
                j[a] = (j[a] + step) % n;
                self.grid.flat_index(&j)
            })
        })
    }

    /// Grow by `steps` face-neighbor layers.
    pub fn dilate(&self, steps: usize) -> Self {
        let mut cur = self.clone();
        for _ in 0..steps {
            let next: Vec<bool> = (0..cur.cells.len())
                .map(|i| cur.cells[i] || cur.neighbors(i).any(|j| cur.cells[j]))
                .collect();
            cur.cells = next;
        }
        cur
    }

    /// Cells of the mask with a face neighbor outside it.
    pub fn boundary(&self) -> Vec<usize> {
        self.indices()
            .into_iter()
            .filter(|&i| self.neighbors(i).any(|j| !self.cells[j]))
            .collect()
    }
}

/// A curvature candidate with cached sign information.
#[derive(Clone, Debug)]
pub struct CurvatureField {
    field: ScalarField,
    min: f64,
    max: f64,
}

impl CurvatureField {
    /// Requires `min K < 0`, which is necessary for solvability.
    pub fn new(field: ScalarField) -> Result<Self> {
        let (min, max) = (field.min(), field.max());
        if min >= 0.0 {
            return Err(LabError::Domain(format!("min K = {min} must be negative")));
        }
        Ok(CurvatureField { field, min, max })
    }

    pub fn constant(grid: &Arc<TorusGrid>, c: f64) -> Result<Self> {
        Self::new(ScalarField::constant(grid, c))
    }

    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        self.field.grid()
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn changes_sign(&self) -> bool {
        self.max > 0.0
    }

    pub fn nonnegative_region(&self) -> RegionMask {
        let v = self.field.values();
        RegionMask::from_fn(self.grid(), |i| v[i] >= 0.0)
    }
}

/// `k_u = integral K u^{2n/(n-2)}`.
pub fn curvature_integral(u: &ScalarField, k: &CurvatureField) -> f64 {
    let grid = u.grid();
    let e = Exponents::of(grid.dim()).crit;
    let kv = k.field().values();
    crate::grid::chunked_sum(u.values().iter().zip(kv).map(|(&x, &c)| c * pow(x, e))) * grid.cell_volume()
}

/// `r_u = c_n integral |grad u|^2 - integral u^2` and `k_u = integral K u^{2n/(n-2)}`.
pub fn compute_rk(u: &ScalarField, k: &CurvatureField) -> (f64, f64) {
    let grid = u.grid();
    let r = grid.conformal_constant() * u.gradient_energy() - u.dot(u);
    (r, curvature_integral(u, k))
}

fn check_x(r: f64, k: f64) -> Result<()> {
    if r < -X_MARGIN && k < -X_MARGIN {
        Ok(())
    } else {
        Err(LabError::Domain(format!("r = {r:e}, k = {k:e}")))
    }
}

/// `J = (-k)/(-r)^{n/(n-2)}` from precomputed `r`, `k`.
pub fn energy_from_rk(dim: usize, r: f64, k: f64) -> Result<f64> {
    check_x(r, k)?;
    let n = dim as f64;
    Ok(-k / (-r).powf(n / (n - 2.0)))
}

pub fn compute_j(u: &ScalarField, k: &CurvatureField) -> Result<f64> {
    let (r, kk) = compute_rk(u, k);
    energy_from_rk(u.grid().dim(), r, kk)
}

/// `(-k/-r) L u - K u^{(n+2)/(n-2)}`; vanishes exactly at critical points of `J`.
pub fn euler_lagrange_residual(u: &ScalarField, k: &CurvatureField, r: f64, kk: f64) -> ScalarField {
    let e = Exponents::of(u.grid().dim()).nonlinear;
    let ratio = kk / r;
    let lu = u.conformal_laplacian();
    let nl = u.zip_map(k.field(), |x, c| c * pow(x, e));
    lu.zip_map(&nl, |a, b| ratio * a - b)
}

/// The `L^2` gradient of `J`:
/// `2n/(n-2) (-r)^{-n/(n-2)} ((-k/-r) L u - K u^{(n+2)/(n-2)})`.
pub fn grad_j(u: &ScalarField, k: &CurvatureField) -> Result<ScalarField> {
    let (r, kk) = compute_rk(u, k);
    check_x(r, kk)?;
    let dim = u.grid().dim();
    let n = dim as f64;
    let pre = Exponents::of(dim).crit / (-r).powf(n / (n - 2.0));
    Ok(euler_lagrange_residual(u, k, r, kk).scale(pre))
}

/// `||L w - K w^{(n+2)/(n-2)}||_{W^{-1,2}}` for `w = s u` with `s^{4/(n-2)} = r/k`,
/// the multiple of a critical point of `J` that solves the prescription equation.
pub fn prescription_residual(u: &ScalarField, k: &CurvatureField) -> Result<f64> {
    let (r, kk) = compute_rk(u, k);
    check_x(r, kk)?;
    let e = Exponents::of(u.grid().dim());
    let w = u.scale((r / kk).powf(1.0 / (e.nonlinear - 1.0)));
    let nl = w.zip_map(k.field(), |x, c| c * pow(x, e.nonlinear));
    Ok(w.conformal_laplacian().axpy(-1.0, &nl).w_neg1())
}

/// Rescale a positive field to unit critical norm.
pub fn normalize(u: &ScalarField) -> Result<ScalarField> {
    let m = u.min();
    if m <= 0.0 {
        return Err(LabError::Domain(format!("min u = {m:e} is not positive")));
    }
    let norm = u.lcrit();
    if norm <= 0.0 || !norm.is_finite() {
        return Err(LabError::Domain(format!("critical norm {norm}")));
    }
    Ok(u.scale(1.0 / norm))
}

/// A positive conformal factor with cached diagnostics.
#[derive(Clone, Debug)]
pub struct ConformalState {
    u: ScalarField,
    r: f64,
    k: f64,
    j: Option<f64>,
    normalized: bool,
}

impl ConformalState {
    pub fn new(u: ScalarField, k: &CurvatureField) -> Result<Self> {
        let m = u.min();
        if m <= 0.0 {
            return Err(LabError::Domain(format!("min u = {m:e} is not positive")));
        }
        let (r, kk) = compute_rk(&u, k);
        let j = energy_from_rk(u.grid().dim(), r, kk).ok();
        let normalized = (u.lcrit() - 1.0).abs() <= 1e-10;
        Ok(ConformalState { u, r, k: kk, j, normalized })
    }

    pub fn u(&self) -> &ScalarField {
        &self.u
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// `J`, defined only inside X.
    pub fn j(&self) -> Option<f64> {
        self.j
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn in_x(&self) -> bool {
        self.j.is_some()
    }
}

/// The default shift `2 + c_n (2 pi / L)^2` making `L + sigma` positive definite.
pub fn default_shift(grid: &TorusGrid) -> f64 {
    2.0 + grid.conformal_constant() * (2.0 * std::f64::consts::PI / grid.side()).powi(2)
}

/// `L + sigma` restricted to a mask, applied through the separable one-dimensional
/// spectral second-difference kernel along each axis line.
struct MaskedOperator {
    lines: Vec<Vec<(usize, usize)>>,
    kernel: Vec<f64>,
    cn: f64,
    diag: f64,
    size: usize,
    len: usize,
}

impl MaskedOperator {
    fn new(mask: &RegionMask, sigma: f64) -> Self {
        let grid = mask.grid();
        let n = grid.size();
        let kernel = (0..n)
            .map(|p| {
                (0..n)
                    .map(|m| {
                        let k = grid.wavenumber(m);
                        k * k * (2.0 * std::f64::consts::PI * (m * p) as f64 / n as f64).cos()
                    })
                    .sum::<f64>()
                    / n as f64
            })
            .collect();
        let cells = mask.indices();
        let mut lines = Vec::new();
        for axis in 0..grid.dim() {
            let mut groups: HashMap<usize, Vec<(usize, usize)>> = HashMap::new();
            for (pos, &cell) in cells.iter().enumerate() {
                let mut idx = grid.multi_index(cell);
                let coord = idx[axis];
                idx[axis] = 0;
                groups.entry(grid.flat_index(&idx)).or_default().push((pos, coord));
            }
            let mut keys: Vec<usize> = groups.keys().copied().collect();
            keys.sort_unstable();
            lines.extend(keys.into_iter().map(|k| groups.remove(&k).expect("key present")));
        }
        MaskedOperator {
            lines,
            kernel,
            cn: grid.conformal_constant(),
            diag: sigma - 1.0,
            size: n,
            len: cells.len(),
        }
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi = self.diag * xi;
        }
        for line in &self.lines {
            for &(i, ci) in line {
                let mut acc = 0.0;
                for &(j, cj) in line {
                    acc += self.kernel[(cj + self.size - ci) % self.size] * x[j];
                }
                y[i] += self.cn * acc;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn conjugate_gradient(op: &MaskedOperator, b: &[f64], x: &mut [f64], tol: f64, max_iters: usize) -> Result<()> {
    let mut ax = vec![0.0; op.len];
    op.apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let target = tol * tol * dot(b, b);
    let mut ap = vec![0.0; op.len];
    for _ in 0..max_iters {
        if rr <= target {
            return Ok(());
        }
        op.apply(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for i in 0..op.len {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let next = dot(&r, &r);
        let beta = next / rr;
        rr = next;
        for i in 0..op.len {
            p[i] = r[i] + beta * p[i];
        }
    }
    if rr <= target {
        Ok(())
    } else {
        Err(LabError::Convergence(format!("inner CG residual {:e}", (rr / dot(b, b)).sqrt())))
    }
}

/// First Dirichlet eigenvalue of `L` on a mask by inverse power iteration on
/// `L + sigma`; returns the Rayleigh quotient at convergence.
pub fn dirichlet_nu1(mask: &RegionMask, max_iters: usize, tol: f64) -> Result<f64> {
    let m = mask.count();
    if m == 0 || m == mask.grid().len() {
        return Err(LabError::Mask("mask and its complement must be nonempty".into()));
    }
    let sigma = default_shift(mask.grid());
    let op = MaskedOperator::new(mask, sigma);
    let mut x = vec![1.0 / (m as f64).sqrt(); m];
    let mut ax = vec![0.0; m];
    let mut nu = f64::INFINITY;
    for _ in 0..max_iters {
        let mut y = x.clone();
        conjugate_gradient(&op, &x, &mut y, 1e-13, 20 * m + 1000)?;
        let norm = dot(&y, &y).sqrt();
        x = y.into_iter().map(|v| v / norm).collect();
        op.apply(&x, &mut ax);
        let next = dot(&x, &ax) - sigma;
        if (next - nu).abs() <= tol * next.abs().max(1.0) {
            return Ok(next);
        }
        nu = next;
    }
    Err(LabError::Convergence(format!("inverse power iteration stalled at nu1 = {nu}")))
}

/// Dense cross-check of [`dirichlet_nu1`]: assemble the masked matrix of `L`
/// column by column through full-grid FFTs and take its smallest eigenvalue.
pub fn dense_nu1(mask: &RegionMask) -> f64 {
    let grid = mask.grid();
    let cells = mask.indices();
    let m = cells.len();
    let mut a = DMatrix::zeros(m, m);
    let mut unit = vec![0.0; grid.len()];
    for (col, &c) in cells.iter().enumerate() {
        unit[c] = 1.0;
        let lf = ScalarField::from_raw(grid.clone(), unit.clone()).conformal_laplacian();
        for (row, &rc) in cells.iter().enumerate() {
            a[(row, col)] = lf.values()[rc];
        }
        unit[c] = 0.0;
    }
    let sym = (&a + a.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Quantities of the sufficient condition for an A-B inequality.
#[derive(Debug, Clone, Serialize)]
pub struct PeakRatioReport {
    pub nu1_d: f64,
    pub boundary_distance: f64,
    pub sup_k: f64,
    pub inf_neg_k_outside_omega: f64,
    /// `dist^{2(n-1)/(n-2)} (nu1/(nu1+1))^{n/(n-2)}`; absent when `nu1 <= 0`.
    pub bracket: Option<f64>,
    /// `sup K / inf_{M \ Omega} (-K)`.
    pub peak_ratio: f64,
    /// `(4n(n-1))^{n/(n-2)} (c_1/|M|)^{2/(n-2)}`.
    pub ratio_lower_bound: f64,
    pub nu1_positive: bool,
}

/// Evaluate the A-B sufficient-condition quantities for `{K >= 0} ⊂ Ω ⊊ D`.
pub fn peak_ratio_report(k: &CurvatureField, omega: &RegionMask, d: &RegionMask, c1: f64) -> Result<PeakRatioReport> {
    if !k.nonnegative_region().is_subset_of(omega) {
        return Err(LabError::Mask("{K >= 0} is not contained in Omega".into()));
    }
    if !omega.is_subset_of(d) || omega.count() == d.count() {
        return Err(LabError::Mask("Omega must be a strict subset of D".into()));
    }
    let grid = k.grid();
    let nu1_d = dirichlet_nu1(d, 500, 1e-12)?;
    let (bo, bd) = (omega.boundary(), d.boundary());
    let boundary_distance = bo
        .iter()
        .flat_map(|&i| bd.iter().map(move |&j| (i, j)))
        .map(|(i, j)| grid.distance(&grid.point(i), &grid.point(j)))
        .fold(f64::INFINITY, f64::min);
    let kv = k.field().values();
    let inf_neg = (0..grid.len())
        .filter(|&i| !omega.contains(i))
        .map(|i| -kv[i])
        .fold(f64::INFINITY, f64::min);
    let n = grid.dim() as f64;
    let bracket = (nu1_d > 0.0).then(|| {
        boundary_distance.powf(2.0 * (n - 1.0) / (n - 2.0)) * (nu1_d / (nu1_d + 1.0)).powf(n / (n - 2.0))
    });
    Ok(PeakRatioReport {
        nu1_d,
        boundary_distance,
        sup_k: k.max(),
        inf_neg_k_outside_omega: inf_neg,
        bracket,
        peak_ratio: k.max() / inf_neg,
        ratio_lower_bound: (4.0 * n * (n - 1.0)).powf(n / (n - 2.0))
            * (c1 / grid.volume()).powf(2.0 / (n - 2.0)),
        nu1_positive: nu1_d > 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn normalized_constant_energies() {
        let g = TorusGrid::new(3, 8, 2.0 * PI).unwrap();
        let k = CurvatureField::constant(&g, -1.0).unwrap();
        let u = normalize(&ScalarField::constant(&g, 5.0)).unwrap();
        let c = g.volume().powf(-1.0 / 6.0);
        assert!(u.values().iter().all(|v| (v - c).abs() < 1e-14));
        let (r, kk) = compute_rk(&u, &k);
        assert!((r + 4.0 * PI * PI).abs() < 1e-10);
        assert!((kk + 1.0).abs() < 1e-12);
        let j = compute_j(&u, &k).unwrap();
        assert!((j - (2.0 * PI).powi(-6)).abs() < 1e-17);
    }

    #[test]
    fn constant_solves_after_rescaling() {
        let g = TorusGrid::new(3, 8, 2.0 * PI).unwrap();
        let k = CurvatureField::constant(&g, -2.0).unwrap();
        let u = ScalarField::constant(&g, 0.3);
        assert!(prescription_residual(&u, &k).unwrap() < 1e-12);
        let bumpy = ScalarField::from_fn(&g, |x| 1.0 + 0.1 * x[2].sin());
        assert!(prescription_residual(&bumpy, &k).unwrap() > 1e-3);
    }

    #[test]
    fn positive_k_is_outside_x() {
        let g = TorusGrid::new(3, 8, 2.0 * PI).unwrap();
        let k = CurvatureField::new(ScalarField::from_fn(&g, |x| x[0].cos())).unwrap();
        let u = ScalarField::from_fn(&g, |x| 1.0 + 0.9 * x[0].cos());
        assert!(compute_j(&u, &k).is_err());
    }

    #[test]
    fn mask_boundary_and_dilation() {
        let g = TorusGrid::new(3, 8, 8.0).unwrap();
        let one = RegionMask::from_fn(&g, |i| i == 0);
        assert_eq!(one.dilate(1).count(), 7);
        assert_eq!(one.boundary(), vec![0]);
        assert!(one.is_subset_of(&one.dilate(1)));
    }

    #[test]
    fn ball_eigenvalue_near_continuum() {
        // Continuum value c_n (pi/R)^2 - 1 for the ball of radius R = 0.5.
        let g = TorusGrid::new(3, 64, 2.0 * PI).unwrap();
        let ball = RegionMask::ball(&g, &Point::splat(3, PI), 0.5);
        let nu = dirichlet_nu1(&ball, 500, 1e-10).unwrap();
        let exact = 8.0 * (2.0 * PI).powi(2) - 1.0;
        assert!((nu - exact).abs() < 0.05 * exact, "{nu} vs {exact}");
    }

    #[test]
    fn iterative_matches_dense_on_coarse_grid() {
        let g = TorusGrid::new(3, 16, 2.0 * PI).unwrap();
        let mask = RegionMask::ball(&g, &Point::splat(3, 2.0), 1.2);
        let nu = dirichlet_nu1(&mask, 1000, 1e-12).unwrap();
        let dense = dense_nu1(&mask);
        assert!((nu - dense).abs() <= 1e-6 * dense.abs(), "{nu} vs {dense}");
    }
}
