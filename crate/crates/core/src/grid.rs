//! Flat periodic grid, spectral calculus and scalar fields.
//!
//! Fields are stored row-major with the last axis fastest. All spectral
//! operators are diagonal in the discrete Fourier basis with wavenumbers
//! `2*pi*m/L`; the Nyquist mode keeps its squared wavenumber so that the
//! Laplacian, the gradient energy and the Sobolev norms agree exactly.

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{LabError, Result};

/// A point of the torus, one coordinate per axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Point(coords)
    }

    pub fn splat(dim: usize, value: f64) -> Self {
        Point(vec![value; dim])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Translate by `shift`, wrapping into `[0, side)`.
    pub fn shifted(&self, shift: &[f64], side: f64) -> Point {
        Point(
            self.0
                .iter()
                .zip(shift)
                .map(|(x, s)| (x + s).rem_euclid(side))
                .collect(),
        )
    }
}

/// Signed minimal-image offset from `from` to `to` along one periodic axis.
pub fn wrapped_offset(from: f64, to: f64, side: f64) -> f64 {
    let mut d = (to - from).rem_euclid(side);
    if d > 0.5 * side {
        d -= side;
    }
    d
}

/// Euclidean distance on the torus `[0, side)^n`, minimized over lattice translates.
pub fn torus_distance(a: &Point, b: &Point, side: f64) -> f64 {
    a.0.iter()
        .zip(&b.0)
        .map(|(x, y)| {
            let d = (x - y).abs() % side;
            d.min(side - d).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Uniform periodic grid on `[0, L)^n` with cached FFT plans.
pub struct TorusGrid {
    dim: usize,
    size: usize,
    side: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    wave: Vec<f64>,
}

impl fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusGrid")
            .field("n", &self.dim)
            .field("N", &self.size)
            .field("L_box", &self.side)
            .finish()
    }
}

impl PartialEq for TorusGrid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.size == other.size && self.side == other.side
    }
}

/// Every nonnegative integer is a sum of four squares; for three squares
/// exactly the integers not of the form `4^a (8b + 7)` are.
fn sum_of_squares(j: u64, dim: usize) -> bool {
    if dim >= 4 || j == 0 {
        return true;
    }
    let mut m = j;
    while m % 4 == 0 {
        m /= 4;
    }
    m % 8 != 7
}

impl TorusGrid {
    /// Build a grid with `size` points per axis. Rejects the configurations
    /// where the conformal Laplacian has a zero mode.
    pub fn new(dim: usize, size: usize, side: f64) -> Result<Arc<Self>> {
        if !(3..=5).contains(&dim) {
            return Err(LabError::Grid(format!("dimension {dim} outside 3..=5")));
        }
        if size < 4 || !size.is_power_of_two() {
            return Err(LabError::Grid(format!("N = {size} is not a power of two >= 4")));
        }
        if !(side.is_finite() && side > 0.0) {
            return Err(LabError::Grid(format!("L_box = {side} must be positive")));
        }
        let cn = conformal_constant(dim);
        let unit = cn * (2.0 * PI / side).powi(2);
        let x = 1.0 / unit;
        let j = x.round();
        if (x - j).abs() <= 1e-9 * x.max(1.0) && sum_of_squares(j as u64, dim) {
            return Err(LabError::Grid(format!(
                "conformal Laplacian is singular: c_n |2 pi m / L|^2 = 1 for |m|^2 = {j}"
            )));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(size);
        let inverse = planner.plan_fft_inverse(size);
        let wave = (0..size)
            .map(|i| {
                let m = if i <= size / 2 { i as f64 } else { i as f64 - size as f64 };
                2.0 * PI * m / side
            })
            .collect();
        Ok(Arc::new(TorusGrid { dim, size, side, forward, inverse, wave }))
    }

    /// The default resolution for a dimension on the `2*pi` box.
    pub fn standard(dim: usize) -> Result<Arc<Self>> {
        let size = if dim == 3 { 64 } else { 32 };
        Self::new(dim, size, 2.0 * PI)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn spacing(&self) -> f64 {
        self.side / self.size as f64
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim as i32)
    }

    pub fn len(&self) -> usize {
        self.size.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn conformal_constant(&self) -> f64 {
        conformal_constant(self.dim)
    }

    /// `2n/(n-2)`.
    pub fn critical_exponent(&self) -> f64 {
        critical_exponent(self.dim)
    }

    /// Largest concentration parameter whose core width `1/lambda` spans two cells.
    pub fn max_resolvable_scale(&self) -> f64 {
        1.0 / (2.0 * self.spacing())
    }

    pub fn distance(&self, a: &Point, b: &Point) -> f64 {
        torus_distance(a, b, self.side)
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        for a in (0..self.dim).rev() {
            idx[a] = flat % self.size;
            flat /= self.size;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.size + i % self.size)
    }

    pub fn point(&self, flat: usize) -> Point {
        let h = self.spacing();
        Point(self.multi_index(flat).into_iter().map(|i| i as f64 * h).collect())
    }

    /// Nearest grid point to `p`.
    pub fn snap(&self, p: &Point) -> Point {
        let h = self.spacing();
        Point(
            p.0.iter()
                .map(|x| ((x / h).round() * h).rem_euclid(self.side))
                .collect(),
        )
    }

    /// Visit every grid index in storage order.
    pub fn for_each_index(&self, mut f: impl FnMut(usize, &[usize])) {
        let mut idx = vec![0usize; self.dim];
        for flat in 0..self.len() {
            f(flat, &idx);
            for a in (0..self.dim).rev() {
                idx[a] += 1;
                if idx[a] < self.size {
                    break;
                }
                idx[a] = 0;
            }
        }
    }

    /// Sum over axes of per-axis tables, visited in storage order.
    fn for_each_separable(&self, table: &[Vec<f64>], mut f: impl FnMut(usize, f64)) {
        let n = self.dim;
        let mut idx = vec![0usize; n];
        let mut partial = vec![0.0; n + 1];
        for a in 0..n {
            partial[a + 1] = partial[a] + table[a][0];
        }
        for flat in 0..self.len() {
            f(flat, partial[n]);
            let mut a = n;
            while a > 0 {
                a -= 1;
                idx[a] += 1;
                if idx[a] < self.size {
                    break;
                }
                idx[a] = 0;
            }
            for b in a..n {
                partial[b + 1] = partial[b] + table[b][idx[b]];
            }
        }
    }

    /// `|k|^2` for every Fourier index in storage order.
    pub fn for_each_wavenumber_sq(&self, f: impl FnMut(usize, f64)) {
        let k2: Vec<f64> = self.wave.iter().map(|k| k * k).collect();
        let table = vec![k2; self.dim];
        self.for_each_separable(&table, f);
    }

    /// Squared torus distance from every grid point to `center`.
    pub fn squared_distances(&self, center: &Point) -> Vec<f64> {
        let h = self.spacing();
        let table: Vec<Vec<f64>> = center
            .coords()
            .iter()
            .map(|&c| {
                (0..self.size)
                    .map(|i| wrapped_offset(c, i as f64 * h, self.side).powi(2))
                    .collect()
            })
            .collect();
        let mut out = vec![0.0; self.len()];
        self.for_each_separable(&table, |i, d2| out[i] = d2);
        out
    }

    /// Signed minimal-image offsets `x_axis - center_axis` along one axis, per grid point.
    pub fn axis_offsets(&self, center: &Point, axis: usize) -> Vec<f64> {
        let h = self.spacing();
        let line: Vec<f64> = (0..self.size)
            .map(|i| wrapped_offset(center.coords()[axis], i as f64 * h, self.side))
            .collect();
        let mut table = vec![vec![0.0; self.size]; self.dim];
        table[axis] = line;
        let mut out = vec![0.0; self.len()];
        self.for_each_separable(&table, |i, v| out[i] = v);
        out
    }

    fn transform_axes(&self, data: &mut [Complex64], inverse: bool) {
        let plan = if inverse { &self.inverse } else { &self.forward };
        let n = self.size;
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        let mut block = Vec::new();
        for axis in 0..self.dim {
            let stride = n.pow((self.dim - 1 - axis) as u32);
            if stride == 1 {
                plan.process_with_scratch(data, &mut scratch);
                continue;
            }
            block.resize(n * stride, Complex64::new(0.0, 0.0));
            for chunk in data.chunks_mut(n * stride) {
                for i in 0..n {
                    for j in 0..stride {
                        block[j * n + i] = chunk[i * stride + j];
                    }
                }
                plan.process_with_scratch(&mut block, &mut scratch);
                for i in 0..n {
                    for j in 0..stride {
                        chunk[i * stride + j] = block[j * n + i];
                    }
                }
            }
        }
    }

    /// Unnormalized forward DFT of a real array.
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform_axes(&mut data, false);
        data
    }

    /// Inverse DFT (normalized) returning the real part.
    pub fn inverse_real(&self, mut data: Vec<Complex64>) -> Vec<f64> {
        self.transform_axes(&mut data, true);
        let scale = 1.0 / self.len() as f64;
        data.into_iter().map(|c| c.re * scale).collect()
    }

    /// Apply an isotropic Fourier multiplier `m(|k|^2)`.
    pub fn apply_multiplier(&self, values: &[f64], m: impl Fn(f64) -> f64) -> Vec<f64> {
        let mut spec = self.forward(values);
        self.for_each_wavenumber_sq(|i, k2| spec[i] *= m(k2));
        self.inverse_real(spec)
    }

    /// Spectral energy `sum_k w(|k|^2) |f_k|^2`, scaled so that `w = 1`
    /// reproduces the physical-space `integral of f^2`.
    pub fn weighted_energy(&self, values: &[f64], w: impl Fn(f64) -> f64) -> f64 {
        let spec = self.forward(values);
        let mut acc = 0.0;
        self.for_each_wavenumber_sq(|i, k2| acc += w(k2) * spec[i].norm_sqr());
        acc * self.cell_volume() / self.len() as f64
    }

    /// Spectral derivative along `axis` (Nyquist component dropped).
    pub fn derivative(&self, values: &[f64], axis: usize) -> Vec<f64> {
        let mut spec = self.forward(values);
        let nyq = self.size / 2;
        let stride = self.size.pow((self.dim - 1 - axis) as u32);
        for (i, c) in spec.iter_mut().enumerate() {
            let m = (i / stride) % self.size;
            let k = if m == nyq { 0.0 } else { self.wave[m] };
            *c *= Complex64::new(0.0, k);
        }
        self.inverse_real(spec)
    }

    /// Per-axis wavenumber of the Fourier index `i`.
    pub fn wavenumber(&self, i: usize) -> f64 {
        self.wave[i]
    }
}

pub fn conformal_constant(dim: usize) -> f64 {
    4.0 * (dim as f64 - 1.0) / (dim as f64 - 2.0)
}

pub fn critical_exponent(dim: usize) -> f64 {
    2.0 * dim as f64 / (dim as f64 - 2.0)
}

/// Sum with bounded rounding growth for large arrays.
pub(crate) fn chunked_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut total = 0.0;
    let mut chunk = 0.0;
    for (i, v) in values.enumerate() {
        chunk += v;
        if i % 1024 == 1023 {
            total += chunk;
            chunk = 0.0;
        }
    }
    total + chunk
}

/// A real function sampled on a [`TorusGrid`].
#[derive(Clone)]
pub struct ScalarField {
    grid: Arc<TorusGrid>,
    values: Vec<f64>,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("grid", &self.grid)
            .field("min", &self.min())
            .field("max", &self.max())
            .finish()
    }
}

/// The four norms used throughout the lab.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Norms {
    pub l2: f64,
    pub h1: f64,
    pub lcrit: f64,
    pub w_neg1: f64,
}

impl ScalarField {
    /// Wrap values, rejecting wrong lengths and non-finite entries.
    pub fn new(grid: Arc<TorusGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(LabError::Format(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(LabError::Format(format!("non-finite value at index {i}")));
        }
        Ok(ScalarField { grid, values })
    }

    pub(crate) fn from_raw(grid: Arc<TorusGrid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        ScalarField { grid, values }
    }

    pub fn constant(grid: &Arc<TorusGrid>, c: f64) -> Self {
        ScalarField { grid: grid.clone(), values: vec![c; grid.len()] }
    }

    /// Sample `f` at every grid point.
    pub fn from_fn(grid: &Arc<TorusGrid>, f: impl Fn(&[f64]) -> f64) -> Self {
        let h = grid.spacing();
        let mut values = vec![0.0; grid.len()];
        let mut x = vec![0.0; grid.dim()];
        grid.for_each_index(|i, idx| {
            for (xa, &ia) in x.iter_mut().zip(idx) {
                *xa = ia as f64 * h;
            }
            values[i] = f(&x);
        });
        ScalarField { grid: grid.clone(), values }
    }

    /// Seeded random combination of `modes` low Fourier modes with integer
    /// wave vectors in `[-max_mode, max_mode]^n`, scaled to unit sup norm.
    pub fn random_smooth(grid: &Arc<TorusGrid>, modes: usize, max_mode: i32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = 2.0 * PI / grid.side();
        let waves: Vec<(Vec<f64>, f64, f64)> = (0..modes)
            .map(|_| {
                let k: Vec<f64> =
                    (0..grid.dim()).map(|_| rng.random_range(-max_mode..=max_mode) as f64 * base).collect();
                let amp = rng.random_range(-1.0..1.0) / (1.0 + k.iter().map(|x| x * x).sum::<f64>());
                (k, amp, rng.random_range(0.0..2.0 * PI))
            })
            .collect();
        let f = Self::from_fn(grid, |x| {
            waves
                .iter()
                .map(|(k, a, ph)| a * (k.iter().zip(x).map(|(ki, xi)| ki * xi).sum::<f64>() + ph).cos())
                .sum()
        });
        let m = f.max_abs();
        if m > 0.0 {
            f.scale(1.0 / m)
        } else {
            f
        }
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(*self.grid, *other.grid, "fields live on different grids");
        Self::from_raw(
            self.grid.clone(),
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &ScalarField) -> Self {
        self.zip_map(other, |a, b| a + s * b)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Periodic trapezoidal rule `h^n * sum f`.
    pub fn integrate(&self) -> f64 {
        chunked_sum(self.values.iter().copied()) * self.grid.cell_volume()
    }

    /// `integral of f*g`.
    pub fn dot(&self, other: &ScalarField) -> f64 {
        chunked_sum(self.values.iter().zip(&other.values).map(|(a, b)| a * b))
            * self.grid.cell_volume()
    }

    /// `integral of |f|^p`.
    pub fn power_integral(&self, p: f64) -> f64 {
        chunked_sum(self.values.iter().map(|v| crate::conformal::pow(v.abs(), p))) * self.grid.cell_volume()
    }

    pub fn laplacian(&self) -> Self {
        Self::from_raw(self.grid.clone(), self.grid.apply_multiplier(&self.values, |k2| -k2))
    }

    /// `L f = -c_n Laplacian f - f`.
    pub fn conformal_laplacian(&self) -> Self {
        let cn = self.grid.conformal_constant();
        Self::from_raw(
            self.grid.clone(),
            self.grid.apply_multiplier(&self.values, |k2| cn * k2 - 1.0),
        )
    }

    /// `integral of |grad f|^2`.
    pub fn gradient_energy(&self) -> f64 {
        self.grid.weighted_energy(&self.values, |k2| k2)
    }

    pub fn derivative(&self, axis: usize) -> Self {
        Self::from_raw(self.grid.clone(), self.grid.derivative(&self.values, axis))
    }

    /// `<f, g>_L = integral of (c_n grad f . grad g - f g)`.
    pub fn l_inner(&self, other: &ScalarField) -> f64 {
        self.dot(&other.conformal_laplacian())
    }

    /// `(integral of |f|^{2n/(n-2)})^{(n-2)/(2n)}`.
    pub fn lcrit(&self) -> f64 {
        let p = self.grid.critical_exponent();
        self.power_integral(p).powf(1.0 / p)
    }

    pub fn l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn h1(&self) -> f64 {
        self.grid.weighted_energy(&self.values, |k2| 1.0 + k2).sqrt()
    }

    pub fn w_neg1(&self) -> f64 {
        self.grid.weighted_energy(&self.values, |k2| 1.0 / (1.0 + k2)).sqrt()
    }

    pub fn norms(&self) -> Norms {
        Norms { l2: self.l2(), h1: self.h1(), lcrit: self.lcrit(), w_neg1: self.w_neg1() }
    }

    /// Serialize as `n, N` (u64), `L_box` (f64), then the values, all little-endian.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&(self.grid.dim() as u64).to_le_bytes())?;
        w.write_all(&(self.grid.size() as u64).to_le_bytes())?;
        w.write_all(&self.grid.side().to_le_bytes())?;
        let mut buf = Vec::with_capacity(8 * self.values.len());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Read a field written by [`ScalarField::write_to`], building a matching grid.
    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let dim = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let size = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let side = f64::from_le_bytes(word);
        let grid = TorusGrid::new(dim, size, side)?;
        let mut bytes = vec![0u8; 8 * grid.len()];
        r.read_exact(&mut bytes)?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Self::new(grid, values)
    }
}

impl Add for &ScalarField {
    type Output = ScalarField;
    fn add(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &ScalarField {
    type Output = ScalarField;
    fn sub(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul for &ScalarField {
    type Output = ScalarField;
    fn mul(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a * b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid3(n: usize) -> Arc<TorusGrid> {
        TorusGrid::new(3, n, 2.0 * PI).unwrap()
    }

    #[test]
    fn constant_integrates_to_volume() {
        let g = grid3(16);
        let f = ScalarField::constant(&g, 1.0);
        assert!((f.integrate() - g.volume()).abs() < 1e-12 * g.volume());
    }

    #[test]
    fn zero_mean_mode_integrates_to_zero() {
        let g = grid3(16);
        let f = ScalarField::from_fn(&g, |x| (x[0]).sin());
        assert!(f.integrate().abs() < 1e-12);
    }

    #[test]
    fn cosine_is_laplacian_eigenfunction() {
        let g = TorusGrid::new(3, 16, 3.0).unwrap();
        let k = 2.0 * PI / 3.0;
        let f = ScalarField::from_fn(&g, |x| (k * x[0]).cos());
        let lap = f.laplacian();
        let err = lap.axpy(k * k, &f).max_abs();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn constant_has_zero_laplacian() {
        let g = grid3(8);
        assert!(ScalarField::constant(&g, 3.5).laplacian().max_abs() < 1e-12);
    }

    #[test]
    fn constant_norms() {
        let g = grid3(8);
        let c = 0.7;
        let nm = ScalarField::constant(&g, c).norms();
        let vol = g.volume();
        assert!((nm.l2 - c * vol.sqrt()).abs() < 1e-12);
        assert!((nm.h1 - c * vol.sqrt()).abs() < 1e-12);
        assert!((nm.w_neg1 - c * vol.sqrt()).abs() < 1e-12);
        assert!((nm.lcrit - c * vol.powf(1.0 / 6.0)).abs() < 1e-12);
    }

    #[test]
    fn single_mode_w_neg1() {
        let g = grid3(16);
        let nm = ScalarField::from_fn(&g, |x| x[0].cos()).norms();
        assert!((nm.w_neg1 - nm.l2 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn distance_examples() {
        let side = 2.0 * PI;
        let h = side / 64.0;
        let o = Point::splat(3, 0.0);
        assert_eq!(torus_distance(&o, &o, side), 0.0);
        let b = Point::new(vec![side - h, 0.0, 0.0]);
        assert!((torus_distance(&o, &b, side) - h).abs() < 1e-12);
        let c = Point::new(vec![side / 2.0, side / 2.0, 0.0]);
        assert!((torus_distance(&o, &c, side) - side / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn singular_conformal_laplacian_rejected() {
        // c_3 (2 pi / L)^2 = 1 at |m| = 1 when L = 2 pi sqrt(8).
        assert!(TorusGrid::new(3, 8, 2.0 * PI * 8f64.sqrt()).is_err());
        // |m|^2 = 7 is not a sum of three squares.
        assert!(TorusGrid::new(3, 8, 2.0 * PI * 56f64.sqrt()).is_ok());
        assert!(TorusGrid::new(4, 8, 2.0 * PI * (6.0f64 * 7.0).sqrt()).is_err());
        assert!(TorusGrid::new(3, 63, 2.0 * PI).is_err());
    }

    #[test]
    fn squared_distances_match_pointwise() {
        let g = grid3(8);
        let c = Point::new(vec![0.3, 5.9, 3.1]);
        let d2 = g.squared_distances(&c);
        for i in [0, 17, 200, 511] {
            let d = g.distance(&g.point(i), &c);
            assert!((d2[i] - d * d).abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip_binary() {
        let g = grid3(4);
        let f = ScalarField::from_fn(&g, |x| x[0] + 2.0 * x[1] - x[2]);
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 24 + 8 * 64);
        let back = ScalarField::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.values(), f.values());
    }
}
