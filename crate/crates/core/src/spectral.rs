//! Fourier grids, 3D FFTs and periodic fields.
//!
//! Convention: a periodic function is written f(x) = Σ_m c_m exp(i⟨ξ_m, x⟩) with
//! ξ_m = Σ m_j b_j a dual lattice vector, so c_0 is the cell mean.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::linalg::{Mat3, Vec3, C64};

/// Unnormalized 3D FFT on a row-major grid (last index fastest).
pub struct Fft3 {
    dims: [usize; 3],
    fwd: [Arc<dyn Fft<f64>>; 3],
    inv: [Arc<dyn Fft<f64>>; 3],
}

impl std::fmt::Debug for Fft3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft3").field("dims", &self.dims).finish()
    }
}

impl Fft3 {
    pub fn new(dims: [usize; 3]) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = dims.map(|n| planner.plan_fft_forward(n));
        let inv = dims.map(|n| planner.plan_fft_inverse(n));
        Self { dims, fwd, inv }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// X_k = Σ_n x_n exp(-2πi⟨k, n/N⟩).
    pub fn forward(&self, data: &mut [C64]) {
        self.run(data, &self.fwd);
    }

    /// x_n = Σ_k X_k exp(+2πi⟨k, n/N⟩) (no 1/N factor).
    pub fn inverse(&self, data: &mut [C64]) {
        self.run(data, &self.inv);
    }

    fn run(&self, data: &mut [C64], plans: &[Arc<dyn Fft<f64>>; 3]) {
        let [n1, n2, n3] = self.dims;
        assert_eq!(data.len(), n1 * n2 * n3);
        let n23 = n2 * n3;
        if n3 > 1 {
            let p = &plans[2];
            data.par_chunks_mut(n23).for_each(|slab| p.process(slab));
        }
        if n2 > 1 {
            let p = &plans[1];
            data.par_chunks_mut(n23).for_each(|slab| {
                let mut t = vec![C64::default(); n23];
                for i2 in 0..n2 {
                    for i3 in 0..n3 {
                        t[i3 * n2 + i2] = slab[i2 * n3 + i3];
                    }
                }
                p.process(&mut t);
                for i2 in 0..n2 {
                    for i3 in 0..n3 {
                        slab[i2 * n3 + i3] = t[i3 * n2 + i2];
                    }
                }
            });
        }
        if n1 > 1 {
            let p = &plans[0];
            let mut t = vec![C64::default(); data.len()];
            {
                let src: &[C64] = data;
                t.par_chunks_mut(n1).enumerate().for_each(|(j, line)| {
                    for (i1, v) in line.iter_mut().enumerate() {
                        *v = src[i1 * n23 + j];
                    }
                });
            }
            t.par_chunks_mut(n1 * 64.min(n23)).for_each(|c| p.process(c));
            data.par_chunks_mut(n23).enumerate().for_each(|(i1, slab)| {
                for (j, v) in slab.iter_mut().enumerate() {
                    *v = t[j * n1 + i1];
                }
            });
        }
    }
}

/// Integer frequencies retained on a grid of `n` points: 2|m| < n (the Nyquist mode is dropped).
pub fn retained_range(n: usize) -> std::ops::RangeInclusive<i64> {
    let k = ((n as i64) - 1) / 2;
    -k..=k
}

/// Quadrature grid used for products: ⌈3n/2⌉ points, or 1 on a degenerate axis.
pub fn padded_size(n: usize) -> usize {
    if n <= 1 {
        1
    } else {
        (3 * n).div_ceil(2)
    }
}

/// Signed frequency of grid index `i` on an axis with `n` points.
pub fn signed_index(i: usize, n: usize) -> i64 {
    if 2 * i <= n {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

fn flat(idx: [usize; 3], dims: [usize; 3]) -> usize {
    (idx[0] * dims[1] + idx[1]) * dims[2] + idx[2]
}

fn wrap(m: [i64; 3], dims: [usize; 3]) -> usize {
    flat(
        [0, 1, 2].map(|j| m[j].rem_euclid(dims[j] as i64) as usize),
        dims,
    )
}

/// Galerkin discretization: trigonometric polynomials with frequencies retained on `grid`,
/// products evaluated by quadrature on the 3/2-padded grid.
#[derive(Debug)]
pub struct Band {
    pub lattice: Lattice,
    pub grid: [usize; 3],
    pub padded: [usize; 3],
    pub modes: Vec<[i64; 3]>,
    pub xi: Vec<Vec3>,
    grid_index: Vec<usize>,
    pad_index: Vec<usize>,
    zero: usize,
    fft_pad: Fft3,
}

impl Band {
    pub fn new(lattice: Lattice, grid: [usize; 3]) -> Result<Self> {
        if grid.contains(&0) {
            return Err(Error::Invalid("grid dimensions must be positive".into()));
        }
        let padded = grid.map(padded_size);
        let mut modes = Vec::new();
        for i in retained_range(grid[0]) {
            for j in retained_range(grid[1]) {
                for k in retained_range(grid[2]) {
                    modes.push([i, j, k]);
                }
            }
        }
        let xi = modes.iter().map(|&m| lattice.dual_vector(m)).collect();
        let grid_index = modes.iter().map(|&m| wrap(m, grid)).collect();
        let pad_index = modes.iter().map(|&m| wrap(m, padded)).collect();
        let zero = modes.iter().position(|m| *m == [0, 0, 0]).unwrap();
        Ok(Self {
            lattice,
            grid,
            padded,
            modes,
            xi,
            grid_index,
            pad_index,
            zero,
            fft_pad: Fft3::new(padded),
        })
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn pad_len(&self) -> usize {
        self.padded.iter().product()
    }

    pub fn grid_len(&self) -> usize {
        self.grid.iter().product()
    }

    pub fn zero_index(&self) -> usize {
        self.zero
    }

    pub fn zeros(&self) -> Vec<C64> {
        vec![C64::default(); self.n_modes()]
    }

    /// Values of Σ c_m exp(i⟨ξ_m,x⟩) at the padded quadrature points.
    pub fn to_padded(&self, c: &[C64]) -> Vec<C64> {
        let mut v = vec![C64::default(); self.pad_len()];
        for (k, &p) in self.pad_index.iter().enumerate() {
            v[p] = c[k];
        }
        self.fft_pad.inverse(&mut v);
        v
    }

    /// Galerkin projection of padded-grid samples onto the retained modes (quadrature inner products).
    pub fn from_padded(&self, mut v: Vec<C64>) -> Vec<C64> {
        self.fft_pad.forward(&mut v);
        let s = 1.0 / self.pad_len() as f64;
        self.pad_index.iter().map(|&p| v[p] * s).collect()
    }

    /// All Fourier coefficients of padded-grid samples, in padded FFT layout.
    pub fn padded_spectrum(&self, mut v: Vec<C64>) -> Vec<C64> {
        self.fft_pad.forward(&mut v);
        let s = 1.0 / self.pad_len() as f64;
        v.iter_mut().for_each(|x| *x *= s);
        v
    }

    /// Dual vectors for every entry of the padded FFT layout.
    pub fn padded_xi(&self) -> Vec<Vec3> {
        let [m1, m2, m3] = self.padded;
        let mut out = Vec::with_capacity(self.pad_len());
        for i in 0..m1 {
            for j in 0..m2 {
                for k in 0..m3 {
                    out.push(self.lattice.dual_vector([
                        signed_index(i, m1),
                        signed_index(j, m2),
                        signed_index(k, m3),
                    ]));
                }
            }
        }
        out
    }

    pub fn padded_points(&self) -> Vec<Vec3> {
        grid_points(&self.lattice, self.padded)
    }

    pub fn grid_points(&self) -> Vec<Vec3> {
        grid_points(&self.lattice, self.grid)
    }

    pub fn to_field(&self, comps: &[Vec<C64>], real: bool) -> PeriodicField {
        let coeffs = comps
            .iter()
            .map(|c| {
                let mut g = vec![C64::default(); self.grid_len()];
                for (k, &p) in self.grid_index.iter().enumerate() {
                    g[p] = c[k];
                }
                g
            })
            .collect();
        PeriodicField {
            grid: self.grid,
            ncomp: comps.len(),
            coeffs,
            real,
        }
    }

    pub fn from_field(&self, f: &PeriodicField) -> Result<Vec<Vec<C64>>> {
        if f.grid != self.grid {
            return Err(Error::Invalid(format!(
                "field grid {:?} does not match band grid {:?}",
                f.grid, self.grid
            )));
        }
        Ok(f
            .coeffs
            .iter()
            .map(|c| self.grid_index.iter().map(|&p| c[p]).collect())
            .collect())
    }
}

pub fn grid_points(lattice: &Lattice, dims: [usize; 3]) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(dims.iter().product());
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                out.push(lattice.point([
                    i as f64 / dims[0] as f64,
                    j as f64 / dims[1] as f64,
                    k as f64 / dims[2] as f64,
                ]));
            }
        }
    }
    out
}

/// Evaluates a band-limited function on the grid with `dims` points per axis.
/// Frequencies are folded modulo `dims`, so point values are exact for any grid size.
pub fn eval_on_grid(modes: &[[i64; 3]], c: &[C64], dims: [usize; 3]) -> Vec<C64> {
    let mut v = vec![C64::default(); dims.iter().product()];
    for (m, x) in modes.iter().zip(c) {
        v[wrap(*m, dims)] += *x;
    }
    Fft3::new(dims).inverse(&mut v);
    v
}

/// Periodic field sampled on an N₁×N₂×N₃ grid, stored by its discrete Fourier coefficients
/// (FFT layout, normalized so that coefficient 0 is the grid mean).
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicField {
    pub grid: [usize; 3],
    pub ncomp: usize,
    pub coeffs: Vec<Vec<C64>>,
    pub real: bool,
}

impl PeriodicField {
    pub fn from_values(grid: [usize; 3], values: Vec<Vec<C64>>, real: bool) -> Self {
        let fft = Fft3::new(grid);
        let n = fft.len() as f64;
        let coeffs = values
            .into_iter()
            .map(|mut v| {
                assert_eq!(v.len(), fft.len());
                fft.forward(&mut v);
                v.iter_mut().for_each(|x| *x /= n);
                v
            })
            .collect::<Vec<_>>();
        Self {
            grid,
            ncomp: coeffs.len(),
            coeffs,
            real,
        }
    }

    pub fn from_real_values(grid: [usize; 3], values: Vec<Vec<f64>>) -> Self {
        Self::from_values(
            grid,
            values
                .into_iter()
                .map(|v| v.into_iter().map(|x| C64::new(x, 0.0)).collect())
                .collect(),
            true,
        )
    }

    /// Samples a function at the grid points of `lattice`.
    pub fn sample(lattice: &Lattice, grid: [usize; 3], ncomp: usize, f: impl Fn(&Vec3) -> Vec<f64> + Sync) -> Self {
        let pts = grid_points(lattice, grid);
        let vals: Vec<Vec<f64>> = pts.par_iter().map(|x| f(x)).collect();
        let comps = (0..ncomp)
            .map(|c| vals.iter().map(|v| v[c]).collect())
            .collect();
        Self::from_real_values(grid, comps)
    }

    pub fn to_values(&self) -> Vec<Vec<C64>> {
        let fft = Fft3::new(self.grid);
        self.coeffs
            .iter()
            .map(|c| {
                let mut v = c.clone();
                fft.inverse(&mut v);
                v
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.grid.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mean(&self) -> Vec<C64> {
        self.coeffs.iter().map(|c| c[0]).collect()
    }

    /// max_m |c(m) − conj c(−m)| relative to the largest coefficient.
    pub fn hermitian_defect(&self) -> f64 {
        let g = self.grid;
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for c in &self.coeffs {
            for i in 0..g[0] {
                for j in 0..g[1] {
                    for k in 0..g[2] {
                        let a = c[flat([i, j, k], g)];
                        let m = [
                            (g[0] - i) % g[0],
                            (g[1] - j) % g[1],
                            (g[2] - k) % g[2],
                        ];
                        let b = c[flat(m, g)];
                        worst = worst.max((a - b.conj()).norm());
                        scale = scale.max(a.norm());
                    }
                }
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    /// Relative error of the grid → Fourier → grid round trip against `values`.
    pub fn round_trip_error(&self, values: &[Vec<C64>]) -> f64 {
        let back = self.to_values();
        let mut num: f64 = 0.0;
        let mut den: f64 = 0.0;
        for (a, b) in back.iter().zip(values) {
            for (x, y) in a.iter().zip(b) {
                num = num.max((x - y).norm());
                den = den.max(y.norm());
            }
        }
        if den == 0.0 {
            num
        } else {
            num / den
        }
    }
}

/// Arithmetic mean f̄ and harmonic mean f̲ = (mean f⁻¹)⁻¹ of a scalar (1 component) or
/// matrix (9 components, row-major) field, by grid quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct Means {
    pub mean: DMatrix<f64>,
    pub harmonic: DMatrix<f64>,
}

pub fn mean_and_harmonic_mean(field: &PeriodicField) -> Result<Means> {
    let dim = match field.ncomp {
        1 => 1,
        9 => 3,
        n => {
            return Err(Error::Invalid(format!(
                "means need a scalar or 3x3 field, got {n} components"
            )))
        }
    };
    let values = field.to_values();
    let npts = field.len();
    let mut mean = DMatrix::<f64>::zeros(dim, dim);
    let mut inv_mean = DMatrix::<f64>::zeros(dim, dim);
    for p in 0..npts {
        let m = DMatrix::from_fn(dim, dim, |i, j| values[i * dim + j][p].re);
        let inv = m
            .clone()
            .try_inverse()
            .filter(|inv| inv.iter().all(|x| x.is_finite()))
            .ok_or(Error::NonInvertibleField { index: p })?;
        mean += m;
        inv_mean += inv;
    }
    mean /= npts as f64;
    inv_mean /= npts as f64;
    let harmonic = inv_mean
        .try_inverse()
        .ok_or(Error::NonInvertibleField { index: 0 })?;
    Ok(Means { mean, harmonic })
}

pub fn mat3_from_dmatrix(m: &DMatrix<f64>) -> Mat3 {
    Mat3::from_fn(|i, j| m[(i, j)])
}

/// Σ_m (1+|ξ_m|²)^s |c_m|² summed over components: the squared H^s norm normalized by |Ω|.
pub fn hs_norm_sq(xi: &[Vec3], comps: &[&[C64]], s: f64) -> f64 {
    let mut acc = 0.0;
    for c in comps {
        for (x, v) in xi.iter().zip(c.iter()) {
            acc += (1.0 + x.norm_squared()).powf(s) * v.norm_sqr();
        }
    }
    acc
}

pub fn hs_norm(xi: &[Vec3], comps: &[&[C64]], s: f64) -> f64 {
    hs_norm_sq(xi, comps, s).sqrt()
}

/// Mean of |v|² over quadrature samples: the squared L₂ norm normalized by |Ω|.
pub fn grid_l2_sq(comps: &[Vec<C64>]) -> f64 {
    comps
        .iter()
        .map(|c| c.iter().map(|x| x.norm_sqr()).sum::<f64>() / c.len() as f64)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn naive_dft(v: &[C64], dims: [usize; 3]) -> Vec<C64> {
        let mut out = vec![C64::default(); v.len()];
        for k1 in 0..dims[0] {
            for k2 in 0..dims[1] {
                for k3 in 0..dims[2] {
                    let mut acc = C64::default();
                    for n1 in 0..dims[0] {
                        for n2 in 0..dims[1] {
                            for n3 in 0..dims[2] {
                                let ph = -2.0
                                    * PI
                                    * ((k1 * n1) as f64 / dims[0] as f64
                                        + (k2 * n2) as f64 / dims[1] as f64
                                        + (k3 * n3) as f64 / dims[2] as f64);
                                acc += v[flat([n1, n2, n3], dims)] * C64::from_polar(1.0, ph);
                            }
                        }
                    }
                    out[flat([k1, k2, k3], dims)] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn fft_matches_naive_dft() {
        let dims = [4, 3, 5];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<C64> = (0..60)
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let mut w = v.clone();
        Fft3::new(dims).forward(&mut w);
        let o = naive_dft(&v, dims);
        for (a, b) in w.iter().zip(&o) {
            assert!((a - b).norm() < 1e-12);
        }
        Fft3::new(dims).inverse(&mut w);
        for (a, b) in w.iter().zip(&v) {
            assert!((a / 60.0 - b).norm() < 1e-14);
        }
    }

    #[test]
    fn field_round_trip_and_hermitian() {
        let l = Lattice::standard();
        let grid = [8, 6, 4];
        let f = PeriodicField::sample(&l, grid, 1, |x| vec![(x[0]).sin() + (2.0 * x[1]).cos() * x[2].cos()]);
        let vals = f.to_values();
        assert!(f.hermitian_defect() < 1e-12);
        assert!(f.round_trip_error(&vals) < 1e-12);
        assert!(f.mean()[0].norm() < 1e-14);
    }

    #[test]
    fn band_padding_is_exact_for_products() {
        let l = Lattice::standard();
        let band = Band::new(l, [8, 8, 1]).unwrap();
        assert_eq!(band.padded, [12, 12, 1]);
        let mut c = band.zeros();
        let idx = band.modes.iter().position(|m| *m == [3, -2, 0]).unwrap();
        c[idx] = C64::new(1.0, 0.0);
        let v = band.to_padded(&c);
        let sq: Vec<C64> = v.iter().map(|x| x.conj() * x).collect();
        let back = band.from_padded(sq);
        assert_relative_eq!(back[band.zero_index()].re, 1.0, epsilon = 1e-14);
        let back = band.from_padded(v);
        assert!((back[idx] - C64::new(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn folded_evaluation_matches_direct_sum() {
        let l = Lattice::standard();
        let band = Band::new(l.clone(), [9, 1, 1]).unwrap();
        let c: Vec<C64> = band
            .modes
            .iter()
            .map(|m| C64::new(1.0 / (1.0 + m[0].abs() as f64), 0.3 * m[0] as f64))
            .collect();
        let dims = [3, 1, 1];
        let v = eval_on_grid(&band.modes, &c, dims);
        for (p, x) in grid_points(&l, dims).iter().enumerate() {
            let direct: C64 = band
                .modes
                .iter()
                .zip(&c)
                .map(|(m, a)| a * C64::from_polar(1.0, l.dual_vector(*m).dot(x)))
                .sum();
            assert!((direct - v[p]).norm() < 1e-13);
        }
    }

    #[test]
    fn means_examples() {
        let l = Lattice::standard();
        let c = PeriodicField::sample(&l, [4, 4, 4], 1, |_| vec![2.5]);
        let m = mean_and_harmonic_mean(&c).unwrap();
        assert_relative_eq!(m.mean[(0, 0)], 2.5, epsilon = 1e-14);
        assert_relative_eq!(m.harmonic[(0, 0)], 2.5, epsilon = 1e-14);

        let nu = PeriodicField::sample(&l, [64, 1, 1], 1, |x| vec![2.0 + x[0].sin()]);
        let m = mean_and_harmonic_mean(&nu).unwrap();
        // oracle: ∫₀^{2π} dx/(2+sin x) by composite Simpson on a fine mesh
        let n = 20000;
        let h = 2.0 * PI / n as f64;
        let g = |x: f64| 1.0 / (2.0 + x.sin());
        let mut s = g(0.0) + g(2.0 * PI);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i as f64 * h);
        }
        let integral = s * h / 3.0;
        assert_relative_eq!(m.mean[(0, 0)], 2.0, epsilon = 1e-13);
        assert_relative_eq!(m.harmonic[(0, 0)], 2.0 * PI / integral, epsilon = 1e-12);
        assert_relative_eq!(m.harmonic[(0, 0)], 3f64.sqrt(), epsilon = 1e-12);

        let two = PeriodicField::sample(&l, [8, 1, 1], 1, |x| {
            vec![if l.frac_coords(x)[0] < 0.5 { 1.0 } else { 3.0 }]
        });
        let m = mean_and_harmonic_mean(&two).unwrap();
        assert_relative_eq!(m.mean[(0, 0)], 2.0, epsilon = 1e-14);
        assert_relative_eq!(m.harmonic[(0, 0)], 1.5, epsilon = 1e-14);
        assert!(m.harmonic[(0, 0)] <= m.mean[(0, 0)]);
    }

    #[test]
    fn singular_field_rejected() {
        let l = Lattice::standard();
        let f = PeriodicField::sample(&l, [4, 1, 1], 1, |x| vec![x[0].sin().max(0.0)]);
        assert!(matches!(
            mean_and_harmonic_mean(&f),
            Err(Error::NonInvertibleField { .. })
        ));
    }

    #[test]
    fn parseval() {
        let l = Lattice::standard();
        let band = Band::new(l, [6, 6, 6]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c: Vec<C64> = (0..band.n_modes())
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let v = band.to_padded(&c);
        let l2 = grid_l2_sq(&[v]);
        let h0 = hs_norm_sq(&band.xi, &[&c], 0.0);
        assert_relative_eq!(l2, h0, max_relative = 1e-12);
    }
}
