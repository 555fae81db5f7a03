//! Fourier–Galerkin operators and the preconditioned conjugate gradient kernel shared by all
//! periodic elliptic problems.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cross_matrix, Mat3, Vec3, C64, I};
use crate::spectral::Band;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_tol() -> f64 {
    1e-10
}

fn default_max_iter() -> usize {
    5000
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            max_iter: default_max_iter(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    /// −div(A∇u) = f
    ScalarDiffusion,
    /// curl(A curl u) = f, div u = 0
    CurlCurl,
}

/// A 3×3 matrix coefficient: constant, or sampled at the padded quadrature points of a band.
#[derive(Debug, Clone)]
pub enum MatCoef {
    Constant(Mat3),
    Field(Arc<Vec<Mat3>>),
}

impl MatCoef {
    pub fn mean(&self) -> Mat3 {
        match self {
            MatCoef::Constant(m) => *m,
            MatCoef::Field(v) => v.iter().sum::<Mat3>() / v.len() as f64,
        }
    }

    pub fn inverse(&self) -> Result<MatCoef> {
        let inv = |m: &Mat3| {
            m.try_inverse()
                .map(|i| (i + i.transpose()) * 0.5)
                .ok_or_else(|| Error::Invalid("singular coefficient".into()))
        };
        Ok(match self {
            MatCoef::Constant(m) => MatCoef::Constant(inv(m)?),
            MatCoef::Field(v) => MatCoef::Field(Arc::new(
                v.iter().map(inv).collect::<Result<Vec<_>>>()?,
            )),
        })
    }
}

pub type VField = [Vec<C64>; 3];

pub fn zeros3(n: usize) -> VField {
    [vec![C64::default(); n], vec![C64::default(); n], vec![C64::default(); n]]
}

/// iξ u
pub fn grad(band: &Band, u: &[C64]) -> VField {
    [0, 1, 2].map(|d| band.xi.iter().zip(u).map(|(x, v)| I * x[d] * v).collect())
}

/// iξ·F
pub fn div(band: &Band, f: &VField) -> Vec<C64> {
    (0..band.n_modes())
        .map(|k| {
            let x = &band.xi[k];
            I * (x[0] * f[0][k] + x[1] * f[1][k] + x[2] * f[2][k])
        })
        .collect()
}

/// iξ×F
pub fn curl(band: &Band, f: &VField) -> VField {
    let mut out = zeros3(band.n_modes());
    for k in 0..band.n_modes() {
        let x = &band.xi[k];
        let v = [f[0][k], f[1][k], f[2][k]];
        out[0][k] = I * (x[1] * v[2] - x[2] * v[1]);
        out[1][k] = I * (x[2] * v[0] - x[0] * v[2]);
        out[2][k] = I * (x[0] * v[1] - x[1] * v[0]);
    }
    out
}

/// Removes the component along ξ mode by mode (Leray projection).
pub fn leray(band: &Band, f: &mut VField) {
    for k in 0..band.n_modes() {
        let x = &band.xi[k];
        let n2 = x.norm_squared();
        if n2 == 0.0 {
            continue;
        }
        let s = (x[0] * f[0][k] + x[1] * f[1][k] + x[2] * f[2][k]) / n2;
        for d in 0..3 {
            f[d][k] -= s * x[d];
        }
    }
}

/// (Σ_m |ξ·F(m)|²/|ξ|²)^{1/2} / ‖F‖.
pub fn relative_divergence(band: &Band, f: &VField) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..band.n_modes() {
        let x = &band.xi[k];
        let v = [f[0][k], f[1][k], f[2][k]];
        den += v.iter().map(|c| c.norm_sqr()).sum::<f64>();
        let n2 = x.norm_squared();
        if n2 > 0.0 {
            num += (x[0] * v[0] + x[1] * v[1] + x[2] * v[2]).norm_sqr() / n2;
        }
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

/// Galerkin projection of A·F onto the band.
pub fn apply_mat(band: &Band, coef: &MatCoef, f: &VField) -> VField {
    match coef {
        MatCoef::Constant(a) => {
            let mut out = zeros3(band.n_modes());
            for k in 0..band.n_modes() {
                for i in 0..3 {
                    out[i][k] = a[(i, 0)] * f[0][k] + a[(i, 1)] * f[1][k] + a[(i, 2)] * f[2][k];
                }
            }
            out
        }
        MatCoef::Field(samples) => {
            let vals: Vec<Vec<C64>> = f.par_iter().map(|c| band.to_padded(c)).collect();
            let prod = mat_times_values(samples, &vals);
            let out: Vec<Vec<C64>> = prod.into_par_iter().map(|v| band.from_padded(v)).collect();
            let mut it = out.into_iter();
            [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()]
        }
    }
}

/// Pointwise A(x)·v(x) on sample values.
pub fn mat_times_values(samples: &[Mat3], vals: &[Vec<C64>]) -> Vec<Vec<C64>> {
    let n = samples.len();
    let mut out = vec![vec![C64::default(); n]; 3];
    let (o0, rest) = out.split_at_mut(1);
    let (o1, o2) = rest.split_at_mut(1);
    o0[0]
        .par_iter_mut()
        .zip(o1[0].par_iter_mut())
        .zip(o2[0].par_iter_mut())
        .enumerate()
        .for_each(|(p, ((a, b), c))| {
            let m = &samples[p];
            let v = [vals[0][p], vals[1][p], vals[2][p]];
            *a = m[(0, 0)] * v[0] + m[(0, 1)] * v[1] + m[(0, 2)] * v[2];
            *b = m[(1, 0)] * v[0] + m[(1, 1)] * v[1] + m[(1, 2)] * v[2];
            *c = m[(2, 0)] * v[0] + m[(2, 1)] * v[1] + m[(2, 2)] * v[2];
        });
    out
}

/// u ↦ −div(A∇u)
pub fn diffusion_apply(band: &Band, coef: &MatCoef, u: &[C64]) -> Vec<C64> {
    let flux = apply_mat(band, coef, &grad(band, u));
    div(band, &flux).into_iter().map(|v| -v).collect()
}

/// u ↦ curl(A curl u)
pub fn curlcurl_apply(band: &Band, coef: &MatCoef, u: &VField) -> VField {
    curl(band, &apply_mat(band, coef, &curl(band, u)))
}

/// Fixed-size chunks keep the summation order, and hence the result, independent of scheduling.
const REDUCE_CHUNK: usize = 8192;

fn dot(a: &[C64], b: &[C64]) -> C64 {
    let parts: Vec<C64> = a
        .par_chunks(REDUCE_CHUNK)
        .zip(b.par_chunks(REDUCE_CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p.conj() * q).sum())
        .collect();
    parts.iter().sum()
}

fn norm(a: &[C64]) -> f64 {
    let parts: Vec<f64> = a
        .par_chunks(REDUCE_CHUNK)
        .map(|x| x.iter().map(|p| p.norm_sqr()).sum())
        .collect();
    parts.iter().sum::<f64>().sqrt()
}

/// Preconditioned CG for a Hermitian positive semidefinite operator; `b` must lie in its range.
pub fn pcg(
    name: &'static str,
    apply: impl Fn(&[C64]) -> Vec<C64>,
    precond: impl Fn(&[C64]) -> Vec<C64>,
    b: &[C64],
    opts: &SolverOptions,
) -> Result<(Vec<C64>, SolveStats)> {
    let bn = norm(b);
    let mut x = vec![C64::default(); b.len()];
    if bn == 0.0 {
        return Ok((x, SolveStats::default()));
    }
    let mut r = b.to_vec();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z).re;
    let mut res = 1.0;
    for it in 1..=opts.max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap).re;
        if !(pap > 0.0) {
            return Err(Error::NoConvergence {
                solver: name,
                iterations: it,
                residual: res,
            });
        }
        let alpha = rz / pap;
        x.par_iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.par_iter_mut().zip(&ap).for_each(|(ri, ai)| *ri -= alpha * ai);
        res = norm(&r) / bn;
        if res <= opts.tol {
            let true_res = {
                let ax = apply(&x);
                norm(&b.iter().zip(&ax).map(|(u, v)| u - v).collect::<Vec<_>>()) / bn
            };
            return Ok((
                x,
                SolveStats {
                    iterations: it,
                    residual: true_res,
                },
            ));
        }
        z = precond(&r);
        let rz_new = dot(&r, &z).re;
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    Err(Error::NoConvergence {
        solver: name,
        iterations: opts.max_iter,
        residual: res,
    })
}

fn flatten(f: &VField) -> Vec<C64> {
    f.iter().flatten().copied().collect()
}

fn unflatten(v: &[C64]) -> VField {
    let n = v.len() / 3;
    [v[..n].to_vec(), v[n..2 * n].to_vec(), v[2 * n..].to_vec()]
}

fn check_mean(band: &Band, rhs: &[Vec<C64>]) -> Result<()> {
    let z = band.zero_index();
    let total: f64 = rhs.iter().map(|c| norm(c)).sum();
    let mean: f64 = rhs.iter().map(|c| c[z].norm()).sum();
    if mean > 1e-9 * total.max(f64::MIN_POSITIVE) && mean > 1e-14 {
        return Err(Error::NonZeroMean(mean));
    }
    Ok(())
}

/// Zero-mean periodic solution of −div(A∇u) = f (one component) or curl(A curl u) = f,
/// div u = 0 (three components). The k = 0 coefficient of the solution is fixed to zero.
pub fn periodic_elliptic_solve(
    band: &Band,
    coef: &MatCoef,
    rhs: &[Vec<C64>],
    kind: ProblemKind,
    opts: &SolverOptions,
) -> Result<(Vec<Vec<C64>>, SolveStats)> {
    check_mean(band, rhs)?;
    let z = band.zero_index();
    let abar = coef.mean();
    match kind {
        ProblemKind::ScalarDiffusion => {
            if rhs.len() != 1 {
                return Err(Error::Invalid("scalar diffusion needs one component".into()));
            }
            let mut b = rhs[0].clone();
            b[z] = C64::default();
            let sym: Vec<f64> = band
                .xi
                .iter()
                .map(|x| {
                    let s = (x.transpose() * abar * x)[0];
                    if s > 0.0 {
                        1.0 / s
                    } else {
                        0.0
                    }
                })
                .collect();
            let (mut u, st) = pcg(
                "scalar diffusion PCG",
                |u| {
                    let mut y = diffusion_apply(band, coef, u);
                    y[z] = C64::default();
                    y
                },
                |r| r.iter().zip(&sym).map(|(a, s)| a * *s).collect(),
                &b,
                opts,
            )?;
            u[z] = C64::default();
            Ok((vec![u], st))
        }
        ProblemKind::CurlCurl => {
            if rhs.len() != 3 {
                return Err(Error::Invalid("curl-curl needs three components".into()));
            }
            let mut f: VField = [rhs[0].clone(), rhs[1].clone(), rhs[2].clone()];
            let dv = relative_divergence(band, &f);
            if dv > 1e-8 {
                return Err(Error::NotDivergenceFree(dv));
            }
            for c in f.iter_mut() {
                c[z] = C64::default();
            }
            leray(band, &mut f);
            let s = abar.trace() / 3.0;
            let pre: Vec<Mat3> = band
                .xi
                .iter()
                .map(|x| {
                    if x.norm_squared() == 0.0 {
                        return Mat3::zeros();
                    }
                    let r = cross_matrix(x);
                    let k = r.transpose() * abar * r + x * x.transpose() * s;
                    let inv = k.try_inverse().unwrap_or_else(Mat3::zeros);
                    let p = Mat3::identity() - x * x.transpose() / x.norm_squared();
                    p * inv * p
                })
                .collect();
            let n = band.n_modes();
            let (u, st) = pcg(
                "curl-curl PCG",
                |u| {
                    let mut y = curlcurl_apply(band, coef, &unflatten(u));
                    leray(band, &mut y);
                    flatten(&y)
                },
                |r| {
                    let mut out = vec![C64::default(); 3 * n];
                    for k in 0..n {
                        let m = &pre[k];
                        for i in 0..3 {
                            out[i * n + k] =
                                m[(i, 0)] * r[k] + m[(i, 1)] * r[n + k] + m[(i, 2)] * r[2 * n + k];
                        }
                    }
                    out
                },
                &flatten(&f),
                opts,
            )?;
            let mut u = unflatten(&u);
            leray(band, &mut u);
            for c in u.iter_mut() {
                c[z] = C64::default();
            }
            Ok((u.to_vec(), st))
        }
    }
}

/// Mode index of the dual vector ξ closest to `target` among retained modes, if present.
pub fn find_mode(band: &Band, m: [i64; 3]) -> Option<usize> {
    band.modes.iter().position(|x| *x == m)
}

/// A single plane wave v·exp(i⟨ξ_m,x⟩) as band coefficients.
pub fn plane_wave(band: &Band, m: [i64; 3], v: C64) -> Vec<C64> {
    let mut c = band.zeros();
    if let Some(k) = find_mode(band, m) {
        c[k] = v;
    }
    c
}

pub fn vec3_of(f: &VField, k: usize) -> [C64; 3] {
    [f[0][k], f[1][k], f[2][k]]
}

pub fn real_vec(v: &Vec3) -> [C64; 3] {
    [C64::new(v[0], 0.0), C64::new(v[1], 0.0), C64::new(v[2], 0.0)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Lattice;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use std::f64::consts::PI;

    fn layered_coef(band: &Band, a: impl Fn(f64) -> f64) -> MatCoef {
        MatCoef::Field(Arc::new(
            band.padded_points()
                .iter()
                .map(|x| Mat3::identity() * a(x[0]))
                .collect(),
        ))
    }

    #[test]
    fn constant_coefficient_single_mode() {
        let band = Band::new(Lattice::standard(), [8, 8, 8]).unwrap();
        let a = Mat3::new(2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 1.5);
        let m = [1, -2, 3];
        let rhs = plane_wave(&band, m, C64::new(1.0, 0.5));
        let (u, st) = periodic_elliptic_solve(
            &band,
            &MatCoef::Field(Arc::new(vec![a; band.pad_len()])),
            &[rhs],
            ProblemKind::ScalarDiffusion,
            &SolverOptions::default(),
        )
        .unwrap();
        let xi = Lattice::standard().dual_vector(m);
        let expect = C64::new(1.0, 0.5) / (xi.transpose() * a * xi)[0];
        let k = find_mode(&band, m).unwrap();
        assert!((u[0][k] - expect).norm() < 1e-12);
        assert!(st.residual <= 1e-10);
        let others: f64 = u[0].iter().enumerate().filter(|(j, _)| *j != k).map(|(_, v)| v.norm()).sum();
        assert!(others < 1e-12);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let band = Band::new(Lattice::standard(), [6, 6, 6]).unwrap();
        let (u, st) = periodic_elliptic_solve(
            &band,
            &MatCoef::Constant(Mat3::identity()),
            &[band.zeros()],
            ProblemKind::ScalarDiffusion,
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(u[0].iter().all(|v| *v == C64::default()));
        assert_eq!(st.iterations, 0);
    }

    #[test]
    fn nonzero_mean_rejected() {
        let band = Band::new(Lattice::standard(), [4, 4, 4]).unwrap();
        let rhs = plane_wave(&band, [0, 0, 0], C64::new(1.0, 0.0));
        let e = periodic_elliptic_solve(
            &band,
            &MatCoef::Constant(Mat3::identity()),
            &[rhs],
            ProblemKind::ScalarDiffusion,
            &SolverOptions::default(),
        );
        assert!(matches!(e, Err(Error::NonZeroMean(_))));
    }

    #[test]
    fn curl_curl_rejects_gradient_rhs() {
        let band = Band::new(Lattice::standard(), [4, 4, 4]).unwrap();
        let g = grad(&band, &plane_wave(&band, [1, 0, 0], C64::new(1.0, 0.0)));
        let e = periodic_elliptic_solve(
            &band,
            &MatCoef::Constant(Mat3::identity()),
            &g,
            ProblemKind::CurlCurl,
            &SolverOptions::default(),
        );
        assert!(matches!(e, Err(Error::NotDivergenceFree(_))));
    }

    #[test]
    fn curl_curl_constant_single_mode() {
        let band = Band::new(Lattice::standard(), [6, 6, 6]).unwrap();
        let a = Mat3::new(1.5, 0.2, 0.1, 0.2, 1.0, 0.0, 0.1, 0.0, 0.8);
        let m = [1, 1, 0];
        let xi = Lattice::standard().dual_vector(m);
        // divergence-free amplitude
        let v = Vec3::new(1.0, -1.0, 0.5);
        let f: Vec<Vec<C64>> = (0..3).map(|d| plane_wave(&band, m, C64::new(v[d], 0.0))).collect();
        let (u, _) = periodic_elliptic_solve(
            &band,
            &MatCoef::Constant(a),
            &f,
            ProblemKind::CurlCurl,
            &SolverOptions::default(),
        )
        .unwrap();
        let k = find_mode(&band, m).unwrap();
        let r = cross_matrix(&xi);
        let sym = r.transpose() * a * r;
        let got = Vec3::new(u[0][k].re, u[1][k].re, u[2][k].re);
        assert!((sym * got - v).norm() < 1e-12);
        assert!(got.dot(&xi).abs() < 1e-14);
    }

    /// Dense periodic finite differences for −(a u')' = (a)' on [0, 2π), second order,
    /// Richardson-extrapolated over three meshes.
    fn fd_oracle(a: &dyn Fn(f64) -> f64, x: f64) -> f64 {
        let solve = |n: usize| -> Vec<f64> {
            let h = 2.0 * PI / n as f64;
            let mut m = DMatrix::<f64>::zeros(n + 1, n + 1);
            let mut b = nalgebra::DVector::<f64>::zeros(n + 1);
            for i in 0..n {
                let ap = a((i as f64 + 0.5) * h);
                let am = a((i as f64 - 0.5) * h);
                m[(i, (i + 1) % n)] -= ap / (h * h);
                m[(i, i)] += (ap + am) / (h * h);
                m[(i, (i + n - 1) % n)] -= am / (h * h);
                b[i] = (ap - am) / h;
                m[(i, n)] = 1.0;
                m[(n, i)] = 1.0;
            }
            let s = m.lu().solve(&b).unwrap();
            s.as_slice()[..n].to_vec()
        };
        let at = |n: usize| {
            let u = solve(n);
            let h = 2.0 * PI / n as f64;
            let p = x / h;
            let i = p.round() as usize % n;
            assert!((p - p.round()).abs() < 1e-9);
            let mean = u.iter().sum::<f64>() / n as f64;
            u[i] - mean
        };
        let (u1, u2, u3) = (at(256), at(512), at(1024));
        let r1 = (4.0 * u2 - u1) / 3.0;
        let r2 = (4.0 * u3 - u2) / 3.0;
        (16.0 * r2 - r1) / 15.0
    }

    #[test]
    fn layered_scalar_matches_fd_oracle() {
        let band = Band::new(Lattice::standard(), [64, 1, 1]).unwrap();
        let a = |s: f64| 2.0 + s.sin() + 0.3 * (2.0 * s).cos();
        let coef = layered_coef(&band, a);
        let ae1: Vec<Vec<C64>> = {
            let vals: Vec<C64> = band.padded_points().iter().map(|x| C64::new(a(x[0]), 0.0)).collect();
            let c = band.from_padded(vals);
            let z = band.zeros();
            let f = [c, z.clone(), z];
            vec![div(&band, &f)]
        };
        let (u, _) = periodic_elliptic_solve(
            &band,
            &coef,
            &ae1,
            ProblemKind::ScalarDiffusion,
            &SolverOptions::default(),
        )
        .unwrap();
        let vals = crate::spectral::eval_on_grid(&band.modes, &u[0], [16, 1, 1]);
        for (i, v) in vals.iter().enumerate() {
            let x = 2.0 * PI * i as f64 / 16.0;
            assert_relative_eq!(v.re, fd_oracle(&a, x), epsilon = 1e-8);
        }
    }
}
