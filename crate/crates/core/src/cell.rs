//! Γ-periodic cell problems, effective tensors and corrector fields.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::lattice::symbol_b;
use crate::linalg::{block_diag, min_eig, symmetrize, Mat3, Mat4, Mu0, Vec3, C64, I};
use crate::solver::{
    apply_mat, curl, curlcurl_apply, diffusion_apply, grad, periodic_elliptic_solve,
    relative_divergence, MatCoef, ProblemKind, SolveStats, SolverOptions, VField,
};
use crate::spectral::{Band, PeriodicField};

/// A matrix-valued band-limited field: `entries[i * cols + j]` holds the coefficients of entry (i, j).
#[derive(Debug, Clone)]
pub struct MatrixField {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<Vec<C64>>,
}

impl MatrixField {
    pub fn zeros(rows: usize, cols: usize, n: usize) -> Self {
        Self {
            rows,
            cols,
            entries: vec![vec![C64::default(); n]; rows * cols],
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> &[C64] {
        &self.entries[i * self.cols + j]
    }

    pub fn entry_mut(&mut self, i: usize, j: usize) -> &mut Vec<C64> {
        &mut self.entries[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<&[C64]> {
        (0..self.rows).map(|i| self.entry(i, j)).collect()
    }

    pub fn to_periodic_field(&self, band: &Band, real: bool) -> PeriodicField {
        band.to_field(&self.entries, real)
    }

    /// Values at the padded quadrature points, one vector per entry.
    pub fn padded_values(&self, band: &Band) -> Vec<Vec<C64>> {
        self.entries.par_iter().map(|c| band.to_padded(c)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct PhiSolution {
    pub phi: [Vec<C64>; 3],
    pub eta0: Mat3,
    /// ‖η⁰ − η⁰ᵀ‖ before symmetrization.
    pub asymmetry: f64,
    pub stats: [SolveStats; 3],
}

#[derive(Debug, Clone)]
pub struct PhiTildeSolution {
    pub phi_tilde: [Vec<C64>; 3],
    /// max_j |mean η(∇Φ̃_j + c_j) − e_j|
    pub solvability_defect: f64,
    pub stats: [SolveStats; 3],
}

#[derive(Debug, Clone)]
pub struct PSolution {
    pub p: [VField; 3],
    /// Divergence of the right-hand sides R_j relative to 1 + |η⁰|, before projection.
    pub rhs_divergence: f64,
    /// |mean R_j| before it is removed.
    pub rhs_mean: f64,
    /// Relative residual ‖curl μ₀⁻¹ curl p_j − R_j‖ / ‖R_j‖ after the solve.
    pub residual: f64,
    pub divergence: f64,
    pub stats: [SolveStats; 3],
}

#[derive(Debug, Clone)]
pub struct RhoSolution {
    pub rho: Vec<C64>,
    pub nu_under: f64,
    pub nu_bar: f64,
    pub stats: SolveStats,
}

fn coef_of(samples: &Arc<Vec<Mat3>>, constant: bool) -> MatCoef {
    if constant {
        MatCoef::Constant(samples[0])
    } else {
        MatCoef::Field(samples.clone())
    }
}

fn basis(j: usize) -> Vec3 {
    let mut e = Vec3::zeros();
    e[j] = 1.0;
    e
}

/// Right-hand side div(A c) for the constant vector c.
fn div_of_const(band: &Band, coef: &MatCoef, c: &Vec3) -> Vec<C64> {
    let mut f: VField = [band.zeros(), band.zeros(), band.zeros()];
    let z = band.zero_index();
    for d in 0..3 {
        f[d][z] = C64::new(c[d], 0.0);
    }
    crate::solver::div(band, &apply_mat(band, coef, &f))
}

/// Mean over the padded grid of A(x)(∇u(x) + c).
fn mean_flux(band: &Band, coef: &MatCoef, u: &[C64], c: &Vec3) -> Vec3 {
    let mut g = grad(band, u);
    let z = band.zero_index();
    for d in 0..3 {
        g[d][z] += C64::new(c[d], 0.0);
    }
    let flux = apply_mat(band, coef, &g);
    Vec3::new(flux[0][z].re, flux[1][z].re, flux[2][z].re)
}

/// div η(∇Φ_j + e_j) = 0 and η⁰ = mean η(Σ∘ + 1).
pub fn solve_phi(band: &Band, coef: &MatCoef, opts: &SolverOptions) -> Result<PhiSolution> {
    let sols: Vec<(Vec<C64>, SolveStats)> = (0..3)
        .into_par_iter()
        .map(|j| {
            let rhs = div_of_const(band, coef, &basis(j));
            let (u, st) = periodic_elliptic_solve(band, coef, &[rhs], ProblemKind::ScalarDiffusion, opts)?;
            Ok((u.into_iter().next().unwrap(), st))
        })
        .collect::<Result<_>>()?;
    let mut eta0 = Mat3::zeros();
    for j in 0..3 {
        eta0.set_column(j, &mean_flux(band, coef, &sols[j].0, &basis(j)));
    }
    let asymmetry = (eta0 - eta0.transpose()).norm();
    let eta0 = symmetrize(&eta0);
    if !(min_eig(&eta0) > 0.0) {
        return Err(Error::Invalid("effective matrix is not positive definite".into()));
    }
    let stats = [sols[0].1, sols[1].1, sols[2].1];
    let mut it = sols.into_iter().map(|s| s.0);
    Ok(PhiSolution {
        phi: [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()],
        eta0,
        asymmetry,
        stats,
    })
}

/// div η(∇Φ̃_j + c_j) = 0 with c_j = (η⁰)⁻¹e_j.
pub fn solve_phi_tilde(band: &Band, coef: &MatCoef, eta0: &Mat3, opts: &SolverOptions) -> Result<PhiTildeSolution> {
    let eta0_inv = eta0.try_inverse().ok_or_else(|| Error::Invalid("singular eta0".into()))?;
    let sols: Vec<(Vec<C64>, SolveStats, f64)> = (0..3)
        .into_par_iter()
        .map(|j| {
            let c = eta0_inv.column(j).into_owned();
            let rhs = div_of_const(band, coef, &c);
            let (u, st) = periodic_elliptic_solve(band, coef, &[rhs], ProblemKind::ScalarDiffusion, opts)?;
            let u = u.into_iter().next().unwrap();
            let defect = (mean_flux(band, coef, &u, &c) - basis(j)).amax();
            Ok((u, st, defect))
        })
        .collect::<Result<_>>()?;
    let solvability_defect = sols.iter().map(|s| s.2).fold(0.0, f64::max);
    let stats = [sols[0].1, sols[1].1, sols[2].1];
    let mut it = sols.into_iter().map(|s| s.0);
    Ok(PhiTildeSolution {
        phi_tilde: [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()],
        solvability_defect,
        stats,
    })
}

/// R_j = η(∇Φ̃_j + c_j) − e_j as band coefficients (Galerkin projection).
fn r_rhs(band: &Band, coef: &MatCoef, phi_tilde: &[C64], c: &Vec3, j: usize) -> VField {
    let mut g = grad(band, phi_tilde);
    let z = band.zero_index();
    for d in 0..3 {
        g[d][z] += C64::new(c[d], 0.0);
    }
    let mut r = apply_mat(band, coef, &g);
    r[j][z] -= C64::new(1.0, 0.0);
    r
}

/// curl(μ₀⁻¹ curl p_j) = R_j, div p_j = 0, mean p_j = 0.
pub fn solve_p(
    band: &Band,
    coef: &MatCoef,
    mu0: &Mu0,
    eta0: &Mat3,
    phi_tilde: &[Vec<C64>; 3],
    opts: &SolverOptions,
) -> Result<PSolution> {
    let eta0_inv = eta0.try_inverse().ok_or_else(|| Error::Invalid("singular eta0".into()))?;
    let mu_inv = MatCoef::Constant(mu0.inv);
    let z = band.zero_index();
    let scale = 1.0 + eta0.norm();
    let sols: Vec<(VField, SolveStats, f64, f64, f64, f64)> = (0..3)
        .into_par_iter()
        .map(|j| {
            let c = eta0_inv.column(j).into_owned();
            let mut r = r_rhs(band, coef, &phi_tilde[j], &c, j);
            let mean = (0..3).map(|d| r[d][z].norm()).fold(0.0, f64::max);
            if mean > 1e-8 * scale {
                return Err(Error::NonZeroMean(mean));
            }
            for d in 0..3 {
                r[d][z] = C64::default();
            }
            let rnorm = (0..3).map(|d| r[d].iter().map(|a| a.norm_sqr()).sum::<f64>()).sum::<f64>().sqrt();
            let dv = relative_divergence(band, &r) * rnorm / scale;
            if dv > 1e-8 {
                return Err(Error::NotDivergenceFree(dv));
            }
            // remove the rounding-level gradient part
            crate::solver::leray(band, &mut r);
            let rnorm = (0..3).map(|d| r[d].iter().map(|a| a.norm_sqr()).sum::<f64>()).sum::<f64>().sqrt();
            let (p, st) = if rnorm <= 1e-14 * scale {
                (crate::solver::zeros3(band.n_modes()), SolveStats::default())
            } else {
                let (p, st) = periodic_elliptic_solve(band, &mu_inv, &r, ProblemKind::CurlCurl, opts)?;
                ([p[0].clone(), p[1].clone(), p[2].clone()], st)
            };
            let back = curlcurl_apply(band, &mu_inv, &p);
            let mut proj = r.clone();
            crate::solver::leray(band, &mut proj);
            let num: f64 = (0..3)
                .map(|d| back[d].iter().zip(&proj[d]).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>())
                .sum();
            let den: f64 = (0..3).map(|d| proj[d].iter().map(|a| a.norm_sqr()).sum::<f64>()).sum();
            let res = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
            let pdiv = relative_divergence(band, &p);
            Ok((p, st, dv, mean, res, pdiv))
        })
        .collect::<Result<_>>()?;
    let rhs_divergence = sols.iter().map(|s| s.2).fold(0.0, f64::max);
    let rhs_mean = sols.iter().map(|s| s.3).fold(0.0, f64::max);
    let residual = sols.iter().map(|s| s.4).fold(0.0, f64::max);
    let divergence = sols.iter().map(|s| s.5).fold(0.0, f64::max);
    let stats = [sols[0].1, sols[1].1, sols[2].1];
    let mut it = sols.into_iter().map(|s| s.0);
    Ok(PSolution {
        p: [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()],
        rhs_divergence,
        rhs_mean,
        residual,
        divergence,
        stats,
    })
}

/// −div(μ₀∇ρ) = 1 − ν̲/ν with ν sampled at the padded quadrature points.
pub fn solve_rho(band: &Band, nu_pad: &[f64], mu0: &Mu0, opts: &SolverOptions) -> Result<RhoSolution> {
    if nu_pad.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Invalid("nu must be positive".into()));
    }
    let n = nu_pad.len() as f64;
    let nu_bar = nu_pad.iter().sum::<f64>() / n;
    let nu_under = n / nu_pad.iter().map(|v| 1.0 / v).sum::<f64>();
    let f: Vec<C64> = nu_pad.iter().map(|v| C64::new(1.0 - nu_under / v, 0.0)).collect();
    let mut rhs = band.from_padded(f);
    let z = band.zero_index();
    if rhs[z].norm() > 1e-10 {
        return Err(Error::NonZeroMean(rhs[z].norm()));
    }
    rhs[z] = C64::default();
    let (rho, stats) = periodic_elliptic_solve(
        band,
        &MatCoef::Constant(mu0.m),
        &[rhs],
        ProblemKind::ScalarDiffusion,
        opts,
    )?;
    Ok(RhoSolution {
        rho: rho.into_iter().next().unwrap(),
        nu_under,
        nu_bar,
        stats,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CellDiagnostics {
    pub phi_stats: [SolveStats; 3],
    pub phi_tilde_stats: [SolveStats; 3],
    pub p_stats: [SolveStats; 3],
    pub rho_stats: SolveStats,
    pub eta0_asymmetry: f64,
    pub solvability_defect: f64,
    /// ℓ¹ bound on sup |Σ − Σ∘(η⁰)⁻¹|.
    pub sigma_consistency: f64,
    pub p_rhs_divergence: f64,
    pub p_rhs_mean: f64,
    pub p_residual: f64,
    pub p_divergence: f64,
    /// |mean g̃ − g⁰|
    pub g_tilde_mean_defect: f64,
    /// max over quadrature points of |g(b(D)Λ + 1) − g̃| relative to max |g̃|.
    pub defining_formula_defect: f64,
    /// |mean g(b(D)Λ + 1) − g⁰|
    pub defining_formula_mean_defect: f64,
    /// min eigenvalue of η⁰ − η̲ and of η̄ − η⁰.
    pub voigt_reuss_slack: [f64; 2],
}

/// All cell-problem solutions with the effective tensors and derived corrector fields.
#[derive(Debug, Clone)]
pub struct CorrectorSet {
    pub band: Arc<Band>,
    pub mu0: Mu0,
    pub eta_pad: Arc<Vec<Mat3>>,
    pub nu_pad: Arc<Vec<f64>>,
    pub constant: bool,
    pub phi: [Vec<C64>; 3],
    pub phi_tilde: [Vec<C64>; 3],
    pub p: [VField; 3],
    pub rho: Vec<C64>,
    pub eta0: Mat3,
    pub eta0_inv: Mat3,
    pub eta_bar: Mat3,
    pub eta_under: Mat3,
    pub nu_under: f64,
    pub nu_bar: f64,
    pub g0: Mat4,
    pub diagnostics: CellDiagnostics,
}

pub fn solve_cell_problems(cs: &CoefficientSet, opts: &SolverOptions) -> Result<CorrectorSet> {
    let band = Arc::new(Band::new(cs.lattice.clone(), cs.grid)?);
    let pts = band.padded_points();
    let eta_pad = Arc::new(cs.periodic.eta_samples(&pts));
    let nu_pad = Arc::new(cs.periodic.nu_samples(&pts));
    CorrectorSet::solve(band, cs.mu0.clone(), eta_pad, nu_pad, cs.model().is_constant(), opts)
}

impl CorrectorSet {
    pub fn solve(
        band: Arc<Band>,
        mu0: Mu0,
        eta_pad: Arc<Vec<Mat3>>,
        nu_pad: Arc<Vec<f64>>,
        constant: bool,
        opts: &SolverOptions,
    ) -> Result<Self> {
        let coef = coef_of(&eta_pad, constant);
        let phi = solve_phi(&band, &coef, opts)?;
        let tilde = solve_phi_tilde(&band, &coef, &phi.eta0, opts)?;
        let p = solve_p(&band, &coef, &mu0, &phi.eta0, &tilde.phi_tilde, opts)?;
        let rho = solve_rho(&band, &nu_pad, &mu0, opts)?;

        let npad = eta_pad.len() as f64;
        let eta_bar = eta_pad.iter().sum::<Mat3>() / npad;
        let inv_mean = eta_pad
            .iter()
            .map(|m| m.try_inverse().unwrap_or_else(Mat3::zeros))
            .sum::<Mat3>()
            / npad;
        let eta_under = symmetrize(&inv_mean.try_inverse().unwrap_or_else(Mat3::zeros));
        let eta0 = phi.eta0;
        let eta0_inv = symmetrize(&eta0.try_inverse().unwrap());
        let g0 = block_diag(&eta0_inv, rho.nu_under);

        let mut cs = CorrectorSet {
            band,
            mu0,
            eta_pad,
            nu_pad,
            constant,
            phi: phi.phi,
            phi_tilde: tilde.phi_tilde,
            p: p.p,
            rho: rho.rho,
            eta0,
            eta0_inv,
            eta_bar,
            eta_under,
            nu_under: rho.nu_under,
            nu_bar: rho.nu_bar,
            g0,
            diagnostics: CellDiagnostics {
                phi_stats: phi.stats,
                phi_tilde_stats: tilde.stats,
                p_stats: p.stats,
                rho_stats: rho.stats,
                eta0_asymmetry: phi.asymmetry,
                solvability_defect: tilde.solvability_defect,
                sigma_consistency: 0.0,
                p_rhs_divergence: p.rhs_divergence,
                p_rhs_mean: p.rhs_mean,
                p_residual: p.residual,
                p_divergence: p.divergence,
                g_tilde_mean_defect: 0.0,
                defining_formula_defect: 0.0,
                defining_formula_mean_defect: 0.0,
                voigt_reuss_slack: [
                    min_eig(&(eta0 - eta_under)),
                    min_eig(&(eta_bar - eta0)),
                ],
            },
        };
        cs.diagnostics.sigma_consistency = cs.sigma_consistency();
        let (mean_defect, formula, formula_mean) = cs.cross_check_g_tilde();
        cs.diagnostics.g_tilde_mean_defect = mean_defect;
        cs.diagnostics.defining_formula_defect = formula;
        cs.diagnostics.defining_formula_mean_defect = formula_mean;
        Ok(cs)
    }

    pub fn eta_coef(&self) -> MatCoef {
        coef_of(&self.eta_pad, self.constant)
    }

    fn gradient_matrix(&self, u: &[Vec<C64>; 3]) -> MatrixField {
        let mut m = MatrixField::zeros(3, 3, self.band.n_modes());
        for j in 0..3 {
            let g = grad(&self.band, &u[j]);
            for i in 0..3 {
                *m.entry_mut(i, j) = g[i].clone();
            }
        }
        m
    }

    /// Σ∘: columns ∇Φ_j.
    pub fn sigma_circ(&self) -> MatrixField {
        self.gradient_matrix(&self.phi)
    }

    /// Σ: columns ∇Φ̃_j.
    pub fn sigma(&self) -> MatrixField {
        self.gradient_matrix(&self.phi_tilde)
    }

    /// Ψ: columns curl p_j.
    pub fn psi(&self) -> MatrixField {
        let mut m = MatrixField::zeros(3, 3, self.band.n_modes());
        for j in 0..3 {
            let c = curl(&self.band, &self.p[j]);
            for i in 0..3 {
                *m.entry_mut(i, j) = c[i].clone();
            }
        }
        m
    }

    pub fn grad_rho(&self) -> VField {
        grad(&self.band, &self.rho)
    }

    /// Λ = i[μ₀^{-1/2}Ψ, μ₀^{1/2}∇ρ] (3×4).
    pub fn lambda(&self) -> MatrixField {
        let n = self.band.n_modes();
        let psi = self.psi();
        let gr = self.grad_rho();
        let mut l = MatrixField::zeros(3, 4, n);
        let (ms, mis) = (self.mu0.sqrt, self.mu0.inv_sqrt);
        for i in 0..3 {
            for j in 0..3 {
                let e = l.entry_mut(i, j);
                for k in 0..3 {
                    let s = mis[(i, k)];
                    for (a, b) in e.iter_mut().zip(psi.entry(k, j)) {
                        *a += I * s * b;
                    }
                }
            }
            let e = l.entry_mut(i, 3);
            for k in 0..3 {
                let s = ms[(i, k)];
                for (a, b) in e.iter_mut().zip(&gr[k]) {
                    *a += I * s * b;
                }
            }
        }
        l
    }

    /// g̃ = blockdiag((η⁰)⁻¹ + Σ, ν̲) (4×4).
    pub fn g_tilde(&self) -> MatrixField {
        let n = self.band.n_modes();
        let z = self.band.zero_index();
        let sigma = self.sigma();
        let mut g = MatrixField::zeros(4, 4, n);
        for i in 0..3 {
            for j in 0..3 {
                let e = g.entry_mut(i, j);
                e.clone_from_slice(sigma.entry(i, j));
                e[z] += C64::new(self.eta0_inv[(i, j)], 0.0);
            }
        }
        g.entry_mut(3, 3)[z] = C64::new(self.nu_under, 0.0);
        g
    }

    fn sigma_consistency(&self) -> f64 {
        let s = self.sigma();
        let sc = self.sigma_circ();
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let mut l1 = 0.0;
                for k in 0..self.band.n_modes() {
                    let mut v = s.entry(i, j)[k];
                    for l in 0..3 {
                        v -= sc.entry(i, l)[k] * self.eta0_inv[(l, j)];
                    }
                    l1 += v.norm();
                }
                worst = worst.max(l1);
            }
        }
        worst
    }

    /// Compares g̃ with g(x)(b(D)Λ(x) + 1₄) pointwise on the quadrature grid, and both means with g⁰.
    fn cross_check_g_tilde(&self) -> (f64, f64, f64) {
        let band = &self.band;
        let n = band.n_modes();
        let z = band.zero_index();
        let gt = self.g_tilde();
        let mut mean_defect: f64 = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                mean_defect = mean_defect.max((gt.entry(i, j)[z].re - self.g0[(i, j)]).abs());
            }
        }
        // b(D)Λ mode by mode
        let lam = self.lambda();
        let mut bl = MatrixField::zeros(4, 4, n);
        for k in 0..n {
            let b = symbol_b(&band.xi[k], &self.mu0);
            for i in 0..4 {
                for j in 0..4 {
                    let mut v = C64::default();
                    for l in 0..3 {
                        v += b[(i, l)] * lam.entry(l, j)[k];
                    }
                    bl.entry_mut(i, j)[k] = v;
                }
            }
        }
        for i in 0..4 {
            bl.entry_mut(i, i)[z] += C64::new(1.0, 0.0);
        }
        let blv = bl.padded_values(band);
        let gtv = gt.padded_values(band);
        let npad = band.pad_len();
        let (worst, scale, mean) = (0..npad)
            .into_par_iter()
            .map(|p| {
                let ei = self.eta_pad[p].try_inverse().unwrap_or_else(Mat3::zeros);
                let g = block_diag(&ei, self.nu_pad[p]);
                let mut w: f64 = 0.0;
                let mut s: f64 = 0.0;
                let mut m = [[0.0f64; 4]; 4];
                for i in 0..4 {
                    for j in 0..4 {
                        let mut v = C64::default();
                        for l in 0..4 {
                            v += g[(i, l)] * blv[l * 4 + j][p];
                        }
                        w = w.max((v - gtv[i * 4 + j][p]).norm());
                        s = s.max(gtv[i * 4 + j][p].norm());
                        m[i][j] = v.re;
                    }
                }
                (w, s, m)
            })
            .reduce(
                || (0.0, 0.0, [[0.0; 4]; 4]),
                |a, b| {
                    let mut m = a.2;
                    for i in 0..4 {
                        for j in 0..4 {
                            m[i][j] += b.2[i][j];
                        }
                    }
                    (a.0.max(b.0), a.1.max(b.1), m)
                },
            );
        let mut mean_formula: f64 = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                mean_formula = mean_formula.max((mean[i][j] / npad as f64 - self.g0[(i, j)]).abs());
            }
        }
        (mean_defect, worst / scale.max(f64::MIN_POSITIVE), mean_formula)
    }

    /// Largest |mean| over all cell solutions (zero by the gauge, up to rounding).
    pub fn max_solution_mean(&self) -> f64 {
        let z = self.band.zero_index();
        let mut m = self.rho[z].norm();
        for j in 0..3 {
            m = m.max(self.phi[j][z].norm()).max(self.phi_tilde[j][z].norm());
            for d in 0..3 {
                m = m.max(self.p[j][d][z].norm());
            }
        }
        m
    }

    /// Largest coefficient magnitude over all cell solutions.
    pub fn max_solution_coefficient(&self) -> f64 {
        let mut m: f64 = 0.0;
        let mut upd = |v: &[C64]| {
            for x in v {
                m = m.max(x.norm());
            }
        };
        upd(&self.rho);
        for j in 0..3 {
            upd(&self.phi[j]);
            upd(&self.phi_tilde[j]);
            for d in 0..3 {
                upd(&self.p[j][d]);
            }
        }
        m
    }

    /// Relative residual of the Φ_j problems recomputed from scratch.
    pub fn phi_residual(&self) -> f64 {
        let coef = self.eta_coef();
        let mut worst: f64 = 0.0;
        for j in 0..3 {
            let rhs = div_of_const(&self.band, &coef, &basis(j));
            let mut lhs = diffusion_apply(&self.band, &coef, &self.phi[j]);
            lhs[self.band.zero_index()] = C64::default();
            let num: f64 = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            let den: f64 = rhs.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            if den > 0.0 {
                worst = worst.max(num / den);
            } else {
                worst = worst.max(num);
            }
        }
        worst
    }
}
