//! Spectral germ, threshold coefficients f(θ) and N(θ), and the branch conditions.

use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{Cholesky, Matrix2, Matrix4, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::cell::CorrectorSet;
use crate::error::{Error, Result};
use crate::lattice::symbol_b;
use crate::linalg::{
    cross_matrix, cspectral_norm, spectral_norm, sym_eig, to_complex, CMat3, CVec3, Mat3, Mu0, Vec3, C64, I,
};
use crate::solver::grad;

type CMat4 = Matrix4<C64>;

fn check_unit(theta: &Vec3) -> Result<()> {
    let n = theta.norm();
    if !((n - 1.0).abs() <= 1e-10) {
        return Err(Error::NonUnitDirection(n));
    }
    Ok(())
}

/// S(θ) = μ₀^{-1/2} r(θ)ᵀ (η⁰)⁻¹ r(θ) μ₀^{-1/2} + ν̲ μ₀^{1/2} θθᵀ μ₀^{1/2}.
pub fn germ_matrix(theta: &Vec3, eta0: &Mat3, nu_under: f64, mu0: &Mu0) -> Result<Mat3> {
    check_unit(theta)?;
    let eta0_inv = eta0
        .try_inverse()
        .ok_or_else(|| Error::Invalid("singular eta0".into()))?;
    let r = cross_matrix(theta);
    let a = mu0.inv_sqrt * r.transpose() * eta0_inv * r * mu0.inv_sqrt;
    let t = mu0.sqrt * theta;
    let s = a + nu_under * t * t.transpose();
    Ok((s + s.transpose()) * 0.5)
}

#[derive(Debug, Clone, Serialize)]
pub struct GermSpectrum {
    /// γ₁ ≤ γ₂ (solenoidal pair) and γ₃ (gradient).
    pub gamma: [f64; 3],
    /// Unit eigenvectors ω₁, ω₂, ω₃ (real; orthonormal in ℂ³).
    pub omega: [Vec3; 3],
}

/// Eigenstructure of S(θ) through the closed form for γ₃ and the 2×2 solenoidal problem.
pub fn germ_spectrum(theta: &Vec3, eta0: &Mat3, nu_under: f64, mu0: &Mu0) -> Result<GermSpectrum> {
    check_unit(theta)?;
    let eta0_inv = eta0
        .try_inverse()
        .ok_or_else(|| Error::Invalid("singular eta0".into()))?;
    let mt = mu0.m * theta;
    let gamma3 = nu_under * theta.dot(&mt);
    let omega3 = (mu0.sqrt * theta).normalize();

    // c = μ₀⁻¹q with q ⟂ θ spans {c : μ₀c ⟂ θ}
    let (q1, q2) = orthonormal_complement(theta);
    let c = nalgebra::Matrix3x2::from_columns(&[mu0.inv * q1, mu0.inv * q2]);
    let r = cross_matrix(theta);
    let a: Matrix2<f64> = c.transpose() * r.transpose() * eta0_inv * r * c;
    let b: Matrix2<f64> = c.transpose() * mu0.m * c;
    let l = Cholesky::new((b + b.transpose()) * 0.5)
        .ok_or_else(|| Error::Invalid("degenerate solenoidal basis".into()))?
        .l();
    let li = l.try_inverse().unwrap();
    let red = li * ((a + a.transpose()) * 0.5) * li.transpose();
    let e = SymmetricEigen::new((red + red.transpose()) * 0.5);
    let (i0, i1) = if e.eigenvalues[0] <= e.eigenvalues[1] { (0, 1) } else { (1, 0) };
    let omega_of = |k: usize| {
        let y = e.eigenvectors.column(k).into_owned();
        let cv = c * (li.transpose() * y);
        (mu0.sqrt * cv).normalize()
    };
    Ok(GermSpectrum {
        gamma: [e.eigenvalues[i0], e.eigenvalues[i1], gamma3],
        omega: [omega_of(i0), omega_of(i1), omega3],
    })
}

/// Two unit vectors completing θ to a right-handed orthonormal frame.
pub fn orthonormal_complement(theta: &Vec3) -> (Vec3, Vec3) {
    let t = theta.normalize();
    let k = t.iamin();
    let mut e = Vec3::zeros();
    e[k] = 1.0;
    let a = (e - t * t.dot(&e)).normalize();
    let b = t.cross(&a);
    (a, b)
}

#[derive(Debug, Clone, Serialize)]
pub struct FCoefficients {
    /// d[j][k] with ρ_jk(θ) = ⟨d[j][k], θ⟩.
    pub d: [[Vec3; 3]; 3],
    /// f(θ) = θᵀFθ.
    pub f_matrix: Mat3,
}

impl FCoefficients {
    pub fn f(&self, theta: &Vec3) -> f64 {
        theta.dot(&(self.f_matrix * theta))
    }

    pub fn rho(&self, j: usize, k: usize, theta: &Vec3) -> f64 {
        self.d[j][k].dot(theta)
    }

    pub fn sym_norm(&self) -> f64 {
        ((self.f_matrix + self.f_matrix.transpose()) * 0.5).norm()
    }
}

/// d_jk = mean Φ̃_j η(∇Φ̃_k + c_k), evaluated on the quadrature grid.
pub fn f_coefficients(cs: &CorrectorSet) -> FCoefficients {
    let band = &cs.band;
    let z = band.zero_index();
    let npad = band.pad_len();
    let phi: Vec<Vec<C64>> = (0..3).into_par_iter().map(|j| band.to_padded(&cs.phi_tilde[j])).collect();
    let flux: Vec<[Vec<C64>; 3]> = (0..3)
        .into_par_iter()
        .map(|k| {
            let mut g = grad(band, &cs.phi_tilde[k]);
            for d in 0..3 {
                g[d][z] += C64::new(cs.eta0_inv[(d, k)], 0.0);
            }
            let vals: Vec<Vec<C64>> = g.iter().map(|c| band.to_padded(c)).collect();
            let mut out = [vec![C64::default(); npad], vec![C64::default(); npad], vec![C64::default(); npad]];
            for p in 0..npad {
                let a = &cs.eta_pad[p];
                for i in 0..3 {
                    out[i][p] = (0..3).map(|l| vals[l][p] * a[(i, l)]).sum();
                }
            }
            out
        })
        .collect();
    let mut d = [[Vec3::zeros(); 3]; 3];
    for j in 0..3 {
        for k in 0..3 {
            for i in 0..3 {
                let s: f64 = phi[j].iter().zip(&flux[k][i]).map(|(a, b)| (a.conj() * b).re).sum();
                d[j][k][i] = s / npad as f64;
            }
        }
    }
    let rows = [d[1][2] - d[2][1], d[2][0] - d[0][2], d[0][1] - d[1][0]];
    let f_matrix = Mat3::from_rows(&[rows[0].transpose(), rows[1].transpose(), rows[2].transpose()]);
    FCoefficients { d, f_matrix }
}

/// N(θ) = −i f(θ) μ₀^{-1/2} r(θ) μ₀^{-1/2}.
pub fn n_theta(theta: &Vec3, f: f64, mu0: &Mu0) -> CMat3 {
    to_complex(&(mu0.inv_sqrt * cross_matrix(theta) * mu0.inv_sqrt)) * (-I * f)
}

/// Precomputed means K_l = mean Λ* b(e_l)* g̃, so that M(θ) = Σ_l θ_l (K_l + K_l*).
#[derive(Debug, Clone)]
pub struct MRoute {
    k: [CMat4; 3],
}

impl MRoute {
    pub fn new(cs: &CorrectorSet) -> Self {
        let band = &cs.band;
        let lam = cs.lambda().padded_values(band);
        let gt = cs.g_tilde().padded_values(band);
        let npad = band.pad_len();
        let k = [0usize, 1, 2].map(|l| {
            let mut e = Vec3::zeros();
            e[l] = 1.0;
            let b = symbol_b(&e, &cs.mu0);
            // Λ* b* : (4×3)(3×4); per point Λ(x)* b* g̃(x)
            let sum = (0..npad)
                .into_par_iter()
                .map(|p| {
                    let mut lm = nalgebra::Matrix3x4::<C64>::zeros();
                    let mut gm = CMat4::zeros();
                    for i in 0..3 {
                        for j in 0..4 {
                            lm[(i, j)] = lam[i * 4 + j][p];
                        }
                    }
                    for i in 0..4 {
                        for j in 0..4 {
                            gm[(i, j)] = gt[i * 4 + j][p];
                        }
                    }
                    let bc = b.map(|x| C64::new(x, 0.0));
                    lm.adjoint() * bc.adjoint() * gm
                })
                .reduce(CMat4::zeros, |a, b| a + b);
            sum / C64::new(npad as f64, 0.0)
        });
        Self { k }
    }

    pub fn m_theta(&self, theta: &Vec3) -> CMat4 {
        let mut m = CMat4::zeros();
        for l in 0..3 {
            m += (self.k[l] + self.k[l].adjoint()) * C64::new(theta[l], 0.0);
        }
        m
    }

    /// b(θ)* M(θ) b(θ).
    pub fn n_theta(&self, theta: &Vec3, mu0: &Mu0) -> CMat3 {
        let b = symbol_b(theta, mu0).map(|x| C64::new(x, 0.0));
        b.adjoint() * self.m_theta(theta) * b
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Mu12 {
    /// Pairs (μ, eigenvector of μ₀^{-1/2}r(θ)μ₀^{-1/2} for the eigenvalue iσ with μ = fσ).
    pub mu: [f64; 2],
    pub sigma: [f64; 2],
    #[serde(skip)]
    pub vectors: Option<[CVec3; 2]>,
}

/// Threshold cubic coefficients at a point where γ₁ = γ₂.
pub fn mu12(theta: &Vec3, gamma: &[f64; 3], f: f64, mu0: &Mu0) -> Result<Mu12> {
    check_unit(theta)?;
    if (gamma[1] - gamma[0]).abs() > 1e-6 * (gamma[0] + gamma[1]) {
        return Err(Error::NotDegenerate {
            g1: gamma[0],
            g2: gamma[1],
        });
    }
    let s = theta.dot(&(mu0.m * theta)).sqrt() / mu0.det.sqrt();
    if f == 0.0 {
        return Ok(Mu12 {
            mu: [0.0, 0.0],
            sigma: [s, -s],
            vectors: None,
        });
    }
    // A real skew; H = iA Hermitian with Av = iσv ⟺ Hv = −σv
    let a = mu0.inv_sqrt * cross_matrix(theta) * mu0.inv_sqrt;
    let h = to_complex(&a) * I;
    let e = SymmetricEigen::new(h);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&x, &y| e.eigenvalues[x].total_cmp(&e.eigenvalues[y]));
    let plus = e.eigenvectors.column(idx[0]).into_owned();
    let minus = e.eigenvectors.column(idx[2]).into_owned();
    let sig = [-e.eigenvalues[idx[0]], -e.eigenvalues[idx[2]]];
    Ok(Mu12 {
        mu: [f * sig[0], f * sig[1]],
        sigma: sig,
        vectors: Some([plus, minus]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchVerdict {
    Disjoint,
    IdenticallyEqual,
    Crossing,
}

#[derive(Debug, Clone, Serialize)]
pub struct Conditions {
    /// f ≡ 0.
    pub condition1: bool,
    pub sym_f_norm: f64,
    pub condition1_threshold: f64,
    pub condition2: BranchVerdict,
    pub gap_tolerance: f64,
    pub min_gap: f64,
    pub max_gap: f64,
    /// Direction of smallest gap after refinement.
    pub min_gap_direction: Vec3,
    /// min |γ₁ − γ₂| when the branches are disjoint.
    pub c_circ: Option<f64>,
    /// False for crossing branches with f ≢ 0.
    pub improved_applicable: bool,
}

/// Fibonacci points on S².
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

struct GapCost<'a> {
    germ: &'a GermAnalysis,
    center: Vec3,
    t1: Vec3,
    t2: Vec3,
}

impl GapCost<'_> {
    fn direction(&self, p: &[f64]) -> Vec3 {
        (self.center + self.t1 * p[0] + self.t2 * p[1]).normalize()
    }
}

impl CostFunction for GapCost<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let g = self.germ.gap(&self.direction(p));
        Ok(g * g)
    }
}

/// Germ quantities shared by every direction.
#[derive(Debug, Clone)]
pub struct GermAnalysis {
    pub mu0: Mu0,
    pub eta0: Mat3,
    pub nu_under: f64,
    pub f: FCoefficients,
    pub eta_inv_max: f64,
    pub cell_volume: f64,
    pub m_route: MRoute,
}

#[derive(Debug, Clone, Serialize)]
pub struct DirectionRecord {
    pub theta: Vec3,
    pub s: Mat3,
    pub gamma: [f64; 3],
    pub omega: [Vec3; 3],
    pub f: f64,
    pub n_re: Mat3,
    pub n_im: Mat3,
    /// |N_formula − N_M-route|
    pub n_route_defect: f64,
    pub mu12: Option<Mu12>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GermReport {
    pub eta0: Mat3,
    pub nu_under: f64,
    pub mu0: Mat3,
    /// ω_l are stored as unit vectors; as constants in L₂(Ω) they carry this factor.
    pub omega_normalization: f64,
    pub d: [[Vec3; 3]; 3],
    pub f_matrix: Mat3,
    pub directions: Vec<DirectionRecord>,
    pub conditions: Conditions,
    /// μ₁,₂ at the refined smallest-gap direction, when the branches touch there.
    pub crossing_mu12: Option<Mu12>,
}

impl GermAnalysis {
    pub fn new(cs: &CorrectorSet, cell_volume: f64) -> Self {
        let eta_inv_max = cs
            .eta_pad
            .iter()
            .map(|m| m.try_inverse().map(|x| spectral_norm(&x)).unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max);
        Self {
            mu0: cs.mu0.clone(),
            eta0: cs.eta0,
            nu_under: cs.nu_under,
            f: f_coefficients(cs),
            eta_inv_max,
            cell_volume,
            m_route: MRoute::new(cs),
        }
    }

    pub fn germ_matrix(&self, theta: &Vec3) -> Result<Mat3> {
        germ_matrix(theta, &self.eta0, self.nu_under, &self.mu0)
    }

    pub fn spectrum(&self, theta: &Vec3) -> Result<GermSpectrum> {
        germ_spectrum(theta, &self.eta0, self.nu_under, &self.mu0)
    }

    pub fn gap(&self, theta: &Vec3) -> f64 {
        let g = germ_spectrum(theta, &self.eta0, self.nu_under, &self.mu0).expect("unit direction");
        g.gamma[1] - g.gamma[0]
    }

    pub fn n_theta(&self, theta: &Vec3) -> CMat3 {
        n_theta(theta, self.f.f(theta), &self.mu0)
    }

    pub fn n_theta_m_route(&self, theta: &Vec3) -> CMat3 {
        self.m_route.n_theta(theta, &self.mu0)
    }

    pub fn condition1_threshold(&self) -> f64 {
        1e-10 * self.eta_inv_max * self.cell_volume.cbrt()
    }

    pub fn direction(&self, theta: &Vec3) -> Result<DirectionRecord> {
        let s = self.germ_matrix(theta)?;
        let sp = self.spectrum(theta)?;
        let f = self.f.f(theta);
        let n = self.n_theta(theta);
        let defect = cspectral_norm(&(n - self.n_theta_m_route(theta)));
        Ok(DirectionRecord {
            theta: *theta,
            s,
            gamma: sp.gamma,
            omega: sp.omega,
            f,
            n_re: n.map(|z| z.re),
            n_im: n.map(|z| z.im),
            n_route_defect: defect,
            mu12: mu12(theta, &sp.gamma, f, &self.mu0).ok(),
        })
    }

    /// Nelder–Mead on gap² in tangent coordinates around `start`.
    pub fn refine_min_gap(&self, start: &Vec3) -> (Vec3, f64) {
        let (t1, t2) = orthonormal_complement(start);
        let cost = GapCost {
            germ: self,
            center: *start,
            t1,
            t2,
        };
        let h = 0.05;
        let simplex = vec![vec![0.0, 0.0], vec![h, 0.0], vec![0.0, h]];
        let nm = NelderMead::new(simplex).with_sd_tolerance(1e-30).expect("valid tolerance");
        let res = Executor::new(cost, nm).configure(|s| s.max_iters(2000)).run();
        let cost = GapCost {
            germ: self,
            center: *start,
            t1,
            t2,
        };
        match res {
            Ok(r) => {
                let p = r.state().best_param.clone().unwrap_or_else(|| vec![0.0, 0.0]);
                let th = cost.direction(&p);
                (th, self.gap(&th))
            }
            Err(_) => (*start, self.gap(start)),
        }
    }

    pub fn check_conditions(&self, samples: usize) -> Conditions {
        let sym_f_norm = self.f.sym_norm();
        let threshold = self.condition1_threshold();
        let condition1 = sym_f_norm <= threshold;
        let pts = fibonacci_sphere(samples.max(1));
        let spectra: Vec<(Vec3, [f64; 3])> = pts
            .par_iter()
            .map(|t| (*t, self.spectrum(t).expect("unit direction").gamma))
            .collect();
        let max_gamma = spectra.iter().map(|s| s.1[2].max(s.1[1])).fold(0.0, f64::max);
        let tol = 1e-6 * max_gamma;
        let mut gaps: Vec<(f64, Vec3)> = spectra.iter().map(|(t, g)| (g[1] - g[0], *t)).collect();
        let max_gap = gaps.iter().map(|g| g.0).fold(0.0, f64::max);
        gaps.sort_by(|a, b| a.0.total_cmp(&b.0));
        let refined: Vec<(Vec3, f64)> = gaps
            .iter()
            .take(10)
            .collect::<Vec<_>>()
            .par_iter()
            .map(|(_, t)| self.refine_min_gap(t))
            .collect();
        let (mut min_dir, mut min_gap) = (gaps[0].1, gaps[0].0);
        for (t, g) in refined {
            if g < min_gap {
                min_gap = g;
                min_dir = t;
            }
        }
        let condition2 = if max_gap < tol {
            BranchVerdict::IdenticallyEqual
        } else if min_gap > tol {
            BranchVerdict::Disjoint
        } else {
            BranchVerdict::Crossing
        };
        Conditions {
            condition1,
            sym_f_norm,
            condition1_threshold: threshold,
            condition2,
            gap_tolerance: tol,
            min_gap,
            max_gap,
            min_gap_direction: min_dir,
            c_circ: (condition2 == BranchVerdict::Disjoint).then_some(min_gap),
            improved_applicable: !(condition2 == BranchVerdict::Crossing && !condition1),
        }
    }

    pub fn report(&self, directions: &[Vec3], sphere_samples: usize) -> Result<GermReport> {
        let records = directions
            .par_iter()
            .map(|t| self.direction(t))
            .collect::<Result<Vec<_>>>()?;
        let conditions = self.check_conditions(sphere_samples);
        let crossing_mu12 = if conditions.condition2 == BranchVerdict::Crossing {
            let t = conditions.min_gap_direction;
            let g = self.spectrum(&t)?.gamma;
            mu12(&t, &g, self.f.f(&t), &self.mu0).ok()
        } else {
            None
        };
        Ok(GermReport {
            eta0: self.eta0,
            nu_under: self.nu_under,
            mu0: self.mu0.m,
            omega_normalization: self.cell_volume.powf(-0.5),
            d: self.f.d,
            f_matrix: self.f.f_matrix,
            directions: records,
            conditions,
            crossing_mu12,
        })
    }
}

/// Gradient-subspace eigenvalue of S(θ): ⟨S ω₃, ω₃⟩ with ω₃ = μ₀^{1/2}θ / |μ₀^{1/2}θ|.
pub fn gradient_eigenvalue(s: &Mat3, theta: &Vec3, mu0: &Mu0) -> f64 {
    let w = (mu0.sqrt * theta).normalize();
    w.dot(&(s * w))
}

/// Eigenvalues of S(θ) from a dense symmetric eigensolver, ascending.
pub fn dense_eigenvalues(s: &Mat3) -> [f64; 3] {
    let (v, _) = sym_eig(s);
    [v[0], v[1], v[2]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::solve_cell_problems;
    use crate::coefficients::{CoefficientFamily, CoefficientSet};
    use crate::lattice::Lattice;
    use crate::solver::SolverOptions;
    use proptest::prelude::*;

    fn mu_general() -> Mu0 {
        Mu0::new(Mat3::new(1.5, 0.2, 0.1, 0.2, 1.0, 0.0, 0.1, 0.0, 0.8)).unwrap()
    }

    fn eta_general() -> Mat3 {
        Mat3::new(2.0, 0.3, -0.2, 0.3, 1.2, 0.1, -0.2, 0.1, 0.9)
    }

    fn unit(v: [f64; 3]) -> Vec3 {
        Vec3::new(v[0], v[1], v[2]).normalize()
    }

    #[test]
    fn isotropic_germ_is_identity() {
        for t in fibonacci_sphere(20) {
            let s = germ_matrix(&t, &Mat3::identity(), 1.0, &Mu0::identity()).unwrap();
            assert!((s - Mat3::identity()).amax() < 1e-14);
            let sp = germ_spectrum(&t, &Mat3::identity(), 1.0, &Mu0::identity()).unwrap();
            for g in sp.gamma {
                assert!((g - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn non_unit_direction_rejected() {
        let e = germ_matrix(&Vec3::new(1.0, 1.0, 0.0), &Mat3::identity(), 1.0, &Mu0::identity());
        assert!(matches!(e, Err(Error::NonUnitDirection(_))));
    }

    #[test]
    fn germ_equals_invariant_form() {
        let mu = mu_general();
        let eta0 = eta_general();
        let g0 = crate::linalg::block_diag(&eta0.try_inverse().unwrap(), 1.3);
        for t in fibonacci_sphere(30) {
            let b = symbol_b(&t, &mu);
            let s = germ_matrix(&t, &eta0, 1.3, &mu).unwrap();
            assert!((s - b.transpose() * g0 * b).amax() < 1e-13);
            assert!((s - germ_matrix(&-t, &eta0, 1.3, &mu).unwrap()).amax() < 1e-14);
        }
    }

    #[test]
    fn mu12_reduces_to_f_for_identity() {
        let t = unit([0.3, -0.4, 0.8]);
        let m = mu12(&t, &[1.0, 1.0, 2.0], 0.25, &Mu0::identity()).unwrap();
        let mut mu = m.mu;
        mu.sort_by(f64::total_cmp);
        assert!((mu[0] + 0.25).abs() < 1e-14 && (mu[1] - 0.25).abs() < 1e-14);
        let a = cross_matrix(&t);
        for (k, v) in m.vectors.unwrap().iter().enumerate() {
            let av = to_complex(&a) * v;
            assert!((av - v * (I * m.sigma[k])).norm() < 1e-12);
        }
        assert!(matches!(
            mu12(&t, &[1.0, 1.1, 2.0], 0.25, &Mu0::identity()),
            Err(Error::NotDegenerate { .. })
        ));
    }

    #[test]
    fn layered_isotropic_has_vanishing_f() {
        let cs = CoefficientSet::new(
            Lattice::standard(),
            CoefficientFamily::layered_isotropic(),
            Mu0::identity(),
            [32, 1, 1],
        )
        .unwrap();
        let c = solve_cell_problems(&cs, &SolverOptions::default()).unwrap();
        let g = GermAnalysis::new(&c, cs.lattice.cell_volume);
        assert!(g.f.sym_norm() < 1e-14);
        let cond = g.check_conditions(200);
        assert!(cond.condition1);
        for t in fibonacci_sphere(10) {
            assert!(cspectral_norm(&g.n_theta_m_route(&t)) < 1e-12);
        }
    }

    #[test]
    fn crossing_example_routes_agree() {
        let cs = CoefficientSet::new(
            Lattice::standard(),
            CoefficientFamily::crossing_example(),
            Mu0::identity(),
            [32, 1, 1],
        )
        .unwrap();
        let c = solve_cell_problems(&cs, &SolverOptions::default()).unwrap();
        let g = GermAnalysis::new(&c, cs.lattice.cell_volume);
        for t in fibonacci_sphere(20) {
            let d = cspectral_norm(&(g.n_theta(&t) - g.n_theta_m_route(&t)));
            assert!(d < 1e-10, "{d}");
        }
        let cond = g.check_conditions(2000);
        assert!(!cond.condition1);
        assert_eq!(cond.condition2, BranchVerdict::Crossing);
        assert!(!cond.improved_applicable);
        let t = cond.min_gap_direction;
        let f = g.f.f(&t).abs();
        assert!(f > 0.02 && f < 0.05, "{f}");
    }

    proptest! {
        #[test]
        fn spectrum_matches_dense_oracle(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, nu in 0.3f64..3.0) {
            prop_assume!(a * a + b * b + c * c > 1e-3);
            let t = unit([a, b, c]);
            let mu = mu_general();
            let eta0 = eta_general();
            let s = germ_matrix(&t, &eta0, nu, &mu).unwrap();
            let sp = germ_spectrum(&t, &eta0, nu, &mu).unwrap();
            let mut ours = sp.gamma;
            ours.sort_by(f64::total_cmp);
            let dense = dense_eigenvalues(&s);
            for k in 0..3 {
                prop_assert!((ours[k] - dense[k]).abs() < 1e-10 * dense[2]);
            }
            for l in 0..3 {
                prop_assert!((s * sp.omega[l] - sp.omega[l] * sp.gamma[l]).norm() < 1e-10);
                for m in 0..3 {
                    let e = if l == m { 1.0 } else { 0.0 };
                    prop_assert!((sp.omega[l].dot(&sp.omega[m]) - e).abs() < 1e-10);
                }
            }
            prop_assert!((gradient_eigenvalue(&s, &t, &mu) - sp.gamma[2]).abs() < 1e-10);
            prop_assert!((sp.gamma[2] - nu * t.dot(&(mu.m * t))).abs() < 1e-12);
        }

        #[test]
        fn n_theta_is_hermitian_and_kills_gradient(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, f in -1.0f64..1.0) {
            prop_assume!(a * a + b * b + c * c > 1e-3);
            let t = unit([a, b, c]);
            let mu = mu_general();
            let n = n_theta(&t, f, &mu);
            prop_assert!((n - n.adjoint()).norm() < 1e-13);
            let w = (mu.sqrt * t).map(|x| C64::new(x, 0.0));
            prop_assert!((n * w).norm() < 1e-13);
        }
    }
}
