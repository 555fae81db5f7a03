//! Maxwell Cauchy problem on an ε-commensurate torus: oscillating and homogenized
//! propagation, weighted projections, field recovery, smoothing and correctors.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{CorrectorSet, MatrixField};
use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::linalg::{cross_matrix, sym_eig, Mat3, Mu0, Vec3, C64};
use crate::solver::{
    apply_mat, curl, div, grad, periodic_elliptic_solve, zeros3, MatCoef, ProblemKind, SolverOptions, VField,
};
use crate::spectral::{eval_on_grid, Band};

/// A vector field given by its values on the padded torus grid.
pub type PField = [Vec<C64>; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TorusOptions {
    /// Δt = min(cfl·h/√c₁, dt_max), then shortened so that τ/Δt is an integer.
    pub cfl: f64,
    pub dt_max: f64,
    /// Relative drift of the discrete energy that aborts a run.
    pub energy_guard: f64,
    /// Points per coefficient period required on every varying axis.
    pub min_points_per_period: usize,
    pub solver: SolverOptions,
}

impl Default for TorusOptions {
    fn default() -> Self {
        Self {
            cfl: 0.2,
            dt_max: 2e-3,
            energy_guard: 1e-3,
            min_points_per_period: 8,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weight {
    Eps,
    Homogenized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectorVariant {
    Plain,
    Smoothed,
}

/// The cell Ω as a torus carrying n³ periods of η(n·x), ε = 1/n.
#[derive(Debug, Clone)]
pub struct TorusProblem {
    pub band: Arc<Band>,
    pub n: usize,
    pub eps: f64,
    pub mu0: Mu0,
    pub cells: Arc<CorrectorSet>,
    pub options: TorusOptions,
    pub c1: f64,
    eta_eps: MatCoef,
    eta_eps_inv: MatCoef,
    /// Axes along which the coefficients, and hence the cell correctors, vary.
    corrector_axes: [bool; 3],
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub tau: f64,
    pub dt: f64,
    pub steps: usize,
    #[serde(skip)]
    pub v: VField,
    /// Trapezoid approximation of ∫₀^τ curl v dτ̃.
    #[serde(skip)]
    pub curl_integral: Option<VField>,
    /// (t, E) at half steps.
    pub energy: Vec<(f64, f64)>,
    pub energy_drift: f64,
    /// max over steps of the change of div μ₀v, relative to |ξ|·|μ₀v|.
    pub divergence_drift: f64,
}

#[derive(Debug, Clone)]
pub struct HomogenizedState {
    pub tau: f64,
    pub v: VField,
    /// ∫₀^τ v₀ dτ̃, exact per mode.
    pub v_integral: VField,
}

/// u, v, w, z at time τ together with u(0), w(0); u and w on the padded grid.
#[derive(Debug, Clone)]
pub struct FieldState {
    pub tau: f64,
    pub v: VField,
    pub z: VField,
    pub u: PField,
    pub w: PField,
    pub u0: PField,
    pub w0: PField,
}

/// The corrected approximants, all on the padded grid.
#[derive(Debug, Clone)]
pub struct Approximants {
    /// v₀ + εμ₀⁻¹Ψ^ε curl v₀
    pub v: PField,
    /// z₀ + εΨ^ε curl v₀
    pub z: PField,
    /// ((η⁰)⁻¹ + Σ^ε) curl v₀
    pub flux: PField,
    /// (1 + Σ∘^ε)(u₀(τ) − u₀(0))
    pub u_diff: PField,
    /// η̃^ε(η⁰)⁻¹(w₀(τ) − w₀(0))
    pub w_diff: PField,
}

fn inner(a: &VField, b: &VField) -> f64 {
    (0..3)
        .map(|d| a[d].iter().zip(&b[d]).map(|(x, y)| (x.conj() * y).re).sum::<f64>())
        .sum()
}

fn mat_vec(m: &Mat3, v: &VField) -> VField {
    let n = v[0].len();
    let mut out = zeros3(n);
    for i in 0..3 {
        for j in 0..3 {
            let s = m[(i, j)];
            if s != 0.0 {
                for k in 0..n {
                    out[i][k] += v[j][k] * s;
                }
            }
        }
    }
    out
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

impl TorusProblem {
    pub fn new(
        cs: &CoefficientSet,
        cells: Arc<CorrectorSet>,
        n: usize,
        grid: [usize; 3],
        options: TorusOptions,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Invalid("n must be a positive integer".into()));
        }
        let band = Arc::new(Band::new(cs.lattice.clone(), grid)?);
        let varying = cs.model().varying_axes();
        let corrector_axes = varying;
        for j in 0..3 {
            if varying[j] && grid[j] < options.min_points_per_period * n {
                return Err(Error::Unresolved {
                    n,
                    reason: format!(
                        "axis {j}: {} points for {n} periods, need at least {} per period",
                        grid[j], options.min_points_per_period
                    ),
                });
            }
            if varying[j] && band.padded[j] % n != 0 {
                return Err(Error::Unresolved {
                    n,
                    reason: format!("axis {j}: quadrature grid {} is not a multiple of {n}", band.padded[j]),
                });
            }
        }
        let pts = band.padded_points();
        let nf = n as f64;
        let eta: Vec<Mat3> = pts.par_iter().map(|x| cs.periodic.eta_at(&(x * nf))).collect();
        let eta_eps = if cs.model().is_constant() {
            MatCoef::Constant(eta[0])
        } else {
            MatCoef::Field(Arc::new(eta))
        };
        let eta_eps_inv = eta_eps.inverse()?;
        Ok(Self {
            band,
            n,
            eps: 1.0 / nf,
            mu0: cs.mu0.clone(),
            cells,
            options,
            c1: cs.constants.c1,
            eta_eps,
            eta_eps_inv,
            corrector_axes,
        })
    }

    pub fn eta_coef(&self) -> &MatCoef {
        &self.eta_eps
    }

    pub fn eta_inv_coef(&self) -> &MatCoef {
        &self.eta_eps_inv
    }

    /// Smallest grid spacing.
    pub fn spacing(&self) -> f64 {
        (0..3)
            .map(|j| self.band.lattice.basis[j].norm() / self.band.grid[j] as f64)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn time_step(&self, tau: f64) -> (f64, usize) {
        let dt = (self.options.cfl * self.spacing() / self.c1.sqrt()).min(self.options.dt_max);
        if tau <= 0.0 {
            return (dt, 0);
        }
        let steps = (tau / dt).ceil().max(1.0) as usize;
        (tau / steps as f64, steps)
    }

    /// f − ∇ω with div(A(f − ∇ω)) = 0, A = η^ε or η⁰.
    pub fn project_weighted(&self, f: &VField, weight: Weight) -> Result<VField> {
        let coef = match weight {
            Weight::Eps => self.eta_eps.clone(),
            Weight::Homogenized => MatCoef::Constant(self.cells.eta0),
        };
        let rhs: Vec<C64> = div(&self.band, &apply_mat(&self.band, &coef, f)).into_iter().map(|x| -x).collect();
        let (w, _) = periodic_elliptic_solve(
            &self.band,
            &coef,
            &[rhs],
            ProblemKind::ScalarDiffusion,
            &self.options.solver,
        )?;
        let g = grad(&self.band, &w[0]);
        let mut out = f.clone();
        for d in 0..3 {
            for (a, b) in out[d].iter_mut().zip(&g[d]) {
                *a -= b;
            }
        }
        Ok(out)
    }

    /// K v = curl (η^ε)⁻¹ curl v.
    pub fn stiffness(&self, v: &VField) -> VField {
        curl(&self.band, &apply_mat(&self.band, &self.eta_eps_inv, &curl(&self.band, v)))
    }

    /// div μ₀v per mode.
    fn mu_divergence(&self, v: &VField) -> Vec<C64> {
        div(&self.band, &mat_vec(&self.mu0.m, v))
    }

    /// Leapfrog for μ₀v'' = −Kv, v(0) = φ, μ₀v'(0) = ψ, with a Taylor first step.
    pub fn propagate_eps(&self, phi: &VField, psi: &VField, tau: f64) -> Result<Trajectory> {
        self.propagate_eps_with_dt(phi, psi, tau, None)
    }

    pub fn propagate_eps_with_dt(&self, phi: &VField, psi: &VField, tau: f64, dt: Option<f64>) -> Result<Trajectory> {
        let (dt, steps) = match dt {
            Some(d) if tau > 0.0 => {
                let s = (tau / d).ceil().max(1.0) as usize;
                (tau / s as f64, s)
            }
            _ => self.time_step(tau),
        };
        let band = &self.band;
        let nm = band.n_modes();
        let d0 = self.mu_divergence(phi);
        let xi_norm: Vec<f64> = band.xi.iter().map(|x| x.norm()).collect();
        let div_drift = |v: &VField| -> f64 {
            let d = self.mu_divergence(v);
            let num: f64 = (0..nm)
                .filter(|&k| xi_norm[k] > 0.0)
                .map(|k| (d[k] - d0[k]).norm_sqr() / (xi_norm[k] * xi_norm[k]))
                .sum();
            let den = inner(&mat_vec(&self.mu0.m, v), &mat_vec(&self.mu0.m, v));
            if den > 0.0 {
                (num / den).sqrt()
            } else {
                num.sqrt()
            }
        };
        if steps == 0 {
            return Ok(Trajectory {
                tau: 0.0,
                dt,
                steps: 0,
                v: phi.clone(),
                curl_integral: Some(zeros3(nm)),
                energy: vec![],
                energy_drift: 0.0,
                divergence_drift: 0.0,
            });
        }
        let minv = self.mu0.inv;
        let accel = |kv: &VField| -> VField {
            let mut a = mat_vec(&minv, kv);
            a.iter_mut().flatten().for_each(|x| *x = -*x);
            a
        };
        let mut prev = phi.clone();
        let a0 = accel(&self.stiffness(&prev));
        let dpsi = mat_vec(&minv, psi);
        let mut cur = zeros3(nm);
        for d in 0..3 {
            for k in 0..nm {
                cur[d][k] = prev[d][k] + dpsi[d][k] * dt + a0[d][k] * (0.5 * dt * dt);
            }
        }
        let mut integral = zeros3(nm);
        let c0 = curl(band, &prev);
        let add = |acc: &mut VField, c: &VField, w: f64| {
            for d in 0..3 {
                for k in 0..nm {
                    acc[d][k] += c[d][k] * w;
                }
            }
        };
        add(&mut integral, &c0, 0.5 * dt);
        let energy_half = |vn1: &VField, vn: &VField, kvn1: &VField| -> f64 {
            let mut dv = zeros3(nm);
            for d in 0..3 {
                for k in 0..nm {
                    dv[d][k] = (vn1[d][k] - vn[d][k]) / dt;
                }
            }
            0.5 * inner(&mat_vec(&self.mu0.m, &dv), &dv) + 0.5 * inner(kvn1, vn)
        };
        let mut energy = Vec::with_capacity(steps.min(4096));
        let mut e_ref = f64::NAN;
        let mut drift: f64 = 0.0;
        let mut ddrift: f64 = div_drift(&cur);
        let record_every = (steps / 2000).max(1);
        for step in 1..=steps {
            let kcur = self.stiffness(&cur);
            let e = energy_half(&cur, &prev, &kcur);
            if step == 1 {
                e_ref = e;
            }
            let rel = if e_ref.abs() > 0.0 { (e - e_ref).abs() / e_ref.abs() } else { (e - e_ref).abs() };
            drift = drift.max(rel);
            if !(rel <= self.options.energy_guard) {
                return Err(Error::EnergyBlowUp { step, drift: rel });
            }
            if step % record_every == 0 || step == 1 {
                energy.push(((step as f64 - 0.5) * dt, e));
            }
            let ccur = curl(band, &cur);
            if step == steps {
                add(&mut integral, &ccur, 0.5 * dt);
                return Ok(Trajectory {
                    tau,
                    dt,
                    steps,
                    v: cur,
                    curl_integral: Some(integral),
                    energy,
                    energy_drift: drift,
                    divergence_drift: ddrift,
                });
            }
            add(&mut integral, &ccur, dt);
            let acc = accel(&kcur);
            let mut next = zeros3(nm);
            for d in 0..3 {
                for k in 0..nm {
                    next[d][k] = cur[d][k] * 2.0 - prev[d][k] + acc[d][k] * (dt * dt);
                }
            }
            ddrift = ddrift.max(div_drift(&next));
            prev = cur;
            cur = next;
        }
        unreachable!("loop returns at the final step")
    }

    /// S_J(ξ) = μ₀^{-1/2} r(ξ)ᵀ (η⁰)⁻¹ r(ξ) μ₀^{-1/2}.
    fn s_j(&self, xi: &Vec3) -> Mat3 {
        let r = cross_matrix(xi);
        self.mu0.inv_sqrt * r.transpose() * self.cells.eta0_inv * r * self.mu0.inv_sqrt
    }

    /// Exact per-mode solution of the homogenized problem and its time integral.
    pub fn propagate_homogenized(&self, phi: &VField, psi: &VField, tau: f64) -> HomogenizedState {
        let band = &self.band;
        let nm = band.n_modes();
        let ms = self.mu0.sqrt;
        let mis = self.mu0.inv_sqrt;
        let per_mode: Vec<([C64; 3], [C64; 3])> = (0..nm)
            .into_par_iter()
            .map(|k| {
                let a: [C64; 3] = [0, 1, 2].map(|i| (0..3).map(|j| phi[j][k] * ms[(i, j)]).sum());
                let b: [C64; 3] = [0, 1, 2].map(|i| (0..3).map(|j| psi[j][k] * mis[(i, j)]).sum());
                let (lam, vecs) = sym_eig(&self.s_j(&band.xi[k]));
                let mut y = [C64::default(); 3];
                let mut yi = [C64::default(); 3];
                for l in 0..3 {
                    let e = vecs.column(l);
                    let pa: C64 = (0..3).map(|i| a[i] * e[i]).sum();
                    let pb: C64 = (0..3).map(|i| b[i] * e[i]).sum();
                    let s = lam[l].max(0.0).sqrt();
                    let x = tau * s;
                    let cos = x.cos();
                    let sin_over = tau * sinc(x);
                    // ∫₀^τ cos = sin(x)/s, ∫₀^τ sin(ts)/s = (1 − cos x)/s² = τ²/2·sinc²(x/2)
                    let int_cos = sin_over;
                    let int_sin = 0.5 * tau * tau * sinc(0.5 * x).powi(2);
                    let c_t = pa * cos + pb * sin_over;
                    let c_i = pa * int_cos + pb * int_sin;
                    for i in 0..3 {
                        y[i] += c_t * e[i];
                        yi[i] += c_i * e[i];
                    }
                }
                let v: [C64; 3] = [0, 1, 2].map(|i| (0..3).map(|j| y[j] * mis[(i, j)]).sum());
                let vi: [C64; 3] = [0, 1, 2].map(|i| (0..3).map(|j| yi[j] * mis[(i, j)]).sum());
                (v, vi)
            })
            .collect();
        let mut v = zeros3(nm);
        let mut vi = zeros3(nm);
        for (k, (a, b)) in per_mode.into_iter().enumerate() {
            for d in 0..3 {
                v[d][k] = a[d];
                vi[d][k] = b[d];
            }
        }
        HomogenizedState {
            tau,
            v,
            v_integral: vi,
        }
    }

    /// ½⟨μ₀v', v'⟩ + ½⟨(η⁰)⁻¹curl v, curl v⟩ of the homogenized solution.
    pub fn homogenized_energy(&self, phi: &VField, psi: &VField, tau: f64) -> f64 {
        let vt = self.homogenized_velocity(phi, psi, tau);
        let v = self.propagate_homogenized(phi, psi, tau).v;
        let c = curl(&self.band, &v);
        0.5 * inner(&mat_vec(&self.mu0.m, &vt), &vt) + 0.5 * inner(&mat_vec(&self.cells.eta0_inv, &c), &c)
    }

    /// ∂_τ v₀ in closed form.
    pub fn homogenized_velocity(&self, phi: &VField, psi: &VField, tau: f64) -> VField {
        let band = &self.band;
        let nm = band.n_modes();
        let ms = self.mu0.sqrt;
        let mis = self.mu0.inv_sqrt;
        let mut out = zeros3(nm);
        for k in 0..nm {
            let a: [C64; 3] = [0, 1, 2].map(|i| (0..3).map(|j| phi[j][k] * ms[(i, j)]).sum());
            let b: [C64; 3] = [0, 1, 2].map(|i| (0..3).map(|j| psi[j][k] * mis[(i, j)]).sum());
            let (lam, vecs) = sym_eig(&self.s_j(&band.xi[k]));
            let mut y = [C64::default(); 3];
            for l in 0..3 {
                let e = vecs.column(l);
                let pa: C64 = (0..3).map(|i| a[i] * e[i]).sum();
                let pb: C64 = (0..3).map(|i| b[i] * e[i]).sum();
                let s = lam[l].max(0.0).sqrt();
                let x = tau * s;
                let c = -pa * (s * x.sin()) + pb * x.cos();
                for i in 0..3 {
                    y[i] += c * e[i];
                }
            }
            for i in 0..3 {
                out[i][k] = (0..3).map(|j| y[j] * mis[(i, j)]).sum();
            }
        }
        out
    }

    pub fn to_padded(&self, v: &VField) -> PField {
        let c: Vec<Vec<C64>> = v.par_iter().map(|c| self.band.to_padded(c)).collect();
        [c[0].clone(), c[1].clone(), c[2].clone()]
    }

    fn coef_times(&self, coef: &MatCoef, v: &PField) -> PField {
        match coef {
            MatCoef::Constant(m) => {
                let npad = v[0].len();
                let mut out = [vec![C64::default(); npad], vec![C64::default(); npad], vec![C64::default(); npad]];
                for p in 0..npad {
                    for i in 0..3 {
                        out[i][p] = (0..3).map(|j| v[j][p] * m[(i, j)]).sum();
                    }
                }
                out
            }
            MatCoef::Field(s) => pointwise(s, v),
        }
    }

    /// u, w, v, z at τ for the oscillating problem.
    pub fn recover_eps(&self, traj: &Trajectory, f: &VField) -> Result<FieldState> {
        let integral = traj
            .curl_integral
            .as_ref()
            .ok_or_else(|| Error::Invalid("trajectory has no curl history".into()))?;
        let u0b = self.project_weighted(f, Weight::Eps)?;
        let u0 = self.to_padded(&u0b);
        let w0 = self.coef_times(&self.eta_eps, &u0);
        let ip = self.to_padded(integral);
        let mut w = w0.clone();
        for d in 0..3 {
            for (a, b) in w[d].iter_mut().zip(&ip[d]) {
                *a += b;
            }
        }
        let u = self.coef_times(&self.eta_eps_inv, &w);
        Ok(FieldState {
            tau: traj.tau,
            v: traj.v.clone(),
            z: mat_vec(&self.mu0.m, &traj.v),
            u,
            w,
            u0,
            w0,
        })
    }

    /// u₀, w₀, v₀, z₀ at τ for the homogenized problem.
    pub fn recover_homogenized(&self, hom: &HomogenizedState, f: &VField) -> Result<FieldState> {
        let u0b = self.project_weighted(f, Weight::Homogenized)?;
        let ci = curl(&self.band, &hom.v_integral);
        let du = mat_vec(&self.cells.eta0_inv, &ci);
        let mut ub = u0b.clone();
        for d in 0..3 {
            for (a, b) in ub[d].iter_mut().zip(&du[d]) {
                *a += b;
            }
        }
        let eta0 = self.cells.eta0;
        Ok(FieldState {
            tau: hom.tau,
            v: hom.v.clone(),
            z: mat_vec(&self.mu0.m, &hom.v),
            u: self.to_padded(&ub),
            w: self.to_padded(&mat_vec(&eta0, &ub)),
            u0: self.to_padded(&u0b),
            w0: self.to_padded(&mat_vec(&eta0, &u0b)),
        })
    }

    /// Sharp cutoff to the modes strictly inside Ω̃/ε.
    pub fn smoothing_pi(&self, v: &VField) -> VField {
        let mut out = v.clone();
        for (k, xi) in self.band.xi.iter().enumerate() {
            if !self.band.lattice.in_scaled_brillouin(xi, self.eps) {
                for d in 0..3 {
                    out[d][k] = C64::default();
                }
            }
        }
        out
    }

    /// Values of the cell matrix field M at n·x on the padded torus grid.
    pub fn corrector_values(&self, m: &MatrixField) -> Vec<Mat3> {
        let cb = &self.cells.band;
        let q = [0, 1, 2].map(|j| if self.corrector_axes[j] { self.band.padded[j] / self.n } else { 1 });
        let vals: Vec<Vec<C64>> = m.entries.par_iter().map(|c| eval_on_grid(&cb.modes, c, q)).collect();
        let [p0, p1, p2] = self.band.padded;
        let mut out = Vec::with_capacity(p0 * p1 * p2);
        for i in 0..p0 {
            for j in 0..p1 {
                for k in 0..p2 {
                    let c = ((i % q[0]) * q[1] + (j % q[1])) * q[2] + (k % q[2]);
                    out.push(Mat3::from_fn(|r, s| vals[r * m.cols + s][c].re));
                }
            }
        }
        out
    }

    /// The corrected approximants of the oscillating fields built from the homogenized state.
    pub fn apply_corrector(&self, hom: &FieldState, variant: CorrectorVariant) -> Approximants {
        let cells = &self.cells;
        let band = &self.band;
        let smooth = |v: &VField| match variant {
            CorrectorVariant::Plain => v.clone(),
            CorrectorVariant::Smoothed => self.smoothing_pi(v),
        };
        let c = curl(band, &hom.v);
        let cp = self.to_padded(&c);
        let cs = self.to_padded(&smooth(&c));
        let psi = self.corrector_values(&cells.psi());
        let sigma = self.corrector_values(&cells.sigma());
        let sigma_circ = self.corrector_values(&cells.sigma_circ());
        let eps = self.eps;

        let psi_c = pointwise(&psi, &cs);
        let v0 = self.to_padded(&hom.v);
        let z0 = self.to_padded(&hom.z);
        let mi = self.mu0.inv;
        let npad = band.pad_len();
        let mut v = v0.clone();
        let mut z = z0.clone();
        for p in 0..npad {
            for i in 0..3 {
                let pc = psi_c[i][p];
                z[i][p] += pc * eps;
                v[i][p] += (0..3).map(|j| psi_c[j][p] * mi[(i, j)]).sum::<C64>() * eps;
            }
        }
        let sig_c = pointwise(&sigma, &cs);
        let mut flux = self.coef_times(&MatCoef::Constant(cells.eta0_inv), &cp);
        add_to(&mut flux, &sig_c);

        let du_pad: PField = sub(&hom.u, &hom.u0);
        let dw_pad: PField = sub(&hom.w, &hom.w0);
        let (du_s, dw_s) = match variant {
            CorrectorVariant::Plain => (du_pad.clone(), dw_pad.clone()),
            CorrectorVariant::Smoothed => {
                let du_b = self.from_padded_exact(&du_pad);
                let dw_b = self.from_padded_exact(&dw_pad);
                (self.to_padded(&self.smoothing_pi(&du_b)), self.to_padded(&self.smoothing_pi(&dw_b)))
            }
        };
        let mut u_diff = du_pad.clone();
        add_to(&mut u_diff, &pointwise(&sigma_circ, &du_s));
        // η̃(η⁰)⁻¹ − 1 with η̃ = η^ε(1 + Σ∘)
        let eta = match &self.eta_eps {
            MatCoef::Constant(m) => vec![*m; npad],
            MatCoef::Field(s) => s.as_ref().clone(),
        };
        let e0i = cells.eta0_inv;
        let tilde_minus: Vec<Mat3> = (0..npad)
            .map(|p| eta[p] * (Mat3::identity() + sigma_circ[p]) * e0i - Mat3::identity())
            .collect();
        let mut w_diff = dw_pad.clone();
        add_to(&mut w_diff, &pointwise(&tilde_minus, &dw_s));
        Approximants {
            v,
            z,
            flux,
            u_diff,
            w_diff,
        }
    }

    /// Band coefficients of a padded-grid field known to be band-limited.
    pub fn from_padded_exact(&self, p: &PField) -> VField {
        let c: Vec<Vec<C64>> = p.par_iter().map(|x| self.band.from_padded(x.clone())).collect();
        [c[0].clone(), c[1].clone(), c[2].clone()]
    }

    /// (η^ε)⁻¹ curl v on the padded grid.
    pub fn flux_eps(&self, v: &VField) -> PField {
        self.coef_times(&self.eta_eps_inv, &self.to_padded(&curl(&self.band, v)))
    }

    /// L₂ norm (normalized by |Ω|) of a padded-grid field.
    pub fn l2(&self, p: &PField) -> f64 {
        let n = p[0].len() as f64;
        (p.iter().flatten().map(|x| x.norm_sqr()).sum::<f64>() / n).sqrt()
    }

    /// H^s norm (normalized by |Ω|) of a padded-grid field, computed spectrally.
    pub fn hs(&self, p: &PField, s: f64) -> f64 {
        let xi = self.band.padded_xi();
        let mut total = 0.0;
        for c in p {
            let spectrum = self.band.padded_spectrum(c.clone());
            total += spectrum
                .iter()
                .zip(&xi)
                .map(|(a, x)| (1.0 + x.norm_squared()).powf(s) * a.norm_sqr())
                .sum::<f64>();
        }
        total.sqrt()
    }

    /// H^s norm of a band field.
    pub fn hs_band(&self, v: &VField, s: f64) -> f64 {
        let comps: Vec<&[C64]> = v.iter().map(|c| c.as_slice()).collect();
        crate::spectral::hs_norm(&self.band.xi, &comps, s)
    }

    pub fn curl_band(&self, v: &VField) -> VField {
        curl(&self.band, v)
    }
}

fn pointwise(m: &[Mat3], v: &PField) -> PField {
    let npad = v[0].len();
    let rows: Vec<[C64; 3]> = (0..npad)
        .into_par_iter()
        .map(|p| {
            let a = &m[p];
            [0, 1, 2].map(|i| (0..3).map(|j| v[j][p] * a[(i, j)]).sum())
        })
        .collect();
    let mut out = [vec![C64::default(); npad], vec![C64::default(); npad], vec![C64::default(); npad]];
    for (p, r) in rows.into_iter().enumerate() {
        for i in 0..3 {
            out[i][p] = r[i];
        }
    }
    out
}

fn add_to(a: &mut PField, b: &PField) {
    for d in 0..3 {
        for (x, y) in a[d].iter_mut().zip(&b[d]) {
            *x += y;
        }
    }
}

pub fn sub(a: &PField, b: &PField) -> PField {
    let mut out = a.clone();
    for d in 0..3 {
        for (x, y) in out[d].iter_mut().zip(&b[d]) {
            *x -= y;
        }
    }
    out
}

/// Random real field with modes |m_j| ≤ `max_index`, amplitudes decaying like (1 + |m|²)^{-decay/2}.
/// Modes are drawn in a fixed index order, so the same seed gives the same field on every grid
/// that retains them.
pub fn random_band_limited(band: &Band, max_index: i64, decay: f64, seed: u64) -> VField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = zeros3(band.n_modes());
    let index: std::collections::HashMap<[i64; 3], usize> =
        band.modes.iter().enumerate().map(|(k, m)| (*m, k)).collect();
    let r = max_index;
    for m0 in -r..=r {
        for m1 in -r..=r {
            for m2 in -r..=r {
                let m = [m0, m1, m2];
                let neg = [-m0, -m1, -m2];
                if m < neg {
                    continue;
                }
                let amp = (1.0 + (m0 * m0 + m1 * m1 + m2 * m2) as f64).powf(-decay / 2.0);
                let c: [C64; 3] = std::array::from_fn(|_| {
                    let re = rng.random_range(-1.0..1.0);
                    let im = if m == neg { 0.0 } else { rng.random_range(-1.0..1.0) };
                    C64::new(re, im) * amp
                });
                if let (Some(&k), Some(&kn)) = (index.get(&m), index.get(&neg)) {
                    for d in 0..3 {
                        out[d][k] = c[d];
                        out[d][kn] = c[d].conj();
                    }
                }
            }
        }
    }
    out
}

/// μ₀-orthogonal projection onto {div μ₀φ = 0}: φ̂ − ξ⟨ξ, μ₀φ̂⟩/⟨ξ, μ₀ξ⟩ per mode.
pub fn project_mu_solenoidal(band: &Band, mu0: &Mu0, phi: &VField) -> VField {
    let mut out = phi.clone();
    for (k, xi) in band.xi.iter().enumerate() {
        let mx = mu0.m * xi;
        let den = xi.dot(&mx);
        if den == 0.0 {
            continue;
        }
        let s: C64 = (0..3).map(|i| phi[i][k] * mx[i]).sum::<C64>() / den;
        for i in 0..3 {
            out[i][k] -= s * xi[i];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::solve_cell_problems;
    use crate::coefficients::CoefficientFamily;
    use crate::lattice::Lattice;
    use crate::solver::plane_wave;

    fn setup(fam: CoefficientFamily, cell_grid: [usize; 3], n: usize, grid: [usize; 3]) -> (CoefficientSet, TorusProblem) {
        let cs = CoefficientSet::new(Lattice::standard(), fam, Mu0::identity(), cell_grid).unwrap();
        let cells = Arc::new(solve_cell_problems(&cs, &SolverOptions::default()).unwrap());
        let t = TorusProblem::new(&cs, cells, n, grid, TorusOptions::default()).unwrap();
        (cs, t)
    }

    fn max_diff(a: &VField, b: &VField) -> f64 {
        (0..3)
            .flat_map(|d| a[d].iter().zip(&b[d]).map(|(x, y)| (x - y).norm()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn single_j_mode_oscillates_as_cosine() {
        let eta = Mat3::from_diagonal(&Vec3::new(2.0, 1.5, 1.0));
        let (_, t) = setup(CoefficientFamily::constant(eta, 1.0), [4, 4, 4], 2, [8, 8, 8]);
        let band = &t.band;
        // φ = e₂ e^{i x₁}: curl φ = i e₁ × e₂ = i e₃; γ = (η⁻¹)₃₃ = 1
        let mut phi = zeros3(band.n_modes());
        phi[1] = plane_wave(band, [1, 0, 0], C64::new(1.0, 0.0));
        let psi = zeros3(band.n_modes());
        let tau = 1.0;
        let hom = t.propagate_homogenized(&phi, &psi, tau);
        let mut expect = zeros3(band.n_modes());
        expect[1] = plane_wave(band, [1, 0, 0], C64::new(tau.cos(), 0.0));
        assert!(max_diff(&hom.v, &expect) < 1e-14);
        let opts = TorusOptions {
            dt_max: 2.5e-4,
            ..Default::default()
        };
        let t2 = TorusProblem { options: opts, ..t.clone() };
        let traj = t2.propagate_eps(&phi, &psi, tau).unwrap();
        assert!(max_diff(&traj.v, &expect) < 1e-6, "{}", max_diff(&traj.v, &expect));
        assert!(traj.energy_drift < 1e-10);
        assert!(traj.divergence_drift < 1e-12);
    }

    #[test]
    fn zero_time_returns_initial_data() {
        let (_, t) = setup(CoefficientFamily::layered_isotropic(), [16, 1, 1], 2, [32, 8, 8]);
        let phi = project_mu_solenoidal(&t.band, &t.mu0, &random_band_limited(&t.band, 2, 2.0, 1));
        let psi = zeros3(t.band.n_modes());
        let traj = t.propagate_eps(&phi, &psi, 0.0).unwrap();
        assert_eq!(max_diff(&traj.v, &phi), 0.0);
        let hom = t.propagate_homogenized(&phi, &psi, 0.0);
        assert!(max_diff(&hom.v, &phi) < 1e-15);
    }

    #[test]
    fn time_step_refinement_is_second_order() {
        let eta = Mat3::from_diagonal(&Vec3::new(2.0, 1.5, 1.0));
        let (_, t) = setup(CoefficientFamily::constant(eta, 1.0), [4, 4, 4], 2, [8, 8, 8]);
        let phi = project_mu_solenoidal(&t.band, &t.mu0, &random_band_limited(&t.band, 2, 1.0, 3));
        let f = random_band_limited(&t.band, 2, 1.0, 4);
        let psi: VField = {
            let c = t.curl_band(&f);
            [0, 1, 2].map(|d| c[d].iter().map(|x| -x).collect())
        };
        let hom = t.propagate_homogenized(&phi, &psi, 1.0);
        let e1 = max_diff(&t.propagate_eps_with_dt(&phi, &psi, 1.0, Some(0.02)).unwrap().v, &hom.v);
        let e2 = max_diff(&t.propagate_eps_with_dt(&phi, &psi, 1.0, Some(0.01)).unwrap().v, &hom.v);
        assert!(e1 / e2 >= 3.5, "{e1} {e2}");
    }

    #[test]
    fn large_time_step_trips_energy_guard() {
        let (_, t) = setup(CoefficientFamily::layered_isotropic(), [16, 1, 1], 2, [32, 8, 8]);
        let phi = project_mu_solenoidal(&t.band, &t.mu0, &random_band_limited(&t.band, 2, 0.0, 5));
        let mut phi2 = phi.clone();
        // add a high-frequency component so the instability shows quickly
        let k = crate::solver::find_mode(&t.band, [15, 0, 0]).unwrap();
        let kn = crate::solver::find_mode(&t.band, [-15, 0, 0]).unwrap();
        phi2[1][k] = C64::new(1.0, 0.0);
        phi2[1][kn] = C64::new(1.0, 0.0);
        let psi = zeros3(t.band.n_modes());
        let r = t.propagate_eps_with_dt(&phi2, &psi, 5.0, Some(0.5));
        assert!(matches!(r, Err(Error::EnergyBlowUp { .. })), "{r:?}");
    }

    #[test]
    fn unresolved_eps_is_rejected() {
        let cs = CoefficientSet::new(Lattice::standard(), CoefficientFamily::layered_isotropic(), Mu0::identity(), [16, 1, 1])
            .unwrap();
        let cells = Arc::new(solve_cell_problems(&cs, &SolverOptions::default()).unwrap());
        let r = TorusProblem::new(&cs, cells, 8, [32, 8, 8], TorusOptions::default());
        assert!(matches!(r, Err(Error::Unresolved { .. })));
    }

    #[test]
    fn projections_remove_gradients_and_keep_curl() {
        let (_, t) = setup(CoefficientFamily::crossing_example(), [16, 1, 1], 2, [32, 8, 8]);
        let f = random_band_limited(&t.band, 2, 1.0, 7);
        for w in [Weight::Eps, Weight::Homogenized] {
            let p = t.project_weighted(&f, w).unwrap();
            let cf = t.curl_band(&f);
            let cp = t.curl_band(&p);
            assert!(max_diff(&cf, &cp) < 1e-9);
            let coef = match w {
                Weight::Eps => t.eta_coef().clone(),
                Weight::Homogenized => MatCoef::Constant(t.cells.eta0),
            };
            let d = div(&t.band, &apply_mat(&t.band, &coef, &p));
            let scale = f.iter().flatten().map(|x| x.norm()).fold(0.0, f64::max);
            assert!(d.iter().map(|x| x.norm()).fold(0.0, f64::max) < 1e-9 * scale);
            let pp = t.project_weighted(&p, w).unwrap();
            assert!(max_diff(&pp, &p) < 1e-9);
            // gradients are removed
            let chi = random_band_limited(&t.band, 2, 1.0, 8)[0].clone();
            let g = grad(&t.band, &chi);
            let pg = t.project_weighted(&g, w).unwrap();
            assert!(pg.iter().flatten().map(|x| x.norm()).fold(0.0, f64::max) < 1e-9);
        }
    }

    #[test]
    fn homogenized_energy_is_conserved() {
        let (_, t) = setup(CoefficientFamily::crossing_example(), [16, 1, 1], 2, [32, 8, 8]);
        let phi = project_mu_solenoidal(&t.band, &t.mu0, &random_band_limited(&t.band, 2, 1.0, 9));
        let f = random_band_limited(&t.band, 2, 1.0, 10);
        let c = t.curl_band(&f);
        let psi: VField = [0, 1, 2].map(|d| c[d].iter().map(|x| -x).collect());
        let e0 = t.homogenized_energy(&phi, &psi, 0.0);
        for tau in [0.5, 1.0, 3.7] {
            let e = t.homogenized_energy(&phi, &psi, tau);
            assert!((e - e0).abs() <= 1e-12 * e0, "{e} {e0}");
        }
    }

    #[test]
    fn constant_single_mode_field_recovery() {
        let (_, t) = setup(CoefficientFamily::constant(Mat3::identity(), 1.0), [4, 4, 4], 1, [8, 8, 8]);
        let band = &t.band;
        // f = e₂ cos x₁ → ψ = −curl f = e₃ sin x₁ ; v = e₃ sin(x₁) sin τ ; u(τ) = u(0) + ∫ curl v
        let mut f = zeros3(band.n_modes());
        f[1] = plane_wave(band, [1, 0, 0], C64::new(0.5, 0.0));
        let kn = crate::solver::find_mode(band, [-1, 0, 0]).unwrap();
        f[1][kn] = C64::new(0.5, 0.0);
        let c = t.curl_band(&f);
        let psi: VField = [0, 1, 2].map(|d| c[d].iter().map(|x| -x).collect());
        let phi = zeros3(band.n_modes());
        let tau = 0.7;
        let hom = t.propagate_homogenized(&phi, &psi, tau);
        let hs = t.recover_homogenized(&hom, &f).unwrap();
        // curl(e₃ sin x₁) = −e₂ cos x₁; ∫₀^τ sin = 1 − cos τ → u(τ) = e₂ cos x₁ (1 − (1 − cos τ)) = e₂ cos x₁ cos τ
        let pts = band.padded_points();
        for (p, x) in pts.iter().enumerate().step_by(7) {
            let e = x[0].cos() * tau.cos();
            assert!((hs.u[1][p].re - e).abs() < 1e-13);
            assert!(hs.u[0][p].norm() < 1e-13 && hs.u[2][p].norm() < 1e-13);
        }
        let opts = TorusOptions {
            dt_max: 1e-3,
            ..Default::default()
        };
        let t2 = TorusProblem { options: opts, ..t.clone() };
        let traj = t2.propagate_eps(&phi, &psi, tau).unwrap();
        let es = t2.recover_eps(&traj, &f).unwrap();
        assert!(t.l2(&sub(&es.u, &hs.u)) < 1e-6);
    }

    #[test]
    fn layered_corrector_sampling_matches_closed_form() {
        let (_, t) = setup(CoefficientFamily::layered_isotropic(), [32, 1, 1], 4, [64, 8, 8]);
        let psi = t.corrector_values(&t.cells.psi());
        let pts = t.band.padded_points();
        for (p, x) in pts.iter().enumerate() {
            let e = 0.5 * (4.0 * x[0]).cos();
            assert!((psi[p][(2, 1)] - e).abs() < 1e-9, "{} {}", psi[p][(2, 1)], e);
        }
    }

    #[test]
    fn smoothing_is_idempotent_and_cuts_outside_zone() {
        let (_, t) = setup(CoefficientFamily::layered_isotropic(), [16, 1, 1], 2, [32, 8, 8]);
        let u = random_band_limited(&t.band, 3, 0.0, 11);
        let p = t.smoothing_pi(&u);
        assert_eq!(max_diff(&t.smoothing_pi(&p), &p), 0.0);
        // ε = 1/2: Ω̃/ε = {|ξ_j| < 1}, only the zero mode survives
        for (k, m) in t.band.modes.iter().enumerate() {
            if *m != [0, 0, 0] {
                assert!(p.iter().all(|c| c[k] == C64::default()));
            }
        }
    }

    #[test]
    fn constant_coefficients_correctors_vanish() {
        let eta = Mat3::from_diagonal(&Vec3::new(2.0, 1.5, 1.0));
        let (_, t) = setup(CoefficientFamily::constant(eta, 1.0), [4, 4, 4], 2, [8, 8, 8]);
        let f = random_band_limited(&t.band, 2, 1.0, 12);
        let c = t.curl_band(&f);
        let psi: VField = [0, 1, 2].map(|d| c[d].iter().map(|x| -x).collect());
        let phi = zeros3(t.band.n_modes());
        let hom = t.propagate_homogenized(&phi, &psi, 1.0);
        let hs = t.recover_homogenized(&hom, &f).unwrap();
        let a = t.apply_corrector(&hs, CorrectorVariant::Plain);
        assert!(t.l2(&sub(&a.v, &t.to_padded(&hs.v))) < 1e-14);
        assert!(t.l2(&sub(&a.u_diff, &sub(&hs.u, &hs.u0))) < 1e-13);
        assert!(t.l2(&sub(&a.w_diff, &sub(&hs.w, &hs.w0))) < 1e-13);
    }
}
