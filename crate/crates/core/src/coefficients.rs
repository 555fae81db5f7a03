//! Coefficient families η(x), ν(x) and the derived scalar constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{alpha_constants, Lattice};
use crate::linalg::{max_eig, min_eig, spectral_norm, sym_eig, Mat3, Mu0, Vec3};
use crate::spectral::{grid_points, PeriodicField};

/// mean + Σ_k cos[k-1]·cos(k s) + sin[k-1]·sin(k s).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigSeries {
    #[serde(default)]
    pub mean: f64,
    #[serde(default)]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
}

impl TrigSeries {
    pub fn constant(mean: f64) -> Self {
        Self {
            mean,
            ..Default::default()
        }
    }

    pub fn new(mean: f64, cos: &[f64], sin: &[f64]) -> Self {
        Self {
            mean,
            cos: cos.to_vec(),
            sin: sin.to_vec(),
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        let mut v = self.mean;
        for (k, c) in self.cos.iter().enumerate() {
            v += c * ((k + 1) as f64 * s).cos();
        }
        for (k, c) in self.sin.iter().enumerate() {
            v += c * ((k + 1) as f64 * s).sin();
        }
        v
    }

    pub fn is_constant(&self) -> bool {
        self.cos.iter().chain(&self.sin).all(|c| *c == 0.0)
    }
}

/// Entries of a symmetric matrix depending on s = ⟨b₁, x⟩ only; omitted off-diagonal entries are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayeredEta {
    pub e11: TrigSeries,
    #[serde(default)]
    pub e12: TrigSeries,
    #[serde(default)]
    pub e13: TrigSeries,
    pub e22: TrigSeries,
    #[serde(default)]
    pub e23: TrigSeries,
    pub e33: TrigSeries,
}

impl LayeredEta {
    fn entries(&self) -> [[&TrigSeries; 3]; 3] {
        [
            [&self.e11, &self.e12, &self.e13],
            [&self.e12, &self.e22, &self.e23],
            [&self.e13, &self.e23, &self.e33],
        ]
    }

    pub fn diagonal(a: TrigSeries, b: TrigSeries, c: TrigSeries) -> Self {
        Self {
            e11: a,
            e12: TrigSeries::default(),
            e13: TrigSeries::default(),
            e22: b,
            e23: TrigSeries::default(),
            e33: c,
        }
    }
}

fn default_radius() -> f64 {
    1.0
}

fn default_one() -> f64 {
    1.0
}

fn default_harmonics() -> i64 {
    1
}

fn default_contrast() -> f64 {
    0.6
}

fn default_nu_amplitude() -> f64 {
    0.3
}

/// Built-in coefficient families as they appear in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientFamily {
    Constant {
        eta: [[f64; 3]; 3],
        nu: f64,
    },
    /// Coefficients depending on the first lattice coordinate only.
    Layered { eta: LayeredEta, nu: TrigSeries },
    /// Coated-ball inclusion: κ in the inner ball of volume fraction ϑ, 1 in the coating up to
    /// `radius`, and the neutral value 1 + 3ϑ(κ−1)/(3 + (1−ϑ)(κ−1)) outside. Interfaces are
    /// smoothed over `width` (default: two grid cells; 0 keeps them sharp).
    Ball {
        kappa: f64,
        theta: f64,
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default)]
        width: Option<f64>,
        #[serde(default)]
        center: [f64; 3],
        #[serde(default = "default_one")]
        nu: f64,
    },
    /// Seeded random trigonometric polynomial, SPD by construction.
    Random {
        seed: u64,
        #[serde(default = "default_harmonics")]
        harmonics: i64,
        #[serde(default = "default_contrast")]
        contrast: f64,
        #[serde(default = "default_nu_amplitude")]
        nu_amplitude: f64,
    },
}

impl CoefficientFamily {
    pub fn constant(eta: Mat3, nu: f64) -> Self {
        CoefficientFamily::Constant {
            eta: [0, 1, 2].map(|i| [0, 1, 2].map(|j| eta[(i, j)])),
            nu,
        }
    }

    /// η = a(s)·I with a = 2 + sin s, ν ≡ 1.
    pub fn layered_isotropic() -> Self {
        let a = TrigSeries::new(2.0, &[], &[1.0]);
        CoefficientFamily::Layered {
            eta: LayeredEta::diagonal(a.clone(), a.clone(), a),
            nu: TrigSeries::constant(1.0),
        }
    }

    /// Layered matrix with a nonzero off-diagonal coupling for which the two solenoidal germ
    /// branches cross and the cubic threshold coefficients do not vanish.
    pub fn crossing_example() -> Self {
        CoefficientFamily::Layered {
            eta: LayeredEta {
                e11: TrigSeries::new(2.0, &[], &[1.0]),
                e12: TrigSeries::new(0.5, &[0.5], &[]),
                e13: TrigSeries::default(),
                e22: TrigSeries::new(3.0, &[], &[0.0, 0.5]),
                e23: TrigSeries::default(),
                e33: TrigSeries::new(1.0, &[0.3], &[]),
            },
            nu: TrigSeries::new(2.0, &[1.0], &[]),
        }
    }
}

/// A coefficient family resolved to something that can be evaluated at any point.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientModel {
    Constant {
        eta: Mat3,
        nu: f64,
    },
    Layered {
        eta: LayeredEta,
        nu: TrigSeries,
        dual: Vec3,
    },
    Ball {
        kappa: f64,
        r_inner: f64,
        r_outer: f64,
        a_outer: f64,
        width: f64,
        center: Vec3,
        nu: f64,
    },
    Trig {
        base: Mat3,
        terms: Vec<TrigTerm>,
        nu_base: f64,
        nu_terms: Vec<(Vec3, f64, f64)>,
        varying: [bool; 3],
    },
}

/// C cos⟨ξ,x⟩ + D sin⟨ξ,x⟩.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigTerm {
    pub xi: Vec3,
    pub c: Mat3,
    pub d: Mat3,
}

fn smooth_step(s: f64, width: f64) -> f64 {
    if width <= 0.0 {
        if s < 0.0 {
            0.0
        } else {
            1.0
        }
    } else {
        0.5 * (1.0 + (2.0 * s / width).tanh())
    }
}

fn random_symmetric(rng: &mut ChaCha8Rng) -> Mat3 {
    let m = Mat3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    (m + m.transpose()) * 0.5
}

impl CoefficientModel {
    /// `cell_spacing` is the largest grid spacing, used for the default ball smoothing width.
    pub fn resolve(family: &CoefficientFamily, lattice: &Lattice, cell_spacing: f64) -> Result<Self> {
        match family {
            CoefficientFamily::Constant { eta, nu } => Ok(CoefficientModel::Constant {
                eta: Mat3::from_fn(|i, j| eta[i][j]),
                nu: *nu,
            }),
            CoefficientFamily::Layered { eta, nu } => Ok(CoefficientModel::Layered {
                eta: eta.clone(),
                nu: nu.clone(),
                dual: lattice.dual[0],
            }),
            CoefficientFamily::Ball {
                kappa,
                theta,
                radius,
                width,
                center,
                nu,
            } => {
                if !(*theta > 0.0 && *theta < 1.0) || *kappa <= 0.0 || *radius <= 0.0 {
                    return Err(Error::Invalid(
                        "ball needs 0 < theta < 1, kappa > 0, radius > 0".into(),
                    ));
                }
                let k1 = kappa - 1.0;
                Ok(CoefficientModel::Ball {
                    kappa: *kappa,
                    r_inner: radius * theta.cbrt(),
                    r_outer: *radius,
                    a_outer: 1.0 + 3.0 * theta * k1 / (3.0 + (1.0 - theta) * k1),
                    width: width.unwrap_or(2.0 * cell_spacing),
                    center: Vec3::from(*center),
                    nu: *nu,
                })
            }
            CoefficientFamily::Random {
                seed,
                harmonics,
                contrast,
                nu_amplitude,
            } => {
                if !(0.0..1.0).contains(contrast) || !(0.0..1.0).contains(nu_amplitude) {
                    return Err(Error::Invalid(
                        "random family needs contrast and nu_amplitude in [0, 1)".into(),
                    ));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let q = Mat3::from_fn(|_, _| rng.random_range(-1.0..1.0)).qr().q();
                let lam = Vec3::from_fn(|_, _| rng.random_range(1.0..3.0));
                let base = q * Mat3::from_diagonal(&lam) * q.transpose();
                let base = (base + base.transpose()) * 0.5;
                let h = *harmonics;
                let mut terms = Vec::new();
                let mut nu_terms = Vec::new();
                let mut varying = [false; 3];
                for i in -h..=h {
                    for j in -h..=h {
                        for k in -h..=h {
                            let m = [i, j, k];
                            if m <= [0, 0, 0] {
                                continue;
                            }
                            for (a, v) in varying.iter_mut().enumerate() {
                                *v |= m[a] != 0;
                            }
                            let xi = lattice.dual_vector(m);
                            let decay = 1.0 / (1.0 + xi.norm_squared());
                            terms.push(TrigTerm {
                                xi,
                                c: random_symmetric(&mut rng) * decay,
                                d: random_symmetric(&mut rng) * decay,
                            });
                            nu_terms.push((
                                xi,
                                rng.random_range(-1.0..1.0) * decay,
                                rng.random_range(-1.0..1.0) * decay,
                            ));
                        }
                    }
                }
                let total: f64 = terms
                    .iter()
                    .map(|t| spectral_norm(&t.c) + spectral_norm(&t.d))
                    .sum();
                let s = if total > 0.0 {
                    contrast * min_eig(&base) / total
                } else {
                    0.0
                };
                terms.iter_mut().for_each(|t| {
                    t.c *= s;
                    t.d *= s;
                });
                let nu_base = rng.random_range(1.0..2.0);
                let nu_total: f64 = nu_terms.iter().map(|t| t.1.abs() + t.2.abs()).sum();
                let sn = if nu_total > 0.0 {
                    nu_amplitude * nu_base / nu_total
                } else {
                    0.0
                };
                nu_terms.iter_mut().for_each(|t| {
                    t.1 *= sn;
                    t.2 *= sn;
                });
                Ok(CoefficientModel::Trig {
                    base,
                    terms,
                    nu_base,
                    nu_terms,
                    varying,
                })
            }
        }
    }

    pub fn eta_at(&self, x: &Vec3) -> Mat3 {
        match self {
            CoefficientModel::Constant { eta, .. } => *eta,
            CoefficientModel::Layered { eta, dual, .. } => {
                let s = dual.dot(x);
                let e = eta.entries();
                Mat3::from_fn(|i, j| e[i][j].eval(s))
            }
            CoefficientModel::Ball { .. } => Mat3::identity() * self.ball_profile(x),
            CoefficientModel::Trig { base, terms, .. } => {
                let mut m = *base;
                for t in terms {
                    let (s, c) = t.xi.dot(x).sin_cos();
                    m += t.c * c + t.d * s;
                }
                m
            }
        }
    }

    pub fn nu_at(&self, x: &Vec3) -> f64 {
        match self {
            CoefficientModel::Constant { nu, .. } | CoefficientModel::Ball { nu, .. } => *nu,
            CoefficientModel::Layered { nu, dual, .. } => nu.eval(dual.dot(x)),
            CoefficientModel::Trig {
                nu_base, nu_terms, ..
            } => {
                let mut v = *nu_base;
                for (xi, c, d) in nu_terms {
                    let (s, co) = xi.dot(x).sin_cos();
                    v += c * co + d * s;
                }
                v
            }
        }
    }

    fn ball_profile(&self, x: &Vec3) -> f64 {
        match self {
            CoefficientModel::Ball {
                kappa,
                r_inner,
                r_outer,
                a_outer,
                width,
                center,
                ..
            } => {
                // the ball lives in the cell centred at `center`; the lattice wrap is applied by the caller
                let r = (x - center).norm();
                kappa + (1.0 - kappa) * smooth_step(r - r_inner, *width)
                    + (a_outer - 1.0) * smooth_step(r - r_outer, *width)
            }
            _ => unreachable!(),
        }
    }

    /// Axes (in lattice coordinates) along which the coefficients vary.
    pub fn varying_axes(&self) -> [bool; 3] {
        match self {
            CoefficientModel::Constant { .. } => [false; 3],
            CoefficientModel::Layered { eta, nu, .. } => {
                let e = eta.entries();
                let v = e.iter().flatten().any(|s| !s.is_constant()) || !nu.is_constant();
                [v, false, false]
            }
            CoefficientModel::Ball { .. } => [true; 3],
            CoefficientModel::Trig { varying, .. } => *varying,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.varying_axes() == [false; 3]
    }
}

/// Point evaluation on the lattice-periodic extension.
#[derive(Debug, Clone)]
pub struct PeriodicModel {
    pub model: CoefficientModel,
    pub lattice: Lattice,
}

impl PeriodicModel {
    pub fn eta_at(&self, x: &Vec3) -> Mat3 {
        match &self.model {
            CoefficientModel::Ball { center, .. } => {
                let y = self.lattice.wrap_centered(&(x - center)) + center;
                self.model.eta_at(&y)
            }
            m => m.eta_at(x),
        }
    }

    pub fn nu_at(&self, x: &Vec3) -> f64 {
        self.model.nu_at(x)
    }

    /// Samples η at the given points (row-major 3×3 per point).
    pub fn eta_samples(&self, pts: &[Vec3]) -> Vec<Mat3> {
        pts.par_iter().map(|x| self.eta_at(x)).collect()
    }

    pub fn nu_samples(&self, pts: &[Vec3]) -> Vec<f64> {
        pts.par_iter().map(|x| self.nu_at(x)).collect()
    }
}

/// Norms and constants derived from (η, ν, μ₀). L∞ norms are maxima over the grid `grid`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivedConstants {
    pub norm_eta: f64,
    pub norm_eta_inv: f64,
    pub norm_nu: f64,
    pub norm_nu_inv: f64,
    pub norm_g: f64,
    pub norm_g_inv: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    pub c0: f64,
    pub c1: f64,
    pub delta: f64,
    pub t0: f64,
    pub grid: [usize; 3],
}

/// Coefficients on a cell grid together with μ₀ and the derived constants.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    pub lattice: Lattice,
    pub family: CoefficientFamily,
    pub periodic: PeriodicModel,
    pub mu0: Mu0,
    pub grid: [usize; 3],
    pub eta: PeriodicField,
    pub nu: PeriodicField,
    pub constants: DerivedConstants,
}

impl CoefficientSet {
    pub fn new(lattice: Lattice, family: CoefficientFamily, mu0: Mu0, grid: [usize; 3]) -> Result<Self> {
        let spacing = (0..3)
            .map(|j| lattice.basis[j].norm() / grid[j] as f64)
            .fold(0.0, f64::max);
        let model = CoefficientModel::resolve(&family, &lattice, spacing)?;
        let periodic = PeriodicModel {
            model,
            lattice: lattice.clone(),
        };
        let pts = grid_points(&lattice, grid);
        let etas = periodic.eta_samples(&pts);
        let nus = periodic.nu_samples(&pts);

        let mut norm_eta: f64 = 0.0;
        let mut norm_eta_inv: f64 = 0.0;
        let mut norm_nu: f64 = 0.0;
        let mut norm_nu_inv: f64 = 0.0;
        for (p, (e, n)) in etas.iter().zip(&nus).enumerate() {
            if (e - e.transpose()).norm() > 1e-12 * e.norm() {
                return Err(Error::Invalid(format!("eta is not symmetric at {:?}", pts[p].as_slice())));
            }
            let (ev, _) = sym_eig(e);
            if !(ev[0] > 0.0) {
                return Err(Error::NotPositive {
                    point: [pts[p][0], pts[p][1], pts[p][2]],
                    min_eig: ev[0],
                });
            }
            if !(*n > 0.0) {
                return Err(Error::NotPositive {
                    point: [pts[p][0], pts[p][1], pts[p][2]],
                    min_eig: *n,
                });
            }
            norm_eta = norm_eta.max(ev[2]);
            norm_eta_inv = norm_eta_inv.max(1.0 / ev[0]);
            norm_nu = norm_nu.max(*n);
            norm_nu_inv = norm_nu_inv.max(1.0 / n);
        }
        let eta = PeriodicField::from_real_values(
            grid,
            (0..9)
                .map(|c| etas.iter().map(|e| e[(c / 3, c % 3)]).collect())
                .collect(),
        );
        let nu = PeriodicField::from_real_values(grid, vec![nus]);

        let (alpha0, alpha1) = alpha_constants(&mu0);
        let norm_g = norm_eta_inv.max(norm_nu);
        let norm_g_inv = norm_eta.max(norm_nu_inv);
        let r0 = lattice.r0;
        let constants = DerivedConstants {
            norm_eta,
            norm_eta_inv,
            norm_nu,
            norm_nu_inv,
            norm_g,
            norm_g_inv,
            alpha0,
            alpha1,
            c0: alpha0 / norm_g_inv,
            c1: alpha1 * norm_g,
            delta: 0.25 * r0 * r0 * alpha0 / norm_g_inv,
            t0: 0.5 * r0 * (alpha0 / alpha1).sqrt() / (norm_g * norm_g_inv).sqrt(),
            grid,
        };
        Ok(Self {
            lattice,
            family,
            periodic,
            mu0,
            grid,
            eta,
            nu,
            constants,
        })
    }

    pub fn model(&self) -> &CoefficientModel {
        &self.periodic.model
    }

    /// Largest pointwise eigenvalue of η on the grid (used for operator bounds).
    pub fn eta_max(&self) -> f64 {
        self.constants.norm_eta
    }

    /// Upper bound on ‖η(x)‖ sampled at the given points.
    pub fn eta_extremes(&self, pts: &[Vec3]) -> (f64, f64) {
        let etas = self.periodic.eta_samples(pts);
        let lo = etas.iter().map(min_eig).fold(f64::INFINITY, f64::min);
        let hi = etas.iter().map(max_eig).fold(0.0, f64::max);
        (lo, hi)
    }
}
