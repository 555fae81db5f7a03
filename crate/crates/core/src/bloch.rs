//! Fiber operators L(k) = b(D+k)* g b(D+k) in a truncated plane-wave basis and their lowest branches.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::lanczos::{block_lanczos, LanczosOptions};
use crate::lattice::symbol_b;
use crate::linalg::{block_diag, cross_matrix, Mat3, Mat4, Mat4x3, Mu0, Vec3, C64};
use crate::solver::{pcg, SolverOptions};
use crate::spectral::Band;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlochOptions {
    /// Maximal dual-lattice index per axis.
    pub cutoff: [usize; 3],
    pub lanczos: LanczosOptions,
    /// Relative tolerance of the inner shifted solves.
    pub inner_tol: f64,
    /// Points in the fit window [t0/16, t0/4].
    pub t_points: usize,
    /// Eigenpairs tracked by branch_fit.
    pub branches: usize,
}

impl Default for BlochOptions {
    fn default() -> Self {
        Self {
            cutoff: [8, 8, 8],
            lanczos: LanczosOptions::default(),
            inner_tol: 1e-13,
            t_points: 8,
            branches: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Label {
    J,
    G,
    Ambiguous,
}

/// Coefficients sampled once for a given plane-wave cutoff.
#[derive(Debug, Clone)]
pub struct FiberContext {
    pub band: Arc<Band>,
    pub mu0: Mu0,
    pub cutoff: [usize; 3],
    eta_inv: Option<Arc<Vec<Mat3>>>,
    nu: Option<Arc<Vec<f64>>>,
    /// blockdiag(mean η⁻¹, mean ν); exact g for constant coefficients.
    pub g_mean: Mat4,
    pub c0: f64,
    pub c1: f64,
    pub delta: f64,
    pub t0: f64,
}

/// L(k) for one quasimomentum.
pub struct FiberOperator<'a> {
    ctx: &'a FiberContext,
    pub k: Vec3,
    symbols: Vec<Mat4x3>,
    xk: Vec<Vec3>,
}

impl FiberContext {
    pub fn new(cs: &CoefficientSet, cutoff: [usize; 3]) -> Result<Self> {
        let grid = cutoff.map(|c| 2 * c + 1);
        let band = Arc::new(Band::new(cs.lattice.clone(), grid)?);
        let constant = cs.model().is_constant();
        let pts = band.padded_points();
        let eta = cs.periodic.eta_samples(&pts);
        let nu = cs.periodic.nu_samples(&pts);
        let eta_inv: Vec<Mat3> = eta
            .iter()
            .map(|m| m.try_inverse().ok_or(Error::NotPositive { point: [0.0; 3], min_eig: 0.0 }))
            .collect::<Result<_>>()?;
        let n = eta_inv.len() as f64;
        let g_mean = block_diag(&(eta_inv.iter().sum::<Mat3>() / n), nu.iter().sum::<f64>() / n);
        let c = &cs.constants;
        Ok(Self {
            band,
            mu0: cs.mu0.clone(),
            cutoff,
            eta_inv: (!constant).then(|| Arc::new(eta_inv)),
            nu: (!constant).then(|| Arc::new(nu)),
            g_mean,
            c0: c.c0,
            c1: c.c1,
            delta: c.delta,
            t0: c.t0,
        })
    }

    pub fn dim(&self) -> usize {
        3 * self.band.n_modes()
    }

    pub fn operator(&self, k: Vec3) -> FiberOperator<'_> {
        let xk: Vec<Vec3> = self.band.xi.iter().map(|x| x + k).collect();
        let symbols = xk.iter().map(|x| symbol_b(x, &self.mu0)).collect();
        FiberOperator {
            ctx: self,
            k,
            symbols,
            xk,
        }
    }

    /// Lowest `m` eigenpairs of L(k), optionally warm-started.
    pub fn fiber_eigs(&self, k: Vec3, m: usize, opts: &BlochOptions, warm: &[Vec<C64>]) -> Result<FiberEigs> {
        if m == 0 {
            return Err(Error::Invalid("need at least one eigenpair".into()));
        }
        let op = self.operator(k);
        let dim = self.dim();
        let shift = self.delta.max(1e-12);
        let pre = op.shifted_preconditioner(shift);
        let inner = SolverOptions {
            tol: opts.inner_tol,
            max_iter: 20_000,
        };
        let failures = std::sync::atomic::AtomicUsize::new(0);
        let inv = |x: &[C64]| -> Vec<C64> {
            let apply = |v: &[C64]| {
                let mut y = op.apply(v);
                y.iter_mut().zip(v).for_each(|(a, b)| *a += b * shift);
                y
            };
            match pcg("fiber shift-invert", apply, |r| op.precondition(&pre, r), x, &inner) {
                Ok((y, _)) => y.into_iter().map(|v| -v).collect(),
                Err(_) => {
                    failures.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    vec![C64::default(); x.len()]
                }
            }
        };
        let mut lopts = opts.lanczos;
        lopts.block = lopts.block.max(m + 2);
        let lz = block_lanczos(&inv, dim, m, warm, &lopts)?;
        if failures.load(std::sync::atomic::Ordering::Relaxed) > 0 {
            return Err(Error::NoConvergence {
                solver: "fiber shift-invert",
                iterations: inner.max_iter,
                residual: f64::NAN,
            });
        }
        // Rayleigh–Ritz with L(k) itself on the Lanczos block
        let y = lz.vectors;
        let ay: Vec<Vec<C64>> = y.par_iter().map(|v| op.apply(v)).collect();
        let nb = y.len();
        let mut h = DMatrix::<C64>::zeros(nb, nb);
        let mut gram = DMatrix::<C64>::zeros(nb, nb);
        for i in 0..nb {
            for j in 0..nb {
                h[(i, j)] = dot(&y[i], &ay[j]);
                gram[(i, j)] = dot(&y[i], &y[j]);
            }
        }
        // re-orthonormalize through the Gram matrix, then diagonalize
        let ge = SymmetricEigen::new((&gram + gram.adjoint()) * C64::new(0.5, 0.0));
        let mut whiten = DMatrix::<C64>::zeros(nb, nb);
        for c in 0..nb {
            let s = 1.0 / ge.eigenvalues[c].max(1e-300).sqrt();
            for r in 0..nb {
                whiten[(r, c)] = ge.eigenvectors[(r, c)] * s;
            }
        }
        let hh = whiten.adjoint() * &h * &whiten;
        let he = SymmetricEigen::new((&hh + hh.adjoint()) * C64::new(0.5, 0.0));
        let coeffs = &whiten * &he.eigenvectors;
        let mut idx: Vec<usize> = (0..nb).collect();
        idx.sort_by(|&a, &b| he.eigenvalues[a].total_cmp(&he.eigenvalues[b]));
        let combine = |c: usize, src: &[Vec<C64>]| -> Vec<C64> {
            let mut out = vec![C64::default(); dim];
            for j in 0..nb {
                let s = coeffs[(j, c)];
                for d in 0..dim {
                    out[d] += src[j][d] * s;
                }
            }
            out
        };
        let mut values = Vec::with_capacity(nb);
        let mut vectors = Vec::with_capacity(nb);
        for &c in &idx {
            values.push(he.eigenvalues[c]);
            vectors.push(combine(c, &y));
        }
        let scale = op.norm_estimate();
        let mut out = FiberEigs {
            k,
            values,
            vectors,
            residuals: vec![],
            labels: vec![],
            scale,
            matvecs: lz.matvecs,
            restarts: lz.restarts,
        };
        out.rotate_clusters(&op);
        out.residuals = out
            .vectors
            .par_iter()
            .zip(&out.values)
            .map(|(v, l)| {
                let av = op.apply(v);
                norm(&av.iter().zip(v).map(|(a, b)| a - b * l).collect::<Vec<_>>())
            })
            .collect();
        out.labels = out.vectors.iter().map(|v| op.classify(v)).collect();
        let worst = out.residuals[..m].iter().fold(0.0f64, |a, &b| a.max(b));
        if worst > 1e-9 * scale {
            return Err(Error::NoConvergence {
                solver: "fiber Lanczos",
                iterations: lz.restarts,
                residual: worst / scale,
            });
        }
        Ok(out)
    }

    /// Tracks the lowest branches along k = tθ and fits λ(t) = γt² + μt³ + νt⁴.
    pub fn branch_fit(&self, theta: &Vec3, t_grid: &[f64], opts: &BlochOptions) -> Result<BranchFit> {
        let n = theta.norm();
        if !((n - 1.0).abs() <= 1e-10) {
            return Err(Error::NonUnitDirection(n));
        }
        if t_grid.len() < 5 {
            return Err(Error::Invalid("branch fit needs at least five t values".into()));
        }
        if t_grid.iter().any(|&t| !(t > 0.0 && t <= self.t0 / 4.0 * (1.0 + 1e-12))) {
            return Err(Error::Invalid(format!("t grid must lie in (0, t0/4] = (0, {:e}]", self.t0 / 4.0)));
        }
        let m = opts.branches.max(1);
        let mut warm: Vec<Vec<C64>> = Vec::new();
        let mut prev: Option<Vec<Vec<C64>>> = None;
        let mut lam = vec![Vec::with_capacity(t_grid.len()); m];
        let mut labels = vec![Vec::with_capacity(t_grid.len()); m];
        let mut residuals = vec![Vec::with_capacity(t_grid.len()); m];
        let mut min_overlap: f64 = 1.0;
        for &t in t_grid {
            let e = self.fiber_eigs(theta * t, m, opts, &warm)?;
            let cur: Vec<Vec<C64>> = e.vectors[..m].to_vec();
            let perm = match &prev {
                None => (0..m).collect::<Vec<_>>(),
                Some(p) => {
                    let o: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|j| dot(&p[i], &cur[j]).norm()).collect()).collect();
                    let (perm, worst) = best_assignment(&o);
                    min_overlap = min_overlap.min(worst);
                    perm
                }
            };
            for b in 0..m {
                let j = perm[b];
                lam[b].push(e.values[j]);
                labels[b].push(e.labels[j]);
                residuals[b].push(e.residuals[j]);
            }
            prev = Some(perm.iter().map(|&j| cur[j].clone()).collect());
            warm = e.vectors;
        }
        let tmax = t_grid.iter().fold(0.0f64, |a, &b| a.max(b));
        let mut gamma = Vec::with_capacity(m);
        let mut mu = Vec::with_capacity(m);
        let mut nu = Vec::with_capacity(m);
        let mut fit_residual = Vec::with_capacity(m);
        for b in 0..m {
            let (c, r) = fit_series(t_grid, &lam[b], tmax)?;
            gamma.push(c[0]);
            mu.push(c[1]);
            nu.push(c[2]);
            fit_residual.push(r);
        }
        let branch_label = labels
            .iter()
            .map(|ls| {
                if ls.iter().all(|l| *l == Label::G) {
                    Label::G
                } else if ls.iter().all(|l| *l == Label::J) {
                    Label::J
                } else {
                    Label::Ambiguous
                }
            })
            .collect();
        Ok(BranchFit {
            theta: *theta,
            t: t_grid.to_vec(),
            eigenvalues: lam,
            labels,
            eig_residuals: residuals,
            branch_label,
            gamma,
            mu,
            nu,
            fit_residual,
            min_overlap,
            ambiguous: min_overlap < 0.7,
        })
    }

    /// Default fit window: `n` equispaced points in [t0/16, t0/4].
    pub fn default_t_grid(&self, n: usize) -> Vec<f64> {
        let (a, b) = (self.t0 / 16.0, self.t0 / 4.0);
        (0..n).map(|i| a + (b - a) * i as f64 / (n.max(2) - 1) as f64).collect()
    }
}

impl FiberOperator<'_> {
    pub fn dim(&self) -> usize {
        3 * self.xk.len()
    }

    /// ‖L(k)‖ upper bound c₁·max|ξ+k|².
    pub fn norm_estimate(&self) -> f64 {
        self.ctx.c1 * self.xk.iter().map(|x| x.norm_squared()).fold(0.0, f64::max).max(1e-300)
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let n = self.xk.len();
        let band = &self.ctx.band;
        let bv: Vec<[C64; 4]> = (0..n)
            .map(|m| {
                let b = &self.symbols[m];
                let mut w = [C64::default(); 4];
                for (i, wi) in w.iter_mut().enumerate() {
                    *wi = (0..3).map(|j| v[j * n + m] * b[(i, j)]).sum();
                }
                w
            })
            .collect();
        let gbv: Vec<[C64; 4]> = match (&self.ctx.eta_inv, &self.ctx.nu) {
            (Some(ei), Some(nu)) => {
                let vals: Vec<Vec<C64>> = (0..4)
                    .into_par_iter()
                    .map(|i| band.to_padded(&bv.iter().map(|w| w[i]).collect::<Vec<_>>()))
                    .collect();
                let npad = band.pad_len();
                let mut prod = vec![vec![C64::default(); npad]; 4];
                for p in 0..npad {
                    let a = &ei[p];
                    for i in 0..3 {
                        prod[i][p] = (0..3).map(|j| vals[j][p] * a[(i, j)]).sum();
                    }
                    prod[3][p] = vals[3][p] * nu[p];
                }
                let back: Vec<Vec<C64>> = prod.into_par_iter().map(|x| band.from_padded(x)).collect();
                (0..n).map(|m| [back[0][m], back[1][m], back[2][m], back[3][m]]).collect()
            }
            _ => {
                let g = &self.ctx.g_mean;
                bv.iter()
                    .map(|w| {
                        let mut o = [C64::default(); 4];
                        for (i, oi) in o.iter_mut().enumerate() {
                            *oi = (0..4).map(|j| w[j] * g[(i, j)]).sum();
                        }
                        o
                    })
                    .collect()
            }
        };
        let mut out = vec![C64::default(); 3 * n];
        for m in 0..n {
            let b = &self.symbols[m];
            for j in 0..3 {
                out[j * n + m] = (0..4).map(|i| gbv[m][i] * b[(i, j)]).sum();
            }
        }
        out
    }

    /// Per-mode inverses of b(ξ+k)ᵀ ḡ b(ξ+k) + s.
    pub fn shifted_preconditioner(&self, s: f64) -> Vec<Mat3> {
        let g = &self.ctx.g_mean;
        self.symbols
            .iter()
            .map(|b| {
                let m = b.transpose() * g * b + Mat3::identity() * s;
                m.try_inverse().unwrap_or_else(Mat3::identity)
            })
            .collect()
    }

    pub fn precondition(&self, pre: &[Mat3], r: &[C64]) -> Vec<C64> {
        let n = self.xk.len();
        let mut out = vec![C64::default(); 3 * n];
        for m in 0..n {
            for i in 0..3 {
                out[i * n + m] = (0..3).map(|j| r[j * n + m] * pre[m][(i, j)]).sum();
            }
        }
        out
    }

    /// 𝔩(k)[u,u] in coefficient normalization.
    pub fn form(&self, u: &[C64]) -> f64 {
        dot(u, &self.apply(u)).re
    }

    /// ‖(D+k)u‖² in coefficient normalization.
    pub fn dk_norm_sq(&self, u: &[C64]) -> f64 {
        let n = self.xk.len();
        (0..n)
            .map(|m| self.xk[m].norm_squared() * (0..3).map(|j| u[j * n + m].norm_sqr()).sum::<f64>())
            .sum()
    }

    /// Norms of the J-defect (ξ+k)ᵀμ₀^{1/2}v̂ and G-defect r(ξ+k)μ₀^{-1/2}v̂, and of (ξ+k)⊗v̂.
    pub fn weyl_defects(&self, v: &[C64]) -> (f64, f64, f64) {
        let n = self.xk.len();
        let mu = &self.ctx.mu0;
        let (mut dj, mut dg, mut dn) = (0.0, 0.0, 0.0);
        for m in 0..n {
            let x = &self.xk[m];
            let vm = [v[m], v[n + m], v[2 * n + m]];
            let w = mu.sqrt * x;
            let s: C64 = (0..3).map(|i| vm[i] * w[i]).sum();
            dj += s.norm_sqr();
            let r = cross_matrix(x) * mu.inv_sqrt;
            for i in 0..3 {
                let c: C64 = (0..3).map(|j| vm[j] * r[(i, j)]).sum();
                dg += c.norm_sqr();
            }
            dn += x.norm_squared() * vm.iter().map(|c| c.norm_sqr()).sum::<f64>();
        }
        (dj.sqrt(), dg.sqrt(), dn.sqrt())
    }

    pub fn classify(&self, v: &[C64]) -> Label {
        let (dj, dg, dn) = self.weyl_defects(v);
        if dj <= 1e-6 * dn {
            Label::J
        } else if dg <= 1e-6 * dn {
            Label::G
        } else {
            Label::Ambiguous
        }
    }

    /// Orthogonal projection onto the discrete gradient subspace G(k; μ₀).
    pub fn project_g(&self, v: &[C64]) -> Vec<C64> {
        let n = self.xk.len();
        let mut out = vec![C64::default(); 3 * n];
        for m in 0..n {
            let w = self.ctx.mu0.sqrt * self.xk[m];
            let ww = w.norm_squared();
            if ww == 0.0 {
                continue;
            }
            let s: C64 = (0..3).map(|i| v[i * n + m] * w[i]).sum::<C64>() / ww;
            for i in 0..3 {
                out[i * n + m] = s * w[i];
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct FiberEigs {
    pub k: Vec3,
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<C64>>,
    pub residuals: Vec<f64>,
    pub labels: Vec<Label>,
    /// ‖L(k)‖ estimate used for the residual tolerance.
    pub scale: f64,
    pub matvecs: usize,
    pub restarts: usize,
}

impl FiberEigs {
    /// Inside clusters of numerically equal eigenvalues, rotate the basis so that it diagonalizes
    /// the G-projector; then J and G vectors separate.
    fn rotate_clusters(&mut self, op: &FiberOperator) {
        let n = self.values.len();
        let mut start = 0;
        while start < n {
            let mut end = start + 1;
            while end < n
                && (self.values[end] - self.values[start]).abs()
                    <= 1e-8 * self.values[start].abs() + 1e-13 * self.scale
            {
                end += 1;
            }
            if end - start > 1 {
                let size = end - start;
                let pg: Vec<Vec<C64>> = (start..end).map(|i| op.project_g(&self.vectors[i])).collect();
                let mut c = DMatrix::<C64>::zeros(size, size);
                for i in 0..size {
                    for j in 0..size {
                        c[(i, j)] = dot(&self.vectors[start + i], &pg[j]);
                    }
                }
                let e = SymmetricEigen::new((&c + c.adjoint()) * C64::new(0.5, 0.0));
                let spread = e.eigenvalues.max() - e.eigenvalues.min();
                if spread > 0.5 {
                    let old: Vec<Vec<C64>> = self.vectors[start..end].to_vec();
                    let mean = self.values[start..end].iter().sum::<f64>() / size as f64;
                    for c in 0..size {
                        let mut v = vec![C64::default(); old[0].len()];
                        for (j, o) in old.iter().enumerate() {
                            let s = e.eigenvectors[(j, c)];
                            for (a, b) in v.iter_mut().zip(o) {
                                *a += b * s;
                            }
                        }
                        self.vectors[start + c] = v;
                        self.values[start + c] = op_rayleigh(op, &self.vectors[start + c]).unwrap_or(mean);
                    }
                }
            }
            start = end;
        }
    }
}

fn op_rayleigh(op: &FiberOperator, v: &[C64]) -> Option<f64> {
    let n = dot(v, v).re;
    (n > 0.0).then(|| dot(v, &op.apply(v)).re / n)
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Assignment maximizing the total overlap (exhaustive over permutations); returns it and the
/// smallest matched overlap.
fn best_assignment(o: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let m = o.len();
    let mut best = (f64::NEG_INFINITY, vec![], 0.0);
    let mut perm: Vec<usize> = (0..m).collect();
    permute(&mut perm, 0, &mut |p| {
        let total: f64 = (0..m).map(|i| o[i][p[i]]).sum();
        if total > best.0 {
            let worst = (0..m).map(|i| o[i][p[i]]).fold(f64::INFINITY, f64::min);
            best = (total, p.to_vec(), worst);
        }
    });
    (best.1, best.2)
}

fn permute(p: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, f);
        p.swap(k, i);
    }
}

/// Least-squares fit of λ(t) = c₀t² + c₁t³ + c₂t⁴; returns the coefficients and max |residual|.
pub fn fit_series(t: &[f64], lambda: &[f64], tmax: f64) -> Result<([f64; 3], f64)> {
    let n = t.len();
    let a = DMatrix::from_fn(n, 3, |i, j| (t[i] / tmax).powi(j as i32 + 2));
    let b = DVector::from_column_slice(lambda);
    let svd = a.clone().svd(true, true);
    let x = svd
        .solve(&b, 1e-14)
        .map_err(|e| Error::Invalid(format!("branch fit failed: {e}")))?;
    let r = (&a * &x - &b).amax();
    Ok(([x[0] / tmax.powi(2), x[1] / tmax.powi(3), x[2] / tmax.powi(4)], r))
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchFit {
    pub theta: Vec3,
    pub t: Vec<f64>,
    /// eigenvalues[branch][t index]
    pub eigenvalues: Vec<Vec<f64>>,
    pub labels: Vec<Vec<Label>>,
    pub eig_residuals: Vec<Vec<f64>>,
    pub branch_label: Vec<Label>,
    pub gamma: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub fit_residual: Vec<f64>,
    pub min_overlap: f64,
    pub ambiguous: bool,
}

impl BranchFit {
    /// Index of the branch labelled G, if exactly one is.
    pub fn gradient_branch(&self) -> Option<usize> {
        let g: Vec<usize> = (0..self.branch_label.len())
            .filter(|&i| self.branch_label[i] == Label::G)
            .collect();
        (g.len() == 1).then(|| g[0])
    }

    /// CSV rows: t, branch, label, λ, residual.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,branch,label,lambda,residual\n");
        for (i, t) in self.t.iter().enumerate() {
            for b in 0..self.eigenvalues.len() {
                s.push_str(&format!(
                    "{:.17e},{},{:?},{:.17e},{:.3e}\n",
                    t, b, self.labels[b][i], self.eigenvalues[b][i], self.eig_residuals[b][i]
                ));
            }
        }
        s
    }
}

/// Dense matrix of L(k) (columns L(k)e_i), for small discretizations and tests.
pub fn dense_fiber_matrix(op: &FiberOperator) -> DMatrix<C64> {
    let dim = op.dim();
    let cols: Vec<Vec<C64>> = (0..dim)
        .into_par_iter()
        .map(|i| {
            let mut e = vec![C64::default(); dim];
            e[i] = C64::new(1.0, 0.0);
            op.apply(&e)
        })
        .collect();
    DMatrix::from_fn(dim, dim, |r, c| cols[c][r])
}
