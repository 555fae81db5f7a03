//! Block Lanczos with full reorthogonalization and explicit restarts for Hermitian operators.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LanczosOptions {
    /// Block size; raised to at least the number of wanted eigenpairs.
    pub block: usize,
    /// Basis size at which the iteration restarts.
    pub max_basis: usize,
    /// Ritz residual tolerance relative to the largest |Ritz value|.
    pub tol: f64,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            block: 5,
            max_basis: 120,
            tol: 1e-11,
            max_restarts: 30,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LanczosResult {
    /// Lowest Ritz values (ascending), one per block column.
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<C64>>,
    pub residuals: Vec<f64>,
    pub matvecs: usize,
    pub restarts: usize,
    pub converged: bool,
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Orthogonalize `v` against `basis` twice (classical Gram–Schmidt) and return its remaining norm.
fn orthogonalize(v: &mut [C64], basis: &[Vec<C64>]) -> f64 {
    for _ in 0..2 {
        let c: Vec<C64> = basis.par_iter().map(|q| dot(q, v)).collect();
        for (q, ci) in basis.iter().zip(&c) {
            for (x, y) in v.iter_mut().zip(q) {
                *x -= ci * y;
            }
        }
    }
    norm(v)
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<C64> {
    (0..dim)
        .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

/// Appends orthonormalized candidates to `basis`; returns the accepted block.
/// Candidates that deflate are replaced by random vectors while the space is not exhausted.
fn accept_block(
    candidates: Vec<Vec<C64>>,
    basis: &[Vec<C64>],
    dim: usize,
    rng: &mut ChaCha8Rng,
    scale: &[f64],
) -> Vec<Vec<C64>> {
    let mut out: Vec<Vec<C64>> = Vec::new();
    for (i, mut v) in candidates.into_iter().enumerate() {
        let s = scale.get(i).copied().unwrap_or(1.0).max(norm(&v));
        let mut tries = 0;
        loop {
            if basis.len() + out.len() >= dim {
                return out;
            }
            orthogonalize(&mut v, basis);
            let n = orthogonalize(&mut v, &out);
            if n > 1e-10 * s {
                v.iter_mut().for_each(|x| *x /= n);
                out.push(v);
                break;
            }
            tries += 1;
            if tries > 5 {
                break;
            }
            v = random_vector(rng, dim);
        }
    }
    out
}

/// Smallest eigenpairs of the Hermitian operator `op` on ℂ^dim.
pub fn block_lanczos(
    op: &(dyn Fn(&[C64]) -> Vec<C64> + Sync),
    dim: usize,
    nev: usize,
    start: &[Vec<C64>],
    opts: &LanczosOptions,
) -> Result<LanczosResult> {
    if dim == 0 || nev == 0 {
        return Err(Error::Invalid("empty eigenproblem".into()));
    }
    let nev = nev.min(dim);
    let block = opts.block.max(nev).min(dim);
    let max_basis = opts.max_basis.max(2 * block).min(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut init: Vec<Vec<C64>> = start.iter().filter(|v| v.len() == dim).take(block).cloned().collect();
    while init.len() < block {
        init.push(random_vector(&mut rng, dim));
    }
    let mut matvecs = 0;
    let mut restarts = 0;
    loop {
        let mut v: Vec<Vec<C64>> = Vec::new();
        let mut w: Vec<Vec<C64>> = Vec::new();
        let mut q = accept_block(init.clone(), &v, dim, &mut rng, &[]);
        while !q.is_empty() {
            let aq: Vec<Vec<C64>> = q.par_iter().map(|x| op(x)).collect();
            matvecs += aq.len();
            let scales: Vec<f64> = aq.iter().map(|x| norm(x)).collect();
            v.extend(q);
            w.extend(aq.iter().cloned());
            if v.len() >= max_basis {
                break;
            }
            q = accept_block(aq, &v, dim, &mut rng, &scales);
        }
        let nb = v.len();
        let rows: Vec<Vec<C64>> = (0..nb)
            .into_par_iter()
            .map(|i| (0..nb).map(|j| dot(&v[i], &w[j])).collect())
            .collect();
        let mut t = DMatrix::<C64>::zeros(nb, nb);
        for i in 0..nb {
            for j in 0..nb {
                t[(i, j)] = rows[i][j];
            }
        }
        let t = (&t + t.adjoint()) * C64::new(0.5, 0.0);
        let eig = SymmetricEigen::new(t);
        let mut idx: Vec<usize> = (0..nb).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let keep = block.min(nb);
        let scale = eig.eigenvalues.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(f64::MIN_POSITIVE);
        let ritz: Vec<(f64, Vec<C64>, f64)> = idx[..keep]
            .par_iter()
            .map(|&c| {
                let s = eig.eigenvectors.column(c);
                let mut y = vec![C64::default(); dim];
                let mut ay = vec![C64::default(); dim];
                for j in 0..nb {
                    let sj = s[j];
                    for d in 0..dim {
                        y[d] += v[j][d] * sj;
                        ay[d] += w[j][d] * sj;
                    }
                }
                let theta = eig.eigenvalues[c];
                let r: f64 = ay
                    .iter()
                    .zip(&y)
                    .map(|(a, b)| (a - b * theta).norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                (theta, y, r)
            })
            .collect();
        let exhausted = nb >= dim;
        let converged = exhausted || ritz[..nev].iter().all(|r| r.2 <= opts.tol * scale);
        if converged || restarts >= opts.max_restarts {
            let mut values = Vec::new();
            let mut vectors = Vec::new();
            let mut residuals = Vec::new();
            for (th, y, r) in ritz {
                values.push(th);
                vectors.push(y);
                residuals.push(r);
            }
            return Ok(LanczosResult {
                values,
                vectors,
                residuals,
                matvecs,
                restarts,
                converged,
            });
        }
        restarts += 1;
        init = ritz.into_iter().map(|r| r.1).collect();
    }
}
