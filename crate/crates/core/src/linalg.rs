//! Small dense helpers on 3×3 real and complex matrices.

use nalgebra::{Matrix3, Matrix4, Matrix4x3, SymmetricEigen, Vector3};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;
pub type CMat3 = Matrix3<C64>;
pub type CVec3 = Vector3<C64>;
pub type Mat4 = Matrix4<f64>;
pub type Mat4x3 = Matrix4x3<f64>;

pub const I: C64 = C64::new(0.0, 1.0);

/// Cross-product matrix: `cross_matrix(xi) * v == xi.cross(&v)`.
pub fn cross_matrix(xi: &Vec3) -> Mat3 {
    Mat3::new(0.0, -xi[2], xi[1], xi[2], 0.0, -xi[0], -xi[1], xi[0], 0.0)
}

pub fn symmetrize(m: &Mat3) -> Mat3 {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues (ascending) and matching orthonormal eigenvectors of a real symmetric matrix.
pub fn sym_eig(m: &Mat3) -> (Vec3, Mat3) {
    let e = SymmetricEigen::new(symmetrize(m));
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| e.eigenvalues[a].total_cmp(&e.eigenvalues[b]));
    let vals = Vec3::new(e.eigenvalues[idx[0]], e.eigenvalues[idx[1]], e.eigenvalues[idx[2]]);
    let vecs = Mat3::from_columns(&[
        e.eigenvectors.column(idx[0]).into_owned(),
        e.eigenvectors.column(idx[1]).into_owned(),
        e.eigenvectors.column(idx[2]).into_owned(),
    ]);
    (vals, vecs)
}

/// Applies `f` to the eigenvalues of a symmetric matrix.
pub fn sym_fn(m: &Mat3, f: impl Fn(f64) -> f64) -> Mat3 {
    let (vals, vecs) = sym_eig(m);
    let d = Mat3::from_diagonal(&vals.map(f));
    symmetrize(&(vecs * d * vecs.transpose()))
}

pub fn min_eig(m: &Mat3) -> f64 {
    sym_eig(m).0[0]
}

pub fn max_eig(m: &Mat3) -> f64 {
    sym_eig(m).0[2]
}

/// Operator norm induced by the Euclidean norm.
pub fn spectral_norm(m: &Mat3) -> f64 {
    max_eig(&(m.transpose() * m)).max(0.0).sqrt()
}

pub fn cspectral_norm(m: &CMat3) -> f64 {
    let h = m.adjoint() * m;
    let e = SymmetricEigen::new(h);
    e.eigenvalues.max().max(0.0).sqrt()
}

pub fn to_complex(m: &Mat3) -> CMat3 {
    m.map(|x| C64::new(x, 0.0))
}

pub fn block_diag(top: &Mat3, last: f64) -> Mat4 {
    let mut g = Mat4::zeros();
    g.fixed_view_mut::<3, 3>(0, 0).copy_from(top);
    g[(3, 3)] = last;
    g
}

/// The constant permeability matrix together with the square roots and norms used throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct Mu0 {
    pub m: Mat3,
    pub inv: Mat3,
    pub sqrt: Mat3,
    pub inv_sqrt: Mat3,
    pub norm: f64,
    pub inv_norm: f64,
    pub det: f64,
}

impl Mu0 {
    pub fn new(m: Mat3) -> Result<Self> {
        if (m - m.transpose()).norm() > 1e-12 * m.norm() {
            return Err(Error::Invalid("mu0 must be symmetric".into()));
        }
        let m = symmetrize(&m);
        let (vals, _) = sym_eig(&m);
        if vals[0] <= 0.0 {
            return Err(Error::Invalid(format!(
                "mu0 must be positive definite (min eigenvalue {:e})",
                vals[0]
            )));
        }
        Ok(Self {
            m,
            inv: sym_fn(&m, |x| 1.0 / x),
            sqrt: sym_fn(&m, f64::sqrt),
            inv_sqrt: sym_fn(&m, |x| 1.0 / x.sqrt()),
            norm: vals[2],
            inv_norm: 1.0 / vals[0],
            det: m.determinant(),
        })
    }

    pub fn identity() -> Self {
        Self::new(Mat3::identity()).expect("identity is SPD")
    }
}
