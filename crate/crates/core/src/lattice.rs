//! Periodicity lattices, their duals and the first-order symbol of the Maxwell operator.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{cross_matrix, Mat3, Mat4x3, Mu0, Vec3};

use std::f64::consts::PI;

/// A lattice Γ in ℝ³ with basis `a`, the dual lattice basis `b` (⟨b_j, a_i⟩ = 2π δ_ij),
/// the cell volume and the radius `r0` of the ball inscribed in the Brillouin zone.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lattice {
    pub basis: [Vec3; 3],
    pub dual: [Vec3; 3],
    pub cell_volume: f64,
    pub r0: f64,
    #[serde(skip)]
    neighbors: Vec<Vec3>,
}

/// Integer window searched for the shortest dual vector.
const R0_WINDOW: i64 = 3;
/// Integer window used for the Voronoi (Brillouin zone) faces.
const VORONOI_WINDOW: i64 = 2;

pub fn build_lattice(a1: Vec3, a2: Vec3, a3: Vec3) -> Result<Lattice> {
    let a = Mat3::from_columns(&[a1, a2, a3]);
    let det = a.determinant();
    let scale = a1.norm() * a2.norm() * a3.norm();
    if !(det.abs() > 1e-12 * scale) || !det.is_finite() {
        return Err(Error::DegenerateLattice(det));
    }
    let inv_t = a
        .try_inverse()
        .ok_or(Error::DegenerateLattice(det))?
        .transpose();
    let b = inv_t * (2.0 * PI);
    let dual = [
        b.column(0).into_owned(),
        b.column(1).into_owned(),
        b.column(2).into_owned(),
    ];
    let combo = |m: [i64; 3]| dual[0] * m[0] as f64 + dual[1] * m[1] as f64 + dual[2] * m[2] as f64;

    let mut min_len = f64::INFINITY;
    for m in integer_window(R0_WINDOW) {
        min_len = min_len.min(combo(m).norm());
    }
    let neighbors = integer_window(VORONOI_WINDOW).map(combo).collect();
    Ok(Lattice {
        basis: [a1, a2, a3],
        dual,
        cell_volume: det.abs(),
        r0: 0.5 * min_len,
        neighbors,
    })
}

fn integer_window(w: i64) -> impl Iterator<Item = [i64; 3]> {
    (-w..=w).flat_map(move |i| {
        (-w..=w).flat_map(move |j| (-w..=w).map(move |k| [i, j, k]))
    })
    .filter(|m| *m != [0, 0, 0])
}

impl Lattice {
    /// The cubic lattice (2πℤ)³.
    pub fn standard() -> Self {
        Self::cubic(2.0 * PI)
    }

    pub fn cubic(side: f64) -> Self {
        build_lattice(
            Vec3::x() * side,
            Vec3::y() * side,
            Vec3::z() * side,
        )
        .expect("cubic lattice is nondegenerate")
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        build_lattice(self.basis[0] * s, self.basis[1] * s, self.basis[2] * s)
    }

    /// Dual lattice vector Σ m_j b_j.
    pub fn dual_vector(&self, m: [i64; 3]) -> Vec3 {
        self.dual[0] * m[0] as f64 + self.dual[1] * m[1] as f64 + self.dual[2] * m[2] as f64
    }

    /// Point Σ s_j a_j for fractional coordinates s.
    pub fn point(&self, frac: [f64; 3]) -> Vec3 {
        self.basis[0] * frac[0] + self.basis[1] * frac[1] + self.basis[2] * frac[2]
    }

    /// Fractional coordinates ⟨b_j, x⟩ / 2π.
    pub fn frac_coords(&self, x: &Vec3) -> [f64; 3] {
        [
            self.dual[0].dot(x) / (2.0 * PI),
            self.dual[1].dot(x) / (2.0 * PI),
            self.dual[2].dot(x) / (2.0 * PI),
        ]
    }

    /// Nearest periodic image of `x` to the origin (fractional coordinates wrapped to [-1/2, 1/2)).
    pub fn wrap_centered(&self, x: &Vec3) -> Vec3 {
        let f = self.frac_coords(x);
        self.point([
            f[0] - (f[0] + 0.5).floor(),
            f[1] - (f[1] + 0.5).floor(),
            f[2] - (f[2] + 0.5).floor(),
        ])
    }

    /// |Ω|^{1/3}, a length scale for the cell.
    pub fn linear_scale(&self) -> f64 {
        self.cell_volume.cbrt()
    }

    /// Whether ξ lies strictly inside the scaled Brillouin zone Ω̃/ε, i.e.
    /// 2ε⟨ξ, b⟩ < |b|² for every Voronoi-relevant dual vector b.
    pub fn in_scaled_brillouin(&self, xi: &Vec3, eps: f64) -> bool {
        self.neighbors
            .iter()
            .all(|b| 2.0 * eps * xi.dot(b) < b.norm_squared())
    }

    pub fn basis_matrix(&self) -> Mat3 {
        Mat3::from_columns(&self.basis)
    }
}

/// The symbol b(ξ): top 3×3 block r(ξ)μ₀^{-1/2}, bottom row ξᵀμ₀^{1/2}.
///
/// For real ξ the symbol is real, so it is returned as a real matrix.
pub fn symbol_b(xi: &Vec3, mu0: &Mu0) -> Mat4x3 {
    let mut b = Mat4x3::zeros();
    b.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(cross_matrix(xi) * mu0.inv_sqrt));
    let bottom = xi.transpose() * mu0.sqrt;
    b.fixed_view_mut::<1, 3>(3, 0).copy_from(&bottom);
    b
}

/// Constants α₀ = min{|μ₀|⁻¹, |μ₀⁻¹|⁻¹} and α₁ = |μ₀| + |μ₀⁻¹| bounding b(θ)*b(θ) on the unit sphere.
pub fn alpha_constants(mu0: &Mu0) -> (f64, f64) {
    ((1.0 / mu0.norm).min(1.0 / mu0.inv_norm), mu0.norm + mu0.inv_norm)
}
