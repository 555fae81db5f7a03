//! Run configuration shared by the command-line front end and the harness.

use serde::{Deserialize, Serialize};

use crate::bloch::BlochOptions;
use crate::coefficients::{CoefficientFamily, CoefficientSet};
use crate::error::{Error, Result};
use crate::lattice::{build_lattice, Lattice};
use crate::linalg::{Mat3, Mu0, Vec3};
use crate::solver::SolverOptions;
use crate::wave::TorusOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    /// Rows are the basis vectors a₁, a₂, a₃.
    pub basis: [[f64; 3]; 3],
}

impl Default for LatticeConfig {
    fn default() -> Self {
        let s = 2.0 * std::f64::consts::PI;
        Self {
            basis: [[s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, s]],
        }
    }
}

impl LatticeConfig {
    pub fn build(&self) -> Result<Lattice> {
        let [a, b, c] = self.basis.map(|r| Vec3::new(r[0], r[1], r[2]));
        build_lattice(a, b, c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Cell-problem grid. Axes along which the coefficients are constant may use 1 point.
    pub cell: [usize; 3],
    /// Torus grid along axes without coefficient variation.
    pub torus_base: [usize; 3],
    /// Torus points per coefficient period along varying axes; the torus grid is this times n.
    pub points_per_period: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            cell: [16, 16, 16],
            torus_base: [8, 8, 8],
            points_per_period: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GermConfig {
    pub sphere_samples: usize,
    /// Directions reported individually (Fibonacci points).
    pub directions: usize,
}

impl Default for GermConfig {
    fn default() -> Self {
        Self {
            sphere_samples: 2000,
            directions: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub phi_seed: u64,
    pub f_seed: u64,
    /// Largest |integer index| of the data modes.
    pub max_index: i64,
    /// Amplitudes scale like (1 + |m|²)^{-decay/2}; 3 spreads the H³ norm evenly over the modes.
    pub decay: f64,
    /// Use φ = 0.
    pub phi_zero: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            phi_seed: 1,
            f_seed: 2,
            max_index: 2,
            decay: 3.0,
            phi_zero: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub scenario: String,
    /// n with ε = 1/n.
    pub inverse_eps: Vec<usize>,
    pub tau: f64,
    pub data: DataConfig,
    /// Errors below this are treated as solver floor.
    pub floor: f64,
    pub expected_slope: f64,
    pub slope_margin: f64,
    /// τ values for the growth probe.
    pub probe_taus: Vec<f64>,
    /// n used by the growth probe.
    pub probe_n: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            scenario: "default".into(),
            inverse_eps: vec![2, 4, 8, 16],
            tau: 1.0,
            data: DataConfig::default(),
            floor: 1e-6,
            expected_slope: 1.0,
            slope_margin: 0.1,
            probe_taus: vec![0.5, 1.0, 2.0, 4.0],
            probe_n: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub lattice: LatticeConfig,
    pub coefficients: CoefficientFamily,
    /// Constant permeability μ₀.
    pub mu0: [[f64; 3]; 3],
    pub grid: GridConfig,
    pub solver: SolverOptions,
    pub germ: GermConfig,
    pub bloch: BlochOptions,
    pub wave: TorusOptions,
    pub sweep: SweepConfig,
    /// Worker threads; 0 means available parallelism.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            lattice: LatticeConfig::default(),
            coefficients: CoefficientFamily::layered_isotropic(),
            mu0: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            grid: GridConfig::default(),
            solver: SolverOptions::default(),
            germ: GermConfig::default(),
            bloch: BlochOptions::default(),
            wave: TorusOptions::default(),
            sweep: SweepConfig::default(),
            workers: 0,
        }
    }
}

impl RunConfig {
    pub fn mu0(&self) -> Result<Mu0> {
        Mu0::new(Mat3::from_fn(|i, j| self.mu0[i][j]))
    }

    pub fn coefficient_set(&self) -> Result<CoefficientSet> {
        CoefficientSet::new(self.lattice.build()?, self.coefficients.clone(), self.mu0()?, self.grid.cell)
    }

    /// Checks that do not need any solve.
    pub fn validate(&self) -> Result<()> {
        if self.grid.cell.contains(&0) || self.grid.torus_base.contains(&0) {
            return Err(Error::Invalid("grid sizes must be positive".into()));
        }
        if self.grid.points_per_period % 2 != 0 {
            return Err(Error::Invalid("points_per_period must be even".into()));
        }
        if self.sweep.inverse_eps.contains(&0) {
            return Err(Error::Invalid("inverse_eps entries must be positive".into()));
        }
        if !(self.sweep.tau >= 0.0) {
            return Err(Error::Invalid("tau must be nonnegative".into()));
        }
        self.lattice.build()?;
        self.mu0()?;
        Ok(())
    }
}
