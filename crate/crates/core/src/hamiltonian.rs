//! Driven power-law spin-chain Hamiltonian in one boundary-qubit sector.
//!
//! Units: hbar = 1, lengths in units of `a`. With `s_i = +1` for `|up>`,
//!
//! ```text
//! H = sign * ( -(Delta/2) sum_i s_i + (Omega/2) sum_i X_i
//!              + sum_{i<j} C_p / |r_i - r_j|^p n_i n_j + sum_i v_i n_i )
//! ```
//!
//! where `v_i` is the boundary potential of the qubits that are excited in
//! the sector. The single-flip pattern depends only on the basis, so a
//! [`SectorModel`] precomputes it once and produces the matrix at any ramp
//! instant by recomputing only the diagonal.

use std::ops::{Add, Mul};
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::BasisSet;
use crate::geometry::ChainGeometry;

/// Dimension above which matrix-vector products are split across threads.
const PARALLEL_MATVEC_DIM: usize = 1 << 15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HamiltonianError {
    #[error("invalid drive parameter: {0}")]
    InvalidParams(String),
    #[error("basis was built on a different geometry")]
    BasisMismatch,
}

/// Ramp amplitudes, ramp duration and interaction law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveParams {
    pub omega0: f64,
    pub delta0: f64,
    pub t0: f64,
    pub c_p: f64,
    pub p: u32,
}

impl DriveParams {
    pub fn new(
        omega0: f64,
        delta0: f64,
        t0: f64,
        c_p: f64,
        p: u32,
    ) -> Result<Self, HamiltonianError> {
        let params = DriveParams {
            omega0,
            delta0,
            t0,
            c_p,
            p,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), HamiltonianError> {
        let positive = [
            ("omega0", self.omega0),
            ("delta0", self.delta0),
            ("t0", self.t0),
            ("c_p", self.c_p),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(HamiltonianError::InvalidParams(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        if self.p != 3 && self.p != 6 {
            return Err(HamiltonianError::InvalidParams(format!(
                "p must be 3 or 6, got {}",
                self.p
            )));
        }
        Ok(())
    }

    pub fn with_omega0(self, omega0: f64) -> Self {
        DriveParams { omega0, ..self }
    }

    pub fn with_t0(self, t0: f64) -> Self {
        DriveParams { t0, ..self }
    }

    /// Pair interaction `C_p / r^p`.
    pub fn interaction(&self, distance: f64) -> f64 {
        self.c_p / distance.abs().powi(self.p as i32)
    }
}

/// Rabi frequency along the ramp: `Omega0 sin^2((8 t/t0) / (1 + 16 (t/t0)^2))`.
pub fn ramp_omega(t: f64, params: &DriveParams) -> f64 {
    let x = t / params.t0;
    let arg = 8.0 * x / (1.0 + 16.0 * x * x);
    params.omega0 * arg.sin().powi(2)
}

/// Detuning along the ramp: `Delta0 (1 - 5 exp(-4 t/t0))`.
pub fn ramp_delta(t: f64, params: &DriveParams) -> f64 {
    params.delta0 * (1.0 - 5.0 * (-4.0 * t / params.t0).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QubitState {
    Down,
    Up,
}

impl QubitState {
    pub fn is_up(self) -> bool {
        self == QubitState::Up
    }
}

/// Joint z-basis state of the two boundary qubits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QubitSector {
    pub alpha: QubitState,
    pub beta: QubitState,
}

impl QubitSector {
    pub const DOWN_DOWN: QubitSector = QubitSector::new(QubitState::Down, QubitState::Down);
    pub const DOWN_UP: QubitSector = QubitSector::new(QubitState::Down, QubitState::Up);
    pub const UP_DOWN: QubitSector = QubitSector::new(QubitState::Up, QubitState::Down);
    pub const UP_UP: QubitSector = QubitSector::new(QubitState::Up, QubitState::Up);

    /// All sectors, ordered by `index()`.
    pub const ALL: [QubitSector; 4] = [Self::DOWN_DOWN, Self::DOWN_UP, Self::UP_DOWN, Self::UP_UP];

    pub const fn new(alpha: QubitState, beta: QubitState) -> Self {
        QubitSector { alpha, beta }
    }

    /// `2 [alpha = up] + [beta = up]`.
    pub fn index(self) -> usize {
        2 * self.alpha.is_up() as usize + self.beta.is_up() as usize
    }

    pub fn label(self) -> &'static str {
        match (self.alpha, self.beta) {
            (QubitState::Down, QubitState::Down) => "dd",
            (QubitState::Down, QubitState::Up) => "du",
            (QubitState::Up, QubitState::Down) => "ud",
            (QubitState::Up, QubitState::Up) => "uu",
        }
    }
}

/// Overall sign of the generator (`-H` drives the reversal).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// Per-site energy shift from the excited boundary qubits of `sector`.
pub fn boundary_potential(
    geometry: &ChainGeometry,
    sector: QubitSector,
    params: &DriveParams,
) -> Vec<f64> {
    geometry
        .positions()
        .iter()
        .map(|&r| {
            let mut v = 0.0;
            if sector.alpha.is_up() {
                v += params.interaction(geometry.qubit_a_pos() - r);
            }
            if sector.beta.is_up() {
                v += params.interaction(geometry.qubit_b_pos() - r);
            }
            v
        })
        .collect()
}

/// Scalar type a [`SparseHamiltonian`] can act on.
pub trait Amplitude: Copy + Send + Sync + Add<Output = Self> + Mul<f64, Output = Self> {
    const ZERO: Self;
}

impl Amplitude for f64 {
    const ZERO: Self = 0.0;
}

impl Amplitude for Complex64 {
    const ZERO: Self = Complex64::new(0.0, 0.0);
}

/// Single-spin-flip adjacency of a basis in CSR layout.
#[derive(Debug, Clone)]
pub struct Connectivity {
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
}

impl Connectivity {
    pub fn build(basis: &BasisSet) -> Self {
        let n = basis.n_sites();
        let rows: Vec<Vec<u32>> = basis
            .configs()
            .par_iter()
            .map(|&c| {
                (0..n)
                    .filter_map(|site| basis.index_of(c.flip(site)).map(|j| j as u32))
                    .collect()
            })
            .collect();
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let mut cols = Vec::with_capacity(rows.iter().map(Vec::len).sum());
        for row in rows {
            cols.extend_from_slice(&row);
            row_ptr.push(cols.len());
        }
        Connectivity { row_ptr, cols }
    }

    pub fn dim(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn neighbors(&self, row: usize) -> &[u32] {
        &self.cols[self.row_ptr[row]..self.row_ptr[row + 1]]
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }
}

/// Sector Hamiltonian at one instant: diagonal plus a uniform flip amplitude.
#[derive(Debug, Clone)]
pub struct SparseHamiltonian {
    diagonal: Vec<f64>,
    offdiag: f64,
    connectivity: Arc<Connectivity>,
}

impl SparseHamiltonian {
    pub fn dim(&self) -> usize {
        self.diagonal.len()
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    /// Matrix element shared by every single-flip pair (`sign * Omega / 2`).
    pub fn offdiag_amplitude(&self) -> f64 {
        self.offdiag
    }

    pub fn connectivity(&self) -> &Connectivity {
        &self.connectivity
    }

    /// `y = H x`.
    pub fn apply<T: Amplitude>(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.dim());
        assert_eq!(y.len(), self.dim());
        let row = |i: usize| {
            let hop = self
                .connectivity
                .neighbors(i)
                .iter()
                .fold(T::ZERO, |acc, &j| acc + x[j as usize]);
            x[i] * self.diagonal[i] + hop * self.offdiag
        };
        if self.dim() >= PARALLEL_MATVEC_DIM {
            y.par_iter_mut()
                .enumerate()
                .for_each(|(i, yi)| *yi = row(i));
        } else {
            y.iter_mut().enumerate().for_each(|(i, yi)| *yi = row(i));
        }
    }

    /// Upper bound on the spectral radius (Gershgorin).
    pub fn norm_estimate(&self) -> f64 {
        let hop = self.offdiag.abs();
        (0..self.dim())
            .map(|i| self.diagonal[i].abs() + hop * self.connectivity.neighbors(i).len() as f64)
            .fold(0.0, f64::max)
    }

    /// Gershgorin enclosure `(lo, hi)` of the spectrum.
    pub fn spectral_bounds(&self) -> (f64, f64) {
        let hop = self.offdiag.abs();
        (0..self.dim()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
            let r = hop * self.connectivity.neighbors(i).len() as f64;
            (lo.min(self.diagonal[i] - r), hi.max(self.diagonal[i] + r))
        })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diagonal[i];
            for &j in self.connectivity.neighbors(i) {
                m[(i, j as usize)] = self.offdiag;
            }
        }
        m
    }
}

/// Time-independent parts of one sector Hamiltonian.
#[derive(Debug, Clone)]
pub struct SectorModel {
    sector: QubitSector,
    connectivity: Arc<Connectivity>,
    magnetization: Vec<f64>,
    static_energy: Vec<f64>,
}

impl SectorModel {
    pub fn new(
        basis: &BasisSet,
        geometry: &ChainGeometry,
        sector: QubitSector,
        params: &DriveParams,
    ) -> Result<Self, HamiltonianError> {
        Self::with_connectivity(
            basis,
            geometry,
            sector,
            params,
            Arc::new(Connectivity::build(basis)),
        )
    }

    /// Reuses a connectivity already built for `basis`.
    pub fn with_connectivity(
        basis: &BasisSet,
        geometry: &ChainGeometry,
        sector: QubitSector,
        params: &DriveParams,
        connectivity: Arc<Connectivity>,
    ) -> Result<Self, HamiltonianError> {
        params.validate()?;
        if !basis.matches(geometry) || connectivity.dim() != basis.dim() {
            return Err(HamiltonianError::BasisMismatch);
        }
        let n = geometry.n_sites();
        let pos = geometry.positions();
        let mut pair = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let w = params.interaction(pos[j] - pos[i]);
                pair[i * n + j] = w;
                pair[j * n + i] = w;
            }
        }
        let boundary = boundary_potential(geometry, sector, params);
        let (magnetization, static_energy): (Vec<f64>, Vec<f64>) = basis
            .configs()
            .par_iter()
            .map(|&c| {
                let mut energy = 0.0;
                let mut ups = 0usize;
                for i in c.up_sites() {
                    ups += 1;
                    energy += boundary[i];
                    for j in c.up_sites().take_while(|&j| j < i) {
                        energy += pair[j * n + i];
                    }
                }
                ((2 * ups) as f64 - n as f64, energy)
            })
            .unzip();
        Ok(SectorModel {
            sector,
            connectivity,
            magnetization,
            static_energy,
        })
    }

    pub fn sector(&self) -> QubitSector {
        self.sector
    }

    pub fn dim(&self) -> usize {
        self.static_energy.len()
    }

    pub fn connectivity(&self) -> &Arc<Connectivity> {
        &self.connectivity
    }

    /// Interaction plus boundary energy of each configuration.
    pub fn static_energy(&self) -> &[f64] {
        &self.static_energy
    }

    pub fn hamiltonian(&self, omega: f64, delta: f64, sign: Sign) -> SparseHamiltonian {
        let s = sign.value();
        let diagonal = self
            .magnetization
            .iter()
            .zip(&self.static_energy)
            .map(|(&m, &e)| s * (-0.5 * delta * m + e))
            .collect();
        SparseHamiltonian {
            diagonal,
            offdiag: s * 0.5 * omega,
            connectivity: Arc::clone(&self.connectivity),
        }
    }

    /// Hamiltonian with `Omega`, `Delta` taken from the ramp at time `t`.
    pub fn at_time(&self, t: f64, params: &DriveParams, sign: Sign) -> SparseHamiltonian {
        self.hamiltonian(ramp_omega(t, params), ramp_delta(t, params), sign)
    }
}

/// A chain realization with its basis and the four sector Hamiltonians.
#[derive(Debug, Clone)]
pub struct BusModel {
    geometry: ChainGeometry,
    basis: Arc<BasisSet>,
    params: DriveParams,
    sectors: Vec<SectorModel>,
}

impl BusModel {
    pub fn new(
        geometry: ChainGeometry,
        basis: BasisSet,
        params: DriveParams,
    ) -> Result<Self, HamiltonianError> {
        Self::from_shared(geometry, Arc::new(basis), params)
    }

    pub fn from_shared(
        geometry: ChainGeometry,
        basis: Arc<BasisSet>,
        params: DriveParams,
    ) -> Result<Self, HamiltonianError> {
        params.validate()?;
        if !basis.matches(&geometry) {
            return Err(HamiltonianError::BasisMismatch);
        }
        let connectivity = Arc::new(Connectivity::build(&basis));
        let sectors = QubitSector::ALL
            .iter()
            .map(|&s| {
                SectorModel::with_connectivity(
                    &basis,
                    &geometry,
                    s,
                    &params,
                    Arc::clone(&connectivity),
                )
            })
            .collect::<Result<_, _>>()?;
        Ok(BusModel {
            geometry,
            basis,
            params,
            sectors,
        })
    }

    /// Same chain under new drive parameters; the sector models are reused
    /// when the interaction law is unchanged.
    pub fn with_params(&self, params: DriveParams) -> Result<Self, HamiltonianError> {
        params.validate()?;
        if params.c_p == self.params.c_p && params.p == self.params.p {
            Ok(BusModel {
                params,
                ..self.clone()
            })
        } else {
            Self::from_shared(self.geometry.clone(), Arc::clone(&self.basis), params)
        }
    }

    pub fn geometry(&self) -> &ChainGeometry {
        &self.geometry
    }

    pub fn basis(&self) -> &BasisSet {
        &self.basis
    }

    pub fn params(&self) -> &DriveParams {
        &self.params
    }

    pub fn sector(&self, sector: QubitSector) -> &SectorModel {
        &self.sectors[sector.index()]
    }
}

/// One-shot assembly of a sector Hamiltonian.
pub fn assemble(
    basis: &BasisSet,
    geometry: &ChainGeometry,
    sector: QubitSector,
    omega: f64,
    delta: f64,
    params: &DriveParams,
    sign: Sign,
) -> Result<SparseHamiltonian, HamiltonianError> {
    Ok(SectorModel::new(basis, geometry, sector, params)?.hamiltonian(omega, delta, sign))
}
