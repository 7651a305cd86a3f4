//! One-dimensional particle configurations for the bus chain.
//!
//! All lengths are in units of the mean lattice spacing `a`. The two boundary
//! qubits sit a distance `offset_d` outside the outermost chain sites.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default regularization floor for disordered configurations.
pub const DEFAULT_R_MIN: f64 = 0.1;

/// Upper bound on whole-configuration resampling attempts.
pub const MAX_RESAMPLE_ATTEMPTS: usize = 200_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("chain needs at least 2 sites, got {0}")]
    TooFewSites(usize),
    #[error("qubit offset d must be positive, got {0}")]
    NonPositiveOffset(f64),
    #[error("minimum separation r_min must lie in [0, 1), got {0}")]
    InvalidMinSeparation(f64),
    #[error("jitter width must lie in [0, 1), got {0}")]
    InvalidJitter(f64),
    #[error("no configuration with min separation {r_min} found after {attempts} attempts")]
    ResamplingExhausted { r_min: f64, attempts: usize },
    #[error("positions must be strictly increasing with separation >= {r_min}")]
    InvalidPositions { r_min: f64 },
}

/// How a disordered chain is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DisorderModel {
    /// N i.i.d. uniform points on `[0, N-1]`, sorted.
    Interval,
    /// Uniform displacement of half-width `width` about each lattice site.
    Jitter { width: f64 },
}

/// Site and boundary-qubit positions of one chain realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainGeometry {
    positions: Vec<f64>,
    qubit_a_pos: f64,
    qubit_b_pos: f64,
    offset_d: f64,
    r_min: f64,
}

impl ChainGeometry {
    /// Builds a geometry from explicit sorted site positions. A single site
    /// is accepted here for few-body reductions.
    pub fn from_positions(
        positions: Vec<f64>,
        offset_d: f64,
        r_min: f64,
    ) -> Result<Self, GeometryError> {
        if positions.is_empty() {
            return Err(GeometryError::TooFewSites(0));
        }
        check_offset(offset_d)?;
        if !(0.0..1.0).contains(&r_min) {
            return Err(GeometryError::InvalidMinSeparation(r_min));
        }
        if !positions.iter().all(|x| x.is_finite())
            || min_separation(&positions) < r_min.max(f64::MIN_POSITIVE)
        {
            return Err(GeometryError::InvalidPositions { r_min });
        }
        let first = positions[0];
        let last = positions[positions.len() - 1];
        Ok(ChainGeometry {
            qubit_a_pos: first - offset_d,
            qubit_b_pos: last + offset_d,
            positions,
            offset_d,
            r_min,
        })
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn n_sites(&self) -> usize {
        self.positions.len()
    }

    pub fn qubit_a_pos(&self) -> f64 {
        self.qubit_a_pos
    }

    pub fn qubit_b_pos(&self) -> f64 {
        self.qubit_b_pos
    }

    pub fn offset_d(&self) -> f64 {
        self.offset_d
    }

    /// The regularization floor the geometry was built with.
    pub fn r_min(&self) -> f64 {
        self.r_min
    }

    /// Qubit-to-qubit distance `L`.
    pub fn span_l(&self) -> f64 {
        self.qubit_b_pos - self.qubit_a_pos
    }

    /// Nearest-neighbor spacings between consecutive sites.
    pub fn spacings(&self) -> Vec<f64> {
        self.positions.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Whether the site positions are symmetric under reflection about the
    /// chain center (to within `tol`).
    pub fn is_mirror_symmetric(&self, tol: f64) -> bool {
        let n = self.positions.len();
        let center = 0.5 * (self.qubit_a_pos + self.qubit_b_pos);
        (0..n).all(|i| {
            let mirrored = 2.0 * center - self.positions[n - 1 - i];
            (mirrored - self.positions[i]).abs() <= tol
        })
    }
}

fn check_offset(offset_d: f64) -> Result<(), GeometryError> {
    if offset_d > 0.0 && offset_d.is_finite() {
        Ok(())
    } else {
        Err(GeometryError::NonPositiveOffset(offset_d))
    }
}

fn min_separation(sorted: &[f64]) -> f64 {
    sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min)
}

/// Regular chain with sites at `0, 1, ..., N-1`.
pub fn make_equidistant(n_sites: usize, offset_d: f64) -> Result<ChainGeometry, GeometryError> {
    if n_sites < 2 {
        return Err(GeometryError::TooFewSites(n_sites));
    }
    check_offset(offset_d)?;
    let positions = (0..n_sites).map(|i| i as f64).collect();
    ChainGeometry::from_positions(positions, offset_d, 0.0)
}

/// Disordered chain drawn from the interval model.
///
/// Draws `N` i.i.d. uniform points on `[0, N-1]`, sorts them and rejects the
/// whole configuration until all gaps are at least `r_min`.
pub fn make_disordered(
    n_sites: usize,
    offset_d: f64,
    seed: u64,
    r_min: f64,
) -> Result<ChainGeometry, GeometryError> {
    sample_disordered(n_sites, offset_d, seed, r_min, DisorderModel::Interval)
}

/// Disordered chain from any [`DisorderModel`].
pub fn sample_disordered(
    n_sites: usize,
    offset_d: f64,
    seed: u64,
    r_min: f64,
    model: DisorderModel,
) -> Result<ChainGeometry, GeometryError> {
    if n_sites < 2 {
        return Err(GeometryError::TooFewSites(n_sites));
    }
    check_offset(offset_d)?;
    if !(0.0..1.0).contains(&r_min) {
        return Err(GeometryError::InvalidMinSeparation(r_min));
    }
    if let DisorderModel::Jitter { width } = model {
        if !(0.0..1.0).contains(&width) {
            return Err(GeometryError::InvalidJitter(width));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let upper = (n_sites - 1) as f64;
    let mut positions = vec![0.0; n_sites];
    for _ in 0..MAX_RESAMPLE_ATTEMPTS {
        match model {
            DisorderModel::Interval => {
                for x in positions.iter_mut() {
                    *x = rng.gen::<f64>() * upper;
                }
                positions.sort_by(f64::total_cmp);
            }
            DisorderModel::Jitter { width } => {
                for (i, x) in positions.iter_mut().enumerate() {
                    *x = i as f64 + width * (2.0 * rng.gen::<f64>() - 1.0);
                }
            }
        }
        // Zero gaps are rejected even when r_min = 0.
        if min_separation(&positions) >= r_min && min_separation(&positions) > 0.0 {
            return ChainGeometry::from_positions(positions, offset_d, r_min);
        }
    }
    Err(GeometryError::ResamplingExhausted {
        r_min,
        attempts: MAX_RESAMPLE_ATTEMPTS,
    })
}
