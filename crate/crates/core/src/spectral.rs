//! Low-lying spectrum of sector Hamiltonians: ground states, gaps along the
//! ramp, and the qubit-qubit interaction energy.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{build_basis, BasisError, BasisSet, TruncationPolicy};
use crate::geometry::ChainGeometry;
use crate::hamiltonian::{
    ramp_delta, ramp_omega, BusModel, DriveParams, HamiltonianError, QubitSector, Sign,
    SparseHamiltonian,
};
use crate::linalg::sym_eigen;

/// Gaps below `DEGENERACY_RTOL * max(1, |e0|)` are reported as zero.
pub const DEGENERACY_RTOL: f64 = 1e-10;

/// Default number of uniform grid points for the ramp gap scan.
pub const DEFAULT_GAP_GRID: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("eigensolver did not converge after {matvecs} products (best residual {residual:e})")]
    NotConverged { matvecs: usize, residual: f64 },
    #[error("a gap needs at least two states, basis has dimension 1")]
    NoExcitedState,
    #[error("gap scan needs at least 3 grid points, got {0}")]
    GridTooSmall(usize),
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
    #[error(transparent)]
    Basis(#[from] BasisError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanczosOptions {
    /// Residual tolerance relative to the Gershgorin norm estimate.
    pub tol: f64,
    /// Budget of matrix-vector products.
    pub max_matvecs: usize,
    /// Krylov subspace size per restart cycle.
    pub krylov_dim: usize,
    /// Ritz vectors retained across a restart.
    pub keep: usize,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        LanczosOptions {
            tol: 1e-10,
            max_matvecs: 50_000,
            krylov_dim: 64,
            keep: 20,
        }
    }
}

/// Two lowest eigenpairs' worth of information.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResult {
    pub e0: f64,
    /// `None` for a one-dimensional basis.
    pub e1: Option<f64>,
    pub psi0: Vec<f64>,
    /// Largest residual norm `|H x - e x|` of the returned pairs.
    pub residual: f64,
    pub norm_estimate: f64,
    pub matvecs: usize,
}

impl SpectralResult {
    pub fn gap(&self) -> Result<f64, SpectralError> {
        self.e1
            .map(|e1| e1 - self.e0)
            .ok_or(SpectralError::NoExcitedState)
    }
}

/// Deterministic start vector with no reflection symmetry in basis order.
fn start_vector(dim: usize, seed: usize) -> Vec<f64> {
    const GOLDEN: f64 = 0.618_033_988_749_894_9;
    let shift = 0.5 + 0.1 * seed as f64;
    let mut v: Vec<f64> = (0..dim)
        .map(|i| ((i + 1 + 7919 * seed) as f64 * GOLDEN).fract() - 0.5 + shift)
        .collect();
    let n = norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

/// Lanczos basis stored row-major, one vector per row.
struct Krylov {
    dim: usize,
    data: Vec<f64>,
}

impl Krylov {
    fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn push(&mut self, v: &[f64]) {
        self.data.extend_from_slice(v);
    }

    /// Two passes of classical Gram-Schmidt; returns accumulated coefficients.
    fn orthogonalize(&self, w: &mut [f64]) -> Vec<f64> {
        let mut coefs = vec![0.0; self.len()];
        for _ in 0..2 {
            for (i, c) in coefs.iter_mut().enumerate() {
                let v = self.vector(i);
                let h = dot(v, w);
                axpy(-h, v, w);
                *c += h;
            }
        }
        coefs
    }

    /// `sum_k coef[k] * v_k`.
    fn combine(&self, coef: impl Iterator<Item = f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (k, c) in coef.enumerate() {
            axpy(c, self.vector(k), &mut out);
        }
        out
    }
}

/// Two lowest eigenvalues and the ground state of `h`.
pub fn lowest_two(
    h: &SparseHamiltonian,
    tol: f64,
    max_iter: usize,
) -> Result<SpectralResult, SpectralError> {
    lowest_two_with(
        h,
        &LanczosOptions {
            tol,
            max_matvecs: max_iter,
            ..LanczosOptions::default()
        },
    )
}

/// Thick-restart Lanczos with full reorthogonalization.
pub fn lowest_two_with(
    h: &SparseHamiltonian,
    opts: &LanczosOptions,
) -> Result<SpectralResult, SpectralError> {
    let dim = h.dim();
    let norm_est = h.norm_estimate().max(f64::MIN_POSITIVE);
    if dim == 1 {
        return Ok(SpectralResult {
            e0: h.diagonal()[0],
            e1: None,
            psi0: vec![1.0],
            residual: 0.0,
            norm_estimate: norm_est,
            matvecs: 0,
        });
    }
    let m = opts.krylov_dim.max(4).min(dim);
    let keep = opts.keep.clamp(2, m.saturating_sub(2).max(2));
    let breakdown = 1e-13 * norm_est;
    let target = opts.tol * norm_est;

    let mut krylov = Krylov {
        dim,
        data: Vec::with_capacity((m + 1) * dim),
    };
    krylov.push(&start_vector(dim, 0));
    let mut t = DMatrix::<f64>::zeros(m, m);
    let mut processed = 0;
    let mut matvecs = 0;
    let mut refills = 0;
    let mut w = vec![0.0; dim];
    let mut best_residual = f64::INFINITY;

    loop {
        let mut beta_last = 0.0;
        let mut residual_vec = Vec::new();
        for j in processed..m {
            h.apply(krylov.vector(j), &mut w);
            matvecs += 1;
            let coefs = krylov.orthogonalize(&mut w);
            for (i, &c) in coefs.iter().enumerate().take(j + 1) {
                t[(i, j)] = c;
                t[(j, i)] = c;
            }
            let beta = norm(&w);
            if j + 1 < m {
                if beta > breakdown {
                    w.iter_mut().for_each(|x| *x /= beta);
                    krylov.push(&w);
                } else {
                    // Invariant subspace: continue from a fresh orthogonal direction.
                    refills += 1;
                    let mut fresh = start_vector(dim, refills);
                    krylov.orthogonalize(&mut fresh);
                    let n = norm(&fresh);
                    fresh.iter_mut().for_each(|x| *x /= n);
                    krylov.push(&fresh);
                }
            } else {
                beta_last = beta;
                if beta > breakdown {
                    residual_vec = w.iter().map(|x| x / beta).collect();
                }
            }
        }

        let (theta, s) = sym_eigen(&t);
        let res = |k: usize| beta_last * s[(m - 1, k)].abs();
        let residual = res(0).max(res(1));
        best_residual = best_residual.min(residual);
        if residual <= target || residual_vec.is_empty() {
            let mut psi0 = krylov.combine(s.column(0).iter().copied());
            let n = norm(&psi0);
            psi0.iter_mut().for_each(|x| *x /= n);
            return Ok(SpectralResult {
                e0: theta[0],
                e1: Some(theta[1]),
                psi0,
                residual,
                norm_estimate: norm_est,
                matvecs,
            });
        }
        if matvecs >= opts.max_matvecs {
            return Err(SpectralError::NotConverged {
                matvecs,
                residual: best_residual,
            });
        }

        // Thick restart: keep the lowest Ritz vectors plus the residual direction.
        let mut restarted = Krylov {
            dim,
            data: Vec::with_capacity((m + 1) * dim),
        };
        for k in 0..keep {
            restarted.push(&krylov.combine(s.column(k).iter().copied()));
        }
        let mut r = residual_vec;
        restarted.orthogonalize(&mut r);
        let n = norm(&r);
        r.iter_mut().for_each(|x| *x /= n);
        restarted.push(&r);
        krylov = restarted;
        t.fill(0.0);
        for k in 0..keep {
            t[(k, k)] = theta[k];
            let coupling = beta_last * s[(m - 1, k)];
            t[(k, keep)] = coupling;
            t[(keep, k)] = coupling;
        }
        processed = keep;
    }
}

/// Ramp minimum of the gap over the requested sectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapScan {
    pub gap: f64,
    pub argmin_time: f64,
    pub argmin_sector: QubitSector,
    /// Set when the minimum fell below the degeneracy guard.
    pub degenerate: bool,
    /// Coarse-grid gap curves, one per scanned sector, in input order.
    pub curves: Vec<(QubitSector, Vec<f64>)>,
    pub grid: Vec<f64>,
}

fn guarded_gap(result: &SpectralResult) -> Result<(f64, bool), SpectralError> {
    let gap = result.gap()?;
    if gap < DEGENERACY_RTOL * result.e0.abs().max(1.0) {
        Ok((0.0, true))
    } else {
        Ok((gap, false))
    }
}

fn gap_at(
    model: &BusModel,
    sector: QubitSector,
    t: f64,
    opts: &LanczosOptions,
) -> Result<(f64, bool), SpectralError> {
    let h = model.sector(sector).at_time(t, model.params(), Sign::Plus);
    guarded_gap(&lowest_two_with(&h, opts)?)
}

/// Minimum of `e1 - e0` over a uniform ramp grid and the given sectors,
/// refined once with a parabola through the coarse minimum.
pub fn min_gap_over_ramp(
    model: &BusModel,
    sectors: &[QubitSector],
    grid_points: usize,
    opts: &LanczosOptions,
) -> Result<GapScan, SpectralError> {
    if grid_points < 3 {
        return Err(SpectralError::GridTooSmall(grid_points));
    }
    let t0 = model.params().t0;
    let grid: Vec<f64> = (0..grid_points)
        .map(|k| t0 * k as f64 / (grid_points - 1) as f64)
        .collect();
    let jobs: Vec<(usize, usize)> = (0..sectors.len())
        .flat_map(|s| (0..grid_points).map(move |k| (s, k)))
        .collect();
    let values: Vec<(f64, bool)> = jobs
        .par_iter()
        .map(|&(s, k)| gap_at(model, sectors[s], grid[k], opts))
        .collect::<Result<_, _>>()?;

    let (mut best_idx, mut best) = (0, values[0]);
    for (idx, &v) in values.iter().enumerate() {
        if v.0 < best.0 {
            best_idx = idx;
            best = v;
        }
    }
    let (s_idx, k) = jobs[best_idx];
    let sector = sectors[s_idx];
    let mut gap = best.0;
    let mut degenerate = best.1;
    let mut argmin_time = grid[k];

    if !degenerate {
        let refined_t = if k > 0 && k + 1 < grid_points {
            let (g0, g1, g2) = (
                values[best_idx - 1].0,
                values[best_idx].0,
                values[best_idx + 1].0,
            );
            let h = grid[1] - grid[0];
            let curvature = g0 - 2.0 * g1 + g2;
            let shift = if curvature > 0.0 {
                0.5 * h * (g0 - g2) / curvature
            } else {
                0.0
            };
            (grid[k] + shift).clamp(grid[k - 1], grid[k + 1])
        } else if k == 0 {
            0.5 * (grid[0] + grid[1])
        } else {
            0.5 * (grid[k - 1] + grid[k])
        };
        if refined_t != grid[k] {
            let (g, deg) = gap_at(model, sector, refined_t, opts)?;
            if g < gap {
                gap = g;
                degenerate = deg;
                argmin_time = refined_t;
            }
        }
    }

    let curves = sectors
        .iter()
        .enumerate()
        .map(|(s, &sec)| {
            (
                sec,
                (0..grid_points)
                    .map(|k| values[s * grid_points + k].0)
                    .collect(),
            )
        })
        .collect();
    Ok(GapScan {
        gap,
        argmin_time,
        argmin_sector: sector,
        degenerate,
        curves,
        grid,
    })
}

/// Sector ground energies and their combination `E_uu - E_ud - E_du + E_dd`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionEnergy {
    pub e_uu: f64,
    pub e_ud: f64,
    pub e_du: f64,
    pub e_dd: f64,
    pub e_int: f64,
}

impl InteractionEnergy {
    pub fn from_energies(e_dd: f64, e_du: f64, e_ud: f64, e_uu: f64) -> Self {
        InteractionEnergy {
            e_uu,
            e_ud,
            e_du,
            e_dd,
            e_int: e_uu - e_ud - e_du + e_dd,
        }
    }
}

/// Ground states of all four sectors at ramp time `at_time`, indexed by
/// [`QubitSector::index`].
pub fn sector_ground_states(
    model: &BusModel,
    at_time: f64,
    opts: &LanczosOptions,
) -> Result<Vec<SpectralResult>, SpectralError> {
    let params = model.params();
    let (omega, delta) = (ramp_omega(at_time, params), ramp_delta(at_time, params));
    QubitSector::ALL
        .par_iter()
        .map(|&s| lowest_two_with(&model.sector(s).hamiltonian(omega, delta, Sign::Plus), opts))
        .collect()
}

pub fn interaction_energy(
    model: &BusModel,
    at_time: f64,
    opts: &LanczosOptions,
) -> Result<InteractionEnergy, SpectralError> {
    let g = sector_ground_states(model, at_time, opts)?;
    Ok(InteractionEnergy::from_energies(
        g[0].e0, g[1].e0, g[2].e0, g[3].e0,
    ))
}

/// Observables compared between a truncation and its loosened refinement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationCheck {
    pub e_int: f64,
    pub e_int_refined: f64,
    pub gap: f64,
    pub gap_refined: f64,
    pub dim: usize,
    pub dim_refined: usize,
    pub converged: bool,
}

impl TruncationCheck {
    pub fn e_int_shift(&self) -> f64 {
        relative_shift(self.e_int, self.e_int_refined)
    }

    pub fn gap_shift(&self) -> f64 {
        relative_shift(self.gap, self.gap_refined)
    }
}

fn relative_shift(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Reruns with `n_max + 1` and `r_cut / 2` and compares `E_int` and the ramp gap.
pub fn check_truncation(
    geometry: &ChainGeometry,
    params: &DriveParams,
    policy: TruncationPolicy,
    grid_points: usize,
    rel_tol: f64,
    opts: &LanczosOptions,
) -> Result<TruncationCheck, SpectralError> {
    let refined_policy = match policy {
        TruncationPolicy::Full => TruncationPolicy::Full,
        TruncationPolicy::Truncated { n_max, r_cut } => TruncationPolicy::Truncated {
            n_max: (n_max + 1).min(geometry.n_sites()),
            r_cut: r_cut / 2.0,
        },
    };
    let observe = |basis: BasisSet| -> Result<(f64, f64, usize), SpectralError> {
        let dim = basis.dim();
        let model = BusModel::new(geometry.clone(), basis, *params)?;
        let e_int = interaction_energy(&model, params.t0, opts)?.e_int;
        let gap = min_gap_over_ramp(&model, &QubitSector::ALL, grid_points, opts)?.gap;
        Ok((e_int, gap, dim))
    };
    let (e_int, gap, dim) = observe(build_basis(geometry, policy)?)?;
    let (e_int_refined, gap_refined, dim_refined) =
        observe(build_basis(geometry, refined_policy)?)?;
    let converged = relative_shift(e_int, e_int_refined) <= rel_tol
        && relative_shift(gap, gap_refined) <= rel_tol;
    Ok(TruncationCheck {
        e_int,
        e_int_refined,
        gap,
        gap_refined,
        dim,
        dim_refined,
        converged,
    })
}
