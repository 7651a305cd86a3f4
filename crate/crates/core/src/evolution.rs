//! Time evolution through the gate protocol: ramp up, hold, ramp back.
//!
//! Each step of length `h` freezes the Hamiltonian at the step midpoint and
//! applies `exp(-i H h)` through a short Lanczos recursion whose size grows
//! until the a-posteriori error estimate meets the tolerance.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::vacuum_index;
use crate::hamiltonian::{ramp_delta, ramp_omega, BusModel, QubitSector, Sign, SparseHamiltonian};
use crate::linalg::{tridiagonal_eigen, tridiagonal_eigen_rows};
use crate::spectral::{interaction_energy, InteractionEnergy, LanczosOptions, SpectralError};

/// Largest tolerated deviation of the state norm from one.
pub const MAX_NORM_DRIFT: f64 = 1e-9;

/// Default number of ramp steps (`dt = t0 / DEFAULT_RAMP_STEPS`).
pub const DEFAULT_RAMP_STEPS: usize = 2048;

/// Interaction energies below this magnitude leave the hold time undefined.
pub const MIN_INTERACTION: f64 = 1e-12;

const MAX_SUBSTEPS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvolutionError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error(
        "step accuracy {tol:e} unreachable with Krylov dimension {max_dim} at step length {tau}"
    )]
    StepAccuracy { tol: f64, max_dim: usize, tau: f64 },
    #[error("norm drift {0:e} exceeds the unitarity bound")]
    NormDrift(f64),
    #[error("state has length {got}, basis has dimension {expected}")]
    StateDimension { got: usize, expected: usize },
    #[error("no effective interaction: |E_int| = {0:e}")]
    NoEffectiveInteraction(f64),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reversal {
    /// Evolve with `-H` along the mirrored schedule.
    SignFlip,
    /// Evolve with `+H` along the time-reversed ramp profiles.
    ReversedProfile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldTime {
    /// `pi / |E_int|` with `E_int` evaluated at the hold point.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpmOptions {
    /// Error bound per exponential step (for a unit-norm state).
    pub tol: f64,
    pub max_krylov_dim: usize,
}

impl Default for ExpmOptions {
    fn default() -> Self {
        ExpmOptions {
            tol: 1e-12,
            max_krylov_dim: 48,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolSchedule {
    pub t0: f64,
    pub t_pi: HoldTime,
    pub reversal: Reversal,
    pub dt: f64,
    pub expm: ExpmOptions,
}

impl ProtocolSchedule {
    /// Schedule with the default step `t0 / 2048`.
    pub fn new(t0: f64, t_pi: HoldTime, reversal: Reversal) -> Result<Self, EvolutionError> {
        Self::with_dt(t0, t_pi, reversal, t0 / DEFAULT_RAMP_STEPS as f64)
    }

    pub fn with_dt(
        t0: f64,
        t_pi: HoldTime,
        reversal: Reversal,
        dt: f64,
    ) -> Result<Self, EvolutionError> {
        let schedule = ProtocolSchedule {
            t0,
            t_pi,
            reversal,
            dt,
            expm: ExpmOptions::default(),
        };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn validate(&self) -> Result<(), EvolutionError> {
        let bad = |msg: String| Err(EvolutionError::InvalidSchedule(msg));
        if !(self.t0 > 0.0 && self.t0.is_finite()) {
            return bad(format!("t0 must be positive, got {}", self.t0));
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.dt > self.t0 / 100.0 * (1.0 + 1e-12) {
            return bad(format!("dt = {} exceeds t0/100", self.dt));
        }
        if let HoldTime::Fixed(t) = self.t_pi {
            if !(t >= 0.0 && t.is_finite()) {
                return bad(format!("hold time must be non-negative, got {t}"));
            }
        }
        Ok(())
    }

    /// Number of uniform ramp steps; the step length is `t0 / steps`.
    pub fn ramp_steps(&self) -> usize {
        ((self.t0 / self.dt) - 1e-9).ceil().max(1.0) as usize
    }
}

/// Final state of one sector after a propagation segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorTrajectory {
    pub sector: QubitSector,
    pub final_state: Vec<Complex64>,
    /// `<initial|final>` for the segment (the vacuum for a full protocol).
    pub overlap_with_initial: Complex64,
    /// Largest `| |psi| - 1 |` seen along the segment.
    pub norm_drift: f64,
}

fn cdot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn cnorm(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn caxpy(alpha: Complex64, x: &[Complex64], y: &mut [Complex64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

/// `exp(-i H tau) psi` with an adaptively sized Krylov space.
///
/// When a space of `max_krylov_dim` vectors cannot cover `tau`, it advances
/// as far as the error estimate allows and a fresh space continues from there.
pub fn expm_apply(
    h: &SparseHamiltonian,
    psi: &[Complex64],
    tau: f64,
    opts: &ExpmOptions,
) -> Result<Vec<Complex64>, EvolutionError> {
    let mut out = psi.to_vec();
    let mut work = KrylovWorkspace::new(psi.len(), opts.max_krylov_dim);
    expm_in_place(h, &mut out, tau, opts, &mut work)?;
    Ok(out)
}

/// Reusable storage for the Lanczos basis of [`expm_apply`].
struct KrylovWorkspace {
    dim: usize,
    basis: Vec<Complex64>,
    w: Vec<Complex64>,
}

impl KrylovWorkspace {
    fn new(dim: usize, max_krylov_dim: usize) -> Self {
        let m = max_krylov_dim.min(dim).max(1);
        KrylovWorkspace {
            dim,
            basis: vec![Complex64::new(0.0, 0.0); m * dim],
            w: vec![Complex64::new(0.0, 0.0); dim],
        }
    }
}

fn expm_in_place(
    h: &SparseHamiltonian,
    psi: &mut [Complex64],
    tau: f64,
    opts: &ExpmOptions,
    work: &mut KrylovWorkspace,
) -> Result<(), EvolutionError> {
    let (lo, hi) = h.spectral_bounds();
    let breakdown = 1e-14 * lo.abs().max(hi.abs()).max(1.0);
    // Smallest substep worth attempting before declaring failure.
    let floor = tau.abs() / (MAX_SUBSTEPS as f64 * ((hi - lo) * tau.abs()).max(1.0));
    let mut remaining = tau;
    while remaining != 0.0 {
        let first_check =
            ((0.35 * (hi - lo) * remaining.abs()) as usize).clamp(4, opts.max_krylov_dim.max(4));
        let advanced = krylov_step(h, psi, remaining, opts, breakdown, first_check, work);
        if advanced == 0.0 || advanced.abs() < floor.min(remaining.abs()) {
            return Err(EvolutionError::StepAccuracy {
                tol: opts.tol,
                max_dim: opts.max_krylov_dim,
                tau,
            });
        }
        remaining -= advanced;
        if remaining.abs() <= 1e-14 * tau.abs() {
            break;
        }
    }
    Ok(())
}

/// Builds one Lanczos space from `psi` and advances it by the largest part of
/// `tau` the space resolves to tolerance; returns the time advanced.
fn krylov_step(
    h: &SparseHamiltonian,
    psi: &mut [Complex64],
    tau: f64,
    opts: &ExpmOptions,
    breakdown: f64,
    first_check: usize,
    work: &mut KrylovWorkspace,
) -> f64 {
    let dim = work.dim;
    let beta0 = cnorm(psi);
    if beta0 == 0.0 {
        return tau;
    }
    let max_dim = opts.max_krylov_dim.min(dim).max(1);
    let KrylovWorkspace { basis, w, .. } = work;
    basis[..dim]
        .iter_mut()
        .zip(psi.iter())
        .for_each(|(v, x)| *v = x / beta0);
    let mut alpha: Vec<f64> = Vec::with_capacity(max_dim);
    let mut beta: Vec<f64> = Vec::with_capacity(max_dim);

    let step = loop {
        let j = alpha.len();
        let (done, rest) = basis.split_at_mut((j + 1) * dim);
        let v = &done[j * dim..];
        h.apply(v, w);
        let a = cdot(v, w).re;
        if j > 0 {
            let prev = &done[(j - 1) * dim..j * dim];
            let bp = beta[j - 1];
            w.iter_mut()
                .zip(v.iter().zip(prev))
                .for_each(|(wi, (vi, pi))| *wi -= vi * a + pi * bp);
            // local reorthogonalization against the last two vectors
            let c = cdot(prev, w);
            caxpy(-c, prev, w);
        } else {
            caxpy(Complex64::new(-a, 0.0), v, w);
        }
        let c = cdot(v, w);
        caxpy(-c, v, w);
        alpha.push(a + c.re);
        let b = cnorm(w);
        let m = alpha.len();
        if b <= breakdown || m == dim {
            break tau;
        }
        if m == max_dim || (m >= first_check && (m - first_check) % 2 == 0) {
            let estimate = ErrorEstimate::new(&alpha, &beta, b);
            if estimate.at(tau) <= opts.tol {
                break tau;
            }
            if m == max_dim {
                break estimate.largest_step(tau, opts.tol);
            }
        }
        beta.push(b);
        rest[..dim]
            .iter_mut()
            .zip(w.iter())
            .for_each(|(r, x)| *r = x / b);
    };
    if step == 0.0 {
        return 0.0;
    }
    let coeffs = small_exponential(&alpha, &beta, step);
    psi.iter_mut().for_each(|x| *x = Complex64::new(0.0, 0.0));
    for (k, c) in coeffs.iter().enumerate() {
        caxpy(c * beta0, &basis[k * dim..(k + 1) * dim], psi);
    }
    step
}

/// A-posteriori error `beta_m |[exp(-i T t) e1]_m|` as a function of `t`.
struct ErrorEstimate {
    values: Vec<f64>,
    weights: Vec<f64>,
    beta: f64,
}

impl ErrorEstimate {
    fn new(alpha: &[f64], off: &[f64], beta: f64) -> Self {
        let m = alpha.len();
        let (values, q) = tridiagonal_eigen_rows(alpha, off, &[0, m - 1]);
        let weights = (0..m).map(|l| q[l] * q[m + l]).collect();
        ErrorEstimate {
            values,
            weights,
            beta,
        }
    }

    fn at(&self, t: f64) -> f64 {
        let c: Complex64 = self
            .values
            .iter()
            .zip(&self.weights)
            .map(|(&e, &w)| Complex64::from_polar(w, -e * t))
            .sum();
        self.beta * c.norm()
    }

    /// Largest `t` in `(0, tau]` (on a geometric ladder) meeting `tol`.
    fn largest_step(&self, tau: f64, tol: f64) -> f64 {
        let mut t = tau;
        for _ in 0..200 {
            t *= 0.9;
            if self.at(t) <= tol {
                return t;
            }
        }
        0.0
    }
}

/// First column of `exp(-i T tau)` for the symmetric tridiagonal `T`.
fn small_exponential(alpha: &[f64], beta: &[f64], tau: f64) -> Vec<Complex64> {
    let m = alpha.len();
    let (values, q) = tridiagonal_eigen(alpha, beta);
    (0..m)
        .map(|k| {
            (0..m)
                .map(|l| Complex64::from_polar(q[k * m + l] * q[l], -values[l] * tau))
                .sum()
        })
        .collect()
}

fn check_dimension(model: &BusModel, state: &[Complex64]) -> Result<(), EvolutionError> {
    let expected = model.basis().dim();
    if state.len() != expected {
        return Err(EvolutionError::StateDimension {
            got: state.len(),
            expected,
        });
    }
    Ok(())
}

fn track_norm(state: &[Complex64], drift: &mut f64) -> Result<(), EvolutionError> {
    *drift = drift.max((cnorm(state) - 1.0).abs());
    if *drift > MAX_NORM_DRIFT {
        Err(EvolutionError::NormDrift(*drift))
    } else {
        Ok(())
    }
}

/// The all-down chain state.
pub fn vacuum_state(model: &BusModel) -> Vec<Complex64> {
    let mut psi = vec![Complex64::new(0.0, 0.0); model.basis().dim()];
    psi[vacuum_index(model.basis())] = Complex64::new(1.0, 0.0);
    psi
}

/// Propagates `initial` through one ramp in the given direction.
pub fn propagate_ramp(
    model: &BusModel,
    sector: QubitSector,
    schedule: &ProtocolSchedule,
    direction: Direction,
    initial: &[Complex64],
) -> Result<SectorTrajectory, EvolutionError> {
    schedule.validate()?;
    check_dimension(model, initial)?;
    let params = model.params().with_t0(schedule.t0);
    let steps = schedule.ramp_steps();
    let h = schedule.t0 / steps as f64;
    let sector_model = model.sector(sector);
    let mut state = initial.to_vec();
    let mut work = KrylovWorkspace::new(state.len(), schedule.expm.max_krylov_dim);
    let mut drift = 0.0;
    track_norm(&state, &mut drift)?;
    for k in 0..steps {
        let mid = (k as f64 + 0.5) * h;
        let (profile_t, sign) = match (direction, schedule.reversal) {
            (Direction::Forward, _) => (mid, Sign::Plus),
            (Direction::Reverse, Reversal::SignFlip) => (schedule.t0 - mid, Sign::Minus),
            (Direction::Reverse, Reversal::ReversedProfile) => (schedule.t0 - mid, Sign::Plus),
        };
        let ham = sector_model.hamiltonian(
            ramp_omega(profile_t, &params),
            ramp_delta(profile_t, &params),
            sign,
        );
        expm_in_place(&ham, &mut state, h, &schedule.expm, &mut work)?;
        track_norm(&state, &mut drift)?;
    }
    Ok(SectorTrajectory {
        sector,
        overlap_with_initial: cdot(initial, &state),
        final_state: state,
        norm_drift: drift,
    })
}

/// Free evolution under the frozen hold-point Hamiltonian for `duration`.
pub fn hold(
    model: &BusModel,
    sector: QubitSector,
    state: &[Complex64],
    at_time: f64,
    duration: f64,
    schedule: &ProtocolSchedule,
) -> Result<SectorTrajectory, EvolutionError> {
    check_dimension(model, state)?;
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(EvolutionError::InvalidSchedule(format!(
            "hold duration must be non-negative, got {duration}"
        )));
    }
    let params = model.params().with_t0(schedule.t0);
    let ham = model.sector(sector).at_time(at_time, &params, Sign::Plus);
    let chunks = (duration / schedule.dt).ceil().max(1.0) as usize;
    let tau = duration / chunks as f64;
    let mut current = state.to_vec();
    let mut work = KrylovWorkspace::new(current.len(), schedule.expm.max_krylov_dim);
    let mut drift = 0.0;
    track_norm(&current, &mut drift)?;
    if duration > 0.0 {
        for _ in 0..chunks {
            expm_in_place(&ham, &mut current, tau, &schedule.expm, &mut work)?;
            track_norm(&current, &mut drift)?;
        }
    }
    Ok(SectorTrajectory {
        sector,
        overlap_with_initial: cdot(state, &current),
        final_state: current,
        norm_drift: drift,
    })
}

/// All four sector trajectories of one protocol run.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolRun {
    /// Indexed by [`QubitSector::index`]; overlaps are with the vacuum.
    pub trajectories: Vec<SectorTrajectory>,
    pub t_pi: f64,
    pub t_g: f64,
    /// Present when the hold time was derived from the interaction energy.
    pub interaction: Option<InteractionEnergy>,
}

impl ProtocolRun {
    pub fn max_norm_drift(&self) -> f64 {
        self.trajectories
            .iter()
            .map(|t| t.norm_drift)
            .fold(0.0, f64::max)
    }
}

/// Resolves the hold time, computing `E_int` at the hold point if needed.
pub fn resolve_hold_time(
    model: &BusModel,
    schedule: &ProtocolSchedule,
    opts: &LanczosOptions,
) -> Result<(f64, Option<InteractionEnergy>), EvolutionError> {
    match schedule.t_pi {
        HoldTime::Fixed(t) => Ok((t, None)),
        HoldTime::Auto => {
            let model = model
                .with_params(model.params().with_t0(schedule.t0))
                .map_err(SpectralError::from)?;
            let e = interaction_energy(&model, schedule.t0, opts)?;
            if e.e_int.abs() < MIN_INTERACTION {
                return Err(EvolutionError::NoEffectiveInteraction(e.e_int.abs()));
            }
            Ok((std::f64::consts::PI / e.e_int.abs(), Some(e)))
        }
    }
}

/// Vacuum, ramp up, hold for `t_pi`, ramp back, in every qubit sector.
pub fn run_protocol(
    model: &BusModel,
    schedule: &ProtocolSchedule,
    opts: &LanczosOptions,
) -> Result<ProtocolRun, EvolutionError> {
    schedule.validate()?;
    let (t_pi, interaction) = resolve_hold_time(model, schedule, opts)?;
    let vacuum = vacuum_state(model);
    let trajectories = QubitSector::ALL
        .par_iter()
        .map(|&sector| {
            let up = propagate_ramp(model, sector, schedule, Direction::Forward, &vacuum)?;
            let held = hold(model, sector, &up.final_state, schedule.t0, t_pi, schedule)?;
            let down = propagate_ramp(
                model,
                sector,
                schedule,
                Direction::Reverse,
                &held.final_state,
            )?;
            Ok(SectorTrajectory {
                sector,
                overlap_with_initial: cdot(&vacuum, &down.final_state),
                final_state: down.final_state,
                norm_drift: up.norm_drift.max(held.norm_drift).max(down.norm_drift),
            })
        })
        .collect::<Result<Vec<_>, EvolutionError>>()?;
    Ok(ProtocolRun {
        trajectories,
        t_pi,
        t_g: 2.0 * schedule.t0 + t_pi,
        interaction,
    })
}
