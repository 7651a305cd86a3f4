//! Gate-level quantities from the four sector trajectories, and the
//! Landau-Zener fit of fidelity against the adiabaticity parameter.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::evolution::{run_protocol, EvolutionError, ProtocolSchedule, SectorTrajectory};
use crate::hamiltonian::{BusModel, QubitSector};
use crate::spectral::{min_gap_over_ramp, LanczosOptions, SpectralError};

/// Minimum vacuum-overlap modulus for a meaningful conditional phase.
pub const MIN_RETURN_OVERLAP: f64 = 0.5;

/// Minimum number of sweep points for the exponential fit.
pub const MIN_FIT_POINTS: usize = 5;

/// Fit constants of the long-chain Landau-Zener law.
pub const LONG_CHAIN_LZ_B: f64 = 0.62;
pub const LONG_CHAIN_LZ_C: f64 = 0.32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GateError {
    #[error("expected 4 sector trajectories, got {0}")]
    MissingSectors(usize),
    #[error("sector trajectories live in different bases")]
    BasisMismatch,
    #[error("non-adiabatic return in sector {sector}: |<vac|chi>| = {overlap:.3} <= 0.5")]
    NonAdiabatic { sector: &'static str, overlap: f64 },
    #[error("fit requires >= {MIN_FIT_POINTS} points, got {0}")]
    TooFewPoints(usize),
    #[error("fit needs points with 0 < F < 1 spanning distinct x values")]
    DegenerateFitData,
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
}

/// `<chi_i|chi_j>` for the sector states, indexed by [`QubitSector::index`].
pub fn overlap_matrix(trajectories: &[SectorTrajectory]) -> Result<[[Complex64; 4]; 4], GateError> {
    if trajectories.len() != 4 {
        return Err(GateError::MissingSectors(trajectories.len()));
    }
    let dim = trajectories[0].final_state.len();
    if trajectories.iter().any(|t| t.final_state.len() != dim) {
        return Err(GateError::BasisMismatch);
    }
    let mut out = [[Complex64::new(0.0, 0.0); 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = trajectories[i]
                .final_state
                .iter()
                .zip(&trajectories[j].final_state)
                .map(|(a, b)| a.conj() * b)
                .sum();
        }
    }
    Ok(out)
}

/// Reduced qubit state for the product initial state `|+>|+>`:
/// `rho[(ab),(a'b')] = <chi_a'b'|chi_ab> / 4`.
pub fn qubit_density_matrix(
    trajectories: &[SectorTrajectory],
) -> Result<[[Complex64; 4]; 4], GateError> {
    Ok(density_from_overlaps(&overlap_matrix(trajectories)?))
}

pub fn density_from_overlaps(overlaps: &[[Complex64; 4]; 4]) -> [[Complex64; 4]; 4] {
    let mut rho = [[Complex64::new(0.0, 0.0); 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            rho[i][j] = overlaps[j][i] * 0.25;
        }
    }
    rho
}

/// `sqrt(tr rho^2)` for Hermitian `rho`.
pub fn gate_fidelity(rho: &[[Complex64; 4]; 4]) -> f64 {
    rho.iter()
        .flatten()
        .map(|x| x.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Reduces an angle to `(-pi, pi]`.
pub fn wrap_phase(x: f64) -> f64 {
    let r = x.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Shortest angular distance between two phases.
pub fn phase_distance(a: f64, b: f64) -> f64 {
    wrap_phase(a - b).abs()
}

/// `arg<uu> - arg<ud> - arg<du> + arg<dd>` of the vacuum overlaps
/// carried by each trajectory.
pub fn conditional_phase(trajectories: &[SectorTrajectory]) -> Result<f64, GateError> {
    if trajectories.len() != 4 {
        return Err(GateError::MissingSectors(trajectories.len()));
    }
    let mut vac = [Complex64::new(0.0, 0.0); 4];
    for (k, t) in trajectories.iter().enumerate() {
        vac[k] = t.overlap_with_initial;
    }
    phase_from_vacuum_overlaps(&vac)
}

fn phase_from_vacuum_overlaps(vac: &[Complex64; 4]) -> Result<f64, GateError> {
    for sector in QubitSector::ALL {
        let overlap = vac[sector.index()].norm();
        if overlap <= MIN_RETURN_OVERLAP {
            return Err(GateError::NonAdiabatic {
                sector: sector.label(),
                overlap,
            });
        }
    }
    let arg = |s: QubitSector| vac[s.index()].arg();
    Ok(wrap_phase(
        arg(QubitSector::UP_UP) - arg(QubitSector::UP_DOWN) - arg(QubitSector::DOWN_UP)
            + arg(QubitSector::DOWN_DOWN),
    ))
}

/// Outcome of one full protocol run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateResult {
    pub fidelity: f64,
    /// `None` when some sector failed to return adiabatically.
    pub conditional_phase: Option<f64>,
    pub e_int: f64,
    /// Ramp-and-sector minimum gap.
    pub gap: f64,
    pub gap_time: f64,
    pub gap_sector: QubitSector,
    pub gap_degenerate: bool,
    /// Minimum over sectors of the gap at the hold point.
    pub hold_gap: f64,
    pub t0: f64,
    pub t_pi: f64,
    pub t_g: f64,
    /// `<chi_i|chi_j>`, indexed by sector.
    pub overlaps: [[Complex64; 4]; 4],
    /// `<vac|chi_i>`, indexed by sector.
    pub vacuum_overlaps: [Complex64; 4],
    pub norm_drift: f64,
}

impl GateResult {
    /// The adiabaticity parameter `gap * t0` (with hbar = 1).
    pub fn gap_t0_product(&self) -> f64 {
        self.gap * self.t0
    }
}

/// Gap scan, interaction energy, protocol, and gate analysis for one model.
pub fn evaluate_gate(
    model: &BusModel,
    schedule: &ProtocolSchedule,
    gap_grid: usize,
    opts: &LanczosOptions,
) -> Result<GateResult, GateError> {
    let model = model
        .with_params(model.params().with_t0(schedule.t0))
        .map_err(SpectralError::from)?;
    let scan = min_gap_over_ramp(&model, &QubitSector::ALL, gap_grid, opts)?;
    let hold_gap = scan
        .curves
        .iter()
        .map(|(_, c)| c[c.len() - 1])
        .fold(f64::INFINITY, f64::min);
    let run = run_protocol(&model, schedule, opts)?;
    let e_int = match run.interaction {
        Some(e) => e.e_int,
        None => crate::spectral::interaction_energy(&model, schedule.t0, opts)?.e_int,
    };
    let overlaps = overlap_matrix(&run.trajectories)?;
    let fidelity = gate_fidelity(&density_from_overlaps(&overlaps));
    let mut vacuum_overlaps = [Complex64::new(0.0, 0.0); 4];
    for (k, t) in run.trajectories.iter().enumerate() {
        vacuum_overlaps[k] = t.overlap_with_initial;
    }
    let conditional_phase = phase_from_vacuum_overlaps(&vacuum_overlaps).ok();
    Ok(GateResult {
        fidelity,
        conditional_phase,
        e_int,
        gap: scan.gap,
        gap_time: scan.argmin_time,
        gap_sector: scan.argmin_sector,
        gap_degenerate: scan.degenerate,
        hold_gap,
        t0: schedule.t0,
        t_pi: run.t_pi,
        t_g: run.t_g,
        overlaps,
        vacuum_overlaps,
        norm_drift: run.max_norm_drift(),
    })
}

/// Least-squares fit of `1 - F = b exp(-c x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LzFit {
    pub b: f64,
    pub c: f64,
    pub r_squared: f64,
    /// `(gap * t0, fidelity)` pairs used in the fit.
    pub points: Vec<(f64, f64)>,
}

impl LzFit {
    pub fn predict(&self, x: f64) -> f64 {
        1.0 - self.b * (-self.c * x).exp()
    }
}

fn sum_squares(points: &[(f64, f64)], ln_b: f64, ln_c: f64) -> f64 {
    let (b, c) = (ln_b.exp(), ln_c.exp());
    points
        .iter()
        .map(|&(x, f)| {
            let r = (1.0 - f) - b * (-c * x).exp();
            r * r
        })
        .sum()
}

/// Damped Gauss-Newton in `(ln b, ln c)` with `b <= 1`, started from a
/// log-linear regression of `ln(1 - F)` on `x`.
pub fn fit_lz(points: &[(f64, f64)]) -> Result<LzFit, GateError> {
    if points.len() < MIN_FIT_POINTS {
        return Err(GateError::TooFewPoints(points.len()));
    }
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(_, f)| f < 1.0)
        .map(|&(x, f)| (x, (1.0 - f).ln()))
        .collect();
    if logs.len() < 2 {
        return Err(GateError::DegenerateFitData);
    }
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(GateError::DegenerateFitData);
    }
    let slope = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    let c0 = if slope < 0.0 {
        -slope
    } else {
        1.0 / mx.abs().max(1.0)
    };
    let mut ln_c = c0.ln();
    let mut ln_b = (my + c0 * mx).min(0.0);

    let mut lambda = 1e-3;
    let mut cost = sum_squares(points, ln_b, ln_c);
    for _ in 0..500 {
        let (b, c) = (ln_b.exp(), ln_c.exp());
        let (mut jtj, mut jtr) = ([[0.0; 2]; 2], [0.0; 2]);
        for &(x, f) in points {
            let model = b * (-c * x).exp();
            let r = (1.0 - f) - model;
            let j = [model, -model * c * x];
            for a in 0..2 {
                jtr[a] += j[a] * r;
                for k in 0..2 {
                    jtj[a][k] += j[a] * j[k];
                }
            }
        }
        let mut improved = false;
        for _ in 0..60 {
            let a00 = jtj[0][0] * (1.0 + lambda);
            let a11 = jtj[1][1] * (1.0 + lambda);
            let det = a00 * a11 - jtj[0][1] * jtj[1][0];
            if det.abs() < 1e-300 {
                lambda *= 10.0;
                continue;
            }
            let d0 = (jtr[0] * a11 - jtj[0][1] * jtr[1]) / det;
            let d1 = (a00 * jtr[1] - jtj[1][0] * jtr[0]) / det;
            let (nb, nc) = ((ln_b + d0).min(0.0), ln_c + d1);
            let new_cost = sum_squares(points, nb, nc);
            if new_cost <= cost {
                let step = (nb - ln_b).abs().max((nc - ln_c).abs());
                ln_b = nb;
                ln_c = nc;
                let rel = (cost - new_cost) / cost.max(1e-300);
                cost = new_cost;
                lambda = (lambda * 0.3).max(1e-12);
                improved = step > 1e-15 && rel > 1e-16;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }

    let mean_f = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean_f).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - cost / ss_tot
    } else {
        1.0
    };
    Ok(LzFit {
        b: ln_b.exp(),
        c: ln_c.exp(),
        r_squared,
        points: points.to_vec(),
    })
}

/// One row of the sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub omega0: f64,
    pub gap: f64,
    pub t0: f64,
    pub gap_t0_product: f64,
    pub fidelity: f64,
    pub conditional_phase: Option<f64>,
    pub e_int: f64,
    pub t_pi: f64,
}

impl SweepPoint {
    pub fn from_result(omega0: f64, r: &GateResult) -> Self {
        SweepPoint {
            omega0,
            gap: r.gap,
            t0: r.t0,
            gap_t0_product: r.gap_t0_product(),
            fidelity: r.fidelity,
            conditional_phase: r.conditional_phase,
            e_int: r.e_int,
            t_pi: r.t_pi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LzSweep {
    pub points: Vec<SweepPoint>,
    pub fit: LzFit,
}

/// A sweep that stopped early; `completed` holds the points that finished.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("sweep failed at omega0 = {omega0}: {source}")]
pub struct SweepError {
    pub omega0: f64,
    pub completed: Vec<SweepPoint>,
    #[source]
    pub source: GateError,
}

/// Removes repeated values, keeping first occurrences in order. Returns the
/// values and whether anything was dropped.
pub fn dedup_grid(values: &[f64]) -> (Vec<f64>, bool) {
    let mut out: Vec<f64> = Vec::with_capacity(values.len());
    for &v in values {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    let dropped = out.len() != values.len();
    (out, dropped)
}

/// Full protocol at every `omega0` with all other parameters fixed, then the
/// exponential fit in `gap * t0`.
pub fn lz_sweep(
    model: &BusModel,
    omega0_values: &[f64],
    schedule: &ProtocolSchedule,
    gap_grid: usize,
    opts: &LanczosOptions,
) -> Result<LzSweep, SweepError> {
    if omega0_values.len() < MIN_FIT_POINTS {
        return Err(SweepError {
            omega0: omega0_values.first().copied().unwrap_or(f64::NAN),
            completed: Vec::new(),
            source: GateError::TooFewPoints(omega0_values.len()),
        });
    }
    let results: Vec<Result<SweepPoint, GateError>> = omega0_values
        .par_iter()
        .map(|&omega0| {
            let m = model
                .with_params(model.params().with_omega0(omega0))
                .map_err(SpectralError::from)?;
            let r = evaluate_gate(&m, schedule, gap_grid, opts)?;
            Ok(SweepPoint::from_result(omega0, &r))
        })
        .collect();
    let mut points = Vec::with_capacity(results.len());
    let mut failure = None;
    for (omega0, r) in omega0_values.iter().zip(results) {
        match r {
            Ok(p) => points.push(p),
            Err(e) if failure.is_none() => failure = Some((*omega0, e)),
            Err(_) => {}
        }
    }
    if let Some((omega0, source)) = failure {
        return Err(SweepError {
            omega0,
            completed: points,
            source,
        });
    }
    let xy: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.gap_t0_product, p.fidelity))
        .collect();
    match fit_lz(&xy) {
        Ok(fit) => Ok(LzSweep { points, fit }),
        Err(source) => Err(SweepError {
            omega0: f64::NAN,
            completed: points,
            source,
        }),
    }
}

/// Whether fidelity is non-decreasing in `gap * t0` (within `slack`).
pub fn is_monotone(points: &[(f64, f64)], slack: f64) -> bool {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    sorted.windows(2).all(|w| w[1].1 >= w[0].1 - slack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn traj(sector: QubitSector, state: Vec<Complex64>) -> SectorTrajectory {
        SectorTrajectory {
            sector,
            overlap_with_initial: state[0],
            final_state: state,
            norm_drift: 0.0,
        }
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn identical_states_give_pure_product() {
        let s = vec![c(0.6, 0.0), c(0.0, 0.8)];
        let t: Vec<_> = QubitSector::ALL
            .iter()
            .map(|&q| traj(q, s.clone()))
            .collect();
        let rho = qubit_density_matrix(&t).unwrap();
        for row in &rho {
            for x in row {
                assert_relative_eq!(x.re, 0.25, epsilon = 1e-15);
                assert_relative_eq!(x.im, 0.0, epsilon = 1e-15);
            }
        }
        assert_relative_eq!(gate_fidelity(&rho), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn orthogonal_states_give_maximally_mixed() {
        let t: Vec<_> = QubitSector::ALL
            .iter()
            .map(|&q| {
                let mut s = vec![c(0.0, 0.0); 4];
                s[q.index()] = c(1.0, 0.0);
                traj(q, s)
            })
            .collect();
        let rho = qubit_density_matrix(&t).unwrap();
        let trace: f64 = (0..4).map(|i| rho[i][i].re).sum();
        assert_relative_eq!(trace, 1.0, epsilon = 1e-15);
        assert_relative_eq!(gate_fidelity(&rho), 0.5, epsilon = 1e-15);
        assert!(conditional_phase(&t).is_err());
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let t = vec![traj(QubitSector::UP_UP, vec![c(1.0, 0.0)])];
        assert_eq!(qubit_density_matrix(&t), Err(GateError::MissingSectors(1)));
        let mut four: Vec<_> = QubitSector::ALL
            .iter()
            .map(|&q| traj(q, vec![c(1.0, 0.0)]))
            .collect();
        four[2].final_state.push(c(0.0, 0.0));
        assert_eq!(qubit_density_matrix(&four), Err(GateError::BasisMismatch));
    }

    #[test]
    fn phase_combination_and_wrapping() {
        let phases = [0.3, -0.2, 0.9, 2.8];
        let t: Vec<_> = QubitSector::ALL
            .iter()
            .map(|&q| {
                traj(
                    q,
                    vec![Complex64::from_polar(0.9, phases[q.index()]), c(0.1, 0.0)],
                )
            })
            .collect();
        let expected = wrap_phase(2.8 - 0.9 - (-0.2) + 0.3);
        assert_relative_eq!(conditional_phase(&t).unwrap(), expected, epsilon = 1e-14);
        assert_relative_eq!(wrap_phase(-PI), PI);
        assert_relative_eq!(wrap_phase(3.0 * PI), PI, epsilon = 1e-12);
        assert_relative_eq!(phase_distance(PI - 0.01, -PI + 0.01), 0.02, epsilon = 1e-12);
    }

    #[test]
    fn fit_recovers_synthetic_constants() {
        let pts: Vec<(f64, f64)> = (0..8)
            .map(|k| {
                let x = 0.5 + 1.5 * k as f64;
                (x, 1.0 - LONG_CHAIN_LZ_B * (-LONG_CHAIN_LZ_C * x).exp())
            })
            .collect();
        let fit = fit_lz(&pts).unwrap();
        assert!((fit.b - LONG_CHAIN_LZ_B).abs() < 1e-6, "{fit:?}");
        assert!((fit.c - LONG_CHAIN_LZ_C).abs() < 1e-6, "{fit:?}");
        assert!(fit.r_squared > 1.0 - 1e-12);
        // refit on regenerated data
        let regen: Vec<(f64, f64)> = pts.iter().map(|&(x, _)| (x, fit.predict(x))).collect();
        let refit = fit_lz(&regen).unwrap();
        assert!((refit.b - fit.b).abs() < 1e-6 && (refit.c - fit.c).abs() < 1e-6);
    }

    #[test]
    fn fit_needs_five_points() {
        assert_eq!(fit_lz(&[(1.0, 0.5)]), Err(GateError::TooFewPoints(1)));
        let flat = vec![(1.0, 1.0); 6];
        assert_eq!(fit_lz(&flat), Err(GateError::DegenerateFitData));
    }

    #[test]
    fn fit_keeps_amplitude_at_most_one() {
        let pts: Vec<(f64, f64)> = (0..6)
            .map(|k| (k as f64, 1.0 - 1.5 * (-0.7 * k as f64).exp()))
            .collect();
        let fit = fit_lz(&pts).unwrap();
        assert!(fit.b <= 1.0 && fit.c > 0.0);
    }

    #[test]
    fn dedup_and_monotone_helpers() {
        let (g, dropped) = dedup_grid(&[1.0, 2.0, 1.0, 3.0]);
        assert_eq!(g, vec![1.0, 2.0, 3.0]);
        assert!(dropped);
        assert!(is_monotone(&[(2.0, 0.9), (1.0, 0.8), (3.0, 0.95)], 0.0));
        assert!(!is_monotone(&[(2.0, 0.7), (1.0, 0.8)], 0.0));
    }

    proptest! {
        /// Purity stays in [1/4, 1] for any four normalized sector states.
        #[test]
        fn fidelity_bounds(raw in proptest::collection::vec(-1.0f64..1.0, 4 * 2 * 3)) {
            let t: Vec<_> = QubitSector::ALL
                .iter()
                .map(|&q| {
                    let k = q.index() * 6;
                    let s: Vec<Complex64> = (0..3).map(|i| c(raw[k + 2 * i], raw[k + 2 * i + 1])).collect();
                    let n = s.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt().max(1e-9);
                    traj(q, s.iter().map(|x| x / n).collect())
                })
                .collect();
            let rho = qubit_density_matrix(&t).unwrap();
            let f = gate_fidelity(&rho);
            prop_assert!((0.5 - 1e-12..=1.0 + 1e-12).contains(&f));
            for i in 0..4 {
                for j in 0..4 {
                    prop_assert!((rho[i][j] - rho[j][i].conj()).norm() < 1e-14);
                }
            }
        }

        /// A phase on one sector changes the conditional phase by exactly that
        /// phase (up to sign) and leaves the fidelity unchanged only when the
        /// overlaps' moduli are unchanged, as for identical states.
        #[test]
        fn phase_injection(theta in -3.0f64..3.0, which in 0usize..4) {
            let s = vec![c(0.8, 0.1), c(0.3, -0.2), c(0.1, 0.4)];
            let n = s.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            let s: Vec<Complex64> = s.iter().map(|x| x / n).collect();
            let base: Vec<_> = QubitSector::ALL.iter().map(|&q| traj(q, s.clone())).collect();
            let mut kicked = base.clone();
            let rot = Complex64::from_polar(1.0, theta);
            kicked[which].final_state.iter_mut().for_each(|x| *x *= rot);
            kicked[which].overlap_with_initial *= rot;
            let sign = if which == 0 || which == 3 { 1.0 } else { -1.0 };
            let dphi = conditional_phase(&kicked).unwrap() - conditional_phase(&base).unwrap();
            prop_assert!(phase_distance(dphi, sign * theta) < 1e-12);
            let f0 = gate_fidelity(&qubit_density_matrix(&base).unwrap());
            let f1 = gate_fidelity(&qubit_density_matrix(&kicked).unwrap());
            prop_assert!((f0 - 1.0).abs() < 1e-12);
            prop_assert!(f1 <= f0 + 1e-12);
        }
    }
}
