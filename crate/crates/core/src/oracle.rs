//! Classical (Omega = 0) reference solutions: exact lattice ground states,
//! relaxed continuum crystals, the crystal spacing, and the `d^2 / L`
//! scaling of the interaction energy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::SpinConfig;
use crate::geometry::ChainGeometry;
use crate::hamiltonian::QubitSector;

/// Largest number of configurations the lattice search will visit.
pub const ENUMERATION_BUDGET: u64 = 1 << 26;

/// Sweep cap for continuum coordinate descent.
pub const MAX_SWEEPS: usize = 200_000;

/// Relative convergence threshold on position updates.
pub const CONTINUUM_TOL: f64 = 1e-10;

const STARTS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("no crystal for detuning {0} <= 0")]
    NoCrystal(f64),
    #[error("interaction exponent must exceed 1, got {0}")]
    InvalidExponent(u32),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("enumeration of {configs} configurations exceeds the budget of {budget}")]
    BudgetExceeded { configs: u64, budget: u64 },
    #[error("coordinate descent not converged after {sweeps} sweeps (last update {update:e})")]
    NotConverged { sweeps: usize, update: f64 },
}

/// Result of a classical minimization, in lattice or continuum mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalGroundState {
    /// Set in lattice mode.
    pub config: Option<SpinConfig>,
    /// Excitation coordinates in ascending order (both modes).
    pub excitation_positions: Vec<f64>,
    pub energy: f64,
    pub n_excitations: usize,
}

impl ClassicalGroundState {
    pub fn spacings(&self) -> Vec<f64> {
        self.excitation_positions
            .windows(2)
            .map(|w| w[1] - w[0])
            .collect()
    }

    pub fn mean_spacing(&self) -> Option<f64> {
        let n = self.excitation_positions.len();
        (n >= 2).then(|| {
            (self.excitation_positions[n - 1] - self.excitation_positions[0]) / (n - 1) as f64
        })
    }
}

/// Riemann zeta for real `s > 1` by Euler-Maclaurin summation.
pub fn zeta(s: f64) -> f64 {
    assert!(s > 1.0, "zeta needs s > 1");
    const N: usize = 16;
    let head: f64 = (1..N).map(|k| (k as f64).powf(-s)).sum();
    let n = N as f64;
    // tail from N with Bernoulli corrections B2, B4, B6
    let mut tail = n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s);
    let mut rising = s;
    let mut power = n.powf(-s - 1.0);
    let coeffs = [1.0 / 12.0, -1.0 / 720.0, 1.0 / 30240.0];
    for (k, c) in coeffs.iter().enumerate() {
        tail += c * rising * power;
        let m = (2 * k + 1) as f64;
        rising *= (s + m) * (s + m + 1.0);
        power /= n * n;
    }
    head + tail
}

/// `a_R = [zeta(p) (p + 1) C_p / Delta]^(1/p)`, with hbar = 1.
pub fn crystal_spacing(p: u32, c_p: f64, delta: f64) -> Result<f64, OracleError> {
    if !(delta > 0.0) {
        return Err(OracleError::NoCrystal(delta));
    }
    if p < 2 {
        return Err(OracleError::InvalidExponent(p));
    }
    if !(c_p > 0.0) {
        return Err(OracleError::InvalidArgument(format!(
            "c_p must be positive, got {c_p}"
        )));
    }
    let p_f = p as f64;
    Ok((zeta(p_f) * (p_f + 1.0) * c_p / delta).powf(1.0 / p_f))
}

fn interaction(c_p: f64, p: u32, r: f64) -> f64 {
    c_p / r.abs().powi(p as i32)
}

fn binomial_prefix(n: usize, k_max: usize) -> u64 {
    let mut total: u64 = 0;
    let mut term: u64 = 1;
    for k in 0..=k_max.min(n) {
        total = total.saturating_add(term);
        term = term.saturating_mul((n - k) as u64) / (k as u64 + 1);
    }
    total
}

/// Exact minimizer of the Omega = 0 energy
/// `-(Delta/2) sum s_i + sum_{i<j} C_p / r_ij^p n_i n_j + sum_i v_i n_i`
/// over configurations with at most `n_max` excitations.
pub fn lattice_ground_state(
    geometry: &ChainGeometry,
    sector: QubitSector,
    c_p: f64,
    p: u32,
    delta: f64,
    n_max: usize,
) -> Result<ClassicalGroundState, OracleError> {
    let n = geometry.n_sites();
    if n > 63 {
        return Err(OracleError::InvalidArgument(format!(
            "{n} sites exceed the 63-bit configuration mask"
        )));
    }
    let n_max = n_max.min(n);
    let configs = binomial_prefix(n, n_max);
    if configs > ENUMERATION_BUDGET {
        return Err(OracleError::BudgetExceeded {
            configs,
            budget: ENUMERATION_BUDGET,
        });
    }
    let pos = geometry.positions();
    let mut pair = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                pair[i * n + j] = interaction(c_p, p, pos[j] - pos[i]);
            }
        }
    }
    // excitation cost relative to the all-down energy N Delta / 2
    let site_cost: Vec<f64> = pos
        .iter()
        .map(|&r| {
            let mut v = -delta;
            if sector.alpha.is_up() {
                v += interaction(c_p, p, geometry.qubit_a_pos() - r);
            }
            if sector.beta.is_up() {
                v += interaction(c_p, p, geometry.qubit_b_pos() - r);
            }
            v
        })
        .collect();

    struct Search<'a> {
        n: usize,
        n_max: usize,
        pair: &'a [f64],
        site_cost: &'a [f64],
        best: (f64, u64),
    }
    impl Search<'_> {
        fn visit(&mut self, next: usize, mask: u64, count: usize, energy: f64) {
            if energy < self.best.0 || (energy == self.best.0 && mask < self.best.1) {
                self.best = (energy, mask);
            }
            if count == self.n_max {
                return;
            }
            for site in next..self.n {
                let mut add = self.site_cost[site];
                let mut bits = mask;
                while bits != 0 {
                    let j = bits.trailing_zeros() as usize;
                    bits &= bits - 1;
                    add += self.pair[j * self.n + site];
                }
                self.visit(site + 1, mask | 1 << site, count + 1, energy + add);
            }
        }
    }
    let mut search = Search {
        n,
        n_max,
        pair: &pair,
        site_cost: &site_cost,
        best: (0.0, 0),
    };
    search.visit(0, 0, 0, 0.0);
    let (relative, mask) = search.best;
    let config = SpinConfig(mask);
    Ok(ClassicalGroundState {
        config: Some(config),
        excitation_positions: config.up_sites().map(|i| pos[i]).collect(),
        energy: relative + 0.5 * delta * n as f64,
        n_excitations: config.excitations() as usize,
    })
}

struct Continuum {
    span: f64,
    c_p: f64,
    p: u32,
    left: Option<f64>,
    right: Option<f64>,
}

impl Continuum {
    fn new(span: f64, sector: QubitSector, d: f64, c_p: f64, p: u32) -> Self {
        Continuum {
            span,
            c_p,
            p,
            left: sector.alpha.is_up().then_some(-d),
            right: sector.beta.is_up().then_some(span + d),
        }
    }

    fn sources(&self) -> impl Iterator<Item = f64> + '_ {
        self.left.into_iter().chain(self.right)
    }

    fn energy(&self, x: &[f64]) -> f64 {
        let mut e = 0.0;
        for i in 0..x.len() {
            for j in (i + 1)..x.len() {
                e += interaction(self.c_p, self.p, x[j] - x[i]);
            }
            for q in self.sources() {
                e += interaction(self.c_p, self.p, x[i] - q);
            }
        }
        e
    }

    /// d/dx of the energy of a particle at `x` in the field of all others.
    fn force_derivative(&self, x: &[f64], k: usize, at: f64) -> f64 {
        let p = self.p as i32;
        let pf = self.p as f64;
        let term = |src: f64| {
            let r = at - src;
            -pf * self.c_p * r.signum() / r.abs().powi(p + 1)
        };
        let mut g: f64 = self.sources().map(term).sum();
        for (j, &xj) in x.iter().enumerate() {
            if j != k {
                g += term(xj);
            }
        }
        g
    }

    /// Bisection on the (monotone) derivative within the ordering bounds.
    fn line_min(&self, x: &[f64], k: usize) -> f64 {
        let mut lo = if k == 0 { 0.0 } else { x[k - 1] };
        let mut hi = if k + 1 == x.len() {
            self.span
        } else {
            x[k + 1]
        };
        let floor = 1e-14 * self.span;
        for _ in 0..200 {
            if hi - lo <= floor {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let g = self.force_derivative(x, k, mid);
            if g > 0.0 {
                hi = mid;
            } else if g < 0.0 {
                lo = mid;
            } else {
                return mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn relax(&self, mut x: Vec<f64>) -> Result<Vec<f64>, OracleError> {
        let mut update = f64::INFINITY;
        for _ in 0..MAX_SWEEPS {
            update = 0.0;
            for k in 0..x.len() {
                let new = self.line_min(&x, k);
                update = f64::max(update, (new - x[k]).abs());
                x[k] = new;
            }
            if update < CONTINUUM_TOL * self.span {
                return Ok(x);
            }
        }
        Err(OracleError::NotConverged {
            sweeps: MAX_SWEEPS,
            update,
        })
    }
}

fn starts(n_exc: usize, span: f64) -> Vec<Vec<f64>> {
    let even: Vec<f64> = if n_exc == 1 {
        vec![0.5 * span]
    } else {
        (0..n_exc)
            .map(|i| span * i as f64 / (n_exc - 1) as f64)
            .collect()
    };
    let gap = span / n_exc.max(2) as f64;
    let mut out = vec![even.clone()];
    for s in 1..STARTS as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let mut x: Vec<f64> = even
            .iter()
            .map(|&v| (v + rng.gen_range(-0.25..0.25) * gap).clamp(0.0, span))
            .collect();
        x.sort_by(f64::total_cmp);
        out.push(x);
    }
    out
}

/// Minimum of the pair and boundary repulsion of `n_exc` ordered particles in
/// `[0, span]`, with the excited qubits of `sector` at `-d` and `span + d`.
/// The reported energy excludes the detuning term.
pub fn continuum_relax(
    n_exc: usize,
    span: f64,
    boundary_sector: QubitSector,
    d: f64,
    c_p: f64,
    p: u32,
) -> Result<ClassicalGroundState, OracleError> {
    if n_exc == 0 {
        return Err(OracleError::InvalidArgument(
            "n_exc must be at least 1".into(),
        ));
    }
    if !(span > 0.0 && d > 0.0 && c_p > 0.0) {
        return Err(OracleError::InvalidArgument(format!(
            "span, d, c_p must be positive (got {span}, {d}, {c_p})"
        )));
    }
    if p < 1 {
        return Err(OracleError::InvalidExponent(p));
    }
    let model = Continuum::new(span, boundary_sector, d, c_p, p);
    let relaxed: Vec<Result<(f64, Vec<f64>), OracleError>> = starts(n_exc, span)
        .into_par_iter()
        .map(|x0| {
            let x = model.relax(x0)?;
            Ok((model.energy(&x), x))
        })
        .collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for r in relaxed {
        let (e, x) = r?;
        if best.as_ref().is_none_or(|b| e < b.0) {
            best = Some((e, x));
        }
    }
    let (energy, x) = best.expect("at least one start");
    Ok(ClassicalGroundState {
        config: None,
        excitation_positions: x,
        energy,
        n_excitations: n_exc,
    })
}

/// Continuum crystal at the energy-optimal excitation number, found by
/// scanning `n_exc` around `span / a_R + 1` with `-Delta` per excitation.
pub fn continuum_crystal(
    span: f64,
    c_p: f64,
    p: u32,
    delta: f64,
) -> Result<ClassicalGroundState, OracleError> {
    let a_r = crystal_spacing(p, c_p, delta)?;
    let guess = (span / a_r).round() as usize + 1;
    let mut lo = guess.saturating_sub(3).max(1);
    let mut hi = guess + 3;
    let evaluate = |n: usize| -> Result<ClassicalGroundState, OracleError> {
        let mut g = continuum_relax(n, span, QubitSector::DOWN_DOWN, 1.0, c_p, p)?;
        g.energy -= delta * n as f64;
        Ok(g)
    };
    loop {
        let results: Vec<_> = (lo..=hi)
            .into_par_iter()
            .map(evaluate)
            .collect::<Result<_, _>>()?;
        let (k, best) = results
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.energy.total_cmp(&b.1.energy))
            .expect("non-empty window");
        let n = lo + k;
        if n == lo && lo > 1 {
            lo = lo.saturating_sub(4).max(1);
        } else if n == hi {
            hi += 4;
        } else {
            return Ok(best.clone());
        }
    }
}

/// One row of the continuum scaling report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub span: f64,
    pub d: f64,
    pub n_exc: usize,
    pub e_uu: f64,
    pub e_ud: f64,
    pub e_du: f64,
    pub e_dd: f64,
    pub e_int: f64,
    pub e_int_times_span_over_d2: f64,
}

/// Four-sector continuum energies at fixed `n_exc` and their combination.
pub fn continuum_interaction(
    n_exc: usize,
    span: f64,
    d: f64,
    c_p: f64,
    p: u32,
) -> Result<ScalingRow, OracleError> {
    let e: Vec<f64> = QubitSector::ALL
        .par_iter()
        .map(|&s| continuum_relax(n_exc, span, s, d, c_p, p).map(|g| g.energy))
        .collect::<Result<_, _>>()?;
    let (e_dd, e_du, e_ud, e_uu) = (e[0], e[1], e[2], e[3]);
    let e_int = e_uu - e_ud - e_du + e_dd;
    Ok(ScalingRow {
        span,
        d,
        n_exc,
        e_uu,
        e_ud,
        e_du,
        e_dd,
        e_int,
        e_int_times_span_over_d2: e_int * span / (d * d),
    })
}

/// Scaling rows for a sequence of spans at fixed excitation density
/// (`n_exc - 1 = span / spacing`, rounded).
pub fn continuum_scaling(
    spans: &[f64],
    spacing: f64,
    d: f64,
    c_p: f64,
    p: u32,
) -> Result<Vec<ScalingRow>, OracleError> {
    spans
        .iter()
        .map(|&span| {
            let n_exc = (span / spacing).round() as usize + 1;
            continuum_interaction(n_exc, span, d, c_p, p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis, TruncationPolicy};
    use crate::geometry::{make_disordered, make_equidistant};
    use crate::hamiltonian::{BusModel, DriveParams, Sign};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn zeta_values() {
        assert_relative_eq!(
            zeta(2.0),
            std::f64::consts::PI.powi(2) / 6.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(zeta(3.0), 1.202_056_903_159_594, epsilon = 1e-12);
        assert_relative_eq!(
            zeta(6.0),
            std::f64::consts::PI.powi(6) / 945.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn crystal_spacing_examples() {
        let a = crystal_spacing(3, 100.0, 2.3).unwrap();
        let direct = (4.0 * 1.202_056_9 * 100.0 / 2.3f64).cbrt();
        assert_relative_eq!(a, direct, max_relative = 1e-7);
        assert!((a - 5.94).abs() < 0.01, "{a}");
        assert_relative_eq!(
            crystal_spacing(3, 800.0, 2.3).unwrap(),
            2.0 * a,
            max_relative = 1e-12
        );
        assert!(crystal_spacing(3, 100.0, 1e12).unwrap() < 1e-3);
        assert_eq!(
            crystal_spacing(3, 100.0, 0.0),
            Err(OracleError::NoCrystal(0.0))
        );
        assert_eq!(
            crystal_spacing(3, 100.0, -1.0),
            Err(OracleError::NoCrystal(-1.0))
        );
    }

    #[test]
    fn negative_detuning_gives_vacuum() {
        let g = make_equidistant(8, 3.0).unwrap();
        let gs = lattice_ground_state(&g, QubitSector::UP_UP, 100.0, 3, -1.0, 8).unwrap();
        assert_eq!(gs.config, Some(SpinConfig::VACUUM));
        assert_relative_eq!(gs.energy, -0.5 * 8.0, epsilon = 1e-12);
    }

    #[test]
    fn two_sites_both_up_when_detuning_wins() {
        let g = make_equidistant(2, 100.0).unwrap();
        let gs = lattice_ground_state(&g, QubitSector::DOWN_DOWN, 1.0, 3, 2.0, 2).unwrap();
        assert_eq!(gs.n_excitations, 2);
        let gs = lattice_ground_state(&g, QubitSector::DOWN_DOWN, 10.0, 3, 2.0, 2).unwrap();
        assert_eq!(gs.n_excitations, 1);
    }

    #[test]
    fn lattice_matches_hamiltonian_diagonal() {
        let g = make_equidistant(12, 3.0).unwrap();
        let basis = build_basis(&g, TruncationPolicy::Full).unwrap();
        let params = DriveParams::new(1.0, 2.3, 10.0, 100.0, 3).unwrap();
        let model = BusModel::new(g.clone(), basis, params).unwrap();
        for s in QubitSector::ALL {
            let h = model.sector(s).hamiltonian(0.0, 2.3, Sign::Plus);
            let min = h.diagonal().iter().cloned().fold(f64::INFINITY, f64::min);
            let gs = lattice_ground_state(&g, s, 100.0, 3, 2.3, 12).unwrap();
            assert_relative_eq!(gs.energy, min, epsilon = 1e-10);
            let idx = model.basis().index_of(gs.config.unwrap()).unwrap();
            assert_relative_eq!(h.diagonal()[idx], min, epsilon = 1e-10);
        }
    }

    #[test]
    fn enumeration_budget() {
        let g = make_equidistant(40, 3.0).unwrap();
        assert!(matches!(
            lattice_ground_state(&g, QubitSector::DOWN_DOWN, 100.0, 3, 2.3, 40),
            Err(OracleError::BudgetExceeded { .. })
        ));
        assert!(lattice_ground_state(&g, QubitSector::DOWN_DOWN, 100.0, 3, 2.3, 6).is_ok());
    }

    #[test]
    fn two_excitations_go_to_the_ends() {
        let gs = continuum_relax(2, 10.0, QubitSector::DOWN_DOWN, 1.0, 1.0, 3).unwrap();
        assert!(gs.excitation_positions[0].abs() < 1e-9);
        assert!((gs.excitation_positions[1] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn single_excitation_centers_between_up_qubits() {
        let gs = continuum_relax(1, 10.0, QubitSector::UP_UP, 2.0, 1.0, 3).unwrap();
        assert!((gs.excitation_positions[0] - 5.0).abs() < 1e-8);
    }

    #[test]
    fn long_interval_spacing_is_uniform() {
        let gs = continuum_relax(9, 40.0, QubitSector::DOWN_DOWN, 1.0, 100.0, 3).unwrap();
        let mean = gs.mean_spacing().unwrap();
        assert!((mean - 5.0).abs() < 0.5);
        assert!(gs.spacings().iter().all(|s| (s - 5.0).abs() < 0.5));
    }

    #[test]
    fn optimal_count_reproduces_crystal_spacing() {
        let a_r = crystal_spacing(3, 100.0, 2.3).unwrap();
        let gs = continuum_crystal(12.0 * a_r, 100.0, 3, 2.3).unwrap();
        let mean = gs.mean_spacing().unwrap();
        assert!((mean / a_r - 1.0).abs() < 0.1, "mean {mean} a_R {a_r}");
    }

    /// Disordered lattice ground states keep the crystal spacing to within the
    /// lattice discretization plus the positional disorder.
    #[test]
    fn disordered_spacing_regression() {
        let a_r = crystal_spacing(3, 100.0, 2.3).unwrap();
        let mut worst: f64 = 0.0;
        for seed in 0..8 {
            let g = make_disordered(24, 3.0, seed, 0.1).unwrap();
            let gs = lattice_ground_state(&g, QubitSector::DOWN_DOWN, 100.0, 3, 2.3, 8).unwrap();
            let mean = gs.mean_spacing().unwrap();
            worst = worst.max((mean - a_r).abs());
        }
        assert!(worst < DISORDER_SPACING_BOUND, "worst deviation {worst}");
    }

    /// Mean site spacing of the interval model, the positional disorder scale.
    /// Observed worst case over these seeds: 0.867.
    const DISORDER_SPACING_BOUND: f64 = 1.0;

    proptest! {
        #[test]
        fn lattice_energy_is_minimal(n in 2usize..9, delta in -1.0f64..5.0, up in 0usize..4) {
            let g = make_equidistant(n, 3.0).unwrap();
            let s = QubitSector::ALL[up];
            let gs = lattice_ground_state(&g, s, 100.0, 3, delta, n).unwrap();
            let basis = build_basis(&g, TruncationPolicy::Full).unwrap();
            let params = DriveParams::new(1.0, 2.3, 10.0, 100.0, 3).unwrap();
            let model = BusModel::new(g, basis, params).unwrap();
            let h = model.sector(s).hamiltonian(0.0, delta, Sign::Plus);
            let min = h.diagonal().iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert!((gs.energy - min).abs() < 1e-9);
        }

        #[test]
        fn relaxed_positions_are_ordered(n in 1usize..7, span in 5.0f64..30.0, up in 0usize..4) {
            let gs = continuum_relax(n, span, QubitSector::ALL[up], 1.5, 10.0, 3).unwrap();
            prop_assert!(gs.excitation_positions.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(gs.excitation_positions.iter().all(|&x| (0.0..=span).contains(&x)));
        }
    }
}
