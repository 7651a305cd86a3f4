//! Analytic error budget: total error against gate time, the combined
//! fidelity against ramp time, the bare-interaction baseline, and the
//! physical presets.
//!
//! All quantities are in internal units (hbar = 1, energies in units of the
//! preset's `Omega0`, lengths in units of `a`) unless a name says `_si`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::basis::BasisSet;

const INV_GOLDEN: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ErrorModelError {
    #[error("decoherence dominates at all gate times (log argument {0} <= 1)")]
    DecoherenceDominates(f64),
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
    #[error("interaction energy must be non-zero")]
    ZeroInteraction,
    #[error("fidelity landscape is flat over the search bracket")]
    FlatLandscape,
    #[error("zero excitation density: L0 is infinite")]
    ZeroDensity,
    #[error("state has length {got}, basis has dimension {expected}")]
    StateDimension { got: usize, expected: usize },
}

/// Parameters of the total-error and combined-fidelity formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    /// `c L Delta_G / hbar`.
    pub alpha0: f64,
    pub l0: f64,
    pub gamma0: f64,
    pub delta_exp: f64,
    pub span_l: f64,
    pub b: f64,
    pub c: f64,
}

impl ErrorBudget {
    pub fn validate(&self) -> Result<(), ErrorModelError> {
        let fields = [
            ("alpha0", self.alpha0),
            ("l0", self.l0),
            ("delta_exp", self.delta_exp),
            ("span_l", self.span_l),
            ("b", self.b),
            ("c", self.c),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ErrorModelError::InvalidBudget(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.gamma0 >= 0.0 && self.gamma0.is_finite()) {
            return Err(ErrorModelError::InvalidBudget(format!(
                "gamma0 must be non-negative, got {}",
                self.gamma0
            )));
        }
        Ok(())
    }

    /// Budget for a measured gap: `alpha0 = c L gap`.
    pub fn from_gap(
        gap: f64,
        l0: f64,
        gamma0: f64,
        delta_exp: f64,
        span_l: f64,
        b: f64,
        c: f64,
    ) -> Self {
        ErrorBudget {
            alpha0: c * span_l * gap,
            l0,
            gamma0,
            delta_exp,
            span_l,
            b,
            c,
        }
    }

    pub fn with_gamma0(self, gamma0: f64) -> Self {
        ErrorBudget { gamma0, ..self }
    }

    /// Effective decoherence rate `gamma0 L / L0`.
    pub fn gamma(&self) -> f64 {
        self.gamma0 * self.span_l / self.l0
    }
}

/// `exp(-alpha0 t_g / L) + (gamma0 (L/L0) t_g)^delta`.
pub fn total_error(budget: &ErrorBudget, t_g: f64) -> f64 {
    (-budget.alpha0 * t_g / budget.span_l).exp() + (budget.gamma() * t_g).powf(budget.delta_exp)
}

/// Closed-form optimum of the total error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateTimeOptimum {
    /// `delta L log[L0 alpha0 / (L^2 gamma0)] / alpha0`.
    pub t_g_opt: f64,
    /// `L^(2 delta) (delta gamma0 / (L0 alpha0) log[...])^delta`.
    pub eps_opt: f64,
    /// [`total_error`] evaluated at `t_g_opt`.
    pub eps_at_t_g_opt: f64,
}

pub fn optimal_gate_time(budget: &ErrorBudget) -> Result<GateTimeOptimum, ErrorModelError> {
    budget.validate()?;
    let ErrorBudget {
        alpha0,
        l0,
        gamma0,
        delta_exp: delta,
        span_l: l,
        ..
    } = *budget;
    let arg = l0 * alpha0 / (l * l * gamma0);
    if !(arg > 1.0) {
        return Err(ErrorModelError::DecoherenceDominates(arg));
    }
    let log = arg.ln();
    let t_g_opt = delta * l * log / alpha0;
    let eps_opt = l.powf(2.0 * delta) * (delta * gamma0 / (l0 * alpha0) * log).powf(delta);
    Ok(GateTimeOptimum {
        t_g_opt,
        eps_opt,
        eps_at_t_g_opt: total_error(budget, t_g_opt),
    })
}

/// Golden-section minimum of `f` on `[a, b]`; returns `(x, f(x))`.
pub fn golden_section_min(
    mut f: impl FnMut(f64) -> f64,
    mut a: f64,
    mut b: f64,
    rel_tol: f64,
) -> (f64, f64) {
    let mut c = b - INV_GOLDEN * (b - a);
    let mut d = a + INV_GOLDEN * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..400 {
        if (b - a).abs() <= rel_tol * (a.abs() + b.abs()).max(f64::MIN_POSITIVE) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_GOLDEN * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_GOLDEN * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Minimum of `f` over `[lo, hi]` (both positive): a log-spaced scan
/// followed by golden-section in `ln x` around the best grid point.
/// Returns `(x, f(x), index of the best grid point, grid length)`.
fn log_grid_min(
    f: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    points: usize,
) -> (f64, f64, usize, usize) {
    let (la, lb) = (lo.ln(), hi.ln());
    let grid: Vec<f64> = (0..points)
        .map(|i| la + (lb - la) * i as f64 / (points - 1) as f64)
        .collect();
    let values: Vec<f64> = grid.iter().map(|&u| f(u.exp())).collect();
    let k = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty grid");
    let a = grid[k.saturating_sub(1)];
    let b = grid[(k + 1).min(points - 1)];
    let (u, fu) = golden_section_min(|u| f(u.exp()), a, b, 1e-14);
    if fu <= values[k] {
        (u.exp(), fu, k, points)
    } else {
        (grid[k].exp(), values[k], k, points)
    }
}

/// Numeric minimum of [`total_error`] over `t_g`; returns `(t_g, eps)`.
pub fn minimize_total_error(budget: &ErrorBudget) -> Result<(f64, f64), ErrorModelError> {
    budget.validate()?;
    let scale = budget.span_l / budget.alpha0;
    let (t, eps, _, _) = log_grid_min(|t| total_error(budget, t), 1e-6 * scale, 1e8 * scale, 561);
    Ok((t, eps))
}

/// `1/2 [1 - b exp(-c gap t0)] [1 + exp(-(gamma0 (L/L0) (2 t0 + pi/|e_int|))^delta)]`.
pub fn combined_fidelity(
    budget: &ErrorBudget,
    t0: f64,
    e_int: f64,
    gap: f64,
) -> Result<f64, ErrorModelError> {
    if e_int == 0.0 || !e_int.is_finite() {
        return Err(ErrorModelError::ZeroInteraction);
    }
    let lz = 1.0 - budget.b * (-budget.c * gap * t0).exp();
    let t_g = 2.0 * t0 + PI / e_int.abs();
    let deco = (-(budget.gamma() * t_g).powf(budget.delta_exp)).exp();
    Ok(0.5 * lz * (1.0 + deco))
}

/// Maximum of the combined fidelity over the ramp time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RampOptimum {
    pub t0_opt: f64,
    pub f_max: f64,
    /// `2 t0_opt + pi / |e_int|`.
    pub t_g: f64,
    /// The maximum sits at the upper end of the search bracket.
    pub unbounded: bool,
}

/// Search bracket for the ramp time, in units of `1 / (c gap)`.
pub const T0_BRACKET: (f64, f64) = (1e-3, 1e4);

pub fn optimize_t0(
    budget: &ErrorBudget,
    e_int: f64,
    gap: f64,
) -> Result<RampOptimum, ErrorModelError> {
    budget.validate()?;
    if e_int == 0.0 || !e_int.is_finite() {
        return Err(ErrorModelError::ZeroInteraction);
    }
    if !(gap > 0.0) {
        return Err(ErrorModelError::InvalidBudget(format!(
            "gap must be positive, got {gap}"
        )));
    }
    let scale = 1.0 / (budget.c * gap);
    let (lo, hi) = (T0_BRACKET.0 * scale, T0_BRACKET.1 * scale);
    let objective = |t0: f64| -combined_fidelity(budget, t0, e_int, gap).unwrap_or(f64::NAN);
    let (first, last) = (objective(lo), objective(hi));
    let (t0, neg_f, k, points) = log_grid_min(objective, lo, hi, 281);
    if (first - last).abs() == 0.0 && (neg_f - first).abs() == 0.0 {
        return Err(ErrorModelError::FlatLandscape);
    }
    Ok(RampOptimum {
        t0_opt: t0,
        f_max: -neg_f,
        t_g: 2.0 * t0 + PI / e_int.abs(),
        unbounded: k + 1 == points || last <= neg_f + f64::EPSILON,
    })
}

/// Mean number of excitations of a normalized real state.
pub fn mean_excitations(state: &[f64], basis: &BasisSet) -> Result<f64, ErrorModelError> {
    if state.len() != basis.dim() {
        return Err(ErrorModelError::StateDimension {
            got: state.len(),
            expected: basis.dim(),
        });
    }
    Ok(state
        .iter()
        .zip(basis.configs())
        .map(|(a, c)| a * a * c.excitations() as f64)
        .sum())
}

/// `L0 = L / sum_i <P_i^up>`.
pub fn l0_from_density(
    state: &[f64],
    basis: &BasisSet,
    span_l: f64,
) -> Result<f64, ErrorModelError> {
    let n = mean_excitations(state, basis)?;
    if n <= 0.0 {
        return Err(ErrorModelError::ZeroDensity);
    }
    Ok(span_l / n)
}

/// The quoted fit `L0 = 2.0 (C3 / (hbar Omega0))^(1/3)`, in units of `a`
/// when `c3` is in units of `hbar Omega0 a^3`.
pub fn l0_crystal_estimate(c3: f64) -> f64 {
    2.0 * c3.cbrt()
}

/// Direct gate through the bare pair interaction of the two qubits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BareGate {
    /// `pi hbar separation^p / C_p`.
    pub t_bare: f64,
    /// `(gamma0 t_bare)^delta`.
    pub error: f64,
    /// `1/2 [1 + exp(-error)]`.
    pub fidelity: f64,
}

pub fn bare_gate_error(
    c_p: f64,
    p: u32,
    separation: f64,
    gamma0: f64,
    delta_exp: f64,
) -> Result<BareGate, ErrorModelError> {
    if !(separation > 0.0) || !(c_p > 0.0) {
        return Err(ErrorModelError::InvalidBudget(format!(
            "separation and c_p must be positive (got {separation}, {c_p})"
        )));
    }
    let t_bare = PI * separation.powi(p as i32) / c_p;
    let error = (gamma0 * t_bare).powf(delta_exp);
    Ok(BareGate {
        t_bare,
        error,
        fidelity: 0.5 * (1.0 + (-error).exp()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    Rydberg,
    Nv,
}

impl std::str::FromStr for PresetName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rydberg" => Ok(PresetName::Rydberg),
            "nv" => Ok(PresetName::Nv),
            other => Err(format!("unknown preset {other:?} (expected rydberg or nv)")),
        }
    }
}

/// Physical parameters in SI. Frequencies are angular (rad/s), rates in 1/s,
/// `c_p` is `C_p / hbar` in rad/s m^p.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preset {
    pub name: PresetName,
    pub omega0: f64,
    pub delta0: f64,
    pub c_p: f64,
    pub p: u32,
    pub a: f64,
    pub gamma0: f64,
    pub delta_exp: f64,
    pub d: f64,
    pub span_l: f64,
}

/// Bus observables of the preset chain in internal units: ramp-minimum gap,
/// interaction energy at the hold point, and `L0` from the bare-bus density.
/// Measured once on the long equidistant chain (physical truncation) and
/// frozen; `tests/stretch.rs` recomputes them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusConstants {
    pub gap: f64,
    pub e_int: f64,
    pub l0: f64,
}

/// A preset expressed in internal units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InternalPreset {
    pub omega0: f64,
    pub delta0: f64,
    pub c_p: f64,
    pub p: u32,
    pub gamma0: f64,
    pub delta_exp: f64,
    pub d: f64,
    pub span_l: f64,
}

const TWO_PI: f64 = 2.0 * PI;

const NV_BUS: BusConstants = BusConstants {
    gap: 0.007008825719022838,
    e_int: -0.23057772217810069,
    l0: 6.260051551026267,
};

const RYDBERG_BUS: BusConstants = BusConstants {
    gap: 0.005917372012422817,
    e_int: 0.23323094068630468,
    l0: 6.745629544859246,
};

impl Preset {
    /// Rydberg atoms in a Stark fan, dipolar (`p = 3`).
    pub fn rydberg() -> Self {
        let a = 1e-6;
        Preset {
            name: PresetName::Rydberg,
            omega0: TWO_PI * 8e6,
            delta0: TWO_PI * 17e6,
            c_p: TWO_PI * 800e6 * a * a * a,
            p: 3,
            a,
            gamma0: 10e3,
            delta_exp: 1.0,
            d: 3.0 * a,
            span_l: 40e-6,
        }
    }

    /// NV centers with spin echo. `C3` is not quoted for this platform; it
    /// is taken as `100 hbar Omega0 a^3`, the simulated coupling ratio.
    pub fn nv() -> Self {
        let a = 2e-9;
        let omega0 = TWO_PI * 62e3;
        Preset {
            name: PresetName::Nv,
            omega0,
            delta0: TWO_PI * 130e3,
            c_p: 100.0 * omega0 * a * a * a,
            p: 3,
            a,
            gamma0: 100.0,
            delta_exp: 3.0,
            d: 3.0 * a,
            span_l: 74e-9,
        }
    }

    pub fn by_name(name: PresetName) -> Self {
        match name {
            PresetName::Rydberg => Self::rydberg(),
            PresetName::Nv => Self::nv(),
        }
    }

    /// Frozen long-chain bus constants for this preset.
    pub fn bus(&self) -> BusConstants {
        match self.name {
            PresetName::Nv => NV_BUS,
            PresetName::Rydberg => RYDBERG_BUS,
        }
    }

    pub fn to_internal(&self) -> InternalPreset {
        InternalPreset {
            omega0: 1.0,
            delta0: self.delta0 / self.omega0,
            c_p: self.c_p / (self.omega0 * self.a.powi(self.p as i32)),
            p: self.p,
            gamma0: self.gamma0 / self.omega0,
            delta_exp: self.delta_exp,
            d: self.d / self.a,
            span_l: self.span_l / self.a,
        }
    }

    /// Inverse of [`Preset::to_internal`] given the unit scales.
    pub fn from_internal(name: PresetName, internal: &InternalPreset, omega0: f64, a: f64) -> Self {
        Preset {
            name,
            omega0: internal.omega0 * omega0,
            delta0: internal.delta0 * omega0,
            c_p: internal.c_p * omega0 * a.powi(internal.p as i32),
            p: internal.p,
            a,
            gamma0: internal.gamma0 * omega0,
            delta_exp: internal.delta_exp,
            d: internal.d * a,
            span_l: internal.span_l * a,
        }
    }

    /// Internal time to seconds.
    pub fn time_to_si(&self, t: f64) -> f64 {
        t / self.omega0
    }

    pub fn time_from_si(&self, t: f64) -> f64 {
        t * self.omega0
    }

    /// Error budget for measured internal-unit `gap`, with `L0` from the
    /// crystal estimate unless given.
    pub fn budget(&self, gap: f64, l0: Option<f64>, b: f64, c: f64) -> ErrorBudget {
        let internal = self.to_internal();
        let l0 = l0.unwrap_or_else(|| l0_crystal_estimate(internal.c_p));
        ErrorBudget::from_gap(
            gap,
            l0,
            internal.gamma0,
            internal.delta_exp,
            internal.span_l,
            b,
            c,
        )
    }
}

/// Measured inputs for a fidelity-against-decoherence curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveInputs {
    pub b: f64,
    pub c: f64,
    pub span_l: f64,
    pub l0: f64,
    pub delta_exp: f64,
    pub c_p: f64,
    pub p: u32,
    /// Equidistant-chain `(gap, e_int)`.
    pub equidistant: (f64, f64),
    /// Per-realization `(gap, e_int)` of a disordered ensemble (may be empty).
    pub disordered: Vec<(f64, f64)>,
}

/// One row of the fidelity-curve CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub gamma0: f64,
    pub f_protocol_equidistant: f64,
    pub f_protocol_disordered_p05: Option<f64>,
    pub f_protocol_disordered_p95: Option<f64>,
    pub f_bare: f64,
    pub t0_opt: f64,
    pub t_g: f64,
}

/// Maximum protocol fidelity and bare baseline at each `gamma0`.
pub fn fidelity_curve(
    inputs: &CurveInputs,
    gamma0_grid: &[f64],
) -> Result<Vec<CurveRow>, ErrorModelError> {
    let budget_for = |gap: f64, gamma0: f64| {
        ErrorBudget::from_gap(
            gap,
            inputs.l0,
            gamma0,
            inputs.delta_exp,
            inputs.span_l,
            inputs.b,
            inputs.c,
        )
    };
    gamma0_grid
        .iter()
        .map(|&gamma0| {
            let (gap, e_int) = inputs.equidistant;
            let eq = optimize_t0(&budget_for(gap, gamma0), e_int, gap)?;
            let mut band = None;
            if !inputs.disordered.is_empty() {
                let mut f: Vec<f64> = inputs
                    .disordered
                    .iter()
                    .map(|&(g, e)| optimize_t0(&budget_for(g, gamma0), e, g).map(|o| o.f_max))
                    .collect::<Result<_, _>>()?;
                f.sort_by(f64::total_cmp);
                band = Some((
                    crate::ensemble::nearest_rank(&f, 5.0),
                    crate::ensemble::nearest_rank(&f, 95.0),
                ));
            }
            let bare = bare_gate_error(
                inputs.c_p,
                inputs.p,
                inputs.span_l,
                gamma0,
                inputs.delta_exp,
            )?;
            Ok(CurveRow {
                gamma0,
                f_protocol_equidistant: eq.f_max,
                f_protocol_disordered_p05: band.map(|b| b.0),
                f_protocol_disordered_p95: band.map(|b| b.1),
                f_bare: bare.fidelity,
                t0_opt: eq.t0_opt,
                t_g: eq.t_g,
            })
        })
        .collect()
}
