//! Disorder ensembles: one model per seed, a pipeline per realization, and
//! order-independent aggregate statistics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::basis::{build_basis, BasisError, TruncationPolicy};
use crate::error_model::{
    bare_gate_error, l0_crystal_estimate, l0_from_density, optimize_t0, ErrorBudget,
};
use crate::evolution::ProtocolSchedule;
use crate::gate::evaluate_gate;
use crate::geometry::{
    make_equidistant, sample_disordered, ChainGeometry, DisorderModel, GeometryError, DEFAULT_R_MIN,
};
use crate::hamiltonian::{BusModel, DriveParams, HamiltonianError, QubitSector};
use crate::oracle::crystal_spacing;
use crate::spectral::{min_gap_over_ramp, sector_ground_states, InteractionEnergy, LanczosOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("ensemble needs at least one realization")]
    Empty,
    #[error("all {0} realizations failed; first failure: {1}")]
    AllFailed(usize, String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
    #[error("{0}")]
    Model(String),
}

fn default_r_min() -> f64 {
    DEFAULT_R_MIN
}

fn default_disorder() -> DisorderModel {
    DisorderModel::Interval
}

/// How to lay out the chain of one realization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", deny_unknown_fields)]
pub enum GeometrySpec {
    Equidistant {
        n_sites: usize,
        d: f64,
    },
    Disordered {
        n_sites: usize,
        d: f64,
        #[serde(default = "default_r_min")]
        r_min: f64,
        #[serde(default = "default_disorder")]
        disorder: DisorderModel,
    },
}

impl GeometrySpec {
    pub fn build(&self, seed: u64) -> Result<ChainGeometry, GeometryError> {
        match *self {
            GeometrySpec::Equidistant { n_sites, d } => make_equidistant(n_sites, d),
            GeometrySpec::Disordered {
                n_sites,
                d,
                r_min,
                disorder,
            } => sample_disordered(n_sites, d, seed, r_min, disorder),
        }
    }

    pub fn uses_seed(&self) -> bool {
        matches!(self, GeometrySpec::Disordered { .. })
    }
}

/// Basis policy; `Physical` derives `(n_max, r_cut)` from the crystal spacing
/// at `Delta0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", deny_unknown_fields)]
pub enum BasisSpec {
    Full,
    Truncated { n_max: usize, r_cut: f64 },
    Physical,
}

impl BasisSpec {
    pub fn policy(
        &self,
        geometry: &ChainGeometry,
        drive: &DriveParams,
    ) -> Result<TruncationPolicy, EnsembleError> {
        Ok(match *self {
            BasisSpec::Full => TruncationPolicy::Full,
            BasisSpec::Truncated { n_max, r_cut } => TruncationPolicy::Truncated { n_max, r_cut },
            BasisSpec::Physical => {
                let a_r = crystal_spacing(drive.p, drive.c_p, drive.delta0)
                    .map_err(|e| EnsembleError::Model(e.to_string()))?;
                TruncationPolicy::physical(geometry, a_r)
            }
        })
    }
}

/// Everything needed to build a [`BusModel`] from a seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub geometry: GeometrySpec,
    pub basis: BasisSpec,
    pub drive: DriveParams,
}

impl ModelSpec {
    pub fn build(&self, seed: u64) -> Result<BusModel, EnsembleError> {
        let geometry = self.geometry.build(seed)?;
        let policy = self.basis.policy(&geometry, &self.drive)?;
        let basis = build_basis(&geometry, policy)?;
        Ok(BusModel::new(geometry, basis, self.drive)?)
    }
}

/// Inputs of the combined-fidelity optimization per realization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSpec {
    pub b: f64,
    pub c: f64,
    pub gamma0: f64,
    pub delta_exp: f64,
    /// Fixed `L0`; when absent it is measured from the excitation density of
    /// the bare-bus (dd) ground state at the hold point.
    #[serde(default)]
    pub l0: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    /// Ramp-minimum gap, interaction energy and `L0`.
    GapAndEint,
    /// The above plus a full protocol run.
    FullGate,
    /// The above plus the optimal ramp time of the combined fidelity and
    /// the bare-interaction baseline.
    ErrorCurve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub realizations: usize,
    pub base_seed: u64,
    pub model: ModelSpec,
    pub pipeline: Pipeline,
    pub gap_grid: usize,
    pub lanczos: LanczosOptions,
    /// Required for [`Pipeline::FullGate`].
    pub schedule: Option<ProtocolSchedule>,
    /// Required for [`Pipeline::ErrorCurve`].
    pub curve: Option<CurveSpec>,
}

impl EnsembleSpec {
    pub fn seed(&self, k: usize) -> u64 {
        self.base_seed.wrapping_add(k as u64)
    }
}

/// Per-realization observables; optional fields depend on the pipeline.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub gap: f64,
    pub e_int: f64,
    pub span_l: f64,
    pub l0: Option<f64>,
    pub dim: usize,
    pub fidelity: Option<f64>,
    pub conditional_phase: Option<f64>,
    pub t0_opt: Option<f64>,
    pub f_max: Option<f64>,
    pub t_g: Option<f64>,
    pub f_bare: Option<f64>,
}

impl Metrics {
    /// Named scalar values, in a fixed order.
    pub fn values(&self) -> Vec<(&'static str, f64)> {
        let mut out = vec![
            ("gap", self.gap),
            ("e_int", self.e_int),
            ("span_l", self.span_l),
        ];
        let optional = [
            ("l0", self.l0),
            ("fidelity", self.fidelity),
            ("conditional_phase", self.conditional_phase),
            ("t0_opt", self.t0_opt),
            ("f_max", self.f_max),
            ("t_g", self.t_g),
            ("f_bare", self.f_bare),
        ];
        out.extend(optional.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum Outcome {
    Ok(Metrics),
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationRecord {
    pub index: usize,
    pub seed: u64,
    pub outcome: Outcome,
}

/// Summary statistics of one observable over the successful realizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (zero for a single value).
    pub std: f64,
    pub p05: f64,
    pub p95: f64,
    pub min: f64,
    pub max: f64,
}

impl Aggregate {
    /// Statistics of `values` (in the given order for the sums).
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Aggregate {
            count: n,
            mean,
            std,
            p05: nearest_rank(&sorted, 5.0),
            p95: nearest_rank(&sorted, 95.0),
            min: sorted[0],
            max: sorted[n - 1],
        })
    }

    /// Whether the 5-95 band contains the mean.
    pub fn band_contains_mean(&self) -> bool {
        self.p05 <= self.mean && self.mean <= self.p95
    }
}

/// Nearest-rank percentile of an ascending sample: the value at rank
/// `ceil(P/100 n)`, clamped to `[1, n]`.
pub fn nearest_rank(sorted: &[f64], percent: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let n = sorted.len();
    let rank = ((percent / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub pipeline: Pipeline,
    pub base_seed: u64,
    pub total: usize,
    pub successes: usize,
    pub failures: usize,
    pub records: Vec<RealizationRecord>,
    pub aggregates: BTreeMap<String, Aggregate>,
}

impl EnsembleReport {
    pub fn successful(&self) -> impl Iterator<Item = &Metrics> {
        self.records.iter().filter_map(|r| match &r.outcome {
            Outcome::Ok(m) => Some(m),
            Outcome::Failed { .. } => None,
        })
    }
}

/// Runs one realization's pipeline on an already-built model.
pub fn analyze_model(
    model: &BusModel,
    pipeline: Pipeline,
    gap_grid: usize,
    lanczos: &LanczosOptions,
    schedule: Option<&ProtocolSchedule>,
    curve: Option<&CurveSpec>,
) -> Result<Metrics, String> {
    let t0 = model.params().t0;
    let scan = min_gap_over_ramp(model, &QubitSector::ALL, gap_grid, lanczos)
        .map_err(|e| e.to_string())?;
    let ground = sector_ground_states(model, t0, lanczos).map_err(|e| e.to_string())?;
    let e_int =
        InteractionEnergy::from_energies(ground[0].e0, ground[1].e0, ground[2].e0, ground[3].e0)
            .e_int;
    let span_l = model.geometry().span_l();
    let measured_l0 = l0_from_density(
        &ground[QubitSector::DOWN_DOWN.index()].psi0,
        model.basis(),
        span_l,
    )
    .ok();
    let mut metrics = Metrics {
        gap: scan.gap,
        e_int,
        span_l,
        l0: measured_l0,
        dim: model.basis().dim(),
        ..Metrics::default()
    };
    if scan.degenerate {
        return Err(format!("degenerate gap at t = {}", scan.argmin_time));
    }
    if pipeline == Pipeline::FullGate {
        let schedule = schedule.ok_or("full_gate pipeline needs a protocol schedule")?;
        let r = evaluate_gate(model, schedule, gap_grid, lanczos).map_err(|e| e.to_string())?;
        metrics.fidelity = Some(r.fidelity);
        metrics.conditional_phase = r.conditional_phase;
    }
    if pipeline == Pipeline::ErrorCurve {
        let curve = curve.ok_or("error_curve pipeline needs curve inputs")?;
        let l0 = match curve.l0 {
            Some(l0) => l0,
            None => measured_l0.unwrap_or_else(|| l0_crystal_estimate(model.params().c_p)),
        };
        let budget = ErrorBudget::from_gap(
            scan.gap,
            l0,
            curve.gamma0,
            curve.delta_exp,
            span_l,
            curve.b,
            curve.c,
        );
        let opt = optimize_t0(&budget, e_int, scan.gap).map_err(|e| e.to_string())?;
        let params = model.params();
        let bare = bare_gate_error(params.c_p, params.p, span_l, curve.gamma0, curve.delta_exp)
            .map_err(|e| e.to_string())?;
        metrics.l0 = Some(l0);
        metrics.t0_opt = Some(opt.t0_opt);
        metrics.f_max = Some(opt.f_max);
        metrics.t_g = Some(opt.t_g);
        metrics.f_bare = Some(bare.fidelity);
    }
    Ok(metrics)
}

fn run_one(spec: &EnsembleSpec, index: usize) -> RealizationRecord {
    let seed = spec.seed(index);
    let outcome = spec
        .model
        .build(seed)
        .map_err(|e| e.to_string())
        .and_then(|model| {
            analyze_model(
                &model,
                spec.pipeline,
                spec.gap_grid,
                &spec.lanczos,
                spec.schedule.as_ref(),
                spec.curve.as_ref(),
            )
        });
    RealizationRecord {
        index,
        seed,
        outcome: match outcome {
            Ok(m) => Outcome::Ok(m),
            Err(reason) => Outcome::Failed { reason },
        },
    }
}

/// Runs all realizations in parallel and reduces them in index order.
pub fn run_ensemble(spec: &EnsembleSpec) -> Result<EnsembleReport, EnsembleError> {
    if spec.realizations == 0 {
        return Err(EnsembleError::Empty);
    }
    let records: Vec<RealizationRecord> = (0..spec.realizations)
        .into_par_iter()
        .map(|k| run_one(spec, k))
        .collect();
    summarize(spec.pipeline, spec.base_seed, records)
}

/// Aggregates records in their given order.
pub fn summarize(
    pipeline: Pipeline,
    base_seed: u64,
    records: Vec<RealizationRecord>,
) -> Result<EnsembleReport, EnsembleError> {
    let total = records.len();
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut first_failure = None;
    for r in &records {
        match &r.outcome {
            Outcome::Ok(m) => {
                for (name, v) in m.values() {
                    columns.entry(name.to_string()).or_default().push(v);
                }
            }
            Outcome::Failed { reason } => {
                first_failure.get_or_insert_with(|| reason.clone());
            }
        }
    }
    let successes = records
        .iter()
        .filter(|r| matches!(r.outcome, Outcome::Ok(_)))
        .count();
    if successes == 0 {
        return Err(EnsembleError::AllFailed(
            total,
            first_failure.unwrap_or_default(),
        ));
    }
    let aggregates = columns
        .into_iter()
        .filter_map(|(k, v)| Aggregate::from_values(&v).map(|a| (k, a)))
        .collect();
    Ok(EnsembleReport {
        pipeline,
        base_seed,
        total,
        successes,
        failures: total - successes,
        records,
        aggregates,
    })
}
