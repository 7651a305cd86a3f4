//! Run configuration: a single versioned JSON document.

use dipolarbus::ensemble::{BasisSpec, CurveSpec, GeometrySpec, ModelSpec, Pipeline};
use dipolarbus::error_model::{BusConstants, Preset, PresetName};
use dipolarbus::evolution::{HoldTime, ProtocolSchedule, Reversal};
use dipolarbus::spectral::LanczosOptions;
use dipolarbus::{DriveParams, QubitSector, QubitState};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub units: Units,
    #[serde(default)]
    pub geometry: Option<GeometrySpec>,
    #[serde(default = "default_basis")]
    pub basis: BasisSpec,
    #[serde(default)]
    pub drive: Option<DriveConfig>,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

fn default_basis() -> BasisSpec {
    BasisSpec::Full
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "system", deny_unknown_fields)]
pub enum Units {
    #[default]
    Internal,
    /// SI preset; any field may be overridden.
    Preset {
        name: PresetName,
        #[serde(default)]
        overrides: PresetOverrides,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetOverrides {
    pub omega0: Option<f64>,
    pub delta0: Option<f64>,
    pub c_p: Option<f64>,
    pub a: Option<f64>,
    pub gamma0: Option<f64>,
    pub delta_exp: Option<f64>,
    pub d: Option<f64>,
    pub span_l: Option<f64>,
    pub bus: Option<BusConstants>,
}

/// A preset after overrides, with the bus constants it will use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolvedPreset {
    pub preset: Preset,
    pub bus: BusConstants,
}

impl PresetOverrides {
    pub fn apply(&self, name: PresetName) -> ResolvedPreset {
        let mut p = Preset::by_name(name);
        let bus = self.bus.unwrap_or_else(|| p.bus());
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut p.omega0, self.omega0);
        set(&mut p.delta0, self.delta0);
        set(&mut p.c_p, self.c_p);
        set(&mut p.a, self.a);
        set(&mut p.gamma0, self.gamma0);
        set(&mut p.delta_exp, self.delta_exp);
        set(&mut p.d, self.d);
        set(&mut p.span_l, self.span_l);
        ResolvedPreset { preset: p, bus }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveConfig {
    pub omega0: f64,
    pub delta0: f64,
    pub t0: f64,
    pub c_p: f64,
    pub p: u32,
}

impl DriveConfig {
    pub fn params(&self) -> Result<DriveParams, CliError> {
        DriveParams::new(self.omega0, self.delta0, self.t0, self.c_p, self.p)
            .map_err(|e| CliError::config("drive", e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    #[serde(default = "default_reversal")]
    pub reversal: Reversal,
    /// Ramp step; defaults to `t0 / 2048`.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_hold")]
    pub t_pi: HoldTime,
}

fn default_reversal() -> Reversal {
    Reversal::SignFlip
}

fn default_hold() -> HoldTime {
    HoldTime::Auto
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            reversal: default_reversal(),
            dt: None,
            t_pi: default_hold(),
        }
    }
}

impl ProtocolConfig {
    pub fn schedule(&self, t0: f64) -> Result<ProtocolSchedule, CliError> {
        let s = match self.dt {
            Some(dt) => ProtocolSchedule::with_dt(t0, self.t_pi, self.reversal, dt),
            None => ProtocolSchedule::new(t0, self.t_pi, self.reversal),
        };
        s.map_err(|e| CliError::config("protocol", e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_gap_grid")]
    pub gap_grid: usize,
    #[serde(default)]
    pub lanczos: Option<LanczosConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub ensemble: Option<EnsembleConfig>,
    #[serde(default)]
    pub error_curve: Option<ErrorCurveConfig>,
    #[serde(default)]
    pub oracle: Option<OracleConfig>,
}

fn default_gap_grid() -> usize {
    64
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            gap_grid: default_gap_grid(),
            lanczos: None,
            sweep: None,
            ensemble: None,
            error_curve: None,
            oracle: None,
        }
    }
}

impl AnalysisConfig {
    pub fn lanczos_options(&self) -> LanczosOptions {
        let mut o = LanczosOptions::default();
        if let Some(l) = self.lanczos {
            o.tol = l.tol.unwrap_or(o.tol);
            o.max_matvecs = l.max_matvecs.unwrap_or(o.max_matvecs);
            o.krylov_dim = l.krylov_dim.unwrap_or(o.krylov_dim);
            o.keep = l.keep.unwrap_or(o.keep);
        }
        o
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanczosConfig {
    pub tol: Option<f64>,
    pub max_matvecs: Option<usize>,
    pub krylov_dim: Option<usize>,
    pub keep: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub omega0_grid: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub realizations: usize,
    pub pipeline: Pipeline,
    #[serde(default)]
    pub curve: Option<CurveSpec>,
}

/// Explicit budget inputs in internal units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetInputs {
    pub b: f64,
    pub c: f64,
    pub gap: f64,
    pub e_int: f64,
    pub span_l: f64,
    pub l0: f64,
    pub delta_exp: f64,
    pub c_p: f64,
    pub p: u32,
    /// Per-realization `(gap, e_int)` pairs for the disordered band.
    #[serde(default)]
    pub disordered: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorCurveConfig {
    /// Internal units, or Hz under preset units.
    #[serde(default)]
    pub gamma0_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub b: Option<f64>,
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub budget: Option<BudgetInputs>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectorLabel {
    Dd,
    Du,
    Ud,
    Uu,
}

impl SectorLabel {
    pub fn sector(self) -> QubitSector {
        use QubitState::{Down, Up};
        match self {
            SectorLabel::Dd => QubitSector::new(Down, Down),
            SectorLabel::Du => QubitSector::new(Down, Up),
            SectorLabel::Ud => QubitSector::new(Up, Down),
            SectorLabel::Uu => QubitSector::new(Up, Up),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default)]
    pub spacing: Option<SpacingArgs>,
    #[serde(default)]
    pub lattice: Option<LatticeArgs>,
    #[serde(default)]
    pub continuum: Option<ContinuumArgs>,
    #[serde(default)]
    pub scaling: Option<ScalingArgs>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpacingArgs {
    pub p: u32,
    pub c_p: f64,
    pub delta: f64,
}

/// Uses the config's geometry and drive (`delta` defaults to `delta0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeArgs {
    pub sector: SectorLabel,
    pub n_max: usize,
    #[serde(default)]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuumArgs {
    pub n_exc: usize,
    pub span: f64,
    pub sector: SectorLabel,
    pub d: f64,
    pub c_p: f64,
    pub p: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingArgs {
    pub spans: Vec<f64>,
    pub spacing: f64,
    pub d: f64,
    pub c_p: f64,
    pub p: u32,
}

impl RunConfig {
    /// Parses `text`, reporting the key path of the first schema error.
    /// Call [`RunConfig::validate`] after applying command-line overrides.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("at `{path}`: {}", e.inner()))
        })?;
        if cfg.version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    /// Positivity and shape checks that serde cannot express.
    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(g) = &self.geometry {
            g.build(self.seed)
                .map_err(|e| CliError::config("geometry", e))?;
        }
        if let Some(d) = &self.drive {
            d.params()?;
            self.protocol.schedule(d.t0)?;
        }
        if let BasisSpec::Truncated { n_max, r_cut } = self.basis {
            if n_max == 0 || !(r_cut >= 0.0) {
                return Err(CliError::Config(format!(
                    "basis: n_max must be positive and r_cut non-negative (got {n_max}, {r_cut})"
                )));
            }
        }
        let a = &self.analysis;
        if a.gap_grid < 3 {
            return Err(CliError::Config(format!(
                "analysis.gap_grid: need at least 3 points, got {}",
                a.gap_grid
            )));
        }
        if let Some(s) = &a.sweep {
            positive_all("analysis.sweep.omega0_grid", &s.omega0_grid)?;
        }
        if let Some(e) = &a.ensemble {
            if e.realizations == 0 {
                return Err(CliError::Config(
                    "analysis.ensemble.realizations must be positive".into(),
                ));
            }
        }
        if let Some(ec) = &a.error_curve {
            if let Some(g) = &ec.gamma0_grid {
                positive_all("analysis.error_curve.gamma0_grid", g)?;
            }
            for (key, v) in [("b", ec.b), ("c", ec.c)] {
                if let Some(v) = v {
                    positive(&format!("analysis.error_curve.{key}"), v)?;
                }
            }
            if let Some(b) = &ec.budget {
                for (key, v) in [
                    ("b", b.b),
                    ("c", b.c),
                    ("gap", b.gap),
                    ("span_l", b.span_l),
                    ("l0", b.l0),
                    ("delta_exp", b.delta_exp),
                    ("c_p", b.c_p),
                ] {
                    positive(&format!("analysis.error_curve.budget.{key}"), v)?;
                }
            }
        }
        if let Units::Preset { name, overrides } = &self.units {
            let r = overrides.apply(*name);
            let p = r.preset;
            for (key, v) in [
                ("omega0", p.omega0),
                ("delta0", p.delta0),
                ("c_p", p.c_p),
                ("a", p.a),
                ("gamma0", p.gamma0),
                ("delta_exp", p.delta_exp),
                ("d", p.d),
                ("span_l", p.span_l),
                ("bus.gap", r.bus.gap),
                ("bus.l0", r.bus.l0),
            ] {
                positive(&format!("units.overrides.{key}"), v)?;
            }
        }
        Ok(())
    }

    pub fn require_geometry(&self) -> Result<GeometrySpec, CliError> {
        self.geometry
            .ok_or_else(|| CliError::Config("missing field `geometry`".into()))
    }

    pub fn require_drive(&self) -> Result<DriveConfig, CliError> {
        self.drive
            .ok_or_else(|| CliError::Config("missing field `drive`".into()))
    }

    pub fn model_spec(&self) -> Result<ModelSpec, CliError> {
        Ok(ModelSpec {
            geometry: self.require_geometry()?,
            basis: self.basis,
            drive: self.require_drive()?.params()?,
        })
    }

    pub fn preset(&self) -> Option<ResolvedPreset> {
        match &self.units {
            Units::Internal => None,
            Units::Preset { name, overrides } => Some(overrides.apply(*name)),
        }
    }
}

fn positive(key: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{key} must be positive, got {v}")))
    }
}

fn positive_all(key: &str, values: &[f64]) -> Result<(), CliError> {
    values.iter().try_for_each(|&v| positive(key, v))
}
