use log::{info, warn};
use serde::Serialize;
use std::path::PathBuf;

use dipolarbus::ensemble::{run_ensemble, EnsembleReport, EnsembleSpec, Metrics, Outcome};
use dipolarbus::error_model::{fidelity_curve, CurveInputs, CurveRow, Preset};
use dipolarbus::gate::{
    dedup_grid, evaluate_gate, is_monotone, lz_sweep as run_sweep, GateError, GateResult,
    SweepPoint, LONG_CHAIN_LZ_B, LONG_CHAIN_LZ_C, MIN_FIT_POINTS,
};
use dipolarbus::oracle::{
    continuum_relax, continuum_scaling, crystal_spacing, lattice_ground_state,
    ClassicalGroundState, OracleError,
};

use crate::config::{
    BudgetInputs, ContinuumArgs, ErrorCurveConfig, LatticeArgs, ResolvedPreset, RunConfig,
    SpacingArgs, SweepConfig,
};
use crate::error::CliError;
use crate::output::{OutputDir, Provenance};
use crate::OracleKind;

pub struct Context {
    pub out: PathBuf,
    pub dry_run: bool,
}

impl Context {
    /// Echoes the validated config when `--dry-run` is set; returns whether
    /// the command should stop.
    fn dry_run(&self, command: &str, cfg: &RunConfig) -> Result<bool, CliError> {
        if !self.dry_run {
            return Ok(false);
        }
        #[derive(Serialize)]
        struct Echo<'a> {
            provenance: Provenance,
            config: &'a RunConfig,
        }
        let echo = Echo {
            provenance: Provenance::new(command, cfg),
            config: cfg,
        };
        println!(
            "{}",
            serde_json::to_string_pretty(&echo).map_err(|e| CliError::Config(e.to_string()))?
        );
        Ok(true)
    }

    fn output(&self) -> Result<OutputDir, CliError> {
        OutputDir::create(&self.out)
    }
}

fn report(path: PathBuf) {
    println!("wrote {}", path.display());
}

fn gate_error(e: GateError) -> CliError {
    match e {
        GateError::TooFewPoints(_) => CliError::Usage(e.to_string()),
        e => CliError::numerical(e),
    }
}

fn oracle_error(e: OracleError) -> CliError {
    match e {
        OracleError::InvalidArgument(_) | OracleError::InvalidExponent(_) => {
            CliError::Config(e.to_string())
        }
        e => CliError::numerical(e),
    }
}

/// Gate observables in seconds when the config uses preset units.
#[derive(Debug, Serialize)]
struct SiTimes {
    t0: f64,
    t_pi: f64,
    t_g: f64,
}

#[derive(Debug, Serialize)]
struct GateRunReport {
    dim: usize,
    span_l: f64,
    gate: GateResult,
    si_times: Option<SiTimes>,
}

pub fn gate_run(ctx: &Context, cfg: &RunConfig) -> Result<(), CliError> {
    cfg.validate()?;
    let spec = cfg.model_spec()?;
    let schedule = cfg.protocol.schedule(spec.drive.t0)?;
    if ctx.dry_run("gate-run", cfg)? {
        return Ok(());
    }
    let model = spec
        .build(cfg.seed)
        .map_err(|e| CliError::config("model", e))?;
    info!(
        "gate-run: N = {}, dim = {}",
        model.geometry().n_sites(),
        model.basis().dim()
    );
    let opts = cfg.analysis.lanczos_options();
    let gate =
        evaluate_gate(&model, &schedule, cfg.analysis.gap_grid, &opts).map_err(gate_error)?;
    let si_times = cfg.preset().map(|r| SiTimes {
        t0: r.preset.time_to_si(gate.t0),
        t_pi: r.preset.time_to_si(gate.t_pi),
        t_g: r.preset.time_to_si(gate.t_g),
    });
    let result = GateRunReport {
        dim: model.basis().dim(),
        span_l: model.geometry().span_l(),
        gate,
        si_times,
    };
    let out = ctx.output()?;
    report(out.write_json("gate.json", &Provenance::new("gate-run", cfg), cfg, &result)?);
    Ok(())
}

#[derive(Debug, Serialize)]
struct FitReport {
    b: f64,
    c: f64,
    r_squared: f64,
    monotone: bool,
    points: Vec<(f64, f64)>,
}

pub fn lz_sweep(
    ctx: &Context,
    cfg: &mut RunConfig,
    grid: Option<Vec<f64>>,
) -> Result<(), CliError> {
    if let Some(g) = grid {
        cfg.analysis.sweep = Some(SweepConfig { omega0_grid: g });
    }
    let raw = cfg
        .analysis
        .sweep
        .as_ref()
        .map(|s| s.omega0_grid.clone())
        .ok_or_else(|| {
            CliError::Config(
                "missing field `analysis.sweep.omega0_grid` (or pass --omega0-grid)".into(),
            )
        })?;
    let (omega0_grid, dropped) = dedup_grid(&raw);
    if dropped {
        warn!(
            "omega0 grid had {} duplicate value(s); using {} distinct points",
            raw.len() - omega0_grid.len(),
            omega0_grid.len()
        );
        cfg.analysis.sweep = Some(SweepConfig {
            omega0_grid: omega0_grid.clone(),
        });
    }
    cfg.validate()?;
    if omega0_grid.len() < MIN_FIT_POINTS {
        return Err(gate_error(GateError::TooFewPoints(omega0_grid.len())));
    }
    let spec = cfg.model_spec()?;
    let schedule = cfg.protocol.schedule(spec.drive.t0)?;
    if ctx.dry_run("lz-sweep", cfg)? {
        return Ok(());
    }
    let model = spec
        .build(cfg.seed)
        .map_err(|e| CliError::config("model", e))?;
    let opts = cfg.analysis.lanczos_options();
    let prov = Provenance::new("lz-sweep", cfg);
    let out = ctx.output()?;
    match run_sweep(
        &model,
        &omega0_grid,
        &schedule,
        cfg.analysis.gap_grid,
        &opts,
    ) {
        Ok(sweep) => {
            report(out.write_csv("sweep.csv", &prov, &sweep.points)?);
            let xy: Vec<(f64, f64)> = sweep
                .points
                .iter()
                .map(|p| (p.gap_t0_product, p.fidelity))
                .collect();
            let fit = FitReport {
                b: sweep.fit.b,
                c: sweep.fit.c,
                r_squared: sweep.fit.r_squared,
                monotone: is_monotone(&xy, 0.0),
                points: sweep.fit.points,
            };
            report(out.write_json("fit.json", &prov, cfg, &fit)?);
            Ok(())
        }
        Err(e) => {
            if !e.completed.is_empty() {
                let partial: &[SweepPoint] = &e.completed;
                report(out.write_csv("sweep.csv", &prov, partial)?);
            }
            Err(match e.source {
                GateError::TooFewPoints(_) => CliError::Usage(e.to_string()),
                _ => CliError::numerical(e),
            })
        }
    }
}

/// One realization per CSV row; metrics are empty for failures.
#[derive(Debug, Serialize)]
struct RealizationRow {
    index: usize,
    seed: u64,
    status: &'static str,
    reason: Option<String>,
    gap: Option<f64>,
    e_int: Option<f64>,
    span_l: Option<f64>,
    l0: Option<f64>,
    dim: Option<usize>,
    fidelity: Option<f64>,
    conditional_phase: Option<f64>,
    t0_opt: Option<f64>,
    f_max: Option<f64>,
    t_g: Option<f64>,
    f_bare: Option<f64>,
}

fn realization_rows(r: &EnsembleReport) -> Vec<RealizationRow> {
    r.records
        .iter()
        .map(|rec| {
            let (status, reason, m) = match &rec.outcome {
                Outcome::Ok(m) => ("ok", None, Some(m)),
                Outcome::Failed { reason } => ("failed", Some(reason.clone()), None),
            };
            let get = |f: fn(&Metrics) -> Option<f64>| m.and_then(f);
            RealizationRow {
                index: rec.index,
                seed: rec.seed,
                status,
                reason,
                gap: get(|m| Some(m.gap)),
                e_int: get(|m| Some(m.e_int)),
                span_l: get(|m| Some(m.span_l)),
                l0: get(|m| m.l0),
                dim: m.map(|m| m.dim),
                fidelity: get(|m| m.fidelity),
                conditional_phase: get(|m| m.conditional_phase),
                t0_opt: get(|m| m.t0_opt),
                f_max: get(|m| m.f_max),
                t_g: get(|m| m.t_g),
                f_bare: get(|m| m.f_bare),
            }
        })
        .collect()
}

pub fn ensemble(
    ctx: &Context,
    cfg: &mut RunConfig,
    realizations: Option<usize>,
) -> Result<(), CliError> {
    let mut ens = cfg
        .analysis
        .ensemble
        .ok_or_else(|| CliError::Config("missing field `analysis.ensemble`".into()))?;
    if let Some(m) = realizations {
        ens.realizations = m;
        cfg.analysis.ensemble = Some(ens);
    }
    cfg.validate()?;
    let model = cfg.model_spec()?;
    let schedule = Some(cfg.protocol.schedule(model.drive.t0)?);
    let spec = EnsembleSpec {
        realizations: ens.realizations,
        base_seed: cfg.seed,
        model,
        pipeline: ens.pipeline,
        gap_grid: cfg.analysis.gap_grid,
        lanczos: cfg.analysis.lanczos_options(),
        schedule,
        curve: ens.curve,
    };
    if ctx.dry_run("ensemble", cfg)? {
        return Ok(());
    }
    let result = run_ensemble(&spec).map_err(CliError::numerical)?;
    if result.failures > 0 {
        warn!(
            "{} of {} realizations failed",
            result.failures, result.total
        );
    }
    let prov = Provenance::new("ensemble", cfg);
    let out = ctx.output()?;
    report(out.write_csv("realizations.csv", &prov, &realization_rows(&result))?);
    report(out.write_json("ensemble.json", &prov, cfg, &result)?);
    Ok(())
}

#[derive(Debug, Serialize)]
struct CurveReport {
    /// "si" (gamma0 in 1/s, times in s) or "internal".
    units: &'static str,
    inputs: CurveInputs,
    preset: Option<ResolvedPreset>,
    /// The row at the preset's own gamma0, if any.
    at_preset_gamma0: Option<CurveRow>,
    rows: Vec<CurveRow>,
}

/// `center * 10^k` for k in [-2, 2], four points per decade.
fn default_gamma0_grid(center: f64) -> Vec<f64> {
    (0..=16)
        .map(|k| center * 10f64.powf((k as f64 - 8.0) / 4.0))
        .collect()
}

fn preset_inputs(r: &ResolvedPreset, ec: &ErrorCurveConfig) -> CurveInputs {
    let internal = r.preset.to_internal();
    CurveInputs {
        b: ec.b.unwrap_or(LONG_CHAIN_LZ_B),
        c: ec.c.unwrap_or(LONG_CHAIN_LZ_C),
        span_l: internal.span_l,
        l0: r.bus.l0,
        delta_exp: internal.delta_exp,
        c_p: internal.c_p,
        p: internal.p,
        equidistant: (r.bus.gap, r.bus.e_int),
        disordered: ec
            .budget
            .as_ref()
            .map(|b| b.disordered.clone())
            .unwrap_or_default(),
    }
}

fn budget_inputs(b: &BudgetInputs) -> CurveInputs {
    CurveInputs {
        b: b.b,
        c: b.c,
        span_l: b.span_l,
        l0: b.l0,
        delta_exp: b.delta_exp,
        c_p: b.c_p,
        p: b.p,
        equidistant: (b.gap, b.e_int),
        disordered: b.disordered.clone(),
    }
}

fn to_si(row: CurveRow, preset: &Preset, gamma0_si: f64) -> CurveRow {
    CurveRow {
        gamma0: gamma0_si,
        t0_opt: preset.time_to_si(row.t0_opt),
        t_g: preset.time_to_si(row.t_g),
        ..row
    }
}

pub fn error_curve(
    ctx: &Context,
    cfg: &mut RunConfig,
    grid: Option<Vec<f64>>,
) -> Result<(), CliError> {
    let mut ec = cfg
        .analysis
        .error_curve
        .clone()
        .unwrap_or(ErrorCurveConfig {
            gamma0_grid: None,
            b: None,
            c: None,
            budget: None,
        });
    if grid.is_some() {
        ec.gamma0_grid = grid;
    }
    let preset = cfg.preset();
    if preset.is_none() && ec.budget.is_none() {
        return Err(CliError::Config(
            "missing budget inputs: give `analysis.error_curve.budget` (b, c, gap, e_int, span_l, l0, delta_exp, c_p, p) or use --preset"
                .into(),
        ));
    }
    let gamma0_grid = match (&ec.gamma0_grid, &preset) {
        (Some(g), _) => g.clone(),
        (None, Some(r)) => default_gamma0_grid(r.preset.gamma0),
        (None, None) => {
            return Err(CliError::Config(
                "missing field `analysis.error_curve.gamma0_grid` (or pass --gamma0-grid)".into(),
            ))
        }
    };
    ec.gamma0_grid = Some(gamma0_grid.clone());
    cfg.analysis.error_curve = Some(ec.clone());
    cfg.validate()?;
    if ctx.dry_run("error-curve", cfg)? {
        return Ok(());
    }
    let report_body = match &preset {
        Some(r) => {
            let inputs = preset_inputs(r, &ec);
            let internal_grid: Vec<f64> = gamma0_grid.iter().map(|g| g / r.preset.omega0).collect();
            let rows = fidelity_curve(&inputs, &internal_grid).map_err(CliError::numerical)?;
            let rows: Vec<CurveRow> = rows
                .into_iter()
                .zip(&gamma0_grid)
                .map(|(row, &g)| to_si(row, &r.preset, g))
                .collect();
            let own = fidelity_curve(&inputs, &[r.preset.gamma0 / r.preset.omega0])
                .map_err(CliError::numerical)?;
            CurveReport {
                units: "si",
                inputs,
                preset: Some(*r),
                at_preset_gamma0: own
                    .into_iter()
                    .next()
                    .map(|row| to_si(row, &r.preset, r.preset.gamma0)),
                rows,
            }
        }
        None => {
            let inputs = budget_inputs(ec.budget.as_ref().expect("checked above"));
            let rows = fidelity_curve(&inputs, &gamma0_grid).map_err(CliError::numerical)?;
            CurveReport {
                units: "internal",
                inputs,
                preset: None,
                at_preset_gamma0: None,
                rows,
            }
        }
    };
    let prov = Provenance::new("error-curve", cfg);
    let out = ctx.output()?;
    report(out.write_csv("error_curve.csv", &prov, &report_body.rows)?);
    report(out.write_json("error_curve.json", &prov, cfg, &report_body)?);
    Ok(())
}

#[derive(Debug, Serialize)]
struct SpacingReport {
    args: SpacingArgs,
    a_r: f64,
}

#[derive(Debug, Serialize)]
struct GroundStateReport<A: Serialize> {
    args: A,
    ground_state: ClassicalGroundState,
    spacings: Vec<f64>,
}

pub fn oracle(ctx: &Context, cfg: &RunConfig, kind: OracleKind) -> Result<(), CliError> {
    cfg.validate()?;
    let oc = cfg.analysis.oracle.clone().unwrap_or_default();
    let missing = |key: &str| CliError::Config(format!("missing field `analysis.oracle.{key}`"));
    let prov = Provenance::new("oracle", cfg);
    match kind {
        OracleKind::Spacing => {
            let args = oc.spacing.ok_or_else(|| missing("spacing"))?;
            if ctx.dry_run("oracle", cfg)? {
                return Ok(());
            }
            let a_r = crystal_spacing(args.p, args.c_p, args.delta).map_err(oracle_error)?;
            report(ctx.output()?.write_json(
                "oracle_spacing.json",
                &prov,
                cfg,
                &SpacingReport { args, a_r },
            )?);
        }
        OracleKind::Lattice => {
            let args: LatticeArgs = oc.lattice.ok_or_else(|| missing("lattice"))?;
            let geometry = cfg
                .require_geometry()?
                .build(cfg.seed)
                .map_err(|e| CliError::config("geometry", e))?;
            let drive = cfg.require_drive()?;
            if ctx.dry_run("oracle", cfg)? {
                return Ok(());
            }
            let delta = args.delta.unwrap_or(drive.delta0);
            let gs = lattice_ground_state(
                &geometry,
                args.sector.sector(),
                drive.c_p,
                drive.p,
                delta,
                args.n_max,
            )
            .map_err(oracle_error)?;
            let body = GroundStateReport {
                args,
                spacings: gs.spacings(),
                ground_state: gs,
            };
            report(
                ctx.output()?
                    .write_json("oracle_lattice.json", &prov, cfg, &body)?,
            );
        }
        OracleKind::Continuum => {
            let args: ContinuumArgs = oc.continuum.ok_or_else(|| missing("continuum"))?;
            if ctx.dry_run("oracle", cfg)? {
                return Ok(());
            }
            let gs = continuum_relax(
                args.n_exc,
                args.span,
                args.sector.sector(),
                args.d,
                args.c_p,
                args.p,
            )
            .map_err(oracle_error)?;
            let body = GroundStateReport {
                args,
                spacings: gs.spacings(),
                ground_state: gs,
            };
            report(
                ctx.output()?
                    .write_json("oracle_continuum.json", &prov, cfg, &body)?,
            );
        }
        OracleKind::Scaling => {
            let args = oc.scaling.ok_or_else(|| missing("scaling"))?;
            if ctx.dry_run("oracle", cfg)? {
                return Ok(());
            }
            let rows = continuum_scaling(&args.spans, args.spacing, args.d, args.c_p, args.p)
                .map_err(oracle_error)?;
            report(
                ctx.output()?
                    .write_csv("oracle_scaling.csv", &prov, &rows)?,
            );
        }
    }
    Ok(())
}
