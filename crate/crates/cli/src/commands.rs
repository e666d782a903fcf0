//! The five subcommands and the pipeline pieces they share.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use phobs_core::embedding::{
    compute_parameter_bounds, enumerate_vertices, jacobian_gamma, mean_value_check, reconstruct, scheduling_values,
    weights, OperatingDomain, ParameterBounds, VertexSet,
};
use phobs_core::linalg::spectral_abscissa;
use phobs_core::lmi::{GainStructure, VerificationReport};
use phobs_core::metrics::{compare, compute_metrics, Comparison, MetricsReport};
use phobs_core::model::{PHSystem, StateVec};
use phobs_core::simulate::{
    bound_check, integrate, open_loop_domain, sweep_stable_amplitude, BoundReport, InputSignal, Observer, Scenario,
    Trajectory,
};
use phobs_core::synthesis::{
    max_decay_rate, synthesize_with, verify_result, DecayProbe, SynthesisError, SynthesisResult,
};

use crate::config::{Config, ConfigError, DesignConfig, DomainSource, ModeConfig, ScenarioConfig};
use crate::output::{read_json, sig6, table, write_json, write_text, Provenance};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("infeasible synthesis: {0}")]
    Infeasible(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("{0}")]
    Failed(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 4,
            CliError::Infeasible(_) => 2,
            CliError::Verification(_) => 3,
            CliError::Failed(_) | CliError::Io(_) => 1,
        }
    }
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

/// Command-line overrides shared by all subcommands.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub lambda: Option<f64>,
    pub mode: Option<ModeConfig>,
}

pub struct Context {
    pub cfg: Config,
    pub prov: Provenance,
    pub out: PathBuf,
    pub sys: PHSystem,
    pub overrides: Overrides,
}

impl Context {
    pub fn load(path: &Path, overrides: Overrides) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(ConfigError::Io)?;
        let text = String::from_utf8(bytes.clone()).map_err(|_| ConfigError::Invalid("config is not UTF-8".into()))?;
        let cfg = Config::parse(&text)?;
        if let Some(l) = overrides.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(ConfigError::Invalid(format!("--lambda must be non-negative, got {l}")).into());
            }
        }
        let sys = cfg
            .system
            .system()
            .map_err(|e| ConfigError::Invalid(format!("system: {e}")))?;
        let out = overrides.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
        Ok(Self {
            prov: Provenance::for_config(&bytes),
            cfg,
            out,
            sys,
            overrides,
        })
    }

    fn selected_designs(&self) -> Vec<&DesignConfig> {
        self.cfg
            .designs
            .iter()
            .filter(|d| self.overrides.mode.is_none_or(|m| m == d.mode))
            .collect()
    }

    fn design_path(&self, name: &str) -> PathBuf {
        self.out.join("synthesis").join(format!("{name}.json"))
    }
}

// ---------------------------------------------------------------- domain

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummary {
    pub u_max_v: f64,
    pub stable_v: f64,
    pub unstable_v: f64,
    pub probes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainRecord {
    pub source: DomainSource,
    pub domain: OperatingDomain,
    pub bounds: ParameterBounds,
    pub sweep: Option<SweepSummary>,
}

pub fn resolve_domain(ctx: &Context) -> Result<OperatingDomain, CliError> {
    let dom = match ctx.cfg.domain.source {
        DomainSource::Frozen => ctx.cfg.frozen_domain().expect("validated"),
        DomainSource::Derive => {
            let d = ctx.cfg.domain.derive.as_ref().expect("validated");
            let sc = Scenario {
                name: "domain".into(),
                x0: StateVec::new(
                    DVector::from_column_slice(&d.x0_q_m),
                    DVector::from_column_slice(&d.x0_p_kg_m_per_s),
                ),
                xhat0: StateVec::new(
                    DVector::from_column_slice(&d.xhat0_q_m),
                    DVector::from_column_slice(&d.xhat0_p_kg_m_per_s),
                ),
                input: d.input.signal(),
                horizon_s: d.horizon_s,
                dt_s: d.dt_s,
                sample_every: 1,
                gain_update: Default::default(),
            };
            open_loop_domain(&ctx.sys, &sc, d.margin_fraction, None).map_err(failed)?
        }
    };
    Ok(dom)
}

fn bounds_for(ctx: &Context, dom: &OperatingDomain) -> Result<(ParameterBounds, VertexSet), CliError> {
    let bounds = compute_parameter_bounds(&ctx.sys, dom).map_err(|e| ConfigError::Invalid(format!("domain: {e}")))?;
    let vertices = enumerate_vertices(&ctx.sys, &bounds);
    Ok((bounds, vertices))
}

pub fn run_sweep(ctx: &Context) -> Option<SweepSummary> {
    let s = ctx.cfg.domain.sweep.as_ref()?;
    let n = ctx.sys.n();
    let mut sc = Scenario::new(
        "sweep",
        StateVec::zeros(n),
        StateVec::zeros(n),
        InputSignal::Step {
            at_s: s.step_at_s,
            amplitude: vec![1.0; ctx.sys.m()],
        },
    );
    sc.horizon_s = s.horizon_s;
    sc.dt_s = s.dt_s;
    sc.sample_every = 1;
    let r = sweep_stable_amplitude(&ctx.sys, &sc, s.u_lo_v.powi(2), s.u_hi_v.powi(2), s.rel_tol);
    Some(SweepSummary {
        u_max_v: r.stable.sqrt(),
        stable_v: r.stable.sqrt(),
        unstable_v: r.unstable.sqrt(),
        probes: r.probes,
    })
}

fn domain_text(rec: &DomainRecord) -> String {
    let d = &rec.domain;
    let mut s = String::new();
    let _ = writeln!(s, "Operating domain ({:?})", rec.source);
    let rows = vec![
        vec!["q [m]".into(), sig6(d.q_min[0]), sig6(d.q_max[0])],
        vec!["p [kg m/s]".into(), sig6(d.p_min[0]), sig6(d.p_max[0])],
        vec!["u [V^2]".into(), sig6(d.u_min[0]), sig6(d.u_max[0])],
    ];
    s.push_str(&table(&["variable".into(), "min".into(), "max".into()], &rows));
    s.push('\n');
    s.push_str(&bounds_text(&rec.bounds));
    if let Some(sw) = &rec.sweep {
        let _ = writeln!(
            s,
            "\nLargest stable step amplitude: U_max = {:.4} kV (bracket {:.2} .. {:.2} V, {} probes)",
            sw.u_max_v / 1e3,
            sw.stable_v,
            sw.unstable_v,
            sw.probes
        );
    }
    s
}

fn bounds_text(b: &ParameterBounds) -> String {
    let rows: Vec<Vec<String>> = b
        .params
        .iter()
        .map(|p| vec![p.name.clone(), sig6(p.min), sig6(p.max)])
        .collect();
    let mut s = format!("Scheduling parameters ({} vertices)\n", b.vertex_count());
    s.push_str(&table(&["parameter".into(), "min".into(), "max".into()], &rows));
    s
}

pub fn cmd_domain(ctx: &Context) -> Result<String, CliError> {
    let domain = resolve_domain(ctx)?;
    let (bounds, _) = bounds_for(ctx, &domain)?;
    let rec = DomainRecord {
        source: ctx.cfg.domain.source,
        domain,
        bounds,
        sweep: run_sweep(ctx),
    };
    write_json(&ctx.out.join("domain.json"), "domain", &ctx.prov, &rec)?;
    let text = domain_text(&rec);
    write_text(&ctx.out.join("domain.txt"), &ctx.prov, &text)?;
    Ok(text)
}

// ------------------------------------------------------------ synthesize

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchSummary {
    pub lambda_max: f64,
    pub bracket: (f64, f64),
    pub capped: bool,
    pub feasible_at_zero: bool,
    pub probes: Vec<DecayProbe>,
    pub inconclusive_probes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignRecord {
    pub design: String,
    pub mode: ModeConfig,
    /// Rate forced from the command line instead of the config.
    pub lambda_override: Option<f64>,
    pub search: Option<SearchSummary>,
    pub result: SynthesisResult,
    pub bounds: ParameterBounds,
    pub verification: VerificationReport,
    /// Spectral abscissa of `Ā_i − L C̄_i` per vertex (constant mode).
    pub closed_loop_abscissa: Vec<f64>,
}

fn closed_loop_abscissa(result: &SynthesisResult, set: &VertexSet) -> Vec<f64> {
    if result.mode != GainStructure::Constant {
        return Vec::new();
    }
    set.vertices
        .iter()
        .map(|v| spectral_abscissa(&(&v.a_bar - &result.gains[0] * &v.c_bar)))
        .collect()
}

fn run_design(
    ctx: &Context,
    design: &DesignConfig,
    bounds: &ParameterBounds,
    set: &VertexSet,
) -> Result<DesignRecord, SynthesisError> {
    let settings = ctx.cfg.synthesis.lmi_settings();
    let mode = design.mode.structure();
    let rate = ctx.overrides.lambda.or(design.fixed_rate());
    let (result, search) = match rate {
        Some(l) => (synthesize_with(set, l, mode, settings)?, None),
        None => {
            let s = max_decay_rate(set, mode, ctx.cfg.synthesis.tolerance_per_s, settings)?;
            let summary = SearchSummary {
                lambda_max: s.lambda_max,
                bracket: s.bracket,
                capped: s.capped,
                feasible_at_zero: s.feasible_at_zero,
                probes: s.probes.clone(),
                inconclusive_probes: s.inconclusive_probes,
            };
            let result = s.result.ok_or(SynthesisError::Infeasible {
                decay_rate: 0.0,
                lower_bound: f64::NAN,
            })?;
            (result, Some(summary))
        }
    };
    let verification = verify_result(set, &result, settings)?;
    Ok(DesignRecord {
        design: design.name.clone(),
        mode: design.mode,
        lambda_override: ctx.overrides.lambda,
        search,
        closed_loop_abscissa: closed_loop_abscissa(&result, set),
        result,
        bounds: bounds.clone(),
        verification,
    })
}

fn design_row(r: &DesignRecord) -> Vec<String> {
    vec![
        r.design.clone(),
        r.result.mode.label().into(),
        format!("{:.4}", r.result.decay_rate),
        format!("{:.3}", r.result.kappa),
        format!("{:.3e}", r.verification.worst_residual()),
        format!("{:.3e}", r.verification.p_min_eig),
        if r.verification.passes {
            "pass".into()
        } else {
            "FAIL".into()
        },
    ]
}

fn design_header() -> Vec<String> {
    [
        "design",
        "mode",
        "lambda [1/s]",
        "kappa",
        "max eig S_i",
        "min eig P",
        "certificate",
    ]
    .map(String::from)
    .to_vec()
}

fn decay_rate_text(records: &[Option<DesignRecord>], designs: &[&DesignConfig]) -> String {
    let mut s = String::from("Maximum certifiable decay rates\n");
    let mut rows = Vec::new();
    let mut best: [Option<f64>; 2] = [None, None];
    for (d, r) in designs.iter().zip(records) {
        if d.fixed_rate().is_some() {
            continue;
        }
        match r.as_ref().and_then(|r| r.search.as_ref().map(|s| (r, s))) {
            Some((r, search)) => {
                let slot = &mut best[(d.mode == ModeConfig::Sched) as usize];
                *slot = Some(slot.unwrap_or(0.0).max(search.lambda_max));
                rows.push(vec![
                    d.name.clone(),
                    r.result.mode.label().into(),
                    format!("{:.3}", search.lambda_max),
                    format!("{:.4} .. {:.4}", search.bracket.0, search.bracket.1),
                    format!("{:.3}", r.result.kappa),
                    format!("{}", search.probes.len()),
                ]);
            }
            None => rows.push(vec![
                d.name.clone(),
                "-".into(),
                "not run".into(),
                "-".into(),
                "-".into(),
                "-".into(),
            ]),
        }
    }
    let header = ["design", "mode", "lambda_max [1/s]", "bracket", "kappa", "probes"].map(String::from);
    s.push_str(&table(&header, &rows));
    if let [Some(c), Some(sch)] = best {
        if c > 0.0 {
            let _ = writeln!(s, "scheduled / constant: {:.2}x", sch / c);
        }
    }
    s
}

pub fn cmd_synthesize(ctx: &Context) -> Result<String, CliError> {
    let domain = resolve_domain(ctx)?;
    let (bounds, set) = bounds_for(ctx, &domain)?;
    let designs = ctx.selected_designs();
    let outcomes: Vec<Result<DesignRecord, SynthesisError>> =
        designs.par_iter().map(|d| run_design(ctx, d, &bounds, &set)).collect();

    let mut text = String::new();
    let mut errors = Vec::new();
    let mut records = Vec::new();
    let mut rows = Vec::new();
    for (d, o) in designs.iter().zip(outcomes) {
        match o {
            Ok(r) => {
                write_json(&ctx.design_path(&d.name), "synthesis", &ctx.prov, &r)?;
                rows.push(design_row(&r));
                records.push(Some(r));
            }
            Err(e) => {
                let _ = fs::remove_file(ctx.design_path(&d.name));
                errors.push(format!("{}: {e}", d.name));
                records.push(None);
            }
        }
    }
    text.push_str(&bounds_text(&bounds));
    text.push('\n');
    text.push_str(&decay_rate_text(&records, &designs));
    text.push_str("\nCertified designs\n");
    text.push_str(&table(&design_header(), &rows));
    for e in &errors {
        let _ = writeln!(text, "infeasible: {e}");
    }
    write_text(&ctx.out.join("synthesis").join("decay_rates.txt"), &ctx.prov, &text)?;
    if errors.is_empty() {
        Ok(text)
    } else {
        print!("{text}");
        Err(CliError::Infeasible(errors.join("; ")))
    }
}

/// Stored design when it belongs to this config and no rate override is in
/// force; a fresh synthesis otherwise.
pub fn load_or_synthesize(
    ctx: &Context,
    design: &DesignConfig,
    bounds: &ParameterBounds,
    set: &VertexSet,
) -> Result<DesignRecord, CliError> {
    if ctx.overrides.lambda.is_none() {
        if let Some(env) = read_json::<DesignRecord>(&ctx.design_path(&design.name), "synthesis")? {
            if env.provenance == ctx.prov && env.data.lambda_override.is_none() {
                return Ok(env.data);
            }
        }
    }
    let rec = run_design(ctx, design, bounds, set).map_err(|e| match e {
        SynthesisError::Infeasible { .. } | SynthesisError::Inconclusive { .. } => {
            CliError::Infeasible(format!("{}: {e}", design.name))
        }
        other => failed(other),
    })?;
    if ctx.overrides.lambda.is_none() {
        write_json(&ctx.design_path(&design.name), "synthesis", &ctx.prov, &rec)?;
    }
    Ok(rec)
}

// -------------------------------------------------------------- simulate

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub design: Option<String>,
    pub csv: String,
    pub metrics: Option<MetricsReport>,
    pub bound: Option<BoundReport>,
    pub decay_rate: Option<f64>,
    pub kappa: Option<f64>,
    pub clamped_samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub scenario: String,
    pub horizon_s: f64,
    pub dt_s: f64,
    pub runs: Vec<RunRecord>,
    pub comparison: Option<Comparison>,
}

fn scenario_designs<'a>(ctx: &'a Context, sc: &'a ScenarioConfig) -> Vec<&'a DesignConfig> {
    sc.designs
        .iter()
        .filter_map(|n| ctx.cfg.design(n))
        .filter(|d| ctx.overrides.mode.is_none_or(|m| m == d.mode))
        .collect()
}

pub struct SimulatedRun {
    pub design: Option<DesignRecord>,
    pub trajectory: Trajectory,
}

/// Runs one scenario for each of its designs (or the plant alone).
pub fn simulate_scenario(
    ctx: &Context,
    sc: &ScenarioConfig,
    domain: &OperatingDomain,
    bounds: &ParameterBounds,
    set: &VertexSet,
) -> Result<Vec<SimulatedRun>, CliError> {
    let scenario = sc.scenario();
    let designs = scenario_designs(ctx, sc);
    if sc.designs.is_empty() {
        let mut trajectory = integrate(&ctx.sys, None, &scenario).map_err(failed)?;
        trajectory.mark_domain(domain);
        return Ok(vec![SimulatedRun {
            design: None,
            trajectory,
        }]);
    }
    designs
        .par_iter()
        .map(|d| {
            let rec = load_or_synthesize(ctx, d, bounds, set)?;
            let obs = Observer::from_result(&rec.result, bounds);
            let mut trajectory = integrate(&ctx.sys, Some(&obs), &scenario).map_err(failed)?;
            trajectory.mark_domain(domain);
            Ok(SimulatedRun {
                design: Some(rec),
                trajectory,
            })
        })
        .collect()
}

fn write_csv(ctx: &Context, path: &Path, traj: &Trajectory) -> Result<(), CliError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(ctx.prov.comment_line().as_bytes());
    buf.push(b'\n');
    traj.write_csv(&mut buf)?;
    crate::output::write_file(path, &buf)?;
    Ok(())
}

fn scenario_text(rec: &ScenarioRecord) -> String {
    let mut s = format!(
        "Scenario {} (horizon {} s, dt {} s)\n",
        rec.scenario, rec.horizon_s, rec.dt_s
    );
    let runs: Vec<&RunRecord> = rec.runs.iter().filter(|r| r.metrics.is_some()).collect();
    if runs.is_empty() {
        s.push_str("plant-only run, no estimation error\n");
        return s;
    }
    let mut header = vec!["metric".to_string()];
    header.extend(runs.iter().map(|r| r.design.clone().unwrap_or_default()));
    let metric = |label: &str, f: &dyn Fn(&MetricsReport) -> String| {
        let mut row = vec![label.to_string()];
        row.extend(runs.iter().map(|r| f(r.metrics.as_ref().expect("filtered"))));
        row
    };
    let opt = |v: Option<f64>, prec: usize| v.map_or("n/a".to_string(), |x| format!("{x:.prec$}"));
    let mut rows = vec![
        {
            let mut row = vec!["decay rate [1/s]".to_string()];
            row.extend(runs.iter().map(|r| opt(r.decay_rate, 4)));
            row
        },
        metric("peak |q~| [um]", &|m| format!("{:.1}", m.peak_qerr * 1e6)),
        metric("peak |p~| [g m/s]", &|m| format!("{:.3}", m.peak_perr * 1e3)),
        metric("peak ||x~|| [g m/s]", &|m| format!("{:.3}", m.peak_errnorm * 1e3)),
        metric("RMS ||x~|| [g m/s]", &|m| format!("{:.4}", m.rms_errnorm * 1e3)),
        metric("settling time (2%) [s]", &|m| {
            m.settling_time_s.map_or("not settled".into(), |t| format!("{t:.3}"))
        }),
        metric("overshoot |p~| [%]", &|m| opt(m.overshoot_perr_pct, 1)),
        metric("bound ratio (in domain)", &|m| opt(m.bound_margin, 4)),
    ];
    let mut row = vec!["bound check".to_string()];
    row.extend(runs.iter().map(|r| match &r.bound {
        Some(b) if b.passes => "pass".to_string(),
        Some(_) => "FAIL".to_string(),
        None => "n/a".to_string(),
    }));
    rows.push(row);
    s.push_str(&table(&header, &rows));
    if let Some(c) = &rec.comparison {
        let _ = writeln!(s, "\nImprovement vs {} [%]", c.baseline);
        let header = ["design", "peak |p~|", "peak ||x~||", "RMS ||x~||"].map(String::from);
        let rows: Vec<Vec<String>> = c
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.label.clone(),
                    opt(r.peak_perr, 1),
                    opt(r.peak_errnorm, 1),
                    opt(r.rms_errnorm, 1),
                ]
            })
            .collect();
        s.push_str(&table(&header, &rows));
    }
    s
}

pub fn cmd_simulate(ctx: &Context) -> Result<String, CliError> {
    let domain = resolve_domain(ctx)?;
    let (bounds, set) = bounds_for(ctx, &domain)?;
    let sims: Vec<Result<Vec<SimulatedRun>, CliError>> = ctx
        .cfg
        .scenarios
        .par_iter()
        .map(|sc| simulate_scenario(ctx, sc, &domain, &bounds, &set))
        .collect();
    let mut text = String::new();
    for (sc, runs) in ctx.cfg.scenarios.iter().zip(sims) {
        let runs = runs?;
        let dir = ctx.out.join("simulate").join(&sc.name);
        let mut records = Vec::new();
        for run in &runs {
            let label = run.design.as_ref().map_or("plant".to_string(), |d| d.design.clone());
            let csv = format!("{label}.csv");
            write_csv(ctx, &dir.join(&csv), &run.trajectory)?;
            let (metrics, bound, rate, kappa) = match &run.design {
                Some(d) => {
                    let b = bound_check(&run.trajectory, d.result.decay_rate, d.result.kappa);
                    let mut m = compute_metrics(label.clone(), &run.trajectory);
                    if let Some(m) = &mut m {
                        m.bound_margin = Some(b.max_ratio);
                    }
                    (m, Some(b), Some(d.result.decay_rate), Some(d.result.kappa))
                }
                None => (None, None, None, None),
            };
            records.push(RunRecord {
                design: run.design.as_ref().map(|d| d.design.clone()),
                csv,
                metrics,
                bound,
                decay_rate: rate,
                kappa,
                clamped_samples: run.trajectory.samples.iter().filter(|s| s.clamped).count(),
            });
        }
        let reports: Vec<MetricsReport> = records.iter().filter_map(|r| r.metrics.clone()).collect();
        let comparison = sc
            .baseline
            .as_ref()
            .and_then(|b| reports.iter().position(|r| &r.label == b))
            .map(|i| compare(&reports, i));
        let rec = ScenarioRecord {
            scenario: sc.name.clone(),
            horizon_s: sc.horizon_s,
            dt_s: sc.dt_s,
            runs: records,
            comparison,
        };
        write_json(&dir.join("metrics.json"), "scenario", &ctx.prov, &rec)?;
        let t = scenario_text(&rec);
        write_text(&dir.join("table.txt"), &ctx.prov, &t)?;
        text.push_str(&t);
        text.push('\n');
    }
    Ok(text)
}

// ---------------------------------------------------------------- verify

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub seed: u64,
    pub samples: usize,
    pub checks: Vec<Check>,
}

impl VerificationRecord {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Sampling-based checks of the embedding on `samples` random points.
pub fn static_checks(
    sys: &PHSystem,
    domain: &OperatingDomain,
    bounds: &ParameterBounds,
    set: &VertexSet,
    samples: usize,
    seed: u64,
) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_mv: f64 = 0.0;
    let mut worst_sum: f64 = 0.0;
    let mut min_h = f64::INFINITY;
    let mut worst_rec: f64 = 0.0;
    let mut hull_misses = 0;
    let a0 = sys.drift_matrix();
    for _ in 0..samples {
        let (x, u) = domain.sample(&mut rng);
        let (xhat, _) = domain.sample(&mut rng);
        let gain = nalgebra::DMatrix::from_fn(sys.state_dim(), sys.m(), |_, _| rng.random_range(-1e9..1e9));
        let scale = sys.gamma(&x, &u, &gain).norm() + sys.gamma(&xhat, &u, &gain).norm() + 1e-30;
        worst_mv = worst_mv.max(mean_value_check(sys, &x, &xhat, &u, &gain) / scale);

        let theta = scheduling_values(sys, bounds, &xhat, &u);
        for (p, v) in bounds.params.iter().zip(&theta) {
            if *v < p.min || *v > p.max {
                hull_misses += 1;
            }
        }
        let h = weights(sys, bounds, &xhat, &u);
        worst_sum = worst_sum.max((h.h.iter().sum::<f64>() - 1.0).abs());
        min_h = min_h.min(h.h.iter().copied().fold(f64::INFINITY, f64::min));
        let lhs = reconstruct(&h, set, &gain);
        let rhs = &a0 + jacobian_gamma(sys, &xhat, &u, &gain);
        let denom = rhs.amax().max(f64::MIN_POSITIVE);
        worst_rec = worst_rec.max((lhs - &rhs).amax() / denom);
    }
    vec![
        Check {
            name: "integral mean-value identity".into(),
            passed: worst_mv < 1e-12,
            detail: format!("max relative residual {worst_mv:.3e} (limit 1e-12)"),
        },
        Check {
            name: "partition of unity".into(),
            passed: worst_sum < 1e-12 && min_h >= -1e-15,
            detail: format!("max |sum h - 1| {worst_sum:.3e}, min h {min_h:.3e}"),
        },
        Check {
            name: "parameter hull membership".into(),
            passed: hull_misses == 0,
            detail: format!("{hull_misses} parameter values outside their bounds"),
        },
        Check {
            name: "polytopic reconstruction".into(),
            passed: worst_rec < 1e-10,
            detail: format!("max relative entry error {worst_rec:.3e} (limit 1e-10)"),
        },
    ]
}

fn design_checks(rec: &DesignRecord, set: &VertexSet, settings: phobs_core::lmi::LmiSettings) -> Vec<Check> {
    let mut out = Vec::new();
    let v = verify_result(set, &rec.result, settings);
    out.push(match v {
        Ok(v) => Check {
            name: format!("LMI certificate {}", rec.design),
            passed: v.passes,
            detail: format!(
                "{}; max eig S_i {:.3e}, min eig P {:.3e}",
                v.message,
                v.worst_residual(),
                v.p_min_eig
            ),
        },
        Err(e) => Check {
            name: format!("LMI certificate {}", rec.design),
            passed: false,
            detail: e.to_string(),
        },
    });
    if rec.result.mode == GainStructure::Constant {
        let worst = closed_loop_abscissa(&rec.result, set)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        out.push(Check {
            name: format!("closed-loop vertex spectra {}", rec.design),
            passed: worst <= -rec.result.decay_rate + 1e-6,
            detail: format!("max Re eig {worst:.6} vs -lambda {:.6}", -rec.result.decay_rate),
        });
    }
    out
}

pub fn cmd_verify(ctx: &Context) -> Result<String, CliError> {
    let domain = resolve_domain(ctx)?;
    let (bounds, set) = bounds_for(ctx, &domain)?;
    let vc = ctx.cfg.verify;
    let mut checks = static_checks(&ctx.sys, &domain, &bounds, &set, vc.samples, vc.seed);
    let settings = ctx.cfg.synthesis.lmi_settings();
    for d in ctx.selected_designs() {
        match load_or_synthesize(ctx, d, &bounds, &set) {
            Ok(rec) => checks.extend(design_checks(&rec, &set, settings)),
            Err(e) => checks.push(Check {
                name: format!("LMI certificate {}", d.name),
                passed: false,
                detail: e.to_string(),
            }),
        }
    }
    for sc in &ctx.cfg.scenarios {
        for run in simulate_scenario(ctx, sc, &domain, &bounds, &set)? {
            let Some(d) = &run.design else { continue };
            let b = bound_check(&run.trajectory, d.result.decay_rate, d.result.kappa);
            checks.push(Check {
                name: format!("exponential bound {}/{}", sc.name, d.design),
                passed: b.passes,
                detail: format!(
                    "max ratio {:.4} over {} samples{}",
                    b.max_ratio,
                    b.samples_checked,
                    b.left_domain_at
                        .map_or(String::new(), |t| format!(", left domain at t = {t:.4} s"))
                ),
            });
        }
    }
    let rec = VerificationRecord {
        seed: vc.seed,
        samples: vc.samples,
        checks,
    };
    write_json(
        &ctx.out.join("verify").join("verification.json"),
        "verification",
        &ctx.prov,
        &rec,
    )?;
    let text = verification_text(&rec);
    write_text(&ctx.out.join("verify").join("verification.txt"), &ctx.prov, &text)?;
    if rec.passed() {
        Ok(text)
    } else {
        print!("{text}");
        let failed: Vec<String> = rec
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.clone())
            .collect();
        Err(CliError::Verification(failed.join(", ")))
    }
}

fn verification_text(rec: &VerificationRecord) -> String {
    let mut s = format!("Verification (seed {}, {} samples)\n", rec.seed, rec.samples);
    let rows: Vec<Vec<String>> = rec
        .checks
        .iter()
        .map(|c| {
            vec![
                c.name.clone(),
                if c.passed { "pass".into() } else { "FAIL".into() },
                c.detail.clone(),
            ]
        })
        .collect();
    s.push_str(&table(&["check".into(), "status".into(), "detail".into()], &rows));
    s
}

// ---------------------------------------------------------------- report

const NOT_RUN: &str = "not run";

/// Consolidates existing result files; nothing is recomputed.
pub fn cmd_report(ctx: &Context) -> Result<String, CliError> {
    let mut s = String::from("# phobs report\n\n");

    s.push_str("## Operating domain\n\n");
    match read_json::<DomainRecord>(&ctx.out.join("domain.json"), "domain")? {
        Some(env) => {
            s.push_str("```\n");
            s.push_str(&domain_text(&env.data));
            s.push_str("```\n\n");
        }
        None => s.push_str("not run\n\n"),
    }

    let records: Vec<Option<DesignRecord>> = ctx
        .cfg
        .designs
        .iter()
        .map(|d| read_json::<DesignRecord>(&ctx.design_path(&d.name), "synthesis").map(|o| o.map(|e| e.data)))
        .collect::<Result<_, _>>()?;
    let designs: Vec<&DesignConfig> = ctx.cfg.designs.iter().collect();
    s.push_str("## Decay rates\n\n```\n");
    s.push_str(&decay_rate_text(&records, &designs));
    s.push_str("```\n\n## Certificates\n\n```\n");
    let rows: Vec<Vec<String>> = designs
        .iter()
        .zip(&records)
        .map(|(d, r)| match r {
            Some(r) => design_row(r),
            None => {
                let mut row = vec![d.name.clone()];
                row.extend(std::iter::repeat_n(NOT_RUN.to_string(), 6));
                row
            }
        })
        .collect();
    s.push_str(&table(&design_header(), &rows));
    s.push_str("```\n\n## Scenarios\n\n");
    for sc in &ctx.cfg.scenarios {
        let path = ctx.out.join("simulate").join(&sc.name).join("metrics.json");
        match read_json::<ScenarioRecord>(&path, "scenario")? {
            Some(env) => {
                s.push_str("```\n");
                s.push_str(&scenario_text(&env.data));
                s.push_str("```\n\n");
            }
            None => {
                let _ = writeln!(s, "Scenario {}: not run\n", sc.name);
            }
        }
    }
    s.push_str("## Verification\n\n");
    match read_json::<VerificationRecord>(&ctx.out.join("verify").join("verification.json"), "verification")? {
        Some(env) => {
            s.push_str("```\n");
            s.push_str(&verification_text(&env.data));
            s.push_str("```\n");
        }
        None => s.push_str("not run\n"),
    }
    let body = format!("<!-- {} -->\n{s}", ctx.prov.comment_line().trim_start_matches("# "));
    crate::output::write_file(&ctx.out.join("report.md"), body.as_bytes())?;
    Ok(s)
}
