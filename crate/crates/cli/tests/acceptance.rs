//! End-to-end acceptance checks on the DEA instance. Runs without the libtest
//! harness so that every criterion prints exactly one PASS/FAIL line.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use phobs_cli::commands::ScenarioRecord;
use phobs_cli::output::read_json;
use phobs_core::embedding::{
    compute_parameter_bounds, enumerate_vertices, jacobian_gamma, mean_value_check, reconstruct, weights,
    OperatingDomain, ParameterBounds, VertexSet,
};
use phobs_core::lmi::{GainStructure, LmiSettings};
use phobs_core::metrics::MetricsReport;
use phobs_core::model::{DeaParams, PHSystem, StateVec};
use phobs_core::simulate::{integrate, integrate_error_dynamics, InputSignal, Observer, Scenario, Trajectory};
use phobs_core::synthesis::{max_decay_rate, synthesize_with, SynthesisResult};

const CONFIG: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/dea.cfg");
const STEP_V2: f64 = 2.64196e7;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn frozen_box() -> OperatingDomain {
    OperatingDomain {
        q_min: vec![-8.1257e-6],
        q_max: vec![4.67545e-4],
        p_min: vec![-6.302908e-3],
        p_max: vec![2.228859e-3],
        u_min: vec![0.0],
        u_max: vec![STEP_V2],
    }
}

struct Fixture {
    sys: PHSystem,
    domain: OperatingDomain,
    bounds: ParameterBounds,
    set: VertexSet,
    settings: LmiSettings,
}

impl Fixture {
    fn new() -> Self {
        let sys = DeaParams::default().system().expect("DEA parameters");
        let domain = frozen_box();
        let bounds = compute_parameter_bounds(&sys, &domain).expect("bounds");
        let set = enumerate_vertices(&sys, &bounds);
        Self {
            sys,
            domain,
            bounds,
            set,
            settings: LmiSettings::default(),
        }
    }

    fn design(&self, rate: f64, mode: GainStructure) -> SynthesisResult {
        synthesize_with(&self.set, rate, mode, self.settings).expect("feasible design")
    }

    fn step_scenario(&self, horizon_s: f64, dt_s: f64) -> Scenario {
        let mut sc = Scenario::new(
            "acceptance",
            StateVec::zeros(1),
            StateVec::scalar(2e-4, -2e-3),
            InputSignal::Step {
                at_s: 1.0,
                amplitude: vec![STEP_V2],
            },
        );
        sc.horizon_s = horizon_s;
        sc.dt_s = dt_s;
        sc.sample_every = 1;
        sc
    }
}

fn sig_eq(value: f64, expected: f64, digits: i32) -> bool {
    let scale = 10f64.powi(expected.abs().log10().floor() as i32 - digits + 1);
    ((value / scale).round() - (expected / scale).round()).abs() < 0.5
}

fn parameter_bounds(fx: &Fixture) -> Outcome {
    let start = Instant::now();
    let bounds = compute_parameter_bounds(&fx.sys, &fx.domain).expect("bounds");
    let elapsed = start.elapsed();
    let expected = [
        ("a", 1.65281e-5, 3.61820e-5),
        ("beta", -2.280516e-7, 8.064450e-8),
        ("g", 5.46459e-9, 1.76996e-8),
    ];
    let mut misses = Vec::new();
    for (name, lo, hi) in expected {
        let p = bounds.get(name).expect("parameter present");
        if !sig_eq(p.min, lo, 6) || !sig_eq(p.max, hi, 6) {
            misses.push(format!("{name} = [{:e}, {:e}]", p.min, p.max));
        }
    }
    let fast = elapsed.as_secs_f64() < 1e-3;
    outcome(
        misses.is_empty() && fast,
        format!(
            "6 significant figures: {}; runtime {:.1} us",
            if misses.is_empty() {
                "all match".to_string()
            } else {
                misses.join(", ")
            },
            elapsed.as_secs_f64() * 1e6
        ),
    )
}

/// Independent check with nalgebra's eigensolver: max eig over `S_i` and min eig of `P`.
fn certificate_margins(set: &VertexSet, r: &SynthesisResult) -> (f64, f64) {
    let p = &r.p;
    let worst = set
        .vertices
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let gain = &r.gains[if r.mode == GainStructure::Scheduled { i } else { 0 }];
            let closed = &v.a_bar - gain * &v.c_bar;
            let s = closed.transpose() * p + p * &closed + p * (2.0 * r.decay_rate);
            let s = (&s + s.transpose()) * 0.5;
            SymmetricEigen::new(s).eigenvalues.max()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let p_min = SymmetricEigen::new((p + p.transpose()) * 0.5).eigenvalues.min();
    (worst, p_min)
}

fn decay_rate_table(fx: &Fixture) -> (Outcome, Vec<SynthesisResult>) {
    let start = Instant::now();
    let constant = max_decay_rate(&fx.set, GainStructure::Constant, 1e-3, fx.settings).expect("search");
    let scheduled = max_decay_rate(&fx.set, GainStructure::Scheduled, 1e-3, fx.settings).expect("search");
    let elapsed = start.elapsed().as_secs_f64();
    let (lc, ls) = (constant.lambda_max, scheduled.lambda_max);
    let within = |v: f64, target: f64| (v - target).abs() <= 0.05 * target;
    let mut certified = true;
    let mut results = Vec::new();
    for r in [constant.result, scheduled.result] {
        match r {
            Some(r) => {
                let (worst, p_min) = certificate_margins(&fx.set, &r);
                certified &= worst < 0.0 && p_min > 0.0;
                results.push(r);
            }
            None => certified = false,
        }
    }
    let ratio = ls / lc;
    let passed = within(lc, 0.897) && within(ls, 4.554) && certified && ratio >= 4.0 && elapsed < 60.0;
    (
        outcome(
            passed,
            format!(
                "lambda_max const {lc:.4} (0.897), sched {ls:.4} (4.554), ratio {ratio:.2}, certified {certified}, runtime {elapsed:.1} s"
            ),
        ),
        results,
    )
}

fn soundness(fx: &Fixture, results: &[SynthesisResult]) -> Outcome {
    let mut worst_s = f64::NEG_INFINITY;
    let mut min_p = f64::INFINITY;
    let mut worst_spectrum = f64::NEG_INFINITY;
    for r in results {
        let (s, p) = certificate_margins(&fx.set, r);
        worst_s = worst_s.max(s);
        min_p = min_p.min(p);
        if r.mode == GainStructure::Constant {
            for v in &fx.set.vertices {
                let closed = &v.a_bar - &r.gains[0] * &v.c_bar;
                let re = closed
                    .complex_eigenvalues()
                    .iter()
                    .map(|z| z.re)
                    .fold(f64::NEG_INFINITY, f64::max);
                worst_spectrum = worst_spectrum.max(re + r.decay_rate);
            }
        }
    }
    outcome(
        worst_s < 0.0 && min_p > 0.0 && worst_spectrum <= 1e-6,
        format!(
            "{} designs: max eig S_i {worst_s:.3e}, min eig P {min_p:.3e}, max Re eig + lambda {worst_spectrum:.3e}",
            results.len()
        ),
    )
}

fn random_gain(rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(2, 1, |_, _| rng.random_range(-1e9..1e9))
}

fn mean_value(fx: &Fixture) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (x, u) = fx.domain.sample(&mut rng);
        let (xhat, _) = fx.domain.sample(&mut rng);
        let gain = random_gain(&mut rng);
        let scale = fx.sys.gamma(&x, &u, &gain).norm() + fx.sys.gamma(&xhat, &u, &gain).norm();
        worst = worst.max(mean_value_check(&fx.sys, &x, &xhat, &u, &gain) / scale);
    }
    let elapsed = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-12 && elapsed < 5.0,
        format!("max relative residual {worst:.3e} over 1000 samples, runtime {elapsed:.2} s"),
    )
}

fn embedding_exactness(fx: &Fixture) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a0 = fx.sys.drift_matrix();
    let (mut sum_err, mut min_h, mut rec_err): (f64, f64, f64) = (0.0, f64::INFINITY, 0.0);
    for _ in 0..1000 {
        let (xhat, u) = fx.domain.sample(&mut rng);
        let gain = random_gain(&mut rng);
        let h = weights(&fx.sys, &fx.bounds, &xhat, &u);
        sum_err = sum_err.max((h.h.iter().sum::<f64>() - 1.0).abs());
        min_h = min_h.min(h.h.iter().copied().fold(f64::INFINITY, f64::min));
        let expected = &a0 + jacobian_gamma(&fx.sys, &xhat, &u, &gain);
        let got = reconstruct(&h, &fx.set, &gain);
        for (g, e) in got.iter().zip(expected.iter()) {
            let denom = e.abs().max(expected.amax() * f64::EPSILON);
            rec_err = rec_err.max((g - e).abs() / denom);
        }
    }
    outcome(
        sum_err < 1e-12 && min_h >= -1e-15 && rec_err < 1e-10,
        format!("max |sum h - 1| {sum_err:.2e}, min h {min_h:.2e}, max entrywise relative error {rec_err:.2e}"),
    )
}

fn scenario_reports(out: &Path, name: &str) -> Option<ScenarioRecord> {
    read_json::<ScenarioRecord>(&out.join("simulate").join(name).join("metrics.json"), "scenario")
        .ok()
        .flatten()
        .map(|e| e.data)
}

fn run_metrics<'a>(rec: &'a ScenarioRecord, design: &str) -> Option<&'a MetricsReport> {
    rec.runs
        .iter()
        .find(|r| r.design.as_deref() == Some(design))?
        .metrics
        .as_ref()
}

fn scenario1(out: &Path) -> Outcome {
    let Some(rec) = scenario_reports(out, "scenario1") else {
        return outcome(false, "scenario1 results missing");
    };
    let mut notes = Vec::new();
    let mut bands = true;
    for (design, peak_p, settle, overshoot) in [("s1_const", 2.46e-3, 0.141, 22.8), ("s1_sched", 2.88e-3, 0.139, 43.8)]
    {
        let Some(m) = run_metrics(&rec, design) else {
            return outcome(false, format!("{design} missing"));
        };
        let q_ok = (m.peak_qerr - 2e-4).abs() <= 1e-12;
        let p_ok = (m.peak_perr - peak_p).abs() <= 0.15 * peak_p;
        let ts = m.settling_time_s.unwrap_or(f64::NAN);
        let ts_ok = (ts - settle).abs() <= 0.2 * settle;
        let os = m.overshoot_perr_pct.unwrap_or(f64::NAN);
        let os_ok = (os - overshoot).abs() <= 10.0;
        bands &= q_ok && p_ok && ts_ok && os_ok;
        let mark = |ok: bool| if ok { "" } else { "*" };
        notes.push(format!(
            "{design}: |q~| {:.1} um{}, |p~| {:.3}{} g m/s, Ts {ts:.3}{} s, OS {os:.1}{}%",
            m.peak_qerr * 1e6,
            mark(q_ok),
            m.peak_perr * 1e3,
            mark(p_ok),
            mark(ts_ok),
            mark(os_ok)
        ));
    }
    let bound_ok = rec.runs.iter().all(|r| r.bound.as_ref().is_some_and(|b| b.passes));
    let worst_ratio = rec
        .runs
        .iter()
        .filter_map(|r| r.bound.as_ref())
        .map(|b| b.max_ratio)
        .fold(0.0, f64::max);
    let verdict = if bands {
        "reference bands met".to_string()
    } else {
        format!(
            "reference bands missed (*), exponential-bound fallback {}",
            if bound_ok { "holds" } else { "fails" }
        )
    };
    outcome(
        bands || bound_ok,
        format!("{}; {verdict}, max bound ratio {worst_ratio:.3}", notes.join("; ")),
    )
}

fn scenario2(out: &Path) -> Outcome {
    let Some(rec) = scenario_reports(out, "scenario2") else {
        return outcome(false, "scenario2 results missing");
    };
    let (Some(c), Some(s)) = (run_metrics(&rec, "s2_const"), run_metrics(&rec, "s2_sched")) else {
        return outcome(false, "scenario2 designs missing");
    };
    let peak_gain = 100.0 * (c.peak_errnorm - s.peak_errnorm) / c.peak_errnorm;
    let rms_gain = 100.0 * (c.rms_errnorm - s.rms_errnorm) / c.rms_errnorm;
    let os = s.overshoot_perr_pct.unwrap_or(f64::NAN);
    let (ts_c, ts_s) = (
        c.settling_time_s.unwrap_or(f64::NAN),
        s.settling_time_s.unwrap_or(f64::NAN),
    );
    let ts_ok = ts_s > ts_c && (ts_s - 0.607).abs() <= 0.3 * 0.607 && (ts_c - 0.138).abs() <= 0.3 * 0.138;
    outcome(
        os == 0.0 && peak_gain >= 20.0 && rms_gain >= 20.0 && ts_ok,
        format!(
            "sched overshoot {os:.1}%, peak ||x~|| -{peak_gain:.1}%, RMS -{rms_gain:.1}%, Ts {ts_s:.3} s vs const {ts_c:.3} s"
        ),
    )
}

fn final_state(t: &Trajectory) -> DVector<f64> {
    let s = t.samples.last().expect("samples");
    let xh = s.xhat.as_ref().expect("observer");
    DVector::from_vec(vec![s.x.q[0], s.x.p[0], xh.q[0], xh.p[0]])
}

fn integrator(fx: &Fixture, constant: &SynthesisResult) -> Outcome {
    let obs = Observer::from_result(constant, &fx.bounds);
    let horizon = 1.25;
    let finals: Vec<DVector<f64>> = [4e-4, 2e-4, 1e-4]
        .iter()
        .map(|&dt| final_state(&integrate(&fx.sys, Some(&obs), &fx.step_scenario(horizon, dt)).expect("run")))
        .collect();
    // Components scaled by their magnitudes so q and p weigh equally.
    let scale = finals[2].map(|v| v.abs().max(1e-12));
    let coarse = (&finals[0] - &finals[1]).component_div(&scale).norm();
    let fine = (&finals[1] - &finals[2]).component_div(&scale).norm();
    let order = (coarse / fine).log2();

    let sc = fx.step_scenario(2.0, 1e-5);
    let coupled = integrate(&fx.sys, Some(&obs), &sc).expect("coupled run");
    let error_eq = integrate_error_dynamics(&fx.sys, &obs, &sc).expect("error run");
    let peak = coupled
        .samples
        .iter()
        .map(|s| s.error().expect("observer").norm())
        .fold(0.0, f64::max);
    let gap = coupled
        .samples
        .iter()
        .zip(&error_eq.samples)
        .map(|(a, b)| {
            let ea = a.error().expect("observer");
            let eb = b.error().expect("observer");
            ea.sub(&eb).norm()
        })
        .fold(0.0, f64::max)
        / peak;
    outcome(
        order >= 3.8 && gap < 1e-8,
        format!("observed order {order:.3} (dt 4e-4/2e-4/1e-4); coupled vs error equation {gap:.2e} relative"),
    )
}

fn degenerate_equality(fx: &Fixture, constant: &SynthesisResult) -> Outcome {
    let count = fx.set.len();
    let sched = SynthesisResult {
        mode: GainStructure::Scheduled,
        gains: vec![constant.gains[0].clone(); count],
        multipliers: vec![&constant.p * &constant.gains[0]; count],
        ..constant.clone()
    };
    let sc = fx.step_scenario(2.0, 1e-5);
    let a = integrate(&fx.sys, Some(&Observer::from_result(constant, &fx.bounds)), &sc).expect("const run");
    let b = integrate(&fx.sys, Some(&Observer::from_result(&sched, &fx.bounds)), &sc).expect("sched run");
    let state = |s: &phobs_core::simulate::Sample| {
        let xh = s.xhat.as_ref().expect("observer");
        DVector::from_vec(vec![s.x.q[0], s.x.p[0], xh.q[0], xh.p[0]])
    };
    let scale = a
        .samples
        .iter()
        .fold(DVector::zeros(4), |acc: DVector<f64>, s| acc.sup(&state(s).abs()));
    let mut worst: f64 = 0.0;
    for (sa, sb) in a.samples.iter().zip(&b.samples) {
        worst = worst.max((state(sa) - state(sb)).abs().component_div(&scale).max());
    }
    outcome(
        worst < 1e-13 && b.gain_source == "sched",
        format!("max relative deviation {worst:.2e} over {} samples", a.samples.len()),
    )
}

fn run_phobs(args: &[&str], out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_phobs"))
        .args(args)
        .args(["--config", CONFIG, "--out"])
        .arg(out)
        .stdout(std::process::Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    if status.success() {
        Ok(())
    } else {
        Err(format!("phobs {} exited with {status}", args.join(" ")))
    }
}

fn pipeline(out: &Path) -> Result<(), String> {
    for cmd in ["domain", "synthesize", "simulate", "verify", "report"] {
        run_phobs(&[cmd], out)?;
    }
    Ok(())
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).into_iter().flatten().flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                found.push(path.strip_prefix(root).expect("under root").to_path_buf());
            }
        }
    }
    found.sort();
    found
}

fn determinism(first: &Path, second: &Path) -> Outcome {
    let files = files_under(first);
    if files != files_under(second) {
        return outcome(false, "output trees differ");
    }
    let differing: Vec<String> = files
        .iter()
        .filter(|f| std::fs::read(first.join(f)).ok() != std::fs::read(second.join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    let csvs = files
        .iter()
        .filter(|f| f.extension().is_some_and(|e| e == "csv"))
        .count();
    outcome(
        differing.is_empty() && files.iter().any(|f| f.ends_with("report.md")),
        if differing.is_empty() {
            format!(
                "{} files byte-identical across two runs, including report.md and {csvs} CSVs",
                files.len()
            )
        } else {
            format!("differing files: {}", differing.join(", "))
        },
    )
}

fn main() {
    let fx = Fixture::new();
    let work = tempfile::tempdir().expect("temp dir");
    let (first, second) = (work.path().join("run1"), work.path().join("run2"));
    let pipelines = pipeline(&first).and_then(|_| pipeline(&second));

    let constant = fx.design(0.897, GainStructure::Constant);
    let (table_outcome, mut results) = decay_rate_table(&fx);
    results.extend([
        fx.design(0.0897, GainStructure::Constant),
        fx.design(0.0897, GainStructure::Scheduled),
        constant.clone(),
        fx.design(0.897, GainStructure::Scheduled),
        fx.design(4.554, GainStructure::Scheduled),
    ]);

    let pipeline_failure = |what: &str| {
        outcome(
            false,
            format!("{what}: {}", pipelines.clone().err().unwrap_or_default()),
        )
    };
    let criteria: Vec<(&str, Outcome)> = vec![
        ("parameter bounds", parameter_bounds(&fx)),
        ("decay-rate table", table_outcome),
        ("certificate soundness", soundness(&fx, &results)),
        ("mean-value identity", mean_value(&fx)),
        ("embedding exactness", embedding_exactness(&fx)),
        (
            "scenario 1",
            if pipelines.is_ok() {
                scenario1(&first)
            } else {
                pipeline_failure("pipeline")
            },
        ),
        (
            "scenario 2",
            if pipelines.is_ok() {
                scenario2(&first)
            } else {
                pipeline_failure("pipeline")
            },
        ),
        ("integrator validity", integrator(&fx, &constant)),
        ("uniform scheduled gains", degenerate_equality(&fx, &constant)),
        (
            "determinism",
            if pipelines.is_ok() {
                determinism(&first, &second)
            } else {
                pipeline_failure("pipeline")
            },
        ),
    ];

    let mut failures = 0;
    for (i, (name, o)) in criteria.iter().enumerate() {
        println!(
            "criterion {:>2} {:<26} {}  {}",
            i + 1,
            name,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        failures += usize::from(!o.passed);
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
