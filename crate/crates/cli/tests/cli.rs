//! Subcommand behaviour through the `phobs` binary on small, fast configs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BASE: &str = r#"
schema_version = 1

[system]
mass_kg = 1.0
stiffness_n_per_m = 1000.0
damping_ns_per_m = 50.0
q0_m = 1.0e-3
eps_f_per_m = 2.8

[domain]
source = "frozen"
q_min_m = [-8.1257e-6]
q_max_m = [4.67545e-4]
p_min_kg_m_per_s = [-6.302908e-3]
p_max_kg_m_per_s = [2.228859e-3]
u_min_v2 = [0.0]
u_max_v2 = [2.64196e7]

[verify]
samples = 200
seed = 7
"#;

const DESIGNS: &str = r#"
[[designs]]
name = "c"
mode = "const"
decay_rate_per_s = 0.5

[[designs]]
name = "s"
mode = "sched"
decay_rate_per_s = 0.5

[[scenarios]]
name = "short"
designs = ["c", "s"]
baseline = "c"
x0_q_m = [0.0]
x0_p_kg_m_per_s = [0.0]
xhat0_q_m = [2.0e-4]
xhat0_p_kg_m_per_s = [-2.0e-3]
input = { kind = "step", at_s = 0.01, amplitude_v2 = [2.64196e7] }
horizon_s = 0.05
dt_s = 1.0e-4
sample_every = 5
"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("phobs.toml"), config).unwrap();
        Self { dir }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn run(&self, args: &[&str]) -> Output {
        self.run_env(args, &[])
    }

    fn run_env(&self, args: &[&str], env: &[(&str, &str)]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_phobs"))
            .args(args)
            .arg("--config")
            .arg(self.dir.path().join("phobs.toml"))
            .arg("--out")
            .arg(self.out())
            .envs(env.iter().copied())
            .output()
            .unwrap()
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_data(path: &Path) -> Value {
    let v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(v["format_version"], 1);
    assert!(v["config_sha256"].as_str().unwrap().len() == 64);
    v["data"].clone()
}

#[test]
fn bad_configs_exit_with_status_4() {
    let unknown = Workspace::new(&BASE.replace("mass_kg = 1.0", "mass_kg = 1.0\nmass = 1.0"));
    let o = unknown.run(&["domain"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("mass"));

    let schema = Workspace::new(&BASE.replace("schema_version = 1", "schema_version = 2"));
    assert_eq!(code(&schema.run(&["domain"])), 4);

    let ws = Workspace::new(BASE);
    let missing = Command::new(env!("CARGO_BIN_EXE_phobs"))
        .args(["domain", "--config", "/nonexistent/phobs.toml"])
        .output()
        .unwrap();
    assert_eq!(code(&missing), 4);
    assert_eq!(code(&ws.run(&["synthesize", "--lambda", "-1"])), 4);
    assert_eq!(code(&ws.run(&["synthesize", "--mode", "adaptive"])), 4);
    assert_eq!(code(&ws.run_env(&["domain"], &[("PHOBS_THREADS", "0")])), 4);
    assert_eq!(code(&ws.run_env(&["domain"], &[("PHOBS_THREADS", "1")])), 0);
}

#[test]
fn frozen_box_is_echoed() {
    let ws = Workspace::new(BASE);
    let o = ws.run(&["domain"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let data = read_data(&ws.out().join("domain.json"));
    assert_eq!(data["domain"]["q_min"][0].as_f64(), Some(-8.1257e-6));
    assert_eq!(data["domain"]["p_max"][0].as_f64(), Some(2.228859e-3));
    assert_eq!(data["domain"]["u_max"][0].as_f64(), Some(2.64196e7));
    assert_eq!(data["bounds"]["params"].as_array().unwrap().len(), 4);
    assert!(stdout(&o).contains("1.65281e-5"));
    assert!(data["sweep"].is_null());
}

#[test]
fn zero_input_derivation_gives_a_zero_box() {
    let cfg = BASE.replace(
        "source = \"frozen\"",
        r#"source = "derive"
derive = { x0_q_m = [0.0], x0_p_kg_m_per_s = [0.0], xhat0_q_m = [0.0], xhat0_p_kg_m_per_s = [0.0], input = { kind = "zero" }, horizon_s = 0.1, dt_s = 1.0e-3 }"#,
    );
    let ws = Workspace::new(&cfg);
    let o = ws.run(&["domain"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let data = read_data(&ws.out().join("domain.json"));
    for key in ["q_min", "q_max", "p_min", "p_max", "u_min", "u_max"] {
        assert_eq!(data["domain"][key][0].as_f64(), Some(0.0), "{key}");
    }
}

#[test]
fn decay_rate_above_the_maximum_is_infeasible() {
    let ws = Workspace::new(&format!("{BASE}{DESIGNS}"));
    let o = ws.run(&["synthesize", "--mode", "sched", "--lambda", "6"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("phase-I lower bound"), "{}", stderr(&o));
    assert!(!ws.out().join("synthesis/s.json").exists());
}

#[test]
fn pipeline_outputs_and_tamper_detection() {
    let ws = Workspace::new(&format!("{BASE}{DESIGNS}"));
    let o = ws.run(&["synthesize"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let design = read_data(&ws.out().join("synthesis/c.json"));
    assert_eq!(design["verification"]["passes"], true);
    assert!(fs::read_to_string(ws.out().join("synthesis/decay_rates.txt"))
        .unwrap()
        .starts_with("# phobs "));

    let o = ws.run(&["simulate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(ws.out().join("simulate/short/s.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# phobs "));
    let header = "t,q,p,qhat,phat,qerr,perr,y,yhat,u,L1,L2";
    let hs: String = (1..=16).map(|i| format!(",h{i}")).collect();
    assert_eq!(lines.next().unwrap(), format!("{header}{hs}"));
    assert_eq!(lines.count(), 101);
    let c_csv = fs::read_to_string(ws.out().join("simulate/short/c.csv")).unwrap();
    assert_eq!(c_csv.lines().nth(1).unwrap(), header);
    let metrics = read_data(&ws.out().join("simulate/short/metrics.json"));
    assert_eq!(metrics["comparison"]["baseline"], "c");

    let o = ws.run(&["verify"]);
    assert_eq!(code(&o), 0, "{}\n{}", stdout(&o), stderr(&o));

    // Negate P in the stored constant design.
    let path = ws.out().join("synthesis/c.json");
    let mut file: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    for v in file["data"]["result"]["p"][0].as_array_mut().unwrap() {
        *v = Value::from(-v.as_f64().unwrap());
    }
    fs::write(&path, serde_json::to_string_pretty(&file).unwrap()).unwrap();
    let o = ws.run(&["verify"]);
    assert_eq!(code(&o), 3);
    assert!(stdout(&o).contains("P not positive definite"), "{}", stdout(&o));
    assert!(stderr(&o).contains("LMI certificate c"));
}

#[test]
fn plant_only_run_and_static_verification() {
    let cfg = format!(
        "{BASE}\n[[scenarios]]\nname = \"plant\"\nx0_q_m = [0.0]\nx0_p_kg_m_per_s = [0.0]\nxhat0_q_m = [0.0]\nxhat0_p_kg_m_per_s = [0.0]\ninput = {{ kind = \"step\", at_s = 0.0, amplitude_v2 = [1.0e6] }}\nhorizon_s = 0.01\ndt_s = 1.0e-4\n"
    );
    let ws = Workspace::new(&cfg);
    let o = ws.run(&["simulate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(ws.out().join("simulate/plant/plant.csv")).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "t,q,p,y,u");

    let ws = Workspace::new(BASE);
    let o = ws.run(&["verify"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let data = read_data(&ws.out().join("verify/verification.json"));
    assert_eq!(data["checks"].as_array().unwrap().len(), 4);
    assert_eq!(data["seed"], 7);
}

#[test]
fn report_marks_missing_results_and_is_repeatable() {
    let ws = Workspace::new(&format!("{BASE}{DESIGNS}"));
    let o = ws.run(&["report"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let first = fs::read_to_string(ws.out().join("report.md")).unwrap();
    assert!(first.contains("not run"));
    assert!(first.contains("Scenario short: not run"));
    assert_eq!(code(&ws.run(&["report"])), 0);
    assert_eq!(first, fs::read_to_string(ws.out().join("report.md")).unwrap());
}
