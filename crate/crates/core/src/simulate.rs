//! Fixed-step RK4 simulation of the plant together with its observer.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{weights, OperatingDomain, ParameterBounds};
use crate::lmi::GainStructure;
use crate::model::{PHSystem, StateVec};
use crate::synthesis::SynthesisResult;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error("time step must be positive and not exceed the horizon (dt = {dt}, horizon = {horizon})")]
    BadGrid { dt: f64, horizon: f64 },
    #[error("sample_every must be at least 1")]
    BadSampling,
    #[error("non-finite state at t = {0} s")]
    NonFinite(f64),
    #[error("state dimension {got} does not match the system ({expected})")]
    Dimension { expected: usize, got: usize },
    #[error("input has {got} channels, system expects {expected}")]
    InputDimension { expected: usize, got: usize },
}

/// Input `u(t)` in V².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSignal {
    Zero,
    /// `amplitude` for `t ≥ at_s`, zero before.
    Step {
        at_s: f64,
        amplitude: Vec<f64>,
    },
    /// Piecewise constant: each breakpoint holds until the next one; zero
    /// before the first.
    Piecewise {
        breakpoints: Vec<(f64, Vec<f64>)>,
    },
}

impl InputSignal {
    pub fn eval(&self, t: f64, m: usize) -> DVector<f64> {
        match self {
            InputSignal::Zero => DVector::zeros(m),
            InputSignal::Step { at_s, amplitude } => {
                if t >= *at_s {
                    DVector::from_column_slice(amplitude)
                } else {
                    DVector::zeros(m)
                }
            }
            InputSignal::Piecewise { breakpoints } => breakpoints
                .iter()
                .take_while(|(s, _)| *s <= t)
                .last()
                .map(|(_, v)| DVector::from_column_slice(v))
                .unwrap_or_else(|| DVector::zeros(m)),
        }
    }

    /// Componentwise peak value, including the implicit zero.
    pub fn peak(&self, m: usize) -> Vec<f64> {
        let mut out = vec![0.0f64; m];
        let mut take = |v: &[f64]| {
            for (o, x) in out.iter_mut().zip(v) {
                *o = (*o).max(*x);
            }
        };
        match self {
            InputSignal::Zero => {}
            InputSignal::Step { amplitude, .. } => take(amplitude),
            InputSignal::Piecewise { breakpoints } => breakpoints.iter().for_each(|(_, v)| take(v)),
        }
        out
    }

    fn channels(&self) -> Option<usize> {
        match self {
            InputSignal::Zero => None,
            InputSignal::Step { amplitude, .. } => Some(amplitude.len()),
            InputSignal::Piecewise { breakpoints } => breakpoints.first().map(|(_, v)| v.len()),
        }
    }

    /// Time of the first change away from zero, if any.
    pub fn onset(&self) -> Option<f64> {
        match self {
            InputSignal::Zero => None,
            InputSignal::Step { at_s, .. } => Some(*at_s),
            InputSignal::Piecewise { breakpoints } => breakpoints.first().map(|(t, _)| *t),
        }
    }

    pub fn scaled(&self, factor: f64) -> InputSignal {
        let scale = |v: &[f64]| v.iter().map(|x| x * factor).collect();
        match self {
            InputSignal::Zero => InputSignal::Zero,
            InputSignal::Step { at_s, amplitude } => InputSignal::Step {
                at_s: *at_s,
                amplitude: scale(amplitude),
            },
            InputSignal::Piecewise { breakpoints } => InputSignal::Piecewise {
                breakpoints: breakpoints.iter().map(|(t, v)| (*t, scale(v))).collect(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainUpdate {
    /// Re-evaluate the scheduled gain at every RK4 stage.
    #[default]
    EveryStage,
    /// Evaluate once per step and hold it over the stages.
    PerStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub x0: StateVec,
    pub xhat0: StateVec,
    pub input: InputSignal,
    pub horizon_s: f64,
    pub dt_s: f64,
    /// Record every `sample_every`-th step.
    pub sample_every: usize,
    pub gain_update: GainUpdate,
}

impl Scenario {
    pub fn new(name: impl Into<String>, x0: StateVec, xhat0: StateVec, input: InputSignal) -> Self {
        Self {
            name: name.into(),
            x0,
            xhat0,
            input,
            horizon_s: 2.0,
            dt_s: 1e-5,
            sample_every: 10,
            gain_update: GainUpdate::EveryStage,
        }
    }

    pub fn steps(&self) -> usize {
        (self.horizon_s / self.dt_s).round() as usize
    }

    fn validate(&self, sys: &PHSystem) -> Result<(), SimulationError> {
        if !(self.dt_s > 0.0 && self.horizon_s >= self.dt_s && self.steps() >= 1) {
            return Err(SimulationError::BadGrid {
                dt: self.dt_s,
                horizon: self.horizon_s,
            });
        }
        if self.sample_every == 0 {
            return Err(SimulationError::BadSampling);
        }
        for x in [&self.x0, &self.xhat0] {
            if x.dim() != sys.n() {
                return Err(SimulationError::Dimension {
                    expected: sys.n(),
                    got: x.dim(),
                });
            }
        }
        if let Some(got) = self.input.channels() {
            if got != sys.m() {
                return Err(SimulationError::InputDimension { expected: sys.m(), got });
            }
        }
        Ok(())
    }
}

/// Observer gain law.
#[derive(Debug, Clone, PartialEq)]
pub enum Observer {
    Fixed(DMatrix<f64>),
    Scheduled {
        gains: Vec<DMatrix<f64>>,
        bounds: ParameterBounds,
    },
}

impl Observer {
    pub fn from_result(result: &SynthesisResult, bounds: &ParameterBounds) -> Self {
        match result.mode {
            GainStructure::Constant => Observer::Fixed(result.gains[0].clone()),
            GainStructure::Scheduled => Observer::Scheduled {
                gains: result.gains.clone(),
                bounds: bounds.clone(),
            },
        }
    }

    /// Observer with `L = 0`: a plant copy started from the estimate.
    pub fn open_loop(sys: &PHSystem) -> Self {
        Observer::Fixed(DMatrix::zeros(sys.state_dim(), sys.m()))
    }

    fn eval(&self, sys: &PHSystem, xhat: &StateVec, u: &DVector<f64>) -> (DMatrix<f64>, Option<(Vec<f64>, bool)>) {
        match self {
            Observer::Fixed(l) => (l.clone(), None),
            Observer::Scheduled { gains, bounds } => {
                let h = weights(sys, bounds, xhat, u);
                let mut l = DMatrix::zeros(gains[0].nrows(), gains[0].ncols());
                for (w, li) in h.h.iter().zip(gains) {
                    if *w != 0.0 {
                        l += li * *w;
                    }
                }
                (l, Some((h.h, h.clamped)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub x: StateVec,
    pub xhat: Option<StateVec>,
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    pub yhat: Option<DVector<f64>>,
    /// Applied gain `L`, stacked column-major.
    pub gain: Option<Vec<f64>>,
    /// Vertex weights (scheduled runs only).
    pub weights: Option<Vec<f64>>,
    /// Any sector variable was clamped at this sample.
    pub clamped: bool,
    /// Plant and estimate both inside the operating domain.
    pub in_domain: bool,
}

impl Sample {
    pub fn error(&self) -> Option<StateVec> {
        self.xhat.as_ref().map(|xh| self.x.sub(xh))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub scenario: String,
    /// `plant`, `open_loop`, `const` or `sched`.
    pub gain_source: String,
    pub dt_s: f64,
    pub horizon_s: f64,
    pub samples: Vec<Sample>,
}

impl Trajectory {
    pub fn has_observer(&self) -> bool {
        self.samples.first().is_some_and(|s| s.xhat.is_some())
    }

    /// Flags samples inside `dom`.
    pub fn mark_domain(&mut self, dom: &OperatingDomain) {
        for s in &mut self.samples {
            s.in_domain = dom.contains_state(&s.x) && s.xhat.as_ref().is_none_or(|xh| dom.contains_state(xh));
        }
    }

    pub fn final_error(&self) -> Option<StateVec> {
        self.samples.last().and_then(Sample::error)
    }

    /// Writes the CSV contract `t,q,p,qhat,phat,qerr,perr,y,yhat,u,L1,L2[,h1..]`
    /// with 17 significant digits. Plant-only runs carry only `t,q,p,y,u`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let Some(first) = self.samples.first() else {
            return Ok(());
        };
        let n = first.x.dim();
        let m = first.u.len();
        let indexed = |base: &str, count: usize| -> Vec<String> {
            if count == 1 {
                vec![base.to_string()]
            } else {
                (1..=count).map(|i| format!("{base}{i}")).collect()
            }
        };
        let observer = first.xhat.is_some();
        let mut header = vec!["t".to_string()];
        header.extend(indexed("q", n));
        header.extend(indexed("p", n));
        if observer {
            header.extend(indexed("qhat", n));
            header.extend(indexed("phat", n));
            header.extend(indexed("qerr", n));
            header.extend(indexed("perr", n));
        }
        header.extend(indexed("y", m));
        if observer {
            header.extend(indexed("yhat", m));
        }
        header.extend(indexed("u", m));
        let gain_len = first.gain.as_ref().map_or(0, Vec::len);
        header.extend((1..=gain_len).map(|i| format!("L{i}")));
        let weight_len = first.weights.as_ref().map_or(0, Vec::len);
        header.extend((1..=weight_len).map(|i| format!("h{i}")));
        writeln!(out, "{}", header.join(","))?;

        let mut row: Vec<f64> = Vec::with_capacity(header.len());
        for s in &self.samples {
            row.clear();
            row.push(s.t);
            row.extend(s.x.q.iter().chain(s.x.p.iter()));
            if let (Some(xh), Some(e)) = (&s.xhat, s.error()) {
                row.extend(xh.q.iter().chain(xh.p.iter()));
                row.extend(e.q.iter().chain(e.p.iter()));
            }
            row.extend(s.y.iter());
            if let Some(yh) = &s.yhat {
                row.extend(yh.iter());
            }
            row.extend(s.u.iter());
            if let Some(g) = &s.gain {
                row.extend(g.iter());
            }
            if let Some(h) = &s.weights {
                row.extend(h.iter());
            }
            let cells: Vec<String> = row.iter().map(|v| format_sig17(*v)).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Parses a trajectory CSV back into its header and numeric rows, skipping
/// `#` comment lines.
pub fn read_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>), std::num::ParseFloatError> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.is_empty());
    let header = lines
        .next()
        .map(|l| l.split(',').map(str::to_string).collect())
        .unwrap_or_default();
    let rows = lines
        .map(|l| l.split(',').map(str::parse).collect::<Result<Vec<f64>, _>>())
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}

/// Scientific notation with 17 significant digits.
pub fn format_sig17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Input sampling point inside each RK4 stage interval, kept off the grid so
/// that a discontinuity exactly at a grid point is seen consistently by all
/// stages of a step.
const INPUT_OFFSET: f64 = 1e-6;

fn stage_input(input: &InputSignal, t: f64, dt: f64, c: f64, m: usize) -> DVector<f64> {
    input.eval(t + (c * (1.0 - 2.0 * INPUT_OFFSET) + INPUT_OFFSET) * dt, m)
}

fn axpy(x: &StateVec, h: f64, k: &StateVec) -> StateVec {
    StateVec::new(&x.q + &k.q * h, &x.p + &k.p * h)
}

fn rk4_combine(x: &StateVec, dt: f64, k: [&StateVec; 4]) -> StateVec {
    let w = dt / 6.0;
    StateVec::new(
        &x.q + (&k[0].q + &k[1].q * 2.0 + &k[2].q * 2.0 + &k[3].q) * w,
        &x.p + (&k[0].p + &k[1].p * 2.0 + &k[2].p * 2.0 + &k[3].p) * w,
    )
}

fn observer_rhs(sys: &PHSystem, x: &StateVec, xhat: &StateVec, u: &DVector<f64>, gain: &DMatrix<f64>) -> StateVec {
    let mut d = sys.plant_rhs(xhat, u);
    let innovation = gain * (sys.output(x) - sys.output(xhat));
    let n = sys.n();
    for i in 0..n {
        d.q[i] += innovation[i];
        d.p[i] += innovation[n + i];
    }
    d
}

fn record(
    sys: &PHSystem,
    observer: Option<&Observer>,
    scenario: &Scenario,
    t: f64,
    x: &StateVec,
    xhat: &StateVec,
) -> Sample {
    let u = scenario.input.eval(t, sys.m());
    let y = sys.output(x);
    let (xhat, yhat, gain, weights, clamped) = match observer {
        None => (None, None, None, None, false),
        Some(obs) => {
            let (l, w) = obs.eval(sys, xhat, &u);
            let clamped = w.as_ref().is_some_and(|(_, c)| *c);
            (
                Some(xhat.clone()),
                Some(sys.output(xhat)),
                Some(l.as_slice().to_vec()),
                w.map(|(h, _)| h),
                clamped,
            )
        }
    };
    Sample {
        t,
        x: x.clone(),
        xhat,
        u,
        y,
        yhat,
        gain,
        weights,
        clamped,
        in_domain: true,
    }
}

fn source_label(observer: Option<&Observer>) -> String {
    match observer {
        None => "plant".into(),
        Some(Observer::Fixed(l)) if l.iter().all(|v| *v == 0.0) => "open_loop".into(),
        Some(Observer::Fixed(_)) => "const".into(),
        Some(Observer::Scheduled { .. }) => "sched".into(),
    }
}

/// Integrates plant and observer (or the plant alone when `observer` is
/// `None`) with classic RK4.
pub fn integrate(
    sys: &PHSystem,
    observer: Option<&Observer>,
    scenario: &Scenario,
) -> Result<Trajectory, SimulationError> {
    scenario.validate(sys)?;
    let m = sys.m();
    let dt = scenario.dt_s;
    let steps = scenario.steps();
    let mut x = scenario.x0.clone();
    let mut xhat = scenario.xhat0.clone();
    let mut samples = Vec::with_capacity(steps / scenario.sample_every + 2);
    samples.push(record(sys, observer, scenario, 0.0, &x, &xhat));

    for step in 0..steps {
        let t = step as f64 * dt;
        let u: [DVector<f64>; 3] = [
            stage_input(&scenario.input, t, dt, 0.0, m),
            stage_input(&scenario.input, t, dt, 0.5, m),
            stage_input(&scenario.input, t, dt, 1.0, m),
        ];
        match observer {
            None => {
                let k1 = sys.plant_rhs(&x, &u[0]);
                let k2 = sys.plant_rhs(&axpy(&x, 0.5 * dt, &k1), &u[1]);
                let k3 = sys.plant_rhs(&axpy(&x, 0.5 * dt, &k2), &u[1]);
                let k4 = sys.plant_rhs(&axpy(&x, dt, &k3), &u[2]);
                x = rk4_combine(&x, dt, [&k1, &k2, &k3, &k4]);
            }
            Some(obs) => {
                let held = match scenario.gain_update {
                    GainUpdate::PerStep => Some(obs.eval(sys, &xhat, &u[0]).0),
                    GainUpdate::EveryStage => None,
                };
                let stage = |x: &StateVec, xh: &StateVec, u: &DVector<f64>| {
                    let l = match &held {
                        Some(l) => l.clone(),
                        None => obs.eval(sys, xh, u).0,
                    };
                    (sys.plant_rhs(x, u), observer_rhs(sys, x, xh, u, &l))
                };
                let (k1, j1) = stage(&x, &xhat, &u[0]);
                let (k2, j2) = stage(&axpy(&x, 0.5 * dt, &k1), &axpy(&xhat, 0.5 * dt, &j1), &u[1]);
                let (k3, j3) = stage(&axpy(&x, 0.5 * dt, &k2), &axpy(&xhat, 0.5 * dt, &j2), &u[1]);
                let (k4, j4) = stage(&axpy(&x, dt, &k3), &axpy(&xhat, dt, &j3), &u[2]);
                x = rk4_combine(&x, dt, [&k1, &k2, &k3, &k4]);
                xhat = rk4_combine(&xhat, dt, [&j1, &j2, &j3, &j4]);
            }
        }
        let t_next = (step + 1) as f64 * dt;
        if !x.is_finite() || !xhat.is_finite() {
            return Err(SimulationError::NonFinite(t_next));
        }
        if (step + 1) % scenario.sample_every == 0 || step + 1 == steps {
            samples.push(record(sys, observer, scenario, t_next, &x, &xhat));
        }
    }
    Ok(Trajectory {
        scenario: scenario.name.clone(),
        gain_source: source_label(observer),
        dt_s: dt,
        horizon_s: scenario.horizon_s,
        samples,
    })
}

/// Integrates the plant together with the error equation
/// `x̃˙ = A₀x̃ + γ(x, u) − γ(x̂, u)`, `x̂ = x − x̃`, instead of the observer.
pub fn integrate_error_dynamics(
    sys: &PHSystem,
    observer: &Observer,
    scenario: &Scenario,
) -> Result<Trajectory, SimulationError> {
    scenario.validate(sys)?;
    let m = sys.m();
    let n = sys.n();
    let dt = scenario.dt_s;
    let a0 = sys.drift_matrix();
    let rhs = |x: &StateVec, e: &StateVec, u: &DVector<f64>| {
        let xhat = x.sub(e);
        let (l, _) = observer.eval(sys, &xhat, u);
        let de = &a0 * e.stacked() + sys.gamma(x, u, &l) - sys.gamma(&xhat, u, &l);
        (
            sys.plant_rhs(x, u),
            StateVec::new(de.rows(0, n).into(), de.rows(n, n).into()),
        )
    };
    let mut x = scenario.x0.clone();
    let mut e = scenario.x0.sub(&scenario.xhat0);
    let mut samples = vec![record(sys, Some(observer), scenario, 0.0, &x, &x.sub(&e))];
    let steps = scenario.steps();
    for step in 0..steps {
        let t = step as f64 * dt;
        let u0 = stage_input(&scenario.input, t, dt, 0.0, m);
        let uh = stage_input(&scenario.input, t, dt, 0.5, m);
        let u1 = stage_input(&scenario.input, t, dt, 1.0, m);
        let (k1, j1) = rhs(&x, &e, &u0);
        let (k2, j2) = rhs(&axpy(&x, 0.5 * dt, &k1), &axpy(&e, 0.5 * dt, &j1), &uh);
        let (k3, j3) = rhs(&axpy(&x, 0.5 * dt, &k2), &axpy(&e, 0.5 * dt, &j2), &uh);
        let (k4, j4) = rhs(&axpy(&x, dt, &k3), &axpy(&e, dt, &j3), &u1);
        x = rk4_combine(&x, dt, [&k1, &k2, &k3, &k4]);
        e = rk4_combine(&e, dt, [&j1, &j2, &j3, &j4]);
        let t_next = (step + 1) as f64 * dt;
        if !x.is_finite() || !e.is_finite() {
            return Err(SimulationError::NonFinite(t_next));
        }
        if (step + 1) % scenario.sample_every == 0 || step + 1 == steps {
            samples.push(record(sys, Some(observer), scenario, t_next, &x, &x.sub(&e)));
        }
    }
    Ok(Trajectory {
        scenario: scenario.name.clone(),
        gain_source: "error_dynamics".into(),
        dt_s: dt,
        horizon_s: scenario.horizon_s,
        samples,
    })
}

/// Box enclosing the simulated plant and estimate trajectories, widened by
/// `margin` times its width on each side, with `u ∈ [0, peak input]`.
///
/// Without an observer the estimate is propagated open loop (`L = 0`) from
/// `x̂₀`, so estimator transients are still covered.
pub fn open_loop_domain(
    sys: &PHSystem,
    scenario: &Scenario,
    margin: f64,
    observer: Option<&Observer>,
) -> Result<OperatingDomain, SimulationError> {
    let open = Observer::open_loop(sys);
    let traj = integrate(sys, Some(observer.unwrap_or(&open)), scenario)?;
    let n = sys.n();
    let mut q_min = vec![f64::INFINITY; n];
    let mut q_max = vec![f64::NEG_INFINITY; n];
    let mut p_min = q_min.clone();
    let mut p_max = q_max.clone();
    for s in &traj.samples {
        for x in std::iter::once(&s.x).chain(s.xhat.as_ref()) {
            for i in 0..n {
                q_min[i] = q_min[i].min(x.q[i]);
                q_max[i] = q_max[i].max(x.q[i]);
                p_min[i] = p_min[i].min(x.p[i]);
                p_max[i] = p_max[i].max(x.p[i]);
            }
        }
    }
    let widen = |lo: &mut [f64], hi: &mut [f64]| {
        for (l, h) in lo.iter_mut().zip(hi.iter_mut()) {
            let w = (*h - *l) * margin;
            *l -= w;
            *h += w;
        }
    };
    widen(&mut q_min, &mut q_max);
    widen(&mut p_min, &mut p_max);
    Ok(OperatingDomain {
        q_min,
        q_max,
        p_min,
        p_max,
        u_min: vec![0.0; sys.m()],
        u_max: scenario.input.peak(sys.m()),
    })
}

/// Instability test used by the amplitude sweep: the run blows up, or after
/// the input onset (plus a short settling window) `‖x‖` exceeds `1e3` times
/// the running median of `‖x‖` since the onset.
pub fn response_is_unstable(sys: &PHSystem, scenario: &Scenario) -> bool {
    const RATIO: f64 = 1e3;
    const WINDOW_S: f64 = 0.1;
    let traj = match integrate(sys, None, scenario) {
        Ok(t) => t,
        Err(_) => return true,
    };
    let onset = scenario.input.onset().unwrap_or(0.0);
    let mut median = RunningMedian::default();
    for s in traj.samples.iter().filter(|s| s.t >= onset) {
        let norm = s.x.norm();
        median.push(norm);
        if s.t - onset >= WINDOW_S && norm > RATIO * median.upper() {
            return true;
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ordered(f64);

impl Eq for Ordered {}

impl PartialOrd for Ordered {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ordered {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Upper median of a stream: `sorted[len / 2]`.
#[derive(Default)]
struct RunningMedian {
    low: BinaryHeap<Ordered>,
    high: BinaryHeap<Reverse<Ordered>>,
}

impl RunningMedian {
    fn push(&mut self, v: f64) {
        match self.high.peek() {
            Some(Reverse(h)) if v < h.0 => self.low.push(Ordered(v)),
            _ => self.high.push(Reverse(Ordered(v))),
        }
        // Keep high.len() == low.len() or low.len() + 1.
        if self.high.len() > self.low.len() + 1 {
            let Reverse(x) = self.high.pop().expect("non-empty");
            self.low.push(x);
        } else if self.low.len() > self.high.len() {
            let x = self.low.pop().expect("non-empty");
            self.high.push(Reverse(x));
        }
    }

    fn upper(&self) -> f64 {
        self.high.peek().map_or(f64::NAN, |Reverse(x)| x.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeSweep {
    /// Largest tested amplitude scale with a bounded response.
    pub stable: f64,
    /// Smallest tested amplitude scale declared unstable.
    pub unstable: f64,
    pub probes: usize,
}

/// Bisection on a factor `s` applied to the scenario input, within
/// `[lo, hi]`, for the largest `s` with a bounded open-loop response.
pub fn sweep_stable_amplitude(sys: &PHSystem, scenario: &Scenario, lo: f64, hi: f64, rel_tol: f64) -> AmplitudeSweep {
    let test = |s: f64| {
        let mut sc = scenario.clone();
        sc.input = scenario.input.scaled(s);
        response_is_unstable(sys, &sc)
    };
    let (mut lo, mut hi) = (lo, hi);
    let mut probes = 0;
    while hi - lo > rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        probes += 1;
        if test(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    AmplitudeSweep {
        stable: lo,
        unstable: hi,
        probes,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// `max ‖x̃(t)‖ / (κe^{−λt}‖x̃(0)‖)` over the checked samples.
    pub max_ratio: f64,
    pub samples_checked: usize,
    /// Time of the first sample outside the operating domain, if any.
    pub left_domain_at: Option<f64>,
    pub passes: bool,
}

/// Checks `‖x̃(t)‖ ≤ κe^{−λt}‖x̃(0)‖` on the samples before the trajectory
/// first leaves the operating domain.
pub fn bound_check(traj: &Trajectory, decay_rate: f64, kappa: f64) -> BoundReport {
    let e0 = traj.samples.first().and_then(Sample::error).map_or(0.0, |e| e.norm());
    let mut max_ratio: f64 = 0.0;
    let mut checked = 0;
    let mut left = None;
    for s in &traj.samples {
        if !s.in_domain {
            left = Some(s.t);
            break;
        }
        let Some(e) = s.error() else { break };
        checked += 1;
        let envelope = kappa * (-decay_rate * s.t).exp() * e0;
        let ratio = if envelope > 0.0 {
            e.norm() / envelope
        } else if e.norm() == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        max_ratio = max_ratio.max(ratio);
    }
    BoundReport {
        max_ratio,
        samples_checked: checked,
        left_domain_at: left,
        passes: max_ratio <= 1.0 + 1e-6,
    }
}
