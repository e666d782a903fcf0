//! Strict LMI feasibility for observer synthesis.
//!
//! For every vertex `i` the decision variables `(P, 𝒦)` must satisfy
//!
//! ```text
//! Ā_iᵀP + PĀ_i − C̄_iᵀ𝒦ᵀ − 𝒦C̄_i + 2λP ⪯ −δI,   P ⪰ ε_P I,   tr P ≤ τ
//! ```
//!
//! with one shared `𝒦` (constant gain) or one `𝒦_i` per vertex (scheduled
//! gain, shared `P`). The problem is posed in energy coordinates
//! `z = Q^{1/2}x`, where `Q` is the vertex set's metric, and the output
//! matrices are normalized to unit Frobenius norm; `δ`, `ε_P` and `τ` refer to
//! those coordinates. Solutions are mapped back before being returned.
//!
//! The numerical search is a log-det barrier method on the phase-I problem
//! `min t s.t. S_i + δI ⪯ tI`. Its status is never trusted directly:
//! [`solve_feasibility`] re-checks every candidate with [`verify_solution`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{Vertex, VertexSet};
use crate::linalg::{all_finite, jacobi_eigen, spd_inv_sqrt, symmetrize};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmiError {
    #[error("decay rate must be finite and non-negative, got {0}")]
    InvalidDecayRate(f64),
    #[error("vertex set is empty")]
    EmptyVertexSet,
    #[error("vertex {0} contains non-finite data")]
    NonFiniteVertex(usize),
    #[error("vertex {index} has inconsistent dimensions")]
    Dimension { index: usize },
    #[error("metric of the vertex set is not positive definite")]
    BadMetric,
    #[error("expected {expected} gain matrices, got {got}")]
    GainCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainStructure {
    /// One gain shared by all vertices.
    Constant,
    /// One gain per vertex, interpolated online by the vertex weights.
    Scheduled,
}

impl GainStructure {
    pub fn label(self) -> &'static str {
        match self {
            GainStructure::Constant => "const",
            GainStructure::Scheduled => "sched",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmiSettings {
    /// `δ = margin_scale · (1 + max_i ‖Ā_i‖_F)` in solver coordinates.
    pub margin_scale: f64,
    /// `ε_P = floor_scale · τ / (2n)`.
    pub floor_scale: f64,
    /// Spectral-norm cap on every normalized gain variable, relative to `τ`.
    pub gain_bound: f64,
    /// Phase-I duality-gap target before infeasibility may be declared.
    pub gap_tol: f64,
    /// Cap on Newton steps per solve.
    pub max_newton_steps: usize,
}

impl Default for LmiSettings {
    fn default() -> Self {
        Self {
            margin_scale: 1e-6,
            floor_scale: 1e-8,
            gain_bound: 1e3,
            gap_tol: 1e-8,
            max_newton_steps: 4000,
        }
    }
}

/// One matrix inequality: vertex `vertex` paired with gain variable `gain`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmiConstraint {
    pub vertex: usize,
    pub gain: usize,
}

#[derive(Debug, Clone)]
pub struct LmiProblem {
    /// Vertices in plant coordinates.
    pub vertices: Vec<Vertex>,
    pub decay_rate: f64,
    pub structure: GainStructure,
    pub constraints: Vec<LmiConstraint>,
    pub gain_count: usize,
    pub settings: LmiSettings,
    /// `T` with `x = T z`.
    pub transform: DMatrix<f64>,
    /// Frobenius norm used to normalize the `C̄_i T`.
    pub output_scale: f64,
    /// Vertices in solver coordinates: `(T⁻¹ĀT, C̄T / output_scale)`.
    pub scaled: Vec<Vertex>,
    /// Strictness margin `δ`.
    pub margin: f64,
    /// Conditioning floor `ε_P`.
    pub p_floor: f64,
    /// Trace cap `τ`.
    pub trace_cap: f64,
}

impl LmiProblem {
    pub fn state_dim(&self) -> usize {
        self.vertices[0].a_bar.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.vertices[0].c_bar.nrows()
    }

    fn sym_dim(&self) -> usize {
        let d = self.state_dim();
        d * (d + 1) / 2
    }

    /// Number of scalar decision variables in `(P, 𝒦_1, …)`.
    pub fn variable_dim(&self) -> usize {
        self.sym_dim() + self.gain_count * self.state_dim() * self.output_dim()
    }

    /// Vertex constraints plus the `P` floor and the trace cap.
    pub fn constraint_count(&self) -> usize {
        self.constraints.len() + 2
    }

    fn inverse_transform(&self) -> DMatrix<f64> {
        self.transform.clone().try_inverse().expect("transform is invertible")
    }

    /// `(P_z, G_k) ↦ (P, 𝒦_k)` in plant coordinates.
    pub fn to_plant(
        &self,
        p_scaled: &DMatrix<f64>,
        gains_scaled: &[DMatrix<f64>],
    ) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let ti = self.inverse_transform();
        let p = symmetrize(&(ti.transpose() * p_scaled * &ti));
        let gains = gains_scaled
            .iter()
            .map(|g| ti.transpose() * g / self.output_scale)
            .collect();
        (p, gains)
    }

    /// `(P, 𝒦_k) ↦ (P_z, G_k)` in solver coordinates.
    pub fn to_scaled(&self, p: &DMatrix<f64>, gains: &[DMatrix<f64>]) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let t = &self.transform;
        let pz = symmetrize(&(t.transpose() * p * t));
        let gz = gains.iter().map(|k| t.transpose() * k * self.output_scale).collect();
        (pz, gz)
    }
}

fn residual(a: &DMatrix<f64>, c: &DMatrix<f64>, p: &DMatrix<f64>, k: &DMatrix<f64>, rate: f64) -> DMatrix<f64> {
    let s = a.transpose() * p + p * a - c.transpose() * k.transpose() - k * c + p * (2.0 * rate);
    symmetrize(&s)
}

fn build_problem(
    set: &VertexSet,
    decay_rate: f64,
    structure: GainStructure,
    settings: LmiSettings,
) -> Result<LmiProblem, LmiError> {
    if !(decay_rate.is_finite() && decay_rate >= 0.0) {
        return Err(LmiError::InvalidDecayRate(decay_rate));
    }
    if set.is_empty() {
        return Err(LmiError::EmptyVertexSet);
    }
    let d = set.state_dim();
    let m = set.output_dim();
    for (i, v) in set.vertices.iter().enumerate() {
        if v.a_bar.shape() != (d, d) || v.c_bar.shape() != (m, d) {
            return Err(LmiError::Dimension { index: i });
        }
        if !all_finite(&v.a_bar) || !all_finite(&v.c_bar) {
            return Err(LmiError::NonFiniteVertex(i));
        }
    }
    let transform = spd_inv_sqrt(&set.metric).ok_or(LmiError::BadMetric)?;
    let ti = transform.clone().try_inverse().ok_or(LmiError::BadMetric)?;
    let output_scale = set
        .vertices
        .iter()
        .map(|v| (&v.c_bar * &transform).norm())
        .fold(0.0, f64::max);
    let output_scale = if output_scale > 0.0 { output_scale } else { 1.0 };
    let scaled: Vec<Vertex> = set
        .vertices
        .iter()
        .map(|v| Vertex {
            a_bar: &ti * &v.a_bar * &transform,
            c_bar: &v.c_bar * &transform / output_scale,
        })
        .collect();
    let max_norm = scaled.iter().map(|v| v.a_bar.norm()).fold(0.0, f64::max);
    let trace_cap = d as f64;
    let (gain_count, constraints) = match structure {
        GainStructure::Constant => (
            1,
            (0..set.len()).map(|i| LmiConstraint { vertex: i, gain: 0 }).collect(),
        ),
        GainStructure::Scheduled => (
            set.len(),
            (0..set.len()).map(|i| LmiConstraint { vertex: i, gain: i }).collect(),
        ),
    };
    Ok(LmiProblem {
        vertices: set.vertices.clone(),
        decay_rate,
        structure,
        constraints,
        gain_count,
        settings,
        transform,
        output_scale,
        scaled,
        margin: settings.margin_scale * (1.0 + max_norm),
        p_floor: settings.floor_scale * trace_cap / d as f64,
        trace_cap,
    })
}

pub fn build_constant_problem(set: &VertexSet, decay_rate: f64, settings: LmiSettings) -> Result<LmiProblem, LmiError> {
    build_problem(set, decay_rate, GainStructure::Constant, settings)
}

pub fn build_scheduled_problem(
    set: &VertexSet,
    decay_rate: f64,
    settings: LmiSettings,
) -> Result<LmiProblem, LmiError> {
    build_problem(set, decay_rate, GainStructure::Scheduled, settings)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeasibilityStatus {
    Feasible,
    Infeasible,
    Inconclusive,
}

/// Solver-independent check of a candidate `(P, 𝒦)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// `λ_max(S_i)` per constraint, plant coordinates.
    pub residual_max_eigs: Vec<f64>,
    /// `max_i λ_max(S_i)` in solver coordinates, comparable with `δ`.
    pub scaled_worst_residual: f64,
    pub p_min_eig: f64,
    pub p_max_eig: f64,
    pub passes: bool,
    pub message: String,
}

impl VerificationReport {
    pub fn worst_residual(&self) -> f64 {
        self.residual_max_eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Checks `S_i ≺ 0` for every constraint and `P ≻ 0` using only the Jacobi
/// eigensolver.
pub fn verify_solution(
    prob: &LmiProblem,
    p: &DMatrix<f64>,
    gains: &[DMatrix<f64>],
) -> Result<VerificationReport, LmiError> {
    if gains.len() != prob.gain_count {
        return Err(LmiError::GainCount {
            expected: prob.gain_count,
            got: gains.len(),
        });
    }
    let finite = all_finite(p) && gains.iter().all(all_finite);
    let p_eig = jacobi_eigen(p);
    let residual_max_eigs: Vec<f64> = prob
        .constraints
        .iter()
        .map(|c| {
            let v = &prob.vertices[c.vertex];
            jacobi_eigen(&residual(&v.a_bar, &v.c_bar, p, &gains[c.gain], prob.decay_rate)).max()
        })
        .collect();
    let (pz, gz) = prob.to_scaled(p, gains);
    let scaled_worst_residual = prob
        .constraints
        .iter()
        .map(|c| {
            let v = &prob.scaled[c.vertex];
            jacobi_eigen(&residual(&v.a_bar, &v.c_bar, &pz, &gz[c.gain], prob.decay_rate)).max()
        })
        .fold(f64::NEG_INFINITY, f64::max);

    let worst = residual_max_eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (passes, message) = if !finite {
        (false, "candidate contains non-finite entries".to_string())
    } else if !(p_eig.min() > 0.0) {
        (
            false,
            format!("P not positive definite (min eigenvalue {:.3e})", p_eig.min()),
        )
    } else if !(worst < 0.0) {
        let idx = residual_max_eigs.iter().position(|v| !(*v < 0.0)).unwrap_or_default();
        (
            false,
            format!(
                "LMI residual not negative definite at vertex {} (max eigenvalue {:.3e})",
                prob.constraints[idx].vertex, residual_max_eigs[idx]
            ),
        )
    } else {
        (true, "ok".to_string())
    };
    Ok(VerificationReport {
        residual_max_eigs,
        scaled_worst_residual,
        p_min_eig: p_eig.min(),
        p_max_eig: p_eig.max(),
        passes,
        message,
    })
}

/// Raw output of a numerical backend, in solver coordinates.
#[derive(Debug, Clone)]
pub struct BackendOutcome {
    pub status: FeasibilityStatus,
    pub p_scaled: DMatrix<f64>,
    pub gains_scaled: Vec<DMatrix<f64>>,
    /// Phase-I objective at the returned point.
    pub phase1_value: f64,
    /// Certified lower bound on the phase-I optimum (`-∞` when unknown).
    pub lower_bound: f64,
    pub iterations: usize,
}

/// Pluggable numerical backend for [`solve_feasibility_with`].
pub trait LmiBackend {
    fn solve(&self, prob: &LmiProblem) -> BackendOutcome;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeasibilityResult {
    pub status: FeasibilityStatus,
    /// Plant-coordinate Lyapunov matrix.
    pub p: DMatrix<f64>,
    /// Plant-coordinate `𝒦_k`.
    pub gains: Vec<DMatrix<f64>>,
    pub worst_residual: f64,
    pub verification: VerificationReport,
    pub phase1_value: f64,
    pub phase1_lower_bound: f64,
    pub iterations: usize,
}

pub fn solve_feasibility(prob: &LmiProblem) -> FeasibilityResult {
    solve_feasibility_with(prob, &BarrierSolver::default())
}

pub fn solve_feasibility_with(prob: &LmiProblem, backend: &dyn LmiBackend) -> FeasibilityResult {
    let out = backend.solve(prob);
    let (p, gains) = prob.to_plant(&out.p_scaled, &out.gains_scaled);
    let verification = verify_solution(prob, &p, &gains).expect("backend returns one gain per variable");
    let status = match out.status {
        FeasibilityStatus::Feasible if verification.passes => FeasibilityStatus::Feasible,
        FeasibilityStatus::Feasible => FeasibilityStatus::Inconclusive,
        FeasibilityStatus::Infeasible if out.lower_bound > 0.0 => FeasibilityStatus::Infeasible,
        _ => FeasibilityStatus::Inconclusive,
    };
    FeasibilityResult {
        status,
        worst_residual: verification.worst_residual(),
        p,
        gains,
        verification,
        phase1_value: out.phase1_value,
        phase1_lower_bound: out.lower_bound,
        iterations: out.iterations,
    }
}

/// Affine symmetric matrix function `F(x) = F₀ + Σ x_k F_k`, required `≻ 0`.
#[derive(Debug, Clone)]
struct AffineBlock {
    constant: DMatrix<f64>,
    terms: Vec<(usize, DMatrix<f64>)>,
}

impl AffineBlock {
    fn dim(&self) -> usize {
        self.constant.nrows()
    }

    fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut f = self.constant.clone();
        for (k, fk) in &self.terms {
            if x[*k] != 0.0 {
                f += fk * x[*k];
            }
        }
        f
    }
}

fn sym_basis(d: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in i..d {
            let mut e = DMatrix::zeros(d, d);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            out.push(e);
        }
    }
    out
}

struct Layout {
    d: usize,
    m: usize,
    sym: usize,
    gains: usize,
}

impl Layout {
    fn gain_var(&self, k: usize, r: usize, c: usize) -> usize {
        self.sym + k * self.d * self.m + c * self.d + r
    }

    fn t_var(&self) -> usize {
        self.sym + self.gains * self.d * self.m
    }

    fn len(&self) -> usize {
        self.t_var() + 1
    }

    fn unpack(&self, x: &[f64]) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let mut p = DMatrix::zeros(self.d, self.d);
        let mut idx = 0;
        for i in 0..self.d {
            for j in i..self.d {
                p[(i, j)] = x[idx];
                p[(j, i)] = x[idx];
                idx += 1;
            }
        }
        let gains = (0..self.gains)
            .map(|k| DMatrix::from_fn(self.d, self.m, |r, c| x[self.gain_var(k, r, c)]))
            .collect();
        (p, gains)
    }
}

fn phase1_blocks(prob: &LmiProblem, layout: &Layout) -> Vec<AffineBlock> {
    let (d, m) = (layout.d, layout.m);
    let basis = sym_basis(d);
    let eye = DMatrix::<f64>::identity(d, d);
    let rate = prob.decay_rate;
    let mut blocks = Vec::new();

    // tI − δI − S_i(P, G) ⪰ 0
    for c in &prob.constraints {
        let v = &prob.scaled[c.vertex];
        let mut terms = Vec::new();
        for (k, e) in basis.iter().enumerate() {
            let s = v.a_bar.transpose() * e + e * &v.a_bar + e * (2.0 * rate);
            terms.push((k, -symmetrize(&s)));
        }
        for r in 0..d {
            for col in 0..m {
                let mut unit = DMatrix::zeros(d, m);
                unit[(r, col)] = 1.0;
                let s = v.c_bar.transpose() * unit.transpose() + &unit * &v.c_bar;
                terms.push((layout.gain_var(c.gain, r, col), symmetrize(&s)));
            }
        }
        terms.push((layout.t_var(), eye.clone()));
        blocks.push(AffineBlock {
            constant: &eye * -prob.margin,
            terms,
        });
    }

    // P − ε_P I ⪰ 0
    blocks.push(AffineBlock {
        constant: &eye * -prob.p_floor,
        terms: basis.iter().cloned().enumerate().collect(),
    });

    // τ − tr P ≥ 0
    let mut trace_terms = Vec::new();
    let mut idx = 0;
    for i in 0..d {
        for j in i..d {
            if i == j {
                trace_terms.push((idx, DMatrix::from_element(1, 1, -1.0)));
            }
            idx += 1;
        }
    }
    blocks.push(AffineBlock {
        constant: DMatrix::from_element(1, 1, prob.trace_cap),
        terms: trace_terms,
    });

    // [[ρI, G], [Gᵀ, ρI]] ⪰ 0
    let rho = prob.settings.gain_bound * prob.trace_cap;
    for k in 0..prob.gain_count {
        let size = d + m;
        let mut terms = Vec::new();
        for r in 0..d {
            for col in 0..m {
                let mut e = DMatrix::zeros(size, size);
                e[(r, d + col)] = 1.0;
                e[(d + col, r)] = 1.0;
                terms.push((layout.gain_var(k, r, col), e));
            }
        }
        blocks.push(AffineBlock {
            constant: DMatrix::identity(size, size) * rho,
            terms,
        });
    }
    blocks
}

/// Log-det barrier path-following method for the phase-I problem.
#[derive(Debug, Clone, Copy)]
pub struct BarrierSolver {
    /// Barrier-weight growth factor between centering phases.
    pub growth: f64,
    /// Newton-decrement threshold `λ²/2` for a centered iterate.
    pub centering_tol: f64,
}

impl Default for BarrierSolver {
    fn default() -> Self {
        Self {
            growth: 8.0,
            centering_tol: 1e-10,
        }
    }
}

struct BarrierEval {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

/// `−Σ log det F_b(x)`, or `None` outside the domain.
fn barrier_value(blocks: &[AffineBlock], x: &[f64]) -> Option<f64> {
    let mut v = 0.0;
    for b in blocks {
        let chol = b.eval(x).cholesky()?;
        let l = chol.l_dirty();
        for i in 0..b.dim() {
            let di = l[(i, i)];
            if !(di > 0.0) || !di.is_finite() {
                return None;
            }
            v -= 2.0 * di.ln();
        }
    }
    Some(v)
}

fn barrier_derivatives(blocks: &[AffineBlock], x: &[f64], nvar: usize) -> Option<BarrierEval> {
    let mut value = 0.0;
    let mut grad = DVector::zeros(nvar);
    let mut hess = DMatrix::zeros(nvar, nvar);
    for b in blocks {
        let chol = b.eval(x).cholesky()?;
        let l = chol.l_dirty();
        for i in 0..b.dim() {
            value -= 2.0 * l[(i, i)].ln();
        }
        let w = chol.inverse();
        let wf: Vec<(usize, DMatrix<f64>)> = b.terms.iter().map(|(k, fk)| (*k, &w * fk)).collect();
        for (a, (ka, ga)) in wf.iter().enumerate() {
            grad[*ka] -= ga.trace();
            for (kb, gb) in wf.iter().skip(a) {
                // tr(W F_a W F_b)
                let h = ga.component_mul(&gb.transpose()).sum();
                hess[(*ka, *kb)] += h;
                if ka != kb {
                    hess[(*kb, *ka)] += h;
                }
            }
        }
    }
    Some(BarrierEval { value, grad, hess })
}

fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = hess.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut reg = 0.0;
    for _ in 0..8 {
        let mut h = hess.clone();
        if reg > 0.0 {
            for i in 0..h.nrows() {
                h[(i, i)] += reg * scale;
            }
        }
        if let Some(ch) = h.cholesky() {
            let dx = -ch.solve(grad);
            if dx.iter().all(|v| v.is_finite()) {
                return Some(dx);
            }
        }
        reg = if reg == 0.0 { 1e-14 } else { reg * 100.0 };
    }
    None
}

impl LmiBackend for BarrierSolver {
    fn solve(&self, prob: &LmiProblem) -> BackendOutcome {
        let layout = Layout {
            d: prob.state_dim(),
            m: prob.output_dim(),
            sym: prob.sym_dim(),
            gains: prob.gain_count,
        };
        let blocks = phase1_blocks(prob, &layout);
        let nvar = layout.len();
        let tv = layout.t_var();

        // Start: P = τ/(2d)·I, G = 0, t above the largest residual eigenvalue.
        let mut x = vec![0.0; nvar];
        let p0 = prob.trace_cap / (2.0 * layout.d as f64);
        let mut idx = 0;
        for i in 0..layout.d {
            for j in i..layout.d {
                if i == j {
                    x[idx] = p0;
                }
                idx += 1;
            }
        }
        let (p_start, _) = layout.unpack(&x);
        let zero_gain = DMatrix::zeros(layout.d, layout.m);
        let worst = prob
            .constraints
            .iter()
            .map(|c| {
                let v = &prob.scaled[c.vertex];
                jacobi_eigen(&residual(&v.a_bar, &v.c_bar, &p_start, &zero_gain, prob.decay_rate)).max()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        let slack0 = worst.abs().max(1.0);
        x[tv] = worst + prob.margin + slack0;

        let nu: f64 = blocks.iter().map(|b| b.dim() as f64).sum();
        let nu_t: f64 = blocks
            .iter()
            .filter(|b| b.terms.iter().any(|(k, _)| *k == tv))
            .map(|b| b.dim() as f64)
            .sum();
        let mut mu = nu_t / slack0;
        let mut iterations = 0;
        let mut lower_bound = f64::NEG_INFINITY;

        let finish = |x: &[f64], status, lower_bound, iterations| {
            let (p, g) = layout.unpack(x);
            BackendOutcome {
                status,
                p_scaled: p,
                gains_scaled: g,
                phase1_value: x[tv],
                lower_bound,
                iterations,
            }
        };

        if x[tv] < 0.0 {
            return finish(&x, FeasibilityStatus::Feasible, lower_bound, 0);
        }

        loop {
            // Centering: minimize mu·t + φ(x).
            let mut centered = false;
            while iterations < prob.settings.max_newton_steps {
                let Some(ev) = barrier_derivatives(&blocks, &x, nvar) else {
                    return finish(&x, FeasibilityStatus::Inconclusive, lower_bound, iterations);
                };
                let mut grad = ev.grad.clone();
                grad[tv] += mu;
                let Some(dx) = newton_direction(&ev.hess, &grad) else {
                    return finish(&x, FeasibilityStatus::Inconclusive, lower_bound, iterations);
                };
                let slope = grad.dot(&dx);
                let decrement = -slope;
                if decrement / 2.0 <= self.centering_tol {
                    centered = true;
                    break;
                }
                iterations += 1;
                let f0 = mu * x[tv] + ev.value;
                let mut step = 1.0;
                let mut accepted = false;
                for _ in 0..60 {
                    let trial: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, b)| a + step * b).collect();
                    if let Some(phi) = barrier_value(&blocks, &trial) {
                        if mu * trial[tv] + phi <= f0 + 0.01 * step * slope {
                            x = trial;
                            accepted = true;
                            break;
                        }
                    }
                    step *= 0.5;
                }
                if x[tv] < 0.0 {
                    return finish(&x, FeasibilityStatus::Feasible, lower_bound, iterations);
                }
                if !accepted {
                    // Line search stalled: treat the iterate as centered to
                    // the attainable precision.
                    centered = decrement < 1e-6;
                    break;
                }
            }
            if !centered {
                return finish(&x, FeasibilityStatus::Inconclusive, lower_bound, iterations);
            }
            let gap = nu / mu;
            lower_bound = lower_bound.max(x[tv] - gap);
            // A centered iterate bounds the phase-I optimum from below, so a
            // positive bound already proves infeasibility.
            if lower_bound > 0.0 {
                return finish(&x, FeasibilityStatus::Infeasible, lower_bound, iterations);
            }
            if gap <= prob.settings.gap_tol {
                let status = if lower_bound > 0.0 {
                    FeasibilityStatus::Infeasible
                } else {
                    FeasibilityStatus::Inconclusive
                };
                return finish(&x, status, lower_bound, iterations);
            }
            mu *= self.growth;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(a: DMatrix<f64>, c: DMatrix<f64>) -> VertexSet {
        VertexSet::from_vertices(vec![Vertex { a_bar: a, c_bar: c }])
    }

    #[test]
    fn stable_toy_is_feasible_without_gain() {
        let set = toy(-DMatrix::identity(2, 2), DMatrix::zeros(1, 2));
        let prob = build_constant_problem(&set, 0.0, LmiSettings::default()).unwrap();
        let r = solve_feasibility(&prob);
        assert_eq!(r.status, FeasibilityStatus::Feasible);
        assert!(r.verification.passes);
        assert!(r.gains[0].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unstable_toy_without_output_is_infeasible() {
        // S = 2P + 2λP can never be negative definite.
        let set = toy(DMatrix::identity(2, 2), DMatrix::zeros(1, 2));
        let prob = build_constant_problem(&set, 0.0, LmiSettings::default()).unwrap();
        let r = solve_feasibility(&prob);
        assert_eq!(r.status, FeasibilityStatus::Infeasible);
        assert!(r.phase1_lower_bound > 0.0);
    }

    #[test]
    fn verify_identity_certificate() {
        let set = toy(-DMatrix::identity(2, 2), DMatrix::zeros(1, 2));
        let prob = build_constant_problem(&set, 0.0, LmiSettings::default()).unwrap();
        let rep = verify_solution(&prob, &DMatrix::identity(2, 2), &[DMatrix::zeros(2, 1)]).unwrap();
        assert!(rep.passes);
        assert_eq!(rep.residual_max_eigs, vec![-2.0]);
    }

    #[test]
    fn singular_p_is_rejected() {
        let set = toy(-DMatrix::identity(2, 2), DMatrix::zeros(1, 2));
        let prob = build_constant_problem(&set, 0.0, LmiSettings::default()).unwrap();
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let rep = verify_solution(&prob, &p, &[DMatrix::zeros(2, 1)]).unwrap();
        assert!(!rep.passes);
        assert!(rep.message.starts_with("P not positive definite"), "{}", rep.message);
    }

    #[test]
    fn bad_inputs_are_reported() {
        let set = toy(-DMatrix::identity(2, 2), DMatrix::zeros(1, 2));
        assert_eq!(
            build_constant_problem(&set, -1.0, LmiSettings::default()).unwrap_err(),
            LmiError::InvalidDecayRate(-1.0)
        );
        let mut nan = -DMatrix::identity(2, 2);
        nan[(0, 1)] = f64::NAN;
        let bad = toy(nan, DMatrix::zeros(1, 2));
        assert_eq!(
            build_constant_problem(&bad, 0.0, LmiSettings::default()).unwrap_err(),
            LmiError::NonFiniteVertex(0)
        );
        let prob = build_constant_problem(&set, 0.0, LmiSettings::default()).unwrap();
        assert!(matches!(
            verify_solution(&prob, &DMatrix::identity(2, 2), &[]),
            Err(LmiError::GainCount { .. })
        ));
    }

    #[test]
    fn output_injection_stabilizes_an_observable_pair() {
        // ẋ = [[0,1],[1,0]]x is unstable; y = x₁ makes it detectable.
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let prob = build_constant_problem(&toy(a.clone(), c.clone()), 0.5, LmiSettings::default()).unwrap();
        let r = solve_feasibility(&prob);
        assert_eq!(r.status, FeasibilityStatus::Feasible);
        let l = r.p.clone().cholesky().unwrap().solve(&r.gains[0]);
        assert!(crate::linalg::spectral_abscissa(&(&a - &l * &c)) <= -0.5 + 1e-6);
    }

    #[test]
    fn variable_counts() {
        let v = Vertex {
            a_bar: -DMatrix::identity(2, 2),
            c_bar: DMatrix::zeros(1, 2),
        };
        let set = VertexSet::from_vertices(vec![v; 16]);
        let c = build_constant_problem(&set, 0.1, LmiSettings::default()).unwrap();
        let s = build_scheduled_problem(&set, 0.1, LmiSettings::default()).unwrap();
        assert_eq!((c.variable_dim(), c.constraint_count()), (5, 18));
        assert_eq!(s.variable_dim(), 35);
        assert_eq!(s.gain_count, 16);
    }
}
