//! Observer gains from LMI certificates, the largest certifiable decay rate
//! and the gain-scheduled interpolant.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{VertexSet, WeightVector};
use crate::linalg::jacobi_eigen;
use crate::lmi::{
    build_constant_problem, build_scheduled_problem, solve_feasibility, verify_solution, FeasibilityResult,
    FeasibilityStatus, GainStructure, LmiError, LmiProblem, LmiSettings, VerificationReport,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error(transparent)]
    Lmi(#[from] LmiError),
    #[error("LMI infeasible at decay rate {decay_rate} (phase-I lower bound {lower_bound:.3e})")]
    Infeasible { decay_rate: f64, lower_bound: f64 },
    #[error("LMI solve inconclusive at decay rate {decay_rate}: {message}")]
    Inconclusive { decay_rate: f64, message: String },
    #[error("certified P is not positive definite")]
    SingularLyapunov,
    #[error("expected {expected} weights, got {got}")]
    WeightLength { expected: usize, got: usize },
}

impl SynthesisError {
    pub fn is_infeasible(&self) -> bool {
        matches!(self, SynthesisError::Infeasible { .. })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub mode: GainStructure,
    pub p: DMatrix<f64>,
    /// Observer gains `L_i = P⁻¹𝒦_i` (one for constant mode).
    pub gains: Vec<DMatrix<f64>>,
    /// The LMI multipliers `𝒦_i`.
    pub multipliers: Vec<DMatrix<f64>>,
    pub decay_rate: f64,
    pub kappa: f64,
    /// `λ_max(S_i)` per vertex constraint.
    pub residuals: Vec<f64>,
    pub p_min_eig: f64,
    pub iterations: usize,
}

impl SynthesisResult {
    /// Gain for the current weights: the single gain in constant mode, the
    /// interpolant in scheduled mode.
    pub fn gain(&self, h: Option<&WeightVector>) -> Result<DMatrix<f64>, SynthesisError> {
        match (self.mode, h) {
            (GainStructure::Scheduled, Some(h)) => scheduled_gain(self, h),
            _ => Ok(self.gains[0].clone()),
        }
    }

    /// Copy of this result with every vertex gain replaced by `gain`.
    pub fn with_uniform_gain(&self, gain: &DMatrix<f64>) -> SynthesisResult {
        let mut out = self.clone();
        out.gains = vec![gain.clone(); self.gains.len()];
        out.multipliers = vec![&self.p * gain; self.gains.len()];
        out
    }
}

pub fn condition_number(p: &DMatrix<f64>) -> f64 {
    let e = jacobi_eigen(p);
    (e.max() / e.min()).sqrt()
}

pub fn build_problem(
    set: &VertexSet,
    decay_rate: f64,
    mode: GainStructure,
    settings: LmiSettings,
) -> Result<LmiProblem, LmiError> {
    match mode {
        GainStructure::Constant => build_constant_problem(set, decay_rate, settings),
        GainStructure::Scheduled => build_scheduled_problem(set, decay_rate, settings),
    }
}

fn recover(prob: &LmiProblem, res: &FeasibilityResult) -> Result<SynthesisResult, SynthesisError> {
    let chol = res.p.clone().cholesky().ok_or(SynthesisError::SingularLyapunov)?;
    let gains = res.gains.iter().map(|k| chol.solve(k)).collect();
    Ok(SynthesisResult {
        mode: prob.structure,
        p: res.p.clone(),
        gains,
        multipliers: res.gains.clone(),
        decay_rate: prob.decay_rate,
        kappa: condition_number(&res.p),
        residuals: res.verification.residual_max_eigs.clone(),
        p_min_eig: res.verification.p_min_eig,
        iterations: res.iterations,
    })
}

pub fn synthesize_with(
    set: &VertexSet,
    decay_rate: f64,
    mode: GainStructure,
    settings: LmiSettings,
) -> Result<SynthesisResult, SynthesisError> {
    let prob = build_problem(set, decay_rate, mode, settings)?;
    let res = solve_feasibility(&prob);
    match res.status {
        FeasibilityStatus::Feasible => recover(&prob, &res),
        FeasibilityStatus::Infeasible => Err(SynthesisError::Infeasible {
            decay_rate,
            lower_bound: res.phase1_lower_bound,
        }),
        FeasibilityStatus::Inconclusive => Err(SynthesisError::Inconclusive {
            decay_rate,
            message: format!(
                "phase-I value {:.3e}, lower bound {:.3e}; {}",
                res.phase1_value, res.phase1_lower_bound, res.verification.message
            ),
        }),
    }
}

pub fn synthesize(set: &VertexSet, decay_rate: f64, mode: GainStructure) -> Result<SynthesisResult, SynthesisError> {
    synthesize_with(set, decay_rate, mode, LmiSettings::default())
}

/// Re-verifies a stored result against a vertex set at its own decay rate.
pub fn verify_result(
    set: &VertexSet,
    result: &SynthesisResult,
    settings: LmiSettings,
) -> Result<VerificationReport, LmiError> {
    let prob = build_problem(set, result.decay_rate, result.mode, settings)?;
    verify_solution(&prob, &result.p, &result.multipliers)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayProbe {
    pub decay_rate: f64,
    pub status: FeasibilityStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayRateSearch {
    pub mode: GainStructure,
    /// Largest probe that verified feasible (0 when none did).
    pub lambda_max: f64,
    /// Certified design at `lambda_max`.
    pub result: Option<SynthesisResult>,
    pub feasible_at_zero: bool,
    /// The doubling phase hit its cap without finding an infeasible probe.
    pub capped: bool,
    /// Final bracket: feasible at `.0`, not certified at `.1`.
    pub bracket: (f64, f64),
    pub probes: Vec<DecayProbe>,
    pub inconclusive_probes: usize,
}

const DOUBLING_CAP: f64 = 1024.0;

/// Bisection for the largest certifiable decay rate.
///
/// The upper end is found by doubling from 1; inconclusive probes count as
/// infeasible.
pub fn max_decay_rate(
    set: &VertexSet,
    mode: GainStructure,
    tol: f64,
    settings: LmiSettings,
) -> Result<DecayRateSearch, LmiError> {
    let mut probes = Vec::new();
    let mut inconclusive = 0;
    let mut probe = |rate: f64| -> Result<Option<SynthesisResult>, LmiError> {
        match synthesize_with(set, rate, mode, settings) {
            Ok(r) => {
                probes.push(DecayProbe {
                    decay_rate: rate,
                    status: FeasibilityStatus::Feasible,
                });
                Ok(Some(r))
            }
            Err(SynthesisError::Lmi(e)) => Err(e),
            Err(e) => {
                let status = if e.is_infeasible() {
                    FeasibilityStatus::Infeasible
                } else {
                    inconclusive += 1;
                    FeasibilityStatus::Inconclusive
                };
                probes.push(DecayProbe {
                    decay_rate: rate,
                    status,
                });
                Ok(None)
            }
        }
    };

    let Some(at_zero) = probe(0.0)? else {
        return Ok(DecayRateSearch {
            mode,
            lambda_max: 0.0,
            result: None,
            feasible_at_zero: false,
            capped: false,
            bracket: (0.0, 0.0),
            probes,
            inconclusive_probes: inconclusive,
        });
    };

    let mut best = at_zero;
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut capped = false;
    while let Some(r) = probe(hi)? {
        best = r;
        lo = hi;
        if hi >= DOUBLING_CAP {
            capped = true;
            break;
        }
        hi *= 2.0;
    }
    if !capped {
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            match probe(mid)? {
                Some(r) => {
                    best = r;
                    lo = mid;
                }
                None => hi = mid,
            }
        }
    }
    Ok(DecayRateSearch {
        mode,
        lambda_max: lo,
        result: Some(best),
        feasible_at_zero: true,
        capped,
        bracket: (lo, hi),
        probes,
        inconclusive_probes: inconclusive,
    })
}

/// `Σ h_i L_i`.
pub fn scheduled_gain(result: &SynthesisResult, h: &WeightVector) -> Result<DMatrix<f64>, SynthesisError> {
    if h.len() != result.gains.len() {
        return Err(SynthesisError::WeightLength {
            expected: result.gains.len(),
            got: h.len(),
        });
    }
    let mut out = DMatrix::zeros(result.gains[0].nrows(), result.gains[0].ncols());
    for (w, l) in h.h.iter().zip(&result.gains) {
        if *w != 0.0 {
            out += l * *w;
        }
    }
    Ok(out)
}
