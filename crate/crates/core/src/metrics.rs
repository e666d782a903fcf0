//! Estimation-error indicators: peaks, RMS, 2% settling time, momentum-error
//! overshoot and relative improvements.

use serde::{Deserialize, Serialize};

use crate::simulate::Trajectory;

const SETTLING_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    /// `max |q̃|` in m.
    pub peak_qerr: f64,
    /// `max |p̃|` in kg·m/s.
    pub peak_perr: f64,
    /// `max ‖x̃‖₂` with `x̃` in SI units.
    pub peak_errnorm: f64,
    /// `sqrt(mean ‖x̃‖²)` over the recorded grid.
    pub rms_errnorm: f64,
    /// `None` when the error never settles within the horizon or is zero.
    pub settling_time_s: Option<f64>,
    /// `None` when `p̃(0) = 0`.
    pub overshoot_perr_pct: Option<f64>,
    /// Bound-check ratio, filled in by the caller when available.
    pub bound_margin: Option<f64>,
    pub horizon_s: f64,
}

/// Metrics of the estimation error in `traj`, which must carry an observer.
///
/// The settling time is the earliest sample after which `‖x̃‖` stays within
/// 2% of its peak value over the run.
pub fn compute_metrics(label: impl Into<String>, traj: &Trajectory) -> Option<MetricsReport> {
    let errors: Vec<(f64, crate::model::StateVec)> = traj
        .samples
        .iter()
        .map(|s| s.error().map(|e| (s.t, e)))
        .collect::<Option<_>>()?;
    let (_, e0) = errors.first()?;
    let amax = |v: &nalgebra::DVector<f64>| v.iter().fold(0.0f64, |a, x| a.max(x.abs()));

    let mut peak_q: f64 = 0.0;
    let mut peak_p: f64 = 0.0;
    let mut peak_norm: f64 = 0.0;
    let mut sum_sq = 0.0;
    for (_, e) in &errors {
        peak_q = peak_q.max(amax(&e.q));
        peak_p = peak_p.max(amax(&e.p));
        let norm = e.norm();
        peak_norm = peak_norm.max(norm);
        sum_sq += norm * norm;
    }
    let rms = (sum_sq / errors.len() as f64).sqrt();

    let threshold = SETTLING_FRACTION * peak_norm;
    let settling_time_s = if peak_norm > 0.0 {
        let last_above = errors.iter().rposition(|(_, e)| e.norm() > threshold);
        match last_above {
            None => Some(errors[0].0),
            Some(i) if i + 1 < errors.len() => Some(errors[i + 1].0),
            Some(_) => None,
        }
    } else {
        None
    };

    let p0 = amax(&e0.p);
    let overshoot_perr_pct = (p0 > 0.0).then(|| (100.0 * (peak_p - p0) / p0).max(0.0));

    Some(MetricsReport {
        label: label.into(),
        peak_qerr: peak_q,
        peak_perr: peak_p,
        peak_errnorm: peak_norm,
        rms_errnorm: rms,
        settling_time_s,
        overshoot_perr_pct,
        bound_margin: None,
        horizon_s: traj.horizon_s,
    })
}

/// `100 (baseline − value) / baseline`; `None` for a zero baseline.
pub fn improvement_pct(baseline: f64, value: f64) -> Option<f64> {
    (baseline != 0.0).then(|| 100.0 * (baseline - value) / baseline)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub peak_qerr: Option<f64>,
    pub peak_perr: Option<f64>,
    pub peak_errnorm: Option<f64>,
    pub rms_errnorm: Option<f64>,
}

/// Improvements of every report relative to `reports[baseline]`.
pub fn compare(reports: &[MetricsReport], baseline: usize) -> Comparison {
    let base = &reports[baseline];
    Comparison {
        baseline: base.label.clone(),
        rows: reports
            .iter()
            .map(|r| ComparisonRow {
                label: r.label.clone(),
                peak_qerr: improvement_pct(base.peak_qerr, r.peak_qerr),
                peak_perr: improvement_pct(base.peak_perr, r.peak_perr),
                peak_errnorm: improvement_pct(base.peak_errnorm, r.peak_errnorm),
                rms_errnorm: improvement_pct(base.rms_errnorm, r.rms_errnorm),
            })
            .collect(),
    }
}
