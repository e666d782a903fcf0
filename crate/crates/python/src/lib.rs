//! Python bindings: plant parameters, polytopic embedding, LMI synthesis,
//! simulation and error metrics.

use nalgebra::{DMatrix, DVector};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use phobs_core::embedding::{
    compute_parameter_bounds, enumerate_vertices, weights, OperatingDomain, ParameterBounds, VertexSet,
};
use phobs_core::lmi::{GainStructure, LmiSettings};
use phobs_core::metrics::compute_metrics;
use phobs_core::model::{DeaParams, PHSystem, StateVec};
use phobs_core::simulate::{bound_check, integrate, read_csv, InputSignal, Observer, Scenario, Trajectory};
use phobs_core::synthesis::{max_decay_rate, synthesize_with, verify_result, SynthesisError, SynthesisResult};

create_exception!(
    phobs,
    InfeasibleError,
    PyException,
    "The observer LMIs have no solution at the requested decay rate."
);

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn synthesis_error(e: SynthesisError) -> PyErr {
    match e {
        SynthesisError::Infeasible { .. } | SynthesisError::Inconclusive { .. } => {
            InfeasibleError::new_err(e.to_string())
        }
        other => value_error(other),
    }
}

type Rows = Vec<Vec<f64>>;

fn rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn gain_structure(mode: &str) -> PyResult<GainStructure> {
    match mode {
        "const" => Ok(GainStructure::Constant),
        "sched" => Ok(GainStructure::Scheduled),
        other => Err(PyValueError::new_err(format!(
            "mode must be 'const' or 'sched', got {other:?}"
        ))),
    }
}

/// Dielectric elastomer actuator parameters in SI units.
#[pyclass(name = "DeaParams", frozen)]
struct PyDeaParams {
    inner: DeaParams,
}

#[pymethods]
impl PyDeaParams {
    #[new]
    #[pyo3(signature = (mass_kg=1.0, stiffness_n_per_m=1000.0, damping_ns_per_m=50.0, q0_m=1e-3, eps_f_per_m=2.8))]
    fn new(mass_kg: f64, stiffness_n_per_m: f64, damping_ns_per_m: f64, q0_m: f64, eps_f_per_m: f64) -> PyResult<Self> {
        let inner = DeaParams {
            mass_kg,
            stiffness_n_per_m,
            damping_ns_per_m,
            q0_m,
            eps_f_per_m,
        };
        inner.validate().map_err(value_error)?;
        Ok(Self { inner })
    }

    #[getter]
    fn mass_kg(&self) -> f64 {
        self.inner.mass_kg
    }

    #[getter]
    fn stiffness_n_per_m(&self) -> f64 {
        self.inner.stiffness_n_per_m
    }

    #[getter]
    fn damping_ns_per_m(&self) -> f64 {
        self.inner.damping_ns_per_m
    }

    #[getter]
    fn q0_m(&self) -> f64 {
        self.inner.q0_m
    }

    #[getter]
    fn eps_f_per_m(&self) -> f64 {
        self.inner.eps_f_per_m
    }

    /// Total energy `H = ½ xᵀQx` at `(q, p)`.
    fn hamiltonian(&self, q: f64, p: f64) -> PyResult<f64> {
        let sys = self.inner.system().map_err(value_error)?;
        Ok(sys.hamiltonian(&StateVec::scalar(q, p)))
    }

    fn __repr__(&self) -> String {
        let d = &self.inner;
        format!(
            "DeaParams(mass_kg={}, stiffness_n_per_m={}, damping_ns_per_m={}, q0_m={}, eps_f_per_m={})",
            d.mass_kg, d.stiffness_n_per_m, d.damping_ns_per_m, d.q0_m, d.eps_f_per_m
        )
    }
}

/// Box of admissible states and inputs (`u` in V²).
#[pyclass(name = "Domain", frozen)]
struct PyDomain {
    inner: OperatingDomain,
}

#[pymethods]
impl PyDomain {
    #[new]
    fn new(q_min: f64, q_max: f64, p_min: f64, p_max: f64, u_min: f64, u_max: f64) -> Self {
        Self {
            inner: OperatingDomain {
                q_min: vec![q_min],
                q_max: vec![q_max],
                p_min: vec![p_min],
                p_max: vec![p_max],
                u_min: vec![u_min],
                u_max: vec![u_max],
            },
        }
    }

    fn contains(&self, q: f64, p: f64) -> bool {
        self.inner.contains_state(&StateVec::scalar(q, p))
    }
}

/// Polytopic embedding of the estimation error over a domain.
#[pyclass(name = "Embedding", frozen)]
struct PyEmbedding {
    sys: PHSystem,
    bounds: ParameterBounds,
    set: VertexSet,
}

#[pymethods]
impl PyEmbedding {
    #[new]
    fn new(params: &PyDeaParams, domain: &PyDomain) -> PyResult<Self> {
        let sys = params.inner.system().map_err(value_error)?;
        let bounds = compute_parameter_bounds(&sys, &domain.inner).map_err(value_error)?;
        let set = enumerate_vertices(&sys, &bounds);
        Ok(Self { sys, bounds, set })
    }

    /// `(name, min, max)` for each scheduling parameter.
    fn bounds(&self) -> Vec<(String, f64, f64)> {
        self.bounds
            .params
            .iter()
            .map(|p| (p.name.clone(), p.min, p.max))
            .collect()
    }

    #[getter]
    fn vertex_count(&self) -> usize {
        self.set.len()
    }

    /// `(A_bar, C_bar)` of vertex `index` as nested lists.
    fn vertex(&self, index: usize) -> PyResult<(Rows, Rows)> {
        let v = self
            .set
            .vertices
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("vertex index {index} out of range")))?;
        Ok((rows(&v.a_bar), rows(&v.c_bar)))
    }

    /// Vertex weights at the estimate `(qhat, phat)` and input `u`.
    fn weights(&self, qhat: f64, phat: f64, u: f64) -> Vec<f64> {
        weights(
            &self.sys,
            &self.bounds,
            &StateVec::scalar(qhat, phat),
            &DVector::from_element(1, u),
        )
        .h
    }

    /// Certified observer at a fixed decay rate in 1/s.
    #[pyo3(signature = (decay_rate, mode="const", gain_bound=1e3))]
    fn synthesize(&self, decay_rate: f64, mode: &str, gain_bound: f64) -> PyResult<PyDesign> {
        let settings = LmiSettings {
            gain_bound,
            ..LmiSettings::default()
        };
        let result =
            synthesize_with(&self.set, decay_rate, gain_structure(mode)?, settings).map_err(synthesis_error)?;
        Ok(PyDesign { result, settings })
    }

    /// Largest certifiable decay rate and its design.
    #[pyo3(signature = (mode="const", tolerance=1e-3, gain_bound=1e3))]
    fn max_decay_rate(&self, mode: &str, tolerance: f64, gain_bound: f64) -> PyResult<(f64, PyDesign)> {
        let settings = LmiSettings {
            gain_bound,
            ..LmiSettings::default()
        };
        let search = max_decay_rate(&self.set, gain_structure(mode)?, tolerance, settings).map_err(value_error)?;
        let result = search
            .result
            .ok_or_else(|| InfeasibleError::new_err("no decay rate is certifiable, not even zero"))?;
        Ok((search.lambda_max, PyDesign { result, settings }))
    }

    /// Simulates a step input from `x0` with the observer started at `xhat0`.
    /// Without a design only the plant is integrated.
    #[pyo3(signature = (design=None, x0=(0.0, 0.0), xhat0=(2e-4, -2e-3), step_at_s=1.0, amplitude_v2=2.64196e7, horizon_s=2.0, dt_s=1e-5, sample_every=10))]
    #[allow(clippy::too_many_arguments)]
    fn simulate(
        &self,
        py: Python<'_>,
        design: Option<&PyDesign>,
        x0: (f64, f64),
        xhat0: (f64, f64),
        step_at_s: f64,
        amplitude_v2: f64,
        horizon_s: f64,
        dt_s: f64,
        sample_every: usize,
    ) -> PyResult<PyTrajectory> {
        let mut scenario = Scenario::new(
            "python",
            StateVec::scalar(x0.0, x0.1),
            StateVec::scalar(xhat0.0, xhat0.1),
            InputSignal::Step {
                at_s: step_at_s,
                amplitude: vec![amplitude_v2],
            },
        );
        scenario.horizon_s = horizon_s;
        scenario.dt_s = dt_s;
        scenario.sample_every = sample_every;
        let observer = design.map(|d| Observer::from_result(&d.result, &self.bounds));
        let trajectory = py
            .detach(|| integrate(&self.sys, observer.as_ref(), &scenario))
            .map_err(value_error)?;
        Ok(PyTrajectory {
            trajectory,
            certificate: design.map(|d| (d.result.decay_rate, d.result.kappa)),
        })
    }
}

/// Observer gains with their Lyapunov certificate.
#[pyclass(name = "Design", frozen)]
struct PyDesign {
    result: SynthesisResult,
    settings: LmiSettings,
}

#[pymethods]
impl PyDesign {
    #[getter]
    fn mode(&self) -> &'static str {
        self.result.mode.label()
    }

    #[getter]
    fn decay_rate(&self) -> f64 {
        self.result.decay_rate
    }

    /// Condition number of `P`: the transient overshoot factor.
    #[getter]
    fn kappa(&self) -> f64 {
        self.result.kappa
    }

    #[getter]
    fn p(&self) -> Vec<Vec<f64>> {
        rows(&self.result.p)
    }

    /// One gain for constant designs, one per vertex for scheduled ones.
    #[getter]
    fn gains(&self) -> Vec<Vec<Vec<f64>>> {
        self.result.gains.iter().map(rows).collect()
    }

    /// Re-checks the certificate with an eigenvalue test on `embedding`.
    fn verify(&self, embedding: &PyEmbedding) -> PyResult<bool> {
        let report = verify_result(&embedding.set, &self.result, self.settings).map_err(value_error)?;
        Ok(report.passes)
    }

    fn __repr__(&self) -> String {
        format!(
            "Design(mode={:?}, decay_rate={}, kappa={:.4})",
            self.mode(),
            self.result.decay_rate,
            self.result.kappa
        )
    }
}

#[pyclass(name = "Trajectory", frozen)]
struct PyTrajectory {
    trajectory: Trajectory,
    certificate: Option<(f64, f64)>,
}

#[pymethods]
impl PyTrajectory {
    /// CSV text with 17 significant digits.
    fn csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.trajectory.write_csv(&mut buf).map_err(value_error)?;
        String::from_utf8(buf).map_err(value_error)
    }

    /// Column name to list of values, in CSV column order.
    fn columns<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let (header, data) = read_csv(&self.csv()?).map_err(value_error)?;
        let dict = PyDict::new(py);
        for (i, name) in header.iter().enumerate() {
            dict.set_item(name, data.iter().map(|r| r[i]).collect::<Vec<f64>>())?;
        }
        Ok(dict)
    }

    fn __len__(&self) -> usize {
        self.trajectory.samples.len()
    }

    /// Error metrics, or `None` for a plant-only run.
    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Option<Bound<'py, PyDict>>> {
        let Some(m) = compute_metrics("python", &self.trajectory) else {
            return Ok(None);
        };
        let dict = PyDict::new(py);
        dict.set_item("peak_qerr", m.peak_qerr)?;
        dict.set_item("peak_perr", m.peak_perr)?;
        dict.set_item("peak_errnorm", m.peak_errnorm)?;
        dict.set_item("rms_errnorm", m.rms_errnorm)?;
        dict.set_item("settling_time_s", m.settling_time_s)?;
        dict.set_item("overshoot_perr_pct", m.overshoot_perr_pct)?;
        if let Some((rate, kappa)) = self.certificate {
            let b = bound_check(&self.trajectory, rate, kappa);
            dict.set_item("bound_ratio", b.max_ratio)?;
            dict.set_item("bound_holds", b.passes)?;
        }
        Ok(Some(dict))
    }
}

#[pymodule]
fn phobs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("InfeasibleError", m.py().get_type::<InfeasibleError>())?;
    m.add_class::<PyDeaParams>()?;
    m.add_class::<PyDomain>()?;
    m.add_class::<PyEmbedding>()?;
    m.add_class::<PyDesign>()?;
    m.add_class::<PyTrajectory>()?;
    Ok(())
}
