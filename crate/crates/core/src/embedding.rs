//! Polytopic LPV embedding of the observer error dynamics.
//!
//! The averaged Jacobian of the nonlinear term is affine in a finite list of
//! bounded scheduling parameters (entries of the column Jacobians `a⁽ʲ⁾`, the
//! inputs `u_j`, the entries of `β` and of `g₂`). Each parameter is written as
//! a convex combination of its bounds, which yields `2^{n_k}` vertex systems
//! `(Ā_i, C̄_i)` and product weights `h_i`.
//!
//! Corner ordering is binary counting: parameter `j` (in the order of
//! [`ParameterBounds::params`]) is bit `j` of the vertex index, least
//! significant first; a cleared bit selects the lower bound.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, PHSystem, StateVec};
use crate::quadrature::{adaptive_integrate, GaussLegendre};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("operating domain field {field} has length {got}, expected {expected}")]
    Dimension {
        field: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("operating domain has {field} min {min} > max {max}")]
    InvertedInterval { field: &'static str, min: f64, max: f64 },
    #[error("operating domain contains a non-finite value")]
    NonFinite,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0} scheduling parameters would need 2^{0} vertices")]
    TooManyParameters(usize),
}

/// Compact box on which plant and observer states and the input evolve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingDomain {
    pub q_min: Vec<f64>,
    pub q_max: Vec<f64>,
    pub p_min: Vec<f64>,
    pub p_max: Vec<f64>,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
}

impl OperatingDomain {
    pub fn validate(&self, n: usize, m: usize) -> Result<(), EmbeddingError> {
        let fields: [(&'static str, &Vec<f64>, &Vec<f64>, usize); 3] = [
            ("q", &self.q_min, &self.q_max, n),
            ("p", &self.p_min, &self.p_max, n),
            ("u", &self.u_min, &self.u_max, m),
        ];
        for (field, lo, hi, expected) in fields {
            for got in [lo.len(), hi.len()] {
                if got != expected {
                    return Err(EmbeddingError::Dimension { field, expected, got });
                }
            }
            for (&a, &b) in lo.iter().zip(hi.iter()) {
                if !a.is_finite() || !b.is_finite() {
                    return Err(EmbeddingError::NonFinite);
                }
                if a > b {
                    return Err(EmbeddingError::InvertedInterval { field, min: a, max: b });
                }
            }
        }
        Ok(())
    }

    pub fn contains_state(&self, x: &StateVec) -> bool {
        let inside = |v: &DVector<f64>, lo: &[f64], hi: &[f64]| {
            v.iter().zip(lo.iter().zip(hi)).all(|(x, (l, h))| *l <= *x && *x <= *h)
        };
        inside(&x.q, &self.q_min, &self.q_max) && inside(&x.p, &self.p_min, &self.p_max)
    }

    pub fn contains_input(&self, u: &DVector<f64>) -> bool {
        u.iter()
            .zip(self.u_min.iter().zip(&self.u_max))
            .all(|(x, (l, h))| *l <= *x && *x <= *h)
    }

    /// Uniform sample of `(x, u)` in the box.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (StateVec, DVector<f64>) {
        let draw = |rng: &mut R, lo: &[f64], hi: &[f64]| {
            DVector::from_iterator(
                lo.len(),
                lo.iter()
                    .zip(hi)
                    .map(|(&l, &h)| if l < h { rng.random_range(l..=h) } else { l }),
            )
        };
        let q = draw(rng, &self.q_min, &self.q_max);
        let p = draw(rng, &self.p_min, &self.p_max);
        let u = draw(rng, &self.u_min, &self.u_max);
        (StateVec::new(q, p), u)
    }
}

/// What a scheduling parameter measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamKind {
    /// Entry `(row, col)` of `a⁽ʲ⁾(q)` with `j = input`.
    Slope { input: usize, row: usize, col: usize },
    /// Input channel `u_j`.
    Input { input: usize },
    /// Entry `(input, col)` of `β(q, p)`.
    Beta { input: usize, col: usize },
    /// Entry `(row, input)` of `g₂(q)`.
    InputGain { row: usize, input: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulingParam {
    pub name: String,
    #[serde(flatten)]
    pub kind: ParamKind,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBounds {
    pub params: Vec<SchedulingParam>,
}

impl ParameterBounds {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn vertex_count(&self) -> usize {
        1usize << self.params.len()
    }

    pub fn get(&self, name: &str) -> Option<&SchedulingParam> {
        self.params.iter().find(|p| p.name == name)
    }
}

fn interval_product(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let c = [a.0 * b.0, a.0 * b.1, a.1 * b.0, a.1 * b.1];
    (
        c.iter().copied().fold(f64::INFINITY, f64::min),
        c.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    )
}

fn param_names(n: usize, m: usize) -> impl Fn(&ParamKind) -> String {
    move |kind| {
        let scalar = n == 1 && m == 1;
        match *kind {
            ParamKind::Slope { input, row, col } if !scalar => format!("a{}[{},{}]", input + 1, row + 1, col + 1),
            ParamKind::Slope { .. } => "a".into(),
            ParamKind::Input { input } if m > 1 => format!("u{}", input + 1),
            ParamKind::Input { .. } => "u".into(),
            ParamKind::Beta { input, col } if !scalar => format!("beta[{},{}]", input + 1, col + 1),
            ParamKind::Beta { .. } => "beta".into(),
            ParamKind::InputGain { row, input } if !scalar => format!("g[{},{}]", row + 1, input + 1),
            ParamKind::InputGain { .. } => "g".into(),
        }
    }
}

/// Interval bounds of every scheduling parameter over the operating domain.
///
/// Slopes and `g₂` entries come from [`crate::model::InputMap::entry_ranges`];
/// `β` entries are bounded by interval products of slope ranges with the range
/// of `M⁻¹p`, taking all sign combinations.
pub fn compute_parameter_bounds(sys: &PHSystem, dom: &OperatingDomain) -> Result<ParameterBounds, EmbeddingError> {
    let (n, m) = (sys.n(), sys.m());
    dom.validate(n, m)?;
    let q_min = DVector::from_column_slice(&dom.q_min);
    let q_max = DVector::from_column_slice(&dom.q_max);
    sys.input_map().check_domain(&q_min, &q_max)?;
    let ranges = sys.input_map().entry_ranges(&q_min, &q_max);

    let minv = sys.mass_inv();
    let velocity: Vec<(f64, f64)> = (0..n)
        .map(|r| {
            (0..n).fold((0.0, 0.0), |(lo, hi), s| {
                let a = minv[(r, s)] * dom.p_min[s];
                let b = minv[(r, s)] * dom.p_max[s];
                (lo + a.min(b), hi + a.max(b))
            })
        })
        .collect();

    let name = param_names(n, m);
    let mut params = Vec::new();
    let mut push = |kind: ParamKind, min: f64, max: f64| {
        params.push(SchedulingParam {
            name: name(&kind),
            kind,
            min,
            max,
        })
    };
    for j in 0..m {
        for row in 0..n {
            for col in 0..n {
                let r = &ranges.slopes[j];
                push(
                    ParamKind::Slope { input: j, row, col },
                    r.lo[(row, col)],
                    r.hi[(row, col)],
                );
            }
        }
    }
    for j in 0..m {
        push(ParamKind::Input { input: j }, dom.u_min[j], dom.u_max[j]);
    }
    for j in 0..m {
        for col in 0..n {
            let r = &ranges.slopes[j];
            let (lo, hi) = (0..n).fold((0.0, 0.0), |(lo, hi), row| {
                let (a, b) = interval_product((r.lo[(row, col)], r.hi[(row, col)]), velocity[row]);
                (lo + a, hi + b)
            });
            push(ParamKind::Beta { input: j, col }, lo, hi);
        }
    }
    for j in 0..m {
        for row in 0..n {
            push(
                ParamKind::InputGain { row, input: j },
                ranges.g2.lo[(row, j)],
                ranges.g2.hi[(row, j)],
            );
        }
    }
    if params.len() >= usize::BITS as usize - 1 {
        return Err(EmbeddingError::TooManyParameters(params.len()));
    }
    Ok(ParameterBounds { params })
}

/// One vertex system `A_i(L) = Ā_i − L C̄_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub a_bar: DMatrix<f64>,
    pub c_bar: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexSet {
    pub vertices: Vec<Vertex>,
    /// Scheduling parameters the vertices were built from, if any.
    pub bounds: Option<ParameterBounds>,
    /// Energy metric `Q` of the plant; the LMI is posed in the coordinates
    /// where this metric is the identity.
    pub metric: DMatrix<f64>,
}

impl VertexSet {
    /// Vertex set without an underlying parameter box (identity metric).
    pub fn from_vertices(vertices: Vec<Vertex>) -> Self {
        let n = vertices.first().map_or(0, |v| v.a_bar.nrows());
        Self {
            vertices,
            bounds: None,
            metric: DMatrix::identity(n, n),
        }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.vertices[0].a_bar.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.vertices[0].c_bar.nrows()
    }

    /// Low/high assignment of every parameter at vertex `index`.
    pub fn corner(&self, index: usize) -> Vec<bool> {
        let k = self.bounds.as_ref().map_or(0, |b| b.len());
        corner_bits(index, k)
    }
}

/// `true` = high bound, for parameter `j` = bit `j` of `index`.
pub fn corner_bits(index: usize, n_params: usize) -> Vec<bool> {
    (0..n_params).map(|j| index >> j & 1 == 1).collect()
}

/// Inverse of [`corner_bits`].
pub fn corner_index(bits: &[bool]) -> usize {
    bits.iter()
        .enumerate()
        .fold(0, |acc, (j, &b)| acc | (usize::from(b) << j))
}

/// Builds `(Ā, C̄)` from one value per scheduling parameter.
pub fn assemble_vertex(sys: &PHSystem, bounds: &ParameterBounds, theta: &[f64]) -> Vertex {
    let (n, m) = (sys.n(), sys.m());
    let mut slopes = vec![DMatrix::<f64>::zeros(n, n); m];
    let mut u = DVector::<f64>::zeros(m);
    let mut beta = DMatrix::<f64>::zeros(m, n);
    let mut g2 = DMatrix::<f64>::zeros(n, m);
    for (param, &v) in bounds.params.iter().zip(theta) {
        match param.kind {
            ParamKind::Slope { input, row, col } => slopes[input][(row, col)] = v,
            ParamKind::Input { input } => u[input] = v,
            ParamKind::Beta { input, col } => beta[(input, col)] = v,
            ParamKind::InputGain { row, input } => g2[(row, input)] = v,
        }
    }
    let mut a_bar = sys.drift_matrix();
    let mut coupling = DMatrix::<f64>::zeros(n, n);
    for (j, a) in slopes.iter().enumerate() {
        coupling += a * u[j];
    }
    let mut block = a_bar.view_mut((n, 0), (n, n));
    block += coupling;
    let gamma_cap = g2.transpose() * sys.mass_inv();
    let mut c_bar = DMatrix::zeros(m, 2 * n);
    c_bar.view_mut((0, 0), (m, n)).copy_from(&beta);
    c_bar.view_mut((0, n), (m, n)).copy_from(&gamma_cap);
    Vertex { a_bar, c_bar }
}

/// All `2^{n_k}` vertex systems, in binary-counting corner order.
pub fn enumerate_vertices(sys: &PHSystem, bounds: &ParameterBounds) -> VertexSet {
    let vertices = (0..bounds.vertex_count())
        .map(|i| {
            let theta: Vec<f64> = bounds
                .params
                .iter()
                .zip(corner_bits(i, bounds.len()))
                .map(|(p, high)| if high { p.max } else { p.min })
                .collect();
            assemble_vertex(sys, bounds, &theta)
        })
        .collect();
    VertexSet {
        vertices,
        bounds: Some(bounds.clone()),
        metric: sys.hessian().clone(),
    }
}

/// Scheduling parameters evaluated at a state and input.
pub fn scheduling_values(sys: &PHSystem, bounds: &ParameterBounds, x: &StateVec, u: &DVector<f64>) -> Vec<f64> {
    let slopes = sys.slopes(&x.q);
    let beta = sys.beta(&x.q, &x.p);
    let g2 = sys.g2(&x.q);
    bounds
        .params
        .iter()
        .map(|p| match p.kind {
            ParamKind::Slope { input, row, col } => slopes[input][(row, col)],
            ParamKind::Input { input } => u[input],
            ParamKind::Beta { input, col } => beta[(input, col)],
            ParamKind::InputGain { row, input } => g2[(row, input)],
        })
        .collect()
}

/// Convex weights `h_i ≥ 0`, `Σ h_i = 1`, over the vertex set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub h: Vec<f64>,
    /// Set when at least one sector variable left `[0, 1]` and was clamped.
    pub clamped: bool,
}

impl WeightVector {
    pub fn unit(index: usize, len: usize) -> Self {
        let mut h = vec![0.0; len];
        h[index] = 1.0;
        Self { h, clamped: false }
    }

    pub fn uniform(len: usize) -> Self {
        Self {
            h: vec![1.0 / len as f64; len],
            clamped: false,
        }
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }
}

/// Normalized sector variables `μ_j ∈ [0, 1]`; returns whether any was
/// clamped. Degenerate parameters (`min == max`) get `μ = 0`.
pub fn sector_variables(bounds: &ParameterBounds, theta: &[f64], mu: &mut [f64]) -> bool {
    let mut clamped = false;
    for ((p, &v), out) in bounds.params.iter().zip(theta).zip(mu.iter_mut()) {
        let width = p.max - p.min;
        let raw = if width > 0.0 { (v - p.min) / width } else { 0.0 };
        if !(0.0..=1.0).contains(&raw) {
            clamped = true;
        }
        *out = raw.clamp(0.0, 1.0);
    }
    clamped
}

/// Product weights `h_i = Π_j w_j^{i_j}` with `w^L = 1 − μ`, `w^H = μ`.
pub fn weights_from_sectors(mu: &[f64], h: &mut [f64]) {
    debug_assert_eq!(h.len(), 1 << mu.len());
    h[0] = 1.0;
    let mut len = 1;
    for &m in mu {
        for i in 0..len {
            let base = h[i];
            h[i] = base * (1.0 - m);
            h[i + len] = base * m;
        }
        len *= 2;
    }
}

/// Weights at the estimated state `x̂` and input `u`.
pub fn weights(sys: &PHSystem, bounds: &ParameterBounds, xhat: &StateVec, u: &DVector<f64>) -> WeightVector {
    let theta = scheduling_values(sys, bounds, xhat, u);
    let mut mu = vec![0.0; bounds.len()];
    let clamped = sector_variables(bounds, &theta, &mut mu);
    let mut h = vec![0.0; bounds.vertex_count()];
    weights_from_sectors(&mu, &mut h);
    WeightVector { h, clamped }
}

/// `∂γ/∂x` at `x̄`: `[[0, 0], [Σ_j a⁽ʲ⁾(q̄)u_j, 0]] − L[β(q̄, p̄), Γ(q̄)]`.
pub fn jacobian_gamma(sys: &PHSystem, xbar: &StateVec, u: &DVector<f64>, gain: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = (sys.n(), sys.m());
    let mut jac = DMatrix::zeros(2 * n, 2 * n);
    let mut coupling = DMatrix::<f64>::zeros(n, n);
    for (j, a) in sys.slopes(&xbar.q).iter().enumerate() {
        coupling += a * u[j];
    }
    jac.view_mut((n, 0), (n, n)).copy_from(&coupling);
    let mut c = DMatrix::zeros(m, 2 * n);
    c.view_mut((0, 0), (m, n)).copy_from(&sys.beta(&xbar.q, &xbar.p));
    c.view_mut((0, n), (m, n)).copy_from(&sys.gamma_cap(&xbar.q));
    jac - gain * c
}

/// `Σ h_i (Ā_i − L C̄_i)`.
pub fn reconstruct(h: &WeightVector, set: &VertexSet, gain: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(h.len(), set.len(), "weight vector and vertex set differ in length");
    let dim = set.state_dim();
    let mut acc = DMatrix::zeros(dim, dim);
    for (w, v) in h.h.iter().zip(&set.vertices) {
        if *w != 0.0 {
            acc += (&v.a_bar - gain * &v.c_bar) * *w;
        }
    }
    acc
}

/// Residual of the integral mean-value identity
/// `γ(x,u) − γ(x̂,u) = (∫₀¹ ∂γ/∂x(x̂ + s x̃, u) ds) x̃`, evaluated with
/// adaptive 20-point Gauss–Legendre quadrature and the given Jacobian.
pub fn mean_value_residual_with<J>(
    sys: &PHSystem,
    x: &StateVec,
    xhat: &StateVec,
    u: &DVector<f64>,
    gain: &DMatrix<f64>,
    jacobian: J,
) -> f64
where
    J: Fn(&StateVec) -> DMatrix<f64>,
{
    let err = x.stacked() - xhat.stacked();
    if err.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    let base = xhat.stacked();
    let rule = GaussLegendre::new(20);
    let integrand = |s: f64| jacobian(&StateVec::from_stacked(&(&base + &err * s)));
    let averaged = adaptive_integrate(&rule, 0.0, 1.0, &integrand, 1e-15, 0.0, 10);
    let lhs = sys.gamma(x, u, gain) - sys.gamma(xhat, u, gain);
    (lhs - averaged * err).norm()
}

/// [`mean_value_residual_with`] using the closed-form [`jacobian_gamma`].
pub fn mean_value_check(sys: &PHSystem, x: &StateVec, xhat: &StateVec, u: &DVector<f64>, gain: &DMatrix<f64>) -> f64 {
    mean_value_residual_with(sys, x, xhat, u, gain, |xb| jacobian_gamma(sys, xb, u, gain))
}
