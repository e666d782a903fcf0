//! Port-Hamiltonian plants with quadratic energy and a displacement-dependent
//! input map.
//!
//! The state is `x = [q; p]` with `q, p ∈ ℝⁿ`, the dynamics are
//! `ẋ = (J − R)∇H(x) + g(x)u`, `y = g(x)ᵀ∇H(x)` with
//! `H = ½ qᵀKq + ½ pᵀM⁻¹p`, `J = [[0, I], [−I, 0]]`, `R = blockdiag(0, η)`
//! and `g(x) = [0; g₂(q)]`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{block_diag, jacobi_eigen};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{name} must be square with dimension {expected}, got {rows}x{cols}")]
    Dimension {
        name: &'static str,
        expected: usize,
        rows: usize,
        cols: usize,
    },
    #[error("{0} is not symmetric")]
    NotSymmetric(&'static str),
    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("{0} is not positive semidefinite")]
    NotPositiveSemidefinite(&'static str),
    #[error("parameter {name} = {value} is invalid: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("input-map Jacobian disagrees with finite differences (relative error {0:.3e})")]
    InputJacobianMismatch(f64),
    #[error("operating domain reaches q + q0 = {0:.6e} <= 0, where the input map changes monotonicity")]
    SingularInputMap(f64),
}

/// Lower block `g₂(q) ∈ ℝ^{n×m}` of the input map, with its column Jacobians
/// `a⁽ʲ⁾(q) = ∂g₂⁽ʲ⁾/∂q ∈ ℝ^{n×n}` supplied in closed form.
pub trait InputMap: fmt::Debug + Send + Sync {
    /// `(n, m)`.
    fn dims(&self) -> (usize, usize);

    fn g2(&self, q: &DVector<f64>) -> DMatrix<f64>;

    fn column_jacobian(&self, q: &DVector<f64>, column: usize) -> DMatrix<f64>;

    /// Characteristic displacement, used to size finite-difference steps.
    fn length_scale(&self) -> f64 {
        1.0
    }

    /// Rejects displacement boxes on which [`InputMap::entry_ranges`] would
    /// not be exact.
    fn check_domain(&self, _q_min: &DVector<f64>, _q_max: &DVector<f64>) -> Result<(), ModelError> {
        Ok(())
    }

    /// Entrywise ranges of `g₂` and of every `a⁽ʲ⁾` over a displacement box.
    ///
    /// The default evaluates all `2ⁿ` box corners, which is exact for maps
    /// whose entries are monotone in each coordinate.
    fn entry_ranges(&self, q_min: &DVector<f64>, q_max: &DVector<f64>) -> InputMapRanges {
        let (n, m) = self.dims();
        let mut g2 = EntryRange::empty(n, m);
        let mut slopes = vec![EntryRange::empty(n, n); m];
        for corner in 0..(1usize << n) {
            let q = DVector::from_fn(n, |k, _| if corner >> k & 1 == 1 { q_max[k] } else { q_min[k] });
            g2.include(&self.g2(&q));
            for (j, s) in slopes.iter_mut().enumerate() {
                s.include(&self.column_jacobian(&q, j));
            }
        }
        InputMapRanges { g2, slopes }
    }
}

/// Entrywise `[lo, hi]` envelope of a matrix-valued quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryRange {
    pub lo: DMatrix<f64>,
    pub hi: DMatrix<f64>,
}

impl EntryRange {
    fn empty(rows: usize, cols: usize) -> Self {
        Self {
            lo: DMatrix::from_element(rows, cols, f64::INFINITY),
            hi: DMatrix::from_element(rows, cols, f64::NEG_INFINITY),
        }
    }

    fn include(&mut self, v: &DMatrix<f64>) {
        for (i, x) in v.iter().enumerate() {
            self.lo[i] = self.lo[i].min(*x);
            self.hi[i] = self.hi[i].max(*x);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputMapRanges {
    pub g2: EntryRange,
    /// One range per input column `j`.
    pub slopes: Vec<EntryRange>,
}

/// Scalar electrostatic input map `g₂(q) = 2ε(q + q₀)³` of a dielectric
/// elastomer actuator under quasi-static electrical dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicElectrostatic {
    pub eps: f64,
    pub q0: f64,
}

impl InputMap for CubicElectrostatic {
    fn dims(&self) -> (usize, usize) {
        (1, 1)
    }

    fn g2(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let s = q[0] + self.q0;
        DMatrix::from_element(1, 1, 2.0 * self.eps * s * s * s)
    }

    fn column_jacobian(&self, q: &DVector<f64>, _column: usize) -> DMatrix<f64> {
        let s = q[0] + self.q0;
        DMatrix::from_element(1, 1, 6.0 * self.eps * s * s)
    }

    fn length_scale(&self) -> f64 {
        self.q0.abs().max(f64::MIN_POSITIVE)
    }

    fn check_domain(&self, q_min: &DVector<f64>, _q_max: &DVector<f64>) -> Result<(), ModelError> {
        let s = q_min[0] + self.q0;
        if s <= 0.0 {
            return Err(ModelError::SingularInputMap(s));
        }
        Ok(())
    }
}

/// `g₂(q) = G₀ + Σₖ qₖ Gₖ`; its column Jacobians are constant.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineInputMap {
    pub offset: DMatrix<f64>,
    /// `slopes[k] = ∂g₂/∂qₖ`, each `n×m`.
    pub slopes: Vec<DMatrix<f64>>,
}

impl InputMap for AffineInputMap {
    fn dims(&self) -> (usize, usize) {
        (self.offset.nrows(), self.offset.ncols())
    }

    fn g2(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let mut g = self.offset.clone();
        for (k, s) in self.slopes.iter().enumerate() {
            g += s * q[k];
        }
        g
    }

    fn column_jacobian(&self, _q: &DVector<f64>, column: usize) -> DMatrix<f64> {
        let n = self.offset.nrows();
        DMatrix::from_fn(n, n, |r, k| self.slopes[k][(r, column)])
    }
}

/// Displacement/momentum pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVec {
    pub q: DVector<f64>,
    pub p: DVector<f64>,
}

impl StateVec {
    pub fn new(q: DVector<f64>, p: DVector<f64>) -> Self {
        assert_eq!(q.len(), p.len(), "q and p must have equal length");
        Self { q, p }
    }

    pub fn scalar(q: f64, p: f64) -> Self {
        Self::new(DVector::from_element(1, q), DVector::from_element(1, p))
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(DVector::zeros(n), DVector::zeros(n))
    }

    pub fn from_stacked(x: &DVector<f64>) -> Self {
        let n = x.len() / 2;
        Self::new(x.rows(0, n).into_owned(), x.rows(n, n).into_owned())
    }

    pub fn stacked(&self) -> DVector<f64> {
        let n = self.q.len();
        DVector::from_fn(2 * n, |i, _| if i < n { self.q[i] } else { self.p[i - n] })
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn norm(&self) -> f64 {
        (self.q.norm_squared() + self.p.norm_squared()).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.p.iter()).all(|v| v.is_finite())
    }

    pub fn sub(&self, other: &StateVec) -> StateVec {
        StateVec::new(&self.q - &other.q, &self.p - &other.p)
    }
}

/// Plant of the form described in the module docs.
#[derive(Debug, Clone)]
pub struct PHSystem {
    stiffness: DMatrix<f64>,
    mass: DMatrix<f64>,
    damping: DMatrix<f64>,
    mass_inv: DMatrix<f64>,
    hessian: DMatrix<f64>,
    input: Arc<dyn InputMap>,
}

fn check_square(name: &'static str, m: &DMatrix<f64>, n: usize) -> Result<(), ModelError> {
    if m.nrows() != n || m.ncols() != n {
        return Err(ModelError::Dimension {
            name,
            expected: n,
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(ModelError::NotSymmetric(name));
    }
    Ok(())
}

impl PHSystem {
    pub fn new(
        stiffness: DMatrix<f64>,
        mass: DMatrix<f64>,
        damping: DMatrix<f64>,
        input: Arc<dyn InputMap>,
    ) -> Result<Self, ModelError> {
        let (n, _m) = input.dims();
        check_square("K", &stiffness, n)?;
        check_square("M", &mass, n)?;
        check_square("eta", &damping, n)?;
        if jacobi_eigen(&stiffness).min() <= 0.0 {
            return Err(ModelError::NotPositiveDefinite("K"));
        }
        if jacobi_eigen(&mass).min() <= 0.0 {
            return Err(ModelError::NotPositiveDefinite("M"));
        }
        if jacobi_eigen(&damping).min() < -1e-12 * damping.amax() {
            return Err(ModelError::NotPositiveSemidefinite("eta"));
        }
        let mass_inv = mass
            .clone()
            .cholesky()
            .ok_or(ModelError::NotPositiveDefinite("M"))?
            .inverse();
        let hessian = block_diag(&stiffness, &mass_inv);
        let sys = Self {
            stiffness,
            mass,
            damping,
            mass_inv,
            hessian,
            input,
        };
        let err = sys.input_jacobian_fd_error(&DVector::zeros(n));
        if !(err <= 1e-5) {
            return Err(ModelError::InputJacobianMismatch(err));
        }
        Ok(sys)
    }

    pub fn n(&self) -> usize {
        self.stiffness.nrows()
    }

    pub fn m(&self) -> usize {
        self.input.dims().1
    }

    pub fn state_dim(&self) -> usize {
        2 * self.n()
    }

    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.stiffness
    }

    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    pub fn mass_inv(&self) -> &DMatrix<f64> {
        &self.mass_inv
    }

    pub fn damping(&self) -> &DMatrix<f64> {
        &self.damping
    }

    pub fn input_map(&self) -> &dyn InputMap {
        self.input.as_ref()
    }

    /// `Q = blockdiag(K, M⁻¹)`, the Hessian of `H`.
    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn structure_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut j = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            j[(i, n + i)] = 1.0;
            j[(n + i, i)] = -1.0;
        }
        j
    }

    pub fn dissipation_matrix(&self) -> DMatrix<f64> {
        block_diag(&DMatrix::zeros(self.n(), self.n()), &self.damping)
    }

    pub fn hamiltonian(&self, x: &StateVec) -> f64 {
        0.5 * x.q.dot(&(&self.stiffness * &x.q)) + 0.5 * x.p.dot(&(&self.mass_inv * &x.p))
    }

    pub fn grad_h(&self, x: &StateVec) -> DVector<f64> {
        &self.hessian * x.stacked()
    }

    /// `A₀ = (J − R)Q`.
    pub fn drift_matrix(&self) -> DMatrix<f64> {
        (self.structure_matrix() - self.dissipation_matrix()) * &self.hessian
    }

    pub fn g2(&self, q: &DVector<f64>) -> DMatrix<f64> {
        self.input.g2(q)
    }

    /// Column Jacobians `a⁽ʲ⁾(q)`, one `n×n` matrix per input.
    pub fn slopes(&self, q: &DVector<f64>) -> Vec<DMatrix<f64>> {
        (0..self.m()).map(|j| self.input.column_jacobian(q, j)).collect()
    }

    /// `β(q, p)`: row `j` is `[a⁽ʲ⁾(q)]ᵀ M⁻¹ p`.
    pub fn beta(&self, q: &DVector<f64>, p: &DVector<f64>) -> DMatrix<f64> {
        let v = &self.mass_inv * p;
        let n = self.n();
        let mut b = DMatrix::zeros(self.m(), n);
        for (j, a) in self.slopes(q).iter().enumerate() {
            b.set_row(j, &(a.transpose() * &v).transpose());
        }
        b
    }

    /// `Γ(q) = g₂(q)ᵀ M⁻¹`.
    pub fn gamma_cap(&self, q: &DVector<f64>) -> DMatrix<f64> {
        self.g2(q).transpose() * &self.mass_inv
    }

    /// Full input matrix `g(x) = [0; g₂(q)]`.
    pub fn input_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n();
        let mut g = DMatrix::zeros(2 * n, self.m());
        g.view_mut((n, 0), (n, self.m())).copy_from(&self.g2(q));
        g
    }

    /// `γ(x, u) = g(x)u − L g(x)ᵀQx`.
    pub fn gamma(&self, x: &StateVec, u: &DVector<f64>, gain: &DMatrix<f64>) -> DVector<f64> {
        let g = self.input_matrix(&x.q);
        &g * u - gain * self.output(x)
    }

    /// `ẋ = A₀x + g(x)u`.
    pub fn plant_rhs(&self, x: &StateVec, u: &DVector<f64>) -> StateVec {
        let mut dq = DVector::zeros(self.n());
        dq.gemv(1.0, &self.mass_inv, &x.p, 0.0);
        let g2 = self.g2(&x.q);
        let dp = -(&self.stiffness * &x.q) - &self.damping * &dq + g2 * u;
        StateVec::new(dq, dp)
    }

    /// `y = g(x)ᵀQx = g₂(q)ᵀM⁻¹p`.
    pub fn output(&self, x: &StateVec) -> DVector<f64> {
        self.g2(&x.q).transpose() * (&self.mass_inv * &x.p)
    }

    /// Extreme eigenvalues `(h₁, h₂)` of the (constant) Hessian `Q`.
    pub fn hessian_bounds(&self) -> (f64, f64) {
        let e = jacobi_eigen(&self.hessian);
        (e.min(), e.max())
    }

    /// Relative discrepancy between the closed-form `a⁽ʲ⁾(q)` and a central
    /// finite difference of `g₂`.
    pub fn input_jacobian_fd_error(&self, q: &DVector<f64>) -> f64 {
        let n = self.n();
        let h = 1e-4 * self.input.length_scale();
        let mut worst: f64 = 0.0;
        for j in 0..self.m() {
            let exact = self.input.column_jacobian(q, j);
            let mut fd = DMatrix::zeros(n, n);
            for k in 0..n {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[k] += h;
                qm[k] -= h;
                let col = (self.g2(&qp).column(j) - self.g2(&qm).column(j)) / (2.0 * h);
                fd.set_column(k, &col);
            }
            let scale = exact
                .norm()
                .max(1e-6 * self.g2(q).column(j).norm() / self.input.length_scale())
                .max(f64::MIN_POSITIVE);
            worst = worst.max((fd - exact).norm() / scale);
        }
        worst
    }
}

/// Physical parameters of the scalar dielectric elastomer actuator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeaParams {
    pub mass_kg: f64,
    pub stiffness_n_per_m: f64,
    pub damping_ns_per_m: f64,
    pub q0_m: f64,
    pub eps_f_per_m: f64,
}

impl Default for DeaParams {
    fn default() -> Self {
        Self {
            mass_kg: 1.0,
            stiffness_n_per_m: 1000.0,
            damping_ns_per_m: 50.0,
            q0_m: 1e-3,
            eps_f_per_m: 2.8,
        }
    }
}

impl DeaParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let checks: [(&'static str, f64); 5] = [
            ("mass_kg", self.mass_kg),
            ("stiffness_n_per_m", self.stiffness_n_per_m),
            ("damping_ns_per_m", self.damping_ns_per_m),
            ("q0_m", self.q0_m),
            ("eps_f_per_m", self.eps_f_per_m),
        ];
        for (name, value) in checks {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::InvalidParameter {
                    name,
                    value,
                    reason: "must be finite and strictly positive",
                });
            }
        }
        Ok(())
    }

    pub fn input_map(&self) -> CubicElectrostatic {
        CubicElectrostatic {
            eps: self.eps_f_per_m,
            q0: self.q0_m,
        }
    }

    pub fn system(&self) -> Result<PHSystem, ModelError> {
        self.validate()?;
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        PHSystem::new(
            s(self.stiffness_n_per_m),
            s(self.mass_kg),
            s(self.damping_ns_per_m),
            Arc::new(self.input_map()),
        )
    }
}
