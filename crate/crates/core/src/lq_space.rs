//! Discrete `L_q(0,1)` calculus.
//!
//! A [`GridFunction`] holds the values at the `M` interior nodes
//! `x_i = i·h`, `h = 1/(M+1)`, of a uniform mesh. Every integral is the
//! interior-node rectangle rule `∫u ≈ h Σ u_i`; boundary cells carry the
//! zero Dirichlet value and contribute nothing. Consequently the constant
//! function 1 has norm `(M h)^{1/q}`, e.g. `63/64` in `L_1` for `M = 63`.
//!
//! All identities below (duality map pairing, `Φ_q` homogeneities, trace
//! bounds) hold exactly for this quadrature, not just in the mesh limit.

use std::ops::{Add, AddAssign, Mul, Sub};

use crate::error::{Error, Result};
use crate::rng::SplitMix;

#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(m: usize) -> Self {
        Self { values: vec![0.0; m] }
    }

    pub fn constant(m: usize, c: f64) -> Self {
        Self { values: vec![c; m] }
    }

    /// Samples `f` at the interior nodes.
    pub fn from_fn(m: usize, f: impl Fn(f64) -> f64) -> Self {
        let h = 1.0 / (m + 1) as f64;
        Self { values: (1..=m).map(|i| f(i as f64 * h)).collect() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mesh_width(&self) -> f64 {
        1.0 / (self.values.len() + 1) as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.len(), other.len());
        Self { values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect() }
    }

    /// `self += a·x`.
    pub fn axpy(&mut self, a: f64, x: &Self) {
        for (s, &v) in self.values.iter_mut().zip(&x.values) {
            *s += a * v;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Discrete `L_q` norm; `q = f64::INFINITY` gives the max norm.
    pub fn norm(&self, q: f64) -> f64 {
        norm_q(self, q)
    }

    /// One value per line, shortest round-trip formatting.
    pub fn to_csv_column(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 20);
        for v in &self.values {
            out.push_str(&format!("{v}\n"));
        }
        out
    }

    pub fn from_csv_column(text: &str) -> Result<Self> {
        let mut values = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v: f64 = line
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("line {}: `{line}` is not a number", line_no + 1)))?;
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("line {}: value is not finite", line_no + 1)));
            }
            values.push(v);
        }
        Ok(Self { values })
    }
}

impl Add<&GridFunction> for &GridFunction {
    type Output = GridFunction;
    fn add(self, rhs: &GridFunction) -> GridFunction {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub<&GridFunction> for &GridFunction {
    type Output = GridFunction;
    fn sub(self, rhs: &GridFunction) -> GridFunction {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul<f64> for &GridFunction {
    type Output = GridFunction;
    fn mul(self, c: f64) -> GridFunction {
        self.map(|v| c * v)
    }
}

impl AddAssign<&GridFunction> for GridFunction {
    fn add_assign(&mut self, rhs: &GridFunction) {
        self.axpy(1.0, rhs);
    }
}

/// `∫ u v`.
pub fn pairing(u: &GridFunction, v: &GridFunction) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    u.mesh_width() * u.values.iter().zip(&v.values).map(|(a, b)| a * b).sum::<f64>()
}

/// Rectangle-rule `L_q` norm, `q ∈ [1, ∞]`.
pub fn norm_q(u: &GridFunction, q: f64) -> f64 {
    if q.is_infinite() {
        return u.max_abs();
    }
    debug_assert!(q >= 1.0);
    let h = u.mesh_width();
    if q == 2.0 {
        return (h * u.values.iter().map(|v| v * v).sum::<f64>()).sqrt();
    }
    if q == 1.0 {
        return h * u.values.iter().map(|v| v.abs()).sum::<f64>();
    }
    // Scale by the max to avoid overflow for large q.
    let scale = u.max_abs();
    if scale == 0.0 {
        return 0.0;
    }
    let s: f64 = u.values.iter().map(|v| (v.abs() / scale).powf(q)).sum();
    scale * (h * s).powf(1.0 / q)
}

#[inline]
fn abs_pow(v: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else if e == 1.0 {
        v.abs()
    } else if e == 2.0 {
        v * v
    } else {
        v.abs().powf(e)
    }
}

/// Duality map of `L_q`: `‖u‖^{2−q}|u|^{q−2}u` (0 at `u = 0`).
pub fn duality_map(u: &GridFunction, q: f64) -> GridFunction {
    let n = norm_q(u, q);
    if n == 0.0 {
        return GridFunction::zeros(u.len());
    }
    let c = n.powf(2.0 - q);
    u.map(|v| c * abs_pow(v, q - 2.0) * v)
}

/// `Φ_q(u) = ‖u‖_q^q`.
pub fn phi_value(u: &GridFunction, q: f64) -> f64 {
    u.mesh_width() * u.values.iter().map(|&v| abs_pow(v, q)).sum::<f64>()
}

/// `Φ_q'(u)` as the `L_{q'}` function `q|u|^{q−2}u`.
pub fn phi_grad(u: &GridFunction, q: f64) -> GridFunction {
    u.map(|v| q * abs_pow(v, q - 2.0) * v)
}

/// `Φ_q'(u)·v = q∫|u|^{q−2}uv`.
pub fn phi_grad_apply(u: &GridFunction, q: f64, v: &GridFunction) -> f64 {
    let h = u.mesh_width();
    h * q * u.values.iter().zip(&v.values).map(|(&a, &b)| abs_pow(a, q - 2.0) * a * b).sum::<f64>()
}

/// `Φ_q''(u)(v, w) = q(q−1)∫|u|^{q−2}vw`.
pub fn phi_hess_apply(u: &GridFunction, q: f64, v: &GridFunction, w: &GridFunction) -> f64 {
    let h = u.mesh_width();
    let s: f64 = u
        .values
        .iter()
        .zip(&v.values)
        .zip(&w.values)
        .map(|((&a, &b), &c)| abs_pow(a, q - 2.0) * b * c)
        .sum();
    h * q * (q - 1.0) * s
}

/// Finite-mode image of a γ-radonifying operator `T : H → L_q`: column `k`
/// is `T h_k` for the first `m` basis vectors of `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseOperatorValue {
    columns: Vec<GridFunction>,
}

impl NoiseOperatorValue {
    pub fn new(columns: Vec<GridFunction>) -> Self {
        debug_assert!(columns.windows(2).all(|w| w[0].len() == w[1].len()));
        Self { columns }
    }

    pub fn zeros(m: usize, nodes: usize) -> Self {
        Self { columns: vec![GridFunction::zeros(nodes); m] }
    }

    pub fn mode_count(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[GridFunction] {
        &self.columns
    }

    pub fn columns_mut(&mut self) -> &mut [GridFunction] {
        &mut self.columns
    }

    pub fn nodes(&self) -> usize {
        self.columns.first().map_or(0, GridFunction::len)
    }

    /// `T ξ = Σ_k ξ_k T h_k`.
    pub fn apply(&self, coefficients: &[f64]) -> GridFunction {
        let mut out = GridFunction::zeros(self.nodes());
        for (col, &c) in self.columns.iter().zip(coefficients) {
            if c != 0.0 {
                out.axpy(c, col);
            }
        }
        out
    }

    pub fn map_columns(&self, f: impl Fn(&GridFunction) -> GridFunction) -> Self {
        Self { columns: self.columns.iter().map(f).collect() }
    }

    /// Pointwise ℓ₂ aggregate `(Σ_k |col_k|²)^{1/2}`.
    pub fn square_function(&self) -> GridFunction {
        let mut acc = vec![0.0; self.nodes()];
        for col in &self.columns {
            for (a, v) in acc.iter_mut().zip(col.values()) {
                *a += v * v;
            }
        }
        GridFunction::new(acc.into_iter().map(f64::sqrt).collect())
    }
}

impl Sub<&NoiseOperatorValue> for &NoiseOperatorValue {
    type Output = NoiseOperatorValue;
    fn sub(self, rhs: &NoiseOperatorValue) -> NoiseOperatorValue {
        NoiseOperatorValue::new(self.columns.iter().zip(&rhs.columns).map(|(a, b)| a - b).collect())
    }
}

/// `‖T‖_{γ(H,L_q)}`, taken to be the `L_q(ℓ₂)` norm of the columns.
pub fn gamma_norm(t: &NoiseOperatorValue, q: f64) -> f64 {
    if t.mode_count() == 0 {
        return 0.0;
    }
    norm_q(&t.square_function(), q)
}

/// `tr_T Φ_q''(u) = Σ_k Φ_q''(u)(T h_k, T h_k)`.
pub fn trace_form(t: &NoiseOperatorValue, u: &GridFunction, q: f64) -> f64 {
    t.columns.iter().map(|c| phi_hess_apply(u, q, c, c)).sum()
}

/// γ-norm of a step process `G` on `L₂(0,t;H)`: the `L_q` norm of
/// `(Σ_j Σ_k Δt |G_j h_k|²)^{1/2}`.
pub fn gamma_norm_time_space(steps: &[NoiseOperatorValue], dt: f64, q: f64) -> f64 {
    let Some(first) = steps.first() else { return 0.0 };
    let mut acc = vec![0.0; first.nodes()];
    for step in steps {
        for col in step.columns() {
            for (a, v) in acc.iter_mut().zip(col.values()) {
                *a += dt * v * v;
            }
        }
    }
    norm_q(&GridFunction::new(acc.into_iter().map(f64::sqrt).collect()), q)
}

/// `(∫‖G(s)‖²_γ ds)^{1/2}` for a step process.
pub fn l2_time_gamma_norm(steps: &[NoiseOperatorValue], dt: f64, q: f64) -> f64 {
    steps.iter().map(|s| dt * gamma_norm(s, q).powi(2)).sum::<f64>().sqrt()
}

/// A linear map on grid functions, with its transpose.
pub trait GridOperator {
    fn apply(&self, u: &GridFunction) -> GridFunction;

    /// Transpose with respect to `Σ u_i v_i`; symmetric by default.
    fn apply_transpose(&self, u: &GridFunction) -> GridFunction {
        self.apply(u)
    }
}

/// `u ↦ c·u`.
#[derive(Debug, Clone, Copy)]
pub struct ScaledIdentity(pub f64);

impl GridOperator for ScaledIdentity {
    fn apply(&self, u: &GridFunction) -> GridFunction {
        u * self.0
    }
}

fn signed_pow(v: f64, e: f64) -> f64 {
    v.signum() * v.abs().powf(e)
}

/// Estimate of `‖L‖_{L_q → L_q}` by Boyd's nonlinear power iteration,
/// started from the constant vector and a few random ones. For matrices
/// with nonnegative entries the constant start converges to the true norm.
pub fn operator_norm_estimate(op: &dyn GridOperator, nodes: usize, q: f64, seed: u64) -> f64 {
    let qd = q / (q - 1.0);
    let mut rng = SplitMix::new(seed);
    let mut starts = vec![GridFunction::constant(nodes, 1.0)];
    for _ in 0..4 {
        starts.push(GridFunction::new((0..nodes).map(|_| rng.normal()).collect()));
    }
    let mut best = 0.0_f64;
    for mut x in starts {
        let n = norm_q(&x, q);
        if n == 0.0 {
            continue;
        }
        x = &x * (1.0 / n);
        for _ in 0..200 {
            let y = op.apply(&x);
            best = best.max(norm_q(&y, q) / norm_q(&x, q));
            let z = op.apply_transpose(&y.map(|v| signed_pow(v, q - 1.0)));
            let next = z.map(|v| signed_pow(v, qd - 1.0));
            let nn = norm_q(&next, q);
            if nn == 0.0 {
                break;
            }
            let next = &next * (1.0 / nn);
            let moved = norm_q(&(&next - &x), q);
            x = next;
            if moved < 1e-13 {
                break;
            }
        }
        best = best.max(norm_q(&op.apply(&x), q) / norm_q(&x, q));
    }
    best
}

/// Outcome of [`ideal_bound_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdealReport {
    pub operator_norm: f64,
    pub gamma_before: f64,
    pub gamma_after: f64,
    /// `‖LT‖_γ / (‖L‖·‖T‖_γ)`; at most 1 when the ideal property holds.
    pub ratio: f64,
}

/// Checks `‖LT‖_γ ≤ ‖L‖·‖T‖_γ` with `‖L‖` from [`operator_norm_estimate`].
pub fn ideal_bound_check(op: &dyn GridOperator, t: &NoiseOperatorValue, q: f64) -> IdealReport {
    let operator_norm = operator_norm_estimate(op, t.nodes(), q, 0x1dea1);
    let gamma_before = gamma_norm(t, q);
    let lt = t.map_columns(|c| op.apply(c));
    let gamma_after = gamma_norm(&lt, q);
    let denom = operator_norm * gamma_before;
    let ratio = if denom == 0.0 {
        if gamma_after == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        gamma_after / denom
    };
    IdealReport { operator_norm, gamma_before, gamma_after, ratio }
}
