//! The linear m-accretive operator `A = −Δ_h` on `(0,1)` with zero Dirichlet
//! boundary values, its resolvents `R_ε = (I + εA)⁻¹` and the semigroup
//! `S(t) = e^{−tA}`.
//!
//! The discrete spectrum is known in closed form:
//! `μ_k = (2/h²)(1 − cos kπh)` with eigenvectors `v_k(x_i) = sin(kπx_i)`,
//! `Σ_i v_k(x_i)v_l(x_i) = (M+1)/2 δ_kl`. The semigroup is applied through
//! this expansion, so `S(t)S(s) = S(t+s)` holds to roundoff.

use std::f64::consts::PI;

use crate::lq_space::{norm_q, phi_grad_apply, GridFunction, GridOperator};

/// Linear operator with a resolvent and an exactly computable semigroup.
pub trait DiscreteOperator: Send + Sync {
    fn dimension(&self) -> usize;

    fn apply(&self, u: &GridFunction) -> GridFunction;

    /// `(I + εA)⁻¹u`.
    fn resolvent_apply(&self, eps: f64, u: &GridFunction) -> GridFunction;

    /// `S(t)u`.
    fn semigroup_apply(&self, t: f64, u: &GridFunction) -> GridFunction;

    /// Dense matrix of `S(t)`, for repeated application with a fixed `t`.
    fn semigroup_matrix(&self, t: f64) -> DenseOperator;
}

/// Dirichlet finite-difference Laplacian on `M` interior nodes.
#[derive(Debug, Clone)]
pub struct DirichletLaplacian {
    m: usize,
    h: f64,
    eigenvalues: Vec<f64>,
    /// `sines[k * m + i] = sin((k+1)π x_i)`.
    sines: Vec<f64>,
}

impl DirichletLaplacian {
    pub fn new(m: usize) -> Self {
        assert!(m >= 1, "mesh needs at least one interior node");
        let h = 1.0 / (m + 1) as f64;
        let eigenvalues = (1..=m).map(|k| 2.0 / (h * h) * (1.0 - (k as f64 * PI * h).cos())).collect();
        let mut sines = Vec::with_capacity(m * m);
        for k in 1..=m {
            for i in 1..=m {
                sines.push((k as f64 * PI * i as f64 * h).sin());
            }
        }
        Self { m, h, eigenvalues, sines }
    }

    pub fn mesh_width(&self) -> f64 {
        self.h
    }

    /// `μ_k`, `k = 1..=M`.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        self.eigenvalues[k - 1]
    }

    /// Nodal values of `sin(kπx)`, `k = 1..=M`.
    pub fn eigenvector(&self, k: usize) -> GridFunction {
        GridFunction::new(self.sines[(k - 1) * self.m..k * self.m].to_vec())
    }

    /// Coefficients `c_k` with `u = Σ c_k v_k`.
    pub fn sine_coefficients(&self, u: &GridFunction) -> Vec<f64> {
        let m = self.m;
        (0..m)
            .map(|k| {
                let row = &self.sines[k * m..(k + 1) * m];
                2.0 * self.h * row.iter().zip(u.values()).map(|(s, v)| s * v).sum::<f64>()
            })
            .collect()
    }

    pub fn from_sine_coefficients(&self, c: &[f64]) -> GridFunction {
        let m = self.m;
        let mut out = vec![0.0; m];
        for (k, &ck) in c.iter().enumerate() {
            if ck == 0.0 {
                continue;
            }
            for (o, s) in out.iter_mut().zip(&self.sines[k * m..(k + 1) * m]) {
                *o += ck * s;
            }
        }
        GridFunction::new(out)
    }

    /// Resolvent as a [`GridOperator`].
    pub fn resolvent_operator(&self, eps: f64) -> ResolventOperator<'_> {
        ResolventOperator { op: self, eps }
    }
}

impl DiscreteOperator for DirichletLaplacian {
    fn dimension(&self) -> usize {
        self.m
    }

    fn apply(&self, u: &GridFunction) -> GridFunction {
        let v = u.values();
        let inv_h2 = 1.0 / (self.h * self.h);
        let m = self.m;
        GridFunction::new(
            (0..m)
                .map(|i| {
                    let left = if i > 0 { v[i - 1] } else { 0.0 };
                    let right = if i + 1 < m { v[i + 1] } else { 0.0 };
                    (2.0 * v[i] - left - right) * inv_h2
                })
                .collect(),
        )
    }

    fn resolvent_apply(&self, eps: f64, u: &GridFunction) -> GridFunction {
        debug_assert!(eps > 0.0);
        let m = self.m;
        let off = -eps / (self.h * self.h);
        let diag = 1.0 - 2.0 * off;
        // Thomas algorithm for the constant-coefficient tridiagonal system.
        let mut c_prime = vec![0.0; m];
        let mut d_prime = vec![0.0; m];
        let rhs = u.values();
        c_prime[0] = off / diag;
        d_prime[0] = rhs[0] / diag;
        for i in 1..m {
            let denom = diag - off * c_prime[i - 1];
            c_prime[i] = off / denom;
            d_prime[i] = (rhs[i] - off * d_prime[i - 1]) / denom;
        }
        let mut x = vec![0.0; m];
        x[m - 1] = d_prime[m - 1];
        for i in (0..m - 1).rev() {
            x[i] = d_prime[i] - c_prime[i] * x[i + 1];
        }
        GridFunction::new(x)
    }

    fn semigroup_apply(&self, t: f64, u: &GridFunction) -> GridFunction {
        if t == 0.0 {
            return u.clone();
        }
        let mut c = self.sine_coefficients(u);
        for (ck, mu) in c.iter_mut().zip(&self.eigenvalues) {
            *ck *= (-mu * t).exp();
        }
        self.from_sine_coefficients(&c)
    }

    fn semigroup_matrix(&self, t: f64) -> DenseOperator {
        let m = self.m;
        let decay: Vec<f64> = self.eigenvalues.iter().map(|mu| (-mu * t).exp() * 2.0 * self.h).collect();
        let mut data = vec![0.0; m * m];
        for (k, d) in decay.iter().enumerate() {
            let row = &self.sines[k * m..(k + 1) * m];
            for i in 0..m {
                let a = d * row[i];
                for j in 0..m {
                    data[i * m + j] += a * row[j];
                }
            }
        }
        DenseOperator { n: m, data }
    }
}

/// Row-major dense square matrix.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    n: usize,
    data: Vec<f64>,
}

impl DenseOperator {
    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            *o = row.iter().zip(u).map(|(a, b)| a * b).sum();
        }
    }
}

impl GridOperator for DenseOperator {
    fn apply(&self, u: &GridFunction) -> GridFunction {
        let mut out = vec![0.0; self.n];
        self.apply_into(u.values(), &mut out);
        GridFunction::new(out)
    }

    fn apply_transpose(&self, u: &GridFunction) -> GridFunction {
        let n = self.n;
        let mut out = vec![0.0; n];
        for (i, &ui) in u.values().iter().enumerate() {
            for (o, a) in out.iter_mut().zip(&self.data[i * n..(i + 1) * n]) {
                *o += a * ui;
            }
        }
        GridFunction::new(out)
    }
}

/// `(I + εA)⁻¹` viewed as a [`GridOperator`] (symmetric).
#[derive(Debug, Clone, Copy)]
pub struct ResolventOperator<'a> {
    op: &'a DirichletLaplacian,
    eps: f64,
}

impl GridOperator for ResolventOperator<'_> {
    fn apply(&self, u: &GridFunction) -> GridFunction {
        self.op.resolvent_apply(self.eps, u)
    }
}

/// Result of [`hypercontractivity_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct HypercontractivityReport {
    pub sigma: usize,
    pub q: f64,
    pub meshes: Vec<usize>,
    /// `sup_j ‖R_λ^σ (e_j/h)‖_q` per mesh.
    pub sup_norms: Vec<f64>,
    /// Relative change between the two finest meshes.
    pub last_relative_change: f64,
    pub stabilized: bool,
}

/// Relative change below which the refinement sweep counts as stabilized.
pub const HYPERCONTRACTIVITY_TOL: f64 = 0.05;

/// Sup over unit-`L₁` spikes of `‖R_λ^σ u‖_q` across mesh refinements.
pub fn hypercontractivity_check(lambda: f64, sigma: usize, q: f64, meshes: &[usize]) -> HypercontractivityReport {
    let mut sup_norms = Vec::with_capacity(meshes.len());
    for &m in meshes {
        let op = DirichletLaplacian::new(m);
        let h = op.mesh_width();
        let mut sup = 0.0_f64;
        for j in 0..m {
            let mut u = GridFunction::zeros(m);
            u.values_mut()[j] = 1.0 / h;
            for _ in 0..sigma {
                u = op.resolvent_apply(lambda, &u);
            }
            sup = sup.max(norm_q(&u, q));
        }
        sup_norms.push(sup);
    }
    let last_relative_change = match sup_norms.as_slice() {
        [.., a, b] => (b / a - 1.0).abs(),
        _ => 0.0,
    };
    HypercontractivityReport {
        sigma,
        q,
        meshes: meshes.to_vec(),
        sup_norms,
        last_relative_change,
        stabilized: last_relative_change < HYPERCONTRACTIVITY_TOL,
    }
}

/// `min_u Φ_q'(u)·Au` over the samples (0 for an empty sample set).
pub fn accretivity_certificate(op: &dyn DiscreteOperator, q: f64, samples: &[GridFunction]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|u| phi_grad_apply(u, q, &op.apply(u))).fold(f64::INFINITY, f64::min)
}
