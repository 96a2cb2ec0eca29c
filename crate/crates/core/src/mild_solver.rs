//! Time stepping for `du + Au dt + f(u) dt = ηu dt + B(u) dW` and pathwise
//! residual checks.
//!
//! All schemes are semi-implicit in `A` (one tridiagonal solve per step) and
//! explicit in the noise. The drift is explicit through the Yosida
//! approximant `f_λ` ([`solve_regularized`]) or implicit through the graph
//! resolvent ([`solve_proximal`]). The recorded selection `g_k` is the drift
//! used on step `k → k+1`, so every scheme obeys
//!
//! ```text
//! u_{k+1} = P(u_k + Δt(−g_k + ηu_k) + B_k ΔW_k)
//! ```
//!
//! with `P` one of `R_Δt`, `S(Δt)`.

use std::io::{self, Write};

use crate::accretive_operator::{DenseOperator, DiscreteOperator};
use crate::error::{Error, Result};
use crate::lq_space::{gamma_norm, norm_q, phi_grad_apply, phi_value, GridFunction, GridOperator, NoiseOperatorValue};
use crate::monotone_graph::MonotoneGraph;
use crate::noise_model::{DiffusionCoefficient, IncrementTable, TimeGrid, WienerDriver};

/// Tolerance for the graph-consistency check on recorded selections.
pub const GRAPH_TOL: f64 = 1e-9;

/// Number of residual checkpoints per trajectory (plus `t = 0`).
pub const CHECKPOINTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub horizon: f64,
    pub dt: f64,
    /// Yosida parameter; 0 selects the proximal scheme.
    pub lambda: f64,
    pub eta: f64,
    pub alpha: f64,
    pub q: f64,
    pub p: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { horizon: 0.5, dt: 1e-3, lambda: 0.0, eta: 0.0, alpha: 0.0, q: 2.0, p: 2.0 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.q >= 2.0) {
            return Err(Error::InvalidParameter(format!("q must be ≥ 2, got {}", self.q)));
        }
        if !(self.p > 0.0) {
            return Err(Error::InvalidParameter(format!("p must be positive, got {}", self.p)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!("λ must be ≥ 0, got {}", self.lambda)));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!("α must be ≥ 0, got {}", self.alpha)));
        }
        if !self.eta.is_finite() {
            return Err(Error::InvalidParameter("η must be finite".into()));
        }
        self.grid().map(|_| ())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::covering(self.horizon, self.dt)
    }

    /// Non-fatal warnings about the configuration.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.eta * self.horizon > 20.0 {
            out.push(format!("ηT = {} > 20: solutions may grow by e^{{ηT}}", self.eta * self.horizon));
        }
        out
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }
}

/// The three ingredients of the equation.
#[derive(Clone, Copy)]
pub struct Model<'a> {
    pub operator: &'a dyn DiscreteOperator,
    pub graph: &'a MonotoneGraph,
    pub noise: &'a DiffusionCoefficient,
}

/// How the recorded selections relate to the states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectionKind {
    /// No drift recorded (stochastic convolution, zero selections).
    None,
    /// `g_k = f_λ(u_k) ∈ f(J_λ u_k)`.
    Yosida { lambda: f64 },
    /// `g_k ∈ f(u_{k+1})`.
    Proximal,
    /// `g_k = f(u_k)` for a single-valued Lipschitz drift.
    Explicit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub grid: TimeGrid,
    /// `u(t_0), …, u(t_K)`.
    pub states: Vec<GridFunction>,
    /// `g_0, …, g_{K−1}`.
    pub selections: Vec<GridFunction>,
    pub selection_kind: SelectionKind,
    /// `ΔW_0, …, ΔW_{K−1}`.
    pub increments: Vec<Vec<f64>>,
    /// `B(t_k, u_k)`, `k < K`.
    pub noise: Vec<NoiseOperatorValue>,
}

impl TrajectoryRecord {
    pub fn steps(&self) -> usize {
        self.grid.steps
    }

    pub fn time(&self, k: usize) -> f64 {
        self.grid.time(k)
    }

    pub fn initial(&self) -> &GridFunction {
        &self.states[0]
    }

    pub fn final_state(&self) -> &GridFunction {
        &self.states[self.states.len() - 1]
    }

    /// `max_k e^{−αt_k}‖u(t_k)‖_q`.
    pub fn sup_norm(&self, q: f64, alpha: f64) -> f64 {
        self.states
            .iter()
            .enumerate()
            .map(|(k, u)| (-alpha * self.time(k)).exp() * norm_q(u, q))
            .fold(0.0, f64::max)
    }

    /// `max_k e^{−αt_k}‖u(t_k) − v(t_k)‖_q`.
    pub fn sup_distance(&self, other: &TrajectoryRecord, q: f64, alpha: f64) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!("{:?} vs {:?}", self.grid, other.grid)));
        }
        Ok(self
            .states
            .iter()
            .zip(&other.states)
            .enumerate()
            .map(|(k, (u, v))| (-alpha * self.time(k)).exp() * norm_q(&(u - v), q))
            .fold(0.0, f64::max))
    }

    /// Nodal values at which `g_k` must lie in the graph.
    pub fn selection_point(&self, graph: &MonotoneGraph, k: usize) -> Result<GridFunction> {
        match self.selection_kind {
            SelectionKind::Yosida { lambda } => {
                let mut out = self.states[k].clone();
                for v in out.values_mut() {
                    *v = graph.resolvent(lambda, *v)?;
                }
                Ok(out)
            }
            SelectionKind::Proximal => Ok(self.states[k + 1].clone()),
            SelectionKind::None | SelectionKind::Explicit => Ok(self.states[k].clone()),
        }
    }

    /// Largest distance of a recorded selection from the graph.
    pub fn graph_violation(&self, graph: &MonotoneGraph) -> Result<f64> {
        let mut worst = 0.0f64;
        for (k, g) in self.selections.iter().enumerate() {
            let x = self.selection_point(graph, k)?;
            for (&xi, &gi) in x.values().iter().zip(g.values()) {
                worst = worst.max(graph.eval_interval(xi).distance(gi));
            }
        }
        Ok(worst)
    }

    /// Indices of the residual checkpoints: every `⌈K/16⌉` steps, plus `K`.
    pub fn checkpoints(&self) -> Vec<usize> {
        checkpoints(self.steps())
    }

    /// One CSV row per checkpoint: `t, ‖u‖_q, ‖g‖_1, ‖B‖_γ, slack`.
    pub fn summary_csv(&self, q: f64, slack: &[f64]) -> String {
        let mut out = String::from("t,norm_u,norm_g_l1,norm_b_gamma,slack\n");
        for k in self.checkpoints() {
            let g = self.selections.get(k).map_or(0.0, |g| norm_q(g, 1.0));
            let b = self.noise.get(k).map_or(0.0, |b| gamma_norm(b, q));
            let s = slack.get(k).copied().unwrap_or(f64::NAN);
            out.push_str(&format!("{},{},{},{},{}\n", self.time(k), norm_q(&self.states[k], q), g, b, s));
        }
        out
    }

    /// Full state dump: little-endian `u64` node count, `u64` step count,
    /// then `(steps+1)·M` `f64` values, row-major in time.
    pub fn write_state_dump(&self, w: &mut impl Write) -> io::Result<()> {
        let m = self.states[0].len() as u64;
        w.write_all(&m.to_le_bytes())?;
        w.write_all(&(self.steps() as u64).to_le_bytes())?;
        for u in &self.states {
            for v in u.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

pub fn checkpoints(steps: usize) -> Vec<usize> {
    let stride = steps.div_ceil(CHECKPOINTS).max(1);
    let mut out: Vec<usize> = (0..=steps).step_by(stride).collect();
    if out.last() != Some(&steps) {
        out.push(steps);
    }
    out
}

fn check_finite(u: &GridFunction, step: usize) -> Result<()> {
    if u.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteState { step })
    }
}

fn check_dimensions(model: &Model<'_>, u0: &GridFunction, increments: &IncrementTable) -> Result<()> {
    if u0.len() != model.operator.dimension() {
        return Err(Error::GridMismatch(format!(
            "initial state has {} nodes, operator has {}",
            u0.len(),
            model.operator.dimension()
        )));
    }
    let modes = model.noise.mode_count();
    if let Some(row) = increments.values.first() {
        if row.len() != modes {
            return Err(Error::GridMismatch(format!("{} increment modes for {modes} noise modes", row.len())));
        }
    }
    Ok(())
}

/// Proximal pair `(J_Δt x, g)` with `g ∈ f(J_Δt x)` equal to `(x − J_Δt x)/Δt`
/// where the graph is multivalued.
pub fn proximal_pair(graph: &MonotoneGraph, dt: f64, x: f64) -> Result<(f64, f64)> {
    let y = graph.resolvent(dt, x)?;
    let at = graph.eval_interval(y);
    let g = if at.is_point() { at.lo } else { at.clamp((x - y) / dt) };
    Ok((y, g))
}

/// Discrete stochastic convolution `u_{k+1} = S(Δt)(u_k + G(t_k)ΔW_k)`,
/// `u_0 = 0`, for additive `G`.
pub fn stochastic_convolution(
    operator: &dyn DiscreteOperator,
    g: &DiffusionCoefficient,
    driver: &WienerDriver,
    path_id: u64,
    grid: TimeGrid,
) -> Result<TrajectoryRecord> {
    let increments = driver.sample_increments(path_id, grid)?;
    stochastic_convolution_with(operator, g, &increments)
}

pub fn stochastic_convolution_with(
    operator: &dyn DiscreteOperator,
    g: &DiffusionCoefficient,
    increments: &IncrementTable,
) -> Result<TrajectoryRecord> {
    if !g.is_additive() {
        return Err(Error::InvalidParameter("stochastic convolution needs an additive integrand".into()));
    }
    let grid = increments.grid;
    let m = operator.dimension();
    let s = operator.semigroup_matrix(grid.dt);
    let zero = GridFunction::zeros(m);
    let mut states = Vec::with_capacity(grid.steps + 1);
    let mut noise = Vec::with_capacity(grid.steps);
    states.push(zero.clone());
    for (k, dw) in increments.values.iter().enumerate() {
        let gk = g.evaluate(grid.time(k), &zero);
        let mut x = states[k].clone();
        x += &gk.apply(dw);
        states.push(s.apply(&x));
        noise.push(gk);
    }
    Ok(TrajectoryRecord {
        grid,
        states,
        selections: Vec::new(),
        selection_kind: SelectionKind::None,
        increments: increments.values.clone(),
        noise,
    })
}

/// Yosida-regularized equation with the explicit drift `f_λ`.
pub fn solve_regularized(
    cfg: &SolverConfig,
    model: Model<'_>,
    u0: &GridFunction,
    driver: &WienerDriver,
    path_id: u64,
) -> Result<TrajectoryRecord> {
    let increments = driver.sample_increments(path_id, cfg.grid()?)?;
    solve_regularized_with(cfg, model, u0, &increments)
}

pub fn solve_regularized_with(
    cfg: &SolverConfig,
    model: Model<'_>,
    u0: &GridFunction,
    increments: &IncrementTable,
) -> Result<TrajectoryRecord> {
    if !(cfg.lambda > 0.0) {
        return Err(Error::InvalidParameter("the regularized scheme needs λ > 0".into()));
    }
    let lambda = cfg.lambda;
    step_scheme(cfg, model, u0, increments, SelectionKind::Yosida { lambda }, |u, dt, pre| {
        let mut g = u.clone();
        for v in g.values_mut() {
            *v = model.graph.yosida(lambda, *v)?;
        }
        let mut x = pre;
        x.axpy(-dt, &g);
        Ok((model.operator.resolvent_apply(dt, &x), g))
    })
}

/// Scheme with the drift treated by the exact graph resolvent (`λ = 0`).
pub fn solve_proximal(
    cfg: &SolverConfig,
    model: Model<'_>,
    u0: &GridFunction,
    driver: &WienerDriver,
    path_id: u64,
) -> Result<TrajectoryRecord> {
    let increments = driver.sample_increments(path_id, cfg.grid()?)?;
    solve_proximal_with(cfg, model, u0, &increments)
}

pub fn solve_proximal_with(
    cfg: &SolverConfig,
    model: Model<'_>,
    u0: &GridFunction,
    increments: &IncrementTable,
) -> Result<TrajectoryRecord> {
    step_scheme(cfg, model, u0, increments, SelectionKind::Proximal, |_, dt, pre| {
        let mut next = model.operator.resolvent_apply(dt, &pre);
        let mut g = GridFunction::zeros(next.len());
        for (v, gi) in next.values_mut().iter_mut().zip(g.values_mut()) {
            let (y, s) = proximal_pair(model.graph, dt, *v)?;
            *v = y;
            *gi = s;
        }
        Ok((next, g))
    })
}

/// Dispatches on `cfg.lambda`: proximal when 0, regularized otherwise.
pub fn solve_with(
    cfg: &SolverConfig,
    model: Model<'_>,
    u0: &GridFunction,
    increments: &IncrementTable,
) -> Result<TrajectoryRecord> {
    if cfg.lambda == 0.0 {
        solve_proximal_with(cfg, model, u0, increments)
    } else {
        solve_regularized_with(cfg, model, u0, increments)
    }
}

/// Runs `u_{k+1}, g_k = step(u_k, Δt, u_k + Δtηu_k + B_kΔW_k)`.
fn step_scheme(
    cfg: &SolverConfig,
    model: Model<'_>,
    u0: &GridFunction,
    increments: &IncrementTable,
    kind: SelectionKind,
    step: impl Fn(&GridFunction, f64, GridFunction) -> Result<(GridFunction, GridFunction)>,
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    check_dimensions(&model, u0, increments)?;
    let grid = increments.grid;
    if (grid.dt - cfg.dt).abs() > 1e-12 * cfg.dt {
        return Err(Error::GridMismatch(format!("increments on Δt = {}, config Δt = {}", grid.dt, cfg.dt)));
    }
    let dt = grid.dt;
    let mut states = Vec::with_capacity(grid.steps + 1);
    let mut selections = Vec::with_capacity(grid.steps);
    let mut noise = Vec::with_capacity(grid.steps);
    check_finite(u0, 0)?;
    states.push(u0.clone());
    for (k, dw) in increments.values.iter().enumerate() {
        let u = &states[k];
        let b = model.noise.evaluate(grid.time(k), u);
        let mut pre = u * (1.0 + dt * cfg.eta);
        pre += &b.apply(dw);
        let (next, g) = step(u, dt, pre)?;
        check_finite(&next, k + 1)?;
        states.push(next);
        selections.push(g);
        noise.push(b);
    }
    Ok(TrajectoryRecord { grid, states, selections, selection_kind: kind, increments: increments.values.clone(), noise })
}

/// Result of [`solve_lipschitz_fixed_point`].
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointOutcome {
    pub trajectory: TrajectoryRecord,
    /// Sup-norm distance between consecutive iterates.
    pub distances: Vec<f64>,
    /// `distances[n+1] / distances[n]`.
    pub ratios: Vec<f64>,
    pub iterations: usize,
}

/// Picard iteration of the discrete mild map for a Lipschitz drift `f`,
/// starting from the free evolution `S(t_k)u_0`.
#[allow(clippy::too_many_arguments)]
pub fn solve_lipschitz_fixed_point(
    cfg: &SolverConfig,
    operator: &dyn DiscreteOperator,
    drift: &(dyn Fn(f64) -> f64 + Sync),
    noise: &DiffusionCoefficient,
    u0: &GridFunction,
    increments: &IncrementTable,
    max_iters: usize,
    tol: f64,
) -> Result<FixedPointOutcome> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    cfg.validate()?;
    let grid = increments.grid;
    let dt = grid.dt;
    let s = operator.semigroup_matrix(dt);
    let mut current: Vec<GridFunction> = Vec::with_capacity(grid.steps + 1);
    current.push(u0.clone());
    for k in 0..grid.steps {
        current.push(s.apply(&current[k]));
    }
    let mut distances = Vec::new();
    let mut ratios = Vec::new();
    for iteration in 1..=max_iters {
        let (next, selections, noise_values) = mild_map(&s, cfg, drift, noise, u0, &current, increments)?;
        let d = current.iter().zip(&next).map(|(a, b)| (a - b).max_abs()).fold(0.0, f64::max);
        if let Some(&prev) = distances.last() {
            if prev > 0.0 {
                ratios.push(d / prev);
            }
        }
        distances.push(d);
        current = next;
        if d <= tol {
            let trajectory = TrajectoryRecord {
                grid,
                states: current,
                selections,
                selection_kind: SelectionKind::Explicit,
                increments: increments.values.clone(),
                noise: noise_values,
            };
            return Ok(FixedPointOutcome { trajectory, distances, ratios, iterations: iteration });
        }
        if !d.is_finite() {
            break;
        }
    }
    Err(Error::FixedPointDiverged { iterations: distances.len(), ratios })
}

type MildImage = (Vec<GridFunction>, Vec<GridFunction>, Vec<NoiseOperatorValue>);

fn mild_map(
    s: &DenseOperator,
    cfg: &SolverConfig,
    drift: &(dyn Fn(f64) -> f64 + Sync),
    noise: &DiffusionCoefficient,
    u0: &GridFunction,
    path: &[GridFunction],
    increments: &IncrementTable,
) -> Result<MildImage> {
    let grid = increments.grid;
    let dt = grid.dt;
    let mut out = Vec::with_capacity(path.len());
    let mut selections = Vec::with_capacity(grid.steps);
    let mut noise_values = Vec::with_capacity(grid.steps);
    out.push(u0.clone());
    for (k, dw) in increments.values.iter().enumerate() {
        let u = &path[k];
        let g = u.map(drift);
        let b = noise.evaluate(grid.time(k), u);
        let mut x = out[k].clone();
        x.axpy(-dt, &g);
        x.axpy(dt * cfg.eta, u);
        x += &b.apply(dw);
        let next = s.apply(&x);
        check_finite(&next, k + 1)?;
        out.push(next);
        selections.push(g);
        noise_values.push(b);
    }
    Ok((out, selections, noise_values))
}

/// Γ iteration with frozen noise: `u⁰ ≡ u₀`, and `uⁿ` solves the proximal
/// scheme with the additive coefficient `t_k ↦ B(t_k, u^{n−1}(t_k))`.
/// Returns `u¹, …, u^{n_outer}`, all driven by the same increments.
pub fn gamma_iteration(
    cfg: &SolverConfig,
    model: Model<'_>,
    u0: &GridFunction,
    increments: &IncrementTable,
    n_outer: usize,
) -> Result<Vec<TrajectoryRecord>> {
    if n_outer == 0 {
        return Err(Error::InvalidParameter("need at least one outer iteration".into()));
    }
    let grid = increments.grid;
    let mut previous: Vec<GridFunction> = vec![u0.clone(); grid.steps + 1];
    let mut out = Vec::with_capacity(n_outer);
    for _ in 0..n_outer {
        let frozen: Vec<NoiseOperatorValue> =
            (0..grid.steps).map(|k| model.noise.evaluate(grid.time(k), &previous[k])).collect();
        let frozen = DiffusionCoefficient::Schedule { steps: std::sync::Arc::new(frozen), dt: grid.dt };
        let inner = Model { noise: &frozen, ..model };
        let traj = solve_proximal_with(cfg, inner, u0, increments)?;
        previous.clone_from(&traj.states);
        out.push(traj);
    }
    Ok(out)
}

/// Max over checkpoints of the discrete mild-identity defect
/// `‖u(t_k) + Σ S(t_k−t_j)(g_j − ηu_j)Δt − S(t_k)u₀ − Σ S(t_k−t_j)B_jΔW_j‖_q`.
pub fn mild_residual(traj: &TrajectoryRecord, operator: &dyn DiscreteOperator, eta: f64, q: f64) -> f64 {
    let dt = traj.grid.dt;
    let s = operator.semigroup_matrix(dt);
    let marks = traj.checkpoints();
    let mut mild = traj.initial().clone();
    let mut worst = 0.0f64;
    let mut next_mark = 1;
    for k in 0..traj.steps() {
        let mut x = mild;
        if let Some(g) = traj.selections.get(k) {
            x.axpy(-dt, g);
        }
        x.axpy(dt * eta, &traj.states[k]);
        x += &traj.noise[k].apply(&traj.increments[k]);
        mild = s.apply(&x);
        if next_mark < marks.len() && marks[next_mark] == k + 1 {
            worst = worst.max(norm_q(&(&traj.states[k + 1] - &mild), q));
            next_mark += 1;
        }
    }
    worst
}

/// Slack `RHS − LHS` of the discrete energy inequality
///
/// ```text
/// ‖u_k‖^q ≤ ‖u_0‖^q + Σ_{j<k} Φ'(u_j)(−g_j + ηu_j)Δt + Σ_{j<k} Φ'(u_j)B_jΔW_j
///           + q(q−1)/2 Σ_{j<k} ‖B_j‖²_γ ‖u_j‖^{q−2} Δt
/// ```
///
/// at every grid time. `slack[0] = 0`.
pub fn ito_inequality_residual(traj: &TrajectoryRecord, eta: f64, q: f64) -> Vec<f64> {
    let dt = traj.grid.dt;
    let phi0 = phi_value(traj.initial(), q);
    let mut rhs = phi0;
    let mut out = Vec::with_capacity(traj.steps() + 1);
    out.push(0.0);
    for k in 0..traj.steps() {
        let u = &traj.states[k];
        let mut b = u * eta;
        if let Some(g) = traj.selections.get(k) {
            b.axpy(-1.0, g);
        }
        rhs += dt * phi_grad_apply(u, q, &b);
        let noise = &traj.noise[k];
        rhs += phi_grad_apply(u, q, &noise.apply(&traj.increments[k]));
        let gamma = gamma_norm(noise, q);
        if gamma > 0.0 {
            let weight = if q == 2.0 { 1.0 } else { norm_q(u, q).powf(q - 2.0) };
            rhs += 0.5 * q * (q - 1.0) * gamma * gamma * weight * dt;
        }
        out.push(rhs - phi_value(&traj.states[k + 1], q));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accretive_operator::DirichletLaplacian;
    use crate::noise_model::{eigen_profile_columns, LipschitzFn};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const M: usize = 31;

    fn zero_noise(modes: usize) -> DiffusionCoefficient {
        DiffusionCoefficient::zero(modes, M)
    }

    fn table(driver: &WienerDriver, path: u64, cfg: &SolverConfig) -> IncrementTable {
        driver.sample_increments(path, cfg.grid().unwrap()).unwrap()
    }

    fn cfg(horizon: f64, dt: f64, lambda: f64, eta: f64) -> SolverConfig {
        SolverConfig { horizon, dt, lambda, eta, ..SolverConfig::default() }
    }

    #[test]
    fn convolution_examples() {
        let a = DirichletLaplacian::new(M);
        let driver = WienerDriver::new(1, 3, 1e-3).unwrap();
        let grid = TimeGrid::new(1e-3, 100).unwrap();
        let zero = zero_noise(1);
        let traj = stochastic_convolution(&a, &zero, &driver, 0, grid).unwrap();
        assert!(traj.states.iter().all(|u| u.max_abs() == 0.0));

        // One column along v₁: the sine coefficient follows the scalar OU
        // recursion c_{k+1} = e^{−μ₁Δt}(c_k + ΔW_k).
        let g = DiffusionCoefficient::additive(NoiseOperatorValue::new(vec![a.eigenvector(1)]));
        let traj = stochastic_convolution(&a, &g, &driver, 7, grid).unwrap();
        let decay = (-a.eigenvalue(1) * grid.dt).exp();
        let mut c = 0.0;
        for k in 0..grid.steps {
            c = decay * (c + traj.increments[k][0]);
            let want = &a.eigenvector(1) * c;
            assert!((&traj.states[k + 1] - &want).max_abs() < 1e-12);
        }
        assert!(mild_residual(&traj, &a, 0.0, 2.0) < 1e-12);
    }

    #[test]
    fn regularized_examples() {
        let a = DirichletLaplacian::new(M);
        let driver = WienerDriver::new(1, 1, 1e-3).unwrap();
        let zero = zero_noise(1);
        let v1 = a.eigenvector(1);
        let c = cfg(0.1, 1e-3, 0.5, 0.0);
        let zero_graph = MonotoneGraph::zero();
        let model = Model { operator: &a, graph: &zero_graph, noise: &zero };
        let traj = solve_regularized(&c, model, &v1, &driver, 0).unwrap();
        let factor = (1.0 + c.dt * a.eigenvalue(1)).powi(100).recip();
        assert!((traj.final_state() - &(&v1 * factor)).max_abs() < 1e-12);

        // f = identity, η = 1: coefficient η − 1/(1+λ) on each mode.
        let id = MonotoneGraph::identity();
        let c1 = cfg(0.1, 1e-3, 0.5, 1.0);
        let model = Model { operator: &a, graph: &id, noise: &zero };
        let traj = solve_regularized(&c1, model, &v1, &driver, 0).unwrap();
        let step = (1.0 + c1.dt * (1.0 - 1.0 / 1.5)) / (1.0 + c1.dt * a.eigenvalue(1));
        assert!((traj.final_state() - &(&v1 * step.powi(100))).max_abs() < 1e-12);

        let sign = MonotoneGraph::sign();
        let c2 = cfg(0.1, 1e-3, 1.0, 0.0);
        let model = Model { operator: &a, graph: &sign, noise: &zero };
        let traj = solve_regularized(&c2, model, &GridFunction::zeros(M), &driver, 0).unwrap();
        assert!(traj.states.iter().all(|u| u.max_abs() == 0.0));
    }

    #[test]
    fn proximal_examples() {
        let a = DirichletLaplacian::new(M);
        let driver = WienerDriver::new(1, 1, 1e-4).unwrap();
        let zero = zero_noise(1);
        let v1 = a.eigenvector(1);

        // Identity: the proximal step divides by 1 + Δt, and the regularized
        // scheme approaches it as λ → 0.
        let id = MonotoneGraph::identity();
        let model = Model { operator: &a, graph: &id, noise: &zero };
        let c = cfg(0.1, 1e-3, 0.0, 0.0);
        let prox = solve_proximal(&c, model, &v1, &driver, 0).unwrap();
        let step = 1.0 / ((1.0 + c.dt * a.eigenvalue(1)) * (1.0 + c.dt));
        assert!((prox.final_state() - &(&v1 * step.powi(100))).max_abs() < 1e-12);
        // Per step the two schemes multiply by 1 − Δt/(1+λ) and 1/(1+Δt):
        // equal at λ = Δt, and O(Δt²) apart as λ → 0.
        for lambda in [1e-2, 1e-3, 1e-4, 1e-6] {
            let reg = solve_regularized(&c.with_lambda(lambda), model, &v1, &driver, 0).unwrap();
            let d = reg.sup_distance(&prox, 2.0, 0.0).unwrap();
            let per_step = (1.0 - c.dt / (1.0 + lambda)) / (1.0 + c.dt * a.eigenvalue(1));
            let want = (0..=100).map(|k| (per_step.powi(k) - step.powi(k)).abs()).fold(0.0, f64::max);
            assert_abs_diff_eq!(d, want * norm_q(&v1, 2.0), epsilon = 1e-12);
            assert!(d < 2.0 * c.dt);
        }

        // Sign with u₀ ≡ c: without diffusion the soft threshold reaches 0
        // after ⌈c/Δt⌉ steps. With A the decay is only faster.
        let sign = MonotoneGraph::sign();
        let model = Model { operator: &a, graph: &sign, noise: &zero };
        let c0 = 0.05;
        let c = cfg(0.1, 1e-3, 0.0, 0.0);
        let traj = solve_proximal(&c, model, &GridFunction::constant(M, c0), &driver, 0).unwrap();
        let hit = traj.states.iter().position(|u| u.max_abs() == 0.0).unwrap();
        assert!(hit as f64 * c.dt <= c0 + c.dt);
        assert!(traj.states[hit..].iter().all(|u| u.max_abs() == 0.0));
        assert_eq!(traj.graph_violation(&sign).unwrap(), 0.0);

        let traj = solve_proximal(&c, model, &GridFunction::zeros(M), &driver, 0).unwrap();
        assert!(traj.states.iter().chain(&traj.selections).all(|u| u.max_abs() == 0.0));
    }

    #[test]
    fn selections_lie_in_the_graph() {
        let a = DirichletLaplacian::new(M);
        let driver = WienerDriver::new(4, 9, 1e-3).unwrap();
        let noise = DiffusionCoefficient::additive(eigen_profile_columns(M, &[1.0, 0.5, 0.25, 0.125]));
        let u0 = GridFunction::from_fn(M, |x| (3.0 * x).sin());
        for name in ["sign", "signed_power:3", "step_plus_power:2"] {
            let graph = MonotoneGraph::from_name(name).unwrap();
            let model = Model { operator: &a, graph: &graph, noise: &noise };
            for lambda in [0.0, 1.0 / 16.0] {
                let c = cfg(0.1, 1e-3, lambda, 0.5);
                let traj = solve_with(&c, model, &u0, &table(&driver, 2, &c)).unwrap();
                assert!(traj.graph_violation(&graph).unwrap() <= GRAPH_TOL, "{name} λ = {lambda}");
            }
        }
    }

    #[test]
    fn runs_are_bit_reproducible() {
        let a = DirichletLaplacian::new(M);
        let driver = WienerDriver::new(2, 77, 1e-3).unwrap();
        let noise = DiffusionCoefficient::nemytskii(LipschitzFn::sin(1.0), vec![0.5, 0.25]);
        let graph = MonotoneGraph::sign();
        let model = Model { operator: &a, graph: &graph, noise: &noise };
        let c = cfg(0.05, 1e-3, 0.0, 0.0);
        let u0 = GridFunction::constant(M, 0.3);
        let first = solve_proximal(&c, model, &u0, &driver, 5).unwrap();
        assert_eq!(first, solve_proximal(&c, model, &u0, &driver, 5).unwrap());
    }

    #[test]
    fn fixed_point_examples() {
        let a = DirichletLaplacian::new(M);
        let zero = zero_noise(1);
        let driver = WienerDriver::new(1, 0, 5e-4).unwrap();
        let c = cfg(0.1, 1e-3, 1.0, 0.0);
        let inc = table(&driver, 0, &c);
        let u0 = GridFunction::from_fn(M, |x| 4.0 * x * (1.0 - x));

        let out = solve_lipschitz_fixed_point(&c, &a, &|_| 0.0, &zero, &u0, &inc, 10, 1e-12).unwrap();
        assert_eq!(out.iterations, 1);
        for (k, u) in out.trajectory.states.iter().enumerate() {
            assert!((u - &a.semigroup_apply(out.trajectory.time(k), &u0)).max_abs() < 1e-12);
        }

        let sign = MonotoneGraph::sign();
        let f = |x: f64| sign.yosida(1.0, x).unwrap();
        let out = solve_lipschitz_fixed_point(&c, &a, &f, &zero, &u0, &inc, 50, 1e-12).unwrap();
        // Lip(f_1) ≤ 2 and T = 0.1.
        assert!(out.ratios.iter().all(|&r| r <= 0.1 * 2.0 + 0.05), "{:?}", out.ratios);

        let model = Model { operator: &a, graph: &sign, noise: &zero };
        let reg = solve_regularized_with(&c, model, &u0, &inc).unwrap();
        let fine = c.with_dt(5e-4);
        let reg_fine = solve_regularized_with(&fine, model, &u0, &table(&driver, 0, &fine)).unwrap();
        let fp_fine = solve_lipschitz_fixed_point(&fine, &a, &f, &zero, &u0, &table(&driver, 0, &fine), 50, 1e-12)
            .unwrap();
        let gap = norm_q(&(reg.final_state() - out.trajectory.final_state()), 2.0);
        let gap_fine = norm_q(&(reg_fine.final_state() - fp_fine.trajectory.final_state()), 2.0);
        assert!(gap < 0.05 && gap_fine < 0.6 * gap, "{gap} {gap_fine}");

        let err = solve_lipschitz_fixed_point(&c, &a, &f, &zero, &u0, &inc, 2, 1e-14).unwrap_err();
        assert!(matches!(err, Error::FixedPointDiverged { .. }));
    }

    #[test]
    fn gamma_iteration_examples() {
        let a = DirichletLaplacian::new(M);
        let driver = WienerDriver::new(2, 4, 1e-3).unwrap();
        let c = cfg(0.1, 1e-3, 0.0, 0.0);
        let inc = table(&driver, 1, &c);
        let u0 = GridFunction::constant(M, 1.0);
        let graph = MonotoneGraph::sign();

        let additive = DiffusionCoefficient::additive(eigen_profile_columns(M, &[1.0, 0.5]));
        let model = Model { operator: &a, graph: &graph, noise: &additive };
        let it = gamma_iteration(&c, model, &u0, &inc, 3).unwrap();
        assert_eq!(it[0].states, it[1].states);
        assert_eq!(it[1].states, it[2].states);

        let zero = zero_noise(2);
        let model = Model { operator: &a, graph: &graph, noise: &zero };
        let it = gamma_iteration(&c, model, &u0, &inc, 2).unwrap();
        let direct = solve_proximal_with(&c, model, &u0, &inc).unwrap();
        assert_eq!(it[0].states, direct.states);
        assert_eq!(it[1].states, direct.states);

        let mult = DiffusionCoefficient::nemytskii(LipschitzFn::linear(0.3), vec![1.0, 0.0]);
        let model = Model { operator: &a, graph: &graph, noise: &mult };
        let it = gamma_iteration(&c, model, &u0, &inc, 5).unwrap();
        let d: Vec<f64> = it.windows(2).map(|w| w[0].sup_distance(&w[1], 2.0, 0.0).unwrap()).collect();
        assert!(d.windows(2).all(|w| w[1] < w[0]), "{d:?}");
    }

    #[test]
    fn mild_residual_is_first_order_without_noise() {
        let a = DirichletLaplacian::new(M);
        let zero = zero_noise(1);
        let u0 = a.eigenvector(1);
        let residual = |graph: &MonotoneGraph, dt: f64| {
            let driver = WienerDriver::new(1, 0, dt).unwrap();
            let c = cfg(0.25, dt, 0.0, 0.0);
            let model = Model { operator: &a, graph, noise: &zero };
            let traj = solve_proximal(&c, model, &u0, &driver, 0).unwrap();
            mild_residual(&traj, &a, 0.0, 2.0)
        };
        for graph in [MonotoneGraph::signed_power(1.0).unwrap(), MonotoneGraph::sign()] {
            let (r1, r2) = (residual(&graph, 2e-3), residual(&graph, 1e-3));
            let slope = (r1 / r2).log2();
            assert!((slope - 1.0).abs() < 0.2, "{} slope {slope}", graph.name());
        }
    }

    #[test]
    fn ito_slack_examples() {
        let a = DirichletLaplacian::new(M);
        let driver = WienerDriver::new(1, 8, 1e-3).unwrap();
        let c = cfg(0.2, 1e-3, 0.0, 0.0);
        let u0 = GridFunction::from_fn(M, |x| x * (1.0 - x));
        let zero = zero_noise(1);
        let zero_graph = MonotoneGraph::zero();
        let model = Model { operator: &a, graph: &zero_graph, noise: &zero };
        let traj = solve_proximal(&c, model, &u0, &driver, 0).unwrap();
        for q in [2.0, 4.0] {
            assert!(ito_inequality_residual(&traj, 0.0, q).iter().all(|&s| s >= 0.0));
        }

        // q = 2, additive noise, f = 0, exponential Euler: the slack is the
        // discrete accretivity term plus a martingale correction whose mean
        // is zero. Its average over paths must be positive.
        let g = DiffusionCoefficient::additive(NoiseOperatorValue::new(vec![a.eigenvector(2)]));
        let mut mean_final = 0.0;
        for path in 0..200 {
            let model = Model { operator: &a, graph: &zero_graph, noise: &g };
            let traj = solve_proximal(&c, model, &u0, &driver, path).unwrap();
            let slack = ito_inequality_residual(&traj, 0.0, 2.0);
            // Accretivity identity: Σ (‖x_j‖² − ‖R x_j‖²) is nonnegative.
            mean_final += slack[slack.len() - 1] / 200.0;
        }
        assert!(mean_final > 0.0);
    }

    #[test]
    fn checkpoint_layout() {
        assert_eq!(checkpoints(32), (0..=32).step_by(2).collect::<Vec<_>>());
        let c = checkpoints(500);
        assert_eq!(c[1], 32);
        assert_eq!(*c.last().unwrap(), 500);
        assert_eq!(checkpoints(5), vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn state_dump_layout() {
        let traj = TrajectoryRecord {
            grid: TimeGrid::new(0.1, 1).unwrap(),
            states: vec![GridFunction::new(vec![1.0, 2.0]), GridFunction::new(vec![3.0, 4.0])],
            selections: Vec::new(),
            selection_kind: SelectionKind::None,
            increments: vec![vec![0.0]],
            noise: vec![NoiseOperatorValue::zeros(1, 2)],
        };
        let mut buf = Vec::new();
        traj.write_state_dump(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 4 * 8);
        assert_eq!(u64::from_le_bytes(buf[0..8].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 1);
        assert_abs_diff_eq!(f64::from_le_bytes(buf[40..48].try_into().unwrap()), 4.0);
    }

    #[test]
    fn yosida_family_improves_with_lambda() {
        for name in ["sign", "signed_power:3", "step_plus_power:2"] {
            let graph = MonotoneGraph::from_name(name).unwrap();
            for i in 0..200 {
                let x = -5.0 + 0.05 * i as f64;
                let mut last = f64::INFINITY;
                for lambda in [1.0 / 64.0, 1.0 / 16.0, 0.25, 1.0] {
                    let v = graph.yosida(lambda, x).unwrap().abs();
                    assert!(v <= last + 1e-12, "{name} x = {x} λ = {lambda}");
                    last = v;
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn contraction_without_noise(
            values in proptest::collection::vec(-3.0f64..3.0, M),
            eta in -2.0f64..0.0,
            graph_index in 0usize..3,
            lambda_index in 0usize..3,
            q in prop_oneof![Just(2.0), Just(3.0), Just(4.0)],
        ) {
            let a = DirichletLaplacian::new(M);
            let graph = MonotoneGraph::from_name(["sign", "signed_power:3", "identity"][graph_index]).unwrap();
            let zero = zero_noise(1);
            let model = Model { operator: &a, graph: &graph, noise: &zero };
            let c = cfg(0.02, 1e-3, [0.0, 1.0 / 64.0, 1.0][lambda_index], eta);
            let driver = WienerDriver::new(1, 0, 1e-3).unwrap();
            let traj = solve_with(&c, model, &GridFunction::new(values), &table(&driver, 0, &c)).unwrap();
            for w in traj.states.windows(2) {
                prop_assert!(norm_q(&w[1], q) <= norm_q(&w[0], q) * (1.0 + 1e-12) + 1e-15);
            }
        }
    }
}
