//! Truncated cylindrical Wiener process and diffusion coefficients `B`.
//!
//! The Hilbert space `H` is truncated to its first `m` basis vectors. Wiener
//! increments are counter-based: the increment of mode `k` over fine step
//! `j` on path `p` is a pure function of `(seed, p, j, k)`. Coarser grids sum
//! consecutive fine increments, so runs with `Δt` and `Δt/2` see the same
//! Brownian path.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lq_space::{gamma_norm, norm_q, GridFunction, NoiseOperatorValue};
use crate::rng::standard_normal;

/// Source of reproducible Wiener increments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WienerDriver {
    modes: usize,
    seed: u64,
    fine_dt: f64,
}

/// Uniform time grid `t_k = kΔt`, `k = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
        }
        Ok(Self { dt, steps })
    }

    /// Grid over `[0, horizon]`; `horizon/dt` must be an integer.
    pub fn covering(horizon: f64, dt: f64) -> Result<Self> {
        let ratio = horizon / dt;
        let steps = ratio.round();
        if !(dt > 0.0) || (ratio - steps).abs() > 1e-9 * ratio.max(1.0) || steps < 1.0 {
            return Err(Error::InvalidParameter(format!("T/Δt = {horizon}/{dt} is not a positive integer")));
        }
        Self::new(dt, steps as usize)
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.steps)
    }
}

/// Increments `ΔW_k` for one path: `values[k][mode]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementTable {
    pub grid: TimeGrid,
    pub values: Vec<Vec<f64>>,
}

impl WienerDriver {
    /// `fine_dt` is the finest step any simulation will use; coarser steps
    /// must be integer multiples of it.
    pub fn new(modes: usize, seed: u64, fine_dt: f64) -> Result<Self> {
        if modes == 0 {
            return Err(Error::InvalidParameter("noise needs at least one mode".into()));
        }
        if !(fine_dt > 0.0) {
            return Err(Error::InvalidParameter(format!("fine step must be positive, got {fine_dt}")));
        }
        Ok(Self { modes, seed, fine_dt })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fine_dt(&self) -> f64 {
        self.fine_dt
    }

    /// Increment of `mode` over fine step `fine_step`.
    pub fn fine_increment(&self, path_id: u64, fine_step: u64, mode: usize) -> f64 {
        self.fine_dt.sqrt() * standard_normal(&[self.seed, path_id, fine_step, mode as u64])
    }

    fn stride(&self, dt: f64) -> Result<u64> {
        let ratio = dt / self.fine_dt;
        let stride = ratio.round();
        if stride < 1.0 || (ratio - stride).abs() > 1e-9 * ratio {
            return Err(Error::InvalidParameter(format!(
                "step {dt} is not a multiple of the driver's fine step {}",
                self.fine_dt
            )));
        }
        Ok(stride as u64)
    }

    /// Increments on `grid` for `path_id`; identical inputs give identical
    /// tables.
    pub fn sample_increments(&self, path_id: u64, grid: TimeGrid) -> Result<IncrementTable> {
        let stride = self.stride(grid.dt)?;
        let values = (0..grid.steps as u64)
            .map(|k| {
                (0..self.modes)
                    .map(|mode| (0..stride).map(|j| self.fine_increment(path_id, k * stride + j, mode)).sum())
                    .collect()
            })
            .collect();
        Ok(IncrementTable { grid, values })
    }
}

/// Scalar Lipschitz function used by Nemytskii coefficients.
#[derive(Clone)]
pub struct LipschitzFn {
    name: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    lipschitz: f64,
}

impl fmt::Debug for LipschitzFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LipschitzFn({}, L = {})", self.name, self.lipschitz)
    }
}

impl LipschitzFn {
    pub fn new(name: impl Into<String>, f: Arc<dyn Fn(f64) -> f64 + Send + Sync>, lipschitz: f64) -> Self {
        Self { name: name.into(), f, lipschitz }
    }

    /// `κx`.
    pub fn linear(kappa: f64) -> Self {
        Self::new(format!("linear:{kappa}"), Arc::new(move |x| kappa * x), kappa.abs())
    }

    /// `κ sin x`.
    pub fn sin(kappa: f64) -> Self {
        Self::new(format!("sin:{kappa}"), Arc::new(move |x: f64| kappa * x.sin()), kappa.abs())
    }

    /// `κ tanh x`.
    pub fn tanh(kappa: f64) -> Self {
        Self::new(format!("tanh:{kappa}"), Arc::new(move |x: f64| kappa * x.tanh()), kappa.abs())
    }

    /// `linear:<κ>`, `sin[:<κ>]`, `tanh[:<κ>]`.
    pub fn from_name(spec: &str) -> Result<Self> {
        let (kind, param) = match spec.trim().split_once(':') {
            Some((k, p)) => (k.trim(), Some(p.trim())),
            None => (spec.trim(), None),
        };
        let kappa = match param {
            Some(p) => p
                .parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("bad coefficient `{p}` in `{spec}`")))?,
            None => 1.0,
        };
        match kind {
            "linear" => Ok(Self::linear(kappa)),
            "sin" => Ok(Self::sin(kappa)),
            "tanh" => Ok(Self::tanh(kappa)),
            _ => Err(Error::InvalidParameter(format!("unknown noise function `{spec}`"))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

/// Mode weights `γ_k`.
pub fn parse_weights(spec: &str, modes: usize) -> Result<Vec<f64>> {
    let spec = spec.trim();
    let bad = || Error::InvalidParameter(format!("bad weight spec `{spec}`"));
    if let Some(r) = spec.strip_prefix("geometric:") {
        let r: f64 = r.trim().parse().map_err(|_| bad())?;
        return Ok((1..=modes).map(|k| r.powi(k as i32)).collect());
    }
    if let Some(c) = spec.strip_prefix("uniform:") {
        let c: f64 = c.trim().parse().map_err(|_| bad())?;
        return Ok(vec![c; modes]);
    }
    if let Some(list) = spec.strip_prefix("list:") {
        let w = list.split(',').map(|s| s.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<Vec<_>>>()?;
        if w.len() != modes {
            return Err(Error::InvalidParameter(format!("{} weights given for {modes} modes", w.len())));
        }
        return Ok(w);
    }
    Err(bad())
}

/// Additive columns `γ_k √2 sin(kπx)` on `nodes` interior nodes.
pub fn eigen_profile_columns(nodes: usize, weights: &[f64]) -> NoiseOperatorValue {
    NoiseOperatorValue::new(
        weights
            .iter()
            .enumerate()
            .map(|(k, &g)| {
                let kk = (k + 1) as f64;
                GridFunction::from_fn(nodes, |x| g * 2f64.sqrt() * (kk * std::f64::consts::PI * x).sin())
            })
            .collect(),
    )
}

/// Diffusion coefficient `B(t, u) ∈ γ(H, L_q)`.
#[derive(Clone)]
pub enum DiffusionCoefficient {
    /// `B(t) = profile(t)·T` with fixed columns `T`.
    Additive { columns: NoiseOperatorValue, profile: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>> },
    /// Additive, given per time step: `B(t) = steps[⌊t/Δt⌋]`.
    Schedule { steps: Arc<Vec<NoiseOperatorValue>>, dt: f64 },
    /// Column `k` is `γ_k b_k(u)` pointwise.
    NemytskiiDiagonal { functions: Vec<LipschitzFn>, weights: Vec<f64> },
}

impl fmt::Debug for DiffusionCoefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Additive { columns, profile } => f
                .debug_struct("Additive")
                .field("modes", &columns.mode_count())
                .field("time_dependent", &profile.is_some())
                .finish(),
            Self::Schedule { steps, dt } => {
                f.debug_struct("Schedule").field("steps", &steps.len()).field("dt", dt).finish()
            }
            Self::NemytskiiDiagonal { functions, weights } => f
                .debug_struct("NemytskiiDiagonal")
                .field("functions", functions)
                .field("weights", weights)
                .finish(),
        }
    }
}

impl DiffusionCoefficient {
    pub fn additive(columns: NoiseOperatorValue) -> Self {
        Self::Additive { columns, profile: None }
    }

    pub fn zero(modes: usize, nodes: usize) -> Self {
        Self::additive(NoiseOperatorValue::zeros(modes, nodes))
    }

    /// Same function `b` in every mode, with weights `γ_k`.
    pub fn nemytskii(b: LipschitzFn, weights: Vec<f64>) -> Self {
        Self::NemytskiiDiagonal { functions: vec![b; weights.len()], weights }
    }

    pub fn mode_count(&self) -> usize {
        match self {
            Self::Additive { columns, .. } => columns.mode_count(),
            Self::Schedule { steps, .. } => steps.first().map_or(0, NoiseOperatorValue::mode_count),
            Self::NemytskiiDiagonal { weights, .. } => weights.len(),
        }
    }

    pub fn is_additive(&self) -> bool {
        !matches!(self, Self::NemytskiiDiagonal { .. })
    }

    /// `‖B‖_{Ċ^{0,1}}`: 0 for additive noise, `(Σ γ_k² Lip(b_k)²)^{1/2}`
    /// for diagonal Nemytskii noise.
    pub fn lipschitz_bound(&self) -> f64 {
        match self {
            Self::NemytskiiDiagonal { functions, weights } => {
                functions.iter().zip(weights).map(|(b, g)| (g * b.lipschitz()).powi(2)).sum::<f64>().sqrt()
            }
            _ => 0.0,
        }
    }

    pub fn evaluate(&self, t: f64, u: &GridFunction) -> NoiseOperatorValue {
        match self {
            Self::Additive { columns, profile } => match profile {
                Some(p) => {
                    let s = p(t);
                    columns.map_columns(|c| c * s)
                }
                None => columns.clone(),
            },
            Self::Schedule { steps, dt } => {
                let k = ((t / dt + 1e-9).floor() as usize).min(steps.len() - 1);
                steps[k].clone()
            }
            Self::NemytskiiDiagonal { functions, weights } => NoiseOperatorValue::new(
                functions.iter().zip(weights).map(|(b, &g)| u.map(|x| g * b.eval(x))).collect(),
            ),
        }
    }

    /// `c·B`.
    pub fn scaled(&self, c: f64) -> Self {
        match self {
            Self::Additive { columns, profile } => {
                Self::Additive { columns: columns.map_columns(|col| col * c), profile: profile.clone() }
            }
            Self::Schedule { steps, dt } => Self::Schedule {
                steps: Arc::new(steps.iter().map(|s| s.map_columns(|col| col * c)).collect()),
                dt: *dt,
            },
            Self::NemytskiiDiagonal { functions, weights } => Self::NemytskiiDiagonal {
                functions: functions.clone(),
                weights: weights.iter().map(|w| w * c).collect(),
            },
        }
    }

    /// Adds `delta·column` to mode `mode` of an additive coefficient.
    pub fn perturbed(&self, mode: usize, delta: f64, column: &GridFunction) -> Result<Self> {
        match self {
            Self::Additive { columns, profile } => {
                let mut columns = columns.clone();
                columns.columns_mut()[mode].axpy(delta, column);
                Ok(Self::Additive { columns, profile: profile.clone() })
            }
            _ => Err(Error::InvalidParameter("only fixed additive noise can be perturbed".into())),
        }
    }

    /// `∫₀ᵀ ‖B(t)‖²_γ dt` by the left-endpoint rule on `grid` (exact for
    /// step-wise constant additive noise).
    pub fn time_integrated_gamma_sq(&self, grid: TimeGrid, q: f64, nodes: usize) -> f64 {
        let zero = GridFunction::zeros(nodes);
        (0..grid.steps).map(|k| grid.dt * gamma_norm(&self.evaluate(grid.time(k), &zero), q).powi(2)).sum()
    }
}

/// Largest observed `‖B(u) − B(v)‖_γ / ‖u − v‖_q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzEstimate {
    pub estimate: f64,
    pub witness: usize,
    pub pairs: usize,
}

/// Minimum number of sample pairs for [`estimate_lipschitz`].
pub const MIN_LIPSCHITZ_PAIRS: usize = 100;

pub fn estimate_lipschitz(
    b: &DiffusionCoefficient,
    pairs: &[(GridFunction, GridFunction)],
    q: f64,
    t: f64,
) -> Result<LipschitzEstimate> {
    if pairs.len() < MIN_LIPSCHITZ_PAIRS {
        return Err(Error::InvalidParameter(format!(
            "Lipschitz estimate needs at least {MIN_LIPSCHITZ_PAIRS} pairs, got {}",
            pairs.len()
        )));
    }
    let mut best = LipschitzEstimate { estimate: 0.0, witness: 0, pairs: pairs.len() };
    for (i, (u, v)) in pairs.iter().enumerate() {
        let d = norm_q(&(u - v), q);
        if d == 0.0 {
            continue;
        }
        let ratio = gamma_norm(&(&b.evaluate(t, u) - &b.evaluate(t, v)), q) / d;
        if ratio > best.estimate {
            best.estimate = ratio;
            best.witness = i;
        }
    }
    let bound = b.lipschitz_bound();
    if best.estimate > bound * (1.0 + 1e-8) + 1e-300 {
        return Err(Error::LipschitzViolated { estimate: best.estimate, bound, witness: best.witness });
    }
    Ok(best)
}
