//! Monte Carlo functionals on simulated paths and the convergence /
//! stability studies built from them.
//!
//! Every study drives the configurations it compares with the same Wiener
//! increments (path `i` of every configuration uses path id `i` of one
//! [`WienerDriver`]), so differences estimate pathwise constants. Inequalities
//! with unknown constants are checked as boundedness plus stability across a
//! sweep, never against absolute numbers.

use std::panic::{catch_unwind, AssertUnwindSafe};

use rayon::prelude::*;

use crate::accretive_operator::DiscreteOperator;
use crate::error::{Error, Result};
use crate::lq_space::{norm_q, phi_grad_apply, phi_value, GridFunction, GridOperator};
use crate::mild_solver::{
    gamma_iteration, ito_inequality_residual, solve_with, stochastic_convolution_with, Model, SolverConfig,
    TrajectoryRecord,
};
use crate::monotone_graph::{phi_q, CompositeGraphs, MonotoneGraph};
use crate::noise_model::{DiffusionCoefficient, IncrementTable, TimeGrid, WienerDriver};
use crate::rng::{hash_words, SplitMix};

/// Smallest path count for a reported estimate.
pub const MIN_PATHS: usize = 30;
/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;
/// Resamples for bootstrap intervals.
pub const BOOTSTRAP_RESAMPLES: usize = 1000;
/// Allowed shortfall of the observed Cauchy rate below `1/q`.
pub const CAUCHY_SLOPE_SLACK: f64 = 0.25;
/// Largest CI half-width, relative to the estimate, accepted by the Cauchy
/// regression.
pub const CAUCHY_MAX_RELATIVE_CI: f64 = 0.30;
/// Uniformity band for a priori, Lipschitz and two-noise constants.
pub const STABILITY_BAND: f64 = 0.50;
/// Uniformity band for the integrability certificates.
pub const CERTIFICATE_BAND: f64 = 0.25;
/// Largest Fenchel–Young defect accepted on simulated paths.
pub const FENCHEL_YOUNG_TOL: f64 = 1e-6;
/// Relative tolerance for exact homogeneity of the maximal-inequality ratio.
pub const HOMOGENEITY_TOL: f64 = 1e-9;
/// Upper limit on the maximal-inequality ratio.
pub const MAXIMAL_RATIO_BOUND: f64 = 5.0;
/// Band on the halving of the Itô-inequality tolerance with `Δt`.
pub const SLACK_HALVING_BAND: f64 = 0.30;

/// Sample mean of a path functional with a 95% confidence half-width.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloEstimate {
    pub value: f64,
    pub half_width: f64,
    pub n_paths: usize,
    pub tag: String,
}

impl MonteCarloEstimate {
    /// An exactly known value.
    pub fn exact(value: f64, n_paths: usize, tag: impl Into<String>) -> Self {
        Self { value, half_width: 0.0, n_paths, tag: tag.into() }
    }

    /// `half_width / |value|` (0 when both vanish).
    pub fn relative_half_width(&self) -> f64 {
        if self.half_width == 0.0 {
            0.0
        } else {
            self.half_width / self.value.abs()
        }
    }

    /// The estimate divided by a known positive constant.
    pub fn scaled(&self, c: f64) -> Self {
        Self { value: self.value * c, half_width: self.half_width * c.abs(), ..self.clone() }
    }
}

fn check_count(n: usize) -> Result<()> {
    if n < MIN_PATHS {
        Err(Error::TooFewPaths { got: n, min: MIN_PATHS })
    } else {
        Ok(())
    }
}

fn mean_and_sd(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Plain sample mean with `half_width = 1.96·sd/√n`.
pub fn mean_estimate(samples: &[f64], tag: impl Into<String>) -> Result<MonteCarloEstimate> {
    check_count(samples.len())?;
    let (mean, sd) = mean_and_sd(samples);
    Ok(MonteCarloEstimate {
        value: mean,
        half_width: Z95 * sd / (samples.len() as f64).sqrt(),
        n_paths: samples.len(),
        tag: tag.into(),
    })
}

fn quantile(sorted: &[f64], level: f64) -> f64 {
    let pos = (level * (sorted.len() - 1) as f64).round() as usize;
    sorted[pos.min(sorted.len() - 1)]
}

/// Bootstrap replicates of `statistic` over resampled path indices.
fn bootstrap(n: usize, seed: u64, statistic: impl Fn(&[usize]) -> f64) -> Vec<f64> {
    let mut rng = SplitMix::new(seed);
    let mut idx = vec![0usize; n];
    let mut out: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            for i in idx.iter_mut() {
                *i = rng.below(n);
            }
            statistic(&idx)
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

/// `(mean of powered)^{1/p}` from samples `X_i^p`. The interval comes from
/// the delta method for `p ≥ 1` and from a percentile bootstrap for `p < 1`.
pub fn hp_from_powered(powered: &[f64], p: f64, tag: impl Into<String>) -> Result<MonteCarloEstimate> {
    check_count(powered.len())?;
    let tag = tag.into();
    let n = powered.len();
    let (mean, sd) = mean_and_sd(powered);
    let value = mean.powf(1.0 / p);
    let half_width = if sd == 0.0 || mean == 0.0 {
        0.0
    } else if p >= 1.0 {
        Z95 * sd / (n as f64).sqrt() * value / (p * mean)
    } else {
        let seed = hash_words(&[n as u64, mean.to_bits(), p.to_bits()]);
        let reps = bootstrap(n, seed, |idx| {
            (idx.iter().map(|&i| powered[i]).sum::<f64>() / n as f64).powf(1.0 / p)
        });
        0.5 * (quantile(&reps, 0.975) - quantile(&reps, 0.025))
    };
    Ok(MonteCarloEstimate { value, half_width, n_paths: n, tag })
}

/// `‖u‖_{ℍ_{p,α}(L_q)} = (E max_k ‖e^{−αt_k}u(t_k)‖_q^p)^{1/p}`.
pub fn hp_norm(paths: &[TrajectoryRecord], p: f64, q: f64, alpha: f64) -> Result<MonteCarloEstimate> {
    let Some(first) = paths.first() else {
        return Err(Error::TooFewPaths { got: 0, min: MIN_PATHS });
    };
    if paths.iter().any(|t| t.grid != first.grid) {
        return Err(Error::GridMismatch("paths do not share a time grid".into()));
    }
    let powered: Vec<f64> = paths.iter().map(|t| t.sup_norm(q, alpha).powf(p)).collect();
    hp_from_powered(&powered, p, format!("H_{{p={p},alpha={alpha}}}(L_{q})"))
}

/// Path ids simulated by a study, all drawn from one driver.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub driver: WienerDriver,
    pub ids: Vec<u64>,
}

impl PathSet {
    /// Paths `0..n`.
    pub fn new(driver: WienerDriver, n: usize) -> Self {
        Self { driver, ids: (0..n as u64).collect() }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn increments(&self, path_id: u64, grid: TimeGrid) -> Result<IncrementTable> {
        self.driver.sample_increments(path_id, grid)
    }
}

/// Per-path results, in path order, with failed paths set aside.
#[derive(Debug, Clone, PartialEq)]
pub struct PathOutcomes<T> {
    pub values: Vec<(u64, T)>,
    /// `(path id, reason)` for paths that returned an error or panicked.
    pub excluded: Vec<(u64, String)>,
}

impl<T> PathOutcomes<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl PathOutcomes<Vec<f64>> {
    /// Column `j` of the per-path sample vectors.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|(_, v)| v[j]).collect()
    }
}

/// Evaluates `f` on every path in parallel. A panic or error on one path
/// excludes that path only; the result order does not depend on scheduling.
pub fn run_paths<T: Send>(paths: &PathSet, f: impl Fn(u64) -> Result<T> + Sync) -> PathOutcomes<T> {
    let results: Vec<(u64, std::result::Result<T, String>)> = paths
        .ids
        .par_iter()
        .map(|&id| {
            let r = match catch_unwind(AssertUnwindSafe(|| f(id))) {
                Ok(Ok(v)) => Ok(v),
                Ok(Err(e)) => Err(e.to_string()),
                Err(panic) => Err(panic_message(panic.as_ref())),
            };
            (id, r)
        })
        .collect();
    let mut out = PathOutcomes { values: Vec::with_capacity(results.len()), excluded: Vec::new() };
    for (id, r) in results {
        match r {
            Ok(v) => out.values.push((id, v)),
            Err(e) => out.excluded.push((id, e)),
        }
    }
    out
}

fn panic_message(panic: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = panic.downcast_ref::<&str>() {
        format!("panic: {s}")
    } else if let Some(s) = panic.downcast_ref::<String>() {
        format!("panic: {s}")
    } else {
        "panic".to_string()
    }
}

/// Pass/fail outcome of a study with a one-line explanation.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

/// One cell of a study table.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub cell: String,
    pub estimate: f64,
    pub half_width: f64,
    pub n_paths: usize,
    pub pass: bool,
}

impl StudyRow {
    fn from_estimate(cell: impl Into<String>, e: &MonteCarloEstimate, pass: bool) -> Self {
        Self { cell: cell.into(), estimate: e.value, half_width: e.half_width, n_paths: e.n_paths, pass }
    }
}

/// Uniform summary of any study, for persistence and reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub study: String,
    pub rows: Vec<StudyRow>,
    pub verdict: Verdict,
    pub excluded: Vec<(u64, String)>,
}

/// `(max − min)/min` of positive values; 0 for a single value.
pub fn relative_spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if values.is_empty() || max == min {
        0.0
    } else if min <= 0.0 {
        f64::INFINITY
    } else {
        (max - min) / min
    }
}

/// Least-squares slope of `y` on `x`.
pub fn regression_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

// ---------------------------------------------------------------------------
// Cauchy property in λ

#[derive(Debug, Clone, PartialEq)]
pub struct CauchyCell {
    pub lambda: f64,
    /// 0 for the proximal reference.
    pub mu: f64,
    pub distance: MonteCarloEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CauchyStudy {
    /// `‖u_λ − u_μ‖_{ℍ_p(L_q)}` for consecutive entries of the λ-list.
    pub consecutive: Vec<CauchyCell>,
    /// `‖u_λ − u‖_{ℍ_p(L_q)}` against the proximal (`λ = 0`) scheme.
    pub against_reference: Vec<CauchyCell>,
    /// Slope of `log Δ` on `log(λ + μ)` over the consecutive pairs.
    pub slope: f64,
    pub required_slope: f64,
    pub max_relative_ci: f64,
    pub verdict: Verdict,
    pub excluded: Vec<(u64, String)>,
}

/// Coupled runs over a decreasing λ-list plus the proximal reference.
pub fn cauchy_in_lambda_study(
    cfg: &SolverConfig,
    model: Model<'_>,
    u0: &GridFunction,
    lambdas: &[f64],
    paths: &PathSet,
) -> Result<CauchyStudy> {
    if lambdas.len() < 3 || !strictly_decreasing(lambdas) || lambdas.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidParameter("λ-list must hold ≥ 3 strictly decreasing positive values".into()));
    }
    cfg.validate()?;
    let (p, q) = (cfg.p, cfg.q);
    let grid = cfg.grid()?;
    let outcomes = run_paths(paths, |id| {
        let inc = paths.increments(id, grid)?;
        let runs = lambdas
            .iter()
            .map(|&l| solve_with(&cfg.with_lambda(l), model, u0, &inc))
            .collect::<Result<Vec<_>>>()?;
        let reference = solve_with(&cfg.with_lambda(0.0), model, u0, &inc)?;
        let mut out = Vec::with_capacity(2 * runs.len() - 1);
        for w in runs.windows(2) {
            out.push(w[0].sup_distance(&w[1], q, cfg.alpha)?.powf(p));
        }
        for r in &runs {
            out.push(r.sup_distance(&reference, q, cfg.alpha)?.powf(p));
        }
        Ok(out)
    });
    let n_pairs = lambdas.len() - 1;
    let mut consecutive = Vec::with_capacity(n_pairs);
    for (j, w) in lambdas.windows(2).enumerate() {
        let distance = hp_from_powered(&outcomes.column(j), p, format!("cauchy λ={} μ={}", w[0], w[1]))?;
        consecutive.push(CauchyCell { lambda: w[0], mu: w[1], distance });
    }
    let mut against_reference = Vec::with_capacity(lambdas.len());
    for (j, &l) in lambdas.iter().enumerate() {
        let distance = hp_from_powered(&outcomes.column(n_pairs + j), p, format!("cauchy λ={l} μ=0"))?;
        against_reference.push(CauchyCell { lambda: l, mu: 0.0, distance });
    }
    let x: Vec<f64> = consecutive.iter().map(|c| (c.lambda + c.mu).ln()).collect();
    let y: Vec<f64> = consecutive.iter().map(|c| c.distance.value.ln()).collect();
    let slope = regression_slope(&x, &y);
    let required_slope = (1.0 - CAUCHY_SLOPE_SLACK) / q;
    let max_relative_ci =
        consecutive.iter().map(|c| c.distance.relative_half_width()).fold(0.0, f64::max);
    let verdict = if !(max_relative_ci <= CAUCHY_MAX_RELATIVE_CI) {
        Verdict::new(
            false,
            format!("CI up to {max_relative_ci:.3} of the estimate exceeds {CAUCHY_MAX_RELATIVE_CI}: more paths needed"),
        )
    } else {
        Verdict::new(slope >= required_slope, format!("slope {slope:.4}, required ≥ {required_slope:.4}"))
    };
    Ok(CauchyStudy {
        consecutive,
        against_reference,
        slope,
        required_slope,
        max_relative_ci,
        verdict,
        excluded: outcomes.excluded,
    })
}

impl CauchyStudy {
    pub fn report(&self) -> StudyReport {
        let mut rows: Vec<StudyRow> = self
            .consecutive
            .iter()
            .map(|c| {
                let ok = c.distance.relative_half_width() <= CAUCHY_MAX_RELATIVE_CI;
                StudyRow::from_estimate(format!("lambda={};mu={}", c.lambda, c.mu), &c.distance, ok)
            })
            .collect();
        rows.extend(
            self.against_reference
                .iter()
                .map(|c| StudyRow::from_estimate(format!("lambda={};mu=0", c.lambda), &c.distance, true)),
        );
        rows.push(StudyRow {
            cell: "slope".into(),
            estimate: self.slope,
            half_width: 0.0,
            n_paths: self.consecutive[0].distance.n_paths,
            pass: self.verdict.pass,
        });
        StudyReport { study: "cauchy".into(), rows, verdict: self.verdict.clone(), excluded: self.excluded.clone() }
    }
}

// ---------------------------------------------------------------------------
// A priori bound

#[derive(Debug, Clone, PartialEq)]
pub struct AprioriCell {
    pub lambda: f64,
    pub initial_index: usize,
    /// `Ê sup‖u_λ‖_q^p / (1 + ‖u₀‖_q^p)`.
    pub ratio: MonteCarloEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AprioriStudy {
    pub cells: Vec<AprioriCell>,
    pub initial_norms: Vec<f64>,
    /// Spread over λ of the ratio, per initial condition.
    pub spreads: Vec<f64>,
    pub verdict: Verdict,
    pub excluded: Vec<(u64, String)>,
}

pub fn apriori_bound_study(
    cfg: &SolverConfig,
    model: Model<'_>,
    initial: &[GridFunction],
    lambdas: &[f64],
    paths: &PathSet,
) -> Result<AprioriStudy> {
    if initial.len() < 3 {
        return Err(Error::InvalidParameter("need at least three initial conditions".into()));
    }
    if lambdas.is_empty() {
        return Err(Error::InvalidParameter("empty λ-list".into()));
    }
    cfg.validate()?;
    let (p, q) = (cfg.p, cfg.q);
    let grid = cfg.grid()?;
    let outcomes = run_paths(paths, |id| {
        let inc = paths.increments(id, grid)?;
        let mut out = Vec::with_capacity(initial.len() * lambdas.len());
        for u0 in initial {
            for &l in lambdas {
                out.push(solve_with(&cfg.with_lambda(l), model, u0, &inc)?.sup_norm(q, cfg.alpha).powf(p));
            }
        }
        Ok(out)
    });
    let initial_norms: Vec<f64> = initial.iter().map(|u| norm_q(u, q)).collect();
    let mut cells = Vec::new();
    let mut spreads = Vec::new();
    for (i, n0) in initial_norms.iter().enumerate() {
        let denom = 1.0 + n0.powf(p);
        let mut values = Vec::new();
        for (j, &l) in lambdas.iter().enumerate() {
            let moment = mean_estimate(&outcomes.column(i * lambdas.len() + j), format!("apriori λ={l} u0#{i}"))?;
            let ratio = moment.scaled(1.0 / denom);
            values.push(ratio.value);
            cells.push(AprioriCell { lambda: l, initial_index: i, ratio });
        }
        spreads.push(relative_spread(&values));
    }
    let worst = spreads.iter().copied().fold(0.0, f64::max);
    let verdict = Verdict::new(worst < STABILITY_BAND, format!("largest spread over λ {worst:.4} (band {STABILITY_BAND})"));
    Ok(AprioriStudy { cells, initial_norms, spreads, verdict, excluded: outcomes.excluded })
}

impl AprioriStudy {
    pub fn report(&self) -> StudyReport {
        let rows = self
            .cells
            .iter()
            .map(|c| {
                let ok = self.spreads[c.initial_index] < STABILITY_BAND;
                StudyRow::from_estimate(
                    format!("lambda={};u0_norm={}", c.lambda, self.initial_norms[c.initial_index]),
                    &c.ratio,
                    ok,
                )
            })
            .collect();
        StudyReport { study: "apriori".into(), rows, verdict: self.verdict.clone(), excluded: self.excluded.clone() }
    }
}

// ---------------------------------------------------------------------------
// Lipschitz dependence on the data

#[derive(Debug, Clone, PartialEq)]
pub struct DependenceCell {
    /// `‖u₀¹ − u₀²‖_q`, or `‖B¹ − B²‖_{L₂(0,T;γ)}` for the two-noise study.
    pub perturbation: f64,
    /// `‖u¹ − u²‖_{ℍ_p(L_q)} / perturbation`.
    pub constant: MonteCarloEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DependenceStudy {
    pub study: String,
    pub cells: Vec<DependenceCell>,
    /// Largest observed constant.
    pub constant: f64,
    pub spread: f64,
    pub verdict: Verdict,
    pub excluded: Vec<(u64, String)>,
}

impl DependenceStudy {
    fn build(
        study: &str,
        perturbations: Vec<f64>,
        outcomes: PathOutcomes<Vec<f64>>,
        p: f64,
    ) -> Result<Self> {
        let mut cells = Vec::new();
        for (j, &size) in perturbations.iter().enumerate() {
            let distance = hp_from_powered(&outcomes.column(j), p, format!("{study} perturbation={size}"))?;
            cells.push(DependenceCell { perturbation: size, constant: distance.scaled(1.0 / size) });
        }
        let values: Vec<f64> = cells.iter().map(|c| c.constant.value).collect();
        let constant = values.iter().copied().fold(0.0, f64::max);
        let spread = relative_spread(&values);
        let verdict = Verdict::new(
            constant.is_finite() && spread < STABILITY_BAND,
            format!("constant {constant:.4}, spread {spread:.4} (band {STABILITY_BAND})"),
        );
        Ok(Self { study: study.to_string(), cells, constant, spread, verdict, excluded: outcomes.excluded })
    }

    pub fn report(&self) -> StudyReport {
        let rows = self
            .cells
            .iter()
            .map(|c| StudyRow::from_estimate(format!("perturbation={}", c.perturbation), &c.constant, self.verdict.pass))
            .collect();
        StudyReport { study: self.study.clone(), rows, verdict: self.verdict.clone(), excluded: self.excluded.clone() }
    }
}

fn check_range(sizes: &[f64], factor: f64) -> Result<()> {
    let max = sizes.iter().copied().fold(0.0, f64::max);
    let min = sizes.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) || max / min < factor * (1.0 - 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "perturbation sizes must be positive and span a factor {factor}, got {min}..{max}"
        )));
    }
    Ok(())
}

/// Coupled runs from initial pairs whose distances span a factor 4.
pub fn lipschitz_dependence_study(
    cfg: &SolverConfig,
    model: Model<'_>,
    pairs: &[(GridFunction, GridFunction)],
    paths: &PathSet,
) -> Result<DependenceStudy> {
    cfg.validate()?;
    let (p, q) = (cfg.p, cfg.q);
    let sizes: Vec<f64> = pairs.iter().map(|(a, b)| norm_q(&(a - b), q)).collect();
    check_range(&sizes, 4.0)?;
    let grid = cfg.grid()?;
    let outcomes = run_paths(paths, |id| {
        let inc = paths.increments(id, grid)?;
        pairs
            .iter()
            .map(|(a, b)| {
                let ua = solve_with(cfg, model, a, &inc)?;
                let ub = solve_with(cfg, model, b, &inc)?;
                Ok(ua.sup_distance(&ub, q, cfg.alpha)?.powf(p))
            })
            .collect()
    });
    DependenceStudy::build("lipschitz", sizes, outcomes, p)
}

/// Coupled runs with `B² = B¹ + δ·column` in one mode, for sizes spanning a
/// factor 16. Both coefficients must be additive.
#[allow(clippy::too_many_arguments)]
pub fn two_noise_study(
    cfg: &SolverConfig,
    operator: &dyn DiscreteOperator,
    graph: &MonotoneGraph,
    base: &DiffusionCoefficient,
    u0: &GridFunction,
    mode: usize,
    column: &GridFunction,
    deltas: &[f64],
    paths: &PathSet,
) -> Result<DependenceStudy> {
    if !base.is_additive() {
        return Err(Error::InvalidParameter("two-noise study needs additive coefficients".into()));
    }
    cfg.validate()?;
    check_range(deltas, 16.0)?;
    let (p, q) = (cfg.p, cfg.q);
    let grid = cfg.grid()?;
    let perturbed = deltas.iter().map(|&d| base.perturbed(mode, d, column)).collect::<Result<Vec<_>>>()?;
    let m = operator.dimension();
    let sizes: Vec<f64> = deltas
        .iter()
        .map(|&d| {
            let diff = DiffusionCoefficient::additive(crate::lq_space::NoiseOperatorValue::new(vec![column * d]));
            diff.time_integrated_gamma_sq(grid, q, m).sqrt()
        })
        .collect();
    let outcomes = run_paths(paths, |id| {
        let inc = paths.increments(id, grid)?;
        let u1 = solve_with(cfg, Model { operator, graph, noise: base }, u0, &inc)?;
        perturbed
            .iter()
            .map(|b2| {
                let u2 = solve_with(cfg, Model { operator, graph, noise: b2 }, u0, &inc)?;
                Ok(u1.sup_distance(&u2, q, cfg.alpha)?.powf(p))
            })
            .collect()
    });
    DependenceStudy::build("two_noise", sizes, outcomes, p)
}

// ---------------------------------------------------------------------------
// Maximal inequality for the stochastic convolution

#[derive(Debug, Clone, PartialEq)]
pub struct MaximalCell {
    pub family_index: usize,
    pub scale: f64,
    pub p: f64,
    /// `Ê sup‖S⋄G‖_q^p / (∫‖G‖²_γ)^{p/2}`; 0 when `G = 0`.
    pub ratio: MonteCarloEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaximalStudy {
    pub cells: Vec<MaximalCell>,
    /// Largest `|ratio(cG)/ratio(G) − 1|`.
    pub homogeneity_defect: f64,
    pub max_ratio: f64,
    pub verdict: Verdict,
    pub excluded: Vec<(u64, String)>,
}

/// Ratio table for each `G` in `family`, scaled by each entry of `scales`
/// (which must contain 1), and each `p`.
pub fn maximal_inequality_study(
    operator: &dyn DiscreteOperator,
    family: &[DiffusionCoefficient],
    scales: &[f64],
    p_list: &[f64],
    q: f64,
    grid: TimeGrid,
    paths: &PathSet,
) -> Result<MaximalStudy> {
    let Some(unit) = scales.iter().position(|&c| c == 1.0) else {
        return Err(Error::InvalidParameter("scales must include 1".into()));
    };
    if p_list.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::InvalidParameter("moments p must be positive".into()));
    }
    let m = operator.dimension();
    let scaled: Vec<Vec<DiffusionCoefficient>> =
        family.iter().map(|g| scales.iter().map(|&c| g.scaled(c)).collect()).collect();
    let outcomes = run_paths(paths, |id| {
        let inc = paths.increments(id, grid)?;
        let mut out = Vec::new();
        for gs in &scaled {
            for g in gs {
                let sup = stochastic_convolution_with(operator, g, &inc)?.sup_norm(q, 0.0);
                out.extend(p_list.iter().map(|&p| sup.powf(p)));
            }
        }
        Ok(out)
    });
    let mut cells = Vec::new();
    let mut column = 0;
    for (fi, gs) in scaled.iter().enumerate() {
        for (ci, g) in gs.iter().enumerate() {
            let energy = g.time_integrated_gamma_sq(grid, q, m);
            for &p in p_list {
                let moment = mean_estimate(&outcomes.column(column), format!("maximal G#{fi} c={} p={p}", scales[ci]))?;
                column += 1;
                let ratio = if energy == 0.0 && moment.value == 0.0 {
                    MonteCarloEstimate::exact(0.0, moment.n_paths, moment.tag)
                } else {
                    moment.scaled(energy.powf(-p / 2.0))
                };
                cells.push(MaximalCell { family_index: fi, scale: scales[ci], p, ratio });
            }
        }
    }
    let per_family = scales.len() * p_list.len();
    let mut homogeneity_defect = 0.0f64;
    for (i, cell) in cells.iter().enumerate() {
        let base = &cells[(i / per_family) * per_family + unit * p_list.len() + i % p_list.len()];
        let defect = if base.ratio.value == 0.0 {
            cell.ratio.value.abs()
        } else {
            (cell.ratio.value / base.ratio.value - 1.0).abs()
        };
        homogeneity_defect = homogeneity_defect.max(defect);
    }
    let max_ratio = cells.iter().map(|c| c.ratio.value).fold(0.0, f64::max);
    let pass = homogeneity_defect <= HOMOGENEITY_TOL && max_ratio <= MAXIMAL_RATIO_BOUND;
    let verdict = Verdict::new(
        pass,
        format!("max ratio {max_ratio:.4} (bound {MAXIMAL_RATIO_BOUND}), homogeneity defect {homogeneity_defect:.2e}"),
    );
    Ok(MaximalStudy { cells, homogeneity_defect, max_ratio, verdict, excluded: outcomes.excluded })
}

impl MaximalStudy {
    pub fn report(&self) -> StudyReport {
        let rows = self
            .cells
            .iter()
            .map(|c| {
                StudyRow::from_estimate(
                    format!("G={};c={};p={}", c.family_index, c.scale, c.p),
                    &c.ratio,
                    c.ratio.value <= MAXIMAL_RATIO_BOUND,
                )
            })
            .collect();
        StudyReport { study: "maximal".into(), rows, verdict: self.verdict.clone(), excluded: self.excluded.clone() }
    }
}

/// Discrete Itô isometry for the exponential-Euler convolution:
/// `E‖u_K‖₂² = Σ_k Δt Σ_cols ‖S(T − t_k) G(t_k) h‖₂²`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsometryCheck {
    pub estimate: MonteCarloEstimate,
    pub exact: f64,
    /// `|estimate − exact|` in standard errors.
    pub z_score: f64,
}

pub fn ito_isometry_check(
    operator: &dyn DiscreteOperator,
    g: &DiffusionCoefficient,
    grid: TimeGrid,
    paths: &PathSet,
) -> Result<IsometryCheck> {
    let outcomes = run_paths(paths, |id| {
        let inc = paths.increments(id, grid)?;
        let traj = stochastic_convolution_with(operator, g, &inc)?;
        Ok(vec![norm_q(traj.final_state(), 2.0).powi(2)])
    });
    let estimate = mean_estimate(&outcomes.column(0), "E‖S⋄G(T)‖²")?;
    let zero = GridFunction::zeros(operator.dimension());
    let horizon = grid.horizon();
    let mut exact = 0.0;
    for k in 0..grid.steps {
        let gk = g.evaluate(grid.time(k), &zero);
        let s = operator.semigroup_matrix(horizon - grid.time(k));
        exact += grid.dt * gk.columns().iter().map(|c| norm_q(&s.apply(c), 2.0).powi(2)).sum::<f64>();
    }
    let se = estimate.half_width / Z95;
    let z_score = if se == 0.0 { 0.0 } else { (estimate.value - exact).abs() / se };
    Ok(IsometryCheck { estimate, exact, z_score })
}

// ---------------------------------------------------------------------------
// Γ-contraction

#[derive(Debug, Clone, PartialEq)]
pub struct GammaContractionStudy {
    /// `‖uⁿ − uⁿ⁻¹‖_{ℍ_p(L_q)}`, `n = 1..=n_outer`, with `u⁰ ≡ u₀`.
    pub distances: Vec<MonteCarloEstimate>,
    /// `distances[n+1] / distances[n]`.
    pub ratios: Vec<f64>,
    /// Bootstrap 95% upper confidence bounds of the ratios.
    pub upper_bounds: Vec<f64>,
    pub verdict: Verdict,
    pub excluded: Vec<(u64, String)>,
}

pub fn gamma_contraction_study(
    cfg: &SolverConfig,
    model: Model<'_>,
    u0: &GridFunction,
    n_outer: usize,
    paths: &PathSet,
) -> Result<GammaContractionStudy> {
    if n_outer < 2 {
        return Err(Error::InvalidParameter("need at least two outer iterations".into()));
    }
    cfg.validate()?;
    let (p, q) = (cfg.p, cfg.q);
    let grid = cfg.grid()?;
    let outcomes = run_paths(paths, |id| {
        let inc = paths.increments(id, grid)?;
        let iterates = gamma_iteration(cfg, model, u0, &inc, n_outer)?;
        let mut out = Vec::with_capacity(n_outer);
        let first = iterates[0].states.iter().enumerate();
        out.push(
            first.map(|(k, u)| (-cfg.alpha * grid.time(k)).exp() * norm_q(&(u - u0), q)).fold(0.0, f64::max).powf(p),
        );
        for w in iterates.windows(2) {
            out.push(w[0].sup_distance(&w[1], q, cfg.alpha)?.powf(p));
        }
        Ok(out)
    });
    let columns: Vec<Vec<f64>> = (0..n_outer).map(|j| outcomes.column(j)).collect();
    let distances = columns
        .iter()
        .enumerate()
        .map(|(j, c)| hp_from_powered(c, p, format!("gamma n={}", j + 1)))
        .collect::<Result<Vec<_>>>()?;
    let n = outcomes.len();
    let mut ratios = Vec::new();
    let mut upper_bounds = Vec::new();
    for j in 0..n_outer - 1 {
        let ratio = distances[j + 1].value / distances[j].value;
        let (a, b) = (&columns[j], &columns[j + 1]);
        let reps = bootstrap(n, hash_words(&[0x6761_6d6d_61, j as u64, n as u64]), |idx| {
            let num: f64 = idx.iter().map(|&i| b[i]).sum();
            let den: f64 = idx.iter().map(|&i| a[i]).sum();
            (num / den).powf(1.0 / p)
        });
        ratios.push(ratio);
        upper_bounds.push(quantile(&reps, 0.95));
    }
    let worst = upper_bounds.iter().copied().fold(0.0, f64::max);
    let verdict = Verdict::new(
        worst < 1.0,
        format!("ratios {ratios:.4?}, largest 95% upper bound {worst:.4}"),
    );
    Ok(GammaContractionStudy { distances, ratios, upper_bounds, verdict, excluded: outcomes.excluded })
}

impl GammaContractionStudy {
    pub fn report(&self) -> StudyReport {
        let mut rows: Vec<StudyRow> = self
            .distances
            .iter()
            .enumerate()
            .map(|(j, d)| StudyRow::from_estimate(format!("distance;n={}", j + 1), d, true))
            .collect();
        for (j, (r, u)) in self.ratios.iter().zip(&self.upper_bounds).enumerate() {
            rows.push(StudyRow {
                cell: format!("ratio;n={}", j + 1),
                estimate: *r,
                half_width: u - r,
                n_paths: self.distances[0].n_paths,
                pass: *u < 1.0,
            });
        }
        StudyReport { study: "gamma".into(), rows, verdict: self.verdict.clone(), excluded: self.excluded.clone() }
    }
}

// ---------------------------------------------------------------------------
// Integrability certificates and Fenchel–Young on paths

/// Per-path values of `∫Φ'_q(u)g dt`, `∫∫F̂(u) dx dt` and `∫∫F̃*(g) dx dt`.
pub fn path_certificates(traj: &TrajectoryRecord, graph: &MonotoneGraph, composites: &CompositeGraphs) -> Result<[f64; 3]> {
    let q = composites.q;
    let dt = traj.grid.dt;
    let mut out = [0.0; 3];
    for (k, g) in traj.selections.iter().enumerate() {
        let x = traj.selection_point(graph, k)?;
        out[0] += dt * phi_grad_apply(&x, q, g);
        let h = g.mesh_width();
        let mut conj = 0.0;
        for &gi in g.values() {
            conj += composites.potential_tilde.conjugate_value(gi)?;
        }
        out[2] += dt * h * conj;
    }
    for u in &traj.states[..traj.steps()] {
        let h = u.mesh_width();
        out[1] += dt * h * u.values().iter().map(|&v| composites.potential_hat.value(v)).sum::<f64>();
    }
    Ok(out)
}

/// Largest `|g·φ_q(u) − F̃(φ_q(u)) − F̃*(g)|` over times and nodes.
pub fn fenchel_young_violation(
    traj: &TrajectoryRecord,
    graph: &MonotoneGraph,
    composites: &CompositeGraphs,
) -> Result<f64> {
    let q = composites.q;
    let mut worst = 0.0f64;
    for (k, g) in traj.selections.iter().enumerate() {
        let x = traj.selection_point(graph, k)?;
        for (&xi, &gi) in x.values().iter().zip(g.values()) {
            let v = phi_q(q, xi);
            let gap = gi * v - composites.potential_tilde.value(v) - composites.potential_tilde.conjugate_value(gi)?;
            worst = worst.max(gap.abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateValues {
    pub pairing: MonteCarloEstimate,
    pub hat_potential: MonteCarloEstimate,
    pub conjugate: MonteCarloEstimate,
}

impl CertificateValues {
    pub fn as_array(&self) -> [&MonteCarloEstimate; 3] {
        [&self.pairing, &self.hat_potential, &self.conjugate]
    }
}

fn certificate_values(samples: [Vec<f64>; 3], label: &str) -> Result<CertificateValues> {
    let [a, b, c] = samples;
    Ok(CertificateValues {
        pairing: mean_estimate(&a, format!("{label} E∫Φ'(u)g"))?,
        hat_potential: mean_estimate(&b, format!("{label} ∫F̂(u)dm"))?,
        conjugate: mean_estimate(&c, format!("{label} ∫F̃*(g)dm"))?,
    })
}

/// Monte Carlo certificates over stored paths.
pub fn selection_integrability_certificate(
    paths: &[TrajectoryRecord],
    graph: &MonotoneGraph,
    composites: &CompositeGraphs,
) -> Result<CertificateValues> {
    let mut samples: [Vec<f64>; 3] = Default::default();
    for traj in paths {
        let v = path_certificates(traj, graph, composites)?;
        for (s, x) in samples.iter_mut().zip(v) {
            s.push(x);
        }
    }
    certificate_values(samples, "")
}

/// Largest Fenchel–Young defect over stored paths.
pub fn fenchel_young_on_paths(
    paths: &[TrajectoryRecord],
    graph: &MonotoneGraph,
    composites: &CompositeGraphs,
) -> Result<f64> {
    paths.iter().try_fold(0.0f64, |acc, t| Ok(acc.max(fenchel_young_violation(t, graph, composites)?)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateVariant {
    pub label: String,
    pub values: CertificateValues,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateStudy {
    pub variants: Vec<CertificateVariant>,
    /// Spread across variants of each certificate.
    pub spreads: [f64; 3],
    pub fenchel_young: f64,
    pub verdict: Verdict,
    pub excluded: Vec<(u64, String)>,
}

/// Certificates under each solver variant (e.g. `Δt` halved, λ ∈ {0, 1/16,
/// 1/64}), on coupled paths.
pub fn certificate_study(
    variants: &[(String, SolverConfig)],
    model: Model<'_>,
    u0: &GridFunction,
    composites: &CompositeGraphs,
    paths: &PathSet,
) -> Result<CertificateStudy> {
    if variants.is_empty() {
        return Err(Error::InvalidParameter("no solver variants".into()));
    }
    let grids = variants.iter().map(|(_, c)| c.validate().and_then(|_| c.grid())).collect::<Result<Vec<_>>>()?;
    let outcomes = run_paths(paths, |id| {
        let mut out = Vec::with_capacity(4 * variants.len());
        for ((_, cfg), grid) in variants.iter().zip(&grids) {
            let inc = paths.increments(id, *grid)?;
            let traj = solve_with(cfg, model, u0, &inc)?;
            out.extend(path_certificates(&traj, model.graph, composites)?);
            out.push(fenchel_young_violation(&traj, model.graph, composites)?);
        }
        Ok(out)
    });
    let mut out_variants = Vec::new();
    let mut fenchel_young = 0.0f64;
    for (i, (label, _)) in variants.iter().enumerate() {
        let samples = [outcomes.column(4 * i), outcomes.column(4 * i + 1), outcomes.column(4 * i + 2)];
        let values = certificate_values(samples, label)?;
        fenchel_young = outcomes.column(4 * i + 3).into_iter().fold(fenchel_young, f64::max);
        out_variants.push(CertificateVariant { label: label.clone(), values });
    }
    let mut spreads = [0.0; 3];
    let mut finite = true;
    for (j, s) in spreads.iter_mut().enumerate() {
        let values: Vec<f64> = out_variants.iter().map(|v| v.values.as_array()[j].value).collect();
        finite &= values.iter().all(|v| v.is_finite());
        *s = if values.iter().all(|&v| v == 0.0) { 0.0 } else { relative_spread(&values) };
    }
    let worst = spreads.iter().copied().fold(0.0, f64::max);
    let pass = finite && worst < CERTIFICATE_BAND && fenchel_young <= FENCHEL_YOUNG_TOL;
    let verdict = Verdict::new(
        pass,
        format!(
            "spreads {spreads:.4?} (band {CERTIFICATE_BAND}), Fenchel–Young defect {fenchel_young:.2e} (tol {FENCHEL_YOUNG_TOL})"
        ),
    );
    Ok(CertificateStudy { variants: out_variants, spreads, fenchel_young, verdict, excluded: outcomes.excluded })
}

impl CertificateStudy {
    pub fn report(&self) -> StudyReport {
        let names = ["pairing", "hat_potential", "conjugate"];
        let mut rows = Vec::new();
        for v in &self.variants {
            for (j, e) in v.values.as_array().into_iter().enumerate() {
                let ok = self.spreads[j] < CERTIFICATE_BAND;
                rows.push(StudyRow::from_estimate(format!("variant={};certificate={}", v.label, names[j]), e, ok));
            }
        }
        rows.push(StudyRow {
            cell: "fenchel_young".into(),
            estimate: self.fenchel_young,
            half_width: 0.0,
            n_paths: rows.first().map_or(0, |r| r.n_paths),
            pass: self.fenchel_young <= FENCHEL_YOUNG_TOL,
        });
        StudyReport { study: "certificates".into(), rows, verdict: self.verdict.clone(), excluded: self.excluded.clone() }
    }
}

// ---------------------------------------------------------------------------
// Itô-inequality slack

#[derive(Debug, Clone, PartialEq)]
pub struct SlackLevel {
    pub dt: f64,
    /// Smallest raw slack over paths and times.
    pub min_slack: f64,
    /// Largest `max(0, −min_k slack_k) / (1 + max_k ‖u_k‖_q^q)` over paths.
    pub excursion: f64,
    pub worst_path: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlackStudy {
    pub levels: Vec<SlackLevel>,
    /// Fitted `tol_scheme(Δt) = constant·Δt^exponent`, in units of the
    /// path scale `1 + max_k ‖u_k‖_q^q`.
    pub tolerance_constant: f64,
    pub tolerance_exponent: f64,
    /// `tol_scheme(Δt/2)/tol_scheme(Δt) = 2^−exponent`.
    pub halving_factor: f64,
    pub n_paths: usize,
    pub verdict: Verdict,
    pub excluded: Vec<(u64, String)>,
}

impl SlackStudy {
    pub fn tolerance(&self, dt: f64) -> f64 {
        self.tolerance_constant * dt.powf(self.tolerance_exponent)
    }
}

/// Minimal pathwise slack of the discrete energy inequality for each `Δt`
/// in `dts` (coarsest first, each half the previous, at least three levels).
///
/// The worst normalized excursion below zero is fitted to `C·Δt^s` by least
/// squares in log-log; `C` is then raised until the envelope covers every
/// level. A single pair of levels is too noisy for the max over paths.
pub fn ito_slack_study(
    cfg: &SolverConfig,
    model: Model<'_>,
    u0: &GridFunction,
    dts: &[f64],
    paths: &PathSet,
) -> Result<SlackStudy> {
    if dts.len() < 3 || dts.windows(2).any(|w| (w[0] / w[1] - 2.0).abs() > 1e-9) {
        return Err(Error::InvalidParameter("need at least three successively halving Δt levels".into()));
    }
    let configs: Vec<SolverConfig> = dts.iter().map(|&dt| cfg.with_dt(dt)).collect();
    let grids = configs.iter().map(|c| c.validate().and_then(|_| c.grid())).collect::<Result<Vec<_>>>()?;
    let q = cfg.q;
    let outcomes = run_paths(paths, |id| {
        let mut out = Vec::with_capacity(2 * dts.len());
        for (c, grid) in configs.iter().zip(&grids) {
            let traj = solve_with(c, model, u0, &paths.increments(id, *grid)?)?;
            let slack = ito_inequality_residual(&traj, c.eta, q);
            let min = slack.iter().copied().fold(f64::INFINITY, f64::min);
            let scale = 1.0 + traj.states.iter().map(|u| phi_value(u, q)).fold(0.0, f64::max);
            out.push(min);
            out.push((-min).max(0.0) / scale);
        }
        Ok(out)
    });
    check_count(outcomes.len())?;
    let mut levels = Vec::new();
    for (i, &dt) in dts.iter().enumerate() {
        let mins = outcomes.column(2 * i);
        let exc = outcomes.column(2 * i + 1);
        let (mut worst, mut worst_path) = (0.0, outcomes.values.first().map_or(0, |v| v.0));
        for ((id, _), &e) in outcomes.values.iter().zip(&exc) {
            if e > worst {
                worst = e;
                worst_path = *id;
            }
        }
        levels.push(SlackLevel {
            dt,
            min_slack: mins.iter().copied().fold(f64::INFINITY, f64::min),
            excursion: worst,
            worst_path,
        });
    }
    let n_paths = outcomes.len();
    let lo = 0.5 * (1.0 - SLACK_HALVING_BAND);
    let hi = 0.5 * (1.0 + SLACK_HALVING_BAND);
    if levels.iter().all(|l| l.excursion == 0.0) {
        let verdict = Verdict::new(true, "slack nonnegative on every path and level; tol_scheme = 0".to_string());
        return Ok(SlackStudy {
            levels,
            tolerance_constant: 0.0,
            tolerance_exponent: 1.0,
            halving_factor: 0.5,
            n_paths,
            verdict,
            excluded: outcomes.excluded,
        });
    }
    // A level with no excursion is below any positive envelope; fit the rest.
    let fit: Vec<&SlackLevel> = levels.iter().filter(|l| l.excursion > 0.0).collect();
    let (exponent, constant) = if fit.len() >= 2 {
        let x: Vec<f64> = fit.iter().map(|l| l.dt.ln()).collect();
        let y: Vec<f64> = fit.iter().map(|l| l.excursion.ln()).collect();
        let s = regression_slope(&x, &y);
        let c = fit.iter().map(|l| l.excursion / l.dt.powf(s)).fold(0.0, f64::max);
        (s, c)
    } else {
        (0.0, fit[0].excursion)
    };
    let halving_factor = 0.5f64.powf(exponent);
    let pass = fit.len() >= 2 && (lo..=hi).contains(&halving_factor);
    let verdict = Verdict::new(
        pass,
        format!(
            "tol_scheme = {constant:.4e}·Δt^{exponent:.3}·scale; halving factor {halving_factor:.3} (accepted [{lo:.2}, {hi:.2}])"
        ),
    );
    Ok(SlackStudy {
        levels,
        tolerance_constant: constant,
        tolerance_exponent: exponent,
        halving_factor,
        n_paths,
        verdict,
        excluded: outcomes.excluded,
    })
}

impl SlackStudy {
    pub fn report(&self) -> StudyReport {
        let n = self.n_paths;
        let rows = self
            .levels
            .iter()
            .map(|l| StudyRow {
                cell: format!("dt={}", l.dt),
                estimate: l.excursion,
                half_width: 0.0,
                n_paths: n,
                pass: l.excursion <= self.tolerance(l.dt) * (1.0 + 1e-12),
            })
            .collect();
        StudyReport { study: "ito_slack".into(), rows, verdict: self.verdict.clone(), excluded: self.excluded.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accretive_operator::DirichletLaplacian;
    use crate::lq_space::NoiseOperatorValue;
    use crate::monotone_graph::composite_graphs;
    use crate::noise_model::{eigen_profile_columns, parse_weights};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const M: usize = 31;

    fn additive(modes: usize) -> DiffusionCoefficient {
        let w = parse_weights("geometric:0.5", modes).unwrap();
        DiffusionCoefficient::additive(eigen_profile_columns(M, &w))
    }

    fn short_cfg(lambda: f64) -> SolverConfig {
        SolverConfig { horizon: 0.05, dt: 1e-3, lambda, ..SolverConfig::default() }
    }

    fn bump() -> GridFunction {
        GridFunction::from_fn(M, |x| (std::f64::consts::PI * x).sin())
    }

    #[test]
    fn too_few_paths_is_an_error() {
        let samples = vec![1.0; MIN_PATHS - 1];
        assert!(matches!(mean_estimate(&samples, "x"), Err(Error::TooFewPaths { got: 29, min: 30 })));
        assert!(matches!(hp_from_powered(&samples, 2.0, "x"), Err(Error::TooFewPaths { .. })));
        assert!(mean_estimate(&vec![1.0; MIN_PATHS], "x").is_ok());
    }

    #[test]
    fn hp_delta_method_matches_hand_computation() {
        let powered: Vec<f64> = (0..40).map(|i| 1.0 + (i % 7) as f64).collect();
        let p = 2.0;
        let n = powered.len() as f64;
        let mean = powered.iter().sum::<f64>() / n;
        let var = powered.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        // d/dm m^{1/p} = m^{1/p−1}/p
        let want_hw = 1.96 * (var / n).sqrt() * mean.powf(1.0 / p - 1.0) / p;
        let e = hp_from_powered(&powered, p, "t").unwrap();
        assert_relative_eq!(e.value, mean.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(e.half_width, want_hw, max_relative = 1e-12);
    }

    #[test]
    fn hp_constant_samples_have_zero_width() {
        for p in [0.5, 1.0, 3.0] {
            let e = hp_from_powered(&vec![8.0; 50], p, "c").unwrap();
            assert_relative_eq!(e.value, 8f64.powf(1.0 / p), max_relative = 1e-14);
            assert_eq!(e.half_width, 0.0);
        }
    }

    #[test]
    fn hp_bootstrap_for_small_moments() {
        let powered: Vec<f64> = (0..60).map(|i| ((i * 37) % 11) as f64 / 10.0).collect();
        let a = hp_from_powered(&powered, 0.5, "b").unwrap();
        let b = hp_from_powered(&powered, 0.5, "b").unwrap();
        assert_eq!(a, b);
        assert!(a.half_width > 0.0 && a.half_width < a.value);
    }

    #[test]
    fn run_paths_isolates_failures_in_order() {
        let paths = PathSet::new(WienerDriver::new(1, 0, 1e-3).unwrap(), 10);
        let out = run_paths(&paths, |id| {
            if id == 3 {
                panic!("boom");
            }
            if id == 5 {
                return Err(Error::NonFiniteState { step: 2 });
            }
            Ok(vec![id as f64])
        });
        assert_eq!(out.column(0), vec![0.0, 1.0, 2.0, 4.0, 6.0, 7.0, 8.0, 9.0]);
        assert_eq!(out.excluded.len(), 2);
        assert_eq!(out.excluded[0].0, 3);
        assert!(out.excluded[0].1.contains("boom"));
        assert_eq!(out.excluded[1].0, 5);
    }

    #[test]
    fn spread_and_slope() {
        assert_eq!(relative_spread(&[2.0]), 0.0);
        assert_relative_eq!(relative_spread(&[2.0, 3.0, 2.5]), 0.5);
        assert_eq!(relative_spread(&[0.0, 1.0]), f64::INFINITY);
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 0.7 * v - 2.0).collect();
        assert_relative_eq!(regression_slope(&x, &y), 0.7, max_relative = 1e-14);
    }

    #[test]
    fn cauchy_rejects_bad_lambda_lists() {
        let a = DirichletLaplacian::new(M);
        let g = MonotoneGraph::sign();
        let b = additive(2);
        let model = Model { operator: &a, graph: &g, noise: &b };
        let paths = PathSet::new(WienerDriver::new(2, 1, 1e-3).unwrap(), 30);
        for bad in [&[0.1, 0.05][..], &[0.1, 0.1, 0.05], &[0.1, 0.05, 0.0]] {
            assert!(cauchy_in_lambda_study(&short_cfg(0.0), model, &bump(), bad, &paths).is_err());
        }
    }

    #[test]
    fn equal_regularizations_have_zero_distance() {
        let a = DirichletLaplacian::new(M);
        let g = MonotoneGraph::sign();
        let b = additive(2);
        let model = Model { operator: &a, graph: &g, noise: &b };
        let driver = WienerDriver::new(2, 9, 1e-3).unwrap();
        let cfg = short_cfg(0.1);
        let inc = driver.sample_increments(4, cfg.grid().unwrap()).unwrap();
        let u = solve_with(&cfg, model, &bump(), &inc).unwrap();
        let v = solve_with(&cfg, model, &bump(), &inc).unwrap();
        assert_eq!(u.sup_distance(&v, 2.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn certificates_vanish_without_drift() {
        let a = DirichletLaplacian::new(M);
        let g = MonotoneGraph::zero();
        let b = additive(2);
        let model = Model { operator: &a, graph: &g, noise: &b };
        let comp = composite_graphs(&g, 2.0).unwrap();
        let driver = WienerDriver::new(2, 2, 1e-3).unwrap();
        let cfg = short_cfg(0.0);
        let traj = solve_with(&cfg, model, &bump(), &driver.sample_increments(0, cfg.grid().unwrap()).unwrap()).unwrap();
        assert_eq!(path_certificates(&traj, &g, &comp).unwrap(), [0.0; 3]);
        assert_eq!(fenchel_young_violation(&traj, &g, &comp).unwrap(), 0.0);
    }

    #[test]
    fn identity_certificates_match_quadratic_oracle() {
        // f = id, q = 2: φ(x) = x, F̃(y) = y²/2, F̃*(g) = g²/2, F̂(u) = u²/2,
        // and Φ'(x)g = 2∫xg.
        let a = DirichletLaplacian::new(M);
        let g = MonotoneGraph::identity();
        let b = additive(3);
        let model = Model { operator: &a, graph: &g, noise: &b };
        let comp = composite_graphs(&g, 2.0).unwrap();
        let driver = WienerDriver::new(3, 5, 1e-3).unwrap();
        for lambda in [0.0, 0.05] {
            let cfg = short_cfg(lambda);
            let inc = driver.sample_increments(1, cfg.grid().unwrap()).unwrap();
            let traj = solve_with(&cfg, model, &bump(), &inc).unwrap();
            let (dt, h) = (cfg.dt, 1.0 / (M as f64 + 1.0));
            let mut want = [0.0; 3];
            for k in 0..traj.steps() {
                let x = if lambda == 0.0 {
                    traj.states[k + 1].clone()
                } else {
                    traj.states[k].map(|v| v / (1.0 + lambda))
                };
                let gk = &traj.selections[k];
                for (&xi, &gi) in x.values().iter().zip(gk.values()) {
                    want[0] += dt * h * 2.0 * xi * gi;
                    want[2] += dt * h * 0.5 * gi * gi;
                }
                want[1] += dt * h * 0.5 * traj.states[k].values().iter().map(|v| v * v).sum::<f64>();
            }
            let got = path_certificates(&traj, &g, &comp).unwrap();
            for j in 0..3 {
                assert_relative_eq!(got[j], want[j], max_relative = 1e-9);
            }
            assert!(fenchel_young_violation(&traj, &g, &comp).unwrap() <= 1e-8);
        }
    }

    #[test]
    fn maximal_study_handles_zero_noise() {
        let a = DirichletLaplacian::new(M);
        let family = vec![DiffusionCoefficient::zero(2, M), additive(2)];
        let grid = TimeGrid::new(1e-3, 50).unwrap();
        let paths = PathSet::new(WienerDriver::new(2, 7, 1e-3).unwrap(), 40);
        let st = maximal_inequality_study(&a, &family, &[0.5, 1.0, 3.0], &[1.0, 2.0], 2.0, grid, &paths).unwrap();
        for c in st.cells.iter().filter(|c| c.family_index == 0) {
            assert_eq!(c.ratio.value, 0.0);
        }
        assert!(st.homogeneity_defect <= HOMOGENEITY_TOL, "{}", st.homogeneity_defect);
        assert!(st.max_ratio > 0.0);
        assert!(maximal_inequality_study(&a, &family, &[2.0], &[2.0], 2.0, grid, &paths).is_err());
    }

    #[test]
    fn isometry_within_sampling_error() {
        let a = DirichletLaplacian::new(M);
        let g = DiffusionCoefficient::additive(NoiseOperatorValue::new(vec![a.eigenvector(1), a.eigenvector(2)]));
        let grid = TimeGrid::new(1e-3, 100).unwrap();
        let paths = PathSet::new(WienerDriver::new(2, 11, 1e-3).unwrap(), 400);
        let chk = ito_isometry_check(&a, &g, grid, &paths).unwrap();
        // ‖sin(jπ·)‖₂² = 1/2; the exponential Euler sum is geometric in
        // r = e^{−2μ_jΔt}: Δt·Σ_{i=1}^{K} r^i.
        let mut exact = 0.0;
        for j in [1, 2] {
            let r = (-2.0 * a.eigenvalue(j) * grid.dt).exp();
            exact += 0.5 * grid.dt * r * (1.0 - r.powi(100)) / (1.0 - r);
        }
        assert_relative_eq!(chk.exact, exact, max_relative = 1e-9);
        assert!(chk.z_score < 4.0, "z = {}", chk.z_score);
    }

    #[test]
    fn slack_study_rejects_bad_levels_and_passes_vacuously() {
        let a = DirichletLaplacian::new(M);
        let g = MonotoneGraph::sign();
        let b = DiffusionCoefficient::zero(1, M);
        let model = Model { operator: &a, graph: &g, noise: &b };
        let paths = PathSet::new(WienerDriver::new(1, 0, 2.5e-4).unwrap(), 30);
        let cfg = short_cfg(0.0);
        assert!(ito_slack_study(&cfg, model, &bump(), &[1e-3, 5e-4], &paths).is_err());
        assert!(ito_slack_study(&cfg, model, &bump(), &[1e-3, 4e-4, 2e-4], &paths).is_err());
        // Without noise the discrete energy inequality holds exactly.
        let st = ito_slack_study(&cfg, model, &bump(), &[1e-3, 5e-4, 2.5e-4], &paths).unwrap();
        assert!(st.verdict.pass);
        assert!(st.levels.iter().all(|l| l.excursion == 0.0 && l.min_slack >= 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        // e^{−αT}‖u‖_{ℍ_p} ≤ ‖u‖_{ℍ_{p,α}} ≤ ‖u‖_{ℍ_p}
        #[test]
        fn discounted_norm_is_equivalent(alpha in 0.0f64..20.0, p in 0.5f64..4.0, seed in 0u64..1000) {
            let a = DirichletLaplacian::new(M);
            let g = MonotoneGraph::sign();
            let b = additive(2);
            let model = Model { operator: &a, graph: &g, noise: &b };
            let driver = WienerDriver::new(2, seed, 1e-3).unwrap();
            let cfg = short_cfg(0.0);
            let grid = cfg.grid().unwrap();
            let paths: Vec<TrajectoryRecord> = (0..30)
                .map(|i| solve_with(&cfg, model, &bump(), &driver.sample_increments(i, grid).unwrap()).unwrap())
                .collect();
            let plain = hp_norm(&paths, p, 2.0, 0.0).unwrap().value;
            let disc = hp_norm(&paths, p, 2.0, alpha).unwrap().value;
            prop_assert!(disc <= plain * (1.0 + 1e-12));
            prop_assert!(disc >= (-alpha * grid.horizon()).exp() * plain * (1.0 - 1e-12));
        }
    }
}
