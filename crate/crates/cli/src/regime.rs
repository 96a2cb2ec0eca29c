//! Which solution notion a configuration instantiates.

use monospde::monotone_graph::{check_symmetry, potential_from_graph, MonotoneGraph};
use monospde::estimators::MIN_PATHS;

use crate::config::{ExperimentConfig, NoiseKind, Regime};
use crate::CliError;

/// Tolerance on `|F(x) − F(−x)|` for the evenness hypothesis.
pub const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeReport {
    pub regime: Regime,
    pub solution_notion: &'static str,
    /// `p* = p(2d + q − 2)/q`.
    pub p_star: f64,
    pub d: f64,
    /// One line per hypothesis checked.
    pub checks: Vec<String>,
}

impl RegimeReport {
    pub fn render(&self) -> String {
        let mut s = format!("regime: {} ({})\n", self.regime.name(), self.solution_notion);
        for c in &self.checks {
            s.push_str("  ");
            s.push_str(c);
            s.push('\n');
        }
        s
    }
}

pub fn p_star(p: f64, q: f64, d: f64) -> f64 {
    p * (2.0 * d + q - 2.0) / q
}

/// Failure of the mild-regime hypotheses, if any.
fn mild_failure(p: f64, q: f64, graph: &MonotoneGraph, sigma: Option<usize>) -> Option<String> {
    if !(p >= q) {
        return Some(format!("mild needs p ≥ q, got p = {p} < q = {q}"));
    }
    if !graph.eval_interval(0.0).contains(0.0, 0.0) {
        return Some(format!("mild needs 0 ∈ f(0) for graph {}", graph.name()));
    }
    let potential = match potential_from_graph(graph) {
        Ok(f) => f,
        Err(e) => return Some(format!("mild needs the potential of {}: {e}", graph.name())),
    };
    let r = graph.working_range().min(1e3);
    let grid: Vec<f64> = (1..=200).map(|i| r * i as f64 / 200.0).collect();
    let sym = check_symmetry(&potential, &grid, SYMMETRY_TOL);
    if !sym.symmetric {
        return Some(format!(
            "mild needs F even: check_symmetry deviation {:.3e} at x = {} exceeds {SYMMETRY_TOL:e}",
            sym.max_deviation, sym.worst_x
        ));
    }
    if sigma.is_none() {
        return Some("mild needs the smoothing power `operator.sigma` declared".into());
    }
    None
}

/// Regime of `(p, q, f, σ)`: the requested one if its hypotheses hold,
/// otherwise the strongest admissible one (strict mild, then mild, then
/// generalized).
pub fn classify(
    p: f64,
    q: f64,
    graph: &MonotoneGraph,
    sigma: Option<usize>,
    requested: Option<Regime>,
) -> Result<RegimeReport, CliError> {
    if !(q >= 2.0) {
        return Err(CliError::Rejected(format!("q ≥ 2 is required by every regime, got q = {q}")));
    }
    if !(p > 0.0) {
        return Err(CliError::Rejected(format!("p > 0 is required by every regime, got p = {p}")));
    }
    let d = graph.growth_exponent();
    let ps = p_star(p, q, d);
    let strict_ok = ps > d;
    let mild = mild_failure(p, q, graph, sigma);
    let mut checks = vec![
        format!("p* = p(2d+q−2)/q = {ps} {} d = {d}", if strict_ok { ">" } else { "≤" }),
        format!("p = {p} > 0, q = {q} ≥ 2: generalized admissible"),
        match &mild {
            None => "mild hypotheses hold (p ≥ q ≥ 2, 0 ∈ f(0), F even, σ declared)".to_string(),
            Some(why) => why.clone(),
        },
    ];
    let regime = match requested {
        Some(Regime::StrictMild) if !strict_ok => {
            return Err(CliError::Rejected(format!(
                "strict_mild needs p* = p(2d+q−2)/q > d, but p* = {ps} ≤ d = {d}"
            )))
        }
        Some(Regime::Mild) => {
            if let Some(why) = mild {
                return Err(CliError::Rejected(why));
            }
            Regime::Mild
        }
        Some(r) => r,
        None if strict_ok => Regime::StrictMild,
        None if mild.is_none() => Regime::Mild,
        None => Regime::Generalized,
    };
    checks.push(format!("selected {}", regime.name()));
    let solution_notion = match regime {
        Regime::StrictMild => "strict mild solution",
        Regime::Mild => "mild solution",
        Regime::Generalized => "generalized solution",
    };
    Ok(RegimeReport { regime, solution_notion, p_star: ps, d, checks })
}

/// Full validation: regime plus the consistency of mesh, noise, solver and
/// study parameters.
pub fn validate(cfg: &ExperimentConfig) -> Result<RegimeReport, CliError> {
    if cfg.paths < MIN_PATHS {
        return Err(CliError::Rejected(format!("run.paths = {} is below the minimum {MIN_PATHS}", cfg.paths)));
    }
    if cfg.mesh < 3 {
        return Err(CliError::Rejected(format!("mesh.M = {} is too coarse", cfg.mesh)));
    }
    if cfg.modes == 0 {
        return Err(CliError::Rejected("noise.modes must be ≥ 1".into()));
    }
    if cfg.threads == Some(0) {
        return Err(CliError::Rejected("run.threads must be ≥ 1".into()));
    }
    cfg.solver.validate().map_err(|e| CliError::Rejected(e.to_string()))?;
    let graph = MonotoneGraph::from_name(&cfg.graph).map_err(|e| CliError::Rejected(e.to_string()))?;
    cfg.initial_condition()?;
    cfg.diffusion().map_err(|e| CliError::Rejected(e.to_string()))?;
    if cfg.study.kind.needs_additive() && cfg.noise_kind == NoiseKind::Nemytskii {
        return Err(CliError::Rejected(format!("study {} needs additive noise", cfg.study.kind.name())));
    }
    if cfg.study.mode == 0 || cfg.study.mode > cfg.modes {
        return Err(CliError::Rejected(format!("study.mode = {} is not in 1..={}", cfg.study.mode, cfg.modes)));
    }
    if let Some(f) = cfg.fine_dt {
        for dt in crate::run::study_dts(cfg) {
            let r = dt / f;
            if !(f > 0.0) || (r - r.round()).abs() > 1e-9 || r.round() < 1.0 {
                return Err(CliError::Rejected(format!("noise.fine_dt = {f} does not divide Δt = {dt}")));
            }
        }
    }
    classify(cfg.solver.p, cfg.solver.q, &graph, cfg.sigma, cfg.regime)
}
