//! Study execution and artifact persistence.
//!
//! An artifact directory holds
//!
//! * `config.echo`: `# digest <hex>` followed by the canonical config,
//! * `<study>.csv`: one row per study cell,
//! * `verdicts.csv` and `excluded.csv`,
//! * `trajectories/path_<id>.{csv,bin}` with `--dump-states`,
//! * `report.txt`, and
//! * `manifest.txt`: the digest and the SHA-256 of every other file.
//!
//! Every CSV carries the config digest in its first column. Nothing
//! time- or machine-dependent is written, so reruns are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use monospde::accretive_operator::DirichletLaplacian;
use monospde::estimators::{
    apriori_bound_study, cauchy_in_lambda_study, certificate_study, gamma_contraction_study, hp_from_powered,
    ito_isometry_check, ito_slack_study, lipschitz_dependence_study, maximal_inequality_study, mean_estimate,
    run_paths, two_noise_study, PathSet, StudyReport, StudyRow, Verdict,
};
use monospde::lq_space::{GridFunction, NoiseOperatorValue};
use monospde::mild_solver::{ito_inequality_residual, mild_residual, solve_with, Model, GRAPH_TOL};
use monospde::monotone_graph::{composite_graphs, MonotoneGraph};
use monospde::noise_model::{DiffusionCoefficient, WienerDriver};

use crate::config::{ExperimentConfig, StudyKind};
use crate::regime::{validate, RegimeReport};
use crate::report::render_report;
use crate::CliError;

/// Largest isometry mismatch accepted, in standard errors.
pub const ISOMETRY_Z_MAX: f64 = 3.0;

/// Paths solved at once when dumping states.
const DUMP_CHUNK: usize = 16;

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub digest: String,
    pub regime: RegimeReport,
    pub study: StudyReport,
}

/// Every `Δt` the configured study steps with.
pub fn study_dts(cfg: &ExperimentConfig) -> Vec<f64> {
    match cfg.study.kind {
        StudyKind::ItoSlack => cfg.study.dts.clone(),
        StudyKind::Certificates => vec![cfg.solver.dt, cfg.solver.dt / 2.0],
        _ => vec![cfg.solver.dt],
    }
}

/// `noise.fine_dt`, or the finest study step.
pub fn fine_dt(cfg: &ExperimentConfig) -> f64 {
    cfg.fine_dt.unwrap_or_else(|| study_dts(cfg).into_iter().fold(f64::INFINITY, f64::min))
}

/// Validates, executes and persists the configured study in `cfg.output_dir`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    let regime = validate(cfg)?;
    let study = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Io(format!("thread pool: {e}")))?
            .install(|| execute(cfg)),
        None => execute(cfg),
    }?;
    let digest = cfg.digest();
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir)?;
    let mut written = Vec::new();

    let echo = format!("# digest {digest}\n{}", cfg.canonical());
    written.push(write(&dir, "config.echo", echo.as_bytes())?);

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["config_digest", "study", "cell", "estimate", "half_width", "n_paths", "pass"])?;
    for r in &study.rows {
        w.write_record([
            digest.as_str(),
            &study.study,
            &r.cell,
            &r.estimate.to_string(),
            &r.half_width.to_string(),
            &r.n_paths.to_string(),
            &r.pass.to_string(),
        ])?;
    }
    written.push(write(&dir, &format!("{}.csv", study.study), &finish(w)?)?);

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["config_digest", "study", "regime", "pass", "detail", "excluded_paths"])?;
    w.write_record([
        digest.as_str(),
        &study.study,
        regime.regime.name(),
        &study.verdict.pass.to_string(),
        &study.verdict.detail,
        &study.excluded.len().to_string(),
    ])?;
    written.push(write(&dir, "verdicts.csv", &finish(w)?)?);

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["config_digest", "path_id", "reason"])?;
    for (id, why) in &study.excluded {
        w.write_record([digest.as_str(), &id.to_string(), why])?;
    }
    written.push(write(&dir, "excluded.csv", &finish(w)?)?);

    if cfg.dump_states {
        written.extend(dump_states(cfg, &dir, &digest)?);
    }

    let text = render_report(&digest, std::slice::from_ref(&study), &regime.render());
    written.push(write(&dir, "report.txt", text.as_bytes())?);

    let mut manifest = format!("digest {digest}\n");
    written.sort();
    for name in &written {
        let bytes = fs::read(dir.join(name))?;
        manifest.push_str(&format!("{:x}  {name}\n", Sha256::digest(&bytes)));
    }
    write(&dir, "manifest.txt", manifest.as_bytes())?;
    Ok(RunOutcome { dir, digest, regime, study })
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>, CliError> {
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

/// Writes `dir/name` and returns `name`.
fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<String, CliError> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(name.to_string())
}

struct Setup {
    operator: DirichletLaplacian,
    graph: MonotoneGraph,
    noise: DiffusionCoefficient,
    u0: GridFunction,
    paths: PathSet,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup, CliError> {
    let driver = WienerDriver::new(cfg.modes, cfg.seed, fine_dt(cfg))?;
    Ok(Setup {
        operator: DirichletLaplacian::new(cfg.mesh),
        graph: MonotoneGraph::from_name(&cfg.graph)?,
        noise: cfg.diffusion()?,
        u0: cfg.initial_condition()?,
        paths: PathSet::new(driver, cfg.paths),
    })
}

fn sine(m: usize, k: usize) -> GridFunction {
    GridFunction::from_fn(m, |x| (k as f64 * std::f64::consts::PI * x).sin())
}

fn execute(cfg: &ExperimentConfig) -> Result<StudyReport, CliError> {
    let s = setup(cfg)?;
    let model = Model { operator: &s.operator, graph: &s.graph, noise: &s.noise };
    let sc = &cfg.solver;
    let st = &cfg.study;
    let m = cfg.mesh;
    let report = match st.kind {
        StudyKind::Simulate => simulate(cfg, &s)?,
        StudyKind::Cauchy => cauchy_in_lambda_study(sc, model, &s.u0, &st.lambdas, &s.paths)?.report(),
        StudyKind::Apriori => {
            let family: Vec<GridFunction> = st.amplitudes.iter().map(|&c| &s.u0 * c).collect();
            apriori_bound_study(sc, model, &family, &st.lambdas, &s.paths)?.report()
        }
        StudyKind::Lipschitz => {
            let w = sine(m, 2);
            let pairs: Vec<_> = st.distances.iter().map(|&d| (s.u0.clone(), &s.u0 + &(&w * d))).collect();
            lipschitz_dependence_study(sc, model, &pairs, &s.paths)?.report()
        }
        StudyKind::TwoNoise => {
            let column = sine(m, st.mode);
            two_noise_study(sc, &s.operator, &s.graph, &s.noise, &s.u0, st.mode - 1, &column, &st.deltas, &s.paths)?
                .report()
        }
        StudyKind::Maximal => {
            let family = vec![
                s.noise.clone(),
                DiffusionCoefficient::additive(NoiseOperatorValue::new(vec![s.operator.eigenvector(1)])),
                DiffusionCoefficient::zero(cfg.modes, m),
            ];
            maximal_inequality_study(&s.operator, &family, &st.scales, &st.p_list, sc.q, sc.grid()?, &s.paths)?
                .report()
        }
        StudyKind::Isometry => {
            let chk = ito_isometry_check(&s.operator, &s.noise, sc.grid()?, &s.paths)?;
            let pass = chk.z_score <= ISOMETRY_Z_MAX;
            StudyReport {
                study: "isometry".into(),
                rows: vec![
                    StudyRow {
                        cell: "estimate".into(),
                        estimate: chk.estimate.value,
                        half_width: chk.estimate.half_width,
                        n_paths: chk.estimate.n_paths,
                        pass,
                    },
                    StudyRow { cell: "exact".into(), estimate: chk.exact, half_width: 0.0, n_paths: 0, pass: true },
                ],
                verdict: Verdict {
                    pass,
                    detail: format!("z = {:.3} standard errors (limit {ISOMETRY_Z_MAX})", chk.z_score),
                },
                excluded: Vec::new(),
            }
        }
        StudyKind::Gamma => gamma_contraction_study(sc, model, &s.u0, st.outer, &s.paths)?.report(),
        StudyKind::Certificates => {
            let composites = composite_graphs(&s.graph, sc.q)?;
            let base = sc.with_lambda(0.0);
            let mut variants =
                vec![("proximal".to_string(), base), ("proximal_dt/2".to_string(), base.with_dt(sc.dt / 2.0))];
            variants.extend(st.lambdas.iter().map(|&l| (format!("lambda={l}"), sc.with_lambda(l))));
            certificate_study(&variants, model, &s.u0, &composites, &s.paths)?.report()
        }
        StudyKind::ItoSlack => ito_slack_study(sc, model, &s.u0, &st.dts, &s.paths)?.report(),
    };
    Ok(report)
}

/// Plain simulation of the configured scheme: moment, residual and graph
/// membership summaries.
fn simulate(cfg: &ExperimentConfig, s: &Setup) -> Result<StudyReport, CliError> {
    let sc = &cfg.solver;
    let grid = sc.grid()?;
    let model = Model { operator: &s.operator, graph: &s.graph, noise: &s.noise };
    let out = run_paths(&s.paths, |id| {
        let traj = solve_with(sc, model, &s.u0, &s.paths.increments(id, grid)?)?;
        Ok(vec![
            traj.sup_norm(sc.q, sc.alpha).powf(sc.p),
            mild_residual(&traj, &s.operator, sc.eta, sc.q),
            traj.graph_violation(&s.graph)?,
        ])
    });
    let hp = hp_from_powered(&out.column(0), sc.p, "H_p(L_q)")?;
    let residual = mean_estimate(&out.column(1), "mild residual")?;
    let violation = out.column(2).into_iter().fold(0.0, f64::max);
    let pass = hp.value.is_finite() && violation <= GRAPH_TOL;
    let n = hp.n_paths;
    Ok(StudyReport {
        study: "simulate".into(),
        rows: vec![
            StudyRow { cell: "hp_norm".into(), estimate: hp.value, half_width: hp.half_width, n_paths: n, pass: hp.value.is_finite() },
            StudyRow {
                cell: "mild_residual".into(),
                estimate: residual.value,
                half_width: residual.half_width,
                n_paths: n,
                pass: residual.value.is_finite(),
            },
            StudyRow { cell: "graph_violation".into(), estimate: violation, half_width: 0.0, n_paths: n, pass: violation <= GRAPH_TOL },
        ],
        verdict: Verdict {
            pass,
            detail: format!("‖u‖_H = {:.6}, largest graph violation {violation:.2e} (tol {GRAPH_TOL:e})", hp.value),
        },
        excluded: out.excluded,
    })
}

/// Per-path checkpoint summaries and full state dumps of the base scheme.
fn dump_states(cfg: &ExperimentConfig, dir: &Path, digest: &str) -> Result<Vec<String>, CliError> {
    let s = setup(cfg)?;
    let sc = &cfg.solver;
    let grid = sc.grid()?;
    let model = Model { operator: &s.operator, graph: &s.graph, noise: &s.noise };
    let mut names = Vec::new();
    for chunk in s.paths.ids.chunks(DUMP_CHUNK) {
        let solved: Vec<(u64, Result<(String, Vec<u8>), CliError>)> = chunk
            .par_iter()
            .map(|&id| {
                let r = (|| {
                    let traj = solve_with(sc, model, &s.u0, &s.paths.increments(id, grid)?)?;
                    let slack = ito_inequality_residual(&traj, sc.eta, sc.q);
                    let mut csv_text = String::new();
                    for (i, line) in traj.summary_csv(sc.q, &slack).lines().enumerate() {
                        let first = if i == 0 { "config_digest" } else { digest };
                        csv_text.push_str(&format!("{first},{line}\n"));
                    }
                    let mut bin = Vec::new();
                    traj.write_state_dump(&mut bin)?;
                    Ok((csv_text, bin))
                })();
                (id, r)
            })
            .collect();
        for (id, r) in solved {
            // A path that fails to solve is not dumped.
            if let Ok((text, bin)) = r {
                names.push(write(dir, &format!("trajectories/path_{id:05}.csv"), text.as_bytes())?);
                names.push(write(dir, &format!("trajectories/path_{id:05}.bin"), &bin)?);
            }
        }
    }
    Ok(names)
}
