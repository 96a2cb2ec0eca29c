//! Flat `section.key = value` experiment files.
//!
//! ```text
//! # comment
//! mesh.M = 63
//! graph = sign
//! noise.kind = additive
//! noise.weights = geometric:0.5
//! solver.dt = 1e-3
//! study.kind = cauchy
//! study.lambdas = 1, 0.5, 0.25
//! ```
//!
//! Keys other than `operator.sigma`, `noise.b`, `noise.columns`,
//! `noise.fine_dt`, `solver.regime` and `run.threads` have defaults; unknown
//! keys are rejected. The config digest is the SHA-256 of the canonical echo
//! (all resolved keys, sorted), which leaves out `output.dir` and
//! `run.threads` because they do not change any result.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use monospde::lq_space::{GridFunction, NoiseOperatorValue};
use monospde::mild_solver::SolverConfig;
use monospde::noise_model::{eigen_profile_columns, parse_weights, DiffusionCoefficient, LipschitzFn};

use crate::CliError;

const KEYS: &[&str] = &[
    "mesh.M",
    "operator.kind",
    "operator.sigma",
    "graph",
    "initial",
    "noise.kind",
    "noise.modes",
    "noise.seed",
    "noise.weights",
    "noise.b",
    "noise.columns",
    "noise.fine_dt",
    "solver.T",
    "solver.dt",
    "solver.lambda",
    "solver.eta",
    "solver.alpha",
    "solver.q",
    "solver.p",
    "solver.regime",
    "study.kind",
    "study.lambdas",
    "study.amplitudes",
    "study.distances",
    "study.deltas",
    "study.mode",
    "study.scales",
    "study.p_list",
    "study.outer",
    "study.dts",
    "run.paths",
    "run.threads",
    "output.dir",
    "output.dump_states",
];

/// Keys left out of the digest and the echo.
const VOLATILE: &[&str] = &["output.dir", "run.threads"];

fn defaults() -> BTreeMap<&'static str, &'static str> {
    BTreeMap::from([
        ("mesh.M", "63"),
        ("operator.kind", "dirichlet_laplacian"),
        ("graph", "sign"),
        ("initial", "sine:1"),
        ("noise.kind", "additive"),
        ("noise.modes", "8"),
        ("noise.seed", "42"),
        ("noise.weights", "geometric:0.5"),
        ("solver.T", "0.5"),
        ("solver.dt", "1e-3"),
        ("solver.lambda", "0"),
        ("solver.eta", "0"),
        ("solver.alpha", "0"),
        ("solver.q", "2"),
        ("solver.p", "2"),
        ("study.kind", "simulate"),
        ("study.lambdas", "1, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625"),
        ("study.amplitudes", "0.5, 2, 8"),
        ("study.distances", "0.4, 0.2, 0.1"),
        ("study.deltas", "0.4, 0.2, 0.1, 0.05, 0.025"),
        ("study.mode", "1"),
        ("study.scales", "0.25, 1, 4"),
        ("study.p_list", "1, 2, 4"),
        ("study.outer", "5"),
        ("study.dts", "2e-3, 1e-3, 5e-4, 2.5e-4"),
        ("run.paths", "200"),
        ("output.dir", "out"),
        ("output.dump_states", "false"),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Additive,
    Nemytskii,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyKind {
    Simulate,
    Cauchy,
    Apriori,
    Lipschitz,
    TwoNoise,
    Maximal,
    Isometry,
    Gamma,
    Certificates,
    ItoSlack,
}

impl StudyKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Cauchy => "cauchy",
            Self::Apriori => "apriori",
            Self::Lipschitz => "lipschitz",
            Self::TwoNoise => "two_noise",
            Self::Maximal => "maximal",
            Self::Isometry => "isometry",
            Self::Gamma => "gamma",
            Self::Certificates => "certificates",
            Self::ItoSlack => "ito_slack",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [
            Self::Simulate,
            Self::Cauchy,
            Self::Apriori,
            Self::Lipschitz,
            Self::TwoNoise,
            Self::Maximal,
            Self::Isometry,
            Self::Gamma,
            Self::Certificates,
            Self::ItoSlack,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }

    /// Studies that only make sense with additive noise.
    pub fn needs_additive(self) -> bool {
        matches!(self, Self::TwoNoise | Self::Maximal | Self::Isometry)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    StrictMild,
    Generalized,
    Mild,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Self::StrictMild => "strict_mild",
            Self::Generalized => "generalized",
            Self::Mild => "mild",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudySpec {
    pub kind: StudyKind,
    pub lambdas: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub distances: Vec<f64>,
    pub deltas: Vec<f64>,
    /// 1-based noise mode perturbed by the two-noise study.
    pub mode: usize,
    pub scales: Vec<f64>,
    pub p_list: Vec<f64>,
    pub outer: usize,
    pub dts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mesh: usize,
    pub sigma: Option<usize>,
    pub graph: String,
    pub initial: String,
    pub noise_kind: NoiseKind,
    pub modes: usize,
    pub seed: u64,
    pub weights: String,
    pub b: Option<String>,
    pub columns: Option<PathBuf>,
    pub fine_dt: Option<f64>,
    pub solver: SolverConfig,
    pub regime: Option<Regime>,
    pub study: StudySpec,
    pub paths: usize,
    pub threads: Option<usize>,
    pub output_dir: PathBuf,
    pub dump_states: bool,
    /// Resolved `key = value` pairs, sorted.
    entries: BTreeMap<String, String>,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub dump_states: bool,
}

/// Reads `key = value` lines; `#` starts a comment.
pub fn parse_entries(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)));
        };
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(CliError::Config(format!("line {}: unknown key `{k}`", i + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(CliError::Config(format!("line {}: duplicate key `{k}`", i + 1)));
        }
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse().map_err(|_| CliError::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn list(key: &str, v: &str) -> Result<Vec<f64>, CliError> {
    v.split(',').map(|s| num(key, s.trim())).collect()
}

fn boolean(key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::Config(format!("`{key}`: expected true/false, got `{v}`"))),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_text(&text, base, overrides)
    }

    /// `base` resolves relative `noise.columns` paths.
    pub fn from_text(text: &str, base: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let mut entries: BTreeMap<String, String> =
            defaults().into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        entries.extend(parse_entries(text)?);
        if let Some(n) = overrides.paths {
            entries.insert("run.paths".into(), n.to_string());
        }
        if let Some(s) = overrides.seed {
            entries.insert("noise.seed".into(), s.to_string());
        }
        if let Some(t) = overrides.threads {
            entries.insert("run.threads".into(), t.to_string());
        }
        if overrides.dump_states {
            entries.insert("output.dump_states".into(), "true".into());
        }
        let columns = entries.get("noise.columns").map(|c| base.join(c));
        if let Some(path) = &columns {
            // The digest must see the column data, not just the file name.
            let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            entries.insert("noise.columns".into(), format!("sha256:{:x}", Sha256::digest(&bytes)));
        }
        let get = |k: &str| entries.get(k).map(String::as_str);
        let req = |k: &str| get(k).ok_or_else(|| CliError::Config(format!("missing key `{k}`")));

        if req("operator.kind")? != "dirichlet_laplacian" {
            return Err(CliError::Config(format!(
                "`operator.kind`: only dirichlet_laplacian is available, got `{}`",
                req("operator.kind")?
            )));
        }
        let noise_kind = match req("noise.kind")? {
            "additive" => NoiseKind::Additive,
            "nemytskii" => NoiseKind::Nemytskii,
            "zero" => NoiseKind::Zero,
            other => return Err(CliError::Config(format!("`noise.kind`: unknown kind `{other}`"))),
        };
        let regime = match get("solver.regime") {
            None => None,
            Some("strict_mild") => Some(Regime::StrictMild),
            Some("generalized") => Some(Regime::Generalized),
            Some("mild") => Some(Regime::Mild),
            Some(other) => return Err(CliError::Config(format!("`solver.regime`: unknown regime `{other}`"))),
        };
        let kind = StudyKind::parse(req("study.kind")?)
            .ok_or_else(|| CliError::Config(format!("`study.kind`: unknown study `{}`", req("study.kind").unwrap())))?;
        let study = StudySpec {
            kind,
            lambdas: list("study.lambdas", req("study.lambdas")?)?,
            amplitudes: list("study.amplitudes", req("study.amplitudes")?)?,
            distances: list("study.distances", req("study.distances")?)?,
            deltas: list("study.deltas", req("study.deltas")?)?,
            mode: num("study.mode", req("study.mode")?)?,
            scales: list("study.scales", req("study.scales")?)?,
            p_list: list("study.p_list", req("study.p_list")?)?,
            outer: num("study.outer", req("study.outer")?)?,
            dts: list("study.dts", req("study.dts")?)?,
        };
        let solver = SolverConfig {
            horizon: num("solver.T", req("solver.T")?)?,
            dt: num("solver.dt", req("solver.dt")?)?,
            lambda: num("solver.lambda", req("solver.lambda")?)?,
            eta: num("solver.eta", req("solver.eta")?)?,
            alpha: num("solver.alpha", req("solver.alpha")?)?,
            q: num("solver.q", req("solver.q")?)?,
            p: num("solver.p", req("solver.p")?)?,
        };
        Ok(Self {
            mesh: num("mesh.M", req("mesh.M")?)?,
            sigma: get("operator.sigma").map(|s| num("operator.sigma", s)).transpose()?,
            graph: req("graph")?.to_string(),
            initial: req("initial")?.to_string(),
            noise_kind,
            modes: num("noise.modes", req("noise.modes")?)?,
            seed: num("noise.seed", req("noise.seed")?)?,
            weights: req("noise.weights")?.to_string(),
            b: get("noise.b").map(str::to_string),
            columns,
            fine_dt: get("noise.fine_dt").map(|s| num("noise.fine_dt", s)).transpose()?,
            solver,
            regime,
            study,
            paths: num("run.paths", req("run.paths")?)?,
            threads: get("run.threads").map(|s| num("run.threads", s)).transpose()?,
            output_dir: PathBuf::from(req("output.dir")?),
            dump_states: boolean("output.dump_states", req("output.dump_states")?)?,
            entries,
        })
    }

    /// Canonical `key = value` lines that determine every result.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            if !VOLATILE.contains(&k.as_str()) {
                let _ = writeln!(s, "{k} = {v}");
            }
        }
        s
    }

    /// Hex SHA-256 of [`canonical`](Self::canonical).
    pub fn digest(&self) -> String {
        format!("{:x}", Sha256::digest(self.canonical().as_bytes()))
    }

    /// Initial condition: `zero`, `constant:<c>`, `sine:<amp>[:<k>]`.
    pub fn initial_condition(&self) -> Result<GridFunction, CliError> {
        parse_initial(&self.initial, self.mesh)
    }

    pub fn diffusion(&self) -> Result<DiffusionCoefficient, CliError> {
        let weights = parse_weights(&self.weights, self.modes)?;
        match self.noise_kind {
            NoiseKind::Zero => Ok(DiffusionCoefficient::zero(self.modes, self.mesh)),
            NoiseKind::Nemytskii => {
                let b = self
                    .b
                    .as_deref()
                    .ok_or_else(|| CliError::Config("nemytskii noise needs `noise.b`".into()))?;
                Ok(DiffusionCoefficient::nemytskii(LipschitzFn::from_name(b)?, weights))
            }
            NoiseKind::Additive => match &self.columns {
                None => Ok(DiffusionCoefficient::additive(eigen_profile_columns(self.mesh, &weights))),
                Some(path) => Ok(DiffusionCoefficient::additive(read_columns(path, self.mesh, self.modes)?)),
            },
        }
    }
}

pub fn parse_initial(spec: &str, m: usize) -> Result<GridFunction, CliError> {
    let parts: Vec<&str> = spec.split(':').map(str::trim).collect();
    let bad = || CliError::Config(format!("`initial`: cannot parse `{spec}`"));
    match parts.as_slice() {
        ["zero"] => Ok(GridFunction::zeros(m)),
        ["constant", c] => Ok(GridFunction::constant(m, c.parse().map_err(|_| bad())?)),
        ["sine", amp] | ["sine", amp, _] => {
            let amp: f64 = amp.parse().map_err(|_| bad())?;
            let k: f64 = match parts.get(2) {
                Some(k) => k.parse::<usize>().map_err(|_| bad())? as f64,
                None => 1.0,
            };
            Ok(GridFunction::from_fn(m, |x| amp * (k * std::f64::consts::PI * x).sin()))
        }
        _ => Err(bad()),
    }
}

/// `M` rows of `m` comma-separated values: row `i` holds node `i` of every
/// column.
fn read_columns(path: &Path, m: usize, modes: usize) -> Result<NoiseOperatorValue, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut cols = vec![Vec::with_capacity(m); modes];
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        if rec.len() != modes {
            return Err(CliError::Config(format!(
                "{}: row {} has {} values, expected {modes}",
                path.display(),
                i + 1,
                rec.len()
            )));
        }
        for (c, field) in cols.iter_mut().zip(rec.iter()) {
            c.push(num::<f64>("noise.columns", field)?);
        }
    }
    if cols.first().map_or(0, Vec::len) != m {
        return Err(CliError::Config(format!("{}: expected {m} rows", path.display())));
    }
    Ok(NoiseOperatorValue::new(cols.into_iter().map(GridFunction::new).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> Result<ExperimentConfig, CliError> {
        ExperimentConfig::from_text(text, Path::new("."), &Overrides::default())
    }

    #[test]
    fn defaults_and_overrides() {
        let c = cfg("").unwrap();
        assert_eq!(c.mesh, 63);
        assert_eq!(c.study.kind, StudyKind::Simulate);
        assert_eq!(c.solver.dt, 1e-3);
        let o = Overrides { paths: Some(50), seed: Some(7), threads: Some(2), dump_states: true };
        let c = ExperimentConfig::from_text("run.paths = 400", Path::new("."), &o).unwrap();
        assert_eq!((c.paths, c.seed, c.threads, c.dump_states), (50, 7, Some(2), true));
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(matches!(cfg("mesh.M 63"), Err(CliError::Config(_))));
        assert!(matches!(cfg("mesh.N = 63"), Err(CliError::Config(_))));
        assert!(matches!(cfg("mesh.M = 63\nmesh.M = 31"), Err(CliError::Config(_))));
        assert!(matches!(cfg("solver.dt = fast"), Err(CliError::Config(_))));
        assert!(matches!(cfg("study.kind = everything"), Err(CliError::Config(_))));
        assert!(matches!(cfg("operator.kind = neumann"), Err(CliError::Config(_))));
    }

    #[test]
    fn digest_ignores_output_location_and_comments() {
        let a = cfg("# first\nmesh.M = 31\noutput.dir = a\nrun.threads = 1").unwrap();
        let b = cfg("mesh.M=31   # trailing\noutput.dir = b").unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
        let c = cfg("mesh.M = 63").unwrap();
        assert_ne!(a.digest(), c.digest());
        let d = ExperimentConfig::from_text("mesh.M = 31", Path::new("."), &Overrides { seed: Some(1), ..Default::default() });
        assert_ne!(a.digest(), d.unwrap().digest());
    }

    #[test]
    fn initial_conditions() {
        let u = parse_initial("sine:2:3", 7).unwrap();
        let x = 1.0 / 8.0;
        assert!((u.values()[0] - 2.0 * (3.0 * std::f64::consts::PI * x).sin()).abs() < 1e-15);
        assert_eq!(parse_initial("constant:1.5", 3).unwrap().values(), &[1.5; 3]);
        assert_eq!(parse_initial("zero", 2).unwrap().values(), &[0.0; 2]);
        assert!(parse_initial("gauss:1", 3).is_err());
    }

    #[test]
    fn column_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cols.csv");
        std::fs::write(&path, "1, 0\n2, 0.5\n3, 1\n").unwrap();
        let c = ExperimentConfig::from_text(
            "mesh.M = 3\nnoise.modes = 2\nnoise.columns = cols.csv",
            dir.path(),
            &Overrides::default(),
        )
        .unwrap();
        assert!(c.canonical().contains("noise.columns = sha256:"));
        let b = c.diffusion().unwrap();
        let cols = b.evaluate(0.0, &GridFunction::zeros(3));
        assert_eq!(cols.columns()[0].values(), &[1.0, 2.0, 3.0]);
        assert_eq!(cols.columns()[1].values(), &[0.0, 0.5, 1.0]);

        std::fs::write(&path, "1, 0\n2\n").unwrap();
        let c = ExperimentConfig::from_text("mesh.M = 2\nnoise.modes = 2\nnoise.columns = cols.csv", dir.path(), &Overrides::default())
            .unwrap();
        assert!(c.diffusion().is_err());
    }
}
