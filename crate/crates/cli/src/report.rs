//! Reading an artifact directory back: integrity, digest consistency and a
//! human-readable verdict summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use monospde::estimators::{StudyReport, StudyRow, Verdict};

use crate::CliError;

#[derive(Debug, Clone)]
pub struct ReportSummary {
    pub digest: String,
    pub studies: Vec<StudyReport>,
    pub all_pass: bool,
    pub text: String,
}

impl ReportSummary {
    pub fn failed(&self) -> Vec<&str> {
        self.studies.iter().filter(|s| !s.verdict.pass).map(|s| s.study.as_str()).collect()
    }
}

fn mark(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Summary text shared by `report.txt` and the `report` command.
pub fn render_report(digest: &str, studies: &[StudyReport], header: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "config digest: {digest}");
    s.push_str(header);
    for st in studies {
        let _ = writeln!(s, "\n== {} : {}", st.study, mark(st.verdict.pass));
        let _ = writeln!(s, "   {}", st.verdict.detail);
        if !st.excluded.is_empty() {
            let _ = writeln!(s, "   excluded paths: {}", st.excluded.len());
        }
        let width = st.rows.iter().map(|r| r.cell.chars().count()).max().unwrap_or(4).max(4);
        let _ = writeln!(s, "   {:<width$}  {:>14}  {:>12}  {:>7}  ok", "cell", "estimate", "±95%", "paths");
        for r in &st.rows {
            let _ = writeln!(
                s,
                "   {:<width$}  {:>14.6e}  {:>12.3e}  {:>7}  {}",
                r.cell,
                r.estimate,
                r.half_width,
                r.n_paths,
                if r.pass { "yes" } else { "no" }
            );
        }
    }
    let failed: Vec<&str> = studies.iter().filter(|s| !s.verdict.pass).map(|s| s.study.as_str()).collect();
    if failed.is_empty() {
        let _ = writeln!(s, "\noverall: PASS");
    } else {
        let _ = writeln!(s, "\noverall: FAIL ({})", failed.join(", "));
    }
    s
}

fn read_manifest(dir: &Path) -> Result<(String, BTreeMap<String, String>), CliError> {
    let path = dir.join("manifest.txt");
    let text = fs::read_to_string(&path).map_err(|e| CliError::Integrity(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let digest = lines
        .next()
        .and_then(|l| l.strip_prefix("digest "))
        .ok_or_else(|| CliError::Integrity("manifest.txt: missing digest line".into()))?
        .to_string();
    let mut files = BTreeMap::new();
    for l in lines {
        let (hash, name) = l
            .split_once("  ")
            .ok_or_else(|| CliError::Integrity(format!("manifest.txt: malformed line `{l}`")))?;
        files.insert(name.to_string(), hash.to_string());
    }
    Ok((digest, files))
}

/// Distinct values of the `config_digest` column of a CSV file.
fn csv_digests(path: &Path) -> Result<Vec<String>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Integrity(format!("{}: {e}", path.display())))?;
    let headers = r.headers().map_err(|e| CliError::Integrity(format!("{}: {e}", path.display())))?.clone();
    if headers.get(0) != Some("config_digest") {
        return Err(CliError::Integrity(format!("{}: first column is not config_digest", path.display())));
    }
    let mut out: Vec<String> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::Integrity(format!("{}: {e}", path.display())))?;
        let d = rec.get(0).unwrap_or("").to_string();
        if !out.contains(&d) {
            out.push(d);
        }
    }
    Ok(out)
}

fn relative(dir: &Path, path: &Path) -> String {
    path.strip_prefix(dir).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

fn parse_bool(path: &str, v: &str) -> Result<bool, CliError> {
    v.parse().map_err(|_| CliError::Integrity(format!("{path}: bad boolean `{v}`")))
}

fn parse_f64(path: &str, v: &str) -> Result<f64, CliError> {
    v.parse().map_err(|_| CliError::Integrity(format!("{path}: bad number `{v}`")))
}

/// Verifies `dir` and summarizes its verdicts.
///
/// Fails with [`CliError::Integrity`] when a file is missing, unlisted or
/// does not match its manifest hash, and with [`CliError::MixedDigest`] when
/// files carry different config digests.
pub fn report(dir: &Path) -> Result<ReportSummary, CliError> {
    let (digest, files) = read_manifest(dir)?;

    // Digests first: a file copied from another run is a mixed directory
    // rather than a corrupted one.
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::Io(e.to_string()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let name = relative(dir, entry.path());
        if name.ends_with(".csv") {
            let ds = csv_digests(entry.path())?;
            if let Some(other) = ds.iter().find(|d| **d != digest) {
                return Err(CliError::MixedDigest(format!("{name} carries {other}, manifest has {digest}")));
            }
        }
        if name != "manifest.txt" && !files.contains_key(&name) {
            return Err(CliError::Integrity(format!("{name} is not listed in manifest.txt")));
        }
    }
    let echo = fs::read_to_string(dir.join("config.echo")).map_err(|e| CliError::Integrity(format!("config.echo: {e}")))?;
    match echo.lines().next().and_then(|l| l.strip_prefix("# digest ")) {
        Some(d) if d == digest => {}
        Some(d) => return Err(CliError::MixedDigest(format!("config.echo carries {d}, manifest has {digest}"))),
        None => return Err(CliError::Integrity("config.echo: missing digest line".into())),
    }
    for (name, want) in &files {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| CliError::Integrity(format!("{name}: {e}")))?;
        let got = format!("{:x}", Sha256::digest(&bytes));
        if &got != want {
            return Err(CliError::Integrity(format!("{name}: content hash {got} does not match manifest {want}")));
        }
    }

    let mut excluded = Vec::new();
    let mut r = csv::Reader::from_path(dir.join("excluded.csv"))
        .map_err(|e| CliError::Integrity(format!("excluded.csv: {e}")))?;
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::Integrity(format!("excluded.csv: {e}")))?;
        let id = rec.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| CliError::Integrity("excluded.csv: bad path id".into()))?;
        excluded.push((id, rec.get(2).unwrap_or("").to_string()));
    }

    let mut studies = Vec::new();
    let mut regimes = Vec::new();
    let mut r = csv::Reader::from_path(dir.join("verdicts.csv"))
        .map_err(|e| CliError::Integrity(format!("verdicts.csv: {e}")))?;
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::Integrity(format!("verdicts.csv: {e}")))?;
        if rec.len() != 6 {
            return Err(CliError::Integrity("verdicts.csv: expected 6 columns".into()));
        }
        let study = rec[1].to_string();
        regimes.push(rec[2].to_string());
        let verdict = Verdict { pass: parse_bool("verdicts.csv", &rec[3])?, detail: rec[4].to_string() };
        let table = format!("{study}.csv");
        let mut rows = Vec::new();
        let mut t = csv::Reader::from_path(dir.join(&table)).map_err(|e| CliError::Integrity(format!("{table}: {e}")))?;
        for row in t.records() {
            let row = row.map_err(|e| CliError::Integrity(format!("{table}: {e}")))?;
            if row.len() != 7 {
                return Err(CliError::Integrity(format!("{table}: expected 7 columns")));
            }
            rows.push(StudyRow {
                cell: row[2].to_string(),
                estimate: parse_f64(&table, &row[3])?,
                half_width: parse_f64(&table, &row[4])?,
                n_paths: row[5].parse().map_err(|_| CliError::Integrity(format!("{table}: bad path count")))?,
                pass: parse_bool(&table, &row[6])?,
            });
        }
        studies.push(StudyReport { study, rows, verdict, excluded: excluded.clone() });
    }
    if studies.is_empty() {
        return Err(CliError::Integrity("verdicts.csv: no studies".into()));
    }
    let all_pass = studies.iter().all(|s| s.verdict.pass);
    let header = format!("regime: {}\n", regimes.join(", "));
    let text = render_report(&digest, &studies, &header);
    Ok(ReportSummary { digest, studies, all_pass, text })
}
