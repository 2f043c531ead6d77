//! Report files: `<id>.csv` with one row per series and `<id>.json` with the
//! full report, the config echo and the outcome.

use std::fs;
use std::path::{Path, PathBuf};

use parakernel::probe::{ProbeReport, Rule, Series, Verdict};
use serde::Serialize;

use crate::config::{ExperimentConfig, Expect};
use crate::error::CliError;

pub const REPORT_SCHEMA: &str = "parakernel.report/1";

/// How a verdict compares with the declared expectation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Outcome {
    #[serde(rename = "pass")]
    Pass,
    /// Expected failure with every designed blow-up series passing.
    #[serde(rename = "expected-fail matched")]
    ExpectedFailMatched,
    #[serde(rename = "outside-hypothesis")]
    OutsideHypothesis,
    #[serde(rename = "fail")]
    Fail,
    /// Declared `fail`, but the designed blow-up did not show.
    #[serde(rename = "unexpected pass")]
    UnexpectedPass,
}

impl Outcome {
    pub fn of(expect: Expect, report: &ProbeReport) -> Self {
        let growth_ok = report.series.iter().filter(|s| matches!(s.rule, Rule::Growth { .. })).all(Series::passes);
        match (report.verdict(), expect) {
            (Verdict::OutsideHypothesis, _) => Outcome::OutsideHypothesis,
            (Verdict::Pass, Expect::Pass) => Outcome::Pass,
            (Verdict::Pass, Expect::Fail) => Outcome::UnexpectedPass,
            (Verdict::Fail, Expect::Fail) if growth_ok => Outcome::ExpectedFailMatched,
            (Verdict::Fail, _) => Outcome::Fail,
        }
    }

    pub fn ok(self) -> bool {
        matches!(self, Outcome::Pass | Outcome::ExpectedFailMatched | Outcome::OutsideHypothesis)
    }

    pub fn tag(self) -> &'static str {
        match self {
            Outcome::Pass => "pass",
            Outcome::ExpectedFailMatched => "expected-fail matched",
            Outcome::OutsideHypothesis => "outside-hypothesis",
            Outcome::Fail => "fail",
            Outcome::UnexpectedPass => "unexpected pass",
        }
    }
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    schema: &'static str,
    id: &'a str,
    kind: &'static str,
    seed: u64,
    expect: Expect,
    verdict: Verdict,
    outcome: Outcome,
    failing: Vec<&'a str>,
    config: &'a toml::Table,
    report: &'a ProbeReport,
}

/// Files written for one experiment.
#[derive(Debug, Clone)]
pub struct Written {
    pub csv: PathBuf,
    pub json: PathBuf,
}

pub fn rule_text(rule: &Rule) -> String {
    match *rule {
        Rule::Finite => "finite".into(),
        Rule::Stable { cap } => format!("stable(cap={cap})"),
        Rule::Band { tol } => format!("band(tol={tol})"),
        Rule::Growth { min } => format!("growth(min={min})"),
        Rule::AtMost { limit } => format!("at_most({limit})"),
        Rule::AtLeast { limit } => format!("at_least({limit})"),
        Rule::Relative { target, tol } => format!("relative(target={target},tol={tol})"),
        Rule::Info => "info".into(),
    }
}

fn joined(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

pub const CSV_COLUMNS: [&str; 8] = ["experiment", "series", "quantity", "rule", "levels", "values", "max_growth", "passes"];

pub fn csv_bytes(report: &ProbeReport) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let ser = |e: csv::Error| CliError::Serialize(e.to_string());
    w.write_record(CSV_COLUMNS).map_err(ser)?;
    for s in &report.series {
        w.write_record([
            report.experiment.as_str(),
            &s.name,
            &s.quantity,
            &rule_text(&s.rule),
            &joined(&s.levels),
            &joined(&s.values),
            &s.max_growth().map(|g| g.to_string()).unwrap_or_default(),
            if s.passes() { "true" } else { "false" },
        ])
        .map_err(ser)?;
    }
    w.into_inner().map_err(|e| CliError::Serialize(e.to_string()))
}

pub fn json_bytes(cfg: &ExperimentConfig, report: &ProbeReport, outcome: Outcome) -> Result<Vec<u8>, CliError> {
    let doc = ReportDoc {
        schema: REPORT_SCHEMA,
        id: &cfg.id,
        kind: cfg.kind.tag(),
        seed: cfg.seed,
        expect: cfg.expect,
        verdict: report.verdict(),
        outcome,
        failing: report.failing().map(|s| s.name.as_str()).collect(),
        config: &cfg.echo,
        report,
    };
    let mut bytes = serde_json::to_vec_pretty(&doc).map_err(|e| CliError::Serialize(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub(crate) fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_report(dir: &Path, cfg: &ExperimentConfig, report: &ProbeReport, outcome: Outcome) -> Result<Written, CliError> {
    let csv = dir.join(format!("{}.csv", cfg.id));
    let json = dir.join(format!("{}.json", cfg.id));
    write(&csv, &csv_bytes(report)?)?;
    write(&json, &json_bytes(cfg, report, outcome)?)?;
    Ok(Written { csv, json })
}
