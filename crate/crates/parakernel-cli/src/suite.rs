//! JSON manifests listing config files, run one after another.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use parakernel::probe::Verdict;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Expect};
use crate::error::CliError;
use crate::output::{write, Outcome};

pub const SUITE_SCHEMA: &str = "parakernel.suite/1";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    /// Config paths, relative to the manifest.
    #[serde(default)]
    pub experiments: Vec<PathBuf>,
}

/// Load a manifest and every config it lists; any invalid config or repeated
/// id rejects the whole suite before anything runs.
pub fn load(path: &Path) -> Result<(Manifest, Vec<ExperimentConfig>), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| CliError::Manifest { path: path.to_path_buf(), msg: e.to_string() })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let configs = manifest.experiments.iter().map(|p| ExperimentConfig::load(&base.join(p))).collect::<Result<Vec<_>, _>>()?;
    let mut seen = BTreeSet::new();
    if let Some(dup) = configs.iter().find(|c| !seen.insert(c.id.as_str())) {
        return Err(CliError::Manifest { path: path.to_path_buf(), msg: format!("duplicate experiment id {:?}", dup.id) });
    }
    Ok((manifest, configs))
}

#[derive(Debug, Clone, Serialize)]
pub struct Entry {
    pub id: String,
    pub kind: &'static str,
    pub expect: Expect,
    pub verdict: Option<Verdict>,
    pub outcome: Option<Outcome>,
    pub ok: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub schema: &'static str,
    pub name: String,
    pub ok: bool,
    pub passed: usize,
    pub failed: usize,
    pub experiments: Vec<Entry>,
}

impl Summary {
    pub fn file_name(name: &str) -> String {
        format!("{name}.suite.json")
    }
}

/// Run every config into `out`, then write `<name>.suite.json`. Without
/// `continue_on_error` the first experiment that errors aborts the suite.
pub fn run(path: &Path, out: &Path, continue_on_error: bool, mut progress: impl FnMut(&Entry)) -> Result<Summary, CliError> {
    let (manifest, configs) = load(path)?;
    let mut entries = Vec::with_capacity(configs.len());
    for cfg in &configs {
        let entry = match crate::run_one(cfg, out) {
            Ok(done) => Entry {
                id: cfg.id.clone(),
                kind: cfg.kind.tag(),
                expect: cfg.expect,
                verdict: Some(done.report.verdict()),
                outcome: Some(done.outcome),
                ok: done.outcome.ok(),
                error: None,
            },
            Err(e) if continue_on_error => {
                Entry { id: cfg.id.clone(), kind: cfg.kind.tag(), expect: cfg.expect, verdict: None, outcome: None, ok: false, error: Some(e.to_string()) }
            }
            Err(e) => return Err(e),
        };
        progress(&entry);
        entries.push(entry);
    }
    let passed = entries.iter().filter(|e| e.ok).count();
    let summary = Summary {
        schema: SUITE_SCHEMA,
        name: manifest.name.clone(),
        ok: passed == entries.len(),
        passed,
        failed: entries.len() - passed,
        experiments: entries,
    };
    let mut bytes = serde_json::to_vec_pretty(&summary).map_err(|e| CliError::Serialize(e.to_string()))?;
    bytes.push(b'\n');
    write(&out.join(Summary::file_name(&manifest.name)), &bytes)?;
    Ok(summary)
}
