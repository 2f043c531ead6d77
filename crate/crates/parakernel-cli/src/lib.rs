//! Config-driven experiment runner for `parakernel`: TOML experiment
//! configs, JSON suite manifests, CSV and JSON reports.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod suite;

use std::path::{Path, PathBuf};

use parakernel::probe::ProbeReport;
use parakernel::solver::ladder_solve;

pub use config::{ExperimentConfig, Expect, Kind};
pub use error::CliError;
pub use output::Outcome;

/// Environment variable overriding the default output directory.
pub const OUT_ENV: &str = "PARAKERNEL_OUT";

/// `flag`, else `$PARAKERNEL_OUT`, else `./out`.
pub fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"))
}

/// Run `f` on a dedicated pool of `threads` workers (the global pool when
/// `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match threads {
        None => Ok(f()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| CliError::Serialize(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

pub struct Completed {
    pub report: ProbeReport,
    pub outcome: Outcome,
    pub files: output::Written,
}

/// Run one experiment and write its CSV and JSON into `out`.
pub fn run_one(cfg: &ExperimentConfig, out: &Path) -> Result<Completed, CliError> {
    let report = experiments::run(cfg)?;
    let outcome = Outcome::of(cfg.expect, &report);
    let files = output::write_report(out, cfg, &report, outcome)?;
    Ok(Completed { report, outcome, files })
}

/// Write the solution of every ladder level of a coercivity or mu-scan
/// config as `<id>.u.level<ℓ>.bin` (raw little-endian f64) next to a JSON
/// header describing the lattice.
pub fn dump_grid(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let config::Params::Coercivity(p) = &cfg.params else {
        return Err(CliError::Invalid {
            origin: cfg.id.clone(),
            path: "kind".into(),
            msg: format!("dump-grid needs a coercivity or mu-scan config, got {}", cfg.kind.tag()),
        });
    };
    let field = cfg.field()?.expect("validated configs carry coefficients");
    let mut written = Vec::new();
    for level in 0..p.ladder.levels {
        let sol = ladder_solve(&p.domain, &field, &p.ladder, &p.forcing, level)?;
        let stem = format!("{}.u.level{level}", cfg.id);
        let bin = out.join(format!("{stem}.bin"));
        let mut raw = Vec::with_capacity(8 * sol.u.values.len());
        sol.u.write_raw(&mut raw).map_err(|e| CliError::io(&bin, e))?;
        output::write(&bin, &raw)?;
        let head = serde_json::json!({
            "id": cfg.id,
            "level": level,
            "quantity": "u",
            "data": format!("{stem}.bin"),
            "grid": sol.u.header(),
        });
        let json = out.join(format!("{stem}.json"));
        let mut bytes = serde_json::to_vec_pretty(&head).map_err(|e| CliError::Serialize(e.to_string()))?;
        bytes.push(b'\n');
        output::write(&json, &bytes)?;
        written.extend([bin, json]);
    }
    Ok(written)
}
