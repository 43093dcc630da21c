use std::path::PathBuf;

use chrono::Utc;
use clap::Args;
use colo_core::checks::{all_checks, run_checks, CheckOutcome, GradCheck};
use serde::{Deserialize, Serialize};

use super::write_json;
use crate::error::{CliError, Result};
use crate::manifest::{prepare_dir, run_dir, ManifestBuilder};

pub const GRADCHECK_FILE: &str = "gradcheck.json";

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

pub fn render(outcomes: &[CheckOutcome]) -> String {
    let mut s = String::new();
    for o in outcomes {
        let status = if o.passed() { "PASS" } else { "FAIL" };
        s.push_str(&format!("{status} {:<24} max rel err {:.3e} (tol {:.0e})", o.name, o.max_rel_err, o.tolerance));
        if let Some(e) = &o.error {
            s.push_str(&format!(" error: {e}"));
        }
        s.push('\n');
    }
    s
}

/// Runs `checks`, writes the listing, and fails naming every failed check.
pub fn run_with(args: GradcheckArgs, checks: Vec<GradCheck>) -> Result<Vec<CheckOutcome>> {
    let started = Utc::now();
    let dir = run_dir(args.out.as_deref(), 0, started);
    prepare_dir(&dir, &[GRADCHECK_FILE], args.force)?;
    let outcomes = run_checks(&checks);
    print!("{}", render(&outcomes));
    let path = dir.join(GRADCHECK_FILE);
    write_json(&path, &outcomes)?;
    let mut m = ManifestBuilder::new("gradcheck", &args, 0, started)?;
    m.artifact(path);
    m.write(&dir)?;
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed()).map(|o| o.name.as_str()).collect();
    if !failed.is_empty() {
        return Err(CliError::ChecksFailed(failed.len(), failed.join(", ")));
    }
    Ok(outcomes)
}

pub fn run(args: GradcheckArgs) -> Result<Vec<CheckOutcome>> {
    run_with(args, all_checks())
}
