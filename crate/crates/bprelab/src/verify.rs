//! Cross-check orchestration: every selected check runs with its own
//! tolerance and failures are recorded per check.

use bprelab_core::EnvironmentModel;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, VerifyCheck};
use crate::report::{SuiteReport, Verdict};
use crate::suites::{burkholder_verdicts, identity_batch, identity_verdict, p2_verdicts, recursion_verdicts, SuiteOutput};

fn errored(check: VerifyCheck, e: impl ToString) -> Vec<Verdict> {
    vec![Verdict::flag(check.name(), "check ran to completion", false).with_detail(e.to_string())]
}

fn run_check(cfg: &ExperimentConfig, check: VerifyCheck, notes: &mut Vec<String>) -> Vec<Verdict> {
    let iid = matches!(cfg.environment, EnvironmentModel::IidMixture { .. });
    match check {
        VerifyCheck::P2Identities => match p2_verdicts(cfg, cfg.n_max.max(12).min(horizon_cap(cfg))) {
            Ok((v, _)) => v,
            Err(e) => errored(check, e),
        },
        VerifyCheck::RecursiveInequality | VerifyCheck::GrowthEnvelope if !iid => {
            notes.push(format!("{}: needs an i.i.d. environment, skipped", check.name()));
            Vec::new()
        }
        VerifyCheck::RecursiveInequality => match recursion_verdicts(&cfg.environment) {
            Ok((v, _, _)) => vec![v],
            Err(e) => errored(check, e),
        },
        VerifyCheck::GrowthEnvelope => match recursion_verdicts(&cfg.environment) {
            Ok((_, v, _)) => vec![v],
            Err(e) => errored(check, e),
        },
        VerifyCheck::Burkholder => match burkholder_verdicts(cfg) {
            Ok((v, _, _)) => v,
            Err(e) => errored(check, e),
        },
        VerifyCheck::Identity => match identity_batch(cfg) {
            Ok(batch) => vec![identity_verdict(&batch, cfg.tolerances.identity)],
            Err(e) => errored(check, e),
        },
    }
}

fn horizon_cap(cfg: &ExperimentConfig) -> usize {
    match &cfg.environment {
        EnvironmentModel::FixedPath { path } => path.len(),
        EnvironmentModel::IidMixture { .. } => usize::MAX,
    }
}

/// Runs the configured cross-checks as one report section.
pub fn verify_suite(cfg: &ExperimentConfig) -> SuiteOutput {
    let mut notes = Vec::new();
    let mut verdicts = Vec::new();
    let mut listing = Vec::new();
    for &check in &cfg.verify {
        let v = run_check(cfg, check, &mut notes);
        listing.push(json!({
            "check": check.name(),
            "verdicts": v.iter().map(|x| json!({ "name": x.check, "anchor": x.anchor, "passed": x.passed, "slack": x.slack })).collect::<Vec<Value>>(),
        }));
        verdicts.extend(v);
    }
    SuiteOutput {
        report: SuiteReport::new("verify", verdicts, json!({ "checks": listing }), notes),
        files: Vec::new(),
    }
}
