//! CSV and markdown rendering of experiment reports and oracle tables.
//!
//! Column names follow the benchmark tables so outputs diff cleanly. The
//! grouping column replaces grey shading with group labels: algorithms
//! sharing a letter are not statistically distinguishable.

use std::fmt::Write as _;

use crate::envs::Environment;
use crate::error::{CoreError, Result};
use crate::harness::{ExperimentReport, MetricSignificance, ReplicationResult};
use crate::mdp::StationaryPolicy;
use crate::oracle::{self, OptimalityReport};

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// One row per replication.
pub fn per_replication_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(
        "algorithm,replication,sum_reward,steps_to_goal_mean,queue_length_mean,final_rho,converged,steps_used\n",
    );
    for r in &report.results {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.algorithm,
            r.replication,
            r.sum_reward,
            fmt_opt(r.steps_to_goal_mean),
            fmt_opt(r.queue_length_mean),
            fmt_opt(r.final_rho),
            r.converged,
            r.steps_used
        );
    }
    out
}

/// One row per algorithm with mean/stddev pairs.
pub fn aggregate_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(
        "algorithm,sum_reward_mean,sum_reward_stddev,steps_to_goal_mean,steps_to_goal_stddev,queue_length_mean,queue_length_stddev,rho_mean,rho_stddev,steps_used_mean,converged\n",
    );
    for a in &report.aggregates {
        let pair = |m: &Option<crate::harness::MetricSummary>| match m {
            Some(s) => (format!("{}", s.mean), format!("{}", s.stddev)),
            None => (String::new(), String::new()),
        };
        let (sg_m, sg_s) = pair(&a.steps_to_goal);
        let (ql_m, ql_s) = pair(&a.queue_length);
        let (rho_m, rho_s) = pair(&a.rho);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            a.algorithm,
            a.sum_reward.mean,
            a.sum_reward.stddev,
            sg_m,
            sg_s,
            ql_m,
            ql_s,
            rho_m,
            rho_s,
            a.steps_used.mean,
            a.converged
        );
    }
    out
}

/// Parse a per-replication CSV produced by [`per_replication_csv`].
pub fn parse_per_replication_csv(csv: &str) -> Result<Vec<ReplicationResult>> {
    let mut lines = csv.lines();
    let header = lines
        .next()
        .ok_or_else(|| CoreError::Config("empty CSV".into()))?;
    if !header.starts_with("algorithm,replication,sum_reward") {
        return Err(CoreError::Config(format!(
            "unexpected CSV header `{header}`"
        )));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 8 {
            return Err(CoreError::Config(format!(
                "line {}: expected 8 fields, got {}",
                i + 2,
                parts.len()
            )));
        }
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                Ok(Some(s.parse::<f64>().map_err(|e| {
                    CoreError::Config(format!("line {}: {e}", i + 2))
                })?))
            }
        };
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| CoreError::Config(format!("line {}: {e}", i + 2)))
        };
        out.push(ReplicationResult {
            algorithm: parts[0].to_string(),
            replication: num(parts[1])? as u32,
            sum_reward: num(parts[2])?,
            steps_to_goal_mean: opt(parts[3])?,
            queue_length_mean: opt(parts[4])?,
            final_rho: opt(parts[5])?,
            converged: parts[6] == "true",
            steps_used: num(parts[7])? as u64,
        snapshot: None,
        });
    }
    Ok(out)
}

/// Letter labels for the groups an algorithm belongs to.
fn group_letters(sig: &MetricSignificance, algo_idx: usize) -> String {
    let mut letters = String::new();
    for (g, members) in sig.groups.iter().enumerate() {
        if members.contains(&algo_idx) {
            letters.push((b'a' + (g % 26) as u8) as char);
        }
    }
    letters
}

/// Markdown report shaped like the benchmark tables: one row per algorithm,
/// mean/stddev columns per metric, significance groups, and the adjusted
/// pairwise p-value matrices.
pub fn markdown_report(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Experiment report: {}", report.environment);
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "Seed {}, {} replications.",
        report.seed, report.replications
    );
    let rho_line: Vec<String> = report
        .aggregates
        .iter()
        .filter_map(|a| {
            a.rho
                .as_ref()
                .map(|r| format!("{} inferred rho {:.3}", a.algorithm, r.mean))
        })
        .collect();
    if !rho_line.is_empty() {
        let _ = writeln!(out, "Average-reward estimates: {}.", rho_line.join(", "));
    }
    let _ = writeln!(out);

    let has_goal = report.aggregates.iter().any(|a| a.steps_to_goal.is_some());
    let has_queue = report.aggregates.iter().any(|a| a.queue_length.is_some());
    let mut header = String::from("| Algorithm | Sum Reward Mean | StdDev |");
    let mut rule = String::from("|---|---|---|");
    if has_goal {
        header.push_str(" Avg. Steps to Goal Mean | StdDev |");
        rule.push_str("---|---|");
    }
    if has_queue {
        header.push_str(" Queue Length Mean | StdDev |");
        rule.push_str("---|---|");
    }
    header.push_str(" Steps | Groups |");
    rule.push_str("---|---|");
    let _ = writeln!(out, "{header}");
    let _ = writeln!(out, "{rule}");
    let sum_sig = report.significance_for("sum_reward");
    for (i, a) in report.aggregates.iter().enumerate() {
        let mut row = format!(
            "| {} | {:.3} | {:.3} |",
            a.algorithm, a.sum_reward.mean, a.sum_reward.stddev
        );
        if has_goal {
            match &a.steps_to_goal {
                Some(s) => {
                    let _ = write!(row, " {:.3} | {:.3} |", s.mean, s.stddev);
                }
                None => row.push_str("  |  |"),
            }
        }
        if has_queue {
            match &a.queue_length {
                Some(s) => {
                    let _ = write!(row, " {:.3} | {:.3} |", s.mean, s.stddev);
                }
                None => row.push_str("  |  |"),
            }
        }
        let groups = sum_sig.map(|s| group_letters(s, i)).unwrap_or_default();
        let _ = write!(row, " {:.1} | {} |", a.steps_used.mean, groups);
        let _ = writeln!(out, "{row}");
    }
    let _ = writeln!(out);
    if sum_sig.is_some() {
        let _ = writeln!(
            out,
            "Algorithms sharing a group letter on a metric are not statistically \
             distinguishable (Conover pairwise p-values, Benjamini-Hochberg FDR, 0.05)."
        );
        let _ = writeln!(out);
    }

    for sig in &report.significance {
        let _ = writeln!(out, "## {} significance", sig.metric);
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "Friedman statistic {:.4}, p = {:.4e}.",
            sig.friedman_statistic, sig.friedman_p
        );
        let _ = writeln!(out);
        let mut header = String::from("| |");
        let mut rule = String::from("|---|");
        for l in &report.labels {
            let _ = write!(header, " {l} |");
            rule.push_str("---|");
        }
        let _ = writeln!(out, "{header}");
        let _ = writeln!(out, "{rule}");
        for (i, l) in report.labels.iter().enumerate() {
            let mut row = format!("| {l} |");
            for j in 0..report.labels.len() {
                if j < i {
                    let _ = write!(row, " {:.3e} |", sig.adjusted_p[i][j]);
                } else {
                    row.push_str("  |");
                }
            }
            let _ = writeln!(out, "{row}");
        }
        let _ = writeln!(out);
        for (g, members) in sig.groups.iter().enumerate() {
            let names: Vec<&str> = members
                .iter()
                .map(|&i| report.labels[i].as_str())
                .collect();
            let letter = (b'a' + (g % 26) as u8) as char;
            let _ = writeln!(out, "- group {letter}: {}", names.join(", "));
        }
        let _ = writeln!(out);
    }
    out
}

/// Per-policy oracle table: gain, bias per state, discounted values per
/// discount factor. CSV form.
pub fn oracle_csv(
    env: &Environment,
    policies: &[(String, StationaryPolicy)],
    gammas: &[f64],
) -> Result<String> {
    let n = env.model.n_states();
    let mut out = String::from("policy,quantity");
    for s in 0..n {
        let _ = write!(out, ",{}", env.model.state_label(s));
    }
    out.push('\n');
    for (name, pol) in policies {
        let g = oracle::gain(&env.model, pol)?;
        let _ = write!(out, "{name},gain");
        for _ in 0..n {
            let _ = write!(out, ",{g}");
        }
        out.push('\n');
        let bias = oracle::bias(&env.model, pol)?;
        let _ = write!(out, "{name},bias");
        for v in &bias {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
        for &gamma in gammas {
            let d = oracle::discounted_values(&env.model, pol, gamma)?;
            let _ = write!(out, "{name},discounted@{gamma}");
            for v in &d {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    Ok(out)
}

/// Aligned text rendering of the same oracle table.
pub fn oracle_text(
    env: &Environment,
    policies: &[(String, StationaryPolicy)],
    gammas: &[f64],
) -> Result<String> {
    let n = env.model.n_states();
    let mut out = String::new();
    let _ = writeln!(out, "environment: {} ({} states)", env.name, n);
    for (name, pol) in policies {
        let g = oracle::gain(&env.model, pol)?;
        let bias = oracle::bias(&env.model, pol)?;
        let _ = writeln!(out, "\npolicy {name}: gain {g:.6}");
        let _ = writeln!(out, "  {:<10} {:>12}", "state", "bias");
        let show = n.min(12);
        for s in 0..show {
            let _ = writeln!(out, "  {:<10} {:>12.6}", env.model.state_label(s), bias[s]);
        }
        if show < n {
            let _ = writeln!(out, "  ... {} more states", n - show);
        }
        for &gamma in gammas {
            let d = oracle::discounted_values(&env.model, pol, gamma)?;
            let head: Vec<String> = d.iter().take(6).map(|v| format!("{v:.4}")).collect();
            let _ = writeln!(out, "  discounted@{gamma}: [{} ...]", head.join(", "));
        }
    }
    Ok(out)
}

/// Text rendering of an optimality classification.
pub fn optimality_text(
    report: &OptimalityReport,
    names: &[String],
) -> String {
    let mut out = String::new();
    let list = |idx: &[usize]| -> String {
        idx.iter()
            .map(|&i| names[i].as_str())
            .collect::<Vec<_>>()
            .join(", ")
    };
    let _ = writeln!(out, "candidate policies: {}", report.all_policies);
    let _ = writeln!(out, "best gain: {:.9}", report.gain_value);
    let _ = writeln!(out, "gain-optimal: {}", list(&report.gain_optimal_indices));
    let _ = writeln!(out, "bias-optimal: {}", list(&report.bias_optimal_indices));
    let _ = writeln!(
        out,
        "blackwell (grid {:?}): {}",
        report.gamma_grid,
        list(&report.blackwell_indices)
    );
    out
}
