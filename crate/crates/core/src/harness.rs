//! Experiment harness: replication management with common random numbers,
//! training and evaluation phases, convergence detection and metric
//! aggregation.
//!
//! Environment randomness is addressed by `(replication, step)`, so two
//! algorithm setups sharing a seed consume identical environment draws at
//! every step index until their actions diverge. Evaluation draws come from
//! separate substreams and cannot perturb training reproducibility.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ara::{AraLearner, AraParams, StepOutcome};
use crate::envs::{parse_env_spec, Environment};
use crate::error::{CoreError, Result};
use crate::qlearn::{QLearner, QParams};
use crate::rng::{RngStream, StreamPurpose};
use crate::stats::{adjust_pairwise_bh, indistinguishable_groups, MetricMatrix};

/// Hard cap on convergence-mode training.
pub const CONVERGENCE_STEP_CAP: u64 = 20_000_000;

/// Significance level of the grouping step.
pub const GROUP_ALPHA: f64 = 0.05;

fn default_tol() -> f64 {
    1e-9
}

/// Train until no table entry changes by at least `tol` for `window` steps.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ConvergenceMode {
    pub window: u64,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

/// One algorithm variant of an experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AlgorithmConfig {
    Ara {
        label: String,
        #[serde(flatten)]
        params: AraParams,
    },
    Qlearn {
        label: String,
        #[serde(flatten)]
        params: QParams,
    },
}

impl AlgorithmConfig {
    pub fn label(&self) -> &str {
        match self {
            AlgorithmConfig::Ara { label, .. } => label,
            AlgorithmConfig::Qlearn { label, .. } => label,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            AlgorithmConfig::Ara { params, .. } => params.validate(),
            AlgorithmConfig::Qlearn { params, .. } => params.validate(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub environment: String,
    pub seed: u64,
    pub replications: u32,
    pub learn_steps: u64,
    pub eval_steps: u64,
    pub algorithms: Vec<AlgorithmConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceMode>,
    #[serde(default)]
    pub store_snapshots: bool,
}

impl ExperimentConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Collects every violation instead of stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if let Err(e) = parse_env_spec(&self.environment) {
            problems.push(e.to_string());
        }
        if self.replications < 1 {
            problems.push("replications must be >= 1".into());
        }
        if self.algorithms.is_empty() {
            problems.push("at least one algorithm is required".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for algo in &self.algorithms {
            if !seen.insert(algo.label().to_string()) {
                problems.push(format!("duplicate algorithm label `{}`", algo.label()));
            }
            if let Err(e) = algo.validate() {
                problems.push(format!("{}: {e}", algo.label()));
            }
        }
        if let Some(c) = &self.convergence {
            if c.window == 0 {
                problems.push("convergence window must be positive".into());
            }
            if !(c.tol > 0.0) {
                problems.push("convergence tol must be positive".into());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CoreError::Config(problems.join("; ")))
        }
    }
}

/// Per-replication evaluation metrics. All metrics come from the evaluation
/// phase only.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub algorithm: String,
    pub replication: u32,
    pub sum_reward: f64,
    /// Mean steps between goal visits; `eval_steps - 1` when the goal was
    /// visited at most once. Absent for environments without a goal state.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps_to_goal_mean: Option<f64>,
    /// Time-average queue length over the evaluation steps.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub queue_length_mean: Option<f64>,
    /// Final average-reward estimate (adjusted learner only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_rho: Option<f64>,
    pub converged: bool,
    pub steps_used: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<String>,
}

enum Learner {
    Ara(AraLearner),
    Q(QLearner),
}

impl Learner {
    fn new(env: &Environment, algo: &AlgorithmConfig) -> Result<Self> {
        Ok(match algo {
            AlgorithmConfig::Ara { params, .. } => {
                Learner::Ara(AraLearner::new(&env.model, params.clone())?)
            }
            AlgorithmConfig::Qlearn { params, .. } => {
                Learner::Q(QLearner::new(&env.model, params.clone())?)
            }
        })
    }

    fn step(
        &mut self,
        env: &Environment,
        s: usize,
        env_rng: &mut RngStream,
        agent_rng: &mut RngStream,
    ) -> Result<StepOutcome> {
        match self {
            Learner::Ara(l) => l.step(&env.model, s, env_rng, agent_rng),
            Learner::Q(l) => l.step(&env.model, s, env_rng, agent_rng),
        }
    }

    /// Greedy selection with frozen tables (the adjusted learner keeps its
    /// epsilon-lexicographic order).
    fn select_greedy(
        &self,
        env: &Environment,
        s: usize,
        rng: &mut RngStream,
    ) -> usize {
        match self {
            Learner::Ara(l) => l.select_action(&env.model, s, 0.0, rng).0,
            Learner::Q(l) => l.select_action(&env.model, s, 0.0, rng).0,
        }
    }

    fn rho(&self) -> Option<f64> {
        match self {
            Learner::Ara(l) => Some(l.rho()),
            Learner::Q(_) => None,
        }
    }

    fn snapshot_json(&self) -> Result<String> {
        Ok(match self {
            Learner::Ara(l) => serde_json::to_string(&l.snapshot())?,
            Learner::Q(l) => serde_json::to_string(&l.snapshot())?,
        })
    }
}

struct TrainOutcome {
    state: usize,
    converged: bool,
    steps_used: u64,
}

fn train_fixed(
    learner: &mut Learner,
    env: &Environment,
    seed: u64,
    rep: u32,
    steps: u64,
) -> Result<TrainOutcome> {
    let mut env_rng = RngStream::replication(seed, rep as u64, StreamPurpose::EnvLearn);
    let mut agent_rng = RngStream::replication(seed, rep as u64, StreamPurpose::AgentLearn);
    let mut s = env.start_state;
    for _ in 0..steps {
        let out = learner.step(env, s, &mut env_rng, &mut agent_rng)?;
        s = out.transition.s_next;
    }
    Ok(TrainOutcome {
        state: s,
        converged: true,
        steps_used: steps,
    })
}

fn train_to_convergence(
    learner: &mut Learner,
    env: &Environment,
    seed: u64,
    rep: u32,
    mode: ConvergenceMode,
) -> Result<TrainOutcome> {
    let mut env_rng = RngStream::replication(seed, rep as u64, StreamPurpose::EnvLearn);
    let mut agent_rng = RngStream::replication(seed, rep as u64, StreamPurpose::AgentLearn);
    let mut s = env.start_state;
    let mut steps_done: u64 = 0;
    let mut last_change: u64 = 0;
    loop {
        let out = learner.step(env, s, &mut env_rng, &mut agent_rng)?;
        s = out.transition.s_next;
        steps_done += 1;
        if out.max_table_delta >= mode.tol {
            last_change = steps_done;
        }
        if steps_done - last_change >= mode.window {
            return Ok(TrainOutcome {
                state: s,
                converged: true,
                steps_used: steps_done,
            });
        }
        if steps_done >= CONVERGENCE_STEP_CAP {
            return Ok(TrainOutcome {
                state: s,
                converged: false,
                steps_used: steps_done,
            });
        }
    }
}

fn evaluate(
    learner: &Learner,
    env: &Environment,
    seed: u64,
    rep: u32,
    eval_steps: u64,
    start: usize,
) -> Result<(f64, Option<f64>, Option<f64>)> {
    let mut env_rng = RngStream::replication(seed, rep as u64, StreamPurpose::EnvEval);
    let mut agent_rng = RngStream::replication(seed, rep as u64, StreamPurpose::AgentEval);
    let mut s = start;
    let mut sum_reward = 0.0;
    let mut goal_visits: u64 = 0;
    let mut first_goal: u64 = 0;
    let mut last_goal: u64 = 0;
    let mut queue_sum = 0.0;
    for t in 0..eval_steps {
        env_rng.seek_step(t);
        agent_rng.seek_step(t);
        if env.goal_state == Some(s) {
            goal_visits += 1;
            if goal_visits == 1 {
                first_goal = t;
            }
            last_goal = t;
        }
        if let Some(lengths) = &env.queue_lengths {
            queue_sum += lengths[s];
        }
        let a = learner.select_greedy(env, s, &mut agent_rng);
        let tr = env.model.sample_step(s, a, &mut env_rng)?;
        sum_reward += tr.r;
        s = tr.s_next;
    }
    let steps_to_goal = env.goal_state.map(|_| {
        if goal_visits >= 2 {
            (last_goal - first_goal) as f64 / (goal_visits - 1) as f64
        } else {
            eval_steps.saturating_sub(1) as f64
        }
    });
    let queue_mean = env.queue_lengths.as_ref().map(|_| {
        if eval_steps == 0 {
            0.0
        } else {
            queue_sum / eval_steps as f64
        }
    });
    Ok((sum_reward, steps_to_goal, queue_mean))
}

/// Train one replication (fresh learner, decayed schedules), then evaluate
/// with exploration and learning disabled.
pub fn run_replication(
    env: &Environment,
    algo: &AlgorithmConfig,
    cfg: &ExperimentConfig,
    rep: u32,
) -> Result<ReplicationResult> {
    let mut learner = Learner::new(env, algo)?;
    let outcome = match cfg.convergence {
        Some(mode) => train_to_convergence(&mut learner, env, cfg.seed, rep, mode)?,
        None => train_fixed(&mut learner, env, cfg.seed, rep, cfg.learn_steps)?,
    };
    let (sum_reward, steps_to_goal_mean, queue_length_mean) =
        evaluate(&learner, env, cfg.seed, rep, cfg.eval_steps, outcome.state)?;
    let snapshot = if cfg.store_snapshots {
        Some(learner.snapshot_json()?)
    } else {
        None
    };
    Ok(ReplicationResult {
        algorithm: algo.label().to_string(),
        replication: rep,
        sum_reward,
        steps_to_goal_mean,
        queue_length_mean,
        final_rho: learner.rho(),
        converged: outcome.converged,
        steps_used: outcome.steps_used,
        snapshot,
    })
}

/// Train until the quiet-window criterion fires (or the step cap), then
/// evaluate. The second member reports the steps used.
pub fn run_to_convergence(
    env: &Environment,
    algo: &AlgorithmConfig,
    cfg: &ExperimentConfig,
    rep: u32,
) -> Result<(ReplicationResult, u64)> {
    if cfg.convergence.is_none() {
        return Err(CoreError::Config(
            "run_to_convergence requires a convergence mode".into(),
        ));
    }
    let result = run_replication(env, algo, cfg, rep)?;
    let steps = result.steps_used;
    Ok((result, steps))
}

/// Mean and sample standard deviation of one metric for one algorithm.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub stddev: f64,
}

fn summarize(values: &[f64]) -> MetricSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stddev = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    MetricSummary { mean, stddev }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AggregateRow {
    pub algorithm: String,
    pub sum_reward: MetricSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps_to_goal: Option<MetricSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub queue_length: Option<MetricSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<MetricSummary>,
    pub steps_used: MetricSummary,
    pub converged: u32,
}

/// Significance results for one metric across all algorithm pairs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricSignificance {
    pub metric: String,
    pub friedman_statistic: f64,
    pub friedman_p: f64,
    /// Benjamini-Hochberg adjusted Conover p-values, symmetric.
    pub adjusted_p: Vec<Vec<f64>>,
    /// Maximal cliques of pairwise-indistinguishable algorithms at 0.05.
    pub groups: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub environment: String,
    pub seed: u64,
    pub replications: u32,
    pub labels: Vec<String>,
    pub results: Vec<ReplicationResult>,
    pub aggregates: Vec<AggregateRow>,
    pub significance: Vec<MetricSignificance>,
    /// Replications that failed, as `(label, replication, error)`.
    pub failures: Vec<(String, u32, String)>,
}

impl ExperimentReport {
    pub fn results_for(&self, label: &str) -> Vec<&ReplicationResult> {
        self.results
            .iter()
            .filter(|r| r.algorithm == label)
            .collect()
    }

    pub fn aggregate_for(&self, label: &str) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|a| a.algorithm == label)
    }

    pub fn significance_for(&self, metric: &str) -> Option<&MetricSignificance> {
        self.significance.iter().find(|s| s.metric == metric)
    }
}

/// Run every algorithm over every replication (replications in parallel,
/// deterministic fold in replication order), aggregate, and attach the
/// significance pipeline when at least two algorithms and replications
/// completed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let env = parse_env_spec(&cfg.environment)?;
    let labels: Vec<String> = cfg.algorithms.iter().map(|a| a.label().to_string()).collect();
    let mut results: Vec<ReplicationResult> = Vec::new();
    let mut failures: Vec<(String, u32, String)> = Vec::new();
    for algo in &cfg.algorithms {
        let outcomes: Vec<(u32, Result<ReplicationResult>)> = (0..cfg.replications)
            .into_par_iter()
            .map(|rep| (rep, run_replication(&env, algo, cfg, rep)))
            .collect();
        for (rep, outcome) in outcomes {
            match outcome {
                Ok(r) => results.push(r),
                Err(e) => failures.push((algo.label().to_string(), rep, e.to_string())),
            }
        }
    }
    build_report(
        cfg.environment.clone(),
        cfg.seed,
        cfg.replications,
        labels,
        results,
        failures,
    )
}

/// Aggregate raw replication results and run the significance pipeline.
/// Used by [`run_experiment`] and by report re-rendering from CSV.
pub fn build_report(
    environment: String,
    seed: u64,
    replications: u32,
    labels: Vec<String>,
    results: Vec<ReplicationResult>,
    failures: Vec<(String, u32, String)>,
) -> Result<ExperimentReport> {
    let mut aggregates = Vec::new();
    for label in &labels {
        let rows: Vec<&ReplicationResult> =
            results.iter().filter(|r| &r.algorithm == label).collect();
        if rows.is_empty() {
            continue;
        }
        let collect = |f: &dyn Fn(&ReplicationResult) -> Option<f64>| -> Option<Vec<f64>> {
            let vals: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
            (vals.len() == rows.len()).then_some(vals)
        };
        aggregates.push(AggregateRow {
            algorithm: label.clone(),
            sum_reward: summarize(&rows.iter().map(|r| r.sum_reward).collect::<Vec<_>>()),
            steps_to_goal: collect(&|r| r.steps_to_goal_mean).map(|v| summarize(&v)),
            queue_length: collect(&|r| r.queue_length_mean).map(|v| summarize(&v)),
            rho: collect(&|r| r.final_rho).map(|v| summarize(&v)),
            steps_used: summarize(&rows.iter().map(|r| r.steps_used as f64).collect::<Vec<_>>()),
            converged: rows.iter().filter(|r| r.converged).count() as u32,
        });
    }

    let mut significance = Vec::new();
    if labels.len() >= 2 && replications >= 2 && failures.is_empty() {
        let metrics: Vec<(&str, Box<dyn Fn(&ReplicationResult) -> Option<f64>>)> = vec![
            ("sum_reward", Box::new(|r: &ReplicationResult| Some(r.sum_reward))),
            ("steps_to_goal", Box::new(|r: &ReplicationResult| r.steps_to_goal_mean)),
            ("queue_length", Box::new(|r: &ReplicationResult| r.queue_length_mean)),
        ];
        for (name, getter) in metrics {
            let mut rows = Vec::new();
            let mut complete = true;
            'outer: for rep in 0..replications {
                let mut row = Vec::new();
                for label in &labels {
                    let cell = results
                        .iter()
                        .find(|r| &r.algorithm == label && r.replication == rep)
                        .and_then(|r| getter(r));
                    match cell {
                        Some(v) => row.push(v),
                        None => {
                            complete = false;
                            break 'outer;
                        }
                    }
                }
                rows.push(row);
            }
            if !complete {
                continue;
            }
            let matrix = MetricMatrix::new(rows, labels.clone())?;
            let (stat, p) = matrix.friedman();
            let raw = matrix.conover_pairwise();
            let adjusted = adjust_pairwise_bh(&raw)?;
            let groups = indistinguishable_groups(&adjusted, GROUP_ALPHA);
            significance.push(MetricSignificance {
                metric: name.to_string(),
                friedman_statistic: stat,
                friedman_p: p,
                adjusted_p: adjusted,
                groups,
            });
        }
    }

    Ok(ExperimentReport {
        environment,
        seed,
        replications,
        labels,
        results,
        aggregates,
        significance,
        failures,
    })
}
