//! Width optimizers behind one interface, the evaluator abstraction they query, and a
//! brute-force oracle for tiny instances.

mod bridge;
mod search;
mod synthetic;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archspec::{width_units, ArchSpec, WidthVector};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::projection::{DatasetSpec, DEFAULT_SEARCH_EPOCHS};
use crate::scalar::Scalar;

pub use bridge::{BridgeEvaluator, BridgeRequest, BridgeResponse, EVALUATOR_CMD_ENV};
pub use search::{brute_force_oracle, optimize_greedy, optimize_slimming, optimize_uniform, OracleOutcome};
pub use synthetic::{SyntheticEvaluator, UnitCoefficients};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluatorBudget {
    pub epochs: u32,
    pub max_evaluations: usize,
}

impl Default for EvaluatorBudget {
    fn default() -> Self {
        EvaluatorBudget {
            epochs: DEFAULT_SEARCH_EPOCHS,
            max_evaluations: 10_000,
        }
    }
}

impl EvaluatorBudget {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.max_evaluations == 0 {
            return Err(Error::InvalidArgument("budget epochs and max_evaluations must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub accuracy_proxy: f64,
    /// Per width unit, one importance value per applied channel.
    pub channel_scores: Vec<Vec<f64>>,
    pub cost_flops: u128,
}

/// Stand-in for "train, then measure validation accuracy".
pub trait Evaluator: Sync {
    fn evaluate(&self, arch: &ArchSpec, ds: &DatasetSpec, budget: &EvaluatorBudget) -> Result<EvaluationResult>;

    /// Whether concurrent `evaluate` calls are allowed.
    fn concurrent(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Uniform,
    Slimming,
    Greedy,
    /// Reserved for an external differentiable plug-in.
    Dmcp,
    /// Reserved for an external plug-in.
    Morphnet,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Uniform => "uniform",
            Algorithm::Slimming => "slimming",
            Algorithm::Greedy => "greedy",
            Algorithm::Dmcp => "dmcp",
            Algorithm::Morphnet => "morphnet",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Algorithm::Uniform),
            "slimming" => Ok(Algorithm::Slimming),
            "greedy" => Ok(Algorithm::Greedy),
            "dmcp" => Ok(Algorithm::Dmcp),
            "morphnet" => Ok(Algorithm::Morphnet),
            other => Err(Error::InvalidArgument(format!("unknown algorithm `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub grow_factor: f64,
    /// Channels removed per greedy step.
    pub prune_group: u64,
    pub seed: u64,
    /// Regularization strength handed to plug-in algorithms.
    #[serde(default = "default_plugin_lambda")]
    pub plugin_lambda: f64,
    /// Evaluate greedy candidates on the rayon pool when the evaluator allows it.
    #[serde(default)]
    pub parallel: bool,
}

fn default_plugin_lambda() -> f64 {
    1.0
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            algorithm: Algorithm::Greedy,
            grow_factor: 1.5,
            prune_group: 8,
            seed: 0,
            plugin_lambda: 1.0,
            parallel: false,
        }
    }
}

impl OptimizerConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        OptimizerConfig {
            algorithm,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.grow_factor.is_finite() && self.grow_factor >= 1.0) {
            return Err(Error::InvalidArgument(format!("grow factor {} must be >= 1", self.grow_factor)));
        }
        if self.prune_group == 0 {
            return Err(Error::InvalidArgument("prune group must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub index: usize,
    pub arch_digest: String,
    pub accuracy_proxy: f64,
    pub cost_flops: u128,
    pub cumulative_cost_flops: u128,
}

/// Every evaluator call of a run, in issue order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditLog {
    pub entries: Vec<AuditEntry>,
}

impl AuditLog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_cost_flops(&self) -> u128 {
        self.entries.last().map_or(0, |e| e.cumulative_cost_flops)
    }

    fn record(&mut self, arch: &ArchSpec, result: &EvaluationResult) {
        let cumulative = self.total_cost_flops() + result.cost_flops;
        self.entries.push(AuditEntry {
            index: self.entries.len(),
            arch_digest: sha256_hex(arch.to_canonical_json().as_bytes()),
            accuracy_proxy: result.accuracy_proxy,
            cost_flops: result.cost_flops,
            cumulative_cost_flops: cumulative,
        });
    }
}

/// Result of one optimizer run.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationRun<T> {
    pub algorithm: Algorithm,
    pub width: WidthVector<T>,
    /// Applied channel count per unit.
    pub counts: Vec<u64>,
    /// Proxy of the returned architecture, when the algorithm measured it.
    pub accuracy_proxy: Option<f64>,
    /// Set when the evaluation budget ran out before the FLOPs constraint was met.
    pub budget_exhausted: bool,
}

/// Evaluates `archs` (in parallel when allowed), validates each result, and appends
/// them to `log` in input order.
pub(crate) fn evaluate_batch(
    evaluator: &dyn Evaluator,
    archs: &[(ArchSpec, Vec<u64>)],
    ds: &DatasetSpec,
    budget: &EvaluatorBudget,
    parallel: bool,
    log: &mut AuditLog,
) -> Result<Vec<EvaluationResult>> {
    let run = |(arch, counts): &(ArchSpec, Vec<u64>)| -> Result<EvaluationResult> {
        let result = evaluator.evaluate(arch, ds, budget)?;
        check_result(&result, counts)?;
        Ok(result)
    };
    let results: Vec<Result<EvaluationResult>> = if parallel && evaluator.concurrent() && archs.len() > 1 {
        archs.par_iter().map(run).collect()
    } else {
        archs.iter().map(run).collect()
    };
    let mut out = Vec::with_capacity(results.len());
    for ((arch, _), result) in archs.iter().zip(results) {
        let result = result?;
        log.record(arch, &result);
        out.push(result);
    }
    Ok(out)
}

fn check_result(result: &EvaluationResult, counts: &[u64]) -> Result<()> {
    if !(0.0..=1.0).contains(&result.accuracy_proxy) {
        return Err(Error::Evaluator(format!(
            "accuracy proxy {} outside [0, 1]",
            result.accuracy_proxy
        )));
    }
    if result.channel_scores.len() != counts.len() {
        return Err(Error::Evaluator(format!(
            "channel scores cover {} units, architecture has {}",
            result.channel_scores.len(),
            counts.len()
        )));
    }
    for (u, (scores, &c)) in result.channel_scores.iter().zip(counts).enumerate() {
        if scores.len() as u64 != c {
            return Err(Error::Evaluator(format!(
                "unit {u}: {} channel scores for {c} channels",
                scores.len()
            )));
        }
        if scores.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Evaluator(format!("unit {u}: channel scores must be non-negative")));
        }
    }
    Ok(())
}

pub(crate) fn unit_counts(arch: &ArchSpec) -> Result<Vec<u64>> {
    Ok(width_units(arch)?.iter().map(|u| u.base_channels).collect())
}

/// Runs the configured algorithm. Evaluations are appended to `log` as they complete,
/// so a failed run still leaves its partial audit behind.
pub fn optimize<T: Scalar>(
    arch: &ArchSpec,
    ds: &DatasetSpec,
    evaluator: &dyn Evaluator,
    cfg: &OptimizerConfig,
    budget: &EvaluatorBudget,
    log: &mut AuditLog,
) -> Result<OptimizationRun<T>> {
    match cfg.algorithm {
        Algorithm::Uniform => optimize_uniform(arch),
        Algorithm::Slimming => optimize_slimming(arch, ds, evaluator, cfg, budget, log),
        Algorithm::Greedy => optimize_greedy(arch, ds, evaluator, cfg, budget, log),
        Algorithm::Dmcp | Algorithm::Morphnet => Err(Error::PluginUnavailable(cfg.algorithm.to_string())),
    }
}
