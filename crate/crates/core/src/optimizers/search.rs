use std::cmp::Ordering;

use crate::archspec::{apply_counts, apply_width, flops, round_channels, ArchSpec, WidthVector};
use crate::error::{Error, Result};
use crate::projection::DatasetSpec;
use crate::scalar::Scalar;

use super::{
    evaluate_batch, unit_counts, Algorithm, AuditLog, Evaluator, EvaluatorBudget, OptimizationRun,
    OptimizerConfig,
};

const ORACLE_LIMIT: u128 = 1_000_000;

fn to_width<T: Scalar>(counts: &[u64], base: &[u64]) -> Result<WidthVector<T>> {
    WidthVector::new(counts.iter().zip(base).map(|(&c, &b)| T::from_ratio(c, b)).collect())
}

fn grown_counts<T: Scalar>(arch: &ArchSpec, grow_factor: f64) -> Result<Vec<u64>> {
    let n = unit_counts(arch)?.len();
    let grow = T::from_f64(grow_factor)
        .ok_or_else(|| Error::InvalidArgument(format!("grow factor {grow_factor} not representable")))?;
    Ok(apply_width(arch, &WidthVector::uniform(n, grow))?.counts)
}

fn macs_at(arch: &ArchSpec, counts: &[u64], resolution: u32) -> Result<u64> {
    Ok(flops(&apply_counts(arch, counts)?, resolution)?.total)
}

/// The uniform baseline: all ones, no evaluations.
pub fn optimize_uniform<T: Scalar>(arch: &ArchSpec) -> Result<OptimizationRun<T>> {
    let counts = unit_counts(arch)?;
    Ok(OptimizationRun {
        algorithm: Algorithm::Uniform,
        width: WidthVector::ones(counts.len()),
        counts,
        accuracy_proxy: None,
        budget_exhausted: false,
    })
}

/// Grow, score channels once, keep the best-scoring channels globally under the base
/// FLOPs. Equal scores are ordered by relative position `j / c_u`, then unit, then
/// channel, so identical scores shrink every unit proportionally.
pub fn optimize_slimming<T: Scalar>(
    arch: &ArchSpec,
    ds: &DatasetSpec,
    evaluator: &dyn Evaluator,
    cfg: &OptimizerConfig,
    budget: &EvaluatorBudget,
    log: &mut AuditLog,
) -> Result<OptimizationRun<T>> {
    cfg.validate()?;
    budget.validate()?;
    let base = unit_counts(arch)?;
    let base_macs = flops(arch, ds.resolution)?.total;
    let grown = grown_counts::<T>(arch, cfg.grow_factor)?;
    let grown_arch = apply_counts(arch, &grown)?;
    let scores = evaluate_batch(evaluator, &[(grown_arch, grown.clone())], ds, budget, false, log)?
        .pop()
        .expect("one result per request")
        .channel_scores;

    let mut channels: Vec<(usize, u64)> = grown
        .iter()
        .enumerate()
        .flat_map(|(u, &c)| (0..c).map(move |j| (u, j)))
        .collect();
    channels.sort_by(|&(u, j), &(v, k)| {
        scores[v][k as usize]
            .total_cmp(&scores[u][j as usize])
            .then_with(|| (j as u128 * grown[v] as u128).cmp(&(k as u128 * grown[u] as u128)))
            .then(u.cmp(&v))
            .then(j.cmp(&k))
    });

    let kept_for = |prefix: usize| -> Vec<u64> {
        let mut kept = vec![0u64; grown.len()];
        for &(u, _) in &channels[..prefix] {
            kept[u] += 1;
        }
        kept.iter().map(|&k| k.max(1)).collect()
    };
    let feasible = |prefix: usize| -> Result<bool> { Ok(macs_at(arch, &kept_for(prefix), ds.resolution)? <= base_macs) };

    if !feasible(0)? {
        return Err(Error::NoFeasibleSolution);
    }
    // Largest feasible prefix; kept counts grow with the prefix, so FLOPs do too.
    let (mut lo, mut hi) = (0usize, channels.len());
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if feasible(mid)? {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let counts = kept_for(lo);
    Ok(OptimizationRun {
        algorithm: Algorithm::Slimming,
        width: to_width(&counts, &base)?,
        counts,
        accuracy_proxy: None,
        budget_exhausted: false,
    })
}

/// Grow, then repeatedly remove `prune_group` channels from whichever unit loses the
/// least proxy accuracy, until the base FLOPs are met. Ties go to the lowest unit index.
pub fn optimize_greedy<T: Scalar>(
    arch: &ArchSpec,
    ds: &DatasetSpec,
    evaluator: &dyn Evaluator,
    cfg: &OptimizerConfig,
    budget: &EvaluatorBudget,
    log: &mut AuditLog,
) -> Result<OptimizationRun<T>> {
    cfg.validate()?;
    budget.validate()?;
    let base = unit_counts(arch)?;
    let base_macs = flops(arch, ds.resolution)?.total;
    let mut counts = grown_counts::<T>(arch, cfg.grow_factor)?;
    let mut accuracy = None;
    let mut used = 0usize;
    let mut budget_exhausted = false;

    while macs_at(arch, &counts, ds.resolution)? > base_macs {
        let candidates: Vec<(ArchSpec, Vec<u64>)> = (0..counts.len())
            .filter(|&u| counts[u] > 1)
            .map(|u| {
                let mut c = counts.clone();
                c[u] -= cfg.prune_group.min(c[u] - 1);
                Ok((apply_counts(arch, &c)?, c))
            })
            .collect::<Result<_>>()?;
        if candidates.is_empty() {
            return Err(Error::NoFeasibleSolution);
        }
        if used + candidates.len() > budget.max_evaluations {
            budget_exhausted = true;
            break;
        }
        used += candidates.len();
        let results = evaluate_batch(evaluator, &candidates, ds, budget, cfg.parallel, log)?;
        let best = results
            .iter()
            .enumerate()
            .fold(0, |best, (i, r)| {
                if r.accuracy_proxy.total_cmp(&results[best].accuracy_proxy) == Ordering::Greater {
                    i
                } else {
                    best
                }
            });
        accuracy = Some(results[best].accuracy_proxy);
        counts = candidates.into_iter().nth(best).expect("index in range").1;
    }

    Ok(OptimizationRun {
        algorithm: Algorithm::Greedy,
        width: to_width(&counts, &base)?,
        counts,
        accuracy_proxy: accuracy,
        budget_exhausted,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutcome<T> {
    pub width: WidthVector<T>,
    pub counts: Vec<u64>,
    pub accuracy_proxy: f64,
    /// Feasible combinations, each evaluated once.
    pub evaluations: usize,
}

/// Exhaustive search over per-unit candidate multipliers. Among equal proxies the
/// lexicographically first combination (by choice index) wins.
pub fn brute_force_oracle<T: Scalar>(
    arch: &ArchSpec,
    ds: &DatasetSpec,
    evaluator: &dyn Evaluator,
    choices: &[Vec<T>],
    budget: &EvaluatorBudget,
) -> Result<OracleOutcome<T>> {
    let base = unit_counts(arch)?;
    if choices.len() != base.len() {
        return Err(Error::WidthLength {
            expected: base.len(),
            got: choices.len(),
        });
    }
    if choices.iter().any(Vec::is_empty) {
        return Err(Error::InvalidArgument("every unit needs at least one choice".into()));
    }
    let space = choices
        .iter()
        .try_fold(1u128, |acc, c| acc.checked_mul(c.len() as u128))
        .unwrap_or(u128::MAX);
    if space > ORACLE_LIMIT {
        return Err(Error::SearchSpaceTooLarge(space));
    }
    let base_macs = flops(arch, ds.resolution)?.total;

    let mut scratch = AuditLog::default();
    let mut best: Option<(f64, Vec<usize>, Vec<u64>)> = None;
    let mut evaluations = 0;
    let mut index = vec![0usize; choices.len()];
    loop {
        let counts: Vec<u64> = index
            .iter()
            .enumerate()
            .map(|(u, &i)| round_channels(base[u], choices[u][i], 1).0)
            .collect();
        let candidate = apply_counts(arch, &counts)?;
        if flops(&candidate, ds.resolution)?.total <= base_macs {
            evaluations += 1;
            let acc = evaluate_batch(evaluator, &[(candidate, counts.clone())], ds, budget, false, &mut scratch)?[0]
                .accuracy_proxy;
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, index.clone(), counts));
            }
        }
        // Odometer step, last unit fastest.
        let mut u = index.len();
        loop {
            if u == 0 {
                let (accuracy_proxy, pick, counts) = best.ok_or(Error::NoFeasibleSolution)?;
                let width = WidthVector::new(pick.iter().enumerate().map(|(u, &i)| choices[u][i]).collect())?;
                return Ok(OracleOutcome {
                    width,
                    counts,
                    accuracy_proxy,
                    evaluations,
                });
            }
            u -= 1;
            index[u] += 1;
            if index[u] < choices[u].len() {
                break;
            }
            index[u] = 0;
        }
    }
}
