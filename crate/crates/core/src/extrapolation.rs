//! Mapping an optimized width vector from a projected architecture back to the
//! original one: depth matching by layer stacking, then FLOPs matching with a single
//! global multiplier found by bisection.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::archspec::{
    apply_width_with_divisor, flops, local_unit_id, round_channels, width_units, ArchSpec,
    BlockSpec, LayerKind, UnitDescriptor, UnitOrigin, UnitRef, WidthVector,
};
use crate::error::{Error, Result};
use crate::scalar::{simplest_rational_between, Scalar};

const MAX_BISECTION_STEPS: usize = 64;
const EDGE_REFINE_STEPS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stacking {
    StackLastBlock,
    StackAverageBlock,
}

impl fmt::Display for Stacking {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stacking::StackLastBlock => f.write_str("stack-last-block"),
            Stacking::StackAverageBlock => f.write_str("stack-average-block"),
        }
    }
}

impl FromStr for Stacking {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stack-last-block" | "last" => Ok(Stacking::StackLastBlock),
            "stack-average-block" | "average" => Ok(Stacking::StackAverageBlock),
            other => Err(Error::InvalidArgument(format!("unknown stacking `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferPlan {
    pub stacking: Stacking,
    /// Relative FLOPs tolerance.
    pub flops_tolerance: f64,
    pub bisection_bounds: (f64, f64),
    /// Channel counts round to multiples of this.
    #[serde(default = "default_divisor")]
    pub divisor: u64,
}

fn default_divisor() -> u64 {
    1
}

impl Default for TransferPlan {
    fn default() -> Self {
        TransferPlan {
            stacking: Stacking::StackAverageBlock,
            flops_tolerance: 0.005,
            bisection_bounds: (0.01, 100.0),
            divisor: 1,
        }
    }
}

impl TransferPlan {
    pub fn with_stacking(stacking: Stacking) -> Self {
        TransferPlan {
            stacking,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bisection_bounds;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "bisection bounds ({lo}, {hi}) must satisfy 0 < lo < hi"
            )));
        }
        if !(self.flops_tolerance > 0.0 && self.flops_tolerance <= 0.1) {
            return Err(Error::InvalidArgument(format!(
                "flops tolerance {} must be in (0, 0.1]",
                self.flops_tolerance
            )));
        }
        if self.divisor == 0 {
            return Err(Error::InvalidArgument("divisor must be >= 1".into()));
        }
        Ok(())
    }
}

type BlockShape = Vec<(LayerKind, u32, u32, UnitRef)>;

fn block_shape(block: &BlockSpec) -> BlockShape {
    block
        .layers
        .iter()
        .chain(block.shortcut.as_ref())
        .map(|l| (l.kind, l.kernel, l.stride, l.width_unit.clone()))
        .collect()
}

fn check_compatible(src: &ArchSpec, dst: &ArchSpec) -> Result<()> {
    if src.stages.len() != dst.stages.len() {
        return Err(Error::Incompatible(format!(
            "source has {} stages, destination has {}",
            src.stages.len(),
            dst.stages.len()
        )));
    }
    for (s, (a, b)) in src.stages.iter().zip(&dst.stages).enumerate() {
        if b.blocks.len() < a.blocks.len() {
            return Err(Error::Incompatible(format!(
                "stage{s}: destination has {} blocks, fewer than the source's {}",
                b.blocks.len(),
                a.blocks.len()
            )));
        }
        for (i, (x, y)) in a.blocks.iter().zip(&b.blocks).enumerate() {
            if block_shape(x) != block_shape(y) {
                return Err(Error::Incompatible(format!(
                    "stage{s}.block{i}: layer structure differs"
                )));
            }
        }
    }
    Ok(())
}

/// Running mean; exact for constant input even in floating point.
fn mean<T: Scalar>(values: impl IntoIterator<Item = T>) -> Option<T> {
    let mut m: Option<T> = None;
    let mut k = 0u64;
    for x in values {
        k += 1;
        m = Some(match m {
            None => x,
            Some(m) => m + (x - m) / T::from_u64(k).expect("count fits the scalar"),
        });
    }
    m
}

fn stack<T: Scalar>(w: &WidthVector<T>, src: &ArchSpec, dst: &ArchSpec, rule: Stacking) -> Result<WidthVector<T>> {
    let src_units = width_units(src)?;
    if w.len() != src_units.len() {
        return Err(Error::WidthLength {
            expected: src_units.len(),
            got: w.len(),
        });
    }
    check_compatible(src, dst)?;
    let by_id: HashMap<&str, T> = src_units
        .iter()
        .map(|u| u.id.as_str())
        .zip(w.entries().iter().copied())
        .collect();

    let synthesize = |unit: &UnitDescriptor| -> Result<T> {
        let Some(UnitOrigin::Local { stage, block, name }) = &unit.origin else {
            return Err(Error::Incompatible(format!(
                "destination unit `{}` has no counterpart in the source",
                unit.id
            )));
        };
        let src_blocks = src.stages[*stage].blocks.len();
        if *block < src_blocks {
            return Err(Error::Incompatible(format!(
                "destination unit `{}` missing from the source block",
                unit.id
            )));
        }
        let lookup = |b: usize| by_id.get(local_unit_id(*stage, b, name).as_str()).copied();
        let value = match rule {
            Stacking::StackLastBlock => lookup(src_blocks - 1),
            Stacking::StackAverageBlock => {
                let pool: Vec<usize> = if src_blocks == 1 { vec![0] } else { (1..src_blocks).collect() };
                mean(pool.into_iter().filter_map(lookup))
            }
        };
        value.ok_or_else(|| {
            Error::Incompatible(format!(
                "stage{stage}: source blocks have no `{name}` unit to stack from"
            ))
        })
    };

    let entries = width_units(dst)?
        .iter()
        .map(|u| match by_id.get(u.id.as_str()) {
            Some(&v) => Ok(v),
            None => synthesize(u),
        })
        .collect::<Result<Vec<T>>>()?;
    WidthVector::new(entries)
}

/// Extends `w` (over `src`'s units) to `dst`'s units. Blocks present in both keep
/// their multipliers; each extra block copies the last source block of its stage.
pub fn stack_last_block<T: Scalar>(w: &WidthVector<T>, src: &ArchSpec, dst: &ArchSpec) -> Result<WidthVector<T>> {
    stack(w, src, dst, Stacking::StackLastBlock)
}

/// Like [`stack_last_block`], but extra blocks get the mean over the stage's source
/// blocks excluding the first (or the first alone in a one-block stage).
pub fn stack_average_block<T: Scalar>(w: &WidthVector<T>, src: &ArchSpec, dst: &ArchSpec) -> Result<WidthVector<T>> {
    stack(w, src, dst, Stacking::StackAverageBlock)
}

pub fn stack_with<T: Scalar>(
    rule: Stacking,
    w: &WidthVector<T>,
    src: &ArchSpec,
    dst: &ArchSpec,
) -> Result<WidthVector<T>> {
    stack(w, src, dst, rule)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BracketStep {
    pub lo: f64,
    pub hi: f64,
    pub lo_flops: u64,
    pub hi_flops: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlopsMatch<T> {
    pub c: T,
    pub width: WidthVector<T>,
    pub achieved_flops: u64,
    pub target_flops: u64,
    pub rel_error: f64,
    /// Set when rounding granularity kept the result outside the tolerance.
    pub granularity_failure: bool,
    pub iterations: usize,
    pub trace: Vec<BracketStep>,
}

struct Probe<'a> {
    arch: &'a ArchSpec,
    units: Vec<UnitDescriptor>,
    w: Vec<f64>,
    resolution: u32,
    divisor: u64,
}

impl Probe<'_> {
    fn counts(&self, c: f64) -> Vec<u64> {
        self.units
            .iter()
            .zip(&self.w)
            .map(|(u, &m)| round_channels(u.base_channels, m * c, self.divisor).0)
            .collect()
    }

    fn eval(&self, c: f64) -> Result<(u64, Vec<u64>)> {
        let counts = self.counts(c);
        let arch = crate::archspec::apply_counts(self.arch, &counts)?;
        Ok((flops(&arch, self.resolution)?.total, counts))
    }
}

fn rel_error(achieved: u64, target: u64) -> f64 {
    (achieved as f64 - target as f64).abs() / target as f64
}

/// Finds `c` so that `apply_width(arch, c * w)` has `target_flops` MACs within the
/// plan's tolerance. The returned `c` is the simplest fraction producing the chosen
/// integer channel assignment, so exact fixed points (`c = 1`, `c = 2`) come back exact.
pub fn match_flops<T: Scalar>(
    arch: &ArchSpec,
    w: &WidthVector<T>,
    target_flops: u64,
    resolution: u32,
    plan: &TransferPlan,
) -> Result<FlopsMatch<T>> {
    plan.validate()?;
    if target_flops == 0 {
        return Err(Error::InvalidArgument("target FLOPs must be positive".into()));
    }
    let units = width_units(arch)?;
    if units.len() != w.len() {
        return Err(Error::WidthLength {
            expected: units.len(),
            got: w.len(),
        });
    }
    let probe = Probe {
        arch,
        units,
        w: w.to_f64(),
        resolution,
        divisor: plan.divisor,
    };
    let tol = plan.flops_tolerance;

    let (mut lo, mut hi) = plan.bisection_bounds;
    let (mut f_lo, mut counts_lo) = probe.eval(lo)?;
    let (mut f_hi, mut counts_hi) = probe.eval(hi)?;
    if !(f_lo <= target_flops && target_flops <= f_hi) {
        return Err(Error::Bracket {
            target: target_flops,
            lo_flops: f_lo,
            hi_flops: f_hi,
        });
    }
    let mut trace = vec![BracketStep { lo, hi, lo_flops: f_lo, hi_flops: f_hi }];

    // Bisect to the boundary between adjacent integer assignments (or an exact hit);
    // the tolerance then only decides the granularity flag.
    let mut exact: Option<(f64, Vec<u64>)> = None;
    let mut iterations = 0;
    while iterations < MAX_BISECTION_STEPS {
        if counts_lo == counts_hi || hi - lo <= f64::EPSILON * hi {
            break;
        }
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let (f_mid, counts_mid) = probe.eval(mid)?;
        if f_mid == target_flops {
            exact = Some((mid, counts_mid));
            break;
        }
        if f_mid < target_flops {
            lo = mid;
            f_lo = f_mid;
            counts_lo = counts_mid;
        } else {
            hi = mid;
            f_hi = f_mid;
            counts_hi = counts_mid;
        }
        trace.push(BracketStep { lo, hi, lo_flops: f_lo, hi_flops: f_hi });
    }
    let (c_pick, assignment) = exact.unwrap_or_else(|| {
        if rel_error(f_hi, target_flops) < rel_error(f_lo, target_flops) {
            (hi, counts_hi.clone())
        } else {
            (lo, counts_lo.clone())
        }
    });

    // Edges of the interval of c values that reproduce `assignment`.
    let (lo_bound, hi_bound) = plan.bisection_bounds;
    let refine = |mut outside: f64, mut inside: f64| {
        for _ in 0..EDGE_REFINE_STEPS {
            let mid = 0.5 * (outside + inside);
            if mid == outside || mid == inside {
                break;
            }
            if probe.counts(mid) == assignment {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        inside
    };
    let lower = if probe.counts(lo_bound) == assignment {
        lo_bound
    } else {
        refine(lo_bound, c_pick)
    };
    let upper = if probe.counts(hi_bound) == assignment {
        hi_bound
    } else {
        refine(hi_bound, c_pick)
    };

    let c = simplest_rational_between(lower, upper)
        .map(|(p, q)| T::from_ratio(p, q))
        .filter(|c| probe.counts(c.as_f64()) == assignment)
        .or_else(|| T::from_f64(lower))
        .ok_or_else(|| Error::InvalidArgument("multiplier not representable in scalar".into()))?;

    let width = w.scaled(c);
    let applied = apply_width_with_divisor(arch, &width, plan.divisor)?;
    let achieved = flops(&applied.arch, resolution)?.total;
    let err = rel_error(achieved, target_flops);
    Ok(FlopsMatch {
        c,
        width,
        achieved_flops: achieved,
        target_flops,
        rel_error: err,
        granularity_failure: err > tol,
        iterations,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferOutcome<T> {
    pub width: WidthVector<T>,
    pub stacked: WidthVector<T>,
    pub stacking: Stacking,
    pub c: T,
    pub achieved_flops: u64,
    pub target_flops: u64,
    pub rel_error: f64,
    pub granularity_failure: bool,
}

/// Provenance block written next to a transferred width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferAudit {
    pub src_arch: String,
    pub src_blocks: Vec<usize>,
    pub dst_arch: String,
    pub dst_blocks: Vec<usize>,
    pub resolution: u32,
    pub stacking: Stacking,
    pub c: String,
    pub achieved_flops: u64,
    pub target_flops: u64,
    pub rel_error: f64,
    pub granularity_failure: bool,
}

impl<T: Scalar> TransferOutcome<T> {
    pub fn audit(&self, src: &ArchSpec, dst: &ArchSpec, resolution: u32) -> TransferAudit {
        TransferAudit {
            src_arch: src.name.clone(),
            src_blocks: src.block_counts(),
            dst_arch: dst.name.clone(),
            dst_blocks: dst.block_counts(),
            resolution,
            stacking: self.stacking,
            c: self.c.to_decimal(),
            achieved_flops: self.achieved_flops,
            target_flops: self.target_flops,
            rel_error: self.rel_error,
            granularity_failure: self.granularity_failure,
        }
    }
}

/// Stacks `w` onto `dst_arch`'s depth, then rescales it to `dst_arch`'s base FLOPs.
pub fn transfer<T: Scalar>(
    w: &WidthVector<T>,
    src_arch: &ArchSpec,
    dst_arch: &ArchSpec,
    resolution: u32,
    plan: &TransferPlan,
) -> Result<TransferOutcome<T>> {
    dst_arch.ensure_valid()?;
    let stacked = stack(w, src_arch, dst_arch, plan.stacking)?;
    let target = flops(dst_arch, resolution)?.total;
    let m = match_flops(dst_arch, &stacked, target, resolution, plan)?;
    Ok(TransferOutcome {
        width: m.width,
        stacked,
        stacking: plan.stacking,
        c: m.c,
        achieved_flops: m.achieved_flops,
        target_flops: m.target_flops,
        rel_error: m.rel_error,
        granularity_failure: m.granularity_failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspec::{apply_width, build_preset, LayerSpec, StageSpec};
    use crate::projection::project_arch;
    use crate::Rational64;

    /// One stage of residual blocks with a single local unit per block; no stride, no
    /// fixed layers.
    fn chain(blocks: usize, width: u64) -> ArchSpec {
        let block = BlockSpec {
            layers: vec![
                LayerSpec::conv(width, 3, 1, UnitRef::Local("mid".into())),
                LayerSpec::conv(width, 3, 1, UnitRef::Trunk),
            ],
            residual: true,
            shortcut: None,
        };
        ArchSpec {
            name: "chain".into(),
            default_resolution: 8,
            num_classes: 1,
            stem: vec![LayerSpec::conv(width, 3, 1, UnitRef::Shared("t".into()))],
            stages: vec![StageSpec {
                blocks: vec![block; blocks],
                depth_projectable: true,
                trunk_unit: "t".into(),
            }],
            head: vec![],
        }
    }

    fn r(n: i64, d: i64) -> Rational64 {
        Rational64::new(n, d)
    }

    #[test]
    fn stacking_examples() {
        // units: t, block0.mid, block1.mid[, ...]
        let src = chain(2, 16);
        let dst = chain(4, 16);
        let (a, b, t) = (r(1, 2), r(3, 2), r(1, 1));
        let w = WidthVector::new(vec![t, a, b]).unwrap();
        let last = stack_last_block(&w, &src, &dst).unwrap();
        assert_eq!(last.entries(), &[t, a, b, b, b]);

        let src3 = chain(3, 16);
        let dst5 = chain(5, 16);
        let c = r(5, 4);
        let w3 = WidthVector::new(vec![t, a, b, c]).unwrap();
        let avg = stack_average_block(&w3, &src3, &dst5).unwrap();
        let m = (b + c) / r(2, 1);
        assert_eq!(avg.entries(), &[t, a, b, c, m, m]);

        let src1 = chain(1, 16);
        let dst2 = chain(2, 16);
        let w1 = WidthVector::new(vec![t, a]).unwrap();
        assert_eq!(stack_average_block(&w1, &src1, &dst2).unwrap().entries(), &[t, a, a]);
    }

    #[test]
    fn stacking_same_depth_is_identity() {
        let arch = build_preset("resnet18", None).unwrap();
        let n = width_units(&arch).unwrap().len();
        let w = WidthVector::new((0..n).map(|i| 0.5 + i as f64 / 10.0).collect()).unwrap();
        assert_eq!(stack_last_block(&w, &arch, &arch).unwrap(), w);
        assert_eq!(stack_average_block(&w, &arch, &arch).unwrap(), w);
    }

    #[test]
    fn stacking_rejects_incompatible_structure() {
        let r18 = build_preset("resnet18", None).unwrap();
        let mb = build_preset("mobilenetv2", None).unwrap();
        let n = width_units(&r18).unwrap().len();
        let w = WidthVector::<f64>::ones(n);
        assert!(matches!(stack_last_block(&w, &r18, &mb), Err(Error::Incompatible(_))));
        let shallow = project_arch(&r18, 1.0f64, 0.5).unwrap();
        assert!(matches!(stack_last_block(&w, &r18, &shallow), Err(Error::Incompatible(_))));
    }

    #[test]
    fn match_flops_fixed_point_returns_one() {
        let arch = build_preset("resnet18", None).unwrap();
        let n = width_units(&arch).unwrap().len();
        let w = WidthVector::new((0..n).map(|i| 0.8 + (i % 3) as f64 * 0.2).collect()).unwrap();
        let target = flops(&apply_width(&arch, &w).unwrap().arch, 224).unwrap().total;
        let m = match_flops(&arch, &w, target, 224, &TransferPlan::default()).unwrap();
        assert_eq!(m.c, 1.0);
        assert_eq!(m.width, w);
        assert_eq!(m.achieved_flops, target);
    }

    #[test]
    fn match_flops_quadratic_toy_gives_two() {
        let arch = chain(2, 16);
        let n = width_units(&arch).unwrap().len();
        // Every layer but the stem reads a unit input, so only the stem is linear.
        // Drop the stem's image dependence by measuring with an all-internal target.
        let w = WidthVector::<f64>::ones(n);
        let doubled = apply_width(&arch, &WidthVector::<f64>::uniform(n, 2.0)).unwrap();
        let target = flops(&doubled.arch, 8).unwrap().total;
        let m = match_flops(&arch, &w, target, 8, &TransferPlan::default()).unwrap();
        assert_eq!(m.c, 2.0);
        assert_eq!(m.achieved_flops, target);
    }

    #[test]
    fn match_flops_reports_bracket_failure() {
        let arch = chain(2, 16);
        let n = width_units(&arch).unwrap().len();
        let w = WidthVector::<f64>::ones(n);
        let plan = TransferPlan {
            bisection_bounds: (0.5, 1.5),
            ..Default::default()
        };
        let huge = flops(&arch, 8).unwrap().total * 100;
        assert!(matches!(
            match_flops(&arch, &w, huge, 8, &plan),
            Err(Error::Bracket { .. })
        ));
    }

    #[test]
    fn match_flops_bracket_invariant_holds() {
        let arch = build_preset("mobilenetv2", None).unwrap();
        let n = width_units(&arch).unwrap().len();
        let w = WidthVector::new((0..n).map(|i| 0.5 + (i % 5) as f64 * 0.3).collect()).unwrap();
        let target = flops(&arch, 224).unwrap().total;
        let m = match_flops(&arch, &w, target, 224, &TransferPlan::default()).unwrap();
        for step in &m.trace {
            assert!(step.lo_flops <= target && target <= step.hi_flops, "{step:?}");
            assert!(step.lo < step.hi);
        }
        assert!(!m.granularity_failure);
        assert!(m.rel_error <= 0.005);
    }

    #[test]
    fn transfer_round_trip_is_identity() {
        let arch = build_preset("resnet18", None).unwrap();
        let n = width_units(&arch).unwrap().len();
        let out = transfer(&WidthVector::<f64>::ones(n), &arch, &arch, 224, &TransferPlan::default()).unwrap();
        assert_eq!(out.width, WidthVector::ones(n));
        assert_eq!(out.c, 1.0);
        assert_eq!(out.rel_error, 0.0);
    }

    #[test]
    fn transfer_exact_scalar_keeps_rationals() {
        let dst = chain(4, 16);
        let src = project_arch(&dst, r(1, 2), r(1, 2)).unwrap();
        let n = width_units(&src).unwrap().len();
        let w = WidthVector::new(vec![r(1, 1); n]).unwrap();
        let out = transfer(&w, &src, &dst, 8, &TransferPlan::default()).unwrap();
        assert_eq!(out.rel_error, 0.0);
        assert!(out.width.is_uniform());
        assert_eq!(out.c, r(1, 1));
    }

    #[test]
    fn plan_validation() {
        let mut p = TransferPlan::default();
        assert!(p.validate().is_ok());
        p.bisection_bounds = (2.0, 1.0);
        assert!(p.validate().is_err());
        p = TransferPlan { flops_tolerance: 0.5, ..Default::default() };
        assert!(p.validate().is_err());
        let json = serde_json::to_string(&TransferPlan::default()).unwrap();
        assert!(json.contains("\"stack-average-block\""));
    }
}
