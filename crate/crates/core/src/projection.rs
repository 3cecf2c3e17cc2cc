//! Proxy construction (width, depth, resolution, and data projection) and the
//! accounting of what a width-optimization run costs at a given configuration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::archspec::{apply_counts, flops, width_units, ArchSpec, BlockSpec, UnitRef};
use crate::error::{Error, Result};
use crate::scalar::{decimal, Scalar};

/// Default passes of forward+backward relative to a forward pass.
pub const DEFAULT_BACKWARD_FACTOR: u64 = 3;
/// Default search epochs for width optimization.
pub const DEFAULT_SEARCH_EPOCHS: u32 = 40;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub num_classes: u64,
    pub samples_per_class: Vec<u64>,
    pub resolution: u32,
}

impl DatasetSpec {
    pub fn balanced(name: &str, num_classes: u64, per_class: u64, resolution: u32) -> Self {
        DatasetSpec {
            name: name.to_string(),
            num_classes,
            samples_per_class: vec![per_class; num_classes as usize],
            resolution,
        }
    }

    pub fn total(&self) -> u64 {
        self.samples_per_class.iter().sum()
    }

    pub fn is_balanced(&self) -> bool {
        self.samples_per_class.windows(2).all(|w| w[0] == w[1])
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::InvalidArgument("dataset needs at least one class".into()));
        }
        if self.samples_per_class.len() as u64 != self.num_classes {
            return Err(Error::InvalidArgument(format!(
                "samples_per_class has {} entries for {} classes",
                self.samples_per_class.len(),
                self.num_classes
            )));
        }
        if self.resolution == 0 {
            return Err(Error::InvalidResolution(0));
        }
        Ok(())
    }
}

/// A proxy configuration: (width, depth, resolution, data fraction).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct ProjectionConfig<T> {
    #[serde(with = "decimal")]
    pub width_mult: T,
    #[serde(with = "decimal")]
    pub depth_mult: T,
    pub resolution: u32,
    #[serde(with = "decimal")]
    pub sample_fraction: T,
}

impl<T: Scalar> ProjectionConfig<T> {
    pub fn new(width_mult: T, depth_mult: T, resolution: u32, sample_fraction: T) -> Result<Self> {
        let cfg = ProjectionConfig {
            width_mult,
            depth_mult,
            resolution,
            sample_fraction,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The unprojected configuration at `resolution`.
    pub fn identity(resolution: u32) -> Self {
        ProjectionConfig {
            width_mult: T::one(),
            depth_mult: T::one(),
            resolution,
            sample_fraction: T::one(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.width_mult.is_positive() || !self.depth_mult.is_positive() {
            return Err(Error::InvalidArgument("width and depth multipliers must be positive".into()));
        }
        if self.resolution == 0 {
            return Err(Error::InvalidResolution(0));
        }
        if !self.sample_fraction.is_positive() || self.sample_fraction > T::one() {
            return Err(Error::InvalidArgument("sample fraction must be in (0, 1]".into()));
        }
        Ok(())
    }

    /// Parses `"width,depth,resolution,fraction"`; the fraction accepts a `%` suffix.
    pub fn parse_tuple(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.trim().trim_matches(|c| c == '(' || c == ')').split(',').collect();
        let bad = || Error::InvalidArgument(format!("expected `width,depth,resolution,fraction`, got `{text}`"));
        if parts.len() != 4 {
            return Err(bad());
        }
        let width = T::parse_decimal(parts[0]).ok_or_else(bad)?;
        let depth = T::parse_decimal(parts[1]).ok_or_else(bad)?;
        let resolution: u32 = parts[2].trim().parse().map_err(|_| bad())?;
        let frac_text = parts[3].trim();
        let fraction = match frac_text.strip_suffix('%') {
            Some(p) => T::parse_decimal(p).ok_or_else(bad)? / T::from_u64(100).ok_or_else(bad)?,
            None => T::parse_decimal(frac_text).ok_or_else(bad)?,
        };
        Self::new(width, depth, resolution, fraction)
    }

    pub fn label(&self) -> String {
        format!(
            "({},{},{},{})",
            self.width_mult.to_decimal(),
            self.depth_mult.to_decimal(),
            self.resolution,
            self.sample_fraction.to_decimal()
        )
    }
}

fn continuation_block(first: &BlockSpec) -> BlockSpec {
    let mut block = first.clone();
    for layer in &mut block.layers {
        layer.stride = 1;
    }
    block.shortcut = None;
    block.residual = block.layers.last().map(|l| l.width_unit == UnitRef::Trunk).unwrap_or(false);
    block
}

/// Block count after depth projection: `max(1, round(depth_mult * count))`.
pub fn projected_block_count<T: Scalar>(count: usize, depth_mult: T) -> usize {
    let n = (T::from_usize(count).unwrap_or_else(T::zero) * depth_mult)
        .round_half_up()
        .unwrap_or(0) as usize;
    n.max(1)
}

/// Uniformly scales every non-fixed unit's base width and every depth-projectable
/// stage's block count.
///
/// Shrinking keeps the leading blocks (the first block carries the stride); growing
/// repeats the last block, or a stride-free continuation of the first block when the
/// stage has only one.
pub fn project_arch<T: Scalar>(arch: &ArchSpec, width_mult: T, depth_mult: T) -> Result<ArchSpec> {
    if !width_mult.is_positive() || !depth_mult.is_positive() {
        return Err(Error::InvalidArgument("projection multipliers must be positive".into()));
    }
    arch.ensure_valid()?;
    let mut out = arch.clone();
    for stage in out.stages.iter_mut().filter(|s| s.depth_projectable) {
        let count = stage.blocks.len();
        let target = projected_block_count(count, depth_mult);
        if target < count {
            stage.blocks.truncate(target);
        } else if target > count {
            let template = if count >= 2 {
                stage.blocks[count - 1].clone()
            } else {
                continuation_block(&stage.blocks[0])
            };
            stage.blocks.resize(target, template);
        }
    }
    let counts: Vec<u64> = width_units(&out)?
        .iter()
        .map(|u| crate::archspec::round_channels(u.base_channels, width_mult, 1).0)
        .collect();
    let out = apply_counts(&out, &counts)?;
    out.ensure_valid()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectedDataset {
    pub dataset: DatasetSpec,
    pub warnings: Vec<String>,
}

/// Class-balanced subsampling plus resolution replacement.
///
/// Each class keeps `floor(fraction * count)`; the remainder needed to reach
/// `round(fraction * total)` is handed out one sample per class in class order.
pub fn project_dataset<T: Scalar>(ds: &DatasetSpec, resolution: u32, fraction: T) -> Result<ProjectedDataset> {
    ds.validate()?;
    if resolution == 0 {
        return Err(Error::InvalidResolution(0));
    }
    if !fraction.is_positive() || fraction > T::one() {
        return Err(Error::InvalidArgument("sample fraction must be in (0, 1]".into()));
    }
    let scale = |n: u64| T::from_u64(n).unwrap_or_else(T::zero) * fraction;
    let target_total = scale(ds.total()).round_half_up().unwrap_or(0);
    let mut counts: Vec<u64> = ds
        .samples_per_class
        .iter()
        .map(|&c| scale(c).floor_u64().unwrap_or(0).min(c))
        .collect();
    let mut remainder = target_total.saturating_sub(counts.iter().sum());
    for (kept, &orig) in counts.iter_mut().zip(&ds.samples_per_class) {
        if remainder == 0 {
            break;
        }
        if *kept < orig {
            *kept += 1;
            remainder -= 1;
        }
    }

    let mut warnings = Vec::new();
    let emptied: Vec<usize> = counts
        .iter()
        .zip(&ds.samples_per_class)
        .enumerate()
        .filter(|(_, (&k, &o))| k == 0 && o > 0)
        .map(|(i, _)| i)
        .collect();
    if !emptied.is_empty() && counts.iter().any(|&k| k > 0) {
        warnings.push(format!(
            "fraction {} leaves {} class(es) empty while others keep samples (first: class {})",
            fraction.to_decimal(),
            emptied.len(),
            emptied[0]
        ));
    }

    Ok(ProjectedDataset {
        dataset: DatasetSpec {
            name: ds.name.clone(),
            num_classes: ds.num_classes,
            samples_per_class: counts,
            resolution,
        },
        warnings,
    })
}

/// What a width-optimization run costs, in MACs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverheadReport {
    pub opt_flops: u128,
    pub forward_macs: u64,
    pub images: u64,
    pub epochs: u32,
    pub components: BTreeMap<String, f64>,
}

impl OverheadReport {
    pub const CSV_HEADER: [&'static str; 10] = [
        "width",
        "depth",
        "resolution",
        "fraction",
        "forward_macs",
        "images",
        "epochs",
        "backward_factor",
        "algo_factor",
        "opt_flops",
    ];

    /// One CSV row (with header) of this report and the configuration it was measured at.
    pub fn to_csv<T: Scalar>(&self, config: &ProjectionConfig<T>) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::CSV_HEADER)?;
        let comp = |k: &str| self.components.get(k).map(|v| v.to_string()).unwrap_or_default();
        w.write_record([
            config.width_mult.to_decimal(),
            config.depth_mult.to_decimal(),
            config.resolution.to_string(),
            config.sample_fraction.to_decimal(),
            self.forward_macs.to_string(),
            self.images.to_string(),
            self.epochs.to_string(),
            comp("backward_factor"),
            comp("algo_factor"),
            self.opt_flops.to_string(),
        ])?;
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// `forward MACs per image x images x epochs x backward_factor x algo_factor`.
pub fn optimization_overhead<T: Scalar>(
    arch: &ArchSpec,
    ds: &DatasetSpec,
    epochs: u32,
    algo_factor: T,
    backward_factor: T,
) -> Result<OverheadReport> {
    if epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be >= 1".into()));
    }
    if !algo_factor.is_positive() || !backward_factor.is_positive() {
        return Err(Error::InvalidArgument("algo and backward factors must be positive".into()));
    }
    ds.validate()?;
    let forward = flops(arch, ds.resolution)?.total;
    let images = ds.total();
    let base = forward as u128 * images as u128 * epochs as u128;
    let opt_flops = (algo_factor * backward_factor).scale_count(base);
    let mut components = BTreeMap::new();
    components.insert("algo_factor".to_string(), algo_factor.as_f64());
    components.insert("backward_factor".to_string(), backward_factor.as_f64());
    components.insert("epochs".to_string(), epochs as f64);
    Ok(OverheadReport {
        opt_flops,
        forward_macs: forward,
        images,
        epochs,
        components,
    })
}

/// Overhead of optimizing at `cfg`, measured by projecting `base_arch` and `base_ds`.
///
/// Also records the idealized per-axis multipliers relative to the unprojected base.
pub fn config_overhead<T: Scalar>(
    base_arch: &ArchSpec,
    base_ds: &DatasetSpec,
    cfg: &ProjectionConfig<T>,
    epochs: u32,
    algo_factor: T,
    backward_factor: T,
) -> Result<OverheadReport> {
    cfg.validate()?;
    let arch = project_arch(base_arch, cfg.width_mult, cfg.depth_mult)?;
    let ds = project_dataset(base_ds, cfg.resolution, cfg.sample_fraction)?.dataset;
    let mut report = optimization_overhead(&arch, &ds, epochs, algo_factor, backward_factor)?;
    let w = cfg.width_mult.as_f64();
    let r = cfg.resolution as f64 / base_ds.resolution as f64;
    report.components.insert("width^2".into(), w * w);
    report.components.insert("depth".into(), cfg.depth_mult.as_f64());
    report.components.insert("resolution^2".into(), r * r);
    report.components.insert("data".into(), cfg.sample_fraction.as_f64());
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Savings {
    pub saved_fraction: f64,
    pub reduction_factor: f64,
}

impl Savings {
    pub fn from_reduction(reduction_factor: f64) -> Self {
        Savings {
            saved_fraction: 1.0 - 1.0 / reduction_factor,
            reduction_factor,
        }
    }
}

/// Savings of optimizing at `source` instead of `target`.
pub fn savings(source: &OverheadReport, target: &OverheadReport) -> Result<Savings> {
    if target.opt_flops == 0 {
        return Err(Error::InvalidArgument("target overhead must be positive".into()));
    }
    if source.opt_flops > target.opt_flops {
        return Err(Error::ProxyNotCheaper {
            source_flops: source.opt_flops,
            target_flops: target.opt_flops,
        });
    }
    let ratio = source.opt_flops as f64 / target.opt_flops as f64;
    Ok(Savings {
        saved_fraction: 1.0 - ratio,
        reduction_factor: target.opt_flops as f64 / source.opt_flops as f64,
    })
}

/// Closed-form reduction factor `(tw/sw)^2 (td/sd) (tr/sr)^2 (tf/sf)`: overhead is
/// quadratic in width and resolution and linear in depth and data.
pub fn idealized_savings<T: Scalar>(source: &ProjectionConfig<T>, target: &ProjectionConfig<T>) -> Result<T> {
    source.validate()?;
    target.validate()?;
    if source.width_mult > target.width_mult {
        return Err(Error::SourceExceedsTarget { component: "width" });
    }
    if source.depth_mult > target.depth_mult {
        return Err(Error::SourceExceedsTarget { component: "depth" });
    }
    if source.resolution > target.resolution {
        return Err(Error::SourceExceedsTarget { component: "resolution" });
    }
    if source.sample_fraction > target.sample_fraction {
        return Err(Error::SourceExceedsTarget { component: "fraction" });
    }
    let w = target.width_mult / source.width_mult;
    let d = target.depth_mult / source.depth_mult;
    let r = T::from_ratio(target.resolution as u64, source.resolution as u64);
    let f = target.sample_fraction / source.sample_fraction;
    Ok(w * w * d * r * r * f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspec::build_preset;
    use crate::Rational64;

    fn cfg(w: &str, d: &str, r: u32, f: &str) -> ProjectionConfig<Rational64> {
        ProjectionConfig::new(
            Rational64::parse_decimal(w).unwrap(),
            Rational64::parse_decimal(d).unwrap(),
            r,
            Rational64::parse_decimal(f).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn idealized_single_axis_examples() {
        let full = cfg("1", "4", 320, "1");
        let r = idealized_savings(&cfg("1", "1", 320, "1"), &full).unwrap();
        assert_eq!(r, Rational64::from_integer(4));
        let r = idealized_savings(&cfg("1", "4", 64, "1"), &full).unwrap();
        assert_eq!(r, Rational64::from_integer(25));
        let r = idealized_savings(&cfg("1", "4", 320, "0.05"), &full).unwrap();
        assert_eq!(r, Rational64::from_integer(20));
    }

    #[test]
    fn idealized_rejects_source_larger_than_target() {
        let err = idealized_savings(&cfg("2", "1", 224, "1"), &cfg("1", "1", 224, "1")).unwrap_err();
        assert!(matches!(err, Error::SourceExceedsTarget { component: "width" }));
    }

    #[test]
    fn parse_tuple_accepts_percent() {
        let c = ProjectionConfig::<Rational64>::parse_tuple("0.707,1,160,10%").unwrap();
        assert_eq!(c.sample_fraction, Rational64::new(1, 10));
        assert!(ProjectionConfig::<f64>::parse_tuple("1,1,224").is_err());
        assert!(ProjectionConfig::<f64>::parse_tuple("1,1,224,1.5").is_err());
    }

    #[test]
    fn dataset_projection_examples() {
        let ds = DatasetSpec::balanced("d", 10, 100, 224);
        let same = project_dataset(&ds, 224, 1.0f64).unwrap();
        assert_eq!(same.dataset, ds);
        let p = project_dataset(&ds, 64, 0.05f64).unwrap().dataset;
        assert_eq!(p.samples_per_class, vec![5; 10]);
        assert_eq!(p.total(), 50);
        assert_eq!(p.resolution, 64);
        let three = DatasetSpec::balanced("d", 3, 10, 32);
        let p = project_dataset(&three, 32, 0.5f64).unwrap().dataset;
        assert_eq!(p.samples_per_class, vec![5, 5, 5]);
    }

    #[test]
    fn dataset_projection_warns_on_emptied_class() {
        let ds = DatasetSpec {
            name: "skewed".into(),
            num_classes: 3,
            samples_per_class: vec![100, 1, 1],
            resolution: 32,
        };
        let p = project_dataset(&ds, 32, 0.1f64).unwrap();
        assert_eq!(p.dataset.total(), 10);
        assert_eq!(p.warnings.len(), 1);
    }

    #[test]
    fn dataset_projection_remainder_goes_in_class_order() {
        let ds = DatasetSpec::balanced("d", 4, 3, 32);
        let p = project_dataset(&ds, 32, Rational64::new(1, 2)).unwrap().dataset;
        // 1.5 per class floors to 1; total round(6) = 6 → two extras to classes 0 and 1.
        assert_eq!(p.samples_per_class, vec![2, 2, 1, 1]);
    }

    #[test]
    fn project_arch_identity_and_depth_rules() {
        let r18 = build_preset("resnet18", None).unwrap();
        assert_eq!(project_arch(&r18, 1.0f64, 1.0).unwrap(), r18);

        let half = project_arch(&r18, 1.0f64, 0.5).unwrap();
        assert_eq!(half.block_counts(), vec![1, 1, 1, 1]);
        for (p, o) in half.stages.iter().zip(&r18.stages) {
            assert_eq!(p.blocks[0], o.blocks[0]);
        }

        let mb = build_preset("mobilenetv2", None).unwrap();
        let deep = project_arch(&mb, 1.0f64, 2.0).unwrap();
        assert_eq!(deep.block_counts(), vec![1, 4, 6, 8, 6, 6, 1]);
    }

    #[test]
    fn project_arch_grows_single_block_stage() {
        let r18 = build_preset("resnet18", None).unwrap();
        let shallow = project_arch(&r18, 1.0f64, 0.5).unwrap();
        let regrown = project_arch(&shallow, 1.0f64, 3.0).unwrap();
        assert_eq!(regrown.block_counts(), vec![3, 3, 3, 3]);
        assert!(regrown.ensure_valid().is_ok());
        // The synthesized blocks match the original stride-free blocks.
        assert_eq!(regrown.stages[1].blocks[1], r18.stages[1].blocks[1]);
    }

    #[test]
    fn width_projection_uses_rounding_rule() {
        let r18 = build_preset("resnet18", None).unwrap();
        let narrow = project_arch(&r18, 0.312f64, 1.0).unwrap();
        assert_eq!(narrow.stem[0].base_out_channels, 20);
        assert_eq!(narrow.stages[3].blocks[1].layers[1].base_out_channels, 160);
        assert_eq!(narrow.head[0].base_out_channels, 1000);
    }

    #[test]
    fn overhead_definition_and_algo_factor() {
        let toy = build_preset("toy-k-units", None).unwrap();
        let one = DatasetSpec::balanced("one", 1, 1, 32);
        let fwd = flops(&toy, 32).unwrap().total;
        let r = optimization_overhead(&toy, &one, 1, 1.0f64, 1.0).unwrap();
        assert_eq!(r.opt_flops, fwd as u128);
        let r2 = optimization_overhead(&toy, &one, 1, 2.0f64, 1.0).unwrap();
        assert_eq!(r2.opt_flops, 2 * fwd as u128);
        assert!(optimization_overhead(&toy, &one, 0, 1.0f64, 1.0).is_err());
    }

    #[test]
    fn savings_edge_cases() {
        let toy = build_preset("toy-k-units", None).unwrap();
        let ds = DatasetSpec::balanced("d", 10, 10, 32);
        let a = optimization_overhead(&toy, &ds, 1, 1.0f64, 3.0).unwrap();
        let s = savings(&a, &a).unwrap();
        assert_eq!((s.saved_fraction, s.reduction_factor), (0.0, 1.0));
        let big = optimization_overhead(&toy, &ds, 2, 1.0f64, 3.0).unwrap();
        assert!(matches!(savings(&big, &a), Err(Error::ProxyNotCheaper { .. })));
    }

    #[test]
    fn overhead_csv_row() {
        let toy = build_preset("toy-k-units", None).unwrap();
        let ds = DatasetSpec::balanced("d", 10, 10, 32);
        let r = optimization_overhead(&toy, &ds, 40, 1.0f64, 3.0).unwrap();
        let csv = r.to_csv(&ProjectionConfig::<f64>::identity(32)).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("width,depth,resolution,fraction"));
        assert!(lines[1].ends_with(&r.opt_flops.to_string()));
    }
}
