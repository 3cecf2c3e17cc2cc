//! Post-hoc analysis: width-vector similarity, per-layer width statistics, and
//! aggregated accuracy-versus-overhead reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::archspec::{flow, layer_channels, site_unit_indices, width_units, ArchSpec, WidthVector};
use crate::error::{Error, Result};
use crate::projection::{idealized_savings, savings, OverheadReport, ProjectionConfig, Savings};
use crate::scalar::Scalar;

/// Cosine of the angle between two width vectors.
pub fn cosine_similarity<T: Scalar>(a: &WidthVector<T>, b: &WidthVector<T>) -> Result<f64> {
    cosine(&a.to_f64(), &b.to_f64())
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Repeats each unit's multiplier once per member layer, in layer order, giving a
/// per-layer vector. Fixed layers are skipped.
pub fn expand_to_layers<T: Scalar>(arch: &ArchSpec, w: &WidthVector<T>) -> Result<Vec<T>> {
    let units = width_units(arch)?;
    if units.len() != w.len() {
        return Err(Error::WidthLength {
            expected: units.len(),
            got: w.len(),
        });
    }
    Ok(site_unit_indices(&flow(arch), &units)
        .into_iter()
        .flatten()
        .map(|u| w.entries()[u])
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    /// Whitespace-aligned grid with six decimals, one row per line.
    pub fn to_text_grid(&self) -> String {
        let width = self.labels.iter().map(String::len).max().unwrap_or(0).max(8);
        let mut out = format!("{:width$}", "");
        for l in &self.labels {
            let _ = write!(out, " {l:>width$}");
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.values) {
            let _ = write!(out, "{l:width$}");
            for v in row {
                let _ = write!(out, " {v:>width$.6}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn similarity_matrix<T: Scalar>(ws: &[WidthVector<T>], labels: &[String]) -> Result<SimilarityMatrix> {
    if ws.len() != labels.len() {
        return Err(Error::LengthMismatch(ws.len(), labels.len()));
    }
    if ws.is_empty() {
        return Err(Error::InvalidArgument("no width vectors to compare".into()));
    }
    let vs: Vec<Vec<f64>> = ws.iter().map(WidthVector::to_f64).collect();
    if let Some(v) = vs.iter().find(|v| v.len() != vs[0].len()) {
        return Err(Error::LengthMismatch(vs[0].len(), v.len()));
    }
    let n = vs.len();
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        values[i][i] = 1.0;
        for j in i + 1..n {
            let s = cosine(&vs[i], &vs[j])?;
            values[i][j] = s;
            values[j][i] = s;
        }
    }
    Ok(SimilarityMatrix {
        labels: labels.to_vec(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWidthStat {
    pub path: String,
    pub mean: f64,
    pub std: f64,
}

/// Per-layer mean and population standard deviation of out-channel counts.
pub fn average_width_profile(applied_archs: &[ArchSpec]) -> Result<Vec<LayerWidthStat>> {
    let first = applied_archs.first().ok_or(Error::NoRecords)?;
    let reference = layer_channels(first);
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(applied_archs.len()); reference.len()];
    for arch in applied_archs {
        let layers = layer_channels(arch);
        let same = layers.len() == reference.len() && layers.iter().zip(&reference).all(|(a, b)| a.0 == b.0);
        if !same {
            return Err(Error::StructuralMismatch(format!(
                "`{}` does not share the layer layout of `{}`",
                arch.name, first.name
            )));
        }
        for (col, (_, c)) in columns.iter_mut().zip(layers) {
            col.push(c as f64);
        }
    }
    Ok(reference
        .into_iter()
        .zip(columns)
        .map(|((path, _), col)| {
            let (mean, std) = mean_std(&col);
            LayerWidthStat { path, mean, std }
        })
        .collect())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One optimization (or transfer) experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct RunRecord<T> {
    pub source_config: ProjectionConfig<T>,
    pub target_config: ProjectionConfig<T>,
    pub algorithm: String,
    pub width: WidthVector<T>,
    pub accuracy_proxy: f64,
    /// Overhead of the run at the source configuration.
    pub overhead: OverheadReport,
    /// Overhead of the same algorithm run directly at the target, when measured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_overhead: Option<OverheadReport>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidArgument(format!("unknown format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub algorithm: String,
    pub source: String,
    pub target: String,
    pub saved_fraction: f64,
    /// Absent when the source run cost nothing.
    pub reduction_factor: Option<f64>,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub seeds: usize,
}

pub const REPORT_HEADER: [&str; 8] = [
    "algorithm",
    "source",
    "target",
    "saved_fraction",
    "reduction_factor",
    "accuracy_mean",
    "accuracy_std",
    "seeds",
];

fn tuple_key<T: Scalar>(c: &ProjectionConfig<T>) -> [f64; 4] {
    [
        c.width_mult.as_f64(),
        c.depth_mult.as_f64(),
        c.resolution as f64,
        c.sample_fraction.as_f64(),
    ]
}

fn group_savings<T: Scalar>(group: &[&RunRecord<T>]) -> Result<Savings> {
    let first = group[0];
    let measured: Option<Vec<&OverheadReport>> = group.iter().map(|r| r.target_overhead.as_ref()).collect();
    match measured {
        Some(targets) => {
            let src: u128 = group.iter().map(|r| r.overhead.opt_flops).sum();
            let tgt: u128 = targets.iter().map(|r| r.opt_flops).sum();
            let as_report = |opt_flops| OverheadReport {
                opt_flops,
                ..first.overhead.clone()
            };
            savings(&as_report(src), &as_report(tgt))
        }
        None => Ok(Savings::from_reduction(
            idealized_savings(&first.source_config, &first.target_config)?.as_f64(),
        )),
    }
}

/// Aggregates records per (algorithm, source, target) across seeds.
pub fn aggregate<T: Scalar>(records: &[RunRecord<T>]) -> Result<Vec<ReportRow>> {
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    let mut groups: BTreeMap<(String, String, String), Vec<&RunRecord<T>>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.algorithm.clone(), r.source_config.label(), r.target_config.label()))
            .or_default()
            .push(r);
    }
    let mut rows = Vec::with_capacity(groups.len());
    let mut keys = Vec::with_capacity(groups.len());
    for ((algorithm, source, target), mut group) in groups {
        group.sort_by(|a, b| {
            a.seed
                .cmp(&b.seed)
                .then(a.accuracy_proxy.total_cmp(&b.accuracy_proxy))
                .then(a.overhead.opt_flops.cmp(&b.overhead.opt_flops))
        });
        let accs: Vec<f64> = group.iter().map(|r| r.accuracy_proxy).collect();
        let (accuracy_mean, accuracy_std) = mean_std(&accs);
        let s = group_savings(&group)?;
        keys.push((algorithm.clone(), tuple_key(&group[0].source_config), tuple_key(&group[0].target_config)));
        rows.push(ReportRow {
            algorithm,
            source,
            target,
            saved_fraction: s.saved_fraction,
            reduction_factor: s.reduction_factor.is_finite().then_some(s.reduction_factor),
            accuracy_mean,
            accuracy_std,
            seeds: group.len(),
        });
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&keys[i], &keys[j]);
        a.0.cmp(&b.0)
            .then_with(|| cmp_tuple(&a.1, &b.1))
            .then_with(|| cmp_tuple(&a.2, &b.2))
            .then_with(|| rows[i].source.cmp(&rows[j].source))
            .then_with(|| rows[i].target.cmp(&rows[j].target))
    });
    Ok(order.into_iter().map(|i| rows[i].clone()).collect())
}

fn cmp_tuple(a: &[f64; 4], b: &[f64; 4]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Renders the aggregated report; output depends only on the multiset of records.
pub fn emit_report<T: Scalar>(records: &[RunRecord<T>], format: ReportFormat) -> Result<String> {
    let rows = aggregate(records)?;
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&rows)?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(REPORT_HEADER)?;
            for r in &rows {
                w.write_record([
                    r.algorithm.clone(),
                    r.source.clone(),
                    r.target.clone(),
                    r.saved_fraction.to_string(),
                    r.reduction_factor.map(|v| v.to_string()).unwrap_or_default(),
                    r.accuracy_mean.to_string(),
                    r.accuracy_std.to_string(),
                    r.seeds.to_string(),
                ])?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
    }
}
