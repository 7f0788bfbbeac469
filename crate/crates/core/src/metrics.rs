//! Overlap and tree-completeness metrics: DSC, precision, sensitivity,
//! specificity, tree length detected (TD) and branch detected (BD).

use std::collections::BTreeSet;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::step_length;
use crate::preprocess::clip_trachea_at_lung_top;
use crate::topology::{build_graph_with, skeletonize, CenterlineGraph, GraphParams};
use crate::volume::{Index3, IntensityUnit, Mask};

/// Column headers of the per-case CSV, in report order.
pub const CSV_COLUMNS: [&str; 9] = [
    "case_id",
    "TD",
    "BD",
    "DSC",
    "Precision",
    "Sensitivity",
    "Specificity",
    "n_gt_branches",
    "n_detected_branches",
];

/// The six metrics in report order.
pub const METRIC_NAMES: [&str; 6] = ["TD", "BD", "DSC", "Precision", "Sensitivity", "Specificity"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

fn ratio(num: u64, den: u64, what: &str) -> Result<f64> {
    if den == 0 {
        return Err(Error::UndefinedMetric(format!("{what} has a zero denominator")));
    }
    Ok(100.0 * num as f64 / den as f64)
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn dsc(&self) -> Result<f64> {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_, "DSC")
    }

    pub fn precision(&self) -> Result<f64> {
        ratio(self.tp, self.tp + self.fp, "precision")
    }

    pub fn sensitivity(&self) -> Result<f64> {
        ratio(self.tp, self.tp + self.fn_, "sensitivity")
    }

    pub fn specificity(&self) -> Result<f64> {
        ratio(self.tn, self.tn + self.fp, "specificity")
    }
}

fn ensure_binary(m: &Mask, what: &str) -> Result<()> {
    if m.unit() != IntensityUnit::Binary {
        return Err(Error::Parameter(format!("{what} must be a binary mask")));
    }
    Ok(())
}

/// Voxel-wise confusion counts, optionally restricted to the foreground of `domain`.
pub fn confusion_in(pred: &Mask, gt: &Mask, domain: Option<&Mask>) -> Result<ConfusionCounts> {
    ensure_binary(pred, "prediction")?;
    ensure_binary(gt, "ground truth")?;
    pred.ensure_same_shape(gt, "prediction vs ground truth")?;
    if let Some(d) = domain {
        pred.ensure_same_shape(d, "prediction vs evaluation domain")?;
    }
    let (p, g) = (pred.data(), gt.data());
    let counts = p
        .par_chunks(1 << 16)
        .zip(g.par_chunks(1 << 16))
        .enumerate()
        .map(|(c, (pc, gc))| {
            let base = c << 16;
            let mut n = ConfusionCounts::default();
            for (i, (&a, &b)) in pc.iter().zip(gc).enumerate() {
                if domain.is_some_and(|d| d.data()[base + i] == 0) {
                    continue;
                }
                match (a != 0, b != 0) {
                    (true, true) => n.tp += 1,
                    (true, false) => n.fp += 1,
                    (false, true) => n.fn_ += 1,
                    (false, false) => n.tn += 1,
                }
            }
            n
        })
        .reduce(ConfusionCounts::default, |a, b| ConfusionCounts {
            tp: a.tp + b.tp,
            fp: a.fp + b.fp,
            fn_: a.fn_ + b.fn_,
            tn: a.tn + b.tn,
        });
    Ok(counts)
}

pub fn confusion(pred: &Mask, gt: &Mask) -> Result<ConfusionCounts> {
    confusion_in(pred, gt, None)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TdMode {
    /// Physical length of centreline steps with both voxels inside the prediction.
    #[default]
    Steps,
    /// Fraction of centreline voxels inside the prediction.
    Voxels,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpecificityDomain {
    #[default]
    FullGrid,
    LungMask,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StdKind {
    /// n − 1 denominator.
    #[default]
    Sample,
    Population,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricParams {
    /// A branch is detected when at least this fraction of its centreline
    /// voxels lies inside the prediction.
    pub branch_detect_fraction: f64,
    pub specificity_domain: SpecificityDomain,
    pub td_mode: TdMode,
    pub std_kind: StdKind,
    /// Terminal ground-truth branches shorter than this are pruned; 0 keeps all.
    pub min_branch_length_mm: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            branch_detect_fraction: 0.8,
            specificity_domain: SpecificityDomain::FullGrid,
            td_mode: TdMode::Steps,
            std_kind: StdKind::Sample,
            min_branch_length_mm: 0.0,
        }
    }
}

impl MetricParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.branch_detect_fraction > 0.0 && self.branch_detect_fraction <= 1.0) {
            return Err(Error::Parameter(format!(
                "branch_detect_fraction must be in (0, 1], got {}",
                self.branch_detect_fraction
            )));
        }
        if !(self.min_branch_length_mm >= 0.0) {
            return Err(Error::Parameter("min_branch_length_mm must be non-negative".into()));
        }
        Ok(())
    }
}

fn inside(pred: &Mask, p: Index3) -> bool {
    pred.data()[pred.linear_index(p)] != 0
}

fn check_graph(graph: &CenterlineGraph, pred: &Mask) -> Result<()> {
    if graph.dims != pred.dims() {
        return Err(Error::Shape(format!("centreline grid {:?} vs prediction {:?}", graph.dims, pred.dims())));
    }
    Ok(())
}

pub fn tree_length_detected(gt_graph: &CenterlineGraph, pred: &Mask, mode: TdMode) -> Result<f64> {
    check_graph(gt_graph, pred)?;
    match mode {
        TdMode::Steps => {
            let sp = gt_graph.spacing;
            let (mut hit, mut total) = (0.0, 0.0);
            for b in &gt_graph.branches {
                for (a, c) in b.steps() {
                    let len = step_length(a, c, sp);
                    total += len;
                    if inside(pred, a) && inside(pred, c) {
                        hit += len;
                    }
                }
            }
            if total <= 0.0 {
                return Err(Error::UndefinedMetric("ground-truth centreline has zero length".into()));
            }
            Ok(100.0 * hit / total)
        }
        TdMode::Voxels => {
            let voxels: BTreeSet<Index3> = gt_graph
                .branches
                .iter()
                .flat_map(|b| b.voxel_path.iter().copied())
                .chain(gt_graph.nodes.iter().flat_map(|n| n.voxels.iter().copied()))
                .collect();
            let hit = voxels.iter().filter(|&&p| inside(pred, p)).count();
            ratio(hit as u64, voxels.len() as u64, "TD")
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchDetection {
    pub bd_pct: f64,
    pub detected: usize,
    pub total: usize,
}

pub fn branch_detected(gt_graph: &CenterlineGraph, pred: &Mask, params: &MetricParams) -> Result<BranchDetection> {
    check_graph(gt_graph, pred)?;
    let total = gt_graph.branches.len();
    let detected = gt_graph
        .branches
        .iter()
        .filter(|b| {
            let n = b.voxel_path.iter().filter(|&&p| inside(pred, p)).count();
            n as f64 >= params.branch_detect_fraction * b.voxel_path.len() as f64
        })
        .count();
    Ok(BranchDetection {
        bd_pct: ratio(detected as u64, total as u64, "BD")?,
        detected,
        total,
    })
}

/// One evaluated case; all values are percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub case_id: String,
    #[serde(rename = "TD")]
    pub td: f64,
    #[serde(rename = "BD")]
    pub bd: f64,
    #[serde(rename = "DSC")]
    pub dsc: f64,
    #[serde(rename = "Precision")]
    pub precision: f64,
    #[serde(rename = "Sensitivity")]
    pub sensitivity: f64,
    #[serde(rename = "Specificity")]
    pub specificity: f64,
    pub n_gt_branches: usize,
    pub n_detected_branches: usize,
}

impl MetricsRow {
    /// The six metrics in report order.
    pub fn values(&self) -> [f64; 6] {
        [self.td, self.bd, self.dsc, self.precision, self.sensitivity, self.specificity]
    }
}

/// Everything `evaluate_case` derives from one case, for callers that need
/// more than the row.
#[derive(Clone, Debug)]
pub struct CaseEvaluation {
    pub row: MetricsRow,
    pub counts: ConfusionCounts,
    pub gt_graph: CenterlineGraph,
}

/// Clips both masks at the lung top, skeletonizes the clipped ground truth
/// and computes all six metrics.
pub fn evaluate_case_detailed(case_id: &str, pred: &Mask, gt: &Mask, lung: &Mask, params: &MetricParams) -> Result<CaseEvaluation> {
    params.validate()?;
    ensure_binary(pred, "prediction")?;
    ensure_binary(gt, "ground truth")?;
    ensure_binary(lung, "lung mask")?;
    pred.ensure_same_shape(gt, "prediction vs ground truth")?;
    pred.ensure_same_shape(lung, "prediction vs lung mask")?;

    let (pred, gt) = rayon::join(|| clip_trachea_at_lung_top(pred, lung), || clip_trachea_at_lung_top(gt, lung));
    let (pred, gt) = (pred?, gt?);
    let domain = match params.specificity_domain {
        SpecificityDomain::FullGrid => None,
        SpecificityDomain::LungMask => Some(lung),
    };
    let (graph, counts) = rayon::join(
        || {
            let graph_params = GraphParams {
                min_branch_length_mm: params.min_branch_length_mm,
            };
            build_graph_with(&skeletonize(&gt), &graph_params)
        },
        || confusion_in(&pred, &gt, domain),
    );
    let counts = counts?;
    let td = tree_length_detected(&graph, &pred, params.td_mode)?;
    let bd = branch_detected(&graph, &pred, params)?;
    let row = MetricsRow {
        case_id: case_id.to_string(),
        td,
        bd: bd.bd_pct,
        dsc: counts.dsc()?,
        precision: counts.precision()?,
        sensitivity: counts.sensitivity()?,
        specificity: counts.specificity()?,
        n_gt_branches: bd.total,
        n_detected_branches: bd.detected,
    };
    Ok(CaseEvaluation {
        row,
        counts,
        gt_graph: graph,
    })
}

pub fn evaluate_case(case_id: &str, pred: &Mask, gt: &Mask, lung: &Mask, params: &MetricParams) -> Result<MetricsRow> {
    evaluate_case_detailed(case_id, pred, gt, lung, params).map(|e| e.row)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: &[f64], kind: StdKind) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let den = match kind {
        StdKind::Sample if values.len() > 1 => n - 1.0,
        StdKind::Sample => 1.0,
        StdKind::Population => n,
    };
    MeanStd {
        mean,
        std: (ss / den).sqrt(),
    }
}

/// Mean ± std of each metric, in report order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_cases: usize,
    pub std_kind: StdKind,
    #[serde(rename = "TD")]
    pub td: MeanStd,
    #[serde(rename = "BD")]
    pub bd: MeanStd,
    #[serde(rename = "DSC")]
    pub dsc: MeanStd,
    #[serde(rename = "Precision")]
    pub precision: MeanStd,
    #[serde(rename = "Sensitivity")]
    pub sensitivity: MeanStd,
    #[serde(rename = "Specificity")]
    pub specificity: MeanStd,
}

impl Aggregate {
    pub fn values(&self) -> [MeanStd; 6] {
        [self.td, self.bd, self.dsc, self.precision, self.sensitivity, self.specificity]
    }

    fn from_columns(n_cases: usize, kind: StdKind, cols: [Vec<f64>; 6]) -> Self {
        let [td, bd, dsc, precision, sensitivity, specificity] = cols.map(|c| mean_std(&c, kind));
        Self {
            n_cases,
            std_kind: kind,
            td,
            bd,
            dsc,
            precision,
            sensitivity,
            specificity,
        }
    }
}

fn columns(rows: &[MetricsRow]) -> [Vec<f64>; 6] {
    std::array::from_fn(|m| rows.iter().map(|r| r.values()[m]).collect())
}

/// Per-metric mean ± std pooled over all rows.
pub fn aggregate(rows: &[MetricsRow], kind: StdKind) -> Result<Aggregate> {
    if rows.is_empty() {
        return Err(Error::Parameter("cannot aggregate zero cases".into()));
    }
    Ok(Aggregate::from_columns(rows.len(), kind, columns(rows)))
}

/// Mean ± std of the per-group means (e.g. one group per fold).
pub fn aggregate_groups(groups: &[Vec<MetricsRow>], kind: StdKind) -> Result<Aggregate> {
    if groups.is_empty() || groups.iter().any(|g| g.is_empty()) {
        return Err(Error::Parameter("cannot aggregate empty groups".into()));
    }
    let means: Vec<[f64; 6]> = groups
        .iter()
        .map(|g| aggregate(g, kind).map(|a| a.values().map(|v| v.mean)))
        .collect::<Result<_>>()?;
    let cols = std::array::from_fn(|m| means.iter().map(|v| v[m]).collect());
    let n_cases = groups.iter().map(Vec::len).sum();
    Ok(Aggregate::from_columns(n_cases, kind, cols))
}

/// A case that could not be evaluated; it is excluded from the aggregate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlaggedCase {
    pub case_id: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub flagged: Vec<FlaggedCase>,
    /// `None` when no case could be evaluated.
    pub aggregate: Option<Aggregate>,
}

impl MetricsReport {
    /// Sorts rows and flagged cases by id and aggregates the successful rows.
    pub fn new(mut rows: Vec<MetricsRow>, mut flagged: Vec<FlaggedCase>, kind: StdKind) -> Self {
        rows.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        flagged.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        let aggregate = aggregate(&rows, kind).ok();
        Self { rows, flagged, aggregate }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    /// Per-case CSV; flagged cases appear with `NA` in every value column.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_COLUMNS)?;
        let mut lines: Vec<(&str, Vec<String>)> = self
            .rows
            .iter()
            .map(|r| {
                let mut v: Vec<String> = r.values().iter().map(f64::to_string).collect();
                v.push(r.n_gt_branches.to_string());
                v.push(r.n_detected_branches.to_string());
                (r.case_id.as_str(), v)
            })
            .chain(self.flagged.iter().map(|f| (f.case_id.as_str(), vec!["NA".to_string(); 8])))
            .collect();
        lines.sort_by(|a, b| a.0.cmp(b.0));
        for (id, v) in lines {
            w.write_field(id)?;
            w.write_record(&v)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Aggregate CSV with one `mean` and one `std` line.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["statistic"];
        header.extend(METRIC_NAMES);
        header.push("n_cases");
        w.write_record(&header)?;
        if let Some(a) = &self.aggregate {
            for (name, pick) in [("mean", 0), ("std", 1)] {
                let mut line = vec![name.to_string()];
                line.extend(a.values().iter().map(|v| if pick == 0 { v.mean } else { v.std }.to_string()));
                line.push(a.n_cases.to_string());
                w.write_record(&line)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Plain-text table in the six-metric column order, ending with the
    /// mean ± std line.
    pub fn table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.case_id.len())
            .chain(self.flagged.iter().map(|f| f.case_id.len()))
            .chain([5])
            .max()
            .unwrap_or(5);
        let mut s = format!("{:<width$}", "case");
        for m in METRIC_NAMES {
            s.push_str(&format!("  {:>15}", format!("{m} (%)")));
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("{:<width$}", r.case_id));
            for v in r.values() {
                s.push_str(&format!("  {v:>15.2}"));
            }
            s.push('\n');
        }
        for f in &self.flagged {
            s.push_str(&format!("{:<width$}  flagged: {}\n", f.case_id, f.error));
        }
        if let Some(a) = &self.aggregate {
            s.push_str(&format!("{:<width$}", "Total"));
            for v in a.values() {
                s.push_str(&format!("  {:>15}", format!("{:.2}±{:.2}", v.mean, v.std)));
            }
            s.push('\n');
            if !self.flagged.is_empty() {
                s.push_str(&format!(
                    "aggregate over {} of {} cases; flagged cases excluded\n",
                    a.n_cases,
                    a.n_cases + self.flagged.len()
                ));
            }
        }
        s
    }
}
