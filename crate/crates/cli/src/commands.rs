use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use aerotree_core::metrics::{evaluate_case, FlaggedCase, MetricsReport, MetricsRow};
use aerotree_core::postprocess::RefineReport;
use aerotree_core::preprocess::{clip_normalize, crop, lung_bbox, resample_isotropic, Interpolation};
use aerotree_core::synth::{add_noise_blob, cut_branch, generate, SynthTreeSpec};
use aerotree_core::{
    ensemble_max, read_mask, read_nifti, refine, threshold, write_nifti, BoundingBox, Index3, IntensityUnit, Mask,
    Volume,
};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{require, PipelineConfig};
use crate::error::{CliError, Result};

pub const CT_PREPROCESSED: &str = "ct_preprocessed.nii.gz";
pub const LUNG_PREPROCESSED: &str = "lung_preprocessed.nii.gz";
pub const GT_PREPROCESSED: &str = "gt_preprocessed.nii.gz";
pub const PREPROCESS_SIDECAR: &str = "preprocess.json";
pub const FUSED_PROBABILITY: &str = "fused_probability.nii.gz";
pub const FUSED_MASK: &str = "fused_mask.nii.gz";
pub const REFINED_MASK: &str = "refined_mask.nii.gz";
pub const REFINE_REPORT: &str = "refine_report.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_SUMMARY_CSV: &str = "metrics_summary.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const PIPELINE_SUMMARY: &str = "pipeline_summary.json";
pub const SYNTH_MASK: &str = "synth_mask.nii.gz";
pub const SYNTH_TRUTH: &str = "synth_truth.json";
pub const SYNTH_CUT: &str = "synth_cut.nii.gz";
pub const SYNTH_NOISY: &str = "synth_noisy.nii.gz";

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::write(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report types serialize");
    write_text(path, &text)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::write(path, e))
}

/// Bookkeeping needed to map preprocessed volumes back to the source grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSidecar {
    pub source_dims: Index3,
    pub source_spacing: [f64; 3],
    pub target_spacing: f64,
    pub resampled_dims: Index3,
    /// Crop box in the resampled grid, inclusive.
    pub bbox: BoundingBox,
    pub cropped_dims: Index3,
    pub clip_low: f64,
    pub clip_high: f64,
}

#[derive(Clone, Debug)]
pub struct PreprocessOutcome {
    pub ct: PathBuf,
    pub lung: PathBuf,
    pub gt: Option<PathBuf>,
    pub sidecar: PreprocessSidecar,
}

/// Resamples the CT and masks to the working spacing, windows and
/// normalises the CT, and crops everything to the lung bounding box.
pub fn preprocess(cfg: &PipelineConfig) -> Result<PreprocessOutcome> {
    let p = &cfg.preprocess;
    let ct_path = require("CT volume", cfg.paths.ct.as_ref())?;
    let lung_path = require("lung mask", cfg.paths.lung_mask.as_ref())?;
    let mut ct = read_nifti(ct_path)?;
    if ct.unit() != IntensityUnit::Hu {
        ct = ct.retag(IntensityUnit::Hu)?;
    }
    let lung = read_mask(lung_path)?;
    lung.ensure_same_shape(&ct, "lung mask vs CT")?;
    let gt = match &cfg.paths.gt_mask {
        Some(_) => {
            let g = read_mask(require("ground-truth mask", cfg.paths.gt_mask.as_ref())?)?;
            g.ensure_same_shape(&ct, "ground truth vs CT")?;
            Some(g)
        }
        None => None,
    };

    let lung_r = resample_isotropic(&lung, p.target_spacing, Interpolation::Nearest)?;
    let bbox = lung_bbox(&lung_r, p.crop_margin)?;
    let ct_r = clip_normalize(&resample_isotropic(&ct, p.target_spacing, Interpolation::Trilinear)?, p)?;
    let ct_c = crop(&ct_r, &bbox)?;
    let lung_c = crop(&lung_r, &bbox)?;

    let sidecar = PreprocessSidecar {
        source_dims: ct.dims(),
        source_spacing: ct.spacing(),
        target_spacing: p.target_spacing,
        resampled_dims: ct_r.dims(),
        bbox,
        cropped_dims: ct_c.dims(),
        clip_low: p.clip_low,
        clip_high: p.clip_high,
    };
    let out = PreprocessOutcome {
        ct: cfg.output(CT_PREPROCESSED)?,
        lung: cfg.output(LUNG_PREPROCESSED)?,
        gt: gt.as_ref().map(|_| cfg.output(GT_PREPROCESSED)).transpose()?,
        sidecar,
    };
    write_nifti(&ct_c, &out.ct)?;
    write_nifti(&lung_c, &out.lung)?;
    if let (Some(g), Some(path)) = (&gt, &out.gt) {
        let g = crop(&resample_isotropic(g, p.target_spacing, Interpolation::Nearest)?, &bbox)?;
        write_nifti(&g, path)?;
    }
    write_json(&cfg.output(PREPROCESS_SIDECAR)?, &out.sidecar)?;
    info!(
        "preprocessed {:?} @ {:?} mm -> {:?} @ {} mm",
        out.sidecar.source_dims, out.sidecar.source_spacing, out.sidecar.cropped_dims, p.target_spacing
    );
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct FuseOutcome {
    pub probability: PathBuf,
    pub mask: PathBuf,
    pub foreground: usize,
}

/// Voxel-wise maximum of the configured probability maps, then thresholding.
pub fn fuse(cfg: &PipelineConfig) -> Result<FuseOutcome> {
    if cfg.paths.probability_maps.is_empty() {
        return Err(CliError::Config("no probability maps given".into()));
    }
    let maps = cfg
        .paths
        .probability_maps
        .iter()
        .map(|p| {
            let m = read_nifti(require("probability map", Some(p))?)?;
            Ok(if m.unit() == IntensityUnit::Probability {
                m
            } else {
                m.retag(IntensityUnit::Probability)?
            })
        })
        .collect::<Result<Vec<Volume>>>()?;
    let fused = ensemble_max(&maps)?;
    let mask = threshold(&fused, &cfg.fusion)?;
    let out = FuseOutcome {
        probability: cfg.output(FUSED_PROBABILITY)?,
        mask: cfg.output(FUSED_MASK)?,
        foreground: mask.foreground_count(),
    };
    write_nifti(&fused, &out.probability)?;
    write_nifti(&mask, &out.mask)?;
    info!("fused {} maps; {} foreground voxels at threshold {}", maps.len(), out.foreground, cfg.fusion.threshold);
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct PostprocessOutcome {
    pub mask: PathBuf,
    pub report_path: PathBuf,
    pub report: RefineReport,
}

/// The configured prediction, or the fused mask from an earlier run.
fn prediction_input(cfg: &PipelineConfig, fallback: &str) -> Result<PathBuf> {
    match &cfg.paths.pred_mask {
        Some(p) => Ok(require("prediction mask", Some(p))?.to_path_buf()),
        None => {
            let p = cfg.output_dir().join(fallback);
            Ok(require("prediction mask", Some(&p))?.to_path_buf())
        }
    }
}

/// Reconnects free segments to the main tree and drops remaining islands.
pub fn postprocess(cfg: &PipelineConfig) -> Result<PostprocessOutcome> {
    let input = prediction_input(cfg, FUSED_MASK)?;
    postprocess_file(cfg, &input)
}

fn postprocess_file(cfg: &PipelineConfig, input: &Path) -> Result<PostprocessOutcome> {
    let mask = read_mask(input)?;
    let refined = refine(&mask, &cfg.reconnect)?;
    let out = PostprocessOutcome {
        mask: cfg.output(REFINED_MASK)?,
        report_path: cfg.output(REFINE_REPORT)?,
        report: refined.report,
    };
    write_nifti(&refined.mask, &out.mask)?;
    write_json(&out.report_path, &out.report)?;
    info!(
        "refined {}: {} reconnected, {} islands discarded",
        input.display(),
        out.report.reconnected.len(),
        out.report.discarded.len()
    );
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub case_id: String,
    pub pred_path: PathBuf,
    pub gt_path: PathBuf,
    pub lung_path: PathBuf,
}

/// Reads a batch manifest; relative paths are taken relative to it.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let bad = |e: csv::Error| CliError::Config(format!("manifest {}: {e}", path.display()));
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(bad)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rows: Vec<ManifestRow> = Vec::new();
    for rec in reader.deserialize() {
        let mut row: ManifestRow = rec.map_err(bad)?;
        for p in [&mut row.pred_path, &mut row.gt_path, &mut row.lung_path] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if rows.iter().any(|r| r.case_id == row.case_id) {
            return Err(CliError::Config(format!("manifest {}: duplicate case_id {}", path.display(), row.case_id)));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Config(format!("manifest {} lists no cases", path.display())));
    }
    Ok(rows)
}

fn evaluate_row(row: &ManifestRow, cfg: &PipelineConfig) -> std::result::Result<MetricsRow, String> {
    let load = |what: &str, p: &Path| read_mask(p).map_err(|e| format!("{what}: {e}"));
    let pred = load("prediction", &row.pred_path)?;
    let gt = load("ground truth", &row.gt_path)?;
    let lung = load("lung mask", &row.lung_path)?;
    evaluate_case(&row.case_id, &pred, &gt, &lung, &cfg.metrics).map_err(|e| e.to_string())
}

/// Evaluates every case, `parallel_cases` at a time. Cases that cannot be
/// read or scored are flagged instead of aborting the batch.
pub fn evaluate_cases(cases: &[ManifestRow], cfg: &PipelineConfig) -> MetricsReport {
    let results: Vec<(String, std::result::Result<MetricsRow, String>)> = cases
        .chunks(cfg.parallel_cases.max(1))
        .flat_map(|chunk| {
            chunk
                .par_iter()
                .map(|row| (row.case_id.clone(), evaluate_row(row, cfg)))
                .collect::<Vec<_>>()
        })
        .collect();
    let mut rows = Vec::new();
    let mut flagged = Vec::new();
    for (case_id, r) in results {
        match r {
            Ok(row) => rows.push(row),
            Err(error) => {
                warn!("case {case_id} flagged: {error}");
                flagged.push(FlaggedCase { case_id, error });
            }
        }
    }
    MetricsReport::new(rows, flagged, cfg.metrics.std_kind)
}

#[derive(Clone, Debug)]
pub struct EvaluateOutcome {
    pub report: MetricsReport,
    pub csv: PathBuf,
    pub summary_csv: PathBuf,
    pub json: PathBuf,
}

pub fn write_report(cfg: &PipelineConfig, report: MetricsReport) -> Result<EvaluateOutcome> {
    let out = EvaluateOutcome {
        csv: cfg.output(METRICS_CSV)?,
        summary_csv: cfg.output(METRICS_SUMMARY_CSV)?,
        json: cfg.output(METRICS_JSON)?,
        report,
    };
    let csv_err = |path: &Path| {
        let path = path.to_path_buf();
        move |e: csv::Error| CliError::write(path, std::io::Error::other(e))
    };
    out.report.write_csv(create(&out.csv)?).map_err(csv_err(&out.csv))?;
    out.report
        .write_summary_csv(create(&out.summary_csv)?)
        .map_err(csv_err(&out.summary_csv))?;
    write_text(&out.json, &out.report.to_json().expect("report serializes"))?;
    Ok(out)
}

/// Scores the manifest cases, or the single configured prediction.
pub fn evaluate(cfg: &PipelineConfig) -> Result<EvaluateOutcome> {
    let cases = match &cfg.paths.manifest {
        Some(m) => read_manifest(require("manifest", Some(m))?)?,
        None => vec![ManifestRow {
            case_id: cfg.case_id.clone(),
            pred_path: prediction_input(cfg, REFINED_MASK)?,
            gt_path: require("ground-truth mask", cfg.paths.gt_mask.as_ref())?.to_path_buf(),
            lung_path: require("lung mask", cfg.paths.lung_mask.as_ref())?.to_path_buf(),
        }],
    };
    let report = evaluate_cases(&cases, cfg);
    info!("evaluated {} cases, {} flagged", report.rows.len(), report.flagged.len());
    write_report(cfg, report)
}

#[derive(Clone, Debug, Default)]
pub struct SynthRequest {
    pub spec: SynthTreeSpec,
    /// Branch to cut mid-way, with the gap length.
    pub cut: Option<(usize, f64)>,
    /// Noise balls as (x, y, z, radius) in mm.
    pub blobs: Vec<[f64; 4]>,
}

#[derive(Clone, Debug)]
pub struct SynthOutcome {
    pub mask: PathBuf,
    pub truth: PathBuf,
    pub cut: Option<PathBuf>,
    pub noisy: Option<PathBuf>,
}

/// Writes a synthetic tree, its metadata, and optional cut and noisy variants.
pub fn synth(cfg: &PipelineConfig, req: &SynthRequest) -> Result<SynthOutcome> {
    let truth = generate(&req.spec)?;
    let mut out = SynthOutcome {
        mask: cfg.output(SYNTH_MASK)?,
        truth: cfg.output(SYNTH_TRUTH)?,
        cut: None,
        noisy: None,
    };
    write_nifti(&truth.mask, &out.mask)?;
    write_text(&out.truth, &truth.metadata_json().expect("metadata serializes"))?;
    let mut variant: Mask = truth.mask.clone();
    if let Some((branch, gap)) = req.cut {
        variant = cut_branch(&truth, branch, gap)?.mask;
        let path = cfg.output(SYNTH_CUT)?;
        write_nifti(&variant, &path)?;
        out.cut = Some(path);
    }
    if !req.blobs.is_empty() {
        for &[x, y, z, r] in &req.blobs {
            variant = add_noise_blob(&variant, [x, y, z], r)?.mask;
        }
        let path = cfg.output(SYNTH_NOISY)?;
        write_nifti(&variant, &path)?;
        out.noisy = Some(path);
    }
    info!("synthetic tree with {} branches written to {}", truth.branch_count, out.mask.display());
    Ok(out)
}

/// Metrics of the thresholded and of the refined prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub thresholded: Option<MetricsRow>,
    pub refined: Option<MetricsRow>,
    pub refine_report: RefineReport,
}

/// Runs preprocess (when a CT is configured), fuse, postprocess and
/// evaluate (when ground truth and lung mask are configured) in order.
///
/// After preprocessing, the probability maps are expected on the
/// preprocessed grid, so evaluation uses the preprocessed masks.
pub fn pipeline(cfg: &PipelineConfig) -> Result<PipelineSummary> {
    let pre = match cfg.paths.ct {
        Some(_) => Some(preprocess(cfg).map_err(|e| e.in_stage("preprocess"))?),
        None => None,
    };
    let fused = fuse(cfg).map_err(|e| e.in_stage("fuse"))?;
    let post = postprocess_file(cfg, &fused.mask).map_err(|e| e.in_stage("postprocess"))?;
    let mut summary = PipelineSummary {
        thresholded: None,
        refined: None,
        refine_report: post.report,
    };
    let references = match &pre {
        Some(p) => p.gt.clone().map(|gt| (gt, p.lung.clone())),
        None => match (&cfg.paths.gt_mask, &cfg.paths.lung_mask) {
            (Some(gt), Some(lung)) => {
                let stage = |e: CliError| e.in_stage("evaluate");
                let gt = require("ground-truth mask", Some(gt)).map_err(stage)?;
                let lung = require("lung mask", Some(lung)).map_err(stage)?;
                Some((gt.to_path_buf(), lung.to_path_buf()))
            }
            _ => None,
        },
    };
    if let Some((gt, lung)) = references {
        let row = |pred: &Path| ManifestRow {
            case_id: cfg.case_id.clone(),
            pred_path: pred.to_path_buf(),
            gt_path: gt.clone(),
            lung_path: lung.clone(),
        };
        let before = evaluate_cases(&[row(&fused.mask)], cfg);
        summary.thresholded = before.rows.first().cloned();
        let after = evaluate_cases(&[row(&post.mask)], cfg);
        summary.refined = after.rows.first().cloned();
        write_report(cfg, after).map_err(|e| e.in_stage("evaluate"))?;
    }
    write_json(&cfg.output(PIPELINE_SUMMARY)?, &summary)?;
    Ok(summary)
}
