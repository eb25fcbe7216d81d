use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use beansplit::dataset::{LabeledImage, Partition};
use beansplit::eval::{self, Criterion, MetricsReport};
use beansplit::measures::{self, Connectivity};
use beansplit::pipeline::{self, MeasureParams, Pipeline, PipelineConfig};
use clap::{Args, ValueEnum};
use serde::Serialize;

use crate::svg::{self, Series};
use crate::util::{self, usage};

#[derive(Clone, Copy, ValueEnum)]
pub enum CriterionArg {
    Iou,
    Bsr,
}

#[derive(Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Bean-vs-tray and split-vs-seed-coat weight files, in that order.
    #[arg(long, num_args = 2, value_names = ["BEAN", "SPLIT"])]
    weights: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "iou")]
    criterion: CriterionArg,
    /// Calibration result; also a complete pipeline config.
    #[arg(long)]
    out: PathBuf,
    /// Threshold sweep CSV; an SVG plot is written next to it.
    #[arg(long)]
    curve: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    step: f64,
    /// Maximum split area M in pixels; estimated from the labeled masks when omitted.
    #[arg(long)]
    max_split_area: Option<u64>,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[arg(long, default_value_t = 8)]
    connectivity: u8,
}

#[derive(Serialize)]
struct CalibrationOutput {
    #[serde(flatten)]
    pipeline: PipelineConfig,
    criterion: Criterion,
    step: f64,
    iou: f64,
    bsr_error_pct: f64,
    validation_images: usize,
    weights_id: String,
    config_hash: String,
}

fn connectivity(c: u8) -> Result<Connectivity> {
    Connectivity::try_from(c).map_err(|_| usage(format!("connectivity must be 4 or 8, not {c}")))
}

/// `M` from the flag, or the largest connected bean region in the masks.
fn max_split_area(given: Option<u64>, images: &[&LabeledImage], conn: Connectivity) -> Result<u64> {
    match given {
        Some(0) => Err(usage("--max-split-area must be positive")),
        Some(m) => Ok(m),
        None => measures::estimate_max_split_area(images.iter().map(|s| &s.mask), conn)
            .ok_or_else(|| anyhow!("no bean pixels in the labeled masks; pass --max-split-area")),
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(p).with_context(|| format!("resolving {}", p.display()))
}

pub fn calibrate(a: CalibrateArgs) -> Result<()> {
    let [bean_path, split_path] = <[PathBuf; 2]>::try_from(a.weights).map_err(|_| usage("--weights takes two files"))?;
    let conn = connectivity(a.connectivity)?;
    let manifest = util::load_manifest(&a.manifest)?;
    let val = util::load_images(&a.manifest, &manifest, Partition::Val)?;
    let train = if manifest.count(Partition::Train) > 0 {
        util::load_images(&a.manifest, &manifest, Partition::Train)?
    } else {
        Vec::new()
    };
    let bean = util::load_weights(&bean_path)?;
    let split = util::load_weights(&split_path)?;

    let criterion = match a.criterion {
        CriterionArg::Iou => Criterion::Iou,
        CriterionArg::Bsr => Criterion::Bsr,
    };
    let scored = pipeline::score_images(&split, &val)?;
    let curve = eval::calibrate_threshold(&scored, criterion, a.step).map_err(|e| match e {
        eval::EvalError::InvalidStep(_) => usage(e.to_string()),
        e => anyhow!(e).context("calibration"),
    })?;

    let labeled: Vec<&LabeledImage> = train.iter().chain(&val).collect();
    let params = MeasureParams {
        max_split_area: max_split_area(a.max_split_area, &labeled, conn)?,
        bins: a.bins,
        connectivity: conn,
    };
    let p = Pipeline::new(bean, split, 0.5, curve.chosen_threshold, params)?;
    let out = CalibrationOutput {
        pipeline: PipelineConfig {
            bean_weights: absolute(&bean_path)?,
            split_weights: absolute(&split_path)?,
            bean_threshold: p.bean_threshold,
            split_threshold: p.split_threshold,
            max_split_area: params.max_split_area,
            bins: params.bins,
            connectivity: a.connectivity,
        },
        criterion,
        step: a.step,
        iou: curve.iou[curve.chosen_index],
        bsr_error_pct: curve.bsr_error_pct[curve.chosen_index],
        validation_images: val.len(),
        weights_id: p.weights_id(),
        config_hash: p.config_hash(),
    };
    util::write_atomic(&a.out, serde_json::to_string_pretty(&out)?.as_bytes())?;
    util::write_atomic(&a.curve, curve.to_csv().as_bytes())?;
    let series = |name: &str, ys: &[f64], scale: f64| Series {
        name: name.into(),
        points: curve.thresholds.iter().zip(ys).map(|(&t, &y)| (t, y * scale)).collect(),
    };
    let chart = svg::line_chart(
        "Split threshold calibration",
        "threshold",
        "IoU / BSR error (fraction)",
        &[
            series("IoU", &curve.iou, 1.0),
            series("BSR error", &curve.bsr_error_pct, 0.01),
        ],
    );
    util::write_atomic(&a.curve.with_extension("svg"), chart.as_bytes())?;
    println!(
        "threshold {:.2} ({:?}): IoU {:.4}, BSR error {:.2}%",
        curve.chosen_threshold, criterion, out.iou, out.bsr_error_pct
    );
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Add the LDA baseline row, fitted on the train partition.
    #[arg(long)]
    lda: bool,
}

fn write_metrics(path: &Path, provenance: &str, reports: &[MetricsReport]) -> Result<()> {
    let text = format!("{provenance}\n{}", eval::metrics_csv(reports));
    util::write_atomic(path, text.as_bytes())?;
    println!("{:<10} {:>8} {:>8} {:>10} {:>10}", "method", "AP", "IoU", "BSR err %", "BSH err");
    for r in reports {
        println!(
            "{:<10} {:>8.4} {:>8.4} {:>10.2} {:>10.5}",
            r.method, r.ap, r.iou, r.bsr_error_pct, r.bsh_error
        );
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let p = util::load_pipeline(&a.config)?;
    let manifest = util::load_manifest(&a.manifest)?;
    let val = util::load_images(&a.manifest, &manifest, Partition::Val)?;
    let mut reports = vec![pipeline::evaluate_pipeline(&p, &val).context("evaluating pipeline")?];
    if a.lda {
        let train = util::load_images(&a.manifest, &manifest, Partition::Train)?;
        let model = pipeline::fit_lda_baseline(&train)?;
        reports.push(pipeline::evaluate_lda(&model, &val, &p.params)?);
    }
    write_metrics(&a.out, &pipeline::provenance_line(&p), &reports)
}

#[derive(Args)]
pub struct LdaArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    max_split_area: Option<u64>,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[arg(long, default_value_t = 8)]
    connectivity: u8,
    /// Also write the fitted discriminant as JSON.
    #[arg(long)]
    model: Option<PathBuf>,
}

pub fn baseline_lda(a: LdaArgs) -> Result<()> {
    if a.bins == 0 {
        return Err(usage("--bins must be positive"));
    }
    let conn = connectivity(a.connectivity)?;
    let manifest = util::load_manifest(&a.manifest)?;
    let train = util::load_images(&a.manifest, &manifest, Partition::Train)?;
    let val = util::load_images(&a.manifest, &manifest, Partition::Val)?;
    let labeled: Vec<&LabeledImage> = train.iter().chain(&val).collect();
    let params = MeasureParams {
        max_split_area: max_split_area(a.max_split_area, &labeled, conn)?,
        bins: a.bins,
        connectivity: conn,
    };
    let model = pipeline::fit_lda_baseline(&train)?;
    let report = pipeline::evaluate_lda(&model, &val, &params)?;
    if let Some(path) = &a.model {
        util::write_atomic(path, serde_json::to_string_pretty(&model)?.as_bytes())?;
    }
    let provenance = format!(
        "# lda weights={:?} bias={} M={} N={} connectivity={}",
        model.weights, model.bias, params.max_split_area, params.bins, a.connectivity
    );
    write_metrics(&a.out, &provenance, &[report])?;
    Ok(())
}
