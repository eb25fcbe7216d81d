use std::path::PathBuf;

use anyhow::{Context, Result};
use beansplit::dataset::Partition;
use beansplit::segnet::{self, ModelKind, NetworkConfig, TrainConfig};
use clap::{Args, ValueEnum};

use crate::svg::{self, Series};
use crate::util;

#[derive(Clone, Copy, ValueEnum)]
pub enum ModelArg {
    Bean,
    Split,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Bean => ModelKind::BeanVsTray,
            ModelArg::Split => ModelKind::SplitVsSeedCoat,
        }
    }
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum)]
    model: ModelArg,
    /// Network architecture JSON; the six-level default when omitted.
    #[arg(long)]
    net_config: Option<PathBuf>,
    /// Epochs, seed and optimizer constants JSON; defaults when omitted.
    #[arg(long)]
    train_config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss and validation AP; an SVG plot is written next to it.
    #[arg(long)]
    history: PathBuf,
    #[arg(long)]
    quiet: bool,
}

pub fn run(a: TrainArgs) -> Result<()> {
    let manifest = util::load_manifest(&a.manifest)?;
    let train = util::load_images(&a.manifest, &manifest, Partition::Train)?;
    let val = if manifest.count(Partition::Val) > 0 {
        util::load_images(&a.manifest, &manifest, Partition::Val)?
    } else {
        Vec::new()
    };
    let net: NetworkConfig = match &a.net_config {
        Some(p) => util::read_json(p)?,
        None => NetworkConfig::default(),
    };
    let tc: TrainConfig = match &a.train_config {
        Some(p) => util::read_json(p)?,
        None => TrainConfig::default(),
    };
    let kind = ModelKind::from(a.model);
    if !a.quiet {
        eprintln!(
            "training {kind:?}: {} train / {} val images, receptive field {}, {} parameters",
            train.len(),
            val.len(),
            segnet::receptive_field(&net),
            net.param_count()
        );
    }
    if val.is_empty() && !a.quiet {
        eprintln!("no val partition; validation AP is computed on the train images");
    }
    let quiet = a.quiet;
    let (weights, history) = segnet::train_model_with_progress(kind, &train, &val, net, &tc, |r| {
        if !quiet {
            eprintln!("epoch {:>3}  loss {:.5}  val AP {:.4}", r.epoch, r.loss, r.val_ap);
        }
    })
    .context("training")?;

    util::write_atomic(&a.out, &segnet::serialize_weights(&weights))?;
    util::write_atomic(&a.history, history.to_csv().as_bytes())?;
    let points = |f: fn(&segnet::EpochRecord) -> f64| -> Vec<(f64, f64)> {
        history.epochs.iter().map(|e| (e.epoch as f64, f(e))).collect()
    };
    let chart = svg::line_chart(
        &format!("{kind:?} training"),
        "epoch",
        "loss / validation AP",
        &[
            Series {
                name: "loss".into(),
                points: points(|e| e.loss),
            },
            Series {
                name: "val AP".into(),
                points: points(|e| e.val_ap),
            },
        ],
    );
    util::write_atomic(&a.history.with_extension("svg"), chart.as_bytes())?;
    if !a.quiet {
        if let Some(iou) = history.final_val_iou {
            eprintln!("final validation IoU at {}: {iou:.4}", tc.threshold);
        }
        eprintln!("weights id {}", segnet::weights_id(&segnet::serialize_weights(&weights)));
    }
    Ok(())
}
