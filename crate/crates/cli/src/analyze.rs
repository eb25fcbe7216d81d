use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use beansplit::dataset;
use beansplit::imagecore;
use beansplit::measures::MeasureError;
use beansplit::pipeline::{self, Pipeline, SampleMeasures};
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use crate::svg;
use crate::util::{self, usage};

#[derive(Args)]
pub struct SegmentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// 3-class label mask (PGM).
    #[arg(long)]
    out_mask: PathBuf,
    /// Raw f32 little-endian class probabilities; `<path>.json` describes the shape.
    #[arg(long)]
    out_scores: Option<PathBuf>,
    /// Measures JSON for the image.
    #[arg(long)]
    measures: Option<PathBuf>,
}

#[derive(Serialize)]
struct ScoreShape<'a> {
    width: usize,
    height: usize,
    channels: usize,
    classes: [&'a str; 3],
    config_hash: String,
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn write_measures_json(path: &Path, m: &SampleMeasures) -> Result<()> {
    util::write_atomic(path, serde_json::to_string_pretty(&m.to_json())?.as_bytes())?;
    let labels: Vec<String> = (1..=m.bsh.len()).map(|i| i.to_string()).collect();
    let chart = svg::bar_chart(&format!("BSH {}", m.image), "bin", "split area fraction", &labels, &m.bsh);
    util::write_atomic(&path.with_extension("svg"), chart.as_bytes())
}

pub fn segment(a: SegmentArgs) -> Result<()> {
    let p = util::load_pipeline(&a.config)?;
    let image = dataset::read_rgb(&a.image)?;
    let seg = pipeline::segment(&p, &image)?;
    util::write_atomic(&a.out_mask, &imagecore::encode_mask(&seg.mask))?;
    if let Some(path) = &a.out_scores {
        let probs = seg.class_probabilities();
        let bytes: Vec<u8> = probs.data.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
        util::write_atomic(path, &bytes)?;
        let shape = ScoreShape {
            width: probs.width,
            height: probs.height,
            channels: probs.channels,
            classes: ["tray", "seed_coat", "split"],
            config_hash: p.config_hash(),
        };
        util::write_atomic(&sidecar(path), serde_json::to_string_pretty(&shape)?.as_bytes())?;
    }
    let id = dataset::image_id(&a.image);
    match pipeline::measures_for_segmentation(&p, &id, &seg) {
        Ok(m) => {
            if let Some(path) = &a.measures {
                write_measures_json(path, &m)?;
            }
            println!("{id}: BSR {:.5}, {} splits", m.bsr, m.n_splits);
        }
        Err(MeasureError::NoBeanPixels) if a.measures.is_none() => {
            println!("{id}: no bean pixels");
        }
        Err(e) => return Err(anyhow::Error::from(e).context(id)),
    }
    Ok(())
}

#[derive(Args)]
pub struct MeasureArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory of `.ppm` images, processed in file-name order.
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write one measures JSON (and BSH plot) per image here.
    #[arg(long)]
    per_image: Option<PathBuf>,
    /// Leave out images without predicted bean pixels instead of failing.
    #[arg(long)]
    skip_empty: bool,
    /// Worker threads; all cores by default.
    #[arg(long)]
    jobs: Option<usize>,
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")))
        .collect();
    paths.sort();
    Ok(paths)
}

fn measure_one(p: &Pipeline, path: &Path, per_image: Option<&Path>, skip_empty: bool) -> Result<Option<SampleMeasures>> {
    let id = dataset::image_id(path);
    let image = dataset::read_rgb(path)?;
    let seg = pipeline::segment(p, &image).with_context(|| id.clone())?;
    let m = match pipeline::measures_for_segmentation(p, &id, &seg) {
        Ok(m) => m,
        Err(MeasureError::NoBeanPixels) if skip_empty => {
            eprintln!("warning: {id}: no bean pixels, skipped");
            return Ok(None);
        }
        Err(e) => return Err(anyhow::Error::from(e).context(id)),
    };
    if let Some(dir) = per_image {
        write_measures_json(&dir.join(format!("{}.json", path.file_stem().unwrap_or_default().to_string_lossy())), &m)?;
    }
    Ok(Some(m))
}

pub fn measure(a: MeasureArgs) -> Result<()> {
    if a.jobs == Some(0) {
        return Err(usage("--jobs must be positive"));
    }
    let p = util::load_pipeline(&a.config)?;
    let paths = list_images(&a.images)?;
    if paths.is_empty() {
        anyhow::bail!("no .ppm images in {}", a.images.display());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.unwrap_or(0))
        .build()?;
    let per_image = a.per_image.as_deref();
    let results: Vec<Result<Option<SampleMeasures>>> = pool.install(|| {
        paths
            .par_iter()
            .map(|path| measure_one(&p, path, per_image, a.skip_empty))
            .collect()
    });
    let mut text = format!(
        "{}\n{}\n",
        pipeline::provenance_line(&p),
        SampleMeasures::csv_header(p.params.bins)
    );
    let mut n = 0;
    for r in results {
        if let Some(m) = r? {
            text.push_str(&m.csv_row());
            text.push('\n');
            n += 1;
        }
    }
    util::write_atomic(&a.out, text.as_bytes())?;
    eprintln!("measured {n} of {} images", paths.len());
    Ok(())
}
