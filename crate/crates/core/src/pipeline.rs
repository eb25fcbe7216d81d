//! End-to-end image analysis: bean/tray and split/seed-coat models →
//! 3-class mask → BSR, split components and BSH. Also the evaluation
//! compositions behind the comparison table.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::LabeledImage;
use crate::eval::{self, MetricsReport, ScoredImage, ZeroTruthPolicy};
use crate::imagecore::{class_counts, LabelMask, PixelClass, Raster, RgbImage};
use crate::measures::{self, BshHistogram, Connectivity, MeasureError};
use crate::segnet::{self, ModelKind, NetError, NetworkWeights, Tensor};
use crate::Error;

fn default_threshold() -> f64 {
    0.5
}
fn default_bins() -> usize {
    10
}
fn default_connectivity() -> u8 {
    8
}

/// On-disk pipeline configuration. Weight paths resolve against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub bean_weights: PathBuf,
    pub split_weights: PathBuf,
    #[serde(default = "default_threshold")]
    pub bean_threshold: f64,
    #[serde(default = "default_threshold")]
    pub split_threshold: f64,
    /// Maximum split area `M`, pixels.
    pub max_split_area: u64,
    /// Histogram bin count `N`.
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_connectivity")]
    pub connectivity: u8,
}

/// Measurement parameters shared by predicted and ground-truth masks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureParams {
    pub max_split_area: u64,
    pub bins: usize,
    pub connectivity: Connectivity,
}

impl Default for MeasureParams {
    fn default() -> Self {
        Self {
            max_split_area: 1,
            bins: 10,
            connectivity: Connectivity::Eight,
        }
    }
}

/// Everything measured on a single 3-class mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskMeasures {
    pub bsr: f64,
    pub bsh: BshHistogram,
    pub n_splits: usize,
    pub split_px: usize,
    pub seed_coat_px: usize,
}

impl MaskMeasures {
    pub fn bean_px(&self) -> usize {
        self.split_px + self.seed_coat_px
    }
}

pub fn measure_mask(mask: &LabelMask, params: &MeasureParams) -> Result<MaskMeasures, MeasureError> {
    let counts = class_counts(mask);
    let split_px = counts[PixelClass::Split.index()];
    let seed_coat_px = counts[PixelClass::SeedCoat.index()];
    let bsr = measures::bsr_from_counts(split_px, seed_coat_px)?;
    let components = measures::connected_components(&measures::split_indicator(mask), params.connectivity);
    let areas: Vec<u64> = components.iter().map(|c| c.area as u64).collect();
    let bsh = measures::bsh(
        &areas,
        (split_px + seed_coat_px) as u64,
        params.max_split_area,
        params.bins,
    )?;
    Ok(MaskMeasures {
        bsr,
        bsh,
        n_splits: components.len(),
        split_px,
        seed_coat_px,
    })
}

/// A configuration with both models loaded and validated.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub bean: NetworkWeights,
    pub split: NetworkWeights,
    pub bean_threshold: f64,
    pub split_threshold: f64,
    pub params: MeasureParams,
    pub bean_weights_id: String,
    pub split_weights_id: String,
}

impl Pipeline {
    pub fn new(
        bean: NetworkWeights,
        split: NetworkWeights,
        bean_threshold: f64,
        split_threshold: f64,
        params: MeasureParams,
    ) -> Result<Self, Error> {
        for (name, t) in [("bean", bean_threshold), ("split", split_threshold)] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("{name} threshold {t} outside [0, 1]")));
            }
        }
        if bean.model_kind != ModelKind::BeanVsTray {
            return Err(Error::Config("bean weights are not a bean-vs-tray model".into()));
        }
        if split.model_kind != ModelKind::SplitVsSeedCoat {
            return Err(Error::Config("split weights are not a split-vs-seed-coat model".into()));
        }
        if params.max_split_area == 0 || params.bins == 0 {
            return Err(Error::Config("max_split_area and bins must be positive".into()));
        }
        bean.check()?;
        split.check()?;
        let bean_weights_id = segnet::weights_id(&segnet::serialize_weights(&bean));
        let split_weights_id = segnet::weights_id(&segnet::serialize_weights(&split));
        Ok(Self {
            bean,
            split,
            bean_threshold,
            split_threshold,
            params,
            bean_weights_id,
            split_weights_id,
        })
    }

    pub fn load(config: &PipelineConfig, base_dir: &Path) -> Result<Self, Error> {
        let read = |p: &Path| -> Result<NetworkWeights, Error> {
            let path = base_dir.join(p);
            let bytes = std::fs::read(&path).map_err(|e| Error::Io(path.clone(), e))?;
            Ok(segnet::deserialize_weights(&bytes)?)
        };
        let params = MeasureParams {
            max_split_area: config.max_split_area,
            bins: config.bins,
            connectivity: Connectivity::try_from(config.connectivity)?,
        };
        Self::new(
            read(&config.bean_weights)?,
            read(&config.split_weights)?,
            config.bean_threshold,
            config.split_threshold,
            params,
        )
    }

    pub fn weights_id(&self) -> String {
        format!("{}+{}", self.bean_weights_id, self.split_weights_id)
    }

    /// Hash of thresholds, measurement parameters and both weight ids.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::json!({
            "bean_threshold": self.bean_threshold,
            "split_threshold": self.split_threshold,
            "max_split_area": self.params.max_split_area,
            "bins": self.params.bins,
            "connectivity": u8::from(self.params.connectivity),
            "bean_weights": self.bean_weights_id,
            "split_weights": self.split_weights_id,
        });
        let digest = Sha256::digest(canonical.to_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Model outputs for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub bean_prob: Raster<f64>,
    pub split_prob: Raster<f64>,
    pub mask: LabelMask,
}

impl Segmentation {
    /// Tray / seed coat / split probabilities per pixel.
    pub fn class_probabilities(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.mask.len() * 3);
        for (&b, &s) in self.bean_prob.data().iter().zip(self.split_prob.data()) {
            data.extend_from_slice(&[1.0 - b, b * (1.0 - s), b * s]);
        }
        Tensor::from_data(self.mask.height(), self.mask.width(), 3, data).expect("sized")
    }
}

fn positive_channel(probs: &Tensor) -> Raster<f64> {
    Raster::new(probs.width, probs.height, probs.channel(1)).expect("network output is non-empty")
}

pub fn split_probabilities(weights: &NetworkWeights, image: &RgbImage) -> Result<Raster<f64>, NetError> {
    Ok(positive_channel(&segnet::predict_probabilities(weights, image)?))
}

/// Bean pixels at the bean threshold, then split pixels among them at the
/// split threshold.
pub fn segment(pipeline: &Pipeline, image: &RgbImage) -> Result<Segmentation, NetError> {
    let bean_prob = positive_channel(&segnet::predict_probabilities(&pipeline.bean, image)?);
    let split_prob = positive_channel(&segnet::predict_probabilities(&pipeline.split, image)?);
    let mask = Raster::new(
        image.width(),
        image.height(),
        bean_prob
            .data()
            .iter()
            .zip(split_prob.data())
            .map(|(&b, &s)| {
                if b < pipeline.bean_threshold {
                    PixelClass::Tray
                } else if s >= pipeline.split_threshold {
                    PixelClass::Split
                } else {
                    PixelClass::SeedCoat
                }
            })
            .collect(),
    )
    .expect("same dims as image");
    Ok(Segmentation {
        bean_prob,
        split_prob,
        mask,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeasures {
    pub image: String,
    pub bsr: f64,
    pub bsh: Vec<f64>,
    pub n_splits: usize,
    pub split_px: usize,
    pub seed_coat_px: usize,
    pub bean_px: usize,
    pub max_split_area: u64,
    pub bins: usize,
    pub bean_threshold: f64,
    pub split_threshold: f64,
    pub weights_id: String,
    pub config_hash: String,
}

/// The per-image measures JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuresJson {
    pub bsr: f64,
    pub bsh: Vec<f64>,
    pub n_splits: usize,
    pub split_px: usize,
    pub bean_px: usize,
    #[serde(rename = "M")]
    pub max_split_area: u64,
    #[serde(rename = "N")]
    pub bins: usize,
    pub threshold: f64,
    pub weights_id: String,
    pub config_hash: String,
}

impl SampleMeasures {
    pub fn to_json(&self) -> MeasuresJson {
        MeasuresJson {
            bsr: self.bsr,
            bsh: self.bsh.clone(),
            n_splits: self.n_splits,
            split_px: self.split_px,
            bean_px: self.bean_px,
            max_split_area: self.max_split_area,
            bins: self.bins,
            threshold: self.split_threshold,
            weights_id: self.weights_id.clone(),
            config_hash: self.config_hash.clone(),
        }
    }

    pub fn csv_header(bins: usize) -> String {
        let mut h = String::from("image,bsr");
        for i in 1..=bins {
            h.push_str(&format!(",bsh_{i}"));
        }
        h.push_str(",n_splits,split_px,bean_px");
        h
    }

    pub fn csv_row(&self) -> String {
        let mut row = format!("{},{}", self.image, self.bsr);
        for b in &self.bsh {
            row.push_str(&format!(",{b}"));
        }
        row.push_str(&format!(",{},{},{}", self.n_splits, self.split_px, self.bean_px));
        row
    }
}

/// Provenance comment written as the first line of CSV reports.
pub fn provenance_line(pipeline: &Pipeline) -> String {
    format!(
        "# config_hash={} weights_id={} bean_threshold={} split_threshold={} M={} N={} connectivity={}",
        pipeline.config_hash(),
        pipeline.weights_id(),
        pipeline.bean_threshold,
        pipeline.split_threshold,
        pipeline.params.max_split_area,
        pipeline.params.bins,
        u8::from(pipeline.params.connectivity),
    )
}

/// One row of a measures CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuresRow {
    pub image: String,
    pub bsr: f64,
    pub bsh: Vec<f64>,
    pub n_splits: usize,
    pub split_px: usize,
    pub bean_px: usize,
}

/// Reads `image,bsr,bsh_1..bsh_N,n_splits,split_px,bean_px`; `#` lines are
/// comments.
pub fn parse_measures_csv(text: &str) -> Result<Vec<MeasuresRow>, Error> {
    let bad = |msg: String| Error::Config(format!("measures CSV: {msg}"));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let bins = names.len().saturating_sub(5);
    if bins == 0 || SampleMeasures::csv_header(bins) != names.join(",") {
        return Err(bad(format!("unexpected header `{}`", names.join(","))));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let num = |k: usize| -> Result<f64, Error> {
            record[k]
                .parse::<f64>()
                .map_err(|_| bad(format!("row {}: `{}` is not a number", i + 1, &record[k])))
        };
        let count = |k: usize| -> Result<usize, Error> {
            record[k]
                .parse::<usize>()
                .map_err(|_| bad(format!("row {}: `{}` is not a count", i + 1, &record[k])))
        };
        rows.push(MeasuresRow {
            image: record[0].to_string(),
            bsr: num(1)?,
            bsh: (0..bins).map(|b| num(2 + b)).collect::<Result<_, _>>()?,
            n_splits: count(2 + bins)?,
            split_px: count(3 + bins)?,
            bean_px: count(4 + bins)?,
        });
    }
    Ok(rows)
}

pub fn measures_for_segmentation(
    pipeline: &Pipeline,
    image_id: &str,
    seg: &Segmentation,
) -> Result<SampleMeasures, MeasureError> {
    let m = measure_mask(&seg.mask, &pipeline.params)?;
    Ok(SampleMeasures {
        image: image_id.to_string(),
        bsr: m.bsr,
        bean_px: m.bean_px(),
        bsh: m.bsh.bins,
        n_splits: m.n_splits,
        split_px: m.split_px,
        seed_coat_px: m.seed_coat_px,
        max_split_area: pipeline.params.max_split_area,
        bins: pipeline.params.bins,
        bean_threshold: pipeline.bean_threshold,
        split_threshold: pipeline.split_threshold,
        weights_id: pipeline.weights_id(),
        config_hash: pipeline.config_hash(),
    })
}

pub fn analyze_image(pipeline: &Pipeline, image_id: &str, image: &RgbImage) -> Result<SampleMeasures, Error> {
    let seg = segment(pipeline, image)?;
    Ok(measures_for_segmentation(pipeline, image_id, &seg)?)
}

/// Split-model probabilities for calibration against labeled images.
pub fn score_images(split: &NetworkWeights, images: &[LabeledImage]) -> Result<Vec<ScoredImage>, NetError> {
    images
        .iter()
        .map(|s| {
            Ok(ScoredImage {
                split_prob: split_probabilities(split, &s.image)?,
                truth: s.mask.clone(),
            })
        })
        .collect()
}

/// Accumulates per-image results into a comparison-table row.
struct MetricsAccumulator {
    scores: Vec<f64>,
    labels: Vec<bool>,
    pred_split: Vec<bool>,
    pred_bsr: Vec<f64>,
    true_bsr: Vec<f64>,
    bsh_errors: Vec<f64>,
}

impl MetricsAccumulator {
    fn new() -> Self {
        Self {
            scores: Vec::new(),
            labels: Vec::new(),
            pred_split: Vec::new(),
            pred_bsr: Vec::new(),
            true_bsr: Vec::new(),
            bsh_errors: Vec::new(),
        }
    }

    /// `scores` are per-pixel split scores; only truth bean pixels count for
    /// AP and IoU. `predicted` is the full predicted 3-class mask.
    fn add(
        &mut self,
        truth: &LabelMask,
        scores: &[f64],
        predicted: &LabelMask,
        params: &MeasureParams,
    ) -> Result<(), Error> {
        for ((&c, &s), &p) in truth.data().iter().zip(scores).zip(predicted.data()) {
            if c == PixelClass::Tray {
                continue;
            }
            self.scores.push(s);
            self.labels.push(c == PixelClass::Split);
            self.pred_split.push(p == PixelClass::Split);
        }
        let t = measure_mask(truth, params)?;
        let p = match measure_mask(predicted, params) {
            Ok(m) => m,
            Err(MeasureError::NoBeanPixels) => MaskMeasures {
                bsr: 0.0,
                bsh: measures::bsh(&[], 1, params.max_split_area, params.bins)?,
                n_splits: 0,
                split_px: 0,
                seed_coat_px: 0,
            },
            Err(e) => return Err(e.into()),
        };
        self.pred_bsr.push(p.bsr);
        self.true_bsr.push(t.bsr);
        self.bsh_errors.push(measures::emd_1d(&p.bsh, &t.bsh)?);
        Ok(())
    }

    fn finish(self, method: &str) -> Result<MetricsReport, Error> {
        let n = self.bsh_errors.len().max(1) as f64;
        Ok(MetricsReport {
            method: method.to_string(),
            ap: eval::average_precision(&self.scores, &self.labels)?,
            iou: eval::iou(&self.pred_split, &self.labels)?,
            bsr_error_pct: eval::bsr_percent_error_with(
                &self.pred_bsr,
                &self.true_bsr,
                ZeroTruthPolicy::Exclude,
            )?,
            bsh_error: self.bsh_errors.iter().sum::<f64>() / n,
        })
    }
}

/// Runs the full pipeline on labeled images. AP ranks split-model
/// probabilities on true bean pixels; IoU, BSR error and BSH error use the
/// thresholded masks. Images with zero true BSR are left out of the BSR error.
pub fn evaluate_pipeline(pipeline: &Pipeline, images: &[LabeledImage]) -> Result<MetricsReport, Error> {
    let mut acc = MetricsAccumulator::new();
    for s in images {
        let seg = segment(pipeline, &s.image)?;
        acc.add(&s.mask, seg.split_prob.data(), &seg.mask, &pipeline.params)?;
    }
    acc.finish("pyramid")
}

/// Pixel-wise LDA on HSV over true bean pixels; split when the score is
/// positive. Tray pixels are taken from ground truth.
pub fn fit_lda_baseline(train: &[LabeledImage]) -> Result<eval::LdaModel, Error> {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for s in train {
        for (&px, &c) in s.image.data().iter().zip(s.mask.data()) {
            if c.is_bean() {
                features.push(eval::hsv_feature(px));
                labels.push(c == PixelClass::Split);
            }
        }
    }
    Ok(eval::lda_fit(&features, &labels)?)
}

pub fn evaluate_lda(
    model: &eval::LdaModel,
    images: &[LabeledImage],
    params: &MeasureParams,
) -> Result<MetricsReport, Error> {
    let mut acc = MetricsAccumulator::new();
    for s in images {
        let scores: Vec<f64> = s
            .image
            .data()
            .iter()
            .map(|&px| eval::lda_score(model, &eval::hsv_feature(px)))
            .collect();
        let predicted = Raster::new(
            s.mask.width(),
            s.mask.height(),
            s.mask
                .data()
                .iter()
                .zip(&scores)
                .map(|(&c, &score)| match c {
                    PixelClass::Tray => PixelClass::Tray,
                    _ if score >= 0.0 => PixelClass::Split,
                    _ => PixelClass::SeedCoat,
                })
                .collect(),
        )
        .expect("same dims");
        acc.add(&s.mask, &scores, &predicted, params)?;
    }
    acc.finish("lda")
}
