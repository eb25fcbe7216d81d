//! Study manifest, dihedral augmentation and padding.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imagecore::{self, ImageError, LabelMask, PixelClass, Raster, RgbImage};

/// The five retort durations of the study design, in minutes.
pub const RETORT_LEVELS: [u32; 5] = [10, 15, 20, 30, 45];

pub const MANIFEST_COLUMNS: [&str; 7] = [
    "image_path",
    "label_path",
    "genotype",
    "retort_min",
    "replicate",
    "partition",
    "intactness",
];

/// Prefix of optional per-rater intactness columns, e.g. `rater_anna`.
pub const RATER_PREFIX: &str = "rater_";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("manifest is missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: retort time {value} is not one of 10, 15, 20, 30, 45")]
    InvalidRetortTime { row: usize, value: String },
    #[error("row {row}: {partition} rows need a label_path")]
    MissingLabel { row: usize, partition: Partition },
    #[error("row {row}: duplicate image path {path}")]
    DuplicateImage { row: usize, path: String },
    #[error("row {row}: invalid {column} value `{value}`")]
    InvalidField {
        row: usize,
        column: &'static str,
        value: String,
    },
    #[error("malformed manifest: {0}")]
    Csv(String),
    #[error("image and mask dimensions differ: {image:?} vs {mask:?}")]
    DimensionMismatch {
        image: (usize, usize),
        mask: (usize, usize),
    },
    #[error("no {0} records in manifest")]
    EmptyPartition(Partition),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: ImageError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Score,
}

impl Partition {
    pub fn requires_label(self) -> bool {
        matches!(self, Partition::Train | Partition::Val)
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Score => "score",
        })
    }
}

impl FromStr for Partition {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "train" => Ok(Partition::Train),
            "val" => Ok(Partition::Val),
            "score" => Ok(Partition::Score),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub image_path: PathBuf,
    pub label_path: Option<PathBuf>,
    pub genotype: String,
    pub retort_min: u32,
    pub replicate: u32,
    pub partition: Partition,
    pub intactness: Option<f64>,
    /// One entry per manifest rater column, in column order.
    pub rater_scores: Vec<Option<f64>>,
}

impl SampleRecord {
    /// File name of the image, used to join per-image outputs back to the manifest.
    pub fn image_id(&self) -> String {
        image_id(&self.image_path)
    }
}

pub fn image_id(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string_lossy().into_owned())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<SampleRecord>,
    pub rater_names: Vec<String>,
}

impl DatasetManifest {
    pub fn count(&self, partition: Partition) -> usize {
        self.partition(partition).count()
    }

    pub fn partition(&self, partition: Partition) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.partition == partition)
    }

    pub fn find_by_id(&self, id: &str) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.image_id() == id)
    }
}

fn parse_score(row: usize, column: &'static str, value: &str) -> Result<Option<f64>, DatasetError> {
    if value.is_empty() {
        return Ok(None);
    }
    match value.parse::<f64>() {
        Ok(v) if (1.0..=5.0).contains(&v) => Ok(Some(v)),
        _ => Err(DatasetError::InvalidField {
            row,
            column,
            value: value.to_string(),
        }),
    }
}

/// Parses and validates a manifest CSV. Row numbers in errors are 1-based
/// data rows (the header is row 0).
pub fn load_manifest(text: &str) -> Result<DatasetManifest, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| DatasetError::Csv(e.to_string()))?
        .clone();

    let mut columns = [0usize; 7];
    for (slot, name) in columns.iter_mut().zip(MANIFEST_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))?;
    }
    let raters: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            h.strip_prefix(RATER_PREFIX)
                .map(|name| (i, name.to_string()))
        })
        .collect();

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| DatasetError::Csv(e.to_string()))?;
        let field = |k: usize| row.get(columns[k]).unwrap_or("");

        let image_path = field(0);
        if image_path.is_empty() {
            return Err(DatasetError::InvalidField {
                row: row_no,
                column: "image_path",
                value: String::new(),
            });
        }
        if !seen.insert(image_path.to_string()) {
            return Err(DatasetError::DuplicateImage {
                row: row_no,
                path: image_path.to_string(),
            });
        }

        let genotype = field(2);
        if genotype.is_empty() {
            return Err(DatasetError::InvalidField {
                row: row_no,
                column: "genotype",
                value: String::new(),
            });
        }

        let retort_raw = field(3);
        let retort_min = retort_raw
            .parse::<u32>()
            .ok()
            .filter(|v| RETORT_LEVELS.contains(v))
            .ok_or_else(|| DatasetError::InvalidRetortTime {
                row: row_no,
                value: retort_raw.to_string(),
            })?;

        let replicate = field(4)
            .parse::<u32>()
            .ok()
            .filter(|r| (1..=2).contains(r))
            .ok_or_else(|| DatasetError::InvalidField {
                row: row_no,
                column: "replicate",
                value: field(4).to_string(),
            })?;

        let partition: Partition = field(5).parse().map_err(|_| DatasetError::InvalidField {
            row: row_no,
            column: "partition",
            value: field(5).to_string(),
        })?;

        let label_path = Some(field(1)).filter(|s| !s.is_empty()).map(PathBuf::from);
        if partition.requires_label() && label_path.is_none() {
            return Err(DatasetError::MissingLabel {
                row: row_no,
                partition,
            });
        }

        let intactness = parse_score(row_no, "intactness", field(6))?;
        let rater_scores = raters
            .iter()
            .map(|(col, _)| parse_score(row_no, "rater score", row.get(*col).unwrap_or("")))
            .collect::<Result<Vec<_>, _>>()?;

        records.push(SampleRecord {
            image_path: PathBuf::from(image_path),
            label_path,
            genotype: genotype.to_string(),
            retort_min,
            replicate,
            partition,
            intactness,
            rater_scores,
        });
    }

    Ok(DatasetManifest {
        records,
        rater_names: raters.into_iter().map(|(_, n)| n).collect(),
    })
}

/// An image with its ground-truth mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub id: String,
    pub image: RgbImage,
    pub mask: LabelMask,
}

impl LabeledImage {
    pub fn new(id: impl Into<String>, image: RgbImage, mask: LabelMask) -> Result<Self, DatasetError> {
        if !image.same_dims(&mask) {
            return Err(DatasetError::DimensionMismatch {
                image: image.dims(),
                mask: mask.dims(),
            });
        }
        Ok(Self {
            id: id.into(),
            image,
            mask,
        })
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, DatasetError> {
    std::fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_rgb(path: &Path) -> Result<RgbImage, DatasetError> {
    imagecore::decode_rgb(&read_file(path)?).map_err(|source| DatasetError::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_mask(path: &Path) -> Result<LabelMask, DatasetError> {
    imagecore::decode_mask(&read_file(path)?).map_err(|source| DatasetError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads the labeled images of one partition; relative paths resolve against `base_dir`.
pub fn load_partition(
    manifest: &DatasetManifest,
    base_dir: &Path,
    partition: Partition,
) -> Result<Vec<LabeledImage>, DatasetError> {
    manifest
        .partition(partition)
        .filter(|r| r.label_path.is_some())
        .map(|r| {
            let image = read_rgb(&base_dir.join(&r.image_path))?;
            let label = r.label_path.as_ref().expect("filtered");
            let mask = read_mask(&base_dir.join(label))?;
            LabeledImage::new(r.image_id(), image, mask)
        })
        .collect()
}

/// Applies dihedral element `k` (0..8): `k % 4` clockwise quarter turns,
/// followed by a horizontal flip when `k >= 4`. Element 0 is the identity.
pub fn dihedral<T: Clone>(raster: &Raster<T>, k: usize) -> Raster<T> {
    assert!(k < 8, "dihedral element out of range");
    let mut out = raster.clone();
    for _ in 0..k % 4 {
        let h = out.height();
        out = Raster::from_fn(out.height(), out.width(), |x, y| out.get(y, h - 1 - x).clone());
    }
    if k >= 4 {
        let w = out.width();
        out = Raster::from_fn(w, out.height(), |x, y| out.get(w - 1 - x, y).clone());
    }
    out
}

/// The 8 dihedral transforms applied identically to image and mask.
pub fn dihedral_variants(
    image: &RgbImage,
    mask: &LabelMask,
) -> Result<Vec<(RgbImage, LabelMask)>, DatasetError> {
    if !image.same_dims(mask) {
        return Err(DatasetError::DimensionMismatch {
            image: image.dims(),
            mask: mask.dims(),
        });
    }
    Ok((0..8)
        .map(|k| (dihedral(image, k), dihedral(mask, k)))
        .collect())
}

#[derive(Debug, Clone, Copy)]
pub enum PadFill<T> {
    /// Copy the nearest original pixel.
    Replicate,
    Constant(T),
}

/// A padded raster plus what is needed to crop it back.
#[derive(Debug, Clone, PartialEq)]
pub struct Padded<T> {
    pub raster: Raster<T>,
    pub top: usize,
    pub left: usize,
    pub original_width: usize,
    pub original_height: usize,
}

impl<T: Clone> Padded<T> {
    pub fn crop_back(&self) -> Raster<T> {
        self.raster
            .crop(self.left, self.top, self.original_width, self.original_height)
    }
}

fn round_up(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}

/// Grows both dimensions to the next multiple of `m`, centering the original.
pub fn pad_to_multiple<T: Clone>(raster: &Raster<T>, m: usize, fill: PadFill<T>) -> Padded<T> {
    assert!(m >= 1, "padding multiple must be positive");
    let (w, h) = raster.dims();
    let (pw, ph) = (round_up(w, m), round_up(h, m));
    let left = (pw - w) / 2;
    let top = (ph - h) / 2;
    let padded = Raster::from_fn(pw, ph, |x, y| {
        let inside = x >= left && x < left + w && y >= top && y < top + h;
        if inside {
            return raster.get(x - left, y - top).clone();
        }
        match &fill {
            PadFill::Constant(v) => v.clone(),
            PadFill::Replicate => {
                let sx = x.saturating_sub(left).min(w - 1);
                let sy = y.saturating_sub(top).min(h - 1);
                raster.get(sx, sy).clone()
            }
        }
    });
    Padded {
        raster: padded,
        top,
        left,
        original_width: w,
        original_height: h,
    }
}

pub fn pad_image(image: &RgbImage, m: usize) -> Padded<[u8; 3]> {
    pad_to_multiple(image, m, PadFill::Replicate)
}

pub fn pad_mask(mask: &LabelMask, m: usize) -> Padded<PixelClass> {
    pad_to_multiple(mask, m, PadFill::Constant(PixelClass::Tray))
}
