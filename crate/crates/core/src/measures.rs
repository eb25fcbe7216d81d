//! Bean Split Ratio, Bean Split Histogram and the connected-component
//! extraction of split regions they are built on.
//!
//! Image measures count pixels: the BSR is split pixels over bean pixels
//! (split + seed coat), and each split region of `A_j` pixels adds
//! `A_j / A_B` to the histogram bin containing `A_j / M`, where `A_B` is the
//! bean pixel count and `M` the maximum split area. Image areas are
//! projections, so partially visible or merged splits shift mass between
//! bins; the histogram sum is unaffected.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imagecore::{class_counts, LabelMask, PixelClass, Raster};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("mask contains no bean pixels")]
    NoBeanPixels,
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("histograms have {0} and {1} bins")]
    BinCountMismatch(usize, usize),
}

/// Fraction of bean pixels that are split.
pub fn bsr(mask: &LabelMask) -> Result<f64, MeasureError> {
    let counts = class_counts(mask);
    bsr_from_counts(
        counts[PixelClass::Split.index()],
        counts[PixelClass::SeedCoat.index()],
    )
}

pub fn bsr_from_counts(split_px: usize, seed_coat_px: usize) -> Result<f64, MeasureError> {
    let bean = split_px + seed_coat_px;
    if bean == 0 {
        return Err(MeasureError::NoBeanPixels);
    }
    Ok(split_px as f64 / bean as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = MeasureError;

    fn try_from(n: u8) -> Result<Self, MeasureError> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            _ => Err(MeasureError::InvalidParameter("connectivity must be 4 or 8")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_x: usize,
    pub min_y: usize,
    pub max_x: usize,
    pub max_y: usize,
}

/// A maximal connected region of foreground pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitComponent {
    pub area: usize,
    /// `(x, y)` in scan order.
    pub pixels: Vec<(usize, usize)>,
    pub bbox: BoundingBox,
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        Self { parent: Vec::new() }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        // the smaller label stays root
        if ra < rb {
            self.parent[rb as usize] = ra;
        } else if rb < ra {
            self.parent[ra as usize] = rb;
        }
    }
}

/// Two-pass sequential labeling. Components are ordered by their first pixel
/// in scan order.
pub fn connected_components(binary: &Raster<bool>, connectivity: Connectivity) -> Vec<SplitComponent> {
    let (w, h) = binary.dims();
    const NONE: u32 = u32::MAX;
    let mut labels = vec![NONE; w * h];
    let mut sets = DisjointSet::new();

    for y in 0..h {
        for x in 0..w {
            if !*binary.get(x, y) {
                continue;
            }
            let mut neighbors = [NONE; 4];
            if x > 0 {
                neighbors[0] = labels[y * w + x - 1];
            }
            if y > 0 {
                neighbors[1] = labels[(y - 1) * w + x];
                if connectivity == Connectivity::Eight {
                    if x > 0 {
                        neighbors[2] = labels[(y - 1) * w + x - 1];
                    }
                    if x + 1 < w {
                        neighbors[3] = labels[(y - 1) * w + x + 1];
                    }
                }
            }
            let mut label = NONE;
            for &n in neighbors.iter().filter(|&&n| n != NONE) {
                if label == NONE {
                    label = n;
                } else {
                    sets.union(label, n);
                }
            }
            if label == NONE {
                label = sets.make();
            }
            labels[y * w + x] = label;
        }
    }

    let mut root_to_component: Vec<u32> = vec![NONE; sets.parent.len()];
    let mut components: Vec<SplitComponent> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            if l == NONE {
                continue;
            }
            let root = sets.find(l) as usize;
            if root_to_component[root] == NONE {
                root_to_component[root] = components.len() as u32;
                components.push(SplitComponent {
                    area: 0,
                    pixels: Vec::new(),
                    bbox: BoundingBox {
                        min_x: x,
                        min_y: y,
                        max_x: x,
                        max_y: y,
                    },
                });
            }
            let c = &mut components[root_to_component[root] as usize];
            c.area += 1;
            c.pixels.push((x, y));
            c.bbox.min_x = c.bbox.min_x.min(x);
            c.bbox.max_x = c.bbox.max_x.max(x);
            c.bbox.max_y = y;
        }
    }
    components
}

pub fn split_indicator(mask: &LabelMask) -> Raster<bool> {
    mask.map(|&c| c == PixelClass::Split)
}

pub fn bean_indicator(mask: &LabelMask) -> Raster<bool> {
    mask.map(|&c| c.is_bean())
}

/// Largest connected bean region over a set of masks; with non-touching
/// beans this is the largest single bean, a natural choice for `M`.
pub fn estimate_max_split_area<'a>(
    masks: impl IntoIterator<Item = &'a LabelMask>,
    connectivity: Connectivity,
) -> Option<u64> {
    masks
        .into_iter()
        .flat_map(|m| connected_components(&bean_indicator(m), connectivity))
        .map(|c| c.area as u64)
        .max()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BshHistogram {
    pub bins: Vec<f64>,
    pub max_split_area: u64,
    pub bean_area: u64,
}

impl BshHistogram {
    pub fn bin_count(&self) -> usize {
        self.bins.len()
    }

    pub fn total(&self) -> f64 {
        self.bins.iter().sum()
    }
}

/// Zero-based bin of a split of `area` pixels; areas of `M` or more land in
/// the top bin.
pub fn bsh_bin(area: u64, max_split_area: u64, bins: usize) -> usize {
    let i = (area as u128 * bins as u128 / max_split_area as u128) as usize;
    i.min(bins - 1)
}

pub fn bsh(
    areas: &[u64],
    bean_area: u64,
    max_split_area: u64,
    bins: usize,
) -> Result<BshHistogram, MeasureError> {
    if bean_area == 0 {
        return Err(MeasureError::InvalidParameter("bean area must be positive"));
    }
    if max_split_area == 0 {
        return Err(MeasureError::InvalidParameter("max split area must be positive"));
    }
    if bins == 0 {
        return Err(MeasureError::InvalidParameter("bin count must be positive"));
    }
    let mut hist = vec![0.0; bins];
    for &a in areas {
        hist[bsh_bin(a, max_split_area, bins)] += a as f64 / bean_area as f64;
    }
    Ok(BshHistogram {
        bins: hist,
        max_split_area,
        bean_area,
    })
}

/// 1-D earth mover's distance on raw bin masses: the L1 distance between
/// running cumulative sums. Unequal totals are charged in the last term.
pub fn emd_1d(a: &BshHistogram, b: &BshHistogram) -> Result<f64, MeasureError> {
    emd_1d_bins(&a.bins, &b.bins)
}

pub fn emd_1d_bins(a: &[f64], b: &[f64]) -> Result<f64, MeasureError> {
    if a.len() != b.len() {
        return Err(MeasureError::BinCountMismatch(a.len(), b.len()));
    }
    let mut ca = 0.0;
    let mut cb = 0.0;
    let mut d = 0.0;
    for (x, y) in a.iter().zip(b) {
        ca += x;
        cb += y;
        d += (ca - cb).abs();
    }
    Ok(d)
}
