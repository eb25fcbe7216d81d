//! Raster containers, binary PPM/PGM codec and RGB→HSV conversion.
//!
//! Everything downstream works on [`Raster`]s: row-major, top-left origin,
//! `width * height` elements, never empty. RGB inputs are `Raster<[u8; 3]>`
//! and ground-truth masks are `Raster<PixelClass>`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ImageError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("unknown class code {value} at byte offset {offset}")]
    UnknownClassCode { value: u8, offset: usize },
    #[error("invalid raster dimensions {width}x{height} for {len} elements")]
    InvalidDimensions { width: usize, height: usize, len: usize },
    #[error("expected a {expected} file")]
    WrongKind { expected: &'static str },
}

/// A non-empty row-major grid.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T> Raster<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || width.checked_mul(height) != Some(data.len()) {
            return Err(ImageError::InvalidDimensions {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds a raster by evaluating `f(x, y)` at every position.
    ///
    /// Panics if either dimension is zero.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(width > 0 && height > 0, "raster dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// Always false; rasters have at least one pixel.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[self.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        let i = self.index(x, y);
        self.data[i] = value;
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_dims<U>(&self, other: &Raster<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

impl<T: Clone> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self::from_fn(width, height, |_, _| value.clone())
    }

    /// Copies the `width × height` window whose top-left corner is `(left, top)`.
    pub fn crop(&self, left: usize, top: usize, width: usize, height: usize) -> Self {
        assert!(left + width <= self.width && top + height <= self.height);
        Self::from_fn(width, height, |x, y| self.get(left + x, top + y).clone())
    }
}

impl<T> fmt::Debug for Raster<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Raster({}x{})", self.width, self.height)
    }
}

pub type Rgb = [u8; 3];
pub type RgbImage = Raster<Rgb>;
pub type LabelMask = Raster<PixelClass>;

/// Ground-truth pixel classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PixelClass {
    Tray,
    SeedCoat,
    Split,
}

impl PixelClass {
    pub const ALL: [PixelClass; 3] = [PixelClass::Tray, PixelClass::SeedCoat, PixelClass::Split];

    /// Gray level used in PGM label files.
    pub fn gray_code(self) -> u8 {
        match self {
            PixelClass::Tray => 0,
            PixelClass::SeedCoat => 128,
            PixelClass::Split => 255,
        }
    }

    pub fn from_gray_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(PixelClass::Tray),
            128 => Some(PixelClass::SeedCoat),
            255 => Some(PixelClass::Split),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_bean(self) -> bool {
        self != PixelClass::Tray
    }
}

/// Per-class pixel counts, indexed by [`PixelClass::index`].
pub fn class_counts(mask: &LabelMask) -> [usize; 3] {
    let mut counts = [0; 3];
    for c in mask.data() {
        counts[c.index()] += 1;
    }
    counts
}

/// Result of sniffing a netpbm file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decoded {
    Rgb(RgbImage),
    Label(LabelMask),
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    payload_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, ImageError> {
    let malformed = |msg: &str| ImageError::MalformedHeader(msg.to_string());
    if bytes.len() < 2 {
        return Err(malformed("missing magic number"));
    }
    let magic = [bytes[0], bytes[1]];
    if &magic != b"P6" && &magic != b"P5" {
        return Err(ImageError::MalformedHeader(format!(
            "unsupported magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }

    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments before each field
        let start_pos = pos;
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        if pos == start_pos {
            return Err(malformed("expected whitespace between header fields"));
        }
        let digits_start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if pos == digits_start {
            return Err(malformed("expected a decimal header field"));
        }
        let text = std::str::from_utf8(&bytes[digits_start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| malformed("header field out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(malformed("header must end with a single whitespace byte")),
    }

    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(malformed("dimensions must be positive"));
    }
    if maxval != 255 {
        return Err(ImageError::MalformedHeader(format!(
            "maxval must be 255, found {maxval}"
        )));
    }
    Ok(Header {
        magic,
        width,
        height,
        payload_start: pos,
    })
}

/// Decodes a binary PPM (`P6`) into an RGB image or a binary PGM (`P5`)
/// into a label mask.
pub fn decode_image(bytes: &[u8]) -> Result<Decoded, ImageError> {
    let header = parse_header(bytes)?;
    let channels = if &header.magic == b"P6" { 3 } else { 1 };
    let expected = header
        .width
        .checked_mul(header.height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| ImageError::MalformedHeader("dimensions overflow".into()))?;
    let payload = &bytes[header.payload_start..];
    if payload.len() < expected {
        return Err(ImageError::TruncatedPayload {
            expected,
            actual: payload.len(),
        });
    }
    let payload = &payload[..expected];

    if channels == 3 {
        let pixels = payload
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        Ok(Decoded::Rgb(Raster::new(header.width, header.height, pixels)?))
    } else {
        let labels = payload
            .iter()
            .enumerate()
            .map(|(i, &value)| {
                PixelClass::from_gray_code(value).ok_or(ImageError::UnknownClassCode {
                    value,
                    offset: header.payload_start + i,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Decoded::Label(Raster::new(header.width, header.height, labels)?))
    }
}

pub fn decode_rgb(bytes: &[u8]) -> Result<RgbImage, ImageError> {
    match decode_image(bytes)? {
        Decoded::Rgb(img) => Ok(img),
        Decoded::Label(_) => Err(ImageError::WrongKind { expected: "P6 image" }),
    }
}

pub fn decode_mask(bytes: &[u8]) -> Result<LabelMask, ImageError> {
    match decode_image(bytes)? {
        Decoded::Label(mask) => Ok(mask),
        Decoded::Rgb(_) => Err(ImageError::WrongKind { expected: "P5 mask" }),
    }
}

pub fn encode_rgb(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6 {} {} 255\n", image.width(), image.height()).into_bytes();
    out.reserve(image.len() * 3);
    for px in image.data() {
        out.extend_from_slice(px);
    }
    out
}

pub fn encode_mask(mask: &LabelMask) -> Vec<u8> {
    let mut out = format!("P5 {} {} 255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.data().iter().map(|c| c.gray_code()));
    out
}

pub fn encode_image(raster: &Decoded) -> Vec<u8> {
    match raster {
        Decoded::Rgb(img) => encode_rgb(img),
        Decoded::Label(mask) => encode_mask(mask),
    }
}

/// Hexcone HSV. Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HsvPixel {
    pub hue: f64,
    pub saturation: f64,
    pub value: f64,
}

impl HsvPixel {
    pub fn to_array(self) -> [f64; 3] {
        [self.hue, self.saturation, self.value]
    }
}

/// Achromatic pixels (r = g = b) get hue 0 and saturation exactly 0.
pub fn rgb_to_hsv(r: u8, g: u8, b: u8) -> HsvPixel {
    let (ri, gi, bi) = (r as i32, g as i32, b as i32);
    let max = ri.max(gi).max(bi);
    let min = ri.min(gi).min(bi);
    let delta = max - min;

    let value = max as f64 / 255.0;
    let saturation = if max == 0 {
        0.0
    } else {
        delta as f64 / max as f64
    };
    let hue = if delta == 0 {
        0.0
    } else {
        let d = delta as f64;
        let h = if max == ri {
            60.0 * (gi - bi) as f64 / d
        } else if max == gi {
            60.0 * ((bi - ri) as f64 / d + 2.0)
        } else {
            60.0 * ((ri - gi) as f64 / d + 4.0)
        };
        if h < 0.0 {
            h + 360.0
        } else {
            h
        }
    };
    HsvPixel {
        hue,
        saturation,
        value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_payload(header: &str, payload: &[u8]) -> Vec<u8> {
        let mut v = header.as_bytes().to_vec();
        v.extend_from_slice(payload);
        v
    }

    #[test]
    fn decodes_two_pixel_ppm() {
        let bytes = with_payload("P6 2 1 255\n", &[255, 0, 0, 0, 255, 0]);
        let img = decode_rgb(&bytes).unwrap();
        assert_eq!(img.dims(), (2, 1));
        assert_eq!(img.data(), &[[255, 0, 0], [0, 255, 0]]);
        assert_eq!(encode_rgb(&img), bytes);
    }

    #[test]
    fn decodes_seed_coat_pgm() {
        let bytes = with_payload("P5 1 1 255\n", &[128]);
        let mask = decode_mask(&bytes).unwrap();
        assert_eq!(mask.data(), &[PixelClass::SeedCoat]);
        assert_eq!(encode_mask(&mask), bytes);
    }

    #[test]
    fn truncated_payload() {
        let bytes = with_payload("P5 2 2 255\n", &[0, 128, 255]);
        assert_eq!(
            decode_image(&bytes),
            Err(ImageError::TruncatedPayload {
                expected: 4,
                actual: 3
            })
        );
    }

    #[test]
    fn header_errors() {
        for bad in [
            &b"P3 1 1 255\n\x00"[..],
            b"P5 0 1 255\n",
            b"P5 1 1 65535\n\x00\x00",
            b"P5 1 1 254\n\x00",
            b"P5 1 1 255",
            b"P5 x 1 255\n\x00",
            b"P",
        ] {
            assert!(
                matches!(decode_image(bad), Err(ImageError::MalformedHeader(_))),
                "{:?}",
                String::from_utf8_lossy(bad)
            );
        }
    }

    #[test]
    fn unknown_class_code() {
        let bytes = with_payload("P5 2 1 255\n", &[0, 7]);
        assert_eq!(
            decode_image(&bytes),
            Err(ImageError::UnknownClassCode {
                value: 7,
                offset: 12
            })
        );
    }

    #[test]
    fn header_comments_are_skipped() {
        let bytes = with_payload("P5\n# made by hand\n1 1\n255\n", &[255]);
        assert_eq!(decode_mask(&bytes).unwrap().data(), &[PixelClass::Split]);
    }

    #[test]
    fn wrong_kind() {
        let bytes = with_payload("P5 1 1 255\n", &[0]);
        assert!(matches!(decode_rgb(&bytes), Err(ImageError::WrongKind { .. })));
    }

    #[test]
    fn hsv_examples() {
        assert_eq!(
            rgb_to_hsv(255, 0, 0),
            HsvPixel {
                hue: 0.0,
                saturation: 1.0,
                value: 1.0
            }
        );
        assert_eq!(
            rgb_to_hsv(0, 0, 0),
            HsvPixel {
                hue: 0.0,
                saturation: 0.0,
                value: 0.0
            }
        );
        let gray = rgb_to_hsv(128, 128, 128);
        assert_eq!(gray.hue, 0.0);
        assert_eq!(gray.saturation, 0.0);
        assert!((gray.value - 0.501_960_784_313_725_5).abs() < 1e-15);

        let green = rgb_to_hsv(0, 255, 0);
        assert_eq!(green.hue, 120.0);
        let blue = rgb_to_hsv(0, 0, 255);
        assert_eq!(blue.hue, 240.0);
        let magenta_ish = rgb_to_hsv(255, 0, 1);
        assert!(magenta_ish.hue > 359.0 && magenta_ish.hue < 360.0);
    }

    #[test]
    fn hsv_ranges_exhaustive_on_lattice() {
        // every 3rd level per channel plus the endpoints: ~160k triples
        let levels: Vec<u8> = (0..=255u8).step_by(3).chain([254, 255]).collect();
        for &r in &levels {
            for &g in &levels {
                for &b in &levels {
                    let p = rgb_to_hsv(r, g, b);
                    assert!((0.0..360.0).contains(&p.hue), "{r} {g} {b} -> {p:?}");
                    assert!((0.0..=1.0).contains(&p.saturation));
                    assert!((0.0..=1.0).contains(&p.value));
                    if r == g && g == b {
                        assert_eq!(p.saturation, 0.0);
                        assert_eq!(p.hue, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn raster_rejects_bad_dims() {
        assert!(Raster::new(0, 1, Vec::<u8>::new()).is_err());
        assert!(Raster::new(2, 2, vec![0u8; 3]).is_err());
        assert!(Raster::new(2, 2, vec![0u8; 4]).is_ok());
    }
}
