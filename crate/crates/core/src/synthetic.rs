//! Procedural bean images with exact labels.
//!
//! Beans are ellipses on a dark tray. Each bean has a bright interior, a
//! darker rim and split blotches of intermediate brightness, all sharing one
//! hue and saturation. Split pixels therefore sit between two seed-coat
//! brightness bands, which a linear rule on HSV cannot separate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::LabeledImage;
use crate::imagecore::{LabelMask, PixelClass, Raster, RgbImage};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    pub max_beans: usize,
    pub max_splits_per_bean: usize,
    pub hue: f64,
    pub saturation: f64,
    pub tray_value: f64,
    pub rim_value: f64,
    pub interior_value: f64,
    pub split_value: f64,
    /// Rim thickness in pixels.
    pub rim: f64,
    /// Half-width of uniform noise on the value channel.
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            max_beans: 3,
            max_splits_per_bean: 6,
            hue: 30.0,
            saturation: 0.5,
            tray_value: 0.1,
            rim_value: 0.3,
            interior_value: 0.8,
            split_value: 0.55,
            rim: 2.0,
            noise: 0.03,
        }
    }
}

/// Hexcone HSV (hue in degrees, saturation and value in [0, 1]) to 8-bit RGB.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h6 = h.rem_euclid(360.0) / 60.0;
    let sector = h6.floor() as i32 % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    let (r, g, b) = match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    let q8 = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    [q8(r), q8(g), q8(b)]
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    /// Normalised radial coordinate: < 1 inside.
    fn rho(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        ((u / self.a).powi(2) + (v / self.b).powi(2)).sqrt()
    }
}

pub fn generate_image<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> (RgbImage, LabelMask) {
    let (w, h) = (spec.width, spec.height);
    let side = w.min(h) as f64;
    let n_beans = rng.random_range(1..=spec.max_beans.max(1));
    let mut beans = Vec::new();
    let mut blotches = Vec::new();
    for _ in 0..n_beans {
        let a = rng.random_range(0.18..0.3) * side;
        let b = a * rng.random_range(0.6..0.85);
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let bean = Ellipse {
            cx: rng.random_range(a..(w as f64 - a).max(a + 1.0)),
            cy: rng.random_range(a..(h as f64 - a).max(a + 1.0)),
            a,
            b,
            cos: theta.cos(),
            sin: theta.sin(),
        };
        let n_splits = rng.random_range(0..=spec.max_splits_per_bean);
        for _ in 0..n_splits {
            let r = rng.random_range(1.5..(0.25 * b).max(2.0));
            // keep blotches off the rim
            let reach = (b - spec.rim - r - 1.0).max(0.0);
            let ang: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let dist = rng.random_range(0.0..=reach);
            let (lx, ly) = (dist * ang.cos(), dist * ang.sin());
            blotches.push(Ellipse {
                cx: bean.cx + lx * bean.cos - ly * bean.sin,
                cy: bean.cy + lx * bean.sin + ly * bean.cos,
                a: r,
                b: r * rng.random_range(0.5..1.0),
                cos: ang.cos(),
                sin: ang.sin(),
            });
        }
        beans.push(bean);
    }

    let mut image = Raster::filled(w, h, [0u8; 3]);
    let mut mask = Raster::filled(w, h, PixelClass::Tray);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut class = PixelClass::Tray;
            let mut value = spec.tray_value;
            for bean in &beans {
                let rho = bean.rho(px, py);
                if rho < 1.0 {
                    class = PixelClass::SeedCoat;
                    // distance to the boundary along the minor axis scale
                    value = if (1.0 - rho) * bean.b < spec.rim {
                        spec.rim_value
                    } else {
                        spec.interior_value
                    };
                }
            }
            if class == PixelClass::SeedCoat
                && value == spec.interior_value
                && blotches.iter().any(|s| s.rho(px, py) < 1.0)
            {
                class = PixelClass::Split;
                value = spec.split_value;
            }
            let noise = if spec.noise > 0.0 {
                rng.random_range(-spec.noise..spec.noise)
            } else {
                0.0
            };
            image.set(x, y, hsv_to_rgb(spec.hue, spec.saturation, value + noise));
            mask.set(x, y, class);
        }
    }
    (image, mask)
}

/// `count` labeled images named `synthetic_000.ppm`, `synthetic_001.ppm`, ...
pub fn generate_set(spec: &SyntheticSpec, count: usize, seed: u64) -> Vec<LabeledImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let (image, mask) = generate_image(spec, &mut rng);
            LabeledImage::new(format!("synthetic_{i:03}.ppm"), image, mask).expect("same dims")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::{class_counts, rgb_to_hsv};

    #[test]
    fn hsv_round_trip_on_grid() {
        for h in [0.0, 30.0, 120.0, 200.0, 330.0] {
            for s in [0.0, 0.5, 1.0] {
                for v in [0.2, 0.6, 1.0] {
                    let [r, g, b] = hsv_to_rgb(h, s, v);
                    let back = rgb_to_hsv(r, g, b);
                    assert!((back.value - v).abs() < 0.003);
                    if s > 0.0 {
                        assert!((back.hue - h).abs() < 2.0, "{h} {s} {v}");
                    }
                    if s > 0.0 {
                        assert!((back.saturation - s).abs() < 0.01, "{h} {s} {v}");
                    }
                }
            }
        }
    }

    #[test]
    fn reproducible_and_labelled() {
        let spec = SyntheticSpec::default();
        let a = generate_set(&spec, 4, 9);
        let b = generate_set(&spec, 4, 9);
        assert_eq!(a, b);
        let totals = a.iter().fold([0usize; 3], |mut acc, s| {
            let c = class_counts(&s.mask);
            for i in 0..3 {
                acc[i] += c[i];
            }
            acc
        });
        assert!(totals.iter().all(|&c| c > 0), "{totals:?}");
    }

    #[test]
    fn classes_follow_value_bands() {
        let spec = SyntheticSpec {
            noise: 0.0,
            ..Default::default()
        };
        for s in generate_set(&spec, 3, 1) {
            for (&px, &c) in s.image.data().iter().zip(s.mask.data()) {
                let v = rgb_to_hsv(px[0], px[1], px[2]).value;
                match c {
                    PixelClass::Tray => assert!((v - spec.tray_value).abs() < 0.01),
                    PixelClass::Split => assert!((v - spec.split_value).abs() < 0.01),
                    PixelClass::SeedCoat => assert!(
                        (v - spec.rim_value).abs() < 0.01 || (v - spec.interior_value).abs() < 0.01
                    ),
                }
            }
        }
    }
}
