use beansplit::dataset::{dihedral, pad_to_multiple, PadFill};
use beansplit::eval;
use beansplit::imagecore::{self, rgb_to_hsv, LabelMask, PixelClass, Raster, RgbImage};
use beansplit::measures::{self, Connectivity};
use proptest::prelude::*;

fn class() -> impl Strategy<Value = PixelClass> {
    prop_oneof![
        Just(PixelClass::Tray),
        Just(PixelClass::SeedCoat),
        Just(PixelClass::Split)
    ]
}

fn mask() -> impl Strategy<Value = LabelMask> {
    (1usize..24, 1usize..24).prop_flat_map(|(w, h)| {
        prop::collection::vec(class(), w * h).prop_map(move |d| Raster::new(w, h, d).unwrap())
    })
}

fn rgb_image() -> impl Strategy<Value = RgbImage> {
    (1usize..16, 1usize..16).prop_flat_map(|(w, h)| {
        prop::collection::vec(any::<[u8; 3]>(), w * h).prop_map(move |d| Raster::new(w, h, d).unwrap())
    })
}

fn histograms(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n)
}

proptest! {
    #[test]
    fn ppm_roundtrip(img in rgb_image()) {
        let bytes = imagecore::encode_rgb(&img);
        prop_assert_eq!(imagecore::decode_rgb(&bytes).unwrap(), img);
    }

    #[test]
    fn pgm_roundtrip(m in mask()) {
        let bytes = imagecore::encode_mask(&m);
        let back = imagecore::decode_mask(&bytes).unwrap();
        prop_assert_eq!(imagecore::encode_mask(&back), bytes);
        prop_assert_eq!(back, m);
    }

    #[test]
    fn hsv_in_range(r: u8, g: u8, b: u8) {
        let hsv = rgb_to_hsv(r, g, b);
        prop_assert!((0.0..360.0).contains(&hsv.hue));
        prop_assert!((0.0..=1.0).contains(&hsv.saturation));
        prop_assert!((0.0..=1.0).contains(&hsv.value));
        if r == g && g == b {
            prop_assert_eq!(hsv.hue, 0.0);
            prop_assert_eq!(hsv.saturation, 0.0);
        }
    }

    #[test]
    fn emd_axioms((a, b, c) in (1usize..16).prop_flat_map(|n| (histograms(n), histograms(n), histograms(n)))) {
        let d = |x: &[f64], y: &[f64]| measures::emd_1d_bins(x, y).unwrap();
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
    }

    #[test]
    fn bsh_sums_to_bsr(m in mask(), max_area in 1u64..40, bins in 1usize..12, eight: bool) {
        let conn = if eight { Connectivity::Eight } else { Connectivity::Four };
        let bean = m.data().iter().filter(|c| c.is_bean()).count();
        prop_assume!(bean > 0);
        let comps = measures::connected_components(&measures::split_indicator(&m), conn);
        let areas: Vec<u64> = comps.iter().map(|c| c.area as u64).collect();
        let split = m.data().iter().filter(|&&c| c == PixelClass::Split).count();
        prop_assert_eq!(areas.iter().sum::<u64>() as usize, split);
        let h = measures::bsh(&areas, bean as u64, max_area, bins).unwrap();
        prop_assert!((h.total() - measures::bsr(&m).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn eight_never_splits_four_components(m in mask()) {
        let ind = measures::split_indicator(&m);
        let n4 = measures::connected_components(&ind, Connectivity::Four).len();
        let n8 = measures::connected_components(&ind, Connectivity::Eight).len();
        prop_assert!(n8 <= n4);
    }

    #[test]
    fn dihedral_group(m in mask(), k in 0usize..8) {
        // rotations compose additively; every flip is an involution
        let r1 = dihedral(&m, 1);
        prop_assert_eq!(dihedral(&dihedral(&m, k % 4), 1), dihedral(&m, (k + 1) % 4));
        prop_assert_eq!(dihedral(&dihedral(&r1, 3), 0), m.clone());
        prop_assert_eq!(dihedral(&dihedral(&m, 4 + k % 4), 4 + k % 4), m.clone());
        prop_assert_eq!(imagecore::class_counts(&dihedral(&m, k)), imagecore::class_counts(&m));
    }

    #[test]
    fn pad_then_crop_is_identity(m in mask(), shift in 0u32..5) {
        let multiple = 1usize << shift;
        let p = pad_to_multiple(&m, multiple, PadFill::Constant(PixelClass::Tray));
        prop_assert_eq!(p.raster.width() % multiple, 0);
        prop_assert_eq!(p.raster.height() % multiple, 0);
        prop_assert!(p.raster.width() - m.width() < multiple);
        prop_assert_eq!(p.crop_back(), m);
    }

    #[test]
    fn ap_bounded_and_order_invariant(
        pairs in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..50)
    ) {
        let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        prop_assume!(labels.iter().any(|&l| l));
        let ap = eval::average_precision(&scores, &labels).unwrap();
        prop_assert!(ap > 0.0 && ap <= 1.0);
        let rev_s: Vec<f64> = scores.iter().rev().copied().collect();
        let rev_l: Vec<bool> = labels.iter().rev().copied().collect();
        prop_assert_eq!(eval::average_precision(&rev_s, &rev_l).unwrap(), ap);
        let cubed: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
        prop_assert_eq!(eval::average_precision(&cubed, &labels).unwrap(), ap);
    }
}
