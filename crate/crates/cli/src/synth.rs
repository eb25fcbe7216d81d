use std::fmt::Write;
use std::path::PathBuf;

use anyhow::Result;
use beansplit::dataset::RETORT_LEVELS;
use beansplit::imagecore;
use beansplit::measures;
use beansplit::synthetic::{generate_image, SyntheticSpec};
use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::util::{self, usage};

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory; receives `manifest.csv`, `images/` and `labels/`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    genotypes: usize,
    #[arg(long, default_value_t = 8)]
    train: usize,
    #[arg(long, default_value_t = 2)]
    val: usize,
    /// Image side in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Split propensity grows with genotype index and retort time.
fn spec_for(base: &SyntheticSpec, genotype: usize, retort: usize) -> SyntheticSpec {
    SyntheticSpec {
        max_splits_per_bean: genotype + retort,
        ..base.clone()
    }
}

pub fn run(a: SynthArgs) -> Result<()> {
    if a.size < 16 {
        return Err(usage("--size must be at least 16"));
    }
    if a.genotypes == 0 {
        return Err(usage("--genotypes must be positive"));
    }
    let base = SyntheticSpec {
        width: a.size,
        height: a.size,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut manifest = String::from(
        "image_path,label_path,genotype,retort_min,replicate,partition,intactness,rater_a,rater_b\n",
    );
    let write_pair = |name: &str, spec: &SyntheticSpec, rng: &mut ChaCha8Rng| -> Result<f64> {
        let (image, mask) = generate_image(spec, rng);
        util::write_atomic(&a.out.join("images").join(format!("{name}.ppm")), &imagecore::encode_rgb(&image))?;
        util::write_atomic(&a.out.join("labels").join(format!("{name}.pgm")), &imagecore::encode_mask(&mask))?;
        Ok(measures::bsr(&mask).unwrap_or(0.0))
    };

    let mut n = 0;
    for (partition, count) in [("train", a.train), ("val", a.val)] {
        for i in 0..count {
            let spec = spec_for(&base, 2, 2 + i % 3);
            let name = format!("{partition}_{i:03}");
            write_pair(&name, &spec, &mut rng)?;
            let retort = RETORT_LEVELS[i % RETORT_LEVELS.len()];
            writeln!(
                manifest,
                "images/{name}.ppm,labels/{name}.pgm,T{i},{retort},1,{partition},,,"
            )?;
            n += 1;
        }
    }
    for g in 0..a.genotypes {
        for (t, retort) in RETORT_LEVELS.iter().enumerate() {
            for rep in 1..=2 {
                let name = format!("G{g:02}_{retort}m_r{rep}");
                let bsr = write_pair(&name, &spec_for(&base, g, t), &mut rng)?;
                // raters see fewer splits as more intact, with some disagreement
                let truth = (5.0 - 40.0 * bsr).clamp(1.0, 5.0);
                let mut rate = || (truth + rng.random_range(-0.7..0.7)).round().clamp(1.0, 5.0);
                let (ra, rb) = (rate(), rate());
                writeln!(
                    manifest,
                    "images/{name}.ppm,labels/{name}.pgm,G{g:02},{retort},{rep},score,{},{ra},{rb}",
                    ((ra + rb) / 2.0).round()
                )?;
                n += 1;
            }
        }
    }
    util::write_atomic(&a.out.join("manifest.csv"), manifest.as_bytes())?;
    eprintln!("wrote {n} images and {}", a.out.join("manifest.csv").display());
    Ok(())
}
