use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::PathBuf;

use anyhow::{bail, Result};
use beansplit::dataset::RETORT_LEVELS;
use beansplit::pipeline::{self, MeasuresRow};
use beansplit::stats::{self, StudyRow, TraitAnalysis};
use clap::Args;
use serde::Serialize;

use crate::svg::{self, Series};
use crate::util;

#[derive(Args)]
pub struct StatsArgs {
    /// Output of `measure`.
    #[arg(long)]
    measures: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Directory for SVG plots.
    #[arg(long)]
    plots: Option<PathBuf>,
    /// Also write the joined long-format study table.
    #[arg(long)]
    study_csv: Option<PathBuf>,
}

#[derive(Serialize)]
struct Correlation {
    n: usize,
    r: Option<f64>,
}

#[derive(Serialize)]
struct RaterAgreement {
    rater: String,
    /// Correlation with the mean of the other raters.
    r_vs_others: Option<f64>,
}

#[derive(Serialize)]
#[serde(untagged)]
enum TraitResult {
    Ok(TraitAnalysis),
    Failed { r#trait: String, error: String },
}

#[derive(Serialize)]
struct StatsReport {
    samples: usize,
    unmatched_images: Vec<String>,
    provenance: Option<String>,
    bsr_vs_intactness: Correlation,
    rater_agreement: Vec<RaterAgreement>,
    traits: Vec<TraitResult>,
}

fn trait_values(m: &MeasuresRow) -> Vec<(String, f64)> {
    let mut v = vec![("bsr".to_string(), m.bsr)];
    v.extend(m.bsh.iter().enumerate().map(|(i, &b)| (format!("bsh_{}", i + 1), b)));
    v
}

pub fn run(a: StatsArgs) -> Result<()> {
    let text = util::read_text(&a.measures)?;
    let provenance = text.lines().next().filter(|l| l.starts_with('#')).map(|l| l.trim_start_matches(['#', ' ']).to_string());
    let measures = pipeline::parse_measures_csv(&text)?;
    let manifest = util::load_manifest(&a.manifest)?;

    let mut seen = HashSet::new();
    let mut joined = Vec::new();
    let mut unmatched = Vec::new();
    for m in &measures {
        if !seen.insert(m.image.as_str()) {
            bail!("image {} appears twice in {}", m.image, a.measures.display());
        }
        match manifest.find_by_id(&m.image) {
            Some(rec) => joined.push((m, rec)),
            None => unmatched.push(m.image.clone()),
        }
    }
    if joined.is_empty() {
        bail!("no measured image matches the manifest");
    }

    let rows: Vec<StudyRow> = joined
        .iter()
        .flat_map(|(m, rec)| {
            trait_values(m).into_iter().map(|(name, value)| StudyRow {
                genotype: rec.genotype.clone(),
                retort_min: rec.retort_min,
                replicate: rec.replicate,
                r#trait: name,
                value,
            })
        })
        .collect();

    let traits: Vec<TraitResult> = trait_values(joined[0].0)
        .into_iter()
        .map(|(name, _)| {
            let subset: Vec<StudyRow> = rows.iter().filter(|r| r.r#trait == name).cloned().collect();
            match stats::analyze_traits(&subset) {
                Ok(mut v) => TraitResult::Ok(v.remove(0)),
                Err(e) => TraitResult::Failed {
                    r#trait: name,
                    error: e.to_string(),
                },
            }
        })
        .collect();

    let (bsr, intact): (Vec<f64>, Vec<f64>) = joined
        .iter()
        .filter_map(|(m, rec)| rec.intactness.map(|i| (m.bsr, i)))
        .unzip();
    let bsr_vs_intactness = Correlation {
        n: bsr.len(),
        r: stats::pearson_r(&bsr, &intact).ok(),
    };
    let rater_scores: Vec<Vec<Option<f64>>> = joined.iter().map(|(_, rec)| rec.rater_scores.clone()).collect();
    let rater_agreement = manifest
        .rater_names
        .iter()
        .zip(stats::leave_one_out_rater_correlations(&rater_scores))
        .map(|(name, r)| RaterAgreement {
            rater: name.clone(),
            r_vs_others: r,
        })
        .collect();

    if let Some(path) = &a.study_csv {
        util::write_atomic(path, stats::study_csv(&rows).as_bytes())?;
    }
    if let Some(dir) = &a.plots {
        plots(dir, &joined, &traits, &bsr, &intact)?;
    }

    for t in &traits {
        match t {
            TraitResult::Ok(t) => println!(
                "{:<8} H² {}  σ²G {:.4e}  σ²GxT {:.4e}  σ²e {:.4e}",
                t.r#trait,
                t.heritability.map_or("n/a".into(), |h| format!("{h:.3}")),
                t.components.genotype,
                t.components.genotype_by_retort,
                t.components.residual
            ),
            TraitResult::Failed { r#trait, error } => println!("{trait:<8} {error}"),
        }
    }
    if let Some(r) = bsr_vs_intactness.r {
        println!("BSR vs intactness: r = {r:.3} (n = {})", bsr_vs_intactness.n);
    }
    if !unmatched.is_empty() {
        eprintln!("warning: {} measured images not in the manifest", unmatched.len());
    }
    let report = StatsReport {
        samples: joined.len(),
        unmatched_images: unmatched,
        provenance,
        bsr_vs_intactness,
        rater_agreement,
        traits,
    };
    util::write_atomic(&a.out, serde_json::to_string_pretty(&report)?.as_bytes())
}

fn plots(
    dir: &std::path::Path,
    joined: &[(&MeasuresRow, &beansplit::dataset::SampleRecord)],
    traits: &[TraitResult],
    bsr: &[f64],
    intact: &[f64],
) -> Result<()> {
    let points: Vec<(f64, f64)> = intact.iter().copied().zip(bsr.iter().copied()).collect();
    util::write_atomic(
        &dir.join("bsr_vs_intactness.svg"),
        svg::scatter("BSR against intactness", "intactness", "BSR", &points).as_bytes(),
    )?;

    let mut by_retort: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (m, rec) in joined {
        by_retort.entry(rec.retort_min).or_default().push(m.bsr);
    }
    let means: Vec<(f64, f64)> = RETORT_LEVELS
        .iter()
        .filter_map(|t| by_retort.get(t).map(|v| (*t as f64, v.iter().sum::<f64>() / v.len() as f64)))
        .collect();
    util::write_atomic(
        &dir.join("bsr_by_retort.svg"),
        svg::line_chart(
            "Mean BSR by retort time",
            "retort time (min)",
            "mean BSR",
            &[Series {
                name: "BSR".into(),
                points: means,
            }],
        )
        .as_bytes(),
    )?;

    let bins = joined[0].0.bsh.len();
    let mut mean_bsh = vec![0.0; bins];
    for (m, _) in joined {
        for (acc, v) in mean_bsh.iter_mut().zip(&m.bsh) {
            *acc += v / joined.len() as f64;
        }
    }
    let labels: Vec<String> = (1..=bins).map(|i| i.to_string()).collect();
    util::write_atomic(
        &dir.join("mean_bsh.svg"),
        svg::bar_chart("Mean BSH", "bin", "split area fraction", &labels, &mean_bsh).as_bytes(),
    )?;

    let h: HashMap<&str, f64> = traits
        .iter()
        .filter_map(|t| match t {
            TraitResult::Ok(t) => t.heritability.map(|h| (t.r#trait.as_str(), h)),
            TraitResult::Failed { .. } => None,
        })
        .collect();
    let names: Vec<String> = traits
        .iter()
        .map(|t| match t {
            TraitResult::Ok(t) => t.r#trait.clone(),
            TraitResult::Failed { r#trait, .. } => r#trait.clone(),
        })
        .collect();
    let values: Vec<f64> = names.iter().map(|n| h.get(n.as_str()).copied().unwrap_or(f64::NAN)).collect();
    util::write_atomic(
        &dir.join("heritability.svg"),
        svg::bar_chart("Entry-mean heritability", "trait", "H²", &names, &values).as_bytes(),
    )
}
