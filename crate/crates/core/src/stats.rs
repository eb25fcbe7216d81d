//! Study-level statistics: correlation with panel intactness, two-way ANOVA
//! over genotype × retort time, method-of-moments variance components and
//! entry-mean heritability.
//!
//! Variance components come from the expected mean squares of the balanced
//! random model `y = μ + G + T + GT + ε`:
//!
//! ```text
//! E[MS_E]  = σ²_ε
//! E[MS_GT] = σ²_ε + r·σ²_GT
//! E[MS_G]  = σ²_ε + r·σ²_GT + r·t·σ²_G
//! ```
//!
//! and heritability is `σ²_G / (σ²_G + σ²_GT/t + σ²_ε/(t·r))`.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),
    #[error("unbalanced design: {0}")]
    UnbalancedDesign(String),
    #[error("need at least 2 replicates per cell, found {0}")]
    InsufficientReplication(usize),
    #[error("all variance components are zero")]
    ZeroVariance,
    #[error("malformed study table: {0}")]
    Parse(String),
}

/// Sample Pearson correlation.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::UndefinedCorrelation("fewer than two points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::UndefinedCorrelation("constant input"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation of each rater with the mean of the *other* raters.
///
/// `scores[i][k]` is rater `k`'s score for sample `i`. A rater's entry is
/// `None` when fewer than two samples have both that rater's score and at
/// least one other rater's score, or when the correlation is undefined.
pub fn leave_one_out_rater_correlations(scores: &[Vec<Option<f64>>]) -> Vec<Option<f64>> {
    let raters = scores.iter().map(Vec::len).max().unwrap_or(0);
    (0..raters)
        .map(|k| {
            let mut own = Vec::new();
            let mut reference = Vec::new();
            for row in scores {
                let Some(Some(mine)) = row.get(k) else { continue };
                let others: Vec<f64> = row
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != k)
                    .filter_map(|(_, v)| *v)
                    .collect();
                if others.is_empty() {
                    continue;
                }
                own.push(*mine);
                reference.push(others.iter().sum::<f64>() / others.len() as f64);
            }
            pearson_r(&own, &reference).ok()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyObservation {
    pub genotype: String,
    pub retort_min: u32,
    pub replicate: u32,
    pub value: f64,
}

/// Observations arranged as `cells[g][t]` = replicate values.
#[derive(Debug, Clone, PartialEq)]
pub struct BalancedDesign {
    pub genotypes: Vec<String>,
    pub retorts: Vec<u32>,
    pub cells: Vec<Vec<Vec<f64>>>,
}

impl BalancedDesign {
    pub fn from_observations(obs: &[StudyObservation]) -> Result<Self, StatsError> {
        let mut by_cell: BTreeMap<(&str, u32), Vec<(u32, f64)>> = BTreeMap::new();
        for o in obs {
            by_cell
                .entry((o.genotype.as_str(), o.retort_min))
                .or_default()
                .push((o.replicate, o.value));
        }
        let mut genotypes: Vec<String> = obs.iter().map(|o| o.genotype.clone()).collect();
        genotypes.sort();
        genotypes.dedup();
        let mut retorts: Vec<u32> = obs.iter().map(|o| o.retort_min).collect();
        retorts.sort_unstable();
        retorts.dedup();
        if genotypes.is_empty() {
            return Err(StatsError::UnbalancedDesign("no observations".into()));
        }

        let mut reps = None;
        let mut cells = Vec::with_capacity(genotypes.len());
        for g in &genotypes {
            let mut row = Vec::with_capacity(retorts.len());
            for &t in &retorts {
                let mut cell = by_cell.remove(&(g.as_str(), t)).ok_or_else(|| {
                    StatsError::UnbalancedDesign(format!("no observations for {g} at {t} min"))
                })?;
                cell.sort_by_key(|&(rep, _)| rep);
                if cell.windows(2).any(|w| w[0].0 == w[1].0) {
                    return Err(StatsError::UnbalancedDesign(format!(
                        "duplicate replicate for {g} at {t} min"
                    )));
                }
                match reps {
                    None => reps = Some(cell.len()),
                    Some(r) if r != cell.len() => {
                        return Err(StatsError::UnbalancedDesign(format!(
                            "{g} at {t} min has {} replicates, expected {r}",
                            cell.len()
                        )))
                    }
                    _ => {}
                }
                row.push(cell.into_iter().map(|(_, v)| v).collect());
            }
            cells.push(row);
        }
        let r = reps.unwrap_or(0);
        if r < 2 {
            return Err(StatsError::InsufficientReplication(r));
        }
        Ok(Self {
            genotypes,
            retorts,
            cells,
        })
    }

    pub fn g(&self) -> usize {
        self.genotypes.len()
    }

    pub fn t(&self) -> usize {
        self.retorts.len()
    }

    pub fn r(&self) -> usize {
        self.cells[0][0].len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaRow {
    pub source: String,
    pub df: usize,
    pub ss: f64,
    pub ms: f64,
    /// Absent for the residual row.
    pub f: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaTable {
    pub rows: Vec<AnovaRow>,
    pub ss_total: f64,
    pub genotypes: usize,
    pub retorts: usize,
    pub replicates: usize,
}

impl AnovaTable {
    pub fn row(&self, source: &str) -> Option<&AnovaRow> {
        self.rows.iter().find(|r| r.source == source)
    }

    fn ms(&self, source: &str) -> f64 {
        self.row(source).map(|r| r.ms).unwrap_or(f64::NAN)
    }
}

pub const GENOTYPE: &str = "Genotype";
pub const RETORT: &str = "Retort";
pub const INTERACTION: &str = "GxT";
pub const RESIDUAL: &str = "Residual";

/// Fixed-effects two-way ANOVA with interaction on a balanced design.
pub fn anova_two_way(obs: &[StudyObservation]) -> Result<AnovaTable, StatsError> {
    Ok(anova_from_design(&BalancedDesign::from_observations(obs)?))
}

pub fn anova_from_design(d: &BalancedDesign) -> AnovaTable {
    let (g, t, r) = (d.g(), d.t(), d.r());
    let n = (g * t * r) as f64;
    let cell_mean: Vec<Vec<f64>> = d
        .cells
        .iter()
        .map(|row| row.iter().map(|c| c.iter().sum::<f64>() / r as f64).collect())
        .collect();
    let grand = d.cells.iter().flatten().flatten().sum::<f64>() / n;
    let g_mean: Vec<f64> = cell_mean
        .iter()
        .map(|row| row.iter().sum::<f64>() / t as f64)
        .collect();
    let t_mean: Vec<f64> = (0..t)
        .map(|j| cell_mean.iter().map(|row| row[j]).sum::<f64>() / g as f64)
        .collect();

    let ss_g = (t * r) as f64 * g_mean.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_t = (g * r) as f64 * t_mean.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let mut ss_gt = 0.0;
    let mut ss_e = 0.0;
    let mut ss_total = 0.0;
    for i in 0..g {
        for j in 0..t {
            ss_gt += (cell_mean[i][j] - g_mean[i] - t_mean[j] + grand).powi(2);
            for &y in &d.cells[i][j] {
                ss_e += (y - cell_mean[i][j]).powi(2);
                ss_total += (y - grand).powi(2);
            }
        }
    }
    ss_gt *= r as f64;

    let df_e = g * t * (r - 1);
    let ms_e = ss_e / df_e as f64;
    let effect = |source: &str, df: usize, ss: f64| {
        let ms = if df > 0 { ss / df as f64 } else { f64::NAN };
        let f = ms / ms_e;
        let p = if df > 0 && f.is_finite() {
            FisherSnedecor::new(df as f64, df_e as f64)
                .ok()
                .map(|dist| dist.sf(f))
        } else if df > 0 && f == f64::INFINITY {
            Some(0.0)
        } else {
            None
        };
        AnovaRow {
            source: source.to_string(),
            df,
            ss,
            ms,
            f: Some(f),
            p,
        }
    };
    AnovaTable {
        rows: vec![
            effect(GENOTYPE, g - 1, ss_g),
            effect(RETORT, t - 1, ss_t),
            effect(INTERACTION, (g - 1) * (t - 1), ss_gt),
            AnovaRow {
                source: RESIDUAL.to_string(),
                df: df_e,
                ss: ss_e,
                ms: ms_e,
                f: None,
                p: None,
            },
        ],
        ss_total,
        genotypes: g,
        retorts: t,
        replicates: r,
    }
}

/// Upper-α critical value of F(df1, df2).
pub fn f_critical(alpha: f64, df1: f64, df2: f64) -> f64 {
    FisherSnedecor::new(df1, df2)
        .expect("positive degrees of freedom")
        .inverse_cdf(1.0 - alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub genotype: f64,
    pub genotype_by_retort: f64,
    pub residual: f64,
    /// Retort levels.
    pub t: usize,
    /// Replicates per cell.
    pub r: usize,
}

pub fn variance_components(obs: &[StudyObservation]) -> Result<VarianceComponents, StatsError> {
    Ok(components_from_anova(&anova_two_way(obs)?))
}

/// Method-of-moments estimates; negative estimates are truncated to zero.
pub fn components_from_anova(table: &AnovaTable) -> VarianceComponents {
    let (t, r) = (table.retorts, table.replicates);
    let ms_e = table.ms(RESIDUAL);
    // a single genotype or retort level leaves its mean square undefined
    let ms_g = table.ms(GENOTYPE);
    let ms_gt = if t > 1 { table.ms(INTERACTION) } else { ms_e };
    let clamp = |v: f64| if v.is_finite() { v.max(0.0) } else { 0.0 };
    VarianceComponents {
        genotype: clamp((ms_g - ms_gt) / (r * t) as f64),
        genotype_by_retort: clamp((ms_gt - ms_e) / r as f64),
        residual: clamp(ms_e),
        t,
        r,
    }
}

/// Entry-mean heritability.
pub fn heritability(c: &VarianceComponents) -> Result<f64, StatsError> {
    let denom = c.genotype
        + c.genotype_by_retort / c.t as f64
        + c.residual / (c.t * c.r) as f64;
    if denom <= 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok(c.genotype / denom)
}

/// One row of the long-format study table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub genotype: String,
    pub retort_min: u32,
    pub replicate: u32,
    pub r#trait: String,
    pub value: f64,
}

pub const STUDY_CSV_HEADER: &str = "genotype,retort_min,replicate,trait,value";

pub fn parse_study_csv(text: &str) -> Result<Vec<StudyRow>, StatsError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| StatsError::Parse(e.to_string()))?
        .clone();
    let expected: Vec<&str> = STUDY_CSV_HEADER.split(',').collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(StatsError::Parse(format!(
            "expected header `{STUDY_CSV_HEADER}`"
        )));
    }
    reader
        .deserialize::<StudyRow>()
        .map(|r| r.map_err(|e| StatsError::Parse(e.to_string())))
        .collect()
}

pub fn study_csv(rows: &[StudyRow]) -> String {
    let mut out = format!("{STUDY_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.genotype, r.retort_min, r.replicate, r.r#trait, r.value
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitAnalysis {
    pub r#trait: String,
    pub anova: AnovaTable,
    pub components: VarianceComponents,
    pub heritability: Option<f64>,
}

/// ANOVA, components and heritability for every trait, in first-seen order.
pub fn analyze_traits(rows: &[StudyRow]) -> Result<Vec<TraitAnalysis>, StatsError> {
    let mut order: Vec<&str> = Vec::new();
    let mut grouped: BTreeMap<&str, Vec<StudyObservation>> = BTreeMap::new();
    for r in rows {
        if !grouped.contains_key(r.r#trait.as_str()) {
            order.push(&r.r#trait);
        }
        grouped.entry(&r.r#trait).or_default().push(StudyObservation {
            genotype: r.genotype.clone(),
            retort_min: r.retort_min,
            replicate: r.replicate,
            value: r.value,
        });
    }
    order
        .into_iter()
        .map(|name| {
            let anova = anova_two_way(&grouped[name])?;
            let components = components_from_anova(&anova);
            Ok(TraitAnalysis {
                r#trait: name.to_string(),
                heritability: heritability(&components).ok(),
                anova,
                components,
            })
        })
        .collect()
}

/// Parameters of a simulated balanced study: random genotype and G×T
/// effects, fixed retort effects, Gaussian residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationParams {
    pub genotypes: usize,
    pub retorts: usize,
    pub replicates: usize,
    pub var_genotype: f64,
    pub var_gxt: f64,
    pub var_residual: f64,
    /// One entry per retort level; zeros when empty.
    pub retort_effects: Vec<f64>,
}

pub fn simulate_study(p: &SimulationParams, seed: u64) -> Vec<StudyObservation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |sd: f64| Normal::new(0.0, sd.sqrt()).expect("finite variance");
    let (ng, nt, ne) = (normal(p.var_genotype), normal(p.var_gxt), normal(p.var_residual));
    let levels = &crate::dataset::RETORT_LEVELS;
    let mut out = Vec::with_capacity(p.genotypes * p.retorts * p.replicates);
    for gi in 0..p.genotypes {
        let ge = ng.sample(&mut rng);
        for ti in 0..p.retorts {
            let te = p.retort_effects.get(ti).copied().unwrap_or(0.0);
            let gte = nt.sample(&mut rng);
            for rep in 0..p.replicates {
                out.push(StudyObservation {
                    genotype: format!("G{gi:03}"),
                    retort_min: levels.get(ti).copied().unwrap_or(100 + ti as u32),
                    replicate: rep as u32 + 1,
                    value: ge + te + gte + ne.sample(&mut rng),
                });
            }
        }
    }
    out
}

/// Per-run seed derived from a master seed, independent of run order.
pub fn run_seed(master: u64, run: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = master ^ run.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
