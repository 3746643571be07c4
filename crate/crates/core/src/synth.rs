//! Seeded synthetic corpora and face-pair sets with known ground truth.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{Corpus, FaceBox, Sample, TriLabel};
use crate::error::{Error, Result};
use crate::math::{derive_seed, dot, rng_for};
use crate::relation::{spatial_cues_for, FacePair, N_TRAITS};

/// Training-split positive and negative counts of the interpersonal relation
/// dataset, in trait order.
pub const RELATION_TRAIN_COUNTS: [(usize, usize); N_TRAITS] = [
    (418, 6808),
    (344, 6882),
    (6261, 965),
    (6176, 1050),
    (6733, 493),
    (6360, 866),
    (6494, 732),
    (6538, 688),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub d: usize,
    pub n_per_source: usize,
    pub sources: usize,
    pub attributes: usize,
    /// Correlation of the latent Gaussians that are thresholded into attributes.
    pub correlation: f64,
    /// Distance between the two class means of an attribute, in noise standard deviations.
    pub separation: f64,
    /// Length of each source's mean offset.
    pub shift: f64,
    /// `mask[s][a]` is true when source `s` annotates attribute `a`. When
    /// absent, attribute `a` is visible only in source `a % sources`.
    pub mask: Option<Vec<Vec<bool>>>,
    /// Per-attribute fraction of positives; one half each when absent.
    pub positive_rate: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            d: 16,
            n_per_source: 500,
            sources: 3,
            attributes: 6,
            correlation: 0.0,
            separation: 3.0,
            shift: 0.0,
            mask: None,
            positive_rate: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d", self.d),
            ("n_per_source", self.n_per_source),
            ("sources", self.sources),
            ("attributes", self.attributes),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(-1.0..=1.0).contains(&self.correlation) {
            return Err(Error::InfeasibleCorrelation(self.correlation));
        }
        if !(self.separation.is_finite() && self.shift.is_finite()) {
            return Err(Error::Config("separation and shift must be finite".into()));
        }
        if let Some(mask) = &self.mask {
            if mask.len() != self.sources || mask.iter().any(|row| row.len() != self.attributes) {
                return Err(Error::Config(format!(
                    "mask must be {} rows of {} flags",
                    self.sources, self.attributes
                )));
            }
        }
        if let Some(rates) = &self.positive_rate {
            if rates.len() != self.attributes {
                return Err(Error::Config(format!(
                    "positive_rate needs {} entries",
                    self.attributes
                )));
            }
            if rates.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
                return Err(Error::Config("positive rates must lie in (0, 1)".into()));
            }
        }
        Ok(())
    }

    /// Latent cut-off of each attribute.
    fn thresholds(&self) -> Vec<f64> {
        let normal = Normal::standard();
        match &self.positive_rate {
            Some(rates) => rates.iter().map(|r| normal.inverse_cdf(1.0 - r)).collect(),
            None => vec![0.0; self.attributes],
        }
    }

    pub fn visible(&self, source: usize, attribute: usize) -> bool {
        match &self.mask {
            Some(mask) => mask[source][attribute],
            None => attribute % self.sources == source,
        }
    }

    pub fn attribute_ids(&self) -> Vec<String> {
        (0..self.attributes).map(|a| format!("attr{a}")).collect()
    }
}

/// Lower-triangular factor of the equicorrelation matrix. Zero pivots (the
/// singular boundary cases) leave their column empty.
fn equicorrelation_factor(a: usize, rho: f64) -> Result<Vec<Vec<f64>>> {
    if a > 1 && rho < -1.0 / (a as f64 - 1.0) - 1e-12 {
        return Err(Error::InfeasibleCorrelation(rho));
    }
    let sigma = |i: usize, j: usize| if i == j { 1.0 } else { rho };
    let mut l = vec![vec![0.0; a]; a];
    for j in 0..a {
        let s: f64 = (0..j).map(|k| l[j][k] * l[j][k]).sum();
        let pivot = sigma(j, j) - s;
        if pivot < -1e-9 {
            return Err(Error::InfeasibleCorrelation(rho));
        }
        let pivot = pivot.max(0.0).sqrt();
        l[j][j] = pivot;
        for i in j + 1..a {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            l[i][j] = if pivot > 1e-12 { (sigma(i, j) - s) / pivot } else { 0.0 };
        }
    }
    Ok(l)
}

fn unit_direction<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Class direction of attribute `a`: the `a`-th axis while axes last, then
/// a seeded random unit vector.
fn attribute_direction(cfg: &SynthConfig, a: usize) -> Vec<f64> {
    if a < cfg.d {
        let mut e = vec![0.0; cfg.d];
        e[a] = 1.0;
        e
    } else {
        unit_direction(&mut rng_for(derive_seed(cfg.seed, &[1, a as u64]), 0), cfg.d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    /// Labels hidden according to the visibility mask.
    pub corpus: Corpus,
    /// Same samples with every label present.
    pub truth: Corpus,
}

/// Attributes come from a thresholded correlated Gaussian; features are
/// `±separation/2` along each attribute's direction plus the source offset
/// and unit Gaussian noise.
pub fn gen_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let factor = equicorrelation_factor(cfg.attributes, cfg.correlation)?;
    let cut = cfg.thresholds();
    let directions: Vec<Vec<f64>> = (0..cfg.attributes)
        .map(|a| attribute_direction(cfg, a))
        .collect();
    let offsets: Vec<Vec<f64>> = (0..cfg.sources)
        .map(|s| {
            let mut rng = rng_for(derive_seed(cfg.seed, &[2, s as u64]), 0);
            unit_direction(&mut rng, cfg.d)
                .into_iter()
                .map(|v| v * cfg.shift)
                .collect()
        })
        .collect();
    let total = cfg.sources * cfg.n_per_source;
    let half = 0.5 * cfg.separation;

    let truth_samples: Vec<Sample> = (0..total)
        .into_par_iter()
        .map(|g| {
            let s = g / cfg.n_per_source;
            let mut rng = rng_for(cfg.seed, g as u64);
            let latent: Vec<f64> = (0..cfg.attributes)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let labels: Vec<bool> = factor
                .iter()
                .zip(&cut)
                .map(|(row, t)| dot(row, &latent) > *t)
                .collect();
            let mut x: Vec<f64> = offsets[s]
                .iter()
                .map(|o| o + rng.sample::<f64, _>(StandardNormal))
                .collect();
            for (dir, &y) in directions.iter().zip(&labels) {
                let sign = if y { half } else { -half };
                for (xi, di) in x.iter_mut().zip(dir) {
                    *xi += sign * di;
                }
            }
            Sample {
                id: format!("s{s}_{:05}", g % cfg.n_per_source),
                source: format!("src{s}"),
                features: x,
                labels: labels.into_iter().map(TriLabel::from_bool).collect(),
                face_box: None,
            }
        })
        .collect();

    let masked: Vec<Sample> = truth_samples
        .iter()
        .enumerate()
        .map(|(g, s)| {
            let src = g / cfg.n_per_source;
            let mut m = s.clone();
            for (a, l) in m.labels.iter_mut().enumerate() {
                if !cfg.visible(src, a) {
                    *l = TriLabel::Missing;
                }
            }
            m
        })
        .collect();
    Ok(SynthCorpus {
        corpus: Corpus::new(cfg.attribute_ids(), masked)?,
        truth: Corpus::new(cfg.attribute_ids(), truth_samples)?,
    })
}

/// How pair traits are derived from the generated faces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantedRule {
    /// Trait `t` is the sign of a fixed random linear function of `[x_l; x_r]`.
    #[default]
    LinearFused,
    /// Every trait depends only on the face-width ratio `w_l / w_r`.
    ScaleRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairSynthConfig {
    pub n_pairs: usize,
    pub d: usize,
    pub rule: PlantedRule,
    /// Per-trait positive fractions; balanced when absent.
    pub positive_rate: Option<[f64; N_TRAITS]>,
    pub seed: u64,
}

impl Default for PairSynthConfig {
    fn default() -> Self {
        PairSynthConfig {
            n_pairs: 500,
            d: 16,
            rule: PlantedRule::LinearFused,
            positive_rate: None,
            seed: 0,
        }
    }
}

impl PairSynthConfig {
    /// Positive fractions matching the training split of the relation dataset.
    pub fn relation_dataset_imbalance() -> [f64; N_TRAITS] {
        RELATION_TRAIN_COUNTS.map(|(p, n)| p as f64 / (p + n) as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPairs {
    /// One sample per face, with features and boxes and no attributes.
    pub faces: Corpus,
    pub pairs: Vec<FacePair>,
}

const IMG_W: f64 = 640.0;
const IMG_H: f64 = 480.0;

/// Threshold leaving a fraction `rate` of `scores` strictly above it.
fn quantile_threshold(scores: &[f64], rate: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let below = ((1.0 - rate.clamp(0.0, 1.0)) * n as f64).round() as usize;
    match below {
        0 => f64::NEG_INFINITY,
        b if b >= n => f64::INFINITY,
        b => 0.5 * (sorted[b - 1] + sorted[b]),
    }
}

pub fn gen_pairs(cfg: &PairSynthConfig) -> Result<SynthPairs> {
    if cfg.d == 0 {
        return Err(Error::Config("d must be positive".into()));
    }
    let faces: Vec<Sample> = (0..2 * cfg.n_pairs)
        .into_par_iter()
        .map(|f| {
            let mut rng = rng_for(cfg.seed, f as u64);
            let features = (0..cfg.d).map(|_| rng.sample(StandardNormal)).collect();
            let w = rng.random_range(40.0..160.0);
            let h = w * rng.random_range(1.1..1.4);
            let face_box = FaceBox {
                x: rng.random_range(0.0..IMG_W - w),
                y: rng.random_range(0.0..IMG_H - h),
                w,
                h,
                img_w: IMG_W,
                img_h: IMG_H,
            };
            Sample {
                id: format!("face{f:05}"),
                source: String::new(),
                features,
                labels: Vec::new(),
                face_box: Some(face_box),
            }
        })
        .collect();

    let mut rule_rng = rng_for(derive_seed(cfg.seed, &[3]), 0);
    let rule_dirs: Vec<Vec<f64>> = (0..N_TRAITS)
        .map(|_| unit_direction(&mut rule_rng, 2 * cfg.d))
        .collect();
    let scores: Vec<[f64; N_TRAITS]> = (0..cfg.n_pairs)
        .map(|p| {
            let (l, r) = (&faces[2 * p], &faces[2 * p + 1]);
            match cfg.rule {
                PlantedRule::LinearFused => {
                    let z: Vec<f64> = l.features.iter().chain(&r.features).copied().collect();
                    std::array::from_fn(|t| dot(&rule_dirs[t], &z))
                }
                PlantedRule::ScaleRatio => {
                    let (bl, br) = (l.face_box.unwrap(), r.face_box.unwrap());
                    [(bl.w / br.w).ln(); N_TRAITS]
                }
            }
        })
        .collect();
    let thresholds: [f64; N_TRAITS] = match cfg.positive_rate {
        None => [0.0; N_TRAITS],
        Some(rates) => std::array::from_fn(|t| {
            let column: Vec<f64> = scores.iter().map(|s| s[t]).collect();
            quantile_threshold(&column, rates[t])
        }),
    };

    let mut pairs = Vec::with_capacity(cfg.n_pairs);
    for (p, score) in scores.iter().enumerate() {
        let (l, r) = (&faces[2 * p], &faces[2 * p + 1]);
        pairs.push(FacePair {
            id: format!("pair{p:05}"),
            left_id: l.id.clone(),
            right_id: r.id.clone(),
            left: l.features.clone(),
            right: r.features.clone(),
            cue: spatial_cues_for(l.face_box.as_ref().unwrap(), r.face_box.as_ref().unwrap())?,
            traits: std::array::from_fn(|t| TriLabel::from_bool(score[t] > thresholds[t])),
        });
    }
    Ok(SynthPairs {
        faces: Corpus::new(Vec::new(), faces)?,
        pairs,
    })
}
