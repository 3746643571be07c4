//! Pairwise relation-trait head.
//!
//! Two face feature vectors are concatenated and projected by one shared
//! matrix `W_R` into a fused representation `x_g`. Each of the eight traits
//! is an independent logistic output over `[x_s; x_g]`, where `x_s` is the
//! 11-dimensional spatial cue of the face pair.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, FaceBox, TriLabel};
use crate::error::{Error, Result};
use crate::math::{dot, fmt_f64, logit_cross_entropy, rng_for, sigmoid};

pub const TRAITS: [&str; 8] = [
    "dominant",
    "competitive",
    "trusting",
    "warm",
    "friendly",
    "involved",
    "demonstrative",
    "assured",
];
pub const N_TRAITS: usize = TRAITS.len();
pub const CUE_DIM: usize = 11;

pub const DEFAULT_INPUT_DIM: usize = 1024;
pub const DEFAULT_FUSED_DIM: usize = 256;
pub const DEFAULT_SMOOTHING_WINDOW: usize = 5;

/// Axis-aligned box: upper-left corner, width and height in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<&FaceBox> for Rect {
    fn from(b: &FaceBox) -> Self {
        Rect {
            x: b.x,
            y: b.y,
            w: b.w,
            h: b.h,
        }
    }
}

/// `(x_l, y_l, w_l, h_l, x_r, y_r, w_r, h_r, (x_l-x_r)/w_l, (y_l-y_r)/h_l, w_l/w_r)`
/// with x and w divided by the image width, y and h by the image height.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpatialCue(pub [f64; CUE_DIM]);

pub fn spatial_cues(left: Rect, right: Rect, img_w: f64, img_h: f64) -> Result<SpatialCue> {
    for (name, v) in [
        ("left width", left.w),
        ("left height", left.h),
        ("right width", right.w),
        ("right height", right.h),
        ("image width", img_w),
        ("image height", img_h),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::NonPositiveBox(format!("{name} = {v}")));
        }
    }
    let (xl, yl, wl, hl) = (left.x / img_w, left.y / img_h, left.w / img_w, left.h / img_h);
    let (xr, yr, wr, hr) = (
        right.x / img_w,
        right.y / img_h,
        right.w / img_w,
        right.h / img_h,
    );
    Ok(SpatialCue([
        xl,
        yl,
        wl,
        hl,
        xr,
        yr,
        wr,
        hr,
        (xl - xr) / wl,
        (yl - yr) / hl,
        wl / wr,
    ]))
}

/// Cue for two detected faces; the image size is taken from the left box.
pub fn spatial_cues_for(left: &FaceBox, right: &FaceBox) -> Result<SpatialCue> {
    spatial_cues(left.into(), right.into(), left.img_w, left.img_h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FacePair {
    pub id: String,
    pub left_id: String,
    pub right_id: String,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub cue: SpatialCue,
    pub traits: [TriLabel; N_TRAITS],
}

/// Elementwise map applied to the projected features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Identity,
    Tanh,
}

impl Activation {
    fn apply(self, u: f64) -> f64 {
        match self {
            Activation::Identity => u,
            Activation::Tanh => u.tanh(),
        }
    }

    /// Derivative expressed through the activated value.
    fn derivative(self, activated: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - activated * activated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationDims {
    pub input_dim: usize,
    pub fused_dim: usize,
    pub cue_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationModel {
    pub dims: RelationDims,
    /// `(2 · input_dim) × fused_dim`, row-major.
    #[serde(rename = "W_R")]
    pub projection: Vec<f64>,
    /// One weight vector of length `cue_dim + fused_dim` per trait, cue weights first.
    pub traits: Vec<Vec<f64>>,
    #[serde(default)]
    pub activation: Activation,
    /// When false the cue block of the trait input is zeroed.
    #[serde(default = "default_true")]
    pub use_spatial: bool,
}

fn default_true() -> bool {
    true
}

impl RelationModel {
    pub fn zeros(input_dim: usize, fused_dim: usize) -> Self {
        RelationModel {
            dims: RelationDims {
                input_dim,
                fused_dim,
                cue_dim: CUE_DIM,
            },
            projection: vec![0.0; 2 * input_dim * fused_dim],
            traits: vec![vec![0.0; CUE_DIM + fused_dim]; N_TRAITS],
            activation: Activation::Identity,
            use_spatial: true,
        }
    }

    /// Projection entries drawn from N(0, 1/(2d)) (standard deviation
    /// `1/√(2d)`), trait weights zero.
    pub fn init(input_dim: usize, fused_dim: usize, seed: u64) -> Self {
        let mut model = RelationModel::zeros(input_dim, fused_dim);
        let scale = 1.0 / ((2 * input_dim) as f64).sqrt();
        let mut rng = rng_for(seed, 0);
        for w in &mut model.projection {
            *w = rng.sample::<f64, _>(StandardNormal) * scale;
        }
        model
    }

    pub fn trait_dim(&self) -> usize {
        CUE_DIM + self.dims.fused_dim
    }

    fn check(&self) -> Result<()> {
        let d = &self.dims;
        if d.cue_dim != CUE_DIM {
            return Err(Error::Schema(format!("cue_dim must be {CUE_DIM}")));
        }
        if self.projection.len() != 2 * d.input_dim * d.fused_dim {
            return Err(Error::DimensionMismatch {
                expected: 2 * d.input_dim * d.fused_dim,
                found: self.projection.len(),
                context: "relation projection".into(),
            });
        }
        if self.traits.len() != N_TRAITS {
            return Err(Error::Schema(format!(
                "expected {N_TRAITS} trait vectors, found {}",
                self.traits.len()
            )));
        }
        if let Some(t) = self.traits.iter().find(|t| t.len() != self.trait_dim()) {
            return Err(Error::DimensionMismatch {
                expected: self.trait_dim(),
                found: t.len(),
                context: "trait weights".into(),
            });
        }
        let finite = self
            .projection
            .iter()
            .chain(self.traits.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Schema("relation model has non-finite weights".into()));
        }
        Ok(())
    }

    fn check_pair(&self, left: &[f64], right: &[f64]) -> Result<()> {
        for v in [left, right] {
            if v.len() != self.dims.input_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dims.input_dim,
                    found: v.len(),
                    context: "relation input features".into(),
                });
            }
        }
        Ok(())
    }

    pub fn to_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer(writer, self)?;
        Ok(())
    }

    pub fn from_json<R: Read>(reader: R) -> Result<Self> {
        let m: RelationModel = serde_json::from_reader(reader)?;
        m.check()?;
        Ok(m)
    }
}

/// Pre-activation `W_Rᵀ [x_l; x_r]`.
fn project(model: &RelationModel, left: &[f64], right: &[f64]) -> Vec<f64> {
    let k = model.dims.fused_dim;
    let mut u = vec![0.0; k];
    for (r, &z) in left.iter().chain(right).enumerate() {
        if z != 0.0 {
            let row = &model.projection[r * k..(r + 1) * k];
            for (acc, w) in u.iter_mut().zip(row) {
                *acc += z * w;
            }
        }
    }
    u
}

/// Shared representation `x_g` of a face pair.
pub fn fuse(left: &[f64], right: &[f64], model: &RelationModel) -> Result<Vec<f64>> {
    model.check_pair(left, right)?;
    let act = model.activation;
    Ok(project(model, left, right)
        .into_iter()
        .map(|u| act.apply(u))
        .collect())
}

fn trait_input(model: &RelationModel, cue: &SpatialCue, fused: &[f64]) -> Vec<f64> {
    let mut f = Vec::with_capacity(CUE_DIM + fused.len());
    if model.use_spatial {
        f.extend_from_slice(&cue.0);
    } else {
        f.extend_from_slice(&[0.0; CUE_DIM]);
    }
    f.extend_from_slice(fused);
    f
}

/// Independent probabilities `sigmoid(w_tᵀ [x_s; x_g])` for the eight traits.
pub fn predict_traits(pair: &FacePair, model: &RelationModel) -> Result<[f64; N_TRAITS]> {
    let fused = fuse(&pair.left, &pair.right, model)?;
    let f = trait_input(model, &pair.cue, &fused);
    let mut out = [0.0; N_TRAITS];
    for (p, w) in out.iter_mut().zip(&model.traits) {
        *p = sigmoid(dot(w, &f));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelationTrainConfig {
    pub fused_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub activation: Activation,
    pub use_spatial: bool,
    /// Keep `W_R` at its initial value and train only the trait weights.
    pub freeze_projection: bool,
}

impl Default for RelationTrainConfig {
    fn default() -> Self {
        RelationTrainConfig {
            fused_dim: DEFAULT_FUSED_DIM,
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 1e-4,
            activation: Activation::Identity,
            use_spatial: true,
            freeze_projection: false,
        }
    }
}

impl RelationTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fused_dim == 0 {
            return Err(Error::Config("fused_dim must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationGrad {
    pub projection: Vec<f64>,
    pub traits: Vec<Vec<f64>>,
}

/// Batch objective: for every trait, mean cross-entropy over the pairs that
/// annotate it, summed over traits, plus `decay/2` times the squared norms
/// of all trait weights and `W_R`.
pub fn loss_and_grad(
    model: &RelationModel,
    pairs: &[&FacePair],
    weight_decay: f64,
) -> (f64, RelationGrad) {
    let k = model.dims.fused_dim;
    let act = model.activation;
    let mut grad = RelationGrad {
        projection: vec![0.0; model.projection.len()],
        traits: vec![vec![0.0; model.trait_dim()]; N_TRAITS],
    };
    let mut counts = [0usize; N_TRAITS];
    for p in pairs {
        for (c, l) in counts.iter_mut().zip(&p.traits) {
            *c += usize::from(!l.is_missing());
        }
    }
    let mut loss = 0.0;
    for p in pairs {
        let fused: Vec<f64> = project(model, &p.left, &p.right)
            .into_iter()
            .map(|u| act.apply(u))
            .collect();
        let f = trait_input(model, &p.cue, &fused);
        let mut d_fused = vec![0.0; k];
        for t in 0..N_TRAITS {
            let Some(y) = p.traits[t].as_bool() else {
                continue;
            };
            let target = if y { 1.0 } else { 0.0 };
            let inv = 1.0 / counts[t] as f64;
            let w = &model.traits[t];
            let z = dot(w, &f);
            loss += inv * logit_cross_entropy(z, target);
            let r = inv * (sigmoid(z) - target);
            for (g, fv) in grad.traits[t].iter_mut().zip(&f) {
                *g += r * fv;
            }
            for (dv, wv) in d_fused.iter_mut().zip(&w[CUE_DIM..]) {
                *dv += r * wv;
            }
        }
        for (dv, g) in d_fused.iter_mut().zip(&fused) {
            *dv *= act.derivative(*g);
        }
        for (r, &z) in p.left.iter().chain(&p.right).enumerate() {
            if z != 0.0 {
                for (g, dv) in grad.projection[r * k..(r + 1) * k].iter_mut().zip(&d_fused) {
                    *g += z * dv;
                }
            }
        }
    }
    let sq: f64 = model
        .traits
        .iter()
        .flatten()
        .chain(&model.projection)
        .map(|v| v * v)
        .sum();
    loss += 0.5 * weight_decay * sq;
    for (g, w) in grad
        .traits
        .iter_mut()
        .flatten()
        .zip(model.traits.iter().flatten())
    {
        *g += weight_decay * w;
    }
    for (g, w) in grad.projection.iter_mut().zip(&model.projection) {
        *g += weight_decay * w;
    }
    (loss, grad)
}

/// Mini-batch SGD with momentum from `model`, without class checks.
pub fn fit_relation(
    mut model: RelationModel,
    pairs: &[FacePair],
    cfg: &RelationTrainConfig,
    seed: u64,
) -> Result<RelationModel> {
    cfg.validate()?;
    for p in pairs {
        model.check_pair(&p.left, &p.right)?;
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = rng_for(seed, 1);
    let mut vel_proj = vec![0.0; model.projection.len()];
    let mut vel_traits = vec![vec![0.0; model.trait_dim()]; N_TRAITS];
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let refs: Vec<&FacePair> = batch.iter().map(|&i| &pairs[i]).collect();
            let (_, g) = loss_and_grad(&model, &refs, cfg.weight_decay);
            for t in 0..N_TRAITS {
                for ((v, w), gw) in vel_traits[t]
                    .iter_mut()
                    .zip(model.traits[t].iter_mut())
                    .zip(&g.traits[t])
                {
                    *v = cfg.momentum * *v - cfg.learning_rate * gw;
                    *w += *v;
                }
            }
            if !cfg.freeze_projection {
                for ((v, w), gw) in vel_proj
                    .iter_mut()
                    .zip(model.projection.iter_mut())
                    .zip(&g.projection)
                {
                    *v = cfg.momentum * *v - cfg.learning_rate * gw;
                    *w += *v;
                }
            }
        }
    }
    Ok(model)
}

/// Initialises a model for the pairs' feature dimension and trains it.
pub fn train_relation(
    pairs: &[FacePair],
    cfg: &RelationTrainConfig,
    seed: u64,
) -> Result<RelationModel> {
    let input_dim = pairs.first().map_or(0, |p| p.left.len());
    for (t, name) in TRAITS.iter().enumerate() {
        let pos = pairs.iter().any(|p| p.traits[t] == TriLabel::Positive);
        let neg = pairs.iter().any(|p| p.traits[t] == TriLabel::Negative);
        if !(pos && neg) {
            return Err(Error::DegenerateTrait(name.to_string()));
        }
    }
    let mut model = RelationModel::init(input_dim, cfg.fused_dim, seed);
    model.activation = cfg.activation;
    model.use_spatial = cfg.use_spatial;
    fit_relation(model, pairs, cfg, seed)
}

/// Centred moving average per trait; near the ends the window shrinks to
/// the frames that exist.
pub fn temporal_smooth(probs: &[[f64; N_TRAITS]], window: usize) -> Result<Vec<[f64; N_TRAITS]>> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "smoothing window must be odd and positive, got {window}"
        )));
    }
    let half = window / 2;
    let n = probs.len();
    Ok((0..n)
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(n);
            let mut acc = [0.0; N_TRAITS];
            for frame in &probs[lo..hi] {
                for (a, v) in acc.iter_mut().zip(frame) {
                    *a += v;
                }
            }
            let count = (hi - lo) as f64;
            acc.map(|a| a / count)
        })
        .collect())
}

/// Reads `id,left_id,right_id,<traits...>` and resolves features and boxes from `corpus`.
///
/// Pairs whose faces lack boxes get an all-zero cue.
pub fn read_pairs<R: Read>(reader: R, corpus: &Corpus) -> Result<Vec<FacePair>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    let expected: Vec<&str> = ["id", "left_id", "right_id"]
        .into_iter()
        .chain(TRAITS)
        .collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Schema(format!(
            "pair file header must be `{}`",
            expected.join(",")
        )));
    }
    let index: HashMap<&str, usize> = corpus.id_index();
    let samples = corpus.samples();
    let mut out = Vec::new();
    for record in rdr.records() {
        let r = record?;
        let face = |id: &str| {
            index
                .get(id)
                .map(|&i| &samples[i])
                .ok_or_else(|| Error::UnknownSample(id.to_string()))
        };
        let left = face(&r[1])?;
        let right = face(&r[2])?;
        let cue = match (&left.face_box, &right.face_box) {
            (Some(bl), Some(br)) => spatial_cues_for(bl, br)?,
            _ => SpatialCue::default(),
        };
        let mut traits = [TriLabel::Missing; N_TRAITS];
        for (t, slot) in traits.iter_mut().enumerate() {
            *slot = TriLabel::parse_cell(&r[3 + t])?;
        }
        out.push(FacePair {
            id: r[0].to_string(),
            left_id: left.id.clone(),
            right_id: right.id.clone(),
            left: left.features.clone(),
            right: right.features.clone(),
            cue,
            traits,
        });
    }
    Ok(out)
}

pub fn write_pairs<W: Write>(pairs: &[FacePair], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let header: Vec<&str> = ["id", "left_id", "right_id"]
        .into_iter()
        .chain(TRAITS)
        .collect();
    wtr.write_record(&header)?;
    for p in pairs {
        let mut row = vec![p.id.as_str(), p.left_id.as_str(), p.right_id.as_str()];
        row.extend(p.traits.iter().map(|l| l.as_cell()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes `id,trait,probability`, one row per pair and trait.
pub fn write_predictions<W: Write>(
    ids: &[String],
    probs: &[[f64; N_TRAITS]],
    writer: W,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["id", "trait", "probability"])?;
    for (id, p) in ids.iter().zip(probs) {
        for (name, v) in TRAITS.iter().zip(p) {
            wtr.write_record([id.as_str(), name, &fmt_f64(*v)])?;
        }
    }
    wtr.flush()?;
    Ok(())
}
