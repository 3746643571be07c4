//! Per-attribute logistic classifiers trained with missing-label masking,
//! and the co-occurrence prior derived from their weight vectors.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, TriLabel};
use crate::error::{Error, Result};
use crate::math::{dot, logit_cross_entropy, rng_for, sigmoid};

/// Mini-batch SGD with momentum settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Weight each class by the inverse of its frequency among annotated samples.
    pub class_balance: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 1e-4,
            class_balance: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LogisticModel {
    pub fn zeros(dim: usize) -> Self {
        LogisticModel {
            w: vec![0.0; dim],
            b: 0.0,
        }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        dot(&self.w, x) + self.b
    }

    pub fn predict_prob(&self, x: &[f64]) -> f64 {
        predict_prob(self, x)
    }
}

/// `sigmoid(wᵀx + b)`.
pub fn predict_prob(model: &LogisticModel, x: &[f64]) -> f64 {
    sigmoid(model.logit(x))
}

/// Per-class multipliers applied to the cross-entropy of each annotated sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassWeights {
    pub negative: f64,
    pub positive: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        ClassWeights {
            negative: 1.0,
            positive: 1.0,
        }
    }
}

impl ClassWeights {
    pub fn inverse_frequency(labels: &[TriLabel]) -> Self {
        let pos = labels.iter().filter(|&&l| l == TriLabel::Positive).count();
        let neg = labels.iter().filter(|&&l| l == TriLabel::Negative).count();
        let n = (pos + neg) as f64;
        if pos == 0 || neg == 0 {
            return ClassWeights::default();
        }
        ClassWeights {
            negative: n / (2.0 * neg as f64),
            positive: n / (2.0 * pos as f64),
        }
    }

    fn of(&self, positive: bool) -> f64 {
        if positive {
            self.positive
        } else {
            self.negative
        }
    }
}

/// Gradient of [`masked_loss`] with respect to `(w, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticGrad {
    pub w: Vec<f64>,
    pub b: f64,
}

/// Mean weighted cross-entropy over annotated samples plus `decay/2 ·‖w‖²`.
///
/// MISSING labels contribute nothing, neither to the sum nor to the count.
pub fn masked_loss<X: AsRef<[f64]>>(
    model: &LogisticModel,
    xs: &[X],
    labels: &[TriLabel],
    weight_decay: f64,
    class_weights: ClassWeights,
) -> f64 {
    masked_loss_grad(model, xs, labels, weight_decay, class_weights).0
}

pub fn masked_loss_grad<X: AsRef<[f64]>>(
    model: &LogisticModel,
    xs: &[X],
    labels: &[TriLabel],
    weight_decay: f64,
    class_weights: ClassWeights,
) -> (f64, LogisticGrad) {
    let indices: Vec<usize> = (0..xs.len()).collect();
    subset_loss_grad(model, xs, labels, &indices, weight_decay, class_weights)
}

fn subset_loss_grad<X: AsRef<[f64]>>(
    model: &LogisticModel,
    xs: &[X],
    labels: &[TriLabel],
    indices: &[usize],
    weight_decay: f64,
    class_weights: ClassWeights,
) -> (f64, LogisticGrad) {
    let mut grad = LogisticGrad {
        w: vec![0.0; model.w.len()],
        b: 0.0,
    };
    let mut loss = 0.0;
    let mut count = 0usize;
    for &i in indices {
        let Some(y) = labels[i].as_bool() else {
            continue;
        };
        count += 1;
        let x = xs[i].as_ref();
        let z = model.logit(x);
        let target = if y { 1.0 } else { 0.0 };
        let c = class_weights.of(y);
        loss += c * logit_cross_entropy(z, target);
        let r = c * (sigmoid(z) - target);
        for (g, xv) in grad.w.iter_mut().zip(x) {
            *g += r * xv;
        }
        grad.b += r;
    }
    if count > 0 {
        let inv = 1.0 / count as f64;
        loss *= inv;
        grad.w.iter_mut().for_each(|g| *g *= inv);
        grad.b *= inv;
    }
    loss += 0.5 * weight_decay * dot(&model.w, &model.w);
    for (g, w) in grad.w.iter_mut().zip(&model.w) {
        *g += weight_decay * w;
    }
    (loss, grad)
}

/// Trains one masked logistic model, optionally warm-started from `init`.
///
/// `stream` selects an independent shuffling stream so that models trained
/// in parallel stay reproducible.
pub fn train_logistic<X: AsRef<[f64]>>(
    xs: &[X],
    labels: &[TriLabel],
    init: Option<LogisticModel>,
    cfg: &TrainConfig,
    stream: u64,
) -> LogisticModel {
    let dim = xs.first().map_or(0, |x| x.as_ref().len());
    let mut model = init.unwrap_or_else(|| LogisticModel::zeros(dim));
    let class_weights = if cfg.class_balance {
        ClassWeights::inverse_frequency(labels)
    } else {
        ClassWeights::default()
    };
    let mut order: Vec<usize> = (0..labels.len())
        .filter(|&i| !labels[i].is_missing())
        .collect();
    let mut rng = rng_for(cfg.seed, stream);
    let mut vel_w = vec![0.0; dim];
    let mut vel_b = 0.0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (_, g) = subset_loss_grad(
                &model,
                xs,
                labels,
                batch,
                cfg.weight_decay,
                class_weights,
            );
            for ((v, w), gw) in vel_w.iter_mut().zip(model.w.iter_mut()).zip(&g.w) {
                *v = cfg.momentum * *v - cfg.learning_rate * gw;
                *w += *v;
            }
            vel_b = cfg.momentum * vel_b - cfg.learning_rate * g.b;
            model.b += vel_b;
        }
    }
    model
}

/// One logistic model per attribute, in registry order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierBank {
    attributes: Vec<String>,
    models: Vec<LogisticModel>,
}

impl ClassifierBank {
    pub fn new(attributes: Vec<String>, models: Vec<LogisticModel>) -> Result<Self> {
        if attributes.len() != models.len() {
            return Err(Error::Schema(format!(
                "{} attributes but {} models",
                attributes.len(),
                models.len()
            )));
        }
        if let Some(dim) = models.first().map(|m| m.w.len()) {
            if let Some(m) = models.iter().find(|m| m.w.len() != dim) {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: m.w.len(),
                    context: "classifier bank weights".into(),
                });
            }
        }
        Ok(ClassifierBank { attributes, models })
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn models(&self) -> &[LogisticModel] {
        &self.models
    }

    pub fn model(&self, attribute: &str) -> Option<&LogisticModel> {
        self.attributes
            .iter()
            .position(|a| a == attribute)
            .map(|i| &self.models[i])
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Reorders the bank to match `attribute_ids`; every id must be present.
    pub fn aligned_to(&self, attribute_ids: &[String]) -> Result<Self> {
        let models = attribute_ids
            .iter()
            .map(|id| {
                self.model(id)
                    .cloned()
                    .ok_or_else(|| Error::UnknownAttribute(id.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        ClassifierBank::new(attribute_ids.to_vec(), models)
    }

    /// JSON object `attribute-id → {w, b}` in bank order.
    pub fn to_json<W: Write>(&self, writer: W) -> Result<()> {
        let mut map = serde_json::Map::new();
        for (id, m) in self.attributes.iter().zip(&self.models) {
            map.insert(id.clone(), serde_json::to_value(m)?);
        }
        serde_json::to_writer_pretty(writer, &map)?;
        Ok(())
    }

    pub fn from_json<R: Read>(reader: R) -> Result<Self> {
        let map: serde_json::Map<String, serde_json::Value> = serde_json::from_reader(reader)?;
        let mut attributes = Vec::with_capacity(map.len());
        let mut models = Vec::with_capacity(map.len());
        for (id, value) in map {
            attributes.push(id);
            models.push(serde_json::from_value(value)?);
        }
        ClassifierBank::new(attributes, models)
    }
}

fn check_two_classes(id: &str, labels: &[TriLabel]) -> Result<()> {
    let pos = labels.contains(&TriLabel::Positive);
    let neg = labels.contains(&TriLabel::Negative);
    if pos && neg {
        Ok(())
    } else {
        Err(Error::DegenerateAttribute(id.to_string()))
    }
}

/// Stage-1 training: one masked logistic model per registry attribute.
pub fn train_bank(corpus: &Corpus, cfg: &TrainConfig) -> Result<ClassifierBank> {
    fit_bank(corpus, None, cfg)
}

/// Continues training every model of `bank` on the labels of `corpus`.
pub fn refine_bank(
    corpus: &Corpus,
    bank: &ClassifierBank,
    cfg: &TrainConfig,
) -> Result<ClassifierBank> {
    let aligned = bank.aligned_to(&corpus.attribute_ids())?;
    fit_bank(corpus, Some(&aligned), cfg)
}

fn fit_bank(
    corpus: &Corpus,
    init: Option<&ClassifierBank>,
    cfg: &TrainConfig,
) -> Result<ClassifierBank> {
    cfg.validate()?;
    let samples = corpus.samples();
    let columns: Vec<Vec<TriLabel>> = (0..corpus.registry().len())
        .map(|a| corpus.column(a))
        .collect();
    for (attr, col) in corpus.registry().iter().zip(&columns) {
        check_two_classes(&attr.id, col)?;
    }
    let models: Vec<LogisticModel> = columns
        .par_iter()
        .enumerate()
        .map(|(a, col)| {
            let start = init.map(|b| b.models[a].clone());
            train_logistic(samples, col, start, cfg, a as u64)
        })
        .collect();
    ClassifierBank::new(corpus.attribute_ids(), models)
}

/// Pearson correlations between attribute weight vectors (bias excluded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceMatrix {
    pub attributes: Vec<String>,
    pub r: Vec<Vec<f64>>,
}

impl CooccurrenceMatrix {
    /// Matrix with unit diagonal and zeros elsewhere (no co-occurrence evidence).
    pub fn identity(attributes: Vec<String>) -> Self {
        let n = attributes.len();
        let r = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        CooccurrenceMatrix { attributes, r }
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.r[a][b]
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }
}

pub fn cooccurrence(bank: &ClassifierBank) -> Result<CooccurrenceMatrix> {
    let n = bank.len();
    if n < 2 {
        return Err(Error::TooFewAttributes(n));
    }
    let centered: Vec<(Vec<f64>, f64)> = bank
        .attributes
        .iter()
        .zip(&bank.models)
        .map(|(id, m)| {
            let len = m.w.len() as f64;
            let mean = m.w.iter().sum::<f64>() / len;
            let c: Vec<f64> = m.w.iter().map(|v| v - mean).collect();
            let norm = dot(&c, &c).sqrt();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::UndefinedCorrelation(id.clone()));
            }
            Ok((c, norm))
        })
        .collect::<Result<_>>()?;
    let mut r = vec![vec![0.0; n]; n];
    for i in 0..n {
        r[i][i] = 1.0;
        for j in i + 1..n {
            let (ci, ni) = &centered[i];
            let (cj, nj) = &centered[j];
            let v = (dot(ci, cj) / (ni * nj)).clamp(-1.0, 1.0);
            r[i][j] = v;
            r[j][i] = v;
        }
    }
    Ok(CooccurrenceMatrix {
        attributes: bank.attributes.clone(),
        r,
    })
}

/// Signed co-occurrence prior of attribute `a` on one sample, over every
/// other attribute in registry order: `+r` when that attribute is
/// annotated positive, `-r` when negative, `0` when missing.
pub fn prior_q(r: &CooccurrenceMatrix, labels: &[TriLabel], a: usize) -> Vec<f64> {
    labels
        .iter()
        .enumerate()
        .filter(|&(other, _)| other != a)
        .map(|(other, label)| match label {
            TriLabel::Positive => r.get(a, other),
            TriLabel::Negative => -r.get(a, other),
            TriLabel::Missing => 0.0,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;
    use proptest::prelude::*;

    fn one_d_corpus() -> Corpus {
        let mut samples = Vec::new();
        for i in 0..20 {
            let pos = i % 2 == 0;
            samples.push(Sample {
                id: format!("s{i}"),
                source: "a".into(),
                features: vec![if pos { 1.0 } else { -1.0 }],
                labels: vec![TriLabel::from_bool(pos)],
                face_box: None,
            });
        }
        Corpus::new(vec!["g".into()], samples).unwrap()
    }

    #[test]
    fn separable_one_d_trains_positive_weight() {
        let c = one_d_corpus();
        let bank = train_bank(&c, &TrainConfig::default()).unwrap();
        let m = bank.model("g").unwrap();
        assert!(m.w[0] > 0.0);
        let correct = c
            .samples()
            .iter()
            .filter(|s| (m.predict_prob(&s.features) > 0.5) == (s.labels[0] == TriLabel::Positive))
            .count();
        assert_eq!(correct, c.len());
    }

    #[test]
    fn all_missing_attribute_is_degenerate() {
        let c = one_d_corpus();
        let labels = vec![vec![TriLabel::Missing]; c.len()];
        let c = c.with_labels(labels).unwrap();
        assert!(matches!(
            train_bank(&c, &TrainConfig::default()),
            Err(Error::DegenerateAttribute(_))
        ));
    }

    #[test]
    fn predict_prob_closed_forms() {
        let zero = LogisticModel::zeros(3);
        assert_eq!(predict_prob(&zero, &[5.0, -2.0, 1.0]), 0.5);
        let m = LogisticModel { w: vec![1.0], b: 0.0 };
        assert_eq!(predict_prob(&m, &[0.0]), 0.5);
        assert!((predict_prob(&m, &[3f64.ln()]) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn cooccurrence_of_equal_and_opposite_weights() {
        let w = vec![0.3, -1.0, 2.0, 0.5];
        let neg: Vec<f64> = w.iter().map(|v| -v).collect();
        let bank = ClassifierBank::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![
                LogisticModel { w: w.clone(), b: 1.0 },
                LogisticModel { w: w.clone(), b: -7.0 },
                LogisticModel { w: neg, b: 0.0 },
            ],
        )
        .unwrap();
        let r = cooccurrence(&bank).unwrap();
        assert!((r.get(0, 1) - 1.0).abs() < 1e-12);
        assert!((r.get(0, 2) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn cooccurrence_errors() {
        let single = ClassifierBank::new(vec!["a".into()], vec![LogisticModel::zeros(2)]).unwrap();
        assert!(matches!(cooccurrence(&single), Err(Error::TooFewAttributes(1))));
        let flat = ClassifierBank::new(
            vec!["a".into(), "b".into()],
            vec![
                LogisticModel { w: vec![1.0, 1.0], b: 0.0 },
                LogisticModel { w: vec![1.0, 2.0], b: 0.0 },
            ],
        )
        .unwrap();
        assert!(matches!(
            cooccurrence(&flat),
            Err(Error::UndefinedCorrelation(id)) if id == "a"
        ));
    }

    #[test]
    fn prior_follows_annotation_sign() {
        // happy = 0, smiling = 1 with r = 0.3
        let r = CooccurrenceMatrix {
            attributes: vec!["happy".into(), "smiling".into()],
            r: vec![vec![1.0, 0.3], vec![0.3, 1.0]],
        };
        let q = |l| prior_q(&r, &[TriLabel::Missing, l], 0);
        assert_eq!(q(TriLabel::Positive), vec![0.3]);
        assert_eq!(q(TriLabel::Negative), vec![-0.3]);
        assert_eq!(q(TriLabel::Missing), vec![0.0]);
    }

    #[test]
    fn bank_json_round_trip_keeps_order() {
        let bank = ClassifierBank::new(
            vec!["zeta".into(), "alpha".into()],
            vec![
                LogisticModel { w: vec![0.1, 1.0 / 3.0], b: -0.25 },
                LogisticModel { w: vec![2.0, -1e-17], b: 0.0 },
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        bank.to_json(&mut buf).unwrap();
        let back = ClassifierBank::from_json(buf.as_slice()).unwrap();
        assert_eq!(back, bank);
    }

    fn central_difference(
        f: impl Fn(&LogisticModel) -> f64,
        model: &LogisticModel,
        step: f64,
    ) -> LogisticGrad {
        let mut g = LogisticGrad {
            w: vec![0.0; model.w.len()],
            b: 0.0,
        };
        for j in 0..model.w.len() {
            let mut plus = model.clone();
            let mut minus = model.clone();
            plus.w[j] += step;
            minus.w[j] -= step;
            g.w[j] = (f(&plus) - f(&minus)) / (2.0 * step);
        }
        let mut plus = model.clone();
        let mut minus = model.clone();
        plus.b += step;
        minus.b -= step;
        g.b = (f(&plus) - f(&minus)) / (2.0 * step);
        g
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let xs = vec![vec![0.5, -1.2, 2.0], vec![-0.3, 0.8, 0.1], vec![1.5, 0.2, -0.7]];
        let labels = [TriLabel::Positive, TriLabel::Missing, TriLabel::Negative];
        let model = LogisticModel {
            w: vec![0.4, -0.2, 0.9],
            b: 0.1,
        };
        let cw = ClassWeights { negative: 1.5, positive: 0.75 };
        let (_, g) = masked_loss_grad(&model, &xs, &labels, 0.01, cw);
        let fd = central_difference(|m| masked_loss(m, &xs, &labels, 0.01, cw), &model, 1e-5);
        for (a, b) in g.w.iter().chain([&g.b]).zip(fd.w.iter().chain([&fd.b])) {
            assert!((a - b).abs() / a.abs().max(b.abs()).max(1e-8) < 1e-4);
        }
    }

    proptest! {
        #[test]
        fn masked_loss_equals_loss_on_annotated_subset(
            rows in proptest::collection::vec(
                (proptest::collection::vec(-3.0f64..3.0, 3), 0u8..3), 1..20),
            w in proptest::collection::vec(-2.0f64..2.0, 3),
            b in -1.0f64..1.0,
        ) {
            let model = LogisticModel { w, b };
            let xs: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
            let labels: Vec<TriLabel> = rows.iter().map(|r| match r.1 {
                0 => TriLabel::Negative,
                1 => TriLabel::Positive,
                _ => TriLabel::Missing,
            }).collect();
            let (sub_x, sub_l): (Vec<_>, Vec<_>) = xs.iter().cloned().zip(labels.iter().copied())
                .filter(|(_, l)| !l.is_missing()).unzip();
            let full = masked_loss(&model, &xs, &labels, 1e-3, ClassWeights::default());
            let sub = masked_loss(&model, &sub_x, &sub_l, 1e-3, ClassWeights::default());
            prop_assert!((full - sub).abs() <= 1e-12 * full.abs().max(1.0));
        }

        #[test]
        fn cooccurrence_is_symmetric_with_unit_diagonal(
            ws in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 4), 2..6)
        ) {
            let ids: Vec<String> = (0..ws.len()).map(|i| format!("a{i}")).collect();
            let models = ws.into_iter().map(|w| LogisticModel { w, b: 0.0 }).collect();
            let bank = ClassifierBank::new(ids, models).unwrap();
            if let Ok(r) = cooccurrence(&bank) {
                for i in 0..r.len() {
                    prop_assert_eq!(r.get(i, i), 1.0);
                    for j in 0..r.len() {
                        prop_assert_eq!(r.get(i, j), r.get(j, i));
                        prop_assert!((-1.0..=1.0).contains(&r.get(i, j)));
                    }
                }
            }
        }

        #[test]
        fn prior_is_odd_under_label_flip(rv in -1.0f64..1.0) {
            let r = CooccurrenceMatrix {
                attributes: vec!["a".into(), "b".into()],
                r: vec![vec![1.0, rv], vec![rv, 1.0]],
            };
            let pos = prior_q(&r, &[TriLabel::Missing, TriLabel::Positive], 0);
            let neg = prior_q(&r, &[TriLabel::Missing, TriLabel::Negative], 0);
            prop_assert_eq!(pos[0], -neg[0]);
        }

        #[test]
        fn predict_prob_is_monotone_in_logit(x1 in -30.0f64..30.0, dx in 0.0f64..5.0) {
            let m = LogisticModel { w: vec![1.0], b: 0.0 };
            prop_assert!(predict_prob(&m, &[x1]) <= predict_prob(&m, &[x1 + dx]));
        }
    }
}
