//! Attribute propagation in a pairwise binary MRF.
//!
//! Each sample is a node carrying one binary attribute. The unary term is a
//! class-conditional Gaussian over the sample's features times a sigmoid
//! prior per co-occurring attribute; the pairwise term rewards agreement
//! with affinity neighbours by `exp(±v)`. Inference alternates synchronous
//! mean-field sweeps (neighbour labels frozen from the previous sweep) with
//! re-estimation of the Gaussians, and annotated labels never move.

use std::f64::consts::PI;
use std::io::Write;

use log::{debug, warn};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::AffinityGraph;
use crate::classifiers::{
    cooccurrence, prior_q, refine_bank, ClassifierBank, CooccurrenceMatrix, TrainConfig,
};
use crate::data::{Corpus, TriLabel, PSEUDO_SUFFIX, POSTERIOR_SUFFIX};
use crate::error::{Error, Result};
use crate::math::{derive_seed, fmt_f64, log_sigmoid, rng_for, sq_dist, two_class_posterior};

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const FULL_COVARIANCE_RIDGE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKind {
    #[default]
    Diagonal,
    /// Full covariance with `FULL_COVARIANCE_RIDGE · I` added before factorising.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
enum Covariance {
    Diagonal(Vec<f64>),
    /// Lower Cholesky factor, row-major `d × d`.
    Full(Vec<f64>),
}

/// One class-conditional Gaussian with its log-normaliser cached.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassGaussian {
    mean: Vec<f64>,
    cov: Covariance,
    log_norm: f64,
}

impl ClassGaussian {
    /// Diagonal Gaussian; variances below the floor are raised to it.
    pub fn diagonal(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                found: var.len(),
                context: "Gaussian variances".into(),
            });
        }
        let var: Vec<f64> = var.into_iter().map(|v| v.max(VARIANCE_FLOOR)).collect();
        let log_norm = -0.5 * var.iter().map(|v| (2.0 * PI * v).ln()).sum::<f64>();
        Ok(ClassGaussian {
            mean,
            cov: Covariance::Diagonal(var),
            log_norm,
        })
    }

    /// Full Gaussian from a row-major covariance; the ridge is added here.
    pub fn full(mean: Vec<f64>, mut cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                found: cov.len(),
                context: "Gaussian covariance".into(),
            });
        }
        for j in 0..d {
            cov[j * d + j] += FULL_COVARIANCE_RIDGE;
        }
        let chol = cholesky(&cov, d)
            .ok_or_else(|| Error::Schema("covariance is not positive definite".into()))?;
        let log_det: f64 = (0..d).map(|j| 2.0 * chol[j * d + j].ln()).sum();
        let log_norm = -0.5 * (d as f64 * (2.0 * PI).ln() + log_det);
        Ok(ClassGaussian {
            mean,
            cov: Covariance::Full(chol),
            log_norm,
        })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Per-dimension variances (diagonal of the covariance).
    pub fn variances(&self) -> Vec<f64> {
        match &self.cov {
            Covariance::Diagonal(v) => v.clone(),
            Covariance::Full(l) => {
                let d = self.mean.len();
                (0..d)
                    .map(|i| (0..=i).map(|k| l[i * d + k] * l[i * d + k]).sum())
                    .collect()
            }
        }
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        match &self.cov {
            Covariance::Diagonal(var) => {
                let quad: f64 = x
                    .iter()
                    .zip(&self.mean)
                    .zip(var)
                    .map(|((xi, mi), vi)| (xi - mi) * (xi - mi) / vi)
                    .sum();
                self.log_norm - 0.5 * quad
            }
            Covariance::Full(l) => {
                let d = self.mean.len();
                // forward substitution: L z = x - μ
                let mut z = vec![0.0; d];
                for i in 0..d {
                    let mut acc = x[i] - self.mean[i];
                    for k in 0..i {
                        acc -= l[i * d + k] * z[k];
                    }
                    z[i] = acc / l[i * d + i];
                }
                self.log_norm - 0.5 * z.iter().map(|v| v * v).sum::<f64>()
            }
        }
    }
}

fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// Gaussians for the negative (`[0]`) and positive (`[1]`) class.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub classes: [ClassGaussian; 2],
}

impl GaussianParams {
    pub fn class(&self, positive: bool) -> &ClassGaussian {
        &self.classes[usize::from(positive)]
    }
}

/// Maximum-likelihood class means and (population) covariances.
pub fn em_update<X: AsRef<[f64]>>(
    xs: &[X],
    labels: &[bool],
    kind: CovarianceKind,
) -> Result<GaussianParams> {
    let fit = |class: bool| -> Result<ClassGaussian> {
        let members: Vec<&[f64]> = xs
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == class)
            .map(|(x, _)| x.as_ref())
            .collect();
        if members.is_empty() {
            return Err(Error::EmptyClass(u8::from(class)));
        }
        let d = members[0].len();
        let count = members.len() as f64;
        let mut mean = vec![0.0; d];
        for x in &members {
            for (m, v) in mean.iter_mut().zip(*x) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        match kind {
            CovarianceKind::Diagonal => {
                let mut var = vec![0.0; d];
                for x in &members {
                    for ((s, v), m) in var.iter_mut().zip(*x).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= count);
                ClassGaussian::diagonal(mean, var)
            }
            CovarianceKind::Full => {
                let mut cov = vec![0.0; d * d];
                for x in &members {
                    for i in 0..d {
                        let di = x[i] - mean[i];
                        for j in 0..=i {
                            cov[i * d + j] += di * (x[j] - mean[j]);
                        }
                    }
                }
                for i in 0..d {
                    for j in 0..=i {
                        let v = cov[i * d + j] / count;
                        cov[i * d + j] = v;
                        cov[j * d + i] = v;
                    }
                }
                ClassGaussian::full(mean, cov)
            }
        }
    };
    Ok(GaussianParams {
        classes: [fit(false)?, fit(true)?],
    })
}

/// `Σ_{a'} ln S_ℓ(q_{a'})` with `S_1 = sigmoid` and `S_0 = 1 - sigmoid`.
pub fn prior_log(q: &[f64], positive: bool) -> f64 {
    q.iter()
        .map(|&v| if positive { log_sigmoid(v) } else { log_sigmoid(-v) })
        .sum()
}

/// Log unary potential: Gaussian log-density plus co-occurrence prior.
pub fn unary_log(x: &[f64], q: &[f64], positive: bool, params: &GaussianParams) -> f64 {
    params.class(positive).log_density(x) + prior_log(q, positive)
}

/// `+v` for agreeing labels, `-v` otherwise.
pub fn pairwise_log(v: f64, yi: bool, yj: bool) -> f64 {
    if yi == yj {
        v
    } else {
        -v
    }
}

/// Two-class conditional of node `i` given its unary log-potentials and
/// neighbour labels held at `labels`.
pub fn node_posterior(
    i: usize,
    unary: [f64; 2],
    labels: &[bool],
    graph: &AffinityGraph,
) -> [f64; 2] {
    let mut score = unary;
    for &(j, v) in graph.neighbors(i) {
        score[0] += pairwise_log(v, false, labels[j]);
        score[1] += pairwise_log(v, true, labels[j]);
    }
    two_class_posterior(score[0], score[1])
}

/// Mean-field posterior `[p(y_i = 0 | ·), p(y_i = 1 | ·)]`.
pub fn mean_field_posterior(
    i: usize,
    labels: &[bool],
    graph: &AffinityGraph,
    x: &[f64],
    q: &[f64],
    params: &GaussianParams,
) -> [f64; 2] {
    let unary = [unary_log(x, q, false, params), unary_log(x, q, true, params)];
    node_posterior(i, unary, labels, graph)
}

/// Fills unlabeled nodes by majority vote of their `k` nearest labeled nodes.
///
/// Vote ties go to the class more frequent among labeled nodes, then to 1.
pub fn init_knn<X: AsRef<[f64]> + Sync>(
    xs: &[X],
    labels: &[Option<bool>],
    k: usize,
) -> Result<Vec<bool>> {
    let labeled: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_some()).collect();
    if labeled.is_empty() {
        return Err(Error::NoLabeledData);
    }
    if k == 0 {
        return Err(Error::Config("k_init must be positive".into()));
    }
    let positives = labeled.iter().filter(|&&i| labels[i] == Some(true)).count();
    let negatives = labeled.len() - positives;
    let fallback = positives >= negatives;
    let k = k.min(labeled.len());
    Ok((0..labels.len())
        .into_par_iter()
        .map(|i| {
            if let Some(l) = labels[i] {
                return l;
            }
            let xi = xs[i].as_ref();
            let mut cand: Vec<(f64, usize)> = labeled
                .iter()
                .map(|&j| (sq_dist(xi, xs[j].as_ref()), j))
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, cmp);
            }
            let votes = cand[..k].iter().filter(|&&(_, j)| labels[j] == Some(true)).count();
            match (2 * votes).cmp(&k) {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Less => false,
                std::cmp::Ordering::Equal => fallback,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    /// Draw each unlabeled label from Bernoulli(posterior).
    #[default]
    Stochastic,
    /// Assign the posterior argmax (ties to 1).
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagationConfig {
    pub k_init: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub mode: LabelMode,
    pub covariance: CovarianceKind,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            k_init: 10,
            tol: 1e-4,
            max_iters: 50,
            mode: LabelMode::Stochastic,
            covariance: CovarianceKind::Diagonal,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_init == 0 {
            return Err(Error::Config("k_init must be positive".into()));
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(Error::Config("tol must be a nonnegative number".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of propagating one attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationResult {
    pub labels: Vec<bool>,
    /// `p(y_i = 1)`; annotated nodes report their label as 0 or 1.
    pub posteriors: Vec<f64>,
    pub annotated: Vec<bool>,
    /// Labels right after kNN initialisation.
    pub initial_labels: Vec<bool>,
    pub iterations: usize,
    pub converged: bool,
}

/// Source of per-node unary log-potentials that may be refit to the current labels.
pub trait UnaryModel: Sync {
    fn refit(&mut self, labels: &[bool]) -> Result<()>;
    fn unary(&self, i: usize) -> [f64; 2];
}

/// Unaries that never change.
pub struct FixedUnary(pub Vec<[f64; 2]>);

impl UnaryModel for FixedUnary {
    fn refit(&mut self, _labels: &[bool]) -> Result<()> {
        Ok(())
    }

    fn unary(&self, i: usize) -> [f64; 2] {
        self.0[i]
    }
}

/// Class-conditional Gaussian likelihood times co-occurrence prior, refit by EM.
pub struct GaussianUnary<'a, X> {
    xs: &'a [X],
    q: &'a [Vec<f64>],
    kind: CovarianceKind,
    params: Option<GaussianParams>,
}

impl<'a, X: AsRef<[f64]>> GaussianUnary<'a, X> {
    pub fn new(xs: &'a [X], q: &'a [Vec<f64>], kind: CovarianceKind) -> Self {
        GaussianUnary {
            xs,
            q,
            kind,
            params: None,
        }
    }

    pub fn params(&self) -> Option<&GaussianParams> {
        self.params.as_ref()
    }
}

impl<X: AsRef<[f64]> + Sync> UnaryModel for GaussianUnary<'_, X> {
    fn refit(&mut self, labels: &[bool]) -> Result<()> {
        self.params = Some(em_update(self.xs, labels, self.kind)?);
        Ok(())
    }

    fn unary(&self, i: usize) -> [f64; 2] {
        let params = self.params.as_ref().expect("refit before unary");
        let x = self.xs[i].as_ref();
        let q = &self.q[i];
        [unary_log(x, q, false, params), unary_log(x, q, true, params)]
    }
}

/// Alternates posterior sweeps, label assignment and unary refits from `init`.
pub fn run_sweeps<U: UnaryModel>(
    model: &mut U,
    graph: &AffinityGraph,
    annotated: &[Option<bool>],
    init: Vec<bool>,
    cfg: &PropagationConfig,
    seed: u64,
) -> Result<PropagationResult> {
    let n = annotated.len();
    if graph.n() != n || init.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: if graph.n() != n { graph.n() } else { init.len() },
            context: "propagation nodes".into(),
        });
    }
    let mut labels = init.clone();
    let mut posteriors: Vec<f64> = annotated
        .iter()
        .map(|a| a.map_or(f64::NAN, |l| if l { 1.0 } else { 0.0 }))
        .collect();
    let mut rng = rng_for(seed, 0);
    let mut iterations = 0;
    let mut converged = annotated.iter().all(Option::is_some);
    if !converged {
        model.refit(&labels)?;
    }
    while !converged && iterations < cfg.max_iters {
        let fresh: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| match annotated[i] {
                Some(_) => posteriors[i],
                None => node_posterior(i, model.unary(i), &labels, graph)[1],
            })
            .collect();
        let delta = (0..n)
            .filter(|&i| annotated[i].is_none())
            .map(|i| {
                let d = (fresh[i] - posteriors[i]).abs();
                if d.is_nan() {
                    f64::INFINITY
                } else {
                    d
                }
            })
            .fold(0.0, f64::max);
        for i in 0..n {
            if annotated[i].is_none() {
                labels[i] = match cfg.mode {
                    LabelMode::Deterministic => fresh[i] >= 0.5,
                    LabelMode::Stochastic => rng.random::<f64>() < fresh[i],
                };
            }
        }
        posteriors = fresh;
        iterations += 1;
        model.refit(&labels)?;
        converged = delta < cfg.tol;
        debug!("sweep {iterations}: max posterior change {delta:.3e}");
    }
    if !converged {
        warn!(
            "propagation did not converge within {} sweeps",
            cfg.max_iters
        );
    }
    Ok(PropagationResult {
        labels,
        posteriors,
        annotated: annotated.iter().map(Option::is_some).collect(),
        initial_labels: init,
        iterations,
        converged,
    })
}

/// Completes one attribute column.
///
/// `q[i]` is the co-occurrence prior vector of sample `i` (empty when there
/// are no other attributes). Unlabeled nodes start from the kNN vote.
pub fn propagate_attribute<X: AsRef<[f64]> + Sync>(
    xs: &[X],
    graph: &AffinityGraph,
    q: &[Vec<f64>],
    labels_in: &[TriLabel],
    cfg: &PropagationConfig,
    seed: u64,
) -> Result<PropagationResult> {
    if xs.len() != labels_in.len() || q.len() != labels_in.len() {
        return Err(Error::DimensionMismatch {
            expected: labels_in.len(),
            found: if xs.len() != labels_in.len() { xs.len() } else { q.len() },
            context: "propagation inputs".into(),
        });
    }
    let annotated: Vec<Option<bool>> = labels_in.iter().map(|l| l.as_bool()).collect();
    if annotated.iter().all(Option::is_some) {
        let labels: Vec<bool> = annotated.iter().map(|l| l.unwrap_or_default()).collect();
        return Ok(PropagationResult {
            posteriors: labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect(),
            annotated: vec![true; labels.len()],
            initial_labels: labels.clone(),
            labels,
            iterations: 0,
            converged: true,
        });
    }
    for class in [false, true] {
        if !annotated.contains(&Some(class)) {
            return Err(Error::EmptyClass(u8::from(class)));
        }
    }
    let init = init_knn(xs, &annotated, cfg.k_init)?;
    let mut model = GaussianUnary::new(xs, q, cfg.covariance);
    run_sweeps(&mut model, graph, &annotated, init, cfg, seed)
}

/// Mean-field inference with fixed unaries, started from the unary argmax.
pub fn infer_fixed_unary(
    unary: Vec<[f64; 2]>,
    graph: &AffinityGraph,
    cfg: &PropagationConfig,
    seed: u64,
) -> Result<PropagationResult> {
    let init: Vec<bool> = unary.iter().map(|u| u[1] >= u[0]).collect();
    let annotated = vec![None; unary.len()];
    let mut model = FixedUnary(unary);
    run_sweeps(&mut model, graph, &annotated, init, cfg, seed)
}

/// Settings of the alternating propagate / retrain loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage2Config {
    /// Number of alternating rounds `M`.
    pub rounds: usize,
    pub propagation: PropagationConfig,
    /// Retraining schedule applied each round, warm-started from the current bank.
    pub refine: TrainConfig,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config {
            rounds: 10,
            propagation: PropagationConfig::default(),
            refine: TrainConfig {
                epochs: 1,
                ..TrainConfig::default()
            },
        }
    }
}

impl Stage2Config {
    pub fn validate(&self) -> Result<()> {
        self.propagation.validate()?;
        self.refine.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeDiagnostics {
    pub attribute: String,
    pub sweeps: usize,
    pub converged: bool,
    pub pseudo_labels: usize,
    pub pseudo_positive: usize,
    /// Pseudo labels that differ from the previous round.
    pub flipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundReport {
    pub round: usize,
    pub attributes: Vec<AttributeDiagnostics>,
}

#[derive(Debug, Clone)]
pub struct Stage2Output {
    /// Ground truth where annotated, pseudo labels elsewhere.
    pub corpus: Corpus,
    /// `pseudo[sample][attribute]` is true when the label was imputed.
    pub pseudo: Vec<Vec<bool>>,
    /// Final `p(y = 1)` per sample and attribute; `None` when never propagated.
    pub posteriors: Vec<Vec<Option<f64>>>,
    pub bank: ClassifierBank,
    pub rounds: Vec<RoundReport>,
}

/// Alternates attribute propagation and classifier refinement for `cfg.rounds` rounds.
pub fn stage2_loop(
    corpus: &Corpus,
    bank: &ClassifierBank,
    graph: &AffinityGraph,
    cfg: &Stage2Config,
    seed: u64,
) -> Result<Stage2Output> {
    stage2_loop_with(corpus, bank, graph, cfg, seed, |_, _| {})
}

/// [`stage2_loop`] with a callback invoked after every round.
pub fn stage2_loop_with(
    corpus: &Corpus,
    bank: &ClassifierBank,
    graph: &AffinityGraph,
    cfg: &Stage2Config,
    seed: u64,
    mut on_round: impl FnMut(&RoundReport, &ClassifierBank),
) -> Result<Stage2Output> {
    let n = corpus.len();
    if graph.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: graph.n(),
            context: "graph nodes vs corpus samples".into(),
        });
    }
    cfg.validate()?;
    let ids = corpus.attribute_ids();
    let mut bank = bank.aligned_to(&ids)?;
    let n_attr = ids.len();
    let original: Vec<Vec<TriLabel>> = (0..n_attr).map(|a| corpus.column(a)).collect();
    let pseudo: Vec<Vec<bool>> = corpus
        .samples()
        .iter()
        .map(|s| s.labels.iter().map(|l| cfg.rounds > 0 && l.is_missing()).collect())
        .collect();
    let mut posteriors: Vec<Vec<Option<f64>>> = corpus
        .samples()
        .iter()
        .map(|s| {
            s.labels
                .iter()
                .map(|l| l.as_bool().map(|b| if b { 1.0 } else { 0.0 }))
                .collect()
        })
        .collect();
    let mut completed = corpus.clone();
    let mut previous: Option<Vec<Vec<bool>>> = None;
    let mut rounds = Vec::with_capacity(cfg.rounds);

    for m in 1..=cfg.rounds {
        let r = if n_attr >= 2 {
            cooccurrence(&bank)?
        } else {
            CooccurrenceMatrix::identity(ids.clone())
        };
        let results: Vec<PropagationResult> = (0..n_attr)
            .into_par_iter()
            .map(|a| {
                let q: Vec<Vec<f64>> = corpus
                    .samples()
                    .iter()
                    .map(|s| prior_q(&r, &s.labels, a))
                    .collect();
                propagate_attribute(
                    corpus.samples(),
                    graph,
                    &q,
                    &original[a],
                    &cfg.propagation,
                    derive_seed(seed, &[m as u64, a as u64]),
                )
            })
            .collect::<Result<_>>()?;

        let mut label_rows = vec![vec![TriLabel::Missing; n_attr]; n];
        for (a, res) in results.iter().enumerate() {
            for i in 0..n {
                label_rows[i][a] = TriLabel::from_bool(res.labels[i]);
                if pseudo[i][a] {
                    posteriors[i][a] = Some(res.posteriors[i]);
                }
            }
        }
        let report = RoundReport {
            round: m,
            attributes: results
                .iter()
                .enumerate()
                .map(|(a, res)| {
                    let imputed: Vec<usize> = (0..n).filter(|&i| pseudo[i][a]).collect();
                    AttributeDiagnostics {
                        attribute: ids[a].clone(),
                        sweeps: res.iterations,
                        converged: res.converged,
                        pseudo_labels: imputed.len(),
                        pseudo_positive: imputed.iter().filter(|&&i| res.labels[i]).count(),
                        flipped: previous.as_ref().map_or(0, |prev| {
                            imputed.iter().filter(|&&i| prev[a][i] != res.labels[i]).count()
                        }),
                    }
                })
                .collect(),
        };
        previous = Some(results.into_iter().map(|r| r.labels).collect());
        completed = corpus.with_labels(label_rows)?;
        let refine = TrainConfig {
            seed: derive_seed(seed, &[m as u64, u64::MAX]),
            ..cfg.refine.clone()
        };
        bank = refine_bank(&completed, &bank, &refine)?;
        on_round(&report, &bank);
        rounds.push(report);
    }

    Ok(Stage2Output {
        corpus: completed,
        pseudo,
        posteriors,
        bank,
        rounds,
    })
}

impl Stage2Output {
    /// Label file with provenance: `id,source,<attrs...>` followed by
    /// `<attr>_pseudo` (1 when imputed) and `<attr>_posterior` per attribute.
    pub fn write_labels<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let ids = self.corpus.attribute_ids();
        let mut header = vec!["id".to_string(), "source".to_string()];
        header.extend(ids.iter().cloned());
        for a in &ids {
            header.push(format!("{a}{PSEUDO_SUFFIX}"));
            header.push(format!("{a}{POSTERIOR_SUFFIX}"));
        }
        wtr.write_record(&header)?;
        for (i, s) in self.corpus.samples().iter().enumerate() {
            let mut row = vec![s.id.clone(), s.source.clone()];
            row.extend(s.labels.iter().map(|l| l.as_cell().to_string()));
            for a in 0..ids.len() {
                row.push(if self.pseudo[i][a] { "1" } else { "0" }.to_string());
                row.push(self.posteriors[i][a].map(fmt_f64).unwrap_or_default());
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}
