//! Forward math of the prototype model.
//!
//! A [`ModelParams`] holds the projection `g` (stored row-major, `dim x
//! proj_dim`) and the two junk-head scalars. Support embeddings are projected
//! and averaged into one prototype per class; a query is scored by its
//! negative distance to each prototype, and the junk logit is
//! `b_distance * sum_k d_k + b_magnitude * |g^T q|`. Probabilities are the
//! softmax over `[class_0 .. class_{K-1}, junk]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distances below this are treated as zero when differentiating the
/// unsquared norm.
pub const NORM_EPSILON: f64 = 1e-12;

/// Projected dimension used when none is configured.
pub const DEFAULT_PROJ_DIM: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceKind {
    /// `|a - b|`
    #[default]
    Euclidean,
    /// `|a - b|^2`
    SquaredEuclidean,
}

impl DistanceKind {
    /// Applies the distance form to a squared Euclidean norm.
    #[inline]
    pub fn from_squared(self, sq: f64) -> f64 {
        match self {
            DistanceKind::Euclidean => sq.sqrt(),
            DistanceKind::SquaredEuclidean => sq,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            DistanceKind::Euclidean => 0,
            DistanceKind::SquaredEuclidean => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DistanceKind::Euclidean),
            1 => Some(DistanceKind::SquaredEuclidean),
            _ => None,
        }
    }
}

impl std::str::FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(DistanceKind::Euclidean),
            "squared-euclidean" => Ok(DistanceKind::SquaredEuclidean),
            other => Err(Error::invalid(format!(
                "unknown distance {other:?} (expected euclidean or squared-euclidean)"
            ))),
        }
    }
}

/// Trainable state plus the (fixed) distance form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    dim: usize,
    proj_dim: usize,
    /// Row-major `dim x proj_dim`; entry `(i, j)` is at `i * proj_dim + j`.
    pub g: Vec<f64>,
    pub b_distance: f64,
    pub b_magnitude: f64,
    pub distance: DistanceKind,
}

impl ModelParams {
    pub fn new(dim: usize, proj_dim: usize, g: Vec<f64>, b_distance: f64, b_magnitude: f64) -> Result<Self> {
        if dim == 0 || proj_dim == 0 {
            return Err(Error::invalid(format!(
                "dimensions must be positive (dim={dim}, proj_dim={proj_dim})"
            )));
        }
        if g.len() != dim * proj_dim {
            return Err(Error::invalid(format!(
                "projection has {} entries, expected {dim}x{proj_dim}",
                g.len()
            )));
        }
        let params = ModelParams {
            dim,
            proj_dim,
            g,
            b_distance,
            b_magnitude,
            distance: DistanceKind::default(),
        };
        params.check_finite()?;
        Ok(params)
    }

    pub fn zeros(dim: usize, proj_dim: usize) -> Result<Self> {
        Self::new(dim, proj_dim, vec![0.0; dim * proj_dim], 0.0, 0.0)
    }

    pub fn identity(dim: usize) -> Result<Self> {
        let mut g = vec![0.0; dim * dim];
        for i in 0..dim {
            g[i * dim + i] = 1.0;
        }
        Self::new(dim, dim, g, 0.0, 0.0)
    }

    /// Fan-in scaled init: `g ~ U[-1/sqrt(dim), 1/sqrt(dim)]`, scalars zero.
    pub fn init_random<R: Rng + ?Sized>(dim: usize, proj_dim: usize, rng: &mut R) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim must be positive"));
        }
        let bound = 1.0 / (dim as f64).sqrt();
        let g = (0..dim * proj_dim).map(|_| rng.random_range(-bound..=bound)).collect();
        Self::new(dim, proj_dim, g, 0.0, 0.0)
    }

    pub fn with_distance(mut self, distance: DistanceKind) -> Self {
        self.distance = distance;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn proj_dim(&self) -> usize {
        self.proj_dim
    }

    /// Number of trainable scalars (`g` plus the two junk-head scalars).
    pub fn num_trainable(&self) -> usize {
        self.g.len() + 2
    }

    pub fn g_at(&self, i: usize, j: usize) -> f64 {
        self.g[i * self.proj_dim + j]
    }

    /// Trainable values in canonical order: `g` row-major, `b_distance`, `b_magnitude`.
    pub fn trainable_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.g
            .iter_mut()
            .chain(std::iter::once(&mut self.b_distance))
            .chain(std::iter::once(&mut self.b_magnitude))
    }

    pub fn trainable(&self) -> impl Iterator<Item = f64> + '_ {
        self.g.iter().copied().chain([self.b_distance, self.b_magnitude])
    }

    pub fn check_finite(&self) -> Result<()> {
        if let Some(i) = self.g.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite projection entry {i}")));
        }
        if !self.b_distance.is_finite() || !self.b_magnitude.is_finite() {
            return Err(Error::invalid("non-finite junk-head scalar"));
        }
        Ok(())
    }

    fn check_embedding(&self, e: &[f64]) -> Result<()> {
        if e.len() != self.dim {
            return Err(Error::invalid(format!(
                "embedding has dimension {}, model expects {}",
                e.len(),
                self.dim
            )));
        }
        Ok(())
    }
}

/// Class prototypes in projected space together with their shot counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub prototypes: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
}

impl PrototypeSet {
    pub fn way(&self) -> usize {
        self.prototypes.len()
    }

    fn proj_dim(&self) -> usize {
        self.prototypes.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class_scores: Vec<f64>,
    pub junk_score: f64,
    /// `[class_0 .. class_{K-1}, junk]`
    pub probabilities: Vec<f64>,
    /// In `0..=K`; `K` denotes junk.
    pub predicted_label: usize,
}

impl Prediction {
    pub fn way(&self) -> usize {
        self.class_scores.len()
    }

    pub fn junk_probability(&self) -> f64 {
        self.probabilities[self.way()]
    }

    pub fn predicts_junk(&self) -> bool {
        self.predicted_label == self.way()
    }
}

/// One resolved episode: embeddings for `K` support classes, a query, and a
/// label in `0..=K` (`K` = junk).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEpisode {
    pub support: Vec<Vec<Vec<f64>>>,
    pub query: Vec<f64>,
    pub label: usize,
}

impl LabeledEpisode {
    pub fn way(&self) -> usize {
        self.support.len()
    }

    pub fn is_junk(&self) -> bool {
        self.label == self.way()
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.support.is_empty() {
            return Err(Error::invalid("episode has no support classes"));
        }
        if let Some(k) = self.support.iter().position(Vec::is_empty) {
            return Err(Error::invalid(format!("episode class {k} has no shots")));
        }
        if self.label > self.way() {
            return Err(Error::invalid(format!(
                "episode label {} out of range for way {}",
                self.label,
                self.way()
            )));
        }
        let bad_dim = self
            .support
            .iter()
            .flatten()
            .chain(std::iter::once(&self.query))
            .any(|e| e.len() != dim);
        if bad_dim {
            return Err(Error::invalid(format!(
                "episode embedding dimension differs from model dimension {dim}"
            )));
        }
        Ok(())
    }
}

/// `g^T e`.
pub fn project(params: &ModelParams, e: &[f64]) -> Result<Vec<f64>> {
    params.check_embedding(e)?;
    Ok(project_unchecked(params, e))
}

pub(crate) fn project_unchecked(params: &ModelParams, e: &[f64]) -> Vec<f64> {
    let p = params.proj_dim;
    let mut out = vec![0.0; p];
    for (row, &x) in params.g.chunks_exact(p).zip(e) {
        if x == 0.0 {
            continue;
        }
        for (o, &w) in out.iter_mut().zip(row) {
            *o += x * w;
        }
    }
    out
}

/// Mean projected support embedding per class.
///
/// `support` pairs a class index with an embedding; every index in `0..K`
/// must occur at least once, where `K - 1` is the largest index present.
pub fn compute_prototypes(params: &ModelParams, support: &[(usize, &[f64])]) -> Result<PrototypeSet> {
    let way = support
        .iter()
        .map(|&(k, _)| k + 1)
        .max()
        .ok_or_else(|| Error::invalid("support set is empty"))?;
    let p = params.proj_dim;
    let mut sums = vec![vec![0.0; p]; way];
    let mut counts = vec![0usize; way];
    for &(k, e) in support {
        let z = project(params, e)?;
        for (s, v) in sums[k].iter_mut().zip(&z) {
            *s += v;
        }
        counts[k] += 1;
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!("class {k} has no support embeddings")));
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        let inv = c as f64;
        s.iter_mut().for_each(|v| *v /= inv);
    }
    Ok(PrototypeSet {
        prototypes: sums,
        counts,
    })
}

/// Prototypes for a resolved episode's support sets.
pub fn episode_prototypes(params: &ModelParams, episode: &LabeledEpisode) -> Result<PrototypeSet> {
    let support: Vec<(usize, &[f64])> = episode
        .support
        .iter()
        .enumerate()
        .flat_map(|(k, shots)| shots.iter().map(move |e| (k, e.as_slice())))
        .collect();
    compute_prototypes(params, &support)
}

/// Folds one more projected shot into class `k`'s running mean. Touches only
/// that class.
pub fn update_prototype(mut set: PrototypeSet, k: usize, projected: &[f64]) -> Result<PrototypeSet> {
    if k >= set.way() {
        return Err(Error::invalid(format!(
            "class index {k} out of range for {} prototypes",
            set.way()
        )));
    }
    if projected.len() != set.proj_dim() {
        return Err(Error::invalid(format!(
            "projected vector has dimension {}, prototypes have {}",
            projected.len(),
            set.proj_dim()
        )));
    }
    let n = set.counts[k] as f64;
    for (p, &x) in set.prototypes[k].iter_mut().zip(projected) {
        *p = (*p * n + x) / (n + 1.0);
    }
    set.counts[k] += 1;
    Ok(set)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn sq_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

fn check_set(params: &ModelParams, set: &PrototypeSet) -> Result<()> {
    if set.way() == 0 {
        return Err(Error::invalid("prototype set is empty"));
    }
    if set.prototypes.iter().any(|p| p.len() != params.proj_dim) {
        return Err(Error::invalid(format!(
            "prototype dimension differs from projected dimension {}",
            params.proj_dim
        )));
    }
    Ok(())
}

/// Distances from an already projected query to every prototype.
pub(crate) fn distances(kind: DistanceKind, q: &[f64], set: &PrototypeSet) -> Vec<f64> {
    set.prototypes
        .iter()
        .map(|p| kind.from_squared(sq_dist(q, p)))
        .collect()
}

pub(crate) fn junk_logit(params: &ModelParams, distances: &[f64], q: &[f64]) -> f64 {
    let total: f64 = distances.iter().sum();
    params.b_distance * total + params.b_magnitude * params.distance.from_squared(sq_norm(q))
}

/// `S_k = -dist(g^T query, p_k)` for every class.
pub fn class_scores(params: &ModelParams, set: &PrototypeSet, query: &[f64]) -> Result<Vec<f64>> {
    check_set(params, set)?;
    let q = project(params, query)?;
    Ok(distances(params.distance, &q, set).into_iter().map(|d| -d).collect())
}

pub fn junk_score(params: &ModelParams, set: &PrototypeSet, query: &[f64]) -> Result<f64> {
    check_set(params, set)?;
    let q = project(params, query)?;
    let d = distances(params.distance, &q, set);
    Ok(junk_logit(params, &d, &q))
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log(sum(exp(logits)))`, max-shifted.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln()
}

/// `-log softmax(logits)[label]`.
///
/// Written as `(max - l_label) + ln_1p(sum_{j != argmax} exp(l_j - max))`
/// so that the loss keeps full relative precision when one logit dominates.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let top = argmax(logits);
    let max = logits[top];
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != top)
        .map(|(_, &l)| (l - max).exp())
        .sum();
    (max - logits[label]) + rest.ln_1p()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict(params: &ModelParams, set: &PrototypeSet, query: &[f64]) -> Result<Prediction> {
    check_set(params, set)?;
    let q = project(params, query)?;
    let d = distances(params.distance, &q, set);
    let junk = junk_logit(params, &d, &q);
    let mut logits: Vec<f64> = d.iter().map(|&x| -x).collect();
    logits.push(junk);
    let probabilities = softmax(&logits);
    let predicted_label = argmax(&probabilities);
    logits.pop();
    Ok(Prediction {
        class_scores: logits,
        junk_score: junk,
        probabilities,
        predicted_label,
    })
}

/// Builds prototypes from the episode's support and predicts its query.
pub fn predict_episode(params: &ModelParams, episode: &LabeledEpisode) -> Result<Prediction> {
    episode.validate(params.dim)?;
    let set = episode_prototypes(params, episode)?;
    predict(params, &set, &episode.query)
}
