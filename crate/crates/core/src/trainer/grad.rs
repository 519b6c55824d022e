use serde::{Deserialize, Serialize};

use crate::engine::{
    cross_entropy, distances, episode_prototypes, junk_logit, project_unchecked, softmax, DistanceKind, LabeledEpisode,
    ModelParams, NORM_EPSILON,
};
use crate::error::Result;

/// Gradient of the episode loss, shaped like the trainable part of [`ModelParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradient {
    pub g: Vec<f64>,
    pub b_distance: f64,
    pub b_magnitude: f64,
}

impl Gradient {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradient {
            g: vec![0.0; params.g.len()],
            b_distance: 0.0,
            b_magnitude: 0.0,
        }
    }

    /// Values in the same order as [`ModelParams::trainable`].
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.g.iter().copied().chain([self.b_distance, self.b_magnitude])
    }

    pub fn len(&self) -> usize {
        self.g.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn add_assign(&mut self, other: &Gradient) {
        for (a, b) in self.g.iter_mut().zip(&other.g) {
            *a += b;
        }
        self.b_distance += other.b_distance;
        self.b_magnitude += other.b_magnitude;
    }

    pub fn scale(&mut self, factor: f64) {
        self.g.iter_mut().for_each(|v| *v *= factor);
        self.b_distance *= factor;
        self.b_magnitude *= factor;
    }

    /// Arithmetic mean, accumulated in slice order.
    pub fn mean(grads: &[Gradient]) -> Option<Gradient> {
        let (first, rest) = grads.split_first()?;
        let mut acc = first.clone();
        for g in rest {
            acc.add_assign(g);
        }
        acc.scale(1.0 / grads.len() as f64);
        Some(acc)
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }
}

/// Cross-entropy of the episode's true label over the `K + 1` outcomes.
pub fn episode_loss(params: &ModelParams, episode: &LabeledEpisode) -> Result<f64> {
    episode.validate(params.dim())?;
    let set = episode_prototypes(params, episode)?;
    let q = project_unchecked(params, &episode.query);
    let d = distances(params.distance, &q, &set);
    let junk = junk_logit(params, &d, &q);
    let mut logits: Vec<f64> = d.iter().map(|&x| -x).collect();
    logits.push(junk);
    Ok(cross_entropy(&logits, episode.label))
}

pub fn episode_gradient(params: &ModelParams, episode: &LabeledEpisode) -> Result<Gradient> {
    loss_and_gradient(params, episode).map(|(_, g)| g)
}

/// d(dist)/du scaled by `upstream`, written into `out` (length `u.len()`).
fn distance_backward(kind: DistanceKind, u: &[f64], dist: f64, upstream: f64, out: &mut [f64]) {
    match kind {
        DistanceKind::Euclidean => {
            if dist < NORM_EPSILON {
                out.iter_mut().for_each(|o| *o = 0.0);
            } else {
                let s = upstream / dist;
                for (o, &x) in out.iter_mut().zip(u) {
                    *o = s * x;
                }
            }
        }
        DistanceKind::SquaredEuclidean => {
            let s = 2.0 * upstream;
            for (o, &x) in out.iter_mut().zip(u) {
                *o = s * x;
            }
        }
    }
}

/// Loss and its analytic gradient with respect to `g`, `b_distance` and
/// `b_magnitude`, back-propagated through the softmax, the junk head, the
/// distances, the prototype means and the projection.
pub fn loss_and_gradient(params: &ModelParams, episode: &LabeledEpisode) -> Result<(f64, Gradient)> {
    episode.validate(params.dim())?;
    let dim = params.dim();
    let proj = params.proj_dim();
    let kind = params.distance;
    let way = episode.way();

    let set = episode_prototypes(params, episode)?;
    let q = project_unchecked(params, &episode.query);
    let d = distances(kind, &q, &set);
    let magnitude = kind.from_squared(q.iter().map(|x| x * x).sum());
    let junk = junk_logit(params, &d, &q);

    let mut logits: Vec<f64> = d.iter().map(|&x| -x).collect();
    logits.push(junk);
    let loss = cross_entropy(&logits, episode.label);

    // dL/dlogit = softmax - onehot
    let mut delta = softmax(&logits);
    delta[episode.label] -= 1.0;
    let delta_junk = delta[way];

    let mut grad = Gradient::zeros_like(params);
    grad.b_distance = delta_junk * d.iter().sum::<f64>();
    grad.b_magnitude = delta_junk * magnitude;

    // dL/dq accumulates every path through the projected query.
    let mut d_q = vec![0.0; proj];
    let mut a_k = vec![0.0; proj];
    let mut u = vec![0.0; proj];
    let mut mean_support = vec![0.0; dim];
    for k in 0..way {
        for ((uj, qj), pj) in u.iter_mut().zip(&q).zip(&set.prototypes[k]) {
            *uj = qj - pj;
        }
        let d_dist = -delta[k] + delta_junk * params.b_distance;
        distance_backward(kind, &u, d[k], d_dist, &mut a_k);
        for (dq, a) in d_q.iter_mut().zip(&a_k) {
            *dq += a;
        }

        // p_k = g^T mean(support_k), so dL/dg += mean(support_k) (x) (-a_k).
        let shots = &episode.support[k];
        mean_support.iter_mut().for_each(|v| *v = 0.0);
        for e in shots {
            for (m, x) in mean_support.iter_mut().zip(e) {
                *m += x;
            }
        }
        let inv = 1.0 / shots.len() as f64;
        for (row, &m) in grad.g.chunks_exact_mut(proj).zip(&mean_support) {
            let m = m * inv;
            if m == 0.0 {
                continue;
            }
            for (gij, a) in row.iter_mut().zip(&a_k) {
                *gij -= m * a;
            }
        }
    }
    distance_backward(kind, &q, magnitude, delta_junk * params.b_magnitude, &mut a_k);
    for (dq, a) in d_q.iter_mut().zip(&a_k) {
        *dq += a;
    }

    for (row, &x) in grad.g.chunks_exact_mut(proj).zip(&episode.query) {
        if x == 0.0 {
            continue;
        }
        for (gij, dq) in row.iter_mut().zip(&d_q) {
            *gij += x * dq;
        }
    }
    Ok((loss, grad))
}
