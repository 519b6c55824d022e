use serde::{Deserialize, Serialize};

use super::grad::{episode_gradient, episode_loss, Gradient};
use crate::engine::{LabeledEpisode, ModelParams};
use crate::error::{Error, Result};
use crate::par;

/// Floor on the relative-error denominator.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub passed: bool,
    pub max_rel_error: f64,
    pub worst_episode: usize,
    pub worst_entry: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub entries_checked: usize,
    pub tolerance: f64,
    pub step: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / REL_ERROR_FLOOR.max(analytic.abs() + numeric.abs())
}

fn entry_name(params: &ModelParams, idx: usize) -> String {
    let p = params.proj_dim();
    match idx.checked_sub(params.g.len()) {
        None => format!("g[{},{}]", idx / p, idx % p),
        Some(0) => "b_distance".to_string(),
        Some(_) => "b_magnitude".to_string(),
    }
}

fn entry_mut(params: &mut ModelParams, idx: usize) -> &mut f64 {
    let n = params.g.len();
    match idx.checked_sub(n) {
        None => &mut params.g[idx],
        Some(0) => &mut params.b_distance,
        Some(_) => &mut params.b_magnitude,
    }
}

/// Compares [`episode_gradient`] to central finite differences of
/// [`episode_loss`] for every trainable entry of every episode.
pub fn gradcheck(
    params: &ModelParams,
    episodes: &[LabeledEpisode],
    step: f64,
    tolerance: f64,
) -> Result<GradcheckReport> {
    gradcheck_with(params, episodes, step, tolerance, episode_gradient)
}

/// [`gradcheck`] against an arbitrary analytic gradient.
pub fn gradcheck_with<F>(
    params: &ModelParams,
    episodes: &[LabeledEpisode],
    step: f64,
    tolerance: f64,
    analytic: F,
) -> Result<GradcheckReport>
where
    F: Fn(&ModelParams, &LabeledEpisode) -> Result<Gradient> + Sync + Send,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    if tolerance.is_nan() || tolerance < 0.0 {
        return Err(Error::invalid(format!(
            "tolerance must be non-negative, got {tolerance}"
        )));
    }
    if episodes.is_empty() {
        return Err(Error::invalid("gradcheck needs at least one episode"));
    }

    // (max error, entry, analytic, numeric) per episode
    let per_episode = par::try_map(episodes, |ep| -> Result<(f64, usize, f64, f64)> {
        let grad: Vec<f64> = analytic(params, ep)?.values().collect();
        let mut probe = params.clone();
        let mut worst = (f64::NEG_INFINITY, 0, 0.0, 0.0);
        for (idx, &a) in grad.iter().enumerate() {
            let orig = *entry_mut(&mut probe, idx);
            *entry_mut(&mut probe, idx) = orig + step;
            let plus = episode_loss(&probe, ep)?;
            *entry_mut(&mut probe, idx) = orig - step;
            let minus = episode_loss(&probe, ep)?;
            *entry_mut(&mut probe, idx) = orig;
            let n = (plus - minus) / (2.0 * step);
            let err = relative_error(a, n);
            if err > worst.0 || err.is_nan() {
                worst = (err, idx, a, n);
            }
        }
        Ok(worst)
    })?;

    let mut best_ep = 0;
    for (i, w) in per_episode.iter().enumerate() {
        if w.0 > per_episode[best_ep].0 || w.0.is_nan() {
            best_ep = i;
        }
    }
    let (max_rel_error, idx, a, n) = per_episode[best_ep];
    Ok(GradcheckReport {
        passed: max_rel_error <= tolerance,
        max_rel_error,
        worst_episode: best_ep,
        worst_entry: entry_name(params, idx),
        worst_analytic: a,
        worst_numeric: n,
        entries_checked: episodes.len() * params.num_trainable(),
        tolerance,
        step,
    })
}
