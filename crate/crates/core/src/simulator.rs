//! Gaussian simulation of the few-shot task and expected-distance estimates.
//!
//! Each class is an isotropic Gaussian with its own mean. An episode draws
//! `way` distinct classes, estimates each center from `shots` samples and
//! classifies one fresh query to the nearest estimated center.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Proportion;
use crate::par;
use crate::rng::{self, tags};

/// Episodes per seed-stream block. Fixed so results do not depend on the
/// thread count.
pub const BLOCK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_classes: usize,
    pub way: usize,
    pub dim: usize,
    pub sigma: f64,
    /// Standard deviation of each class-mean coordinate.
    pub mean_scale: f64,
    pub shots: Vec<usize>,
    pub episodes_per_point: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_classes: 15,
            way: 3,
            dim: 16,
            sigma: 1.0,
            mean_scale: 1.0,
            shots: vec![1, 2, 5, 10, 15],
            episodes_per_point: 20_000,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.way < 2 || self.n_classes < self.way {
            return Err(Error::invalid(format!(
                "need n_classes >= way >= 2, got n_classes {} and way {}",
                self.n_classes, self.way
            )));
        }
        if self.dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::invalid(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.mean_scale.is_finite() && self.mean_scale >= 0.0) {
            return Err(Error::invalid(format!(
                "mean scale must be non-negative, got {}",
                self.mean_scale
            )));
        }
        if self.shots.is_empty() || self.shots.contains(&0) {
            return Err(Error::invalid("shots list must be non-empty with every entry >= 1"));
        }
        if self.episodes_per_point == 0 {
            return Err(Error::invalid("episodes per point must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimPoint {
    pub shots: usize,
    pub accuracy: Proportion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCurve {
    pub points: Vec<SimPoint>,
}

impl SimCurve {
    pub fn accuracy_at(&self, shots: usize) -> Option<&Proportion> {
        self.points.iter().find(|p| p.shots == shots).map(|p| &p.accuracy)
    }

    /// `shots,accuracy,ci_low,ci_high` with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("shots,accuracy,ci_low,ci_high\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.shots, p.accuracy.value, p.accuracy.ci_low, p.accuracy.ci_high
            ));
        }
        out
    }
}

/// Class means, `n_classes x dim`, drawn from the config's mean stream.
pub fn class_means(config: &SimConfig) -> Vec<Vec<f64>> {
    let mut rng = rng::stream(config.seed, &[tags::SIM_MEANS]);
    (0..config.n_classes)
        .map(|_| {
            (0..config.dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    config.mean_scale * z
                })
                .collect()
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One simulated episode; true when the query lands nearest its own class.
fn episode_correct<R: Rng + ?Sized>(config: &SimConfig, means: &[Vec<f64>], shots: usize, rng: &mut R) -> bool {
    let noise = Normal::new(0.0, config.sigma).expect("sigma validated");
    let classes = index::sample(rng, config.n_classes, config.way).into_vec();
    let centers: Vec<Vec<f64>> = classes
        .iter()
        .map(|&c| {
            let mut sum = vec![0.0; config.dim];
            for _ in 0..shots {
                for (s, m) in sum.iter_mut().zip(&means[c]) {
                    *s += m + noise.sample(rng);
                }
            }
            sum.iter().map(|s| s / shots as f64).collect()
        })
        .collect();
    let target = rng.random_range(0..config.way);
    let query: Vec<f64> = means[classes[target]].iter().map(|m| m + noise.sample(rng)).collect();

    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(&query, c);
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    best == target
}

/// Nearest-estimated-center accuracy per shot count.
pub fn simulate_curve(config: &SimConfig) -> Result<SimCurve> {
    config.validate()?;
    let means = class_means(config);
    let n = config.episodes_per_point;
    let blocks = n.div_ceil(BLOCK);
    let points = config
        .shots
        .iter()
        .enumerate()
        .map(|(si, &shots)| {
            let counts = par::map_range(blocks, |b| {
                let mut rng = rng::stream(config.seed, &[tags::SIM_EPISODES, si as u64, b as u64]);
                let len = BLOCK.min(n - b * BLOCK);
                (0..len)
                    .filter(|_| episode_correct(config, &means, shots, &mut rng))
                    .count() as u64
            });
            let correct = counts.iter().sum();
            SimPoint {
                shots,
                accuracy: Proportion::new(correct, n as u64).expect("n >= 1"),
            }
        })
        .collect();
    Ok(SimCurve { points })
}

/// `(1 + 1/N) sigma^2 d`, the expected squared distance from a fresh sample
/// to the mean of `N` others from the same isotropic Gaussian.
pub fn analytic_sq_distance(shots: usize, sigma: f64, dim: usize) -> f64 {
    (1.0 + 1.0 / shots as f64) * sigma * sigma * dim as f64
}

/// Monte Carlo estimate of `E |x' - mean(x_1..x_N)|^2` with explicit samples.
pub fn expected_sq_distance(shots: usize, sigma: f64, dim: usize, trials: usize, seed: u64) -> Result<f64> {
    if shots == 0 || trials == 0 || dim == 0 {
        return Err(Error::invalid("shots, trials and dimension must all be at least 1"));
    }
    let noise = Normal::new(0.0, sigma)
        .ok()
        .filter(|_| sigma.is_finite() && sigma > 0.0)
        .ok_or_else(|| Error::invalid(format!("sigma must be positive, got {sigma}")))?;
    let blocks = trials.div_ceil(BLOCK);
    let sums = par::map_range(blocks, |b| {
        let mut rng = rng::stream(seed, &[tags::SIM_DISTANCE, b as u64]);
        let len = BLOCK.min(trials - b * BLOCK);
        let mut mean = vec![0.0; dim];
        let mut total = 0.0;
        for _ in 0..len {
            mean.iter_mut().for_each(|m| *m = 0.0);
            for _ in 0..shots {
                for m in mean.iter_mut() {
                    *m += noise.sample(&mut rng);
                }
            }
            total += mean
                .iter()
                .map(|m| {
                    let diff = noise.sample(&mut rng) - m / shots as f64;
                    diff * diff
                })
                .sum::<f64>();
        }
        total
    });
    Ok(sums.iter().sum::<f64>() / trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(shots: Vec<usize>, episodes: usize) -> SimConfig {
        SimConfig {
            shots,
            episodes_per_point: episodes,
            seed: 11,
            ..SimConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        let bad = [
            SimConfig {
                way: 1,
                ..SimConfig::default()
            },
            SimConfig {
                n_classes: 2,
                ..SimConfig::default()
            },
            SimConfig {
                sigma: 0.0,
                ..SimConfig::default()
            },
            SimConfig {
                dim: 0,
                ..SimConfig::default()
            },
            SimConfig {
                shots: vec![0],
                ..SimConfig::default()
            },
            SimConfig {
                episodes_per_point: 0,
                ..SimConfig::default()
            },
        ];
        for c in bad {
            assert!(simulate_curve(&c).is_err(), "{c:?}");
        }
    }

    #[test]
    fn vanishing_noise_is_perfect() {
        let c = SimConfig {
            sigma: 1e-9,
            ..small(vec![1, 5], 2000)
        };
        let curve = simulate_curve(&c).unwrap();
        for p in &curve.points {
            assert_eq!(p.accuracy.value, 1.0);
        }
    }

    #[test]
    fn coincident_means_are_chance() {
        let c = SimConfig {
            mean_scale: 0.0,
            ..small(vec![1, 5], 20_000)
        };
        for p in simulate_curve(&c).unwrap().points {
            let a = p.accuracy;
            assert!((a.value - 1.0 / 3.0).abs() < 1.5 * a.half_width, "{a:?}");
        }
    }

    #[test]
    fn seeded_and_block_stable() {
        let c = small(vec![1, 3], 3000);
        assert_eq!(simulate_curve(&c).unwrap(), simulate_curve(&c).unwrap());
        let other = SimConfig { seed: 12, ..c.clone() };
        assert_ne!(simulate_curve(&c).unwrap(), simulate_curve(&other).unwrap());
    }

    #[test]
    fn csv_layout() {
        let curve = simulate_curve(&small(vec![2], 10)).unwrap();
        let csv = curve.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "shots,accuracy,ci_low,ci_high");
        assert!(lines[1].starts_with("2,"));
        assert_eq!(lines.len(), 2);
    }

    #[test]
    fn distance_estimates_match_formula() {
        for (n, sigma, d, trials) in [(1, 1.0, 1, 100_000), (4, 2.0, 3, 100_000), (10_000, 1.0, 1, 100_000)] {
            let est = expected_sq_distance(n, sigma, d, trials, 5).unwrap();
            let truth = analytic_sq_distance(n, sigma, d);
            assert!((est / truth - 1.0).abs() < 0.02, "N={n}: {est} vs {truth}");
        }
        assert_eq!(analytic_sq_distance(1, 1.0, 1), 2.0);
        assert_eq!(analytic_sq_distance(4, 2.0, 3), 15.0);
        assert!(expected_sq_distance(0, 1.0, 1, 10, 0).is_err());
        assert!(expected_sq_distance(1, -1.0, 1, 10, 0).is_err());
    }
}
