//! Synthetic inputs: random episodes for gradient checks and Gaussian
//! cluster datasets standing in for encoder outputs.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::engine::{LabeledEpisode, ModelParams};
use crate::error::{Error, Result};
use crate::ingest::{EmbeddingStore, Manifest, ManifestRecord, SourceSplit};
use crate::rng::{self, tags};

fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Episode with standard-normal embeddings.
pub fn random_episode<R: Rng + ?Sized>(
    rng: &mut R,
    dim: usize,
    way: usize,
    shots: usize,
    label: usize,
) -> LabeledEpisode {
    LabeledEpisode {
        support: (0..way)
            .map(|_| (0..shots).map(|_| gaussian_vec(rng, dim)).collect())
            .collect(),
        query: gaussian_vec(rng, dim),
        label,
    }
}

/// Params with `g ~ N(0, 1/dim)` and junk-head scalars `~ N(0, 0.5^2)`.
pub fn random_params<R: Rng + ?Sized>(rng: &mut R, dim: usize, proj_dim: usize) -> Result<ModelParams> {
    let g_dist = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid std");
    let b_dist = Normal::new(0.0, 0.5).expect("valid std");
    let g = (0..dim * proj_dim).map(|_| g_dist.sample(rng)).collect();
    ModelParams::new(dim, proj_dim, g, b_dist.sample(rng), b_dist.sample(rng))
}

/// Isotropic Gaussian clusters, one per category, in the shape of an
/// embedding store plus its two source manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub n_categories: usize,
    pub dim: usize,
    pub sigma: f64,
    /// Expected distance between two class means, in units of `sigma`.
    pub separation: f64,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            n_categories: 20,
            dim: 32,
            sigma: 1.0,
            separation: 10.0,
            train_per_class: 60,
            val_per_class: 40,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub store: EmbeddingStore,
    pub train_manifest: Manifest,
    pub val_manifest: Manifest,
    pub means: Vec<Vec<f64>>,
}

impl SyntheticDataset {
    pub fn categories(&self) -> Vec<u32> {
        (0..self.means.len() as u32).collect()
    }
}

/// Means are drawn from `N(0, s^2 I)` with `s = separation * sigma / sqrt(2 dim)`,
/// so `E |mu_i - mu_j|^2 = (separation * sigma)^2`. Every image carries a
/// single category. Source-train images get ids `0..`, source-val images follow.
pub fn gaussian_clusters(config: &ClusterConfig) -> Result<SyntheticDataset> {
    if config.n_categories == 0 || config.dim == 0 {
        return Err(Error::invalid("need at least one category and one dimension"));
    }
    if !(config.sigma.is_finite() && config.sigma > 0.0) || !(config.separation.is_finite() && config.separation >= 0.0)
    {
        return Err(Error::invalid("sigma must be positive and separation non-negative"));
    }
    let mut rng = rng::stream(config.seed, &[tags::SYNTHETIC]);
    let scale = config.separation * config.sigma / (2.0 * config.dim as f64).sqrt();
    let means: Vec<Vec<f64>> = (0..config.n_categories)
        .map(|_| {
            gaussian_vec(&mut rng, config.dim)
                .into_iter()
                .map(|z| z * scale)
                .collect()
        })
        .collect();

    let mut store = EmbeddingStore::new(config.dim)?;
    let mut manifests = [Vec::new(), Vec::new()];
    let mut id = 0u64;
    for (slot, source, per_class) in [
        (0, SourceSplit::Train, config.train_per_class),
        (1, SourceSplit::Val, config.val_per_class),
    ] {
        for (c, mean) in means.iter().enumerate() {
            for _ in 0..per_class {
                let values: Vec<f32> = mean
                    .iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        (m + config.sigma * z) as f32
                    })
                    .collect();
                store.push(id, &values)?;
                manifests[slot].push(ManifestRecord::new(id, vec![c as u32], source)?);
                id += 1;
            }
        }
    }
    let [train, val] = manifests;
    Ok(SyntheticDataset {
        store,
        train_manifest: Manifest::new(train)?,
        val_manifest: Manifest::new(val)?,
        means,
    })
}
