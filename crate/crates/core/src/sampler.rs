//! Class splits, image-to-partition assignment and episode sampling.
//!
//! Categories are split into disjoint train / val / test pools. Images from
//! the source-train manifest populate the train and val partitions; images
//! from the source-val manifest populate the test partition. An episode picks
//! `way` distinct classes from one partition, `shots` support images per
//! class, and a query that either belongs to one of those classes or (with
//! probability `junk_probability`) comes from a class outside the episode.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::LabeledEpisode;
use crate::error::{Error, Result};
use crate::ingest::{EmbeddingStore, Manifest, SourceSplit};
use crate::rng::{self, tags};
use crate::trainer::EpisodeSource;

/// Default category split sizes (train, val, test) over 80 categories.
pub const DEFAULT_SPLIT_SIZES: (usize, usize, usize) = (57, 8, 15);
pub const DEFAULT_WAY: usize = 3;
pub const DEFAULT_SHOTS: usize = 5;
pub const DEFAULT_JUNK_PROBABILITY: f64 = 0.25;
pub const MAX_SHOTS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
    Ignored,
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
            Partition::Ignored => "ignored",
        })
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "val" => Ok(Partition::Val),
            "test" => Ok(Partition::Test),
            "ignored" => Ok(Partition::Ignored),
            other => Err(Error::invalid(format!("unknown partition {other:?}"))),
        }
    }
}

/// Disjoint category pools. Each list is sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSplit {
    pub split_id: u32,
    pub seed: u64,
    pub train_classes: Vec<u32>,
    pub val_classes: Vec<u32>,
    pub test_classes: Vec<u32>,
}

impl ClassSplit {
    pub fn new(
        split_id: u32,
        seed: u64,
        mut train_classes: Vec<u32>,
        mut val_classes: Vec<u32>,
        mut test_classes: Vec<u32>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for list in [&mut train_classes, &mut val_classes, &mut test_classes] {
            list.sort_unstable();
            for &c in list.iter() {
                if !seen.insert(c) {
                    return Err(Error::invalid(format!(
                        "category {c} appears twice in split {split_id}"
                    )));
                }
            }
        }
        Ok(ClassSplit {
            split_id,
            seed,
            train_classes,
            val_classes,
            test_classes,
        })
    }

    pub fn classes(&self, partition: Partition) -> &[u32] {
        match partition {
            Partition::Train => &self.train_classes,
            Partition::Val => &self.val_classes,
            Partition::Test => &self.test_classes,
            Partition::Ignored => &[],
        }
    }

    pub fn partition_of(&self, category: u32) -> Option<Partition> {
        [Partition::Train, Partition::Val, Partition::Test]
            .into_iter()
            .find(|&p| self.classes(p).binary_search(&category).is_ok())
    }
}

/// `n_splits` independent uniformly random partitions of `categories`.
pub fn make_splits(
    categories: &[u32],
    n_splits: usize,
    sizes: (usize, usize, usize),
    seed: u64,
) -> Result<Vec<ClassSplit>> {
    let mut pool = categories.to_vec();
    pool.sort_unstable();
    pool.dedup();
    let (n_train, n_val, n_test) = sizes;
    let wanted = n_train + n_val + n_test;
    if wanted > pool.len() {
        return Err(Error::invalid(format!(
            "split sizes {n_train}+{n_val}+{n_test} = {wanted} exceed {} categories",
            pool.len()
        )));
    }
    if n_splits > u32::MAX as usize {
        return Err(Error::invalid("too many splits"));
    }
    (0..n_splits)
        .map(|i| {
            let mut rng = rng::stream(seed, &[tags::SPLITS, i as u64]);
            let mut shuffled = pool.clone();
            shuffled.shuffle(&mut rng);
            ClassSplit::new(
                i as u32,
                seed,
                shuffled[..n_train].to_vec(),
                shuffled[n_train..n_train + n_val].to_vec(),
                shuffled[n_train + n_val..wanted].to_vec(),
            )
        })
        .collect()
}

/// Partition label for every manifest image.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetAssignment {
    pub labels: BTreeMap<u64, Partition>,
}

impl DatasetAssignment {
    pub fn get(&self, id: u64) -> Option<Partition> {
        self.labels.get(&id).copied()
    }

    pub fn count(&self, partition: Partition) -> usize {
        self.labels.values().filter(|&&p| p == partition).count()
    }

    pub fn ids_in(&self, partition: Partition) -> impl Iterator<Item = u64> + '_ {
        self.labels
            .iter()
            .filter(move |(_, &p)| p == partition)
            .map(|(&id, _)| id)
    }
}

/// Assigns every image of the two source manifests to a partition.
///
/// Source-train images whose categories all fall in one of the train or val
/// pools go to that partition. Images mixing train categories with val or
/// test categories stay in train on a fair coin flip; otherwise they go to
/// val if they hold a val category and are ignored if not. Source-train
/// images without train categories go to val when they hold a val category
/// and are ignored otherwise. Source-val images go to test when they hold a
/// test category and are ignored otherwise.
pub fn assign_images(
    split: &ClassSplit,
    train_manifest: &Manifest,
    val_manifest: &Manifest,
    seed: u64,
) -> Result<DatasetAssignment> {
    let mut rng = rng::stream(seed, &[tags::ASSIGNMENT, u64::from(split.split_id)]);
    let mut labels = BTreeMap::new();

    for (manifest, role) in [(train_manifest, SourceSplit::Train), (val_manifest, SourceSplit::Val)] {
        for record in &manifest.records {
            if record.source != role {
                return Err(Error::invalid(format!(
                    "image {} is tagged source {} but was supplied in the {role} manifest",
                    record.id, record.source
                )));
            }
            let (mut has_train, mut has_val, mut has_test) = (false, false, false);
            for &c in &record.categories {
                match split.partition_of(c) {
                    Some(Partition::Train) => has_train = true,
                    Some(Partition::Val) => has_val = true,
                    Some(Partition::Test) => has_test = true,
                    _ => {
                        return Err(Error::invalid(format!(
                            "image {} has category {c}, which is not in split {}",
                            record.id, split.split_id
                        )))
                    }
                }
            }
            let label = match role {
                SourceSplit::Val if has_test => Partition::Test,
                SourceSplit::Val => Partition::Ignored,
                SourceSplit::Train if has_train && !has_val && !has_test => Partition::Train,
                SourceSplit::Train if has_train => {
                    if rng.random_bool(0.5) {
                        Partition::Train
                    } else if has_val {
                        Partition::Val
                    } else {
                        Partition::Ignored
                    }
                }
                SourceSplit::Train if has_val => Partition::Val,
                SourceSplit::Train => Partition::Ignored,
            };
            if labels.insert(record.id, label).is_some() {
                return Err(Error::invalid(format!(
                    "image {} appears in more than one manifest",
                    record.id
                )));
            }
        }
    }
    Ok(DatasetAssignment { labels })
}

/// Where junk queries come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JunkPool {
    /// Non-episode classes of the episode's own partition.
    #[default]
    SamePartition,
    /// Non-episode classes of the val and test partitions combined. Only
    /// valid for val / test episodes; lets small held-out pools still supply junk.
    HeldOut,
}

impl FromStr for JunkPool {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "same-partition" => Ok(JunkPool::SamePartition),
            "held-out" => Ok(JunkPool::HeldOut),
            other => Err(Error::invalid(format!(
                "unknown junk pool {other:?} (expected same-partition or held-out)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub way: usize,
    pub shots: usize,
    pub junk_probability: f64,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        EpisodeSpec {
            way: DEFAULT_WAY,
            shots: DEFAULT_SHOTS,
            junk_probability: DEFAULT_JUNK_PROBABILITY,
        }
    }
}

impl EpisodeSpec {
    pub fn junk_enabled(&self) -> bool {
        self.junk_probability > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.way == 0 {
            return Err(Error::invalid("way must be at least 1"));
        }
        if self.shots == 0 || self.shots > MAX_SHOTS {
            return Err(Error::invalid(format!(
                "shots must lie in 1..={MAX_SHOTS}, got {}",
                self.shots
            )));
        }
        if !(0.0..=1.0).contains(&self.junk_probability) {
            return Err(Error::invalid(format!(
                "junk probability must lie in [0, 1], got {}",
                self.junk_probability
            )));
        }
        Ok(())
    }
}

/// One sampled episode, by image id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub way: usize,
    pub shots: usize,
    /// Category id of each episode class.
    pub classes: Vec<u32>,
    pub support: Vec<Vec<u64>>,
    pub query: u64,
    /// In `0..=way`; `way` denotes junk.
    pub label: usize,
    pub junk_enabled: bool,
}

impl Episode {
    pub fn is_junk(&self) -> bool {
        self.label == self.way
    }

    /// Looks up every image in `store`, widening to 64-bit reals.
    pub fn resolve(&self, store: &EmbeddingStore) -> Result<LabeledEpisode> {
        let fetch = |id: u64| {
            store
                .get_f64(id)
                .ok_or_else(|| Error::InsufficientData(format!("image {id} has no embedding")))
        };
        Ok(LabeledEpisode {
            support: self
                .support
                .iter()
                .map(|ids| ids.iter().map(|&id| fetch(id)).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?,
            query: fetch(self.query)?,
            label: self.label,
        })
    }
}

#[derive(Debug, Clone)]
struct ClassPool {
    classes: Vec<u32>,
    images: Vec<Vec<u64>>,
}

impl ClassPool {
    fn build(
        classes: Vec<u32>,
        partitions: &[Partition],
        assignment: &DatasetAssignment,
        categories: &HashMap<u64, Vec<u32>>,
    ) -> Self {
        let slot: HashMap<u32, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let mut images = vec![Vec::new(); classes.len()];
        for (&id, &p) in &assignment.labels {
            if !partitions.contains(&p) {
                continue;
            }
            if let Some(cats) = categories.get(&id) {
                for c in cats {
                    if let Some(&i) = slot.get(c) {
                        images[i].push(id);
                    }
                }
            }
        }
        ClassPool { classes, images }
    }
}

/// Per-partition index from classes to the images that may represent them.
#[derive(Debug, Clone)]
pub struct EpisodePool {
    partition: Partition,
    episode_pool: ClassPool,
    junk_pool: ClassPool,
    categories: HashMap<u64, Vec<u32>>,
}

impl EpisodePool {
    pub fn build(
        split: &ClassSplit,
        assignment: &DatasetAssignment,
        manifests: &[&Manifest],
        partition: Partition,
        junk: JunkPool,
    ) -> Result<Self> {
        if partition == Partition::Ignored {
            return Err(Error::invalid("cannot sample episodes from ignored images"));
        }
        if junk == JunkPool::HeldOut && partition == Partition::Train {
            return Err(Error::invalid(
                "held-out junk would leak val/test classes into training episodes",
            ));
        }
        let categories: HashMap<u64, Vec<u32>> = manifests
            .iter()
            .flat_map(|m| &m.records)
            .map(|r| (r.id, r.categories.clone()))
            .collect();
        let episode_pool = ClassPool::build(split.classes(partition).to_vec(), &[partition], assignment, &categories);
        let junk_pool = match junk {
            JunkPool::SamePartition => episode_pool.clone(),
            JunkPool::HeldOut => {
                let mut classes: Vec<u32> = split.val_classes.iter().chain(&split.test_classes).copied().collect();
                classes.sort_unstable();
                ClassPool::build(classes, &[Partition::Val, Partition::Test], assignment, &categories)
            }
        };
        Ok(EpisodePool {
            partition,
            episode_pool,
            junk_pool,
            categories,
        })
    }

    pub fn partition(&self) -> Partition {
        self.partition
    }

    pub fn classes(&self) -> &[u32] {
        &self.episode_pool.classes
    }

    /// Number of partition images carrying `category`.
    pub fn images_of(&self, category: u32) -> usize {
        self.episode_pool
            .classes
            .iter()
            .position(|&c| c == category)
            .map_or(0, |i| self.episode_pool.images[i].len())
    }

    /// Checks the counts that do not depend on which classes get drawn.
    pub fn check_spec(&self, spec: &EpisodeSpec) -> Result<()> {
        spec.validate()?;
        let n = self.episode_pool.classes.len();
        if n < spec.way {
            return Err(Error::InsufficientData(format!(
                "{} partition has {n} classes, {}-way episodes need {}",
                self.partition, spec.way, spec.way
            )));
        }
        for (c, imgs) in self.episode_pool.classes.iter().zip(&self.episode_pool.images) {
            if imgs.len() < spec.shots + 1 {
                return Err(Error::InsufficientData(format!(
                    "class {c} in {} partition has {} images, {}-shot episodes need {}",
                    self.partition,
                    imgs.len(),
                    spec.shots,
                    spec.shots + 1
                )));
            }
        }
        if spec.junk_enabled() {
            let usable = self.junk_pool.images.iter().filter(|imgs| !imgs.is_empty()).count();
            if usable <= spec.way {
                return Err(Error::InsufficientData(format!(
                    "{} partition offers {usable} junk classes; junk needs at least one class outside a {}-way episode",
                    self.partition, spec.way
                )));
            }
        }
        Ok(())
    }

    fn has_other(&self, id: u64, episode: &[u32], own: Option<u32>) -> bool {
        self.categories
            .get(&id)
            .is_some_and(|cats| cats.iter().any(|c| Some(*c) != own && episode.contains(c)))
    }

    pub fn sample_episode<R: Rng + ?Sized>(&self, spec: &EpisodeSpec, rng: &mut R) -> Result<Episode> {
        spec.validate()?;
        let pool = &self.episode_pool;
        if pool.classes.len() < spec.way {
            return Err(Error::InsufficientData(format!(
                "{} partition has {} classes, need {}",
                self.partition,
                pool.classes.len(),
                spec.way
            )));
        }
        let picked: Vec<usize> = index::sample(rng, pool.classes.len(), spec.way).into_vec();
        let classes: Vec<u32> = picked.iter().map(|&i| pool.classes[i]).collect();

        let junk = spec.junk_enabled() && rng.random_bool(spec.junk_probability);
        let query_class = (!junk).then(|| rng.random_range(0..spec.way));

        let mut support = Vec::with_capacity(spec.way);
        let mut query = None;
        for (k, &slot) in picked.iter().enumerate() {
            let c = classes[k];
            let eligible: Vec<u64> = pool.images[slot]
                .iter()
                .copied()
                .filter(|&id| !self.has_other(id, &classes, Some(c)))
                .collect();
            let need = spec.shots + usize::from(query_class == Some(k));
            if eligible.len() < need {
                return Err(Error::InsufficientData(format!(
                    "class {c} has {} eligible images in this episode, need {need}",
                    eligible.len()
                )));
            }
            let chosen = index::sample(rng, eligible.len(), need);
            let mut ids: Vec<u64> = chosen.iter().map(|i| eligible[i]).collect();
            if query_class == Some(k) {
                query = ids.pop();
            }
            support.push(ids);
        }

        let (query, label) = match query {
            Some(q) => (q, query_class.expect("query class set")),
            None => (self.sample_junk(&classes, rng)?, spec.way),
        };
        Ok(Episode {
            way: spec.way,
            shots: spec.shots,
            classes,
            support,
            query,
            label,
            junk_enabled: spec.junk_enabled(),
        })
    }

    /// Uniform over non-episode junk classes that still have an image free of
    /// every episode class, then uniform over those images.
    fn sample_junk<R: Rng + ?Sized>(&self, episode: &[u32], rng: &mut R) -> Result<u64> {
        let pool = &self.junk_pool;
        let mut candidates: Vec<usize> = (0..pool.classes.len())
            .filter(|&i| !episode.contains(&pool.classes[i]))
            .collect();
        while !candidates.is_empty() {
            let pick = rng.random_range(0..candidates.len());
            let slot = candidates[pick];
            let eligible: Vec<u64> = pool.images[slot]
                .iter()
                .copied()
                .filter(|&id| !self.has_other(id, episode, None))
                .collect();
            if !eligible.is_empty() {
                return Ok(eligible[rng.random_range(0..eligible.len())]);
            }
            candidates.swap_remove(pick);
        }
        Err(Error::InsufficientData(format!(
            "no junk image available outside episode classes {episode:?} in the {} partition",
            self.partition
        )))
    }
}

/// Seeded episode stream over a pool, resolved against an embedding store.
pub struct EpisodeSampler<'a> {
    pool: &'a EpisodePool,
    store: &'a EmbeddingStore,
    spec: EpisodeSpec,
    rng: rng::Rng,
}

impl<'a> EpisodeSampler<'a> {
    pub fn new(pool: &'a EpisodePool, store: &'a EmbeddingStore, spec: EpisodeSpec, rng: rng::Rng) -> Result<Self> {
        pool.check_spec(&spec)?;
        Ok(EpisodeSampler { pool, store, spec, rng })
    }

    pub fn next_ids(&mut self) -> Result<Episode> {
        self.pool.sample_episode(&self.spec, &mut self.rng)
    }
}

impl EpisodeSource for EpisodeSampler<'_> {
    fn next_episode(&mut self) -> Result<LabeledEpisode> {
        self.next_ids()?.resolve(self.store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ManifestRecord;

    fn cats(n: u32) -> Vec<u32> {
        (0..n).collect()
    }

    #[test]
    fn default_split_sizes_are_disjoint() {
        let splits = make_splits(&cats(80), 12, DEFAULT_SPLIT_SIZES, 1).unwrap();
        assert_eq!(splits.len(), 12);
        for s in &splits {
            assert_eq!(s.train_classes.len(), 57);
            assert_eq!(s.val_classes.len(), 8);
            assert_eq!(s.test_classes.len(), 15);
            let all: HashSet<u32> = s
                .train_classes
                .iter()
                .chain(&s.val_classes)
                .chain(&s.test_classes)
                .copied()
                .collect();
            assert_eq!(all.len(), 80);
        }
        assert_ne!(splits[0], splits[1]);
    }

    #[test]
    fn degenerate_and_oversized_splits() {
        let s = make_splits(&cats(80), 1, (80, 0, 0), 3).unwrap();
        assert_eq!(s[0].train_classes, cats(80));
        assert!(s[0].val_classes.is_empty() && s[0].test_classes.is_empty());
        assert!(make_splits(&cats(80), 1, (60, 10, 11), 3).is_err());
    }

    #[test]
    fn splits_are_seeded() {
        let a = make_splits(&cats(80), 3, DEFAULT_SPLIT_SIZES, 9).unwrap();
        let b = make_splits(&cats(80), 3, DEFAULT_SPLIT_SIZES, 9).unwrap();
        let c = make_splits(&cats(80), 3, DEFAULT_SPLIT_SIZES, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    fn toy_split() -> ClassSplit {
        // train {0,1}, val {2}, test {3}
        ClassSplit::new(0, 0, vec![0, 1], vec![2], vec![3]).unwrap()
    }

    fn rec(id: u64, c: &[u32], s: SourceSplit) -> ManifestRecord {
        ManifestRecord::new(id, c.to_vec(), s).unwrap()
    }

    #[test]
    fn assignment_rules() {
        use SourceSplit::{Train, Val};
        let train = Manifest::new(vec![
            rec(1, &[0, 1], Train),
            rec(2, &[2], Train),
            rec(3, &[3], Train),
            rec(4, &[2, 3], Train),
        ])
        .unwrap();
        let val = Manifest::new(vec![rec(10, &[0, 3], Val), rec(11, &[0, 2], Val)]).unwrap();
        let a = assign_images(&toy_split(), &train, &val, 5).unwrap();
        assert_eq!(a.get(1), Some(Partition::Train));
        assert_eq!(a.get(2), Some(Partition::Val));
        assert_eq!(a.get(3), Some(Partition::Ignored));
        assert_eq!(a.get(4), Some(Partition::Val));
        assert_eq!(a.get(10), Some(Partition::Test));
        assert_eq!(a.get(11), Some(Partition::Ignored));
    }

    #[test]
    fn mixed_images_land_in_train_or_their_fallback() {
        use SourceSplit::Train;
        let train = Manifest::new(
            (0..200)
                .map(|i| rec(i, if i % 2 == 0 { &[0, 2] } else { &[1, 3] }, Train))
                .collect(),
        )
        .unwrap();
        let a = assign_images(&toy_split(), &train, &Manifest::default(), 5).unwrap();
        for i in 0..200u64 {
            let p = a.get(i).unwrap();
            if i % 2 == 0 {
                assert!(matches!(p, Partition::Train | Partition::Val));
            } else {
                assert!(matches!(p, Partition::Train | Partition::Ignored));
            }
        }
        // source-val images never reach train or val
        assert_eq!(a.count(Partition::Test), 0);
    }

    #[test]
    fn assignment_rejects_unknown_category_and_wrong_source() {
        let train = Manifest::new(vec![rec(1, &[42], SourceSplit::Train)]).unwrap();
        let err = assign_images(&toy_split(), &train, &Manifest::default(), 0).unwrap_err();
        assert!(err.to_string().contains("category 42"));

        let train = Manifest::new(vec![rec(1, &[0], SourceSplit::Val)]).unwrap();
        assert!(assign_images(&toy_split(), &train, &Manifest::default(), 0).is_err());
    }

    fn single_label_pool(n_classes: u32, per_class: u64) -> (ClassSplit, DatasetAssignment, Manifest) {
        let split = ClassSplit::new(0, 0, cats(n_classes), vec![], vec![]).unwrap();
        let records = (0..n_classes as u64 * per_class)
            .map(|i| rec(i, &[(i / per_class) as u32], SourceSplit::Train))
            .collect();
        let manifest = Manifest::new(records).unwrap();
        let assignment = assign_images(&split, &manifest, &Manifest::default(), 0).unwrap();
        (split, assignment, manifest)
    }

    #[test]
    fn episodes_are_well_formed() {
        let (split, assignment, manifest) = single_label_pool(6, 10);
        let pool = EpisodePool::build(
            &split,
            &assignment,
            &[&manifest],
            Partition::Train,
            JunkPool::SamePartition,
        )
        .unwrap();
        let spec = EpisodeSpec::default();
        let mut rng = rng::stream(1, &[0]);
        for _ in 0..500 {
            let ep = pool.sample_episode(&spec, &mut rng).unwrap();
            let distinct: HashSet<_> = ep.classes.iter().collect();
            assert_eq!(distinct.len(), 3);
            let support: HashSet<u64> = ep.support.iter().flatten().copied().collect();
            assert_eq!(support.len(), 15);
            assert!(!support.contains(&ep.query));
            let qcat = (ep.query / 10) as u32;
            if ep.is_junk() {
                assert!(!ep.classes.contains(&qcat));
            } else {
                assert_eq!(ep.classes[ep.label], qcat);
            }
            for (k, ids) in ep.support.iter().enumerate() {
                assert!(ids.iter().all(|id| (id / 10) as u32 == ep.classes[k]));
            }
        }
    }

    #[test]
    fn no_junk_mode_never_labels_junk() {
        let (split, assignment, manifest) = single_label_pool(5, 8);
        let pool = EpisodePool::build(
            &split,
            &assignment,
            &[&manifest],
            Partition::Train,
            JunkPool::SamePartition,
        )
        .unwrap();
        let spec = EpisodeSpec {
            way: 5,
            shots: 5,
            junk_probability: 0.0,
        };
        pool.check_spec(&spec).unwrap();
        let mut rng = rng::stream(2, &[0]);
        for _ in 0..200 {
            let ep = pool.sample_episode(&spec, &mut rng).unwrap();
            assert!(ep.label < 5);
            assert!(!ep.junk_enabled);
        }
    }

    #[test]
    fn multi_label_images_are_excluded_from_other_classes() {
        let split = ClassSplit::new(0, 0, cats(4), vec![], vec![]).unwrap();
        let mut records: Vec<ManifestRecord> = (0..40)
            .map(|i| rec(i, &[(i / 10) as u32], SourceSplit::Train))
            .collect();
        // images carrying both class 0 and class 1
        records.extend((100..110).map(|i| rec(i, &[0, 1], SourceSplit::Train)));
        let manifest = Manifest::new(records).unwrap();
        let assignment = assign_images(&split, &manifest, &Manifest::default(), 0).unwrap();
        let pool = EpisodePool::build(
            &split,
            &assignment,
            &[&manifest],
            Partition::Train,
            JunkPool::SamePartition,
        )
        .unwrap();
        let spec = EpisodeSpec {
            way: 2,
            shots: 5,
            junk_probability: 0.5,
        };
        let mut rng = rng::stream(3, &[0]);
        for _ in 0..500 {
            let ep = pool.sample_episode(&spec, &mut rng).unwrap();
            let both = ep.classes.contains(&0) && ep.classes.contains(&1);
            let ids = ep.support.iter().flatten().chain(std::iter::once(&ep.query));
            if both {
                assert!(ids.clone().all(|&id| id < 100));
            }
            if ep.is_junk() {
                // a junk query never carries an episode class
                let q = ep.query;
                let qcats: Vec<u32> = if q >= 100 { vec![0, 1] } else { vec![(q / 10) as u32] };
                assert!(qcats.iter().all(|c| !ep.classes.contains(c)));
            }
        }
    }

    #[test]
    fn insufficient_data_names_the_class() {
        let (split, assignment, manifest) = single_label_pool(4, 3);
        let pool = EpisodePool::build(
            &split,
            &assignment,
            &[&manifest],
            Partition::Train,
            JunkPool::SamePartition,
        )
        .unwrap();
        let err = pool.check_spec(&EpisodeSpec::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
        assert!(err.to_string().contains("class 0"), "{err}");

        let (split, assignment, manifest) = single_label_pool(3, 10);
        let pool = EpisodePool::build(
            &split,
            &assignment,
            &[&manifest],
            Partition::Train,
            JunkPool::SamePartition,
        )
        .unwrap();
        // 3 classes cannot supply junk for 3-way episodes
        assert!(pool.check_spec(&EpisodeSpec::default()).is_err());
    }

    #[test]
    fn held_out_junk_is_rejected_for_training() {
        let (split, assignment, manifest) = single_label_pool(4, 10);
        assert!(EpisodePool::build(&split, &assignment, &[&manifest], Partition::Train, JunkPool::HeldOut).is_err());
    }

    #[test]
    fn held_out_junk_draws_from_the_other_held_out_pool() {
        use SourceSplit::{Train, Val};
        // train {0..4}, val {4,5,6}, test {7,8,9}
        let split = ClassSplit::new(0, 0, cats(4), vec![4, 5, 6], vec![7, 8, 9]).unwrap();
        let train = Manifest::new((0..70).map(|i| rec(i, &[(i / 10) as u32], Train)).collect()).unwrap();
        let val = Manifest::new((100..200).map(|i| rec(i, &[((i - 100) / 10) as u32], Val)).collect()).unwrap();
        let assignment = assign_images(&split, &train, &val, 0).unwrap();
        let pool =
            EpisodePool::build(&split, &assignment, &[&train, &val], Partition::Test, JunkPool::HeldOut).unwrap();
        let spec = EpisodeSpec {
            junk_probability: 1.0,
            ..EpisodeSpec::default()
        };
        pool.check_spec(&spec).unwrap();
        let mut rng = rng::stream(4, &[0]);
        for _ in 0..100 {
            let ep = pool.sample_episode(&spec, &mut rng).unwrap();
            assert!(ep.is_junk());
            // val-partition images are ids 40..70
            assert!((40..70).contains(&ep.query), "{}", ep.query);
        }
    }

    #[test]
    fn partition_and_junk_pool_parse() {
        assert_eq!("test".parse::<Partition>().unwrap(), Partition::Test);
        assert!("holdout".parse::<Partition>().is_err());
        assert_eq!("held-out".parse::<JunkPool>().unwrap(), JunkPool::HeldOut);
    }
}
