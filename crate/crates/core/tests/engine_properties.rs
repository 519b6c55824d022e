use fewshot_core::engine::{episode_prototypes, softmax};
use fewshot_core::synthetic::{random_episode, random_params};
use fewshot_core::{
    class_scores, compute_prototypes, junk_score, predict, predict_episode, project, rng, update_prototype,
    DistanceKind, LabeledEpisode, ModelParams,
};
use proptest::prelude::*;
use rand::Rng;

fn distance_kind() -> impl Strategy<Value = DistanceKind> {
    prop_oneof![Just(DistanceKind::Euclidean), Just(DistanceKind::SquaredEuclidean)]
}

/// Params plus an episode, with every value derived from `seed`.
fn instance(
    seed: u64,
    dim: usize,
    proj: usize,
    way: usize,
    shots: usize,
    kind: DistanceKind,
) -> (ModelParams, LabeledEpisode) {
    let mut r = rng::stream(seed, &[77]);
    let params = random_params(&mut r, dim, proj).unwrap().with_distance(kind);
    let label = r.random_range(0..=way);
    (params, random_episode(&mut r, dim, way, shots, label))
}

fn mean_oracle(params: &ModelParams, shots: &[Vec<f64>]) -> Vec<f64> {
    let p = params.proj_dim();
    let mut acc = vec![0.0; p];
    for e in shots {
        for j in 0..p {
            let z: f64 = (0..params.dim()).map(|i| params.g_at(i, j) * e[i]).sum();
            acc[j] += z;
        }
    }
    acc.iter().map(|v| v / shots.len() as f64).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn probabilities_normalize(seed: u64, dim in 1usize..10, proj in 1usize..6, way in 1usize..6, shots in 1usize..4, kind in distance_kind()) {
        let (params, ep) = instance(seed, dim, proj, way, shots, kind);
        let pred = predict_episode(&params, &ep).unwrap();
        prop_assert_eq!(pred.probabilities.len(), way + 1);
        let sum: f64 = pred.probabilities.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9, "sum {}", sum);
        prop_assert!(pred.probabilities.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn best_class_probability_is_nearest_prototype(seed: u64, way in 1usize..6, shots in 1usize..4, kind in distance_kind()) {
        let (params, ep) = instance(seed, 6, 3, way, shots, kind);
        let set = episode_prototypes(&params, &ep).unwrap();
        let pred = predict(&params, &set, &ep.query).unwrap();
        let q = project(&params, &ep.query).unwrap();
        let d: Vec<f64> = set.prototypes.iter().map(|p| p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum()).collect();
        let nearest = (0..way).fold(0, |best, k| if d[k] < d[best] { k } else { best });
        let probs = &pred.probabilities[..way];
        let top = (0..way).fold(0, |best, k| if probs[k] > probs[best] { k } else { best });
        prop_assert!(top == nearest || (d[top] - d[nearest]).abs() <= 1e-12 * d[nearest].max(1.0));
    }

    #[test]
    fn junk_head_scales_linearly(seed: u64, c in 0.01f64..100.0, way in 1usize..5) {
        let (params, ep) = instance(seed, 5, 4, way, 3, DistanceKind::Euclidean);
        let scaled = LabeledEpisode {
            support: ep.support.iter().map(|s| s.iter().map(|e| e.iter().map(|x| c * x).collect()).collect()).collect(),
            query: ep.query.iter().map(|x| c * x).collect(),
            label: ep.label,
        };
        let j = junk_score(&params, &episode_prototypes(&params, &ep).unwrap(), &ep.query).unwrap();
        let js = junk_score(&params, &episode_prototypes(&params, &scaled).unwrap(), &scaled.query).unwrap();
        prop_assert!((js - c * j).abs() <= 1e-9 * (1.0 + (c * j).abs()), "{} vs {}", js, c * j);
        let s = class_scores(&params, &episode_prototypes(&params, &ep).unwrap(), &ep.query).unwrap();
        let ss = class_scores(&params, &episode_prototypes(&params, &scaled).unwrap(), &scaled.query).unwrap();
        for (a, b) in s.iter().zip(&ss) {
            prop_assert!((b - c * a).abs() <= 1e-9 * (1.0 + (c * a).abs()));
        }
    }

    #[test]
    fn permuting_classes_permutes_outputs(seed: u64, way in 2usize..6, kind in distance_kind()) {
        let (params, ep) = instance(seed, 6, 4, way, 2, kind);
        let mut r = rng::stream(seed, &[78]);
        let mut perm: Vec<usize> = (0..way).collect();
        for i in (1..way).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        // Class k of the permuted episode is class perm[k] of the original.
        let permuted = LabeledEpisode {
            support: perm.iter().map(|&k| ep.support[k].clone()).collect(),
            query: ep.query.clone(),
            label: ep.label,
        };
        let a = predict_episode(&params, &ep).unwrap();
        let b = predict_episode(&params, &permuted).unwrap();
        for k in 0..way {
            prop_assert!((b.class_scores[k] - a.class_scores[perm[k]]).abs() <= 1e-12);
            prop_assert!((b.probabilities[k] - a.probabilities[perm[k]]).abs() <= 1e-12);
        }
        prop_assert!((a.junk_probability() - b.junk_probability()).abs() <= 1e-12);
        prop_assert!((a.junk_score - b.junk_score).abs() <= 1e-9 * (1.0 + a.junk_score.abs()));
    }

    #[test]
    fn prototypes_equal_brute_force_mean(seed: u64, sizes in prop::collection::vec(1usize..=20, 1..5)) {
        let mut r = rng::stream(seed, &[79]);
        let params = random_params(&mut r, 5, 3).unwrap();
        let shots: Vec<Vec<Vec<f64>>> = sizes
            .iter()
            .map(|&n| (0..n).map(|_| (0..5).map(|_| r.random_range(-3.0..3.0)).collect()).collect())
            .collect();
        let support: Vec<(usize, &[f64])> = shots
            .iter()
            .enumerate()
            .flat_map(|(k, s)| s.iter().map(move |e| (k, e.as_slice())))
            .collect();
        let set = compute_prototypes(&params, &support).unwrap();
        prop_assert_eq!(&set.counts, &sizes);
        for (k, s) in shots.iter().enumerate() {
            for (a, b) in set.prototypes[k].iter().zip(mean_oracle(&params, s)) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        // Growing each class one shot at a time reaches the same prototypes.
        let firsts: Vec<(usize, &[f64])> = shots.iter().enumerate().map(|(k, s)| (k, s[0].as_slice())).collect();
        let mut inc = compute_prototypes(&params, &firsts).unwrap();
        for (k, s) in shots.iter().enumerate() {
            for e in &s[1..] {
                inc = update_prototype(inc, k, &project(&params, e).unwrap()).unwrap();
            }
        }
        prop_assert_eq!(&inc.counts, &sizes);
        for (a, b) in inc.prototypes.iter().flatten().zip(set.prototypes.iter().flatten()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn prediction_is_bit_reproducible(seed: u64, kind in distance_kind()) {
        let (params, ep) = instance(seed, 7, 3, 3, 5, kind);
        let a = predict_episode(&params, &ep).unwrap();
        let b = predict_episode(&params.clone(), &ep.clone()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn softmax_is_shift_invariant(logits in prop::collection::vec(-50.0f64..50.0, 1..8), shift in -1e3f64..1e3) {
        let shifted: Vec<f64> = logits.iter().map(|x| x + shift).collect();
        for (a, b) in softmax(&logits).iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}
