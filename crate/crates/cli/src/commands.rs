use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use fewshot_core::ingest::{
    read_checkpoint, read_embeddings, read_manifest, read_split, write_assignment, write_checkpoint, write_embeddings,
    write_manifest, write_split, Manifest, SourceSplit,
};
use fewshot_core::metrics::{accuracy_report, evaluate, Proportion};
use fewshot_core::rng::{self, tags};
use fewshot_core::sampler::{
    assign_images, make_splits, EpisodePool, EpisodeSampler, EpisodeSpec, JunkPool, Partition,
};
use fewshot_core::simulator::{analytic_sq_distance, expected_sq_distance, simulate_curve, SimConfig};
use fewshot_core::synthetic::{gaussian_clusters, random_episode, random_params, ClusterConfig};
use fewshot_core::trainer::{default_decay, gradcheck, train, EpisodeSource, TrainConfig, ValidationPoint};

use crate::{CliError, Command, EvalArgs, GradcheckArgs, SimulateArgs, SplitArgs, SynthArgs, TrainArgs};

type CliResult<T> = Result<T, CliError>;

pub(crate) fn dispatch(command: &Command) -> CliResult<String> {
    match command {
        Command::Split(a) => cmd_split(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn require_files(paths: &[(&str, &Path)]) -> CliResult<()> {
    for (flag, path) in paths {
        if !path.is_file() {
            return Err(CliError::Usage(format!("--{flag} {}: no such file", path.display())));
        }
    }
    Ok(())
}

fn prepare_out(out: &Path) -> CliResult<()> {
    if out.exists() && !out.is_dir() {
        return Err(CliError::Usage(format!("--out {} is not a directory", out.display())));
    }
    fs::create_dir_all(out).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", out.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| {
        CliError::Data(fewshot_core::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("outputs serialize");
    text.push('\n');
    write_text(path, &text)
}

/// Output envelope shared by every JSON result.
#[derive(Serialize)]
struct Document<'a, C: Serialize, R: Serialize> {
    config: &'a C,
    seed: u64,
    #[serde(flatten)]
    body: R,
}

fn cmd_split(a: &SplitArgs) -> CliResult<String> {
    let &[n_train, n_val, n_test] = a.sizes.as_slice() else {
        return Err(CliError::Usage(format!(
            "--sizes takes three counts (train,val,test), got {}",
            a.sizes.len()
        )));
    };
    if a.n_splits == 0 {
        return Err(CliError::Usage("--n-splits must be at least 1".into()));
    }
    let categories: Vec<u32> = (0..a.categories).collect();
    let splits = make_splits(&categories, a.n_splits, (n_train, n_val, n_test), a.seed).map_err(CliError::usage)?;
    prepare_out(&a.out)?;
    let width = (a.n_splits - 1).to_string().len().max(2);
    let mut printed = String::new();
    for s in &splits {
        let path = a.out.join(format!("split_{:0width$}.txt", s.split_id));
        write_split(s, &path)?;
        let _ = writeln!(printed, "{}", path.display());
    }
    Ok(printed)
}

fn cmd_synth(a: &SynthArgs) -> CliResult<String> {
    let cfg = ClusterConfig {
        n_categories: a.categories,
        dim: a.dim,
        sigma: a.sigma,
        separation: a.separation,
        train_per_class: a.train_per_class,
        val_per_class: a.val_per_class,
        seed: a.seed,
    };
    let ds = gaussian_clusters(&cfg).map_err(CliError::usage)?;
    prepare_out(&a.out)?;
    write_embeddings(&ds.store, a.out.join("embeddings.bin"))?;
    write_manifest(&ds.train_manifest, a.out.join("manifest_train.jsonl"))?;
    write_manifest(&ds.val_manifest, a.out.join("manifest_val.jsonl"))?;
    Ok(format!(
        "wrote {} embeddings (dim {}) and manifests to {}\n",
        ds.store.len(),
        ds.store.dim(),
        a.out.display()
    ))
}

fn episode_spec(way: usize, shots: usize, junk_prob: f64) -> CliResult<EpisodeSpec> {
    let spec = EpisodeSpec {
        way,
        shots,
        junk_probability: junk_prob,
    };
    spec.validate().map_err(CliError::usage)?;
    Ok(spec)
}

#[derive(Serialize)]
struct TrainBody<'a> {
    train_config: &'a TrainConfig,
    split_id: u32,
    minibatches_run: usize,
    stopped_early: bool,
    best_step: usize,
    best_validation_loss: f64,
    b_distance: f64,
    b_magnitude: f64,
    validation_curve: &'a [ValidationPoint],
    loss_curve: &'a [f64],
}

fn cmd_train(a: &TrainArgs) -> CliResult<String> {
    let spec = episode_spec(a.way, a.shots, a.junk_prob)?;
    let config = TrainConfig {
        initial_lr: a.lr,
        total_minibatches: a.minibatches,
        minibatch_size: a.minibatch_size,
        decay: a.decay.unwrap_or_else(default_decay),
        eval_every: a.eval_every,
        patience: a.patience,
        val_episodes: a.val_episodes,
        seed: a.seed,
        proj_dim: a.proj_dim,
        distance: a.distance,
        ..TrainConfig::default()
    };
    config.validate().map_err(CliError::usage)?;
    require_files(&[
        ("embeddings", &a.embeddings),
        ("manifest-train", &a.manifest_train),
        ("manifest-val", &a.manifest_val),
        ("split", &a.split),
    ])?;
    if a.val_junk_pool == JunkPool::HeldOut && a.junk_prob == 0.0 {
        return Err(CliError::Usage(
            "--val-junk-pool has no effect with --junk-prob 0".into(),
        ));
    }
    prepare_out(&a.out)?;

    let store = read_embeddings(&a.embeddings)?;
    let train_manifest = read_manifest(&a.manifest_train)?;
    let val_manifest = read_manifest(&a.manifest_val)?;
    let split = read_split(&a.split)?;
    let assignment = assign_images(&split, &train_manifest, &val_manifest, a.seed)?;
    let manifests = [&train_manifest, &val_manifest];
    let train_pool = EpisodePool::build(
        &split,
        &assignment,
        &manifests,
        Partition::Train,
        JunkPool::SamePartition,
    )?;
    let val_pool = EpisodePool::build(&split, &assignment, &manifests, Partition::Val, a.val_junk_pool)?;
    let sid = u64::from(split.split_id);
    let mut train_source = EpisodeSampler::new(
        &train_pool,
        &store,
        spec,
        rng::stream(a.seed, &[tags::TRAIN_EPISODES, sid]),
    )?;
    let mut val_source = EpisodeSampler::new(&val_pool, &store, spec, rng::stream(a.seed, &[tags::VAL_EPISODES, sid]))?;

    let report = train(&config, store.dim(), &mut train_source, &mut val_source)?;

    write_checkpoint(
        &report.params,
        &report.optimizer,
        report.minibatches_run as u64,
        a.out.join("checkpoint.bin"),
    )?;
    write_assignment(&assignment, a.out.join("assignment.txt"))?;
    let body = TrainBody {
        train_config: &config,
        split_id: split.split_id,
        minibatches_run: report.minibatches_run,
        stopped_early: report.stopped_early,
        best_step: report.best_step,
        best_validation_loss: report.best_validation_loss,
        b_distance: report.params.b_distance,
        b_magnitude: report.params.b_magnitude,
        validation_curve: &report.validation_curve,
        loss_curve: &report.loss_curve,
    };
    write_json(
        &a.out.join("train_report.json"),
        &Document {
            config: a,
            seed: a.seed,
            body,
        },
    )?;
    Ok(format!(
        "trained {} mini-batches{}; best validation loss {:.6} at step {}; wrote {}\n",
        report.minibatches_run,
        if report.stopped_early { " (stopped early)" } else { "" },
        report.best_validation_loss,
        report.best_step,
        a.out.display()
    ))
}

#[derive(Serialize)]
struct Rows<R: Serialize> {
    rows: Vec<R>,
}

#[derive(Serialize)]
struct EvalRow {
    shots: usize,
    episodes: usize,
    non_junk_records: u64,
    junk_records: u64,
    non_junk_accuracy: Option<f64>,
    non_junk_ci_low: Option<f64>,
    non_junk_ci_high: Option<f64>,
    junk_accuracy: Option<f64>,
    junk_ci_low: Option<f64>,
    junk_ci_high: Option<f64>,
    overall_accuracy: Option<f64>,
    auc: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn split_manifests(paths: &[PathBuf]) -> CliResult<(Manifest, Manifest)> {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for p in paths {
        for r in read_manifest(p)?.records {
            match r.source {
                SourceSplit::Train => train.push(r),
                SourceSplit::Val => val.push(r),
            }
        }
    }
    Ok((Manifest::new(train)?, Manifest::new(val)?))
}

fn cmd_eval(a: &EvalArgs) -> CliResult<String> {
    if a.episodes == 0 {
        return Err(CliError::Usage("--episodes must be at least 1".into()));
    }
    if a.shots_list.is_empty() {
        return Err(CliError::Usage("--shots-list is empty".into()));
    }
    if a.partition == Partition::Ignored {
        return Err(CliError::Usage("--partition must be train, val or test".into()));
    }
    let specs = a
        .shots_list
        .iter()
        .map(|&n| episode_spec(a.way, n, a.junk_prob))
        .collect::<CliResult<Vec<_>>>()?;
    let mut files = vec![
        ("checkpoint", a.checkpoint.as_path()),
        ("embeddings", a.embeddings.as_path()),
    ];
    files.extend(a.manifest.iter().map(|p| ("manifest", p.as_path())));
    files.push(("split", &a.split));
    require_files(&files)?;
    prepare_out(&a.out)?;

    let ckpt = read_checkpoint(&a.checkpoint)?;
    let store = read_embeddings(&a.embeddings)?;
    if store.dim() != ckpt.params.dim() {
        return Err(CliError::Data(fewshot_core::Error::InvalidInput(format!(
            "embedding dimension {} does not match checkpoint dimension {}",
            store.dim(),
            ckpt.params.dim()
        ))));
    }
    let (train_manifest, val_manifest) = split_manifests(&a.manifest)?;
    let split = read_split(&a.split)?;
    let assignment = assign_images(&split, &train_manifest, &val_manifest, a.seed)?;
    let pool = EpisodePool::build(
        &split,
        &assignment,
        &[&train_manifest, &val_manifest],
        a.partition,
        a.junk_pool,
    )?;

    let mut rows = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let stream = rng::stream(a.seed, &[tags::EVAL_EPISODES, u64::from(split.split_id), i as u64]);
        let mut sampler = EpisodeSampler::new(&pool, &store, *spec, stream)?;
        let episodes = (0..a.episodes)
            .map(|_| sampler.next_episode())
            .collect::<fewshot_core::Result<Vec<_>>>()?;
        let report = accuracy_report(&evaluate(&ckpt.params, &episodes, a.junk_score)?)?;
        let v = |p: Option<Proportion>| p.map(|p| p.value);
        rows.push(EvalRow {
            shots: spec.shots,
            episodes: a.episodes,
            non_junk_records: report.non_junk_records,
            junk_records: report.junk_records,
            non_junk_accuracy: v(report.non_junk_accuracy),
            non_junk_ci_low: report.non_junk_accuracy.map(|p| p.ci_low),
            non_junk_ci_high: report.non_junk_accuracy.map(|p| p.ci_high),
            junk_accuracy: v(report.junk_accuracy),
            junk_ci_low: report.junk_accuracy.map(|p| p.ci_low),
            junk_ci_high: report.junk_accuracy.map(|p| p.ci_high),
            overall_accuracy: v(report.overall_accuracy),
            auc: report.auc,
        });
    }

    let mut csv =
        String::from("shots,non_junk_acc,junk_acc,auc,non_junk_ci_low,non_junk_ci_high,junk_ci_low,junk_ci_high\n");
    let mut printed = String::new();
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.shots,
            opt(r.non_junk_accuracy),
            opt(r.junk_accuracy),
            opt(r.auc),
            opt(r.non_junk_ci_low),
            opt(r.non_junk_ci_high),
            opt(r.junk_ci_low),
            opt(r.junk_ci_high)
        );
        let f = |x: Option<f64>| x.map_or("undefined".to_string(), |x| format!("{x:.4}"));
        let _ = writeln!(
            printed,
            "shots {:>2}: non-junk {}  junk {}  auc {}",
            r.shots,
            f(r.non_junk_accuracy),
            f(r.junk_accuracy),
            f(r.auc)
        );
    }
    write_json(
        &a.out.join("metrics.json"),
        &Document {
            config: a,
            seed: a.seed,
            body: Rows { rows },
        },
    )?;
    write_text(&a.out.join("metrics.csv"), &csv)?;
    Ok(printed)
}

#[derive(Serialize)]
struct SimRow {
    shots: usize,
    episodes: usize,
    correct: u64,
    accuracy: f64,
    half_width: f64,
    ci_low: f64,
    ci_high: f64,
}

#[derive(Serialize)]
struct DistanceRow {
    shots: usize,
    trials: usize,
    estimate: f64,
    analytic: f64,
    relative_error: f64,
}

fn cmd_simulate(a: &SimulateArgs) -> CliResult<String> {
    prepare_out_checked(a)?;
    if a.expected_distance {
        let mut rows = Vec::new();
        let mut csv = String::from("shots,estimate,analytic,relative_error\n");
        let mut printed = String::new();
        for &n in &a.shots_list {
            let estimate = expected_sq_distance(n, a.sigma, a.dim, a.episodes, a.seed)?;
            let analytic = analytic_sq_distance(n, a.sigma, a.dim);
            let row = DistanceRow {
                shots: n,
                trials: a.episodes,
                estimate,
                analytic,
                relative_error: (estimate - analytic).abs() / analytic,
            };
            let _ = writeln!(csv, "{},{},{},{}", n, estimate, analytic, row.relative_error);
            let _ = writeln!(
                printed,
                "N={n}: E|x'-mean|^2 = {estimate:.5} (analytic {analytic:.5}, relative error {:.3e})",
                row.relative_error
            );
            rows.push(row);
        }
        write_json(
            &a.out.join("distance.json"),
            &Document {
                config: a,
                seed: a.seed,
                body: Rows { rows },
            },
        )?;
        write_text(&a.out.join("distance.csv"), &csv)?;
        return Ok(printed);
    }

    let curve = simulate_curve(&sim_config(a))?;
    let rows: Vec<SimRow> = curve
        .points
        .iter()
        .map(|p| SimRow {
            shots: p.shots,
            episodes: a.episodes,
            correct: p.accuracy.successes,
            accuracy: p.accuracy.value,
            half_width: p.accuracy.half_width,
            ci_low: p.accuracy.ci_low,
            ci_high: p.accuracy.ci_high,
        })
        .collect();
    let mut printed = String::new();
    for r in &rows {
        let _ = writeln!(
            printed,
            "shots {:>2}: accuracy {:.4} +/- {:.4}",
            r.shots, r.accuracy, r.half_width
        );
    }
    write_json(
        &a.out.join("sim.json"),
        &Document {
            config: a,
            seed: a.seed,
            body: Rows { rows },
        },
    )?;
    write_text(&a.out.join("sim.csv"), &curve.to_csv())?;
    Ok(printed)
}

fn sim_config(a: &SimulateArgs) -> SimConfig {
    SimConfig {
        n_classes: a.n_classes,
        way: a.way,
        dim: a.dim,
        sigma: a.sigma,
        mean_scale: a.mean_scale,
        shots: a.shots_list.clone(),
        episodes_per_point: a.episodes,
        seed: a.seed,
    }
}

fn prepare_out_checked(a: &SimulateArgs) -> CliResult<()> {
    if a.expected_distance {
        if a.shots_list.is_empty() || a.shots_list.contains(&0) || a.episodes == 0 || a.dim == 0 {
            return Err(CliError::Usage(
                "expected-distance mode needs shots >= 1, episodes >= 1 and dim >= 1".into(),
            ));
        }
        if !(a.sigma.is_finite() && a.sigma > 0.0) {
            return Err(CliError::Usage(format!("--sigma must be positive, got {}", a.sigma)));
        }
    } else {
        sim_config(a).validate().map_err(CliError::usage)?;
    }
    prepare_out(&a.out)
}

fn cmd_gradcheck(a: &GradcheckArgs) -> CliResult<String> {
    if !(a.step.is_finite() && a.step > 0.0) {
        return Err(CliError::Usage(format!("--step must be positive, got {}", a.step)));
    }
    if a.tolerance.is_nan() || a.tolerance < 0.0 {
        return Err(CliError::Usage(format!(
            "--tolerance must be non-negative, got {}",
            a.tolerance
        )));
    }
    if a.dim == 0 || a.proj_dim == 0 || a.episodes == 0 {
        return Err(CliError::Usage(
            "--dim, --proj-dim and --episodes must be at least 1".into(),
        ));
    }
    let mut rng = rng::stream(a.seed, &[tags::SYNTHETIC]);
    let params = random_params(&mut rng, a.dim, a.proj_dim)?.with_distance(a.distance);
    let way = 3;
    let episodes: Vec<_> = (0..a.episodes)
        .map(|i| random_episode(&mut rng, a.dim, way, if i % 2 == 0 { 1 } else { 5 }, i % (way + 1)))
        .collect();
    let report = gradcheck(&params, &episodes, a.step, a.tolerance)?;
    let summary = format!(
        "{} entries over {} episodes; max relative error {:.3e} at {} of episode {} (analytic {:.6e}, numeric {:.6e}); tolerance {:e}",
        report.entries_checked,
        episodes.len(),
        report.max_rel_error,
        report.worst_entry,
        report.worst_episode,
        report.worst_analytic,
        report.worst_numeric,
        report.tolerance
    );
    if report.passed {
        Ok(format!("gradcheck passed: {summary}\n"))
    } else {
        Err(CliError::Check(format!("gradcheck: {summary}")))
    }
}
