//! Acceptance gate. Prints one `PASS`/`FAIL` line per criterion and fails if
//! any criterion fails.
//!
//! Criteria 5 and 6 train on the full-size world for ten seeds each and take
//! several minutes in release mode.

use std::collections::BTreeSet;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use eslm::compare::{compare_variants, COMPARISON_FILE, PLOT_FILE};
use eslm::config::ExperimentConfig;
use eslm::formats::{read_events, read_metrics};
use eslm::pipeline::{
    self, run_experiment, EVENTS_FILE, METRICS_FILE, SAMPLES_PS_FILE, SSB_FILE, TABLE_FILE,
};
use eslm::snapshot::Snapshot;
use eslm_core::dataset::{
    build_dp_dataset, join_purchases, negative_sample, purchases_from_log, DatasetBuilder,
    FeatureLayout, Label, Purchase, Sample, Split,
};
use eslm_core::eval::{auc_counts, predict, Scorer};
use eslm_core::funnel::{
    generate_world, run_simulation, stream_rng, EpisodeConfig, FunnelEvent, WorldConfig,
};
use eslm_core::model::GradTolerance;
use eslm_core::model::{eslm_score, forward, Gradients, Head, ModelParams, ModelShape};
use eslm_core::objectives::{adagrad_step, AdagradState, Variant};
use eslm_core::train::{check_eslm_gradients, untrained_losses};
use rand::seq::SliceRandom;
use rand::Rng;

const SEEDS: std::ops::RangeInclusive<u64> = 1..=10;

type Outcome = (bool, String);

fn report(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let (passed, detail) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    let line = format!(
        "criterion {n} [{}] {name}: {detail} ({:.1}s)\n",
        if passed { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    // Written to the process stdout directly so the line survives output capture.
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    passed
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let r = check_eslm_gradients(7, 1e-5, GradTolerance::default()).unwrap();
    let elapsed = start.elapsed();
    let ok = r.passed() && elapsed < Duration::from_secs(30);
    (
        ok,
        format!(
            "{} coordinates, {} failures, max relative error {:.2e}, max absolute error {:.2e}, {:.1}s",
            r.checked,
            r.failures.len(),
            r.max_relative_error,
            r.max_absolute_error,
            elapsed.as_secs_f64()
        ),
    )
}

fn pairwise_twice_u(scores: &[f64], labels: &[bool]) -> u128 {
    let mut twice = 0u128;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                twice += if scores[i] > scores[j] {
                    2
                } else if scores[i] == scores[j] {
                    1
                } else {
                    0
                };
            }
        }
    }
    twice
}

fn auc_oracle() -> Outcome {
    let worked = auc_counts(&[0.9, 0.8, 0.3], &[true, false, true])
        .unwrap()
        .auc();
    if worked != 0.5 {
        return (false, format!("worked case gave {worked}"));
    }
    let mut rng = stream_rng(2, 0xA0C, 0);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let n = rng.random_range(2..=2000usize);
        let levels = rng.random_range(1..=50u32);
        let scores: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.random_range(0..levels)) / 7.0)
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        labels[0] = true;
        labels[1] = false;
        let c = auc_counts(&scores, &labels).unwrap();
        let oracle = pairwise_twice_u(&scores, &labels);
        if c.twice_u != oracle {
            return (
                false,
                format!("trial {trial}: 2U {} vs oracle {oracle}", c.twice_u),
            );
        }
        let pairs = (c.positives * c.negatives) as f64;
        worst = worst.max((c.auc() - oracle as f64 / 2.0 / pairs).abs());
    }
    (
        worst <= 1e-12,
        format!("100 tied trials exact on 2U, max AUC gap {worst:.1e}, worked case 0.5"),
    )
}

fn small_world_samples(seed: u64) -> (eslm_core::funnel::World, Vec<Sample>) {
    let wc = WorldConfig {
        users: 60,
        items: 300,
        categories: 8,
        segments: 4,
        ..WorldConfig::default()
    };
    let world = generate_world(&wc, seed).unwrap();
    let ep = EpisodeConfig {
        pool_size: 100,
        ps_size: 20,
        impressions: 5,
        ..EpisodeConfig::default()
    };
    let events = run_simulation(&world, &ep, 3).unwrap().events;
    let samples = DatasetBuilder::new(&world, &events, 2)
        .unwrap()
        .ps(Split::Train)
        .samples;
    (world, samples)
}

fn untrained_anchor() -> Outcome {
    let (world, mut samples) = small_world_samples(3);
    let vocab = FeatureLayout::for_world(&world).vocab_size();
    let params = ModelParams::init(ModelShape::new(vocab), 11).unwrap();
    let mut rng = stream_rng(3, 0xA0C, 1);
    let mut worst_loss = 0.0f64;
    let mut losses = 0;
    for _ in 0..10 {
        samples.shuffle(&mut rng);
        let batch = &samples[..rng.random_range(1..=256usize)];
        let trace = forward(&params, batch).unwrap();
        if trace
            .samples
            .iter()
            .any(|s| s.prob(Head::A) != 0.5 || s.prob(Head::G) != 0.5)
        {
            return (false, "a head output differs from 0.5".into());
        }
        for l in untrained_losses(&params, batch).unwrap() {
            worst_loss = worst_loss.max((l - std::f64::consts::LN_2).abs());
            losses += 1;
        }
    }
    (
        worst_loss <= 1e-9,
        format!("{losses} losses, max |loss - ln 2| = {worst_loss:.1e}"),
    )
}

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.world.users = 80;
    cfg.world.items = 400;
    cfg.world.categories = 10;
    cfg.world.segments = 4;
    cfg.funnel.pool_size = 150;
    cfg.funnel.ps_size = 20;
    cfg.training.steps = 150;
    cfg.training.batch_size = 64;
    cfg.dataset.negative_rate = 0.3;
    cfg
}

fn decomposition(dir: &Path, cfg: &ExperimentConfig, seed: u64) -> Outcome {
    let world = pipeline::world(cfg, seed).unwrap();
    let data = pipeline::load_datasets(&world, dir).unwrap();
    let snap = Snapshot::load(&dir.join("models/ESLM.snap")).unwrap();
    let rate = cfg.dataset.negative_rate;
    let preds = predict(&snap.params, &data.ps_test.samples)
        .unwrap()
        .corrected(rate)
        .unwrap();
    let reported = preds.scores(Scorer::EslmProduct);
    let trace = forward(&snap.params, &data.ps_test.samples).unwrap();
    let mut worst = 0.0f64;
    for (i, s) in trace.samples.iter().enumerate() {
        let p = s.prob(Head::A);
        let p_a = p / (p + (1.0 - p) / rate);
        let product = p_a * s.prob(Head::G);
        let gap = (reported[i] - product).abs();
        if gap > f64::EPSILON * product.abs() / 2.0
            || eslm_score(preds.p_a[i], preds.p_g[i]) != reported[i]
        {
            return (false, format!("sample {i}: {} vs {product}", reported[i]));
        }
        worst = worst.max(gap);
    }
    (
        !reported.is_empty(),
        format!(
            "{} evaluated samples, max |score - p_a*p_g| = {worst:.1e}",
            reported.len()
        ),
    )
}

/// Per-seed AUC of `variant` on `(space, label)` read back from `metrics.csv`.
fn metric(dir: &Path, variant: Variant, space: &str, label: &str) -> f64 {
    read_metrics(&dir.join(METRICS_FILE))
        .unwrap()
        .into_iter()
        .find(|m| m.variant == variant.as_str() && m.space == space && m.label == label)
        .unwrap()
        .auc
}

fn standard_config(variants: [Variant; 2]) -> ExperimentConfig {
    ExperimentConfig {
        variants: variants.iter().map(|v| v.as_str().to_string()).collect(),
        seeds: SEEDS.collect(),
        ..ExperimentConfig::default()
    }
}

fn ssb_direction(out: &Path) -> Outcome {
    let start = Instant::now();
    let cfg = standard_config([Variant::Pv2PayG, Variant::Ps2PayG]);
    let mut wins = 0;
    let mut events = 0;
    for seed in SEEDS {
        let dir = run_experiment(&cfg, seed, out).unwrap();
        if seed == 1 {
            events = read_events(&dir.join(EVENTS_FILE)).unwrap().len();
        }
        let ps2 = metric(&dir, Variant::Ps2PayG, "ps", "pay_a");
        let pv2 = metric(&dir, Variant::Pv2PayG, "ps", "pay_a");
        wins += usize::from(ps2 > pv2);
        std::fs::remove_dir_all(&dir).unwrap();
    }
    let elapsed = start.elapsed();
    (
        wins >= 8 && elapsed < Duration::from_secs(15 * 60),
        format!(
            "PS2Pay_g beats Pv2Pay_g on AUC(PSToPay_a) in {wins}/10 seeds, {events} PS events per run, {:.0}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn sparsity_direction(out: &Path) -> Outcome {
    let mut cfg = standard_config([Variant::Ps2PayG, Variant::Eslm]);
    cfg.world.own_scene_pay_scale = 0.12;
    let mut wins = 0;
    let mut worst_ratio = 0.0f64;
    for seed in SEEDS {
        let dir = run_experiment(&cfg, seed, out).unwrap();
        let events = read_events(&dir.join(EVENTS_FILE)).unwrap();
        let pay_g = events.iter().filter(|e| e.pay_g).count();
        let pay_a = events.iter().filter(|e| e.pay_a()).count();
        worst_ratio = worst_ratio.max(pay_g as f64 / pay_a as f64);
        let eslm = metric(&dir, Variant::Eslm, "ps", "pay_g");
        let ps2 = metric(&dir, Variant::Ps2PayG, "ps", "pay_g");
        wins += usize::from(eslm > ps2);
        std::fs::remove_dir_all(&dir).unwrap();
    }
    (
        wins >= 8 && worst_ratio <= 0.10,
        format!(
            "ESLM beats PS2Pay_g on AUC(PSToPay_g) in {wins}/10 seeds, pay_g/pay_a at most {:.1}%",
            100.0 * worst_ratio
        ),
    )
}

fn nested_loop_pay_a(ps: &[FunnelEvent], purchases: &[Purchase]) -> Vec<((u32, u32, u32), bool)> {
    let keys: BTreeSet<(u32, u32, u32)> = ps
        .iter()
        .map(|e| (e.user_id, e.item_id, e.timestamp))
        .collect();
    keys.into_iter()
        .map(|k| {
            let mut hit = false;
            for p in purchases {
                hit |= (p.user_id, p.item_id, p.timestamp) == k;
            }
            (k, hit)
        })
        .collect()
}

fn key_set(samples: &[Sample]) -> BTreeSet<(u32, u32, u32)> {
    samples.iter().map(Sample::key).collect()
}

fn simulator_invariants() -> Outcome {
    let mut rng = stream_rng(7, 0xA0C, 2);
    let mut total_events = 0;
    for case in 0..50 {
        let ps_size = rng.random_range(2..15usize);
        let wc = WorldConfig {
            users: rng.random_range(5..40),
            items: rng.random_range(60..300),
            scenes: rng.random_range(2..5),
            own_scene_pay_scale: rng.random_range(0.0..=1.0),
            other_scene_bias: rng.random_range(-3.0..0.0),
            categories: 7,
            segments: 5,
            max_seq_len: 8,
            warmup_history: 4,
            ..WorldConfig::default()
        };
        let ep = EpisodeConfig {
            pool_size: rng.random_range(ps_size..60),
            ps_size,
            impressions: rng.random_range(1..=ps_size.min(4)),
            match_noise: rng.random_range(0.0..3.0),
            rank_noise: rng.random_range(0.0..3.0),
        };
        let episodes = rng.random_range(2..4usize);
        let world = generate_world(&wc, rng.random()).unwrap();
        let events = run_simulation(&world, &ep, episodes).unwrap().events;
        total_events += events.len();
        let fail = |what: &str| (false, format!("case {case}: {what}"));
        if events.len() > 10_000 {
            return fail("log exceeds 10,000 events");
        }
        if !events
            .iter()
            .all(|e| e.is_ordered() && e.pay_a() == (e.pay_g || e.pay_other))
        {
            return fail("funnel ordering or pay_a identity violated");
        }
        let purchases = purchases_from_log(&events);
        let joined: Vec<_> = join_purchases(&events, &purchases)
            .events
            .iter()
            .map(|l| {
                (
                    (l.event.user_id, l.event.item_id, l.event.timestamp),
                    l.pay_a,
                )
            })
            .collect();
        if joined != nested_loop_pay_a(&events, &purchases) {
            return fail("join disagrees with the nested-loop oracle");
        }
        let builder = DatasetBuilder::new(&world, &events, 1).unwrap();
        let ps = builder.ps(Split::Train);
        let dp = build_dp_dataset(&ps);
        if !key_set(&dp.samples).is_subset(&key_set(&ps.samples))
            || dp.samples.iter().any(|s| !s.labels.pay_a)
        {
            return fail("D_p is not the purchased subset of D");
        }
        let rate = rng.random_range(0.05..=1.0);
        for label in [Label::PayA, Label::PayG, Label::Click] {
            let kept = negative_sample(&ps.samples, rate, label, rng.random()).unwrap();
            if kept.iter().filter(|s| s.label(label)).count() != ps.positives(label) {
                return fail("negative sampling dropped a positive");
            }
        }
    }
    (true, format!("50 configs, {total_events} events"))
}

fn determinism(a: &Path, b: &Path) -> Outcome {
    let mut cfg = small_config();
    cfg.seeds = vec![4, 5];
    let mut diffs = Vec::new();
    let mut dirs = [Vec::new(), Vec::new()];
    for (out, dirs) in [a, b].into_iter().zip(&mut dirs) {
        for &seed in &cfg.seeds {
            dirs.push(run_experiment(&cfg, seed, out).unwrap());
        }
        compare_variants(dirs, &out.join("compare")).unwrap();
    }
    let mut files = Vec::new();
    for (da, db) in dirs[0].iter().zip(&dirs[1]) {
        for f in [
            METRICS_FILE,
            SSB_FILE,
            TABLE_FILE,
            EVENTS_FILE,
            SAMPLES_PS_FILE,
        ] {
            files.push((da.join(f), db.join(f)));
        }
    }
    for f in [COMPARISON_FILE, PLOT_FILE] {
        files.push((a.join("compare").join(f), b.join("compare").join(f)));
    }
    for (x, y) in &files {
        if std::fs::read(x).unwrap() != std::fs::read(y).unwrap() {
            diffs.push(x.file_name().unwrap().to_string_lossy().to_string());
        }
    }
    (
        diffs.is_empty(),
        if diffs.is_empty() {
            format!(
                "{} artifact pairs byte-identical across two executions",
                files.len()
            )
        } else {
            format!("differing: {}", diffs.join(", "))
        },
    )
}

fn adagrad_closed_form() -> Outcome {
    let mut params = ModelParams::zeros(ModelShape {
        vocab: 4,
        dim: 2,
        heads: 1,
        head_dim: 1,
        hidden: [2, 2],
        seq_cap: 1,
    })
    .unwrap();
    let (lr, eps) = (0.01, 1e-8);
    let mut state = AdagradState::new(&params, lr, eps).unwrap();
    let mut grads = Gradients::zeros_like(&params);
    let gs = [0.3, -1.7, 2.5e-3];
    grads.values.towers[0].layers[0].weight.data[..3].copy_from_slice(&gs);
    let mut prev = params.towers[0].layers[0].weight.data.clone();
    let mut worst = 0.0f64;
    for t in 1..=1000u32 {
        adagrad_step(&mut params, &grads, &mut state).unwrap();
        for (k, &g) in gs.iter().enumerate() {
            let step = prev[k] - params.towers[0].layers[0].weight.data[k];
            let want = lr * g / ((f64::from(t) * g * g).sqrt() + eps);
            worst = worst.max((step - want).abs());
        }
        prev.clone_from(&params.towers[0].layers[0].weight.data);
    }
    (
        worst <= 1e-12,
        format!("1000 steps, max step error {worst:.1e}"),
    )
}

#[test]
fn acceptance_criteria() {
    let scratch = tempfile::tempdir().unwrap();
    let small = small_config();
    let small_dir = run_experiment(&small, 3, &scratch.path().join("decomposition")).unwrap();

    let results = [
        report(1, "gradient correctness", gradient_correctness),
        report(2, "AUC oracle equivalence", auc_oracle),
        report(3, "untrained anchor", untrained_anchor),
        report(4, "decomposition identity", || {
            decomposition(&small_dir, &small, 3)
        }),
        report(5, "SSB direction", || {
            ssb_direction(&scratch.path().join("ssb"))
        }),
        report(6, "sparsity alleviation direction", || {
            sparsity_direction(&scratch.path().join("sparse"))
        }),
        report(7, "simulator invariant suite", simulator_invariants),
        report(8, "determinism", || {
            determinism(&scratch.path().join("det_a"), &scratch.path().join("det_b"))
        }),
        report(9, "Adagrad closed form", adagrad_closed_form),
    ];
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, &ok)| !ok)
        .map(|(i, _)| i + 1)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
