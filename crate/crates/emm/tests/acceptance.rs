//! Acceptance run: prints one PASS/FAIL line per criterion.
//!
//! Structural criteria (1-5, 8, 9) make the process fail when they do not
//! hold. The two experimental criteria (6, 7) are reported as measured.

use std::time::{Duration, Instant};

use emm::config::RunConfig;
use emm::pipeline::{emm_config, run_experiment, Experiment};
use emm_core::akf::{select_partner, FusionGate, MtmHead, ScoreMode, TaskGate};
use emm_core::data::InputLayout;
use emm_core::deconstruct::{deconstruct_pool, find_common_layers, verify_roundtrip, TailMode};
use emm_core::emm::{build_emm, train_emm, EmmConfig, Variant};
use emm_core::gradcheck::{check_gradients, GradCheckConfig};
use emm_core::metrics::auc;
use emm_core::model::{ModelPool, TrainedModel};
use emm_core::rng::{self, Rng, StreamRng};
use emm_core::{Graph, ParamAlloc, Parameterized, Tensor};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_tensor(s: &mut StreamRng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::new(
        &[rows, cols],
        (0..rows * cols).map(|_| scale * rng::normal(s)).collect(),
    )
    .unwrap()
}

fn jitter<P: Parameterized>(m: &mut P, s: &mut StreamRng, scale: f64) {
    for p in m.params_mut() {
        for x in p.value.data_mut() {
            *x += scale * rng::normal(s);
        }
    }
}

/// A random fused network: one to three tasks, input width at most 6,
/// hidden widths at most 16, at most four hidden layers per model.
fn random_network(seed: u64) -> (emm_core::emm::EmmModel, Tensor, Vec<Vec<f64>>) {
    let mut s = rng::stream(seed, 1);
    let tasks = s.gen_range(1..=3usize);
    let input = s.gen_range(2..=6usize);
    let first = s.gen_range(2..=8usize);
    let layout = InputLayout::dense(input);
    let mut alloc = ParamAlloc::new(seed);
    let mut models = Vec::new();
    for t in 0..tasks {
        for k in 0..s.gen_range(1..=2usize) {
            let depth = s.gen_range(1..=4usize);
            let mut hidden = vec![first];
            hidden.extend((1..depth).map(|_| s.gen_range(2..=16usize)));
            let id = format!("t{t}-m{k}");
            models.push(TrainedModel::mlp(&id, &format!("t{t}"), &layout, &hidden, None, &mut alloc).unwrap());
        }
    }
    let pool = ModelPool::new(models).unwrap();
    let set = deconstruct_pool(&pool, &find_common_layers(&pool).unwrap(), TailMode::Adapter).unwrap();
    let variant = Variant::ALL[seed as usize % 4];
    let config = EmmConfig {
        score_mode: if seed.is_multiple_of(3) {
            ScoreMode::Cross
        } else {
            ScoreMode::SelfScore
        },
        tower_hidden: Some(vec![s.gen_range(2..=6usize)]),
        ..EmmConfig::variant(seed, variant)
    };
    let mut model = build_emm(&set, &config).unwrap();
    jitter(&mut model, &mut s, 0.2);
    let rows = 5;
    let x = random_tensor(&mut s, rows, input, 1.0);
    let labels = (0..tasks)
        .map(|_| (0..rows).map(|_| f64::from(u8::from(s.gen_bool(0.5)))).collect())
        .collect();
    (model, x, labels)
}

fn criterion_1() -> Outcome {
    let mut worst = 0.0f64;
    let (mut checked, mut skipped, mut with_merge) = (0, 0, 0);
    for seed in 0..100u64 {
        let (model, x, labels) = random_network(seed);
        with_merge += usize::from(model.levels.iter().any(|l| l.merges()));
        let refs: Vec<&[f64]> = labels.iter().map(Vec::as_slice).collect();
        let r = check_gradients(&model, &x, &refs, GradCheckConfig::default()).unwrap();
        worst = worst.max(r.max_rel_error);
        checked += r.checked;
        skipped += r.skipped;
    }
    outcome(
        worst < 1e-4 && checked > 0 && with_merge > 0,
        format!("max rel error {worst:.2e} over {checked} coordinates ({skipped} kinks skipped, {with_merge} nets with merge heads)"),
    )
}

fn random_probe(s: &mut StreamRng, layout: &InputLayout, rows: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * layout.raw_width());
    for _ in 0..rows {
        data.extend((0..layout.n_dense).map(|_| rng::normal(s)));
        data.extend(layout.vocab_sizes.iter().map(|&v| s.gen_range(0..v) as f64));
    }
    Tensor::new(&[rows, layout.raw_width()], data).unwrap()
}

fn criterion_2(census: &Experiment) -> Outcome {
    let mut s = rng::stream(2, 2);
    let mut worst = 0.0f64;
    let mut pools = 0;
    let mut counts_equal = true;
    let mut check = |pool: &ModelPool, layout: &InputLayout, mode: TailMode| {
        let set = deconstruct_pool(pool, &find_common_layers(pool).unwrap(), mode).unwrap();
        let probe = random_probe(&mut s, layout, 64);
        for (m, c) in pool.models.iter().zip(&set.models) {
            worst = worst.max(verify_roundtrip(m, &c.components, &probe).unwrap());
        }
        let n = set.models[0].components.len();
        counts_equal &= set.models.iter().all(|m| m.components.len() == n);
        pools += 1;
    };
    check(&census.pool, &census.data.layout, TailMode::Strict);
    let archs: [&[usize]; 4] = [&[8, 8], &[8, 16, 8], &[8, 4, 8, 8], &[8, 12]];
    for seed in 0..20u64 {
        let layout = InputLayout::dense(5);
        let mut alloc = ParamAlloc::new(seed);
        let models = (0..4)
            .map(|k| {
                let id = format!("m{k}");
                TrainedModel::mlp(
                    &id,
                    &format!("t{}", k % 2),
                    &layout,
                    archs[(k + seed as usize) % 4],
                    None,
                    &mut alloc,
                )
                .unwrap()
            })
            .collect();
        check(&ModelPool::new(models).unwrap(), &layout, TailMode::Adapter);
    }
    outcome(
        worst < 1e-9 && counts_equal,
        format!("{pools} pools, max |diff| {worst:.2e}, equal component counts: {counts_equal}"),
    )
}

fn pairwise_auc(scores: &[f64], labels: &[f64]) -> f64 {
    let (mut num, mut pos, mut neg) = (0.0, 0usize, 0usize);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1.0 {
            neg += 1;
            continue;
        }
        pos += 1;
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] == 0.0 {
                num += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / (pos as f64 * neg as f64)
}

fn criterion_3() -> Outcome {
    let mut s = rng::stream(3, 3);
    let mut mismatches = 0;
    let mut done = 0;
    while done < 1000 {
        let n = s.gen_range(2..=500usize);
        // Coarse scores on some instances so that ties are common.
        let levels = if done % 2 == 0 { 7.0 } else { 1e6 };
        let scores: Vec<f64> = (0..n).map(|_| (s.gen::<f64>() * levels).floor() / levels).collect();
        let labels: Vec<f64> = (0..n).map(|_| f64::from(u8::from(s.gen_bool(0.3)))).collect();
        if !labels.contains(&1.0) || !labels.contains(&0.0) {
            continue;
        }
        mismatches += usize::from(auc(&scores, &labels).unwrap().to_bits() != pairwise_auc(&scores, &labels).to_bits());
        done += 1;
    }
    outcome(
        mismatches == 0,
        format!("{done} instances, {mismatches} differ from the pairwise count"),
    )
}

fn criterion_4(cfg: &RunConfig, census: &Experiment) -> Outcome {
    let mut model = build_emm(&census.set, &emm_config(cfg, Variant::Full).unwrap()).unwrap();
    let before = model.component_bytes();
    let train = cfg.fusion.train.to_train_config(7);
    train_emm(&mut model, &census.data, &train).unwrap();
    let after = model.component_bytes();
    let fusion_moved = model
        .fusion_params()
        .iter()
        .any(|p| p.value.data().iter().any(|v| *v != 0.0));
    outcome(
        before == after && !before.is_empty() && fusion_moved,
        format!("{} component bytes, unchanged: {}", before.len(), before == after),
    )
}

fn criterion_5() -> Outcome {
    let mut s = rng::stream(5, 5);
    let mut failures = Vec::new();
    let rows = 64;
    for tasks in 2..=4usize {
        let dim = 6;
        let mut alloc = ParamAlloc::new(tasks as u64);
        for t in 0..tasks {
            let mut gate = TaskGate::new(&mut alloc, t, dim, tasks + 1);
            let mut fusion = FusionGate::new(&mut alloc, t, dim, tasks);
            let mut head = MtmHead::new(&mut alloc, t, dim);
            jitter(&mut gate.dense, &mut s, 1.0);
            jitter(&mut fusion.dense, &mut s, 1.0);
            jitter(&mut head.q, &mut s, 0.5);
            jitter(&mut head.k, &mut s, 0.5);
            jitter(&mut head.v, &mut s, 0.5);
            let mut g = Graph::new();
            let x = g.constant(random_tensor(&mut s, rows, dim, 2.0));
            for w in [gate.weights(&mut g, x).unwrap(), fusion.weights(&mut g, x).unwrap()] {
                let w = g.value(w).clone();
                for r in 0..rows {
                    let sum: f64 = (0..w.cols()).map(|c| w.get(r, c)).sum();
                    if (sum - 1.0).abs() > 1e-9 {
                        failures.push(format!("T={tasks} task {t}: softmax row sums to {sum}"));
                    }
                }
            }
            let p = g.constant(random_tensor(&mut s, rows, dim, 1.0));
            for mode in [ScoreMode::SelfScore, ScoreMode::Cross] {
                let z = head.merge(&mut g, p, p, mode).unwrap();
                let v = head.value(&mut g, p).unwrap();
                if g.value(z)
                    .data()
                    .iter()
                    .zip(g.value(v).data())
                    .any(|(a, b)| a.to_bits() != b.to_bits())
                {
                    failures.push(format!("T={tasks} task {t}: merge(p, p) != V(p) ({})", mode.name()));
                }
            }
            // Integer logits give frequent ties.
            let logits = Tensor::new(
                &[rows, tasks],
                (0..rows * tasks)
                    .map(|i| {
                        if i % 3 == 0 {
                            s.gen_range(0..3) as f64
                        } else {
                            rng::normal(&mut s)
                        }
                    })
                    .collect(),
            )
            .unwrap();
            let picked = select_partner(&logits, t).unwrap();
            for shift in [-7.5, 1e-3, 42.0] {
                let shifted = Tensor::new(&[rows, tasks], logits.data().iter().map(|v| v + shift).collect()).unwrap();
                let again = select_partner(&shifted, t).unwrap();
                if picked.iter().zip(&again).any(|(a, b)| a.0 != b.0) {
                    failures.push(format!("T={tasks} task {t}: partner changes under shift {shift}"));
                }
            }
            for (r, &(y, _)) in picked.iter().enumerate() {
                let best = (0..tasks)
                    .filter(|&c| c != t)
                    .fold(None::<usize>, |b, c| match b {
                        Some(b) if logits.get(r, b) >= logits.get(r, c) => Some(b),
                        _ => Some(c),
                    })
                    .unwrap();
                if y == t || y != best {
                    failures.push(format!("T={tasks} task {t} row {r}: partner {y}, expected {best}"));
                }
            }
        }
    }
    let detail = if failures.is_empty() {
        "T = 2, 3, 4, every task: softmax sums, merge(p, p) = V(p), partner rules".to_string()
    } else {
        failures[..failures.len().min(3)].join("; ")
    };
    outcome(failures.is_empty(), detail)
}

fn gains(ex: &Experiment) -> Vec<(String, f64, f64)> {
    ex.runs[0]
        .report
        .tasks
        .iter()
        .map(|t| (t.name.clone(), t.auc, t.reference_auc.unwrap()))
        .collect()
}

fn criterion_6(runs: &[Experiment]) -> Outcome {
    let mut within = true;
    let mut marital_up = 0;
    let mut income_up = 0;
    let mut cells = Vec::new();
    for ex in runs {
        for (task, auc, reference) in gains(ex) {
            within &= auc >= reference - 0.01;
            let gain = auc - reference;
            match task.as_str() {
                "marital" => marital_up += usize::from(gain > 0.0),
                _ => income_up += usize::from(gain > 0.0),
            }
            cells.push(format!("{task} {gain:+.5}"));
        }
    }
    outcome(
        within && marital_up >= 2,
        format!(
            "within 0.01 of the single-task mean: {within}; marital gain > 0 on {marital_up}/3 seeds, income on {income_up}/3 [{}]",
            cells.join(", ")
        ),
    )
}

fn criterion_7(runs: &[Experiment]) -> Outcome {
    let mut wins = 0;
    let mut cells = Vec::new();
    for ex in runs {
        let mean = |v: Variant| {
            ex.runs
                .iter()
                .find(|r| r.report.variant == v.name())
                .unwrap()
                .report
                .mean_auc()
        };
        let full = mean(Variant::Full);
        let others = [Variant::Baseline, Variant::BaselineMtm, Variant::BaselinePretrained];
        wins += usize::from(others.iter().all(|&v| full >= mean(v)));
        cells.push(
            Variant::ALL
                .iter()
                .map(|&v| format!("{} {:.4}", v.name(), mean(v)))
                .collect::<Vec<_>>()
                .join(" "),
        );
    }
    outcome(
        wins >= 2,
        format!("full is best on {wins}/3 seeds [{}]", cells.join(" | ")),
    )
}

fn criterion_8() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for t in 1..=4usize {
        let mut cfg = RunConfig::synthetic(t, 0.8);
        cfg.seed = 8;
        match run_experiment(&cfg) {
            Ok(ex) => {
                let r = &ex.runs[0].report;
                let valid = r.tasks.len() == t
                    && r.tasks
                        .iter()
                        .all(|x| (0.0..=1.0).contains(&x.auc) && x.gain.is_some_and(f64::is_finite));
                let model = &ex.runs[0].model;
                let moe_only = t > 1
                    || model
                        .levels
                        .iter()
                        .all(|l| l.fusion_gates.is_empty() && l.heads.is_empty());
                ok &= valid && moe_only;
                notes.push(format!("T={t} mean auc {:.4}", r.mean_auc()));
            }
            Err(e) => {
                ok = false;
                notes.push(format!("T={t} failed: {e}"));
            }
        }
    }
    outcome(ok, notes.join(", "))
}

fn criterion_9(first: &[Experiment], second: &[Experiment]) -> Outcome {
    let same = first.iter().zip(second).all(|(a, b)| {
        a.runs[0].report == b.runs[0].report
            && a.runs[0].report.table() == b.runs[0].report.table()
            && a.members
                .iter()
                .zip(&b.members)
                .all(|(x, y)| x.test_auc.to_bits() == y.test_auc.to_bits())
    });
    outcome(
        same,
        format!("{} seeds repeated, reports identical: {same}", first.len()),
    )
}

fn census_runs() -> (RunConfig, Vec<Experiment>) {
    let runs = (1..=3)
        .map(|seed| {
            let mut cfg = RunConfig::census();
            cfg.seed = seed;
            run_experiment(&cfg).unwrap()
        })
        .collect();
    (RunConfig::census(), runs)
}

fn synthetic_runs() -> Vec<Experiment> {
    (1..=3)
        .map(|seed| {
            let mut cfg = RunConfig::synthetic(2, 0.8);
            cfg.seed = seed;
            cfg.ablate = "all".into();
            run_experiment(&cfg).unwrap()
        })
        .collect()
}

fn report(n: usize, limit: Duration, elapsed: Duration, o: &Outcome) -> bool {
    let in_time = elapsed <= limit;
    let pass = o.pass && in_time;
    println!(
        "criterion {n}: {} ({:.1}s of {}s) {}",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs(),
        o.detail
    );
    pass
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed())
}

fn main() {
    let min = |m: u64| Duration::from_secs(60 * m);
    let mut results = Vec::new();

    let (o, t) = timed(criterion_1);
    results.push((1, report(1, min(2), t, &o)));

    let ((cfg, census), t6) = timed(census_runs);

    let (o, t) = timed(|| criterion_2(&census[0]));
    results.push((2, report(2, Duration::from_secs(30), t, &o)));
    let (o, t) = timed(criterion_3);
    results.push((3, report(3, min(1), t, &o)));
    let (o, t) = timed(|| criterion_4(&cfg, &census[0]));
    results.push((4, report(4, min(20), t, &o)));
    let (o, t) = timed(criterion_5);
    results.push((5, report(5, min(1), t, &o)));
    let o = criterion_6(&census);
    results.push((6, report(6, min(20), t6, &o)));
    let (synthetic, t7) = timed(synthetic_runs);
    let o = criterion_7(&synthetic);
    results.push((7, report(7, min(30), t7, &o)));
    let (o, t) = timed(criterion_8);
    results.push((8, report(8, min(20), t, &o)));
    let (again, t9) = timed(|| census_runs().1);
    let o = criterion_9(&census, &again);
    results.push((9, report(9, min(20), t9, &o)));

    let failing: Vec<usize> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    println!(
        "acceptance: {} of {} criteria pass{}",
        results.len() - failing.len(),
        results.len(),
        if failing.is_empty() {
            String::new()
        } else {
            format!(" (failing: {failing:?})")
        }
    );
    let experimental = [6, 7];
    if failing.iter().any(|n| !experimental.contains(n)) {
        std::process::exit(1);
    }
}
