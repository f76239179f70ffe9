use emm_core::data::{make_synthetic, Split, SyntheticConfig, TaskDataset};
use emm_core::deconstruct::{deconstruct_pool, find_common_layers, verify_roundtrip, TailMode};
use emm_core::emm::{build_emm, train_emm, EmmConfig, Variant};
use emm_core::graph::sigmoid;
use emm_core::model::{forward_layers, train_single, ModelPool};
use emm_core::train::{evaluate, TrainConfig};
use emm_core::Graph;

fn quick(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 64,
        lr: 1e-2,
        ..TrainConfig::census(seed)
    }
}

fn train_pool(data: &TaskDataset, archs: &[&[usize]], seed: u64) -> ModelPool {
    let mut models = Vec::new();
    for task in &data.tasks {
        for (a, hidden) in archs.iter().enumerate() {
            let id = format!("{task}-tm{}", a + 1);
            let (m, _) = train_single(&id, task, hidden, data, &quick(seed + a as u64, 4), None).unwrap();
            models.push(m);
        }
    }
    ModelPool::with_tasks(data.tasks.clone(), models).unwrap()
}

fn synthetic(tasks: usize, seed: u64) -> TaskDataset {
    make_synthetic(&SyntheticConfig::new(1500, tasks, 0.8, seed)).unwrap()
}

#[test]
fn pool_roundtrips_through_components() {
    let data = synthetic(2, 1);
    let pool = train_pool(&data, &[&[8, 8], &[8, 16, 8]], 1);
    let common = find_common_layers(&pool).unwrap();
    let set = deconstruct_pool(&pool, &common, TailMode::Strict).unwrap();
    assert_eq!(set.level_count(), 3);
    assert_eq!(set.component_count(), 12);
    let probe = data.batch(&(0..64).collect::<Vec<_>>()).features;
    for (m, comps) in pool.models.iter().zip(&set.models) {
        assert!(verify_roundtrip(m, &comps.components, &probe).unwrap() < 1e-9);
    }
}

#[test]
fn single_expert_without_merge_composes_by_hand() {
    let data = synthetic(2, 2);
    let pool = train_pool(&data, &[&[6, 6]], 2);
    let common = find_common_layers(&pool).unwrap();
    let set = deconstruct_pool(&pool, &common, TailMode::Strict).unwrap();
    let emm = build_emm(&set, &EmmConfig::variant(5, Variant::BaselinePretrained)).unwrap();
    let x = data.batch(&(0..32).collect::<Vec<_>>()).features;
    let got = emm.predict(&x).unwrap();
    for (t, m) in pool.models.iter().enumerate() {
        let mut g = Graph::inference();
        let xv = g.constant(x.clone());
        let end = set.models[t].components.last().unwrap().range.end;
        let h = forward_layers(&m.layers[..end], &mut g, xv).unwrap();
        let logit = emm.towers[t].forward(&mut g, h).unwrap();
        let expect: Vec<f64> = g.value(logit).data().iter().map(|&v| sigmoid(v)).collect();
        assert_eq!(got[t], expect);
    }
}

#[test]
fn disabling_merge_equals_fusion_only_levels() {
    let data = synthetic(3, 3);
    let pool = train_pool(&data, &[&[6, 6], &[6, 10, 6]], 3);
    let common = find_common_layers(&pool).unwrap();
    let set = deconstruct_pool(&pool, &common, TailMode::Strict).unwrap();
    let mut emm = build_emm(&set, &EmmConfig::new(7)).unwrap();
    for l in &mut emm.levels {
        l.use_mtm = false;
    }
    let x = data.batch(&(0..16).collect::<Vec<_>>()).features;
    let got = emm.predict(&x).unwrap();
    let mut g = Graph::inference();
    let xv = g.constant(x);
    let mut z = vec![xv; 3];
    for l in &emm.levels {
        z = l.fused(&mut g, &z).unwrap();
    }
    for (t, tower) in emm.towers.iter().enumerate() {
        let logit = tower.forward(&mut g, z[t]).unwrap();
        let expect: Vec<f64> = g.value(logit).data().iter().map(|&v| sigmoid(v)).collect();
        assert_eq!(got[t], expect);
    }
}

#[test]
fn train_loss_falls_over_first_epochs() {
    for seed in 0..3 {
        let data = synthetic(2, 10 + seed);
        let pool = train_pool(&data, &[&[8, 8], &[8, 16, 8]], seed);
        let common = find_common_layers(&pool).unwrap();
        let set = deconstruct_pool(&pool, &common, TailMode::Strict).unwrap();
        let mut emm = build_emm(&set, &EmmConfig::new(seed)).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 64,
            ..TrainConfig::census(seed)
        };
        let log = train_emm(&mut emm, &data, &cfg).unwrap();
        let losses: Vec<f64> = log.epochs.iter().map(|e| e.train_loss).collect();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "seed {seed}: {losses:?}");
        for e in &log.epochs {
            let sum: f64 = e.tasks.iter().map(|t| t.train_loss).sum();
            assert!((sum - e.train_loss).abs() < 1e-12);
        }
    }
}

#[test]
fn every_task_count_builds_and_trains() {
    for tasks in 1..=4 {
        let data = synthetic(tasks, 20 + tasks as u64);
        let pool = train_pool(&data, &[&[6, 6], &[6, 10, 6]], 1);
        let common = find_common_layers(&pool).unwrap();
        let set = deconstruct_pool(&pool, &common, TailMode::Strict).unwrap();
        let mut emm = build_emm(&set, &EmmConfig::new(1)).unwrap();
        train_emm(&mut emm, &data, &quick(1, 2)).unwrap();
        let label_index: Vec<usize> = (0..tasks).collect();
        let aucs = evaluate(&emm, &data, Split::Test, &label_index).unwrap();
        assert_eq!(aucs.len(), tasks);
        assert!(aucs.iter().all(|a| (0.0..=1.0).contains(a)));
        assert_eq!(emm.levels[0].merges(), tasks > 1);
    }
}

#[test]
fn input_width_mismatch_is_rejected_by_pool() {
    let a = synthetic(1, 4);
    let b = make_synthetic(&SyntheticConfig {
        dim: 12,
        ..SyntheticConfig::new(200, 1, 0.5, 4)
    })
    .unwrap();
    let (ma, _) = train_single("a", "task1", &[4], &a, &quick(1, 1), None).unwrap();
    let (mb, _) = train_single("b", "task1", &[4], &b, &quick(1, 1), None).unwrap();
    assert!(ModelPool::new(vec![ma, mb]).is_err());
}
