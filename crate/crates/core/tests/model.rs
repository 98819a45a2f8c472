use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ss4rec::data::{Batch, Dataset, InteractionLog, SequenceRow, Split, ToyConfig};
use ss4rec::evaluator::{evaluate, EvalOptions};
use ss4rec::kernels::scan::ScanMode;
use ss4rec::model::{load_checkpoint, load_checkpoint_for, save_checkpoint};
use ss4rec::trainer::{train, Adam, TrainConfig};
use ss4rec::{Ablation, Error, Mode, Model, ModelConfig, ParamSet};

fn config(n_items: usize, ablation: Ablation) -> ModelConfig {
    ModelConfig {
        n_items,
        embed_dim: 8,
        state_dim: 4,
        n_blocks: 2,
        max_len: 10,
        dropout: 0.0,
        ablation,
        ..ModelConfig::default()
    }
}

/// Model with embeddings lifted off their small init so outputs are
/// sensitive to every input.
fn lively(n_items: usize, ablation: Ablation, seed: u64) -> Model {
    let mut m = Model::new(config(n_items, ablation), seed).unwrap();
    m.params.embedding.iter_mut().for_each(|v| *v *= 25.0);
    for b in &mut m.params.blocks {
        if let Some(t) = &mut b.time {
            t.log_s.iter_mut().for_each(|v| *v = -0.5);
        }
    }
    m
}

fn random_row(r: &mut ChaCha8Rng, n_items: u32, len: usize) -> SequenceRow {
    let items: Vec<u32> = (0..len).map(|_| r.random_range(1..=n_items)).collect();
    let intervals = (0..len).map(|_| r.random_range(0.0..4.0)).collect();
    let mut targets: Vec<u32> = items[1..].to_vec();
    targets.push(r.random_range(1..=n_items));
    SequenceRow {
        items,
        intervals,
        targets,
    }
}

#[test]
fn embed_gathers_rows_and_rejects_out_of_range() {
    let m = Model::new(config(5, Ablation::Full), 1).unwrap();
    let x = m.embed(&[0, 3]).unwrap();
    assert!(x[..8].iter().all(|v| *v == 0.0));
    assert_eq!(&x[8..], m.item_embedding(3));
    assert!(matches!(m.embed(&[6]), Err(Error::Index { index: 6, .. })));
}

#[test]
fn embed_reflects_parameter_updates() {
    let mut m = Model::new(config(5, Ablation::Full), 1).unwrap();
    m.params.embedding[2 * 8 + 1] = 7.5;
    assert_eq!(m.embed(&[2]).unwrap()[1], 7.5);
}

#[test]
fn score_excludes_padding_and_picks_the_dominant_item() {
    let m = Model::new(config(9, Ablation::Full), 2).unwrap();
    let o: Vec<f64> = m.item_embedding(4).iter().map(|v| v * 1e3).collect();
    let logits = m.score(&o);
    assert_eq!(logits.len(), 9);
    let best = logits
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    assert_eq!(best + 1, 4);
}

#[test]
fn score_ignores_directions_orthogonal_to_every_embedding() {
    let mut m = Model::new(config(3, Ablation::Full), 3).unwrap();
    // confine all embeddings to the first four coordinates
    for row in m.params.embedding.chunks_exact_mut(8) {
        row[4..].fill(0.0);
    }
    let o: Vec<f64> = (0..8).map(|i| i as f64 * 0.3 - 1.0).collect();
    let mut shifted = o.clone();
    shifted[5] += 4.0;
    shifted[7] -= 2.0;
    assert_eq!(m.score(&o), m.score(&shifted));
}

#[test]
fn untrained_loss_is_near_log_vocabulary() {
    let n = 200;
    let m = Model::new(config(n, Ablation::Full), 4).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let rows: Vec<SequenceRow> = (0..8).map(|_| random_row(&mut r, n as u32, 10)).collect();
    let loss = m.loss(&Batch::from_rows(&rows, 10).unwrap()).unwrap();
    assert!((loss - (n as f64).ln()).abs() < 0.05, "loss {loss}");
}

#[test]
fn a_batch_without_targets_is_an_error() {
    let m = Model::new(config(5, Ablation::Full), 5).unwrap();
    let row = SequenceRow {
        items: vec![1, 2],
        intervals: vec![1.0, 1.0],
        targets: vec![0, 0],
    };
    let batch = Batch::from_rows(&[row], 4).unwrap();
    assert!(matches!(m.loss(&batch), Err(Error::NoTargets)));
}

#[test]
fn ignore_time_equals_full_on_unit_intervals() {
    let mut r = ChaCha8Rng::seed_from_u64(6);
    let mut rows: Vec<SequenceRow> = (0..3).map(|i| random_row(&mut r, 20, 4 + i)).collect();
    let full = Model::new(config(20, Ablation::Full), 6).unwrap();
    let ignore = Model::new(config(20, Ablation::IgnoreTime), 6).unwrap();
    assert_eq!(full.params, ignore.params);
    let noisy = ignore.forward(&Batch::from_rows(&rows, 8).unwrap()).unwrap();
    for row in &mut rows {
        row.intervals.iter_mut().for_each(|v| *v = 1.0);
    }
    let batch = Batch::from_rows(&rows, 8).unwrap();
    let a = full.forward(&batch).unwrap();
    let b = ignore.forward(&batch).unwrap();
    assert_eq!(a, b);
    // and ignore_time never looked at the original intervals
    assert_eq!(noisy, b);
}

#[test]
fn ablations_prune_layers() {
    let s5 = Model::new(config(4, Ablation::S5Only), 0).unwrap();
    let s6 = Model::new(config(4, Ablation::S6Only), 0).unwrap();
    for b in &s5.params.blocks {
        assert!(b.time.is_some() && b.selective.is_none());
    }
    for b in &s6.params.blocks {
        assert!(b.time.is_none() && b.selective.is_some());
    }
    let names: Vec<String> = s6.params.named_tensors().into_iter().map(|(n, _)| n).collect();
    assert!(names.iter().all(|n| !n.contains(".time.")));
}

#[test]
fn output_shape_at_three_blocks() {
    let cfg = ModelConfig {
        n_items: 30,
        n_blocks: 3,
        max_len: 200,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let m = Model::new(cfg, 7).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let rows: Vec<SequenceRow> = vec![random_row(&mut r, 30, 200), random_row(&mut r, 30, 37)];
    let out = m.forward(&Batch::from_rows(&rows, 200).unwrap()).unwrap();
    assert_eq!(out.len(), 2 * 200 * 64);
}

#[test]
fn training_mode_dropout_is_seeded() {
    let mut cfg = config(10, Ablation::Full);
    cfg.dropout = 0.3;
    let m = Model::new(cfg, 8).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(8);
    let batch = Batch::from_rows(&[random_row(&mut r, 10, 6)], 6).unwrap();
    let (a, _) = m.loss_and_grad(&batch, Mode::Train { seed: 1 }).unwrap();
    let (b, _) = m.loss_and_grad(&batch, Mode::Train { seed: 1 }).unwrap();
    let (c, _) = m.loss_and_grad(&batch, Mode::Train { seed: 2 }).unwrap();
    let (e1, _) = m.loss_and_grad(&batch, Mode::Eval).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(e1, m.loss(&batch).unwrap());
}

#[test]
fn single_batch_overfits() {
    let mut m = Model::new(
        ModelConfig {
            embed_dim: 16,
            state_dim: 8,
            ..config(30, Ablation::Full)
        },
        9,
    )
    .unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let rows: Vec<SequenceRow> = (0..2).map(|_| random_row(&mut r, 30, 6)).collect();
    let batch = Batch::from_rows(&rows, 6).unwrap();
    let mut adam = Adam::new(0.02, m.params.n_scalars());
    let mut loss = f64::INFINITY;
    for _ in 0..200 {
        let (l, g) = m.loss_and_grad(&batch, Mode::Eval).unwrap();
        loss = l;
        adam.step(&mut m.params, &g);
        m.params.embedding[..16].fill(0.0);
    }
    assert!(loss < 0.1, "loss after 200 steps: {loss}");
}

fn toy_dataset(seed: u64) -> Dataset {
    let toy = ToyConfig {
        n_users: 20,
        n_items: 15,
        seq_len: 12,
        t_max: 500,
    }
    .generate(seed)
    .unwrap();
    Dataset::from_log(&InteractionLog::from_raw(toy.raw_rows()), None, 10.0).unwrap()
}

fn quick_train(ds: &Dataset, seed: u64) -> ss4rec::trainer::TrainOutcome {
    let model = Model::new(
        ModelConfig {
            dropout: 0.1,
            ..config(ds.n_items, Ablation::Full)
        },
        seed,
    )
    .unwrap();
    let cfg = TrainConfig {
        batch_size: 8,
        max_epochs: 3,
        learning_rate: 0.01,
        seed,
        ..TrainConfig::default()
    };
    train(model, ds, &cfg, |_| {}).unwrap()
}

#[test]
fn padding_row_stays_zero_and_training_is_deterministic() {
    let ds = toy_dataset(10);
    let a = quick_train(&ds, 10);
    let b = quick_train(&ds, 10);
    assert!(a.model.item_embedding(0).iter().all(|v| *v == 0.0));
    assert_eq!(a.history, b.history);
    assert_eq!(a.model.params, b.model.params);
    assert_eq!(a.best().valid, a.history[a.best_epoch - 1].valid);
}

#[test]
fn evaluation_leaves_parameters_untouched() {
    let ds = toy_dataset(11);
    let m = lively(ds.n_items, Ablation::Full, 11);
    let before = m.params.clone();
    let first = evaluate(&m, &ds, Split::Test, EvalOptions::default()).unwrap();
    let second = evaluate(&m, &ds, Split::Test, EvalOptions::default()).unwrap();
    assert_eq!(m.params, before);
    assert_eq!(first, second);
}

#[test]
fn global_time_shift_leaves_logits_identical() {
    let toy = ToyConfig {
        n_users: 10,
        n_items: 12,
        seq_len: 8,
        t_max: 300,
    }
    .generate(12)
    .unwrap();
    let plain = Dataset::from_log(&InteractionLog::from_raw(toy.raw_rows()), None, 10.0).unwrap();
    let shifted = Dataset::from_log(
        &InteractionLog::from_raw(toy.raw_rows().map(|(u, i, t)| (u, i, t + 1_000_003))),
        None,
        10.0,
    )
    .unwrap();
    let m = lively(plain.n_items, Ablation::Full, 12);
    for split in [Split::Valid, Split::Test] {
        for (a, b) in plain.eval_examples(split).iter().zip(shifted.eval_examples(split).iter()) {
            let la = m.score(&m.represent(&a.items, &a.intervals).unwrap());
            let lb = m.score(&m.represent(&b.items, &b.intervals).unwrap());
            assert_eq!(la, lb);
        }
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/model.ckpt");
    for ablation in [Ablation::Full, Ablation::S5Only, Ablation::S6Only, Ablation::IgnoreTime] {
        let m = lively(7, ablation, 13);
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(back.params, m.params);
        let mut r = ChaCha8Rng::seed_from_u64(13);
        let batch = Batch::from_rows(&[random_row(&mut r, 7, 5)], 5).unwrap();
        assert_eq!(back.forward(&batch).unwrap(), m.forward(&batch).unwrap());
    }
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let m = lively(7, Ablation::Full, 14);
    save_checkpoint(&m, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::CorruptCheckpoint(_))));

    let mut flipped = bytes.clone();
    flipped[bytes.len() / 2] ^= 0x40;
    std::fs::write(&path, &flipped).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::CorruptCheckpoint(_))));

    assert!(matches!(
        load_checkpoint(&dir.path().join("missing.ckpt")),
        Err(Error::Io { .. })
    ));
}

#[test]
fn block_count_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("two.ckpt");
    let m = Model::new(config(7, Ablation::Full), 15).unwrap();
    save_checkpoint(&m, &path).unwrap();
    let three = ModelConfig {
        n_blocks: 3,
        ..config(7, Ablation::Full)
    };
    assert!(matches!(load_checkpoint_for(&path, &three), Err(Error::ConfigMismatch(_))));
    let same = ModelConfig {
        scan: ScanMode::Sequential,
        dropout: 0.4,
        ..config(7, Ablation::Full)
    };
    let loaded = load_checkpoint_for(&path, &same).unwrap();
    assert_eq!(loaded.params, m.params);
    assert_eq!(loaded.config.dropout, 0.4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn end_to_end_causality(seed in any::<u64>(), len in 2usize..9, cut in 0usize..8, ab in 0usize..4) {
        let ablation = [Ablation::Full, Ablation::IgnoreTime, Ablation::S5Only, Ablation::S6Only][ab];
        let cut = cut % (len - 1);
        let m = lively(15, ablation, seed);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let row = random_row(&mut r, 15, len);
        let mut changed = row.clone();
        for l in cut + 1..len {
            changed.items[l] = r.random_range(1..=15);
            changed.intervals[l] = r.random_range(0.0..9.0);
        }
        let a = m.forward(&Batch::from_rows(&[row], 10).unwrap()).unwrap();
        let b = m.forward(&Batch::from_rows(&[changed], 10).unwrap()).unwrap();
        let upto = (10 - len + cut + 1) * 8;
        prop_assert_eq!(&a[..upto], &b[..upto]);
    }

    #[test]
    fn padding_is_transparent_end_to_end(seed in any::<u64>(), len in 1usize..9, width in 9usize..14) {
        let m = lively(15, Ablation::Full, seed);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let row = random_row(&mut r, 15, len);
        let tight = m.forward(&Batch::from_rows(&[row.clone()], len).unwrap()).unwrap();
        let wide = m.forward(&Batch::from_rows(&[row], width).unwrap()).unwrap();
        prop_assert!(wide[..(width - len) * 8].iter().all(|v| *v == 0.0));
        prop_assert_eq!(&wide[(width - len) * 8..], &tight[..]);
    }

    #[test]
    fn ignore_time_is_blind_to_interval_permutations(seed in any::<u64>(), len in 2usize..9) {
        let m = lively(15, Ablation::IgnoreTime, seed);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let row = random_row(&mut r, 15, len);
        let mut permuted = row.clone();
        permuted.intervals.reverse();
        permuted.intervals.rotate_left(1);
        let a = m.forward(&Batch::from_rows(&[row], 10).unwrap()).unwrap();
        let b = m.forward(&Batch::from_rows(&[permuted], 10).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }
}
