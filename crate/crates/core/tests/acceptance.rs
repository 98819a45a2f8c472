//! Acceptance checks, run in order by a plain `main`. Each prints one
//! `PASS`/`FAIL` line; the process exits nonzero if any failed. Training
//! runs are shared between checks through a cache.

use std::collections::HashMap;
use std::process::ExitCode;
use std::sync::Mutex;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ss4rec::audit::{tiny_audit_batch, tiny_audit_model};
use ss4rec::data::sequence::raw_intervals as raw_intervals_of;
use ss4rec::data::{Batch, Dataset, InteractionLog, SequenceRow, Split, ToyConfig};
use ss4rec::evaluator::{evaluate, evaluate_with, EvalOptions, Metrics};
use ss4rec::kernels::scan::{parallel_scan, sequential_recurrence, ScanElement};
use ss4rec::kernels::zoh::{selective_discretize, zoh_discretize_diagonal};
use ss4rec::trainer::{grad_audit, train, AuditConfig, TrainConfig};
use ss4rec::{Ablation, Mode, Model, ModelConfig};

fn report(n: u32, pass: bool, detail: &str) -> bool {
    println!("{} criterion {n}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

// ---------------------------------------------------------------- 1

fn simpson(f: &dyn Fn(f64) -> Complex64, a: f64, b: f64, tol: f64) -> Complex64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(
        f: &dyn Fn(f64) -> Complex64,
        a: f64,
        b: f64,
        fa: Complex64,
        fm: Complex64,
        fb: Complex64,
        whole: Complex64,
        tol: f64,
        depth: u32,
    ) -> Complex64 {
        let m = 0.5 * (a + b);
        let (flm, frm) = (f(0.5 * (a + m)), f(0.5 * (m + b)));
        let left = (fa + flm * 4.0 + fm) * ((m - a) / 6.0);
        let right = (fm + frm * 4.0 + fb) * ((b - m) / 6.0);
        let delta = left + right - whole;
        if depth == 0 || delta.norm() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    rec(f, a, b, fa, fm, fb, (fa + fm * 4.0 + fb) * ((b - a) / 6.0), tol, 50)
}

fn criterion_1_kernel_oracles() -> bool {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let mut scan_err: f64 = 0.0;
    for _ in 0..1000 {
        let len = rng.random_range(1..=1024);
        let elems: Vec<ScanElement<Complex64>> = (0..len)
            .map(|_| {
                let a = Complex64::from_polar(rng.random_range(0.0..1.0), rng.random_range(-3.2..3.2));
                let b = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                ScanElement::new(a, b)
            })
            .collect();
        let h0 = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let want = sequential_recurrence(&elems, h0);
        let got = parallel_scan(&elems, h0);
        let scale = want.iter().map(|v| v.norm()).fold(f64::MIN_POSITIVE, f64::max);
        let diff = want.iter().zip(&got).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        scan_err = scan_err.max(diff / scale);
    }

    let mut zoh_err: f64 = 0.0;
    let mut exact = true;
    for _ in 0..1000 {
        let lambda = Complex64::new(-rng.random_range(1e-3..5.0), rng.random_range(-20.0..20.0));
        let delta = rng.random_range(1e-6..5.0);
        let b = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let (_, b_bar) = zoh_discretize_diagonal(lambda, b, delta).unwrap();
        let want = simpson(&|t| (lambda * t).exp(), 0.0, delta, 1e-14) * b;
        zoh_err = zoh_err.max((b_bar - want).norm() / want.norm());

        let (sa, sb) = selective_discretize(lambda.re, b.re, delta).unwrap();
        let (da, db) = zoh_discretize_diagonal(Complex64::new(lambda.re, 0.0), Complex64::new(b.re, 0.0), delta).unwrap();
        exact &= sa == da.re && sb == db.re && da.im == 0.0 && db.im == 0.0;
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        scan_err <= 1e-10 && zoh_err <= 1e-8 && exact && secs < 60.0,
        &format!(
            "scan rel err {scan_err:.2e} (<= 1e-10), zoh rel err {zoh_err:.2e} (<= 1e-8), \
             selective==diagonal {exact}, {secs:.1}s (< 60s)"
        ),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2_gradient_audit() -> bool {
    let start = Instant::now();
    let mut model = tiny_audit_model(2).unwrap();
    model.params.embedding.iter_mut().for_each(|v| *v *= 25.0);
    let batch = tiny_audit_batch(2).unwrap();
    assert_eq!((batch.rows, batch.len, model.dim(), model.config.state_dim), (2, 4, 8, 4));
    let r = grad_audit(&model, &batch, &AuditConfig::default()).unwrap();
    let worst = r.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    let coords: usize = r.tensors.iter().map(|t| t.coords_checked).sum();
    report(
        2,
        r.passed() && r.tolerance == 1e-4,
        &format!(
            "{} tensors, {coords} coordinates, worst rel err {worst:.2e} (<= 1e-4, h=1e-5), {:.1}s",
            r.tensors.len(),
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 3

const ABLATIONS: [Ablation; 4] = [Ablation::Full, Ablation::IgnoreTime, Ablation::S5Only, Ablation::S6Only];

fn random_model(rng: &mut ChaCha8Rng, ablation: Ablation, n_items: usize) -> Model {
    let cfg = ModelConfig {
        n_items,
        embed_dim: 2 * rng.random_range(2..6),
        state_dim: 2 * rng.random_range(1..4),
        n_blocks: rng.random_range(1..=2),
        max_len: 12,
        dropout: 0.0,
        ablation,
        ..ModelConfig::default()
    };
    let mut m = Model::new(cfg, rng.random()).unwrap();
    m.params.embedding.iter_mut().for_each(|v| *v *= 25.0);
    for b in &mut m.params.blocks {
        if let Some(t) = &mut b.time {
            for v in t.log_s.iter_mut() {
                *v = rng.random_range(-2.0..0.5);
            }
        }
    }
    m
}

fn random_history(rng: &mut ChaCha8Rng, n_items: usize, len: usize) -> (Vec<u32>, Vec<u64>) {
    let items = (0..len).map(|_| rng.random_range(1..=n_items as u32)).collect();
    let mut t = rng.random_range(0..1000u64);
    let times = (0..len)
        .map(|_| {
            t += rng.random_range(0..50);
            t
        })
        .collect();
    (items, times)
}

fn row(items: &[u32], intervals: &[f64]) -> SequenceRow {
    SequenceRow::query(items.to_vec(), intervals.to_vec(), 1)
}

fn rel_max(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = a.iter().chain(b).map(|v| v.abs()).fold(f64::MIN_POSITIVE, f64::max);
    num / den
}

fn criterion_3_structural_invariants() -> bool {
    const CONFIGS: usize = 100;
    let n_items = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let mut causal = 0;
    for i in 0..CONFIGS {
        let m = random_model(&mut rng, ABLATIONS[i % 4], n_items);
        let len = rng.random_range(2..=12);
        let cut = rng.random_range(0..len - 1);
        let (items, times) = random_history(&mut rng, n_items, len);
        let mut intervals: Vec<f64> = raw_intervals_of(&times).iter().map(|v| v / 10.0).collect();
        let before = m.forward(&Batch::from_rows(&[row(&items, &intervals)], 12).unwrap()).unwrap();
        let mut changed = items.clone();
        for l in cut + 1..len {
            changed[l] = rng.random_range(1..=n_items as u32);
            intervals[l] = rng.random_range(0.0..9.0);
        }
        let after = m.forward(&Batch::from_rows(&[row(&changed, &intervals)], 12).unwrap()).unwrap();
        let upto = (12 - len + cut + 1) * m.dim();
        causal += usize::from(before[..upto] == after[..upto]);
    }

    let mut shift = 0;
    for i in 0..CONFIGS {
        let m = random_model(&mut rng, ABLATIONS[i % 4], n_items);
        let len = rng.random_range(1..=12);
        let (items, times) = random_history(&mut rng, n_items, len + 1);
        let c = rng.random_range(1..1_000_000_000u64);
        let shifted: Vec<u64> = times.iter().map(|t| t + c).collect();
        // the last timestamp plays the query time
        let logits = |ts: &[u64]| {
            let iv: Vec<f64> = raw_intervals_of(ts)[..len].iter().map(|v| v / 10.0).collect();
            m.score(&m.represent(&items[..len], &iv).unwrap())
        };
        shift += usize::from(logits(&times) == logits(&shifted));
    }

    let mut product = 0;
    let mut worst_product: f64 = 0.0;
    for i in 0..CONFIGS {
        let ablation = [Ablation::Full, Ablation::S5Only][i % 2];
        let m = random_model(&mut rng, ablation, n_items);
        let len = rng.random_range(1..=12);
        let (items, times) = random_history(&mut rng, n_items, len);
        let iv: Vec<f64> = raw_intervals_of(&times).iter().map(|v| v / 10.0).collect();
        let c: f64 = rng.random_range(0.05..20.0);
        let mut scaled = m.clone();
        for b in &mut scaled.params.blocks {
            if let Some(t) = &mut b.time {
                t.log_s.iter_mut().for_each(|v| *v -= c.ln());
            }
        }
        let iv_c: Vec<f64> = iv.iter().map(|v| v * c).collect();
        let a = m.forward(&Batch::from_rows(&[row(&items, &iv)], 12).unwrap()).unwrap();
        let b = scaled.forward(&Batch::from_rows(&[row(&items, &iv_c)], 12).unwrap()).unwrap();
        let e = rel_max(&a, &b);
        worst_product = worst_product.max(e);
        product += usize::from(e <= 1e-10);
    }

    let mut padding = 0;
    for i in 0..CONFIGS {
        let m = random_model(&mut rng, ABLATIONS[i % 4], n_items);
        let len = rng.random_range(1..=8);
        let (items, times) = random_history(&mut rng, n_items, len);
        let iv: Vec<f64> = raw_intervals_of(&times).iter().map(|v| v / 10.0).collect();
        let mut rows = vec![row(&items, &iv)];
        let (other, other_t) = random_history(&mut rng, n_items, 12);
        rows.push(row(&other, &raw_intervals_of(&other_t)));
        let tight = m.forward(&Batch::from_rows(&rows[..1], len).unwrap()).unwrap();
        let wide = m.forward(&Batch::from_rows(&rows, 12).unwrap()).unwrap();
        let pad = (12 - len) * m.dim();
        let ok = wide[..pad].iter().all(|v| *v == 0.0) && wide[pad..12 * m.dim()] == tight[..];
        padding += usize::from(ok);
    }

    report(
        3,
        causal == CONFIGS && shift == CONFIGS && product == CONFIGS && padding == CONFIGS,
        &format!(
            "causality {causal}/{CONFIGS} bit-exact, time shift {shift}/{CONFIGS} identical logits, \
             step product {product}/{CONFIGS} (worst {worst_product:.1e} <= 1e-10), padding {padding}/{CONFIGS}"
        ),
    )
}

// ---------------------------------------------------------------- 4-6

const TOY_SEED: u64 = 2024;
const SEEDS: [u64; 3] = [1, 2, 3];

fn toy() -> (ss4rec::data::ToyDataset, InteractionLog, Dataset) {
    let toy = ToyConfig::default().generate(TOY_SEED).unwrap();
    let log = InteractionLog::from_raw(toy.raw_rows());
    let ds = Dataset::from_log(&log, None, 10.0).unwrap();
    (toy, log, ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct RunKey {
    ablation: Ablation,
    blocks: usize,
    drop_tenths: u32,
    seed: u64,
}

static RUNS: Mutex<Option<HashMap<RunKey, Metrics>>> = Mutex::new(None);

/// Test-split metrics of the best-validation model for one training run.
fn run(key: RunKey, ds: &Dataset) -> Metrics {
    if let Some(m) = RUNS.lock().unwrap().get_or_insert_with(HashMap::new).get(&key) {
        return *m;
    }
    let cfg = ModelConfig {
        n_items: ds.n_items,
        embed_dim: 32,
        state_dim: 16,
        n_blocks: key.blocks,
        max_len: 50,
        dropout: 0.1,
        ablation: key.ablation,
        ..ModelConfig::default()
    };
    let tc = TrainConfig {
        learning_rate: 0.005,
        batch_size: 16,
        max_epochs: 40,
        patience: 10,
        seed: key.seed,
        drop_probability: key.drop_tenths as f64 / 10.0,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let out = train(Model::new(cfg, key.seed).unwrap(), ds, &tc, |_| {}).unwrap();
    let m = evaluate(&out.model, ds, Split::Test, EvalOptions::default())
        .unwrap()
        .metrics
        .unwrap();
    println!(
        "  run {:?} blocks={} drop={} seed={}: best epoch {}, test hr@10 {:.4} ndcg@10 {:.4} ({:.0}s)",
        key.ablation,
        key.blocks,
        tc.drop_probability,
        key.seed,
        out.best_epoch,
        m.hr,
        m.ndcg,
        start.elapsed().as_secs_f64()
    );
    RUNS.lock().unwrap().get_or_insert_with(HashMap::new).insert(key, m);
    m
}

fn key(ablation: Ablation, blocks: usize, drop_tenths: u32, seed: u64) -> RunKey {
    RunKey {
        ablation,
        blocks,
        drop_tenths,
        seed,
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn criterion_4_continuous_time_toy() -> bool {
    let (toy, log, ds) = toy();

    // (a) the construction rule, applied at the test query time
    let seqs = ss4rec::data::build_user_sequences(&log.records).unwrap();
    let examples = ds.eval_examples(Split::Test);
    let oracle = evaluate_with(&examples, Split::Test, EvalOptions { k: 1, filter_history: false }, |ex| {
        let user: u32 = log.users.raw(ex.user_id).unwrap().parse().unwrap();
        let t_query = *seqs[&ex.user_id].timestamps.last().unwrap();
        let id = log.items.get(&toy.oracle_item(user, t_query).to_string()).unwrap();
        let mut logits = vec![0.0; ds.n_items];
        logits[id as usize - 1] = 1.0;
        Ok(logits)
    })
    .unwrap();
    let oracle_hr = oracle.hr().unwrap();

    // (b) full vs ignore_time, identical training
    let seed = SEEDS[0];
    let full = run(key(Ablation::Full, 2, 0, seed), &ds);
    let ignore = run(key(Ablation::IgnoreTime, 2, 0, seed), &ds);
    report(
        4,
        oracle_hr == 1.0 && full.hr > ignore.hr && full.ndcg > ignore.ndcg,
        &format!(
            "oracle HR@1 {oracle_hr:.3} (== 1); full HR@10 {:.4} vs ignore_time {:.4}, \
             NDCG@10 {:.4} vs {:.4} (both strictly higher required)",
            full.hr, ignore.hr, full.ndcg, ignore.ndcg
        ),
    )
}

fn criterion_5_ablation_ordering() -> bool {
    let (_, _, ds) = toy();
    let ndcg = |ab: Ablation, blocks: usize| median(SEEDS.iter().map(|&s| run(key(ab, blocks, 0, s), &ds).ndcg).collect());
    let full = ndcg(Ablation::Full, 2);
    let s6 = ndcg(Ablation::S6Only, 2);
    let s5 = ndcg(Ablation::S5Only, 2);
    let one = ndcg(Ablation::Full, 1);
    report(
        5,
        full >= s6 && s6 >= s5 && full >= one,
        &format!(
            "median NDCG@10 over {} seeds: full {full:.4} >= s6_only {s6:.4} >= s5_only {s5:.4}; \
             2-block {full:.4} >= 1-block {one:.4}",
            SEEDS.len()
        ),
    )
}

fn criterion_6_partial_observation() -> bool {
    let (_, _, ds) = toy();
    let degradation = |ab: Ablation| {
        median(
            SEEDS
                .iter()
                .map(|&s| run(key(ab, 2, 0, s), &ds).ndcg - run(key(ab, 2, 1, s), &ds).ndcg)
                .collect(),
        )
    };
    let full = degradation(Ablation::Full);
    let ignore = degradation(Ablation::IgnoreTime);
    report(
        6,
        full < ignore,
        &format!(
            "median NDCG@10 drop at p=0.1 over {} seeds: full {full:.4} < ignore_time {ignore:.4}",
            SEEDS.len()
        ),
    )
}

// ---------------------------------------------------------------- 7

fn time_fwd_bwd(model: &Model, batch: &Batch) -> f64 {
    let start = Instant::now();
    let (loss, grads) = model.loss_and_grad(batch, Mode::Eval).unwrap();
    let t = start.elapsed().as_secs_f64();
    assert!(loss.is_finite() && !grads.embedding.is_empty());
    t
}

fn criterion_7_linear_scaling() -> bool {
    let model = Model::new(
        ModelConfig {
            n_items: 500,
            max_len: 512,
            dropout: 0.0,
            ..ModelConfig::default()
        },
        7,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let make = |rng: &mut ChaCha8Rng, len: usize| {
        let rows: Vec<SequenceRow> = (0..4)
            .map(|_| {
                let items: Vec<u32> = (0..len).map(|_| rng.random_range(1..=500)).collect();
                let intervals = (0..len).map(|_| rng.random_range(0.0..3.0)).collect();
                let mut targets = items[1..].to_vec();
                targets.push(1);
                SequenceRow {
                    items,
                    intervals,
                    targets,
                }
            })
            .collect();
        Batch::from_rows(&rows, len).unwrap()
    };
    let short = make(&mut rng, 256);
    let long = make(&mut rng, 512);
    time_fwd_bwd(&model, &short);
    time_fwd_bwd(&model, &long);
    let mut ts = Vec::new();
    let mut tl = Vec::new();
    for _ in 0..5 {
        ts.push(time_fwd_bwd(&model, &short));
        tl.push(time_fwd_bwd(&model, &long));
    }
    let (ms, ml) = (median(ts), median(tl));
    let ratio = ml / ms;
    report(
        7,
        ratio < 3.0,
        &format!(
            "median forward+backward L=256 {:.1}ms, L=512 {:.1}ms, ratio {ratio:.2} (< 3)",
            ms * 1e3,
            ml * 1e3
        ),
    )
}

fn main() -> ExitCode {
    let checks: [fn() -> bool; 7] = [
        criterion_1_kernel_oracles,
        criterion_2_gradient_audit,
        criterion_3_structural_invariants,
        criterion_4_continuous_time_toy,
        criterion_5_ablation_ordering,
        criterion_6_partial_observation,
        criterion_7_linear_scaling,
    ];
    let passed = checks.iter().filter(|c| c()).count();
    println!("{passed}/{} criteria passed", checks.len());
    if passed == checks.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
