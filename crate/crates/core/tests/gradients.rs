use ss4rec::data::{Batch, SequenceRow};
use ss4rec::kernels::ScanMode;
use ss4rec::trainer::{grad_audit, AuditConfig};
use ss4rec::{Ablation, Error, Model, ModelConfig};

fn tiny(ablation: Ablation, scan: ScanMode) -> Model {
    let config = ModelConfig {
        n_items: 12,
        embed_dim: 8,
        state_dim: 4,
        n_blocks: 1,
        max_len: 4,
        dropout: 0.0,
        ablation,
        scan,
        ..ModelConfig::default()
    };
    let mut model = Model::new(config, 3).unwrap();
    // move away from the symmetric init so every term is exercised
    for v in model.params.embedding.iter_mut().skip(8) {
        *v *= 25.0;
    }
    model
}

fn tiny_batch() -> Batch {
    let rows = vec![
        SequenceRow {
            items: vec![3, 7, 1, 12],
            intervals: vec![0.4, 1.3, 0.0, 2.5],
            targets: vec![7, 1, 12, 5],
        },
        SequenceRow {
            items: vec![9, 2],
            intervals: vec![0.8, 3.1],
            targets: vec![2, 4],
        },
    ];
    Batch::from_rows(&rows, 4).unwrap()
}

#[test]
fn every_tensor_matches_central_differences() {
    for ablation in [Ablation::Full, Ablation::IgnoreTime, Ablation::S5Only, Ablation::S6Only] {
        for scan in [ScanMode::Sequential, ScanMode::Parallel] {
            let model = tiny(ablation, scan);
            let report = grad_audit(&model, &tiny_batch(), &AuditConfig::default()).unwrap();
            for t in &report.tensors {
                assert!(
                    t.max_rel_error <= 1e-4,
                    "{ablation} {scan:?}: {} rel err {:e}",
                    t.name,
                    t.max_rel_error
                );
            }
        }
    }
}

#[test]
fn negated_gradient_is_caught() {
    let model = tiny(Ablation::Full, ScanMode::Sequential);
    let cfg = AuditConfig {
        corrupt_tensor: Some("blocks.0.time.log_s".into()),
        ..AuditConfig::default()
    };
    let report = grad_audit(&model, &tiny_batch(), &cfg).unwrap();
    assert_eq!(report.failures(), vec!["blocks.0.time.log_s".to_string()]);
    assert!(matches!(report.into_result(), Err(Error::AuditFailure(f)) if f.len() == 1));
}
