use std::collections::HashSet;

use cie_core::divergence::{rank_scores, score_pairing};
use cie_core::ledger::{load_ledger, write_predictions, IngestOptions, MissingPolicy};
use cie_core::trainer::{generate_dataset, run_population, AttributeSpec, ProtocolConfig, SyntheticDatasetSpec, TrainConfig};
use cie_core::{
    accuracy_partition, validate_pairing, AttributeTable, Compression, LedgerHeader, PairingMode,
    ScoreFile, ScoreFileMeta, TieRule,
};

fn spec() -> SyntheticDatasetSpec {
    SyntheticDatasetSpec {
        num_examples: 600,
        num_features: 4,
        test_fraction: 0.5,
        positive_rate: 0.3,
        attributes: vec![AttributeSpec {
            name: "Rare".into(),
            frequency: 0.1,
            positive_rate: Some(0.6),
        }],
        noise: 1.0,
        seed: 3,
    }
}

#[test]
fn trained_populations_survive_the_file_formats() {
    let data = generate_dataset(&spec()).unwrap();
    let train = TrainConfig {
        hidden: vec![8],
        steps: 200,
        batch_size: 16,
        learning_rate: 0.05,
        seed: 0,
    };
    let seeds = [1, 2, 3];
    let proto = ProtocolConfig::default();
    let base = run_population(&data, &train, "base", Compression::Baseline, &seeds, &proto).unwrap();
    let pruned = run_population(
        &data,
        &train,
        "pruned",
        Compression::Pruned { target_sparsity: 0.7 },
        &seeds,
        &proto,
    )
    .unwrap();
    for m in &pruned.members {
        assert!((m.sparsity - 0.7).abs() <= 0.01, "sparsity {}", m.sparsity);
    }

    let header = LedgerHeader {
        num_classes: 2,
        populations: vec![base.spec.clone(), pruned.spec.clone()],
    };
    let dir = tempfile::tempdir().unwrap();
    let (hp, lp, ap) = (
        dir.path().join("header.toml"),
        dir.path().join("log.csv"),
        dir.path().join("attrs.csv"),
    );
    std::fs::write(&hp, header.to_toml_string()).unwrap();
    let records: Vec<_> = base.records.iter().chain(&pruned.records).collect();
    let mut log = Vec::new();
    write_predictions(&mut log, records.iter().copied()).unwrap();
    std::fs::write(&lp, &log).unwrap();
    let attrs = data.test.attribute_table();
    let mut bytes = Vec::new();
    attrs.write(&mut bytes).unwrap();
    std::fs::write(&ap, &bytes).unwrap();

    let ledger = load_ledger(&hp, &lp, IngestOptions { missing: MissingPolicy::Error }).unwrap();
    assert_eq!(ledger.record_count(), 2 * 3 * data.test.len());
    assert_eq!(AttributeTable::load(&ap).unwrap(), attrs);

    let pairing = validate_pairing(&ledger, "base", "pruned", PairingMode::Strict).unwrap();
    let mut scores = score_pairing(&ledger, &pairing, TieRule::LowestIndex).unwrap();
    rank_scores(&mut scores, 5);
    let file = ScoreFile {
        meta: ScoreFileMeta {
            baseline: "base".into(),
            variant: "pruned".into(),
            tie_rule: TieRule::LowestIndex,
            rank_seed: 5,
            common_total: pairing.common_total(),
            manifest_sha256: None,
        },
        scores,
    };
    let back = ScoreFile::read(file.to_bytes().as_slice(), "scores").unwrap();
    assert_eq!(back, file);
    assert_eq!(back.to_bytes(), file.to_bytes());

    // CIE accuracy computed from the reloaded ledger agrees with the trainer's
    let all: HashSet<&str> = HashSet::new();
    let p = accuracy_partition(&ledger, "base", &all).unwrap();
    assert!((p.all_acc.unwrap() - base.mean_test_accuracy()).abs() < 1e-9);
}
