//! Inputs shared by the benchmarks.

use cie_core::{
    ingest_predictions, Compression, Ledger, LedgerHeader, PopulationSpec, PredictionRecord,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A two-population binary ledger where each variant model flips a baseline
/// vote with probability `flip`.
pub fn synthetic_ledger(examples: usize, models: usize, flip: f64, seed: u64) -> Ledger {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let header = LedgerHeader {
        num_classes: 2,
        populations: vec![
            PopulationSpec {
                id: "base".into(),
                compression: Compression::Baseline,
                model_count: models,
            },
            PopulationSpec {
                id: "var".into(),
                compression: Compression::Pruned { target_sparsity: 0.9 },
                model_count: models,
            },
        ],
    };
    let mut records = Vec::with_capacity(2 * examples * models);
    for e in 0..examples {
        let truth = rng.random_range(0..2u32);
        for m in 0..models {
            let b = if rng.random_bool(0.1) { 1 - truth } else { truth };
            let v = if rng.random_bool(flip) { 1 - b } else { b };
            for (pop, label) in [("base", b), ("var", v)] {
                records.push(PredictionRecord {
                    example_id: format!("ex{e:07}"),
                    population_id: pop.into(),
                    model_id: format!("m{m:02}"),
                    predicted_label: label,
                    true_label: Some(truth),
                });
            }
        }
    }
    ingest_predictions(records, header, Default::default()).expect("synthetic ledger is valid")
}
