//! Populations of independently seeded models under one compression setting.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::SplitDataset;
use super::model::{train_model, Classifier, TrainConfig, TrainedModel};
use super::prune::{PruneSchedule, PruneScope};
use super::quant::{quantize, QuantSpec};
use super::TrainError;
use crate::ledger::{Compression, PopulationSpec, PredictionRecord};

/// Pruning timing and quantization calibration shared by every population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    /// Defaults are proportional to pruning every 500 of 10,000 steps
    /// between steps 1,000 and 9,000.
    pub prune_start_step: Option<usize>,
    pub prune_end_step: Option<usize>,
    pub prune_interval: Option<usize>,
    pub prune_scope: PruneScope,
    pub calibration_set_size: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            prune_start_step: None,
            prune_end_step: None,
            prune_interval: None,
            prune_scope: PruneScope::Global,
            calibration_set_size: 100,
        }
    }
}

impl ProtocolConfig {
    pub fn schedule(&self, target_sparsity: f64, total_steps: usize) -> PruneSchedule {
        let mut s = PruneSchedule::proportional(target_sparsity, total_steps);
        if let Some(v) = self.prune_start_step {
            s.start_step = v;
        }
        if let Some(v) = self.prune_end_step {
            s.end_step = v;
        }
        if let Some(v) = self.prune_interval {
            s.interval = v;
        }
        s.scope = self.prune_scope;
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberSummary {
    pub model_id: String,
    pub seed: u64,
    pub test_accuracy: f64,
    pub sparsity: f64,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PopulationRun {
    pub spec: PopulationSpec,
    pub members: Vec<MemberSummary>,
    /// Test-set predictions, member by member in seed order.
    pub records: Vec<PredictionRecord>,
}

impl PopulationRun {
    pub fn mean_test_accuracy(&self) -> f64 {
        self.members.iter().map(|m| m.test_accuracy).sum::<f64>() / self.members.len() as f64
    }
}

pub fn model_id(seed: u64) -> String {
    format!("seed-{seed}")
}

/// Trains one model per seed (in parallel), returning them in seed order.
pub fn train_members(
    data: &SplitDataset,
    config: &TrainConfig,
    schedule: Option<&PruneSchedule>,
    seeds: &[u64],
    population_id: &str,
) -> Result<Vec<TrainedModel>, TrainError> {
    if seeds.len() < 2 {
        return Err(TrainError::PopulationTooSmall(seeds.len()));
    }
    let results: Vec<_> = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = TrainConfig {
                seed,
                ..config.clone()
            };
            train_model(&data.train, &cfg, schedule, 2).map_err(|e| TrainError::MemberFailed {
                population_id: population_id.to_string(),
                seed,
                source: Box::new(e),
            })
        })
        .collect();
    // first failure in seed order, independent of scheduling
    results.into_iter().collect()
}

/// Builds a population run from trained members, quantizing them first when
/// the compression asks for it.
pub fn population_from_models(
    data: &SplitDataset,
    population_id: &str,
    compression: Compression,
    seeds: &[u64],
    models: &[TrainedModel],
    protocol: &ProtocolConfig,
) -> Result<PopulationRun, TrainError> {
    let mut members = Vec::with_capacity(models.len());
    let mut records = Vec::with_capacity(models.len() * data.test.len());
    for (&seed, trained) in seeds.iter().zip(models) {
        let id = model_id(seed);
        let (preds, flags) = match compression {
            Compression::Quantized { quant } => {
                let spec = QuantSpec {
                    kind: quant,
                    calibration_set_size: protocol.calibration_set_size,
                };
                let calib = data.train.head_features(spec.calibration_set_size);
                let q = quantize(&trained.model, &spec, calib).map_err(|e| {
                    TrainError::MemberFailed {
                        population_id: population_id.to_string(),
                        seed,
                        source: Box::new(e),
                    }
                })?;
                (q.predict_all(&data.test), q.flags.clone())
            }
            _ => (trained.model.predict_all(&data.test), Vec::new()),
        };
        let correct = preds
            .iter()
            .zip(&data.test.labels)
            .filter(|(p, y)| p == y)
            .count();
        members.push(MemberSummary {
            model_id: id.clone(),
            seed,
            test_accuracy: 100.0 * correct as f64 / data.test.len() as f64,
            sparsity: trained.achieved_sparsity,
            flags,
        });
        for (i, p) in preds.into_iter().enumerate() {
            records.push(PredictionRecord {
                example_id: data.test.ids[i].clone(),
                population_id: population_id.to_string(),
                model_id: id.clone(),
                predicted_label: p,
                true_label: Some(data.test.labels[i]),
            });
        }
    }
    Ok(PopulationRun {
        spec: PopulationSpec {
            id: population_id.to_string(),
            compression,
            model_count: seeds.len(),
        },
        members,
        records,
    })
}

/// Trains (and compresses) one model per seed and collects test-set
/// predictions in ledger form.
pub fn run_population(
    data: &SplitDataset,
    config: &TrainConfig,
    population_id: &str,
    compression: Compression,
    seeds: &[u64],
    protocol: &ProtocolConfig,
) -> Result<PopulationRun, TrainError> {
    let schedule = match compression {
        Compression::Pruned { target_sparsity } => {
            let s = protocol.schedule(target_sparsity, config.steps);
            s.validate(config.steps)?;
            Some(s)
        }
        _ => None,
    };
    let models = train_members(data, config, schedule.as_ref(), seeds, population_id)?;
    population_from_models(data, population_id, compression, seeds, &models, protocol)
}
