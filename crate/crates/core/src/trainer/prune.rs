//! Gradual magnitude pruning.
//!
//! Events fire every `interval` steps from `start_step` through `end_step`.
//! The sparsity target at event `k` of `K` ramps linearly to the final
//! target. Each event zeroes the smallest-magnitude weights that are still
//! alive, so the pruned set only ever grows. Biases are never pruned.

use serde::{Deserialize, Serialize};

use super::model::Mlp;
use super::TrainError;

/// Whether the magnitude threshold is shared across layers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneScope {
    #[default]
    Global,
    PerLayer,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneRamp {
    /// Equal sparsity increment per event.
    #[default]
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneSchedule {
    pub target_sparsity: f64,
    pub start_step: usize,
    pub end_step: usize,
    pub interval: usize,
    #[serde(default)]
    pub ramp: PruneRamp,
    #[serde(default)]
    pub scope: PruneScope,
}

impl PruneSchedule {
    /// Schedule proportional to a 10,000-step run pruned every 500 steps
    /// between steps 1,000 and 9,000.
    pub fn proportional(target_sparsity: f64, total_steps: usize) -> Self {
        let at = |f: f64| ((total_steps as f64 * f).round() as usize).max(1);
        Self {
            target_sparsity,
            start_step: at(0.1),
            end_step: at(0.9).max(at(0.1) + 1),
            interval: at(0.05),
            ramp: PruneRamp::Linear,
            scope: PruneScope::Global,
        }
    }

    pub fn validate(&self, total_steps: usize) -> Result<(), TrainError> {
        let t = self.target_sparsity;
        if !(t > 0.0 && t < 1.0) {
            return Err(TrainError::InfeasibleSchedule(format!(
                "target sparsity {t} outside (0, 1)"
            )));
        }
        if self.interval == 0 {
            return Err(TrainError::InfeasibleSchedule("interval must be positive".into()));
        }
        if !(self.start_step < self.end_step && self.end_step <= total_steps) {
            return Err(TrainError::InfeasibleSchedule(format!(
                "need start_step < end_step <= total steps, got {} / {} / {}",
                self.start_step, self.end_step, total_steps
            )));
        }
        Ok(())
    }

    pub fn event_steps(&self) -> Vec<usize> {
        (self.start_step..=self.end_step)
            .step_by(self.interval)
            .collect()
    }

    /// Sparsity target after event `k` (1-based) of `total` events.
    pub fn sparsity_at(&self, k: usize, total: usize) -> f64 {
        match self.ramp {
            PruneRamp::Linear => self.target_sparsity * k as f64 / total as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub step: usize,
    pub target: f64,
    pub pruned: usize,
}

/// Per-layer masks; `true` marks a pruned weight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneMask(pub Vec<Vec<bool>>);

impl PruneMask {
    pub fn pruned(&self) -> usize {
        self.0.iter().map(|l| l.iter().filter(|p| **p).count()).sum()
    }

    pub fn is_superset_of(&self, other: &PruneMask) -> bool {
        self.0
            .iter()
            .zip(&other.0)
            .all(|(a, b)| a.iter().zip(b).all(|(x, y)| *x || !*y))
    }
}

pub struct Pruner {
    schedule: PruneSchedule,
    events: Vec<usize>,
    fired: usize,
    mask: PruneMask,
}

impl Pruner {
    pub fn new(model: &Mlp, schedule: PruneSchedule) -> Self {
        let events = schedule.event_steps();
        let mask = PruneMask(
            model
                .layers
                .iter()
                .map(|l| vec![false; l.weights.len()])
                .collect(),
        );
        Self {
            schedule,
            events,
            fired: 0,
            mask,
        }
    }

    pub fn mask(&self) -> &PruneMask {
        &self.mask
    }

    /// Fires the pruning event scheduled for `step`, if any.
    pub fn on_step(&mut self, step: usize, model: &mut Mlp) -> Option<PruneEvent> {
        if self.events.get(self.fired) != Some(&step) {
            return None;
        }
        self.fired += 1;
        let target = self.schedule.sparsity_at(self.fired, self.events.len());
        self.prune_to(target, model);
        Some(PruneEvent {
            step,
            target,
            pruned: self.mask.pruned(),
        })
    }

    /// Grows the mask until `sparsity` of the prunable weights are pruned,
    /// taking the smallest surviving magnitudes first.
    pub fn prune_to(&mut self, sparsity: f64, model: &mut Mlp) {
        match self.schedule.scope {
            PruneScope::Global => {
                let total: usize = model.layers.iter().map(|l| l.weights.len()).sum();
                let mut alive: Vec<(f32, usize, usize)> = Vec::new();
                for (li, l) in model.layers.iter().enumerate() {
                    for (wi, w) in l.weights.iter().enumerate() {
                        if !self.mask.0[li][wi] {
                            alive.push((w.abs(), li, wi));
                        }
                    }
                }
                let need = ((sparsity * total as f64).round() as usize)
                    .saturating_sub(total - alive.len());
                select_smallest(&mut alive, need);
                for &(_, li, wi) in &alive[..need] {
                    self.mask.0[li][wi] = true;
                }
            }
            PruneScope::PerLayer => {
                for (li, l) in model.layers.iter().enumerate() {
                    let total = l.weights.len();
                    let mut alive: Vec<(f32, usize, usize)> = l
                        .weights
                        .iter()
                        .enumerate()
                        .filter(|(wi, _)| !self.mask.0[li][*wi])
                        .map(|(wi, w)| (w.abs(), li, wi))
                        .collect();
                    let need = ((sparsity * total as f64).round() as usize)
                        .saturating_sub(total - alive.len());
                    select_smallest(&mut alive, need);
                    for &(_, _, wi) in &alive[..need] {
                        self.mask.0[li][wi] = true;
                    }
                }
            }
        }
        self.apply_mask(model);
    }

    pub fn apply_mask(&self, model: &mut Mlp) {
        for (layer, mask) in model.layers.iter_mut().zip(&self.mask.0) {
            for (w, &m) in layer.weights.iter_mut().zip(mask) {
                if m {
                    *w = 0.0;
                }
            }
        }
    }
}

/// Moves the `n` smallest entries (ties broken by position) to the front.
fn select_smallest(v: &mut [(f32, usize, usize)], n: usize) {
    let n = n.min(v.len());
    if n == 0 || n == v.len() {
        return;
    }
    let key = |a: &(f32, usize, usize), b: &(f32, usize, usize)| {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    };
    v.select_nth_unstable_by(n - 1, key);
}
