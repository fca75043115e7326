//! Small fully connected classifier trained with plain minibatch SGD.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::prune::{PruneEvent, PruneSchedule, Pruner};
use super::TrainError;

/// Anything that maps a feature row to class logits.
pub trait Classifier {
    fn logits(&self, x: &[f32]) -> Vec<f32>;

    /// Argmax of the logits; ties go to the lowest class index.
    fn predict(&self, x: &[f32]) -> u32 {
        argmax(&self.logits(x))
    }

    fn predict_all(&self, data: &Dataset) -> Vec<u32> {
        (0..data.len()).map(|i| self.predict(data.row(i))).collect()
    }

    /// Percentage of `data` classified correctly.
    fn accuracy(&self, data: &Dataset) -> f64 {
        let correct = self
            .predict_all(data)
            .iter()
            .zip(&data.labels)
            .filter(|(p, y)| p == y)
            .count();
        100.0 * correct as f64 / data.len() as f64
    }
}

pub(crate) fn argmax(v: &[f32]) -> u32 {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best as u32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Dense {
    fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / in_dim as f64).sqrt() as f32;
        Self {
            in_dim,
            out_dim,
            weights: (0..in_dim * out_dim)
                .map(|_| rng.random_range(-bound..bound))
                .collect(),
            bias: vec![0.0; out_dim],
        }
    }

    pub(crate) fn forward_into(&self, weights: &[f32], x: &[f32], out: &mut [f32]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(weights.chunks_exact(self.in_dim).zip(&self.bias))
        {
            *o = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f32>() + b;
        }
    }
}

/// Feed-forward network with ReLU hidden layers and a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn new(input: usize, hidden: &[usize], output: usize, rng: &mut impl Rng) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        Self {
            layers: dims.windows(2).map(|w| Dense::new(w[0], w[1], rng)).collect(),
        }
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    /// Fraction of weight-matrix entries that are exactly zero (biases
    /// excluded).
    pub fn sparsity(&self) -> f64 {
        let zeros: usize = self
            .layers
            .iter()
            .map(|l| l.weights.iter().filter(|w| **w == 0.0).count())
            .sum();
        zeros as f64 / self.weight_count() as f64
    }

    /// Forward pass keeping every layer's post-activation output.
    fn forward_trace(&self, x: &[f32], acts: &mut [Vec<f32>]) {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let (before, after) = acts.split_at_mut(i + 1);
            let input: &[f32] = if i == 0 { x } else { &before[i] };
            let out = &mut after[0];
            layer.forward_into(&layer.weights, input, out);
            if i < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
    }
}

impl Classifier for Mlp {
    fn logits(&self, x: &[f32]) -> Vec<f32> {
        let mut acts: Vec<Vec<f32>> = std::iter::once(Vec::new())
            .chain(self.layers.iter().map(|l| vec![0.0; l.out_dim]))
            .collect();
        self.forward_trace(x, &mut acts);
        acts.pop().expect("at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(TrainError::InvalidConfig(
                "steps and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.hidden.contains(&0) {
            return Err(TrainError::InvalidConfig("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Mlp,
    pub achieved_sparsity: f64,
    pub final_loss: f64,
    pub prune_events: Vec<PruneEvent>,
}

/// Trains a classifier with softmax cross-entropy. When a schedule is given,
/// magnitude pruning events fire at the scheduled steps and pruned weights
/// stay zero for the rest of training.
pub fn train_model(
    data: &Dataset,
    config: &TrainConfig,
    schedule: Option<&PruneSchedule>,
    num_classes: usize,
) -> Result<TrainedModel, TrainError> {
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::InvalidConfig("empty training set".into()));
    }
    if let Some(s) = schedule {
        s.validate(config.steps)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Mlp::new(data.num_features, &config.hidden, num_classes, &mut rng);
    let mut pruner = schedule.map(|s| Pruner::new(&model, s.clone()));

    let n_layers = model.layers.len();
    let mut acts: Vec<Vec<f32>> = std::iter::once(Vec::new())
        .chain(model.layers.iter().map(|l| vec![0.0; l.out_dim]))
        .collect();
    let mut deltas: Vec<Vec<f32>> = model.layers.iter().map(|l| vec![0.0; l.out_dim]).collect();
    let mut grad_w: Vec<Vec<f32>> = model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect();
    let mut grad_b: Vec<Vec<f32>> = model.layers.iter().map(|l| vec![0.0; l.out_dim]).collect();

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut final_loss = 0.0;
    let mut prune_events = Vec::new();

    for step in 1..=config.steps {
        grad_w.iter_mut().for_each(|g| g.fill(0.0));
        grad_b.iter_mut().for_each(|g| g.fill(0.0));
        let mut loss = 0.0f64;

        for _ in 0..config.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let idx = order[cursor];
            cursor += 1;
            let x = data.row(idx);
            let y = data.labels[idx] as usize;
            model.forward_trace(x, &mut acts);

            // softmax cross-entropy gradient on the logits
            let logits = &acts[n_layers];
            let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let exps: Vec<f32> = logits.iter().map(|l| (l - max).exp()).collect();
            let sum: f32 = exps.iter().sum();
            loss += -((exps[y] / sum) as f64).ln();
            for (c, d) in deltas[n_layers - 1].iter_mut().enumerate() {
                *d = exps[c] / sum - if c == y { 1.0 } else { 0.0 };
            }

            for li in (0..n_layers).rev() {
                let layer = &model.layers[li];
                let input: &[f32] = if li == 0 { x } else { &acts[li] };
                let delta = &deltas[li];
                for (o, &dv) in delta.iter().enumerate() {
                    if dv == 0.0 {
                        continue;
                    }
                    grad_b[li][o] += dv;
                    let row = &mut grad_w[li][o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (g, xi) in row.iter_mut().zip(input) {
                        *g += dv * xi;
                    }
                }
                if li > 0 {
                    let (lower, upper) = deltas.split_at_mut(li);
                    let prev = &mut lower[li - 1];
                    prev.fill(0.0);
                    for (o, &dv) in upper[0].iter().enumerate() {
                        if dv == 0.0 {
                            continue;
                        }
                        let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                        for (p, w) in prev.iter_mut().zip(row) {
                            *p += dv * w;
                        }
                    }
                    // ReLU derivative
                    for (p, a) in prev.iter_mut().zip(&acts[li]) {
                        if *a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                }
            }
        }

        loss /= config.batch_size as f64;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { step });
        }
        final_loss = loss;

        let lr = (config.learning_rate / config.batch_size as f64) as f32;
        for (li, layer) in model.layers.iter_mut().enumerate() {
            for (w, g) in layer.weights.iter_mut().zip(&grad_w[li]) {
                *w -= lr * g;
            }
            for (b, g) in layer.bias.iter_mut().zip(&grad_b[li]) {
                *b -= lr * g;
            }
        }

        if let Some(p) = pruner.as_mut() {
            if let Some(event) = p.on_step(step, &mut model) {
                prune_events.push(event);
            }
            p.apply_mask(&mut model);
        }
    }

    Ok(TrainedModel {
        achieved_sparsity: model.sparsity(),
        model,
        final_loss,
        prune_events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::dataset::{generate_dataset, AttributeSpec, SyntheticDatasetSpec};

    fn separable() -> SyntheticDatasetSpec {
        SyntheticDatasetSpec {
            num_examples: 1000,
            num_features: 6,
            test_fraction: 0.2,
            positive_rate: 0.3,
            attributes: vec![AttributeSpec {
                name: "A".into(),
                frequency: 0.2,
                positive_rate: Some(0.2),
            }],
            noise: 0.0,
            seed: 5,
        }
    }

    fn config(seed: u64) -> TrainConfig {
        TrainConfig {
            hidden: vec![32, 32],
            steps: 600,
            batch_size: 32,
            learning_rate: 0.1,
            seed,
        }
    }

    #[test]
    fn separable_data_is_fit_exactly() {
        let data = generate_dataset(&separable()).unwrap();
        let trained = train_model(&data.train, &config(1), None, 2).unwrap();
        assert_eq!(trained.model.accuracy(&data.train), 100.0);
        assert_eq!(trained.achieved_sparsity, 0.0);
    }

    #[test]
    fn training_is_deterministic() {
        let data = generate_dataset(&separable()).unwrap();
        let a = train_model(&data.train, &config(3), None, 2).unwrap();
        let b = train_model(&data.train, &config(3), None, 2).unwrap();
        assert_eq!(a.model, b.model);
        let c = train_model(&data.train, &config(4), None, 2).unwrap();
        assert_ne!(a.model, c.model);
    }

    #[test]
    fn divergent_learning_rate_reports_step() {
        let mut spec = separable();
        spec.noise = 1.0;
        let data = generate_dataset(&spec).unwrap();
        let mut cfg = config(1);
        cfg.learning_rate = 1e30;
        match train_model(&data.train, &cfg, None, 2) {
            Err(TrainError::NonFiniteLoss { step }) => assert!(step >= 1),
            other => panic!("expected non-finite loss, got {:?}", other.map(|t| t.final_loss)),
        }
    }

    #[test]
    fn invalid_config() {
        let data = generate_dataset(&separable()).unwrap();
        let mut cfg = config(1);
        cfg.batch_size = 0;
        assert!(matches!(
            train_model(&data.train, &cfg, None, 2),
            Err(TrainError::InvalidConfig(_))
        ));
    }
}
