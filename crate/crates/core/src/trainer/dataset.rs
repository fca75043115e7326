//! Synthetic long-tail binary classification data with protected attributes.
//!
//! Labels are drawn first; each attribute is then drawn conditionally on the
//! label so that its marginal frequency and its positive rate
//! `P(y = 1 | attribute)` both match the spec. Features are a Gaussian
//! cloud around a prototype chosen per (label, attribute combination) cell,
//! so rare cells are rare in feature space too.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attributes::AttributeTable;

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("attribute {name:?}: frequency {value} must lie in (0, 1)")]
    Frequency { name: String, value: f64 },
    #[error("positive_rate {0} must lie in (0, 1)")]
    PositiveRate(f64),
    #[error("attribute {name:?}: positive rate {value} must lie in [0, 1]")]
    AttributePositiveRate { name: String, value: f64 },
    #[error("attribute {name:?}: infeasible combination, {constraint}")]
    Infeasible { name: String, constraint: String },
    #[error("invalid dataset spec: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    /// Marginal frequency in the generated data.
    pub frequency: f64,
    /// `P(y = 1 | attribute present)`. When absent the attribute is drawn
    /// independently of the label.
    #[serde(default)]
    pub positive_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDatasetSpec {
    pub num_examples: usize,
    pub num_features: usize,
    /// Fraction of examples held out as the test split (taken from the end).
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Overall `P(y = 1)`.
    pub positive_rate: f64,
    pub attributes: Vec<AttributeSpec>,
    /// Standard deviation of the feature noise around each cell prototype.
    pub noise: f64,
    pub seed: u64,
}

fn default_test_fraction() -> f64 {
    0.2
}

/// Conditional attribute probabilities `(P(a | y = 0), P(a | y = 1))`.
type Conditionals = Vec<(f64, f64)>;

impl SyntheticDatasetSpec {
    /// Checks the spec and derives per-attribute conditionals given the label.
    pub fn conditionals(&self) -> Result<Conditionals, DatasetError> {
        if self.num_examples < 2 || self.num_features == 0 {
            return Err(DatasetError::Invalid(
                "need at least 2 examples and 1 feature".into(),
            ));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(DatasetError::Invalid(format!(
                "test_fraction {} must lie in (0, 1)",
                self.test_fraction
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(DatasetError::Invalid(format!("noise {} must be >= 0", self.noise)));
        }
        if self.attributes.len() > 12 {
            return Err(DatasetError::Invalid("at most 12 attributes".into()));
        }
        let p = self.positive_rate;
        if !(p > 0.0 && p < 1.0) {
            return Err(DatasetError::PositiveRate(p));
        }
        self.attributes
            .iter()
            .map(|a| {
                let f = a.frequency;
                if !(f > 0.0 && f < 1.0) {
                    return Err(DatasetError::Frequency {
                        name: a.name.clone(),
                        value: f,
                    });
                }
                let q = match a.positive_rate {
                    None => return Ok((f, f)),
                    Some(q) if (0.0..=1.0).contains(&q) => q,
                    Some(q) => {
                        return Err(DatasetError::AttributePositiveRate {
                            name: a.name.clone(),
                            value: q,
                        })
                    }
                };
                // Bayes: P(a|y=1) = f q / p, P(a|y=0) = f (1 - q) / (1 - p)
                let given_pos = f * q / p;
                let given_neg = f * (1.0 - q) / (1.0 - p);
                if given_pos > 1.0 {
                    return Err(DatasetError::Infeasible {
                        name: a.name.clone(),
                        constraint: format!(
                            "frequency * positive_rate ({}) exceeds overall positive_rate ({p})",
                            f * q
                        ),
                    });
                }
                if given_neg > 1.0 {
                    return Err(DatasetError::Infeasible {
                        name: a.name.clone(),
                        constraint: format!(
                            "frequency * (1 - positive_rate) ({}) exceeds overall negative rate ({})",
                            f * (1.0 - q),
                            1.0 - p
                        ),
                    });
                }
                Ok((given_neg, given_pos))
            })
            .collect()
    }
}

/// Row-major feature matrix with labels and attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub num_features: usize,
    pub features: Vec<f32>,
    pub labels: Vec<u32>,
    pub attribute_names: Vec<String>,
    pub attributes: Vec<Vec<bool>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    /// First `n` rows of the feature matrix.
    pub fn head_features(&self, n: usize) -> &[f32] {
        &self.features[..n.min(self.len()) * self.num_features]
    }

    pub fn attribute_table(&self) -> AttributeTable {
        let mut t = AttributeTable::new(self.attribute_names.clone());
        for (id, row) in self.ids.iter().zip(&self.attributes) {
            t.insert(id.clone(), row.clone())
                .expect("generated ids are unique");
        }
        t
    }

    fn slice(&self, range: std::ops::Range<usize>) -> Dataset {
        let d = self.num_features;
        Dataset {
            ids: self.ids[range.clone()].to_vec(),
            num_features: d,
            features: self.features[range.start * d..range.end * d].to_vec(),
            labels: self.labels[range.clone()].to_vec(),
            attribute_names: self.attribute_names.clone(),
            attributes: self.attributes[range].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn generate_dataset(spec: &SyntheticDatasetSpec) -> Result<SplitDataset, DatasetError> {
    let conditionals = spec.conditionals()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.attributes.len();
    let d = spec.num_features;

    // prototype per (label, attribute bits) cell
    let cells = 2usize << k;
    let prototypes: Vec<f32> = (0..cells * d)
        .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
        .collect();

    let n = spec.num_examples;
    let mut labels = Vec::with_capacity(n);
    let mut attributes = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n * d);
    for _ in 0..n {
        let y = u32::from(rng.random::<f64>() < spec.positive_rate);
        let attrs: Vec<bool> = conditionals
            .iter()
            .map(|&(neg, pos)| rng.random::<f64>() < if y == 1 { pos } else { neg })
            .collect();
        let cell = attrs
            .iter()
            .fold(y as usize, |acc, &a| (acc << 1) | usize::from(a));
        let proto = &prototypes[cell * d..(cell + 1) * d];
        for &c in proto {
            let eps: f64 = rng.sample(StandardNormal);
            features.push(c + (spec.noise * eps) as f32);
        }
        labels.push(y);
        attributes.push(attrs);
    }

    let full = Dataset {
        ids: (0..n).map(|i| format!("ex{i:06}")).collect(),
        num_features: d,
        features,
        labels,
        attribute_names: spec.attributes.iter().map(|a| a.name.clone()).collect(),
        attributes,
    };
    let n_test = ((n as f64 * spec.test_fraction).round() as usize).clamp(1, n - 1);
    let n_train = n - n_test;
    Ok(SplitDataset {
        train: full.slice(0..n_train),
        test: full.slice(n_train..n),
    })
}
