use std::path::Path;

use cie_cli::experiment::{self, ExperimentConfig, ExperimentOutput};

pub const SMALL: &str = r#"
seeds = [1, 2, 3]
sparsities = [0.5, 0.9]
quantization = ["hybrid_int8", "fixedpoint_int8"]
timestamp = "2024-01-01T00:00:00Z"

[dataset]
num_examples = 2000
num_features = 4
test_fraction = 0.5
positive_rate = 0.3
noise = 1.2
seed = 11

[[dataset.attributes]]
name = "Rare"
frequency = 0.1
positive_rate = 0.6

[[dataset.attributes]]
name = "Young"
frequency = 0.5

[train]
hidden = [16]
steps = 300
batch_size = 16
learning_rate = 0.05
seed = 0
"#;

pub fn small_config() -> ExperimentConfig {
    ExperimentConfig::from_toml_str(SMALL).unwrap()
}

pub fn run_small(out: &Path) -> ExperimentOutput {
    experiment::run(&small_config(), SMALL.as_bytes(), out).unwrap()
}
