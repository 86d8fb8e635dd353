use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LabeledExample;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<LabeledExample>,
    pub validation: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub seed: u64,
    pub validation_fraction: f64,
}

/// Per class, a seeded shuffle picks `floor(fraction · n_c)` validation
/// examples, never the class's last one. Both sides keep input order.
pub fn stratified_split(examples: &[LabeledExample], validation_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(Error::Config(format!(
            "validation fraction {validation_fraction} outside (0, 1)"
        )));
    }
    if examples.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty dataset".into()));
    }
    let classes = examples.iter().map(|e| e.label).max().unwrap_or(0) + 1;
    let mut in_validation = vec![false; examples.len()];
    for class in 0..classes {
        let mut members: Vec<usize> = (0..examples.len()).filter(|&i| examples[i].label == class).collect();
        if members.is_empty() {
            continue;
        }
        let n = members.len();
        let take = ((validation_fraction * n as f64 + 1e-9).floor() as usize).min(n - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (class as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        members.shuffle(&mut rng);
        for &i in &members[..take] {
            in_validation[i] = true;
        }
    }
    let mut split = DatasetSplit {
        seed,
        validation_fraction,
        ..DatasetSplit::default()
    };
    for (e, &v) in examples.iter().zip(&in_validation) {
        if v {
            split.validation.push(e.clone());
        } else {
            split.train.push(e.clone());
        }
    }
    Ok(split)
}
