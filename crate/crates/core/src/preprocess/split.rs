//! Entity-level train / validation / test assignment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedTree;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for SplitPart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitPart::Train),
            "validation" | "valid" | "val" => Ok(SplitPart::Validation),
            "test" => Ok(SplitPart::Test),
            other => Err(Error::config("split", format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|f| !(*f >= 0.0)) || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split fractions must be non-negative and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }
}

/// Split of one entity; depends only on the entity id and the seed.
pub fn assign_split(entity_id: &str, fractions: SplitFractions, seed: u64) -> SplitPart {
    let u: f64 = SeedTree::new(seed).child("split").stream(entity_id).random();
    if u < fractions.train {
        SplitPart::Train
    } else if u < fractions.train + fractions.validation {
        SplitPart::Validation
    } else {
        SplitPart::Test
    }
}

/// Partitions items by their entity id; every item of an entity lands in the
/// same part and input order is preserved within each part.
pub fn split_by_entity<T>(
    items: Vec<T>,
    entity_of: impl Fn(&T) -> &str,
    fractions: SplitFractions,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    fractions.validate()?;
    if items.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty cohort".into()));
    }
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for item in items {
        match assign_split(entity_of(&item), fractions, seed) {
            SplitPart::Train => train.push(item),
            SplitPart::Validation => valid.push(item),
            SplitPart::Test => test.push(item),
        }
    }
    Ok((train, valid, test))
}
