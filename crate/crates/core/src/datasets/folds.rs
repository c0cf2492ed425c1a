use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::manifest::DatasetManifest;
use crate::{seed, Error, Result};

/// Which validation partition to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldSelector {
    /// Official fold held out for validation (1-based).
    Fold(u32),
    /// Seeded stratified 80/20 split.
    Seed(u64),
}

impl std::fmt::Display for FoldSelector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FoldSelector::Fold(k) => write!(f, "fold{k}"),
            FoldSelector::Seed(s) => write!(f, "seed{s}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub selector: FoldSelector,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

impl FoldPlan {
    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train_ids,
            Split::Validation => &self.val_ids,
        }
    }
}

/// Partition a manifest into train and validation ids.
///
/// Folded datasets hold out the named fold. Seeded splits draw
/// `count / 5` clips per class into validation, reproducibly from the seed.
pub fn split_folds(m: &DatasetManifest, selector: FoldSelector) -> Result<FoldPlan> {
    let (train_ids, val_ids) = match (m.kind.official_folds(), selector) {
        (Some(k), FoldSelector::Fold(f)) => {
            if f == 0 || f > k {
                return Err(Error::Domain(format!("fold {f} out of range 1..={k} for {}", m.kind)));
            }
            let (val, train): (Vec<_>, Vec<_>) = m.entries.iter().partition(|e| e.fold == Some(f));
            (
                train.into_iter().map(|e| e.clip_id.clone()).collect(),
                val.into_iter().map(|e| e.clip_id.clone()).collect(),
            )
        }
        (None, FoldSelector::Seed(s)) => {
            let mut rng = seed::rng(seed::derive(s, 0x0053_504C_4954));
            let mut val = BTreeSet::new();
            for class in 0..m.num_classes() {
                let mut ids: Vec<&str> = m
                    .entries
                    .iter()
                    .filter(|e| e.label == class)
                    .map(|e| e.clip_id.as_str())
                    .collect();
                ids.shuffle(&mut rng);
                let take = ids.len() / 5;
                val.extend(ids.into_iter().take(take));
            }
            let mut train = Vec::new();
            let mut val_ids = Vec::new();
            for e in &m.entries {
                if val.contains(e.clip_id.as_str()) {
                    val_ids.push(e.clip_id.clone());
                } else {
                    train.push(e.clip_id.clone());
                }
            }
            (train, val_ids)
        }
        (Some(_), FoldSelector::Seed(_)) => {
            return Err(Error::Domain(format!("{} has official folds; select a fold index", m.kind)))
        }
        (None, FoldSelector::Fold(_)) => {
            return Err(Error::Domain(format!("{} has no official folds; select a split seed", m.kind)))
        }
    };
    Ok(FoldPlan {
        selector,
        train_ids,
        val_ids,
    })
}

impl DatasetManifest {
    /// Every validation partition used for cross-validation: one per
    /// official fold, or the single seeded split.
    pub fn cross_validation_plans(&self, split_seed: u64) -> Result<Vec<FoldPlan>> {
        match self.kind.official_folds() {
            Some(k) => (1..=k).map(|f| split_folds(self, FoldSelector::Fold(f))).collect(),
            None => Ok(vec![split_folds(self, FoldSelector::Seed(split_seed))?]),
        }
    }
}
