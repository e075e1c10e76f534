use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Instance, InstanceId, SourceId};
use crate::error::{Error, Result};

/// One cross-validation partition; no source appears on both sides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train_sources: Vec<SourceId>,
    pub test_sources: Vec<SourceId>,
    pub train: Vec<InstanceId>,
    pub test: Vec<InstanceId>,
}

/// Source-grouped k-fold split of supervised instances. Sources are shuffled
/// with `seed` and dealt round-robin, so fold sizes differ by at most one
/// source. Instances without a source are ignored.
pub fn kfold_split(instances: &[&Instance], k: usize, seed: u64) -> Result<Vec<Fold>> {
    let mut by_source: BTreeMap<SourceId, Vec<InstanceId>> = BTreeMap::new();
    for inst in instances {
        if let Some(s) = inst.source() {
            by_source.entry(s).or_default().push(inst.id);
        }
    }
    if k < 2 {
        return Err(Error::Config(format!("k = {k}; need at least 2 folds")));
    }
    if k > by_source.len() {
        return Err(Error::Config(format!(
            "k = {k} exceeds the {} distinct sources",
            by_source.len()
        )));
    }
    let mut sources: Vec<SourceId> = by_source.keys().copied().collect();
    sources.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut folds: Vec<Vec<SourceId>> = vec![Vec::new(); k];
    for (i, s) in sources.into_iter().enumerate() {
        folds[i % k].push(s);
    }
    Ok(folds
        .into_iter()
        .enumerate()
        .map(|(index, mut test_sources)| {
            test_sources.sort();
            let mut train_sources = Vec::new();
            let mut train = Vec::new();
            let mut test = Vec::new();
            for (s, ids) in &by_source {
                if test_sources.contains(s) {
                    test.extend(ids);
                } else {
                    train_sources.push(*s);
                    train.extend(ids);
                }
            }
            Fold {
                index,
                train_sources,
                test_sources,
                train,
                test,
            }
        })
        .collect())
}
