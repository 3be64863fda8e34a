use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ast::Dataset;
use crate::error::{Error, Result};

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Partitions `0..n` into `k` seeded folds whose sizes differ by at most one.
pub fn fold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::Config(format!("{n} trees cannot fill {k} folds")));
    }
    let order = shuffled(n, seed);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut fold = order[start..start + len].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += len;
    }
    Ok(folds)
}

fn subset(dataset: &Dataset, indices: &[usize]) -> Dataset {
    dataset.with_programs(indices.iter().map(|&i| dataset.programs[i].clone()).collect())
}

/// `(train, validation)` pairs, one per fold.
pub fn kfold_split(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<(Dataset, Dataset)>> {
    let folds = fold_indices(dataset.programs.len(), k, seed)?;
    Ok((0..k)
        .map(|held_out| {
            let train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|&(f, _)| f != held_out)
                .flat_map(|(_, idx)| idx.iter().copied())
                .collect();
            let mut train = train;
            train.sort_unstable();
            (subset(dataset, &train), subset(dataset, &folds[held_out]))
        })
        .collect())
}

/// Seeded 2:1 split: a third of the trees (rounded down) are held out.
pub fn train_test_split(dataset: &Dataset, seed: u64) -> (Dataset, Dataset) {
    let n = dataset.programs.len();
    let order = shuffled(n, seed);
    let n_test = n / 3;
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (subset(dataset, &train), subset(dataset, &test))
}

/// Explicit train/test assignment by program path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFile {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl SplitFile {
    pub fn parse(raw: &[u8]) -> Result<Self> {
        serde_json::from_slice(raw).map_err(|e| Error::from_json(raw, e))
    }

    /// Selects programs by path. Every listed path must exist exactly once in
    /// the dataset and no path may be on both sides.
    pub fn apply(&self, dataset: &Dataset) -> Result<(Dataset, Dataset)> {
        let mut by_path: HashMap<&str, usize> = HashMap::new();
        for (i, p) in dataset.programs.iter().enumerate() {
            if by_path.insert(p.path.as_str(), i).is_some() {
                return Err(Error::Validation(format!("duplicate program path `{}`", p.path)));
            }
        }
        let train: BTreeSet<&str> = self.train.iter().map(String::as_str).collect();
        if let Some(both) = self.test.iter().find(|p| train.contains(p.as_str())) {
            return Err(Error::Validation(format!("`{both}` is in both train and test")));
        }
        let pick = |paths: &[String]| -> Result<Dataset> {
            let idx = paths
                .iter()
                .map(|p| {
                    by_path
                        .get(p.as_str())
                        .copied()
                        .ok_or_else(|| Error::Validation(format!("split file names unknown program `{p}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(subset(dataset, &idx))
        };
        Ok((pick(&self.train)?, pick(&self.test)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition_indices() {
        let folds = fold_indices(24, 4, 7).unwrap();
        assert!(folds.iter().all(|f| f.len() == 6));
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..24).collect::<Vec<_>>());

        let uneven = fold_indices(10, 4, 0).unwrap();
        let sizes: Vec<usize> = uneven.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 3, 2, 2]);
        assert!(fold_indices(3, 4, 0).is_err());
        assert!(fold_indices(3, 1, 0).is_err());
    }

    #[test]
    fn split_file_parses() {
        let s = SplitFile::parse(br#"{"train":["a.py"],"test":["b.py"]}"#).unwrap();
        assert_eq!(s.test, vec!["b.py"]);
    }
}
