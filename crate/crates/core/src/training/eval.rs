use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ast::Dataset;
use crate::error::{Error, Result};
use crate::iornn::{rank_classes, Model};

/// Ranks the true class of each labeled identifier was found at.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Evaluation {
    /// `hits[k - 1]` counts identifiers whose class is within the top `k`.
    hits: Vec<usize>,
    total: usize,
    /// `confusion[true][predicted]` for the top-ranked prediction.
    confusion: Vec<Vec<usize>>,
}

impl Evaluation {
    pub fn new(classes: usize) -> Self {
        Evaluation {
            hits: vec![0; classes],
            total: 0,
            confusion: vec![vec![0; classes]; classes],
        }
    }

    /// Records one identifier given a full class ranking.
    pub fn record(&mut self, ranking: &[usize], truth: usize) {
        let rank = ranking
            .iter()
            .position(|&c| c == truth)
            .expect("ranking covers every class");
        for h in &mut self.hits[rank..] {
            *h += 1;
        }
        self.confusion[truth][ranking[0]] += 1;
        self.total += 1;
    }

    pub fn merge(&mut self, other: &Evaluation) {
        for (a, b) in self.hits.iter_mut().zip(&other.hits) {
            *a += b;
        }
        for (row, other_row) in self.confusion.iter_mut().zip(&other.confusion) {
            for (a, b) in row.iter_mut().zip(other_row) {
                *a += b;
            }
        }
        self.total += other.total;
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn classes(&self) -> usize {
        self.hits.len()
    }

    /// Top-k accuracy; 0 when nothing was evaluated.
    pub fn topk(&self, k: usize) -> f64 {
        if self.total == 0 || k == 0 {
            return 0.0;
        }
        self.hits[k.min(self.hits.len()) - 1] as f64 / self.total as f64
    }

    /// `{"1": top1, ..}` for each `k` in `ks`.
    pub fn topk_map(&self, ks: &[usize]) -> BTreeMap<String, f64> {
        ks.iter().map(|&k| (k.to_string(), self.topk(k))).collect()
    }

    pub fn confusion(&self) -> &[Vec<usize>] {
        &self.confusion
    }
}

/// Evaluates `model` on every labeled identifier of `dataset`. Classes are
/// ranked by logit, ties going to the lower class index.
pub fn evaluate_topk(model: &Model, dataset: &Dataset) -> Result<Evaluation> {
    if model.classes() != &dataset.classes {
        return Err(Error::Validation("model and dataset use different class sets".into()));
    }
    super::check_vocab(model, dataset)?;
    let mut eval = Evaluation::new(dataset.classes.len());
    for program in &dataset.programs {
        let prepared = model.prepare_program(program)?;
        if prepared.targets.is_empty() {
            continue;
        }
        let logits = model.logits(&prepared.graph)?;
        for &(sink, class) in &prepared.targets {
            eval.record(&rank_classes(&logits[sink]), class);
        }
    }
    Ok(eval)
}

fn labels(dataset: &Dataset) -> impl Iterator<Item = usize> + '_ {
    dataset.programs.iter().flat_map(|p| p.labels.iter().map(|l| l.class))
}

/// Uniformly random class ranking per identifier.
pub fn random_predictions(truth: impl IntoIterator<Item = usize>, classes: usize, seed: u64) -> Evaluation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eval = Evaluation::new(classes);
    let mut ranking: Vec<usize> = (0..classes).collect();
    for t in truth {
        ranking.shuffle(&mut rng);
        eval.record(&ranking, t);
    }
    eval
}

pub fn baseline_random(dataset: &Dataset, seed: u64) -> Evaluation {
    random_predictions(labels(dataset), dataset.classes.len(), seed)
}

/// Classes ranked by training frequency, ties by lower index.
pub fn majority_ranking(truth: impl IntoIterator<Item = usize>, classes: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; classes];
    let mut any = false;
    for t in truth {
        counts[t] += 1;
        any = true;
    }
    if !any {
        return Err(Error::Validation("majority baseline needs at least one training label".into()));
    }
    let mut order: Vec<usize> = (0..classes).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    Ok(order)
}

/// Predicts the most frequent training class for every test identifier.
pub fn baseline_majority(train: &Dataset, test: &Dataset) -> Result<Evaluation> {
    let ranking = majority_ranking(labels(train), train.classes.len())?;
    let mut eval = Evaluation::new(test.classes.len());
    for t in labels(test) {
        eval.record(&ranking, t);
    }
    Ok(eval)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_counts_ranks() {
        let mut e = Evaluation::new(3);
        e.record(&[2, 0, 1], 0);
        e.record(&[0, 1, 2], 0);
        assert_eq!(e.topk(1), 0.5);
        assert_eq!(e.topk(2), 1.0);
        assert_eq!(e.topk(3), 1.0);
        assert_eq!(e.confusion()[0][2], 1);
    }

    #[test]
    fn majority_ties_go_to_lower_index() {
        assert_eq!(majority_ranking([2, 1, 2, 1, 0], 3).unwrap(), vec![1, 2, 0]);
        assert!(majority_ranking([], 3).is_err());
    }

    #[test]
    fn empty_evaluation_is_zero() {
        assert_eq!(Evaluation::new(21).topk(1), 0.0);
    }
}
