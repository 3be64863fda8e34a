//! Training loop, evaluation and experiment harness.
//!
//! Training follows the per-tree loop: transform every program, initialize
//! the model, then for each epoch and each tree run the forward pass, take
//! the mean cross-entropy over the tree's labeled sinks, backpropagate and
//! apply one Adam step.

pub mod adam;
pub mod eval;
pub mod grid;
pub mod split;

use std::collections::BTreeMap;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, Adam, AdamConfig};
pub use eval::{
    baseline_majority, baseline_random, evaluate_topk, majority_ranking, random_predictions, Evaluation,
};
pub use grid::{run_experiment_grid, GridReport, GridSpec};
pub use split::{fold_indices, kfold_split, train_test_split, SplitFile};

use crate::ast::{Dataset, Vocabulary};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::iornn::{Head, HeadInit, Model, ModelConfig, PreparedTree, SiblingsSource, Variant};

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "IOTYPER_THREADS";

/// Top-k cut-offs reported by default.
pub const REPORT_KS: [usize; 5] = [1, 2, 3, 4, 5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub d_input: usize,
    pub d_hidden: usize,
    pub max_children: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
    pub restructuring: bool,
    #[serde(default)]
    pub head: Head,
    #[serde(default)]
    pub head_init: HeadInit,
    #[serde(default)]
    pub siblings_source: SiblingsSource,
}

impl TrainConfig {
    pub fn new(variant: Variant) -> Self {
        TrainConfig {
            variant,
            d_input: 10,
            d_hidden: variant.default_hidden(),
            max_children: 20,
            epochs: 100,
            learning_rate: 0.01,
            l2: 1e-5,
            seed: 0,
            restructuring: true,
            head: Head::OneLayer,
            head_init: HeadInit::Xavier,
            siblings_source: SiblingsSource::Inside,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            d_input: self.d_input,
            d_hidden: self.d_hidden,
            max_children: self.max_children,
            head: self.head,
            head_init: self.head_init,
            siblings_source: self.siblings_source,
            restructuring: self.restructuring,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::new(self.learning_rate, self.l2)
    }

    /// Zero epochs is allowed and yields the initialized model.
    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config(format!("l2 must be non-negative, got {}", self.l2)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Mean per-tree loss of each epoch.
    pub loss_curve: Vec<f64>,
    /// Paths of trees skipped for having no labeled identifier.
    pub skipped: Vec<String>,
}

pub(crate) fn check_vocab(model: &Model, dataset: &Dataset) -> Result<()> {
    if dataset.vocab_version != model.vocab_version() {
        return Err(Error::VocabMismatch {
            expected: model.vocab_version().to_string(),
            found: dataset.vocab_version.clone(),
        });
    }
    Ok(())
}

/// Transforms every program; unlabeled trees are returned separately.
pub fn prepare_dataset(model: &Model, dataset: &Dataset) -> Result<(Vec<PreparedTree>, Vec<String>)> {
    check_vocab(model, dataset)?;
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    for program in &dataset.programs {
        let tree = model.prepare_program(program)?;
        if tree.targets.is_empty() {
            skipped.push(program.path.clone());
        } else {
            kept.push(tree);
        }
    }
    Ok((kept, skipped))
}

/// Initializes a model for `dataset` from `config.seed`.
pub fn init_model(dataset: &Dataset, config: &TrainConfig) -> Result<Model> {
    config.validate()?;
    Model::init(config.model_config(), dataset.classes.clone(), Vocabulary::builtin(), config.seed)
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let mut model = init_model(dataset, config)?;
    let (trees, skipped) = prepare_dataset(&model, dataset)?;
    for path in &skipped {
        warn!("skipping `{path}`: no labeled identifiers");
    }
    if trees.is_empty() {
        return Err(Error::Validation("dataset has no labeled identifiers to train on".into()));
    }
    if config.epochs == 0 {
        warn!("epochs = 0: returning the untrained model");
    }

    let layout = model.layout().clone();
    let mut adam = Adam::new(model.store(), config.adam())?;
    let mut loss_curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut total = 0.0;
        for tree in &trees {
            let diverged = || Error::Divergence {
                epoch,
                tree: tree.path.clone(),
            };
            let (loss, grads) = {
                let mut tape = Tape::new(model.store());
                let step = (|| {
                    let loss = layout.loss(&mut tape, tree)?.expect("tree has targets");
                    let grads = tape.backward(loss)?;
                    Ok::<_, Error>((tape.value(loss).data()[0], grads))
                })();
                match step {
                    Ok(v) => v,
                    Err(Error::NonFinite { .. }) => return Err(diverged()),
                    Err(e) => return Err(e),
                }
            };
            if !loss.is_finite() {
                return Err(diverged());
            }
            total += loss;
            adam.step(model.store_mut(), &grads);
        }
        let mean = total / trees.len() as f64;
        debug!("epoch {epoch}: mean loss {mean:.6}");
        loss_curve.push(mean);
    }
    Ok(TrainOutcome {
        model,
        loss_curve,
        skipped,
    })
}

/// Mean cross-entropy per labeled identifier over `dataset`.
pub fn mean_loss(model: &Model, dataset: &Dataset) -> Result<f64> {
    let (trees, _) = prepare_dataset(model, dataset)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for tree in &trees {
        let mut tape = Tape::new(model.store());
        let loss = model.layout().loss(&mut tape, tree)?.expect("tree has targets");
        total += tape.value(loss).data()[0] * tree.targets.len() as f64;
        count += tree.targets.len();
    }
    if count == 0 {
        return Err(Error::Validation("dataset has no labeled identifiers".into()));
    }
    Ok(total / count as f64)
}

/// Worker pool sized by `IOTYPER_THREADS`, or by rayon's default when unset.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a non-negative integer, got `{v}`")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub evaluation: Evaluation,
    pub loss_curve: Vec<f64>,
}

/// Trains on `train`, evaluates on `test`.
pub fn train_and_evaluate(train_set: &Dataset, test_set: &Dataset, config: &TrainConfig) -> Result<FoldResult> {
    let outcome = train(train_set, config)?;
    let evaluation = evaluate_topk(&outcome.model, test_set)?;
    Ok(FoldResult {
        evaluation,
        loss_curve: outcome.loss_curve,
    })
}

/// k-fold cross-validation; folds run in parallel on the current pool.
pub fn cross_validate(dataset: &Dataset, config: &TrainConfig, k: usize) -> Result<Vec<FoldResult>> {
    let folds = kfold_split(dataset, k, config.seed)?;
    folds
        .par_iter()
        .map(|(train_set, validation)| train_and_evaluate(train_set, validation, config))
        .collect()
}

/// Metrics report: the configuration, per-fold results and their average.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub config: TrainConfig,
    pub folds: Vec<FoldMetrics>,
    pub aggregate: AggregateMetrics,
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldMetrics {
    pub topk: BTreeMap<String, f64>,
    pub loss_curve: Vec<f64>,
    pub labels: usize,
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregateMetrics {
    /// Unweighted mean of the per-fold accuracies.
    pub topk: BTreeMap<String, f64>,
    pub labels: usize,
    pub confusion: Vec<Vec<usize>>,
}

impl MetricsReport {
    pub fn new(config: TrainConfig, folds: &[FoldResult]) -> Self {
        let fold_metrics: Vec<FoldMetrics> = folds
            .iter()
            .map(|f| FoldMetrics {
                topk: f.evaluation.topk_map(&REPORT_KS),
                loss_curve: f.loss_curve.clone(),
                labels: f.evaluation.total(),
                confusion: f.evaluation.confusion().to_vec(),
            })
            .collect();
        let classes = folds.first().map_or(0, |f| f.evaluation.classes());
        let mut pooled = Evaluation::new(classes);
        for f in folds {
            pooled.merge(&f.evaluation);
        }
        let topk = REPORT_KS
            .iter()
            .map(|&k| {
                let mean = if folds.is_empty() {
                    0.0
                } else {
                    folds.iter().map(|f| f.evaluation.topk(k)).sum::<f64>() / folds.len() as f64
                };
                (k.to_string(), mean)
            })
            .collect();
        MetricsReport {
            config,
            folds: fold_metrics,
            aggregate: AggregateMetrics {
                topk,
                labels: pooled.total(),
                confusion: pooled.confusion().to_vec(),
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}
