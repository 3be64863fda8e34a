//! Experiment grid: a dimension sweep under cross-validation, a paired
//! restructuring ablation over max-children, top-k accuracy of the best
//! configurations and the two baselines.
//!
//! Every cell trains an independent model, so cells run in parallel.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use super::eval::{baseline_majority, baseline_random};
use super::{cross_validate, train_and_evaluate, Evaluation, TrainConfig, REPORT_KS};
use crate::ast::Dataset;
use crate::error::Result;
use crate::iornn::Variant;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub variants: Vec<Variant>,
    /// `(d_input, d_hidden)` pairs, cross-validated on the training split.
    pub dims: Vec<(usize, usize)>,
    /// Max-children values for the restructuring ablation.
    pub ks: Vec<usize>,
    pub folds: usize,
    /// Everything not swept: epochs, learning rate, seed, default K.
    pub base: TrainConfig,
}

impl GridSpec {
    /// The dimension grid, the K sweep 5..35 and 4 folds.
    pub fn standard(base: TrainConfig) -> Self {
        GridSpec {
            variants: vec![Variant::ChildSum, Variant::Nary],
            dims: vec![(5, 10), (10, 10), (10, 15), (10, 20)],
            ks: vec![5, 10, 15, 20, 25, 30, 35],
            folds: 4,
            base,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct GridReport {
    /// Mean cross-validated top-1 per dimension pair and variant.
    pub dimensions: Vec<DimensionRow>,
    /// Test top-1 with and without restructuring per K and variant.
    pub restructuring: Vec<RestructuringRow>,
    /// Test top-1..5 of each variant at its best dimensions.
    pub topk: Vec<TopkRow>,
    pub baselines: Option<BaselineRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DimensionRow {
    pub d_input: usize,
    pub d_hidden: usize,
    pub top1: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RestructuringRow {
    pub max_children: usize,
    /// Keyed by variant name.
    pub with_restructuring: BTreeMap<String, f64>,
    pub without_restructuring: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TopkRow {
    pub variant: Variant,
    pub d_input: usize,
    pub d_hidden: usize,
    pub topk: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselineRow {
    pub majority: f64,
    pub random: f64,
    /// Best test top-1 per variant.
    pub models: BTreeMap<String, f64>,
}

enum Job {
    Dims { variant: Variant, d_input: usize, d_hidden: usize },
    Ablation { variant: Variant, k: usize, restructuring: bool },
}

enum Outcome {
    Dims(f64),
    Ablation(f64),
}

fn with_dims(base: &TrainConfig, variant: Variant, d_input: usize, d_hidden: usize) -> TrainConfig {
    TrainConfig {
        variant,
        d_input,
        d_hidden,
        ..base.clone()
    }
}

/// Runs the grid on the current rayon pool. `train_set` feeds the
/// cross-validation and every model evaluated on `test_set`.
pub fn run_experiment_grid(train_set: &Dataset, test_set: &Dataset, spec: &GridSpec) -> Result<GridReport> {
    let mut jobs = Vec::new();
    for &(d_input, d_hidden) in &spec.dims {
        for &variant in &spec.variants {
            jobs.push(Job::Dims { variant, d_input, d_hidden });
        }
    }
    for &k in &spec.ks {
        for &variant in &spec.variants {
            for restructuring in [true, false] {
                jobs.push(Job::Ablation { variant, k, restructuring });
            }
        }
    }

    let outcomes = jobs
        .par_iter()
        .map(|job| -> Result<Outcome> {
            match *job {
                Job::Dims { variant, d_input, d_hidden } => {
                    let config = with_dims(&spec.base, variant, d_input, d_hidden);
                    let folds = cross_validate(train_set, &config, spec.folds)?;
                    let mean = folds.iter().map(|f| f.evaluation.topk(1)).sum::<f64>() / folds.len() as f64;
                    Ok(Outcome::Dims(mean))
                }
                Job::Ablation { variant, k, restructuring } => {
                    // Same seed and shapes in both arms: identical initial parameters.
                    let config = TrainConfig {
                        variant,
                        d_hidden: if spec.base.variant == variant {
                            spec.base.d_hidden
                        } else {
                            variant.default_hidden()
                        },
                        max_children: k,
                        restructuring,
                        ..spec.base.clone()
                    };
                    let result = train_and_evaluate(train_set, test_set, &config)?;
                    Ok(Outcome::Ablation(result.evaluation.topk(1)))
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = GridReport::default();
    let mut best: BTreeMap<Variant, (f64, usize, usize)> = BTreeMap::new();
    for (job, outcome) in jobs.iter().zip(&outcomes) {
        match (job, outcome) {
            (&Job::Dims { variant, d_input, d_hidden }, &Outcome::Dims(acc)) => {
                let row = match report
                    .dimensions
                    .iter_mut()
                    .find(|r| r.d_input == d_input && r.d_hidden == d_hidden)
                {
                    Some(row) => row,
                    None => {
                        report.dimensions.push(DimensionRow {
                            d_input,
                            d_hidden,
                            top1: BTreeMap::new(),
                        });
                        report.dimensions.last_mut().expect("just pushed")
                    }
                };
                row.top1.insert(variant.to_string(), acc);
                let entry = best.entry(variant).or_insert((f64::NEG_INFINITY, d_input, d_hidden));
                if acc > entry.0 {
                    *entry = (acc, d_input, d_hidden);
                }
            }
            (&Job::Ablation { variant, k, restructuring }, &Outcome::Ablation(acc)) => {
                let row = match report.restructuring.iter_mut().find(|r| r.max_children == k) {
                    Some(row) => row,
                    None => {
                        report.restructuring.push(RestructuringRow {
                            max_children: k,
                            with_restructuring: BTreeMap::new(),
                            without_restructuring: BTreeMap::new(),
                        });
                        report.restructuring.last_mut().expect("just pushed")
                    }
                };
                let side = if restructuring {
                    &mut row.with_restructuring
                } else {
                    &mut row.without_restructuring
                };
                side.insert(variant.to_string(), acc);
            }
            _ => unreachable!("outcomes follow their jobs"),
        }
    }

    if !best.is_empty() {
        let finals = best
            .par_iter()
            .map(|(&variant, &(_, d_input, d_hidden))| {
                let config = with_dims(&spec.base, variant, d_input, d_hidden);
                let result = train_and_evaluate(train_set, test_set, &config)?;
                Ok((variant, d_input, d_hidden, result.evaluation))
            })
            .collect::<Result<Vec<(Variant, usize, usize, Evaluation)>>>()?;
        let mut models = BTreeMap::new();
        for (variant, d_input, d_hidden, evaluation) in finals {
            models.insert(variant.to_string(), evaluation.topk(1));
            report.topk.push(TopkRow {
                variant,
                d_input,
                d_hidden,
                topk: evaluation.topk_map(&REPORT_KS),
            });
        }
        report.baselines = Some(BaselineRow {
            majority: baseline_majority(train_set, test_set)?.topk(1),
            random: baseline_random(test_set, spec.base.seed).topk(1),
            models,
        });
    }
    Ok(report)
}

fn pct(x: Option<&f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{:.2}%", v * 100.0))
}

impl GridReport {
    pub fn is_empty(&self) -> bool {
        self.dimensions.is_empty() && self.restructuring.is_empty() && self.topk.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text tables.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if !self.dimensions.is_empty() {
            out.push_str("Cross-validated top-1 by dimensions\n");
            let _ = writeln!(out, "{:<12} {:>10} {:>10}", "(D_i, D_m)", "childsum", "nary");
            for row in &self.dimensions {
                let _ = writeln!(
                    out,
                    "{:<12} {:>10} {:>10}",
                    format!("({}, {})", row.d_input, row.d_hidden),
                    pct(row.top1.get("childsum")),
                    pct(row.top1.get("nary"))
                );
            }
            out.push('\n');
        }
        if let Some(b) = &self.baselines {
            out.push_str("Test top-1 against baselines\n");
            let _ = writeln!(
                out,
                "{:>10} {:>10} {:>10} {:>10}",
                "childsum", "nary", "majority", "random"
            );
            let _ = writeln!(
                out,
                "{:>10} {:>10} {:>10} {:>10}",
                pct(b.models.get("childsum")),
                pct(b.models.get("nary")),
                pct(Some(&b.majority)),
                pct(Some(&b.random))
            );
            out.push('\n');
        }
        if !self.restructuring.is_empty() {
            out.push_str("Test top-1 with (+R) and without (-R) restructuring\n");
            let _ = writeln!(
                out,
                "{:<4} {:>12} {:>12} {:>12} {:>12}",
                "K", "childsum +R", "childsum -R", "nary +R", "nary -R"
            );
            for row in &self.restructuring {
                let _ = writeln!(
                    out,
                    "{:<4} {:>12} {:>12} {:>12} {:>12}",
                    row.max_children,
                    pct(row.with_restructuring.get("childsum")),
                    pct(row.without_restructuring.get("childsum")),
                    pct(row.with_restructuring.get("nary")),
                    pct(row.without_restructuring.get("nary"))
                );
            }
            out.push('\n');
        }
        if !self.topk.is_empty() {
            out.push_str("Test top-k accuracy\n");
            let _ = write!(out, "{:<10}", "variant");
            for k in REPORT_KS {
                let _ = write!(out, " {:>8}", format!("top-{k}"));
            }
            out.push('\n');
            for row in &self.topk {
                let _ = write!(out, "{:<10}", row.variant.to_string());
                for k in REPORT_KS {
                    let _ = write!(out, " {:>8}", pct(row.topk.get(&k.to_string())));
                }
                out.push('\n');
            }
        }
        out
    }
}
