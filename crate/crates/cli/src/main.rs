use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::json;

use iotyper::ast::{parse_dataset, parse_node, Dataset};
use iotyper::iornn::{Model, Variant};
use iotyper::training::{
    cross_validate, evaluate_topk, run_experiment_grid, train, train_test_split, worker_pool, FoldResult, GridSpec,
    MetricsReport, SplitFile, TrainConfig, REPORT_KS,
};
use iotyper::transforms::{add_sink_nodes, resolve_scopes, restructure};
use iotyper::Error;

/// Identifier type prediction over Python ASTs with inside-outside tree networks.
#[derive(Parser)]
#[command(name = "iotyper", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a labeled dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Model file to write; metrics go next to it as `<stem>.metrics.json`.
        #[arg(long)]
        out: PathBuf,
        /// Cross-validate with this many folds before the final fit.
        #[arg(long)]
        folds: Option<usize>,
        /// Train on the `train` paths and report metrics on the `test` paths.
        #[arg(long)]
        split_file: Option<PathBuf>,
        #[command(flatten)]
        hyper: Hyper,
    },
    /// Print ranked type predictions for every identifier of an AST as JSON lines.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        ast: PathBuf,
        #[arg(long, default_value_t = 3)]
        top_k: usize,
    },
    /// Top-k accuracy of a model, or the full experiment grid without `--model`.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Report top-1 through top-k (default 5).
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long, default_value_t = 4)]
        folds: usize,
        #[arg(long)]
        split_file: Option<PathBuf>,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        hyper: Hyper,
    },
    /// Dump the restructured, sink-augmented tree.
    Transform {
        #[arg(long)]
        ast: PathBuf,
        #[arg(long, default_value_t = 20)]
        max_children: usize,
        #[arg(long)]
        no_restructuring: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Hyper {
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    #[arg(long)]
    d_input: Option<usize>,
    /// Defaults to 15 for childsum and 10 for nary.
    #[arg(long)]
    d_hidden: Option<usize>,
    #[arg(long)]
    max_children: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_restructuring: bool,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse::<Variant>().map_err(|e| e.to_string())
}

impl Hyper {
    fn config(&self) -> TrainConfig {
        let variant = self.variant.unwrap_or(Variant::ChildSum);
        let mut c = TrainConfig::new(variant);
        c.d_input = self.d_input.unwrap_or(c.d_input);
        c.d_hidden = self.d_hidden.unwrap_or(c.d_hidden);
        c.max_children = self.max_children.unwrap_or(c.max_children);
        c.epochs = self.epochs.unwrap_or(c.epochs);
        c.learning_rate = self.lr.unwrap_or(c.learning_rate);
        c.l2 = self.l2.unwrap_or(c.l2);
        c.seed = self.seed.unwrap_or(c.seed);
        c.restructuring = !self.no_restructuring;
        c
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Error> {
    fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn load_dataset(path: &Path) -> Result<Dataset, Error> {
    parse_dataset(&read(path)?)
}

fn load_split(path: Option<&PathBuf>, dataset: &Dataset, seed: u64) -> Result<(Dataset, Dataset), Error> {
    match path {
        Some(p) => SplitFile::parse(&read(p)?)?.apply(dataset),
        None => Ok(train_test_split(dataset, seed)),
    }
}

fn metrics_path(out: &Path) -> PathBuf {
    out.with_extension("metrics.json")
}

fn cmd_train(
    dataset: &Path,
    out: &Path,
    folds: Option<usize>,
    split_file: Option<&PathBuf>,
    config: TrainConfig,
) -> Result<(), Error> {
    let data = load_dataset(dataset)?;
    config.validate()?;
    let (fit_on, held_out) = match split_file {
        Some(p) => load_split(Some(p), &data, config.seed)?,
        None => (data.clone(), data),
    };
    let pool = worker_pool()?;
    let cv = match folds {
        Some(k) => Some(pool.install(|| cross_validate(&fit_on, &config, k))?),
        None => None,
    };
    let outcome = train(&fit_on, &config)?;
    // Without folds the report covers the final model on the test split, or
    // on the training data itself when there is no split.
    let results = match cv {
        Some(r) => r,
        None => vec![FoldResult {
            evaluation: evaluate_topk(&outcome.model, &held_out)?,
            loss_curve: outcome.loss_curve.clone(),
        }],
    };
    write(out, &outcome.model.to_json())?;
    let metrics = metrics_path(out);
    write(&metrics, &MetricsReport::new(config, &results).to_json())?;
    info!("wrote {} and {}", out.display(), metrics.display());
    Ok(())
}

fn cmd_predict(model: &Path, ast: &Path, top_k: usize) -> Result<(), Error> {
    let model = Model::from_json(&read(model)?)?;
    let root = parse_node(&read(ast)?)?;
    let classes = model.classes();
    let k = top_k.clamp(1, classes.len());
    for p in model.predict(&root)? {
        let ranked: Vec<_> = p.ranking[..k]
            .iter()
            .map(|&c| json!({"type": classes.name(c), "prob": p.probabilities[c]}))
            .collect();
        println!("{}", json!({"scope": p.scope, "name": p.name, "predictions": ranked}));
    }
    Ok(())
}

fn cmd_evaluate(
    dataset: &Path,
    model: Option<&PathBuf>,
    top_k: Option<usize>,
    folds: usize,
    split_file: Option<&PathBuf>,
    out: Option<&PathBuf>,
    hyper: &Hyper,
) -> Result<(), Error> {
    let data = load_dataset(dataset)?;
    let report = match model {
        Some(path) => {
            let model = Model::from_json(&read(path)?)?;
            let evaluation = evaluate_topk(&model, &data)?;
            let ks: Vec<usize> = match top_k {
                Some(k) => (1..=k.clamp(1, model.classes().len())).collect(),
                None => REPORT_KS.to_vec(),
            };
            let report = json!({
                "labels": evaluation.total(),
                "topk": evaluation.topk_map(&ks),
                "confusion": evaluation.confusion(),
            });
            for k in &ks {
                println!("top-{k}: {:.2}%", evaluation.topk(*k) * 100.0);
            }
            serde_json::to_string_pretty(&report).expect("report serializes")
        }
        None => {
            let base = hyper.config();
            base.validate()?;
            let (train_set, test_set) = load_split(split_file, &data, base.seed)?;
            let mut spec = GridSpec::standard(base);
            spec.folds = folds;
            if let Some(v) = hyper.variant {
                spec.variants = vec![v];
            }
            let report = worker_pool()?.install(|| run_experiment_grid(&train_set, &test_set, &spec))?;
            print!("{}", report.to_text());
            report.to_json()
        }
    };
    if let Some(out) = out {
        write(out, &report)?;
    }
    Ok(())
}

fn cmd_transform(ast: &Path, max_children: usize, no_restructuring: bool, out: Option<&PathBuf>) -> Result<(), Error> {
    let root = parse_node(&read(ast)?)?;
    let tree = if no_restructuring {
        root
    } else {
        restructure(&root, max_children)?
    };
    let scopes = resolve_scopes(&tree)?;
    let text = add_sink_nodes(&tree, &scopes).to_json_pretty();
    match out {
        Some(path) => write(path, &text),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Divergence { .. } => 2,
        Error::VocabMismatch { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train {
            dataset,
            out,
            folds,
            split_file,
            hyper,
        } => cmd_train(dataset, out, *folds, split_file.as_ref(), hyper.config()),
        Command::Predict { model, ast, top_k } => cmd_predict(model, ast, *top_k),
        Command::Evaluate {
            dataset,
            model,
            top_k,
            folds,
            split_file,
            out,
            hyper,
        } => cmd_evaluate(dataset, model.as_ref(), *top_k, *folds, split_file.as_ref(), out.as_ref(), hyper),
        Command::Transform {
            ast,
            max_children,
            no_restructuring,
            out,
        } => cmd_transform(ast, *max_children, *no_restructuring, out.as_ref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
