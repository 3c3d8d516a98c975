use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use co2_core::dataset::{
    apply_preprocess, densify_augment, fit_preprocess, holdout_split, parse_libsvm, parse_libsvm_line,
    Dataset, PreprocessMode, SparseDataset,
};
use co2_core::forest::{grid_search, train_forest, Forest, GridSpec, Sampling};
use co2_core::metrics::{error_rate, jaccard_class_average, write_metrics_csv};
use co2_core::model::ModelFile;
use co2_core::seeds;
use co2_core::tree::{depth_curve, grow_tree_traced, GrowConfig, StumpTrainer};

#[derive(Parser)]
#[command(name = "co2forest", version, about = "Oblique decision forests trained with CO2 stumps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a forest and write it to a model file.
    Train(TrainArgs),
    /// Report error rate and class-average Jaccard score on labelled data.
    Evaluate(EvaluateArgs),
    /// Validate q, then (nu, eta), on a held-out split.
    GridSearch(GridArgs),
    /// Print one prediction per input line.
    Predict(PredictArgs),
    /// Training and validation error of single trees as a function of depth.
    DepthCurve(DepthArgs),
}

#[derive(Args, Clone)]
struct TreeArgs {
    /// Stump trainer: co2, axis or oc1.
    #[arg(long, default_value = "co2")]
    trainer: StumpTrainer,
    /// Squared-norm budget of each split vector.
    #[arg(long, default_value_t = 10.0)]
    nu: f64,
    /// Learning rate.
    #[arg(long, default_value_t = 0.01)]
    eta: f64,
    /// Candidate features per axis-aligned search [default: round(sqrt(p))].
    #[arg(long)]
    q: Option<usize>,
    /// Maximum depth [default: grow until leaves are pure].
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    max_depth: Option<u64>,
    #[arg(long, default_value_t = 2)]
    min_samples_split: usize,
    /// Additive smoothing of leaf class counts.
    #[arg(long, default_value_t = 1.0)]
    leaf_smoothing: f64,
    /// Minibatch epochs per CCCP round.
    #[arg(long, default_value_t = 5)]
    tau: usize,
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// Feature scaling: zscore, minmax01 or none.
    #[arg(long, default_value = "zscore")]
    preprocess: PreprocessMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads [default: all cores].
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

impl TreeArgs {
    fn grow_config(&self, p_raw: usize) -> GrowConfig {
        let mut cfg = GrowConfig {
            trainer: self.trainer,
            max_depth: self.max_depth.map(|d| d as usize),
            min_samples_split: self.min_samples_split,
            leaf_smoothing: self.leaf_smoothing,
            q: self.q.unwrap_or_else(|| default_q(p_raw)),
            ..GrowConfig::default()
        };
        cfg.co2.nu = self.nu;
        cfg.co2.eta = self.eta;
        cfg.co2.tau = self.tau;
        cfg.co2.batch_size = self.batch_size;
        cfg.co2.momentum = self.momentum;
        cfg
    }
}

fn default_q(p_raw: usize) -> usize {
    ((p_raw as f64).sqrt().round() as usize).max(1)
}

#[derive(Args)]
struct TrainArgs {
    /// Training data in LIBSVM format.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model_out: PathBuf,
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..))]
    trees: u64,
    /// Draw this many examples per class for every tree instead of bootstrapping.
    #[arg(long)]
    rebalance: Option<usize>,
    /// Write the CCCP history of every node of the first tree as CSV.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[command(flatten)]
    tree: TreeArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Write test error of every ensemble prefix as CSV (trees,error).
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Write metric,value rows as CSV.
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    /// Write the confusion matrix as CSV.
    #[arg(long)]
    confusion_out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    data: PathBuf,
    /// Separate validation file; otherwise a random fraction of --data is held out.
    #[arg(long)]
    val_data: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 1.0, 4.0, 10.0, 43.0, 100.0])]
    nu_set: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.03, 0.01, 0.003])]
    eta_set: Vec<f64>,
    /// Candidate q values are round(p^e) for these exponents.
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.6, 0.7, 0.8, 0.9])]
    q_exponents: Vec<f64>,
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..))]
    validation_trees: u64,
    #[arg(long)]
    table_out: Option<PathBuf>,
    #[command(flatten)]
    tree: TreeArgs,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// LIBSVM input; `-` reads stdin. Labels on the lines are ignored.
    #[arg(long, default_value = "-")]
    data: String,
    /// Print class probabilities instead of labels.
    #[arg(long)]
    proba: bool,
}

#[derive(Args)]
struct DepthArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    val_data: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    /// Norm budgets to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 10.0, 100.0])]
    nu_set: Vec<f64>,
    /// Deepest level reported.
    #[arg(long, default_value_t = 20)]
    depth: usize,
    /// Output CSV (nu,depth,train_error,val_error); stdout if omitted.
    #[arg(long)]
    curve: Option<PathBuf>,
    #[command(flatten)]
    tree: TreeArgs,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::GridSearch(a) => cmd_grid_search(a),
        Command::Predict(a) => cmd_predict(a),
        Command::DepthCurve(a) => cmd_depth_curve(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

/// Writes one line of results to stdout; a closed pipe surfaces as an error
/// instead of a panic.
fn say(line: std::fmt::Arguments) -> Result<()> {
    writeln!(io::stdout().lock(), "{line}")?;
    Ok(())
}

fn read_sparse(path: &Path, forest: Option<&Forest>) -> Result<SparseDataset> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    parse_libsvm(BufReader::new(f), forest.map(|f| &f.labels))
        .with_context(|| format!("cannot parse {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Loads training data and, optionally, validation data in the same space.
/// Preprocessing is fitted on the training part only.
fn load_train_val(
    data: &Path,
    val_data: Option<&Path>,
    val_fraction: f64,
    mode: PreprocessMode,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let sparse = read_sparse(data, None)?;
    let (train_raw, val_raw) = match val_data {
        Some(v) => {
            let f = File::open(v).with_context(|| format!("cannot open {}", v.display()))?;
            let val = parse_libsvm(BufReader::new(f), Some(&sparse.labels))?;
            let p_raw = sparse.p_raw.max(val.p_raw);
            (
                co2_core::dataset::densify_augment_to(&sparse, p_raw)?,
                co2_core::dataset::densify_augment_to(&val, p_raw)?,
            )
        }
        None => {
            let full = densify_augment(&sparse)?;
            let mut rng = seeds::stream(seed, u64::MAX - 1);
            let (tr, va) = holdout_split(full.n(), val_fraction, &mut rng)?;
            (full.subset(&tr)?, full.subset(&va)?)
        }
    };
    let stats = fit_preprocess(&train_raw, mode);
    Ok((apply_preprocess(&train_raw, &stats)?, apply_preprocess(&val_raw, &stats)?))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let sparse = read_sparse(&a.data, None)?;
    let raw = densify_augment(&sparse)?;
    let d = apply_preprocess(&raw, &fit_preprocess(&raw, a.tree.preprocess))?;
    let cfg = a.tree.grow_config(d.p_raw());
    let sampling = match a.rebalance {
        Some(per_class) => Sampling::Rebalance { per_class },
        None => Sampling::Bootstrap,
    };
    let forest = train_forest(&d, a.trees as usize, &cfg, a.tree.seed, a.tree.threads, sampling)?;

    if let Some(path) = &a.trace_out {
        write_first_tree_trace(&d, &forest, sampling, path)?;
    }
    let err = error_rate(&forest.confusion(&d)?)?;
    ModelFile::new(forest)
        .save(&a.model_out)
        .with_context(|| format!("cannot write {}", a.model_out.display()))?;
    say(format_args!("train_error {err:.4}"))?;
    Ok(())
}

/// Regrows tree 0 with tracing on; the result is identical to the stored tree.
fn write_first_tree_trace(d: &Dataset, forest: &Forest, sampling: Sampling, path: &Path) -> Result<()> {
    let tree_seed = seeds::derive(forest.seed, 0);
    let mut rng = seeds::stream(tree_seed, seeds::BOOTSTRAP_STREAM);
    let sample = match sampling {
        Sampling::Bootstrap => co2_core::dataset::bootstrap_sample(d.n(), &mut rng)?,
        Sampling::Rebalance { per_class } => {
            co2_core::dataset::rebalance_indices(d, &d.indices(), per_class, &mut rng)?.0
        }
    };
    let (tree, traces) = grow_tree_traced(d, &sample, &forest.config, tree_seed)?;
    debug_assert_eq!(&tree, &forest.trees[0]);
    let mut out = create(path)?;
    writeln!(out, "node,round,surrogate,empirical,norm,eta,fallback")?;
    for t in &traces {
        for r in &t.trace.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                t.node, r.round, r.surrogate, r.empirical, r.norm, r.eta, t.used_fallback
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

fn load_model(path: &Path) -> Result<Forest> {
    Ok(ModelFile::load(path)
        .with_context(|| format!("cannot load model {}", path.display()))?
        .forest)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let forest = load_model(&a.model)?;
    let sparse = read_sparse(&a.data, Some(&forest))?;
    if sparse.p_raw > forest.p_raw {
        bail!(
            "data has {} features but the model expects {}",
            sparse.p_raw,
            forest.p_raw
        );
    }
    let d = forest.prepare(&sparse)?;
    let cm = forest.confusion(&d)?;
    let err = error_rate(&cm)?;
    let jac = jaccard_class_average(&cm)?;
    say(format_args!("error_rate {err:.4}"))?;
    say(format_args!("jaccard {jac:.4}"))?;
    if let Some(path) = &a.metrics_out {
        let mut out = create(path)?;
        write_metrics_csv(&mut out, &[("error_rate", err), ("jaccard", jac)])?;
        out.flush()?;
    }
    if let Some(path) = &a.confusion_out {
        let mut out = create(path)?;
        cm.write_csv(&mut out)?;
        out.flush()?;
    }
    if let Some(path) = &a.curve {
        let mut out = create(path)?;
        writeln!(out, "trees,error")?;
        for (m, e) in forest.prefix_error_curve(&d)?.iter().enumerate() {
            writeln!(out, "{},{e}", m + 1)?;
        }
        out.flush()?;
    }
    Ok(())
}

fn cmd_grid_search(a: GridArgs) -> Result<()> {
    let (train, val) = load_train_val(
        &a.data,
        a.val_data.as_deref(),
        a.val_fraction,
        a.tree.preprocess,
        a.tree.seed,
    )?;
    let grid = GridSpec {
        nu_set: a.nu_set,
        eta_set: a.eta_set,
        q_exponents: a.q_exponents,
        validation_trees: a.validation_trees as usize,
    };
    let template = a.tree.grow_config(train.p_raw());
    let r = grid_search(&train, &val, &grid, &template, a.tree.seed, a.tree.threads)?;
    for (q, e) in &r.q_table {
        eprintln!("q {q} rf_val_error {e:.4}");
    }
    say(format_args!("nu {} eta {} q {}", r.nu, r.eta, r.q))?;
    if let Some(path) = &a.table_out {
        let mut out = create(path)?;
        r.write_csv(&mut out)?;
        out.flush()?;
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let forest = load_model(&a.model)?;
    let input: Box<dyn BufRead> = if a.data == "-" {
        Box::new(io::stdin().lock())
    } else {
        let f = File::open(&a.data).with_context(|| format!("cannot open {}", a.data))?;
        Box::new(BufReader::new(f))
    };
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let mut row = vec![0.0; forest.p_raw];
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let Some((_, features)) = parse_libsvm_line(&line, n + 1)? else {
            continue;
        };
        row.iter_mut().for_each(|v| *v = 0.0);
        for (i, v) in features {
            if i > forest.p_raw {
                bail!("line {}: feature {i} exceeds model dimension {}", n + 1, forest.p_raw);
            }
            row[i - 1] = v;
        }
        let proba = forest.predict_proba(&row)?;
        if a.proba {
            let cells: Vec<String> = proba.iter().map(f64::to_string).collect();
            writeln!(out, "{}", cells.join(" "))?;
        } else {
            let class = co2_core::argmax(&proba);
            writeln!(out, "{}", forest.labels.raw_label(class))?;
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_depth_curve(a: DepthArgs) -> Result<()> {
    if a.depth == 0 {
        bail!("--depth must be at least 1");
    }
    let (train, val) = load_train_val(
        &a.data,
        a.val_data.as_deref(),
        a.val_fraction,
        a.tree.preprocess,
        a.tree.seed,
    )?;
    let base = a.tree.grow_config(train.p_raw());
    let mut rows = Vec::new();
    for &nu in &a.nu_set {
        let mut cfg = base.clone();
        cfg.co2.nu = nu;
        for pt in depth_curve(&train, &val, &cfg, a.depth, a.tree.seed)? {
            rows.push(format!("{nu},{},{},{}", pt.depth, pt.train_error, pt.val_error));
        }
    }
    let mut out: Box<dyn Write> = match &a.curve {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    writeln!(out, "nu,depth,train_error,val_error")?;
    for r in rows {
        writeln!(out, "{r}")?;
    }
    out.flush()?;
    Ok(())
}
