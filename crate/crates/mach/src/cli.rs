//! Command-line surface: plan, train, predict, evaluate, sketch.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/validation error,
//! 3 I/O or format error. Reports are key=value lines for scripting.

use clap::{Parser, Subcommand};
use std::collections::HashMap;
use std::io::Read;
use std::path::PathBuf;

use crate::dataio;
use crate::decoder::{score_all, top_k, Estimator};
use crate::error::{MachError, Result};
use crate::hashing::feature_hash;
use crate::metrics::{
    aggregate, average_precision_at_k, mrr_at_k, ndcg_at_k, precision_at_k, recall_at_k, DcgLog,
    EvalQuery, MapNorm, RankedList,
};
use crate::model::{train_with_log, MachConfig, MachModel, Mode};
use crate::planner::{any_pair_bound, cost_model, reduction_ratio, required_r};
use crate::sketch::CountMinSketch;

#[derive(Parser, Debug)]
#[command(name = "mach", version, about = "Hashed meta-classifiers for large output spaces")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Report required repetitions and costs for a class count.
    Plan {
        #[arg(long)]
        classes: u64,
        /// Single bucket count; omitted means a sweep over powers of two.
        #[arg(long)]
        buckets: Option<u64>,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        /// Input dimension used for the cost model.
        #[arg(long, default_value_t = 1)]
        dim: u64,
        #[arg(long, default_value_t = 0)]
        hidden: u64,
    },
    /// Train a model and write it to disk.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 32)]
        buckets: u64,
        #[arg(long)]
        reps: u64,
        #[arg(long, default_value = "multiclass")]
        mode: String,
        #[arg(long, default_value_t = 0)]
        hidden: usize,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 64)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        threads: Option<usize>,
        /// Hash input features down to this dimension before training.
        #[arg(long)]
        feature_hash_dim: Option<usize>,
        /// Treat labels and feature indices in the file as one-based.
        #[arg(long)]
        one_based: bool,
    },
    /// Rank classes for every sample in a dataset.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        topk: usize,
        #[arg(long, default_value = "unbiased")]
        estimator: String,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        feature_hash_dim: Option<usize>,
        #[arg(long)]
        one_based: bool,
    },
    /// Score ranked predictions against an evaluation file.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        eval: PathBuf,
        /// Comma-separated cutoffs, e.g. 1,5,100.
        #[arg(long, default_value = "5")]
        k: String,
        #[arg(long, default_value = "unbiased")]
        estimator: String,
        /// Normalize average precision by k instead of min(k, |relevant|).
        #[arg(long)]
        map_literal_k: bool,
        /// Use the natural log in DCG discounts.
        #[arg(long)]
        ndcg_natural_log: bool,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        feature_hash_dim: Option<usize>,
        #[arg(long)]
        one_based: bool,
    },
    /// Count-min sketch demo over a whitespace-separated token stream.
    Sketch {
        /// Stream file, or "-" for stdin.
        #[arg(long, default_value = "-")]
        input: String,
        #[arg(long, default_value_t = 256)]
        buckets: u64,
        #[arg(long, default_value_t = 8)]
        reps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Tokens to estimate; every distinct stream token when omitted.
        query: Vec<String>,
    },
}

/// Exit code for an error, per the documented classes.
pub fn exit_code(err: &MachError) -> i32 {
    match err {
        MachError::InvalidConfig(_) | MachError::InvalidArgument(_) => 1,
        MachError::Validation(_) | MachError::Parse { .. } => 2,
        MachError::Format(_) | MachError::Io(_) => 3,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Plan {
            classes,
            buckets,
            delta,
            dim,
            hidden,
        } => cmd_plan(classes, buckets, delta, dim, hidden),
        Command::Train {
            data,
            model,
            buckets,
            reps,
            mode,
            hidden,
            epochs,
            lr,
            batch,
            seed,
            threads,
            feature_hash_dim,
            one_based,
        } => with_pool(threads, || {
            cmd_train(
                &data,
                &model,
                buckets,
                reps,
                &mode,
                hidden,
                epochs,
                lr,
                batch,
                seed,
                feature_hash_dim,
                one_based,
            )
        }),
        Command::Predict {
            model,
            data,
            topk,
            estimator,
            threads,
            feature_hash_dim,
            one_based,
        } => with_pool(threads, || {
            cmd_predict(&model, &data, topk, &estimator, feature_hash_dim, one_based)
        }),
        Command::Evaluate {
            model,
            data,
            eval,
            k,
            estimator,
            map_literal_k,
            ndcg_natural_log,
            threads,
            feature_hash_dim,
            one_based,
        } => with_pool(threads, || {
            cmd_evaluate(
                &model,
                &data,
                &eval,
                &k,
                &estimator,
                map_literal_k,
                ndcg_natural_log,
                feature_hash_dim,
                one_based,
            )
        }),
        Command::Sketch {
            input,
            buckets,
            reps,
            seed,
            query,
        } => cmd_sketch(&input, buckets, reps, seed, &query),
    }
}

fn with_pool<T>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T>
where
    T: Send,
{
    match threads {
        None => f(),
        Some(n) => {
            if n < 1 {
                return Err(MachError::InvalidArgument("--threads must be positive".into()));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| MachError::InvalidConfig(e.to_string()))?;
            pool.install(f)
        }
    }
}

fn cmd_plan(classes: u64, buckets: Option<u64>, delta: f64, dim: u64, hidden: u64) -> Result<()> {
    if classes < 2 {
        return Err(MachError::InvalidArgument("--classes must be at least 2".into()));
    }
    let sweep: Vec<u64> = match buckets {
        Some(b) => vec![b],
        None => (1..=16).map(|e| 1u64 << e).collect(),
    };
    println!("classes={classes} delta={delta} dim={dim} hidden={hidden}");
    for b in sweep {
        let r = required_r(classes, b, delta)?;
        let bound = any_pair_bound(classes, b, r)?;
        let cost = cost_model(classes, b, r as u64, dim, hidden);
        let ratio = reduction_ratio(classes, b, r as u64);
        println!(
            "buckets={b} required_r={r} any_pair_bound={bound:.6e} parameters={} model_bytes={} inference_multiplications={} last_layer_reduction={ratio:.2}",
            cost.parameters, cost.model_bytes, cost.inference_multiplications
        );
    }
    Ok(())
}

fn load_features(
    path: &PathBuf,
    expect_dim: Option<usize>,
    feature_hash_dim: Option<usize>,
    hash_seed: u64,
    one_based: bool,
) -> Result<dataio::Dataset> {
    let mut dataset = dataio::load_dataset(path, None, one_based)?;
    if let Some(target) = feature_hash_dim {
        let hashed: Result<Vec<_>> = dataset
            .samples
            .into_iter()
            .map(|mut s| {
                s.features = feature_hash(&s.features, target, hash_seed)?;
                Ok(s)
            })
            .collect();
        dataset.samples = hashed?;
        dataset.header.num_features = target;
    }
    if let Some(d) = expect_dim {
        if dataset.header.num_features != d {
            return Err(MachError::Validation(format!(
                "model expects input dimension {d} but data provides {} \
                 (use --feature-hash-dim to match)",
                dataset.header.num_features
            )));
        }
    }
    Ok(dataset)
}

// salt for deriving the feature-hash seed from the master seed
const FEATURE_HASH_SALT: u64 = 0xfea7;

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    data_path: &PathBuf,
    model_path: &PathBuf,
    buckets: u64,
    reps: u64,
    mode: &str,
    hidden: usize,
    epochs: usize,
    lr: f64,
    batch: usize,
    seed: u64,
    feature_hash_dim: Option<usize>,
    one_based: bool,
) -> Result<()> {
    let mode: Mode = mode.parse()?;
    let dataset = load_features(
        data_path,
        None,
        feature_hash_dim,
        crate::hashing::mix_seed(seed, FEATURE_HASH_SALT),
        one_based,
    )?;
    let config = MachConfig {
        num_classes: dataset.header.num_labels as u64,
        buckets,
        reps,
        mode,
        input_dim: dataset.header.num_features,
        hidden_units: hidden,
        master_seed: seed,
        epochs,
        learning_rate: lr,
        batch_size: batch,
    };
    let (model, logs) = train_with_log(&dataset.samples, &config)?;
    for (rep, losses) in logs.iter().enumerate() {
        for (epoch, loss) in losses.iter().enumerate() {
            println!("rep={rep} epoch={} loss={loss:.6}", epoch + 1);
        }
    }
    dataio::save_model(&model, model_path)?;
    println!(
        "model={} classes={} buckets={} reps={} parameters={}",
        model_path.display(),
        config.num_classes,
        config.buckets,
        config.reps,
        model.param_count()
    );
    Ok(())
}

fn load_model_and_data(
    model_path: &PathBuf,
    data_path: &PathBuf,
    feature_hash_dim: Option<usize>,
    one_based: bool,
) -> Result<(MachModel, dataio::Dataset)> {
    let model = dataio::load_model(model_path)?;
    let dataset = load_features(
        data_path,
        Some(model.config().input_dim),
        feature_hash_dim,
        crate::hashing::mix_seed(model.config().master_seed, FEATURE_HASH_SALT),
        one_based,
    )?;
    Ok((model, dataset))
}

fn cmd_predict(
    model_path: &PathBuf,
    data_path: &PathBuf,
    topk: usize,
    estimator: &str,
    feature_hash_dim: Option<usize>,
    one_based: bool,
) -> Result<()> {
    let estimator: Estimator = estimator.parse()?;
    let (model, dataset) = load_model_and_data(model_path, data_path, feature_hash_dim, one_based)?;
    let k = model.config().num_classes as usize;
    if topk < 1 || topk > k {
        return Err(MachError::InvalidArgument(format!(
            "--topk must be in [1, {k}], got {topk}"
        )));
    }
    use rayon::prelude::*;
    let lines: Result<Vec<String>> = dataset
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let scores = score_all(&model, &s.features, estimator)?;
            let top = top_k(&scores, topk)?;
            let cells: Vec<String> = top
                .iter()
                .map(|(c, s)| format!("{c}:{s:.6}"))
                .collect();
            Ok(format!("{i}: {}", cells.join(",")))
        })
        .collect();
    for line in lines? {
        println!("{line}");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    model_path: &PathBuf,
    data_path: &PathBuf,
    eval_path: &PathBuf,
    k_list: &str,
    estimator: &str,
    map_literal_k: bool,
    ndcg_natural_log: bool,
    feature_hash_dim: Option<usize>,
    one_based: bool,
) -> Result<()> {
    let estimator: Estimator = estimator.parse()?;
    let ks: Vec<usize> = k_list
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .ok()
                .filter(|&k| k >= 1)
                .ok_or_else(|| MachError::InvalidArgument(format!("bad cutoff '{t}' in --k")))
        })
        .collect::<Result<_>>()?;
    let (model, dataset) = load_model_and_data(model_path, data_path, feature_hash_dim, one_based)?;
    let queries = dataio::load_eval_file(eval_path)?;
    if queries.len() != dataset.samples.len() {
        return Err(MachError::Validation(format!(
            "eval file has {} queries but data file has {} samples; line i of the \
             eval file pairs with sample i",
            queries.len(),
            dataset.samples.len()
        )));
    }
    let num_classes = model.config().num_classes as u64;
    for q in &queries {
        if let Some(&bad) = q
            .relevant
            .iter()
            .chain(q.candidates.iter().flatten())
            .find(|&&id| id as u64 >= num_classes)
        {
            return Err(MachError::Validation(format!(
                "query {}: item id {bad} outside the model's {num_classes} classes",
                q.query_id
            )));
        }
    }
    let max_k = ks.iter().copied().max().unwrap();
    let map_norm = if map_literal_k {
        MapNorm::LiteralK
    } else {
        MapNorm::Standard
    };
    let dcg_log = if ndcg_natural_log {
        DcgLog::Natural
    } else {
        DcgLog::Base2
    };

    use rayon::prelude::*;
    let rankings: Result<Vec<RankedList>> = queries
        .par_iter()
        .zip(&dataset.samples)
        .map(|(q, s)| {
            let scores = score_all(&model, &s.features, estimator)?;
            ranked_for_query(&scores, q, max_k)
        })
        .collect();
    let rankings = rankings?;

    println!("queries={}", queries.len());
    for &k in &ks {
        report_metric(&rankings, &queries, k, "recall", |r, q| recall_at_k(r, q, k))?;
        report_metric(&rankings, &queries, k, "precision", |r, q| {
            precision_at_k(r, q, k)
        })?;
        report_metric(&rankings, &queries, k, "map", |r, q| {
            average_precision_at_k(r, q, k, map_norm)
        })?;
        let mrr: Result<Vec<(f64, f64)>> = rankings
            .iter()
            .zip(&queries)
            .map(|(r, q)| Ok((mrr_at_k(r, q, k, false)?, q.weight)))
            .collect();
        let mrr = mrr?;
        println!(
            "metric=mrr@{k} weighted={:.6} unweighted={:.6}",
            aggregate(&mrr, true)?,
            aggregate(&mrr, false)?
        );
        report_metric(&rankings, &queries, k, "ndcg", |r, q| {
            ndcg_at_k(r, q, k, dcg_log)
        })?;
    }
    Ok(())
}

fn ranked_for_query(scores: &[f64], q: &EvalQuery, max_k: usize) -> Result<RankedList> {
    match &q.candidates {
        None => {
            let top = top_k(scores, max_k.min(scores.len()))?;
            RankedList::new(top.into_iter().map(|(c, _)| c).collect())
        }
        Some(cands) => {
            let mut ids: Vec<u32> = cands.iter().copied().collect();
            ids.sort_by(|&a, &b| {
                scores[b as usize]
                    .total_cmp(&scores[a as usize])
                    .then(a.cmp(&b))
            });
            ids.truncate(max_k);
            RankedList::new(ids)
        }
    }
}

fn report_metric(
    rankings: &[RankedList],
    queries: &[EvalQuery],
    k: usize,
    name: &str,
    f: impl Fn(&RankedList, &EvalQuery) -> f64,
) -> Result<()> {
    let per_query: Vec<(f64, f64)> = rankings
        .iter()
        .zip(queries)
        .map(|(r, q)| (f(r, q), q.weight))
        .collect();
    println!(
        "metric={name}@{k} weighted={:.6} unweighted={:.6}",
        aggregate(&per_query, true)?,
        aggregate(&per_query, false)?
    );
    Ok(())
}

fn cmd_sketch(input: &str, buckets: u64, reps: u64, seed: u64, query: &[String]) -> Result<()> {
    let text = if input == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s)?;
        s
    } else {
        std::fs::read_to_string(input)?
    };
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(MachError::Validation("token stream is empty".into()));
    }
    let mut ids: HashMap<&str, u64> = HashMap::new();
    let mut order: Vec<&str> = Vec::new();
    for &t in &tokens {
        ids.entry(t).or_insert_with(|| {
            order.push(t);
            (order.len() - 1) as u64
        });
    }
    let mut sketch = CountMinSketch::new(buckets, reps, seed, order.len() as u64)?;
    for &t in &tokens {
        sketch.update(ids[t])?;
    }
    println!(
        "tokens={} distinct={} buckets={buckets} reps={reps}",
        sketch.total(),
        order.len()
    );
    let queried: Vec<String> = if query.is_empty() {
        order.iter().map(|s| s.to_string()).collect()
    } else {
        query.to_vec()
    };
    for q in queried {
        let est = match ids.get(q.as_str()) {
            Some(&id) => sketch.estimate(id)?,
            None => 0,
        };
        println!("token={q} estimate={est}");
    }
    Ok(())
}
