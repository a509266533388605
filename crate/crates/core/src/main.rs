use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use wgrank::checkpoint;
use wgrank::config::{Settings, ENV_PREFIX};
use wgrank::corpus::{default_stopwords, read_corpus_jsonl, read_queries_tsv, read_stopwords, Query};
use wgrank::embed::{load_embeddings, EmbeddingTable};
use wgrank::eval::{evaluate, kfold_split, read_run, EvalOptions, QRels};
use wgrank::gradcheck::{grad_check, random_instance, standard_specs};
use wgrank::pipeline::{
    ablate, ablation_grid, baseline_run, cross_validate, format_ablation_table, prepare_queries, rerank_with,
    Collection, Experiment, IndexOptions, EMBEDDINGS_FILE,
};
use wgrank::retrieve::{Bm25Params, RunList, Scorer, DEFAULT_MU};
use wgrank::train::{train, Validation};
use wgrank::ErrorKind;

const RUN_TAG: &str = "wgrank";

/// Graph-of-word relevance matching: index a collection, train the
/// re-ranker, and evaluate TREC runs.
///
/// Every setting can come from a `key = value` config file, a `WGRANK_<KEY>`
/// environment variable or a flag, in increasing order of precedence.
#[derive(Parser)]
#[command(name = "wgrank", version)]
struct Cli {
    /// Config file with `key = value` lines (also WGRANK_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Set any config key.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(flatten)]
    flags: Flags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Flags {
    #[arg(long, global = true)]
    corpus: Option<String>,
    #[arg(long, global = true)]
    queries: Option<String>,
    #[arg(long, global = true)]
    qrels: Option<String>,
    #[arg(long, global = true)]
    embeddings: Option<String>,
    #[arg(long, global = true)]
    index: Option<String>,
    #[arg(long, global = true)]
    checkpoint: Option<String>,
    /// Run file to evaluate.
    #[arg(long, global = true)]
    run: Option<String>,
    #[arg(short, long, global = true)]
    output: Option<String>,
    /// Training log path (default: checkpoint path + `.log`).
    #[arg(long, global = true)]
    log: Option<String>,
    #[arg(long, global = true)]
    stopwords: Option<String>,
    #[arg(long, global = true)]
    window: Option<String>,
    /// Adjacency mode: graph, sequence or zero.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Propagation steps.
    #[arg(long, global = true)]
    layers: Option<String>,
    #[arg(long, global = true)]
    k: Option<String>,
    #[arg(long, global = true)]
    lr: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<String>,
    #[arg(long, global = true)]
    batch: Option<String>,
    #[arg(long, global = true)]
    candidates: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Only this cross-validation fold.
    #[arg(long, global = true)]
    fold: Option<String>,
    /// neural, bm25 or ql.
    #[arg(long, global = true)]
    scorer: Option<String>,
}

impl Flags {
    fn pairs(&self) -> Vec<(&'static str, &str)> {
        let all = [
            ("corpus", &self.corpus),
            ("queries", &self.queries),
            ("qrels", &self.qrels),
            ("embeddings", &self.embeddings),
            ("index", &self.index),
            ("checkpoint", &self.checkpoint),
            ("run", &self.run),
            ("output", &self.output),
            ("log", &self.log),
            ("stopwords", &self.stopwords),
            ("window", &self.window),
            ("mode", &self.mode),
            ("layers", &self.layers),
            ("k", &self.k),
            ("lr", &self.lr),
            ("epochs", &self.epochs),
            ("batch", &self.batch),
            ("candidates", &self.candidates),
            ("seed", &self.seed),
            ("fold", &self.fold),
            ("scorer", &self.scorer),
        ];
        all.into_iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
            .collect()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build the vocabulary, encoded documents and postings.
    Index,
    /// Train a model and write a checkpoint plus per-epoch log.
    Train,
    /// Re-score the BM25 candidate pool of every query and write a TREC run.
    Rerank,
    /// Score a run against qrels and print a JSON report.
    Eval,
    /// Compare adjacency modes and propagation depths.
    Ablate,
    /// Check analytic gradients against finite differences.
    Gradcheck,
}

fn settings(cli: &Cli) -> Result<Settings> {
    let mut s = Settings::default();
    let config = cli
        .config
        .clone()
        .or_else(|| std::env::var_os(format!("{ENV_PREFIX}CONFIG")).map(PathBuf::from));
    if let Some(path) = config {
        let text = std::fs::read_to_string(&path).map_err(|e| wgrank::Error::io(&path, e))?;
        s.apply_file(&text, &path.display().to_string())?;
    }
    s.apply_env(std::env::vars())?;
    for (k, v) in cli.flags.pairs() {
        s.set(k, v)?;
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| wgrank::Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        s.set(k, v)?;
    }
    for w in s.grid_warnings()? {
        warn!("{w}");
    }
    Ok(s)
}

fn output(s: &Settings) -> Result<Box<dyn Write>> {
    Ok(match s.path("output") {
        Some(p) => Box::new(BufWriter::new(File::create(&p).map_err(|e| wgrank::Error::io(&p, e))?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn load_collection(s: &Settings) -> Result<(PathBuf, Collection)> {
    let dir = s.require_path("index")?;
    let col = Collection::load(&dir)?;
    Ok((dir, col))
}

fn load_embeddings_for(s: &Settings, dir: &Path, col: &Collection) -> Result<EmbeddingTable> {
    if let Some(p) = s.path("embeddings") {
        return Ok(load_embeddings(&p, &col.vocab)?);
    }
    let cache = dir.join(EMBEDDINGS_FILE);
    if cache.exists() {
        let f = File::open(&cache).map_err(|e| wgrank::Error::io(&cache, e))?;
        return Ok(EmbeddingTable::read_cache(std::io::BufReader::new(f), &col.vocab)?);
    }
    Err(wgrank::Error::Config("`embeddings` is required (none cached in the index)".into()).into())
}

fn load_queries(s: &Settings, col: &Collection, m_max: usize) -> Result<Vec<Query>> {
    let raw = read_queries_tsv(&s.require_path("queries")?)?;
    Ok(prepare_queries(col, &raw, m_max)?)
}

fn load_qrels(s: &Settings, required: bool) -> Result<QRels> {
    match s.path("qrels") {
        Some(p) => Ok(QRels::read(&p)?),
        None if required => Err(s.require_path("qrels").unwrap_err().into()),
        None => Ok(QRels::new()),
    }
}

fn fold(s: &Settings, folds: usize) -> Result<Option<usize>> {
    let f: Option<usize> = s.optional("fold")?;
    if let Some(f) = f {
        if f >= folds {
            bail!(wgrank::Error::Config(format!("fold {f} out of range for {folds} folds")));
        }
    }
    Ok(f)
}

fn cmd_index(s: &Settings) -> Result<()> {
    let docs = read_corpus_jsonl(&s.require_path("corpus")?)?;
    let opts = IndexOptions {
        normalizer: s.get("stemmer").unwrap_or("none").to_string(),
        stopwords: match s.path("stopwords") {
            Some(p) => read_stopwords(&p)?,
            None => default_stopwords(),
        },
        min_freq: s.parse("min_freq")?,
        freq_mode: s.freq_mode()?,
    };
    let col = Collection::build(&docs, &opts)?;
    let dir = s.require_path("index")?;
    col.save(&dir)?;
    if let Some(p) = s.path("embeddings") {
        let emb = load_embeddings(&p, &col.vocab)?;
        info!("embedding coverage {:.3}", emb.coverage());
        let cache = dir.join(EMBEDDINGS_FILE);
        let mut w = BufWriter::new(File::create(&cache).map_err(|e| wgrank::Error::io(&cache, e))?);
        emb.write_cache(&mut w).and_then(|_| w.flush()).map_err(|e| wgrank::Error::io(&cache, e))?;
    }
    eprintln!(
        "indexed {} documents, {} terms into {}",
        col.docs.len(),
        col.vocab.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_train(s: &Settings) -> Result<()> {
    let cfg = s.model_config()?;
    let (dir, col) = load_collection(s)?;
    let emb = load_embeddings_for(s, &dir, &col)?;
    let queries = load_queries(s, &col, cfg.hyper.m_max)?;
    let qrels = load_qrels(s, true)?;
    let exp = Experiment::new(&col, &emb, queries, &qrels, s.parse("candidates")?);
    let graphs = exp.graphs(cfg.features)?;
    let ckpt = s.require_path("checkpoint")?;
    let outcome = match fold(s, cfg.folds)? {
        Some(f) => {
            let rot = kfold_split(&exp.query_ids(), cfg.folds, cfg.train.seed)?.rotation(f);
            let data = exp.training_set(&rot.train, cfg.judged_only, &graphs)?;
            let val = exp.scoring_set(&rot.validation, &graphs)?;
            let v = Validation {
                set: &val,
                qrels: &qrels,
            };
            train(cfg.initial_params(), &data, Some(v), &cfg.train)?
        }
        None => {
            let data = exp.training_set(&exp.query_ids(), cfg.judged_only, &graphs)?;
            train(cfg.initial_params(), &data, None, &cfg.train)?
        }
    };
    checkpoint::save(&outcome.params, &ckpt)?;
    let log_path = s.path("log").unwrap_or_else(|| {
        let mut p = ckpt.clone().into_os_string();
        p.push(".log");
        PathBuf::from(p)
    });
    let mut w = BufWriter::new(File::create(&log_path).map_err(|e| wgrank::Error::io(&log_path, e))?);
    outcome
        .write_log(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| wgrank::Error::io(&log_path, e))?;
    eprintln!(
        "trained {} epochs, kept epoch {}; checkpoint {}",
        outcome.log.len(),
        outcome.best_epoch,
        ckpt.display()
    );
    Ok(())
}

fn write_run(s: &Settings, run: &RunList) -> Result<()> {
    let mut w = output(s)?;
    run.write_trec(&mut w, RUN_TAG).context("writing run")?;
    w.flush().context("writing run")?;
    Ok(())
}

fn cmd_rerank(s: &Settings) -> Result<()> {
    let cfg = s.model_config()?;
    let (dir, col) = load_collection(s)?;
    let scorer = s.get("scorer").unwrap_or("neural");
    let ckpt = s.path("checkpoint");
    let needs_model = scorer == "neural";
    let qrels = load_qrels(s, needs_model && ckpt.is_none())?;
    let emb = if needs_model {
        load_embeddings_for(s, &dir, &col)?
    } else {
        EmbeddingTable::empty(col.vocab.len(), 0)
    };
    let m_max = match &ckpt {
        Some(p) if needs_model => checkpoint::load(p)?.hyper.m_max,
        _ => cfg.hyper.m_max,
    };
    let queries = load_queries(s, &col, m_max)?;
    let mut exp = Experiment::new(&col, &emb, queries, &qrels, s.parse("candidates")?);
    let f = fold(s, cfg.folds)?;
    let run = match scorer {
        "bm25" => baseline_run(&exp, Scorer::Bm25(Bm25Params::default()))?,
        "ql" => baseline_run(&exp, Scorer::QueryLikelihood { mu: DEFAULT_MU })?,
        "neural" => match ckpt {
            Some(p) => {
                let params = checkpoint::load(&p)?;
                if let Some(f) = f {
                    let test = kfold_split(&exp.query_ids(), cfg.folds, cfg.train.seed)?.rotation(f).test;
                    exp.queries.retain(|q, _| test.contains(q));
                }
                rerank_with(&exp, &params, cfg.features)?
            }
            None => cross_validate(&exp, &cfg, f.map(|f| vec![f]).as_deref())?.run,
        },
        other => bail!(wgrank::Error::Config(format!("unknown scorer `{other}`"))),
    };
    write_run(s, &run)
}

fn cmd_eval(s: &Settings) -> Result<()> {
    let run = read_run(&s.require_path("run")?)?;
    let qrels = load_qrels(s, true)?;
    let cutoffs = s.list("cutoffs")?;
    let opts = EvalOptions {
        include_zero_idcg: s.bool("include_zero_idcg")?,
    };
    let report = evaluate(&run, &qrels, &cutoffs, opts);
    let mut w = output(s)?;
    serde_json::to_writer_pretty(&mut w, &report).context("writing report")?;
    writeln!(w).and_then(|_| w.flush()).context("writing report")?;
    Ok(())
}

fn cmd_ablate(s: &Settings) -> Result<()> {
    let cfg = s.model_config()?;
    let (dir, col) = load_collection(s)?;
    let emb = load_embeddings_for(s, &dir, &col)?;
    let queries = load_queries(s, &col, cfg.hyper.m_max)?;
    let qrels = load_qrels(s, true)?;
    let exp = Experiment::new(&col, &emb, queries, &qrels, s.parse("candidates")?);
    let grid = ablation_grid(&cfg, &s.list("depths")?);
    let f = fold(s, cfg.folds)?;
    let rows = ablate(&exp, &grid, f.map(|f| vec![f]).as_deref())?;
    if let Some(out) = s.path("output") {
        std::fs::create_dir_all(&out).map_err(|e| wgrank::Error::io(&out, e))?;
        for r in &rows {
            let p = out.join(format!("run.{}.t{}.txt", r.mode, r.layers));
            let mut w = BufWriter::new(File::create(&p).map_err(|e| wgrank::Error::io(&p, e))?);
            r.run.write_trec(&mut w, RUN_TAG).and_then(|_| w.flush()).map_err(|e| wgrank::Error::io(&p, e))?;
        }
        let p = out.join("table.txt");
        std::fs::write(&p, format_ablation_table(&rows)).map_err(|e| wgrank::Error::io(&p, e))?;
    }
    print!("{}", format_ablation_table(&rows));
    Ok(())
}

fn cmd_gradcheck(s: &Settings) -> Result<()> {
    let seeds: u64 = s.parse("gradcheck_seeds")?;
    let tolerance: f64 = s.parse("tolerance")?;
    let mut failed = Vec::new();
    println!("{:>3} {:>2} {:>2} {:>2} {:<8} {:<6} {:>4} {:>12}  result", "n", "M", "t", "k", "weights", "ties", "seed", "max_rel_err");
    for spec in standard_specs() {
        for seed in 0..seeds {
            let inst = random_instance(&spec, seed)?;
            let report = grad_check(&inst, tolerance)?;
            let ok = report.passed();
            println!(
                "{:>3} {:>2} {:>2} {:>2} {:<8} {:<6} {:>4} {:>12.3e}  {}",
                spec.nodes,
                spec.query_terms,
                spec.layers,
                spec.k,
                if spec.shared_weights { "shared" } else { "per-step" },
                spec.ties,
                seed,
                report.max_rel_error(),
                if ok { "ok".to_string() } else { format!("FAIL {}", report.failures().join(",")) }
            );
            if !ok {
                failed.push(format!("n={} seed={seed}", spec.nodes));
            }
        }
    }
    if !failed.is_empty() {
        bail!(wgrank::Error::GradientMismatch(failed.join("; ")));
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<wgrank::Error>() {
            return match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = settings(&cli).and_then(|s| match cli.command {
        Command::Index => cmd_index(&s),
        Command::Train => cmd_train(&s),
        Command::Rerank => cmd_rerank(&s),
        Command::Eval => cmd_eval(&s),
        Command::Ablate => cmd_ablate(&s),
        Command::Gradcheck => cmd_gradcheck(&s),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
