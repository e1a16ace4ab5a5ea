use std::collections::HashMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use cnir_core::baselines::{rm_expand, tfidf_expand};
use cnir_core::corpus::{load_corpus, load_qrels, load_queries, read_run, write_queries, write_run, Query, DEFAULT_RUN_TAG};
use cnir_core::metrics::{format_table, MetricReport};
use cnir_core::retrieval::{InvertedIndex, INDEX_FORMAT_VERSION};
use cnir_core::synth::{generate, SynthParams};
use cnir_core::tensor::CHECKPOINT_FORMAT_VERSION;
use cnir_core::trainer::{
    greedy_reformulate, load_policy, load_ranker, pretrain_ranker, train_and_save, Dataset, Split,
};
use cnir_core::{Error, TrainingConfig};

#[derive(Parser)]
#[command(name = "cnir", about = "Cooperative query reformulation and neural reranking")]
struct Cli {
    /// Log progress at info level (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one configuration key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainingConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => TrainingConfig::load(p)?,
            None => TrainingConfig::default(),
        };
        cfg.apply_overrides(&self.overrides)?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Tfidf,
    Rm,
    Rl,
}

#[derive(Subcommand)]
enum Command {
    /// Build and save the BM25 index of a corpus.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Generate a synthetic data directory.
    GenSynth {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Pretrain the ranker on original queries.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train reformulator and ranker cooperatively.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Root under which the run directory is created.
        #[arg(long, default_value = "runs")]
        runs: PathBuf,
        /// Start from this ranker checkpoint instead of pretraining.
        #[arg(long)]
        pretrained: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write expanded queries for one split.
    Reformulate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, value_enum)]
        method: Method,
        /// Policy checkpoint, required for `--method rl`.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Rerank the candidate pools of one split and write a run file.
    Rank {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        ranker: PathBuf,
        /// Reformulated queries; the original queries are used when absent.
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = DEFAULT_RUN_TAG)]
        tag: String,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score one or more run files against judgments.
    Eval {
        /// Run file; repeat to compare systems.
        #[arg(long, required = true)]
        run: Vec<PathBuf>,
        #[arg(long)]
        qrels: PathBuf,
        /// Write per-query metrics as TSV.
        #[arg(long)]
        per_query: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn version() -> &'static str {
    let s = format!(
        "{} (index format {INDEX_FORMAT_VERSION}, checkpoint format {CHECKPOINT_FORMAT_VERSION})",
        env!("CARGO_PKG_VERSION")
    );
    Box::leak(s.into_boxed_str())
}

fn write_file(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn expand(ds: &Dataset, cfg: &TrainingConfig, split: Split, method: Method, policy: Option<&Path>) -> Result<Vec<Query>, Error> {
    let policy = match method {
        Method::Rl => {
            let p = policy.ok_or_else(|| Error::Config("`--method rl` needs `--policy`".into()))?;
            Some(load_policy(ds, cfg, p)?)
        }
        _ => None,
    };
    ds.split(split)
        .iter()
        .map(|pq| {
            let original = Query::new(pq.query.query_id.clone(), pq.query.tokens.clone());
            let tokens = match (method, &policy) {
                (Method::Rl, Some(p)) => greedy_reformulate(p, ds, pq, cfg.K)?.reformulated_query,
                (Method::Rm, _) => rm_expand(&original, &ds.prf_docs(&original, cfg.prf_docs), &ds.index, cfg.K, cfg.rm_lambda),
                _ => tfidf_expand(&original, &ds.prf_docs(&original, cfg.prf_docs), &ds.index, cfg.K),
            };
            Ok(Query::new(original.query_id, tokens))
        })
        .collect()
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Index { corpus, out, cfg } => {
            cfg.resolve()?;
            let docs = load_corpus(&corpus)?;
            let index = InvertedIndex::build(&docs);
            index.save(&out)?;
            println!("indexed {} documents into {}", index.doc_count(), out.display());
        }
        Command::GenSynth { out, cfg } => {
            let cfg = cfg.resolve()?;
            let (data, check) = generate(&SynthParams::from_config(&cfg))?;
            data.write(&out)?;
            println!(
                "wrote {} documents and {} queries to {} (BM25 MAP {:.4}, oracle MAP {:.4})",
                data.docs.len(),
                data.all_queries().count(),
                out.display(),
                check.raw_map,
                check.oracle_map
            );
        }
        Command::Pretrain { data, out, cfg } => {
            let cfg = cfg.resolve()?;
            let ds = Dataset::load(&data, &cfg)?;
            let (model, log) = pretrain_ranker(&ds, &cfg)?;
            model.params.save(&out)?;
            for r in &log {
                println!("epoch {:>3}  loss {:.6}  valid nDCG@10 {:.4}", r.epoch, r.loss, r.valid_ndcg10);
            }
        }
        Command::Train { data, runs, pretrained, cfg } => {
            let cfg = cfg.resolve()?;
            let ds = Dataset::load(&data, &cfg)?;
            let pretrained = pretrained.map(|p| load_ranker(&ds, &cfg, &p)).transpose()?;
            let (paths, outcome) = train_and_save(&ds, &cfg, &runs, pretrained)?;
            println!(
                "{} (best epoch {}, valid nDCG@10 {:.4})",
                paths.dir.display(),
                outcome.best_epoch,
                outcome.best_valid_ndcg10
            );
        }
        Command::Reformulate { data, split, method, policy, out, cfg } => {
            let cfg = cfg.resolve()?;
            let ds = Dataset::load(&data, &cfg)?;
            let queries = expand(&ds, &cfg, split.into(), method, policy.as_deref())?;
            write_queries(&queries, &out)?;
        }
        Command::Rank { data, split, ranker, queries, out, tag, cfg } => {
            let cfg = cfg.resolve()?;
            let ds = Dataset::load(&data, &cfg)?;
            let model = load_ranker(&ds, &cfg, &ranker)?;
            let rewritten: HashMap<String, Vec<String>> = match &queries {
                Some(p) => load_queries(p)?
                    .queries
                    .into_iter()
                    .map(|q| (q.query_id, q.tokens))
                    .collect(),
                None => HashMap::new(),
            };
            let lists: Vec<_> = ds
                .split(split.into())
                .iter()
                .map(|pq| match rewritten.get(&pq.query.query_id) {
                    Some(tokens) => model.rerank(&ds.lexicon.vocab.encode(tokens), &pq.pool, &ds.encoded),
                    None => model.rerank(&pq.ids, &pq.pool, &ds.encoded),
                })
                .collect();
            write_run(&lists, &out, &tag)?;
        }
        Command::Eval { run, qrels, per_query, cfg } => {
            cfg.resolve()?;
            let judg = load_qrels(&qrels)?;
            let mut systems = Vec::new();
            for path in &run {
                let name = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| path.display().to_string());
                systems.push((name, MetricReport::evaluate(&read_run(path)?, &judg)));
            }
            print!("{}", format_table(&systems));
            if let Some(p) = per_query {
                let tsv: String = systems
                    .iter()
                    .enumerate()
                    .map(|(i, (name, r))| {
                        let t = r.per_query_tsv(name);
                        if i == 0 {
                            t
                        } else {
                            t.lines().skip(1).map(|l| format!("{l}\n")).collect()
                        }
                    })
                    .collect();
                write_file(&p, &tsv)?;
            }
        }
    }
    Ok(())
}

fn run(args: Vec<OsString>) -> u8 {
    let matches = match Cli::command().version(version()).try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 1;
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => 1,
                _ => 2,
            }
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(run(std::env::args_os().collect()))
}
