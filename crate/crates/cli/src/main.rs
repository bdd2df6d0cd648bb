use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use ntpcap::corpus::{
    entropy_lower_bound, export, read_text_corpus, ContextTrie, Corpus, NextTokenTable, TokenizerScheme, Vocabulary,
};
use ntpcap::interpolate::{construct_interpolant, InterpolationConfig, Target, TargetSet};
use ntpcap::langspace::{random_space, sample_corpus, sample_corpus_with_contexts};
use ntpcap::linalg::RANK_TOL;
use ntpcap::model::{capacity_bounds, Activation, ParamLayout, Variant};
use ntpcap::ranklab::{colliding_pairs, default_b, injectivity_test, rank_experiment, scalar_values, RankExperiment};
use ntpcap::train::{sweep, train_to_threshold, SweepResult, TrainConfig, TrainableSubset};
use ntpcap::{rng, Error, Result};

#[cfg(feature = "fetch")]
mod fetch;
mod report;

use report::{sig6, OutDir};

#[derive(Parser, Debug)]
#[command(name = "ntpcap", version, about = "Next-token prediction capacity lab")]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, env = "NTPCAP_SEED", default_value_t = 0)]
    seed: u64,
    /// Directory for artifacts and the run sidecar.
    #[arg(long, global = true, default_value = "ntpcap-out")]
    out: PathBuf,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tokenize a corpus and export its vocabulary and context table.
    Ingest(CorpusArgs),
    /// Corpus size, vocabulary and context statistics.
    Stats(CorpusArgs),
    /// Entropy lower bound of the cross-entropy loss.
    Entropy(CorpusArgs),
    /// Construct an exact interpolant for a target set.
    Interpolate(InterpolateArgs),
    /// Rank and Kruskal rank of random feature matrices.
    Ranklab(RanklabArgs),
    /// Exhaustive injectivity check of the scalar context maps.
    Injectivity(InjectivityArgs),
    /// Train one model toward the entropy bound.
    Train(TrainArgs),
    /// Train over a grid of hidden widths on several corpora.
    Sweep(SweepArgs),
    /// Capacity bounds for a parameter budget.
    Bounds(BoundsArgs),
    /// Sample a synthetic corpus from a random language space.
    Sample(SampleArgs),
    /// Download TinyStories and write one story per line.
    #[cfg(feature = "fetch")]
    Fetch(fetch::FetchArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
struct CorpusArgs {
    /// Corpus file, one document per line.
    #[arg(long)]
    corpus: PathBuf,
    /// `text` (tokenized) or `ids` (whitespace-separated token ids).
    #[arg(long, default_value = "text")]
    format: String,
    #[arg(long, default_value = "word-punct")]
    tokenizer: String,
    /// Documents are cut to this many tokens.
    #[arg(long, default_value_t = 10)]
    truncate: usize,
}

#[derive(Args, Debug, Serialize)]
struct InterpolateArgs {
    /// JSON list of `{context, target}`; random targets when absent.
    #[arg(long)]
    targets: Option<PathBuf>,
    /// Take targets from the empirical distributions of a corpus.
    #[arg(long, conflicts_with = "targets")]
    corpus: Option<PathBuf>,
    /// Mix corpus targets with the uniform distribution by this weight;
    /// empirical rows with zeros lie on the simplex boundary otherwise.
    #[arg(long, default_value_t = 0.0)]
    smoothing: f64,
    #[arg(long, default_value_t = 3)]
    omega: usize,
    /// Number of random contexts.
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    max_len: usize,
    /// Hidden width; defaults to the number of nonempty contexts.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value = "self-attention")]
    variant: String,
    #[arg(long, default_value = "sin")]
    activation: String,
    #[arg(long, default_value_t = 16)]
    retries: usize,
    /// Also write the lifted full-model parameters at this width.
    #[arg(long)]
    lift_d: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct RanklabArgs {
    #[arg(long, default_value = "tanh")]
    activation: String,
    /// Polynomial support, e.g. `0,2,5`; overrides --activation.
    #[arg(long, value_delimiter = ',')]
    support: Option<Vec<usize>>,
    #[arg(long, default_value_t = 4)]
    m: usize,
    #[arg(long, default_value_t = 4)]
    n: usize,
    /// Column nodes; defaults to `scale * (1..n) / n`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    b: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = RANK_TOL)]
    tol: f64,
}

#[derive(Args, Debug, Serialize)]
struct InjectivityArgs {
    #[arg(long, default_value_t = 3)]
    omega: usize,
    /// Maximum context length.
    #[arg(long, default_value_t = 4)]
    t: usize,
    /// `self-attention`, `token-average` or `both`.
    #[arg(long, default_value = "both")]
    variant: String,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Args, Debug, Clone, Serialize)]
struct TrainOverrides {
    /// File of `key=value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single `key=value` override; repeatable.
    #[arg(long = "set")]
    set: Vec<String>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    activation: Option<String>,
    /// Train only the feed-forward block and empty-context logits.
    #[arg(long)]
    fnn_only: bool,
    /// Stop once the gap falls below this fraction of the bound.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct SweepArgs {
    /// Corpus files (text or ids per --format); repeatable.
    #[arg(long)]
    corpus: Vec<PathBuf>,
    #[arg(long, default_value = "text")]
    format: String,
    #[arg(long, default_value = "word-punct")]
    tokenizer: String,
    #[arg(long, default_value_t = 10)]
    truncate: usize,
    /// Synthetic corpora with about this many unique contexts.
    #[arg(long, value_delimiter = ',')]
    synthetic: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    omega: usize,
    #[arg(long, default_value_t = 5)]
    doc_len: usize,
    #[arg(long, default_value_t = 1.0)]
    concentration: f64,
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,32,64,128")]
    m_grid: Vec<usize>,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Args, Debug, Serialize)]
struct BoundsArgs {
    /// Parameter count; defaults to the experiment layout at (--omega, --m).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    omega: usize,
    #[arg(long)]
    m: usize,
}

#[derive(Args, Debug, Serialize)]
struct SampleArgs {
    #[arg(long, default_value_t = 5)]
    omega: usize,
    #[arg(long, default_value_t = 5)]
    depth: usize,
    #[arg(long, default_value_t = 100)]
    docs: usize,
    /// Document length; defaults to the depth.
    #[arg(long)]
    len: Option<usize>,
    /// Sample until this many unique contexts instead of a fixed count.
    #[arg(long)]
    contexts: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    concentration: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            eprintln!("{}", json!({ "error": "jobs", "message": e.to_string() }));
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", report::error_line(&e));
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let out = OutDir::create(&cli.out)?;
    let seed = cli.seed;
    match &cli.command {
        Command::Ingest(a) => ingest(a, &out, seed),
        Command::Stats(a) => stats(a, &out, seed),
        Command::Entropy(a) => entropy(a, &out, seed),
        Command::Interpolate(a) => interpolate(a, &out, seed),
        Command::Ranklab(a) => ranklab(a, &out, seed),
        Command::Injectivity(a) => injectivity(a, &out, seed),
        Command::Train(a) => train(a, &out, seed),
        Command::Sweep(a) => run_sweep(a, &out, seed),
        Command::Bounds(a) => bounds(a, &out, seed),
        Command::Sample(a) => sample(a, &out, seed),
        #[cfg(feature = "fetch")]
        Command::Fetch(a) => fetch::run(a, &out, seed),
    }
}

fn load_corpus(path: &Path, format: &str, tokenizer: &str, truncate: usize) -> Result<(Option<Vocabulary>, Corpus)> {
    match format {
        "text" => {
            let scheme: TokenizerScheme = tokenizer.parse()?;
            let (v, c) = read_text_corpus(path, scheme, truncate)?;
            Ok((Some(v), c))
        }
        "ids" => Ok((None, Corpus::from_id_lines(&std::fs::read_to_string(path)?, None)?)),
        other => Err(Error::InvalidArgument(format!("unknown corpus format `{other}`"))),
    }
}

fn load(a: &CorpusArgs) -> Result<(Option<Vocabulary>, Corpus)> {
    load_corpus(&a.corpus, &a.format, &a.tokenizer, a.truncate)
}

fn ingest(a: &CorpusArgs, out: &OutDir, seed: u64) -> Result<()> {
    let (vocab, corpus) = load(a)?;
    let trie = ContextTrie::build(&corpus);
    let vocab = vocab.unwrap_or_default();
    export(&vocab, &trie, &out.path("vocab.json"), &out.path("contexts.csv"))?;
    out.write("corpus.ids", &corpus.to_id_lines())?;
    println!("documents {}", corpus.num_docs());
    println!("omega {}", corpus.omega());
    println!("n {}", trie.n_contexts());
    out.sidecar("ingest", seed, a)?;
    Ok(())
}

fn stats(a: &CorpusArgs, out: &OutDir, seed: u64) -> Result<()> {
    let (_, corpus) = load(a)?;
    let trie = ContextTrie::build(&corpus);
    let bound = entropy_lower_bound(&trie);
    let s = json!({
        "documents": corpus.num_docs(),
        "tokens": corpus.num_tokens(),
        "omega": corpus.omega(),
        "max_len": corpus.max_len(),
        "n_contexts": trie.n_contexts(),
        "entropy_bound": bound,
    });
    println!("documents {}", corpus.num_docs());
    println!("tokens {}", corpus.num_tokens());
    println!("omega {}", corpus.omega());
    println!("max_len {}", corpus.max_len());
    println!("n {}", trie.n_contexts());
    println!("bound {}", sig6(bound));
    out.write_json("stats.json", &s)?;
    out.sidecar("stats", seed, a)?;
    Ok(())
}

fn entropy(a: &CorpusArgs, out: &OutDir, seed: u64) -> Result<()> {
    let (_, corpus) = load(a)?;
    let trie = ContextTrie::build(&corpus);
    let bound = entropy_lower_bound(&trie);
    println!("bound {}", sig6(bound));
    println!("n {}", trie.n_contexts());
    out.write_json("entropy.json", &json!({ "entropy_bound": bound, "n_contexts": trie.n_contexts() }))?;
    out.sidecar("entropy", seed, a)?;
    Ok(())
}

fn interpolate(a: &InterpolateArgs, out: &OutDir, seed: u64) -> Result<()> {
    let ts = if let Some(p) = &a.targets {
        TargetSet::from_json(&std::fs::read_to_string(p)?)?
    } else if let Some(p) = &a.corpus {
        let (_, corpus) = load_corpus(p, "text", "word-punct", 10)?;
        let table = NextTokenTable::from_trie(&ContextTrie::build(&corpus));
        let w = corpus.omega() as f64;
        let items = table
            .iter()
            .map(|(c, p)| Target {
                context: c.clone(),
                target: p.iter().map(|q| (1.0 - a.smoothing) * q + a.smoothing / w).collect(),
            })
            .collect();
        TargetSet::new(items)?
    } else {
        TargetSet::random(a.omega, a.n, a.max_len, seed)?
    };
    let variant: Variant = a.variant.parse()?;
    let act: Activation = a.activation.parse()?;
    let n = ts.nonempty().count();
    let mut cfg = InterpolationConfig::new(variant, a.m.unwrap_or(n.max(1)), seed);
    cfg.max_retries = a.retries;
    let rep = construct_interpolant(&ts, &act, &cfg)?;
    println!("contexts {}", ts.len());
    println!("m {}", cfg.m);
    println!("epsilon {}", sig6(rep.epsilon));
    println!("condition {}", sig6(rep.condition));
    println!("max_error {}", sig6(rep.max_error));
    println!("retries {}", rep.retries);
    out.write_json("interpolation.json", &rep)?;
    out.write("targets.json", &ts.to_json())?;
    if let Some(d) = a.lift_d {
        let json = match variant {
            Variant::SelfAttention => rep.lift(d, 1, d, d)?.to_json(),
            Variant::TokenAverage => serde_json::to_string(&rep.lift_token_average(d)?)?,
        };
        out.write("lifted.json", &json)?;
    }
    out.sidecar("interpolate", seed, a)?;
    Ok(())
}

fn ranklab(a: &RanklabArgs, out: &OutDir, seed: u64) -> Result<()> {
    let act = match &a.support {
        Some(k) => {
            let top = k.iter().copied().max().ok_or_else(|| Error::InvalidArgument("empty support".into()))?;
            let mut coeffs = vec![0.0; top + 1];
            for &i in k {
                coeffs[i] = 1.0;
            }
            Activation::Polynomial { coeffs }
        }
        None => a.activation.parse()?,
    };
    let b = a.b.clone().unwrap_or_else(|| default_b(a.n, a.scale));
    let ex = rank_experiment(&act, a.m, &b, a.trials, seed, None, a.tol)?;
    let mut csv = format!("{}\n", RankExperiment::CSV_HEADER);
    csv.push_str(&ex.csv_rows());
    out.write("ranklab.csv", &csv)?;
    println!("psi {}", act.name());
    println!("m {} n {}", ex.m, ex.n);
    println!("predicted {}", ex.trials.first().map_or(0, |r| r.predicted));
    println!("agreement {}", sig6(ex.agreement_rate));
    out.sidecar("ranklab", seed, a)?;
    Ok(())
}

fn injectivity(a: &InjectivityArgs, out: &OutDir, seed: u64) -> Result<()> {
    let variants = match a.variant.as_str() {
        "both" => vec![Variant::SelfAttention, Variant::TokenAverage],
        v => vec![v.parse()?],
    };
    let mut r = rng::seeded(seed, 0);
    let z = rng::gaussian_vec(&mut r, a.omega);
    let u = rng::gaussian_vec(&mut r, a.t);
    let mut reports = Vec::new();
    let mut all_pass = true;
    for v in variants {
        let rep = injectivity_test(v, a.omega, a.t, &z, &u, a.tol)?;
        let (ctx, f) = scalar_values(v, a.omega, a.t, &z, &u)?;
        let pairs = colliding_pairs(&ctx, &f, a.tol);
        println!(
            "{v}: contexts {} min_abs {} min_gap {} collisions {} {}",
            rep.contexts,
            sig6(rep.min_abs),
            sig6(rep.min_gap),
            rep.collisions,
            if rep.pass { "pass" } else { "fail" }
        );
        all_pass &= rep.pass;
        reports.push(json!({ "report": rep, "colliding_pairs": pairs }));
    }
    out.write_json("injectivity.json", &json!({ "z": z, "u": u, "results": reports, "pass": all_pass }))?;
    out.sidecar("injectivity", seed, a)?;
    Ok(())
}

fn train_config(o: &TrainOverrides, seed: u64) -> Result<TrainConfig> {
    let mut cfg = TrainConfig { seed, ..TrainConfig::default() };
    if let Some(p) = &o.config {
        cfg.apply_text(&std::fs::read_to_string(p)?)?;
    }
    for kv in &o.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got `{kv}`")))?;
        cfg.set(k, v)?;
    }
    if let Some(m) = o.m {
        cfg.m = m;
    }
    if let Some(act) = &o.activation {
        cfg.activation = act.parse()?;
    }
    if o.fnn_only {
        cfg.subset = TrainableSubset::FnnOnly;
    }
    if let Some(t) = o.threshold {
        cfg.threshold_fraction = t;
    }
    if let Some(i) = o.iterations {
        cfg.iterations = i;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Every training key with its resolved value.
fn resolved(cfg: &TrainConfig) -> serde_json::Map<String, serde_json::Value> {
    cfg.to_text()
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), serde_json::Value::String(v.to_string())))
        .collect()
}

fn train(a: &TrainArgs, out: &OutDir, seed: u64) -> Result<()> {
    let cfg = train_config(&a.overrides, seed)?;
    let (_, corpus) = load(&a.corpus)?;
    let trace = train_to_threshold(&corpus, &cfg)?;
    let mut csv = String::from("iteration,loss,gap\n");
    for c in &trace.checkpoints {
        csv.push_str(&format!("{},{:?},{:?}\n", c.iteration, c.loss, c.gap));
    }
    out.write("checkpoints.csv", &csv)?;
    out.write("params.json", &trace.params.to_json())?;
    let summary = json!({
        "entropy_bound": trace.entropy_bound,
        "final_loss": trace.final_loss,
        "final_gap": trace.final_gap,
        "iterations": trace.iterations,
        "passed": trace.passed,
        "param_count": trace.param_count,
    });
    out.write_json("train.json", &summary)?;
    println!("bound {}", sig6(trace.entropy_bound));
    println!("loss {}", sig6(trace.final_loss));
    println!("gap/bound {}", sig6(trace.final_gap / trace.entropy_bound));
    println!("iterations {}", trace.iterations);
    println!("params {}", trace.param_count);
    println!("passed {}", trace.passed);
    println!("wall_time_secs {}", sig6(trace.wall_time_secs));
    out.sidecar("train", seed, &json!({ "args": a, "resolved": resolved(&cfg) }))?;
    Ok(())
}

fn run_sweep(a: &SweepArgs, out: &OutDir, seed: u64) -> Result<()> {
    let cfg = train_config(&a.overrides, seed)?;
    let mut corpora = Vec::new();
    for p in &a.corpus {
        let (_, c) = load_corpus(p, &a.format, &a.tokenizer, a.truncate)?;
        let id = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
        corpora.push((id, c));
    }
    for &n in &a.synthetic {
        let s = seed.wrapping_add(n as u64);
        let space = random_space(a.omega, a.doc_len, a.concentration, s)?;
        corpora.push((format!("synthetic{n}"), sample_corpus_with_contexts(&space, n, a.doc_len, s, 100_000)?));
    }
    let res: SweepResult = sweep(&corpora, &a.m_grid, &cfg)?;
    out.write("sweep.csv", &res.to_csv())?;
    for (id, c) in &corpora {
        let n = ContextTrie::build(c).n_contexts();
        match res.minimal_passing(id) {
            Some((m, k)) => println!("{id}: n {n} minimal m {m} params {k}"),
            None => println!("{id}: n {n} no passing m"),
        }
    }
    out.sidecar("sweep", seed, &json!({ "args": a, "resolved": resolved(&cfg) }))?;
    Ok(())
}

fn bounds(a: &BoundsArgs, out: &OutDir, seed: u64) -> Result<()> {
    let k = a.k.unwrap_or_else(|| ParamLayout::experiment().count(&ParamLayout::experiment_dims(a.omega, a.m)));
    let b = capacity_bounds(k, a.omega, a.m)?;
    println!("k {}", b.k);
    println!("general_upper {}", sig6(b.general_upper));
    println!("empirical_upper {}", sig6(b.empirical_upper));
    println!("lower {}", b.lower);
    println!("ratio {}", sig6(b.ratio));
    out.write_json("bounds.json", &b)?;
    out.sidecar("bounds", seed, a)?;
    Ok(())
}

fn sample(a: &SampleArgs, out: &OutDir, seed: u64) -> Result<()> {
    let space = random_space(a.omega, a.depth, a.concentration, seed)?;
    let len = a.len.unwrap_or(a.depth);
    let corpus = match a.contexts {
        Some(n) => sample_corpus_with_contexts(&space, n, len, seed, 100_000)?,
        None => sample_corpus(&space, a.docs, len, seed)?,
    };
    out.write("corpus.ids", &corpus.to_id_lines())?;
    out.write("space.json", &space.to_json())?;
    let trie = ContextTrie::build(&corpus);
    println!("documents {}", corpus.num_docs());
    println!("n {}", trie.n_contexts());
    println!("bound {}", sig6(entropy_lower_bound(&trie)));
    out.sidecar("sample", seed, a)?;
    Ok(())
}
