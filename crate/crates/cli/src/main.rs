use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use sft_core::experiment::{run_experiment, save_embeddings, ExperimentConfig, TrainedEmbeddings};
use sft_core::retrieval::{ConfigEcho, KReciprocalParams, DEFAULT_TOP_N};
use sft_core::spectral::{escape_probability, ncut_escape_identity_check};
use sft_core::synthetic::Topology;
use sft_core::train::{DeepSupervision, Method, TrainedModel};
use sft_core::{
    affinity, generate_synthetic, load_features, load_manifest, save_features, save_manifest, sft_transform, train,
    FeatureMatrix, Partition, RankingList, RetrievalSet, Split, SyntheticSpec, TrainConfig,
};

#[derive(Parser)]
#[command(name = "sft", version, about = "Spectral feature transformation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic embedding set and its manifest.
    Gen(GenArgs),
    /// Train an embedding model on the train split.
    Train(TrainArgs),
    /// Embed features with a trained model and/or apply the spectral transform.
    Transform(TransformArgs),
    /// Rank the gallery for every query.
    Rank(RankArgs),
    /// Compute mAP and CMC for a ranking.
    Eval(EvalArgs),
    /// Re-order the head of each ranking with the spectral transform.
    Refine(RefineArgs),
    /// Per-identity escape probabilities and the Ncut identity residual.
    Diagnose(DiagnoseArgs),
    /// Seeded ablation with σ and K sweeps.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TopologyArg {
    Spirals,
    Blobs,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Baseline,
    Sft,
    Ncut,
}

#[derive(Clone, Copy, ValueEnum)]
enum DsArg {
    Off,
    Shared,
    Unshared,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    All,
    Train,
    Query,
    Gallery,
    Test,
}

#[derive(Args)]
struct GenArgs {
    /// TOML data profile; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "spec", value_enum)]
    topology: Option<TopologyArg>,
    #[arg(long)]
    identities: Option<usize>,
    #[arg(long)]
    per_id: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    spread: Option<f64>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    cameras: Option<usize>,
    /// Identities held out entirely for retrieval.
    #[arg(long)]
    test_identities: Option<usize>,
    /// Samples per training identity held out for retrieval.
    #[arg(long)]
    heldout_per_id: Option<usize>,
    #[arg(long)]
    queries_per_id: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// TOML training configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long, value_enum)]
    ds: Option<DsArg>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Identities per batch.
    #[arg(long = "p")]
    p: Option<usize>,
    /// Samples per identity in a batch.
    #[arg(long = "k")]
    k: Option<usize>,
    /// Stop the transform gradient at the transition matrix.
    #[arg(long)]
    features_only: bool,
    /// Record affinity and Ncut diagnostics every epoch.
    #[arg(long)]
    diagnostics: bool,
    /// Trained model (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Per-epoch loss log (TSV).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Embeddings of every manifest row.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct TransformArgs {
    #[arg(long)]
    features: PathBuf,
    /// Embed with this trained model first.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1, value_parser = positive)]
    sigma: f64,
    /// Only embed; skip the transform.
    #[arg(long, requires = "model")]
    embed_only: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Re-rank with k-reciprocal encoding.
    #[arg(long)]
    k_reciprocal: bool,
    #[arg(long, default_value_t = 20)]
    k1: usize,
    #[arg(long, default_value_t = 6)]
    k2: usize,
    #[arg(long, default_value_t = 0.3)]
    lambda: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ranking: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Report path (JSON); printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    ranking: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOP_N, value_parser = at_least_one)]
    top_n: usize,
    #[arg(long, default_value_t = 0.1, value_parser = positive)]
    sigma: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 0.1, value_parser = positive)]
    sigma: f64,
    /// Rows forming the graph; `test` is query plus gallery.
    #[arg(long, value_enum, default_value = "all")]
    split: SplitArg,
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML experiment configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seeds, comma separated.
    #[arg(long = "seed", alias = "seeds", value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    top_n: Option<usize>,
    /// Also write every trained model's embeddings and manifests.
    #[arg(long)]
    save_embeddings: bool,
    #[arg(long)]
    out: PathBuf,
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be positive and finite, got {s}"))
    }
}

fn at_least_one(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        Ok(_) => Err("must be at least 1".into()),
        Err(e) => Err(e.to_string()),
    }
}

/// Trained model as written by `train`.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    config: TrainConfig,
    class_identities: Vec<u32>,
    params: TrainedModel,
}

enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<sft_core::SftError> for Failure {
    fn from(e: sft_core::SftError) -> Self {
        Failure::Data(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train_cmd(a),
        Command::Transform(a) => transform(a),
        Command::Rank(a) => rank(a),
        Command::Eval(a) => eval(a),
        Command::Refine(a) => refine(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Experiment(a) => experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Writes to stdout; a closed pipe is not an error.
fn emit(text: &str) -> CmdResult {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::Data(e.into())),
        _ => Ok(()),
    }
}

fn read_config<T>(path: Option<&Path>, parse: fn(&str) -> sft_core::Result<T>) -> Result<Option<T>, Failure> {
    let Some(path) = path else { return Ok(None) };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Data)?;
    parse(&text)
        .map(Some)
        .map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn gen(a: GenArgs) -> CmdResult {
    let mut spec = read_config(a.config.as_deref(), |t| {
        toml::from_str::<SyntheticSpec>(t).map_err(|e| sft_core::SftError::Config(e.to_string()))
    })?
    .unwrap_or_default();
    if let Some(t) = a.topology {
        spec.topology = match t {
            TopologyArg::Spirals => Topology::IntertwinedSpirals,
            TopologyArg::Blobs => Topology::GaussianBlobs,
        };
    }
    macro_rules! set {
        ($($flag:ident => $field:expr),+) => { $(if let Some(v) = a.$flag { $field = v; })+ };
    }
    set!(identities => spec.num_identities, per_id => spec.samples_per_identity, dim => spec.dim,
         spread => spec.intra_class_spread, separation => spec.inter_class_separation,
         cameras => spec.num_cameras, test_identities => spec.split.test_identities,
         heldout_per_id => spec.split.heldout_per_identity, queries_per_id => spec.split.queries_per_identity,
         seed => spec.seed);
    spec.validate().map_err(usage)?;

    let (x, manifest) = generate_synthetic(&spec)?;
    save_features(&x, &a.out)?;
    save_manifest(&manifest, &a.manifest)?;
    log::info!("wrote {} samples of dimension {}", x.n(), x.d());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> CmdResult {
    let mut cfg = read_config(a.config.as_deref(), TrainConfig::from_toml)?.unwrap_or_default();
    if let Some(m) = a.method {
        cfg.method = match m {
            MethodArg::Baseline => Method::Baseline,
            MethodArg::Sft => Method::Sft,
            MethodArg::Ncut => Method::Ncut,
        };
    }
    if let Some(d) = a.ds {
        cfg.deep_supervision = match d {
            DsArg::Off => DeepSupervision::Off,
            DsArg::Shared => DeepSupervision::Shared,
            DsArg::Unshared => DeepSupervision::Unshared,
        };
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.sigma {
        cfg.sigma = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.p {
        cfg.p = v;
    }
    if let Some(v) = a.k {
        cfg.k = v;
    }
    if a.features_only {
        cfg.sft_grad_through_t = false;
    }
    if a.diagnostics {
        cfg.diagnostics = true;
    }
    cfg.validate().map_err(usage)?;

    let x = load_features(&a.features)?;
    let manifest = load_manifest(&a.manifest)?;
    let outcome = train(&x, &manifest, &cfg)?;
    if let Some(path) = &a.log {
        std::fs::write(path, outcome.log.to_tsv()).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &a.embeddings {
        let emb = FeatureMatrix::from_matrix(outcome.params.embed(x.matrix())?)?;
        save_features(&emb, path)?;
    }
    let file = ModelFile {
        config: cfg,
        class_identities: outcome.class_identities,
        params: outcome.params,
    };
    let text = serde_json::to_string(&file).context("serializing model")?;
    std::fs::write(&a.model, text + "\n").with_context(|| format!("writing {}", a.model.display()))?;
    Ok(())
}

fn load_model(path: &Path) -> anyhow::Result<ModelFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing model {}", path.display()))
}

fn transform(a: TransformArgs) -> CmdResult {
    let mut x = load_features(&a.features)?;
    if let Some(path) = &a.model {
        let model = load_model(path)?;
        x = FeatureMatrix::from_matrix(model.params.embed(x.matrix())?)?;
    }
    if !a.embed_only {
        x = sft_transform(&x, a.sigma)?;
    }
    save_features(&x, &a.out)?;
    Ok(())
}

fn retrieval_set(features: &Path, manifest: &Path) -> anyhow::Result<RetrievalSet> {
    let x = load_features(features)?;
    let m = load_manifest(manifest)?;
    Ok(RetrievalSet::from_manifest(&x, &m)?)
}

fn rank(a: RankArgs) -> CmdResult {
    let params = KReciprocalParams {
        k1: a.k1,
        k2: a.k2,
        lambda: a.lambda,
    };
    if a.k_reciprocal {
        params.validate().map_err(usage)?;
    }
    let set = retrieval_set(&a.features, &a.manifest)?;
    let ranking = if a.k_reciprocal {
        set.k_reciprocal(&params)?
    } else {
        set.rank()?
    };
    ranking.save(&a.out)?;
    Ok(())
}

fn eval(a: EvalArgs) -> CmdResult {
    let ranking = RankingList::load(&a.ranking)?;
    let split = load_manifest(&a.manifest)?.retrieval_split();
    let report = sft_core::evaluate(&ranking, &split.query, &split.gallery, ConfigEcho::default())?;
    match &a.out {
        Some(path) => report.save(path)?,
        None => emit(&(report.to_json() + "\n"))?,
    }
    Ok(())
}

fn refine(a: RefineArgs) -> CmdResult {
    let set = retrieval_set(&a.features, &a.manifest)?;
    let ranking = RankingList::load(&a.ranking)?;
    set.refine(&ranking, a.top_n, a.sigma)?.save(&a.out)?;
    Ok(())
}

fn diagnose(a: DiagnoseArgs) -> CmdResult {
    let x = load_features(&a.features)?;
    let manifest = load_manifest(&a.manifest)?;
    manifest.check_paired(&x)?;
    let rows: Vec<usize> = match a.split {
        SplitArg::All => (0..manifest.len()).collect(),
        SplitArg::Train => manifest.rows_in(Split::Train),
        SplitArg::Query => manifest.rows_in(Split::Query),
        SplitArg::Gallery => manifest.rows_in(Split::Gallery),
        SplitArg::Test => {
            let mut r = manifest.rows_in(Split::Query);
            r.extend(manifest.rows_in(Split::Gallery));
            r.sort_unstable();
            r
        }
    };
    if rows.is_empty() {
        return Err(Failure::Data(anyhow::anyhow!("the selected split is empty")));
    }
    let (part, identities) = Partition::from_identities(&manifest.identities(&rows))?;
    if identities.len() < 2 {
        return Err(Failure::Data(anyhow::anyhow!(
            "need at least two identities, found {}",
            identities.len()
        )));
    }
    let w = affinity(&x.select_rows(&rows)?, a.sigma)?;

    let mut out = String::from("identity\tsize\tescape\tncut\tresidual\n");
    let mut max_residual: f64 = 0.0;
    for (c, id) in identities.iter().enumerate() {
        let escape = escape_probability(&w, &part, c)?;
        let (ncut, escapes) = ncut_escape_identity_check(&w, &part, c)?;
        let residual = (ncut - escapes).abs();
        max_residual = max_residual.max(residual);
        let _ = writeln!(
            out,
            "{id}\t{}\t{escape:.12}\t{ncut:.12}\t{residual:e}",
            part.class_size(c)
        );
    }
    let _ = writeln!(out, "max_residual\t{max_residual:e}");
    emit(&out)
}

fn experiment(a: ExperimentArgs) -> CmdResult {
    let mut cfg = read_config(a.config.as_deref(), ExperimentConfig::from_toml)?.unwrap_or_default();
    if !a.seeds.is_empty() {
        cfg.seeds = a.seeds.clone();
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
        cfg.train.warmup_epochs = cfg.train.warmup_epochs.min(e);
        cfg.train.decay_epochs.retain(|&d| d < e);
    }
    if let Some(n) = a.top_n {
        cfg.top_n = n;
    }
    cfg.validate().map_err(usage)?;

    let dir = a.out.join("embeddings");
    let mut save = |cell: &str, seed: u64, t: &TrainedEmbeddings| save_embeddings(&dir, cell, seed, t);
    let sink: Option<sft_core::experiment::EmbeddingSink<'_>> = if a.save_embeddings { Some(&mut save) } else { None };
    let report = run_experiment(&cfg, sink)?;
    report.write_to(&a.out)?;
    emit(&report.ablation_tsv())
}
