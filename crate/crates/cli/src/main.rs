use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use modeclust::adapt::{self, DEFAULT_EXPANSION, DEFAULT_THETA};
use modeclust::dataset::{synth_generate, SynthConfig};
use modeclust::dynamics;
use modeclust::embedder::{self, RffConfig};
use modeclust::jsonl;
use modeclust::losses::{self, InfoNceVariant, ViewBatch};
use modeclust::metrics::{self, MetricReport};
use modeclust::sweep::{self, SweepConfig};
use modeclust::{Dataset, EmbeddingSet};

const SEED_ENV: &str = "MODECLUST_SEED";

#[derive(Parser)]
#[command(name = "modeclust", version, about = "Unsupervised behavioral-mode discovery for trajectory datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic multi-mode dataset.
    Synth(SynthArgs),
    /// Quantile-normalize a dataset and write trajectory embeddings.
    Embed(EmbedArgs),
    /// Discover modes without knowing their number.
    Cluster(ClusterArgs),
    /// Recover a baseline on seen data and assign an online stream.
    Adapt(AdaptArgs),
    /// Score a partition against labels and/or embeddings.
    Eval(EvalArgs),
    /// Evaluate the trajectory-level contrastive loss on a view batch.
    LossEval(LossEvalArgs),
}

#[derive(Args, Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u64).range(1..))]
    modes: u64,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    per_mode: u64,
    #[arg(long, default_value_t = 50)]
    horizon: usize,
    #[arg(long, default_value_t = 2)]
    state_dim: usize,
    #[arg(long, default_value_t = 1)]
    action_dim: usize,
    #[arg(long, default_value_t = 5.0)]
    separation: f64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    /// Output dataset (JSONL).
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Serialize)]
struct EmbedArgs {
    /// Input dataset (JSONL).
    #[arg(short, long)]
    input: PathBuf,
    /// Output embeddings (JSONL).
    #[arg(short, long)]
    output: PathBuf,
    /// Behavioral features output; defaults to `<output stem>.features.jsonl`.
    #[arg(long, conflicts_with = "no_features")]
    features_out: Option<PathBuf>,
    /// Skip behavioral feature extraction.
    #[arg(long)]
    no_features: bool,
    #[arg(long, default_value_t = embedder::DEFAULT_STATE_FEATURES)]
    state_features: usize,
    #[arg(long, default_value_t = embedder::DEFAULT_ACTION_FEATURES)]
    action_features: usize,
    #[arg(long, default_value_t = embedder::DEFAULT_STATE_SCALE)]
    state_scale: f64,
    #[arg(long, default_value_t = embedder::DEFAULT_ACTION_SCALE)]
    action_scale: f64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
}

/// Grid overrides; unset values follow the dataset-size defaults.
#[derive(Args, Serialize, Clone)]
struct GridArgs {
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long, default_value_t = sweep::DEFAULT_N_K)]
    n_k: usize,
    /// Comma-separated resolution values.
    #[arg(long, value_delimiter = ',')]
    gammas: Option<Vec<f64>>,
    #[arg(long)]
    min_cluster_size: Option<usize>,
    /// Edge-weight temperature.
    #[arg(long, default_value_t = modeclust::graph::DEFAULT_SIGMA)]
    sigma: f64,
    /// Behavioral reweighting strength.
    #[arg(long, default_value_t = modeclust::graph::DEFAULT_BEHAVIOR_ALPHA)]
    alpha: f64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
}

impl GridArgs {
    fn config(&self, n: usize) -> SweepConfig {
        let mut cfg = SweepConfig::for_n(n);
        if let Some(k) = self.k_min {
            cfg.k_min = k;
        }
        if let Some(k) = self.k_max {
            cfg.k_max = k;
        }
        if let Some(g) = &self.gammas {
            cfg.gammas = g.clone();
        }
        if let Some(m) = self.min_cluster_size {
            cfg.min_cluster_size = m;
        }
        cfg.n_k = self.n_k;
        cfg.sigma = self.sigma;
        cfg.behavior_alpha = self.alpha;
        cfg.seed = self.seed;
        cfg
    }
}

#[derive(Args, Serialize)]
struct ClusterArgs {
    #[arg(short, long)]
    embeddings: PathBuf,
    /// Behavioral features (JSONL); enables the redundancy gate.
    #[arg(short, long)]
    features: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Assignment threshold recorded for later adaptation runs.
    #[arg(long, default_value_t = DEFAULT_THETA)]
    theta: f64,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args, Serialize)]
struct AdaptArgs {
    /// Embeddings of the seen (baseline) trajectories.
    #[arg(long)]
    seen: PathBuf,
    /// Embeddings streamed after the baseline.
    #[arg(long)]
    online: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k_baseline: u64,
    #[arg(long, default_value_t = DEFAULT_THETA)]
    theta: f64,
    #[arg(long, default_value_t = DEFAULT_EXPANSION)]
    expansion: f64,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(short, long)]
    partition: PathBuf,
    /// Labelled dataset providing ground truth.
    #[arg(short, long)]
    dataset: Option<PathBuf>,
    /// Embeddings for the silhouette.
    #[arg(short, long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    nmi: bool,
    #[arg(long)]
    ari: bool,
    #[arg(long)]
    silhouette: bool,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Serialize)]
struct LossEvalArgs {
    /// JSON file with `view1` and `view2` arrays of unit vectors.
    #[arg(short, long)]
    input: PathBuf,
    #[arg(long, default_value_t = losses::DEFAULT_TEMPERATURE)]
    rho: f64,
    /// Use the variant without the positive in the denominator.
    #[arg(long)]
    literal: bool,
    #[arg(short, long)]
    output: PathBuf,
}

/// Partition artifact: labels in the order of `ids`.
#[derive(Serialize, Deserialize)]
struct PartitionFile {
    ids: Vec<String>,
    labels: Vec<i64>,
    n_clusters: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: Option<u64>,
    config: Value,
    inputs: BTreeMap<&'a str, String>,
    outputs: BTreeMap<&'a str, String>,
    duration_secs: f64,
}

struct Run<'a> {
    command: &'a str,
    started: Instant,
    inputs: BTreeMap<&'a str, String>,
    outputs: BTreeMap<&'a str, String>,
}

impl<'a> Run<'a> {
    fn new(command: &'a str) -> Self {
        Self {
            command,
            started: Instant::now(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    fn input(&mut self, key: &'a str, p: &Path) {
        self.inputs.insert(key, p.display().to_string());
    }

    fn output(&mut self, key: &'a str, p: &Path) {
        self.outputs.insert(key, p.display().to_string());
    }

    fn finish(self, path: &Path, seed: Option<u64>, config: impl Serialize) -> Result<()> {
        let m = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config: serde_json::to_value(config)?,
            inputs: self.inputs,
            outputs: self.outputs,
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        jsonl::write_json(path, &m)?;
        Ok(())
    }
}

fn manifest_beside(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut run = Run::new("synth");
    let cfg = SynthConfig {
        n_modes: a.modes as usize,
        per_mode: a.per_mode as usize,
        horizon: a.horizon,
        state_dim: a.state_dim,
        action_dim: a.action_dim,
        separation: a.separation,
        seed: a.seed,
    };
    synth_generate(&cfg)?.save(&a.output)?;
    run.output("dataset", &a.output);
    run.finish(&manifest_beside(&a.output), Some(a.seed), a)
}

fn embed(a: &EmbedArgs) -> Result<()> {
    let mut run = Run::new("embed");
    run.input("dataset", &a.input);
    let data = Dataset::load(&a.input)?;
    let cfg = RffConfig {
        state_features: a.state_features,
        action_features: a.action_features,
        state_scale: a.state_scale,
        action_scale: a.action_scale,
        seed: a.seed,
    };
    embedder::normalize_and_embed(&data, &cfg)?.save(&a.output)?;
    run.output("embeddings", &a.output);
    if !a.no_features {
        let path = a.features_out.clone().unwrap_or_else(|| {
            let stem = a.output.file_stem().unwrap_or_default().to_string_lossy();
            a.output.with_file_name(format!("{stem}.features.jsonl"))
        });
        let feats = dynamics::extract_all(&data)?;
        dynamics::save_features(&path, &data.ids(), &feats)?;
        run.output("features", &path);
    }
    run.finish(&manifest_beside(&a.output), Some(a.seed), a)
}

fn cluster(a: &ClusterArgs) -> Result<()> {
    let mut run = Run::new("cluster");
    run.input("embeddings", &a.embeddings);
    let emb = EmbeddingSet::load(&a.embeddings)?;
    let feats = match &a.features {
        Some(p) => {
            run.input("features", p);
            Some(dynamics::load_features(p)?)
        }
        None => None,
    };
    let cfg = a.grid.config(emb.len());
    let found = sweep::discover_modes(&emb, &cfg, feats.as_ref())?;
    let registry = adapt::build_registry(&emb, &found.partition)?;

    create_dir(&a.out_dir)?;
    let partition_path = a.out_dir.join("partition.json");
    let registry_path = a.out_dir.join("registry.json");
    let report_path = a.out_dir.join("sweep.json");
    jsonl::write_json(
        &partition_path,
        &PartitionFile {
            ids: emb.ids().into_iter().map(String::from).collect(),
            labels: found.partition.labels().to_vec(),
            n_clusters: found.partition.n_clusters(),
        },
    )?;
    registry.save(&registry_path)?;
    jsonl::write_json(&report_path, &found)?;
    run.output("partition", &partition_path);
    run.output("registry", &registry_path);
    run.output("sweep", &report_path);
    let config = json!({ "args": a, "resolved": cfg });
    run.finish(&a.out_dir.join("manifest.json"), Some(a.grid.seed), config)
}

fn adapt_cmd(a: &AdaptArgs) -> Result<()> {
    let mut run = Run::new("adapt");
    run.input("seen", &a.seen);
    run.input("online", &a.online);
    let seen = EmbeddingSet::load(&a.seen)?;
    let online = EmbeddingSet::load(&a.online)?;
    let cfg = a.grid.config(seen.len());
    let res = adapt::adapt(&seen, &online, a.k_baseline as usize, a.theta, a.expansion, &cfg)?;

    create_dir(&a.out_dir)?;
    let result_path = a.out_dir.join("adaptation.json");
    let registry_path = a.out_dir.join("registry.json");
    jsonl::write_json(&result_path, &res)?;
    res.registry.save(&registry_path)?;
    run.output("adaptation", &result_path);
    run.output("registry", &registry_path);
    let config = json!({ "args": a, "resolved": cfg });
    run.finish(&a.out_dir.join("manifest.json"), Some(a.grid.seed), config)
}

fn eval(a: &EvalArgs) -> Result<()> {
    let mut run = Run::new("eval");
    run.input("partition", &a.partition);
    let part: PartitionFile = jsonl::read_json(&a.partition)?;
    if part.ids.len() != part.labels.len() {
        bail!("partition has {} ids but {} labels", part.ids.len(), part.labels.len());
    }
    let any = a.nmi || a.ari || a.silhouette;
    let want_truth = a.nmi || a.ari || (!any && a.dataset.is_some());
    let want_sil = a.silhouette || (!any && a.embeddings.is_some());

    let truth = if want_truth {
        let Some(path) = &a.dataset else {
            bail!("--dataset is required for NMI/ARI");
        };
        run.input("dataset", path);
        let data = Dataset::load(path)?;
        let Some(labels) = data.labels() else {
            return Err(modeclust::Error::LabelsRequired(format!(
                "{} has unlabelled trajectories; NMI/ARI need ground-truth labels",
                path.display()
            ))
            .into());
        };
        let by_id: HashMap<String, i64> = data.ids().into_iter().zip(labels).collect();
        let aligned = part
            .ids
            .iter()
            .map(|id| by_id.get(id).copied().with_context(|| format!("id `{id}` not in dataset")))
            .collect::<Result<Vec<i64>>>()?;
        Some(aligned)
    } else {
        None
    };
    let silhouette = if want_sil {
        let Some(path) = &a.embeddings else {
            bail!("--embeddings is required for the silhouette");
        };
        run.input("embeddings", path);
        let emb = EmbeddingSet::load(path)?;
        let index: HashMap<&str, usize> = emb.ids().into_iter().enumerate().map(|(i, id)| (id, i)).collect();
        let order = part
            .ids
            .iter()
            .map(|id| index.get(id.as_str()).copied().with_context(|| format!("id `{id}` not in embeddings")))
            .collect::<Result<Vec<usize>>>()?;
        Some(metrics::silhouette(&emb.select(&order)?, &part.labels)?)
    } else {
        None
    };
    let nmi_on = a.nmi || (!any && truth.is_some());
    let ari_on = a.ari || (!any && truth.is_some());
    let report = MetricReport {
        nmi: match &truth {
            Some(t) if nmi_on => Some(metrics::nmi(&part.labels, t)?),
            _ => None,
        },
        ari: match &truth {
            Some(t) if ari_on => Some(metrics::ari(&part.labels, t)?),
            _ => None,
        },
        silhouette,
        n_clusters_pred: metrics::count_clusters(&part.labels),
        n_clusters_true: truth.as_deref().map(metrics::count_clusters),
    };
    jsonl::write_json(&a.output, &report)?;
    run.output("report", &a.output);
    run.finish(&manifest_beside(&a.output), None, a)
}

fn loss_eval(a: &LossEvalArgs) -> Result<()> {
    let mut run = Run::new("loss-eval");
    run.input("views", &a.input);
    let batch: ViewBatch = jsonl::read_json(&a.input)?;
    batch.validate()?;
    let variant = if a.literal {
        InfoNceVariant::Literal
    } else {
        InfoNceVariant::NtXent
    };
    let cls = losses::cls_loss_with(&batch, a.rho, variant)?;
    let report = json!({
        "cls": cls,
        "rho": a.rho,
        "variant": if a.literal { "literal" } else { "nt_xent" },
        "n": batch.len(),
    });
    jsonl::write_json(&a.output, &report)?;
    run.output("report", &a.output);
    run.finish(&manifest_beside(&a.output), None, a)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Embed(a) => embed(a),
        Command::Cluster(a) => cluster(a),
        Command::Adapt(a) => adapt_cmd(a),
        Command::Eval(a) => eval(a),
        Command::LossEval(a) => loss_eval(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
