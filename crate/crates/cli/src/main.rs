mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use relatt_core::eval::{evaluate, FilterIndex};
use relatt_core::graph::{
    init_random_features, load_features, load_triples, write_features, DatasetSplit, FeatureMode, FeatureSource,
    KnowledgeGraph, Triple,
};
use relatt_core::matching::{
    evaluate_matching, feature_baseline, infer_graph, load_query_dir, load_reference, ReferenceEmbeddings,
};
use relatt_core::model::TrainedModel;
use relatt_core::numeric::Checkpoint;
use relatt_core::synthetic::{MatchingFixture, MatchingFixtureConfig};
use relatt_core::train::{history_csv, train, TrainOutcome};
use serde_json::{json, Value};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "relatt", version, about = "Relation-aware attention GCN for knowledge graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and evaluate it on the test split.
    Train(TrainArgs),
    /// Train one model per combination of `a | b` config values.
    Grid(TrainArgs),
    /// Link-prediction metrics of a checkpoint on a dataset's test split.
    Evaluate(EvaluateArgs),
    /// Match query graphs against a reference graph.
    Match(MatchArgs),
    /// Write output embeddings for every entity of a graph.
    Infer(InferArgs),
    /// Generate a synthetic reference graph, dataset and query set.
    Synth(SynthArgs),
    /// Print every config key with its default value.
    Defaults,
}

#[derive(Args)]
struct TrainArgs {
    /// `key = value` config file; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory with train/valid/test.tsv, or triples.tsv to split at
    /// random; an optional features.txt supplies fixed entity features.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override a config key, e.g. `--set lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Seed for every random stream; beats RELATT_SEED and the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory with train/valid/test.tsv (and features.txt for models
    /// trained on file features).
    #[arg(long)]
    data: PathBuf,
    /// Report path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Rank against all corruptions instead of filtering known triples.
    #[arg(long)]
    raw: bool,
    /// Include per-triple ranks in the report.
    #[arg(long)]
    ranks: bool,
}

#[derive(Args)]
struct MatchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory with triples.tsv and features.txt.
    #[arg(long)]
    reference: PathBuf,
    /// Directory with one subdirectory per query graph.
    #[arg(long)]
    queries: PathBuf,
    /// Fraction of the matching entity's edges kept, in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    th: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed of the neighbor sampling; defaults to RELATT_SEED, then the
    /// checkpoint's training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Score raw features only, without the model.
    #[arg(long)]
    baseline: bool,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory with triples.tsv and features.txt.
    #[arg(long)]
    graph: PathBuf,
    /// Embeddings in the features.txt layout.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    entities: usize,
    #[arg(long, default_value_t = 4)]
    relations: usize,
    #[arg(long, default_value_t = 800)]
    triples: usize,
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    #[arg(long, default_value_t = 40)]
    queries: usize,
    #[arg(long, default_value_t = 2)]
    hops: usize,
    /// Half-width of the uniform noise added to query features.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Grid(a) => cmd_grid(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Match(a) => cmd_match(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Defaults => emit(None, config::defaults_text().trim_end()),
    };
    if let Err(e) = result {
        eprintln!("{}", json!({ "error": format!("{e:#}") }));
        std::process::exit(1);
    }
}

/// Writes through a sibling temporary file so readers never see a partial
/// file.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, &format!("{text}\n")),
        None => match writeln!(std::io::stdout(), "{text}") {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
            _ => Ok(()),
        },
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("RELATT_SEED") {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| {
            format!("RELATT_SEED: expected an unsigned 64-bit integer, got `{v}`")
        })?)),
        Err(_) => Ok(None),
    }
}

fn load_model(path: &Path) -> Result<(Checkpoint, TrainedModel)> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let model = TrainedModel::from_checkpoint(&ck).with_context(|| format!("checkpoint {}", path.display()))?;
    Ok((ck, model))
}

fn load_split(dir: &Path, cfg: &RunConfig) -> Result<DatasetSplit> {
    if dir.join("train.tsv").exists() {
        return DatasetSplit::load(dir).with_context(|| format!("loading dataset {}", dir.display()));
    }
    let path = dir.join("triples.tsv");
    if !path.exists() {
        bail!("{}: expected train.tsv, valid.tsv and test.tsv, or triples.tsv", dir.display());
    }
    let (graph, _) = load_triples(&path).with_context(|| format!("loading {}", path.display()))?;
    Ok(DatasetSplit::random(graph, cfg.real("split_train"), cfg.real("split_valid"), cfg.seed())?)
}

fn input_features(dir: &Path, split: &DatasetSplit, cfg: &RunConfig) -> Result<FeatureSource> {
    let path = dir.join("features.txt");
    if path.exists() {
        Ok(load_features(&path, &split.graph.entities)?)
    } else {
        Ok(init_random_features(split.graph.num_entities(), cfg.count("feature_dim"), cfg.seed())?)
    }
}

fn run_training(cfg: &RunConfig, data: &Path, out: &Path) -> Result<(TrainOutcome, Value)> {
    let tc = cfg.train_config()?;
    let started = Instant::now();
    let split = load_split(data, cfg)?;
    let features = input_features(data, &split, cfg)?;
    let load_s = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let outcome = train(&split, &features, &tc).context("training")?;
    let train_s = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let model = &outcome.model;
    let emb = model.embed(&model.augment(split.graph.num_entities(), &split.train), &features)?;
    let filter = FilterIndex::new(split.all_triples());
    let report = evaluate(
        &split.test,
        &emb,
        model.params.distmult_diag(),
        cfg.flag("filtered").then_some(&filter),
    );
    let eval_s = started.elapsed().as_secs_f64();

    let hash = cfg.hash();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    model
        .to_checkpoint(&hash, cfg.values())
        .save(&out.join("checkpoint.json"))
        .context("saving checkpoint")?;
    write_atomic(&out.join("history.csv"), &history_csv(&outcome.history))?;
    write_atomic(&out.join("report.json"), &format!("{}\n", report.to_json(cfg.flag("save_ranks"))))?;
    let summary = json!({
        "test_mrr": report.mrr,
        "best_epoch": outcome.best_epoch,
        "best_monitor_mrr": outcome.best_mrr,
        "epochs_run": outcome.epochs_run,
        "stopped_early": outcome.stopped_early,
    });
    let manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg.values(),
        "config_hash": hash,
        "seed": cfg.seed(),
        "data": {
            "path": data.display().to_string(),
            "entities": split.graph.num_entities(),
            "relations": split.graph.num_relations(),
            "train": split.train.len(),
            "valid": split.valid.len(),
            "test": split.test.len(),
            "features": match features.mode() {
                FeatureMode::File => "file",
                FeatureMode::Table => "table",
            },
            "feature_dim": features.dim(),
        },
        "result": summary,
        "timings_s": { "load": load_s, "train": train_s, "evaluate": eval_s },
    });
    write_atomic(&out.join("manifest.json"), &format!("{}\n", serde_json::to_string_pretty(&manifest)?))?;
    Ok((outcome, summary))
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let raw = config::load(a.config.as_deref(), &a.sets, a.seed)?;
    let cfg = RunConfig::resolve(&config::single(&raw)?)?;
    let (_, summary) = run_training(&cfg, &a.data, &a.out)?;
    println!("{summary}");
    Ok(())
}

fn cmd_grid(a: &TrainArgs) -> Result<()> {
    let raw = config::load(a.config.as_deref(), &a.sets, a.seed)?;
    let runs = config::expand_grid(&raw)
        .iter()
        .map(RunConfig::resolve)
        .collect::<Result<Vec<_>>>()?;
    let axes: Vec<&String> = raw.iter().filter(|(_, v)| v.len() > 1).map(|(k, _)| k).collect();
    let mut csv = String::from("run,config_hash");
    for k in &axes {
        csv.push(',');
        csv.push_str(k);
    }
    csv.push_str(",best_monitor_mrr,test_mrr\n");
    for (i, cfg) in runs.iter().enumerate() {
        let name = format!("run-{i:03}");
        let (outcome, summary) = run_training(cfg, &a.data, &a.out.join(&name))?;
        csv.push_str(&format!("{name},{}", cfg.hash()));
        for k in &axes {
            csv.push(',');
            csv.push_str(&cfg.values()[k.as_str()]);
        }
        csv.push_str(&format!(",{},{}\n", outcome.best_mrr, summary["test_mrr"]));
        eprintln!("{name}: {summary}");
    }
    write_atomic(&a.out.join("grid.csv"), &csv)
}

/// Re-indexes a dataset onto the checkpoint's vocabularies.
fn remap_split(split: &DatasetSplit, model: &TrainedModel) -> Result<DatasetSplit> {
    let g = &split.graph;
    let map = |ts: &[Triple]| -> Result<Vec<Triple>> {
        ts.iter()
            .map(|t| {
                let (h, r, tl) = g.triple_strings(t);
                let ent = |id: &str| {
                    model
                        .entities
                        .index_of(id)
                        .with_context(|| format!("entity `{id}` is not in the checkpoint vocabulary"))
                };
                let rel = model
                    .relations
                    .index_of(r)
                    .with_context(|| format!("relation `{r}` is not in the checkpoint vocabulary"))?;
                Ok(Triple::new(ent(h)?, rel, ent(tl)?))
            })
            .collect()
    };
    let (train, valid, test) = (map(&split.train)?, map(&split.valid)?, map(&split.test)?);
    let graph = KnowledgeGraph {
        entities: model.entities.clone(),
        relations: model.relations.clone(),
        triples: train.iter().chain(&valid).chain(&test).copied().collect(),
    };
    Ok(DatasetSplit::from_parts(graph, train, valid, test)?)
}

fn model_features(model: &TrainedModel, dir: &Path) -> Result<FeatureSource> {
    match model.feature_mode {
        FeatureMode::File => {
            let path = dir.join("features.txt");
            Ok(load_features(&path, &model.entities).with_context(|| format!("loading {}", path.display()))?)
        }
        FeatureMode::Table => {
            let table = model.params.entity_table().context("checkpoint lacks its entity table")?;
            Ok(FeatureSource::new(FeatureMode::Table, table.clone())?)
        }
    }
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let (_, model) = load_model(&a.checkpoint)?;
    let split = DatasetSplit::load(&a.data).with_context(|| format!("loading dataset {}", a.data.display()))?;
    let split = remap_split(&split, &model)?;
    let features = model_features(&model, &a.data)?;
    let emb = model.embed(&model.augment(split.graph.num_entities(), &split.train), &features)?;
    let filter = FilterIndex::new(split.all_triples());
    let report = evaluate(&split.test, &emb, model.params.distmult_diag(), (!a.raw).then_some(&filter));
    emit(a.out.as_deref(), &report.to_json(a.ranks))
}

fn cmd_match(a: &MatchArgs) -> Result<()> {
    let (ck, model) = load_model(&a.checkpoint)?;
    let (graph, features) = load_reference(&a.reference, &model.relations)
        .with_context(|| format!("loading reference {}", a.reference.display()))?;
    let queries = load_query_dir(&a.queries, &model.relations)
        .with_context(|| format!("loading queries {}", a.queries.display()))?;
    let report = if a.baseline {
        feature_baseline(&queries, &graph.entities, &features)?
    } else {
        let seed = match a.seed.or(env_seed()?) {
            Some(s) => s,
            None => ck.config.get("seed").and_then(|s| s.parse().ok()).unwrap_or(42),
        };
        let reference = ReferenceEmbeddings::compute(&model, &graph, &features)?;
        evaluate_matching(&queries, &model, &reference, a.th, seed)?
    };
    emit(a.out.as_deref(), &report.to_json())
}

fn cmd_infer(a: &InferArgs) -> Result<()> {
    let (_, model) = load_model(&a.checkpoint)?;
    let (graph, features) =
        load_reference(&a.graph, &model.relations).with_context(|| format!("loading graph {}", a.graph.display()))?;
    let emb = infer_graph(&model, &graph, &features)?;
    Ok(write_features(&a.out, graph.entities.ids(), &emb)?)
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = MatchingFixtureConfig {
        entities: a.entities,
        relations: a.relations,
        triples: a.triples,
        feature_dim: a.feature_dim,
        queries: a.queries,
        hops: a.hops,
        noise: a.noise,
        seed: a.seed,
    };
    let fixture = MatchingFixture::generate(&cfg)?;
    fixture.write(&a.out)?;
    let split = DatasetSplit::random(fixture.reference.clone(), 0.8, 0.1, a.seed)?;
    let kg = a.out.join("kg");
    split.write(&kg)?;
    write_features(&kg.join("features.txt"), fixture.reference.entities.ids(), fixture.features.values())?;
    let counts: BTreeMap<&str, usize> = [
        ("train", split.train.len()),
        ("valid", split.valid.len()),
        ("test", split.test.len()),
        ("queries", fixture.queries.len()),
    ]
    .into_iter()
    .collect();
    println!("{}", json!(counts));
    Ok(())
}
