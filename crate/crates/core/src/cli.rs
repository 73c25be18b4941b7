//! Command-line front end: `ingest`, `train`, `generate`, `evaluate`,
//! `linkpred` and `make-toy`.
//!
//! Relative input paths resolve against `$DGGEN_DATA_DIR` and relative
//! output paths against `$DGGEN_OUT_DIR` when those are set. Every CSV that
//! the tools write gets a `<file>.schema` sidecar holding its feature schema,
//! which later commands pick up when `--schema` is not given.
//!
//! Only `ingest` remaps node tokens; it writes dense integer ids, and every
//! other command reads ids verbatim so that separate files share one
//! universe.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evaluation::{
    auroc, average_precision, compare_streams, negative_sampling, paired_histograms, plot, LinkPredictionReport,
    NegativeSampling,
};
use crate::event_store::{
    chronological_split, load_events, load_events_with, write_events, EventStream, FeatureSchema, Interaction, NodeIds,
};
use crate::generator::{generate, replay, score_labelled};
use crate::seeds::{stream_rng, Stream};
use crate::toy::{make_toy, ToyConfig};
use crate::trainer::{EpochRecord, Trainer};

pub const DATA_DIR_VAR: &str = "DGGEN_DATA_DIR";
pub const OUT_DIR_VAR: &str = "DGGEN_OUT_DIR";
pub const RUN_LOG_HEADER: &str = "epoch,mean_nll,sigma,wall_seconds";

#[derive(Parser, Debug)]
#[command(
    name = "dggen",
    version,
    about = "Learn, sample and evaluate temporal interaction graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a raw interaction file, remap node ids densely and split it
    /// chronologically into train/val/test files.
    Ingest(IngestArgs),
    /// Fit a model to an interaction file and write a checkpoint.
    Train(TrainArgs),
    /// Sample a synthetic stream from a checkpoint.
    Generate(GenerateArgs),
    /// Compare a synthetic stream to a real one.
    Evaluate(EvaluateArgs),
    /// Score held-out links against sampled negatives.
    Linkpred(LinkpredArgs),
    /// Write a synthetic bipartite stream with planted structure.
    MakeToy(MakeToyArgs),
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// Flat TOML configuration file; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    disable_attention: bool,
    #[arg(long)]
    disable_noise: bool,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(p) => RunConfig::load(input_path(p))?,
            None => RunConfig::default(),
        };
        let flags = RunConfig {
            seed: self.seed,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            disable_attention: self.disable_attention.then_some(true),
            disable_noise: self.disable_noise.then_some(true),
            ..RunConfig::default()
        };
        Ok(file.overridden_by(&flags))
    }
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Raw CSV: src,dst,t,state_label,features…
    #[arg(long)]
    input: PathBuf,
    /// Feature schema such as `cat:3,num`; defaults to the input's sidecar.
    #[arg(long)]
    schema: Option<String>,
    /// Directory receiving train.csv, val.csv, test.csv and nodes.txt.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    f_train: Option<f64>,
    #[arg(long)]
    f_val: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: Option<String>,
    /// Checkpoint path, rewritten after every epoch.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch CSV log; defaults to `<out>.log.csv`.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continue from this checkpoint with its stored configuration.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    num_interactions: Option<usize>,
    /// Fresh node pool size; defaults to the training graph's node count.
    #[arg(long)]
    node_pool_size: Option<usize>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    synth: PathBuf,
    #[arg(long)]
    schema: Option<String>,
    #[arg(long)]
    report: PathBuf,
    /// Directory for per-feature histogram and JS heat map SVGs.
    #[arg(long)]
    plots: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LinkpredArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    train: PathBuf,
    /// Optional validation stream replayed between train and test.
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, value_enum)]
    negatives: Option<NegativeArg>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum NegativeArg {
    Inductive,
    Random,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, Default)]
enum ToyPreset {
    /// 20 sources, 30 destinations in 10 blocks.
    #[default]
    Fidelity,
    /// 20 sources, 100 destinations in 20 blocks.
    Linkpred,
}

#[derive(Args, Debug)]
struct MakeToyArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ToyPreset::Fidelity)]
    preset: ToyPreset,
    /// TOML file with `ToyConfig` keys, applied over the preset.
    #[arg(long)]
    toy_config: Option<PathBuf>,
    #[arg(long)]
    n_events: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Toy settings for the fidelity experiment.
pub fn fidelity_toy(seed: u64) -> ToyConfig {
    ToyConfig {
        seed,
        ..ToyConfig::default()
    }
}

/// Toy settings for the link-prediction experiment: many destinations, so
/// that every source leaves most of them untouched in training.
pub fn linkpred_toy(seed: u64) -> ToyConfig {
    ToyConfig {
        n_src_nodes: 20,
        n_dst_nodes: 100,
        n_blocks: 20,
        n_events: 20_000,
        seed,
        ..ToyConfig::default()
    }
}

fn under(var: &str, path: &Path) -> PathBuf {
    match std::env::var_os(var) {
        Some(dir) if path.is_relative() && !dir.is_empty() => Path::new(&dir).join(path),
        _ => path.to_path_buf(),
    }
}

fn input_path(path: &Path) -> PathBuf {
    under(DATA_DIR_VAR, path)
}

fn output_path(path: &Path) -> Result<PathBuf> {
    let p = under(OUT_DIR_VAR, path);
    if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
    }
    Ok(p)
}

fn sidecar(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_os_string();
    s.push(".schema");
    PathBuf::from(s)
}

/// `--schema` if given, otherwise the `<csv>.schema` sidecar.
pub fn resolve_schema(explicit: Option<&str>, csv: &Path) -> Result<FeatureSchema> {
    if let Some(s) = explicit {
        return s.parse();
    }
    let path = sidecar(csv);
    match fs::read_to_string(&path) {
        Ok(text) => text.trim().parse(),
        Err(_) => Err(Error::Argument(format!(
            "no --schema given and no sidecar {} found",
            path.display()
        ))),
    }
}

/// Write the stream and its schema sidecar.
pub fn write_with_schema(stream: &EventStream, path: &Path) -> Result<()> {
    write_events(stream, path)?;
    let side = sidecar(path);
    fs::write(&side, format!("{}\n", stream.schema())).map_err(|e| Error::file(side, e))
}

fn load_verbatim(path: &Path, schema: Option<&str>) -> Result<EventStream> {
    let path = input_path(path);
    let schema = resolve_schema(schema, &path)?;
    load_events_with(&path, &schema, NodeIds::Verbatim)
}

/// Re-home a stream onto a larger node universe.
fn widen(stream: &EventStream, num_nodes: usize) -> Result<EventStream> {
    EventStream::new(
        stream.interactions().to_vec(),
        stream.schema().clone(),
        num_nodes,
        stream.origin_time(),
    )
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let input = input_path(&a.input);
    let schema = resolve_schema(a.schema.as_deref(), &input)?;
    let stream = load_events(&input, &schema)?;
    let file_cfg = match &a.config {
        Some(p) => RunConfig::load(input_path(p))?,
        None => RunConfig::default(),
    };
    let flags = RunConfig {
        f_train: a.f_train,
        f_val: a.f_val,
        ..RunConfig::default()
    };
    let (f_train, f_val) = file_cfg.overridden_by(&flags).split();
    let (train, val, test) = chronological_split(&stream, f_train, f_val)?;
    let dir = output_path(&a.out_dir.join("train.csv"))?;
    let dir = dir.parent().expect("joined path has a parent");
    for (name, part) in [("train.csv", &train), ("val.csv", &val), ("test.csv", &test)] {
        write_with_schema(part, &dir.join(name))?;
    }
    let labels = stream.node_labels().unwrap_or_default();
    let mut nodes = String::new();
    for (id, label) in labels.iter().enumerate() {
        nodes.push_str(&format!("{id},{label}\n"));
    }
    write_text(&dir.join("nodes.txt"), &nodes)?;
    log::info!(
        "{} interactions over {} nodes -> train {}, val {}, test {}",
        stream.len(),
        stream.num_nodes(),
        train.len(),
        val.len(),
        test.len()
    );
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let out = output_path(&a.out)?;
    let log_path = match &a.log {
        Some(p) => output_path(p)?,
        None => {
            let mut s = out.as_os_str().to_os_string();
            s.push(".log.csv");
            PathBuf::from(s)
        }
    };
    let (mut trainer, resumed);
    let stream;
    if let Some(resume) = &a.resume {
        let ckpt = Checkpoint::load(input_path(resume))?;
        let data = load_verbatim(&a.data, a.schema.as_deref())?;
        if data.schema() != &ckpt.model.schema {
            return Err(Error::Schema(format!(
                "data schema `{}` differs from checkpoint schema `{}`",
                data.schema(),
                ckpt.model.schema
            )));
        }
        stream = widen(&data, data.num_nodes().max(ckpt.states.len()))?;
        trainer = Trainer::resume(ckpt, &stream)?;
        resumed = true;
    } else {
        let cfg = a.overrides.resolve()?;
        stream = load_verbatim(&a.data, a.schema.as_deref())?;
        trainer = Trainer::new(&cfg.model(), &cfg.train(), &stream)?;
        resumed = false;
    }

    let mut log_text = if resumed {
        fs::read_to_string(&log_path).unwrap_or_else(|_| format!("{RUN_LOG_HEADER}\n"))
    } else {
        format!("{RUN_LOG_HEADER}\n")
    };
    write_text(&log_path, &log_text)?;
    if trainer.is_done() {
        trainer.checkpoint().save(&out)?;
    }
    while !trainer.is_done() {
        if let Some(record) = trainer.step()? {
            log_epoch(&record);
            log_text.push_str(&record.log_line());
            log_text.push('\n');
            write_text(&log_path, &log_text)?;
            trainer.checkpoint().save(&out)?;
        }
    }
    Ok(())
}

fn log_epoch(r: &EpochRecord) {
    log::info!(
        "epoch {} mean nll {:.4} sigma {:.4} ({:.1}s)",
        r.epoch,
        r.mean_nll,
        r.sigma,
        r.wall_seconds
    );
}

fn generate_cmd(a: &GenerateArgs) -> Result<()> {
    let ckpt = Checkpoint::load(input_path(&a.checkpoint))?;
    let mut cfg = a.overrides.resolve()?;
    if cfg.batch_size.is_none() {
        cfg.batch_size = Some(ckpt.train_config.batch_size);
    }
    let flags = RunConfig {
        num_interactions: a.num_interactions,
        node_pool_size: a.node_pool_size,
        ..RunConfig::default()
    };
    let gen_cfg = cfg.overridden_by(&flags).generation(ckpt.states.len());
    let stream = generate(&ckpt.model, &gen_cfg)?;
    write_with_schema(&stream, &output_path(&a.out)?)?;
    log::info!(
        "wrote {} interactions over a pool of {}",
        stream.len(),
        gen_cfg.node_pool_size
    );
    Ok(())
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let real = load_verbatim(&a.real, a.schema.as_deref())?;
    let synth = load_verbatim(&a.synth, a.schema.as_deref())?;
    let cfg = match &a.config {
        Some(p) => RunConfig::load(input_path(p))?,
        None => RunConfig::default(),
    };
    let eval_cfg = cfg.evaluation();
    let report = compare_streams(&real, &synth, &eval_cfg)?;
    write_text(&output_path(&a.report)?, &report.to_json()?)?;
    if let Some(dir) = &a.plots {
        let dir = output_path(&dir.join("x"))?;
        let dir = dir.parent().expect("joined path has a parent");
        let (hr, hs) = paired_histograms(&real, &synth, &eval_cfg)?;
        let names: Vec<String> = real.schema().features().iter().map(|f| f.name.clone()).collect();
        plot::write_plots(dir, &names, &hr.single, &hs.single, &report.js)?;
    }
    Ok(())
}

/// Link-prediction metrics of a trained model: memory is warmed up by
/// replaying `train` (and `val`), then test positives and their sampled
/// negatives are scored chronologically by `log p(dst | src)` over the
/// whole node universe.
pub fn link_prediction(
    ckpt: &Checkpoint,
    train: &EventStream,
    val: Option<&EventStream>,
    test: &EventStream,
    mode: NegativeSampling,
    batch_size: usize,
    seed: u64,
) -> Result<LinkPredictionReport> {
    let model = &ckpt.model;
    let universe = [Some(train), val, Some(test)]
        .into_iter()
        .flatten()
        .map(EventStream::num_nodes)
        .max()
        .unwrap_or(1);
    let (train, test) = (widen(train, universe)?, widen(test, universe)?);
    let mut states = model.fresh_states(universe, train.origin_time());
    replay(model, &mut states, train.interactions(), batch_size)?;
    let mut history: Vec<Interaction> = train.interactions().to_vec();
    if let Some(v) = val {
        replay(model, &mut states, v.interactions(), batch_size)?;
        history.extend_from_slice(v.interactions());
    }
    let seen = EventStream::new(history, train.schema().clone(), universe, train.origin_time())?;
    let mut rng = stream_rng(seed, Stream::Evaluate);
    let sample = negative_sampling(&seen, &test, mode, &mut rng)?;
    if sample.links.is_empty() {
        return Err(Error::Argument("no test link has an eligible negative".into()));
    }
    // Keep positives and negatives of one chunk together.
    let scores = score_labelled(model, &mut states, &sample.links, 2 * batch_size)?;
    let labels: Vec<bool> = sample.links.iter().map(|l| l.positive).collect();
    let positives = labels.iter().filter(|&&l| l).count();
    Ok(LinkPredictionReport {
        average_precision: average_precision(&labels, &scores)?,
        auroc: auroc(&labels, &scores)?,
        positives,
        negatives: labels.len() - positives,
        skipped: sample.skipped,
    })
}

fn linkpred_cmd(a: &LinkpredArgs) -> Result<()> {
    let ckpt = Checkpoint::load(input_path(&a.checkpoint))?;
    let schema = ckpt.model.schema.to_string();
    let train = load_verbatim(&a.train, Some(&schema))?;
    let val = a.val.as_ref().map(|p| load_verbatim(p, Some(&schema))).transpose()?;
    let test = load_verbatim(&a.test, Some(&schema))?;
    let mut cfg = a.overrides.resolve()?;
    if let Some(n) = a.negatives {
        cfg.negative_sampling = Some(match n {
            NegativeArg::Inductive => NegativeSampling::Inductive,
            NegativeArg::Random => NegativeSampling::Random,
        });
    }
    let batch = cfg.batch_size.unwrap_or(ckpt.train_config.batch_size);
    let seed = cfg.seed.unwrap_or(ckpt.train_config.seed);
    let report = link_prediction(&ckpt, &train, val.as_ref(), &test, cfg.negatives(), batch, seed)?;
    let json = serde_json::to_string_pretty(&report)?;
    write_text(&output_path(&a.report)?, &json)
}

fn make_toy_cmd(a: &MakeToyArgs) -> Result<()> {
    let seed = a.seed.unwrap_or(0);
    let mut toy = match a.preset {
        ToyPreset::Fidelity => fidelity_toy(seed),
        ToyPreset::Linkpred => linkpred_toy(seed),
    };
    if let Some(p) = &a.toy_config {
        let p = input_path(p);
        let text = fs::read_to_string(&p).map_err(|e| Error::file(&p, e))?;
        let mut table: toml::Table = toml::to_string(&toy)
            .map(|s| s.parse::<toml::Table>().expect("serialized table parses"))
            .map_err(|e| Error::Config(e.to_string()))?;
        let over: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        table.extend(over);
        toy = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    }
    if let Some(n) = a.n_events {
        toy.n_events = n;
    }
    if let Some(s) = a.seed {
        toy.seed = s;
    }
    let out = output_path(&a.out)?;
    let stream = make_toy(&toy, None)?;
    write_with_schema(&stream, &out)
}

/// Parse `argv` (program name first) and run the command. Returns the exit
/// code: 0 on success, 2 on usage errors, 1 on any other failure.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Train(a) => train_cmd(a),
        Command::Generate(a) => generate_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Linkpred(a) => linkpred_cmd(a),
        Command::MakeToy(a) => make_toy_cmd(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "dggen: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parser_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run_command(["dggen", "frobnicate"]), 2);
        assert_eq!(run_command(["dggen", "train", "--bogus"]), 2);
        assert_eq!(run_command(["dggen"]), 2);
    }

    #[test]
    fn missing_file_exits_1() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.csv");
        let code = run_command([
            "dggen",
            "evaluate",
            "--real",
            missing.to_str().unwrap(),
            "--synth",
            missing.to_str().unwrap(),
            "--schema",
            "num",
            "--report",
            dir.path().join("r.json").to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
    }

    #[test]
    fn schema_from_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("a.csv");
        fs::write(sidecar(&csv), "cat:2,num\n").unwrap();
        assert_eq!(resolve_schema(None, &csv).unwrap(), "cat:2,num".parse().unwrap());
        assert_eq!(resolve_schema(Some("num"), &csv).unwrap(), "num".parse().unwrap());
        assert!(resolve_schema(None, &dir.path().join("b.csv")).is_err());
    }
}
