use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use selector_core::audio::{read_wav_mono, resample, write_wav};
use selector_core::eval::{
    eval_generalization, eval_mixture_baseline, eval_pit_oracle, eval_removal, eval_selection, EvalReport,
    RemovalScheme, SelectionMode,
};
use selector_core::nn::{load_checkpoint, Checkpoint, ModelConfig, PitConfig, SelectorConfig, TrunkConfig};
use selector_core::removal::{remove_direct, remove_indirect};
use selector_core::scene::{
    build_dataset, ClassPolicy, CorpusIndex, DatasetConfig, Manifest, SceneSource, Split,
};
use selector_core::selector::forward;
use selector_core::train::{fit, FitOptions, TrainConfig};
use selector_core::{ClassVector, Waveform};

/// Class-conditioned acoustic event selection and removal.
#[derive(Parser, Debug)]
#[command(name = "sound-selector", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesise a dataset of polyphonic scenes with per-class stems.
    SynthData(SynthArgs),
    /// Train a selector, PIT baseline or direct removal network.
    Train(TrainArgs),
    /// Score a checkpoint (or the unprocessed mixture) on a dataset.
    Evaluate(EvalArgs),
    /// Extract the selected classes from a mixture.
    Select(InferArgs),
    /// Remove the selected classes from a mixture.
    Remove(RemoveArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PolicyArg {
    Mix3,
    #[value(name = "mix3-5")]
    Mix35,
    /// Use the class policy from --config.
    Custom,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Dataset configuration (JSON); flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of scenes.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, value_enum, default_value = "mix3")]
    policy: PolicyArg,
    /// Data split, which also selects the random stream.
    #[arg(long)]
    split: Option<Split>,
    /// Number of synthetic classes (ignored with --corpus).
    #[arg(long, default_value_t = 5)]
    num_classes: usize,
    /// Clip corpus laid out as <root>/<split>/<class>/*.wav; synthetic
    /// classes are used when absent.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Scene length in seconds.
    #[arg(long)]
    duration_s: Option<f64>,
    /// Events per scene.
    #[arg(long)]
    events: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModelKindArg {
    Selector,
    Pit,
    RemovalDirect,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ArchArg {
    Paper,
    Toy,
    Miniature,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_enum)]
    model: ModelKindArg,
    /// Training manifest (file or dataset directory).
    #[arg(long)]
    data: PathBuf,
    /// Dev manifest used for best-checkpoint selection.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Training configuration, JSON or key = value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for checkpoints and metrics.csv.
    #[arg(long)]
    out: PathBuf,
    /// Continue from the newest checkpoint in --out.
    #[arg(long)]
    resume: bool,
    /// Network size preset.
    #[arg(long, value_enum, default_value = "toy")]
    arch: ArchArg,
    /// Full model configuration (JSON), replacing --arch.
    #[arg(long)]
    model_config: Option<PathBuf>,
    /// PIT output channels.
    #[arg(long, default_value_t = 3)]
    outputs: usize,
    #[command(flatten)]
    overrides: TrainOverrides,
}

/// Per-field overrides of the training configuration.
#[derive(Args, Debug, Default)]
struct TrainOverrides {
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    grad_clip_norm: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    /// Comma-separated weights for selecting 1, 2, … classes.
    #[arg(long)]
    target_count_weights: Option<String>,
    /// snr or log-mse.
    #[arg(long)]
    loss_kind: Option<String>,
    #[arg(long)]
    include_inactive: Option<bool>,
    /// Random crop length in seconds.
    #[arg(long)]
    crop_s: Option<f64>,
    #[arg(long)]
    dev_items: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl TrainOverrides {
    fn apply(&self, cfg: &mut TrainConfig) -> Result<()> {
        let pairs: [(&str, Option<String>); 11] = [
            ("learning_rate", self.learning_rate.map(|v| v.to_string())),
            ("grad_clip_norm", self.grad_clip_norm.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("max_epochs", self.max_epochs.map(|v| v.to_string())),
            ("steps_per_epoch", self.steps_per_epoch.map(|v| v.to_string())),
            ("target_count_weights", self.target_count_weights.clone()),
            ("loss_kind", self.loss_kind.clone()),
            ("include_inactive", self.include_inactive.map(|v| v.to_string())),
            ("crop_s", self.crop_s.map(|v| v.to_string())),
            ("dev_items", self.dev_items.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        cfg.validate()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EvalMode {
    /// Unprocessed mixture against the selected-class reference.
    Baseline,
    Simultaneous,
    Iterative,
    /// PIT outputs with oracle selection (one class).
    PitOracle,
    RemovalIndirect,
    RemovalDirect,
    /// Simultaneous selection with waveform dumps.
    Generalization,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Not needed for --mode baseline.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "simultaneous")]
    mode: EvalMode,
    /// Comma-separated numbers of selected classes.
    #[arg(long, default_value = "1", value_delimiter = ',')]
    selected: Vec<usize>,
    /// Directory for report.csv and report.md; printed to stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for {id}.mixture|ref|est.wav (generalization mode).
    #[arg(long)]
    dump: Option<PathBuf>,
    /// Recorded in the report metadata.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input mixture WAV.
    #[arg(long = "in")]
    input: PathBuf,
    /// Comma-separated class indices or names.
    #[arg(long, value_delimiter = ',', required = true)]
    classes: Vec<String>,
    /// Output WAV.
    #[arg(long)]
    out: PathBuf,
    /// Class names file (one name per line); defaults to the names stored
    /// in the checkpoint.
    #[arg(long)]
    names: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemeArg {
    Direct,
    Indirect,
}

#[derive(Args, Debug)]
struct RemoveArgs {
    #[command(flatten)]
    infer: InferArgs,
    /// indirect: mixture minus the selector output; direct: a removal network.
    #[arg(long, value_enum, default_value = "indirect")]
    scheme: SchemeArg,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::SynthData(a) => synth_data(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Select(a) => select(a),
        Command::Remove(a) => remove(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn synth_data(a: SynthArgs) -> Result<()> {
    let mut cfg: DatasetConfig = match &a.config {
        Some(p) => serde_json::from_slice(&std::fs::read(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => DatasetConfig::default(),
    };
    match a.policy {
        PolicyArg::Mix3 => cfg.scene.class_policy = ClassPolicy::mix3(),
        PolicyArg::Mix35 => cfg.scene.class_policy = ClassPolicy::mix3_5(),
        PolicyArg::Custom => {
            if a.config.is_none() {
                bail!("--policy custom needs --config with a class_policy");
            }
        }
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(c) = a.count {
        cfg.count = c;
    }
    if let Some(s) = a.split {
        cfg.scene.split = s;
    }
    if let Some(d) = a.duration_s {
        cfg.scene.duration_s = d;
    }
    if let Some(e) = a.events {
        cfg.scene.events_per_scene = e;
    }
    let corpus = match &a.corpus {
        Some(root) => CorpusIndex::from_dir(root)?,
        None => CorpusIndex::synthetic(a.num_classes, cfg.scene.sample_rate)?,
    };
    let manifest = build_dataset(&cfg, &corpus, &a.out)?;
    let mut hist = std::collections::BTreeMap::<usize, usize>::new();
    for r in &manifest.records {
        *hist.entry(r.active_classes.len()).or_default() += 1;
    }
    println!("manifest: {}", manifest.path.display());
    println!("items: {}", manifest.records.len());
    println!("classes: {}", manifest.class_names.len());
    for (k, n) in hist {
        println!("  {k} classes in mixture: {n}");
    }
    Ok(())
}

fn trunk_for(arch: ArchArg) -> TrunkConfig {
    match arch {
        ArchArg::Paper => TrunkConfig::paper(),
        ArchArg::Toy => TrunkConfig::toy(),
        ArchArg::Miniature => TrunkConfig::miniature(),
    }
}

fn selector_for(arch: ArchArg, num_classes: usize) -> SelectorConfig {
    match arch {
        ArchArg::Paper => SelectorConfig::paper(num_classes),
        ArchArg::Toy => SelectorConfig::toy(num_classes),
        ArchArg::Miniature => SelectorConfig::miniature(num_classes),
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let data = Manifest::load(&a.data)?;
    let dev = a.dev.as_deref().map(Manifest::load).transpose()?;
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    };
    a.overrides.apply(&mut cfg)?;
    let model_config = match &a.model_config {
        Some(p) => {
            let m: ModelConfig = serde_json::from_slice(&std::fs::read(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("parsing {}", p.display()))?;
            let expected = match a.model {
                ModelKindArg::Selector => "selector",
                ModelKindArg::Pit => "pit",
                ModelKindArg::RemovalDirect => "removal-direct",
            };
            if m.kind_name() != expected {
                bail!("--model {expected} but {} describes a {} model", p.display(), m.kind_name());
            }
            m
        }
        None => {
            let n = data.num_classes();
            match a.model {
                ModelKindArg::Selector => ModelConfig::Selector(selector_for(a.arch, n)),
                ModelKindArg::RemovalDirect => ModelConfig::RemovalDirect(selector_for(a.arch, n)),
                ModelKindArg::Pit => ModelConfig::Pit(PitConfig {
                    trunk: trunk_for(a.arch),
                    output_channels: a.outputs,
                }),
            }
        }
    };
    let options = FitOptions {
        resume: a.resume,
        init: None,
    };
    let summary = fit(
        &data,
        dev.as_ref().map(|d| d as &dyn SceneSource),
        model_config,
        &cfg,
        &a.out,
        &options,
    )?;
    println!("steps: {}", summary.steps);
    println!("final checkpoint: {}", summary.final_checkpoint.display());
    if let Some(b) = &summary.best_checkpoint {
        println!("best checkpoint: {}", b.display());
    }
    if let Some(l) = summary.last_loss {
        println!("last loss: {l:.3} dB");
    }
    if let Some(d) = summary.best_dev_sdri_db {
        println!("best dev SDRi: {d:.3} dB");
    }
    Ok(())
}

fn evaluate(a: EvalArgs) -> Result<()> {
    let data = Manifest::load(&a.data)?;
    let ckpt = match (&a.checkpoint, a.mode) {
        (_, EvalMode::Baseline) => None,
        (Some(p), _) => Some(load_checkpoint(p)?),
        (None, _) => bail!("--checkpoint is required for this mode"),
    };
    let model = ckpt.as_ref().map(|c| &c.model);
    let mut reports = Vec::new();
    for &sel in &a.selected {
        let r = match a.mode {
            EvalMode::Baseline => eval_mixture_baseline(&data, sel)?,
            EvalMode::Simultaneous => eval_selection(&data, model.expect("checked"), sel, SelectionMode::Simultaneous)?,
            EvalMode::Iterative => eval_selection(&data, model.expect("checked"), sel, SelectionMode::Iterative)?,
            EvalMode::PitOracle => {
                if sel != 1 {
                    bail!("pit-oracle evaluation selects exactly one class");
                }
                eval_pit_oracle(&data, model.expect("checked"))?
            }
            EvalMode::RemovalIndirect => eval_removal(&data, RemovalScheme::Indirect(model.expect("checked")), sel)?,
            EvalMode::RemovalDirect => eval_removal(&data, RemovalScheme::Direct(model.expect("checked")), sel)?,
            EvalMode::Generalization => {
                let dump = a.dump.as_ref().map(|d| d.join(format!("selected-{sel}")));
                eval_generalization(&data, model.expect("checked"), sel, dump.as_deref())?
            }
        };
        reports.push(r);
    }
    let mut report = EvalReport::merge(reports);
    report.meta.seed = a.seed;
    match &a.out {
        Some(dir) => {
            report.write(dir, "report")?;
            println!("{}", dir.join("report.md").display());
        }
        None => print!("{}", report.to_markdown()),
    }
    Ok(())
}

fn class_names(ckpt: &Checkpoint, names: Option<&Path>) -> Result<Option<Vec<String>>> {
    if let Some(p) = names {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        return Ok(Some(text.lines().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect()));
    }
    Ok(ckpt.meta.get("class_names").and_then(|v| serde_json::from_value(v.clone()).ok()))
}

/// Builds the n-hot vector from indices or class names.
fn parse_classes(tokens: &[String], num_classes: usize, names: Option<&[String]>) -> Result<ClassVector> {
    let mut idx = Vec::new();
    for t in tokens {
        let t = t.trim();
        let i = match t.parse::<usize>() {
            Ok(i) => i,
            Err(_) => names
                .and_then(|n| n.iter().position(|x| x == t))
                .ok_or_else(|| anyhow!("unknown class {t:?}; valid indices are 0..={}", num_classes - 1))?,
        };
        if i >= num_classes {
            bail!("class index {i} out of range; valid indices are 0..={}", num_classes - 1);
        }
        idx.push(i);
    }
    Ok(ClassVector::from_indices(num_classes, &idx)?)
}

struct Loaded {
    ckpt: Checkpoint,
    input: Waveform,
    input_rate: u32,
    input_len: usize,
    o: ClassVector,
}

fn load_inputs(a: &InferArgs) -> Result<Loaded> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let num_classes = ckpt
        .model
        .num_classes()
        .ok_or_else(|| anyhow!("{} holds a {} model, which takes no class vector", a.checkpoint.display(), ckpt.model.config().kind_name()))?;
    let names = class_names(&ckpt, a.names.as_deref())?;
    let o = parse_classes(&a.classes, num_classes, names.as_deref())?;
    let (samples, rate) = read_wav_mono(&a.input)?;
    let model_rate = ckpt.model.trunk().sample_rate;
    let input_len = samples.len();
    let samples = if rate != model_rate {
        tracing::warn!(input = rate, model = model_rate, "sample rate mismatch, resampling input");
        resample(&samples, rate, model_rate)?
    } else {
        samples
    };
    Ok(Loaded {
        input: Waveform::new(samples, model_rate)?,
        ckpt,
        input_rate: rate,
        input_len,
        o,
    })
}

/// Converts a model-rate output back to the input's rate and length.
fn to_input_format(out: Waveform, l: &Loaded) -> Result<Waveform> {
    if l.input_rate == out.sample_rate() {
        return Ok(out);
    }
    let mut s = resample(out.samples(), out.sample_rate(), l.input_rate)?;
    s.resize(l.input_len, 0.0);
    Ok(Waveform::new(s, l.input_rate)?)
}

fn select(a: InferArgs) -> Result<()> {
    let l = load_inputs(&a)?;
    if !matches!(l.ckpt.model.config(), ModelConfig::Selector(_)) {
        bail!("select needs a selector checkpoint, got {}", l.ckpt.model.config().kind_name());
    }
    let est = forward(&l.ckpt.model, &l.input, &l.o)?;
    write_wav(&a.out, &to_input_format(est, &l)?)?;
    Ok(())
}

fn remove(a: RemoveArgs) -> Result<()> {
    let l = load_inputs(&a.infer)?;
    let est = match a.scheme {
        SchemeArg::Indirect => remove_indirect(&l.ckpt.model, &l.input, &l.o)?,
        SchemeArg::Direct => remove_direct(&l.ckpt.model, &l.input, &l.o)?,
    };
    write_wav(&a.infer.out, &to_input_format(est, &l)?)?;
    Ok(())
}
