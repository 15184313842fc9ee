use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pia::alignment::write_index;
use pia::extractors::{
    extract_video, read_cache, read_frame_image, read_wav, write_cache, Adapters, CommandEmbedder, CommandLandmarkDetector,
    CommandTranscriber, FixtureEmbedder, FixtureLandmarkDetector, FixturePhonemizer, FixtureTranscriber, IdentityEmbedder,
    Label, LandmarkDetector, Phonemizer, ReferencePhonemizer, SyntheticEmbedder, SyntheticLandmarkDetector, Transcriber,
    VideoMeta,
};
use pia::geometry::{geometry_series, LipLandmarkIndexSet};
use pia::harness::{
    ablation_config, evaluate, load_dataset, metrics, train, write_loss_log, EvalReport, TrainConfig,
};
use pia::identity::{drift_series, drift_stats, DriftSeries, DEFAULT_SPIKE_THRESHOLD};
use pia::model::{read_checkpoint, write_checkpoint, Architecture, ModelConfig};
use pia::synthgen::{generate_dataset, index_entries, split_entries, DatasetOptions, DEFAULT_FPS};
use pia::{PiaError, Result};

/// Phoneme-aware audio-visual deepfake detection.
#[derive(Parser)]
#[command(name = "pia", version, about)]
struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the perception adapters over one video and cache its features.
    Extract(ExtractArgs),
    /// Generate a labelled synthetic dataset.
    Synth(SynthArgs),
    /// Index a directory of feature caches and split it into train and test.
    BuildDataset(BuildArgs),
    /// Train a detector.
    Train(TrainArgs),
    /// Score a test index with a checkpoint.
    Eval(EvalArgs),
    /// Train and evaluate a named ablation variant.
    Ablate(AblateArgs),
    /// Consecutive identity drift of one cached video.
    AnalyzeDrift(DriftArgs),
    /// Per-frame lip geometry of one cached video.
    AnalyzeGeometry(GeometryArgs),
    /// Render drift or ROC figures.
    Plot(PlotArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AdapterKind {
    Live,
    Fixture,
    Synthetic,
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelArg {
    Real,
    Fake,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    video_id: String,
    /// Directory of frame images, read in file-name order.
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    audio: PathBuf,
    #[arg(long, default_value_t = DEFAULT_FPS)]
    fps: f64,
    #[arg(long, value_enum)]
    label: LabelArg,
    #[arg(long, default_value = "real")]
    category: String,
    #[arg(long, value_enum, default_value = "fixture")]
    adapters: AdapterKind,
    /// Fixture directory with transcript.json, landmarks.json,
    /// embeddings.f32 and optionally phonemes.json.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Cache whose identity vectors the synthetic embedder replays.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long)]
    transcriber_cmd: Option<PathBuf>,
    #[arg(long)]
    landmarks_cmd: Option<PathBuf>,
    #[arg(long)]
    embedder_cmd: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    real: usize,
    #[arg(long)]
    fake: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_FPS)]
    fps: f64,
    /// Phoneme runs per video script.
    #[arg(long, default_value_t = 6)]
    vocab_runs: usize,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Store rendered crops in the caches.
    #[arg(long)]
    embed_crops: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildArgs {
    /// Directory holding `.pia` caches.
    #[arg(long)]
    caches: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Default)]
struct TrainOverrides {
    /// JSON file with training settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSON file with a model configuration.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    smoothing: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training index (JSON lines).
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    overrides: TrainOverrides,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Report file name inside the output directory.
    #[arg(long, default_value = "report.json")]
    report: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    name: String,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[command(flatten)]
    overrides: TrainOverrides,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DriftArgs {
    #[arg(long)]
    cache: PathBuf,
    /// Second cache overlaid on the plot, e.g. a real video next to a fake.
    #[arg(long)]
    compare: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SPIKE_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GeometryArgs {
    #[arg(long)]
    cache: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKind {
    Drift,
    Roc,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long, value_enum)]
    kind: PlotKind,
    /// Feature caches for drift (overlaid), or one evaluation report for ROC.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SPIKE_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.kind());
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Extract(a) => extract(a),
        Command::Synth(a) => synth(a),
        Command::BuildDataset(a) => build_dataset(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Ablate(a) => ablate(a),
        Command::AnalyzeDrift(a) => analyze_drift(a),
        Command::AnalyzeGeometry(a) => analyze_geometry(a),
        Command::Plot(a) => plot(a),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| PiaError::InvalidConfig(format!("{}: {e}", path.display())))
}

fn need<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf> {
    value
        .as_ref()
        .ok_or_else(|| PiaError::InvalidConfig(format!("--{flag} is required with these adapters")))
}

fn extract(a: ExtractArgs) -> Result<()> {
    fs::create_dir_all(a.out.join("caches"))?;
    let mut paths: Vec<PathBuf> = fs::read_dir(&a.frames)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.is_file());
    paths.sort();
    let frames = paths
        .iter()
        .enumerate()
        .map(|(i, p)| read_frame_image(p, i))
        .collect::<Result<Vec<_>>>()?;
    let audio = read_wav(&a.audio)?;

    let work = a.out.join("work");
    let (transcriber, phonemizer, landmarks, embedder): (
        Box<dyn Transcriber>,
        Box<dyn Phonemizer>,
        Box<dyn LandmarkDetector>,
        Box<dyn IdentityEmbedder>,
    ) = match a.adapters {
        AdapterKind::Fixture => {
            let dir = need(&a.fixtures, "fixtures")?;
            let phonemes = dir.join("phonemes.json");
            let phonemizer: Box<dyn Phonemizer> = if phonemes.exists() {
                Box::new(FixturePhonemizer::from_file(&phonemes)?)
            } else {
                Box::new(ReferencePhonemizer)
            };
            (
                Box::new(FixtureTranscriber::from_file(&dir.join("transcript.json"))?),
                phonemizer,
                Box::new(FixtureLandmarkDetector::from_file(&dir.join("landmarks.json"))?),
                Box::new(FixtureEmbedder::from_file(&dir.join("embeddings.f32"))?),
            )
        }
        AdapterKind::Synthetic => {
            let truth = read_cache(need(&a.ground_truth, "ground-truth")?)?;
            let ids: Vec<_> = truth.frames.iter().filter_map(|f| f.identity.clone()).collect();
            let dir = need(&a.fixtures, "fixtures")?;
            (
                Box::new(FixtureTranscriber::from_file(&dir.join("transcript.json"))?),
                Box::new(ReferencePhonemizer),
                Box::new(SyntheticLandmarkDetector),
                Box::new(SyntheticEmbedder::new(&ids)),
            )
        }
        AdapterKind::Live => {
            fs::create_dir_all(&work)?;
            (
                Box::new(CommandTranscriber::new(need(&a.transcriber_cmd, "transcriber-cmd")?, vec![], &work)),
                Box::new(ReferencePhonemizer),
                Box::new(CommandLandmarkDetector::new(need(&a.landmarks_cmd, "landmarks-cmd")?, vec![], &work)),
                Box::new(CommandEmbedder::new(need(&a.embedder_cmd, "embedder-cmd")?, vec![], &work)),
            )
        }
    };
    let adapters = Adapters {
        transcriber: transcriber.as_ref(),
        phonemizer: phonemizer.as_ref(),
        landmarks: landmarks.as_ref(),
        embedder: embedder.as_ref(),
    };
    let meta = VideoMeta {
        video_id: a.video_id.clone(),
        fps: a.fps,
        label: match a.label {
            LabelArg::Real => Label::Real,
            LabelArg::Fake => Label::Fake,
        },
        category: a.category,
    };
    let cache = extract_video(&meta, &audio, &frames, &adapters)?;
    let rel = format!("caches/{}.pia", a.video_id);
    write_cache(&a.out.join(&rel), &cache)?;
    let entries = index_entries(&cache, &rel);
    write_index(&a.out.join("index.jsonl"), &entries)?;
    println!("{}: {} frames, {} groups", a.video_id, cache.frames.len(), entries.len());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let opts = DatasetOptions {
        fps: a.fps,
        vocab_runs: a.vocab_runs,
        test_fraction: a.test_fraction,
        embed_crops: a.embed_crops,
    };
    let paths = generate_dataset(a.real, a.fake, a.seed, &a.out, &opts)?;
    println!("wrote {}", paths.index.display());
    Ok(())
}

fn build_dataset(a: BuildArgs) -> Result<()> {
    if !(0.0..1.0).contains(&a.test_fraction) {
        return Err(PiaError::InvalidConfig(format!("test fraction {}", a.test_fraction)));
    }
    fs::create_dir_all(&a.out)?;
    let mut files: Vec<PathBuf> = fs::read_dir(&a.caches)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|x| x == "pia"));
    files.sort();
    if files.is_empty() {
        return Err(PiaError::InvalidDataset(format!("no .pia caches in {}", a.caches.display())));
    }
    let out_abs = fs::canonicalize(&a.out)?;
    let mut all = Vec::new();
    for f in &files {
        let cache = read_cache(f)?;
        let abs = fs::canonicalize(f)?;
        let rel = abs.strip_prefix(&out_abs).map(Path::to_path_buf).unwrap_or(abs);
        all.extend(index_entries(&cache, &rel.to_string_lossy()));
    }
    let (train, test) = split_entries(&all, a.test_fraction, a.seed);
    write_index(&a.out.join("index.jsonl"), &all)?;
    write_index(&a.out.join("train.jsonl"), &train)?;
    write_index(&a.out.join("test.jsonl"), &test)?;
    println!("{} caches, {} groups", files.len(), all.len());
    Ok(())
}

/// Flag > config file > defaults.
fn resolve(o: &TrainOverrides) -> Result<(TrainConfig, ModelConfig)> {
    let mut tc = match &o.config {
        Some(p) => read_json::<TrainConfig>(p)?,
        None => TrainConfig::default(),
    };
    macro_rules! apply {
        ($($f:ident),*) => {$(if let Some(v) = o.$f { tc.$f = v; })*};
    }
    apply!(epochs, learning_rate, weight_decay, batch_size, lambda, heads, smoothing, seed);
    tc.validate()?;
    let model = match &o.model {
        Some(p) => read_json::<ModelConfig>(p)?,
        None => ModelConfig::default(),
    };
    let model = ModelConfig { heads: tc.heads, ..model };
    model.validate()?;
    Ok((tc, model))
}

#[derive(Serialize)]
struct Resolved<'a> {
    train: &'a TrainConfig,
    model: &'a ModelConfig,
}

fn announce(tc: &TrainConfig, model: &ModelConfig) -> Result<()> {
    println!("config: {}", serde_json::to_string(&Resolved { train: tc, model })?);
    Ok(())
}

fn needs_visual(m: &ModelConfig) -> bool {
    m.architecture == Architecture::PlainCnn || m.streams.viseme
}

fn fit_and_save(model: &ModelConfig, tc: &TrainConfig, data: &Path, out: &Path) -> Result<pia::model::Network<f32>> {
    fs::create_dir_all(out)?;
    write_json(&out.join("config.json"), &Resolved { train: tc, model })?;
    let dataset = load_dataset(data, needs_visual(model))?;
    let outcome = train(model, &dataset, tc)?;
    write_checkpoint(&out.join("model.ckpt"), &outcome.network)?;
    write_loss_log(&out.join("loss.jsonl"), &outcome.history)?;
    if let (Some(first), Some(last)) = (outcome.history.first(), outcome.history.last()) {
        println!("trained {} steps: loss {:.4} -> {:.4}", last.step, first.total, last.total);
    }
    Ok(outcome.network)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let (tc, model) = resolve(&a.overrides)?;
    announce(&tc, &model)?;
    fit_and_save(&model, &tc, &a.data, &a.out)?;
    Ok(())
}

fn print_report(r: &EvalReport) {
    println!("videos {}  ACC {:.2}  AUC {:.2}  AP {:.2}", r.n_videos, r.acc, r.auc, r.ap);
    for (cat, c) in &r.per_category {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
        println!("  {cat}: n {}  ACC {:.2}  AUC {}  AP {}", c.n_videos, c.acc, opt(c.auc), opt(c.ap));
    }
}

fn roc_png(report: &EvalReport, path: &Path) -> Result<()> {
    let s: Vec<f64> = report.scores.iter().map(|v| v.probability).collect();
    let l: Vec<bool> = report.scores.iter().map(|v| v.label.is_fake()).collect();
    let img = pia::plot::roc_plot(&metrics::roc_curve(&s, &l)?, 320, 320)?;
    pia::plot::save_png(&img, path)
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let net = read_checkpoint::<f32>(&a.ckpt)?;
    let data = load_dataset(&a.data, needs_visual(net.config()))?;
    let report = evaluate(&net, &data)?;
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join(&a.report), &report)?;
    print_report(&report);
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let (tc, model) = resolve(&a.overrides)?;
    let (model, tc) = ablation_config(&a.name, &model, &tc)?;
    announce(&tc, &model)?;
    let net = fit_and_save(&model, &tc, &a.train, &a.out)?;
    let test = load_dataset(&a.test, needs_visual(&model))?;
    let report = evaluate(&net, &test)?;
    write_json(&a.out.join("report.json"), &report)?;
    roc_png(&report, &a.out.join("roc.png"))?;
    println!("{}:", a.name);
    print_report(&report);
    Ok(())
}

fn identity_sequence(cache: &pia::extractors::FeatureCache) -> (Vec<Vec<f32>>, Vec<bool>) {
    cache
        .frames
        .iter()
        .map(|f| match &f.identity {
            Some(e) => (e.vector.clone(), f.valid),
            None => (vec![0.0; pia::extractors::EMBEDDING_DIM], false),
        })
        .unzip()
}

fn cache_drift(path: &Path) -> Result<DriftSeries> {
    let cache = read_cache(path)?;
    let (emb, mask) = identity_sequence(&cache);
    drift_series(&emb, &mask)
}

fn analyze_drift(a: DriftArgs) -> Result<()> {
    let series = cache_drift(&a.cache)?;
    fs::create_dir_all(&a.out)?;
    let mut csv = String::from("pair_index,l2,cosine,masked\n");
    for t in 0..series.len() {
        csv.push_str(&format!("{t},{},{},{}\n", series.l2[t], series.cosine[t], series.mask[t] as u8));
    }
    fs::write(a.out.join("drift.csv"), csv)?;
    let stats = drift_stats(&series, a.threshold)?;
    write_json(&a.out.join("drift_stats.json"), &stats)?;
    let mut all = vec![series];
    if let Some(other) = &a.compare {
        all.push(cache_drift(other)?);
    }
    pia::plot::save_png(&pia::plot::drift_plot(&all, a.threshold, 640, 320)?, &a.out.join("drift.png"))?;
    println!(
        "mean {:.3}  max {:.3}  spikes {}  pairs {}",
        stats.mean_l2, stats.max_l2, stats.spike_count, stats.masked_pair_count
    );
    Ok(())
}

fn analyze_geometry(a: GeometryArgs) -> Result<()> {
    let cache = read_cache(&a.cache)?;
    let series = geometry_series(&cache.frames, &LipLandmarkIndexSet::default());
    fs::create_dir_all(&a.out)?;
    let mut csv = String::from("frame_index,phoneme,height,width,mar,closure\n");
    for (f, g) in cache.frames.iter().zip(&series) {
        let phoneme = f.phoneme.as_deref().unwrap_or("");
        if g.valid {
            let [h, w, mar, c] = g.values;
            csv.push_str(&format!("{},{phoneme},{h},{w},{mar},{c}\n", f.frame_index));
        } else {
            csv.push_str(&format!("{},{phoneme},,,,\n", f.frame_index));
        }
    }
    fs::write(a.out.join("geometry.csv"), csv)?;
    println!("{} frames", series.len());
    Ok(())
}

fn plot(a: PlotArgs) -> Result<()> {
    fs::create_dir_all(&a.out)?;
    match a.kind {
        PlotKind::Drift => {
            let series = a.input.iter().map(|p| cache_drift(p)).collect::<Result<Vec<_>>>()?;
            let img = pia::plot::drift_plot(&series, a.threshold, 640, 320)?;
            pia::plot::save_png(&img, &a.out.join("drift.png"))
        }
        PlotKind::Roc => {
            let [path] = a.input.as_slice() else {
                return Err(PiaError::InvalidInput("a ROC plot takes exactly one report".into()));
            };
            let report: EvalReport = read_json(path)?;
            roc_png(&report, &a.out.join("roc.png"))
        }
    }
}
