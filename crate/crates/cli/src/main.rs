//! `ordiq` command line: synthetic data generation, encoder training,
//! gradient checks, stream prediction, and the missing-class experiment
//! protocols. Every run writes its resolved configuration beside its
//! outputs.

mod config;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ordiq::data::{
    csv_feature_columns, export_csv, generate, ingest_csv, StreamSpec, SyntheticConfig,
};
use ordiq::encoder::{forward, init_model, load_model, save_model, EncoderConfig, EncoderKind};
use ordiq::harness::{emit_reports, run_experiment, ExperimentReport};
use ordiq::objective::LossConfig;
use ordiq::retrieval::{
    build_store, classify_indexed, window_correct, write_traces_jsonl, LabelRankMatrix,
    PredictionTrace,
};
use ordiq::space::LabelDistanceKind;
use ordiq::stats::{RankStatKind, TestConfig};
use ordiq::trainer::{grad_check, train, LossKind, OptimizerKind, TrainConfig};
use ordiq::{Error, LabelSpace, Result, Segment};

#[derive(Parser)]
#[command(
    name = "ordiq",
    version,
    about = "Ordinal time-series classification with missing classes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ordinal dataset as CSV plus a space JSON file.
    Generate(GenerateArgs),
    /// Train an encoder on a labeled CSV stream.
    Train(TrainArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Classify a stream with a trained model; writes trace JSON.
    Predict(PredictArgs),
    /// Run a missing-class experiment protocol from a config file.
    Experiment(ExperimentArgs),
    /// Re-emit report CSVs from a saved experiment summary JSON.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EncoderArg {
    /// Bidirectional tanh recurrence.
    Birnn,
    /// Mean-pool MLP.
    Mlp,
}

impl From<EncoderArg> for EncoderKind {
    fn from(value: EncoderArg) -> Self {
        match value {
            EncoderArg::Birnn => EncoderKind::BiRecurrent,
            EncoderArg::Mlp => EncoderKind::MeanPoolMlp,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LossArg {
    /// Ordinal-quadruplet loss.
    Oq,
    /// Plain triplet loss.
    Triplet,
}

impl From<LossArg> for LossKind {
    fn from(value: LossArg) -> Self {
        match value {
            LossArg::Oq => LossKind::OrdinalQuadruplet,
            LossArg::Triplet => LossKind::TripletOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StatArg {
    /// Kendall's tau-b.
    Tau,
    /// Spearman's rho.
    Rho,
}

impl From<StatArg> for RankStatKind {
    fn from(value: StatArg) -> Self {
        match value {
            StatArg::Tau => RankStatKind::KendallTauB,
            StatArg::Rho => RankStatKind::SpearmanRho,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DistanceArg {
    Absolute,
    Squared,
    ExpDecibel,
}

impl From<DistanceArg> for LabelDistanceKind {
    fn from(value: DistanceArg) -> Self {
        match value {
            DistanceArg::Absolute => LabelDistanceKind::Absolute,
            DistanceArg::Squared => LabelDistanceKind::Squared,
            DistanceArg::ExpDecibel => LabelDistanceKind::ExpDecibel,
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 3)]
    channels: usize,
    #[arg(long, default_value_t = 10)]
    segment_length: usize,
    #[arg(long, default_value_t = 150)]
    per_class: usize,
    #[arg(long, default_value_t = 1.0)]
    separation: f64,
    #[arg(long, default_value_t = 0.3)]
    ar: f64,
    #[arg(long, default_value_t = 0.25)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Class names to mark missing in the emitted space file.
    #[arg(long, value_delimiter = ',')]
    missing: Vec<String>,
    #[arg(long, value_enum, default_value_t = DistanceArg::Absolute)]
    label_distance: DistanceArg,
}

#[derive(Args, Clone)]
struct StreamArgs {
    /// Name of the label column.
    #[arg(long, default_value = "label")]
    label_column: String,
    /// Feature columns; defaults to every non-label column.
    #[arg(long, value_delimiter = ',')]
    feature_columns: Vec<String>,
    /// Segmentation window length (rows per segment).
    #[arg(long, default_value_t = 10)]
    window: usize,
    /// Segmentation stride; defaults to the window length.
    #[arg(long)]
    stride: Option<usize>,
}

impl StreamArgs {
    fn spec(&self, csv: &Path) -> Result<StreamSpec> {
        let feature_columns = if self.feature_columns.is_empty() {
            csv_feature_columns(csv, &self.label_column)?
        } else {
            self.feature_columns.clone()
        };
        Ok(StreamSpec {
            label_column: self.label_column.clone(),
            feature_columns,
            window_length: self.window,
            stride: self.stride.unwrap_or(self.window),
        })
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    space: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    stream: StreamArgs,
    /// Drop missing-class rows instead of failing when the data contains
    /// them.
    #[arg(long)]
    exclude_missing: bool,
    #[arg(long, value_enum, default_value_t = EncoderArg::Birnn)]
    encoder: EncoderArg,
    #[arg(long, default_value_t = 256)]
    hidden: usize,
    #[arg(long, default_value_t = 256)]
    embed: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.005)]
    learning_rate: f64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, value_enum, default_value_t = LossArg::Oq)]
    loss: LossArg,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    optimizer: OptimizerArg,
    #[arg(long, default_value_t = 0.2)]
    margin: f64,
    #[arg(long, default_value_t = 1e-8)]
    epsilon_d: f64,
    #[arg(long, default_value_t = 4)]
    max_per_anchor: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = EncoderArg::Mlp)]
    encoder: EncoderArg,
    #[arg(long, default_value_t = 2)]
    channels: usize,
    #[arg(long, default_value_t = 4)]
    hidden: usize,
    #[arg(long, default_value_t = 3)]
    embed: usize,
    #[arg(long, default_value_t = 3)]
    window: usize,
    #[arg(long, value_enum, default_value_t = LossArg::Oq)]
    loss: LossArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PredictArgs {
    /// Trained model binary.
    #[arg(long)]
    model: PathBuf,
    /// CSV with the training stream (present classes only) used to build
    /// the centroid store.
    #[arg(long)]
    train_data: PathBuf,
    /// CSV stream to classify.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    space: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    stream: StreamArgs,
    /// Drop missing-class rows from the training stream instead of failing.
    #[arg(long)]
    exclude_missing: bool,
    #[arg(long, value_enum, default_value_t = StatArg::Tau)]
    stat: StatArg,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Historical window correction size; 0 disables correction.
    #[arg(long, default_value_t = 0)]
    correction_window: usize,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment description, JSON or TOML.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// summary.json produced by the experiment subcommand.
    #[arg(long)]
    summary: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Experiment(args) => cmd_experiment(args),
        Command::Report(args) => cmd_report(args),
    };
    if let Err(err) = outcome {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}

fn write_resolved_config(out_dir: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(
        out_dir.join("resolved_config.json"),
        serde_json::to_string_pretty(value)?,
    )?;
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        n_classes: args.classes,
        n_channels: args.channels,
        segment_length: args.segment_length,
        segments_per_class: args.per_class,
        class_separation: args.separation,
        ar_coefficient: args.ar,
        noise_std: args.noise,
        seed: args.seed,
    };
    let (space, segments) = generate(&cfg)?;
    let missing_ids: Vec<ordiq::ClassId> = args
        .missing
        .iter()
        .map(|name| space.resolve(name))
        .collect::<Result<_>>()?;
    let space = space
        .with_missing(&missing_ids)?
        .with_label_distance(args.label_distance.into())?;

    std::fs::create_dir_all(&args.out_dir)?;
    export_csv(&segments, &space, &args.out_dir.join("data.csv"))?;
    config::save_space(&space, &args.out_dir.join("space.json"))?;

    #[derive(Serialize)]
    struct Resolved<'a> {
        synthetic: &'a SyntheticConfig,
        missing: &'a [String],
        label_distance: &'a LabelDistanceKind,
    }
    write_resolved_config(
        &args.out_dir,
        &Resolved {
            synthetic: &cfg,
            missing: &args.missing,
            label_distance: space.label_distance_kind(),
        },
    )?;
    println!(
        "wrote {} segments over {} classes to {}",
        segments.len(),
        space.len(),
        args.out_dir.display()
    );
    Ok(())
}

/// Drop missing-class segments when permitted, otherwise leave the data
/// untouched so downstream contracts can reject the leak.
fn filter_missing(
    segments: Vec<Segment>,
    space: &LabelSpace,
    allowed: bool,
) -> Result<Vec<Segment>> {
    if !allowed {
        return Ok(segments);
    }
    let before = segments.len();
    let kept: Vec<Segment> = segments
        .into_iter()
        .filter(|s| s.label().map(|l| !space.is_missing(l)).unwrap_or(true))
        .collect();
    if kept.len() != before {
        eprintln!("excluded {} missing-class segments", before - kept.len());
    }
    if kept.is_empty() {
        return Err(Error::EmptyInput("no present-class segments left".into()));
    }
    Ok(kept)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let space = config::load_space(&args.space)?;
    let spec = args.stream.spec(&args.data)?;
    let segments = ingest_csv(&args.data, &spec, &space)?;
    let segments = filter_missing(segments, &space, args.exclude_missing)?;

    let encoder_cfg = EncoderConfig {
        kind: args.encoder.into(),
        n_channels: spec.feature_columns.len(),
        hidden_dim: args.hidden,
        embed_dim: args.embed,
        window_length: spec.window_length,
        seed: args.seed,
    };
    let train_cfg = TrainConfig {
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        epochs: args.epochs,
        loss_kind: args.loss.into(),
        optimizer: match args.optimizer {
            OptimizerArg::Adam => OptimizerKind::adam_default(),
            OptimizerArg::Sgd => OptimizerKind::Sgd,
        },
        seed: args.seed,
        loss_cfg: LossConfig {
            margin: args.margin,
            epsilon_d: args.epsilon_d,
        },
        max_per_anchor: args.max_per_anchor,
    };

    #[derive(Serialize)]
    struct Resolved<'a> {
        data: &'a Path,
        stream: &'a StreamSpec,
        encoder: &'a EncoderConfig,
        train: &'a TrainConfig,
        exclude_missing: bool,
    }
    write_resolved_config(
        &args.out_dir,
        &Resolved {
            data: &args.data,
            stream: &spec,
            encoder: &encoder_cfg,
            train: &train_cfg,
            exclude_missing: args.exclude_missing,
        },
    )?;

    let model = init_model(&encoder_cfg)?;
    let (model, report) = train(model, &segments, &train_cfg, &space)?;

    save_model(&model, &args.out_dir.join("model.bin"))?;
    let log = std::fs::File::create(args.out_dir.join("train_log.jsonl"))?;
    report.write_jsonl(std::io::BufWriter::new(log))?;
    println!(
        "trained {} epochs on {} segments; final mean loss {:.6}; model at {}",
        train_cfg.epochs,
        segments.len(),
        report.final_mean_loss().unwrap_or(f64::NAN),
        args.out_dir.join("model.bin").display()
    );
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    let data_cfg = SyntheticConfig {
        n_classes: 4,
        n_channels: args.channels,
        segment_length: args.window,
        segments_per_class: 2,
        class_separation: 1.0,
        ar_coefficient: 0.2,
        noise_std: 0.3,
        seed: args.seed,
    };
    let (space, segments) = generate(&data_cfg)?;
    let encoder_cfg = EncoderConfig {
        kind: args.encoder.into(),
        n_channels: args.channels,
        hidden_dim: args.hidden,
        embed_dim: args.embed,
        window_length: args.window,
        seed: args.seed,
    };
    let train_cfg = TrainConfig {
        batch_size: segments.len().max(2),
        loss_kind: args.loss.into(),
        seed: args.seed,
        max_per_anchor: 3,
        ..TrainConfig::default()
    };
    let model = init_model(&encoder_cfg)?;
    let max_rel_error = grad_check(&model, &segments, &train_cfg, &space)?;
    let threshold = 1e-4;
    let pass = max_rel_error < threshold;

    #[derive(Serialize)]
    struct Output {
        encoder: EncoderConfig,
        loss: LossKind,
        max_rel_error: f64,
        threshold: f64,
        pass: bool,
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&Output {
            encoder: encoder_cfg,
            loss: train_cfg.loss_kind,
            max_rel_error,
            threshold,
            pass,
        })?
    );
    if !pass {
        std::process::exit(1);
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let space = config::load_space(&args.space)?;
    let model = load_model(&args.model)?;
    let spec = args.stream.spec(&args.train_data)?;

    let train_segments = ingest_csv(&args.train_data, &spec, &space)?;
    let train_segments = filter_missing(train_segments, &space, args.exclude_missing)?;
    let store = build_store(&model, &train_segments, &space)?;
    let matrix = LabelRankMatrix::new(&space)?;
    let test_cfg = TestConfig { alpha: args.alpha };
    let stat: RankStatKind = args.stat.into();

    let mut input_segments = ingest_csv(&args.input, &spec, &space)?;
    input_segments.sort_by_key(|s| s.source_index());

    let traces: Vec<PredictionTrace> = input_segments
        .iter()
        .map(|seg| {
            let f = forward(&model, seg)?;
            classify_indexed(
                &store,
                &matrix,
                &f,
                &space,
                stat,
                &test_cfg,
                seg.source_index(),
            )
        })
        .collect::<Result<_>>()?;

    let predictions: Vec<ordiq::ClassId> = traces.iter().map(|t| t.final_label).collect();
    let corrected = window_correct(&predictions, args.correction_window);

    std::fs::create_dir_all(&args.out_dir)?;
    let trace_file = std::fs::File::create(args.out_dir.join("traces.jsonl"))?;
    write_traces_jsonl(&traces, &space, std::io::BufWriter::new(trace_file))?;

    let mut csv_text = String::from("source_index,predicted,corrected,true_label\n");
    let mut correct = 0usize;
    let mut labeled = 0usize;
    for ((seg, trace), corr) in input_segments.iter().zip(&traces).zip(&corrected) {
        let true_name = seg
            .label()
            .map(|l| space.name(l).to_string())
            .unwrap_or_default();
        if let Some(label) = seg.label() {
            labeled += 1;
            if label == *corr {
                correct += 1;
            }
        }
        csv_text.push_str(&format!(
            "{},{},{},{}\n",
            trace.source_index,
            space.name(trace.final_label),
            space.name(*corr),
            true_name
        ));
    }
    std::fs::write(args.out_dir.join("predictions.csv"), csv_text)?;

    #[derive(Serialize)]
    struct Summary {
        segments: usize,
        correction_window: usize,
        labeled: usize,
        accuracy: Option<f64>,
        knn_branch: usize,
        both_missing_branch: usize,
        test_branch: usize,
    }
    let branch_count =
        |b: ordiq::retrieval::Branch| -> usize { traces.iter().filter(|t| t.branch == b).count() };
    let summary = Summary {
        segments: traces.len(),
        correction_window: args.correction_window,
        labeled,
        accuracy: (labeled > 0).then(|| correct as f64 / labeled as f64),
        knn_branch: branch_count(ordiq::retrieval::Branch::Knn),
        both_missing_branch: branch_count(ordiq::retrieval::Branch::BothMissing),
        test_branch: branch_count(ordiq::retrieval::Branch::Test),
    };
    std::fs::write(
        args.out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;

    #[derive(Serialize)]
    struct Resolved<'a> {
        model: &'a Path,
        train_data: &'a Path,
        input: &'a Path,
        stream: &'a StreamSpec,
        stat: RankStatKind,
        alpha: f64,
        correction_window: usize,
        exclude_missing: bool,
    }
    write_resolved_config(
        &args.out_dir,
        &Resolved {
            model: &args.model,
            train_data: &args.train_data,
            input: &args.input,
            stream: &spec,
            stat,
            alpha: args.alpha,
            correction_window: args.correction_window,
            exclude_missing: args.exclude_missing,
        },
    )?;
    println!(
        "classified {} segments ({} via test branch); outputs in {}",
        summary.segments,
        summary.test_branch,
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> Result<()> {
    let file = config::ExperimentFile::load(&args.config)?;
    let config_dir = args.config.parent().unwrap_or(Path::new(".")).to_path_buf();
    let (space, dataset) = file.load_data(&config_dir)?;

    write_resolved_config(&args.out_dir, &file)?;
    let report = run_experiment(&file.experiment, &dataset, &space)?;
    emit_reports(&report, &args.out_dir)?;

    for agg in &report.aggregates {
        println!(
            "w={:3}  missing {:.3} +/- {:.3}   overall {:.3} +/- {:.3}",
            agg.window,
            agg.missing_accuracy.mean,
            agg.missing_accuracy.ci95,
            agg.overall_accuracy.mean,
            agg.overall_accuracy.ci95
        );
    }
    println!("reports in {}", args.out_dir.display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.summary)?;
    let report: ExperimentReport = serde_json::from_str(&text)?;

    #[derive(Serialize)]
    struct Resolved<'a> {
        summary: &'a Path,
    }
    write_resolved_config(
        &args.out_dir,
        &Resolved {
            summary: &args.summary,
        },
    )?;
    emit_reports(&report, &args.out_dir)?;
    println!("re-emitted report files to {}", args.out_dir.display());
    Ok(())
}
