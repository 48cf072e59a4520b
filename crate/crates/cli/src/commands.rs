use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use chrono::{Duration, NaiveDateTime};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use flyover_core::adsb::{parse_frame, parse_sbs_line, parse_stream_line, Payload};
use flyover_core::capture::read_wav;
use flyover_core::dataset::{self, parse_index, quantize_env_annotations, read_env_annotations, write_env_annotations, Registry, TableSource};
use flyover_core::eval::{
    average_precision, cross_validate, env_table_csv, evaluate_env, mean_std, probability_trace, results_table_csv,
    trace_csv, CvReport, EnvHour, KindLearner, ResultRow, Scorer,
};
use flyover_core::features::Mfcc;
use flyover_core::models::{self, load_checkpoint, save_checkpoint, ModelKind, TrainConfig, TrainedModel};
use flyover_core::monitor::{run_monitor, SyntheticFactory};
use flyover_core::pipeline::{dataset_features, env_hour, load_features, save_features, training_set};
use flyover_core::review::{CommitOptions, ReviewStore, INDEX_FILE};
use flyover_core::simulate::{emit_as, format_stream, parse_stream, scripted_approach, Scenario, StreamFormat};
use flyover_core::track::{Tracker, DEFAULT_STALE_TIMEOUT_S};
use flyover_core::trigger::{parse_config, TriggerConfig};

/// Folds used for training and cross-validation; the last fold is the test set.
pub const CV_FOLDS: [u8; 5] = [1, 2, 3, 4, 5];
pub const TEST_FOLD: u8 = 6;
const DEFAULT_START: &str = "2020-01-01T00:00:00";

#[derive(Debug, Parser)]
#[command(name = "flyover", version, about = "ADS-B triggered aircraft audio collection and classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decode a timestamped message stream to CSV.
    Decode(DecodeArgs),
    /// Replay a message stream through the trigger loop and write recordings.
    Monitor(MonitorArgs),
    /// Render a flight scenario as a timestamped message stream.
    Simulate(SimulateArgs),
    /// Apply review verdicts and write index.csv and summary.csv.
    BuildDataset(BuildArgs),
    /// Compute MFCC features for every indexed clip.
    Features(FeaturesArgs),
    /// Train a classifier on folds 1 to 5.
    Train(TrainArgs),
    /// Score trained models on the test fold or on annotated hours.
    Eval(EvalArgs),
    /// Quantize event onsets/offsets into 5 s annotation bins.
    EnvLabels(EnvLabelsArgs),
    /// Run the review HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Stream file, or `-` for stdin.
    #[arg(long, default_value = "-")]
    pub input: String,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LocationArgs {
    /// Trigger config (TOML with [[location]] blocks).
    #[arg(long)]
    pub config: PathBuf,
    /// Location id within the config; the first block by default.
    #[arg(long)]
    pub location: Option<u32>,
}

impl LocationArgs {
    fn load(&self) -> Result<TriggerConfig> {
        let text = fs::read_to_string(&self.config).with_context(|| format!("reading {}", self.config.display()))?;
        let cfgs = parse_config(&text)?;
        match self.location {
            Some(id) => cfgs.into_iter().find(|c| c.location_id == id).ok_or_else(|| anyhow!("no location {id} in config")),
            None => cfgs.into_iter().next().ok_or_else(|| anyhow!("config has no [[location]] blocks")),
        }
    }
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    #[command(flatten)]
    pub location: LocationArgs,
    /// Stream to replay, or `-` for stdin.
    #[arg(long)]
    pub replay: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Wall-clock time of stream t = 0, used in filenames.
    #[arg(long, default_value = DEFAULT_START)]
    pub start_time: NaiveDateTime,
    /// Stop at this stream time instead of the last message.
    #[arg(long)]
    pub until: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Avr,
    Sbs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario TOML.
    #[arg(long, conflicts_with = "approach", required_unless_present = "approach")]
    pub scenario: Option<PathBuf>,
    /// Scripted flyby passing this many km from the configured device.
    #[arg(long, requires = "config")]
    pub approach: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub location: Option<u32>,
    #[arg(long, value_enum, default_value = "avr")]
    pub format: Format,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Recording directory holding WAVs, recordings.csv and verdicts.jsonl.
    #[arg(long)]
    pub dir: PathBuf,
    /// Include clips without a verdict as accepted.
    #[arg(long)]
    pub accept_all: bool,
    /// Airframe registry CSV.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Extra hex,registration CSVs voting on registrations.
    #[arg(long = "source", requires = "registry")]
    pub sources: Vec<PathBuf>,
    #[arg(long, default_value_t = dataset::DEFAULT_FOLDS)]
    pub folds: u8,
    #[arg(long, default_value_t = dataset::DEFAULT_SESSION_GAP_HOURS)]
    pub session_gap_hours: i64,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub dir: PathBuf,
    /// Output directory; `<dir>/features` by default.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Kind {
    Logreg,
    Mlp,
    Cnn,
}

impl From<Kind> for ModelKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Logreg => ModelKind::LogReg,
            Kind::Mlp => ModelKind::Mlp,
            Kind::Cnn => ModelKind::Cnn,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Feature directory written by `features`.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_enum)]
    pub model: Kind,
    /// Also run 5-fold cross-validation and keep the per-fold models.
    #[arg(long)]
    pub fold_cv: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 216)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("mode").required(true).args(["test", "env"]))]
pub struct EvalArgs {
    /// Directory with checkpoints from `train`.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long, value_enum)]
    pub model: Kind,
    /// Score on the held-out test fold.
    #[arg(long, requires = "features")]
    pub test: bool,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Score on annotated hours.
    #[arg(long, requires_all = ["labels", "audio_dir"])]
    pub env: bool,
    /// Annotation CSV (hour_id,segment_index,t_start_s,label).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Directory holding `<hour_id>.wav` for each annotated hour.
    #[arg(long)]
    pub audio_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EnvLabelsArgs {
    /// CSV of events with columns onset_s,offset_s.
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub hour_id: String,
    #[arg(long, default_value_t = dataset::HOUR_SECONDS)]
    pub hour_len_s: f64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Airframe registry CSV used on commit.
    #[arg(long)]
    pub registry: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Decode(a) => decode(&a),
        Command::Monitor(a) => monitor(&a),
        Command::Simulate(a) => simulate(&a),
        Command::BuildDataset(a) => build_dataset(&a),
        Command::Features(a) => features(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => evaluate(&a),
        Command::EnvLabels(a) => env_labels(&a),
        Command::Serve(a) => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(crate::service::serve(&a.dir, &a.host, a.port, a.registry))
        }
    }
}

fn read_input(path: &str) -> Result<String> {
    if path == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        Ok(s)
    } else {
        fs::read_to_string(path).with_context(|| format!("reading {path}"))
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

#[derive(Debug, Default, Serialize)]
struct DecodedRow {
    t_s: f64,
    icao: String,
    df: Option<u8>,
    crc_ok: Option<bool>,
    kind: &'static str,
    lat: Option<f64>,
    lon: Option<f64>,
    altitude_ft: Option<i32>,
    callsign: Option<String>,
    ground_speed_kt: Option<f64>,
    heading_deg: Option<f64>,
    vertical_rate_fpm: Option<i32>,
}

/// One CSV row per message. Positions are the tracker's resolved position
/// after the message, so they appear once an even/odd pair is complete.
pub fn decode_stream(text: &str) -> Result<String> {
    let events = parse_stream(text)?;
    let mut tracker = Tracker::new(DEFAULT_STALE_TIMEOUT_S);
    let mut w = csv::Writer::from_writer(Vec::new());
    for ev in &events {
        let line = ev.line.trim();
        let row = if line.starts_with('*') {
            let Ok(raw) = parse_stream_line(line, ev.t_s) else {
                w.serialize(DecodedRow {
                    t_s: ev.t_s,
                    kind: "malformed",
                    ..Default::default()
                })?;
                continue;
            };
            let frame = parse_frame(&raw);
            tracker.ingest(&frame, ev.t_s);
            let mut row = DecodedRow {
                t_s: ev.t_s,
                icao: frame.icao.to_string(),
                df: Some(frame.df),
                crc_ok: Some(frame.crc_ok),
                kind: "other",
                ..Default::default()
            };
            if frame.crc_ok {
                match &frame.payload {
                    Payload::AirbornePosition(p) => {
                        row.kind = "position";
                        row.altitude_ft = p.altitude_ft;
                        if let Some((lat, lon)) = tracker.get(frame.icao).and_then(|s| s.position) {
                            row.lat = Some(lat);
                            row.lon = Some(lon);
                        }
                    }
                    Payload::Velocity(v) => {
                        row.kind = "velocity";
                        row.ground_speed_kt = Some(v.ground_speed_kt);
                        row.heading_deg = Some(v.heading_deg);
                        row.vertical_rate_fpm = v.vertical_rate_fpm;
                    }
                    Payload::Identification(id) => {
                        row.kind = "identification";
                        row.callsign = Some(id.callsign.clone());
                    }
                    Payload::Opaque { .. } => {}
                }
            } else {
                row.kind = "bad_crc";
            }
            row
        } else {
            match parse_sbs_line(line) {
                Ok(rec) => DecodedRow {
                    t_s: ev.t_s,
                    icao: rec.icao.to_string(),
                    kind: "sbs",
                    lat: rec.position.map(|p| p.0),
                    lon: rec.position.map(|p| p.1),
                    altitude_ft: rec.altitude_ft,
                    callsign: rec.callsign,
                    ground_speed_kt: rec.ground_speed_kt,
                    heading_deg: rec.track_deg,
                    vertical_rate_fpm: rec.vertical_rate_fpm,
                    ..Default::default()
                },
                Err(_) => DecodedRow {
                    t_s: ev.t_s,
                    kind: "malformed",
                    ..Default::default()
                },
            }
        };
        w.serialize(row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn decode(a: &DecodeArgs) -> Result<()> {
    let out = decode_stream(&read_input(&a.input)?)?;
    write_output(a.output.as_deref(), &out)
}

#[derive(Debug, Serialize)]
struct MonitorSummary {
    lines: usize,
    malformed_lines: usize,
    bad_crc: usize,
    snapshots: usize,
    recordings: Vec<String>,
    aborted: usize,
    unfinished: usize,
}

fn monitor(a: &MonitorArgs) -> Result<()> {
    let cfg = a.location.load()?;
    let events = parse_stream(&read_input(&a.replay)?)?;
    fs::create_dir_all(&a.out)?;
    let report = run_monitor(&events, &cfg, a.start_time, a.until, &a.out, &mut SyntheticFactory)?;
    print_json(&MonitorSummary {
        lines: report.lines,
        malformed_lines: report.malformed_lines,
        bad_crc: report.bad_crc,
        snapshots: report.snapshots,
        recordings: report.recordings.iter().map(|r| r.row.filename.clone()).collect(),
        aborted: report.aborted,
        unfinished: report.unfinished,
    })
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let scenario = match (&a.scenario, a.approach) {
        (Some(path), _) => Scenario::from_toml(&fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)?,
        (None, Some(km)) => {
            let loc = LocationArgs {
                config: a.config.clone().expect("clap enforces --config with --approach"),
                location: a.location,
            };
            scripted_approach(&loc.load()?, km)
        }
        (None, None) => bail!("either --scenario or --approach is required"),
    };
    let fmt = match a.format {
        Format::Avr => StreamFormat::Avr,
        Format::Sbs => StreamFormat::Sbs,
    };
    write_output(a.output.as_deref(), &format_stream(&emit_as(&scenario, fmt)))
}

fn load_table_source(path: &Path) -> Result<TableSource> {
    #[derive(serde::Deserialize)]
    struct Row {
        hex: flyover_core::adsb::Icao,
        registration: String,
    }
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut t = TableSource::default();
    for row in r.deserialize::<Row>() {
        let row = row?;
        t.0.insert(row.hex, row.registration);
    }
    Ok(t)
}

fn build_dataset(a: &BuildArgs) -> Result<()> {
    let store = ReviewStore::open(&a.dir)?;
    let registry = a.registry.as_deref().map(Registry::load).transpose()?;
    let sources = a.sources.iter().map(|p| load_table_source(p)).collect::<Result<Vec<_>>>()?;
    let opts = CommitOptions {
        accept_all: a.accept_all,
        session_gap: Duration::hours(a.session_gap_hours),
        n_folds: a.folds,
        registry: registry.as_ref(),
        sources: sources.iter().map(|s| s as &dyn dataset::RegistrationSource).collect(),
    };
    print_json(&store.commit(&opts)?)
}

fn features(a: &FeaturesArgs) -> Result<()> {
    let index = fs::read_to_string(a.dir.join(INDEX_FILE)).with_context(|| format!("reading {}", a.dir.join(INDEX_FILE).display()))?;
    let records = parse_index(&index)?;
    let items = dataset_features(&a.dir, &records)?;
    let out = a.out.clone().unwrap_or_else(|| a.dir.join("features"));
    save_features(&out, &items)?;
    println!("{} segments from {} clips -> {}", items.len(), records.len(), out.display());
    Ok(())
}

fn checkpoint_path(dir: &Path, kind: ModelKind, fold: Option<u8>) -> PathBuf {
    match fold {
        Some(k) => dir.join(format!("{kind}_fold{k}.ckpt")),
        None => dir.join(format!("{kind}.ckpt")),
    }
}

fn summary_path(dir: &Path, kind: ModelKind, what: &str) -> PathBuf {
    dir.join(format!("{kind}_{what}.json"))
}

fn train(a: &TrainArgs) -> Result<()> {
    let kind: ModelKind = a.model.into();
    let items = load_features(&a.features)?;
    let set = training_set(&items, &CV_FOLDS);
    if set.xs.is_empty() {
        bail!("no training segments in folds 1 to 5");
    }
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed: a.seed,
        ..TrainConfig::default()
    };
    fs::create_dir_all(&a.out)?;
    if a.fold_cv {
        let learner = KindLearner { kind, config: cfg.clone() };
        let out = cross_validate(&learner, &set.xs, &set.ys, &set.folds, &CV_FOLDS, a.seed)?;
        for ((k, _), m) in out.report.folds.iter().zip(&out.models) {
            save_checkpoint(m, &checkpoint_path(&a.out, kind, Some(*k)))?;
        }
        fs::write(summary_path(&a.out, kind, "cv"), serde_json::to_string_pretty(&out.report)?)?;
        print_cv(&out.report);
    }
    let model = models::fit(kind, &set.xs, &set.ys, &cfg)?;
    let path = checkpoint_path(&a.out, kind, None);
    save_checkpoint(&model, &path)?;
    println!("{kind}: trained on {} segments -> {}", set.xs.len(), path.display());
    write_results_table(&a.out)?;
    Ok(())
}

fn print_cv(r: &CvReport) {
    for (k, ap) in &r.folds {
        println!("{} fold {k}: AP {:.4}", r.kind, ap);
    }
    println!("{} cross-validation mAP {:.4} ± {:.4}", r.kind, r.mean, r.std);
}

/// The final model plus any per-fold models, in that order.
fn load_models(dir: &Path, kind: ModelKind) -> Result<Vec<(String, TrainedModel)>> {
    let mut out = Vec::new();
    for k in CV_FOLDS {
        let p = checkpoint_path(dir, kind, Some(k));
        if p.exists() {
            out.push((format!("{kind}_fold{k}"), load_checkpoint(&p)?));
        }
    }
    let p = checkpoint_path(dir, kind, None);
    if p.exists() {
        out.insert(0, (kind.to_string(), load_checkpoint(&p)?));
    }
    if out.is_empty() {
        bail!("no {kind} checkpoints in {}", dir.display());
    }
    Ok(out)
}

#[derive(Debug, Serialize, serde::Deserialize)]
struct Summary {
    mean: f64,
    std: f64,
    per_model: Vec<(String, f64)>,
}

fn evaluate(a: &EvalArgs) -> Result<()> {
    let kind: ModelKind = a.model.into();
    let all = load_models(&a.models, kind)?;
    if a.test {
        let items = load_features(a.features.as_ref().expect("clap enforces --features"))?;
        let set = training_set(&items, &[TEST_FOLD]);
        if set.xs.is_empty() {
            bail!("no segments in test fold {TEST_FOLD}");
        }
        let mut per_model = Vec::new();
        for (name, m) in &all {
            let scores = m.score_all(&set.xs)?;
            let ap = average_precision(&scores, &set.ys)?;
            println!("{name} test AP {ap:.4}");
            per_model.push((name.clone(), ap));
        }
        let (mean, std) = summarize(&per_model);
        fs::write(summary_path(&a.models, kind, "test"), serde_json::to_string_pretty(&Summary { mean, std, per_model })?)?;
    }
    if a.env {
        let text = fs::read_to_string(a.labels.as_ref().expect("clap enforces --labels"))?;
        let audio_dir = a.audio_dir.as_ref().expect("clap enforces --audio-dir");
        let mfcc = Mfcc::new();
        let hours = read_env_annotations(&text)?
            .into_iter()
            .map(|(id, labels)| {
                let clip = read_wav(&audio_dir.join(format!("{id}.wav")))?;
                Ok(env_hour(&mfcc, &id, &clip, labels)?)
            })
            .collect::<Result<Vec<EnvHour>>>()?;
        // The per-hour table uses the cross-validation models when present.
        let cv: Vec<&(String, TrainedModel)> = all.iter().filter(|(n, _)| n.contains("_fold")).collect();
        let chosen: Vec<&(String, TrainedModel)> = if cv.is_empty() { all.iter().collect() } else { cv };
        let scorers: Vec<(String, &dyn Scorer)> = chosen.iter().map(|(n, m)| (n.clone(), m as &dyn Scorer)).collect();
        let report = evaluate_env(&scorers, &hours)?;
        fs::write(a.models.join(format!("{kind}_env_hours.csv")), env_table_csv(&report))?;
        for h in &hours {
            let rows = probability_trace(scorers[0].1, h)?;
            fs::write(a.models.join(format!("{kind}_trace_{}.csv", h.id)), trace_csv(&rows))?;
        }
        let (pm, ps) = report.per_hour_summary();
        let (qm, qs) = report.pooled_summary();
        println!("{kind} env per-hour mAP {pm:.4} ± {ps:.4}");
        println!("{kind} env pooled mAP {qm:.4} ± {qs:.4}");
        if !report.no_positive_hours.is_empty() {
            println!("hours without aircraft bins: {}", report.no_positive_hours.join(", "));
        }
        let per_model = report.models.iter().cloned().zip(report.pooled.iter().copied()).collect();
        fs::write(summary_path(&a.models, kind, "env"), serde_json::to_string_pretty(&Summary { mean: qm, std: qs, per_model })?)?;
    }
    write_results_table(&a.models)
}

/// Mean ± std over the per-fold models when there are any, else the single
/// model's value with zero spread.
fn summarize(per_model: &[(String, f64)]) -> (f64, f64) {
    let folds: Vec<f64> = per_model.iter().filter(|(n, _)| n.contains("_fold")).map(|p| p.1).collect();
    if folds.is_empty() {
        (per_model[0].1, 0.0)
    } else {
        mean_std(&folds)
    }
}

fn read_summary(path: &Path) -> Option<(f64, f64)> {
    let s: Summary = serde_json::from_str(&fs::read_to_string(path).ok()?).ok()?;
    Some((s.mean, s.std))
}

/// Rewrites `results.csv` from whatever summaries exist in `dir`.
fn write_results_table(dir: &Path) -> Result<()> {
    let mut rows = Vec::new();
    for kind in ModelKind::ALL {
        let cv = fs::read_to_string(summary_path(dir, kind, "cv"))
            .ok()
            .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
            .and_then(|v| Some((v["mean"].as_f64()?, v["std"].as_f64()?)));
        let row = ResultRow {
            kind,
            cv,
            test: read_summary(&summary_path(dir, kind, "test")),
            env: read_summary(&summary_path(dir, kind, "env")),
        };
        if row.cv.is_some() || row.test.is_some() || row.env.is_some() || checkpoint_path(dir, kind, None).exists() {
            rows.push(row);
        }
    }
    fs::write(dir.join("results.csv"), results_table_csv(&rows))?;
    Ok(())
}

fn env_labels(a: &EnvLabelsArgs) -> Result<()> {
    #[derive(serde::Deserialize)]
    struct Event {
        onset_s: f64,
        offset_s: f64,
    }
    let mut r = csv::Reader::from_path(&a.events).with_context(|| format!("reading {}", a.events.display()))?;
    let events = r
        .deserialize::<Event>()
        .map(|e| e.map(|e| (e.onset_s, e.offset_s)))
        .collect::<Result<Vec<_>, _>>()?;
    let labels = quantize_env_annotations(&events, a.hour_len_s)?;
    let text = write_env_annotations([(a.hour_id.as_str(), labels.as_slice())])?;
    write_output(a.output.as_deref(), &text)
}
