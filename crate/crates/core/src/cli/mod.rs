//! The `pvad` command line: synth, train, eval, compare and plot.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric abort.

mod config;
pub mod plot;

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

pub use config::{parse_durations, validate_durations, EncoderConfig, EvalConfig, RunConfig};

use crate::corpus::{
    generate_corpus, label_counts, read_enrollment_table, CorpusManifest, Split, ENROLLMENT_FILE,
};
use crate::error::{Error, Result};
use crate::metrics::{
    compare_reports, eval_set, evaluate_suite, Comparison, MetricsReport, OracleSource,
    PosteriorSource, ReportMeta,
};
use crate::models::{PvadModel, VariantKind};
use crate::training::{
    build_enrollment_table, ensure_speaker_encoder, pvad_examples, train_pvad, train_vad,
    vad_examples, write_history_csv, Checkpoint, CorpusData, EpochLoss,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "pvad", version, about = "Personalized voice activity detection benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a seed-pinned multi-speaker corpus.
    Synth(SynthArgs),
    /// Train one or more systems on a corpus.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or the label oracle) on the test split.
    Eval(EvalArgs),
    /// Paired per-user comparison of two or more reports.
    Compare(CompareArgs),
    /// Render SVG charts from reports.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed override for the command's random streams.
    #[arg(long, env = "PVAD_SEED", value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Corpus output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
    /// Systems to train, comma separated.
    #[arg(long, value_name = "NAMES", value_delimiter = ',', default_value = "DSC,EF,LF,CLF,DCLF")]
    pub variant: Vec<VariantKind>,
    /// Checkpoint output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
    #[arg(long, value_name = "PATH", required_unless_present = "oracle", conflicts_with = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Score the ground-truth labels instead of a model.
    #[arg(long)]
    pub oracle: bool,
    /// Report output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Accuracy-vs-duration points in ms, comma separated.
    #[arg(long, value_name = "CSV")]
    pub durations: Option<String>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Report JSON files.
    #[arg(required = true, num_args = 2..)]
    pub reports: Vec<PathBuf>,
    /// Also write comparison JSON and CSV here.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Report JSON files.
    #[arg(required = true, num_args = 1..)]
    pub reports: Vec<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::Config(_) | Error::Infeasible(_) => EXIT_USAGE,
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Plot(a) => cmd_plot(&a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut config = RunConfig::load(args.common.config.as_deref())?;
    if let Some(seed) = args.common.seed {
        config.corpus.seed = seed;
    }
    let manifest = generate_corpus(&config.corpus, &args.out)?;
    print!("{}", synth_summary(&manifest));
    Ok(())
}

pub fn synth_summary(m: &CorpusManifest) -> String {
    let mut s = format!(
        "corpus seed {}: {} speakers, {} utterances\n",
        m.header.seed,
        m.header.speakers.len(),
        m.utterances.len()
    );
    for split in Split::ALL {
        let utts: Vec<_> = m.split(split).collect();
        let speakers = m.speakers_in(split).len();
        let (mut ts, mut nts, mut ns) = (0, 0, 0);
        for u in &utts {
            if let Ok(l) = u.frame_labels() {
                let (a, b, c) = label_counts(&l);
                ts += a;
                nts += b;
                ns += c;
            }
        }
        let snr: Vec<f64> = utts.iter().map(|u| u.snr_db).collect();
        let (lo, hi) = snr
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let mean = snr.iter().sum::<f64>() / snr.len().max(1) as f64;
        s.push_str(&format!(
            "  {:<5} {:>4} utterances ({} enrolled, {} impostor), {} speakers, frames ts/nts/ns {}/{}/{}, snr dB min {:.1} mean {:.1} max {:.1}\n",
            split.as_str(),
            utts.len(),
            utts.iter().filter(|u| u.enrolled).count(),
            utts.iter().filter(|u| u.impostor).count(),
            speakers,
            ts,
            nts,
            ns,
            if utts.is_empty() { 0.0 } else { lo },
            mean,
            if utts.is_empty() { 0.0 } else { hi },
        ));
    }
    s
}

fn progress(name: &str) -> impl FnMut(&EpochLoss) + '_ {
    move |h| {
        eprintln!(
            "[{name}] epoch {:>3} train {:.5} val {:.5}",
            h.epoch, h.train_loss, h.val_loss
        );
        let _ = std::io::stderr().flush();
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut config = RunConfig::load(args.common.config.as_deref())?;
    if let Some(seed) = args.common.seed {
        config.train.seed = seed;
    }
    if args.variant.is_empty() {
        return Err(Error::Usage("no variant given".into()));
    }
    let data = CorpusData::load(&args.corpus)?;
    let (encoder, table) = ensure_speaker_encoder(
        &data,
        &config.encoder.train_config(),
        config.encoder.crops_per_speaker,
        progress("SPK"),
    )?;
    create_dir(&args.out)?;
    let mut examples = None;
    for &variant in &args.variant {
        let name = variant.as_str();
        let (model, outcome) = if variant == VariantKind::Dsc {
            let train = vad_examples(&data, Split::Train)?;
            let val = vad_examples(&data, Split::Val)?;
            let (vad, out) = train_vad(&train, &val, &config.train, progress("DSC/VAD"))?;
            (PvadModel::dsc(vad, encoder.clone()), out)
        } else {
            if examples.is_none() {
                examples = Some((
                    pvad_examples(&data, Split::Train, &table)?,
                    pvad_examples(&data, Split::Val, &table)?,
                ));
            }
            let (train, val) = examples.as_ref().expect("examples loaded");
            train_pvad(variant, train, val, &config.train, progress(name))?
        };
        let best = outcome.best();
        let ckpt = Checkpoint::from_model(&model, config.train.seed, best.train_loss, best.val_loss);
        let path = args.out.join(format!("{name}.ckpt"));
        ckpt.save(&path)?;
        write_history_csv(&outcome, &args.out.join(format!("{name}_loss.csv")))?;
        println!(
            "{name}: {} parameters, best epoch {} (train {:.5}, val {:.5}) -> {}",
            model.parameter_count(),
            outcome.best_epoch,
            best.train_loss,
            best.val_loss,
            path.display()
        );
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let config = RunConfig::load(args.common.config.as_deref())?;
    let durations = match &args.durations {
        Some(d) => parse_durations(d)?,
        None => config.eval.durations_ms.clone(),
    };
    let data = CorpusData::load(&args.corpus)?;
    let mut meta = ReportMeta {
        corpus_seed: Some(data.manifest.header.seed),
        checkpoint_sha256: None,
    };
    let report = match &args.checkpoint {
        None => {
            let utts = eval_set(&data, Split::Test, &oracle_table(&data))?;
            evaluate_suite(&OracleSource, &utts, &durations, &meta)?
        }
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            meta.checkpoint_sha256 = Some(sha256_hex(&bytes));
            let model = Checkpoint::from_bytes(&bytes)?.into_model()?;
            let table = match model.dsc_parts() {
                Some((_, encoder)) => build_enrollment_table(&data, encoder)?.0,
                None => {
                    if !data.dir.join(ENROLLMENT_FILE).exists() {
                        return Err(Error::Data(format!(
                            "{} has no enrollment table; run `pvad train` on this corpus first",
                            data.dir.display()
                        )));
                    }
                    read_enrollment_table(&data.dir)?
                }
            };
            let utts = eval_set(&data, Split::Test, &table)?;
            evaluate_suite(&model as &dyn PosteriorSource, &utts, &durations, &meta)?
        }
    };
    let files = report.write(&args.out, &report.system)?;
    print!("{}", report_summary(&report));
    for f in files {
        println!("  wrote {}", f.display());
    }
    Ok(())
}

/// Any unit embedding works for the oracle, which ignores enrollment.
fn oracle_table(data: &CorpusData) -> crate::corpus::EnrollmentTable {
    let mut v = vec![0.0; crate::speaker::EMBEDDING_DIM];
    v[0] = 1.0;
    let e = crate::speaker::SpeakerEmbedding::normalized(v).expect("unit vector");
    data.manifest
        .header
        .speakers
        .iter()
        .map(|s| (s.speaker.speaker_id.clone(), e.clone()))
        .collect()
}

pub fn report_summary(r: &MetricsReport) -> String {
    let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:.2}%", 100.0 * x));
    let mut s = format!(
        "{}: fEER PVAD {}, fEER VAD {}, uEER {}, median latency {}, median accuracy {}\n",
        r.system,
        pct(r.feer_pvad.map(|e| e.eer)),
        pct(r.feer_vad.map(|e| e.eer)),
        pct(r.ueer.map(|e| e.eer)),
        r.median_latency_ms.map_or("n/a".into(), |l| format!("{l} ms")),
        pct(r.median_accuracy),
    );
    if !r.accuracy_vs_duration.is_empty() {
        let pts: Vec<String> = r
            .accuracy_vs_duration
            .iter()
            .map(|d| format!("{}ms {:.3}", d.duration_ms, d.accuracy))
            .collect();
        s.push_str(&format!("  accuracy vs duration: {}\n", pts.join(", ")));
    }
    for (k, why) in &r.unavailable {
        s.push_str(&format!("  {k} unavailable: {why}\n"));
    }
    s
}

fn read_reports(paths: &[PathBuf]) -> Result<Vec<MetricsReport>> {
    paths.iter().map(|p| MetricsReport::read(p)).collect()
}

/// Systems ranked on each headline metric, best first.
pub fn winner_table(reports: &[MetricsReport]) -> String {
    type Key = fn(&MetricsReport) -> Option<f64>;
    let metrics: [(&str, Key, bool); 5] = [
        ("fEER PVAD", |r| r.feer_pvad.map(|e| e.eer), false),
        ("fEER VAD", |r| r.feer_vad.map(|e| e.eer), false),
        ("uEER", |r| r.ueer.map(|e| e.eer), false),
        ("median latency ms", |r| r.median_latency_ms.map(|l| l as f64), false),
        ("median accuracy", |r| r.median_accuracy, true),
    ];
    let mut s = String::from("metric,ranking\n");
    for (name, key, higher_better) in metrics {
        let mut ranked: Vec<(f64, &str)> = reports
            .iter()
            .filter_map(|r| Some((key(r)?, r.system.as_str())))
            .collect();
        ranked.sort_by(|a, b| {
            let o = a.0.total_cmp(&b.0);
            if higher_better { o.reverse() } else { o }
        });
        let list: Vec<String> = ranked.iter().map(|(v, n)| format!("{n} ({v:.4})")).collect();
        s.push_str(&format!("{name},{}\n", list.join(" > ")));
    }
    s
}

pub fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let reports = read_reports(&args.reports)?;
    let mut comparisons: Vec<Comparison> = Vec::new();
    for i in 0..reports.len() {
        for j in i + 1..reports.len() {
            comparisons.push(compare_reports(&reports[i], &reports[j])?);
        }
    }
    for c in &comparisons {
        print!("{}", c.to_text());
    }
    let winners = winner_table(&reports);
    print!("{winners}");
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_file(&out.join("comparison.json"), &(serde_json::to_string_pretty(&comparisons)? + "\n"))?;
        let mut csv = String::from("system_a,system_b,metric,user_id,delta\n");
        for c in &comparisons {
            for line in c.to_csv().lines().skip(1) {
                csv.push_str(&format!("{},{},{line}\n", c.system_a, c.system_b));
            }
        }
        write_file(&out.join("comparison.csv"), &csv)?;
        write_file(&out.join("winners.csv"), &winners)?;
    }
    Ok(())
}

pub fn cmd_plot(args: &PlotArgs) -> Result<()> {
    let reports = read_reports(&args.reports)?;
    create_dir(&args.out)?;
    let charts = [
        ("det_pvad.svg", plot::det_svg(&reports)),
        ("accuracy_vs_duration.svg", plot::duration_svg(&reports)),
        ("user_scatter.svg", plot::users_svg(&reports)),
    ];
    for (name, svg) in charts {
        match svg {
            Some(svg) => {
                let path = args.out.join(name);
                write_file(&path, &svg)?;
                println!("wrote {}", path.display());
            }
            None => eprintln!("warning: skipping {name}: no data series in the given reports"),
        }
    }
    Ok(())
}
