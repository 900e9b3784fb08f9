use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use voxalign::data::{generate_synthetic, Dataset, SyntheticSpec};
use voxalign::encoders::PartOfSpeech;
use voxalign::retrieval::{self, HighlightRequest, Interp, MedianRule};
use voxalign::training::gradcheck::{check_random_cases, CaseLimits};
use voxalign::training::{self, Checkpoint, TrainConfig};
use voxalign::{Error, Result};

/// Gradient steps of the finite-difference check.
const GRADCHECK_STEP: f64 = 1e-5;
const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(
    name = "voxalign",
    version,
    about = "Video/caption alignment, retrieval and action highlighting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset with planted verb/noun regions.
    GenSynthetic(GenArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Recall and median rank on a dataset, both directions.
    Eval(EvalArgs),
    /// Rank the videos of an index for a free-text query.
    Retrieve(RetrieveArgs),
    /// Export the relevance map of one token over one video.
    Highlight(HighlightArgs),
    /// Compare analytic and finite-difference gradients on random problems.
    Gradcheck(GradcheckArgs),
    /// Load and validate a dataset.
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// key=value spec file; defaults are used for absent keys.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory or its manifest.jsonl.
    #[arg(long)]
    data: PathBuf,
    /// key=value config file; defaults are used for absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the per-epoch loss log here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Also report reranked metrics.
    #[arg(long)]
    rerank: bool,
    /// Median of an even number of ranks: lower or midpoint.
    #[arg(long, default_value = "lower", value_parser = parse_median)]
    median: MedianRule,
}

#[derive(Args, Debug)]
struct RetrieveArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    query: String,
    /// Dataset directory (or manifest) whose videos are searched.
    #[arg(long)]
    index: PathBuf,
    #[arg(long, default_value_t = 10)]
    topk: usize,
    /// Rank by the joint score alone.
    #[arg(long)]
    no_rerank: bool,
}

#[derive(Args, Debug)]
struct HighlightArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset directory (or manifest) holding the video.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    video: String,
    #[arg(long)]
    token: String,
    #[arg(long, value_parser = parse_pos)]
    pos: PartOfSpeech,
    /// Softmax temperature; defaults to the training value.
    #[arg(long)]
    beta: Option<f64>,
    /// Output grid as TxHxW, e.g. 16x112x112.
    #[arg(long, value_parser = parse_resolution)]
    resolution: Option<[usize; 3]>,
    #[arg(long, default_value = "trilinear", value_parser = parse_interp)]
    interp: Interp,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Training config supplying alpha, beta_train and the loss weights.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    cases: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long)]
    data: PathBuf,
}

fn parse_median(s: &str) -> std::result::Result<MedianRule, String> {
    MedianRule::parse(s).ok_or_else(|| format!("expected lower or midpoint, got {s:?}"))
}

fn parse_interp(s: &str) -> std::result::Result<Interp, String> {
    Interp::parse(s).ok_or_else(|| format!("expected trilinear or nearest, got {s:?}"))
}

fn parse_pos(s: &str) -> std::result::Result<PartOfSpeech, String> {
    match PartOfSpeech::parse(s) {
        Some(p @ (PartOfSpeech::Verb | PartOfSpeech::Noun)) => Ok(p),
        _ => Err(format!("expected VERB or NOUN, got {s:?}")),
    }
}

fn parse_resolution(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split('x')
        .map(|p| p.parse::<usize>().map_err(|_| format!("bad extent {p:?} in {s:?}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [t, h, w] if t > 0 && h > 0 && w > 0 => Ok([t, h, w]),
        _ => Err(format!("expected three positive extents TxHxW, got {s:?}")),
    }
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    path.map_or_else(|| Ok(TrainConfig::default()), TrainConfig::load)
}

/// Loads a dataset and checks that it shares the checkpoint's vocabulary.
fn load_matching(data: &Path, ck: &Checkpoint<f64>) -> Result<Dataset<f64>> {
    let d = Dataset::<f64>::load(data)?;
    if d.vocab != ck.vocab {
        return Err(Error::InvalidInput(format!(
            "vocabulary of {} differs from the checkpoint's",
            d.root.display()
        )));
    }
    Ok(d)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynthetic(a) => {
            let spec = match &a.spec {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                        path: p.clone(),
                        source: e,
                    })?;
                    SyntheticSpec::parse(&text)?
                }
                None => SyntheticSpec::default(),
            };
            let summary = generate_synthetic(&spec, &a.out)?;
            println!(
                "train_videos={} test_videos={} vocab={} out={}",
                spec.train_videos,
                spec.test_videos,
                summary.vocab.len(),
                a.out.display()
            );
        }
        Command::Train(a) => {
            let config = load_config(a.config.as_deref())?;
            let data = Dataset::<f64>::load(&a.data)?;
            let mut lines = String::new();
            let outcome = training::train_with(&data, &config, |e| {
                println!("{e}");
                lines.push_str(&format!("{e}\n"));
            })?;
            outcome.checkpoint.save(&a.out)?;
            if let Some(p) = &a.log {
                std::fs::write(p, lines).map_err(|e| Error::Io {
                    path: p.clone(),
                    source: e,
                })?;
            }
        }
        Command::Eval(a) => {
            let ck = Checkpoint::<f64>::load(&a.ckpt)?;
            let data = load_matching(&a.data, &ck)?;
            for r in retrieval::evaluate(&ck.model, &data, a.rerank, a.median)? {
                println!("{r}");
            }
        }
        Command::Retrieve(a) => {
            let ck = Checkpoint::<f64>::load(&a.ckpt)?;
            let index = load_matching(&a.index, &ck)?;
            for hit in retrieval::search(&ck.model, &ck.vocab, &index, &a.query, a.topk, !a.no_rerank)? {
                println!("rank={} video_id={} score={:.6}", hit.rank, hit.video_id, hit.score);
            }
        }
        Command::Highlight(a) => {
            let ck = Checkpoint::<f64>::load(&a.ckpt)?;
            let data = load_matching(&a.data, &ck)?;
            let v = data
                .video_index(&a.video)
                .ok_or_else(|| Error::InvalidInput(format!("video {:?} is not in the dataset", a.video)))?;
            let video = &data.videos[v];
            let req = HighlightRequest {
                token: a.token,
                pos: a.pos,
                beta: a.beta.unwrap_or(ck.config.beta_train),
                resolution: a.resolution,
                interp: a.interp,
            };
            let export = retrieval::highlight(&ck.model, &ck.vocab, &video.slow, &video.fast, &req)?;
            export.write(&a.out)?;
            print!("{}", export.summary());
        }
        Command::Gradcheck(a) => {
            let config = load_config(a.config.as_deref())?;
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let report = check_random_cases(
                a.cases,
                CaseLimits::default(),
                &config.loss_config(),
                GRADCHECK_STEP,
                &mut rng,
            )?;
            println!(
                "max_rel_error={:e} checked={} skipped={} tolerance={:e}",
                report.max_rel_error, report.checked, report.skipped, GRADCHECK_TOL
            );
            if !report.passes(GRADCHECK_TOL) {
                return Err(Error::Internal(format!(
                    "gradient check failed: max relative error {:e} >= {:e}",
                    report.max_rel_error, GRADCHECK_TOL
                )));
            }
        }
        Command::Validate(a) => {
            let d = Dataset::<f64>::load(&a.data)?;
            let verbs = d.vocab.ids_with_pos(PartOfSpeech::Verb).len();
            let nouns = d.vocab.ids_with_pos(PartOfSpeech::Noun).len();
            let masks = d.videos.iter().filter(|v| v.masks.is_some()).count();
            println!(
                "videos={} captions={} vocab={} verbs={} nouns={} slow_channels={} fast_channels={} with_masks={}",
                d.videos.len(),
                d.captions.len(),
                d.vocab.len(),
                verbs,
                nouns,
                d.slow_channels(),
                d.fast_channels(),
                masks
            );
        }
    }
    Ok(())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::new()
        .filter_level(log::LevelFilter::Warn)
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error kind=usage message={}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error kind={} message={}", e.kind(), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
