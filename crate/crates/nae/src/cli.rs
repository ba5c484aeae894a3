use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use nae_core::eval::MatchMode;
use nae_core::nn::ModelConfig;
use nae_core::noise::{Alpha, BoundMode};
use nae_core::synth::{JitterSpec, Layout, Render, SceneSpec};
use nae_core::train::{AdamConfig, AugmentConfig, TrainConfig};
use nae_core::{PointSet, Sampling};

use crate::dataset::{self, Manifest};
use crate::error::{Error, Result};
use crate::formats::{annotation, checkpoint, field, pgm, AnnotationFile};
use crate::pipeline::{self, MetricsCsv};
use crate::report::{self, ReportRow};
use crate::sweep::{self, SweepConfig};

#[derive(Parser, Debug)]
#[command(
    name = "nae",
    version,
    about = "Refine point annotations with a noised autoencoder"
)]
#[command(args_override_self = true)]
pub struct Cli {
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for generation and inference (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    /// File of `key = value` defaults; command-line flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset with jittered annotations.
    Synth(SynthArgs),
    /// Train a model on a dataset's annotations.
    Train(TrainArgs),
    /// Refine annotations with a trained model.
    Refine(RefineArgs),
    /// Score annotations before and after refinement against ground truth.
    Eval(EvalArgs),
    /// Run the jitter robustness sweep and/or the alpha ablation.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LayoutArg {
    Uniform,
    Perspective,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RenderArg {
    Gaussian,
    Disc,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum BoundArg {
    Perspective,
    Constant,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SamplingArg {
    Bilinear,
    Nearest,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MatchArg {
    Indexed,
    NnMatch,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
pub enum SweepKind {
    Robustness,
    Alpha,
    Both,
}

#[derive(Args, Debug)]
pub struct SceneArgs {
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 8)]
    pub count_min: usize,
    #[arg(long, default_value_t = 14)]
    pub count_max: usize,
    /// Object radius in pixels at full scale.
    #[arg(long, default_value_t = 3.0)]
    pub radius: f64,
    #[arg(long, value_enum, default_value_t = LayoutArg::Uniform)]
    pub layout: LayoutArg,
    /// Object scale at the top row in perspective layouts.
    #[arg(long, default_value_t = 0.5)]
    pub top_scale: f64,
    #[arg(long, value_enum, default_value_t = RenderArg::Gaussian)]
    pub render: RenderArg,
    /// Minimum distance between object centres.
    #[arg(long, default_value_t = 10.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0.05)]
    pub noise_sigma: f64,
}

impl SceneArgs {
    fn spec(&self) -> SceneSpec {
        SceneSpec {
            width: self.width,
            height: self.height,
            count: (self.count_min, self.count_max),
            radius: self.radius,
            render: match self.render {
                RenderArg::Gaussian => Render::Gaussian,
                RenderArg::Disc => Render::Disc,
            },
            layout: match self.layout {
                LayoutArg::Uniform => Layout::Uniform,
                LayoutArg::Perspective => Layout::Perspective {
                    top_scale: self.top_scale,
                },
            },
            min_separation: self.separation,
            noise_sigma: self.noise_sigma,
        }
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of scenes.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Annotation jitter as a fraction of the nearest-neighbour distance.
    #[arg(long, default_value_t = 0.4)]
    pub beta: f64,
    #[command(flatten)]
    pub scene: SceneArgs,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// Sampling range as a fraction of the nearest-neighbour distance.
    #[arg(long, default_value_t = 0.4)]
    pub alpha: f64,
    /// Permit alpha above 0.5, where sampling ranges of neighbours overlap.
    #[arg(long)]
    pub allow_overlap: bool,
    #[arg(long, value_enum, default_value_t = BoundArg::Perspective)]
    pub bound_mode: BoundArg,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 5e-4)]
    pub weight_decay: f64,
    /// Side of the square training crop.
    #[arg(long, default_value_t = 128)]
    pub crop: usize,
    #[arg(long, default_value_t = 0.7)]
    pub scale_min: f64,
    #[arg(long, default_value_t = 1.3)]
    pub scale_max: f64,
    #[arg(long, default_value_t = 0.5)]
    pub flip_prob: f64,
    /// Encoder channel widths, one per stage.
    #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
    pub widths: Vec<usize>,
    /// Drop the encoder-decoder skip connections.
    #[arg(long)]
    pub no_skip: bool,
    /// Fraction of scenes held out for the per-epoch restoration error.
    #[arg(long, default_value_t = 0.1)]
    pub holdout: f64,
}

impl ModelArgs {
    fn config(&self, seed: u64) -> Result<TrainConfig> {
        let config = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: AdamConfig {
                learning_rate: self.lr,
                weight_decay: self.weight_decay,
                ..AdamConfig::default()
            },
            augment: AugmentConfig {
                crop_size: self.crop,
                scale_range: (self.scale_min, self.scale_max),
                flip_prob: self.flip_prob,
            },
            alpha: Alpha::new(self.alpha, self.allow_overlap)?,
            bound_mode: match self.bound_mode {
                BoundArg::Perspective => BoundMode::Perspective,
                BoundArg::Constant => BoundMode::Constant,
            },
            model: ModelConfig {
                widths: self.widths.clone(),
                kernel: 3,
                skip: !self.no_skip,
            },
            holdout_fraction: self.holdout,
            seed,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory (reads the manifest and `.ann.json` files only).
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch metrics CSV (default: next to the checkpoint).
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("input").required(true).args(["annotations", "data"]))]
pub struct RefineArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A single annotation file.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Image for `--annotations` (default: the file the annotations name).
    #[arg(long, requires = "annotations")]
    pub image: Option<PathBuf>,
    /// Refine every scene of a dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output file, or output directory with `--data`.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the predicted field (single-file mode).
    #[arg(long, requires = "annotations")]
    pub field: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SamplingArg::Bilinear)]
    pub sampling: SamplingArg,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["refined", "checkpoint"]))]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Directory of refined annotations written by `refine --data`.
    #[arg(long)]
    pub refined: Option<PathBuf>,
    /// Refine in memory with this checkpoint instead.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Report CSV; a JSON mirror is written beside it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long = "match", value_enum, default_value_t = MatchArg::Indexed)]
    pub match_mode: MatchArg,
    /// Alpha the model was trained with, recorded in the report.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum, default_value_t = SamplingArg::Bilinear)]
    pub sampling: SamplingArg,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long, value_enum, default_value_t = SweepKind::Both)]
    pub kind: SweepKind,
    /// Output directory for `robustness.csv` and `alpha.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// Scenes per generated dataset.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8")]
    pub betas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.3,0.4,0.5,0.6")]
    pub alphas: Vec<f64>,
    /// Jitter used for the alpha ablation.
    #[arg(long, default_value_t = 0.4)]
    pub beta: f64,
    #[arg(long = "match", value_enum, default_value_t = MatchArg::Indexed)]
    pub match_mode: MatchArg,
    #[arg(long, value_enum, default_value_t = SamplingArg::Bilinear)]
    pub sampling: SamplingArg,
    #[command(flatten)]
    pub scene: SceneArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

fn sampling(s: SamplingArg) -> Sampling {
    match s {
        SamplingArg::Bilinear => Sampling::Bilinear,
        SamplingArg::Nearest => Sampling::Nearest,
    }
}

fn match_mode(m: MatchArg) -> MatchMode {
    match m {
        MatchArg::Indexed => MatchMode::Indexed,
        MatchArg::NnMatch => MatchMode::NnMatch,
    }
}

/// Parses `args` (including the program name), folding in `--config`.
pub fn parse<I, T>(args: I) -> std::result::Result<Cli, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let matches = Cli::command().try_get_matches_from(&argv)?;
    if let Some(path) = matches.get_one::<PathBuf>("config") {
        let entries = crate::config::read(path).map_err(CliError::Run)?;
        let extra = config_args(&matches, path, &entries).map_err(CliError::Run)?;
        argv.extend(extra);
    }
    let matches = Cli::command().try_get_matches_from(&argv)?;
    Ok(Cli::from_arg_matches(&matches)?)
}

/// Turns config entries into flags for every option not already given on
/// the command line.
fn config_args(
    matches: &clap::ArgMatches,
    path: &Path,
    entries: &[crate::config::Entry],
) -> Result<Vec<OsString>> {
    let root = Cli::command();
    let (name, sub_matches) = matches.subcommand().expect("a subcommand is required");
    let sub = root
        .find_subcommand(name)
        .expect("matched subcommand exists");
    let mut out = Vec::new();
    for e in entries {
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: e.line,
            message: msg,
        };
        let in_sub = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(e.key.as_str()));
        let arg = in_sub
            .or_else(|| {
                root.get_arguments()
                    .find(|a| a.get_long() == Some(e.key.as_str()))
            })
            .filter(|a| a.get_id() != "config")
            .ok_or_else(|| bad(format!("unknown key `{}` for `{name}`", e.key)))?;
        let source = if in_sub.is_some() {
            sub_matches.value_source(arg.get_id().as_str())
        } else {
            matches.value_source(arg.get_id().as_str())
        };
        if source == Some(ValueSource::CommandLine) {
            continue;
        }
        let flag = OsString::from(format!("--{}", e.key));
        match arg.get_action() {
            ArgAction::SetTrue => match e.value.as_str() {
                "true" => out.push(flag),
                "false" => {}
                v => return Err(bad(format!("`{}` takes true or false, got `{v}`", e.key))),
            },
            ArgAction::Count => {
                let n: u8 = e
                    .value
                    .parse()
                    .map_err(|_| bad(format!("`{}` takes a count, got `{}`", e.key, e.value)))?;
                out.extend(std::iter::repeat_n(flag, n as usize));
            }
            _ => {
                out.push(flag);
                out.push(e.value.clone().into());
            }
        }
    }
    Ok(out)
}

#[derive(Debug)]
pub enum CliError {
    Clap(clap::Error),
    Run(Error),
}

impl From<clap::Error> for CliError {
    fn from(e: clap::Error) -> Self {
        CliError::Clap(e)
    }
}

/// Runs the command line and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match parse(args) {
        Ok(cli) => cli,
        Err(CliError::Clap(e)) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    init_logging(cli.verbose);
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();
}

pub fn execute(cli: &Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Usage("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker threads: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Synth(a) => synth(a, cli.seed),
        Command::Train(a) => train(a, cli.seed),
        Command::Refine(a) => refine(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => run_sweep(a, cli.seed),
    })
}

fn synth(a: &SynthArgs, seed: u64) -> Result<()> {
    let spec = a.scene.spec();
    let jitter = JitterSpec { beta: a.beta };
    let scenes = dataset::generate(a.n, &spec, &jitter, seed)?;
    let manifest = dataset::emit(&a.out, &scenes, &spec, &jitter, seed)?;
    log::info!(
        "wrote {} scenes to {}",
        manifest.scenes.len(),
        a.out.display()
    );
    Ok(())
}

fn train(a: &TrainArgs, seed: u64) -> Result<()> {
    let config = a.model.config(seed)?;
    let samples = dataset::load_training(&a.data)?;
    if samples.is_empty() && config.epochs > 0 {
        return Err(Error::Usage(format!(
            "{} has no scenes to train on",
            a.data.display()
        )));
    }
    let metrics_path = a
        .metrics
        .clone()
        .unwrap_or_else(|| a.out.with_extension("metrics.csv"));
    let mut csv = MetricsCsv::create(&metrics_path)?;
    let outcome = pipeline::train(&samples, &config, |m| {
        log::info!(
            "epoch {}: loss {:?}, holdout error {:?} px",
            m.epoch,
            m.mean_loss,
            m.holdout_restore_err_px
        );
        csv.append(m)
    })?;
    if outcome.diverged {
        log::warn!("training diverged; writing the last parameters anyway");
    }
    checkpoint::write(&a.out, &outcome.checkpoint(&config))
}

fn refine(a: &RefineArgs) -> Result<()> {
    let ckpt = checkpoint::read(&a.checkpoint)?;
    let mode = sampling(a.sampling);
    if let Some(ann_path) = &a.annotations {
        let ann = annotation::read(ann_path)?;
        let image_path = a
            .image
            .clone()
            .unwrap_or_else(|| dataset::resolve(ann_path, &ann.image));
        let image = pgm::read(&image_path)?;
        check_size(&ann.points, &image, ann_path)?;
        let predicted = pipeline::predict(&ckpt, &image)?;
        if let Some(field_path) = &a.field {
            field::write(field_path, &predicted)?;
        }
        let refined = nae_core::restore(&ann.points, &predicted, mode)?;
        return annotation::write(
            &a.out,
            &AnnotationFile {
                image: ann.image,
                points: refined,
            },
        );
    }
    let dir = a.data.as_ref().expect("clap enforces one input");
    let manifest = Manifest::read(dir)?;
    let samples = dataset::load_training(dir)?;
    let refined = pipeline::refine_all(&ckpt, &samples, mode)?;
    for (entry, points) in manifest.scenes.iter().zip(refined) {
        annotation::write(
            &a.out.join(&entry.annotations),
            &AnnotationFile {
                image: entry.image.clone(),
                points,
            },
        )?;
    }
    Ok(())
}

fn check_size(points: &PointSet, image: &nae_core::ImageGrid, path: &Path) -> Result<()> {
    if (points.width(), points.height()) == (image.width(), image.height()) {
        return Ok(());
    }
    Err(Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: format!(
            "image_size {}x{} does not match the {}x{} image",
            points.width(),
            points.height(),
            image.width(),
            image.height()
        ),
    })
}

fn eval(a: &EvalArgs) -> Result<()> {
    let manifest = Manifest::read(&a.data)?;
    let samples = dataset::load_training(&a.data)?;
    let truth = dataset::load_truth(&a.data)?;
    if samples.is_empty() {
        return Err(Error::Usage(format!(
            "{} has no scenes to evaluate",
            a.data.display()
        )));
    }
    let refined = if let Some(dir) = &a.refined {
        manifest
            .scenes
            .iter()
            .map(|e| annotation::read(&dir.join(&e.annotations)).map(|f| f.points))
            .collect::<Result<Vec<_>>>()?
    } else {
        let ckpt = checkpoint::read(a.checkpoint.as_ref().expect("clap enforces one source"))?;
        pipeline::refine_all(&ckpt, &samples, sampling(a.sampling))?
    };
    let annotations: Vec<PointSet> = samples.into_iter().map(|s| s.points).collect();
    let m = pipeline::evaluate(&annotations, &refined, &truth, match_mode(a.match_mode))?;
    let row = ReportRow::from_metrics(Some(manifest.beta), a.alpha, &m);
    report::write(&a.out, &[row])
}

fn run_sweep(a: &SweepArgs, seed: u64) -> Result<()> {
    let cfg = SweepConfig {
        scenes: a.n,
        spec: a.scene.spec(),
        data_seed: seed,
        train: a.model.config(seed)?,
        sampling: sampling(a.sampling),
        match_mode: match_mode(a.match_mode),
    };
    // Validate the ablation up front so a bad alpha list fails before hours
    // of robustness training.
    if a.kind != SweepKind::Robustness {
        for &alpha in &a.alphas {
            Alpha::new(alpha, a.model.allow_overlap)?;
        }
    }
    if a.kind != SweepKind::Alpha {
        let rows = sweep::robustness(&cfg, &a.betas)?;
        report::write(&a.out.join("robustness.csv"), &rows)?;
    }
    if a.kind != SweepKind::Robustness {
        let rows = sweep::alpha_ablation(&cfg, a.beta, &a.alphas, a.model.allow_overlap)?;
        if rows.iter().any(|r| r.has_flag(report::OVERLAP)) {
            log::info!(
                "rows flagged `overlap` used alpha > 0.5, where neighbouring sampling ranges overlap; \
                 such ranges are expected to confuse training"
            );
        }
        report::write(&a.out.join("alpha.csv"), &rows)?;
    }
    Ok(())
}
