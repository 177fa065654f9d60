//! `npmesh` command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use npmesh_core::bench::{rows_to_csv, run_benchmark, BenchConfig, Method};
use npmesh_core::codec::{self, ProgressiveStream, Ranking, DEFAULT_LOSS_CANDIDATES};
use npmesh_core::gradcheck::{self, GradcheckSuite, LayerCheck};
use npmesh_core::report::{evaluate, StreamSizes};
use npmesh_core::train::dataset::load_normalized;
use npmesh_core::train::{build_manifest, train, Manifest, Sample, Split, TrainConfig};
use npmesh_core::{CoreError, ErrorKind, Model};
use npmesh_geom::lod::{build_hierarchy, load_hierarchy, save_hierarchy, HierarchyOptions, DEFAULT_LEVELS, DEFAULT_TARGET_FACES};
use npmesh_geom::{obj, shapes, HalfEdgeMesh};
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_FORMAT: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "npmesh", version, about = "Neural progressive mesh toolkit")]
pub struct Cli {
    /// Worker threads (0 picks the machine default).
    #[arg(long, global = true, env = "NPM_THREADS", default_value_t = 0)]
    pub threads: usize,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build and cache the subdivision hierarchy of a mesh.
    Remesh(RemeshArgs),
    /// Train a model on a manifest.
    Train(TrainArgs),
    /// Compress a mesh into a progressive stream.
    Encode(EncodeArgs),
    /// Reconstruct a mesh from a (possibly truncated) stream.
    Decode(DecodeArgs),
    /// Compare a reconstruction against its ground truth.
    Eval(EvalArgs),
    /// Rate-distortion table for the neural codec and the baselines.
    Bench(BenchArgs),
    /// Finite-difference check of every differentiable layer.
    Gradcheck(GradcheckArgs),
    /// Write synthetic test meshes.
    Corpus(CorpusArgs),
    /// Split a directory of meshes into train/val/test.
    Manifest(ManifestArgs),
}

#[derive(Debug, Args)]
pub struct RemeshArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TARGET_FACES)]
    pub coarse_faces: usize,
    #[arg(long, default_value_t = DEFAULT_LEVELS)]
    pub levels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// JSON training config; missing keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from the state stored in `--out`.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub coarse_faces: Option<usize>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub decimations: Option<usize>,
    #[arg(long)]
    pub grad_accum: Option<usize>,
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RankingArg {
    Magnitude,
    Loss,
}

impl From<RankingArg> for Ranking {
    fn from(r: RankingArg) -> Self {
        match r {
            RankingArg::Magnitude => Ranking::Magnitude,
            RankingArg::Loss => Ranking::Loss,
        }
    }
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// OBJ file, or a directory written by `remesh`.
    #[arg(long)]
    pub input: PathBuf,
    /// Records to transmit: a count or `all`.
    #[arg(long, default_value = "all")]
    pub features: String,
    #[arg(long, value_enum, default_value_t = RankingArg::Magnitude)]
    pub ranking: RankingArg,
    #[arg(long, default_value_t = DEFAULT_LOSS_CANDIDATES)]
    pub loss_candidates: usize,
    #[arg(long, default_value_t = DEFAULT_TARGET_FACES)]
    pub coarse_faces: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub stream: PathBuf,
    /// Use only the first N bytes.
    #[arg(long)]
    pub prefix_bytes: Option<usize>,
    /// Output level (defaults to the finest).
    #[arg(long)]
    pub level: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredFrame {
    /// Prediction already lives in the unit-cube frame of the ground truth.
    Normalized,
    /// Prediction shares the ground truth's original coordinates.
    Input,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Stream the prediction was decoded from; adds the compression ratio.
    #[arg(long)]
    pub stream: Option<PathBuf>,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub symmetric: bool,
    #[arg(long, value_enum, default_value_t = PredFrame::Normalized)]
    pub pred_frame: PredFrame,
    /// Report path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "neural,qslim,midpoint,loop,butterfly")]
    pub methods: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0,40,400")]
    pub budgets: Vec<usize>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long, default_value_t = DEFAULT_TARGET_FACES)]
    pub coarse_faces: usize,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = RankingArg::Magnitude)]
    pub ranking: RankingArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = gradcheck::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also run a layer with a deliberately wrong gradient.
    #[arg(long)]
    pub include_broken: bool,
    /// JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 12)]
    pub count: u64,
    /// Resolution; level 1 gives 1280 faces.
    #[arg(long, default_value_t = 1)]
    pub level: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ManifestArgs {
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Core(CoreError),
    Input(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e.kind() {
                ErrorKind::Input => EXIT_INPUT,
                ErrorKind::Format => EXIT_FORMAT,
                ErrorKind::Numerical => EXIT_NUMERICAL,
            },
            CliError::Input(_) => EXIT_INPUT,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Input(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl<E: Into<CoreError>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Core(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Parse `args`, run the command and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if cli.verbose {
        let _ = env_logger::Builder::from_default_env()
            .filter_level(log::LevelFilter::Info)
            .try_init();
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_INPUT;
        }
    };
    match pool.install(|| execute(&cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: &Command) -> CliResult<()> {
    match cmd {
        Command::Remesh(a) => cmd_remesh(a),
        Command::Train(a) => cmd_train(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Corpus(a) => cmd_corpus(a),
        Command::Manifest(a) => cmd_manifest(a),
    }
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Input(format!("{what} {} not found", path.display())))
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(CoreError::from)?;
    s.push('\n');
    std::fs::write(path, s).map_err(CoreError::from)?;
    Ok(())
}

#[derive(Serialize)]
struct RemeshSummary {
    input: PathBuf,
    validation: npmesh_geom::ValidationReport,
    normalization: npmesh_geom::Similarity,
    options: HierarchyOptions,
    faces: Vec<usize>,
    vertices: Vec<usize>,
    projection_fallbacks: usize,
}

pub fn cmd_remesh(a: &RemeshArgs) -> CliResult<()> {
    require_file(&a.input, "input")?;
    if a.levels == 0 || a.coarse_faces < 4 {
        return Err(CliError::Input("--levels must be positive and --coarse-faces at least 4".into()));
    }
    let mesh = obj::load_obj(&a.input)?;
    let report = mesh.validate();
    if !report.is_valid() {
        let json = serde_json::to_string_pretty(&report).map_err(CoreError::from)?;
        eprintln!("{json}");
        return Err(CliError::Input(format!("{} fails validation", a.input.display())));
    }
    let (normalized, similarity) = mesh.normalize_to_unit_cube()?;
    let options = HierarchyOptions {
        target_faces: a.coarse_faces,
        levels: a.levels,
        seed: a.seed,
        jitter: a.jitter,
    };
    let h = build_hierarchy(&normalized, &options)?;
    save_hierarchy(&h, &a.out)?;
    let summary = RemeshSummary {
        input: a.input.clone(),
        validation: report,
        normalization: similarity,
        options: h.options,
        faces: h.levels.iter().map(|l| l.faces.len()).collect(),
        vertices: h.levels.iter().map(|l| l.positions.len()).collect(),
        projection_fallbacks: h.surface_map.as_ref().map_or(0, |m| m.fallback_count()),
    };
    write_json(&a.out.join("summary.json"), &summary)?;
    info!("hierarchy with faces {:?} written to {}", summary.faces, a.out.display());
    Ok(())
}

/// Config from `--config` with command-line overrides applied.
pub fn train_config(a: &TrainArgs) -> CliResult<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            require_file(p, "config")?;
            let text = std::fs::read_to_string(p).map_err(CoreError::from)?;
            serde_json::from_str(&text).map_err(|e| CliError::Input(format!("config {}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if a.max_steps.is_some() {
        cfg.max_steps = a.max_steps;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = a.beta {
        cfg.beta = v;
    }
    if let Some(v) = a.coarse_faces {
        cfg.coarse_faces = v;
    }
    if let Some(v) = a.levels {
        cfg.levels = v;
    }
    if let Some(v) = a.decimations {
        cfg.decimations = v;
    }
    if let Some(v) = a.grad_accum {
        cfg.grad_accum = v;
    }
    if a.no_augment {
        cfg.augment = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    require_file(&a.manifest, "manifest")?;
    let cfg = train_config(a)?;
    let manifest = Manifest::load(&a.manifest)?;
    let out = train(&manifest, &cfg, &a.out, a.resume)?;
    info!("finished at step {}; checkpoint {}", out.state.step, out.last.display());
    Ok(())
}

/// Training sample for `input`: a cached hierarchy directory or an OBJ,
/// which is normalized and remeshed with zero jitter.
pub fn load_sample(input: &Path, coarse_faces: usize, levels: usize, seed: u64) -> CliResult<Sample> {
    let name = input.display().to_string();
    if input.is_dir() {
        let h = load_hierarchy(input)?;
        if h.depth() != levels {
            return Err(CliError::Input(format!("hierarchy has {} levels, model has {levels}", h.depth())));
        }
        return Ok(Sample::from_hierarchy(name, &h)?);
    }
    require_file(input, "input")?;
    let mesh = load_normalized(input)?;
    let options = HierarchyOptions {
        target_faces: coarse_faces,
        levels,
        seed,
        jitter: 0.0,
    };
    Ok(Sample::from_hierarchy(name, &build_hierarchy(&mesh, &options)?)?)
}

pub fn parse_budget(s: &str, total: usize) -> CliResult<usize> {
    if s == "all" {
        return Ok(total);
    }
    s.parse::<usize>()
        .map_err(|_| CliError::Input(format!("--features expects a count or 'all', got '{s}'")))
}

pub fn cmd_encode(a: &EncodeArgs) -> CliResult<()> {
    require_file(&a.model, "model")?;
    let model = Model::load(&a.model)?;
    let sample = load_sample(&a.input, a.coarse_faces, model.levels, a.seed)?;
    let total: usize = sample.topology.face_counts()[..model.levels].iter().sum();
    let k = parse_budget(&a.features, total)?;
    let bytes = codec::encode_with(&model, &sample, k, a.ranking.into(), a.loss_candidates)?;
    std::fs::write(&a.out, &bytes).map_err(CoreError::from)?;
    info!("{} bytes, {k} of {total} records", bytes.len());
    Ok(())
}

pub fn cmd_decode(a: &DecodeArgs) -> CliResult<()> {
    require_file(&a.model, "model")?;
    require_file(&a.stream, "stream")?;
    let model = Model::load(&a.model)?;
    let bytes = std::fs::read(&a.stream).map_err(CoreError::from)?;
    let stream = ProgressiveStream::parse(&bytes, a.prefix_bytes)?;
    let level = a.level.unwrap_or(model.levels);
    let mesh = codec::decode_stream(&stream, &model, level)?;
    obj::save_obj(&mesh, &a.out)?;
    info!("level {level}: {} faces from {} records", mesh.num_faces(), stream.records.len());
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    require_file(&a.pred, "prediction")?;
    require_file(&a.gt, "ground truth")?;
    if a.samples == 0 {
        return Err(CliError::Input("--samples must be positive".into()));
    }
    let gt_raw = obj::load_obj(&a.gt)?;
    let (gt, similarity) = gt_raw.normalize_to_unit_cube()?;
    let pred_raw = obj::load_obj(&a.pred)?;
    let pred = match a.pred_frame {
        PredFrame::Normalized => pred_raw,
        PredFrame::Input => pred_raw.transformed(|p| similarity.apply(p)),
    };
    let sizes = match &a.stream {
        Some(p) => {
            require_file(p, "stream")?;
            let bytes = std::fs::read(p).map_err(CoreError::from)?;
            Some(StreamSizes::of(&ProgressiveStream::parse(&bytes, None)?, gt.num_vertices()))
        }
        None => None,
    };
    let report = evaluate(&pred, &gt, sizes, a.samples, a.seed, a.symmetric);
    if !(report.d_pm.is_finite() && report.d_normal.is_finite()) {
        return Err(CliError::Numerical("metrics are not finite".into()));
    }
    let json = report.to_json()?;
    match &a.out {
        Some(p) => std::fs::write(p, json + "\n").map_err(CoreError::from)?,
        None => println!("{json}"),
    }
    Ok(())
}

pub fn cmd_bench(a: &BenchArgs) -> CliResult<()> {
    require_file(&a.manifest, "manifest")?;
    let methods = a
        .methods
        .iter()
        .map(|m| m.parse::<Method>())
        .collect::<Result<Vec<_>, _>>()?;
    let model = match &a.model {
        Some(p) => {
            require_file(p, "model")?;
            Some(Model::load(p)?)
        }
        None if methods.contains(&Method::Neural) => {
            return Err(CliError::Input("the neural method needs --model".into()));
        }
        None => None,
    };
    let manifest = Manifest::load(&a.manifest)?;
    let split = match a.split {
        SplitArg::Train => Some(Split::Train),
        SplitArg::Val => Some(Split::Val),
        SplitArg::Test => Some(Split::Test),
        SplitArg::All => None,
    };
    let meshes = manifest
        .entries
        .iter()
        .filter(|e| split.is_none_or(|s| e.split == s))
        .map(|e| Ok((e.path.display().to_string(), load_normalized(&e.path)?)))
        .collect::<CliResult<Vec<(String, HalfEdgeMesh)>>>()?;
    if meshes.is_empty() {
        return Err(CliError::Input("no meshes in the selected split".into()));
    }
    let cfg = BenchConfig {
        methods,
        budgets: a.budgets.clone(),
        coarse_faces: a.coarse_faces,
        seed: a.seed,
        samples: a.samples,
        ranking: a.ranking.into(),
    };
    let rows = run_benchmark(&meshes, model.as_ref(), &cfg)?;
    std::fs::write(&a.out, rows_to_csv(&rows)).map_err(CoreError::from)?;
    info!("{} rows written to {}", rows.len(), a.out.display());
    Ok(())
}

pub fn format_gradcheck(suite: &GradcheckSuite, broken: Option<&LayerCheck>) -> String {
    let mut s = format!("{:<24} {:>12} {:>8}  status\n", "layer", "max_rel_err", "checked");
    for l in suite.layers.iter().chain(broken) {
        s.push_str(&format!(
            "{:<24} {:>12.3e} {:>8}  {}\n",
            l.name,
            l.max_rel_err,
            l.checked,
            if l.passed { "PASS" } else { "FAIL" }
        ));
    }
    s
}

#[derive(Serialize)]
struct GradcheckOutput<'a> {
    suite: &'a GradcheckSuite,
    broken: Option<&'a LayerCheck>,
    passed: bool,
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> CliResult<()> {
    if !(a.tolerance > 0.0) {
        return Err(CliError::Input("--tolerance must be positive".into()));
    }
    let suite = gradcheck::run_suite(a.tolerance, a.seed)?;
    let broken = if a.include_broken {
        Some(gradcheck::broken_fixture(a.tolerance, a.seed)?)
    } else {
        None
    };
    print!("{}", format_gradcheck(&suite, broken.as_ref()));
    let passed = suite.passed() && broken.as_ref().is_none_or(|b| b.passed);
    if let Some(p) = &a.out {
        write_json(
            p,
            &GradcheckOutput {
                suite: &suite,
                broken: broken.as_ref(),
                passed,
            },
        )?;
    }
    if passed {
        Ok(())
    } else {
        let failed: Vec<&str> = suite
            .layers
            .iter()
            .chain(broken.as_ref())
            .filter(|l| !l.passed)
            .map(|l| l.name.as_str())
            .collect();
        Err(CliError::Numerical(format!("gradient check failed: {}", failed.join(", "))))
    }
}

pub fn cmd_corpus(a: &CorpusArgs) -> CliResult<()> {
    if a.count == 0 {
        return Err(CliError::Input("--count must be positive".into()));
    }
    std::fs::create_dir_all(&a.out).map_err(CoreError::from)?;
    for i in 0..a.count {
        let mesh = shapes::corpus_mesh(a.seed + i, a.level);
        obj::save_obj(&mesh, a.out.join(format!("mesh_{i:03}.obj")))?;
    }
    Ok(())
}

pub fn cmd_manifest(a: &ManifestArgs) -> CliResult<()> {
    if !a.dir.is_dir() {
        return Err(CliError::Input(format!("directory {} not found", a.dir.display())));
    }
    let m = build_manifest(&a.dir, a.seed)?;
    m.save(&a.out)?;
    info!("{} meshes listed in {}", m.entries.len(), a.out.display());
    Ok(())
}
