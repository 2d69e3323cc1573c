//! `samforge` command line front end.
//!
//! Exit codes: 0 on success, 1 when the data are rejected, 2 on usage
//! errors (unknown subcommand, bad flag values, missing input paths).
//! Every run writes `manifest.json` next to its outputs.
//!
//! A corpus directory holds `points/<id>.csv`, `images/<id>_<mode>.pgm`
//! (or `.png`), `triangulation_<sex>.txt` and `cohort.csv`; `synth`
//! writes exactly this layout.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::appearance::{
    build_appearance_model, build_texture_model, AppearanceModel, TextureNormalization, TextureOptions,
    TrainingScan, DEFAULT_LONG_SIDE,
};
use crate::association::{
    representative_images, scan_associations, spearman_table, variance_significance_table, write_results_csv,
    write_spearman_csv, write_variance_table_csv, AssociationConfig, ModelLabel, PercentileSource, Representative,
    ScoredModel,
};
use crate::error::{Error, Result};
use crate::keypoints::{compare, evaluate_sets, DEFAULT_TAU};
use crate::model_io::{
    read_cohort, read_image, read_model, read_point_file, read_triangulation, write_model, write_pgm, write_png,
    write_point_file, CohortTable, ImagingMode, ModelKind, PointSet, SavedModel, ScanImage, Sex, Triangulation,
};
use crate::pca::{PcaModel, Solver};
use crate::phantom::{generate, write_corpus, PhantomSpec};
use crate::shape::{build_shape_model, ModelOptions, ShapeModel};

#[derive(Debug, Parser, Serialize)]
#[command(name = "samforge", version, about = "Statistical shape and appearance models for landmark-annotated scans")]
pub struct Cli {
    /// Worker threads (defaults to SAMFORGE_JOBS, then all cores).
    #[arg(long, global = true, env = "SAMFORGE_JOBS")]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a phantom corpus.
    Synth(SynthArgs),
    /// Fit a shape model for one sex.
    BuildShape(BuildShapeArgs),
    /// Fit a texture model for one sex and mode.
    BuildTexture(BuildTextureArgs),
    /// Fit shape, texture and joint appearance models for one sex and mode.
    BuildAppearance(BuildTextureArgs),
    /// Score corpus scans on a saved model.
    Project(ProjectArgs),
    /// Render the leading model modes at ± a number of standard deviations.
    RenderModes(RenderModesArgs),
    /// Reconstruct scans from their model coordinates.
    Reconstruct(ReconstructArgs),
    /// Evaluate predicted landmarks against ground truth.
    EvalPoints(EvalPointsArgs),
    /// Percentile-tail KS association scan.
    Associate(AssociateArgs),
    /// Spearman correlations between scores and biomarkers.
    Spearman(SpearmanArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverArg {
    Exact,
    Randomized,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeArg {
    Raw,
    Zscore,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageFormat {
    Png,
    Pgm,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 105)]
    pub n_points: usize,
    /// Landmark noise as a fraction of body height.
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long, default_value_t = 10.0)]
    pub texture_noise: f64,
    #[arg(long, default_value_t = 2.0)]
    pub jitter: f64,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 160)]
    pub height: usize,
    /// Comma-separated modes to render (default: all).
    #[arg(long, value_delimiter = ',')]
    pub modes: Option<Vec<ImagingMode>>,
    /// Generate one sex only.
    #[arg(long)]
    pub sex: Option<Sex>,
    /// Fraction of missing values in every biomarker.
    #[arg(long, default_value_t = 0.0)]
    pub missing: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// Fraction of variance to retain, in (0, 1].
    #[arg(long, default_value_t = 0.95)]
    pub variance: f64,
    #[arg(long, value_enum, default_value_t = SolverArg::Exact)]
    pub solver: SolverArg,
    /// Seed of the randomized solver.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildShapeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub sex: Sex,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildTextureArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub sex: Sex,
    #[arg(long)]
    pub mode: ImagingMode,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Long side of the reference frame in pixels.
    #[arg(long, default_value_t = DEFAULT_LONG_SIDE)]
    pub long_side: usize,
    #[arg(long, value_enum, default_value_t = NormalizeArg::Raw)]
    pub normalize: NormalizeArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ProjectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RenderModesArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Standard deviations along each component.
    #[arg(long, default_value_t = 2.5)]
    pub sd: f64,
    /// Number of leading components.
    #[arg(long, default_value_t = 6)]
    pub top: usize,
    #[arg(long, value_enum, default_value_t = ImageFormat::Png)]
    pub format: ImageFormat,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Corpus whose scans are projected and reconstructed.
    #[arg(long = "in", conflicts_with = "scores")]
    pub input: Option<PathBuf>,
    /// Score CSV (`scan_id,pc1,...`) to reconstruct instead.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Restrict to these scan ids.
    #[arg(long, value_delimiter = ',')]
    pub scans: Option<Vec<String>>,
    #[arg(long, value_enum, default_value_t = ImageFormat::Png)]
    pub format: ImageFormat,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalPointsArgs {
    /// Directory of predicted point CSVs.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground-truth point CSVs.
    #[arg(long)]
    pub gt: PathBuf,
    /// Second prediction directory for a side-by-side comparison.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AssociateArgs {
    /// Model files (repeat the flag for several models).
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Cohort table (default: `<in>/cohort.csv`).
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Use this adjusted level for every test instead of alpha / tests.
    #[arg(long)]
    pub pinned_alpha: Option<f64>,
    /// Percentiles from the model's training scans or from the scored scans.
    #[arg(long, default_value = "train")]
    pub source: String,
    #[arg(long, default_value_t = 100)]
    pub min_tail: usize,
    #[arg(long, value_delimiter = ',')]
    pub biomarkers: Option<Vec<String>>,
    #[arg(long, value_enum, default_value_t = ImageFormat::Png)]
    pub format: ImageFormat,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SpearmanArgs {
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub biomarkers: Option<Vec<String>>,
    /// Leading components per model (default: all).
    #[arg(long)]
    pub components: Option<usize>,
    /// Only list rows with |rho| at least this large.
    #[arg(long, default_value_t = 0.0)]
    pub min_abs_rho: f64,
    #[arg(long)]
    pub out: PathBuf,
}

enum CliError {
    Usage(String),
    Data(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// Parses `args` (program name first) and runs the subcommand; returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.jobs {
        Some(0) => usage("--jobs must be at least 1"),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(&cli)),
            Err(e) => usage(format!("cannot start {n} workers: {e}")),
        },
        None => execute(&cli),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            eprintln!("run `samforge --help` for usage");
            2
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(cli: &Cli) -> CliResult<()> {
    let (out, seed) = match &cli.command {
        Command::Synth(a) => {
            check_range("--missing", a.missing, 0.0, 1.0)?;
            (&a.out, Some(a.seed))
        }
        Command::BuildShape(a) => {
            check_dir(&a.input)?;
            check_fit(&a.fit)?;
            (&a.out, fit_seed(&a.fit))
        }
        Command::BuildTexture(a) | Command::BuildAppearance(a) => {
            check_dir(&a.input)?;
            check_fit(&a.fit)?;
            if !a.mode.supports_texture() {
                return usage(format!("mode {} has no texture model", a.mode));
            }
            (&a.out, fit_seed(&a.fit))
        }
        Command::Project(a) => {
            check_file(&a.model)?;
            check_dir(&a.input)?;
            (&a.out, None)
        }
        Command::RenderModes(a) => {
            check_file(&a.model)?;
            if !(a.sd > 0.0 && a.sd.is_finite()) || a.top == 0 {
                return usage("--sd must be positive and --top at least 1");
            }
            (&a.out, None)
        }
        Command::Reconstruct(a) => {
            check_file(&a.model)?;
            match (&a.input, &a.scores) {
                (Some(d), None) => check_dir(d)?,
                (None, Some(f)) => check_file(f)?,
                _ => return usage("reconstruct needs exactly one of --in or --scores"),
            }
            (&a.out, None)
        }
        Command::EvalPoints(a) => {
            check_dir(&a.pred)?;
            check_dir(&a.gt)?;
            if let Some(c) = &a.compare {
                check_dir(c)?;
            }
            if !(a.tau > 0.0) {
                return usage("--tau must be positive");
            }
            (&a.out, None)
        }
        Command::Associate(a) => {
            a.models.iter().try_for_each(|m| check_file(m))?;
            check_dir(&a.input)?;
            if let Some(c) = &a.cohort {
                check_file(c)?;
            }
            check_range("--alpha", a.alpha, f64::MIN_POSITIVE, 1.0)?;
            if let Some(p) = a.pinned_alpha {
                check_range("--pinned-alpha", p, f64::MIN_POSITIVE, 1.0)?;
            }
            a.source.parse::<PercentileSource>().map_err(|e| CliError::Usage(e.to_string()))?;
            (&a.out, None)
        }
        Command::Spearman(a) => {
            a.models.iter().try_for_each(|m| check_file(m))?;
            check_dir(&a.input)?;
            if let Some(c) = &a.cohort {
                check_file(c)?;
            }
            (&a.out, None)
        }
    };
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    match &cli.command {
        Command::Synth(a) => synth(a)?,
        Command::BuildShape(a) => cmd_build_shape(a)?,
        Command::BuildTexture(a) => cmd_build_texture(a, false)?,
        Command::BuildAppearance(a) => cmd_build_texture(a, true)?,
        Command::Project(a) => cmd_project(a)?,
        Command::RenderModes(a) => cmd_render_modes(a)?,
        Command::Reconstruct(a) => cmd_reconstruct(a)?,
        Command::EvalPoints(a) => cmd_eval_points(a)?,
        Command::Associate(a) => cmd_associate(a)?,
        Command::Spearman(a) => cmd_spearman(a)?,
    }
    write_manifest(cli, out, seed)?;
    Ok(())
}

fn check_dir(p: &Path) -> CliResult<()> {
    if p.is_dir() {
        Ok(())
    } else {
        usage(format!("directory not found: {}", p.display()))
    }
}

fn check_file(p: &Path) -> CliResult<()> {
    if p.is_file() {
        Ok(())
    } else {
        usage(format!("file not found: {}", p.display()))
    }
}

fn check_range(name: &str, v: f64, lo: f64, hi: f64) -> CliResult<()> {
    if (lo..=hi).contains(&v) {
        Ok(())
    } else {
        usage(format!("{name} must lie in [{lo}, {hi}], got {v}"))
    }
}

fn check_fit(f: &FitArgs) -> CliResult<()> {
    if f.variance > 0.0 && f.variance <= 1.0 {
        Ok(())
    } else {
        usage(format!("--variance must lie in (0, 1], got {}", f.variance))
    }
}

fn fit_seed(f: &FitArgs) -> Option<u64> {
    matches!(f.solver, SolverArg::Randomized).then_some(f.seed)
}

fn model_options(f: &FitArgs) -> ModelOptions {
    ModelOptions {
        variance_fraction: f.variance,
        solver: match f.solver {
            SolverArg::Exact => Solver::Exact,
            SolverArg::Randomized => Solver::randomized(f.seed),
        },
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    model_format: &'static str,
    seed: Option<u64>,
    config: &'a Cli,
}

fn write_manifest(cli: &Cli, out: &Path, seed: Option<u64>) -> Result<()> {
    let m = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        model_format: "SAMM0001",
        seed,
        config: cli,
    };
    let path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&m).map_err(|e| Error::format(&path, e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_image(img: &ScanImage, path: &Path, format: ImageFormat) -> Result<()> {
    match format {
        ImageFormat::Png => write_png(img, path.with_extension("png")),
        ImageFormat::Pgm => write_pgm(img, path.with_extension("pgm")),
    }
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut spec = PhantomSpec {
        seed: a.seed,
        n_scans: a.n,
        n_points: a.n_points,
        noise_sigma: a.noise,
        translation_jitter: a.jitter,
        texture_noise: a.texture_noise,
        image_width: a.width,
        image_height: a.height,
        sex: a.sex,
        ..Default::default()
    };
    if let Some(m) = &a.modes {
        spec.modes = m.clone();
    }
    for b in &mut spec.biomarkers {
        b.missing_fraction = a.missing;
    }
    let ph = generate(&spec)?;
    write_corpus(&ph, &a.out)?;
    println!("wrote {} phantom scans to {}", ph.scans.len(), a.out.display());
    Ok(())
}

/// One corpus scan with its landmarks and, when requested, one image.
#[derive(Debug, Clone)]
pub struct CorpusScan {
    pub sex: Sex,
    pub points: PointSet,
    pub image: Option<ScanImage>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub cohort: CohortTable,
    pub scans: Vec<CorpusScan>,
}

impl Corpus {
    pub fn training_scans(&self) -> Result<Vec<TrainingScan<'_>>> {
        self.scans
            .iter()
            .map(|s| {
                let image = s
                    .image
                    .as_ref()
                    .ok_or_else(|| Error::invalid(format!("scan {} has no image loaded", s.points.scan_id)))?;
                Ok(TrainingScan {
                    image,
                    points: &s.points,
                    sex: s.sex,
                })
            })
            .collect()
    }
}

/// Loads the scans of a corpus directory, optionally restricted to one
/// sex and with the image of one mode attached. Scans are ordered by id.
pub fn load_corpus(dir: &Path, sex: Option<Sex>, mode: Option<ImagingMode>) -> Result<Corpus> {
    let cohort = read_cohort(dir.join("cohort.csv"))?;
    let points_dir = dir.join("points");
    let mut files: Vec<PathBuf> = fs::read_dir(&points_dir)
        .map_err(|e| Error::io(&points_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    let mut wanted = Vec::new();
    for f in files {
        let id = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let row = cohort
            .get(&id)
            .ok_or_else(|| Error::invalid(format!("scan {id} has points but no cohort row")))?;
        if sex.is_none_or(|s| s == row.sex) {
            wanted.push((f, id, row.sex));
        }
    }
    let scans = wanted
        .par_iter()
        .map(|(f, id, s)| {
            let points = read_point_file(f)?;
            let image = match mode {
                None => None,
                Some(m) => {
                    let pgm = dir.join("images").join(format!("{id}_{m}.pgm"));
                    let path = if pgm.exists() { pgm } else { pgm.with_extension("png") };
                    let img = read_image(&path)?;
                    if img.mode != m {
                        return Err(Error::format(&path, format!("expected mode {m}")));
                    }
                    Some(img)
                }
            };
            Ok(CorpusScan { sex: *s, points, image })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { cohort, scans })
}

fn corpus_triangulation(dir: &Path, sex: Sex, n_points: usize) -> Result<Triangulation> {
    read_triangulation(dir.join(format!("triangulation_{sex}.txt")), n_points)
}

#[derive(Serialize)]
struct PcaReport {
    n_train: usize,
    n_components: usize,
    variance_fraction: f64,
    retained_fraction: f64,
    total_variance: f64,
    zero_variance: bool,
    eigenvalues: Vec<f64>,
    explained_fractions: Vec<f64>,
}

impl PcaReport {
    fn new(p: &PcaModel) -> Self {
        Self {
            n_train: p.n_train,
            n_components: p.n_components(),
            variance_fraction: p.variance_fraction,
            retained_fraction: p.retained_fraction(),
            total_variance: p.total_variance,
            zero_variance: p.zero_variance,
            eigenvalues: p.eigenvalues.iter().copied().collect(),
            explained_fractions: p.explained_fractions(),
        }
    }
}

fn fit_shape(input: &Path, sex: Sex, fit: &FitArgs) -> Result<(Corpus, ShapeModel)> {
    let corpus = load_corpus(input, Some(sex), None)?;
    let samples: Vec<(&PointSet, Sex)> = corpus.scans.iter().map(|s| (&s.points, s.sex)).collect();
    let model = build_shape_model(&samples, sex, &model_options(fit))?;
    Ok((corpus, model))
}

fn report_line(name: &str, p: &PcaModel) {
    println!(
        "{name}: k = {} components retain {:.2}% of variance ({} training scans)",
        p.n_components(),
        100.0 * p.retained_fraction(),
        p.n_train
    );
}

fn cmd_build_shape(a: &BuildShapeArgs) -> Result<()> {
    let (_, model) = fit_shape(&a.input, a.sex, &a.fit)?;
    report_line(&format!("shape_{}", a.sex), &model.pca);
    write_json(&PcaReport::new(&model.pca), &a.out.join(format!("shape_{}_report.json", a.sex)))?;
    write_model(&model.into(), a.out.join(format!("shape_{}.samm", a.sex)))
}

fn cmd_build_texture(a: &BuildTextureArgs, appearance: bool) -> Result<()> {
    let corpus = load_corpus(&a.input, Some(a.sex), Some(a.mode))?;
    let samples: Vec<(&PointSet, Sex)> = corpus.scans.iter().map(|s| (&s.points, s.sex)).collect();
    let options = model_options(&a.fit);
    let shape = build_shape_model(&samples, a.sex, &options)?;
    let tri = corpus_triangulation(&a.input, a.sex, shape.n_points)?;
    let scans = corpus.training_scans()?;
    let texture_options = TextureOptions {
        model: options,
        long_side: a.long_side,
        normalization: match a.normalize {
            NormalizeArg::Raw => TextureNormalization::Raw,
            NormalizeArg::Zscore => TextureNormalization::ZeroMeanUnitVar,
        },
    };
    let texture = build_texture_model(&scans, &shape, &tri, a.mode, &texture_options)?;
    #[derive(Serialize)]
    struct TextureReport {
        frame_width: usize,
        frame_height: usize,
        masked_pixels: usize,
        texture: PcaReport,
    }
    let frame = &texture.frame;
    let texture_report = TextureReport {
        frame_width: frame.width,
        frame_height: frame.height,
        masked_pixels: frame.mask_count(),
        texture: PcaReport::new(&texture.pca),
    };
    if !appearance {
        let name = format!("texture_{}_{}", a.sex, a.mode);
        report_line(&name, &texture.pca);
        write_json(&texture_report, &a.out.join(format!("{name}_report.json")))?;
        return write_model(&texture.into(), a.out.join(format!("{name}.samm")));
    }
    let app = build_appearance_model(&shape, &texture, &scans, &options)?;
    let name = format!("app_{}_{}", a.sex, a.mode);
    report_line(&format!("shape_{}", a.sex), &shape.pca);
    report_line(&format!("texture_{}_{}", a.sex, a.mode), &texture.pca);
    report_line(&name, &app.pca);
    #[derive(Serialize)]
    struct AppReport {
        shape: PcaReport,
        #[serde(flatten)]
        texture: TextureReport,
        shape_weight: f64,
        appearance: PcaReport,
    }
    write_json(
        &AppReport {
            shape: PcaReport::new(&shape.pca),
            texture: texture_report,
            shape_weight: app.shape_weight,
            appearance: PcaReport::new(&app.pca),
        },
        &a.out.join(format!("{name}_report.json")),
    )?;
    write_model(&app.into(), a.out.join(format!("{name}.samm")))
}

fn label_of(model: &SavedModel) -> ModelLabel {
    match model {
        SavedModel::Shape(m) => ModelLabel {
            kind: ModelKind::Shape,
            mode: None,
            sex: m.sex,
        },
        SavedModel::Texture(m) => ModelLabel {
            kind: ModelKind::Texture,
            mode: Some(m.mode),
            sex: m.sex,
        },
        SavedModel::Appearance(m) => ModelLabel {
            kind: ModelKind::Appearance,
            mode: Some(m.mode),
            sex: m.sex,
        },
    }
}

fn pca_of(model: &SavedModel) -> &PcaModel {
    match model {
        SavedModel::Shape(m) => &m.pca,
        SavedModel::Texture(m) => &m.pca,
        SavedModel::Appearance(m) => &m.pca,
    }
}

/// Projects every corpus scan of the model's sex onto the model.
pub fn score_corpus(model: &SavedModel, dir: &Path) -> Result<ScoredModel> {
    let label = label_of(model);
    let corpus = load_corpus(dir, Some(label.sex), label.mode)?;
    let rows: Vec<Vec<f64>> = corpus
        .scans
        .par_iter()
        .map(|s| match model {
            SavedModel::Shape(m) => m.project(&s.points),
            SavedModel::Texture(m) => m.project(s.image.as_ref().expect("image loaded"), &s.points),
            SavedModel::Appearance(m) => m.project(s.image.as_ref().expect("image loaded"), &s.points),
        })
        .collect::<Result<_>>()?;
    let pca = pca_of(model);
    let k = pca.n_components();
    let scores = DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
    let percentiles = match model {
        SavedModel::Shape(m) => m.percentiles.clone(),
        SavedModel::Texture(m) => m.percentiles.clone(),
        SavedModel::Appearance(m) => m.percentiles.clone(),
    };
    let ids = corpus.scans.iter().map(|s| s.points.scan_id.clone()).collect();
    ScoredModel::new(label, pca, Some(percentiles), ids, scores)
}

fn write_scores_csv(s: &ScoredModel, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut header = vec!["scan_id".to_string()];
    header.extend((1..=s.n_components()).map(|i| format!("pc{i}")));
    w.write_record(&header).map_err(|e| Error::format(path, e.to_string()))?;
    for (i, id) in s.scan_ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(s.scores.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_scores_csv(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let values = rec
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::format(path, format!("row {}: invalid score", i + 1)))?;
        out.push((rec.get(0).unwrap_or_default().to_string(), values));
    }
    Ok(out)
}

fn cmd_project(a: &ProjectArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    let scored = score_corpus(&model, &a.input)?;
    let path = a.out.join(format!("scores_{}.csv", scored.label));
    write_scores_csv(&scored, &path)?;
    println!("projected {} scans onto {} components", scored.scan_ids.len(), scored.n_components());
    Ok(())
}

fn placed_points(app_frame: &crate::geometry::ReferenceFrame, shape: &PointSet) -> PointSet {
    PointSet::new(shape.scan_id.clone(), shape.points.iter().map(|p| app_frame.to_frame(p)).collect())
}

fn cmd_render_modes(a: &RenderModesArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    let pca = pca_of(&model);
    let k = a.top.min(pca.n_components());
    if k < a.top {
        eprintln!("note: model has {} components; rendering {k}", pca.n_components());
    }
    let mut w = csv::Writer::from_path(a.out.join("modes.csv")).map_err(|e| Error::format(&a.out, e.to_string()))?;
    w.write_record(["component", "sign", "score", "variance_fraction"])
        .map_err(|e| Error::format(&a.out, e.to_string()))?;
    let fractions = pca.explained_fractions();
    for c in 0..k {
        for (sign, tag) in [(1.0, "plus"), (-1.0, "minus")] {
            let mut b = vec![0.0; c + 1];
            b[c] = sign * a.sd * pca.eigenvalues[c].sqrt();
            let stem = a.out.join(format!("pc{}_{tag}", c + 1));
            match &model {
                SavedModel::Shape(m) => {
                    write_point_file(&m.synthesize(&b)?, stem.with_extension("csv"))?;
                }
                SavedModel::Texture(m) => {
                    let grid = m.reconstruct_grid(&b)?;
                    let f = &m.frame;
                    let img = ScanImage::new(format!("pc{}_{tag}", c + 1), m.mode, f.width, f.height, grid)?;
                    write_image(&img, &stem, a.format)?;
                }
                SavedModel::Appearance(m) => {
                    let recon = m.reconstruct(&b)?;
                    write_image(&m.render_on_shape(&recon)?, &stem, a.format)?;
                    let pts = placed_points(&m.texture.frame, &recon.shape);
                    write_point_file(&pts, a.out.join(format!("pc{}_{tag}_points.csv", c + 1)))?;
                }
            }
            w.write_record([(c + 1).to_string(), tag.to_string(), b[c].to_string(), fractions[c].to_string()])
                .map_err(|e| Error::format(&a.out, e.to_string()))?;
        }
    }
    w.flush().map_err(|e| Error::io(&a.out, e))?;
    println!("rendered {k} components at ±{} SD", a.sd);
    Ok(())
}

fn cmd_reconstruct(a: &ReconstructArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    let rows: Vec<(String, Vec<f64>)> = match (&a.input, &a.scores) {
        (Some(dir), _) => {
            let s = score_corpus(&model, dir)?;
            s.scan_ids.iter().enumerate().map(|(i, id)| (id.clone(), s.scores.row(i).iter().copied().collect())).collect()
        }
        (None, Some(f)) => read_scores_csv(f)?,
        (None, None) => unreachable!("validated before dispatch"),
    };
    let rows: Vec<_> = rows
        .into_iter()
        .filter(|(id, _)| a.scans.as_ref().is_none_or(|s| s.contains(id)))
        .collect();
    rows.par_iter().try_for_each(|(id, b)| -> Result<()> {
        let stem = a.out.join(format!("{id}_recon"));
        match &model {
            SavedModel::Shape(m) => write_point_file(&m.synthesize(b)?, stem.with_extension("csv")),
            SavedModel::Texture(m) => {
                let f = &m.frame;
                let grid = m.reconstruct_grid(b)?;
                write_image(&ScanImage::new(id.clone(), m.mode, f.width, f.height, grid)?, &stem, a.format)
            }
            SavedModel::Appearance(m) => {
                let recon = m.reconstruct(b)?;
                let mut img = m.render_on_shape(&recon)?;
                img.scan_id = id.clone();
                write_image(&img, &stem, a.format)?;
                write_point_file(&recon.shape, a.out.join(format!("{id}_recon_points.csv")))
            }
        }
    })?;
    println!("reconstructed {} scans", rows.len());
    Ok(())
}

fn read_point_dir(dir: &Path) -> Result<Vec<PointSet>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    files.par_iter().map(read_point_file).collect()
}

fn cmd_eval_points(a: &EvalPointsArgs) -> Result<()> {
    let pred = read_point_dir(&a.pred)?;
    let gt = read_point_dir(&a.gt)?;
    let report = evaluate_sets(&pred, &gt, a.tau)?;
    let path = a.out.join("keypoint_metrics.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::format(&path, e.to_string()))?;
    w.write_record(["scan_id", "pck", "epe", "nme"]).map_err(|e| Error::format(&path, e.to_string()))?;
    for s in &report.per_scan {
        w.write_record([s.scan_id.clone(), s.pck.to_string(), s.epe.to_string(), s.nme.to_string()])
            .map_err(|e| Error::format(&path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    write_json(&report, &a.out.join("keypoint_summary.json"))?;
    println!("{}", report.summary_line());
    if let Some(other) = &a.compare {
        let b = read_point_dir(other)?;
        let cmp = compare(&pred, &b, &gt, a.tau)?;
        let path = a.out.join("keypoint_comparison.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::format(&path, e.to_string()))?;
        w.write_record(["scan_id", "pck_a", "pck_b", "d_pck", "epe_a", "epe_b", "d_epe", "nme_a", "nme_b", "d_nme"])
            .map_err(|e| Error::format(&path, e.to_string()))?;
        for d in &cmp.per_scan {
            w.write_record([
                d.scan_id.clone(),
                d.a.pck.to_string(),
                d.b.pck.to_string(),
                d.d_pck.to_string(),
                d.a.epe.to_string(),
                d.b.epe.to_string(),
                d.d_epe.to_string(),
                d.a.nme.to_string(),
                d.b.nme.to_string(),
                d.d_nme.to_string(),
            ])
            .map_err(|e| Error::format(&path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        println!("{} (comparison)", cmp.b.summary_line());
    }
    Ok(())
}

fn load_scored(models: &[PathBuf], input: &Path) -> Result<Vec<(SavedModel, ScoredModel)>> {
    models
        .iter()
        .map(|p| {
            let m = read_model(p)?;
            let s = score_corpus(&m, input)?;
            Ok((m, s))
        })
        .collect()
}

fn cohort_for(input: &Path, cohort: &Option<PathBuf>) -> Result<CohortTable> {
    read_cohort(cohort.clone().unwrap_or_else(|| input.join("cohort.csv")))
}

fn cmd_associate(a: &AssociateArgs) -> Result<()> {
    let scored = load_scored(&a.models, &a.input)?;
    let cohort = cohort_for(&a.input, &a.cohort)?;
    let config = AssociationConfig {
        alpha_base: a.alpha,
        pinned_alpha: a.pinned_alpha,
        source: a.source.parse()?,
        min_tail: a.min_tail,
        biomarkers: a.biomarkers.clone(),
    };
    let models: Vec<ScoredModel> = scored.iter().map(|(_, s)| s.clone()).collect();
    let results = scan_associations(&models, &cohort, &config)?;
    write_results_csv(&results, a.out.join("associations.csv"))?;
    write_variance_table_csv(&variance_significance_table(&results), a.out.join("variance_table.csv"))?;

    let rep_dir = a.out.join("representatives");
    fs::create_dir_all(&rep_dir).map_err(|e| Error::io(&rep_dir, e))?;
    for (model, s) in &scored {
        let SavedModel::Appearance(app) = model else { continue };
        let mine: Vec<_> = results.iter().filter(|r| r.model == s.label).collect();
        if let Some(r) = mine.iter().find(|r| !r.significant) {
            if let Representative::Overall(rec) = representative_images(app, s, r)? {
                write_image(&render(app, &rec)?, &rep_dir.join(format!("{}_overall", s.label)), a.format)?;
            }
        }
        for r in mine.iter().filter(|r| r.significant) {
            if let Representative::Pair { low, high } = representative_images(app, s, r)? {
                let stem = format!("{}_pc{}_{}", s.label, r.component, r.biomarker);
                write_image(&render(app, &low)?, &rep_dir.join(format!("{stem}_low")), a.format)?;
                write_image(&render(app, &high)?, &rep_dir.join(format!("{stem}_high")), a.format)?;
            }
        }
    }
    let significant = results.iter().filter(|r| r.significant).count();
    let attempted = results.iter().filter(|r| !r.skipped).count();
    println!(
        "{} results, {attempted} tests performed, {significant} significant at alpha = {:e}",
        results.len(),
        results.first().map_or(a.alpha, |r| r.alpha_adjusted)
    );
    Ok(())
}

fn render(app: &AppearanceModel, rec: &crate::appearance::Reconstruction) -> Result<ScanImage> {
    app.render_on_shape(rec)
}

fn cmd_spearman(a: &SpearmanArgs) -> Result<()> {
    let scored = load_scored(&a.models, &a.input)?;
    let cohort = cohort_for(&a.input, &a.cohort)?;
    let models: Vec<ScoredModel> = scored.into_iter().map(|(_, s)| s).collect();
    let rows = spearman_table(&models, &cohort, &a.biomarkers, a.components)?;
    write_spearman_csv(&rows, a.min_abs_rho, a.out.join("spearman.csv"))?;
    println!("{} correlations computed", rows.len());
    Ok(())
}
