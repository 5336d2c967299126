//! `chromaprop` command line: one subcommand per pipeline stage.
//!
//! Every command is deterministic. Failures print a single `error:` line on
//! stderr and map to exit code 2 (usage), 3 (data) or 4 (numerical).

use std::io::Write;
use std::path::{Path, PathBuf};

use chromaprop::config::PipelineConfig;
use chromaprop::editor::EditOptions;
use chromaprop::imgio::{
    load_feature_tensor, load_image, load_palette, load_strokes, save_feature_tensor, save_image, save_palette,
    solution_to_json, write_file,
};
use chromaprop::metrics;
use chromaprop::pipeline::{prepare_field, Prepared};
use chromaprop::{ErrorKind, FeatureField, ImageRgb};
use clap::{Args, Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] chromaprop::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(chromaprop::Error::Config(_)) => EXIT_USAGE,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Numerical => EXIT_NUMERICAL,
                ErrorKind::Data | ErrorKind::Dimension => EXIT_DATA,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "chromaprop", version, about = "Semantic palette extraction and color edit propagation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the normalized 3-channel semantic feature tensor of an image.
    Features {
        image: PathBuf,
        /// Output tensor path.
        #[arg(short, long)]
        out: PathBuf,
        /// Precomputed network features to reduce instead of the fallback generator.
        #[arg(long)]
        network: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Extract the semantic palette and write it as JSON.
    Extract {
        image: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        /// Output palette path.
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Propagate a stroke edit through a palette and write the edited image.
    Edit {
        image: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        palette: PathBuf,
        #[arg(long)]
        strokes: PathBuf,
        /// Output PNG path.
        #[arg(short, long)]
        out: PathBuf,
        /// Solution JSON path; defaults to the output path with a `.json` extension.
        #[arg(long)]
        solution: Option<PathBuf>,
        /// Also write one grayscale weight map per palette entry next to the output.
        #[arg(long)]
        dump_weights: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Compare two images and print MSE, PSNR and SSIM as JSON.
    Metrics { a: PathBuf, b: PathBuf },
}

#[derive(Debug, Default, Clone, Args)]
pub struct ConfigArgs {
    /// TOML file with `palette`, `superpixels` and `edit` tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub wc: Option<f64>,
    #[arg(long)]
    pub ws: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub superpixels: Option<usize>,
    #[arg(long)]
    pub compactness: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub disable_propagation: bool,
}

impl ConfigArgs {
    /// Config file values overridden by explicit flags.
    pub fn resolve(&self) -> Result<PipelineConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
                toml::from_str::<PipelineConfig>(&text)
                    .map_err(|e| CliError::Usage(format!("config {}: {}", path.display(), one_line(&e.to_string()))))?
            }
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.wc {
            cfg.palette.w_c = v;
        }
        if let Some(v) = self.ws {
            cfg.palette.w_s = v;
        }
        if let Some(v) = self.threshold {
            cfg.palette.t = v;
        }
        if let Some(v) = self.superpixels {
            cfg.superpixels.n_target = v;
        }
        if let Some(v) = self.compactness {
            cfg.superpixels.compactness = v;
        }
        if let Some(v) = self.samples {
            cfg.edit.sample_count = v;
        }
        if self.disable_propagation {
            cfg.edit.disable_propagation = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn field_for(image: &ImageRgb, features: Option<&Path>, cfg: &PipelineConfig) -> Result<FeatureField, CliError> {
    let raw = features.map(load_feature_tensor).transpose()?;
    Ok(prepare_field(image, raw.as_ref(), cfg.fallback_blur_sigma)?)
}

/// Path of the weight map for `entry` beside `out`.
pub fn weight_map_path(out: &Path, entry: usize) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.weight{entry}.png"))
}

pub fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Features {
            image,
            out,
            network,
            config,
        } => {
            let cfg = config.resolve()?;
            let img = load_image(&image)?;
            let field = field_for(&img, network.as_deref(), &cfg)?;
            save_feature_tensor(&field.to_tensor(), &out)?;
        }
        Command::Extract {
            image,
            features,
            out,
            config,
        } => {
            let cfg = config.resolve()?;
            let img = load_image(&image)?;
            let field = field_for(&img, features.as_deref(), &cfg)?;
            let prepared = Prepared::extract(img, field, &cfg)?;
            save_palette(prepared.palette(), &out)?;
            writeln!(stdout, "k={}", prepared.palette().len()).ok();
        }
        Command::Edit {
            image,
            features,
            palette,
            strokes,
            out,
            solution,
            dump_weights,
            config,
        } => {
            let cfg = config.resolve()?;
            let img = load_image(&image)?;
            let field = field_for(&img, features.as_deref(), &cfg)?;
            let mut palette = load_palette(&palette)?;
            // explicit distance weights also steer the propagation term
            if let Some(v) = config.wc {
                palette.config.w_c = v;
            }
            if let Some(v) = config.ws {
                palette.config.w_s = v;
            }
            let strokes = load_strokes(&strokes)?;
            let prepared = Prepared::with_palette(img, field, palette)?;
            let opts = EditOptions {
                sample_count: cfg.edit.sample_count,
                disable_propagation: cfg.edit.disable_propagation,
            };
            let outcome = prepared.edit(&strokes, &opts)?;
            save_image(&outcome.image, &out)?;
            let solution_path = solution.unwrap_or_else(|| out.with_extension("json"));
            write_file(&solution_path, solution_to_json(&outcome.solution).as_bytes())?;
            if dump_weights {
                for entry in 0..prepared.model.k() {
                    write_file(weight_map_path(&out, entry), &prepared.weights.entry_png(entry)?)?;
                }
            }
            writeln!(stdout, "energy={}", outcome.solution.energy).ok();
        }
        Command::Metrics { a, b } => {
            let report = metrics::report(&load_image(&a)?, &load_image(&b)?)?;
            writeln!(stdout, "{}", serde_json::to_string(&report).expect("report serializes")).ok();
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion) {
                write!(stdout, "{e}").ok();
                return EXIT_OK;
            }
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            writeln!(stderr, "{}", first.trim()).ok();
            return EXIT_USAGE;
        }
    };
    match execute(cli, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            writeln!(stderr, "error: {}", one_line(&e.to_string())).ok();
            e.exit_code()
        }
    }
}
