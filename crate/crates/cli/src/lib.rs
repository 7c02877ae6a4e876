//! The `intrinsic` command line.
//!
//! Exit codes: 0 on success, 1 when the input is invalid (bad flags,
//! unreadable or malformed files, rejected annotations or configs), 2 when
//! the run itself fails.

use std::ffi::OsString;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use intrinsic_core::colorspace::LinearImage;
use intrinsic_core::metrics::{evaluate_images, MetricReport, NamedMetrics};
use intrinsic_core::naming::{auto_compose_image, ColorComposition, NamingModel};
use intrinsic_core::scenes::{
    generate_scene, load_annotation, load_image, load_mask, save_outputs, save_scene, SceneParams,
    Transfer,
};
use intrinsic_core::solver::{decompose, RunReport, SolverConfig};
use intrinsic_core::Error;

#[derive(Debug, Parser)]
#[command(name = "intrinsic", version, about = "Color-composition guided intrinsic image decomposition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransferArg {
    Srgb,
    Linear,
}

impl From<TransferArg> for Transfer {
    fn from(t: TransferArg) -> Self {
        match t {
            TransferArg::Srgb => Transfer::Srgb,
            TransferArg::Linear => Transfer::Linear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decompose one image into reflectance, shading and illuminant.
    Decompose {
        #[arg(long)]
        image: PathBuf,
        /// Color composition JSON keyed by term name.
        #[arg(long)]
        annotation: PathBuf,
        /// Output directory for the seven artifacts.
        #[arg(long)]
        out: PathBuf,
        /// Solver config JSON; unknown keys are rejected.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Drop the naming term (closed-form mixing weights).
        #[arg(long)]
        no_color_naming: bool,
        /// Foreground mask PNG (nonzero = foreground).
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Transfer function of the input PNG.
        #[arg(long, value_enum, default_value = "srgb")]
        transfer: TransferArg,
    },
    /// Score predicted reflectance/shading against ground truth.
    Eval {
        /// Directory of predictions: `{case}/reflectance.png` and
        /// `{case}/shading.png`, or those files directly.
        #[arg(long)]
        pred_dir: PathBuf,
        /// Ground truth in the same layout, optionally with `mask.png`.
        #[arg(long)]
        gt_dir: PathBuf,
        /// Mask used for every case instead of the per-case `mask.png`.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "linear")]
        pred_transfer: TransferArg,
        #[arg(long, value_enum, default_value = "linear")]
        gt_transfer: TransferArg,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Generate seeded synthetic scenes with ground truth.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: u64,
        #[arg(long)]
        out: PathBuf,
        /// Side length in pixels.
        #[arg(long, default_value_t = 128)]
        size: usize,
    },
    /// Run the local HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Finished jobs kept in memory.
        #[arg(long, default_value_t = 50)]
        capacity: usize,
    },
    /// Print the automatic color composition of an image.
    Name {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, value_enum, default_value = "srgb")]
        transfer: TransferArg,
    },
}

/// Failure with its exit code.
#[derive(Debug)]
pub enum CliError {
    Invalid(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Invalid(m) | CliError::Runtime(m) => m,
        }
    }

    /// Input problems: anything the core classifies as validation, plus
    /// unreadable input files.
    fn input(e: Error) -> Self {
        match e {
            Error::Io { .. } | Error::Image { .. } => CliError::Invalid(e.to_string()),
            e if e.is_validation() => CliError::Invalid(e.to_string()),
            e => CliError::Runtime(e.to_string()),
        }
    }

    fn solve(e: Error) -> Self {
        if e.is_validation() {
            CliError::Invalid(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }

    fn output(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult = Result<(), CliError>;

/// Parses `argv` and runs, writing to the process's stdout and stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// Same as [`run`] with explicit output streams.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{e}");
                    1
                }
            };
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.code()
        }
    }
}

fn execute(cmd: Command, out: &mut dyn Write) -> CliResult {
    match cmd {
        Command::Decompose {
            image,
            annotation,
            out: dir,
            config,
            seed,
            no_color_naming,
            mask,
            transfer,
        } => cmd_decompose(
            &image,
            &annotation,
            &dir,
            config.as_deref(),
            seed,
            no_color_naming,
            mask.as_deref(),
            transfer.into(),
            out,
        ),
        Command::Eval {
            pred_dir,
            gt_dir,
            mask,
            pred_transfer,
            gt_transfer,
            format,
        } => cmd_eval(
            &pred_dir,
            &gt_dir,
            mask.as_deref(),
            pred_transfer.into(),
            gt_transfer.into(),
            format,
            out,
        ),
        Command::Synth { seed, count, out: dir, size } => cmd_synth(seed, count, &dir, size, out),
        Command::Serve {
            port,
            host,
            workers,
            capacity,
        } => cmd_serve(host, port, workers, capacity, out),
        Command::Name { image, transfer } => cmd_name(&image, transfer.into(), out),
    }
}

fn apply_mask(img: LinearImage, mask: Option<&Path>) -> Result<LinearImage, CliError> {
    let Some(path) = mask else { return Ok(img) };
    let (w, h, m) = load_mask(path).map_err(CliError::input)?;
    if w != img.width() || h != img.height() {
        return Err(CliError::Invalid(format!(
            "{}: mask is {w}x{h}, image is {}x{}",
            path.display(),
            img.width(),
            img.height()
        )));
    }
    img.with_mask(m).map_err(CliError::input)
}

fn load_config(path: Option<&Path>) -> Result<SolverConfig, CliError> {
    match path {
        None => Ok(SolverConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Invalid(format!("{}: {e}", p.display())))?;
            SolverConfig::from_json_str(&text)
                .map_err(|e| CliError::Invalid(format!("{}: {e}", p.display())))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_decompose(
    image: &Path,
    annotation: &Path,
    dir: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    no_color_naming: bool,
    mask: Option<&Path>,
    transfer: Transfer,
    out: &mut dyn Write,
) -> CliResult {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if no_color_naming {
        cfg.color_naming = false;
    }
    let img = load_image(image, transfer).map_err(CliError::input)?;
    let img = apply_mask(img, mask)?;
    let y = load_annotation(annotation).map_err(CliError::input)?;
    let model = NamingModel::default();
    let result = decompose(&img, &y, &cfg, &model, &mut |_| {}).map_err(CliError::solve)?;
    let report = RunReport::new(&result, &cfg);
    save_outputs(dir, &result.decomposition, &result.state.trace, &report.to_json())
        .map_err(CliError::output)?;
    writeln!(
        out,
        "{}: {} iterations, energy {:.6} -> {:.6}, illuminant [{:.4}, {:.4}, {:.4}]",
        dir.display(),
        report.iterations,
        report.initial_energy.total,
        report.final_energy.total,
        report.illuminant.rgb[0],
        report.illuminant.rgb[1],
        report.illuminant.rgb[2],
    )
    .map_err(CliError::output)
}

/// Case names: subdirectories of `gt_dir` holding `reflectance.png`, or the
/// directory itself when it holds one.
fn eval_cases(gt_dir: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    if gt_dir.join("reflectance.png").is_file() {
        let name = gt_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| ".".into());
        return Ok(vec![(name, PathBuf::new())]);
    }
    let entries = std::fs::read_dir(gt_dir)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", gt_dir.display())))?;
    let mut cases = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::Invalid(format!("{}: {e}", gt_dir.display())))?;
        if entry.path().join("reflectance.png").is_file() {
            let name = entry.file_name().to_string_lossy().into_owned();
            cases.push((name.clone(), PathBuf::from(name)));
        }
    }
    if cases.is_empty() {
        return Err(CliError::Invalid(format!(
            "{}: no reflectance.png found",
            gt_dir.display()
        )));
    }
    cases.sort();
    Ok(cases)
}

fn cmd_eval(
    pred_dir: &Path,
    gt_dir: &Path,
    mask: Option<&Path>,
    pred_transfer: Transfer,
    gt_transfer: Transfer,
    format: Format,
    out: &mut dyn Write,
) -> CliResult {
    let shared_mask = mask
        .map(|p| load_mask(p).map_err(CliError::input))
        .transpose()?;
    let mut images = Vec::new();
    for (name, rel) in eval_cases(gt_dir)? {
        let gt = gt_dir.join(&rel);
        let pred = pred_dir.join(&rel);
        let load = |dir: &Path, f: &str, t: Transfer| load_image(&dir.join(f), t).map_err(CliError::input);
        let gt_r = load(&gt, "reflectance.png", gt_transfer)?;
        let gt_s = load(&gt, "shading.png", gt_transfer)?;
        let est_r = load(&pred, "reflectance.png", pred_transfer)?;
        let est_s = load(&pred, "shading.png", pred_transfer)?;
        let m = match &shared_mask {
            Some((_, _, m)) => m.clone(),
            None if gt.join("mask.png").is_file() => load_mask(&gt.join("mask.png")).map_err(CliError::input)?.2,
            None => gt_r.mask().to_vec(),
        };
        if m.len() != gt_r.len() {
            return Err(CliError::Invalid(format!("{name}: mask does not match the image size")));
        }
        // predictions mark background with zero alpha; ignore those pixels too
        let m: Vec<bool> = m
            .iter()
            .zip(est_r.mask())
            .zip(est_s.mask())
            .map(|((a, b), c)| *a && *b && *c)
            .collect();
        let metrics = evaluate_images(&est_r, &est_s, &gt_r, &gt_s, &m)
            .map_err(|e| CliError::Invalid(format!("{name}: {e}")))?;
        images.push(NamedMetrics { name, metrics });
    }
    let report = MetricReport::new(images);
    let text = match format {
        Format::Table => report.to_table(),
        Format::Json => report.to_json() + "\n",
    };
    out.write_all(text.as_bytes()).map_err(CliError::output)
}

fn cmd_synth(seed: u64, count: u64, dir: &Path, size: usize, out: &mut dyn Write) -> CliResult {
    let params = SceneParams {
        width: size,
        height: size,
        ..Default::default()
    };
    params.validate().map_err(CliError::input)?;
    let model = NamingModel::default();
    for s in seed..seed.saturating_add(count) {
        let scene = generate_scene(s, &params, &model).map_err(CliError::solve)?;
        let case = dir.join(format!("scene_{s:04}"));
        save_scene(&case, &scene).map_err(CliError::output)?;
        writeln!(out, "{}", case.display()).map_err(CliError::output)?;
    }
    Ok(())
}

fn cmd_serve(host: IpAddr, port: u16, workers: usize, capacity: usize, out: &mut dyn Write) -> CliResult {
    let workers = NonZeroUsize::new(workers).ok_or_else(|| CliError::Invalid("--workers must be at least 1".into()))?;
    let config = intrinsic_service::ServiceConfig {
        workers,
        capacity,
        model: Arc::new(NamingModel::default()),
        ..Default::default()
    };
    let addr = SocketAddr::new(host, port);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CliError::output)?;
    writeln!(out, "listening on http://{addr}").map_err(CliError::output)?;
    out.flush().map_err(CliError::output)?;
    runtime
        .block_on(intrinsic_service::serve(addr, config))
        .map_err(|e| CliError::Runtime(format!("{addr}: {e}")))
}

fn cmd_name(image: &Path, transfer: Transfer, out: &mut dyn Write) -> CliResult {
    let img = load_image(image, transfer).map_err(CliError::input)?;
    let composition: ColorComposition =
        auto_compose_image(&NamingModel::default(), &img).map_err(CliError::input)?;
    let text = serde_json::to_string_pretty(&composition.to_json_value()).map_err(CliError::output)?;
    writeln!(out, "{text}").map_err(CliError::output)
}
