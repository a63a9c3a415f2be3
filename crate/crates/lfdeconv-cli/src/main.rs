//! `lfdeconv` — command-line light-field deconvolution.
//!
//! Subcommands: `deconvolve` (full reconstruction with automatic iteration
//! selection), `metric` (standalone DCT-entropy evaluation), `simulate`
//! (synthetic phantom + measurement), `psfgen` (synthetic PSF bank), `bench`
//! (worker-scaling report), `info` (build and format facts).
//!
//! Exit codes: 0 success, 1 usage error, 2 input validation failure,
//! 3 runtime failure (worker fault, memory budget), 4 output write failure.
//! Output files are staged and renamed into place only after the whole
//! command has succeeded, so a nonzero exit never leaves partial outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lfdeconv::deconv::{DeconvResult, MetricSample, ProgressSink, SilentProgress};
use lfdeconv::error::Error;
use lfdeconv::io::{
    load_config, load_psf, read_tiff_stack, sidecar_path, write_psf, write_series,
    write_tiff_stack, PixelFormat, PsfLayoutDescriptor, RunConfig, FORMAT_VERSION,
};
use lfdeconv::lfmodel::conv::{engine_catalog, engine_by_name, DEFAULT_ENGINE};
use lfdeconv::lfmodel::{forward_project, LightFieldImage, PsfStack, Volume};
use lfdeconv::metric::{dct_entropy, max_project_z, Image2D, MetricConfig, RegionShape};
use lfdeconv::optics::cutoff_region;
use lfdeconv::phantom::{add_poisson_noise, gen_bead_volume, gen_psf, PhantomSpec, SyntheticPsfSpec};
use lfdeconv::pipeline::{run_parallel_instrumented, ParallelOptions, TransferReport};

const EXIT_USAGE: i32 = 1;
const EXIT_INPUT: i32 = 2;
const EXIT_RUNTIME: i32 = 3;
const EXIT_OUTPUT: i32 = 4;

/// Seed used whenever `--seed` is not given; fixed (never time-based) so
/// repeated runs are reproducible by default.
const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(
    name = "lfdeconv",
    version,
    about = "3D Richardson-Lucy deconvolution for light-field microscopy \
             with DCT-entropy iteration selection",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Reconstruct a volume from a light-field image and a PSF bank.
    Deconvolve(DeconvolveArgs),
    /// Evaluate the band-limited DCT entropy of an image or stack.
    Metric(MetricArgs),
    /// Generate a bead phantom, synthetic PSF, and simulated measurement.
    Simulate(SimulateArgs),
    /// Generate a synthetic PSF bank plus its layout descriptor.
    Psfgen(PsfgenArgs),
    /// Time identical workloads across worker counts.
    Bench(BenchArgs),
    /// Print build, engine, format, and exit-code information.
    Info,
}

#[derive(Args, Clone)]
struct OpticsFlags {
    /// Emission wavelength in micrometers.
    #[arg(long)]
    wavelength_um: Option<f64>,
    /// Numerical aperture of the objective.
    #[arg(long)]
    na: Option<f64>,
    /// Microlens pitch in micrometers.
    #[arg(long)]
    mla_pitch_um: Option<f64>,
    /// Objective magnification.
    #[arg(long)]
    magnification: Option<f64>,
    /// Virtual pixels per microlens per axis (odd).
    #[arg(long)]
    nnum: Option<usize>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum RegionShapeArg {
    Triangle,
    Rectangle,
}

impl From<RegionShapeArg> for RegionShape {
    fn from(v: RegionShapeArg) -> Self {
        match v {
            RegionShapeArg::Triangle => RegionShape::Triangle,
            RegionShapeArg::Rectangle => RegionShape::Rectangle,
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum PixelFormatArg {
    /// Lossless float samples (default).
    F32,
    /// 16-bit export with min-max scaling recorded in a sidecar JSON.
    U16,
}

impl From<PixelFormatArg> for PixelFormat {
    fn from(v: PixelFormatArg) -> Self {
        match v {
            PixelFormatArg::F32 => PixelFormat::F32,
            PixelFormatArg::U16 => PixelFormat::U16,
        }
    }
}

#[derive(Args)]
struct DeconvolveArgs {
    /// Key-value config file; command-line flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Light-field measurement TIFF (single page).
    #[arg(long, required_unless_present = "config")]
    input: Option<PathBuf>,
    /// PSF bank TIFF.
    #[arg(long, required_unless_present = "config")]
    psf: Option<PathBuf>,
    /// PSF layout descriptor JSON.
    #[arg(long = "psf-desc", required_unless_present = "config")]
    psf_desc: Option<PathBuf>,
    /// Output prefix; writes <out>_volume.tif, <out>_series.csv,
    /// <out>_summary.json.
    #[arg(long, required_unless_present = "config")]
    out: Option<PathBuf>,
    #[command(flatten)]
    optics: OpticsFlags,
    /// Worker count; overrides LFDECONV_WORKERS and the config file.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    min_iters: Option<usize>,
    /// Consecutive entropy decreases required to stop (auto mode).
    #[arg(long)]
    patience: Option<usize>,
    /// Run exactly this many iterations instead of the entropy stopping rule.
    #[arg(long)]
    fixed_iters: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Convolution engine (see `lfdeconv info`).
    #[arg(long)]
    engine: Option<String>,
    #[arg(long, value_enum)]
    region_shape: Option<RegionShapeArg>,
    /// Refuse to start if any worker would need more than this many MiB.
    #[arg(long)]
    memory_budget_mb: Option<u64>,
    /// Sample format of the output volume.
    #[arg(long, value_enum, default_value_t = PixelFormatArg::F32)]
    pixel_format: PixelFormatArg,
    /// Print per-iteration entropy samples to stderr.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct MetricArgs {
    /// Image or stack TIFF; stacks are max-projected along z by default.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    optics: OpticsFlags,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    region_shape: Option<RegionShapeArg>,
    /// Evaluate only the first page instead of the z maximum projection.
    #[arg(long)]
    no_project: bool,
}

#[derive(Args)]
struct PsfShapeFlags {
    /// Axial layer count of the PSF bank.
    #[arg(long, default_value_t = 3)]
    nz: usize,
    /// Virtual pixels per microlens per axis (odd).
    #[arg(long, default_value_t = 3)]
    nnum: usize,
    /// Kernel height (odd).
    #[arg(long, default_value_t = 7)]
    kh: usize,
    /// Kernel width (odd).
    #[arg(long, default_value_t = 7)]
    kw: usize,
    /// Gaussian width (px) at the focal layer.
    #[arg(long, default_value_t = 0.8)]
    sigma0: f64,
    /// Width growth per layer of defocus.
    #[arg(long, default_value_t = 0.15)]
    sigma_slope: f64,
    /// Lateral shift per sub-aperture offset per defocus layer (px).
    #[arg(long, default_value_t = 1.2)]
    shear: f64,
}

impl PsfShapeFlags {
    fn spec(&self) -> SyntheticPsfSpec {
        SyntheticPsfSpec {
            nz: self.nz,
            nnum: self.nnum,
            kh: self.kh,
            kw: self.kw,
            sigma0: self.sigma0,
            sigma_slope: self.sigma_slope,
            shear: self.shear,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Output prefix; writes <out>_phantom.tif, <out>_psf.tif,
    /// <out>_psf.json, <out>_measurement.tif.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    psf_shape: PsfShapeFlags,
    /// Lateral height of the phantom (multiple of nnum).
    #[arg(long, default_value_t = 27)]
    height: usize,
    /// Lateral width of the phantom (multiple of nnum).
    #[arg(long, default_value_t = 27)]
    width: usize,
    /// Number of beads.
    #[arg(long, default_value_t = 3)]
    beads: usize,
    /// Bead radius in voxels.
    #[arg(long, default_value_t = 0.9)]
    bead_radius: f64,
    /// Voxel value inside a bead (expected photon count).
    #[arg(long, default_value_t = 120.0)]
    photon_scale: f64,
    /// RNG seed for bead placement and Poisson noise.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Skip Poisson noise: the measurement is the exact forward projection.
    #[arg(long)]
    no_noise: bool,
}

#[derive(Args)]
struct PsfgenArgs {
    /// Output prefix; writes <out>_psf.tif and <out>_psf.json.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    psf_shape: PsfShapeFlags,
}

#[derive(Args)]
struct BenchArgs {
    /// Worker counts to time; the first entry is the speedup baseline.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    workers_list: Vec<usize>,
    #[command(flatten)]
    psf_shape: PsfShapeFlags,
    #[arg(long, default_value_t = 27)]
    height: usize,
    #[arg(long, default_value_t = 27)]
    width: usize,
    /// Fixed RL iteration count per run.
    #[arg(long, default_value_t = 5)]
    iters: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Emit the report as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

// ---------------------------------------------------------------------------
// Failure plumbing
// ---------------------------------------------------------------------------

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

/// Errors raised while loading or validating inputs.
fn input_err(e: Error) -> Failure {
    Failure::new(EXIT_INPUT, e.to_string())
}

/// Errors raised while the reconstruction runs. Worker faults, budget
/// refusals, and accumulator/estimate overflows are runtime failures; any
/// parameter problem the run surfaces is still an input failure.
fn run_err(e: Error) -> Failure {
    let code = match &e {
        Error::WorkerFailure { .. }
        | Error::BudgetExceeded { .. }
        | Error::AccumulatorRange { .. }
        | Error::MemoryOverflow { .. } => EXIT_RUNTIME,
        _ => EXIT_INPUT,
    };
    Failure::new(code, e.to_string())
}

/// Errors raised while producing output files.
fn output_err(e: Error) -> Failure {
    Failure::new(EXIT_OUTPUT, e.to_string())
}

fn output_io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(EXIT_OUTPUT, format!("{}: {e}", path.display()))
}

// ---------------------------------------------------------------------------
// Staged output writes
// ---------------------------------------------------------------------------

/// Collects writes under temporary names and renames them into place only
/// when the whole command has succeeded, so failed runs leave no output
/// files behind.
struct Stager {
    entries: Vec<(PathBuf, PathBuf)>,
    committed: bool,
}

impl Stager {
    fn new() -> Self {
        Self {
            entries: Vec::new(),
            committed: false,
        }
    }

    /// Registers `final_path` and returns the temporary path to write to.
    fn plan(&mut self, final_path: PathBuf) -> Result<PathBuf, Failure> {
        if let Some(parent) = final_path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| output_io_err(parent, e))?;
            }
        }
        let name = final_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".to_string());
        let tmp = final_path.with_file_name(format!(".stage-{}-{}.{name}", std::process::id(), self.entries.len()));
        self.entries.push((tmp.clone(), final_path));
        Ok(tmp)
    }

    /// Like [`plan`], additionally registering the scale sidecar a non-f32
    /// TIFF write will produce next to the temporary file.
    fn plan_tiff(&mut self, final_path: PathBuf, format: PixelFormat) -> Result<PathBuf, Failure> {
        let tmp = self.plan(final_path.clone())?;
        if format != PixelFormat::F32 {
            self.entries
                .push((sidecar_path(&tmp), sidecar_path(&final_path)));
        }
        Ok(tmp)
    }

    fn commit(mut self) -> Result<(), Failure> {
        for (tmp, fin) in &self.entries {
            fs::rename(tmp, fin).map_err(|e| output_io_err(fin, e))?;
        }
        self.committed = true;
        Ok(())
    }
}

impl Drop for Stager {
    fn drop(&mut self) {
        if !self.committed {
            for (tmp, _) in &self.entries {
                let _ = fs::remove_file(tmp);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fn optics_overrides(flags: &OpticsFlags) -> RunConfig {
    RunConfig {
        wavelength_um: flags.wavelength_um,
        na: flags.na,
        mla_pitch_um: flags.mla_pitch_um,
        magnification: flags.magnification,
        nnum: flags.nnum,
        ..RunConfig::default()
    }
}

fn load_base_config(path: Option<&PathBuf>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => load_config(p).map_err(input_err),
        None => Ok(RunConfig::default()),
    }
}

/// Worker-count precedence: `--workers` flag, then LFDECONV_WORKERS, then the
/// config file, then 1.
fn resolve_workers(flag: Option<usize>, file: Option<usize>) -> Result<usize, Failure> {
    if let Some(w) = flag {
        return Ok(w);
    }
    if let Ok(raw) = std::env::var("LFDECONV_WORKERS") {
        let w: usize = raw.parse().map_err(|_| {
            Failure::new(
                EXIT_INPUT,
                format!("LFDECONV_WORKERS must be a positive integer, got '{raw}'"),
            )
        })?;
        if w == 0 {
            return Err(Failure::new(EXIT_INPUT, "LFDECONV_WORKERS must be >= 1"));
        }
        return Ok(w);
    }
    Ok(file.unwrap_or(1))
}

/// Reads a single-page light-field measurement.
fn load_measurement(path: &Path, nnum: usize) -> Result<LightFieldImage, Failure> {
    let vol = read_tiff_stack(path).map_err(input_err)?;
    if vol.nz() != 1 {
        return Err(Failure::new(
            EXIT_INPUT,
            format!(
                "{}: expected a single-page light-field image, found {} pages",
                path.display(),
                vol.nz()
            ),
        ));
    }
    LightFieldImage::new(vol.height(), vol.width(), nnum, vol.layer(0).to_vec())
        .map_err(input_err)
}

/// Rounds every sample to f32 precision so the in-memory value and its f32
/// TIFF representation are identical.
fn quantize_volume_f32(vol: &Volume) -> Volume {
    let data = vol.data().iter().map(|&v| v as f32 as f64).collect();
    Volume::new(vol.nz(), vol.height(), vol.width(), data).expect("same shape, finite data")
}

fn quantize_psf_f32(psf: &PsfStack) -> Result<PsfStack, Failure> {
    let kernels = psf.kernels().iter().map(|&v| v as f32 as f64).collect();
    PsfStack::new(psf.nz(), psf.nnum(), psf.kh(), psf.kw(), kernels).map_err(input_err)
}

struct StderrProgress;

impl ProgressSink for StderrProgress {
    fn on_iteration(&mut self, sample: &MetricSample) {
        eprintln!(
            "iter {:>3}  entropy {:.6e}  {:.1} ms",
            sample.iteration, sample.entropy, sample.wall_ms
        );
    }
}

fn json_line(value: &serde_json::Value) -> String {
    serde_json::to_string(value).expect("JSON value serializes")
}

// ---------------------------------------------------------------------------
// deconvolve
// ---------------------------------------------------------------------------

fn cmd_deconvolve(a: DeconvolveArgs) -> Result<(), Failure> {
    let file_cfg = load_base_config(a.config.as_ref())?;
    let overrides = RunConfig {
        workers: a.workers,
        max_iters: a.max_iters,
        min_iters: a.min_iters,
        patience: a.patience,
        fixed_iters: a.fixed_iters,
        epsilon: a.epsilon,
        engine: a.engine.clone(),
        region_shape: a.region_shape.map(Into::into),
        memory_budget_bytes: a.memory_budget_mb.map(|mb| mb * 1024 * 1024),
        input: a.input.clone(),
        psf: a.psf.clone(),
        psf_descriptor: a.psf_desc.clone(),
        output_prefix: a.out.clone(),
        ..optics_overrides(&a.optics)
    };
    let workers = resolve_workers(a.workers, file_cfg.workers)?;
    let cfg = file_cfg.merged_with(&overrides);

    let missing = |key: &str| {
        Failure::new(
            EXIT_INPUT,
            format!("missing '{key}': pass --{} or set {key} in --config", key.replace('_', "-")),
        )
    };
    let input = cfg.input.clone().ok_or_else(|| missing("input"))?;
    let psf_path = cfg.psf.clone().ok_or_else(|| missing("psf"))?;
    let desc_path = cfg
        .psf_descriptor
        .clone()
        .ok_or_else(|| missing("psf_descriptor"))?;
    let prefix = cfg.output_prefix.clone().ok_or_else(|| missing("output_prefix"))?;

    let optics = cfg.optics().map_err(input_err)?;
    let settings = cfg.settings().map_err(input_err)?;
    let y = load_measurement(&input, optics.nnum)?;
    let desc = PsfLayoutDescriptor::load(&desc_path).map_err(input_err)?;
    let psf = load_psf(&psf_path, &desc).map_err(input_err)?;

    let options = ParallelOptions {
        workers,
        memory_budget_bytes: cfg.memory_budget_bytes,
    };
    let mut silent = SilentProgress;
    let mut loud = StderrProgress;
    let progress: &mut dyn ProgressSink = if a.verbose { &mut loud } else { &mut silent };
    let (result, _transfer) =
        run_parallel_instrumented(&y, &psf, &optics, &settings, None, &options, progress)
            .map_err(run_err)?;

    let config_echo = serde_json::json!({
        "format_version": FORMAT_VERSION,
        "optics": optics,
        "settings": settings,
        "workers": workers,
        "input": input,
        "psf": psf_path,
        "psf_descriptor": desc_path,
        "output_prefix": prefix,
        "pixel_format": PixelFormat::from(a.pixel_format).name(),
    });
    write_deconv_outputs(&result, &prefix, a.pixel_format.into(), config_echo)?;

    println!("best_iter={}", result.best_iteration);
    println!("stop_iter={}", result.iterations_run);
    Ok(())
}

fn prefixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_deconv_outputs(
    result: &DeconvResult,
    prefix: &Path,
    format: PixelFormat,
    config_echo: serde_json::Value,
) -> Result<(), Failure> {
    let mut stager = Stager::new();
    let vol_tmp = stager.plan_tiff(prefixed(prefix, "_volume.tif"), format)?;
    let csv_tmp = stager.plan(prefixed(prefix, "_series.csv"))?;
    let json_tmp = stager.plan(prefixed(prefix, "_summary.json"))?;

    write_tiff_stack(&result.volume, &vol_tmp, format).map_err(output_err)?;
    write_series(
        &result.series,
        result.iterations_run,
        config_echo,
        &csv_tmp,
        &json_tmp,
    )
    .map_err(output_err)?;
    stager.commit()
}

// ---------------------------------------------------------------------------
// metric
// ---------------------------------------------------------------------------

fn cmd_metric(a: MetricArgs) -> Result<(), Failure> {
    let cfg = load_base_config(a.config.as_ref())?.merged_with(&RunConfig {
        region_shape: a.region_shape.map(Into::into),
        ..optics_overrides(&a.optics)
    });
    let optics = cfg.optics().map_err(input_err)?;

    let vol = read_tiff_stack(&a.input).map_err(input_err)?;
    let image = if a.no_project {
        Image2D::from_vec(vol.height(), vol.width(), vol.layer(0).to_vec())
            .map_err(input_err)?
    } else {
        max_project_z(&vol)
    };

    let region = cutoff_region(&optics, image.height(), image.width()).map_err(input_err)?;
    let metric_cfg = MetricConfig {
        region_shape: cfg.region_shape.unwrap_or(RegionShape::Triangle),
    };
    let entropy = dct_entropy(&image, &region, &metric_cfg).map_err(run_err)?;

    println!(
        "{}",
        json_line(&serde_json::json!({
            "format_version": FORMAT_VERSION,
            "dct_entropy": entropy,
            "x_s": region.x_s,
            "y_s": region.y_s,
            "g_s": region.g_s,
            "projected": !a.no_project,
            "pages": vol.nz(),
        }))
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate / psfgen
// ---------------------------------------------------------------------------

fn cmd_simulate(a: SimulateArgs) -> Result<(), Failure> {
    let psf_spec = a.psf_shape.spec();
    let phantom_spec = PhantomSpec {
        nz: psf_spec.nz,
        height: a.height,
        width: a.width,
        bead_count: a.beads,
        bead_radius_px: a.bead_radius,
        seed: a.seed,
        photon_scale: a.photon_scale,
    };

    // Quantize both inputs to f32 precision before projecting so that the
    // files on disk reproduce the measurement exactly: forward-projecting
    // the written phantom with the written PSF gives this y bit-for-bit.
    let psf = quantize_psf_f32(&gen_psf(&psf_spec).map_err(input_err)?)?;
    let phantom = quantize_volume_f32(&gen_bead_volume(&phantom_spec).map_err(input_err)?);
    let engine = engine_by_name(DEFAULT_ENGINE).map_err(run_err)?;
    let clean = forward_project(&phantom, &psf, engine.as_ref()).map_err(run_err)?;
    let measurement = if a.no_noise {
        clean
    } else {
        add_poisson_noise(&clean, a.seed).map_err(run_err)?
    };
    let m_vol = Volume::new(
        1,
        measurement.height(),
        measurement.width(),
        measurement.data().to_vec(),
    )
    .map_err(run_err)?;

    let mut stager = Stager::new();
    let phantom_tmp = stager.plan_tiff(prefixed(&a.out, "_phantom.tif"), PixelFormat::F32)?;
    let psf_tmp = stager.plan(prefixed(&a.out, "_psf.tif"))?;
    let desc_tmp = stager.plan(prefixed(&a.out, "_psf.json"))?;
    let meas_tmp = stager.plan_tiff(prefixed(&a.out, "_measurement.tif"), PixelFormat::F32)?;

    write_tiff_stack(&phantom, &phantom_tmp, PixelFormat::F32).map_err(output_err)?;
    write_psf(&psf, &psf_tmp, &desc_tmp).map_err(output_err)?;
    write_tiff_stack(&m_vol, &meas_tmp, PixelFormat::F32).map_err(output_err)?;
    stager.commit()?;

    println!(
        "{}",
        json_line(&serde_json::json!({
            "format_version": FORMAT_VERSION,
            "phantom": prefixed(&a.out, "_phantom.tif"),
            "psf": prefixed(&a.out, "_psf.tif"),
            "psf_descriptor": prefixed(&a.out, "_psf.json"),
            "measurement": prefixed(&a.out, "_measurement.tif"),
            "seed": a.seed,
            "noise": !a.no_noise,
        }))
    );
    Ok(())
}

fn cmd_psfgen(a: PsfgenArgs) -> Result<(), Failure> {
    let psf = gen_psf(&a.psf_shape.spec()).map_err(input_err)?;

    let mut stager = Stager::new();
    let psf_tmp = stager.plan(prefixed(&a.out, "_psf.tif"))?;
    let desc_tmp = stager.plan(prefixed(&a.out, "_psf.json"))?;
    let desc = write_psf(&psf, &psf_tmp, &desc_tmp).map_err(output_err)?;
    stager.commit()?;

    println!(
        "{}",
        json_line(&serde_json::json!({
            "format_version": FORMAT_VERSION,
            "psf": prefixed(&a.out, "_psf.tif"),
            "psf_descriptor": prefixed(&a.out, "_psf.json"),
            "pages": desc.page_count(),
            "nz": desc.nz,
            "nnum": desc.nnum,
            "kh": desc.kh,
            "kw": desc.kw,
        }))
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchRow {
    workers: usize,
    wall_ms: f64,
    per_iteration_ms: f64,
    speedup: f64,
    transfer: TransferReport,
}

fn cmd_bench(a: BenchArgs) -> Result<(), Failure> {
    if a.workers_list.is_empty() {
        return Err(Failure::new(EXIT_USAGE, "--workers-list needs at least one entry"));
    }
    if a.workers_list.iter().any(|&w| w == 0) {
        return Err(Failure::new(EXIT_INPUT, "worker counts must be >= 1"));
    }
    if a.iters == 0 {
        return Err(Failure::new(EXIT_INPUT, "--iters must be >= 1"));
    }

    let psf_spec = a.psf_shape.spec();
    let psf = gen_psf(&psf_spec).map_err(input_err)?;
    let phantom = gen_bead_volume(&PhantomSpec {
        nz: psf_spec.nz,
        height: a.height,
        width: a.width,
        bead_count: 3,
        bead_radius_px: 0.9,
        seed: a.seed,
        photon_scale: 120.0,
    })
    .map_err(input_err)?;
    let engine = engine_by_name(DEFAULT_ENGINE).map_err(run_err)?;
    let clean = forward_project(&phantom, &psf, engine.as_ref()).map_err(run_err)?;
    let y = add_poisson_noise(&clean, a.seed).map_err(run_err)?;

    let optics = lfdeconv::optics::OpticsParams {
        wavelength_um: 0.52,
        na: 0.5,
        mla_pitch_um: 150.0,
        magnification: 40.0,
        nnum: psf_spec.nnum,
    };
    let mut settings = lfdeconv::deconv::DeconvSettings::default();
    settings.policy.mode = lfdeconv::deconv::StopMode::Fixed(a.iters);

    let mut rows: Vec<BenchRow> = Vec::new();
    let mut reference: Option<DeconvResult> = None;
    for &w in &a.workers_list {
        let options = ParallelOptions {
            workers: w,
            memory_budget_bytes: None,
        };
        let start = Instant::now();
        let (result, transfer) = run_parallel_instrumented(
            &y,
            &psf,
            &optics,
            &settings,
            None,
            &options,
            &mut SilentProgress,
        )
        .map_err(run_err)?;
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;

        // Correctness gate: every worker count must reproduce the baseline
        // bit-for-bit before any timing is reported.
        if let Some(base) = &reference {
            let volumes_match = base.volume.data() == result.volume.data();
            let series_match = base.series.samples.len() == result.series.samples.len()
                && base
                    .series
                    .samples
                    .iter()
                    .zip(&result.series.samples)
                    .all(|(x, y)| x.iteration == y.iteration && x.entropy == y.entropy);
            if !volumes_match || !series_match {
                return Err(Failure::new(
                    EXIT_RUNTIME,
                    format!(
                        "workers={w} produced a different result than workers={}; \
                         refusing to report timings for a broken parallel path",
                        a.workers_list[0]
                    ),
                ));
            }
        } else {
            reference = Some(result);
        }

        rows.push(BenchRow {
            workers: w,
            wall_ms,
            per_iteration_ms: wall_ms / a.iters as f64,
            speedup: 0.0,
            transfer,
        });
    }
    let baseline = rows[0].wall_ms;
    for row in &mut rows {
        row.speedup = baseline / row.wall_ms;
    }

    if a.json {
        let json_rows: Vec<serde_json::Value> = rows
            .iter()
            .map(|r| {
                serde_json::json!({
                    "workers": r.workers,
                    "wall_ms": r.wall_ms,
                    "per_iteration_ms": r.per_iteration_ms,
                    "speedup": r.speedup,
                    "per_iteration_bytes": r.transfer.per_iteration_bytes,
                    "setup_bytes": r.transfer.setup_bytes,
                    "teardown_bytes": r.transfer.teardown_bytes,
                })
            })
            .collect();
        println!(
            "{}",
            json_line(&serde_json::json!({
                "format_version": FORMAT_VERSION,
                "iterations": a.iters,
                "nz": psf_spec.nz,
                "height": a.height,
                "width": a.width,
                "bit_identical": true,
                "baseline_workers": a.workers_list[0],
                "rows": json_rows,
            }))
        );
    } else {
        println!("all worker counts bit-identical: yes");
        println!(
            "{:>8} {:>12} {:>14} {:>9} {:>16}",
            "workers", "wall_ms", "per_iter_ms", "speedup", "per_iter_bytes"
        );
        for r in &rows {
            println!(
                "{:>8} {:>12.3} {:>14.3} {:>9.2} {:>16}",
                r.workers, r.wall_ms, r.per_iteration_ms, r.speedup, r.transfer.per_iteration_bytes
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// info
// ---------------------------------------------------------------------------

fn cmd_info() {
    println!("lfdeconv {}", env!("CARGO_PKG_VERSION"));
    println!("file format_version: {FORMAT_VERSION}");
    println!("default seed: {DEFAULT_SEED}");
    println!("convolution engines:");
    for (name, description) in engine_catalog() {
        let default = if name == DEFAULT_ENGINE { " (default)" } else { "" };
        println!("  {name}{default}: {description}");
    }
    println!("exit codes:");
    println!("  0 success");
    println!("  1 usage error");
    println!("  2 input validation failure");
    println!("  3 runtime failure (worker fault, memory budget)");
    println!("  4 output write failure");
    println!("environment: LFDECONV_WORKERS sets the worker count (--workers wins)");
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help / --version land here too; they exit 0.
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let outcome = match cli.cmd {
        Cmd::Deconvolve(a) => cmd_deconvolve(a),
        Cmd::Metric(a) => cmd_metric(a),
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Psfgen(a) => cmd_psfgen(a),
        Cmd::Bench(a) => cmd_bench(a),
        Cmd::Info => {
            cmd_info();
            Ok(())
        }
    };
    match outcome {
        Ok(()) => {}
        Err(f) => {
            eprintln!("error: {}", f.message);
            std::process::exit(f.code);
        }
    }
}
