//! File formats: grayscale TIFF stacks, PSF banks with JSON layout
//! descriptors, metric-series CSV/JSON reports, and the key-value run
//! configuration.
//!
//! Every on-disk format carries a `format_version` so old files fail loudly
//! instead of being misread. Integer TIFF samples are read value-preserving
//! (a `u16` pixel of 7 becomes `7.0`, never a normalized fraction); `f32`
//! stacks round-trip bit-exactly. Parsing is total: malformed input yields a
//! diagnostic naming the file (and page or line where applicable), never a
//! panic.

use std::fmt;
use std::fs;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tiff::decoder::{Decoder, DecodingResult};
use tiff::encoder::{colortype, TiffEncoder};
use tiff::ColorType;

use crate::deconv::{DeconvSettings, MetricSample, MetricSeries, StopMode, StopPolicy};
use crate::error::{Error, Result};
use crate::lfmodel::conv::{engine_names, DEFAULT_ENGINE};
use crate::lfmodel::{PsfStack, Volume};
use crate::metric::{MetricConfig, RegionShape};
use crate::optics::OpticsParams;

/// Version stamped into every file this module writes and required of every
/// file it reads.
pub const FORMAT_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Pixel formats
// ---------------------------------------------------------------------------

/// Sample encoding of a TIFF stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelFormat {
    U8,
    U16,
    F32,
}

impl PixelFormat {
    pub fn name(&self) -> &'static str {
        match self {
            PixelFormat::U8 => "u8",
            PixelFormat::U16 => "u16",
            PixelFormat::F32 => "f32",
        }
    }

    /// Largest representable sample for integer formats.
    fn int_top(&self) -> Option<f64> {
        match self {
            PixelFormat::U8 => Some(255.0),
            PixelFormat::U16 => Some(65535.0),
            PixelFormat::F32 => None,
        }
    }
}

impl fmt::Display for PixelFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PixelFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "u8" => Ok(PixelFormat::U8),
            "u16" => Ok(PixelFormat::U16),
            "f32" => Ok(PixelFormat::F32),
            other => Err(Error::invalid(
                "pixel_format",
                format!("unknown pixel format '{other}'; expected u8, u16, or f32"),
            )),
        }
    }
}

// ---------------------------------------------------------------------------
// TIFF stacks
// ---------------------------------------------------------------------------

/// One decoded grayscale page.
struct GrayPage {
    height: usize,
    width: usize,
    format: PixelFormat,
    data: Vec<f64>,
}

fn tiff_err(path: &Path, source: tiff::TiffError) -> Error {
    Error::Tiff {
        path: path.to_path_buf(),
        source,
    }
}

/// Decodes every page of a grayscale TIFF, value-preserving.
///
/// Produces three distinct failures: color images (convert to grayscale
/// first), grayscale images in a sample format outside u8/u16/f32, and
/// corrupt files (surfaced as the decoder's own error, prefixed with the
/// path).
fn read_gray_pages(path: &Path) -> Result<Vec<GrayPage>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = Decoder::new(BufReader::new(file)).map_err(|e| tiff_err(path, e))?;
    let mut pages = Vec::new();
    loop {
        let color = dec.colortype().map_err(|e| tiff_err(path, e))?;
        match color {
            ColorType::Gray(_) => {}
            other => {
                return Err(Error::UnsupportedTiff {
                    path: path.to_path_buf(),
                    reason: format!(
                        "color image ({other:?}); only single-channel grayscale stacks \
                         are supported — convert RGB/multichannel data to grayscale first"
                    ),
                })
            }
        }
        let (w, h) = dec.dimensions().map_err(|e| tiff_err(path, e))?;
        let decoded = dec.read_image().map_err(|e| tiff_err(path, e))?;
        let (format, data): (PixelFormat, Vec<f64>) = match decoded {
            DecodingResult::U8(v) => (PixelFormat::U8, v.iter().map(|&x| x as f64).collect()),
            DecodingResult::U16(v) => (PixelFormat::U16, v.iter().map(|&x| x as f64).collect()),
            DecodingResult::F32(v) => (PixelFormat::F32, v.iter().map(|&x| x as f64).collect()),
            other => {
                return Err(Error::UnsupportedTiff {
                    path: path.to_path_buf(),
                    reason: format!(
                        "unsupported pixel format {}; expected u8, u16, or f32 grayscale",
                        decoding_result_name(&other)
                    ),
                })
            }
        };
        if data.len() != (w as usize) * (h as usize) {
            return Err(Error::UnsupportedTiff {
                path: path.to_path_buf(),
                reason: format!(
                    "page {} decodes to {} samples but its header says {}x{}",
                    pages.len(),
                    data.len(),
                    h,
                    w
                ),
            });
        }
        pages.push(GrayPage {
            height: h as usize,
            width: w as usize,
            format,
            data,
        });
        if !dec.more_images() {
            break;
        }
        dec.next_image().map_err(|e| tiff_err(path, e))?;
    }
    Ok(pages)
}

fn decoding_result_name(r: &DecodingResult) -> &'static str {
    match r {
        DecodingResult::U8(_) => "u8",
        DecodingResult::U16(_) => "u16",
        DecodingResult::U32(_) => "u32",
        DecodingResult::U64(_) => "u64",
        DecodingResult::F32(_) => "f32",
        DecodingResult::F64(_) => "f64",
        DecodingResult::I8(_) => "i8",
        DecodingResult::I16(_) => "i16",
        DecodingResult::I32(_) => "i32",
        DecodingResult::I64(_) => "i64",
    }
}

/// Reads a grayscale TIFF stack into a volume, one page per z layer.
///
/// Integer samples are widened without rescaling, so pixel values survive
/// exactly. All pages must share the first page's dimensions.
pub fn read_tiff_stack(path: &Path) -> Result<Volume> {
    let pages = read_gray_pages(path)?;
    let first = &pages[0];
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(pages.len() * h * w);
    for (i, page) in pages.iter().enumerate() {
        if page.height != h || page.width != w {
            return Err(Error::UnsupportedTiff {
                path: path.to_path_buf(),
                reason: format!(
                    "page {i} is {}x{} but page 0 is {h}x{w}; all pages of a stack \
                     must share one shape",
                    page.height, page.width
                ),
            });
        }
        data.extend_from_slice(&page.data);
    }
    Volume::new(pages.len(), h, w, data)
}

/// Scaling applied when quantizing to an integer pixel format, recorded next
/// to the TIFF so the original range can be recovered:
/// `value ≈ stored · scale + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleSidecar {
    pub format_version: u32,
    pub pixel_format: PixelFormat,
    pub scale: f64,
    pub offset: f64,
}

/// Path of the sidecar JSON written alongside integer-format stacks.
pub fn sidecar_path(tiff_path: &Path) -> PathBuf {
    let mut name = tiff_path.as_os_str().to_os_string();
    name.push(".scale.json");
    PathBuf::from(name)
}

/// Min-max quantization parameters onto `[0, top]`.
///
/// `scale = (max - min) / top`, `offset = min`; a constant image gets
/// `scale = 1` so dequantization is still well-defined.
fn min_max_scale(data: &[f64], top: f64) -> (f64, f64) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in data {
        min = min.min(v);
        max = max.max(v);
    }
    let range = max - min;
    let scale = if range > 0.0 { range / top } else { 1.0 };
    (scale, min)
}

/// Writes a volume as a multi-page grayscale TIFF.
///
/// `f32` stores the samples directly (bit-exact round trip through
/// [`read_tiff_stack`]). Integer formats apply documented linear min-max
/// scaling — `stored = round((v - offset) / scale)` — and record `scale` and
/// `offset` in a sidecar JSON at [`sidecar_path`]. Non-finite samples are
/// rejected before anything is written.
pub fn write_tiff_stack(volume: &Volume, path: &Path, format: PixelFormat) -> Result<()> {
    if let Some(v) = volume.data().iter().find(|v| !v.is_finite()) {
        return Err(Error::UnsupportedTiff {
            path: path.to_path_buf(),
            reason: format!("cannot encode non-finite sample {v}; clean the volume first"),
        });
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = TiffEncoder::new(BufWriter::new(file)).map_err(|e| tiff_err(path, e))?;
    let (h, w) = (volume.height() as u32, volume.width() as u32);
    match format {
        PixelFormat::F32 => {
            let mut page = vec![0.0f32; volume.height() * volume.width()];
            for z in 0..volume.nz() {
                for (dst, &src) in page.iter_mut().zip(volume.layer(z)) {
                    *dst = src as f32;
                }
                enc.write_image::<colortype::Gray32Float>(w, h, &page)
                    .map_err(|e| tiff_err(path, e))?;
            }
        }
        PixelFormat::U16 | PixelFormat::U8 => {
            let top = format.int_top().expect("integer format");
            let (scale, offset) = min_max_scale(volume.data(), top);
            let quantize =
                |v: f64| -> f64 { ((v - offset) / scale).round().clamp(0.0, top) };
            match format {
                PixelFormat::U16 => {
                    let mut page = vec![0u16; volume.height() * volume.width()];
                    for z in 0..volume.nz() {
                        for (dst, &src) in page.iter_mut().zip(volume.layer(z)) {
                            *dst = quantize(src) as u16;
                        }
                        enc.write_image::<colortype::Gray16>(w, h, &page)
                            .map_err(|e| tiff_err(path, e))?;
                    }
                }
                PixelFormat::U8 => {
                    let mut page = vec![0u8; volume.height() * volume.width()];
                    for z in 0..volume.nz() {
                        for (dst, &src) in page.iter_mut().zip(volume.layer(z)) {
                            *dst = quantize(src) as u8;
                        }
                        enc.write_image::<colortype::Gray8>(w, h, &page)
                            .map_err(|e| tiff_err(path, e))?;
                    }
                }
                PixelFormat::F32 => unreachable!(),
            }
            let sidecar = ScaleSidecar {
                format_version: FORMAT_VERSION,
                pixel_format: format,
                scale,
                offset,
            };
            write_json(&sidecar, &sidecar_path(path))?;
        }
    }
    Ok(())
}

/// Reads the sidecar JSON written next to an integer-format stack.
pub fn read_sidecar(tiff_path: &Path) -> Result<ScaleSidecar> {
    let path = sidecar_path(tiff_path);
    let sidecar: ScaleSidecar = read_json(&path)?;
    if sidecar.format_version != FORMAT_VERSION {
        return Err(Error::invalid(
            "sidecar",
            format!(
                "{}: format_version {} unsupported; this build reads version {FORMAT_VERSION}",
                path.display(),
                sidecar.format_version
            ),
        ));
    }
    Ok(sidecar)
}

// ---------------------------------------------------------------------------
// PSF banks
// ---------------------------------------------------------------------------

/// Layout contract for a PSF TIFF: how its flat page sequence maps onto the
/// `(z, a, b)` kernel lattice.
///
/// Page order is fixed z-major: kernel `(z, a, b)` lives at page
/// `(z·nnum + a)·nnum + b`, every page is `kh x kw`, and the file must hold
/// exactly `nz·nnum²` pages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsfLayoutDescriptor {
    pub format_version: u32,
    pub nz: usize,
    pub nnum: usize,
    pub kh: usize,
    pub kw: usize,
    pub pixel_format: PixelFormat,
}

impl PsfLayoutDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::invalid(
                "psf descriptor",
                format!(
                    "format_version {} unsupported; this build reads version {FORMAT_VERSION}",
                    self.format_version
                ),
            ));
        }
        if self.nz == 0 {
            return Err(Error::invalid("psf descriptor", "nz must be >= 1"));
        }
        if self.nnum == 0 || self.nnum % 2 == 0 {
            return Err(Error::invalid(
                "psf descriptor",
                format!("nnum must be odd and >= 1, got {}", self.nnum),
            ));
        }
        if self.kh == 0 || self.kw == 0 || self.kh % 2 == 0 || self.kw % 2 == 0 {
            return Err(Error::invalid(
                "psf descriptor",
                format!("kernel dims {}x{} must be odd", self.kh, self.kw),
            ));
        }
        Ok(())
    }

    /// Total pages the TIFF must contain: `nz · nnum²`.
    pub fn page_count(&self) -> usize {
        self.nz * self.nnum * self.nnum
    }

    /// Page holding kernel `(z, a, b)`.
    pub fn page_index(&self, z: usize, a: usize, b: usize) -> usize {
        (z * self.nnum + a) * self.nnum + b
    }

    pub fn load(path: &Path) -> Result<Self> {
        let desc: Self = read_json(path)?;
        desc.validate()?;
        Ok(desc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        write_json(self, path)
    }
}

/// Loads a PSF bank from a TIFF plus its layout descriptor.
///
/// Pages are consumed in descriptor order (z-major). A wrong page count
/// reports both the expected and found numbers; a negative sample or a page
/// whose shape disagrees with the descriptor reports the offending page
/// index.
pub fn load_psf(tiff_path: &Path, desc: &PsfLayoutDescriptor) -> Result<PsfStack> {
    desc.validate()?;
    let pages = read_gray_pages(tiff_path)?;
    if pages.len() != desc.page_count() {
        return Err(Error::PsfPageCount {
            path: tiff_path.to_path_buf(),
            expected: desc.page_count(),
            found: pages.len(),
        });
    }
    let mut kernels = Vec::with_capacity(desc.page_count() * desc.kh * desc.kw);
    for (idx, page) in pages.iter().enumerate() {
        if page.format != desc.pixel_format {
            return Err(Error::PsfPage {
                path: tiff_path.to_path_buf(),
                page: idx,
                reason: format!(
                    "pixel format {} does not match the descriptor's {}",
                    page.format, desc.pixel_format
                ),
            });
        }
        if page.height != desc.kh || page.width != desc.kw {
            return Err(Error::PsfPage {
                path: tiff_path.to_path_buf(),
                page: idx,
                reason: format!(
                    "page is {}x{} but the descriptor says kernels are {}x{}",
                    page.height, page.width, desc.kh, desc.kw
                ),
            });
        }
        if let Some((pos, &v)) = page.data.iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(Error::PsfPage {
                path: tiff_path.to_path_buf(),
                page: idx,
                reason: format!(
                    "negative value {v} at pixel ({}, {}); PSF kernels must be nonnegative",
                    pos / page.width,
                    pos % page.width
                ),
            });
        }
        kernels.extend_from_slice(&page.data);
    }
    PsfStack::new(desc.nz, desc.nnum, desc.kh, desc.kw, kernels)
}

/// Writes a PSF bank as an f32 TIFF in descriptor page order plus the
/// matching descriptor JSON. Returns the descriptor it wrote.
pub fn write_psf(
    psf: &PsfStack,
    tiff_path: &Path,
    descriptor_path: &Path,
) -> Result<PsfLayoutDescriptor> {
    let file = File::create(tiff_path).map_err(|e| Error::io(tiff_path, e))?;
    let mut enc = TiffEncoder::new(BufWriter::new(file)).map_err(|e| tiff_err(tiff_path, e))?;
    let (kh, kw) = (psf.kh() as u32, psf.kw() as u32);
    let mut page = vec![0.0f32; psf.kh() * psf.kw()];
    for z in 0..psf.nz() {
        for a in 0..psf.nnum() {
            for b in 0..psf.nnum() {
                for (dst, &src) in page.iter_mut().zip(psf.kernel(z, a, b)) {
                    *dst = src as f32;
                }
                enc.write_image::<colortype::Gray32Float>(kw, kh, &page)
                    .map_err(|e| tiff_err(tiff_path, e))?;
            }
        }
    }
    let desc = PsfLayoutDescriptor {
        format_version: FORMAT_VERSION,
        nz: psf.nz(),
        nnum: psf.nnum(),
        kh: psf.kh(),
        kw: psf.kw(),
        pixel_format: PixelFormat::F32,
    };
    desc.save(descriptor_path)?;
    Ok(desc)
}

// ---------------------------------------------------------------------------
// Metric series reports
// ---------------------------------------------------------------------------

/// Companion JSON written next to the series CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub format_version: u32,
    /// Iteration with the highest DCT entropy (earliest on ties).
    pub best_iter: usize,
    /// Iteration the run actually stopped at.
    pub stop_iter: usize,
    /// Echo of the configuration the run used.
    pub config: serde_json::Value,
}

/// Writes the entropy trace as CSV plus a summary JSON.
///
/// CSV header is `iteration,dct_entropy,wall_ms`; entropies are printed with
/// 17 significant digits so re-parsing reproduces the exact f64 values. An
/// empty series is rejected — a run that produced no iterations has nothing
/// to report.
pub fn write_series(
    series: &MetricSeries,
    stop_iter: usize,
    config_echo: serde_json::Value,
    csv_path: &Path,
    summary_path: &Path,
) -> Result<RunSummary> {
    if series.samples.is_empty() {
        return Err(Error::invalid(
            "series",
            "cannot write an empty metric series; the run recorded no iterations",
        ));
    }
    let mut out = String::from("iteration,dct_entropy,wall_ms\n");
    for s in &series.samples {
        out.push_str(&format!(
            "{},{:.16e},{:.3}\n",
            s.iteration, s.entropy, s.wall_ms
        ));
    }
    fs::write(csv_path, out).map_err(|e| Error::io(csv_path, e))?;
    let summary = RunSummary {
        format_version: FORMAT_VERSION,
        best_iter: series
            .best_iteration()
            .expect("non-empty series has a best iteration"),
        stop_iter,
        config: config_echo,
    };
    write_json(&summary, summary_path)?;
    Ok(summary)
}

/// Parses a series CSV back into a [`MetricSeries`]; exact inverse of
/// [`write_series`] for `iteration` and `dct_entropy`.
pub fn read_series(csv_path: &Path) -> Result<MetricSeries> {
    let text = fs::read_to_string(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "iteration,dct_entropy,wall_ms")) => {}
        Some((_, other)) => {
            return Err(Error::Config {
                path: csv_path.to_path_buf(),
                line: 1,
                reason: format!(
                    "expected header 'iteration,dct_entropy,wall_ms', found '{other}'"
                ),
            })
        }
        None => {
            return Err(Error::Config {
                path: csv_path.to_path_buf(),
                line: 1,
                reason: "file is empty".into(),
            })
        }
    }
    let mut samples = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let parse_err = |what: &str| Error::Config {
            path: csv_path.to_path_buf(),
            line: i + 1,
            reason: format!("bad {what} in '{line}'"),
        };
        let iteration = fields
            .next()
            .and_then(|f| f.trim().parse::<usize>().ok())
            .ok_or_else(|| parse_err("iteration"))?;
        let entropy = fields
            .next()
            .and_then(|f| f.trim().parse::<f64>().ok())
            .ok_or_else(|| parse_err("dct_entropy"))?;
        let wall_ms = fields
            .next()
            .and_then(|f| f.trim().parse::<f64>().ok())
            .ok_or_else(|| parse_err("wall_ms"))?;
        samples.push(MetricSample {
            iteration,
            entropy,
            wall_ms,
        });
    }
    Ok(MetricSeries { samples })
}

/// Reads a run summary JSON.
pub fn read_summary(path: &Path) -> Result<RunSummary> {
    read_json(path)
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

/// Parsed run configuration. Every field is optional so that a config file
/// and command-line flags can be merged; resolution to concrete parameter
/// structs happens in the `optics` / `stop_policy` / `settings` accessors,
/// which also apply the documented defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunConfig {
    pub wavelength_um: Option<f64>,
    pub na: Option<f64>,
    pub mla_pitch_um: Option<f64>,
    pub magnification: Option<f64>,
    pub nnum: Option<usize>,
    pub workers: Option<usize>,
    pub max_iters: Option<usize>,
    pub min_iters: Option<usize>,
    pub patience: Option<usize>,
    /// Present → fixed iteration count instead of the entropy stopping rule.
    pub fixed_iters: Option<usize>,
    pub epsilon: Option<f64>,
    pub engine: Option<String>,
    pub region_shape: Option<RegionShape>,
    pub memory_budget_bytes: Option<u64>,
    pub input: Option<PathBuf>,
    pub psf: Option<PathBuf>,
    pub psf_descriptor: Option<PathBuf>,
    pub output_prefix: Option<PathBuf>,
}

impl RunConfig {
    /// Overlays `over` on `self`: any field set in `over` wins.
    pub fn merged_with(mut self, over: &RunConfig) -> RunConfig {
        macro_rules! take {
            ($($f:ident),*) => { $( if over.$f.is_some() { self.$f = over.$f.clone(); } )* };
        }
        take!(
            wavelength_um,
            na,
            mla_pitch_um,
            magnification,
            nnum,
            workers,
            max_iters,
            min_iters,
            patience,
            fixed_iters,
            epsilon,
            engine,
            region_shape,
            memory_budget_bytes,
            input,
            psf,
            psf_descriptor,
            output_prefix
        );
        self
    }

    /// Assembles the optical parameters; all five are required.
    pub fn optics(&self) -> Result<OpticsParams> {
        let missing = |key: &'static str| Error::invalid("config", format!("missing key '{key}'"));
        let params = OpticsParams {
            wavelength_um: self.wavelength_um.ok_or_else(|| missing("wavelength_um"))?,
            na: self.na.ok_or_else(|| missing("na"))?,
            mla_pitch_um: self.mla_pitch_um.ok_or_else(|| missing("mla_pitch_um"))?,
            magnification: self.magnification.ok_or_else(|| missing("magnification"))?,
            nnum: self.nnum.ok_or_else(|| missing("nnum"))?,
        };
        params.validate()?;
        Ok(params)
    }

    /// Stopping policy with documented defaults: `max_iters` 50, `min_iters`
    /// 2, `patience` 1; `fixed_iters`, when present, switches to fixed mode.
    pub fn stop_policy(&self) -> StopPolicy {
        StopPolicy {
            mode: match self.fixed_iters {
                Some(n) => StopMode::Fixed(n),
                None => StopMode::Auto,
            },
            max_iters: self.max_iters.unwrap_or(50),
            min_iters: self.min_iters.unwrap_or(2),
            patience: self.patience.unwrap_or(1),
        }
    }

    /// Full deconvolution settings (policy + epsilon + metric + engine),
    /// validated.
    pub fn settings(&self) -> Result<DeconvSettings> {
        let settings = DeconvSettings {
            policy: self.stop_policy(),
            epsilon: self.epsilon.unwrap_or(1e-12),
            metric: MetricConfig {
                region_shape: self.region_shape.unwrap_or(RegionShape::Triangle),
            },
            engine: self
                .engine
                .clone()
                .unwrap_or_else(|| DEFAULT_ENGINE.to_string()),
        };
        settings.validate()?;
        Ok(settings)
    }
}

fn config_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

/// Loads a `key = value` config file.
///
/// Blank lines and lines starting with `#` are ignored. Unknown and
/// duplicated keys are rejected with their line numbers, as are malformed
/// values; referenced input paths must exist at load time. Recognized keys:
/// `format_version`, `wavelength_um`, `na`, `mla_pitch_um`, `magnification`,
/// `nnum`, `workers`, `max_iters`, `min_iters`, `patience`, `fixed_iters`,
/// `epsilon`, `engine`, `region_shape`, `memory_budget_mb`, `input`, `psf`,
/// `psf_descriptor`, `output_prefix`.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = RunConfig::default();
    let mut seen: Vec<String> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| config_err(path, lineno, format!("expected 'key = value', found '{line}'")))?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(config_err(path, lineno, "missing key before '='"));
        }
        if value.is_empty() {
            return Err(config_err(path, lineno, format!("empty value for key '{key}'")));
        }
        if seen.iter().any(|k| k == key) {
            return Err(config_err(path, lineno, format!("duplicate key '{key}'")));
        }
        seen.push(key.to_string());

        let parse_f64 = |v: &str| -> Result<f64> {
            let x: f64 = v
                .parse()
                .map_err(|_| config_err(path, lineno, format!("'{v}' is not a number for key '{key}'")))?;
            if !x.is_finite() {
                return Err(config_err(
                    path,
                    lineno,
                    format!("'{v}' overflows to a non-finite value for key '{key}'"),
                ));
            }
            Ok(x)
        };
        let parse_usize = |v: &str| -> Result<usize> {
            v.parse().map_err(|_| {
                config_err(
                    path,
                    lineno,
                    format!("'{v}' is not a nonnegative integer for key '{key}'"),
                )
            })
        };
        let existing_path = |v: &str| -> Result<PathBuf> {
            let p = PathBuf::from(v);
            if !p.exists() {
                return Err(config_err(
                    path,
                    lineno,
                    format!("{key} path '{v}' does not exist"),
                ));
            }
            Ok(p)
        };

        match key {
            "format_version" => {
                let v = parse_usize(value)?;
                if v as u32 != FORMAT_VERSION {
                    return Err(config_err(
                        path,
                        lineno,
                        format!(
                            "format_version {v} unsupported; this build reads version {FORMAT_VERSION}"
                        ),
                    ));
                }
            }
            "wavelength_um" => cfg.wavelength_um = Some(parse_f64(value)?),
            "na" => cfg.na = Some(parse_f64(value)?),
            "mla_pitch_um" => cfg.mla_pitch_um = Some(parse_f64(value)?),
            "magnification" => cfg.magnification = Some(parse_f64(value)?),
            "nnum" => {
                let n = parse_usize(value)?;
                if n == 0 || n % 2 == 0 {
                    return Err(config_err(
                        path,
                        lineno,
                        format!(
                            "nnum must be odd so the virtual-pixel lattice has a center, got {n}"
                        ),
                    ));
                }
                cfg.nnum = Some(n);
            }
            "workers" => {
                let n = parse_usize(value)?;
                if n == 0 {
                    return Err(config_err(path, lineno, "workers must be >= 1"));
                }
                cfg.workers = Some(n);
            }
            "max_iters" => cfg.max_iters = Some(parse_usize(value)?),
            "min_iters" => cfg.min_iters = Some(parse_usize(value)?),
            "patience" => cfg.patience = Some(parse_usize(value)?),
            "fixed_iters" => cfg.fixed_iters = Some(parse_usize(value)?),
            "epsilon" => cfg.epsilon = Some(parse_f64(value)?),
            "engine" => {
                let names = engine_names();
                if !names.contains(&value) {
                    return Err(config_err(
                        path,
                        lineno,
                        format!("unknown engine '{value}'; available: {}", names.join(", ")),
                    ));
                }
                cfg.engine = Some(value.to_string());
            }
            "region_shape" => {
                cfg.region_shape = Some(match value {
                    "triangle" => RegionShape::Triangle,
                    "rectangle" => RegionShape::Rectangle,
                    other => {
                        return Err(config_err(
                            path,
                            lineno,
                            format!("unknown region_shape '{other}'; expected triangle or rectangle"),
                        ))
                    }
                });
            }
            "memory_budget_mb" => {
                let mb = parse_usize(value)? as u64;
                cfg.memory_budget_bytes = Some(mb.checked_mul(1024 * 1024).ok_or_else(|| {
                    config_err(path, lineno, format!("memory_budget_mb {value} overflows"))
                })?);
            }
            "input" => cfg.input = Some(existing_path(value)?),
            "psf" => cfg.psf = Some(existing_path(value)?),
            "psf_descriptor" => cfg.psf_descriptor = Some(existing_path(value)?),
            "output_prefix" => cfg.output_prefix = Some(PathBuf::from(value)),
            other => {
                return Err(config_err(path, lineno, format!("unknown key '{other}'")));
            }
        }
    }
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// JSON helpers
// ---------------------------------------------------------------------------

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}
