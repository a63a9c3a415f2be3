//! Interchangeable convolution engines behind a common trait.
//!
//! The projection operators reduce to per-`(z, a, b)` "same" convolutions on
//! a sub-lenslet lattice. Two engines implement that contract: a direct
//! spatial one (the tolerance reference, fast for small kernels and sparse
//! layers) and an FFT one (wins for large kernel banks). Engines are
//! registered by name and selected at runtime; both must agree within 1e-8
//! relative, which the test suite enforces.
//!
//! Every engine must be bitwise deterministic for a fixed input: the parallel
//! pipeline relies on each layer's contribution being reproducible no matter
//! which worker computes it.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::PsfStack;
use crate::error::{Error, Result};

/// One projection step on a single z-layer.
pub trait ConvEngine: Send + Sync {
    fn name(&self) -> &'static str;

    /// `out(s,t) += Σ_{p≡a, q≡b (mod nnum)} layer(p,q) · h[z][a][b](s-p+ch, t-q+cw)`
    /// summed over all lattice classes `(a, b)`, zero padded at borders.
    fn forward_layer(
        &self,
        psf: &PsfStack,
        z: usize,
        layer: &[f64],
        height: usize,
        width: usize,
        out: &mut [f64],
    );

    /// `out(p,q) += Σ_{s,t} image(s,t) · h[z][a][b](s-p+ch, t-q+cw)` with
    /// `(a,b) = (p mod nnum, q mod nnum)`; the exact adjoint of
    /// [`ConvEngine::forward_layer`].
    fn backward_layer(
        &self,
        psf: &PsfStack,
        z: usize,
        image: &[f64],
        height: usize,
        width: usize,
        out: &mut [f64],
    );
}

/// Builds engine instances; registered once per engine name.
pub trait ConvEngineFactory: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    fn build(&self) -> Arc<dyn ConvEngine>;
}

fn registry() -> &'static BTreeMap<&'static str, Box<dyn ConvEngineFactory>> {
    static REGISTRY: OnceLock<BTreeMap<&'static str, Box<dyn ConvEngineFactory>>> =
        OnceLock::new();
    REGISTRY.get_or_init(|| {
        let factories: Vec<Box<dyn ConvEngineFactory>> =
            vec![Box::new(DirectFactory), Box::new(FftFactory)];
        factories.into_iter().map(|f| (f.name(), f)).collect()
    })
}

/// Engine used when nothing is configured.
pub const DEFAULT_ENGINE: &str = "direct";

/// Looks an engine up by registry name.
pub fn engine_by_name(name: &str) -> Result<Arc<dyn ConvEngine>> {
    registry()
        .get(name)
        .map(|f| f.build())
        .ok_or_else(|| {
            Error::invalid(
                "conv_engine",
                format!(
                    "unknown engine '{name}'; available: {}",
                    engine_names().join(", ")
                ),
            )
        })
}

/// Registered engine names, sorted.
pub fn engine_names() -> Vec<&'static str> {
    registry().keys().copied().collect()
}

/// Name/description pairs for `info`-style listings.
pub fn engine_catalog() -> Vec<(&'static str, &'static str)> {
    registry().values().map(|f| (f.name(), f.description())).collect()
}

struct DirectFactory;

impl ConvEngineFactory for DirectFactory {
    fn name(&self) -> &'static str {
        "direct"
    }
    fn description(&self) -> &'static str {
        "spatial-domain kernel stamping; reference path"
    }
    fn build(&self) -> Arc<dyn ConvEngine> {
        Arc::new(DirectConv)
    }
}

struct FftFactory;

impl ConvEngineFactory for FftFactory {
    fn name(&self) -> &'static str {
        "fft"
    }
    fn description(&self) -> &'static str {
        "frequency-domain convolution; faster for large kernel banks"
    }
    fn build(&self) -> Arc<dyn ConvEngine> {
        Arc::new(FftConv::new())
    }
}

/// Direct spatial evaluation. Skips zero-valued voxels, which is exact for
/// the nonnegative data the model accepts and makes sparse volumes cheap.
pub struct DirectConv;

impl ConvEngine for DirectConv {
    fn name(&self) -> &'static str {
        "direct"
    }

    fn forward_layer(
        &self,
        psf: &PsfStack,
        z: usize,
        layer: &[f64],
        height: usize,
        width: usize,
        out: &mut [f64],
    ) {
        let nnum = psf.nnum();
        let (kh, kw) = (psf.kh(), psf.kw());
        let (ch, cw) = psf.center();
        for p in 0..height {
            let a = p % nnum;
            let s_lo = p.saturating_sub(ch);
            let s_hi = (p + kh - ch).min(height);
            for q in 0..width {
                let v = layer[p * width + q];
                if v == 0.0 {
                    continue;
                }
                let kernel = psf.kernel(z, a, q % nnum);
                let t_lo = q.saturating_sub(cw);
                let t_hi = (q + kw - cw).min(width);
                for s in s_lo..s_hi {
                    let i = s + ch - p;
                    let krow = &kernel[i * kw..(i + 1) * kw];
                    let orow = &mut out[s * width..(s + 1) * width];
                    for t in t_lo..t_hi {
                        orow[t] += v * krow[t + cw - q];
                    }
                }
            }
        }
    }

    fn backward_layer(
        &self,
        psf: &PsfStack,
        z: usize,
        image: &[f64],
        height: usize,
        width: usize,
        out: &mut [f64],
    ) {
        let nnum = psf.nnum();
        let (kh, kw) = (psf.kh(), psf.kw());
        let (ch, cw) = psf.center();
        for p in 0..height {
            let a = p % nnum;
            let s_lo = p.saturating_sub(ch);
            let s_hi = (p + kh - ch).min(height);
            for q in 0..width {
                let kernel = psf.kernel(z, a, q % nnum);
                let t_lo = q.saturating_sub(cw);
                let t_hi = (q + kw - cw).min(width);
                let mut sum = 0.0;
                for s in s_lo..s_hi {
                    let i = s + ch - p;
                    let krow = &kernel[i * kw..(i + 1) * kw];
                    let irow = &image[s * width..(s + 1) * width];
                    for t in t_lo..t_hi {
                        sum += irow[t] * krow[t + cw - q];
                    }
                }
                out[p * width + q] += sum;
            }
        }
    }
}

/// Frequency-domain evaluation. Per layer, lattice-masked spectra are
/// multiplied by kernel spectra and accumulated in a fixed `(a, b)` order
/// before one inverse transform, so results do not depend on scheduling.
/// Kernel spectra are recomputed per application; caching them would break
/// the documented per-worker memory formula.
pub struct FftConv {
    planner: Mutex<FftPlanner<f64>>,
}

impl FftConv {
    pub fn new() -> Self {
        Self {
            planner: Mutex::new(FftPlanner::new()),
        }
    }

    fn plans(
        &self,
        ph: usize,
        pw: usize,
    ) -> (
        Arc<dyn rustfft::Fft<f64>>,
        Arc<dyn rustfft::Fft<f64>>,
        Arc<dyn rustfft::Fft<f64>>,
        Arc<dyn rustfft::Fft<f64>>,
    ) {
        let mut planner = self.planner.lock().unwrap_or_else(|e| e.into_inner());
        (
            planner.plan_fft_forward(pw),
            planner.plan_fft_forward(ph),
            planner.plan_fft_inverse(pw),
            planner.plan_fft_inverse(ph),
        )
    }
}

impl Default for FftConv {
    fn default() -> Self {
        Self::new()
    }
}

fn padded_dims(height: usize, width: usize, kh: usize, kw: usize) -> (usize, usize) {
    (
        (height + kh - 1).next_power_of_two(),
        (width + kw - 1).next_power_of_two(),
    )
}

/// In-place 2D FFT over a `ph x pw` row-major complex grid.
fn fft2_in_place(
    buf: &mut [Complex<f64>],
    ph: usize,
    pw: usize,
    row_fft: &Arc<dyn rustfft::Fft<f64>>,
    col_fft: &Arc<dyn rustfft::Fft<f64>>,
    scratch: &mut Vec<Complex<f64>>,
) {
    for row in buf.chunks_exact_mut(pw) {
        row_fft.process(row);
    }
    // Columns via transpose, FFT rows, transpose back.
    scratch.clear();
    scratch.resize(ph * pw, Complex::default());
    for r in 0..ph {
        for c in 0..pw {
            scratch[c * ph + r] = buf[r * pw + c];
        }
    }
    for col in scratch.chunks_exact_mut(ph) {
        col_fft.process(col);
    }
    for r in 0..ph {
        for c in 0..pw {
            buf[r * pw + c] = scratch[c * ph + r];
        }
    }
}

impl ConvEngine for FftConv {
    fn name(&self) -> &'static str {
        "fft"
    }

    fn forward_layer(
        &self,
        psf: &PsfStack,
        z: usize,
        layer: &[f64],
        height: usize,
        width: usize,
        out: &mut [f64],
    ) {
        let nnum = psf.nnum();
        let (kh, kw) = (psf.kh(), psf.kw());
        let (ch, cw) = psf.center();
        let (ph, pw) = padded_dims(height, width, kh, kw);
        let (row_f, col_f, row_i, col_i) = self.plans(ph, pw);
        let mut scratch = Vec::new();
        let mut spectrum = vec![Complex::default(); ph * pw];
        let mut work = vec![Complex::default(); ph * pw];
        let mut kbuf = vec![Complex::default(); ph * pw];

        for a in 0..nnum {
            for b in 0..nnum {
                // Lattice-masked layer, zero padded.
                work.iter_mut().for_each(|v| *v = Complex::default());
                let mut any = false;
                for p in (a..height).step_by(nnum) {
                    for q in (b..width).step_by(nnum) {
                        let v = layer[p * width + q];
                        if v != 0.0 {
                            work[p * pw + q] = Complex::new(v, 0.0);
                            any = true;
                        }
                    }
                }
                if !any {
                    continue;
                }
                fft2_in_place(&mut work, ph, pw, &row_f, &col_f, &mut scratch);

                kbuf.iter_mut().for_each(|v| *v = Complex::default());
                let kernel = psf.kernel(z, a, b);
                for i in 0..kh {
                    for j in 0..kw {
                        kbuf[i * pw + j] = Complex::new(kernel[i * kw + j], 0.0);
                    }
                }
                fft2_in_place(&mut kbuf, ph, pw, &row_f, &col_f, &mut scratch);

                for (acc, (x, k)) in spectrum.iter_mut().zip(work.iter().zip(&kbuf)) {
                    *acc += x * k;
                }
            }
        }

        fft2_in_place(&mut spectrum, ph, pw, &row_i, &col_i, &mut scratch);
        let norm = 1.0 / (ph * pw) as f64;
        // Full linear convolution sits at offset 0; "same" crop starts at the
        // kernel center.
        for s in 0..height {
            for t in 0..width {
                out[s * width + t] += spectrum[(s + ch) * pw + (t + cw)].re * norm;
            }
        }
    }

    fn backward_layer(
        &self,
        psf: &PsfStack,
        z: usize,
        image: &[f64],
        height: usize,
        width: usize,
        out: &mut [f64],
    ) {
        let nnum = psf.nnum();
        let (kh, kw) = (psf.kh(), psf.kw());
        let (ch, cw) = psf.center();
        let (ph, pw) = padded_dims(height, width, kh, kw);
        let (row_f, col_f, row_i, col_i) = self.plans(ph, pw);
        let mut scratch = Vec::new();

        let mut img_spec = vec![Complex::default(); ph * pw];
        for s in 0..height {
            for t in 0..width {
                img_spec[s * pw + t] = Complex::new(image[s * width + t], 0.0);
            }
        }
        fft2_in_place(&mut img_spec, ph, pw, &row_f, &col_f, &mut scratch);

        let norm = 1.0 / (ph * pw) as f64;
        let mut kbuf = vec![Complex::default(); ph * pw];
        let mut corr = vec![Complex::default(); ph * pw];
        for a in 0..nnum {
            for b in 0..nnum {
                // Correlation = convolution with the flipped kernel; for odd
                // kernels the "same" crop offset is again the center.
                kbuf.iter_mut().for_each(|v| *v = Complex::default());
                let kernel = psf.kernel(z, a, b);
                for i in 0..kh {
                    for j in 0..kw {
                        kbuf[i * pw + j] =
                            Complex::new(kernel[(kh - 1 - i) * kw + (kw - 1 - j)], 0.0);
                    }
                }
                fft2_in_place(&mut kbuf, ph, pw, &row_f, &col_f, &mut scratch);
                for (c, (x, k)) in corr.iter_mut().zip(img_spec.iter().zip(&kbuf)) {
                    *c = x * k;
                }
                fft2_in_place(&mut corr, ph, pw, &row_i, &col_i, &mut scratch);

                for p in (a..height).step_by(nnum) {
                    for q in (b..width).step_by(nnum) {
                        out[p * width + q] += corr[(p + ch) * pw + (q + cw)].re * norm;
                    }
                }
            }
        }
    }
}
