//! Shift-variant light-field forward model and its exact adjoint.
//!
//! A point source at depth `z` and sub-lenslet offset `(a, b) = (p mod nnum,
//! q mod nnum)` responds with kernel `h[z][a][b]`. Forward projection stamps
//! each voxel's kernel into the 2D measurement ("same" convolution, zero
//! padded); backward projection is the exact adjoint, gathering the same
//! weights back into the volume. Both are evaluated per `(z, a, b)` class,
//! which is also the unit of worker parallelism.

pub mod accum;
pub mod conv;

use crate::error::{Error, Result};
use conv::ConvEngine;

/// 3D reconstruction target, z-major row-major storage, nonnegative values.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    nz: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Volume {
    pub fn new(nz: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if nz == 0 || height == 0 || width == 0 {
            return Err(Error::invalid("volume", "all dimensions must be >= 1"));
        }
        if data.len() != nz * height * width {
            return Err(Error::DimensionMismatch {
                context: "Volume::new",
                expected: format!("{} values", nz * height * width),
                found: format!("{}", data.len()),
            });
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid("volume", format!("non-finite value {v}")));
        }
        Ok(Self {
            nz,
            height,
            width,
            data,
        })
    }

    pub fn zeros(nz: usize, height: usize, width: usize) -> Self {
        Self {
            nz,
            height,
            width,
            data: vec![0.0; nz * height * width],
        }
    }

    pub fn filled(nz: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            nz,
            height,
            width,
            data: vec![value; nz * height * width],
        }
    }

    pub fn nz(&self) -> usize {
        self.nz
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn layer(&self, z: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[z * n..(z + 1) * n]
    }

    pub fn layer_mut(&mut self, z: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[z * n..(z + 1) * n]
    }

    pub fn get(&self, z: usize, p: usize, q: usize) -> f64 {
        self.data[(z * self.height + p) * self.width + q]
    }

    pub fn set(&mut self, z: usize, p: usize, q: usize, v: f64) {
        self.data[(z * self.height + p) * self.width + q] = v;
    }

    /// RL inputs must be nonnegative.
    pub fn ensure_nonnegative(&self, context: &'static str) -> Result<()> {
        if self.data.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid(context, "volume contains negative values"));
        }
        Ok(())
    }
}

/// 2D rectified light-field measurement; lateral dims are whole lenslets.
#[derive(Debug, Clone, PartialEq)]
pub struct LightFieldImage {
    height: usize,
    width: usize,
    nnum: usize,
    data: Vec<f64>,
}

impl LightFieldImage {
    pub fn new(height: usize, width: usize, nnum: usize, data: Vec<f64>) -> Result<Self> {
        if nnum == 0 {
            return Err(Error::invalid("nnum", "must be >= 1"));
        }
        if height == 0 || width == 0 || height % nnum != 0 || width % nnum != 0 {
            return Err(Error::invalid(
                "light field image",
                format!("dims {height}x{width} must be positive multiples of nnum={nnum}"),
            ));
        }
        if data.len() != height * width {
            return Err(Error::DimensionMismatch {
                context: "LightFieldImage::new",
                expected: format!("{} values", height * width),
                found: format!("{}", data.len()),
            });
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(
                "light field image",
                format!("values must be finite and nonnegative, found {v}"),
            ));
        }
        Ok(Self {
            height,
            width,
            nnum,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, nnum: usize) -> Self {
        Self {
            height,
            width,
            nnum,
            data: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn nnum(&self) -> usize {
        self.nnum
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, s: usize, t: usize) -> f64 {
        self.data[s * self.width + t]
    }
}

/// Shift-variant kernel bank `h[z][a][b]`, each an odd-sized `kh x kw` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfStack {
    nz: usize,
    nnum: usize,
    kh: usize,
    kw: usize,
    kernels: Vec<f64>,
}

impl PsfStack {
    pub fn new(nz: usize, nnum: usize, kh: usize, kw: usize, kernels: Vec<f64>) -> Result<Self> {
        if nz == 0 || nnum == 0 {
            return Err(Error::invalid("psf", "nz and nnum must be >= 1"));
        }
        if kh % 2 == 0 || kw % 2 == 0 || kh == 0 || kw == 0 {
            return Err(Error::invalid(
                "psf",
                format!("kernel dims {kh}x{kw} must be odd"),
            ));
        }
        let expect = nz * nnum * nnum * kh * kw;
        if kernels.len() != expect {
            return Err(Error::DimensionMismatch {
                context: "PsfStack::new",
                expected: format!("{expect} values"),
                found: format!("{}", kernels.len()),
            });
        }
        if let Some(v) = kernels.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(
                "psf",
                format!("kernel values must be finite and nonnegative, found {v}"),
            ));
        }
        let stack = Self {
            nz,
            nnum,
            kh,
            kw,
            kernels,
        };
        for z in 0..nz {
            let any_nonzero = (0..nnum * nnum)
                .any(|ab| stack.kernel(z, ab / nnum, ab % nnum).iter().any(|&v| v > 0.0));
            if !any_nonzero {
                return Err(Error::invalid(
                    "psf",
                    format!("layer {z} has no nonzero kernel"),
                ));
            }
        }
        Ok(stack)
    }

    pub fn nz(&self) -> usize {
        self.nz
    }
    pub fn nnum(&self) -> usize {
        self.nnum
    }
    pub fn kh(&self) -> usize {
        self.kh
    }
    pub fn kw(&self) -> usize {
        self.kw
    }

    /// Kernel center offsets.
    pub fn center(&self) -> (usize, usize) {
        ((self.kh - 1) / 2, (self.kw - 1) / 2)
    }

    pub fn kernel(&self, z: usize, a: usize, b: usize) -> &[f64] {
        let k = self.kh * self.kw;
        let idx = (z * self.nnum + a) * self.nnum + b;
        &self.kernels[idx * k..(idx + 1) * k]
    }

    pub fn kernels(&self) -> &[f64] {
        &self.kernels
    }

    /// Bytes one layer's kernels occupy at the given element size.
    pub fn layer_kernel_bytes(&self, precision: usize) -> usize {
        self.nnum * self.nnum * self.kh * self.kw * precision
    }
}

pub(crate) fn check_geometry(height: usize, width: usize, psf: &PsfStack) -> Result<()> {
    if height % psf.nnum() != 0 || width % psf.nnum() != 0 {
        return Err(Error::DimensionMismatch {
            context: "projection",
            expected: format!("lateral dims divisible by nnum={}", psf.nnum()),
            found: format!("{height}x{width}"),
        });
    }
    Ok(())
}

/// Forward projection `H`: volume to light-field measurement.
///
/// Layer contributions are computed in ascending z and combined through the
/// fixed-point accumulator, so the result is identical no matter how layers
/// are later split across workers.
pub fn forward_project(x: &Volume, psf: &PsfStack, engine: &dyn ConvEngine) -> Result<LightFieldImage> {
    if x.nz() != psf.nz() {
        return Err(Error::DimensionMismatch {
            context: "forward_project",
            expected: format!("volume nz = psf nz = {}", psf.nz()),
            found: format!("{}", x.nz()),
        });
    }
    check_geometry(x.height(), x.width(), psf)?;
    x.ensure_nonnegative("forward_project input")?;

    let npix = x.height() * x.width();
    let mut acc = vec![0i128; npix];
    let mut layer_out = vec![0.0f64; npix];
    for z in 0..x.nz() {
        layer_out.iter_mut().for_each(|v| *v = 0.0);
        engine.forward_layer(psf, z, x.layer(z), x.height(), x.width(), &mut layer_out);
        accum::accumulate(&mut acc, &layer_out)?;
    }
    LightFieldImage::new(x.height(), x.width(), psf.nnum(), accum::resolve_nonneg(&acc))
}

/// Backward projection `Hᵀ`: light-field image smeared into a volume.
///
/// Exact adjoint of [`forward_project`] under the standard inner product.
pub fn backward_project(y: &LightFieldImage, psf: &PsfStack, engine: &dyn ConvEngine) -> Result<Volume> {
    check_geometry(y.height(), y.width(), psf)?;
    if y.nnum() != psf.nnum() {
        return Err(Error::DimensionMismatch {
            context: "backward_project",
            expected: format!("nnum {}", psf.nnum()),
            found: format!("{}", y.nnum()),
        });
    }
    let mut out = Volume::zeros(psf.nz(), y.height(), y.width());
    for z in 0..psf.nz() {
        let (h, w) = (y.height(), y.width());
        engine.backward_layer(psf, z, y.data(), h, w, out.layer_mut(z));
    }
    Ok(out)
}

/// RL denominator `Hᵀ(1)`: per-voxel sensitivity of the forward model.
pub fn compute_normalizer(
    psf: &PsfStack,
    height: usize,
    width: usize,
    engine: &dyn ConvEngine,
) -> Result<Volume> {
    check_geometry(height, width, psf)?;
    let ones = LightFieldImage::new(height, width, psf.nnum(), vec![1.0; height * width])?;
    backward_project(&ones, psf, engine)
}
