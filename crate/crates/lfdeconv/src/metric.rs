//! Sharpness metric: orthonormal 2-D DCT and band-limited coefficient entropy.
//!
//! Reconstruction quality is scored on the maximum-intensity z-projection of
//! the current volume estimate. The projection's DCT coefficients inside the
//! optically resolvable cutoff region are normalized against the full
//! spectrum and folded into a Shannon entropy; sharper reconstructions spread
//! energy across resolvable frequencies and score higher, while
//! noise-amplified ones concentrate it and score lower.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lfmodel::Volume;
use crate::optics::CutoffRegion;

/// Dense row-major 2-D image of `f64` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image2D {
    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(
                "image dims",
                format!("height and width must be >= 1, got {height}x{width}"),
            ));
        }
        if data.len() != height * width {
            return Err(Error::DimensionMismatch {
                context: "Image2D::from_vec",
                expected: format!("{} samples ({height}x{width})", height * width),
                found: format!("{}", data.len()),
            });
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid("image data", format!("non-finite sample {v}")));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
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

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

/// Coefficients of the orthonormal 2-D DCT of an image.
///
/// Stored row-major with the row index `u` the vertical frequency (paired
/// with image height) and the column index `v` the horizontal frequency
/// (paired with image width).
#[derive(Debug, Clone, PartialEq)]
pub struct DctCoefficients {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl DctCoefficients {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Coefficient at vertical frequency `u`, horizontal frequency `v`.
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[u * self.width + v]
    }
}

/// Which subset of the cutoff rectangle enters the entropy sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionShape {
    /// Under-diagonal triangle `u·Y_S + v·X_S < X_S·Y_S` (the reference rule).
    Triangle,
    /// Full rectangle `u < X_S, v < Y_S`.
    Rectangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub region_shape: RegionShape,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            region_shape: RegionShape::Triangle,
        }
    }
}

/// Orthonormal DCT-II basis matrix for length `n`: `basis[k][x] =
/// c(k,n)·cos(π(2x+1)k/(2n))` with `c(0,n) = 1/√n`, `c(k,n) = √(2/n)`.
fn dct_basis(n: usize) -> Vec<f64> {
    let mut basis = vec![0.0; n * n];
    let norm0 = 1.0 / (n as f64).sqrt();
    let norm = (2.0 / n as f64).sqrt();
    for k in 0..n {
        let c = if k == 0 { norm0 } else { norm };
        for x in 0..n {
            basis[k * n + x] = c * (std::f64::consts::PI * (2 * x + 1) as f64 * k as f64
                / (2 * n) as f64)
                .cos();
        }
    }
    basis
}

/// Orthonormal 2-D DCT-II via separable basis multiplication.
///
/// `F(u,v) = Σ_x Σ_y f(x,y)·C_u(x,M)·C_v(y,N)` for an `M x N` image. The two
/// matrix products run in a fixed order, so repeated calls on the same input
/// are bit-identical.
///
/// AC rows (`u ≥ 1`) are evaluated against the first-sample-shifted vector
/// `f(x,·) − f(0,·)` — analytically identical because every AC basis row
/// sums to zero, but exactly zero (not merely tiny) whenever the input is
/// constant along the transform axis. A constant image therefore maps to a
/// single DC coefficient with all other outputs exactly `0.0`.
pub fn dct2(img: &Image2D) -> DctCoefficients {
    let (m, n) = (img.height, img.width);
    let bm = dct_basis(m);
    let bn = dct_basis(n);

    // tmp[u][y] = Σ_x bm[u][x] · f[x][y]
    let mut tmp = vec![0.0; m * n];
    for x in 0..m {
        let w = bm[x];
        let row = &img.data[x * n..(x + 1) * n];
        let out = &mut tmp[0..n];
        for y in 0..n {
            out[y] += w * row[y];
        }
    }
    for u in 1..m {
        let out = &mut tmp[u * n..(u + 1) * n];
        // The x = 0 term vanishes exactly under the shift.
        for x in 1..m {
            let w = bm[u * m + x];
            let row = &img.data[x * n..(x + 1) * n];
            for y in 0..n {
                out[y] += w * (row[y] - img.data[y]);
            }
        }
    }

    // F[u][v] = Σ_y tmp[u][y] · bn[v][y]
    let mut data = vec![0.0; m * n];
    for u in 0..m {
        let trow = &tmp[u * n..(u + 1) * n];
        let out = &mut data[u * n..(u + 1) * n];
        let mut acc = 0.0;
        for y in 0..n {
            acc += trow[y] * bn[y];
        }
        out[0] = acc;
        for v in 1..n {
            let brow = &bn[v * n..(v + 1) * n];
            let mut acc = 0.0;
            for y in 1..n {
                acc += (trow[y] - trow[0]) * brow[y];
            }
            out[v] = acc;
        }
    }

    DctCoefficients {
        height: m,
        width: n,
        data,
    }
}

/// Inverse of [`dct2`]; exact up to floating-point round-off because the
/// basis is orthonormal.
pub fn idct2(coeffs: &DctCoefficients) -> Image2D {
    let (m, n) = (coeffs.height, coeffs.width);
    let bm = dct_basis(m);
    let bn = dct_basis(n);

    // tmp[x][v] = Σ_u bm[u][x] · F[u][v]
    let mut tmp = vec![0.0; m * n];
    for x in 0..m {
        for u in 0..m {
            let w = bm[u * m + x];
            if w == 0.0 {
                continue;
            }
            let row = &coeffs.data[u * n..(u + 1) * n];
            let out = &mut tmp[x * n..(x + 1) * n];
            for v in 0..n {
                out[v] += w * row[v];
            }
        }
    }

    // f[x][y] = Σ_v tmp[x][v] · bn[v][y]
    let mut data = vec![0.0; m * n];
    for x in 0..m {
        let trow = &tmp[x * n..(x + 1) * n];
        let out = &mut data[x * n..(x + 1) * n];
        for v in 0..n {
            let w = trow[v];
            if w == 0.0 {
                continue;
            }
            let brow = &bn[v * n..(v + 1) * n];
            for y in 0..n {
                out[y] += w * brow[y];
            }
        }
    }

    Image2D {
        height: m,
        width: n,
        data,
    }
}

/// Kahan-compensated accumulator; summation order fixed by the caller.
struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    fn new() -> Self {
        Self { sum: 0.0, c: 0.0 }
    }

    fn add(&mut self, v: f64) {
        let y = v - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }
}

/// Shannon entropy `Σ −w·log2(w)` of nonnegative weights, with `0·log2(0)`
/// taken as 0. The weights are used as given; no normalization is applied.
pub fn shannon_entropy(weights: &[f64]) -> Result<f64> {
    let mut acc = Kahan::new();
    for &w in weights {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::invalid(
                "weights",
                format!("entropy weights must be finite and nonnegative, got {w}"),
            ));
        }
        if w > 0.0 {
            acc.add(-w * w.log2());
        }
    }
    Ok(acc.sum)
}

/// Maximum-intensity projection along z.
///
/// `max` over finite values is exactly associative, so the result does not
/// depend on how layers are grouped — parallel reductions agree bitwise with
/// this sequential reference.
pub fn max_project_z(vol: &Volume) -> Image2D {
    let (h, w) = (vol.height(), vol.width());
    let mut data = vol.layer(0).to_vec();
    for z in 1..vol.nz() {
        for (d, &v) in data.iter_mut().zip(vol.layer(z)) {
            *d = d.max(v);
        }
    }
    Image2D {
        height: h,
        width: w,
        data,
    }
}

/// Band-limited DCT entropy of an image (the iteration-selection metric).
///
/// With `F = dct2(img)` and `L` the l2 norm of the full coefficient matrix,
/// each region member `(u, v)` — `u` the horizontal frequency below `X_S`,
/// `v` the vertical frequency below `Y_S`, so it reads `F[row v][col u]` —
/// contributes `−w·log2(w)` where `w = |F(v,u)|/L`. The sum runs u-major with
/// Kahan compensation and is scaled by `2/(X_S·Y_S)`. An all-zero image has
/// entropy 0 by convention.
pub fn dct_entropy(img: &Image2D, region: &CutoffRegion, config: &MetricConfig) -> Result<f64> {
    if region.image_dims != (img.height, img.width) {
        return Err(Error::DimensionMismatch {
            context: "dct_entropy cutoff region",
            expected: format!("{}x{}", region.image_dims.0, region.image_dims.1),
            found: format!("{}x{}", img.height, img.width),
        });
    }

    let coeffs = dct2(img);

    let mut norm_acc = Kahan::new();
    for &f in &coeffs.data {
        norm_acc.add(f * f);
    }
    let l2 = norm_acc.sum.sqrt();
    if l2 == 0.0 {
        return Ok(0.0);
    }

    let mut acc = Kahan::new();
    let mut add_member = |u: usize, v: usize| {
        let w = coeffs.get(v, u).abs() / l2;
        if w > 0.0 {
            acc.add(-w * w.log2());
        }
    };
    match config.region_shape {
        RegionShape::Triangle => {
            for &(u, v) in &region.members {
                add_member(u, v);
            }
        }
        RegionShape::Rectangle => {
            for u in 0..region.x_s {
                for v in 0..region.y_s {
                    add_member(u, v);
                }
            }
        }
    }

    Ok(2.0 / (region.x_s * region.y_s) as f64 * acc.sum)
}
