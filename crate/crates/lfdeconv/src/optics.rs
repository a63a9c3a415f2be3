//! Optical parameters and the spectral-geometry quantities derived from them.
//!
//! The DCT-entropy metric only looks at coefficients the optical system can
//! actually resolve. That band is a triangular low-index region of the DCT
//! plane whose extents follow from the virtual-pixel sampling pitch and the
//! light-field resolution limit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical description of the light-field acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticsParams {
    /// Emission wavelength λ in micrometers.
    pub wavelength_um: f64,
    /// Numerical aperture of the objective.
    pub na: f64,
    /// Microlens pitch in micrometers.
    pub mla_pitch_um: f64,
    /// Objective magnification.
    pub magnification: f64,
    /// Virtual pixels per microlens per axis; odd so the shift-variant
    /// lattice has a well-defined center.
    pub nnum: usize,
}

impl OpticsParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("wavelength_um", self.wavelength_um),
            ("na", self.na),
            ("mla_pitch_um", self.mla_pitch_um),
            ("magnification", self.magnification),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("must be > 0, got {v}")));
            }
        }
        if self.na > 1.6 {
            return Err(Error::invalid(
                "na",
                format!("{} exceeds 1.6, outside the range of immersion objectives", self.na),
            ));
        }
        if self.nnum == 0 {
            return Err(Error::invalid("nnum", "must be >= 1"));
        }
        if self.nnum % 2 == 0 {
            return Err(Error::invalid(
                "nnum",
                format!("{} is even; nnum must be odd", self.nnum),
            ));
        }
        Ok(())
    }
}

/// Object-space sampling pitch of one virtual pixel: `d_ML / (Q · Nnum)`.
pub fn sample_pitch(params: &OpticsParams) -> f64 {
    params.mla_pitch_um / (params.magnification * params.nnum as f64)
}

/// Resolution limit for the light-field PSF: `1.22 · λ · Nnum / NA`.
///
/// At `Nnum = 1` this is the classical Airy unit.
pub fn resolution_limit(params: &OpticsParams) -> f64 {
    1.22 * params.wavelength_um * params.nnum as f64 / params.na
}

/// Triangular low-frequency DCT region the optics can resolve.
///
/// Member tuples are `(u, v)` with `u` a column-frequency index (bounded by
/// `x_s`, which comes from the image width) and `v` a row-frequency index
/// (bounded by `y_s`, from the height). The triangle is the under-diagonal
/// set `u·y_s + v·x_s < x_s·y_s`, so its size matches `g_s = x_s·y_s / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CutoffRegion {
    /// Region width in DCT indices, from the image width.
    pub x_s: usize,
    /// Region height in DCT indices, from the image height.
    pub y_s: usize,
    /// Region size `x_s · y_s / 2`.
    pub g_s: f64,
    /// Lattice points inside the triangle, in u-major order.
    pub members: Vec<(usize, usize)>,
    /// Cutoff position per axis (width, height); informational only, the
    /// region itself is fully determined by `x_s` and `y_s`.
    pub cutoff_position_p: (f64, f64),
    /// Image dims (`height`, `width`) the region was built for.
    pub image_dims: (usize, usize),
}

impl CutoffRegion {
    pub fn contains(&self, u: usize, v: usize) -> bool {
        u * self.y_s + v * self.x_s < self.x_s * self.y_s
    }
}

/// Builds the cutoff region for an `height_m x width_n` image.
///
/// The real-valued extents are rounded up and clamped to the image bounds so
/// no resolvable frequency is excluded.
pub fn cutoff_region(params: &OpticsParams, height_m: usize, width_n: usize) -> Result<CutoffRegion> {
    params.validate()?;
    if height_m < 2 || width_n < 2 {
        return Err(Error::invalid(
            "image dims",
            format!("cutoff region needs M, N >= 2, got {height_m}x{width_n}"),
        ));
    }
    let pitch = sample_pitch(params);
    let d_psf = resolution_limit(params);

    let x_s = ((pitch * width_n as f64 / d_psf).ceil() as usize).clamp(1, width_n);
    let y_s = ((pitch * height_m as f64 / d_psf).ceil() as usize).clamp(1, height_m);
    let g_s = (x_s * y_s) as f64 / 2.0;

    let mut members = Vec::with_capacity(x_s * y_s / 2 + x_s + y_s);
    for u in 0..x_s {
        for v in 0..y_s {
            if u * y_s + v * x_s < x_s * y_s {
                members.push((u, v));
            }
        }
    }

    let p_ratio = d_psf / pitch;
    Ok(CutoffRegion {
        x_s,
        y_s,
        g_s,
        members,
        cutoff_position_p: (p_ratio * width_n as f64, p_ratio * height_m as f64),
        image_dims: (height_m, width_n),
    })
}
