//! Synthetic data generators: sheared-Gaussian PSF stacks, hard-sphere bead
//! volumes, and Poisson measurement noise.
//!
//! The PSF is a deliberately simple stand-in for a wave-optics model: a
//! Gaussian whose width grows away from the focal layer and whose center
//! shifts with the sub-aperture offset `(a, b)` — enough parallax and depth
//! variance to exercise every shift-variant code path while staying
//! analytically checkable (symmetry, moments, normalization).
//!
//! Every generator is a pure function of its spec and seed, so fixtures are
//! reproducible across runs and hosts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lfmodel::{LightFieldImage, PsfStack, Volume};

/// Hard-sphere bead phantom description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub nz: usize,
    pub height: usize,
    pub width: usize,
    pub bead_count: usize,
    pub bead_radius_px: f64,
    /// RNG seed; the same seed reproduces the volume exactly.
    pub seed: u64,
    /// Voxel value inside a bead (expected photon count at peak).
    pub photon_scale: f64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nz == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::invalid("phantom spec", "all dimensions must be >= 1"));
        }
        if !(self.bead_radius_px > 0.0) || !self.bead_radius_px.is_finite() {
            return Err(Error::invalid("bead_radius_px", "must be positive and finite"));
        }
        if !(self.photon_scale > 0.0) || !self.photon_scale.is_finite() {
            return Err(Error::invalid("photon_scale", "must be positive and finite"));
        }
        Ok(())
    }
}

/// Parameters of the synthetic Gaussian PSF stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPsfSpec {
    pub nz: usize,
    pub nnum: usize,
    pub kh: usize,
    pub kw: usize,
    /// Gaussian width (px) at the focal layer.
    pub sigma0: f64,
    /// Width growth per layer of defocus: `σ(z) = sigma0 + sigma_slope·|z − z_c|`.
    pub sigma_slope: f64,
    /// Lateral kernel-center shift per unit sub-aperture offset per layer of
    /// defocus (px) — the parallax surrogate.
    pub shear: f64,
}

impl SyntheticPsfSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nz == 0 {
            return Err(Error::invalid("nz", "must be >= 1"));
        }
        if self.nnum == 0 || self.nnum % 2 == 0 {
            return Err(Error::invalid("nnum", "must be odd and >= 1"));
        }
        if self.kh == 0 || self.kh % 2 == 0 || self.kw == 0 || self.kw % 2 == 0 {
            return Err(Error::invalid("kernel dims", "kh and kw must be odd and >= 1"));
        }
        if !(self.sigma0 > 0.0) || !self.sigma0.is_finite() {
            return Err(Error::invalid("sigma0", "must be positive and finite"));
        }
        if self.sigma_slope < 0.0 || !self.sigma_slope.is_finite() {
            return Err(Error::invalid("sigma_slope", "must be nonnegative and finite"));
        }
        if !self.shear.is_finite() {
            return Err(Error::invalid("shear", "must be finite"));
        }
        Ok(())
    }
}

/// Discrete 1-D Gaussian sum `Σ exp(−(i−center)²/(2σ²))` over `lo..hi`.
fn gaussian_line_sum(center: f64, sigma: f64, lo: i64, hi: i64) -> f64 {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut s = 0.0;
    for i in lo..hi {
        let d = i as f64 - center;
        s += (-d * d * inv).exp();
    }
    s
}

/// Generates the sheared-Gaussian PSF stack.
///
/// For layer `z` and sub-aperture `(a, b)`, the kernel is a Gaussian of
/// width `σ(z) = sigma0 + sigma_slope·|z − z_c|` centered at the kernel
/// midpoint plus `shear·(z − z_c)·((a,b) − (c,c))/nnum`, where
/// `z_c = (nz−1)/2` and `c = (nnum−1)/2`. Each per-z group is normalized so
/// the values of all its kernels sum to exactly one unit of energy.
///
/// A spec whose shift or width pushes more than 1% of any kernel's mass
/// outside the `kh x kw` support is rejected: truncating that much energy
/// would silently break the adjoint/normalization properties downstream.
pub fn gen_psf(spec: &SyntheticPsfSpec) -> Result<PsfStack> {
    spec.validate()?;
    let SyntheticPsfSpec { nz, nnum, kh, kw, sigma0, sigma_slope, shear } = *spec;
    let z_c = (nz as f64 - 1.0) / 2.0;
    let c = (nnum as f64 - 1.0) / 2.0;
    let ch = (kh as f64 - 1.0) / 2.0;
    let cw = (kw as f64 - 1.0) / 2.0;

    let mut kernels = vec![0.0f64; nz * nnum * nnum * kh * kw];
    let ksize = kh * kw;

    for z in 0..nz {
        let dz = z as f64 - z_c;
        let sigma = sigma0 + sigma_slope * dz.abs();
        for a in 0..nnum {
            for b in 0..nnum {
                let cy = ch + shear * dz * (a as f64 - c) / nnum as f64;
                let cx = cw + shear * dz * (b as f64 - c) / nnum as f64;

                // Mass check against a window wide enough to hold the whole
                // discrete Gaussian; separability makes the 2-D sums exact
                // products of 1-D sums.
                let reach = (8.0 * sigma).ceil() as i64;
                let sy_in = gaussian_line_sum(cy, sigma, 0, kh as i64);
                let sx_in = gaussian_line_sum(cx, sigma, 0, kw as i64);
                let sy_tot = gaussian_line_sum(
                    cy,
                    sigma,
                    (cy.floor() as i64 - reach).min(0),
                    (cy.ceil() as i64 + reach + 1).max(kh as i64),
                );
                let sx_tot = gaussian_line_sum(
                    cx,
                    sigma,
                    (cx.floor() as i64 - reach).min(0),
                    (cx.ceil() as i64 + reach + 1).max(kw as i64),
                );
                let kept = (sy_in * sx_in) / (sy_tot * sx_tot);
                if kept < 0.99 {
                    return Err(Error::invalid(
                        "psf spec",
                        format!(
                            "kernel (z={z}, a={a}, b={b}) loses {:.2}% of its mass outside \
                             the {kh}x{kw} support; enlarge the kernel or reduce shear/sigma",
                            (1.0 - kept) * 100.0
                        ),
                    ));
                }

                let inv = 1.0 / (2.0 * sigma * sigma);
                let base = ((z * nnum + a) * nnum + b) * ksize;
                for i in 0..kh {
                    let dy = i as f64 - cy;
                    for j in 0..kw {
                        let dx = j as f64 - cx;
                        kernels[base + i * kw + j] = (-(dy * dy + dx * dx) * inv).exp();
                    }
                }
            }
        }
    }

    // Per-z energy normalization: Σ_{a,b,pixels} h[z][a][b] = 1.
    for z in 0..nz {
        let group = &mut kernels[z * nnum * nnum * ksize..(z + 1) * nnum * nnum * ksize];
        let sum: f64 = group.iter().sum();
        for v in group {
            *v /= sum;
        }
    }

    PsfStack::new(nz, nnum, kh, kw, kernels)
}

/// Places `bead_count` non-overlapping hard spheres at seeded-random
/// positions; voxels inside a sphere get `photon_scale`, all others 0.
///
/// Sphere centers sit on the voxel grid with enough margin that every bead
/// lies entirely inside the volume. Placement retries a bounded number of
/// times per bead and errors out if the volume cannot accommodate the
/// requested count without overlap.
pub fn gen_bead_volume(spec: &PhantomSpec) -> Result<Volume> {
    spec.validate()?;
    let mut volume = Volume::zeros(spec.nz, spec.height, spec.width);
    if spec.bead_count == 0 {
        return Ok(volume);
    }

    let r = spec.bead_radius_px;
    let margin = r.ceil() as usize;
    let range_of = |dim: usize, axis: &'static str| -> Result<(usize, usize)> {
        if dim < 2 * margin + 1 {
            return Err(Error::invalid(
                "phantom spec",
                format!("a bead of radius {r} px does not fit along the {axis} axis ({dim} voxels)"),
            ));
        }
        Ok((margin, dim - 1 - margin))
    };
    let (z_lo, z_hi) = range_of(spec.nz, "z")?;
    let (y_lo, y_hi) = range_of(spec.height, "y")?;
    let (x_lo, x_hi) = range_of(spec.width, "x")?;

    const ATTEMPTS_PER_BEAD: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut centers: Vec<(usize, usize, usize)> = Vec::with_capacity(spec.bead_count);
    let min_sep_sq = 4.0 * r * r;

    for bead in 0..spec.bead_count {
        let mut placed = false;
        for _ in 0..ATTEMPTS_PER_BEAD {
            let cand = (
                rng.gen_range(z_lo..=z_hi),
                rng.gen_range(y_lo..=y_hi),
                rng.gen_range(x_lo..=x_hi),
            );
            let clashes = centers.iter().any(|&(z, y, x)| {
                let dz = z as f64 - cand.0 as f64;
                let dy = y as f64 - cand.1 as f64;
                let dx = x as f64 - cand.2 as f64;
                // Center distance ≤ 2r could share voxels; require strictly
                // more so the spheres' voxel sets stay disjoint.
                dz * dz + dy * dy + dx * dx <= min_sep_sq
            });
            if !clashes {
                centers.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::invalid(
                "phantom spec",
                format!(
                    "could not place bead {} of {} without overlap after {} attempts; \
                     reduce bead_count or bead_radius_px",
                    bead + 1,
                    spec.bead_count,
                    ATTEMPTS_PER_BEAD
                ),
            ));
        }
    }

    let r_sq = r * r;
    let m = margin as i64;
    let data = volume.data_mut();
    let (h, w) = (spec.height, spec.width);
    for &(cz, cy, cx) in &centers {
        for dz in -m..=m {
            for dy in -m..=m {
                for dx in -m..=m {
                    if (dz * dz + dy * dy + dx * dx) as f64 <= r_sq {
                        let z = (cz as i64 + dz) as usize;
                        let y = (cy as i64 + dy) as usize;
                        let x = (cx as i64 + dx) as usize;
                        data[(z * h + y) * w + x] = spec.photon_scale;
                    }
                }
            }
        }
    }
    Ok(volume)
}

/// Replaces every value with a Poisson draw using the value as its mean.
/// Rejects negative or non-finite inputs; zeros stay exactly zero.
pub fn poisson_counts(values: &[f64], seed: u64) -> Result<Vec<f64>> {
    if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::invalid(
            "poisson input",
            format!("negative or non-finite value {v}; Poisson means must be >= 0"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    values
        .iter()
        .map(|&v| {
            if v == 0.0 {
                Ok(0.0)
            } else if v < 1e-9 {
                // Poisson(λ) for tiny λ is Bernoulli(λ) to within O(λ²).
                // The library sampler's Knuth loop terminates on exp(−λ),
                // which rounds to exactly 1.0 once λ < ~1e-16 and then
                // returns −1; route tiny means around it.
                let u: f64 = rng.gen();
                Ok(if u < v { 1.0 } else { 0.0 })
            } else {
                let dist = Poisson::new(v).map_err(|e| {
                    Error::invalid("poisson input", format!("mean {v} rejected: {e}"))
                })?;
                Ok(dist.sample(&mut rng))
            }
        })
        .collect()
}

/// Seeded per-pixel Poisson noise on a light-field measurement.
pub fn add_poisson_noise(image: &LightFieldImage, seed: u64) -> Result<LightFieldImage> {
    let noisy = poisson_counts(image.data(), seed)?;
    LightFieldImage::new(image.height(), image.width(), image.nnum(), noisy)
}
