//! Fixed-point accumulation for reduction results that must not depend on
//! how work was partitioned.
//!
//! Summing `f64` values is not associative, so a sum split across workers
//! generally differs bit-for-bit from the same sum done serially. Layer
//! contributions to the forward-projected image are therefore quantized to a
//! fixed binary grid (LSB = 2^-70) and summed in 128-bit integers. Integer
//! addition is exact, so any grouping of the addends — one worker or many —
//! yields the same total, which is rounded back to `f64` exactly once.
//!
//! The representable window is generous for photon-count data: addends up to
//! 2^45 in magnitude, headroom for 4096 addends per pixel, and an absolute
//! quantization floor of 2^-71 per addend.

use crate::error::{Error, Result};

/// Exponent of the accumulation grid spacing.
pub const LSB_EXP: i32 = -70;

/// Largest addend magnitude the accumulator accepts.
pub const MAX_ABS: f64 = (1u64 << 45) as f64;

const SCALE: f64 = // 2^70
    (1u64 << 35) as f64 * (1u64 << 35) as f64;
const INV_SCALE: f64 = 1.0 / SCALE;

/// Quantizes one addend onto the grid. Scaling by a power of two is exact in
/// IEEE arithmetic, so the only rounding is the final round-to-integer, which
/// is identical no matter where the call happens.
#[inline]
pub fn quantize(v: f64) -> Result<i128> {
    if !v.is_finite() || v.abs() >= MAX_ABS {
        return Err(Error::AccumulatorRange { value: v });
    }
    Ok((v * SCALE).round() as i128)
}

/// `dst[i] += quantize(src[i])` for all pixels.
pub fn accumulate(dst: &mut [i128], src: &[f64]) -> Result<()> {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &s) in dst.iter_mut().zip(src) {
        let q = quantize(s)?;
        *d = d
            .checked_add(q)
            .ok_or(Error::AccumulatorRange { value: s })?;
    }
    Ok(())
}

/// Exact merge of two partial accumulators.
pub fn merge(dst: &mut [i128], src: &[i128]) -> Result<()> {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = d.checked_add(s).ok_or(Error::AccumulatorRange {
            value: s as f64 * INV_SCALE,
        })?;
    }
    Ok(())
}

/// Rounds the exact integer totals back to `f64`.
pub fn resolve(acc: &[i128]) -> Vec<f64> {
    acc.iter().map(|&q| q as f64 * INV_SCALE).collect()
}

/// [`resolve`] for physically nonnegative totals: clamps the sub-LSB
/// negatives that FFT-based convolution round-off can leave where the true
/// value is zero. Every forward-projection path must resolve through this
/// one function so partitioned and serial runs stay bit-identical.
pub fn resolve_nonneg(acc: &[i128]) -> Vec<f64> {
    acc.iter()
        .map(|&q| if q <= 0 { 0.0 } else { q as f64 * INV_SCALE })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_is_exact_for_representable_values() {
        // 1.5 = 3 * 2^-1 sits on the grid exactly.
        assert_eq!(quantize(1.5).unwrap(), 3 << 69);
        assert_eq!(quantize(0.0).unwrap(), 0);
        assert_eq!(quantize(-2.0).unwrap(), -(1 << 71));
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(quantize(f64::NAN).is_err());
        assert!(quantize(f64::INFINITY).is_err());
        assert!(quantize(MAX_ABS).is_err());
        assert!(quantize(1e300).is_err());
    }

    #[test]
    fn grouping_invariance() {
        // The whole point: any split of the addend list gives the same bits.
        let vals: Vec<f64> = (0..64)
            .map(|i| (i as f64 * 0.7318).sin().abs() * 123.456 + 1e-9)
            .collect();

        let serial = {
            let mut acc = vec![0i128; 1];
            for &v in &vals {
                accumulate(&mut acc, &[v]).unwrap();
            }
            resolve(&acc)[0]
        };

        for split in [1usize, 3, 7, 13, 64] {
            let mut total = vec![0i128; 1];
            for chunk in vals.chunks(split) {
                let mut part = vec![0i128; 1];
                for &v in chunk {
                    accumulate(&mut part, &[v]).unwrap();
                }
                merge(&mut total, &part).unwrap();
            }
            let got = resolve(&total)[0];
            assert_eq!(got.to_bits(), serial.to_bits(), "split {split}");
        }
    }

    #[test]
    fn resolve_nonneg_clamps_roundoff() {
        let acc = [quantize(-1e-19).unwrap(), 0, quantize(2.5).unwrap()];
        assert_eq!(resolve_nonneg(&acc), vec![0.0, 0.0, 2.5]);
    }

    #[test]
    fn close_to_plain_sum() {
        let vals = [0.1, 2.5, 300.0, 4e-7, 81.25];
        let mut acc = vec![0i128; 1];
        for &v in &vals {
            accumulate(&mut acc, &[v]).unwrap();
        }
        let exact: f64 = vals.iter().sum();
        assert!((resolve(&acc)[0] - exact).abs() < 1e-12);
    }
}
