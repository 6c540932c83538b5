//! Radix-2 FFT for real 2D patches.
//!
//! Forward transforms store the Hermitian-redundant half of the spectrum:
//! a (h, w) real patch maps to h * (w/2 + 1) complex bins, row index k1 in
//! 0..h, column index k2 in 0..=w/2. The inverse reconstructs the implicit
//! half by conjugate symmetry, S[k1, k2] = conj(S[(h-k1)%h, (w-k2)%w]).
//! Both dimensions must be powers of two.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Iterative radix-2 Cooley-Tukey with bit-reversal permutation.
/// `inverse` omits the 1/n normalization; callers divide once at the end.
pub fn fft1d_inplace<T: Scalar>(buf: &mut [Complex<T>], inverse: bool) {
    let n = buf.len();
    assert!(n.is_power_of_two(), "fft length {} not a power of two", n);
    if n <= 1 {
        return;
    }
    // bit reversal
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = (i.reverse_bits() >> (usize::BITS - bits)) as usize;
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * std::f64::consts::PI / len as f64;
        let wlen = Complex::new(T::c(ang.cos()), T::c(ang.sin()));
        for start in (0..n).step_by(len) {
            let mut w = Complex::new(T::one(), T::zero());
            for k in 0..len / 2 {
                let a = buf[start + k];
                let b = buf[start + k + len / 2] * w;
                buf[start + k] = a + b;
                buf[start + k + len / 2] = a - b;
                w = w * wlen;
            }
        }
        len <<= 1;
    }
}

fn check_pow2(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || !h.is_power_of_two() || !w.is_power_of_two() {
        return Err(Error::invalid(
            "fft2",
            format!("patch dims {}x{} must be non-zero powers of two", h, w),
        ));
    }
    Ok(())
}

/// Forward 2D transform of a real (h, w) patch. Returns the half spectrum,
/// h rows by (w/2 + 1) columns, unnormalized.
pub fn fft2<T: Scalar>(patch: &[T], h: usize, w: usize) -> Result<Vec<Complex<T>>> {
    check_pow2(h, w)?;
    if patch.len() != h * w {
        return Err(Error::shape("fft2", format!("{}x{}", h, w), patch.len().to_string()));
    }
    let mut full: Vec<Complex<T>> = patch.iter().map(|&v| Complex::new(v, T::zero())).collect();
    fft2_full_inplace(&mut full, h, w, false);
    let wh = w / 2 + 1;
    let mut half = Vec::with_capacity(h * wh);
    for k1 in 0..h {
        for k2 in 0..wh {
            half.push(full[k1 * w + k2]);
        }
    }
    Ok(half)
}

/// Inverse of [`fft2`]: reconstructs the full spectrum by Hermitian
/// symmetry, applies the inverse transform and the 1/(h*w) normalization,
/// and returns the real part.
pub fn ifft2<T: Scalar>(spectrum: &[Complex<T>], h: usize, w: usize) -> Result<Vec<T>> {
    check_pow2(h, w)?;
    let wh = w / 2 + 1;
    if spectrum.len() != h * wh {
        return Err(Error::shape("ifft2", format!("{}x{}", h, wh), spectrum.len().to_string()));
    }
    let mut full = vec![Complex::new(T::zero(), T::zero()); h * w];
    for k1 in 0..h {
        for k2 in 0..wh {
            full[k1 * w + k2] = spectrum[k1 * wh + k2];
        }
        for k2 in wh..w {
            let m1 = (h - k1) % h;
            let m2 = w - k2;
            full[k1 * w + k2] = spectrum[m1 * wh + m2].conj();
        }
    }
    fft2_full_inplace(&mut full, h, w, true);
    let norm = T::one() / T::c((h * w) as f64);
    Ok(full.iter().map(|c| c.re * norm).collect())
}

/// Full complex 2D transform: rows then columns, in place.
pub(crate) fn fft2_full_inplace<T: Scalar>(buf: &mut [Complex<T>], h: usize, w: usize, inverse: bool) {
    for row in buf.chunks_mut(w) {
        fft1d_inplace(row, inverse);
    }
    let mut col = vec![Complex::new(T::zero(), T::zero()); h];
    for k2 in 0..w {
        for k1 in 0..h {
            col[k1] = buf[k1 * w + k2];
        }
        fft1d_inplace(&mut col, inverse);
        for k1 in 0..h {
            buf[k1 * w + k2] = col[k1];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Direct O(n^2) DFT over the full spectrum.
    fn naive_dft2(patch: &[f64], h: usize, w: usize) -> Vec<Complex<f64>> {
        let mut out = vec![Complex::new(0.0, 0.0); h * w];
        for k1 in 0..h {
            for k2 in 0..w {
                let mut acc = Complex::new(0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let ang = -2.0 * std::f64::consts::PI
                            * (k1 as f64 * y as f64 / h as f64 + k2 as f64 * x as f64 / w as f64);
                        acc += Complex::new(ang.cos(), ang.sin()) * patch[y * w + x];
                    }
                }
                out[k1 * w + k2] = acc;
            }
        }
        out
    }

    #[test]
    fn constant_patch_is_dc_only() {
        let c = 2.5f64;
        let spec = fft2(&vec![c; 16], 4, 4).unwrap();
        assert!((spec[0].re - c * 16.0).abs() < 1e-9);
        assert!(spec[0].im.abs() < 1e-9);
        for (i, bin) in spec.iter().enumerate().skip(1) {
            assert!(bin.norm() < 1e-9, "bin {} = {:?}", i, bin);
        }
    }

    #[test]
    fn roundtrip_random_8x8() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let patch: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let spec = fft2(&patch, 8, 8).unwrap();
        let back = ifft2(&spec, 8, 8).unwrap();
        let dev = patch.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-6, "roundtrip deviation {}", dev);
    }

    #[test]
    fn matches_naive_dft_on_4x4_and_8x8() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for &(h, w) in &[(4usize, 4usize), (8, 8)] {
            let patch: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let spec = fft2(&patch, h, w).unwrap();
            let full = naive_dft2(&patch, h, w);
            let wh = w / 2 + 1;
            for k1 in 0..h {
                for k2 in 0..wh {
                    let a = spec[k1 * wh + k2];
                    let b = full[k1 * w + k2];
                    assert!((a - b).norm() < 1e-6, "({}, {}): {:?} vs {:?}", k1, k2, a, b);
                }
            }
        }
    }

    #[test]
    fn parseval_identity_half_spectrum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let (h, w) = (8usize, 8usize);
        let patch: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let spec = fft2(&patch, h, w).unwrap();
        let space: f64 = patch.iter().map(|v| v * v).sum();
        let wh = w / 2 + 1;
        let mut freq = 0.0;
        for k1 in 0..h {
            for k2 in 0..wh {
                let e = spec[k1 * wh + k2].norm_sqr();
                // interior columns stand in for their conjugate mirror
                let mult = if k2 == 0 || k2 == w / 2 { 1.0 } else { 2.0 };
                freq += mult * e;
            }
        }
        freq /= (h * w) as f64;
        assert!((space - freq).abs() < 1e-5 * space.abs().max(1.0), "{} vs {}", space, freq);
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(fft2(&vec![0.0f64; 12], 3, 4).is_err());
        assert!(fft2(&vec![0.0f64; 24], 4, 6).is_err());
    }
}
