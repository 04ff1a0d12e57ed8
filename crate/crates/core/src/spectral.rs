//! Two-dimensional FFTs on the periodic grid.
//!
//! Normalisation: the forward transform divides by `n²`, so a spectral
//! coefficient is the grid mean of `f(x) e^{-2πi k·x}`. A constant field `c`
//! maps to `ĉ(0,0) = c` and `cos(2πx)` maps to `ĉ(±1,0) = 1/2`. The inverse
//! transform is the plain sum over wavevectors.
//!
//! Storage is row-major with the first index along `x`; index `a` along an
//! axis corresponds to wavenumber `a` for `a < n/2` and `a - n` otherwise.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Signed wavenumber for storage index `index` on an axis of `n` points.
#[inline]
pub fn wavenumber(index: usize, n: usize) -> i64 {
    if index < n / 2 {
        index as i64
    } else {
        index as i64 - n as i64
    }
}

/// Storage index for a signed wavenumber.
#[inline]
pub fn storage_index(k: i64, n: usize) -> usize {
    k.rem_euclid(n as i64) as usize
}

/// Largest wavenumber kept by the 2/3 rule: quadratic products of two fields
/// truncated at this cutoff alias only onto modes beyond it.
#[inline]
pub fn dealias_cutoff(n: usize) -> i64 {
    ((n - 1) / 3) as i64
}

/// Spectral derivative multiplier `2πi k` along one axis. The Nyquist mode
/// is dropped so derivatives of real fields stay real.
#[inline]
pub fn derivative_factor(index: usize, n: usize) -> f64 {
    if index == n / 2 {
        0.0
    } else {
        2.0 * PI * wavenumber(index, n) as f64
    }
}

/// Planned forward/inverse transforms for an `n x n` grid.
pub struct Fft2d {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch_len: usize,
}

impl std::fmt::Debug for Fft2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2d").field("n", &self.n).finish()
    }
}

impl Fft2d {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Self {
            n,
            forward,
            inverse,
            scratch_len,
        }
    }

    /// Process-wide plan cache.
    pub fn shared(n: usize) -> Arc<Fft2d> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Fft2d>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
        guard
            .entry(n)
            .or_insert_with(|| Arc::new(Fft2d::new(n)))
            .clone()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn make_scratch(&self) -> Vec<Complex64> {
        vec![Complex64::default(); self.scratch_len]
    }

    /// In-place forward transform including the `1/n²` normalisation.
    pub fn forward(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.apply(&*self.forward, buf, scratch);
        let scale = 1.0 / (self.n * self.n) as f64;
        for c in buf.iter_mut() {
            *c *= scale;
        }
    }

    /// In-place inverse transform (unnormalised sum over wavevectors).
    pub fn inverse(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.apply(&*self.inverse, buf, scratch);
    }

    fn apply(&self, fft: &dyn Fft<f64>, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.n * self.n);
        fft.process_with_scratch(buf, scratch);
        transpose(buf, self.n);
        fft.process_with_scratch(buf, scratch);
        transpose(buf, self.n);
    }
}

fn transpose(buf: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wavenumber_layout() {
        let n = 8;
        let ks: Vec<i64> = (0..n).map(|i| wavenumber(i, n)).collect();
        assert_eq!(ks, vec![0, 1, 2, 3, -4, -3, -2, -1]);
        for k in -4..4 {
            assert_eq!(wavenumber(storage_index(k, n), n), k);
        }
    }

    #[test]
    fn cutoff_prevents_aliasing_into_kept_band() {
        for n in [8usize, 16, 32, 64, 128] {
            let k = dealias_cutoff(n);
            // Largest product mode 2k wraps to 2k - n, which must lie outside the band.
            assert!(2 * k - (n as i64) < -k, "n = {n}");
            assert!(3 * (k + 1) >= n as i64);
        }
        assert_eq!(dealias_cutoff(64), 21);
    }

    #[test]
    fn forward_inverse_identity() {
        let n = 16;
        let fft = Fft2d::new(n);
        let mut scratch = fft.make_scratch();
        let original: Vec<Complex64> = (0..n * n)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let mut buf = original.clone();
        fft.forward(&mut buf, &mut scratch);
        fft.inverse(&mut buf, &mut scratch);
        for (a, b) in buf.iter().zip(&original) {
            assert!((a - b).norm() < 1e-13);
        }
    }
}
