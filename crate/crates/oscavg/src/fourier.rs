//! Pseudo-spectral representation of functions that are 2*pi-periodic in the
//! phase difference `theta` and `2*pi*kappa`-periodic in the fast phase `S`.
//!
//! The builtin systems have trig-polynomial coefficients, so these tables are
//! exact at finite mode count; the averaging, fluctuation and homological
//! operators below act mode-wise.

use crate::error::{Error, Result};
use crate::scalar::Real;
use num_complex::Complex;

/// One-dimensional Fourier series in `theta` (period 2*pi).
#[derive(Debug, Clone)]
pub struct ThetaSeries<T> {
    pub jmax: usize,
    /// Coefficients of `exp(i j theta)` for `j = -jmax ... jmax`.
    pub c: Vec<Complex<T>>,
}

impl<T: Real> ThetaSeries<T> {
    pub fn zero(jmax: usize) -> Self {
        Self { jmax, c: vec![Complex::new(T::zero(), T::zero()); 2 * jmax + 1] }
    }

    pub fn from_fn(jmax: usize, mut f: impl FnMut(T) -> T) -> Self {
        let n = 2 * jmax + 1;
        let samples: Vec<T> = (0..n)
            .map(|a| f(T::of(2.0) * T::PI() * T::of_usize(a) / T::of_usize(n)))
            .collect();
        let mut c = vec![Complex::new(T::zero(), T::zero()); n];
        for (jj, cj) in c.iter_mut().enumerate() {
            let j = jj as isize - jmax as isize;
            let mut acc = Complex::new(T::zero(), T::zero());
            for (a, &v) in samples.iter().enumerate() {
                let ang = -T::of(2.0) * T::PI() * T::of_usize(a) * T::of(j as f64) / T::of_usize(n);
                acc = acc + Complex::new(ang.cos(), ang.sin()) * v;
            }
            *cj = acc / T::of_usize(n);
        }
        Self { jmax, c }
    }

    #[inline]
    pub fn coeff(&self, j: isize) -> Complex<T> {
        if j.unsigned_abs() > self.jmax {
            Complex::new(T::zero(), T::zero())
        } else {
            self.c[(j + self.jmax as isize) as usize]
        }
    }

    pub fn eval(&self, theta: T) -> T {
        let mut acc = T::zero();
        for (jj, cj) in self.c.iter().enumerate() {
            let j = T::of(jj as f64 - self.jmax as f64);
            let ang = j * theta;
            acc = acc + cj.re * ang.cos() - cj.im * ang.sin();
        }
        acc
    }

    /// Spectral derivative d/d theta.
    pub fn derivative(&self) -> Self {
        let mut out = self.clone();
        for (jj, cj) in out.c.iter_mut().enumerate() {
            let j = T::of(jj as f64 - self.jmax as f64);
            *cj = Complex::new(-cj.im * j, cj.re * j);
        }
        out
    }

    pub fn scale(&self, a: T) -> Self {
        let mut out = self.clone();
        for cj in out.c.iter_mut() {
            *cj = Complex::new(cj.re * a, cj.im * a);
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let jmax = self.jmax.max(other.jmax);
        let mut out = Self::zero(jmax);
        for j in -(jmax as isize)..=(jmax as isize) {
            out.c[(j + jmax as isize) as usize] = self.coeff(j) + other.coeff(j);
        }
        out
    }

    /// Constant (j = 0) part.
    pub fn mean(&self) -> T {
        self.c[self.jmax].re
    }

    pub fn max_abs(&self, n_grid: usize) -> T {
        let mut m = T::zero();
        for a in 0..n_grid {
            let th = T::of(2.0) * T::PI() * T::of_usize(a) / T::of_usize(n_grid);
            m = m.max(self.eval(th).abs());
        }
        m
    }

    pub fn min_max(&self, n_grid: usize) -> (T, T) {
        let mut lo = T::infinity();
        let mut hi = T::neg_infinity();
        for a in 0..n_grid {
            let th = T::of(2.0) * T::PI() * T::of_usize(a) / T::of_usize(n_grid);
            let v = self.eval(th);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

/// Two-dimensional Fourier table over `(theta, S)`: coefficients of
/// `exp(i (j theta + k S / kappa))` for `|j| <= jmax`, `|k| <= kmax`.
#[derive(Debug, Clone)]
pub struct Harmonics2<T> {
    pub jmax: usize,
    pub kmax: usize,
    pub kappa: u32,
    /// Row-major, row = j + jmax, column = k + kmax.
    pub c: Vec<Complex<T>>,
}

impl<T: Real> Harmonics2<T> {
    fn idx(&self, j: isize, k: isize) -> usize {
        debug_assert!(j.unsigned_abs() <= self.jmax && k.unsigned_abs() <= self.kmax);
        (j + self.jmax as isize) as usize * (2 * self.kmax + 1) + (k + self.kmax as isize) as usize
    }

    pub fn zero(jmax: usize, kmax: usize, kappa: u32) -> Self {
        Self {
            jmax,
            kmax,
            kappa,
            c: vec![Complex::new(T::zero(), T::zero()); (2 * jmax + 1) * (2 * kmax + 1)],
        }
    }

    #[inline]
    pub fn coeff(&self, j: isize, k: isize) -> Complex<T> {
        if j.unsigned_abs() > self.jmax || k.unsigned_abs() > self.kmax {
            Complex::new(T::zero(), T::zero())
        } else {
            self.c[self.idx(j, k)]
        }
    }

    /// Builds the table by sampling `f(theta, S)` on the minimal exact grid.
    pub fn from_fn(jmax: usize, kmax: usize, kappa: u32, f: impl Fn(T, T) -> T) -> Self {
        let ntheta = 2 * jmax + 1;
        let ns = 2 * kmax + 1;
        let two_pi = T::of(2.0) * T::PI();
        let kap = T::of_usize(kappa as usize);

        let mut samples = vec![T::zero(); ntheta * ns];
        for a in 0..ntheta {
            let th = two_pi * T::of_usize(a) / T::of_usize(ntheta);
            for b in 0..ns {
                let s = two_pi * kap * T::of_usize(b) / T::of_usize(ns);
                samples[a * ns + b] = f(th, s);
            }
        }
        Self::from_grid(jmax, kmax, kappa, &samples)
    }

    pub fn eval(&self, theta: T, s: T) -> T {
        let kap = T::of_usize(self.kappa as usize);
        let mut acc = T::zero();
        for jj in 0..(2 * self.jmax + 1) {
            let j = T::of(jj as f64 - self.jmax as f64);
            for kk in 0..(2 * self.kmax + 1) {
                let k = T::of(kk as f64 - self.kmax as f64);
                let c = self.c[jj * (2 * self.kmax + 1) + kk];
                let ang = j * theta + k * s / kap;
                acc = acc + c.re * ang.cos() - c.im * ang.sin();
            }
        }
        acc
    }

    /// Synthesizes values on a uniform grid of the stated size.
    fn synth(&self, ntheta: usize, ns: usize) -> Vec<T> {
        let wt = unit_roots::<T>(ntheta, false);
        let ws = unit_roots::<T>(ns, false);
        let ncols = 2 * self.kmax + 1;
        let mut partial = vec![Complex::new(T::zero(), T::zero()); ntheta * ncols];
        for a in 0..ntheta {
            for kk in 0..ncols {
                let j0 = -(self.jmax as isize);
                let mut acc = Complex::new(T::zero(), T::zero());
                for (jj, row) in (0..(2 * self.jmax + 1)).enumerate() {
                    let j = j0 + jj as isize;
                    let w = wt[mod_idx(j * a as isize, ntheta)];
                    acc = acc + w * self.c[row * ncols + kk];
                }
                partial[a * ncols + kk] = acc;
            }
        }
        let mut vals = vec![T::zero(); ntheta * ns];
        for a in 0..ntheta {
            for b in 0..ns {
                let k0 = -(self.kmax as isize);
                let mut acc = Complex::new(T::zero(), T::zero());
                for kk in 0..ncols {
                    let k = k0 + kk as isize;
                    let w = ws[mod_idx(k * b as isize, ns)];
                    acc = acc + w * partial[a * ncols + kk];
                }
                vals[a * ns + b] = acc.re;
            }
        }
        vals
    }

    /// `<.>_{kappa S}`: the S-mean, i.e. the `k = 0` column.
    pub fn s_mean(&self) -> ThetaSeries<T> {
        let mut out = ThetaSeries::zero(self.jmax);
        for jj in 0..(2 * self.jmax + 1) {
            out.c[jj] = self.c[jj * (2 * self.kmax + 1) + self.kmax];
        }
        out
    }

    /// `{.}_{kappa S}`: subtracts the S-mean.
    pub fn s_fluctuation(&self) -> Self {
        let mut out = self.clone();
        for jj in 0..(2 * self.jmax + 1) {
            out.c[jj * (2 * self.kmax + 1) + self.kmax] = Complex::new(T::zero(), T::zero());
        }
        out
    }

    /// Spectral d/d theta.
    pub fn dtheta(&self) -> Self {
        let mut out = self.clone();
        for jj in 0..(2 * self.jmax + 1) {
            let j = T::of(jj as f64 - self.jmax as f64);
            for kk in 0..(2 * self.kmax + 1) {
                let c = &mut out.c[jj * (2 * self.kmax + 1) + kk];
                *c = Complex::new(-c.im * j, c.re * j);
            }
        }
        out
    }

    /// Spectral d/d S (the `1/kappa` factor included).
    pub fn ds(&self) -> Self {
        let mut out = self.clone();
        let kap = T::of_usize(self.kappa as usize);
        for jj in 0..(2 * self.jmax + 1) {
            for kk in 0..(2 * self.kmax + 1) {
                let k = T::of(kk as f64 - self.kmax as f64) / kap;
                let c = &mut out.c[jj * (2 * self.kmax + 1) + kk];
                *c = Complex::new(-c.im * k, c.re * k);
            }
        }
        out
    }

    /// Solves `s0 * dv/dS = g` for the unique zero-S-mean `v`, mode-wise.
    /// Fails if `g` has an S-mean above `tol` (relative to the field scale).
    pub fn solve_s_primitive(&self, s0: T, tol: T) -> Result<Self> {
        let scale = self.max_coeff_abs().max(T::one());
        let mut out = self.clone();
        let kap = T::of_usize(self.kappa as usize);
        let mut worst_mean = T::zero();
        for jj in 0..(2 * self.jmax + 1) {
            for kk in 0..(2 * self.kmax + 1) {
                let k = kk as isize - self.kmax as isize;
                let c = &mut out.c[jj * (2 * self.kmax + 1) + kk];
                if k == 0 {
                    worst_mean = worst_mean.max(c.norm());
                    *c = Complex::new(T::zero(), T::zero());
                } else {
                    // divide by i * k * s0 / kappa
                    let d = T::of(k as f64) * s0 / kap;
                    *c = Complex::new(c.im / d, -c.re / d);
                }
            }
        }
        if worst_mean > tol * scale {
            return Err(Error::Homological {
                residual: worst_mean.lossy_f64(),
                tolerance: (tol * scale).lossy_f64(),
            });
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a - b)
    }

    fn zip(&self, other: &Self, op: impl Fn(Complex<T>, Complex<T>) -> Complex<T>) -> Self {
        assert_eq!(self.kappa, other.kappa);
        let jmax = self.jmax.max(other.jmax);
        let kmax = self.kmax.max(other.kmax);
        let mut out = Self::zero(jmax, kmax, self.kappa);
        for j in -(jmax as isize)..=(jmax as isize) {
            for k in -(kmax as isize)..=(kmax as isize) {
                let v = op(self.coeff(j, k), other.coeff(j, k));
                let id = out.idx(j, k);
                out.c[id] = v;
            }
        }
        out
    }

    pub fn scale(&self, a: T) -> Self {
        let mut out = self.clone();
        for c in out.c.iter_mut() {
            *c = Complex::new(c.re * a, c.im * a);
        }
        out
    }

    /// Pointwise product, computed on a grid large enough to be alias-free.
    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.kappa, other.kappa);
        let jmax = self.jmax + other.jmax;
        let kmax = self.kmax + other.kmax;
        let ntheta = 2 * jmax + 1;
        let ns = 2 * kmax + 1;
        let va = self.synth(ntheta, ns);
        let vb = other.synth(ntheta, ns);
        let prod: Vec<T> = va.iter().zip(vb.iter()).map(|(&x, &y)| x * y).collect();
        Self::from_grid(jmax, kmax, self.kappa, &prod)
    }

    /// Point evaluation of the theta-derivative.
    pub fn eval_dtheta(&self, theta: T, s: T) -> T {
        let kap = T::of_usize(self.kappa as usize);
        let mut acc = T::zero();
        for jj in 0..(2 * self.jmax + 1) {
            let j = T::of(jj as f64 - self.jmax as f64);
            for kk in 0..(2 * self.kmax + 1) {
                let k = T::of(kk as f64 - self.kmax as f64);
                let c = self.c[jj * (2 * self.kmax + 1) + kk];
                let ang = j * theta + k * s / kap;
                // d/dtheta Re[c e^{i ang}] = -j (c.re sin + c.im cos)
                acc = acc - j * (c.re * ang.sin() + c.im * ang.cos());
            }
        }
        acc
    }

    /// Forward transform of real samples laid out row-major on the minimal
    /// `(2 jmax + 1) x (2 kmax + 1)` grid.
    pub fn from_raw_grid(jmax: usize, kmax: usize, kappa: u32, samples: &[T]) -> Self {
        Self::from_grid(jmax, kmax, kappa, samples)
    }

    /// Forward transform of real samples laid out on the minimal grid.
    fn from_grid(jmax: usize, kmax: usize, kappa: u32, samples: &[T]) -> Self {
        let ntheta = 2 * jmax + 1;
        let ns = 2 * kmax + 1;
        assert_eq!(samples.len(), ntheta * ns);
        let wt = unit_roots::<T>(ntheta, true);
        let ws = unit_roots::<T>(ns, true);
        let mut partial = vec![Complex::new(T::zero(), T::zero()); ntheta * ns];
        for a in 0..ntheta {
            for kk in 0..ns {
                let k = kk as isize - kmax as isize;
                let mut acc = Complex::new(T::zero(), T::zero());
                for b in 0..ns {
                    let w = ws[mod_idx(k * b as isize, ns)];
                    acc = acc + w * samples[a * ns + b];
                }
                partial[a * ns + kk] = acc / T::of_usize(ns);
            }
        }
        let mut out = Self::zero(jmax, kmax, kappa);
        for jj in 0..ntheta {
            let j = jj as isize - jmax as isize;
            for kk in 0..ns {
                let mut acc = Complex::new(T::zero(), T::zero());
                for a in 0..ntheta {
                    let w = wt[mod_idx(j * a as isize, ntheta)];
                    acc = acc + w * partial[a * ns + kk];
                }
                out.c[jj * ns + kk] = acc / T::of_usize(ntheta);
            }
        }
        out
    }

    /// Embeds a theta-only series as a 2-D table.
    pub fn from_theta(series: &ThetaSeries<T>, kmax: usize, kappa: u32) -> Self {
        let mut out = Self::zero(series.jmax, kmax, kappa);
        for j in -(series.jmax as isize)..=(series.jmax as isize) {
            let id = out.idx(j, 0);
            out.c[id] = series.coeff(j);
        }
        out
    }

    pub fn max_coeff_abs(&self) -> T {
        let mut m = T::zero();
        for c in &self.c {
            m = m.max(c.norm());
        }
        m
    }

    /// Energy (sum of |c|^2) in modes with |j| > jcut or |k| > kcut.
    pub fn tail_energy(&self, jcut: usize, kcut: usize) -> T {
        let mut e = T::zero();
        for j in -(self.jmax as isize)..=(self.jmax as isize) {
            for k in -(self.kmax as isize)..=(self.kmax as isize) {
                if j.unsigned_abs() > jcut || k.unsigned_abs() > kcut {
                    let c = self.coeff(j, k);
                    e = e + c.norm_sqr();
                }
            }
        }
        e
    }
}

#[inline]
fn mod_idx(v: isize, n: usize) -> usize {
    v.rem_euclid(n as isize) as usize
}

/// Precomputed roots of unity `exp(±2*pi*i r / n)`.
fn unit_roots<T: Real>(n: usize, negative: bool) -> Vec<Complex<T>> {
    let two_pi = T::of(2.0) * T::PI();
    (0..n)
        .map(|r| {
            let ang = two_pi * T::of_usize(r) / T::of_usize(n);
            let ang = if negative { -ang } else { ang };
            Complex::new(ang.cos(), ang.sin())
        })
        .collect()
}
