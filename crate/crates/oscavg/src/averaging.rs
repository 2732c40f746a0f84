//! Averaging of the perturbed system over the fast phase: assembles the
//! amplitude/phase-difference drift and diffusion fields order by order,
//! solves the homological equations for the near-identity change of
//! variables, and produces the averaged system `Lambda_k, Omega_k` together
//! with its small-amplitude expansion.
//!
//! Orders `k <= 2` are supported; that covers every stability criterion the
//! classification consumes. The engine requires `ell = 0`, i.e. a constant
//! limiting frequency; charts with genuinely energy-dependent frequency are
//! rejected rather than silently mis-averaged.

use crate::action_angle::OrbitChart;
use crate::error::{Error, Result};
use crate::fourier::{Harmonics2, ThetaSeries};
use crate::scalar::{wrap_angle_positive, Real};
use crate::system::SystemSpec;
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct AveragingParams<T> {
    /// Base theta mode count of the reported tables.
    pub theta_modes: usize,
    /// Base S mode count per resonance multiple.
    pub s_modes_per_kappa: usize,
    pub r_min: T,
    pub r_max: T,
    pub r_points: usize,
    /// Small-amplitude probe radii (descending).
    pub probes: Vec<T>,
    /// Threshold separating "identically zero" orders from live ones.
    pub zero_tol: T,
}

impl<T: Real> Default for AveragingParams<T> {
    fn default() -> Self {
        Self {
            theta_modes: 8,
            s_modes_per_kappa: 8,
            r_min: T::of(1e-3),
            r_max: T::of(1.5),
            r_points: 32,
            probes: vec![T::of(1e-2), T::of(10f64.powf(-2.5)), T::of(1e-3)],
            zero_tol: T::of(1e-9),
        }
    }
}

/// Drift and diffusion coefficient fields of one asymptotic order on the
/// `(R, theta, S)` cylinder, tabulated per amplitude grid point.
pub struct PeriodicFieldSet<T> {
    pub r_grid: Vec<T>,
    /// `f_{1,k}` per grid point, outer index `k-1`.
    pub f1: Vec<Vec<Harmonics2<T>>>,
    pub f2: Vec<Vec<Harmonics2<T>>>,
    /// `gamma_{1,j,k}`: row j = noise channel, outer index `k-1`.
    pub gamma1: Vec<Vec<[Harmonics2<T>; 2]>>,
    pub gamma2: Vec<Vec<[Harmonics2<T>; 2]>>,
}

/// One order's fields at a single amplitude.
struct OrderSample<T> {
    f1: Vec<Harmonics2<T>>,
    f2: Vec<Harmonics2<T>>,
    gamma1: Vec<[Harmonics2<T>; 2]>,
    gamma2: Vec<[Harmonics2<T>; 2]>,
}

fn sample_orders<T: Real>(
    spec: &SystemSpec<T>,
    chart: &OrbitChart<T>,
    n_orders: u32,
    r: T,
    jmax: usize,
    kmax: usize,
) -> Result<OrderSample<T>> {
    let q = spec.schedule.q;
    let kappa = spec.schedule.resonance_multiple;
    let kap = T::of_usize(kappa as usize);
    let e = r * r;
    let two_r = T::of(2.0) * r;

    let ntheta = 2 * jmax + 1;
    let ns = 2 * kmax + 1;
    let two_pi = T::of(2.0) * T::PI();

    // per-order samples
    let mut f1s = vec![vec![T::zero(); ntheta * ns]; n_orders as usize];
    let mut f2s = vec![vec![T::zero(); ntheta * ns]; n_orders as usize];
    let mut g1s = vec![[vec![T::zero(); ntheta * ns], vec![T::zero(); ntheta * ns]]; n_orders as usize];
    let mut g2s = vec![[vec![T::zero(); ntheta * ns], vec![T::zero(); ntheta * ns]]; n_orders as usize];

    for a in 0..ntheta {
        let theta = two_pi * T::of_usize(a) / T::of_usize(ntheta);
        for b in 0..ns {
            let s = two_pi * kap * T::of_usize(b) / T::of_usize(ns);
            let phi = wrap_angle_positive(theta + s / kap);
            let g = chart.geometry(e, phi)?;
            let idx = a * ns + b;

            // per-order raw coefficients at this x
            let mut drift = Vec::with_capacity(n_orders as usize);
            let mut diff = Vec::with_capacity(n_orders as usize);
            for k in 1..=n_orders {
                drift.push(spec.drift_order(k, &g.x, s));
                diff.push(spec.diffusion_order(k, &g.x, s));
            }

            // beta rows: (grad . A_k) for H and Phi
            let beta = |grad: [T; 2], m: &[[T; 2]; 2]| {
                [
                    grad[0] * m[0][0] + grad[1] * m[1][0],
                    grad[0] * m[0][1] + grad[1] * m[1][1],
                ]
            };
            // tr(Mi^T Hess Mj) = sum_col sum_{r,c} Mi[r][col] Hess[r][c] Mj[c][col]
            let trace_h = |mi: &[[T; 2]; 2], hess: &[[T; 2]; 2], mj: &[[T; 2]; 2]| {
                let mut acc = T::zero();
                for col in 0..2 {
                    for r1 in 0..2 {
                        for c1 in 0..2 {
                            acc = acc + mi[r1][col] * hess[r1][c1] * mj[c1][col];
                        }
                    }
                }
                acc
            };

            for k in 1..=n_orders as usize {
                let ak = drift[k - 1];
                let mk = &diff[k - 1];
                let b1 = {
                    let mut v = g.grad_h[0] * ak[0] + g.grad_h[1] * ak[1];
                    for i in 1..k {
                        let j = k - i;
                        v = v + trace_h(&diff[i - 1], &g.hess_h, &diff[j - 1]) / T::of(2.0);
                    }
                    v
                };
                let b2 = {
                    let mut v = g.grad_phi[0] * ak[0] + g.grad_phi[1] * ak[1];
                    for i in 1..k {
                        let j = k - i;
                        v = v + trace_h(&diff[i - 1], &g.hess_phi, &diff[j - 1]) / T::of(2.0);
                    }
                    v
                };
                let beta1 = beta(g.grad_h, mk);
                let beta2 = beta(g.grad_phi, mk);
                let gamma1k = [beta1[0] / two_r, beta1[1] / two_r];
                g1s[k - 1][0][idx] = gamma1k[0];
                g1s[k - 1][1][idx] = gamma1k[1];
                g2s[k - 1][0][idx] = beta2[0];
                g2s[k - 1][1][idx] = beta2[1];

                // Ito correction from E -> R: -(2R)^{-1} sum_j sum_{i+i'=k} g1_{j,i} g1_{j,i'}
                let mut noise_drift = T::zero();
                for i in 1..k {
                    let i2 = k - i;
                    for j in 0..2 {
                        noise_drift = noise_drift + g1s[i - 1][j][idx] * g1s[i2 - 1][j][idx];
                    }
                }
                f1s[k - 1][idx] = b1 / two_r - noise_drift / two_r;

                let kk = T::of_usize(k);
                let qq = T::of_usize(q as usize);
                let delta_kq = if k == q as usize { T::one() } else { T::zero() };
                let s_term = spec.schedule.coeff(k) * (T::one() - kk / qq + delta_kq) / kap;
                f2s[k - 1][idx] = b2 - s_term;
            }
        }
    }

    let to_h2 = |samples: &Vec<T>| Harmonics2::from_raw_grid(jmax, kmax, kappa, samples);
    Ok(OrderSample {
        f1: f1s.iter().map(to_h2).collect(),
        f2: f2s.iter().map(to_h2).collect(),
        gamma1: g1s
            .iter()
            .map(|pair| [to_h2(&pair[0]), to_h2(&pair[1])])
            .collect(),
        gamma2: g2s
            .iter()
            .map(|pair| [to_h2(&pair[0]), to_h2(&pair[1])])
            .collect(),
    })
}

/// Working table sizes: twice the reported theta modes (to hold products of
/// two base fields exactly) and the matching S support, where every theta
/// harmonic carries at most one S/kappa each and the coefficient trig
/// polynomials contribute at most `2 kappa` fast harmonics per factor.
fn working_modes<T: Real>(params: &AveragingParams<T>, kappa: u32) -> (usize, usize) {
    let jmax = 2 * params.theta_modes;
    let kmax = 2 * params.theta_modes + 4 * params.s_modes_per_kappa.div_ceil(4) * kappa as usize / 2
        + 2 * kappa as usize
        + 2;
    (jmax, kmax)
}

fn check_ell_supported<T: Real>(chart: &OrbitChart<T>, ell: u32) -> Result<()> {
    if ell != 0 {
        return Err(Error::UnsupportedWellIndex(ell));
    }
    let var = chart.nu_variation();
    if var > T::of(1e-8) {
        return Err(Error::OutOfTheory(format!(
            "ell = 0 requires a constant limiting frequency, but nu varies by {:e} over the chart",
            var
        )));
    }
    Ok(())
}

/// Assembles the polar drift/diffusion fields for orders `k <= 2` on an
/// amplitude grid. The grid must not contain `R = 0`.
pub fn polar_fields<T: Real>(
    spec: &SystemSpec<T>,
    chart: &OrbitChart<T>,
    ell: u32,
    r_grid: &[T],
    params: &AveragingParams<T>,
) -> Result<PeriodicFieldSet<T>> {
    check_ell_supported(chart, ell)?;
    if r_grid.iter().any(|&r| r <= T::zero()) {
        return Err(Error::Parameter("amplitude grid must satisfy R > 0".into()));
    }
    let n_orders = spec.truncation_order.min(2);
    let (jmax, kmax) = working_modes(params, spec.schedule.resonance_multiple);
    let entries: Result<Vec<OrderSample<T>>> = r_grid
        .par_iter()
        .map(|&r| sample_orders(spec, chart, n_orders, r, jmax, kmax))
        .collect();
    let entries = entries?;
    let mut out = PeriodicFieldSet {
        r_grid: r_grid.to_vec(),
        f1: vec![],
        f2: vec![],
        gamma1: vec![],
        gamma2: vec![],
    };
    for e in entries {
        out.f1.push(e.f1);
        out.f2.push(e.f2);
        out.gamma1.push(e.gamma1);
        out.gamma2.push(e.gamma2);
    }
    Ok(out)
}

/// `<field>_{kappa S}`: exact mean of the stored S-representation.
pub fn average_over_s<T: Real>(field: &Harmonics2<T>) -> ThetaSeries<T> {
    field.s_mean()
}

/// Solves `s0 d/dS (v) = field` mode-wise for the zero-mean primitive.
pub fn solve_homological<T: Real>(field: &Harmonics2<T>, s0: T) -> Result<Harmonics2<T>> {
    field.solve_s_primitive(s0, T::of(1e-10))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// Leading amplitude term is linear in `v` (`Lambda_n = v (lambda_n + O(v))`).
    Linear,
    /// Leading term is `v^h`, with the next linear order at `n + l`.
    StrictlyNonlinear,
}

/// One order of the averaged system on the amplitude grid.
#[derive(Debug, Clone)]
pub struct OrderTable<T> {
    /// Theta-series per amplitude grid point.
    pub series: Vec<ThetaSeries<T>>,
    /// Fitted small-amplitude exponent (`Lambda ~ coeff * v^exponent`).
    pub exponent: T,
    /// Coefficient series of the leading small-amplitude power.
    pub coeff: ThetaSeries<T>,
}

/// Near-identity transform tables `v_k, psi_k` and their R-derivatives.
#[derive(Clone)]
pub struct TransformTables<T> {
    pub v: Vec<Vec<Harmonics2<T>>>,
    pub psi: Vec<Vec<Harmonics2<T>>>,
    pub dv_dr: Vec<Vec<Harmonics2<T>>>,
    pub dpsi_dr: Vec<Vec<Harmonics2<T>>>,
}

/// The averaged (normal-form) system truncated at order `N <= 2`.
pub struct AveragedSystem<T> {
    pub q: u32,
    pub kappa: u32,
    pub s0: T,
    pub well_index: u32,
    pub n_orders: u32,
    pub r_grid: Vec<T>,
    pub lambda: Vec<OrderTable<T>>,
    pub omega: Vec<OrderTable<T>>,
    /// `Omega_k(v) ~ omega0 + omega1 v` near zero, per order.
    pub omega0: Vec<ThetaSeries<T>>,
    pub omega1: Vec<ThetaSeries<T>>,
    pub transform: TransformTables<T>,
    /// Leading non-vanishing indices.
    pub n: u32,
    pub m: u32,
    pub shape: Shape,
    /// Nonlinearity power of the leading amplitude order (1 when linear).
    pub h: u32,
    /// Order gap to the next linear term (0 when linear).
    pub l: u32,
    /// `lambda_n` (linear shape) or `lambda_{n,h}` (strictly nonlinear).
    pub lambda_n: ThetaSeries<T>,
    /// `lambda_{n+l}` in the strictly nonlinear case.
    pub lambda_nl: Option<ThetaSeries<T>>,
    pub omega_m0: ThetaSeries<T>,
    pub omega_m1: ThetaSeries<T>,
}

impl<T: Real> AveragedSystem<T> {
    fn locate(&self, r: T) -> (usize, usize, T) {
        let grid = &self.r_grid;
        if r <= grid[0] {
            return (0, 0, T::zero());
        }
        if r >= *grid.last().unwrap() {
            let i = grid.len() - 1;
            return (i, i, T::zero());
        }
        let mut lo = 0;
        let mut hi = grid.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if grid[mid] <= r {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let w = (r - grid[lo]) / (grid[hi] - grid[lo]);
        (lo, hi, w)
    }

    /// `Lambda_k(v, psi)`, small-amplitude power law below the grid.
    pub fn eval_lambda(&self, k: u32, v: T, psi: T) -> T {
        let tab = &self.lambda[(k - 1) as usize];
        if v <= T::zero() {
            return T::zero();
        }
        if v < self.r_grid[0] {
            return tab.coeff.eval(psi) * v.powf(tab.exponent);
        }
        let (lo, hi, w) = self.locate(v);
        tab.series[lo].eval(psi) * (T::one() - w) + tab.series[hi].eval(psi) * w
    }

    pub fn eval_omega(&self, k: u32, v: T, psi: T) -> T {
        let tab = &self.omega[(k - 1) as usize];
        if v < self.r_grid[0] {
            let v0 = v.max(T::zero());
            return self.omega0[(k - 1) as usize].eval(psi)
                + self.omega1[(k - 1) as usize].eval(psi) * v0;
        }
        let (lo, hi, w) = self.locate(v);
        tab.series[lo].eval(psi) * (T::one() - w) + tab.series[hi].eval(psi) * w
    }

    /// Truncated averaged drift `(Lambda_N, Omega_N)(v, psi, t)` with the
    /// `t^{-k/q}` prefactors.
    pub fn truncated_rhs(&self, t: T, v: T, psi: T) -> [T; 2] {
        let q = T::of_usize(self.q as usize);
        let mut du = T::zero();
        let mut dpsi = T::zero();
        for k in 1..=self.n_orders {
            let w = t.powf(-T::of_usize(k as usize) / q);
            du = du + w * self.eval_lambda(k, v, psi);
            dpsi = dpsi + w * self.eval_omega(k, v, psi);
        }
        [du, dpsi]
    }

    /// Transform correction `sum_k t^{-k/q} v_k(R, theta, S)` and the psi
    /// analogue, used to evaluate `V_N, Psi_N`.
    pub fn transform_correction(&self, r: T, theta: T, s: T, t: T) -> [T; 2] {
        let q = T::of_usize(self.q as usize);
        let (lo, hi, w) = self.locate(r);
        let mut dv = T::zero();
        let mut dpsi = T::zero();
        for k in 0..self.n_orders as usize {
            let tw = t.powf(-T::of(k as f64 + 1.0) / q);
            let vk = self.transform.v[k][lo].eval(theta, s) * (T::one() - w)
                + self.transform.v[k][hi].eval(theta, s) * w;
            let pk = self.transform.psi[k][lo].eval(theta, s) * (T::one() - w)
                + self.transform.psi[k][hi].eval(theta, s) * w;
            dv = dv + tw * vk;
            dpsi = dpsi + tw * pk;
        }
        [dv, dpsi]
    }

    /// Gradient of the transform in `(R, theta)` at fixed `t`:
    /// returns `(dV/dR, dV/dtheta, dPsi/dR, dPsi/dtheta)`.
    pub fn transform_gradient(&self, r: T, theta: T, s: T, t: T) -> [T; 4] {
        let q = T::of_usize(self.q as usize);
        let (lo, hi, w) = self.locate(r);
        let mut out = [T::one(), T::zero(), T::zero(), T::one()];
        for k in 0..self.n_orders as usize {
            let tw = t.powf(-T::of(k as f64 + 1.0) / q);
            let interp = |tabs: &Vec<Vec<Harmonics2<T>>>| {
                tabs[k][lo].eval(theta, s) * (T::one() - w) + tabs[k][hi].eval(theta, s) * w
            };
            out[0] = out[0] + tw * interp(&self.transform.dv_dr);
            out[2] = out[2] + tw * interp(&self.transform.dpsi_dr);
            // theta-derivatives evaluated spectrally on the stored tables
            let dth_v = self.transform.v[k][lo].eval_dtheta(theta, s) * (T::one() - w)
                + self.transform.v[k][hi].eval_dtheta(theta, s) * w;
            let dth_p = self.transform.psi[k][lo].eval_dtheta(theta, s) * (T::one() - w)
                + self.transform.psi[k][hi].eval_dtheta(theta, s) * w;
            out[1] = out[1] + tw * dth_v;
            out[3] = out[3] + tw * dth_p;
        }
        out
    }
}

struct PerRadius<T> {
    lambda: Vec<ThetaSeries<T>>,
    omega: Vec<ThetaSeries<T>>,
    v: Vec<Harmonics2<T>>,
    psi: Vec<Harmonics2<T>>,
    dv: Vec<Harmonics2<T>>,
    dpsi: Vec<Harmonics2<T>>,
}

struct FirstOrder<T> {
    lam1: ThetaSeries<T>,
    om1: ThetaSeries<T>,
    v1: Harmonics2<T>,
    psi1: Harmonics2<T>,
}

fn first_order_from<T: Real>(smp: &OrderSample<T>, s0: T) -> Result<FirstOrder<T>> {
    Ok(FirstOrder {
        lam1: smp.f1[0].s_mean(),
        om1: smp.f2[0].s_mean(),
        v1: smp.f1[0].s_fluctuation().scale(-T::one()).solve_s_primitive(s0, T::of(1e-9))?,
        psi1: smp.f2[0].s_fluctuation().scale(-T::one()).solve_s_primitive(s0, T::of(1e-9))?,
    })
}

fn orders_at_radius<T: Real>(
    spec: &SystemSpec<T>,
    chart: &OrbitChart<T>,
    n_orders: u32,
    r: T,
    jmax: usize,
    kmax: usize,
) -> Result<PerRadius<T>> {
    let s0 = spec.schedule.s[0];
    let q = spec.schedule.q;
    let h = r * T::of(1e-3);
    let two_h = T::of(2.0) * h;

    let base = sample_orders(spec, chart, n_orders, r, jmax, kmax)?;
    let fo = first_order_from(&base, s0)?;

    if n_orders == 1 {
        // R-derivatives of the transform still feed the Lyapunov monitor
        let smp_p = sample_orders(spec, chart, 1, r + h, jmax, kmax)?;
        let smp_m = sample_orders(spec, chart, 1, r - h, jmax, kmax)?;
        let fp = first_order_from(&smp_p, s0)?;
        let fm = first_order_from(&smp_m, s0)?;
        return Ok(PerRadius {
            lambda: vec![fo.lam1],
            omega: vec![fo.om1],
            dv: vec![fp.v1.sub(&fm.v1).scale(T::one() / two_h)],
            dpsi: vec![fp.psi1.sub(&fm.psi1).scale(T::one() / two_h)],
            v: vec![fo.v1],
            psi: vec![fo.psi1],
        });
    }

    let smp_p = sample_orders(spec, chart, n_orders, r + h, jmax, kmax)?;
    let smp_m = sample_orders(spec, chart, n_orders, r - h, jmax, kmax)?;
    let fp = first_order_from(&smp_p, s0)?;
    let fm = first_order_from(&smp_m, s0)?;

    let dlam1 = fp.lam1.add(&fm.lam1.scale(-T::one())).scale(T::one() / two_h);
    let dom1 = fp.om1.add(&fm.om1.scale(-T::one())).scale(T::one() / two_h);
    let dv1 = fp.v1.sub(&fm.v1).scale(T::one() / two_h);
    let dpsi1 = fp.psi1.sub(&fm.psi1).scale(T::one() / two_h);

    let kappa = spec.schedule.resonance_multiple;
    let embed = |s: &ThetaSeries<T>| Harmonics2::from_theta(s, 0, kappa);
    let qq = T::of_usize(q as usize);
    let delta_1q = if q == 1 { T::one() } else { T::zero() };
    let s_transport = spec.schedule.coeff(1) * (T::one() - T::one() / qq + delta_1q);

    // f~_2 = (v1 dR + psi1 dtheta)(Lambda_1, Omega_1)
    //        - { f_{1,1} dR + f_{2,1} dtheta + s_1 (1 - 1/q + d_{1,q}) dS
    //            - d_{1,q} (2 - q)/q } (v1, psi1)
    // (the ell-dependent pieces vanish at ell = 0)
    let first_scale = base.f1[0]
        .max_coeff_abs()
        .max(base.f2[0].max_coeff_abs())
        .max(base.f1[1].max_coeff_abs())
        .max(base.f2[1].max_coeff_abs());
    let first_order_zero = base.f1[0].max_coeff_abs() + base.f2[0].max_coeff_abs()
        < T::of(1e-14) * first_scale.max(T::one());

    let second_from = |smp: &OrderSample<T>,
                       f: &FirstOrder<T>,
                       dl: &ThetaSeries<T>,
                       dm: &ThetaSeries<T>,
                       dv: &Harmonics2<T>,
                       dp: &Harmonics2<T>|
     -> Result<(ThetaSeries<T>, ThetaSeries<T>, Harmonics2<T>, Harmonics2<T>)> {
        if first_order_zero {
            // f~_2 = 0: the averaged order is the plain S-mean
            let lam2 = smp.f1[1].s_mean();
            let om2 = smp.f2[1].s_mean();
            let v2 = smp.f1[1].s_fluctuation().scale(-T::one()).solve_s_primitive(s0, T::of(1e-9))?;
            let psi2 =
                smp.f2[1].s_fluctuation().scale(-T::one()).solve_s_primitive(s0, T::of(1e-9))?;
            return Ok((lam2, om2, v2, psi2));
        }
        let t1_lam = f.v1.mul(&embed(dl)).add(&f.psi1.mul(&embed(&f.lam1.derivative())));
        let t1_om = f.v1.mul(&embed(dm)).add(&f.psi1.mul(&embed(&f.om1.derivative())));
        let advect = |target_dr: &Harmonics2<T>, target: &Harmonics2<T>| -> Harmonics2<T> {
            let mut acc = smp.f1[0].mul(target_dr);
            acc = acc.add(&smp.f2[0].mul(&target.dtheta()));
            if s_transport != T::zero() {
                acc = acc.add(&target.ds().scale(s_transport));
            }
            if q == 1 {
                acc = acc.add(&target.scale(-(T::of(2.0) - qq) / qq));
            }
            acc
        };
        let ftilde1 = t1_lam.sub(&advect(dv, &f.v1));
        let ftilde2 = t1_om.sub(&advect(dp, &f.psi1));
        let rhs1 = smp.f1[1].sub(&ftilde1);
        let rhs2 = smp.f2[1].sub(&ftilde2);
        let lam2 = rhs1.s_mean();
        let om2 = rhs2.s_mean();
        let v2 = rhs1.s_fluctuation().scale(-T::one()).solve_s_primitive(s0, T::of(1e-9))?;
        let psi2 = rhs2.s_fluctuation().scale(-T::one()).solve_s_primitive(s0, T::of(1e-9))?;
        Ok((lam2, om2, v2, psi2))
    };

    let (lam2, om2, v2, psi2) = second_from(&base, &fo, &dlam1, &dom1, &dv1, &dpsi1)?;
    // stencil for the second-order transform derivative; the first-order
    // derivative data is reused from the base point (the resulting tables
    // only feed the monitor's sampled noise bounds)
    let (_, _, v2p, psi2p) = second_from(&smp_p, &fp, &dlam1, &dom1, &dv1, &dpsi1)?;
    let (_, _, v2m, psi2m) = second_from(&smp_m, &fm, &dlam1, &dom1, &dv1, &dpsi1)?;
    let dv2 = v2p.sub(&v2m).scale(T::one() / two_h);
    let dpsi2 = psi2p.sub(&psi2m).scale(T::one() / two_h);

    Ok(PerRadius {
        lambda: vec![fo.lam1, lam2],
        omega: vec![fo.om1, om2],
        v: vec![fo.v1, v2],
        psi: vec![fo.psi1, psi2],
        dv: vec![dv1, dv2],
        dpsi: vec![dpsi1, dpsi2],
    })
}

/// Computes the averaged system on the amplitude grid and fits its
/// small-amplitude structure.
pub fn averaged_system<T: Real>(
    spec: &SystemSpec<T>,
    chart: &OrbitChart<T>,
    ell: u32,
    n_orders: u32,
    params: &AveragingParams<T>,
) -> Result<AveragedSystem<T>> {
    if n_orders == 0 || n_orders > 2 {
        return Err(Error::UnsupportedOrder(n_orders));
    }
    check_ell_supported(chart, ell)?;

    // grid: log-spaced plus the probe radii
    let mut r_grid: Vec<T> = (0..params.r_points)
        .map(|i| {
            let f = T::of_usize(i) / T::of_usize(params.r_points - 1);
            params.r_min * (params.r_max / params.r_min).powf(f)
        })
        .collect();
    for &p in &params.probes {
        r_grid.push(p);
    }
    r_grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    r_grid.dedup_by(|a, b| (*a - *b).abs() < T::of(1e-14));

    let (jmax, kmax) = working_modes(params, spec.schedule.resonance_multiple);

    let rows: Result<Vec<PerRadius<T>>> = r_grid
        .par_iter()
        .map(|&r| orders_at_radius(spec, chart, n_orders, r, jmax, kmax))
        .collect();
    let rows = rows?;

    let mut avg = AveragedSystem {
        q: spec.schedule.q,
        kappa: spec.schedule.resonance_multiple,
        s0: spec.schedule.s[0],
        well_index: ell,
        n_orders,
        r_grid: r_grid.clone(),
        lambda: vec![],
        omega: vec![],
        omega0: vec![],
        omega1: vec![],
        transform: TransformTables { v: vec![], psi: vec![], dv_dr: vec![], dpsi_dr: vec![] },
        n: 0,
        m: 0,
        shape: Shape::Linear,
        h: 1,
        l: 0,
        lambda_n: ThetaSeries::zero(1),
        lambda_nl: None,
        omega_m0: ThetaSeries::zero(1),
        omega_m1: ThetaSeries::zero(1),
    };
    for k in 0..n_orders as usize {
        avg.lambda.push(OrderTable {
            series: rows.iter().map(|row| row.lambda[k].clone()).collect(),
            exponent: T::one(),
            coeff: ThetaSeries::zero(params.theta_modes),
        });
        avg.omega.push(OrderTable {
            series: rows.iter().map(|row| row.omega[k].clone()).collect(),
            exponent: T::zero(),
            coeff: ThetaSeries::zero(params.theta_modes),
        });
        avg.transform.v.push(rows.iter().map(|row| row.v[k].clone()).collect());
        avg.transform.psi.push(rows.iter().map(|row| row.psi[k].clone()).collect());
        avg.transform.dv_dr.push(rows.iter().map(|row| row.dv[k].clone()).collect());
        avg.transform.dpsi_dr.push(rows.iter().map(|row| row.dpsi[k].clone()).collect());
    }
    fit_small_amplitude(&mut avg, &params.probes, params.zero_tol)?;
    Ok(avg)
}

/// Fits leading powers of `v` per order by log-log regression over the
/// probes, extracts the small-amplitude coefficient functions, and declares
/// the leading indices and shape.
pub fn fit_small_amplitude<T: Real>(
    avg: &mut AveragedSystem<T>,
    probes: &[T],
    zero_tol: T,
) -> Result<()> {
    if probes.len() < 3 {
        return Err(Error::Parameter("need at least 3 probe radii".into()));
    }
    let mut ps: Vec<T> = probes.to_vec();
    ps.sort_by(|a, b| b.partial_cmp(a).unwrap()); // descending
    let idx_of = |r: T, grid: &[T]| -> usize {
        grid.iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                ((**a) - r).abs().partial_cmp(&((**b) - r).abs()).unwrap()
            })
            .map(|(i, _)| i)
            .unwrap()
    };
    let pidx: Vec<usize> = ps.iter().map(|&p| idx_of(p, &avg.r_grid)).collect();

    // overall field scale for zero detection
    let mut scale = T::zero();
    for k in 0..avg.n_orders as usize {
        for &i in &pidx {
            scale = scale.max(avg.lambda[k].series[i].max_abs(64) / avg.r_grid[i]);
            scale = scale.max(avg.omega[k].series[i].max_abs(64));
        }
    }
    let tol = zero_tol * scale.max(T::one());

    // leading indices
    let mut n = 0u32;
    for k in 1..=avg.n_orders {
        let norm = pidx
            .iter()
            .map(|&i| avg.lambda[(k - 1) as usize].series[i].max_abs(64) / avg.r_grid[i])
            .fold(T::zero(), |a, b| a.max(b));
        if norm > T::of(10.0) * tol {
            n = k;
            break;
        } else if norm > tol {
            return Err(Error::ClassificationAmbiguous(format!(
                "order {k} amplitude norm {:e} sits between tol and 10*tol",
                norm
            )));
        }
    }
    if n == 0 {
        return Err(Error::Degenerate(
            "all computed Lambda orders vanish; nothing to classify".into(),
        ));
    }
    let mut m = 0u32;
    for k in 1..=avg.n_orders {
        let norm = pidx
            .iter()
            .map(|&i| avg.omega[(k - 1) as usize].series[i].max_abs(64))
            .fold(T::zero(), |a, b| a.max(b));
        if norm > T::of(10.0) * tol {
            m = k;
            break;
        } else if norm > tol {
            return Err(Error::ClassificationAmbiguous(format!(
                "order {k} phase norm {:e} sits between tol and 10*tol",
                norm
            )));
        }
    }
    if m == 0 {
        return Err(Error::Degenerate(
            "all computed Omega orders vanish; the phase equation is trivial at this well index"
                .into(),
        ));
    }

    // per-order small-amplitude exponents and coefficients
    for k in 0..avg.n_orders as usize {
        let (exponent, coeff) = fit_power_law(
            &avg.lambda[k].series,
            &avg.r_grid,
            &pidx,
            tol,
        )?;
        avg.lambda[k].exponent = exponent;
        avg.lambda[k].coeff = coeff;

        // Omega: quadratic fit in v for the constant and linear parts
        let (w0, w1) = fit_const_linear(&avg.omega[k].series, &avg.r_grid, &pidx);
        avg.omega0.push(w0);
        avg.omega1.push(w1);
        avg.omega[k].exponent = T::zero();
        avg.omega[k].coeff = avg.omega0[k].clone();
    }

    avg.n = n;
    avg.m = m;
    let exp_n = avg.lambda[(n - 1) as usize].exponent;
    let rounded = exp_n.lossy_f64().round();
    if (exp_n.lossy_f64() - rounded).abs() > 0.1 {
        return Err(Error::ClassificationAmbiguous(format!(
            "leading amplitude exponent {exp_n} is not near an integer"
        )));
    }
    if (exp_n - T::one()).abs() <= T::of(0.05) {
        avg.shape = Shape::Linear;
        avg.h = 1;
        avg.l = 0;
        avg.lambda_n = avg.lambda[(n - 1) as usize].coeff.clone();
        avg.lambda_nl = None;
    } else {
        if rounded < 2.0 {
            return Err(Error::ClassificationAmbiguous(format!(
                "leading amplitude exponent {exp_n} below the strictly nonlinear range"
            )));
        }
        avg.shape = Shape::StrictlyNonlinear;
        avg.h = rounded as u32;
        avg.lambda_n = avg.lambda[(n - 1) as usize].coeff.clone();
        // find the first later order with a linear leading power
        let mut l = 0u32;
        for k in (n + 1)..=avg.n_orders {
            let tab = &avg.lambda[(k - 1) as usize];
            let norm = pidx
                .iter()
                .map(|&i| tab.series[i].max_abs(64) / avg.r_grid[i])
                .fold(T::zero(), |a, b| a.max(b));
            if norm > T::of(10.0) * tol && (tab.exponent - T::one()).abs() <= T::of(0.05) {
                l = k - n;
                break;
            }
        }
        if l == 0 {
            return Err(Error::ClassificationAmbiguous(
                "strictly nonlinear leading order without a following linear order".into(),
            ));
        }
        avg.l = l;
        avg.lambda_nl = Some(avg.lambda[(n + l - 1) as usize].coeff.clone());
    }
    avg.omega_m0 = avg.omega0[(m - 1) as usize].clone();
    avg.omega_m1 = avg.omega1[(m - 1) as usize].clone();
    Ok(())
}

/// Log-log exponent fit and power-law coefficient extraction per theta mode.
fn fit_power_law<T: Real>(
    series: &[ThetaSeries<T>],
    grid: &[T],
    pidx: &[usize],
    tol: T,
) -> Result<(T, ThetaSeries<T>)> {
    let i1 = pidx[0];
    let i3 = pidx[pidx.len() - 1];
    let s1 = &series[i1];
    let s3 = &series[i3];
    let jmax = s1.jmax;
    let mut exponent: Option<T> = None;
    let scale = s1.max_abs(64).max(tol);
    for j in -(jmax as isize)..=(jmax as isize) {
        let c1 = s1.coeff(j).norm();
        let c3 = s3.coeff(j).norm();
        if c1 < T::of(1e-6) * scale || c3 <= T::zero() {
            continue;
        }
        let e = (c1 / c3).ln() / (grid[i1] / grid[i3]).ln();
        exponent = Some(match exponent {
            None => e,
            Some(prev) => prev.min(e),
        });
    }
    let exponent = exponent.unwrap_or_else(T::one);

    // Richardson-style extrapolation of series / r^exponent to r = 0 with a
    // quadratic model through the three probes.
    let take = |i: usize| (grid[i], &series[i]);
    let (ra, sa) = take(pidx[0]);
    let (rb, sb) = take(pidx[1]);
    let (rc, sc) = take(pidx[2]);
    let mut coeff = ThetaSeries::zero(jmax);
    for j in -(jmax as isize)..=(jmax as isize) {
        let ya = sa.coeff(j) / ra.powf(exponent);
        let yb = sb.coeff(j) / rb.powf(exponent);
        let yc = sc.coeff(j) / rc.powf(exponent);
        // quadratic through (ra, ya), (rb, yb), (rc, yc) evaluated at 0
        let den_a = (ra - rb) * (ra - rc);
        let den_b = (rb - ra) * (rb - rc);
        let den_c = (rc - ra) * (rc - rb);
        let value = ya * ((rb * rc) / den_a)
            + yb * ((ra * rc) / den_b)
            + yc * ((ra * rb) / den_c);
        let id = (j + jmax as isize) as usize;
        coeff.c[id] = value;
    }
    Ok((exponent, coeff))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action_angle::build_chart;
    use crate::system::builtin::{ex0, ex1, ex2, Ex0Params, Ex1Params, Ex2Params};

    fn avg_for(spec: &SystemSpec<f64>, n_orders: u32) -> AveragedSystem<f64> {
        let chart = build_chart(spec, 8).unwrap();
        averaged_system(spec, &chart, 0, n_orders, &AveragingParams::default()).unwrap()
    }

    const PSI_GRID: usize = 64;

    fn assert_series_matches(
        avg: &AveragedSystem<f64>,
        series: &ThetaSeries<f64>,
        want: impl Fn(f64) -> f64,
        tol: f64,
        label: &str,
    ) {
        let _ = avg;
        for i in 0..PSI_GRID {
            let psi = 2.0 * std::f64::consts::PI * i as f64 / PSI_GRID as f64;
            let got = series.eval(psi);
            let expect = want(psi);
            assert!(
                (got - expect).abs() < tol,
                "{label} at psi={psi}: got {got}, want {expect}"
            );
        }
    }

    #[test]
    fn ex1_p1_s1_matches_closed_forms() {
        let (a0, b0, c0, c1, s2) = (0.03, -0.11, 0.21, 0.63, 0.05);
        let spec = ex1(&Ex1Params { a0, b0, c0, c1, s2, s0: 1.0, p: 1, ..Default::default() })
            .unwrap();
        let avg = avg_for(&spec, 2);
        assert_eq!((avg.n, avg.m), (2, 2));
        assert_eq!(avg.shape, Shape::Linear);
        // first order vanishes identically
        for i in 0..avg.r_grid.len() {
            assert!(avg.lambda[0].series[i].max_abs(32) < 1e-12);
            assert!(avg.omega[0].series[i].max_abs(32) < 1e-12);
        }
        let lam = |psi: f64| {
            (16.0 * b0 + 6.0 * c0 * c0 + 3.0 * c1 * c1 + 2.0 * c1 * c1 * (2.0 * psi).cos()) / 32.0
        };
        let om = |psi: f64| -(8.0 * a0 + 16.0 * s2 + c1 * c1 * (2.0 * psi).sin()) / 16.0;
        assert_series_matches(&avg, &avg.lambda_n, lam, 1e-10, "lambda_2");
        assert_series_matches(&avg, &avg.omega_m0, om, 1e-10, "omega_20");
        // omega_{2,1} vanishes for the linear system
        assert!(avg.omega_m1.max_abs(32) < 1e-8);
        // full Lambda_2 is exactly linear in v: check at a large radius
        let psi = 0.77;
        let v = 0.9;
        assert!((avg.eval_lambda(2, v, psi) - v * lam(psi)).abs() < 1e-9);
    }

    #[test]
    fn ex1_p1_s2_matches_closed_forms() {
        let (a0, a1, b0, b1, c0, c1, s2) = (0.02, 0.31, -0.07, 0.17, 0.17, 0.41, -0.03);
        let spec =
            ex1(&Ex1Params { a0, a1, b0, b1, c0, c1, s2, s0: 2.0, p: 1 }).unwrap();
        let avg = avg_for(&spec, 2);
        assert_eq!((avg.n, avg.m), (2, 2));
        let lam = |psi: f64| {
            (32.0 * b0 + 12.0 * c0 * c0 + 6.0 * c1 * c1 + c1 * c1 * (4.0 * psi).cos()
                - 16.0 * (a1 * (2.0 * psi).sin() + (b1 - c0 * c1) * (2.0 * psi).cos()))
                / 64.0
        };
        let om = |psi: f64| {
            -(16.0 * (a0 + s2)
                + c1 * c1 * (4.0 * psi).sin()
                + 8.0 * (a1 * (2.0 * psi).cos() - (b1 - c0 * c1) * (2.0 * psi).sin()))
                / 32.0
        };
        assert_series_matches(&avg, &avg.lambda_n, lam, 1e-10, "lambda_2 (s0=2)");
        assert_series_matches(&avg, &avg.omega_m0, om, 1e-10, "omega_20 (s0=2)");
    }

    #[test]
    fn ex1_p1_s3_matches_constants() {
        let (a0, b0, c0, c1, s2) = (0.4, -0.13, 0.11, 0.57, 0.09);
        let spec = ex1(&Ex1Params { a0, b0, c0, c1, s2, s0: 3.0, p: 1, ..Default::default() })
            .unwrap();
        let avg = avg_for(&spec, 2);
        let lam = (16.0 * b0 + 6.0 * c0 * c0 + 3.0 * c1 * c1) / 32.0;
        let om = -(3.0 * a0 + 2.0 * s2) / 6.0;
        assert_series_matches(&avg, &avg.lambda_n, |_| lam, 1e-10, "lambda_2 (s0=3)");
        assert_series_matches(&avg, &avg.omega_m0, |_| om, 1e-10, "omega_20 (s0=3)");
    }

    #[test]
    fn ex1_p2_s1_matches_closed_forms() {
        let (a0, b0, s2) = (0.27, -0.33, 0.12);
        let spec = ex1(&Ex1Params { a0, b0, s2, c1: 0.5, s0: 1.0, p: 2, ..Default::default() })
            .unwrap();
        let avg = avg_for(&spec, 1);
        assert_eq!((avg.n, avg.m), (1, 1));
        assert_eq!(avg.shape, Shape::Linear);
        assert_series_matches(&avg, &avg.lambda_n, |_| b0 / 2.0, 1e-10, "lambda_1 (p=2)");
        assert_series_matches(
            &avg,
            &avg.omega_m0,
            |_| -(a0 + 2.0 * s2) / 2.0,
            1e-10,
            "omega_10 (p=2)",
        );
    }

    #[test]
    fn ex1_p2_s2_matches_derived_forms() {
        // The deterministic parts of lambda_1 and omega_{1,0} must agree with
        // the c = 0 limit of the p = 1, s0 = 2 closed forms (the two printed
        // displays share their deterministic terms).
        let (a0, a1, b0, b1, s2) = (0.05, 2.0, -0.21, 0.9, 0.04);
        let spec = ex1(&Ex1Params { a0, a1, b0, b1, s2, s0: 2.0, p: 2, ..Default::default() })
            .unwrap();
        let avg = avg_for(&spec, 1);
        assert_eq!((avg.n, avg.m), (1, 1));
        let d1 = (a1 * a1 + b1 * b1).sqrt();
        let del1 = b1.atan2(a1);
        let lam = |psi: f64| (2.0 * b0 - d1 * (2.0 * psi + del1).sin()) / 4.0;
        let om = |psi: f64| -(2.0 * (a0 + s2) + d1 * (2.0 * psi + del1).cos()) / 4.0;
        assert_series_matches(&avg, &avg.lambda_n, lam, 1e-10, "lambda_1 (p=2, s0=2)");
        assert_series_matches(&avg, &avg.omega_m0, om, 1e-10, "omega_10 (p=2, s0=2)");
    }

    #[test]
    fn ex2_matches_closed_forms_including_finite_amplitude() {
        let p = Ex2Params {
            a0: -1.0,
            a1: 0.8,
            b0: 0.05,
            b1: 0.6,
            c0: 0.15,
            c1: 0.5,
            s1: 0.7,
            s2: 0.11,
        };
        let spec = ex2(&p).unwrap();
        let avg = avg_for(&spec, 2);
        assert_eq!((avg.n, avg.m), (1, 1));
        assert_eq!(avg.shape, Shape::StrictlyNonlinear);
        assert_eq!((avg.h, avg.l), (3, 1));
        // lambda_{1,3} = a0/4
        assert_series_matches(&avg, &avg.lambda_n, |_| p.a0 / 4.0, 1e-8, "lambda_13");
        // Omega_1 = -s1/2
        assert_series_matches(&avg, &avg.omega0[0], |_| -p.s1 / 2.0, 1e-10, "omega_10");
        // small-amplitude lambda_2, omega_{2,0}
        let lam2 = |psi: f64| {
            (48.0 * p.b0
                + 18.0 * p.c0 * p.c0
                + 9.0 * p.c1 * p.c1
                + 6.0 * p.c1 * p.c1 * (2.0 * psi).cos())
                / 96.0
        };
        let om2 =
            |psi: f64| -p.s2 - p.c1 * p.c1 * (2.0 * psi).sin() / 16.0;
        assert_series_matches(
            &avg,
            avg.lambda_nl.as_ref().unwrap(),
            lam2,
            1e-7,
            "lambda_2 small-v",
        );
        assert_series_matches(&avg, &avg.omega0[1], om2, 1e-7, "omega_20 small-v");

        // full finite-amplitude tables against the rational closed forms
        for &v in &[0.25f64, 0.6] {
            let den = 1.0 + 2.0 * v * v;
            for i in 0..24 {
                let psi = 0.26 * i as f64;
                let lam1_full = p.a0 * v.powi(3) / (4.0 * den);
                assert!(
                    (avg.eval_lambda(1, v, psi) - lam1_full).abs() < 1e-7,
                    "Lambda_1({v},{psi})"
                );
                let lam2_full = v / 96.0
                    * (48.0 * p.b0
                        + 18.0 * p.c0 * p.c0
                        + 9.0 * p.c1 * p.c1
                        + 6.0 * p.c1 * p.c1 * (2.0 * psi).cos()
                        - 2.0 * p.a1 * p.a1 * v.powi(4) * (2.0 * psi).sin() / (den * den));
                assert!(
                    (avg.eval_lambda(2, v, psi) - lam2_full).abs() < 2e-6,
                    "Lambda_2({v},{psi}): {} vs {lam2_full}",
                    avg.eval_lambda(2, v, psi)
                );
                let om2_full = -p.s2
                    - p.c1 * p.c1 * (2.0 * psi).sin() / 16.0
                    - v.powi(4)
                        * (165.0 * p.a0 * p.a0 + 104.0 * p.a1 * p.a1
                            - 20.0 * p.a1 * p.a1 * (2.0 * psi).cos()
                            + 12.0
                                * v
                                * v
                                * (25.0 * p.a0 * p.a0
                                    + 16.0 * p.a1 * p.a1
                                    + 5.0 * p.a1 * p.a1 * (2.0 * psi).cos()))
                        / (960.0 * den.powi(3));
                assert!(
                    (avg.eval_omega(2, v, psi) - om2_full).abs() < 2e-6,
                    "Omega_2({v},{psi}): {} vs {om2_full}",
                    avg.eval_omega(2, v, psi)
                );
            }
        }
    }

    #[test]
    fn polar_field_first_order_oracle_for_reindexed_linear_system() {
        // q = 1 system: f_{1,1} = R (-(a(S)/2) sin(2 theta + 2S/kappa)
        //                            + b(S) sin^2(theta + S/kappa))
        let (a0, a1, b0, b1) = (0.2, 1.1, -0.4, 0.55);
        let spec = ex1(&Ex1Params { a0, a1, b0, b1, s0: 2.0, p: 2, ..Default::default() })
            .unwrap();
        let chart = build_chart(&spec, 8).unwrap();
        let params = AveragingParams::default();
        let r = 0.37;
        let fields = polar_fields(&spec, &chart, 0, &[r], &params).unwrap();
        let kap = 2.0;
        for i in 0..12 {
            let th = 0.5 * i as f64;
            let s = 0.83 * i as f64;
            let a = a0 + a1 * s.cos();
            let b = b0 + b1 * s.cos();
            let want = r * (-(a / 2.0) * (2.0 * th + 2.0 * s / kap).sin()
                + b * (th + s / kap).sin().powi(2));
            let got = fields.f1[0][0].eval(th, s);
            assert!((got - want).abs() < 1e-10, "f11({th},{s}): {got} vs {want}");
        }
    }

    #[test]
    fn polar_fields_order_bookkeeping_for_p1_noise() {
        // ex1(p=1): deterministic drift sits at k = 2, noise at k = 1, so
        // f_{1,1} = 0 while the gamma fields at k = 1 are nonzero.
        let spec = ex1(&Ex1Params { b0: -1.0, c1: 1.0, s0: 1.0, p: 1, ..Default::default() })
            .unwrap();
        let chart = build_chart(&spec, 8).unwrap();
        let fields =
            polar_fields(&spec, &chart, 0, &[0.3], &AveragingParams::default()).unwrap();
        assert!(fields.f1[0][0].max_coeff_abs() < 1e-12);
        assert!(fields.gamma1[0][0][1].max_coeff_abs() > 0.01);
        assert!(fields.gamma2[0][0][1].max_coeff_abs() > 0.01);
    }

    #[test]
    fn zero_perturbation_yields_zero_fields_and_degenerate_fit() {
        let spec = ex0(&Ex0Params { b0: 0.0, c1: 0.0, p: 1, s0: 1.0 }).unwrap();
        let chart = build_chart(&spec, 8).unwrap();
        let fields =
            polar_fields(&spec, &chart, 0, &[0.2, 0.5], &AveragingParams::default()).unwrap();
        for r_entry in &fields.f1 {
            for f in r_entry {
                assert!(f.max_coeff_abs() < 1e-14);
            }
        }
        let err = averaged_system(&spec, &chart, 0, 2, &AveragingParams::default());
        assert!(matches!(err, Err(Error::Degenerate(_))));
    }

    #[test]
    fn rejects_unsupported_configuration() {
        let spec = ex0(&Ex0Params { b0: -1.0, c1: 1.0, p: 1, s0: 1.0 }).unwrap();
        let chart = build_chart(&spec, 8).unwrap();
        assert!(matches!(
            averaged_system(&spec, &chart, 0, 3, &AveragingParams::default()),
            Err(Error::UnsupportedOrder(3))
        ));
        assert!(matches!(
            averaged_system(&spec, &chart, 1, 2, &AveragingParams::default()),
            Err(Error::UnsupportedWellIndex(1))
        ));
        assert!(matches!(
            polar_fields(&spec, &chart, 0, &[0.0, 0.1], &AveragingParams::default()),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn transform_is_zero_mean_and_solves_homological_equation() {
        let spec = ex2(&Ex2Params {
            a0: -1.0,
            a1: 0.8,
            b0: 0.05,
            b1: 0.6,
            c1: 0.5,
            s1: 0.7,
            ..Default::default()
        })
        .unwrap();
        let avg = avg_for(&spec, 2);
        for k in 0..2 {
            for tab in [&avg.transform.v[k], &avg.transform.psi[k]] {
                for h2 in tab.iter().step_by(7) {
                    assert!(h2.s_mean().max_abs(32) < 1e-10);
                }
            }
        }
    }

    #[test]
    fn gauge_consistency_under_mode_doubling() {
        let spec = ex1(&Ex1Params {
            a0: 0.1,
            a1: 0.4,
            b0: -0.2,
            b1: 0.3,
            c0: 0.1,
            c1: 0.6,
            s0: 2.0,
            s2: 0.05,
            p: 1,
        })
        .unwrap();
        let chart = build_chart(&spec, 8).unwrap();
        let p1 = AveragingParams { r_points: 12, ..Default::default() };
        let p2 = AveragingParams {
            theta_modes: 16,
            s_modes_per_kappa: 16,
            r_points: 12,
            ..Default::default()
        };
        let a1 = averaged_system(&spec, &chart, 0, 2, &p1).unwrap();
        let a2 = averaged_system(&spec, &chart, 0, 2, &p2).unwrap();
        for i in 0..PSI_GRID {
            let psi = 2.0 * std::f64::consts::PI * i as f64 / PSI_GRID as f64;
            assert!((a1.lambda_n.eval(psi) - a2.lambda_n.eval(psi)).abs() < 1e-8);
            assert!((a1.omega_m0.eval(psi) - a2.omega_m0.eval(psi)).abs() < 1e-8);
        }
    }

    #[test]
    fn numeric_chart_agrees_with_analytic_chart() {
        let spec = ex0(&Ex0Params { b0: -0.3, c1: 1.0, p: 1, s0: 1.0 }).unwrap();
        let mut numeric = spec.clone();
        numeric.harmonic = false;
        numeric.energy_cap = 2.0;
        let chart_a = build_chart(&spec, 8).unwrap();
        let chart_n = build_chart(&numeric, 16).unwrap();
        let params = AveragingParams { r_points: 10, r_max: 0.9, ..Default::default() };
        let av_a = averaged_system(&spec, &chart_a, 0, 2, &params).unwrap();
        let av_n = averaged_system(&numeric, &chart_n, 0, 2, &params).unwrap();
        for i in 0..32 {
            let psi = 2.0 * std::f64::consts::PI * i as f64 / 32.0;
            assert!(
                (av_a.lambda_n.eval(psi) - av_n.lambda_n.eval(psi)).abs() < 2e-5,
                "lambda mismatch at {psi}"
            );
            assert!(
                (av_a.omega_m0.eval(psi) - av_n.omega_m0.eval(psi)).abs() < 2e-5,
                "omega mismatch at {psi}"
            );
        }
    }

    #[test]
    fn fourier_tail_is_negligible_for_builtin_systems() {
        let spec = ex2(&Ex2Params { a0: -1.0, a1: 1.0, b1: 1.0, c1: 0.5, ..Default::default() })
            .unwrap();
        let chart = build_chart(&spec, 8).unwrap();
        let fields =
            polar_fields(&spec, &chart, 0, &[0.4], &AveragingParams::default()).unwrap();
        for f in fields.f1[0].iter().chain(fields.f2[0].iter()) {
            let cut_j = f.jmax / 2;
            let cut_k = f.kmax / 2;
            assert!(f.tail_energy(cut_j, cut_k) < 1e-16);
        }
    }
}

/// Constant and linear parts of `Omega(v)` via a quadratic fit through the
/// probe radii.
fn fit_const_linear<T: Real>(
    series: &[ThetaSeries<T>],
    grid: &[T],
    pidx: &[usize],
) -> (ThetaSeries<T>, ThetaSeries<T>) {
    let (ra, sa) = (grid[pidx[0]], &series[pidx[0]]);
    let (rb, sb) = (grid[pidx[1]], &series[pidx[1]]);
    let (rc, sc) = (grid[pidx[2]], &series[pidx[2]]);
    let jmax = sa.jmax;
    let mut w0 = ThetaSeries::zero(jmax);
    let mut w1 = ThetaSeries::zero(jmax);
    for j in -(jmax as isize)..=(jmax as isize) {
        let ya = sa.coeff(j);
        let yb = sb.coeff(j);
        let yc = sc.coeff(j);
        let den_a = (ra - rb) * (ra - rc);
        let den_b = (rb - ra) * (rb - rc);
        let den_c = (rc - ra) * (rc - rb);
        // p(v) = sum y_i prod (v - r_j) / den_i; p(0) and p'(0)
        let p0 = ya * ((rb * rc) / den_a)
            + yb * ((ra * rc) / den_b)
            + yc * ((ra * rb) / den_c);
        let p1 = ya * ((-(rb + rc)) / den_a)
            + yb * ((-(ra + rc)) / den_b)
            + yc * ((-(ra + rb)) / den_c);
        let id = (j + jmax as isize) as usize;
        w0.c[id] = p0;
        w1.c[id] = p1;
    }
    (w0, w1)
}
