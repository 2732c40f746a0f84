//! The builtin example systems: a linear oscillator with damped oscillatory
//! noise (`ex0`, `ex1`) and a nonlinear one with a saturated cubic term
//! (`ex2`). All have `H = |x|^2/2`, `nu = 1`, `ell = 0`.

use super::{PerturbationTerm, PhaseSchedule, PlanarState, SystemSpec};
use crate::error::{Error, Result};
use crate::scalar::Real;
use std::sync::Arc;

const DOMAIN_RADIUS: f64 = 4.0;
const ENERGY_CAP: f64 = 4.0;

#[derive(Debug, Clone, Copy)]
pub struct Ex0Params {
    pub b0: f64,
    pub c1: f64,
    pub p: u32,
    pub s0: f64,
}

impl Default for Ex0Params {
    fn default() -> Self {
        Self { b0: 0.0, c1: 0.0, p: 1, s0: 1.0 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Ex1Params {
    pub a0: f64,
    pub a1: f64,
    pub b0: f64,
    pub b1: f64,
    pub c0: f64,
    pub c1: f64,
    pub s0: f64,
    /// Coefficient of `log t` in the fast phase.
    pub s2: f64,
    /// Noise decay: the diffusion scales as `t^(-p/2)`, `p` in {1, 2}.
    pub p: u32,
}

impl Default for Ex1Params {
    fn default() -> Self {
        Self { a0: 0.0, a1: 0.0, b0: 0.0, b1: 0.0, c0: 0.0, c1: 0.0, s0: 1.0, s2: 0.0, p: 1 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Ex2Params {
    pub a0: f64,
    pub a1: f64,
    pub b0: f64,
    pub b1: f64,
    pub c0: f64,
    pub c1: f64,
    /// Coefficient of `sqrt(t)` in the fast phase.
    pub s1: f64,
    /// Coefficient of `log t` in the fast phase.
    pub s2: f64,
}

impl Default for Ex2Params {
    fn default() -> Self {
        Self { a0: 0.0, a1: 0.0, b0: 0.0, b1: 0.0, c0: 0.0, c1: 0.0, s1: 0.0, s2: 0.0 }
    }
}

fn harmonic_h<T: Real>() -> (super::ScalarField<T>, super::VectorField<T>) {
    let h: super::ScalarField<T> =
        Arc::new(|x: &PlanarState<T>| (x.x1 * x.x1 + x.x2 * x.x2) / T::of(2.0));
    let g: super::VectorField<T> = Arc::new(|x: &PlanarState<T>| [x.x1, x.x2]);
    (h, g)
}

fn integer_kappa(s0: f64) -> Result<u32> {
    let k = s0.round();
    if k < 1.0 || (s0 - k).abs() > 1e-12 {
        return Err(Error::Parameter(format!(
            "resonance requires s0 = kappa * nu(0) with integer kappa >= 1; got s0 = {s0}"
        )));
    }
    Ok(k as u32)
}

/// Builds the linear example. With `p = 1` the decay denominator is `q = 2`
/// (deterministic term at order 2, noise at order 1). With `p = 2` every
/// term decays like `t^-1`, so the series is indexed with `q = 1` and both
/// terms sit at order 1; the time exponents `k/q`, `2p/q` are unchanged.
pub fn ex1<T: Real>(params: &Ex1Params) -> Result<SystemSpec<T>> {
    if params.p != 1 && params.p != 2 {
        return Err(Error::Parameter(format!("ex1 needs p in {{1, 2}}, got {}", params.p)));
    }
    let kappa = integer_kappa(params.s0)?;
    let (a0, a1) = (params.a0, params.a1);
    let (b0, b1) = (params.b0, params.b1);
    let (c0, c1) = (params.c0, params.c1);

    let det: super::DriftCoeff<T> = Arc::new(move |x: &PlanarState<T>, s: T| {
        let a = T::of(a0) + T::of(a1) * s.cos();
        let b = T::of(b0) + T::of(b1) * s.cos();
        [T::zero(), a * x.x1 + b * x.x2]
    });
    let noise: super::DiffusionCoeff<T> = Arc::new(move |x: &PlanarState<T>, s: T| {
        let c = T::of(c0) + T::of(c1) * s.cos();
        [[T::zero(), T::zero()], [T::zero(), c * x.x1]]
    });

    let (schedule, det_order, noise_k, trunc) = if params.p == 1 {
        (
            PhaseSchedule::new(2, vec![T::of(params.s0), T::zero(), T::of(params.s2)], kappa)?,
            2,
            1,
            2,
        )
    } else {
        (
            PhaseSchedule::new(1, vec![T::of(params.s0), T::of(params.s2)], kappa)?,
            1,
            1,
            1,
        )
    };

    let (h, g) = harmonic_h();
    let spec = SystemSpec {
        hamiltonian: h,
        hamiltonian_gradient: g,
        schedule,
        terms: vec![
            PerturbationTerm::drift_only(det_order, det),
            PerturbationTerm::diffusion_only(noise_k, noise),
        ],
        truncation_order: trunc,
        domain_radius: T::of(DOMAIN_RADIUS),
        energy_cap: T::of(ENERGY_CAP),
        noise_order: 1,
        well_index: 0,
        nu0: T::one(),
        harmonic: true,
    };
    spec.validate()?;
    Ok(spec)
}

/// `ex0` is `ex1` with `a0 = a1 = b1 = c0 = s2 = 0`.
pub fn ex0<T: Real>(params: &Ex0Params) -> Result<SystemSpec<T>> {
    ex1(&Ex1Params {
        b0: params.b0,
        c1: params.c1,
        s0: params.s0,
        p: params.p,
        ..Default::default()
    })
}

/// Builds the nonlinear example: saturated cubic drift at order 1, linear
/// damping at order 2, noise at order 1; `S(t) = t + s1 sqrt(t) + s2 log t`.
pub fn ex2<T: Real>(params: &Ex2Params) -> Result<SystemSpec<T>> {
    let (a0, a1) = (params.a0, params.a1);
    let (b0, b1) = (params.b0, params.b1);
    let (c0, c1) = (params.c0, params.c1);

    let cubic: super::DriftCoeff<T> = Arc::new(move |x: &PlanarState<T>, s: T| {
        let a = T::of(a0) + T::of(a1) * s.cos();
        let n2 = x.x1 * x.x1 + x.x2 * x.x2;
        [T::zero(), a * x.x1 * x.x1 * x.x2 / (T::one() + n2)]
    });
    let damping: super::DriftCoeff<T> = Arc::new(move |x: &PlanarState<T>, s: T| {
        let b = T::of(b0) + T::of(b1) * s.cos();
        [T::zero(), b * x.x2]
    });
    let noise: super::DiffusionCoeff<T> = Arc::new(move |x: &PlanarState<T>, s: T| {
        let c = T::of(c0) + T::of(c1) * s.cos();
        [[T::zero(), T::zero()], [T::zero(), c * x.x1]]
    });

    let schedule = PhaseSchedule::new(2, vec![T::one(), T::of(params.s1), T::of(params.s2)], 1)?;
    let (h, g) = harmonic_h();
    let spec = SystemSpec {
        hamiltonian: h,
        hamiltonian_gradient: g,
        schedule,
        terms: vec![
            PerturbationTerm::drift_only(1, cubic),
            PerturbationTerm::drift_only(2, damping),
            PerturbationTerm::diffusion_only(1, noise),
        ],
        truncation_order: 2,
        domain_radius: T::of(DOMAIN_RADIUS),
        energy_cap: T::of(ENERGY_CAP),
        noise_order: 1,
        well_index: 0,
        nu0: T::one(),
        harmonic: true,
    };
    spec.validate()?;
    Ok(spec)
}
