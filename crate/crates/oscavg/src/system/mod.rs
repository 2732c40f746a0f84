//! The perturbed-system model: limiting Hamiltonian plus an asymptotic
//! perturbation series in powers `t^(-k/q)` with oscillatory coefficients.

pub mod builtin;

use crate::error::{Error, Result};
use crate::scalar::Real;
use std::sync::Arc;

/// A point of the plane, position-like `x1` and momentum-like `x2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarState<T> {
    pub x1: T,
    pub x2: T,
}

impl<T: Real> PlanarState<T> {
    pub fn new(x1: T, x2: T) -> Self {
        Self { x1, x2 }
    }

    pub fn origin() -> Self {
        Self { x1: T::zero(), x2: T::zero() }
    }

    pub fn norm(&self) -> T {
        (self.x1 * self.x1 + self.x2 * self.x2).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.x2.is_finite()
    }
}

/// The fast phase `S(t) = sum_{k<q} s_k t^(1-k/q) + s_q log t` together with
/// its resonance data.
#[derive(Debug, Clone)]
pub struct PhaseSchedule<T> {
    /// Decay denominator `q >= 1`.
    pub q: u32,
    /// Coefficients `s_0 ... s_q` (the last one multiplies `log t`).
    pub s: Vec<T>,
    /// Resonance multiple `kappa` with `s_0 = kappa * nu(0)`.
    pub resonance_multiple: u32,
}

impl<T: Real> PhaseSchedule<T> {
    pub fn new(q: u32, s: Vec<T>, resonance_multiple: u32) -> Result<Self> {
        if q == 0 {
            return Err(Error::Parameter("schedule needs q >= 1".into()));
        }
        if s.len() != q as usize + 1 {
            return Err(Error::Parameter(format!(
                "schedule needs q+1 = {} coefficients, got {}",
                q + 1,
                s.len()
            )));
        }
        if resonance_multiple == 0 {
            return Err(Error::Parameter("resonance multiple must be positive".into()));
        }
        Ok(Self { q, s, resonance_multiple })
    }

    /// Checks the resonance condition `s_0 = kappa * nu(0)`.
    pub fn check_resonance(&self, nu0: T) -> Result<()> {
        let target = T::of_usize(self.resonance_multiple as usize) * nu0;
        if (self.s[0] - target).abs() > T::of(1e-12) {
            return Err(Error::Parameter(format!(
                "resonance condition violated: s0 = {} but kappa*nu(0) = {}",
                self.s[0], target
            )));
        }
        Ok(())
    }

    /// `S(t)` for `t > 0`.
    pub fn eval(&self, t: T) -> T {
        let q = T::of_usize(self.q as usize);
        let mut acc = T::zero();
        for (k, &sk) in self.s.iter().enumerate().take(self.q as usize) {
            let e = T::one() - T::of_usize(k) / q;
            acc = acc + sk * t.powf(e);
        }
        acc + self.s[self.q as usize] * t.ln()
    }

    /// `S'(t)`.
    pub fn eval_derivative(&self, t: T) -> T {
        let q = T::of_usize(self.q as usize);
        let mut acc = T::zero();
        for (k, &sk) in self.s.iter().enumerate().take(self.q as usize) {
            let e = T::one() - T::of_usize(k) / q;
            acc = acc + sk * e * t.powf(e - T::one());
        }
        acc + self.s[self.q as usize] / t
    }

    /// Coefficient `s_k`, zero past the stored range (`s_j = 0` for `j > q`).
    pub fn coeff(&self, k: usize) -> T {
        self.s.get(k).copied().unwrap_or_else(T::zero)
    }
}

pub type DriftCoeff<T> = Arc<dyn Fn(&PlanarState<T>, T) -> [T; 2] + Send + Sync>;
pub type DiffusionCoeff<T> = Arc<dyn Fn(&PlanarState<T>, T) -> [[T; 2]; 2] + Send + Sync>;
pub type ScalarField<T> = Arc<dyn Fn(&PlanarState<T>) -> T + Send + Sync>;
pub type VectorField<T> = Arc<dyn Fn(&PlanarState<T>) -> [T; 2] + Send + Sync>;

/// One term of the perturbation series: coefficients `a_k(x, S)` and
/// `A_k(x, S)`, both 2*pi-periodic in `S` and vanishing at the origin.
#[derive(Clone)]
pub struct PerturbationTerm<T> {
    pub order: u32,
    pub drift_coeff: DriftCoeff<T>,
    pub diffusion_coeff: DiffusionCoeff<T>,
}

impl<T: Real> PerturbationTerm<T> {
    pub fn drift_only(order: u32, f: DriftCoeff<T>) -> Self {
        Self {
            order,
            drift_coeff: f,
            diffusion_coeff: Arc::new(|_, _| [[T::zero(); 2]; 2]),
        }
    }

    pub fn diffusion_only(order: u32, g: DiffusionCoeff<T>) -> Self {
        Self {
            order,
            drift_coeff: Arc::new(|_, _| [T::zero(); 2]),
            diffusion_coeff: g,
        }
    }
}

/// The perturbed Ito system. Immutable after construction and safely
/// shareable across workers; all evaluation methods are pure.
#[derive(Clone)]
pub struct SystemSpec<T> {
    pub hamiltonian: ScalarField<T>,
    pub hamiltonian_gradient: VectorField<T>,
    pub schedule: PhaseSchedule<T>,
    pub terms: Vec<PerturbationTerm<T>>,
    /// Highest order `k` evaluated when summing the series.
    pub truncation_order: u32,
    /// Radius `r0` of the ball the model is defined on.
    pub domain_radius: T,
    /// Energy cap `E0`: level sets `H = E` are closed for `E in (0, E0]`.
    pub energy_cap: T,
    /// Noise decay order `p` entering the bound `tr(A^T A) <= mu^2 t^(-2p/q) |x|^2`.
    pub noise_order: u32,
    /// Scaling exponent `ell`; 0 whenever `nu(E)` is constant.
    pub well_index: u32,
    /// Limit frequency `nu(0)`; 1 for all builtin systems.
    pub nu0: T,
    /// Marks `H = |x|^2/2`, enabling the closed-form chart.
    pub harmonic: bool,
}

impl<T: Real> SystemSpec<T> {
    fn check_domain(&self, x: &PlanarState<T>) -> Result<()> {
        let n = x.norm();
        if !n.is_finite() || n > self.domain_radius {
            return Err(Error::DomainExceeded {
                norm: n.lossy_f64(),
                radius: self.domain_radius.lossy_f64(),
            });
        }
        Ok(())
    }

    /// Hamiltonian vector field `a_0(x) = (d_{x2} H, -d_{x1} H)`.
    pub fn limiting_field(&self, x: &PlanarState<T>) -> [T; 2] {
        let g = (self.hamiltonian_gradient)(x);
        [g[1], -g[0]]
    }

    /// Full drift `a(x, t)` truncated at `truncation_order`.
    pub fn eval_drift(&self, x: &PlanarState<T>, t: T) -> Result<[T; 2]> {
        self.check_domain(x)?;
        let s = self.schedule.eval(t);
        Ok(self.drift_with_phase(x, t, s))
    }

    /// Drift with the fast phase supplied explicitly (used by quadrature
    /// sweeps where `S` is a free variable).
    pub fn drift_with_phase(&self, x: &PlanarState<T>, t: T, s: T) -> [T; 2] {
        let mut a = self.limiting_field(x);
        let q = T::of_usize(self.schedule.q as usize);
        for term in &self.terms {
            if term.order > self.truncation_order {
                continue;
            }
            let w = t.powf(-T::of_usize(term.order as usize) / q);
            let ak = (term.drift_coeff)(x, s);
            a[0] = a[0] + w * ak[0];
            a[1] = a[1] + w * ak[1];
        }
        a
    }

    /// Full diffusion matrix `A(x, t)` truncated at `truncation_order`.
    pub fn eval_diffusion(&self, x: &PlanarState<T>, t: T) -> Result<[[T; 2]; 2]> {
        self.check_domain(x)?;
        let s = self.schedule.eval(t);
        Ok(self.diffusion_with_phase(x, t, s))
    }

    pub fn diffusion_with_phase(&self, x: &PlanarState<T>, t: T, s: T) -> [[T; 2]; 2] {
        let mut m = [[T::zero(); 2]; 2];
        let q = T::of_usize(self.schedule.q as usize);
        for term in &self.terms {
            if term.order > self.truncation_order {
                continue;
            }
            let w = t.powf(-T::of_usize(term.order as usize) / q);
            let mk = (term.diffusion_coeff)(x, s);
            for i in 0..2 {
                for j in 0..2 {
                    m[i][j] = m[i][j] + w * mk[i][j];
                }
            }
        }
        m
    }

    /// Sum of order-`k` drift coefficients `a_k(x, S)`.
    pub fn drift_order(&self, k: u32, x: &PlanarState<T>, s: T) -> [T; 2] {
        let mut a = [T::zero(); 2];
        for term in self.terms.iter().filter(|t| t.order == k) {
            let ak = (term.drift_coeff)(x, s);
            a[0] = a[0] + ak[0];
            a[1] = a[1] + ak[1];
        }
        a
    }

    /// Sum of order-`k` diffusion coefficients `A_k(x, S)`.
    pub fn diffusion_order(&self, k: u32, x: &PlanarState<T>, s: T) -> [[T; 2]; 2] {
        let mut m = [[T::zero(); 2]; 2];
        for term in self.terms.iter().filter(|t| t.order == k) {
            let mk = (term.diffusion_coeff)(x, s);
            for i in 0..2 {
                for j in 0..2 {
                    m[i][j] = m[i][j] + mk[i][j];
                }
            }
        }
        m
    }

    /// Validates the model invariants that are checkable numerically:
    /// `H(0,0) = 0`, `H = |x|^2/2 + O(|x|^3)` near zero, and the resonance
    /// condition on the schedule.
    pub fn validate(&self) -> Result<()> {
        self.schedule.check_resonance(self.nu0)?;
        let h0 = (self.hamiltonian)(&PlanarState::origin());
        if h0.abs() > T::of(1e-12) {
            return Err(Error::Parameter(format!("H(0,0) = {} must vanish", h0)));
        }
        for &r in &[T::of(1e-3), T::of(1e-4)] {
            for &ang in &[T::zero(), T::of(1.1), T::of(2.7), T::of(4.2)] {
                let x = PlanarState::new(r * ang.cos(), r * ang.sin());
                let h = (self.hamiltonian)(&x);
                let lead = r * r / T::of(2.0);
                // |H - |x|^2/2| <= C |x|^3 with a generous C
                if (h - lead).abs() > T::of(10.0) * r * r * r {
                    return Err(Error::Parameter(format!(
                        "H is not |x|^2/2 + O(|x|^3) near the origin: H({},{}) = {}",
                        x.x1, x.x2, h
                    )));
                }
            }
        }
        Ok(())
    }
}
