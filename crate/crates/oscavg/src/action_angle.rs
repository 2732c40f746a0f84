//! The chart chain `(x1,x2) <-> (E,phi) <-> (R,theta)` for the limiting
//! Hamiltonian: closed forms for the harmonic case, a tabulated orbit chart
//! for general `H`.

use crate::error::{Error, Result};
use crate::scalar::{wrap_angle, wrap_angle_positive, Real};
use crate::system::{PhaseSchedule, PlanarState, ScalarField, SystemSpec, VectorField};
use std::io::{BufRead, Write};
use std::path::Path;

/// Periodic cubic spline on a uniform grid over `[0, 2*pi)`.
#[derive(Debug, Clone)]
pub struct PeriodicSpline<T> {
    n: usize,
    h: T,
    y: Vec<T>,
    /// Second derivatives at the knots.
    m: Vec<T>,
}

impl<T: Real> PeriodicSpline<T> {
    pub fn new(y: Vec<T>) -> Self {
        let n = y.len();
        assert!(n >= 3);
        let h = T::of(2.0) * T::PI() / T::of_usize(n);
        // cyclic tridiagonal system (1, 4, 1) m = d
        let d: Vec<T> = (0..n)
            .map(|i| {
                let ym = y[(i + n - 1) % n];
                let y0 = y[i];
                let yp = y[(i + 1) % n];
                T::of(6.0) * (ym - y0 - y0 + yp) / (h * h)
            })
            .collect();
        let m = solve_cyclic_tridiagonal(T::one(), T::of(4.0), T::one(), &d);
        Self { n, h, y, m }
    }

    #[inline]
    fn locate(&self, phi: T) -> (usize, usize, T) {
        let p = wrap_angle_positive(phi);
        let mut i = (p / self.h).floor().lossy_f64() as usize;
        if i >= self.n {
            i = self.n - 1;
        }
        let t = p - T::of_usize(i) * self.h;
        (i, (i + 1) % self.n, t)
    }

    pub fn eval(&self, phi: T) -> T {
        let (i, ip, t) = self.locate(phi);
        let h = self.h;
        let a = (h - t) / h;
        let b = t / h;
        a * self.y[i]
            + b * self.y[ip]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[ip]) * h * h / T::of(6.0)
    }

    pub fn eval_derivative(&self, phi: T) -> T {
        let (i, ip, t) = self.locate(phi);
        let h = self.h;
        let a = (h - t) / h;
        let b = t / h;
        (self.y[ip] - self.y[i]) / h
            + ((T::of(3.0) * b * b - T::one()) * self.m[ip]
                - (T::of(3.0) * a * a - T::one()) * self.m[i])
                * h
                / T::of(6.0)
    }
}

/// Solves the cyclic tridiagonal system with constant bands via
/// Sherman-Morrison on top of the Thomas algorithm.
fn solve_cyclic_tridiagonal<T: Real>(lo: T, diag: T, up: T, d: &[T]) -> Vec<T> {
    let n = d.len();
    let gamma = -diag;
    // modified diagonal
    let mut dd = vec![diag; n];
    dd[0] = diag - gamma;
    dd[n - 1] = diag - lo * up / gamma;
    let solve = |rhs: &[T], dd: &[T]| -> Vec<T> {
        // Thomas
        let mut c = vec![T::zero(); n];
        let mut x = vec![T::zero(); n];
        let mut beta = dd[0];
        x[0] = rhs[0] / beta;
        for i in 1..n {
            c[i] = up / beta;
            beta = dd[i] - lo * c[i];
            x[i] = (rhs[i] - lo * x[i - 1]) / beta;
        }
        for i in (0..n - 1).rev() {
            let xn = x[i + 1];
            x[i] = x[i] - c[i + 1] * xn;
        }
        x
    };
    let x = solve(d, &dd);
    let mut u = vec![T::zero(); n];
    u[0] = gamma;
    u[n - 1] = lo;
    let z = solve(&u, &dd);
    // v = (1, 0, ..., 0, up/gamma)
    let vx = x[0] + up * x[n - 1] / gamma;
    let vz = T::one() + z[0] + up * z[n - 1] / gamma;
    let factor = vx / vz;
    x.iter().zip(z.iter()).map(|(&xi, &zi)| xi - factor * zi).collect()
}

/// Geometry of the chart at a point: gradients and Hessians of `H` and of
/// the angle map `Phi`, plus the local frequency.
#[derive(Debug, Clone, Copy)]
pub struct ChartGeometry<T> {
    pub x: PlanarState<T>,
    pub grad_h: [T; 2],
    pub grad_phi: [T; 2],
    pub hess_h: [[T; 2]; 2],
    pub hess_phi: [[T; 2]; 2],
    pub nu: T,
}

struct NumericOrbit<T> {
    x1: PeriodicSpline<T>,
    x2: PeriodicSpline<T>,
}

/// Tabulated action-angle chart of the limiting system.
pub struct OrbitChart<T> {
    pub analytic: bool,
    pub nu0: T,
    pub energy_cap: T,
    pub energy_grid: Vec<T>,
    pub period_table: Vec<T>,
    pub frequency_table: Vec<T>,
    n_phi: usize,
    /// Normalized orbits `xi(phi) / sqrt(2 E)` per grid energy.
    orbits: Vec<NumericOrbit<T>>,
    hamiltonian: ScalarField<T>,
    gradient: VectorField<T>,
}

const N_PHI: usize = 512;
const RK_SUBSTEPS: usize = 8;

/// Builds the chart. Harmonic specs take the closed-form shortcut; other
/// Hamiltonians get `grid_size` log-spaced energy levels integrated with RK4
/// and a first-return period detector on the section `{x2 = 0, x1 > 0}`.
pub fn build_chart<T: Real>(spec: &SystemSpec<T>, grid_size: usize) -> Result<OrbitChart<T>> {
    let cap = spec.energy_cap;
    if spec.harmonic {
        let two_pi = T::of(2.0) * T::PI();
        let n = grid_size.max(2);
        let grid: Vec<T> = (0..n)
            .map(|i| cap * T::of(1e-5) * (T::of(1e5).powf(T::of_usize(i) / T::of_usize(n - 1))))
            .collect();
        return Ok(OrbitChart {
            analytic: true,
            nu0: T::one(),
            energy_cap: cap,
            energy_grid: grid.clone(),
            period_table: vec![two_pi; n],
            frequency_table: vec![T::one(); n],
            n_phi: N_PHI,
            orbits: vec![],
            hamiltonian: spec.hamiltonian.clone(),
            gradient: spec.hamiltonian_gradient.clone(),
        });
    }

    let n = grid_size.max(4);
    let grid: Vec<T> = (0..n)
        .map(|i| cap * T::of(1e-5) * (T::of(1e5).powf(T::of_usize(i) / T::of_usize(n - 1))))
        .collect();
    let mut periods = Vec::with_capacity(n);
    let mut orbits = Vec::with_capacity(n);
    for &e in &grid {
        let (period, orbit) = integrate_orbit(spec, e)?;
        periods.push(period);
        orbits.push(orbit);
    }
    let freq: Vec<T> = periods.iter().map(|&t| T::of(2.0) * T::PI() / t).collect();
    // nu(E) -> nu0 as E -> 0
    let chart = OrbitChart {
        analytic: false,
        nu0: spec.nu0,
        energy_cap: cap,
        energy_grid: grid,
        period_table: periods,
        frequency_table: freq,
        n_phi: N_PHI,
        orbits,
        hamiltonian: spec.hamiltonian.clone(),
        gradient: spec.hamiltonian_gradient.clone(),
    };
    Ok(chart)
}

fn rk4_step<T: Real>(f: &impl Fn(&PlanarState<T>) -> [T; 2], x: &PlanarState<T>, h: T) -> PlanarState<T> {
    let k1 = f(x);
    let x2 = PlanarState::new(x.x1 + h / T::of(2.0) * k1[0], x.x2 + h / T::of(2.0) * k1[1]);
    let k2 = f(&x2);
    let x3 = PlanarState::new(x.x1 + h / T::of(2.0) * k2[0], x.x2 + h / T::of(2.0) * k2[1]);
    let k3 = f(&x3);
    let x4 = PlanarState::new(x.x1 + h * k3[0], x.x2 + h * k3[1]);
    let k4 = f(&x4);
    PlanarState::new(
        x.x1 + h / T::of(6.0) * (k1[0] + T::of(2.0) * (k2[0] + k3[0]) + k4[0]),
        x.x2 + h / T::of(6.0) * (k1[1] + T::of(2.0) * (k2[1] + k3[1]) + k4[1]),
    )
}

fn integrate_orbit<T: Real>(spec: &SystemSpec<T>, e: T) -> Result<(T, NumericOrbit<T>)> {
    let h_of = |x: &PlanarState<T>| (spec.hamiltonian)(x);
    let field = |x: &PlanarState<T>| spec.limiting_field(x);
    let err = |reason: &str| Error::ChartConstruction {
        energy: e.lossy_f64(),
        reason: reason.to_string(),
    };

    // section point: H(x1, 0) = e with x1 > 0
    let mut lo = T::zero();
    let mut hi = spec.domain_radius;
    if h_of(&PlanarState::new(hi, T::zero())) < e {
        return Err(err("level set not reached inside the domain ball"));
    }
    for _ in 0..200 {
        let mid = (lo + hi) / T::of(2.0);
        if h_of(&PlanarState::new(mid, T::zero())) < e {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x0 = PlanarState::new((lo + hi) / T::of(2.0), T::zero());

    // first return to the section with x2 crossing + -> -
    let t_guess = T::of(2.0) * T::PI() / spec.nu0;
    let h = t_guess / T::of(4096.0);
    let mut x = x0;
    let mut t = T::zero();
    let mut period = None;
    for step in 0..80_000usize {
        let xn = rk4_step(&field, &x, h);
        let tn = t + h;
        if step > 100 && x.x2 > T::zero() && xn.x2 <= T::zero() && xn.x1 > T::zero() {
            // refine the crossing by bisection on the substep length
            let mut a = T::zero();
            let mut b = h;
            for _ in 0..80 {
                let mid = (a + b) / T::of(2.0);
                let xm = rk4_step(&field, &x, mid);
                if xm.x2 > T::zero() {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            period = Some(t + (a + b) / T::of(2.0));
            break;
        }
        x = xn;
        t = tn;
    }
    let period = period.ok_or_else(|| err("orbit did not close (no first return found)"))?;

    // resample one period at uniform angle (= uniform time) nodes
    let amp = (T::of(2.0) * e).sqrt();
    let dt = period / T::of_usize(N_PHI * RK_SUBSTEPS);
    let mut xs1 = Vec::with_capacity(N_PHI);
    let mut xs2 = Vec::with_capacity(N_PHI);
    let mut x = x0;
    for _ in 0..N_PHI {
        xs1.push(x.x1 / amp);
        xs2.push(x.x2 / amp);
        for _ in 0..RK_SUBSTEPS {
            x = rk4_step(&field, &x, dt);
        }
        let drift = (h_of(&x) - e).abs();
        if drift > T::of(1e-9) * (T::one() + e) {
            return Err(err("energy drift along orbit exceeded 1e-9"));
        }
    }
    let closure = ((x.x1 - x0.x1).powi(2) + (x.x2 - x0.x2).powi(2)).sqrt();
    if closure > T::of(1e-7) * (T::one() + amp) {
        return Err(err("orbit failed to close after one period"));
    }
    Ok((period, NumericOrbit { x1: PeriodicSpline::new(xs1), x2: PeriodicSpline::new(xs2) }))
}

impl<T: Real> OrbitChart<T> {
    pub fn hamiltonian(&self, x: &PlanarState<T>) -> T {
        (self.hamiltonian)(x)
    }

    /// Frequency `nu(E)`, linearly interpolated, anchored at `nu(0) = nu0`.
    pub fn nu(&self, e: T) -> T {
        if self.analytic {
            return self.nu0;
        }
        if e <= T::zero() {
            return self.nu0;
        }
        let grid = &self.energy_grid;
        if e <= grid[0] {
            let w = e / grid[0];
            return self.nu0 + (self.frequency_table[0] - self.nu0) * w;
        }
        for i in 0..grid.len() - 1 {
            if e <= grid[i + 1] {
                let w = (e - grid[i]) / (grid[i + 1] - grid[i]);
                return self.frequency_table[i]
                    + (self.frequency_table[i + 1] - self.frequency_table[i]) * w;
            }
        }
        *self.frequency_table.last().unwrap()
    }

    /// Largest deviation of `nu` from `nu0` over the grid.
    pub fn nu_variation(&self) -> T {
        if self.analytic {
            return T::zero();
        }
        let mut m = T::zero();
        for &f in &self.frequency_table {
            m = m.max((f - self.nu0).abs());
        }
        m
    }

    fn orbit_point(&self, e: T, phi: T) -> PlanarState<T> {
        let amp = (T::of(2.0) * e).sqrt();
        if self.analytic {
            return PlanarState::new(amp * phi.cos(), -amp * phi.sin());
        }
        let (eta1, eta2) = self.normalized_point(e, phi);
        PlanarState::new(amp * eta1, amp * eta2)
    }

    /// Normalized orbit sample, linear in `E` between grid levels; below the
    /// lowest level it blends into the limiting circle `(cos, -sin)`.
    fn normalized_point(&self, e: T, phi: T) -> (T, T) {
        let circle = (phi.cos(), -phi.sin());
        let grid = &self.energy_grid;
        if e <= grid[0] {
            let w = (e / grid[0]).max(T::zero());
            let o = &self.orbits[0];
            return (
                circle.0 + (o.x1.eval(phi) - circle.0) * w,
                circle.1 + (o.x2.eval(phi) - circle.1) * w,
            );
        }
        for i in 0..grid.len() - 1 {
            if e <= grid[i + 1] {
                let w = (e - grid[i]) / (grid[i + 1] - grid[i]);
                let a = &self.orbits[i];
                let b = &self.orbits[i + 1];
                return (
                    a.x1.eval(phi) + (b.x1.eval(phi) - a.x1.eval(phi)) * w,
                    a.x2.eval(phi) + (b.x2.eval(phi) - a.x2.eval(phi)) * w,
                );
            }
        }
        let o = self.orbits.last().unwrap();
        (o.x1.eval(phi), o.x2.eval(phi))
    }

    /// `(E, phi) -> (x1, x2)`; `E = 0` maps to the origin.
    pub fn from_energy_angle(&self, e: T, phi: T) -> Result<PlanarState<T>> {
        if e < T::zero() || e > self.energy_cap * (T::one() + T::of(1e-12)) {
            return Err(Error::ChartRange {
                energy: e.lossy_f64(),
                cap: self.energy_cap.lossy_f64(),
            });
        }
        if e == T::zero() {
            return Ok(PlanarState::origin());
        }
        Ok(self.orbit_point(e, phi))
    }

    /// `(x1, x2) -> (E, phi)` with `phi` in `[0, 2*pi)`.
    pub fn to_energy_angle(&self, x: &PlanarState<T>) -> Result<(T, T)> {
        let e = (self.hamiltonian)(x);
        if e <= T::zero() || e > self.energy_cap * (T::one() + T::of(1e-12)) {
            return Err(Error::ChartRange {
                energy: e.lossy_f64(),
                cap: self.energy_cap.lossy_f64(),
            });
        }
        if self.analytic {
            return Ok((e, wrap_angle_positive((-x.x2).atan2(x.x1))));
        }
        // Newton projection on the arc parameter, seeded by the leading
        // harmonic. The residual floor is set by the chart's interpolation
        // resolution, so convergence is judged on the step size.
        let amp = (T::of(2.0) * e).sqrt();
        let mut phi = wrap_angle_positive((-x.x2).atan2(x.x1));
        let mut best = (T::infinity(), phi);
        for _ in 0..40 {
            let p = self.orbit_point(e, phi);
            let d = [p.x1 - x.x1, p.x2 - x.x2];
            let res = (d[0] * d[0] + d[1] * d[1]).sqrt();
            if res < best.0 {
                best = (res, phi);
            }
            // d phi X = a0(X) / nu(E)
            let g = (self.gradient)(&p);
            let nu = self.nu(e);
            let tangent = [g[1] / nu, -g[0] / nu];
            let t2 = tangent[0] * tangent[0] + tangent[1] * tangent[1];
            let step = (d[0] * tangent[0] + d[1] * tangent[1]) / t2;
            phi = phi - step;
            if step.abs() < T::of(1e-14) {
                let p = self.orbit_point(e, phi);
                let d = [p.x1 - x.x1, p.x2 - x.x2];
                let res = (d[0] * d[0] + d[1] * d[1]).sqrt();
                if res < best.0 {
                    best = (res, phi);
                }
                break;
            }
        }
        let (res, phi) = best;
        if res > amp * T::of(1e-4) {
            return Err(Error::Numerical(format!(
                "angle inversion did not converge (residual {res:e} at energy {e})"
            )));
        }
        Ok((e, wrap_angle_positive(phi)))
    }

    /// Scaled amplitude and phase difference of Eq.-style
    /// `E = t^(-2 ell / q) R^2`, `phi = S(t)/kappa + theta`.
    pub fn amplitude_phase(
        &self,
        schedule: &PhaseSchedule<T>,
        ell: u32,
        x: &PlanarState<T>,
        t: T,
    ) -> Result<(T, T)> {
        let e = (self.hamiltonian)(x);
        let q = T::of_usize(schedule.q as usize);
        let r = t.powf(T::of_usize(ell as usize) / q) * e.max(T::zero()).sqrt();
        if e <= T::zero() {
            return Ok((T::zero(), wrap_angle(-schedule.eval(t) / T::of_usize(schedule.resonance_multiple as usize))));
        }
        let (_, phi) = self.to_energy_angle(x)?;
        let kappa = T::of_usize(schedule.resonance_multiple as usize);
        Ok((r, wrap_angle(phi - schedule.eval(t) / kappa)))
    }

    /// Chart geometry at `(E, phi)`: closed forms on the analytic path,
    /// finite differences in `(E, phi)` otherwise.
    pub fn geometry(&self, e: T, phi: T) -> Result<ChartGeometry<T>> {
        if self.analytic {
            let x = self.from_energy_angle(e, phi)?;
            let two_e = T::of(2.0) * e;
            let s2 = (T::of(2.0) * phi).sin();
            let c2 = (T::of(2.0) * phi).cos();
            return Ok(ChartGeometry {
                x,
                grad_h: [x.x1, x.x2],
                grad_phi: [x.x2 / two_e, -x.x1 / two_e],
                hess_h: [[T::one(), T::zero()], [T::zero(), T::one()]],
                hess_phi: [[s2 / two_e, c2 / two_e], [c2 / two_e, -s2 / two_e]],
                nu: self.nu0,
            });
        }
        let x = self.from_energy_angle(e, phi)?;
        let grads = |e: T, phi: T| -> [[T; 2]; 2] {
            let jac = self.jacobian(e, phi);
            invert2(&jac)
        };
        let g = grads(e, phi);
        // finite differences of the gradient rows in (E, phi)
        let de = e * T::of(1e-5);
        let dp = T::of(1e-5);
        let gep = grads(e + de, phi);
        let gem = grads(e - de, phi);
        let gpp = grads(e, phi + dp);
        let gpm = grads(e, phi - dp);
        let jinv = grads(e, phi);
        let mut hess_h = [[T::zero(); 2]; 2];
        let mut hess_phi = [[T::zero(); 2]; 2];
        for c in 0..2 {
            // d/dx_c = dE/dx_c * d/dE + dphi/dx_c * d/dphi
            let de_dx = jinv[0][c];
            let dphi_dx = jinv[1][c];
            for comp in 0..2 {
                let d_de = (gep[0][comp] - gem[0][comp]) / (T::of(2.0) * de);
                let d_dp = (gpp[0][comp] - gpm[0][comp]) / (T::of(2.0) * dp);
                hess_h[comp][c] = de_dx * d_de + dphi_dx * d_dp;
                let d_de2 = (gep[1][comp] - gem[1][comp]) / (T::of(2.0) * de);
                let d_dp2 = (gpp[1][comp] - gpm[1][comp]) / (T::of(2.0) * dp);
                hess_phi[comp][c] = de_dx * d_de2 + dphi_dx * d_dp2;
            }
        }
        // symmetrize (the FD estimates of the mixed entries)
        let m = (hess_h[0][1] + hess_h[1][0]) / T::of(2.0);
        hess_h[0][1] = m;
        hess_h[1][0] = m;
        let m = (hess_phi[0][1] + hess_phi[1][0]) / T::of(2.0);
        hess_phi[0][1] = m;
        hess_phi[1][0] = m;
        Ok(ChartGeometry {
            x,
            grad_h: [g[0][0], g[0][1]],
            grad_phi: [g[1][0], g[1][1]],
            hess_h,
            hess_phi,
            nu: self.nu(e),
        })
    }

    /// Jacobian `d(X1, X2) / d(E, phi)`.
    pub fn jacobian(&self, e: T, phi: T) -> [[T; 2]; 2] {
        if self.analytic {
            let amp = (T::of(2.0) * e).sqrt();
            return [
                [phi.cos() / amp, -amp * phi.sin()],
                [-phi.sin() / amp, -amp * phi.cos()],
            ];
        }
        let amp = (T::of(2.0) * e).sqrt();
        let (eta1, eta2) = self.normalized_point(e, phi);
        // d/dphi via interpolated spline derivatives
        let dphi = {
            let grid = &self.energy_grid;
            let d_of = |o: &NumericOrbit<T>| (o.x1.eval_derivative(phi), o.x2.eval_derivative(phi));
            if e <= grid[0] {
                let w = (e / grid[0]).max(T::zero());
                let d0 = d_of(&self.orbits[0]);
                let circ = (-phi.sin(), -phi.cos());
                (circ.0 + (d0.0 - circ.0) * w, circ.1 + (d0.1 - circ.1) * w)
            } else {
                let mut out = d_of(self.orbits.last().unwrap());
                for i in 0..grid.len() - 1 {
                    if e <= grid[i + 1] {
                        let w = (e - grid[i]) / (grid[i + 1] - grid[i]);
                        let da = d_of(&self.orbits[i]);
                        let db = d_of(&self.orbits[i + 1]);
                        out = (da.0 + (db.0 - da.0) * w, da.1 + (db.1 - da.1) * w);
                        break;
                    }
                }
                out
            }
        };
        // dE eta via the piecewise-linear interpolation slope
        let deta_de = {
            let grid = &self.energy_grid;
            let p_of = |o: &NumericOrbit<T>| (o.x1.eval(phi), o.x2.eval(phi));
            if e <= grid[0] {
                let p0 = p_of(&self.orbits[0]);
                let circ = (phi.cos(), -phi.sin());
                ((p0.0 - circ.0) / grid[0], (p0.1 - circ.1) / grid[0])
            } else {
                let mut out = (T::zero(), T::zero());
                for i in 0..grid.len() - 1 {
                    if e <= grid[i + 1] {
                        let pa = p_of(&self.orbits[i]);
                        let pb = p_of(&self.orbits[i + 1]);
                        let de = grid[i + 1] - grid[i];
                        out = ((pb.0 - pa.0) / de, (pb.1 - pa.1) / de);
                        break;
                    }
                }
                out
            }
        };
        let s2e = T::one() / amp; // d amp / dE = 1/amp
        [
            [eta1 * s2e + amp * deta_de.0, amp * dphi.0],
            [eta2 * s2e + amp * deta_de.1, amp * dphi.1],
        ]
    }

    /// Writes `chart.csv` (E, T(E), nu(E)) plus one sample file per orbit.
    pub fn export_tables(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut f = std::fs::File::create(dir.join("chart.csv"))?;
        writeln!(f, "E,T,nu")?;
        for i in 0..self.energy_grid.len() {
            writeln!(
                f,
                "{:e},{:e},{:e}",
                self.energy_grid[i], self.period_table[i], self.frequency_table[i]
            )?;
        }
        for (i, orbit) in self.orbits.iter().enumerate() {
            let mut f = std::fs::File::create(dir.join(format!("orbit_{i:03}.csv")))?;
            writeln!(f, "x1,x2")?;
            for j in 0..orbit.x1.n {
                writeln!(f, "{:e},{:e}", orbit.x1.y[j], orbit.x2.y[j])?;
            }
        }
        Ok(())
    }

    /// Reads tables written by [`export_tables`]; the Hamiltonian closures
    /// must be re-supplied by the caller's spec.
    pub fn import_tables(spec: &SystemSpec<T>, dir: &Path) -> Result<Self> {
        let file = std::fs::File::open(dir.join("chart.csv"))?;
        let mut grid = vec![];
        let mut periods = vec![];
        let mut freqs = vec![];
        for (ln, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if ln == 0 {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(Error::Config(format!("bad chart.csv line: {line}")));
            }
            let parse = |s: &str| -> Result<T> {
                s.parse::<f64>()
                    .map(T::of)
                    .map_err(|e| Error::Config(format!("bad number {s}: {e}")))
            };
            grid.push(parse(parts[0])?);
            periods.push(parse(parts[1])?);
            freqs.push(parse(parts[2])?);
        }
        let mut orbits = vec![];
        for i in 0..grid.len() {
            let path = dir.join(format!("orbit_{i:03}.csv"));
            if !path.exists() {
                break;
            }
            let file = std::fs::File::open(path)?;
            let mut xs1 = vec![];
            let mut xs2 = vec![];
            for (ln, line) in std::io::BufReader::new(file).lines().enumerate() {
                let line = line?;
                if ln == 0 {
                    continue;
                }
                let parts: Vec<&str> = line.split(',').collect();
                xs1.push(T::of(parts[0].parse::<f64>().map_err(|e| {
                    Error::Config(format!("bad orbit sample: {e}"))
                })?));
                xs2.push(T::of(parts[1].parse::<f64>().map_err(|e| {
                    Error::Config(format!("bad orbit sample: {e}"))
                })?));
            }
            orbits.push(NumericOrbit {
                x1: PeriodicSpline::new(xs1),
                x2: PeriodicSpline::new(xs2),
            });
        }
        Ok(Self {
            analytic: orbits.is_empty(),
            nu0: spec.nu0,
            energy_cap: spec.energy_cap,
            energy_grid: grid,
            period_table: periods,
            frequency_table: freqs,
            n_phi: N_PHI,
            orbits,
            hamiltonian: spec.hamiltonian.clone(),
            gradient: spec.hamiltonian_gradient.clone(),
        })
    }
}

fn invert2<T: Real>(m: &[[T; 2]; 2]) -> [[T; 2]; 2] {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]]
}
