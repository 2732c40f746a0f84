//! Adaptive Dormand-Prince 5(4) integration with dense output, used for the
//! truncated averaged system and the reference phase trajectories.

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct OdeSolution<T> {
    pub ts: Vec<T>,
    pub ys: Vec<[T; 2]>,
    pub fs: Vec<[T; 2]>,
    /// Set when an event function stopped the integration early.
    pub stopped_by_event: bool,
}

impl<T: Real> OdeSolution<T> {
    /// Cubic-Hermite dense evaluation; clamps outside the covered interval.
    pub fn eval(&self, t: T) -> [T; 2] {
        let ts = &self.ts;
        if t <= ts[0] {
            return self.ys[0];
        }
        if t >= *ts.last().unwrap() {
            return *self.ys.last().unwrap();
        }
        // binary search for the step interval
        let mut lo = 0usize;
        let mut hi = ts.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if ts[mid] <= t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let h = ts[hi] - ts[lo];
        let s = (t - ts[lo]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = T::of(2.0) * s3 - T::of(3.0) * s2 + T::one();
        let h10 = s3 - T::of(2.0) * s2 + s;
        let h01 = -T::of(2.0) * s3 + T::of(3.0) * s2;
        let h11 = s3 - s2;
        let mut out = [T::zero(); 2];
        for c in 0..2 {
            out[c] = h00 * self.ys[lo][c]
                + h10 * h * self.fs[lo][c]
                + h01 * self.ys[hi][c]
                + h11 * h * self.fs[hi][c];
        }
        out
    }

    pub fn final_state(&self) -> [T; 2] {
        *self.ys.last().unwrap()
    }

    pub fn final_time(&self) -> T {
        *self.ts.last().unwrap()
    }
}

/// Integrates `dy/dt = f(t, y)` over `[t0, t_end]`, stopping early if
/// `event` returns true at an accepted step.
pub fn integrate<T: Real>(
    f: &dyn Fn(T, &[T; 2]) -> [T; 2],
    t0: T,
    y0: [T; 2],
    t_end: T,
    rtol: T,
    atol: T,
    event: Option<&dyn Fn(T, &[T; 2]) -> bool>,
) -> Result<OdeSolution<T>> {
    // Dormand-Prince coefficients
    let c = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    let a: [&[f64]; 6] = [
        &[0.2],
        &[3.0 / 40.0, 9.0 / 40.0],
        &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
        &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
        &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
        &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    let b5 = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    let b4 = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];

    let mut t = t0;
    let mut y = y0;
    let mut fy = f(t, &y);
    let mut h = ((t_end - t0) * T::of(1e-4)).max(T::of(1e-8));
    let h_max = (t_end - t0) / T::of(4.0);

    let mut ts = vec![t];
    let mut ys = vec![y];
    let mut fs = vec![fy];
    let mut stopped = false;

    let mut steps = 0usize;
    while t < t_end {
        steps += 1;
        if steps > 2_000_000 {
            return Err(Error::Numerical("ODE step budget exhausted".into()));
        }
        if t + h > t_end {
            h = t_end - t;
        }
        let mut k = [[T::zero(); 2]; 7];
        k[0] = fy;
        for stage in 1..7 {
            let mut ystage = y;
            if stage < 6 {
                for (j, &aij) in a[stage - 1].iter().enumerate() {
                    for cc in 0..2 {
                        ystage[cc] = ystage[cc] + h * T::of(aij) * k[j][cc];
                    }
                }
            } else {
                // the 7th stage reuses the 5th-order solution (FSAL)
                for (j, &bj) in b5.iter().enumerate().take(6) {
                    for cc in 0..2 {
                        ystage[cc] = ystage[cc] + h * T::of(bj) * k[j][cc];
                    }
                }
            }
            k[stage] = f(t + h * T::of(c[stage]), &ystage);
        }
        let mut y5 = y;
        let mut y4 = y;
        for (j, (&bj5, &bj4)) in b5.iter().zip(b4.iter()).enumerate() {
            for cc in 0..2 {
                y5[cc] = y5[cc] + h * T::of(bj5) * k[j][cc];
                y4[cc] = y4[cc] + h * T::of(bj4) * k[j][cc];
            }
        }
        // error estimate against the tolerance scale
        let mut err = T::zero();
        for cc in 0..2 {
            let scale = atol + rtol * y[cc].abs().max(y5[cc].abs());
            err = err.max(((y5[cc] - y4[cc]) / scale).abs());
        }
        if err <= T::one() || h <= T::of(1e-12) * t.max(T::one()) {
            t = t + h;
            y = y5;
            fy = k[6]; // FSAL
            ts.push(t);
            ys.push(y);
            fs.push(fy);
            if let Some(ev) = event {
                if ev(t, &y) {
                    stopped = true;
                    break;
                }
            }
        }
        let order = T::of(0.2);
        let factor = T::of(0.9) * err.max(T::of(1e-10)).powf(-order);
        h = (h * factor.min(T::of(5.0)).max(T::of(0.2))).min(h_max);
    }
    Ok(OdeSolution { ts, ys, fs, stopped_by_event: stopped })
}
