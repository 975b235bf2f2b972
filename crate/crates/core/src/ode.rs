//! Adaptive Dormand–Prince 5(4) on fixed-size states, with an optional
//! projection applied after every accepted step.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    /// Mixed absolute/relative per-step error bound.
    pub tol: f64,
    pub h0: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            tol: 1e-10,
            h0: 1e-2,
            h_min: 1e-12,
            h_max: 0.5,
            max_steps: 2_000_000,
        }
    }
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        OdeOptions {
            tol,
            ..Default::default()
        }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// fifth-order weights minus embedded fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

pub type Field<'a, const N: usize> = Box<dyn FnMut(f64, &[f64; N]) -> Result<[f64; N]> + 'a>;
pub type Projection<'a, const N: usize> = Box<dyn FnMut(&mut [f64; N]) -> Result<()> + 'a>;

pub struct Integrator<'a, const N: usize> {
    field: Field<'a, N>,
    project: Option<Projection<'a, N>>,
    pub opts: OdeOptions,
    pub t: f64,
    pub y: [f64; N],
    h: f64,
    pub accepted: usize,
    pub rejected: usize,
}

impl<'a, const N: usize> Integrator<'a, N> {
    pub fn new(field: Field<'a, N>, t0: f64, y0: [f64; N], opts: OdeOptions) -> Self {
        Integrator {
            field,
            project: None,
            opts,
            t: t0,
            y: y0,
            h: opts.h0,
            accepted: 0,
            rejected: 0,
        }
    }

    pub fn with_projection(mut self, p: Projection<'a, N>) -> Self {
        self.project = Some(p);
        self
    }

    /// Restarts from a new state, keeping the step-size estimate.
    pub fn reset(&mut self, t: f64, y: [f64; N]) {
        self.t = t;
        self.y = y;
    }

    fn try_step(&mut self, h: f64) -> Result<([f64; N], f64)> {
        let mut k = [[0.0; N]; 7];
        k[0] = (self.field)(self.t, &self.y)?;
        for s in 1..7 {
            let mut ys = self.y;
            for (j, kj) in k.iter().enumerate().take(s) {
                let a = A[s][j];
                if a != 0.0 {
                    for i in 0..N {
                        ys[i] += h * a * kj[i];
                    }
                }
            }
            k[s] = (self.field)(self.t + C[s] * h, &ys)?;
        }
        let mut ynew = self.y;
        for (j, kj) in k.iter().enumerate().take(6) {
            let b = A[6][j];
            for i in 0..N {
                ynew[i] += h * b * kj[i];
            }
        }
        let mut err: f64 = 0.0;
        for i in 0..N {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                e += E[j] * kj[i];
            }
            let scale = self.opts.tol * (1.0 + self.y[i].abs().max(ynew[i].abs()));
            err = err.max((h * e).abs() / scale);
        }
        Ok((ynew, err))
    }

    /// One accepted step that does not pass `t_limit`. Returns the state
    /// before the step.
    pub fn step(&mut self, t_limit: f64) -> Result<(f64, [f64; N])> {
        let before = (self.t, self.y);
        loop {
            if self.accepted + self.rejected > self.opts.max_steps {
                return Err(Error::StepUnderflow(self.t));
            }
            let remaining = t_limit - self.t;
            let mut h = self.h.min(self.opts.h_max).min(remaining);
            let landing = h >= remaining;
            if landing {
                h = remaining;
            }
            let (ynew, err) = match self.try_step(h) {
                Ok(r) => r,
                // a stage left the domain; shrink and retry
                Err(e @ (Error::PoleProximity(..) | Error::OutsideChart(..))) => {
                    if h <= self.opts.h_min {
                        return Err(e);
                    }
                    self.h = h * 0.25;
                    self.rejected += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if !err.is_finite() || ynew.iter().any(|x| !x.is_finite()) {
                self.rejected += 1;
                self.h = h * 0.2;
                if self.h < self.opts.h_min {
                    return Err(Error::StepUnderflow(self.t));
                }
                continue;
            }
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if err <= 1.0 {
                self.t = if landing { t_limit } else { self.t + h };
                self.y = ynew;
                if let Some(p) = self.project.as_mut() {
                    p(&mut self.y)?;
                }
                self.accepted += 1;
                if !landing || fac < 1.0 {
                    self.h = h * fac;
                }
                return Ok(before);
            }
            self.rejected += 1;
            self.h = h * fac;
            if self.h < self.opts.h_min {
                return Err(Error::StepUnderflow(self.t));
            }
        }
    }

    /// Integrates up to exactly `t_end`.
    pub fn advance_to(&mut self, t_end: f64) -> Result<()> {
        while self.t < t_end {
            self.step(t_end)?;
        }
        Ok(())
    }
}

/// Convenience: state at `t0 + dt` from `(t0, y0)`.
pub fn solve<const N: usize>(
    field: Field<'_, N>,
    project: Option<Projection<'_, N>>,
    t0: f64,
    y0: [f64; N],
    dt: f64,
    opts: OdeOptions,
) -> Result<[f64; N]> {
    let mut it = Integrator::new(field, t0, y0, opts);
    if let Some(p) = project {
        it = it.with_projection(p);
    }
    it.advance_to(t0 + dt)?;
    Ok(it.y)
}
