//! Dormand-Prince 8(5,3) embedded Runge-Kutta stepper with seventh-order dense output.

use super::coefficients::{A, B, C, D, E3, E5, INTERPOLATOR_POWER, N_STAGES, N_STAGES_EXTENDED};
use super::VectorField;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;
const ERROR_EXPONENT: f64 = -1.0 / 8.0;

/// Polynomial interpolant of one accepted step.
#[derive(Debug, Clone)]
pub struct DenseStep {
    pub t0: f64,
    pub t1: f64,
    y0: Vec<f64>,
    coeffs: Vec<Vec<f64>>,
}

impl DenseStep {
    /// Evaluates the interpolant at `t` (meaningful for `t` between `t0` and `t1`).
    pub fn eval(&self, t: f64, out: &mut [f64]) {
        let x = (t - self.t0) / (self.t1 - self.t0);
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, f) in self.coeffs.iter().rev().enumerate() {
            let w = if i % 2 == 0 { x } else { 1.0 - x };
            for (o, fi) in out.iter_mut().zip(f) {
                *o = (*o + fi) * w;
            }
        }
        for (o, y) in out.iter_mut().zip(&self.y0) {
            *o += y;
        }
    }

    /// Allocating convenience wrapper around [`DenseStep::eval`].
    pub fn at(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.y0.len()];
        self.eval(t, &mut out);
        out
    }
}

/// Outcome of a single attempted step.
pub enum StepOutcome {
    /// The step was accepted; the stepper advanced.
    Accepted,
    /// The step size fell below the resolvable minimum.
    Underflow,
}

/// Adaptive stepper state.
pub struct Stepper<'a, F: VectorField + ?Sized> {
    field: &'a F,
    n: usize,
    pub t: f64,
    pub y: Vec<f64>,
    pub f: Vec<f64>,
    pub t_old: f64,
    pub y_old: Vec<f64>,
    f_old: Vec<f64>,
    h_abs: f64,
    h_prev: f64,
    direction: f64,
    rtol: f64,
    atol: f64,
    max_step: f64,
    k: Vec<Vec<f64>>,
    ytmp: Vec<f64>,
    pub nfev: usize,
    pub rejected: usize,
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

impl<'a, F: VectorField + ?Sized> Stepper<'a, F> {
    /// Creates a stepper at `(t0, y0)` integrating toward `t_bound`.
    pub fn new(field: &'a F, t0: f64, y0: &[f64], t_bound: f64, rtol: f64, atol: f64, max_step: f64) -> Self {
        let n = y0.len();
        let mut f = vec![0.0; n];
        field.eval(t0, y0, &mut f);
        let direction = if t_bound >= t0 { 1.0 } else { -1.0 };
        let mut s = Self {
            field,
            n,
            t: t0,
            y: y0.to_vec(),
            f: f.clone(),
            t_old: t0,
            y_old: y0.to_vec(),
            f_old: f,
            h_abs: 0.0,
            h_prev: 0.0,
            direction,
            rtol,
            atol,
            max_step,
            k: vec![vec![0.0; n]; N_STAGES_EXTENDED],
            ytmp: vec![0.0; n],
            nfev: 1,
            rejected: 0,
        };
        s.h_abs = s.initial_step(t_bound);
        s
    }

    fn initial_step(&mut self, t_bound: f64) -> f64 {
        let scale: Vec<f64> = self.y.iter().map(|y| self.atol + y.abs() * self.rtol).collect();
        let d0 = rms(&self.y.iter().zip(&scale).map(|(y, s)| y / s).collect::<Vec<_>>());
        let d1 = rms(&self.f.iter().zip(&scale).map(|(f, s)| f / s).collect::<Vec<_>>());
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min((t_bound - self.t).abs().max(f64::MIN_POSITIVE));
        let y1: Vec<f64> = self.y.iter().zip(&self.f).map(|(y, f)| y + h0 * self.direction * f).collect();
        let mut f1 = vec![0.0; self.n];
        self.field.eval(self.t + h0 * self.direction, &y1, &mut f1);
        self.nfev += 1;
        let d2 = rms(
            &f1.iter()
                .zip(&self.f)
                .zip(&scale)
                .map(|((a, b), s)| (a - b) / s)
                .collect::<Vec<_>>(),
        ) / h0;
        let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(1.0 / 8.0)
        };
        let h = (100.0 * h0).min(h1).min(self.max_step);
        if h.is_finite() && h > 0.0 {
            h
        } else {
            1e-6
        }
    }

    /// Size of the last accepted step (signed).
    pub fn last_step(&self) -> f64 {
        self.h_prev
    }

    /// Attempts to advance by one accepted step without passing `t_bound`.
    pub fn step(&mut self, t_bound: f64) -> StepOutcome {
        let n = self.n;
        let min_step = 10.0 * (f64::EPSILON * self.t.abs()).max(f64::MIN_POSITIVE);
        let mut h_abs = self.h_abs.min(self.max_step).max(min_step);
        let mut rejected = false;
        loop {
            if h_abs < min_step {
                return StepOutcome::Underflow;
            }
            let mut t_new = self.t + h_abs * self.direction;
            if self.direction * (t_new - t_bound) > 0.0 {
                t_new = t_bound;
            }
            let h = t_new - self.t;
            let habs = h.abs();
            // Stages.
            self.k[0].copy_from_slice(&self.f);
            for s in 1..N_STAGES {
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..s {
                        acc += A[s][j] * self.k[j][i];
                    }
                    self.ytmp[i] = self.y[i] + h * acc;
                }
                let (_, tail) = self.k.split_at_mut(s);
                self.field.eval(self.t + C[s] * h, &self.ytmp, &mut tail[0]);
            }
            let mut y_new = vec![0.0; n];
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..N_STAGES {
                    acc += B[j] * self.k[j][i];
                }
                y_new[i] = self.y[i] + h * acc;
            }
            {
                let (_, tail) = self.k.split_at_mut(N_STAGES);
                self.field.eval(t_new, &y_new, &mut tail[0]);
            }
            self.nfev += N_STAGES;
            // Error estimate.
            let mut e5 = 0.0;
            let mut e3 = 0.0;
            let mut finite = true;
            for i in 0..n {
                let scale = self.atol + self.y[i].abs().max(y_new[i].abs()) * self.rtol;
                let mut a5 = 0.0;
                let mut a3 = 0.0;
                for j in 0..=N_STAGES {
                    a5 += E5[j] * self.k[j][i];
                    a3 += E3[j] * self.k[j][i];
                }
                let (a5, a3) = (a5 / scale, a3 / scale);
                e5 += a5 * a5;
                e3 += a3 * a3;
                if !y_new[i].is_finite() || !self.k[N_STAGES][i].is_finite() {
                    finite = false;
                }
            }
            let err = if !finite || !e5.is_finite() || !e3.is_finite() {
                f64::INFINITY
            } else if e5 == 0.0 && e3 == 0.0 {
                0.0
            } else {
                habs * e5 / ((e5 + 0.01 * e3) * n as f64).sqrt()
            };
            if err < 1.0 {
                let mut factor = if err == 0.0 { MAX_FACTOR } else { MAX_FACTOR.min(SAFETY * err.powf(ERROR_EXPONENT)) };
                if rejected {
                    factor = factor.min(1.0);
                }
                self.h_abs = habs * factor;
                self.h_prev = h;
                self.t_old = self.t;
                std::mem::swap(&mut self.y_old, &mut self.y);
                self.y = y_new;
                std::mem::swap(&mut self.f_old, &mut self.f);
                self.f.copy_from_slice(&self.k[N_STAGES]);
                self.t = t_new;
                return StepOutcome::Accepted;
            }
            let shrink = if err.is_finite() { MIN_FACTOR.max(SAFETY * err.powf(ERROR_EXPONENT)) } else { MIN_FACTOR };
            h_abs = habs * shrink;
            rejected = true;
            self.rejected += 1;
        }
    }

    /// Dense interpolant of the last accepted step (three extra field evaluations).
    pub fn dense(&mut self) -> DenseStep {
        let n = self.n;
        let h = self.h_prev;
        for s in (N_STAGES + 1)..N_STAGES_EXTENDED {
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..s {
                    acc += A[s][j] * self.k[j][i];
                }
                self.ytmp[i] = self.y_old[i] + h * acc;
            }
            let (_, tail) = self.k.split_at_mut(s);
            self.field.eval(self.t_old + C[s] * h, &self.ytmp, &mut tail[0]);
        }
        self.nfev += N_STAGES_EXTENDED - N_STAGES - 1;
        let mut coeffs = vec![vec![0.0; n]; INTERPOLATOR_POWER];
        for i in 0..n {
            let dy = self.y[i] - self.y_old[i];
            let f_old = self.k[0][i];
            coeffs[0][i] = dy;
            coeffs[1][i] = h * f_old - dy;
            coeffs[2][i] = 2.0 * dy - h * (self.f[i] + f_old);
            for (r, drow) in D.iter().enumerate() {
                let mut acc = 0.0;
                for j in 0..N_STAGES_EXTENDED {
                    acc += drow[j] * self.k[j][i];
                }
                coeffs[3 + r][i] = h * acc;
            }
        }
        DenseStep { t0: self.t_old, t1: self.t, y0: self.y_old.clone(), coeffs }
    }

    /// Cubic Hermite estimate of the state inside the last step (no field evaluations).
    pub fn hermite(&self, x: f64, out: &mut [f64]) {
        let h = self.h_prev;
        let (x2, x3) = (x * x, x * x * x);
        let h00 = 2.0 * x3 - 3.0 * x2 + 1.0;
        let h10 = x3 - 2.0 * x2 + x;
        let h01 = -2.0 * x3 + 3.0 * x2;
        let h11 = x3 - x2;
        for i in 0..self.n {
            out[i] = h00 * self.y_old[i] + h10 * h * self.f_old[i] + h01 * self.y[i] + h11 * h * self.f[i];
        }
    }
}
