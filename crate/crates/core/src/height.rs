//! Height functions, test functions and the density fluctuation field.
//!
//! Heights are kept as integer cuts `I_c = flux0 + sum_{y<c} eta_y` for
//! `c = 0..=n` and scaled at read time: `H_c = n^{-1/2} (I_c - rho c)`.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::params::ModelParams;
use crate::sim::{Direction, JumpEvent, Observer};
use crate::Configuration;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HeightError {
    #[error("event {from}->{to} is not a nearest-neighbour jump on a torus of {n} sites")]
    InconsistentEvent { from: usize, to: usize, n: usize },
    #[error("test function table needs at least 4 points, got {0}")]
    TableTooShort(usize),
    #[error("test function table must be finite")]
    NonFinite,
    #[error("supplied derivative deviates from the spectral derivative by {0:e}")]
    DerivativeMismatch(f64),
}

/// Height function with the boundary-flux term.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightField {
    cuts: Vec<i64>,
    flux0: i64,
    pub rho: f64,
    pub time: f64,
}

/// Builds the height function of `eta` with boundary flux `flux0`.
pub fn height_from_config(eta: &[u32], rho: f64, flux0: i64) -> HeightField {
    let mut cuts = Vec::with_capacity(eta.len() + 1);
    let mut acc = flux0;
    cuts.push(acc);
    for &k in eta {
        acc += i64::from(k);
        cuts.push(acc);
    }
    HeightField {
        cuts,
        flux0,
        rho,
        time: 0.0,
    }
}

impl HeightField {
    /// Number of sites.
    pub fn n(&self) -> usize {
        self.cuts.len() - 1
    }

    pub fn flux0(&self) -> i64 {
        self.flux0
    }

    /// Unscaled integer cut `flux0 + sum_{y<c} eta_y`.
    pub fn cut(&self, c: usize) -> i64 {
        self.cuts[c]
    }

    /// Unscaled height `I_c - rho c`.
    pub fn raw(&self, c: usize) -> f64 {
        self.cuts[c] as f64 - self.rho * c as f64
    }

    /// `H_c` in fluctuation units.
    pub fn value(&self, c: usize) -> f64 {
        self.raw(c) / (self.n() as f64).sqrt()
    }

    /// `H_0, ..., H_n`.
    pub fn values(&self) -> Vec<f64> {
        (0..=self.n()).map(|c| self.value(c)).collect()
    }

    /// Occupancies recovered by differencing the cuts.
    pub fn occupancy(&self) -> Vec<u32> {
        self.cuts.windows(2).map(|w| (w[1] - w[0]) as u32).collect()
    }

    /// Unscaled height at a real site position `y` of the periodic lift
    /// (`I_{c+n} = I_c + total`), linear between cuts.
    pub fn lifted(&self, y: f64) -> f64 {
        let n = self.n() as f64;
        let winds = (y / n).floor();
        let r = y - winds * n;
        let c = (r.floor() as usize).min(self.n() - 1);
        let frac = r - c as f64;
        let inner = self.raw(c) + frac * (self.raw(c + 1) - self.raw(c));
        inner + winds * (self.raw(self.n()) - self.raw(0))
    }

    /// Applies one jump: interior jumps change exactly one cut, boundary
    /// crossings change `flux0`, `I_0` and `I_n`.
    pub fn apply(&mut self, event: &JumpEvent) -> Result<(), HeightError> {
        let n = self.n();
        let bad = HeightError::InconsistentEvent {
            from: event.from,
            to: event.to,
            n,
        };
        if event.from >= n || event.to >= n {
            return Err(bad);
        }
        match event.direction {
            Direction::Right if event.from + 1 == n => {
                if event.to != 0 || event.crossing != -1 {
                    return Err(bad);
                }
                self.flux0 -= 1;
                self.cuts[0] -= 1;
                self.cuts[n] -= 1;
            }
            Direction::Right => {
                if event.to != event.from + 1 || event.crossing != 0 {
                    return Err(bad);
                }
                self.cuts[event.to] -= 1;
            }
            Direction::Left if event.from == 0 => {
                if event.to != n - 1 || event.crossing != 1 {
                    return Err(bad);
                }
                self.flux0 += 1;
                self.cuts[0] += 1;
                self.cuts[n] += 1;
            }
            Direction::Left => {
                if event.to + 1 != event.from || event.crossing != 0 {
                    return Err(bad);
                }
                self.cuts[event.from] += 1;
            }
        }
        self.time = event.time;
        Ok(())
    }
}

/// Functional form of [`HeightField::apply`].
pub fn update_height_on_event(
    mut height: HeightField,
    event: &JumpEvent,
) -> Result<HeightField, HeightError> {
    height.apply(event)?;
    Ok(height)
}

/// Observer keeping a height function in step with a simulation.
#[derive(Debug, Clone)]
pub struct HeightTracker {
    pub height: HeightField,
    pub error: Option<HeightError>,
}

impl HeightTracker {
    pub fn new(config: &Configuration, rho: f64) -> Self {
        Self {
            height: height_from_config(config.occupancy(), rho, 0),
            error: None,
        }
    }
}

impl Observer for HeightTracker {
    fn on_event(&mut self, event: &JumpEvent, _: &Configuration) {
        if self.error.is_none() {
            if let Err(e) = self.height.apply(event) {
                self.error = Some(e);
            }
        }
    }
}

/// A smooth periodic function on the unit torus.
#[derive(Debug, Clone, PartialEq)]
pub enum TestFunction {
    /// `cos(2 pi k x)`; `Cos(0)` is the constant 1.
    Cos(u32),
    /// `sin(2 pi k x)`.
    Sin(u32),
    /// Trigonometric interpolant of equispaced samples on `[0, 1)`.
    Tabulated(TabulatedFunction),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedFunction {
    values: Vec<f64>,
    derivative: Vec<f64>,
    /// `(frequency, coefficient)` pairs of the interpolant.
    coefficients: Vec<(f64, Complex64)>,
}

impl TabulatedFunction {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn derivative(&self) -> &[f64] {
        &self.derivative
    }
}

fn spectral(values: &[f64]) -> (Vec<(f64, Complex64)>, Vec<f64>) {
    let m = values.len();
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(m).process(&mut buf);
    let scale = 1.0 / m as f64;
    let mut coefficients = Vec::with_capacity(m);
    let mut deriv: Vec<Complex64> = Vec::with_capacity(m);
    for (j, c) in buf.iter().enumerate() {
        let c = c * scale;
        let freq = if 2 * j < m {
            j as f64
        } else if 2 * j == m {
            // The Nyquist mode is split symmetrically and has no derivative.
            0.0
        } else {
            j as f64 - m as f64
        };
        if 2 * j == m {
            coefficients.push((m as f64 / 2.0, c * 0.5));
            coefficients.push((-(m as f64) / 2.0, c * 0.5));
            deriv.push(Complex64::new(0.0, 0.0));
        } else {
            coefficients.push((freq, c));
            deriv.push(c * Complex64::new(0.0, TAU * freq));
        }
    }
    planner.plan_fft_inverse(m).process(&mut deriv);
    (coefficients, deriv.iter().map(|z| z.re).collect())
}

impl TestFunction {
    /// A test function from equispaced samples `J(j / m)`, with derivative
    /// obtained by spectral differentiation. A supplied derivative table must
    /// agree with it to `1e-6` relative to its scale.
    pub fn tabulated(values: Vec<f64>, derivative: Option<Vec<f64>>) -> Result<Self, HeightError> {
        if values.len() < 4 {
            return Err(HeightError::TableTooShort(values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(HeightError::NonFinite);
        }
        let (coefficients, spectral_derivative) = spectral(&values);
        let derivative = match derivative {
            Some(d) => {
                if d.len() != values.len() || d.iter().any(|v| !v.is_finite()) {
                    return Err(HeightError::NonFinite);
                }
                let scale = 1.0 + spectral_derivative.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let dev = d
                    .iter()
                    .zip(&spectral_derivative)
                    .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
                if dev > 1e-6 * scale {
                    return Err(HeightError::DerivativeMismatch(dev));
                }
                d
            }
            None => spectral_derivative,
        };
        Ok(Self::Tabulated(TabulatedFunction {
            values,
            derivative,
            coefficients,
        }))
    }

    /// `J(x)` with `x` reduced mod 1.
    pub fn eval(&self, x: f64) -> f64 {
        let x = x.rem_euclid(1.0);
        match self {
            Self::Cos(k) => (TAU * f64::from(*k) * x).cos(),
            Self::Sin(k) => (TAU * f64::from(*k) * x).sin(),
            Self::Tabulated(t) => t
                .coefficients
                .iter()
                .map(|(f, c)| (c * Complex64::from_polar(1.0, TAU * f * x)).re)
                .sum(),
        }
    }

    /// `J'(x)` with `x` reduced mod 1.
    pub fn derivative(&self, x: f64) -> f64 {
        let x = x.rem_euclid(1.0);
        match self {
            Self::Cos(k) => {
                let w = TAU * f64::from(*k);
                -w * (w * x).sin()
            }
            Self::Sin(k) => {
                let w = TAU * f64::from(*k);
                w * (w * x).cos()
            }
            Self::Tabulated(t) => t
                .coefficients
                .iter()
                .filter(|(f, _)| 2.0 * f.abs() < t.values.len() as f64)
                .map(|(f, c)| (c * Complex64::new(0.0, TAU * f) * Complex64::from_polar(1.0, TAU * f * x)).re)
                .sum(),
        }
    }

    /// Fourier mode index, if any.
    pub fn mode(&self) -> Option<u32> {
        match self {
            Self::Cos(k) | Self::Sin(k) => Some(*k),
            Self::Tabulated(_) => None,
        }
    }

    /// `J((x / n) - shift)` for `x = 0..n`.
    pub fn grid(&self, n: usize, shift: f64) -> Vec<f64> {
        let shift = shift.rem_euclid(1.0);
        (0..n).map(|x| self.eval(x as f64 / n as f64 - shift)).collect()
    }
}

/// A scalar field observable at time `time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub value: f64,
    pub time: f64,
    /// `gamma n^(1 - beta) c' T`, the displacement of the moving frame.
    pub drift_offset: f64,
}

fn drift_offset(params: &ModelParams, c_prime: f64, time: f64) -> f64 {
    params.frame_speed(c_prime) * time
}

/// `n^{-1/2} sum_x (eta_x - rho) J(x / n - drift)`.
pub fn fluctuation_field(
    eta: &[u32],
    test: &TestFunction,
    time: f64,
    params: &ModelParams,
    c_prime: f64,
) -> FieldSample {
    let n = eta.len();
    let offset = drift_offset(params, c_prime, time);
    let j = test.grid(n, offset);
    let value = eta
        .iter()
        .zip(&j)
        .map(|(&k, jx)| (f64::from(k) - params.rho) * jx)
        .sum::<f64>()
        / (n as f64).sqrt();
    FieldSample {
        value,
        time,
        drift_offset: offset,
    }
}

/// The same field computed from the height function by Abel summation:
/// `-n^{-1} sum_x H_{x+1} n [J_{x+1} - J_x] + (H_n - H_0) J_0`, where
/// the last term accounts for winding (total mass different from `rho n`).
pub fn field_by_sbp(
    height: &HeightField,
    test: &TestFunction,
    time: f64,
    params: &ModelParams,
    c_prime: f64,
) -> FieldSample {
    let n = height.n();
    let offset = drift_offset(params, c_prime, time);
    let j = test.grid(n, offset);
    let nf = n as f64;
    // Centre the heights at H_0 so the flux term, which cancels exactly
    // against the zero-sum increments of J, does not cost precision.
    let h0 = height.value(0);
    let mut abel = 0.0;
    for x in 0..n {
        let dj = nf * (j[(x + 1) % n] - j[x]);
        abel += (height.value(x + 1) - h0) * dj;
    }
    let winding = (height.value(n) - h0) * j[0];
    FieldSample {
        value: -abel / nf + winding,
        time,
        drift_offset: offset,
    }
}
