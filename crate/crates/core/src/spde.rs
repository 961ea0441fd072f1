//! Continuum solvers on the unit torus.
//!
//! White noise is normalised by the real Fourier basis
//! `{1, sqrt(2) cos(2 pi k x), sqrt(2) sin(2 pi k x)}`, each basis element
//! carrying an independent standard Brownian motion. The complex coefficient
//! `W_k = int W e^{-2 pi i k x} dx` of mode `k >= 1` is then `(B^c_k - i B^s_k) / sqrt(2)`.
//!
//! * ASHE: `dH = a H'' dt + b dW`, each mode an exact Ornstein-Uhlenbeck process.
//! * derivative ASHE: `Y = H'`, so `Y_k = 2 pi i k H_k`; mode 0 is frozen.
//! * MSHE: `dZ = a Z'' dt + lambda sqrt(a) Z dW`, explicit Euler-Maruyama.

use std::f64::consts::{SQRT_2, TAU};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::height::TestFunction;
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpdeError {
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("explicit scheme unstable: dt = {dt} exceeds dx^2 / (2a) = {limit}")]
    StabilityViolated { dt: f64, limit: f64 },
    #[error("field has a non-positive value at grid point {0}")]
    NonpositiveField(usize),
    #[error("fields do not share a grid or spectral cutoff")]
    ShapeMismatch,
    #[error("grid needs at least 4 points, got {0}")]
    GridTooSmall(usize),
    #[error("coefficients must be finite with a > 0 and b >= 0")]
    InvalidCoefficients,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectralKind {
    /// The height field `H`.
    Ashe,
    /// Its derivative `Y = H'`.
    DerivativeAshe,
}

/// A real field stored by its Fourier coefficients `k = 0..=cutoff`; the
/// negative modes are the conjugates, so the field is real by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    modes: Vec<Complex64>,
    pub a: f64,
    pub b: f64,
    pub kind: SpectralKind,
    pub time: f64,
}

/// One step of mode noise shared by any number of fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeNoise {
    /// Standard normals `(xi_c, xi_s)` per mode `k = 0..=cutoff` (`xi_s` unused at 0).
    pub normals: Vec<(f64, f64)>,
}

impl ModeNoise {
    pub fn draw<R: Rng + ?Sized>(cutoff: usize, rng: &mut R) -> Self {
        Self {
            normals: (0..=cutoff)
                .map(|_| (rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect(),
        }
    }
}

fn decay_rate(a: f64, k: usize) -> f64 {
    let w = TAU * k as f64;
    a * w * w
}

/// `sqrt(int_0^dt e^{-2 r s} ds)`.
fn ou_scale(rate: f64, dt: f64) -> f64 {
    if rate == 0.0 {
        dt.sqrt()
    } else {
        (-(-2.0 * rate * dt).exp_m1() / (2.0 * rate)).sqrt()
    }
}

impl SpectralField {
    pub fn zero(cutoff: usize, a: f64, b: f64, kind: SpectralKind) -> Result<Self, SpdeError> {
        if !(a > 0.0 && a.is_finite() && b >= 0.0 && b.is_finite()) {
            return Err(SpdeError::InvalidCoefficients);
        }
        Ok(Self {
            modes: vec![Complex64::new(0.0, 0.0); cutoff + 1],
            a,
            b,
            kind,
            time: 0.0,
        })
    }

    /// A draw from the stationary law of modes `1..=cutoff`; mode 0 is 0.
    pub fn stationary<R: Rng + ?Sized>(
        cutoff: usize,
        a: f64,
        b: f64,
        kind: SpectralKind,
        rng: &mut R,
    ) -> Result<Self, SpdeError> {
        let mut f = Self::zero(cutoff, a, b, kind)?;
        for k in 1..=cutoff {
            let sd = f.stationary_variance(k).sqrt();
            let (x, y): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            f.modes[k] = Complex64::new(sd * x, sd * y);
        }
        Ok(f)
    }

    pub fn cutoff(&self) -> usize {
        self.modes.len() - 1
    }

    pub fn modes(&self) -> &[Complex64] {
        &self.modes
    }

    /// Coefficient of mode `k`, for any sign of `k`.
    pub fn mode(&self, k: i64) -> Complex64 {
        let c = self.modes[k.unsigned_abs() as usize];
        if k < 0 {
            c.conj()
        } else {
            c
        }
    }

    pub fn set_mode(&mut self, k: usize, value: Complex64) {
        self.modes[k] = if k == 0 {
            Complex64::new(value.re, 0.0)
        } else {
            value
        };
    }

    /// Noise amplitude of mode `k` per unit of `dW_k`.
    fn amplitude(&self, k: usize) -> f64 {
        match self.kind {
            SpectralKind::Ashe => self.b,
            SpectralKind::DerivativeAshe => self.b * TAU * k as f64,
        }
    }

    /// Stationary variance of the real (and of the imaginary) part of mode `k >= 1`.
    pub fn stationary_variance(&self, k: usize) -> f64 {
        let amp = self.amplitude(k);
        amp * amp / (2.0 * decay_rate(self.a, k)) / 2.0
    }

    /// Exact transition over `dt` driven by `noise`.
    pub fn step_with(&mut self, dt: f64, noise: &ModeNoise) -> Result<(), SpdeError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SpdeError::InvalidStep(dt));
        }
        if noise.normals.len() < self.modes.len() {
            return Err(SpdeError::ShapeMismatch);
        }
        for k in 0..self.modes.len() {
            let rate = decay_rate(self.a, k);
            let (xc, xs) = noise.normals[k];
            let scale = ou_scale(rate, dt);
            let kick = match (k, self.kind) {
                (0, SpectralKind::DerivativeAshe) => Complex64::new(0.0, 0.0),
                (0, SpectralKind::Ashe) => Complex64::new(self.b * scale * xc, 0.0),
                (_, SpectralKind::Ashe) => Complex64::new(xc, -xs) * (self.b * scale / SQRT_2),
                // 2 pi i k (xc - i xs) / sqrt(2) = 2 pi k (xs + i xc) / sqrt(2).
                (_, SpectralKind::DerivativeAshe) => {
                    Complex64::new(xs, xc) * (self.amplitude(k) * scale / SQRT_2)
                }
            };
            self.modes[k] = self.modes[k] * (-rate * dt).exp() + kick;
        }
        self.time += dt;
        Ok(())
    }

    /// `<field, J>`. Fourier modes are read off directly; tabulated test
    /// functions are projected onto the retained modes.
    pub fn pair(&self, test: &TestFunction) -> f64 {
        match test {
            TestFunction::Cos(k) => self.mode_or_zero(*k as usize).re,
            TestFunction::Sin(k) if *k == 0 => 0.0,
            TestFunction::Sin(k) => -self.mode_or_zero(*k as usize).im,
            TestFunction::Tabulated(_) => {
                let m = 2 * self.modes.len() + 2;
                let mut buf: Vec<Complex64> = test
                    .grid(m, 0.0)
                    .into_iter()
                    .map(|v| Complex64::new(v, 0.0))
                    .collect();
                FftPlanner::new().plan_fft_forward(m).process(&mut buf);
                let j = |k: usize| buf[k] / m as f64;
                let mut total = (self.modes[0] * j(0).conj()).re;
                for k in 1..self.modes.len() {
                    total += 2.0 * (self.modes[k] * j(k).conj()).re;
                }
                total
            }
        }
    }

    fn mode_or_zero(&self, k: usize) -> Complex64 {
        self.modes.get(k).copied().unwrap_or_default()
    }
}

/// Exact step of one field with fresh noise from `rng`.
pub fn ashe_step<R: Rng + ?Sized>(
    field: &mut SpectralField,
    dt: f64,
    rng: &mut R,
) -> Result<(), SpdeError> {
    let noise = ModeNoise::draw(field.cutoff(), rng);
    field.step_with(dt, &noise)
}

/// Steps every field with the same noise.
pub fn ashe_step_shared<R: Rng + ?Sized>(
    fields: &mut [SpectralField],
    dt: f64,
    rng: &mut R,
) -> Result<(), SpdeError> {
    let cutoff = fields.first().map_or(0, SpectralField::cutoff);
    if fields.iter().any(|f| f.cutoff() != cutoff) {
        return Err(SpdeError::ShapeMismatch);
    }
    let noise = ModeNoise::draw(cutoff, rng);
    fields.iter_mut().try_for_each(|f| f.step_with(dt, &noise))
}

/// A field sampled at `m` points `x_i = i / m` of the torus.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub values: Vec<f64>,
    pub dx: f64,
    pub lambda: f64,
    pub a: f64,
    pub time: f64,
    /// Set once any value has been non-positive.
    pub nonpositive: bool,
}

impl GridField {
    pub fn new(values: Vec<f64>, lambda: f64, a: f64) -> Result<Self, SpdeError> {
        if values.len() < 4 {
            return Err(SpdeError::GridTooSmall(values.len()));
        }
        if !(a > 0.0 && a.is_finite() && lambda.is_finite()) {
            return Err(SpdeError::InvalidCoefficients);
        }
        let nonpositive = values.iter().any(|&v| v <= 0.0);
        Ok(Self {
            dx: 1.0 / values.len() as f64,
            values,
            lambda,
            a,
            time: 0.0,
            nonpositive,
        })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(m: usize, f: F, lambda: f64, a: f64) -> Result<Self, SpdeError> {
        Self::new((0..m).map(|i| f(i as f64 / m as f64)).collect(), lambda, a)
    }

    pub fn m(&self) -> usize {
        self.values.len()
    }

    /// Largest stable step `dx^2 / (2a)`.
    pub fn stability_limit(&self) -> f64 {
        self.dx * self.dx / (2.0 * self.a)
    }

    /// Explicit Euler-Maruyama step with cell noise `dw` (each `N(0, dt/dx)`).
    pub fn step_with(&mut self, dt: f64, dw: &[f64]) -> Result<(), SpdeError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SpdeError::InvalidStep(dt));
        }
        let limit = self.stability_limit();
        if dt > limit * (1.0 + 1e-12) {
            return Err(SpdeError::StabilityViolated { dt, limit });
        }
        let m = self.m();
        if dw.len() != m {
            return Err(SpdeError::ShapeMismatch);
        }
        let z = &self.values;
        let diffusion = self.a * dt / (self.dx * self.dx);
        let coupling = self.lambda * self.a.sqrt();
        let next: Vec<f64> = (0..m)
            .map(|i| {
                let (l, r) = (z[(i + m - 1) % m], z[(i + 1) % m]);
                z[i] + diffusion * (l - 2.0 * z[i] + r) + coupling * z[i] * dw[i]
            })
            .collect();
        self.nonpositive |= next.iter().any(|&v| v <= 0.0);
        self.values = next;
        self.time += dt;
        Ok(())
    }
}

/// Discrete space-time white noise increments `N(0, dt/dx)` for `m` cells.
pub fn grid_noise<R: Rng + ?Sized>(m: usize, dt: f64, rng: &mut R) -> Vec<f64> {
    let sd = (dt * m as f64).sqrt();
    (0..m).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// One Euler-Maruyama step of the multiplicative-noise heat equation.
pub fn mshe_step<R: Rng + ?Sized>(field: &mut GridField, dt: f64, rng: &mut R) -> Result<(), SpdeError> {
    let dw = grid_noise(field.m(), dt, rng);
    field.step_with(dt, &dw)
}

/// Steps every field with the same cell noise.
pub fn mshe_step_shared<R: Rng + ?Sized>(
    fields: &mut [GridField],
    dt: f64,
    rng: &mut R,
) -> Result<(), SpdeError> {
    let m = fields.first().map_or(0, GridField::m);
    if fields.iter().any(|f| f.m() != m) {
        return Err(SpdeError::ShapeMismatch);
    }
    let dw = grid_noise(m, dt, rng);
    fields.iter_mut().try_for_each(|f| f.step_with(dt, &dw))
}

/// `-sum_i J'(x_i) log Z_i dx`, the Cole-Hopf pairing of the Burgers field.
pub fn cole_hopf_pairing(field: &GridField, test: &TestFunction) -> Result<f64, SpdeError> {
    let m = field.m();
    let mut total = 0.0;
    for (i, &z) in field.values.iter().enumerate() {
        if z <= 0.0 {
            return Err(SpdeError::NonpositiveField(i));
        }
        total += test.derivative(i as f64 / m as f64) * z.ln();
    }
    Ok(-total * field.dx)
}

/// Heat semigroup `e^{t a Laplacian}` applied to grid data by exact Fourier
/// evolution of its trigonometric interpolant.
pub fn heat_spectral(values: &[f64], a: f64, t: f64) -> Vec<f64> {
    let m = values.len();
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(m).process(&mut buf);
    for (j, c) in buf.iter_mut().enumerate() {
        let k = if 2 * j <= m { j } else { m - j };
        *c *= (-decay_rate(a, k) * t).exp() / m as f64;
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    buf.iter().map(|z| z.re).collect()
}

/// `sqrt(dx sum_i (u_i - v_i)^2)`.
pub fn l2_distance(u: &[f64], v: &[f64]) -> f64 {
    let dx = 1.0 / u.len() as f64;
    (u.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>() * dx).sqrt()
}

/// Number of equal steps of size at most `dt_max` covering `[0, t]`.
fn steps_for(t: f64, dt_max: f64) -> (usize, f64) {
    let steps = (t / dt_max).ceil().max(1.0) as usize;
    (steps, t / steps as f64)
}

/// Shared-noise evolution of two derivative-ASHE fields to time `t`;
/// returns `|<Y^1 - Y^2, J>|` at time 0 and at `t`.
pub fn feller_check_ashe(
    first: &SpectralField,
    second: &SpectralField,
    test: &TestFunction,
    t: f64,
    dt: f64,
    seed: u64,
) -> Result<(f64, f64), SpdeError> {
    if first.cutoff() != second.cutoff() || first.a != second.a || first.b != second.b {
        return Err(SpdeError::ShapeMismatch);
    }
    let before = (first.pair(test) - second.pair(test)).abs();
    let mut fields = [first.clone(), second.clone()];
    let (steps, h) = steps_for(t, dt);
    let mut rng = stream(seed, 0);
    for _ in 0..steps {
        ashe_step_shared(&mut fields, h, &mut rng)?;
    }
    Ok((before, (fields[0].pair(test) - fields[1].pair(test)).abs()))
}

/// Statistics of the shared-noise MSHE pair for one input perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FellerRow {
    pub epsilon: f64,
    /// Mean over runs of `dx sum (Z^eps_0 - Z_0)^2`.
    pub input_ms: f64,
    /// Mean over runs of the squared Cole-Hopf pairing difference at `t`.
    pub output_ms: f64,
    /// Standard error of `output_ms`.
    pub output_se: f64,
    pub runs: usize,
    /// Runs dropped because a field became non-positive.
    pub excluded: usize,
}

/// MSHE Feller check: pairs `Z_0` and `Z_0 (1 + eps cos 2 pi x)` driven by
/// the same noise (run `r` uses stream `r` of `seed` for every `eps`).
#[allow(clippy::too_many_arguments)]
pub fn feller_check_sbe(
    initial: &GridField,
    epsilons: &[f64],
    test: &TestFunction,
    t: f64,
    dt: f64,
    runs: usize,
    seed: u64,
) -> Result<Vec<FellerRow>, SpdeError> {
    let m = initial.m();
    let (steps, h) = steps_for(t, dt);
    epsilons
        .iter()
        .map(|&eps| {
            let perturbed: Vec<f64> = initial
                .values
                .iter()
                .enumerate()
                .map(|(i, z)| z * (1.0 + eps * (TAU * i as f64 / m as f64).cos()))
                .collect();
            let base = initial.clone();
            let other = GridField::new(perturbed, initial.lambda, initial.a)?;
            let input_ms = l2_distance(&base.values, &other.values).powi(2);
            let mut outputs = Vec::with_capacity(runs);
            let mut excluded = 0;
            for r in 0..runs {
                let mut fields = [base.clone(), other.clone()];
                let mut rng = stream(seed, r as u64);
                for _ in 0..steps {
                    mshe_step_shared(&mut fields, h, &mut rng)?;
                }
                if fields.iter().any(|f| f.nonpositive) {
                    excluded += 1;
                    continue;
                }
                let d = cole_hopf_pairing(&fields[0], test)? - cole_hopf_pairing(&fields[1], test)?;
                outputs.push(d * d);
            }
            let k = outputs.len() as f64;
            let mean = outputs.iter().sum::<f64>() / k;
            let var = outputs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
            Ok(FellerRow {
                epsilon: eps,
                input_ms,
                output_ms: mean,
                output_se: (var / k).sqrt(),
                runs,
                excluded,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::mean_var;

    #[test]
    fn pure_decay_without_noise() {
        let mut f = SpectralField::zero(8, 0.3, 0.0, SpectralKind::DerivativeAshe).unwrap();
        f.set_mode(1, Complex64::new(1.0, -0.5));
        f.set_mode(3, Complex64::new(0.2, 0.1));
        let mut rng = stream(1, 0);
        for _ in 0..10 {
            ashe_step(&mut f, 0.01, &mut rng).unwrap();
        }
        let e1 = (-0.3 * TAU * TAU * 0.1f64).exp();
        assert!((f.mode(1) - Complex64::new(1.0, -0.5) * e1).norm() < 1e-15);
        let e3 = (-0.3 * 9.0 * TAU * TAU * 0.1f64).exp();
        assert!((f.mode(3) - Complex64::new(0.2, 0.1) * e3).norm() < 1e-15);
        assert_eq!(f.mode(-1), f.mode(1).conj());
    }

    #[test]
    fn derivative_mode_zero_is_frozen() {
        let mut f = SpectralField::zero(4, 1.0, 2.0, SpectralKind::DerivativeAshe).unwrap();
        f.set_mode(0, Complex64::new(0.7, 0.0));
        let mut rng = stream(2, 0);
        for _ in 0..100 {
            ashe_step(&mut f, 0.05, &mut rng).unwrap();
        }
        assert_eq!(f.mode(0), Complex64::new(0.7, 0.0));
        assert_eq!(f.pair(&TestFunction::Cos(0)), 0.7);
    }

    #[test]
    fn stationary_variance_matches_fine_euler_oracle() {
        // Euler-Maruyama on the real coordinate <Y, cos 2 pi k x> of the
        // derivative field: dX = -a (2 pi k)^2 X dt + b 2 pi k dB / sqrt(2).
        let (a, b, k) = (0.25, 1.0, 1usize);
        let rate = a * (TAU * k as f64).powi(2);
        let amp = b * TAU * k as f64 / SQRT_2;
        let mut rng = stream(3, 0);
        let dt = 1e-4;
        let mut x = 0.0f64;
        let mut samples = Vec::new();
        for step in 0..4_000_000u64 {
            let z: f64 = rng.sample(StandardNormal);
            x += -rate * x * dt + amp * dt.sqrt() * z;
            if step > 10_000 && step % 500 == 0 {
                samples.push(x);
            }
        }
        let (_, em_var) = mean_var(&samples);
        let f = SpectralField::zero(4, a, b, SpectralKind::DerivativeAshe).unwrap();
        let exact = f.stationary_variance(k);
        assert!((exact - b * b / (4.0 * a)).abs() < 1e-15);
        // 8000 samples with correlation time ~ 0.1 / 0.05 spacing.
        assert!((em_var / exact - 1.0).abs() < 0.1, "{em_var} vs {exact}");

        // The exact solver samples the same law.
        let mut g = SpectralField::zero(2, a, b, SpectralKind::DerivativeAshe).unwrap();
        let mut xs = Vec::new();
        for _ in 0..40_000 {
            ashe_step(&mut g, 0.5, &mut rng).unwrap();
            xs.push(g.pair(&TestFunction::Cos(1)));
        }
        let (_, v) = mean_var(&xs);
        assert!((v / exact - 1.0).abs() < 0.03, "{v} vs {exact}");
    }

    #[test]
    fn shared_noise_difference_is_deterministic() {
        let mut rng = stream(4, 0);
        let first = SpectralField::stationary(16, 0.125, 1.0, SpectralKind::DerivativeAshe, &mut rng).unwrap();
        let mut second = first.clone();
        let delta = 0.3;
        second.set_mode(1, first.mode(1) + Complex64::new(delta, 0.0));
        let (d0, dt) = feller_check_ashe(&first, &second, &TestFunction::Cos(1), 1.0, 0.01, 9).unwrap();
        assert!((d0 - delta).abs() < 1e-15);
        let expected = delta * (-std::f64::consts::PI.powi(2) / 2.0).exp();
        assert!((dt - expected).abs() < 1e-12, "{dt} vs {expected}");
        let (z0, zt) = feller_check_ashe(&first, &first, &TestFunction::Sin(2), 1.0, 0.01, 9).unwrap();
        assert_eq!((z0, zt), (0.0, 0.0));
    }

    #[test]
    fn tabulated_pairing_matches_modes() {
        let mut rng = stream(5, 0);
        let f = SpectralField::stationary(8, 0.5, 1.0, SpectralKind::Ashe, &mut rng).unwrap();
        let j = TestFunction::tabulated(
            (0..64).map(|i| (TAU * 2.0 * i as f64 / 64.0).cos() + 0.5 * (TAU * 3.0 * i as f64 / 64.0).sin()).collect(),
            None,
        )
        .unwrap();
        let direct = f.pair(&TestFunction::Cos(2)) + 0.5 * f.pair(&TestFunction::Sin(3));
        assert!((f.pair(&j) - direct).abs() < 1e-12);
    }

    #[test]
    fn mshe_stability_and_heat_limit() {
        let mut z = GridField::from_fn(32, |x| 1.0 + 0.5 * (TAU * x).cos(), 0.0, 1.0).unwrap();
        let dx2 = z.dx * z.dx;
        let mut rng = stream(6, 0);
        assert!(matches!(
            mshe_step(&mut z, dx2, &mut rng),
            Err(SpdeError::StabilityViolated { .. })
        ));
        let init = z.values.clone();
        let dt = dx2 / 4.0;
        for _ in 0..400 {
            mshe_step(&mut z, dt, &mut rng).unwrap();
        }
        let exact = heat_spectral(&init, 1.0, 400.0 * dt);
        assert!(l2_distance(&z.values, &exact) < 1e-3);
    }

    #[test]
    fn mshe_mean_is_preserved() {
        let dt = (1.0f64 / 32.0).powi(2) / 4.0;
        let mut means = Vec::new();
        for r in 0..400 {
            let mut z = GridField::from_fn(32, |_| 1.0, 1.0, 1.0).unwrap();
            let mut rng = stream(7, r);
            for _ in 0..200 {
                mshe_step(&mut z, dt, &mut rng).unwrap();
            }
            assert!(!z.nonpositive);
            means.push(z.values.iter().sum::<f64>() / 32.0);
        }
        let (mean, var) = mean_var(&means);
        assert!((mean - 1.0).abs() < 4.0 * (var / 400.0).sqrt(), "{mean}");
    }

    #[test]
    fn cole_hopf_examples() {
        let flat = GridField::from_fn(64, |_| 3.0, 1.0, 1.0).unwrap();
        for j in [TestFunction::Cos(1), TestFunction::Sin(2)] {
            assert!(cole_hopf_pairing(&flat, &j).unwrap().abs() < 1e-13);
        }
        // Z = e^h: -<J', h> = <J, h'> by periodic integration by parts.
        let h = |x: f64| 0.4 * (TAU * x).sin() + 0.2 * (TAU * 2.0 * x).cos();
        let dh = |x: f64| 0.4 * TAU * (TAU * x).cos() - 0.4 * TAU * (TAU * 2.0 * x).sin();
        let j = TestFunction::Cos(1);
        for m in [32usize, 64] {
            let z = GridField::from_fn(m, |x| h(x).exp(), 1.0, 1.0).unwrap();
            let lhs = cole_hopf_pairing(&z, &j).unwrap();
            let rhs: f64 = (0..4096).map(|i| {
                let x = i as f64 / 4096.0;
                j.eval(x) * dh(x)
            }).sum::<f64>() / 4096.0;
            assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        }
        let z = GridField::from_fn(32, |x| 1.5 + (TAU * x).sin(), 1.0, 1.0).unwrap();
        let mut z2 = z.clone();
        z2.values.iter_mut().for_each(|v| *v = v.powf(2.5));
        let p = cole_hopf_pairing(&z, &j).unwrap();
        assert!((cole_hopf_pairing(&z2, &j).unwrap() - 2.5 * p).abs() < 1e-12);
        let mut bad = z.clone();
        bad.values[3] = 0.0;
        assert_eq!(cole_hopf_pairing(&bad, &j), Err(SpdeError::NonpositiveField(3)));
    }

    #[test]
    fn sbe_feller_distances_shrink() {
        let z0 = GridField::from_fn(32, |x| 1.0 + 0.3 * (TAU * x).sin(), 1.0, 1.0).unwrap();
        let dt = z0.dx * z0.dx / 4.0;
        let rows = feller_check_sbe(&z0, &[0.2, 0.1, 0.05, 0.0], &TestFunction::Cos(1), 0.02, dt, 40, 8).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].output_ms < w[0].output_ms);
        }
        assert_eq!(rows[3].output_ms, 0.0);
        assert!(rows.iter().all(|r| r.excluded == 0));
    }
}
