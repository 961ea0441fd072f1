//! Brownian envelope measures: the product measure conditioned on the height
//! function staying in a sup-norm tube around a target profile.
//!
//! Two exact samplers are provided. Rejection sampling draws sites left to
//! right and abandons a draw as soon as a cut leaves the tube. The tube
//! sampler computes, by a backward recursion over cuts, the probability of
//! finishing inside the tube from every admissible cut value and then draws
//! occupancies forward with the induced (Doob-transformed) kernel. Both use
//! the same integer windows, so they target the same event.

use rand::Rng;
use thiserror::Error;

use crate::height::HeightField;
use crate::measures::ProductMeasure;
use crate::stats::{normal_cdf, wilson_interval, Z95};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvelopeError {
    #[error("walk increment {increment} at step {step} is not a non-negative lattice multiple")]
    NonLatticeIncrement { step: usize, increment: f64 },
    #[error("walk must start at 0, got {0}")]
    WalkNotAnchored(f64),
    #[error("target profile must satisfy target(0) = 0, got {0}")]
    TargetNotAnchored(f64),
    #[error("target abscissae must start at 0, be strictly increasing and lie in [0, 1)")]
    BadAbscissae,
    #[error("target profile must be non-empty, finite and have matching lengths")]
    BadProfile,
    #[error("tube half-width must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("lattice size must be at least 2, got {0}")]
    LatticeTooSmall(usize),
    #[error("no acceptance within {0} attempts")]
    MaxAttemptsExceeded(u64),
    #[error("relative entropy needs at least 1000 samples, got {0}")]
    TooFewSamples(u64),
    #[error("no acceptances in {samples} samples; entropy is at least {lower_bound}")]
    ZeroAcceptances { samples: u64, lower_bound: f64 },
    #[error("tube window at cut {cut} has {width} states, too many for the exact sampler")]
    WindowTooWide { cut: usize, width: u64 },
    #[error("the tube has probability zero under the product measure")]
    EmptyTube,
    #[error("diffusion coefficient must be positive, got {0}")]
    InvalidDiffusion(f64),
}

/// The random-walk image `S_c = n^{-1/2} sum_{y<c} eta_y` of a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkPath {
    pub values: Vec<f64>,
}

pub fn walk_from_config(eta: &[u32]) -> WalkPath {
    let scale = (eta.len() as f64).sqrt();
    let mut acc = 0u64;
    let mut values = Vec::with_capacity(eta.len() + 1);
    values.push(0.0);
    for &k in eta {
        acc += u64::from(k);
        values.push(acc as f64 / scale);
    }
    WalkPath { values }
}

/// Inverse of [`walk_from_config`].
pub fn config_from_walk(walk: &WalkPath) -> Result<Vec<u32>, EnvelopeError> {
    let s = &walk.values;
    if s.first().copied() != Some(0.0) {
        return Err(EnvelopeError::WalkNotAnchored(s.first().copied().unwrap_or(f64::NAN)));
    }
    let scale = ((s.len() - 1) as f64).sqrt();
    let mut prev = 0u64;
    let mut eta = Vec::with_capacity(s.len() - 1);
    for (step, v) in s.iter().enumerate().skip(1) {
        let cum = v * scale;
        let rounded = cum.round();
        let increment = rounded - prev as f64;
        if !cum.is_finite() || (cum - rounded).abs() > 1e-9 * rounded.max(1.0) || increment < 0.0 {
            return Err(EnvelopeError::NonLatticeIncrement {
                step: step - 1,
                increment: (cum - prev as f64) / scale,
            });
        }
        eta.push(increment as u32);
        prev = rounded as u64;
    }
    Ok(eta)
}

/// A continuous periodic profile on the unit torus, piecewise linear between
/// tabulated points.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetProfile {
    xs: Vec<f64>,
    values: Vec<f64>,
}

impl TargetProfile {
    pub fn new(xs: Vec<f64>, values: Vec<f64>) -> Result<Self, EnvelopeError> {
        if xs.is_empty() || xs.len() != values.len() || values.iter().any(|v| !v.is_finite()) {
            return Err(EnvelopeError::BadProfile);
        }
        if xs[0] != 0.0
            || xs.iter().any(|x| !(0.0..1.0).contains(x))
            || xs.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(EnvelopeError::BadAbscissae);
        }
        if values[0].abs() > 1e-12 {
            return Err(EnvelopeError::TargetNotAnchored(values[0]));
        }
        Ok(Self { xs, values })
    }

    /// The zero profile.
    pub fn flat() -> Self {
        Self {
            xs: vec![0.0],
            values: vec![0.0],
        }
    }

    /// Samples `f` at `m` equispaced points of `[0, 1)`.
    pub fn from_fn<F: Fn(f64) -> f64>(m: usize, f: F) -> Result<Self, EnvelopeError> {
        let xs: Vec<f64> = (0..m).map(|j| j as f64 / m as f64).collect();
        let values = xs.iter().map(|&x| f(x)).collect();
        Self::new(xs, values)
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().copied().zip(self.values.iter().copied())
    }

    /// Value at `x` reduced mod 1.
    pub fn eval(&self, x: f64) -> f64 {
        let x = x.rem_euclid(1.0);
        let j = self.xs.partition_point(|&p| p <= x) - 1;
        let (x0, v0) = (self.xs[j], self.values[j]);
        let (x1, v1) = match self.xs.get(j + 1) {
            Some(&x1) => (x1, self.values[j + 1]),
            None => (1.0, self.values[0]),
        };
        v0 + (v1 - v0) * (x - x0) / (x1 - x0)
    }
}

/// The tube event: for every lattice point `x = 0..n-1` of the torus the cut
/// `I_x` must satisfy `|n^{-1/2}(I_x - rho x) - target_x| <= epsilon`. The
/// closing cut `I_n` (the total) is not a point of the torus and is free.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeSpec {
    pub n: usize,
    pub rho: f64,
    pub epsilon: f64,
    pub max_attempts: u64,
    /// Target heights at `x = 0..n-1`, in fluctuation units.
    pub target: Vec<f64>,
    lower: Vec<i64>,
    upper: Vec<i64>,
}

impl EnvelopeSpec {
    /// Tube around a continuous profile evaluated at `x / n`.
    pub fn new(
        profile: &TargetProfile,
        epsilon: f64,
        rho: f64,
        n: usize,
        max_attempts: u64,
    ) -> Result<Self, EnvelopeError> {
        let target = (0..n).map(|c| profile.eval(c as f64 / n as f64)).collect();
        Self::from_target(target, epsilon, rho, n, max_attempts)
    }

    /// Tube around a fixed reference height function.
    pub fn around_height(
        reference: &HeightField,
        epsilon: f64,
        max_attempts: u64,
    ) -> Result<Self, EnvelopeError> {
        let n = reference.n();
        let mut target = reference.values();
        target.truncate(n);
        Self::from_target(target, epsilon, reference.rho, n, max_attempts)
    }

    fn from_target(
        target: Vec<f64>,
        epsilon: f64,
        rho: f64,
        n: usize,
        max_attempts: u64,
    ) -> Result<Self, EnvelopeError> {
        if n < 2 {
            return Err(EnvelopeError::LatticeTooSmall(n));
        }
        if !(epsilon > 0.0) {
            return Err(EnvelopeError::InvalidEpsilon(epsilon));
        }
        if target.len() != n {
            return Err(EnvelopeError::BadProfile);
        }
        if target[0].abs() > 1e-12 {
            return Err(EnvelopeError::TargetNotAnchored(target[0]));
        }
        let s = (n as f64).sqrt();
        let (mut lower, mut upper) = (Vec::with_capacity(n + 1), Vec::with_capacity(n + 1));
        for (c, t) in target.iter().enumerate() {
            let centre = rho * c as f64 + s * t;
            let half = s * epsilon;
            // Saturating float-to-int casts handle an infinite half-width.
            lower.push((centre - half - 1e-9).ceil().max(0.0) as i64);
            upper.push((centre + half + 1e-9).floor() as i64);
        }
        lower.push(0);
        upper.push(i64::MAX);
        if lower[0] > 0 || upper[0] < 0 {
            return Err(EnvelopeError::InvalidEpsilon(epsilon));
        }
        Ok(Self {
            n,
            rho,
            epsilon,
            max_attempts,
            target,
            lower,
            upper,
        })
    }

    /// Admissible range of the cut `c`.
    pub fn window(&self, c: usize) -> (i64, i64) {
        (self.lower[c], self.upper[c])
    }

    pub fn admits(&self, c: usize, cut: i64) -> bool {
        self.lower[c] <= cut && cut <= self.upper[c]
    }

    /// First cut of `eta`'s height (flux 0) outside the tube.
    pub fn first_violation(&self, eta: &[u32]) -> Option<usize> {
        let mut acc = 0i64;
        if !self.admits(0, 0) {
            return Some(0);
        }
        for (x, &k) in eta.iter().enumerate() {
            acc += i64::from(k);
            if !self.admits(x + 1, acc) {
                return Some(x + 1);
            }
        }
        None
    }

    pub fn contains(&self, eta: &[u32]) -> bool {
        eta.len() == self.n && self.first_violation(eta).is_none()
    }

    /// Largest `|H_x - target_x|` of `eta`'s height over the torus points.
    pub fn sup_distance(&self, eta: &[u32]) -> f64 {
        let s = (self.n as f64).sqrt();
        let mut acc = 0i64;
        let mut worst = 0.0f64;
        for (x, &k) in eta.iter().take(self.n - 1).enumerate() {
            acc += i64::from(k);
            let c = x + 1;
            let h = (acc as f64 - self.rho * c as f64) / s;
            worst = worst.max((h - self.target[c]).abs());
        }
        worst
    }
}

/// One draw from the envelope measure by rejection.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeResult {
    pub occupancy: Vec<u32>,
    pub attempts: u64,
    pub accept_rate: f64,
    /// 95% Wilson interval for the acceptance probability.
    pub accept_ci: (f64, f64),
}

/// Draws one product-measure configuration, abandoning it at the first cut
/// outside the tube. Returns whether the draw was accepted.
fn attempt<R: Rng + ?Sized>(
    spec: &EnvelopeSpec,
    measure: &ProductMeasure,
    rng: &mut R,
    eta: &mut Vec<u32>,
) -> bool {
    eta.clear();
    let mut acc = 0i64;
    for c in 1..=spec.n {
        let k = measure.sample(rng);
        acc += i64::from(k);
        if !spec.admits(c, acc) {
            return false;
        }
        eta.push(k);
    }
    true
}

pub fn envelope_sample<R: Rng + ?Sized>(
    spec: &EnvelopeSpec,
    measure: &ProductMeasure,
    rng: &mut R,
) -> Result<EnvelopeResult, EnvelopeError> {
    let mut eta = Vec::with_capacity(spec.n);
    for attempts in 1..=spec.max_attempts {
        if attempt(spec, measure, rng, &mut eta) {
            assert!(spec.contains(&eta), "accepted configuration must lie in the tube");
            return Ok(EnvelopeResult {
                occupancy: eta,
                attempts,
                accept_rate: 1.0 / attempts as f64,
                accept_ci: wilson_interval(1, attempts, Z95),
            });
        }
    }
    Err(EnvelopeError::MaxAttemptsExceeded(spec.max_attempts))
}

/// Number of product-measure draws out of `samples` that land in the tube.
pub fn count_acceptances<R: Rng + ?Sized>(
    spec: &EnvelopeSpec,
    measure: &ProductMeasure,
    samples: u64,
    rng: &mut R,
) -> u64 {
    let mut eta = Vec::with_capacity(spec.n);
    (0..samples)
        .filter(|_| attempt(spec, measure, rng, &mut eta))
        .count() as u64
}

/// `-log p` for the tube probability `p`, with a 95% interval carried over
/// from the Wilson interval of the acceptance frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyEstimate {
    pub accepted: u64,
    pub samples: u64,
    pub p_hat: f64,
    pub p_low: f64,
    pub p_high: f64,
    pub h_hat: f64,
    pub h_low: f64,
    pub h_high: f64,
}

impl EntropyEstimate {
    pub fn from_counts(accepted: u64, samples: u64) -> Result<Self, EnvelopeError> {
        let (p_low, p_high) = wilson_interval(accepted, samples, Z95);
        if accepted == 0 {
            return Err(EnvelopeError::ZeroAcceptances {
                samples,
                lower_bound: -p_high.ln(),
            });
        }
        let p_hat = accepted as f64 / samples as f64;
        Ok(Self {
            accepted,
            samples,
            p_hat,
            p_low,
            p_high,
            h_hat: -p_hat.ln(),
            h_low: -p_high.ln(),
            h_high: -p_low.ln(),
        })
    }
}

pub fn relative_entropy_estimate<R: Rng + ?Sized>(
    spec: &EnvelopeSpec,
    measure: &ProductMeasure,
    samples: u64,
    rng: &mut R,
) -> Result<EntropyEstimate, EnvelopeError> {
    if samples < 1000 {
        return Err(EnvelopeError::TooFewSamples(samples));
    }
    EntropyEstimate::from_counts(count_acceptances(spec, measure, samples, rng), samples)
}

const MAX_WINDOW: u64 = 1 << 20;

/// Exact sampler and exact probability for the tube event.
#[derive(Debug, Clone)]
pub struct TubeSampler {
    pmf: Vec<f64>,
    lower: Vec<i64>,
    /// Rescaled probabilities of finishing in the tube, per cut and state.
    h: Vec<Vec<f64>>,
    log_probability: f64,
}

impl TubeSampler {
    pub fn new(spec: &EnvelopeSpec, measure: &ProductMeasure) -> Result<Self, EnvelopeError> {
        let n = spec.n;
        let pmf = measure.pmf().to_vec();
        let k_max = (pmf.len() - 1) as i64;
        let mut lower = Vec::with_capacity(n + 1);
        let mut upper = Vec::with_capacity(n + 1);
        for c in 0..=n {
            let (lo, hi) = spec.window(c);
            let hi = hi.min(k_max.saturating_mul(c as i64));
            let width = (hi - lo + 1).max(0) as u64;
            if width > MAX_WINDOW {
                return Err(EnvelopeError::WindowTooWide { cut: c, width });
            }
            lower.push(lo);
            upper.push(hi);
        }
        let mut h: Vec<Vec<f64>> = (0..=n)
            .map(|c| vec![0.0; (upper[c] - lower[c] + 1).max(0) as usize])
            .collect();
        h[n].iter_mut().for_each(|v| *v = 1.0);
        let mut log_scale = 0.0;
        for c in (0..n).rev() {
            let (next, rest) = h.split_at_mut(c + 1);
            let (cur, next) = (&mut next[c], &rest[0]);
            let (lo_next, hi_next) = (lower[c + 1], upper[c + 1]);
            let mut max = 0.0f64;
            for (i, slot) in cur.iter_mut().enumerate() {
                let cut = lower[c] + i as i64;
                let k_lo = (lo_next - cut).max(0);
                let k_hi = (hi_next - cut).min(k_max);
                let mut acc = 0.0;
                for k in k_lo..=k_hi {
                    acc += pmf[k as usize] * next[(cut + k - lo_next) as usize];
                }
                *slot = acc;
                max = max.max(acc);
            }
            if max == 0.0 {
                return Err(EnvelopeError::EmptyTube);
            }
            cur.iter_mut().for_each(|v| *v /= max);
            log_scale += max.ln();
        }
        let start = h[0].get((0 - lower[0]) as usize).copied().unwrap_or(0.0);
        if start == 0.0 {
            return Err(EnvelopeError::EmptyTube);
        }
        Ok(Self {
            pmf,
            lower,
            h,
            log_probability: log_scale + start.ln(),
        })
    }

    /// `P(A)` under the (truncated) product measure.
    pub fn probability(&self) -> f64 {
        self.log_probability.exp()
    }

    /// `ln P(A)`, usable when the probability underflows.
    pub fn log_probability(&self) -> f64 {
        self.log_probability
    }

    /// An exact draw from the product measure conditioned on the tube.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<u32> {
        let n = self.h.len() - 1;
        let k_max = (self.pmf.len() - 1) as i64;
        let mut eta = Vec::with_capacity(n);
        let mut cut = 0i64;
        for c in 0..n {
            let next = &self.h[c + 1];
            let lo_next = self.lower[c + 1];
            let k_lo = (lo_next - cut).max(0);
            let k_hi = (lo_next + next.len() as i64 - 1 - cut).min(k_max);
            let weight = |k: i64| self.pmf[k as usize] * next[(cut + k - lo_next) as usize];
            let total: f64 = (k_lo..=k_hi).map(weight).sum();
            let mut u = rng.random::<f64>() * total;
            let mut chosen = k_hi;
            for k in k_lo..=k_hi {
                let w = weight(k);
                if u < w {
                    chosen = k;
                    break;
                }
                u -= w;
            }
            // Guard against rounding picking a zero-weight tail state.
            while weight(chosen) == 0.0 && chosen > k_lo {
                chosen -= 1;
            }
            eta.push(chosen as u32);
            cut += chosen;
        }
        eta
    }
}

/// Monte Carlo estimate of a small-ball probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallBallEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// `P(sup_[0,1] |f - B| < epsilon)` for Brownian motion `B` with variance
/// `d t`, on a grid of `2^grid_level` steps.
///
/// Paths are grown step by step from the Gaussian increment truncated to the
/// band `[f - epsilon, f + epsilon]` at the next grid point, and weighted by
/// the band mass of each step (sequential importance sampling, unbiased for
/// the grid event). Each step is further weighted by the probability that
/// the Brownian bridge between grid points stays inside the linearly
/// interpolated band, which removes the discretisation bias of checking grid
/// points only.
pub fn brownian_small_ball<R: Rng + ?Sized>(
    f: &TargetProfile,
    epsilon: f64,
    d: f64,
    samples: u64,
    grid_level: u32,
    rng: &mut R,
) -> Result<SmallBallEstimate, EnvelopeError> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(EnvelopeError::InvalidDiffusion(d));
    }
    if !(epsilon > 0.0) {
        return Err(EnvelopeError::InvalidEpsilon(epsilon));
    }
    let m = 1usize << grid_level;
    let dt = 1.0 / m as f64;
    let sd = (d * dt).sqrt();
    // The endpoint of [0, 1] lies at x = 1, whose periodic image is 0.
    let fs: Vec<f64> = (0..=m)
        .map(|i| if i == m { f.eval(1.0 - 1e-15) } else { f.eval(i as f64 * dt) })
        .collect();
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for _ in 0..samples {
        let mut b = 0.0f64;
        let mut weight = 1.0f64;
        for i in 0..m {
            let a = (fs[i + 1] - epsilon - b) / sd;
            let c = (fs[i + 1] + epsilon - b) / sd;
            let (z, mass) = truncated_normal(a, c, rng.random::<f64>());
            weight *= mass;
            if weight == 0.0 {
                break;
            }
            let b_next = b + sd * z;
            let (up0, up1) = (fs[i] + epsilon - b, fs[i + 1] + epsilon - b_next);
            let (dn0, dn1) = (b - fs[i] + epsilon, b_next - fs[i + 1] + epsilon);
            let p_up = (-2.0 * up0 * up1 / (d * dt)).exp();
            let p_dn = (-2.0 * dn0 * dn1 / (d * dt)).exp();
            weight *= (1.0 - p_up - p_dn).max(0.0);
            b = b_next;
        }
        sum += weight;
        sum2 += weight * weight;
    }
    let n = samples as f64;
    let estimate = sum / n;
    let var = (sum2 / n - estimate * estimate).max(0.0);
    Ok(SmallBallEstimate {
        estimate,
        std_error: (var / n).sqrt(),
    })
}

/// Inverse-CDF draw of a standard normal restricted to `[a, c]` from the
/// uniform `u`, with the mass of the interval. Works in the lower tail for
/// accuracy.
fn truncated_normal(a: f64, c: f64, u: f64) -> (f64, f64) {
    let flip = a > 0.0;
    let (lo, hi) = if flip { (-c, -a) } else { (a, c) };
    let (p_lo, p_hi) = (normal_cdf(lo), normal_cdf(hi));
    let mass = p_hi - p_lo;
    if mass <= 0.0 {
        return (0.0, 0.0);
    }
    let z = crate::stats::normal_quantile(p_lo + u * mass).clamp(lo, hi);
    (if flip { -z } else { z }, mass)
}

/// `P(sup_[0,1] |B| < epsilon)` for Brownian motion with variance `d t`.
///
/// Uses the eigenfunction series
/// `4/pi sum_n (-1)^n / (2n+1) exp(-(2n+1)^2 pi^2 d / (8 epsilon^2))` when it
/// converges fast, and the equivalent reflection (image) series
/// `sum_k (-1)^k [Phi((2k+1) a) - Phi((2k-1) a)]`, `a = epsilon / sqrt(d)`,
/// otherwise.
pub fn small_ball_series(epsilon: f64, d: f64) -> f64 {
    let a = epsilon / d.sqrt();
    if a <= 1.0 {
        let mut total = 0.0;
        for n in 0..10_000 {
            let m = (2 * n + 1) as f64;
            let term = (-m * m * std::f64::consts::PI.powi(2) / (8.0 * a * a)).exp() / m;
            total += if n % 2 == 0 { term } else { -term };
            if term < 1e-18 {
                break;
            }
        }
        4.0 / std::f64::consts::PI * total
    } else {
        let mut total = 0.0;
        for k in -200i32..=200 {
            let k = f64::from(k);
            let term = normal_cdf((2.0 * k + 1.0) * a) - normal_cdf((2.0 * k - 1.0) * a);
            total += if (k as i64) % 2 == 0 { term } else { -term };
        }
        total
    }
}
