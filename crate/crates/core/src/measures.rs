//! Product invariant measures `nu_alpha` of the zero-range process.
//!
//! The single-site marginal has weights `alpha^k / prod_{j<=k} g(j)` (the
//! empty product is 1, so `w_0 = 1`) normalised by the partition function
//! `Z(alpha)`. This is an exponential family in `log alpha`, which gives
//! closed forms for the transport constants:
//!
//! * `c = E[g(eta)] = alpha` (reindex the sum),
//! * `d rho / d alpha = chi / alpha`, hence `c' = alpha / chi`,
//! * `d chi / d alpha = kappa_3 / alpha`, hence `c'' = alpha / chi^2 (1 - kappa_3 / chi)`.

use rand::Rng;
use thiserror::Error;

use crate::configuration::{Configuration, ConfigurationError};
use crate::rate::RateFunction;

/// Relative tail mass allowed when truncating the marginal.
pub const TAIL_TOLERANCE: f64 = 1e-12;
/// Relative tail of the third moment allowed when truncating.
const MOMENT_TAIL_TOLERANCE: f64 = 1e-17;
/// Default cap on the truncation level.
pub const DEFAULT_K_BUDGET: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("fugacity must be finite and non-negative, got {0}")]
    InvalidFugacity(f64),
    #[error("density must be finite and non-negative, got {0}")]
    InvalidDensity(f64),
    #[error("partition function diverges at alpha = {alpha} (sup g = {sup_g})")]
    DivergentPartitionFunction { alpha: f64, sup_g: f64 },
    #[error("tail mass {tail:e} still above tolerance at truncation level {k}")]
    TruncationTooSmall { k: usize, tail: f64 },
    #[error("no fugacity with finite partition function reaches density {rho}")]
    DensityUnreachable { rho: f64 },
    #[error("fugacity solver did not converge for density {rho}")]
    NoConvergence { rho: f64 },
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("c' from the exponential-family identity ({identity}) and finite differences ({fd}) differ by more than {bound:e}")]
    DerivativeMismatch { identity: f64, fd: f64, bound: f64 },
    #[error("pmf must be non-empty, finite, non-negative and have positive mass")]
    InvalidPmf,
}

/// The single-site marginal of `nu_alpha` and its derived constants.
#[derive(Debug, Clone)]
pub struct ProductMeasure {
    pub alpha: f64,
    /// `ln Z(alpha)`.
    pub log_z: f64,
    pmf: Vec<f64>,
    cdf: Vec<f64>,
    pub mean_rho: f64,
    pub chi: f64,
    /// Third cumulant of the occupancy.
    pub kappa3: f64,
    /// `E[g(eta)]`.
    pub c: f64,
    pub c_prime: f64,
    pub c_second: f64,
    /// Diffusion coefficient of the height random walk (increment variance).
    pub d: f64,
    /// Upper bound on the probability mass dropped by truncation.
    pub tail_mass: f64,
    /// Bound on `w_{k+1} / w_k` past the truncation level, when known.
    tail_ratio: Option<f64>,
}

impl ProductMeasure {
    /// `Z(alpha)`; may be infinite in floating point for huge `alpha`.
    pub fn z(&self) -> f64 {
        self.log_z.exp()
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    /// Truncation level `K` (largest represented occupancy).
    pub fn k_max(&self) -> usize {
        self.pmf.len() - 1
    }

    /// A measure given directly by its probability table, outside the
    /// exponential family. Constants that need the family are `NaN`.
    pub fn from_pmf(mut pmf: Vec<f64>) -> Result<Self, MeasureError> {
        let mass: f64 = pmf.iter().sum();
        if pmf.is_empty() || !mass.is_finite() || mass <= 0.0 || pmf.iter().any(|&p| !(p >= 0.0))
        {
            return Err(MeasureError::InvalidPmf);
        }
        pmf.iter_mut().for_each(|p| *p /= mass);
        let (mean, chi, kappa3) = moments(&pmf);
        Ok(Self {
            alpha: f64::NAN,
            log_z: f64::NAN,
            cdf: cumulative(&pmf),
            pmf,
            mean_rho: mean,
            chi,
            kappa3,
            c: f64::NAN,
            c_prime: f64::NAN,
            c_second: f64::NAN,
            d: chi,
            tail_mass: 0.0,
            tail_ratio: None,
        })
    }

    /// Inverse-CDF draw of one occupancy.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        let k = self.cdf.partition_point(|&c| c <= u);
        k.min(self.pmf.len() - 1) as u32
    }

    /// Header fragment for exported files.
    pub fn header(&self) -> String {
        format!(
            "alpha={} Z={} rho={} chi={} c={} c_prime={} c_second={}",
            self.alpha,
            self.z(),
            self.mean_rho,
            self.chi,
            self.c,
            self.c_prime,
            self.c_second
        )
    }
}

fn cumulative(pmf: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = pmf
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    if let Some(last) = cdf.last_mut() {
        *last = 1.0;
    }
    cdf
}

fn moments(pmf: &[f64]) -> (f64, f64, f64) {
    let mean: f64 = pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
    let (mut m2, mut m3) = (0.0, 0.0);
    for (k, p) in pmf.iter().enumerate() {
        let d = k as f64 - mean;
        m2 += d * d * p;
        m3 += d * d * d * p;
    }
    (mean, m2, m3)
}

/// Builds the marginal of `nu_alpha`, truncated adaptively at the smallest
/// `K <= k_budget` whose tail bound is below [`TAIL_TOLERANCE`].
pub fn build_measure(
    rate: &RateFunction,
    alpha: f64,
    k_budget: usize,
) -> Result<ProductMeasure, MeasureError> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(MeasureError::InvalidFugacity(alpha));
    }
    let g = |k: usize| -> f64 {
        match rate.k_max() {
            Some(km) if k > km => rate.table()[km],
            _ => rate.eval(k).unwrap_or(f64::INFINITY),
        }
    };
    if alpha == 0.0 {
        let (g1, g2) = (g(1), g(2));
        let pmf = vec![1.0];
        return Ok(ProductMeasure {
            alpha,
            log_z: 0.0,
            cdf: cumulative(&pmf),
            pmf,
            mean_rho: 0.0,
            chi: 0.0,
            kappa3: 0.0,
            c: 0.0,
            // Limits of alpha(rho) at rho -> 0 from the small-alpha expansion
            // rho = alpha / g1 + alpha^2 (2 / (g1 g2) - 1 / g1^2) + O(alpha^3).
            c_prime: g1,
            c_second: 2.0 * g1 - 4.0 * g1 * g1 / g2,
            d: 0.0,
            tail_mass: 0.0,
            tail_ratio: Some(0.0),
        });
    }
    if let Some(sup_g) = rate.supremum() {
        if alpha >= sup_g {
            return Err(MeasureError::DivergentPartitionFunction { alpha, sup_g });
        }
    }

    let ln_alpha = alpha.ln();
    let mut log_w = vec![0.0f64];
    // Running sum of weights relative to the current maximum.
    let mut max_log = 0.0f64;
    let mut scaled_sum = 1.0f64;
    let mut k = 0usize;
    let (tail, tail_ratio) = loop {
        let r = alpha / g(k + 1);
        if r < 1.0 {
            let last = log_w[k];
            // Subsequent ratios are at most r because g is non-decreasing.
            let log_tail = last + (r / (1.0 - r)).ln();
            let rel_tail = (log_tail - max_log).exp() / scaled_sum;
            // Also bound sum_{j>=1} (k + j)^3 w_{k+j} so that cumulants up to
            // third order are unaffected at double precision.
            let kf = k as f64;
            let cube_sum = 4.0
                * (kf.powi(3) * r / (1.0 - r) + r * (1.0 + 4.0 * r + r * r) / (1.0 - r).powi(4));
            let rel_moment_tail = (last + cube_sum.ln() - max_log).exp() / scaled_sum;
            if rel_tail < TAIL_TOLERANCE && rel_moment_tail < MOMENT_TAIL_TOLERANCE {
                break (rel_tail, r);
            }
        }
        let table_end = rate.k_max().is_some_and(|km| k >= km);
        if k >= k_budget || table_end {
            let rel_tail = if r < 1.0 {
                ((log_w[k] + (r / (1.0 - r)).ln()) - max_log).exp() / scaled_sum
            } else {
                f64::INFINITY
            };
            return Err(MeasureError::TruncationTooSmall { k, tail: rel_tail });
        }
        let next = log_w[k] + ln_alpha - g(k + 1).ln();
        log_w.push(next);
        if next > max_log {
            scaled_sum *= (max_log - next).exp();
            max_log = next;
        }
        scaled_sum += (next - max_log).exp();
        k += 1;
    };

    let log_z = max_log + scaled_sum.ln();
    let pmf: Vec<f64> = log_w.iter().map(|lw| (lw - log_z).exp()).collect();
    let mass: f64 = pmf.iter().sum();
    let pmf: Vec<f64> = pmf.into_iter().map(|p| p / mass).collect();
    let (mean, chi, kappa3) = moments(&pmf);
    let c: f64 = pmf.iter().enumerate().map(|(k, p)| p * g(k)).sum();
    let (c_prime, c_second) = if chi > 0.0 {
        (alpha / chi, alpha / (chi * chi) * (1.0 - kappa3 / chi))
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(ProductMeasure {
        alpha,
        log_z,
        cdf: cumulative(&pmf),
        pmf,
        mean_rho: mean,
        chi,
        kappa3,
        c,
        c_prime,
        c_second,
        d: chi,
        tail_mass: tail,
        tail_ratio: Some(tail_ratio),
    })
}

/// Finds `alpha` with `|mean(alpha) - rho| <= tol` by bracketing, bisection
/// and Newton steps (`d mean / d alpha = chi / alpha`).
pub fn solve_fugacity(
    rate: &RateFunction,
    rho: f64,
    tol: f64,
) -> Result<ProductMeasure, MeasureError> {
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(MeasureError::InvalidDensity(rho));
    }
    if rho == 0.0 {
        return build_measure(rate, 0.0, DEFAULT_K_BUDGET);
    }
    let build = |alpha: f64| build_measure(rate, alpha, DEFAULT_K_BUDGET);

    // Bracket [lo, hi] with mean(lo) <= rho < mean(hi).
    let mut lo = 0.0;
    let mut hi_measure = None;
    match rate.supremum() {
        Some(sup) => {
            for j in 1..=52 {
                let alpha = sup * (1.0 - 0.5f64.powi(j));
                let m = match build(alpha) {
                    Ok(m) => m,
                    Err(MeasureError::TruncationTooSmall { .. }) => break,
                    Err(e) => return Err(e),
                };
                if m.mean_rho > rho {
                    hi_measure = Some(m);
                    break;
                }
                lo = alpha;
            }
        }
        None => {
            let mut alpha = rho.max(1.0);
            for _ in 0..64 {
                let m = build(alpha)?;
                if m.mean_rho > rho {
                    hi_measure = Some(m);
                    break;
                }
                lo = alpha;
                alpha *= 2.0;
            }
        }
    }
    let hi_measure = hi_measure.ok_or(MeasureError::DensityUnreachable { rho })?;
    let mut hi = hi_measure.alpha;

    let mut alpha = 0.5 * (lo + hi);
    let mut best: Option<ProductMeasure> = None;
    for _ in 0..400 {
        let m = build(alpha)?;
        let err = m.mean_rho - rho;
        if err > 0.0 {
            hi = alpha;
        } else {
            lo = alpha;
        }
        let improved = best
            .as_ref()
            .is_none_or(|b| err.abs() < (b.mean_rho - rho).abs());
        if improved {
            best = Some(m.clone());
        }
        if err.abs() <= tol && !improved {
            break;
        }
        let newton = alpha - err * alpha / m.chi;
        let next = if newton > lo && newton < hi && m.chi > 0.0 {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if next == alpha || hi - lo <= f64::EPSILON * hi {
            break;
        }
        alpha = next;
    }
    match best {
        Some(m) if (m.mean_rho - rho).abs() <= tol => Ok(m),
        _ => Err(MeasureError::NoConvergence { rho }),
    }
}

/// `c`, `c'` and `c''` of a measure, with `c'` computed both from the
/// exponential-family identity and from Richardson-extrapolated central
/// differences of `alpha(rho)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportConstants {
    pub c: f64,
    pub c_prime: f64,
    /// `alpha / chi`; `None` at zero density where it is `0 / 0`.
    pub c_prime_identity: Option<f64>,
    pub c_prime_fd: f64,
    pub c_second: f64,
}

pub fn transport_constants(
    measure: &ProductMeasure,
    rate: &RateFunction,
    h: f64,
) -> Result<TransportConstants, MeasureError> {
    if !(h.is_finite() && h > 0.0) {
        return Err(MeasureError::InvalidStep(h));
    }
    let rho = measure.mean_rho;
    let tol = 1e-14 * rho.max(1.0);
    let alpha_at = |r: f64| -> Result<f64, MeasureError> {
        if r == rho {
            Ok(measure.alpha)
        } else {
            Ok(solve_fugacity(rate, r, tol)?.alpha)
        }
    };
    let c = measure
        .pmf
        .iter()
        .enumerate()
        .map(|(k, p)| p * rate.eval(k).unwrap_or(0.0))
        .sum();
    let f0 = measure.alpha;
    let (c_prime_fd, c_second) = if rho >= 2.0 * h {
        let (fp1, fm1) = (alpha_at(rho + h)?, alpha_at(rho - h)?);
        let (fp2, fm2) = (alpha_at(rho + 2.0 * h)?, alpha_at(rho - 2.0 * h)?);
        let d1 = (fp1 - fm1) / (2.0 * h);
        let d2 = (fp2 - fm2) / (4.0 * h);
        ((4.0 * d1 - d2) / 3.0, (fp1 - 2.0 * f0 + fm1) / (h * h))
    } else {
        // One-sided second-order stencils near zero density.
        let (f1, f2, f3) = (
            alpha_at(rho + h)?,
            alpha_at(rho + 2.0 * h)?,
            alpha_at(rho + 3.0 * h)?,
        );
        (
            (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h),
            (2.0 * f0 - 5.0 * f1 + 4.0 * f2 - f3) / (h * h),
        )
    };
    let c_prime_identity = (measure.chi > 0.0).then(|| measure.alpha / measure.chi);
    if let Some(identity) = c_prime_identity {
        let bound = 10.0 * h * h;
        if (identity - c_prime_fd).abs() > bound {
            return Err(MeasureError::DerivativeMismatch {
                identity,
                fd: c_prime_fd,
                bound,
            });
        }
    }
    Ok(TransportConstants {
        c,
        c_prime: c_prime_identity.unwrap_or(c_prime_fd),
        c_prime_identity,
        c_prime_fd,
        c_second,
    })
}

/// `n` i.i.d. occupancies from the marginal.
pub fn sample_occupancies<R: Rng + ?Sized>(
    measure: &ProductMeasure,
    n: usize,
    rng: &mut R,
) -> Vec<u32> {
    (0..n).map(|_| measure.sample(rng)).collect()
}

/// A configuration drawn from `nu_alpha^n`.
pub fn sample_configuration<R: Rng + ?Sized>(
    measure: &ProductMeasure,
    rate: &RateFunction,
    n: usize,
    rng: &mut R,
) -> Result<Configuration, ConfigurationError> {
    Configuration::new(sample_occupancies(measure, n, rng), rate)
}

/// Whether `sum_k pmf(k) k^(2 + delta)` is finite.
///
/// Measures built from a rate function carry a bound on the weight ratio
/// past truncation; a ratio below one means geometric decay and every
/// moment is finite. Bare tables are judged by the local power-law exponent
/// of the summand over the last octave of the table.
pub fn moment_condition_check(measure: &ProductMeasure, delta: f64) -> bool {
    if !(delta > 0.0) {
        return false;
    }
    if let Some(r) = measure.tail_ratio {
        return r < 1.0;
    }
    let k_max = measure.k_max();
    if k_max < 8 {
        return false;
    }
    let term = |k: usize| measure.pmf[k] * (k as f64).powf(2.0 + delta);
    let (k_hi, k_lo) = (k_max, k_max / 2);
    let (t_hi, t_lo) = (term(k_hi), term(k_lo));
    if t_hi == 0.0 {
        return true;
    }
    if t_lo == 0.0 {
        return false;
    }
    // Summable iff the terms decay faster than k^-1.
    let exponent = -(t_hi / t_lo).ln() / (k_hi as f64 / k_lo as f64).ln();
    exponent > 1.1
}

/// CSV export: a comment header with the constants, then `k,pmf` rows.
pub fn measure_csv(measure: &ProductMeasure) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["k", "pmf"]).expect("in-memory write");
    for (k, p) in measure.pmf.iter().enumerate() {
        w.write_record([k.to_string(), p.to_string()])
            .expect("in-memory write");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8");
    format!("# {}\n{}", measure.header(), body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn poisson_marginal() {
        let m = build_measure(&RateFunction::linear(), 1.0, DEFAULT_K_BUDGET).unwrap();
        let e = (-1.0f64).exp();
        let mut fact = 1.0;
        for k in 0..10 {
            if k > 0 {
                fact *= k as f64;
            }
            assert!(close(m.pmf()[k], e / fact, 1e-14));
        }
        assert!(close(m.mean_rho, 1.0, 1e-10));
        assert!(close(m.chi, 1.0, 1e-10));
        assert!(close(m.z(), 1.0f64.exp(), 1e-12));
        assert!(m.tail_mass < TAIL_TOLERANCE);
    }

    #[test]
    fn geometric_marginal() {
        let m = build_measure(&RateFunction::constant(), 0.5, DEFAULT_K_BUDGET).unwrap();
        for k in 0..20 {
            assert!(close(m.pmf()[k], 0.5 * 0.5f64.powi(k as i32), 1e-15));
        }
        assert!(close(m.mean_rho, 1.0, 1e-10));
        assert!(close(m.chi, 2.0, 1e-10));
        assert!(close(m.c, 0.5, 1e-10));
        assert!(close(m.c_prime, 0.25, 1e-10));
        // c(rho) = rho / (1 + rho), c'' = -2 / (1 + rho)^3.
        assert!(close(m.c_second, -0.25, 1e-9));
    }

    #[test]
    fn zero_fugacity_is_a_point_mass() {
        let m = build_measure(&RateFunction::constant(), 0.0, 10).unwrap();
        assert_eq!(m.pmf(), &[1.0]);
        assert_eq!(m.mean_rho, 0.0);
        let mut rng = stream(1, 0);
        assert!(sample_occupancies(&m, 50, &mut rng).iter().all(|&k| k == 0));
    }

    #[test]
    fn divergence_and_truncation_errors() {
        assert!(matches!(
            build_measure(&RateFunction::constant(), 1.0, DEFAULT_K_BUDGET),
            Err(MeasureError::DivergentPartitionFunction { .. })
        ));
        assert!(matches!(
            build_measure(&RateFunction::constant(), 0.9, 20),
            Err(MeasureError::TruncationTooSmall { .. })
        ));
        let short = RateFunction::tabulated(vec![0.0, 1.0, 2.0], None);
        assert!(matches!(
            build_measure(&short, 1.0, DEFAULT_K_BUDGET),
            Err(MeasureError::TruncationTooSmall { .. })
        ));
    }

    #[test]
    fn fugacity_closed_forms() {
        for rho in [0.5, 1.0, 2.0] {
            let m = solve_fugacity(&RateFunction::constant(), rho, 1e-13).unwrap();
            assert!(close(m.alpha, rho / (1.0 + rho), 1e-10), "{rho}");
            let m = solve_fugacity(&RateFunction::linear(), rho, 1e-13).unwrap();
            assert!(close(m.alpha, rho, 1e-10));
        }
        assert_eq!(solve_fugacity(&RateFunction::linear(), 0.0, 1e-12).unwrap().alpha, 0.0);
    }

    #[test]
    fn unreachable_density() {
        // g(k) = 1{k>=1} with a short table cannot reach large densities.
        let short = RateFunction::tabulated(vec![0.0, 1.0, 1.0, 1.0, 1.0], None);
        assert!(matches!(
            solve_fugacity(&short, 50.0, 1e-10),
            Err(MeasureError::DensityUnreachable { .. })
        ));
    }

    #[test]
    fn transport_constants_examples() {
        let g = RateFunction::constant();
        let m = solve_fugacity(&g, 1.0, 1e-14).unwrap();
        for h in [1e-3, 1e-4] {
            let t = transport_constants(&m, &g, h).unwrap();
            assert!(close(t.c, 0.5, 1e-10));
            assert!(close(t.c_prime, 0.25, 1e-10));
            assert!(close(t.c_prime_fd, 0.25, 10.0 * h * h));
        }
        let t = transport_constants(&m, &g, 1e-3).unwrap();
        assert!(close(t.c_second, -0.25, 1e-5), "{}", t.c_second);

        let g = RateFunction::linear();
        for rho in [0.3, 1.0, 4.0] {
            let m = solve_fugacity(&g, rho, 1e-14).unwrap();
            let t = transport_constants(&m, &g, 1e-3).unwrap();
            assert!(close(t.c, rho, 1e-10));
            assert!(close(t.c_prime, 1.0, 1e-10));
            assert!(close(t.c_second, 0.0, 1e-5));
        }
    }

    #[test]
    fn degenerate_density_uses_finite_differences() {
        let g = RateFunction::constant();
        let m = solve_fugacity(&g, 0.0, 1e-12).unwrap();
        let t = transport_constants(&m, &g, 1e-4).unwrap();
        assert_eq!(t.c_prime_identity, None);
        assert!(close(t.c_prime_fd, 1.0, 1e-6));
        assert!(close(t.c_second, -2.0, 1e-3));
        assert!(close(m.c_second, -2.0, 1e-12));
    }

    #[test]
    fn sample_mean_and_variance() {
        let g = RateFunction::constant();
        let m = solve_fugacity(&g, 1.0, 1e-13).unwrap();
        let mut rng = stream(7, 0);
        let eta = sample_occupancies(&m, 10_000, &mut rng);
        let mean = eta.iter().map(|&k| f64::from(k)).sum::<f64>() / 1e4;
        assert!((mean - 1.0).abs() < 3.0 * (2.0f64 / 1e4).sqrt(), "{mean}");
        let eta = sample_occupancies(&m, 100_000, &mut rng);
        let mean = eta.iter().map(|&k| f64::from(k)).sum::<f64>() / 1e5;
        let var = eta.iter().map(|&k| (f64::from(k) - mean).powi(2)).sum::<f64>() / (1e5 - 1.0);
        assert!((var / 2.0 - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn moment_condition() {
        let poisson = build_measure(&RateFunction::linear(), 1.0, DEFAULT_K_BUDGET).unwrap();
        assert!(moment_condition_check(&poisson, 0.5));
        let geo = build_measure(&RateFunction::constant(), 0.5, DEFAULT_K_BUDGET).unwrap();
        assert!(moment_condition_check(&geo, 0.5));
        let heavy: Vec<f64> = (0..4000)
            .map(|k| if k == 0 { 0.0 } else { (k as f64).powi(-3) })
            .collect();
        let heavy = ProductMeasure::from_pmf(heavy).unwrap();
        assert!(!moment_condition_check(&heavy, 0.5));
        let light: Vec<f64> = (0..4000).map(|k| 0.7f64.powi(k)).collect();
        assert!(moment_condition_check(&ProductMeasure::from_pmf(light).unwrap(), 0.5));
    }

    #[test]
    fn csv_export_has_header() {
        let m = build_measure(&RateFunction::constant(), 0.5, DEFAULT_K_BUDGET).unwrap();
        let csv = measure_csv(&m);
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("# alpha=0.5 Z=2"));
        assert_eq!(lines.next().unwrap(), "k,pmf");
        assert_eq!(lines.next().unwrap(), "0,0.5");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn normalisation_and_reindexing_identity(alpha in 0.0f64..0.99, cap in 1u32..5, which in 0usize..3) {
            let rate = match which {
                0 => RateFunction::constant(),
                1 => RateFunction::linear(),
                _ => RateFunction::capped(cap).unwrap(),
            };
            let alpha = alpha * rate.supremum().unwrap_or(20.0);
            let m = build_measure(&rate, alpha, DEFAULT_K_BUDGET).unwrap();
            prop_assert!((m.pmf().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(m.pmf().iter().all(|&p| p >= 0.0));
            prop_assert!(m.tail_mass < TAIL_TOLERANCE);
            prop_assert!((m.c - m.alpha).abs() < 1e-10 * m.alpha.max(1.0));
        }

        #[test]
        fn mean_increases_with_fugacity(a in 0.01f64..0.95, da in 0.001f64..0.04) {
            let g = RateFunction::constant();
            let m1 = build_measure(&g, a, DEFAULT_K_BUDGET).unwrap();
            let m2 = build_measure(&g, a + da, DEFAULT_K_BUDGET).unwrap();
            prop_assert!(m2.mean_rho > m1.mean_rho);
        }

        #[test]
        fn fugacity_round_trip(alpha in 0.05f64..6.0, cap in 1u32..4, linear in proptest::bool::ANY) {
            let rate = if linear { RateFunction::linear() } else { RateFunction::capped(cap + 1).unwrap() };
            let alpha = if linear { alpha } else { alpha.min(0.9 * f64::from(cap + 1)) };
            let m = build_measure(&rate, alpha, DEFAULT_K_BUDGET).unwrap();
            let back = solve_fugacity(&rate, m.mean_rho, 1e-12).unwrap();
            prop_assert!((back.alpha - alpha).abs() < 1e-9 * alpha.max(1.0));
        }
    }
}
