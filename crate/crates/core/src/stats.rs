//! Small statistical toolkit used by the checks and experiments.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Upper tail of the chi-square distribution.
pub fn chi_square_sf(statistic: f64, df: usize) -> f64 {
    if df == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(df as f64).expect("positive degrees of freedom");
    dist.sf(statistic)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Merges adjacent cells (left to right) until each has expected count at
/// least `min_expected`; a short final group is folded into the previous one.
fn pooled_cells(expected: &[f64], min_expected: f64) -> Vec<std::ops::Range<usize>> {
    let mut cells = Vec::new();
    let mut start = 0;
    let mut acc = 0.0;
    for (i, e) in expected.iter().enumerate() {
        acc += e;
        if acc >= min_expected {
            cells.push(start..i + 1);
            start = i + 1;
            acc = 0.0;
        }
    }
    if start < expected.len() {
        match cells.last_mut() {
            Some(last) => last.end = expected.len(),
            None => cells.push(0..expected.len()),
        }
    }
    cells
}

/// Goodness of fit of `observed` counts to `probs` (which may not sum to 1;
/// the deficit is assigned to the last cell). Cells are pooled to expected
/// counts of at least 5.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> ChiSquareTest {
    let len = observed.len().max(probs.len());
    let total: u64 = observed.iter().sum();
    let n = total as f64;
    let mut p: Vec<f64> = (0..len).map(|i| probs.get(i).copied().unwrap_or(0.0)).collect();
    let deficit = 1.0 - p.iter().sum::<f64>();
    if deficit > 0.0 {
        p[len - 1] += deficit;
    }
    let expected: Vec<f64> = p.iter().map(|q| q * n).collect();
    let cells = pooled_cells(&expected, 5.0);
    let mut statistic = 0.0;
    for r in &cells {
        let o: u64 = r.clone().map(|i| observed.get(i).copied().unwrap_or(0)).sum();
        let e: f64 = expected[r.clone()].iter().sum();
        if e > 0.0 {
            statistic += (o as f64 - e).powi(2) / e;
        }
    }
    let df = cells.len().saturating_sub(1);
    ChiSquareTest {
        statistic,
        df,
        p_value: chi_square_sf(statistic, df),
    }
}

/// Two-sample chi-square test of homogeneity for count histograms.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> ChiSquareTest {
    let len = a.len().max(b.len());
    let get = |v: &[u64], i: usize| v.get(i).copied().unwrap_or(0) as f64;
    let (na, nb) = (
        a.iter().sum::<u64>() as f64,
        b.iter().sum::<u64>() as f64,
    );
    let pooled: Vec<f64> = (0..len)
        .map(|i| (get(a, i) + get(b, i)) * na.min(nb) / (na + nb))
        .collect();
    let cells = pooled_cells(&pooled, 5.0);
    let mut statistic = 0.0;
    for r in &cells {
        let oa: f64 = r.clone().map(|i| get(a, i)).sum();
        let ob: f64 = r.clone().map(|i| get(b, i)).sum();
        let total = oa + ob;
        if total == 0.0 {
            continue;
        }
        let ea = total * na / (na + nb);
        let eb = total * nb / (na + nb);
        statistic += (oa - ea).powi(2) / ea + (ob - eb).powi(2) / eb;
    }
    let df = cells.len().saturating_sub(1);
    ChiSquareTest {
        statistic,
        df,
        p_value: chi_square_sf(statistic, df),
    }
}

/// Total-variation distance between two probability vectors.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    let len = p.len().max(q.len());
    0.5 * (0..len)
        .map(|i| (p.get(i).copied().unwrap_or(0.0) - q.get(i).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

/// Empirical pmf of `counts`.
pub fn normalise(counts: &[u64]) -> Vec<f64> {
    let total = counts.iter().sum::<u64>() as f64;
    counts.iter().map(|&c| c as f64 / total).collect()
}

/// Kolmogorov-Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of a one-sample KS statistic with Stephens' small-sample
/// correction.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut q = 0.0;
    for j in 1..=100 {
        let jf = f64::from(j);
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        q += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * q).clamp(0.0, 1.0)
}

/// Running power sums for pooled moments.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MomentSums {
    pub count: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

impl MomentSums {
    pub fn push(&mut self, x: f64) {
        self.count += 1.0;
        self.s1 += x;
        self.s2 += x * x;
        self.s3 += x * x * x;
    }

    pub fn merge(&mut self, other: &Self) {
        self.count += other.count;
        self.s1 += other.s1;
        self.s2 += other.s2;
        self.s3 += other.s3;
    }

    fn minus(&self, other: &Self) -> Self {
        Self {
            count: self.count - other.count,
            s1: self.s1 - other.s1,
            s2: self.s2 - other.s2,
            s3: self.s3 - other.s3,
        }
    }

    pub fn mean(&self) -> f64 {
        self.s1 / self.count
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.s2 / self.count - m * m
    }

    /// Moment skewness `m3 / m2^{3/2}`.
    pub fn skewness(&self) -> f64 {
        let m = self.mean();
        let m2 = self.variance();
        let m3 = self.s3 / self.count - 3.0 * m * self.s2 / self.count + 2.0 * m * m * m;
        m3 / m2.powf(1.5)
    }
}

/// Pooled skewness over groups and its delete-one-group jackknife standard
/// error.
pub fn jackknife_skewness(groups: &[MomentSums]) -> (f64, f64) {
    let mut all = MomentSums::default();
    groups.iter().for_each(|g| all.merge(g));
    let estimate = all.skewness();
    let g = groups.len() as f64;
    if groups.len() < 2 {
        return (estimate, f64::NAN);
    }
    let loo: Vec<f64> = groups.iter().map(|x| all.minus(x).skewness()).collect();
    let mean = loo.iter().sum::<f64>() / g;
    let var = (g - 1.0) / g * loo.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    (estimate, var.sqrt())
}

/// Sample mean and unbiased variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn wilson_examples() {
        let (lo, hi) = wilson_interval(50, 100, Z95);
        assert!((lo - 0.4038).abs() < 1e-4 && (hi - 0.5962).abs() < 1e-4);
        let (lo, hi) = wilson_interval(0, 1000, Z95);
        assert!(lo < 1e-15);
        assert!((hi - 0.003827).abs() < 1e-5);
    }

    #[test]
    fn chi_square_reference_values() {
        assert!((chi_square_sf(3.841_458_820_694_124, 1) - 0.05).abs() < 1e-9);
        assert!((chi_square_sf(18.307_038_053_275_146, 10) - 0.05).abs() < 1e-9);
        let t = chi_square_gof(&[25, 25, 25, 25], &[0.25; 4]);
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.df, 3);
        let t = chi_square_two_sample(&[10, 20, 30], &[10, 20, 30]);
        assert!(t.statistic.abs() < 1e-12);
    }

    #[test]
    fn pooling_merges_sparse_tails() {
        let cells = pooled_cells(&[50.0, 30.0, 3.0, 1.0, 0.5, 0.1], 5.0);
        assert_eq!(cells, vec![0..1, 1..6]);
        assert_eq!(pooled_cells(&[50.0, 30.0, 3.0, 3.0, 0.5], 5.0), vec![0..1, 1..2, 2..5]);
    }

    #[test]
    fn ks_on_normal_samples() {
        let mut rng = stream(3, 0);
        let xs: Vec<f64> = (0..5000).map(|_| rng.sample(StandardNormal)).collect();
        let d = ks_statistic(&xs, normal_cdf);
        assert!(ks_p_value(d, xs.len()) > 0.001);
        let shifted: Vec<f64> = xs.iter().map(|x| x + 0.2).collect();
        let d = ks_statistic(&shifted, normal_cdf);
        assert!(ks_p_value(d, xs.len()) < 1e-6);
        // Critical value at level 0.05 for large n is 1.358 / sqrt(n).
        assert!((ks_p_value(1.358 / 100.0, 10_000) - 0.05).abs() < 2e-3);
    }

    #[test]
    fn skewness_of_exponential_is_two() {
        let mut rng = stream(4, 0);
        let groups: Vec<MomentSums> = (0..50)
            .map(|_| {
                let mut m = MomentSums::default();
                for _ in 0..4000 {
                    m.push(-(1.0 - rng.random::<f64>()).ln());
                }
                m
            })
            .collect();
        let (s, se) = jackknife_skewness(&groups);
        assert!((s - 2.0).abs() < 4.0 * se, "{s} +- {se}");
        assert!(se < 0.2);
    }

    #[test]
    fn regression_slope() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        assert!((ols_slope(&x, &y) - 2.0).abs() < 1e-14);
        assert_eq!(tv_distance(&[0.5, 0.5], &[1.0]), 0.5);
    }
}
