//! Particle configurations on the discrete torus.

use thiserror::Error;

use crate::fenwick::RateIndex;
use crate::rate::{RateError, RateFunction};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigurationError {
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error("site {0} is empty")]
    EmptySite(usize),
    #[error("site {site} out of range for a torus of {n} sites")]
    SiteOutOfRange { site: usize, n: usize },
    #[error("configuration needs at least 2 sites, got {0}")]
    TooFewSites(usize),
}

const REBUILD_EVERY: u64 = 1 << 20;

/// Occupancies `eta_x` on `n` sites with a maintained index of `g(eta_x)`.
#[derive(Debug, Clone)]
pub struct Configuration {
    eta: Vec<u32>,
    total: u64,
    rates: Vec<f64>,
    index: RateIndex,
    exact: bool,
    updates: u64,
}

impl PartialEq for Configuration {
    fn eq(&self, other: &Self) -> bool {
        self.eta == other.eta
    }
}

impl Configuration {
    pub fn new(eta: Vec<u32>, rate: &RateFunction) -> Result<Self, ConfigurationError> {
        let total: u64 = eta.iter().map(|&k| u64::from(k)).sum();
        // Occupancies never exceed the conserved particle count.
        Self::with_capacity(eta, rate, total)
    }

    /// Like [`Configuration::new`] with the rate table sized for occupancies
    /// up to `max_occupancy` (at least the total).
    pub fn with_capacity(
        eta: Vec<u32>,
        rate: &RateFunction,
        max_occupancy: u64,
    ) -> Result<Self, ConfigurationError> {
        if eta.len() < 2 {
            return Err(ConfigurationError::TooFewSites(eta.len()));
        }
        let total: u64 = eta.iter().map(|&k| u64::from(k)).sum();
        let cap = usize::try_from(max_occupancy.max(total))
            .unwrap_or(usize::MAX)
            .max(1);
        let rates = match rate.k_max() {
            Some(k_max) => rate.tabulate(k_max.min(cap)),
            None => rate.tabulate(cap),
        };
        let k_max = rates.len() - 1;
        let site_rates = eta
            .iter()
            .map(|&k| {
                rates
                    .get(k as usize)
                    .copied()
                    .ok_or(RateError::TableOverflow { k: k as usize, k_max })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            eta,
            total,
            rates,
            index: RateIndex::new(site_rates),
            exact: rate.is_integer_valued(),
            updates: 0,
        })
    }

    pub fn empty(n: usize, rate: &RateFunction) -> Result<Self, ConfigurationError> {
        Self::new(vec![0; n], rate)
    }

    pub fn n(&self) -> usize {
        self.eta.len()
    }

    pub fn occupancy(&self) -> &[u32] {
        &self.eta
    }

    pub fn into_occupancy(self) -> Vec<u32> {
        self.eta
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// `g(eta_x)`.
    pub fn site_rate(&self, x: usize) -> f64 {
        self.index.get(x)
    }

    /// `g(k)` from the table this configuration was built with.
    pub fn g(&self, k: u32) -> Option<f64> {
        self.rates.get(k as usize).copied()
    }

    /// Maintained `sum_x g(eta_x)`.
    pub fn rate_sum(&self) -> f64 {
        self.index.total()
    }

    /// `sum_x g(eta_x)` recomputed from scratch.
    pub fn rate_sum_naive(&self) -> f64 {
        self.eta.iter().map(|&k| self.rates[k as usize]).sum()
    }

    pub(crate) fn index(&self) -> &RateIndex {
        &self.index
    }

    /// Moves one particle from `from` to `to`, updating the rate index at
    /// exactly those two sites.
    pub fn move_particle(&mut self, from: usize, to: usize) -> Result<(), ConfigurationError> {
        let n = self.eta.len();
        for site in [from, to] {
            if site >= n {
                return Err(ConfigurationError::SiteOutOfRange { site, n });
            }
        }
        if self.eta[from] == 0 {
            return Err(ConfigurationError::EmptySite(from));
        }
        let arriving = self.eta[to] as usize + 1;
        let Some(&to_rate) = self.rates.get(arriving) else {
            return Err(RateError::TableOverflow {
                k: arriving,
                k_max: self.rates.len() - 1,
            }
            .into());
        };
        self.eta[from] -= 1;
        self.eta[to] += 1;
        self.index.set(from, self.rates[self.eta[from] as usize]);
        self.index.set(to, to_rate);
        self.updates += 1;
        if !self.exact && self.updates.is_multiple_of(REBUILD_EVERY) {
            self.index.rebuild();
        }
        Ok(())
    }
}
