//! Jump-rate functions `g: Z>=0 -> R>=0` for the zero-range process.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RateError {
    #[error("g(0) must be 0, got {value}")]
    NonZeroAtOrigin { value: f64 },
    #[error("g({k}) = {value} must be strictly positive")]
    NotPositive { k: usize, value: f64 },
    #[error("g is not monotone: g({k}) < g({prev})", prev = .k - 1)]
    NotMonotone { k: usize },
    #[error("|g({k}) - g({prev})| = {increment} exceeds the Lipschitz bound {bound}", prev = .k - 1)]
    LipschitzViolated {
        k: usize,
        increment: f64,
        bound: f64,
    },
    #[error("rate table must contain at least g(0) and g(1)")]
    TableTooShort,
    #[error("rate cap must be at least 1")]
    InvalidCap,
    #[error("occupancy {k} exceeds the tabulated range 0..={k_max}")]
    TableOverflow { k: usize, k_max: usize },
}

/// The family a rate function belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum RateKind {
    /// `g(k) = 1{k >= 1}`
    Constant,
    /// `g(k) = k`
    Linear,
    /// `g(k) = min(k, cap)`
    Capped { cap: u32 },
    /// User-supplied values on `0..=K_max`.
    Table,
}

/// A jump-rate function together with its Lipschitz constant.
///
/// Closed-form kinds are evaluated for any occupancy. Tabulated kinds are only
/// defined on `0..table.len()`; asking for more is a [`RateError::TableOverflow`].
#[derive(Debug, Clone, PartialEq)]
pub struct RateFunction {
    kind: RateKind,
    table: Vec<f64>,
    lipschitz_bound: f64,
    declared_bound: Option<f64>,
}

impl RateFunction {
    pub fn constant() -> Self {
        Self::closed_form(RateKind::Constant)
    }

    pub fn linear() -> Self {
        Self::closed_form(RateKind::Linear)
    }

    pub fn capped(cap: u32) -> Result<Self, RateError> {
        if cap == 0 {
            return Err(RateError::InvalidCap);
        }
        Ok(Self::closed_form(RateKind::Capped { cap }))
    }

    fn closed_form(kind: RateKind) -> Self {
        let mut rate = Self {
            kind,
            table: Vec::new(),
            lipschitz_bound: 1.0,
            declared_bound: None,
        };
        rate.table = (0..=16).map(|k| rate.closed(k)).collect();
        rate
    }

    /// A tabulated rate function. It is not validated here; see
    /// [`validate_rate_function`].
    pub fn tabulated(table: Vec<f64>, declared_bound: Option<f64>) -> Self {
        let lipschitz_bound = declared_bound.unwrap_or_else(|| max_increment(&table));
        Self {
            kind: RateKind::Table,
            table,
            lipschitz_bound,
            declared_bound,
        }
    }

    pub fn kind(&self) -> RateKind {
        self.kind
    }

    pub fn lipschitz_bound(&self) -> f64 {
        self.lipschitz_bound
    }

    /// The bound supplied by the caller for a table, if any.
    pub fn declared_bound(&self) -> Option<f64> {
        self.declared_bound
    }

    /// Tabulated values. For closed-form kinds this is a short preview.
    pub fn table(&self) -> &[f64] {
        &self.table
    }

    /// Largest occupancy at which `g` is defined, if bounded.
    pub fn k_max(&self) -> Option<usize> {
        match self.kind {
            RateKind::Table => Some(self.table.len().saturating_sub(1)),
            _ => None,
        }
    }

    fn closed(&self, k: usize) -> f64 {
        match self.kind {
            RateKind::Constant => f64::from(u8::from(k >= 1)),
            RateKind::Linear => k as f64,
            RateKind::Capped { cap } => k.min(cap as usize) as f64,
            RateKind::Table => self.table[k],
        }
    }

    /// `g(k)`.
    pub fn eval(&self, k: usize) -> Result<f64, RateError> {
        match self.kind {
            RateKind::Table => self.table.get(k).copied().ok_or(RateError::TableOverflow {
                k,
                k_max: self.table.len().saturating_sub(1),
            }),
            _ => Ok(self.closed(k)),
        }
    }

    /// `lim g(k)` as `k -> inf`, or `None` when unbounded. Tables are
    /// treated as constant past their last entry.
    pub fn supremum(&self) -> Option<f64> {
        match self.kind {
            RateKind::Constant => Some(1.0),
            RateKind::Linear => None,
            RateKind::Capped { cap } => Some(f64::from(cap)),
            RateKind::Table => self.table.last().copied(),
        }
    }

    /// `g(0..=k_max)` as a dense vector, extending closed forms on demand.
    /// Tables are truncated to their own range.
    pub fn tabulate(&self, k_max: usize) -> Vec<f64> {
        match self.kind {
            RateKind::Table => self.table.iter().take(k_max + 1).copied().collect(),
            _ => (0..=k_max).map(|k| self.closed(k)).collect(),
        }
    }

    /// Whether all values are integers, in which case `f64` prefix sums are exact.
    pub fn is_integer_valued(&self) -> bool {
        match self.kind {
            RateKind::Table => self.table.iter().all(|g| g.fract() == 0.0 && g.abs() < 1e15),
            _ => true,
        }
    }

    /// Short identifier used in file headers.
    pub fn label(&self) -> String {
        match self.kind {
            RateKind::Constant => "constant".into(),
            RateKind::Linear => "linear".into(),
            RateKind::Capped { cap } => format!("capped:{cap}"),
            RateKind::Table => {
                let vals: Vec<String> = self.table.iter().map(|g| g.to_string()).collect();
                format!("table:{}", vals.join(";"))
            }
        }
    }

    /// Inverse of [`RateFunction::label`].
    pub fn parse_label(s: &str) -> Result<Self, RateError> {
        let s = s.trim();
        match s {
            "constant" => return Ok(Self::constant()),
            "linear" => return Ok(Self::linear()),
            _ => {}
        }
        if let Some(cap) = s.strip_prefix("capped:") {
            let cap: u32 = cap.trim().parse().map_err(|_| RateError::InvalidCap)?;
            return Self::capped(cap);
        }
        if let Some(vals) = s.strip_prefix("table:") {
            let table = vals
                .split(';')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| RateError::TableTooShort)?;
            let rate = Self::tabulated(table, None);
            return validate_rate_function(rate);
        }
        Err(RateError::TableTooShort)
    }
}

fn max_increment(table: &[f64]) -> f64 {
    table
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max)
}

/// Checks `g(0) = 0`, positivity, monotonicity and the Lipschitz bound,
/// scanning `k` upwards and reporting the first violation.
pub fn validate_rate_function(rate: RateFunction) -> Result<RateFunction, RateError> {
    let table = &rate.table;
    if table.len() < 2 {
        return Err(RateError::TableTooShort);
    }
    if !table.iter().all(|g| g.is_finite()) {
        return Err(RateError::NotPositive {
            k: table.iter().position(|g| !g.is_finite()).unwrap_or(0),
            value: f64::NAN,
        });
    }
    if table[0] != 0.0 {
        return Err(RateError::NonZeroAtOrigin { value: table[0] });
    }
    for k in 1..table.len() {
        let (prev, cur) = (table[k - 1], table[k]);
        if cur <= 0.0 {
            return Err(RateError::NotPositive { k, value: cur });
        }
        if cur < prev {
            return Err(RateError::NotMonotone { k });
        }
        let increment = cur - prev;
        if increment > rate.lipschitz_bound {
            return Err(RateError::LipschitzViolated {
                k,
                increment,
                bound: rate.lipschitz_bound,
            });
        }
    }
    Ok(rate)
}
