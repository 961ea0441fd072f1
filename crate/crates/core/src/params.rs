use thiserror::Error;

use crate::rate::RateFunction;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamsError {
    #[error("lattice size must be at least 2, got {0}")]
    LatticeTooSmall(usize),
    #[error("asymmetry strength must be finite and non-negative, got {0}")]
    InvalidGamma(f64),
    #[error("asymmetry exponent must be at least 1/2, got {0}")]
    InvalidBeta(f64),
    #[error("density must be finite and non-negative, got {0}")]
    InvalidDensity(f64),
}

/// Model parameters for the weakly asymmetric zero-range process on the
/// discrete torus with `n` sites.
///
/// A particle at `x` jumps right at rate `n^2 (1 + gamma n^-beta) g(eta_x)`
/// and left at rate `n^2 g(eta_x)`; time is macroscopic.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub n: usize,
    pub gamma: f64,
    pub beta: f64,
    pub rho: f64,
    pub rate: RateFunction,
}

impl ModelParams {
    pub fn new(
        n: usize,
        gamma: f64,
        beta: f64,
        rho: f64,
        rate: RateFunction,
    ) -> Result<Self, ParamsError> {
        let params = Self {
            n,
            gamma,
            beta,
            rho,
            rate,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        if self.n < 2 {
            return Err(ParamsError::LatticeTooSmall(self.n));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(ParamsError::InvalidGamma(self.gamma));
        }
        if !(self.beta.is_finite() && self.beta >= 0.5) {
            return Err(ParamsError::InvalidBeta(self.beta));
        }
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return Err(ParamsError::InvalidDensity(self.rho));
        }
        Ok(())
    }

    /// `gamma * n^-beta`, the relative excess of the rightward rate.
    pub fn bias(&self) -> f64 {
        self.gamma * (self.n as f64).powf(-self.beta)
    }

    /// `n^2`, the diffusive time speed-up.
    pub fn speed(&self) -> f64 {
        let n = self.n as f64;
        n * n
    }

    /// Rightward rate per unit of `g`.
    pub fn right_rate(&self) -> f64 {
        self.speed() * (1.0 + self.bias())
    }

    /// Leftward rate per unit of `g`.
    pub fn left_rate(&self) -> f64 {
        self.speed()
    }

    /// Probability that a jump is rightward, `(1 + b) / (2 + b)`.
    pub fn right_probability(&self) -> f64 {
        let b = self.bias();
        (1.0 + b) / (2.0 + b)
    }

    /// Speed of the moving frame, `gamma n^(1 - beta) c'`.
    pub fn frame_speed(&self, c_prime: f64) -> f64 {
        self.gamma * (self.n as f64).powf(1.0 - self.beta) * c_prime
    }

    /// Header fragment shared by exported files.
    pub fn header(&self) -> String {
        format!(
            "n={} gamma={} beta={} rho={} rate={}",
            self.n,
            self.gamma,
            self.beta,
            self.rho,
            self.rate.label()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_invalid() {
        let g = RateFunction::constant;
        assert!(ModelParams::new(1, 0.0, 1.0, 1.0, g()).is_err());
        assert!(ModelParams::new(4, -1.0, 1.0, 1.0, g()).is_err());
        assert!(ModelParams::new(4, 1.0, 0.49, 1.0, g()).is_err());
        assert!(ModelParams::new(4, 1.0, 0.5, f64::NAN, g()).is_err());
    }

    #[test]
    fn derived_rates() {
        let p = ModelParams::new(4, 1.0, 0.5, 1.0, RateFunction::linear()).unwrap();
        assert_eq!(p.bias(), 0.5);
        assert_eq!(p.right_rate(), 24.0);
        assert_eq!(p.left_rate(), 16.0);
        assert_eq!(p.right_probability(), 0.6);
        let sym = ModelParams::new(10, 0.0, 3.0, 1.0, RateFunction::linear()).unwrap();
        assert_eq!(sym.frame_speed(0.25), 0.0);
    }
}
