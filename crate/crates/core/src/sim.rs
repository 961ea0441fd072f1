//! Exact continuous-time simulation of the zero-range dynamics.
//!
//! Each event draws an exponential waiting time with the total rate, picks
//! the departure site proportionally to `g(eta_x)` through the rate index and
//! then the direction with probability `(1 + b) / (2 + b)` for a right jump.

use rand::Rng;
use rand_distr::Exp1;
use thiserror::Error;

use crate::configuration::{Configuration, ConfigurationError};
use crate::params::ModelParams;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("no particle can jump: total rate is 0")]
    EmptySystem,
    #[error("configuration has {got} sites but the model has {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("final time must be finite and non-negative, got {0}")]
    InvalidTime(f64),
    #[error(transparent)]
    Configuration(#[from] ConfigurationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Left,
    Right,
}

/// One particle jump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent {
    /// Macroscopic time of the event.
    pub time: f64,
    pub from: usize,
    pub to: usize,
    pub direction: Direction,
    /// `+1` for a leftward jump across the periodic boundary (site 0 to
    /// site n-1), `-1` for a rightward one, `0` otherwise. This is the change
    /// of the boundary flux.
    pub crossing: i8,
}

impl JumpEvent {
    pub fn new(time: f64, from: usize, direction: Direction, n: usize) -> Self {
        let (to, crossing) = match direction {
            Direction::Right if from + 1 == n => (0, -1),
            Direction::Right => (from + 1, 0),
            Direction::Left if from == 0 => (n - 1, 1),
            Direction::Left => (from - 1, 0),
        };
        Self {
            time,
            from,
            to,
            direction,
            crossing,
        }
    }
}

/// Receives every event of a run, after the configuration is updated.
pub trait Observer {
    fn on_event(&mut self, event: &JumpEvent, config: &Configuration);
}

impl Observer for () {
    fn on_event(&mut self, _: &JumpEvent, _: &Configuration) {}
}

impl<F: FnMut(&JumpEvent, &Configuration)> Observer for F {
    fn on_event(&mut self, event: &JumpEvent, config: &Configuration) {
        self(event, config)
    }
}

/// Collects all events.
#[derive(Debug, Default, Clone)]
pub struct EventLog {
    pub events: Vec<JumpEvent>,
}

impl Observer for EventLog {
    fn on_event(&mut self, event: &JumpEvent, _: &Configuration) {
        self.events.push(*event);
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq)]
pub struct RunStats {
    pub events: u64,
    pub right_jumps: u64,
    pub left_jumps: u64,
    /// Net boundary flux accumulated during the run.
    pub flux: i64,
}

/// `n^2 (2 + gamma n^-beta) sum_x g(eta_x)`.
pub fn total_jump_rate(config: &Configuration, params: &ModelParams) -> f64 {
    params.speed() * (2.0 + params.bias()) * config.rate_sum()
}

/// A configuration evolving under the dynamics of `params`.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: Configuration,
    n: usize,
    speed: f64,
    right_probability: f64,
    time: f64,
    events: u64,
}

impl Simulation {
    pub fn new(config: Configuration, params: &ModelParams) -> Result<Self, SimError> {
        if config.n() != params.n {
            return Err(SimError::SizeMismatch {
                expected: params.n,
                got: config.n(),
            });
        }
        Ok(Self {
            n: params.n,
            speed: params.speed() * (2.0 + params.bias()),
            right_probability: params.right_probability(),
            config,
            time: 0.0,
            events: 0,
        })
    }

    pub fn config(&self) -> &Configuration {
        &self.config
    }

    pub fn into_config(self) -> Configuration {
        self.config
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn total_rate(&self) -> f64 {
        self.speed * self.config.rate_sum()
    }

    /// Waiting time to the next event, or `None` for an empty system.
    fn draw_waiting_time<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<f64> {
        let rate = self.total_rate();
        (rate > 0.0).then(|| {
            let e: f64 = rng.sample(Exp1);
            e / rate
        })
    }

    /// Chooses the departure site and direction and applies the jump.
    fn apply<R: Rng + ?Sized>(&mut self, time: f64, rng: &mut R) -> Result<JumpEvent, SimError> {
        let index = self.config.index();
        let total = index.total();
        let from = loop {
            let u: f64 = rng.random::<f64>() * total;
            // Rounding can land u on the total; redraw in that case.
            if let Some(x) = index.find(u) {
                break x;
            }
        };
        let direction = if rng.random::<f64>() < self.right_probability {
            Direction::Right
        } else {
            Direction::Left
        };
        let event = JumpEvent::new(time, from, direction, self.n);
        self.config.move_particle(event.from, event.to)?;
        self.time = time;
        self.events += 1;
        Ok(event)
    }

    /// One transition of the generator.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<JumpEvent, SimError> {
        let dt = self.draw_waiting_time(rng).ok_or(SimError::EmptySystem)?;
        self.apply(self.time + dt, rng)
    }

    /// Applies events until the next one would fall after `t_end`, then sets
    /// the clock to `t_end`. By memorylessness the discarded waiting time does
    /// not bias later segments.
    pub fn run_until<R: Rng + ?Sized, O: Observer + ?Sized>(
        &mut self,
        t_end: f64,
        rng: &mut R,
        observer: &mut O,
    ) -> Result<RunStats, SimError> {
        if !(t_end.is_finite() && t_end >= 0.0) {
            return Err(SimError::InvalidTime(t_end));
        }
        let mut stats = RunStats::default();
        while let Some(dt) = self.draw_waiting_time(rng) {
            let t = self.time + dt;
            if t > t_end {
                break;
            }
            let event = self.apply(t, rng)?;
            stats.events += 1;
            stats.flux += i64::from(event.crossing);
            if event.direction == Direction::Right {
                stats.right_jumps += 1;
            } else {
                stats.left_jumps += 1;
            }
            observer.on_event(&event, &self.config);
        }
        self.time = self.time.max(t_end);
        Ok(stats)
    }
}

/// Runs `config` to macroscopic time `t_end` and returns the final state.
pub fn run_until<R: Rng + ?Sized, O: Observer + ?Sized>(
    config: Configuration,
    params: &ModelParams,
    t_end: f64,
    rng: &mut R,
    observer: &mut O,
) -> Result<(Configuration, RunStats), SimError> {
    let mut sim = Simulation::new(config, params)?;
    let stats = sim.run_until(t_end, rng, observer)?;
    Ok((sim.into_config(), stats))
}
