//! Basic coupling of several replicas driven by one event stream.
//!
//! Events are proposed at site `x` with intensity proportional to
//! `r_max(x) = max_m g(eta^m_x)`. A mark `u` uniform on `(0, 1]` is drawn and
//! replica `m` performs the jump iff `u r_max(x) <= g(eta^m_x)`. Each replica
//! therefore jumps from `x` at its own rate, and replicas with equal
//! occupancy at `x` always move together.

use rand::Rng;
use rand_distr::Exp1;
use thiserror::Error;

use crate::configuration::{Configuration, ConfigurationError};
use crate::fenwick::RateIndex;
use crate::height::{field_by_sbp, height_from_config, HeightField, TestFunction};
use crate::params::{ModelParams, ParamsError};
use crate::rate::RateFunction;
use crate::sim::{Direction, JumpEvent};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CouplingError {
    #[error("every replica is empty")]
    AllEmpty,
    #[error("coupled system needs between 1 and 64 replicas, got {0}")]
    ReplicaCount(usize),
    #[error("replica {replica} has {got} sites, expected {expected}")]
    SizeMismatch {
        replica: usize,
        expected: usize,
        got: usize,
    },
    #[error("sandwich violated at event {event}, cut {cut}, replica {replica} (height gap {gap})")]
    SandwichViolated {
        event: u64,
        cut: usize,
        replica: usize,
        gap: f64,
    },
    #[error("final time must be finite and non-negative, got {0}")]
    InvalidTime(f64),
    #[error(transparent)]
    Configuration(#[from] ConfigurationError),
    #[error(transparent)]
    Params(#[from] ParamsError),
}

/// One proposal of the coupled dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledEvent {
    /// The jump each mover performs.
    pub jump: JumpEvent,
    /// Bit `m` is set iff replica `m` jumped.
    pub movers: u64,
    pub mark: f64,
}

impl CoupledEvent {
    pub fn moved(&self, replica: usize) -> bool {
        self.movers >> replica & 1 == 1
    }
}

/// `M` replicas on one torus with their heights.
#[derive(Debug, Clone)]
pub struct CoupledState {
    replicas: Vec<Configuration>,
    heights: Vec<HeightField>,
    pub params: ModelParams,
    /// Sandwich slack multiplier.
    pub kappa: f64,
    rmax: RateIndex,
    speed: f64,
    right_probability: f64,
    time: f64,
    events: u64,
}

impl CoupledState {
    pub fn new(
        occupancies: Vec<Vec<u32>>,
        params: &ModelParams,
        kappa: f64,
    ) -> Result<Self, CouplingError> {
        let m = occupancies.len();
        if m == 0 || m > 64 {
            return Err(CouplingError::ReplicaCount(m));
        }
        let n = params.n;
        // All replicas share one rate table large enough for every total.
        let max_total: u64 = occupancies
            .iter()
            .map(|e| e.iter().map(|&k| u64::from(k)).sum::<u64>())
            .max()
            .unwrap_or(0);
        let mut replicas = Vec::with_capacity(m);
        let mut heights = Vec::with_capacity(m);
        for (replica, eta) in occupancies.into_iter().enumerate() {
            if eta.len() != n {
                return Err(CouplingError::SizeMismatch {
                    replica,
                    expected: n,
                    got: eta.len(),
                });
            }
            heights.push(height_from_config(&eta, params.rho, 0));
            replicas.push(Configuration::with_capacity(eta, &params.rate, max_total)?);
        }
        let rmax = RateIndex::new(
            (0..n)
                .map(|x| replicas.iter().map(|c| c.site_rate(x)).fold(0.0, f64::max))
                .collect(),
        );
        Ok(Self {
            replicas,
            heights,
            params: params.clone(),
            kappa,
            rmax,
            speed: params.speed() * (2.0 + params.bias()),
            right_probability: params.right_probability(),
            time: 0.0,
            events: 0,
        })
    }

    pub fn replicas(&self) -> &[Configuration] {
        &self.replicas
    }

    pub fn heights(&self) -> &[HeightField] {
        &self.heights
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    /// Total proposal rate `n^2 (2 + b) sum_x r_max(x)`.
    pub fn total_rate(&self) -> f64 {
        self.speed * self.rmax.total()
    }

    fn refresh(&mut self, x: usize) {
        let r = self.replicas.iter().map(|c| c.site_rate(x)).fold(0.0, f64::max);
        self.rmax.set(x, r);
    }

    /// Applies the coupled proposal at `site` in `direction` with mark `u`.
    pub fn apply(
        &mut self,
        time: f64,
        site: usize,
        direction: Direction,
        u: f64,
    ) -> Result<CoupledEvent, CouplingError> {
        let n = self.params.n;
        let jump = JumpEvent::new(time, site, direction, n);
        let threshold = u * self.rmax.get(site);
        let mut movers = 0u64;
        for (m, (config, height)) in self.replicas.iter_mut().zip(&mut self.heights).enumerate() {
            let g = config.site_rate(site);
            if g > 0.0 && threshold <= g {
                config.move_particle(jump.from, jump.to)?;
                height
                    .apply(&jump)
                    .expect("jump built from the torus geometry");
                movers |= 1 << m;
            }
        }
        if movers != 0 {
            self.refresh(jump.from);
            self.refresh(jump.to);
        }
        self.time = time;
        self.events += 1;
        Ok(CoupledEvent {
            jump,
            movers,
            mark: u,
        })
    }

    fn propose<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<(f64, usize, Direction, f64)> {
        let rate = self.total_rate();
        if rate <= 0.0 {
            return None;
        }
        let e: f64 = rng.sample(Exp1);
        let total = self.rmax.total();
        let site = loop {
            if let Some(x) = self.rmax.find(rng.random::<f64>() * total) {
                break x;
            }
        };
        let direction = if rng.random::<f64>() < self.right_probability {
            Direction::Right
        } else {
            Direction::Left
        };
        let u = 1.0 - rng.random::<f64>();
        Some((self.time + e / rate, site, direction, u))
    }

    /// One coupled transition.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<CoupledEvent, CouplingError> {
        let (t, site, direction, u) = self.propose(rng).ok_or(CouplingError::AllEmpty)?;
        self.apply(t, site, direction, u)
    }

    /// Runs to `t_end`, handing every proposal (including fully thinned ones)
    /// to `observer`.
    pub fn run_until<R, F>(&mut self, t_end: f64, rng: &mut R, mut observer: F) -> Result<(), CouplingError>
    where
        R: Rng + ?Sized,
        F: FnMut(&CoupledEvent, &Self) -> Result<(), CouplingError>,
    {
        if !(t_end.is_finite() && t_end >= 0.0) {
            return Err(CouplingError::InvalidTime(t_end));
        }
        while let Some((t, site, direction, u)) = self.propose(rng) {
            if t > t_end {
                break;
            }
            let ev = self.apply(t, site, direction, u)?;
            observer(&ev, self)?;
        }
        self.time = self.time.max(t_end);
        Ok(())
    }
}

/// Coupled step as a free function.
pub fn coupled_step<R: Rng + ?Sized>(
    state: &mut CoupledState,
    rng: &mut R,
) -> Result<CoupledEvent, CouplingError> {
    state.step(rng)
}

/// Whether `a <= b` at every site.
pub fn sitewise_leq(a: &[u32], b: &[u32]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y)
}

/// Outcome of a sandwich-monitored run.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichReport {
    pub events: u64,
    /// Cut comparisons performed.
    pub checks: u64,
    /// Smallest `kappa epsilon - |H^m_c - H^0_c|` seen, in fluctuation units.
    pub min_slack: f64,
    pub violations: u64,
    /// First recorded violations (at most 1000).
    pub log: Vec<SandwichViolation>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SandwichViolation {
    pub event: u64,
    pub cut: usize,
    pub replica: usize,
    pub slack: f64,
}

/// Checks `H^m_x - kappa epsilon <= H^0_x <= H^m_x + kappa epsilon` for every
/// replica `m >= 1` and every torus point `x = 0..n-1`; returns the first
/// failure.
pub fn check_height_sandwich(state: &CoupledState, epsilon: f64) -> Result<f64, CouplingError> {
    let n = state.params.n;
    let bound = state.kappa * epsilon * (n as f64).sqrt();
    let reference = &state.heights[0];
    let mut min_slack = f64::INFINITY;
    for (m, h) in state.heights.iter().enumerate().skip(1) {
        for c in 0..n {
            let gap = (h.cut(c) - reference.cut(c)).abs() as f64;
            let slack = bound - gap;
            if slack < -1e-9 {
                return Err(CouplingError::SandwichViolated {
                    event: state.events,
                    cut: c,
                    replica: m,
                    gap: gap / (n as f64).sqrt(),
                });
            }
            min_slack = min_slack.min(slack);
        }
    }
    Ok(min_slack / (n as f64).sqrt())
}

/// Runs the coupled system to `t_end` with replica 0 as reference, checking
/// the sandwich at every changed cut after every proposal. The full tube is
/// verified at the start.
pub fn run_with_sandwich<R: Rng + ?Sized>(
    state: &mut CoupledState,
    epsilon: f64,
    t_end: f64,
    rng: &mut R,
) -> Result<SandwichReport, CouplingError> {
    let initial = check_height_sandwich(state, epsilon)?;
    let n = state.params.n;
    let scale = (n as f64).sqrt();
    let bound = state.kappa * epsilon * scale;
    let mut report = SandwichReport {
        events: 0,
        checks: 0,
        min_slack: initial,
        violations: 0,
        log: Vec::new(),
    };
    let start_events = state.events();
    state.run_until(t_end, rng, |ev, s| {
        // Only the cut crossed by the proposal can change; a boundary
        // crossing moves the flux cut at x = 0.
        let cuts: [usize; 2] = match (ev.jump.direction, ev.jump.crossing) {
            (_, 0) => {
                let c = if ev.jump.direction == Direction::Right { ev.jump.to } else { ev.jump.from };
                [c, c]
            }
            _ => [0, 0],
        };
        let reference = &s.heights[0];
        for (m, h) in s.heights.iter().enumerate().skip(1) {
            for &c in &cuts {
                report.checks += 1;
                let slack = bound - (h.cut(c) - reference.cut(c)).abs() as f64;
                report.min_slack = report.min_slack.min(slack / scale);
                if slack < -1e-9 {
                    report.violations += 1;
                    if report.log.len() < 1000 {
                        report.log.push(SandwichViolation {
                            event: s.events(),
                            cut: c,
                            replica: m,
                            slack: slack / scale,
                        });
                    }
                }
            }
        }
        Ok(())
    })?;
    report.events = state.events() - start_events;
    Ok(report)
}

/// `|Y^a - Y^b|` for the fields of two replicas, computed from their heights.
pub fn field_distance(
    state: &CoupledState,
    test: &TestFunction,
    a: usize,
    b: usize,
    c_prime: f64,
) -> f64 {
    let t = state.time();
    let ya = field_by_sbp(&state.heights[a], test, t, &state.params, c_prime).value;
    let yb = field_by_sbp(&state.heights[b], test, t, &state.params, c_prime).value;
    (ya - yb).abs()
}

/// `C_J` such that `|Y^a - Y^b| <= C_J sup_c |H^a_c - H^b_c|`: the discrete
/// total variation of `J` on the shifted grid plus twice `|J_0|` for the
/// winding term.
pub fn field_distance_bound(test: &TestFunction, n: usize, shift: f64) -> f64 {
    let j = test.grid(n, shift);
    let tv: f64 = (0..n).map(|x| (j[(x + 1) % n] - j[x]).abs()).sum();
    tv + 2.0 * j[0].abs()
}

/// Result of the exhaustive single-event order check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttractivityReport {
    pub ordered_pairs: u64,
    pub cases: u64,
    pub violations: u64,
}

/// For every ordered pair `a <= b` of configurations on `n` sites with
/// occupancies at most `k_max`, every site, direction and every distinct
/// thinning outcome, applies one coupled event and checks that the order
/// survives.
pub fn attractivity_exhaustive(
    rate: &RateFunction,
    n: usize,
    k_max: u32,
) -> Result<AttractivityReport, CouplingError> {
    let params = ModelParams::new(n, 1.0, 0.5, 1.0, rate.clone())?;
    let all: Vec<Vec<u32>> = (0..(k_max as usize + 1).pow(n as u32))
        .map(|mut code| {
            (0..n)
                .map(|_| {
                    let v = (code % (k_max as usize + 1)) as u32;
                    code /= k_max as usize + 1;
                    v
                })
                .collect()
        })
        .collect();
    let mut report = AttractivityReport {
        ordered_pairs: 0,
        cases: 0,
        violations: 0,
    };
    for a in &all {
        for b in &all {
            if !sitewise_leq(a, b) || b.iter().all(|&k| k == 0) {
                continue;
            }
            report.ordered_pairs += 1;
            let base = CoupledState::new(vec![a.clone(), b.clone()], &params, 1.0)?;
            for site in 0..n {
                let rmax = base.rmax.get(site);
                if rmax == 0.0 {
                    continue;
                }
                // Marks at each replica's threshold and at 1 realise every
                // distinct set of movers.
                let mut marks: Vec<f64> = base
                    .replicas
                    .iter()
                    .map(|c| c.site_rate(site) / rmax)
                    .filter(|&u| u > 0.0)
                    .collect();
                marks.push(1.0);
                for direction in [Direction::Left, Direction::Right] {
                    for &u in &marks {
                        let mut s = base.clone();
                        s.apply(0.0, site, direction, u)?;
                        report.cases += 1;
                        if !sitewise_leq(s.replicas[0].occupancy(), s.replicas[1].occupancy()) {
                            report.violations += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{sample_occupancies, solve_fugacity};
    use crate::rng::stream;
    use crate::sim::run_until;
    use crate::stats::chi_square_two_sample;

    fn params(n: usize) -> ModelParams {
        ModelParams::new(n, 1.0, 0.5, 1.0, RateFunction::constant()).unwrap()
    }

    #[test]
    fn identical_replicas_never_decouple() {
        let p = params(16);
        let eta: Vec<u32> = (0..16).map(|x| (x % 3) as u32).collect();
        let mut s = CoupledState::new(vec![eta.clone(), eta.clone(), eta], &p, 0.0).unwrap();
        let mut rng = stream(1, 0);
        for _ in 0..20_000 {
            let ev = s.step(&mut rng).unwrap();
            assert!(ev.movers == 0b111 || ev.movers == 0);
        }
        assert_eq!(s.replicas()[0], s.replicas()[1]);
        assert_eq!(s.heights()[0], s.heights()[2]);
        assert_eq!(check_height_sandwich(&s, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn empty_system_errors() {
        let p = params(4);
        let mut s = CoupledState::new(vec![vec![0; 4], vec![0; 4]], &p, 1.0).unwrap();
        assert_eq!(s.step(&mut stream(0, 0)).unwrap_err(), CouplingError::AllEmpty);
        assert!(CoupledState::new(vec![], &p, 1.0).is_err());
    }

    #[test]
    fn exhaustive_attractivity_small_torus() {
        for rate in [RateFunction::constant(), RateFunction::linear(), RateFunction::capped(2).unwrap()] {
            let r = attractivity_exhaustive(&rate, 3, 2).unwrap();
            assert_eq!(r.violations, 0);
            assert!(r.cases > 1000);
        }
    }

    #[test]
    fn non_monotone_rates_break_the_order() {
        // Bypasses validation on purpose: g(2) < g(1).
        let rate = RateFunction::tabulated(vec![0.0, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0], None);
        let r = attractivity_exhaustive(&rate, 3, 2).unwrap();
        assert!(r.violations > 0);
    }

    #[test]
    fn order_preserved_along_runs() {
        let p = params(32);
        let m = solve_fugacity(&p.rate, 1.0, 1e-13).unwrap();
        let mut rng = stream(2, 0);
        let a = sample_occupancies(&m, 32, &mut rng);
        let b: Vec<u32> = a.iter().map(|&k| k + u32::from(rng.random::<bool>())).collect();
        let mut s = CoupledState::new(vec![a, b], &p, 1.0).unwrap();
        s.run_until(0.5, &mut rng, |_, s| {
            assert!(sitewise_leq(s.replicas()[0].occupancy(), s.replicas()[1].occupancy()));
            Ok(())
        })
        .unwrap();
        assert!(s.events() > 10_000);
    }

    #[test]
    fn zero_slack_with_unequal_data_is_caught() {
        let p = params(8);
        let mut s =
            CoupledState::new(vec![vec![1; 8], vec![2, 0, 1, 1, 1, 1, 1, 1]], &p, 0.0).unwrap();
        assert!(matches!(
            check_height_sandwich(&s, 0.5),
            Err(CouplingError::SandwichViolated { cut: 1, replica: 1, .. })
        ));
        s.kappa = 1.0;
        let eps = 1.0 / 8f64.sqrt();
        assert!(check_height_sandwich(&s, eps).is_ok());
        let mut zero = s.clone();
        zero.kappa = 0.0;
        assert!(run_with_sandwich(&mut zero, eps, 0.1, &mut stream(3, 0)).is_err());
    }

    #[test]
    fn sandwich_holds_for_equal_totals() {
        // Equal totals and sup gap <= 1 cut unit: the lifted height order is
        // preserved, so no violation can occur.
        let p = params(32);
        let m = solve_fugacity(&p.rate, 1.0, 1e-13).unwrap();
        let mut rng = stream(4, 0);
        for run in 0..5 {
            let a = sample_occupancies(&m, 32, &mut rng);
            let mut b = a.clone();
            if let Some(x) = (0..31).find(|&x| b[x] > 0) {
                b[x] -= 1;
                b[x + 1] += 1;
            }
            let mut s = CoupledState::new(vec![a, b], &p, 1.0).unwrap();
            let eps = 1.0 / 32f64.sqrt();
            let r = run_with_sandwich(&mut s, eps, 0.2, &mut stream(4, run + 1)).unwrap();
            assert_eq!(r.violations, 0);
            assert!(r.min_slack >= 0.0);
        }
    }

    #[test]
    fn marginal_matches_uncoupled_simulator() {
        let p = params(16);
        let m = solve_fugacity(&p.rate, 1.0, 1e-13).unwrap();
        let (mut coupled, mut plain) = (vec![0u64; 16], vec![0u64; 16]);
        for run in 0..300 {
            let mut rng = stream(5, run);
            let a = sample_occupancies(&m, 16, &mut rng);
            let b = sample_occupancies(&m, 16, &mut rng);
            let mut s = CoupledState::new(vec![a.clone(), b], &p, 1.0).unwrap();
            s.run_until(0.1, &mut rng, |_, _| Ok(())).unwrap();
            for &k in s.replicas()[0].occupancy() {
                coupled[(k as usize).min(15)] += 1;
            }
            let c = Configuration::new(a, &p.rate).unwrap();
            let (c, _) = run_until(c, &p, 0.1, &mut rng, &mut ()).unwrap();
            for &k in c.occupancy() {
                plain[(k as usize).min(15)] += 1;
            }
        }
        assert!(chi_square_two_sample(&coupled, &plain).p_value > 0.001);
    }

    #[test]
    fn field_distance_is_bounded_by_height_gap() {
        let p = params(64);
        let m = solve_fugacity(&p.rate, 1.0, 1e-13).unwrap();
        let mut rng = stream(6, 0);
        let a = sample_occupancies(&m, 64, &mut rng);
        let mut b = a.clone();
        let x = (0..63).find(|&x| b[x] > 0).unwrap();
        b[x] -= 1;
        b[x + 1] += 1;
        let mut s = CoupledState::new(vec![a.clone(), a, b], &p, 1.0).unwrap();
        s.run_until(0.05, &mut rng, |_, _| Ok(())).unwrap();
        let shift = p.frame_speed(0.25) * s.time();
        let gap = (0..=64)
            .map(|c| (s.heights()[2].cut(c) - s.heights()[0].cut(c)).abs())
            .max()
            .unwrap() as f64
            / 8.0;
        for k in 1..=4 {
            let j = TestFunction::Cos(k);
            assert_eq!(field_distance(&s, &j, 0, 1, 0.25), 0.0);
            let d = field_distance(&s, &j, 0, 2, 0.25);
            assert!(d <= field_distance_bound(&j, 64, shift) * gap + 1e-12);
        }
    }
}
