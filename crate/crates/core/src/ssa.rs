//! Exact event-driven simulation of the `N`-particle system.
//!
//! Two engines produce the same law:
//!
//! * [`Method::Direct`] recomputes every site rate before each event and
//!   selects the site by a linear scan. It is the reference path.
//! * [`Method::Classes`] groups particles by position. All particles at the
//!   same position share their rates (the interaction sees the configuration
//!   only through the mean or the sorted multiset of positions), so one event
//!   costs `O(#distinct positions)` instead of `O(N)`.
//!
//! Record times use the left limit: a jump at exactly a record time is not
//! visible in that snapshot.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::measure::{DistN, EmpiricalMeasure};
use crate::rates::{Field, Interaction, RateModel};
use crate::rng::{self, SimRng};
use crate::stats::{mean_estimate, MeanEstimate};

/// Configuration `x ∈ ℕ^N` with its cached sum.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct ParticleState {
    x: Vec<u64>,
    sum: u64,
}

impl ParticleState {
    pub fn new(x: Vec<u64>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidArgument("a configuration needs at least one particle".into()));
        }
        let sum = x.iter().sum();
        Ok(Self { x, sum })
    }

    pub fn zeros(n: usize) -> Self {
        Self { x: vec![0; n.max(1)], sum: 0 }
    }

    pub fn values(&self) -> &[u64] {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn sum(&self) -> u64 {
        self.sum
    }

    /// `M^N = (1/N) Σ x_i`
    pub fn mean(&self) -> f64 {
        self.sum as f64 / self.x.len() as f64
    }

    /// Moves particle `i` by ±1.
    ///
    /// # Panics
    /// On a downward move at zero.
    #[inline]
    pub fn shift(&mut self, i: usize, up: bool) {
        if up {
            self.x[i] += 1;
            self.sum += 1;
        } else {
            assert!(self.x[i] > 0, "death at zero for particle {i}");
            self.x[i] -= 1;
            self.sum -= 1;
        }
        debug_assert_eq!(self.sum, self.x.iter().sum::<u64>());
    }

    /// l¹ distance between two configurations.
    pub fn l1(&self, other: &ParticleState) -> u64 {
        self.x.iter().zip(&other.x).map(|(a, b)| a.abs_diff(*b)).sum()
    }

    pub fn empirical(&self) -> EmpiricalMeasure {
        EmpiricalMeasure::from_values(&self.x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Event {
    pub t: f64,
    pub site: usize,
    pub up: bool,
}

/// Current time plus the stream driving a single trajectory.
#[derive(Debug, Clone)]
pub struct SimClock {
    pub t: f64,
    pub rng: SimRng,
}

impl SimClock {
    pub fn new(rng: SimRng) -> Self {
        Self { t: 0.0, rng }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub record_times: Vec<f64>,
    pub states: Vec<ParticleState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Method {
    Direct,
    #[default]
    Classes,
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub method: Method,
    /// Maximum number of events per trajectory.
    pub max_events: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { method: Method::Classes, max_events: 50_000_000 }
    }
}

fn check_rate(r: f64, what: &str) -> Result<f64> {
    if r.is_finite() && r >= 0.0 {
        Ok(r)
    } else {
        Err(Error::InvalidModel(format!("{what} rate evaluated to {r}")))
    }
}

/// `Σ_i` (effective birth + effective death).
pub fn total_event_rate(model: &RateModel, s: &ParticleState) -> Result<f64> {
    let field = model.field(s.values());
    let mut total = 0.0;
    for &xi in s.values() {
        let (up, down) = model.site_rates(xi, &field);
        total += check_rate(up, "birth")? + check_rate(down, "death")?;
    }
    Ok(total)
}

/// One step of the direct method. Returns `None` when no transition is
/// possible (only reachable when `b_0 = 0`); the clock is then left alone.
pub fn step(model: &RateModel, s: &mut ParticleState, clock: &mut SimClock) -> Result<Option<Event>> {
    let mut engine = DirectEngine::new(model, s.clone());
    let total = engine.refresh()?;
    if total <= 0.0 {
        return Ok(None);
    }
    clock.t += rng::exp_sample(&mut clock.rng, total);
    let (site, up) = engine.choose(&mut clock.rng, total);
    s.shift(site, up);
    Ok(Some(Event { t: clock.t, site, up }))
}

/// Jump-chain engine: refresh the rates, then pick a transition.
trait Engine {
    fn refresh(&mut self) -> Result<f64>;
    fn choose(&mut self, rng: &mut SimRng, total: f64) -> (usize, bool);
    fn apply(&mut self, site: usize, up: bool);
    fn state(&self) -> &ParticleState;
}

struct DirectEngine<'m> {
    model: &'m RateModel,
    state: ParticleState,
    rates: Vec<(f64, f64)>,
}

impl<'m> DirectEngine<'m> {
    fn new(model: &'m RateModel, state: ParticleState) -> Self {
        let n = state.n();
        Self { model, state, rates: vec![(0.0, 0.0); n] }
    }
}

impl Engine for DirectEngine<'_> {
    fn refresh(&mut self) -> Result<f64> {
        let field = self.model.field(self.state.values());
        let mut total = 0.0;
        for (slot, &xi) in self.rates.iter_mut().zip(self.state.values()) {
            let (up, down) = self.model.site_rates(xi, &field);
            total += check_rate(up, "birth")? + check_rate(down, "death")?;
            *slot = (up, down);
        }
        Ok(total)
    }

    fn choose(&mut self, rng: &mut SimRng, total: f64) -> (usize, bool) {
        let mut target = rng::uniform(rng, total);
        let mut last = None;
        for (i, &(up, down)) in self.rates.iter().enumerate() {
            if target < up {
                return (i, true);
            }
            target -= up;
            if target < down {
                return (i, false);
            }
            target -= down;
            if up > 0.0 {
                last = Some((i, true));
            }
            if down > 0.0 {
                last = Some((i, false));
            }
        }
        // Round-off pushed the target past the end: take the last live channel.
        last.expect("positive total rate has a live channel")
    }

    fn apply(&mut self, site: usize, up: bool) {
        self.state.shift(site, up);
    }

    fn state(&self) -> &ParticleState {
        &self.state
    }
}

/// Particles grouped by position.
struct ClassEngine<'m> {
    model: &'m RateModel,
    state: ParticleState,
    members: BTreeMap<u64, Vec<usize>>,
    slot: Vec<usize>,
    /// `(position, up, down)` per class from the last refresh, in position order.
    rates: Vec<(u64, f64, f64)>,
}

impl<'m> ClassEngine<'m> {
    fn new(model: &'m RateModel, state: ParticleState) -> Self {
        let mut members: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        let mut slot = vec![0; state.n()];
        for (i, &v) in state.values().iter().enumerate() {
            let class = members.entry(v).or_default();
            slot[i] = class.len();
            class.push(i);
        }
        Self { model, state, members, slot, rates: Vec::new() }
    }
}

impl Engine for ClassEngine<'_> {
    fn refresh(&mut self) -> Result<f64> {
        self.rates.clear();
        let mut total = 0.0;
        match self.model.interaction() {
            Interaction::QuadraticPairwise { a } => {
                let n = self.state.n() as f64;
                let (big_n, big_s) = (self.state.n() as u64, self.state.sum());
                let (mut count_le, mut sum_le) = (0u64, 0u64);
                for (&v, class) in &self.members {
                    let c = class.len() as u64;
                    // Below: Σ_{X^j < v} (v − X^j), using totals strictly below v.
                    let below = (v * count_le - sum_le) as f64;
                    count_le += c;
                    sum_le += v * c;
                    let above = ((big_s - sum_le) - v * (big_n - count_le)) as f64;
                    let up = self.model.birth(v) + a / n * above;
                    let down = if v == 0 { 0.0 } else { self.model.death(v) + a / n * below };
                    total += c as f64 * (check_rate(up, "birth")? + check_rate(down, "death")?);
                    self.rates.push((v, up, down));
                }
            }
            _ => {
                let field = match self.model.interaction() {
                    Interaction::MeanField { .. } => Field::Mean(self.state.mean()),
                    _ => Field::Free,
                };
                for (&v, class) in &self.members {
                    let (up, down) = self.model.site_rates(v, &field);
                    total += class.len() as f64 * (check_rate(up, "birth")? + check_rate(down, "death")?);
                    self.rates.push((v, up, down));
                }
            }
        }
        Ok(total)
    }

    fn choose(&mut self, rng: &mut SimRng, total: f64) -> (usize, bool) {
        let mut target = rng::uniform(rng, total);
        let mut pick = None;
        for &(v, up, down) in &self.rates {
            let count = self.members[&v].len() as f64;
            let class_total = count * (up + down);
            if class_total <= 0.0 {
                continue;
            }
            pick = Some((v, up, down));
            if target < class_total {
                break;
            }
            target -= class_total;
        }
        let (v, up, down) = pick.expect("positive total rate has a live class");
        let per_site = up + down;
        let class = &self.members[&v];
        let idx = ((target / per_site) as usize).min(class.len() - 1);
        let within = (target - idx as f64 * per_site).clamp(0.0, per_site);
        let go_up = if down <= 0.0 { true } else { up > 0.0 && within < up };
        (class[idx], go_up)
    }

    fn apply(&mut self, site: usize, up: bool) {
        let from = self.state.values()[site];
        self.state.shift(site, up);
        let to = self.state.values()[site];
        let class = self.members.get_mut(&from).expect("site belongs to its class");
        let s = self.slot[site];
        class.swap_remove(s);
        if let Some(&moved) = class.get(s) {
            self.slot[moved] = s;
        }
        if class.is_empty() {
            self.members.remove(&from);
        }
        let dest = self.members.entry(to).or_default();
        self.slot[site] = dest.len();
        dest.push(site);
    }

    fn state(&self) -> &ParticleState {
        &self.state
    }
}

fn check_grid(t_max: f64, record_times: &[f64]) -> Result<()> {
    if !(t_max >= 0.0) || !t_max.is_finite() {
        return Err(Error::InvalidArgument(format!("t_max = {t_max}")));
    }
    if record_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("record times must be sorted".into()));
    }
    if record_times.iter().any(|&t| !(0.0..=t_max).contains(&t)) {
        return Err(Error::InvalidArgument("record times must lie in [0, t_max]".into()));
    }
    Ok(())
}

fn run<E: Engine>(
    engine: &mut E,
    t_max: f64,
    record_times: &[f64],
    clock: &mut SimClock,
    max_events: u64,
    observe: &mut dyn FnMut(usize, &ParticleState),
) -> Result<u64> {
    let mut next = 0;
    let mut events = 0u64;
    loop {
        let total = engine.refresh()?;
        let t_next = if total > 0.0 { clock.t + rng::exp_sample(&mut clock.rng, total) } else { f64::INFINITY };
        while next < record_times.len() && record_times[next] <= t_next {
            observe(next, engine.state());
            next += 1;
        }
        if t_next > t_max {
            clock.t = t_max;
            return Ok(events);
        }
        let (site, up) = engine.choose(&mut clock.rng, total);
        engine.apply(site, up);
        clock.t = t_next;
        events += 1;
        if events >= max_events {
            return Err(Error::EventBudget { budget: max_events, t: clock.t });
        }
    }
}

/// Simulates from `init` up to `t_max`, calling `observe(j, state)` with the
/// left-limit state at each `record_times[j]`. Returns the number of events.
pub fn simulate_with(
    model: &RateModel,
    init: ParticleState,
    t_max: f64,
    record_times: &[f64],
    clock: &mut SimClock,
    opts: SimOptions,
    observe: &mut dyn FnMut(usize, &ParticleState),
) -> Result<u64> {
    check_grid(t_max, record_times)?;
    match opts.method {
        Method::Direct => {
            let mut e = DirectEngine::new(model, init);
            run(&mut e, t_max, record_times, clock, opts.max_events, observe)
        }
        Method::Classes => {
            let mut e = ClassEngine::new(model, init);
            run(&mut e, t_max, record_times, clock, opts.max_events, observe)
        }
    }
}

/// Snapshots at `record_times`; bit-for-bit reproducible from the stream in `clock`.
pub fn simulate(
    model: &RateModel,
    init: ParticleState,
    t_max: f64,
    record_times: &[f64],
    clock: &mut SimClock,
    opts: SimOptions,
) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(record_times.len());
    simulate_with(model, init, t_max, record_times, clock, opts, &mut |_, s| states.push(s.clone()))?;
    Ok(Trajectory { record_times: record_times.to_vec(), states })
}

/// `N` i.i.d. draws from `law`.
pub fn draw_initial<R: Rng + ?Sized>(law: &DistN, n: usize, rng: &mut R) -> ParticleState {
    let sampler = law.sampler();
    let x = (0..n.max(1)).map(|_| sampler.sample(rng)).collect();
    ParticleState::new(x).expect("n ≥ 1")
}

/// Cross-replica statistics at each record time.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicaSummary {
    pub times: Vec<f64>,
    pub n_replicas: usize,
    /// Mean over replicas of `M^N_t`.
    pub mean: Vec<MeanEstimate>,
    /// Law of `X^1_t` across replicas.
    pub first_marginal: Vec<EmpiricalMeasure>,
    /// Positions of all particles of all replicas, pooled.
    pub pooled: Vec<EmpiricalMeasure>,
    pub events: u64,
}

pub const REPLICA_TAG: &str = "ssa-replica";

/// Runs `n_replicas` independent systems of `n` particles with i.i.d.
/// initial positions from `init_law`. Replica `r` uses stream `(seed, r)`;
/// merging happens in replica order.
#[allow(clippy::too_many_arguments)]
pub fn simulate_replicas(
    model: &RateModel,
    init_law: &DistN,
    n: usize,
    n_replicas: usize,
    t_max: f64,
    grid: &[f64],
    seed: u64,
    opts: SimOptions,
    exec: Execution,
) -> Result<ReplicaSummary> {
    if n_replicas == 0 {
        return Err(Error::InvalidArgument("n_replicas must be at least 1".into()));
    }
    check_grid(t_max, grid)?;
    let tag = rng::tag(REPLICA_TAG);
    let runs = exec.try_map(n_replicas, |r| {
        let mut clock = SimClock::new(rng::stream(seed, tag, r as u64));
        let init = draw_initial(init_law, n, &mut clock.rng);
        let mut means = Vec::with_capacity(grid.len());
        let mut firsts = Vec::with_capacity(grid.len());
        let mut pooled = Vec::with_capacity(grid.len());
        let events = simulate_with(model, init, t_max, grid, &mut clock, opts, &mut |_, s| {
            means.push(s.mean());
            firsts.push(s.values()[0]);
            pooled.push(s.empirical());
        })?;
        Ok::<_, Error>((means, firsts, pooled, events))
    })?;

    let mut mean = Vec::with_capacity(grid.len());
    let mut first_marginal = Vec::with_capacity(grid.len());
    let mut pooled_out = Vec::with_capacity(grid.len());
    for j in 0..grid.len() {
        let col: Vec<f64> = runs.iter().map(|r| r.0[j]).collect();
        mean.push(mean_estimate(&col));
        let firsts: Vec<u64> = runs.iter().map(|r| r.1[j]).collect();
        first_marginal.push(EmpiricalMeasure::from_values(&firsts));
        let mut pooled = EmpiricalMeasure::default();
        for r in &runs {
            for (&v, &c) in r.2[j].counts() {
                pooled.add(&vec![v; c as usize]);
            }
        }
        pooled_out.push(pooled);
    }
    Ok(ReplicaSummary {
        times: grid.to_vec(),
        n_replicas,
        mean,
        first_marginal,
        pooled: pooled_out,
        events: runs.iter().map(|r| r.3).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::DEFAULT_TAIL_TOL;
    use crate::rates::Interaction;
    use approx::assert_abs_diff_eq;

    fn unit() -> RateModel {
        RateModel::new("unit", |_| 1.0, |k| k as f64)
    }

    fn clock(seed: u64) -> SimClock {
        SimClock::new(rng::stream(seed, rng::tag("ssa-test"), 0))
    }

    #[test]
    fn total_rate_examples() {
        let s = ParticleState::new(vec![0, 2]).unwrap();
        assert_eq!(total_event_rate(&unit(), &s).unwrap(), 4.0);
        assert_eq!(total_event_rate(&unit(), &ParticleState::zeros(1)).unwrap(), 1.0);
        let mf = unit().with_interaction(Interaction::attractive(1.0));
        assert_eq!(total_event_rate(&mf, &s).unwrap(), 6.0);
    }

    #[test]
    fn non_finite_rate_is_a_model_error() {
        let bad = RateModel::new("bad", |k| if k == 2 { f64::NAN } else { 1.0 }, |k| k as f64);
        let s = ParticleState::new(vec![0, 2]).unwrap();
        assert!(matches!(total_event_rate(&bad, &s), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn forced_birth_from_zero() {
        let mut s = ParticleState::zeros(1);
        let mut c = clock(1);
        let e = step(&unit(), &mut s, &mut c).unwrap().unwrap();
        assert!(e.up);
        assert_eq!(s.values(), &[1]);
        assert!(c.t > 0.0);
    }

    #[test]
    fn absorbing_state_returns_none() {
        let m = RateModel::linear(1.0, 3.0, 0.0);
        let mut s = ParticleState::zeros(3);
        let mut c = clock(2);
        assert!(step(&m, &mut s, &mut c).unwrap().is_none());
        let traj = simulate(&m, s, 5.0, &[0.0, 5.0], &mut c, SimOptions::default()).unwrap();
        assert_eq!(traj.states.len(), 2);
    }

    #[test]
    fn zero_horizon_returns_init() {
        let init = ParticleState::new(vec![3, 1, 4]).unwrap();
        for method in [Method::Direct, Method::Classes] {
            let opts = SimOptions { method, ..Default::default() };
            let traj = simulate(&unit(), init.clone(), 0.0, &[0.0], &mut clock(3), opts).unwrap();
            assert_eq!(traj.states, vec![init.clone()]);
        }
    }

    #[test]
    fn grid_outside_horizon_is_rejected() {
        let init = ParticleState::zeros(1);
        assert!(simulate(&unit(), init.clone(), 1.0, &[0.5, 2.0], &mut clock(4), SimOptions::default()).is_err());
        assert!(simulate(&unit(), init, 1.0, &[0.5, 0.2], &mut clock(4), SimOptions::default()).is_err());
    }

    #[test]
    fn event_budget_guards_runaway_models() {
        let fast = RateModel::new("fast", |_| 1e6, |k| k as f64);
        let opts = SimOptions { max_events: 1000, ..Default::default() };
        let r = simulate(&fast, ParticleState::zeros(1), 1.0, &[1.0], &mut clock(5), opts);
        assert!(matches!(r, Err(Error::EventBudget { budget: 1000, .. })));
    }

    #[test]
    fn reproducible_bit_for_bit() {
        let m = unit().with_interaction(Interaction::attractive(0.5));
        let grid: Vec<f64> = (0..=20).map(|j| j as f64 * 0.25).collect();
        let init = ParticleState::new(vec![0, 3, 5, 1]).unwrap();
        for method in [Method::Direct, Method::Classes] {
            let opts = SimOptions { method, ..Default::default() };
            let a = simulate(&m, init.clone(), 5.0, &grid, &mut clock(9), opts).unwrap();
            let b = simulate(&m, init.clone(), 5.0, &grid, &mut clock(9), opts).unwrap();
            assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        }
    }

    #[test]
    fn equal_configuration_has_no_pairwise_activity() {
        let m = RateModel::linear(1.0, 3.0, 1.0).with_interaction(Interaction::QuadraticPairwise { a: 5.0 });
        let s = ParticleState::new(vec![2, 2, 2]).unwrap();
        let base = RateModel::linear(1.0, 3.0, 1.0);
        assert_eq!(total_event_rate(&m, &s).unwrap(), total_event_rate(&base, &s).unwrap());
    }

    /// Jump frequencies out of a fixed state against `rate / total`.
    fn chi_square_from(model: &RateModel, x: Vec<u64>, method: Method, seed: u64) -> (f64, usize) {
        let s0 = ParticleState::new(x).unwrap();
        let field = model.field(s0.values());
        let mut expected = Vec::new();
        for &xi in s0.values() {
            let (u, d) = model.site_rates(xi, &field);
            expected.push(u);
            expected.push(d);
        }
        let total: f64 = expected.iter().sum();
        let trials = 40_000;
        let mut counts = vec![0usize; expected.len()];
        let mut c = clock(seed);
        for _ in 0..trials {
            let mut engine_state = s0.clone();
            let ev = if method == Method::Direct {
                step(model, &mut engine_state, &mut c).unwrap().unwrap()
            } else {
                let mut e = ClassEngine::new(model, s0.clone());
                let tot = e.refresh().unwrap();
                let (site, up) = e.choose(&mut c.rng, tot);
                Event { t: 0.0, site, up }
            };
            counts[2 * ev.site + usize::from(!ev.up)] += 1;
        }
        let mut chi = 0.0;
        let mut df = 0usize;
        for (cnt, rate) in counts.iter().zip(&expected) {
            if *rate > 0.0 {
                let e = trials as f64 * rate / total;
                chi += (*cnt as f64 - e).powi(2) / e;
                df += 1;
            } else {
                assert_eq!(*cnt, 0, "impossible transition fired");
            }
        }
        (chi, df - 1)
    }

    // χ² critical values at level 0.01.
    const CHI2_01: [f64; 6] = [6.635, 9.210, 11.345, 13.277, 15.086, 16.812];

    #[test]
    fn jump_frequencies_match_generator() {
        let models = [
            unit(),
            unit().with_interaction(Interaction::attractive(1.0)),
            unit().with_interaction(Interaction::QuadraticPairwise { a: 1.5 }),
        ];
        let states = [vec![0, 2], vec![3, 1], vec![0, 0], vec![4, 4]];
        let mut seed = 100;
        for m in &models {
            for x in &states {
                for method in [Method::Direct, Method::Classes] {
                    seed += 1;
                    let (chi, df) = chi_square_from(m, x.clone(), method, seed);
                    if df > 0 {
                        assert!(chi < CHI2_01[df - 1], "{m:?} {x:?} {method:?}: χ² = {chi} (df {df})");
                    }
                }
            }
        }
    }

    #[test]
    fn site_two_death_probability_and_holding_time() {
        let s0 = ParticleState::new(vec![0, 2]).unwrap();
        let mut c = clock(77);
        let trials = 100_000;
        let (mut deaths, mut hold) = (0usize, 0.0);
        for _ in 0..trials {
            let mut s = s0.clone();
            c.t = 0.0;
            let e = step(&unit(), &mut s, &mut c).unwrap().unwrap();
            hold += e.t;
            if e.site == 1 && !e.up {
                deaths += 1;
            }
        }
        let p = deaths as f64 / trials as f64;
        // sd = sqrt(0.25 / 1e5) ≈ 1.6e-3; sd of mean holding ≈ 7.9e-4
        assert!((p - 0.5).abs() < 0.008, "{p}");
        assert!((hold / trials as f64 - 0.25).abs() < 0.004);
    }

    #[test]
    fn mm_inf_time_average_is_poisson() {
        let (p, q) = (2.0, 1.0);
        let m = RateModel::mm_inf(p, q);
        let t_max = 20_000.0;
        let grid: Vec<f64> = (0..=200_000).map(|j| j as f64 * 0.1).collect();
        let mut e = EmpiricalMeasure::default();
        simulate_with(&m, ParticleState::zeros(1), t_max, &grid, &mut clock(5), SimOptions::default(), &mut |j, s| {
            if j >= 1000 {
                e.add(s.values());
            }
        })
        .unwrap();
        let target = DistN::poisson(p / q, DEFAULT_TAIL_TOL).unwrap();
        let k = target.k().max(e.max_value().unwrap() as usize);
        let tv = e.to_dist(k).unwrap().tv_distance(&target);
        assert!(tv < 0.02, "TV {tv}");
    }

    #[test]
    fn replicas_reproduce_stationary_marginal() {
        let (p, q) = (3.0, 1.5);
        let m = RateModel::mm_inf(p, q);
        let s = simulate_replicas(
            &m,
            &DistN::delta(0),
            1,
            10_000,
            8.0,
            &[0.0, 8.0],
            21,
            SimOptions::default(),
            Execution::Parallel,
        )
        .unwrap();
        assert_eq!(s.first_marginal[0].to_dist(0).unwrap(), DistN::delta(0));
        let target = DistN::poisson(p / q, DEFAULT_TAIL_TOL).unwrap();
        let emp = &s.first_marginal[1];
        let k = target.k().max(emp.max_value().unwrap() as usize);
        let tv = emp.to_dist(k).unwrap().tv_distance(&target);
        assert!(tv < 0.02, "TV {tv}");
    }

    #[test]
    fn single_replica_matches_simulate() {
        let m = unit().with_interaction(Interaction::attractive(1.0));
        let law = DistN::uniform(0, 3).unwrap();
        let grid = [0.0, 0.5, 1.0];
        let s = simulate_replicas(&m, &law, 3, 1, 1.0, &grid, 8, SimOptions::default(), Execution::Sequential).unwrap();
        let mut c = SimClock::new(rng::stream(8, rng::tag(REPLICA_TAG), 0));
        let init = draw_initial(&law, 3, &mut c.rng);
        let traj = simulate(&m, init, 1.0, &grid, &mut c, SimOptions::default()).unwrap();
        for (j, st) in traj.states.iter().enumerate() {
            assert_abs_diff_eq!(s.mean[j].mean, st.mean());
        }
    }

    #[test]
    fn replica_summary_independent_of_execution() {
        let m = unit().with_interaction(Interaction::QuadraticPairwise { a: 1.0 });
        let law = DistN::uniform(0, 4).unwrap();
        let grid = [0.0, 1.0, 2.0];
        let a =
            simulate_replicas(&m, &law, 8, 64, 2.0, &grid, 3, SimOptions::default(), Execution::Sequential).unwrap();
        let b = simulate_replicas(&m, &law, 8, 64, 2.0, &grid, 3, SimOptions::default(), Execution::Parallel).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn engines_agree_in_law() {
        // Mean of M^N at t = 1 from both engines, same model, different streams.
        let m = unit().with_interaction(Interaction::QuadraticPairwise { a: 2.0 });
        let law = DistN::uniform(0, 6).unwrap();
        let run = |method, seed| {
            let opts = SimOptions { method, ..Default::default() };
            simulate_replicas(&m, &law, 6, 4000, 1.0, &[1.0], seed, opts, Execution::Parallel).unwrap().mean[0]
        };
        let (a, b) = (run(Method::Direct, 1), run(Method::Classes, 2));
        assert!((a.mean - b.mean).abs() < 4.0 * (a.std_err.hypot(b.std_err)), "{a:?} {b:?}");
    }

    #[test]
    fn deaths_never_at_zero() {
        let m = unit().with_interaction(Interaction::QuadraticPairwise { a: 3.0 });
        let grid: Vec<f64> = (0..=400).map(|j| j as f64 * 0.05).collect();
        for method in [Method::Direct, Method::Classes] {
            let opts = SimOptions { method, ..Default::default() };
            // `shift` panics on a death at zero; reaching the end is the check.
            simulate(&m, ParticleState::new(vec![0, 5, 0, 9]).unwrap(), 20.0, &grid, &mut clock(6), opts).unwrap();
        }
    }
}
