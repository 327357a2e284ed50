//! Two particle systems driven by one min/excess coupling.
//!
//! For every site the coupled generator splits each marginal rate into a
//! common part, fired by both copies together, and a one-sided excess, fired
//! by the copy with the larger rate. Base rates and interaction rates are
//! split separately, which gives twelve channels per site. Each copy still
//! sees exactly its own particle dynamics, and jumps that move the copies
//! apart only fire at the excess rates.

use std::collections::HashMap;

use serde::Serialize;

use crate::analysis::ExperimentResult;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::measure::DistN;
use crate::rates::{Field, RateModel};
use crate::rng::{self, SimRng};
use crate::ssa::{ParticleState, SimClock};
use crate::stats::mean_estimate;

/// A synchronized pair of configurations of equal size.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct CoupledState {
    pub x: ParticleState,
    pub y: ParticleState,
}

impl CoupledState {
    pub fn new(x: ParticleState, y: ParticleState) -> Result<Self> {
        if x.n() != y.n() {
            return Err(Error::InvalidArgument(format!("sizes differ: {} vs {}", x.n(), y.n())));
        }
        Ok(Self { x, y })
    }

    pub fn n(&self) -> usize {
        self.x.n()
    }

    /// l¹ coupling distance `d(X, Y)`.
    pub fn distance(&self) -> u64 {
        self.x.l1(&self.y)
    }
}

/// The twelve per-site channels. `X`/`Y` suffixes name the copy that moves
/// alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Channel {
    JointBirth,
    JointDeath,
    BirthX,
    BirthY,
    DeathY,
    DeathX,
    JointQPlus,
    QPlusY,
    QPlusX,
    JointQMinus,
    QMinusY,
    QMinusX,
}

impl Channel {
    pub const ALL: [Channel; 12] = [
        Channel::JointBirth,
        Channel::JointDeath,
        Channel::BirthX,
        Channel::BirthY,
        Channel::DeathY,
        Channel::DeathX,
        Channel::JointQPlus,
        Channel::QPlusY,
        Channel::QPlusX,
        Channel::JointQMinus,
        Channel::QMinusY,
        Channel::QMinusX,
    ];

    /// Increments `(ΔX^i, ΔY^i)`.
    pub const fn moves(self) -> (i8, i8) {
        match self {
            Channel::JointBirth | Channel::JointQPlus => (1, 1),
            Channel::JointDeath | Channel::JointQMinus => (-1, -1),
            Channel::BirthX | Channel::QPlusX => (1, 0),
            Channel::BirthY | Channel::QPlusY => (0, 1),
            Channel::DeathX | Channel::QMinusX => (-1, 0),
            Channel::DeathY | Channel::QMinusY => (0, -1),
        }
    }

    pub const fn is_excess(self) -> bool {
        let (dx, dy) = self.moves();
        dx != dy
    }
}

pub type SiteChannels = [f64; 12];

/// Channel rates for every site, indexed like [`Channel::ALL`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoupledEventTable {
    pub sites: Vec<SiteChannels>,
}

impl CoupledEventTable {
    pub fn total(&self) -> f64 {
        self.sites.iter().flat_map(|s| s.iter()).sum()
    }

    /// `((up_X, down_X), (up_Y, down_Y))` recovered from the channels of site `i`.
    pub fn marginal_rates(&self, i: usize) -> ((f64, f64), (f64, f64)) {
        let mut out = [[0.0f64; 2]; 2];
        for (c, &r) in Channel::ALL.iter().zip(&self.sites[i]) {
            let (dx, dy) = c.moves();
            for (copy, d) in [(0, dx), (1, dy)] {
                match d {
                    1 => out[copy][0] += r,
                    -1 => out[copy][1] += r,
                    _ => {}
                }
            }
        }
        ((out[0][0], out[0][1]), (out[1][0], out[1][1]))
    }
}

#[inline]
fn pos(v: f64) -> f64 {
    v.max(0.0)
}

/// Channels of one site whose copies sit at `xi`, `yi` in environments `fx`, `fy`.
#[inline]
pub fn site_channels(model: &RateModel, xi: u64, fx: &Field, yi: u64, fy: &Field) -> SiteChannels {
    let (bx, by) = (model.birth(xi), model.birth(yi));
    let (dx, dy) = (model.death(xi), model.death(yi));
    let (qpx, qmx) = model.interaction_rates(xi, fx);
    let (qpy, qmy) = model.interaction_rates(yi, fy);
    [
        bx.min(by),
        dx.min(dy),
        pos(bx - by),
        pos(by - bx),
        pos(dy - dx),
        pos(dx - dy),
        qpx.min(qpy),
        pos(qpy - qpx),
        pos(qpx - qpy),
        qmx.min(qmy),
        pos(qmy - qmx),
        pos(qmx - qmy),
    ]
}

/// Channel table for a pair of configurations; each copy's interaction is
/// evaluated on its own configuration.
pub fn build_event_table(model: &RateModel, cs: &CoupledState) -> CoupledEventTable {
    let fx = model.field(cs.x.values());
    let fy = model.field(cs.y.values());
    table_with_fields(model, &cs.x, &fx, &cs.y, &fy)
}

pub fn table_with_fields(
    model: &RateModel,
    x: &ParticleState,
    fx: &Field,
    y: &ParticleState,
    fy: &Field,
) -> CoupledEventTable {
    let sites = x.values().iter().zip(y.values()).map(|(&xi, &yi)| site_channels(model, xi, fx, yi, fy)).collect();
    CoupledEventTable { sites }
}

/// Picks `(site, channel)` with probability proportional to its rate.
pub fn choose_channel(table: &CoupledEventTable, target: f64) -> (usize, Channel) {
    let mut rem = target;
    let mut last = None;
    for (i, site) in table.sites.iter().enumerate() {
        for (c, &r) in Channel::ALL.iter().zip(site) {
            if r <= 0.0 {
                continue;
            }
            if rem < r {
                return (i, *c);
            }
            rem -= r;
            last = Some((i, *c));
        }
    }
    last.expect("positive total rate has a live channel")
}

pub fn apply_channel(x: &mut ParticleState, y: &mut ParticleState, site: usize, channel: Channel) {
    let (dx, dy) = channel.moves();
    if dx != 0 {
        x.shift(site, dx > 0);
    }
    if dy != 0 {
        y.shift(site, dy > 0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoupledEvent {
    pub t: f64,
    pub site: usize,
    pub channel: Channel,
}

/// One jump of the coupled chain; `None` if every channel is silent.
pub fn coupled_step(model: &RateModel, cs: &mut CoupledState, clock: &mut SimClock) -> Result<Option<CoupledEvent>> {
    let table = build_event_table(model, cs);
    let total = table.total();
    if !total.is_finite() {
        return Err(Error::InvalidModel(format!("coupled total rate {total}")));
    }
    if total <= 0.0 {
        return Ok(None);
    }
    clock.t += rng::exp_sample(&mut clock.rng, total);
    let (site, channel) = choose_channel(&table, rng::uniform(&mut clock.rng, total));
    apply_channel(&mut cs.x, &mut cs.y, site, channel);
    Ok(Some(CoupledEvent { t: clock.t, site, channel }))
}

/// Runs the coupled chain and reports `observe(j, state)` at each grid time
/// (left limits, as in the single-system simulator).
pub fn coupled_simulate_with(
    model: &RateModel,
    mut cs: CoupledState,
    t_max: f64,
    grid: &[f64],
    clock: &mut SimClock,
    max_events: u64,
    observe: &mut dyn FnMut(usize, &CoupledState),
) -> Result<u64> {
    let mut next = 0;
    let mut events = 0u64;
    loop {
        let table = build_event_table(model, &cs);
        let total = table.total();
        if !total.is_finite() {
            return Err(Error::InvalidModel(format!("coupled total rate {total}")));
        }
        let t_next = if total > 0.0 { clock.t + rng::exp_sample(&mut clock.rng, total) } else { f64::INFINITY };
        while next < grid.len() && grid[next] <= t_next {
            observe(next, &cs);
            next += 1;
        }
        if t_next > t_max {
            clock.t = t_max;
            return Ok(events);
        }
        let (site, channel) = choose_channel(&table, rng::uniform(&mut clock.rng, total));
        apply_channel(&mut cs.x, &mut cs.y, site, channel);
        clock.t = t_next;
        events += 1;
        if events >= max_events {
            return Err(Error::EventBudget { budget: max_events, t: clock.t });
        }
    }
}

/// Quantile coupling of one coordinate: both copies read the same uniform.
pub fn comonotone_initial(law_x: &DistN, law_y: &DistN, n: usize, rng: &mut SimRng) -> CoupledState {
    use rand::Rng;
    let (sx, sy) = (law_x.sampler(), law_y.sampler());
    let (mut xs, mut ys) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n.max(1) {
        let u: f64 = rng.random();
        xs.push(sx.quantile(u));
        ys.push(sy.quantile(u));
    }
    CoupledState::new(ParticleState::new(xs).expect("n ≥ 1"), ParticleState::new(ys).expect("n ≥ 1"))
        .expect("equal sizes")
}

pub const CURVE_TAG: &str = "coupled-curve";

/// Monte-Carlo mean of `d(X_t, Y_t)` on `grid` with 95% half-widths.
#[allow(clippy::too_many_arguments)]
pub fn coupled_distance_curve(
    model: &RateModel,
    law_x0: &DistN,
    law_y0: &DistN,
    n: usize,
    n_replicas: usize,
    grid: &[f64],
    seed: u64,
    exec: Execution,
) -> Result<ExperimentResult> {
    if n_replicas == 0 || n == 0 {
        return Err(Error::InvalidArgument("need at least one particle and one replica".into()));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) || grid.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::InvalidArgument("grid must be sorted and nonnegative".into()));
    }
    let t_max = grid.last().copied().unwrap_or(0.0);
    let tag = rng::tag(CURVE_TAG);
    let runs = exec.try_map(n_replicas, |r| {
        let mut clock = SimClock::new(rng::stream(seed, tag, r as u64));
        let cs = comonotone_initial(law_x0, law_y0, n, &mut clock.rng);
        let mut dist = Vec::with_capacity(grid.len());
        coupled_simulate_with(model, cs, t_max, grid, &mut clock, 100_000_000, &mut |_, s| {
            dist.push(s.distance() as f64)
        })?;
        Ok::<_, Error>(dist)
    })?;
    let mut values = Vec::with_capacity(grid.len());
    let mut half_widths = Vec::with_capacity(grid.len());
    for j in 0..grid.len() {
        let col: Vec<f64> = runs.iter().map(|r| r[j]).collect();
        let e = mean_estimate(&col);
        values.push(e.mean);
        half_widths.push(e.half_width);
    }
    Ok(ExperimentResult::new("coupled_distance", grid.to_vec(), values, half_widths)
        .with_meta("n", n)
        .with_meta("n_replicas", n_replicas)
        .with_meta("seed", seed)
        .with_meta("model", model.name()))
}

/// Enumeration limit for the exact audits.
pub const MAX_JOINT_STATES: usize = 2_000_000;

fn enumerate_box(n: usize, k: u64) -> Vec<Vec<u64>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..=k).map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

fn joint_states(n: usize, k: u64) -> Result<Vec<CoupledState>> {
    let side = (k as usize + 1).checked_pow(n as u32);
    let states = side.and_then(|s| s.checked_mul(s)).unwrap_or(usize::MAX);
    if n == 0 || states > MAX_JOINT_STATES {
        return Err(Error::EnumerationOverflow { states, limit: MAX_JOINT_STATES });
    }
    let singles = enumerate_box(n, k);
    let mut out = Vec::with_capacity(states);
    for x in &singles {
        for y in &singles {
            out.push(CoupledState::new(ParticleState::new(x.clone())?, ParticleState::new(y.clone())?)?);
        }
    }
    Ok(out)
}

type JointRow = HashMap<(Vec<u64>, Vec<u64>), f64>;

/// Off-diagonal row of the coupled rate matrix at `cs`, keyed by target state.
fn coupled_row(table: &CoupledEventTable, cs: &CoupledState) -> JointRow {
    let mut row = JointRow::new();
    for (i, site) in table.sites.iter().enumerate() {
        for (c, &r) in Channel::ALL.iter().zip(site) {
            if r == 0.0 {
                continue;
            }
            let (mut x, mut y) = (cs.x.values().to_vec(), cs.y.values().to_vec());
            let (dx, dy) = c.moves();
            x[i] = x[i].wrapping_add_signed(dx as i64);
            y[i] = y[i].wrapping_add_signed(dy as i64);
            *row.entry((x, y)).or_insert(0.0) += r;
        }
    }
    row
}

/// Off-diagonal row of the single-system generator, computed straight from
/// the particle rates.
fn particle_row(model: &RateModel, x: &ParticleState) -> HashMap<Vec<u64>, f64> {
    let field = model.field(x.values());
    let mut row = HashMap::new();
    for (i, &xi) in x.values().iter().enumerate() {
        let (up, down) = model.site_rates(xi, &field);
        for (delta, r) in [(1i64, up), (-1, down)] {
            if r != 0.0 {
                let mut t = x.values().to_vec();
                t[i] = t[i].wrapping_add_signed(delta);
                *row.entry(t).or_insert(0.0) += r;
            }
        }
    }
    row
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalityReport {
    pub passed: bool,
    pub max_abs_error: f64,
    pub states_checked: usize,
    pub n: usize,
    pub k: u64,
    pub tolerance: f64,
}

pub const MARGINALITY_TOL: f64 = 1e-12;

/// Exact check on `{0..K}^N × {0..K}^N` that the coupled generator applied to
/// any function of one copy equals the particle generator of that copy.
///
/// Both rows are compared target by target after projecting the coupled row
/// onto one copy, which is equivalent to testing every such function.
pub fn marginality_audit(model: &RateModel, n: usize, k: u64) -> Result<MarginalityReport> {
    marginality_audit_with(model, n, k, build_event_table)
}

/// [`marginality_audit`] with a custom table builder (used to test the audit itself).
pub fn marginality_audit_with(
    model: &RateModel,
    n: usize,
    k: u64,
    builder: impl Fn(&RateModel, &CoupledState) -> CoupledEventTable,
) -> Result<MarginalityReport> {
    let states = joint_states(n, k)?;
    let mut worst = 0.0f64;
    for cs in &states {
        let row = coupled_row(&builder(model, cs), cs);
        for copy in 0..2 {
            let own = if copy == 0 { &cs.x } else { &cs.y };
            let mut projected: HashMap<Vec<u64>, f64> = HashMap::new();
            for ((tx, ty), r) in &row {
                let target = if copy == 0 { tx } else { ty };
                if target.as_slice() != own.values() {
                    *projected.entry(target.clone()).or_insert(0.0) += r;
                }
            }
            let reference = particle_row(model, own);
            for (t, r) in &reference {
                worst = worst.max((projected.get(t).copied().unwrap_or(0.0) - r).abs());
            }
            for (t, r) in &projected {
                if !reference.contains_key(t) {
                    worst = worst.max(r.abs());
                }
            }
        }
    }
    Ok(MarginalityReport {
        passed: worst <= MARGINALITY_TOL,
        max_abs_error: worst,
        states_checked: states.len(),
        n,
        k,
        tolerance: MARGINALITY_TOL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    pub rate: f64,
    pub violations: usize,
    /// Largest `𝕃d + rate·d` over the enumeration (≤ 0 means the bound holds everywhere).
    pub worst_margin: f64,
    pub states_checked: usize,
}

pub const DRIFT_TOL: f64 = 1e-9;

/// Checks `𝕃d(X, Y) ≤ −rate·d(X, Y)` exactly at every state of the box.
/// The generator is applied untruncated, so jumps leaving the box count.
pub fn drift_audit(model: &RateModel, n: usize, k: u64, rate: f64) -> Result<DriftReport> {
    let states = joint_states(n, k)?;
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for cs in &states {
        let table = build_event_table(model, cs);
        let d0 = cs.distance() as f64;
        let mut ld = 0.0;
        for (i, site) in table.sites.iter().enumerate() {
            let here = cs.x.values()[i].abs_diff(cs.y.values()[i]) as i64;
            for (c, &r) in Channel::ALL.iter().zip(site) {
                let (dx, dy) = c.moves();
                let xi = cs.x.values()[i] as i64 + dx as i64;
                let yi = cs.y.values()[i] as i64 + dy as i64;
                ld += r * ((xi - yi).abs() - here) as f64;
            }
        }
        let margin = ld + rate * d0;
        worst = worst.max(margin);
        if margin > DRIFT_TOL {
            violations += 1;
        }
    }
    Ok(DriftReport { rate, violations, worst_margin: worst, states_checked: states.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::Interaction;

    fn unit() -> RateModel {
        RateModel::new("unit", |_| 1.0, |k| k as f64)
    }

    fn cs(x: Vec<u64>, y: Vec<u64>) -> CoupledState {
        CoupledState::new(ParticleState::new(x).unwrap(), ParticleState::new(y).unwrap()).unwrap()
    }

    fn channel(table: &CoupledEventTable, i: usize, c: Channel) -> f64 {
        table.sites[i][Channel::ALL.iter().position(|&d| d == c).unwrap()]
    }

    #[test]
    fn single_site_table() {
        let t = build_event_table(&unit(), &cs(vec![1], vec![2]));
        assert_eq!(channel(&t, 0, Channel::JointBirth), 1.0);
        assert_eq!(channel(&t, 0, Channel::JointDeath), 1.0);
        assert_eq!(channel(&t, 0, Channel::DeathY), 1.0);
        assert_eq!(t.total(), 3.0);
    }

    #[test]
    fn equal_copies_have_no_excess() {
        for model in [
            unit().with_interaction(Interaction::attractive(1.0)),
            unit().with_interaction(Interaction::QuadraticPairwise { a: 2.0 }),
        ] {
            let t = build_event_table(&model, &cs(vec![0, 3, 1], vec![0, 3, 1]));
            for site in &t.sites {
                for (c, r) in Channel::ALL.iter().zip(site) {
                    if c.is_excess() {
                        assert_eq!(*r, 0.0, "{c:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn mean_field_table_is_marginal() {
        let model = unit().with_interaction(Interaction::attractive(1.0));
        let state = cs(vec![0, 2], vec![1, 1]);
        let t = build_event_table(&model, &state);
        // M¹ = M² = 1; site 0: X at 0 gets q⁺ = 1, Y at 1 gets 0.
        assert_eq!(channel(&t, 0, Channel::QPlusX), 1.0);
        assert_eq!(channel(&t, 0, Channel::JointQPlus), 0.0);
        // site 1: X at 2 gets q⁻ = 1, Y at 1 gets 0.
        assert_eq!(channel(&t, 1, Channel::QMinusX), 1.0);
        for i in 0..2 {
            let ((ux, dx), (uy, dy)) = t.marginal_rates(i);
            let ex = crate::rates::effective_rates(&model, &state.x, i);
            let ey = crate::rates::effective_rates(&model, &state.y, i);
            assert!((ux - ex.0).abs() < 1e-12 && (dx - ex.1).abs() < 1e-12);
            assert!((uy - ey.0).abs() < 1e-12 && (dy - ey.1).abs() < 1e-12);
        }
    }

    #[test]
    fn equality_is_absorbing() {
        let model = unit().with_interaction(Interaction::attractive(1.0));
        let mut state = cs(vec![2, 0, 5], vec![2, 0, 5]);
        let mut clock = SimClock::new(rng::stream(1, 0, 0));
        for _ in 0..2000 {
            coupled_step(&model, &mut state, &mut clock).unwrap();
            assert_eq!(state.x, state.y);
        }
    }

    #[test]
    fn distance_decrease_probability() {
        let state = cs(vec![1], vec![2]);
        let mut clock = SimClock::new(rng::stream(2, 0, 0));
        let trials = 60_000;
        let mut closer = 0;
        for _ in 0..trials {
            let mut s = state.clone();
            coupled_step(&unit(), &mut s, &mut clock).unwrap();
            if s.distance() < 1 {
                closer += 1;
            }
        }
        let p = closer as f64 / trials as f64;
        // sd ≈ 0.0019
        assert!((p - 1.0 / 3.0).abs() < 0.01, "{p}");
    }

    #[test]
    fn marginality_examples() {
        let mm = RateModel::mm_inf(1.0, 2.0);
        assert!(marginality_audit(&mm, 1, 3).unwrap().passed);
        let mf = unit().with_interaction(Interaction::attractive(1.0));
        let r = marginality_audit(&mf, 2, 4).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.states_checked, 625);
        let quad = RateModel::linear(1.0, 3.0, 0.5).with_interaction(Interaction::QuadraticPairwise { a: 1.0 });
        assert!(marginality_audit(&quad, 2, 3).unwrap().passed);
    }

    #[test]
    fn corrupted_table_fails_audit() {
        let mf = unit().with_interaction(Interaction::attractive(1.0));
        let r = marginality_audit_with(&mf, 2, 2, |m, s| {
            let mut t = build_event_table(m, s);
            // Drop the one-sided interaction birth of X.
            for site in &mut t.sites {
                site[8] = 0.0;
            }
            t
        })
        .unwrap();
        assert!(!r.passed);
        assert!(r.max_abs_error > 0.1);
    }

    #[test]
    fn enumeration_limit() {
        assert!(matches!(marginality_audit(&unit(), 5, 20), Err(Error::EnumerationOverflow { .. })));
    }

    #[test]
    fn drift_bound_for_pairwise_interaction() {
        let (p, q) = (1.0, 3.0);
        let m = RateModel::linear(p, q, 0.0).with_interaction(Interaction::QuadraticPairwise { a: 1.5 });
        let r = drift_audit(&m, 2, 4, q - p).unwrap();
        assert_eq!(r.violations, 0, "{r:?}");
        // A strictly faster rate must fail somewhere.
        assert!(drift_audit(&m, 2, 4, q - p + 0.5).unwrap().violations > 0);
    }

    #[test]
    fn equal_initial_laws_give_zero_curve() {
        let m = unit().with_interaction(Interaction::attractive(1.0));
        let law = DistN::uniform(0, 4).unwrap();
        let grid = [0.0, 0.5, 1.0, 2.0];
        let c = coupled_distance_curve(&m, &law, &law, 4, 200, &grid, 1, Execution::Parallel).unwrap();
        assert!(c.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn initial_distance_is_n_times_w1() {
        let (a, b) = (DistN::uniform(0, 4).unwrap(), DistN::poisson(1.0, 1e-12).unwrap());
        let w = crate::measure::w1_dist(&a, &b);
        let n = 5;
        let mut r = rng::stream(4, 0, 0);
        let reps = 40_000;
        let mean =
            (0..reps).map(|_| comonotone_initial(&a, &b, n, &mut r).distance() as f64).sum::<f64>() / reps as f64;
        assert!((mean - n as f64 * w).abs() < 0.05 * n as f64 * w, "{mean} vs {}", n as f64 * w);
    }

    #[test]
    fn pure_death_small_time_distance() {
        // One site, δ₀ vs δ₁, d_k = k, b ≡ ε. The gap closes at rate ≈ 1
        // (Y-only death) and opens only through ε-order births.
        let eps = 1e-3;
        let m = RateModel::new("eps-death", move |_| eps, |k| k as f64);
        let grid = [0.0, 0.1, 0.2, 0.3];
        let c =
            coupled_distance_curve(&m, &DistN::delta(0), &DistN::delta(1), 1, 40_000, &grid, 5, Execution::Parallel)
                .unwrap();
        for (t, (v, hw)) in grid.iter().zip(c.values.iter().zip(&c.half_widths)) {
            assert!((v - (-t).exp()).abs() < hw + 0.01, "t={t}: {v}");
        }
    }
}
