//! Experiments: decay-rate fits, the particle/nonlinear-process coupling
//! sweep behind the chaos and empirical-measure scalings, long-run
//! comparison with the stationary solution, and the Lyapunov drift audit.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;
use serde_json::Value;

use crate::coupling::{site_channels, Channel};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::meanfield::{integrate_flow, FlowOptions, MeanThinning, NonlinearFlow};
use crate::measure::{w1_empirical, DistN, EmpiricalMeasure};
use crate::rates::{constants, default_mean_grid, Interaction, RateModel};
use crate::rng::{self, SimRng};
use crate::ssa::{draw_initial, simulate_with, ParticleState, SimClock, SimOptions};
use crate::stats::{binomial_half_width, linear_fit, mean_estimate, LinearFit, MeanEstimate};

/// A curve or scaling table with 95% half-widths and an optional fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub label: String,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub half_widths: Vec<f64>,
    pub fit: Option<LinearFit>,
    pub meta: BTreeMap<String, Value>,
}

impl ExperimentResult {
    pub fn new(label: impl Into<String>, grid: Vec<f64>, values: Vec<f64>, half_widths: Vec<f64>) -> Self {
        assert!(grid.len() == values.len() && grid.len() == half_widths.len(), "ragged experiment result");
        Self { label: label.into(), grid, values, half_widths, fit: None, meta: BTreeMap::new() }
    }

    pub fn with_meta(mut self, key: &str, value: impl Serialize) -> Self {
        self.meta.insert(key.to_owned(), serde_json::to_value(value).expect("serializable meta"));
        self
    }

    pub fn with_fit(mut self, fit: Option<LinearFit>) -> Self {
        self.fit = fit;
        self
    }
}

/// `(rate, r²)` from least squares of `log value` against the grid, restricted
/// to grid points in `[lo, hi]`.
pub fn fit_decay_rate(curve: &ExperimentResult, window: (f64, f64)) -> Result<(f64, f64)> {
    let (mut xs, mut ys) = (vec![], vec![]);
    for (&t, &v) in curve.grid.iter().zip(&curve.values) {
        if t < window.0 || t > window.1 {
            continue;
        }
        if !(v > 0.0) {
            return Err(Error::InvalidArgument(format!("nonpositive value {v} at {t} in fit window")));
        }
        xs.push(t);
        ys.push(v.ln());
    }
    let fit = linear_fit(&xs, &ys)
        .ok_or_else(|| Error::InvalidArgument("fit window needs two distinct grid points".into()))?;
    Ok((-fit.slope, fit.r2))
}

/// Least squares of `log value` against `log grid`; `None` if any value is not positive.
pub fn log_log_fit(grid: &[f64], values: &[f64]) -> Option<LinearFit> {
    if values.iter().chain(grid).any(|v| !(*v > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = grid.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    linear_fit(&xs, &ys)
}

/// Per-`N` output of the joint particle/companion simulation.
#[derive(Debug, Clone, Serialize)]
pub struct ChaosPoint {
    pub n: usize,
    /// `E (1/N) Σ_i |X^i_t − X̄^i_t|` at each grid time.
    pub chaos: Vec<MeanEstimate>,
    /// `E 𝒲₁(μ^N_t, u_t)` at each grid time.
    pub w1: Vec<MeanEstimate>,
    /// `deviation[e][j]`: fraction of replicas with `𝒲₁ > epsilons[e]` at `grid[j]`.
    pub deviation: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChaosSweep {
    pub grid: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub n_replicas: usize,
    pub seed: u64,
    pub points: Vec<ChaosPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationRow {
    pub n: usize,
    pub t: f64,
    pub eps: f64,
    pub frequency: f64,
    pub mean_w1: f64,
    /// `mean_w1/eps + 3·binomial half-width`.
    pub markov_bound: f64,
    pub consistent: bool,
}

/// Late-window to early-window ratio of grid maxima.
fn uniformity_ratio(grid: &[f64], values: &[f64]) -> f64 {
    let half = grid.last().copied().unwrap_or(0.0) / 2.0;
    let early = grid.iter().zip(values).filter(|(t, _)| **t <= half).map(|(_, v)| *v).fold(0.0, f64::max);
    let late = grid.iter().zip(values).filter(|(t, _)| **t >= half).map(|(_, v)| *v).fold(0.0, f64::max);
    if early == 0.0 {
        if late == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        late / early
    }
}

fn sup_table(label: &str, sweep: &ChaosSweep, pick: impl Fn(&ChaosPoint) -> &[MeanEstimate]) -> ExperimentResult {
    let (mut ns, mut values, mut hws, mut ratios, mut argmax) = (vec![], vec![], vec![], vec![], vec![]);
    for p in &sweep.points {
        let col = pick(p);
        let (j, best) =
            col.iter().enumerate().fold((0, col[0]), |acc, (j, e)| if e.mean > acc.1.mean { (j, *e) } else { acc });
        ns.push(p.n as f64);
        values.push(best.mean);
        hws.push(best.half_width);
        argmax.push(sweep.grid[j]);
        let means: Vec<f64> = col.iter().map(|e| e.mean).collect();
        ratios.push(uniformity_ratio(&sweep.grid, &means));
    }
    let fit = log_log_fit(&ns, &values);
    let uniform = ratios.iter().all(|r| *r <= 2.0);
    ExperimentResult::new(label, ns, values, hws)
        .with_fit(fit)
        .with_meta("time_grid", &sweep.grid)
        .with_meta("argmax_t", argmax)
        .with_meta("late_over_early", ratios)
        .with_meta("uniform_in_time", uniform)
        .with_meta("n_replicas", sweep.n_replicas)
        .with_meta("seed", sweep.seed)
}

impl ChaosSweep {
    /// Grid maximum of the mean particle/companion gap for each `N`, with log-log fit.
    pub fn chaos_result(&self) -> ExperimentResult {
        sup_table("chaos_sup_error", self, |p| &p.chaos)
    }

    /// Grid maximum of `E 𝒲₁(μ^N_t, u_t)` for each `N`, with log-log fit.
    pub fn empirical_result(&self) -> ExperimentResult {
        sup_table("empirical_w1_sup", self, |p| &p.w1)
    }

    pub fn deviations(&self) -> Vec<DeviationRow> {
        let mut rows = vec![];
        for p in &self.points {
            for (e, &eps) in self.epsilons.iter().enumerate() {
                for (j, &t) in self.grid.iter().enumerate() {
                    let frequency = p.deviation[e][j];
                    let mean_w1 = p.w1[j].mean;
                    let markov_bound = mean_w1 / eps + 3.0 * binomial_half_width(frequency, self.n_replicas);
                    rows.push(DeviationRow {
                        n: p.n,
                        t,
                        eps,
                        frequency,
                        mean_w1,
                        markov_bound,
                        consistent: frequency <= markov_bound + 1e-12,
                    });
                }
            }
        }
        rows
    }
}

pub const CHAOS_TAG: &str = "chaos-sweep";
/// Spacing of the flow knots that drive the companions.
pub const FLOW_SPACING: f64 = 0.01;

/// Grid merged with a uniform knot sequence of spacing [`FLOW_SPACING`].
fn flow_grid(grid: &[f64]) -> Vec<f64> {
    let t_max = grid.last().copied().unwrap_or(0.0);
    let steps = (t_max / FLOW_SPACING).ceil() as usize;
    let mut g: Vec<f64> = (0..=steps).map(|j| (j as f64 * FLOW_SPACING).min(t_max)).collect();
    g.extend_from_slice(grid);
    g.sort_by(f64::total_cmp);
    g.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
    g
}

struct GridObs {
    gap: f64,
    w1: f64,
}

/// One replica of `N` particles coupled site by site with `N` companions that
/// follow the nonlinear process. Both start from the same i.i.d. draw.
///
/// Sites are exchangeable, so the state is the multiset of `(X^i, X̄^i)`
/// pairs. Companion rates depend on time through the flow mean and are
/// handled by thinning.
fn chaos_replica(
    model: &RateModel,
    flow: &NonlinearFlow,
    flow_index: &[usize],
    init: &[u64],
    grid: &[f64],
    rng: &mut SimRng,
) -> Result<Vec<GridObs>> {
    let n = init.len();
    let mut classes: BTreeMap<(u64, u64), u64> = BTreeMap::new();
    for &x in init {
        *classes.entry((x, x)).or_insert(0) += 1;
    }
    let mut sum_x: u64 = init.iter().sum();
    let t_max = grid.last().copied().unwrap_or(0.0);
    let mut th = MeanThinning::new(flow);
    let (mut t, mut next) = (0.0, 0usize);
    let mut out = Vec::with_capacity(grid.len());
    let mut bounds: Vec<((u64, u64), u64, f64)> = Vec::new();

    let observe = |classes: &BTreeMap<(u64, u64), u64>, j: usize| -> Result<GridObs> {
        let mut gap = 0u64;
        let mut counts = BTreeMap::new();
        for (&(x, y), &c) in classes {
            gap += c * x.abs_diff(y);
            *counts.entry(x).or_insert(0) += c;
        }
        let e = EmpiricalMeasure::from_counts(counts);
        Ok(GridObs { gap: gap as f64 / n as f64, w1: w1_empirical(&e, &flow.dists[flow_index[j]])? })
    };

    loop {
        let (end, m_lo, m_hi) = th.piece(t);
        let fx = model.mean_field_at(sum_x as f64 / n as f64);
        let (f_lo, f_hi) = (model.mean_field_at(m_lo), model.mean_field_at(m_hi));
        bounds.clear();
        let mut total = 0.0;
        for (&(x, y), &c) in &classes {
            let lo: f64 = site_channels(model, x, &fx, y, &f_lo).iter().sum();
            let hi: f64 = site_channels(model, x, &fx, y, &f_hi).iter().sum();
            let b = th.bound(lo, hi);
            total += c as f64 * b;
            bounds.push(((x, y), c, b));
        }
        let s = if total > 0.0 { t + rng::exp_sample(rng, total) } else { f64::INFINITY };
        if s > end || s > t_max {
            let stop = end.min(t_max);
            while next < grid.len() && grid[next] <= stop {
                out.push(observe(&classes, next)?);
                next += 1;
            }
            if stop >= t_max {
                return Ok(out);
            }
            t = stop;
            continue;
        }
        let mut pick = rng::uniform(rng, total);
        let mut chosen = *bounds.last().expect("positive total has a class");
        for entry in &bounds {
            let w = entry.1 as f64 * entry.2;
            if pick < w {
                chosen = *entry;
                break;
            }
            pick -= w;
        }
        let ((x, y), _, b) = chosen;
        let ch = site_channels(model, x, &fx, y, &model.mean_field_at(th.mean_at(s)));
        let rate: f64 = ch.iter().sum();
        if rate > b * (1.0 + 1e-12) {
            if !th.violated() {
                return Err(Error::Stability { t: s, reason: "thinning bound keeps failing".into() });
            }
            continue;
        }
        while next < grid.len() && grid[next] <= s {
            out.push(observe(&classes, next)?);
            next += 1;
        }
        t = s;
        let mut v = rng::uniform(rng, b);
        let mut fired = None;
        for (c, r) in Channel::ALL.iter().zip(ch) {
            if v < r {
                fired = Some(*c);
                break;
            }
            v -= r;
        }
        let Some(c) = fired else { continue };
        th.accepted();
        let (dx, dy) = c.moves();
        let to = (x.wrapping_add_signed(dx as i64), y.wrapping_add_signed(dy as i64));
        let slot = classes.get_mut(&(x, y)).expect("chosen class exists");
        *slot -= 1;
        if *slot == 0 {
            classes.remove(&(x, y));
        }
        *classes.entry(to).or_insert(0) += 1;
        sum_x = sum_x.wrapping_add_signed(dx as i64);
    }
}

/// Joint simulation of the particle system and companion nonlinear processes
/// for every `N` in `n_list`.
///
/// The companions are driven by the integrated flow from `init_law`; each
/// pair `(X^i, X̄^i)` shares the min/excess channels of the coupling module.
#[allow(clippy::too_many_arguments)]
pub fn chaos_sweep(
    model: &RateModel,
    init_law: &DistN,
    n_list: &[usize],
    grid: &[f64],
    n_replicas: usize,
    epsilons: &[f64],
    seed: u64,
    exec: Execution,
) -> Result<ChaosSweep> {
    if !matches!(model.interaction(), Interaction::MeanField { .. } | Interaction::None) {
        return Err(Error::Unsupported("the chaos sweep needs a mean-field model".into()));
    }
    if n_list.is_empty() || n_list.contains(&0) || n_replicas == 0 {
        return Err(Error::InvalidArgument("need nonempty N list with N ≥ 1 and replicas ≥ 1".into()));
    }
    if grid.is_empty() || grid.windows(2).any(|w| w[1] < w[0]) || !(grid[0] >= 0.0) {
        return Err(Error::InvalidArgument("grid must be nonempty, sorted and nonnegative".into()));
    }
    let flow = integrate_flow(model, init_law, &flow_grid(grid), FlowOptions::default())?;
    let flow_index: Vec<usize> =
        grid.iter().map(|&t| flow.index_of(t).expect("flow grid contains the experiment grid")).collect();
    let jobs: Vec<(usize, usize)> = n_list.iter().flat_map(|&n| (0..n_replicas).map(move |r| (n, r))).collect();
    let runs = exec.try_map(jobs.len(), |j| {
        let (n, r) = jobs[j];
        let mut rng = rng::stream(seed, rng::tag(&format!("{CHAOS_TAG}-{n}")), r as u64);
        let init = draw_initial(init_law, n, &mut rng);
        chaos_replica(model, &flow, &flow_index, init.values(), grid, &mut rng)
    })?;
    let points = n_list
        .iter()
        .enumerate()
        .map(|(a, &n)| {
            let block = &runs[a * n_replicas..(a + 1) * n_replicas];
            let column = |j: usize, f: &dyn Fn(&GridObs) -> f64| block.iter().map(|r| f(&r[j])).collect::<Vec<f64>>();
            let chaos = (0..grid.len()).map(|j| mean_estimate(&column(j, &|o| o.gap))).collect();
            let w1 = (0..grid.len()).map(|j| mean_estimate(&column(j, &|o| o.w1))).collect();
            let deviation = epsilons
                .iter()
                .map(|&eps| {
                    (0..grid.len())
                        .map(|j| block.iter().filter(|r| r[j].w1 > eps).count() as f64 / n_replicas as f64)
                        .collect()
                })
                .collect();
            ChaosPoint { n, chaos, w1, deviation }
        })
        .collect();
    Ok(ChaosSweep { grid: grid.to_vec(), epsilons: epsilons.to_vec(), n_replicas, seed, points })
}

pub fn chaos_experiment(
    model: &RateModel,
    init_law: &DistN,
    n_list: &[usize],
    grid: &[f64],
    n_replicas: usize,
    seed: u64,
    exec: Execution,
) -> Result<ExperimentResult> {
    Ok(chaos_sweep(model, init_law, n_list, grid, n_replicas, &[], seed, exec)?.chaos_result())
}

#[allow(clippy::too_many_arguments)]
pub fn empirical_convergence(
    model: &RateModel,
    init_law: &DistN,
    n_list: &[usize],
    grid: &[f64],
    n_replicas: usize,
    epsilons: &[f64],
    seed: u64,
    exec: Execution,
) -> Result<(ExperimentResult, Vec<DeviationRow>)> {
    let sweep = chaos_sweep(model, init_law, n_list, grid, n_replicas, epsilons, seed, exec)?;
    Ok((sweep.empirical_result(), sweep.deviations()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryOptions {
    pub burn_in: f64,
    pub n_samples: usize,
    /// Time between successive samples of one chain.
    pub spacing: f64,
    pub n_chains: usize,
    /// Initial law; `None` starts from the reference law.
    pub init: Option<DistN>,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        Self { burn_in: 5.0, n_samples: 50, spacing: 1.0, n_chains: 32, init: None }
    }
}

pub const STATIONARY_TAG: &str = "stationary";

/// Long-run `𝒲₁(μ^N_t, reference)` averaged over samples after burn-in.
///
/// The value and half-width come from per-chain averages. `meta` carries the
/// pooled-sample distance and a two-window drift flag: the flag is raised
/// when first-half and second-half chain means differ by more than three
/// standard errors.
pub fn stationary_comparison(
    model: &RateModel,
    n: usize,
    reference: &DistN,
    opts: &StationaryOptions,
    seed: u64,
    exec: Execution,
) -> Result<ExperimentResult> {
    if opts.n_chains < 2 || opts.n_samples < 2 || !(opts.spacing > 0.0) || !(opts.burn_in >= 0.0) {
        return Err(Error::InvalidArgument("need ≥2 chains, ≥2 samples, positive spacing".into()));
    }
    let times: Vec<f64> = (0..opts.n_samples).map(|j| opts.burn_in + j as f64 * opts.spacing).collect();
    let t_max = *times.last().expect("n_samples ≥ 2");
    let init_law = opts.init.as_ref().unwrap_or(reference);
    let tag = rng::tag(STATIONARY_TAG);
    let chains = exec.try_map(opts.n_chains, |c| {
        let mut clock = SimClock::new(rng::stream(seed, tag, c as u64));
        let init = draw_initial(init_law, n, &mut clock.rng);
        let mut w = Vec::with_capacity(times.len());
        let mut pooled = EmpiricalMeasure::default();
        let mut err = None;
        simulate_with(model, init, t_max, &times, &mut clock, SimOptions::default(), &mut |_, s| {
            let e = s.empirical();
            match w1_empirical(&e, reference) {
                Ok(v) => w.push(v),
                Err(x) => err = Some(x),
            }
            pooled.add(s.values());
        })?;
        if let Some(e) = err {
            return Err(e);
        }
        Ok::<_, Error>((w, pooled))
    })?;
    let per_chain: Vec<f64> = chains.iter().map(|(w, _)| w.iter().sum::<f64>() / w.len() as f64).collect();
    let est = mean_estimate(&per_chain);
    let half = opts.n_samples / 2;
    let drift: Vec<f64> = chains
        .iter()
        .map(|(w, _)| {
            let a = w[..half].iter().sum::<f64>() / half as f64;
            let b = w[half..].iter().sum::<f64>() / (w.len() - half) as f64;
            b - a
        })
        .collect();
    let d = mean_estimate(&drift);
    let drift_flag = d.mean.abs() > 3.0 * d.std_err && d.mean.abs() > 1e-12;
    let mut pooled = EmpiricalMeasure::default();
    for (_, p) in &chains {
        for (&v, &c) in p.counts() {
            pooled.add(&vec![v; c as usize]);
        }
    }
    let pooled_w1 = w1_empirical(&pooled, reference)?;
    Ok(ExperimentResult::new("stationary_w1", vec![n as f64], vec![est.mean], vec![est.half_width])
        .with_meta("pooled_w1", pooled_w1)
        .with_meta("drift_mean", d.mean)
        .with_meta("drift_std_err", d.std_err)
        .with_meta("burn_in_suspect", drift_flag)
        .with_meta("options", opts)
        .with_meta("seed", seed)
        .with_meta("model", model.name()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovAudit {
    pub kappa: f64,
    pub violations: usize,
    /// Largest `ℒV + κV − b₀N`.
    pub worst_margin: f64,
    /// Largest `|ℒV + κV − b₀N|`, for equality cases.
    pub max_abs_margin: f64,
    pub states_checked: usize,
}

pub const LYAPUNOV_TOL: f64 = 1e-9;

/// `ℒV(x)` for `V(x) = Σ x_k`: total up rate minus total down rate.
pub fn generator_of_sum(model: &RateModel, x: &ParticleState) -> f64 {
    let field = model.field(x.values());
    x.values()
        .iter()
        .map(|&xi| {
            let (up, down) = model.site_rates(xi, &field);
            up - down
        })
        .sum()
}

/// Margins of `ℒV ≤ −κV + b₀N` at the given states.
pub fn lyapunov_audit_states(model: &RateModel, states: &[ParticleState], kappa: f64) -> LyapunovAudit {
    let b0 = model.b0();
    let (mut violations, mut worst, mut max_abs) = (0, f64::NEG_INFINITY, 0.0f64);
    for x in states {
        let margin = generator_of_sum(model, x) + kappa * x.sum() as f64 - b0 * x.n() as f64;
        worst = worst.max(margin);
        max_abs = max_abs.max(margin.abs());
        if margin > LYAPUNOV_TOL {
            violations += 1;
        }
    }
    LyapunovAudit { kappa, violations, worst_margin: worst, max_abs_margin: max_abs, states_checked: states.len() }
}

/// All-zero, constant, and one-large configurations of size `n`.
pub fn adversarial_states(n: usize, max_coord: u64) -> Vec<ParticleState> {
    let n = n.max(1);
    let mut out = vec![ParticleState::zeros(n)];
    for v in [1, max_coord / 2, max_coord] {
        out.push(ParticleState::new(vec![v; n]).expect("n ≥ 1"));
    }
    for base in [0, 1] {
        let mut x = vec![base; n];
        x[0] = max_coord;
        out.push(ParticleState::new(x).expect("n ≥ 1"));
    }
    out
}

pub const LYAPUNOV_TAG: &str = "lyapunov";

/// Audit at `n_states` uniform states in `{0..max_coord}^N` plus the adversarial
/// set, with `κ = λ − 2α` from the model's constants.
pub fn lyapunov_audit(
    model: &RateModel,
    n: usize,
    n_states: usize,
    max_coord: u64,
    seed: u64,
) -> Result<LyapunovAudit> {
    if matches!(model.interaction(), Interaction::QuadraticPairwise { .. }) {
        return Err(Error::Unsupported("the Lyapunov audit is stated for mean-field models".into()));
    }
    let scan = max_coord.max(50);
    let c = constants(model, scan, &default_mean_grid(scan as f64))?;
    let mut rng = rng::stream(seed, rng::tag(LYAPUNOV_TAG), n as u64);
    let mut states = adversarial_states(n, max_coord);
    for _ in 0..n_states {
        let x = (0..n.max(1)).map(|_| rng.random_range(0..=max_coord)).collect();
        states.push(ParticleState::new(x)?);
    }
    Ok(lyapunov_audit_states(model, &states, c.kappa))
}
