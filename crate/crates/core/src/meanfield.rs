//! The nonlinear master equation and the nonlinear process.
//!
//! `u_t` evolves by the forward equation of a birth-death chain whose rates
//! are evaluated at the current mean `m = ‖u_t‖`. The state space is cut at
//! a reflecting cap `K`; the birth flux that would have crossed the cap is
//! tracked and must stay below the distribution's tail tolerance.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::measure::{DistN, EmpiricalMeasure, DEFAULT_TAIL_TOL};
use crate::rates::{constants, default_mean_grid, Interaction, RateModel};
use crate::rng::{self, SimRng};
use crate::stats::{mean_estimate, MeanEstimate};

fn require_mean_field(model: &RateModel) -> Result<()> {
    match model.interaction() {
        Interaction::QuadraticPairwise { .. } => {
            Err(Error::Unsupported("the nonlinear equation is only defined for mean-field or free models".into()))
        }
        _ => Ok(()),
    }
}

fn first_moment(u: &[f64]) -> f64 {
    u.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
}

/// Writes `du/dt` for the capped chain into `out` and returns the cap flux
/// `u(K)·(b_K + q⁺(K, m))`.
fn rhs_into(model: &RateModel, u: &[f64], out: &mut [f64]) -> f64 {
    let cap = u.len() - 1;
    let field = model.mean_field_at(first_moment(u));
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut flux = 0.0;
    for (k, &p) in u.iter().enumerate() {
        let (mut up, down) = model.site_rates(k as u64, &field);
        if k == cap {
            flux = p * up;
            up = 0.0;
        }
        out[k] -= (up + down) * p;
        if k < cap {
            out[k + 1] += up * p;
        }
        if k > 0 {
            out[k - 1] += down * p;
        }
    }
    flux
}

/// Largest total jump rate on `0..=cap` at mean `m`.
fn max_rate(model: &RateModel, cap: usize, m: f64) -> f64 {
    let field = model.mean_field_at(m);
    (0..=cap as u64)
        .map(|k| {
            let (up, down) = model.site_rates(k, &field);
            up + down
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RhsOutput {
    pub du: Vec<f64>,
    /// Birth flux blocked at the cap.
    pub cap_flux: f64,
}

/// Right-hand side of the forward equation on `{0, …, cap}`.
pub fn master_rhs(model: &RateModel, u: &DistN, cap: usize) -> Result<RhsOutput> {
    require_mean_field(model)?;
    if u.support_max() > cap {
        return Err(Error::Truncation { state: u.support_max() as u64, k: cap });
    }
    let u = u.padded(cap);
    let at_cap = u.get(cap);
    if at_cap > u.tail_tol() {
        return Err(Error::TailOverflow { mass: at_cap, tol: u.tail_tol() });
    }
    let mut du = vec![0.0; cap + 1];
    let cap_flux = rhs_into(model, &u.mass()[..=cap], &mut du);
    Ok(RhsOutput { du, cap_flux })
}

/// Solution of the master equation recorded on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonlinearFlow {
    pub times: Vec<f64>,
    pub dists: Vec<DistN>,
    pub means: Vec<f64>,
    /// Reflecting cap used.
    pub cap: usize,
    /// Integrated cap flux over the horizon.
    pub leaked: f64,
}

impl NonlinearFlow {
    /// Piecewise-linear interpolation of `‖u_t‖`, constant past the ends.
    pub fn mean_at(&self, t: f64) -> f64 {
        let j = self.times.partition_point(|&s| s <= t);
        if j == 0 {
            return self.means[0];
        }
        if j == self.times.len() {
            return *self.means.last().expect("nonempty flow");
        }
        let (t0, t1) = (self.times[j - 1], self.times[j]);
        let w = (t - t0) / (t1 - t0);
        self.means[j - 1] * (1.0 - w) + self.means[j] * w
    }

    /// First recorded time strictly after `t`, or `+∞`.
    pub fn next_knot(&self, t: f64) -> f64 {
        let j = self.times.partition_point(|&s| s <= t);
        self.times.get(j).copied().unwrap_or(f64::INFINITY)
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("nonempty flow")
    }

    /// Index of the recorded time equal to `t` (within 1e-12).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let j = self.times.partition_point(|&s| s < t - 1e-12);
        (j < self.times.len() && (self.times[j] - t).abs() <= 1e-12).then_some(j)
    }

    pub fn exp_moments(&self, delta: f64) -> Vec<f64> {
        self.dists.iter().map(|u| u.exp_moment(delta)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowOptions {
    /// Upper bound on the time step.
    pub dt: f64,
    /// Fixed cap; `None` picks it adaptively.
    pub cap: Option<usize>,
    pub tail_tol: f64,
    pub max_cap: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self { dt: 0.01, cap: None, tail_tol: DEFAULT_TAIL_TOL, max_cap: 1 << 14 }
    }
}

/// Fraction of `1/max_rate` used as time step.
const STABILITY_FRACTION: f64 = 0.1;
const NEGATIVE_TOL: f64 = 1e-12;
const MAX_HALVINGS: u32 = 20;

/// RK4 integration of the master equation, recording at `grid` (sorted, starting
/// at or after 0). The mean is re-evaluated at every stage.
pub fn integrate_flow(model: &RateModel, u0: &DistN, grid: &[f64], opts: FlowOptions) -> Result<NonlinearFlow> {
    require_mean_field(model)?;
    if grid.is_empty() || grid.windows(2).any(|w| w[1] < w[0]) || !(grid[0] >= 0.0) {
        return Err(Error::InvalidArgument("grid must be nonempty, sorted and nonnegative".into()));
    }
    if !(opts.dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt = {} must be positive", opts.dt)));
    }
    if let Some(cap) = opts.cap {
        return integrate_capped(model, u0, grid, opts, cap);
    }
    let m0 = u0.first_moment();
    let mut cap = 20usize.max((4.0 * m0).ceil() as usize).max(u0.support_max() + 2);
    loop {
        match integrate_capped(model, u0, grid, opts, cap) {
            Err(Error::TailOverflow { .. }) if cap * 2 <= opts.max_cap => cap *= 2,
            other => return other,
        }
    }
}

fn integrate_capped(
    model: &RateModel,
    u0: &DistN,
    grid: &[f64],
    opts: FlowOptions,
    cap: usize,
) -> Result<NonlinearFlow> {
    if u0.support_max() > cap {
        return Err(Error::Truncation { state: u0.support_max() as u64, k: cap });
    }
    let n = cap + 1;
    let mut u = u0.padded(cap).mass()[..n].to_vec();
    let mut t = 0.0;
    let mut leaked = 0.0;
    let mut flow = NonlinearFlow { times: vec![], dists: vec![], means: vec![], cap, leaked: 0.0 };
    let mut ws = Workspace::new(n);
    for &target in grid {
        let span = target - t;
        if span > 0.0 {
            let h_max = opts.dt.min(STABILITY_FRACTION / max_rate(model, cap, first_moment(&u)).max(1e-300));
            let mut steps = (span / h_max).ceil().max(1.0) as usize;
            let mut halvings = 0;
            loop {
                let mut trial = u.clone();
                match advance(model, &mut trial, span / steps as f64, steps, &mut ws) {
                    Ok(flux) => {
                        u = trial;
                        leaked += flux;
                        break;
                    }
                    Err(()) if halvings < MAX_HALVINGS => {
                        steps *= 2;
                        halvings += 1;
                    }
                    Err(()) => {
                        return Err(Error::Stability {
                            t,
                            reason: "negative mass persists after step refinement".into(),
                        })
                    }
                }
            }
            t = target;
        }
        if leaked > opts.tail_tol {
            return Err(Error::TailOverflow { mass: leaked, tol: opts.tail_tol });
        }
        let d = DistN::new(u.clone(), opts.tail_tol)?;
        flow.means.push(d.first_moment());
        flow.dists.push(d);
        flow.times.push(target);
    }
    flow.leaked = leaked;
    Ok(flow)
}

struct Workspace {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self { k: std::array::from_fn(|_| vec![0.0; n]), tmp: vec![0.0; n] }
    }
}

/// `steps` RK4 steps of size `h`. Returns the integrated cap flux, or `Err`
/// if some component drops below `−NEGATIVE_TOL`.
fn advance(model: &RateModel, u: &mut [f64], h: f64, steps: usize, ws: &mut Workspace) -> Result<f64, ()> {
    let mut flux = 0.0;
    for _ in 0..steps {
        let Workspace { k, tmp } = ws;
        let f1 = rhs_into(model, u, &mut k[0]);
        for ((t, x), d) in tmp.iter_mut().zip(u.iter()).zip(&k[0]) {
            *t = x + 0.5 * h * d;
        }
        let f2 = rhs_into(model, tmp, &mut k[1]);
        for ((t, x), d) in tmp.iter_mut().zip(u.iter()).zip(&k[1]) {
            *t = x + 0.5 * h * d;
        }
        let f3 = rhs_into(model, tmp, &mut k[2]);
        for ((t, x), d) in tmp.iter_mut().zip(u.iter()).zip(&k[2]) {
            *t = x + h * d;
        }
        let f4 = rhs_into(model, tmp, &mut k[3]);
        let mut clamped = false;
        for (i, x) in u.iter_mut().enumerate() {
            *x += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
            if *x < 0.0 {
                if *x < -NEGATIVE_TOL {
                    return Err(());
                }
                *x = 0.0;
                clamped = true;
            }
        }
        if clamped {
            let s: f64 = u.iter().sum();
            u.iter_mut().for_each(|x| *x /= s);
        }
        flux += h / 6.0 * (f1 + 2.0 * f2 + 2.0 * f3 + f4);
    }
    Ok(flux)
}

const FIXED_POINT_DAMPING: f64 = 0.5;
const FIXED_POINT_MAX_ITER: usize = 10_000;

/// Detailed-balance stationary law of the chain with rates frozen at mean `m`,
/// on a cap large enough that the last state carries at most `tail_tol·1e-3`.
fn frozen_stationary(model: &RateModel, m: f64, tail_tol: f64, max_cap: usize) -> Result<Vec<f64>> {
    let field = model.mean_field_at(m);
    let mut pi = vec![1.0];
    let mut cap = 64usize;
    loop {
        while pi.len() <= cap {
            let k = pi.len() as u64 - 1;
            let (up, _) = model.site_rates(k, &field);
            let (_, down) = model.site_rates(k + 1, &field);
            if down <= 0.0 {
                return Err(Error::InvalidModel(format!("no stationary law: death rate 0 at {}", k + 1)));
            }
            let next = pi[k as usize] * up / down;
            pi.push(next);
            if next > 1e200 {
                pi.iter_mut().for_each(|p| *p *= 1e-200);
            }
        }
        let total: f64 = pi.iter().sum();
        if pi[cap] / total <= tail_tol * 1e-3 {
            return Ok(pi.into_iter().map(|p| p / total).collect());
        }
        if cap * 2 > max_cap {
            return Err(Error::TailOverflow { mass: pi[cap] / total, tol: tail_tol });
        }
        cap *= 2;
    }
}

/// Stationary solution of the master equation by damped iteration on the mean.
///
/// Each step solves the linear chain with rates frozen at the current mean and
/// moves the mean halfway toward the mean of that law. Stops once the mean
/// update and `‖master_rhs‖₁` are both below `tol`.
pub fn fixed_point(model: &RateModel, u_init: &DistN, tol: f64) -> Result<DistN> {
    require_mean_field(model)?;
    let tail_tol = u_init.tail_tol();
    let mut m = u_init.first_moment();
    let mut residual = f64::INFINITY;
    for _ in 0..FIXED_POINT_MAX_ITER {
        let pi = frozen_stationary(model, m, tail_tol, 1 << 16)?;
        let m_new = first_moment(&pi);
        let dm = m_new - m;
        if dm.abs() <= tol {
            let mut du = vec![0.0; pi.len()];
            rhs_into(model, &pi, &mut du);
            residual = du.iter().map(|v| v.abs()).sum();
            if residual <= tol {
                return DistN::new(pi, tail_tol);
            }
        }
        m += FIXED_POINT_DAMPING * dm;
    }
    Err(Error::NoConvergence { iterations: FIXED_POINT_MAX_ITER, residual })
}

/// Marginals of the nonlinear process at the recording grid.
#[derive(Debug, Clone, Serialize)]
pub struct NonlinearSamples {
    pub times: Vec<f64>,
    /// `values[j][r]` is replica `r` at `times[j]`.
    pub values: Vec<Vec<u64>>,
    pub means: Vec<MeanEstimate>,
}

impl NonlinearSamples {
    pub fn marginal(&self, j: usize) -> EmpiricalMeasure {
        EmpiricalMeasure::from_values(&self.values[j])
    }
}

/// Piecewise bound for thinning a rate that depends on time only through the
/// flow mean. On each flow interval the mean is linear, so for rates monotone
/// in the mean the endpoint maximum is a valid bound. A violation (possible
/// for non-monotone rates) doubles the bound and replays from the last
/// accepted time.
pub(crate) struct MeanThinning<'f> {
    flow: &'f NonlinearFlow,
    inflate: f64,
}

impl<'f> MeanThinning<'f> {
    pub(crate) fn new(flow: &'f NonlinearFlow) -> Self {
        Self { flow, inflate: 1.0 }
    }

    /// `(interval end, mean at start, mean at end)` of the linear piece holding `t`.
    pub(crate) fn piece(&self, t: f64) -> (f64, f64, f64) {
        let end = self.flow.next_knot(t);
        let end = if end.is_finite() { end } else { f64::INFINITY };
        let m_end = if end.is_finite() { self.flow.mean_at(end) } else { self.flow.mean_at(t) };
        (end, self.flow.mean_at(t), m_end)
    }

    pub(crate) fn bound(&self, at_lo: f64, at_hi: f64) -> f64 {
        at_lo.max(at_hi) * self.inflate
    }

    pub(crate) fn mean_at(&self, t: f64) -> f64 {
        self.flow.mean_at(t)
    }

    /// Records a violation; returns `false` once inflation becomes absurd.
    pub(crate) fn violated(&mut self) -> bool {
        self.inflate *= 2.0;
        self.inflate < 1e6
    }

    pub(crate) fn accepted(&mut self) {
        self.inflate = 1.0;
    }
}

fn nonlinear_path(
    model: &RateModel,
    flow: &NonlinearFlow,
    x0: u64,
    grid: &[f64],
    rng: &mut SimRng,
) -> Result<Vec<u64>> {
    let t_max = grid.last().copied().unwrap_or(0.0);
    let mut out = Vec::with_capacity(grid.len());
    let mut th = MeanThinning::new(flow);
    let (mut t, mut x, mut next) = (0.0, x0, 0usize);
    let total = |x: u64, m: f64| {
        let (up, down) = model.site_rates(x, &model.mean_field_at(m));
        up + down
    };
    loop {
        let (end, m_lo, m_hi) = th.piece(t);
        let bound = th.bound(total(x, m_lo), total(x, m_hi));
        let s = if bound > 0.0 { t + rng::exp_sample(rng, bound) } else { f64::INFINITY };
        if s > end || s > t_max {
            let stop = end.min(t_max);
            while next < grid.len() && grid[next] <= stop {
                out.push(x);
                next += 1;
            }
            if stop >= t_max {
                return Ok(out);
            }
            t = stop;
            continue;
        }
        let (up, down) = model.site_rates(x, &model.mean_field_at(th.mean_at(s)));
        if up + down > bound * (1.0 + 1e-12) {
            if !th.violated() {
                return Err(Error::Stability { t: s, reason: "thinning bound keeps failing".into() });
            }
            continue;
        }
        while next < grid.len() && grid[next] <= s {
            out.push(x);
            next += 1;
        }
        let u = rng::uniform(rng, bound);
        if u < up {
            x += 1;
        } else if u < up + down {
            x -= 1;
        }
        th.accepted();
        t = s;
    }
}

pub const NONLINEAR_TAG: &str = "nonlinear-process";

/// Independent copies of the nonlinear process started from `flow.dists[0]`,
/// its rates driven by the interpolated flow mean, simulated by thinning.
pub fn simulate_nonlinear(
    model: &RateModel,
    flow: &NonlinearFlow,
    n_replicas: usize,
    grid: &[f64],
    seed: u64,
    exec: Execution,
) -> Result<NonlinearSamples> {
    require_mean_field(model)?;
    if n_replicas == 0 {
        return Err(Error::InvalidArgument("n_replicas must be at least 1".into()));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) || grid.first().is_some_and(|t| !(*t >= 0.0)) {
        return Err(Error::InvalidArgument("grid must be sorted and nonnegative".into()));
    }
    if grid.last().is_some_and(|&t| t > flow.horizon() + 1e-12) {
        return Err(Error::InvalidArgument(format!("grid exceeds flow horizon {}", flow.horizon())));
    }
    let tag = rng::tag(NONLINEAR_TAG);
    let sampler = flow.dists[0].sampler();
    let paths = exec.try_map(n_replicas, |r| {
        let mut rng = rng::stream(seed, tag, r as u64);
        let x0 = sampler.sample(&mut rng);
        nonlinear_path(model, flow, x0, grid, &mut rng)
    })?;
    let values: Vec<Vec<u64>> = (0..grid.len()).map(|j| paths.iter().map(|p| p[j]).collect()).collect();
    let means = values.iter().map(|col| mean_estimate(&col.iter().map(|&v| v as f64).collect::<Vec<_>>())).collect();
    Ok(NonlinearSamples { times: grid.to_vec(), values, means })
}

/// Exponential-moment bound along the flow.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentCertificate {
    pub delta: f64,
    /// `inf_{1≤x≤scan_max} (d_x e^{−δ} − b_x)`.
    pub beta_delta: f64,
    /// `α(‖u₀‖ + b₀/κ)`.
    pub k1: f64,
    /// `Σ e^{δi} u₀(i) + b₀/(β(δ) − K₁)`, meaningful only when `applicable`.
    pub bound: f64,
    pub applicable: bool,
    pub kappa: f64,
    /// The scan minimum sat at `scan_max`, so `beta_delta` may overestimate the infimum.
    pub boundary_warning: bool,
}

impl MomentCertificate {
    /// `bound − Σ e^{δi} u_t(i)` at every recorded time (negative means violated).
    pub fn margins(&self, flow: &NonlinearFlow) -> Vec<f64> {
        flow.exp_moments(self.delta).into_iter().map(|e| self.bound - e).collect()
    }
}

pub fn exp_moment_certificate(model: &RateModel, u0: &DistN, delta: f64, scan_max: u64) -> Result<MomentCertificate> {
    require_mean_field(model)?;
    if !(delta > 0.0) || scan_max == 0 {
        return Err(Error::InvalidArgument("need delta > 0 and scan_max ≥ 1".into()));
    }
    let c = constants(model, scan_max, &default_mean_grid(scan_max as f64))?;
    if !(c.kappa > 0.0) {
        return Err(Error::InvalidModel(format!("κ = {} is not positive", c.kappa)));
    }
    let (mut beta, mut argmin) = (f64::INFINITY, 0);
    for x in 1..=scan_max {
        let v = model.death(x) * (-delta).exp() - model.birth(x);
        if v < beta {
            beta = v;
            argmin = x;
        }
    }
    let b0 = model.b0();
    let k1 = c.alpha * (u0.first_moment() + b0 / c.kappa);
    let applicable = beta - k1 > 0.0;
    let bound = if applicable { u0.exp_moment(delta) + b0 / (beta - k1) } else { f64::INFINITY };
    Ok(MomentCertificate {
        delta,
        beta_delta: beta,
        k1,
        bound,
        applicable,
        kappa: c.kappa,
        boundary_warning: argmin == scan_max,
    })
}
