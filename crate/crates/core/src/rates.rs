//! Rate models and finite certificates for the structural assumptions.
//!
//! A particle at `k` jumps up at rate `b_k + q⁺` and down at rate
//! `(d_k + q⁻)·1{k>0}`. The interaction terms depend either on the particle
//! mean (`MeanField`) or on the whole configuration through pairwise
//! differences (`QuadraticPairwise`).
//!
//! The assumption checkers scan finite ranges. A positive `λ` returned by
//! [`check_assumption_a`] certifies the convexity condition on the scanned
//! range only.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ssa::ParticleState;

pub type SiteRate = Arc<dyn Fn(u64) -> f64 + Send + Sync>;
pub type InteractionRate = Arc<dyn Fn(u64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Interaction {
    None,
    /// `q⁺(k, m)`, `q⁻(k, m)` with `m` the particle mean.
    MeanField {
        qplus: InteractionRate,
        qminus: InteractionRate,
    },
    /// `q⁺_X(x) = (a/N) Σ_j (X^j − x)₊`, `q⁻_X(x) = (a/N) Σ_j (x − X^j)₊`.
    QuadraticPairwise {
        a: f64,
    },
}

impl Interaction {
    pub fn mean_field(
        qplus: impl Fn(u64, f64) -> f64 + Send + Sync + 'static,
        qminus: impl Fn(u64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Interaction::MeanField { qplus: Arc::new(qplus), qminus: Arc::new(qminus) }
    }

    /// `q⁺(k,l) = s·(l−k)₊`, `q⁻(k,l) = s·(k−l)₊`: particles are pulled toward the mean.
    pub fn attractive(strength: f64) -> Self {
        Self::mean_field(move |k, l| strength * (l - k as f64).max(0.0), move |k, l| strength * (k as f64 - l).max(0.0))
    }

    /// `q⁺(k,l) = s·l`, `q⁻ ≡ 0`.
    pub fn mean_birth(strength: f64) -> Self {
        Self::mean_field(move |_, l| strength * l, |_, _| 0.0)
    }

    pub fn is_mean_field(&self) -> bool {
        matches!(self, Interaction::MeanField { .. })
    }
}

impl fmt::Debug for Interaction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Interaction::None => f.write_str("None"),
            Interaction::MeanField { .. } => f.write_str("MeanField"),
            Interaction::QuadraticPairwise { a } => write!(f, "QuadraticPairwise {{ a: {a} }}"),
        }
    }
}

/// Extension of a tabulated rate beyond its last entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Tail {
    Constant,
    Linear { slope: f64 },
}

/// Interaction environment seen by one particle.
#[derive(Debug, Clone)]
pub enum Field {
    Free,
    Mean(f64),
    Pairwise(PairwiseProfile),
}

/// Sorted configuration with prefix sums; answers `Σ_j (X^j − x)₊` and
/// `Σ_j (x − X^j)₊` in `O(log N)`.
#[derive(Debug, Clone, Default)]
pub struct PairwiseProfile {
    sorted: Vec<u64>,
    prefix: Vec<u64>,
}

impl PairwiseProfile {
    pub fn new(values: &[u64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_unstable();
        Self::from_sorted(sorted)
    }

    pub fn from_sorted(sorted: Vec<u64>) -> Self {
        let mut prefix = Vec::with_capacity(sorted.len() + 1);
        prefix.push(0);
        let mut acc = 0u64;
        for &v in &sorted {
            acc += v;
            prefix.push(acc);
        }
        Self { sorted, prefix }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// `Σ_j (X^j − x)₊`
    pub fn excess_above(&self, x: u64) -> f64 {
        let n = self.sorted.len();
        let idx = self.sorted.partition_point(|&v| v <= x);
        let sum = self.prefix[n] - self.prefix[idx];
        (sum - x * (n - idx) as u64) as f64
    }

    /// `Σ_j (x − X^j)₊`
    pub fn excess_below(&self, x: u64) -> f64 {
        let idx = self.sorted.partition_point(|&v| v < x);
        (x * idx as u64 - self.prefix[idx]) as f64
    }
}

#[derive(Clone)]
pub struct RateModel {
    name: String,
    birth: SiteRate,
    death: SiteRate,
    interaction: Interaction,
    pub declared_lambda: Option<f64>,
    pub declared_alpha: Option<f64>,
}

impl fmt::Debug for RateModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RateModel")
            .field("name", &self.name)
            .field("interaction", &self.interaction)
            .field("declared_lambda", &self.declared_lambda)
            .field("declared_alpha", &self.declared_alpha)
            .finish()
    }
}

impl RateModel {
    pub fn new(
        name: impl Into<String>,
        birth: impl Fn(u64) -> f64 + Send + Sync + 'static,
        death: impl Fn(u64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            birth: Arc::new(birth),
            death: Arc::new(death),
            interaction: Interaction::None,
            declared_lambda: None,
            declared_alpha: None,
        }
    }

    /// `b_k = p·k^a`, `d_k = q·k^a`.
    pub fn power(p: f64, q: f64, a: f64) -> Self {
        Self::new(
            format!("power(p={p}, q={q}, a={a})"),
            move |k| p * (k as f64).powf(a),
            move |k| q * (k as f64).powf(a),
        )
    }

    /// M/M/∞ queue: `b_k = p`, `d_k = q·k`.
    pub fn mm_inf(p: f64, q: f64) -> Self {
        Self::new(format!("mm_inf(p={p}, q={q})"), move |_| p, move |k| q * k as f64)
    }

    /// `b_k = p·k + c`, `d_k = q·k`.
    pub fn linear(p: f64, q: f64, c: f64) -> Self {
        Self::new(format!("linear(p={p}, q={q}, c={c})"), move |k| p * k as f64 + c, move |k| q * k as f64)
    }

    /// Rates given by tables up to a cutoff, extended by `tail` beyond it.
    pub fn tabulated(birth: Vec<f64>, birth_tail: Tail, death: Vec<f64>, death_tail: Tail) -> Result<Self> {
        if birth.is_empty() || death.is_empty() {
            return Err(Error::InvalidModel("rate tables must be nonempty".into()));
        }
        let lookup = |table: Vec<f64>, tail: Tail| {
            move |k: u64| {
                let k = k as usize;
                match table.get(k) {
                    Some(&v) => v,
                    None => {
                        let last = table.len() - 1;
                        match tail {
                            Tail::Constant => table[last],
                            Tail::Linear { slope } => table[last] + slope * (k - last) as f64,
                        }
                    }
                }
            }
        };
        let name = format!("tabulated(cutoff={})", birth.len().max(death.len()));
        Ok(Self::new(name, lookup(birth, birth_tail), lookup(death, death_tail)))
    }

    pub fn with_interaction(mut self, interaction: Interaction) -> Self {
        self.interaction = interaction;
        self
    }

    pub fn with_declared(mut self, lambda: Option<f64>, alpha: Option<f64>) -> Self {
        self.declared_lambda = lambda;
        self.declared_alpha = alpha;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn interaction(&self) -> &Interaction {
        &self.interaction
    }

    #[inline]
    pub fn birth(&self, k: u64) -> f64 {
        (self.birth)(k)
    }

    /// Base death rate; zero at `k = 0` whatever the supplied function says.
    #[inline]
    pub fn death(&self, k: u64) -> f64 {
        if k == 0 {
            0.0
        } else {
            (self.death)(k)
        }
    }

    pub fn b0(&self) -> f64 {
        self.birth(0)
    }

    /// `(q⁺, q⁻)` at position `k`. `q⁻` is zero at `k = 0`.
    #[inline]
    pub fn interaction_rates(&self, k: u64, field: &Field) -> (f64, f64) {
        match (&self.interaction, field) {
            (Interaction::None, _) | (_, Field::Free) => (0.0, 0.0),
            (Interaction::MeanField { qplus, qminus }, Field::Mean(m)) => {
                let down = if k == 0 { 0.0 } else { qminus(k, *m) };
                (qplus(k, *m), down)
            }
            (Interaction::QuadraticPairwise { a }, Field::Pairwise(p)) => {
                let n = p.len() as f64;
                (a / n * p.excess_above(k), a / n * p.excess_below(k))
            }
            (i, f) => unreachable!("field {f:?} does not match interaction {i:?}"),
        }
    }

    /// Effective `(up, down)` rates of a particle at `k` in environment `field`.
    #[inline]
    pub fn site_rates(&self, k: u64, field: &Field) -> (f64, f64) {
        let (qp, qm) = self.interaction_rates(k, field);
        let down = if k == 0 { 0.0 } else { self.death(k) + qm };
        (self.birth(k) + qp, down)
    }

    /// Field generated by a configuration.
    pub fn field(&self, x: &[u64]) -> Field {
        match self.interaction {
            Interaction::None => Field::Free,
            Interaction::MeanField { .. } => {
                let s: u64 = x.iter().sum();
                Field::Mean(s as f64 / x.len() as f64)
            }
            Interaction::QuadraticPairwise { .. } => Field::Pairwise(PairwiseProfile::new(x)),
        }
    }

    /// Field seen by a particle whose environment is summarised by a mean
    /// (the nonlinear process). `Free` for models without mean-field interaction.
    pub fn mean_field_at(&self, m: f64) -> Field {
        match self.interaction {
            Interaction::MeanField { .. } => Field::Mean(m),
            _ => Field::Free,
        }
    }

    /// Checks the structural constraints on `0..=n_max` (and, for mean-field
    /// models, on the given mean grid).
    ///
    /// `b_0 = 0` is accepted: the power and linear families vanish at zero.
    /// The supplied death function is never evaluated at 0.
    /// Such models are not irreducible; [`RateModel::is_irreducible_on`]
    /// reports it.
    pub fn validate(&self, n_max: u64, m_grid: &[f64]) -> Result<()> {
        for k in 0..=n_max {
            let b = self.birth(k);
            if !b.is_finite() || b < 0.0 {
                return Err(Error::InvalidModel(format!("b_{k} = {b} is not a finite nonnegative rate")));
            }
            if k >= 1 {
                let d = self.death(k);
                if !d.is_finite() || d <= 0.0 {
                    return Err(Error::InvalidModel(format!("d_{k} = {d} must be finite and positive")));
                }
            }
        }
        match &self.interaction {
            Interaction::None => {}
            Interaction::QuadraticPairwise { a } => {
                if !a.is_finite() || *a <= 0.0 {
                    return Err(Error::InvalidModel(format!("pairwise strength a = {a} must be positive")));
                }
            }
            Interaction::MeanField { qplus, qminus } => {
                for &m in m_grid {
                    let q0 = qminus(0, m);
                    if q0 != 0.0 {
                        return Err(Error::InvalidModel(format!("q⁻(0, {m}) = {q0} must be 0")));
                    }
                    for k in 0..=n_max {
                        let (p, q) = (qplus(k, m), qminus(k, m));
                        if !p.is_finite() || p < 0.0 || !q.is_finite() || q < 0.0 {
                            return Err(Error::InvalidModel(format!(
                                "interaction rates at (k={k}, m={m}) are ({p}, {q})"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// True when every base birth rate on `0..=n_max` is positive.
    pub fn is_irreducible_on(&self, n_max: u64) -> bool {
        (0..=n_max).all(|k| self.birth(k) > 0.0)
    }
}

/// Effective `(birth, death)` rates of particle `i`.
pub fn effective_rates(model: &RateModel, state: &ParticleState, i: usize) -> (f64, f64) {
    let field = model.field(state.values());
    model.site_rates(state.values()[i], &field)
}

/// Default mean grid used when validating without an explicit one.
pub fn default_mean_grid(upper: f64) -> Vec<f64> {
    let steps = 40;
    (0..=steps).map(|j| upper * j as f64 / steps as f64).collect()
}

/// Minimum of `∇⁺(d − b)(n)` over `n ∈ 0..n_max`.
pub fn check_assumption_a(model: &RateModel, n_max: u64) -> Result<f64> {
    if n_max < 1 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    model.validate(n_max, &[])?;
    let gap = |n: u64| model.death(n) - model.birth(n);
    Ok((0..n_max).map(|n| gap(n + 1) - gap(n)).fold(f64::INFINITY, f64::min))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub lambda_min: f64,
    pub alpha_min: f64,
    pub monotone_ok: bool,
    pub kappa: f64,
    pub scan_range: u64,
    pub warnings: Vec<String>,
}

fn check_grid(m_grid: &[f64]) -> Result<()> {
    if m_grid.is_empty() {
        return Err(Error::InvalidArgument("mean grid is empty".into()));
    }
    if m_grid.windows(2).any(|w| w[1] < w[0]) || m_grid.iter().any(|m| !m.is_finite() || *m < 0.0) {
        return Err(Error::InvalidArgument("mean grid must be sorted, finite and nonnegative".into()));
    }
    Ok(())
}

/// Grid certificate for the Lipschitz condition plus monotonicity of `q±` in
/// the mean.
pub fn check_assumption_b(model: &RateModel, k_max: u64, m_grid: &[f64]) -> Result<AssumptionReport> {
    if k_max < 1 {
        return Err(Error::InvalidArgument("k_max must be at least 1".into()));
    }
    check_grid(m_grid)?;
    model.validate(k_max, m_grid)?;
    let lambda_min = check_assumption_a(model, k_max)?;

    let (alpha_min, monotone_ok) = match model.interaction() {
        Interaction::QuadraticPairwise { .. } => {
            return Err(Error::Unsupported(
                "the Lipschitz condition does not apply to pairwise interaction; only λ is needed".into(),
            ))
        }
        Interaction::None => (0.0, true),
        Interaction::MeanField { qplus, qminus } => {
            let points: Vec<(f64, f64, f64)> = (0..=k_max)
                .flat_map(|k| m_grid.iter().map(move |&l| (k, l)))
                .map(|(k, l)| (k as f64, l, qplus(k, l) - qminus(k, l)))
                .collect();
            let mut alpha = 0.0f64;
            for (a_idx, &(k1, l1, v1)) in points.iter().enumerate() {
                for &(k2, l2, v2) in &points[a_idx + 1..] {
                    let dist = (k1 - k2).abs() + (l1 - l2).abs();
                    if dist > 0.0 {
                        alpha = alpha.max((v1 - v2).abs() / dist);
                    }
                }
            }
            let mut monotone = true;
            for k in 0..=k_max {
                for w in m_grid.windows(2) {
                    monotone &= qplus(k, w[1]) >= qplus(k, w[0]);
                    monotone &= qminus(k, w[1]) <= qminus(k, w[0]);
                }
            }
            (alpha, monotone)
        }
    };

    let mut warnings = Vec::new();
    if let Some(l) = model.declared_lambda {
        if lambda_min < l {
            warnings.push(format!("declared λ = {l} exceeds scanned minimum {lambda_min}"));
        }
    }
    if let Some(a) = model.declared_alpha {
        if alpha_min > a {
            warnings.push(format!("declared α = {a} is below scanned Lipschitz constant {alpha_min}"));
        } else if alpha_min < a {
            warnings.push(format!("scanned Lipschitz constant {alpha_min} is smaller than declared α = {a}"));
        }
    }
    if !monotone_ok {
        warnings.push("q⁺ not non-decreasing or q⁻ not non-increasing in the mean on the grid".into());
    }
    Ok(AssumptionReport {
        lambda_min,
        alpha_min,
        monotone_ok,
        kappa: lambda_min - 2.0 * alpha_min,
        scan_range: k_max,
        warnings,
    })
}

/// Constants used by experiments. Declared values take precedence over scans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Constants {
    pub lambda: f64,
    pub alpha: f64,
    /// Contraction rate of the coupling distance: `λ − 2α` for mean-field
    /// models, `λ` for pairwise interaction.
    pub kappa: f64,
}

pub fn constants(model: &RateModel, k_max: u64, m_grid: &[f64]) -> Result<Constants> {
    let lambda = match model.declared_lambda {
        Some(l) => l,
        None => check_assumption_a(model, k_max)?,
    };
    Ok(match model.interaction() {
        Interaction::QuadraticPairwise { .. } => Constants { lambda, alpha: 0.0, kappa: lambda },
        _ => {
            let alpha = match model.declared_alpha {
                Some(a) => a,
                None => check_assumption_b(model, k_max, m_grid)?.alpha_min,
            };
            Constants { lambda, alpha, kappa: lambda - 2.0 * alpha }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexConditionReport {
    pub lambda: f64,
    pub alpha: f64,
    pub zeta: f64,
    pub feasible: bool,
    /// `(λ + α) − ζ`
    pub rate: f64,
}

/// Grid search for the constants of the alternative one-sided condition
/// `(q⁺−q⁻)(k₁,l₁) − (q⁺−q⁻)(k₂,l₂) ≤ −α(k₁−k₂) + ζ(l₁−l₂)` for `k₁ ≥ k₂`,
/// maximising `α − ζ` over `α, ζ > 0`.
pub fn check_convex_condition(model: &RateModel, k_max: u64, m_grid: &[f64]) -> Result<ConvexConditionReport> {
    check_grid(m_grid)?;
    let (qplus, qminus) = match model.interaction() {
        Interaction::MeanField { qplus, qminus } => (qplus.clone(), qminus.clone()),
        Interaction::None => (Arc::new(|_, _| 0.0) as InteractionRate, Arc::new(|_, _| 0.0) as InteractionRate),
        Interaction::QuadraticPairwise { .. } => {
            return Err(Error::Unsupported("condition is stated for mean-field rates".into()))
        }
    };
    let lambda = check_assumption_a(model, k_max)?;
    model.validate(k_max, m_grid)?;

    // Each pair (k₁ ≥ k₂) yields dq ≤ −α·dk + ζ·dl.
    let mut same_l = Vec::new();
    let mut rows = Vec::new();
    let pts: Vec<(u64, f64, f64)> = (0..=k_max)
        .flat_map(|k| m_grid.iter().map(move |&l| (k, l)))
        .map(|(k, l)| (k, l, qplus(k, l) - qminus(k, l)))
        .collect();
    for &(k1, l1, v1) in &pts {
        for &(k2, l2, v2) in &pts {
            if k1 < k2 || (k1 == k2 && l1 == l2) {
                continue;
            }
            let (dk, dl, dq) = ((k1 - k2) as f64, l1 - l2, v1 - v2);
            if dl == 0.0 {
                same_l.push((dk, dq));
            } else {
                rows.push((dk, dl, dq));
            }
        }
    }
    // α ≤ −dq/dk on same-mean pairs.
    let alpha_cap = same_l.iter().filter(|(dk, _)| *dk > 0.0).map(|(dk, dq)| -dq / dk).fold(f64::INFINITY, f64::min);
    let alpha_cap = if alpha_cap.is_finite() { alpha_cap } else { 0.0 };
    // For fixed α, the feasible ζ interval.
    let zeta_bounds = |alpha: f64| {
        let mut lo = 0.0f64;
        let mut hi = f64::INFINITY;
        for &(dk, dl, dq) in &rows {
            let r = (dq + alpha * dk) / dl;
            if dl > 0.0 {
                lo = lo.max(r);
            } else {
                hi = hi.min(r);
            }
        }
        (lo, hi)
    };
    // α − ζ_min(α) is concave: ternary search on (0, alpha_cap].
    let objective = |alpha: f64| {
        let (lo, hi) = zeta_bounds(alpha);
        if lo <= hi + 1e-12 {
            alpha - lo
        } else {
            f64::NEG_INFINITY
        }
    };
    let (mut a, mut b) = (0.0, alpha_cap.max(0.0));
    for _ in 0..200 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if objective(m1) < objective(m2) {
            a = m1;
        } else {
            b = m2;
        }
    }
    let alpha = if objective(alpha_cap) >= objective(0.5 * (a + b)) { alpha_cap } else { 0.5 * (a + b) };
    let (zeta, hi) = zeta_bounds(alpha);
    let feasible = alpha > 0.0 && zeta <= hi + 1e-12;
    Ok(ConvexConditionReport { lambda, alpha, zeta, feasible, rate: lambda + alpha - zeta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn half_grid(upper: u32) -> Vec<f64> {
        (0..=2 * upper).map(|j| j as f64 * 0.5).collect()
    }

    #[test]
    fn convexity_example_models() {
        let power = RateModel::power(1.0, 3.0, 1.0);
        assert_abs_diff_eq!(check_assumption_a(&power, 50).unwrap(), 2.0, epsilon = 1e-12);
        let mm = RateModel::mm_inf(1.0, 2.0);
        assert_abs_diff_eq!(check_assumption_a(&mm, 50).unwrap(), 2.0, epsilon = 1e-12);
        let c = 0.7;
        let shifted = RateModel::new("shift", move |_| c, move |k| c * k as f64 + c);
        assert_abs_diff_eq!(check_assumption_a(&shifted, 10).unwrap(), c, epsilon = 1e-12);
    }

    #[test]
    fn convexity_power_family_all_exponents() {
        for &a in &[1.0, 1.5, 2.0, 3.0] {
            for &n in &[1u64, 5, 40] {
                let m = RateModel::power(1.0, 4.0, a);
                assert_abs_diff_eq!(check_assumption_a(&m, n).unwrap(), 3.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn lipschitz_examples() {
        let grid = half_grid(20);
        let m = RateModel::mm_inf(1.0, 3.0).with_interaction(Interaction::attractive(1.0));
        let r = check_assumption_b(&m, 20, &grid).unwrap();
        assert_abs_diff_eq!(r.alpha_min, 1.0, epsilon = 1e-12);
        assert!(r.monotone_ok);

        let zero = RateModel::mm_inf(1.0, 3.0).with_interaction(Interaction::mean_field(|_, _| 0.0, |_, _| 0.0));
        assert_eq!(check_assumption_b(&zero, 20, &grid).unwrap().alpha_min, 0.0);

        let half = RateModel::mm_inf(1.0, 3.0).with_interaction(Interaction::mean_field(|_, l| l / 2.0, |_, _| 0.0));
        assert_abs_diff_eq!(check_assumption_b(&half, 20, &grid).unwrap().alpha_min, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn declared_alpha_discrepancy_is_reported() {
        let m = RateModel::power(1.0, 3.0, 1.0)
            .with_interaction(Interaction::attractive(1.0))
            .with_declared(Some(2.0), Some(2.0));
        let r = check_assumption_b(&m, 20, &half_grid(20)).unwrap();
        assert_abs_diff_eq!(r.alpha_min, 1.0, epsilon = 1e-12);
        assert_eq!(r.warnings.len(), 1);
        let c = constants(&m, 20, &half_grid(20)).unwrap();
        assert_eq!(c.alpha, 2.0);
        assert_eq!(c.kappa, -2.0);
    }

    #[test]
    fn lipschitz_rejects_pairwise_and_bad_grids() {
        let q = RateModel::linear(1.0, 3.0, 0.0).with_interaction(Interaction::QuadraticPairwise { a: 1.0 });
        assert!(matches!(check_assumption_b(&q, 5, &[0.0, 1.0]), Err(Error::Unsupported(_))));
        let m = RateModel::mm_inf(1.0, 3.0).with_interaction(Interaction::attractive(1.0));
        assert!(check_assumption_b(&m, 5, &[]).is_err());
        assert!(check_assumption_b(&m, 5, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn validation_rejects_bad_rates() {
        let neg = RateModel::new("neg", |k| 1.0 - k as f64, |k| k as f64);
        assert!(check_assumption_a(&neg, 5).is_err());
        let stuck = RateModel::new("stuck", |_| 1.0, |k| if k == 3 { 0.0 } else { k as f64 });
        assert!(check_assumption_a(&stuck, 5).is_err());
        let leak = RateModel::mm_inf(1.0, 1.0).with_interaction(Interaction::mean_field(|_, _| 0.0, |_, _| 1.0));
        assert!(leak.validate(3, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn zero_birth_at_origin_is_allowed_but_reducible() {
        let m = RateModel::power(1.0, 3.0, 1.0);
        assert!(m.validate(10, &[]).is_ok());
        assert!(!m.is_irreducible_on(10));
        assert!(RateModel::mm_inf(1.0, 3.0).is_irreducible_on(10));
    }

    #[test]
    fn effective_rate_examples() {
        let base = || RateModel::new("unit", |_| 1.0, |k| k as f64);
        let s = ParticleState::new(vec![0, 2]).unwrap();
        assert_eq!(effective_rates(&base(), &s, 0), (1.0, 0.0));
        let mf = base().with_interaction(Interaction::attractive(1.0));
        assert_eq!(effective_rates(&mf, &s, 0), (2.0, 0.0));
        assert_eq!(effective_rates(&mf, &s, 1), (1.0, 3.0));
        let quad = base().with_interaction(Interaction::QuadraticPairwise { a: 1.0 });
        assert_eq!(effective_rates(&quad, &s, 1), (1.0, 3.0));
        assert_eq!(effective_rates(&quad, &s, 0), (2.0, 0.0));
    }

    #[test]
    fn pairwise_profile_matches_naive_sums() {
        let xs = [3u64, 0, 7, 3, 1, 9, 3];
        let p = PairwiseProfile::new(&xs);
        for x in 0..12u64 {
            let above: u64 = xs.iter().map(|&v| v.saturating_sub(x)).sum();
            let below: u64 = xs.iter().map(|&v| x.saturating_sub(v)).sum();
            assert_eq!(p.excess_above(x), above as f64);
            assert_eq!(p.excess_below(x), below as f64);
        }
    }

    #[test]
    fn pairwise_rates_vanish_at_equal_configuration() {
        let m = RateModel::linear(1.0, 3.0, 0.0).with_interaction(Interaction::QuadraticPairwise { a: 2.0 });
        let field = m.field(&[4, 4, 4]);
        assert_eq!(m.interaction_rates(4, &field), (0.0, 0.0));
    }

    #[test]
    fn tabulated_tail_extension() {
        let m = RateModel::tabulated(vec![1.0, 2.0], Tail::Constant, vec![0.0, 1.0, 2.5], Tail::Linear { slope: 2.0 })
            .unwrap();
        assert_eq!(m.birth(10), 2.0);
        assert_eq!(m.death(2), 2.5);
        assert_eq!(m.death(5), 8.5);
        assert_abs_diff_eq!(check_assumption_a(&m, 10).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn convex_condition_for_attractive_interaction() {
        // (q⁺−q⁻)(k,l) = l − k forces ζ = 1 and allows α up to 1.
        let m = RateModel::power(1.0, 3.0, 1.0).with_interaction(Interaction::attractive(1.0));
        let r = check_convex_condition(&m, 10, &half_grid(10)).unwrap();
        assert!(r.feasible);
        assert_abs_diff_eq!(r.alpha, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(r.zeta, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(r.rate, 2.0, epsilon = 1e-6);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn lipschitz_scan_matches_ordered_pair_ratio(slope in 0.0f64..3.0, tilt in 0.0f64..2.0) {
                let m = RateModel::mm_inf(1.0, 3.0).with_interaction(Interaction::mean_field(
                    move |k, l| slope * l + tilt * (5.0 - k as f64).max(0.0),
                    move |k, l| (k as f64 - l).max(0.0),
                ));
                let grid: Vec<f64> = (0..12).map(|j| j as f64 * 0.75).collect();
                let scanned = check_assumption_b(&m, 8, &grid).unwrap().alpha_min;
                let pts: Vec<(f64, f64, f64)> = (0..=8u64)
                    .flat_map(|k| grid.iter().map(move |&l| (k, l)))
                    .map(|(k, l)| {
                        let (p, q) = m.interaction_rates(k, &Field::Mean(l));
                        (k as f64, l, p - q)
                    })
                    .collect();
                let mut forward = 0.0f64;
                let mut backward = 0.0f64;
                for a in &pts {
                    for b in &pts {
                        let d = (a.0 - b.0).abs() + (a.1 - b.1).abs();
                        if d > 0.0 {
                            forward = forward.max((a.2 - b.2).abs() / d);
                            backward = backward.max((b.2 - a.2).abs() / d);
                        }
                    }
                }
                prop_assert_eq!(forward, backward);
                prop_assert!((forward - scanned).abs() < 1e-12);
            }
        }
    }
}
