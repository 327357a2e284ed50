//! Truncated laws on ℕ, empirical measures and the Wasserstein-1 distance.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TAIL_TOL: f64 = 1e-10;

/// Probability vector on `{0, …, K}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistN {
    mass: Vec<f64>,
    tail_tol: f64,
}

impl DistN {
    /// Validates and renormalizes `mass`. The total may differ from one by at
    /// most `tail_tol`; anything larger is treated as lost tail mass and rejected.
    pub fn new(mass: Vec<f64>, tail_tol: f64) -> Result<Self> {
        if mass.is_empty() {
            return Err(Error::InvalidDistribution("empty mass vector".into()));
        }
        if !(tail_tol > 0.0) {
            return Err(Error::InvalidDistribution(format!("tail_tol = {tail_tol} must be positive")));
        }
        if let Some((k, &m)) = mass.iter().enumerate().find(|(_, m)| !m.is_finite() || **m < 0.0) {
            return Err(Error::InvalidDistribution(format!("mass[{k}] = {m}")));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > tail_tol {
            return Err(Error::InvalidDistribution(format!(
                "total mass {total} differs from 1 by more than {tail_tol:e}"
            )));
        }
        let mass = mass.into_iter().map(|m| m / total).collect();
        Ok(Self { mass, tail_tol })
    }

    pub fn delta(k: usize) -> Self {
        let mut mass = vec![0.0; k + 1];
        mass[k] = 1.0;
        Self { mass, tail_tol: DEFAULT_TAIL_TOL }
    }

    /// Uniform on `{lo, …, hi}`.
    pub fn uniform(lo: usize, hi: usize) -> Result<Self> {
        if lo > hi {
            return Err(Error::InvalidDistribution(format!("empty support {lo}..={hi}")));
        }
        let w = 1.0 / (hi - lo + 1) as f64;
        let mass = (0..=hi).map(|k| if k >= lo { w } else { 0.0 }).collect();
        Self::new(mass, DEFAULT_TAIL_TOL)
    }

    /// Poisson law truncated where the remaining tail drops below `tail_tol`.
    pub fn poisson(mean: f64, tail_tol: f64) -> Result<Self> {
        if !(mean >= 0.0) || !mean.is_finite() {
            return Err(Error::InvalidDistribution(format!("Poisson mean {mean}")));
        }
        let mut mass = vec![(-mean).exp()];
        // Past the mode the tail beyond k is at most p_k·r/(1−r) with r = mean/(k+1).
        loop {
            let k = mass.len() - 1;
            let r = mean / (k + 1) as f64;
            if r < 1.0 && mass[k] * r / (1.0 - r) <= 0.01 * tail_tol {
                break;
            }
            if k > 100_000 {
                return Err(Error::InvalidDistribution("Poisson truncation did not terminate".into()));
            }
            mass.push(mass[k] * r);
        }
        Self::new(mass, tail_tol)
    }

    /// Geometric law `P(k) ∝ r^k` truncated at `k_max`.
    pub fn geometric(ratio: f64, k_max: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&ratio) {
            return Err(Error::InvalidDistribution(format!("geometric ratio {ratio}")));
        }
        let raw: Vec<f64> = (0..=k_max).map(|k| ratio.powi(k as i32)).collect();
        let total: f64 = raw.iter().sum();
        Self::new(raw.into_iter().map(|m| m / total).collect(), DEFAULT_TAIL_TOL)
    }

    pub fn with_tail_tol(mut self, tail_tol: f64) -> Self {
        self.tail_tol = tail_tol;
        self
    }

    /// Truncation level `K`.
    pub fn k(&self) -> usize {
        self.mass.len() - 1
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn tail_tol(&self) -> f64 {
        self.tail_tol
    }

    pub fn get(&self, k: usize) -> f64 {
        self.mass.get(k).copied().unwrap_or(0.0)
    }

    /// Zero-padded copy on `{0, …, k}`; never truncates.
    pub fn padded(&self, k: usize) -> Self {
        let mut mass = self.mass.clone();
        if mass.len() < k + 1 {
            mass.resize(k + 1, 0.0);
        }
        Self { mass, tail_tol: self.tail_tol }
    }

    /// Copy truncated to `{0, …, k}`, renormalized if the dropped mass is
    /// within `tail_tol`.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k >= self.k() {
            return Ok(self.padded(k));
        }
        let lost: f64 = self.mass[k + 1..].iter().sum();
        if lost > self.tail_tol {
            return Err(Error::TailOverflow { mass: lost, tol: self.tail_tol });
        }
        Self::new(self.mass[..=k].to_vec(), self.tail_tol)
    }

    /// Largest index with positive mass.
    pub fn support_max(&self) -> usize {
        self.mass.iter().rposition(|&m| m > 0.0).unwrap_or(0)
    }

    pub fn first_moment(&self) -> f64 {
        self.mass.iter().enumerate().map(|(k, m)| k as f64 * m).sum()
    }

    /// `Σ e^{δk} u(k)`
    pub fn exp_moment(&self, delta: f64) -> f64 {
        self.mass.iter().enumerate().map(|(k, m)| (delta * k as f64).exp() * m).sum()
    }

    /// `Σ φ(k) u(k)`
    pub fn lipschitz_integral(&self, phi: impl Fn(u64) -> f64) -> f64 {
        self.mass.iter().enumerate().map(|(k, m)| phi(k as u64) * m).sum()
    }

    pub fn cdf(&self) -> Vec<f64> {
        self.mass
            .iter()
            .scan(0.0, |acc, m| {
                *acc += m;
                Some(*acc)
            })
            .collect()
    }

    pub fn tv_distance(&self, other: &DistN) -> f64 {
        let k = self.k().max(other.k());
        0.5 * (0..=k).map(|j| (self.get(j) - other.get(j)).abs()).sum::<f64>()
    }

    pub fn sampler(&self) -> DistSampler {
        DistSampler { cdf: self.cdf() }
    }

    pub fn to_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "mass"]).map_err(csv_err)?;
        for (k, m) in self.mass.iter().enumerate() {
            w.write_record([k.to_string(), format!("{m:e}")]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `k,mass` rows; missing indices are zero.
    pub fn from_csv<R: Read>(input: R, tail_tol: f64) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            k: usize,
            mass: f64,
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(input);
        let mut mass = Vec::new();
        for row in rdr.deserialize() {
            let Row { k, mass: m } = row.map_err(csv_err)?;
            if mass.len() <= k {
                mass.resize(k + 1, 0.0);
            }
            mass[k] += m;
        }
        Self::new(mass, tail_tol)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.mass).expect("f64 vectors always serialize")
    }

    pub fn from_json(s: &str, tail_tol: f64) -> Result<Self> {
        let mass: Vec<f64> = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        Self::new(mass, tail_tol)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Inverse-CDF sampler.
#[derive(Debug, Clone)]
pub struct DistSampler {
    cdf: Vec<f64>,
}

impl DistSampler {
    /// Smallest `k` with `F(k) > u`.
    pub fn quantile(&self, u: f64) -> u64 {
        let idx = self.cdf.partition_point(|&c| c <= u);
        // Round-off can leave F(K) marginally below one.
        let last_positive = self.cdf.len() - 1;
        idx.min(last_positive) as u64
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        self.quantile(rng.random())
    }
}

/// Exact W1 under `|x − y|` cost: `Σ_k |F_u(k) − F_v(k)|`.
pub fn w1_dist(u: &DistN, v: &DistN) -> f64 {
    let k = u.k().max(v.k());
    let (mut fu, mut fv, mut acc) = (0.0, 0.0, 0.0);
    for j in 0..k {
        fu += u.get(j);
        fv += v.get(j);
        acc += (fu - fv).abs();
    }
    acc
}

pub const ORACLE_MAX_K: usize = 64;

/// W1 by explicit construction of the monotone (north-west corner) transport
/// plan. Independent of [`w1_dist`]; used to cross-check it.
pub fn w1_oracle(u: &DistN, v: &DistN) -> Result<f64> {
    let k = u.k().max(v.k());
    if k > ORACLE_MAX_K {
        return Err(Error::InvalidArgument(format!("oracle limited to K ≤ {ORACLE_MAX_K}, got {k}")));
    }
    let mut a: Vec<f64> = (0..=k).map(|j| u.get(j)).collect();
    let mut b: Vec<f64> = (0..=k).map(|j| v.get(j)).collect();
    let (mut i, mut j, mut cost) = (0usize, 0usize, 0.0);
    while i <= k && j <= k {
        if a[i] <= 0.0 {
            i += 1;
            continue;
        }
        if b[j] <= 0.0 {
            j += 1;
            continue;
        }
        let moved = a[i].min(b[j]);
        cost += moved * (i as f64 - j as f64).abs();
        a[i] -= moved;
        b[j] -= moved;
        if a[i] <= 1e-300 {
            a[i] = 0.0;
        }
        if b[j] <= 1e-300 {
            b[j] = 0.0;
        }
    }
    Ok(cost)
}

/// Counts of particle positions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    counts: BTreeMap<u64, u64>,
    total: u64,
}

impl EmpiricalMeasure {
    pub fn from_values(values: &[u64]) -> Self {
        let mut counts = BTreeMap::new();
        for &v in values {
            *counts.entry(v).or_insert(0) += 1;
        }
        Self { counts, total: values.len() as u64 }
    }

    pub fn from_counts(counts: BTreeMap<u64, u64>) -> Self {
        let total = counts.values().sum();
        Self { counts, total }
    }

    pub fn add(&mut self, values: &[u64]) {
        for &v in values {
            *self.counts.entry(v).or_insert(0) += 1;
        }
        self.total += values.len() as u64;
    }

    pub fn counts(&self) -> &BTreeMap<u64, u64> {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn max_value(&self) -> Option<u64> {
        self.counts.keys().next_back().copied()
    }

    pub fn mean(&self) -> f64 {
        let s: f64 = self.counts.iter().map(|(&k, &c)| k as f64 * c as f64).sum();
        s / self.total as f64
    }

    /// `mass[k] = counts[k] / total` on `{0, …, k}`.
    pub fn to_dist(&self, k: usize) -> Result<DistN> {
        if self.total == 0 {
            return Err(Error::InvalidDistribution("empty empirical measure".into()));
        }
        if let Some(max) = self.max_value() {
            if max as usize > k {
                return Err(Error::Truncation { state: max, k });
            }
        }
        let mut mass = vec![0.0; k + 1];
        for (&v, &c) in &self.counts {
            mass[v as usize] = c as f64 / self.total as f64;
        }
        DistN::new(mass, DEFAULT_TAIL_TOL)
    }
}

/// Free-function form of [`EmpiricalMeasure::to_dist`].
pub fn empirical_to_dist(e: &EmpiricalMeasure, k: usize) -> Result<DistN> {
    e.to_dist(k)
}

/// W1 between an empirical measure and a law, padding whichever is shorter.
pub fn w1_empirical(e: &EmpiricalMeasure, u: &DistN) -> Result<f64> {
    let k = u.k().max(e.max_value().unwrap_or(0) as usize);
    Ok(w1_dist(&e.to_dist(k)?, u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_dist<R: Rng>(rng: &mut R, k: usize) -> DistN {
        let raw: Vec<f64> =
            (0..=k).map(|_| if rng.random::<f64>() < 0.3 { 0.0 } else { rng.random::<f64>() }).collect();
        let total: f64 = raw.iter().sum::<f64>() + 1e-300;
        if total < 1e-12 {
            return DistN::delta(0);
        }
        DistN::new(raw.into_iter().map(|m| m / total).collect(), DEFAULT_TAIL_TOL).unwrap()
    }

    #[test]
    fn first_moment_examples() {
        assert_eq!(DistN::delta(0).first_moment(), 0.0);
        assert_eq!(DistN::delta(5).first_moment(), 5.0);
        assert_abs_diff_eq!(DistN::uniform(0, 2).unwrap().first_moment(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn w1_examples() {
        let u = DistN::uniform(0, 2).unwrap();
        assert_eq!(w1_dist(&DistN::delta(0), &DistN::delta(0)), 0.0);
        assert_eq!(w1_dist(&DistN::delta(0), &DistN::delta(3)), 3.0);
        assert_abs_diff_eq!(w1_dist(&u, &DistN::delta(1)), 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(w1_oracle(&DistN::delta(0), &DistN::delta(3)).unwrap(), 3.0);
        assert_abs_diff_eq!(w1_oracle(&u, &DistN::delta(1)).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        let g = DistN::geometric(0.5, 16).unwrap();
        assert_eq!(w1_oracle(&g, &g).unwrap(), 0.0);
    }

    #[test]
    fn oracle_rejects_large_supports() {
        assert!(w1_oracle(&DistN::delta(65), &DistN::delta(0)).is_err());
        assert!(w1_oracle(&DistN::delta(64), &DistN::delta(0)).is_ok());
    }

    #[test]
    fn empirical_examples() {
        let e = EmpiricalMeasure::from_counts([(0, 1), (2, 1)].into());
        assert_eq!(e.to_dist(4).unwrap().mass(), &[0.5, 0.0, 0.5, 0.0, 0.0]);
        let e = EmpiricalMeasure::from_counts([(1, 3)].into());
        assert_eq!(e.to_dist(1).unwrap(), DistN::delta(1));
        let e = EmpiricalMeasure::from_values(&[0, 1, 3, 0]);
        assert_eq!(empirical_to_dist(&e, 3).unwrap().mass(), &[0.5, 0.25, 0.0, 0.25]);
        assert!(matches!(e.to_dist(2), Err(Error::Truncation { state: 3, k: 2 })));
    }

    #[test]
    fn lipschitz_integral_examples() {
        let u = DistN::uniform(0, 3).unwrap();
        assert_abs_diff_eq!(u.lipschitz_integral(|_| 1.0), 1.0, epsilon = 1e-15);
        assert_eq!(DistN::delta(2).lipschitz_integral(|k| k as f64), 2.0);
        assert_abs_diff_eq!(u.lipschitz_integral(|k| k.min(2) as f64), 1.25, epsilon = 1e-15);
    }

    #[test]
    fn construction_enforces_tail_policy() {
        assert!(DistN::new(vec![0.5, 0.5 - 1e-11], DEFAULT_TAIL_TOL).is_ok());
        assert!(DistN::new(vec![0.5, 0.49], DEFAULT_TAIL_TOL).is_err());
        assert!(DistN::new(vec![1.5, -0.5], DEFAULT_TAIL_TOL).is_err());
        assert!(DistN::new(vec![], DEFAULT_TAIL_TOL).is_err());
        let p = DistN::poisson(3.0, 1e-10).unwrap();
        assert!(p.truncated(5).is_err());
        assert_abs_diff_eq!(p.first_moment(), 3.0, epsilon = 1e-8);
    }

    #[test]
    fn csv_and_json_forms() {
        let u = DistN::uniform(1, 3).unwrap();
        let mut buf = Vec::new();
        u.to_csv(&mut buf).unwrap();
        let back = DistN::from_csv(buf.as_slice(), DEFAULT_TAIL_TOL).unwrap();
        assert!(back.tv_distance(&u) < 1e-15);
        let j = DistN::from_json(&u.to_json(), DEFAULT_TAIL_TOL).unwrap();
        assert_eq!(j, u);
        let sparse = DistN::from_csv("k,mass\n3,1.0\n".as_bytes(), DEFAULT_TAIL_TOL).unwrap();
        assert_eq!(sparse, DistN::delta(3));
    }

    #[test]
    fn sampler_quantiles() {
        let u = DistN::new(vec![0.25, 0.0, 0.75], DEFAULT_TAIL_TOL).unwrap();
        let s = u.sampler();
        assert_eq!(s.quantile(0.0), 0);
        assert_eq!(s.quantile(0.2499), 0);
        assert_eq!(s.quantile(0.25), 2);
        assert_eq!(s.quantile(0.999_999_999), 2);
    }

    #[test]
    fn oracle_matches_cdf_formula_on_random_pairs() {
        let mut r = rng::stream(11, rng::tag("w1-pairs"), 0);
        for _ in 0..1000 {
            let (ka, kb) = (r.random_range(0..=16), r.random_range(0..=16));
            let (u, v) = (random_dist(&mut r, ka), random_dist(&mut r, kb));
            let fast = w1_dist(&u, &v);
            let slow = w1_oracle(&u, &v).unwrap();
            assert!((fast - slow).abs() <= 1e-9, "{fast} vs {slow}");
        }
    }

    proptest! {
        #[test]
        fn w1_is_a_metric(seed in any::<u64>(), ka in 0usize..12, kb in 0usize..12, kc in 0usize..12) {
            let mut r = rng::stream(seed, 0, 0);
            let (u, v, w) = (random_dist(&mut r, ka), random_dist(&mut r, kb), random_dist(&mut r, kc));
            let uv = w1_dist(&u, &v);
            prop_assert!((uv - w1_dist(&v, &u)).abs() < 1e-12);
            prop_assert!(w1_dist(&u, &u) < 1e-12);
            prop_assert!(uv <= w1_dist(&u, &w) + w1_dist(&w, &v) + 1e-12);
            prop_assert!(uv + 1e-12 >= (u.first_moment() - v.first_moment()).abs());
        }

        #[test]
        fn unit_right_shift_costs_one(seed in any::<u64>(), k in 0usize..20) {
            let mut r = rng::stream(seed, 1, 0);
            let u = random_dist(&mut r, k);
            let mut shifted = vec![0.0];
            shifted.extend_from_slice(u.mass());
            let v = DistN::new(shifted, DEFAULT_TAIL_TOL).unwrap();
            prop_assert!((w1_dist(&u, &v) - 1.0).abs() < 1e-12);
        }
    }
}
