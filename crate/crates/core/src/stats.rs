//! Small statistics helpers shared by the experiments.

use serde::{Deserialize, Serialize};

/// Two-sided normal quantile for the 95% half-widths reported everywhere.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub half_width: f64,
    pub n: usize,
}

/// Sample mean with standard error; summation in slice order.
pub fn mean_estimate(xs: &[f64]) -> MeanEstimate {
    let n = xs.len();
    if n == 0 {
        return MeanEstimate { mean: f64::NAN, std_err: f64::NAN, half_width: f64::NAN, n };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    let std_err = (var / n as f64).sqrt();
    MeanEstimate { mean, std_err, half_width: Z95 * std_err, n }
}

/// Half-width of a 95% normal interval for a binomial proportion.
pub fn binomial_half_width(p: f64, n: usize) -> f64 {
    Z95 * (p * (1.0 - p) / n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit { slope, intercept, r2 })
}
