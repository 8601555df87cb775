//! Small numerical helpers used across modules.

use statrs::function::gamma::ln_gamma;

/// log(sum(exp(values))) computed against the running maximum.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// log of the binomial coefficient C(n, k).
pub fn ln_binomial(n: usize, k: usize) -> f64 {
    assert!(k <= n, "C({n}, {k}) undefined");
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// log of the multivariate gamma function Gamma_d(a).
pub fn ln_multivariate_gamma(d: usize, a: f64) -> f64 {
    let mut out = 0.25 * (d * (d - 1)) as f64 * std::f64::consts::PI.ln();
    for i in 1..=d {
        out += ln_gamma(a + 0.5 * (1.0 - i as f64));
    }
    out
}

/// Mean and (unbiased) standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Effective sample size from the lag autocorrelations, truncated at the
/// first lag below 0.05 (and at n/2).
pub fn effective_sample_size(chain: &[f64]) -> f64 {
    let n = chain.len();
    if n < 4 {
        return n as f64;
    }
    let mean = chain.iter().sum::<f64>() / n as f64;
    let var = chain.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    if var <= 0.0 {
        return n as f64;
    }
    let mut sum_rho = 0.0;
    for lag in 1..=(n / 2) {
        let cov = (0..n - lag)
            .map(|i| (chain[i] - mean) * (chain[i + lag] - mean))
            .sum::<f64>()
            / (n - lag) as f64;
        let rho = cov / var;
        if rho < 0.05 {
            break;
        }
        sum_rho += rho;
    }
    n as f64 / (1.0 + 2.0 * sum_rho)
}
