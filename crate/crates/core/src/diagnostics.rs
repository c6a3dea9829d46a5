//! Chain diagnostics.

/// Maximum autocorrelation lag used by [`inefficiency_factor`].
pub const MAX_LAG: usize = 100;

/// `1 + 2 Σ ρ_l` over lags `1..=min(100, N-1)`, stopping at the first
/// non-positive autocorrelation. A constant or one-element chain gives 1.
pub fn inefficiency_factor(chain: &[f64]) -> f64 {
    let n = chain.len();
    if n < 2 {
        return 1.0;
    }
    let mean = chain.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = chain.iter().map(|x| x - mean).collect();
    let c0 = dev.iter().map(|d| d * d).sum::<f64>() / n as f64;
    if !(c0 > 0.0) {
        return 1.0;
    }
    let mut total = 1.0;
    for lag in 1..=MAX_LAG.min(n - 1) {
        let c = dev[lag..].iter().zip(&dev).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        let rho = c / c0;
        if rho <= 0.0 {
            break;
        }
        total += 2.0 * rho;
    }
    total
}
