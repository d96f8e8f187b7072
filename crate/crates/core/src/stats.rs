//! Small statistical helpers shared by estimators and tests.

/// Costs centered by the running mean of the costs seen strictly before each step:
/// c_t = g_t − η̂_t with η̂_t = (g_0 + … + g_{t−1}) / t and η̂_0 = 0.
pub fn centered_costs(costs: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut sum = 0.0;
    costs
        .into_iter()
        .enumerate()
        .map(|(t, g)| {
            let eta = if t == 0 { 0.0 } else { sum / t as f64 };
            sum += g;
            g - eta
        })
        .collect()
}

/// Mean and batch-means standard error of a correlated series.
///
/// The series is cut into `n_batches` equal batches (the remainder is dropped).
pub fn batch_means(values: &[f64], n_batches: usize) -> (f64, f64) {
    let b = values.len() / n_batches;
    assert!(b > 0, "need at least one value per batch");
    let means: Vec<f64> = values
        .chunks_exact(b)
        .take(n_batches)
        .map(|c| c.iter().sum::<f64>() / b as f64)
        .collect();
    let (m, sd) = mean_std(&means);
    (m, sd / (n_batches as f64).sqrt())
}

/// Sample mean and sample standard deviation (n − 1 denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (m, 0.0);
    }
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}
