//! Proportional splitting with exact-total correction, and largest-remainder rounding.

/// Splits `total` in proportion to `weights`. Returns `None` when the weights sum
/// to zero. The floating-point residual is folded into the largest share (lowest
/// index on ties) so the parts sum back to `total`.
pub fn proportional(total: f64, weights: &[f64]) -> Option<Vec<f64>> {
    let sum: f64 = weights.iter().sum();
    if !(sum > 0.0) {
        return None;
    }
    let mut parts: Vec<f64> = weights.iter().map(|w| total * (w / sum)).collect();
    fold_residual(&mut parts, total);
    Some(parts)
}

/// Splits `total` into `n` equal parts, residual folded into the first.
pub fn even(total: f64, n: usize) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let mut parts = vec![total / n as f64; n];
    fold_residual(&mut parts, total);
    parts
}

/// Adds `total - sum(parts)` to the largest part.
pub fn fold_residual(parts: &mut [f64], total: f64) {
    if parts.is_empty() {
        return;
    }
    let residual = total - parts.iter().sum::<f64>();
    if residual == 0.0 {
        return;
    }
    let mut best = 0;
    for (i, p) in parts.iter().enumerate() {
        if *p > parts[best] {
            best = i;
        }
    }
    parts[best] = (parts[best] + residual).max(0.0);
}

/// Rounds nonnegative `values` to integers whose sum is `round(sum(values))`.
///
/// Every value is floored, then the units still missing go to the largest
/// fractional remainders; ties go to the lower index.
pub fn largest_remainder(values: &[f64]) -> Vec<u64> {
    let target = values.iter().sum::<f64>().round() as u64;
    let mut floors: Vec<u64> = values.iter().map(|v| v.max(0.0).floor() as u64).collect();
    let assigned: u64 = floors.iter().sum();
    let mut missing = target.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = values[a] - values[a].floor();
        let rb = values[b] - values[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for idx in order.into_iter().cycle().take(values.len() * 2) {
        if missing == 0 {
            break;
        }
        floors[idx] += 1;
        missing -= 1;
    }
    floors
}
