//! Largest-remainder (Hamilton) apportionment.

/// Integer counts summing to `total`, proportional to `weights`.
///
/// Each entry receives the floor of its quota; leftover units go to the
/// largest fractional remainders, ties broken by lower index. All-zero weights
/// yield all-zero counts.
pub fn largest_remainder(weights: &[f64], total: u64) -> Vec<u64> {
    let sum: f64 = weights.iter().filter(|w| w.is_finite() && **w > 0.0).sum();
    if weights.is_empty() || !(sum > 0.0) {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights
        .iter()
        .map(|&w| if w.is_finite() && w > 0.0 { w / sum * total as f64 } else { 0.0 })
        .collect();
    let mut counts: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    // floating error can push the floors past the total; trim the smallest remainders
    if assigned > total {
        let mut order: Vec<usize> = (0..counts.len()).filter(|&i| counts[i] > 0).collect();
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - counts[a] as f64;
            let rb = quotas[b] - counts[b] as f64;
            ra.total_cmp(&rb).then(b.cmp(&a))
        });
        for &i in order.iter().take((assigned - total) as usize) {
            counts[i] -= 1;
        }
        return counts;
    }
    let mut order: Vec<usize> = (0..counts.len()).filter(|&i| quotas[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - counts[a] as f64;
        let rb = quotas[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = total - assigned;
    let mut k = 0;
    while left > 0 {
        counts[order[k % order.len()]] += 1;
        left -= 1;
        k += 1;
    }
    counts
}
