//! Integer apportionment by largest fractional remainder.

/// Continuous quotas summing to `total` in proportion to `weights`, with any
/// quota that would exceed its cap pinned at the cap and the overflow spread
/// over the rest. Entries with zero capacity get zero.
pub(crate) fn capped_quotas(weights: &[f64], total: f64, caps: &[usize]) -> Vec<f64> {
    let mut q = vec![0.0; weights.len()];
    let mut active: Vec<usize> = (0..weights.len()).filter(|&i| caps[i] > 0).collect();
    let mut remaining = total;
    while !active.is_empty() && remaining > 0.0 {
        let mut w_sum: f64 = active.iter().map(|&i| weights[i]).sum();
        let use_caps = w_sum <= 0.0;
        if use_caps {
            w_sum = active.iter().map(|&i| caps[i] as f64).sum();
        }
        let weight = |i: usize| if use_caps { caps[i] as f64 } else { weights[i] };
        let pinned: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&i| remaining * weight(i) / w_sum >= caps[i] as f64)
            .collect();
        if pinned.is_empty() {
            for &i in &active {
                q[i] = remaining * weight(i) / w_sum;
            }
            break;
        }
        for &i in &pinned {
            q[i] = caps[i] as f64;
            remaining -= caps[i] as f64;
        }
        active.retain(|i| !pinned.contains(i));
    }
    q
}

/// Rounds `quotas` to integers: floor (raised to `mins`, capped at `caps`),
/// then the shortfall goes one unit at a time to the largest fractional
/// parts (lower index on ties). When `exact`, any surplus created by the
/// minimums is taken back from the smallest fractional parts above their
/// minimum. The result sums to `min(total, sum(caps))` unless minimums force
/// a surplus and `exact` is false.
pub(crate) fn round_quotas(quotas: &[f64], total: usize, caps: &[usize], mins: &[usize], exact: bool) -> Vec<usize> {
    let len = quotas.len();
    let target = total.min(caps.iter().sum());
    let mut out: Vec<usize> = (0..len)
        .map(|i| {
            let f = (quotas[i] + 1e-9).floor().max(0.0) as usize;
            f.max(mins[i]).min(caps[i])
        })
        .collect();
    let frac: Vec<f64> = quotas.iter().map(|q| q - (q + 1e-9).floor()).collect();
    let mut up: Vec<usize> = (0..len).collect();
    up.sort_by(|&a, &b| frac[b].total_cmp(&frac[a]).then(a.cmp(&b)));
    let mut sum: usize = out.iter().sum();
    while sum < target {
        let before = sum;
        for &i in &up {
            if sum == target {
                break;
            }
            if out[i] < caps[i] {
                out[i] += 1;
                sum += 1;
            }
        }
        if sum == before {
            break;
        }
    }
    if exact {
        let mut down = up.clone();
        down.reverse();
        while sum > target {
            let before = sum;
            for &i in &down {
                if sum == target {
                    break;
                }
                if out[i] > mins[i] {
                    out[i] -= 1;
                    sum -= 1;
                }
            }
            if sum == before {
                break;
            }
        }
    }
    out
}

/// Splits `total` across entries in proportion to `weights` with caps.
pub(crate) fn apportion(weights: &[f64], total: usize, caps: &[usize]) -> Vec<usize> {
    let target = total.min(caps.iter().sum());
    let q = capped_quotas(weights, target as f64, caps);
    round_quotas(&q, target, caps, &vec![0; weights.len()], true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proportional_split() {
        assert_eq!(apportion(&[600.0, 400.0], 100, &[600, 400]), vec![60, 40]);
        assert_eq!(apportion(&[1.0, 1.0, 1.0], 10, &[10, 10, 10]), vec![4, 3, 3]);
    }

    #[test]
    fn caps_spill_over() {
        assert_eq!(apportion(&[10.0, 1.0], 8, &[2, 20]), vec![2, 6]);
        assert_eq!(apportion(&[1.0, 1.0], 50, &[3, 4]), vec![3, 4]);
    }

    #[test]
    fn zero_weights_fall_back_to_capacity() {
        assert_eq!(apportion(&[0.0, 0.0], 4, &[1, 3]), vec![1, 3]);
    }

    #[test]
    fn exact_rounding_removes_forced_surplus() {
        let q = [0.2, 0.2, 2.6];
        assert_eq!(round_quotas(&q, 3, &[5, 5, 5], &[1, 1, 0], true), vec![1, 1, 1]);
        assert_eq!(round_quotas(&q, 3, &[5, 5, 5], &[1, 1, 0], false), vec![1, 1, 2]);
    }
}
