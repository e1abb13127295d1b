//! Euclidean projections used by the projected-gradient solvers.

/// Projection onto the probability simplex `{x >= 0, sum x = 1}` (sort-and-threshold).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cumsum += uk;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    let mut x: Vec<f64> = v.iter().map(|&vi| (vi - theta).max(0.0)).collect();
    renormalize(&mut x);
    x
}

/// Projection onto `{lower <= x <= upper, sum x = 1}`.
///
/// `sum clamp(v - s, lower, upper)` is piecewise linear and nonincreasing in
/// the shift `s` with breakpoints at `v - lower` and `v - upper`; the shift is
/// found by binary search over the sorted breakpoints and one linear solve.
/// The caller guarantees `sum lower <= 1 <= sum upper`.
pub fn project_box_simplex(v: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    let clip = |shift: f64| -> Vec<f64> {
        v.iter()
            .zip(lower.iter().zip(upper))
            .map(|(&vi, (&lo, &hi))| (vi - shift).clamp(lo, hi))
            .collect()
    };
    let total_at = |shift: f64| -> f64 {
        v.iter()
            .zip(lower.iter().zip(upper))
            .map(|(&vi, (&lo, &hi))| (vi - shift).clamp(lo, hi))
            .sum()
    };
    let total = |x: &[f64]| x.iter().sum::<f64>();
    let mut bps: Vec<f64> = v
        .iter()
        .zip(lower)
        .map(|(a, l)| a - l)
        .chain(v.iter().zip(upper).map(|(a, h)| a - h))
        .collect();
    bps.sort_by(f64::total_cmp);
    bps.dedup();
    // Largest breakpoint index whose total is still >= 1.
    let (mut lo, mut hi) = (0usize, bps.len() - 1);
    if total_at(bps[0]) < 1.0 {
        hi = 0;
    }
    while lo < hi {
        let mid = (lo + hi + 1) / 2;
        if total_at(bps[mid]) >= 1.0 {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let a = bps[lo];
    let ta = total_at(a);
    let shift = match bps.get(lo + 1) {
        Some(&b) => {
            let tb = total_at(b);
            if ta > tb {
                a + (ta - 1.0) * (b - a) / (ta - tb)
            } else {
                a
            }
        }
        None => a,
    };
    let mut x = clip(shift);
    // Push the residual onto coordinates with slack so the budget holds to rounding.
    let mut residual = 1.0 - total(&x);
    for _ in 0..3 {
        if residual.abs() <= 1e-15 {
            break;
        }
        let free: Vec<usize> = (0..x.len())
            .filter(|&i| {
                if residual > 0.0 {
                    x[i] < upper[i]
                } else {
                    x[i] > lower[i]
                }
            })
            .collect();
        if free.is_empty() {
            break;
        }
        let share = residual / free.len() as f64;
        for &i in &free {
            x[i] = (x[i] + share).clamp(lower[i], upper[i]);
        }
        residual = 1.0 - total(&x);
    }
    x
}

pub(crate) fn renormalize(x: &mut [f64]) {
    let s: f64 = x.iter().sum();
    if s > 0.0 {
        x.iter_mut().for_each(|v| *v /= s);
    }
}
