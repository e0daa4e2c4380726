//! Small exact statistical tests used by the experiment harness.

/// One-sided Wilcoxon signed-rank test for paired samples.
///
/// Tests whether `xs` tends to exceed `ys`. Zero differences are dropped;
/// ties get average ranks. The p-value is exact: the full sign-flip
/// distribution of the positive-rank sum is enumerated by dynamic
/// programming over doubled (hence integral) ranks.
///
/// Returns `(w_plus, p_value)` where `w_plus` is the positive-rank sum.
/// With no nonzero differences the test is degenerate and p = 1.
pub fn wilcoxon_signed_rank_greater(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len(), "paired samples must have equal length");
    let mut diffs: Vec<f64> = xs
        .iter()
        .zip(ys)
        .map(|(a, b)| a - b)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return (0.0, 1.0);
    }
    diffs.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).expect("finite diffs"));

    // Average ranks for ties on |d|, doubled to stay integral.
    let n = diffs.len();
    let mut double_ranks = vec![0u64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[j + 1].abs() == diffs[i].abs() {
            j += 1;
        }
        // ranks i+1 ..= j+1 share the average rank; double it.
        let double_avg = (i + 1 + j + 1) as u64;
        for r in double_ranks.iter_mut().take(j + 1).skip(i) {
            *r = double_avg;
        }
        i = j + 1;
    }

    let w2_plus: u64 = diffs
        .iter()
        .zip(&double_ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();

    // counts[s] = number of sign assignments with doubled rank sum s.
    let total: u64 = double_ranks.iter().sum();
    let mut counts = vec![0.0f64; total as usize + 1];
    counts[0] = 1.0;
    for &r in &double_ranks {
        for s in (r as usize..counts.len()).rev() {
            counts[s] += counts[s - r as usize];
        }
    }
    let tail: f64 = counts[w2_plus as usize..].iter().sum();
    let all: f64 = counts.iter().sum();
    (w2_plus as f64 / 2.0, tail / all)
}

/// One-sided Fisher exact test for a 2x2 table: does group 1 have a
/// higher success rate than group 2?
///
/// `a` successes of `n1` in group 1, `b` successes of `n2` in group 2.
/// Sums hypergeometric probabilities of tables at least as extreme as
/// observed (group-1 successes >= a at fixed margins).
pub fn fisher_exact_greater(a: u64, n1: u64, b: u64, n2: u64) -> f64 {
    assert!(a <= n1 && b <= n2);
    let successes = a + b;
    let total = n1 + n2;
    let ln_fact = ln_factorial_table(total as usize);
    let ln_choose = |n: u64, k: u64| -> f64 {
        ln_fact[n as usize] - ln_fact[k as usize] - ln_fact[(n - k) as usize]
    };
    let denom = ln_choose(total, successes);
    let hi = successes.min(n1);
    let lo = successes.saturating_sub(n2);
    let mut p = 0.0;
    for x in lo..=hi {
        if x >= a {
            p += (ln_choose(n1, x) + ln_choose(n2, successes - x) - denom).exp();
        }
    }
    p.min(1.0)
}

fn ln_factorial_table(n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n + 1];
    for i in 1..=n {
        t[i] = t[i - 1] + (i as f64).ln();
    }
    t
}

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation (zero for a single value).
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force sign-flip enumeration, kept independent of the DP.
    fn wilcoxon_brute(xs: &[f64], ys: &[f64]) -> f64 {
        let diffs: Vec<f64> = xs
            .iter()
            .zip(ys)
            .map(|(a, b)| a - b)
            .filter(|d| *d != 0.0)
            .collect();
        let n = diffs.len();
        let mut sorted: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let rank_of = |d: f64| -> f64 {
            let lower = sorted.iter().filter(|s| **s < d.abs()).count();
            let equal = sorted.iter().filter(|s| **s == d.abs()).count();
            // average rank of the tie group, 1-based
            (lower + 1 + lower + equal) as f64 / 2.0
        };
        let observed: f64 = diffs
            .iter()
            .filter(|d| **d > 0.0)
            .map(|d| rank_of(*d))
            .sum();
        let mut at_least = 0usize;
        for mask in 0u32..(1 << n) {
            let w: f64 = (0..n)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| rank_of(diffs[i]))
                .sum();
            if w >= observed - 1e-12 {
                at_least += 1;
            }
        }
        at_least as f64 / (1u64 << n) as f64
    }

    #[test]
    fn wilcoxon_matches_brute_force_enumeration() {
        let xs = [1.2, 3.4, 0.1, 5.0, 2.2, 0.9, 4.4, 1.1];
        let ys = [0.8, 2.9, 0.4, 4.0, 2.2, 0.2, 3.3, 1.0];
        let (_, p) = wilcoxon_signed_rank_greater(&xs, &ys);
        let brute = wilcoxon_brute(&xs, &ys);
        assert!((p - brute).abs() < 1e-12, "dp {p} vs brute {brute}");
    }

    #[test]
    fn wilcoxon_with_ties_matches_brute_force() {
        let xs = [2.0, 2.0, 3.0, 1.0, 5.0, 4.0];
        let ys = [1.0, 1.0, 2.0, 3.0, 1.0, 4.5];
        let (_, p) = wilcoxon_signed_rank_greater(&xs, &ys);
        let brute = wilcoxon_brute(&xs, &ys);
        assert!((p - brute).abs() < 1e-12);
    }

    #[test]
    fn wilcoxon_all_positive_is_small_p() {
        let xs: Vec<f64> = (1..=12).map(|i| i as f64 + 0.5).collect();
        let ys: Vec<f64> = (1..=12).map(|i| i as f64).collect();
        let (w, p) = wilcoxon_signed_rank_greater(&xs, &ys);
        assert_eq!(w, (12 * 13 / 2) as f64);
        // All 12 differences positive: p = 1 / 2^12.
        assert!((p - 1.0 / 4096.0).abs() < 1e-12);
    }

    #[test]
    fn wilcoxon_degenerate_no_differences() {
        let xs = [1.0, 2.0];
        let (w, p) = wilcoxon_signed_rank_greater(&xs, &xs);
        assert_eq!(w, 0.0);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn fisher_hand_computed_small_table() {
        // Group 1: 3/3 successes, group 2: 0/3.
        // P(X >= 3) with margins (3 successes of 6, group size 3) is
        // C(3,3)*C(3,0)/C(6,3) = 1/20.
        let p = fisher_exact_greater(3, 3, 0, 3);
        assert!((p - 0.05).abs() < 1e-12, "p {p}");
    }

    #[test]
    fn fisher_no_difference_is_large_p() {
        let p = fisher_exact_greater(5, 10, 5, 10);
        assert!(p > 0.5);
    }

    #[test]
    fn fisher_strong_difference_is_significant() {
        let p = fisher_exact_greater(40, 50, 5, 50);
        assert!(p < 1e-10, "p {p}");
    }

    #[test]
    fn mean_and_std() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(std_dev(&[5.0]), 0.0);
        let s = std_dev(&[1.0, 2.0, 3.0, 4.0]);
        assert!((s - (1.25f64).sqrt()).abs() < 1e-12);
    }
}
