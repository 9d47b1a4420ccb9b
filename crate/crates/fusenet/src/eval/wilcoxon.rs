//! Wilcoxon signed-rank test for paired samples: exact two-sided p-values
//! by dynamic programming over the sign-flip distribution for n <= 20, a
//! tie-corrected normal approximation beyond.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest n handled by exact enumeration. 2^20 assignments, but the DP
/// below is O(n * sum of ranks), far smaller.
const EXACT_LIMIT: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// min(W+, W-): the smaller of the positive- and negative-difference
    /// rank sums.
    pub statistic: f64,
    /// Two-sided p-value in (0, 1].
    pub p_value: f64,
    /// Pairs remaining after zero differences are dropped.
    pub n_used: usize,
    /// True when every difference was zero; the test carries no
    /// information and p is reported as 1.
    pub degenerate: bool,
}

/// Doubled midranks of `xs`, which are exact integers even under ties:
/// a tie group spanning sorted positions i..=j (0-based) gets i + j + 2.
fn doubled_midranks(xs: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut rank2 = vec![0u64; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            rank2[idx] = (i + j + 2) as u64;
        }
        i = j + 1;
    }
    rank2
}

/// Exact two-sided p: the fraction of the 2^n equiprobable sign
/// assignments whose doubled rank sum lies at least as far from the center
/// S2/2 as the observed one. Counted by subset-sum DP; every count is far
/// below 2^53, so the final division is exact enough for a p-value.
fn exact_two_sided_p(rank2: &[u64], w2_plus: u64) -> f64 {
    let n = rank2.len();
    let s2: u64 = rank2.iter().sum();
    let mut counts = vec![0u64; s2 as usize + 1];
    counts[0] = 1;
    for &r in rank2 {
        for s in (r as usize..counts.len()).rev() {
            counts[s] += counts[s - r as usize];
        }
    }
    let observed = (2 * w2_plus as i64 - s2 as i64).abs();
    let mut extreme = 0u64;
    for (s, &c) in counts.iter().enumerate() {
        if (2 * s as i64 - s2 as i64).abs() >= observed {
            extreme += c;
        }
    }
    extreme as f64 / (1u64 << n) as f64
}

/// Normal approximation for n > 20 with tie-corrected variance and a
/// continuity correction of one half-rank toward the center.
fn approx_two_sided_p(rank2: &[u64], statistic: f64) -> f64 {
    let n = rank2.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = rank2.to_vec();
    sorted.sort_unstable();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    let z = ((statistic + 0.5 - mean) / var.sqrt()).min(0.0);
    // p = 2 * Phi(z) = erfc(-z / sqrt 2) for z <= 0.
    erfc(-z / std::f64::consts::SQRT_2).clamp(f64::MIN_POSITIVE, 1.0)
}

/// Complementary error function, Abramowitz-Stegun 7.1.26 rational
/// approximation; absolute error under 1.5e-7, ample for an asymptotic
/// branch that is itself an approximation.
fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    poly * (-x * x).exp()
}

/// Two-sided Wilcoxon signed-rank test of `a` against `b`, pairwise.
/// Zero differences are dropped (Wilcoxon's original treatment); if all
/// of them are zero the result is flagged degenerate with p = 1.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::Data(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Data("wilcoxon_signed_rank on empty samples".into()));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::Data("wilcoxon_signed_rank requires finite values".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Ok(WilcoxonResult { statistic: 0.0, p_value: 1.0, n_used: 0, degenerate: true });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let rank2 = doubled_midranks(&abs);
    let s2: u64 = rank2.iter().sum();
    let w2_plus: u64 =
        diffs.iter().zip(&rank2).filter(|(d, _)| **d > 0.0).map(|(_, &r)| r).sum();
    let statistic = w2_plus.min(s2 - w2_plus) as f64 / 2.0;
    let p_value = if diffs.len() <= EXACT_LIMIT {
        exact_two_sided_p(&rank2, w2_plus)
    } else {
        approx_two_sided_p(&rank2, statistic)
    };
    Ok(WilcoxonResult { statistic, p_value, n_used: diffs.len(), degenerate: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: O(n^2) midranks, brute force over all 2^n sign
    /// assignments in floating point.
    fn oracle(diffs: &[f64]) -> (f64, f64) {
        let n = diffs.len();
        let ranks: Vec<f64> = (0..n)
            .map(|i| {
                let below =
                    diffs.iter().filter(|d| d.abs() < diffs[i].abs()).count() as f64;
                let tied =
                    diffs.iter().filter(|d| d.abs() == diffs[i].abs()).count() as f64;
                below + (tied + 1.0) / 2.0
            })
            .collect();
        let total: f64 = ranks.iter().sum();
        let w_plus: f64 =
            ranks.iter().zip(diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
        let observed = (2.0 * w_plus - total).abs();
        let mut extreme = 0usize;
        for mask in 0u32..(1 << n) {
            let v: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if (2.0 * v - total).abs() >= observed - 1e-9 {
                extreme += 1;
            }
        }
        (w_plus.min(total - w_plus), extreme as f64 / (1u64 << n) as f64)
    }

    #[test]
    fn exact_p_matches_brute_force_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(501);
        for case in 0..60 {
            let n = rng.gen_range(1..=10);
            // Small grid of magnitudes forces frequent ties.
            let diffs: Vec<f64> = (0..n)
                .map(|_| {
                    let mag = rng.gen_range(1..=4) as f64 / 4.0;
                    if rng.gen::<bool>() {
                        mag
                    } else {
                        -mag
                    }
                })
                .collect();
            let b = vec![0.0; n];
            let got = wilcoxon_signed_rank(&diffs, &b).unwrap();
            let (stat, p) = oracle(&diffs);
            assert!((got.statistic - stat).abs() < 1e-9, "case {case}: statistic");
            assert!((got.p_value - p).abs() < 1e-9, "case {case}: {} vs {p}", got.p_value);
            assert!(!got.degenerate);
        }
    }

    #[test]
    fn unanimous_five_pairs_give_the_floor_p() {
        let a = [0.9, 0.8, 0.85, 0.7, 0.95];
        let b = [0.6, 0.5, 0.65, 0.6, 0.55];
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 0.0625);
        assert_eq!(r.n_used, 5);
    }

    #[test]
    fn one_smallest_magnitude_dissent_among_five() {
        let a = [0.1, 1.0, 2.0, 3.0, 4.0];
        let b = [0.15, 0.0, 0.0, 0.0, 0.0];
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert_eq!(r.p_value, 0.125);
    }

    #[test]
    fn three_unanimous_pairs_floor_at_a_quarter() {
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(r.p_value, 0.25);
        assert_eq!(r.statistic, 0.0);
    }

    #[test]
    fn identical_samples_are_degenerate() {
        let a = [0.7, 0.71, 0.72];
        let r = wilcoxon_signed_rank(&a, &a).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.n_used, 0);
    }

    #[test]
    fn zero_differences_are_dropped_before_ranking() {
        // Three informative pairs survive; same answer as the n=3 case.
        let a = [5.0, 5.0, 1.0, 2.0, 3.0];
        let b = [5.0, 5.0, 0.0, 0.0, 0.0];
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.n_used, 3);
        assert_eq!(r.p_value, 0.25);
    }

    #[test]
    fn approximate_branch_behaves_at_both_extremes() {
        let n = 25;
        let a: Vec<f64> = (1..=n).map(|i| i as f64).collect();
        let zeros = vec![0.0; n];
        let strong = wilcoxon_signed_rank(&a, &zeros).unwrap();
        assert_eq!(strong.statistic, 0.0);
        assert!(strong.p_value < 1e-4, "p = {}", strong.p_value);
        // Alternating signs of equal magnitude pattern: no evidence.
        let mixed: Vec<f64> =
            (1..=n).map(|i| if i % 2 == 0 { i as f64 } else { -(i as f64) }).collect();
        let weak = wilcoxon_signed_rank(&mixed, &zeros).unwrap();
        assert!(weak.p_value > 0.3, "p = {}", weak.p_value);
        assert!(weak.p_value <= 1.0);
    }

    #[test]
    fn approximation_tracks_the_exact_tail_at_the_boundary() {
        // Moderate-evidence cases at n = 20, where both branches apply.
        let mut rng = ChaCha8Rng::seed_from_u64(502);
        for _ in 0..20 {
            let diffs: Vec<f64> = (0..20)
                .map(|_| rng.gen_range(-1.0..1.0) + 0.3)
                .map(|d| if d == 0.0 { 0.1 } else { d })
                .collect();
            let rank2 = doubled_midranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
            let s2: u64 = rank2.iter().sum();
            let w2: u64 =
                diffs.iter().zip(&rank2).filter(|(d, _)| **d > 0.0).map(|(_, &r)| r).sum();
            let exact = exact_two_sided_p(&rank2, w2);
            let approx = approx_two_sided_p(&rank2, w2.min(s2 - w2) as f64 / 2.0);
            if exact > 0.05 {
                assert!((exact - approx).abs() < 0.02, "{exact} vs {approx}");
            } else {
                assert!(approx < 0.08, "{exact} vs {approx}");
            }
        }
    }

    #[test]
    fn p_values_stay_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(503);
        for _ in 0..100 {
            let n = rng.gen_range(1..=30);
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = wilcoxon_signed_rank(&a, &b).unwrap();
            assert!(r.p_value > 0.0 && r.p_value <= 1.0, "p = {}", r.p_value);
        }
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        assert!(wilcoxon_signed_rank(&[1.0], &[1.0, 2.0]).is_err());
        assert!(wilcoxon_signed_rank(&[], &[]).is_err());
        assert!(wilcoxon_signed_rank(&[f64::NAN], &[0.0]).is_err());
    }
}
