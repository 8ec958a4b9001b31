//! Small sample statistics used by the experiment reports.

use statrs::distribution::{ContinuousCDF, Normal};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mid-ranks (1-based) of the pooled sample, ties sharing their average rank.
fn mid_ranks(pooled: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let rank = 0.5 * ((i + 1) + (j + 1)) as f64;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    (ranks, tie_term)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankSum {
    /// Mann-Whitney U of the first sample.
    pub u: f64,
    pub z: f64,
    /// One-sided p-value for the first sample being stochastically larger.
    pub p_greater: f64,
}

/// Wilcoxon rank-sum test with the tie-corrected normal approximation and a
/// continuity correction.
pub fn rank_sum(a: &[f64], b: &[f64]) -> RankSum {
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, tie_term) = mid_ranks(&pooled);
    let r1: f64 = ranks[..a.len()].iter().sum();
    let u = r1 - n1 * (n1 + 1.0) / 2.0;
    let n = n1 + n2;
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let mu = n1 * n2 / 2.0;
    let (z, p) = if var > 0.0 {
        let z = (u - mu - 0.5) / var.sqrt();
        (z, 1.0 - Normal::standard().cdf(z))
    } else {
        (0.0, 1.0)
    };
    RankSum { u, z, p_greater: p.clamp(0.0, 1.0) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ranks_with_ties() {
        let (r, t) = mid_ranks(&[3.0, 1.0, 3.0, 2.0]);
        assert_eq!(r, vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(t, 6.0);
    }

    #[test]
    fn separated_samples() {
        let a: Vec<f64> = (10..20).map(f64::from).collect();
        let b: Vec<f64> = (0..10).map(f64::from).collect();
        let r = rank_sum(&a, &b);
        assert_eq!(r.u, 100.0);
        // z = (100 - 50 - 0.5) / sqrt(100 * 21 / 12)
        assert_relative_eq!(r.z, 49.5 / 175f64.sqrt(), epsilon = 1e-12);
        assert!(r.p_greater < 1e-3);
        assert!(rank_sum(&b, &a).p_greater > 0.999);
    }

    #[test]
    fn identical_samples_are_not_significant() {
        let r = rank_sum(&[5.0; 20], &[5.0; 20]);
        assert_eq!(r.p_greater, 1.0);
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!(rank_sum(&x, &x).p_greater > 0.4);
    }
}
