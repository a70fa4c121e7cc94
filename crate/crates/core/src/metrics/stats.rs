use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Linearly interpolated quantile of an ascending slice (`q` in `[0, 1]`).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty slice");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

/// Median and quartiles of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub mean: f64,
}

impl Summary {
    /// `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            count: v.len(),
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
            mean: values.iter().sum::<f64>() / values.len() as f64,
        })
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    Summary::of(values).map(|s| s.median)
}

/// Pearson correlation coefficient.
pub fn pearson_r<T: Real>(xs: &[T], ys: &[T]) -> Result<T> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(Error::Empty("pearson correlation needs at least two pairs"));
    }
    let n = T::cast(xs.len() as f64);
    let mx = xs.iter().copied().sum::<T>() / n;
    let my = ys.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx.is_zero() || syy.is_zero() {
        return Err(Error::ZeroVariance("pearson correlation input"));
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Ok(r.max(-T::one()).min(T::one()))
}

/// Pooled sample size up to which the exact permutation distribution is used.
pub const MWU_EXACT_MAX_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    /// Exact conditional permutation distribution of U (ties included).
    Exact,
    /// Normal approximation with tie-corrected variance and continuity correction.
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// `#{a_i > b_j} + 0.5 #{a_i = b_j}`.
    pub u: f64,
    pub p_two_sided: f64,
    pub method: PValueMethod,
}

/// Two-sided Mann–Whitney U test.
///
/// The p-value is exact for pooled samples of at most [`MWU_EXACT_MAX_N`] values
/// and from the tie-corrected normal approximation otherwise.
pub fn mann_whitney_u<T: Real>(a: &[T], b: &[T]) -> Result<MannWhitney> {
    let n = a.len() + b.len();
    if n <= MWU_EXACT_MAX_N {
        mann_whitney_u_exact(a, b)
    } else {
        mann_whitney_u_normal(a, b)
    }
}

/// Midranks (1-based) of the pooled sample `a ++ b`, plus the tie group sizes.
fn pooled_ranks<T: Real>(a: &[T], b: &[T]) -> Result<(Vec<f64>, Vec<usize>)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("mann-whitney group"));
    }
    let pooled: Vec<f64> = a.iter().chain(b).map(|v| v.as_f64()).collect();
    if pooled.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("mann-whitney sample"));
    }
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && pooled[order[end]] == pooled[order[start]] {
            end += 1;
        }
        let mid = (start + 1 + end) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = mid;
        }
        ties.push(end - start);
        start = end;
    }
    Ok((ranks, ties))
}

fn u_from_ranks(ranks: &[f64], na: usize) -> f64 {
    let rank_sum: f64 = ranks[..na].iter().sum();
    rank_sum - (na * (na + 1)) as f64 / 2.0
}

/// Normal-approximation test, valid for any sample size.
pub fn mann_whitney_u_normal<T: Real>(a: &[T], b: &[T]) -> Result<MannWhitney> {
    let (ranks, ties) = pooled_ranks(a, b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = na + nb;
    let u = u_from_ranks(&ranks, a.len());
    let mean = na * nb / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
        libm::erfc(z / std::f64::consts::SQRT_2).min(1.0)
    };
    Ok(MannWhitney {
        u,
        p_two_sided: p,
        method: PValueMethod::Normal,
    })
}

/// Exact test: counts, over all ways of choosing `|a|` of the pooled ranks,
/// how many give a U at least as far from its mean as the observed one.
pub fn mann_whitney_u_exact<T: Real>(a: &[T], b: &[T]) -> Result<MannWhitney> {
    let (ranks, _) = pooled_ranks(a, b)?;
    let na = a.len();
    let n = ranks.len();
    if n > 60 {
        return Err(Error::OutOfRange {
            name: "pooled sample size for exact test",
            value: n as f64,
            range: "[2, 60]",
        });
    }
    // Doubled midranks are integers.
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    // ways[k][s]: number of k-subsets of the ranks seen so far with doubled sum s.
    let mut ways = vec![vec![0f64; max_sum + 1]; na + 1];
    ways[0][0] = 1.0;
    for &r in &doubled {
        for k in (1..=na).rev() {
            let (lower, upper) = ways.split_at_mut(k);
            let prev = &lower[k - 1];
            let cur = &mut upper[0];
            for s in (r..=max_sum).rev() {
                cur[s] += prev[s - r];
            }
        }
    }
    let offset = (na * (na + 1)) as f64;
    let u_obs = u_from_ranks(&ranks, na);
    let mean = (na * (n - na)) as f64 / 2.0;
    let dev_obs = (u_obs - mean).abs();
    let (mut total, mut extreme) = (0.0, 0.0);
    for (s, &w) in ways[na].iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let u = (s as f64 - offset) / 2.0;
        total += w;
        if (u - mean).abs() >= dev_obs - 1e-9 {
            extreme += w;
        }
    }
    Ok(MannWhitney {
        u: u_obs,
        p_two_sided: (extreme / total).min(1.0),
        method: PValueMethod::Exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&[7.0], 0.3), 7.0);
        assert!((quantile(&v, 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn summary_of_empty_is_none() {
        assert!(Summary::of(&[]).is_none());
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
    }

    #[test]
    fn pearson_perfect_lines() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
        assert!((pearson_r(&xs, &ys).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson_r(&xs, &neg).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn pearson_errors() {
        assert!(matches!(pearson_r(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::ZeroVariance(_))));
        assert!(matches!(pearson_r(&[1.0, 2.0], &[1.0]), Err(Error::LengthMismatch(2, 1))));
        assert!(pearson_r(&[1.0f32], &[1.0]).is_err());
    }

    #[test]
    fn u_statistic_by_ranks() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.u, 0.0);
        assert_eq!(r.method, PValueMethod::Exact);
        assert!((r.p_two_sided - 0.1).abs() < 1e-12);

        let c = mann_whitney_u(&[2.0; 4], &[2.0; 5]).unwrap();
        assert_eq!(c.u, 10.0);
        assert_eq!(c.p_two_sided, 1.0);
    }

    #[test]
    fn normal_path_matches_reference() {
        // scipy.stats.mannwhitneyu(a, b, method="asymptotic", use_continuity=True)
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [6.0, 7.0, 8.0, 9.0, 10.0];
        let r = mann_whitney_u_normal(&a, &b).unwrap();
        assert_eq!(r.u, 0.0);
        assert!((r.p_two_sided - 0.012_185_780_355_344_813).abs() < 1e-9);

        let a = [1.0, 2.0, 2.0, 3.0, 7.5, 8.0];
        let b = [2.0, 3.0, 3.0, 4.0, 9.0, 10.0, 11.0];
        let r = mann_whitney_u_normal(&a, &b).unwrap();
        assert_eq!(r.u, 11.0);
        assert!((r.p_two_sided - 0.169_967_907_602_275_98).abs() < 1e-9);
    }

    #[test]
    fn large_samples_use_normal_approximation() {
        let a: Vec<f64> = (0..15).map(f64::from).collect();
        let b: Vec<f64> = (10..25).map(f64::from).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        assert_eq!(r.method, PValueMethod::Normal);
        let ab = mann_whitney_u(&b, &a).unwrap();
        assert_eq!(r.u + ab.u, 225.0);
        assert!((r.p_two_sided - ab.p_two_sided).abs() < 1e-15);
    }

    #[test]
    fn empty_group_is_an_error() {
        assert!(mann_whitney_u::<f64>(&[], &[1.0]).is_err());
        assert!(mann_whitney_u_normal(&[1.0], &[] as &[f64]).is_err());
    }
}
