//! Shared helpers for unit tests.

/// Survival function of the Kolmogorov distribution,
/// Q(lambda) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2).
pub(crate) fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut total = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        total += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * total).clamp(0.0, 1.0)
}

/// Asymptotic two-sample Kolmogorov-Smirnov p-value.
pub(crate) fn ks_two_sample_p(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty());
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        if xs[i] <= ys[j] {
            i += 1;
        } else {
            j += 1;
        }
        let diff = (i as f64 / n as f64 - j as f64 / m as f64).abs();
        d = d.max(diff);
    }
    let ne = (n as f64 * m as f64) / (n as f64 + m as f64);
    kolmogorov_sf(ne.sqrt() * d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    #[test]
    fn identical_samples_have_large_p() {
        let s = Stream::new(4);
        let a: Vec<f64> = (0..5000).map(|i| s.normal(i)).collect();
        let b: Vec<f64> = (5000..10000).map(|i| s.normal(i)).collect();
        assert!(ks_two_sample_p(&a, &b) > 0.01);
    }

    #[test]
    fn shifted_samples_are_detected() {
        let s = Stream::new(4);
        let a: Vec<f64> = (0..5000).map(|i| s.normal(i)).collect();
        let b: Vec<f64> = (5000..10000).map(|i| s.normal(i) + 0.2).collect();
        assert!(ks_two_sample_p(&a, &b) < 1e-6);
    }

    #[test]
    fn kolmogorov_sf_reference_points() {
        // Q(1.3581) ~ 0.05 and Q(1.6276) ~ 0.01.
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 2e-3);
        assert!((kolmogorov_sf(1.6276) - 0.01).abs() < 5e-4);
    }
}
