//! Exact limits: point-like two-level samples and Poisson statistics.
//!
//! Nothing here calls a numerical solver; these are the reference curves
//! the solvers are checked against.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    WithBackscatter,
    NoBackscatter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointLikeResult {
    pub p1: f64,
    pub p0: f64,
    pub regime: Regime,
}

fn pointlike(p1lin: f64, channels: f64, regime: Regime) -> PointLikeResult {
    let p1lin = p1lin.max(0.0);
    let p1 = if p1lin.is_infinite() {
        0.0
    } else {
        let d = 1.0 + p1lin / (2.0 * channels);
        p1lin / (d * d)
    };
    PointLikeResult { p1, p0: 1.0 - p1, regime }
}

/// `P₁ = P₁ˡⁱⁿ / (1 + P₁ˡⁱⁿ/2)²`; maximum 1/2 at `P₁ˡⁱⁿ = 2`.
pub fn pointlike_with_backscatter(p1lin: f64) -> PointLikeResult {
    pointlike(p1lin, 1.0, Regime::WithBackscatter)
}

/// `P₁ = P₁ˡⁱⁿ / (1 + P₁ˡⁱⁿ/4)²`; maximum 1 at `P₁ˡⁱⁿ = 4`.
pub fn pointlike_no_backscatter(p1lin: f64) -> PointLikeResult {
    pointlike(p1lin, 2.0, Regime::NoBackscatter)
}

/// d P₁ / d P₁ˡⁱⁿ for either point-like curve.
pub fn pointlike_slope(p1lin: f64, regime: Regime) -> f64 {
    let c = match regime {
        Regime::WithBackscatter => 2.0,
        Regime::NoBackscatter => 4.0,
    };
    let d = 1.0 + p1lin / c;
    (1.0 - p1lin / c) / (d * d * d)
}

/// Poisson occupations `e^{−μ} μ^j / j!` for `j = 0..=n_max`.
pub fn poisson_occupations(mean: f64, n_max: usize) -> Vec<f64> {
    let mean = mean.max(0.0);
    if mean == 0.0 {
        let mut out = vec![0.0; n_max + 1];
        out[0] = 1.0;
        return out;
    }
    if mean > 30.0 {
        let ln_mean = mean.ln();
        let mut ln_fact = 0.0;
        return (0..=n_max)
            .map(|j| {
                if j > 0 {
                    ln_fact += (j as f64).ln();
                }
                (j as f64 * ln_mean - mean - ln_fact).exp()
            })
            .collect();
    }
    let mut p = (-mean).exp();
    (0..=n_max)
        .map(|j| {
            if j > 0 {
                p *= mean / j as f64;
            }
            p
        })
        .collect()
}

/// Smallest `n_max` whose Poisson tail beyond it is below `tail`.
pub fn poisson_cutoff(mean: f64, tail: f64) -> usize {
    let mut n = (mean.ceil() as usize).max(1);
    loop {
        let occ = poisson_occupations(mean, n);
        let covered: f64 = occ.iter().sum();
        if 1.0 - covered < tail || n > 100_000 {
            return n;
        }
        n += 1 + n / 8;
    }
}

/// Kullback–Leibler divergence `Σ p ln(p/q)` over the common support.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b.max(f64::MIN_POSITIVE)).ln())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn with_backscatter_values() {
        assert_eq!(pointlike_with_backscatter(2.0).p1, 0.5);
        assert_eq!(pointlike_with_backscatter(0.0).p1, 0.0);
        assert!((pointlike_with_backscatter(8.0).p1 - 0.32).abs() < 1e-15);
        let r = pointlike_with_backscatter(1.3);
        assert_eq!(r.p0 + r.p1, 1.0);
        assert_eq!(r.regime, Regime::WithBackscatter);
    }

    #[test]
    fn no_backscatter_values() {
        assert_eq!(pointlike_no_backscatter(4.0).p1, 1.0);
        assert!((pointlike_no_backscatter(1.0).p1 - 0.64).abs() < 1e-15);
        assert!(pointlike_no_backscatter(1e12).p1 < 1e-10);
        assert_eq!(pointlike_no_backscatter(f64::INFINITY).p1, 0.0);
    }

    #[test]
    fn single_interior_maximum() {
        for (regime, at) in [(Regime::WithBackscatter, 2.0), (Regime::NoBackscatter, 4.0)] {
            assert_eq!(pointlike_slope(at, regime), 0.0);
            assert!(pointlike_slope(at - 1e-6, regime) > 0.0);
            assert!(pointlike_slope(at + 1e-6, regime) < 0.0);
            let sign_changes = (0..2000)
                .map(|i| pointlike_slope(i as f64 * 0.01 + 0.005, regime).signum())
                .collect::<Vec<_>>()
                .windows(2)
                .filter(|w| w[0] != w[1])
                .count();
            assert_eq!(sign_changes, 1);
        }
    }

    #[test]
    fn tangent_to_linear_and_ordered() {
        for i in 1..=100 {
            let x = 1e-4 * i as f64;
            for r in [pointlike_with_backscatter(x), pointlike_no_backscatter(x)] {
                assert!((r.p1 / x - 1.0).abs() <= 2.0 * x);
            }
        }
        for i in 1..1000 {
            let x = 0.013 * i as f64;
            assert!(pointlike_with_backscatter(x).p1 <= pointlike_no_backscatter(x).p1);
        }
    }

    #[test]
    fn poisson() {
        assert_eq!(poisson_occupations(0.0, 3), vec![1.0, 0.0, 0.0, 0.0]);
        let p = poisson_occupations(1.0, 3);
        assert!((p[0] - 0.367_879_441_171_442_3).abs() < 1e-15);
        assert!((p[1] - 0.367_879_441_171_442_3).abs() < 1e-15);
        assert!((p[2] - 0.183_939_720_585_721_2).abs() < 1e-15);
        for mean in [0.3, 1.0, 4.0, 29.0, 31.0, 200.0] {
            let n = poisson_cutoff(mean, 1e-13);
            let s: f64 = poisson_occupations(mean, n).iter().sum();
            assert!(s >= 1.0 - 1e-12, "{mean}: {s}");
        }
        // log-space branch agrees with the direct product
        let a = poisson_occupations(30.5, 40);
        let mut p = (-30.5f64).exp();
        for (j, v) in a.iter().enumerate() {
            if j > 0 {
                p *= 30.5 / j as f64;
            }
            assert!((v - p).abs() < 1e-12 * p);
        }
    }

    #[test]
    fn kl() {
        let p = poisson_occupations(1.0, 30);
        assert!(kl_divergence(&p, &p).abs() < 1e-16);
        assert!(kl_divergence(&p, &poisson_occupations(1.2, 30)) > 0.0);
    }
}
