//! Divergences between probability vectors.
//!
//! Finite state spaces are where the general identities (parallelogram,
//! Donsker–Varadhan, Pinsker) can be checked to rounding error, independent
//! of any Gaussian structure.

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    probs: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("a distribution needs at least one state"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(invalid("probabilities must be finite and non-negative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    /// Normalises non-negative masses to a distribution.
    pub fn from_masses(masses: &[f64]) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(invalid("masses must have a positive finite total"));
        }
        Self::new(masses.iter().map(|m| m / total).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// `(1 − s)·self + s·other`.
    pub fn mix(&self, other: &DiscreteDist, s: f64) -> Result<Self> {
        same_len(self, other)?;
        Ok(Self {
            probs: self
                .probs
                .iter()
                .zip(&other.probs)
                .map(|(a, b)| (1.0 - s) * a + s * b)
                .collect(),
        })
    }

    /// Pushes the distribution through the map merging states `i` and `j`.
    pub fn merge(&self, i: usize, j: usize) -> Result<Self> {
        if i == j || i >= self.len() || j >= self.len() {
            return Err(invalid(format!("cannot merge states {i} and {j}")));
        }
        let (keep, drop) = (i.min(j), i.max(j));
        let mut probs = self.probs.clone();
        probs[keep] += probs[drop];
        probs.remove(drop);
        Ok(Self { probs })
    }
}

fn same_len(a: &DiscreteDist, b: &DiscreteDist) -> Result<()> {
    if a.len() != b.len() {
        return Err(invalid(format!(
            "distributions have different lengths ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// `Σ ν_i log(ν_i/μ_i)` with `0·log 0 = 0`; `+∞` when `ν` charges a state `μ` does not.
pub fn kl_discrete(nu: &DiscreteDist, mu: &DiscreteDist) -> Result<f64> {
    same_len(nu, mu)?;
    let mut total = 0.0;
    for (p, q) in nu.probs.iter().zip(&mu.probs) {
        if *p == 0.0 {
            continue;
        }
        if *q == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += p * (p / q).ln();
    }
    Ok(total.max(0.0))
}

pub fn tv_discrete(nu: &DiscreteDist, mu: &DiscreteDist) -> Result<f64> {
    same_len(nu, mu)?;
    let sum: f64 = nu
        .probs
        .iter()
        .zip(&mu.probs)
        .map(|(p, q)| (p - q).abs())
        .sum();
    Ok((0.5 * sum).min(1.0))
}

/// Hellinger integral `Σ √(ν_i μ_i)`.
pub fn hellinger_discrete(nu: &DiscreteDist, mu: &DiscreteDist) -> Result<f64> {
    same_len(nu, mu)?;
    let sum: f64 = nu
        .probs
        .iter()
        .zip(&mu.probs)
        .map(|(p, q)| (p * q).sqrt())
        .sum();
    Ok(sum.min(1.0))
}

/// Residual of the parallelogram identity
///
/// `D(ν_n‖μ) + D(ν_m‖μ) = 2·D(ν̄‖μ) + D(ν_n‖ν̄) + D(ν_m‖ν̄)`, `ν̄ = (ν_n + ν_m)/2`.
pub fn parallelogram_residual(
    nu_n: &DiscreteDist,
    nu_m: &DiscreteDist,
    mu: &DiscreteDist,
) -> Result<f64> {
    same_len(nu_n, nu_m)?;
    same_len(nu_n, mu)?;
    let mid = nu_n.mix(nu_m, 0.5)?;
    let terms = [
        ("D(ν_n‖μ)", kl_discrete(nu_n, mu)?),
        ("D(ν_m‖μ)", kl_discrete(nu_m, mu)?),
        ("D(ν̄‖μ)", kl_discrete(&mid, mu)?),
        ("D(ν_n‖ν̄)", kl_discrete(nu_n, &mid)?),
        ("D(ν_m‖ν̄)", kl_discrete(nu_m, &mid)?),
    ];
    if let Some((name, _)) = terms.iter().find(|(_, v)| v.is_infinite()) {
        return Err(Error::InfiniteDivergence(format!("{name} is +∞")));
    }
    let lhs = terms[0].1 + terms[1].1;
    let rhs = 2.0 * terms[2].1 + terms[3].1 + terms[4].1;
    Ok((lhs - rhs).abs())
}

/// `E^ν[θ] − log E^μ[exp θ]`, a lower bound on `D_KL(ν‖μ)`.
pub fn dv_lower_bound(nu: &DiscreteDist, mu: &DiscreteDist, theta: &[f64]) -> Result<f64> {
    same_len(nu, mu)?;
    if theta.len() != nu.len() {
        return Err(invalid("θ must have one entry per state"));
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(invalid("θ entries must be finite"));
    }
    let mean: f64 = nu.probs.iter().zip(theta).map(|(p, t)| p * t).sum();
    let max = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mgf: f64 = mu
        .probs
        .iter()
        .zip(theta)
        .map(|(q, t)| q * (t - max).exp())
        .sum();
    Ok(mean - max - mgf.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(p: &[f64]) -> DiscreteDist {
        DiscreteDist::new(p.to_vec()).unwrap()
    }

    fn dist(n: usize) -> impl Strategy<Value = DiscreteDist> {
        prop::collection::vec(0.01f64..1.0, n).prop_map(|m| DiscreteDist::from_masses(&m).unwrap())
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_discrete(&d(&[0.5, 0.5]), &d(&[0.5, 0.5])).unwrap(), 0.0);
        let v = kl_discrete(&d(&[1.0, 0.0]), &d(&[0.5, 0.5])).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
        assert_eq!(
            kl_discrete(&d(&[0.5, 0.5]), &d(&[1.0, 0.0])).unwrap(),
            f64::INFINITY
        );
        assert!(kl_discrete(&d(&[1.0]), &d(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_discrete(&d(&[0.3, 0.7]), &d(&[0.3, 0.7])).unwrap(), 0.0);
        assert_eq!(tv_discrete(&d(&[1.0, 0.0]), &d(&[0.0, 1.0])).unwrap(), 1.0);
        let v = tv_discrete(&d(&[0.8, 0.2]), &d(&[0.5, 0.5])).unwrap();
        assert!((v - 0.3).abs() < 1e-15);
    }

    #[test]
    fn hellinger_examples() {
        assert!(
            (hellinger_discrete(&d(&[0.3, 0.7]), &d(&[0.3, 0.7])).unwrap() - 1.0).abs() < 1e-15
        );
        assert_eq!(
            hellinger_discrete(&d(&[1.0, 0.0]), &d(&[0.0, 1.0])).unwrap(),
            0.0
        );
        let v = hellinger_discrete(&d(&[0.5, 0.5]), &d(&[0.25, 0.75])).unwrap();
        assert!((v - 0.965926).abs() < 1e-6);
    }

    #[test]
    fn parallelogram_examples() {
        let a = d(&[0.2, 0.3, 0.5]);
        let mu = d(&[0.4, 0.4, 0.2]);
        assert_eq!(parallelogram_residual(&a, &a, &mu).unwrap(), 0.0);
        let err = parallelogram_residual(&d(&[1.0, 0.0]), &d(&[1.0, 0.0]), &d(&[0.0, 1.0]));
        assert!(matches!(err, Err(Error::InfiniteDivergence(_))));
    }

    #[test]
    fn dv_examples() {
        let nu = d(&[0.2, 0.3, 0.5]);
        let mu = d(&[0.4, 0.4, 0.2]);
        assert!(dv_lower_bound(&nu, &mu, &[0.0; 3]).unwrap().abs() < 1e-15);
        let opt: Vec<f64> = nu
            .probs()
            .iter()
            .zip(mu.probs())
            .map(|(p, q)| (p / q).ln())
            .collect();
        let kl = kl_discrete(&nu, &mu).unwrap();
        assert!((dv_lower_bound(&nu, &mu, &opt).unwrap() - kl).abs() < 1e-10);
        let shifted: Vec<f64> = opt.iter().map(|t| t + 3.7).collect();
        assert!((dv_lower_bound(&nu, &mu, &shifted).unwrap() - kl).abs() < 1e-10);
    }

    #[test]
    fn rejects_invalid_distributions() {
        assert!(DiscreteDist::new(vec![]).is_err());
        assert!(DiscreteDist::new(vec![0.5, 0.6]).is_err());
        assert!(DiscreteDist::new(vec![1.5, -0.5]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn parallelogram_identity(a in dist(5), b in dist(5), mu in dist(5)) {
            prop_assert!(parallelogram_residual(&a, &b, &mu).unwrap() <= 1e-12);
        }

        #[test]
        fn pinsker_and_hellinger_sandwich(a in dist(6), b in dist(6)) {
            let tv = tv_discrete(&a, &b).unwrap();
            let kl = kl_discrete(&a, &b).unwrap();
            let h = hellinger_discrete(&a, &b).unwrap();
            prop_assert!(tv <= (0.5 * kl).sqrt() + 1e-12);
            prop_assert!(1.0 - h <= tv + 1e-12);
            prop_assert!(tv <= 4.0 * (1.0 - h).max(0.0).sqrt() + 1e-12);
        }

        #[test]
        fn dv_is_a_lower_bound(a in dist(4), b in dist(4), theta in prop::collection::vec(-5.0f64..5.0, 4)) {
            prop_assert!(dv_lower_bound(&a, &b, &theta).unwrap() <= kl_discrete(&a, &b).unwrap() + 1e-12);
        }

        #[test]
        fn merging_states_never_increases_kl(a in dist(5), b in dist(5), i in 0usize..5, j in 0usize..5) {
            prop_assume!(i != j);
            let merged = kl_discrete(&a.merge(i, j).unwrap(), &b.merge(i, j).unwrap()).unwrap();
            prop_assert!(merged <= kl_discrete(&a, &b).unwrap() + 1e-12);
        }

        #[test]
        fn kl_jointly_convex(a1 in dist(4), b1 in dist(4), a2 in dist(4), b2 in dist(4), s in 0.0f64..1.0) {
            let lhs = kl_discrete(&a1.mix(&a2, s).unwrap(), &b1.mix(&b2, s).unwrap()).unwrap();
            let rhs = (1.0 - s) * kl_discrete(&a1, &b1).unwrap() + s * kl_discrete(&a2, &b2).unwrap();
            prop_assert!(lhs <= rhs + 1e-12);
        }
    }
}
