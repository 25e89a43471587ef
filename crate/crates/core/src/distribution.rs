//! Next-token distributions and the temperature / top-k / top-p pipeline.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// Tolerance on the total mass of a normalized distribution.
pub const EPSILON: f64 = 1e-9;

/// A probability vector over the vocabulary. Entries are non-negative and sum
/// to one within [`EPSILON`]; zeros mark tokens outside the support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenDistribution(Vec<f64>);

impl TokenDistribution {
    /// Wraps a vector that is already a probability distribution.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::domain("empty distribution"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::domain("probabilities must be finite and non-negative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > EPSILON {
            return Err(Error::domain(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self(probs))
    }

    /// A distribution putting all mass on `token`.
    pub fn point_mass(len: usize, token: TokenId) -> Result<Self> {
        if token >= len {
            return Err(Error::domain(format!("token {token} out of range {len}")));
        }
        let mut probs = vec![0.0; len];
        probs[token] = 1.0;
        Ok(Self(probs))
    }

    pub fn uniform(len: usize) -> Result<Self> {
        normalize(&vec![1.0; len])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn prob(&self, t: TokenId) -> f64 {
        self.0.get(t).copied().unwrap_or(0.0)
    }

    /// Indices with strictly positive probability, in vocabulary order.
    pub fn support(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(i, _)| i)
    }

    pub fn support_size(&self) -> usize {
        self.support().count()
    }

    /// Token indices sorted by descending probability; ties go to the lower
    /// index.
    pub fn ranked(&self) -> Vec<TokenId> {
        let mut order: Vec<TokenId> = (0..self.0.len()).collect();
        order.sort_by(|&a, &b| {
            self.0[b]
                .partial_cmp(&self.0[a])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        order
    }

    pub fn argmax(&self) -> TokenId {
        self.ranked()[0]
    }

    /// Hex digest of the exact bit patterns of the probabilities. Used to
    /// detect a model that drifted between a factual run and its replay.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.0 {
            h.update(p.to_bits().to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    /// Sets the given tokens to zero probability and renormalizes.
    pub fn without(&self, excluded: &[TokenId]) -> Result<Self> {
        let mut w = self.0.clone();
        for &t in excluded {
            if let Some(p) = w.get_mut(t) {
                *p = 0.0;
            }
        }
        normalize(&w)
    }
}

/// Scales non-negative weights to a probability distribution.
pub fn normalize(weights: &[f64]) -> Result<TokenDistribution> {
    if weights.is_empty() {
        return Err(Error::domain("cannot normalize an empty weight vector"));
    }
    if weights.iter().any(|w| w.is_nan() || *w < 0.0 || w.is_infinite()) {
        return Err(Error::domain("weights must be finite and non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::domain("weights must not all be zero"));
    }
    Ok(TokenDistribution(weights.iter().map(|w| w / total).collect()))
}

/// Softmax of `logits / tau`, stabilized by subtracting the maximum logit.
///
/// Logits of negative infinity are accepted and receive probability zero.
pub fn apply_temperature(logits: &[f64], tau: f64) -> Result<TokenDistribution> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::domain(format!("temperature must be positive, got {tau}")));
    }
    if logits.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(Error::domain("logits must not be NaN or +inf"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::domain("all logits are -inf"));
    }
    let weights: Vec<f64> = logits.iter().map(|l| ((l - max) / tau).exp()).collect();
    normalize(&weights)
}

/// Keeps the `k` most probable tokens and renormalizes.
pub fn restrict_top_k(d: &TokenDistribution, k: usize) -> Result<TokenDistribution> {
    if k == 0 || k > d.len() {
        return Err(Error::domain(format!(
            "top-k needs 1 <= k <= {}, got {k}",
            d.len()
        )));
    }
    if k == d.len() {
        return Ok(d.clone());
    }
    let mut w = vec![0.0; d.len()];
    for t in d.ranked().into_iter().take(k) {
        w[t] = d.0[t];
    }
    normalize(&w)
}

/// Keeps the smallest set of most probable tokens whose cumulative mass
/// reaches `p` and renormalizes.
pub fn restrict_top_p(d: &TokenDistribution, p: f64) -> Result<TokenDistribution> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::domain(format!("top-p needs 0 < p <= 1, got {p}")));
    }
    if p == 1.0 {
        return Ok(d.clone());
    }
    let mut w = vec![0.0; d.len()];
    let mut cumulative = 0.0;
    for t in d.ranked() {
        let mass = d.0[t];
        if mass <= 0.0 {
            break;
        }
        w[t] = mass;
        cumulative += mass;
        // absorbs rounding in partial sums such as 0.1 + 0.2
        if cumulative >= p - 1e-12 {
            break;
        }
    }
    normalize(&w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[2.0, 2.0]).unwrap().probs(), &[0.5, 0.5]);
        assert_eq!(normalize(&[1.0, 0.0, 0.0]).unwrap().probs(), &[1.0, 0.0, 0.0]);
        assert_eq!(
            normalize(&[1.0, 2.0, 1.0]).unwrap().probs(),
            &[0.25, 0.5, 0.25]
        );
        assert!(normalize(&[0.0, 0.0]).is_err());
        assert!(normalize(&[1.0, -0.5]).is_err());
    }

    #[test]
    fn temperature_examples() {
        let d = apply_temperature(&[3.0, 3.0, 3.0], 0.37).unwrap();
        assert!(close(d.probs(), &[1.0 / 3.0; 3], 1e-12));
        let d = apply_temperature(&[1.0, 0.0], 1.0).unwrap();
        assert!(close(d.probs(), &[0.7311, 0.2689], 1e-4));
        let d = apply_temperature(&[1.0, 0.0], 0.1).unwrap();
        assert!(d.prob(0) > 0.9999);
        assert!(apply_temperature(&[1.0], 0.0).is_err());
        assert!(apply_temperature(&[1.0], -1.0).is_err());
        assert!(apply_temperature(&[f64::NAN, 1.0], 1.0).is_err());
    }

    #[test]
    fn temperature_neg_infinity_is_excluded() {
        let d = apply_temperature(&[0.0, f64::NEG_INFINITY], 1.0).unwrap();
        assert_eq!(d.probs(), &[1.0, 0.0]);
    }

    #[test]
    fn top_k_examples() {
        let d = TokenDistribution::from_probs(vec![0.5, 0.3, 0.2]).unwrap();
        assert_eq!(restrict_top_k(&d, 1).unwrap().probs(), &[1.0, 0.0, 0.0]);
        assert_eq!(restrict_top_k(&d, 3).unwrap(), d);
        assert!(close(
            restrict_top_k(&d, 2).unwrap().probs(),
            &[0.625, 0.375, 0.0],
            1e-12
        ));
        assert!(restrict_top_k(&d, 0).is_err());
        assert!(restrict_top_k(&d, 4).is_err());
    }

    #[test]
    fn top_k_ties_prefer_lower_index() {
        let d = TokenDistribution::from_probs(vec![0.25, 0.25, 0.25, 0.25]).unwrap();
        assert_eq!(restrict_top_k(&d, 2).unwrap().probs(), &[0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn top_p_examples() {
        let d = TokenDistribution::from_probs(vec![0.5, 0.3, 0.2]).unwrap();
        assert_eq!(restrict_top_p(&d, 1.0).unwrap(), d);
        assert!(close(
            restrict_top_p(&d, 0.7).unwrap().probs(),
            &[0.625, 0.375, 0.0],
            1e-12
        ));
        let pm = TokenDistribution::point_mass(4, 2).unwrap();
        for p in [0.01, 0.5, 0.99, 1.0] {
            assert_eq!(restrict_top_p(&pm, p).unwrap(), pm);
        }
        assert!(restrict_top_p(&d, 0.0).is_err());
        assert!(restrict_top_p(&d, 1.5).is_err());
    }

    #[test]
    fn top_p_exact_boundary() {
        // 0.5 + 0.3 is not exactly 0.8 in binary floating point
        let d = TokenDistribution::from_probs(vec![0.5, 0.2, 0.3]).unwrap();
        let r = restrict_top_p(&d, 0.8).unwrap();
        assert_eq!(r.support_size(), 2);
        assert_eq!(r.prob(1), 0.0);
    }

    fn weights() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..10.0, 1..40)
            .prop_filter("needs positive mass", |w| w.iter().any(|x| *x > 1e-6))
    }

    fn valid(d: &TokenDistribution) -> bool {
        d.probs().iter().all(|p| *p >= 0.0)
            && (d.probs().iter().sum::<f64>() - 1.0).abs() <= EPSILON
    }

    proptest! {
        #[test]
        fn pipeline_outputs_are_distributions(w in weights(), tau in 0.05f64..5.0, kf in 0.0f64..1.0, p in 0.01f64..=1.0) {
            let d = normalize(&w).unwrap();
            prop_assert!(valid(&d));
            let logits: Vec<f64> = w.iter().map(|x| x.ln()).collect();
            let t = apply_temperature(&logits, tau).unwrap();
            prop_assert!(valid(&t));
            let k = 1 + (kf * (d.len() - 1) as f64) as usize;
            let rk = restrict_top_k(&d, k).unwrap();
            prop_assert!(valid(&rk));
            prop_assert!(rk.support_size() <= k);
            let rp = restrict_top_p(&d, p).unwrap();
            prop_assert!(valid(&rp));
            let kept: f64 = rp.support().map(|t| d.prob(t)).sum();
            prop_assert!(kept >= p - 1e-9);
        }

        #[test]
        fn temperature_preserves_argmax(logits in prop::collection::vec(-20.0f64..20.0, 1..30), tau in 0.01f64..10.0) {
            let mut best = 0;
            for (i, l) in logits.iter().enumerate() {
                if *l > logits[best] { best = i; }
            }
            let d = apply_temperature(&logits, tau).unwrap();
            let top = d.probs()[best];
            prop_assert!(d.probs().iter().all(|p| *p <= top));
        }

        #[test]
        fn restriction_preserves_ratios(w in weights(), k in 1usize..40, p in 0.01f64..=1.0) {
            let d = normalize(&w).unwrap();
            let k = k.min(d.len());
            for r in [restrict_top_k(&d, k).unwrap(), restrict_top_p(&d, p).unwrap()] {
                let kept: Vec<TokenId> = r.support().collect();
                for &a in &kept {
                    for &b in &kept {
                        let lhs = r.prob(a) * d.prob(b);
                        let rhs = r.prob(b) * d.prob(a);
                        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
                    }
                }
            }
        }
    }
}
