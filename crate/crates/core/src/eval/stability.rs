//! Counterfactual stability and marginal correctness of the mechanisms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::Serialize;

use crate::distribution::{normalize, TokenDistribution};
use crate::error::{Error, Result};
use crate::noise::NoiseProvenance;
use crate::sampler::SamplerConfig;
use crate::vocab::TokenId;

/// Dirichlet(1, ..., 1) draw over `len` tokens.
pub fn random_distribution(rng: &mut impl Rng, len: usize) -> TokenDistribution {
    let w: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(Exp1) + 1e-300).collect();
    normalize(&w).expect("exponential draws are positive")
}

/// True when switching from `factual` to `counterfactual` is forbidden by
/// counterfactual stability: the relative chance of `factual` did not drop
/// against `counterfactual` when moving from `d` to `d_prime`, that is
/// `d'[f] / d[f] >= d'[c] / d[c]`.
pub fn violates_ratio_condition(
    d: &TokenDistribution,
    d_prime: &TokenDistribution,
    factual: TokenId,
    counterfactual: TokenId,
) -> bool {
    if factual == counterfactual {
        return false;
    }
    // cross-multiplied so that zero probabilities need no special casing
    d_prime.prob(factual) * d.prob(counterfactual) >= d_prime.prob(counterfactual) * d.prob(factual)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityReport {
    pub trials: usize,
    pub violations: usize,
    pub rate: f64,
}

/// Draws `trials` random pairs `(d, d')` over 2 to 10 tokens plus one noise
/// value each, applies the mechanism to both with the same noise, and counts
/// counterfactual tokens whose choice contradicts the ratio condition.
///
/// Restricted samplers are judged against their restricted distributions,
/// which is what their tokens are marginally distributed as. The trial set
/// depends on `seed` only, so every sampler kind sees the same pairs and
/// the same noise.
pub fn measure_stability_violations(
    sampler: &SamplerConfig,
    trials: usize,
    seed: u64,
) -> Result<StabilityReport> {
    if trials == 0 {
        return Err(Error::domain("at least one trial is needed"));
    }
    sampler.validate()?;
    let prov = NoiseProvenance::new(seed ^ 0x05EE_D0F0_015E);
    let violations = (0..trials)
        .into_par_iter()
        .map(|trial| -> Result<usize> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial as u64);
            let len = rng.random_range(2..=10);
            let d = sampler.restrict(&random_distribution(&mut rng, len))?;
            let d_prime = sampler.restrict(&random_distribution(&mut rng, len))?;
            let noise = sampler.noise(prov, trial as u32 + 1, len);
            let factual = sampler.apply(&d, &noise)?;
            let counterfactual = sampler.apply(&d_prime, &noise)?;
            Ok(usize::from(violates_ratio_condition(&d, &d_prime, factual, counterfactual)))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(StabilityReport {
        trials,
        violations,
        rate: violations as f64 / trials as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalReport {
    pub target: Vec<f64>,
    pub empirical: Vec<f64>,
    /// Largest absolute difference between `empirical` and `target`.
    pub gap: f64,
}

/// Frequencies of the mechanism's output over `n` independent noise draws.
///
/// `d` is the distribution handed to the mechanism; the sampler's top-k /
/// top-p restriction is applied to it (temperature is not), and the result is
/// the target the frequencies should converge to.
pub fn marginal_oracle(
    d: &TokenDistribution,
    sampler: &SamplerConfig,
    n: usize,
    seed: u64,
) -> Result<MarginalReport> {
    if n == 0 {
        return Err(Error::domain("at least one draw is needed"));
    }
    sampler.validate()?;
    let target = sampler.restrict(d)?;
    let prov = NoiseProvenance::new(seed);
    let len = d.len();
    let counts = (0..n)
        .into_par_iter()
        .fold(
            || Ok(vec![0usize; len]),
            |acc: Result<Vec<usize>>, i| {
                let mut acc = acc?;
                let t = sampler.apply(&target, &sampler.noise(prov, i as u32 + 1, len))?;
                acc[t] += 1;
                Ok(acc)
            },
        )
        .try_reduce(
            || vec![0usize; len],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let gap = empirical
        .iter()
        .zip(target.probs())
        .map(|(e, t)| (e - t).abs())
        .fold(0.0, f64::max);
    Ok(MarginalReport {
        target: target.probs().to_vec(),
        empirical,
        gap,
    })
}
