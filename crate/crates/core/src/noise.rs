//! Exogenous noise of the sampling mechanism.
//!
//! Every noise value is a pure function of `(session seed, step, token)`.
//! The generator is ChaCha8 used in counter mode: the seed selects the key,
//! the step selects the stream and the token index selects the word position.
//! Nothing about the noise has to be stored besides the seed, and any single
//! value can be regenerated without replaying the ones before it.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Streams with this bit set carry the scalar uniforms of the
/// inverse-transform sampler; the rest carry Gumbel vectors.
const UNIFORM_STREAM: u64 = 1 << 63;

/// Everything needed to regenerate the noise of a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseProvenance {
    pub seed: u64,
    pub step_count: u32,
}

impl NoiseProvenance {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            step_count: 0,
        }
    }

    pub fn with_steps(self, step_count: u32) -> Self {
        Self { step_count, ..self }
    }
}

/// Maps 64 random bits to the open interval (0, 1).
///
/// The top 52 bits are offset by one half so that neither endpoint can be
/// produced (with 53 bits the largest value would round up to 1).
pub fn bits_to_open_unit(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Standard Gumbel deviate by inversion of its CDF `exp(-exp(-x))`.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The Gumbel(0, 1) noise vector `u_step` of length `vocab_size`.
///
/// # Panics
///
/// If `step` is zero; steps are counted from one.
pub fn gumbel_vector(prov: NoiseProvenance, step: u32, vocab_size: usize) -> Vec<f64> {
    let mut out = vec![0.0; vocab_size];
    fill_gumbel(prov.seed, step, &mut out);
    out
}

/// Writes the Gumbel vector of `step` into `out`, avoiding an allocation in
/// hot loops.
pub fn fill_gumbel(seed: u64, step: u32, out: &mut [f64]) {
    assert!(step >= 1, "noise steps are counted from 1");
    let mut rng = stream(seed, u64::from(step));
    for x in out.iter_mut() {
        *x = gumbel_from_uniform(bits_to_open_unit(rng.next_u64()));
    }
}

/// Gumbel noise of a single coordinate, identical to
/// `gumbel_vector(prov, step, n)[token]` for every `n > token`.
pub fn gumbel_at(prov: NoiseProvenance, step: u32, token: usize) -> f64 {
    assert!(step >= 1, "noise steps are counted from 1");
    let mut rng = stream(prov.seed, u64::from(step));
    rng.set_word_pos(2 * token as u128);
    gumbel_from_uniform(bits_to_open_unit(rng.next_u64()))
}

/// The scalar Uniform(0, 1) noise of `step`, used by the inverse-transform
/// sampler.
pub fn uniform_scalar(prov: NoiseProvenance, step: u32) -> f64 {
    assert!(step >= 1, "noise steps are counted from 1");
    let mut rng = stream(prov.seed, UNIFORM_STREAM | u64::from(step));
    bits_to_open_unit(rng.next_u64())
}

/// Short digest of a noise vector, for asserting that two runs consumed the
/// same noise.
pub fn fingerprint(noise: &[f64]) -> String {
    let mut h = Sha256::new();
    for x in noise {
        h.update(x.to_bits().to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

#[cfg(test)]
mod tests {
    use super::*;

    const N: usize = 100_000;
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    fn many_gumbels(seed: u64) -> Vec<f64> {
        let prov = NoiseProvenance::new(seed);
        (1..=(N / 10) as u32)
            .flat_map(|s| gumbel_vector(prov, s, 10))
            .collect()
    }

    #[test]
    fn gumbel_is_deterministic() {
        let prov = NoiseProvenance::new(1);
        assert_eq!(gumbel_vector(prov, 3, 17), gumbel_vector(prov, 3, 17));
        assert_ne!(gumbel_vector(prov, 1, 17), gumbel_vector(prov, 2, 17));
        assert_ne!(
            gumbel_vector(prov, 1, 17),
            gumbel_vector(NoiseProvenance::new(2), 1, 17)
        );
    }

    #[test]
    fn coordinate_access_matches_vector() {
        let prov = NoiseProvenance::new(99);
        let v = gumbel_vector(prov, 5, 40);
        for (t, x) in v.iter().enumerate() {
            assert_eq!(gumbel_at(prov, 5, t).to_bits(), x.to_bits());
        }
        // prefix property: the vector does not depend on its requested length
        assert_eq!(&gumbel_vector(prov, 5, 100)[..40], &v[..]);
    }

    #[test]
    fn gumbel_mean_is_euler_gamma() {
        let xs = many_gumbels(7);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - EULER_GAMMA).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn gumbel_passes_kolmogorov_smirnov() {
        let mut xs = many_gumbels(11);
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let mut stat: f64 = 0.0;
        for (i, x) in xs.iter().enumerate() {
            let cdf = (-(-x).exp()).exp();
            stat = stat
                .max((cdf - i as f64 / n).abs())
                .max(((i + 1) as f64 / n - cdf).abs());
        }
        // asymptotic 1% critical value
        let critical = 1.628 / n.sqrt();
        assert!(stat < critical, "KS statistic {stat} >= {critical}");
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn coordinates_and_steps_are_uncorrelated() {
        let prov = NoiseProvenance::new(5);
        let mut first = Vec::with_capacity(N);
        let mut second = Vec::with_capacity(N);
        let mut next_step = Vec::with_capacity(N);
        for s in 1..=N as u32 {
            let v = gumbel_vector(prov, s, 2);
            first.push(v[0]);
            second.push(v[1]);
            next_step.push(gumbel_at(prov, s + 1, 0));
        }
        assert!(correlation(&first, &second).abs() < 0.01);
        assert!(correlation(&first, &next_step).abs() < 0.01);
    }

    #[test]
    fn uniform_scalar_properties() {
        let prov = NoiseProvenance::new(3);
        assert_eq!(uniform_scalar(prov, 9), uniform_scalar(prov, 9));
        let xs: Vec<f64> = (1..=N as u32).map(|s| uniform_scalar(prov, s)).collect();
        assert!(xs.iter().all(|x| *x > 0.0 && *x < 1.0));
        let mean = xs.iter().sum::<f64>() / N as f64;
        assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
        // the uniform stream is separate from the Gumbel stream of the same step
        let g: Vec<f64> = (1..=N as u32).map(|s| gumbel_at(prov, s, 0)).collect();
        assert!(correlation(&xs, &g).abs() < 0.01);
    }

    #[test]
    fn open_unit_interval_endpoints() {
        assert!(bits_to_open_unit(0) > 0.0);
        assert!(bits_to_open_unit(u64::MAX) < 1.0);
        assert!(gumbel_from_uniform(bits_to_open_unit(0)).is_finite());
        assert!(gumbel_from_uniform(bits_to_open_unit(u64::MAX)).is_finite());
    }
}
