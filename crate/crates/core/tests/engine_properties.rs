//! Sequence-level properties of generation and regeneration over random
//! table models.

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cf_engine::backend::{ContextKey, CorpusSplit};
use cf_engine::engine::{
    generate, regenerate, regenerate_counterfactual, regenerate_interventional, replay, RegenerationMode,
};
use cf_engine::{
    DistributionProvider, GenerationSession, Intervention, LookupTableModel, NGramModel, NoiseIndexing, SamplerConfig,
    Tokenizer, Vocabulary,
};

fn table(seed: u64, letters: usize, key: ContextKey) -> LookupTableModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = (0..letters).map(|i| ((b'a' + i as u8) as char).to_string()).collect();
    let vocab = Vocabulary::from_tokens(names.iter().map(String::as_str)).unwrap();
    let n = vocab.len();
    let mut row = || (0..n).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();
    let mut m = LookupTableModel::new(format!("table-{seed}"), vocab, key);
    match key {
        ContextKey::Suffix(_) => {
            for t in 0..n {
                m = m.with_row(vec![t], row()).unwrap();
            }
        }
        ContextKey::Length => {
            for len in 0..80 {
                m = m.with_length_row(len, row()).unwrap();
            }
        }
    }
    m
}

fn sampler_strategy() -> impl Strategy<Value = SamplerConfig> {
    (0usize..4, 0.3f64..2.0, 1usize..4, 0.3f64..0.99).prop_map(|(kind, tau, k, p)| match kind {
        0 => SamplerConfig::gumbel_max(tau),
        1 => SamplerConfig::top_k(tau, k),
        2 => SamplerConfig::top_p(tau, p),
        _ => SamplerConfig::inverse_transform(tau),
    })
}

fn session(m: &LookupTableModel, sampler: SamplerConfig, seed: u64) -> GenerationSession {
    generate(m, &[0], sampler, seed, 30).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn null_interventions_replay_the_output(model_seed in any::<u64>(), sampler in sampler_strategy(), seed in any::<u64>(), at in 0.0f64..=1.0) {
        let m = table(model_seed, 5, ContextKey::Suffix(1));
        let s = session(&m, sampler, seed);
        let step = (at * s.output.len() as f64).floor() as u32;
        let r = regenerate_counterfactual(&m, &s, &Intervention::null(&s, step).unwrap()).unwrap();
        prop_assert_eq!(r.output_after(1), s.output.as_slice().to_vec());
        prop_assert!(replay(&m, &s).unwrap().is_none());
    }

    #[test]
    fn regeneration_keeps_the_intervened_prefix(model_seed in any::<u64>(), sampler in sampler_strategy(), seed in any::<u64>(), a in 0.0f64..=1.0, b in 0.0f64..=1.0, repl in prop::collection::vec(0usize..5, 0..4)) {
        let m = table(model_seed, 5, ContextKey::Suffix(1));
        let s = session(&m, sampler, seed);
        let len = s.output.len();
        let (x, y) = ((a * len as f64) as usize, (b * len as f64) as usize);
        let (start, end) = (x.min(y), x.max(y));
        let iv = Intervention::replace_span(&s, start, end, &repl).unwrap();
        for mode in [RegenerationMode::Counterfactual, RegenerationMode::Interventional { fresh_seed: seed ^ 1 }] {
            let r = regenerate(&m, &s, &iv, mode, NoiseIndexing::FactualStep).unwrap();
            let seq = r.sequence();
            prop_assert_eq!(&seq[..iv.prefix.len()], iv.prefix.as_slice());
            prop_assert_eq!(&seq[1..1 + start], &s.output.as_slice()[..start]);
        }
    }

    #[test]
    fn continuation_consumes_the_factual_noise_steps(model_seed in any::<u64>(), sampler in sampler_strategy(), seed in any::<u64>(), at in 0.0f64..1.0, extra in 0usize..3) {
        let m = table(model_seed, 5, ContextKey::Suffix(1));
        let s = session(&m, sampler, seed);
        let end = (at * s.output.len() as f64) as usize;
        let iv = Intervention::replace_span(&s, end, end, &vec![1; extra]).unwrap();
        let r = regenerate(&m, &s, &iv, RegenerationMode::Counterfactual, NoiseIndexing::FactualStep).unwrap();
        prop_assert_eq!(r.noise_seed, s.seed());
        let expected: Vec<u32> = (0..r.continuation.len() as u32).map(|j| end as u32 + 1 + j).collect();
        prop_assert_eq!(&r.noise_steps, &expected);
        // the noise at each consumed step is the factual noise of that step
        let v = m.vocabulary().len();
        for &j in &r.noise_steps {
            prop_assert_eq!(
                s.sampler.noise(s.noise, j, v).fingerprint(),
                s.sampler.noise(cf_engine::NoiseProvenance::new(r.noise_seed), j, v).fingerprint()
            );
        }
        let shifted = regenerate(&m, &s, &iv, RegenerationMode::Counterfactual, NoiseIndexing::PrefixLength).unwrap();
        prop_assert_eq!(shifted.noise_steps.first().copied().unwrap_or(end as u32 + extra as u32 + 1), end as u32 + extra as u32 + 1);
    }

    /// Wherever the intervened context yields the factual distribution, the
    /// counterfactual token is the factual token.
    #[test]
    fn equal_distributions_give_equal_tokens(model_seed in any::<u64>(), sampler in sampler_strategy(), seed in any::<u64>(), at in 0.0f64..1.0, tok in 0usize..5, by_length in any::<bool>()) {
        let key = if by_length { ContextKey::Length } else { ContextKey::Suffix(1) };
        let m = table(model_seed, 5, key);
        let s = session(&m, sampler, seed);
        prop_assume!(!s.output.is_empty());
        let pos = 1 + (at * s.output.len() as f64) as u32;
        let iv = Intervention::replace_token(&s, pos, tok).unwrap();
        let r = regenerate_counterfactual(&m, &s, &iv).unwrap();
        let factual = s.full_sequence();
        let cf = r.sequence();
        for j in iv.prefix.len()..cf.len().min(factual.len()) {
            let d = sampler.sampling_distribution(&m.next_logits(&factual[..j]).unwrap()).unwrap();
            let d2 = sampler.sampling_distribution(&m.next_logits(&cf[..j]).unwrap()).unwrap();
            if d == d2 {
                prop_assert_eq!(cf[j], factual[j], "step {}", j);
            } else {
                break;
            }
        }
        if by_length && factual.last() != Some(&m.vocabulary().eos()) {
            // length-keyed distributions never change, so nothing can diverge
            prop_assert_eq!(&cf[iv.prefix.len()..], &factual[iv.prefix.len()..cf.len().min(factual.len())]);
        }
    }

    #[test]
    fn interventional_with_the_session_seed_is_counterfactual(model_seed in any::<u64>(), sampler in sampler_strategy(), seed in any::<u64>(), tok in 0usize..5) {
        let m = table(model_seed, 5, ContextKey::Suffix(1));
        let s = session(&m, sampler, seed);
        prop_assume!(!s.output.is_empty());
        let iv = Intervention::replace_token(&s, 1, tok).unwrap();
        prop_assert_eq!(
            regenerate_interventional(&m, &s, &iv, s.seed()).unwrap(),
            regenerate_counterfactual(&m, &s, &iv).unwrap()
        );
    }
}

#[test]
fn call_order_does_not_matter() {
    let m = table(3, 6, ContextKey::Suffix(1));
    let samplers = [
        SamplerConfig::gumbel_max(0.9),
        SamplerConfig::top_k(1.1, 3),
        SamplerConfig::top_p(0.7, 0.8),
        SamplerConfig::inverse_transform(1.0),
    ];
    let jobs: Vec<(usize, u64)> = (0..40).map(|i| (i % 4, i as u64 * 31)).collect();
    let run = |order: &[usize]| {
        let mut out = vec![None; jobs.len()];
        for &i in order {
            let (k, seed) = jobs[i];
            let s = generate(&m, &[1, 2], samplers[k], seed, 25).unwrap();
            let iv = Intervention::replace_token(&s, 1, 0).unwrap();
            let r = regenerate_counterfactual(&m, &s, &iv).unwrap();
            let v = regenerate_interventional(&m, &s, &iv, seed + 1).unwrap();
            out[i] = Some((s, r, v));
        }
        out
    };
    let sequential: Vec<usize> = (0..jobs.len()).collect();
    let baseline = run(&sequential);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let mut order = sequential.clone();
        order.shuffle(&mut rng);
        assert_eq!(run(&order), baseline);
    }
}

#[test]
fn sessions_survive_a_model_file_round_trip() {
    let text = "the cat sat on the mat\nthe dog sat on the log\na cat saw a dog\n";
    let m = NGramModel::train_text(text, Tokenizer::Words, CorpusSplit::Lines, 2, 0.3).unwrap();
    let prompt = Tokenizer::Words.encode("the", m.vocabulary()).unwrap();
    let s = generate(&m, &prompt, SamplerConfig::top_p(1.0, 0.9), 5, 20).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("m.ngram");
    let session_path = dir.path().join("s.json");
    std::fs::write(&model_path, m.to_bytes()).unwrap();
    s.save(&session_path).unwrap();
    let file = std::io::BufReader::new(std::fs::File::open(&model_path).unwrap());
    let m2 = NGramModel::read_from(file).unwrap();
    let s2 = GenerationSession::load(&session_path).unwrap();
    assert_eq!(m2.model_id(), m.model_id());
    assert_eq!(s2, s);
    assert!(replay(&m2, &s2).unwrap().is_none());
}
