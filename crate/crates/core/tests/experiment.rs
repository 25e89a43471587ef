use cf_engine::backend::{point_mass_logits, ContextKey};
use cf_engine::corpus::{prompts, tiny_model};
use cf_engine::eval::{
    measure_stability_violations, run_similarity_experiment, write_aggregates_csv, write_rows_csv, Mode,
    SimilarityConfig,
};
use cf_engine::{DistributionProvider, LookupTableModel, SamplerConfig, Vocabulary};

fn all_kinds(tau: f64) -> Vec<SamplerConfig> {
    vec![
        SamplerConfig::gumbel_max(tau),
        SamplerConfig::top_k(tau, 2),
        SamplerConfig::top_p(tau, 0.9),
        SamplerConfig::inverse_transform(tau),
    ]
}

/// Emits `a b c d e f g h` then the end of sequence, whatever the content.
fn point_mass_model() -> LookupTableModel {
    let vocab = Vocabulary::from_tokens(["a", "b", "c", "d", "e", "f", "g", "h"]).unwrap();
    let n = vocab.len();
    let mut m = LookupTableModel::new("point", vocab.clone(), ContextKey::Length);
    for len in 1..9 {
        m = m.with_length_row(len, point_mass_logits(n, len - 1)).unwrap();
    }
    m.with_length_row(9, point_mass_logits(n, vocab.eos())).unwrap()
}

#[test]
fn point_mass_provider_gives_zero_distances() {
    let m = point_mass_model();
    let prompts = vec![vec![0], vec![1], vec![2]];
    let r = run_similarity_experiment(&m, &prompts, &SimilarityConfig::new(all_kinds(1.0), 20, 1)).unwrap();
    assert_eq!(r.rows.len(), 3 * 4 * 2 * 2);
    assert!(r.rows.iter().all(|row| row.distance == 0.0));
}

#[test]
fn short_sessions_are_skipped_and_counted() {
    let vocab = Vocabulary::from_tokens(["a", "b"]).unwrap();
    let n = vocab.len();
    let m = LookupTableModel::new("short", vocab.clone(), ContextKey::Length)
        .with_length_row(1, point_mass_logits(n, 0))
        .unwrap()
        .with_default(point_mass_logits(n, vocab.eos()))
        .unwrap();
    // prompt length 1: one token then eos, so one output token besides eos
    let r = run_similarity_experiment(&m, &[vec![0], vec![1]], &SimilarityConfig::new(all_kinds(1.0), 10, 1)).unwrap();
    assert_eq!(r.sessions, 8);
    assert_eq!(r.skipped, 8);
    assert!(r.rows.is_empty());
    assert!(run_similarity_experiment(&m, &[vec![0]], &SimilarityConfig::new(all_kinds(1.0), 10, 1)).is_err());
}

#[test]
fn near_deterministic_model_makes_the_modes_agree() {
    let m = tiny_model(4, 1e-4).unwrap();
    let p = prompts(&m, 30, 2).unwrap();
    let cfg = SimilarityConfig::new(vec![SamplerConfig::gumbel_max(0.02)], 60, 3);
    let r = run_similarity_experiment(&m, &p, &cfg).unwrap();
    let cf = r.aggregate(&cfg.samplers[0], Mode::Counterfactual, "all").unwrap();
    let iv = r.aggregate(&cfg.samplers[0], Mode::Interventional, "all").unwrap();
    assert!((cf.mean - iv.mean).abs() < 0.02, "{} vs {}", cf.mean, iv.mean);
}

#[test]
fn reruns_give_byte_identical_csv() {
    let m = tiny_model(4, 1e-4).unwrap();
    let p = prompts(&m, 20, 2).unwrap();
    let cfg = SimilarityConfig::new(all_kinds(0.8), 40, 9);
    let csv = || {
        let r = run_similarity_experiment(&m, &p, &cfg).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_rows_csv(&r.rows, &mut a).unwrap();
        write_aggregates_csv(&r.aggregates, &mut b).unwrap();
        (a, b)
    };
    let (rows, aggs) = csv();
    assert_eq!(csv(), (rows.clone(), aggs));
    let text = String::from_utf8(rows).unwrap();
    assert!(text.starts_with("session_id,half,mode,kind,tau,k,p,distance\n"));
    for line in text.lines().skip(1) {
        let d: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&d));
    }
}

#[test]
fn counterfactual_is_closer_than_interventional_on_the_tiny_corpus() {
    let m = tiny_model(4, 1e-4).unwrap();
    let p = prompts(&m, 60, 2).unwrap();
    let cfg = SimilarityConfig::new(vec![SamplerConfig::gumbel_max(0.8)], 80, 5);
    let r = run_similarity_experiment(&m, &p, &cfg).unwrap();
    for half in ["first", "second", "all"] {
        let cf = r.aggregate(&cfg.samplers[0], Mode::Counterfactual, half).unwrap();
        let iv = r.aggregate(&cfg.samplers[0], Mode::Interventional, half).unwrap();
        assert!(cf.mean <= iv.mean, "{half}: {} vs {}", cf.mean, iv.mean);
        assert_eq!(cf.n, if half == "all" { 120 } else { 60 });
    }
    assert!(m.vocabulary().len() > 100);
}

#[test]
fn restricted_gumbel_variants_are_measured_not_asserted() {
    for s in [SamplerConfig::top_k(1.0, 2), SamplerConfig::top_p(1.0, 0.7)] {
        let r = measure_stability_violations(&s, 2000, 1).unwrap();
        assert_eq!(r.trials, 2000);
        assert!((0.0..=1.0).contains(&r.rate));
    }
}
