use std::path::Path;

use proptest::prelude::*;

use slmrank_core::corpus::{generate_corpus, Corpus};
use slmrank_core::experiment::DeskSetup;
use slmrank_core::model::{init_weights, ModelConfig};
use slmrank_core::scoring::{EvalSet, RelevanceScore};
use slmrank_core::summarize::*;
use slmrank_core::tokenizer::{count_tokens, words, Vocab};

fn params(w: f64) -> PenaltyParams {
    PenaltyParams { w, m: 256, tau: 1.0 / 3.0 }
}

#[test]
fn hand_derived_penalties() {
    let p1 = penalty_p1(900, 450, &params(1.0)).unwrap();
    assert!((p1 - -0.0625).abs() < 1e-9, "{p1}");
    let p2 = penalty_p2(100, 7, &params(0.4)).unwrap();
    assert!((p2 - -0.001960).abs() < 1e-9, "{p2}");
    let p2b = penalty_p2(1000, 70, &params(0.4)).unwrap();
    assert!((p2b - -0.001960).abs() < 1e-9);
    assert_eq!(penalty_p1(100, 100, &params(1.0)).unwrap(), 0.0);
    assert_eq!(penalty_p1(900, 300, &params(1.0)).unwrap(), 0.0);
    assert_eq!(penalty_p2(900, 0, &params(0.4)).unwrap(), 0.0);
    assert_eq!(penalty_p2(900, 500, &params(0.0)).unwrap(), 0.0);
}

#[test]
fn p1_zero_branch_and_signs_on_a_grid() {
    let p = params(1.0);
    for l_o in 1..=3000usize {
        for step in 0..=50usize {
            let l_c = l_o * step / 50;
            let r = l_c as f64 / l_o as f64;
            let v1 = penalty_p1(l_o, l_c, &p).unwrap();
            let v2 = penalty_p2(l_o, l_c, &p).unwrap();
            assert!(v1 <= 0.0 && v2 <= 0.0);
            if l_o < 256 || r <= 1.0 / 3.0 {
                assert_eq!(v1, 0.0, "L_o={l_o} L_c={l_c}");
            } else {
                let x = (r - 1.0 / 3.0) / (2.0 / 3.0);
                assert!(v1 < 0.0);
                assert!((v1 + x * x).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn p1_is_gentler_than_p2_above_tau() {
    for tau in [0.1, 0.25, 1.0 / 3.0, 0.5, 0.8] {
        let p = PenaltyParams { w: 0.7, m: 256, tau };
        assert_eq!(p1_p2_crossover(tau), 1.0);
        for l_o in [256usize, 900, 2300] {
            for l_c in 0..=l_o {
                let r = l_c as f64 / l_o as f64;
                if r <= tau {
                    continue;
                }
                let (a, b) = (penalty_p1(l_o, l_c, &p).unwrap().abs(), penalty_p2(l_o, l_c, &p).unwrap().abs());
                if r < p1_p2_crossover(tau) {
                    assert!(a < b, "tau {tau} r {r}: {a} vs {b}");
                } else {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn invalid_penalty_params() {
    assert!(penalty_p1(10, 5, &PenaltyParams { w: -1.0, ..params(1.0) }).is_err());
    assert!(penalty_p1(10, 5, &PenaltyParams { tau: 0.0, ..params(1.0) }).is_err());
    assert!(penalty_p1(10, 5, &PenaltyParams { m: 0, ..params(1.0) }).is_err());
    assert!(penalty_p2(0, 0, &params(1.0)).is_err());
}

fn rs(p: f64) -> RelevanceScore {
    RelevanceScore { p_yes: p, p_no: 1.0 - p }
}

#[test]
fn reward_at_equal_distributions_is_pure_penalty() {
    let pen = Penalty { kind: PenaltyKind::P2, params: params(0.4) };
    let r = reward(rs(0.62), rs(0.62), 300, 300, &pen).unwrap();
    assert_eq!(r.total, -0.4);
    assert_eq!(r.ratio, 1.0);
    let p1 = Penalty { kind: PenaltyKind::P1, params: params(0.4) };
    assert_eq!(reward(rs(0.3), rs(0.3), 300, 90, &p1).unwrap().total, 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 512, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn reward_decomposes_and_is_non_positive(
        a in 1e-4f64..1.0 - 1e-4,
        b in 1e-4f64..1.0 - 1e-4,
        l_o in 1usize..3000,
        frac in 0.0f64..=1.0,
        w in 0.0f64..10.0,
        p1 in any::<bool>(),
    ) {
        let l_c = (frac * l_o as f64) as usize;
        let kind = if p1 { PenaltyKind::P1 } else { PenaltyKind::P2 };
        let pen = Penalty { kind, params: params(w) };
        let r = reward(rs(a), rs(b), l_o, l_c, &pen).unwrap();
        prop_assert_eq!(r.total, r.kl_term + r.penalty_term);
        prop_assert!(r.total <= 0.0);
        let kl = a * (a / b).ln() + (1.0 - a) * ((1.0 - a) / (1.0 - b)).ln();
        prop_assert!((r.kl_term + kl).abs() < 1e-12);
        prop_assert_eq!(r.penalty_term, pen.value(l_o, l_c).unwrap());
    }

    #[test]
    fn advantages_are_centered_and_shift_invariant(
        rewards in prop::collection::vec(-5.0f64..5.0, 2..16),
        shift in -100.0f64..100.0,
    ) {
        let a = group_advantages(&rewards).unwrap();
        prop_assert!(a.iter().sum::<f64>().abs() < 1e-10);
        let shifted: Vec<f64> = rewards.iter().map(|r| r + shift).collect();
        let b = group_advantages(&shifted).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-6 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn stopword_removal_keeps_content_words_in_order(idx in prop::collection::vec(0usize..40, 0..60)) {
        const POOL: [&str; 40] = [
            "the", "rust", "and", "engineer", "of", "Berlin", "with", "team", "a", "scalable", "is", "systems",
            "to", "build", "for", "The", "AND", "daily", "in", "metrics", "on", "review", "we", "ownership",
            "our", "reliable", "you", "services", "will", "projects", "it", "budgets", "be", "nursing", "or",
            "tools", "at", "remote", "by", "lead",
        ];
        let text = idx.iter().map(|&i| POOL[i]).collect::<Vec<_>>().join(" ");
        let out = compress_stopwords(&text);
        let kept: Vec<String> = words(&text).into_iter().filter(|w| !stop_words().contains(w.as_str())).collect();
        prop_assert_eq!(words(&out), kept);
        prop_assert_eq!(compress_stopwords(&out), out.clone());
    }
}

#[test]
fn stopword_edge_cases() {
    assert_eq!(compress_stopwords("the and of to it"), "");
    let plain = "Senior rust engineer, Berlin: build scalable systems.";
    assert_eq!(compress_stopwords(plain), plain);
    assert_eq!(compress_stopwords("Build the tools, and ship."), "Build tools, ship.");
}

#[test]
fn stopword_compression_on_the_corpus() {
    let (_, items) = generate_corpus(3, 1, 400);
    let mean = items
        .iter()
        .map(|i| count_tokens(&compress_stopwords(&i.description)) as f64 / count_tokens(&i.description) as f64)
        .sum::<f64>()
        / items.len() as f64;
    let compression = 1.0 - mean;
    println!("stop-word compression {:.1}%", 100.0 * compression);
    assert!((0.10..=0.25).contains(&compression), "{compression}");
}

#[test]
fn truncation_matches_target_ratio() {
    let ten = "a1 b2 c3 d4 e5 f6 g7 h8 i9 j10";
    assert_eq!(compress_truncate(ten, 0.5).unwrap(), "a1 b2 c3 d4 e5");
    assert_eq!(compress_truncate(ten, 1.0).unwrap(), ten);
    let (_, items) = generate_corpus(4, 1, 200);
    for ratio in [0.07, 0.25, 1.0 / 3.0, 0.5, 0.84] {
        for it in &items {
            let l_o = count_tokens(&it.description);
            let l_c = count_tokens(&compress_truncate(&it.description, ratio).unwrap());
            assert!((l_c as f64 - ratio * l_o as f64).abs() <= 1.0, "ratio {ratio}: {l_c} of {l_o}");
            assert!(it.description.starts_with(&compress_truncate(&it.description, ratio).unwrap()));
        }
    }
}

#[test]
fn extractive_selection() {
    let text = "Rust services in Berlin. Rust tooling and Rust services. Free snacks daily. Rust Berlin services team.";
    assert_eq!(compress_extractive(text, 100).unwrap(), text);
    let out = compress_extractive(text, 9).unwrap();
    assert!(count_tokens(&out) <= 9);
    assert_eq!(out, compress_extractive(text, 9).unwrap());
    assert!(!out.contains("snacks"));
    let mut last = 0;
    for s in out.split_inclusive('.') {
        let at = text.find(s.trim()).unwrap();
        assert!(at >= last);
        last = at;
    }
    let one = "alpha beta gamma delta epsilon zeta eta theta";
    assert_eq!(compress_extractive(one, 3).unwrap(), "alpha beta gamma");
    assert!(compress_extractive(one, 0).is_err());

    let (_, items) = generate_corpus(2, 1, 50);
    for it in &items {
        let out = compress_extractive(&it.description, 64).unwrap();
        let n = count_tokens(&out);
        assert!(n <= 64 && n > 32, "{n}");
    }
}

fn small_eval_fixture() -> (Corpus, Vocab) {
    (Corpus::generate(9, 4, 40, 6), Vocab::with_size(512))
}

#[test]
fn identity_and_empty_compressors_on_an_untrained_scorer() {
    let (corpus, vocab) = small_eval_fixture();
    let cfg = ModelConfig { n_layers: 2, d_model: 16, n_heads: 4, n_kv_heads: 2, d_ff: 24, vocab_size: 512, ..Default::default() };
    let w = init_weights::<f32>(&cfg, 0).unwrap();
    let eval = EvalSet { vocab: &vocab, queries: &corpus.queries, items: &corpus.items, pairs: &corpus.pairs, token_budget: 64 };
    let pen = Penalty::default();
    let id = evaluate_compressor(&w, &eval, &Identity, &pen).unwrap();
    assert_eq!(id.delta_ndcg10, 0.0);
    assert_eq!(id.compression_pct, 0.0);
    assert_eq!(id.mean_kl, 0.0);
    assert!((id.mean_reward + 0.4).abs() < 1e-12);
    assert_eq!(id.n_pairs, corpus.pairs.len());
    let empty = evaluate_compressor(&w, &eval, &DropDescription, &pen).unwrap();
    assert_eq!(empty.compression_pct, -100.0);
    assert_eq!(empty.length_p99_pct, -100.0);
    assert!(empty.mean_kl > 0.0);
    assert_eq!(evaluate_compressor(&w, &eval, &StopWords, &pen).unwrap(), evaluate_compressor(&w, &eval, &StopWords, &pen).unwrap());

    let json = serde_json::to_value(&empty).unwrap();
    for key in ["name", "penalty", "w", "mean_reward", "compression_pct", "delta_ndcg10"] {
        assert!(json.get(key).is_some(), "{key}");
    }
    let table = render_tradeoff_table(&[id, empty]);
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn desk_tradeoffs() {
    let setup = DeskSetup::default();
    let data = setup.prepare().unwrap();
    let w = setup.train_cached::<f32>(&data, Path::new(env!("CARGO_TARGET_TMPDIR"))).unwrap();
    let eval = data.eval_set();
    let pen = Penalty::default();
    let empty = evaluate_compressor(&w, &eval, &DropDescription, &pen).unwrap();
    let stop = evaluate_compressor(&w, &eval, &StopWords, &pen).unwrap();
    let matched = evaluate_compressor(&w, &eval, &Truncate(1.0 + stop.compression_pct / 100.0), &pen).unwrap();
    let ext = evaluate_compressor(&w, &eval, &Extractive(64), &pen).unwrap();
    let trunc_ext = evaluate_compressor(&w, &eval, &Truncate(1.0 + ext.compression_pct / 100.0), &pen).unwrap();
    let curve = truncation_curve(&w, &eval, &[0.75, 0.5, 0.25, 0.1, 0.05], &pen).unwrap();
    let mut rows = vec![empty.clone(), stop, matched, ext.clone(), trunc_ext.clone()];
    rows.extend(curve.iter().cloned());
    println!("{}", render_tradeoff_table(&rows));
    if ext.mean_reward <= trunc_ext.mean_reward {
        println!("flag: extractive reward {:.5} not above truncation at matched ratio {:.5}", ext.mean_reward, trunc_ext.mean_reward);
    }
    assert!(empty.delta_ndcg10 < 0.0, "dropping descriptions changed NDCG by {}", empty.delta_ndcg10);
    assert!(curve.windows(2).all(|p| p[1].compression_pct < p[0].compression_pct));
}
