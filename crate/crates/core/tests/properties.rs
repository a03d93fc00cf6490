use std::collections::BTreeSet;

use pearl_core::corpus::{generate_synthetic, QueryJudgments, SyntheticConfig, UserGroup};
use pearl_core::embed::Embedder;
use pearl_core::evalsim::{
    delta_ctr, delta_gsb, interleave_with, simulate_sessions, ClickModelConfig, OnlineConfig, Owner, SessionRecord,
};
use pearl_core::index::{build_identifiers, train_codebooks, Index, PrefixTree, SchemeConfig};
use pearl_core::intent::{detect_rule_based, parse_llm_ranking, IntentRanking, Lexicons};
use pearl_core::quantize::{train_pq, Scheme};
use pearl_core::retrieve::constrained_beam_search;
use pearl_core::tensor::Mat;
use pearl_core::userrep::attention;
use pearl_core::{Property, PROPERTIES};
use proptest::prelude::*;

fn small_synthetic(seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        click_logs: 120,
        train_pairs: 20,
        test_pairs: 10,
        ..SyntheticConfig::with_stickers(60, seed)
    }
}

fn vectors(n: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, dim), n)
}

fn ids(prefix: &'static str, n: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::btree_set(0u32..40, 0..=n)
        .prop_map(|s| s.into_iter().collect::<Vec<_>>())
        .prop_shuffle()
        .prop_map(move |s| s.into_iter().map(|i| format!("{prefix}{i}")).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generation_is_pure_and_resolvable(seed in 0u64..1000) {
        let cfg = small_synthetic(seed);
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        prop_assert_eq!(&a.corpus, &b.corpus);
        prop_assert_eq!(&a.click_logs, &b.click_logs);
        prop_assert_eq!(&a.test_judgments, &b.test_judgments);
        prop_assert!(a.corpus.validate_logs(&a.click_logs).is_ok());
        prop_assert!(a.corpus.validate_triplets(&a.triplets).is_ok());

        let stats = a.corpus.stats();
        let distinct = |p: Property| a.corpus.stickers().iter().map(|s| s.property(p)).filter(|v| !v.is_empty()).collect::<BTreeSet<_>>().len();
        prop_assert_eq!(stats.distinct_ips, distinct(Property::Ip));
        prop_assert_eq!(stats.distinct_entities, distinct(Property::Entity));
        prop_assert_eq!(stats.distinct_styles, distinct(Property::Style));
    }

    #[test]
    fn hash_vectors_are_unit_and_pooling_shrinks(text in "[a-z]{1,6}( [a-z]{1,6}){0,5}", seed in 0u64..50) {
        let e = Embedder::hash(16, seed);
        for tok in text.split(' ') {
            let n: f64 = e.token_vector(tok).iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-9);
        }
        let pooled: f64 = e.embed_pooled(&text).iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(pooled <= 1.0 + 1e-9);
        prop_assert_eq!(e.embed_pooled(&text), Embedder::hash(16, seed).embed_pooled(&text));
    }

    #[test]
    fn pq_error_separates_and_encode_is_argmin(vs in vectors(40, 8), k in 1usize..6, seed in 0u64..100) {
        let book = train_pq(&vs, 4, k, seed).unwrap();
        prop_assert_eq!(&book, &train_pq(&vs, 4, k, seed).unwrap());
        let total = book.error(&vs).unwrap();
        let parts: f64 = book.subspace_errors(&vs).iter().sum();
        prop_assert!((total - parts).abs() <= 1e-9 * total.max(1.0));
        for v in &vs {
            let code = book.encode(v).unwrap().code;
            for (s, &c) in code.iter().enumerate() {
                let sub = &v[2 * s..2 * s + 2];
                let d = |j: usize| book.centroids[s].row(j).iter().zip(sub).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                prop_assert!((0..k).all(|j| d(c as usize) <= d(j)));
            }
        }
    }

    #[test]
    fn every_sticker_is_reachable_through_each_code(seed in 0u64..200, scheme in prop::sample::select(Scheme::ALL.to_vec())) {
        let data = generate_synthetic(&small_synthetic(seed)).unwrap();
        let emb = Embedder::hash(8, seed);
        let cfg = SchemeConfig { scheme, m: 4, k: 4, ..SchemeConfig::default() };
        let books = train_codebooks(&data.corpus, &emb, &cfg).unwrap();
        let idents = build_identifiers(&data.corpus, &emb, &books).unwrap();
        let index = Index::build(&data.corpus, idents, std::iter::empty(), 15).unwrap();
        for p in PROPERTIES {
            let pi = index.property(p);
            prop_assert!(pi.tree.is_prefix_closed());
            for i in 0..data.corpus.len() {
                let path = index.vocab.code_outputs(index.identifiers.code(i, p));
                let node = pi.tree.walk(&path).unwrap();
                prop_assert!(pi.tree.nodes[node as usize].terminal.is_some());
                prop_assert!(pi.lookup(&path).contains(&(i as u32)));
            }
        }
    }

    #[test]
    fn beam_results_are_complete_paths(
        seqs in prop::collection::vec(prop::collection::vec(1u32..5, 1..=6), 1..60),
        beam in 1usize..30,
        bias in prop::collection::vec(-2.0f64..2.0, 5),
    ) {
        let tree = PrefixTree::from_sequences(seqs.iter().map(Vec::as_slice));
        let mut sc = |prefix: &[u32]| {
            let z: Vec<f64> = bias.iter().enumerate().map(|(i, b)| b * (1 + prefix.len() % (i + 1)) as f64).collect();
            let lse = z.iter().map(|x| x.exp()).sum::<f64>().ln();
            z.iter().map(|x| x - lse).collect::<Vec<f64>>()
        };
        let got = constrained_beam_search(&mut sc, &tree, beam, 6).unwrap();
        prop_assert_eq!(got.len(), beam.min(tree.codes.len()));
        for h in &got {
            prop_assert!(tree.codes.contains(&h.tokens));
        }
        prop_assert!(got.windows(2).all(|w| w[0].log_prob >= w[1].log_prob));
    }

    #[test]
    fn attention_weights_are_a_distribution(
        keys in prop::collection::vec(-2.0f64..2.0, 4..=24),
        q in prop::collection::vec(-2.0f64..2.0, 4),
        w in prop::collection::vec(-1.0f64..1.0, 16),
    ) {
        let rows = keys.len() / 4;
        let k = Mat::from_vec(rows, 4, keys[..rows * 4].to_vec());
        let proj = Mat::from_vec(4, 4, w);
        let (_, weights) = attention(&q, &k, &k, &proj, &proj, &proj).unwrap();
        prop_assert_eq!(weights.len(), rows);
        prop_assert!(weights.iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn detected_and_parsed_rankings_are_permutations(query in "[a-z ]{0,30}", reply in "[ -~]{0,40}") {
        let data = generate_synthetic(&small_synthetic(3)).unwrap();
        let lex = Lexicons::from_corpus(&data.corpus);
        let r = detect_rule_based(&query, &lex);
        prop_assert_eq!(r, detect_rule_based(&query, &lex));
        let set: BTreeSet<Property> = r.order().iter().copied().collect();
        prop_assert_eq!(set.len(), 5);
        if let Ok(p) = parse_llm_ranking(&reply) {
            prop_assert_eq!(p.order().iter().copied().collect::<BTreeSet<_>>().len(), 5);
        }
    }

    #[test]
    fn shuffled_orders_round_trip_through_symbols(order in Just(PROPERTIES.to_vec()).prop_shuffle()) {
        let r = IntentRanking::new(&order).unwrap();
        prop_assert_eq!(IntentRanking::from_symbols(&r.symbols()).unwrap(), r);
        for (i, p) in order.iter().enumerate() {
            prop_assert_eq!(r.rank(*p), i + 1);
        }
    }

    #[test]
    fn interleaving_keeps_each_lists_order(a in ids("x", 10), b in ids("x", 10), p_first in any::<bool>()) {
        let first = if p_first { Owner::P } else { Owner::B };
        let slots = interleave_with(&a, &b, first);
        let union: BTreeSet<&String> = a.iter().chain(&b).collect();
        prop_assert_eq!(slots.len(), union.len());
        for (owner, list) in [(Owner::P, &a), (Owner::B, &b)] {
            let drafted: Vec<&String> = slots.iter().filter(|s| s.owner == owner).map(|s| &s.sticker_id).collect();
            let positions: Vec<usize> = drafted.iter().map(|d| list.iter().position(|x| x == *d).unwrap()).collect();
            prop_assert!(positions.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn online_deltas_are_bounded(a in ids("s", 10), b in ids("s", 10), rel in ids("s", 8), seed in 0u64..100) {
        let q = QueryJudgments { group: UserGroup::from_index(2), query: "q".into(), relevant_ids: rel.into_iter().collect() };
        let cfg = OnlineConfig { sessions: 40, clicks: ClickModelConfig { irrelevant_click: 0.1, seed, ..ClickModelConfig::default() }, ..OnlineConfig::default() };
        let sessions: Vec<SessionRecord> =
            simulate_sessions(&mut |_| a.clone(), &mut |_| b.clone(), std::slice::from_ref(&q), &cfg).unwrap();
        let again = simulate_sessions(&mut |_| a.clone(), &mut |_| b.clone(), std::slice::from_ref(&q), &cfg).unwrap();
        prop_assert_eq!(&sessions, &again);
        let ctr = delta_ctr(&sessions).unwrap();
        let verdicts: Vec<_> = sessions.iter().map(SessionRecord::verdict).collect();
        let gsb = delta_gsb(&verdicts).unwrap();
        prop_assert!((-1.0..=1.0).contains(&ctr));
        prop_assert!((-1.0..=1.0).contains(&gsb));
    }
}
