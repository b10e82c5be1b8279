mod common;

use proptest::prelude::*;

use daisy_core::infer::{enumerate_attempts, mark_positions, normalize_candidate, strip_markers, AttemptOrder, CandidateSet};
use daisy_core::localize::validate_points;
use daisy_core::mutator::classify_assertion;
use daisy_core::retrieve::{filter_error_message, ExampleDb, ExampleEntry, RetrievalConfig, RetrievalQuery, RetrievalStrategy};
use daisy_core::source::{extract_assertions, insert_lines, remove_assertions};
use daisy_core::{InsertEdit, InsertionPoint, PointSource, SourceProgram};

fn programs() -> Vec<SourceProgram> {
    common::corpus()
}

proptest! {
    #[test]
    fn removal_then_restore_is_identity(pi in 0usize..5, mask in any::<u16>(), crlf in any::<bool>()) {
        let base = &programs()[pi];
        let p = if crlf { SourceProgram::from_text(base.path(), &base.to_text().replace('\n', "\r\n")) } else { base.clone() };
        let recs: Vec<_> = p.method_spans().unwrap().iter().flat_map(|s| extract_assertions(&p, s)).collect();
        let chosen: Vec<_> = recs.iter().enumerate().filter(|(k, _)| mask & (1 << k) != 0).map(|(_, r)| r.clone()).collect();
        let (failing, map) = remove_assertions(&p, &chosen).unwrap();
        prop_assert_eq!(failing.len() + chosen.iter().map(|r| r.line_count()).sum::<usize>(), p.len());
        for r in &chosen {
            prop_assert_eq!(map.get(r.start_line), None);
        }
        let mut shift = 0;
        let edits: Vec<InsertEdit> = chosen
            .iter()
            .map(|r| {
                let e = InsertEdit::restore(r, r.start_line - shift);
                shift += r.line_count();
                e
            })
            .collect();
        prop_assert_eq!(insert_lines(&failing, &edits).unwrap().to_text(), p.to_text());
    }

    #[test]
    fn arbitrary_text_round_trips(lines in proptest::collection::vec("[ -~]{0,20}", 0..30), crlf in any::<bool>(), trailing in any::<bool>()) {
        let nl = if crlf { "\r\n" } else { "\n" };
        let mut text = lines.join(nl);
        if trailing && !lines.is_empty() {
            text.push_str(nl);
        }
        prop_assert_eq!(SourceProgram::from_text("p.dfy", &text).to_text(), text);
    }

    #[test]
    fn classification_ignores_whitespace_runs(pick in 0usize..13, spaces in proptest::collection::vec("[ \t]{1,4}", 16)) {
        let texts = [
            "assert a[0] == 3;",
            "assert |s| > 0;",
            "assert x >= 0;",
            "assert Sorted(q);",
            "assert a[..] == [3, 5, 1];",
            "assert k in m;",
            "assert (a + b)[1..] == a[1..] + b;",
            "assert i == 4 && j == 7 by { assert q[0] < 10; }",
            "assert c == i;",
            "assert s[i] <= s[j];",
            "assert n == 10;",
            "assert forall k :: 0 <= k < |s| ==> s[k] > 0;",
            "assert f(x) == 2 && g(y) == 3;",
        ];
        let text = texts[pick];
        let mut respaced = String::new();
        for (k, word) in text.split(' ').enumerate() {
            if k > 0 {
                respaced.push_str(&spaces[k % spaces.len()]);
            }
            respaced.push_str(word);
        }
        for p in programs() {
            for span in p.method_spans().unwrap() {
                prop_assert_eq!(classify_assertion(text, &span), classify_assertion(&respaced, &span));
            }
        }
    }

    #[test]
    fn error_filter_is_idempotent(raw in "([ -~]{0,40}\n){0,8}") {
        let once = filter_error_message(&raw);
        prop_assert_eq!(filter_error_message(&once), once.clone());
    }

    #[test]
    fn error_filter_is_idempotent_on_verifier_like_text(
        file in "[a-z]{1,8}",
        line in 1usize..500,
        col in 1usize..80,
        msg in "[a-z ]{1,30}",
        ms in 1u32..9999,
    ) {
        let raw = format!("/tmp/x/{file}.dfy({line},{col}): Error: {msg}\n  {line} |   assert x;\n\nDafny program verifier finished with 0 verified, 1 error\nElapsed: {ms} ms\n");
        let once = filter_error_message(&raw);
        let (name, pos) = (format!("{file}.dfy"), format!("({line},{col})"));
        prop_assert!(!once.contains(&name));
        prop_assert!(!once.contains(&pos));
        prop_assert_eq!(filter_error_message(&once), once.clone());
    }

    #[test]
    fn selection_respects_k_origin_and_order(
        seed in any::<u64>(),
        k in 1usize..8,
        vecs in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 4), 24),
        alpha_step in 0usize..5,
    ) {
        let nonzero = |v: &Vec<f64>| { let mut v = v.clone(); v[0] += 2.0; v };
        let entries: Vec<ExampleEntry> = (0..10)
            .map(|i| ExampleEntry {
                id: format!("e{i}"),
                origin: (format!("f{}.dfy", i % 3), "M".into()),
                method_text: format!("method M{i} assert x{} ", i % 4),
                filtered_error_text: format!("error kind{}", i % 2),
                fixing_assertions: vec![],
                code_embedding: nonzero(&vecs[i]),
                error_embedding: nonzero(&vecs[10 + i]),
            })
            .collect();
        let db = ExampleDb::new(entries);
        let query = RetrievalQuery {
            id: "q".into(),
            origin: ("f0.dfy".into(), "M".into()),
            method_text: "method M assert x1".into(),
            filtered_error_text: "error kind0".into(),
            code_embedding: Some(nonzero(&vecs[20])),
            error_embedding: Some(nonzero(&vecs[21])),
        };
        let alpha = alpha_step as f64 / 4.0;
        for s in [RetrievalStrategy::Random { seed }, RetrievalStrategy::Tfidf, RetrievalStrategy::Embed, RetrievalStrategy::MulEmb { alpha }] {
            let cfg = RetrievalConfig::new(s, k).unwrap();
            let got = db.select(&query, &cfg).unwrap();
            prop_assert_eq!(got.len(), k.min(6));
            prop_assert!(got.iter().all(|e| e.entry.origin != query.origin));
            if !matches!(s, RetrievalStrategy::Random { .. }) {
                prop_assert!(got.windows(2).all(|w| w[0].score >= w[1].score));
            }
            prop_assert_eq!(db.select(&query, &cfg).unwrap(), got);
        }
    }

    #[test]
    fn enumeration_bounds(n in 0usize..12, m in 0usize..12, cross in any::<bool>()) {
        let points = [InsertionPoint::new(3, PointSource::Llm), InsertionPoint::new(5, PointSource::Llm)];
        let a: Vec<String> = (0..n).map(|i| format!("assert a{i};")).collect();
        let b: Vec<String> = (0..m).map(|i| format!("assert b{i};")).collect();
        let set = CandidateSet { per_position: vec![a, b] };
        let order = if cross { AttemptOrder::CrossProduct } else { AttemptOrder::IndexAligned };
        let got = enumerate_attempts(&points, &set, order);
        let want = if cross { n * m + n + m } else { 3 * n.min(m) + n.max(m) - n.min(m) };
        prop_assert_eq!(got.len(), want);
        for (i, t) in got.iter().enumerate() {
            prop_assert_eq!(t.index, i);
            prop_assert!(t.inserted().count() >= 1);
        }
    }

    #[test]
    fn validated_points_are_few_sorted_and_inside(lines in proptest::collection::vec(-5i64..40, 0..8)) {
        let p = &programs()[0];
        let span = p.method_spans().unwrap().into_iter().next().unwrap();
        let (points, rejected) = validate_points(&lines, &span, PointSource::Llm);
        prop_assert!(points.len() <= 2);
        prop_assert!(points.windows(2).all(|w| w[0].line < w[1].line));
        prop_assert!(points.iter().all(|q| span.accepts_insertion(q.line)));
        prop_assert_eq!(points.len() + rejected.len(), lines.len());
    }

    #[test]
    fn markers_strip_back_to_the_original(pi in 0usize..5, a in 0usize..60, b in 0usize..60) {
        let p = &programs()[pi];
        let mut lines = vec![a % (p.len() + 1), b % (p.len() + 1)];
        lines.sort();
        lines.dedup();
        let points: Vec<InsertionPoint> = lines.iter().map(|&l| InsertionPoint::new(l, PointSource::Llm)).collect();
        let marked = mark_positions(p, &points).unwrap();
        prop_assert_eq!(marked.len(), p.len() + points.len());
        prop_assert_eq!(strip_markers(&marked).to_text(), p.to_text());
    }

    #[test]
    fn candidate_normalization_is_idempotent(raw in "[ -~]{0,40}") {
        if let Some(once) = normalize_candidate(&raw) {
            prop_assert_eq!(normalize_candidate(&once), Some(once.clone()));
        }
    }
}
