mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use common::{words, BruteForce};
use odys::corpus::{tokenize, vocabulary_word, Document};
use odys::index::{
    assign_doc_ids, search_limited_embedded, search_limited_join, search_multi, search_single,
    Attribute, Cursor, DocId, IndexConfig, IndexError, IndexReader, IrIndex, Posting, PostingList,
};
use odys::qlang::{Query, Scope, SearchCondition};

fn doc(key: &str, rank: f64, site: u64, content: &str) -> Document {
    Document {
        key: key.into(),
        url: format!("http://{key}"),
        site_id: site,
        domain_id: site % 7,
        content: content.into(),
        rank,
    }
}

#[test]
fn doc_ids_follow_rank_then_key() {
    let ids = assign_doc_ids(vec![
        doc("a", 0.9, 0, ""),
        doc("b", 0.5, 0, ""),
        doc("c", 0.7, 0, ""),
    ])
    .unwrap();
    let keys: Vec<&str> = ids.iter().map(|(_, d)| d.key.as_str()).collect();
    assert_eq!(keys, ["a", "c", "b"]);
    assert!(assign_doc_ids(vec![]).unwrap().is_empty());
    assert!(matches!(
        assign_doc_ids(vec![doc("a", 0.1, 0, ""), doc("a", 0.2, 0, "")]),
        Err(IndexError::DuplicateKey(k)) if k == "a"
    ));
    assert!(matches!(
        assign_doc_ids(vec![doc("a", f64::NAN, 0, "")]),
        Err(IndexError::NonFiniteRank { .. })
    ));
}

#[test]
fn doc_ids_match_full_sort() {
    let docs = common::corpus(1000, 1);
    let mut want: Vec<(f64, String)> = docs.iter().map(|d| (d.rank, d.key.clone())).collect();
    want.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let got: Vec<(f64, String)> = assign_doc_ids(docs)
        .unwrap()
        .into_iter()
        .map(|(_, d)| (d.rank, d.key))
        .collect();
    assert_eq!(got, want);
}

#[test]
fn offsets_and_scope_terms() {
    let idx = IrIndex::from_corpus(
        vec![
            doc("d0", 0.9, 6000, "x y x"),
            doc("d1", 0.5, 1, "y"),
            doc("d2", 0.1, 2, "z"),
        ],
        IndexConfig::default(),
    )
    .unwrap();
    let x = idx.posting_list("x").unwrap();
    assert_eq!(x.postings.len(), 1);
    assert_eq!(
        (x.postings[0].doc_id, x.postings[0].offsets.clone()),
        (DocId(0), vec![0, 2])
    );
    let site = idx.scope_dictionary(Attribute::SiteId).unwrap();
    assert_eq!(site["site:6000"].postings[0].doc_id, DocId(0));
}

#[test]
fn posting_counts_match_incidences() {
    let docs = common::corpus(2000, 2);
    let incidences: usize = docs.iter().map(|d| words(&d.content).len()).sum();
    let idx = IrIndex::from_corpus(docs, IndexConfig::default()).unwrap();
    let total: usize = idx
        .content_dictionary()
        .values()
        .map(PostingList::count)
        .sum();
    assert_eq!(total, incidences);
    for list in idx.content_dictionary().values() {
        assert!(list.postings.windows(2).all(|w| w[0].doc_id < w[1].doc_id));
        for s in &list.skips {
            assert_eq!(list.postings[s.ordinal as usize].doc_id, s.doc_id);
        }
    }
}

#[test]
fn skip_interval_below_two_rejected() {
    let cfg = IndexConfig {
        skip_interval: 1,
        ..IndexConfig::default()
    };
    assert!(matches!(
        IrIndex::from_corpus(vec![], cfg),
        Err(IndexError::SkipInterval(1))
    ));
}

#[test]
fn single_keyword_matches_brute_force() {
    let docs = common::corpus(10_000, 3);
    let oracle = BruteForce::new(&docs);
    let idx = IrIndex::from_corpus(docs, IndexConfig::default()).unwrap();
    for i in 0..100 {
        let w = vocabulary_word(i * 17 % 2000);
        for k in [1u32, 10, 1000] {
            let got: Vec<(String, f64)> = search_single(&idx, &w, k as usize)
                .unwrap()
                .into_iter()
                .map(|t| (t.doc_key, t.rank))
                .collect();
            assert_eq!(
                got,
                oracle.search(&Query::single(&w, k).unwrap()),
                "{w} top-{k}"
            );
        }
    }
    assert!(search_single(&idx, "absent", 10).unwrap().is_empty());
}

#[test]
fn multi_keyword_matches_brute_force() {
    let docs = common::corpus(3000, 4);
    let oracle = BruteForce::new(&docs);
    let idx = IrIndex::from_corpus(docs, IndexConfig::default()).unwrap();
    for i in 0..50 {
        let kws = vec![vocabulary_word(i), vocabulary_word(i * 3 + 1)];
        if kws[0] == kws[1] {
            continue;
        }
        let q = Query::with_condition(SearchCondition::Multi, kws.clone(), None, 50).unwrap();
        let got: Vec<(String, f64)> = search_multi(&idx, &kws, 50)
            .unwrap()
            .into_iter()
            .map(|t| (t.doc_key, t.rank))
            .collect();
        assert_eq!(got, oracle.search(&q));
    }
}

#[test]
fn limited_search_edge_cases() {
    let docs: Vec<Document> = (0..20)
        .map(|i| doc(&format!("d{i:02}"), 1.0 - i as f64 / 40.0, 5, "same words"))
        .collect();
    let idx = IrIndex::from_corpus(docs, IndexConfig::default()).unwrap();
    let all = search_single(&idx, "same", 7).unwrap();
    assert_eq!(
        search_limited_embedded(&idx, &["same"], Attribute::SiteId, 5, 7).unwrap(),
        all
    );
    assert_eq!(
        search_limited_join(&idx, &["same"], Attribute::SiteId, 5, 7).unwrap(),
        all
    );
    assert!(
        search_limited_embedded(&idx, &["same"], Attribute::SiteId, 6, 7)
            .unwrap()
            .is_empty()
    );
    assert!(
        search_limited_join(&idx, &["same"], Attribute::SiteId, 6, 7)
            .unwrap()
            .is_empty()
    );

    let bare = IndexConfig {
        embed: vec![],
        scope_fields: vec![],
        ..IndexConfig::default()
    };
    let idx = IrIndex::from_corpus(vec![doc("a", 1.0, 1, "w")], bare).unwrap();
    assert!(matches!(
        search_limited_embedded(&idx, &["w"], Attribute::SiteId, 1, 1),
        Err(IndexError::UnsupportedPredicate(Attribute::SiteId))
    ));
    assert!(matches!(
        search_limited_join(&idx, &["w"], Attribute::DomainId, 1, 1),
        Err(IndexError::UnknownScopeField(Attribute::DomainId))
    ));
}

#[test]
fn limited_multi_keyword_strategies_agree() {
    let docs = common::corpus(3000, 5);
    let oracle = BruteForce::new(&docs);
    let idx = IrIndex::from_corpus(docs, IndexConfig::default()).unwrap();
    for domain in 0..20u64 {
        let kws = [vocabulary_word(0), vocabulary_word(domain as usize + 2)];
        let q = Query::with_condition(
            SearchCondition::Limited,
            kws.to_vec(),
            Some(Scope {
                field: Attribute::DomainId,
                value: domain,
            }),
            10,
        )
        .unwrap();
        let want = oracle.search(&q);
        let emb = search_limited_embedded(&idx, &kws, Attribute::DomainId, domain, 10).unwrap();
        let join = search_limited_join(&idx, &kws, Attribute::DomainId, domain, 10).unwrap();
        assert_eq!(emb, join);
        assert_eq!(
            emb.into_iter()
                .map(|t| (t.doc_key, t.rank))
                .collect::<Vec<_>>(),
            want
        );
    }
}

#[test]
fn tokens_are_lowercase_alphanumeric_runs() {
    for d in common::corpus(50, 6) {
        let t: std::collections::HashSet<String> = tokenize(&d.content).into_iter().collect();
        assert_eq!(t, words(&d.content));
    }
}

fn list(ids: &[u32], s: usize) -> PostingList {
    PostingList::new(
        "t".into(),
        ids.iter()
            .map(|&d| Posting {
                doc_id: DocId(d),
                offsets: vec![],
                embedded: vec![],
            })
            .collect(),
        s,
    )
}

fn sorted_ids() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::btree_set(0u32..5000, 0..400).prop_map(|s| s.into_iter().collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn seek_matches_linear_scan(ids in sorted_ids(), targets in prop::collection::vec(0u32..5200, 1..20)) {
        let mut targets = targets;
        targets.sort_unstable();
        for s in [2usize, 16, 128] {
            let l = list(&ids, s);
            let mut c = Cursor::new(&l);
            let mut prev_ordinal = 0;
            for &t in &targets {
                let want = ids.iter().copied().find(|&d| d >= t);
                let got = c.seek_geq(DocId(t)).unwrap().map(|d| d.0);
                prop_assert_eq!(got, want);
                prop_assert!(c.ordinal() >= prev_ordinal);
                prev_ordinal = c.ordinal();
            }
        }
    }

    #[test]
    fn join_is_independent_of_skip_interval(a in sorted_ids(), b in sorted_ids(), k in 1usize..500) {
        let mut results = BTreeMap::new();
        for s in [2usize, 16, 128] {
            let (la, lb) = (list(&a, s), list(&b, s));
            let (ids, _) = odys::index::zigzag_join(vec![Cursor::new(&la), Cursor::new(&lb)], k).unwrap();
            results.insert(s, ids);
        }
        prop_assert_eq!(&results[&2], &results[&16]);
        prop_assert_eq!(&results[&2], &results[&128]);
        let want: Vec<u32> = a.iter().copied().filter(|d| b.binary_search(d).is_ok()).take(k).collect();
        prop_assert_eq!(results[&2].iter().map(|d| d.0).collect::<Vec<_>>(), want);
    }
}

#[test]
fn small_join_examples() {
    let (a, b) = (list(&[1, 3, 5], 2), list(&[2, 3, 5], 2));
    let (ids, _) = odys::index::zigzag_join(vec![Cursor::new(&a), Cursor::new(&b)], 10).unwrap();
    assert_eq!(ids, [DocId(3), DocId(5)]);
    let (c, d) = (list(&[1, 2], 2), list(&[3, 4], 2));
    assert!(
        odys::index::zigzag_join(vec![Cursor::new(&c), Cursor::new(&d)], 10)
            .unwrap()
            .0
            .is_empty()
    );
}

#[test]
fn reader_trait_exposes_segment_shape() {
    let idx = IrIndex::from_corpus(common::corpus(100, 8), IndexConfig::default()).unwrap();
    assert_eq!(idx.doc_count(), 100);
    assert_eq!(idx.skip_interval(), 128);
    assert_eq!(idx.embed_spec(), Attribute::ALL);
    let first = idx.doc_meta(DocId(0));
    assert!(idx.docs().iter().all(|d| d.rank <= first.rank));
}
