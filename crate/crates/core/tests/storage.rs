mod common;

use std::sync::OnceLock;

use proptest::prelude::*;

use common::LruSim;
use odys::corpus::vocabulary_word;
use odys::index::{search_multi, search_single, IndexConfig, IrIndex};
use odys::storage::{
    encode_index, load_index, save_index, IndexFileSummary, StorageError, PAGE_SIZE, TAG_POST,
};

fn index(docs: usize, seed: u64) -> IrIndex {
    IrIndex::from_corpus(common::corpus(docs, seed), IndexConfig::default()).unwrap()
}

#[test]
fn empty_index_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.odx");
    let idx = IrIndex::from_corpus(vec![], IndexConfig::default()).unwrap();
    let summary = save_index(&idx, &path).unwrap();
    assert_eq!(summary.dictionary_entries, 0);
    let disk = load_index(&path, summary.pinned_bytes).unwrap();
    assert_eq!(disk.to_index().unwrap(), idx);
}

#[test]
fn double_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("seg.odx");
    let idx = index(10_000, 1);
    let summary = save_index(&idx, &path).unwrap();
    let first = std::fs::read(&path).unwrap();
    assert_eq!(first.len() as u64, summary.file_bytes);
    assert_eq!(&first[..4], b"ODYX");
    let disk = load_index(&path, summary.file_bytes).unwrap();
    let back = disk.to_index().unwrap();
    assert_eq!(back, idx);
    assert_eq!(encode_index(&back).unwrap(), first);
}

#[test]
fn corruption_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("seg.odx");
    let summary = save_index(&index(300, 2), &path).unwrap();
    let good = std::fs::read(&path).unwrap();

    let mut flipped = good.clone();
    flipped[good.len() / 2] ^= 0x40;
    std::fs::write(&path, &flipped).unwrap();
    assert!(matches!(
        load_index(&path, u64::MAX),
        Err(StorageError::Checksum { .. })
    ));

    let mut tail = good.clone();
    let n = tail.len();
    tail[n - 1] ^= 1;
    std::fs::write(&path, &tail).unwrap();
    assert!(matches!(
        load_index(&path, u64::MAX),
        Err(StorageError::Checksum { .. })
    ));

    std::fs::write(&path, &good[..10]).unwrap();
    assert!(load_index(&path, u64::MAX).is_err());

    std::fs::write(&path, &good).unwrap();
    let err = load_index(&path, summary.pinned_bytes - 1).unwrap_err();
    assert!(matches!(err, StorageError::BufferTooSmall { .. }), "{err}");
    assert!(err.to_string().contains(&summary.pinned_bytes.to_string()));

    let missing = dir.path().join("nope.odx");
    let err = load_index(&missing, u64::MAX).unwrap_err();
    assert!(err.to_string().contains("nope.odx"));
}

#[test]
fn zero_cache_misses_every_time_full_cache_once() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("seg.odx");
    let summary = save_index(&index(3000, 3), &path).unwrap();

    let tight = load_index(&path, summary.pinned_bytes).unwrap();
    assert_eq!(tight.buffer_stats().misses, 0);
    assert_eq!(tight.buffer_stats().hits, 0);
    search_single(&tight, "w0", 10).unwrap();
    let once = tight.buffer_stats().misses;
    assert!(once >= 1);
    search_single(&tight, "w0", 10).unwrap();
    assert_eq!(tight.buffer_stats().misses, 2 * once);
    assert_eq!(tight.buffer_stats().resident_bytes, summary.pinned_bytes);

    let roomy = load_index(&path, summary.file_bytes).unwrap();
    search_multi(&roomy, &["w0", "w5"], 100).unwrap();
    let misses = roomy.buffer_stats().misses;
    search_multi(&roomy, &["w0", "w5"], 100).unwrap();
    assert_eq!(roomy.buffer_stats().misses, misses);
    assert!(roomy.buffer_stats().pinned_lookups >= 4);
}

#[test]
fn answers_do_not_depend_on_buffer_size() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("seg.odx");
    let mem = index(5000, 4);
    let summary = save_index(&mem, &path).unwrap();
    let tight = load_index(&path, summary.pinned_bytes).unwrap();
    let huge = load_index(&path, u64::MAX / 2).unwrap();
    for i in 0..60 {
        let a = vocabulary_word(i);
        let b = vocabulary_word(i * 7 + 3);
        for k in [1, 10, 1000] {
            let want = search_single(&mem, &a, k).unwrap();
            assert_eq!(search_single(&tight, &a, k).unwrap(), want);
            assert_eq!(search_single(&huge, &a, k).unwrap(), want);
            let want = search_multi(&mem, &[&a, &b], k).unwrap();
            assert_eq!(search_multi(&tight, &[&a, &b], k).unwrap(), want);
            assert_eq!(search_multi(&huge, &[&a, &b], k).unwrap(), want);
        }
    }
}

fn shared_segment() -> &'static (tempfile::TempDir, IndexFileSummary) {
    static SEG: OnceLock<(tempfile::TempDir, IndexFileSummary)> = OnceLock::new();
    SEG.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let summary = save_index(&index(2000, 5), &dir.path().join("seg.odx")).unwrap();
        (dir, summary)
    })
}

fn post_len(summary: &IndexFileSummary) -> u64 {
    summary
        .sections
        .iter()
        .find(|s| s.tag == TAG_POST)
        .unwrap()
        .length
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pool_follows_lru_trace(
        pages_cap in 1u64..6,
        reads in prop::collection::vec((0.0f64..1.0, 1usize..3000), 1..200),
    ) {
        let (_, summary) = shared_segment();
        let path = &summary.path;
        let len = post_len(summary);
        let cap = pages_cap * PAGE_SIZE as u64;
        let disk = load_index(path, summary.pinned_bytes + cap).unwrap();
        let mut sim = LruSim::new(cap, PAGE_SIZE as u64, len);
        for (at, n) in reads {
            let off = (at * len as f64) as u64;
            let n = (n as u64).min(len - off).max(1);
            let off = off.min(len - n);
            let mut buf = vec![0u8; n as usize];
            disk.pool().read(off, &mut buf).unwrap();
            for p in off / PAGE_SIZE as u64..=(off + n - 1) / PAGE_SIZE as u64 {
                sim.touch(p);
            }
        }
        let st = disk.buffer_stats();
        prop_assert_eq!((st.hits, st.misses, st.evictions), (sim.hits, sim.misses, sim.evictions));
        prop_assert_eq!(disk.pool().resident_pages(), sim.resident());
        prop_assert!(st.resident_bytes <= st.capacity_bytes + st.pinned_bytes);
    }
}
