//! Merge ranked streams and count comparisons against the tree height.
//!
//! cargo run --example loser_tree_merge

use odys::master::loser_tree_merge;
use odys::model::ceil_log2;
use odys::proto::ResultItem;

fn main() {
    for ns in [2usize, 5, 64, 300] {
        let streams: Vec<Vec<ResultItem>> = (0..ns)
            .map(|s| {
                (0..20)
                    .map(|i| ResultItem {
                        doc_key: format!("s{s}d{i}"),
                        rank: 1.0 / (1 + i * ns + s) as f64,
                    })
                    .collect()
            })
            .collect();
        let k = 10;
        let out = loser_tree_merge(&streams, k).expect("streams are rank ordered");
        println!(
            "ns={ns:<4} height={} build={} replays={} (bound {}), worst replay {}",
            ceil_log2(ns as u32),
            out.build_comparisons,
            out.replay_comparisons,
            k as u32 * ceil_log2(ns as u32),
            out.max_replay
        );
    }
}
