//! Write an index file, reopen it with a small buffer pool and watch the
//! cache behave.
//!
//! cargo run --example persist_and_buffer

use odys::corpus::{synthetic_corpus, SyntheticConfig};
use odys::index::{search_single, IndexConfig, IrIndex};
use odys::storage::{load_index, save_index, PAGE_SIZE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("segment.odx");
    let idx = IrIndex::from_corpus(
        synthetic_corpus(&SyntheticConfig::default()),
        IndexConfig::default(),
    )?;
    let summary = save_index(&idx, &path)?;
    println!(
        "{} bytes on disk, {} pinned, {} terms",
        summary.file_bytes, summary.pinned_bytes, summary.dictionary_entries
    );
    for s in &summary.sections {
        println!("  section {} at {} ({} bytes)", s.tag, s.offset, s.length);
    }

    let disk = load_index(&path, summary.pinned_bytes + 16 * PAGE_SIZE as u64)?;
    for pass in 0..2 {
        for i in 0..40 {
            search_single(&disk, &format!("w{i}"), 10)?;
        }
        let st = disk.buffer_stats();
        println!(
            "pass {pass}: {} hits, {} misses, {} evictions",
            st.hits, st.misses, st.evictions
        );
    }
    assert_eq!(
        search_single(&disk, "w5", 100)?,
        search_single(&idx, "w5", 100)?
    );
    Ok(())
}
