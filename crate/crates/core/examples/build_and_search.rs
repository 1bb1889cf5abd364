//! Index a synthetic corpus in memory and run each query form against it.
//!
//! cargo run --example build_and_search

use odys::corpus::{synthetic_corpus, SyntheticConfig};
use odys::index::{
    search_limited_embedded, search_limited_join, search_multi, search_single, Attribute,
    IndexConfig, IrIndex,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let docs = synthetic_corpus(&SyntheticConfig {
        docs: 20_000,
        ..SyntheticConfig::default()
    });
    let idx = IrIndex::from_corpus(docs, IndexConfig::default())?;
    println!(
        "{} docs, {} terms",
        idx.docs().len(),
        idx.content_dictionary().len()
    );

    for t in search_single(&idx, "w12", 5)? {
        println!("single  {:<10} {:.4}", t.doc_key, t.rank);
    }
    for t in search_multi(&idx, &["w3", "w40"], 5)? {
        println!("multi   {:<10} {:.4}", t.doc_key, t.rank);
    }
    // Same answer either way; the embedded form filters postings in place,
    // the join intersects with the list of the site's documents.
    let emb = search_limited_embedded(&idx, &["w7"], Attribute::SiteId, 17, 5)?;
    let join = search_limited_join(&idx, &["w7"], Attribute::SiteId, 17, 5)?;
    assert_eq!(emb, join);
    for t in emb {
        println!("site 17 {:<10} {:.4}", t.doc_key, t.rank);
    }
    Ok(())
}
