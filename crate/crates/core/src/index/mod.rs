//! The IR index: per-keyword posting lists in docId order with a sparse skip
//! sub-index, embedded structured attributes, and text-typed scope
//! dictionaries (`site:<id>`, `domain:<id>`).
//!
//! DocIds are assigned in descending rank order, so docId order *is* rank
//! order: the first `k` postings of any list, or the first `k` matches of a
//! docId-ordered intersection, are already the top-k.

mod cursor;
mod search;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io;

use thiserror::Error;

use crate::corpus::{tokenize, Document};

pub use cursor::{zigzag_join, Cursor, Intersection};
pub use search::{
    search_limited_embedded, search_limited_join, search_multi, search_single, TopKItem,
};

pub const DEFAULT_SKIP_INTERVAL: usize = 128;

/// Dense document identifier. Smaller ids have higher rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DocId(pub u32);

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Structured integer attributes of a page that can be embedded into content
/// postings or indexed as text-typed scope terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Attribute {
    SiteId,
    DomainId,
}

impl Attribute {
    pub const ALL: [Attribute; 2] = [Attribute::SiteId, Attribute::DomainId];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::SiteId => "siteId",
            Attribute::DomainId => "domainId",
        }
    }

    /// Name of the text-typed twin column, e.g. `siteIdText`.
    pub fn text_field(self) -> &'static str {
        match self {
            Attribute::SiteId => "siteIdText",
            Attribute::DomainId => "domainIdText",
        }
    }

    pub fn scope_term(self, value: u64) -> String {
        match self {
            Attribute::SiteId => format!("site:{value}"),
            Attribute::DomainId => format!("domain:{value}"),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Attribute::SiteId => 0,
            Attribute::DomainId => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Attribute> {
        match code {
            0 => Some(Attribute::SiteId),
            1 => Some(Attribute::DomainId),
            _ => None,
        }
    }

    pub fn value_of(self, doc: &Document) -> u64 {
        match self {
            Attribute::SiteId => doc.site_id,
            Attribute::DomainId => doc.domain_id,
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Posting {
    pub doc_id: DocId,
    /// Token positions, strictly increasing.
    pub offsets: Vec<u32>,
    /// Values aligned with the index's embed spec.
    pub embedded: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkipEntry {
    pub doc_id: DocId,
    pub ordinal: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostingList {
    pub keyword: String,
    pub postings: Vec<Posting>,
    pub skips: Vec<SkipEntry>,
}

impl PostingList {
    pub fn new(keyword: String, postings: Vec<Posting>, skip_interval: usize) -> PostingList {
        let skips = postings
            .iter()
            .enumerate()
            .step_by(skip_interval)
            .map(|(i, p)| SkipEntry {
                doc_id: p.doc_id,
                ordinal: i as u32,
            })
            .collect();
        PostingList {
            keyword,
            postings,
            skips,
        }
    }

    pub fn count(&self) -> usize {
        self.postings.len()
    }
}

/// Random access to one posting list, in memory or behind a buffer pool.
pub trait PostingSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn skips(&self) -> &[SkipEntry];

    fn doc_id(&self, ordinal: usize) -> io::Result<DocId>;

    /// Embedded attribute value; `slot` indexes the embed spec.
    fn embedded(&self, ordinal: usize, slot: usize) -> io::Result<u64>;

    fn offsets(&self, ordinal: usize) -> io::Result<Vec<u32>>;
}

impl PostingSource for &PostingList {
    fn len(&self) -> usize {
        self.postings.len()
    }

    fn skips(&self) -> &[SkipEntry] {
        &self.skips
    }

    fn doc_id(&self, ordinal: usize) -> io::Result<DocId> {
        Ok(self.postings[ordinal].doc_id)
    }

    fn embedded(&self, ordinal: usize, slot: usize) -> io::Result<u64> {
        Ok(self.postings[ordinal].embedded[slot])
    }

    fn offsets(&self, ordinal: usize) -> io::Result<Vec<u32>> {
        Ok(self.postings[ordinal].offsets.clone())
    }
}

/// What a result needs to know about a document.
#[derive(Debug, Clone, PartialEq)]
pub struct DocMeta {
    pub key: String,
    pub rank: f64,
}

/// Read access shared by the in-memory index and the on-disk handle.
pub trait IndexReader {
    type List<'a>: PostingSource
    where
        Self: 'a;

    fn embed_spec(&self) -> &[Attribute];

    fn scope_fields(&self) -> &[Attribute];

    fn skip_interval(&self) -> usize;

    fn doc_count(&self) -> usize;

    fn doc_meta(&self, id: DocId) -> &DocMeta;

    fn content_list(&self, token: &str) -> Option<Self::List<'_>>;

    /// Looks up `<prefix>:<value>` in the scope dictionary of `field`.
    fn scope_list(&self, field: Attribute, value: u64) -> Option<Self::List<'_>>;
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("duplicate docKey {0:?}")]
    DuplicateKey(String),
    #[error("document {key:?} has non-finite rank {rank}")]
    NonFiniteRank { key: String, rank: f64 },
    #[error("skip interval must be at least 2, got {0}")]
    SkipInterval(usize),
    #[error("documents must carry dense docIds in order; position {position} holds {found}")]
    DocIdOrder { position: usize, found: DocId },
    #[error("attribute {0} is not embedded in content postings")]
    UnsupportedPredicate(Attribute),
    #[error("{0} is not an indexed scope field")]
    UnknownScopeField(Attribute),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("a join needs at least one posting list")]
    NoLists,
    #[error("index read failed: {0}")]
    Io(#[from] io::Error),
}

/// Sorts by rank descending (ties: key ascending) and numbers densely from 0.
pub fn assign_doc_ids(corpus: Vec<Document>) -> Result<Vec<(DocId, Document)>, IndexError> {
    let mut seen = HashSet::with_capacity(corpus.len());
    for d in &corpus {
        if !d.rank.is_finite() {
            return Err(IndexError::NonFiniteRank {
                key: d.key.clone(),
                rank: d.rank,
            });
        }
        if !seen.insert(d.key.as_str()) {
            return Err(IndexError::DuplicateKey(d.key.clone()));
        }
    }
    let mut docs = corpus;
    docs.sort_by(|a, b| b.rank.total_cmp(&a.rank).then_with(|| a.key.cmp(&b.key)));
    Ok(docs
        .into_iter()
        .enumerate()
        .map(|(i, d)| (DocId(i as u32), d))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexConfig {
    /// Attributes copied into every posting.
    pub embed: Vec<Attribute>,
    /// Attributes indexed as text-typed scope terms.
    pub scope_fields: Vec<Attribute>,
    pub skip_interval: usize,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            embed: Attribute::ALL.to_vec(),
            scope_fields: Attribute::ALL.to_vec(),
            skip_interval: DEFAULT_SKIP_INTERVAL,
        }
    }
}

/// In-memory, immutable IR index over one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct IrIndex {
    pub(crate) config: IndexConfig,
    pub(crate) docs: Vec<DocMeta>,
    pub(crate) content: BTreeMap<String, PostingList>,
    pub(crate) scopes: Vec<(Attribute, BTreeMap<String, PostingList>)>,
}

impl IrIndex {
    /// Builds the index from the output of [`assign_doc_ids`].
    pub fn build(docs: &[(DocId, Document)], config: IndexConfig) -> Result<IrIndex, IndexError> {
        if config.skip_interval < 2 {
            return Err(IndexError::SkipInterval(config.skip_interval));
        }
        for (position, (id, _)) in docs.iter().enumerate() {
            if id.0 as usize != position {
                return Err(IndexError::DocIdOrder {
                    position,
                    found: *id,
                });
            }
        }

        let mut content: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut scopes: Vec<(Attribute, BTreeMap<String, Vec<Posting>>)> = config
            .scope_fields
            .iter()
            .map(|&a| (a, BTreeMap::new()))
            .collect();

        for (id, doc) in docs {
            let embedded: Vec<u64> = config.embed.iter().map(|a| a.value_of(doc)).collect();
            // Docs arrive in docId order, so appending keeps every list sorted.
            let mut per_doc: BTreeMap<String, Vec<u32>> = BTreeMap::new();
            for (pos, tok) in tokenize(&doc.content).into_iter().enumerate() {
                per_doc.entry(tok).or_default().push(pos as u32);
            }
            for (tok, offsets) in per_doc {
                content.entry(tok).or_default().push(Posting {
                    doc_id: *id,
                    offsets,
                    embedded: embedded.clone(),
                });
            }
            for (attr, dict) in &mut scopes {
                dict.entry(attr.scope_term(attr.value_of(doc)))
                    .or_default()
                    .push(Posting {
                        doc_id: *id,
                        offsets: Vec::new(),
                        embedded: embedded.clone(),
                    });
            }
        }

        let s = config.skip_interval;
        let finish = |m: BTreeMap<String, Vec<Posting>>| {
            m.into_iter()
                .map(|(k, v)| (k.clone(), PostingList::new(k, v, s)))
                .collect::<BTreeMap<_, _>>()
        };
        Ok(IrIndex {
            docs: docs
                .iter()
                .map(|(_, d)| DocMeta {
                    key: d.key.clone(),
                    rank: d.rank,
                })
                .collect(),
            content: finish(content),
            scopes: scopes.into_iter().map(|(a, m)| (a, finish(m))).collect(),
            config,
        })
    }

    /// Convenience: assign ids then build.
    pub fn from_corpus(corpus: Vec<Document>, config: IndexConfig) -> Result<IrIndex, IndexError> {
        IrIndex::build(&assign_doc_ids(corpus)?, config)
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn docs(&self) -> &[DocMeta] {
        &self.docs
    }

    pub fn posting_list(&self, token: &str) -> Option<&PostingList> {
        self.content.get(token)
    }

    pub fn content_dictionary(&self) -> &BTreeMap<String, PostingList> {
        &self.content
    }

    pub fn scope_dictionary(&self, field: Attribute) -> Option<&BTreeMap<String, PostingList>> {
        self.scopes
            .iter()
            .find(|(a, _)| *a == field)
            .map(|(_, m)| m)
    }
}

impl IndexReader for IrIndex {
    type List<'a> = &'a PostingList;

    fn embed_spec(&self) -> &[Attribute] {
        &self.config.embed
    }

    fn scope_fields(&self) -> &[Attribute] {
        &self.config.scope_fields
    }

    fn skip_interval(&self) -> usize {
        self.config.skip_interval
    }

    fn doc_count(&self) -> usize {
        self.docs.len()
    }

    fn doc_meta(&self, id: DocId) -> &DocMeta {
        &self.docs[id.0 as usize]
    }

    fn content_list(&self, token: &str) -> Option<&PostingList> {
        self.content.get(token)
    }

    fn scope_list(&self, field: Attribute, value: u64) -> Option<&PostingList> {
        self.scope_dictionary(field)?.get(&field.scope_term(value))
    }
}
