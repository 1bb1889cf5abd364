//! On-disk index files and the buffer-pooled handle that queries them.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! "ODYX" | version u32 | section count u32 | count x (tag u32, offset u64, length u64)
//! META | DOCS | DICT | SKIP | POST
//! checksum u64   (CRC-64/XZ of every preceding byte)
//! ```
//!
//! Loading pins everything except POST in memory. Posting bytes are read on
//! demand in 8 KiB pages through a [`BufferPool`], which is what makes the
//! semi-cold regime reproducible: give the pool the pinned size plus a small
//! slack and nearly every posting access goes to the file.

mod pool;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Read};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crc::{Crc, CRC_64_XZ};
use thiserror::Error;

use crate::index::{
    Attribute, DocId, DocMeta, IndexConfig, IndexReader, IrIndex, Posting, PostingList,
    PostingSource, SkipEntry,
};

pub use pool::{BufferPool, BufferStats, PAGE_SIZE};

pub const MAGIC: &[u8; 4] = b"ODYX";
pub const FORMAT_VERSION: u32 = 1;

pub const TAG_META: u32 = 1;
pub const TAG_DOCS: u32 = 2;
pub const TAG_DICT: u32 = 3;
pub const TAG_SKIP: u32 = 4;
pub const TAG_POST: u32 = 5;

const SECTION_ORDER: [u32; 5] = [TAG_META, TAG_DOCS, TAG_DICT, TAG_SKIP, TAG_POST];
const CONTENT_DICT: u8 = 0xFF;
const CHECKSUM: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: corrupt index file: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("{path}: checksum mismatch (stored {stored:#018x}, computed {computed:#018x})")]
    Checksum {
        path: PathBuf,
        stored: u64,
        computed: u64,
    },
    #[error("buffer of {buffer} bytes cannot hold the {pinned} pinned bytes of the index")]
    BufferTooSmall { buffer: u64, pinned: u64 },
    #[error("cannot encode index: {0}")]
    Encode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Section {
    pub tag: u32,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexFileSummary {
    pub path: PathBuf,
    pub file_bytes: u64,
    pub sections: Vec<Section>,
    pub dictionary_entries: usize,
    /// Bytes that stay resident: header plus every section but POST.
    pub pinned_bytes: u64,
    pub checksum: u64,
}

#[derive(Default)]
struct Buf(Vec<u8>);

impl Buf {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32, StorageError> {
    u32::try_from(v).map_err(|_| StorageError::Encode(format!("{what} {v} exceeds u32")))
}

fn encode_list(
    list: &PostingList,
    embed_n: usize,
    dict: &mut Buf,
    skip: &mut Buf,
    skip_count: &mut u32,
    post: &mut Buf,
) -> Result<(), StorageError> {
    let term = list.keyword.as_bytes();
    let term_len = u16::try_from(term.len())
        .map_err(|_| StorageError::Encode(format!("term of {} bytes", term.len())))?;
    let start = post.0.len() as u64;
    let n = list.postings.len();
    for p in &list.postings {
        post.u32(p.doc_id.0);
    }
    for slot in 0..embed_n {
        for p in &list.postings {
            post.u64(p.embedded[slot]);
        }
    }
    let mut acc = 0usize;
    post.u32(0);
    for p in &list.postings {
        acc += p.offsets.len();
        post.u32(to_u32(acc, "offset count")?);
    }
    for p in &list.postings {
        for &o in &p.offsets {
            post.u32(o);
        }
    }
    dict.u16(term_len);
    dict.bytes(term);
    dict.u32(to_u32(n, "posting count")?);
    dict.u64(start);
    dict.u64(post.0.len() as u64 - start);
    dict.u32(*skip_count);
    dict.u32(to_u32(list.skips.len(), "skip count")?);
    for s in &list.skips {
        skip.u32(s.doc_id.0);
        skip.u32(s.ordinal);
    }
    *skip_count += list.skips.len() as u32;
    Ok(())
}

/// Serializes an index. Deterministic: equal indexes give equal bytes.
pub fn encode_index(index: &IrIndex) -> Result<Vec<u8>, StorageError> {
    let cfg = index.config();
    let embed_n = cfg.embed.len();

    let mut meta = Buf::default();
    meta.u32(to_u32(cfg.skip_interval, "skip interval")?);
    meta.u32(to_u32(index.docs().len(), "document count")?);
    meta.u8(embed_n as u8);
    for a in &cfg.embed {
        meta.u8(a.code());
    }
    meta.u8(cfg.scope_fields.len() as u8);
    for a in &cfg.scope_fields {
        meta.u8(a.code());
    }

    let mut docs = Buf::default();
    for d in index.docs() {
        docs.u64(d.rank.to_bits());
        docs.u32(to_u32(d.key.len(), "key length")?);
        docs.bytes(d.key.as_bytes());
    }

    let mut dict = Buf::default();
    let mut skip = Buf::default();
    let mut post = Buf::default();
    let mut skip_count = 0u32;
    dict.u32(1 + cfg.scope_fields.len() as u32);
    let mut dicts: Vec<(u8, &BTreeMap<String, PostingList>)> =
        vec![(CONTENT_DICT, index.content_dictionary())];
    for &a in &cfg.scope_fields {
        let m = index
            .scope_dictionary(a)
            .ok_or_else(|| StorageError::Encode(format!("missing scope dictionary {a}")))?;
        dicts.push((a.code(), m));
    }
    for (code, m) in dicts {
        dict.u8(code);
        dict.u32(to_u32(m.len(), "dictionary size")?);
        for list in m.values() {
            encode_list(
                list,
                embed_n,
                &mut dict,
                &mut skip,
                &mut skip_count,
                &mut post,
            )?;
        }
    }

    let bodies = [meta.0, docs.0, dict.0, skip.0, post.0];
    let header_len = 12 + 20 * bodies.len() as u64;
    let mut out = Buf::default();
    out.bytes(MAGIC);
    out.u32(FORMAT_VERSION);
    out.u32(bodies.len() as u32);
    let mut offset = header_len;
    for (tag, body) in SECTION_ORDER.iter().zip(&bodies) {
        out.u32(*tag);
        out.u64(offset);
        out.u64(body.len() as u64);
        offset += body.len() as u64;
    }
    for body in &bodies {
        out.bytes(body);
    }
    let sum = CHECKSUM.checksum(&out.0);
    out.u64(sum);
    Ok(out.0)
}

pub fn save_index(index: &IrIndex, path: &Path) -> Result<IndexFileSummary, StorageError> {
    let bytes = encode_index(index)?;
    std::fs::write(path, &bytes).map_err(|source| StorageError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let header = parse_header(&bytes, bytes.len() as u64, path)?;
    Ok(IndexFileSummary {
        path: path.to_path_buf(),
        file_bytes: bytes.len() as u64,
        pinned_bytes: header.pinned_bytes(),
        sections: header.sections,
        dictionary_entries: index.content_dictionary().len(),
        checksum: u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap()),
    })
}

struct Header {
    sections: Vec<Section>,
    header_len: u64,
}

impl Header {
    fn section(&self, tag: u32) -> Section {
        *self
            .sections
            .iter()
            .find(|s| s.tag == tag)
            .expect("validated")
    }

    fn pinned_bytes(&self) -> u64 {
        self.header_len
            + self
                .sections
                .iter()
                .filter(|s| s.tag != TAG_POST)
                .map(|s| s.length)
                .sum::<u64>()
    }
}

fn parse_header(bytes: &[u8], file_len: u64, path: &Path) -> Result<Header, StorageError> {
    let corrupt = |reason: &str| StorageError::Corrupt {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let mut r = Reader::new(&bytes[4..]);
    let version = r.u32().ok_or_else(|| corrupt("truncated header"))?;
    if version != FORMAT_VERSION {
        return Err(corrupt(&format!("unsupported version {version}")));
    }
    let count = r.u32().ok_or_else(|| corrupt("truncated header"))? as usize;
    let header_len = 12 + 20 * count as u64;
    let body_end = file_len.saturating_sub(8);
    let mut sections = Vec::with_capacity(count);
    for _ in 0..count {
        let (Some(tag), Some(offset), Some(length)) = (r.u32(), r.u64(), r.u64()) else {
            return Err(corrupt("truncated section table"));
        };
        if offset < header_len || offset.checked_add(length).is_none_or(|e| e > body_end) {
            return Err(corrupt(&format!("section {tag} out of bounds")));
        }
        sections.push(Section {
            tag,
            offset,
            length,
        });
    }
    for tag in SECTION_ORDER {
        if !sections.iter().any(|s| s.tag == tag) {
            return Err(corrupt(&format!("missing section {tag}")));
        }
    }
    Ok(Header {
        sections,
        header_len,
    })
}

struct Reader<'a> {
    b: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn new(b: &'a [u8]) -> Reader<'a> {
        Reader { b, at: 0 }
    }
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.b.get(self.at..self.at.checked_add(n)?)?;
        self.at += n;
        Some(s)
    }
    fn u8(&mut self) -> Option<u8> {
        Some(self.take(1)?[0])
    }
    fn u16(&mut self) -> Option<u16> {
        Some(u16::from_le_bytes(self.take(2)?.try_into().ok()?))
    }
    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }
    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
    fn done(&self) -> bool {
        self.at == self.b.len()
    }
}

#[derive(Debug, Clone, Copy)]
struct DictEntry {
    count: u32,
    post_offset: u64,
    post_len: u64,
    skip_start: u32,
    skip_count: u32,
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub buffer_bytes: u64,
    /// Sleep added to every page miss to stand in for a disk read.
    pub miss_penalty: Option<Duration>,
}

impl LoadOptions {
    pub fn new(buffer_bytes: u64) -> LoadOptions {
        LoadOptions {
            buffer_bytes,
            miss_penalty: None,
        }
    }
}

/// A loaded index: pinned dictionaries, skips and document table; postings
/// behind the buffer pool. Immutable and shareable across threads.
#[derive(Debug)]
pub struct DiskIndex {
    path: PathBuf,
    config: IndexConfig,
    docs: Vec<DocMeta>,
    content: BTreeMap<String, DictEntry>,
    scopes: Vec<(Attribute, BTreeMap<String, DictEntry>)>,
    skips: Vec<SkipEntry>,
    pool: BufferPool,
    summary: IndexFileSummary,
}

pub fn load_index(path: &Path, buffer_bytes: u64) -> Result<DiskIndex, StorageError> {
    load_index_with(path, LoadOptions::new(buffer_bytes))
}

pub fn load_index_with(path: &Path, opts: LoadOptions) -> Result<DiskIndex, StorageError> {
    let io_err = |source| StorageError::Io {
        path: path.to_path_buf(),
        source,
    };
    let corrupt = |reason: String| StorageError::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let mut file = File::open(path).map_err(io_err)?;
    let file_bytes = file.metadata().map_err(io_err)?.len();
    if file_bytes < 20 {
        return Err(corrupt("file too short".into()));
    }

    // Stream the whole file through the checksum without keeping postings.
    let mut digest = CHECKSUM.digest();
    let mut remaining = file_bytes - 8;
    let mut chunk = vec![0u8; 1 << 16];
    while remaining > 0 {
        let n = remaining.min(chunk.len() as u64) as usize;
        file.read_exact(&mut chunk[..n]).map_err(io_err)?;
        digest.update(&chunk[..n]);
        remaining -= n as u64;
    }
    let mut tail = [0u8; 8];
    file.read_exact(&mut tail).map_err(io_err)?;
    let stored = u64::from_le_bytes(tail);
    let computed = digest.finalize();
    if stored != computed {
        return Err(StorageError::Checksum {
            path: path.to_path_buf(),
            stored,
            computed,
        });
    }

    let mut fixed = [0u8; 12];
    file.read_exact_at(&mut fixed, 0).map_err(io_err)?;
    let count = u32::from_le_bytes(fixed[8..12].try_into().unwrap()) as u64;
    let table_len = (12 + 20 * count).min(file_bytes - 8);
    let mut table = vec![0u8; table_len as usize];
    file.read_exact_at(&mut table, 0).map_err(io_err)?;
    let header = parse_header(&table, file_bytes, path)?;

    let read_section = |s: Section| -> Result<Vec<u8>, StorageError> {
        let mut b = vec![0u8; s.length as usize];
        file.read_exact_at(&mut b, s.offset).map_err(io_err)?;
        Ok(b)
    };

    let meta = read_section(header.section(TAG_META))?;
    let mut r = Reader::new(&meta);
    let bad_meta = || corrupt("bad META section".into());
    let skip_interval = r.u32().ok_or_else(bad_meta)? as usize;
    let doc_count = r.u32().ok_or_else(bad_meta)? as usize;
    let attrs = |r: &mut Reader<'_>| -> Result<Vec<Attribute>, StorageError> {
        let n = r.u8().ok_or_else(bad_meta)?;
        (0..n)
            .map(|_| r.u8().and_then(Attribute::from_code).ok_or_else(bad_meta))
            .collect()
    };
    let embed = attrs(&mut r)?;
    let scope_fields = attrs(&mut r)?;
    if !r.done() {
        return Err(bad_meta());
    }

    let docs_raw = read_section(header.section(TAG_DOCS))?;
    let mut r = Reader::new(&docs_raw);
    let mut docs = Vec::with_capacity(doc_count);
    for _ in 0..doc_count {
        let bad = || corrupt("bad DOCS section".into());
        let rank = f64::from_bits(r.u64().ok_or_else(bad)?);
        let len = r.u32().ok_or_else(bad)? as usize;
        let key = std::str::from_utf8(r.take(len).ok_or_else(bad)?)
            .map_err(|_| bad())?
            .to_string();
        docs.push(DocMeta { key, rank });
    }
    if !r.done() {
        return Err(corrupt("trailing bytes in DOCS".into()));
    }

    let skip_raw = read_section(header.section(TAG_SKIP))?;
    if skip_raw.len() % 8 != 0 {
        return Err(corrupt("SKIP section not a whole number of entries".into()));
    }
    let skips: Vec<SkipEntry> = skip_raw
        .chunks_exact(8)
        .map(|c| SkipEntry {
            doc_id: DocId(u32::from_le_bytes(c[..4].try_into().unwrap())),
            ordinal: u32::from_le_bytes(c[4..].try_into().unwrap()),
        })
        .collect();

    let post = header.section(TAG_POST);
    let embed_n = embed.len() as u64;
    let dict_raw = read_section(header.section(TAG_DICT))?;
    let mut r = Reader::new(&dict_raw);
    let bad = || corrupt("bad DICT section".into());
    let n_dicts = r.u32().ok_or_else(bad)?;
    let mut content = None;
    let mut scopes = Vec::new();
    for _ in 0..n_dicts {
        let code = r.u8().ok_or_else(bad)?;
        let n = r.u32().ok_or_else(bad)?;
        let mut m = BTreeMap::new();
        for _ in 0..n {
            let len = r.u16().ok_or_else(bad)? as usize;
            let term = std::str::from_utf8(r.take(len).ok_or_else(bad)?)
                .map_err(|_| bad())?
                .to_string();
            let e = DictEntry {
                count: r.u32().ok_or_else(bad)?,
                post_offset: r.u64().ok_or_else(bad)?,
                post_len: r.u64().ok_or_else(bad)?,
                skip_start: r.u32().ok_or_else(bad)?,
                skip_count: r.u32().ok_or_else(bad)?,
            };
            let c = e.count as u64;
            let min_len = 4 * c + 8 * embed_n * c + 4 * (c + 1);
            if e.post_offset
                .checked_add(e.post_len)
                .is_none_or(|end| end > post.length)
                || e.post_len < min_len
            {
                return Err(corrupt(format!(
                    "posting list of {term:?} outside POST section"
                )));
            }
            if e.skip_start as u64 + e.skip_count as u64 > skips.len() as u64 {
                return Err(corrupt(format!("skip range of {term:?} out of bounds")));
            }
            m.insert(term, e);
        }
        if code == CONTENT_DICT {
            content = Some(m);
        } else {
            let a = Attribute::from_code(code).ok_or_else(bad)?;
            scopes.push((a, m));
        }
    }
    let content = content.ok_or_else(|| corrupt("no content dictionary".into()))?;

    let pinned = header.pinned_bytes();
    if opts.buffer_bytes < pinned {
        return Err(StorageError::BufferTooSmall {
            buffer: opts.buffer_bytes,
            pinned,
        });
    }
    let summary = IndexFileSummary {
        path: path.to_path_buf(),
        file_bytes,
        pinned_bytes: pinned,
        sections: header.sections.clone(),
        dictionary_entries: content.len(),
        checksum: stored,
    };
    let mut pool = BufferPool::new(
        file,
        post.offset,
        post.length,
        opts.buffer_bytes - pinned,
        pinned,
    );
    pool.set_miss_penalty(opts.miss_penalty);
    Ok(DiskIndex {
        path: path.to_path_buf(),
        config: IndexConfig {
            embed,
            scope_fields,
            skip_interval,
        },
        docs,
        content,
        scopes,
        skips,
        pool,
        summary,
    })
}

impl DiskIndex {
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn summary(&self) -> &IndexFileSummary {
        &self.summary
    }

    pub fn pool(&self) -> &BufferPool {
        &self.pool
    }

    pub fn buffer_stats(&self) -> BufferStats {
        self.pool.stats()
    }

    pub fn reset_buffer_stats(&self) {
        self.pool.reset_stats()
    }

    fn list<'a>(&'a self, e: &'a DictEntry) -> DiskList<'a> {
        self.pool.note_pinned_lookup();
        DiskList {
            pool: &self.pool,
            entry: *e,
            skips: &self.skips[e.skip_start as usize..(e.skip_start + e.skip_count) as usize],
            embed_n: self.config.embed.len() as u64,
        }
    }

    /// Reads every posting back into an in-memory index.
    pub fn to_index(&self) -> io::Result<IrIndex> {
        let s = self.config.skip_interval;
        let materialize =
            |m: &BTreeMap<String, DictEntry>| -> io::Result<BTreeMap<String, PostingList>> {
                m.iter()
                    .map(|(term, e)| {
                        let l = DiskList {
                            pool: &self.pool,
                            entry: *e,
                            skips: &[],
                            embed_n: self.config.embed.len() as u64,
                        };
                        let postings = (0..l.len())
                            .map(|i| {
                                Ok(Posting {
                                    doc_id: l.doc_id(i)?,
                                    offsets: l.offsets(i)?,
                                    embedded: (0..self.config.embed.len())
                                        .map(|slot| l.embedded(i, slot))
                                        .collect::<io::Result<_>>()?,
                                })
                            })
                            .collect::<io::Result<Vec<_>>>()?;
                        Ok((term.clone(), PostingList::new(term.clone(), postings, s)))
                    })
                    .collect()
            };
        Ok(IrIndex {
            config: self.config.clone(),
            docs: self.docs.clone(),
            content: materialize(&self.content)?,
            scopes: self
                .scopes
                .iter()
                .map(|(a, m)| Ok((*a, materialize(m)?)))
                .collect::<io::Result<_>>()?,
        })
    }
}

/// One posting list read through the buffer pool.
#[derive(Debug, Clone, Copy)]
pub struct DiskList<'a> {
    pool: &'a BufferPool,
    entry: DictEntry,
    skips: &'a [SkipEntry],
    embed_n: u64,
}

impl DiskList<'_> {
    fn n(&self) -> u64 {
        self.entry.count as u64
    }

    fn offset_index_base(&self) -> u64 {
        self.entry.post_offset + 4 * self.n() + 8 * self.embed_n * self.n()
    }
}

impl PostingSource for DiskList<'_> {
    fn len(&self) -> usize {
        self.entry.count as usize
    }

    fn skips(&self) -> &[SkipEntry] {
        self.skips
    }

    fn doc_id(&self, ordinal: usize) -> io::Result<DocId> {
        Ok(DocId(
            self.pool
                .read_u32(self.entry.post_offset + 4 * ordinal as u64)?,
        ))
    }

    fn embedded(&self, ordinal: usize, slot: usize) -> io::Result<u64> {
        let at =
            self.entry.post_offset + 4 * self.n() + 8 * (slot as u64 * self.n() + ordinal as u64);
        self.pool.read_u64(at)
    }

    fn offsets(&self, ordinal: usize) -> io::Result<Vec<u32>> {
        let idx = self.offset_index_base();
        let start = self.pool.read_u32(idx + 4 * ordinal as u64)? as u64;
        let end = self.pool.read_u32(idx + 4 * (ordinal as u64 + 1))? as u64;
        let base = idx + 4 * (self.n() + 1);
        let mut raw = vec![0u8; 4 * (end - start) as usize];
        self.pool.read(base + 4 * start, &mut raw)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

impl IndexReader for DiskIndex {
    type List<'a> = DiskList<'a>;

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

    fn content_list(&self, token: &str) -> Option<DiskList<'_>> {
        self.content.get(token).map(|e| self.list(e))
    }

    fn scope_list(&self, field: Attribute, value: u64) -> Option<DiskList<'_>> {
        let (_, m) = self.scopes.iter().find(|(a, _)| *a == field)?;
        m.get(&field.scope_term(value)).map(|e| self.list(e))
    }
}
