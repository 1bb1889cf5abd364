use std::fs::File;
use std::io;
use std::os::unix::fs::FileExt;
use std::sync::Arc;
use std::time::Duration;

use lru::LruCache;
use parking_lot::Mutex;

pub const PAGE_SIZE: usize = 8192;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BufferStats {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    /// Lookups served by the pinned sections (dictionary, skips, documents).
    pub pinned_lookups: u64,
    pub resident_bytes: u64,
    pub pinned_bytes: u64,
    pub capacity_bytes: u64,
}

struct PoolState {
    pages: LruCache<u64, Arc<[u8]>>,
    cached_bytes: u64,
    hits: u64,
    misses: u64,
    evictions: u64,
    pinned_lookups: u64,
}

/// LRU page cache over the posting section of an index file. Capacity is a
/// byte budget; the short last page counts at its real size.
pub struct BufferPool {
    file: File,
    base: u64,
    len: u64,
    capacity_bytes: u64,
    pinned_bytes: u64,
    miss_penalty: Option<Duration>,
    state: Mutex<PoolState>,
}

impl std::fmt::Debug for BufferPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BufferPool")
            .field("base", &self.base)
            .field("len", &self.len)
            .field("capacity_bytes", &self.capacity_bytes)
            .field("pinned_bytes", &self.pinned_bytes)
            .finish()
    }
}

impl BufferPool {
    pub(crate) fn new(
        file: File,
        base: u64,
        len: u64,
        capacity_bytes: u64,
        pinned_bytes: u64,
    ) -> BufferPool {
        BufferPool {
            file,
            base,
            len,
            capacity_bytes,
            pinned_bytes,
            miss_penalty: None,
            state: Mutex::new(PoolState {
                pages: LruCache::unbounded(),
                cached_bytes: 0,
                hits: 0,
                misses: 0,
                evictions: 0,
                pinned_lookups: 0,
            }),
        }
    }

    pub(crate) fn set_miss_penalty(&mut self, penalty: Option<Duration>) {
        self.miss_penalty = penalty;
    }

    pub fn page_count(&self) -> u64 {
        self.len.div_ceil(PAGE_SIZE as u64)
    }

    fn page(&self, page_no: u64) -> io::Result<Arc<[u8]>> {
        {
            let mut st = self.state.lock();
            if let Some(p) = st.pages.get(&page_no) {
                let p = p.clone();
                st.hits += 1;
                return Ok(p);
            }
            st.misses += 1;
        }
        let start = page_no * PAGE_SIZE as u64;
        let size = (self.len - start).min(PAGE_SIZE as u64) as usize;
        let mut buf = vec![0u8; size];
        self.file.read_exact_at(&mut buf, self.base + start)?;
        if let Some(d) = self.miss_penalty {
            std::thread::sleep(d);
        }
        let page: Arc<[u8]> = buf.into();
        if size as u64 <= self.capacity_bytes {
            let mut st = self.state.lock();
            if let Some((_, old)) = st.pages.push(page_no, page.clone()) {
                // Same key: a concurrent miss already cached this page.
                st.cached_bytes -= old.len() as u64;
            }
            st.cached_bytes += size as u64;
            while st.cached_bytes > self.capacity_bytes {
                let (_, victim) = st.pages.pop_lru().expect("over budget implies non-empty");
                st.cached_bytes -= victim.len() as u64;
                st.evictions += 1;
            }
        }
        Ok(page)
    }

    /// Copies `buf.len()` bytes starting at `offset` within the posting section.
    pub fn read(&self, offset: u64, buf: &mut [u8]) -> io::Result<()> {
        if offset + buf.len() as u64 > self.len {
            return Err(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                format!("read past posting section: {offset}+{}", buf.len()),
            ));
        }
        let mut done = 0;
        while done < buf.len() {
            let at = offset + done as u64;
            let page_no = at / PAGE_SIZE as u64;
            let in_page = (at % PAGE_SIZE as u64) as usize;
            let page = self.page(page_no)?;
            let n = (page.len() - in_page).min(buf.len() - done);
            buf[done..done + n].copy_from_slice(&page[in_page..in_page + n]);
            done += n;
        }
        Ok(())
    }

    pub fn read_u32(&self, offset: u64) -> io::Result<u32> {
        let mut b = [0u8; 4];
        self.read(offset, &mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn read_u64(&self, offset: u64) -> io::Result<u64> {
        let mut b = [0u8; 8];
        self.read(offset, &mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub(crate) fn note_pinned_lookup(&self) {
        self.state.lock().pinned_lookups += 1;
    }

    pub fn stats(&self) -> BufferStats {
        let st = self.state.lock();
        BufferStats {
            hits: st.hits,
            misses: st.misses,
            evictions: st.evictions,
            pinned_lookups: st.pinned_lookups,
            resident_bytes: st.cached_bytes + self.pinned_bytes,
            pinned_bytes: self.pinned_bytes,
            capacity_bytes: self.capacity_bytes,
        }
    }

    /// Zeroes the counters; cached pages stay resident.
    pub fn reset_stats(&self) {
        let mut st = self.state.lock();
        st.hits = 0;
        st.misses = 0;
        st.evictions = 0;
        st.pinned_lookups = 0;
    }

    /// Page numbers in recency order, least recent first.
    pub fn resident_pages(&self) -> Vec<u64> {
        let st = self.state.lock();
        let mut v: Vec<u64> = st.pages.iter().map(|(k, _)| *k).collect();
        v.reverse();
        v
    }
}
