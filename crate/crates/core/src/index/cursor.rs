use std::io;

use super::{DocId, IndexError, PostingSource};

/// Forward-only position in a posting list. Counts every posting docId it
/// reads so callers can compare skipping against a linear scan.
#[derive(Debug)]
pub struct Cursor<S> {
    list: S,
    pos: usize,
    current: Option<DocId>,
    reads: u64,
}

impl<S: PostingSource> Cursor<S> {
    pub fn new(list: S) -> Cursor<S> {
        Cursor {
            list,
            pos: 0,
            current: None,
            reads: 0,
        }
    }

    pub fn list(&self) -> &S {
        &self.list
    }

    /// Ordinal of the posting under the cursor.
    pub fn ordinal(&self) -> usize {
        self.pos
    }

    pub fn reads(&self) -> u64 {
        self.reads
    }

    pub fn is_exhausted(&self) -> bool {
        self.pos >= self.list.len()
    }

    /// DocId under the cursor, `None` once exhausted.
    pub fn doc(&mut self) -> io::Result<Option<DocId>> {
        if self.is_exhausted() {
            return Ok(None);
        }
        if self.current.is_none() {
            self.current = Some(self.read(self.pos)?);
        }
        Ok(self.current)
    }

    pub fn advance(&mut self) {
        if !self.is_exhausted() {
            self.pos += 1;
            self.current = None;
        }
    }

    /// Moves to the first posting with docId >= `target` and returns it.
    /// Never moves backward. Jumps with the skip sub-index to the last skip
    /// entry at or below `target`, then scans at most one skip interval.
    pub fn seek_geq(&mut self, target: DocId) -> io::Result<Option<DocId>> {
        match self.doc()? {
            None => return Ok(None),
            Some(d) if d >= target => return Ok(Some(d)),
            Some(_) => {}
        }
        let skips = self.list.skips();
        let after = skips.partition_point(|e| e.doc_id <= target);
        if after > 0 {
            let entry = skips[after - 1];
            if entry.ordinal as usize > self.pos {
                self.pos = entry.ordinal as usize;
                self.current = None;
            }
        }
        while self.pos < self.list.len() {
            let d = self.read(self.pos)?;
            if d >= target {
                self.current = Some(d);
                return Ok(Some(d));
            }
            self.pos += 1;
        }
        self.current = None;
        Ok(None)
    }

    fn read(&mut self, ordinal: usize) -> io::Result<DocId> {
        self.reads += 1;
        self.list.doc_id(ordinal)
    }
}

/// Leapfrogging intersection: yields docIds present in every list, in docId
/// order. After a match every cursor sits on the matched posting, so callers
/// can read embedded values from it before pulling the next match.
#[derive(Debug)]
pub struct Intersection<S> {
    cursors: Vec<Cursor<S>>,
    pending_advance: bool,
}

impl<S: PostingSource> Intersection<S> {
    pub fn new(cursors: Vec<Cursor<S>>) -> Result<Intersection<S>, IndexError> {
        if cursors.is_empty() {
            return Err(IndexError::NoLists);
        }
        Ok(Intersection {
            cursors,
            pending_advance: false,
        })
    }

    pub fn cursors(&self) -> &[Cursor<S>] {
        &self.cursors
    }

    /// Total posting reads over all lists so far.
    pub fn reads(&self) -> u64 {
        self.cursors.iter().map(Cursor::reads).sum()
    }

    pub fn next_match(&mut self) -> io::Result<Option<DocId>> {
        if self.pending_advance {
            self.cursors[0].advance();
            self.pending_advance = false;
        }
        let n = self.cursors.len();
        let Some(mut candidate) = self.cursors[0].doc()? else {
            return Ok(None);
        };
        let mut agreed = 1;
        let mut i = 1;
        while agreed < n {
            match self.cursors[i % n].seek_geq(candidate)? {
                None => return Ok(None),
                Some(d) if d == candidate => agreed += 1,
                Some(d) => {
                    candidate = d;
                    agreed = 1;
                }
            }
            i += 1;
        }
        self.pending_advance = true;
        Ok(Some(candidate))
    }
}

/// First `k` docIds common to all lists, in docId order.
pub fn zigzag_join<S: PostingSource>(
    cursors: Vec<Cursor<S>>,
    k: usize,
) -> Result<(Vec<DocId>, u64), IndexError> {
    let mut join = Intersection::new(cursors)?;
    let mut out = Vec::new();
    while out.len() < k {
        match join.next_match()? {
            Some(d) => out.push(d),
            None => break,
        }
    }
    Ok((out, join.reads()))
}
