use super::{Attribute, Cursor, DocId, IndexError, IndexReader, Intersection, PostingSource};

#[derive(Debug, Clone, PartialEq)]
pub struct TopKItem {
    pub doc_id: DocId,
    pub rank: f64,
    pub doc_key: String,
}

fn item<I: IndexReader>(index: &I, id: DocId) -> TopKItem {
    let meta = index.doc_meta(id);
    TopKItem {
        doc_id: id,
        rank: meta.rank,
        doc_key: meta.key.clone(),
    }
}

fn check_k(k: usize) -> Result<(), IndexError> {
    if k == 0 {
        Err(IndexError::InvalidK)
    } else {
        Ok(())
    }
}

fn normalize(keyword: &str) -> String {
    keyword.to_lowercase()
}

/// The first `k` postings of the keyword's list. Unknown keywords give an
/// empty result.
pub fn search_single<I: IndexReader>(
    index: &I,
    keyword: &str,
    k: usize,
) -> Result<Vec<TopKItem>, IndexError> {
    check_k(k)?;
    let Some(list) = index.content_list(&normalize(keyword)) else {
        return Ok(Vec::new());
    };
    let n = k.min(list.len());
    (0..n).map(|i| Ok(item(index, list.doc_id(i)?))).collect()
}

fn content_cursors<'a, I: IndexReader, S: AsRef<str>>(
    index: &'a I,
    keywords: &[S],
) -> Option<Vec<Cursor<I::List<'a>>>> {
    keywords
        .iter()
        .map(|kw| index.content_list(&normalize(kw.as_ref())).map(Cursor::new))
        .collect()
}

fn take_matches<I: IndexReader, S: PostingSource>(
    index: &I,
    mut join: Intersection<S>,
    k: usize,
) -> Result<Vec<TopKItem>, IndexError> {
    let mut out = Vec::new();
    while out.len() < k {
        match join.next_match()? {
            Some(d) => out.push(item(index, d)),
            None => break,
        }
    }
    Ok(out)
}

/// Documents containing every keyword, joined with posting skipping.
pub fn search_multi<I: IndexReader, S: AsRef<str>>(
    index: &I,
    keywords: &[S],
    k: usize,
) -> Result<Vec<TopKItem>, IndexError> {
    check_k(k)?;
    let Some(cursors) = content_cursors(index, keywords) else {
        return Ok(Vec::new());
    };
    take_matches(index, Intersection::new(cursors)?, k)
}

/// Limited search by attribute embedding: scan the keyword's postings (or
/// the keywords' join) and keep those whose embedded `attr` equals `value`.
pub fn search_limited_embedded<I: IndexReader, S: AsRef<str>>(
    index: &I,
    keywords: &[S],
    attr: Attribute,
    value: u64,
    k: usize,
) -> Result<Vec<TopKItem>, IndexError> {
    check_k(k)?;
    let slot = index
        .embed_spec()
        .iter()
        .position(|&a| a == attr)
        .ok_or(IndexError::UnsupportedPredicate(attr))?;
    let Some(cursors) = content_cursors(index, keywords) else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    if cursors.len() == 1 {
        let list = cursors[0].list();
        for i in 0..list.len() {
            if out.len() == k {
                break;
            }
            if list.embedded(i, slot)? == value {
                out.push(item(index, list.doc_id(i)?));
            }
        }
        return Ok(out);
    }
    let mut join = Intersection::new(cursors)?;
    while out.len() < k {
        let Some(d) = join.next_match()? else { break };
        let first = &join.cursors()[0];
        if first.list().embedded(first.ordinal(), slot)? == value {
            out.push(item(index, d));
        }
    }
    Ok(out)
}

/// Limited search by joining the keyword lists with the text-typed scope
/// list `<prefix>:<value>`.
pub fn search_limited_join<I: IndexReader, S: AsRef<str>>(
    index: &I,
    keywords: &[S],
    field: Attribute,
    value: u64,
    k: usize,
) -> Result<Vec<TopKItem>, IndexError> {
    check_k(k)?;
    if !index.scope_fields().contains(&field) {
        return Err(IndexError::UnknownScopeField(field));
    }
    let Some(mut cursors) = content_cursors(index, keywords) else {
        return Ok(Vec::new());
    };
    let Some(scope) = index.scope_list(field, value) else {
        return Ok(Vec::new());
    };
    cursors.push(Cursor::new(scope));
    take_matches(index, Intersection::new(cursors)?, k)
}
