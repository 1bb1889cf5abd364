//! Documents, the tab-separated corpus format, and a seeded synthetic corpus
//! generator used by the examples, the benchmark and the tests.
//!
//! Corpus lines are `docKey \t url \t siteId \t domainId \t rank \t content`.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use thiserror::Error;

/// A ranked web page.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub key: String,
    pub url: String,
    pub site_id: u64,
    pub domain_id: u64,
    pub content: String,
    /// Query-independent score, higher is better.
    pub rank: f64,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Lowercases and splits on anything that is not alphanumeric. Returns the
/// tokens in order; a token's position in the returned vector is its offset.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn read_corpus(path: &Path) -> Result<Vec<Document>, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        docs.push(parse_line(&line).map_err(|message| CorpusError::Parse {
            line: i + 1,
            message,
        })?);
    }
    Ok(docs)
}

fn parse_line(line: &str) -> Result<Document, String> {
    let fields: Vec<&str> = line.splitn(6, '\t').collect();
    if fields.len() != 6 {
        return Err(format!(
            "expected 6 tab-separated fields, found {}",
            fields.len()
        ));
    }
    let int = |s: &str, what: &str| {
        s.parse::<u64>()
            .map_err(|e| format!("bad {what} {s:?}: {e}"))
    };
    let rank: f64 = fields[4]
        .parse()
        .map_err(|e| format!("bad rank {:?}: {e}", fields[4]))?;
    Ok(Document {
        key: fields[0].to_string(),
        url: fields[1].to_string(),
        site_id: int(fields[2], "siteId")?,
        domain_id: int(fields[3], "domainId")?,
        rank,
        content: fields[5].to_string(),
    })
}

pub fn write_corpus(path: &Path, docs: &[Document]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for d in docs {
        // Tabs and newlines would break the line format.
        let content = d.content.replace(['\t', '\n', '\r'], " ");
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            d.key, d.url, d.site_id, d.domain_id, d.rank, content
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Sorts by rank descending, ties by key ascending, then deals documents
/// round-robin so every segment gets a similar rank profile.
pub fn partition_round_robin(mut docs: Vec<Document>, parts: usize) -> Vec<Vec<Document>> {
    assert!(parts >= 1, "at least one partition");
    docs.sort_by(|a, b| b.rank.total_cmp(&a.rank).then_with(|| a.key.cmp(&b.key)));
    let mut out: Vec<Vec<Document>> = (0..parts).map(|_| Vec::new()).collect();
    for (i, d) in docs.into_iter().enumerate() {
        out[i % parts].push(d);
    }
    out
}

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub docs: usize,
    pub vocabulary: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Zipf exponent for word frequencies.
    pub zipf_exponent: f64,
    pub sites: u64,
    pub domains: u64,
    /// Ranks are quantized to this many levels so equal ranks occur.
    pub rank_levels: u32,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            docs: 10_000,
            vocabulary: 2_000,
            min_words: 20,
            max_words: 80,
            zipf_exponent: 1.0,
            sites: 200,
            domains: 20,
            rank_levels: 5_000,
            seed: 7,
        }
    }
}

pub fn vocabulary_word(i: usize) -> String {
    format!("w{i}")
}

/// Generates a corpus whose words follow a Zipf law over `w0..w{vocabulary}`.
/// Site ids are uniform; a site always belongs to the same domain.
pub fn synthetic_corpus(cfg: &SyntheticConfig) -> Vec<Document> {
    assert!(cfg.vocabulary >= 1 && cfg.min_words <= cfg.max_words && cfg.min_words >= 1);
    assert!(cfg.sites >= 1 && cfg.domains >= 1 && cfg.rank_levels >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let zipf = Zipf::new(cfg.vocabulary as f64, cfg.zipf_exponent).expect("valid zipf parameters");
    (0..cfg.docs)
        .map(|i| {
            let len = rng.random_range(cfg.min_words..=cfg.max_words);
            let words: Vec<String> = (0..len)
                .map(|_| vocabulary_word(zipf.sample(&mut rng) as usize - 1))
                .collect();
            let site_id = rng.random_range(0..cfg.sites);
            let level = rng.random_range(0..cfg.rank_levels);
            Document {
                key: format!("d{i:07}"),
                url: format!("http://site{site_id}.example/{i}"),
                site_id,
                domain_id: site_id % cfg.domains,
                content: words.join(" "),
                rank: (level as f64 + 1.0) / cfg.rank_levels as f64,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_lowercases_and_splits() {
        assert_eq!(
            tokenize("Obama, the-44th PRESIDENT!"),
            ["obama", "the", "44th", "president"]
        );
        assert!(tokenize("  ,;  ").is_empty());
    }

    #[test]
    fn corpus_file_round_trip() {
        let docs = synthetic_corpus(&SyntheticConfig {
            docs: 50,
            ..Default::default()
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tsv");
        write_corpus(&path, &docs).unwrap();
        assert_eq!(read_corpus(&path).unwrap(), docs);
    }

    #[test]
    fn bad_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tsv");
        std::fs::write(&path, "a\tu\t1\t2\t0.5\tx y\nb\tu\tnope\t2\t0.5\tz\n").unwrap();
        match read_corpus(&path) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn round_robin_partitions_are_disjoint_and_cover() {
        let docs = synthetic_corpus(&SyntheticConfig {
            docs: 101,
            ..Default::default()
        });
        let parts = partition_round_robin(docs.clone(), 5);
        assert_eq!(parts.len(), 5);
        let mut keys: Vec<_> = parts.iter().flatten().map(|d| d.key.clone()).collect();
        keys.sort();
        let mut expected: Vec<_> = docs.iter().map(|d| d.key.clone()).collect();
        expected.sort();
        assert_eq!(keys, expected);
        assert!(parts.iter().all(|p| p.len() == 20 || p.len() == 21));
    }

    #[test]
    fn synthetic_corpus_is_deterministic() {
        let cfg = SyntheticConfig {
            docs: 30,
            ..Default::default()
        };
        assert_eq!(synthetic_corpus(&cfg), synthetic_corpus(&cfg));
    }
}
