//! A miniature SQL-like query language:
//!
//! ```text
//! SELECT TOP <k> WHERE MATCH(content, "<kw>" [AND "<kw>"]...) [AND siteId = <int> | AND domainId = <int>]
//! ```
//!
//! SQL keywords and column names are case-insensitive; search keywords are
//! lowercased and must each be a single token.

use std::fmt;

use thiserror::Error;

use crate::corpus::tokenize;
use crate::index::Attribute;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SearchCondition {
    Single,
    Multi,
    Limited,
}

impl SearchCondition {
    pub const ALL: [SearchCondition; 3] = [
        SearchCondition::Single,
        SearchCondition::Multi,
        SearchCondition::Limited,
    ];

    pub fn code(self) -> u8 {
        match self {
            SearchCondition::Single => 1,
            SearchCondition::Multi => 2,
            SearchCondition::Limited => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<SearchCondition> {
        match code {
            1 => Some(SearchCondition::Single),
            2 => Some(SearchCondition::Multi),
            3 => Some(SearchCondition::Limited),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SearchCondition::Single => "single",
            SearchCondition::Multi => "multi",
            SearchCondition::Limited => "limited",
        }
    }

    pub fn from_name(s: &str) -> Option<SearchCondition> {
        SearchCondition::ALL.into_iter().find(|c| c.name() == s)
    }
}

impl fmt::Display for SearchCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Scope {
    pub field: Attribute,
    pub value: u64,
}

/// A validated top-k keyword query. The condition type is implied by the
/// shape: one keyword without scope is single, several without scope is
/// multi, anything with a scope is limited.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Query {
    keywords: Vec<String>,
    scope: Option<Scope>,
    k: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("k must be a positive integer")]
    NonPositiveK,
    #[error("MATCH needs at least one keyword")]
    EmptyMatch,
    #[error("keyword {0:?} is not a single alphanumeric token")]
    InvalidKeyword(String),
    #[error("condition type {declared} does not fit {keywords} keyword(s) with scope={scoped}")]
    ConditionMismatch {
        declared: SearchCondition,
        keywords: usize,
        scoped: bool,
    },
}

impl Query {
    pub fn new(keywords: Vec<String>, scope: Option<Scope>, k: u32) -> Result<Query, QueryError> {
        if k == 0 {
            return Err(QueryError::NonPositiveK);
        }
        if keywords.is_empty() {
            return Err(QueryError::EmptyMatch);
        }
        let keywords = keywords
            .into_iter()
            .map(|kw| {
                let toks = tokenize(&kw);
                match toks.as_slice() {
                    [t] if *t == kw.to_lowercase() => Ok(toks.into_iter().next().unwrap()),
                    [] => Err(QueryError::EmptyMatch),
                    _ => Err(QueryError::InvalidKeyword(kw)),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Query { keywords, scope, k })
    }

    /// Like [`Query::new`] but also checks a declared condition type.
    pub fn with_condition(
        declared: SearchCondition,
        keywords: Vec<String>,
        scope: Option<Scope>,
        k: u32,
    ) -> Result<Query, QueryError> {
        let q = Query::new(keywords, scope, k)?;
        if q.condition() != declared {
            return Err(QueryError::ConditionMismatch {
                declared,
                keywords: q.keywords.len(),
                scoped: q.scope.is_some(),
            });
        }
        Ok(q)
    }

    pub fn single(keyword: &str, k: u32) -> Result<Query, QueryError> {
        Query::new(vec![keyword.to_string()], None, k)
    }

    pub fn condition(&self) -> SearchCondition {
        match (self.scope, self.keywords.len()) {
            (Some(_), _) => SearchCondition::Limited,
            (None, 1) => SearchCondition::Single,
            (None, _) => SearchCondition::Multi,
        }
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    pub fn scope(&self) -> Option<Scope> {
        self.scope
    }

    pub fn k(&self) -> u32 {
        self.k
    }
}

/// Canonical text; scope clause last.
pub fn format_query(q: &Query) -> String {
    let kws: Vec<String> = q.keywords.iter().map(|k| format!("\"{k}\"")).collect();
    let mut s = format!(
        "SELECT TOP {} WHERE MATCH(content, {})",
        q.k,
        kws.join(" AND ")
    );
    if let Some(scope) = q.scope {
        s.push_str(&format!(" AND {} = {}", scope.field.name(), scope.value));
    }
    s
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_query(self))
    }
}

impl std::str::FromStr for Query {
    type Err = QueryError;

    fn from_str(s: &str) -> Result<Query, QueryError> {
        parse_query(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Int(String),
    Str(String),
    LParen,
    RParen,
    Comma,
    Eq,
    End,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Word(w) => write!(f, "{w}"),
            Tok::Int(i) => write!(f, "{i}"),
            Tok::Str(s) => write!(f, "\"{s}\""),
            Tok::LParen => f.write_str("("),
            Tok::RParen => f.write_str(")"),
            Tok::Comma => f.write_str(","),
            Tok::Eq => f.write_str("="),
            Tok::End => f.write_str("end of input"),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, QueryError> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(pos, c)) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            '(' | ')' | ',' | '=' => {
                chars.next();
                out.push((
                    pos,
                    match c {
                        '(' => Tok::LParen,
                        ')' => Tok::RParen,
                        ',' => Tok::Comma,
                        _ => Tok::Eq,
                    },
                ));
            }
            '"' | '\'' => {
                chars.next();
                let mut s = String::new();
                loop {
                    match chars.next() {
                        Some((_, q)) if q == c => break,
                        Some((_, ch)) => s.push(ch),
                        None => {
                            return Err(QueryError::Syntax {
                                position: pos,
                                message: "unterminated string literal".into(),
                            })
                        }
                    }
                }
                out.push((pos, Tok::Str(s)));
            }
            c if c.is_ascii_digit() => {
                let mut s = String::new();
                while let Some(&(_, d)) = chars.peek() {
                    if !d.is_ascii_digit() {
                        break;
                    }
                    s.push(d);
                    chars.next();
                }
                out.push((pos, Tok::Int(s)));
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(&(_, d)) = chars.peek() {
                    if !(d.is_alphanumeric() || d == '_') {
                        break;
                    }
                    s.push(d);
                    chars.next();
                }
                out.push((pos, Tok::Word(s)));
            }
            other => {
                return Err(QueryError::Syntax {
                    position: pos,
                    message: format!("unexpected character {other:?}"),
                })
            }
        }
    }
    out.push((text.len(), Tok::End));
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].1
    }

    fn pos(&self) -> usize {
        self.toks[self.at].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].1.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn error<T>(&self, expected: &str) -> Result<T, QueryError> {
        Err(QueryError::Syntax {
            position: self.pos(),
            message: format!("expected {expected}, found {}", self.peek()),
        })
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Tok::Word(x) if x.eq_ignore_ascii_case(w))
    }

    fn word(&mut self, w: &str) -> Result<(), QueryError> {
        if self.is_word(w) {
            self.bump();
            Ok(())
        } else {
            self.error(w)
        }
    }

    fn punct(&mut self, t: Tok) -> Result<(), QueryError> {
        if *self.peek() == t {
            self.bump();
            Ok(())
        } else {
            self.error(&format!("'{t}'"))
        }
    }

    fn int(&mut self, what: &str) -> Result<u64, QueryError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Int(s) => {
                self.bump();
                s.parse().map_err(|_| QueryError::Syntax {
                    position: pos,
                    message: format!("{what} {s} out of range"),
                })
            }
            _ => self.error(what),
        }
    }
}

pub fn parse_query(text: &str) -> Result<Query, QueryError> {
    let mut p = Parser {
        toks: lex(text)?,
        at: 0,
    };
    p.word("SELECT")?;
    p.word("TOP")?;
    let k_pos = p.pos();
    let k = p.int("a result count")?;
    if k == 0 {
        return Err(QueryError::NonPositiveK);
    }
    let k = u32::try_from(k).map_err(|_| QueryError::Syntax {
        position: k_pos,
        message: "result count out of range".into(),
    })?;
    p.word("WHERE")?;
    p.word("MATCH")?;
    p.punct(Tok::LParen)?;
    p.word("content")?;
    if *p.peek() == Tok::RParen {
        return Err(QueryError::EmptyMatch);
    }
    p.punct(Tok::Comma)?;
    let mut keywords = Vec::new();
    loop {
        match p.peek().clone() {
            Tok::Str(s) => {
                p.bump();
                keywords.push(s);
            }
            Tok::RParen if keywords.is_empty() => return Err(QueryError::EmptyMatch),
            _ => return p.error("a quoted keyword"),
        }
        if p.is_word("AND") {
            p.bump();
        } else {
            break;
        }
    }
    p.punct(Tok::RParen)?;
    let mut scope = None;
    if p.is_word("AND") {
        p.bump();
        let field = if p.is_word("siteId") {
            Attribute::SiteId
        } else if p.is_word("domainId") {
            Attribute::DomainId
        } else {
            return p.error("siteId or domainId");
        };
        p.bump();
        p.punct(Tok::Eq)?;
        let value = p.int("an integer scope value")?;
        scope = Some(Scope { field, value });
    }
    if *p.peek() != Tok::End {
        return p.error("end of query");
    }
    Query::new(keywords, scope, k)
}
