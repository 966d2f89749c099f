//! Corpus, query, and vocabulary file IO.
//!
//! Documents and queries share one TSV format: `id<TAB>space-separated
//! token ids`. A vocabulary file holds one token string per line; the line
//! number is the id, with ids 0, 1, 2 reserved for PAD, CLS, and SEP.

use crate::error::{annotate_io, Result, SedrError};
use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

/// One document or query: an id and its token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub id: u64,
    pub token_ids: Vec<u32>,
}

pub type DocumentRecord = Record;
pub type QueryRecord = Record;

/// An ordered collection of records with id lookup.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    records: Vec<Record>,
    by_id: HashMap<u64, usize>,
}

impl Corpus {
    pub fn new(records: Vec<Record>) -> Result<Corpus> {
        let mut by_id = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if by_id.insert(r.id, i).is_some() {
                return Err(SedrError::Contract(format!("duplicate record id {}", r.id)));
            }
        }
        Ok(Corpus { records, by_id })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&Record> {
        self.by_id.get(&id).map(|&i| &self.records[i])
    }

    /// Parse `id<TAB>space-separated token ids` lines. Empty token lists are
    /// allowed here and rejected at encode time.
    pub fn load_tsv(path: impl AsRef<Path>) -> Result<Corpus> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| annotate_io(path, e))?;
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            records.push(parse_record_line(line).map_err(|msg| SedrError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg,
            })?);
        }
        Corpus::new(records)
    }

    pub fn save_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        for r in &self.records {
            write!(out, "{}\t", r.id)?;
            let toks: Vec<String> = r.token_ids.iter().map(|t| t.to_string()).collect();
            writeln!(out, "{}", toks.join(" "))?;
        }
        out.flush()?;
        Ok(())
    }
}

fn parse_record_line(line: &str) -> std::result::Result<Record, String> {
    let (id_str, rest) = line
        .split_once('\t')
        .ok_or_else(|| "expected `id<TAB>token ids`".to_string())?;
    let id: u64 = id_str
        .trim()
        .parse()
        .map_err(|_| format!("invalid record id `{id_str}`"))?;
    let mut token_ids = Vec::new();
    for tok in rest.split_whitespace() {
        let t: u32 = tok
            .parse()
            .map_err(|_| format!("invalid token id `{tok}`"))?;
        token_ids.push(t);
    }
    Ok(Record { id, token_ids })
}

/// Reserved token ids.
pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const SEP_ID: u32 = 2;
/// First id available to real tokens.
pub const FIRST_REGULAR_ID: u32 = 3;

/// Token-string to id mapping backed by a one-token-per-line file.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    by_token: HashMap<String, u32>,
}

impl Vocabulary {
    /// Build from the token list; the first three entries must be the
    /// reserved PAD/CLS/SEP tokens.
    pub fn new(tokens: Vec<String>) -> Result<Vocabulary> {
        if tokens.len() < FIRST_REGULAR_ID as usize {
            return Err(SedrError::Config(
                "vocabulary needs at least the 3 reserved tokens".into(),
            ));
        }
        let mut by_token = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if by_token.insert(t.clone(), i as u32).is_some() {
                return Err(SedrError::Config(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Vocabulary { tokens, by_token })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.by_token.get(token).copied()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Vocabulary> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| annotate_io(path.as_ref(), e))?;
        Vocabulary::new(text.lines().map(|l| l.to_string()).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        for t in &self.tokens {
            writeln!(out, "{t}")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Whitespace tokenizer; unknown tokens are an error.
    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>> {
        text.split_whitespace()
            .map(|w| {
                self.id(w)
                    .ok_or_else(|| SedrError::Contract(format!("unknown token `{w}`")))
            })
            .collect()
    }

    /// A numeric vocabulary: reserved tokens then `t3…t{n-1}`.
    pub fn numeric(size: u32) -> Result<Vocabulary> {
        if size < FIRST_REGULAR_ID + 1 {
            return Err(SedrError::Config(format!(
                "vocabulary size {size} too small; need at least {}",
                FIRST_REGULAR_ID + 1
            )));
        }
        let mut tokens = vec!["[PAD]".to_string(), "[CLS]".to_string(), "[SEP]".to_string()];
        tokens.extend((FIRST_REGULAR_ID..size).map(|i| format!("t{i}")));
        Vocabulary::new(tokens)
    }
}
