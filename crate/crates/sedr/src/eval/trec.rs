//! TREC-format relevance judgments and run files.
//!
//! Qrels lines are `query_id 0 doc_id relevance`; run lines are
//! `query_id Q0 doc_id rank score tag`. Runs are defensively re-sorted by
//! score (descending, ties by doc id) so a file's stated ranks never
//! override its scores.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{annotate_io, Result, SedrError};

/// Graded relevance judgments: query id → doc id → grade.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    map: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Qrels {
        Qrels::default()
    }

    /// Insert one judgment; re-inserting a (query, doc) pair overwrites.
    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>, rel: u32) {
        self.map.entry(query_id.into()).or_default().insert(doc_id.into(), rel);
    }

    pub fn queries(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn num_queries(&self) -> usize {
        self.map.len()
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.map.get(query_id).and_then(|m| m.get(doc_id)).copied().unwrap_or(0)
    }

    /// All judged documents of a query with their grades.
    pub fn judgments(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.map.get(query_id)
    }

    /// Documents judged relevant (grade ≥ 1) for a query.
    pub fn relevant_docs(&self, query_id: &str) -> Vec<&String> {
        self.map
            .get(query_id)
            .map(|m| m.iter().filter(|(_, &r)| r >= 1).map(|(d, _)| d).collect())
            .unwrap_or_default()
    }

    /// Restrict to the queries accepted by the filter.
    pub fn filtered(&self, keep: impl Fn(&str) -> bool) -> Qrels {
        Qrels {
            map: self
                .map
                .iter()
                .filter(|(q, _)| keep(q))
                .map(|(q, m)| (q.clone(), m.clone()))
                .collect(),
        }
    }
}

/// One ranked document of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub doc_id: String,
    pub score: f64,
}

/// Per-query ranked retrieval results, kept sorted by score descending with
/// ties broken by ascending doc id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Run {
    map: BTreeMap<String, Vec<RunEntry>>,
}

fn sort_entries(entries: &mut [RunEntry]) {
    entries.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("run scores must be comparable")
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
}

impl Run {
    pub fn new() -> Run {
        Run::default()
    }

    /// Set one query's result list (re-sorted by score).
    pub fn set_ranking(&mut self, query_id: impl Into<String>, mut entries: Vec<RunEntry>) {
        sort_entries(&mut entries);
        self.map.insert(query_id.into(), entries);
    }

    pub fn ranking(&self, query_id: &str) -> Option<&[RunEntry]> {
        self.map.get(query_id).map(|v| v.as_slice())
    }

    pub fn queries(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn num_queries(&self) -> usize {
        self.map.len()
    }

    /// A run restricted to the queries accepted by `keep`.
    pub fn filtered(&self, keep: impl Fn(&str) -> bool) -> Run {
        Run {
            map: self
                .map
                .iter()
                .filter(|(q, _)| keep(q))
                .map(|(q, v)| (q.clone(), v.clone()))
                .collect(),
        }
    }
}

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> SedrError {
    SedrError::Parse { path: path.display().to_string(), line, msg: msg.into() }
}

/// Parse a qrels file. Duplicate (query, doc) pairs keep the last value with
/// a warning; malformed lines fail with their line number.
pub fn parse_qrels(path: &Path) -> Result<Qrels> {
    let text = std::fs::read_to_string(path).map_err(|e| annotate_io(path, e))?;
    let mut qrels = Qrels::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(parse_error(path, i + 1, format!("expected 4 fields, found {}", fields.len())));
        }
        let rel: u32 = fields[3]
            .parse()
            .map_err(|e| parse_error(path, i + 1, format!("bad relevance `{}`: {e}", fields[3])))?;
        if let Some(m) = qrels.map.get(fields[0]) {
            if m.contains_key(fields[2]) {
                log::warn!(
                    "{}:{}: duplicate judgment for ({}, {}); keeping the last",
                    path.display(),
                    i + 1,
                    fields[0],
                    fields[2]
                );
            }
        }
        qrels.insert(fields[0], fields[2], rel);
    }
    Ok(qrels)
}

/// Write qrels in `query_id 0 doc_id rel` lines.
pub fn write_qrels(path: &Path, qrels: &Qrels) -> Result<()> {
    let mut out = String::new();
    for (q, docs) in &qrels.map {
        for (d, rel) in docs {
            writeln!(out, "{q} 0 {d} {rel}").expect("string write");
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parse a 6-column run file, re-sorting each query by score.
pub fn parse_run(path: &Path) -> Result<Run> {
    let text = std::fs::read_to_string(path).map_err(|e| annotate_io(path, e))?;
    let mut map: BTreeMap<String, Vec<RunEntry>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(parse_error(path, i + 1, format!("expected 6 fields, found {}", fields.len())));
        }
        let score: f64 = fields[4]
            .parse()
            .map_err(|e| parse_error(path, i + 1, format!("bad score `{}`: {e}", fields[4])))?;
        if !score.is_finite() {
            return Err(parse_error(path, i + 1, format!("non-finite score `{}`", fields[4])));
        }
        map.entry(fields[0].to_string())
            .or_default()
            .push(RunEntry { doc_id: fields[2].to_string(), score });
    }
    let mut run = Run::new();
    for (q, entries) in map {
        run.set_ranking(q, entries);
    }
    Ok(run)
}

/// Write a run in TREC format with 1-based ranks.
pub fn write_run(path: &Path, run: &Run, tag: &str) -> Result<()> {
    let mut out = String::new();
    for (q, entries) in &run.map {
        for (rank, e) in entries.iter().enumerate() {
            writeln!(out, "{q} Q0 {} {} {} {tag}", e.doc_id, rank + 1, e.score).expect("string write");
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn qrels_lines_parse_to_graded_entries() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("qrels.txt");
        std::fs::write(&p, "7 0 D12 1\n7 0 D13 0\n9 0 D12 2\n").unwrap();
        let qrels = parse_qrels(&p).unwrap();
        assert_eq!(qrels.grade("7", "D12"), 1);
        assert_eq!(qrels.grade("7", "D13"), 0);
        assert_eq!(qrels.grade("9", "D12"), 2);
        assert_eq!(qrels.relevant_docs("7"), vec!["D12"]);
    }

    #[test]
    fn duplicate_judgments_keep_the_last() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("qrels.txt");
        std::fs::write(&p, "1 0 A 2\n1 0 A 0\n").unwrap();
        let qrels = parse_qrels(&p).unwrap();
        assert_eq!(qrels.grade("1", "A"), 0);
    }

    #[test]
    fn malformed_lines_name_their_line_number() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("qrels.txt");
        std::fs::write(&p, "1 0 A 1\n1 0 B\n").unwrap();
        match parse_qrels(&p) {
            Err(SedrError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let r = dir.path().join("run.txt");
        std::fs::write(&r, "1 Q0 A 1 not-a-number tag\n").unwrap();
        match parse_run(&r) {
            Err(SedrError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_files_parse_to_empty_structures() {
        let dir = tempdir().unwrap();
        let q = dir.path().join("qrels.txt");
        let r = dir.path().join("run.txt");
        std::fs::write(&q, "").unwrap();
        std::fs::write(&r, "\n\n").unwrap();
        assert_eq!(parse_qrels(&q).unwrap().num_queries(), 0);
        assert_eq!(parse_run(&r).unwrap().num_queries(), 0);
    }

    #[test]
    fn stated_ranks_lose_to_scores() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("run.txt");
        // ranks contradict scores: scores must govern
        std::fs::write(&p, "1 Q0 A 1 0.2 t\n1 Q0 B 2 0.9 t\n1 Q0 C 3 0.2 t\n").unwrap();
        let run = parse_run(&p).unwrap();
        let ranking = run.ranking("1").unwrap();
        let ids: Vec<&str> = ranking.iter().map(|e| e.doc_id.as_str()).collect();
        // B first; A/C tie at 0.2 broken by doc id
        assert_eq!(ids, vec!["B", "A", "C"]);
    }

    #[test]
    fn run_round_trips_and_ranks_are_one_based() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("run.txt");
        let mut run = Run::new();
        run.set_ranking(
            "5",
            vec![
                RunEntry { doc_id: "X".into(), score: 0.25 },
                RunEntry { doc_id: "Y".into(), score: 1.5 },
            ],
        );
        write_run(&p, &run, "probe").unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), "5 Q0 Y 1 1.5 probe");
        let again = parse_run(&p).unwrap();
        assert_eq!(again, run);
    }

    #[test]
    fn qrels_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("qrels.txt");
        let mut qrels = Qrels::new();
        qrels.insert("1", "A", 2);
        qrels.insert("2", "B", 1);
        write_qrels(&p, &qrels).unwrap();
        assert_eq!(parse_qrels(&p).unwrap(), qrels);
    }
}
