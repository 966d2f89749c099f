//! The flat segment-embedding index and its on-disk format.
//!
//! Layout: magic `SEDRIDX1`, little-endian `u32` format version, `u32`
//! vector dimension, `u64` record count, then packed records of
//! `u64 doc_id, u16 seg_ord, dim × f32` — all little-endian. Vectors are
//! stored in 32-bit precision; scoring accumulates in 64-bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::encoder::{encode_document, BiEncoder, Corpus};
use crate::error::{annotate_io, Result, SedrError};

const MAGIC: &[u8; 8] = b"SEDRIDX1";
const VERSION: u32 = 1;

/// One segment vector with its document id and segment ordinal.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexRecord {
    pub doc_id: u64,
    pub seg_ord: u16,
    pub vector: Vec<f32>,
}

/// Exhaustively scannable list of segment vectors, ordered by document then
/// segment ordinal.
#[derive(Debug, Clone, Default)]
pub struct SegmentIndex {
    dim: usize,
    records: Vec<IndexRecord>,
}

/// Documents that failed to encode during an index build.
#[derive(Debug, Clone, Default)]
pub struct BuildReport {
    pub indexed_docs: usize,
    pub skipped: Vec<(u64, String)>,
}

impl SegmentIndex {
    pub fn new(dim: usize) -> SegmentIndex {
        SegmentIndex { dim, records: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[IndexRecord] {
        &self.records
    }

    /// Append one record, enforcing dimension, ordinal-range, and
    /// (doc, ordinal) uniqueness within the document's contiguous block.
    pub fn push(&mut self, record: IndexRecord) -> Result<()> {
        if record.vector.len() != self.dim {
            return Err(SedrError::Dimension(format!(
                "index dim {} vs record dim {} for doc {}",
                self.dim,
                record.vector.len(),
                record.doc_id
            )));
        }
        if let Some(last) = self.records.last() {
            if last.doc_id == record.doc_id && record.seg_ord <= last.seg_ord {
                return Err(SedrError::Contract(format!(
                    "doc {}: segment ordinal {} repeats or regresses after {}",
                    record.doc_id, record.seg_ord, last.seg_ord
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }
}

/// Encode every corpus document with the document tower and collect one
/// record per segment (values cast to 32-bit). Documents that fail to encode
/// are skipped and reported.
pub fn build_index(model: &BiEncoder, corpus: &Corpus) -> Result<(SegmentIndex, BuildReport)> {
    let dim = model.config.hidden_dim;
    let mut index = SegmentIndex::new(dim);
    let mut report = BuildReport::default();
    for doc in corpus.records() {
        match encode_document(model, doc) {
            Ok(segs) => {
                if segs.len() > u16::MAX as usize {
                    report.skipped.push((doc.id, "too many segments".into()));
                    continue;
                }
                for (ord, seg) in segs.iter().enumerate() {
                    index.push(IndexRecord {
                        doc_id: doc.id,
                        seg_ord: ord as u16,
                        vector: seg.iter().map(|&v| v as f32).collect(),
                    })?;
                }
                report.indexed_docs += 1;
            }
            Err(e) => {
                log::warn!("skipping document {}: {e}", doc.id);
                report.skipped.push((doc.id, e.to_string()));
            }
        }
    }
    Ok((index, report))
}

/// Write the index in the canonical binary layout.
pub fn save_index(index: &SegmentIndex, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(index.dim as u32).to_le_bytes())?;
    w.write_all(&(index.records.len() as u64).to_le_bytes())?;
    for r in &index.records {
        w.write_all(&r.doc_id.to_le_bytes())?;
        w.write_all(&r.seg_ord.to_le_bytes())?;
        for &v in &r.vector {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn format_err(offset: u64, what: &str) -> SedrError {
    SedrError::Format(format!("index: {what} at byte offset {offset}"))
}

/// Read an index back, validating magic, version, and exact length.
pub fn load_index(path: &Path) -> Result<SegmentIndex> {
    let mut r = BufReader::new(File::open(path).map_err(|e| annotate_io(path, e))?);
    let mut offset = 0u64;
    let mut read_exact = |r: &mut BufReader<File>, buf: &mut [u8], what: &str| -> Result<()> {
        r.read_exact(buf).map_err(|_| format_err(offset, what))?;
        offset += buf.len() as u64;
        Ok(())
    };

    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, "truncated magic")?;
    if &magic != MAGIC {
        return Err(format_err(0, "bad magic"));
    }
    let mut u32buf = [0u8; 4];
    read_exact(&mut r, &mut u32buf, "truncated version")?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(format_err(8, &format!("unsupported version {version}")));
    }
    read_exact(&mut r, &mut u32buf, "truncated dimension")?;
    let dim = u32::from_le_bytes(u32buf) as usize;
    let mut u64buf = [0u8; 8];
    read_exact(&mut r, &mut u64buf, "truncated record count")?;
    let count = u64::from_le_bytes(u64buf) as usize;

    let mut index = SegmentIndex::new(dim);
    let mut f32buf = [0u8; 4];
    let mut u16buf = [0u8; 2];
    for i in 0..count {
        read_exact(&mut r, &mut u64buf, &format!("truncated doc id of record {i}"))?;
        let doc_id = u64::from_le_bytes(u64buf);
        read_exact(&mut r, &mut u16buf, &format!("truncated segment ordinal of record {i}"))?;
        let seg_ord = u16::from_le_bytes(u16buf);
        let mut vector = Vec::with_capacity(dim);
        for _ in 0..dim {
            read_exact(&mut r, &mut f32buf, &format!("truncated vector of record {i}"))?;
            vector.push(f32::from_le_bytes(f32buf));
        }
        index.push(IndexRecord { doc_id, seg_ord, vector })?;
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(format_err(offset, "trailing bytes after last record"));
    }
    Ok(index)
}
