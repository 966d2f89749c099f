//! Binary model checkpoints.
//!
//! Layout: magic `SEDRCKPT`, a little-endian `u32` format version, the
//! encoder configuration block, the number of towers, then every parameter
//! tensor in declaration order as `name, rows, cols, f64 data` — all
//! integers and floats little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::encoder::{BiEncoder, EncoderConfig, EncoderRole, InteractionPattern, ModelParameters};
use crate::error::{annotate_io, Result, SedrError};
use crate::numerics::Param;

const MAGIC: &[u8; 8] = b"SEDRCKPT";
const VERSION: u32 = 1;

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| SedrError::Format(format!("checkpoint: truncated {what}: {e}")))?;
    Ok(u32::from_le_bytes(buf))
}

fn write_config(w: &mut impl Write, cfg: &EncoderConfig) -> Result<()> {
    for v in [
        cfg.vocab_size,
        cfg.hidden_dim,
        cfg.num_heads,
        cfg.num_layers,
        cfg.ffn_dim,
        cfg.segment_body_len,
        cfg.max_segments,
    ] {
        write_u32(w, v as u32)?;
    }
    w.write_all(&[cfg.interaction_pattern.tag(), cfg.tied_encoders as u8])?;
    Ok(())
}

fn read_config(r: &mut impl Read) -> Result<EncoderConfig> {
    let mut vals = [0u32; 7];
    for (i, v) in vals.iter_mut().enumerate() {
        *v = read_u32(r, &format!("config field {i}"))?;
    }
    let mut flags = [0u8; 2];
    r.read_exact(&mut flags)
        .map_err(|e| SedrError::Format(format!("checkpoint: truncated config flags: {e}")))?;
    let pattern = InteractionPattern::from_tag(flags[0])?;
    if flags[1] > 1 {
        return Err(SedrError::Format(format!(
            "checkpoint: invalid tied-encoders flag {}",
            flags[1]
        )));
    }
    let cfg = EncoderConfig {
        vocab_size: vals[0] as usize,
        hidden_dim: vals[1] as usize,
        num_heads: vals[2] as usize,
        num_layers: vals[3] as usize,
        ffn_dim: vals[4] as usize,
        segment_body_len: vals[5] as usize,
        max_segments: vals[6] as usize,
        interaction_pattern: pattern,
        tied_encoders: flags[1] == 1,
    };
    cfg.validate()
        .map_err(|e| SedrError::Format(format!("checkpoint: invalid config: {e}")))?;
    Ok(cfg)
}

fn write_param(w: &mut impl Write, p: &Param) -> Result<()> {
    let name = p.name.as_bytes();
    if name.len() > u16::MAX as usize {
        return Err(SedrError::Contract(format!("parameter name too long: {}", p.name)));
    }
    w.write_all(&(name.len() as u16).to_le_bytes())?;
    w.write_all(name)?;
    write_u32(w, p.rows() as u32)?;
    write_u32(w, p.cols() as u32)?;
    for &v in &p.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_param(r: &mut impl Read) -> Result<Param> {
    let mut len_buf = [0u8; 2];
    r.read_exact(&mut len_buf)
        .map_err(|e| SedrError::Format(format!("checkpoint: truncated tensor name length: {e}")))?;
    let name_len = u16::from_le_bytes(len_buf) as usize;
    let mut name_buf = vec![0u8; name_len];
    r.read_exact(&mut name_buf)
        .map_err(|e| SedrError::Format(format!("checkpoint: truncated tensor name: {e}")))?;
    let name = String::from_utf8(name_buf)
        .map_err(|e| SedrError::Format(format!("checkpoint: non-utf8 tensor name: {e}")))?;
    let rows = read_u32(r, &format!("rows of {name}"))? as usize;
    let cols = read_u32(r, &format!("cols of {name}"))? as usize;
    let mut data = vec![0.0f64; rows * cols];
    let mut buf = [0u8; 8];
    for (i, v) in data.iter_mut().enumerate() {
        r.read_exact(&mut buf).map_err(|e| {
            SedrError::Format(format!("checkpoint: truncated data of {name} at element {i}: {e}"))
        })?;
        *v = f64::from_le_bytes(buf);
    }
    Ok(Param { name, shape: vec![rows, cols], data })
}

/// Write a model checkpoint.
pub fn save_checkpoint(path: &Path, model: &BiEncoder) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, VERSION)?;
    write_config(&mut w, &model.config)?;
    let towers = if model.is_tied() { 1u8 } else { 2u8 };
    w.write_all(&[towers])?;
    for p in model.all_params() {
        write_param(&mut w, p)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a model checkpoint, validating magic, version, configuration, and
/// every tensor's name and shape against the declared layout.
pub fn load_checkpoint(path: &Path) -> Result<BiEncoder> {
    let mut r = BufReader::new(File::open(path).map_err(|e| annotate_io(path, e))?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|e| SedrError::Format(format!("checkpoint: truncated magic: {e}")))?;
    if &magic != MAGIC {
        return Err(SedrError::Format(format!(
            "checkpoint: bad magic {:02x?}, expected {MAGIC:02x?}",
            magic
        )));
    }
    let version = read_u32(&mut r, "version")?;
    if version != VERSION {
        return Err(SedrError::Format(format!(
            "checkpoint: unsupported version {version}, expected {VERSION}"
        )));
    }
    let cfg = read_config(&mut r)?;
    let mut towers = [0u8; 1];
    r.read_exact(&mut towers)
        .map_err(|e| SedrError::Format(format!("checkpoint: truncated tower count: {e}")))?;
    let expect_towers = if cfg.tied_encoders { 1 } else { 2 };
    if towers[0] != expect_towers {
        return Err(SedrError::Format(format!(
            "checkpoint: {} towers stored but config implies {expect_towers}",
            towers[0]
        )));
    }

    let read_tower = |r: &mut BufReader<File>, role: EncoderRole| -> Result<ModelParameters> {
        let count = ModelParameters::layout_len(&cfg, role);
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            entries.push(read_param(r)?);
        }
        ModelParameters::from_entries(&cfg, role, entries)
    };
    let doc = read_tower(&mut r, EncoderRole::Document)?;
    let query = if cfg.tied_encoders {
        None
    } else {
        Some(read_tower(&mut r, EncoderRole::Query)?)
    };
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(SedrError::Format("checkpoint: trailing bytes after last tensor".into()));
    }
    BiEncoder::from_towers(cfg, doc, query)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn round_trip_preserves_every_bit() {
        let dir = tempdir().unwrap();
        for tied in [false, true] {
            let mut cfg = EncoderConfig::tiny();
            cfg.tied_encoders = tied;
            cfg.interaction_pattern = InteractionPattern::TransformerHead;
            let model = BiEncoder::new(&cfg, 42).unwrap();
            let path = dir.path().join(format!("model-{tied}.ckpt"));
            save_checkpoint(&path, &model).unwrap();
            let loaded = load_checkpoint(&path).unwrap();
            assert_eq!(loaded.config, cfg);
            assert_eq!(loaded.is_tied(), tied);
            let a = model.all_params();
            let b = loaded.all_params();
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.name, y.name);
                assert_eq!(x.shape, y.shape);
                let xb: Vec<u64> = x.data.iter().map(|v| v.to_bits()).collect();
                let yb: Vec<u64> = y.data.iter().map(|v| v.to_bits()).collect();
                assert_eq!(xb, yb, "{} must survive bit-exactly", x.name);
            }
            // saving the loaded model reproduces the file byte-for-byte
            let path2 = dir.path().join(format!("model-{tied}-again.ckpt"));
            save_checkpoint(&path2, &loaded).unwrap();
            assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
        }
    }

    #[test]
    fn corrupted_magic_is_a_format_error() {
        let dir = tempdir().unwrap();
        let cfg = EncoderConfig::tiny();
        let model = BiEncoder::new(&cfg, 1).unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &model).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] ^= 0xFF;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(SedrError::Format(_))));
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let dir = tempdir().unwrap();
        let cfg = EncoderConfig::tiny();
        let model = BiEncoder::new(&cfg, 1).unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &model).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(SedrError::Format(_))));
    }

    #[test]
    fn trailing_garbage_is_a_format_error() {
        let dir = tempdir().unwrap();
        let cfg = EncoderConfig::tiny();
        let model = BiEncoder::new(&cfg, 1).unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &model).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(SedrError::Format(_))));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = load_checkpoint(Path::new("/nonexistent/model.ckpt")).unwrap_err();
        assert!(matches!(err, SedrError::Io(_)));
        assert_eq!(err.exit_code(), 2);
    }
}
