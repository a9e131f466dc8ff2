//! Model persistence: a flat binary file (header + little-endian f64
//! parameters) plus a JSON sidecar with the config for human inspection.
//!
//! Binary layout: magic `ORDIQEM1`, version u32, kind u32 (0 = bi-recurrent,
//! 1 = mean-pool MLP), n_channels/hidden/embed/window u32, seed u64,
//! param_count u64, then parameters as f64. All integers little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{EmbeddingModel, EncoderConfig, EncoderKind};

const MAGIC: &[u8; 8] = b"ORDIQEM1";
const VERSION: u32 = 1;

/// Write the binary model file at `path` and a `.json` config sidecar
/// beside it.
pub fn save_model(model: &EmbeddingModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let cfg = model.config();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let kind: u32 = match cfg.kind {
        EncoderKind::BiRecurrent => 0,
        EncoderKind::MeanPoolMlp => 1,
    };
    w.write_all(&kind.to_le_bytes())?;
    for dim in [
        cfg.n_channels,
        cfg.hidden_dim,
        cfg.embed_dim,
        cfg.window_length,
    ] {
        w.write_all(&(dim as u32).to_le_bytes())?;
    }
    w.write_all(&cfg.seed.to_le_bytes())?;
    w.write_all(&(model.parameters().len() as u64).to_le_bytes())?;
    for p in model.parameters() {
        w.write_all(&p.to_le_bytes())?;
    }
    w.flush()?;

    let sidecar = path.with_extension("json");
    let json = serde_json::to_string_pretty(cfg)?;
    std::fs::write(sidecar, json)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<EmbeddingModel> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::BadModelFile("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::BadModelFile(format!(
            "unsupported version {version}"
        )));
    }
    let kind = match read_u32(&mut r)? {
        0 => EncoderKind::BiRecurrent,
        1 => EncoderKind::MeanPoolMlp,
        other => return Err(Error::BadModelFile(format!("unknown encoder kind {other}"))),
    };
    let n_channels = read_u32(&mut r)? as usize;
    let hidden_dim = read_u32(&mut r)? as usize;
    let embed_dim = read_u32(&mut r)? as usize;
    let window_length = read_u32(&mut r)? as usize;
    let seed = read_u64(&mut r)?;
    let count = read_u64(&mut r)? as usize;

    let config = EncoderConfig {
        kind,
        n_channels,
        hidden_dim,
        embed_dim,
        window_length,
        seed,
    };
    config
        .validate()
        .map_err(|e| Error::BadModelFile(format!("invalid stored config: {e}")))?;
    if count != config.param_count() {
        return Err(Error::BadModelFile(format!(
            "parameter count {count} does not match config-implied {}",
            config.param_count()
        )));
    }

    let mut parameters = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        parameters.push(f64::from_le_bytes(buf));
    }
    // must be at EOF now
    if r.read(&mut buf)? != 0 {
        return Err(Error::BadModelFile(
            "trailing bytes after parameters".into(),
        ));
    }
    EmbeddingModel::from_parameters(config, parameters)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
