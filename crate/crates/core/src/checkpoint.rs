//! Self-describing binary checkpoints.
//!
//! Layout (all little-endian): magic, format version, model config, seed
//! provenance (seed + free-form label), then each parameter array as
//! (name, rows, cols, f64 bits). Raw bit patterns round-trip exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, PARAM_NAMES};

const MAGIC: &[u8; 8] = b"STCKPT01";

/// Where a checkpoint's weights came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub label: String,
}

pub fn save(params: &ModelParams, provenance: &Provenance, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;

    let cfg = &params.config;
    for v in [
        cfg.embed_dim as u64,
        cfg.hidden_dim as u64,
        cfg.vocab_size as u64,
        cfg.max_decode_len as u64,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&cfg.dropout_rate.to_bits().to_le_bytes())?;
    w.write_all(&cfg.label_smoothing.to_bits().to_le_bytes())?;

    w.write_all(&provenance.seed.to_le_bytes())?;
    let label = provenance.label.as_bytes();
    w.write_all(&(label.len() as u32).to_le_bytes())?;
    w.write_all(label)?;

    let arrays = params.arrays();
    w.write_all(&(arrays.len() as u32).to_le_bytes())?;
    for (name, arr) in arrays {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(arr.nrows() as u64).to_le_bytes())?;
        w.write_all(&(arr.ncols() as u64).to_le_bytes())?;
        for v in arr.iter() {
            w.write_all(&v.to_bits().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

fn read_string(r: &mut impl Read, len: usize) -> Result<String> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint("invalid UTF-8 in checkpoint".into()))
}

pub fn load(path: &Path) -> Result<(ModelParams, Provenance)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }

    let embed_dim = read_u64(&mut r)? as usize;
    let hidden_dim = read_u64(&mut r)? as usize;
    let vocab_size = read_u64(&mut r)? as usize;
    let max_decode_len = read_u64(&mut r)? as usize;
    let dropout_rate = read_f64(&mut r)?;
    let label_smoothing = read_f64(&mut r)?;
    let config = ModelConfig {
        embed_dim,
        hidden_dim,
        dropout_rate,
        label_smoothing,
        vocab_size,
        max_decode_len,
    };

    let seed = read_u64(&mut r)?;
    let label_len = read_u32(&mut r)? as usize;
    let label = read_string(&mut r, label_len)?;

    let count = read_u32(&mut r)? as usize;
    if count != PARAM_NAMES.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} arrays, found {count}",
            PARAM_NAMES.len()
        )));
    }
    let mut arrays: Vec<(String, Array2<f64>)> = Vec::with_capacity(count);
    for expected in PARAM_NAMES {
        let name_len = read_u16(&mut r)? as usize;
        let name = read_string(&mut r, name_len)?;
        if name != expected {
            return Err(Error::Checkpoint(format!(
                "array order mismatch: expected {expected}, found {name}"
            )));
        }
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(read_f64(&mut r)?);
        }
        let arr = Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::Checkpoint(format!("bad shape for {name}: {e}")))?;
        arrays.push((name, arr));
    }

    let mut it = arrays.into_iter().map(|(_, a)| a);
    let params = ModelParams {
        config,
        embedding: it.next().unwrap(),
        enc_wx: it.next().unwrap(),
        enc_wh: it.next().unwrap(),
        enc_b: it.next().unwrap(),
        dec_wx: it.next().unwrap(),
        dec_wh: it.next().unwrap(),
        dec_b: it.next().unwrap(),
        out_w: it.next().unwrap(),
        out_b: it.next().unwrap(),
    };
    params.assert_finite().map_err(|_| {
        Error::Checkpoint("checkpoint contains non-finite parameters".into())
    })?;
    let expected_shapes = [
        (params.config.vocab_size, params.config.embed_dim),
        (params.config.embed_dim, 4 * params.config.hidden_dim),
        (params.config.hidden_dim, 4 * params.config.hidden_dim),
        (1, 4 * params.config.hidden_dim),
        (params.config.embed_dim, 4 * params.config.hidden_dim),
        (params.config.hidden_dim, 4 * params.config.hidden_dim),
        (1, 4 * params.config.hidden_dim),
        (params.config.hidden_dim, params.config.vocab_size),
        (1, params.config.vocab_size),
    ];
    for ((name, arr), want) in params.arrays().iter().zip(expected_shapes) {
        if arr.dim() != want {
            return Err(Error::Checkpoint(format!(
                "array {name} has shape {:?}, config implies {want:?}",
                arr.dim()
            )));
        }
    }
    Ok((params, Provenance { seed, label }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn cfg() -> ModelConfig {
        ModelConfig {
            embed_dim: 3,
            hidden_dim: 4,
            dropout_rate: 0.3,
            label_smoothing: 0.1,
            vocab_size: 9,
            max_decode_len: 5,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let params = init_params(&cfg(), 42).unwrap();
        let prov = Provenance {
            seed: 42,
            label: "unit test".into(),
        };
        let dir = std::env::temp_dir().join(format!("st-ckpt-{}", std::process::id()));
        let path = dir.join("model.ckpt");
        save(&params, &prov, &path).unwrap();
        let (loaded, got_prov) = load(&path).unwrap();
        assert_eq!(got_prov, prov);
        assert_eq!(loaded.config, params.config);
        for ((_, a), (_, b)) in params.arrays().iter().zip(loaded.arrays().iter()) {
            assert_eq!(a.dim(), b.dim());
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        // Re-saving the loaded params produces identical bytes.
        let path2 = dir.join("model2.ckpt");
        save(&loaded, &got_prov, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn rejects_non_checkpoints() {
        let dir = std::env::temp_dir().join(format!("st-ckpt-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("junk.ckpt");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(load(&path).is_err());
        let _ = std::fs::remove_dir_all(&dir);
    }
}
