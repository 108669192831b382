use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Model, ModelConfig, ModelParams};
use crate::autodiff::Tensor;
use crate::error::{Result, SageError};

pub const MODEL_MAGIC: &[u8; 6] = b"SAGEM1";
pub const MODEL_VERSION: u32 = 1;

/// Magic, version, length-prefixed JSON configuration, then every parameter
/// tensor as u64 rows, u64 cols and row-major f32, all little-endian.
pub fn save_model<W: Write>(mut w: W, model: &Model<f32>) -> Result<()> {
    let config = serde_json::to_vec(&model.config)?;
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&(config.len() as u64).to_le_bytes())?;
    w.write_all(&config)?;
    for t in model.params.tensors() {
        w.write_all(&(t.rows() as u64).to_le_bytes())?;
        w.write_all(&(t.cols() as u64).to_le_bytes())?;
        for x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| SageError::Format("model file truncated".into()))?;
    Ok(u64::from_le_bytes(b))
}

pub fn load_model<R: Read>(mut r: R) -> Result<Model<f32>> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .map_err(|_| SageError::Format("model file too short".into()))?;
    if &magic != MODEL_MAGIC {
        return Err(SageError::Format("bad model magic".into()));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v)?;
    let version = u32::from_le_bytes(v);
    if version != MODEL_VERSION {
        return Err(SageError::Format(format!("unsupported model version {version}")));
    }
    let len = read_u64(&mut r)? as usize;
    let mut config = vec![0u8; len];
    r.read_exact(&mut config)
        .map_err(|_| SageError::Format("model file truncated".into()))?;
    let config: ModelConfig = serde_json::from_slice(&config)?;
    config.validate()?;
    let mut tensors = Vec::new();
    for (rows, cols) in ModelParams::<f32>::shapes(&config)? {
        let (fr, fc) = (read_u64(&mut r)? as usize, read_u64(&mut r)? as usize);
        if (fr, fc) != (rows, cols) {
            return Err(SageError::Format(format!(
                "tensor shape {fr}x{fc} does not match configuration {rows}x{cols}"
            )));
        }
        let mut bytes = vec![0u8; rows * cols * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| SageError::Format("model file truncated".into()))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push(Tensor::from_vec(rows, cols, data)?);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(SageError::Format("trailing bytes after model".into()));
    }
    // initialised only for names and layout; every value is overwritten
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = ModelParams::init(&config, &mut rng)?.with_tensors(tensors)?;
    Model::new(config, params)
}
