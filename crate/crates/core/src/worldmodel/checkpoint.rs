//! Binary checkpoints: `SMRL1`, a little-endian `u64` header length, a JSON
//! header describing the tensors, then every parameter followed by every
//! momentum buffer as little-endian `f64`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Matrix, ModelConfig, ModelError, WorldModel};

pub const MAGIC: &[u8; 5] = b"SMRL1";
const MAX_HEADER: u64 = 1 << 24;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    obs_dim: usize,
    action_dim: usize,
    updates: u64,
    shapes: Vec<(usize, usize)>,
}

pub fn save<W: Write>(model: &WorldModel, out: &mut W) -> Result<(), ModelError> {
    let header = Header {
        version: 1,
        config: model.config().clone(),
        obs_dim: model.obs_dim(),
        action_dim: model.action_dim(),
        updates: model.updates(),
        shapes: model.params().iter().map(Matrix::shape).collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for m in model.params().iter().chain(model.velocity()) {
        for x in m.data() {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load<R: Read>(input: &mut R) -> Result<WorldModel, ModelError> {
    let mut magic = [0u8; 5];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::Checkpoint("bad magic bytes".into()));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > MAX_HEADER {
        return Err(ModelError::Checkpoint(format!("header length {len} is implausible")));
    }
    let mut json = vec![0u8; len as usize];
    input.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    if header.version != 1 {
        return Err(ModelError::Checkpoint(format!("unsupported version {}", header.version)));
    }
    let mut read_tensors = || -> Result<Vec<Matrix>, ModelError> {
        header
            .shapes
            .iter()
            .map(|&(r, c)| {
                let mut bytes = vec![0u8; r * c * 8];
                input.read_exact(&mut bytes)?;
                let data = bytes
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                    .collect();
                Ok(Matrix::from_vec(r, c, data))
            })
            .collect()
    };
    let params = read_tensors()?;
    let velocity = read_tensors()?;
    WorldModel::from_parts(header.config, header.obs_dim, header.action_dim, params, velocity, header.updates)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut m = WorldModel::new(ModelConfig::default(), 3, 2, 4).unwrap();
        m.randomize(9, 1.0);
        m.params_mut()[3].data_mut()[0] = -0.0;
        m.params_mut()[3].data_mut()[1] = f64::MIN_POSITIVE / 3.0;
        let mut bytes = Vec::new();
        save(&m, &mut bytes).unwrap();
        assert_eq!(&bytes[..5], MAGIC);
        let back = load(&mut bytes.as_slice()).unwrap();
        let bits = |m: &WorldModel| -> Vec<u64> { m.params().iter().flat_map(|p| p.data().iter().map(|x| x.to_bits())).collect() };
        assert_eq!(bits(&m), bits(&back));
        assert_eq!(back, m);
        let mut again = Vec::new();
        save(&back, &mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let m = WorldModel::new(ModelConfig::default(), 3, 2, 4).unwrap();
        let mut bytes = Vec::new();
        save(&m, &mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(load(&mut bad.as_slice()).is_err());
        let truncated = &bytes[..bytes.len() - 3];
        assert!(load(&mut &truncated[..]).is_err());
    }
}
