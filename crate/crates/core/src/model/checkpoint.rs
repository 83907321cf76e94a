use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::NetworkConfig;
use super::network::Network;
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"DCKP";
const VERSION: u32 = 1;

/// Serialized network: config plus every named parameter tensor.
///
/// Layout (little-endian): magic, version `u32`, config text and metadata
/// text (each `u64` length + bytes), parameter count `u32`, then per
/// parameter its name, rank, dims and `f64` values, followed by a CRC-32 of
/// everything before it.
pub struct Checkpoint;

impl Checkpoint {
    pub fn to_bytes(net: &Network) -> Vec<u8> {
        Self::encode(net, &KvMap::new())
    }

    /// Serializes `net` together with free-form metadata.
    pub fn encode(net: &Network, meta: &KvMap) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for text in [net.config().to_kv().to_text(), meta.to_text()] {
            out.extend_from_slice(&(text.len() as u64).to_le_bytes());
            out.extend_from_slice(text.as_bytes());
        }
        let params = net.params();
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for (name, t) in params.names().iter().zip(params.tensors()) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
        Ok(Self::decode(bytes)?.0)
    }

    pub fn decode(bytes: &[u8]) -> Result<(Network, KvMap)> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let mut r = Reader { buf: bytes, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        if bytes.len() < 12 {
            return Err(Error::Truncated("checkpoint".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Checksum("checkpoint".into()));
        }
        r.buf = body;
        let cfg_len = r.u64()? as usize;
        let cfg_text = std::str::from_utf8(r.take(cfg_len)?).map_err(|_| Error::Format("config is not UTF-8".into()))?;
        let config = NetworkConfig::from_kv(&KvMap::parse(cfg_text)?)?;
        let meta_len = r.u64()? as usize;
        let meta_text = std::str::from_utf8(r.take(meta_len)?).map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
        let meta = KvMap::parse(meta_text)?;
        let mut net = Network::new(config, 0)?;
        let count = r.u32()? as usize;
        if count != net.params().len() {
            return Err(Error::Mismatch(format!(
                "checkpoint has {count} parameters, config expects {}",
                net.params().len()
            )));
        }
        for id in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| Error::Format("bad parameter name".into()))?;
            if name != net.params().name(id) {
                return Err(Error::Mismatch(format!(
                    "parameter {id} is {name:?}, expected {:?}",
                    net.params().name(id)
                )));
            }
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if shape != net.params().get(id).shape() {
                return Err(Error::Mismatch(format!("parameter {name} has shape {shape:?}")));
            }
            let n: usize = shape.iter().product();
            let data = r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            *net.params_mut().get_mut(id) = Tensor::new(&shape, data)?;
        }
        if r.pos != body.len() {
            return Err(Error::Format("trailing bytes after parameters".into()));
        }
        Ok((net, meta))
    }

    /// SHA-256 of the serialized form, hex encoded.
    pub fn hash(net: &Network) -> String {
        hex(&Sha256::digest(Self::to_bytes(net)))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Truncated("checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    fs::write(path, Checkpoint::to_bytes(net))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

/// Writes a checkpoint with metadata.
pub fn save_checkpoint_with(net: &Network, meta: &KvMap, path: &Path) -> Result<()> {
    fs::write(path, Checkpoint::encode(net, meta))?;
    Ok(())
}

pub fn load_checkpoint_with(path: &Path) -> Result<(Network, KvMap)> {
    Checkpoint::decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::StageConfig;

    fn small() -> Network {
        let cfg = NetworkConfig {
            input_size: 8,
            stages: vec![
                StageConfig {
                    width: 2,
                    kernel: 3,
                    stride: 2,
                };
                2
            ],
            memory_positions: vec![0, 1],
            memory_enabled: vec![true, true],
            head_hidden: 3,
            ..NetworkConfig::default()
        };
        Network::new(cfg, 5).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let net = small();
        let back = Checkpoint::from_bytes(&Checkpoint::to_bytes(&net)).unwrap();
        assert_eq!(back, net);
        assert_eq!(Checkpoint::hash(&back), Checkpoint::hash(&net));
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = Checkpoint::to_bytes(&small());
        let mut bad = bytes.clone();
        bad[40] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checksum(_))));
        let mut old = bytes.clone();
        old[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&old), Err(Error::Version { .. })));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() / 2]).is_err());
    }
}
