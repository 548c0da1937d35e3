//! Binary parameter container: magic `ESNN`, a u32 version, a u32 tensor
//! count, then per tensor a u16 name length, the name bytes, a u8 rank, u32
//! dims and little-endian f32 values in row-major order.

use super::layers::Param;
use super::network::Network;
use super::PredictorError;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"ESNN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub values: Vec<f32>,
}

pub fn encode(tensors: &[NamedTensor]) -> Result<Vec<u8>, PredictorError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| PredictorError::Checkpoint(format!("name too long: {}", t.name)))?;
        let rank = u8::try_from(t.dims.len()).map_err(|_| PredictorError::Checkpoint("rank above 255".into()))?;
        let count: u64 = t.dims.iter().map(|&d| u64::from(d)).product();
        if count != t.values.len() as u64 {
            return Err(PredictorError::Checkpoint(format!("{}: dims do not match value count", t.name)));
        }
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(rank);
        for d in &t.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &t.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PredictorError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| PredictorError::Checkpoint("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, PredictorError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedTensor>, PredictorError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(PredictorError::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(PredictorError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = c.u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(c.take(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(c.take(len)?.to_vec()).map_err(|_| PredictorError::Checkpoint("name not UTF-8".into()))?;
        let rank = c.take(1)?[0] as usize;
        let dims = (0..rank).map(|_| c.u32()).collect::<Result<Vec<_>, _>>()?;
        let n: usize = dims.iter().map(|&d| d as usize).product();
        let raw = c.take(n.checked_mul(4).ok_or_else(|| PredictorError::Checkpoint("size overflow".into()))?)?;
        let values = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        out.push(NamedTensor { name, dims, values });
    }
    if c.pos != bytes.len() {
        return Err(PredictorError::Checkpoint("trailing bytes".into()));
    }
    Ok(out)
}

fn to_tensor(p: &Param<f32>) -> NamedTensor {
    NamedTensor { name: p.name.clone(), dims: p.shape.iter().map(|&d| d as u32).collect(), values: p.value.clone() }
}

pub fn network_tensors(net: &Network<f32>) -> Vec<NamedTensor> {
    net.params().into_iter().map(to_tensor).collect()
}

/// Overwrites every tensor of `net` from the container; names and shapes
/// must match exactly.
pub fn load_into(net: &mut Network<f32>, tensors: &[NamedTensor]) -> Result<(), PredictorError> {
    let params = net.params_mut();
    if params.len() != tensors.len() {
        return Err(PredictorError::Checkpoint(format!("{} tensors, network has {}", tensors.len(), params.len())));
    }
    for (p, t) in params.into_iter().zip(tensors) {
        let dims: Vec<u32> = p.shape.iter().map(|&d| d as u32).collect();
        if p.name != t.name || dims != t.dims {
            return Err(PredictorError::Checkpoint(format!("expected {} {:?}, found {} {:?}", p.name, dims, t.name, t.dims)));
        }
        p.value.copy_from_slice(&t.values);
    }
    Ok(())
}

pub fn save(net: &Network<f32>, path: &Path) -> Result<(), PredictorError> {
    let bytes = encode(&network_tensors(net))?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn load(net: &mut Network<f32>, path: &Path) -> Result<(), PredictorError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    load_into(net, &decode(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::network::{ArchConfig, HeadKind, InputLayout};

    #[test]
    fn encode_decode_round_trip() {
        let t = vec![
            NamedTensor { name: "a".into(), dims: vec![2, 3], values: vec![1.0, -2.0, 3.5, 0.0, f32::MIN_POSITIVE, 7.0] },
            NamedTensor { name: "scalar".into(), dims: vec![], values: vec![4.25] },
        ];
        let bytes = encode(&t).unwrap();
        assert_eq!(&bytes[..4], b"ESNN");
        assert_eq!(decode(&bytes).unwrap(), t);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
    }

    #[test]
    fn network_round_trip_is_bitwise() {
        let layout = InputLayout { concepts: vec!["vehicle".into()], cameras: 2, height: 16, width: 32 };
        let net = Network::<f32>::new(&ArchConfig::desk_beam(), HeadKind::Beam { classes: 8 }, layout.clone(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.esnn");
        save(&net, &path).unwrap();
        let mut other = Network::<f32>::new(&ArchConfig::desk_beam(), HeadKind::Beam { classes: 8 }, layout, 6).unwrap();
        assert_ne!(other, net);
        load(&mut other, &path).unwrap();
        assert_eq!(other, net);
    }
}
