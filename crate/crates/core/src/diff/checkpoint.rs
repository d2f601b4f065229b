//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic            8 bytes  "LRMCKPT\0"
//! format version   u32
//! config digest    u64      FNV-1a 64 of the metadata string
//! metadata length  u32
//! metadata         UTF-8 (JSON; embeds the architecture config)
//! block count      u32
//! per block:
//!   name length    u32
//!   name           UTF-8
//!   shape rank     u32
//!   dims           u32 x rank
//!   payload        f32  x product(dims), little-endian
//! ```
//!
//! Values are stored as 32-bit floats; loading widens back to `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"LRMCKPT\0";
const VERSION: u32 = 1;

/// FNV-1a 64-bit hash; used as the architecture config digest.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// A checkpoint in memory: metadata string plus named parameter tensors.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub metadata: String,
    pub blocks: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn digest(&self) -> u64 {
        fnv1a64(self.metadata.as_bytes())
    }

    pub fn block(&self, name: &str) -> Option<&Tensor> {
        self.blocks.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.digest().to_le_bytes())?;
        let meta = self.metadata.as_bytes();
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(meta)?;
        w.write_all(&(self.blocks.len() as u32).to_le_bytes())?;
        for (name, tensor) in &self.blocks {
            let nb = name.as_bytes();
            w.write_all(&(nb.len() as u32).to_le_bytes())?;
            w.write_all(nb)?;
            w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
            for &d in tensor.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &v in tensor.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let digest = read_u64(r)?;
        let meta_len = read_u32(r)? as usize;
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta)?;
        let metadata = String::from_utf8(meta)
            .map_err(|_| Error::Format("checkpoint metadata is not UTF-8".into()))?;
        if fnv1a64(metadata.as_bytes()) != digest {
            return Err(Error::Format("checkpoint digest does not match metadata".into()));
        }
        let count = read_u32(r)? as usize;
        let mut blocks = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Format("block name is not UTF-8".into()))?;
            let rank = read_u32(r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(r)? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            let mut buf = [0u8; 4];
            for _ in 0..numel {
                r.read_exact(&mut buf)?;
                data.push(f32::from_le_bytes(buf) as f64);
            }
            blocks.push((name, Tensor::from_vec(&shape, data)?));
        }
        Ok(Checkpoint { metadata, blocks })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_blocks_and_metadata() {
        let ckpt = Checkpoint {
            metadata: r#"{"arch":"test","q":4}"#.into(),
            blocks: vec![
                (
                    "layer0.w".into(),
                    Tensor::from_vec(&[2, 3], vec![1.0, -2.5, 0.125, 3.0, 4.0, -0.0625]).unwrap(),
                ),
                ("layer0.b".into(), Tensor::from_vec(&[3], vec![0.5, 0.25, -1.0]).unwrap()),
            ],
        };
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.metadata, ckpt.metadata);
        assert_eq!(back.blocks.len(), 2);
        // the chosen values are exactly representable in f32
        assert_eq!(back.block("layer0.w").unwrap().data(), ckpt.blocks[0].1.data());
        assert_eq!(back.block("layer0.b").unwrap().shape(), &[3]);
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let ckpt = Checkpoint {
            metadata: "{}".into(),
            blocks: vec![],
        };
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        buf[0] = b'X';
        assert!(Checkpoint::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn identical_content_serializes_identically() {
        let make = || Checkpoint {
            metadata: "{\"v\":1}".into(),
            blocks: vec![("w".into(), Tensor::from_vec(&[2], vec![0.1, 0.2]).unwrap())],
        };
        let mut a = Vec::new();
        make().write_to(&mut a).unwrap();
        let mut b = Vec::new();
        make().write_to(&mut b).unwrap();
        assert_eq!(a, b);
    }
}
