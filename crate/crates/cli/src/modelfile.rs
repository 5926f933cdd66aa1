//! Binary container of named `f32` tensors.
//!
//! Layout, all integers `u32` little-endian:
//!
//! ```text
//! "PANW" version name_len name count
//!   { name_len name rank dim*rank f32le*prod(dims) } * count
//! ```
//!
//! Tensors are written in name order so equal contents give equal bytes.

use std::collections::BTreeMap;
use std::path::Path;

use pan_core::{Model, PanError, Result, Tensor};

pub const MAGIC: &[u8; 4] = b"PANW";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub name: String,
    pub tensors: BTreeMap<String, Tensor>,
}

impl ModelFile {
    pub fn from_model(model: &Model) -> Self {
        Self {
            name: model.name().to_string(),
            tensors: model.named_tensors(),
        }
    }

    /// Loads the stored tensors into `model`; names and shapes must match.
    pub fn restore(&self, model: &mut Model) -> Result<()> {
        if self.name != model.name() {
            return Err(PanError::Contract(format!(
                "file holds model `{}`, expected `{}`",
                self.name,
                model.name()
            )));
        }
        model.load_tensors(&self.tensors)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_str(&mut out, &self.name);
        put_u32(&mut out, self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            put_u32(&mut out, t.shape().len() as u32);
            for &d in t.shape() {
                put_u32(&mut out, d as u32);
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(PanError::Parse {
                offset: 0,
                reason: "bad magic, expected PANW".into(),
            });
        }
        let at = r.pos;
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(PanError::Parse {
                offset: at,
                reason: format!("unsupported version {version}"),
            });
        }
        let name = r.string("model name")?;
        let count = r.u32("tensor count")?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let at = r.pos;
            let tname = r.string("tensor name")?;
            let rank = r.u32("rank")? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u32("dim")? as usize);
            }
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n
                .filter(|n| n.checked_mul(4).is_some_and(|b| b <= bytes.len()))
                .ok_or_else(|| PanError::Parse {
                    offset: at,
                    reason: format!("tensor {tname} shape {shape:?} exceeds file size"),
                })?;
            let payload = r.take(4 * n, "tensor payload")?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if tensors
                .insert(tname.clone(), Tensor::new(shape, data)?)
                .is_some()
            {
                return Err(PanError::Parse {
                    offset: at,
                    reason: format!("duplicate tensor {tname}"),
                });
            }
        }
        if r.pos != bytes.len() {
            return Err(PanError::Parse {
                offset: r.pos,
                reason: "trailing bytes".into(),
            });
        }
        Ok(Self { name, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(PanError::Parse {
                offset: self.bytes.len(),
                reason: format!("truncated {what}"),
            });
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let at = self.pos;
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| PanError::Parse {
            offset: at,
            reason: format!("{what} is not UTF-8"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelFile {
        let mut tensors = BTreeMap::new();
        tensors.insert(
            "a.0.weight".into(),
            Tensor::new(
                vec![2, 3],
                vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5, -2.25, 1e-30],
            )
            .unwrap(),
        );
        tensors.insert("a.1.bias".into(), Tensor::new(vec![0], vec![]).unwrap());
        ModelFile {
            name: "a".into(),
            tensors,
        }
    }

    #[test]
    fn header_layout() {
        let b = sample().to_bytes();
        assert_eq!(&b[..4], b"PANW");
        assert_eq!(&b[4..8], &[1, 0, 0, 0]);
        assert_eq!(&b[8..12], &[1, 0, 0, 0]);
        assert_eq!(b[12], b'a');
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let f = sample();
        let b = f.to_bytes();
        let g = ModelFile::from_bytes(&b).unwrap();
        assert_eq!(g.to_bytes(), b);
        let bits = |m: &ModelFile| {
            m.tensors["a.0.weight"]
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&f), bits(&g));
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let b = sample().to_bytes();
        assert!(matches!(
            ModelFile::from_bytes(b"PANX"),
            Err(PanError::Parse { offset: 0, .. })
        ));
        assert!(ModelFile::from_bytes(&b[..b.len() - 1]).is_err());
        let mut extra = b.clone();
        extra.push(0);
        assert!(matches!(
            ModelFile::from_bytes(&extra),
            Err(PanError::Parse { .. })
        ));
        let mut v2 = b;
        v2[4] = 2;
        assert!(matches!(
            ModelFile::from_bytes(&v2),
            Err(PanError::Parse { offset: 4, .. })
        ));
    }
}
