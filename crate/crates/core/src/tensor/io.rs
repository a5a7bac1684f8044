//! Weight container: a plain-text manifest followed by a little-endian payload.
//!
//! ```text
//! yotor-weights 1
//! count 2
//! backbone.patch_embed.weight f32 8,3,4,4 0 1536
//! backbone.patch_embed.bias f32 8 1536 32
//! end
//! <payload bytes>
//! ```
//!
//! Each manifest line is `name dtype dims offset nbytes`, where `dims` is a
//! comma-separated extent list and `offset` is relative to the first payload
//! byte (the byte after `end\n`). Names contain no whitespace.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DType, Element, Tensor};
use crate::error::{Error, Result};

const MAGIC: &str = "yotor-weights 1";

/// One named array as stored in the container.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub nbytes: usize,
}

/// An in-memory weight container with values widened to f64.
#[derive(Clone, Debug, Default)]
pub struct WeightFile {
    pub entries: Vec<ManifestEntry>,
    values: Vec<Vec<f64>>,
}

impl WeightFile {
    pub fn get(&self, name: &str) -> Option<(&ManifestEntry, &[f64])> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(|i| (&self.entries[i], self.values[i].as_slice()))
    }

    pub fn tensor<T: Element>(&self, name: &str) -> Result<Tensor<T>> {
        let (e, v) = self
            .get(name)
            .ok_or_else(|| Error::Weights(format!("missing array {name:?}")))?;
        Tensor::from_f64(&e.shape, v)
    }

    /// Sum of element counts over all arrays.
    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|e| e.shape.iter().product::<usize>()).sum()
    }
}

pub fn manifest_text(entries: &[ManifestEntry]) -> String {
    let mut s = format!("{MAGIC}\ncount {}\n", entries.len());
    for e in entries {
        let dims: Vec<String> = e.shape.iter().map(|d| d.to_string()).collect();
        s.push_str(&format!("{} {} {} {} {}\n", e.name, e.dtype, dims.join(","), e.offset, e.nbytes));
    }
    s.push_str("end\n");
    s
}

/// Serializes named tensors into container bytes.
pub fn encode<T: Element>(named: &[(String, Tensor<T>)]) -> Result<Vec<u8>> {
    let mut entries = Vec::with_capacity(named.len());
    let mut payload = Vec::new();
    for (name, t) in named {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::Weights(format!("invalid array name {name:?}")));
        }
        let offset = payload.len();
        for &v in t.data() {
            v.write_le(&mut payload);
        }
        entries.push(ManifestEntry {
            name: name.clone(),
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            offset,
            nbytes: payload.len() - offset,
        });
    }
    let mut out = manifest_text(&entries).into_bytes();
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<WeightFile> {
    let bad = |m: &str| Error::Weights(m.to_string());
    let mut pos = 0;
    let mut next_line = || -> Result<&str> {
        let rest = &bytes[pos..];
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated manifest"))?;
        pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| bad("manifest is not utf-8"))
    };
    if next_line()? != MAGIC {
        return Err(bad("not a yotor weight container"));
    }
    let count: usize = next_line()?
        .strip_prefix("count ")
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| bad("bad count line"))?;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let line = next_line()?;
        let f: Vec<&str> = line.split(' ').collect();
        if f.len() != 5 {
            return Err(bad(&format!("bad manifest line {line:?}")));
        }
        let dtype = match f[1] {
            "f32" => DType::F32,
            "f64" => DType::F64,
            other => return Err(bad(&format!("unknown dtype {other:?}"))),
        };
        let shape = f[2]
            .split(',')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad(&format!("bad dims in {line:?}")))?;
        let offset = f[3].parse().map_err(|_| bad("bad offset"))?;
        let nbytes = f[4].parse().map_err(|_| bad("bad nbytes"))?;
        if shape.iter().product::<usize>() * dtype.size() != nbytes {
            return Err(bad(&format!("size mismatch for {}", f[0])));
        }
        entries.push(ManifestEntry {
            name: f[0].to_string(),
            dtype,
            shape,
            offset,
            nbytes,
        });
    }
    if next_line()? != "end" {
        return Err(bad("missing end marker"));
    }
    let payload = &bytes[pos..];
    let mut values = Vec::with_capacity(entries.len());
    for e in &entries {
        let raw = payload
            .get(e.offset..e.offset + e.nbytes)
            .ok_or_else(|| bad(&format!("payload too short for {}", e.name)))?;
        let v: Vec<f64> = match e.dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect(),
            DType::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        };
        values.push(v);
    }
    Ok(WeightFile { entries, values })
}

pub fn save<T: Element>(path: &Path, named: &[(String, Tensor<T>)]) -> Result<()> {
    let bytes = encode(named)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<WeightFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip_and_manifest() {
        let a = Tensor::<f32>::from_f64(&[2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::<f32>::from_f64(&[1], &[-0.25]).unwrap();
        let bytes = encode(&[("layer.weight".to_string(), a.clone()), ("layer.bias".to_string(), b)]).unwrap();
        let text = String::from_utf8_lossy(&bytes[..80]).to_string();
        assert!(text.starts_with("yotor-weights 1\ncount 2\nlayer.weight f32 2,3 0 24\n"));
        let wf = decode(&bytes).unwrap();
        assert_eq!(wf.total_elements(), 7);
        assert_eq!(wf.tensor::<f32>("layer.weight").unwrap().to_vec(), a.to_vec());
        assert_eq!(wf.get("layer.bias").unwrap().1, &[-0.25]);
        assert!(wf.tensor::<f32>("nope").is_err());
    }

    #[test]
    fn rejects_corrupt_containers() {
        assert!(decode(b"hello\n").is_err());
        let a = Tensor::<f64>::ones(&[4]);
        let mut bytes = encode(&[("x".to_string(), a)]).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(decode(&bytes).is_err());
        assert!(encode(&[("has space".to_string(), Tensor::<f32>::ones(&[1]))]).is_err());
    }
}
