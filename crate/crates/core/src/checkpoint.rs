//! Named-tensor container.
//!
//! Layout: a UTF-8 text index terminated by a line `end`, followed by the
//! raw little-endian values of every tensor back to back.
//!
//! ```text
//! CSLRCKPT 1
//! meta <key> <value>
//! tensor <name> <f32|f64> <d0,d1,..|scalar> <offset> <nbytes>
//! end
//! <payload>
//! ```
//!
//! Offsets are relative to the first payload byte. Names and meta keys may
//! not contain whitespace; meta values run to the end of the line.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::real::{DType, Real};
use crate::tensor::Tensor;

const MAGIC: &str = "CSLRCKPT 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Container<T> {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Real> Default for Container<T> {
    fn default() -> Self {
        Self {
            meta: BTreeMap::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T: Real> Container<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut index = String::new();
        index.push_str(MAGIC);
        index.push('\n');
        for (k, v) in &self.meta {
            if k.is_empty() || k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(Error::validation(format!("bad checkpoint meta entry {k:?}")));
            }
            index.push_str(&format!("meta {k} {v}\n"));
        }
        let mut payload = Vec::new();
        for (name, t) in &self.tensors {
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(Error::validation(format!("bad tensor name {name:?}")));
            }
            let dims = if t.shape().is_empty() {
                "scalar".to_string()
            } else {
                t.shape().iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
            };
            let offset = payload.len();
            for &v in t.data() {
                v.write_le(&mut payload);
            }
            index.push_str(&format!(
                "tensor {name} {} {dims} {offset} {}\n",
                T::DTYPE,
                payload.len() - offset
            ));
        }
        index.push_str("end\n");
        let mut out = index.into_bytes();
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let perr = |offset: usize, message: String| Error::Parse {
            path: origin.to_string(),
            offset: offset as u64,
            message,
        };
        let mut pos = 0;
        let mut lines = Vec::new();
        loop {
            let nl = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| perr(pos, "unterminated index".into()))?;
            let line =
                std::str::from_utf8(&bytes[pos..pos + nl]).map_err(|_| perr(pos, "index is not UTF-8".into()))?;
            lines.push((pos, line));
            pos += nl + 1;
            if line == "end" {
                break;
            }
        }
        let payload = &bytes[pos..];
        if lines.first().map(|l| l.1) != Some(MAGIC) {
            return Err(perr(0, "bad magic".into()));
        }
        let mut out = Container::default();
        for &(at, line) in &lines[1..lines.len() - 1] {
            let mut parts = line.splitn(2, ' ');
            match parts.next() {
                Some("meta") => {
                    let rest = parts.next().unwrap_or("");
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    out.meta.insert(k.to_string(), v.to_string());
                }
                Some("tensor") => {
                    let f: Vec<&str> = parts.next().unwrap_or("").split(' ').collect();
                    if f.len() != 5 {
                        return Err(perr(at, format!("malformed tensor entry {line:?}")));
                    }
                    let dtype = DType::parse(f[1]).ok_or_else(|| perr(at, format!("unknown dtype {}", f[1])))?;
                    if dtype != T::DTYPE {
                        return Err(perr(
                            at,
                            format!("tensor {} stored as {dtype}, expected {}", f[0], T::DTYPE),
                        ));
                    }
                    let shape: Vec<usize> = if f[2] == "scalar" {
                        vec![]
                    } else {
                        f[2].split(',')
                            .map(|d| d.parse().map_err(|_| perr(at, format!("bad dimension {d:?}"))))
                            .collect::<Result<_>>()?
                    };
                    let offset: usize = f[3].parse().map_err(|_| perr(at, "bad offset".into()))?;
                    let nbytes: usize = f[4].parse().map_err(|_| perr(at, "bad byte count".into()))?;
                    let n: usize = shape.iter().product();
                    if n * dtype.size() != nbytes {
                        return Err(perr(at, format!("tensor {} shape/byte-count mismatch", f[0])));
                    }
                    if offset + nbytes > payload.len() {
                        return Err(perr(
                            pos + payload.len(),
                            format!("payload truncated for tensor {}", f[0]),
                        ));
                    }
                    let data = payload[offset..offset + nbytes]
                        .chunks_exact(dtype.size())
                        .map(T::read_le)
                        .collect();
                    out.tensors.push((f[0].to_string(), Tensor::new(shape, data)?));
                }
                _ => return Err(perr(at, format!("unknown index line {line:?}"))),
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

/// Precision recorded in a container, read without decoding the payload.
pub fn peek_dtype(bytes: &[u8]) -> Option<DType> {
    let text = std::str::from_utf8(&bytes[..bytes.len().min(1 << 16)])
        .ok()
        .or_else(|| {
            let end = bytes.windows(5).position(|w| w == b"\nend\n")?;
            std::str::from_utf8(&bytes[..end]).ok()
        })?;
    text.lines().find_map(|l| {
        l.strip_prefix("tensor ")
            .and_then(|r| r.split(' ').nth(1))
            .and_then(DType::parse)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn sample<T: Real>() -> Container<T> {
        let mut r = rng::from_seed(11);
        let mut c = Container::default();
        c.meta.insert("d_model".into(), "16".into());
        c.meta.insert("note".into(), "two words".into());
        c.tensors
            .push(("a.weight".into(), Tensor::uniform(&[3, 4], 1.0, &mut r)));
        c.tensors.push(("a.bias".into(), Tensor::uniform(&[4], 1.0, &mut r)));
        c.tensors.push(("s".into(), Tensor::scalar(T::of(-0.125))));
        c
    }

    #[test]
    fn bit_exact_round_trip() {
        let c = sample::<f32>();
        let back = Container::<f32>::from_bytes(&c.to_bytes().unwrap(), "mem").unwrap();
        assert_eq!(back, c);
        let c = sample::<f64>();
        let bytes = c.to_bytes().unwrap();
        assert_eq!(peek_dtype(&bytes), Some(DType::F64));
        assert_eq!(Container::<f64>::from_bytes(&bytes, "mem").unwrap(), c);
    }

    #[test]
    fn precision_mismatch_and_truncation() {
        let bytes = sample::<f64>().to_bytes().unwrap();
        assert!(matches!(
            Container::<f32>::from_bytes(&bytes, "mem"),
            Err(Error::Parse { .. })
        ));
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(
            Container::<f64>::from_bytes(cut, "mem"),
            Err(Error::Parse { .. })
        ));
        assert!(Container::<f64>::from_bytes(b"NOPE\nend\n", "mem").is_err());
    }
}
