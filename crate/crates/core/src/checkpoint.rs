//! Binary checkpoint files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic      4 bytes  "PDCK"
//! version    u32      1
//! meta_len   u64      byte length of the metadata block
//! metadata   UTF-8    `key=value` lines; `denoiser.*` keys rebuild the config
//! count      u64      number of tensors
//! tensors    count ×  { ndim u32, dims ndim × u64, data numel × f64 }
//! ```
//!
//! Tensors are stored in [`DenoiserConfig::layout`] order. Loading checks
//! every shape against the layout implied by the metadata.

use std::path::Path;

use pocketdiff_tensor::Tensor;

use crate::denoiser::{DenoiserConfig, DenoiserParams};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"PDCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: DenoiserParams,
    /// Extra `key=value` pairs (schedule, training step, size histogram...).
    /// Keys starting with `denoiser.` are reserved.
    pub metadata: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn new(params: DenoiserParams) -> Self {
        Self {
            params,
            metadata: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.metadata.push((key.into(), value.to_string()));
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.params.config;
        let mut meta = String::new();
        for (k, v) in [
            ("denoiser.hidden", c.hidden.to_string()),
            ("denoiser.layers", c.layers.to_string()),
            ("denoiser.ligand_types", c.ligand_types.to_string()),
            ("denoiser.protein_types", c.protein_types.to_string()),
            ("denoiser.time_dim", c.time_dim.to_string()),
            ("denoiser.num_steps", c.num_steps.to_string()),
            // `{:?}` on f64 prints the shortest string that parses back exactly.
            ("denoiser.cutoff", format!("{:?}", c.cutoff)),
            ("denoiser.dense_below", c.dense_below.to_string()),
        ] {
            meta.push_str(&format!("{k}={v}\n"));
        }
        for (k, v) in &self.metadata {
            meta.push_str(&format!("{k}={v}\n"));
        }

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(self.params.tensors.len() as u64).to_le_bytes());
        for t in &self.params.tensors {
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).map_err(&bad)? != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32().map_err(&bad)?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let meta_len = r.u64().map_err(&bad)? as usize;
        let meta = std::str::from_utf8(r.take(meta_len).map_err(&bad)?)
            .map_err(|_| bad("metadata is not UTF-8".into()))?;

        let mut config = DenoiserConfig::default();
        let mut metadata = Vec::new();
        for line in meta.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed metadata line `{line}`")))?;
            let int = || v.parse::<usize>().map_err(|_| bad(format!("{k}: bad integer `{v}`")));
            match k {
                "denoiser.hidden" => config.hidden = int()?,
                "denoiser.layers" => config.layers = int()?,
                "denoiser.ligand_types" => config.ligand_types = int()?,
                "denoiser.protein_types" => config.protein_types = int()?,
                "denoiser.time_dim" => config.time_dim = int()?,
                "denoiser.num_steps" => config.num_steps = int()?,
                "denoiser.dense_below" => config.dense_below = int()?,
                "denoiser.cutoff" => {
                    config.cutoff = v.parse().map_err(|_| bad(format!("{k}: bad number `{v}`")))?
                }
                _ => metadata.push((k.to_string(), v.to_string())),
            }
        }

        let count = r.u64().map_err(&bad)? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let ndim = r.u32().map_err(&bad)? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(&bad)?;
            let n: usize = shape.iter().product();
            let raw = r.take(n * 8).map_err(&bad)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push(Tensor::new(shape, data).map_err(|e| bad(e.to_string()))?);
        }
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let params = DenoiserParams::from_tensors(config, tensors)?;
        Ok(Self { params, metadata })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated at byte {}", self.pos)),
        }
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let cfg = DenoiserConfig {
            hidden: 6,
            layers: 2,
            time_dim: 4,
            cutoff: 5.5,
            ..DenoiserConfig::default()
        };
        let params = DenoiserParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        Checkpoint::new(params).with_meta("step", 17).with_meta("note", "a=b")
    }

    #[test]
    fn byte_round_trip_is_exact() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes(), Path::new("mem")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.meta("note"), Some("a=b"));
        for (a, b) in ck.params.tensors.iter().zip(&back.params.tensors) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = sample().to_bytes();
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 3], Path::new("ck")).unwrap_err();
        assert!(matches!(err, Error::Checkpoint { .. }));
    }

    #[test]
    fn shape_mismatch_with_config_is_rejected() {
        let mut bytes = sample().to_bytes();
        let text = String::from_utf8_lossy(&bytes).to_string();
        let at = text.find("denoiser.hidden=6").unwrap() + "denoiser.hidden=".len();
        bytes[at] = b'7';
        let err = Checkpoint::from_bytes(&bytes, Path::new("ck")).unwrap_err();
        assert!(matches!(err, Error::ParamMismatch(_)), "{err}");
    }
}
