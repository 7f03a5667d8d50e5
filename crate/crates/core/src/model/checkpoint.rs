//! `MWCK` checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "MWCK" | u32 version | u32 kv-length | kv text ("key=value\n", sorted)
//! u32 layer-count
//! per layer: u16 name-len | name | u8 kind (0 conv1d, 1 dense)
//!            u32 rank | u64 dims... | f32 kernel values
//!            u32 bias-len | f32 bias values
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::*;
use crate::error::{Error, Result};
use crate::model::spec::ModelSpec;
use crate::params::{LayerKind, LayerWeights, ModelParameters};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MWCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: ModelParameters,
    /// Extra `key=value` entries (standardisation stats, training metadata).
    /// Keys must not start with `model.`.
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let mut kv = self.spec.to_kv();
        for (k, v) in &self.metadata {
            if k.starts_with("model.") || k.contains('=') || k.contains('\n') || v.contains('\n') {
                return Err(Error::Format(format!("invalid metadata entry {k}")));
            }
            kv.insert(k.clone(), v.clone());
        }
        let text = encode_kv(&kv);
        w.write_all(CHECKPOINT_MAGIC)?;
        write_u32(w, CHECKPOINT_VERSION)?;
        write_u32(w, text.len() as u32)?;
        w.write_all(text.as_bytes())?;
        write_u32(w, self.params.layers().len() as u32)?;
        for layer in self.params.layers() {
            write_str(w, &layer.name)?;
            write_u8(w, layer.kind.code())?;
            write_u32(w, layer.kernel.rank() as u32)?;
            for &d in layer.kernel.dims() {
                write_u64(w, d as u64)?;
            }
            write_f32s(w, layer.kernel.data())?;
            write_u32(w, layer.bias.len() as u32)?;
            write_f32s(w, layer.bias.data())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        expect_magic(r, CHECKPOINT_MAGIC)?;
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = read_u32(r)? as usize;
        let mut text = vec![0u8; len];
        r.read_exact(&mut text)
            .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
        let text = String::from_utf8(text).map_err(|_| Error::Format("header is not UTF-8".into()))?;
        let kv = decode_kv(&text)?;
        let spec = ModelSpec::from_kv(&kv)?;
        let metadata = kv.into_iter().filter(|(k, _)| !k.starts_with("model.")).collect();
        let n_layers = read_u32(r)? as usize;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let name = read_str(r)?;
            let kind = LayerKind::from_code(read_u8(r)?)
                .ok_or_else(|| Error::Format(format!("layer {name}: unknown kind")))?;
            let rank = read_u32(r)? as usize;
            let dims = (0..rank)
                .map(|_| read_u64(r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let kernel = Tensor::new(dims, read_f32s(r, n)?)?;
            let nb = read_u32(r)? as usize;
            let bias = Tensor::new(vec![nb], read_f32s(r, nb)?)?;
            layers.push(LayerWeights::new(name, kind, kernel, bias)?);
        }
        Ok(Self {
            spec,
            params: ModelParameters::new(layers),
            metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}
