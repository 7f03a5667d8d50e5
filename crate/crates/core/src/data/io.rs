//! `MWTS` tensor files and metadata CSV.
//!
//! Layout (little-endian):
//!
//! ```text
//! "MWTS" | u32 version | u32 rank (3) | u64 samples | u64 time | u64 channels
//! u32 module-count
//! u32 name-count | per name: u16 len | UTF-8 bytes
//! u16 module id per sample | u8 label code per sample
//! f32 values, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::binio::*;
use crate::data::waveform::{Label, WaveformTensor};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"MWTS";
pub const TENSOR_VERSION: u32 = 1;

pub fn write_tensor(w: &mut impl Write, data: &WaveformTensor) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    write_u32(w, TENSOR_VERSION)?;
    write_u32(w, 3)?;
    for &d in data.data().dims() {
        write_u64(w, d as u64)?;
    }
    write_u32(w, data.module_count() as u32)?;
    write_u32(w, data.channel_names().len() as u32)?;
    for name in data.channel_names() {
        write_str(w, name)?;
    }
    for &m in data.module_ids() {
        let m = u16::try_from(m).map_err(|_| Error::Format(format!("module id {m} does not fit u16")))?;
        write_u16(w, m)?;
    }
    let codes: Vec<u8> = data.labels().iter().map(|l| l.code()).collect();
    w.write_all(&codes)?;
    write_f32s(w, data.data().data())
}

pub fn read_tensor(r: &mut impl Read) -> Result<WaveformTensor> {
    expect_magic(r, TENSOR_MAGIC)?;
    let version = read_u32(r)?;
    if version != TENSOR_VERSION {
        return Err(Error::Format(format!("unsupported tensor version {version}")));
    }
    let rank = read_u32(r)?;
    if rank != 3 {
        return Err(Error::Format(format!("expected rank 3, found {rank}")));
    }
    let dims = (0..3)
        .map(|_| read_u64(r).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let module_count = read_u32(r)? as usize;
    let n_names = read_u32(r)? as usize;
    let names = (0..n_names).map(|_| read_str(r)).collect::<Result<Vec<_>>>()?;
    let n = dims[0];
    let modules = (0..n)
        .map(|_| read_u16(r).map(usize::from))
        .collect::<Result<Vec<_>>>()?;
    let labels = (0..n)
        .map(|_| read_u8(r).and_then(Label::from_code))
        .collect::<Result<Vec<_>>>()?;
    let count = dims.iter().product();
    let values = read_f32s(r, count)?;
    WaveformTensor::new(Tensor::new(dims, values)?, names, module_count, modules, labels)
}

pub fn save_tensor(path: impl AsRef<Path>, data: &WaveformTensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, data)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<WaveformTensor> {
    read_tensor(&mut BufReader::new(File::open(path)?))
}

/// `sample_id,module,label` rows.
pub fn write_metadata_csv(w: impl Write, data: &WaveformTensor) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["sample_id", "module", "label"]).map_err(csv_err)?;
    for i in 0..data.len() {
        out.write_record([
            data.sample_ids()[i].to_string(),
            data.module_ids()[i].to_string(),
            data.labels()[i].to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("csv: {other:?}")),
    }
}

/// Git-style blob hash: hex SHA-256 of `"blob <len>\0" + content`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_hash(path: impl AsRef<Path>) -> Result<String> {
    Ok(content_hash(&std::fs::read(path)?))
}
