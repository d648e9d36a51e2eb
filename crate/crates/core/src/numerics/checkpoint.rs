//! Parameter checkpoint file: magic "OSWB", u16 format version, then one
//! record per tensor as {name_len u32, name bytes, rank u32, dims u64[],
//! little-endian f32 payload}. Records appear in registration order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::numerics::array::Array;
use crate::numerics::params::ParamStore;

const MAGIC: &[u8; 4] = b"OSWB";
const VERSION: u16 = 1;

/// Serializes every parameter in the store.
pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for (name, arr) in store.entries() {
        write_record(&mut w, name, arr)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads all records from a checkpoint file.
pub fn read_records(path: &Path) -> Result<Vec<(String, Array)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CoreError::CheckpointFormat("bad magic bytes".into()));
    }
    let mut ver = [0u8; 2];
    r.read_exact(&mut ver)?;
    let version = u16::from_le_bytes(ver);
    if version != VERSION {
        return Err(CoreError::CheckpointFormat(format!("unsupported format version {version}")));
    }
    let mut out = Vec::new();
    while let Some(rec) = read_record(&mut r)? {
        out.push(rec);
    }
    Ok(out)
}

/// Loads a checkpoint into an already-built store; every record must match a
/// registered parameter's shape.
pub fn load(store: &mut ParamStore, path: &Path) -> Result<()> {
    let records = read_records(path)?;
    store.load_values(&records)
}

/// Writes one named tensor in checkpoint record framing to any sink. Also
/// used by the episode pack writer for frames and actions.
pub fn write_record<W: Write>(w: &mut W, name: &str, arr: &Array) -> Result<()> {
    let name_bytes = name.as_bytes();
    w.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
    w.write_all(name_bytes)?;
    w.write_all(&(arr.rank() as u32).to_le_bytes())?;
    for &d in arr.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(arr.numel() * 4);
    for &v in arr.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads one record, or None at a clean end of stream.
pub fn read_record<R: Read>(r: &mut R) -> Result<Option<(String, Array)>> {
    let mut len4 = [0u8; 4];
    match r.read(&mut len4)? {
        0 => return Ok(None),
        4 => {}
        n => {
            let mut rest = len4[n..].to_vec();
            r.read_exact(&mut rest)?;
            len4[n..].copy_from_slice(&rest);
        }
    }
    let name_len = u32::from_le_bytes(len4) as usize;
    if name_len > 1 << 20 {
        return Err(CoreError::CheckpointFormat("unreasonable name length".into()));
    }
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name)
        .map_err(|_| CoreError::CheckpointFormat("name is not utf-8".into()))?;
    let mut rank4 = [0u8; 4];
    r.read_exact(&mut rank4)?;
    let rank = u32::from_le_bytes(rank4) as usize;
    if rank > 16 {
        return Err(CoreError::CheckpointFormat("unreasonable rank".into()));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut d8 = [0u8; 8];
        r.read_exact(&mut d8)?;
        dims.push(u64::from_le_bytes(d8) as usize);
    }
    let numel: usize = dims.iter().product();
    let mut payload = vec![0u8; numel * 4];
    r.read_exact(&mut payload)?;
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Some((name, Array::from_vec(&dims, data)?)))
}
