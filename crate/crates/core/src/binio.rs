//! Raw little-endian `f32` array files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub fn write_f32s(path: impl AsRef<Path>, values: &[f32]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for chunk in values.chunks(1 << 14) {
        let bytes: Vec<u8> = chunk.iter().flat_map(|v| v.to_le_bytes()).collect();
        w.write_all(&bytes)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_f32s(path: impl AsRef<Path>) -> Result<Vec<f32>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Truncated);
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Reads exactly `len` values or fails.
pub fn read_f32s_exact(path: impl AsRef<Path>, len: usize) -> Result<Vec<f32>> {
    let path = path.as_ref();
    let v = read_f32s(path)?;
    if v.len() != len {
        return Err(Error::Dataset(format!(
            "{}: expected {len} values, found {}",
            path.display(),
            v.len()
        )));
    }
    Ok(v)
}
