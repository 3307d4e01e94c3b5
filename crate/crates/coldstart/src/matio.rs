//! Binary matrix dumps.
//!
//! Layout: two little-endian u64 words (rows, cols) followed by rows*cols
//! little-endian f64 values in row-major order. Round-trips are bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&(m.nrows() as u64).to_le_bytes())?;
    f.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for &x in m.iter() {
        f.write_all(&x.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut word = [0u8; 8];
    f.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word) as usize;
    f.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word) as usize;
    let mut data = vec![0.0f64; rows * cols];
    for slot in data.iter_mut() {
        f.read_exact(&mut word)?;
        *slot = f64::from_le_bytes(word);
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Config(e.to_string()))
}
