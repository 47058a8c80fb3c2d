//! The `.mxc` dense matrix container: one JSON header line, then raw
//! little-endian `f64` values in row-major order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &str = "MXC1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MxcHeader {
    pub magic: String,
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    pub layout: String,
    pub name: String,
    pub provenance: String,
}

pub fn write_mxc<W: Write>(mut out: W, m: &DMatrix<f64>, name: &str, provenance: &str) -> Result<()> {
    let header = MxcHeader {
        magic: MAGIC.into(),
        rows: m.nrows(),
        cols: m.ncols(),
        dtype: "f64".into(),
        layout: "row-major".into(),
        name: name.into(),
        provenance: provenance.into(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    let mut row_buf = Vec::with_capacity(m.ncols() * 8);
    for i in 0..m.nrows() {
        row_buf.clear();
        for j in 0..m.ncols() {
            row_buf.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
        out.write_all(&row_buf)?;
    }
    Ok(())
}

pub fn read_mxc<R: BufRead>(mut input: R) -> Result<(DMatrix<f64>, MxcHeader)> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    let header: MxcHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::format(".mxc header", e.to_string()))?;
    if header.magic != MAGIC || header.dtype != "f64" || header.layout != "row-major" {
        return Err(Error::format(
            ".mxc header",
            format!("unsupported container {}/{}/{}", header.magic, header.dtype, header.layout),
        ));
    }
    let (rows, cols) = (header.rows, header.cols);
    let mut bytes = vec![0u8; rows * cols * 8];
    input
        .read_exact(&mut bytes)
        .map_err(|e| Error::format(".mxc payload", format!("expected {rows}x{cols} doubles: {e}")))?;
    let mut extra = [0u8; 1];
    if input.read(&mut extra)? != 0 {
        return Err(Error::format(".mxc payload", "trailing bytes after matrix data"));
    }
    let m = DMatrix::from_fn(rows, cols, |i, j| {
        let k = (i * cols + j) * 8;
        f64::from_le_bytes(bytes[k..k + 8].try_into().unwrap())
    });
    Ok((m, header))
}

pub fn save_mxc(path: &Path, m: &DMatrix<f64>, name: &str, provenance: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_mxc(&mut w, m, name, provenance)?;
    w.flush()?;
    Ok(())
}

pub fn load_mxc(path: &Path) -> Result<(DMatrix<f64>, MxcHeader)> {
    read_mxc(BufReader::new(File::open(path)?))
}
