//! Parameter-vector files.
//!
//! Binary: an 8-byte little-endian `u64` count followed by that many
//! little-endian `f64` values. Several vectors may be concatenated in one
//! stream (sample dumps).
//!
//! CSV: header `index,layer,tensor,row,col,value`, one line per parameter.
//! Only the `value` column is read back.

use std::io::{Read, Write};

use super::MlpArchitecture;
use crate::error::{Error, Result};

pub fn write_params_binary<W: Write>(mut w: W, values: &[f64]) -> Result<()> {
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads one vector. Returns `Ok(None)` at a clean end of stream.
pub fn read_params_binary<R: Read>(mut r: R) -> Result<Option<Vec<f64>>> {
    let mut header = [0u8; 8];
    let mut got = 0;
    while got < 8 {
        let n = r.read(&mut header[got..])?;
        if n == 0 {
            break;
        }
        got += n;
    }
    match got {
        0 => return Ok(None),
        8 => {}
        _ => return Err(Error::MalformedParams("truncated length header".into())),
    }
    let len = u64::from_le_bytes(header) as usize;
    let mut values = Vec::with_capacity(len.min(1 << 24));
    let mut buf = [0u8; 8];
    for k in 0..len {
        r.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => {
                Error::MalformedParams(format!("expected {len} values, found {k}"))
            }
            _ => Error::Io(e),
        })?;
        values.push(f64::from_le_bytes(buf));
    }
    Ok(Some(values))
}

pub fn write_params_csv<W: Write>(w: W, arch: Option<&MlpArchitecture>, values: &[f64]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["index", "layer", "tensor", "row", "col", "value"])?;
    for (k, v) in values.iter().enumerate() {
        let (layer, tensor, row, col) = match arch.and_then(|a| a.describe_index(k)) {
            Some((layer, is_bias, row, col)) => (
                layer.to_string(),
                if is_bias { "b" } else { "A" },
                row.to_string(),
                col.to_string(),
            ),
            None => (String::new(), "", String::new(), String::new()),
        };
        out.write_record([
            k.to_string(),
            layer,
            tensor.to_string(),
            row,
            col,
            v.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_params_csv<R: Read>(r: R) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_reader(r);
    let col = rdr
        .headers()?
        .iter()
        .position(|h| h == "value")
        .ok_or_else(|| Error::MalformedParams("missing `value` column".into()))?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let field = rec
                .get(col)
                .ok_or_else(|| Error::MalformedParams("short row".into()))?;
            field
                .parse::<f64>()
                .map_err(|e| Error::MalformedParams(format!("{field:?}: {e}")))
        })
        .collect()
}
