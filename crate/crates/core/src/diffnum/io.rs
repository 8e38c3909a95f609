//! Portable tensor records.
//!
//! Each record is one ASCII header line followed by the raw payload:
//!
//! ```text
//! tensor <name> f64 <d0>,<d1>,...\n      (rank 0 writes "scalar")
//! <product(shape) little-endian f64 values>
//! ```

use std::io::{BufRead, Write};

use super::Tensor;
use crate::error::{Error, Result};

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_tensor<W: Write>(w: &mut W, name: &str, t: &Tensor) -> std::io::Result<()> {
    debug_assert!(!name.is_empty() && !name.contains(char::is_whitespace));
    let shape = if t.shape().is_empty() {
        "scalar".to_string()
    } else {
        t.shape()
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(",")
    };
    writeln!(w, "tensor {name} f64 {shape}")?;
    let mut buf = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

/// Reads one header line (without the trailing newline). `None` at EOF.
pub(crate) fn read_line<R: BufRead>(r: &mut R) -> Result<Option<String>> {
    let mut line = Vec::new();
    let n = r
        .read_until(b'\n', &mut line)
        .map_err(|e| bad(format!("read failed: {e}")))?;
    if n == 0 {
        return Ok(None);
    }
    if line.last() != Some(&b'\n') {
        return Err(bad("truncated header line"));
    }
    line.pop();
    String::from_utf8(line)
        .map(Some)
        .map_err(|_| bad("header is not UTF-8"))
}

fn parse_header(line: &str) -> Result<(String, Vec<usize>)> {
    let parts: Vec<&str> = line.split(' ').collect();
    match parts.as_slice() {
        ["tensor", name, "f64", shape] => {
            let dims = if *shape == "scalar" {
                Vec::new()
            } else {
                shape
                    .split(',')
                    .map(|d| {
                        d.parse::<usize>()
                            .map_err(|_| bad(format!("bad shape '{shape}'")))
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            Ok((name.to_string(), dims))
        }
        [_, _, dtype, _] if *dtype != "f64" => Err(bad(format!("unsupported dtype {dtype}"))),
        _ => Err(bad(format!("malformed tensor header '{line}'"))),
    }
}

/// Reads the payload for an already-consumed header line.
pub(crate) fn read_tensor_body<R: BufRead>(r: &mut R, header: &str) -> Result<(String, Tensor)> {
    let (name, shape) = parse_header(header)?;
    let n: usize = shape.iter().product();
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)
        .map_err(|_| bad(format!("truncated payload for tensor {name}")))?;
    let data = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((name, Tensor::new(shape, data)?))
}

pub fn read_tensor<R: BufRead>(r: &mut R) -> Result<Option<(String, Tensor)>> {
    match read_line(r)? {
        None => Ok(None),
        Some(h) => read_tensor_body(r, &h).map(Some),
    }
}
