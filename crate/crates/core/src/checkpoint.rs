//! Plain-text model checkpoints.
//!
//! ```text
//! mgcgru-checkpoint v1
//! mode multi
//! k 1
//! dims n f c1 c h g
//! tensor gcn_w1 4 16
//! <row-major values, one row per line>
//! ...
//! end
//! ```
//!
//! Values use Rust's shortest round-trip formatting, so a save/load cycle is
//! bit-exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{Dims, Mode, ModelParams};

const MAGIC: &str = "mgcgru-checkpoint v1";

pub fn to_string(params: &ModelParams) -> String {
    let Dims { n, f, c1, c, h, g } = params.dims;
    let mut out = format!("{MAGIC}\nmode {}\nk {}\ndims {n} {f} {c1} {c} {h} {g}\n", params.mode, params.k);
    for t in params.tensors() {
        let (rows, cols) = t.shape;
        out.push_str(&format!("tensor {} {rows} {cols}\n", t.name));
        for row in t.data.chunks(cols.max(1)) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    out.push_str("end\n");
    out
}

pub fn from_str(text: &str) -> Result<ModelParams> {
    let bad = |msg: String| Error::Checkpoint(msg);
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut next = |what: &str| lines.next().ok_or_else(|| bad(format!("unexpected end of file, expected {what}")));

    let (_, magic) = next("header")?;
    if magic != MAGIC {
        return Err(bad(format!("not a checkpoint (header `{magic}`)")));
    }
    let field = |line: (usize, &str), key: &str| -> Result<String> {
        line.1
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| bad(format!("line {}: expected `{key} …`", line.0)))
    };
    let mode: Mode = field(next("mode")?, "mode")?.parse()?;
    let k_line = next("k")?;
    let k: usize = field(k_line, "k")?.parse().map_err(|_| bad(format!("line {}: bad K", k_line.0)))?;
    let dims_line = next("dims")?;
    let d: Vec<usize> = field(dims_line, "dims")?
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad(format!("line {}: bad dims", dims_line.0)))?;
    let [n, f, c1, c, h, g] = d[..] else {
        return Err(bad(format!("line {}: expected six dims", dims_line.0)));
    };
    let dims = Dims { n, f, c1, c, h, g };
    let mut params = ModelParams::init(dims, mode, k.max(1), 0)?;
    let expected: Vec<(&'static str, (usize, usize))> = params.tensors().iter().map(|t| (t.name, t.shape)).collect();

    let mut values: Vec<Vec<f64>> = Vec::with_capacity(expected.len());
    for (name, (rows, cols)) in &expected {
        let header = next("tensor header")?;
        let parts: Vec<&str> = header.1.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "tensor" || parts[1] != *name {
            return Err(bad(format!("line {}: expected tensor {name}", header.0)));
        }
        if parts[2] != rows.to_string() || parts[3] != cols.to_string() {
            return Err(bad(format!(
                "line {}: tensor {name} is {}×{}, expected {rows}×{cols}",
                header.0, parts[2], parts[3]
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..*rows {
            let (line_no, line) = next("tensor row")?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(format!("line {line_no}: bad number")))?;
            if row.len() != *cols {
                return Err(bad(format!("line {line_no}: {} values, expected {cols}", row.len())));
            }
            data.extend(row);
        }
        values.push(data);
    }
    let (_, end) = next("end")?;
    if end != "end" {
        return Err(bad(format!("trailing content `{end}`")));
    }
    for (t, v) in params.tensors_mut().into_iter().zip(values) {
        t.data.copy_from_slice(&v);
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("checkpoint".into()));
    }
    Ok(params)
}

pub fn save(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_string(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text)
}
