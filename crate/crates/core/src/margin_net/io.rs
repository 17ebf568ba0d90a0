//! Portable text format for trained networks.
//!
//! ```text
//! MLP-MARGIN v1
//! 3 62 62 1
//! tanh
//! <offset x3> <scale x3>
//! layer <rows> <cols>
//! <rows lines of cols weights>
//! <one line of rows biases>
//! ...
//! ```
//!
//! Numbers are written with 17 significant digits, which round-trips every
//! `f64` exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Activation, InputBox, Layer, MlpParams};
use crate::error::{Error, Result};

pub const MAGIC: &str = "MLP-MARGIN v1";

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(num).collect::<Vec<_>>().join(" ")
}

pub fn write_model(params: &MlpParams) -> String {
    let mut out = String::new();
    let dims = params.layer_dims();
    writeln!(out, "{MAGIC}").unwrap();
    writeln!(out, "{}", dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" ")).unwrap();
    writeln!(out, "{}", params.activation.name()).unwrap();
    writeln!(out, "{}", join(params.input_offset.iter().chain(&params.input_scale).copied())).unwrap();
    for layer in &params.layers {
        writeln!(out, "layer {} {}", layer.outputs(), layer.inputs()).unwrap();
        for row in layer.weights.rows() {
            writeln!(out, "{}", join(row.iter().copied())).unwrap();
        }
        writeln!(out, "{}", join(layer.bias.iter().copied())).unwrap();
    }
    out
}

pub fn save_model(params: &MlpParams, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_model(params))?;
    Ok(())
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.inner.next() {
            Some((n, line)) => Ok((n + 1, line.trim())),
            None => Err(Error::ModelParse {
                line: 0,
                message: format!("unexpected end of file, expected {what}"),
            }),
        }
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::ModelParse { line, message: message.into() }
}

fn parse_numbers(line: usize, text: &str, expected: usize) -> Result<Vec<f64>> {
    let values = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| parse_err(line, format!("bad number {t:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if values.len() != expected {
        return Err(parse_err(line, format!("expected {expected} numbers, found {}", values.len())));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(parse_err(line, format!("non-finite value {v}")));
    }
    Ok(values)
}

pub fn parse_model(text: &str) -> Result<MlpParams> {
    let mut lines = Lines { inner: text.lines().enumerate() };

    let (n, magic) = lines.next("magic header")?;
    if magic != MAGIC {
        return Err(parse_err(n, format!("expected header {MAGIC:?}, found {magic:?}")));
    }

    let (n, dims_line) = lines.next("layer dimensions")?;
    let dims = dims_line
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|e| parse_err(n, format!("bad dimension {t:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if dims.len() < 2 || dims[0] != 3 || dims[dims.len() - 1] != 1 || dims.contains(&0) {
        return Err(parse_err(n, format!("layer dimensions must run from 3 to 1, found {dims:?}")));
    }

    let (n, act) = lines.next("activation")?;
    let activation = match act {
        "tanh" => Activation::Tanh,
        other => return Err(parse_err(n, format!("unsupported activation {other:?}"))),
    };

    let (n, norm) = lines.next("input normalization")?;
    let norm = parse_numbers(n, norm, 6)?;
    let input_offset = [norm[0], norm[1], norm[2]];
    let input_scale = [norm[3], norm[4], norm[5]];
    if input_scale.iter().any(|s| *s <= 0.0) {
        return Err(parse_err(n, "input scales must be positive"));
    }

    let mut layers = Vec::with_capacity(dims.len() - 1);
    for w in dims.windows(2) {
        let (inputs, outputs) = (w[0], w[1]);
        let (n, header) = lines.next("layer header")?;
        let expected = format!("layer {outputs} {inputs}");
        if header.split_whitespace().collect::<Vec<_>>().join(" ") != expected {
            return Err(parse_err(n, format!("expected {expected:?}, found {header:?}")));
        }
        let mut weights = Array2::zeros((outputs, inputs));
        for r in 0..outputs {
            let (n, row) = lines.next("weight row")?;
            for (c, v) in parse_numbers(n, row, inputs)?.into_iter().enumerate() {
                weights[[r, c]] = v;
            }
        }
        let (n, bias) = lines.next("bias row")?;
        let bias = Array1::from(parse_numbers(n, bias, outputs)?);
        layers.push(Layer { weights, bias });
    }
    if let Some((n, extra)) = lines.inner.find(|(_, l)| !l.trim().is_empty()) {
        return Err(parse_err(n + 1, format!("trailing content {extra:?}")));
    }

    let trained_range = InputBox {
        lo: std::array::from_fn(|d| input_offset[d] - 1.0 / input_scale[d]),
        hi: std::array::from_fn(|d| input_offset[d] + 1.0 / input_scale[d]),
    };
    Ok(MlpParams {
        layers,
        activation,
        input_offset,
        input_scale,
        trained_range,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpParams> {
    parse_model(&fs::read_to_string(path)?)
}
