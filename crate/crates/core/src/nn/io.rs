//! Plain-text network persistence.
//!
//! ```text
//! ORIO-MLP v1
//! layers 2
//! dims 3 8 2
//! activations tanh identity
//! weights 0
//! <8 rows of 3 values>
//! bias 0
//! <8 values>
//! weights 1
//! ...
//! end
//! ```
//!
//! Values are written with Rust's shortest round-trip float formatting, so a
//! save/load cycle reproduces every parameter bit-for-bit.

use std::fmt::Write as _;

use crate::error::{Error, Result};

use super::mlp::{Activation, Layer, Mlp};

pub const MLP_MAGIC: &str = "ORIO-MLP v1";

/// Line cursor with 1-based line numbers for error reporting.
pub struct LineReader<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    last_line: usize,
}

impl<'a> LineReader<'a> {
    pub fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().enumerate().peekable(),
            last_line: 0,
        }
    }

    pub fn line_number(&self) -> usize {
        self.last_line
    }

    /// Next non-empty line, trimmed.
    pub fn next_line(&mut self) -> Result<&'a str> {
        for (i, line) in self.lines.by_ref() {
            self.last_line = i + 1;
            let t = line.trim();
            if !t.is_empty() {
                return Ok(t);
            }
        }
        Err(Error::parse(self.last_line + 1, "unexpected end of input"))
    }

    pub fn expect_exact(&mut self, expected: &str) -> Result<()> {
        let line = self.next_line()?;
        if line != expected {
            return Err(Error::parse(
                self.last_line,
                format!("expected `{expected}`, found `{line}`"),
            ));
        }
        Ok(())
    }

    /// Reads `key v1 v2 …` and returns the values.
    pub fn keyed(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let line = self.next_line()?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some(k) if k == key => Ok(parts.collect()),
            _ => Err(Error::parse(
                self.last_line,
                format!("expected `{key}`, found `{line}`"),
            )),
        }
    }

    pub fn keyed_usize(&mut self, key: &str) -> Result<usize> {
        let vals = self.keyed(key)?;
        let line = self.last_line;
        match vals.as_slice() {
            [v] => v
                .parse()
                .map_err(|_| Error::parse(line, format!("bad integer `{v}`"))),
            _ => Err(Error::parse(line, format!("`{key}` takes one value"))),
        }
    }

    pub fn floats(&mut self, count: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        let vals = parse_floats(line, self.last_line)?;
        if vals.len() != count {
            return Err(Error::parse(
                self.last_line,
                format!("expected {count} values, found {}", vals.len()),
            ));
        }
        Ok(vals)
    }
}

pub fn parse_floats(line: &str, line_no: usize) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::parse(line_no, format!("bad number `{t}`")))
        })
        .collect()
}

pub(crate) fn join_floats(values: &[f64]) -> String {
    let mut s = String::with_capacity(values.len() * 20);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v:?}").unwrap();
    }
    s
}

impl Mlp {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MLP_MAGIC);
        out.push('\n');
        writeln!(out, "layers {}", self.layers().len()).unwrap();
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers().iter().map(|l| l.outputs()));
        writeln!(
            out,
            "dims {}",
            dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" ")
        )
        .unwrap();
        writeln!(
            out,
            "activations {}",
            self.layers()
                .iter()
                .map(|l| l.activation().tag())
                .collect::<Vec<_>>()
                .join(" ")
        )
        .unwrap();
        for (i, layer) in self.layers().iter().enumerate() {
            writeln!(out, "weights {i}").unwrap();
            for row in layer.weights().chunks_exact(layer.inputs().max(1)) {
                out.push_str(&join_floats(row));
                out.push('\n');
            }
            writeln!(out, "bias {i}").unwrap();
            out.push_str(&join_floats(layer.bias()));
            out.push('\n');
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::read(&mut LineReader::new(text))
    }

    pub fn read(reader: &mut LineReader<'_>) -> Result<Self> {
        let magic = reader.next_line()?;
        if magic != MLP_MAGIC {
            return Err(Error::Version {
                expected: MLP_MAGIC.into(),
                found: magic.into(),
            });
        }
        let n = reader.keyed_usize("layers")?;
        let dims: Vec<usize> = reader
            .keyed("dims")?
            .iter()
            .map(|d| {
                d.parse()
                    .map_err(|_| Error::parse(reader.line_number(), format!("bad width `{d}`")))
            })
            .collect::<Result<_>>()?;
        if dims.len() != n + 1 {
            return Err(Error::parse(
                reader.line_number(),
                format!("expected {} widths, found {}", n + 1, dims.len()),
            ));
        }
        let acts: Vec<Activation> = reader
            .keyed("activations")?
            .iter()
            .map(|t| {
                Activation::from_tag(t).ok_or_else(|| {
                    Error::parse(reader.line_number(), format!("unknown activation `{t}`"))
                })
            })
            .collect::<Result<_>>()?;
        if acts.len() != n {
            return Err(Error::parse(
                reader.line_number(),
                format!("expected {n} activations, found {}", acts.len()),
            ));
        }
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let (inputs, outputs) = (dims[i], dims[i + 1]);
            reader.expect_exact(&format!("weights {i}"))?;
            let mut weights = Vec::with_capacity(inputs * outputs);
            for _ in 0..outputs {
                weights.extend(reader.floats(inputs)?);
            }
            reader.expect_exact(&format!("bias {i}"))?;
            let bias = reader.floats(outputs)?;
            layers.push(Layer::new(outputs, inputs, weights, bias, acts[i])?);
        }
        reader.expect_exact("end")?;
        Mlp::new(layers)
    }
}
