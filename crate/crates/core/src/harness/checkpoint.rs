//! Plain-text parameter checkpoints.
//!
//! ```text
//! epoch 41
//! weight 0 3 2
//! 0.5 -1.25
//! ...
//! bias 0 2
//! 0.0 0.1
//! ```
//!
//! Values are written with Rust's shortest round-trip formatting, so reading a
//! checkpoint back reproduces every parameter bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::model::ModelParams;

fn push_values(out: &mut String, values: &[f64]) {
    let line: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
    out.push_str(&line.join(" "));
    out.push('\n');
}

pub fn write_checkpoint(path: impl AsRef<Path>, epoch: usize, params: &ModelParams) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    writeln!(out, "epoch {epoch}").expect("string write");
    for (i, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        writeln!(out, "weight {i} {} {}", w.rows(), w.cols()).expect("string write");
        for r in 0..w.rows() {
            push_values(&mut out, w.row(r));
        }
        writeln!(out, "bias {i} {}", b.len()).expect("string write");
        push_values(&mut out, b.as_slice());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Lines<'a> {
    path: &'a Path,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<&'a str> {
        match self.inner.next() {
            Some((k, l)) => {
                self.line = k + 1;
                Ok(l)
            }
            None => Err(Error::parse(self.path, self.line + 1, format!("unexpected end, expected {what}"))),
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.path, self.line, msg)
    }

    fn header(&mut self, tag: &str, index: usize, dims: usize) -> Result<Vec<usize>> {
        let line = self.next(tag)?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(tag) {
            return Err(self.err(format!("expected `{tag}` header")));
        }
        let nums = parts
            .map(|p| p.parse::<usize>().map_err(|_| self.err(format!("bad integer {p:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if nums.len() != dims + 1 || nums[0] != index {
            return Err(self.err(format!("malformed `{tag}` header for layer {index}")));
        }
        Ok(nums[1..].to_vec())
    }

    fn values(&mut self, expected: usize) -> Result<Vec<f64>> {
        let line = self.next("values")?;
        let vals = line
            .split_whitespace()
            .map(|p| p.parse::<f64>().map_err(|_| self.err(format!("bad number {p:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != expected {
            return Err(self.err(format!("expected {expected} values, found {}", vals.len())));
        }
        Ok(vals)
    }
}

/// Returns the stored epoch and parameters.
pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(usize, ModelParams)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Lines {
        path,
        inner: text.lines().enumerate(),
        line: 0,
    };
    let first = lines.next("epoch")?;
    let epoch = first
        .strip_prefix("epoch ")
        .and_then(|e| e.trim().parse().ok())
        .ok_or_else(|| lines.err("expected `epoch <n>`"))?;

    let mut weights = Vec::new();
    let mut biases = Vec::new();
    loop {
        let peek = lines.inner.clone().next();
        match peek {
            None => break,
            Some((_, l)) if l.trim().is_empty() => {
                lines.next("")?;
                continue;
            }
            _ => {}
        }
        let i = weights.len();
        let dims = lines.header("weight", i, 2)?;
        let mut data = Vec::with_capacity(dims[0] * dims[1]);
        for _ in 0..dims[0] {
            data.extend(lines.values(dims[1])?);
        }
        weights.push(DenseMatrix::from_vec(dims[0], dims[1], data)?);
        let len = lines.header("bias", i, 1)?[0];
        biases.push(DenseVector::new(lines.values(len)?));
    }
    let params = ModelParams { weights, biases };
    params.validate()?;
    Ok((epoch, params))
}
