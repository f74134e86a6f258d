//! Plain-text network checkpoints.
//!
//! ```text
//! mlp 2
//! layer 3 4 relu 1
//! <12 weights, row-major>
//! <4 biases>
//! layer 4 1 identity 0
//! <4 weights>
//! ```
//!
//! Values use the shortest representation that parses back to the same
//! `f64`, so a write/read cycle is lossless.

use std::fmt::Write as _;

use super::{Activation, Critic, Layer, Mlp, MonotoneCritic};
use crate::error::{Error, Result};

fn join(values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 12);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{v:?}").expect("writing to a String");
    }
    out
}

pub fn write_mlp(net: &Mlp, out: &mut String) {
    writeln!(out, "mlp {}", net.layers().len()).expect("writing to a String");
    for layer in net.layers() {
        writeln!(
            out,
            "layer {} {} {} {}",
            layer.inputs,
            layer.outputs,
            layer.activation.name(),
            u8::from(layer.has_bias())
        )
        .expect("writing to a String");
        out.push_str(&join(&layer.weights));
        out.push('\n');
        if layer.has_bias() {
            out.push_str(&join(&layer.bias));
            out.push('\n');
        }
    }
}

pub fn write_critic(critic: &Critic, out: &mut String) {
    match critic {
        Critic::Plain { net, action_dim } => {
            writeln!(out, "critic plain {action_dim}").expect("writing to a String");
            write_mlp(net, out);
        }
        Critic::Monotone(c) => {
            out.push_str("critic monotone\n");
            write_mlp(c.state_path(), out);
            write_mlp(c.action_path(), out);
        }
    }
}

/// Line cursor over checkpoint text; blank lines and `#` comments are skipped.
pub struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    line_no: usize,
}

impl<'a> Reader<'a> {
    pub fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().enumerate(),
            line_no: 0,
        }
    }

    pub fn error(&self, msg: impl std::fmt::Display) -> Error {
        Error::Checkpoint(format!("line {}: {msg}", self.line_no))
    }

    pub fn next_line(&mut self) -> Result<&'a str> {
        for (i, line) in self.lines.by_ref() {
            let t = line.trim();
            if !t.is_empty() && !t.starts_with('#') {
                self.line_no = i + 1;
                return Ok(t);
            }
        }
        Err(Error::Checkpoint("unexpected end of checkpoint".into()))
    }

    /// Next line split into words, checking the leading keyword.
    pub fn expect(&mut self, keyword: &str) -> Result<Vec<&'a str>> {
        let line = self.next_line()?;
        let mut words = line.split_whitespace();
        match words.next() {
            Some(w) if w == keyword => Ok(words.collect()),
            other => Err(self.error(format!("expected `{keyword}`, found `{}`", other.unwrap_or("")))),
        }
    }

    pub fn parse_usize(&self, word: &str) -> Result<usize> {
        word.parse().map_err(|_| self.error(format!("`{word}` is not a count")))
    }

    pub fn values(&mut self, expected: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|w| w.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| self.error(e))?;
        if values.len() != expected {
            return Err(self.error(format!("expected {expected} values, found {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(self.error("non-finite parameter"));
        }
        Ok(values)
    }
}

pub fn read_mlp(reader: &mut Reader<'_>) -> Result<Mlp> {
    let head = reader.expect("mlp")?;
    if head.len() != 1 {
        return Err(reader.error("`mlp` takes one layer count"));
    }
    let count = reader.parse_usize(head[0])?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let words = reader.expect("layer")?;
        if words.len() != 4 {
            return Err(reader.error("`layer` takes inputs, outputs, activation, bias flag"));
        }
        let inputs = reader.parse_usize(words[0])?;
        let outputs = reader.parse_usize(words[1])?;
        let activation = Activation::from_name(words[2])
            .ok_or_else(|| reader.error(format!("unknown activation `{}`", words[2])))?;
        let with_bias = match words[3] {
            "0" => false,
            "1" => true,
            other => return Err(reader.error(format!("bias flag must be 0 or 1, found `{other}`"))),
        };
        let mut layer = Layer::zeros(inputs, outputs, activation, with_bias);
        layer.weights = reader.values(inputs * outputs)?;
        if with_bias {
            layer.bias = reader.values(outputs)?;
        }
        layers.push(layer);
    }
    Mlp::from_layers(layers).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn read_critic(reader: &mut Reader<'_>) -> Result<Critic> {
    let words = reader.expect("critic")?;
    match words.as_slice() {
        ["plain", dim] => {
            let action_dim = reader.parse_usize(dim)?;
            let net = read_mlp(reader)?;
            Critic::from_plain(net, action_dim).map_err(|e| Error::Checkpoint(e.to_string()))
        }
        ["monotone"] => {
            let state = read_mlp(reader)?;
            let action = read_mlp(reader)?;
            let c = MonotoneCritic::from_paths(state, action).map_err(|e| Error::Checkpoint(e.to_string()))?;
            if !c.satisfies_sign_constraint() {
                return Err(Error::Checkpoint("monotone critic violates its sign constraint".into()));
            }
            Ok(Critic::Monotone(c))
        }
        _ => Err(reader.error("expected `critic plain <action_dim>` or `critic monotone`")),
    }
}
