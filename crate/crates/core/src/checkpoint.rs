//! Plain-text model checkpoints.
//!
//! ```text
//! bridgematch-checkpoint 1
//! layer_dims 13 128 128 128 2
//! activation silu
//! cond_mode initial_point
//! cond_alpha 0e0
//! time_features 4
//! sigma 1e0
//! seed 0
//! layer 0 weights 128 13
//! <128 lines of 13 values>
//! layer 0 bias 128
//! <one line of 128 values>
//! ...
//! end
//! ```
//!
//! Floats are written in shortest round-trip form, so reading a checkpoint
//! back reproduces every parameter bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nets::{Activation, CondMode, MlpModel};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "bridgematch-checkpoint";

/// A trained model plus the settings needed to sample from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MlpModel,
    pub sigma: f64,
    pub seed: u64,
}

impl Checkpoint {
    pub fn cond_alpha(&self) -> f64 {
        self.model.cond_mode().level()
    }

    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        let dims: Vec<String> = m.layer_dims().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(s, "{MAGIC} {FORMAT_VERSION}");
        let _ = writeln!(s, "layer_dims {}", dims.join(" "));
        let _ = writeln!(s, "activation {}", m.activation().name());
        let _ = writeln!(s, "cond_mode {}", m.cond_mode().name());
        let _ = writeln!(s, "cond_alpha {:e}", self.cond_alpha());
        let _ = writeln!(s, "time_features {}", m.time_features());
        let _ = writeln!(s, "sigma {:e}", self.sigma);
        let _ = writeln!(s, "seed {}", self.seed);
        for (l, pair) in m.layer_dims().windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let _ = writeln!(s, "layer {l} weights {fan_out} {fan_in}");
            for row in m.weights()[l].chunks_exact(fan_in) {
                write_row(&mut s, row);
            }
            let _ = writeln!(s, "layer {l} bias {fan_out}");
            write_row(&mut s, &m.biases()[l]);
        }
        s.push_str("end\n");
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        let header = lines.next_line()?;
        let version = header
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| lines.err("not a bridgematch checkpoint"))?;
        if version != FORMAT_VERSION.to_string() {
            return Err(lines.err(&format!("unsupported format version {version}")));
        }
        let layer_dims: Vec<usize> = lines
            .field("layer_dims")?
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| lines.err("bad layer size")))
            .collect::<Result<_>>()?;
        let activation: Activation = lines.field("activation")?.parse()?;
        let mode = lines.field("cond_mode")?.to_string();
        let alpha: f64 = lines.parse_field("cond_alpha")?;
        let cond_mode = match mode.as_str() {
            "none" => CondMode::None,
            "initial_point" => CondMode::InitialPoint,
            "alpha_point" => CondMode::AlphaPoint { alpha },
            other => return Err(lines.err(&format!("unknown cond_mode '{other}'"))),
        };
        let time_features: usize = lines.parse_field("time_features")?;
        let sigma: f64 = lines.parse_field("sigma")?;
        let seed: u64 = lines.parse_field("seed")?;
        if layer_dims.len() < 2 {
            return Err(lines.err("need at least two layer sizes"));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, pair) in layer_dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            lines.expect(&format!("layer {l} weights {fan_out} {fan_in}"))?;
            let mut w = Vec::with_capacity(fan_in * fan_out);
            for _ in 0..fan_out {
                w.extend(lines.floats(fan_in)?);
            }
            lines.expect(&format!("layer {l} bias {fan_out}"))?;
            biases.push(lines.floats(fan_out)?);
            weights.push(w);
        }
        lines.expect("end")?;
        let model = MlpModel::from_parts(layer_dims, weights, biases, activation, cond_mode, time_features)?;
        Ok(Self { model, sigma, seed })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

fn write_row(s: &mut String, row: &[f64]) {
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{v:e}");
    }
    s.push('\n');
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
            line: 0,
        }
    }

    fn err(&self, message: &str) -> Error {
        Error::Parse {
            line: self.line,
            message: message.to_string(),
        }
    }

    fn next_line(&mut self) -> Result<&'a str> {
        match self.inner.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l.trim())
            }
            None => {
                self.line += 1;
                Err(self.err("unexpected end of checkpoint"))
            }
        }
    }

    fn field(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next_line()?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.trim()),
            _ if line == key => Ok(""),
            _ => Err(self.err(&format!("expected '{key}'"))),
        }
    }

    fn parse_field<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.field(key)?;
        v.parse().map_err(|_| self.err(&format!("bad value for '{key}'")))
    }

    fn expect(&mut self, exact: &str) -> Result<()> {
        if self.next_line()? != exact {
            return Err(self.err(&format!("expected '{exact}'")));
        }
        Ok(())
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| self.err(&format!("bad number '{v}'"))))
            .collect::<Result<_>>()?;
        if vals.len() != n {
            return Err(self.err(&format!("expected {n} values, found {}", vals.len())));
        }
        Ok(vals)
    }
}
