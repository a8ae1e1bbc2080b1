use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    #[default]
    None,
    GroupNorm { groups: usize },
}

/// One conv block: `convs` 3×3 convolutions with `channels` filters each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub channels: usize,
    pub convs: usize,
}

/// A simpleVGG network: conv blocks joined by 2×2 max-pools, then one hidden
/// fully connected layer and the output layer.
///
/// Written as `C(N)-C(N)-...-F`, e.g. `32(2)-64(2)-128(2)-128`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub blocks: Vec<Block>,
    pub fc_width: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub norm: Norm,
}

impl ArchSpec {
    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_norm(mut self, norm: Norm) -> Self {
        self.norm = norm;
        self
    }
}

struct Cursor<'a> {
    text: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            position: self.pos,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.text.get(self.pos).copied()
    }

    fn int(&mut self) -> Result<usize> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error("expected a positive integer"));
        }
        let digits = std::str::from_utf8(&self.text[start..self.pos]).expect("ascii digits");
        match digits.parse::<usize>() {
            Ok(0) | Err(_) => {
                self.pos = start;
                Err(self.error(format!("`{digits}` is not a positive integer")))
            }
            Ok(v) => Ok(v),
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected `{}`", c as char)))
        }
    }
}

/// Parses `block ('-' block)* '-' INT` where `block := INT '(' INT ')'`.
pub fn parse_arch_spec(text: &str) -> Result<ArchSpec> {
    let mut cur = Cursor {
        text: text.as_bytes(),
        pos: 0,
    };
    let mut blocks = Vec::new();
    loop {
        let n = cur.int()?;
        if cur.peek() == Some(b'(') {
            cur.pos += 1;
            let convs = cur.int()?;
            cur.expect(b')')?;
            blocks.push(Block { channels: n, convs });
            cur.expect(b'-')?;
            continue;
        }
        if blocks.is_empty() {
            return Err(cur.error("expected `(` after the first block's channel count"));
        }
        if cur.pos != cur.text.len() {
            return Err(cur.error("unexpected trailing input"));
        }
        return Ok(ArchSpec {
            blocks,
            fc_width: n,
            activation: Activation::default(),
            norm: Norm::default(),
        });
    }
}

impl FromStr for ArchSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_arch_spec(s)
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.blocks {
            write!(f, "{}({})-", b.channels, b.convs)?;
        }
        write!(f, "{}", self.fc_width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_reference_spec() {
        let s = parse_arch_spec("32(2)-64(2)-128(2)-128").unwrap();
        let got: Vec<_> = s.blocks.iter().map(|b| (b.channels, b.convs)).collect();
        assert_eq!(got, vec![(32, 2), (64, 2), (128, 2)]);
        assert_eq!(s.fc_width, 128);
        assert_eq!(s.to_string(), "32(2)-64(2)-128(2)-128");
    }

    #[test]
    fn parses_minimal_spec() {
        let s = parse_arch_spec("8(1)-16").unwrap();
        assert_eq!(s.blocks, vec![Block { channels: 8, convs: 1 }]);
        assert_eq!(s.fc_width, 16);
    }

    #[test]
    fn reports_error_positions() {
        let cases = [
            ("32(2)64(2)", 5),
            ("", 0),
            ("128", 3),
            ("8(1)-", 5),
            ("8(0)-4", 2),
            ("8(1-4", 3),
            ("8(1)-4x", 6),
        ];
        for (text, pos) in cases {
            match parse_arch_spec(text) {
                Err(Error::Parse { position, .. }) => assert_eq!(position, pos, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }
}
