//! Recursive-descent parser for the term grammar
//!
//! ```text
//! Term   := Factor ('*' Factor)*
//! Factor := '1' | Var ('^' INT)? | FUNC '(' Var ')'
//! Var    := 'z' INT | 'x' | 'y'
//! ```

use super::term::{Factor, Func, Term};
use super::GrammarCaps;
use crate::error::{Error, Result};

struct Cursor<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, b: u8) -> bool {
        if self.peek() == Some(b) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn err<T>(&self, offset: usize, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            offset,
            message: message.into(),
        })
    }

    fn int(&mut self) -> Result<(usize, u64)> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return self.err(start, "expected integer");
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("0");
        match text.parse::<u64>() {
            Ok(v) => Ok((start, v)),
            Err(_) => self.err(start, "integer too large"),
        }
    }

    fn ident(&mut self) -> (usize, &'a str) {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphabetic() {
            self.pos += 1;
        }
        (start, std::str::from_utf8(&self.src[start..self.pos]).unwrap_or(""))
    }

    fn var(&mut self, dim: usize) -> Result<usize> {
        let (start, name) = self.ident();
        let index = match name {
            "x" => 1,
            "y" => 2,
            "z" => {
                let (at, v) = self.int()?;
                if v == 0 {
                    return self.err(at, "variable indices start at 1");
                }
                v as usize
            }
            "" => return self.err(start, "expected variable"),
            other => return self.err(start, format!("unknown variable `{other}`")),
        };
        if index > dim {
            return self.err(start, format!("variable z{index} exceeds dimension {dim}"));
        }
        Ok(index - 1)
    }

    fn factor(&mut self, dim: usize, max_power: u32) -> Result<Factor> {
        let start = match self.peek() {
            Some(_) => self.pos,
            None => return self.err(self.pos, "expected factor"),
        };
        let c = self.src[start];
        if c.is_ascii_digit() {
            let (at, v) = self.int()?;
            if v != 1 {
                return self.err(at, "only the constant 1 is allowed");
            }
            return Ok(Factor::Const);
        }
        if !c.is_ascii_alphabetic() {
            return self.err(start, format!("unexpected character `{}`", c as char));
        }
        let save = self.pos;
        let (_, name) = self.ident();
        let is_var = matches!(name, "x" | "y" | "z");
        if is_var {
            self.pos = save;
            let var = self.var(dim)?;
            let mut power = 1u64;
            if self.eat(b'^') {
                let (at, p) = self.int()?;
                if p < 1 || p > max_power as u64 {
                    return self.err(at, format!("power {p} outside 1..{max_power}"));
                }
                power = p;
            }
            return Ok(Factor::Poly {
                var,
                power: power as u32,
            });
        }
        let func = match Func::from_name(name) {
            Some(f) => f,
            None => return self.err(start, format!("unknown function `{name}`")),
        };
        if !self.eat(b'(') {
            return self.err(self.pos, "expected `(`");
        }
        let var = self.var(dim)?;
        if !self.eat(b')') {
            return self.err(self.pos, "expected `)`");
        }
        Ok(Factor::Func { func, var })
    }
}

pub fn parse_term_with_caps(text: &str, dim: usize, max_power: u32) -> Result<Term> {
    let mut cur = Cursor {
        src: text.as_bytes(),
        pos: 0,
    };
    let mut factors = vec![cur.factor(dim, max_power)?];
    while cur.eat(b'*') {
        factors.push(cur.factor(dim, max_power)?);
    }
    if let Some(c) = cur.peek() {
        return cur.err(cur.pos, format!("unexpected trailing `{}`", c as char));
    }
    let term = Term::from_factors(factors);
    if term.max_power() > max_power {
        return cur.err(0, format!("merged power {} outside 1..{max_power}", term.max_power()));
    }
    Ok(term)
}

/// Parses and canonicalizes one term over `dim` variables.
pub fn parse_term(text: &str, dim: usize) -> Result<Term> {
    parse_term_with_caps(text, dim, GrammarCaps::default().max_power)
}

impl Term {
    pub fn parse(text: &str, dim: usize) -> Result<Term> {
        parse_term(text, dim)
    }
}
