//! Minimal s-expression reader used by the genome and filter sidecar files.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SexprError {
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("unexpected ')' at byte {0}")]
    UnexpectedClose(usize),
    #[error("trailing input at byte {0}")]
    Trailing(usize),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sexpr {
    Atom(String),
    List(Vec<Sexpr>),
}

impl Sexpr {
    pub fn as_atom(&self) -> Option<&str> {
        match self {
            Sexpr::Atom(s) => Some(s),
            Sexpr::List(_) => None,
        }
    }
}

impl fmt::Display for Sexpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sexpr::Atom(s) => f.write_str(s),
            Sexpr::List(items) => {
                f.write_str("(")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str(")")
            }
        }
    }
}

pub fn parse(input: &str) -> Result<Sexpr, SexprError> {
    let bytes = input.as_bytes();
    let mut pos = 0;
    let expr = parse_at(bytes, &mut pos)?;
    skip_ws(bytes, &mut pos);
    if pos != bytes.len() {
        return Err(SexprError::Trailing(pos));
    }
    Ok(expr)
}

fn skip_ws(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
}

fn parse_at(bytes: &[u8], pos: &mut usize) -> Result<Sexpr, SexprError> {
    skip_ws(bytes, pos);
    match bytes.get(*pos) {
        None => Err(SexprError::UnexpectedEnd),
        Some(b')') => Err(SexprError::UnexpectedClose(*pos)),
        Some(b'(') => {
            *pos += 1;
            let mut items = Vec::new();
            loop {
                skip_ws(bytes, pos);
                match bytes.get(*pos) {
                    None => return Err(SexprError::UnexpectedEnd),
                    Some(b')') => {
                        *pos += 1;
                        return Ok(Sexpr::List(items));
                    }
                    Some(_) => items.push(parse_at(bytes, pos)?),
                }
            }
        }
        Some(_) => {
            let start = *pos;
            while *pos < bytes.len()
                && !bytes[*pos].is_ascii_whitespace()
                && bytes[*pos] != b'('
                && bytes[*pos] != b')'
            {
                *pos += 1;
            }
            // Input is &str and we only split on ASCII bytes.
            let atom = std::str::from_utf8(&bytes[start..*pos]).expect("utf8 boundary");
            Ok(Sexpr::Atom(atom.to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_nested() {
        let e = parse(" (add (sin t) p) ").unwrap();
        assert_eq!(e.to_string(), "(add (sin t) p)");
    }

    #[test]
    fn errors() {
        assert_eq!(parse("(add p"), Err(SexprError::UnexpectedEnd));
        assert_eq!(parse(")"), Err(SexprError::UnexpectedClose(0)));
        assert_eq!(parse("p q"), Err(SexprError::Trailing(2)));
    }
}
