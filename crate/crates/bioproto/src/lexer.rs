//! Tokens shared by the protocol and reaction-network formats.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Byte range plus 1-based line and column of the start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub line: usize,
    pub column: usize,
}

impl Span {
    pub fn to(self, other: Span) -> Span {
        Span {
            end: other.end.max(self.end),
            ..self
        }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    /// Literal text kept so unit scaling can shift the exponent exactly.
    Number(String),
    /// `${name}` parameter placeholder.
    Hole(String),
    Punct(char),
    Arrow,
    BiArrow,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Number(s) => write!(f, "number `{s}`"),
            Tok::Hole(s) => write!(f, "parameter `${{{s}}}`"),
            Tok::Punct(c) => write!(f, "`{c}`"),
            Tok::Arrow => f.write_str("`->`"),
            Tok::BiArrow => f.write_str("`<->`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{span}: {message}")]
pub struct SyntaxError {
    pub message: String,
    pub span: Span,
}

impl SyntaxError {
    pub fn new(message: impl Into<String>, span: Span) -> Self {
        SyntaxError {
            message: message.into(),
            span,
        }
    }
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
    col: usize,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek2(&self) -> Option<char> {
        let mut it = self.src[self.pos..].chars();
        it.next();
        it.next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn here(&self) -> Span {
        Span {
            start: self.pos,
            end: self.pos,
            line: self.line,
            column: self.col,
        }
    }
}

fn ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

/// Tokenize; the last token is always `Eof`.
pub fn lex(src: &str) -> Result<Vec<Token>, SyntaxError> {
    let mut cur = Cursor {
        src,
        pos: 0,
        line: 1,
        col: 1,
    };
    let mut out = Vec::new();
    loop {
        while let Some(c) = cur.peek() {
            if c == '#' {
                while cur.peek().is_some_and(|c| c != '\n') {
                    cur.bump();
                }
            } else if c.is_whitespace() {
                cur.bump();
            } else {
                break;
            }
        }
        let mut span = cur.here();
        let Some(c) = cur.peek() else {
            out.push(Token { tok: Tok::Eof, span });
            return Ok(out);
        };
        let tok = if ident_start(c) {
            let start = cur.pos;
            while let Some(c) = cur.peek() {
                let continues =
                    c.is_ascii_alphanumeric() || c == '_' || c == '+' || (c == '-' && cur.peek2() != Some('>'));
                if !continues {
                    break;
                }
                cur.bump();
            }
            Tok::Ident(src[start..cur.pos].to_string())
        } else if c.is_ascii_digit()
            || (c == '.' && cur.peek2().is_some_and(|d| d.is_ascii_digit()))
            || (c == '-' && cur.peek2().is_some_and(|d| d.is_ascii_digit() || d == '.'))
        {
            Tok::Number(lex_number(&mut cur))
        } else if c == '$' {
            cur.bump();
            if cur.bump() != Some('{') {
                return Err(SyntaxError::new("expected `{` after `$`", span));
            }
            let start = cur.pos;
            while cur.peek().is_some_and(|c| c != '}') {
                cur.bump();
            }
            let name = src[start..cur.pos].to_string();
            if cur.bump() != Some('}') {
                span.end = cur.pos;
                return Err(SyntaxError::new("unterminated parameter", span));
            }
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                span.end = cur.pos;
                return Err(SyntaxError::new(format!("invalid parameter name `{name}`"), span));
            }
            Tok::Hole(name)
        } else if c == '-' && cur.peek2() == Some('>') {
            cur.bump();
            cur.bump();
            Tok::Arrow
        } else if c == '<' && src[cur.pos..].starts_with("<->") {
            for _ in 0..3 {
                cur.bump();
            }
            Tok::BiArrow
        } else if "()[],;={}+:".contains(c) {
            cur.bump();
            Tok::Punct(c)
        } else if c == '∅' {
            cur.bump();
            Tok::Number("0".into())
        } else {
            cur.bump();
            span.end = cur.pos;
            return Err(SyntaxError::new(format!("unexpected character `{c}`"), span));
        };
        span.end = cur.pos;
        out.push(Token { tok, span });
    }
}

fn lex_number(cur: &mut Cursor<'_>) -> String {
    let start = cur.pos;
    if cur.peek() == Some('-') {
        cur.bump();
    }
    while cur.peek().is_some_and(|c| c.is_ascii_digit() || c == '.') {
        cur.bump();
    }
    if matches!(cur.peek(), Some('e' | 'E')) {
        let rest = &cur.src[cur.pos + 1..];
        let digits = rest.strip_prefix(['+', '-']).unwrap_or(rest);
        if digits.starts_with(|c: char| c.is_ascii_digit()) {
            cur.bump();
            if matches!(cur.peek(), Some('+' | '-')) {
                cur.bump();
            }
            while cur.peek().is_some_and(|c| c.is_ascii_digit()) {
                cur.bump();
            }
        }
    }
    cur.src[start..cur.pos].to_string()
}

/// Parse a decimal literal scaled by `10^shift`. The shift is applied to the
/// exponent before conversion, so `100` with shift -9 gives exactly the
/// double nearest to 1e-7.
pub fn scaled_number(text: &str, shift: i32) -> Option<f64> {
    let (mantissa, exp) = match text.find(['e', 'E']) {
        Some(i) => (&text[..i], text[i + 1..].parse::<i32>().ok()?),
        None => (text, 0),
    };
    if mantissa.is_empty() || mantissa.matches('.').count() > 1 || mantissa == "." || mantissa == "-" {
        return None;
    }
    let v: f64 = format!("{mantissa}e{}", exp.checked_add(shift)?).parse().ok()?;
    v.is_finite().then_some(v)
}
