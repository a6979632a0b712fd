//! Text format for reaction networks.
//!
//! ```text
//! units: nM, s
//! Gate + Input1 <->{0.0003}{0.1126} Intermediate + Waste1
//! 2A + B ->{1e-3} C
//! ```
//!
//! Species are ordered by first appearance. Rates are given in the header's
//! units and converted to per-second.

use bioproto_core::crn::{Crn, Reaction};
use log::warn;

use crate::lexer::{lex, scaled_number, Span, SyntaxError, Tok, Token};
use crate::units::UnitSystem;

#[derive(Debug, Clone, PartialEq)]
pub struct CrnFile {
    pub crn: Crn,
    pub units: UnitSystem,
    /// Span of the line each reaction comes from, indexed like
    /// `crn.reactions()`.
    pub spans: Vec<Span>,
    pub warnings: Vec<(CrnWarning, SyntaxError)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrnWarning {
    RepeatedSpecies,
    NullEffect,
}

type Complex = Vec<(String, u32)>;

struct Line<'a> {
    toks: &'a [Token],
    pos: usize,
}

impl<'a> Line<'a> {
    fn peek(&self) -> &'a Token {
        &self.toks[self.pos.min(self.toks.len() - 1)]
    }

    fn next(&mut self) -> &'a Token {
        let t = self.peek();
        self.pos += 1;
        t
    }

    fn expect(&mut self, c: char) -> Result<Span, SyntaxError> {
        let t = self.next();
        if t.tok == Tok::Punct(c) {
            Ok(t.span)
        } else {
            Err(SyntaxError::new(format!("expected `{c}`, found {}", t.tok), t.span))
        }
    }

    fn done(&self) -> bool {
        self.pos >= self.toks.len()
    }
}

fn complex(line: &mut Line<'_>, warnings: &mut Vec<(CrnWarning, SyntaxError)>) -> Result<Complex, SyntaxError> {
    let mut out: Complex = Vec::new();
    if let Tok::Number(n) = &line.peek().tok {
        if n == "0" {
            line.next();
            return Ok(out);
        }
    }
    if matches!(line.peek().tok, Tok::Arrow | Tok::BiArrow) || line.done() {
        return Ok(out);
    }
    loop {
        let t = line.next();
        let (coef, name_tok) = match &t.tok {
            Tok::Number(n) => {
                let c: u32 =
                    n.parse().ok().filter(|c| *c > 0).ok_or_else(|| {
                        SyntaxError::new(format!("malformed stoichiometric coefficient `{n}`"), t.span)
                    })?;
                (c, line.next())
            }
            _ => (1, t),
        };
        let Tok::Ident(name) = &name_tok.tok else {
            return Err(SyntaxError::new(
                format!("expected a species name, found {}", name_tok.tok),
                name_tok.span,
            ));
        };
        match out.iter_mut().find(|(n, _)| n == name) {
            Some(entry) => {
                warnings.push((
                    CrnWarning::RepeatedSpecies,
                    SyntaxError::new(
                        format!("species `{name}` repeated in one complex; coefficients summed"),
                        name_tok.span,
                    ),
                ));
                entry.1 += coef;
            }
            None => out.push((name.clone(), coef)),
        }
        if line.peek().tok == Tok::Punct('+') {
            line.next();
        } else {
            return Ok(out);
        }
    }
}

fn rate(line: &mut Line<'_>) -> Result<(String, Span), SyntaxError> {
    line.expect('{')?;
    let t = line.next();
    let Tok::Number(text) = &t.tok else {
        return Err(SyntaxError::new(
            format!("expected a rate constant, found {}", t.tok),
            t.span,
        ));
    };
    line.expect('}')?;
    Ok((text.clone(), t.span))
}

fn header(toks: &[Token]) -> Result<UnitSystem, SyntaxError> {
    // units : CONC , TIME
    let shape = (
        toks.get(1).map(|t| &t.tok),
        toks.get(2).map(|t| &t.tok),
        toks.get(3).map(|t| &t.tok),
        toks.get(4).map(|t| &t.tok),
    );
    let span = toks[0].span.to(toks[toks.len() - 1].span);
    if let (Some(Tok::Punct(':')), Some(Tok::Ident(c)), Some(Tok::Punct(',')), Some(Tok::Ident(t))) = shape {
        if toks.len() == 5 {
            return UnitSystem::new(c, t)
                .ok_or_else(|| SyntaxError::new(format!("unknown unit system `{c}, {t}`"), span));
        }
    }
    Err(SyntaxError::new(
        "malformed header, expected `units: <concentration>, <time>`",
        span,
    ))
}

/// Parse a reaction network file.
pub fn parse_crn(text: &str) -> Result<CrnFile, SyntaxError> {
    let tokens = lex(text)?;
    let mut lines: Vec<Vec<Token>> = Vec::new();
    let mut last_line = 0;
    for t in tokens {
        if t.tok == Tok::Eof {
            break;
        }
        if lines.is_empty() || t.span.line != last_line {
            lines.push(Vec::new());
            last_line = t.span.line;
        }
        lines.last_mut().unwrap().push(t);
    }
    let mut units = None;
    let mut names: Vec<String> = Vec::new();
    let mut raw: Vec<(Complex, Complex, String, Span, Span)> = Vec::new();
    let mut warnings = Vec::new();
    for toks in &lines {
        if toks[0].tok == Tok::Ident("units".into()) && toks.get(1).map(|t| &t.tok) == Some(&Tok::Punct(':')) {
            if units.is_some() || !raw.is_empty() {
                return Err(SyntaxError::new(
                    "the units header must be the first line",
                    toks[0].span,
                ));
            }
            units = Some(header(toks)?);
            continue;
        }
        let mut line = Line { toks, pos: 0 };
        let lhs = complex(&mut line, &mut warnings)?;
        let arrow = line.next();
        let reversible = match arrow.tok {
            Tok::Arrow => false,
            Tok::BiArrow => true,
            _ => {
                return Err(SyntaxError::new(
                    format!("expected `->` or `<->`, found {}", arrow.tok),
                    arrow.span,
                ))
            }
        };
        let forward = rate(&mut line)?;
        let backward = if reversible { Some(rate(&mut line)?) } else { None };
        let rhs = complex(&mut line, &mut warnings)?;
        if !line.done() {
            let t = line.peek();
            return Err(SyntaxError::new(format!("unexpected {} after reaction", t.tok), t.span));
        }
        for (name, _) in lhs.iter().chain(&rhs) {
            if !names.contains(name) {
                names.push(name.clone());
            }
        }
        let whole = toks[0].span.to(toks[toks.len() - 1].span);
        raw.push((lhs.clone(), rhs.clone(), forward.0, forward.1, whole));
        if let Some((k, span)) = backward {
            raw.push((rhs, lhs, k, span, whole));
        }
    }
    let units = units.ok_or_else(|| {
        SyntaxError::new(
            "missing `units: <concentration>, <time>` header",
            lines.first().map(|l| l[0].span).unwrap_or_default(),
        )
    })?;
    let n = names.len();
    let vector = |c: &Complex| {
        let mut v = vec![0u32; n];
        for (name, k) in c {
            v[names.iter().position(|x| x == name).unwrap()] += k;
        }
        v
    };
    let mut reactions = Vec::new();
    let mut spans = Vec::new();
    for (lhs, rhs, text, span, whole) in &raw {
        let k = scaled_number(text, 0).ok_or_else(|| SyntaxError::new(format!("malformed rate `{text}`"), *span))?;
        if !(k > 0.0) {
            return Err(SyntaxError::new(
                format!("rate constant must be positive, got {text}"),
                *span,
            ));
        }
        // concentrations stay in header units, only time is rescaled
        let k = k / units.seconds_per_time_unit();
        let r = Reaction::new(vector(lhs), vector(rhs), k);
        if r.is_null_effect() {
            warnings.push((
                CrnWarning::NullEffect,
                SyntaxError::new("reaction has no net effect", *whole),
            ));
        }
        reactions.push(r);
        spans.push(*whole);
    }
    for (_, w) in &warnings {
        warn!("{w}");
    }
    let crn = Crn::new(names, reactions).map_err(|e| SyntaxError::new(e.to_string(), Span::default()))?;
    Ok(CrnFile {
        crn,
        units,
        spans,
        warnings,
    })
}
