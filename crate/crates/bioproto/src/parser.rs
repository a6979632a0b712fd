//! Concrete syntax for protocols.
//!
//! ```text
//! let A = sample([H+ = 0.1 M, Cl- = 0.1 M]; 1.0 mL; 298.15 K) in
//! let a, _ = Dispense(A, 0.5) in
//! Observe(Equilibrate(a, 3000 s), 1)
//! ```
//!
//! Dispense fractions and equilibrate durations may be `${name}`
//! placeholders; see [`Template`].

use std::collections::BTreeMap;

use bioproto_core::ast::{is_identifier, Protocol, VarName};
use bioproto_core::crn::Crn;
use bioproto_core::sample::Sample;
use serde::Serialize;
use thiserror::Error;

use crate::lexer::{lex, scaled_number, Span, SyntaxError, Tok, Token};
use crate::units::{lookup, Dimension, Scale, UnitSystem};

pub const KEYWORDS: [&str; 8] = [
    "sample",
    "Mix",
    "let",
    "in",
    "Dispense",
    "Equilibrate",
    "Dispose",
    "Observe",
];

/// A parsed protocol. `spans[i]` belongs to the node with pre-order id `i`
/// in `protocol` as written (before desugaring).
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub protocol: Protocol,
    pub spans: Vec<Span>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HoleKind {
    Fraction,
    /// Duration; the value is multiplied by `seconds` (the written unit).
    Time {
        seconds: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hole {
    pub name: String,
    pub node: usize,
    pub kind: HoleKind,
    pub span: Span,
}

/// A protocol with named parameter slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub parsed: Parsed,
    pub holes: Vec<Hole>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TemplateError {
    #[error("parameter `{0}` has no value")]
    Unbound(String),
    #[error("no parameter named `{0}` in the protocol")]
    Unknown(String),
    #[error("{span}: parameter `{name}` = {value} is not a valid {what}")]
    Mismatch {
        name: String,
        value: f64,
        what: &'static str,
        span: Span,
    },
}

impl Template {
    /// Distinct parameter names in order of first appearance.
    pub fn names(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for h in &self.holes {
            if !out.contains(&h.name.as_str()) {
                out.push(&h.name);
            }
        }
        out
    }

    pub fn instantiate(&self, values: &BTreeMap<String, f64>) -> Result<Protocol, TemplateError> {
        if let Some(extra) = values.keys().find(|k| !self.holes.iter().any(|h| &h.name == *k)) {
            return Err(TemplateError::Unknown(extra.clone()));
        }
        let mut by_node = BTreeMap::new();
        for h in &self.holes {
            let v = *values
                .get(&h.name)
                .ok_or_else(|| TemplateError::Unbound(h.name.clone()))?;
            let (value, ok, what) = match h.kind {
                HoleKind::Fraction => (v, v > 0.0 && v < 1.0, "dispense fraction in (0, 1)"),
                HoleKind::Time { seconds } => (v * seconds, v >= 0.0 && v.is_finite(), "nonnegative duration"),
            };
            if !ok {
                return Err(TemplateError::Mismatch {
                    name: h.name.clone(),
                    value: v,
                    what,
                    span: h.span,
                });
            }
            by_node.insert(h.node, value);
        }
        let mut id = 0;
        Ok(fill(&self.parsed.protocol, &by_node, &mut id))
    }
}

fn fill(p: &Protocol, values: &BTreeMap<usize, f64>, id: &mut usize) -> Protocol {
    let me = *id;
    *id += 1;
    let mut rec = |q: &Protocol| Box::new(fill(q, values, id));
    match p {
        Protocol::Var(_) | Protocol::Initial(_) => p.clone(),
        Protocol::Mix(a, b) => {
            let a = rec(a);
            Protocol::Mix(a, rec(b))
        }
        Protocol::Let { var, bound, body } => {
            let bound = rec(bound);
            Protocol::Let {
                var: var.clone(),
                bound,
                body: rec(body),
            }
        }
        Protocol::Dispense {
            first,
            second,
            source,
            fraction,
            body,
        } => {
            let source = rec(source);
            Protocol::Dispense {
                first: first.clone(),
                second: second.clone(),
                source,
                fraction: values.get(&me).copied().unwrap_or(*fraction),
                body: rec(body),
            }
        }
        Protocol::Equilibrate(q, t) => Protocol::Equilibrate(rec(q), values.get(&me).copied().unwrap_or(*t)),
        Protocol::Dispose(q) => Protocol::Dispose(rec(q)),
        Protocol::Observe(q, idn) => Protocol::Observe(rec(q), *idn),
    }
}

struct Parser<'a> {
    toks: Vec<Token>,
    pos: usize,
    crn: &'a Crn,
    units: &'a UnitSystem,
    spans: Vec<Span>,
    holes: Vec<Hole>,
    allow_holes: bool,
}

type PResult<T> = Result<T, SyntaxError>;

impl Parser<'_> {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected<T>(&self, what: &str) -> PResult<T> {
        let t = self.peek();
        Err(SyntaxError::new(format!("expected {what}, found {}", t.tok), t.span))
    }

    fn punct(&mut self, c: char) -> PResult<Span> {
        if self.peek().tok == Tok::Punct(c) {
            Ok(self.next().span)
        } else {
            self.unexpected(&format!("`{c}`"))
        }
    }

    fn keyword(&mut self, k: &str) -> PResult<Span> {
        if self.peek().tok == Tok::Ident(k.into()) {
            Ok(self.next().span)
        } else {
            self.unexpected(&format!("`{k}`"))
        }
    }

    fn binder(&mut self) -> PResult<(VarName, Span)> {
        let t = self.next();
        match &t.tok {
            Tok::Ident(s) if KEYWORDS.contains(&s.as_str()) => {
                Err(SyntaxError::new(format!("keyword `{s}` cannot be a variable"), t.span))
            }
            Tok::Ident(s) if is_identifier(s) => Ok((VarName::from(s.as_str()), t.span)),
            _ => Err(SyntaxError::new(
                format!("expected a variable name, found {}", t.tok),
                t.span,
            )),
        }
    }

    fn hole_or_number(&mut self) -> PResult<(Result<String, String>, Span)> {
        let t = self.next();
        match t.tok {
            Tok::Number(n) => Ok((Ok(n), t.span)),
            Tok::Hole(h) => Ok((Err(h), t.span)),
            other => Err(SyntaxError::new(format!("expected a number, found {other}"), t.span)),
        }
    }

    /// NUMBER [UNIT] in the slot's base unit (header unit for concentrations).
    fn quantity(&mut self, dim: Dimension) -> PResult<f64> {
        let t = self.next();
        let text = match t.tok {
            Tok::Number(n) => n,
            Tok::Hole(h) => {
                return Err(SyntaxError::new(
                    format!("parameter `${{{h}}}` can only stand for a dispense fraction or an equilibrate duration"),
                    t.span,
                ))
            }
            other => {
                return Err(SyntaxError::new(
                    format!("expected a {}, found {other}", dim.name()),
                    t.span,
                ))
            }
        };
        let (scale, span) = self.unit(dim, t.span)?;
        let v = match scale {
            Scale::Pow10(e) => scaled_number(&text, e),
            Scale::Factor(f) => scaled_number(&text, 0).map(|v| v * f),
        };
        v.ok_or_else(|| SyntaxError::new(format!("malformed number `{text}`"), span))
    }

    fn unit(&mut self, dim: Dimension, num_span: Span) -> PResult<(Scale, Span)> {
        let base = match dim {
            Dimension::Concentration => Scale::Pow10(0),
            Dimension::Time => Scale::Factor(self.units.seconds_per_time_unit()),
            _ => Scale::Pow10(0),
        };
        let Tok::Ident(u) = &self.peek().tok else {
            return Ok((base, num_span));
        };
        let Some((found, scale)) = lookup(u) else {
            return Ok((base, num_span));
        };
        let u = u.clone();
        let span = num_span.to(self.next().span);
        if found != dim {
            return Err(SyntaxError::new(
                format!(
                    "unit `{u}` is a {} unit but a {} is expected here",
                    found.name(),
                    dim.name()
                ),
                span,
            ));
        }
        let scale = match (dim, scale) {
            (Dimension::Concentration, Scale::Pow10(e)) => Scale::Pow10(e - self.units.concentration_exponent()),
            _ => scale,
        };
        Ok((scale, span))
    }

    fn open(&mut self) -> usize {
        self.spans.push(self.peek().span);
        self.spans.len() - 1
    }

    fn close(&mut self, id: usize) {
        let prev = self.toks[self.pos.saturating_sub(1)].span;
        self.spans[id] = self.spans[id].to(prev);
    }

    fn expr(&mut self) -> PResult<Protocol> {
        let id = self.open();
        let t = self.peek().clone();
        let out = match &t.tok {
            Tok::Ident(k) if k == "sample" => {
                self.next();
                self.sample()?
            }
            Tok::Ident(k) if k == "Mix" => {
                self.next();
                self.punct('(')?;
                let a = self.expr()?;
                self.punct(',')?;
                let b = self.expr()?;
                self.punct(')')?;
                Protocol::mix(a, b)
            }
            Tok::Ident(k) if k == "let" => {
                self.next();
                self.let_form(id)?
            }
            Tok::Ident(k) if k == "Equilibrate" => {
                self.next();
                self.punct('(')?;
                let p = self.expr()?;
                self.punct(',')?;
                let t = match self.peek().tok.clone() {
                    Tok::Hole(name) => {
                        let span = self.next().span;
                        let (scale, span) = self.unit(Dimension::Time, span)?;
                        let Scale::Factor(seconds) = scale else { unreachable!() };
                        self.hole(name, id, HoleKind::Time { seconds }, span)?;
                        f64::NAN
                    }
                    _ => self.quantity(Dimension::Time)?,
                };
                self.punct(')')?;
                Protocol::equilibrate(p, t)
            }
            Tok::Ident(k) if k == "Dispose" => {
                self.next();
                self.punct('(')?;
                let p = self.expr()?;
                self.punct(')')?;
                Protocol::dispose(p)
            }
            Tok::Ident(k) if k == "Observe" => {
                self.next();
                self.punct('(')?;
                let p = self.expr()?;
                self.punct(',')?;
                let t = self.next();
                let idn = match &t.tok {
                    Tok::Number(n) => n.parse::<u64>().map_err(|_| {
                        SyntaxError::new(format!("observation id must be a natural number, got `{n}`"), t.span)
                    })?,
                    other => {
                        return Err(SyntaxError::new(
                            format!("expected an observation id, found {other}"),
                            t.span,
                        ))
                    }
                };
                self.punct(')')?;
                Protocol::observe(p, idn)
            }
            Tok::Ident(k) if KEYWORDS.contains(&k.as_str()) => {
                self.next();
                return Err(SyntaxError::new(format!("unexpected keyword `{k}`"), t.span));
            }
            Tok::Ident(_) => {
                let (v, _) = self.binder()?;
                Protocol::Var(v)
            }
            _ => return self.unexpected("a protocol"),
        };
        self.close(id);
        Ok(out)
    }

    fn hole(&mut self, name: String, node: usize, kind: HoleKind, span: Span) -> PResult<()> {
        if !self.allow_holes {
            return Err(SyntaxError::new(
                format!("parameter `${{{name}}}` needs a value (use a template)"),
                span,
            ));
        }
        let same_kind = |a: &HoleKind, b: &HoleKind| core::mem::discriminant(a) == core::mem::discriminant(b);
        if let Some(prev) = self.holes.iter().find(|h| h.name == name && !same_kind(&h.kind, &kind)) {
            return Err(SyntaxError::new(
                format!(
                    "parameter `${{{name}}}` is used both as a fraction and as a duration (first at {})",
                    prev.span
                ),
                span,
            ));
        }
        self.holes.push(Hole { name, node, kind, span });
        Ok(())
    }

    fn let_form(&mut self, id: usize) -> PResult<Protocol> {
        let (x, _) = self.binder()?;
        if self.peek().tok == Tok::Punct('=') {
            self.next();
            let bound = self.expr()?;
            self.keyword("in")?;
            let body = self.expr()?;
            return Ok(Protocol::Let {
                var: x,
                bound: Box::new(bound),
                body: Box::new(body),
            });
        }
        self.punct(',')?;
        let second = match &self.peek().tok {
            Tok::Ident(s) if s == "_" => {
                self.next();
                None
            }
            _ => Some(self.binder()?.0),
        };
        if second.as_ref() == Some(&x) {
            return Err(SyntaxError::new(
                format!("both dispense outputs are named `{x}`"),
                self.toks[self.pos - 1].span,
            ));
        }
        self.punct('=')?;
        self.keyword("Dispense")?;
        self.punct('(')?;
        let source = self.expr()?;
        self.punct(',')?;
        let (num, span) = self.hole_or_number()?;
        let fraction = match num {
            Ok(text) => {
                let p = scaled_number(&text, 0)
                    .ok_or_else(|| SyntaxError::new(format!("malformed number `{text}`"), span))?;
                if !(p > 0.0 && p < 1.0) {
                    return Err(SyntaxError::new(
                        format!("dispense fraction must lie strictly between 0 and 1, got {text}"),
                        span,
                    ));
                }
                p
            }
            Err(name) => {
                self.hole(name, id, HoleKind::Fraction, span)?;
                f64::NAN
            }
        };
        self.punct(')')?;
        self.keyword("in")?;
        let body = self.expr()?;
        Ok(Protocol::Dispense {
            first: x,
            second,
            source: Box::new(source),
            fraction,
            body: Box::new(body),
        })
    }

    fn sample(&mut self) -> PResult<Protocol> {
        self.punct('(')?;
        let open = self.punct('[')?;
        let n = self.crn.species_count();
        let mut conc = vec![0.0; n];
        let named = matches!(
            (&self.toks[self.pos].tok, &self.toks[self.pos + 1].tok),
            (Tok::Ident(_), Tok::Punct('='))
        );
        let mut k = 0;
        while self.peek().tok != Tok::Punct(']') {
            if k > 0 {
                self.punct(',')?;
            }
            if named {
                let t = self.next();
                let Tok::Ident(name) = &t.tok else {
                    return Err(SyntaxError::new(
                        format!("expected a species name, found {}", t.tok),
                        t.span,
                    ));
                };
                let i = self
                    .crn
                    .species_index(name)
                    .ok_or_else(|| SyntaxError::new(format!("unknown species `{name}`"), t.span))?;
                self.punct('=')?;
                conc[i] = self.quantity(Dimension::Concentration)?;
            } else {
                let span = self.peek().span;
                let v = self.quantity(Dimension::Concentration)?;
                if k >= n {
                    return Err(SyntaxError::new(format!("the network has only {n} species"), span));
                }
                conc[k] = v;
            }
            k += 1;
        }
        let close = self.next().span;
        if !named && k != 0 && k != n {
            return Err(SyntaxError::new(
                format!("concentration vector has {k} entries, the network has {n} species"),
                open.to(close),
            ));
        }
        self.punct(';')?;
        let volume = self.quantity(Dimension::Volume)?;
        self.punct(';')?;
        let temperature = self.quantity(Dimension::Temperature)?;
        let end = self.punct(')')?;
        let s = Sample::new(conc, volume, temperature).map_err(|e| SyntaxError::new(e.to_string(), open.to(end)))?;
        Ok(Protocol::Initial(s))
    }
}

fn run(text: &str, crn: &Crn, units: &UnitSystem, allow_holes: bool) -> Result<(Parsed, Vec<Hole>), SyntaxError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
        crn,
        units,
        spans: Vec::new(),
        holes: Vec::new(),
        allow_holes,
    };
    let protocol = p.expr()?;
    if p.peek().tok != Tok::Eof {
        return p.unexpected("end of input");
    }
    Ok((
        Parsed {
            protocol,
            spans: p.spans,
        },
        p.holes,
    ))
}

/// Parse a protocol whose sample literals refer to `crn`'s species.
/// Unitless concentrations are in the network's unit.
pub fn parse_protocol(text: &str, crn: &Crn, units: &UnitSystem) -> Result<Parsed, SyntaxError> {
    run(text, crn, units, false).map(|(p, _)| p)
}

pub fn parse_template(text: &str, crn: &Crn, units: &UnitSystem) -> Result<Template, SyntaxError> {
    let (parsed, holes) = run(text, crn, units, true)?;
    Ok(Template { parsed, holes })
}

fn number(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e6).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Canonical text; parsing it back gives the same protocol. Concentrations
/// are written in the network's unit, volumes in L, times in s.
pub fn pretty_print(p: &Protocol, crn: &Crn, units: &UnitSystem) -> String {
    let mut out = String::new();
    write_expr(p, crn, units, 0, &mut out);
    out.push('\n');
    out
}

fn write_expr(p: &Protocol, crn: &Crn, units: &UnitSystem, indent: usize, out: &mut String) {
    match p {
        Protocol::Var(x) => out.push_str(x.as_str()),
        Protocol::Initial(s) => {
            out.push_str("sample([");
            let mut first = true;
            for (sp, c) in crn.species().iter().zip(&s.conc) {
                if *c != 0.0 {
                    if !first {
                        out.push_str(", ");
                    }
                    first = false;
                    out.push_str(&format!("{} = {} {}", sp.name, number(*c), units.concentration));
                }
            }
            out.push_str(&format!("]; {} L; {} K)", number(s.volume), number(s.temperature)));
        }
        Protocol::Mix(a, b) => {
            out.push_str("Mix(");
            write_expr(a, crn, units, indent, out);
            out.push_str(", ");
            write_expr(b, crn, units, indent, out);
            out.push(')');
        }
        Protocol::Let { var, bound, body } => {
            out.push_str(&format!("let {var} = "));
            write_expr(bound, crn, units, indent + 1, out);
            out.push_str(" in\n");
            out.push_str(&"  ".repeat(indent));
            write_expr(body, crn, units, indent, out);
        }
        Protocol::Dispense {
            first,
            second,
            source,
            fraction,
            body,
        } => {
            let second = second.as_ref().map_or("_", |s| s.as_str());
            out.push_str(&format!("let {first}, {second} = Dispense("));
            write_expr(source, crn, units, indent + 1, out);
            out.push_str(&format!(", {}) in\n", number(*fraction)));
            out.push_str(&"  ".repeat(indent));
            write_expr(body, crn, units, indent, out);
        }
        Protocol::Equilibrate(q, t) => {
            out.push_str("Equilibrate(");
            write_expr(q, crn, units, indent, out);
            out.push_str(&format!(", {} s)", number(*t)));
        }
        Protocol::Dispose(q) => {
            out.push_str("Dispose(");
            write_expr(q, crn, units, indent, out);
            out.push(')');
        }
        Protocol::Observe(q, idn) => {
            out.push_str("Observe(");
            write_expr(q, crn, units, indent, out);
            out.push_str(&format!(", {idn})"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crn_format::parse_crn;

    fn titration_crn() -> (Crn, UnitSystem) {
        let f = parse_crn("units: M, s\nH+ + Cl- + Na+ + OH- ->{2.81e-10} Na+ + Cl- + H2O\n").unwrap();
        (f.crn, f.units)
    }

    const TITRATION: &str = "
        let A = sample([H+ = 0.1 M, Cl- = 0.1 M]; 1.0 mL; 298.15 K) in
        let B = sample([Na+ = 0.1 M, OH- = 0.1 M]; 1.0 mL; 298.15 K) in
        let a, _ = Dispense(A, 0.5) in
        let b, _ = Dispense(B, 0.5) in
        Equilibrate(Mix(a, b), 10000 s)";

    #[test]
    fn named_sample_literal() {
        let (crn, u) = titration_crn();
        let p = parse_protocol(TITRATION, &crn, &u).unwrap().protocol;
        let Protocol::Let { bound, .. } = &p else { panic!() };
        let Protocol::Initial(s) = bound.as_ref() else { panic!() };
        assert_eq!(s.conc, vec![0.1, 0.1, 0.0, 0.0, 0.0]);
        assert_eq!(s.volume, 1e-3);
        assert_eq!(s.temperature, 298.15);
    }

    #[test]
    fn raw_vector_and_units() {
        let (crn, u) = titration_crn();
        let p = parse_protocol("sample([100 nM, 0, 0, 0, 0]; 0.1 mL; 298.15 K)", &crn, &u).unwrap();
        let Protocol::Initial(s) = p.protocol else { panic!() };
        assert_eq!(s.conc[0], 1e-7);
        assert_eq!(s.volume, 1e-4);
        let p = parse_protocol("Equilibrate(x, 3000 s)", &crn, &u).unwrap().protocol;
        assert_eq!(p, Protocol::equilibrate(Protocol::var("x"), 3000.0));
        let p = parse_protocol("Equilibrate(x, 2 min)", &crn, &u).unwrap().protocol;
        assert_eq!(p, Protocol::equilibrate(Protocol::var("x"), 120.0));
    }

    #[test]
    fn errors_carry_spans() {
        let (crn, u) = titration_crn();
        let text = "Mix(a";
        let e = parse_protocol(text, &crn, &u).unwrap_err();
        assert_eq!(e.span.start, text.len());
        assert!(e.message.contains("end of input"));
        for bad in [
            "sample([Xe = 1 M]; 1 L; 300 K)",
            "sample([H+ = 1 L]; 1 L; 300 K)",
            "let a, b = Dispense(x, 1.5) in Mix(a, b)",
            "let a, b = Dispense(x, 0) in Mix(a, b)",
            "Equilibrate(x, ${t})",
            "let Mix = x in Mix",
            "Observe(x, 1.5)",
        ] {
            let e = parse_protocol(bad, &crn, &u).unwrap_err();
            assert!(e.span.end <= bad.len() && e.span.start <= e.span.end, "{bad}: {e}");
        }
    }

    #[test]
    fn node_spans_follow_preorder() {
        let (crn, u) = titration_crn();
        let text = "Mix(a, Dispose(b))";
        let p = parse_protocol(text, &crn, &u).unwrap();
        let covered: Vec<&str> = p.spans.iter().map(|s| &text[s.start..s.end]).collect();
        assert_eq!(covered, vec![text, "a", "Dispose(b)", "b"]);
    }

    #[test]
    fn round_trips() {
        let (crn, u) = titration_crn();
        let p = parse_protocol(TITRATION, &crn, &u).unwrap().protocol;
        let text = pretty_print(&p, &crn, &u);
        assert_eq!(parse_protocol(&text, &crn, &u).unwrap().protocol, p);
        let tiny = Protocol::Initial(Sample::new(vec![1e-30, 0.0, 0.0, 0.0, 7.5e12], 1e-30, 298.15).unwrap());
        let text = pretty_print(&tiny, &crn, &u);
        assert!(text.contains("1e-30"));
        assert_eq!(parse_protocol(&text, &crn, &u).unwrap().protocol, tiny);
    }

    #[test]
    fn templates() {
        let (crn, u) = titration_crn();
        let t = parse_template("let a, _ = Dispense(x, ${p}) in Equilibrate(a, ${t} min)", &crn, &u).unwrap();
        assert_eq!(t.names(), vec!["p", "t"]);
        let vals = BTreeMap::from([("p".to_string(), 0.25), ("t".to_string(), 2.0)]);
        let p = t.instantiate(&vals).unwrap();
        assert_eq!(
            p,
            Protocol::dispense_discard(
                "a",
                Protocol::var("x"),
                0.25,
                Protocol::equilibrate(Protocol::var("a"), 120.0)
            )
        );
        let bad = BTreeMap::from([("p".to_string(), 1.25), ("t".to_string(), 2.0)]);
        assert!(matches!(t.instantiate(&bad), Err(TemplateError::Mismatch { .. })));
        let missing = BTreeMap::from([("p".to_string(), 0.5)]);
        assert_eq!(t.instantiate(&missing), Err(TemplateError::Unbound("t".into())));
        assert!(parse_template("let a, _ = Dispense(x, ${p}) in Equilibrate(a, ${p} s)", &crn, &u).is_err());
        assert!(parse_template("sample([H+ = ${c}]; 1 L; 1 K)", &crn, &u).is_err());
    }
}
