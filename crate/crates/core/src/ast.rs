//! Protocol syntax: substitution, free variables, renaming, linearity and
//! desugaring of the discard form of `Dispense`.

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sample::Sample;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VarName(String);

impl VarName {
    /// Checked constructor: `[A-Za-z_][A-Za-z0-9_+-]*`, and not `_` alone.
    pub fn new(name: &str) -> Option<VarName> {
        is_identifier(name).then(|| VarName(name.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    name != "_" && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '+' | '-'))
}

impl From<&str> for VarName {
    /// Unchecked; use [`VarName::new`] for untrusted input.
    fn from(s: &str) -> Self {
        VarName(s.to_string())
    }
}

impl fmt::Display for VarName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Protocol {
    Var(VarName),
    Initial(Sample),
    Mix(Box<Protocol>, Box<Protocol>),
    Let {
        var: VarName,
        bound: Box<Protocol>,
        body: Box<Protocol>,
    },
    /// `let first, second = Dispense(source, fraction) in body`.
    /// `second == None` is the discard form `let first, _ = ...`.
    Dispense {
        first: VarName,
        second: Option<VarName>,
        source: Box<Protocol>,
        fraction: f64,
        body: Box<Protocol>,
    },
    Equilibrate(Box<Protocol>, f64),
    Dispose(Box<Protocol>),
    Observe(Box<Protocol>, u64),
}

impl Protocol {
    pub fn var(name: &str) -> Protocol {
        Protocol::Var(name.into())
    }

    pub fn mix(a: Protocol, b: Protocol) -> Protocol {
        Protocol::Mix(Box::new(a), Box::new(b))
    }

    pub fn let_in(var: &str, bound: Protocol, body: Protocol) -> Protocol {
        Protocol::Let {
            var: var.into(),
            bound: Box::new(bound),
            body: Box::new(body),
        }
    }

    pub fn dispense(first: &str, second: &str, source: Protocol, fraction: f64, body: Protocol) -> Protocol {
        Protocol::Dispense {
            first: first.into(),
            second: Some(second.into()),
            source: Box::new(source),
            fraction,
            body: Box::new(body),
        }
    }

    pub fn dispense_discard(first: &str, source: Protocol, fraction: f64, body: Protocol) -> Protocol {
        Protocol::Dispense {
            first: first.into(),
            second: None,
            source: Box::new(source),
            fraction,
            body: Box::new(body),
        }
    }

    pub fn equilibrate(p: Protocol, t: f64) -> Protocol {
        Protocol::Equilibrate(Box::new(p), t)
    }

    pub fn dispose(p: Protocol) -> Protocol {
        Protocol::Dispose(Box::new(p))
    }

    pub fn observe(p: Protocol, idn: u64) -> Protocol {
        Protocol::Observe(Box::new(p), idn)
    }

    /// Children in pre-order (evaluation) order.
    pub fn children(&self) -> Vec<&Protocol> {
        match self {
            Protocol::Var(_) | Protocol::Initial(_) => Vec::new(),
            Protocol::Mix(a, b) => alloc::vec![a, b],
            Protocol::Let { bound, body, .. } => alloc::vec![bound, body],
            Protocol::Dispense { source, body, .. } => alloc::vec![source, body],
            Protocol::Equilibrate(p, _) | Protocol::Dispose(p) | Protocol::Observe(p, _) => {
                alloc::vec![p]
            }
        }
    }

    fn children_mut(&mut self) -> Vec<&mut Protocol> {
        match self {
            Protocol::Var(_) | Protocol::Initial(_) => Vec::new(),
            Protocol::Mix(a, b) => alloc::vec![a, b],
            Protocol::Let { bound, body, .. } => alloc::vec![bound, body],
            Protocol::Dispense { source, body, .. } => alloc::vec![source, body],
            Protocol::Equilibrate(p, _) | Protocol::Dispose(p) | Protocol::Observe(p, _) => {
                alloc::vec![p]
            }
        }
    }

    /// Number of nodes.
    pub fn size(&self) -> usize {
        1 + self.children().iter().map(|c| c.size()).sum::<usize>()
    }

    /// Whether any discard-form `Dispense` remains.
    pub fn has_sugar(&self) -> bool {
        matches!(self, Protocol::Dispense { second: None, .. }) || self.children().iter().any(|c| c.has_sugar())
    }

    /// Visit every node in pre-order with its id.
    pub fn for_each_node<'a>(&'a self, f: &mut dyn FnMut(usize, &'a Protocol)) {
        fn go<'a>(p: &'a Protocol, next: &mut usize, f: &mut dyn FnMut(usize, &'a Protocol)) {
            let id = *next;
            *next += 1;
            f(id, p);
            for c in p.children() {
                go(c, next, f);
            }
        }
        let mut next = 0;
        go(self, &mut next, f);
    }

    /// Every variable name appearing anywhere, bound or free.
    pub fn all_names(&self) -> BTreeSet<VarName> {
        let mut out = BTreeSet::new();
        self.for_each_node(&mut |_, p| match p {
            Protocol::Var(x) => {
                out.insert(x.clone());
            }
            Protocol::Let { var, .. } => {
                out.insert(var.clone());
            }
            Protocol::Dispense { first, second, .. } => {
                out.insert(first.clone());
                if let Some(s) = second {
                    out.insert(s.clone());
                }
            }
            _ => {}
        });
        out
    }

    /// Names bound by this node (empty unless `Let` or `Dispense`).
    pub fn binders(&self) -> Vec<&VarName> {
        match self {
            Protocol::Let { var, .. } => alloc::vec![var],
            Protocol::Dispense { first, second, .. } => {
                let mut v = alloc::vec![first];
                if let Some(s) = second {
                    v.push(s);
                }
                v
            }
            _ => Vec::new(),
        }
    }
}

pub fn free_vars(p: &Protocol) -> BTreeSet<VarName> {
    let mut out = BTreeSet::new();
    collect_free(p, &mut Vec::new(), &mut out);
    out
}

fn collect_free<'a>(p: &'a Protocol, bound: &mut Vec<&'a VarName>, out: &mut BTreeSet<VarName>) {
    match p {
        Protocol::Var(x) => {
            if !bound.contains(&x) {
                out.insert(x.clone());
            }
        }
        Protocol::Initial(_) => {}
        Protocol::Mix(a, b) => {
            collect_free(a, bound, out);
            collect_free(b, bound, out);
        }
        Protocol::Let { var, bound: p1, body } => {
            collect_free(p1, bound, out);
            bound.push(var);
            collect_free(body, bound, out);
            bound.pop();
        }
        Protocol::Dispense {
            first,
            second,
            source,
            body,
            ..
        } => {
            collect_free(source, bound, out);
            bound.push(first);
            if let Some(s) = second {
                bound.push(s);
            }
            collect_free(body, bound, out);
            bound.pop();
            if second.is_some() {
                bound.pop();
            }
        }
        Protocol::Equilibrate(q, _) | Protocol::Dispose(q) | Protocol::Observe(q, _) => collect_free(q, bound, out),
    }
}

/// Number of free occurrences of `x` in `p`.
pub fn count_free(p: &Protocol, x: &VarName) -> usize {
    match p {
        Protocol::Var(y) => usize::from(y == x),
        Protocol::Initial(_) => 0,
        Protocol::Mix(a, b) => count_free(a, x) + count_free(b, x),
        Protocol::Let { var, bound, body } => count_free(bound, x) + if var == x { 0 } else { count_free(body, x) },
        Protocol::Dispense {
            first,
            second,
            source,
            body,
            ..
        } => {
            let shadowed = first == x || second.as_ref() == Some(x);
            count_free(source, x) + if shadowed { 0 } else { count_free(body, x) }
        }
        Protocol::Equilibrate(q, _) | Protocol::Dispose(q) | Protocol::Observe(q, _) => count_free(q, x),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AstError {
    #[error("substituting for `{var}` would capture `{binder}`")]
    Capture { var: VarName, binder: VarName },
    #[error("`{fresh}` is not fresh for the renamed binder")]
    NotFresh { fresh: VarName },
    #[error("no binder at the given path")]
    NoBinder,
}

/// Capture-avoiding substitution `p2{x ← p1}`.
///
/// Fails rather than renaming when a binder `y ≠ x` encountered on the way
/// is free in `p1`.
pub fn substitute(p2: &Protocol, x: &VarName, p1: &Protocol) -> Result<Protocol, AstError> {
    let fv = free_vars(p1);
    subst(p2, x, p1, &fv)
}

fn subst(p: &Protocol, x: &VarName, p3: &Protocol, fv: &BTreeSet<VarName>) -> Result<Protocol, AstError> {
    let capture = |binder: &VarName| -> Result<(), AstError> {
        if fv.contains(binder) {
            Err(AstError::Capture {
                var: x.clone(),
                binder: binder.clone(),
            })
        } else {
            Ok(())
        }
    };
    Ok(match p {
        Protocol::Var(y) if y == x => p3.clone(),
        Protocol::Var(_) | Protocol::Initial(_) => p.clone(),
        Protocol::Mix(a, b) => Protocol::Mix(Box::new(subst(a, x, p3, fv)?), Box::new(subst(b, x, p3, fv)?)),
        Protocol::Let { var, bound, body } => {
            let bound = Box::new(subst(bound, x, p3, fv)?);
            let body = if var == x {
                body.clone()
            } else {
                capture(var)?;
                Box::new(subst(body, x, p3, fv)?)
            };
            Protocol::Let {
                var: var.clone(),
                bound,
                body,
            }
        }
        Protocol::Dispense {
            first,
            second,
            source,
            fraction,
            body,
        } => {
            let source = Box::new(subst(source, x, p3, fv)?);
            let body = if first == x || second.as_ref() == Some(x) {
                body.clone()
            } else {
                capture(first)?;
                if let Some(s) = second {
                    capture(s)?;
                }
                Box::new(subst(body, x, p3, fv)?)
            };
            Protocol::Dispense {
                first: first.clone(),
                second: second.clone(),
                source,
                fraction: *fraction,
                body,
            }
        }
        Protocol::Equilibrate(q, t) => Protocol::Equilibrate(Box::new(subst(q, x, p3, fv)?), *t),
        Protocol::Dispose(q) => Protocol::Dispose(Box::new(subst(q, x, p3, fv)?)),
        Protocol::Observe(q, idn) => Protocol::Observe(Box::new(subst(q, x, p3, fv)?), *idn),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinderSlot {
    First,
    Second,
}

/// A binder addressed by child indices from the root (see
/// [`Protocol::children`]) and, for `Dispense`, which of its two names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinderRef {
    pub path: Vec<usize>,
    pub slot: BinderSlot,
}

impl BinderRef {
    pub fn root() -> Self {
        BinderRef {
            path: Vec::new(),
            slot: BinderSlot::First,
        }
    }
}

/// Rename one binder and its bound occurrences to `fresh`.
pub fn alpha_rename(p: &Protocol, at: &BinderRef, fresh: &VarName) -> Result<Protocol, AstError> {
    let mut out = p.clone();
    let mut node = &mut out;
    for &i in &at.path {
        node = node.children_mut().into_iter().nth(i).ok_or(AstError::NoBinder)?;
    }
    let not_fresh = || AstError::NotFresh { fresh: fresh.clone() };
    let target = Protocol::Var(fresh.clone());
    match node {
        Protocol::Let { var, body, .. } => {
            if fresh != var && free_vars(body).contains(fresh) {
                return Err(not_fresh());
            }
            **body = substitute(body, var, &target).map_err(|_| not_fresh())?;
            *var = fresh.clone();
        }
        Protocol::Dispense {
            first, second, body, ..
        } => {
            let (name, other) = match at.slot {
                BinderSlot::First => (first, second.as_ref()),
                BinderSlot::Second => match second {
                    Some(s) => (s, Some(&*first)),
                    None => return Err(AstError::NoBinder),
                },
            };
            if other == Some(fresh) || (fresh != name && free_vars(body).contains(fresh)) {
                return Err(not_fresh());
            }
            **body = substitute(body, name, &target).map_err(|_| not_fresh())?;
            *name = fresh.clone();
        }
        _ => return Err(AstError::NoBinder),
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// A `let`-bound name not used exactly once.
    Let,
    /// A `Dispense`-bound name not used exactly once.
    Dispense,
    /// A free name in a protocol that must be closed.
    Unbound,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub var: VarName,
    pub kind: ViolationKind,
    pub count: usize,
    /// Pre-order id of the binding node, or of the first free occurrence.
    pub node: usize,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ViolationKind::Unbound => write!(f, "variable `{}` is unbound", self.var),
            _ => write!(
                f,
                "variable `{}` must be used exactly once, found {} uses",
                self.var, self.count
            ),
        }
    }
}

/// Linearity and closedness diagnostics; empty when the protocol is fine.
pub fn check_linear(p: &Protocol) -> Vec<Violation> {
    let mut out = Vec::new();
    p.for_each_node(&mut |id, node| match node {
        Protocol::Let { var, body, .. } => {
            let count = count_free(body, var);
            if count != 1 {
                out.push(Violation {
                    var: var.clone(),
                    kind: ViolationKind::Let,
                    count,
                    node: id,
                });
            }
        }
        Protocol::Dispense {
            first, second, body, ..
        } => {
            for name in core::iter::once(first).chain(second.as_ref()) {
                let count = count_free(body, name);
                if count != 1 {
                    out.push(Violation {
                        var: name.clone(),
                        kind: ViolationKind::Dispense,
                        count,
                        node: id,
                    });
                }
            }
        }
        _ => {}
    });
    for var in free_vars(p) {
        let mut first = None;
        let mut count = 0;
        free_occurrences(p, &var, 0, &mut |id| {
            first.get_or_insert(id);
            count += 1;
        });
        out.push(Violation {
            var,
            kind: ViolationKind::Unbound,
            count,
            node: first.unwrap_or(0),
        });
    }
    out.sort_by_key(|v| v.node);
    out
}

/// Pre-order ids of the free occurrences of `x`. Returns the next id.
fn free_occurrences(p: &Protocol, x: &VarName, id: usize, f: &mut dyn FnMut(usize)) -> usize {
    if let Protocol::Var(y) = p {
        if y == x {
            f(id);
        }
        return id + 1;
    }
    let shadow_body = p.binders().contains(&x);
    let mut next = id + 1;
    for (i, c) in p.children().into_iter().enumerate() {
        let is_body = matches!(p, Protocol::Let { .. } | Protocol::Dispense { .. }) && i == 1;
        if is_body && shadow_body {
            next += c.size();
        } else {
            next = free_occurrences(c, x, next, f);
        }
    }
    next
}

/// Generator of names not present in a protocol.
pub struct FreshNames {
    used: BTreeSet<VarName>,
    counter: usize,
}

impl FreshNames {
    pub fn for_protocol(p: &Protocol) -> Self {
        FreshNames {
            used: p.all_names(),
            counter: 0,
        }
    }

    /// `stem` followed by the next counter value not yet in use.
    pub fn next(&mut self, stem: &str) -> VarName {
        loop {
            let name = VarName(format!("{stem}{}", self.counter));
            self.counter += 1;
            if self.used.insert(name.clone()) {
                return name;
            }
        }
    }
}

/// Expand every discard-form `Dispense` (innermost first):
///
/// `let x,_ = Dispense(P1,p) in P2` becomes
/// `let x,y = Dispense(P1,p) in let x' = Mix(Dispose(y), x) in P2{x ← x'}`.
pub fn desugar(p: &Protocol) -> Result<Protocol, AstError> {
    if !p.has_sugar() {
        return Ok(p.clone());
    }
    let mut names = FreshNames::for_protocol(p);
    expand(p, &mut names)
}

fn expand(p: &Protocol, names: &mut FreshNames) -> Result<Protocol, AstError> {
    Ok(match p {
        Protocol::Var(_) | Protocol::Initial(_) => p.clone(),
        Protocol::Mix(a, b) => Protocol::mix(expand(a, names)?, expand(b, names)?),
        Protocol::Let { var, bound, body } => Protocol::Let {
            var: var.clone(),
            bound: Box::new(expand(bound, names)?),
            body: Box::new(expand(body, names)?),
        },
        Protocol::Dispense {
            first,
            second,
            source,
            fraction,
            body,
        } => {
            let source = Box::new(expand(source, names)?);
            let body = expand(body, names)?;
            match second {
                Some(s) => Protocol::Dispense {
                    first: first.clone(),
                    second: Some(s.clone()),
                    source,
                    fraction: *fraction,
                    body: Box::new(body),
                },
                None => {
                    let y = names.next("y");
                    let x2 = names.next(first.as_str());
                    let renamed = substitute(&body, first, &Protocol::Var(x2.clone()))?;
                    let keep = Protocol::mix(
                        Protocol::dispose(Protocol::Var(y.clone())),
                        Protocol::Var(first.clone()),
                    );
                    Protocol::Dispense {
                        first: first.clone(),
                        second: Some(y),
                        source,
                        fraction: *fraction,
                        body: Box::new(Protocol::Let {
                            var: x2,
                            bound: Box::new(keep),
                            body: Box::new(renamed),
                        }),
                    }
                }
            }
        }
        Protocol::Equilibrate(q, t) => Protocol::equilibrate(expand(q, names)?, *t),
        Protocol::Dispose(q) => Protocol::dispose(expand(q, names)?),
        Protocol::Observe(q, idn) => Protocol::observe(expand(q, names)?, *idn),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn init(c: f64) -> Protocol {
        Protocol::Initial(Sample::new(vec![c], 1e-3, 298.15).unwrap())
    }

    fn names(v: &[&str]) -> BTreeSet<VarName> {
        v.iter().map(|s| VarName::from(*s)).collect()
    }

    #[test]
    fn identifiers() {
        assert!(is_identifier("H+"));
        assert!(is_identifier("Cl-"));
        assert!(is_identifier("_x1"));
        assert!(!is_identifier("_"));
        assert!(!is_identifier("1a"));
        assert!(!is_identifier(""));
    }

    #[test]
    fn free_var_examples() {
        let p = Protocol::mix(Protocol::var("a"), Protocol::var("b"));
        assert_eq!(free_vars(&p), names(&["a", "b"]));
        let p = Protocol::let_in(
            "x",
            Protocol::var("a"),
            Protocol::mix(Protocol::var("x"), Protocol::var("b")),
        );
        assert_eq!(free_vars(&p), names(&["a", "b"]));
        assert!(free_vars(&init(1.0)).is_empty());
        let p = Protocol::dispense(
            "x",
            "y",
            Protocol::var("s"),
            0.5,
            Protocol::mix(
                Protocol::var("x"),
                Protocol::mix(Protocol::var("y"), Protocol::var("z")),
            ),
        );
        assert_eq!(free_vars(&p), names(&["s", "z"]));
        assert_eq!(free_vars(&Protocol::observe(Protocol::var("q"), 3)), names(&["q"]));
    }

    #[test]
    fn substitution_examples() {
        let x = VarName::from("x");
        assert_eq!(substitute(&Protocol::var("x"), &x, &init(1.0)).unwrap(), init(1.0));
        let q = Protocol::var("q");
        assert_eq!(substitute(&Protocol::var("y"), &x, &q).unwrap(), Protocol::var("y"));
        let p = Protocol::let_in(
            "y",
            Protocol::var("x"),
            Protocol::mix(Protocol::var("y"), Protocol::var("x")),
        );
        assert_eq!(
            substitute(&p, &x, &Protocol::var("y")),
            Err(AstError::Capture {
                var: x.clone(),
                binder: "y".into()
            })
        );
        // shadowing: only the bound part is substituted
        let p = Protocol::let_in("x", Protocol::var("x"), Protocol::var("x"));
        let r = substitute(&p, &x, &init(2.0)).unwrap();
        assert_eq!(r, Protocol::let_in("x", init(2.0), Protocol::var("x")));
    }

    #[test]
    fn rename_examples() {
        let p = Protocol::let_in("x", init(1.0), Protocol::var("x"));
        let r = alpha_rename(&p, &BinderRef::root(), &"y".into()).unwrap();
        assert_eq!(r, Protocol::let_in("y", init(1.0), Protocol::var("y")));

        let p = Protocol::let_in("x", init(1.0), Protocol::mix(Protocol::var("x"), Protocol::var("a")));
        assert!(matches!(
            alpha_rename(&p, &BinderRef::root(), &"a".into()),
            Err(AstError::NotFresh { .. })
        ));

        let p = Protocol::dispense(
            "x",
            "y",
            init(1.0),
            0.5,
            Protocol::mix(Protocol::var("x"), Protocol::var("y")),
        );
        let r = alpha_rename(&p, &BinderRef::root(), &"z".into()).unwrap();
        let expected = Protocol::dispense(
            "z",
            "y",
            init(1.0),
            0.5,
            Protocol::mix(Protocol::var("z"), Protocol::var("y")),
        );
        assert_eq!(r, expected);
        let second = BinderRef {
            path: vec![],
            slot: BinderSlot::Second,
        };
        assert!(alpha_rename(&p, &second, &"x".into()).is_err());
        assert_eq!(
            alpha_rename(&init(1.0), &BinderRef::root(), &"z".into()),
            Err(AstError::NoBinder)
        );
    }

    #[test]
    fn linearity_examples() {
        let p = Protocol::let_in("x", init(1.0), Protocol::mix(Protocol::var("x"), Protocol::var("x")));
        let v = check_linear(&p);
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].var.as_str(), v[0].count), ("x", 2));

        let p = Protocol::let_in("x", init(1.0), Protocol::dispose(init(2.0)));
        let v = check_linear(&p);
        assert_eq!((v[0].var.as_str(), v[0].count), ("x", 0));

        let p = Protocol::mix(init(1.0), Protocol::var("free"));
        let v = check_linear(&p);
        assert_eq!(v[0].kind, ViolationKind::Unbound);
        assert_eq!(v[0].node, 2);
    }

    fn titration() -> Protocol {
        Protocol::let_in(
            "A",
            init(0.1),
            Protocol::let_in(
                "B",
                init(0.2),
                Protocol::dispense_discard(
                    "a",
                    Protocol::var("A"),
                    0.5,
                    Protocol::dispense_discard(
                        "b",
                        Protocol::var("B"),
                        0.5,
                        Protocol::equilibrate(Protocol::mix(Protocol::var("a"), Protocol::var("b")), 10.0),
                    ),
                ),
            ),
        )
    }

    #[test]
    fn titration_is_linear() {
        assert!(check_linear(&titration()).is_empty());
        assert!(check_linear(&desugar(&titration()).unwrap()).is_empty());
    }

    #[test]
    fn desugar_single() {
        let p = Protocol::dispense_discard("a", Protocol::var("A"), 0.3, Protocol::var("a"));
        let expected = Protocol::dispense(
            "a",
            "y0",
            Protocol::var("A"),
            0.3,
            Protocol::let_in(
                "a1",
                Protocol::mix(Protocol::dispose(Protocol::var("y0")), Protocol::var("a")),
                Protocol::var("a1"),
            ),
        );
        assert_eq!(desugar(&p).unwrap(), expected);
        assert_eq!(desugar(&expected).unwrap(), expected);
    }

    #[test]
    fn desugar_nested_innermost_first() {
        let p = titration();
        let d = desugar(&p).unwrap();
        let keep = |y: &str, x: &str| Protocol::mix(Protocol::dispose(Protocol::var(y)), Protocol::var(x));
        let expected = Protocol::let_in(
            "A",
            init(0.1),
            Protocol::let_in(
                "B",
                init(0.2),
                Protocol::dispense(
                    "a",
                    "y2",
                    Protocol::var("A"),
                    0.5,
                    Protocol::let_in(
                        "a3",
                        keep("y2", "a"),
                        Protocol::dispense(
                            "b",
                            "y0",
                            Protocol::var("B"),
                            0.5,
                            Protocol::let_in(
                                "b1",
                                keep("y0", "b"),
                                Protocol::equilibrate(Protocol::mix(Protocol::var("a3"), Protocol::var("b1")), 10.0),
                            ),
                        ),
                    ),
                ),
            ),
        );
        assert_eq!(d, expected);
    }

    #[test]
    fn desugar_sugar_in_source() {
        let inner = Protocol::dispense_discard("u", init(1.0), 0.5, Protocol::var("u"));
        let p = Protocol::dispense_discard("v", inner, 0.25, Protocol::observe(Protocol::var("v"), 1));
        let d = desugar(&p).unwrap();
        let keep = |y: &str, x: &str| Protocol::mix(Protocol::dispose(Protocol::var(y)), Protocol::var(x));
        let expected = Protocol::dispense(
            "v",
            "y2",
            Protocol::dispense(
                "u",
                "y0",
                init(1.0),
                0.5,
                Protocol::let_in("u1", keep("y0", "u"), Protocol::var("u1")),
            ),
            0.25,
            Protocol::let_in("v3", keep("y2", "v"), Protocol::observe(Protocol::var("v3"), 1)),
        );
        assert_eq!(d, expected);
        assert!(check_linear(&d).is_empty());
    }

    fn arb_protocol() -> impl Strategy<Value = Protocol> {
        let leaf = prop_oneof![
            prop::sample::select(vec!["a", "b", "x", "y"]).prop_map(Protocol::var),
            (0.0f64..1.0).prop_map(init),
        ];
        leaf.prop_recursive(5, 40, 2, |inner| {
            let name = prop::sample::select(vec!["a", "b", "x", "y"]);
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Protocol::mix(a, b)),
                (name.clone(), inner.clone(), inner.clone()).prop_map(|(n, a, b)| Protocol::let_in(n, a, b)),
                (name.clone(), name, inner.clone(), inner.clone())
                    .prop_map(|(n, m, a, b)| Protocol::dispense(n, m, a, 0.5, b)),
                (inner.clone(), 0.0f64..10.0).prop_map(|(a, t)| Protocol::equilibrate(a, t)),
                inner.clone().prop_map(Protocol::dispose),
                (inner, 0u64..3).prop_map(|(a, i)| Protocol::observe(a, i)),
            ]
        })
    }

    fn binds(p: &Protocol, x: &VarName) -> bool {
        let mut found = false;
        p.for_each_node(&mut |_, n| found |= n.binders().contains(&x));
        found
    }

    proptest! {
        #[test]
        fn substitution_identity(p in arb_protocol()) {
            let x = VarName::from("x");
            prop_assume!(!binds(&p, &x));
            prop_assert_eq!(substitute(&p, &x, &Protocol::var("x")).unwrap(), p);
        }

        #[test]
        fn substitution_free_vars(p2 in arb_protocol(), p1 in arb_protocol()) {
            let x = VarName::from("x");
            prop_assume!(free_vars(&p2).contains(&x));
            if let Ok(r) = substitute(&p2, &x, &p1) {
                let mut expected = free_vars(&p2);
                expected.remove(&x);
                expected.extend(free_vars(&p1));
                prop_assert_eq!(free_vars(&r), expected);
            }
        }

        #[test]
        fn rename_preserves_free_vars(p in arb_protocol(), a in arb_protocol()) {
            let p = Protocol::let_in("x", a, p);
            let fresh = VarName::from("fresh");
            let r = alpha_rename(&p, &BinderRef::root(), &fresh);
            if let Ok(r) = r {
                prop_assert_eq!(free_vars(&r), free_vars(&p));
            }
        }
    }
}
