//! Tree-like logical functions of one free variable.
//!
//! `Chain(r, f)` holds at `e` when some `z` satisfies `f(z) ∧ r(z, e)`. This
//! matches the propagation `vᵀA_r` used everywhere else, so a reverse
//! relation `r′` reads as `r(e, z)`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Formula {
    True,
    Chain(usize, Box<Formula>),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn chain(relation: usize, inner: Formula) -> Self {
        Formula::Chain(relation, Box::new(inner))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(inner: Formula) -> Self {
        Formula::Not(Box::new(inner))
    }

    pub fn and(a: Formula, b: Formula) -> Self {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Self {
        Formula::Or(Box::new(a), Box::new(b))
    }

    /// Number of nodes.
    pub fn size(&self) -> usize {
        match self {
            Formula::True => 1,
            Formula::Chain(_, f) | Formula::Not(f) => 1 + f.size(),
            Formula::And(a, b) | Formula::Or(a, b) => 1 + a.size() + b.size(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Formula::True => 0,
            Formula::Chain(_, f) | Formula::Not(f) => 1 + f.depth(),
            Formula::And(a, b) | Formula::Or(a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    pub fn has_negation(&self) -> bool {
        match self {
            Formula::True => false,
            Formula::Not(_) => true,
            Formula::Chain(_, f) => f.has_negation(),
            Formula::And(a, b) | Formula::Or(a, b) => a.has_negation() || b.has_negation(),
        }
    }

    /// Relations mentioned anywhere in the tree.
    pub fn relations(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_relations(&mut out);
        out
    }

    fn collect_relations(&self, out: &mut Vec<usize>) {
        match self {
            Formula::True => {}
            Formula::Chain(r, f) => {
                out.push(*r);
                f.collect_relations(out);
            }
            Formula::Not(f) => f.collect_relations(out),
            Formula::And(a, b) | Formula::Or(a, b) => {
                a.collect_relations(out);
                b.collect_relations(out);
            }
        }
    }

    /// Same formula with the children of every `∧`/`∨` in sorted order, so
    /// that formulas equal up to commutativity compare equal.
    pub fn canonical(&self) -> Formula {
        match self {
            Formula::True => Formula::True,
            Formula::Chain(r, f) => Formula::chain(*r, f.canonical()),
            Formula::Not(f) => Formula::not(f.canonical()),
            Formula::And(a, b) => {
                let (a, b) = ordered(a.canonical(), b.canonical());
                Formula::and(a, b)
            }
            Formula::Or(a, b) => {
                let (a, b) = ordered(a.canonical(), b.canonical());
                Formula::or(a, b)
            }
        }
    }
}

fn ordered(a: Formula, b: Formula) -> (Formula, Formula) {
    if b < a {
        (b, a)
    } else {
        (a, b)
    }
}

/// Relation names with the id layout of the graph: raw relations, then their
/// reverses, then the identity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationVocab {
    names: Vec<String>,
    num_raw: usize,
}

impl RelationVocab {
    /// `names` must hold `2R + 1` entries.
    pub fn new(names: Vec<String>) -> Self {
        assert!(names.len() % 2 == 1, "relation names must cover raw, reverse and identity");
        let num_raw = (names.len() - 1) / 2;
        RelationVocab { names, num_raw }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn num_raw(&self) -> usize {
        self.num_raw
    }

    pub fn identity(&self) -> usize {
        2 * self.num_raw
    }

    pub fn name(&self, relation: usize) -> &str {
        &self.names[relation]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Renders `relation(a, b)`, spelled with the base relation and swapped
    /// arguments when `relation` is a reverse.
    pub fn atom(&self, relation: usize, a: &str, b: &str) -> String {
        if relation == self.identity() {
            format!("{a} = {b}")
        } else if relation >= self.num_raw {
            format!("{}({b},{a})", self.names[relation - self.num_raw])
        } else {
            format!("{}({a},{b})", self.names[relation])
        }
    }
}

pub fn subscript(i: usize) -> String {
    const DIGITS: [char; 10] = ['₀', '₁', '₂', '₃', '₄', '₅', '₆', '₇', '₈', '₉'];
    i.to_string()
        .chars()
        .map(|c| DIGITS[c.to_digit(10).unwrap() as usize])
        .collect()
}

/// Quantified variable number `i`, e.g. `z₂`.
pub fn var(i: usize) -> String {
    format!("z{}", subscript(i))
}

/// Renders `f` applied to the free variable `free`; bound variables are
/// numbered from `first_bound` by nesting depth.
pub fn render(f: &Formula, vocab: &RelationVocab, free: &str, first_bound: usize) -> String {
    let mut out = String::new();
    render_into(&mut out, f, vocab, free, first_bound);
    out
}

fn render_into(out: &mut String, f: &Formula, vocab: &RelationVocab, free: &str, next: usize) {
    match f {
        Formula::True => out.push_str("true"),
        Formula::Chain(r, inner) => render_chain(out, "∃", *r, inner, vocab, free, next),
        Formula::Not(inner) => match inner.as_ref() {
            Formula::Chain(r, body) => render_chain(out, "∄", *r, body, vocab, free, next),
            other => {
                out.push('¬');
                render_operand(out, other, vocab, free, next);
            }
        },
        Formula::And(a, b) => render_binary(out, " ∧ ", a, b, vocab, free, next),
        Formula::Or(a, b) => render_binary(out, " ∨ ", a, b, vocab, free, next),
    }
}

fn render_chain(
    out: &mut String,
    quantifier: &str,
    relation: usize,
    inner: &Formula,
    vocab: &RelationVocab,
    free: &str,
    next: usize,
) {
    let z = var(next);
    write!(out, "{quantifier}{z}: ").unwrap();
    if *inner != Formula::True {
        render_operand(out, inner, vocab, &z, next + 1);
        out.push_str(" ∧ ");
    }
    out.push_str(&vocab.atom(relation, &z, free));
}

fn render_binary(
    out: &mut String,
    sep: &str,
    a: &Formula,
    b: &Formula,
    vocab: &RelationVocab,
    free: &str,
    next: usize,
) {
    render_operand(out, a, vocab, free, next);
    out.push_str(sep);
    render_operand(out, b, vocab, free, next);
}

/// `true` stays bare, everything else is parenthesized.
fn render_operand(out: &mut String, f: &Formula, vocab: &RelationVocab, free: &str, next: usize) {
    if *f == Formula::True {
        out.push_str("true");
    } else {
        out.push('(');
        render_into(out, f, vocab, free, next);
        out.push(')');
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> RelationVocab {
        RelationVocab::new(
            ["sister", "mother", "sister_inv", "mother_inv", "<identity>"]
                .map(String::from)
                .to_vec(),
        )
    }

    #[test]
    fn render_examples() {
        let v = vocab();
        assert_eq!(render(&Formula::True, &v, "e", 1), "true");
        let f = Formula::chain(0, Formula::True);
        assert_eq!(render(&f, &v, "e", 1), "∃z₁: sister(z₁,e)");
        let f = Formula::not(Formula::chain(2, Formula::True));
        assert_eq!(render(&f, &v, "e", 1), "∄z₁: sister(e,z₁)");
        let f = Formula::and(Formula::chain(0, Formula::True), Formula::chain(1, Formula::True));
        assert_eq!(render(&f, &v, "e", 1), "(∃z₁: sister(z₁,e)) ∧ (∃z₁: mother(z₁,e))");
        let f = Formula::chain(1, Formula::chain(3, Formula::True));
        assert_eq!(render(&f, &v, "x", 2), "∃z₂: (∃z₃: mother(z₂,z₃)) ∧ mother(z₂,x)");
        assert_eq!(render(&Formula::not(Formula::True), &v, "e", 1), "¬true");
    }

    #[test]
    fn canonical_ignores_operand_order() {
        let a = Formula::chain(0, Formula::True);
        let b = Formula::not(Formula::chain(1, Formula::True));
        let x = Formula::or(a.clone(), Formula::and(b.clone(), a.clone()));
        let y = Formula::or(Formula::and(a.clone(), b.clone()), a.clone());
        assert_ne!(x, y);
        assert_eq!(x.canonical(), y.canonical());
    }

    #[test]
    fn sizes_and_flags() {
        let f = Formula::and(Formula::chain(0, Formula::True), Formula::not(Formula::True));
        assert_eq!(f.size(), 5);
        assert_eq!(f.depth(), 2);
        assert!(f.has_negation());
        assert_eq!(f.relations(), vec![0]);
    }

    #[test]
    fn subscripts() {
        assert_eq!(subscript(0), "₀");
        assert_eq!(subscript(12), "₁₂");
    }
}
