//! Rendered formulas parse back to the same tree. The parser lives here
//! because nothing else needs to read the rendered syntax.

use proptest::prelude::*;

use lerp::formula::{render, Formula, RelationVocab};

const RAW: [&str; 3] = ["mother", "sister", "son"];

fn vocab() -> RelationVocab {
    let mut names: Vec<String> = RAW.iter().map(|s| s.to_string()).collect();
    names.extend(RAW.iter().map(|s| format!("{s}_inv")));
    names.push("<identity>".into());
    RelationVocab::new(names)
}

struct Parser<'a> {
    rest: &'a str,
    vocab: &'a RelationVocab,
}

impl<'a> Parser<'a> {
    fn eat(&mut self, token: &str) -> bool {
        if let Some(r) = self.rest.strip_prefix(token) {
            self.rest = r;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, token: &str) {
        assert!(self.eat(token), "expected `{token}` at `{}`", self.rest);
    }

    fn ident(&mut self) -> &'a str {
        let end = self
            .rest
            .find(['(', ',', ')', ' ', ':'])
            .unwrap_or(self.rest.len());
        let (id, rest) = self.rest.split_at(end);
        self.rest = rest;
        id
    }

    fn formula(&mut self, free: &str) -> Formula {
        if self.eat("∃") {
            return self.quantified(free);
        }
        if self.eat("∄") {
            return Formula::not(self.quantified(free));
        }
        if self.eat("¬") {
            return Formula::not(self.operand(free));
        }
        let a = self.operand(free);
        if self.eat(" ∧ ") {
            Formula::and(a, self.operand(free))
        } else if self.eat(" ∨ ") {
            Formula::or(a, self.operand(free))
        } else {
            a
        }
    }

    fn operand(&mut self, free: &str) -> Formula {
        if self.eat("true") {
            return Formula::True;
        }
        self.expect("(");
        let f = self.formula(free);
        self.expect(")");
        f
    }

    fn quantified(&mut self, free: &str) -> Formula {
        let z = self.ident().to_owned();
        self.expect(": ");
        let inner = if self.rest.starts_with('(') {
            let f = self.operand(&z);
            self.expect(" ∧ ");
            f
        } else {
            Formula::True
        };
        Formula::chain(self.atom(&z, free), inner)
    }

    /// Relation id of the atom linking bound variable `z` to `free`.
    fn atom(&mut self, z: &str, free: &str) -> usize {
        let first = self.ident().to_owned();
        if self.eat(" = ") {
            let second = self.ident();
            assert_eq!((first.as_str(), second), (z, free));
            return self.vocab.identity();
        }
        self.expect("(");
        let a = self.ident().to_owned();
        self.expect(",");
        let b = self.ident().to_owned();
        self.expect(")");
        let base = RAW.iter().position(|r| *r == first).expect("known relation");
        if (a.as_str(), b.as_str()) == (z, free) {
            base
        } else {
            assert_eq!((a.as_str(), b.as_str()), (free, z));
            base + RAW.len()
        }
    }
}

fn parse(text: &str, vocab: &RelationVocab, free: &str) -> Formula {
    let mut p = Parser { rest: text, vocab };
    let f = p.formula(free);
    assert!(p.rest.is_empty(), "trailing input `{}`", p.rest);
    f
}

fn formula() -> impl Strategy<Value = Formula> {
    Just(Formula::True).prop_recursive(5, 24, 2, |inner| {
        prop_oneof![
            (0usize..7, inner.clone()).prop_map(|(r, f)| Formula::chain(r, f)),
            inner.clone().prop_map(Formula::not),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::and(a, b)),
            (inner.clone(), inner).prop_map(|(a, b)| Formula::or(a, b)),
        ]
    })
}

#[test]
fn corpus_round_trips() {
    let v = vocab();
    let corpus = [
        Formula::True,
        Formula::chain(1, Formula::True),
        Formula::not(Formula::chain(4, Formula::True)),
        Formula::and(Formula::chain(0, Formula::True), Formula::chain(5, Formula::True)),
        Formula::chain(6, Formula::chain(2, Formula::not(Formula::True))),
        Formula::or(Formula::True, Formula::not(Formula::not(Formula::True))),
    ];
    for f in corpus {
        let text = render(&f, &v, "e", 1);
        assert_eq!(parse(&text, &v, "e"), f, "{text}");
    }
}

proptest! {
    #[test]
    fn random_formulas_round_trip(f in formula()) {
        let v = vocab();
        let text = render(&f, &v, "e", 1);
        prop_assert_eq!(parse(&text, &v, "e"), f);
    }
}
