//! Deterministic Spoken-English to LaTeX parser.
//!
//! Recursive descent over whitespace-separated words, mirroring the
//! precedence table in [`crate::verbalize`]. Input is case-insensitive and
//! identifiers come out lowercase.

use thiserror::Error;

use crate::ast::{BinOp, Greek, MathAst, NamedFn};
use crate::latex::render_latex;
use crate::verbalize::{TEENS, TENS, UNITS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpokenError {
    #[error("unknown word `{word}` at word {position}")]
    UnknownWord { word: String, position: usize },
    #[error("no parse at word {position}")]
    AmbiguousParse { position: usize },
}

const KEYWORDS: [&str; 24] = [
    "plus",
    "minus",
    "times",
    "divided",
    "by",
    "equals",
    "over",
    "to",
    "the",
    "power",
    "of",
    "squared",
    "cubed",
    "sub",
    "quantity",
    "end",
    "fraction",
    "open",
    "close",
    "parenthesis",
    "sine",
    "cosine",
    "tangent",
    "log",
];

const MORE_KEYWORDS: [&str; 4] = ["natural", "exponential", "hundred", "thousand"];

fn known_word(w: &str) -> bool {
    KEYWORDS.contains(&w)
        || MORE_KEYWORDS.contains(&w)
        || letter(w).is_some()
        || Greek::from_name(w).is_some()
        || w.bytes().all(|b| b.is_ascii_digit())
        || UNITS.contains(&w)
        || TEENS.contains(&w)
        || TENS[2..].contains(&w)
}

fn letter(w: &str) -> Option<char> {
    let mut chars = w.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_lowercase() => Some(c),
        _ => None,
    }
}

fn named_fn(w: &str) -> Option<NamedFn> {
    match w {
        "sine" => Some(NamedFn::Sin),
        "cosine" => Some(NamedFn::Cos),
        "tangent" => Some(NamedFn::Tan),
        "log" => Some(NamedFn::Log),
        "natural" => Some(NamedFn::Ln),
        "exponential" => Some(NamedFn::Exp),
        _ => None,
    }
}

fn unit_value(w: &str) -> Option<u32> {
    UNITS.iter().position(|u| *u == w).map(|i| i as u32)
}

/// Parses spoken math into the canonical LaTeX string.
pub fn parse_spoken(se: &str) -> Result<String, SpokenError> {
    parse_spoken_ast(se).map(|ast| render_latex(&ast))
}

pub fn parse_spoken_ast(se: &str) -> Result<MathAst, SpokenError> {
    let words: Vec<String> = se.split_whitespace().map(str::to_lowercase).collect();
    if let Some((position, word)) = words.iter().enumerate().find(|(_, w)| !known_word(w)) {
        return Err(SpokenError::UnknownWord {
            word: word.clone(),
            position,
        });
    }
    let mut p = Parser { words, pos: 0 };
    let ast = p.equation(false)?;
    if p.pos != p.words.len() {
        return Err(p.fail());
    }
    Ok(ast)
}

struct Parser {
    words: Vec<String>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&str> {
        self.words.get(self.pos).map(String::as_str)
    }

    fn peek_at(&self, offset: usize) -> Option<&str> {
        self.words.get(self.pos + offset).map(String::as_str)
    }

    fn at(&self, phrase: &[&str]) -> bool {
        phrase
            .iter()
            .enumerate()
            .all(|(i, w)| self.peek_at(i) == Some(*w))
    }

    fn eat(&mut self, phrase: &[&str]) -> bool {
        if self.at(phrase) {
            self.pos += phrase.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, phrase: &[&str]) -> Result<(), SpokenError> {
        if self.eat(phrase) {
            Ok(())
        } else {
            Err(self.fail())
        }
    }

    fn fail(&self) -> SpokenError {
        SpokenError::AmbiguousParse { position: self.pos }
    }

    fn equation(&mut self, no_over: bool) -> Result<MathAst, SpokenError> {
        let mut lhs = self.additive(no_over)?;
        while self.eat(&["equals"]) {
            let rhs = self.additive(no_over)?;
            lhs = MathAst::binary(BinOp::Eq, lhs, rhs);
        }
        Ok(lhs)
    }

    fn additive(&mut self, no_over: bool) -> Result<MathAst, SpokenError> {
        let mut lhs = self.product(no_over)?;
        loop {
            let op = if self.eat(&["plus"]) {
                BinOp::Add
            } else if self.eat(&["minus"]) {
                BinOp::Sub
            } else {
                break;
            };
            let rhs = self.product(no_over)?;
            lhs = MathAst::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn product(&mut self, no_over: bool) -> Result<MathAst, SpokenError> {
        let mut lhs = self.ratio(no_over)?;
        loop {
            let op = if self.eat(&["times"]) {
                BinOp::Mul
            } else if self.eat(&["divided", "by"]) {
                BinOp::Div
            } else {
                break;
            };
            let rhs = self.ratio(no_over)?;
            lhs = MathAst::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn ratio(&mut self, no_over: bool) -> Result<MathAst, SpokenError> {
        let mut num = self.juxt()?;
        while !no_over && self.eat(&["over"]) {
            let den = self.juxt()?;
            num = MathAst::frac(num, den);
        }
        Ok(num)
    }

    fn starts_item(&self) -> bool {
        let Some(w) = self.peek() else {
            return false;
        };
        self.starts_number()
            || letter(w).is_some()
            || Greek::from_name(w).is_some()
            || named_fn(w).is_some()
            || self.at(&["open", "parenthesis"])
            || self.at(&["the", "quantity"])
            || self.at(&["the", "fraction"])
    }

    fn juxt(&mut self) -> Result<MathAst, SpokenError> {
        let mut items = vec![self.postfix()?];
        while self.starts_item() {
            items.push(self.postfix()?);
        }
        Ok(MathAst::seq(items))
    }

    fn postfix(&mut self) -> Result<MathAst, SpokenError> {
        let mut node = self.head()?;
        loop {
            if self.eat(&["to", "the", "power", "of"]) {
                let exp = self.juxt()?;
                node = MathAst::pow(node, exp);
            } else if self.eat(&["squared"]) {
                node = MathAst::pow(node, MathAst::number("2"));
            } else if self.eat(&["cubed"]) {
                node = MathAst::pow(node, MathAst::number("3"));
            } else if self.eat(&["sub"]) {
                let sub = self.subarg()?;
                node = MathAst::sub(node, sub);
            } else {
                break;
            }
        }
        Ok(node)
    }

    fn head(&mut self) -> Result<MathAst, SpokenError> {
        let Some(w) = self.peek() else {
            return Err(self.fail());
        };
        if let Some(f) = named_fn(w) {
            if f == NamedFn::Ln {
                self.expect(&["natural", "log"])?;
            } else {
                self.pos += 1;
            }
            self.expect(&["of"])?;
            let arg = self.postfix()?;
            return Ok(MathAst::apply(f, arg));
        }
        let quantity = self.at(&["the", "quantity"]);
        let mut node = self.primary()?;
        if node.is_callee_like() && self.eat(&["sub"]) {
            let sub = self.subarg()?;
            node = MathAst::sub(node, sub);
        }
        if (node.is_callee_like() || quantity) && self.eat(&["of"]) {
            let arg = self.postfix()?;
            node = MathAst::call(node, arg);
        }
        Ok(node)
    }

    fn subarg(&mut self) -> Result<MathAst, SpokenError> {
        let atom = if self.at(&["the", "quantity"]) {
            self.quantity()?
        } else if self.starts_number() {
            self.number()?
        } else {
            self.name().ok_or_else(|| self.fail())?
        };
        if self.eat(&["sub"]) {
            let rest = self.subarg()?;
            Ok(MathAst::sub(atom, rest))
        } else {
            Ok(atom)
        }
    }

    fn quantity(&mut self) -> Result<MathAst, SpokenError> {
        self.expect(&["the", "quantity"])?;
        let inner = self.equation(false)?;
        self.expect(&["end", "quantity"])?;
        Ok(inner)
    }

    /// A single letter or Greek name.
    fn name(&mut self) -> Option<MathAst> {
        let w = self.peek()?;
        let node = if let Some(c) = letter(w) {
            MathAst::Variable(c)
        } else {
            MathAst::Greek(Greek::from_name(w)?)
        };
        self.pos += 1;
        Some(node)
    }

    fn primary(&mut self) -> Result<MathAst, SpokenError> {
        if self.starts_number() {
            return self.number();
        }
        if let Some(node) = self.name() {
            return Ok(node);
        }
        if self.eat(&["open", "parenthesis"]) {
            let inner = self.equation(false)?;
            self.expect(&["close", "parenthesis"])?;
            return Ok(MathAst::group(inner));
        }
        if self.at(&["the", "quantity"]) {
            return self.quantity();
        }
        if self.eat(&["the", "fraction"]) {
            let num = self.equation(true)?;
            self.expect(&["over"])?;
            let den = self.equation(false)?;
            self.expect(&["end", "fraction"])?;
            return Ok(MathAst::frac(num, den));
        }
        Err(self.fail())
    }

    fn starts_number(&self) -> bool {
        self.peek().is_some_and(|w| {
            w.bytes().all(|b| b.is_ascii_digit())
                || unit_value(w).is_some()
                || TEENS.contains(&w)
                || TENS[2..].contains(&w)
        })
    }

    fn number(&mut self) -> Result<MathAst, SpokenError> {
        let w = self.peek().ok_or_else(|| self.fail())?;
        if w.bytes().all(|b| b.is_ascii_digit()) {
            let n = MathAst::Number(w.to_string());
            self.pos += 1;
            return Ok(n);
        }
        if self.eat(&["zero"]) {
            return Ok(MathAst::number("0"));
        }
        let mut value = self.below_thousand().ok_or_else(|| self.fail())?;
        if self.eat(&["thousand"]) {
            value *= 1000;
            if let Some(rest) = self.below_thousand() {
                value += rest;
            }
        }
        Ok(MathAst::Number(value.to_string()))
    }

    /// 1..=999 in words, greedily.
    fn below_thousand(&mut self) -> Option<u32> {
        let start = self.pos;
        let mut value = 0;
        if let Some(u) = self.peek().and_then(unit_value).filter(|u| *u > 0) {
            if self.peek_at(1) == Some("hundred") {
                self.pos += 2;
                value = u * 100;
            }
        }
        let w = self.peek().unwrap_or("");
        if let Some(i) = TEENS.iter().position(|t| *t == w) {
            self.pos += 1;
            value += 10 + i as u32;
        } else if let Some(i) = TENS[2..].iter().position(|t| *t == w) {
            self.pos += 1;
            value += 10 * (i as u32 + 2);
            if let Some(u) = self.peek().and_then(unit_value).filter(|u| *u > 0) {
                self.pos += 1;
                value += u;
            }
        } else if let Some(u) = unit_value(w).filter(|u| *u > 0) {
            self.pos += 1;
            value += u;
        }
        (self.pos > start).then_some(value)
    }
}
