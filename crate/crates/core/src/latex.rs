//! LaTeX tokenization, normalization, parsing and canonical rendering for the
//! supported math subset.
//!
//! The grammar covers single-letter Latin variables, digit runs, lowercase
//! Greek letters, `+ - = / \times`, implicit multiplication, parentheses,
//! `\frac{}{}`, `^`, `_` (braces optional for single tokens), the named
//! functions `\sin \cos \tan \log \ln \exp` and generic `f(x)` application.
//!
//! Command tokens are matched against the known command table by longest
//! prefix, so the whitespace-free normalized form `\alphax` still splits into
//! `\alpha` and `x`.

use thiserror::Error;

use crate::ast::{BinOp, Callee, Greek, MathAst, NamedFn, GREEK_NAMES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Command,
    Symbol,
    DigitRun,
    Letter,
    BraceOpen,
    BraceClose,
    SubscriptMarker,
    SuperscriptMarker,
    Delimiter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LatexToken<'a> {
    pub kind: TokenKind,
    pub text: &'a str,
    /// Byte offset of the token in the source string.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LatexError {
    #[error("unbalanced brace at byte {offset}")]
    UnbalancedBrace { offset: usize },
    #[error("unsupported construct `{token}`")]
    UnsupportedConstruct { token: String },
    #[error("syntax error at byte {position}")]
    SyntaxError { position: usize },
}

const EXTRA_COMMANDS: [&str; 2] = ["frac", "times"];

fn known_command(name: &str) -> bool {
    GREEK_NAMES.contains(&name)
        || NamedFn::from_command(name).is_some()
        || EXTRA_COMMANDS.contains(&name)
}

/// Length of the longest known command name that prefixes `run`.
fn longest_known_prefix(run: &str) -> Option<usize> {
    (1..=run.len()).rev().find(|&n| known_command(&run[..n]))
}

/// Splits `src` into tokens without checking brace balance. Metrics use this
/// on model output, which may not be well formed.
pub fn lex(src: &str) -> Vec<LatexToken<'_>> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < src.len() {
        let c = src[i..].chars().next().unwrap();
        let clen = c.len_utf8();
        if c.is_whitespace() {
            i += clen;
            continue;
        }
        let (kind, len) = match c {
            '\\' => {
                let run = src[i + 1..]
                    .bytes()
                    .take_while(u8::is_ascii_alphabetic)
                    .count();
                if run == 0 {
                    let next = src[i + 1..].chars().next().map_or(0, char::len_utf8);
                    (TokenKind::Command, 1 + next)
                } else {
                    let name = &src[i + 1..i + 1 + run];
                    let n = longest_known_prefix(name).unwrap_or(run);
                    (TokenKind::Command, 1 + n)
                }
            }
            '0'..='9' => {
                let run = bytes[i..].iter().take_while(|b| b.is_ascii_digit()).count();
                (TokenKind::DigitRun, run)
            }
            'a'..='z' | 'A'..='Z' => (TokenKind::Letter, 1),
            '{' => (TokenKind::BraceOpen, 1),
            '}' => (TokenKind::BraceClose, 1),
            '_' => (TokenKind::SubscriptMarker, 1),
            '^' => (TokenKind::SuperscriptMarker, 1),
            '$' | '(' | ')' => (TokenKind::Delimiter, 1),
            _ => (TokenKind::Symbol, clen),
        };
        tokens.push(LatexToken {
            kind,
            text: &src[i..i + len],
            offset: i,
        });
        i += len;
    }
    tokens
}

/// Tokenizes `src`, rejecting unbalanced braces.
pub fn tokenize_latex(src: &str) -> Result<Vec<LatexToken<'_>>, LatexError> {
    let tokens = lex(src);
    let mut depth = 0usize;
    for t in &tokens {
        match t.kind {
            TokenKind::BraceOpen => depth += 1,
            TokenKind::BraceClose => {
                depth = depth
                    .checked_sub(1)
                    .ok_or(LatexError::UnbalancedBrace { offset: t.offset })?;
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err(LatexError::UnbalancedBrace { offset: src.len() });
    }
    Ok(tokens)
}

/// Removes all whitespace and any leading/trailing `$` delimiters.
pub fn normalize_latex(src: &str) -> String {
    let stripped: String = src.chars().filter(|c| !c.is_whitespace()).collect();
    stripped.trim_matches('$').to_string()
}

pub fn parse_latex(src: &str) -> Result<MathAst, LatexError> {
    let tokens = tokenize_latex(src)?;
    let mut toks: Vec<Tok> = tokens
        .iter()
        .map(|t| Tok {
            kind: t.kind,
            text: t.text.to_string(),
            offset: t.offset,
        })
        .collect();
    while toks.first().is_some_and(|t| t.text == "$") {
        toks.remove(0);
    }
    while toks.last().is_some_and(|t| t.text == "$") {
        toks.pop();
    }
    let mut p = Parser {
        toks,
        pos: 0,
        end: src.len(),
    };
    let ast = p.equation()?;
    if p.pos < p.toks.len() {
        return Err(p.unexpected());
    }
    Ok(ast)
}

#[derive(Debug)]
struct Tok {
    kind: TokenKind,
    text: String,
    offset: usize,
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn peek_is(&self, text: &str) -> bool {
        self.peek().is_some_and(|t| t.text == text)
    }

    fn unexpected(&self) -> LatexError {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Command && !known_command(&t.text[1..]) => {
                LatexError::UnsupportedConstruct {
                    token: t.text.clone(),
                }
            }
            Some(t) => LatexError::SyntaxError { position: t.offset },
            None => LatexError::SyntaxError { position: self.end },
        }
    }

    fn expect(&mut self, text: &str) -> Result<(), LatexError> {
        if self.peek_is(text) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.unexpected())
        }
    }

    fn equation(&mut self) -> Result<MathAst, LatexError> {
        let mut lhs = self.additive()?;
        while self.peek_is("=") {
            self.pos += 1;
            let rhs = self.additive()?;
            lhs = MathAst::binary(BinOp::Eq, lhs, rhs);
        }
        Ok(lhs)
    }

    fn additive(&mut self) -> Result<MathAst, LatexError> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek().map(|t| t.text.as_str()) {
                Some("+") => BinOp::Add,
                Some("-") => BinOp::Sub,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.product()?;
            lhs = MathAst::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<MathAst, LatexError> {
        let mut lhs = self.juxt()?;
        loop {
            let op = match self.peek().map(|t| t.text.as_str()) {
                Some("\\times") => BinOp::Mul,
                Some("/") => BinOp::Div,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.juxt()?;
            lhs = MathAst::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn starts_atom(&self) -> bool {
        match self.peek() {
            Some(t) => match t.kind {
                TokenKind::DigitRun | TokenKind::Letter | TokenKind::BraceOpen => true,
                TokenKind::Command => t.text != "\\times",
                TokenKind::Delimiter => t.text == "(",
                _ => false,
            },
            None => false,
        }
    }

    fn juxt(&mut self) -> Result<MathAst, LatexError> {
        let mut items = vec![self.postfix()?];
        while self.starts_atom() {
            items.push(self.postfix()?);
        }
        Ok(MathAst::seq(items))
    }

    fn postfix(&mut self) -> Result<MathAst, LatexError> {
        let mut node = self.atom()?;
        loop {
            match self.peek().map(|t| t.kind) {
                Some(TokenKind::SubscriptMarker) => {
                    self.pos += 1;
                    let sub = self.script()?;
                    node = MathAst::sub(node, sub);
                }
                Some(TokenKind::SuperscriptMarker) => {
                    self.pos += 1;
                    let exp = self.script()?;
                    node = MathAst::pow(node, exp);
                }
                Some(TokenKind::Delimiter) if self.peek_is("(") && node.is_callee_like() => {
                    self.pos += 1;
                    let arg = self.equation()?;
                    self.expect(")")?;
                    node = MathAst::call(node, arg);
                }
                _ => break,
            }
        }
        Ok(node)
    }

    /// Argument of `^` or `_`: a braced expression or a single token. A
    /// multi-digit run contributes only its first digit, as in TeX.
    fn script(&mut self) -> Result<MathAst, LatexError> {
        let Some(tok) = self.toks.get_mut(self.pos) else {
            return Err(LatexError::SyntaxError { position: self.end });
        };
        match tok.kind {
            TokenKind::BraceOpen => {
                self.pos += 1;
                let inner = self.equation()?;
                self.expect("}")?;
                Ok(inner)
            }
            TokenKind::DigitRun if tok.text.len() > 1 => {
                let first = tok.text[..1].to_string();
                tok.text.remove(0);
                tok.offset += 1;
                Ok(MathAst::Number(first))
            }
            TokenKind::DigitRun | TokenKind::Letter => self.atom(),
            TokenKind::Command if Greek::from_name(&tok.text[1..]).is_some() => self.atom(),
            _ => Err(self.unexpected()),
        }
    }

    fn atom(&mut self) -> Result<MathAst, LatexError> {
        let Some(tok) = self.peek() else {
            return Err(LatexError::SyntaxError { position: self.end });
        };
        match tok.kind {
            TokenKind::DigitRun => {
                let n = MathAst::Number(tok.text.clone());
                self.pos += 1;
                Ok(n)
            }
            TokenKind::Letter => {
                let c = tok.text.chars().next().unwrap();
                self.pos += 1;
                Ok(MathAst::Variable(c))
            }
            TokenKind::BraceOpen => {
                self.pos += 1;
                let inner = self.equation()?;
                self.expect("}")?;
                Ok(inner)
            }
            TokenKind::Delimiter if tok.text == "(" => {
                self.pos += 1;
                let inner = self.equation()?;
                self.expect(")")?;
                Ok(MathAst::group(inner))
            }
            TokenKind::Command => {
                let name = tok.text[1..].to_string();
                if let Some(g) = Greek::from_name(&name) {
                    self.pos += 1;
                    Ok(MathAst::Greek(g))
                } else if let Some(f) = NamedFn::from_command(&name) {
                    self.pos += 1;
                    self.expect("(")?;
                    let arg = self.equation()?;
                    self.expect(")")?;
                    Ok(MathAst::apply(f, arg))
                } else if name == "frac" {
                    self.pos += 1;
                    self.expect("{")?;
                    let num = self.equation()?;
                    self.expect("}")?;
                    self.expect("{")?;
                    let den = self.equation()?;
                    self.expect("}")?;
                    Ok(MathAst::frac(num, den))
                } else {
                    Err(LatexError::UnsupportedConstruct {
                        token: tok.text.clone(),
                    })
                }
            }
            _ => Err(self.unexpected()),
        }
    }
}

/// Renders the canonical spelling of `ast`: no optional spaces, braces around
/// every multi-character script, `\times` for explicit products.
///
/// A single space is emitted between a command and a following letter
/// (`\alpha x`) so the output stays valid TeX; normalization removes it.
pub fn render_latex(ast: &MathAst) -> String {
    let mut out = String::new();
    render_into(ast, &mut out);
    out
}

fn ends_with_command(out: &str) -> bool {
    let trimmed = out.trim_end_matches(|c: char| c.is_ascii_alphabetic());
    trimmed.len() < out.len() && trimmed.ends_with('\\')
}

fn push_piece(out: &mut String, piece: &str) {
    if piece.starts_with(|c: char| c.is_ascii_alphabetic()) && ends_with_command(out) {
        out.push(' ');
    }
    out.push_str(piece);
}

fn render_script(ast: &MathAst, out: &mut String) {
    let inner = render_latex(ast);
    if inner.chars().count() == 1 {
        out.push_str(&inner);
    } else {
        out.push('{');
        out.push_str(&inner);
        out.push('}');
    }
}

fn render_into(ast: &MathAst, out: &mut String) {
    match ast {
        MathAst::Number(d) => out.push_str(d),
        MathAst::Variable(c) => {
            let mut buf = [0u8; 4];
            push_piece(out, c.encode_utf8(&mut buf));
        }
        MathAst::Greek(g) => {
            out.push('\\');
            out.push_str(g.name());
        }
        MathAst::Binary { op, lhs, rhs } => {
            render_into(lhs, out);
            out.push_str(match op {
                BinOp::Add => "+",
                BinOp::Sub => "-",
                BinOp::Mul => "\\times",
                BinOp::Div => "/",
                BinOp::Eq => "=",
            });
            render_into(rhs, out);
        }
        MathAst::Fraction { num, den } => {
            out.push_str("\\frac{");
            render_into(num, out);
            out.push_str("}{");
            render_into(den, out);
            out.push('}');
        }
        MathAst::Power { base, exp } => {
            render_into(base, out);
            out.push('^');
            render_script(exp, out);
        }
        MathAst::Subscript { base, sub } => {
            render_into(base, out);
            out.push('_');
            render_script(sub, out);
        }
        MathAst::Apply { func, arg } => {
            match func {
                Callee::Named(f) => {
                    out.push('\\');
                    out.push_str(f.command());
                }
                Callee::Expr(c) => render_into(c, out),
            }
            out.push('(');
            render_into(arg, out);
            out.push(')');
        }
        MathAst::Group(inner) => {
            out.push('(');
            render_into(inner, out);
            out.push(')');
        }
        MathAst::Sequence(items) => {
            for item in items {
                render_into(item, out);
            }
        }
    }
}
