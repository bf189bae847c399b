//! Spoken-English generation from [`MathAst`] and random expression sampling.
//!
//! The verbalizer and [`crate::spoken`] share one grammar. Spoken precedence,
//! loosest first: `equals`, `plus`/`minus`, `times`/`divided by`, `over`,
//! juxtaposition, postfix (`sub`, `to the power of`, `squared`, `cubed`,
//! `of`), atoms. Wherever a naive reading would attach words differently from
//! the tree, the verbalizer brackets the subtree with `the quantity` ...
//! `end quantity`. Those markers carry no LaTeX; explicit parentheses are
//! spoken as `open parenthesis` ... `close parenthesis`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ast::{BinOp, Callee, Greek, MathAst, NamedFn};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NumberMode {
    Digits,
    Words,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PowerMode {
    /// Always `to the power of`.
    ToThePowerOf,
    /// `squared` / `cubed` for exponents 2 and 3.
    Shortcuts,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FractionMode {
    /// `a over b`, binding tighter than `times` and looser than juxtaposition.
    Over,
    /// `the fraction a over b end fraction`.
    TheFraction,
}

/// Surface-form choices; together they fully determine the verbalization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VerbalStyle {
    pub number_mode: NumberMode,
    pub power_mode: PowerMode,
    pub fraction_mode: FractionMode,
}

impl Default for VerbalStyle {
    fn default() -> Self {
        VerbalStyle {
            number_mode: NumberMode::Digits,
            power_mode: PowerMode::ToThePowerOf,
            fraction_mode: FractionMode::Over,
        }
    }
}

impl VerbalStyle {
    /// All eight combinations, in a fixed order.
    pub fn all() -> Vec<VerbalStyle> {
        let mut out = Vec::with_capacity(8);
        for number_mode in [NumberMode::Digits, NumberMode::Words] {
            for power_mode in [PowerMode::ToThePowerOf, PowerMode::Shortcuts] {
                for fraction_mode in [FractionMode::Over, FractionMode::TheFraction] {
                    out.push(VerbalStyle {
                        number_mode,
                        power_mode,
                        fraction_mode,
                    });
                }
            }
        }
        out
    }
}

pub(crate) const UNITS: [&str; 10] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
];
pub(crate) const TEENS: [&str; 10] = [
    "ten",
    "eleven",
    "twelve",
    "thirteen",
    "fourteen",
    "fifteen",
    "sixteen",
    "seventeen",
    "eighteen",
    "nineteen",
];
pub(crate) const TENS: [&str; 10] = [
    "", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
];

pub(crate) fn is_number_word(w: &str) -> bool {
    w.bytes().all(|b| b.is_ascii_digit()) && !w.is_empty()
        || UNITS.contains(&w)
        || TEENS.contains(&w)
        || TENS[2..].contains(&w)
        || w == "hundred"
        || w == "thousand"
}

fn below_thousand(n: u32, out: &mut Vec<String>) {
    let (h, rem) = (n / 100, n % 100);
    if h > 0 {
        out.push(UNITS[h as usize].into());
        out.push("hundred".into());
    }
    if rem == 0 {
        return;
    }
    if rem < 10 {
        out.push(UNITS[rem as usize].into());
    } else if rem < 20 {
        out.push(TEENS[(rem - 10) as usize].into());
    } else {
        out.push(TENS[(rem / 10) as usize].into());
        if rem % 10 > 0 {
            out.push(UNITS[(rem % 10) as usize].into());
        }
    }
}

/// English words for a digit run, or `None` when the run has a leading zero
/// or exceeds 999,999 (those are always spoken as digits).
pub fn number_to_words(digits: &str) -> Option<Vec<String>> {
    if digits.is_empty() || digits.len() > 6 || (digits.len() > 1 && digits.starts_with('0')) {
        return None;
    }
    let n: u32 = digits.parse().ok()?;
    let mut out = Vec::new();
    if n == 0 {
        out.push("zero".into());
        return Some(out);
    }
    let (th, rest) = (n / 1000, n % 1000);
    if th > 0 {
        below_thousand(th, &mut out);
        out.push("thousand".into());
    }
    below_thousand(rest, &mut out);
    Some(out)
}

pub(crate) fn fn_words(f: NamedFn) -> &'static [&'static str] {
    match f {
        NamedFn::Sin => &["sine"],
        NamedFn::Cos => &["cosine"],
        NamedFn::Tan => &["tangent"],
        NamedFn::Log => &["log"],
        NamedFn::Ln => &["natural", "log"],
        NamedFn::Exp => &["exponential"],
    }
}

const EQ: u8 = 1;
const ADD: u8 = 2;
const MUL: u8 = 3;
const RATIO: u8 = 4;
const JUXT: u8 = 5;
const POSTFIX: u8 = 6;
const ATOM: u8 = 7;

/// What may follow a subtree's words in its position.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Follow {
    /// An operator word, a closing marker, or the end.
    Free,
    /// Another juxtaposed item.
    Juxt { next_is_number: bool },
    /// A power tail: `to the power of`, `squared`, `cubed`.
    Tail,
    /// A `sub` tail.
    Sub,
}

#[derive(Clone, Copy, Debug)]
struct Ctx {
    min: u8,
    follow: Follow,
    /// Inside `the fraction` numerator: a bare `over` would end it.
    no_over: bool,
}

const CLOSED: Ctx = Ctx {
    min: EQ,
    follow: Follow::Free,
    no_over: false,
};

struct Verbalizer {
    style: VerbalStyle,
    words: Vec<String>,
}

impl Verbalizer {
    fn push(&mut self, w: &str) {
        self.words.push(w.to_string());
    }

    fn push_all(&mut self, ws: &[&str]) {
        for w in ws {
            self.push(w);
        }
    }

    fn uses_shortcut(&self, exp: &MathAst) -> Option<&'static str> {
        if self.style.power_mode != PowerMode::Shortcuts {
            return None;
        }
        match exp {
            MathAst::Number(d) if d == "2" => Some("squared"),
            MathAst::Number(d) if d == "3" => Some("cubed"),
            _ => None,
        }
    }

    fn level(&self, node: &MathAst) -> u8 {
        match node {
            MathAst::Binary { op, .. } => match op {
                BinOp::Eq => EQ,
                BinOp::Add | BinOp::Sub => ADD,
                BinOp::Mul | BinOp::Div => MUL,
            },
            MathAst::Fraction { .. } => match self.style.fraction_mode {
                FractionMode::Over => RATIO,
                FractionMode::TheFraction => ATOM,
            },
            MathAst::Sequence(_) => JUXT,
            MathAst::Power { .. } | MathAst::Subscript { .. } | MathAst::Apply { .. } => POSTFIX,
            MathAst::Number(_) | MathAst::Variable(_) | MathAst::Greek(_) | MathAst::Group(_) => {
                ATOM
            }
        }
    }

    /// Whether the right edge of `node`, spoken bare, would swallow what
    /// follows it.
    fn absorbs(&self, node: &MathAst, follow: Follow) -> bool {
        match node {
            MathAst::Power { exp, .. } => {
                self.uses_shortcut(exp).is_none() && follow != Follow::Free
            }
            MathAst::Apply { .. } => matches!(follow, Follow::Tail | Follow::Sub),
            MathAst::Subscript { .. } => follow == Follow::Sub,
            MathAst::Number(_) => matches!(
                follow,
                Follow::Juxt {
                    next_is_number: true
                }
            ),
            _ => false,
        }
    }

    fn node(&mut self, node: &MathAst, ctx: Ctx) {
        let over_fraction = matches!(node, MathAst::Fraction { .. })
            && self.style.fraction_mode == FractionMode::Over;
        let wrap = self.level(node) < ctx.min
            || self.absorbs(node, ctx.follow)
            || (ctx.no_over && over_fraction);
        if wrap {
            self.push_all(&["the", "quantity"]);
            self.bare(node, CLOSED);
            self.push_all(&["end", "quantity"]);
        } else {
            self.bare(node, ctx);
        }
    }

    fn number(&mut self, digits: &str) {
        match self.style.number_mode {
            NumberMode::Words => match number_to_words(digits) {
                Some(ws) => self.words.extend(ws),
                None => self.push(digits),
            },
            NumberMode::Digits => self.push(digits),
        }
    }

    fn leaf_name(&mut self, node: &MathAst) {
        match node {
            MathAst::Variable(c) => self.push(&c.to_lowercase().to_string()),
            MathAst::Greek(g) => self.push(g.name()),
            MathAst::Number(d) => self.number(d),
            _ => unreachable!("not a leaf"),
        }
    }

    /// Operand of `sub`: a leaf, or a right-nested chain `a sub b sub c`.
    fn subarg(&mut self, node: &MathAst, follow: Follow) {
        match node {
            MathAst::Number(_) if self.absorbs(node, follow) => self.node(node, CLOSED_ATOM),
            MathAst::Number(_) | MathAst::Variable(_) | MathAst::Greek(_) => self.leaf_name(node),
            MathAst::Subscript { base, sub } if base.is_leaf() => {
                self.leaf_name(base);
                self.push("sub");
                self.subarg(sub, follow);
            }
            _ => {
                self.push_all(&["the", "quantity"]);
                self.bare(node, CLOSED);
                self.push_all(&["end", "quantity"]);
            }
        }
    }

    fn bare(&mut self, node: &MathAst, ctx: Ctx) {
        match node {
            MathAst::Number(d) => self.number(d),
            MathAst::Variable(_) | MathAst::Greek(_) => self.leaf_name(node),
            MathAst::Binary { op, lhs, rhs } => {
                let (lvl, word): (u8, &[&str]) = match op {
                    BinOp::Eq => (EQ, &["equals"]),
                    BinOp::Add => (ADD, &["plus"]),
                    BinOp::Sub => (ADD, &["minus"]),
                    BinOp::Mul => (MUL, &["times"]),
                    BinOp::Div => (MUL, &["divided", "by"]),
                };
                self.node(
                    lhs,
                    Ctx {
                        min: lvl,
                        follow: Follow::Free,
                        no_over: ctx.no_over,
                    },
                );
                self.push_all(word);
                self.node(
                    rhs,
                    Ctx {
                        min: lvl + 1,
                        follow: ctx.follow,
                        no_over: ctx.no_over,
                    },
                );
            }
            MathAst::Fraction { num, den } => match self.style.fraction_mode {
                FractionMode::Over => {
                    self.node(
                        num,
                        Ctx {
                            min: RATIO,
                            follow: Follow::Free,
                            no_over: false,
                        },
                    );
                    self.push("over");
                    self.node(
                        den,
                        Ctx {
                            min: JUXT,
                            follow: ctx.follow,
                            no_over: false,
                        },
                    );
                }
                FractionMode::TheFraction => {
                    self.push_all(&["the", "fraction"]);
                    self.node(
                        num,
                        Ctx {
                            no_over: true,
                            ..CLOSED
                        },
                    );
                    self.push("over");
                    self.node(den, CLOSED);
                    self.push_all(&["end", "fraction"]);
                }
            },
            MathAst::Power { base, exp } => {
                self.node(
                    base,
                    Ctx {
                        min: POSTFIX,
                        follow: Follow::Tail,
                        no_over: false,
                    },
                );
                match self.uses_shortcut(exp) {
                    Some(w) => self.push(w),
                    None => {
                        self.push_all(&["to", "the", "power", "of"]);
                        self.node(
                            exp,
                            Ctx {
                                min: JUXT,
                                follow: ctx.follow,
                                no_over: false,
                            },
                        );
                    }
                }
            }
            MathAst::Subscript { base, sub } => {
                self.node(
                    base,
                    Ctx {
                        min: POSTFIX,
                        follow: Follow::Sub,
                        no_over: false,
                    },
                );
                self.push("sub");
                self.subarg(sub, ctx.follow);
            }
            MathAst::Apply { func, arg } => {
                match func {
                    Callee::Named(f) => self.push_all(fn_words(*f)),
                    Callee::Expr(callee) => self.callee(callee),
                }
                self.push("of");
                self.node(
                    arg,
                    Ctx {
                        min: POSTFIX,
                        follow: ctx.follow,
                        no_over: false,
                    },
                );
            }
            MathAst::Group(inner) => {
                self.push_all(&["open", "parenthesis"]);
                self.node(inner, CLOSED);
                self.push_all(&["close", "parenthesis"]);
            }
            MathAst::Sequence(items) => {
                // Right to left so each item knows how its successor starts.
                let mut chunks: Vec<Vec<String>> = Vec::with_capacity(items.len());
                let mut follow = ctx.follow;
                for item in items.iter().rev() {
                    let saved = std::mem::take(&mut self.words);
                    self.node(
                        item,
                        Ctx {
                            min: POSTFIX,
                            follow,
                            no_over: false,
                        },
                    );
                    let chunk = std::mem::replace(&mut self.words, saved);
                    follow = Follow::Juxt {
                        next_is_number: chunk.first().is_some_and(|w| is_number_word(w)),
                    };
                    chunks.push(chunk);
                }
                for chunk in chunks.into_iter().rev() {
                    self.words.extend(chunk);
                }
            }
        }
    }

    fn callee(&mut self, callee: &MathAst) {
        match callee {
            MathAst::Variable(_) | MathAst::Greek(_) => self.leaf_name(callee),
            MathAst::Subscript { base, sub } if base.is_callee_like() && base.is_leaf() => {
                self.leaf_name(base);
                self.push("sub");
                self.subarg(sub, Follow::Free);
            }
            _ => {
                self.push_all(&["the", "quantity"]);
                self.bare(callee, CLOSED);
                self.push_all(&["end", "quantity"]);
            }
        }
    }
}

const CLOSED_ATOM: Ctx = Ctx {
    min: ATOM + 1,
    follow: Follow::Free,
    no_over: false,
};

/// Speaks `ast` as lowercase words separated by single spaces.
pub fn verbalize(ast: &MathAst, style: VerbalStyle) -> String {
    let mut v = Verbalizer {
        style,
        words: Vec::new(),
    };
    v.node(ast, CLOSED);
    v.words.join(" ")
}

/// Relative weights of node kinds chosen by [`sample_expression`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeWeights {
    /// Only used at the root: equations are never nested.
    pub equation: f64,
    pub add: f64,
    pub sub: f64,
    pub mul: f64,
    pub div: f64,
    pub fraction: f64,
    pub power: f64,
    pub subscript: f64,
    pub named_fn: f64,
    pub generic_fn: f64,
    pub group: f64,
    pub sequence: f64,
    pub number: f64,
    pub variable: f64,
    pub greek: f64,
}

impl Default for NodeWeights {
    fn default() -> Self {
        NodeWeights {
            equation: 3.0,
            add: 2.0,
            sub: 1.0,
            mul: 0.4,
            div: 0.3,
            fraction: 0.8,
            power: 1.0,
            subscript: 1.0,
            named_fn: 0.8,
            generic_fn: 0.5,
            group: 0.3,
            sequence: 1.5,
            number: 1.5,
            variable: 2.5,
            greek: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrammarConfig {
    pub max_depth: usize,
    pub weights: NodeWeights,
    pub variables: Vec<char>,
    pub greek: Vec<String>,
    /// Largest multi-digit number; single digits are always allowed.
    pub max_number: u32,
    /// Corpus generation resamples expressions whose clean spoken form is
    /// longer than this many characters.
    pub max_spoken_len: Option<usize>,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        GrammarConfig {
            max_depth: 3,
            weights: NodeWeights::default(),
            variables: (b'a'..=b'z').map(char::from).collect(),
            greek: ["alpha", "beta", "gamma", "theta", "lambda", "mu", "pi", "sigma", "phi", "psi", "omega"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            max_number: 99,
            max_spoken_len: Some(72),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GrammarConfigError {
    #[error("max_depth must be at least 1")]
    ZeroDepth,
    #[error("node weights must be finite, nonnegative and not all zero")]
    BadWeights,
    #[error("variable alphabet must be non-empty ASCII letters")]
    BadVariables,
    #[error("unknown greek letter `{0}`")]
    UnknownGreek(String),
}

impl GrammarConfig {
    pub fn validate(&self) -> Result<(), GrammarConfigError> {
        if self.max_depth == 0 {
            return Err(GrammarConfigError::ZeroDepth);
        }
        let w = &self.weights;
        let all = [
            w.equation,
            w.add,
            w.sub,
            w.mul,
            w.div,
            w.fraction,
            w.power,
            w.subscript,
            w.named_fn,
            w.generic_fn,
            w.group,
            w.sequence,
            w.number,
            w.variable,
            w.greek,
        ];
        if all.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(GrammarConfigError::BadWeights);
        }
        // Leaves must stay reachable or depth-1 sampling has nothing to pick.
        if w.number + w.variable + (if self.greek.is_empty() { 0.0 } else { w.greek }) <= 0.0 {
            return Err(GrammarConfigError::BadWeights);
        }
        if self.variables.is_empty() || !self.variables.iter().all(char::is_ascii_alphabetic) {
            return Err(GrammarConfigError::BadVariables);
        }
        for g in &self.greek {
            if Greek::from_name(g).is_none() {
                return Err(GrammarConfigError::UnknownGreek(g.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Equation,
    Add,
    Sub,
    Mul,
    Div,
    Fraction,
    Power,
    Subscript,
    NamedFn,
    GenericFn,
    Group,
    Sequence,
    Number,
    Variable,
    Greek,
}

impl Kind {
    const ALL: [Kind; 15] = [
        Kind::Equation,
        Kind::Add,
        Kind::Sub,
        Kind::Mul,
        Kind::Div,
        Kind::Fraction,
        Kind::Power,
        Kind::Subscript,
        Kind::NamedFn,
        Kind::GenericFn,
        Kind::Group,
        Kind::Sequence,
        Kind::Number,
        Kind::Variable,
        Kind::Greek,
    ];

    fn is_leaf(self) -> bool {
        matches!(self, Kind::Number | Kind::Variable | Kind::Greek)
    }

    /// LaTeX binding level: 1 `=`, 2 `+ -`, 3 `\times /`, 4 juxtaposition,
    /// 5 postfix, 6 atoms.
    fn latex_level(self) -> u8 {
        match self {
            Kind::Equation => 1,
            Kind::Add | Kind::Sub => 2,
            Kind::Mul | Kind::Div => 3,
            Kind::Sequence => 4,
            Kind::Power | Kind::Subscript | Kind::NamedFn | Kind::GenericFn => 5,
            Kind::Fraction | Kind::Group | Kind::Number | Kind::Variable | Kind::Greek => 6,
        }
    }

    /// Minimum depth of a subtree rooted at this kind.
    fn min_depth(self) -> usize {
        if self.is_leaf() {
            1
        } else {
            2
        }
    }
}

/// Where a sampled subtree will sit; decides which kinds fit bare, which
/// need parentheses, and which are excluded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    Root,
    /// Binary operand or other braced context with a minimum LaTeX level.
    Operand(u8),
    /// Juxtaposed item; `first` allows numbers and `after_callee` forbids a
    /// parenthesized group that would read as an application.
    SeqItem { first: bool, after_callee: bool },
    PowerBase {
        allow_number: bool,
        after_callee: bool,
    },
    SubscriptArg,
}

struct Sampler<'a> {
    cfg: &'a GrammarConfig,
    greek: Vec<Greek>,
    rng: ChaCha8Rng,
}

impl Sampler<'_> {
    fn weight(&self, k: Kind) -> f64 {
        let w = &self.cfg.weights;
        match k {
            Kind::Equation => w.equation,
            Kind::Add => w.add,
            Kind::Sub => w.sub,
            Kind::Mul => w.mul,
            Kind::Div => w.div,
            Kind::Fraction => w.fraction,
            Kind::Power => w.power,
            Kind::Subscript => w.subscript,
            Kind::NamedFn => w.named_fn,
            Kind::GenericFn => w.generic_fn,
            Kind::Group => w.group,
            Kind::Sequence => w.sequence,
            Kind::Number => w.number,
            Kind::Variable => w.variable,
            Kind::Greek if self.greek.is_empty() => 0.0,
            Kind::Greek => w.greek,
        }
    }

    /// Returns whether `k` may appear in `slot` and, if so, whether it must
    /// be wrapped in parentheses.
    fn fit(&self, k: Kind, slot: Slot) -> Option<bool> {
        match slot {
            Slot::Root => Some(false),
            _ if k == Kind::Equation => None,
            Slot::Operand(min) => Some(k.latex_level() < min),
            Slot::SeqItem {
                first,
                after_callee,
            } => match k {
                Kind::Number => first.then_some(false),
                Kind::Group => (!after_callee).then_some(false),
                Kind::Sequence => None,
                _ if k.latex_level() >= 5 => Some(false),
                // Binary operators inside a product need parentheses, and
                // those parentheses must not follow a callee.
                _ => (!after_callee).then_some(true),
            },
            Slot::PowerBase {
                allow_number,
                after_callee,
            } => match k {
                Kind::Variable | Kind::Greek => Some(false),
                Kind::Group => (!after_callee).then_some(false),
                Kind::Number => allow_number.then_some(false),
                Kind::Subscript => Some(false),
                Kind::Fraction | Kind::NamedFn | Kind::GenericFn => None,
                _ => (!after_callee).then_some(true),
            },
            Slot::SubscriptArg => match k {
                Kind::Number | Kind::Variable | Kind::Greek | Kind::Subscript => Some(false),
                Kind::Add | Kind::Sub => Some(false),
                _ => None,
            },
        }
    }

    fn choose(&mut self, slot: Slot, budget: usize) -> (Kind, bool) {
        let mut options: Vec<(Kind, bool, f64)> = Vec::new();
        for k in Kind::ALL {
            let w = self.weight(k);
            if w <= 0.0 {
                continue;
            }
            let Some(wrap) = self.fit(k, slot) else {
                continue;
            };
            let need = k.min_depth() + usize::from(wrap);
            if need <= budget {
                options.push((k, wrap, w));
            }
        }
        if options.is_empty() {
            // Depth exhausted: the first feasible leaf.
            for k in [Kind::Variable, Kind::Greek, Kind::Number] {
                if self.fit(k, slot) == Some(false) && self.weight(k) > 0.0 {
                    return (k, false);
                }
            }
            return (Kind::Variable, false);
        }
        let total: f64 = options.iter().map(|o| o.2).sum();
        let mut u = self.rng.gen::<f64>() * total;
        for &(k, wrap, w) in &options {
            if u < w {
                return (k, wrap);
            }
            u -= w;
        }
        let last = options.last().unwrap();
        (last.0, last.1)
    }

    fn number(&mut self) -> MathAst {
        let n = if self.cfg.max_number < 10 || self.rng.gen_bool(0.7) {
            self.rng.gen_range(0..10)
        } else {
            self.rng.gen_range(10..=self.cfg.max_number)
        };
        MathAst::Number(n.to_string())
    }

    fn variable(&mut self) -> MathAst {
        MathAst::Variable(*self.cfg.variables.choose(&mut self.rng).unwrap())
    }

    fn greek_leaf(&mut self) -> MathAst {
        MathAst::Greek(*self.greek.choose(&mut self.rng).unwrap())
    }

    fn sample(&mut self, slot: Slot, budget: usize) -> MathAst {
        let (kind, wrap) = self.choose(slot, budget);
        if wrap {
            let inner = self.build(kind, budget - 1, slot);
            MathAst::group(inner)
        } else {
            self.build(kind, budget, slot)
        }
    }

    fn callee(&mut self, budget: usize) -> MathAst {
        let base = if self.greek.is_empty() || self.rng.gen_bool(0.7) {
            self.variable()
        } else {
            self.greek_leaf()
        };
        if budget >= 2 && self.rng.gen_bool(0.3) {
            let sub = self.sample(Slot::SubscriptArg, 1);
            MathAst::sub(base, sub)
        } else {
            base
        }
    }

    fn build(&mut self, kind: Kind, budget: usize, slot: Slot) -> MathAst {
        let child = budget - 1;
        match kind {
            Kind::Number => self.number(),
            Kind::Variable => self.variable(),
            Kind::Greek => self.greek_leaf(),
            Kind::Equation => {
                let lhs = self.sample(Slot::Operand(2), child);
                let rhs = self.sample(Slot::Operand(2), child);
                MathAst::binary(BinOp::Eq, lhs, rhs)
            }
            Kind::Add | Kind::Sub => {
                let op = if kind == Kind::Add { BinOp::Add } else { BinOp::Sub };
                let lhs = self.sample(Slot::Operand(2), child);
                let rhs = self.sample(Slot::Operand(3), child);
                MathAst::binary(op, lhs, rhs)
            }
            Kind::Mul | Kind::Div => {
                let op = if kind == Kind::Mul { BinOp::Mul } else { BinOp::Div };
                let lhs = self.sample(Slot::Operand(3), child);
                let rhs = self.sample(Slot::Operand(4), child);
                MathAst::binary(op, lhs, rhs)
            }
            Kind::Fraction => {
                let num = self.sample(Slot::Operand(2), child);
                let den = self.sample(Slot::Operand(2), child);
                MathAst::frac(num, den)
            }
            Kind::Power => {
                let (allow_number, after_callee) = match slot {
                    Slot::SeqItem {
                        first,
                        after_callee,
                    } => (first, after_callee),
                    _ => (true, false),
                };
                let base = self.sample(
                    Slot::PowerBase {
                        allow_number,
                        after_callee,
                    },
                    child,
                );
                let exp = self.sample(Slot::Operand(2), child);
                MathAst::pow(base, exp)
            }
            Kind::Subscript => {
                let base = if self.greek.is_empty() || self.rng.gen_bool(0.75) {
                    self.variable()
                } else {
                    self.greek_leaf()
                };
                let sub = self.sample(Slot::SubscriptArg, child);
                MathAst::sub(base, sub)
            }
            Kind::NamedFn => {
                let f = *NamedFn::ALL.choose(&mut self.rng).unwrap();
                let arg = self.sample(Slot::Operand(2), child);
                MathAst::apply(f, arg)
            }
            Kind::GenericFn => {
                let callee = self.callee(child);
                let arg = self.sample(Slot::Operand(2), child);
                MathAst::call(callee, arg)
            }
            Kind::Group => {
                let inner = self.sample(Slot::Operand(2), child);
                MathAst::group(inner)
            }
            Kind::Sequence => {
                let len = if self.rng.gen_bool(0.75) { 2 } else { 3 };
                let mut items: Vec<MathAst> = Vec::with_capacity(len);
                for i in 0..len {
                    let after_callee = items.last().is_some_and(MathAst::is_callee_like);
                    let item = self.sample(
                        Slot::SeqItem {
                            first: i == 0,
                            after_callee,
                        },
                        child,
                    );
                    items.push(item);
                }
                MathAst::Sequence(items)
            }
        }
    }
}

/// Samples a canonical in-grammar expression of depth at most
/// `cfg.max_depth`. The same `(cfg, seed)` always yields the same tree.
pub fn sample_expression(cfg: &GrammarConfig, seed: u64) -> MathAst {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with_rng(cfg, &mut rng)
}

pub(crate) fn sample_with_rng(cfg: &GrammarConfig, rng: &mut ChaCha8Rng) -> MathAst {
    let greek = cfg
        .greek
        .iter()
        .filter_map(|g| Greek::from_name(g))
        .collect();
    let mut s = Sampler {
        cfg,
        greek,
        rng: ChaCha8Rng::from_seed(rng.gen()),
    };
    s.sample(Slot::Root, cfg.max_depth.max(1))
}
