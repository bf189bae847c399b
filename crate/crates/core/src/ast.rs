//! Structured math expressions shared by the LaTeX renderer, the verbalizer
//! and the spoken-English parser.

use std::fmt;

/// Lowercase Greek letters with a LaTeX command of the same name.
pub const GREEK_NAMES: [&str; 23] = [
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta", "iota", "kappa",
    "lambda", "mu", "nu", "xi", "pi", "rho", "sigma", "tau", "upsilon", "phi", "chi", "psi",
    "omega",
];

/// A Greek letter, stored as an index into [`GREEK_NAMES`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Greek(u8);

impl Greek {
    pub fn from_name(name: &str) -> Option<Greek> {
        GREEK_NAMES
            .iter()
            .position(|g| *g == name)
            .map(|i| Greek(i as u8))
    }

    pub fn name(self) -> &'static str {
        GREEK_NAMES[self.0 as usize]
    }

    pub fn all() -> impl Iterator<Item = Greek> {
        (0..GREEK_NAMES.len()).map(|i| Greek(i as u8))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Eq,
}

/// Named functions with a dedicated LaTeX command.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NamedFn {
    Sin,
    Cos,
    Tan,
    Log,
    Ln,
    Exp,
}

impl NamedFn {
    pub const ALL: [NamedFn; 6] = [
        NamedFn::Sin,
        NamedFn::Cos,
        NamedFn::Tan,
        NamedFn::Log,
        NamedFn::Ln,
        NamedFn::Exp,
    ];

    /// Command name without the backslash.
    pub fn command(self) -> &'static str {
        match self {
            NamedFn::Sin => "sin",
            NamedFn::Cos => "cos",
            NamedFn::Tan => "tan",
            NamedFn::Log => "log",
            NamedFn::Ln => "ln",
            NamedFn::Exp => "exp",
        }
    }

    pub fn from_command(name: &str) -> Option<NamedFn> {
        NamedFn::ALL.into_iter().find(|f| f.command() == name)
    }
}

/// The thing being applied in a function application.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Callee {
    Named(NamedFn),
    /// Generic `f(x)`-style application; the callee is a variable, a Greek
    /// letter, or a subscripted one of those.
    Expr(Box<MathAst>),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum MathAst {
    /// Non-empty run of ASCII digits.
    Number(String),
    Variable(char),
    Greek(Greek),
    Binary {
        op: BinOp,
        lhs: Box<MathAst>,
        rhs: Box<MathAst>,
    },
    Fraction {
        num: Box<MathAst>,
        den: Box<MathAst>,
    },
    Power {
        base: Box<MathAst>,
        exp: Box<MathAst>,
    },
    Subscript {
        base: Box<MathAst>,
        sub: Box<MathAst>,
    },
    Apply {
        func: Callee,
        arg: Box<MathAst>,
    },
    /// Explicit parentheses.
    Group(Box<MathAst>),
    /// Implicit multiplication by juxtaposition; always two or more items.
    Sequence(Vec<MathAst>),
}

impl MathAst {
    pub fn number(digits: impl Into<String>) -> MathAst {
        MathAst::Number(digits.into())
    }

    pub fn var(c: char) -> MathAst {
        MathAst::Variable(c)
    }

    pub fn greek(name: &str) -> MathAst {
        MathAst::Greek(Greek::from_name(name).expect("unknown greek letter"))
    }

    pub fn binary(op: BinOp, lhs: MathAst, rhs: MathAst) -> MathAst {
        MathAst::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn frac(num: MathAst, den: MathAst) -> MathAst {
        MathAst::Fraction {
            num: Box::new(num),
            den: Box::new(den),
        }
    }

    pub fn pow(base: MathAst, exp: MathAst) -> MathAst {
        MathAst::Power {
            base: Box::new(base),
            exp: Box::new(exp),
        }
    }

    pub fn sub(base: MathAst, sub: MathAst) -> MathAst {
        MathAst::Subscript {
            base: Box::new(base),
            sub: Box::new(sub),
        }
    }

    pub fn apply(func: NamedFn, arg: MathAst) -> MathAst {
        MathAst::Apply {
            func: Callee::Named(func),
            arg: Box::new(arg),
        }
    }

    pub fn call(callee: MathAst, arg: MathAst) -> MathAst {
        MathAst::Apply {
            func: Callee::Expr(Box::new(callee)),
            arg: Box::new(arg),
        }
    }

    pub fn group(inner: MathAst) -> MathAst {
        MathAst::Group(Box::new(inner))
    }

    /// Builds a juxtaposition, collapsing the single-item case.
    pub fn seq(mut items: Vec<MathAst>) -> MathAst {
        if items.len() == 1 {
            items.pop().unwrap()
        } else {
            MathAst::Sequence(items)
        }
    }

    /// Number of nodes on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        1 + match self {
            MathAst::Number(_) | MathAst::Variable(_) | MathAst::Greek(_) => 0,
            MathAst::Binary { lhs, rhs, .. } => lhs.depth().max(rhs.depth()),
            MathAst::Fraction { num, den } => num.depth().max(den.depth()),
            MathAst::Power { base, exp } => base.depth().max(exp.depth()),
            MathAst::Subscript { base, sub } => base.depth().max(sub.depth()),
            MathAst::Apply { func, arg } => match func {
                Callee::Named(_) => arg.depth(),
                Callee::Expr(c) => c.depth().max(arg.depth()),
            },
            MathAst::Group(inner) => inner.depth(),
            MathAst::Sequence(items) => items.iter().map(MathAst::depth).max().unwrap_or(0),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(
            self,
            MathAst::Number(_) | MathAst::Variable(_) | MathAst::Greek(_)
        )
    }

    /// Variables and Greek letters, optionally subscripted: the shapes that may
    /// be applied like a function.
    pub fn is_callee_like(&self) -> bool {
        match self {
            MathAst::Variable(_) | MathAst::Greek(_) => true,
            MathAst::Subscript { base, .. } => {
                matches!(**base, MathAst::Variable(_) | MathAst::Greek(_))
            }
            _ => false,
        }
    }

    /// Checks the structural invariants: digit-run numbers and sequences of
    /// at least two items.
    pub fn is_well_formed(&self) -> bool {
        match self {
            MathAst::Number(d) => !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()),
            MathAst::Variable(c) => c.is_ascii_alphabetic(),
            MathAst::Greek(_) => true,
            MathAst::Binary { lhs, rhs, .. } => lhs.is_well_formed() && rhs.is_well_formed(),
            MathAst::Fraction { num, den } => num.is_well_formed() && den.is_well_formed(),
            MathAst::Power { base, exp } => base.is_well_formed() && exp.is_well_formed(),
            MathAst::Subscript { base, sub } => base.is_well_formed() && sub.is_well_formed(),
            MathAst::Apply { func, arg } => {
                let callee_ok = match func {
                    Callee::Named(_) => true,
                    Callee::Expr(c) => c.is_well_formed(),
                };
                callee_ok && arg.is_well_formed()
            }
            MathAst::Group(inner) => inner.is_well_formed(),
            MathAst::Sequence(items) => {
                items.len() >= 2 && items.iter().all(MathAst::is_well_formed)
            }
        }
    }
}

impl fmt::Display for MathAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&crate::latex::render_latex(self))
    }
}
