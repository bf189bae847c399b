//! Spoken mathematics to LaTeX: a shared expression grammar, a simulated
//! recognizer channel, a two-stage neural corrector and translator, and the
//! evaluation metrics.

pub mod ast;
pub mod channel;
pub mod corpus;
pub mod latex;
pub mod metrics;
pub mod neural;
pub mod pipeline;
pub mod spoken;
pub mod verbalize;

pub use ast::MathAst;
pub use channel::{builtin_profiles, corrupt, ChannelProfile};
pub use corpus::{generate_corpus, MathSample};
pub use latex::{normalize_latex, parse_latex, render_latex, tokenize_latex};
pub use metrics::{evaluate_corpus, EvalReport};
pub use pipeline::{train, Coupling, DecodeConfig, Pipeline, TrainConfig};
pub use spoken::parse_spoken;
pub use verbalize::{sample_expression, verbalize, GrammarConfig, VerbalStyle};
