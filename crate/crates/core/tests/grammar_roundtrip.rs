use spoken_latex::ast::MathAst;
use spoken_latex::latex::{normalize_latex, parse_latex, render_latex};
use spoken_latex::spoken::{parse_spoken, parse_spoken_ast};
use spoken_latex::verbalize::{sample_expression, verbalize, GrammarConfig, VerbalStyle};

fn depth4() -> GrammarConfig {
    GrammarConfig {
        max_depth: 4,
        ..GrammarConfig::default()
    }
}

#[test]
fn spoken_round_trip_all_styles() {
    let cfg = depth4();
    for seed in 0..3000u64 {
        let ast = sample_expression(&cfg, seed);
        let want = normalize_latex(&render_latex(&ast));
        for style in VerbalStyle::all() {
            let se = verbalize(&ast, style);
            let got = parse_spoken(&se).unwrap_or_else(|e| panic!("{se:?}: {e}\nast {ast:?}"));
            assert_eq!(normalize_latex(&got), want, "seed {seed} style {style:?}: {se}");
        }
    }
}

#[test]
fn spoken_round_trip_is_structural_for_lowercase_trees() {
    let cfg = depth4();
    for seed in 10_000..11_000u64 {
        let ast = sample_expression(&cfg, seed);
        for style in VerbalStyle::all() {
            let back = parse_spoken_ast(&verbalize(&ast, style)).unwrap();
            assert_eq!(back, ast);
        }
    }
}

#[test]
fn style_variants_share_latex() {
    let cfg = depth4();
    for seed in 0..500u64 {
        let ast = sample_expression(&cfg, seed);
        let outs: Vec<String> = VerbalStyle::all()
            .into_iter()
            .map(|s| normalize_latex(&parse_spoken(&verbalize(&ast, s)).unwrap()))
            .collect();
        assert!(outs.windows(2).all(|w| w[0] == w[1]));
    }
}

#[test]
fn verbalizer_output_is_lowercase_single_spaced() {
    let cfg = depth4();
    for seed in 0..500u64 {
        let ast = sample_expression(&cfg, seed);
        for style in VerbalStyle::all() {
            let se = verbalize(&ast, style);
            assert!(!se.contains("  ") && !se.starts_with(' ') && !se.ends_with(' '));
            assert_eq!(se, se.to_lowercase());
        }
    }
}

#[test]
fn non_canonical_trees_still_round_trip_through_speech() {
    // a+(b+c) without explicit parentheses and a nested over-fraction in a
    // product: the quantity markers keep the structure.
    let trees = [
        "a+\\frac{b+c}{d}",
        "\\frac{\\frac{a}{b}}{c}",
        "2\\frac{x}{y}",
        "x^{a+b}y",
        "\\sin(x^{2})y",
        "x_{20}^{3}",
    ];
    for src in trees {
        let ast: MathAst = parse_latex(src).unwrap();
        for style in VerbalStyle::all() {
            let se = verbalize(&ast, style);
            assert_eq!(parse_spoken_ast(&se).unwrap(), ast, "{src}: {se}");
        }
    }
}
