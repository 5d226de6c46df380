//! Boolean preconditions over flag/state pairs.
//!
//! Two concrete syntaxes share one grammar, `or` binding looser than `and`:
//!
//! ```text
//! expr := term (OR term)*
//! term := atom (AND atom)*
//! atom := FLAG == (true|false) | ( expr )
//! ```
//!
//! The plan DSL spells the operators `and`/`or`; tree documents spell them
//! `&&`/`||` and additionally accept the literal `true`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flagcore::FlagName;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagExpr {
    Leaf { flag: FlagName, expected: bool },
    /// The empty conjunction is the always-true expression.
    And(Vec<FlagExpr>),
    Or(Vec<FlagExpr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExprError {
    #[error("flag `{0}` missing from snapshot")]
    MissingFlag(String),
    #[error("column {column}: expected {expected}")]
    Syntax { column: usize, expected: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dialect {
    /// `and` / `or`
    Plan,
    /// `&&` / `||`
    Script,
}

impl Default for FlagExpr {
    fn default() -> Self {
        Self::always()
    }
}

impl FlagExpr {
    pub fn always() -> Self {
        FlagExpr::And(Vec::new())
    }

    pub fn leaf(flag: FlagName, expected: bool) -> Self {
        FlagExpr::Leaf { flag, expected }
    }

    /// Conjunction; a single operand is returned unwrapped.
    pub fn and(mut items: Vec<FlagExpr>) -> Self {
        if items.len() == 1 {
            items.pop().unwrap()
        } else {
            FlagExpr::And(items)
        }
    }

    /// Disjunction; a single operand is returned unwrapped.
    pub fn or(mut items: Vec<FlagExpr>) -> Self {
        if items.len() == 1 {
            items.pop().unwrap()
        } else {
            FlagExpr::Or(items)
        }
    }

    pub fn is_always(&self) -> bool {
        matches!(self, FlagExpr::And(v) if v.is_empty())
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<(&FlagName, bool)> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<(&'a FlagName, bool)>) {
        match self {
            FlagExpr::Leaf { flag, expected } => out.push((flag, *expected)),
            FlagExpr::And(v) | FlagExpr::Or(v) => v.iter().for_each(|e| e.collect_leaves(out)),
        }
    }

    /// Distinct flags in first-occurrence order.
    pub fn flags(&self) -> Vec<&FlagName> {
        let mut seen = BTreeSet::new();
        self.leaves()
            .into_iter()
            .filter_map(|(f, _)| seen.insert(f).then_some(f))
            .collect()
    }

    pub fn mentions(&self, flag: &FlagName) -> bool {
        self.leaves().iter().any(|(f, _)| *f == flag)
    }

    pub fn eval_with<F>(&self, lookup: &F) -> Result<bool, ExprError>
    where
        F: Fn(&FlagName) -> Option<bool>,
    {
        match self {
            FlagExpr::Leaf { flag, expected } => lookup(flag)
                .map(|v| v == *expected)
                .ok_or_else(|| ExprError::MissingFlag(flag.to_string())),
            FlagExpr::And(v) => {
                for e in v {
                    if !e.eval_with(lookup)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            FlagExpr::Or(v) => {
                for e in v {
                    if e.eval_with(lookup)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
        }
    }

    /// Replaces every leaf flag through `map`; leaves with no mapping are kept.
    pub fn rename(&self, map: &BTreeMap<FlagName, FlagName>) -> FlagExpr {
        match self {
            FlagExpr::Leaf { flag, expected } => FlagExpr::Leaf {
                flag: map.get(flag).cloned().unwrap_or_else(|| flag.clone()),
                expected: *expected,
            },
            FlagExpr::And(v) => FlagExpr::And(v.iter().map(|e| e.rename(map)).collect()),
            FlagExpr::Or(v) => FlagExpr::Or(v.iter().map(|e| e.rename(map)).collect()),
        }
    }

    pub fn render(&self, dialect: Dialect) -> String {
        if self.is_always() {
            return "true".to_string();
        }
        let mut out = String::new();
        self.render_into(dialect, &mut out);
        out
    }

    fn render_into(&self, dialect: Dialect, out: &mut String) {
        let (and, or) = match dialect {
            Dialect::Plan => (" and ", " or "),
            Dialect::Script => (" && ", " || "),
        };
        match self {
            FlagExpr::Leaf { flag, expected } => {
                let _ = write!(out, "{flag}=={expected}");
            }
            FlagExpr::And(v) => {
                for (i, e) in v.iter().enumerate() {
                    if i > 0 {
                        out.push_str(and);
                    }
                    // Nested conjunctions keep their parentheses so the
                    // tree shape survives a round trip.
                    let paren = !matches!(e, FlagExpr::Leaf { .. });
                    e.render_child(dialect, paren, out);
                }
            }
            FlagExpr::Or(v) => {
                for (i, e) in v.iter().enumerate() {
                    if i > 0 {
                        out.push_str(or);
                    }
                    let paren = matches!(e, FlagExpr::Or(_)) || e.is_always();
                    e.render_child(dialect, paren, out);
                }
            }
        }
    }

    fn render_child(&self, dialect: Dialect, paren: bool, out: &mut String) {
        if paren {
            out.push('(');
        }
        if self.is_always() {
            out.push_str("true");
        } else {
            self.render_into(dialect, out);
        }
        if paren {
            out.push(')');
        }
    }

    pub fn parse(text: &str, dialect: Dialect) -> Result<FlagExpr, ExprError> {
        let tokens = lex(text, dialect)?;
        let mut p = ExprParser {
            tokens,
            pos: 0,
            end_column: text.chars().count() + 1,
            dialect,
        };
        let e = p.expr()?;
        if let Some(t) = p.peek() {
            return Err(ExprError::Syntax {
                column: t.column,
                expected: format!("`{}` or end of expression", p.or_word()),
            });
        }
        Ok(e)
    }
}

/// Evaluates `expr` over a snapshot; every leaf flag must be present.
pub fn eval_expr(expr: &FlagExpr, snapshot: &BTreeMap<FlagName, bool>) -> Result<bool, ExprError> {
    expr.eval_with(&|f: &FlagName| snapshot.get(f).copied())
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    EqEq,
    And,
    Or,
    LParen,
    RParen,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    column: usize,
}

fn lex(text: &str, dialect: Dialect) -> Result<Vec<Token>, ExprError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let two: String = chars[i..chars.len().min(i + 2)].iter().collect();
        let tok = if c == '(' {
            i += 1;
            Tok::LParen
        } else if c == ')' {
            i += 1;
            Tok::RParen
        } else if two == "==" {
            i += 2;
            Tok::EqEq
        } else if dialect == Dialect::Script && two == "&&" {
            i += 2;
            Tok::And
        } else if dialect == Dialect::Script && two == "||" {
            i += 2;
            Tok::Or
        } else if c.is_ascii_alphanumeric() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            match (dialect, word.as_str()) {
                (Dialect::Plan, "and") => Tok::And,
                (Dialect::Plan, "or") => Tok::Or,
                _ => Tok::Ident(word),
            }
        } else {
            return Err(ExprError::Syntax {
                column,
                expected: "flag name, `(` or operator".into(),
            });
        };
        out.push(Token { tok, column });
    }
    Ok(out)
}

struct ExprParser {
    tokens: Vec<Token>,
    pos: usize,
    end_column: usize,
    dialect: Dialect,
}

impl ExprParser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn column(&self) -> usize {
        self.peek().map_or(self.end_column, |t| t.column)
    }

    fn or_word(&self) -> &'static str {
        match self.dialect {
            Dialect::Plan => "or",
            Dialect::Script => "||",
        }
    }

    fn err<T>(&self, expected: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Syntax {
            column: self.column(),
            expected: expected.into(),
        })
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek().map(|t| &t.tok) == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<FlagExpr, ExprError> {
        let mut items = vec![self.term()?];
        while self.eat(&Tok::Or) {
            items.push(self.term()?);
        }
        Ok(FlagExpr::or(items))
    }

    fn term(&mut self) -> Result<FlagExpr, ExprError> {
        let mut items = vec![self.atom()?];
        while self.eat(&Tok::And) {
            items.push(self.atom()?);
        }
        Ok(FlagExpr::and(items))
    }

    fn atom(&mut self) -> Result<FlagExpr, ExprError> {
        if self.eat(&Tok::LParen) {
            let e = self.expr()?;
            if !self.eat(&Tok::RParen) {
                return self.err("`)`");
            }
            return Ok(e);
        }
        let Some(Token {
            tok: Tok::Ident(word),
            column,
        }) = self.peek().cloned()
        else {
            return self.err("flag comparison or `(`");
        };
        self.pos += 1;
        if self.dialect == Dialect::Script && word == "true" {
            return Ok(FlagExpr::always());
        }
        let flag = FlagName::new(word).map_err(|_| ExprError::Syntax {
            column,
            expected: "flag name ending in `_FLG`".into(),
        })?;
        if !self.eat(&Tok::EqEq) {
            return self.err("`==`");
        }
        let expected = match self.peek().map(|t| &t.tok) {
            Some(Tok::Ident(v)) if v == "true" || v == "True" => true,
            Some(Tok::Ident(v)) if v == "false" || v == "False" => false,
            _ => return self.err("`true` or `false`"),
        };
        self.pos += 1;
        Ok(FlagExpr::Leaf { flag, expected })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(n: &str) -> FlagName {
        FlagName::new(n).unwrap()
    }

    fn leaf(n: &str, v: bool) -> FlagExpr {
        FlagExpr::leaf(f(n), v)
    }

    #[test]
    fn and_binds_tighter_than_or() {
        let e = FlagExpr::parse("A_FLG==true or B_FLG==false and C_FLG==true", Dialect::Plan)
            .unwrap();
        assert_eq!(
            e,
            FlagExpr::Or(vec![
                leaf("A_FLG", true),
                FlagExpr::And(vec![leaf("B_FLG", false), leaf("C_FLG", true)])
            ])
        );
    }

    #[test]
    fn parens_override_precedence() {
        let e = FlagExpr::parse("(A_FLG==true || B_FLG==true) && C_FLG==true", Dialect::Script)
            .unwrap();
        assert_eq!(
            e,
            FlagExpr::And(vec![
                FlagExpr::Or(vec![leaf("A_FLG", true), leaf("B_FLG", true)]),
                leaf("C_FLG", true)
            ])
        );
    }

    #[test]
    fn eval_examples() {
        let snap: BTreeMap<_, _> = [(f("A_FLG"), true), (f("B_FLG"), false)].into();
        let e = FlagExpr::And(vec![leaf("A_FLG", true), leaf("B_FLG", true)]);
        assert!(!eval_expr(&e, &snap).unwrap());
        assert!(eval_expr(&FlagExpr::always(), &snap).unwrap());
        assert!(eval_expr(&FlagExpr::always(), &BTreeMap::new()).unwrap());
        assert_eq!(
            eval_expr(&leaf("C_FLG", true), &snap),
            Err(ExprError::MissingFlag("C_FLG".into()))
        );
    }

    #[test]
    fn figure_statement_three_is_true_when_both_set() {
        let e = FlagExpr::parse(
            "DUMPTRUCK_AT_LOADING_SITE_FLG==true and SENSING_ARRIVAL_FLG==true",
            Dialect::Plan,
        )
        .unwrap();
        let snap: BTreeMap<_, _> = [
            (f("DUMPTRUCK_AT_LOADING_SITE_FLG"), true),
            (f("SENSING_ARRIVAL_FLG"), true),
        ]
        .into();
        assert!(eval_expr(&e, &snap).unwrap());
    }

    #[test]
    fn syntax_errors_are_located() {
        let err = FlagExpr::parse("A_FLG==maybe", Dialect::Plan).unwrap_err();
        assert_eq!(
            err,
            ExprError::Syntax {
                column: 8,
                expected: "`true` or `false`".into()
            }
        );
        let err = FlagExpr::parse("(A_FLG==true", Dialect::Plan).unwrap_err();
        assert!(matches!(err, ExprError::Syntax { column: 13, .. }));
        let err = FlagExpr::parse("a_flag==true", Dialect::Plan).unwrap_err();
        assert!(matches!(err, ExprError::Syntax { column: 1, .. }));
        assert!(FlagExpr::parse("", Dialect::Plan).is_err());
        assert!(FlagExpr::parse("A_FLG==true and", Dialect::Plan).is_err());
        assert!(FlagExpr::parse("A_FLG==true && B_FLG==true", Dialect::Plan).is_err());
    }

    #[test]
    fn script_true_literal() {
        assert!(FlagExpr::parse("true", Dialect::Script).unwrap().is_always());
        assert_eq!(FlagExpr::always().render(Dialect::Script), "true");
    }

    #[test]
    fn nested_conjunction_keeps_shape() {
        let e = FlagExpr::And(vec![
            FlagExpr::And(vec![leaf("A_FLG", true), leaf("B_FLG", true)]),
            leaf("C_FLG", false),
        ]);
        let text = e.render(Dialect::Plan);
        assert_eq!(text, "(A_FLG==true and B_FLG==true) and C_FLG==false");
        assert_eq!(FlagExpr::parse(&text, Dialect::Plan).unwrap(), e);
    }
}
