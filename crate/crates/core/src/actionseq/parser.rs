use thiserror::Error;

use super::expr::{Dialect, ExprError, FlagExpr};
use super::{ActionSequence, ActionStatement, GeneratedFlag, Skill};
use crate::flagcore::FlagName;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("line {line}, column {column}: expected {expected}")]
    SyntaxError {
        line: usize,
        column: usize,
        expected: String,
    },
    #[error("line {line}: unknown skill `{name}`")]
    UnknownSkill { name: String, line: usize },
    #[error("line {line}: `{skill}` takes {want} arguments, got {got}")]
    BadArity {
        skill: String,
        got: usize,
        want: usize,
        line: usize,
    },
}

impl ParseError {
    pub fn line(&self) -> usize {
        match self {
            ParseError::SyntaxError { line, .. }
            | ParseError::UnknownSkill { line, .. }
            | ParseError::BadArity { line, .. } => *line,
        }
    }
}

/// Parses Action Sequence text. Blank lines and whole-line `#` comments are
/// skipped; flag declarations must follow every statement.
pub fn parse(source: &str) -> Result<ActionSequence, ParseError> {
    let mut seq = ActionSequence::default();
    for (i, raw) in source.lines().enumerate() {
        let line_no = i + 1;
        let indent = raw.chars().take_while(|c| c.is_whitespace()).count();
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cur = Cursor::new(line_no, raw, indent);
        if line.starts_with(|c: char| c.is_ascii_digit()) {
            if !seq.generated_flags.is_empty() {
                return Err(cur.error("flag declaration (statements must precede declarations)"));
            }
            let stmt = parse_statement(&mut cur, seq.statements.len() + 1)?;
            seq.statements.push(stmt);
        } else {
            seq.generated_flags.push(parse_declaration(&mut cur)?);
        }
    }
    Ok(seq)
}

struct Cursor {
    line: usize,
    chars: Vec<char>,
    pos: usize,
}

impl Cursor {
    fn new(line: usize, raw: &str, start: usize) -> Self {
        Self {
            line,
            chars: raw.trim_end().chars().collect(),
            pos: start,
        }
    }

    fn error(&self, expected: impl Into<String>) -> ParseError {
        self.error_at(self.pos, expected)
    }

    fn error_at(&self, pos: usize, expected: impl Into<String>) -> ParseError {
        ParseError::SyntaxError {
            line: self.line,
            column: pos + 1,
            expected: expected.into(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("`{c}`")))
        }
    }

    fn take_while(&mut self, f: impl Fn(char) -> bool) -> String {
        let start = self.pos;
        while self.peek().is_some_and(&f) {
            self.pos += 1;
        }
        self.chars[start..self.pos].iter().collect()
    }

    fn rest(&self) -> String {
        self.chars[self.pos.min(self.chars.len())..].iter().collect()
    }

    fn at_end(&self) -> bool {
        self.pos >= self.chars.len()
    }
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_'
}

fn parse_identifier(cur: &mut Cursor, what: &str) -> Result<String, ParseError> {
    cur.skip_ws();
    if !cur.peek().is_some_and(|c| c.is_ascii_lowercase()) {
        return Err(cur.error(what));
    }
    Ok(cur.take_while(is_ident_char))
}

fn parse_statement(cur: &mut Cursor, want_index: usize) -> Result<ActionStatement, ParseError> {
    let start = cur.pos;
    let digits = cur.take_while(|c| c.is_ascii_digit());
    let index: usize = digits
        .parse()
        .map_err(|_| cur.error_at(start, "statement index"))?;
    if index != want_index {
        return Err(cur.error_at(start, format!("statement index {want_index}")));
    }
    cur.expect('.')?;
    cur.skip_ws();

    let name = parse_identifier(cur, "skill name")?;
    let skill = Skill::from_name(&name).ok_or_else(|| ParseError::UnknownSkill {
        name: name.clone(),
        line: cur.line,
    })?;
    cur.skip_ws();
    cur.expect('(')?;
    let mut args = Vec::new();
    cur.skip_ws();
    if cur.peek() != Some(')') {
        loop {
            args.push(parse_identifier(cur, "identifier")?);
            cur.skip_ws();
            match cur.peek() {
                Some(',') => cur.pos += 1,
                Some(')') => break,
                _ => return Err(cur.error("`,` or `)`")),
            }
        }
    }
    cur.expect(')')?;
    if args.len() != skill.arity() {
        return Err(ParseError::BadArity {
            skill: name,
            got: args.len(),
            want: skill.arity(),
            line: cur.line,
        });
    }
    let machine = args.remove(0);

    // Reasoning runs from the first `#` to end of line.
    let hash = cur.chars[cur.pos..]
        .iter()
        .position(|&c| c == '#')
        .map(|p| p + cur.pos);
    let body_end = hash.unwrap_or(cur.chars.len());
    let reasoning = hash
        .map(|h| cur.chars[h + 1..].iter().collect::<String>().trim().to_string())
        .unwrap_or_default();

    cur.skip_ws();
    let mut precondition = FlagExpr::always();
    if cur.pos < body_end {
        let kw_pos = cur.pos;
        let kw = cur.take_while(is_ident_char);
        if kw != "depends_on" {
            return Err(cur.error_at(kw_pos, "`depends_on`, `#` or end of line"));
        }
        let expr_start = cur.pos;
        let text: String = cur.chars[expr_start..body_end].iter().collect();
        precondition = FlagExpr::parse(&text, Dialect::Plan).map_err(|e| match e {
            ExprError::Syntax { column, expected } => {
                cur.error_at(expr_start + column - 1, expected)
            }
            ExprError::MissingFlag(_) => unreachable!("parsing does not evaluate"),
        })?;
        if precondition.is_always() {
            return Err(cur.error_at(expr_start, "precondition expression"));
        }
    }

    Ok(ActionStatement {
        index,
        skill,
        machine,
        params: args,
        precondition,
        reasoning,
    })
}

fn parse_declaration(cur: &mut Cursor) -> Result<GeneratedFlag, ParseError> {
    let start = cur.pos;
    let name = cur.take_while(|c| c.is_ascii_alphanumeric() || c == '_');
    let name = FlagName::new(name)
        .map_err(|_| cur.error_at(start, "statement or flag declaration `NAME_FLG: description`"))?;
    cur.skip_ws();
    cur.expect(':')?;
    let description = cur.rest().trim().to_string();
    if description.is_empty() {
        return Err(cur.error("flag description"));
    }
    cur.pos = cur.chars.len();
    debug_assert!(cur.at_end());
    Ok(GeneratedFlag { name, description })
}
