//! Lexer and recursive-descent parser for the supported SQL subset:
//!
//! ```text
//! query   := SELECT [DISTINCT] select FROM table {"," table} {join} [WHERE conj] [LIMIT 1]
//! select  := "*" | item {"," item}
//! item    := column | ident ".*" | "1" | COUNT "(" "*" ")"
//! table   := ident [[AS] ident]
//! join    := [INNER | LEFT [OUTER]] JOIN table ON column "=" column
//! conj    := unary {AND unary}
//! unary   := NOT unary | "(" conj ")" | operand [cmp operand | IS [NOT] NULL]
//! operand := column | integer | 'string' | TRUE | FALSE | NULL | "?" | ":" ident | MyUserId | Now
//! ```

use super::ast::{ColumnName, JoinClause, JoinKind, QueryAst, SelectItem, SelectList, TableRef};
use super::predicate::{CmpOp, Predicate, Term};
use super::scalar::{is_session_param, Scalar};
use super::SqlError;

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    Placeholder,
    Named(String),
    Sym(&'static str),
    Eof,
}

#[derive(Clone, Debug)]
pub(crate) struct Spanned {
    pub tok: Tok,
    pub line: usize,
    pub column: usize,
}

const SYMBOLS: [&str; 16] = [
    "<>", "!=", "<=", ">=", "||", ",", ".", "*", "(", ")", "=", "<", ">", "-", "+", ";",
];

pub(crate) fn lex(text: &str) -> Result<Vec<Spanned>, SqlError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let advance = |i: &mut usize, line: &mut usize, col: &mut usize, c: char| {
        *i += 1;
        if c == '\n' {
            *line += 1;
            *col = 1;
        } else {
            *col += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col, c);
            continue;
        }
        let (start_line, start_col) = (line, col);
        let push = |out: &mut Vec<Spanned>, tok| {
            out.push(Spanned {
                tok,
                line: start_line,
                column: start_col,
            })
        };
        if c.is_ascii_alphabetic() || c == '_' {
            let mut s = String::new();
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                s.push(chars[i]);
                {
                    let ch = chars[i];
                    advance(&mut i, &mut line, &mut col, ch);
                }
            }
            push(&mut out, Tok::Ident(s));
        } else if c.is_ascii_digit() {
            let mut s = String::new();
            while i < chars.len() && chars[i].is_ascii_digit() {
                s.push(chars[i]);
                {
                    let ch = chars[i];
                    advance(&mut i, &mut line, &mut col, ch);
                }
            }
            let v = s.parse::<i64>().map_err(|_| SqlError::Syntax {
                line: start_line,
                column: start_col,
                message: format!("integer literal `{s}` out of range"),
            })?;
            push(&mut out, Tok::Int(v));
        } else if c == '\'' {
            advance(&mut i, &mut line, &mut col, c);
            let mut s = String::new();
            loop {
                if i >= chars.len() {
                    return Err(SqlError::Syntax {
                        line: start_line,
                        column: start_col,
                        message: "unterminated string literal".into(),
                    });
                }
                let ch = chars[i];
                advance(&mut i, &mut line, &mut col, ch);
                if ch == '\'' {
                    if i < chars.len() && chars[i] == '\'' {
                        s.push('\'');
                        advance(&mut i, &mut line, &mut col, '\'');
                    } else {
                        break;
                    }
                } else {
                    s.push(ch);
                }
            }
            push(&mut out, Tok::Str(s));
        } else if c == '?' {
            advance(&mut i, &mut line, &mut col, c);
            push(&mut out, Tok::Placeholder);
        } else if c == ':'
            && i + 1 < chars.len()
            && (chars[i + 1].is_ascii_alphabetic() || chars[i + 1] == '_')
        {
            advance(&mut i, &mut line, &mut col, c);
            let mut s = String::new();
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                s.push(chars[i]);
                {
                    let ch = chars[i];
                    advance(&mut i, &mut line, &mut col, ch);
                }
            }
            push(&mut out, Tok::Named(s));
        } else {
            let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
            let sym = SYMBOLS
                .iter()
                .find(|s| rest.starts_with(**s))
                .ok_or_else(|| SqlError::Syntax {
                    line: start_line,
                    column: start_col,
                    message: format!("unexpected character `{c}`"),
                })?;
            for ch in sym.chars() {
                advance(&mut i, &mut line, &mut col, ch);
            }
            push(&mut out, Tok::Sym(sym));
        }
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        column: col,
    });
    Ok(out)
}

/// Keywords that end an operand or clause; never accepted as identifiers.
const RESERVED: [&str; 24] = [
    "SELECT", "DISTINCT", "FROM", "WHERE", "AND", "OR", "NOT", "IS", "NULL", "TRUE", "FALSE",
    "INNER", "LEFT", "RIGHT", "OUTER", "JOIN", "ON", "LIMIT", "ORDER", "GROUP", "HAVING", "UNION",
    "AS", "BY",
];

/// Constructs outside the grammar that get a dedicated error.
const UNSUPPORTED: [(&str, &str); 10] = [
    ("OR", "OR"),
    ("ORDER", "ORDER BY"),
    ("GROUP", "GROUP BY"),
    ("HAVING", "HAVING"),
    ("UNION", "UNION"),
    ("RIGHT", "RIGHT JOIN"),
    ("IN", "IN"),
    ("EXISTS", "EXISTS"),
    ("LIKE", "LIKE"),
    ("OFFSET", "OFFSET"),
];

pub(crate) struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    placeholders: usize,
}

impl Parser {
    pub(crate) fn new(toks: Vec<Spanned>) -> Self {
        Parser {
            toks,
            pos: 0,
            placeholders: 0,
        }
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, message: impl Into<String>) -> SqlError {
        let s = &self.toks[self.pos];
        SqlError::Syntax {
            line: s.line,
            column: s.column,
            message: message.into(),
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), SqlError> {
        self.check_unsupported()?;
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.error(format!("expected {kw}, found {}", describe(self.peek()))))
        }
    }

    fn eat_sym(&mut self, sym: &str) -> bool {
        if matches!(self.peek(), Tok::Sym(s) if *s == sym) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, sym: &str) -> Result<(), SqlError> {
        if self.eat_sym(sym) {
            Ok(())
        } else {
            Err(self.error(format!("expected `{sym}`, found {}", describe(self.peek()))))
        }
    }

    fn check_unsupported(&self) -> Result<(), SqlError> {
        if let Tok::Ident(s) = self.peek() {
            if let Some((_, name)) = UNSUPPORTED
                .iter()
                .find(|(kw, _)| s.eq_ignore_ascii_case(kw))
            {
                return Err(SqlError::Unsupported((*name).to_string()));
            }
        }
        if matches!(self.peek(), Tok::Ident(s) if s.eq_ignore_ascii_case("SELECT")) {
            return Err(SqlError::Unsupported("subquery".into()));
        }
        Ok(())
    }

    fn ident(&mut self, what: &str) -> Result<String, SqlError> {
        self.check_unsupported()?;
        match self.peek().clone() {
            Tok::Ident(s) if !RESERVED.iter().any(|k| s.eq_ignore_ascii_case(k)) => {
                self.bump();
                Ok(s)
            }
            other => Err(self.error(format!("expected {what}, found {}", describe(&other)))),
        }
    }

    pub(crate) fn query(&mut self) -> Result<QueryAst, SqlError> {
        if !self.eat_kw("SELECT") {
            return Err(self.error(format!("expected SELECT, found {}", describe(self.peek()))));
        }
        let distinct = self.eat_kw("DISTINCT");
        let select = self.select_list()?;
        self.expect_kw("FROM")?;
        let mut from = vec![self.table_ref()?];
        while self.eat_sym(",") {
            from.push(self.table_ref()?);
        }
        let mut joins = Vec::new();
        loop {
            self.check_unsupported()?;
            let kind = if self.eat_kw("INNER") {
                JoinKind::Inner
            } else if self.eat_kw("LEFT") {
                self.eat_kw("OUTER");
                JoinKind::Left
            } else if self.is_kw("JOIN") {
                JoinKind::Inner
            } else {
                break;
            };
            self.expect_kw("JOIN")?;
            let table = self.table_ref()?;
            self.expect_kw("ON")?;
            let a = self.column_name()?;
            self.expect_sym("=")?;
            let b = self.column_name()?;
            joins.push(JoinClause {
                kind,
                table,
                on: (a, b),
            });
        }
        let filter = if self.eat_kw("WHERE") {
            self.conjunction()?
        } else {
            Predicate::True
        };
        self.check_unsupported()?;
        let limit_one = if self.eat_kw("LIMIT") {
            match self.bump() {
                Tok::Int(1) => true,
                _ => return Err(SqlError::Unsupported("LIMIT other than 1".into())),
            }
        } else {
            false
        };
        self.check_unsupported()?;
        self.eat_sym(";");
        if *self.peek() != Tok::Eof {
            return Err(self.error(format!("unexpected {}", describe(self.peek()))));
        }
        let ast = QueryAst {
            select,
            distinct,
            from,
            joins,
            filter,
            limit_one,
        };
        let mut seen = std::collections::BTreeSet::new();
        for t in ast.table_refs() {
            if !seen.insert(t.binding().to_string()) {
                return Err(SqlError::DuplicateAlias(t.binding().to_string()));
            }
        }
        Ok(ast)
    }

    fn select_list(&mut self) -> Result<SelectList, SqlError> {
        if self.eat_sym("*") {
            return Ok(SelectList::Star);
        }
        let mut items = vec![self.select_item()?];
        while self.eat_sym(",") {
            items.push(self.select_item()?);
        }
        Ok(SelectList::Items(items))
    }

    fn select_item(&mut self) -> Result<SelectItem, SqlError> {
        match self.peek().clone() {
            Tok::Int(1) => {
                self.bump();
                Ok(SelectItem::One)
            }
            Tok::Ident(s)
                if s.eq_ignore_ascii_case("COUNT") && *self.peek_at(1) == Tok::Sym("(") =>
            {
                self.bump();
                self.bump();
                if !self.eat_sym("*") {
                    return Err(SqlError::Unsupported("COUNT over an expression".into()));
                }
                self.expect_sym(")")?;
                Ok(SelectItem::CountStar)
            }
            Tok::Ident(s) if *self.peek_at(1) == Tok::Sym("(") => Err(SqlError::Unsupported(
                format!("function {}", s.to_uppercase()),
            )),
            Tok::Ident(_)
                if *self.peek_at(1) == Tok::Sym(".") && *self.peek_at(2) == Tok::Sym("*") =>
            {
                let t = self.ident("table name")?;
                self.bump();
                self.bump();
                Ok(SelectItem::TableStar(t))
            }
            _ => Ok(SelectItem::Column(self.column_name()?)),
        }
    }

    fn table_ref(&mut self) -> Result<TableRef, SqlError> {
        if *self.peek() == Tok::Sym("(") {
            return Err(SqlError::Unsupported("subquery".into()));
        }
        let table = self.ident("table name")?;
        self.eat_kw("AS");
        let alias = match self.peek() {
            Tok::Ident(s)
                if !RESERVED.iter().any(|k| s.eq_ignore_ascii_case(k))
                    && !UNSUPPORTED.iter().any(|(k, _)| s.eq_ignore_ascii_case(k)) =>
            {
                Some(self.ident("alias")?)
            }
            _ => None,
        };
        Ok(TableRef { table, alias })
    }

    fn column_name(&mut self) -> Result<ColumnName, SqlError> {
        let first = self.ident("column")?;
        if self.eat_sym(".") {
            let name = self.ident("column")?;
            Ok(ColumnName::qualified(first, name))
        } else {
            Ok(ColumnName::bare(first))
        }
    }

    fn conjunction(&mut self) -> Result<Predicate<ColumnName>, SqlError> {
        let mut parts = vec![self.unary()?];
        loop {
            self.check_unsupported()?;
            if self.eat_kw("AND") {
                parts.push(self.unary()?);
            } else {
                break;
            }
        }
        Ok(Predicate::from_conjuncts(parts))
    }

    fn unary(&mut self) -> Result<Predicate<ColumnName>, SqlError> {
        self.check_unsupported()?;
        if self.eat_kw("NOT") {
            return Ok(Predicate::Not(Box::new(self.unary()?)));
        }
        if *self.peek() == Tok::Sym("(") {
            if matches!(self.peek_at(1), Tok::Ident(s) if s.eq_ignore_ascii_case("SELECT")) {
                return Err(SqlError::Unsupported("subquery".into()));
            }
            self.bump();
            let inner = self.conjunction()?;
            self.expect_sym(")")?;
            return Ok(inner);
        }
        let left = self.operand()?;
        if self.eat_kw("IS") {
            let negated = self.eat_kw("NOT");
            self.expect_kw("NULL")?;
            let p = Predicate::IsNull(left);
            return Ok(if negated {
                Predicate::Not(Box::new(p))
            } else {
                p
            });
        }
        let op = match self.peek() {
            Tok::Sym("=") => Some(CmpOp::Eq),
            Tok::Sym("<>") | Tok::Sym("!=") => Some(CmpOp::Ne),
            Tok::Sym("<") => Some(CmpOp::Lt),
            Tok::Sym("<=") => Some(CmpOp::Le),
            Tok::Sym(">") => Some(CmpOp::Gt),
            Tok::Sym(">=") => Some(CmpOp::Ge),
            Tok::Sym("+") | Tok::Sym("-") | Tok::Sym("*") | Tok::Sym("||") => {
                return Err(SqlError::Unsupported("arithmetic expression".into()))
            }
            _ => None,
        };
        match op {
            Some(op) => {
                self.bump();
                let right = self.operand()?;
                if matches!(
                    self.peek(),
                    Tok::Sym("+") | Tok::Sym("-") | Tok::Sym("*") | Tok::Sym("||")
                ) {
                    return Err(SqlError::Unsupported("arithmetic expression".into()));
                }
                Ok(Predicate::Cmp(op, left, right))
            }
            None => Ok(Predicate::Truthy(left)),
        }
    }

    fn operand(&mut self) -> Result<Term<ColumnName>, SqlError> {
        self.check_unsupported()?;
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Term::Scalar(Scalar::Int(v)))
            }
            Tok::Sym("-") if matches!(self.peek_at(1), Tok::Int(_)) => {
                self.bump();
                let Tok::Int(v) = self.bump() else {
                    unreachable!()
                };
                Ok(Term::Scalar(Scalar::Int(-v)))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Term::Scalar(Scalar::Str(s)))
            }
            Tok::Placeholder => {
                self.bump();
                self.placeholders += 1;
                Ok(Term::Scalar(Scalar::Placeholder(self.placeholders)))
            }
            Tok::Named(name) => {
                self.bump();
                Ok(Term::Scalar(Scalar::Request(name)))
            }
            Tok::Ident(s) if s.eq_ignore_ascii_case("TRUE") => {
                self.bump();
                Ok(Term::Scalar(Scalar::Bool(true)))
            }
            Tok::Ident(s) if s.eq_ignore_ascii_case("FALSE") => {
                self.bump();
                Ok(Term::Scalar(Scalar::Bool(false)))
            }
            Tok::Ident(s) if s.eq_ignore_ascii_case("NULL") => {
                self.bump();
                Ok(Term::Scalar(Scalar::Null))
            }
            Tok::Ident(s) if is_session_param(&s) && *self.peek_at(1) != Tok::Sym(".") => {
                self.bump();
                Ok(Term::Scalar(Scalar::Session(s)))
            }
            Tok::Ident(s) if *self.peek_at(1) == Tok::Sym("(") => Err(SqlError::Unsupported(
                format!("function {}", s.to_uppercase()),
            )),
            Tok::Sym("(") => Err(SqlError::Unsupported("subquery".into())),
            _ => Ok(Term::Col(self.column_name()?)),
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Int(v) => format!("`{v}`"),
        Tok::Str(s) => format!("'{s}'"),
        Tok::Placeholder => "`?`".into(),
        Tok::Named(s) => format!("`:{s}`"),
        Tok::Sym(s) => format!("`{s}`"),
        Tok::Eof => "end of input".into(),
    }
}

/// Parses one query of the supported SQL subset.
pub fn parse_sql(text: &str) -> Result<QueryAst, SqlError> {
    Parser::new(lex(text)?).query()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relational::QueryShape;

    #[test]
    fn role_query_has_two_placeholders() {
        let q = parse_sql("SELECT * FROM roles WHERE user_id = ? AND course_id = ?").unwrap();
        assert_eq!(q.shape(), QueryShape::Psj);
        assert_eq!(q.placeholder_count(), 2);
        assert_eq!(
            q.filter.scalars(),
            vec![&Scalar::Placeholder(1), &Scalar::Placeholder(2)]
        );
    }

    #[test]
    fn no_filter_is_true() {
        let q = parse_sql("SELECT * FROM t").unwrap();
        assert_eq!(q.filter, Predicate::True);
    }

    #[test]
    fn unsupported_constructs_are_named() {
        for (sql, name) in [
            ("SELECT a FROM t ORDER BY a", "ORDER BY"),
            ("SELECT a FROM t WHERE a = 1 OR a = 2", "OR"),
            ("SELECT a FROM t WHERE a = (SELECT b FROM u)", "subquery"),
            ("SELECT a FROM t GROUP BY a", "GROUP BY"),
            ("SELECT SUM(a) FROM t", "function SUM"),
            ("SELECT a FROM t LIMIT 2", "LIMIT other than 1"),
        ] {
            match parse_sql(sql) {
                Err(SqlError::Unsupported(n)) => assert_eq!(n, name, "{sql}"),
                other => panic!("{sql}: {other:?}"),
            }
        }
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse_sql("SELECT a\nFROM t WHERE = 3") {
            Err(SqlError::Syntax { line, column, .. }) => assert_eq!((line, column), (2, 14)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shapes() {
        let shape = |s: &str| parse_sql(s).unwrap().shape();
        assert_eq!(
            shape("SELECT 1 FROM grades WHERE course_id = ? LIMIT 1"),
            QueryShape::ExistenceLimit1
        );
        assert_eq!(shape("SELECT COUNT(*) FROM t"), QueryShape::CountAggregate);
        assert_eq!(
            shape("SELECT * FROM a INNER JOIN b ON a.x = b.y"),
            QueryShape::InnerJoin
        );
        assert_eq!(
            shape("SELECT * FROM a LEFT OUTER JOIN b ON a.x = b.y"),
            QueryShape::LeftJoin
        );
    }

    #[test]
    fn params_literals_and_negation() {
        let q = parse_sql(
            "select a from t x where x.b = :CourseId and not c is null and d <> 'it''s' and e >= -3 and flag and owner = MyUserId",
        )
        .unwrap();
        let text = q.to_string();
        assert_eq!(
            text,
            "SELECT a FROM t x WHERE x.b = :CourseId AND c IS NOT NULL AND d <> 'it''s' AND e >= -3 AND flag AND owner = MyUserId"
        );
        assert_eq!(parse_sql(&text).unwrap(), q);
    }

    #[test]
    fn duplicate_alias_rejected() {
        assert_eq!(
            parse_sql("SELECT * FROM t, t"),
            Err(SqlError::DuplicateAlias("t".into()))
        );
    }
}
