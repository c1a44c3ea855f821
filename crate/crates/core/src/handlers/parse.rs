use std::collections::BTreeSet;

use super::{Arg, Cond, Handler, HandlerDecl, HandlerError, Stmt, StmtKind};
use crate::relational::{is_session_param, Scalar};
use crate::schema::ColumnType;

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    Punct(char),
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, HandlerError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let err = |line, column, message: &str| HandlerError::Syntax {
        line,
        column,
        message: message.to_string(),
    };
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' || (c == '/' && chars.get(i + 1) == Some(&'/')) {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        let tok = if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            Tok::Ident(chars[start..i].iter().collect())
        } else if c.is_ascii_digit() {
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            Tok::Int(
                s.parse()
                    .map_err(|_| err(l0, c0, "integer literal out of range"))?,
            )
        } else if c == '"' || c == '\'' {
            i += 1;
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None | Some('\n') => return Err(err(l0, c0, "unterminated string")),
                    Some('\\') if chars.get(i + 1).is_some() => {
                        s.push(chars[i + 1]);
                        i += 2;
                    }
                    Some(&q) if q == c => {
                        i += 1;
                        break;
                    }
                    Some(&x) => {
                        s.push(x);
                        i += 1;
                    }
                }
            }
            Tok::Str(s)
        } else {
            i += 1;
            Tok::Punct(c)
        };
        col += i - start;
        out.push(Token {
            tok,
            line: l0,
            column: c0,
        });
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        column: col,
    });
    Ok(out)
}

/// Bindings that are known to be non-empty at a program point, plus all
/// bindings in scope.
#[derive(Clone, Debug, Default)]
struct Scope {
    bound: BTreeSet<String>,
    guarded: BTreeSet<String>,
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    params: BTreeSet<String>,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn line(&self) -> usize {
        self.toks[self.pos].line
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, message: impl Into<String>) -> HandlerError {
        let t = &self.toks[self.pos];
        HandlerError::Syntax {
            line: t.line,
            column: t.column,
            message: message.into(),
        }
    }

    fn describe(t: &Tok) -> String {
        match t {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(v) => format!("`{v}`"),
            Tok::Str(s) => format!("string \"{s}\""),
            Tok::Punct(c) => format!("`{c}`"),
            Tok::Eof => "end of input".into(),
        }
    }

    fn expect(&mut self, c: char) -> Result<(), HandlerError> {
        if *self.peek() == Tok::Punct(c) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(format!(
                "expected `{c}`, found {}",
                Self::describe(self.peek())
            )))
        }
    }

    fn eat(&mut self, c: char) -> bool {
        if *self.peek() == Tok::Punct(c) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Result<String, HandlerError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            t => Err(self.error(format!("expected a name, found {}", Self::describe(&t)))),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), HandlerError> {
        match self.peek() {
            Tok::Ident(s) if s == kw => {
                self.bump();
                Ok(())
            }
            t => Err(self.error(format!("expected `{kw}`, found {}", Self::describe(t)))),
        }
    }

    fn code(&mut self) -> Result<u16, HandlerError> {
        match self.peek().clone() {
            Tok::Int(v) if (0..=u16::MAX as i64).contains(&v) => {
                self.bump();
                Ok(v as u16)
            }
            t => Err(self.error(format!(
                "expected a status code, found {}",
                Self::describe(&t)
            ))),
        }
    }

    fn handler(&mut self) -> Result<Handler, HandlerError> {
        self.keyword("handler")?;
        let name = self.ident()?;
        self.expect('(')?;
        let mut params = Vec::new();
        if !self.eat(')') {
            loop {
                let p = self.ident()?;
                self.expect(':')?;
                let ty_name = self.ident()?;
                let ty = ColumnType::from_name(&ty_name)
                    .ok_or_else(|| self.error(format!("unknown type `{ty_name}`")))?;
                if is_session_param(&p) || !self.params.insert(p.clone()) {
                    return Err(HandlerError::DuplicateParam(p));
                }
                params.push((p, ty));
                if self.eat(')') {
                    break;
                }
                self.expect(',')?;
            }
        }
        let body = self.block(&mut Scope::default())?;
        if *self.peek() != Tok::Eof {
            return Err(self.error(format!(
                "unexpected {} after the handler",
                Self::describe(self.peek())
            )));
        }
        Ok(Handler {
            decl: HandlerDecl { name, params },
            body,
        })
    }

    /// `{ stmt* }`. Bindings introduced inside do not escape.
    fn block(&mut self, outer: &mut Scope) -> Result<Vec<Stmt>, HandlerError> {
        self.expect('{')?;
        let mut scope = outer.clone();
        let mut out = Vec::new();
        while !self.eat('}') {
            if *self.peek() == Tok::Eof {
                return Err(self.error("missing `}`"));
            }
            out.push(self.stmt(&mut scope)?);
        }
        // guards learned about outer bindings carry over
        outer.guarded = scope.guarded.intersection(&outer.bound).cloned().collect();
        Ok(out)
    }

    fn stmt(&mut self, scope: &mut Scope) -> Result<Stmt, HandlerError> {
        let line = self.line();
        let word = self.ident()?;
        let kind = match word.as_str() {
            "let" => {
                let name = self.ident()?;
                if self.params.contains(&name) || is_session_param(&name) {
                    return Err(self.error(format!("`{name}` shadows a parameter")));
                }
                self.expect('=')?;
                self.keyword("query")?;
                self.expect('(')?;
                let sql = match self.bump() {
                    Tok::Str(s) => s,
                    t => {
                        self.pos -= 1;
                        return Err(self.error(format!(
                            "expected the SQL string, found {}",
                            Self::describe(&t)
                        )));
                    }
                };
                let mut args = Vec::new();
                while self.eat(',') {
                    args.push(self.arg(scope, true)?);
                }
                self.expect(')')?;
                self.expect(';')?;
                scope.bound.insert(name.clone());
                scope.guarded.remove(&name);
                StmtKind::Let { name, sql, args }
            }
            "abort_if_empty" => {
                self.expect('(')?;
                let binding = self.binding(scope)?;
                self.expect(',')?;
                let code = self.code()?;
                self.expect(')')?;
                self.expect(';')?;
                scope.guarded.insert(binding.clone());
                StmtKind::AbortIfEmpty { binding, code }
            }
            "abort" => {
                self.expect('(')?;
                let code = self.code()?;
                self.expect(')')?;
                self.expect(';')?;
                StmtKind::Abort(code)
            }
            "render" => {
                self.expect('(')?;
                let mut names = Vec::new();
                if !self.eat(')') {
                    loop {
                        names.push(self.binding(scope)?);
                        if self.eat(')') {
                            break;
                        }
                        self.expect(',')?;
                    }
                }
                self.expect(';')?;
                StmtKind::Render(names)
            }
            "if" => return self.if_stmt(line, scope),
            other => {
                self.pos -= 1;
                return Err(self.error(format!("expected a statement, found `{other}`")));
            }
        };
        Ok(Stmt { line, kind })
    }

    fn if_stmt(&mut self, line: usize, scope: &mut Scope) -> Result<Stmt, HandlerError> {
        self.expect('(')?;
        let cond = self.cond(scope)?;
        self.expect(')')?;
        let (when_true, when_false) = nonempty_facts(&cond);
        let mut then_scope = scope.clone();
        then_scope.guarded.extend(when_true.iter().cloned());
        let then = self.block(&mut then_scope)?;
        let mut else_scope = scope.clone();
        else_scope.guarded.extend(when_false.iter().cloned());
        let otherwise = if matches!(self.peek(), Tok::Ident(s) if s == "else") {
            self.bump();
            if matches!(self.peek(), Tok::Ident(s) if s == "if") {
                let l = self.line();
                self.bump();
                vec![self.if_stmt(l, &mut else_scope)?]
            } else {
                self.block(&mut else_scope)?
            }
        } else {
            Vec::new()
        };
        self.eat(';');
        // after the statement, whatever holds on every branch that falls
        // through holds
        let then_falls = !diverges(&then);
        let else_falls = !diverges(&otherwise);
        let facts = match (then_falls, else_falls) {
            (true, true) => then_scope
                .guarded
                .intersection(&else_scope.guarded)
                .cloned()
                .collect(),
            (true, false) => then_scope.guarded,
            (false, true) => else_scope.guarded,
            (false, false) => scope.bound.clone(),
        };
        scope.guarded = facts;
        Ok(Stmt {
            line,
            kind: StmtKind::If {
                cond,
                then,
                otherwise,
            },
        })
    }

    fn binding(&mut self, scope: &Scope) -> Result<String, HandlerError> {
        let line = self.line();
        let name = self.ident()?;
        if !scope.bound.contains(&name) {
            return Err(HandlerError::UnknownName { line, name });
        }
        Ok(name)
    }

    fn arg(&mut self, scope: &Scope, in_query: bool) -> Result<Arg, HandlerError> {
        let line = self.line();
        let arg = match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Arg::Literal(Scalar::Int(v))
            }
            Tok::Punct('-') if matches!(self.peek_at(1), Tok::Int(_)) => {
                self.bump();
                let Tok::Int(v) = self.bump() else {
                    unreachable!()
                };
                Arg::Literal(Scalar::Int(-v))
            }
            Tok::Str(s) => {
                self.bump();
                Arg::Literal(Scalar::Str(s))
            }
            Tok::Ident(name) => {
                self.bump();
                match name.as_str() {
                    "TRUE" | "true" => Arg::Literal(Scalar::Bool(true)),
                    "FALSE" | "false" => Arg::Literal(Scalar::Bool(false)),
                    "NULL" | "null" => Arg::Literal(Scalar::Null),
                    _ if *self.peek() == Tok::Punct('(') => {
                        return Err(if in_query {
                            HandlerError::ComputedArgument { line }
                        } else {
                            self.error(format!("unsupported function `{name}`"))
                        });
                    }
                    _ if is_session_param(&name) => Arg::Session(name),
                    _ if self.params.contains(&name) => Arg::Request(name),
                    _ if scope.bound.contains(&name) => {
                        self.expect('.')?;
                        let column = self.ident()?;
                        if !scope.guarded.contains(&name) {
                            return Err(HandlerError::Unguarded {
                                line,
                                binding: name,
                                column,
                            });
                        }
                        Arg::Field {
                            binding: name,
                            column,
                        }
                    }
                    _ => return Err(HandlerError::UnknownName { line, name }),
                }
            }
            t => return Err(self.error(format!("expected a value, found {}", Self::describe(&t)))),
        };
        if in_query {
            if let Tok::Punct(c) = self.peek() {
                if "+-*/%<>=!&|".contains(*c) {
                    return Err(HandlerError::ComputedArgument { line });
                }
            }
        }
        Ok(arg)
    }

    fn cond(&mut self, scope: &Scope) -> Result<Cond, HandlerError> {
        if self.eat('!') {
            return Ok(Cond::Not(Box::new(self.cond(scope)?)));
        }
        if self.eat('(') {
            let c = self.cond(scope)?;
            self.expect(')')?;
            return self.cond_tail(c);
        }
        let c = match self.peek().clone() {
            Tok::Ident(f)
                if (f == "nonempty" || f == "is_null") && *self.peek_at(1) == Tok::Punct('(') =>
            {
                self.bump();
                self.bump();
                let c = if f == "nonempty" {
                    Cond::NonEmpty(self.binding(scope)?)
                } else {
                    Cond::IsNull(self.arg(scope, false)?)
                };
                self.expect(')')?;
                c
            }
            _ => {
                let a = self.arg(scope, false)?;
                if self.eat('=') {
                    self.eat('=');
                    Cond::Eq(a, self.arg(scope, false)?)
                } else {
                    Cond::Truthy(a)
                }
            }
        };
        self.cond_tail(c)
    }

    fn cond_tail(&mut self, c: Cond) -> Result<Cond, HandlerError> {
        match self.peek() {
            Tok::Punct(')') => Ok(c),
            Tok::Punct(op) => Err(self.error(format!(
                "operator `{op}` is not supported in conditions (use =, !, is_null, nonempty)"
            ))),
            t => Err(self.error(format!("unexpected {} in condition", Self::describe(t)))),
        }
    }
}

/// Bindings known non-empty when `c` is true, and when it is false.
fn nonempty_facts(c: &Cond) -> (Vec<String>, Vec<String>) {
    match c {
        Cond::NonEmpty(b) => (vec![b.clone()], Vec::new()),
        Cond::Not(inner) => {
            let (t, f) = nonempty_facts(inner);
            (f, t)
        }
        _ => (Vec::new(), Vec::new()),
    }
}

/// True when every path through `block` ends in `abort`.
fn diverges(block: &[Stmt]) -> bool {
    block.iter().any(|s| match &s.kind {
        StmtKind::Abort(_) => true,
        StmtKind::If {
            then, otherwise, ..
        } => diverges(then) && diverges(otherwise),
        _ => false,
    })
}

pub fn parse_handler(text: &str) -> Result<Handler, HandlerError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
        params: BTreeSet::new(),
    };
    p.handler()
}
