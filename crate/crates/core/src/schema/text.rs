//! Small tokenizer shared by the schema and constraint file formats.

use super::SchemaError;

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Tok {
    Word(String),
    Int(i64),
    Str(String),
    Punct(char),
    /// End of a line; only meaningful as an entry separator.
    Newline,
}

#[derive(Clone, Debug)]
pub(crate) struct Token {
    pub tok: Tok,
    pub line: usize,
}

pub(crate) fn tokenize(text: &str) -> Result<Vec<Token>, SchemaError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let body = raw.split('#').next().unwrap_or("");
        let chars: Vec<char> = body.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() {
                i += 1;
            } else if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token {
                    tok: Tok::Word(chars[start..i].iter().collect()),
                    line,
                });
            } else if c.is_ascii_digit()
                || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
            {
                let start = i;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                let v = s.parse().map_err(|_| SchemaError::Syntax {
                    line,
                    message: format!("bad integer `{s}`"),
                })?;
                out.push(Token {
                    tok: Tok::Int(v),
                    line,
                });
            } else if c == '\'' || c == '"' {
                let start = i + 1;
                i += 1;
                while i < chars.len() && chars[i] != c {
                    i += 1;
                }
                if i >= chars.len() {
                    return Err(SchemaError::Syntax {
                        line,
                        message: "unterminated string".into(),
                    });
                }
                out.push(Token {
                    tok: Tok::Str(chars[start..i].iter().collect()),
                    line,
                });
                i += 1;
            } else {
                out.push(Token {
                    tok: Tok::Punct(c),
                    line,
                });
                i += 1;
            }
        }
        out.push(Token {
            tok: Tok::Newline,
            line,
        });
    }
    Ok(out)
}

pub(crate) struct Cursor<'a> {
    toks: &'a [Token],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(toks: &'a [Token]) -> Self {
        let mut c = Cursor { toks, pos: 0 };
        c.skip_newlines();
        c
    }

    fn skip_newlines(&mut self) {
        while matches!(
            self.toks.get(self.pos),
            Some(Token {
                tok: Tok::Newline,
                ..
            })
        ) {
            self.pos += 1;
        }
    }

    /// Skips newlines, `,` and `;`.
    pub fn skip_separators(&mut self) {
        while matches!(
            self.toks.get(self.pos).map(|t| &t.tok),
            Some(Tok::Newline) | Some(Tok::Punct(',')) | Some(Tok::Punct(';'))
        ) {
            self.pos += 1;
        }
    }

    pub fn done(&mut self) -> bool {
        self.skip_newlines();
        self.pos >= self.toks.len()
    }

    fn peek_raw(&self, k: usize) -> Option<&Tok> {
        self.toks[self.pos.min(self.toks.len())..]
            .iter()
            .filter(|t| t.tok != Tok::Newline)
            .nth(k)
            .map(|t| &t.tok)
    }

    pub fn line(&self) -> usize {
        self.toks
            .get(self.pos)
            .or(self.toks.last())
            .map_or(1, |t| t.line)
    }

    pub fn error(&self, message: impl Into<String>) -> SchemaError {
        SchemaError::Syntax {
            line: self.line(),
            message: message.into(),
        }
    }

    pub fn bump(&mut self) -> Option<Tok> {
        self.skip_newlines();
        let t = self.toks.get(self.pos).map(|t| t.tok.clone());
        self.pos += 1;
        t
    }

    pub fn peek_word(&mut self, w: &str) -> bool {
        self.skip_newlines();
        matches!(self.peek_raw(0), Some(Tok::Word(s)) if s == w)
    }

    pub fn peek_punct_at(&mut self, k: usize, p: char) -> bool {
        self.skip_newlines();
        matches!(self.peek_raw(k), Some(Tok::Punct(c)) if *c == p)
    }

    pub fn eat_punct(&mut self, p: char) -> bool {
        if self.peek_punct_at(0, p) {
            self.bump();
            true
        } else {
            false
        }
    }

    pub fn expect_punct(&mut self, p: char) -> Result<(), SchemaError> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            Err(self.error(format!("expected `{p}`")))
        }
    }

    pub fn expect_word(&mut self, w: &str) -> Result<(), SchemaError> {
        if self.peek_word(w) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(format!("expected `{w}`")))
        }
    }

    pub fn ident(&mut self, what: &str) -> Result<String, SchemaError> {
        self.skip_newlines();
        match self.peek_raw(0) {
            Some(Tok::Word(s)) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => Err(self.error(format!("expected {what}"))),
        }
    }
}
