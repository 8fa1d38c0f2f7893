use super::ast::Span;
use super::ParseError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Tok {
    Ident(String),
    Int(u64),
    Str(String),
    Scratch(String),
    Map(String),
    /// `kind:target` attach point, only produced at clause-header position.
    Probe {
        kind: String,
        target: String,
    },
    PredOpen,
    PredClose,
    Punct(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub span: Span,
}

const PUNCTS: [&str; 32] = [
    "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "->", "{", "}", "(", ")", "[", "]", ",", ";", ".", "=", "+", "-",
    "*", "/", "%", "&", "|", "^", "<", ">", "!", "~", ":",
];

struct Lexer<'a> {
    src: &'a [u8],
    text: &'a str,
    pos: usize,
    line: u32,
    col: u32,
    depth: u32,
    in_predicate: bool,
    parens: u32,
}

pub(crate) fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut lx = Lexer {
        src: text.as_bytes(),
        text,
        pos: 0,
        line: 1,
        col: 1,
        depth: 0,
        in_predicate: false,
        parens: 0,
    };
    if text.starts_with("#!") {
        while lx.pos < lx.src.len() && lx.src[lx.pos] != b'\n' {
            lx.bump();
        }
    }
    let mut out = Vec::new();
    loop {
        let t = lx.next()?;
        let eof = t.tok == Tok::Eof;
        out.push(t);
        if eof {
            return Ok(out);
        }
    }
}

impl<'a> Lexer<'a> {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn peek_at(&self, off: usize) -> Option<u8> {
        self.src.get(self.pos + off).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.text[self.pos..].chars().next()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn err(&self, span: Span, msg: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            line: span.line,
            column: span.column,
            message: msg.into(),
        }
    }

    fn skip_trivia(&mut self) -> Result<(), ParseError> {
        loop {
            match self.peek() {
                Some(c) if c.is_ascii_whitespace() => {
                    self.bump();
                }
                Some(b'/') if self.peek_at(1) == Some(b'/') => {
                    while let Some(c) = self.peek() {
                        if c == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                Some(b'/') if self.peek_at(1) == Some(b'*') => {
                    let start = Span::new(self.line, self.col);
                    self.bump();
                    self.bump();
                    loop {
                        match self.peek() {
                            None => return Err(self.err(start, "unterminated block comment")),
                            Some(b'*') if self.peek_at(1) == Some(b'/') => {
                                self.bump();
                                self.bump();
                                break;
                            }
                            _ => {
                                self.bump();
                            }
                        }
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn ident(&mut self) -> String {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == b'_' {
                self.bump();
            } else {
                break;
            }
        }
        self.text[start..self.pos].to_string()
    }

    fn next(&mut self) -> Result<Token, ParseError> {
        self.skip_trivia()?;
        let span = Span::new(self.line, self.col);
        let Some(c) = self.peek() else {
            return Ok(Token { tok: Tok::Eof, span });
        };
        let header = self.depth == 0 && !self.in_predicate;

        if header && (c.is_ascii_alphabetic() || c == b'_') {
            let kind = self.ident();
            if self.peek() == Some(b':') {
                self.bump();
                let allow_slash = matches!(kind.as_str(), "uprobe" | "uretprobe");
                let start = self.pos;
                while let Some(c) = self.peek() {
                    if c.is_ascii_whitespace() || c == b',' || c == b'{' || (c == b'/' && !allow_slash) {
                        break;
                    }
                    self.bump();
                }
                let target = self.text[start..self.pos].to_string();
                return Ok(Token {
                    tok: Tok::Probe { kind, target },
                    span,
                });
            }
            return Ok(Token {
                tok: Tok::Ident(kind),
                span,
            });
        }

        if c == b'/' && self.depth == 0 && self.parens == 0 {
            self.bump();
            let tok = if self.in_predicate {
                Tok::PredClose
            } else {
                Tok::PredOpen
            };
            self.in_predicate = !self.in_predicate;
            return Ok(Token { tok, span });
        }

        if c.is_ascii_alphabetic() || c == b'_' {
            return Ok(Token {
                tok: Tok::Ident(self.ident()),
                span,
            });
        }
        if c == b'$' || c == b'@' {
            self.bump();
            let name = self.ident();
            if name.is_empty() {
                return Err(self.err(
                    span,
                    if c == b'$' {
                        "expected a variable name after `$`"
                    } else {
                        "expected a map name after `@` (anonymous maps are not supported)"
                    },
                ));
            }
            let tok = if c == b'$' { Tok::Scratch(name) } else { Tok::Map(name) };
            return Ok(Token { tok, span });
        }
        if c.is_ascii_digit() {
            return self.number(span);
        }
        if c == b'"' {
            return self.string(span);
        }
        for p in PUNCTS {
            if self.text[self.pos..].starts_with(p) {
                for _ in 0..p.len() {
                    self.bump();
                }
                match p {
                    "{" => self.depth += 1,
                    "}" => self.depth = self.depth.saturating_sub(1),
                    "(" if self.in_predicate => self.parens += 1,
                    ")" if self.in_predicate => self.parens = self.parens.saturating_sub(1),
                    _ => {}
                }
                return Ok(Token {
                    tok: Tok::Punct(p),
                    span,
                });
            }
        }
        let ch = self.text[self.pos..].chars().next().unwrap_or('?');
        Err(self.err(span, format!("unexpected character `{ch}`")))
    }

    fn number(&mut self, span: Span) -> Result<Token, ParseError> {
        let start = self.pos;
        let hex = self.peek() == Some(b'0') && matches!(self.peek_at(1), Some(b'x') | Some(b'X'));
        if hex {
            self.bump();
            self.bump();
        }
        let digits_start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == b'_' {
                self.bump();
            } else {
                break;
            }
        }
        let digits = &self.text[digits_start..self.pos];
        let parsed = if hex {
            u64::from_str_radix(digits, 16)
        } else {
            digits.parse::<u64>()
        };
        match parsed {
            Ok(v) => Ok(Token { tok: Tok::Int(v), span }),
            Err(_) => Err(self.err(
                span,
                format!("invalid integer literal `{}`", &self.text[start..self.pos]),
            )),
        }
    }

    fn string(&mut self, span: Span) -> Result<Token, ParseError> {
        self.bump();
        let mut s = String::new();
        loop {
            match self.bump() {
                None | Some('\n') => return Err(self.err(span, "unterminated string literal")),
                Some('"') => break,
                Some('\\') => match self.bump() {
                    Some('n') => s.push('\n'),
                    Some('t') => s.push('\t'),
                    Some('r') => s.push('\r'),
                    Some('"') => s.push('"'),
                    Some('\\') => s.push('\\'),
                    Some(other) => {
                        s.push('\\');
                        s.push(other);
                    }
                    None => return Err(self.err(span, "unterminated string literal")),
                },
                Some(c) => s.push(c),
            }
        }
        Ok(Token { tok: Tok::Str(s), span })
    }
}

/// Inverse of the lexer's escape handling.
pub(crate) fn escape_str(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}
