//! Lightweight lexer shared by the brace and indentation language profiles.

use super::LanguageProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TokenKind {
    Ident,
    Number,
    Str,
    Comment,
    Punct,
}

#[derive(Debug, Clone)]
pub(crate) struct Token<'a> {
    pub kind: TokenKind,
    pub text: &'a str,
    pub line: u32,
    pub col: u32,
    pub end_line: u32,
    pub end_col: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct LexError {
    pub line: u32,
    pub message: String,
}

struct Scanner<'a> {
    src: &'a str,
    chars: Vec<(usize, char)>,
    pos: usize,
    line: u32,
    col: u32,
}

impl<'a> Scanner<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src,
            chars: src.char_indices().collect(),
            pos: 0,
            line: 0,
            col: 0,
        }
    }

    fn peek(&self, ahead: usize) -> Option<char> {
        self.chars.get(self.pos + ahead).map(|&(_, c)| c)
    }

    fn byte_at(&self, pos: usize) -> usize {
        self.chars.get(pos).map(|&(b, _)| b).unwrap_or(self.src.len())
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek(0)?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 0;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn starts_with(&self, pat: &str) -> bool {
        self.src[self.byte_at(self.pos)..].starts_with(pat)
    }

    fn error(&self, line: u32, message: impl Into<String>) -> LexError {
        LexError {
            line,
            message: message.into(),
        }
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

pub(crate) fn lex(src: &str, profile: LanguageProfile) -> Result<Vec<Token<'_>>, LexError> {
    let mut sc = Scanner::new(src);
    let mut out = Vec::new();
    while let Some(c) = sc.peek(0) {
        if c.is_whitespace() {
            sc.bump();
            continue;
        }
        let (start_pos, line, col) = (sc.pos, sc.line, sc.col);
        let kind = match profile {
            LanguageProfile::Brace => lex_brace_token(&mut sc, c)?,
            LanguageProfile::Indent => lex_indent_token(&mut sc, c)?,
        };
        let text = &src[sc.byte_at(start_pos)..sc.byte_at(sc.pos)];
        out.push(Token {
            kind,
            text,
            line,
            col,
            end_line: sc.line,
            end_col: sc.col,
        });
    }
    Ok(out)
}

fn lex_common(sc: &mut Scanner<'_>, c: char) -> TokenKind {
    if is_ident_start(c) {
        while sc.peek(0).is_some_and(is_ident_continue) {
            sc.bump();
        }
        TokenKind::Ident
    } else if c.is_ascii_digit() {
        while sc
            .peek(0)
            .is_some_and(|c| c.is_alphanumeric() || c == '_' || c == '.')
        {
            sc.bump();
        }
        TokenKind::Number
    } else {
        sc.bump();
        TokenKind::Punct
    }
}

fn lex_brace_token(sc: &mut Scanner<'_>, c: char) -> Result<TokenKind, LexError> {
    let line = sc.line;
    if sc.starts_with("//") {
        while sc.peek(0).is_some_and(|c| c != '\n') {
            sc.bump();
        }
        return Ok(TokenKind::Comment);
    }
    if sc.starts_with("/*") {
        sc.bump();
        sc.bump();
        loop {
            if sc.starts_with("*/") {
                sc.bump();
                sc.bump();
                return Ok(TokenKind::Comment);
            }
            if sc.bump().is_none() {
                return Err(sc.error(line, "unterminated block comment"));
            }
        }
    }
    if c == '"' {
        sc.bump();
        loop {
            match sc.bump() {
                Some('\\') => {
                    sc.bump();
                }
                Some('"') => return Ok(TokenKind::Str),
                Some(_) => {}
                None => return Err(sc.error(line, "unterminated string literal")),
            }
        }
    }
    if c == '\'' {
        // Char literal ('x' or '\n'); anything else (lifetimes, generics) is punctuation.
        let is_char = match (sc.peek(1), sc.peek(2), sc.peek(3)) {
            (Some('\\'), Some(_), Some('\'')) => Some(4),
            (Some(x), Some('\''), _) if x != '\'' => Some(3),
            _ => None,
        };
        if let Some(n) = is_char {
            for _ in 0..n {
                sc.bump();
            }
            return Ok(TokenKind::Str);
        }
        sc.bump();
        return Ok(TokenKind::Punct);
    }
    Ok(lex_common(sc, c))
}

fn lex_indent_token(sc: &mut Scanner<'_>, c: char) -> Result<TokenKind, LexError> {
    let line = sc.line;
    if c == '#' {
        while sc.peek(0).is_some_and(|c| c != '\n') {
            sc.bump();
        }
        return Ok(TokenKind::Comment);
    }
    if sc.starts_with("\"\"\"") || sc.starts_with("'''") {
        let delim = if c == '"' { "\"\"\"" } else { "'''" };
        for _ in 0..3 {
            sc.bump();
        }
        loop {
            if sc.starts_with(delim) {
                for _ in 0..3 {
                    sc.bump();
                }
                // docstrings carry prose, index them like comments
                return Ok(TokenKind::Comment);
            }
            if sc.bump().is_none() {
                return Err(sc.error(line, "unterminated triple-quoted string"));
            }
        }
    }
    if c == '"' || c == '\'' {
        sc.bump();
        loop {
            match sc.bump() {
                Some('\\') => {
                    sc.bump();
                }
                Some(q) if q == c => return Ok(TokenKind::Str),
                Some('\n') | None => return Err(sc.error(line, "unterminated string literal")),
                Some(_) => {}
            }
        }
    }
    Ok(lex_common(sc, c))
}
