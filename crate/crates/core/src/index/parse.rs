//! Symbol extraction and declaration detection over a lexed file.

use super::lexer::{lex, Token, TokenKind};
use super::{LanguageProfile, Span, SymbolKind, UnitKind};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LocalSymbol {
    pub name: String,
    pub kind: SymbolKind,
    pub span: Span,
    /// Eligible as a name-resolution target.
    pub is_definition: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LocalUnit {
    pub name: String,
    pub kind: UnitKind,
    pub start_line: u32,
    pub end_line: u32,
    pub symbols: std::ops::Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ParsedFile {
    pub symbols: Vec<LocalSymbol>,
    pub units: Vec<LocalUnit>,
}

const BRACE_KEYWORDS: &[&str] = &[
    "as", "async", "await", "break", "case", "catch", "class", "const", "continue", "crate",
    "default", "do", "dyn", "else", "enum", "export", "extends", "extension", "extern", "false",
    "final", "fn", "for", "from", "func", "function", "if", "impl", "implements", "import", "in",
    "interface", "let", "loop", "match", "mod", "move", "mut", "namespace", "new", "nil", "null",
    "package", "private", "protected", "protocol", "pub", "public", "ref", "return", "self",
    "Self", "static", "struct", "super", "switch", "this", "throw", "throws", "trait", "true",
    "try", "type", "typedef", "union", "unsafe", "use", "val", "var", "void", "where", "while",
];

const INDENT_KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class",
    "continue", "def", "del", "elif", "else", "except", "finally", "for", "from", "global", "if",
    "import", "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return", "self",
    "try", "while", "with", "yield",
];

const FUNCTION_KEYWORDS: &[&str] = &["fn", "func", "function", "def"];
const TYPE_KEYWORDS: &[&str] = &[
    "struct", "enum", "trait", "class", "interface", "union", "protocol", "type",
];
const VARIABLE_KEYWORDS: &[&str] = &["let", "var", "const", "static", "val"];
const IMPORT_KEYWORDS: &[&str] = &["use", "import", "from"];
/// Keywords that open a top-level document unit in brace languages.
const BRACE_UNIT_KEYWORDS: &[&str] = &[
    "fn", "func", "function", "struct", "enum", "trait", "class", "interface", "union",
    "protocol", "impl", "mod", "extension", "namespace",
];

impl LanguageProfile {
    fn is_keyword(self, word: &str) -> bool {
        match self {
            LanguageProfile::Brace => BRACE_KEYWORDS.contains(&word),
            LanguageProfile::Indent => INDENT_KEYWORDS.contains(&word),
        }
    }
}

pub(crate) fn parse_file(
    src: &str,
    profile: LanguageProfile,
    file_stem: &str,
) -> Result<ParsedFile, String> {
    let tokens = lex(src, profile).map_err(|e| format!("line {}: {}", e.line + 1, e.message))?;
    if profile == LanguageProfile::Brace {
        check_brace_balance(&tokens)?;
    }
    let line_count = src.lines().count().max(1) as u32;
    let symbols = extract_symbols(&tokens, profile);
    let starts = unit_starts(&tokens, profile);
    let units = partition_units(&symbols, &starts, line_count, file_stem);
    Ok(ParsedFile { symbols, units })
}

/// Symbols and units for a query fragment; units are not needed there.
pub(crate) fn fragment_symbols(src: &str, profile: LanguageProfile) -> Vec<LocalSymbol> {
    match lex(src, profile) {
        Ok(tokens) => extract_symbols(&tokens, profile),
        // A fragment may be an unfinished prefix; fall back to whitespace words.
        Err(_) => src
            .split(|c: char| !(c.is_alphanumeric() || c == '_'))
            .filter(|w| w.chars().next().is_some_and(|c| c.is_alphabetic() || c == '_'))
            .filter(|w| !profile.is_keyword(w))
            .map(|w| LocalSymbol {
                name: w.to_string(),
                kind: SymbolKind::Other,
                span: Span::default(),
                is_definition: false,
            })
            .collect(),
    }
}

fn check_brace_balance(tokens: &[Token<'_>]) -> Result<(), String> {
    let mut depth = 0i64;
    for t in tokens.iter().filter(|t| t.kind == TokenKind::Punct) {
        match t.text {
            "{" => depth += 1,
            "}" => {
                depth -= 1;
                if depth < 0 {
                    return Err(format!("line {}: unmatched '}}'", t.line + 1));
                }
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err(format!("{depth} unclosed '{{' at end of file"));
    }
    Ok(())
}

fn is_punct(t: &Token<'_>, p: &str) -> bool {
    t.kind == TokenKind::Punct && t.text == p
}

fn extract_symbols(tokens: &[Token<'_>], profile: LanguageProfile) -> Vec<LocalSymbol> {
    let code: Vec<usize> = (0..tokens.len())
        .filter(|&i| tokens[i].kind != TokenKind::Comment)
        .collect();
    // previous significant (non-comment) token for every token index
    let mut prev_sig: Vec<Option<usize>> = vec![None; tokens.len()];
    let mut last = None;
    for (i, t) in tokens.iter().enumerate() {
        prev_sig[i] = last;
        if t.kind != TokenKind::Comment {
            last = Some(i);
        }
    }
    let line_first_col = first_col_per_line(tokens);

    let mut out = Vec::new();
    let mut depth = 0u32;
    let mut nest = 0u32; // parens + brackets
    let mut import_line: Option<u32> = None;
    for (ci, &i) in code.iter().enumerate() {
        let t = &tokens[i];
        if let Some(l) = import_line {
            if t.line != l || is_punct(t, ";") {
                import_line = None;
            }
        }
        match t.kind {
            TokenKind::Punct => match t.text {
                "{" => depth += 1,
                "}" => depth = depth.saturating_sub(1),
                "(" | "[" => nest += 1,
                ")" | "]" => nest = nest.saturating_sub(1),
                _ => {}
            },
            TokenKind::Ident if profile.is_keyword(t.text) => {
                if IMPORT_KEYWORDS.contains(&t.text) {
                    import_line = Some(t.line);
                }
            }
            TokenKind::Ident => {
                let prev = prev_sig[i].map(|p| &tokens[p]);
                let prev_text = prev.filter(|p| p.kind == TokenKind::Ident).map(|p| p.text);
                let prev2_text = prev_sig[i]
                    .and_then(|p| prev_sig[p])
                    .map(|p| tokens[p].text);
                let top_level = match profile {
                    LanguageProfile::Brace => depth == 0 && nest == 0,
                    LanguageProfile::Indent => line_first_col.get(&t.line) == Some(&0),
                };
                let (kind, is_definition, span) = if prev_text
                    .is_some_and(|p| FUNCTION_KEYWORDS.contains(&p))
                {
                    let kw = prev_sig[i].unwrap();
                    (SymbolKind::Function, true, declaration_span(tokens, kw, i, profile))
                } else if prev_text.is_some_and(|p| TYPE_KEYWORDS.contains(&p)) {
                    let kw = prev_sig[i].unwrap();
                    (SymbolKind::Type, true, declaration_span(tokens, kw, i, profile))
                } else if prev_text.is_some_and(|p| VARIABLE_KEYWORDS.contains(&p))
                    || (prev_text == Some("mut")
                        && prev2_text.is_some_and(|p| VARIABLE_KEYWORDS.contains(&p)))
                {
                    (SymbolKind::Variable, top_level, token_span(t))
                } else if profile == LanguageProfile::Indent
                    && t.col == 0
                    && is_simple_assignment(tokens, &code, ci)
                {
                    (SymbolKind::Variable, true, token_span(t))
                } else if import_line.is_some() {
                    (SymbolKind::Import, false, token_span(t))
                } else {
                    (SymbolKind::Other, false, token_span(t))
                };
                out.push(LocalSymbol {
                    name: t.text.to_string(),
                    kind,
                    span,
                    is_definition,
                });
            }
            _ => {}
        }
    }
    // comments are symbols too; merge them back into source order
    for t in tokens.iter().filter(|t| t.kind == TokenKind::Comment) {
        out.push(LocalSymbol {
            name: t.text.to_string(),
            kind: SymbolKind::Comment,
            span: token_span(t),
            is_definition: false,
        });
    }
    out.sort_by_key(|s| (s.span.start_line, s.span.start_col));
    out
}

fn is_simple_assignment(tokens: &[Token<'_>], code: &[usize], ci: usize) -> bool {
    let next = code.get(ci + 1).map(|&i| &tokens[i]);
    let after = code.get(ci + 2).map(|&i| &tokens[i]);
    next.is_some_and(|n| is_punct(n, "=")) && !after.is_some_and(|a| is_punct(a, "="))
}

fn first_col_per_line(tokens: &[Token<'_>]) -> std::collections::HashMap<u32, u32> {
    let mut m = std::collections::HashMap::new();
    for t in tokens {
        m.entry(t.line).or_insert(t.col);
    }
    m
}

fn token_span(t: &Token<'_>) -> Span {
    Span {
        start_line: t.line,
        start_col: t.col,
        end_line: t.end_line,
        end_col: t.end_col,
    }
}

/// Span of a declaration, from its keyword through the end of its body.
fn declaration_span(tokens: &[Token<'_>], kw: usize, name: usize, profile: LanguageProfile) -> Span {
    let start = &tokens[kw];
    let end = match profile {
        LanguageProfile::Brace => brace_decl_end(tokens, name),
        LanguageProfile::Indent => indent_decl_end(tokens, kw),
    }
    .unwrap_or(name);
    let end = &tokens[end];
    Span {
        start_line: start.line,
        start_col: start.col,
        end_line: end.end_line,
        end_col: end.end_col,
    }
}

fn brace_decl_end(tokens: &[Token<'_>], name: usize) -> Option<usize> {
    let mut nest = 0i32;
    let mut i = name + 1;
    while i < tokens.len() {
        let t = &tokens[i];
        if t.kind == TokenKind::Punct {
            match t.text {
                "(" | "[" => nest += 1,
                ")" | "]" => nest -= 1,
                ";" if nest <= 0 => return Some(i),
                "}" if nest <= 0 => return None,
                "{" if nest <= 0 => {
                    let mut depth = 0i32;
                    for (j, u) in tokens.iter().enumerate().skip(i) {
                        if u.kind != TokenKind::Punct {
                            continue;
                        }
                        match u.text {
                            "{" => depth += 1,
                            "}" => {
                                depth -= 1;
                                if depth == 0 {
                                    return Some(j);
                                }
                            }
                            _ => {}
                        }
                    }
                    return None;
                }
                _ => {}
            }
        }
        i += 1;
    }
    None
}

fn indent_decl_end(tokens: &[Token<'_>], kw: usize) -> Option<usize> {
    let line_first_col = first_col_per_line(tokens);
    let indent = *line_first_col.get(&tokens[kw].line)?;
    // header ends at the ':' outside any parentheses
    let mut nest = 0i32;
    let mut header_end = None;
    for (i, t) in tokens.iter().enumerate().skip(kw + 1) {
        if t.kind != TokenKind::Punct {
            continue;
        }
        match t.text {
            "(" | "[" | "{" => nest += 1,
            ")" | "]" | "}" => nest -= 1,
            ":" if nest <= 0 => {
                header_end = Some(i);
                break;
            }
            _ => {}
        }
    }
    let header_end = header_end?;
    let header_line = tokens[header_end].line;
    let mut last = header_end;
    for (i, t) in tokens.iter().enumerate().skip(header_end + 1) {
        if t.kind == TokenKind::Comment {
            continue;
        }
        let first_on_line = line_first_col.get(&t.line) == Some(&t.col);
        if t.line > header_line && first_on_line && t.col <= indent {
            break;
        }
        last = i;
    }
    Some(last)
}

/// Token indices where a top-level document unit begins.
fn unit_starts(tokens: &[Token<'_>], profile: LanguageProfile) -> Vec<(u32, UnitKind, String)> {
    let mut starts: Vec<(u32, UnitKind, String)> = Vec::new();
    let line_first_col = first_col_per_line(tokens);
    let mut depth = 0u32;
    let mut nest = 0u32;
    for (i, t) in tokens.iter().enumerate() {
        match (t.kind, t.text) {
            (TokenKind::Punct, "{") => depth += 1,
            (TokenKind::Punct, "}") => depth = depth.saturating_sub(1),
            (TokenKind::Punct, "(" | "[") => nest += 1,
            (TokenKind::Punct, ")" | "]") => nest = nest.saturating_sub(1),
            (TokenKind::Ident, word) => {
                let opens = match profile {
                    LanguageProfile::Brace => {
                        depth == 0 && nest == 0 && BRACE_UNIT_KEYWORDS.contains(&word)
                    }
                    LanguageProfile::Indent => {
                        (word == "def" || word == "class")
                            && line_first_col.get(&t.line) == Some(&0)
                    }
                };
                if opens && starts.last().is_none_or(|s| s.0 != t.line) {
                    let kind = if FUNCTION_KEYWORDS.contains(&word) {
                        UnitKind::Function
                    } else {
                        UnitKind::Type
                    };
                    starts.push((t.line, kind, unit_name(tokens, i, profile)));
                }
            }
            _ => {}
        }
    }
    starts
}

fn unit_name(tokens: &[Token<'_>], kw: usize, profile: LanguageProfile) -> String {
    let mut angle = 0i32;
    for t in &tokens[kw + 1..] {
        match (t.kind, t.text) {
            (TokenKind::Punct, "<") => angle += 1,
            (TokenKind::Punct, ">") => angle -= 1,
            (TokenKind::Punct, "{" | ";" | ":") => break,
            (TokenKind::Ident, w) if angle <= 0 && !profile.is_keyword(w) => return w.to_string(),
            _ => {}
        }
    }
    tokens[kw].text.to_string()
}

fn partition_units(
    symbols: &[LocalSymbol],
    starts: &[(u32, UnitKind, String)],
    line_count: u32,
    file_stem: &str,
) -> Vec<LocalUnit> {
    let mut bounds: Vec<(u32, UnitKind, String)> = starts.to_vec();
    if bounds.is_empty() {
        bounds.push((0, UnitKind::Module, file_stem.to_string()));
    }
    let mut units = Vec::new();
    let mut cursor = 0usize;
    for (k, (line, kind, name)) in bounds.iter().enumerate() {
        let start_line = if k == 0 { 0 } else { *line };
        let end_line = bounds.get(k + 1).map_or(line_count.max(line + 1), |b| b.0);
        let first = cursor;
        while cursor < symbols.len() && symbols[cursor].span.start_line < end_line {
            cursor += 1;
        }
        if k + 1 == bounds.len() {
            cursor = symbols.len();
        }
        if cursor > first {
            units.push(LocalUnit {
                name: name.clone(),
                kind: *kind,
                start_line,
                end_line: end_line.max(symbols[cursor - 1].span.end_line + 1),
                symbols: first..cursor,
            });
        }
    }
    units
}
