use alloc::string::String;
use alloc::vec::Vec;

use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Colon,
    Assign,
    Plus,
    Minus,
    Star,
    StarStar,
    Slash,
    Percent,
    EqEq,
    NotEq,
    Lt,
    Gt,
    Le,
    Ge,
    Newline,
    Indent,
    Dedent,
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let mut indents: Vec<usize> = alloc::vec![0];
    let mut depth = 0usize; // open ( and [
    let mut last_line = 1;

    for (lineno, raw) in src.lines().enumerate() {
        let lineno = lineno + 1;
        last_line = lineno;
        let chars: Vec<char> = raw.chars().collect();
        let mut i = 0;

        if depth == 0 {
            let mut width = 0;
            while i < chars.len() && (chars[i] == ' ' || chars[i] == '\t') {
                if chars[i] == '\t' {
                    return Err(ParseError::new(lineno, i + 1, "tabs are not allowed in indentation"));
                }
                width += 1;
                i += 1;
            }
            if i == chars.len() || chars[i] == '#' {
                continue;
            }
            let current = *indents.last().unwrap();
            if width > current {
                indents.push(width);
                out.push(Token { tok: Tok::Indent, line: lineno, col: 1 });
            } else {
                while width < *indents.last().unwrap() {
                    indents.pop();
                    out.push(Token { tok: Tok::Dedent, line: lineno, col: 1 });
                }
                if width != *indents.last().unwrap() {
                    return Err(ParseError::new(lineno, width + 1, "inconsistent dedent"));
                }
            }
        }

        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            let push = |out: &mut Vec<Token>, tok| out.push(Token { tok, line: lineno, col });
            match c {
                ' ' | '\t' | '\r' => {
                    i += 1;
                }
                '#' => break,
                '(' | '[' => {
                    depth += 1;
                    push(&mut out, if c == '(' { Tok::LParen } else { Tok::LBracket });
                    i += 1;
                }
                ')' | ']' => {
                    if depth == 0 {
                        return Err(ParseError::new(lineno, col, "unbalanced closing bracket"));
                    }
                    depth -= 1;
                    push(&mut out, if c == ')' { Tok::RParen } else { Tok::RBracket });
                    i += 1;
                }
                ',' => {
                    push(&mut out, Tok::Comma);
                    i += 1;
                }
                ':' => {
                    push(&mut out, Tok::Colon);
                    i += 1;
                }
                '+' => {
                    push(&mut out, Tok::Plus);
                    i += 1;
                }
                '-' => {
                    push(&mut out, Tok::Minus);
                    i += 1;
                }
                '*' => {
                    if chars.get(i + 1) == Some(&'*') {
                        push(&mut out, Tok::StarStar);
                        i += 2;
                    } else {
                        push(&mut out, Tok::Star);
                        i += 1;
                    }
                }
                '/' => {
                    push(&mut out, Tok::Slash);
                    i += 1;
                }
                '%' => {
                    push(&mut out, Tok::Percent);
                    i += 1;
                }
                '=' | '!' | '<' | '>' => {
                    let next_eq = chars.get(i + 1) == Some(&'=');
                    let tok = match (c, next_eq) {
                        ('=', true) => Tok::EqEq,
                        ('=', false) => Tok::Assign,
                        ('!', true) => Tok::NotEq,
                        ('<', true) => Tok::Le,
                        ('<', false) => Tok::Lt,
                        ('>', true) => Tok::Ge,
                        ('>', false) => Tok::Gt,
                        _ => return Err(ParseError::new(lineno, col, "unexpected `!`")),
                    };
                    push(&mut out, tok);
                    i += if next_eq { 2 } else { 1 };
                }
                c if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                    let start = i;
                    let mut is_float = false;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                    if i < chars.len() && chars[i] == '.' {
                        is_float = true;
                        i += 1;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                    if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                        let mut j = i + 1;
                        if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                            j += 1;
                        }
                        if j < chars.len() && chars[j].is_ascii_digit() {
                            is_float = true;
                            i = j;
                            while i < chars.len() && chars[i].is_ascii_digit() {
                                i += 1;
                            }
                        }
                    }
                    let text: String = chars[start..i].iter().collect();
                    let tok = if is_float {
                        Tok::Float(text.parse().map_err(|_| ParseError::new(lineno, col, "malformed float literal"))?)
                    } else {
                        Tok::Int(
                            text.parse().map_err(|_| ParseError::new(lineno, col, "integer literal out of range"))?,
                        )
                    };
                    push(&mut out, tok);
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let start = i;
                    while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                        i += 1;
                    }
                    push(&mut out, Tok::Ident(chars[start..i].iter().collect()));
                }
                other => return Err(ParseError::new(lineno, col, alloc::format!("unexpected character `{other}`"))),
            }
        }
        if depth == 0 {
            out.push(Token { tok: Tok::Newline, line: lineno, col: chars.len() + 1 });
        }
    }
    if depth != 0 {
        return Err(ParseError::new(last_line, 1, "unclosed bracket at end of input"));
    }
    while indents.len() > 1 {
        indents.pop();
        out.push(Token { tok: Tok::Dedent, line: last_line + 1, col: 1 });
    }
    out.push(Token { tok: Tok::Eof, line: last_line + 1, col: 1 });
    Ok(out)
}
