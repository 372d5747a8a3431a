//! Line folding, tokenizing, and the SPICE number grammar.

use crate::error::ParseError;

/// One logical line after continuation folding. `line` is the 1-based
/// number of the first physical line it came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogicalLine {
    pub line: usize,
    pub text: String,
}

/// Result of folding: the cards plus the first comment seen before any card,
/// which serves as the document title.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Folded {
    pub title: Option<String>,
    pub lines: Vec<LogicalLine>,
}

/// Joins `+` continuation lines onto their predecessor, drops `*` comment
/// lines and blank lines, and lowercases everything but the title.
pub fn fold_continuations(raw: &str) -> Result<Folded, ParseError> {
    let mut out = Folded::default();
    for (idx, physical) in raw.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = physical.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('*') {
            if out.lines.is_empty() && out.title.is_none() {
                let t = comment.trim_matches(|c: char| c == '*' || c.is_whitespace());
                if !t.is_empty() {
                    out.title = Some(t.to_string());
                }
            }
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('+') {
            match out.lines.last_mut() {
                Some(prev) => {
                    prev.text.push(' ');
                    prev.text.push_str(&rest.trim().to_lowercase());
                }
                None => {
                    return Err(ParseError::at(
                        line_no,
                        physical.find('+').map_or(1, |c| c + 1),
                        "continuation line with nothing to continue",
                    ))
                }
            }
            continue;
        }
        out.lines.push(LogicalLine {
            line: line_no,
            text: trimmed.to_lowercase(),
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub enum TokenKind {
    Word(String),
    /// Body of a `'...'` or `{...}` expression.
    Quoted(String),
    Equals,
    LParen,
    RParen,
    Comma,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    /// 1-based column in the logical line.
    pub column: usize,
}

pub fn tokenize(line: &LogicalLine) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = line.text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        match c {
            c if c.is_whitespace() => i += 1,
            '=' => {
                tokens.push(Token { kind: TokenKind::Equals, column });
                i += 1;
            }
            '(' => {
                tokens.push(Token { kind: TokenKind::LParen, column });
                i += 1;
            }
            ')' => {
                tokens.push(Token { kind: TokenKind::RParen, column });
                i += 1;
            }
            ',' => {
                tokens.push(Token { kind: TokenKind::Comma, column });
                i += 1;
            }
            '\'' | '{' => {
                let close = if c == '\'' { '\'' } else { '}' };
                let start = i + 1;
                let end = chars[start..]
                    .iter()
                    .position(|&ch| ch == close)
                    .map(|p| start + p)
                    .ok_or_else(|| ParseError::at(line.line, column, "unterminated expression"))?;
                tokens.push(Token {
                    kind: TokenKind::Quoted(chars[start..end].iter().collect()),
                    column,
                });
                i = end + 1;
            }
            _ => {
                let start = i;
                while i < chars.len()
                    && !chars[i].is_whitespace()
                    && !matches!(chars[i], '=' | '(' | ')' | ',' | '\'' | '{')
                {
                    i += 1;
                }
                tokens.push(Token {
                    kind: TokenKind::Word(chars[start..i].iter().collect()),
                    column,
                });
            }
        }
    }
    Ok(tokens)
}

/// Decimal exponent of a (lowercase) suffix. Letters after a recognized
/// suffix are ignored, as are letters that start no suffix (`5v` is 5).
pub fn suffix_exponent(letters: &str) -> i32 {
    if letters.starts_with("meg") {
        return 6;
    }
    match letters.chars().next() {
        Some('t') => 12,
        Some('g') => 9,
        Some('k') => 3,
        Some('m') => -3,
        Some('u') => -6,
        Some('n') => -9,
        Some('p') => -12,
        Some('f') => -15,
        _ => 0,
    }
}

/// Scans a number with optional suffix at the start of `s`. Returns the
/// value and the number of bytes consumed, or `None` if `s` does not start
/// with a number.
pub(crate) fn scan_number(s: &str) -> Option<(f64, usize)> {
    let b = s.as_bytes();
    let mut i = 0;
    let digits = |i: &mut usize| {
        let start = *i;
        while *i < b.len() && b[*i].is_ascii_digit() {
            *i += 1;
        }
        *i - start
    };
    let int_digits = digits(&mut i);
    let mut frac_digits = 0;
    if i < b.len() && b[i] == b'.' {
        i += 1;
        frac_digits = digits(&mut i);
    }
    if int_digits + frac_digits == 0 {
        return None;
    }
    let digits_end = i;
    let mut exponent: i32 = 0;
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        let mut j = i + 1;
        if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
            j += 1;
        }
        if digits(&mut j) > 0 {
            exponent = s[i + 1..j].parse().ok()?;
            i = j;
        }
    }
    let letter_start = i;
    while i < b.len() && b[i].is_ascii_alphabetic() {
        i += 1;
    }
    exponent += suffix_exponent(&s[letter_start..i].to_ascii_lowercase());
    // Applying the suffix as a decimal exponent keeps `10f` exactly 1e-14.
    let value: f64 = format!("{}e{exponent}", &s[..digits_end]).parse().ok()?;
    Some((value, i))
}

/// Parses a whole token such as `16K`, `10n`, `1e-3`, `2.5meg`.
pub fn parse_number(token: &str) -> Result<f64, String> {
    let (sign, body) = match token.as_bytes().first() {
        Some(b'-') => (-1.0, &token[1..]),
        Some(b'+') => (1.0, &token[1..]),
        _ => (1.0, token),
    };
    match scan_number(body) {
        Some((v, used)) if used == body.len() => Ok(sign * v),
        Some((_, used)) => Err(format!(
            "malformed number '{token}' (unexpected '{}')",
            &body[used..]
        )),
        None => Err(format!("malformed number '{token}'")),
    }
}
