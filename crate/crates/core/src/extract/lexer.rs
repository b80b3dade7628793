//! Whitespace- and comment-skipping Solidity tokenizer.
//!
//! Only precise enough for brace matching, header parsing and call-site
//! discovery. String literals are kept as single tokens so that braces and
//! parentheses inside them never affect structure.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Ident,
    Number,
    Str,
    Punct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token<'a> {
    pub kind: TokenKind,
    pub text: &'a str,
    /// Byte offset of the first character.
    pub start: usize,
    /// Byte offset one past the last character.
    pub end: usize,
    /// 1-based line number of the first character.
    pub line: usize,
}

impl Token<'_> {
    pub fn is_punct(&self, c: char) -> bool {
        self.kind == TokenKind::Punct && self.text.len() == c.len_utf8() && self.text.starts_with(c)
    }

    pub fn is_ident(&self, word: &str) -> bool {
        self.kind == TokenKind::Ident && self.text == word
    }
}

/// Horizontal whitespace as understood by both the lexer and the normalizer.
pub(crate) fn is_horizontal_ws(c: char) -> bool {
    matches!(c, ' ' | '\t' | '\r' | '\u{0B}' | '\u{0C}')
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == '$'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '$'
}

pub fn tokenize(src: &str) -> Vec<Token<'_>> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut line = 1usize;
    let mut i = 0usize;

    while i < src.len() {
        let c = src[i..].chars().next().expect("in bounds");
        if c == '\n' {
            line += 1;
            i += 1;
            continue;
        }
        if is_horizontal_ws(c) {
            i += c.len_utf8();
            continue;
        }
        if c == '/' && bytes.get(i + 1) == Some(&b'/') {
            while i < src.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if c == '/' && bytes.get(i + 1) == Some(&b'*') {
            i += 2;
            loop {
                if i >= src.len() {
                    break;
                }
                if bytes[i] == b'*' && bytes.get(i + 1) == Some(&b'/') {
                    i += 2;
                    break;
                }
                if bytes[i] == b'\n' {
                    line += 1;
                }
                i += 1;
            }
            continue;
        }

        let start = i;
        let kind = if c == '"' || c == '\'' {
            i = skip_string(src, i, c);
            TokenKind::Str
        } else if is_ident_start(c) {
            i += 1;
            while i < src.len() && is_ident_continue(bytes[i] as char) && bytes[i].is_ascii() {
                i += 1;
            }
            TokenKind::Ident
        } else if c.is_ascii_digit() {
            i += 1;
            while i < src.len() && bytes[i].is_ascii() {
                let d = bytes[i] as char;
                // `1.5`, `1e18`, `0xff`, `1_000`; a trailing `.` followed by an
                // identifier is member access (`1.add(x)` is not valid anyway).
                let fraction = d == '.' && bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit());
                if d.is_ascii_alphanumeric() || d == '_' || fraction {
                    i += 1;
                } else {
                    break;
                }
            }
            TokenKind::Number
        } else {
            i += c.len_utf8();
            TokenKind::Punct
        };
        tokens.push(Token {
            kind,
            text: &src[start..i],
            start,
            end: i,
            line,
        });
    }
    tokens
}

/// Returns the byte offset one past the closing quote. Unterminated literals
/// end at the newline (exclusive) or end of input.
pub(crate) fn skip_string(src: &str, open: usize, quote: char) -> usize {
    let bytes = src.as_bytes();
    let mut i = open + 1;
    while i < src.len() {
        match bytes[i] {
            b'\\' => {
                // An escaped newline still terminates the literal for our purposes.
                if bytes.get(i + 1) == Some(&b'\n') {
                    return i + 1;
                }
                i += 2;
            }
            b'\n' => return i,
            b if b as char == quote => return i + 1,
            _ => i += 1,
        }
    }
    src.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(src: &str) -> Vec<&str> {
        tokenize(src).into_iter().map(|t| t.text).collect()
    }

    #[test]
    fn skips_comments_and_whitespace() {
        assert_eq!(
            texts("uint a = 1; // hi {\n/* } */ b"),
            vec!["uint", "a", "=", "1", ";", "b"]
        );
    }

    #[test]
    fn strings_are_single_tokens() {
        assert_eq!(
            texts(r#"f("a { b", 'c\'d')"#),
            vec!["f", "(", r#""a { b""#, ",", r"'c\'d'", ")"]
        );
    }

    #[test]
    fn tracks_lines() {
        let toks = tokenize("a\n\n/* x\n y */ b\nc");
        let lines: Vec<_> = toks.iter().map(|t| t.line).collect();
        assert_eq!(lines, vec![1, 4, 5]);
    }

    #[test]
    fn numbers() {
        assert_eq!(
            texts("1e18 0xff 1_000 2.5 x.y"),
            vec!["1e18", "0xff", "1_000", "2.5", "x", ".", "y"]
        );
    }

    #[test]
    fn unterminated_string_stops_at_newline() {
        assert_eq!(texts("\"abc\nd"), vec!["\"abc", "d"]);
    }
}
