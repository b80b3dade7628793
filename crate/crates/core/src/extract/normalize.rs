use super::lexer::{is_horizontal_ws, skip_string};

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    Code,
    LineComment,
    BlockComment,
}

/// Collapses runs of horizontal whitespace to a single space, drops leading
/// and trailing whitespace on every line, and leaves string literals
/// untouched. Newlines and tokens are preserved. Idempotent.
pub fn normalize_code(raw: &str) -> String {
    let bytes = raw.as_bytes();
    let mut out = String::with_capacity(raw.len());
    let mut line_start = 0usize;
    let mut pending_space = false;
    let mut state = State::Code;
    let mut i = 0usize;

    while i < raw.len() {
        let c = raw[i..].chars().next().expect("in bounds");
        if c == '\n' {
            if state == State::LineComment {
                state = State::Code;
            }
            out.push('\n');
            line_start = out.len();
            pending_space = false;
            i += 1;
            continue;
        }
        if is_horizontal_ws(c) {
            pending_space = true;
            i += c.len_utf8();
            continue;
        }
        if pending_space && out.len() > line_start {
            out.push(' ');
        }
        pending_space = false;

        match state {
            State::Code if c == '"' || c == '\'' => {
                let end = skip_string(raw, i, c);
                out.push_str(&raw[i..end]);
                i = end;
                continue;
            }
            State::Code if c == '/' && bytes.get(i + 1) == Some(&b'/') => {
                state = State::LineComment;
                out.push_str("//");
                i += 2;
                continue;
            }
            State::Code if c == '/' && bytes.get(i + 1) == Some(&b'*') => {
                state = State::BlockComment;
                out.push_str("/*");
                i += 2;
                continue;
            }
            State::BlockComment if c == '*' && bytes.get(i + 1) == Some(&b'/') => {
                state = State::Code;
                out.push_str("*/");
                i += 2;
                continue;
            }
            _ => {}
        }
        out.push(c);
        i += c.len_utf8();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collapses_whitespace() {
        assert_eq!(normalize_code("uint  a =  1;"), "uint a = 1;");
        assert_eq!(normalize_code("x"), "x");
        assert_eq!(normalize_code("\tuint a;   \n    b\t=\t2;  "), "uint a;\nb = 2;");
    }

    #[test]
    fn string_literals_untouched() {
        assert_eq!(normalize_code(r#"emit Log("a  b");"#), r#"emit Log("a  b");"#);
        assert_eq!(normalize_code("x =  'p   q' ;"), "x = 'p   q' ;");
    }

    #[test]
    fn preserves_blank_lines() {
        assert_eq!(normalize_code("a\n\n\n b"), "a\n\n\nb");
        assert_eq!(normalize_code("a\r\nb\r\n"), "a\nb\n");
    }

    #[test]
    fn quote_inside_comment_is_not_a_string() {
        assert_eq!(normalize_code("// don't   panic\nx  =  1;"), "// don't panic\nx = 1;");
        assert_eq!(normalize_code("/* it's\n   fine */  y"), "/* it's\nfine */ y");
    }

    #[test]
    fn unterminated_string_keeps_trailing_spaces() {
        let raw = "s = \"ab  \n";
        assert_eq!(normalize_code(raw), raw);
    }
}
